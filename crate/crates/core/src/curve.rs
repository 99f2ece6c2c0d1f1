//! Reference curves `y*(t)` with a certified Lipschitz constant `L*`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::State;

/// Description of a reference curve. This is also the config-file representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveSpec {
    Constant {
        point: Vec<f64>,
    },
    /// `center + radius·(cos ωt, sin ωt, 0, …)`; needs dimension ≥ 2.
    Circle {
        center: Vec<f64>,
        radius: f64,
        omega: f64,
    },
    /// `(cos ωt, ωt, sin ωt)` in ℝ³.
    Helix {
        omega: f64,
    },
    /// `origin + t·velocity`.
    Line {
        origin: Vec<f64>,
        velocity: Vec<f64>,
    },
    /// Piecewise-linear interpolation through `(times[i], points[i])`, held
    /// constant outside the table.
    Tabulated {
        times: Vec<f64>,
        points: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceCurve {
    spec: CurveSpec,
    dim: usize,
    lipschitz: f64,
}

impl ReferenceCurve {
    pub fn new(spec: CurveSpec) -> Result<Self> {
        let (dim, lipschitz) = match &spec {
            CurveSpec::Constant { point } => (point.len(), 0.0),
            CurveSpec::Circle {
                center,
                radius,
                omega,
            } => {
                if center.len() < 2 {
                    return Err(Error::invalid("circle curve needs dimension >= 2"));
                }
                if *radius < 0.0 {
                    return Err(Error::invalid("circle radius must be non-negative"));
                }
                (center.len(), radius * omega.abs())
            }
            CurveSpec::Helix { omega } => (3, omega.abs() * std::f64::consts::SQRT_2),
            CurveSpec::Line { origin, velocity } => {
                if origin.len() != velocity.len() {
                    return Err(Error::invalid("line origin and velocity differ in length"));
                }
                (origin.len(), velocity.iter().map(|v| v * v).sum::<f64>().sqrt())
            }
            CurveSpec::Tabulated { times, points } => {
                if times.is_empty() || times.len() != points.len() {
                    return Err(Error::invalid(
                        "tabulated curve needs matching, non-empty times and points",
                    ));
                }
                let dim = points[0].len();
                if points.iter().any(|p| p.len() != dim) {
                    return Err(Error::invalid("tabulated points differ in dimension"));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid("tabulated times must be strictly increasing"));
                }
                let slope = times
                    .windows(2)
                    .zip(points.windows(2))
                    .map(|(t, p)| {
                        let d: f64 = p[1]
                            .iter()
                            .zip(&p[0])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt();
                        d / (t[1] - t[0])
                    })
                    .fold(0.0, f64::max);
                (dim, slope)
            }
        };
        if dim == 0 {
            return Err(Error::invalid("reference curve must have dimension >= 1"));
        }
        Ok(Self {
            spec,
            dim,
            lipschitz,
        })
    }

    pub fn constant(point: Vec<f64>) -> Result<Self> {
        Self::new(CurveSpec::Constant { point })
    }

    pub fn helix(omega: f64) -> Self {
        Self::new(CurveSpec::Helix { omega }).expect("helix is always valid")
    }

    pub fn spec(&self) -> &CurveSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `L*`, an upper bound on `‖y*(t) − y*(s)‖ / |t − s|`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn eval(&self, t: f64) -> State {
        match &self.spec {
            CurveSpec::Constant { point } => State::from_column_slice(point),
            CurveSpec::Circle {
                center,
                radius,
                omega,
            } => {
                let mut y = State::from_column_slice(center);
                y[0] += radius * (omega * t).cos();
                y[1] += radius * (omega * t).sin();
                y
            }
            CurveSpec::Helix { omega } => {
                let w = omega * t;
                State::from_vec(vec![w.cos(), w, w.sin()])
            }
            CurveSpec::Line { origin, velocity } => {
                State::from_iterator(origin.len(), origin.iter().zip(velocity).map(|(o, v)| o + v * t))
            }
            CurveSpec::Tabulated { times, points } => {
                let last = times.len() - 1;
                if t <= times[0] {
                    return State::from_column_slice(&points[0]);
                }
                if t >= times[last] {
                    return State::from_column_slice(&points[last]);
                }
                // first index with times[i] > t
                let i = times.partition_point(|&s| s <= t);
                let (t0, t1) = (times[i - 1], times[i]);
                let w = (t - t0) / (t1 - t0);
                State::from_iterator(
                    self.dim,
                    points[i - 1]
                        .iter()
                        .zip(&points[i])
                        .map(|(a, b)| a + w * (b - a)),
                )
            }
        }
    }
}
