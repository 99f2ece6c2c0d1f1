//! Kinematic model of an autonomous underwater vehicle with position
//! `y = (x₁, x₂, x₃)`, Euler angles `z = (x₄, x₅, x₆)`, controls
//! `(v, ω₂, ω₃)` and an uncontrolled roll rate `ω₁(t)`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::controller::ControllerParams;
use crate::curve::ReferenceCurve;
use crate::error::{Error, Result};
use crate::integrator::SimulationConfig;
use crate::lie::IndexSets;
use crate::system::{ControlAffineSystem, State, StateSplit};
use crate::tube::TubeSpec;

/// States with `|x₅| ≥ π/2 − PITCH_GUARD` are outside the model domain.
pub const PITCH_GUARD: f64 = 1e-6;

/// Roll rate `ω₁(t) = amplitude·cos(frequency·t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollRate {
    pub amplitude: f64,
    pub frequency: f64,
}

impl RollRate {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (self.frequency * t).cos()
    }

    pub fn derivative(&self, t: f64) -> f64 {
        -self.amplitude * self.frequency * (self.frequency * t).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuvModel {
    pub roll: RollRate,
}

impl AuvModel {
    pub fn new(roll: RollRate) -> Self {
        Self { roll }
    }

    /// `ω₁(t) = 0.25 cos t`.
    pub fn paper() -> Self {
        Self::new(RollRate {
            amplitude: 0.25,
            frequency: 1.0,
        })
    }

    /// Default z-box for constant estimation: one period in roll and yaw, pitch
    /// kept away from the `sec` singularity.
    pub fn default_z_box() -> Vec<(f64, f64)> {
        use std::f64::consts::PI;
        vec![(-PI, PI), (-1.4, 1.4), (-PI, PI)]
    }
}

fn check_pitch(x: &State) -> Result<()> {
    if x[4].abs() >= FRAC_PI_2 - PITCH_GUARD || !x[4].is_finite() {
        return Err(Error::Domain {
            x: x.iter().copied().collect(),
            reason: format!("pitch |x5| = {} must stay below pi/2 - {PITCH_GUARD:e}", x[4].abs()),
        });
    }
    Ok(())
}

impl ControlAffineSystem for AuvModel {
    fn split(&self) -> StateSplit {
        StateSplit::new(3, 3).expect("static split")
    }

    fn num_controls(&self) -> usize {
        3
    }

    fn drift(&self, t: f64, _x: &State) -> State {
        State::from_vec(vec![0.0, 0.0, 0.0, self.roll.eval(t), 0.0, 0.0])
    }

    fn field(&self, k: usize, x: &State) -> State {
        let (s4, c4) = x[3].sin_cos();
        let (s5, c5) = x[4].sin_cos();
        let (s6, c6) = x[5].sin_cos();
        match k {
            0 => State::from_vec(vec![c5 * c6, c5 * s6, -s5, 0.0, 0.0, 0.0]),
            1 => State::from_vec(vec![0.0, 0.0, 0.0, s4 * s5 / c5, c4, s4 / c5]),
            2 => State::from_vec(vec![0.0, 0.0, 0.0, c4 * s5 / c5, -s4, c4 / c5]),
            _ => panic!("AUV has three controls, got index {k}"),
        }
    }

    fn field_jacobian(&self, k: usize, x: &State) -> Option<DMatrix<f64>> {
        let (s4, c4) = x[3].sin_cos();
        let (s5, c5) = x[4].sin_cos();
        let (s6, c6) = x[5].sin_cos();
        let sec = 1.0 / c5;
        let tan = s5 / c5;
        let mut j = DMatrix::zeros(6, 6);
        match k {
            0 => {
                j[(0, 4)] = -s5 * c6;
                j[(1, 4)] = -s5 * s6;
                j[(2, 4)] = -c5;
                j[(0, 5)] = -c5 * s6;
                j[(1, 5)] = c5 * c6;
            }
            1 => {
                j[(3, 3)] = c4 * tan;
                j[(4, 3)] = -s4;
                j[(5, 3)] = c4 * sec;
                j[(3, 4)] = s4 * sec * sec;
                j[(5, 4)] = s4 * sec * tan;
            }
            2 => {
                j[(3, 3)] = -s4 * tan;
                j[(4, 3)] = -c4;
                j[(5, 3)] = -s4 * sec;
                j[(3, 4)] = c4 * sec * sec;
                j[(5, 4)] = c4 * sec * tan;
            }
            _ => return None,
        }
        Some(j)
    }

    fn drift_jacobian(&self, t: f64, _x: &State) -> Option<(DMatrix<f64>, State)> {
        let mut dt = State::zeros(6);
        dt[3] = self.roll.derivative(t);
        Some((DMatrix::zeros(6, 6), dt))
    }

    fn check_domain(&self, x: &State) -> Result<()> {
        check_pitch(x)
    }

    fn name(&self) -> &str {
        "auv"
    }
}

/// Closed-form projected brackets `(I[f₁,f₂](x), I[f₁,f₃](x))`.
pub fn auv_analytic_brackets(x: &State) -> Result<(State, State)> {
    check_pitch(x)?;
    let (s4, c4) = x[3].sin_cos();
    let (s5, c5) = x[4].sin_cos();
    let (s6, c6) = x[5].sin_cos();
    let b12 = State::from_vec(vec![c4 * s5 * c6 + s4 * s6, c4 * s5 * s6 - s4 * c6, c4 * c5]);
    let b13 = State::from_vec(vec![-s4 * s5 * c6 + c4 * s6, -s4 * s5 * s6 - c4 * c6, -s4 * c5]);
    Ok((b12, b13))
}

/// The fully configured reproduction scenario.
#[derive(Debug, Clone)]
pub struct PaperScenario {
    pub model: AuvModel,
    pub curve: ReferenceCurve,
    pub params: ControllerParams,
    pub sim: SimulationConfig,
    pub tube: TubeSpec,
}

/// Helix `y*(t) = (cos 0.2t, 0.2t, sin 0.2t)`, `ω₁ = 0.25 cos t`, `ε = 0.1`,
/// `α = 15`, `κ₁₂ = 1`, `κ₁₃ = 2`, `x⁰ = (0, 0, −1, π/4, π/4, π/4)`, horizon 20.
pub fn paper_scenario() -> PaperScenario {
    use std::f64::consts::FRAC_PI_4;
    let model = AuvModel::paper();
    let curve = ReferenceCurve::helix(0.2);
    let sets = IndexSets::from_one_based(&[1], &[(1, 2), (1, 3)], 3, 3).expect("static sets");
    let params = ControllerParams::new(15.0, 0.1, vec![1, 2], sets).expect("static params");
    let x0 = State::from_vec(vec![0.0, 0.0, -1.0, FRAC_PI_4, FRAC_PI_4, FRAC_PI_4]);
    let sim = SimulationConfig::new(0.0, 20.0, x0, SimulationConfig::default_substeps(&params), 1)
        .expect("static simulation config");
    let tube = TubeSpec::new(0.5, 1.0, 1.5).expect("static tube");
    PaperScenario {
        model,
        curve,
        params,
        sim,
        tube,
    }
}
