//! Simulation-based checks: one-interval contraction, tube invariance and
//! stability/attraction of the tube family with an exponential rate fit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::ControllerParams;
use crate::curve::ReferenceCurve;
use crate::error::{Error, Result};
use crate::integrator::{simulate, simulate_batch, SimulationConfig, Trajectory};
use crate::system::{ControlAffineSystem, State};
use crate::tube::{tracking_error, TubeSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub epsilon: f64,
    pub nu: f64,
    pub count: usize,
    pub passed: usize,
    pub pass_fraction: f64,
    /// `‖y(ε) − y*(ε)‖ / ‖y⁰ − y₀*‖` per initial condition.
    pub factors: Vec<f64>,
    pub factor_min: f64,
    pub factor_max: f64,
    pub factor_mean: f64,
    pub eps_bar: Option<f64>,
    pub above_certified_bound: bool,
}

fn interval_sim(t0: f64, eps: f64, x0: &State, substeps: usize) -> Result<SimulationConfig> {
    SimulationConfig::new(t0, t0 + eps, x0.clone(), substeps, substeps)
}

/// Simulates one sampling interval from every initial condition and checks
/// `‖y(ε) − y*(ε)‖ ≤ ‖y⁰ − y₀*‖`.
///
/// Every initial error must lie in `[p/ν, p + δ]`.
#[allow(clippy::too_many_arguments)]
pub fn contraction_check<S: ControlAffineSystem + ?Sized>(
    sys: &S,
    curve: &ReferenceCurve,
    params: &ControllerParams,
    tube: &TubeSpec,
    nu: f64,
    initial_conditions: &[State],
    t0: f64,
    substeps: usize,
    eps_bar: Option<f64>,
) -> Result<ContractionReport> {
    if !(nu > 1.0) {
        return Err(Error::invalid(format!("nu must exceed 1, got {nu}")));
    }
    if initial_conditions.is_empty() {
        return Err(Error::EmptySamples("initial conditions"));
    }
    let split = sys.split();
    let inner = tube.p / nu;
    let mut e0 = Vec::with_capacity(initial_conditions.len());
    for (i, x) in initial_conditions.iter().enumerate() {
        let e = tracking_error(split, x, t0, curve)?;
        if e < inner || e > tube.outer() {
            return Err(Error::Precondition(format!(
                "initial condition {i} has tracking error {e}, outside [p/nu, p + delta] = [{inner}, {}]",
                tube.outer()
            )));
        }
        e0.push(e);
    }
    let eps = params.epsilon();
    let runs: Vec<Result<f64>> = initial_conditions
        .par_iter()
        .map(|x| {
            let sim = interval_sim(t0, eps, x, substeps)?;
            let traj = simulate(sys, curve, params, &sim, tube).map_err(|f| Error::Simulation(f.to_string()))?;
            Ok(*traj.sample_errors.last().expect("non-empty trajectory"))
        })
        .collect();
    let e1: Vec<f64> = runs.into_iter().collect::<Result<_>>()?;
    let factors: Vec<f64> = e1.iter().zip(&e0).map(|(a, b)| a / b).collect();
    let passed = e1.iter().zip(&e0).filter(|(a, b)| a <= b).count();
    let count = factors.len();
    Ok(ContractionReport {
        epsilon: eps,
        nu,
        count,
        passed,
        pass_fraction: passed as f64 / count as f64,
        factor_min: factors.iter().copied().fold(f64::INFINITY, f64::min),
        factor_max: factors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        factor_mean: factors.iter().sum::<f64>() / count as f64,
        factors,
        eps_bar,
        above_certified_bound: eps_bar.is_some_and(|b| eps > b),
    })
}

/// Least-squares fit of `log e = b_i − λ̂ t` with one intercept per series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub lambda_hat: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits the decay rate on the initial segment of each series where the error
/// stays above `floor`. Series with fewer than two such points are skipped.
pub fn fit_decay_rate(series: &[(&[f64], &[f64])], floor: f64) -> Option<RateFit> {
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    let mut points = 0;
    for (times, errors) in series {
        let k = errors.iter().take_while(|&&e| e > floor && e > 0.0).count();
        if k < 2 {
            continue;
        }
        let t = &times[..k];
        let l: Vec<f64> = errors[..k].iter().map(|e| e.ln()).collect();
        let tm = t.iter().sum::<f64>() / k as f64;
        let lm = l.iter().sum::<f64>() / k as f64;
        for (ti, li) in t.iter().zip(&l) {
            sxx += (ti - tm) * (ti - tm);
            sxy += (ti - tm) * (li - lm);
            syy += (li - lm) * (li - lm);
        }
        points += k;
    }
    if points < 3 || sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let ss_res = syy - slope * sxy;
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Some(RateFit {
        lambda_hat: -slope,
        r_squared,
        points,
    })
}

/// Index `j` of the first sampling instant with `e_j > floor` and `e_{j+1} > e_j`.
pub fn first_increase_above_floor(errors: &[f64], floor: f64) -> Option<usize> {
    errors.windows(2).position(|w| w[0] > floor && w[1] > w[0])
}

/// Where the residual floor used for the rate fit came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloorSource {
    /// `2εγ₂` from the estimated constants.
    Theoretical,
    /// Twice the largest sampled error over the last quarter of the horizon,
    /// used when `2εγ₂` is unavailable or not below the initial error.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaResult {
    pub delta: f64,
    /// Trajectories starting in `B_Δ(Y₀^p)`.
    pub initially_inside: usize,
    /// Every trajectory that starts in `B_Δ(Y₀^p)` stays there at all recorded times.
    pub stable: bool,
    /// Smallest recorded time after which all trajectories are in `B_Δ(Y_t^p)`.
    pub t1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFailure {
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub trajectories: usize,
    pub failures: Vec<TrajectoryFailure>,
    pub deltas: Vec<DeltaResult>,
    pub floor: f64,
    pub floor_source: FloorSource,
    pub theoretical_floor: Option<f64>,
    pub rate_fit: Option<RateFit>,
    /// Sampled errors never increase while above the floor.
    pub monotone_above_floor: bool,
    /// `(trajectory, sampling instant)` of every increase above the floor.
    pub monotonicity_violations: Vec<(usize, f64)>,
    /// Trajectories starting in `Y₀^{p/ν}` stay in the closed tube `Y_t^p`;
    /// `None` when no trajectory starts there.
    pub tube_invariance: Option<bool>,
    pub initial_errors: Vec<f64>,
    pub final_errors: Vec<f64>,
}

/// Simulates every grid point over `sim`'s horizon and evaluates stability,
/// attraction and the exponential decay rate of the tube family.
#[allow(clippy::too_many_arguments)]
pub fn certify_set_stability<S: ControlAffineSystem + ?Sized>(
    sys: &S,
    curve: &ReferenceCurve,
    params: &ControllerParams,
    tube: &TubeSpec,
    sim: &SimulationConfig,
    grid: &[State],
    deltas: &[f64],
    nu: f64,
    theoretical_floor: Option<f64>,
) -> Result<CertificationReport> {
    if grid.is_empty() {
        return Err(Error::EmptySamples("initial-condition grid"));
    }
    if let Some(d) = deltas.iter().find(|d| !(**d >= 0.0)) {
        return Err(Error::invalid(format!("Delta values must be non-negative, got {d}")));
    }
    let split = sys.split();
    let t0 = sim.t0();
    let mut initial_errors = Vec::with_capacity(grid.len());
    for (i, x) in grid.iter().enumerate() {
        let e = tracking_error(split, x, t0, curve)?;
        if e > tube.outer() {
            return Err(Error::Precondition(format!(
                "grid point {i} has tracking error {e} > p + delta = {}",
                tube.outer()
            )));
        }
        initial_errors.push(e);
    }
    let sims = grid.iter().map(|x| sim.with_x0(x.clone())).collect::<Result<Vec<_>>>()?;
    let results = simulate_batch(sys, curve, params, &sims, tube);
    let mut failures = Vec::new();
    let mut trajs: Vec<(usize, Trajectory)> = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => trajs.push((i, t)),
            Err(f) => failures.push(TrajectoryFailure {
                index: i,
                error: f.to_string(),
            }),
        }
    }

    let delta_results = deltas
        .iter()
        .map(|&d| {
            let r = tube.p + d;
            let inside: Vec<&(usize, Trajectory)> = trajs.iter().filter(|(i, _)| initial_errors[*i] <= r).collect();
            let starts_inside = grid.iter().enumerate().filter(|(i, _)| initial_errors[*i] <= r).count();
            let stable = failures.iter().all(|f| initial_errors[f.index] > r)
                && inside.iter().all(|(_, t)| t.errors.iter().all(|&e| e <= r));
            let t1 = if failures.is_empty() {
                trajs
                    .iter()
                    .map(|(_, t)| match t.errors.iter().rposition(|&e| e > r) {
                        None => Some(t0),
                        Some(k) => t.times.get(k + 1).copied(),
                    })
                    .try_fold(t0, |acc, v| v.map(|v| acc.max(v)))
            } else {
                None
            };
            DeltaResult {
                delta: d,
                initially_inside: starts_inside,
                stable,
                t1,
            }
        })
        .collect();

    let tail_start = t0 + 0.75 * (sim.horizon() - t0);
    let empirical = 2.0
        * trajs
            .iter()
            .flat_map(|(_, t)| t.sample_times.iter().zip(&t.sample_errors).filter(|(s, _)| **s >= tail_start).map(|(_, e)| *e))
            .fold(0.0, f64::max);
    let largest_initial = initial_errors.iter().copied().fold(0.0, f64::max);
    let (floor, floor_source) = match theoretical_floor {
        Some(f) if f.is_finite() && f < largest_initial => (f, FloorSource::Theoretical),
        _ => (empirical, FloorSource::Empirical),
    };

    let series: Vec<(&[f64], &[f64])> = trajs
        .iter()
        .map(|(_, t)| (t.sample_times.as_slice(), t.sample_errors.as_slice()))
        .collect();
    let rate_fit = fit_decay_rate(&series, floor);
    let mut violations = Vec::new();
    for (i, t) in &trajs {
        let mut start = 0;
        while let Some(j) = first_increase_above_floor(&t.sample_errors[start..], floor) {
            violations.push((*i, t.sample_times[start + j]));
            start += j + 1;
        }
    }
    let inner = tube.p / nu;
    let invariant: Vec<bool> = trajs
        .iter()
        .filter(|(i, _)| initial_errors[*i] < inner)
        .map(|(_, t)| t.errors.iter().all(|&e| e <= tube.p))
        .chain(failures.iter().filter(|f| initial_errors[f.index] < inner).map(|_| false))
        .collect();
    let mut final_errors = vec![f64::NAN; grid.len()];
    for (i, t) in &trajs {
        final_errors[*i] = *t.errors.last().expect("non-empty trajectory");
    }
    Ok(CertificationReport {
        trajectories: grid.len(),
        failures,
        deltas: delta_results,
        floor,
        floor_source,
        theoretical_floor,
        rate_fit,
        monotone_above_floor: violations.is_empty(),
        monotonicity_violations: violations,
        tube_invariance: if invariant.is_empty() { None } else { Some(invariant.iter().all(|&b| b)) },
        initial_errors,
        final_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auv::{paper_scenario, AuvModel};
    use crate::lie::IndexSets;
    use crate::system::{FnSystem, StateSplit};
    use crate::stability::sampling::initial_conditions;
    use approx::assert_relative_eq;

    #[test]
    fn rate_fit_recovers_exponential() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let e: Vec<f64> = t.iter().map(|t| 2.0 * (-1.5 * t).exp()).collect();
        let e2: Vec<f64> = t.iter().map(|t| 0.5 * (-1.5 * t).exp()).collect();
        let fit = fit_decay_rate(&[(&t, &e), (&t, &e2)], 0.0).unwrap();
        assert_relative_eq!(fit.lambda_hat, 1.5, epsilon = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert_eq!(fit.points, 40);
        let cut = fit_decay_rate(&[(&t, &e)], 1.0).unwrap();
        assert!(cut.points < 20);
    }

    #[test]
    fn rate_fit_needs_points() {
        assert!(fit_decay_rate(&[(&[0.0, 1.0], &[1.0, 0.5])], 0.0).is_none());
    }

    #[test]
    fn increase_detection() {
        assert_eq!(first_increase_above_floor(&[1.0, 0.5, 0.6, 0.1], 0.2), Some(1));
        assert_eq!(first_increase_above_floor(&[1.0, 0.5, 0.1, 0.15], 0.2), None);
    }

    #[test]
    fn contraction_rejects_inner_points() {
        let s = paper_scenario();
        let tube = TubeSpec::new(0.5, 0.25, 0.5).unwrap();
        let mut x = s.sim.x0().clone();
        x.rows_mut(0, 3).copy_from(&s.curve.eval(0.0));
        let r = contraction_check(&s.model, &s.curve, &s.params, &tube, 2.0, &[x], 0.0, 200, None);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn contraction_small_epsilon() {
        let s = paper_scenario();
        let params = s.params.with_epsilon(0.01).unwrap();
        let tube = TubeSpec::new(0.5, 0.25, 0.5).unwrap();
        let ics = initial_conditions(s.model.split(), &s.curve, 0.0, 0.26, 0.75, &AuvModel::default_z_box(), 12, 3).unwrap();
        let r = contraction_check(&s.model, &s.curve, &params, &tube, 2.0, &ics, 0.0, 200, Some(1e-3)).unwrap();
        assert_eq!(r.count, 12);
        assert_eq!(r.pass_fraction, 1.0);
        assert!(r.factor_max < 1.0);
        assert!(r.above_certified_bound);
    }

    #[test]
    fn zero_dynamics_attract_immediately() {
        let split = StateSplit::new(1, 1).unwrap();
        let sys = FnSystem::builder(split)
            .field(|_| State::from_vec(vec![1.0, 0.0]))
            .build()
            .unwrap();
        let sets = IndexSets::new(vec![0], vec![], 1, 1).unwrap();
        let params = ControllerParams::new(2.0, 0.1, vec![], sets).unwrap();
        let curve = ReferenceCurve::constant(vec![0.5]).unwrap();
        let tube = TubeSpec::new(0.2, 0.1, 0.2).unwrap();
        let x0 = State::from_vec(vec![0.5, 3.0]);
        let sim = SimulationConfig::new(0.0, 1.0, x0.clone(), 40, 10).unwrap();
        let r = certify_set_stability(&sys, &curve, &params, &tube, &sim, &[x0], &[0.0, 0.05], 2.0, None).unwrap();
        assert!(r.failures.is_empty());
        for d in &r.deltas {
            assert_eq!(d.t1, Some(0.0));
            assert!(d.stable);
        }
        assert_eq!(r.tube_invariance, Some(true));
    }

    #[test]
    fn scalar_integrator_rate() {
        // y' = u with u = -alpha (y - y*): sampled error shrinks by (1 - eps alpha)
        let split = StateSplit::new(1, 1).unwrap();
        let sys = FnSystem::builder(split)
            .field(|_| State::from_vec(vec![1.0, 0.0]))
            .build()
            .unwrap();
        let sets = IndexSets::new(vec![0], vec![], 1, 1).unwrap();
        let params = ControllerParams::new(2.0, 0.1, vec![], sets).unwrap();
        let curve = ReferenceCurve::constant(vec![0.0]).unwrap();
        let tube = TubeSpec::new(0.01, 1.0, 2.0).unwrap();
        let x0 = State::from_vec(vec![1.0, 0.0]);
        let sim = SimulationConfig::new(0.0, 2.0, x0.clone(), 40, 40).unwrap();
        let r = certify_set_stability(&sys, &curve, &params, &tube, &sim, &[x0], &[0.5], 2.0, Some(1e-9)).unwrap();
        assert_eq!(r.floor_source, FloorSource::Theoretical);
        let fit = r.rate_fit.unwrap();
        assert_relative_eq!(fit.lambda_hat, -(0.8f64).ln() / 0.1, max_relative = 1e-9);
        assert!(r.monotone_above_floor);
        assert_eq!(r.deltas[0].t1, Some(0.4));
    }

    #[test]
    fn grid_outside_neighbourhood_is_rejected() {
        let s = paper_scenario();
        let tube = TubeSpec::new(0.5, 0.25, 0.5).unwrap();
        let sim = s.sim.with_horizon(0.5).unwrap();
        let r = certify_set_stability(&s.model, &s.curve, &s.params, &tube, &sim, &[s.sim.x0().clone()], &[0.1], 2.0, None);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }
}
