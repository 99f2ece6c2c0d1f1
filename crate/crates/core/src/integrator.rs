//! Sample-and-hold (π_ε) closed-loop simulation.
//!
//! At every sampling instant `t_j = t₀ + εj` the controller freezes `x(t_j)` and
//! `y*(t_j)`; inside `[t_j, t_{j+1})` the control keeps its explicit time
//! dependence and the ODE is integrated with fixed-step classical RK4.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{amplitude_from_factor, control_from_amplitude, AmplitudeVector, ControllerParams};
use crate::curve::ReferenceCurve;
use crate::error::{check_len, Error, Result};
use crate::lie::{assemble_f, FFactor};
use crate::system::{ControlAffineSystem, State};
use crate::tube::{tracking_error, TubeSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    t0: f64,
    horizon: f64,
    x0: State,
    substeps: usize,
    record_stride: usize,
}

impl SimulationConfig {
    /// `horizon` is the final time `T > t0`.
    pub fn new(t0: f64, horizon: f64, x0: State, substeps: usize, record_stride: usize) -> Result<Self> {
        if !(t0.is_finite() && horizon.is_finite() && horizon > t0) {
            return Err(Error::invalid(format!(
                "horizon must exceed t0, got t0 = {t0}, T = {horizon}"
            )));
        }
        if substeps == 0 || record_stride == 0 {
            return Err(Error::invalid("substeps and record stride must be positive"));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("initial state must be finite"));
        }
        Ok(Self {
            t0,
            horizon,
            x0,
            substeps,
            record_stride,
        })
    }

    /// `max(200, 40·κ_max)` RK4 steps per sampling interval.
    pub fn default_substeps(params: &ControllerParams) -> usize {
        200.max(40 * params.kappa_max() as usize)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn x0(&self) -> &State {
        &self.x0
    }

    pub fn substeps_per_interval(&self) -> usize {
        self.substeps
    }

    pub fn record_stride(&self) -> usize {
        self.record_stride
    }

    pub fn with_x0(&self, x0: State) -> Result<Self> {
        Self::new(self.t0, self.horizon, x0, self.substeps, self.record_stride)
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.t0, horizon, self.x0.clone(), self.substeps, self.record_stride)
    }

    pub fn with_substeps(&self, substeps: usize) -> Result<Self> {
        Self::new(self.t0, self.horizon, self.x0.clone(), substeps, self.record_stride)
    }

    pub fn with_stride(&self, stride: usize) -> Result<Self> {
        Self::new(self.t0, self.horizon, self.x0.clone(), self.substeps, stride)
    }
}

/// Recorded π_ε-solution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub controls: Vec<State>,
    /// `‖y(t) − y*(t)‖` at each recorded time.
    pub errors: Vec<f64>,
    /// Sampling instants `t_j` (and the final time).
    pub sample_times: Vec<f64>,
    /// `‖y(t_j) − y*(t_j)‖` at the sampling instants.
    pub sample_errors: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&State> {
        self.states.last()
    }

    fn record(&mut self, t: f64, x: &State, u: State, err: f64) {
        self.times.push(t);
        self.states.push(x.clone());
        self.controls.push(u);
        self.errors.push(err);
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Setup(Error),
    #[error("rank condition failed at sampling instant t = {time}: {source}")]
    SingularF { time: f64, source: Error },
    #[error("state left the guard region at t = {time}: {reason}")]
    GuardExit { time: f64, reason: String },
    #[error("non-finite state at t = {time}")]
    NumericBlowup { time: f64 },
}

/// A failed run together with everything integrated before the failure.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error}")]
pub struct SimulationFailure {
    pub error: SimError,
    pub partial: Trajectory,
}

impl From<Error> for SimulationFailure {
    fn from(e: Error) -> Self {
        Self {
            error: SimError::Setup(e),
            partial: Trajectory::default(),
        }
    }
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<F>(f: F, t: f64, x: &State, h: f64) -> State
where
    F: Fn(f64, &State) -> State,
{
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Closed-loop vector field `f₀(t,x) + Σ uₖ(t) fₖ(x)` for frozen amplitudes.
fn closed_loop<'a, S: ControlAffineSystem + ?Sized>(
    sys: &'a S,
    params: &'a ControllerParams,
    a: &'a AmplitudeVector,
) -> impl Fn(f64, &State) -> State + 'a {
    let m = sys.num_controls();
    move |t, x| {
        let u = control_from_amplitude(t, a, params, m);
        let mut dx = sys.drift(t, x);
        for (k, &uk) in u.iter().enumerate() {
            if uk != 0.0 {
                dx += sys.field(k, x) * uk;
            }
        }
        dx
    }
}

/// Amplitudes frozen at a sampling instant. On the curve (`y = y*`) they are
/// zero without consulting `F`.
pub fn frozen_amplitude<S: ControlAffineSystem + ?Sized>(
    sys: &S,
    params: &ControllerParams,
    x: &State,
    y_star: &State,
) -> Result<AmplitudeVector> {
    let split = sys.split();
    let y = split.y(x);
    if y == *y_star {
        return Ok(AmplitudeVector::zeros(split.n1()));
    }
    let factor = FFactor::new(assemble_f(sys, params.sets(), x)?, x)?;
    amplitude_from_factor(&factor, &y, y_star, params.alpha())
}

/// Number of sampling intervals covering `[t0, T]`.
fn interval_count(span: f64, eps: f64) -> usize {
    let r = span / eps;
    let n = r.round();
    if (r - n).abs() <= 1e-9 * r.max(1.0) {
        n.max(1.0) as usize
    } else {
        r.ceil() as usize
    }
}

/// Integrates `[t_start, t_end]` with frozen amplitudes and `steps` equal RK4 steps.
pub fn integrate_interval<S: ControlAffineSystem + ?Sized>(
    sys: &S,
    params: &ControllerParams,
    a: &AmplitudeVector,
    t_start: f64,
    t_end: f64,
    x: &State,
    steps: usize,
) -> State {
    let rhs = closed_loop(sys, params, a);
    let h = (t_end - t_start) / steps as f64;
    let mut x = x.clone();
    for i in 0..steps {
        x = rk4_step(&rhs, t_start + i as f64 * h, &x, h);
    }
    x
}

/// Simulates the π_ε closed loop from `sim.x0()` at `sim.t0()` up to `sim.horizon()`.
///
/// The run aborts when `F` is singular at a sampling instant, the tracking error
/// exceeds `p + δ′`, the state leaves the model domain, or it becomes non-finite.
pub fn simulate<S: ControlAffineSystem + ?Sized>(
    sys: &S,
    curve: &ReferenceCurve,
    params: &ControllerParams,
    sim: &SimulationConfig,
    tube: &TubeSpec,
) -> std::result::Result<Trajectory, SimulationFailure> {
    let split = sys.split();
    split.check(sim.x0())?;
    check_len("reference curve", split.n1(), curve.dim())?;
    tube.validate()?;
    let needed = 40 * params.kappa_max() as usize;
    if sim.substeps_per_interval() < needed {
        return Err(Error::invalid(format!(
            "substeps per interval must be at least 40 * kappa_max = {needed}, got {}",
            sim.substeps_per_interval()
        ))
        .into());
    }
    let e0 = tracking_error(split, sim.x0(), sim.t0(), curve)?;
    if e0 > tube.outer() {
        return Err(Error::Precondition(format!(
            "initial tracking error {e0} exceeds p + delta = {}",
            tube.outer()
        ))
        .into());
    }
    sys.check_domain(sim.x0())?;

    let m = sys.num_controls();
    let eps = params.epsilon();
    let t0 = sim.t0();
    let t_final = sim.horizon();
    let n_steps = sim.substeps_per_interval();
    let h = eps / n_steps as f64;
    let stride = sim.record_stride();
    let guard = tube.guard();

    let mut traj = Trajectory::default();
    let mut x = sim.x0().clone();
    let mut last_a = AmplitudeVector::zeros(split.n1());

    let fail = |error: SimError, traj: Trajectory| SimulationFailure { error, partial: traj };

    for j in 0..interval_count(t_final - t0, eps) {
        let tj = t0 + eps * j as f64;
        let t_next = (t0 + eps * (j + 1) as f64).min(t_final);
        let y_star = curve.eval(tj);
        let err = (x.rows(0, split.n1()) - &y_star).norm();
        let a = match frozen_amplitude(sys, params, &x, &y_star) {
            Ok(a) => a,
            Err(e) => return Err(fail(SimError::SingularF { time: tj, source: e }, traj)),
        };
        traj.record(tj, &x, control_from_amplitude(tj, &a, params, m), err);
        traj.sample_times.push(tj);
        traj.sample_errors.push(err);

        let steps = if t_next - tj >= eps * (1.0 - 1e-12) {
            n_steps
        } else {
            (((t_next - tj) / h) - 1e-9).ceil().max(1.0) as usize
        };
        let rhs = closed_loop(sys, params, &a);
        for i in 0..steps {
            let t = tj + i as f64 * h;
            let t_new = if i + 1 == steps { t_next } else { tj + (i + 1) as f64 * h };
            x = rk4_step(&rhs, t, &x, t_new - t);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(fail(SimError::NumericBlowup { time: t_new }, traj));
            }
            if let Err(e) = sys.check_domain(&x) {
                return Err(fail(
                    SimError::GuardExit {
                        time: t_new,
                        reason: e.to_string(),
                    },
                    traj,
                ));
            }
            let e_new = (x.rows(0, split.n1()) - curve.eval(t_new)).norm();
            if e_new > guard {
                return Err(fail(
                    SimError::GuardExit {
                        time: t_new,
                        reason: format!("tracking error {e_new} exceeds p + delta' = {guard}"),
                    },
                    traj,
                ));
            }
            if (i + 1) % stride == 0 && i + 1 < steps {
                traj.record(t_new, &x, control_from_amplitude(t_new, &a, params, m), e_new);
            }
        }
        drop(rhs);
        last_a = a;
    }
    let err = (x.rows(0, split.n1()) - curve.eval(t_final)).norm();
    traj.record(t_final, &x, control_from_amplitude(t_final, &last_a, params, m), err);
    traj.sample_times.push(t_final);
    traj.sample_errors.push(err);
    Ok(traj)
}

/// Runs independent simulations in parallel; results keep the input order.
pub fn simulate_batch<S: ControlAffineSystem + ?Sized>(
    sys: &S,
    curve: &ReferenceCurve,
    params: &ControllerParams,
    sims: &[SimulationConfig],
    tube: &TubeSpec,
) -> Vec<std::result::Result<Trajectory, SimulationFailure>> {
    sims.par_iter().map(|s| simulate(sys, curve, params, s, tube)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub substeps: usize,
    pub coarse_state: Vec<f64>,
    pub fine_state: Vec<f64>,
    /// `‖x_N − x_{2N}‖ / max(1, ‖x_{2N}‖)`.
    pub relative_difference: f64,
    /// Richardson estimate `‖x_N − x_{2N}‖ / 15` of the fine-grid error.
    pub richardson_error: f64,
    /// `richardson_error / max(1, ‖x_{2N}‖)`; the check passes when this is within `tolerance`.
    pub relative_richardson_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Integrates the first sampling interval with `N` and `2N` substeps and
/// compares the end states.
pub fn step_convergence_check<S: ControlAffineSystem + ?Sized>(
    sys: &S,
    curve: &ReferenceCurve,
    params: &ControllerParams,
    sim: &SimulationConfig,
) -> Result<ConvergenceReport> {
    const TOLERANCE: f64 = 1e-6;
    let split = sys.split();
    split.check(sim.x0())?;
    let t0 = sim.t0();
    let a = frozen_amplitude(sys, params, sim.x0(), &curve.eval(t0))?;
    let t1 = t0 + params.epsilon();
    let n = sim.substeps_per_interval();
    let coarse = integrate_interval(sys, params, &a, t0, t1, sim.x0(), n);
    let fine = integrate_interval(sys, params, &a, t0, t1, sim.x0(), 2 * n);
    let diff = (&coarse - &fine).norm();
    let rel = diff / fine.norm().max(1.0);
    Ok(ConvergenceReport {
        substeps: n,
        coarse_state: coarse.iter().copied().collect(),
        fine_state: fine.iter().copied().collect(),
        relative_difference: rel,
        richardson_error: diff / 15.0,
        relative_richardson_error: rel / 15.0,
        tolerance: TOLERANCE,
        passed: rel / 15.0 <= TOLERANCE,
    })
}

/// Formats a number with 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `t,x1..xn,u1..um,err`, one row per recorded time.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, n: usize, m: usize, mut w: W) -> io::Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.push("err".into());
    writeln!(w, "{}", header.join(","))?;
    for i in 0..traj.len() {
        let mut row = Vec::with_capacity(n + m + 2);
        row.push(fmt_num(traj.times[i]));
        row.extend(traj.states[i].iter().map(|&v| fmt_num(v)));
        row.extend(traj.controls[i].iter().map(|&v| fmt_num(v)));
        row.push(fmt_num(traj.errors[i]));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Writes `t,ystar1..ystarN` at the given times.
pub fn write_curve_csv<W: Write>(curve: &ReferenceCurve, times: &[f64], mut w: W) -> io::Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend((1..=curve.dim()).map(|i| format!("ystar{i}")));
    writeln!(w, "{}", header.join(","))?;
    for &t in times {
        let y = curve.eval(t);
        let mut row = vec![fmt_num(t)];
        row.extend(y.iter().map(|&v| fmt_num(v)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
