//! Executes a configured scenario and assembles the JSON report.
//!
//! Execution is pure: [`execute`] returns the report and trajectory, and
//! [`write_outputs`] puts them on disk with atomic renames.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{
    BoundsSection, CertificationSection, ConstantsSection, ContractionSection, ExperimentConfig, RankCheckSection,
    Scenario,
};
use crate::error::{Error, Result};
use crate::integrator::{
    simulate, step_convergence_check, write_curve_csv, write_trajectory_csv, ConvergenceReport, SimError,
    SimulationConfig, Trajectory,
};
use crate::lie::{verify_rank_condition, RankReport};
use crate::stability::{
    certify_set_stability, contraction_check, epsilon_bounds, estimate_constants, initial_conditions, region_samples,
    CertificationReport, ContractionReport, EpsilonBounds, FloorSource, LambdaChoice, ProofConstants,
};
use crate::system::State;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const TOOL_NAME: &str = "partstab";
const DEFAULT_T_PROBE: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Analyze,
    Certify,
    Run,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Analyze => "analyze",
            Command::Certify => "certify",
            Command::Run => "run",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    SimulationFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tool {
    pub name: String,
    pub version: String,
}

/// Every default the run filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub model: String,
    pub kappa: Vec<u32>,
    pub substeps: Option<usize>,
    pub seed: u64,
    pub z_box: Vec<[f64; 2]>,
    pub t_probe: Option<f64>,
    pub nu: Option<f64>,
    pub lambda: Option<f64>,
    pub contraction_epsilon: Option<f64>,
    pub floor_source: Option<FloorSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureInfo {
    pub kind: String,
    pub time: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub t0: f64,
    pub horizon: f64,
    pub epsilon: f64,
    pub substeps: usize,
    pub sampling_instants: usize,
    pub recorded_points: usize,
    pub initial_error: f64,
    pub final_error: f64,
    pub max_error: f64,
    pub final_time: f64,
    pub final_state: Vec<f64>,
    pub convergence: Option<ConvergenceReport>,
    pub failure: Option<FailureInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsBlock {
    pub feasible: bool,
    pub alpha: f64,
    pub min_alpha: Option<f64>,
    pub result: Option<EpsilonBounds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    pub report_json: String,
    pub trajectory_csv: Option<String>,
    pub curve_csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool: Tool,
    pub command: Command,
    pub status: Status,
    pub config: ExperimentConfig,
    pub resolved: Resolved,
    pub simulation: Option<SimulationSummary>,
    pub rank_check: Option<RankReport>,
    pub constants: Option<ProofConstants>,
    pub bounds: Option<BoundsBlock>,
    pub contraction: Option<ContractionReport>,
    pub certification: Option<CertificationReport>,
    pub outputs: Outputs,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct Execution {
    pub report: Report,
    pub trajectory: Option<Trajectory>,
}

impl Execution {
    pub fn succeeded(&self) -> bool {
        self.report.status == Status::Ok
    }
}

/// Which stages a command runs.
struct Plan {
    simulation: bool,
    rank_check: Option<RankCheckSection>,
    constants: Option<ConstantsSection>,
    bounds: Option<BoundsSection>,
    contraction: Option<ContractionSection>,
    certification: Option<CertificationSection>,
}

fn plan(cfg: &ExperimentConfig, command: Command) -> Result<Plan> {
    let a = &cfg.analysis;
    let has_sim = cfg.simulation.is_some();
    let p = match command {
        Command::Simulate => {
            if !has_sim {
                return Err(Error::Precondition("simulate needs a [simulation] section".into()));
            }
            Plan {
                simulation: true,
                rank_check: None,
                constants: None,
                bounds: None,
                contraction: None,
                certification: None,
            }
        }
        Command::Analyze => Plan {
            simulation: false,
            rank_check: Some(a.rank_check.clone().unwrap_or_default()),
            constants: Some(a.constants.clone().unwrap_or_default()),
            bounds: Some(a.bounds.clone().unwrap_or_default()),
            contraction: Some(a.contraction.clone().unwrap_or_default()),
            certification: None,
        },
        Command::Certify => {
            if !has_sim {
                return Err(Error::Precondition("certify needs a [simulation] section".into()));
            }
            Plan {
                simulation: false,
                rank_check: None,
                constants: Some(a.constants.clone().unwrap_or_default()),
                bounds: Some(a.bounds.clone().unwrap_or_default()),
                contraction: None,
                certification: Some(a.certification.clone().unwrap_or_default()),
            }
        }
        Command::Run => {
            if a.certification.is_some() && !has_sim {
                return Err(Error::Precondition("[analysis.certification] needs a [simulation] section".into()));
            }
            let bounds = a.bounds.clone();
            let constants = a.constants.clone().or_else(|| bounds.as_ref().map(|_| ConstantsSection::default()));
            Plan {
                simulation: has_sim,
                rank_check: a.rank_check.clone(),
                constants,
                bounds,
                contraction: a.contraction.clone(),
                certification: a.certification.clone(),
            }
        }
    };
    Ok(p)
}

fn failure_info(e: &SimError) -> FailureInfo {
    let (kind, time) = match e {
        SimError::Setup(_) => ("setup", None),
        SimError::SingularF { time, .. } => ("singular_f", Some(*time)),
        SimError::GuardExit { time, .. } => ("guard_exit", Some(*time)),
        SimError::NumericBlowup { time } => ("numeric_blowup", Some(*time)),
    };
    FailureInfo {
        kind: kind.into(),
        time,
        message: e.to_string(),
    }
}

fn summarize(sim: &SimulationConfig, eps: f64, traj: &Trajectory, failure: Option<FailureInfo>) -> SimulationSummary {
    SimulationSummary {
        t0: sim.t0(),
        horizon: sim.horizon(),
        epsilon: eps,
        substeps: sim.substeps_per_interval(),
        sampling_instants: traj.sample_times.len(),
        recorded_points: traj.len(),
        initial_error: traj.errors.first().copied().unwrap_or(f64::NAN),
        final_error: traj.errors.last().copied().unwrap_or(f64::NAN),
        max_error: traj.errors.iter().copied().fold(0.0, f64::max),
        final_time: traj.times.last().copied().unwrap_or(sim.t0()),
        final_state: traj.final_state().map(|x| x.iter().copied().collect()).unwrap_or_default(),
        convergence: None,
        failure,
    }
}

/// Runs `command` on a validated scenario. Simulation failures are reported
/// through [`Status::SimulationFailed`]; analysis errors are returned.
pub fn execute(scenario: &Scenario, command: Command) -> Result<Execution> {
    let cfg = &scenario.config;
    let plan = plan(cfg, command)?;
    let sys = scenario.system.as_ref();
    let split = sys.split();
    let params = &scenario.params;
    let tube = &scenario.tube;
    let curve = &scenario.curve;
    let seed = cfg.analysis.seed;
    let mut status = Status::Ok;

    let mut resolved = Resolved {
        model: sys.name().to_string(),
        kappa: params.kappa().to_vec(),
        substeps: scenario.sim.as_ref().map(|s| s.substeps_per_interval()),
        seed,
        z_box: scenario.z_box.iter().map(|&(a, b)| [a, b]).collect(),
        t_probe: None,
        nu: None,
        lambda: None,
        contraction_epsilon: None,
        floor_source: None,
    };

    let mut trajectory = None;
    let mut simulation = None;
    if plan.simulation {
        let sim = scenario.sim.as_ref().expect("planned simulation has a config");
        match simulate(sys, curve, params, sim, tube) {
            Ok(traj) => {
                let mut s = summarize(sim, params.epsilon(), &traj, None);
                s.convergence = Some(step_convergence_check(sys, curve, params, sim)?);
                simulation = Some(s);
                trajectory = Some(traj);
            }
            Err(f) => {
                status = Status::SimulationFailed;
                simulation = Some(summarize(sim, params.epsilon(), &f.partial, Some(failure_info(&f.error))));
                trajectory = Some(f.partial);
            }
        }
    }

    let rank_check = match &plan.rank_check {
        Some(rc) => {
            let t_probe = probe_horizon(scenario, None);
            let pts = region_samples(split, curve, tube.guard(), &scenario.z_box, t_probe, rc.samples, seed)?;
            let states: Vec<State> = pts.iter().map(|p| State::from_column_slice(&p.x)).collect();
            Some(verify_rank_condition(sys, params.sets(), &states, rc.tolerance)?)
        }
        None => None,
    };

    let constants = match &plan.constants {
        Some(cs) => {
            let t_probe = probe_horizon(scenario, cs.t_probe);
            resolved.t_probe = Some(t_probe);
            Some(estimate_constants(
                sys,
                params.sets(),
                curve,
                tube,
                &scenario.z_box,
                cs.samples,
                seed,
                t_probe,
            )?)
        }
        None => None,
    };

    let bounds = match (&plan.bounds, &constants) {
        (Some(b), Some(c)) => {
            resolved.nu = Some(b.nu);
            let choice = b.lambda.map_or(LambdaChoice::Midpoint, LambdaChoice::Value);
            Some(match epsilon_bounds(c, tube, params, b.nu, choice) {
                Ok(eb) => {
                    resolved.lambda = Some(eb.lambda);
                    BoundsBlock {
                        feasible: true,
                        alpha: params.alpha(),
                        min_alpha: Some(eb.min_alpha),
                        result: Some(eb),
                    }
                }
                Err(Error::GainInfeasible { alpha, min_alpha }) => BoundsBlock {
                    feasible: false,
                    alpha,
                    min_alpha: Some(min_alpha),
                    result: None,
                },
                Err(e) => return Err(e),
            })
        }
        _ => None,
    };
    let eps_bar = bounds.as_ref().and_then(|b| b.result.as_ref()).map(|r| r.eps_bar);
    let nu = resolved.nu.unwrap_or_else(|| BoundsSection::default().nu);

    let contraction = match &plan.contraction {
        Some(cs) => {
            let nu = cs.nu.unwrap_or(nu);
            let eps = cs.epsilon.unwrap_or(params.epsilon());
            resolved.contraction_epsilon = Some(eps);
            let p = params.with_epsilon(eps)?;
            let t0 = cfg.simulation.as_ref().map_or(0.0, |s| s.t0);
            let ics = initial_conditions(split, curve, t0, tube.p / nu, tube.outer(), &scenario.z_box, cs.count, seed)?;
            let substeps = scenario
                .sim
                .as_ref()
                .map_or_else(|| SimulationConfig::default_substeps(&p), |s| s.substeps_per_interval());
            Some(contraction_check(sys, curve, &p, tube, nu, &ics, t0, substeps, eps_bar)?)
        }
        None => None,
    };

    let certification = match &plan.certification {
        Some(cs) => {
            let sim = scenario.sim.as_ref().expect("planned certification has a simulation");
            let mut grid = vec![sim.x0().clone()];
            if cs.extra_initial_conditions > 0 {
                grid.extend(initial_conditions(
                    split,
                    curve,
                    sim.t0(),
                    0.0,
                    tube.outer(),
                    &scenario.z_box,
                    cs.extra_initial_conditions,
                    seed,
                )?);
            }
            let floor = bounds
                .as_ref()
                .and_then(|b| b.result.as_ref())
                .map(|r| 2.0 * r.operating.epsilon * r.gamma2);
            let report = certify_set_stability(sys, curve, params, tube, sim, &grid, &cs.deltas, nu, floor)?;
            resolved.floor_source = Some(report.floor_source);
            Some(report)
        }
        None => None,
    };

    let out = &cfg.output;
    let outputs = Outputs {
        report_json: out.report_json.clone(),
        trajectory_csv: trajectory.as_ref().map(|_| out.trajectory_csv.clone()),
        curve_csv: trajectory.as_ref().map(|_| out.curve_csv.clone()),
    };
    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        tool: Tool {
            name: TOOL_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
        command,
        status,
        config: cfg.clone(),
        resolved,
        simulation,
        rank_check,
        constants,
        bounds,
        contraction,
        certification,
        outputs,
    };
    Ok(Execution { report, trajectory })
}

fn probe_horizon(scenario: &Scenario, explicit: Option<f64>) -> f64 {
    explicit.unwrap_or_else(|| scenario.sim.as_ref().map_or(DEFAULT_T_PROBE, |s| s.horizon()))
}

fn write_atomic(dir: &Path, name: &str, fill: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> io::Result<PathBuf> {
    let target = dir.join(name);
    let parent = target.parent().unwrap_or(dir);
    fs::create_dir_all(parent)?;
    let mut builder = tempfile::Builder::new();
    builder.prefix(".partstab-");
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(fs::Permissions::from_mode(0o644));
    }
    let tmp = builder.tempfile_in(parent)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(&target).map_err(|e| e.error)?;
    Ok(target)
}

/// Writes the trajectory and curve CSVs (when present) and the report into `dir`.
pub fn write_outputs(exec: &Execution, scenario: &Scenario, dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let out = &exec.report.outputs;
    if let (Some(traj), Some(name)) = (&exec.trajectory, &out.trajectory_csv) {
        let split = scenario.system.split();
        let m = scenario.system.num_controls();
        written.push(write_atomic(dir, name, |w| write_trajectory_csv(traj, split.n(), m, w))?);
    }
    if let (Some(traj), Some(name)) = (&exec.trajectory, &out.curve_csv) {
        written.push(write_atomic(dir, name, |w| write_curve_csv(&scenario.curve, &traj.times, w))?);
    }
    let json = exec.report.to_json();
    written.push(write_atomic(dir, &out.report_json, |w| w.write_all(json.as_bytes()))?);
    Ok(written)
}
