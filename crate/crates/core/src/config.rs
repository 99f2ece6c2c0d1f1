//! TOML experiment configuration. The schema is documented in
//! `docs/config.md`; indices in `s1`/`s2` are one-based.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::auv::{AuvModel, RollRate};
use crate::controller::ControllerParams;
use crate::curve::{CurveSpec, ReferenceCurve};
use crate::integrator::SimulationConfig;
use crate::lie::IndexSets;
use crate::stability::MIN_SAMPLES;
use crate::system::{ControlAffineSystem, State};
use crate::tube::{tracking_error, TubeSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub curve: CurveSpec,
    pub controller: ControllerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    pub tube: TubeSpec,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn paper_roll() -> RollRate {
    AuvModel::paper().roll
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Auv {
        #[serde(default = "paper_roll")]
        roll: RollRate,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub s1: Vec<usize>,
    pub s2: Vec<[usize; 2]>,
    /// Defaults to `1, 2, …` in the order of `s2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Vec<u32>>,
}

fn zero() -> f64 {
    0.0
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "zero")]
    pub t0: f64,
    /// Final time `T`.
    pub horizon: f64,
    pub x0: Vec<f64>,
    /// Defaults to `max(200, 40·κ_max)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    #[serde(default = "one")]
    pub stride: usize,
}

/// Each present subsection enables that analysis for `run`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_check: Option<RankCheckSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contraction: Option<ContractionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certification: Option<CertificationSection>,
}

fn rank_samples() -> usize {
    10_000
}

fn constant_samples() -> usize {
    2_000
}

fn default_nu() -> f64 {
    2.0
}

fn contraction_count() -> usize {
    50
}

fn default_deltas() -> Vec<f64> {
    vec![0.0, 0.1, 0.5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankCheckSection {
    #[serde(default = "rank_samples")]
    pub samples: usize,
    /// Per-point singular value threshold; defaults to `1e-6·σ_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl Default for RankCheckSection {
    fn default() -> Self {
        Self {
            samples: rank_samples(),
            tolerance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSection {
    #[serde(default = "constant_samples")]
    pub samples: usize,
    /// Defaults to the simulation horizon, or `20` without a simulation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_probe: Option<f64>,
    /// Defaults to the model's box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_box: Option<Vec<[f64; 2]>>,
}

impl Default for ConstantsSection {
    fn default() -> Self {
        Self {
            samples: constant_samples(),
            t_probe: None,
            z_box: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// Defaults to the midpoint of the admissible interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            nu: default_nu(),
            lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionSection {
    #[serde(default = "contraction_count")]
    pub count: usize,
    /// Overrides the controller's `ε` for this check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Defaults to `ν` from `[analysis.bounds]`, else 2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

impl Default for ContractionSection {
    fn default() -> Self {
        Self {
            count: contraction_count(),
            epsilon: None,
            nu: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificationSection {
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    /// Random initial conditions in `B_δ(Y₀^p)` added to `simulation.x0`.
    #[serde(default)]
    pub extra_initial_conditions: usize,
}

impl Default for CertificationSection {
    fn default() -> Self {
        Self {
            deltas: default_deltas(),
            extra_initial_conditions: 0,
        }
    }
}

fn trajectory_name() -> String {
    "trajectory.csv".into()
}

fn curve_name() -> String {
    "curve.csv".into()
}

fn report_name() -> String {
    "report.json".into()
}

/// File names, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "trajectory_name")]
    pub trajectory_csv: String,
    #[serde(default = "curve_name")]
    pub curve_csv: String,
    #[serde(default = "report_name")]
    pub report_json: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            trajectory_csv: trajectory_name(),
            curve_csv: curve_name(),
            report_json: report_name(),
        }
    }
}

/// One diagnostic, addressed by its dotted key path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl ConfigError {
    fn single(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            issues: vec![ConfigIssue {
                field: field.into(),
                message: message.into(),
            }],
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}: {}", issue.field, issue.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// A validated configuration with every object built.
#[derive(Clone)]
pub struct Scenario {
    pub config: ExperimentConfig,
    pub system: Arc<dyn ControlAffineSystem>,
    pub curve: ReferenceCurve,
    pub params: ControllerParams,
    pub sim: Option<SimulationConfig>,
    pub tube: TubeSpec,
    pub z_box: Vec<(f64, f64)>,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("model", &self.system.name())
            .field("curve", &self.curve)
            .field("params", &self.params)
            .field("sim", &self.sim)
            .field("tube", &self.tube)
            .finish()
    }
}

impl ExperimentConfig {
    /// The AUV helix scenario with the published parameters and every analysis enabled.
    pub fn paper_auv() -> Self {
        use std::f64::consts::FRAC_PI_4;
        Self {
            schema_version: SCHEMA_VERSION,
            model: ModelConfig::Auv { roll: paper_roll() },
            curve: CurveSpec::Helix { omega: 0.2 },
            controller: ControllerConfig {
                alpha: 15.0,
                epsilon: 0.1,
                s1: vec![1],
                s2: vec![[1, 2], [1, 3]],
                kappa: Some(vec![1, 2]),
            },
            simulation: Some(SimulationSection {
                t0: 0.0,
                horizon: 20.0,
                x0: vec![0.0, 0.0, -1.0, FRAC_PI_4, FRAC_PI_4, FRAC_PI_4],
                substeps: None,
                stride: 10,
            }),
            tube: TubeSpec {
                p: 0.5,
                delta: 1.0,
                delta_prime: 1.5,
            },
            analysis: AnalysisConfig {
                seed: 7,
                rank_check: Some(RankCheckSection::default()),
                constants: Some(ConstantsSection::default()),
                bounds: Some(BoundsSection::default()),
                contraction: Some(ContractionSection {
                    epsilon: Some(0.01),
                    ..ContractionSection::default()
                }),
                certification: Some(CertificationSection::default()),
            },
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let field = match e.span() {
                Some(span) => locate_key(text, span.start),
                None => String::from("<document>"),
            };
            ConfigError::single(field, message)
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every field and builds the scenario. All issues are collected.
    pub fn build(&self) -> Result<Scenario, ConfigError> {
        let mut issues = Vec::new();
        let mut bad = |field: &str, message: String| {
            issues.push(ConfigIssue {
                field: field.to_string(),
                message,
            })
        };
        if self.schema_version != SCHEMA_VERSION {
            bad(
                "schema_version",
                format!("unsupported schema version {}, expected {SCHEMA_VERSION}", self.schema_version),
            );
        }
        let (system, default_z_box): (Arc<dyn ControlAffineSystem>, Vec<(f64, f64)>) = match &self.model {
            ModelConfig::Auv { roll } => {
                if !roll.amplitude.is_finite() || !roll.frequency.is_finite() {
                    bad("model.roll", "roll amplitude and frequency must be finite".into());
                }
                (Arc::new(AuvModel::new(*roll)), AuvModel::default_z_box())
            }
        };
        let split = system.split();
        let m = system.num_controls();

        let curve = match ReferenceCurve::new(self.curve.clone()) {
            Ok(c) if c.dim() != split.n1() => {
                bad("curve", format!("curve dimension {} does not match n1 = {}", c.dim(), split.n1()));
                None
            }
            Ok(c) => Some(c),
            Err(e) => {
                bad("curve", e.to_string());
                None
            }
        };

        let tube = self.tube;
        if !(tube.p > 0.0 && tube.p.is_finite()) {
            bad("tube.p", format!("p must be positive, got {}", tube.p));
        }
        if !(tube.delta > 0.0) {
            bad("tube.delta", format!("delta must be positive, got {}", tube.delta));
        }
        if !(tube.delta < tube.delta_prime && tube.delta_prime.is_finite()) {
            bad(
                "tube.delta_prime",
                format!(
                    "delta must be smaller than delta_prime (0 < delta < delta_prime), got delta = {}, delta_prime = {}",
                    tube.delta, tube.delta_prime
                ),
            );
        }

        let c = &self.controller;
        if !(c.alpha > 0.0 && c.alpha.is_finite()) {
            bad("controller.alpha", format!("alpha must be positive, got {}", c.alpha));
        }
        if !(c.epsilon > 0.0 && c.epsilon.is_finite()) {
            bad("controller.epsilon", format!("epsilon must be positive, got {}", c.epsilon));
        }
        let pairs: Vec<(usize, usize)> = c.s2.iter().map(|p| (p[0], p[1])).collect();
        let sets = match IndexSets::from_one_based(&c.s1, &pairs, m, split.n1()) {
            Ok(s) => Some(s),
            Err(e) => {
                bad("controller.s2", e.to_string());
                None
            }
        };
        let params = sets.and_then(|sets| {
            let r = match &c.kappa {
                Some(k) => ControllerParams::new(c.alpha.max(f64::MIN_POSITIVE), c.epsilon.max(f64::MIN_POSITIVE), k.clone(), sets),
                None => ControllerParams::with_default_kappa(c.alpha.max(f64::MIN_POSITIVE), c.epsilon.max(f64::MIN_POSITIVE), sets),
            };
            r.map_err(|e| bad("controller.kappa", e.to_string())).ok()
        });

        let sim = match &self.simulation {
            Some(s) => {
                let mut ok = true;
                if !(s.t0.is_finite() && s.horizon.is_finite() && s.horizon > s.t0) {
                    bad("simulation.horizon", format!("horizon must exceed t0, got t0 = {}, horizon = {}", s.t0, s.horizon));
                    ok = false;
                }
                if s.x0.len() != split.n() {
                    bad("simulation.x0", format!("x0 must have {} components, got {}", split.n(), s.x0.len()));
                    ok = false;
                }
                if s.stride == 0 {
                    bad("simulation.stride", "stride must be at least 1".into());
                    ok = false;
                }
                let substeps = match &params {
                    Some(params) => {
                        let needed = 40 * params.kappa_max() as usize;
                        let substeps = s.substeps.unwrap_or_else(|| SimulationConfig::default_substeps(params));
                        if substeps < needed {
                            bad(
                                "simulation.substeps",
                                format!("substeps must be at least 40 * kappa_max = {needed}, got {substeps}"),
                            );
                            ok = false;
                        }
                        substeps
                    }
                    None => {
                        ok = false;
                        0
                    }
                };
                if ok {
                    let x0 = State::from_column_slice(&s.x0);
                    if let Err(e) = system.check_domain(&x0) {
                        bad("simulation.x0", e.to_string());
                    }
                    if let Some(curve) = &curve {
                        if let Ok(e0) = tracking_error(split, &x0, s.t0, curve) {
                            if e0 > tube.outer() {
                                bad(
                                    "simulation.x0",
                                    format!("initial tracking error {e0} exceeds p + delta = {}", tube.outer()),
                                );
                            }
                        }
                    }
                    match SimulationConfig::new(s.t0, s.horizon, x0, substeps, s.stride) {
                        Ok(sim) => Some(sim),
                        Err(e) => {
                            bad("simulation", e.to_string());
                            None
                        }
                    }
                } else {
                    None
                }
            }
            None => None,
        };

        let a = &self.analysis;
        if let Some(r) = &a.rank_check {
            if r.samples == 0 {
                bad("analysis.rank_check.samples", "samples must be positive".into());
            }
            if let Some(t) = r.tolerance {
                if !(t > 0.0) {
                    bad("analysis.rank_check.tolerance", format!("tolerance must be positive, got {t}"));
                }
            }
        }
        let mut z_box = default_z_box;
        if let Some(cs) = &a.constants {
            if cs.samples < MIN_SAMPLES {
                bad(
                    "analysis.constants.samples",
                    format!("samples must be at least {MIN_SAMPLES}, got {}", cs.samples),
                );
            }
            if let Some(t) = cs.t_probe {
                if !(t >= 0.0 && t.is_finite()) {
                    bad("analysis.constants.t_probe", format!("t_probe must be non-negative, got {t}"));
                }
            }
            if let Some(zb) = &cs.z_box {
                if zb.len() != split.n2() {
                    bad(
                        "analysis.constants.z_box",
                        format!("z_box needs {} intervals, got {}", split.n2(), zb.len()),
                    );
                } else if let Some(iv) = zb.iter().find(|iv| !(iv[0] <= iv[1] && iv[0].is_finite() && iv[1].is_finite())) {
                    bad("analysis.constants.z_box", format!("interval [{}, {}] is not a finite interval", iv[0], iv[1]));
                } else {
                    z_box = zb.iter().map(|iv| (iv[0], iv[1])).collect();
                }
            }
        }
        if let Some(b) = &a.bounds {
            if !(b.nu > 1.0 && b.nu.is_finite()) {
                bad("analysis.bounds.nu", format!("nu must exceed 1, got {}", b.nu));
            }
            if let Some(l) = b.lambda {
                if !(l > 0.0) {
                    bad("analysis.bounds.lambda", format!("lambda must be positive, got {l}"));
                }
            }
        }
        if let Some(cs) = &a.contraction {
            if cs.count == 0 {
                bad("analysis.contraction.count", "count must be positive".into());
            }
            if let Some(e) = cs.epsilon {
                if !(e > 0.0 && e.is_finite()) {
                    bad("analysis.contraction.epsilon", format!("epsilon must be positive, got {e}"));
                }
            }
            if let Some(nu) = cs.nu {
                if !(nu > 1.0 && nu.is_finite()) {
                    bad("analysis.contraction.nu", format!("nu must exceed 1, got {nu}"));
                }
            }
        }
        if let Some(cs) = &a.certification {
            if cs.deltas.is_empty() {
                bad("analysis.certification.deltas", "at least one Delta is required".into());
            }
            if let Some(d) = cs.deltas.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
                bad("analysis.certification.deltas", format!("Delta values must be non-negative, got {d}"));
            }
        }
        for (field, name) in [
            ("output.trajectory_csv", &self.output.trajectory_csv),
            ("output.curve_csv", &self.output.curve_csv),
            ("output.report_json", &self.output.report_json),
        ] {
            if name.trim().is_empty() {
                bad(field, "file name must not be empty".into());
            }
        }

        if !issues.is_empty() {
            return Err(ConfigError { issues });
        }
        Ok(Scenario {
            config: self.clone(),
            system,
            curve: curve.expect("validated curve"),
            params: params.expect("validated controller"),
            sim,
            tube,
            z_box,
        })
    }
}

/// Parses and validates a TOML document.
pub fn load_scenario(text: &str) -> Result<Scenario, ConfigError> {
    ExperimentConfig::from_toml_str(text)?.build()
}

/// Best-effort dotted key path of the TOML entry containing byte `offset`.
fn locate_key(text: &str, offset: usize) -> String {
    let mut table = String::new();
    let mut key = String::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if pos > offset {
            break;
        }
        if trimmed.starts_with('[') {
            table = trimmed.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = trimmed.split_once('=') {
            key = k.trim().to_string();
        }
        pos += line.len();
    }
    match (table.is_empty(), key.is_empty()) {
        (true, true) => "<document>".into(),
        (true, false) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const PAPER: &str = r#"
schema_version = 1

[model]
name = "auv"

[curve]
kind = "helix"
omega = 0.2

[controller]
alpha = 15.0
epsilon = 0.1
s1 = [1]
s2 = [[1, 2], [1, 3]]
kappa = [1, 2]

[simulation]
horizon = 20.0
x0 = [0.0, 0.0, -1.0, 0.7853981633974483, 0.7853981633974483, 0.7853981633974483]

[tube]
p = 0.5
delta = 1.0
delta_prime = 1.5
"#;

    fn issues(text: &str) -> Vec<ConfigIssue> {
        match load_scenario(text) {
            Err(e) => e.issues,
            Ok(_) => panic!("config should be rejected"),
        }
    }

    #[test]
    fn paper_config_builds() {
        let s = load_scenario(PAPER).unwrap();
        let p = crate::auv::paper_scenario();
        assert_eq!(s.params, p.params);
        assert_eq!(s.sim.as_ref().unwrap(), &p.sim);
        assert_eq!(s.curve, p.curve);
        assert_eq!(s.tube, p.tube);
        assert_eq!(s.system.name(), "auv");
    }

    #[test]
    fn delta_not_below_delta_prime() {
        let text = PAPER.replace("delta_prime = 1.5", "delta_prime = 1.0");
        let i = issues(&text);
        assert_eq!(i.len(), 1);
        assert_eq!(i[0].field, "tube.delta_prime");
        assert!(i[0].message.contains("delta must be smaller than delta_prime"));
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        let text = PAPER.replace("alpha = 15.0", "alpha = 15.0\ngain = 3.0");
        let i = issues(&text);
        assert!(i[0].message.contains("unknown field"), "{i:?}");
        assert_eq!(i[0].field, "controller.gain");
    }

    #[test]
    fn collects_several_issues() {
        let text = PAPER
            .replace("alpha = 15.0", "alpha = -1.0")
            .replace("kappa = [1, 2]", "kappa = [2, 2]")
            .replace("horizon = 20.0", "horizon = -1.0");
        let fields: Vec<String> = issues(&text).into_iter().map(|i| i.field).collect();
        assert!(fields.contains(&"controller.alpha".to_string()));
        assert!(fields.contains(&"controller.kappa".to_string()));
        assert!(fields.contains(&"simulation.horizon".to_string()));
    }

    #[test]
    fn initial_error_outside_neighbourhood() {
        let text = PAPER.replace("delta = 1.0", "delta = 0.25");
        let i = issues(&text);
        assert_eq!(i[0].field, "simulation.x0");
    }

    #[test]
    fn wrong_schema_version() {
        let i = issues(&PAPER.replace("schema_version = 1", "schema_version = 7"));
        assert_eq!(i[0].field, "schema_version");
    }

    #[test]
    fn default_kappa_and_substeps() {
        let s = load_scenario(&PAPER.replace("kappa = [1, 2]\n", "")).unwrap();
        assert_eq!(s.params.kappa(), &[1, 2]);
        assert_eq!(s.sim.unwrap().substeps_per_interval(), 200);
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::from_toml_str(PAPER).unwrap();
        cfg.analysis.constants = Some(ConstantsSection::default());
        cfg.analysis.certification = Some(CertificationSection::default());
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn analysis_only_config() {
        let start = PAPER.find("[simulation]").unwrap();
        let end = PAPER.find("[tube]").unwrap();
        let text = format!("{}{}", &PAPER[..start], &PAPER[end..]);
        let s = load_scenario(&text).unwrap();
        assert!(s.sim.is_none());
    }

    #[test]
    fn bad_z_box() {
        let text = format!("{PAPER}\n[analysis.constants]\nz_box = [[0.0, 1.0]]\n");
        assert_eq!(issues(&text)[0].field, "analysis.constants.z_box");
    }
}
