//! Control-affine systems `ẋ = f₀(t,x) + Σₖ fₖ(x) uₖ` with the state split
//! `x = (y, z)` into task variables `y ∈ ℝ^{n1}` and free variables `z ∈ ℝ^{n2}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub type State = DVector<f64>;

/// Dimensions of the task/free split of the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSplit {
    n1: usize,
    n2: usize,
}

impl StateSplit {
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        if n1 == 0 {
            return Err(Error::invalid("n1 must be at least 1"));
        }
        Ok(Self { n1, n2 })
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn check(&self, x: &State) -> Result<()> {
        check_len("state", self.n(), x.len())
    }

    /// Task part `y` of a full state.
    pub fn y(&self, x: &State) -> State {
        x.rows(0, self.n1).into_owned()
    }

    pub fn z(&self, x: &State) -> State {
        x.rows(self.n1, self.n2).into_owned()
    }
}

/// Region `D_y` of admissible task variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum DomainY {
    Whole,
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl DomainY {
    pub fn contains(&self, y: &[f64]) -> bool {
        match self {
            DomainY::Whole => true,
            DomainY::Box { lower, upper } => y
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi),
            DomainY::Ball { center, radius } => dist(y, center) <= *radius,
        }
    }

    /// Whether the closed ball `B_r(center)` lies inside the region.
    pub fn contains_ball(&self, center: &[f64], r: f64) -> bool {
        match self {
            DomainY::Whole => true,
            DomainY::Box { lower, upper } => center
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(c, (lo, hi))| c - r >= *lo && c + r <= *hi),
            DomainY::Ball {
                center: c0,
                radius,
            } => dist(center, c0) + r <= *radius,
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Selects one of the system's vector fields: the drift `f₀` or a control field `fₖ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Drift,
    /// Zero-based control index.
    Control(usize),
}

/// A control-affine system. Implementors provide the fields; Jacobians are
/// optional and fall back to central finite differences.
///
/// Control indices are zero-based throughout the library API.
pub trait ControlAffineSystem: Send + Sync {
    fn split(&self) -> StateSplit;

    fn num_controls(&self) -> usize;

    fn drift(&self, t: f64, x: &State) -> State;

    fn field(&self, k: usize, x: &State) -> State;

    /// Analytic `∂fₖ/∂x`, if available.
    fn field_jacobian(&self, _k: usize, _x: &State) -> Option<DMatrix<f64>> {
        None
    }

    /// Analytic `(∂f₀/∂x, ∂f₀/∂t)`, if available.
    fn drift_jacobian(&self, _t: f64, _x: &State) -> Option<(DMatrix<f64>, State)> {
        None
    }

    /// Rejects states outside the domain `D` where the fields are defined.
    fn check_domain(&self, _x: &State) -> Result<()> {
        Ok(())
    }

    fn domain_y(&self) -> DomainY {
        DomainY::Whole
    }

    fn name(&self) -> &str {
        "custom"
    }
}

/// Evaluates `field` at `(t, x)`.
pub fn eval_field<S: ControlAffineSystem + ?Sized>(sys: &S, field: Field, t: f64, x: &State) -> State {
    match field {
        Field::Drift => sys.drift(t, x),
        Field::Control(k) => sys.field(k, x),
    }
}

/// Relative step for first-order finite differences.
pub const FD_STEP: f64 = 1e-5;
/// Relative step for the outer difference of second-order derivatives.
pub const FD_STEP_SECOND: f64 = 1e-4;

fn fd_step(x: &State, rel: f64) -> f64 {
    rel * x.norm().max(1.0)
}

/// `∂field/∂x` at `(t, x)`: analytic when the system supplies it, otherwise
/// central differences with step `1e-5·max(1, ‖x‖)`.
pub fn jacobian<S: ControlAffineSystem + ?Sized>(sys: &S, field: Field, t: f64, x: &State) -> Result<DMatrix<f64>> {
    let analytic = match field {
        Field::Drift => sys.drift_jacobian(t, x).map(|(j, _)| j),
        Field::Control(k) => sys.field_jacobian(k, x),
    };
    if let Some(j) = analytic {
        return Ok(j);
    }
    fd_jacobian(sys, field, t, x)
}

pub fn fd_jacobian<S: ControlAffineSystem + ?Sized>(sys: &S, field: Field, t: f64, x: &State) -> Result<DMatrix<f64>> {
    let n = x.len();
    let h = fd_step(x, FD_STEP);
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for i in 0..n {
        xp[i] = x[i] + h;
        sys.check_domain(&xp)?;
        let fp = eval_field(sys, field, t, &xp);
        xp[i] = x[i] - h;
        sys.check_domain(&xp)?;
        let fm = eval_field(sys, field, t, &xp);
        xp[i] = x[i];
        jac.set_column(i, &((fp - fm) / (2.0 * h)));
    }
    Ok(jac)
}

/// `∂f₀/∂t` at `(t, x)`.
pub fn drift_time_derivative<S: ControlAffineSystem + ?Sized>(sys: &S, t: f64, x: &State) -> State {
    if let Some((_, dt)) = sys.drift_jacobian(t, x) {
        return dt;
    }
    let h = FD_STEP * t.abs().max(1.0);
    (sys.drift(t + h, x) - sys.drift(t - h, x)) / (2.0 * h)
}

/// Checks the dimensional contract of a system at one point.
pub fn validate_system<S: ControlAffineSystem + ?Sized>(sys: &S, x: &State) -> Result<()> {
    let split = sys.split();
    let n = split.n();
    split.check(x)?;
    let m = sys.num_controls();
    if m == 0 || m >= n {
        return Err(Error::invalid(format!(
            "number of controls must satisfy 0 < m < n, got m = {m}, n = {n}"
        )));
    }
    check_len("drift output", n, sys.drift(0.0, x).len())?;
    for k in 0..m {
        check_len("control field output", n, sys.field(k, x).len())?;
    }
    Ok(())
}

type DriftFn = dyn Fn(f64, &State) -> State + Send + Sync;
type FieldFn = dyn Fn(&State) -> State + Send + Sync;
type JacobianFn = dyn Fn(&State) -> DMatrix<f64> + Send + Sync;
type DomainFn = dyn Fn(&State) -> bool + Send + Sync;

/// A system assembled from closures; the library-side registration point for
/// user models.
pub struct FnSystem {
    split: StateSplit,
    drift: Box<DriftFn>,
    fields: Vec<Box<FieldFn>>,
    jacobians: Vec<Option<Box<JacobianFn>>>,
    domain: Option<Box<DomainFn>>,
    domain_y: DomainY,
    name: String,
}

impl FnSystem {
    pub fn builder(split: StateSplit) -> FnSystemBuilder {
        FnSystemBuilder {
            split,
            drift: None,
            fields: Vec::new(),
            jacobians: Vec::new(),
            domain: None,
            domain_y: DomainY::Whole,
            name: "custom".into(),
        }
    }
}

pub struct FnSystemBuilder {
    split: StateSplit,
    drift: Option<Box<DriftFn>>,
    fields: Vec<Box<FieldFn>>,
    jacobians: Vec<Option<Box<JacobianFn>>>,
    domain: Option<Box<DomainFn>>,
    domain_y: DomainY,
    name: String,
}

impl FnSystemBuilder {
    pub fn drift(mut self, f: impl Fn(f64, &State) -> State + Send + Sync + 'static) -> Self {
        self.drift = Some(Box::new(f));
        self
    }

    pub fn field(mut self, f: impl Fn(&State) -> State + Send + Sync + 'static) -> Self {
        self.fields.push(Box::new(f));
        self.jacobians.push(None);
        self
    }

    pub fn field_with_jacobian(
        mut self,
        f: impl Fn(&State) -> State + Send + Sync + 'static,
        jac: impl Fn(&State) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.fields.push(Box::new(f));
        self.jacobians.push(Some(Box::new(jac)));
        self
    }

    /// Membership test for `D`; states failing it are rejected with a domain error.
    pub fn domain(mut self, inside: impl Fn(&State) -> bool + Send + Sync + 'static) -> Self {
        self.domain = Some(Box::new(inside));
        self
    }

    pub fn domain_y(mut self, d: DomainY) -> Self {
        self.domain_y = d;
        self
    }

    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn build(self) -> Result<FnSystem> {
        let n = self.split.n();
        let m = self.fields.len();
        if m == 0 || m >= n {
            return Err(Error::invalid(format!(
                "number of controls must satisfy 0 < m < n, got m = {m}, n = {n}"
            )));
        }
        let drift = self.drift.unwrap_or_else(|| Box::new(move |_, _| State::zeros(n)));
        Ok(FnSystem {
            split: self.split,
            drift,
            fields: self.fields,
            jacobians: self.jacobians,
            domain: self.domain,
            domain_y: self.domain_y,
            name: self.name,
        })
    }
}

impl ControlAffineSystem for FnSystem {
    fn split(&self) -> StateSplit {
        self.split
    }

    fn num_controls(&self) -> usize {
        self.fields.len()
    }

    fn drift(&self, t: f64, x: &State) -> State {
        (self.drift)(t, x)
    }

    fn field(&self, k: usize, x: &State) -> State {
        (self.fields[k])(x)
    }

    fn field_jacobian(&self, k: usize, x: &State) -> Option<DMatrix<f64>> {
        self.jacobians[k].as_ref().map(|j| j(x))
    }

    fn check_domain(&self, x: &State) -> Result<()> {
        match &self.domain {
            Some(inside) if !inside(x) => Err(Error::Domain {
                x: x.iter().copied().collect(),
                reason: format!("rejected by the domain of `{}`", self.name),
            }),
            _ => Ok(()),
        }
    }

    fn domain_y(&self) -> DomainY {
        self.domain_y.clone()
    }

    fn name(&self) -> &str {
        &self.name
    }
}
