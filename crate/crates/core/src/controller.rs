//! The oscillating state feedback
//!
//! ```text
//! u_k = Σ_{i∈S1} δ_{ki} a_i
//!     + ε^{-1/2} Σ_{(i1,i2)∈S2} 2√(πκ|a_{i1i2}|) [δ_{k,i1} cos(2πκt/ε) + δ_{k,i2} sign(a_{i1i2}) sin(2πκt/ε)]
//! ```
//!
//! with amplitudes `a(x, y*) = −α F(x)⁻¹ (y − y*)`.

use std::f64::consts::PI;

use crate::error::{check_len, Error, Result};
use crate::lie::{assemble_f, FFactor, IndexSets};
use crate::system::{ControlAffineSystem, State};

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    alpha: f64,
    epsilon: f64,
    /// Frequencies aligned with `sets.s2()`.
    kappa: Vec<u32>,
    sets: IndexSets,
}

impl ControllerParams {
    pub fn new(alpha: f64, epsilon: f64, kappa: Vec<u32>, sets: IndexSets) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        check_len("kappa table", sets.s2().len(), kappa.len())?;
        if kappa.contains(&0) {
            return Err(Error::invalid("kappa values must be positive integers"));
        }
        for (i, k) in kappa.iter().enumerate() {
            if kappa[..i].contains(k) {
                return Err(Error::invalid(format!("kappa values must be pairwise distinct, {k} repeats")));
            }
        }
        Ok(Self {
            alpha,
            epsilon,
            kappa,
            sets,
        })
    }

    /// Assigns `κ = 1, 2, 3, …` to the pairs of `S2` in order.
    pub fn with_default_kappa(alpha: f64, epsilon: f64, sets: IndexSets) -> Result<Self> {
        let kappa = (1..=sets.s2().len() as u32).collect();
        Self::new(alpha, epsilon, kappa, sets)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn kappa(&self) -> &[u32] {
        &self.kappa
    }

    pub fn kappa_max(&self) -> u32 {
        self.kappa.iter().copied().max().unwrap_or(0)
    }

    pub fn sets(&self) -> &IndexSets {
        &self.sets
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.alpha, epsilon, self.kappa.clone(), self.sets.clone())
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(alpha, self.epsilon, self.kappa.clone(), self.sets.clone())
    }
}

/// `a = ((a_i)_{i∈S1}, (a_{i1i2})_{(i1,i2)∈S2})`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeVector(pub State);

impl AmplitudeVector {
    pub fn zeros(n1: usize) -> Self {
        Self(State::zeros(n1))
    }

    pub fn s1_part<'a>(&'a self, sets: &IndexSets) -> &'a [f64] {
        &self.0.as_slice()[..sets.s1().len()]
    }

    pub fn s2_part<'a>(&'a self, sets: &IndexSets) -> &'a [f64] {
        &self.0.as_slice()[sets.s1().len()..]
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

/// `sign` with `sign(0) = 0`, so a vanishing amplitude switches the sine channel off.
pub fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `a = −α F⁻¹ (y − y*)` from an existing factorization of `F(x)`.
pub fn amplitude_from_factor(factor: &FFactor, y: &State, y_star: &State, alpha: f64) -> Result<AmplitudeVector> {
    check_len("reference point", y.len(), y_star.len())?;
    let v = factor.solve(&(y - y_star))?;
    Ok(AmplitudeVector(v * -alpha))
}

/// `a(x, y*) = −α F(x)⁻¹ (y − y*)`.
pub fn amplitude<S: ControlAffineSystem + ?Sized>(
    sys: &S,
    x: &State,
    y_star: &State,
    params: &ControllerParams,
) -> Result<AmplitudeVector> {
    let split = sys.split();
    split.check(x)?;
    check_len("reference point", split.n1(), y_star.len())?;
    let factor = FFactor::new(assemble_f(sys, params.sets(), x)?, x)?;
    amplitude_from_factor(&factor, &split.y(x), y_star, params.alpha())
}

/// Evaluates `u(t)` for frozen amplitudes; writes directly into the `m`
/// components selected by the index sets.
pub fn control_from_amplitude(t: f64, a: &AmplitudeVector, params: &ControllerParams, m: usize) -> State {
    let sets = params.sets();
    let eps = params.epsilon();
    let mut u = State::zeros(m);
    for (&i, &ai) in sets.s1().iter().zip(a.s1_part(sets)) {
        u[i] += ai;
    }
    let scale = 1.0 / eps.sqrt();
    for ((&(i1, i2), &kappa), &aij) in sets.s2().iter().zip(params.kappa()).zip(a.s2_part(sets)) {
        if aij == 0.0 {
            continue;
        }
        let k = kappa as f64;
        let amp = scale * 2.0 * (PI * k * aij.abs()).sqrt();
        let phase = 2.0 * PI * k * t / eps;
        u[i1] += amp * phase.cos();
        u[i2] += amp * sign0(aij) * phase.sin();
    }
    u
}

/// `u^ε(t, x, y*)`.
pub fn control<S: ControlAffineSystem + ?Sized>(
    sys: &S,
    t: f64,
    x_frozen: &State,
    y_star_frozen: &State,
    params: &ControllerParams,
) -> Result<State> {
    let a = amplitude(sys, x_frozen, y_star_frozen, params)?;
    Ok(control_from_amplitude(t, &a, params, sys.num_controls()))
}

/// Coefficients of the control-magnitude bound
/// `U^ε ≤ c₁‖y⁰−y₀*‖ + c₂√(‖y⁰−y₀*‖/ε) ≤ c_u √(‖y⁰−y₀*‖/ε)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ControlBoundCoefficients {
    pub c1: f64,
    pub c2: f64,
    pub cu: f64,
}

/// `c₁ = √|S1|·αμ`, `c₂ = 2√(2απμ)(Σκ^{2/3})^{3/4}`, `c_u = c₁√(ε(p+δ)) + c₂`.
pub fn control_bound_coefficients(params: &ControllerParams, mu: f64, p_plus_delta: f64) -> ControlBoundCoefficients {
    let alpha = params.alpha();
    let c1 = (params.sets().s1().len() as f64).sqrt() * alpha * mu;
    let kappa_sum: f64 = params.kappa().iter().map(|&k| (k as f64).powf(2.0 / 3.0)).sum();
    let c2 = 2.0 * (2.0 * alpha * PI * mu).sqrt() * kappa_sum.powf(0.75);
    let cu = c1 * (params.epsilon() * p_plus_delta).sqrt() + c2;
    ControlBoundCoefficients { c1, c2, cu }
}

/// `c_u √(‖y⁰ − y₀*‖ / ε)`. Valid when `μ ≥ ‖F⁻¹‖` at the frozen state and
/// `‖y⁰ − y₀*‖ ≤ p + δ`.
pub fn control_magnitude_bound(
    y0: &State,
    y_star0: &State,
    params: &ControllerParams,
    mu: f64,
    p_plus_delta: f64,
) -> f64 {
    let c = control_bound_coefficients(params, mu, p_plus_delta);
    c.cu * ((y0 - y_star0).norm() / params.epsilon()).sqrt()
}
