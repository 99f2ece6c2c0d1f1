//! Leading term `σ₁(ε, x⁰)` of the one-interval expansion of `y(ε)`.

use std::f64::consts::PI;

use crate::controller::{amplitude, ControllerParams};
use crate::error::Result;
use crate::lie::{projected_bracket, task_derivative};
use crate::system::{ControlAffineSystem, Field, State};

/// Closed form of `σ₁`:
///
/// ```text
/// (ε²/2) Σ_{k1,k2∈S1} ℒ_{f_k2} g_k1 a_k1 a_k2
///   − (ε^{3/2}/√π) Σ_{k1∈S1} a_k1 Σ_{(j,k2)∈S2} I[f_k1, f_k2] √(|a_jk2|/κ_jk2) sign(a_jk2)
/// ```
///
/// This is the value of
/// `−εFa + Σ gₖ∫₀^ε uₖ + Σ ℒ_{f_k2} g_k1 ∫₀^ε u_k1(s₁) ∫₀^{s₁} u_k2(s₂) ds₂ ds₁`
/// for the frozen controller started at a sampling instant.
pub fn sigma1<S: ControlAffineSystem + ?Sized>(
    sys: &S,
    params: &ControllerParams,
    x0: &State,
    y_star0: &State,
) -> Result<State> {
    let a = amplitude(sys, x0, y_star0, params)?;
    let sets = params.sets();
    let eps = params.epsilon();
    let n1 = sys.split().n1();
    let a1 = a.s1_part(sets);
    let a2 = a.s2_part(sets);
    let mut out = State::zeros(n1);
    for (&k1, &ak1) in sets.s1().iter().zip(a1) {
        for (&k2, &ak2) in sets.s1().iter().zip(a1) {
            if ak1 * ak2 != 0.0 {
                out += task_derivative(sys, Field::Control(k2), Field::Control(k1), 0.0, x0)? * (0.5 * eps * eps * ak1 * ak2);
            }
        }
        if ak1 == 0.0 {
            continue;
        }
        for ((&(_, k2), &kappa), &ajk) in sets.s2().iter().zip(params.kappa()).zip(a2) {
            if ajk == 0.0 || k2 == k1 {
                continue;
            }
            let w = (ajk.abs() / kappa as f64).sqrt() * ajk.signum();
            out -= projected_bracket(sys, k1, k2, x0)? * (eps.powf(1.5) / PI.sqrt() * ak1 * w);
        }
    }
    Ok(out)
}

/// `c_σ ε^{3/2} ‖y⁰ − y₀*‖^{3/2}`.
pub fn sigma1_bound(c_sigma: f64, eps: f64, err: f64) -> f64 {
    c_sigma * eps.powf(1.5) * err.powf(1.5)
}
