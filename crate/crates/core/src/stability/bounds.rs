//! Admissible sampling periods `ε₀ … ε₃` and the intermediates they depend on.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::constants::ProofConstants;
use crate::controller::{control_bound_coefficients, ControllerParams};
use crate::error::{Error, Result};
use crate::tube::TubeSpec;

/// Intermediates of the estimates, all evaluated at one `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intermediates {
    pub epsilon: f64,
    pub c1: f64,
    pub c2: f64,
    pub c_u: f64,
    pub c_g: f64,
    pub c_h: f64,
    pub c_y1: f64,
    pub c_y2: f64,
    pub c_z1: f64,
    pub c_z2: f64,
    pub c_sigma: f64,
    pub c_r0: f64,
    pub c_r1: f64,
    pub q: f64,
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// `Σ_{j₁} (Σ_{(j₂,j₁)∈S2} κ_{j₂j₁}^{-2/3})^{3/4}`.
pub fn kappa_sigma_sum(params: &ControllerParams) -> f64 {
    let mut seconds: Vec<usize> = params.sets().s2().iter().map(|&(_, j1)| j1).collect();
    seconds.sort_unstable();
    seconds.dedup();
    seconds
        .iter()
        .map(|&j1| {
            params
                .sets()
                .s2()
                .iter()
                .zip(params.kappa())
                .filter(|((_, b), _)| *b == j1)
                .map(|(_, &k)| (k as f64).powf(-2.0 / 3.0))
                .sum::<f64>()
                .powf(0.75)
        })
        .sum()
}

/// Evaluates every intermediate at `eps`, with `p + δ` taken from `tube`.
/// Overflowing exponentials propagate as `+∞`.
pub fn intermediates(
    c: &ProofConstants,
    tube: &TubeSpec,
    params: &ControllerParams,
    eps: f64,
) -> Result<Intermediates> {
    let params = params.with_epsilon(eps)?;
    let pd = tube.outer();
    let cb = control_bound_coefficients(&params, c.mu, pd);
    let se = eps.sqrt();
    let sp = pd.sqrt();
    let cu = cb.cu;
    let c_g = c.l_g0 * se + c.l_g * cu * sp;
    let c_h = c.l_h0 * se + c.l_h * cu * sp;
    let eh = (c_h * se).exp();
    let big = finite_or_inf((se * c_g * (1.0 + se * c_h * ((c_g + c_h) * se).exp())).exp());
    let c_y1 = finite_or_inf(cu * (c.m_g + c_g * eh * c.m_h * se) * big);
    let c_y2 = finite_or_inf((c.m_g0 + c_g * eh * c.m_h0 * se) * big);
    let c_z1 = finite_or_inf(eh * (c.m_h * cu + se * c_h * c_y1));
    let c_z2 = finite_or_inf(eh * (c.m_h0 + se * c_h * c_y2));
    let am = params.alpha() * c.mu;
    let c_sigma = se * c.m_g2 * am * am * sp / 2.0 + 2.0 * c.m_g2 * am.powf(1.5) / PI.sqrt() * kappa_sigma_sum(&params);
    let c_r0 = 0.5 * se * (se * c.l_g20 + c.m_g20 * (se + cu * sp));
    let c_r1 = cu * cu * (c.m_g30 * se + c.m_g3 * cu * sp) / 6.0;
    Ok(Intermediates {
        epsilon: eps,
        c1: cb.c1,
        c2: cb.c2,
        c_u: cu,
        c_g,
        c_h,
        c_y1,
        c_y2,
        c_z1,
        c_z2,
        c_sigma,
        c_r0,
        c_r1,
        q: c_sigma * sp + c_r1,
    })
}

/// Positive root of `c_y1 √(ε(p+δ)) + ε(c_y2 + L*) = δ′ − δ`.
///
/// Evaluated as `√ε = 2(δ′−δ) / (√(c_y1²(p+δ) + 4(c_y2+L*)(δ′−δ)) + c_y1√(p+δ))`,
/// which is the textbook root without the cancellation.
pub fn eps0_closed_form(c_y1: f64, c_y2: f64, l_star: f64, tube: &TubeSpec) -> f64 {
    let k = c_y2 + l_star;
    let d = tube.delta_prime - tube.delta;
    let b = c_y1 * tube.outer().sqrt();
    let s = 2.0 * d / ((b * b + 4.0 * k * d).sqrt() + b);
    if s.is_nan() {
        0.0
    } else {
        s * s
    }
}

/// Positive root of `c_y1 √(εp/ν) + ε(c_y2 + L*) = p(ν−1)/ν`.
pub fn eps2_closed_form(c_y1: f64, c_y2: f64, l_star: f64, p: f64, nu: f64) -> f64 {
    let k = c_y2 + l_star;
    let b = c_y1 * (p / nu).sqrt();
    let c = p * (nu - 1.0) / nu;
    let s = 2.0 * c / ((b * b + 4.0 * k * c).sqrt() + b);
    if s.is_nan() {
        0.0
    } else {
        s * s
    }
}

/// `ε₃ = ((α−λ)p − ν(L*+M_g0))² / (pq + νc_r0)²`.
pub fn eps3_closed_form(alpha: f64, lambda: f64, p: f64, nu: f64, l_star: f64, m_g0: f64, q: f64, c_r0: f64) -> f64 {
    let num = (alpha - lambda) * p - nu * (l_star + m_g0);
    let v = (num / (p * q + nu * c_r0)).powi(2);
    if v.is_nan() {
        0.0
    } else {
        v
    }
}

/// How `λ` is chosen inside `(0, α − ν(L*+M_g0)/p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Midpoint,
    Value(f64),
}

/// `γ₁(r) = e^{ελ/2}√r (c_y1√ε + e^{ελ/2}√r)` is stored through its two coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gamma1Coeffs {
    pub c_y1_sqrt_eps: f64,
    pub exp_half_eps_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBounds {
    pub eps0: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    /// `min(ε₀, ε₁, ε₃)`.
    pub eps_bar: f64,
    /// `min(ε̄, ε₂)`.
    pub eps_bar_with_eps2: f64,
    /// Self-consistent `ε` at which the intermediates were evaluated.
    pub fixed_point_epsilon: f64,
    pub bisection_steps: usize,
    pub nu: f64,
    pub lambda: f64,
    pub lambda_max: f64,
    pub min_alpha: f64,
    /// Intermediates at `fixed_point_epsilon`.
    pub intermediates: Intermediates,
    /// Intermediates at the controller's own `ε`.
    pub operating: Intermediates,
    pub operating_epsilon_certified: bool,
    pub gamma1_coeffs: Gamma1Coeffs,
    pub gamma2: f64,
    pub kappa_exponent_c2: String,
    pub kappa_exponent_c_sigma: String,
}

/// `ε₀, ε₂, ε₃` from intermediates evaluated at a single `ε`.
pub fn bounds_at(c: &ProofConstants, tube: &TubeSpec, params: &ControllerParams, nu: f64, lambda: f64, eps: f64) -> Result<(Intermediates, f64, f64, f64)> {
    let i = intermediates(c, tube, params, eps)?;
    let e0 = eps0_closed_form(i.c_y1, i.c_y2, c.l_star, tube);
    let e2 = eps2_closed_form(i.c_y1, i.c_y2, c.l_star, tube.p, nu);
    let e3 = eps3_closed_form(params.alpha(), lambda, tube.p, nu, c.l_star, c.m_g0, i.q, i.c_r0);
    Ok((i, e0, e2, e3))
}

/// Computes all admissible-ε bounds.
///
/// The intermediates grow with `ε`, so `φ(ε) = min(ε₀, ε₁, ε₃)(ε)` is
/// non-increasing and `φ(ε) = ε` has a single root on `(0, 1/α]`. It is found
/// by bisection in `log ε`, keeping the side with `φ(ε) ≥ ε`; every `ε` below
/// the returned `ε̄` is then certified by intermediates no larger than the
/// reported ones.
pub fn epsilon_bounds(
    c: &ProofConstants,
    tube: &TubeSpec,
    params: &ControllerParams,
    nu: f64,
    lambda: LambdaChoice,
) -> Result<EpsilonBounds> {
    tube.validate()?;
    if !(nu > 1.0 && nu.is_finite()) {
        return Err(Error::invalid(format!("nu must exceed 1, got {nu}")));
    }
    let alpha = params.alpha();
    let min_alpha = nu * (c.l_star + c.m_g0) / tube.p;
    if alpha <= min_alpha {
        return Err(Error::GainInfeasible { alpha, min_alpha });
    }
    let lambda_max = alpha - min_alpha;
    let lambda = match lambda {
        LambdaChoice::Midpoint => lambda_max / 2.0,
        LambdaChoice::Value(l) if l > 0.0 && l < lambda_max => l,
        LambdaChoice::Value(l) => {
            return Err(Error::invalid(format!("lambda must lie in (0, {lambda_max}), got {l}")));
        }
    };
    let eps1 = 1.0 / alpha;
    let phi = |eps: f64| -> Result<f64> {
        let (_, e0, _, e3) = bounds_at(c, tube, params, nu, lambda, eps)?;
        Ok(e0.min(eps1).min(e3))
    };

    let mut steps = 0;
    let fixed = if phi(eps1)? >= eps1 {
        eps1
    } else {
        let mut lo = (f64::MIN_POSITIVE * 1e8).ln();
        let mut hi = eps1.ln();
        if phi(lo.exp())? < lo.exp() {
            lo.exp()
        } else {
            while hi - lo > 1e-13 && steps < 400 {
                let mid = 0.5 * (lo + hi);
                if phi(mid.exp())? >= mid.exp() {
                    lo = mid;
                } else {
                    hi = mid;
                }
                steps += 1;
            }
            lo.exp()
        }
    };
    let (inter, eps0, eps2, eps3) = bounds_at(c, tube, params, nu, lambda, fixed)?;
    let eps_bar = eps0.min(eps1).min(eps3);
    let operating = intermediates(c, tube, params, params.epsilon())?;
    let eps = params.epsilon();
    Ok(EpsilonBounds {
        eps0,
        eps1,
        eps2,
        eps3,
        eps_bar,
        eps_bar_with_eps2: eps_bar.min(eps2),
        fixed_point_epsilon: fixed,
        bisection_steps: steps,
        nu,
        lambda,
        lambda_max,
        min_alpha,
        intermediates: inter,
        operating,
        operating_epsilon_certified: eps <= eps_bar,
        gamma1_coeffs: Gamma1Coeffs {
            c_y1_sqrt_eps: operating.c_y1 * eps.sqrt(),
            exp_half_eps_lambda: (eps * lambda / 2.0).exp(),
        },
        gamma2: operating.c_y2 + c.l_star,
        kappa_exponent_c2: "2/3".into(),
        kappa_exponent_c_sigma: "-2/3".into(),
    })
}

/// `γ₁(r₀) e^{−λt/2} + εγ₂` at the controller's `ε`, with `t` measured from
/// the initial time.
pub fn ultimate_bound(bounds: &EpsilonBounds, y0_err: f64, t: f64) -> f64 {
    let g = &bounds.gamma1_coeffs;
    let r = y0_err.sqrt();
    let rate = (-bounds.lambda * t / 2.0).exp();
    let decay = if r == 0.0 || rate == 0.0 {
        0.0
    } else {
        g.exp_half_eps_lambda * r * (g.c_y1_sqrt_eps + g.exp_half_eps_lambda * r) * rate
    };
    decay + bounds.operating.epsilon * bounds.gamma2
}

/// Checks that `c_y1, c_y2, c_z1, c_z2` are non-decreasing along the `ε` and
/// `δ` grids; returns a description of every violation.
pub fn check_monotonicity(
    c: &ProofConstants,
    tube: &TubeSpec,
    params: &ControllerParams,
    eps_grid: &[f64],
    delta_grid: &[f64],
) -> Result<Vec<String>> {
    let mut eps: Vec<f64> = eps_grid.to_vec();
    let mut deltas: Vec<f64> = delta_grid.to_vec();
    eps.sort_by(f64::total_cmp);
    deltas.sort_by(f64::total_cmp);
    let table = deltas
        .iter()
        .map(|&d| {
            let t = TubeSpec {
                delta: d,
                ..*tube
            };
            eps.iter()
                .map(|&e| intermediates(c, &t, params, e).map(|i| [i.c_y1, i.c_y2, i.c_z1, i.c_z2]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    const LABELS: [&str; 4] = ["c_y1", "c_y2", "c_z1", "c_z2"];
    let le = |a: f64, b: f64| a <= b * (1.0 + 1e-12) || b == f64::INFINITY;
    let mut bad = Vec::new();
    for (di, row) in table.iter().enumerate() {
        for ei in 0..row.len() {
            for q in 0..4 {
                if ei + 1 < row.len() && !le(row[ei][q], row[ei + 1][q]) {
                    bad.push(format!("{} decreases in epsilon at delta = {}, epsilon = {}", LABELS[q], deltas[di], eps[ei]));
                }
                if di + 1 < table.len() && !le(row[ei][q], table[di + 1][ei][q]) {
                    bad.push(format!("{} decreases in delta at delta = {}, epsilon = {}", LABELS[q], deltas[di], eps[ei]));
                }
            }
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::IndexSets;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(alpha: f64) -> ControllerParams {
        let sets = IndexSets::from_one_based(&[1], &[(1, 2), (1, 3)], 3, 3).unwrap();
        ControllerParams::new(alpha, 0.1, vec![1, 2], sets).unwrap()
    }

    fn mild() -> ProofConstants {
        ProofConstants {
            m_g: 1.0,
            m_h: 0.5,
            m_g0: 0.1,
            m_h0: 0.25,
            l_g: 0.2,
            l_h: 0.3,
            l_g0: 0.1,
            l_h0: 0.1,
            m_g2: 0.5,
            m_g20: 0.2,
            l_g20: 0.1,
            m_g3: 0.3,
            m_g30: 0.1,
            mu: 1.0,
            l_star: 0.2,
            sigma_min_f: 1.0,
            sample_count: 100,
            argmax: Default::default(),
        }
    }

    fn tube() -> TubeSpec {
        TubeSpec::new(0.5, 0.25, 0.5).unwrap()
    }

    #[test]
    fn eps1_is_inverse_gain() {
        let b = epsilon_bounds(&mild(), &tube(), &params(15.0), 2.0, LambdaChoice::Midpoint).unwrap();
        assert_eq!(b.eps1, 1.0 / 15.0);
        assert!(b.eps_bar <= b.eps1);
        assert_eq!(b.eps_bar, b.eps0.min(b.eps1).min(b.eps3));
        assert_eq!(b.eps_bar_with_eps2, b.eps_bar.min(b.eps2));
    }

    #[test]
    fn fixed_point_is_self_consistent() {
        let c = mild();
        let p = params(15.0);
        let b = epsilon_bounds(&c, &tube(), &p, 2.0, LambdaChoice::Midpoint).unwrap();
        assert!(b.eps_bar >= b.fixed_point_epsilon);
        assert!(b.eps_bar <= b.fixed_point_epsilon * (1.0 + 1e-10) || b.fixed_point_epsilon == b.eps1);
        let i = b.intermediates;
        let lhs = i.c_y1 * (b.eps0 * tube().outer()).sqrt() + b.eps0 * (i.c_y2 + c.l_star);
        assert_relative_eq!(lhs, tube().delta_prime - tube().delta, epsilon = 1e-10);
    }

    #[test]
    fn gain_infeasible_reports_minimum() {
        let mut c = mild();
        c.l_star = 2.0;
        match epsilon_bounds(&c, &tube(), &params(5.0), 2.0, LambdaChoice::Midpoint) {
            Err(Error::GainInfeasible { alpha, min_alpha }) => {
                assert_eq!(alpha, 5.0);
                assert_relative_eq!(min_alpha, 2.0 * 2.1 / 0.5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lambda_validation_and_midpoint() {
        let b = epsilon_bounds(&mild(), &tube(), &params(15.0), 2.0, LambdaChoice::Midpoint).unwrap();
        assert_relative_eq!(b.lambda, (15.0 - 2.0 * 0.3 / 0.5) / 2.0);
        assert!(epsilon_bounds(&mild(), &tube(), &params(15.0), 2.0, LambdaChoice::Value(14.0)).is_err());
        assert!(epsilon_bounds(&mild(), &tube(), &params(15.0), 1.0, LambdaChoice::Midpoint).is_err());
    }

    #[test]
    fn eps3_specialization() {
        let (alpha, lambda, p, q, cr0) = (15.0, 3.0, 0.5, 7.0, 0.4);
        let v = eps3_closed_form(alpha, lambda, p, 2.0, 0.0, 0.0, q, cr0);
        assert_relative_eq!(v, ((alpha - lambda) * p).powi(2) / (p * q + 2.0 * cr0).powi(2));
    }

    #[test]
    fn eps_closed_forms_match_printed_expressions() {
        let (cy1, cy2, ls) = (3.0, 2.0, 0.3);
        let t = tube();
        let k = cy2 + ls;
        let b = cy1 * t.outer().sqrt() / (2.0 * k);
        let printed0 = ((b * b + (t.delta_prime - t.delta) / k).sqrt() - b).powi(2);
        assert_relative_eq!(eps0_closed_form(cy1, cy2, ls, &t), printed0, max_relative = 1e-12);
        let nu = 2.0;
        let printed2 = t.p * ((cy1 * cy1 + 4.0 * (nu - 1.0) * k).sqrt() - cy1).powi(2) / (4.0 * nu * k * k);
        assert_relative_eq!(eps2_closed_form(cy1, cy2, ls, t.p, nu), printed2, max_relative = 1e-12);
    }

    #[test]
    fn overflow_gives_zero_bounds() {
        assert_eq!(eps0_closed_form(f64::INFINITY, f64::INFINITY, 0.2, &tube()), 0.0);
        assert_eq!(eps2_closed_form(f64::INFINITY, 1.0, 0.2, 0.5, 2.0), 0.0);
    }

    #[test]
    fn ultimate_bound_limits() {
        let p = params(15.0).with_epsilon(1e-4).unwrap();
        let b = epsilon_bounds(&mild(), &tube(), &p, 2.0, LambdaChoice::Midpoint).unwrap();
        assert!(b.gamma2.is_finite());
        let floor = b.operating.epsilon * b.gamma2;
        assert_eq!(ultimate_bound(&b, 0.0, 3.0), floor);
        assert_relative_eq!(ultimate_bound(&b, 0.7, 1e4), floor, epsilon = 1e-12);
        assert!(ultimate_bound(&b, 0.7, 0.0) > ultimate_bound(&b, 0.7, 1.0));
    }

    #[test]
    fn intermediates_monotone_on_grid() {
        let eps: Vec<f64> = (1..=20).map(|i| i as f64 * 0.005).collect();
        let deltas = [0.05, 0.1, 0.2, 0.4];
        let bad = check_monotonicity(&mild(), &tube(), &params(15.0), &eps, &deltas).unwrap();
        assert!(bad.is_empty(), "{bad:?}");
    }

    #[test]
    fn shared_control_bound() {
        let p = params(15.0);
        let i = intermediates(&mild(), &tube(), &p, 0.1).unwrap();
        let cb = control_bound_coefficients(&p, 1.0, tube().outer());
        assert_eq!(i.c_u.to_bits(), cb.cu.to_bits());
    }

    #[test]
    fn kappa_sum_groups_by_second_index() {
        let p = params(15.0);
        assert_relative_eq!(kappa_sigma_sum(&p), 1.0 + 2f64.powf(-0.5));
        let sets = IndexSets::from_one_based(&[], &[(1, 3), (2, 3)], 3, 2).unwrap();
        let q = ControllerParams::new(1.0, 0.1, vec![1, 8], sets).unwrap();
        assert_relative_eq!(kappa_sigma_sum(&q), (1.0 + 0.25f64).powf(0.75));
    }

    proptest! {
        #[test]
        fn bounds_are_finite_and_nonnegative(scale in 0.01f64..5.0, alpha in 5.0f64..40.0) {
            let mut c = mild();
            c.m_g2 *= scale;
            c.l_h *= scale;
            c.m_g3 *= scale;
            let b = epsilon_bounds(&c, &tube(), &params(alpha), 2.0, LambdaChoice::Midpoint).unwrap();
            for v in [b.eps0, b.eps2, b.eps3, b.eps_bar, b.intermediates.c_y1, b.intermediates.c_sigma, b.intermediates.q] {
                prop_assert!(v.is_finite() && v >= 0.0);
            }
            prop_assert!(b.eps_bar > 0.0);
        }
    }
}
