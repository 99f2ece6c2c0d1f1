//! Directional derivatives, Lie brackets and the task matrix
//! `F(x) = ((gᵢ)_{i∈S1}, (I_{n1×n}[f_{i1}, f_{i2}])_{(i1,i2)∈S2})`.

use nalgebra::{DMatrix, Dyn, LU};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::system::{eval_field, jacobian, ControlAffineSystem, Field, State, FD_STEP_SECOND};

/// Condition number above which `F(x)` is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Selected control indices `S1` and bracket pairs `S2` (zero-based). Their
/// order fixes the column order of `F(x)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSets {
    s1: Vec<usize>,
    s2: Vec<(usize, usize)>,
}

impl IndexSets {
    /// Validates the sets against `m` controls and `n1` task variables.
    pub fn new(s1: Vec<usize>, s2: Vec<(usize, usize)>, m: usize, n1: usize) -> Result<Self> {
        if s1.len() + s2.len() != n1 {
            return Err(Error::invalid(format!(
                "|S1| + |S2| must equal n1 = {n1}, got {} + {}",
                s1.len(),
                s2.len()
            )));
        }
        if let Some(&i) = s1.iter().find(|&&i| i >= m) {
            return Err(Error::invalid(format!("S1 index {i} out of range for m = {m}")));
        }
        if let Some(&(a, b)) = s2.iter().find(|(a, b)| *a >= m || *b >= m) {
            return Err(Error::invalid(format!("S2 pair ({a}, {b}) out of range for m = {m}")));
        }
        for (i, v) in s1.iter().enumerate() {
            if s1[..i].contains(v) {
                return Err(Error::invalid(format!("duplicate S1 index {v}")));
            }
        }
        for (i, v) in s2.iter().enumerate() {
            if s2[..i].contains(v) {
                return Err(Error::invalid(format!("duplicate S2 pair {v:?}")));
            }
        }
        Ok(Self { s1, s2 })
    }

    /// Same as [`IndexSets::new`] but with the one-based indices used in
    /// config files.
    pub fn from_one_based(s1: &[usize], s2: &[(usize, usize)], m: usize, n1: usize) -> Result<Self> {
        if s1.contains(&0) || s2.iter().any(|(a, b)| *a == 0 || *b == 0) {
            return Err(Error::invalid("one-based control indices must be >= 1"));
        }
        Self::new(
            s1.iter().map(|i| i - 1).collect(),
            s2.iter().map(|(a, b)| (a - 1, b - 1)).collect(),
            m,
            n1,
        )
    }

    pub fn s1(&self) -> &[usize] {
        &self.s1
    }

    pub fn s2(&self) -> &[(usize, usize)] {
        &self.s2
    }

    pub fn n1(&self) -> usize {
        self.s1.len() + self.s2.len()
    }
}

/// `ℒ_g f(t,x) = (∂f/∂x)(t,x)·g(t,x)`.
pub fn directional_derivative<S: ControlAffineSystem + ?Sized>(
    sys: &S,
    f: Field,
    g: Field,
    t: f64,
    x: &State,
) -> Result<State> {
    sys.check_domain(x)?;
    let jf = jacobian(sys, f, t, x)?;
    Ok(jf * eval_field(sys, g, t, x))
}

/// `[f_{k1}, f_{k2}](x) = ℒ_{f_{k1}} f_{k2}(x) − ℒ_{f_{k2}} f_{k1}(x)`.
pub fn lie_bracket<S: ControlAffineSystem + ?Sized>(sys: &S, k1: usize, k2: usize, x: &State) -> Result<State> {
    let a = directional_derivative(sys, Field::Control(k2), Field::Control(k1), 0.0, x)?;
    let b = directional_derivative(sys, Field::Control(k1), Field::Control(k2), 0.0, x)?;
    Ok(a - b)
}

/// First `n1` components of the bracket, `I_{n1×n}[f_{k1}, f_{k2}](x)`.
pub fn projected_bracket<S: ControlAffineSystem + ?Sized>(
    sys: &S,
    k1: usize,
    k2: usize,
    x: &State,
) -> Result<State> {
    let n1 = sys.split().n1();
    Ok(lie_bracket(sys, k1, k2, x)?.rows(0, n1).into_owned())
}

/// `ℒ_{f_b} g_c(t,x)`: the task part of `ℒ_{f_b} f_c`.
pub fn task_derivative<S: ControlAffineSystem + ?Sized>(
    sys: &S,
    b: Field,
    c: Field,
    t: f64,
    x: &State,
) -> Result<State> {
    let n1 = sys.split().n1();
    Ok(directional_derivative(sys, c, b, t, x)?.rows(0, n1).into_owned())
}

/// `ℒ_{f_a} ℒ_{f_b} g_c(t,x)`, differentiating `ℒ_{f_b} g_c` along `f_a` with a
/// central difference of relative step `1e-4`.
pub fn task_second_derivative<S: ControlAffineSystem + ?Sized>(
    sys: &S,
    a: Field,
    b: Field,
    c: Field,
    t: f64,
    x: &State,
) -> Result<State> {
    let n1 = sys.split().n1();
    let v = eval_field(sys, a, t, x);
    let vn = v.norm();
    if vn == 0.0 {
        return Ok(State::zeros(n1));
    }
    let h = FD_STEP_SECOND * x.norm().max(1.0) / vn;
    let xp = x + &v * h;
    let xm = x - &v * h;
    let fp = task_derivative(sys, b, c, t, &xp)?;
    let fm = task_derivative(sys, b, c, t, &xm)?;
    Ok((fp - fm) / (2.0 * h))
}

/// Lazily evaluated brackets for the pairs of `S2`.
pub struct BracketTable<'a, S: ?Sized> {
    sys: &'a S,
    pairs: Vec<(usize, usize)>,
}

impl<'a, S: ControlAffineSystem + ?Sized> BracketTable<'a, S> {
    pub fn new(sys: &'a S, sets: &IndexSets) -> Self {
        Self {
            sys,
            pairs: sets.s2().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn bracket(&self, i: usize, x: &State) -> Result<State> {
        let (a, b) = self.pairs[i];
        lie_bracket(self.sys, a, b, x)
    }

    pub fn projected(&self, i: usize, x: &State) -> Result<State> {
        let (a, b) = self.pairs[i];
        projected_bracket(self.sys, a, b, x)
    }
}

/// Assembles the `n1 × n1` matrix `F(x)`.
pub fn assemble_f<S: ControlAffineSystem + ?Sized>(sys: &S, sets: &IndexSets, x: &State) -> Result<DMatrix<f64>> {
    let split = sys.split();
    split.check(x)?;
    let n1 = split.n1();
    check_len("|S1| + |S2|", n1, sets.n1())?;
    sys.check_domain(x)?;
    let mut f = DMatrix::zeros(n1, n1);
    for (col, &i) in sets.s1().iter().enumerate() {
        f.set_column(col, &sys.field(i, x).rows(0, n1));
    }
    let off = sets.s1().len();
    for (j, &(a, b)) in sets.s2().iter().enumerate() {
        f.set_column(off + j, &projected_bracket(sys, a, b, x)?);
    }
    Ok(f)
}

/// A pivoted LU factorization of `F(x)` with its spectral condition number.
#[derive(Debug, Clone)]
pub struct FFactor {
    lu: LU<f64, Dyn, Dyn>,
    matrix: DMatrix<f64>,
    sigma_min: f64,
    sigma_max: f64,
}

impl FFactor {
    /// Factorizes `f`, rejecting it when the condition estimate exceeds
    /// [`MAX_CONDITION`] or a pivot vanishes. `x` is only used for diagnostics.
    pub fn new(f: DMatrix<f64>, x: &State) -> Result<Self> {
        let (sigma_min, sigma_max) = singular_range(&f);
        let condition = if sigma_min > 0.0 { sigma_max / sigma_min } else { f64::INFINITY };
        let singular = || Error::SingularF {
            x: x.iter().copied().collect(),
            condition,
        };
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(singular());
        }
        let lu = f.clone().lu();
        if !lu.is_invertible() {
            return Err(singular());
        }
        Ok(Self {
            lu,
            matrix: f,
            sigma_min,
            sigma_max,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn condition(&self) -> f64 {
        self.sigma_max / self.sigma_min
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    /// `‖F⁻¹‖₂ = 1/σ_min`.
    pub fn inverse_norm(&self) -> f64 {
        1.0 / self.sigma_min
    }

    pub fn solve(&self, rhs: &State) -> Result<State> {
        check_len("right-hand side", self.matrix.nrows(), rhs.len())?;
        self.lu.solve(rhs).ok_or_else(|| Error::SingularF {
            x: Vec::new(),
            condition: f64::INFINITY,
        })
    }
}

fn singular_range(f: &DMatrix<f64>) -> (f64, f64) {
    let sv = f.singular_values();
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sv.iter().copied().fold(0.0, f64::max);
    (lo, hi)
}

/// Solves `F(x)·v = rhs`.
pub fn solve_f<S: ControlAffineSystem + ?Sized>(
    sys: &S,
    sets: &IndexSets,
    x: &State,
    rhs: &State,
) -> Result<State> {
    FFactor::new(assemble_f(sys, sets, x)?, x)?.solve(rhs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub sample_count: usize,
    pub min_singular_value: f64,
    pub worst_point: Vec<f64>,
    /// `max ‖F⁻¹‖` over the samples, `∞` when some sample is singular.
    pub max_inverse_norm: f64,
    /// Threshold actually applied at the worst point.
    pub threshold: f64,
    /// `true` when the default scale-aware threshold `1e-6·‖F‖` was used.
    pub relative_threshold: bool,
    pub passed: bool,
}

/// Checks the rank condition over `samples`: every `F(x)` must have
/// `σ_min > tol`, with `tol` defaulting to `1e-6·‖F(x)‖₂` per point.
pub fn verify_rank_condition<S: ControlAffineSystem + ?Sized>(
    sys: &S,
    sets: &IndexSets,
    samples: &[State],
    tol: Option<f64>,
) -> Result<RankReport> {
    if samples.is_empty() {
        return Err(Error::EmptySamples("rank condition samples"));
    }
    let rows: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|x| {
            let f = assemble_f(sys, sets, x)?;
            let (lo, hi) = singular_range(&f);
            Ok((lo, tol.unwrap_or(1e-6 * hi)))
        })
        .collect::<Result<_>>()?;
    let mut worst = 0;
    let mut passed = true;
    for (i, &(s, thr)) in rows.iter().enumerate() {
        if s < rows[worst].0 {
            worst = i;
        }
        passed &= s > thr;
    }
    let min_sv = rows[worst].0;
    Ok(RankReport {
        sample_count: samples.len(),
        min_singular_value: min_sv,
        worst_point: samples[worst].iter().copied().collect(),
        max_inverse_norm: if min_sv > 0.0 { 1.0 / min_sv } else { f64::INFINITY },
        threshold: rows[worst].1,
        relative_threshold: tol.is_none(),
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{FnSystem, StateSplit};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// ẋ = u₁ e₁ + u₂ e₂ with n1 = 2, n2 = 1.
    fn constant_fields() -> FnSystem {
        FnSystem::builder(StateSplit::new(2, 1).unwrap())
            .field(|_| State::from_vec(vec![1.0, 0.0, 0.0]))
            .field(|_| State::from_vec(vec![0.0, 1.0, 0.0]))
            .build()
            .unwrap()
    }

    /// A smooth nonlinear test system used for algebraic identities.
    fn nonlinear() -> FnSystem {
        FnSystem::builder(StateSplit::new(2, 2).unwrap())
            .drift(|t, x| State::from_vec(vec![x[1] * t.cos(), -x[0], 0.3 * x[2] * x[3], t.sin()]))
            .field(|x| State::from_vec(vec![x[2].cos(), x[2].sin(), 0.0, x[0]]))
            .field(|x| State::from_vec(vec![x[3], x[0] * x[1], 1.0, 0.0]))
            .field(|x| State::from_vec(vec![(x[0] * x[3]).sin(), 0.0, x[1], 1.0]))
            .build()
            .unwrap()
    }

    #[test]
    fn index_set_validation() {
        assert!(IndexSets::new(vec![0], vec![(0, 1)], 2, 2).is_ok());
        assert!(IndexSets::new(vec![0], vec![], 2, 2).is_err());
        assert!(IndexSets::new(vec![0, 0], vec![], 2, 2).is_err());
        assert!(IndexSets::new(vec![2], vec![(0, 1)], 2, 2).is_err());
        assert!(IndexSets::new(vec![], vec![(0, 1), (0, 1)], 2, 2).is_err());
        let s = IndexSets::from_one_based(&[1], &[(1, 2), (1, 3)], 3, 3).unwrap();
        assert_eq!(s.s1(), &[0]);
        assert_eq!(s.s2(), &[(0, 1), (0, 2)]);
        assert!(IndexSets::from_one_based(&[0], &[(1, 2), (1, 3)], 3, 3).is_err());
    }

    #[test]
    fn directional_derivative_linear() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let a2 = a.clone();
        let sys = FnSystem::builder(StateSplit::new(1, 1).unwrap())
            .drift(move |_, x| &a2 * x)
            .field(|_| State::from_vec(vec![0.7, -1.1]))
            .build()
            .unwrap();
        let x = State::from_vec(vec![0.4, 9.0]);
        let d = directional_derivative(&sys, Field::Drift, Field::Control(0), 0.0, &x).unwrap();
        let expected = a * State::from_vec(vec![0.7, -1.1]);
        assert_relative_eq!(d, expected, epsilon = 1e-9);
    }

    #[test]
    fn commuting_constant_fields() {
        let sys = constant_fields();
        let x = State::from_vec(vec![0.1, 0.2, 0.3]);
        assert_relative_eq!(lie_bracket(&sys, 0, 1, &x).unwrap().norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_f_from_unit_columns() {
        let sys = constant_fields();
        let sets = IndexSets::new(vec![0, 1], vec![], 2, 2).unwrap();
        let f = assemble_f(&sys, &sets, &State::zeros(3)).unwrap();
        assert_eq!(f, DMatrix::identity(2, 2));
        let report = verify_rank_condition(&sys, &sets, &[State::zeros(3)], None).unwrap();
        assert!(report.passed);
        assert_relative_eq!(report.min_singular_value, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn constant_columns_singular_value() {
        let sys = FnSystem::builder(StateSplit::new(2, 1).unwrap())
            .field(|_| State::from_vec(vec![2.0, 1.0, 0.0]))
            .field(|_| State::from_vec(vec![1.0, 3.0, 5.0]))
            .build()
            .unwrap();
        let sets = IndexSets::new(vec![0, 1], vec![], 2, 2).unwrap();
        let samples = vec![State::zeros(3), State::from_vec(vec![1.0, 2.0, 3.0])];
        let r = verify_rank_condition(&sys, &sets, &samples, Some(1e-6)).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let expected = m.singular_values().min();
        assert!(r.passed);
        assert_relative_eq!(r.min_singular_value, expected, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_column_fails() {
        let sys = FnSystem::builder(StateSplit::new(2, 1).unwrap())
            .field(|x| State::from_vec(vec![x[2].cos(), x[2].sin(), 0.0]))
            .field(|x| State::from_vec(vec![x[2].cos(), x[2].sin(), 0.0]))
            .build()
            .unwrap();
        let sets = IndexSets::new(vec![0, 1], vec![], 2, 2).unwrap();
        let r = verify_rank_condition(&sys, &sets, &[State::from_vec(vec![0.0, 0.0, 0.4])], None).unwrap();
        assert!(!r.passed);
        let x = State::zeros(3);
        assert!(matches!(
            solve_f(&sys, &sets, &x, &State::from_vec(vec![1.0, 0.0])),
            Err(Error::SingularF { .. })
        ));
    }

    #[test]
    fn zero_column_is_singular() {
        let sys = FnSystem::builder(StateSplit::new(2, 1).unwrap())
            .field(|_| State::from_vec(vec![1.0, 0.0, 0.0]))
            .field(|_| State::from_vec(vec![0.0, 0.0, 1.0]))
            .build()
            .unwrap();
        let sets = IndexSets::new(vec![0, 1], vec![], 2, 2).unwrap();
        let err = solve_f(&sys, &sets, &State::zeros(3), &State::from_vec(vec![1.0, 1.0])).unwrap_err();
        match err {
            Error::SingularF { condition, .. } => assert!(condition > MAX_CONDITION),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_samples_rejected() {
        let sys = constant_fields();
        let sets = IndexSets::new(vec![0, 1], vec![], 2, 2).unwrap();
        assert!(matches!(
            verify_rank_condition(&sys, &sets, &[], None),
            Err(Error::EmptySamples(_))
        ));
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let sys = constant_fields();
        let sets = IndexSets::new(vec![0, 1], vec![], 2, 2).unwrap();
        let v = solve_f(&sys, &sets, &State::zeros(3), &State::zeros(2)).unwrap();
        assert_eq!(v.norm(), 0.0);
    }

    #[test]
    fn second_derivative_matches_analytic() {
        // f1 = (x2, 0), f2 = (0, x1): L_{f2} g1 = (x1, 0); L_{f1} of that = (x2, 0)
        let sys = FnSystem::builder(StateSplit::new(1, 1).unwrap())
            .field(|x| State::from_vec(vec![x[1], 0.0]))
            .build()
            .unwrap();
        let sys2 = FnSystem::builder(StateSplit::new(1, 2).unwrap())
            .field(|x| State::from_vec(vec![x[1], 0.0, 0.0]))
            .field(|x| State::from_vec(vec![0.0, x[0] * x[0], 0.0]))
            .build()
            .unwrap();
        let x = State::from_vec(vec![0.6, -1.3, 0.0]);
        // L_{f2} g1 = ∂g1/∂x · f2 = x1²; L_{f1}(x1²) = 2 x1 · x2
        let d = task_second_derivative(&sys2, Field::Control(0), Field::Control(1), Field::Control(0), 0.0, &x)
            .unwrap();
        assert_relative_eq!(d[0], 2.0 * 0.6 * -1.3, epsilon = 1e-7);
        let z = task_second_derivative(&sys, Field::Control(0), Field::Control(0), Field::Control(0), 0.0, &State::from_vec(vec![1.0, 0.0]))
            .unwrap();
        assert_relative_eq!(z[0], 0.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn bracket_antisymmetry(v in prop::array::uniform4(-1.5f64..1.5), k1 in 0usize..3, k2 in 0usize..3) {
            let sys = nonlinear();
            let x = State::from_column_slice(&v);
            let ab = lie_bracket(&sys, k1, k2, &x).unwrap();
            let ba = lie_bracket(&sys, k2, k1, &x).unwrap();
            prop_assert!((ab + ba).amax() <= 1e-8);
            if k1 == k2 {
                prop_assert!(lie_bracket(&sys, k1, k1, &x).unwrap().amax() <= 1e-12);
            }
        }

        #[test]
        fn bracket_bilinearity(v in prop::array::uniform4(-1.5f64..1.5), c in -2.0f64..2.0) {
            // [f0 + c f2, f1] = [f0, f1] + c [f2, f1], built as a separate system
            let x = State::from_column_slice(&v);
            let base = nonlinear();
            let comb = FnSystem::builder(StateSplit::new(2, 2).unwrap())
                .field(move |x| {
                    let s = nonlinear();
                    s.field(0, x) + s.field(2, x) * c
                })
                .field(|x| nonlinear().field(1, x))
                .field(|x| nonlinear().field(2, x))
                .build()
                .unwrap();
            let lhs = lie_bracket(&comb, 0, 1, &x).unwrap();
            let rhs = lie_bracket(&base, 0, 1, &x).unwrap() + lie_bracket(&base, 2, 1, &x).unwrap() * c;
            prop_assert!((lhs - rhs).amax() <= 1e-6);
        }

        #[test]
        fn solve_inverts_assemble(v in prop::array::uniform4(-1.0f64..1.0), r in prop::array::uniform2(-3.0f64..3.0)) {
            let sys = nonlinear();
            let sets = IndexSets::new(vec![0], vec![(0, 1)], 3, 2).unwrap();
            let x = State::from_column_slice(&v);
            let f = assemble_f(&sys, &sets, &x).unwrap();
            if let Ok(fac) = FFactor::new(f.clone(), &x) {
                prop_assume!(fac.condition() < 1e6);
                let rhs = State::from_column_slice(&r);
                let sol = fac.solve(&(&f * &rhs)).unwrap();
                prop_assert!((sol - &rhs).norm() <= 1e-10 * (1.0 + rhs.norm()) * fac.condition());
                let v2 = fac.solve(&rhs).unwrap();
                prop_assert!((&f * v2 - &rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
            }
        }
    }
}
