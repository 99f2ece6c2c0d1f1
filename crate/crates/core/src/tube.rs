//! The tube family `Y_t^p = {x : ‖y − y*(t)‖ < p}` and its closed neighborhoods
//! `B_δ(Y_t^p) = {x : ‖y − y*(t)‖ ≤ p + δ}`.

use serde::{Deserialize, Serialize};

use crate::curve::ReferenceCurve;
use crate::error::{check_len, Error, Result};
use crate::system::{DomainY, State, StateSplit};

/// Tube radius `p`, initial margin `δ` and working margin `δ′`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeSpec {
    pub p: f64,
    pub delta: f64,
    pub delta_prime: f64,
}

impl TubeSpec {
    pub fn new(p: f64, delta: f64, delta_prime: f64) -> Result<Self> {
        let t = Self {
            p,
            delta,
            delta_prime,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::invalid(format!("tube radius p must be positive, got {}", self.p)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::invalid(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.delta < self.delta_prime) || !self.delta_prime.is_finite() {
            return Err(Error::invalid(format!(
                "delta must be smaller than delta_prime, got delta = {}, delta_prime = {}",
                self.delta, self.delta_prime
            )));
        }
        Ok(())
    }

    /// Radius `p + δ` of the admissible initial neighborhood.
    pub fn outer(&self) -> f64 {
        self.p + self.delta
    }

    /// Radius `p + δ′` of the working region `D′`.
    pub fn guard(&self) -> f64 {
        self.p + self.delta_prime
    }
}

/// `‖y − y*(t)‖` for the task part of `x`.
pub fn tracking_error(split: StateSplit, x: &State, t: f64, curve: &ReferenceCurve) -> Result<f64> {
    split.check(x)?;
    check_len("reference curve", split.n1(), curve.dim())?;
    let ystar = curve.eval(t);
    Ok((x.rows(0, split.n1()) - ystar).norm())
}

/// Distance from `x` to the tube `Y_t^p` measured in the task variables:
/// `max(0, ‖y − y*(t)‖ − p)`.
pub fn tube_distance(
    split: StateSplit,
    x: &State,
    t: f64,
    curve: &ReferenceCurve,
    tube: &TubeSpec,
) -> Result<f64> {
    Ok((tracking_error(split, x, t, curve)? - tube.p).max(0.0))
}

/// Membership in the closed neighborhood `B_δ(Y_t^p)`.
pub fn in_neighborhood(
    split: StateSplit,
    x: &State,
    t: f64,
    curve: &ReferenceCurve,
    tube: &TubeSpec,
) -> Result<bool> {
    Ok(tracking_error(split, x, t, curve)? <= tube.outer())
}

/// Checks `B_{p+δ′}(y*(t)) ⊂ D_y` on the given time grid; returns the first
/// failing time.
pub fn check_tube_in_domain(
    domain: &DomainY,
    curve: &ReferenceCurve,
    tube: &TubeSpec,
    times: impl IntoIterator<Item = f64>,
) -> Result<()> {
    for t in times {
        let c = curve.eval(t);
        if !domain.contains_ball(c.as_slice(), tube.guard()) {
            return Err(Error::Precondition(format!(
                "tube of radius p + delta' = {} leaves D_y at t = {t}",
                tube.guard()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn split() -> StateSplit {
        StateSplit::new(3, 3).unwrap()
    }

    fn tube() -> TubeSpec {
        TubeSpec::new(0.5, 0.25, 0.5).unwrap()
    }

    #[test]
    fn on_curve_is_zero() {
        let c = ReferenceCurve::helix(0.2);
        let mut x = State::from_vec(vec![0.0, 0.0, 0.0, 3.0, -1.0, 7.0]);
        x.rows_mut(0, 3).copy_from(&c.eval(1.3));
        assert_eq!(tube_distance(split(), &x, 1.3, &c, &tube()).unwrap(), 0.0);
    }

    #[test]
    fn auv_initial_distance() {
        let c = ReferenceCurve::helix(0.2);
        let q = std::f64::consts::FRAC_PI_4;
        let x = State::from_vec(vec![0.0, 0.0, -1.0, q, q, q]);
        let d = tube_distance(split(), &x, 0.0, &c, &tube()).unwrap();
        // independent norm: hypot of the components (-1, 0, -1)
        let oracle = (-1.0f64).hypot(0.0).hypot(-1.0) - 0.5;
        assert_relative_eq!(d, oracle, epsilon = 1e-15);
        assert_relative_eq!(d, 0.914_213_562_373_095, epsilon = 1e-12);
    }

    #[test]
    fn boundary_cases() {
        let c = ReferenceCurve::constant(vec![0.0, 0.0, 0.0]).unwrap();
        let t = tube();
        let at = |r: f64| State::from_vec(vec![r, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(tube_distance(split(), &at(0.5), 0.0, &c, &t).unwrap(), 0.0);
        assert!(in_neighborhood(split(), &at(0.0), 0.0, &c, &t).unwrap());
        assert!(in_neighborhood(split(), &at(0.75), 0.0, &c, &t).unwrap());
        assert!(!in_neighborhood(split(), &at(0.751), 0.0, &c, &t).unwrap());
    }

    #[test]
    fn dimension_mismatch() {
        let c = ReferenceCurve::helix(0.2);
        let x = State::zeros(5);
        assert!(matches!(
            tube_distance(split(), &x, 0.0, &c, &tube()),
            Err(Error::DimensionMismatch { .. })
        ));
        let c2 = ReferenceCurve::constant(vec![0.0, 0.0]).unwrap();
        assert!(tube_distance(split(), &State::zeros(6), 0.0, &c2, &tube()).is_err());
    }

    #[test]
    fn tube_spec_validation() {
        assert!(TubeSpec::new(0.5, 0.3, 0.3).is_err());
        assert!(TubeSpec::new(0.0, 0.3, 0.4).is_err());
        assert!(TubeSpec::new(0.5, -0.1, 0.4).is_err());
    }

    #[test]
    fn domain_containment_on_grid() {
        let c = ReferenceCurve::helix(0.2);
        let t = tube();
        let grid = (0..100).map(|i| i as f64 * 0.2);
        assert!(check_tube_in_domain(&DomainY::Whole, &c, &t, grid.clone()).is_ok());
        let b = DomainY::Box {
            lower: vec![-3.0, -3.0, -3.0],
            upper: vec![3.0, 3.0, 3.0],
        };
        // the helix climbs in the second coordinate and leaves the box
        assert!(check_tube_in_domain(&b, &c, &t, grid).is_err());
    }

    proptest! {
        #[test]
        fn one_lipschitz_in_y(a in prop::array::uniform6(-3.0f64..3.0), b in prop::array::uniform3(-3.0f64..3.0), t in 0.0f64..10.0) {
            let c = ReferenceCurve::helix(0.2);
            let x = State::from_column_slice(&a);
            let mut x2 = x.clone();
            for i in 0..3 { x2[i] += b[i]; }
            let d1 = tube_distance(split(), &x, t, &c, &tube()).unwrap();
            let d2 = tube_distance(split(), &x2, t, &c, &tube()).unwrap();
            prop_assert!((d1 - d2).abs() <= State::from_column_slice(&b).norm() + 1e-12);
        }

        #[test]
        fn curve_lipschitz_transfer(a in prop::array::uniform6(-3.0f64..3.0), t in 0.0f64..10.0, s in 0.0f64..10.0) {
            let c = ReferenceCurve::helix(0.2);
            let x = State::from_column_slice(&a);
            let dt = tube_distance(split(), &x, t, &c, &tube()).unwrap();
            let ds = tube_distance(split(), &x, s, &c, &tube()).unwrap();
            prop_assert!(dt <= ds + c.lipschitz() * (t - s).abs() + 1e-12);
        }
    }
}
