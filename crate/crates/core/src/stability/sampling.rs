//! Seeded low-discrepancy sampling of the working region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::curve::ReferenceCurve;
use crate::error::{Error, Result};
use crate::system::{State, StateSplit};

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut c = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Halton sequence with a Cranley–Patterson rotation drawn from `seed`.
///
/// The `i`-th point depends only on `i`, `dim` and `seed`, so the first `N`
/// points are a prefix of the first `2N`.
#[derive(Debug, Clone)]
pub struct Halton {
    bases: Vec<u64>,
    shift: Vec<f64>,
}

impl Halton {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            bases: primes(dim),
            shift: (0..dim).map(|_| rng.random::<f64>()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.bases.len()
    }

    pub fn point(&self, index: u64) -> Vec<f64> {
        self.bases
            .iter()
            .zip(&self.shift)
            .map(|(&b, &s)| (radical_inverse(index + 1, b) + s).fract())
            .collect()
    }
}

/// A sampled `(t, x)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SamplePoint {
    pub t: f64,
    pub x: Vec<f64>,
}

/// Draws `count` points `(t, x)` with `t ∈ [0, t_probe]`, `y` in the closed
/// ball of radius `radius` around `y*(t)` and `z` in `z_box`.
///
/// The ball is sampled by rejection from its bounding cube, index by index,
/// so the prefix property of [`Halton`] carries over.
pub fn region_samples(
    split: StateSplit,
    curve: &ReferenceCurve,
    radius: f64,
    z_box: &[(f64, f64)],
    t_probe: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<SamplePoint>> {
    if z_box.len() != split.n2() {
        return Err(Error::DimensionMismatch {
            what: "z box",
            expected: split.n2(),
            found: z_box.len(),
        });
    }
    if let Some(&(lo, hi)) = z_box.iter().find(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(Error::invalid(format!("z box interval [{lo}, {hi}] is not a finite interval")));
    }
    if !(t_probe >= 0.0 && t_probe.is_finite()) {
        return Err(Error::invalid(format!("probe horizon must be non-negative, got {t_probe}")));
    }
    let n1 = split.n1();
    let halton = Halton::new(1 + n1 + split.n2(), seed);
    let mut out = Vec::with_capacity(count);
    let mut index = 0u64;
    while out.len() < count {
        let u = halton.point(index);
        index += 1;
        let v: Vec<f64> = u[1..=n1].iter().map(|c| 2.0 * c - 1.0).collect();
        if v.iter().map(|c| c * c).sum::<f64>() > 1.0 {
            continue;
        }
        let t = u[0] * t_probe;
        let ystar = curve.eval(t);
        let mut x = State::zeros(split.n());
        for i in 0..n1 {
            x[i] = ystar[i] + radius * v[i];
        }
        for (j, &(lo, hi)) in z_box.iter().enumerate() {
            x[n1 + j] = lo + (hi - lo) * u[1 + n1 + j];
        }
        out.push(SamplePoint {
            t,
            x: x.iter().copied().collect(),
        });
    }
    Ok(out)
}

/// Initial conditions at `t0` with `‖y − y*(t0)‖` uniform in `[r_min, r_max]`,
/// uniformly distributed directions and `z` uniform in `z_box`.
pub fn initial_conditions(
    split: StateSplit,
    curve: &ReferenceCurve,
    t0: f64,
    r_min: f64,
    r_max: f64,
    z_box: &[(f64, f64)],
    count: usize,
    seed: u64,
) -> Result<Vec<State>> {
    if z_box.len() != split.n2() {
        return Err(Error::DimensionMismatch {
            what: "z box",
            expected: split.n2(),
            found: z_box.len(),
        });
    }
    if !(0.0 <= r_min && r_min <= r_max && r_max.is_finite()) {
        return Err(Error::invalid(format!("radius range [{r_min}, {r_max}] is invalid")));
    }
    let n1 = split.n1();
    let ystar = curve.eval(t0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let dir: Vec<f64> = (0..n1).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1.0 || norm < 1e-3 {
            continue;
        }
        let r = rng.random_range(r_min..=r_max);
        let mut x = State::zeros(split.n());
        for i in 0..n1 {
            x[i] = ystar[i] + r * dir[i] / norm;
        }
        for (j, &(lo, hi)) in z_box.iter().enumerate() {
            x[n1 + j] = if lo < hi { rng.random_range(lo..hi) } else { lo };
        }
        out.push(x);
    }
    Ok(out)
}
