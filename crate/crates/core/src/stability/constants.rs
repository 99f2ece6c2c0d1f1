//! Sampling-based estimates of the bounds assumed on the working region
//! `D′ = {‖y − y*(t)‖ ≤ p + δ′} × z_box`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampling::{region_samples, SamplePoint};
use crate::curve::ReferenceCurve;
use crate::error::{Error, Result};
use crate::lie::{assemble_f, task_derivative, task_second_derivative, IndexSets};
use crate::system::{drift_time_derivative, jacobian, ControlAffineSystem, Field, State};
use crate::tube::TubeSpec;

/// Smallest admissible `sample_count`.
pub const MIN_SAMPLES: usize = 100;

/// Estimated constants. Every sampled constant has its argmax in `argmax`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProofConstants {
    pub m_g: f64,
    pub m_h: f64,
    pub m_g0: f64,
    pub m_h0: f64,
    pub l_g: f64,
    pub l_h: f64,
    pub l_g0: f64,
    pub l_h0: f64,
    pub m_g2: f64,
    pub m_g20: f64,
    pub l_g20: f64,
    pub m_g3: f64,
    pub m_g30: f64,
    /// `sup ‖F⁻¹‖`.
    pub mu: f64,
    pub l_star: f64,
    /// Smallest singular value of `F` over the samples.
    pub sigma_min_f: f64,
    pub sample_count: usize,
    #[serde(default)]
    pub argmax: BTreeMap<String, SamplePoint>,
}

const NAMES: [&str; 14] = [
    "m_g", "m_h", "m_g0", "m_h0", "l_g", "l_h", "l_g0", "l_h0", "m_g2", "m_g20", "l_g20", "m_g3", "m_g30", "mu",
];
const L_G: usize = 4;
const L_H: usize = 5;
const L_G0: usize = 6;
const L_H0: usize = 7;
const MU: usize = 13;

/// Per-sample values in `NAMES` order plus the field values used for
/// difference quotients.
struct Local {
    values: [f64; 14],
    sigma_min: f64,
    fields: Vec<State>,
    drift_here: State,
}

fn spectral_norm(m: DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

fn evaluate<S: ControlAffineSystem + ?Sized>(sys: &S, sets: &IndexSets, s: &SamplePoint) -> Result<Local> {
    let split = sys.split();
    let (n1, n2, m) = (split.n1(), split.n2(), sys.num_controls());
    let x = State::from_column_slice(&s.x);
    let t = s.t;
    sys.check_domain(&x)?;
    let mut v = [0.0f64; 14];

    let fields: Vec<State> = (0..m).map(|k| sys.field(k, &x)).collect();
    for f in &fields {
        v[0] = v[0].max(f.rows(0, n1).norm());
        v[1] = v[1].max(f.rows(n1, n2).norm());
    }
    let f0 = sys.drift(t, &x);
    v[2] = f0.rows(0, n1).norm();
    v[3] = f0.rows(n1, n2).norm();

    for k in 0..m {
        let j = jacobian(sys, Field::Control(k), t, &x)?;
        v[L_G] = v[L_G].max(spectral_norm(j.rows(0, n1).into_owned()));
        v[L_H] = v[L_H].max(spectral_norm(j.rows(n1, n2).into_owned()));
    }
    let j0 = jacobian(sys, Field::Drift, t, &x)?;
    v[L_G0] = spectral_norm(j0.rows(0, n1).into_owned());
    v[L_H0] = spectral_norm(j0.rows(n1, n2).into_owned());

    let controls: Vec<Field> = (0..m).map(Field::Control).collect();
    for &k1 in &controls {
        for &k2 in &controls {
            v[8] = v[8].max(task_derivative(sys, k2, k1, t, &x)?.norm());
            v[12] = v[12].max(task_second_derivative(sys, Field::Drift, k2, k1, t, &x)?.norm());
            for &k3 in &controls {
                v[11] = v[11].max(task_second_derivative(sys, k3, k2, k1, t, &x)?.norm());
            }
        }
    }
    v[9] = task_derivative(sys, Field::Drift, Field::Drift, t, &x)?.norm();
    for &k in &controls {
        v[9] = v[9]
            .max(task_derivative(sys, k, Field::Drift, t, &x)?.norm())
            .max(task_derivative(sys, Field::Drift, k, t, &x)?.norm());
    }
    v[10] = drift_time_derivative(sys, t, &x).rows(0, n1).norm();

    let f = assemble_f(sys, sets, &x)?;
    let sigma_min = f.singular_values().min();
    v[MU] = 1.0 / sigma_min;

    if let Some(i) = v.iter().position(|c| !c.is_finite()) {
        return Err(Error::Domain {
            x: s.x.clone(),
            reason: format!("{} is not finite at t = {}", NAMES[i], t),
        });
    }
    Ok(Local {
        values: v,
        sigma_min,
        fields,
        drift_here: f0,
    })
}

fn quotient(a: &State, b: &State, xa: &[f64], xb: &[f64]) -> f64 {
    let dx: f64 = xa.iter().zip(xb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    if dx == 0.0 {
        0.0
    } else {
        (a - b).norm() / dx
    }
}

/// Estimates the constants over `[0, t_probe] × D′` from `sample_count`
/// quasi-random points.
///
/// Sup-norms are sample maxima. Lipschitz constants combine the spectral norm
/// of the Jacobian at each sample with difference quotients over consecutive
/// sample pairs. Any evaluation failure is reported with its sample point.
#[allow(clippy::too_many_arguments)]
pub fn estimate_constants<S: ControlAffineSystem + ?Sized>(
    sys: &S,
    sets: &IndexSets,
    curve: &ReferenceCurve,
    tube: &TubeSpec,
    z_box: &[(f64, f64)],
    sample_count: usize,
    seed: u64,
    t_probe: f64,
) -> Result<ProofConstants> {
    if sample_count < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "sample_count must be at least {MIN_SAMPLES}, got {sample_count}"
        )));
    }
    tube.validate()?;
    let split = sys.split();
    let samples = region_samples(split, curve, tube.guard(), z_box, t_probe, sample_count, seed)?;
    let locals: Vec<Result<Local>> = samples
        .par_iter()
        .map(|s| {
            evaluate(sys, sets, s).map_err(|e| match e {
                Error::Domain { .. } => e,
                other => Error::Domain {
                    x: s.x.clone(),
                    reason: format!("evaluation failed at t = {}: {other}", s.t),
                },
            })
        })
        .collect();
    let locals: Vec<Local> = locals.into_iter().collect::<Result<_>>()?;

    let mut best = [0.0f64; 14];
    let mut arg = [0usize; 14];
    let mut sigma_min = f64::INFINITY;
    let mut bump = |i: usize, value: f64, at: usize, best: &mut [f64; 14]| {
        if value > best[i] {
            best[i] = value;
            arg[i] = at;
        }
    };
    for (idx, l) in locals.iter().enumerate() {
        for i in 0..14 {
            bump(i, l.values[i], idx, &mut best);
        }
        sigma_min = sigma_min.min(l.sigma_min);
    }
    let n1 = split.n1();
    for idx in 0..locals.len().saturating_sub(1) {
        let (a, b) = (&locals[idx], &locals[idx + 1]);
        let (xa, xb) = (&samples[idx].x, &samples[idx + 1].x);
        for (fa, fb) in a.fields.iter().zip(&b.fields) {
            bump(L_G, quotient(&fa.rows(0, n1).into_owned(), &fb.rows(0, n1).into_owned(), xa, xb), idx, &mut best);
            bump(L_H, quotient(&fa.rows(n1, split.n2()).into_owned(), &fb.rows(n1, split.n2()).into_owned(), xa, xb), idx, &mut best);
        }
        let t = samples[idx].t;
        let other = sys.drift(t, &State::from_column_slice(xb));
        let here = &a.drift_here;
        bump(L_G0, quotient(&here.rows(0, n1).into_owned(), &other.rows(0, n1).into_owned(), xa, xb), idx, &mut best);
        bump(L_H0, quotient(&here.rows(n1, split.n2()).into_owned(), &other.rows(n1, split.n2()).into_owned(), xa, xb), idx, &mut best);
    }

    let argmax = NAMES
        .iter()
        .enumerate()
        .filter(|&(i, _)| best[i] > 0.0)
        .map(|(i, name)| (name.to_string(), samples[arg[i]].clone()))
        .collect();
    Ok(ProofConstants {
        m_g: best[0],
        m_h: best[1],
        m_g0: best[2],
        m_h0: best[3],
        l_g: best[L_G],
        l_h: best[L_H],
        l_g0: best[L_G0],
        l_h0: best[L_H0],
        m_g2: best[8],
        m_g20: best[9],
        l_g20: best[10],
        m_g3: best[11],
        m_g30: best[12],
        mu: best[MU],
        l_star: curve.lipschitz(),
        sigma_min_f: sigma_min,
        sample_count,
        argmax,
    })
}

impl ProofConstants {
    /// The constants as `(name, value)` pairs, in a fixed order.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("m_g", self.m_g),
            ("m_h", self.m_h),
            ("m_g0", self.m_g0),
            ("m_h0", self.m_h0),
            ("l_g", self.l_g),
            ("l_h", self.l_h),
            ("l_g0", self.l_g0),
            ("l_h0", self.l_h0),
            ("m_g2", self.m_g2),
            ("m_g20", self.m_g20),
            ("l_g20", self.l_g20),
            ("m_g3", self.m_g3),
            ("m_g30", self.m_g30),
            ("mu", self.mu),
            ("l_star", self.l_star),
        ]
    }
}
