// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ModelWeights, Scalar};

/// How uploads are averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Unweighted mean over the clients that trained.
    #[default]
    Simple,
    /// Mean weighted by each client's example count.
    BySamples,
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Weighting::Simple),
            "by-samples" => Ok(Weighting::BySamples),
            _ => Err(Error::config(format!(
                "unknown weighting {s:?} (expected simple or by-samples)"
            ))),
        }
    }
}

impl std::fmt::Display for Weighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Weighting::Simple => "simple",
            Weighting::BySamples => "by-samples",
        })
    }
}

/// Averages `uploads` in the given order, accumulating in `f64`.
///
/// `samples[i]` is the example count behind `uploads[i]`; only
/// [`Weighting::BySamples`] reads it.
pub fn aggregate<T: Scalar>(
    uploads: &[&ModelWeights<T>],
    samples: &[usize],
    weighting: Weighting,
) -> Result<ModelWeights<T>> {
    let first = *uploads
        .first()
        .ok_or_else(|| Error::Internal("aggregate of zero uploads".into()))?;
    if samples.len() != uploads.len() {
        return Err(Error::Shape(format!(
            "{} sample counts for {} uploads",
            samples.len(),
            uploads.len()
        )));
    }
    for u in &uploads[1..] {
        first.check_compatible(u)?;
    }
    let coeffs: Vec<f64> = match weighting {
        Weighting::Simple => vec![1.0 / uploads.len() as f64; uploads.len()],
        Weighting::BySamples => {
            let total: usize = samples.iter().sum();
            if total == 0 {
                return Err(Error::Internal("by-samples aggregation with zero examples".into()));
            }
            samples.iter().map(|&n| n as f64 / total as f64).collect()
        }
    };

    let mut out = first.zeros_like();
    let mut acc: Vec<f64> = Vec::new();
    for (p, slot) in out.params_mut().enumerate() {
        acc.clear();
        acc.resize(slot.len(), 0.0);
        for (u, &c) in uploads.iter().zip(&coeffs) {
            let src = u.params().nth(p).expect("compatible");
            for (a, &v) in acc.iter_mut().zip(src.data()) {
                *a += c * v.as_f64();
            }
        }
        for (d, &a) in slot.data_mut().iter_mut().zip(&acc) {
            *d = T::from_f64(a);
        }
    }
    Ok(out)
}

/// Server momentum on the aggregated model.
///
/// With `delta = global - aggregated`, updates `buffer = m * buffer + delta`
/// and returns `global - buffer`. `m == 0` returns `aggregated` exactly and
/// leaves `buffer` untouched.
pub fn server_momentum_step<T: Scalar>(
    global: &ModelWeights<T>,
    aggregated: &ModelWeights<T>,
    buffer: &mut Option<ModelWeights<T>>,
    m: f64,
) -> Result<ModelWeights<T>> {
    global.check_compatible(aggregated)?;
    if m == 0.0 {
        return Ok(aggregated.clone());
    }
    let buf = buffer.get_or_insert_with(|| global.zeros_like());
    buf.check_compatible(global)?;
    let m = T::from_f64(m);
    let mut next = global.clone();
    for ((b, g), a) in buf.params_mut().zip(global.params()).zip(aggregated.params()) {
        for ((b, &g), &a) in b.data_mut().iter_mut().zip(g.data()).zip(a.data()) {
            *b = m * *b + (g - a);
        }
    }
    next.zip_apply(buf, |w, b| *w = *w - b)?;
    Ok(next)
}
