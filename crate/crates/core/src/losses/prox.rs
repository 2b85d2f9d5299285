// SPDX-License-Identifier: Apache-2.0

use crate::error::Result;
use crate::nn::{ModelWeights, Scalar};

/// `(mu / 2) ||local - global||^2` and its gradient `mu (local - global)`.
pub fn prox_term<T: Scalar>(
    local: &ModelWeights<T>,
    global: &ModelWeights<T>,
    mu: f64,
) -> Result<(f64, ModelWeights<T>)> {
    let value = 0.5 * mu * local.sq_distance(global)?;
    let mut grad = local.clone();
    let m = T::from_f64(mu);
    grad.zip_apply(global, |w, g| *w = m * (*w - g))?;
    Ok((value, grad))
}
