//! Exact Shapley attribution by subset enumeration.

use serde::{Deserialize, Serialize};

use super::{FeatureModel, XaiError};

/// Largest feature count accepted for exact enumeration (2^16 coalitions).
pub const MAX_EXACT_FEATURES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub feature: String,
    pub phi: f64,
    pub baseline_value: f64,
    pub actual_value: f64,
}

/// Shapley values of a coalition game with `n` players.
///
/// `value(mask)` is the worth of the coalition whose members are the set bits
/// of `mask`. Every one of the `2^n` coalitions is evaluated exactly once.
pub fn shapley_values(n: usize, value: impl Fn(u32) -> f64) -> Result<Vec<f64>, XaiError> {
    if n > MAX_EXACT_FEATURES {
        return Err(XaiError::TooManyFeatures(n));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let full = 1u32 << n;
    let worth: Vec<f64> = (0..full).map(&value).collect();

    // weight[s] = s! (n - s - 1)! / n! = 1 / (n * C(n - 1, s))
    let mut weight = vec![0.0; n];
    let mut binom = 1.0f64;
    for (s, w) in weight.iter_mut().enumerate() {
        *w = 1.0 / (n as f64 * binom);
        binom = binom * (n - 1 - s) as f64 / (s + 1) as f64;
    }

    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u32 << i;
        let mut acc = 0.0;
        for mask in 0..full {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            acc += weight[s] * (worth[(mask | bit) as usize] - worth[mask as usize]);
        }
        *p = acc;
    }
    Ok(phi)
}

/// Attributes `model(x) - model(baseline)` to the individual features.
///
/// A coalition keeps its members at their `x` value and the rest at
/// `baseline`.
pub fn shapley(model: &dyn FeatureModel, x: &[f64], baseline: &[f64]) -> Result<Vec<Attribution>, XaiError> {
    let names = model.feature_names();
    let n = names.len();
    if x.len() != n || baseline.len() != n {
        return Err(XaiError::DimensionMismatch { expected: n, got: x.len().max(baseline.len()) });
    }
    let phi = shapley_values(n, |mask| {
        let point: Vec<f64> = (0..n).map(|i| if mask & (1 << i) != 0 { x[i] } else { baseline[i] }).collect();
        model.predict(&point)
    })?;
    Ok(names
        .into_iter()
        .zip(phi)
        .enumerate()
        .map(|(i, (feature, phi))| Attribution { feature, phi, baseline_value: baseline[i], actual_value: x[i] })
        .collect())
}
