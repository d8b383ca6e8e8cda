//! Local Moran's I and its per-batch ("shuffled") use as an auxiliary target.

use crate::error::{Error, Result};
use crate::geo::{row_standardize, SpatialGraph};
use crate::sparse::CooMatrix;

/// Below this total squared deviation the input counts as constant.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MoranResult {
    pub values: Vec<f64>,
    pub weights: CooMatrix,
    /// Set when `y` was constant and every value was forced to zero.
    pub degenerate: bool,
}

/// Local Moran's I with the global mean:
/// `I_i = (n−1)·(y_i−ȳ) / Σ_j(y_j−ȳ)² · Σ_{j≠i} w_ij(y_j−ȳ)`.
pub fn local_moran(y: &[f64], weights: &CooMatrix) -> Result<MoranResult> {
    let n = y.len();
    if n < 2 {
        return Err(Error::InsufficientPoints { needed: 2, got: n });
    }
    if weights.n() != n {
        return Err(Error::dim("local_moran", &[n], &[weights.n(), weights.n()]));
    }
    if let Some((i, _, v)) = weights.iter().find(|&(r, c, v)| r == c && v != 0.0) {
        return Err(Error::Contract(format!(
            "spatial weights have nonzero diagonal entry {v} at node {i}"
        )));
    }
    if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite value {bad} in y")));
    }

    let mean = y.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let ss: f64 = dev.iter().map(|d| d * d).sum();
    if ss < DEGENERATE_VARIANCE {
        return Ok(MoranResult {
            values: vec![0.0; n],
            weights: weights.clone(),
            degenerate: true,
        });
    }

    let mut lag = vec![0.0; n];
    for (r, c, w) in weights.iter() {
        lag[r] += w * dev[c];
    }
    let scale = (n - 1) as f64 / ss;
    let values = dev.iter().zip(&lag).map(|(d, l)| scale * d * l).collect();
    Ok(MoranResult {
        values,
        weights: weights.clone(),
        degenerate: false,
    })
}

/// Moran target for one batch: row-standardizes the batch graph and evaluates
/// local Moran's I of the batch outcomes on it.
pub fn batch_moran_target(batch_y: &[f64], batch_graph: &SpatialGraph) -> Result<Vec<f64>> {
    if batch_graph.n() != batch_y.len() {
        return Err(Error::dim(
            "batch_moran_target",
            &[batch_y.len()],
            &[batch_graph.n()],
        ));
    }
    Ok(local_moran(batch_y, &row_standardize(batch_graph))?.values)
}
