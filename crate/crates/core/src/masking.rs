//! Random and top-k selective masking of client parameter updates.
//!
//! A mask keeps exactly `k = round_half_up(gamma * numel)` entries per layer.
//! Selective masks keep the entries with the largest absolute change between
//! the downloaded and the locally trained layer, ties resolved to the lowest
//! row-major index. Untransmitted entries are either zeroed (the literal
//! masked-product reading) or restored from the server's copy of the global
//! layer (the sparse-delta reading); both fill modes are first-class because
//! they lead to very different training dynamics at small keep fractions.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::{Matrix, ParamSet};
use crate::rng::mix64;
use crate::sampling::round_half_up;

/// What the receiver assumes for entries that were not transmitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFill {
    /// Untransmitted entries become zero.
    Zero,
    /// Untransmitted entries keep the global model's value.
    ServerFill,
}

/// Per-client upload masking policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MaskingPolicy {
    None,
    Random { keep_fraction: f64, fill: MaskFill },
    Selective { keep_fraction: f64, fill: MaskFill },
}

impl MaskingPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MaskingPolicy::None => Ok(()),
            MaskingPolicy::Random { keep_fraction, .. }
            | MaskingPolicy::Selective { keep_fraction, .. } => {
                if (0.0..=1.0).contains(&keep_fraction) {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!(
                        "masking.gamma must lie in [0, 1], got {keep_fraction}"
                    )))
                }
            }
        }
    }
}

/// Kept-entry set for one layer, flat row-major indices in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMask {
    rows: usize,
    cols: usize,
    kept: Vec<usize>,
}

impl LayerMask {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn k(&self) -> usize {
        self.kept.len()
    }
}

/// Kept-entry count for a keep fraction: half-up rounding of
/// `gamma * numel`, clamped to `[0, numel]`.
pub fn keep_count(keep_fraction: f64, numel: usize) -> usize {
    (round_half_up(keep_fraction * numel as f64) as usize).min(numel)
}

/// Exactly `k` kept indices drawn uniformly without replacement.
pub fn random_mask(rows: usize, cols: usize, keep_fraction: f64, seed: u64) -> LayerMask {
    let numel = rows * cols;
    let k = keep_count(keep_fraction, numel);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = rand::seq::index::sample(&mut rng, numel, k).into_vec();
    kept.sort_unstable();
    LayerMask { rows, cols, kept }
}

/// Kept indices are the `k` entries with the largest `|new - old|`, ties to
/// the lowest row-major index. Fully deterministic, no RNG.
pub fn selective_mask(w_old: &Matrix, w_new: &Matrix, keep_fraction: f64) -> Result<LayerMask> {
    w_old.ensure_same_shape(w_new)?;
    let numel = w_old.numel();
    let k = keep_count(keep_fraction, numel);
    let diffs: Vec<f64> = w_old
        .values()
        .iter()
        .zip(w_new.values())
        .map(|(&o, &n)| (n - o).abs())
        .collect();
    let mut order: Vec<usize> = (0..numel).collect();
    order.sort_unstable_by(|&a, &b| diffs[b].total_cmp(&diffs[a]).then(a.cmp(&b)));
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    Ok(LayerMask {
        rows: w_old.rows(),
        cols: w_old.cols(),
        kept,
    })
}

/// Rebuild the layer the server ends up with: kept entries from `w_new`,
/// the rest zero or taken from `w_global` depending on the fill mode.
pub fn apply_mask(
    w_new: &Matrix,
    mask: &LayerMask,
    fill: MaskFill,
    w_global: Option<&Matrix>,
) -> Result<Matrix> {
    if w_new.rows() != mask.rows || w_new.cols() != mask.cols {
        return Err(Error::DimMismatch {
            left_rows: w_new.rows(),
            left_cols: w_new.cols(),
            right_rows: mask.rows,
            right_cols: mask.cols,
        });
    }
    let mut out = match fill {
        MaskFill::Zero => Matrix::zeros(w_new.rows(), w_new.cols()),
        MaskFill::ServerFill => {
            let global = w_global.ok_or_else(|| {
                Error::InvalidConfig("server-fill masking requires the global layer".into())
            })?;
            w_new.ensure_same_shape(global)?;
            global.clone()
        }
    };
    let values = out.values_mut();
    for &idx in &mask.kept {
        values[idx] = w_new.values()[idx];
    }
    Ok(out)
}

/// Mask every layer of a trained model against the model it started from.
/// Returns the upload the server receives and the scalar count actually
/// transmitted.
pub fn mask_model(
    old: &ParamSet,
    new: &ParamSet,
    policy: &MaskingPolicy,
    seed: u64,
) -> Result<(ParamSet, u64)> {
    old.ensure_compatible(new)?;
    match *policy {
        MaskingPolicy::None => Ok((new.clone(), new.numel() as u64)),
        MaskingPolicy::Random {
            keep_fraction,
            fill,
        } => {
            let mut transmitted = 0u64;
            let mut layers = Vec::with_capacity(new.num_layers());
            for (layer_idx, ((name, w_old), (_, w_new))) in
                old.layers().iter().zip(new.layers()).enumerate()
            {
                let mask = random_mask(
                    w_new.rows(),
                    w_new.cols(),
                    keep_fraction,
                    mix64(&[seed, layer_idx as u64]),
                );
                transmitted += mask.k() as u64;
                layers.push((name.clone(), apply_mask(w_new, &mask, fill, Some(w_old))?));
            }
            Ok((ParamSet::new(layers)?, transmitted))
        }
        MaskingPolicy::Selective {
            keep_fraction,
            fill,
        } => {
            let mut transmitted = 0u64;
            let mut layers = Vec::with_capacity(new.num_layers());
            for ((name, w_old), (_, w_new)) in old.layers().iter().zip(new.layers()) {
                let mask = selective_mask(w_old, w_new, keep_fraction)?;
                transmitted += mask.k() as u64;
                layers.push((name.clone(), apply_mask(w_new, &mask, fill, Some(w_old))?));
            }
            Ok((ParamSet::new(layers)?, transmitted))
        }
    }
}
