//! Binary masks, score maps, and top-k selection.
//!
//! Selection order everywhere: higher score first, then lower layer index,
//! then lower position. `f64::total_cmp` gives a total order on scores.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::schedule::KeepRatioSchedule;

/// Per-layer keep flags `c_l`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mask {
    layers: Vec<Vec<bool>>,
}

impl Mask {
    pub fn new(layers: Vec<Vec<bool>>) -> Self {
        Mask { layers }
    }

    /// From 0/1 integers; anything else is rejected.
    pub fn from_bits(layers: &[&[u8]]) -> Result<Self> {
        let mut out = Vec::with_capacity(layers.len());
        for (l, layer) in layers.iter().enumerate() {
            let mut flags = Vec::with_capacity(layer.len());
            for &b in layer.iter() {
                match b {
                    0 => flags.push(false),
                    1 => flags.push(true),
                    other => {
                        return Err(Error::Domain(format!(
                            "mask entry {other} in layer {l} is not binary"
                        )))
                    }
                }
            }
            out.push(flags);
        }
        Ok(Mask { layers: out })
    }

    pub fn ones(sizes: &[usize]) -> Self {
        Mask {
            layers: sizes.iter().map(|&m| vec![true; m]).collect(),
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Mask {
            layers: sizes.iter().map(|&m| vec![false; m]).collect(),
        }
    }

    pub fn layers(&self) -> &[Vec<bool>] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &[bool] {
        &self.layers[l]
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// `‖c_l‖₀` per layer.
    pub fn kept_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|c| c.iter().filter(|&&k| k).count())
            .collect()
    }

    pub fn kept(&self) -> usize {
        self.kept_counts().iter().sum()
    }

    /// Layer `l` as a 0/1 float vector.
    pub fn factors(&self, l: usize) -> Vec<f64> {
        self.layers[l]
            .iter()
            .map(|&k| if k { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn check_aligned(&self, sizes: &[usize]) -> Result<()> {
        if self.sizes() != sizes {
            return Err(Error::Alignment(format!(
                "mask layer sizes {:?} do not match {sizes:?}",
                self.sizes()
            )));
        }
        Ok(())
    }

    /// True if every kept entry of `self` is also kept in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.sizes() == other.sizes()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.iter().zip(b).all(|(&x, &y)| !x || y))
    }

    /// Some layer keeps nothing.
    pub fn has_collapsed_layer(&self) -> bool {
        self.kept_counts().contains(&0)
    }
}

/// `p = 1 − Σ‖c_l‖₀ / Σ m_l`.
pub fn sparsity(mask: &Mask) -> f64 {
    let total = mask.total();
    if total == 0 {
        return 0.0;
    }
    1.0 - mask.kept() as f64 / total as f64
}

/// `p_l = ‖c_l‖₀ / m_l`.
pub fn keep_ratios(mask: &Mask) -> Vec<f64> {
    mask.kept_counts()
        .iter()
        .zip(mask.sizes())
        .map(|(&k, m)| if m == 0 { 0.0 } else { k as f64 / m as f64 })
        .collect()
}

/// Retained count for a target sparsity: `round((1 − p) · total)`.
pub fn budget(total: usize, target_sparsity: f64) -> usize {
    let k = libm::round((1.0 - target_sparsity) * total as f64);
    (k.max(0.0) as usize).min(total)
}

/// Per-weight importance; higher means keep.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoreMap {
    layers: Vec<Vec<f64>>,
}

impl ScoreMap {
    pub fn new(layers: Vec<Vec<f64>>) -> Result<Self> {
        if layers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score map"));
        }
        Ok(ScoreMap { layers })
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.layers[l]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }
}

fn keep_order(a: (usize, usize, f64), b: (usize, usize, f64)) -> Ordering {
    b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1))
}

/// Keeps the `k` best entries among those where `eligible` holds.
pub(crate) fn top_k_global(scores: &ScoreMap, k: usize, eligible: Option<&Mask>) -> Result<Mask> {
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(scores.total());
    for (l, layer) in scores.layers.iter().enumerate() {
        for (i, &s) in layer.iter().enumerate() {
            if eligible.is_none_or(|m| m.layers[l][i]) {
                entries.push((l, i, s));
            }
        }
    }
    if k > entries.len() {
        return Err(Error::Domain(format!(
            "cannot keep {k} of {} candidates",
            entries.len()
        )));
    }
    entries.sort_unstable_by(|a, b| keep_order(*a, *b));
    let mut mask = Mask::zeros(&scores.sizes());
    for &(l, i, _) in &entries[..k] {
        mask.layers[l][i] = true;
    }
    Ok(mask)
}

/// Keeps the `k` best entries of one layer among the eligible positions.
pub(crate) fn top_k_layer(
    scores: &[f64],
    k: usize,
    eligible: Option<&[bool]>,
) -> Result<Vec<bool>> {
    let mut idx: Vec<usize> = (0..scores.len())
        .filter(|&i| eligible.is_none_or(|e| e[i]))
        .collect();
    if k > idx.len() {
        return Err(Error::Domain(format!(
            "cannot keep {k} of {} candidates",
            idx.len()
        )));
    }
    idx.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out = vec![false; scores.len()];
    for &i in &idx[..k] {
        out[i] = true;
    }
    Ok(out)
}

/// Network-wide top-k with `k = round((1 − p) · Σ m_l)`.
pub fn mask_from_scores_global(scores: &ScoreMap, target_sparsity: f64) -> Result<Mask> {
    if !(0.0..1.0).contains(&target_sparsity) {
        return Err(Error::Domain(format!(
            "target sparsity {target_sparsity} outside [0, 1)"
        )));
    }
    let total = scores.total();
    let k = budget(total, target_sparsity);
    if k == 0 {
        return Err(Error::EmptyNetwork { total });
    }
    top_k_global(scores, k, None)
}

/// Per-layer top-`quota(l)` selection.
pub fn mask_from_scores_layerwise(scores: &ScoreMap, schedule: &KeepRatioSchedule) -> Result<Mask> {
    if schedule.sizes() != scores.sizes().as_slice() {
        return Err(Error::Alignment(format!(
            "schedule sizes {:?} do not match scores {:?}",
            schedule.sizes(),
            scores.sizes()
        )));
    }
    let layers = scores
        .layers
        .iter()
        .zip(schedule.quotas())
        .map(|(s, &q)| top_k_layer(s, q, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(Mask::new(layers))
}
