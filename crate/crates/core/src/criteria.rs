//! Pruning criteria. All scores follow the keep-priority convention: the
//! higher the score, the more the weight deserves to survive.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gradcheck::hessian_vector_product;
use crate::mask::{Mask, ScoreMap};
use crate::model::{loss_and_gradient, Head, LayeredParams};
use crate::schedule::KeepRatioSchedule;

/// Step used for the finite-difference Hessian-vector product in GraSP.
pub const GRASP_HVP_EPSILON: f64 = 1e-4;

/// Samples used to score a network at initialisation.
pub const SCORE_BATCH_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Criterion {
    Magnitude,
    Snip,
    Grasp,
    Random,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::Magnitude,
        Criterion::Snip,
        Criterion::Grasp,
        Criterion::Random,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Magnitude => "magnitude",
            Criterion::Snip => "snip",
            Criterion::Grasp => "grasp",
            Criterion::Random => "random",
        }
    }
}

impl core::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Schema(format!("unknown criterion {s:?}")))
    }
}

/// `|w|`.
pub fn magnitude_scores(params: &LayeredParams) -> ScoreMap {
    let layers = params
        .layers()
        .iter()
        .map(|w| w.iter().map(|v| v.abs()).collect())
        .collect();
    ScoreMap::new(layers).expect("params are finite")
}

/// Connection sensitivity `|g ⊙ w|` with `g` the batch-mean loss gradient.
pub fn snip_scores(params: &LayeredParams, mask: &Mask, batch: &Dataset) -> Result<ScoreMap> {
    snip_scores_with(params, mask, batch, Head::SoftmaxCrossEntropy)
}

pub fn snip_scores_with(
    params: &LayeredParams,
    mask: &Mask,
    batch: &Dataset,
    head: Head,
) -> Result<ScoreMap> {
    let (_, grad) = loss_and_gradient(params, mask, batch, head)?;
    let layers = grad
        .iter()
        .zip(params.layers())
        .map(|(g, w)| g.iter().zip(w).map(|(g, w)| (g * w).abs()).collect())
        .collect();
    ScoreMap::new(layers)
}

/// GraSP's raw score `−w ⊙ (H g)`; weights with the highest raw score are
/// the first to go.
pub fn grasp_raw_scores(
    params: &LayeredParams,
    mask: &Mask,
    batch: &Dataset,
    head: Head,
) -> Result<Vec<Vec<f64>>> {
    let (_, grad) = loss_and_gradient(params, mask, batch, head)?;
    if grad.iter().flatten().all(|&g| g == 0.0) {
        return Err(Error::DegenerateFlow);
    }
    let hg = hessian_vector_product(params, mask, batch, &grad, GRASP_HVP_EPSILON, head)?;
    Ok(hg
        .iter()
        .zip(params.layers())
        .map(|(hg, w)| hg.iter().zip(w).map(|(h, w)| -(w * h)).collect())
        .collect())
}

/// Keep-priority `w ⊙ (H g)`, the negated raw GraSP score.
pub fn grasp_scores(params: &LayeredParams, mask: &Mask, batch: &Dataset) -> Result<ScoreMap> {
    grasp_scores_with(params, mask, batch, Head::SoftmaxCrossEntropy)
}

pub fn grasp_scores_with(
    params: &LayeredParams,
    mask: &Mask,
    batch: &Dataset,
    head: Head,
) -> Result<ScoreMap> {
    let raw = grasp_raw_scores(params, mask, batch, head)?;
    ScoreMap::new(
        raw.into_iter()
            .map(|l| l.into_iter().map(|s| -s).collect())
            .collect(),
    )
}

/// Uniformly random placement of `quota(l)` ones in each layer.
pub fn random_mask_from_schedule<R: Rng + ?Sized>(
    schedule: &KeepRatioSchedule,
    sizes: &[usize],
    rng: &mut R,
) -> Result<Mask> {
    if schedule.sizes() != sizes {
        return Err(Error::Alignment(format!(
            "schedule sizes {:?} do not match {sizes:?}",
            schedule.sizes()
        )));
    }
    let layers = sizes
        .iter()
        .zip(schedule.quotas())
        .map(|(&m, &q)| random_layer(m, q, rng))
        .collect();
    Ok(Mask::new(layers))
}

pub(crate) fn random_layer<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> Vec<bool> {
    let mut layer = alloc::vec![false; m];
    for i in index::sample(rng, m, k) {
        layer[i] = true;
    }
    layer
}

/// Indices of the scoring batch: `SCORE_BATCH_SIZE` distinct samples drawn
/// uniformly, or every sample when the data is smaller. Returned sorted.
pub fn score_batch_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    if n <= SCORE_BATCH_SIZE {
        return (0..n).collect();
    }
    let mut idx = index::sample(rng, n, SCORE_BATCH_SIZE).into_vec();
    idx.sort_unstable();
    idx
}
