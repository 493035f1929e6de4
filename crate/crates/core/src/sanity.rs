//! Sanity checks for pruning methods.
//!
//! Data corruptions replace what the pruning step sees (labels, pixel order,
//! half of the samples). Structural attacks scramble a finished ticket while
//! preserving its per-layer keep counts. All permutations are Fisher-Yates
//! draws from the caller's generator.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::criteria::random_layer;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::model::LayeredParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Check {
    RandomLabels,
    RandomPixels,
    HalfData,
    CorruptBoth,
    Rearrange,
    ShuffleWeights,
}

impl Check {
    pub const ALL: [Check; 6] = [
        Check::RandomLabels,
        Check::RandomPixels,
        Check::HalfData,
        Check::CorruptBoth,
        Check::Rearrange,
        Check::ShuffleWeights,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Check::RandomLabels => "random-labels",
            Check::RandomPixels => "random-pixels",
            Check::HalfData => "half-data",
            Check::CorruptBoth => "corrupt-both",
            Check::Rearrange => "rearrange",
            Check::ShuffleWeights => "shuffle-weights",
        }
    }

    /// Applied to the data of the pruning step (as opposed to the ticket).
    pub fn is_data_corruption(&self) -> bool {
        matches!(
            self,
            Check::RandomLabels | Check::RandomPixels | Check::HalfData | Check::CorruptBoth
        )
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Schema(format!("unknown check {s:?}")))
    }
}

/// Replace every label with an independent uniform draw over the classes.
pub fn corrupt_labels<R: Rng + ?Sized>(data: &Dataset, rng: &mut R) -> Result<Dataset> {
    let c = data.class_count();
    if c < 2 {
        return Err(Error::Domain(format!(
            "random labels need at least 2 classes, got {c}"
        )));
    }
    let labels = (0..data.len()).map(|_| rng.random_range(0..c)).collect();
    Ok(data.with_labels(labels))
}

/// Permute the flattened values of each sample independently.
pub fn corrupt_pixels<R: Rng + ?Sized>(data: &Dataset, rng: &mut R) -> Result<Dataset> {
    if data.is_empty() {
        return Err(Error::Domain("random pixels on an empty dataset".into()));
    }
    let mut features = data.features().to_vec();
    for sample in features.chunks_exact_mut(data.dim()) {
        sample.shuffle(rng);
    }
    Ok(data.with_features(features))
}

/// `⌊n/2⌋` pairs drawn uniformly without replacement, in original order.
pub fn half_dataset<R: Rng + ?Sized>(data: &Dataset, rng: &mut R) -> Result<Dataset> {
    let n = data.len();
    if n < 2 {
        return Err(Error::TooSmall { n });
    }
    let mut idx = index::sample(rng, n, n / 2).into_vec();
    idx.sort_unstable();
    data.subset(&idx)
}

/// Random labels followed by random pixels, each from its own generator.
pub fn corrupt_both<R: Rng + ?Sized, S: Rng + ?Sized>(
    data: &Dataset,
    label_rng: &mut R,
    pixel_rng: &mut S,
) -> Result<Dataset> {
    corrupt_pixels(&corrupt_labels(data, label_rng)?, pixel_rng)
}

/// Re-place each layer's kept entries uniformly at random, keeping counts.
pub fn rearrange_mask_layerwise<R: Rng + ?Sized>(mask: &Mask, rng: &mut R) -> Mask {
    let layers = mask
        .layers()
        .iter()
        .zip(mask.kept_counts())
        .map(|(layer, k)| random_layer(layer.len(), k, rng))
        .collect();
    Mask::new(layers)
}

/// Permute, within each layer, the weights sitting at kept positions.
/// Pruned positions and the mask itself are untouched.
pub fn shuffle_unmasked_weights<R: Rng + ?Sized>(
    params: &LayeredParams,
    mask: &Mask,
    rng: &mut R,
) -> Result<LayeredParams> {
    mask.check_aligned(&params.layer_sizes())?;
    let mut layers: Vec<Vec<f64>> = params.layers().to_vec();
    for (w, c) in layers.iter_mut().zip(mask.layers()) {
        let positions: Vec<usize> = (0..c.len()).filter(|&i| c[i]).collect();
        let mut values: Vec<f64> = positions.iter().map(|&i| w[i]).collect();
        values.shuffle(rng);
        for (&i, v) in positions.iter().zip(values) {
            w[i] = v;
        }
    }
    params.with_layers(layers)
}
