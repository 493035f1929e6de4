//! Layered networks without biases: `f(c₁⊙w₁, …, c_L⊙w_L; x)`.
//!
//! Dense weights are stored `[fan_in, fan_out]` row-major, conv kernels
//! `[fan_out, fan_in, kh, kw]`. Every non-output layer is followed by ReLU.
//! Convolutions are valid cross-correlations with stride 1.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::rng::{self, Stream};
use crate::tensor::{NodeId, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LayerKind {
    Dense,
    Conv { kernel_h: usize, kernel_w: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub fan_in: usize,
    pub fan_out: usize,
    pub is_output: bool,
}

impl LayerSpec {
    pub fn dense(fan_in: usize, fan_out: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            fan_in,
            fan_out,
            is_output: false,
        }
    }

    pub fn conv(fan_in: usize, fan_out: usize, kernel_h: usize, kernel_w: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv { kernel_h, kernel_w },
            fan_in,
            fan_out,
            is_output: false,
        }
    }

    pub fn output(self) -> Self {
        LayerSpec {
            is_output: true,
            ..self
        }
    }

    /// `m_l`: number of weights in the layer.
    pub fn weight_count(&self) -> usize {
        self.effective_fan_in() * self.fan_out
    }

    /// Fan-in including the kernel area for convolutions.
    pub fn effective_fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.fan_in,
            LayerKind::Conv { kernel_h, kernel_w } => self.fan_in * kernel_h * kernel_w,
        }
    }

    fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Dense => vec![self.fan_in, self.fan_out],
            LayerKind::Conv { kernel_h, kernel_w } => {
                vec![self.fan_out, self.fan_in, kernel_h, kernel_w]
            }
        }
    }
}

/// Checks the layer list: positive sizes, at least one layer, and exactly one
/// output layer, which is the last one.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Spec("network needs at least one layer".into()));
    }
    for (l, s) in specs.iter().enumerate() {
        if s.fan_in == 0 || s.fan_out == 0 {
            return Err(Error::Spec(format!("layer {l} has zero fan-in or fan-out")));
        }
        if let LayerKind::Conv { kernel_h, kernel_w } = s.kind {
            if kernel_h == 0 || kernel_w == 0 {
                return Err(Error::Spec(format!("layer {l} has an empty kernel")));
            }
        }
    }
    let outputs = specs.iter().filter(|s| s.is_output).count();
    if outputs != 1 || !specs[specs.len() - 1].is_output {
        return Err(Error::Spec(
            "exactly one output layer is required and it must be last".into(),
        ));
    }
    Ok(())
}

/// Selects the smart-ratio decay: plain `(L−l+1)²+(L−l+1)` or the same
/// divided by `l²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ArchFamily {
    #[default]
    #[cfg_attr(feature = "serde", serde(alias = "plain"))]
    PlainStack,
    #[cfg_attr(feature = "serde", serde(alias = "fast"))]
    FastDecayStack,
}

impl core::str::FromStr for ArchFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" | "plain-stack" => Ok(ArchFamily::PlainStack),
            "fast" | "fast-decay" | "fast-decay-stack" => Ok(ArchFamily::FastDecayStack),
            _ => Err(Error::Schema(format!(
                "unknown family {s:?}, expected plain or fast"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Head {
    #[default]
    SoftmaxCrossEntropy,
    HalfSquaredError,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayeredParams {
    specs: Vec<LayerSpec>,
    weights: Vec<Vec<f64>>,
}

impl LayeredParams {
    pub fn new(specs: Vec<LayerSpec>, weights: Vec<Vec<f64>>) -> Result<Self> {
        validate_specs(&specs)?;
        if specs.len() != weights.len() {
            return Err(Error::Alignment(format!(
                "{} layer specs but {} weight vectors",
                specs.len(),
                weights.len()
            )));
        }
        for (l, (s, w)) in specs.iter().zip(&weights).enumerate() {
            if w.len() != s.weight_count() {
                return Err(Error::Alignment(format!(
                    "layer {l}: expected {} weights, got {}",
                    s.weight_count(),
                    w.len()
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("layer weights"));
            }
        }
        Ok(LayeredParams { specs, weights })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.weights[l]
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        layer_sizes(&self.specs)
    }

    pub fn total_weights(&self) -> usize {
        self.weights.iter().map(Vec::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.weights.concat()
    }

    /// Same architecture with new flat weights.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.total_weights() {
            return Err(Error::Alignment(format!(
                "{} flat values for {} weights",
                flat.len(),
                self.total_weights()
            )));
        }
        let mut weights = Vec::with_capacity(self.weights.len());
        let mut offset = 0;
        for w in &self.weights {
            weights.push(flat[offset..offset + w.len()].to_vec());
            offset += w.len();
        }
        LayeredParams::new(self.specs.clone(), weights)
    }

    pub fn with_layers(&self, weights: Vec<Vec<f64>>) -> Result<Self> {
        LayeredParams::new(self.specs.clone(), weights)
    }

    /// `w ⊙ c` layer by layer.
    pub fn masked(&self, mask: &Mask) -> Result<Self> {
        mask.check_aligned(&self.layer_sizes())?;
        let weights = self
            .weights
            .iter()
            .zip(mask.layers())
            .map(|(w, c)| {
                w.iter()
                    .zip(c)
                    .map(|(w, &keep)| w * if keep { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        Ok(LayeredParams {
            specs: self.specs.clone(),
            weights,
        })
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }
}

/// `m_l` for each layer.
pub fn layer_sizes(specs: &[LayerSpec]) -> Vec<usize> {
    specs.iter().map(LayerSpec::weight_count).collect()
}

/// Kaiming-normal initialisation: `N(0, 2 / fan_in_eff)` per weight.
pub fn build_network(specs: &[LayerSpec], seed: u64) -> Result<LayeredParams> {
    validate_specs(specs)?;
    if specs.len() < 2 {
        return Err(Error::Spec("network needs at least two layers".into()));
    }
    let mut rng = rng::stream(seed, Stream::Init);
    let weights = specs
        .iter()
        .map(|s| {
            let std = libm::sqrt(2.0 / s.effective_fan_in() as f64);
            (0..s.weight_count())
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    LayeredParams::new(specs.to_vec(), weights)
}

/// Named reference architectures.
pub const PRESETS: [&str; 2] = ["mlp-4", "conv-5"];

/// `mlp-4`: four dense layers widening towards the output. `conv-5`: three 3×3 convolutions and two
/// dense layers. Inputs are flattened in front of the first dense layer.
pub fn preset(name: &str, sample_shape: &[usize], classes: usize) -> Result<Vec<LayerSpec>> {
    if classes == 0 || sample_shape.is_empty() || sample_shape.contains(&0) {
        return Err(Error::Spec(format!(
            "invalid preset input {sample_shape:?} with {classes} classes"
        )));
    }
    let specs = match name {
        "mlp-4" => {
            let d: usize = sample_shape.iter().product();
            vec![
                LayerSpec::dense(d, 32),
                LayerSpec::dense(32, 64),
                LayerSpec::dense(64, 128),
                LayerSpec::dense(128, classes).output(),
            ]
        }
        "conv-5" => {
            let (c, h, w) = image_shape(sample_shape)?;
            if h < 7 || w < 7 {
                return Err(Error::Spec(format!(
                    "conv-5 needs at least 7x7 inputs, got {h}x{w}"
                )));
            }
            let flat = 16 * (h - 6) * (w - 6);
            vec![
                LayerSpec::conv(c, 8, 3, 3),
                LayerSpec::conv(8, 8, 3, 3),
                LayerSpec::conv(8, 16, 3, 3),
                LayerSpec::dense(flat, 32),
                LayerSpec::dense(32, classes).output(),
            ]
        }
        other => return Err(Error::Spec(format!("unknown preset {other:?}"))),
    };
    validate_specs(&specs)?;
    Ok(specs)
}

/// Default input geometry used when a preset is named without data.
pub fn preset_default_input(name: &str) -> Result<(Vec<usize>, usize)> {
    match name {
        "mlp-4" => Ok((vec![16], 3)),
        "conv-5" => Ok((vec![1, 8, 8], 3)),
        other => Err(Error::Spec(format!("unknown preset {other:?}"))),
    }
}

/// Interprets a sample shape as `(channels, height, width)`. Flat square
/// vectors are read as single-channel images.
pub fn image_shape(sample_shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *sample_shape {
        [c, h, w] => Ok((c, h, w)),
        [h, w] => Ok((1, h, w)),
        [d] => {
            let side = libm::sqrt(d as f64) as usize;
            if side * side == d {
                Ok((1, side, side))
            } else {
                Err(Error::Alignment(format!(
                    "flat sample of length {d} is not a square image"
                )))
            }
        }
        _ => Err(Error::Alignment(format!(
            "unsupported sample shape {sample_shape:?}"
        ))),
    }
}

/// A recorded masked forward pass, ready for one backward call.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    tape: Tape,
    weight_nodes: Vec<NodeId>,
    loss: NodeId,
}

impl ForwardTape {
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn loss_node(&self) -> NodeId {
        self.loss
    }

    /// Gradient of the masked loss with respect to the raw weights `w_l`.
    pub fn backward(&mut self) -> Result<Vec<Vec<f64>>> {
        self.tape.backward(self.loss)?;
        Ok(self
            .weight_nodes
            .iter()
            .map(|&id| self.tape.grad(id).map(<[f64]>::to_vec).unwrap_or_default())
            .collect())
    }
}

fn record_network(
    tape: &mut Tape,
    params: &LayeredParams,
    mask: &Mask,
    inputs: &[f64],
    batch: usize,
    sample_shape: &[usize],
) -> Result<(Vec<NodeId>, NodeId)> {
    mask.check_aligned(&params.layer_sizes())?;
    if batch == 0 {
        return Err(Error::Domain("empty batch".into()));
    }
    let specs = params.specs();
    let first_conv = matches!(specs[0].kind, LayerKind::Conv { .. });
    let mut shape = vec![batch];
    if first_conv {
        let (c, h, w) = image_shape(sample_shape)?;
        shape.extend_from_slice(&[c, h, w]);
    } else {
        shape.push(sample_shape.iter().product());
    }
    let mut x = tape.constant(Tensor::new(shape, inputs.to_vec())?);
    let mut weight_nodes = Vec::with_capacity(specs.len());
    for (l, spec) in specs.iter().enumerate() {
        let w = tape.variable(Tensor::new(spec.weight_shape(), params.layer(l).to_vec())?);
        let c = tape.constant(Tensor::new(spec.weight_shape(), mask.factors(l))?);
        weight_nodes.push(w);
        let wm = tape.mul(w, c)?;
        let current = tape.value(x).shape().to_vec();
        x = match spec.kind {
            LayerKind::Conv { .. } => {
                if current.len() != 4 || current[1] != spec.fan_in {
                    return Err(Error::Alignment(format!(
                        "layer {l}: conv with {} input channels applied to {current:?}",
                        spec.fan_in
                    )));
                }
                tape.conv2d(x, wm)?
            }
            LayerKind::Dense => {
                let flat: usize = current[1..].iter().product();
                if flat != spec.fan_in {
                    return Err(Error::Alignment(format!(
                        "layer {l}: dense fan-in {} applied to {flat} features",
                        spec.fan_in
                    )));
                }
                let x2 = if current.len() == 2 {
                    x
                } else {
                    tape.reshape(x, vec![batch, flat])?
                };
                tape.matmul(x2, wm)?
            }
        };
        if !spec.is_output {
            x = tape.relu(x)?;
        }
    }
    let out_shape = tape.value(x).shape().to_vec();
    if out_shape.len() != 2 {
        let flat = out_shape[1..].iter().product();
        x = tape.reshape(x, vec![batch, flat])?;
    }
    Ok((weight_nodes, x))
}

/// Mean loss of the masked network over `batch`, with its tape.
pub fn forward_loss(
    params: &LayeredParams,
    mask: &Mask,
    batch: &Dataset,
    head: Head,
) -> Result<(f64, ForwardTape)> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let mut tape = Tape::new();
    let (weight_nodes, logits) = record_network(
        &mut tape,
        params,
        mask,
        batch.features(),
        batch.len(),
        batch.sample_shape(),
    )?;
    let width = tape.value(logits).shape()[1];
    if head == Head::SoftmaxCrossEntropy && width != batch.class_count() {
        return Err(Error::Alignment(format!(
            "network emits {width} logits for {} classes",
            batch.class_count()
        )));
    }
    let loss = match head {
        Head::SoftmaxCrossEntropy => tape.softmax_cross_entropy(logits, batch.labels())?,
        Head::HalfSquaredError => tape.half_squared_error(logits, batch.labels())?,
    };
    let value = tape.value(loss).values()[0];
    Ok((
        value,
        ForwardTape {
            tape,
            weight_nodes,
            loss,
        },
    ))
}

/// Gradient of the masked loss. Consumes the tape's single backward pass.
pub fn backward(tape: &mut ForwardTape) -> Result<Vec<Vec<f64>>> {
    tape.backward()
}

/// Loss and gradient in one call.
pub fn loss_and_gradient(
    params: &LayeredParams,
    mask: &Mask,
    batch: &Dataset,
    head: Head,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (loss, mut tape) = forward_loss(params, mask, batch, head)?;
    Ok((loss, tape.backward()?))
}

/// Output logits, `n × C` row-major.
pub fn logits(
    params: &LayeredParams,
    mask: &Mask,
    inputs: &[f64],
    batch: usize,
    sample_shape: &[usize],
) -> Result<(Vec<f64>, usize)> {
    let mut tape = Tape::new();
    let (_, out) = record_network(&mut tape, params, mask, inputs, batch, sample_shape)?;
    let width = tape.value(out).shape()[1];
    Ok((tape.value(out).values().to_vec(), width))
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

pub fn predict(
    params: &LayeredParams,
    mask: &Mask,
    x: &[f64],
    sample_shape: &[usize],
) -> Result<usize> {
    let (out, _) = logits(params, mask, x, 1, sample_shape)?;
    Ok(argmax(&out))
}

/// Percentage of correctly classified samples.
pub fn accuracy(params: &LayeredParams, mask: &Mask, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Domain("accuracy on an empty dataset".into()));
    }
    let (out, width) = logits(
        params,
        mask,
        data.features(),
        data.len(),
        data.sample_shape(),
    )?;
    let correct = out
        .chunks_exact(width)
        .zip(data.labels())
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(100.0 * correct as f64 / data.len() as f64)
}

/// Human-readable layer summary, e.g. `conv3x3(1->4)`.
pub fn describe(spec: &LayerSpec) -> String {
    match spec.kind {
        LayerKind::Dense => format!("dense({}->{})", spec.fan_in, spec.fan_out),
        LayerKind::Conv { kernel_h, kernel_w } => {
            format!(
                "conv{kernel_h}x{kernel_w}({}->{})",
                spec.fan_in, spec.fan_out
            )
        }
    }
}
