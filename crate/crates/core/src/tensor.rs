//! Dense `f64` tensors and a single-use reverse-mode tape.
//!
//! The tape records a restricted primitive set (add, elementwise multiply,
//! matmul, ReLU, reshape, valid 2-D cross-correlation and two fused loss
//! reductions). Nodes are appended in execution order, so the node list is
//! already a topological order and backward is a single reverse sweep.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Domain(format!(
                "tensor dimensions must be positive: {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(Error::Alignment(format!(
                "shape {shape:?} needs {len} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor construction"));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Tensor::new(vec![1], vec![value])
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Tensor::new(shape, vec![0.0; len])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    fn checked(shape: Vec<usize>, values: Vec<f64>, op: &'static str) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }
}

pub type NodeId = usize;

/// Geometry of a batched valid cross-correlation, stride 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.height - self.kernel_h + 1
    }

    pub fn out_w(&self) -> usize {
        self.width - self.kernel_w + 1
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Relu(NodeId),
    Reshape(NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        geom: ConvGeom,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
    },
    HalfSquaredError {
        output: NodeId,
        labels: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    trainable: bool,
}

/// Recorded computation. One backward pass per tape.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Gradient accumulated on a trainable leaf by the last backward pass.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id].value.grad()
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Leaf that receives a gradient on backward.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    fn push(&mut self, op: Op, value: Tensor, trainable: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            trainable,
        });
        self.nodes.len() - 1
    }

    fn check_id(&self, id: NodeId) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(Error::Alignment(format!("unknown tape node {id}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = eval_add(self, a, b)?;
        Ok(self.push(Op::Add(a, b), value, false))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = eval_mul(self, a, b)?;
        Ok(self.push(Op::Mul(a, b), value, false))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = eval_matmul(self, a, b)?;
        Ok(self.push(Op::MatMul(a, b), value, false))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = eval_relu(self, a)?;
        Ok(self.push(Op::Relu(a), value, false))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = eval_reshape(self, a, shape)?;
        Ok(self.push(Op::Reshape(a), value, false))
    }

    /// `input` is `[n, c, h, w]`, `kernel` is `[o, c, kh, kw]`.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId) -> Result<NodeId> {
        let (value, geom) = eval_conv(self, input, kernel)?;
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                geom,
            },
            value,
            false,
        ))
    }

    /// Mean softmax cross-entropy of `[n, C]` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let value = eval_softmax_ce(self, logits, labels)?;
        let labels = labels.to_vec();
        Ok(self.push(Op::SoftmaxCrossEntropy { logits, labels }, value, false))
    }

    /// Mean of `Σ_c (o_c − t_c)² / 2`. With a single output column the
    /// target is the label value itself, otherwise it is the one-hot label.
    pub fn half_squared_error(&mut self, output: NodeId, labels: &[usize]) -> Result<NodeId> {
        let value = eval_half_sq(self, output, labels)?;
        let labels = labels.to_vec();
        Ok(self.push(Op::HalfSquaredError { output, labels }, value, false))
    }

    /// Recompute every node from the recorded leaves.
    pub fn replay(&self) -> Result<Tape> {
        let mut out = Tape::new();
        for node in &self.nodes {
            match &node.op {
                Op::Leaf => {
                    let mut leaf = node.value.clone();
                    leaf.grad = None;
                    out.push(Op::Leaf, leaf, node.trainable);
                }
                Op::Add(a, b) => {
                    out.add(*a, *b)?;
                }
                Op::Mul(a, b) => {
                    out.mul(*a, *b)?;
                }
                Op::MatMul(a, b) => {
                    out.matmul(*a, *b)?;
                }
                Op::Relu(a) => {
                    out.relu(*a)?;
                }
                Op::Reshape(a) => {
                    out.reshape(*a, node.value.shape.clone())?;
                }
                Op::Conv2d { input, kernel, .. } => {
                    out.conv2d(*input, *kernel)?;
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    out.softmax_cross_entropy(*logits, labels)?;
                }
                Op::HalfSquaredError { output, labels } => {
                    out.half_squared_error(*output, labels)?;
                }
            }
        }
        Ok(out)
    }

    /// Reverse sweep from a scalar `root`. Gradients land on trainable leaves
    /// and can be read with [`Tape::grad`]. A second call fails.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.check_id(root)?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::Domain(format!(
                "backward root must be scalar, has shape {:?}",
                self.nodes[root].value.shape
            )));
        }
        self.consumed = true;

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        adj[root] = Some(vec![1.0]);
        for id in (0..=root).rev() {
            let Some(upstream) = adj[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    if node.trainable {
                        adj[id] = Some(upstream);
                    }
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, &upstream);
                    accumulate(&mut adj, *b, &upstream);
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[*a].value.values;
                    let bv = &self.nodes[*b].value.values;
                    let da: Vec<f64> = upstream.iter().zip(bv).map(|(g, b)| g * b).collect();
                    let db: Vec<f64> = upstream.iter().zip(av).map(|(g, a)| g * a).collect();
                    accumulate(&mut adj, *a, &da);
                    accumulate(&mut adj, *b, &db);
                }
                Op::MatMul(a, b) => {
                    let at = &self.nodes[*a].value;
                    let bt = &self.nodes[*b].value;
                    let (n, k, m) = (at.shape[0], at.shape[1], bt.shape[1]);
                    // dA = G·Bᵀ, dB = Aᵀ·G
                    let mut da = vec![0.0; n * k];
                    for i in 0..n {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..m {
                                s += upstream[i * m + j] * bt.values[p * m + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    let mut db = vec![0.0; k * m];
                    for i in 0..n {
                        for p in 0..k {
                            let x = at.values[i * k + p];
                            for j in 0..m {
                                db[p * m + j] += x * upstream[i * m + j];
                            }
                        }
                    }
                    accumulate(&mut adj, *a, &da);
                    accumulate(&mut adj, *b, &db);
                }
                Op::Relu(a) => {
                    let input = &self.nodes[*a].value.values;
                    let da: Vec<f64> = upstream
                        .iter()
                        .zip(input)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *a, &da);
                }
                Op::Reshape(a) => accumulate(&mut adj, *a, &upstream),
                Op::Conv2d {
                    input,
                    kernel,
                    geom,
                } => {
                    let x = &self.nodes[*input].value.values;
                    let w = &self.nodes[*kernel].value.values;
                    let (dx, dw) = conv_backward(geom, x, w, &upstream);
                    accumulate(&mut adj, *input, &dx);
                    accumulate(&mut adj, *kernel, &dw);
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let z = &self.nodes[*logits].value;
                    let (n, c) = (z.shape[0], z.shape[1]);
                    let scale = upstream[0] / n as f64;
                    let mut dz = vec![0.0; n * c];
                    for i in 0..n {
                        let row = &z.values[i * c..(i + 1) * c];
                        let probs = softmax(row);
                        for j in 0..c {
                            let target = if j == labels[i] { 1.0 } else { 0.0 };
                            dz[i * c + j] = (probs[j] - target) * scale;
                        }
                    }
                    accumulate(&mut adj, *logits, &dz);
                }
                Op::HalfSquaredError { output, labels } => {
                    let o = &self.nodes[*output].value;
                    let (n, c) = (o.shape[0], o.shape[1]);
                    let scale = upstream[0] / n as f64;
                    let mut d = vec![0.0; n * c];
                    for i in 0..n {
                        for j in 0..c {
                            d[i * c + j] = (o.values[i * c + j] - target(c, labels[i], j)) * scale;
                        }
                    }
                    accumulate(&mut adj, *output, &d);
                }
            }
        }

        for (id, grad) in adj.into_iter().enumerate() {
            if let Some(g) = grad {
                if self.nodes[id].trainable {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite("backward"));
                    }
                    self.nodes[id].value.grad = Some(g);
                }
            }
        }
        // Trainable leaves the root does not depend on get an explicit zero.
        for node in self.nodes.iter_mut().take(root + 1) {
            if node.trainable && node.value.grad.is_none() {
                node.value.grad = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], id: NodeId, grad: &[f64]) {
    match &mut adj[id] {
        Some(existing) => {
            for (e, g) in existing.iter_mut().zip(grad) {
                *e += g;
            }
        }
        slot @ None => *slot = Some(grad.to_vec()),
    }
}

fn target(columns: usize, label: usize, j: usize) -> f64 {
    if columns == 1 {
        label as f64
    } else if j == label {
        1.0
    } else {
        0.0
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|z| libm::exp(z - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|z| libm::exp(z - max)).sum();
    max + libm::log(sum)
}

fn same_shape(tape: &Tape, a: NodeId, b: NodeId, op: &str) -> Result<()> {
    tape.check_id(a)?;
    tape.check_id(b)?;
    let (sa, sb) = (&tape.nodes[a].value.shape, &tape.nodes[b].value.shape);
    if sa != sb {
        return Err(Error::Alignment(format!(
            "{op}: shapes {sa:?} and {sb:?} differ"
        )));
    }
    Ok(())
}

fn eval_add(tape: &Tape, a: NodeId, b: NodeId) -> Result<Tensor> {
    same_shape(tape, a, b, "add")?;
    let (x, y) = (&tape.nodes[a].value, &tape.nodes[b].value);
    let values = x.values.iter().zip(&y.values).map(|(p, q)| p + q).collect();
    Tensor::checked(x.shape.clone(), values, "add")
}

fn eval_mul(tape: &Tape, a: NodeId, b: NodeId) -> Result<Tensor> {
    same_shape(tape, a, b, "mul")?;
    let (x, y) = (&tape.nodes[a].value, &tape.nodes[b].value);
    let values = x.values.iter().zip(&y.values).map(|(p, q)| p * q).collect();
    Tensor::checked(x.shape.clone(), values, "mul")
}

fn eval_matmul(tape: &Tape, a: NodeId, b: NodeId) -> Result<Tensor> {
    tape.check_id(a)?;
    tape.check_id(b)?;
    let (x, y) = (&tape.nodes[a].value, &tape.nodes[b].value);
    if x.shape.len() != 2 || y.shape.len() != 2 || x.shape[1] != y.shape[0] {
        return Err(Error::Alignment(format!(
            "matmul: {:?} x {:?}",
            x.shape, y.shape
        )));
    }
    let (n, k, m) = (x.shape[0], x.shape[1], y.shape[1]);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for p in 0..k {
            let xv = x.values[i * k + p];
            let row = &y.values[p * m..(p + 1) * m];
            let dst = &mut out[i * m..(i + 1) * m];
            for (d, w) in dst.iter_mut().zip(row) {
                *d += xv * w;
            }
        }
    }
    Tensor::checked(vec![n, m], out, "matmul")
}

fn eval_relu(tape: &Tape, a: NodeId) -> Result<Tensor> {
    tape.check_id(a)?;
    let x = &tape.nodes[a].value;
    let values = x
        .values
        .iter()
        .map(|v| if *v > 0.0 { *v } else { 0.0 })
        .collect();
    Tensor::checked(x.shape.clone(), values, "relu")
}

fn eval_reshape(tape: &Tape, a: NodeId, shape: Vec<usize>) -> Result<Tensor> {
    tape.check_id(a)?;
    let x = &tape.nodes[a].value;
    let len: usize = shape.iter().product();
    if len != x.len() || shape.contains(&0) {
        return Err(Error::Alignment(format!(
            "reshape {:?} -> {shape:?}",
            x.shape
        )));
    }
    Ok(Tensor {
        shape,
        values: x.values.clone(),
        grad: None,
    })
}

fn eval_conv(tape: &Tape, input: NodeId, kernel: NodeId) -> Result<(Tensor, ConvGeom)> {
    tape.check_id(input)?;
    tape.check_id(kernel)?;
    let (x, w) = (&tape.nodes[input].value, &tape.nodes[kernel].value);
    if x.shape.len() != 4 || w.shape.len() != 4 || x.shape[1] != w.shape[1] {
        return Err(Error::Alignment(format!(
            "conv2d: input {:?}, kernel {:?}",
            x.shape, w.shape
        )));
    }
    if w.shape[2] > x.shape[2] || w.shape[3] > x.shape[3] {
        return Err(Error::Alignment(format!(
            "conv2d: kernel {:?} larger than input {:?}",
            w.shape, x.shape
        )));
    }
    let geom = ConvGeom {
        batch: x.shape[0],
        in_channels: x.shape[1],
        height: x.shape[2],
        width: x.shape[3],
        out_channels: w.shape[0],
        kernel_h: w.shape[2],
        kernel_w: w.shape[3],
    };
    let (oh, ow) = (geom.out_h(), geom.out_w());
    let mut out = vec![0.0; geom.batch * geom.out_channels * oh * ow];
    for n in 0..geom.batch {
        for o in 0..geom.out_channels {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut s = 0.0;
                    for c in 0..geom.in_channels {
                        for ky in 0..geom.kernel_h {
                            for kx in 0..geom.kernel_w {
                                s += x.values[x_index(&geom, n, c, y + ky, xo + kx)]
                                    * w.values[w_index(&geom, o, c, ky, kx)];
                            }
                        }
                    }
                    out[((n * geom.out_channels + o) * oh + y) * ow + xo] = s;
                }
            }
        }
    }
    let t = Tensor::checked(vec![geom.batch, geom.out_channels, oh, ow], out, "conv2d")?;
    Ok((t, geom))
}

fn x_index(g: &ConvGeom, n: usize, c: usize, y: usize, x: usize) -> usize {
    ((n * g.in_channels + c) * g.height + y) * g.width + x
}

fn w_index(g: &ConvGeom, o: usize, c: usize, ky: usize, kx: usize) -> usize {
    ((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx
}

fn conv_backward(g: &ConvGeom, x: &[f64], w: &[f64], upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    for n in 0..g.batch {
        for o in 0..g.out_channels {
            for y in 0..oh {
                for xo in 0..ow {
                    let up = upstream[((n * g.out_channels + o) * oh + y) * ow + xo];
                    if up == 0.0 {
                        continue;
                    }
                    for c in 0..g.in_channels {
                        for ky in 0..g.kernel_h {
                            for kx in 0..g.kernel_w {
                                let xi = x_index(g, n, c, y + ky, xo + kx);
                                let wi = w_index(g, o, c, ky, kx);
                                dw[wi] += up * x[xi];
                                dx[xi] += up * w[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}

fn check_labels(shape: &[usize], labels: &[usize], classes_from_columns: bool) -> Result<()> {
    if shape.len() != 2 {
        return Err(Error::Alignment(format!(
            "loss head expects [n, C], got {shape:?}"
        )));
    }
    if labels.len() != shape[0] {
        return Err(Error::Alignment(format!(
            "{} labels for {} rows",
            labels.len(),
            shape[0]
        )));
    }
    if classes_from_columns {
        if let Some(bad) = labels.iter().find(|&&y| y >= shape[1]) {
            return Err(Error::Domain(format!(
                "label {bad} outside [0, {})",
                shape[1]
            )));
        }
    }
    Ok(())
}

fn eval_softmax_ce(tape: &Tape, logits: NodeId, labels: &[usize]) -> Result<Tensor> {
    tape.check_id(logits)?;
    let z = &tape.nodes[logits].value;
    check_labels(&z.shape, labels, true)?;
    let (n, c) = (z.shape[0], z.shape[1]);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &z.values[i * c..(i + 1) * c];
        total += log_sum_exp(row) - row[y];
    }
    Tensor::checked(vec![1], vec![total / n as f64], "softmax cross-entropy")
}

fn eval_half_sq(tape: &Tape, output: NodeId, labels: &[usize]) -> Result<Tensor> {
    tape.check_id(output)?;
    let o = &tape.nodes[output].value;
    check_labels(&o.shape, labels, o.shape.get(1).copied().unwrap_or(0) > 1)?;
    let (n, c) = (o.shape[0], o.shape[1]);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..c {
            let d = o.values[i * c + j] - target(c, y, j);
            total += d * d / 2.0;
        }
    }
    Tensor::checked(vec![1], vec![total / n as f64], "half squared error")
}
