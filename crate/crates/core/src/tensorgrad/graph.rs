use super::kernels::{self, ConvGeom};
use super::{Tensor, TensorError};

/// Index of a node inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel running mean/variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    /// Stats with no channels; inference with them is an error.
    pub fn empty() -> Self {
        Self {
            mean: Vec::new(),
            var: Vec::new(),
        }
    }

    /// Mean 0, variance 1 for every channel.
    pub fn unit(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn is_populated(&self) -> bool {
        !self.mean.is_empty()
    }
}

/// Batch-norm statistics source.
#[derive(Debug)]
pub enum BnMode<'a> {
    /// Normalise with batch statistics and fold them into `stats`.
    Train {
        stats: &'a mut RunningStats,
        momentum: f64,
    },
    /// Normalise with stored running statistics.
    Infer(&'a RunningStats),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        geom: ConvGeom,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Affine {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    GlobalAvgPool(NodeId),
    Concat(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Mse(NodeId, NodeId),
    BceLogits {
        logits: NodeId,
        targets: Vec<f64>,
    },
    SoftmaxCe {
        logits: NodeId,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    Crop {
        input: NodeId,
        top: usize,
        left: usize,
    },
    Resize(NodeId),
    StraightThrough(NodeId),
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            }
            | Op::Affine {
                input,
                weight,
                bias,
            } => vec![*input, *weight, *bias],
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::GlobalAvgPool(a)
            | Op::Scale(a, _)
            | Op::Sum(a)
            | Op::Resize(a)
            | Op::StraightThrough(a) => vec![*a],
            Op::Concat(a, b) | Op::Add(a, b) | Op::Mse(a, b) => vec![*a, *b],
            Op::BceLogits { logits, .. } | Op::SoftmaxCe { logits, .. } => vec![*logits],
            Op::Crop { input, .. } => vec![*input],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Arena of tensor nodes recorded in evaluation order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn check_dim(op: &'static str, axis: &'static str, expected: usize, found: usize) -> Result<(), TensorError> {
    if expected == found {
        Ok(())
    } else {
        Err(TensorError::Shape {
            op,
            axis,
            expected,
            found,
        })
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<NodeId, TensorError> {
        value.ensure_finite("leaf")?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId, TensorError> {
        self.leaf(value, false)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<NodeId, TensorError> {
        self.leaf(value, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, TensorError> {
        const OP: &str = "conv2d";
        let [n, c_in, h, w] = self.value(input).dims4(OP)?;
        let [c_out, wc, kh, kw] = self.value(weight).dims4(OP)?;
        check_dim(OP, "weight input-channel axis", c_in, wc)?;
        check_dim(OP, "kernel width", kh, kw)?;
        check_dim(OP, "bias length", c_out, self.value(bias).numel())?;
        if kh % 2 == 0 {
            return Err(TensorError::InvalidArgument(format!("{OP}: kernel size {kh} must be odd")));
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument(format!("{OP}: stride must be >= 1")));
        }
        let out_dim = |len: usize, axis: &str| -> Result<usize, TensorError> {
            let span = len + 2 * pad;
            if span < kh || (span - kh) % stride != 0 {
                return Err(TensorError::InvalidArgument(format!(
                    "{OP}: {axis} extent {len} with pad {pad}, kernel {kh}, stride {stride} gives a non-integral output"
                )));
            }
            Ok((span - kh) / stride + 1)
        };
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k: kh,
            stride,
            pad,
            out_h: out_dim(h, "height")?,
            out_w: out_dim(w, "width")?,
        };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            n,
            self.value(weight).data(),
            self.value(bias).data(),
            &geom,
        );
        let value = Tensor::from_parts(vec![n, c_out, geom.out_h, geom.out_w], out);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    pub fn batchnorm2d(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: BnMode<'_>,
        eps: f64,
    ) -> Result<NodeId, TensorError> {
        const OP: &str = "batchnorm2d";
        if eps <= 0.0 {
            return Err(TensorError::InvalidArgument(format!("{OP}: eps must be positive")));
        }
        let [n, c, h, w] = self.value(input).dims4(OP)?;
        check_dim(OP, "gamma length", c, self.value(gamma).numel())?;
        check_dim(OP, "beta length", c, self.value(beta).numel())?;
        let plane = h * w;
        let count = n * plane;
        let x = self.value(input).data();
        let (mean, var, batch_stats) = match mode {
            BnMode::Train { stats, momentum } => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for sample in 0..n {
                        s += x[(sample * c + ch) * plane..][..plane].iter().sum::<f64>();
                    }
                    let m = s / count as f64;
                    let mut q = 0.0;
                    for sample in 0..n {
                        q += x[(sample * c + ch) * plane..][..plane]
                            .iter()
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = q / count as f64;
                }
                if !stats.is_populated() {
                    *stats = RunningStats::unit(c);
                }
                check_dim(OP, "running-stats channels", c, stats.mean.len())?;
                let unbias = if count > 1 {
                    count as f64 / (count - 1) as f64
                } else {
                    1.0
                };
                for ch in 0..c {
                    stats.mean[ch] = (1.0 - momentum) * stats.mean[ch] + momentum * mean[ch];
                    stats.var[ch] = (1.0 - momentum) * stats.var[ch] + momentum * var[ch] * unbias;
                }
                (mean, var, true)
            }
            BnMode::Infer(stats) => {
                if !stats.is_populated() {
                    return Err(TensorError::MissingRunningStats);
                }
                check_dim(OP, "running-stats channels", c, stats.mean.len())?;
                (stats.mean.clone(), stats.var.clone(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for sample in 0..n {
            for ch in 0..c {
                let base = (sample * c + ch) * plane;
                for i in base..base + plane {
                    let xh = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }
        let value = Tensor::from_parts(vec![n, c, h, w], out);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    /// Elementwise `max(0, x)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(|v| v.max(0.0));
        self.push(value, Op::Relu(input))
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(kernels::sigmoid);
        self.push(value, Op::Sigmoid(input))
    }

    /// `input·weightᵀ + bias` for input N×F, weight G×F, bias G.
    pub fn affine(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        const OP: &str = "affine";
        let [n, f] = self.value(input).dims2(OP)?;
        let [g, wf] = self.value(weight).dims2(OP)?;
        check_dim(OP, "feature axis", wf, f)?;
        check_dim(OP, "bias length", g, self.value(bias).numel())?;
        let out = kernels::affine_forward(
            self.value(input).data(),
            n,
            f,
            self.value(weight).data(),
            self.value(bias).data(),
            g,
        );
        Ok(self.push(
            Tensor::from_parts(vec![n, g], out),
            Op::Affine {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Spatial mean per channel: N×C×H×W → N×C.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let [n, c, h, w] = self.value(input).dims4("global_avg_pool")?;
        let plane = h * w;
        let out = self
            .value(input)
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        Ok(self.push(Tensor::from_parts(vec![n, c], out), Op::GlobalAvgPool(input)))
    }

    /// Channel stacking with `a` first.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        const OP: &str = "concat_channels";
        let [n, ca, h, w] = self.value(a).dims4(OP)?;
        let [nb, cb, hb, wb] = self.value(b).dims4(OP)?;
        check_dim(OP, "batch axis", n, nb)?;
        check_dim(OP, "height axis", h, hb)?;
        check_dim(OP, "width axis", w, wb)?;
        let plane = h * w;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (ca + cb) * plane);
        for s in 0..n {
            out.extend_from_slice(&da[s * ca * plane..(s + 1) * ca * plane]);
            out.extend_from_slice(&db[s * cb * plane..(s + 1) * cb * plane]);
        }
        Ok(self.push(Tensor::from_parts(vec![n, ca + cb, h, w], out), Op::Concat(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::InvalidArgument(format!(
                "add: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add(a, b)))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let value = self.value(input).map(|v| v * factor);
        self.push(value, Op::Scale(input, factor))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let total = self.value(input).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(input))
    }

    /// Mean of squared differences.
    pub fn mse_loss(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::InvalidArgument(format!(
                "mse_loss: shapes {:?} and {:?} differ",
                ta.shape(),
                tb.shape()
            )));
        }
        let sq: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let loss = sq / ta.numel() as f64;
        Ok(self.push(Tensor::scalar(loss), Op::Mse(a, b)))
    }

    /// Mean binary cross-entropy between logits and {0,1} targets.
    pub fn bce_logits_loss(&mut self, logits: NodeId, targets: &[u8]) -> Result<NodeId, TensorError> {
        let x = self.value(logits);
        check_dim("bce_logits_loss", "target length", x.numel(), targets.len())?;
        if let Some(bad) = targets.iter().find(|&&t| t > 1) {
            return Err(TensorError::InvalidArgument(format!(
                "bce_logits_loss: target {bad} is not a bit"
            )));
        }
        let targets: Vec<f64> = targets.iter().map(|&t| t as f64).collect();
        let loss = kernels::bce_logits(x.data(), &targets);
        Ok(self.push(Tensor::scalar(loss), Op::BceLogits { logits, targets }))
    }

    /// Mean softmax cross-entropy of N×K logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId, TensorError> {
        const OP: &str = "softmax_cross_entropy";
        let [n, k] = self.value(logits).dims2(OP)?;
        check_dim(OP, "label count", n, labels.len())?;
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::InvalidArgument(format!("{OP}: label {bad} >= class count {k}")));
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for (row, (&label, p)) in labels.iter().zip(probs.chunks_mut(k)).enumerate() {
            let z = &x[row * k..(row + 1) * k];
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (pi, &zi) in p.iter_mut().zip(z) {
                *pi = (zi - max).exp();
                denom += *pi;
            }
            for pi in p.iter_mut() {
                *pi /= denom;
            }
            loss += denom.ln() + max - z[label];
        }
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::SoftmaxCe {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Spatial window `[top, top+h) × [left, left+w)` of an N×C×H×W tensor.
    pub fn crop(&mut self, input: NodeId, top: usize, left: usize, h: usize, w: usize) -> Result<NodeId, TensorError> {
        let [n, c, ih, iw] = self.value(input).dims4("crop")?;
        if h == 0 || w == 0 || top + h > ih || left + w > iw {
            return Err(TensorError::InvalidArgument(format!(
                "crop: window {h}x{w} at ({top},{left}) exceeds {ih}x{iw}"
            )));
        }
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * h * w);
        for plane in x.chunks(ih * iw) {
            for y in top..top + h {
                out.extend_from_slice(&plane[y * iw + left..y * iw + left + w]);
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, c, h, w], out), Op::Crop { input, top, left }))
    }

    /// Bilinear resize (half-pixel centres, clamp-to-edge) to `h`×`w`.
    pub fn resize_bilinear(&mut self, input: NodeId, h: usize, w: usize) -> Result<NodeId, TensorError> {
        let [n, c, ih, iw] = self.value(input).dims4("resize_bilinear")?;
        if h == 0 || w == 0 {
            return Err(TensorError::InvalidArgument("resize_bilinear: empty output".into()));
        }
        let out = kernels::resize_forward(self.value(input).data(), n * c, ih, iw, h, w);
        Ok(self.push(Tensor::from_parts(vec![n, c, h, w], out), Op::Resize(input)))
    }

    /// Forward value `replacement`, backward identity to `input`.
    pub fn straight_through(&mut self, input: NodeId, replacement: Tensor) -> Result<NodeId, TensorError> {
        if replacement.shape() != self.value(input).shape() {
            return Err(TensorError::InvalidArgument(format!(
                "straight_through: replacement shape {:?} differs from {:?}",
                replacement.shape(),
                self.value(input).shape()
            )));
        }
        replacement.ensure_finite("straight_through")?;
        Ok(self.push(replacement, Op::StraightThrough(input)))
    }

    /// Clears all gradients so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    /// Reverse-mode accumulation from a scalar loss.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        lv.ensure_finite("backward")?;
        let seed = Tensor::full(lv.shape(), 1.0);
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if node.op.parents().iter().any(|p| p.0 >= i) {
                return Err(TensorError::Cycle(i));
            }
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(seed);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            for (parent, pg) in self.local_grads(i, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradients of node `i`'s parents given the gradient `g` of its output.
    fn local_grads(&self, i: usize, g: &Tensor) -> Vec<(NodeId, Tensor)> {
        let node = &self.nodes[i];
        let gd = g.data();
        let like = |id: NodeId, data: Vec<f64>| (id, Tensor::from_parts(self.value(id).shape().to_vec(), data));
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let n = self.value(*input).shape()[0];
                let grads = kernels::conv2d_backward(
                    self.value(*input).data(),
                    n,
                    self.value(*weight).data(),
                    gd,
                    geom,
                    (self.needs(*input), self.needs(*weight), self.needs(*bias)),
                );
                let mut out = Vec::new();
                if let Some(dx) = grads.dx {
                    out.push(like(*input, dx));
                }
                if let Some(dw) = grads.dw {
                    out.push(like(*weight, dw));
                }
                if let Some(db) = grads.db {
                    out.push(like(*bias, db));
                }
                out
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let [n, c, h, w] = node.value.dims4("batchnorm2d").expect("rank checked in forward");
                let plane = h * w;
                let count = (n * plane) as f64;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * plane;
                        for j in base..base + plane {
                            dgamma[ch] += gd[j] * xhat[j];
                            dbeta[ch] += gd[j];
                        }
                    }
                }
                let mut dx = vec![0.0; gd.len()];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * plane;
                        for j in base..base + plane {
                            dx[j] = if *batch_stats {
                                gam[ch] * inv_std[ch] / count
                                    * (count * gd[j] - dbeta[ch] - xhat[j] * dgamma[ch])
                            } else {
                                gam[ch] * inv_std[ch] * gd[j]
                            };
                        }
                    }
                }
                vec![like(*input, dx), like(*gamma, dgamma), like(*beta, dbeta)]
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let dx = x
                    .iter()
                    .zip(gd)
                    .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                    .collect();
                vec![like(*a, dx)]
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let dx = y.iter().zip(gd).map(|(&s, &d)| d * s * (1.0 - s)).collect();
                vec![like(*a, dx)]
            }
            Op::Affine {
                input,
                weight,
                bias,
            } => {
                let [n, f] = self.value(*input).dims2("affine").expect("rank checked in forward");
                let gcount = self.value(*bias).numel();
                let (dx, dw, db) =
                    kernels::affine_backward(self.value(*input).data(), n, f, self.value(*weight).data(), gcount, gd);
                vec![like(*input, dx), like(*weight, dw), like(*bias, db)]
            }
            Op::GlobalAvgPool(a) => {
                let x = self.value(*a);
                let plane = x.shape()[2] * x.shape()[3];
                let mut dx = Vec::with_capacity(x.numel());
                for &d in gd {
                    dx.extend(std::iter::repeat(d / plane as f64).take(plane));
                }
                vec![like(*a, dx)]
            }
            Op::Concat(a, b) => {
                let [n, ca, h, w] = self.value(*a).dims4("concat").expect("rank checked in forward");
                let cb = self.value(*b).shape()[1];
                let plane = h * w;
                let (mut da, mut db) = (Vec::new(), Vec::new());
                for s in 0..n {
                    let chunk = &gd[s * (ca + cb) * plane..(s + 1) * (ca + cb) * plane];
                    da.extend_from_slice(&chunk[..ca * plane]);
                    db.extend_from_slice(&chunk[ca * plane..]);
                }
                vec![like(*a, da), like(*b, db)]
            }
            Op::Add(a, b) => vec![like(*a, gd.to_vec()), like(*b, gd.to_vec())],
            Op::Scale(a, f) => vec![like(*a, gd.iter().map(|d| d * f).collect())],
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                vec![like(*a, vec![gd[0]; n])]
            }
            Op::Mse(a, b) => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                let k = 2.0 * gd[0] / xa.len() as f64;
                let da: Vec<f64> = xa.iter().zip(xb).map(|(x, y)| k * (x - y)).collect();
                let db = da.iter().map(|v| -v).collect();
                vec![like(*a, da), like(*b, db)]
            }
            Op::BceLogits { logits, targets } => {
                let x = self.value(*logits).data();
                let k = gd[0] / x.len() as f64;
                let dx = x
                    .iter()
                    .zip(targets)
                    .map(|(&v, &t)| k * (kernels::sigmoid(v) - t))
                    .collect();
                vec![like(*logits, dx)]
            }
            Op::SoftmaxCe { logits, probs, labels } => {
                let k = probs.len() / labels.len();
                let scale = gd[0] / labels.len() as f64;
                let mut dx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (row, &l) in labels.iter().enumerate() {
                    dx[row * k + l] -= scale;
                }
                vec![like(*logits, dx)]
            }
            Op::Crop { input, top, left } => {
                let [_, _, ih, iw] = self.value(*input).dims4("crop").expect("rank checked in forward");
                let [_, _, h, w] = node.value.dims4("crop").expect("rank checked in forward");
                let mut dx = vec![0.0; self.value(*input).numel()];
                for (dst, src) in dx.chunks_mut(ih * iw).zip(gd.chunks(h * w)) {
                    for y in 0..h {
                        let row = (top + y) * iw + left;
                        dst[row..row + w].copy_from_slice(&src[y * w..(y + 1) * w]);
                    }
                }
                vec![like(*input, dx)]
            }
            Op::Resize(a) => {
                let [n, c, ih, iw] = self.value(*a).dims4("resize").expect("rank checked in forward");
                let [_, _, h, w] = node.value.dims4("resize").expect("rank checked in forward");
                vec![like(*a, kernels::resize_backward(gd, n * c, ih, iw, h, w))]
            }
            Op::StraightThrough(a) => vec![like(*a, gd.to_vec())],
        }
    }
}
