//! Aggregation GNNs: the aggregation operator followed by a per-node CNN.
//!
//! The aggregation matrix `A(S){x} = [x, Sx, ..., S^a x]` gives every node a
//! regular sequence of length `a + 1`. The CNN stage runs on those rows.
//! Convolutions are cyclic and written as `y_c = Σ_j h_j r_{(c+j) mod len}`,
//! which equals the row vector `r` times [`circulant_from_coeffs`], so output
//! position `m` of the first layer is exactly `p_m(S) x` at that node.
//!
//! [`circulant_from_coeffs`]: crate::filters::circulant_from_coeffs

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::PolyFilter;
use crate::graph::{spectral_norm, Graph, GraphSignal, Matrix};
use crate::rng;

/// Dense `nodes x features x len` tensor, row-major in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTensor {
    pub nodes: usize,
    pub features: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl NodeTensor {
    pub fn zeros(nodes: usize, features: usize, len: usize) -> Self {
        Self {
            nodes,
            features,
            len,
            data: vec![0.0; nodes * features * len],
        }
    }

    #[inline]
    pub fn idx(&self, i: usize, f: usize, c: usize) -> usize {
        (i * self.features + f) * self.len + c
    }

    #[inline]
    pub fn at(&self, i: usize, f: usize, c: usize) -> f64 {
        self.data[self.idx(i, f, c)]
    }

    /// Values of node `i` (features x len).
    pub fn node(&self, i: usize) -> &[f64] {
        let w = self.features * self.len;
        &self.data[i * w..(i + 1) * w]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.nodes, self.features, self.len)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Self) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Reorders nodes so that new node `i` is old node `perm[i]`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Self {
        let w = self.features * self.len;
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(&self.data[p * w..(p + 1) * w]);
        }
        Self { data, ..*self }
    }
}

/// `N x (a+1)` matrix whose column `k` is `S^k x`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggMatrix {
    pub data: Matrix,
}

impl AggMatrix {
    pub fn order(&self) -> usize {
        self.data.ncols() - 1
    }

    pub fn to_tensor(&self) -> NodeTensor {
        let (n, len) = self.data.shape();
        let mut t = NodeTensor::zeros(n, 1, len);
        for i in 0..n {
            for c in 0..len {
                t.data[i * len + c] = self.data[(i, c)];
            }
        }
        t
    }
}

/// Diffusion sequence `[x, Sx, ..., S^a x]` by repeated products.
pub fn aggregate(s: &Matrix, x: &GraphSignal, a: usize) -> Result<AggMatrix> {
    if !s.is_square() || s.nrows() != x.len() {
        return Err(Error::dim(format!(
            "shift {:?} with signal of length {}",
            s.shape(),
            x.len()
        )));
    }
    let n = x.len();
    let mut data = Matrix::zeros(n, a + 1);
    data.set_column(0, &x.to_vector());
    for k in 1..=a {
        let next = s * data.column(k - 1);
        data.set_column(k, &next);
    }
    Ok(AggMatrix { data })
}

/// Concatenated rows: `[x]_1, [Sx]_1, ..., [S^a x]_1, [x]_2, ...`.
pub fn row_vectorize(m: &AggMatrix) -> Vec<f64> {
    let (n, len) = m.data.shape();
    let mut out = Vec::with_capacity(n * len);
    for i in 0..n {
        out.extend(m.data.row(i).iter());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Relu,
    Abs,
    Tanh,
    Identity,
}

impl Nonlinearity {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Abs => x.abs(),
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Identity => x,
        }
    }

    /// Derivative; the subgradient at the kink of relu and abs is 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Nonlinearity::Identity => 1.0,
        }
    }

    pub fn has_kink(self) -> bool {
        matches!(self, Nonlinearity::Relu | Nonlinearity::Abs)
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "abs" => Ok(Self::Abs),
            "tanh" => Ok(Self::Tanh),
            "identity" => Ok(Self::Identity),
            other => Err(Error::param(format!("unknown nonlinearity {other:?}"))),
        }
    }
}

pub fn apply_nonlinearity(t: &NodeTensor, kind: Nonlinearity) -> NodeTensor {
    NodeTensor {
        data: t.data.iter().map(|&v| kind.apply(v)).collect(),
        ..*t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pooling {
    None,
    Max { stride: usize },
    Avg { stride: usize },
}

impl Pooling {
    fn stride(&self) -> usize {
        match *self {
            Pooling::None => 1,
            Pooling::Max { stride } | Pooling::Avg { stride } => stride,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride() < 1 {
            return Err(Error::param("pooling stride must be >= 1"));
        }
        Ok(())
    }

    /// Output length; a trailing partial window is kept.
    pub fn output_len(&self, len: usize) -> usize {
        len.div_ceil(self.stride())
    }

    /// Pools one sequence. For max pooling, `argmax[w]` is the input index
    /// that produced window `w` (ties go to the lowest index).
    pub fn pool_slice(&self, x: &[f64], out: &mut [f64], argmax: &mut [usize]) {
        let stride = self.stride();
        for (w, chunk) in x.chunks(stride).enumerate() {
            match self {
                Pooling::None => {
                    out[w] = chunk[0];
                    argmax[w] = w;
                }
                Pooling::Avg { .. } => {
                    out[w] = chunk.iter().sum::<f64>() / chunk.len() as f64;
                    argmax[w] = w * stride;
                }
                Pooling::Max { .. } => {
                    let mut best = 0;
                    for (k, &v) in chunk.iter().enumerate() {
                        if v > chunk[best] {
                            best = k;
                        }
                    }
                    out[w] = chunk[best];
                    argmax[w] = w * stride + best;
                }
            }
        }
    }
}

/// Pools along the per-node sequence axis of every feature.
pub fn apply_pooling(t: &NodeTensor, pool: Pooling) -> Result<NodeTensor> {
    Ok(pool_with_argmax(t, pool)?.0)
}

fn pool_with_argmax(t: &NodeTensor, pool: Pooling) -> Result<(NodeTensor, Vec<usize>)> {
    pool.validate()?;
    let out_len = pool.output_len(t.len);
    let mut out = NodeTensor::zeros(t.nodes, t.features, out_len);
    let mut argmax = vec![0usize; out.data.len()];
    for (row, (o, a)) in t
        .data
        .chunks(t.len.max(1))
        .zip(out.data.chunks_mut(out_len.max(1)).zip(argmax.chunks_mut(out_len.max(1))))
    {
        pool.pool_slice(row, o, a);
    }
    Ok((out, argmax))
}

fn pool_backward(grad_out: &NodeTensor, argmax: &[usize], pool: Pooling, in_len: usize) -> NodeTensor {
    let mut grad = NodeTensor::zeros(grad_out.nodes, grad_out.features, in_len);
    let stride = pool.stride();
    let rows = grad_out.nodes * grad_out.features;
    for r in 0..rows {
        for w in 0..grad_out.len {
            let g = grad_out.data[r * grad_out.len + w];
            match pool {
                Pooling::None => grad.data[r * in_len + w] += g,
                Pooling::Max { .. } => grad.data[r * in_len + argmax[r * grad_out.len + w]] += g,
                Pooling::Avg { .. } => {
                    let start = w * stride;
                    let end = (start + stride).min(in_len);
                    let share = g / (end - start) as f64;
                    for c in start..end {
                        grad.data[r * in_len + c] += share;
                    }
                }
            }
        }
    }
    grad
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstLayerMode {
    Shared,
    PerNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnLayerSpec {
    pub taps: usize,
    pub features_in: usize,
    pub features_out: usize,
    pub nonlinearity: Nonlinearity,
    pub pool: Pooling,
}

impl CnnLayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.taps < 1 || self.features_in < 1 || self.features_out < 1 {
            return Err(Error::param("taps and features must be >= 1"));
        }
        self.pool.validate()
    }

    fn weights_per_block(&self) -> usize {
        self.features_out * self.features_in * self.taps
    }
}

/// A CNN layer: its shape plus weights laid out `[block][out][in][tap]`, with
/// one block per node for a per-node first layer and a single block otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnLayer {
    #[serde(flatten)]
    pub spec: CnnLayerSpec,
    pub weights: Vec<f64>,
}

impl CnnLayer {
    fn blocks(&self) -> usize {
        self.weights.len() / self.spec.weights_per_block().max(1)
    }

    #[inline]
    fn w(&self, block: usize, fo: usize, fi: usize, k: usize) -> f64 {
        let s = &self.spec;
        self.weights[((block * s.features_out + fo) * s.features_in + fi) * s.taps + k]
    }

    /// The filter between input feature `fi` and output feature `fo`.
    pub fn filter(&self, block: usize, fo: usize, fi: usize) -> PolyFilter {
        let coeffs = (0..self.spec.taps).map(|k| self.w(block, fo, fi, k)).collect();
        PolyFilter::new(coeffs).expect("weights validated finite")
    }

    /// Matrix of the per-node linear map on a sequence of length `len`,
    /// rows indexed `(fo, c)` and columns `(fi, c')`.
    pub fn operator_matrix(&self, len: usize) -> Matrix {
        let s = &self.spec;
        let mut m = Matrix::zeros(s.features_out * len, s.features_in * len);
        for fo in 0..s.features_out {
            for fi in 0..s.features_in {
                for c in 0..len {
                    for k in 0..s.taps {
                        m[(fo * len + c, fi * len + (c + k) % len)] += self.w(0, fo, fi, k);
                    }
                }
            }
        }
        m
    }
}

fn conv_forward(layer: &CnnLayer, input: &NodeTensor) -> NodeTensor {
    let s = &layer.spec;
    let len = input.len;
    let per_node = layer.blocks() > 1;
    let mut out = NodeTensor::zeros(input.nodes, s.features_out, len);
    for i in 0..input.nodes {
        let block = if per_node { i } else { 0 };
        for fo in 0..s.features_out {
            for fi in 0..s.features_in {
                let base = input.idx(i, fi, 0);
                let row = &input.data[base..base + len];
                for k in 0..s.taps {
                    let w = layer.w(block, fo, fi, k);
                    if w == 0.0 {
                        continue;
                    }
                    let o = out.idx(i, fo, 0);
                    for c in 0..len {
                        out.data[o + c] += w * row[(c + k) % len];
                    }
                }
            }
        }
    }
    out
}

/// Returns the gradient w.r.t. the input and accumulates weight gradients.
fn conv_backward(layer: &CnnLayer, input: &NodeTensor, grad_out: &NodeTensor, grad_w: &mut [f64]) -> NodeTensor {
    let s = &layer.spec;
    let len = input.len;
    let per_node = layer.blocks() > 1;
    let mut grad_in = NodeTensor::zeros(input.nodes, input.features, len);
    for i in 0..input.nodes {
        let block = if per_node { i } else { 0 };
        for fo in 0..s.features_out {
            let go = grad_out.idx(i, fo, 0);
            for fi in 0..s.features_in {
                let base = input.idx(i, fi, 0);
                for k in 0..s.taps {
                    let widx = ((block * s.features_out + fo) * s.features_in + fi) * s.taps + k;
                    let w = layer.weights[widx];
                    let mut acc = 0.0;
                    for c in 0..len {
                        let g = grad_out.data[go + c];
                        let src = base + (c + k) % len;
                        acc += g * input.data[src];
                        grad_in.data[src] += w * g;
                    }
                    grad_w[widx] += acc;
                }
            }
        }
    }
    grad_in
}

/// First-layer filters, shared by all nodes or one bank per node.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterBank {
    /// `filters[feature]`
    Shared(Vec<PolyFilter>),
    /// `filters[node][feature]`
    PerNode(Vec<Vec<PolyFilter>>),
}

impl FilterBank {
    pub fn features(&self) -> usize {
        match self {
            FilterBank::Shared(f) => f.len(),
            FilterBank::PerNode(f) => f.first().map_or(0, Vec::len),
        }
    }

    pub fn all(&self) -> Vec<&PolyFilter> {
        match self {
            FilterBank::Shared(f) => f.iter().collect(),
            FilterBank::PerNode(f) => f.iter().flatten().collect(),
        }
    }

    fn to_layer(&self, len: usize, nodes: usize) -> Result<CnnLayer> {
        let features = self.features();
        if features == 0 {
            return Err(Error::param("empty filter bank"));
        }
        let groups: Vec<&Vec<PolyFilter>> = match self {
            FilterBank::Shared(f) => vec![f],
            FilterBank::PerNode(f) => {
                if f.len() != nodes {
                    return Err(Error::dim(format!("{} filter banks for {nodes} nodes", f.len())));
                }
                if f.iter().any(|b| b.len() != features) {
                    return Err(Error::dim("per-node banks differ in feature count"));
                }
                f.iter().collect()
            }
        };
        let mut weights = Vec::with_capacity(groups.len() * features * len);
        for bank in groups {
            for f in bank {
                weights.extend_from_slice(f.padded(len)?.coeffs());
            }
        }
        Ok(CnnLayer {
            spec: CnnLayerSpec {
                taps: len,
                features_in: 1,
                features_out: features,
                nonlinearity: Nonlinearity::Identity,
                pool: Pooling::None,
            },
            weights,
        })
    }
}

/// The linear map `Φ(S, H_1){x}`: every aggregation row times each filter's
/// circulant. Filters shorter than `a + 1` are zero-padded.
pub fn first_layer_operator(s: &Matrix, x: &GraphSignal, bank: &FilterBank, a: usize) -> Result<NodeTensor> {
    let agg = aggregate(s, x, a)?;
    let layer = bank.to_layer(a + 1, x.len())?;
    Ok(conv_forward(&layer, &agg.to_tensor()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutKind {
    Sum,
    Mean,
    Linear,
}

/// Scalar readout over the final per-node tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum Readout {
    /// Sum of the last feature over nodes and positions.
    Sum,
    Mean,
    /// `Σ w · out + bias`, weights laid out like the final tensor.
    Linear { weights: Vec<f64>, bias: f64 },
}

impl Readout {
    pub fn kind(&self) -> ReadoutKind {
        match self {
            Readout::Sum => ReadoutKind::Sum,
            Readout::Mean => ReadoutKind::Mean,
            Readout::Linear { .. } => ReadoutKind::Linear,
        }
    }

    fn apply(&self, out: &NodeTensor) -> Result<f64> {
        match self {
            Readout::Sum | Readout::Mean => {
                let last = out.features - 1;
                let mut total = 0.0;
                for i in 0..out.nodes {
                    for c in 0..out.len {
                        total += out.at(i, last, c);
                    }
                }
                Ok(if matches!(self, Readout::Mean) {
                    total / out.nodes as f64
                } else {
                    total
                })
            }
            Readout::Linear { weights, bias } => {
                if weights.len() != out.data.len() {
                    return Err(Error::dim(format!(
                        "readout has {} weights for {} outputs",
                        weights.len(),
                        out.data.len()
                    )));
                }
                Ok(weights.iter().zip(&out.data).map(|(w, v)| w * v).sum::<f64>() + bias)
            }
        }
    }

    /// Gradient of the readout w.r.t. the final tensor.
    fn backward(&self, out: &NodeTensor) -> NodeTensor {
        let mut g = NodeTensor::zeros(out.nodes, out.features, out.len);
        match self {
            Readout::Sum | Readout::Mean => {
                let v = if matches!(self, Readout::Mean) {
                    1.0 / out.nodes as f64
                } else {
                    1.0
                };
                let last = out.features - 1;
                for i in 0..out.nodes {
                    for c in 0..out.len {
                        let k = g.idx(i, last, c);
                        g.data[k] = v;
                    }
                }
            }
            Readout::Linear { weights, .. } => g.data.copy_from_slice(weights),
        }
        g
    }
}

/// Aggregation GNN: aggregation of order `a`, a CNN applied row-wise, and a
/// scalar readout.
#[derive(Debug, Clone, PartialEq)]
pub struct AggGnnModel {
    pub a: usize,
    pub first_layer_mode: FirstLayerMode,
    pub layers: Vec<CnnLayer>,
    pub readout: Readout,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    a: usize,
    first_layer_mode: FirstLayerMode,
    layers: Vec<CnnLayer>,
    readout: ReadoutKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    readout_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    readout_bias: Option<f64>,
}

/// Per-node outputs together with the scalar readout.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub nodes: NodeTensor,
    pub readout: f64,
}

/// Intermediate values of one layer, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub input: NodeTensor,
    pub pre: NodeTensor,
    pub post: NodeTensor,
    pub output: NodeTensor,
    pub argmax: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    pub readout: f64,
}

impl ForwardTrace {
    pub fn output(&self) -> &NodeTensor {
        &self.layers.last().expect("model has layers").output
    }
}

impl AggGnnModel {
    /// Randomly initialized model with weights uniform in `±1/sqrt(fan_in)`.
    ///
    /// `nodes` is required for a per-node first layer or a linear readout.
    pub fn init(
        a: usize,
        mode: FirstLayerMode,
        specs: &[CnnLayerSpec],
        readout: ReadoutKind,
        nodes: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let need_nodes = mode == FirstLayerMode::PerNode || readout == ReadoutKind::Linear;
        let n = match (need_nodes, nodes) {
            (true, None) => return Err(Error::param("node count required for this model")),
            (_, n) => n.unwrap_or(1),
        };
        let mut rng = rng::seeded(seed);
        let mut layers = Vec::with_capacity(specs.len());
        let mut len = a + 1;
        for (l, spec) in specs.iter().enumerate() {
            spec.validate()?;
            let blocks = if l == 0 && mode == FirstLayerMode::PerNode { n } else { 1 };
            let bound = 1.0 / ((spec.features_in * spec.taps) as f64).sqrt();
            let weights = (0..blocks * spec.weights_per_block())
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            layers.push(CnnLayer { spec: *spec, weights });
            len = spec.pool.output_len(len);
        }
        let readout = match readout {
            ReadoutKind::Sum => Readout::Sum,
            ReadoutKind::Mean => Readout::Mean,
            ReadoutKind::Linear => {
                let f_last = specs.last().map_or(1, |s| s.features_out);
                let count = n * f_last * len;
                let bound = 1.0 / (count as f64).sqrt();
                Readout::Linear {
                    weights: (0..count).map(|_| rng.random_range(-bound..=bound)).collect(),
                    bias: 0.0,
                }
            }
        };
        let model = Self {
            a,
            first_layer_mode: mode,
            layers,
            readout,
        };
        model.validate()?;
        Ok(model)
    }

    /// Single-layer model whose first layer is the given filter bank.
    pub fn from_filters(a: usize, bank: &FilterBank, nonlinearity: Nonlinearity, pool: Pooling, readout: Readout) -> Result<Self> {
        let nodes = match bank {
            FilterBank::Shared(_) => 1,
            FilterBank::PerNode(b) => b.len(),
        };
        let mut layer = bank.to_layer(a + 1, nodes)?;
        layer.spec.nonlinearity = nonlinearity;
        layer.spec.pool = pool;
        let model = Self {
            a,
            first_layer_mode: match bank {
                FilterBank::Shared(_) => FirstLayerMode::Shared,
                FilterBank::PerNode(_) => FirstLayerMode::PerNode,
            },
            layers: vec![layer],
            readout,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| Error::param("model needs at least one layer"))?;
        if first.spec.features_in != 1 {
            return Err(Error::param("first layer takes a single input channel"));
        }
        if first.spec.taps > self.a + 1 {
            return Err(Error::param(format!(
                "first-layer taps {} exceed a+1 = {}",
                first.spec.taps,
                self.a + 1
            )));
        }
        let mut len = self.a + 1;
        let mut features = 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let s = &layer.spec;
            s.validate()?;
            if s.features_in != features {
                return Err(Error::dim(format!(
                    "layer {l} expects {} input features, got {features}",
                    s.features_in
                )));
            }
            if s.taps > len {
                return Err(Error::dim(format!("layer {l} has {} taps for length {len}", s.taps)));
            }
            let per_block = s.weights_per_block();
            let ok = if l == 0 && self.first_layer_mode == FirstLayerMode::PerNode {
                layer.weights.len() % per_block == 0 && !layer.weights.is_empty()
            } else {
                layer.weights.len() == per_block
            };
            if !ok {
                return Err(Error::dim(format!(
                    "layer {l} has {} weights, block size {per_block}",
                    layer.weights.len()
                )));
            }
            if layer.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::NonFinite("layer weights"));
            }
            features = s.features_out;
            len = s.pool.output_len(len);
        }
        if let Readout::Linear { weights, bias } = &self.readout {
            if weights.iter().chain(std::iter::once(bias)).any(|w| !w.is_finite()) {
                return Err(Error::NonFinite("readout weights"));
            }
        }
        Ok(())
    }

    /// Node count the model is tied to, if any.
    pub fn fixed_nodes(&self) -> Option<usize> {
        if self.first_layer_mode == FirstLayerMode::PerNode {
            return Some(self.layers[0].blocks());
        }
        match &self.readout {
            Readout::Linear { weights, .. } => {
                let per_node = self.output_features() * self.output_len();
                Some(weights.len() / per_node.max(1))
            }
            _ => None,
        }
    }

    pub fn output_features(&self) -> usize {
        self.layers.last().map_or(1, |l| l.spec.features_out)
    }

    /// Sequence length after the last layer.
    pub fn output_len(&self) -> usize {
        self.layers
            .iter()
            .fold(self.a + 1, |len, l| l.spec.pool.output_len(len))
    }

    /// Input sequence length of each layer.
    pub fn layer_lengths(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut len = self.a + 1;
        for l in &self.layers {
            out.push(len);
            len = l.spec.pool.output_len(len);
        }
        out
    }

    pub fn first_layer_filters(&self) -> FilterBank {
        let layer = &self.layers[0];
        let features = layer.spec.features_out;
        let bank = |block| (0..features).map(|f| layer.filter(block, f, 0)).collect::<Vec<_>>();
        match self.first_layer_mode {
            FirstLayerMode::Shared => FilterBank::Shared(bank(0)),
            FirstLayerMode::PerNode => FilterBank::PerNode((0..layer.blocks()).map(bank).collect()),
        }
    }

    /// First-layer filters padded to `a + 1` taps.
    pub fn padded_first_layer_filters(&self) -> Vec<PolyFilter> {
        self.first_layer_filters()
            .all()
            .into_iter()
            .map(|f| f.padded(self.a + 1).expect("taps validated"))
            .collect()
    }

    /// The linear first-layer output (no nonlinearity, no pooling).
    pub fn first_layer_output(&self, s: &Matrix, x: &GraphSignal) -> Result<NodeTensor> {
        self.check_nodes(x.len())?;
        let agg = aggregate(s, x, self.a)?;
        Ok(conv_forward(&self.layers[0], &agg.to_tensor()))
    }

    /// Spectral norms of the per-node linear maps of layers 2..L.
    pub fn deep_layer_norms(&self) -> Result<Vec<f64>> {
        let lens = self.layer_lengths();
        self.layers
            .iter()
            .zip(lens)
            .skip(1)
            .map(|(l, len)| spectral_norm(&l.operator_matrix(len)))
            .collect()
    }

    fn check_nodes(&self, n: usize) -> Result<()> {
        match self.fixed_nodes() {
            Some(m) if m != n => Err(Error::dim(format!("model built for {m} nodes, graph has {n}"))),
            _ => Ok(()),
        }
    }

    pub fn forward(&self, s: &Matrix, x: &GraphSignal) -> Result<ForwardOutput> {
        let trace = self.forward_trace(s, x)?;
        let readout = trace.readout;
        let nodes = trace.layers.into_iter().last().expect("layers").output;
        Ok(ForwardOutput { nodes, readout })
    }

    pub fn forward_trace(&self, s: &Matrix, x: &GraphSignal) -> Result<ForwardTrace> {
        self.check_nodes(x.len())?;
        let agg = aggregate(s, x, self.a)?;
        let mut current = agg.to_tensor();
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let pre = conv_forward(layer, &current);
            let post = apply_nonlinearity(&pre, layer.spec.nonlinearity);
            let (output, argmax) = pool_with_argmax(&post, layer.spec.pool)?;
            let input = std::mem::replace(&mut current, output.clone());
            layers.push(LayerTrace {
                input,
                pre,
                post,
                output,
                argmax,
            });
        }
        let readout = self.readout.apply(&current)?;
        Ok(ForwardTrace { layers, readout })
    }

    /// Backpropagates `d loss / d readout = upstream` through a trace,
    /// accumulating into `grad` (laid out like [`AggGnnModel::params`]).
    pub fn backward_trace(&self, trace: &ForwardTrace, upstream: f64, grad: &mut [f64]) {
        let offsets = self.layer_offsets();
        let out = trace.output();
        if let Readout::Linear { weights, .. } = &self.readout {
            let base = offsets[self.layers.len()];
            for (k, v) in out.data.iter().enumerate() {
                grad[base + k] += upstream * v;
            }
            grad[base + weights.len()] += upstream;
        }
        let mut g = self.readout.backward(out);
        g.data.iter_mut().for_each(|v| *v *= upstream);
        for (l, (layer, t)) in self.layers.iter().zip(&trace.layers).enumerate().rev() {
            let mut g_post = pool_backward(&g, &t.argmax, layer.spec.pool, t.post.len);
            let act = layer.spec.nonlinearity;
            for (gv, &u) in g_post.data.iter_mut().zip(&t.pre.data) {
                *gv *= act.derivative(u);
            }
            let w_grad = &mut grad[offsets[l]..offsets[l + 1]];
            g = conv_backward(layer, &t.input, &g_post, w_grad);
        }
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for l in &self.layers {
            acc += l.weights.len();
            offsets.push(acc);
        }
        offsets
    }

    pub fn param_count(&self) -> usize {
        let layers: usize = self.layers.iter().map(|l| l.weights.len()).sum();
        layers
            + match &self.readout {
                Readout::Linear { weights, .. } => weights.len() + 1,
                _ => 0,
            }
    }

    /// All trainable weights: layers in order, then readout weights and bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.layers.iter().flat_map(|l| l.weights.iter().copied()).collect();
        if let Readout::Linear { weights, bias } = &self.readout {
            p.extend_from_slice(weights);
            p.push(*bias);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::dim(format!(
                "{} parameters for a model with {}",
                p.len(),
                self.param_count()
            )));
        }
        let mut rest = p;
        for l in &mut self.layers {
            let (head, tail) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(head);
            rest = tail;
        }
        if let Readout::Linear { weights, bias } = &mut self.readout {
            let (head, tail) = rest.split_at(weights.len());
            weights.copy_from_slice(head);
            *bias = tail[0];
        }
        Ok(())
    }

    /// Human-readable name of parameter `idx`.
    pub fn param_name(&self, idx: usize) -> String {
        let offsets = self.layer_offsets();
        for l in 0..self.layers.len() {
            if idx < offsets[l + 1] {
                return format!("layer{}.w[{}]", l + 1, idx - offsets[l]);
            }
        }
        let r = idx - offsets[self.layers.len()];
        match &self.readout {
            Readout::Linear { weights, .. } if r == weights.len() => "readout.bias".into(),
            _ => format!("readout.w[{r}]"),
        }
    }

    /// Offset and length of the first-layer weights in [`AggGnnModel::params`].
    pub fn first_layer_param_range(&self) -> std::ops::Range<usize> {
        0..self.layers[0].weights.len()
    }

    pub fn to_json(&self) -> Result<String> {
        let (readout_weights, readout_bias) = match &self.readout {
            Readout::Linear { weights, bias } => (Some(weights.clone()), Some(*bias)),
            _ => (None, None),
        };
        let doc = ModelDoc {
            a: self.a,
            first_layer_mode: self.first_layer_mode,
            layers: self.layers.clone(),
            readout: self.readout.kind(),
            readout_weights,
            readout_bias,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(s)?;
        let readout = match doc.readout {
            ReadoutKind::Sum => Readout::Sum,
            ReadoutKind::Mean => Readout::Mean,
            ReadoutKind::Linear => Readout::Linear {
                weights: doc
                    .readout_weights
                    .ok_or_else(|| Error::param("linear readout needs readout_weights"))?,
                bias: doc.readout_bias.unwrap_or(0.0),
            },
        };
        let model = Self {
            a: doc.a,
            first_layer_mode: doc.first_layer_mode,
            layers: doc.layers,
            readout,
        };
        model.validate()?;
        Ok(model)
    }
}

/// One graph-convolution layer of a selection GNN, weights `[out][in][tap]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelGnnLayer {
    pub taps: usize,
    pub features_in: usize,
    pub features_out: usize,
    pub nonlinearity: Nonlinearity,
    pub weights: Vec<f64>,
}

/// Selection GNN baseline: `y = σ(Σ_k h_k S^k y_prev)` with feature mixing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelGnnModel {
    pub layers: Vec<SelGnnLayer>,
}

impl SelGnnModel {
    pub fn new(layers: Vec<SelGnnLayer>) -> Result<Self> {
        let model = Self { layers };
        model.validate()?;
        Ok(model)
    }

    pub fn init(shapes: &[(usize, usize, usize, Nonlinearity)], seed: u64) -> Result<Self> {
        let mut rng = rng::seeded(seed);
        let layers = shapes
            .iter()
            .map(|&(taps, fi, fo, nonlinearity)| {
                let bound = 1.0 / ((fi * taps).max(1) as f64).sqrt();
                SelGnnLayer {
                    taps,
                    features_in: fi,
                    features_out: fo,
                    nonlinearity,
                    weights: (0..taps * fi * fo).map(|_| rng.random_range(-bound..=bound)).collect(),
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::param("selection GNN needs at least one layer"));
        }
        let mut features = self.layers[0].features_in;
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.taps < 1 || layer.features_in < 1 || layer.features_out < 1 {
                return Err(Error::param("taps and features must be >= 1"));
            }
            if layer.features_in != features {
                return Err(Error::dim(format!("layer {l} input features mismatch")));
            }
            if layer.weights.len() != layer.taps * layer.features_in * layer.features_out {
                return Err(Error::dim(format!("layer {l} weight count mismatch")));
            }
            features = layer.features_out;
        }
        Ok(())
    }

    /// `x` is `N x F_0`; returns `N x F_L`.
    pub fn forward(&self, s: &Matrix, x: &Matrix) -> Result<Matrix> {
        if !s.is_square() || s.nrows() != x.nrows() {
            return Err(Error::dim("shift and input disagree on node count"));
        }
        if x.ncols() != self.layers[0].features_in {
            return Err(Error::dim("input feature count mismatch"));
        }
        let mut y = x.clone();
        for layer in &self.layers {
            let n = y.nrows();
            let mut out = Matrix::zeros(n, layer.features_out);
            let mut diffused = y.clone();
            for k in 0..layer.taps {
                if k > 0 {
                    diffused = s * &diffused;
                }
                for fo in 0..layer.features_out {
                    for fi in 0..layer.features_in {
                        let h = layer.weights[(fo * layer.features_in + fi) * layer.taps + k];
                        if h != 0.0 {
                            let mut col = out.column_mut(fo);
                            col.axpy(h, &diffused.column(fi), 1.0);
                        }
                    }
                }
            }
            y = out.map(|v| layer.nonlinearity.apply(v));
        }
        Ok(y)
    }
}

/// Relabels nodes so that new node `i` is old node `perm[i]`:
/// returns `P S P^T` and `P x`.
pub fn permutation_conjugate(g: &Graph, x: &GraphSignal, perm: &[usize]) -> Result<(Graph, GraphSignal)> {
    let n = g.n();
    if perm.len() != n || x.len() != n {
        return Err(Error::dim("permutation, graph and signal sizes differ"));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::param("permutation is not a bijection"));
        }
    }
    let s = g.shift();
    let shift = Matrix::from_fn(n, n, |i, j| s[(perm[i], perm[j])]);
    let labels = g.labels().map(|l| perm.iter().map(|&p| l[p].clone()).collect());
    let signal = GraphSignal(perm.iter().map(|&p| x.0[p]).collect());
    Ok((Graph::new(shift, labels)?, signal))
}
