//! The feedforward network, the simple CNN and the proposed deeper CNN, plus
//! the generic [`Network`] container and its binary persistence format.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Init, Layer, LayerSpec, Mode, Padding};
use crate::seed;
use crate::tensor::{Scalar, Tensor};
use crate::NUM_CLASSES;

/// The four compared model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Tree,
    Ffnn,
    SimpleCnn,
    ProposedCnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Tree,
        ModelKind::Ffnn,
        ModelKind::SimpleCnn,
        ModelKind::ProposedCnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Tree => "tree",
            ModelKind::Ffnn => "ffnn",
            ModelKind::SimpleCnn => "simple_cnn",
            ModelKind::ProposedCnn => "proposed_cnn",
        }
    }

    pub fn is_neural(self) -> bool {
        self != ModelKind::Tree
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown model {s:?} (expected tree, ffnn, simple_cnn or proposed_cnn)"
                ))
            })
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Architecture hyperparameters. [`Default`] gives the full-size networks;
/// [`ArchConfig::toy`] a miniature of each for gradient checking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Per-sample input shape `[C, H, W]`.
    pub input: [usize; 3],
    pub classes: usize,
    pub padding: Padding,
    pub ffnn_hidden: [usize; 2],
    pub ffnn_dropout: f32,
    pub simple_filters: [usize; 2],
    pub simple_dense: usize,
    pub proposed_filters: [usize; 6],
    pub proposed_dense: usize,
    pub proposed_l2: f32,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input: [1, 48, 48],
            classes: NUM_CLASSES,
            padding: Padding::Valid,
            ffnn_hidden: [1024, 512],
            ffnn_dropout: 0.2,
            simple_filters: [32, 64],
            simple_dense: 128,
            proposed_filters: [64, 64, 128, 128, 256, 256],
            proposed_dense: 512,
            proposed_l2: 0.001,
        }
    }
}

impl ArchConfig {
    /// 12×12 input, at most 8 channels, same padding.
    pub fn toy() -> Self {
        ArchConfig {
            input: [1, 12, 12],
            padding: Padding::Same,
            ffnn_hidden: [16, 8],
            simple_filters: [4, 8],
            simple_dense: 16,
            proposed_filters: [2, 2, 4, 4, 8, 8],
            proposed_dense: 16,
            ..ArchConfig::default()
        }
    }

    /// Layer list of `kind`. The decision tree has none.
    pub fn layer_specs(&self, kind: ModelKind) -> Result<Vec<LayerSpec>> {
        use LayerSpec::*;
        let pad = self.padding;
        let conv = |f| LayerSpec::conv(f, pad);
        let specs = match kind {
            ModelKind::Tree => {
                return Err(Error::InvalidConfig(
                    "the decision tree is not a layered network".into(),
                ))
            }
            ModelKind::Ffnn => {
                let rate = self.ffnn_dropout;
                vec![
                    Flatten,
                    LayerSpec::dense(self.ffnn_hidden[0]),
                    ReLU,
                    Dropout { rate },
                    LayerSpec::dense(self.ffnn_hidden[1]),
                    ReLU,
                    Dropout { rate },
                    LayerSpec::dense(self.classes),
                    Softmax,
                ]
            }
            ModelKind::SimpleCnn => {
                let [f1, f2] = self.simple_filters;
                vec![
                    conv(f1),
                    ReLU,
                    conv(f2),
                    ReLU,
                    MaxPool2D { pool: 2 },
                    Dropout { rate: 0.25 },
                    Flatten,
                    LayerSpec::dense(self.simple_dense),
                    ReLU,
                    Dropout { rate: 0.5 },
                    LayerSpec::dense(self.classes),
                    Softmax,
                ]
            }
            ModelKind::ProposedCnn => {
                let f = self.proposed_filters;
                vec![
                    conv(f[0]),
                    ReLU,
                    conv(f[1]),
                    ReLU,
                    MaxPool2D { pool: 2 },
                    Dropout { rate: 0.25 },
                    conv(f[2]),
                    ReLU,
                    conv(f[3]),
                    ReLU,
                    conv(f[4]),
                    ReLU,
                    conv(f[5]),
                    ReLU,
                    MaxPool2D { pool: 2 },
                    Dropout { rate: 0.25 },
                    Flatten,
                    Dense {
                        units: self.proposed_dense,
                        l2: self.proposed_l2,
                    },
                    ReLU,
                    Dropout { rate: 0.5 },
                    LayerSpec::dense(self.classes),
                    Softmax,
                ]
            }
        };
        Ok(specs)
    }
}

/// An ordered stack of layers bound to a per-sample input shape.
#[derive(Debug, Clone)]
pub struct Network<T: Scalar = f32> {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    /// Bind `specs` in order, validating every adjacent shape. The last layer
    /// must be a softmax. Parameters start at zero; see [`initialize`](Self::initialize).
    pub fn from_specs(name: &str, input_shape: &[usize], specs: &[LayerSpec]) -> Result<Self> {
        if !matches!(specs.last(), Some(LayerSpec::Softmax)) {
            return Err(Error::InvalidConfig(format!(
                "network {name:?} must end in a softmax layer"
            )));
        }
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let layer = Layer::new(*spec, &shape).map_err(|e| {
                Error::InvalidConfig(format!("layer {i} ({}) of {name}: {e}", spec.name()))
            })?;
            shape = layer.output_shape().to_vec();
            layers.push(layer);
        }
        Ok(Network {
            name: name.to_string(),
            input_shape: input_shape.to_vec(),
            layers,
        })
    }

    /// Seeded weight initialization: He-uniform for layers feeding a ReLU,
    /// Glorot-uniform for the layer feeding the softmax, zero biases.
    pub fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_named(seed, "init"));
        for i in 0..self.layers.len() {
            let feeds_softmax = self.layers[i + 1..]
                .iter()
                .map(|l| *l.spec())
                .find(|s| !matches!(s, LayerSpec::Dropout { .. }))
                .is_some_and(|s| s == LayerSpec::Softmax);
            let scheme = if feeds_softmax {
                Init::GlorotUniform
            } else {
                Init::HeUniform
            };
            self.layers[i].initialize(scheme, &mut rng);
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output_shape()[0])
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| *l.spec()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Per-layer output shapes, starting with the input.
    pub fn shape_trace(&self) -> Vec<(&'static str, Vec<usize>)> {
        std::iter::once(("input", self.input_shape.clone()))
            .chain(
                self.layers
                    .iter()
                    .map(|l| (l.spec().name(), l.output_shape().to_vec())),
            )
            .collect()
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params().iter())
    }

    pub fn params_and_grads(&mut self) -> impl Iterator<Item = (&mut Tensor<T>, &Tensor<T>)> {
        self.layers.iter_mut().flat_map(|l| l.params_and_grads())
    }

    pub fn zero_grads(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grads);
    }

    /// Replace every parameter tensor, in layer order.
    pub fn set_params(&mut self, mut params: Vec<Tensor<T>>) -> Result<()> {
        let expected: usize = self.layers.iter().map(|l| l.params().len()).sum();
        if params.len() != expected {
            return Err(Error::ModelFormat(format!(
                "architecture has {expected} parameter tensors, got {}",
                params.len()
            )));
        }
        for layer in &mut self.layers {
            let rest = params.split_off(layer.params().len());
            layer.set_params(std::mem::replace(&mut params, rest))?;
        }
        Ok(())
    }

    fn check_batch(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::shape(
                "network input",
                format!(
                    "expected [N, {}], got {:?}",
                    self.input_shape
                        .iter()
                        .map(usize::to_string)
                        .collect::<Vec<_>>()
                        .join(", "),
                    x.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Batch forward pass with activation caching. Each layer's dropout mask
    /// is seeded from `seed` and the layer index.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, seed: u64) -> Result<Tensor<T>> {
        self.check_batch(x)?;
        let mut act = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            act = layer.forward(&act, mode, seed::derive(seed, i as u64))?;
        }
        Ok(act)
    }

    /// Inference over a batch; dropout is inactive and nothing is cached.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(x)?;
        let mut act = x.clone();
        for layer in &self.layers {
            act = layer.infer(&act)?;
        }
        Ok(act)
    }

    /// Probability vector for one `[1, 48, 48]` image (or whatever the
    /// network's input shape is).
    pub fn predict(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        if image.shape() != self.input_shape.as_slice() {
            return Err(Error::shape(
                "predict",
                format!("expected image {:?}, got {:?}", self.input_shape, image.shape()),
            ));
        }
        let batch = image.reshape(&[&[1][..], image.shape()].concat())?;
        let out = self.infer(&batch)?;
        out.into_shape(&[self.output_len()])
    }

    /// Backpropagate `grad` (with respect to the network output) through
    /// every layer. Returns the gradient with respect to the input.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        self.backward_from(self.layers.len(), grad, true)
            .map(|g| g.expect("input gradient requested"))
    }

    /// Backpropagate a gradient taken with respect to the logits, i.e. the
    /// input of the final softmax. Used with the fused softmax/cross-entropy
    /// gradient `probs - onehot`. The first layer's input gradient is skipped.
    pub fn backward_from_logits(&mut self, grad_logits: &Tensor<T>) -> Result<()> {
        let n = self.layers.len() - 1;
        self.backward_from(n, grad_logits, false).map(drop)
    }

    fn backward_from(
        &mut self,
        end: usize,
        grad: &Tensor<T>,
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        let mut g = grad.clone();
        for i in (0..end).rev() {
            let need = i > 0 || need_input;
            match self.layers[i].backward(&g, need)? {
                Some(next) => g = next,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }

    /// Add each layer's L2 gradient and return the total penalty.
    pub fn apply_l2(&mut self) -> T {
        self.layers
            .iter_mut()
            .map(Layer::apply_l2)
            .fold(T::zero(), |a, b| a + b)
    }

    pub fn l2_penalty(&self) -> T {
        self.layers
            .iter()
            .map(Layer::l2_penalty)
            .fold(T::zero(), |a, b| a + b)
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// Same architecture and parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let mut net = Network::<U>::from_specs(&self.name, &self.input_shape, &self.specs())
            .expect("architecture already validated");
        net.set_params(self.params().map(Tensor::cast).collect())
            .expect("same architecture");
        net
    }
}

/// Build and initialize the named architecture.
pub fn build<T: Scalar>(kind: ModelKind, cfg: &ArchConfig, seed: u64) -> Result<Network<T>> {
    let specs = cfg.layer_specs(kind)?;
    let mut net = Network::from_specs(kind.name(), &cfg.input, &specs)?;
    net.initialize(seed);
    Ok(net)
}

pub fn build_feedforward<T: Scalar>(cfg: &ArchConfig, seed: u64) -> Result<Network<T>> {
    build(ModelKind::Ffnn, cfg, seed)
}

pub fn build_simple_cnn<T: Scalar>(cfg: &ArchConfig, seed: u64) -> Result<Network<T>> {
    build(ModelKind::SimpleCnn, cfg, seed)
}

pub fn build_proposed_cnn<T: Scalar>(cfg: &ArchConfig, seed: u64) -> Result<Network<T>> {
    build(ModelKind::ProposedCnn, cfg, seed)
}

// --- persistence -----------------------------------------------------------
//
// Layout, all integers little-endian u32 unless noted:
//
//   "FEMO" | version
//   descriptor: name_len | name (UTF-8) | input_rank | dims.. | layer_count | layers..
//     layer: tag (u8) then
//       0 conv2d    filters | kernel | stride | padding (u8: 0 valid, 1 same)
//       1 maxpool2d pool
//       2 dense     units | l2 (f32)
//       3 relu, 4 softmax, 6 flatten: nothing
//       5 dropout   rate (f32)
//   tensor_count | tensors..
//     tensor: rank | dims.. | payload (binary32 little-endian, row-major)

pub const MODEL_MAGIC: [u8; 4] = *b"FEMO";
pub const MODEL_VERSION: u32 = 1;

/// Serialize architecture and parameters.
pub fn model_to_bytes(net: &Network<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    put_u32(&mut out, MODEL_VERSION);
    put_u32(&mut out, net.name.len() as u32);
    out.extend_from_slice(net.name.as_bytes());
    put_u32(&mut out, net.input_shape.len() as u32);
    for &d in &net.input_shape {
        put_u32(&mut out, d as u32);
    }
    put_u32(&mut out, net.layers.len() as u32);
    for layer in &net.layers {
        match *layer.spec() {
            LayerSpec::Conv2D {
                filters,
                kernel,
                stride,
                padding,
            } => {
                out.push(0);
                put_u32(&mut out, filters as u32);
                put_u32(&mut out, kernel as u32);
                put_u32(&mut out, stride as u32);
                out.push(match padding {
                    Padding::Valid => 0,
                    Padding::Same => 1,
                });
            }
            LayerSpec::MaxPool2D { pool } => {
                out.push(1);
                put_u32(&mut out, pool as u32);
            }
            LayerSpec::Dense { units, l2 } => {
                out.push(2);
                put_u32(&mut out, units as u32);
                out.extend_from_slice(&l2.to_le_bytes());
            }
            LayerSpec::ReLU => out.push(3),
            LayerSpec::Softmax => out.push(4),
            LayerSpec::Dropout { rate } => {
                out.push(5);
                out.extend_from_slice(&rate.to_le_bytes());
            }
            LayerSpec::Flatten => out.push(6),
        }
    }
    let tensors: Vec<&Tensor<f32>> = net.params().collect();
    put_u32(&mut out, tensors.len() as u32);
    for t in tensors {
        put_u32(&mut out, t.rank() as u32);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        out.reserve(t.len() * 4);
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncated {
                offset: self.bytes.len(),
                context,
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, context: &'static str) -> Result<u8> {
        Ok(self.take(1, context)?[0])
    }

    fn u32(&mut self, context: &'static str) -> Result<u32> {
        let b = self.take(4, context)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self, context: &'static str) -> Result<f32> {
        Ok(f32::from_bits(self.u32(context)?))
    }

    fn usize(&mut self, context: &'static str) -> Result<usize> {
        self.u32(context).map(|v| v as usize)
    }
}

/// Parse a model file image. Nothing is returned unless the whole file is valid.
pub fn model_from_bytes(bytes: &[u8]) -> Result<Network<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MODEL_MAGIC {
        return Err(Error::BadMagic {
            found: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let version = r.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let name_len = r.usize("name length")?;
    let name = std::str::from_utf8(r.take(name_len, "name")?)
        .map_err(|_| Error::ModelFormat("model name is not UTF-8".into()))?
        .to_string();
    let rank = r.usize("input rank")?;
    let input_shape = (0..rank)
        .map(|_| r.usize("input dims"))
        .collect::<Result<Vec<_>>>()?;
    let layer_count = r.usize("layer count")?;
    let mut specs = Vec::with_capacity(layer_count.min(1024));
    for _ in 0..layer_count {
        let spec = match r.u8("layer tag")? {
            0 => LayerSpec::Conv2D {
                filters: r.usize("conv filters")?,
                kernel: r.usize("conv kernel")?,
                stride: r.usize("conv stride")?,
                padding: match r.u8("conv padding")? {
                    0 => Padding::Valid,
                    1 => Padding::Same,
                    p => return Err(Error::ModelFormat(format!("unknown padding tag {p}"))),
                },
            },
            1 => LayerSpec::MaxPool2D {
                pool: r.usize("pool size")?,
            },
            2 => LayerSpec::Dense {
                units: r.usize("dense units")?,
                l2: r.f32("dense l2")?,
            },
            3 => LayerSpec::ReLU,
            4 => LayerSpec::Softmax,
            5 => LayerSpec::Dropout {
                rate: r.f32("dropout rate")?,
            },
            6 => LayerSpec::Flatten,
            t => return Err(Error::ModelFormat(format!("unknown layer tag {t}"))),
        };
        specs.push(spec);
    }
    let mut net = Network::from_specs(&name, &input_shape, &specs)
        .map_err(|e| Error::ModelFormat(format!("invalid architecture: {e}")))?;

    let count = r.usize("tensor count")?;
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rank = r.usize("tensor rank")?;
        let dims = (0..rank)
            .map(|_| r.u32("tensor dims"))
            .collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| Error::DimOverflow { dims: dims.clone() })?;
        let payload = r.take(len * 4, "tensor payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
        params.push(Tensor::new(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    net.set_params(params)?;
    Ok(net)
}

pub fn save_model(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = model_to_bytes(net);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
