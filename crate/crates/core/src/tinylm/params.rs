//! Named, layer-indexed parameter tensors for the toy transformer.
//!
//! Every tensor carries exactly one group tag and a layer index; tensors
//! outside the per-layer blocks (embeddings, final norm, unembedding) use
//! layer −1. The flat canonical ordering below is the single source of
//! truth for initialization draws, gradient layout, and checkpoints.

use super::vocab::Vocab;
use super::ModelError;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

/// Group tag identifying what a tensor does in the architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    #[serde(rename = "embedding")]
    Embedding,
    #[serde(rename = "attention.key")]
    AttentionKey,
    #[serde(rename = "attention.query")]
    AttentionQuery,
    #[serde(rename = "attention.value")]
    AttentionValue,
    #[serde(rename = "attention.output")]
    AttentionOutput,
    #[serde(rename = "mlp.in")]
    MlpIn,
    #[serde(rename = "mlp.out")]
    MlpOut,
    #[serde(rename = "layernorm")]
    LayerNorm,
    #[serde(rename = "lm_head")]
    LmHead,
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamGroup::Embedding => "embedding",
            ParamGroup::AttentionKey => "attention.key",
            ParamGroup::AttentionQuery => "attention.query",
            ParamGroup::AttentionValue => "attention.value",
            ParamGroup::AttentionOutput => "attention.output",
            ParamGroup::MlpIn => "mlp.in",
            ParamGroup::MlpOut => "mlp.out",
            ParamGroup::LayerNorm => "layernorm",
            ParamGroup::LmHead => "lm_head",
        };
        f.write_str(s)
    }
}

/// Identity of one tensor: group tag, layer index (−1 for global), name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamKey {
    pub group: ParamGroup,
    pub layer: i32,
    pub name: String,
}

impl ParamKey {
    fn new(group: ParamGroup, layer: i32, name: &str) -> Self {
        Self { group, layer, name: name.to_string() }
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.layer < 0 {
            write!(f, "{}", self.name)
        } else {
            write!(f, "layer{}.{}", self.layer, self.name)
        }
    }
}

/// A parameter or gradient tensor; all values are f64.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Matrix(Array2<f64>),
    Vector(Array1<f64>),
}

impl Tensor {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            Tensor::Matrix(m) => m.shape().to_vec(),
            Tensor::Vector(v) => vec![v.len()],
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Tensor::Matrix(m) => m.len(),
            Tensor::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major flat view.
    pub fn data(&self) -> &[f64] {
        match self {
            Tensor::Matrix(m) => m.as_slice().expect("standard layout"),
            Tensor::Vector(v) => v.as_slice().expect("standard layout"),
        }
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        match self {
            Tensor::Matrix(m) => m.as_slice_mut().expect("standard layout"),
            Tensor::Vector(v) => v.as_slice_mut().expect("standard layout"),
        }
    }

    pub fn zeros_like(&self) -> Tensor {
        match self {
            Tensor::Matrix(m) => Tensor::Matrix(Array2::zeros(m.raw_dim())),
            Tensor::Vector(v) => Tensor::Vector(Array1::zeros(v.raw_dim())),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|x| x.is_finite())
    }

    pub fn as_matrix(&self) -> &Array2<f64> {
        match self {
            Tensor::Matrix(m) => m,
            Tensor::Vector(_) => panic!("expected matrix tensor"),
        }
    }

    pub fn as_vector(&self) -> &Array1<f64> {
        match self {
            Tensor::Vector(v) => v,
            Tensor::Matrix(_) => panic!("expected vector tensor"),
        }
    }
}

/// Scalar hyperparameters of the architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context_len: usize,
}

impl ModelConfig {
    /// The documented toy default: 2 layers, width 64, 4 heads, context 128.
    pub fn toy_default() -> Self {
        Self { n_layers: 2, d_model: 64, n_heads: 4, d_ff: 256, context_len: 128 }
    }

    /// A narrow configuration for exhaustive gradient checks.
    pub fn tiny(n_layers: usize) -> Self {
        Self { n_layers, d_model: 16, n_heads: 2, d_ff: 32, context_len: 64 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.context_len == 0 || self.d_ff == 0 || self.n_heads == 0 {
            return Err(ModelError::BadConfig("dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::BadHeadSplit { d_model: self.d_model, n_heads: self.n_heads });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

pub(crate) struct NamedTensor {
    pub key: ParamKey,
    pub tensor: Tensor,
}

/// Flat, canonically ordered tensor storage shared by parameters and
/// gradients (identical key sets by construction).
pub(crate) struct TensorSet {
    pub items: Vec<NamedTensor>,
}

impl TensorSet {
    fn position(&self, layer: i32, name: &str) -> Option<usize> {
        self.items.iter().position(|nt| nt.key.layer == layer && nt.key.name == name)
    }

    pub fn get(&self, layer: i32, name: &str) -> Option<&Tensor> {
        self.position(layer, name).map(|i| &self.items[i].tensor)
    }

    pub fn get_mut(&mut self, layer: i32, name: &str) -> Option<&mut Tensor> {
        self.position(layer, name).map(move |i| &mut self.items[i].tensor)
    }

    fn zeros_like(&self) -> TensorSet {
        TensorSet {
            items: self
                .items
                .iter()
                .map(|nt| NamedTensor { key: nt.key.clone(), tensor: nt.tensor.zeros_like() })
                .collect(),
        }
    }
}

impl Clone for NamedTensor {
    fn clone(&self) -> Self {
        Self { key: self.key.clone(), tensor: self.tensor.clone() }
    }
}

impl Clone for TensorSet {
    fn clone(&self) -> Self {
        Self { items: self.items.clone() }
    }
}

/// The complete parameter set of one model instance.
#[derive(Clone)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    vocab_size: usize,
    pub(crate) set: TensorSet,
}

impl fmt::Debug for ModelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ModelParams(cfg={:?}, vocab={}, tensors={}, scalars={})",
            self.cfg,
            self.vocab_size,
            self.set.items.len(),
            self.num_scalars()
        )
    }
}

fn layout(cfg: &ModelConfig, vocab_size: usize) -> Vec<(ParamKey, Vec<usize>)> {
    use ParamGroup::*;
    let d = cfg.d_model;
    let mut keys = vec![
        (ParamKey::new(Embedding, -1, "tok_embedding"), vec![vocab_size, d]),
        (ParamKey::new(Embedding, -1, "pos_embedding"), vec![cfg.context_len, d]),
    ];
    for l in 0..cfg.n_layers as i32 {
        keys.push((ParamKey::new(LayerNorm, l, "ln1.gain"), vec![d]));
        keys.push((ParamKey::new(LayerNorm, l, "ln1.bias"), vec![d]));
        keys.push((ParamKey::new(AttentionQuery, l, "attn.query.weight"), vec![d, d]));
        keys.push((ParamKey::new(AttentionQuery, l, "attn.query.bias"), vec![d]));
        keys.push((ParamKey::new(AttentionKey, l, "attn.key.weight"), vec![d, d]));
        keys.push((ParamKey::new(AttentionKey, l, "attn.key.bias"), vec![d]));
        keys.push((ParamKey::new(AttentionValue, l, "attn.value.weight"), vec![d, d]));
        keys.push((ParamKey::new(AttentionValue, l, "attn.value.bias"), vec![d]));
        keys.push((ParamKey::new(AttentionOutput, l, "attn.output.weight"), vec![d, d]));
        keys.push((ParamKey::new(AttentionOutput, l, "attn.output.bias"), vec![d]));
        keys.push((ParamKey::new(LayerNorm, l, "ln2.gain"), vec![d]));
        keys.push((ParamKey::new(LayerNorm, l, "ln2.bias"), vec![d]));
        keys.push((ParamKey::new(MlpIn, l, "mlp.in.weight"), vec![d, cfg.d_ff]));
        keys.push((ParamKey::new(MlpIn, l, "mlp.in.bias"), vec![cfg.d_ff]));
        keys.push((ParamKey::new(MlpOut, l, "mlp.out.weight"), vec![cfg.d_ff, d]));
        keys.push((ParamKey::new(MlpOut, l, "mlp.out.bias"), vec![d]));
    }
    keys.push((ParamKey::new(LayerNorm, -1, "final_norm.gain"), vec![d]));
    keys.push((ParamKey::new(LayerNorm, -1, "final_norm.bias"), vec![d]));
    keys.push((ParamKey::new(LmHead, -1, "lm_head"), vec![d, vocab_size]));
    keys
}

fn is_weight(name: &str) -> bool {
    name.ends_with("weight") || name.ends_with("embedding") || name == "lm_head"
}

fn is_norm_gain(name: &str) -> bool {
    name.ends_with("gain")
}

impl ModelParams {
    /// Seeded Gaussian init: weights N(0, 0.02²), biases zero, norm gains 1.
    pub fn init(cfg: ModelConfig, vocab_size: usize, seed: u64) -> Result<Self, ModelError> {
        Self::init_with_std(cfg, vocab_size, seed, 0.02)
    }

    /// As [`ModelParams::init`] with an explicit weight standard deviation.
    pub fn init_with_std(
        cfg: ModelConfig,
        vocab_size: usize,
        seed: u64,
        std: f64,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        if !(std >= 0.0) || !std.is_finite() {
            return Err(ModelError::BadConfig(format!("init std must be non-negative, got {std}")));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std.max(f64::MIN_POSITIVE)).expect("valid std");
        let items = layout(&cfg, vocab_size)
            .into_iter()
            .map(|(key, shape)| {
                let tensor = if is_weight(&key.name) {
                    let data: Vec<f64> =
                        (0..shape.iter().product::<usize>()).map(|_| normal.sample(&mut rng)).collect();
                    match shape.len() {
                        2 => Tensor::Matrix(Array2::from_shape_vec((shape[0], shape[1]), data).unwrap()),
                        _ => Tensor::Vector(Array1::from_vec(data)),
                    }
                } else {
                    let fill = if is_norm_gain(&key.name) { 1.0 } else { 0.0 };
                    match shape.len() {
                        2 => Tensor::Matrix(Array2::from_elem((shape[0], shape[1]), fill)),
                        _ => Tensor::Vector(Array1::from_elem(shape[0], fill)),
                    }
                };
                NamedTensor { key, tensor }
            })
            .collect();
        Ok(Self { cfg, vocab_size, set: TensorSet { items } })
    }

    /// All-zero parameters (uniform logits); used in tests and docs.
    pub fn zeros(cfg: ModelConfig, vocab_size: usize) -> Result<Self, ModelError> {
        cfg.validate()?;
        let items = layout(&cfg, vocab_size)
            .into_iter()
            .map(|(key, shape)| {
                let tensor = match shape.len() {
                    2 => Tensor::Matrix(Array2::zeros((shape[0], shape[1]))),
                    _ => Tensor::Vector(Array1::zeros(shape[0])),
                };
                NamedTensor { key, tensor }
            })
            .collect();
        Ok(Self { cfg, vocab_size, set: TensorSet { items } })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn keys(&self) -> impl Iterator<Item = &ParamKey> {
        self.set.items.iter().map(|nt| &nt.key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &Tensor)> {
        self.set.items.iter().map(|nt| (&nt.key, &nt.tensor))
    }

    pub fn tensor(&self, layer: i32, name: &str) -> Option<&Tensor> {
        self.set.get(layer, name)
    }

    pub fn tensor_mut(&mut self, layer: i32, name: &str) -> Option<&mut Tensor> {
        self.set.get_mut(layer, name)
    }

    /// Number of tensors in canonical order.
    pub fn num_slots(&self) -> usize {
        self.set.items.len()
    }

    pub fn slot(&self, i: usize) -> (&ParamKey, &Tensor) {
        let nt = &self.set.items[i];
        (&nt.key, &nt.tensor)
    }

    pub fn slot_mut(&mut self, i: usize) -> (&ParamKey, &mut Tensor) {
        let nt = &mut self.set.items[i];
        (&nt.key, &mut nt.tensor)
    }

    pub fn num_scalars(&self) -> usize {
        self.set.items.iter().map(|nt| nt.tensor.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.set.items.iter().all(|nt| nt.tensor.all_finite())
    }

    /// True when both models share layout and vocabulary size.
    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.cfg == other.cfg
            && self.vocab_size == other.vocab_size
            && self.set.items.len() == other.set.items.len()
            && self
                .set
                .items
                .iter()
                .zip(&other.set.items)
                .all(|(a, b)| a.key == b.key && a.tensor.shape() == b.tensor.shape())
    }

    /// Exact bitwise equality of every value; used by mask-isolation checks.
    pub fn bitwise_eq(&self, other: &ModelParams) -> bool {
        self.same_shape(other)
            && self.set.items.iter().zip(&other.set.items).all(|(a, b)| {
                a.tensor
                    .data()
                    .iter()
                    .zip(b.tensor.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Gradients keyed identically to the parameters they differentiate.
#[derive(Clone)]
pub struct GradientSet {
    pub(crate) set: TensorSet,
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self { set: params.set.zeros_like() }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &Tensor)> {
        self.set.items.iter().map(|nt| (&nt.key, &nt.tensor))
    }

    pub fn tensor(&self, layer: i32, name: &str) -> Option<&Tensor> {
        self.set.get(layer, name)
    }

    pub fn tensor_mut(&mut self, layer: i32, name: &str) -> Option<&mut Tensor> {
        self.set.get_mut(layer, name)
    }

    pub fn num_slots(&self) -> usize {
        self.set.items.len()
    }

    pub fn slot(&self, i: usize) -> (&ParamKey, &Tensor) {
        let nt = &self.set.items[i];
        (&nt.key, &nt.tensor)
    }

    pub fn slot_mut(&mut self, i: usize) -> (&ParamKey, &mut Tensor) {
        let nt = &mut self.set.items[i];
        (&nt.key, &mut nt.tensor)
    }

    pub fn all_finite(&self) -> bool {
        self.set.items.iter().all(|nt| nt.tensor.all_finite())
    }

    /// `self += other`, element-wise over every tensor.
    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.set.items.iter_mut().zip(&other.set.items) {
            debug_assert_eq!(a.key, b.key);
            for (x, y) in a.tensor.data_mut().iter_mut().zip(b.tensor.data()) {
                *x += y;
            }
        }
    }

    /// Multiplies every gradient value by `c`.
    pub fn scale(&mut self, c: f64) {
        for nt in &mut self.set.items {
            for x in nt.tensor.data_mut() {
                *x *= c;
            }
        }
    }
}

const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    group: ParamGroup,
    layer: i32,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
    config: ModelConfig,
    vocab: VocabRecord,
    tensors: Vec<TensorRecord>,
}

#[derive(Serialize, Deserialize)]
struct VocabRecord {
    tokens: Vec<String>,
    bos: usize,
    eos: usize,
    pad: usize,
}

/// A loaded checkpoint: model, vocabulary, and optional tool metadata.
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocab,
    pub meta: Option<serde_json::Value>,
}

/// Writes a self-describing JSON checkpoint.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    vocab: &Vocab,
    meta: Option<serde_json::Value>,
) -> Result<(), ModelError> {
    let tensors = params
        .set
        .items
        .iter()
        .map(|nt| TensorRecord {
            name: nt.key.name.clone(),
            group: nt.key.group,
            layer: nt.key.layer,
            shape: nt.tensor.shape(),
            data: nt.tensor.data().to_vec(),
        })
        .collect();
    let file = CheckpointFile {
        format_version: CHECKPOINT_FORMAT_VERSION,
        meta,
        config: params.cfg,
        vocab: VocabRecord {
            tokens: vocab.tokens().to_vec(),
            bos: vocab.bos(),
            eos: vocab.eos(),
            pad: vocab.pad(),
        },
        tensors,
    };
    let json = serde_json::to_string(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Reads a checkpoint, validating version, layout, shapes, and finiteness.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported format version {} (expected {})",
            file.format_version, CHECKPOINT_FORMAT_VERSION
        )));
    }
    let vocab = Vocab::new(file.vocab.tokens, file.vocab.bos, file.vocab.eos, file.vocab.pad)?;
    let mut params = ModelParams::zeros(file.config, vocab.size())?;
    if file.tensors.len() != params.num_slots() {
        return Err(ModelError::Checkpoint(format!(
            "expected {} tensors, found {}",
            params.num_slots(),
            file.tensors.len()
        )));
    }
    for rec in file.tensors {
        let slot = params
            .tensor_mut(rec.layer, &rec.name)
            .ok_or_else(|| ModelError::Checkpoint(format!("unknown tensor {}", rec.name)))?;
        if slot.shape() != rec.shape {
            return Err(ModelError::Checkpoint(format!(
                "tensor {} has shape {:?}, expected {:?}",
                rec.name,
                rec.shape,
                slot.shape()
            )));
        }
        if rec.data.len() != slot.len() {
            return Err(ModelError::Checkpoint(format!("tensor {} data length mismatch", rec.name)));
        }
        if rec.data.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::Checkpoint(format!("tensor {} contains non-finite values", rec.name)));
        }
        slot.data_mut().copy_from_slice(&rec.data);
    }
    Ok(Checkpoint { params, vocab, meta: file.meta })
}
