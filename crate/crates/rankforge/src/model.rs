//! Cross-attention ranking model: a small pre-layernorm transformer encoder
//! with three interchangeable scoring heads.
//!
//! * `encdec_token_logit` — a single-step decoder (one learned start token,
//!   self-attention over that length-1 sequence, cross-attention over the
//!   encoder output) followed by a projection to vocabulary logits; the
//!   score is the unnormalized logit of a reserved target token. No softmax
//!   is applied and no further tokens are generated.
//! * `enc_pool_dense` — encoder only; the score is a dense projection of a
//!   pooled encoder output (first token or mean over non-pad positions).
//! * `generation_baseline` — same single-step decoder, but the score is the
//!   two-token softmax probability of a reserved positive token against a
//!   reserved negative token, `sigma(z_pos - z_neg)`.
//!
//! Scores for a list of sequences are computed independently per sequence;
//! nothing couples list members at scoring time.
//!
//! Parameters live in a flat, named list whose order and shapes are a pure
//! function of the config, which keeps initialization reproducible and the
//! checkpoint format self-describing.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::text::FIRST_TEXT_ID;
use crate::tensor::{Graph, NodeId, Tensor, TensorError};

/// Layer normalization epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-6;

const CHECKPOINT_MAGIC: &[u8; 8] = b"RFCKPT01";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range for vocab_size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("token sequence is empty")]
    EmptySequence,
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("sequence contains only padding")]
    AllPadding,
    #[error("{op} requires head_variant {expected}, model has {got}")]
    WrongHead {
        op: &'static str,
        expected: &'static str,
        got: &'static str,
    },
    #[error("{op} requires a decoder but decoder_layers is 0")]
    NoDecoder { op: &'static str },
    #[error("tensor error: {0}")]
    Tensor(#[from] TensorError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {message}")]
    BadCheckpoint { path: String, message: String },
    #[error("checkpoint {path}: parameter {index} is {got:?}, expected {expected:?}")]
    ParamNameMismatch {
        path: String,
        index: usize,
        expected: String,
        got: String,
    },
    #[error("checkpoint {path}: parameter {name:?} has shape {got:?}, expected {expected:?}")]
    ParamShapeMismatch {
        path: String,
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint {path}: parameter {name:?} contains a non-finite value")]
    ParamNonFinite { path: String, name: String },
}

/// Scoring head selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadVariant {
    EncdecTokenLogit,
    EncPoolDense,
    GenerationBaseline,
}

impl HeadVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadVariant::EncdecTokenLogit => "encdec_token_logit",
            HeadVariant::EncPoolDense => "enc_pool_dense",
            HeadVariant::GenerationBaseline => "generation_baseline",
        }
    }

    pub fn needs_decoder(self) -> bool {
        !matches!(self, HeadVariant::EncPoolDense)
    }
}

/// Pooling used by the `enc_pool_dense` head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Embedding of the first token.
    First,
    /// Mean over non-pad positions.
    Mean,
}

/// Model hyperparameters. Parameter shapes, names, and initialization are a
/// deterministic function of this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_seq_len: usize,
    pub head_variant: HeadVariant,
    pub pooling: Pooling,
    /// Reserved token whose logit is the `encdec_token_logit` score.
    pub target_token_id: usize,
    /// Reserved tokens for the generation baseline's two-class softmax.
    pub pos_token_id: usize,
    pub neg_token_id: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Smallest preset: 32-dim, 1 encoder + 1 decoder layer.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            model_dim: 32,
            num_heads: 4,
            ff_dim: 64,
            encoder_layers: 1,
            decoder_layers: 1,
            max_seq_len: 128,
            head_variant: HeadVariant::EncdecTokenLogit,
            pooling: Pooling::First,
            target_token_id: crate::data::sentinel_id(10),
            pos_token_id: crate::data::sentinel_id(0),
            neg_token_id: crate::data::sentinel_id(1),
            init_scale: 1.0,
            seed: 17,
        }
    }

    /// Mid preset: 64-dim, 2 + 2 layers.
    pub fn small(vocab_size: usize) -> Self {
        ModelConfig {
            model_dim: 64,
            num_heads: 4,
            ff_dim: 128,
            encoder_layers: 2,
            decoder_layers: 2,
            ..ModelConfig::tiny(vocab_size)
        }
    }

    /// Largest preset: 128-dim, 4 + 4 layers.
    pub fn base_toy(vocab_size: usize) -> Self {
        ModelConfig {
            model_dim: 128,
            num_heads: 8,
            ff_dim: 256,
            encoder_layers: 4,
            decoder_layers: 4,
            ..ModelConfig::tiny(vocab_size)
        }
    }

    /// Looks up a preset by name (`tiny`, `small`, `base-toy`).
    pub fn preset(name: &str, vocab_size: usize) -> Result<Self, ModelError> {
        match name {
            "tiny" => Ok(ModelConfig::tiny(vocab_size)),
            "small" => Ok(ModelConfig::small(vocab_size)),
            "base-toy" | "base_toy" => Ok(ModelConfig::base_toy(vocab_size)),
            other => Err(ModelError::InvalidConfig(format!(
                "unknown preset {other:?}, expected tiny, small, or base-toy"
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::InvalidConfig(m));
        if self.model_dim == 0 || self.num_heads == 0 || self.ff_dim == 0 {
            return err("model_dim, num_heads, and ff_dim must be positive".into());
        }
        if self.model_dim % self.num_heads != 0 {
            return err(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            ));
        }
        if self.encoder_layers == 0 {
            return err("encoder_layers must be at least 1".into());
        }
        if self.head_variant.needs_decoder() && self.decoder_layers == 0 {
            return err(format!(
                "head_variant {} requires decoder_layers >= 1",
                self.head_variant.as_str()
            ));
        }
        if self.vocab_size < FIRST_TEXT_ID {
            return err(format!(
                "vocab_size {} smaller than the reserved-token block {}",
                self.vocab_size, FIRST_TEXT_ID
            ));
        }
        if self.max_seq_len < 5 {
            return err(format!("max_seq_len {} too small", self.max_seq_len));
        }
        for (what, id) in [
            ("target_token_id", self.target_token_id),
            ("pos_token_id", self.pos_token_id),
            ("neg_token_id", self.neg_token_id),
        ] {
            if !(3..FIRST_TEXT_ID).contains(&id) {
                return err(format!(
                    "{what} {id} must be a reserved unused token (ids 3..{FIRST_TEXT_ID})"
                ));
            }
        }
        if self.pos_token_id == self.neg_token_id {
            return err("pos_token_id and neg_token_id must differ".into());
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return err(format!("init_scale {} must be finite and positive", self.init_scale));
        }
        Ok(())
    }

    /// Closed-form total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let (v, d, f, l) = (self.vocab_size, self.model_dim, self.ff_dim, self.max_seq_len);
        let ff = d * f + f + f * d + d;
        let mut n = v * d + l * d; // embeddings
        n += self.encoder_layers * (4 * d * d + 2 * d + 2 * d + ff);
        n += 2 * d; // encoder final norm
        if self.decoder_layers > 0 {
            n += d; // start token
            n += self.decoder_layers * (8 * d * d + 3 * 2 * d + ff);
            n += 2 * d; // decoder final norm
            n += v * d + v; // vocab projection
        }
        if self.head_variant == HeadVariant::EncPoolDense {
            n += d + 1; // score head
        }
        n
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform { fan_in: usize },
    Ones,
    Zeros,
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

#[derive(Debug, Clone, Copy)]
struct LnIdx {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct AttnIdx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
}

#[derive(Debug, Clone, Copy)]
struct FfIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct EncLayerIdx {
    ln1: LnIdx,
    attn: AttnIdx,
    ln2: LnIdx,
    ff: FfIdx,
}

#[derive(Debug, Clone, Copy)]
struct DecLayerIdx {
    ln1: LnIdx,
    self_attn: AttnIdx,
    ln2: LnIdx,
    cross_attn: AttnIdx,
    ln3: LnIdx,
    ff: FfIdx,
}

#[derive(Debug, Clone)]
struct DecoderIdx {
    start: usize,
    layers: Vec<DecLayerIdx>,
    final_ln: LnIdx,
    out_proj: usize,
    out_bias: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    specs: Vec<ParamSpec>,
    embed: usize,
    pos_embed: usize,
    enc_layers: Vec<EncLayerIdx>,
    enc_final: LnIdx,
    decoder: Option<DecoderIdx>,
    score: Option<(usize, usize)>,
}

impl Layout {
    fn new(c: &ModelConfig) -> Layout {
        let (v, d, f) = (c.vocab_size, c.model_dim, c.ff_dim);
        let mut specs = Vec::new();
        let ln = |specs: &mut Vec<ParamSpec>, prefix: &str| LnIdx {
            gain: push_spec(specs, format!("{prefix}.gain"), vec![d], Init::Ones),
            bias: push_spec(specs, format!("{prefix}.bias"), vec![d], Init::Zeros),
        };
        let attn = |specs: &mut Vec<ParamSpec>, prefix: &str| AttnIdx {
            wq: push_spec(specs, format!("{prefix}.wq"), vec![d, d], Init::Uniform { fan_in: d }),
            wk: push_spec(specs, format!("{prefix}.wk"), vec![d, d], Init::Uniform { fan_in: d }),
            wv: push_spec(specs, format!("{prefix}.wv"), vec![d, d], Init::Uniform { fan_in: d }),
            wo: push_spec(specs, format!("{prefix}.wo"), vec![d, d], Init::Uniform { fan_in: d }),
        };
        let ff = |specs: &mut Vec<ParamSpec>, prefix: &str| FfIdx {
            w1: push_spec(specs, format!("{prefix}.w1"), vec![d, f], Init::Uniform { fan_in: d }),
            b1: push_spec(specs, format!("{prefix}.b1"), vec![f], Init::Zeros),
            w2: push_spec(specs, format!("{prefix}.w2"), vec![f, d], Init::Uniform { fan_in: f }),
            b2: push_spec(specs, format!("{prefix}.b2"), vec![d], Init::Zeros),
        };

        let embed = push_spec(&mut specs, "embed".into(), vec![v, d], Init::Uniform { fan_in: d });
        let pos_embed = push_spec(
            &mut specs,
            "pos_embed".into(),
            vec![c.max_seq_len, d],
            Init::Uniform { fan_in: d },
        );
        let mut enc_layers = Vec::with_capacity(c.encoder_layers);
        for i in 0..c.encoder_layers {
            enc_layers.push(EncLayerIdx {
                ln1: ln(&mut specs, &format!("enc.{i}.ln1")),
                attn: attn(&mut specs, &format!("enc.{i}.attn")),
                ln2: ln(&mut specs, &format!("enc.{i}.ln2")),
                ff: ff(&mut specs, &format!("enc.{i}.ff")),
            });
        }
        let enc_final = ln(&mut specs, "enc.final_ln");
        let decoder = if c.decoder_layers > 0 {
            let start = push_spec(&mut specs, "dec.start".into(), vec![1, d], Init::Uniform { fan_in: d });
            let mut layers = Vec::with_capacity(c.decoder_layers);
            for i in 0..c.decoder_layers {
                layers.push(DecLayerIdx {
                    ln1: ln(&mut specs, &format!("dec.{i}.ln1")),
                    self_attn: attn(&mut specs, &format!("dec.{i}.self_attn")),
                    ln2: ln(&mut specs, &format!("dec.{i}.ln2")),
                    cross_attn: attn(&mut specs, &format!("dec.{i}.cross_attn")),
                    ln3: ln(&mut specs, &format!("dec.{i}.ln3")),
                    ff: ff(&mut specs, &format!("dec.{i}.ff")),
                });
            }
            let final_ln = ln(&mut specs, "dec.final_ln");
            let out_proj = push_spec(&mut specs, "out_proj".into(), vec![v, d], Init::Uniform { fan_in: d });
            let out_bias = push_spec(&mut specs, "out_bias".into(), vec![v, 1], Init::Zeros);
            Some(DecoderIdx {
                start,
                layers,
                final_ln,
                out_proj,
                out_bias,
            })
        } else {
            None
        };
        let score = if c.head_variant == HeadVariant::EncPoolDense {
            let w = push_spec(&mut specs, "score.w".into(), vec![d, 1], Init::Uniform { fan_in: d });
            let b = push_spec(&mut specs, "score.b".into(), vec![1, 1], Init::Zeros);
            Some((w, b))
        } else {
            None
        };
        Layout {
            specs,
            embed,
            pos_embed,
            enc_layers,
            enc_final,
            decoder,
            score,
        }
    }
}

fn push_spec(specs: &mut Vec<ParamSpec>, name: String, shape: Vec<usize>, init: Init) -> usize {
    specs.push(ParamSpec { name, shape, init });
    specs.len() - 1
}

/// Final encoder hidden states for one sequence, plus the non-pad mask.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Row-major `[len, dim]` hidden states.
    pub hidden: Vec<f64>,
    pub len: usize,
    pub dim: usize,
    /// `keep[i]` is true where `token_ids[i]` is not the pad token.
    pub keep: Vec<bool>,
}

impl EncoderOutput {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.hidden[i * self.dim..(i + 1) * self.dim]
    }
}

/// Tape handles for one bound copy of the parameters, in layout order.
pub struct Bound {
    pub nodes: Vec<NodeId>,
}

/// The ranking model: config plus flat named parameters.
#[derive(Debug, Clone)]
pub struct RankerModel {
    pub config: ModelConfig,
    params: Vec<Tensor>,
    layout: Layout,
}

impl RankerModel {
    /// Creates a model with seeded scaled-uniform initialization: weights
    /// uniform in `±init_scale / sqrt(fan_in)`, norm gains 1, biases 0. The
    /// draw order follows the parameter layout, so equal configs give
    /// bit-identical parameters.
    pub fn new(config: ModelConfig) -> Result<RankerModel, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = layout
            .specs
            .iter()
            .map(|spec| {
                let numel: usize = spec.shape.iter().product();
                let data = match spec.init {
                    Init::Ones => vec![1.0; numel],
                    Init::Zeros => vec![0.0; numel],
                    Init::Uniform { fan_in } => {
                        let a = config.init_scale / (fan_in as f64).sqrt();
                        (0..numel).map(|_| rng.gen_range(-a..a)).collect()
                    }
                };
                Tensor::new(spec.shape.clone(), data).expect("spec shapes are consistent")
            })
            .collect();
        Ok(RankerModel {
            config,
            params,
            layout,
        })
    }

    /// Total number of scalar parameters (enumerated).
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.layout.specs.iter().map(|s| s.name.as_str())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        let i = self.layout.specs.iter().position(|s| s.name == name)?;
        Some(&self.params[i])
    }

    /// Mutable access by name, for optimizer updates and test surgery.
    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.layout.specs.iter().position(|s| s.name == name)?;
        Some(&mut self.params[i])
    }

    pub(crate) fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Copies every parameter onto a graph as leaves (`trainable`) or
    /// constants. One bind serves any number of sequences on that graph.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let nodes = self
            .params
            .iter()
            .map(|t| {
                if trainable {
                    g.leaf(t.clone().with_grad())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Bound { nodes }
    }

    fn check_tokens(&self, token_ids: &[usize]) -> Result<Vec<bool>, ModelError> {
        if token_ids.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if token_ids.len() > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: token_ids.len(),
                max: self.config.max_seq_len,
            });
        }
        for &id in token_ids {
            if id >= self.config.vocab_size {
                return Err(ModelError::TokenOutOfRange {
                    id,
                    vocab: self.config.vocab_size,
                });
            }
        }
        let keep: Vec<bool> = token_ids
            .iter()
            .map(|&id| id != crate::data::PAD_ID)
            .collect();
        if keep.iter().all(|&k| !k) {
            return Err(ModelError::AllPadding);
        }
        Ok(keep)
    }

    fn ln_on(
        &self,
        g: &mut Graph,
        b: &Bound,
        x: NodeId,
        idx: LnIdx,
    ) -> Result<NodeId, TensorError> {
        g.layernorm(x, b.nodes[idx.gain], b.nodes[idx.bias], LN_EPS)
    }

    fn attn_on(
        &self,
        g: &mut Graph,
        b: &Bound,
        queries: NodeId,
        keys: NodeId,
        idx: AttnIdx,
        key_pad: Option<&[bool]>,
    ) -> Result<NodeId, TensorError> {
        let q = g.matmul(queries, b.nodes[idx.wq])?;
        let k = g.matmul(keys, b.nodes[idx.wk])?;
        let v = g.matmul(keys, b.nodes[idx.wv])?;
        let a = g.multihead_attention(q, k, v, self.config.num_heads, key_pad)?;
        g.matmul(a, b.nodes[idx.wo])
    }

    fn ff_on(&self, g: &mut Graph, b: &Bound, x: NodeId, idx: FfIdx) -> Result<NodeId, TensorError> {
        let h = g.matmul(x, b.nodes[idx.w1])?;
        let h = g.add_bias(h, b.nodes[idx.b1])?;
        let h = g.relu(h);
        let h = g.matmul(h, b.nodes[idx.w2])?;
        g.add_bias(h, b.nodes[idx.b2])
    }

    /// Builds the encoder on a graph; returns the `[len, dim]` output node
    /// and the non-pad mask.
    pub fn encode_on(
        &self,
        g: &mut Graph,
        b: &Bound,
        token_ids: &[usize],
    ) -> Result<(NodeId, Vec<bool>), ModelError> {
        let keep = self.check_tokens(token_ids)?;
        let pad: Vec<bool> = keep.iter().map(|&k| !k).collect();
        let positions: Vec<usize> = (0..token_ids.len()).collect();
        let tok = g.gather_rows(b.nodes[self.layout.embed], token_ids)?;
        let pos = g.gather_rows(b.nodes[self.layout.pos_embed], &positions)?;
        let mut x = g.add(tok, pos)?;
        for layer in &self.layout.enc_layers {
            let n1 = self.ln_on(g, b, x, layer.ln1)?;
            let a = self.attn_on(g, b, n1, n1, layer.attn, Some(&pad))?;
            x = g.add(x, a)?;
            let n2 = self.ln_on(g, b, x, layer.ln2)?;
            let h = self.ff_on(g, b, n2, layer.ff)?;
            x = g.add(x, h)?;
        }
        let out = self.ln_on(g, b, x, self.layout.enc_final)?;
        Ok((out, keep))
    }

    /// Runs the single-step decoder over encoder output; returns `[1, dim]`.
    fn decode_on(
        &self,
        g: &mut Graph,
        b: &Bound,
        enc_out: NodeId,
        keep: &[bool],
    ) -> Result<NodeId, ModelError> {
        let dec = self
            .layout
            .decoder
            .as_ref()
            .expect("decode_on called with a decoder in the layout");
        let pad: Vec<bool> = keep.iter().map(|&k| !k).collect();
        let mut x = b.nodes[dec.start];
        for layer in &dec.layers {
            let n1 = self.ln_on(g, b, x, layer.ln1)?;
            let a = self.attn_on(g, b, n1, n1, layer.self_attn, None)?;
            x = g.add(x, a)?;
            let n2 = self.ln_on(g, b, x, layer.ln2)?;
            let c = self.attn_on(g, b, n2, enc_out, layer.cross_attn, Some(&pad))?;
            x = g.add(x, c)?;
            let n3 = self.ln_on(g, b, x, layer.ln3)?;
            let h = self.ff_on(g, b, n3, layer.ff)?;
            x = g.add(x, h)?;
        }
        Ok(self.ln_on(g, b, x, dec.final_ln)?)
    }

    /// Selected vocab logits `z[rows]` as a `[rows.len(), 1]` node.
    fn logit_rows_on(
        &self,
        g: &mut Graph,
        b: &Bound,
        dec_out: NodeId,
        rows: &[usize],
    ) -> Result<NodeId, ModelError> {
        let dec = self.layout.decoder.as_ref().expect("decoder present");
        let w = g.gather_rows(b.nodes[dec.out_proj], rows)?;
        let h = g.reshape(dec_out, vec![self.config.model_dim, 1])?;
        let z = g.matmul(w, h)?;
        let bias = g.gather_rows(b.nodes[dec.out_bias], rows)?;
        Ok(g.add(z, bias)?)
    }

    /// Builds the head's raw output for one sequence as a scalar node: the
    /// target-token logit (encdec), the dense pooled score (enc), or the
    /// logit difference `z_pos - z_neg` (generation baseline, pre-sigmoid).
    pub fn logit_on(
        &self,
        g: &mut Graph,
        b: &Bound,
        token_ids: &[usize],
    ) -> Result<NodeId, ModelError> {
        let (enc_out, keep) = self.encode_on(g, b, token_ids)?;
        match self.config.head_variant {
            HeadVariant::EncdecTokenLogit => {
                let dec_out = self.decode_on(g, b, enc_out, &keep)?;
                let z = self.logit_rows_on(g, b, dec_out, &[self.config.target_token_id])?;
                Ok(g.sum(z))
            }
            HeadVariant::GenerationBaseline => {
                let dec_out = self.decode_on(g, b, enc_out, &keep)?;
                let z = self.logit_rows_on(
                    g,
                    b,
                    dec_out,
                    &[self.config.pos_token_id, self.config.neg_token_id],
                )?;
                let pick = g.constant(
                    Tensor::new(vec![1, 2], vec![1.0, -1.0]).expect("const shape"),
                );
                let diff = g.matmul(pick, z)?;
                Ok(g.sum(diff))
            }
            HeadVariant::EncPoolDense => {
                let (w, bias) = self.layout.score.expect("score head present");
                let pooled = match self.config.pooling {
                    Pooling::First => g.gather_rows(enc_out, &[0])?,
                    Pooling::Mean => g.masked_mean_rows(enc_out, &keep)?,
                };
                let s = g.matmul(pooled, b.nodes[w])?;
                let s = g.add(s, b.nodes[bias])?;
                Ok(g.sum(s))
            }
        }
    }

    /// Raw head output (see [`RankerModel::logit_on`]) without a graph.
    pub fn logit(&self, token_ids: &[usize]) -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let node = self.logit_on(&mut g, &b, token_ids)?;
        Ok(g.scalar_value(node))
    }

    /// Final encoder hidden states (inference only).
    pub fn encode(&self, token_ids: &[usize]) -> Result<EncoderOutput, ModelError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let (node, keep) = self.encode_on(&mut g, &b, token_ids)?;
        Ok(EncoderOutput {
            hidden: g.data(node).to_vec(),
            len: token_ids.len(),
            dim: self.config.model_dim,
            keep,
        })
    }

    /// Ranking score for the `encdec_token_logit` head.
    pub fn score_encdec(&self, token_ids: &[usize]) -> Result<f64, ModelError> {
        self.expect_head(HeadVariant::EncdecTokenLogit, "score_encdec")?;
        self.logit(token_ids)
    }

    /// Ranking score for the `enc_pool_dense` head.
    pub fn score_enc(&self, token_ids: &[usize]) -> Result<f64, ModelError> {
        self.expect_head(HeadVariant::EncPoolDense, "score_enc")?;
        self.logit(token_ids)
    }

    /// Ranking score for the generation baseline:
    /// `exp(z_pos) / (exp(z_pos) + exp(z_neg)) = sigma(z_pos - z_neg)`.
    pub fn score_generation_baseline(&self, token_ids: &[usize]) -> Result<f64, ModelError> {
        self.expect_head(HeadVariant::GenerationBaseline, "score_generation_baseline")?;
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let logit = self.logit_on(&mut g, &b, token_ids)?;
        let s = g.sigmoid(logit);
        Ok(g.scalar_value(s))
    }

    /// Score for the configured head. For the generation baseline this is
    /// the positive-token probability; otherwise the raw logit.
    pub fn score(&self, token_ids: &[usize]) -> Result<f64, ModelError> {
        match self.config.head_variant {
            HeadVariant::EncdecTokenLogit => self.score_encdec(token_ids),
            HeadVariant::EncPoolDense => self.score_enc(token_ids),
            HeadVariant::GenerationBaseline => self.score_generation_baseline(token_ids),
        }
    }

    /// Scores each sequence independently; `scores[i]` depends only on
    /// `lists[i]`.
    pub fn score_list(&self, lists: &[Vec<usize>]) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let mut scores = Vec::with_capacity(lists.len());
        for ids in lists {
            let logit = self.logit_on(&mut g, &b, ids)?;
            let node = if self.config.head_variant == HeadVariant::GenerationBaseline {
                g.sigmoid(logit)
            } else {
                logit
            };
            scores.push(g.scalar_value(node));
        }
        Ok(scores)
    }

    /// Debug view of the full unnormalized vocabulary logits `z`.
    pub fn vocab_logits(&self, token_ids: &[usize]) -> Result<Vec<f64>, ModelError> {
        if self.layout.decoder.is_none() {
            return Err(ModelError::NoDecoder { op: "vocab_logits" });
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let (enc_out, keep) = self.encode_on(&mut g, &b, token_ids)?;
        let dec_out = self.decode_on(&mut g, &b, enc_out, &keep)?;
        let rows: Vec<usize> = (0..self.config.vocab_size).collect();
        let z = self.logit_rows_on(&mut g, &b, dec_out, &rows)?;
        Ok(g.data(z).to_vec())
    }

    fn expect_head(&self, want: HeadVariant, op: &'static str) -> Result<(), ModelError> {
        if self.config.head_variant != want {
            return Err(ModelError::WrongHead {
                op,
                expected: want.as_str(),
                got: self.config.head_variant.as_str(),
            });
        }
        Ok(())
    }

    /// Serializes config and parameters to a self-describing binary file:
    /// magic, config JSON, then named parameter blobs in layout order with
    /// shapes and 64-bit little-endian data. Byte-stable for equal models.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        let config_json = serde_json::to_vec(&self.config).expect("config serializes");
        buf.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&config_json);
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (spec, tensor) in self.layout.specs.iter().zip(&self.params) {
            buf.extend_from_slice(&(spec.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(spec.name.as_bytes());
            buf.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
            for &dim in &tensor.shape {
                buf.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for &x in &tensor.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        fs::write(path, buf).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Loads a checkpoint, validating magic, config, parameter names,
    /// shapes, and finiteness. `load` then `save` reproduces the file
    /// byte-for-byte.
    pub fn load(path: &Path) -> Result<RankerModel, ModelError> {
        let bytes = fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let p = || path.display().to_string();
        let bad = |message: String| ModelError::BadCheckpoint {
            path: p(),
            message,
        };
        let mut cur = Cursor {
            bytes: &bytes,
            pos: 0,
        };
        let magic = cur.take(8).ok_or_else(|| bad("file too short".into()))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let cfg_len = cur.u32().ok_or_else(|| bad("truncated config length".into()))? as usize;
        let cfg_bytes = cur.take(cfg_len).ok_or_else(|| bad("truncated config".into()))?;
        let config: ModelConfig = serde_json::from_slice(cfg_bytes)
            .map_err(|e| bad(format!("bad config JSON: {e}")))?;
        config.validate()?;
        let layout = Layout::new(&config);
        let n = cur.u32().ok_or_else(|| bad("truncated parameter count".into()))? as usize;
        if n != layout.specs.len() {
            return Err(bad(format!(
                "file has {n} parameters, config implies {}",
                layout.specs.len()
            )));
        }
        let mut params = Vec::with_capacity(n);
        for (index, spec) in layout.specs.iter().enumerate() {
            let name_len = cur
                .u32()
                .ok_or_else(|| bad(format!("truncated name length at parameter {index}")))?
                as usize;
            let name_bytes = cur
                .take(name_len)
                .ok_or_else(|| bad(format!("truncated name at parameter {index}")))?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| bad(format!("non-UTF-8 name at parameter {index}")))?
                .to_string();
            if name != spec.name {
                return Err(ModelError::ParamNameMismatch {
                    path: p(),
                    index,
                    expected: spec.name.clone(),
                    got: name,
                });
            }
            let ndim = cur
                .u32()
                .ok_or_else(|| bad(format!("truncated shape of {name:?}")))?
                as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(
                    cur.u64()
                        .ok_or_else(|| bad(format!("truncated shape of {name:?}")))?
                        as usize,
                );
            }
            if shape != spec.shape {
                return Err(ModelError::ParamShapeMismatch {
                    path: p(),
                    name,
                    expected: spec.shape.clone(),
                    got: shape,
                });
            }
            let numel: usize = shape.iter().product();
            let blob = cur
                .take(numel * 8)
                .ok_or_else(|| bad(format!("truncated data of {name:?}")))?;
            let data: Vec<f64> = blob
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if data.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::ParamNonFinite { path: p(), name });
            }
            params.push(Tensor::new(shape, data).expect("validated shape"));
        }
        if cur.pos != bytes.len() {
            return Err(bad(format!(
                "{} trailing bytes after last parameter",
                bytes.len() - cur.pos
            )));
        }
        Ok(RankerModel {
            config,
            params,
            layout,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        if end > self.bytes.len() {
            return None;
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

/// FNV-1a hash of a file's bytes; used to assert that evaluation leaves
/// checkpoints untouched.
pub fn file_fnv1a(path: &Path) -> Result<u64, ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in &bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    Ok(h)
}

/// Per-name parameter map (used by reports and debugging).
pub fn param_map(model: &RankerModel) -> HashMap<String, Vec<usize>> {
    model
        .layout
        .specs
        .iter()
        .map(|s| (s.name.clone(), s.shape.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sentinel_id, PAD_ID};

    const VOCAB: usize = 40;

    fn cfg(head: HeadVariant) -> ModelConfig {
        let mut c = ModelConfig::tiny(VOCAB);
        c.head_variant = head;
        if head == HeadVariant::EncPoolDense {
            c.decoder_layers = 0;
        }
        c.max_seq_len = 16;
        c
    }

    fn sample_ids() -> Vec<usize> {
        vec![19, 20, 1, 25, 30, 19, 39]
    }

    /// Independent scalar reference implementation of the full forward
    /// pass, written with plain nested loops and its own numerics.
    mod oracle {
        use super::super::{HeadVariant, Pooling, RankerModel, LN_EPS};
        use crate::tensor::Tensor;

        fn rows(t: &Tensor) -> Vec<Vec<f64>> {
            let d = *t.shape.last().unwrap();
            t.data.chunks_exact(d).map(|r| r.to_vec()).collect()
        }

        fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
            let (n, k, m) = (a.len(), b.len(), b[0].len());
            let mut out = vec![vec![0.0; m]; n];
            for i in 0..n {
                assert_eq!(a[i].len(), k);
                for j in 0..m {
                    let mut s = 0.0;
                    for (x, row) in a[i].iter().zip(b) {
                        s += x * row[j];
                    }
                    out[i][j] = s;
                }
            }
            out
        }

        fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
            let d = x.len() as f64;
            let mean = x.iter().sum::<f64>() / d;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            x.iter()
                .zip(gain.iter().zip(bias))
                .map(|(&v, (&g, &b))| (v - mean) * inv * g + b)
                .collect()
        }

        fn softmax(x: &[f64]) -> Vec<f64> {
            let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        }

        fn attention(
            q: &[Vec<f64>],
            k: &[Vec<f64>],
            v: &[Vec<f64>],
            heads: usize,
            pad: Option<&[bool]>,
        ) -> Vec<Vec<f64>> {
            let d = q[0].len();
            let dk = d / heads;
            let scale = 1.0 / (dk as f64).sqrt();
            let mut out = vec![vec![0.0; d]; q.len()];
            for h in 0..heads {
                let lo = h * dk;
                for (i, qrow) in q.iter().enumerate() {
                    let mut logits = Vec::with_capacity(k.len());
                    for (j, krow) in k.iter().enumerate() {
                        let mut s = 0.0;
                        for t in 0..dk {
                            s += qrow[lo + t] * krow[lo + t];
                        }
                        s *= scale;
                        if pad.is_some_and(|p| p[j]) {
                            s += -1e30;
                        }
                        logits.push(s);
                    }
                    let w = softmax(&logits);
                    for (j, &wj) in w.iter().enumerate() {
                        for t in 0..dk {
                            out[i][lo + t] += wj * v[j][lo + t];
                        }
                    }
                }
            }
            out
        }

        fn get(m: &RankerModel, name: &str) -> Vec<Vec<f64>> {
            rows(m.param(name).unwrap_or_else(|| panic!("param {name}")))
        }

        fn vec1(m: &RankerModel, name: &str) -> Vec<f64> {
            m.param(name).unwrap().data.clone()
        }

        fn block(
            m: &RankerModel,
            x: &mut Vec<Vec<f64>>,
            prefix: &str,
            attn_name: &str,
            kv: Option<&[Vec<f64>]>,
            pad: Option<&[bool]>,
        ) {
            let g = vec1(m, &format!("{prefix}.gain"));
            let b = vec1(m, &format!("{prefix}.bias"));
            let n: Vec<Vec<f64>> = x.iter().map(|r| layer_norm(r, &g, &b)).collect();
            let kv_in: &[Vec<f64>] = kv.unwrap_or(&n);
            let q = matmul(&n, &get(m, &format!("{attn_name}.wq")));
            let k = matmul(kv_in, &get(m, &format!("{attn_name}.wk")));
            let v = matmul(kv_in, &get(m, &format!("{attn_name}.wv")));
            let a = attention(&q, &k, &v, m.config.num_heads, pad);
            let o = matmul(&a, &get(m, &format!("{attn_name}.wo")));
            for (xr, or) in x.iter_mut().zip(&o) {
                for (xv, ov) in xr.iter_mut().zip(or) {
                    *xv += ov;
                }
            }
        }

        fn ff_block(m: &RankerModel, x: &mut Vec<Vec<f64>>, ln: &str, ff: &str) {
            let g = vec1(m, &format!("{ln}.gain"));
            let b = vec1(m, &format!("{ln}.bias"));
            let n: Vec<Vec<f64>> = x.iter().map(|r| layer_norm(r, &g, &b)).collect();
            let mut h = matmul(&n, &get(m, &format!("{ff}.w1")));
            let b1 = vec1(m, &format!("{ff}.b1"));
            for row in &mut h {
                for (v, &bb) in row.iter_mut().zip(&b1) {
                    *v = (*v + bb).max(0.0);
                }
            }
            let mut out = matmul(&h, &get(m, &format!("{ff}.w2")));
            let b2 = vec1(m, &format!("{ff}.b2"));
            for row in &mut out {
                for (v, &bb) in row.iter_mut().zip(&b2) {
                    *v += bb;
                }
            }
            for (xr, or) in x.iter_mut().zip(&out) {
                for (xv, ov) in xr.iter_mut().zip(or) {
                    *xv += ov;
                }
            }
        }

        pub fn encoder(m: &RankerModel, ids: &[usize]) -> Vec<Vec<f64>> {
            let embed = get(m, "embed");
            let pos = get(m, "pos_embed");
            let mut x: Vec<Vec<f64>> = ids
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    embed[t]
                        .iter()
                        .zip(&pos[i])
                        .map(|(&e, &p)| e + p)
                        .collect()
                })
                .collect();
            let pad: Vec<bool> = ids.iter().map(|&t| t == crate::data::PAD_ID).collect();
            for i in 0..m.config.encoder_layers {
                block(m, &mut x, &format!("enc.{i}.ln1"), &format!("enc.{i}.attn"), None, Some(&pad));
                ff_block(m, &mut x, &format!("enc.{i}.ln2"), &format!("enc.{i}.ff"));
            }
            let g = vec1(m, "enc.final_ln.gain");
            let b = vec1(m, "enc.final_ln.bias");
            x.iter().map(|r| layer_norm(r, &g, &b)).collect()
        }

        pub fn vocab_logits(m: &RankerModel, ids: &[usize]) -> Vec<f64> {
            let enc = encoder(m, ids);
            let pad: Vec<bool> = ids.iter().map(|&t| t == crate::data::PAD_ID).collect();
            let mut x = get(m, "dec.start");
            for i in 0..m.config.decoder_layers {
                block(
                    m,
                    &mut x,
                    &format!("dec.{i}.ln1"),
                    &format!("dec.{i}.self_attn"),
                    None,
                    None,
                );
                block(
                    m,
                    &mut x,
                    &format!("dec.{i}.ln2"),
                    &format!("dec.{i}.cross_attn"),
                    Some(&enc),
                    Some(&pad),
                );
                ff_block(m, &mut x, &format!("dec.{i}.ln3"), &format!("dec.{i}.ff"));
            }
            let g = vec1(m, "dec.final_ln.gain");
            let b = vec1(m, "dec.final_ln.bias");
            let h = layer_norm(&x[0], &g, &b);
            let w = get(m, "out_proj");
            let bias = vec1(m, "out_bias");
            w.iter()
                .zip(&bias)
                .map(|(row, &bb)| row.iter().zip(&h).map(|(&a, &b)| a * b).sum::<f64>() + bb)
                .collect()
        }

        pub fn score(m: &RankerModel, ids: &[usize]) -> f64 {
            match m.config.head_variant {
                HeadVariant::EncdecTokenLogit => {
                    vocab_logits(m, ids)[m.config.target_token_id]
                }
                HeadVariant::GenerationBaseline => {
                    let z = vocab_logits(m, ids);
                    let (zp, zn) = (z[m.config.pos_token_id], z[m.config.neg_token_id]);
                    let top = zp.max(zn);
                    let (ep, en) = ((zp - top).exp(), (zn - top).exp());
                    ep / (ep + en)
                }
                HeadVariant::EncPoolDense => {
                    let enc = encoder(m, ids);
                    let pooled: Vec<f64> = match m.config.pooling {
                        Pooling::First => enc[0].clone(),
                        Pooling::Mean => {
                            let kept: Vec<&Vec<f64>> = enc
                                .iter()
                                .zip(ids)
                                .filter(|(_, &t)| t != crate::data::PAD_ID)
                                .map(|(r, _)| r)
                                .collect();
                            let mut s = vec![0.0; m.config.model_dim];
                            for r in &kept {
                                for (o, &v) in s.iter_mut().zip(r.iter()) {
                                    *o += v;
                                }
                            }
                            s.iter().map(|v| v / kept.len() as f64).collect()
                        }
                    };
                    let w = vec1(m, "score.w");
                    let b = vec1(m, "score.b");
                    pooled.iter().zip(&w).map(|(&p, &wv)| p * wv).sum::<f64>() + b[0]
                }
            }
        }

    }

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!(
            (a - b).abs() <= tol,
            "{what}: {a} vs {b} (diff {})",
            (a - b).abs()
        );
    }

    #[test]
    fn param_count_formula_matches_enumeration() {
        for config in [
            cfg(HeadVariant::EncdecTokenLogit),
            cfg(HeadVariant::EncPoolDense),
            cfg(HeadVariant::GenerationBaseline),
            ModelConfig::small(100),
            ModelConfig::base_toy(64),
            {
                let mut c = ModelConfig::small(80);
                c.head_variant = HeadVariant::EncPoolDense;
                c.decoder_layers = 0;
                c.pooling = Pooling::Mean;
                c
            },
        ] {
            let model = RankerModel::new(config.clone()).unwrap();
            assert_eq!(
                config.param_count(),
                model.param_count(),
                "config {config:?}"
            );
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_params_and_scores() {
        let a = RankerModel::new(cfg(HeadVariant::EncdecTokenLogit)).unwrap();
        let b = RankerModel::new(cfg(HeadVariant::EncdecTokenLogit)).unwrap();
        for (ta, tb) in a.params().iter().zip(b.params()) {
            assert_eq!(ta.data, tb.data);
        }
        let ids = sample_ids();
        let s1 = a.score(&ids).unwrap();
        let s2 = a.score(&ids).unwrap();
        assert_eq!(s1.to_bits(), s2.to_bits());
        assert_eq!(s1.to_bits(), b.score(&ids).unwrap().to_bits());

        let mut other = cfg(HeadVariant::EncdecTokenLogit);
        other.seed = 18;
        let c = RankerModel::new(other).unwrap();
        assert_ne!(
            a.param("embed").unwrap().data,
            c.param("embed").unwrap().data
        );
    }

    #[test]
    fn config_validation_rejects_bad_setups() {
        let mut c = cfg(HeadVariant::EncdecTokenLogit);
        c.num_heads = 3;
        assert!(RankerModel::new(c).is_err(), "indivisible heads");

        let mut c = cfg(HeadVariant::EncdecTokenLogit);
        c.decoder_layers = 0;
        assert!(RankerModel::new(c).is_err(), "encdec without decoder");

        let mut c = cfg(HeadVariant::EncdecTokenLogit);
        c.target_token_id = 25; // a text token, not reserved
        assert!(RankerModel::new(c).is_err(), "target not reserved");

        let mut c = cfg(HeadVariant::GenerationBaseline);
        c.neg_token_id = c.pos_token_id;
        assert!(RankerModel::new(c).is_err(), "pos == neg");
    }

    #[test]
    fn encode_shape_and_input_validation() {
        let model = RankerModel::new(cfg(HeadVariant::EncdecTokenLogit)).unwrap();
        let out = model.encode(&sample_ids()).unwrap();
        assert_eq!(out.hidden.len(), sample_ids().len() * 32);
        assert_eq!(out.row(2).len(), 32);
        assert!(out.keep.iter().all(|&k| k));

        assert!(matches!(model.encode(&[]), Err(ModelError::EmptySequence)));
        assert!(matches!(
            model.encode(&[19; 17]),
            Err(ModelError::SequenceTooLong { len: 17, max: 16 })
        ));
        assert!(matches!(
            model.encode(&[19, VOCAB]),
            Err(ModelError::TokenOutOfRange { id, .. }) if id == VOCAB
        ));
        assert!(matches!(
            model.encode(&[PAD_ID, PAD_ID]),
            Err(ModelError::AllPadding)
        ));
    }

    #[test]
    fn encoder_matches_scalar_oracle() {
        let model = RankerModel::new(cfg(HeadVariant::EncdecTokenLogit)).unwrap();
        let ids = sample_ids();
        let got = model.encode(&ids).unwrap();
        let want = oracle::encoder(&model, &ids);
        for (i, row) in want.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                assert_close(got.row(i)[j], w, 1e-10, &format!("enc[{i}][{j}]"));
            }
        }
    }

    #[test]
    fn scores_match_scalar_oracle_all_heads() {
        let seqs = [
            sample_ids(),
            vec![19, 21, 22],
            vec![23, 1, 1, 24, 30, 31, 32, 33, 34, 35],
            vec![36, 37, PAD_ID, PAD_ID], // pad tail
        ];
        for head in [
            HeadVariant::EncdecTokenLogit,
            HeadVariant::EncPoolDense,
            HeadVariant::GenerationBaseline,
        ] {
            for pooling in [Pooling::First, Pooling::Mean] {
                let mut c = cfg(head);
                c.pooling = pooling;
                let model = RankerModel::new(c).unwrap();
                for ids in &seqs {
                    let got = model.score(ids).unwrap();
                    let want = oracle::score(&model, ids);
                    assert_close(
                        got,
                        want,
                        1e-10,
                        &format!("{} {:?} {:?}", head.as_str(), pooling, ids),
                    );
                }
            }
        }
    }

    #[test]
    fn score_encdec_equals_vocab_logits_at_target() {
        let model = RankerModel::new(cfg(HeadVariant::EncdecTokenLogit)).unwrap();
        let ids = sample_ids();
        let z = model.vocab_logits(&ids).unwrap();
        assert_eq!(z.len(), VOCAB);
        let s = model.score_encdec(&ids).unwrap();
        assert_close(s, z[model.config.target_token_id], 1e-12, "z[target]");

        // A different target token is a different score function.
        let mut other = cfg(HeadVariant::EncdecTokenLogit);
        other.target_token_id = sentinel_id(11);
        let model2 = RankerModel::new(other).unwrap();
        let s2 = model2.score_encdec(&ids).unwrap();
        assert_close(s2, z[sentinel_id(11)], 1e-12, "z[other target]");
        assert_ne!(s.to_bits(), s2.to_bits());
    }

    #[test]
    fn pad_tail_does_not_change_non_pad_outputs_or_scores() {
        for head in [
            HeadVariant::EncdecTokenLogit,
            HeadVariant::EncPoolDense,
            HeadVariant::GenerationBaseline,
        ] {
            let mut c = cfg(head);
            c.pooling = Pooling::Mean;
            let model = RankerModel::new(c).unwrap();
            let ids = vec![19, 25, 31, 22];
            let mut padded = ids.clone();
            padded.extend([PAD_ID; 5]);
            let a = model.encode(&ids).unwrap();
            let b = model.encode(&padded).unwrap();
            for i in 0..ids.len() {
                for j in 0..32 {
                    assert_close(a.row(i)[j], b.row(i)[j], 1e-10, "padded row");
                }
            }
            let sa = model.score(&ids).unwrap();
            let sb = model.score(&padded).unwrap();
            assert_close(sa, sb, 1e-10, &format!("{} pad invariance", head.as_str()));
        }
    }

    #[test]
    fn enc_head_pooling_properties() {
        // Length-1 input: first and mean pooling agree.
        let mut c = cfg(HeadVariant::EncPoolDense);
        c.pooling = Pooling::First;
        let first = RankerModel::new(c.clone()).unwrap();
        c.pooling = Pooling::Mean;
        let mean = RankerModel::new(c).unwrap();
        let ids = vec![27];
        assert_close(
            first.score_enc(&ids).unwrap(),
            mean.score_enc(&ids).unwrap(),
            1e-12,
            "singleton pooling",
        );
    }

    #[test]
    fn generation_baseline_probability_shape() {
        let mut model = RankerModel::new(cfg(HeadVariant::GenerationBaseline)).unwrap();
        let ids = sample_ids();
        // Pin the pos/neg logits via surgery: zero the projection rows, set
        // biases directly.
        let (pos, neg) = (model.config.pos_token_id, model.config.neg_token_id);
        {
            let proj = model.param_mut("out_proj").unwrap();
            let d = 32;
            for r in [pos, neg] {
                for j in 0..d {
                    proj.data[r * d + j] = 0.0;
                }
            }
        }
        let set_bias = |m: &mut RankerModel, zp: f64, zn: f64| {
            let bias = m.param_mut("out_bias").unwrap();
            bias.data[pos] = zp;
            bias.data[neg] = zn;
        };
        set_bias(&mut model, 1.0, 0.0);
        assert_close(
            model.score_generation_baseline(&ids).unwrap(),
            0.7310585786300049,
            1e-12,
            "sigma(1)",
        );
        set_bias(&mut model, 0.25, 0.25);
        assert_close(
            model.score_generation_baseline(&ids).unwrap(),
            0.5,
            1e-15,
            "equal logits",
        );
        // Strictly increasing in the logit difference.
        let mut last = -1.0;
        for i in 0..50 {
            let diff = -6.0 + 0.25 * i as f64;
            set_bias(&mut model, diff, 0.0);
            let s = model.score_generation_baseline(&ids).unwrap();
            assert!(s > last, "monotone at diff {diff}: {s} <= {last}");
            assert!((0.0..=1.0).contains(&s));
            last = s;
        }
    }

    #[test]
    fn wrong_head_calls_are_rejected() {
        let encdec = RankerModel::new(cfg(HeadVariant::EncdecTokenLogit)).unwrap();
        let enc = RankerModel::new(cfg(HeadVariant::EncPoolDense)).unwrap();
        let ids = sample_ids();
        assert!(matches!(
            enc.score_encdec(&ids),
            Err(ModelError::WrongHead { .. })
        ));
        assert!(matches!(
            encdec.score_enc(&ids),
            Err(ModelError::WrongHead { .. })
        ));
        assert!(matches!(
            encdec.score_generation_baseline(&ids),
            Err(ModelError::WrongHead { .. })
        ));
        assert!(matches!(
            enc.vocab_logits(&ids),
            Err(ModelError::NoDecoder { .. })
        ));
    }

    #[test]
    fn score_list_matches_individual_scores_and_is_independent() {
        for head in [
            HeadVariant::EncdecTokenLogit,
            HeadVariant::EncPoolDense,
            HeadVariant::GenerationBaseline,
        ] {
            let model = RankerModel::new(cfg(head)).unwrap();
            let lists = vec![sample_ids(), vec![19, 20], vec![30, 31, 32]];
            let batch = model.score_list(&lists).unwrap();
            for (ids, &s) in lists.iter().zip(&batch) {
                assert_eq!(s.to_bits(), model.score(ids).unwrap().to_bits());
            }
            // Reordering inputs reorders outputs.
            let rev: Vec<Vec<usize>> = lists.iter().rev().cloned().collect();
            let batch_rev = model.score_list(&rev).unwrap();
            for (a, b) in batch.iter().zip(batch_rev.iter().rev()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            // Changing other list members leaves a score untouched.
            let other = vec![sample_ids(), vec![33, 34, 35, 36], vec![37, 38]];
            let batch_other = model.score_list(&other).unwrap();
            assert_eq!(batch[0].to_bits(), batch_other[0].to_bits());
        }
    }

    #[test]
    fn target_bias_shift_preserves_ranking() {
        let mut model = RankerModel::new(cfg(HeadVariant::EncdecTokenLogit)).unwrap();
        let lists: Vec<Vec<usize>> = vec![
            sample_ids(),
            vec![19, 20, 21],
            vec![22, 23, 24, 25],
            vec![26, 27],
            vec![28, 29, 30, 31, 32],
            vec![33, 34],
        ];
        let before = model.score_list(&lists).unwrap();
        let target = model.config.target_token_id;
        model.param_mut("out_bias").unwrap().data[target] += 3.25;
        let after = model.score_list(&lists).unwrap();
        let argsort = |xs: &[f64]| {
            let mut idx: Vec<usize> = (0..xs.len()).collect();
            idx.sort_by(|&a, &b| xs[b].partial_cmp(&xs[a]).unwrap());
            idx
        };
        assert_eq!(argsort(&before), argsort(&after));
        for (b, a) in before.iter().zip(&after) {
            assert_close(a - b, 3.25, 1e-9, "uniform shift");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("model.ckpt");
        let p2 = dir.path().join("model2.ckpt");
        for head in [HeadVariant::EncdecTokenLogit, HeadVariant::EncPoolDense] {
            let model = RankerModel::new(cfg(head)).unwrap();
            model.save(&p1).unwrap();
            let loaded = RankerModel::load(&p1).unwrap();
            assert_eq!(model.config, loaded.config);
            for (a, b) in model.params().iter().zip(loaded.params()) {
                assert_eq!(a.shape, b.shape);
                assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            loaded.save(&p2).unwrap();
            assert_eq!(
                std::fs::read(&p1).unwrap(),
                std::fs::read(&p2).unwrap(),
                "save/load/save byte-stable"
            );
            assert_eq!(file_fnv1a(&p1).unwrap(), file_fnv1a(&p2).unwrap());
        }
    }

    #[test]
    fn checkpoint_errors_name_the_offending_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = RankerModel::new(cfg(HeadVariant::EncPoolDense)).unwrap();
        model.save(&path).unwrap();

        // Corrupt the name "score.w" -> "score.x".
        let bytes = std::fs::read(&path).unwrap();
        let needle = b"score.w";
        let at = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        let mut tampered = bytes.clone();
        tampered[at + 6] = b'x';
        std::fs::write(&path, &tampered).unwrap();
        let err = RankerModel::load(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("score.x") && msg.contains("score.w"), "{msg}");

        // NaN in a parameter blob is rejected with the parameter's name.
        let mut nan = bytes.clone();
        let tail = nan.len() - 8;
        nan[tail..].copy_from_slice(&f64::NAN.to_le_bytes());
        std::fs::write(&path, &nan).unwrap();
        let err = RankerModel::load(&path).unwrap_err();
        assert!(err.to_string().contains("score.b"), "{err}");

        // Truncation is reported as a bad checkpoint.
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            RankerModel::load(&path),
            Err(ModelError::BadCheckpoint { .. })
        ));
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let heads = [
            (HeadVariant::EncdecTokenLogit, Pooling::First),
            (HeadVariant::EncPoolDense, Pooling::First),
            (HeadVariant::EncPoolDense, Pooling::Mean),
            (HeadVariant::GenerationBaseline, Pooling::First),
        ];
        let seqs: Vec<Vec<usize>> = vec![
            vec![19, 20, 3, 21, PAD_ID, PAD_ID],
            vec![22, 1, 23],
            vec![19, 23, 22, 21, 20],
        ];
        let weights = [0.7, -1.3, 0.4];
        for (head, pooling) in heads {
            let mut c = ModelConfig::tiny(24);
            c.model_dim = 8;
            c.num_heads = 2;
            c.ff_dim = 16;
            c.max_seq_len = 12;
            c.head_variant = head;
            c.pooling = pooling;
            if head == HeadVariant::EncPoolDense {
                c.decoder_layers = 0;
            }
            let mut model = RankerModel::new(c).unwrap();

            let value = |m: &RankerModel| -> f64 {
                let mut g = Graph::new();
                let b = m.bind(&mut g, false);
                let mut total = 0.0;
                for (ids, &w) in seqs.iter().zip(&weights) {
                    let node = m.logit_on(&mut g, &b, ids).unwrap();
                    total += w * g.scalar_value(node);
                }
                total
            };

            // Analytic gradients via one backward pass.
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let logits: Vec<NodeId> = seqs
                .iter()
                .map(|ids| model.logit_on(&mut g, &bound, ids).unwrap())
                .collect();
            let scores = g.concat_scalars(&logits).unwrap();
            let scores_col = g.reshape(scores, vec![seqs.len(), 1]).unwrap();
            let w = g.constant(Tensor::new(vec![1, seqs.len()], weights.to_vec()).unwrap());
            let loss2 = g.matmul(w, scores_col).unwrap();
            let loss = g.sum(loss2);
            g.backward(loss).unwrap();
            let mut grads: Vec<Vec<f64>> = Vec::with_capacity(bound.nodes.len());
            for &n in &bound.nodes {
                let numel = g.tensor(n).numel();
                grads.push(match g.grad(n) {
                    Some(s) => s.to_vec(),
                    None => vec![0.0; numel],
                });
            }

            // Central finite differences over every coordinate.
            let h = 1e-5;
            let names: Vec<String> = model.param_names().map(str::to_string).collect();
            let mut worst = 0.0f64;
            for (pi, name) in names.iter().enumerate() {
                let n = model.params()[pi].numel();
                for j in 0..n {
                    let old = model.params()[pi].data[j];
                    model.params_mut()[pi].data[j] = old + h;
                    let up = value(&model);
                    model.params_mut()[pi].data[j] = old - h;
                    let down = value(&model);
                    model.params_mut()[pi].data[j] = old;
                    let fd = (up - down) / (2.0 * h);
                    let an = grads[pi][j];
                    let rel = (fd - an).abs() / f64::max(1.0, f64::max(fd.abs(), an.abs()));
                    assert!(
                        rel <= 1e-5,
                        "{} {name}[{j}]: analytic {an} vs fd {fd} (rel {rel})",
                        head.as_str()
                    );
                    worst = worst.max(rel);
                }
            }
            assert!(worst <= 1e-5);
        }
    }

    #[test]
    fn preset_lookup() {
        assert_eq!(ModelConfig::preset("tiny", 64).unwrap().model_dim, 32);
        assert_eq!(ModelConfig::preset("small", 64).unwrap().model_dim, 64);
        assert_eq!(
            ModelConfig::preset("base-toy", 64).unwrap().encoder_layers,
            4
        );
        assert!(ModelConfig::preset("huge", 64).is_err());
    }
}
