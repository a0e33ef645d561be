//! Transformer encoder with an explicitly split forward pass and a two-layer
//! MLP classification head.
//!
//! Layer 0 is the embedding layer. [`forward_range`] applies layers
//! `from + 1 ..= to` and checks the incoming [`HiddenState::layer_index`], so
//! the lower and upper halves around a mixing point cannot overlap.

use std::cell::RefCell;
use std::path::Path;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Checkpoint, ParamGroup, ParamStore, Tape, Tensor, Var};
use crate::text::TokenSeq;
use crate::tmix::ProbLabel;

/// Additive attention bias for padded keys; large enough that `exp` underflows to 0.
const MASKED_SCORE: f64 = -1e30;

/// Rows per forward pass when predicting over a whole dataset.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub ff_width: usize,
    /// Filled from the vocabulary when left at 0 in a run config.
    #[serde(default)]
    pub vocab_size: usize,
    pub max_len: usize,
    #[serde(default = "default_head_hidden")]
    pub head_hidden: usize,
    #[serde(default)]
    pub num_classes: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
    /// Dropout after the attention and feed-forward sublayers; 0 disables it.
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_head_hidden() -> usize {
    128
}

fn default_eps() -> f64 {
    1e-5
}

impl EncoderConfig {
    /// Four layers of width 64 with four heads and a 128-wide feed-forward block.
    pub fn desk(vocab_size: usize, num_classes: usize) -> Self {
        Self {
            num_layers: 4,
            d_model: 64,
            num_heads: 4,
            ff_width: 128,
            vocab_size,
            max_len: 64,
            head_hidden: 128,
            num_classes,
            layer_norm_eps: 1e-5,
            dropout: 0.0,
            seed: 0,
        }
    }

    /// BERT-base geometry, for reference runs.
    pub fn base(vocab_size: usize, num_classes: usize) -> Self {
        Self {
            num_layers: 12,
            d_model: 768,
            num_heads: 12,
            ff_width: 3072,
            max_len: 256,
            ..Self::desk(vocab_size, num_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_layers == 0 {
            return fail("num_layers must be at least 1".into());
        }
        if self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return fail(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            ));
        }
        for (name, v) in [
            ("d_model", self.d_model),
            ("ff_width", self.ff_width),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("head_hidden", self.head_hidden),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.num_classes < 2 {
            return fail("num_classes must be at least 2".into());
        }
        if self.layer_norm_eps <= 0.0 {
            return fail("layer_norm_eps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must be in [0, 1)".into());
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        rng::hash_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }
}

#[derive(Debug, Clone)]
struct LayerSlots {
    q: (usize, usize),
    k: (usize, usize),
    v: (usize, usize),
    o: (usize, usize),
    ln1: (usize, usize),
    up: (usize, usize),
    down: (usize, usize),
    ln2: (usize, usize),
}

#[derive(Debug, Clone)]
struct Layout {
    token: usize,
    position: usize,
    layers: Vec<LayerSlots>,
    hidden: (usize, usize),
    out: (usize, usize),
}

/// Encoder plus classifier head, owning its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: EncoderConfig,
    params: ParamStore,
    layout: Layout,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
    )
    .expect("shape matches")
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches")
}

impl Model {
    /// Initialises parameters from `config.seed`: normal(0, 0.02) embeddings,
    /// uniform(±1/√fan_in) affine weights, zero biases, unit layer-norm gains.
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(config.seed, &["init"]);
        let mut ps = ParamStore::new();
        let (d, ff, hh) = (config.d_model, config.ff_width, config.head_hidden);
        let enc = ParamGroup::Encoder;

        let token = ps.push(
            "embed.token",
            normal(&mut rng, &[config.vocab_size, d], 0.02),
            enc,
        );
        let position = ps.push(
            "embed.position",
            normal(&mut rng, &[config.max_len, d], 0.02),
            enc,
        );

        let mut affine =
            |ps: &mut ParamStore, name: String, fan_in: usize, fan_out: usize, group| {
                let w = ps.push(
                    format!("{name}.weight"),
                    uniform(&mut rng, &[fan_in, fan_out], fan_in),
                    group,
                );
                let b = ps.push(format!("{name}.bias"), Tensor::zeros(&[fan_out]), group);
                (w, b)
            };
        let norm = |ps: &mut ParamStore, name: String| {
            let g = ps.push(format!("{name}.gain"), Tensor::full(&[d], 1.0), enc);
            let b = ps.push(format!("{name}.bias"), Tensor::zeros(&[d]), enc);
            (g, b)
        };

        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 1..=config.num_layers {
            let p = format!("layers.{l}");
            layers.push(LayerSlots {
                q: affine(&mut ps, format!("{p}.attn.q"), d, d, enc),
                k: affine(&mut ps, format!("{p}.attn.k"), d, d, enc),
                v: affine(&mut ps, format!("{p}.attn.v"), d, d, enc),
                o: affine(&mut ps, format!("{p}.attn.o"), d, d, enc),
                ln1: norm(&mut ps, format!("{p}.ln1")),
                up: affine(&mut ps, format!("{p}.ffn.up"), d, ff, enc),
                down: affine(&mut ps, format!("{p}.ffn.down"), ff, d, enc),
                ln2: norm(&mut ps, format!("{p}.ln2")),
            });
        }
        let hidden = affine(&mut ps, "head.hidden".into(), d, hh, ParamGroup::Head);
        let out = affine(
            &mut ps,
            "head.out".into(),
            hh,
            config.num_classes,
            ParamGroup::Head,
        );

        Ok(Self {
            config,
            params: ps,
            layout: Layout {
                token,
                position,
                layers,
                hidden,
                out,
            },
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Records the parameters on `tape` and returns a handle for the forward
    /// functions. Constants when `trainable` is false.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound<'_> {
        let vars = self.params.bind(tape, trainable);
        Bound::new(self, vars)
    }

    /// Class probabilities for each sequence, evaluated in chunks.
    pub fn predict_proba(&self, seqs: &[TokenSeq]) -> Result<Vec<ProbLabel>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(EVAL_CHUNK) {
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape, false);
            let batch = TokenBatch::new(chunk)?;
            let logits = bound.logits(&mut tape, &batch)?;
            let probs = tape.softmax(logits, 1)?;
            for row in tape.value(probs).rows() {
                out.push(ProbLabel::new(row.to_vec())?);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::from_store(&self.params, self.config.hash()).save(path)
    }

    /// Builds a model for `config` and overwrites its parameters from `path`.
    pub fn load(config: EncoderConfig, path: &Path) -> Result<Self> {
        let mut model = Self::new(config)?;
        let hash = model.config.hash();
        Checkpoint::load(path)?.restore_into(&mut model.params, &hash)?;
        Ok(model)
    }
}

/// Same-length token sequences flattened for the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    ids: Vec<u32>,
    mask: Vec<f64>,
    batch: usize,
    len: usize,
}

impl TokenBatch {
    pub fn new(seqs: &[TokenSeq]) -> Result<Self> {
        Self::from_refs(&seqs.iter().collect::<Vec<_>>())
    }

    pub fn from_refs(seqs: &[&TokenSeq]) -> Result<Self> {
        let first = seqs
            .first()
            .ok_or_else(|| Error::Contract("empty token batch".into()))?;
        let len = first.len();
        if len == 0 {
            return Err(Error::Contract("zero-length token sequence".into()));
        }
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut mask = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            if s.len() != len || s.mask.len() != len {
                return Err(Error::Contract(format!(
                    "padded length mismatch in batch: {len} vs {}",
                    s.len()
                )));
            }
            ids.extend_from_slice(&s.ids);
            mask.extend(s.mask.iter().map(|&m| f64::from(m)));
        }
        Ok(Self {
            ids,
            mask,
            batch: seqs.len(),
            len,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.batch == 0
    }

    pub fn mask(&self) -> &[f64] {
        &self.mask
    }
}

/// Activations after `layer_index` layers, with the mask that governs
/// attention and pooling.
#[derive(Debug, Clone)]
pub struct HiddenState {
    pub act: Var,
    pub mask: Rc<[f64]>,
    pub layer_index: usize,
    pub batch: usize,
    pub len: usize,
}

struct Dropout {
    p: f64,
    rng: RefCell<ChaCha8Rng>,
}

/// Model parameters recorded on one tape.
pub struct Bound<'m> {
    model: &'m Model,
    vars: Vec<Var>,
    dropout: Option<Dropout>,
}

impl<'m> Bound<'m> {
    /// Wraps externally bound parameter vars, in [`ParamStore`] order.
    pub fn new(model: &'m Model, vars: Vec<Var>) -> Self {
        assert_eq!(vars.len(), model.params.len(), "one var per parameter");
        Self {
            model,
            vars,
            dropout: None,
        }
    }

    /// Enables the configured dropout with masks drawn from `rng`.
    pub fn with_dropout(mut self, rng: ChaCha8Rng) -> Self {
        if self.model.config.dropout > 0.0 {
            self.dropout = Some(Dropout {
                p: self.model.config.dropout,
                rng: RefCell::new(rng),
            });
        }
        self
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.model.config
    }

    fn v(&self, slot: usize) -> Var {
        self.vars[slot]
    }

    fn linear(&self, tape: &mut Tape, x: Var, (w, b): (usize, usize)) -> Result<Var> {
        let y = tape.matmul(x, self.v(w))?;
        tape.add_row(y, self.v(b))
    }

    fn maybe_dropout(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match &self.dropout {
            Some(d) => tape.dropout(x, d.p, &mut *d.rng.borrow_mut()),
            None => Ok(x),
        }
    }

    /// Token plus learned position embeddings, zeroed at padded positions.
    pub fn embed(&self, tape: &mut Tape, batch: &TokenBatch) -> Result<HiddenState> {
        let cfg = &self.model.config;
        let (b, t, d) = (batch.batch, batch.len, cfg.d_model);
        if t > cfg.max_len {
            return Err(Error::Contract(format!(
                "sequence length {t} exceeds max_len {}",
                cfg.max_len
            )));
        }
        let mut tok_index = Vec::with_capacity(b * t * d);
        for &id in &batch.ids {
            if id as usize >= cfg.vocab_size {
                return Err(Error::Index {
                    index: id as usize,
                    size: cfg.vocab_size,
                });
            }
            let base = id as usize * d;
            tok_index.extend(base..base + d);
        }
        let pos_index: Vec<usize> = (0..b).flat_map(|_| 0..t * d).collect();
        let tok = tape.gather(
            self.v(self.model.layout.token),
            Rc::from(tok_index),
            &[b, t, d],
        )?;
        let pos = tape.gather(
            self.v(self.model.layout.position),
            Rc::from(pos_index),
            &[b, t, d],
        )?;
        let sum = tape.add(tok, pos)?;
        let spread: Vec<f64> = batch
            .mask
            .iter()
            .flat_map(|&m| std::iter::repeat_n(m, d))
            .collect();
        let mask = tape.constant(Tensor::new(vec![b, t, d], spread)?);
        let act = tape.mul(sum, mask)?;
        Ok(HiddenState {
            act,
            mask: Rc::from(batch.mask.clone()),
            layer_index: 0,
            batch: b,
            len: t,
        })
    }

    /// Applies layers `from + 1 ..= to`. `from == to` is the identity.
    pub fn forward_range(
        &self,
        tape: &mut Tape,
        h: HiddenState,
        from: usize,
        to: usize,
    ) -> Result<HiddenState> {
        let depth = self.model.config.num_layers;
        if h.layer_index != from {
            return Err(Error::Contract(format!(
                "hidden state is at layer {} but forward_range starts at {from}",
                h.layer_index
            )));
        }
        if from > to || to > depth {
            return Err(Error::Contract(format!(
                "invalid layer range {from}..{to} for a {depth}-layer encoder"
            )));
        }
        if from == to {
            return Ok(h);
        }
        let bias = self.attention_bias(tape, &h)?;
        let mut act = h.act;
        for l in from + 1..=to {
            act = self.layer(tape, act, bias, &h, l)?;
        }
        Ok(HiddenState {
            act,
            layer_index: to,
            ..h
        })
    }

    fn attention_bias(&self, tape: &mut Tape, h: &HiddenState) -> Result<Var> {
        let heads = self.model.config.num_heads;
        let (b, t) = (h.batch, h.len);
        let mut data = Vec::with_capacity(b * heads * t * t);
        for bi in 0..b {
            let keys = &h.mask[bi * t..(bi + 1) * t];
            for _ in 0..heads * t {
                data.extend(
                    keys.iter()
                        .map(|&m| if m > 0.0 { 0.0 } else { MASKED_SCORE }),
                );
            }
        }
        Ok(tape.constant(Tensor::new(vec![b * heads, t, t], data)?))
    }

    fn layer(&self, tape: &mut Tape, x: Var, bias: Var, h: &HiddenState, l: usize) -> Result<Var> {
        let cfg = &self.model.config;
        let slots = &self.model.layout.layers[l - 1];
        let (b, t, d) = (h.batch, h.len, cfg.d_model);
        let heads = cfg.num_heads;
        let dh = cfg.head_dim();

        let x2 = tape.reshape(x, &[b * t, d])?;
        let q = self.linear(tape, x2, slots.q)?;
        let k = self.linear(tape, x2, slots.k)?;
        let v = self.linear(tape, x2, slots.v)?;

        // [b*t, d] -> [b*heads, t, dh]
        let mut split = Vec::with_capacity(b * t * d);
        for bi in 0..b {
            for hi in 0..heads {
                for ti in 0..t {
                    let base = (bi * t + ti) * d + hi * dh;
                    split.extend(base..base + dh);
                }
            }
        }
        let split: Rc<[usize]> = Rc::from(split);
        let head_shape = [b * heads, t, dh];
        let qh = tape.gather(q, split.clone(), &head_shape)?;
        let kh = tape.gather(k, split.clone(), &head_shape)?;
        let vh = tape.gather(v, split.clone(), &head_shape)?;

        let scores = tape.bmm(qh, kh, true)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let scores = tape.add(scores, bias)?;
        let attn = tape.softmax(scores, 2)?;
        let ctx = tape.bmm(attn, vh, false)?;

        // inverse permutation back to [b*t, d]
        let mut merge = vec![0usize; split.len()];
        for (dst, &src) in split.iter().enumerate() {
            merge[src] = dst;
        }
        let ctx = tape.gather(ctx, Rc::from(merge), &[b * t, d])?;
        let attn_out = self.linear(tape, ctx, slots.o)?;
        let attn_out = self.maybe_dropout(tape, attn_out)?;
        let res = tape.add(x2, attn_out)?;
        let eps = cfg.layer_norm_eps;
        let n1 = tape.layer_norm(res, self.v(slots.ln1.0), self.v(slots.ln1.1), eps)?;

        let up = self.linear(tape, n1, slots.up)?;
        let act = tape.gelu(up);
        let down = self.linear(tape, act, slots.down)?;
        let down = self.maybe_dropout(tape, down)?;
        let res2 = tape.add(n1, down)?;
        let n2 = tape.layer_norm(res2, self.v(slots.ln2.0), self.v(slots.ln2.1), eps)?;
        tape.reshape(n2, &[b, t, d])
    }

    /// Mask-weighted mean over real positions of the top layer.
    pub fn pool(&self, tape: &mut Tape, h: &HiddenState) -> Result<Var> {
        let depth = self.model.config.num_layers;
        if h.layer_index != depth {
            return Err(Error::Contract(format!(
                "pooling needs layer {depth}, hidden state is at layer {}",
                h.layer_index
            )));
        }
        let (b, t, d) = (h.batch, h.len, self.model.config.d_model);
        let mut weights = Vec::with_capacity(b * t);
        for row in h.mask.chunks(t) {
            let count: f64 = row.iter().sum();
            if count <= 0.0 {
                return Err(Error::Contract("sequence without real tokens".into()));
            }
            weights.extend(row.iter().map(|m| m / count));
        }
        let w = tape.constant(Tensor::new(vec![b, 1, t], weights)?);
        let pooled = tape.bmm(w, h.act, false)?;
        tape.reshape(pooled, &[b, d])
    }

    /// Input to the head's tanh: `pooled · W₁ + b₁`.
    pub fn head_preactivation(&self, tape: &mut Tape, pooled: Var) -> Result<Var> {
        self.linear(tape, pooled, self.model.layout.hidden)
    }

    /// Two-layer tanh MLP producing logits.
    pub fn classify(&self, tape: &mut Tape, pooled: Var) -> Result<Var> {
        let pre = self.head_preactivation(tape, pooled)?;
        let hidden = tape.tanh(pre);
        self.linear(tape, hidden, self.model.layout.out)
    }

    /// Full unsplit forward pass to logits.
    pub fn logits(&self, tape: &mut Tape, batch: &TokenBatch) -> Result<Var> {
        let h0 = self.embed(tape, batch)?;
        let top = self.forward_range(tape, h0, 0, self.model.config.num_layers)?;
        let pooled = self.pool(tape, &top)?;
        self.classify(tape, pooled)
    }
}
