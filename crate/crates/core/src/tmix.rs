//! Hidden-space interpolation: λ and layer sampling, the paired split
//! forward pass, label mixing and the KL loss.

use std::rc::Rc;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::encoder::{Bound, HiddenState, TokenBatch};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

const PROB_TOL: f64 = 1e-9;

/// A class distribution: nonnegative entries summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbLabel(Vec<f64>);

impl ProbLabel {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Contract("empty probability vector".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Contract(format!("invalid probabilities {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::Contract(format!("probabilities sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn one_hot(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::Index {
                index: class,
                size: num_classes,
            });
        }
        let mut v = vec![0.0; num_classes];
        v[class] = 1.0;
        Ok(Self(v))
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self(vec![1.0 / num_classes as f64; num_classes])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Stacks rows into a `[n, C]` tensor.
    pub fn stack(rows: &[ProbLabel]) -> Result<Tensor> {
        let c = rows
            .first()
            .ok_or_else(|| Error::Contract("no labels to stack".into()))?
            .len();
        let mut data = Vec::with_capacity(rows.len() * c);
        for r in rows {
            if r.len() != c {
                return Err(Error::shape("stack", &[c], &[r.len()]));
            }
            data.extend_from_slice(&r.0);
        }
        Tensor::new(vec![rows.len(), c], data)
    }
}

impl TryFrom<Vec<f64>> for ProbLabel {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbLabel> for Vec<f64> {
    fn from(p: ProbLabel) -> Self {
        p.0
    }
}

/// Layers at which mixing may happen, or no mixing at all.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MixLayers {
    Off,
    Set(Vec<usize>),
}

impl MixLayers {
    /// The default set for an encoder of the given depth: layers at roughly
    /// 7/12, 9/12 and 12/12 of the stack.
    pub fn default_for_depth(depth: usize) -> Self {
        let mut set: Vec<usize> = [7usize, 9, 12]
            .iter()
            .map(|f| ((f * depth) as f64 / 12.0).round() as usize)
            .collect();
        set.dedup();
        Self::Set(set)
    }

    pub fn is_off(&self) -> bool {
        matches!(self, Self::Off)
    }
}

impl std::fmt::Display for MixLayers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Off => f.write_str("off"),
            Self::Set(v) => {
                let parts: Vec<String> = v.iter().map(usize::to_string).collect();
                write!(f, "{{{}}}", parts.join(","))
            }
        }
    }
}

impl Serialize for MixLayers {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Off => s.serialize_str("off"),
            Self::Set(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for MixLayers {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            List(Vec<usize>),
        }
        match Raw::deserialize(d)? {
            Raw::Word(w) if w == "off" => Ok(Self::Off),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "mix_layers must be a list or \"off\", got {w:?}"
            ))),
            Raw::List(v) => Ok(Self::Set(v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixConfig {
    pub alpha: f64,
    pub mix_layers: MixLayers,
    #[serde(default)]
    pub mix_seed: u64,
    /// Replaces the sampled λ; for tests and reductions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force_lambda: Option<f64>,
}

impl MixConfig {
    pub fn validate(&self, depth: usize) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if let MixLayers::Set(set) = &self.mix_layers {
            if set.is_empty() {
                return Err(Error::Config(
                    "mix_layers is empty; use \"off\" to disable mixing".into(),
                ));
            }
            if let Some(m) = set.iter().find(|&&m| m > depth) {
                return Err(Error::Config(format!(
                    "mix layer {m} exceeds encoder depth {depth}"
                )));
            }
        }
        if let Some(l) = self.force_lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::Config(format!("force_lambda {l} not in [0, 1]")));
            }
        }
        Ok(())
    }

    /// One draw for a batch, or `None` when mixing is off.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Result<Option<MixDraw>> {
        let MixLayers::Set(set) = &self.mix_layers else {
            return Ok(None);
        };
        let lambda = sample_lambda(self.alpha, rng)?;
        let layer = sample_mix_layer(set, rng)?;
        Ok(Some(MixDraw {
            lambda: self.force_lambda.unwrap_or(lambda),
            layer,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixDraw {
    pub lambda: f64,
    pub layer: usize,
}

/// Beta(α, α) folded onto [0.5, 1].
pub fn sample_lambda<R: Rng>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(e.to_string()))?;
    let l: f64 = beta.sample(rng);
    Ok(l.max(1.0 - l))
}

pub fn sample_mix_layer<R: Rng>(set: &[usize], rng: &mut R) -> Result<usize> {
    if set.is_empty() {
        return Err(Error::Config("mix layer set is empty".into()));
    }
    Ok(set[rng.random_range(0..set.len())])
}

/// Mask of a mixture: the OR of both masks, except at λ = 1 (or 0) where the
/// mixture is exactly one input and keeps that input's mask.
fn mixed_mask(mask_i: &[f64], mask_j: &[f64], lambda: f64) -> Rc<[f64]> {
    if lambda == 1.0 {
        return Rc::from(mask_i);
    }
    if lambda == 0.0 {
        return Rc::from(mask_j);
    }
    mask_i
        .iter()
        .zip(mask_j)
        .map(|(&a, &b)| if a > 0.0 || b > 0.0 { 1.0 } else { 0.0 })
        .collect()
}

/// `λ·h_i + (1−λ)·h_j` at a shared layer.
pub fn mix_hidden(
    tape: &mut Tape,
    h_i: &HiddenState,
    h_j: &HiddenState,
    lambda: f64,
) -> Result<HiddenState> {
    if h_i.layer_index != h_j.layer_index {
        return Err(Error::Contract(format!(
            "mixing states from layers {} and {}",
            h_i.layer_index, h_j.layer_index
        )));
    }
    if (h_i.batch, h_i.len) != (h_j.batch, h_j.len) {
        return Err(Error::shape(
            "mix_hidden",
            &[h_i.batch, h_i.len],
            &[h_j.batch, h_j.len],
        ));
    }
    let a = tape.scale(h_i.act, lambda);
    let b = tape.scale(h_j.act, 1.0 - lambda);
    let act = tape.add(a, b)?;
    Ok(HiddenState {
        act,
        mask: mixed_mask(&h_i.mask, &h_j.mask, lambda),
        ..h_i.clone()
    })
}

fn finish(tape: &mut Tape, bound: &Bound<'_>, mixed: HiddenState, m: usize) -> Result<Var> {
    let top = bound.forward_range(tape, mixed, m, bound.config().num_layers)?;
    let pooled = bound.pool(tape, &top)?;
    bound.classify(tape, pooled)
}

/// Logits of the mixture of `x_i` and `x_j` at layer `draw.layer`.
pub fn tmix_forward(
    tape: &mut Tape,
    bound: &Bound<'_>,
    x_i: &TokenBatch,
    x_j: &TokenBatch,
    draw: MixDraw,
) -> Result<Var> {
    if (x_i.batch(), x_i.len()) != (x_j.batch(), x_j.len()) {
        return Err(Error::Contract(format!(
            "paired batches differ: {}x{} vs {}x{}",
            x_i.batch(),
            x_i.len(),
            x_j.batch(),
            x_j.len()
        )));
    }
    let m = draw.layer;
    let e_i = bound.embed(tape, x_i)?;
    let h_i = bound.forward_range(tape, e_i, 0, m)?;
    let e_j = bound.embed(tape, x_j)?;
    let h_j = bound.forward_range(tape, e_j, 0, m)?;
    let mixed = mix_hidden(tape, &h_i, &h_j, draw.lambda)?;
    finish(tape, bound, mixed, m)
}

/// Mixes every row `r` of `x` with row `partner[r]`, running the lower layers
/// once for the whole batch.
pub fn tmix_forward_paired(
    tape: &mut Tape,
    bound: &Bound<'_>,
    x: &TokenBatch,
    partner: &[usize],
    draw: MixDraw,
) -> Result<Var> {
    let (b, t, d) = (x.batch(), x.len(), bound.config().d_model);
    if partner.len() != b {
        return Err(Error::shape("tmix_forward_paired", &[b], &[partner.len()]));
    }
    if let Some(&bad) = partner.iter().find(|&&p| p >= b) {
        return Err(Error::Index {
            index: bad,
            size: b,
        });
    }
    let m = draw.layer;
    let e = bound.embed(tape, x)?;
    let h_i = bound.forward_range(tape, e, 0, m)?;
    let row = t * d;
    let index: Vec<usize> = partner
        .iter()
        .flat_map(|&p| p * row..(p + 1) * row)
        .collect();
    let act_j = tape.gather(h_i.act, Rc::from(index), &[b, t, d])?;
    let mask_j: Vec<f64> = partner
        .iter()
        .flat_map(|&p| h_i.mask[p * t..(p + 1) * t].iter().copied())
        .collect();
    let h_j = HiddenState {
        act: act_j,
        mask: Rc::from(mask_j),
        ..h_i.clone()
    };
    let mixed = mix_hidden(tape, &h_i, &h_j, draw.lambda)?;
    finish(tape, bound, mixed, m)
}

/// `λ·y_i + (1−λ)·y_j`.
pub fn mix_labels(y_i: &ProbLabel, y_j: &ProbLabel, lambda: f64) -> Result<ProbLabel> {
    if y_i.len() != y_j.len() {
        return Err(Error::Contract(format!(
            "label widths differ: {} vs {}",
            y_i.len(),
            y_j.len()
        )));
    }
    let v: Vec<f64> = y_i
        .0
        .iter()
        .zip(&y_j.0)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    let sum: f64 = v.iter().sum();
    ProbLabel::new(v.into_iter().map(|p| p / sum).collect())
}

/// Batch-mean KL(target ‖ softmax(logits)); the target is a constant.
pub fn kl_loss(tape: &mut Tape, target: &Tensor, logits: Var) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if target.shape() != shape.as_slice() || shape.len() != 2 {
        return Err(Error::shape("kl_loss", target.shape(), &shape));
    }
    for row in target.rows() {
        ProbLabel::new(row.to_vec())?;
    }
    let neg_entropy: f64 = target
        .data()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum();
    let lp = tape.log_softmax(logits)?;
    let t = tape.constant(target.clone());
    let cross = tape.mul(t, lp)?;
    let cross = tape.sum(cross);
    let kl = tape.scale(cross, -1.0);
    let kl = tape.add_scalar(kl, neg_entropy);
    Ok(tape.scale(kl, 1.0 / shape[0] as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, Model};
    use crate::rng;
    use crate::tensor::finite_diff_check;
    use crate::text::{TokenSeq, CLS, PAD};
    use proptest::prelude::*;

    fn seq(ids: &[u32], len: usize) -> TokenSeq {
        let mut all = vec![CLS];
        all.extend_from_slice(ids);
        let true_len = all.len();
        all.resize(len, PAD);
        TokenSeq {
            mask: (0..len).map(|i| u8::from(i < true_len)).collect(),
            ids: all,
            true_len,
        }
    }

    fn config(layers: usize) -> EncoderConfig {
        EncoderConfig {
            num_layers: layers,
            d_model: 8,
            num_heads: 2,
            ff_width: 10,
            vocab_size: 16,
            max_len: 6,
            head_hidden: 6,
            num_classes: 3,
            layer_norm_eps: 1e-5,
            dropout: 0.0,
            seed: 5,
        }
    }

    fn pair() -> (TokenBatch, TokenBatch) {
        let a = TokenBatch::new(&[seq(&[3, 4, 5], 6), seq(&[7], 6)]).unwrap();
        let b = TokenBatch::new(&[seq(&[9, 10], 6), seq(&[11, 12, 13, 14], 6)]).unwrap();
        (a, b)
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn kl_examples() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let target = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let l = kl_loss(&mut tape, &target, logits).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);

        let raw = Tensor::from_rows(&[vec![0.3, -1.2, 2.0], vec![0.0, 0.5, 0.1]]).unwrap();
        let logits = tape.constant(raw);
        let p = tape.softmax(logits, 1).unwrap();
        let target = tape.value(p).clone();
        let l = kl_loss(&mut tape, &target, logits).unwrap();
        assert!(tape.value(l).item().abs() < 1e-12);
    }

    #[test]
    fn kl_rejects_invalid_target() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let bad = Tensor::from_rows(&[vec![0.7, 0.7]]).unwrap();
        assert!(matches!(
            kl_loss(&mut tape, &bad, logits),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn kl_target_is_constant() {
        let mut tape = Tape::new();
        let logits = tape.param(Tensor::from_rows(&[vec![0.2, -0.1]]).unwrap());
        let target = Tensor::from_rows(&[vec![0.25, 0.75]]).unwrap();
        let l = kl_loss(&mut tape, &target, logits).unwrap();
        let g = tape.backward(l).unwrap().wrt(logits);
        let p0 = 1.0 / (1.0 + (-0.3f64).exp());
        assert!((g.data()[0] - (p0 - 0.25)).abs() < 1e-12);
    }

    #[test]
    fn mix_labels_examples() {
        let e1 = ProbLabel::one_hot(0, 2).unwrap();
        let e2 = ProbLabel::one_hot(1, 2).unwrap();
        let m = mix_labels(&e1, &e2, 0.7).unwrap();
        assert!((m.probs()[0] - 0.7).abs() < 1e-15 && (m.probs()[1] - 0.3).abs() < 1e-15);
        assert_eq!(mix_labels(&e1, &e1, 0.3).unwrap(), e1);
        assert!(mix_labels(&e1, &ProbLabel::uniform(3), 0.5).is_err());
    }

    #[test]
    fn prob_label_invariants() {
        assert!(ProbLabel::new(vec![0.5, 0.6]).is_err());
        assert!(ProbLabel::new(vec![-0.1, 1.1]).is_err());
        assert_eq!(ProbLabel::new(vec![0.4, 0.4, 0.2]).unwrap().argmax(), 0);
        let parsed: ProbLabel = serde_json::from_str("[0.25,0.75]").unwrap();
        assert_eq!(parsed.argmax(), 1);
        assert!(serde_json::from_str::<ProbLabel>("[0.25,0.25]").is_err());
    }

    #[test]
    fn lambda_draws_are_folded() {
        let mut r = rng::stream(1, &["t"]);
        for alpha in [0.1, 0.75, 2.0, 16.0] {
            for _ in 0..1000 {
                let l = sample_lambda(alpha, &mut r).unwrap();
                assert!((0.5..=1.0).contains(&l));
            }
        }
        assert!(matches!(sample_lambda(0.0, &mut r), Err(Error::Config(_))));
        assert!(sample_lambda(-1.0, &mut r).is_err());
    }

    #[test]
    fn mix_layer_draws() {
        let mut r = rng::stream(2, &["t"]);
        assert!((0..100).all(|_| sample_mix_layer(&[7], &mut r).unwrap() == 7));
        assert!(sample_mix_layer(&[], &mut r).is_err());
        let draws = |seed| {
            let mut r = rng::stream(seed, &["m"]);
            (0..50)
                .map(|_| sample_mix_layer(&[7, 9, 12], &mut r).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draws(4), draws(4));
    }

    #[test]
    fn mix_config_validation_and_toml() {
        let cfg: MixConfig =
            toml::from_str("alpha = 16.0\nmix_layers = [2, 3, 4]\nmix_seed = 7\n").unwrap();
        assert_eq!(cfg.mix_layers, MixLayers::Set(vec![2, 3, 4]));
        assert!(cfg.validate(4).is_ok());
        assert!(cfg.validate(3).is_err());
        let off: MixConfig = toml::from_str("alpha = 1.0\nmix_layers = \"off\"\n").unwrap();
        assert!(off.mix_layers.is_off());
        assert!(off.draw(&mut rng::stream(0, &[])).unwrap().is_none());
        let empty: MixConfig = toml::from_str("alpha = 1.0\nmix_layers = []\n").unwrap();
        assert!(matches!(empty.validate(4), Err(Error::Config(_))));
        assert_eq!(
            MixLayers::default_for_depth(4),
            MixLayers::Set(vec![2, 3, 4])
        );
        assert_eq!(
            MixLayers::default_for_depth(12),
            MixLayers::Set(vec![7, 9, 12])
        );
    }

    #[test]
    fn lambda_boundaries_reproduce_plain_forward() {
        let model = Model::new(config(3)).unwrap();
        let (a, b) = pair();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let plain_a = bound.logits(&mut tape, &a).unwrap();
        let plain_b = bound.logits(&mut tape, &b).unwrap();
        for m in 0..=3 {
            let one = tmix_forward(
                &mut tape,
                &bound,
                &a,
                &b,
                MixDraw {
                    lambda: 1.0,
                    layer: m,
                },
            )
            .unwrap();
            let zero = tmix_forward(
                &mut tape,
                &bound,
                &a,
                &b,
                MixDraw {
                    lambda: 0.0,
                    layer: m,
                },
            )
            .unwrap();
            assert!(
                max_diff(tape.value(one), tape.value(plain_a)) < 1e-9,
                "m={m}"
            );
            assert!(
                max_diff(tape.value(zero), tape.value(plain_b)) < 1e-9,
                "m={m}"
            );
        }
    }

    #[test]
    fn swapping_inputs_and_lambda_is_symmetric() {
        let model = Model::new(config(3)).unwrap();
        let (a, b) = pair();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        for (lambda, m) in [(0.8, 1), (0.55, 2), (0.93, 3), (0.6, 0)] {
            let ab = tmix_forward(&mut tape, &bound, &a, &b, MixDraw { lambda, layer: m }).unwrap();
            let ba = tmix_forward(
                &mut tape,
                &bound,
                &b,
                &a,
                MixDraw {
                    lambda: 1.0 - lambda,
                    layer: m,
                },
            )
            .unwrap();
            assert!(max_diff(tape.value(ab), tape.value(ba)) < 1e-9);
        }
    }

    #[test]
    fn paired_forward_matches_explicit_pairs() {
        let model = Model::new(config(2)).unwrap();
        let seqs = [seq(&[3, 4], 6), seq(&[5], 6), seq(&[6, 7, 8, 9], 6)];
        let partner = [2, 0, 1];
        let x = TokenBatch::new(&seqs).unwrap();
        let xj = TokenBatch::new(&[seqs[2].clone(), seqs[0].clone(), seqs[1].clone()]).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let draw = MixDraw {
            lambda: 0.7,
            layer: 1,
        };
        let fast = tmix_forward_paired(&mut tape, &bound, &x, &partner, draw).unwrap();
        let slow = tmix_forward(&mut tape, &bound, &x, &xj, draw).unwrap();
        assert_eq!(tape.value(fast), tape.value(slow));
    }

    #[test]
    fn top_layer_mix_is_linear_up_to_head_nonlinearity() {
        let model = Model::new(config(2)).unwrap();
        let a = TokenBatch::new(&[seq(&[3, 4, 5], 6), seq(&[7, 8, 9], 6)]).unwrap();
        let b = TokenBatch::new(&[seq(&[10, 11, 12], 6), seq(&[13, 14, 15], 6)]).unwrap();
        let lambda = 0.65;
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let pre = |tape: &mut Tape, h: &HiddenState| {
            let p = bound.pool(tape, h).unwrap();
            bound.head_preactivation(tape, p).unwrap()
        };
        let ea = bound.embed(&mut tape, &a).unwrap();
        let ha = bound.forward_range(&mut tape, ea, 0, 2).unwrap();
        let eb = bound.embed(&mut tape, &b).unwrap();
        let hb = bound.forward_range(&mut tape, eb, 0, 2).unwrap();
        let mixed = mix_hidden(&mut tape, &ha, &hb, lambda).unwrap();
        let got = pre(&mut tape, &mixed);
        let pa = pre(&mut tape, &ha);
        let pb = pre(&mut tape, &hb);
        let want: Vec<f64> = tape
            .value(pa)
            .data()
            .iter()
            .zip(tape.value(pb).data())
            .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
            .collect();
        for (g, w) in tape.value(got).data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_zero_mix_interpolates_embeddings() {
        let model = Model::new(config(2)).unwrap();
        let (a, b) = pair();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let ea = bound.embed(&mut tape, &a).unwrap();
        let eb = bound.embed(&mut tape, &b).unwrap();
        let mixed = mix_hidden(&mut tape, &ea, &eb, 0.75).unwrap();
        assert_eq!(mixed.layer_index, 0);
        for ((m, x), y) in tape
            .value(mixed.act)
            .data()
            .iter()
            .zip(tape.value(ea.act).data())
            .zip(tape.value(eb.act).data())
        {
            assert_eq!(*m, 0.75 * x + 0.25 * y);
        }
        assert_eq!(
            &*mixed.mask,
            &[1., 1., 1., 1., 0., 0., 1., 1., 1., 1., 1., 0.][..]
        );
    }

    #[test]
    fn mismatched_lengths_are_contract_errors() {
        let model = Model::new(config(2)).unwrap();
        let a = TokenBatch::new(&[seq(&[3], 4)]).unwrap();
        let b = TokenBatch::new(&[seq(&[3], 5)]).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let d = MixDraw {
            lambda: 0.7,
            layer: 1,
        };
        assert!(matches!(
            tmix_forward(&mut tape, &bound, &a, &b, d),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn tmix_kl_gradients_match_finite_differences() {
        let cfg = EncoderConfig {
            num_layers: 2,
            d_model: 8,
            num_heads: 2,
            ff_width: 8,
            vocab_size: 10,
            max_len: 4,
            head_hidden: 4,
            num_classes: 2,
            layer_norm_eps: 1e-5,
            dropout: 0.0,
            seed: 11,
        };
        let model = Model::new(cfg).unwrap();
        let a = TokenBatch::new(&[seq(&[3, 4], 4), seq(&[5], 4)]).unwrap();
        let b = TokenBatch::new(&[seq(&[6, 7, 8], 4), seq(&[9, 3], 4)]).unwrap();
        let ya = [
            ProbLabel::one_hot(0, 2).unwrap(),
            ProbLabel::one_hot(1, 2).unwrap(),
        ];
        let yb = [
            ProbLabel::new(vec![0.3, 0.7]).unwrap(),
            ProbLabel::one_hot(0, 2).unwrap(),
        ];
        for m in 0..=2 {
            let draw = MixDraw {
                lambda: 0.72,
                layer: m,
            };
            let target: Vec<ProbLabel> = ya
                .iter()
                .zip(&yb)
                .map(|(i, j)| mix_labels(i, j, draw.lambda).unwrap())
                .collect();
            let target = ProbLabel::stack(&target).unwrap();
            let err = finite_diff_check(
                |tape, vars| {
                    let bound = Bound::new(&model, vars.to_vec());
                    let logits = tmix_forward(tape, &bound, &a, &b, draw)?;
                    kl_loss(tape, &target, logits)
                },
                &model.params().values(),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "m={m}: {err}");
        }
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(raw in proptest::collection::vec(0.0f64..1.0, 3), logits in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let s: f64 = raw.iter().sum::<f64>() + 1e-3;
            let t: Vec<f64> = raw.iter().map(|r| (r + 1e-3 / 3.0) / s).collect();
            let mut tape = Tape::new();
            let l = tape.constant(Tensor::new(vec![1, 3], logits).unwrap());
            let target = Tensor::new(vec![1, 3], t).unwrap();
            let loss = kl_loss(&mut tape, &target, l).unwrap();
            prop_assert!(tape.value(loss).item() >= -1e-12);
        }

        #[test]
        fn mixed_labels_stay_valid(a in proptest::collection::vec(0.01f64..1.0, 4), b in proptest::collection::vec(0.01f64..1.0, 4), lambda in 0.0f64..=1.0) {
            let norm = |v: Vec<f64>| { let s: f64 = v.iter().sum(); ProbLabel::new(v.iter().map(|x| x / s).collect()).unwrap() };
            let (ya, yb) = (norm(a), norm(b));
            let m = mix_labels(&ya, &yb, lambda).unwrap();
            prop_assert!((m.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let swapped = mix_labels(&yb, &ya, 1.0 - lambda).unwrap();
            for (x, y) in m.probs().iter().zip(swapped.probs()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
