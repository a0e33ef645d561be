use super::GuessConfig;
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::text::TokenSeq;
use crate::tmix::ProbLabel;

/// `y^(1/T) / ‖y^(1/T)‖₁`.
pub fn sharpen(y: &ProbLabel, temperature: f64) -> Result<ProbLabel> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let inv = 1.0 / temperature;
    let powered: Vec<f64> = y.probs().iter().map(|p| p.powf(inv)).collect();
    let sum: f64 = powered.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::Numeric(format!(
            "sharpening {:?} underflowed",
            y.probs()
        )));
    }
    ProbLabel::new(powered.into_iter().map(|p| p / sum).collect())
}

/// `(w_ori·p_ori + Σ w_k·p_k) / (w_ori + Σ w_k)`.
pub fn weighted_average(
    original: &ProbLabel,
    augmented: &[ProbLabel],
    w_ori: f64,
    w_aug: &[f64],
) -> Result<ProbLabel> {
    if augmented.len() != w_aug.len() {
        return Err(Error::Contract(format!(
            "{} augmentations but {} weights",
            augmented.len(),
            w_aug.len()
        )));
    }
    let total = w_ori + w_aug.iter().sum::<f64>();
    if !(total > 0.0) {
        return Err(Error::Config("guess weights are all zero".into()));
    }
    let mut acc: Vec<f64> = original.probs().iter().map(|p| w_ori * p).collect();
    for (p, w) in augmented.iter().zip(w_aug) {
        if p.len() != acc.len() {
            return Err(Error::shape("weighted_average", &[acc.len()], &[p.len()]));
        }
        for (a, x) in acc.iter_mut().zip(p.probs()) {
            *a += w * x;
        }
    }
    ProbLabel::new(acc.into_iter().map(|a| a / total).collect())
}

/// Sharpened weighted average of the model's predictions on `x_u` and its
/// augmentations. No gradient is recorded.
pub fn guess_label(
    model: &Model,
    x_u: &TokenSeq,
    augmentations: &[TokenSeq],
    cfg: &GuessConfig,
) -> Result<ProbLabel> {
    if augmentations.len() != cfg.k {
        return Err(Error::Contract(format!(
            "expected {} augmentations, got {}",
            cfg.k,
            augmentations.len()
        )));
    }
    let mut rows = vec![x_u.clone()];
    rows.extend_from_slice(augmentations);
    let probs = model.predict_proba(&rows)?;
    let avg = weighted_average(&probs[0], &probs[1..], cfg.w_ori, &cfg.aug_weights())?;
    sharpen(&avg, cfg.temperature)
}

/// Guesses for a batch: `x_u[i]` with augmentations `aug[k][i]`. Returns the
/// per-source predictions `[1 + K]` alongside the sharpened guesses.
pub(crate) fn guess_batch(
    model: &Model,
    x_u: &[TokenSeq],
    aug: &[Vec<TokenSeq>],
    cfg: &GuessConfig,
) -> Result<(Vec<Vec<ProbLabel>>, Vec<ProbLabel>)> {
    let mut rows: Vec<TokenSeq> = x_u.to_vec();
    for a in aug {
        rows.extend_from_slice(a);
    }
    let probs = model.predict_proba(&rows)?;
    let per_source: Vec<Vec<ProbLabel>> = probs.chunks(x_u.len()).map(<[_]>::to_vec).collect();
    let w = cfg.aug_weights();
    let mut guesses = Vec::with_capacity(x_u.len());
    for i in 0..x_u.len() {
        let augs: Vec<ProbLabel> = per_source[1..].iter().map(|s| s[i].clone()).collect();
        let avg = weighted_average(&per_source[0][i], &augs, cfg.w_ori, &w)?;
        guesses.push(sharpen(&avg, cfg.temperature)?);
    }
    Ok((per_source, guesses))
}

/// Sharpened weighted average on the tape, differentiable through
/// `p_ori` only (`[m, C]`); the augmentation predictions are constants.
pub(crate) fn guess_on_tape(
    tape: &mut Tape,
    p_ori: Var,
    p_aug: &[Tensor],
    cfg: &GuessConfig,
) -> Result<Var> {
    let w = cfg.aug_weights();
    let total = cfg.w_ori + w.iter().sum::<f64>();
    let mut acc = tape.scale(p_ori, cfg.w_ori / total);
    for (p, wk) in p_aug.iter().zip(&w) {
        let c = tape.constant(p.clone());
        let c = tape.scale(c, wk / total);
        acc = tape.add(acc, c)?;
    }
    let powered = tape.powf(acc, 1.0 / cfg.temperature);
    let norm = tape.sum_last(powered);
    tape.div_rows(powered, norm)
}

/// Mean over rows of `max(0, γ − ‖y‖²)` for `y: [m, C]`.
pub fn margin_loss(tape: &mut Tape, y: Var, gamma: f64) -> Result<Var> {
    let sq = tape.mul(y, y)?;
    let norms = tape.sum_last(sq);
    let slack = tape.scale(norms, -1.0);
    let slack = tape.add_scalar(slack, gamma);
    let hinge = tape.relu(slack);
    Ok(tape.mean(hinge))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::text::{CLS, PAD};

    fn p(v: &[f64]) -> ProbLabel {
        ProbLabel::new(v.to_vec()).unwrap()
    }

    fn close(a: &ProbLabel, b: &[f64], tol: f64) -> bool {
        a.probs().iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn sharpen_examples() {
        let y = p(&[0.8, 0.2]);
        assert!(close(
            &sharpen(&y, 0.5).unwrap(),
            &[0.64 / 0.68, 0.04 / 0.68],
            1e-12
        ));
        assert!(close(&sharpen(&y, 0.5).unwrap(), &[0.9412, 0.0588], 1e-4));
        assert_eq!(sharpen(&y, 1.0).unwrap(), y);
        assert_eq!(sharpen(&p(&[0.5, 0.5]), 0.1).unwrap(), p(&[0.5, 0.5]));
        assert!(matches!(sharpen(&y, 0.0), Err(Error::Config(_))));
        assert!(sharpen(&p(&[0.6, 0.4]), 0.01).unwrap().probs()[0] > 1.0 - 1e-12);
    }

    #[test]
    fn sharpen_raises_the_max_entry() {
        for v in [[0.5, 0.3, 0.2], [0.34, 0.33, 0.33], [0.9, 0.05, 0.05]] {
            let y = p(&v);
            assert!(sharpen(&y, 0.5).unwrap().probs()[0] > y.probs()[0]);
        }
    }

    #[test]
    fn weighted_average_examples() {
        let avg = weighted_average(
            &p(&[0.6, 0.4]),
            &[p(&[0.8, 0.2]), p(&[0.7, 0.3])],
            1.0,
            &[1.0, 1.0],
        )
        .unwrap();
        assert!(close(&avg, &[0.7, 0.3], 1e-12));
        let only = weighted_average(&p(&[0.6, 0.4]), &[], 1.0, &[]).unwrap();
        assert_eq!(only, p(&[0.6, 0.4]));
        assert!(weighted_average(&p(&[0.6, 0.4]), &[p(&[0.8, 0.2])], 0.0, &[0.0]).is_err());
    }

    #[test]
    fn margin_examples() {
        let mut tape = Tape::new();
        let rows = |tape: &mut Tape, r: &[Vec<f64>]| tape.constant(Tensor::from_rows(r).unwrap());
        let y = rows(&mut tape, &[vec![0.25; 4]]);
        let l = margin_loss(&mut tape, y, 0.5).unwrap();
        assert!((tape.value(l).item() - 0.25).abs() < 1e-12);
        let y = rows(&mut tape, &[vec![0.0, 1.0, 0.0]]);
        let l = margin_loss(&mut tape, y, 1.0).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        let y = rows(&mut tape, &[vec![0.5, 0.5]]);
        let l = margin_loss(&mut tape, y, 0.5).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        let y = rows(&mut tape, &[vec![0.5, 0.5], vec![0.9, 0.1]]);
        let l = margin_loss(&mut tape, y, 0.7).unwrap();
        assert!((tape.value(l).item() - 0.1).abs() < 1e-12);
    }

    fn seq(ids: &[u32]) -> TokenSeq {
        let mut all = vec![CLS];
        all.extend_from_slice(ids);
        let n = all.len();
        all.resize(5, PAD);
        TokenSeq {
            mask: (0..5).map(|i| u8::from(i < n)).collect(),
            ids: all,
            true_len: n,
        }
    }

    fn model() -> Model {
        Model::new(EncoderConfig {
            num_layers: 1,
            d_model: 8,
            num_heads: 2,
            ff_width: 8,
            vocab_size: 12,
            max_len: 5,
            head_hidden: 4,
            num_classes: 3,
            layer_norm_eps: 1e-5,
            dropout: 0.0,
            seed: 2,
        })
        .unwrap()
    }

    #[test]
    fn guess_label_degenerate_and_convex() {
        let m = model();
        let cfg0 = GuessConfig {
            k: 0,
            w_aug: None,
            ..GuessConfig::default()
        };
        let x = seq(&[4, 5]);
        let p0 = m.predict_proba(std::slice::from_ref(&x)).unwrap().remove(0);
        assert_eq!(
            guess_label(&m, &x, &[], &cfg0).unwrap(),
            sharpen(&p0, 0.5).unwrap()
        );

        let cfg = GuessConfig::default();
        let augs = [seq(&[6]), seq(&[7, 8, 9])];
        let g = guess_label(&m, &x, &augs, &cfg).unwrap();
        assert!((g.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let preds = m
            .predict_proba(&[x.clone(), augs[0].clone(), augs[1].clone()])
            .unwrap();
        let avg = weighted_average(&preds[0], &preds[1..], 1.0, &[1.0, 1.0]).unwrap();
        assert_eq!(g.argmax(), avg.argmax());
        for c in 0..3 {
            let lo = preds
                .iter()
                .map(|p| p.probs()[c])
                .fold(f64::INFINITY, f64::min);
            let hi = preds.iter().map(|p| p.probs()[c]).fold(0.0, f64::max);
            assert!(avg.probs()[c] >= lo - 1e-15 && avg.probs()[c] <= hi + 1e-15);
        }
        assert!(matches!(
            guess_label(&m, &x, &augs[..1], &cfg),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn batch_guess_matches_single_guess() {
        let m = model();
        let cfg = GuessConfig::default();
        let xs = vec![seq(&[4, 5]), seq(&[9])];
        let aug = vec![
            vec![seq(&[6]), seq(&[10, 11])],
            vec![seq(&[7, 8, 9]), seq(&[3])],
        ];
        let (_, batch) = guess_batch(&m, &xs, &aug, &cfg).unwrap();
        for i in 0..2 {
            let single =
                guess_label(&m, &xs[i], &[aug[0][i].clone(), aug[1][i].clone()], &cfg).unwrap();
            assert!(close(&single, batch[i].probs(), 1e-14));
        }
    }

    #[test]
    fn tape_guess_matches_value_guess() {
        let cfg = GuessConfig::default();
        let ori = [p(&[0.6, 0.4]), p(&[0.1, 0.9])];
        let augs = [
            [p(&[0.8, 0.2]), p(&[0.3, 0.7])],
            [p(&[0.7, 0.3]), p(&[0.2, 0.8])],
        ];
        let mut tape = Tape::new();
        let v = tape.constant(ProbLabel::stack(&ori).unwrap());
        let aug_t: Vec<Tensor> = augs.iter().map(|a| ProbLabel::stack(a).unwrap()).collect();
        let y = guess_on_tape(&mut tape, v, &aug_t, &cfg).unwrap();
        for i in 0..2 {
            let avg = weighted_average(
                &ori[i],
                &[augs[0][i].clone(), augs[1][i].clone()],
                1.0,
                &[1.0, 1.0],
            )
            .unwrap();
            let want = sharpen(&avg, 0.5).unwrap();
            assert!(close(&want, tape.value(y).row(i), 1e-14));
        }
    }
}
