//! Guessing labels for unlabeled text: average over augmentations, sharpen,
//! and the margin penalty on low-confidence guesses.

use mixtext::tensor::Tape;
use mixtext::tmix::{kl_loss, ProbLabel};
use mixtext::trainer::{margin_loss, sharpen, weighted_average};

fn main() -> mixtext::Result<()> {
    let original = ProbLabel::new(vec![0.6, 0.4])?;
    let augs = [
        ProbLabel::new(vec![0.8, 0.2])?,
        ProbLabel::new(vec![0.7, 0.3])?,
    ];
    let avg = weighted_average(&original, &augs, 1.0, &[1.0, 1.0])?;
    println!("average {:?}", avg.probs());
    for t in [1.0, 0.5, 0.3, 0.1] {
        println!("sharpened at T={t}: {:?}", sharpen(&avg, t)?.probs());
    }

    let mut tape = Tape::new();
    for y in [
        vec![0.25; 4],
        vec![0.7, 0.1, 0.1, 0.1],
        vec![1.0, 0.0, 0.0, 0.0],
    ] {
        let v = tape.constant(ProbLabel::stack(&[ProbLabel::new(y.clone())?])?);
        let m = margin_loss(&mut tape, v, 0.5)?;
        println!("margin(gamma=0.5) of {y:?}: {:.4}", tape.value(m).item());
    }

    let logits = tape.constant(mixtext::tensor::Tensor::zeros(&[1, 2]));
    let target = ProbLabel::stack(&[ProbLabel::one_hot(0, 2)?])?;
    let kl = kl_loss(&mut tape, &target, logits)?;
    println!("KL(one-hot || uniform) = {:.6}", tape.value(kl).item());
    Ok(())
}
