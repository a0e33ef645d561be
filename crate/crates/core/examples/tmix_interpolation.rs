//! Interpolating two batches in hidden space, and the mixing distribution.

use mixtext::encoder::{EncoderConfig, Model, TokenBatch};
use mixtext::rng;
use mixtext::tensor::Tape;
use mixtext::text::{TokenSeq, CLS, PAD};
use mixtext::tmix::{
    mix_labels, sample_lambda, sample_mix_layer, tmix_forward, MixDraw, ProbLabel,
};

fn row(ids: &[u32]) -> TokenSeq {
    let mut all = vec![CLS];
    all.extend_from_slice(ids);
    let n = all.len();
    all.resize(8, PAD);
    TokenSeq {
        mask: (0..8).map(|i| u8::from(i < n)).collect(),
        ids: all,
        true_len: n,
    }
}

fn main() -> mixtext::Result<()> {
    let model = Model::new(EncoderConfig {
        d_model: 16,
        ff_width: 32,
        max_len: 8,
        ..EncoderConfig::desk(20, 2)
    })?;
    let x_i = TokenBatch::new(&[row(&[3, 4, 5])])?;
    let x_j = TokenBatch::new(&[row(&[9, 10, 11, 12, 13])])?;

    for lambda in [1.0, 0.75, 0.5, 0.25, 0.0] {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let logits = tmix_forward(&mut tape, &bound, &x_i, &x_j, MixDraw { lambda, layer: 2 })?;
        println!("lambda {lambda:.2}: logits {:?}", tape.value(logits).data());
    }

    let y = mix_labels(&ProbLabel::one_hot(0, 2)?, &ProbLabel::one_hot(1, 2)?, 0.7)?;
    println!("mixed label {:?}", y.probs());

    let mut r = rng::stream(0, &["lambda"]);
    for alpha in [0.4, 1.0, 16.0] {
        let draws: Vec<f64> = (0..5)
            .map(|_| sample_lambda(alpha, &mut r))
            .collect::<mixtext::Result<_>>()?;
        println!("alpha {alpha}: {draws:.3?}");
    }
    let layers: Vec<usize> = (0..10)
        .map(|_| sample_mix_layer(&[2, 3, 4], &mut r))
        .collect::<mixtext::Result<_>>()?;
    println!("mix layers {layers:?}");
    Ok(())
}
