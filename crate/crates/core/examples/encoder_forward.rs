//! A small transformer classifier, run whole and split at every layer.

use mixtext::encoder::{EncoderConfig, Model, TokenBatch};
use mixtext::tensor::Tape;
use mixtext::text::{TokenSeq, CLS, PAD};

fn seq(ids: &[u32], len: usize) -> TokenSeq {
    let mut all = vec![CLS];
    all.extend_from_slice(ids);
    let n = all.len();
    all.resize(len, PAD);
    TokenSeq {
        mask: (0..len).map(|i| u8::from(i < n)).collect(),
        ids: all,
        true_len: n,
    }
}

fn main() -> mixtext::Result<()> {
    let cfg = EncoderConfig {
        d_model: 32,
        ff_width: 64,
        max_len: 10,
        ..EncoderConfig::desk(30, 3)
    };
    let model = Model::new(cfg)?;
    println!("{} parameters", model.params().num_scalars());

    let rows = vec![seq(&[4, 5, 6], 10), seq(&[7, 8, 9, 10, 11, 12], 10)];
    for (i, p) in model.predict_proba(&rows)?.iter().enumerate() {
        println!("row {i}: {:?}", p.probs());
    }

    let batch = TokenBatch::new(&rows)?;
    let depth = model.config().num_layers;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let whole = bound.logits(&mut tape, &batch)?;
    let reference = tape.value(whole).clone();
    for split in 0..=depth {
        let h = bound.embed(&mut tape, &batch)?;
        let low = bound.forward_range(&mut tape, h, 0, split)?;
        let high = bound.forward_range(&mut tape, low, split, depth)?;
        let pooled = bound.pool(&mut tape, &high)?;
        let logits = bound.classify(&mut tape, pooled)?;
        println!(
            "split at {split}: identical = {}",
            tape.value(logits) == &reference
        );
    }
    Ok(())
}
