//! Corpus → stratified splits → vocabulary → padded id sequences, plus the
//! local augmenters used for unlabeled text.

use mixtext::harness::SyntheticTask;
use mixtext::rng;
use mixtext::text::{encode, make_splits, tokenize, SplitSpec, TestSource, Vocab};
use mixtext::trainer::{swap_tokens, Augmenter, RandomDeletion, SynonymReplace};

fn main() -> mixtext::Result<()> {
    let task = SyntheticTask::default();
    let corpus = task.generate(60)?;
    println!("{} sentences, e.g. {:?}", corpus.len(), corpus[0].text);

    let spec = SplitSpec {
        labeled_per_class: 5,
        unlabeled_per_class: 30,
        dev_per_class: 10,
        test: TestSource::Remaining,
        seed: 3,
    };
    let splits = make_splits(&corpus, &spec)?;
    println!(
        "labeled {} unlabeled {} dev {} test {}",
        splits.labeled.len(),
        splits.unlabeled.len(),
        splits.dev.len(),
        splits.test.len()
    );
    assert!(splits.unlabeled.iter().all(|e| e.label.is_none()));

    let seen: Vec<_> = splits
        .labeled
        .iter()
        .chain(&splits.unlabeled)
        .cloned()
        .collect();
    let vocab = Vocab::build(&seen, 1, None)?;
    let text = &splits.unlabeled[0].text;
    println!("tokens {:?}", tokenize(text));
    let seq = encode(text, &vocab, 12)?;
    println!("ids {:?} mask {:?}", seq.ids, seq.mask);

    println!("swap 1,3: {}", swap_tokens("a b c d", 1, 3)?);
    let mut r = rng::stream(3, &["example"]);
    let syn = SynonymReplace {
        dict: task.synonyms(),
        prob: 0.5,
    };
    let del = RandomDeletion { prob: 0.2 };
    println!("{}: {}", syn.name(), syn.augment(text, &mut r)?.text);
    println!("{}: {}", del.name(), del.augment(text, &mut r)?.text);
    Ok(())
}
