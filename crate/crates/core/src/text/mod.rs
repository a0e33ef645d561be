//! Corpus ingestion, vocabulary, fixed-length encoding and split management.

mod corpus;
mod split;
mod vocab;

pub use corpus::{load_corpus, write_jsonl, CorpusFormat, Example, LabelSet};
pub use split::{make_splits, SealedLabels, SplitManifest, SplitSpec, Splits, TestSource};
pub use vocab::{encode, tokenize, TokenSeq, Vocab, CLS, PAD, UNK};
