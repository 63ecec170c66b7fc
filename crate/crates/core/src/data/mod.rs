//! Corpus index, feature loading, batching, and the synthetic corpus.

mod batch;
mod index;
mod synth;

pub use batch::{batch_iterator, epoch_order, pad_or_truncate, Batch};
pub use index::{load_corpus, load_examples, load_features, CorpusEntry, CorpusIndex, Example, Split, INDEX_FILE};
pub use synth::{generate_synthetic, ridge_check, synthesize, synthetic_layout, RidgeCheck, SyntheticSpec};
