//! Raw tabular input, vocabulary with out-of-vocabulary folding, encoding,
//! splitting and batching, and planted-interaction synthetic data.

mod discretize;
mod schema;
mod split;
mod synth;
mod vocab;

pub use discretize::{discretize_numeric, LogBase};
pub use schema::{read_raw_tsv, parse_raw_tsv, FieldKind, FieldSpec, RawRow, Schema};
pub use split::{epoch_batches, split_samples, DatasetSplits, ValidationStream};
pub use synth::{generate_synthetic, GroundTruth, SyntheticConfig, SyntheticData};
pub use vocab::{
    build_vocabulary, read_encoded, write_encoded, EncodedBatch, EncodedSample, Vocabulary,
    MISSING_TOKEN, OOV_TOKEN,
};
