//! Vocabulary, sentence encoding, training-instance construction, splits
//! and the on-disk input formats.

pub mod embeddings;
pub mod encode;
pub mod features;
pub mod instances;
pub mod split;
pub mod story;
pub mod synth;
pub mod vocab;

pub use embeddings::{load_embeddings, parse_embeddings};
pub use encode::{content_ids, decode_ids, empty_sentence, encode_ids, encode_sentence, loss_mask, DEFAULT_MAX_LEN};
pub use features::{read_features, synth_features, write_features, FeatureSet};
pub use instances::{build_instances, make_windows, window_for, window_tensor, Batch, TrainingInstance, DEFAULT_WINDOW};
pub use split::{split_dataset, DEFAULT_RATIOS};
pub use story::{read_stories, write_stories, StorySample, STORY_LEN};
pub use synth::synth_corpus;
pub use vocab::{build_vocab, TokenId, Vocabulary, DEFAULT_MIN_FREQ, END, NULL, START, UNK};
