//! Caption text, vocabularies, image features and pretrained embeddings.

pub mod captions;
pub mod embeddings;
pub mod features;
pub mod synth;
pub mod vocab;

pub use captions::{
    group_references, load_captions, parse_captions, save_captions, split_by_image, CaptionRecord,
};
pub use embeddings::{load_embeddings, EmbeddingTable};
pub use features::FeatureStore;
pub use synth::{synth_corpus, SynthSpec};
pub use vocab::{tokenize, Vocabulary, END_ID, NUM_SPECIALS, PAD_ID, START_ID, UNK_ID};
