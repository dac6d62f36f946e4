//! Caption quality and diversity metrics.

pub mod bleu;
pub mod distribution;
pub mod meteor;
pub mod porter;
mod report;

pub use bleu::bleu4;
pub use distribution::{kl_divergence, word_distribution, WordDistribution, DEFAULT_SMOOTHING};
pub use meteor::{corpus_meteor, meteor};
pub use porter::stem;
pub use report::{diversity_stats, score_captions, GeneratedCaption, MetricsReport, CSV_HEADER};
