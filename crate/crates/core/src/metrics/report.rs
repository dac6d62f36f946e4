use std::collections::HashSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::metrics::bleu::bleu4;
use crate::metrics::distribution::{kl_divergence, word_distribution, DEFAULT_SMOOTHING};
use crate::metrics::meteor::corpus_meteor;

pub const CSV_HEADER: &str = "d_t,d_e,bleu4,meteor,d_kl,v_size,p_len_gt_20";

/// A decoded caption together with its length-limit flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedCaption {
    pub image_id: String,
    pub tokens: Vec<String>,
    pub exceeded: bool,
}

/// Distinct content words across all captions and the fraction of
/// captions that hit the length limit. An empty list gives `(0, 0.0)`.
pub fn diversity_stats(generated: &[GeneratedCaption]) -> (usize, f64) {
    if generated.is_empty() {
        return (0, 0.0);
    }
    let words: HashSet<&str> = generated
        .iter()
        .flat_map(|g| g.tokens.iter().map(String::as_str))
        .filter(|w| !Vocabulary::is_special_word(w))
        .collect();
    let exceeded = generated.iter().filter(|g| g.exceeded).count();
    (words.len(), exceeded as f64 / generated.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub d_t: f64,
    pub d_e: f64,
    pub bleu4: f64,
    pub meteor: f64,
    /// Nats.
    pub d_kl: f64,
    pub v_size: usize,
    pub p_len_gt_20: f64,
}

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{:.2},{:.2},{:.3},{:.3},{:.4},{},{:.4}",
            self.d_t, self.d_e, self.bleu4, self.meteor, self.d_kl, self.v_size, self.p_len_gt_20
        )
    }
}

/// Full metric suite for one (d_t, d_e) cell.
///
/// Each generated caption is scored against every reference of its image.
/// `d_kl` compares the generated word distribution to that of all the
/// references, both smoothed over the vocabulary's content words.
pub fn score_captions(
    generated: &[GeneratedCaption],
    references: &IndexMap<String, Vec<Vec<String>>>,
    vocab: &Vocabulary,
    d_t: f64,
    d_e: f64,
) -> Result<MetricsReport> {
    if generated.is_empty() {
        return Err(Error::Input("no generated captions to score".into()));
    }
    let mut cands = Vec::with_capacity(generated.len());
    let mut refs = Vec::with_capacity(generated.len());
    for g in generated {
        let r = references
            .get(&g.image_id)
            .ok_or_else(|| Error::Data(format!("no references for image {:?}", g.image_id)))?;
        cands.push(g.tokens.as_slice());
        refs.push(r.clone());
    }
    let cands: Vec<Vec<&str>> = cands
        .iter()
        .map(|t| t.iter().map(String::as_str).collect())
        .collect();

    let bleu = bleu4(&cands, &refs)?;
    let meteor = corpus_meteor(&cands, &refs)?;

    let all_refs: Vec<&Vec<String>> = references.values().flatten().collect();
    let p = word_distribution(&cands, vocab, DEFAULT_SMOOTHING)?;
    let q = word_distribution(&all_refs, vocab, DEFAULT_SMOOTHING)?;
    let d_kl = kl_divergence(&p, &q)?.max(0.0);

    let (v_size, p_len_gt_20) = diversity_stats(generated);
    Ok(MetricsReport {
        d_t,
        d_e,
        bleu4: bleu,
        meteor,
        d_kl,
        v_size,
        p_len_gt_20,
    })
}
