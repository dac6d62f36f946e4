//! Word-frequency distributions over the vocabulary's content words and the
//! KL divergence between them.

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

pub const DEFAULT_SMOOTHING: f64 = 0.5;

/// Probabilities over an ordered word support. Every stored probability is
/// strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct WordDistribution {
    words: Vec<String>,
    probs: Vec<f64>,
}

impl WordDistribution {
    /// Builds a distribution from explicit probabilities. Entries must be
    /// positive and sum to one within 1e-9.
    pub fn from_probabilities(entries: Vec<(String, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Input("empty distribution".into()));
        }
        let mut total = 0.0;
        for (w, p) in &entries {
            if !(p.is_finite() && *p > 0.0) {
                return Err(Error::Input(format!("probability of {w:?} is {p}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("probabilities sum to {total}")));
        }
        let (words, probs) = entries.into_iter().unzip();
        Ok(WordDistribution { words, probs })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn prob(&self, word: &str) -> Option<f64> {
        self.words
            .iter()
            .position(|w| w == word)
            .map(|i| self.probs[i])
    }
}

/// Token counts restricted to the vocabulary's content words, plus `eps`
/// added to every content word, normalized. With `eps = 0` the support is
/// the content words that occur.
pub fn word_distribution<C, S>(
    captions: &[C],
    vocab: &Vocabulary,
    eps: f64,
) -> Result<WordDistribution>
where
    C: AsRef<[S]>,
    S: AsRef<str>,
{
    if captions.is_empty() {
        return Err(Error::Input(
            "word distribution of an empty caption set".into(),
        ));
    }
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::Parameter(format!(
            "smoothing must be finite and >= 0, got {eps}"
        )));
    }
    let mut counts = vec![0u64; vocab.len()];
    for caption in captions {
        for token in caption.as_ref() {
            if let Some(id) = vocab.id(token.as_ref()) {
                if !Vocabulary::is_special(id) {
                    counts[id] += 1;
                }
            }
        }
    }
    let mut words = Vec::new();
    let mut mass = Vec::new();
    for (id, word) in vocab.content_words() {
        let m = counts[id] as f64 + eps;
        if m > 0.0 {
            words.push(word.to_string());
            mass.push(m);
        }
    }
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        return Err(Error::Input(
            "no content words in captions and no smoothing".into(),
        ));
    }
    let probs = mass.into_iter().map(|m| m / total).collect();
    Ok(WordDistribution { words, probs })
}

/// `Σ P(w) ln(P(w) / Q(w))` in nats. Both distributions must share the same
/// support in the same order.
pub fn kl_divergence(p: &WordDistribution, q: &WordDistribution) -> Result<f64> {
    if p.words != q.words {
        return Err(Error::Contract(format!(
            "KL divergence needs identical supports ({} vs {} words)",
            p.len(),
            q.len()
        )));
    }
    let mut total = 0.0;
    for (&pw, &qw) in p.probs.iter().zip(&q.probs) {
        if pw != qw {
            total += pw * (pw / qw).ln();
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::RngStream;
    use proptest::prelude::*;

    fn vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::from_entries(words.iter().map(|w| (w.to_string(), 1)).collect()).unwrap()
    }

    fn caps(lines: &[&str]) -> Vec<Vec<String>> {
        lines.iter().map(|l| crate::corpus::tokenize(l)).collect()
    }

    #[test]
    fn unsmoothed_counts() {
        let d = word_distribution(&caps(&["a a b"]), &vocab(&["a", "b"]), 0.0).unwrap();
        assert!((d.prob("a").unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.prob("b").unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn smoothed_counts() {
        let d = word_distribution(&caps(&["a a b"]), &vocab(&["a", "b"]), 0.5).unwrap();
        assert!((d.prob("a").unwrap() - 2.5 / 4.0).abs() < 1e-15);
        assert!((d.prob("b").unwrap() - 1.5 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn specials_and_oov_ignored() {
        let d =
            word_distribution(&caps(&["a </s> <unk> zebra"]), &vocab(&["a", "b"]), 0.0).unwrap();
        assert_eq!(d.words(), ["a"]);
        assert_eq!(d.probs(), [1.0]);
    }

    #[test]
    fn unsmoothed_support_is_observed_words() {
        let d = word_distribution(&caps(&["b"]), &vocab(&["a", "b", "c"]), 0.0).unwrap();
        assert_eq!(d.words(), ["b"]);
    }

    #[test]
    fn errors() {
        let v = vocab(&["a"]);
        let none: Vec<Vec<String>> = vec![];
        assert!(word_distribution(&none, &v, 0.5).is_err());
        assert!(word_distribution(&caps(&["zzz"]), &v, 0.0).is_err());
        assert!(word_distribution(&caps(&["a"]), &v, -1.0).is_err());
        assert!(WordDistribution::from_probabilities(vec![("a".into(), 0.4)]).is_err());
        assert!(
            WordDistribution::from_probabilities(vec![("a".into(), 0.0), ("b".into(), 1.0)])
                .is_err()
        );
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let d = word_distribution(&caps(&["a a b c"]), &vocab(&["a", "b", "c"]), 0.5).unwrap();
        assert_eq!(kl_divergence(&d, &d).unwrap(), 0.0);
    }

    #[test]
    fn kl_point_mass_vs_uniform_is_ln2() {
        let v = vocab(&["a", "b"]);
        let p = word_distribution(&caps(&["a"]), &v, 1e-12).unwrap();
        let q = word_distribution(&caps(&["a b"]), &v, 0.0).unwrap();
        let kl = kl_divergence(&p, &q).unwrap();
        assert!((kl - std::f64::consts::LN_2).abs() < 1e-9, "{kl}");
    }

    #[test]
    fn kl_support_mismatch_is_contract_error() {
        let p = word_distribution(&caps(&["a"]), &vocab(&["a", "b"]), 0.0).unwrap();
        let q = word_distribution(&caps(&["a b"]), &vocab(&["a", "b"]), 0.0).unwrap();
        assert!(matches!(kl_divergence(&p, &q), Err(Error::Contract(_))));
    }

    fn random_dist(rng: &mut RngStream, n: usize) -> WordDistribution {
        let raw: Vec<f64> = (0..n).map(|_| rng.uniform(0.01, 1.0)).collect();
        let total: f64 = raw.iter().sum();
        let entries = raw
            .iter()
            .enumerate()
            .map(|(i, r)| (format!("w{i}"), r / total))
            .collect::<Vec<_>>();
        WordDistribution::from_probabilities(entries).unwrap()
    }

    #[test]
    fn kl_matches_compensated_sum() {
        let mut rng = RngStream::new(0x4b4c);
        for _ in 0..20 {
            let p = random_dist(&mut rng, 50);
            let q = random_dist(&mut rng, 50);
            // Neumaier-compensated sum of p (ln p − ln q), a different
            // arrangement of the same terms.
            let mut sum = 0.0f64;
            let mut comp = 0.0f64;
            for (&a, &b) in p.probs().iter().zip(q.probs()) {
                let term = a * (a.ln() - b.ln());
                let t = sum + term;
                if sum.abs() >= term.abs() {
                    comp += (sum - t) + term;
                } else {
                    comp += (term - t) + sum;
                }
                sum = t;
            }
            let oracle = sum + comp;
            assert!((kl_divergence(&p, &q).unwrap() - oracle).abs() < 1e-9);
            assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        }
    }

    proptest! {
        #[test]
        fn smoothed_distributions_sum_to_one_and_kl_nonnegative(
            a in prop::collection::vec(0usize..5, 0..30),
            b in prop::collection::vec(0usize..5, 0..30),
            eps in 0.01f64..2.0,
        ) {
            let words = ["a", "b", "c", "d", "e"];
            let v = vocab(&words);
            let ca = vec![a.iter().map(|&i| words[i]).collect::<Vec<_>>()];
            let cb = vec![b.iter().map(|&i| words[i]).collect::<Vec<_>>()];
            let p = word_distribution(&ca, &v, eps).unwrap();
            let q = word_distribution(&cb, &v, eps).unwrap();
            prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.probs().iter().all(|&x| x > 0.0));
            prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-12);
        }
    }
}
