//! METEOR with the exact and Porter-stem matching stages.
//!
//! Parameters are the original ones: `F = 10PR / (R + 9P)` and a
//! fragmentation penalty `0.5 · (chunks / matches)^3`.

use crate::error::{Error, Result};
use crate::metrics::porter::stem;

/// Aligned `(candidate position, reference position)` pairs.
fn align<S: AsRef<str>, R: AsRef<str>>(candidate: &[S], reference: &[R]) -> Vec<(usize, usize)> {
    let mut cand_used = vec![false; candidate.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();

    let cand_stems: Vec<String> = candidate.iter().map(|w| stem(w.as_ref())).collect();
    let ref_stems: Vec<String> = reference.iter().map(|w| stem(w.as_ref())).collect();

    for stage in 0..2 {
        let same = |i: usize, j: usize| {
            if stage == 0 {
                candidate[i].as_ref() == reference[j].as_ref()
            } else {
                cand_stems[i] == ref_stems[j]
            }
        };
        let mut prev_ref: Option<usize> = None;
        #[allow(clippy::needless_range_loop)]
        for i in 0..candidate.len() {
            if cand_used[i] {
                prev_ref = pairs.iter().find(|p| p.0 == i).map(|p| p.1);
                continue;
            }
            // Prefer extending the chunk that the previous candidate word
            // ended, otherwise take the leftmost free reference position.
            let extend = prev_ref
                .map(|p| p + 1)
                .filter(|&j| j < reference.len() && !ref_used[j] && same(i, j));
            let pick =
                extend.or_else(|| (0..reference.len()).find(|&j| !ref_used[j] && same(i, j)));
            match pick {
                Some(j) => {
                    cand_used[i] = true;
                    ref_used[j] = true;
                    pairs.push((i, j));
                    prev_ref = Some(j);
                }
                None => prev_ref = None,
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Maximal runs of matches contiguous in both sentences.
fn count_chunks(pairs: &[(usize, usize)]) -> usize {
    if pairs.is_empty() {
        return 0;
    }
    1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

/// Score against a single reference, in `[0, 1]`.
pub fn meteor_single<S: AsRef<str>, R: AsRef<str>>(candidate: &[S], reference: &[R]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let pairs = align(candidate, reference);
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let frag = count_chunks(&pairs) as f64 / m as f64;
    let penalty = 0.5 * frag.powi(3);
    f_mean * (1.0 - penalty)
}

/// Best score over the reference set, on a 0–100 scale.
pub fn meteor<S: AsRef<str>, R: AsRef<str>>(candidate: &[S], references: &[Vec<R>]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Input("METEOR needs at least one reference".into()));
    }
    Ok(100.0
        * references
            .iter()
            .map(|r| meteor_single(candidate, r))
            .fold(0.0, f64::max))
}

/// Mean sentence METEOR, summed in input order.
pub fn corpus_meteor<S: AsRef<str>, R: AsRef<str>>(
    candidates: &[Vec<S>],
    references: &[Vec<Vec<R>>],
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Input("METEOR of an empty candidate list".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Input(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let mut total = 0.0;
    for (c, r) in candidates.iter().zip(references) {
        total += meteor(c, r)?;
    }
    Ok(total / candidates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use proptest::prelude::*;

    fn t(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn identical_three_words() {
        let s = meteor(&t("the cat sat"), &[t("the cat sat")]).unwrap();
        let expected = 100.0 * (1.0 - 0.5 / 27.0);
        assert!((s - expected).abs() < 1e-9);
        assert!((s - 98.148148).abs() < 1e-6);
    }

    #[test]
    fn single_word() {
        let s = meteor(&t("cat"), &[t("cat")]).unwrap();
        assert!((s - 50.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_is_zero() {
        assert_eq!(meteor(&t("red dog"), &[t("blue cat")]).unwrap(), 0.0);
        assert_eq!(
            meteor(&Vec::<String>::new(), &[t("blue cat")]).unwrap(),
            0.0
        );
        assert!(meteor(&t("x"), &Vec::<Vec<String>>::new()).is_err());
    }

    #[test]
    fn stem_stage_matches_inflections() {
        // exact: a, on, the; stem: dogs~dog, running~runs → all 5 matched
        let pairs = align(&t("a dogs running on the"), &t("a dog runs on the"));
        assert_eq!(pairs.len(), 5);
        assert_eq!(count_chunks(&pairs), 1);
    }

    #[test]
    fn hand_computed_fragmented() {
        // candidate: "the mat sat on the cat" vs reference "the cat sat on the mat"
        // exact alignment: the→the(0), mat→mat(5), sat→sat(2), on→on(3), the→the(4), cat→cat(1)
        // chunks by candidate order: [the]0→0, [mat]1→5, [sat on the]2..4→2..4, [cat]5→1 → 4 chunks
        let c = t("the mat sat on the cat");
        let r = t("the cat sat on the mat");
        let pairs = align(&c, &r);
        assert_eq!(pairs.len(), 6);
        assert_eq!(count_chunks(&pairs), 4);
        let expected = 100.0 * (1.0 - 0.5 * (4.0f64 / 6.0).powi(3));
        assert!((meteor(&c, &[r]).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn recall_weighted_mean() {
        // 2 of 2 candidate words match a 4-word reference: P = 1, R = 0.5
        let c = t("red cat");
        let r = t("a red cat sits");
        let f = 10.0 * 1.0 * 0.5 / (0.5 + 9.0);
        let expected = 100.0 * f * (1.0 - 0.5 * (1.0f64 / 2.0).powi(3));
        assert!((meteor(&c, &[r]).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn best_reference_wins() {
        let s = meteor(&t("the cat sat"), &[t("dogs bark"), t("the cat sat")]).unwrap();
        assert!((s - 100.0 * (1.0 - 0.5 / 27.0)).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn bounded(c in prop::collection::vec(0usize..6, 0..10), r in prop::collection::vec(0usize..6, 1..10)) {
            let words = ["a", "cat", "cats", "on", "the", "mat"];
            let c: Vec<&str> = c.iter().map(|&i| words[i]).collect();
            let r: Vec<&str> = r.iter().map(|&i| words[i]).collect();
            let s = meteor(&c, &[r]).unwrap();
            prop_assert!((0.0..=100.0).contains(&s));
        }
    }
}
