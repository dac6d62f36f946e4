use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const START: &str = "<s>";
pub const END: &str = "</s>";
pub const UNK: &str = "<unk>";

pub const PAD_ID: usize = 0;
pub const START_ID: usize = 1;
pub const END_ID: usize = 2;
pub const UNK_ID: usize = 3;
pub const NUM_SPECIALS: usize = 4;

pub const MAX_CONTENT_WORDS: usize = 10_000;

const SPECIALS: [&str; NUM_SPECIALS] = [PAD, START, END, UNK];

/// Lowercase, split on whitespace, trim ASCII punctuation from both ends of
/// every piece, drop what ends up empty.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.to_lowercase()
                .trim_matches(|c: char| c.is_ascii_punctuation())
                .to_string()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Special tokens at ids 0..4, then content words by descending training
/// count with lexicographic tie-break.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<I, S>(captions: I, size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[String]>,
    {
        if size > MAX_CONTENT_WORDS {
            return Err(Error::Parameter(format!(
                "vocabulary size {size} exceeds {MAX_CONTENT_WORDS}"
            )));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut seen = 0usize;
        for caption in captions {
            seen += 1;
            for tok in caption.as_ref() {
                *counts.entry(tok.clone()).or_default() += 1;
            }
        }
        if seen == 0 {
            return Err(Error::Input(
                "cannot build a vocabulary from no captions".into(),
            ));
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(size);
        Self::from_entries(ranked)
    }

    /// Content entries in canonical order; specials are prepended.
    pub fn from_entries(content: Vec<(String, u64)>) -> Result<Self> {
        if content.len() > MAX_CONTENT_WORDS {
            return Err(Error::Vocabulary(format!(
                "{} content words exceed {MAX_CONTENT_WORDS}",
                content.len()
            )));
        }
        let mut words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut counts = vec![0; NUM_SPECIALS];
        for (w, c) in content {
            words.push(w);
            counts.push(c);
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(Error::Vocabulary(format!("invalid word {w:?}")));
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate word {w:?}")));
            }
        }
        Ok(Vocabulary {
            words,
            counts,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn content_len(&self) -> usize {
        self.words.len() - NUM_SPECIALS
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn is_special(id: usize) -> bool {
        id < NUM_SPECIALS
    }

    pub fn is_special_word(word: &str) -> bool {
        SPECIALS.contains(&word)
    }

    /// Content words in canonical order with their ids.
    pub fn content_words(&self) -> impl Iterator<Item = (usize, &str)> {
        self.words
            .iter()
            .enumerate()
            .skip(NUM_SPECIALS)
            .map(|(i, w)| (i, w.as_str()))
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| match self.id(t.as_ref()) {
                Some(id) if !Self::is_special(id) => id,
                _ => UNK_ID,
            })
            .collect()
    }

    /// Encoded tokens followed by the end marker.
    pub fn encode_caption<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        let mut ids = self.encode(tokens);
        ids.push(END_ID);
        ids
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.word(id)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Vocabulary(format!("id {id} out of range")))
            })
            .collect()
    }

    /// Canonical file contents: `word<TAB>count` per line.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (w, c) in self.words.iter().zip(&self.counts) {
            out.push_str(w);
            out.push('\t');
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }

    /// FNV-1a of the canonical file bytes.
    pub fn content_hash(&self) -> u64 {
        fnv1a64(self.to_file_string().as_bytes())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut content = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let (word, count) = line.split_once('\t').ok_or_else(|| Error::LineFormat {
                line: line_no,
                msg: "expected word<TAB>count".into(),
            })?;
            let count: u64 = count.trim().parse().map_err(|_| Error::LineFormat {
                line: line_no,
                msg: format!("bad count {count:?}"),
            })?;
            if i < NUM_SPECIALS {
                if word != SPECIALS[i] || count != 0 {
                    return Err(Error::LineFormat {
                        line: line_no,
                        msg: format!("expected special {:?} with count 0", SPECIALS[i]),
                    });
                }
            } else {
                content.push((word.to_string(), count));
            }
        }
        if text.lines().count() < NUM_SPECIALS {
            return Err(Error::Vocabulary("missing special tokens".into()));
        }
        Self::from_entries(content)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(
            tokenize("A man, riding a horse."),
            ["a", "man", "riding", "a", "horse"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("chihuahua chihuahua chihuahua"), ["chihuahua"; 3]);
        assert_eq!(tokenize("  \"Hello\"  -- WORLD!! "), ["hello", "world"]);
        assert_eq!(tokenize("don't stop"), ["don't", "stop"]);
    }

    #[test]
    fn build_orders_by_count_then_word() {
        let caps = vec![toks("a a a b b c")];
        let v = Vocabulary::build(&caps, 2).unwrap();
        let words: Vec<&str> = v.content_words().map(|(_, w)| w).collect();
        assert_eq!(words, ["a", "b"]);
        assert_eq!(v.id("a"), Some(NUM_SPECIALS));

        let caps = vec![toks("b a")];
        let v = Vocabulary::build(&caps, 1).unwrap();
        let words: Vec<&str> = v.content_words().map(|(_, w)| w).collect();
        assert_eq!(words, ["a"]);
    }

    #[test]
    fn build_rejects_empty_corpus() {
        let caps: Vec<Vec<String>> = vec![];
        assert!(matches!(Vocabulary::build(&caps, 10), Err(Error::Input(_))));
        assert!(Vocabulary::build(&[toks("a")], MAX_CONTENT_WORDS + 1).is_err());
    }

    #[test]
    fn counts_match_independent_recount() {
        let raw = [
            "A dog runs on the grass.",
            "The dog is running on grass",
            "a brown dog running",
            "A dog, in a field!",
            "dog on the lawn",
            "Two cats sleep on a bed.",
            "the cats are sleeping",
            "cats on a bed",
            "two cats resting on the bed",
            "A pair of cats asleep.",
        ];
        let caps: Vec<Vec<String>> = raw.iter().map(|r| tokenize(r)).collect();
        let v = Vocabulary::build(&caps, 1000).unwrap();

        // recount with an ordered map over a different split routine
        let mut recount: BTreeMap<String, u64> = BTreeMap::new();
        for r in raw {
            for piece in r.split(' ').filter(|p| !p.is_empty()) {
                let w: String = piece
                    .to_lowercase()
                    .trim_matches(|c: char| ",.!\"".contains(c))
                    .to_string();
                *recount.entry(w).or_default() += 1;
            }
        }
        assert_eq!(v.content_len(), recount.len());
        for (id, w) in v.content_words() {
            assert_eq!(v.count(id), recount[w], "{w}");
        }
        let ordered: Vec<u64> = v.content_words().map(|(id, _)| v.count(id)).collect();
        assert!(ordered.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn specials_and_oov() {
        let v = Vocabulary::build(&[toks("a cat")], 10).unwrap();
        assert_eq!(v.word(PAD_ID), Some(PAD));
        assert_eq!(v.word(START_ID), Some(START));
        assert_eq!(v.word(END_ID), Some(END));
        assert_eq!(v.word(UNK_ID), Some(UNK));
        assert_eq!(
            v.encode(&["cat", "zebra", "<s>"]),
            vec![v.id("cat").unwrap(), UNK_ID, UNK_ID]
        );
        let ids = v.encode_caption(&["a"]);
        assert_eq!(ids.last(), Some(&END_ID));
    }

    #[test]
    fn file_round_trip_and_hash() {
        let v = Vocabulary::build(&[toks("x y y z z z")], 10).unwrap();
        let text = v.to_file_string();
        assert!(text.starts_with("<pad>\t0\n<s>\t0\n</s>\t0\n<unk>\t0\nz\t3\ny\t2\nx\t1\n"));
        let back = Vocabulary::parse(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.content_hash(), v.content_hash());
        let other = Vocabulary::build(&[toks("x y y z z")], 10).unwrap();
        assert_ne!(other.content_hash(), v.content_hash());
    }

    #[test]
    fn parse_errors_cite_lines() {
        let err =
            Vocabulary::parse("<pad>\t0\n<s>\t0\n</s>\t0\n<unk>\t0\nok\t2\nbroken\n").unwrap_err();
        assert!(matches!(err, Error::LineFormat { line: 6, .. }), "{err}");
        let err = Vocabulary::parse("<s>\t0\n").unwrap_err();
        assert!(matches!(err, Error::LineFormat { line: 1, .. }));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(picks in prop::collection::vec(0usize..6, 0..20)) {
            let words = ["red", "cat", "on", "the", "mat", "sits"];
            let v = Vocabulary::build(&[words.iter().map(|w| w.to_string()).collect::<Vec<_>>()], 100).unwrap();
            let seq: Vec<&str> = picks.iter().map(|&i| words[i]).collect();
            let ids = v.encode(&seq);
            prop_assert!(ids.iter().all(|&id| !Vocabulary::is_special(id)));
            prop_assert_eq!(v.decode(&ids).unwrap(), seq);
        }

        #[test]
        fn oov_never_maps_to_content(word in "[a-z]{3,8}") {
            let v = Vocabulary::build(&[toks("red cat on the mat")], 100).unwrap();
            let id = v.encode(&[word.as_str()])[0];
            if v.id(&word).is_none() {
                prop_assert_eq!(id, UNK_ID);
            }
        }
    }
}
