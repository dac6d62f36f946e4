use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::corpus::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::nn::{Matrix, RngStream};

/// Range of the random rows given to words without a pretrained vector.
pub const RANDOM_ROW_BOUND: f64 = 0.1;

/// Embedding rows for a vocabulary plus how many content words came from
/// the pretrained file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub embed_dim: usize,
    pub matrix: Matrix,
    pub found: usize,
    pub coverage: f64,
}

impl EmbeddingTable {
    /// Every row drawn from `U[-0.1, 0.1]`.
    pub fn random(vocab: &Vocabulary, embed_dim: usize, seed: u64) -> Self {
        let mut rng = RngStream::derive(seed, &[0xE3B]);
        let data = (0..vocab.len() * embed_dim)
            .map(|_| rng.uniform(-RANDOM_ROW_BOUND, RANDOM_ROW_BOUND))
            .collect();
        EmbeddingTable {
            embed_dim,
            matrix: Matrix::from_vec(vocab.len(), embed_dim, data).expect("sized above"),
            found: 0,
            coverage: 0.0,
        }
    }

    /// Reads `word v1 … vD` lines. Vocabulary words present in the text
    /// overwrite their random row; everything else keeps the seeded
    /// random initialization.
    pub fn from_reader<R: BufRead>(
        reader: R,
        vocab: &Vocabulary,
        embed_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut table = Self::random(vocab, embed_dim, seed);
        let mut filled = vec![false; vocab.len()];
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io(format!("reading line {line_no}"), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ').filter(|p| !p.is_empty());
            let word = parts.next().expect("non-empty line");
            let values: Vec<f64> = parts
                .map(|p| {
                    p.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::LineFormat {
                            line: line_no,
                            msg: format!("bad value {p:?}"),
                        })
                })
                .collect::<Result<_>>()?;
            if values.len() != embed_dim {
                return Err(Error::LineFormat {
                    line: line_no,
                    msg: format!("{} values, expected {embed_dim}", values.len()),
                });
            }
            if let Some(id) = vocab.id(word) {
                if !Vocabulary::is_special(id) {
                    table.matrix.row_mut(id).copy_from_slice(&values);
                    filled[id] = true;
                }
            }
        }
        table.found = filled.iter().filter(|&&f| f).count();
        table.coverage = if vocab.content_len() == 0 {
            0.0
        } else {
            table.found as f64 / vocab.content_len() as f64
        };
        Ok(table)
    }
}

pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    embed_dim: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    EmbeddingTable::from_reader(BufReader::new(f), vocab, embed_dim, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::tokenize;

    fn vocab() -> Vocabulary {
        Vocabulary::build(&[tokenize("red cat on the mat")], 100).unwrap()
    }

    #[test]
    fn full_coverage() {
        let v = vocab();
        let text: String = v
            .content_words()
            .enumerate()
            .map(|(i, (_, w))| format!("{w} {i}.0 0.5 -1\n"))
            .collect();
        let t = EmbeddingTable::from_reader(text.as_bytes(), &v, 3, 1).unwrap();
        assert_eq!(t.coverage, 1.0);
        let cat = v.id("cat").unwrap();
        assert_eq!(t.matrix.row(cat)[1..], [0.5, -1.0]);
    }

    #[test]
    fn empty_file_gives_seeded_random_rows() {
        let v = vocab();
        let a = EmbeddingTable::from_reader(&b""[..], &v, 4, 9).unwrap();
        let b = EmbeddingTable::from_reader(&b""[..], &v, 4, 9).unwrap();
        assert_eq!(a.coverage, 0.0);
        assert_eq!(a, b);
        assert!(a.matrix.data().iter().all(|x| x.abs() <= RANDOM_ROW_BOUND));
        let c = EmbeddingTable::from_reader(&b""[..], &v, 4, 10).unwrap();
        assert_ne!(a.matrix, c.matrix);
    }

    #[test]
    fn partial_coverage_ignores_unknown_words() {
        let v = vocab();
        let t = EmbeddingTable::from_reader(&b"cat 1 2\nzebra 3 4\n"[..], &v, 2, 0).unwrap();
        assert_eq!(t.found, 1);
        assert!((t.coverage - 1.0 / v.content_len() as f64).abs() < 1e-15);
    }

    #[test]
    fn malformed_line_is_cited() {
        let v = vocab();
        let mut text = String::new();
        for i in 0..6 {
            text.push_str(&format!("w{i} 1 2 3\n"));
        }
        text.push_str("cat 1 two 3\n");
        let err = EmbeddingTable::from_reader(text.as_bytes(), &v, 3, 0).unwrap_err();
        assert!(matches!(err, Error::LineFormat { line: 7, .. }), "{err}");

        let err = EmbeddingTable::from_reader(&b"a 1 2 3\nb 1 2\n"[..], &v, 3, 0).unwrap_err();
        assert!(matches!(err, Error::LineFormat { line: 2, .. }), "{err}");
    }
}
