use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::tokenize;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionRecord {
    pub image_id: String,
    pub caption: String,
    pub tokens: Vec<String>,
}

impl CaptionRecord {
    pub fn new(image_id: impl Into<String>, caption: impl Into<String>) -> Self {
        let caption = caption.into();
        CaptionRecord {
            image_id: image_id.into(),
            tokens: tokenize(&caption),
            caption,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CaptionLine {
    image_id: String,
    caption: String,
}

pub fn parse_captions(text: &str) -> Result<Vec<CaptionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaptionLine = serde_json::from_str(line).map_err(|e| Error::LineFormat {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(CaptionRecord::new(rec.image_id, rec.caption));
    }
    Ok(out)
}

pub fn load_captions(path: &Path) -> Result<Vec<CaptionRecord>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_captions(&text)
}

pub fn write_captions<W: Write>(mut w: W, records: &[CaptionRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(&CaptionLine {
            image_id: r.image_id.clone(),
            caption: r.caption.clone(),
        })
        .expect("string fields serialize");
        writeln!(w, "{line}").map_err(|e| Error::io("writing captions", e))?;
    }
    Ok(())
}

pub fn save_captions(path: &Path, records: &[CaptionRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_captions(&mut buf, records)?;
    fs::write(path, buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reference token sequences grouped by image, in first-appearance order.
pub fn group_references(records: &[CaptionRecord]) -> IndexMap<String, Vec<Vec<String>>> {
    let mut map: IndexMap<String, Vec<Vec<String>>> = IndexMap::new();
    for r in records {
        map.entry(r.image_id.clone())
            .or_default()
            .push(r.tokens.clone());
    }
    map
}

/// Splits records by image id: the first `n_first` distinct images (in
/// first-appearance order) go left, the rest right.
pub fn split_by_image(
    records: &[CaptionRecord],
    n_first: usize,
) -> (Vec<CaptionRecord>, Vec<CaptionRecord>) {
    let mut rank: HashMap<&str, usize> = HashMap::new();
    for r in records {
        let next = rank.len();
        rank.entry(r.image_id.as_str()).or_insert(next);
    }
    records
        .iter()
        .cloned()
        .partition(|r| rank[r.image_id.as_str()] < n_first)
}
