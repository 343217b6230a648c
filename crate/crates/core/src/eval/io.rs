//! JSON-lines readers for externally produced transcripts and labels.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::metrics::TranscriptPair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    #[serde(rename = "true")]
    pub true_label: String,
    pub predicted: String,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_transcripts(path: &Path) -> Result<Vec<TranscriptPair>> {
    read_jsonl(path)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("t.jsonl");
        fs::write(&t, "{\"id\":\"a\",\"reference\":\"hi there\",\"hypothesis\":\"hi\"}\n\n").unwrap();
        let pairs = read_transcripts(&t).unwrap();
        assert_eq!(pairs[0].id.as_deref(), Some("a"));

        let l = dir.path().join("l.jsonl");
        fs::write(&l, "{\"id\":\"a\",\"true\":\"anger\",\"predicted\":\"neutral\"}\nnot json\n").unwrap();
        let err = read_labels(&l).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}
