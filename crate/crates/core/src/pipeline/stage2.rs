//! Stage-II pair construction: emotion text embeddings paired with the
//! style weights the frozen stage-I reference encoder assigns to each
//! utterance's own mel.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use tracing::warn;

use super::stage1::Stage1Checkpoint;
use crate::adaptation::WeightPair;
use crate::corpus::FeatureRecord;
use crate::emotion::EmotionProvider;
use crate::error::{Error, Result};
use crate::eval::io::read_jsonl;

#[derive(Debug, Default)]
pub struct Stage2Dataset {
    pub pairs: Vec<WeightPair>,
    /// Utterances that could not be turned into a pair, with the reason.
    pub failed: Vec<(String, String)>,
}

/// One pair per pruned utterance, in input order. Per-utterance failures
/// are logged and collected; only an empty input is an error.
pub fn build_stage2_dataset(
    checkpoint: &Stage1Checkpoint,
    pruned: &[FeatureRecord],
    provider: &dyn EmotionProvider,
) -> Result<Stage2Dataset> {
    if pruned.is_empty() {
        return Err(Error::EmptyInput("stage II requires pruned data".into()));
    }
    let results: Vec<Result<WeightPair>> = pruned
        .par_iter()
        .map(|r| {
            Ok(WeightPair {
                id: r.id.clone(),
                embedding: provider.embed(&r.text)?,
                target: checkpoint.extract_weights(&r.mel.values)?,
            })
        })
        .collect();
    let mut out = Stage2Dataset::default();
    for (r, res) in pruned.iter().zip(results) {
        match res {
            Ok(p) => out.pairs.push(p),
            Err(e) => {
                warn!(id = %r.id, error = %e, "no stage-II pair");
                out.failed.push((r.id.clone(), e.to_string()));
            }
        }
    }
    Ok(out)
}

pub fn write_pairs(path: &Path, pairs: &[WeightPair]) -> Result<()> {
    let mut buf = Vec::new();
    for p in pairs {
        serde_json::to_writer(&mut buf, p).map_err(|e| Error::serde("weight pair", e))?;
        buf.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_pairs(path: &Path) -> Result<Vec<WeightPair>> {
    read_jsonl(path)
}
