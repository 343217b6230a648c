//! Ingestion of forced-aligner output.
//!
//! One file per utterance, `<alignment_dir>/<id>.tsv`, each line
//! `phoneme<TAB>duration`. Durations are frames by default, or seconds when
//! [`DurationUnit::Seconds`] is configured.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::Utterance;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DurationUnit {
    Frames,
    Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    pub unit: DurationUnit,
    pub sample_rate: u32,
    pub hop_size: usize,
    /// Largest tolerated gap between the raw duration sum and the mel frame count.
    pub max_frame_drift: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            unit: DurationUnit::Frames,
            sample_rate: crate::audio::SAMPLE_RATE,
            hop_size: 256,
            max_frame_drift: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentEntry {
    pub phoneme: String,
    /// Duration in (possibly fractional) frames.
    pub frames: f64,
}

pub fn alignment_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.tsv"))
}

pub fn read_alignment(path: &Path, config: &AlignmentConfig) -> Result<Vec<AlignmentEntry>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let mut parts = line.split('\t');
        let (Some(ph), Some(dur), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err("expected 'phoneme<TAB>duration'".into()));
        };
        let value: f64 = dur.trim().parse().map_err(|_| parse_err(format!("bad duration '{dur}'")))?;
        if !(value >= 0.0) || !value.is_finite() {
            return Err(parse_err(format!("duration must be non-negative, got {value}")));
        }
        let frames = match config.unit {
            DurationUnit::Frames => value,
            DurationUnit::Seconds => value * config.sample_rate as f64 / config.hop_size as f64,
        };
        out.push(AlignmentEntry {
            phoneme: ph.trim().to_string(),
            frames,
        });
    }
    Ok(out)
}

/// Rounds non-negative real durations to integers summing exactly to `target`.
///
/// Durations are first rescaled to sum to `target`, floored, and the remaining
/// frames go one each to the largest fractional parts (ties: larger duration,
/// then earlier position). Result entries stay within one frame of the
/// rescaled values and keep their relative order.
pub fn round_durations(raw: &[f64], target: usize) -> Vec<usize> {
    if raw.is_empty() {
        return Vec::new();
    }
    let total: f64 = raw.iter().sum();
    let scaled: Vec<f64> = if total > 0.0 {
        raw.iter().map(|d| d * target as f64 / total).collect()
    } else {
        vec![target as f64 / raw.len() as f64; raw.len()]
    };
    let mut out: Vec<usize> = scaled.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut remaining = target.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = scaled[a] - scaled[a].floor();
        let fb = scaled[b] - scaled[b].floor();
        fb.total_cmp(&fa).then(scaled[b].total_cmp(&scaled[a])).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        out[i] += 1;
        remaining -= 1;
    }
    out
}

/// Outcome of [`ingest_alignments`].
#[derive(Debug, Default)]
pub struct AlignmentIngest {
    pub utterances: Vec<Utterance>,
    /// Utterances without an alignment file; excluded from acoustic training.
    pub excluded: Vec<String>,
}

/// Attaches phonemes and frame durations to each utterance.
///
/// Utterances must carry their mel. If an utterance already has phonemes the
/// alignment must list the same number of entries.
pub fn ingest_alignments(
    utterances: Vec<Utterance>,
    alignment_dir: &Path,
    config: &AlignmentConfig,
) -> Result<AlignmentIngest> {
    let mut ingest = AlignmentIngest::default();
    for mut utt in utterances {
        let path = alignment_path(alignment_dir, &utt.id);
        if !path.is_file() {
            warn!(id = %utt.id, path = %path.display(), "no alignment, excluded from acoustic training");
            ingest.excluded.push(utt.id);
            continue;
        }
        let entries = read_alignment(&path, config)?;
        apply_alignment(&mut utt, &entries, config)?;
        ingest.utterances.push(utt);
    }
    Ok(ingest)
}

pub fn apply_alignment(utt: &mut Utterance, entries: &[AlignmentEntry], config: &AlignmentConfig) -> Result<()> {
    if let Some(existing) = &utt.phonemes {
        if existing.len() != entries.len() {
            return Err(Error::PhonemeCountMismatch {
                id: utt.id.clone(),
                phonemes: existing.len(),
                durations: entries.len(),
            });
        }
    }
    let frames = utt
        .mel
        .as_ref()
        .ok_or_else(|| Error::Config(format!("utterance '{}' has no mel; compute features first", utt.id)))?
        .frame_count();
    let raw: Vec<f64> = entries.iter().map(|e| e.frames).collect();
    let raw_sum: f64 = raw.iter().sum();
    if (raw_sum - frames as f64).abs() > config.max_frame_drift {
        return Err(Error::DurationMismatch {
            id: utt.id.clone(),
            duration_frames: raw_sum.round() as usize,
            mel_frames: frames,
        });
    }
    utt.phonemes = Some(entries.iter().map(|e| e.phoneme.clone()).collect());
    utt.durations = Some(round_durations(&raw, frames));
    Ok(())
}
