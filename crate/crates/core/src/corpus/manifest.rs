use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use tracing::warn;

use super::Utterance;
use crate::audio::{read_wav, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct ManifestRecord {
    id: String,
    audio_path: PathBuf,
    text: String,
}

/// A record that could not be turned into an [`Utterance`].
#[derive(Debug, Clone)]
pub struct RejectedRecord {
    pub line: usize,
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct ManifestLoad {
    pub utterances: Vec<Utterance>,
    pub rejected: Vec<RejectedRecord>,
}

/// Loads a JSON-lines manifest (`id`, `audio_path`, `text`). Relative audio
/// paths resolve against the manifest's directory. Audio is decoded only when
/// `eager_audio` is set; missing audio files reject that record alone.
pub fn load_manifest(path: &Path, eager_audio: bool) -> Result<ManifestLoad> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut load = ManifestLoad::default();

    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let audio_path = if record.audio_path.is_absolute() {
            record.audio_path.clone()
        } else {
            base.join(&record.audio_path)
        };
        if !audio_path.is_file() {
            load.rejected.push(RejectedRecord {
                line: line_no,
                id: record.id.clone(),
                reason: format!("missing audio file {}", audio_path.display()),
            });
            continue;
        }
        let mut utt = Utterance::new(record.id, audio_path, record.text);
        if eager_audio {
            match read_wav(&utt.audio_path, SAMPLE_RATE) {
                Ok(w) => utt.waveform = Some(w),
                Err(e) => {
                    load.rejected.push(RejectedRecord {
                        line: line_no,
                        id: utt.id.clone(),
                        reason: e.to_string(),
                    });
                    continue;
                }
            }
        }
        load.utterances.push(utt);
    }

    if load.utterances.is_empty() && load.rejected.is_empty() {
        warn!(manifest = %path.display(), "manifest is empty");
    }
    for r in &load.rejected {
        warn!(line = r.line, id = %r.id, "rejected manifest record: {}", r.reason);
    }
    Ok(load)
}
