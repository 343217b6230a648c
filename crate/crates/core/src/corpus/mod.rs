//! Corpus ingestion: manifests, log-mel features, aligner output and splits.

pub mod alignment;
pub mod features;
pub mod g2p;
pub mod manifest;
pub mod mel;
pub mod split;
pub mod synthetic;

use std::path::PathBuf;

pub use alignment::{ingest_alignments, round_durations, AlignmentConfig, AlignmentIngest, DurationUnit};
pub use features::{extract_features, FeatureCache, FeatureConfig, FeatureRecord};
pub use g2p::{G2p, LexiconG2p, PhonemeVocab};
pub use manifest::{load_manifest, ManifestLoad, RejectedRecord};
pub use mel::{compute_mel, MelConfig, MelExtractor, MelSpectrogram};
pub use split::{split_corpus, CorpusSplit, SplitRatio};

/// One audio–text example. Optional fields fill in as preprocessing runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub audio_path: PathBuf,
    pub text: String,
    /// Mono samples at 22050 Hz.
    pub waveform: Option<Vec<f64>>,
    pub phonemes: Option<Vec<String>>,
    pub durations: Option<Vec<usize>>,
    pub mel: Option<MelSpectrogram>,
}

impl Utterance {
    pub fn new(id: String, audio_path: PathBuf, text: String) -> Self {
        Self {
            id,
            audio_path,
            text,
            waveform: None,
            phonemes: None,
            durations: None,
            mel: None,
        }
    }
}
