//! Text-only inference.

use tracing::info;

use super::stage1::Stage1Checkpoint;
use super::vocoder::Vocoder;
use crate::adaptation::AdaptationCheckpoint;
use crate::corpus::{G2p, MelSpectrogram};
use crate::emotion::EmotionProvider;
use crate::error::{Error, Result};
use crate::style::{GstWeights, StyleEmbedding};

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub phonemes: Vec<String>,
    pub weights: GstWeights,
    pub style: StyleEmbedding,
    pub durations: Vec<usize>,
    pub mel: MelSpectrogram,
    /// Absent when no vocoder is configured.
    pub waveform: Option<Vec<f64>>,
}

/// Frozen artifacts needed to go from text to speech.
pub struct Synthesizer {
    stage1: Stage1Checkpoint,
    adaptation: AdaptationCheckpoint,
    provider: Box<dyn EmotionProvider>,
    g2p: Box<dyn G2p>,
    vocoder: Option<Box<dyn Vocoder>>,
}

impl Synthesizer {
    /// Fails if the adaptation checkpoint was trained against a different
    /// stage-I checkpoint or emotion provider.
    pub fn new(
        stage1: Stage1Checkpoint,
        stage1_hash: &str,
        adaptation: AdaptationCheckpoint,
        provider: Box<dyn EmotionProvider>,
        g2p: Box<dyn G2p>,
        vocoder: Option<Box<dyn Vocoder>>,
    ) -> Result<Self> {
        adaptation.check_compatible(&provider.fingerprint(), stage1_hash)?;
        let (got, want) = (adaptation.net.output_dim(), stage1.model.style.config.n_tokens);
        if got != want {
            return Err(Error::Dimension {
                what: "adaptation output".into(),
                expected: want,
                actual: got,
            });
        }
        Ok(Self {
            stage1,
            adaptation,
            provider,
            g2p,
            vocoder,
        })
    }

    pub fn stage1(&self) -> &Stage1Checkpoint {
        &self.stage1
    }

    pub fn has_vocoder(&self) -> bool {
        self.vocoder.is_some()
    }

    pub fn predict_weights(&self, text: &str) -> Result<GstWeights> {
        self.adaptation.net.predict_weights(&self.provider.embed(text)?)
    }

    pub fn synthesize(&self, text: &str) -> Result<Synthesis> {
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        let phonemes = self.g2p.phonemize(text)?;
        let ids = self.stage1.vocab.encode(&phonemes)?;
        let weights = self.predict_weights(text)?;
        let style = self.stage1.combine_tokens(&weights)?;
        let (mel, durations) = self.stage1.infer_mel(&ids, Some(&style))?;
        let mel = MelSpectrogram::new(mel, self.stage1.mel.hop_size);
        let waveform = match &self.vocoder {
            Some(v) => Some(v.vocode(&mel.values)?),
            None => {
                info!("no vocoder configured; returning the mel only");
                None
            }
        };
        Ok(Synthesis {
            phonemes,
            weights,
            style,
            durations,
            mel,
            waveform,
        })
    }
}
