//! Per-utterance acoustic features and their on-disk cache.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::alignment::{apply_alignment, read_alignment, AlignmentConfig};
use super::mel::{MelConfig, MelExtractor, MelSpectrogram};
use super::Utterance;
use crate::eval::pitch::{extract_pitch_contour, PitchConfig};
use crate::error::{Error, Result};

/// Everything the acoustic model needs from one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub id: String,
    pub text: String,
    pub mel: MelSpectrogram,
    pub phonemes: Vec<String>,
    pub durations: Vec<usize>,
    /// Phoneme-level mean log-F0 over voiced frames, 0 when no frame is voiced.
    pub pitch: Vec<f64>,
    /// Phoneme-level mean frame energy (L2 norm of the magnitude spectrum).
    pub energy: Vec<f64>,
}

impl FeatureRecord {
    pub fn check(&self) -> Result<()> {
        let n = self.phonemes.len();
        if self.durations.len() != n || self.pitch.len() != n || self.energy.len() != n {
            return Err(Error::PhonemeCountMismatch {
                id: self.id.clone(),
                phonemes: n,
                durations: self.durations.len(),
            });
        }
        let total: usize = self.durations.iter().sum();
        if total != self.mel.frame_count() {
            return Err(Error::DurationMismatch {
                id: self.id.clone(),
                duration_frames: total,
                mel_frames: self.mel.frame_count(),
            });
        }
        Ok(())
    }
}

/// Averages frame values over each phoneme's span. With `skip_zeros`, zero
/// frames (unvoiced) are excluded and an all-zero span yields 0.
pub fn phoneme_average(frames: &[f64], durations: &[usize], skip_zeros: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(durations.len());
    let mut start = 0;
    for &d in durations {
        let span = &frames[start.min(frames.len())..(start + d).min(frames.len())];
        let (sum, count) = span
            .iter()
            .filter(|v| !skip_zeros || **v != 0.0)
            .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        out.push(if count == 0 { 0.0 } else { sum / count as f64 });
        start += d;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub mel: MelConfig,
    pub pitch: PitchConfig,
    pub alignment: AlignmentConfig,
}

impl FeatureConfig {
    /// Stable hash of the feature configuration, used to key the cache.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }
}

/// Computes mel, variance targets and corrected durations for an utterance
/// whose waveform is loaded.
pub fn extract_features(utt: &Utterance, alignment_dir: &Path, config: &FeatureConfig) -> Result<FeatureRecord> {
    let waveform = utt
        .waveform
        .as_ref()
        .ok_or_else(|| Error::Config(format!("utterance '{}' has no waveform loaded", utt.id)))?;
    let mut extractor = MelExtractor::new(config.mel.clone());
    let mags = extractor.magnitudes(waveform)?;
    let mel = extractor.mel_from_magnitudes(&mags);

    let align_path = super::alignment::alignment_path(alignment_dir, &utt.id);
    if !align_path.is_file() {
        return Err(Error::MissingAlignment {
            id: utt.id.clone(),
            path: align_path,
        });
    }
    let entries = read_alignment(&align_path, &config.alignment)?;
    let mut aligned = utt.clone();
    aligned.mel = Some(mel);
    apply_alignment(&mut aligned, &entries, &config.alignment)?;
    let mel = aligned.mel.take().expect("mel set above");
    let durations = aligned.durations.take().expect("durations set by alignment");
    let phonemes = aligned.phonemes.take().expect("phonemes set by alignment");

    let frame_energy: Vec<f64> = mags.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let contour = extract_pitch_contour(waveform, &config.pitch)?;
    let mut frame_logf0: Vec<f64> = contour.f0.iter().map(|&f| if f > 0.0 { f.ln() } else { 0.0 }).collect();
    frame_logf0.resize(mel.frame_count(), 0.0);

    let record = FeatureRecord {
        id: utt.id.clone(),
        text: utt.text.clone(),
        pitch: phoneme_average(&frame_logf0, &durations, true),
        energy: phoneme_average(&frame_energy, &durations, false),
        mel,
        phonemes,
        durations,
    };
    record.check()?;
    Ok(record)
}

/// Binary feature records under `<dir>/<id>.<config-hash>.bin`.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
    key: String,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>, config: &FeatureConfig) -> Self {
        Self {
            dir: dir.into(),
            key: config.fingerprint(),
        }
    }

    pub fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.{}.bin", self.key))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.path(id).is_file()
    }

    pub fn store(&self, record: &FeatureRecord) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.path(&record.id);
        let bytes = bincode::serialize(record).map_err(|e| Error::serde("feature record", e))?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(&self, id: &str) -> Result<FeatureRecord> {
        let path = self.path(id);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let record: FeatureRecord = bincode::deserialize(&bytes).map_err(|e| Error::serde("feature record", e))?;
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;
    use std::f64::consts::PI;

    #[test]
    fn phoneme_average_respects_spans() {
        let frames = [1.0, 3.0, 0.0, 0.0, 5.0, 0.0];
        assert_eq!(phoneme_average(&frames, &[2, 2, 2], false), vec![2.0, 0.0, 2.5]);
        assert_eq!(phoneme_average(&frames, &[2, 2, 2], true), vec![2.0, 0.0, 5.0]);
        assert_eq!(phoneme_average(&frames, &[0, 6], false), vec![0.0, 1.5]);
    }

    #[test]
    fn extracts_consistent_record_and_caches_it() {
        let dir = tempfile::tempdir().unwrap();
        let wave: Vec<f64> = (0..11025)
            .map(|n| 0.4 * (2.0 * PI * 200.0 * n as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        let frames = 1 + wave.len() / 256;
        fs::write(dir.path().join("u1.tsv"), format!("HH\t10\nAH0\t20\nsil\t{}\n", frames - 31)).unwrap();
        let mut utt = Utterance::new("u1".into(), dir.path().join("u1.wav"), "ha".into());
        utt.waveform = Some(wave);
        let cfg = FeatureConfig::default();
        let rec = extract_features(&utt, dir.path(), &cfg).unwrap();
        assert_eq!(rec.mel.frame_count(), frames);
        assert_eq!(rec.durations.iter().sum::<usize>(), frames);
        assert_eq!(rec.phonemes, vec!["HH", "AH0", "sil"]);
        assert!((rec.pitch[1] - 200f64.ln()).abs() < 0.03);
        assert!(rec.energy.iter().all(|&e| e > 0.0));

        let cache = FeatureCache::new(dir.path().join("cache"), &cfg);
        assert!(!cache.contains("u1"));
        cache.store(&rec).unwrap();
        assert!(cache.contains("u1"));
        assert_eq!(cache.load("u1").unwrap(), rec);
    }

    #[test]
    fn cache_key_tracks_config() {
        let a = FeatureConfig::default();
        let mut b = FeatureConfig::default();
        b.mel.fmax = 7600.0;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), FeatureConfig::default().fingerprint());
    }
}
