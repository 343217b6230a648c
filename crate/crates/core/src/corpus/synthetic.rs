//! Small generated corpora for tests and smoke runs.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::g2p::{G2p, LexiconG2p, PhonemeVocab};
use super::mel::MelSpectrogram;
use super::FeatureRecord;
use crate::audio::{write_wav, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Short sentences spanning the builtin stub lexicon, plus a few with no
/// emotional keywords.
pub const SYNTHETIC_TEXTS: [&str; 12] = [
    "so sad",
    "happy day",
    "furious man",
    "so scared",
    "wow, amazed",
    "gross food",
    "lonely tears",
    "great joy",
    "angry mob",
    "the lamp",
    "blue door",
    "usual report",
];

fn phoneme_mel(id: usize, pos: usize, n_mels: usize) -> impl Fn(usize) -> f64 {
    let center = (id * 7 + 3) % n_mels;
    let slope = 0.05 * pos as f64;
    move |m| {
        let d = m as f64 - center as f64;
        -6.0 + 3.0 * (-d * d / 60.0).exp() + slope
    }
}

/// Feature records built directly, without audio: each phoneme paints a
/// Gaussian bump on the mel at a channel determined by its id.
pub fn synthetic_records(n: usize, n_mels: usize, seed: u64) -> Result<Vec<FeatureRecord>> {
    let g2p = LexiconG2p::new();
    let vocab = PhonemeVocab::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let text = SYNTHETIC_TEXTS[i % SYNTHETIC_TEXTS.len()].to_string();
            let phonemes = g2p.phonemize(&text)?;
            let ids = vocab.encode(&phonemes)?;
            let durations: Vec<usize> = ids.iter().map(|_| rng.random_range(2..=5)).collect();
            let frames: usize = durations.iter().sum();
            let mut values = ndarray::Array2::zeros((frames, n_mels));
            let mut t = 0;
            for (&id, &d) in ids.iter().zip(&durations) {
                for pos in 0..d {
                    let f = phoneme_mel(id, pos, n_mels);
                    values.row_mut(t).iter_mut().enumerate().for_each(|(m, v)| *v = f(m));
                    t += 1;
                }
            }
            Ok(FeatureRecord {
                id: format!("syn{i:03}"),
                text,
                mel: MelSpectrogram::new(values, 256),
                pitch: ids.iter().map(|&id| 4.6 + 0.02 * id as f64).collect(),
                energy: ids.iter().map(|&id| 1.0 + 0.1 * (id % 5) as f64).collect(),
                phonemes,
                durations,
            })
        })
        .collect()
}

/// Writes `n` utterances as a manifest, 22.05 kHz WAVs and frame-unit
/// alignments under `dir`. Each phoneme is a tone whose pitch follows its id.
/// Returns the manifest path and the alignment directory.
pub fn write_synthetic_corpus(dir: &Path, n: usize, seed: u64) -> Result<(PathBuf, PathBuf)> {
    let hop = 256;
    let g2p = LexiconG2p::new();
    let vocab = PhonemeVocab::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wav_dir = dir.join("wavs");
    let align_dir = dir.join("alignments");
    for d in [&wav_dir, &align_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut manifest = String::new();
    for i in 0..n {
        let id = format!("utt{i:03}");
        let text = SYNTHETIC_TEXTS[i % SYNTHETIC_TEXTS.len()];
        let phonemes = g2p.phonemize(text)?;
        let ids = vocab.encode(&phonemes)?;
        let mut samples = Vec::new();
        let mut tsv = String::new();
        let mut phase = 0.0f64;
        for (ph, &pid) in phonemes.iter().zip(&ids) {
            let frames = rng.random_range(4..=8);
            let freq = 110.0 + 6.0 * pid as f64;
            for _ in 0..frames * hop {
                phase += std::f64::consts::TAU * freq / SAMPLE_RATE as f64;
                samples.push(0.3 * phase.sin());
            }
            tsv.push_str(&format!("{ph}\t{frames}\n"));
        }
        let wav = wav_dir.join(format!("{id}.wav"));
        write_wav(&wav, &samples, SAMPLE_RATE)?;
        let tsv_path = align_dir.join(format!("{id}.tsv"));
        fs::write(&tsv_path, tsv).map_err(|e| Error::io(&tsv_path, e))?;
        manifest.push_str(&json!({ "id": id, "audio_path": format!("wavs/{id}.wav"), "text": text }).to_string());
        manifest.push('\n');
    }
    let manifest_path = dir.join("manifest.jsonl");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok((manifest_path, align_dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{extract_features, load_manifest, FeatureConfig};

    #[test]
    fn records_are_consistent() {
        let recs = synthetic_records(12, 80, 0).unwrap();
        assert!(recs.iter().all(|r| r.check().is_ok()));
        assert_eq!(recs, synthetic_records(12, 80, 0).unwrap());
    }

    #[test]
    fn written_corpus_round_trips_through_preprocessing() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, align) = write_synthetic_corpus(dir.path(), 3, 1).unwrap();
        let load = load_manifest(&manifest, true).unwrap();
        assert_eq!(load.utterances.len(), 3);
        for u in &load.utterances {
            let rec = extract_features(u, &align, &FeatureConfig::default()).unwrap();
            assert_eq!(rec.phonemes, LexiconG2p::new().phonemize(&u.text).unwrap());
        }
    }
}
