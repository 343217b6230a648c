//! Log-mel front end.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio::{Framing, Stft, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_size: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Mel energies are clamped here before the natural log.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            n_fft: 1024,
            win_length: 1024,
            hop_size: 256,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn framing(&self) -> Framing {
        Framing {
            n_fft: self.n_fft,
            win_length: self.win_length,
            hop: self.hop_size,
        }
    }

    pub fn log_floor_value(&self) -> f64 {
        self.log_floor.ln()
    }

    pub fn n_freqs(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// `frames × n_mels` log-mel matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelSpectrogram {
    pub values: Array2<f64>,
    pub hop_size: usize,
    pub n_mels: usize,
}

impl MelSpectrogram {
    pub fn new(values: Array2<f64>, hop_size: usize) -> Self {
        let n_mels = values.ncols();
        Self {
            values,
            hop_size,
            n_mels,
        }
    }

    pub fn frame_count(&self) -> usize {
        self.values.nrows()
    }

    /// Constant-valued spectrogram, e.g. silence at the log floor.
    pub fn filled(frames: usize, n_mels: usize, value: f64, hop_size: usize) -> Self {
        Self::new(Array2::from_elem((frames, n_mels), value), hop_size)
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    // Slaney scale: linear below 1 kHz, logarithmic above.
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= min_log_hz {
        min_log_mel + (hz / min_log_hz).ln() / logstep
    } else {
        hz / f_sp
    }
}

fn mel_to_hz(mel: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        min_log_hz * (logstep * (mel - min_log_mel)).exp()
    } else {
        mel * f_sp
    }
}

/// Slaney-normalized triangular filterbank, `n_mels × (n_fft/2 + 1)`.
pub fn mel_filterbank(config: &MelConfig) -> Array2<f64> {
    let n_freqs = config.n_freqs();
    let fft_freqs: Vec<f64> = (0..n_freqs)
        .map(|i| i as f64 * config.sample_rate as f64 / config.n_fft as f64)
        .collect();
    let (mel_lo, mel_hi) = (hz_to_mel(config.fmin), hz_to_mel(config.fmax));
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (config.n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((config.n_mels, n_freqs));
    for m in 0..config.n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let enorm = 2.0 / (hi - lo);
        for (k, &f) in fft_freqs.iter().enumerate() {
            let lower = (f - lo) / (center - lo);
            let upper = (hi - f) / (hi - center);
            fb[[m, k]] = lower.min(upper).max(0.0) * enorm;
        }
    }
    fb
}

/// Reusable mel analyzer (plans the FFT and filterbank once).
pub struct MelExtractor {
    config: MelConfig,
    stft: Stft,
    filterbank: Array2<f64>,
}

impl MelExtractor {
    pub fn new(config: MelConfig) -> Self {
        let stft = Stft::new(config.framing());
        let filterbank = mel_filterbank(&config);
        Self {
            config,
            stft,
            filterbank,
        }
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &Array2<f64> {
        &self.filterbank
    }

    /// Magnitude spectrogram `frames × n_freqs`.
    pub fn magnitudes(&mut self, waveform: &[f64]) -> Result<Array2<f64>> {
        if waveform.len() < self.config.win_length {
            return Err(Error::AudioTooShort {
                samples: waveform.len(),
                required: self.config.win_length,
            });
        }
        let spectra = self.stft.forward(waveform);
        let n_freqs = self.config.n_freqs();
        let mut mags = Array2::zeros((spectra.len(), n_freqs));
        for (f, frame) in spectra.iter().enumerate() {
            for (k, c) in frame.iter().enumerate() {
                mags[[f, k]] = c.norm();
            }
        }
        Ok(mags)
    }

    pub fn compute(&mut self, waveform: &[f64]) -> Result<MelSpectrogram> {
        let mags = self.magnitudes(waveform)?;
        Ok(self.mel_from_magnitudes(&mags))
    }

    pub fn mel_from_magnitudes(&self, mags: &Array2<f64>) -> MelSpectrogram {
        let floor = self.config.log_floor;
        let mel = mags.dot(&self.filterbank.t()).mapv(|v| v.max(floor).ln());
        MelSpectrogram::new(mel, self.config.hop_size)
    }
}

/// Log-mel spectrogram of a 22.05 kHz waveform.
pub fn compute_mel(waveform: &[f64], config: &MelConfig) -> Result<MelSpectrogram> {
    MelExtractor::new(config.clone()).compute(waveform)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::reflect_pad;
    use std::f64::consts::PI;

    /// Direct DFT on the same reflect-padded Hann frames.
    fn reference_log_mel(x: &[f64], cfg: &MelConfig) -> Array2<f64> {
        let pad = cfg.n_fft / 2;
        let padded = reflect_pad(x, pad);
        let frames = 1 + x.len() / cfg.hop_size;
        let window: Vec<f64> = (0..cfg.n_fft)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / cfg.n_fft as f64).cos())
            .collect();
        let fb = mel_filterbank(cfg);
        let n_freqs = cfg.n_fft / 2 + 1;
        let mut out = Array2::zeros((frames, cfg.n_mels));
        for f in 0..frames {
            let seg = &padded[f * cfg.hop_size..f * cfg.hop_size + cfg.n_fft];
            let mags: Vec<f64> = (0..n_freqs)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (n, (&s, &w)) in seg.iter().zip(window.iter()).enumerate() {
                        let ang = -2.0 * PI * (k * n) as f64 / cfg.n_fft as f64;
                        re += s * w * ang.cos();
                        im += s * w * ang.sin();
                    }
                    (re * re + im * im).sqrt()
                })
                .collect();
            for m in 0..cfg.n_mels {
                let e: f64 = (0..n_freqs).map(|k| fb[[m, k]] * mags[k]).sum();
                out[[f, m]] = e.max(cfg.log_floor).ln();
            }
        }
        out
    }

    fn chirp(len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| {
                let t = n as f64 / 22050.0;
                0.3 * (2.0 * PI * (200.0 + 900.0 * t) * t).sin() + 0.05 * (2.0 * PI * 3100.0 * t).sin()
            })
            .collect()
    }

    #[test]
    fn one_second_yields_87_frames_of_80_bins() {
        let mel = compute_mel(&chirp(22050), &MelConfig::default()).unwrap();
        assert_eq!(mel.values.dim(), (87, 80));
        assert_eq!(mel.n_mels, 80);
        assert_eq!(mel.hop_size, 256);
    }

    #[test]
    fn matches_direct_dft_reference() {
        let cfg = MelConfig::default();
        let x = chirp(3000);
        let mel = compute_mel(&x, &cfg).unwrap();
        let reference = reference_log_mel(&x, &cfg);
        assert_eq!(mel.values.dim(), reference.dim());
        // compare linear energies: the log stretches rounding noise in near-empty bins
        for (a, b) in mel.values.iter().zip(reference.iter()) {
            let (ea, eb) = (a.exp(), b.exp());
            assert!((ea - eb).abs() <= 1e-12 + 1e-9 * eb, "{a} vs {b}");
        }
    }

    #[test]
    fn silence_maps_to_log_floor() {
        let cfg = MelConfig::default();
        let mel = compute_mel(&vec![0.0; 4096], &cfg).unwrap();
        assert!(mel.values.iter().all(|&v| v == cfg.log_floor_value()));
    }

    #[test]
    fn values_never_below_floor_and_deterministic() {
        let cfg = MelConfig::default();
        let x = chirp(8000);
        let a = compute_mel(&x, &cfg).unwrap();
        let b = compute_mel(&x, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.values.iter().all(|&v| v >= cfg.log_floor_value()));
    }

    #[test]
    fn too_short_is_rejected() {
        let err = compute_mel(&[0.1; 100], &MelConfig::default()).unwrap_err();
        assert!(matches!(err, Error::AudioTooShort { samples: 100, required: 1024 }));
    }

    #[test]
    fn filterbank_rows_cover_band() {
        let fb = mel_filterbank(&MelConfig::default());
        assert_eq!(fb.dim(), (80, 513));
        for row in fb.rows() {
            assert!(row.iter().any(|&v| v > 0.0));
        }
        assert!((hz_to_mel(mel_to_hz(37.5)) - 37.5).abs() < 1e-9);
    }
}
