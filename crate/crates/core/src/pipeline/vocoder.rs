//! Mel-to-waveform conversion.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use crate::audio::Stft;
use crate::autodiff::Matrix;
use crate::corpus::mel::mel_filterbank;
use crate::corpus::MelConfig;
use crate::error::{Error, Result};

pub trait Vocoder: Send + Sync {
    fn name(&self) -> &str;
    /// Waveform at the mel's sample rate from a `frames × n_mels` log-mel.
    fn vocode(&self, log_mel: &Matrix) -> Result<Vec<f64>>;
}

/// Griffin-Lim phase recovery on magnitudes recovered through the
/// filterbank's pseudo-inverse.
pub struct GriffinLim {
    config: MelConfig,
    /// `n_mels × n_freqs`, maps mel rows back to linear magnitudes.
    inverse_basis: Matrix,
    pub iterations: usize,
    pub seed: u64,
}

impl GriffinLim {
    pub fn new(config: MelConfig, iterations: usize, seed: u64) -> Result<Self> {
        let fb = mel_filterbank(&config);
        let (m, f) = fb.dim();
        // mel_row = mag_row · fbᵀ, so mag_row ≈ mel_row · pinv(fbᵀ).
        let fbt = DMatrix::from_fn(f, m, |i, j| fb[[j, i]]);
        let pinv = fbt
            .pseudo_inverse(1e-10)
            .map_err(|e| Error::Config(format!("filterbank pseudo-inverse: {e}")))?;
        let inverse_basis = Matrix::from_shape_fn((m, f), |(i, j)| pinv[(i, j)]);
        Ok(Self {
            config,
            inverse_basis,
            iterations,
            seed,
        })
    }

    pub fn magnitudes(&self, log_mel: &Matrix) -> Result<Matrix> {
        if log_mel.ncols() != self.config.n_mels {
            return Err(Error::Dimension {
                what: "mel channels".into(),
                expected: self.config.n_mels,
                actual: log_mel.ncols(),
            });
        }
        Ok(log_mel.mapv(f64::exp).dot(&self.inverse_basis).mapv(|v| v.max(0.0)))
    }
}

impl Vocoder for GriffinLim {
    fn name(&self) -> &str {
        "griffin-lim"
    }

    fn vocode(&self, log_mel: &Matrix) -> Result<Vec<f64>> {
        let mags = self.magnitudes(log_mel)?;
        let frames = mags.nrows();
        if frames == 0 {
            return Err(Error::EmptyInput("mel has no frames".into()));
        }
        let len = (frames - 1) * self.config.hop_size;
        let mut stft = Stft::new(self.config.framing());
        if len <= self.config.n_fft / 2 {
            // Too short for reflect padding; emit silence of the right length.
            return Ok(vec![0.0; len.max(1)]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut spectra: Vec<Vec<Complex64>> = mags
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .map(|&m| Complex64::from_polar(m, rng.random_range(0.0..std::f64::consts::TAU)))
                    .collect()
            })
            .collect();
        let mut signal = stft.inverse(&spectra, len);
        for _ in 0..self.iterations {
            let rebuilt = stft.forward(&signal);
            for (f, frame) in spectra.iter_mut().enumerate() {
                for (k, c) in frame.iter_mut().enumerate() {
                    let r = rebuilt[f][k];
                    let phase = if r.norm() > 1e-12 { r / r.norm() } else { Complex64::new(1.0, 0.0) };
                    *c = phase * mags[[f, k]];
                }
            }
            signal = stft.inverse(&spectra, len);
        }
        let peak = signal.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        if peak > 1.0 {
            signal.iter_mut().for_each(|s| *s /= peak);
        }
        Ok(signal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::compute_mel;
    use crate::eval::pitch::{extract_pitch_contour, PitchConfig};

    #[test]
    fn inverts_a_tone() {
        let cfg = MelConfig::default();
        let sr = cfg.sample_rate as f64;
        let tone: Vec<f64> = (0..11025)
            .map(|n| 0.5 * (std::f64::consts::TAU * 220.0 * n as f64 / sr).sin())
            .collect();
        let mel = compute_mel(&tone, &cfg).unwrap();
        let gl = GriffinLim::new(cfg.clone(), 32, 0).unwrap();
        let wav = gl.vocode(&mel.values).unwrap();
        assert_eq!(wav.len(), (mel.frame_count() - 1) * cfg.hop_size);
        assert!(wav.iter().all(|s| s.is_finite() && s.abs() <= 1.0));
        assert_eq!(wav, gl.vocode(&mel.values).unwrap());

        let contour = extract_pitch_contour(&wav, &PitchConfig::default()).unwrap();
        let mut voiced: Vec<f64> = contour.f0.iter().copied().filter(|f| *f > 0.0).collect();
        voiced.sort_by(f64::total_cmp);
        let median = voiced[voiced.len() / 2];
        assert!((median - 220.0).abs() < 15.0, "median {median}");
    }

    #[test]
    fn rejects_wrong_width() {
        let gl = GriffinLim::new(MelConfig::default(), 1, 0).unwrap();
        assert!(gl.vocode(&Matrix::zeros((4, 20))).is_err());
    }
}
