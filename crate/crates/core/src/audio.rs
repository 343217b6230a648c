//! Waveform I/O, resampling and short-time Fourier analysis.

use std::f64::consts::PI;
use std::path::Path;

use rubato::{FftFixedIn, Resampler};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 22050;

/// Reads a WAV file as mono `f64` samples in [-1, 1], resampled to `target_rate`.
pub fn read_wav(path: &Path, target_rate: u32) -> Result<Vec<f64>> {
    let audio_err = |message: String| Error::Audio {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => audio_err(other.to_string()),
    })?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| audio_err(e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| audio_err(e.to_string()))?
        }
    };
    let mono: Vec<f64> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    if spec.sample_rate == target_rate {
        Ok(mono)
    } else {
        resample(&mono, spec.sample_rate, target_rate).map_err(|m| audio_err(m))
    }
}

/// Writes mono 16-bit PCM.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Audio {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
        writer.write_sample(v).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

/// Band-limited resampling; output length is `ceil(len * to / from)`.
pub fn resample(samples: &[f64], from: u32, to: u32) -> std::result::Result<Vec<f64>, String> {
    if samples.is_empty() || from == to {
        return Ok(samples.to_vec());
    }
    let expected = (samples.len() as u64 * to as u64).div_ceil(from as u64) as usize;
    let chunk = 1024;
    let mut rs = FftFixedIn::<f64>::new(from as usize, to as usize, chunk, 2, 1).map_err(|e| e.to_string())?;
    let delay = rs.output_delay();
    let mut out: Vec<f64> = Vec::with_capacity(expected + delay + chunk);
    let mut pos = 0;
    while pos + rs.input_frames_next() <= samples.len() {
        let n = rs.input_frames_next();
        let block = rs.process(&[&samples[pos..pos + n]], None).map_err(|e| e.to_string())?;
        out.extend_from_slice(&block[0]);
        pos += n;
    }
    if pos < samples.len() {
        let block = rs
            .process_partial(Some(&[&samples[pos..]]), None)
            .map_err(|e| e.to_string())?;
        out.extend_from_slice(&block[0]);
    }
    while out.len() < expected + delay {
        let block = rs.process_partial::<&[f64]>(None, None).map_err(|e| e.to_string())?;
        if block[0].is_empty() {
            break;
        }
        out.extend_from_slice(&block[0]);
    }
    out.resize(expected + delay, 0.0);
    Ok(out[delay..delay + expected].to_vec())
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Reflect-pads by `pad` samples on both sides (edge sample not repeated).
pub fn reflect_pad(samples: &[f64], pad: usize) -> Vec<f64> {
    assert!(samples.len() > pad, "reflect padding needs len > pad");
    let mut out = Vec::with_capacity(samples.len() + 2 * pad);
    out.extend((1..=pad).rev().map(|i| samples[i]));
    out.extend_from_slice(samples);
    let n = samples.len();
    out.extend((0..pad).map(|i| samples[n - 2 - i]));
    out
}

/// Center-padded framing parameters shared by the mel front end, the
/// pitch extractor and the spectral-inversion vocoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Framing {
    pub n_fft: usize,
    pub win_length: usize,
    pub hop: usize,
}

impl Framing {
    /// Frame count of a center-padded analysis: `1 + len / hop`.
    pub fn frame_count(&self, len: usize) -> usize {
        1 + len / self.hop
    }
}

/// Short-time Fourier transform plan.
pub struct Stft {
    framing: Framing,
    window: Vec<f64>,
    planner: FftPlanner<f64>,
}

impl Stft {
    pub fn new(framing: Framing) -> Self {
        assert!(framing.win_length <= framing.n_fft);
        let mut window = vec![0.0; framing.n_fft];
        let offset = (framing.n_fft - framing.win_length) / 2;
        for (i, w) in hann_window(framing.win_length).into_iter().enumerate() {
            window[offset + i] = w;
        }
        Self {
            framing,
            window,
            planner: FftPlanner::new(),
        }
    }

    pub fn framing(&self) -> Framing {
        self.framing
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Complex spectra (`frames × (n_fft/2 + 1)`) of a reflect-padded signal.
    pub fn forward(&mut self, samples: &[f64]) -> Vec<Vec<Complex64>> {
        let n_fft = self.framing.n_fft;
        let padded = reflect_pad(samples, n_fft / 2);
        let frames = self.framing.frame_count(samples.len());
        let fft = self.planner.plan_fft_forward(n_fft);
        let bins = n_fft / 2 + 1;
        (0..frames)
            .map(|f| {
                let start = f * self.framing.hop;
                let mut buf: Vec<Complex64> = padded[start..start + n_fft]
                    .iter()
                    .zip(self.window.iter())
                    .map(|(x, w)| Complex64::new(x * w, 0.0))
                    .collect();
                fft.process(&mut buf);
                buf.truncate(bins);
                buf
            })
            .collect()
    }

    /// Inverse STFT by windowed overlap-add, trimmed to `len` samples.
    pub fn inverse(&mut self, spectra: &[Vec<Complex64>], len: usize) -> Vec<f64> {
        let n_fft = self.framing.n_fft;
        let hop = self.framing.hop;
        let ifft = self.planner.plan_fft_inverse(n_fft);
        let total = n_fft + hop * spectra.len().saturating_sub(1);
        let mut out = vec![0.0; total];
        let mut norm = vec![0.0; total];
        for (f, half) in spectra.iter().enumerate() {
            let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
            buf[..half.len()].copy_from_slice(half);
            for k in 1..n_fft - half.len() + 1 {
                buf[n_fft - k] = half[k].conj();
            }
            ifft.process(&mut buf);
            let start = f * hop;
            for i in 0..n_fft {
                out[start + i] += buf[i].re / n_fft as f64 * self.window[i];
                norm[start + i] += self.window[i] * self.window[i];
            }
        }
        let pad = n_fft / 2;
        (0..len)
            .map(|i| {
                let j = i + pad;
                if j < total && norm[j] > 1e-8 {
                    out[j] / norm[j]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| 0.5 * (2.0 * PI * freq * n as f64 / SAMPLE_RATE as f64).sin())
            .collect()
    }

    #[test]
    fn reflect_pad_mirrors_edges() {
        assert_eq!(reflect_pad(&[1.0, 2.0, 3.0, 4.0], 2), vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]);
    }

    #[test]
    fn stft_round_trip_reconstructs_signal() {
        let framing = Framing {
            n_fft: 1024,
            win_length: 1024,
            hop: 256,
        };
        let mut stft = Stft::new(framing);
        let x = tone(440.0, 5000);
        let spec = stft.forward(&x);
        assert_eq!(spec.len(), framing.frame_count(x.len()));
        let y = stft.inverse(&spec, x.len());
        let err = x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "max error {err}");
    }

    #[test]
    fn wav_round_trip_and_resample() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let x = tone(220.0, 16000);
        write_wav(&path, &x, 16000).unwrap();
        let y = read_wav(&path, 16000).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(x.iter().zip(y.iter()).all(|(a, b)| (a - b).abs() < 1e-4));

        let z = read_wav(&path, SAMPLE_RATE).unwrap();
        assert_eq!(z.len(), (16000u64 * 22050).div_ceil(16000) as usize);
        // energy of the tone survives resampling
        let rms = |v: &[f64]| (v.iter().map(|s| s * s).sum::<f64>() / v.len() as f64).sqrt();
        assert!((rms(&z[1000..20000]) - rms(&x)).abs() < 0.02);
    }

    #[test]
    fn missing_wav_is_io_error() {
        let err = read_wav(Path::new("/nonexistent/a.wav"), SAMPLE_RATE).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
