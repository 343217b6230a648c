//! Frame-wise F0 by normalized autocorrelation.

use serde::{Deserialize, Serialize};

use crate::audio::SAMPLE_RATE;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PitchConfig {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Minimum normalized autocorrelation peak for a frame to count as voiced.
    pub voicing_threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            window_ms: 25.0,
            hop: 256,
            fmin: 60.0,
            fmax: 400.0,
            voicing_threshold: 0.3,
        }
    }
}

impl PitchConfig {
    pub fn window_len(&self) -> usize {
        (self.window_ms * 1e-3 * self.sample_rate as f64).round() as usize
    }

    fn lag_range(&self) -> (usize, usize) {
        let sr = self.sample_rate as f64;
        ((sr / self.fmax).floor() as usize, (sr / self.fmin).ceil() as usize)
    }
}

/// F0 per frame in Hz, 0 for unvoiced frames. Frame `i` is centered on
/// sample `i * hop`, matching the mel front end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchContour {
    pub times: Vec<f64>,
    pub f0: Vec<f64>,
}

impl PitchContour {
    pub fn voiced(&self) -> impl Iterator<Item = f64> + '_ {
        self.f0.iter().copied().filter(|&f| f > 0.0)
    }

    pub fn median_voiced(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.voiced().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        Some(if v.len() % 2 == 0 { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] })
    }

    /// Writes `time_s,f0_hz` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_s,f0_hz\n");
        for (t, f) in self.times.iter().zip(self.f0.iter()) {
            s.push_str(&format!("{t:.6},{f:.3}\n"));
        }
        s
    }
}

pub fn extract_pitch_contour(waveform: &[f64], config: &PitchConfig) -> Result<PitchContour> {
    let win = config.window_len();
    if waveform.len() < win {
        return Err(Error::AudioTooShort {
            samples: waveform.len(),
            required: win,
        });
    }
    let (min_lag, max_lag) = config.lag_range();
    let half = win / 2;
    let mut padded = vec![0.0; half];
    padded.extend_from_slice(waveform);
    padded.resize(padded.len() + win + max_lag + 1, 0.0);

    let frames = 1 + waveform.len() / config.hop;
    let sr = config.sample_rate as f64;
    let mut f0 = Vec::with_capacity(frames);
    let mut times = Vec::with_capacity(frames);
    let mut corr = vec![0.0; max_lag + 2];

    for i in 0..frames {
        times.push((i * config.hop) as f64 / sr);
        let seg = &padded[i * config.hop..i * config.hop + win + max_lag + 1];
        let mean = seg[..win].iter().sum::<f64>() / win as f64;
        let x: Vec<f64> = seg.iter().map(|v| v - mean).collect();
        let e0: f64 = x[..win].iter().map(|v| v * v).sum();
        if e0 < 1e-10 {
            f0.push(0.0);
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        for lag in min_lag.saturating_sub(1)..=max_lag + 1 {
            let mut num = 0.0;
            let mut el = 0.0;
            for n in 0..win {
                num += x[n] * x[n + lag];
                el += x[n + lag] * x[n + lag];
            }
            corr[lag] = if el > 1e-12 { num / (e0 * el).sqrt() } else { 0.0 };
            if (min_lag..=max_lag).contains(&lag) {
                best = best.max(corr[lag]);
            }
        }
        if best < config.voicing_threshold {
            f0.push(0.0);
            continue;
        }
        // shortest lag with a local peak close to the global one avoids octave-down errors
        let lag = (min_lag..=max_lag)
            .find(|&l| corr[l] >= 0.9 * best && corr[l] >= corr[l - 1] && corr[l] >= corr[l + 1])
            .unwrap_or(min_lag);
        let (a, b, c) = (corr[lag - 1], corr[lag], corr[lag + 1]);
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > 1e-12 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
        f0.push(sr / (lag as f64 + shift));
    }
    Ok(PitchContour { times, f0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, secs: f64) -> Vec<f64> {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        (0..n)
            .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
            .collect()
    }

    #[test]
    fn sine_220_is_tracked() {
        let c = extract_pitch_contour(&tone(220.0, 1.0), &PitchConfig::default()).unwrap();
        let med = c.median_voiced().unwrap();
        assert!((med - 220.0).abs() < 5.0, "median {med}");
    }

    #[test]
    fn other_tones_are_tracked() {
        for f in [80.0, 150.0, 330.0] {
            let c = extract_pitch_contour(&tone(f, 0.5), &PitchConfig::default()).unwrap();
            assert!((c.median_voiced().unwrap() - f).abs() < f * 0.02);
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let c = extract_pitch_contour(&vec![0.0; 22050], &PitchConfig::default()).unwrap();
        assert!(c.f0.iter().all(|&f| f == 0.0));
        assert!(c.median_voiced().is_none());
    }

    #[test]
    fn frame_count_follows_hop() {
        let cfg = PitchConfig::default();
        let c = extract_pitch_contour(&vec![0.0; 10_000], &cfg).unwrap();
        assert_eq!(c.f0.len(), 1 + 10_000 / 256);
        assert!(c.times.windows(2).all(|w| w[1] > w[0]));
        assert!((c.times[1] - 256.0 / 22050.0).abs() < 1e-12);
    }

    #[test]
    fn short_input_is_rejected() {
        assert!(extract_pitch_contour(&[0.0; 100], &PitchConfig::default()).is_err());
    }
}
