//! Non-autoregressive acoustic model: phoneme encoder, variance adaptor with
//! length regulation, and mel decoder.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{sinusoidal_positions, Conv1d, Embedding, FftBlock, LayerNorm, Linear};
use crate::autodiff::{Ctx, Graph, Matrix, ParamBuilder, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_dim: usize,
    pub ffn_kernel: usize,
    pub predictor_dim: usize,
    pub predictor_kernel: usize,
    pub dropout: f64,
    pub predictor_dropout: f64,
    pub n_mels: usize,
    /// Lower bound on predicted phoneme durations at inference, in frames.
    pub min_duration: usize,
}

impl AcousticConfig {
    /// Full-size backbone.
    pub fn base(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 256,
            heads: 2,
            encoder_layers: 4,
            decoder_layers: 4,
            ffn_dim: 1024,
            ffn_kernel: 9,
            predictor_dim: 256,
            predictor_kernel: 3,
            dropout: 0.1,
            predictor_dropout: 0.5,
            n_mels: 80,
            min_duration: 1,
        }
    }

    /// Desk-scale preset: 2 + 2 layers, width 32.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 32,
            heads: 2,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_dim: 64,
            ffn_kernel: 3,
            predictor_dim: 32,
            predictor_kernel: 3,
            dropout: 0.0,
            predictor_dropout: 0.0,
            n_mels: 80,
            min_duration: 1,
        }
    }

    /// Smallest useful model, for gradient checks.
    pub fn tiny(vocab_size: usize, d_model: usize) -> Self {
        Self {
            d_model,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            ffn_dim: 2 * d_model,
            predictor_dim: d_model,
            ..Self::toy(vocab_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.vocab_size == 0 || self.d_model == 0 || self.n_mels == 0 {
            return Err(Error::Config("vocab_size, d_model and n_mels must be positive".into()));
        }
        if self.ffn_kernel % 2 == 0 || self.predictor_kernel % 2 == 0 {
            return Err(Error::Config("convolution kernels must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.predictor_dropout) {
            return Err(Error::Config("dropout rates must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Phoneme-level variance targets. Pitch and energy are in the model's
/// normalized units; durations are frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceTargets {
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
    pub durations: Vec<usize>,
}

impl VarianceTargets {
    pub fn len(&self) -> usize {
        self.durations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.durations.is_empty()
    }

    pub fn check(&self, phonemes: usize) -> Result<()> {
        if self.pitch.len() != phonemes || self.energy.len() != phonemes || self.durations.len() != phonemes {
            return Err(Error::Shape(format!(
                "variance targets (pitch {}, energy {}, durations {}) vs {} phonemes",
                self.pitch.len(),
                self.energy.len(),
                self.durations.len(),
                phonemes
            )));
        }
        Ok(())
    }

    /// Log-domain duration target, `ln(d + 1)`.
    pub fn log_durations(&self) -> Vec<f64> {
        self.durations.iter().map(|&d| (d as f64 + 1.0).ln()).collect()
    }
}

/// Row indices that repeat row `i` `durations[i]` times, in order.
pub fn expand_indices(durations: &[i64]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, &d) in durations.iter().enumerate() {
        if d < 0 {
            return Err(Error::NegativeDuration { index: i, value: d });
        }
        out.extend(std::iter::repeat_n(i, d as usize));
    }
    Ok(out)
}

/// Expands phoneme-level rows to frame level.
pub fn length_regulate(g: &mut Graph, hidden: Var, durations: &[i64]) -> Result<Var> {
    let (rows, _) = g.shape(hidden);
    if durations.len() != rows {
        return Err(Error::Shape(format!("{} durations for {} phonemes", durations.len(), rows)));
    }
    let idx = expand_indices(durations)?;
    Ok(g.index_rows(hidden, idx))
}

/// Matrix form of [`length_regulate`].
pub fn length_regulate_matrix(hidden: &Matrix, durations: &[i64]) -> Result<Matrix> {
    let mut g = Graph::new();
    let h = g.constant(hidden.clone());
    let out = length_regulate(&mut g, h, durations)?;
    Ok(g.value(out).clone())
}

fn to_signed(d: &[usize]) -> Vec<i64> {
    d.iter().map(|&v| v as i64).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariancePredictor {
    conv1: Conv1d,
    norm1: LayerNorm,
    conv2: Conv1d,
    norm2: LayerNorm,
    out: Linear,
    dropout: f64,
}

impl VariancePredictor {
    fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, name: &str, cfg: &AcousticConfig) -> Self {
        pb.scoped(name, |pb| Self {
            conv1: Conv1d::same(pb, "conv1", cfg.d_model, cfg.predictor_dim, cfg.predictor_kernel),
            norm1: LayerNorm::new(pb, "norm1", cfg.predictor_dim),
            conv2: Conv1d::same(pb, "conv2", cfg.predictor_dim, cfg.predictor_dim, cfg.predictor_kernel),
            norm2: LayerNorm::new(pb, "norm2", cfg.predictor_dim),
            out: Linear::new(pb, "out", cfg.predictor_dim, 1, true),
            dropout: cfg.predictor_dropout,
        })
    }

    /// `n × d_model → n × 1`.
    fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Var {
        let h = self.conv1.forward(cx, x);
        let h = cx.g.relu(h);
        let h = self.norm1.forward(cx, h);
        let h = cx.dropout(h, self.dropout);
        let h = self.conv2.forward(cx, h);
        let h = cx.g.relu(h);
        let h = self.norm2.forward(cx, h);
        let h = cx.dropout(h, self.dropout);
        self.out.forward(cx, h)
    }
}

/// Output of the variance adaptor.
#[derive(Debug, Clone)]
pub struct VarianceOutput {
    /// Frame-level hidden sequence (`frames × d_model`).
    pub frames: Var,
    /// Predicted `ln(d + 1)` per phoneme (`n × 1`).
    pub log_duration: Var,
    pub pitch: Var,
    pub energy: Var,
    /// Durations actually used for length regulation.
    pub durations: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AcousticOutput {
    pub mel: Var,
    pub variance: VarianceOutput,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcousticModel {
    pub config: AcousticConfig,
    embedding: Embedding,
    encoder: Vec<FftBlock>,
    duration: VariancePredictor,
    pitch: VariancePredictor,
    energy: VariancePredictor,
    pitch_embed: Linear,
    energy_embed: Linear,
    decoder: Vec<FftBlock>,
    mel_out: Linear,
}

impl AcousticModel {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, config: AcousticConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let model = pb.scoped("acoustic", |pb| Self {
            embedding: Embedding::new(pb, "embedding", c.vocab_size, c.d_model),
            encoder: (0..c.encoder_layers)
                .map(|i| FftBlock::new(pb, &format!("encoder.{i}"), c.d_model, c.heads, c.ffn_dim, c.ffn_kernel, c.dropout))
                .collect(),
            duration: VariancePredictor::new(pb, "duration", c),
            pitch: VariancePredictor::new(pb, "pitch", c),
            energy: VariancePredictor::new(pb, "energy", c),
            pitch_embed: Linear::new(pb, "pitch_embed", 1, c.d_model, true),
            energy_embed: Linear::new(pb, "energy_embed", 1, c.d_model, true),
            decoder: (0..c.decoder_layers)
                .map(|i| FftBlock::new(pb, &format!("decoder.{i}"), c.d_model, c.heads, c.ffn_dim, c.ffn_kernel, c.dropout))
                .collect(),
            mel_out: Linear::new(pb, "mel_out", c.d_model, c.n_mels, true),
            config: config.clone(),
        });
        Ok(model)
    }

    /// Phoneme ids to hidden sequence. A style row (`1 × d_model`) is added to
    /// every phoneme embedding before the encoder stack.
    pub fn encode(&self, cx: &mut Ctx<'_>, phoneme_ids: &[usize], style: Option<Var>) -> Result<Var> {
        if phoneme_ids.is_empty() {
            return Err(Error::EmptyInput("no phonemes to encode".into()));
        }
        if let Some(&bad) = phoneme_ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::OutOfVocabulary {
                id: bad,
                vocab_size: self.config.vocab_size,
            });
        }
        let mut x = self.embedding.forward(cx, phoneme_ids);
        if let Some(s) = style {
            if cx.g.shape(s) != (1, self.config.d_model) {
                return Err(Error::Dimension {
                    what: "style embedding".into(),
                    expected: self.config.d_model,
                    actual: cx.g.shape(s).1,
                });
            }
            x = cx.g.add_row(x, s);
        }
        let pos = cx.g.constant(sinusoidal_positions(phoneme_ids.len(), self.config.d_model));
        let mut h = cx.g.add(x, pos);
        for block in &self.encoder {
            h = block.forward(cx, h);
        }
        Ok(h)
    }

    /// With targets: ground-truth durations drive length regulation and
    /// ground-truth pitch/energy are embedded. Without: predictions are used,
    /// durations as `max(round(exp(p) - 1), min_duration)`.
    pub fn variance_adapt(
        &self,
        cx: &mut Ctx<'_>,
        hidden: Var,
        targets: Option<&VarianceTargets>,
    ) -> Result<VarianceOutput> {
        let (n, _) = cx.g.shape(hidden);
        if let Some(t) = targets {
            t.check(n)?;
        }
        let log_duration = self.duration.forward(cx, hidden);
        let pitch = self.pitch.forward(cx, hidden);
        let pitch_in = match targets {
            Some(t) => cx.g.constant(column(&t.pitch)),
            None => pitch,
        };
        let pe = self.pitch_embed.forward(cx, pitch_in);
        let h = cx.g.add(hidden, pe);

        let energy = self.energy.forward(cx, h);
        let energy_in = match targets {
            Some(t) => cx.g.constant(column(&t.energy)),
            None => energy,
        };
        let ee = self.energy_embed.forward(cx, energy_in);
        let h = cx.g.add(h, ee);

        let durations = match targets {
            Some(t) => t.durations.clone(),
            None => {
                let min = self.config.min_duration;
                cx.g.value(log_duration)
                    .iter()
                    .map(|&p| {
                        let d = (p.exp() - 1.0).round();
                        if d.is_finite() && d > min as f64 {
                            d as usize
                        } else {
                            min
                        }
                    })
                    .collect()
            }
        };
        let frames = length_regulate(&mut cx.g, h, &to_signed(&durations))?;
        Ok(VarianceOutput {
            frames,
            log_duration,
            pitch,
            energy,
            durations,
        })
    }

    /// Frame-level hidden to `frames × n_mels`.
    pub fn decode(&self, cx: &mut Ctx<'_>, frames: Var) -> Result<Var> {
        let (t, _) = cx.g.shape(frames);
        if t == 0 {
            return Err(Error::EmptyInput("decoder input has no frames".into()));
        }
        let pos = cx.g.constant(sinusoidal_positions(t, self.config.d_model));
        let mut h = cx.g.add(frames, pos);
        for block in &self.decoder {
            h = block.forward(cx, h);
        }
        Ok(self.mel_out.forward(cx, h))
    }

    pub fn forward(
        &self,
        cx: &mut Ctx<'_>,
        phoneme_ids: &[usize],
        style: Option<Var>,
        targets: Option<&VarianceTargets>,
    ) -> Result<AcousticOutput> {
        let hidden = self.encode(cx, phoneme_ids, style)?;
        let variance = self.variance_adapt(cx, hidden, targets)?;
        let mel = self.decode(cx, variance.frames)?;
        Ok(AcousticOutput { mel, variance })
    }
}

fn column(values: &[f64]) -> Matrix {
    Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column shape")
}

/// Named stage-I loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mel_l1: f64,
    pub duration_mse: f64,
    pub pitch_mse: f64,
    pub energy_mse: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn zero() -> Self {
        Self {
            mel_l1: 0.0,
            duration_mse: 0.0,
            pitch_mse: 0.0,
            energy_mse: 0.0,
            total: 0.0,
        }
    }

    pub fn add_scaled(&mut self, other: &LossBreakdown, k: f64) {
        self.mel_l1 += k * other.mel_l1;
        self.duration_mse += k * other.duration_mse;
        self.pitch_mse += k * other.pitch_mse;
        self.energy_mse += k * other.energy_mse;
        self.total += k * other.total;
    }
}

/// `L1(mel) + MSE(log-duration) + MSE(pitch) + MSE(energy)`.
///
/// `predicted_log_duration`, `predicted_pitch` and `predicted_energy` are
/// `n × 1`. Returns the differentiable total and the breakdown.
pub fn stage1_loss(
    g: &mut Graph,
    predicted_mel: Var,
    predicted_log_duration: Var,
    predicted_pitch: Var,
    predicted_energy: Var,
    target_mel: &Matrix,
    targets: &VarianceTargets,
) -> Result<(Var, LossBreakdown)> {
    if g.shape(predicted_mel) != target_mel.dim() {
        return Err(Error::Shape(format!(
            "predicted mel {:?} vs target {:?}",
            g.shape(predicted_mel),
            target_mel.dim()
        )));
    }
    let n = targets.len();
    for (name, v) in [
        ("log-duration", predicted_log_duration),
        ("pitch", predicted_pitch),
        ("energy", predicted_energy),
    ] {
        if g.shape(v) != (n, 1) {
            return Err(Error::Shape(format!("predicted {name} {:?} vs {n} phonemes", g.shape(v))));
        }
    }
    let tm = g.constant(target_mel.clone());
    let diff = g.sub(predicted_mel, tm);
    let ad = g.abs(diff);
    let mel_l1 = g.mean_all(ad);

    let mse = |g: &mut Graph, pred: Var, target: Vec<f64>| {
        let t = g.constant(column(&target));
        let d = g.sub(pred, t);
        let sq = g.square(d);
        g.mean_all(sq)
    };
    let dur = mse(g, predicted_log_duration, targets.log_durations());
    let pitch = mse(g, predicted_pitch, targets.pitch.clone());
    let energy = mse(g, predicted_energy, targets.energy.clone());

    let a = g.add(mel_l1, dur);
    let b = g.add(pitch, energy);
    let total = g.add(a, b);
    let breakdown = LossBreakdown {
        mel_l1: g.scalar(mel_l1),
        duration_mse: g.scalar(dur),
        pitch_mse: g.scalar(pitch),
        energy_mse: g.scalar(energy),
        total: g.scalar(total),
    };
    Ok((total, breakdown))
}

impl AcousticOutput {
    pub fn loss(&self, g: &mut Graph, target_mel: &Matrix, targets: &VarianceTargets) -> Result<(Var, LossBreakdown)> {
        stage1_loss(
            g,
            self.mel,
            self.variance.log_duration,
            self.variance.pitch,
            self.variance.energy,
            target_mel,
            targets,
        )
    }
}
