//! Joint training of the acoustic model and style tokens, and the resulting
//! checkpoint.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{debug, info, warn};

use crate::acoustic::{AcousticConfig, AcousticModel, LossBreakdown, VarianceTargets};
use crate::autodiff::{Adam, Ctx, GradStore, Matrix, OptimizerConfig, ParamBuilder, ParamStore, Var};
use crate::corpus::{FeatureRecord, MelConfig, PhonemeVocab};
use crate::error::{Error, Result};
use crate::style::{GstWeights, StyleConfig, StyleEmbedding, StyleNet};

/// Standardization of phoneme-level pitch and energy targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceStats {
    pub pitch_mean: f64,
    pub pitch_std: f64,
    pub energy_mean: f64,
    pub energy_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-8 { std } else { 1.0 })
}

impl VarianceStats {
    pub fn identity() -> Self {
        Self {
            pitch_mean: 0.0,
            pitch_std: 1.0,
            energy_mean: 0.0,
            energy_std: 1.0,
        }
    }

    pub fn from_records(records: &[FeatureRecord]) -> Self {
        let (pitch_mean, pitch_std) = mean_std(records.iter().flat_map(|r| r.pitch.iter().copied()));
        let (energy_mean, energy_std) = mean_std(records.iter().flat_map(|r| r.energy.iter().copied()));
        Self {
            pitch_mean,
            pitch_std,
            energy_mean,
            energy_std,
        }
    }

    pub fn targets(&self, record: &FeatureRecord) -> VarianceTargets {
        VarianceTargets {
            pitch: record.pitch.iter().map(|p| (p - self.pitch_mean) / self.pitch_std).collect(),
            energy: record.energy.iter().map(|e| (e - self.energy_mean) / self.energy_std).collect(),
            durations: record.durations.clone(),
        }
    }
}

/// Acoustic model and style network sharing one parameter store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage1Model {
    pub acoustic: AcousticModel,
    pub style: StyleNet,
}

impl Stage1Model {
    pub fn new(acoustic: AcousticConfig, style: StyleConfig, seed: u64) -> Result<(Self, ParamStore)> {
        if style.d_style != acoustic.d_model {
            return Err(Error::Dimension {
                what: "style width".into(),
                expected: acoustic.d_model,
                actual: style.d_style,
            });
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = {
            let mut pb = ParamBuilder::new(&mut store, &mut rng);
            Self {
                acoustic: AcousticModel::new(&mut pb, acoustic)?,
                style: StyleNet::new(&mut pb, style)?,
            }
        };
        Ok((model, store))
    }

    /// Reconstruction with the style taken from the target mel.
    fn teacher_forced(
        &self,
        cx: &mut Ctx<'_>,
        example: &Example,
    ) -> Result<(Var, LossBreakdown)> {
        let mel = cx.g.constant(example.mel.clone());
        let reference = self.style.encode_reference_var(cx, mel)?;
        let weights = self.style.attend_var(cx, reference);
        let style = self.style.combine_var(cx, weights);
        let out = self.acoustic.forward(cx, &example.ids, Some(style), Some(&example.targets))?;
        out.loss(&mut cx.g, &example.mel, &example.targets)
    }
}

/// A feature record resolved to model inputs.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub ids: Vec<usize>,
    pub mel: Matrix,
    pub targets: VarianceTargets,
}

/// Encodes records for training, skipping (with a warning) any that cannot
/// be used.
pub fn prepare_examples(
    records: &[FeatureRecord],
    vocab: &PhonemeVocab,
    stats: &VarianceStats,
    min_frames: usize,
) -> Vec<Example> {
    records
        .iter()
        .filter_map(|r| {
            let prepared = r.check().and_then(|_| vocab.encode(&r.phonemes)).and_then(|ids| {
                if r.mel.frame_count() < min_frames {
                    return Err(Error::ReferenceTooShort {
                        frames: r.mel.frame_count(),
                        required: min_frames,
                    });
                }
                Ok(Example {
                    id: r.id.clone(),
                    ids,
                    mel: r.mel.values.clone(),
                    targets: stats.targets(r),
                })
            });
            match prepared {
                Ok(e) => Some(e),
                Err(e) => {
                    warn!(id = %r.id, error = %e, "skipping utterance");
                    None
                }
            }
        })
        .collect()
}

/// Mean loss over examples in eval mode.
pub fn evaluate(model: &Stage1Model, params: &ParamStore, examples: &[Example]) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown::zero();
    if examples.is_empty() {
        return Ok(acc);
    }
    let k = 1.0 / examples.len() as f64;
    for ex in examples {
        let mut cx = Ctx::eval(params);
        let (_, b) = model.teacher_forced(&mut cx, ex)?;
        acc.add_scaled(&b, k);
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1TrainConfig {
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    /// Utterances per optimizer step; gradients are averaged.
    pub batch_size: usize,
    /// Validation cadence in steps.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for Stage1TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            steps: 1000,
            batch_size: 8,
            eval_every: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub train: LossBreakdown,
    pub val: Option<LossBreakdown>,
}

pub const STAGE1_SCHEMA: u32 = 1;

/// Everything inference needs from stage I.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage1Checkpoint {
    pub schema_version: u32,
    pub mel: MelConfig,
    pub vocab: PhonemeVocab,
    pub stats: VarianceStats,
    pub model: Stage1Model,
    pub params: ParamStore,
    pub step: usize,
    pub val_metrics: Option<LossBreakdown>,
}

impl Stage1Checkpoint {
    pub fn save(&self, path: &Path) -> Result<String> {
        let json = serde_json::to_vec(self).map_err(|e| Error::serde("stage-I checkpoint", e))?;
        fs::write(path, &json).map_err(|e| Error::io(path, e))?;
        Ok(hex::encode(Sha256::digest(&json)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Self = serde_json::from_slice(&bytes).map_err(|e| Error::serde("stage-I checkpoint", e))?;
        if ckpt.schema_version != STAGE1_SCHEMA {
            return Err(Error::Config(format!(
                "stage-I checkpoint schema {} (expected {STAGE1_SCHEMA})",
                ckpt.schema_version
            )));
        }
        ckpt.params.all_finite().then_some(()).ok_or_else(|| Error::Config("checkpoint has non-finite parameters".into()))?;
        Ok(ckpt)
    }

    /// SHA-256 of the checkpoint file.
    pub fn file_hash(path: &Path) -> Result<String> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn style_dim(&self) -> usize {
        self.model.acoustic.config.d_model
    }

    pub fn extract_weights(&self, mel: &Matrix) -> Result<GstWeights> {
        self.model.style.extract_weights(&self.params, mel)
    }

    pub fn combine_tokens(&self, weights: &GstWeights) -> Result<StyleEmbedding> {
        self.model.style.combine_tokens(&self.params, weights)
    }

    fn style_var(&self, cx: &mut Ctx<'_>, style: Option<&StyleEmbedding>) -> Result<Option<Var>> {
        style
            .map(|s| {
                if s.dim() != self.style_dim() {
                    return Err(Error::Dimension {
                        what: "style embedding".into(),
                        expected: self.style_dim(),
                        actual: s.dim(),
                    });
                }
                Ok(cx.g.row(&s.0))
            })
            .transpose()
    }

    /// Encoder output for phoneme ids, optionally style-conditioned.
    pub fn encode_text(&self, ids: &[usize], style: Option<&StyleEmbedding>) -> Result<Matrix> {
        let mut cx = Ctx::eval(&self.params);
        let s = self.style_var(&mut cx, style)?;
        let h = self.model.acoustic.encode(&mut cx, ids, s)?;
        Ok(cx.g.value(h).clone())
    }

    /// Inference-mode mel (`frames × n_mels`) and the durations used.
    pub fn infer_mel(&self, ids: &[usize], style: Option<&StyleEmbedding>) -> Result<(Matrix, Vec<usize>)> {
        let mut cx = Ctx::eval(&self.params);
        let s = self.style_var(&mut cx, style)?;
        let out = self.model.acoustic.forward(&mut cx, ids, s, None)?;
        Ok((cx.g.value(out.mel).clone(), out.variance.durations))
    }

    pub fn evaluate(&self, records: &[FeatureRecord]) -> Result<LossBreakdown> {
        let examples = prepare_examples(records, &self.vocab, &self.stats, self.model.style.config.min_reference_frames());
        evaluate(&self.model, &self.params, &examples)
    }
}

#[derive(Debug, Clone)]
pub struct Stage1Outcome {
    /// Parameters with the best validation loss.
    pub checkpoint: Stage1Checkpoint,
    /// Loss of the untrained model on the training set.
    pub initial_train: LossBreakdown,
    pub history: Vec<StepLog>,
}

impl Stage1Outcome {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,lr,train_total,train_mel_l1,train_duration,train_pitch,train_energy,val_total,val_mel_l1\n");
        for l in &self.history {
            let (vt, vm) = l.val.map(|v| (v.total.to_string(), v.mel_l1.to_string())).unwrap_or_default();
            s.push_str(&format!(
                "{},{:.6e},{:.6},{:.6},{:.6},{:.6},{:.6},{vt},{vm}\n",
                l.step, l.lr, l.train.total, l.train.mel_l1, l.train.duration_mse, l.train.pitch_mse, l.train.energy_mse
            ));
        }
        s
    }
}

pub struct Stage1Data<'a> {
    pub train: &'a [FeatureRecord],
    pub val: &'a [FeatureRecord],
    pub vocab: &'a PhonemeVocab,
    pub mel: &'a MelConfig,
}

/// Joint stage-I training. The style of each utterance comes from its own
/// mel; the best checkpoint on validation (or training, without a validation
/// set) is kept.
pub fn train_stage1(
    data: Stage1Data<'_>,
    acoustic: AcousticConfig,
    style: StyleConfig,
    config: &Stage1TrainConfig,
) -> Result<Stage1Outcome> {
    config.optimizer.validate()?;
    if config.batch_size == 0 || config.eval_every == 0 {
        return Err(Error::Config("batch_size and eval_every must be positive".into()));
    }
    let stats = VarianceStats::from_records(data.train);
    let (model, mut params) = Stage1Model::new(acoustic, style, config.seed)?;
    let min_frames = model.style.config.min_reference_frames();
    let train = prepare_examples(data.train, data.vocab, &stats, min_frames);
    let val = prepare_examples(data.val, data.vocab, &stats, min_frames);
    if train.is_empty() {
        return Err(Error::EmptyInput("no usable training utterances".into()));
    }
    let selection = if val.is_empty() { &train } else { &val };

    let initial_train = evaluate(&model, &params, &train)?;
    info!(mel_l1 = initial_train.mel_l1, total = initial_train.total, "untrained baseline");
    let mut best = (evaluate(&model, &params, selection)?, params.clone(), 0usize);

    let mut adam = Adam::new(config.optimizer.clone(), &params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x57a9e1);
    let mut order: Vec<usize> = Vec::new();
    let mut history = Vec::new();

    for step in 1..=config.steps {
        let mut grads = GradStore::zeros_like(&params);
        let mut breakdown = LossBreakdown::zero();
        let k = 1.0 / config.batch_size.min(train.len()) as f64;
        for b in 0..config.batch_size.min(train.len()) {
            if order.is_empty() {
                order = (0..train.len()).collect();
                order.shuffle(&mut rng);
            }
            let ex = &train[order.pop().expect("refilled")];
            let mut cx = Ctx::train(&params, config.seed ^ ((step as u64) << 16) ^ b as u64);
            let (loss, parts) = model.teacher_forced(&mut cx, ex)?;
            if !parts.total.is_finite() {
                return Err(Error::Diverged {
                    step,
                    message: format!("non-finite loss on '{}': {parts:?}", ex.id),
                });
            }
            let g = cx.g.backward(loss);
            grads.accumulate(&cx.g, &g);
            breakdown.add_scaled(&parts, k);
        }
        grads.scale(k);
        if !grads.all_finite() {
            return Err(Error::Diverged {
                step,
                message: "non-finite gradient".into(),
            });
        }
        let lr = adam.step(&mut params, &grads);
        let val_loss = if step % config.eval_every == 0 || step == config.steps {
            let v = evaluate(&model, &params, selection)?;
            if v.total < best.0.total {
                best = (v, params.clone(), step);
            }
            debug!(step, val = v.total, "validation");
            Some(v)
        } else {
            None
        };
        history.push(StepLog {
            step,
            lr,
            train: breakdown,
            val: val_loss,
        });
    }
    info!(best_step = best.2, val = best.0.total, "stage I finished");
    let checkpoint = Stage1Checkpoint {
        schema_version: STAGE1_SCHEMA,
        mel: data.mel.clone(),
        vocab: data.vocab.clone(),
        stats,
        model,
        params: best.1,
        step: best.2,
        val_metrics: Some(best.0),
    };
    Ok(Stage1Outcome {
        checkpoint,
        initial_train,
        history,
    })
}

/// Mel matrix with one row per frame, for quick synthetic fixtures.
pub fn constant_mel(frames: usize, n_mels: usize, value: f64) -> Matrix {
    Array2::from_elem((frames, n_mels), value)
}
