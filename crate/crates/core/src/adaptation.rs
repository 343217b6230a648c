//! Stage-II adaptation network: text emotion embedding → GST weights.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::autodiff::nn::Linear;
use crate::autodiff::{Adam, Ctx, GradStore, Graph, Matrix, OptimizerConfig, ParamBuilder, ParamStore, Var};
use crate::emotion::EmotionTextEmbedding;
use crate::error::{Error, Result};
use crate::style::GstWeights;

/// Layer widths as published, input first.
pub const PUBLISHED_LAYER_SIZES: [usize; 10] = [772, 600, 500, 400, 300, 200, 100, 50, 40, 16];

const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationConfig {
    /// Input width followed by hidden and output widths. The input entry is
    /// replaced by the provider's embedding width unless overridden.
    pub layer_sizes: Vec<usize>,
    pub input_dim_override: Option<usize>,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            layer_sizes: PUBLISHED_LAYER_SIZES.to_vec(),
            input_dim_override: None,
        }
    }
}

impl AdaptationConfig {
    pub fn resolved_sizes(&self, embedding_dim: usize) -> Result<Vec<usize>> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::Config("layer_sizes needs an input and an output, all positive".into()));
        }
        let mut sizes = self.layer_sizes.clone();
        sizes[0] = self.input_dim_override.unwrap_or(embedding_dim);
        if sizes[0] == 0 {
            return Err(Error::Config("adaptation input width must be positive".into()));
        }
        Ok(sizes)
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap_or(&0)
    }
}

/// `−Σ t · ln(p + 1e-12)`.
pub fn ce_soft_loss(predicted: &GstWeights, target: &GstWeights) -> f64 {
    -predicted
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| t * (p + LOG_EPS).ln())
        .sum::<f64>()
}

pub fn entropy(p: &GstWeights) -> f64 {
    ce_soft_loss(p, p)
}

/// Mean soft cross-entropy of row-wise logits against target rows, through
/// log-softmax.
pub fn soft_ce_from_logits(g: &mut Graph, logits: Var, targets: &Matrix) -> Var {
    let logp = g.log_softmax_rows(logits);
    let t = g.constant(targets.clone());
    let prod = g.mul(logp, t);
    let s = g.sum_all(prod);
    g.scale(s, -1.0 / targets.nrows() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptationNet {
    pub config: AdaptationConfig,
    pub sizes: Vec<usize>,
    layers: Vec<Linear>,
    pub params: ParamStore,
}

impl AdaptationNet {
    pub fn new(config: AdaptationConfig, embedding_dim: usize, seed: u64) -> Result<Self> {
        let sizes = config.resolved_sizes(embedding_dim)?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = {
            let mut pb = ParamBuilder::new(&mut params, &mut rng);
            sizes
                .windows(2)
                .enumerate()
                .map(|(i, w)| Linear::he(&mut pb, &format!("adapt.fc{i}"), w[0], w[1]))
                .collect()
        };
        Ok(Self {
            config,
            sizes,
            layers,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    /// `batch × input` → `batch × output` logits.
    pub fn logits(&self, cx: &mut Ctx<'_>, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(cx, h);
            if i + 1 < self.layers.len() {
                h = cx.g.relu(h);
            }
        }
        h
    }

    fn check_dim(&self, e: &EmotionTextEmbedding) -> Result<()> {
        if e.dim() != self.input_dim() {
            return Err(Error::Dimension {
                what: "emotion embedding".into(),
                expected: self.input_dim(),
                actual: e.dim(),
            });
        }
        Ok(())
    }

    fn stack(&self, embeddings: &[&EmotionTextEmbedding]) -> Result<Matrix> {
        for e in embeddings {
            self.check_dim(e)?;
        }
        let flat: Vec<f64> = embeddings.iter().flat_map(|e| e.0.iter().copied()).collect();
        Ok(Array2::from_shape_vec((embeddings.len(), self.input_dim()), flat).expect("checked widths"))
    }

    pub fn predict_weights(&self, embedding: &EmotionTextEmbedding) -> Result<GstWeights> {
        Ok(self.predict_batch(&[embedding])?.remove(0))
    }

    pub fn predict_batch(&self, embeddings: &[&EmotionTextEmbedding]) -> Result<Vec<GstWeights>> {
        if embeddings.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.stack(embeddings)?;
        let mut cx = Ctx::eval(&self.params);
        let xv = cx.g.constant(x);
        let logits = self.logits(&mut cx, xv);
        let p = cx.g.softmax_rows(logits);
        cx.g.value(p)
            .rows()
            .into_iter()
            .map(|r| GstWeights::normalized(r.to_vec()))
            .collect()
    }

    /// Mean soft cross-entropy and its gradient over a set of pairs.
    pub fn loss_and_grad(&self, params: &ParamStore, pairs: &[&WeightPair]) -> Result<(f64, GradStore)> {
        let x = self.stack(&pairs.iter().map(|p| &p.embedding).collect::<Vec<_>>())?;
        let t = targets_matrix(pairs, self.output_dim())?;
        let mut cx = Ctx::eval(params);
        let xv = cx.g.constant(x);
        let logits = self.logits(&mut cx, xv);
        let loss = soft_ce_from_logits(&mut cx.g, logits, &t);
        let grads = cx.g.backward(loss);
        let mut gs = GradStore::zeros_like(params);
        gs.accumulate(&cx.g, &grads);
        Ok((cx.g.scalar(loss), gs))
    }

    pub fn mean_loss(&self, pairs: &[&WeightPair]) -> Result<f64> {
        if pairs.is_empty() {
            return Ok(f64::NAN);
        }
        let preds = self.predict_batch(&pairs.iter().map(|p| &p.embedding).collect::<Vec<_>>())?;
        Ok(preds.iter().zip(pairs).map(|(p, pair)| ce_soft_loss(p, &pair.target)).sum::<f64>() / pairs.len() as f64)
    }
}

fn targets_matrix(pairs: &[&WeightPair], width: usize) -> Result<Matrix> {
    let mut t = Array2::zeros((pairs.len(), width));
    for (i, p) in pairs.iter().enumerate() {
        if p.target.len() != width {
            return Err(Error::Dimension {
                what: format!("target weights of '{}'", p.id),
                expected: width,
                actual: p.target.len(),
            });
        }
        for (j, v) in p.target.as_slice().iter().enumerate() {
            t[[i, j]] = *v;
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPair {
    pub id: String,
    pub embedding: EmotionTextEmbedding,
    pub target: GstWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationTrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for AdaptationTrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::constant(1e-3),
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen.
    pub net: AdaptationNet,
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
    /// Epoch at which a non-finite loss stopped training.
    pub diverged_at: Option<usize>,
}

impl TrainOutcome {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.history {
            s.push_str(&format!("{},{:.9},{:.9}\n", e.epoch, e.train, e.val));
        }
        s
    }
}

/// Trains with minibatch Adam and early stopping on a held-out slice. When
/// the split would leave no validation pairs, training loss drives selection.
pub fn train_adaptation(
    pairs: &[WeightPair],
    config: &AdaptationConfig,
    train: &AdaptationTrainConfig,
) -> Result<TrainOutcome> {
    let first = pairs.first().ok_or_else(|| Error::EmptyInput("stage II needs at least one weight pair".into()))?;
    train.optimizer.validate()?;
    if train.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut net = AdaptationNet::new(config.clone(), first.embedding.dim(), train.seed)?;
    if net.output_dim() != first.target.len() {
        return Err(Error::Dimension {
            what: "adaptation output".into(),
            expected: first.target.len(),
            actual: net.output_dim(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0xada9);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((pairs.len() as f64) * train.val_fraction).round() as usize;
    let n_val = if n_val >= pairs.len() { 0 } else { n_val };
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_pairs: Vec<&WeightPair> = train_idx.iter().map(|&i| &pairs[i]).collect();
    let val_pairs: Vec<&WeightPair> = val_idx.iter().map(|&i| &pairs[i]).collect();

    let mut adam = Adam::new(train.optimizer.clone(), &net.params);
    let mut best = (f64::INFINITY, net.params.clone(), 0usize);
    let mut history = Vec::new();
    let mut diverged_at = None;
    let mut batch_order: Vec<usize> = (0..train_pairs.len()).collect();

    for epoch in 1..=train.max_epochs {
        batch_order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut bad = false;
        for chunk in batch_order.chunks(train.batch_size) {
            let batch: Vec<&WeightPair> = chunk.iter().map(|&i| train_pairs[i]).collect();
            let (loss, grads) = net.loss_and_grad(&net.params, &batch)?;
            if !loss.is_finite() || !grads.all_finite() {
                bad = true;
                break;
            }
            total += loss * batch.len() as f64;
            adam.step(&mut net.params, &grads);
        }
        if bad || !net.params.all_finite() {
            warn!(epoch, "adaptation loss diverged; keeping the last good parameters");
            diverged_at = Some(epoch);
            break;
        }
        let train_loss = total / train_pairs.len() as f64;
        let val_loss = if val_pairs.is_empty() { net.mean_loss(&train_pairs)? } else { net.mean_loss(&val_pairs)? };
        history.push(EpochLoss {
            epoch,
            train: train_loss,
            val: val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, net.params.clone(), epoch);
        } else if epoch - best.2 >= train.patience {
            info!(epoch, best_epoch = best.2, "early stopping");
            break;
        }
    }
    net.params = best.1;
    Ok(TrainOutcome {
        net,
        history,
        best_epoch: best.2,
        diverged_at,
    })
}

pub const ADAPTATION_SCHEMA: u32 = 1;

/// Trained network plus the identities of the artifacts it depends on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptationCheckpoint {
    pub schema_version: u32,
    pub provider_fingerprint: String,
    pub stage1_hash: String,
    pub net: AdaptationNet,
}

impl AdaptationCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self).map_err(|e| Error::serde("adaptation checkpoint", e))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Self = serde_json::from_slice(&bytes).map_err(|e| Error::serde("adaptation checkpoint", e))?;
        if ckpt.schema_version != ADAPTATION_SCHEMA {
            return Err(Error::Config(format!(
                "adaptation checkpoint schema {} (expected {ADAPTATION_SCHEMA})",
                ckpt.schema_version
            )));
        }
        Ok(ckpt)
    }

    /// Rejects a checkpoint trained against a different provider or stage-I model.
    pub fn check_compatible(&self, provider_fingerprint: &str, stage1_hash: &str) -> Result<()> {
        if self.provider_fingerprint != provider_fingerprint {
            return Err(Error::Fingerprint {
                artifact: "emotion provider".into(),
                expected: self.provider_fingerprint.clone(),
                found: provider_fingerprint.into(),
            });
        }
        if self.stage1_hash != stage1_hash {
            return Err(Error::Fingerprint {
                artifact: "stage-I checkpoint".into(),
                expected: self.stage1_hash.clone(),
                found: stage1_hash.into(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> GstWeights {
        GstWeights::normalized((0..n).map(|_| rng.random_range(0.0..1.0f64).powi(3) + 1e-9).collect()).unwrap()
    }

    #[test]
    fn zero_parameters_predict_uniform() {
        let mut net = AdaptationNet::new(AdaptationConfig::default(), 768, 1).unwrap();
        for id in net.params.ids().collect::<Vec<_>>() {
            net.params.get_mut(id).fill(0.0);
        }
        let w = net.predict_weights(&EmotionTextEmbedding(vec![0.3; 768])).unwrap();
        assert_eq!(w.len(), 16);
        assert!(w.as_slice().iter().all(|&v| (v - 0.0625).abs() < 1e-15));
    }

    #[test]
    fn default_sizes_follow_provider_width() {
        let net = AdaptationNet::new(AdaptationConfig::default(), 768, 1).unwrap();
        assert_eq!(net.sizes, vec![768, 600, 500, 400, 300, 200, 100, 50, 40, 16]);
        assert_eq!(net.layers.len(), 9);
        let cfg = AdaptationConfig {
            input_dim_override: Some(772),
            ..AdaptationConfig::default()
        };
        let net = AdaptationNet::new(cfg, 768, 1).unwrap();
        assert_eq!(net.input_dim(), 772);
        let err = net.predict_weights(&EmotionTextEmbedding(vec![0.0; 768])).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 772, actual: 768, .. }));
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = GstWeights::normalized(vec![1.0; 16]).unwrap();
        let onehot = GstWeights::one_hot(16, 4);
        assert!((ce_soft_loss(&uniform, &onehot) - 16f64.ln()).abs() < 1e-9);
        assert!((16f64.ln() - 2.7726).abs() < 1e-4);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let p = random_simplex(&mut rng, 16);
            let h: f64 = -p.as_slice().iter().map(|v| v * v.ln()).sum::<f64>();
            assert!((ce_soft_loss(&p, &p) - h).abs() < 1e-6);
        }
    }

    #[test]
    fn two_layer_gradients_match_finite_differences() {
        let cfg = AdaptationConfig {
            layer_sizes: vec![6, 10, 16],
            input_dim_override: None,
        };
        let net = AdaptationNet::new(cfg, 6, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pairs: Vec<WeightPair> = (0..5)
            .map(|i| WeightPair {
                id: format!("p{i}"),
                embedding: EmotionTextEmbedding((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()),
                target: random_simplex(&mut rng, 16),
            })
            .collect();
        let refs: Vec<&WeightPair> = pairs.iter().collect();
        let report = check_gradients(&net.params, |s| net.loss_and_grad(s, &refs).unwrap(), 20, 1e-5, &mut rng);
        assert!(report.max_relative_error <= 1e-3, "{report:?}");
    }

    fn single_pair(seed: u64) -> WeightPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        WeightPair {
            id: "only".into(),
            embedding: EmotionTextEmbedding((0..768).map(|_| rng.random_range(-0.1..0.1)).collect()),
            target: random_simplex(&mut rng, 16),
        }
    }

    #[test]
    fn single_pair_overfits() {
        let pair = single_pair(2);
        let train = AdaptationTrainConfig {
            max_epochs: 500,
            patience: 500,
            val_fraction: 0.0,
            ..AdaptationTrainConfig::default()
        };
        let out = train_adaptation(std::slice::from_ref(&pair), &AdaptationConfig::default(), &train).unwrap();
        let pred = out.net.predict_weights(&pair.embedding).unwrap();
        let err = pred
            .as_slice()
            .iter()
            .zip(pair.target.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-2, "max error {err}");
        let best = out.history[out.best_epoch - 1].val;
        assert!(best - entropy(&pair.target) < 1e-3);
    }

    #[test]
    fn single_pair_curve_settles_onto_entropy() {
        let pair = single_pair(2);
        let train = AdaptationTrainConfig {
            max_epochs: 1000,
            patience: 1000,
            val_fraction: 0.0,
            ..AdaptationTrainConfig::default()
        };
        let out = train_adaptation(std::slice::from_ref(&pair), &AdaptationConfig::default(), &train).unwrap();
        let curve: Vec<f64> = out.history.iter().map(|e| e.val).collect();
        let h = entropy(&pair.target);
        assert!(curve.iter().all(|&l| l >= h - 1e-9));
        assert!(curve.last().unwrap() - h < 1e-6, "final {} vs entropy {h}", curve.last().unwrap());
        assert!(curve.last().unwrap() < &curve[0]);
    }

    #[test]
    fn clustered_pairs_are_learned() {
        let dim = 32;
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let centers: Vec<Vec<f64>> = (0..4).map(|_| (0..dim).map(|_| 2.0 * normal.sample(&mut rng)).collect()).collect();
        let template = |k: usize| {
            let mut v = vec![0.01; 16];
            v[k * 4] = 1.0 - 0.15;
            GstWeights::normalized(v).unwrap()
        };
        let pairs: Vec<WeightPair> = (0..200)
            .map(|i| {
                let c = i % 4;
                WeightPair {
                    id: format!("c{c}_{i}"),
                    embedding: EmotionTextEmbedding(centers[c].iter().map(|m| m + 0.3 * normal.sample(&mut rng)).collect()),
                    target: template(c),
                }
            })
            .collect();

        // nearest-centroid oracle separates the data perfectly
        let oracle_hits = pairs
            .iter()
            .filter(|p| {
                let d = |c: &Vec<f64>| c.iter().zip(&p.embedding.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                let nearest = (0..4).min_by(|&a, &b| d(&centers[a]).total_cmp(&d(&centers[b]))).unwrap();
                p.id.starts_with(&format!("c{nearest}_"))
            })
            .count();
        assert_eq!(oracle_hits, 200);

        let out = train_adaptation(&pairs, &AdaptationConfig::default(), &AdaptationTrainConfig::default()).unwrap();
        let argmax = |w: &GstWeights| (0..16).max_by(|&a, &b| w.as_slice()[a].total_cmp(&w.as_slice()[b])).unwrap();
        let hits = pairs
            .iter()
            .filter(|p| argmax(&out.net.predict_weights(&p.embedding).unwrap()) == argmax(&p.target))
            .count();
        assert!(hits as f64 / 200.0 >= 0.9, "accuracy {}", hits as f64 / 200.0);
    }

    #[test]
    fn empty_pairs_rejected() {
        assert!(train_adaptation(&[], &AdaptationConfig::default(), &AdaptationTrainConfig::default()).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_compatibility() {
        let net = AdaptationNet::new(
            AdaptationConfig {
                layer_sizes: vec![4, 8, 16],
                input_dim_override: None,
            },
            4,
            3,
        )
        .unwrap();
        let ckpt = AdaptationCheckpoint {
            schema_version: ADAPTATION_SCHEMA,
            provider_fingerprint: "stub:abc".into(),
            stage1_hash: "deadbeef".into(),
            net,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        ckpt.save(&path).unwrap();
        let back = AdaptationCheckpoint::load(&path).unwrap();
        assert_eq!(back.net.params, ckpt.net.params);
        let e = EmotionTextEmbedding(vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(back.net.predict_weights(&e).unwrap(), ckpt.net.predict_weights(&e).unwrap());
        assert!(back.check_compatible("stub:abc", "deadbeef").is_ok());
        assert!(matches!(back.check_compatible("stub:xyz", "deadbeef"), Err(Error::Fingerprint { .. })));
        assert!(back.check_compatible("stub:abc", "cafe").is_err());
    }

    proptest! {
        #[test]
        fn predictions_are_simplexes(seed in any::<u64>()) {
            let cfg = AdaptationConfig { layer_sizes: vec![12, 20, 16], input_dim_override: None };
            let net = AdaptationNet::new(cfg, 12, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = EmotionTextEmbedding((0..12).map(|_| rng.random_range(-50.0..50.0)).collect());
            let w = net.predict_weights(&e).unwrap();
            prop_assert!(w.as_slice().iter().all(|&v| v >= 0.0));
            prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }

        #[test]
        fn gibbs_inequality(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_simplex(&mut rng, 16);
            let p = random_simplex(&mut rng, 16);
            prop_assert!(ce_soft_loss(&p, &t) >= entropy(&t) - 1e-9);
        }
    }
}
