//! Text emotion analysis behind a provider contract, and threshold-based
//! corpus pruning.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::warn;

use crate::autodiff::Matrix;
use crate::corpus::Utterance;
use crate::error::{Error, Result};

pub const DEFAULT_LABELS: [&str; 7] = ["anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise"];
pub const DEFAULT_EMBED_DIM: usize = 768;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionAnalysis {
    pub class_labels: Vec<String>,
    pub probabilities: Vec<f64>,
    pub dominant_class: String,
    pub dominant_prob: f64,
}

impl EmotionAnalysis {
    /// Validates the distribution and picks the dominant class; ties go to
    /// the earliest label.
    pub fn from_probabilities(class_labels: Vec<String>, probabilities: Vec<f64>) -> Result<Self> {
        if class_labels.len() != probabilities.len() || class_labels.is_empty() {
            return Err(Error::Dimension {
                what: "emotion probabilities".into(),
                expected: class_labels.len(),
                actual: probabilities.len(),
            });
        }
        let sum: f64 = probabilities.iter().sum();
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Shape(format!("emotion probabilities do not form a distribution (sum {sum})")));
        }
        let mut best = 0;
        for (i, &p) in probabilities.iter().enumerate() {
            if p > probabilities[best] {
                best = i;
            }
        }
        Ok(Self {
            dominant_class: class_labels[best].clone(),
            dominant_prob: probabilities[best],
            class_labels,
            probabilities,
        })
    }

    pub fn probability(&self, label: &str) -> Option<f64> {
        self.class_labels.iter().position(|l| l == label).map(|i| self.probabilities[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionTextEmbedding(pub Vec<f64>);

impl EmotionTextEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Final-layer token states (`tokens × dim`) and which positions are real
/// tokens (`true`) rather than padding or boundary markers.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStates {
    pub states: Matrix,
    pub mask: Vec<bool>,
}

/// Mean of the unmasked token states.
pub fn mean_pool(ts: &TokenStates) -> Result<EmotionTextEmbedding> {
    if ts.mask.len() != ts.states.nrows() {
        return Err(Error::Dimension {
            what: "token mask".into(),
            expected: ts.states.nrows(),
            actual: ts.mask.len(),
        });
    }
    let mut sum = vec![0.0; ts.states.ncols()];
    let mut count = 0usize;
    for (row, _) in ts.states.rows().into_iter().zip(&ts.mask).filter(|(_, m)| **m) {
        for (s, v) in sum.iter_mut().zip(row.iter()) {
            *s += v;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyText);
    }
    Ok(EmotionTextEmbedding(sum.into_iter().map(|s| s / count as f64).collect()))
}

pub trait EmotionProvider: Send + Sync {
    fn labels(&self) -> &[String];
    fn dim(&self) -> usize;
    /// Identity of the provider and its artifact; recorded by downstream
    /// checkpoints.
    fn fingerprint(&self) -> String;
    fn classify(&self, text: &str) -> Result<EmotionAnalysis>;
    fn embed(&self, text: &str) -> Result<EmotionTextEmbedding>;
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\'').to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

fn builtin_lexicon() -> Vec<(&'static str, &'static str)> {
    let groups: [(&str, &[&str]); 7] = [
        ("anger", &["angry", "furious", "rage", "hate", "mad", "annoyed", "outraged", "livid"]),
        ("disgust", &["disgusting", "disgusted", "gross", "revolting", "nasty", "sickening", "vile"]),
        ("fear", &["afraid", "scared", "terrified", "fear", "frightened", "nervous", "worried", "panic"]),
        (
            "joy",
            &["happy", "excited", "joy", "glad", "delighted", "wonderful", "love", "thrilled", "great", "cheerful"],
        ),
        ("neutral", &["okay", "ordinary", "routine", "usual", "regular", "normal", "schedule", "report"]),
        ("sadness", &["sad", "unhappy", "depressed", "miserable", "crying", "tears", "lonely", "grief", "sorrow"]),
        ("surprise", &["surprised", "amazed", "astonished", "shocked", "unexpected", "wow", "suddenly"]),
    ];
    groups
        .iter()
        .flat_map(|(label, ws)| ws.iter().map(move |w| (*w, *label)))
        .collect()
}

/// Deterministic keyword provider: probabilities are a softmax of
/// `gain × keyword count` per class; every token's state is a fixed random
/// projection of that distribution, bracketed by masked boundary states.
#[derive(Debug, Clone)]
pub struct StubProvider {
    labels: Vec<String>,
    lexicon: BTreeMap<String, usize>,
    gain: f64,
    seed: u64,
    projection: Matrix,
}

impl StubProvider {
    pub const DEFAULT_GAIN: f64 = 3.0;
    pub const DEFAULT_SEED: u64 = 0x5eed;

    pub fn new(labels: Vec<String>, lexicon: BTreeMap<String, usize>, dim: usize, gain: f64, seed: u64) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = labels.len();
        let projection = Array2::from_shape_fn((dim, k), |_| normal.sample(&mut rng));
        Self {
            labels,
            lexicon,
            gain,
            seed,
            projection,
        }
    }

    pub fn builtin() -> Self {
        let labels: Vec<String> = DEFAULT_LABELS.iter().map(|s| s.to_string()).collect();
        let lexicon = builtin_lexicon()
            .into_iter()
            .map(|(w, l)| (w.to_string(), labels.iter().position(|x| x == l).expect("builtin label")))
            .collect();
        Self::new(labels, lexicon, DEFAULT_EMBED_DIM, Self::DEFAULT_GAIN, Self::DEFAULT_SEED)
    }

    /// Lexicon file: one `word label` pair per line, `#` starts a comment.
    /// Labels must come from the default label set.
    pub fn from_lexicon_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let labels: Vec<String> = DEFAULT_LABELS.iter().map(|s| s.to_string()).collect();
        let mut lexicon = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(word), Some(label), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "expected `word label`".into(),
                });
            };
            let class = labels.iter().position(|l| l == label).ok_or_else(|| Error::UnknownLabel {
                label: label.to_string(),
                known: labels.clone(),
            })?;
            lexicon.insert(word.to_lowercase(), class);
        }
        Ok(Self::new(labels, lexicon, DEFAULT_EMBED_DIM, Self::DEFAULT_GAIN, Self::DEFAULT_SEED))
    }

    pub fn with_dim(self, dim: usize) -> Self {
        Self::new(self.labels, self.lexicon, dim, self.gain, self.seed)
    }

    fn probabilities(&self, tokens: &[String]) -> Vec<f64> {
        let mut counts = vec![0.0; self.labels.len()];
        for t in tokens {
            if let Some(&c) = self.lexicon.get(t) {
                counts[c] += 1.0;
            }
        }
        let max = counts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = counts.iter().map(|c| (self.gain * (c - max)).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    fn tokens(&self, text: &str) -> Result<Vec<String>> {
        let tokens = words(text);
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(tokens)
    }

    pub fn token_states(&self, text: &str) -> Result<TokenStates> {
        let tokens = self.tokens(text)?;
        let p = self.probabilities(&tokens);
        let state: Vec<f64> = self.projection.rows().into_iter().map(|r| r.iter().zip(&p).map(|(a, b)| a * b).sum()).collect();
        let n = tokens.len() + 2;
        let dim = self.dim();
        let states = Array2::from_shape_fn((n, dim), |(i, j)| if i == 0 || i == n - 1 { 1.0 } else { state[j] });
        let mask = (0..n).map(|i| i != 0 && i != n - 1).collect();
        Ok(TokenStates { states, mask })
    }
}

impl EmotionProvider for StubProvider {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn dim(&self) -> usize {
        self.projection.nrows()
    }

    fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&(&self.labels, &self.lexicon, self.gain, self.seed, self.dim())).expect("serializable"));
        format!("stub:{}", &hex::encode(h.finalize())[..16])
    }

    fn classify(&self, text: &str) -> Result<EmotionAnalysis> {
        let tokens = self.tokens(text)?;
        EmotionAnalysis::from_probabilities(self.labels.clone(), self.probabilities(&tokens))
    }

    fn embed(&self, text: &str) -> Result<EmotionTextEmbedding> {
        mean_pool(&self.token_states(text)?)
    }
}

#[derive(Debug, Deserialize)]
struct ArtifactHeader {
    labels: Vec<String>,
    dim: usize,
}

#[derive(Debug, Deserialize)]
struct ArtifactRecord {
    text: String,
    probabilities: Vec<f64>,
    #[serde(default)]
    token_states: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    mask: Option<Vec<bool>>,
    #[serde(default)]
    embedding: Option<Vec<f64>>,
}

/// Outputs of an external pretrained encoder, exported ahead of time as
/// JSON lines: a header `{"labels": [...], "dim": D}` followed by one record
/// per text with `probabilities` and either `token_states` (+ `mask`) or a
/// pooled `embedding`.
#[derive(Debug, Clone)]
pub struct ExternalProvider {
    path: PathBuf,
    labels: Vec<String>,
    dim: usize,
    digest: String,
    records: BTreeMap<String, (Vec<f64>, EmotionTextEmbedding)>,
}

impl ExternalProvider {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::ProviderUnavailable(format!(
                "emotion model artifact not found at {}; export the encoder outputs for your corpus to this path \
                 (JSON lines: header with labels/dim, then one record per text) or select `stub:builtin`",
                path.display()
            )));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let digest = hex::encode(Sha256::digest(&bytes))[..16].to_string();
        let text = String::from_utf8(bytes).map_err(|e| Error::serde("emotion artifact", e))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::ProviderUnavailable(format!("{} is empty", path.display())))?;
        let header: ArtifactHeader = serde_json::from_str(header).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?;
        let mut records = BTreeMap::new();
        for (i, line) in lines {
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let rec: ArtifactRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            let embedding = match (rec.token_states, rec.embedding) {
                (Some(states), _) => {
                    let rows = states.len();
                    let flat: Vec<f64> = states.into_iter().flatten().collect();
                    if rows == 0 || flat.len() != rows * header.dim {
                        return Err(parse_err(format!("token_states must be {rows} × {}", header.dim)));
                    }
                    let mask = rec.mask.unwrap_or_else(|| vec![true; rows]);
                    let states = Array2::from_shape_vec((rows, header.dim), flat).expect("checked shape");
                    mean_pool(&TokenStates { states, mask })?
                }
                (None, Some(e)) if e.len() == header.dim => EmotionTextEmbedding(e),
                _ => return Err(parse_err("record needs token_states or an embedding of the header dim".into())),
            };
            if rec.probabilities.len() != header.labels.len() {
                return Err(parse_err("probability count differs from label count".into()));
            }
            records.insert(rec.text, (rec.probabilities, embedding));
        }
        Ok(Self {
            path: path.to_path_buf(),
            labels: header.labels,
            dim: header.dim,
            digest,
            records,
        })
    }

    fn lookup(&self, text: &str) -> Result<&(Vec<f64>, EmotionTextEmbedding)> {
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        self.records.get(text).ok_or_else(|| {
            Error::ProviderUnavailable(format!(
                "text {text:?} is not covered by the artifact {}; re-export it including this text",
                self.path.display()
            ))
        })
    }
}

impl EmotionProvider for ExternalProvider {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("external:{}", self.digest)
    }

    fn classify(&self, text: &str) -> Result<EmotionAnalysis> {
        let (p, _) = self.lookup(text)?;
        EmotionAnalysis::from_probabilities(self.labels.clone(), p.clone())
    }

    fn embed(&self, text: &str) -> Result<EmotionTextEmbedding> {
        Ok(self.lookup(text)?.1.clone())
    }
}

/// Resolves `stub:builtin`, `stub:<lexicon file>` or `external:<artifact>`.
pub fn provider_from_key(key: &str) -> Result<Box<dyn EmotionProvider>> {
    match key.split_once(':') {
        Some(("stub", "" | "builtin")) => Ok(Box::new(StubProvider::builtin())),
        Some(("stub", path)) => Ok(Box::new(StubProvider::from_lexicon_file(Path::new(path))?)),
        Some(("external", path)) => Ok(Box::new(ExternalProvider::load(Path::new(path))?)),
        _ => Err(Error::Config(format!(
            "unknown emotion provider key {key:?}; expected `stub:<lexicon>` or `external:<artifact>`"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruningConfig {
    pub threshold: f64,
}

impl Default for PruningConfig {
    fn default() -> Self {
        Self { threshold: 0.7 }
    }
}

impl PruningConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Config(format!("pruning threshold {threshold} must lie in (0, 1)")));
        }
        Ok(Self { threshold })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedUtterance {
    pub utterance: Utterance,
    pub analysis: EmotionAnalysis,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub kept: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub threshold: f64,
    pub total: usize,
    pub kept: usize,
    pub dropped: usize,
    /// Utterances the provider could not analyze.
    pub failed: Vec<String>,
    pub per_class: BTreeMap<String, ClassCounts>,
    pub kept_ids: Vec<String>,
}

impl PruneReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::serde("prune report", e))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::serde("prune report", e))
    }
}

/// Keeps utterances whose dominant emotion probability strictly exceeds the
/// threshold, in input order.
pub fn prune_corpus(
    utterances: &[Utterance],
    provider: &dyn EmotionProvider,
    config: &PruningConfig,
) -> (Vec<AnnotatedUtterance>, PruneReport) {
    let analyses: Vec<Result<EmotionAnalysis>> = utterances.par_iter().map(|u| provider.classify(&u.text)).collect();
    let mut per_class: BTreeMap<String, ClassCounts> =
        provider.labels().iter().map(|l| (l.clone(), ClassCounts::default())).collect();
    let mut kept = Vec::new();
    let mut failed = Vec::new();
    for (u, a) in utterances.iter().zip(analyses) {
        match a {
            Ok(analysis) => {
                let counts = per_class.entry(analysis.dominant_class.clone()).or_default();
                if analysis.dominant_prob > config.threshold {
                    counts.kept += 1;
                    kept.push(AnnotatedUtterance {
                        utterance: u.clone(),
                        analysis,
                    });
                } else {
                    counts.dropped += 1;
                }
            }
            Err(e) => {
                warn!(id = %u.id, error = %e, "emotion analysis failed; dropping utterance");
                failed.push(u.id.clone());
            }
        }
    }
    let report = PruneReport {
        threshold: config.threshold,
        total: utterances.len(),
        kept: kept.len(),
        dropped: utterances.len() - kept.len(),
        failed,
        per_class,
        kept_ids: kept.iter().map(|k| k.utterance.id.clone()).collect(),
    };
    (kept, report)
}
