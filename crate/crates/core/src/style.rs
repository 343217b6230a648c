//! Global style tokens: a reference encoder summarizes a mel-spectrogram,
//! attention over a learned token bank turns the summary into a distribution
//! over tokens, and the weighted tokens form the style embedding.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::graph::softmax_rows;
use crate::autodiff::nn::{Conv1d, Gru, LayerNorm, Linear};
use crate::autodiff::{Ctx, Matrix, ParamBuilder, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

pub const DEFAULT_TOKENS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleConfig {
    pub n_mels: usize,
    /// Output channels of the stride-2 convolutions, one entry per layer.
    pub ref_channels: Vec<usize>,
    pub ref_kernel: usize,
    /// Width of the style embedding and of each token; equals the acoustic
    /// model width.
    pub d_style: usize,
    pub n_tokens: usize,
    pub attn_dim: usize,
    pub heads: usize,
    /// Squash tokens with tanh before attention and combination.
    pub tanh_tokens: bool,
    pub token_init_std: f64,
}

impl StyleConfig {
    pub fn base(d_style: usize) -> Self {
        Self {
            n_mels: 80,
            ref_channels: vec![32, 32, 64, 64, 128, 128],
            ref_kernel: 3,
            d_style,
            n_tokens: DEFAULT_TOKENS,
            attn_dim: d_style,
            heads: 1,
            tanh_tokens: true,
            token_init_std: 0.5,
        }
    }

    pub fn toy(d_style: usize) -> Self {
        Self {
            ref_channels: vec![16, 16, 32],
            ..Self::base(d_style)
        }
    }

    /// Each stride-2 layer halves the time axis.
    pub fn min_reference_frames(&self) -> usize {
        1 << self.ref_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ref_channels.is_empty() || self.ref_channels.contains(&0) {
            return Err(Error::Config("reference encoder needs at least one non-empty layer".into()));
        }
        if self.n_tokens == 0 || self.d_style == 0 || self.n_mels == 0 {
            return Err(Error::Config("n_tokens, d_style and n_mels must be positive".into()));
        }
        if self.heads == 0 || self.attn_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "attn_dim {} must be divisible by heads {}",
                self.attn_dim, self.heads
            )));
        }
        if self.ref_kernel % 2 == 0 {
            return Err(Error::Config("reference kernel must be odd".into()));
        }
        Ok(())
    }
}

/// Distribution over style tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GstWeights(Vec<f64>);

impl GstWeights {
    pub const TOLERANCE: f64 = 1e-6;

    /// Accepts a simplex (non-negative, sums to 1 within [`Self::TOLERANCE`]).
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let sum: f64 = values.iter().sum();
        if values.is_empty() || values.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::Shape(format!("not a probability simplex (sum {sum})")));
        }
        Ok(Self(values))
    }

    /// Clamps negatives and rescales to sum 1.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let clamped: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
        let sum: f64 = clamped.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::Shape("cannot normalize an all-zero weight vector".into()));
        }
        Ok(Self(clamped.into_iter().map(|v| v / sum).collect()))
    }

    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut v = vec![0.0; len];
        v[index] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleEmbedding(pub Vec<f64>);

impl StyleEmbedding {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Scaled dot-product attention of one query against a set of keys. With
/// several heads the query and keys are split column-wise, each head yields a
/// softmax, and the head distributions are averaged and renormalized.
pub fn attention_weights(query: &[f64], keys: &Matrix, heads: usize) -> Vec<f64> {
    let dim = query.len();
    assert_eq!(keys.ncols(), dim, "attention: key width mismatch");
    assert!(heads > 0 && dim % heads == 0, "attention: bad head count");
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut acc = vec![0.0; keys.nrows()];
    for h in 0..heads {
        let scores = Array2::from_shape_fn((1, keys.nrows()), |(_, j)| {
            (h * dh..(h + 1) * dh).map(|c| query[c] * keys[[j, c]]).sum::<f64>() * scale
        });
        for (a, p) in acc.iter_mut().zip(softmax_rows(&scores).iter()) {
            *a += p;
        }
    }
    let sum: f64 = acc.iter().sum();
    acc.into_iter().map(|a| a / sum).collect()
}

/// Reference encoder, token bank and attention, registered in a shared
/// parameter store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StyleNet {
    pub config: StyleConfig,
    convs: Vec<(Conv1d, LayerNorm)>,
    gru: Gru,
    tokens: ParamId,
    query: Linear,
    key: Linear,
    out: Linear,
}

impl StyleNet {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, config: StyleConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let net = pb.scoped("style", |pb| {
            let mut cin = c.n_mels;
            let mut convs = Vec::new();
            for (i, &cout) in c.ref_channels.iter().enumerate() {
                let conv = Conv1d::new(pb, &format!("ref.conv{i}"), cin, cout, c.ref_kernel, 2, c.ref_kernel / 2);
                let norm = LayerNorm::new(pb, &format!("ref.norm{i}"), cout);
                convs.push((conv, norm));
                cin = cout;
            }
            Self {
                gru: Gru::new(pb, "ref.gru", cin, c.d_style),
                tokens: pb.normal("tokens", c.n_tokens, c.d_style, c.token_init_std),
                query: Linear::new(pb, "query", c.d_style, c.attn_dim, false),
                key: Linear::new(pb, "key", c.d_style, c.attn_dim, false),
                out: Linear::new(pb, "out", c.d_style, c.d_style, false),
                convs,
                config: config.clone(),
            }
        });
        Ok(net)
    }

    pub fn token_param(&self) -> ParamId {
        self.tokens
    }

    pub fn tokens<'s>(&self, store: &'s ParamStore) -> &'s Matrix {
        store.get(self.tokens)
    }

    /// `frames × n_mels` → `1 × d_style`.
    pub fn encode_reference_var(&self, cx: &mut Ctx<'_>, mel: Var) -> Result<Var> {
        let (frames, bins) = cx.g.shape(mel);
        if bins != self.config.n_mels {
            return Err(Error::Dimension {
                what: "reference mel bins".into(),
                expected: self.config.n_mels,
                actual: bins,
            });
        }
        let required = self.config.min_reference_frames();
        if frames < required {
            return Err(Error::ReferenceTooShort { frames, required });
        }
        let mut h = mel;
        for (conv, norm) in &self.convs {
            h = conv.forward(cx, h);
            h = norm.forward(cx, h);
            h = cx.g.relu(h);
        }
        Ok(self.gru.final_state(cx, h))
    }

    fn activated_tokens(&self, cx: &mut Ctx<'_>) -> Var {
        let t = cx.p(self.tokens);
        if self.config.tanh_tokens {
            cx.g.tanh(t)
        } else {
            t
        }
    }

    /// `1 × d_style` reference → `1 × n_tokens` weights.
    pub fn attend_var(&self, cx: &mut Ctx<'_>, reference: Var) -> Var {
        let tokens = self.activated_tokens(cx);
        let q = self.query.forward(cx, reference);
        let k = self.key.forward(cx, tokens);
        let heads = self.config.heads;
        let dh = self.config.attn_dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut acc: Option<Var> = None;
        for h in 0..heads {
            let (qh, kh) = if heads == 1 {
                (q, k)
            } else {
                (cx.g.slice_cols(q, h * dh, (h + 1) * dh), cx.g.slice_cols(k, h * dh, (h + 1) * dh))
            };
            let kt = cx.g.transpose(kh);
            let s = cx.g.matmul(qh, kt);
            let s = cx.g.scale(s, scale);
            let p = cx.g.softmax_rows(s);
            acc = Some(match acc {
                None => p,
                Some(a) => cx.g.add(a, p),
            });
        }
        let acc = acc.expect("at least one head");
        if heads == 1 {
            acc
        } else {
            cx.g.scale(acc, 1.0 / heads as f64)
        }
    }

    /// `1 × n_tokens` weights → `1 × d_style` embedding.
    pub fn combine_var(&self, cx: &mut Ctx<'_>, weights: Var) -> Var {
        let tokens = self.activated_tokens(cx);
        let mixed = cx.g.matmul(weights, tokens);
        self.out.forward(cx, mixed)
    }

    pub fn encode_reference(&self, store: &ParamStore, mel: &Matrix) -> Result<Vec<f64>> {
        let mut cx = Ctx::eval(store);
        let m = cx.g.constant(mel.clone());
        let r = self.encode_reference_var(&mut cx, m)?;
        Ok(cx.g.value(r).iter().copied().collect())
    }

    pub fn attend_tokens(&self, store: &ParamStore, reference: &[f64]) -> Result<GstWeights> {
        if reference.len() != self.config.d_style {
            return Err(Error::Dimension {
                what: "reference embedding".into(),
                expected: self.config.d_style,
                actual: reference.len(),
            });
        }
        let tokens = store.get(self.tokens);
        let act = if self.config.tanh_tokens { tokens.mapv(f64::tanh) } else { tokens.clone() };
        let keys = act.dot(store.get(self.key.w));
        let r = Array2::from_shape_vec((1, reference.len()), reference.to_vec()).expect("row shape");
        let q = r.dot(store.get(self.query.w));
        let q: Vec<f64> = q.iter().copied().collect();
        GstWeights::normalized(attention_weights(&q, &keys, self.config.heads))
    }

    pub fn combine_tokens(&self, store: &ParamStore, weights: &GstWeights) -> Result<StyleEmbedding> {
        if weights.len() != self.config.n_tokens {
            return Err(Error::Dimension {
                what: "GST weights".into(),
                expected: self.config.n_tokens,
                actual: weights.len(),
            });
        }
        let mut cx = Ctx::eval(store);
        let w = cx.g.row(weights.as_slice());
        let e = self.combine_var(&mut cx, w);
        Ok(StyleEmbedding(cx.g.value(e).iter().copied().collect()))
    }

    pub fn extract_weights(&self, store: &ParamStore, mel: &Matrix) -> Result<GstWeights> {
        let r = self.encode_reference(store, mel)?;
        self.attend_tokens(store, &r)
    }

    /// One simplex row per mel, computed independently.
    pub fn extract_weights_batch(&self, store: &ParamStore, mels: &[Matrix]) -> Result<Vec<GstWeights>> {
        mels.par_iter().map(|m| self.extract_weights(store, m)).collect()
    }

    /// Writes the (activated) token vectors as CSV, one token per row.
    pub fn export_tokens(&self, store: &ParamStore, path: &Path) -> Result<()> {
        let tokens = store.get(self.tokens);
        let act = if self.config.tanh_tokens { tokens.mapv(f64::tanh) } else { tokens.clone() };
        let mut s = String::new();
        for row in act.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.9e}")).collect();
            writeln!(s, "{}", line.join(",")).expect("write to string");
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}
