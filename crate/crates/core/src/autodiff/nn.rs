//! Layers built on the autodiff graph.

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamBuilder, ParamId, ParamStore};

/// One forward pass: the graph under construction, the parameters it reads,
/// and whether dropout is active.
pub struct Ctx<'a> {
    pub g: Graph,
    store: &'a ParamStore,
    cache: HashMap<ParamId, Var>,
    train: bool,
    rng: ChaCha8Rng,
}

impl<'a> Ctx<'a> {
    pub fn eval(store: &'a ParamStore) -> Self {
        Self {
            g: Graph::new(),
            store,
            cache: HashMap::new(),
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn train(store: &'a ParamStore, seed: u64) -> Self {
        Self {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Self::eval(store)
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Graph node for a parameter; each parameter enters the graph once.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.cache.get(&id) {
            return *v;
        }
        let v = self.g.param(self.store, id);
        self.cache.insert(id, v);
        v
    }

    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if !self.train || rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let (r, c) = self.g.shape(x);
        let rng = &mut self.rng;
        let mask = Array2::from_shape_fn((r, c), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let m = self.g.constant(mask);
        self.g.mul(x, m)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        pb.scoped(name, |pb| Self {
            w: pb.xavier("w", fan_in, fan_out),
            b: bias.then(|| pb.zeros("b", 1, fan_out)),
            fan_in,
            fan_out,
        })
    }

    pub fn he<R: Rng>(pb: &mut ParamBuilder<'_, R>, name: &str, fan_in: usize, fan_out: usize) -> Self {
        pb.scoped(name, |pb| Self {
            w: pb.he("w", fan_in, fan_out),
            b: Some(pb.zeros("b", 1, fan_out)),
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Var {
        let w = cx.p(self.w);
        let y = cx.g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = cx.p(b);
                cx.g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// 1-D convolution over time. Input is `time × in_channels`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        pb: &mut ParamBuilder<'_, R>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        pb.scoped(name, |pb| Self {
            w: pb.xavier("w", kernel * in_channels, out_channels),
            b: pb.zeros("b", 1, out_channels),
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
        })
    }

    /// "Same" convolution with odd kernel and unit stride.
    pub fn same<R: Rng>(pb: &mut ParamBuilder<'_, R>, name: &str, cin: usize, cout: usize, kernel: usize) -> Self {
        Self::new(pb, name, cin, cout, kernel, 1, kernel / 2)
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        let padded = input_len + 2 * self.padding;
        if padded < self.kernel {
            0
        } else {
            (padded - self.kernel) / self.stride + 1
        }
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Var {
        let (t, c) = cx.g.shape(x);
        assert_eq!(c, self.in_channels, "conv1d: channel mismatch");
        let out_len = self.output_len(t);
        assert!(out_len > 0, "conv1d: input shorter than kernel");
        let padded = if self.padding > 0 {
            let z = cx.g.zeros(self.padding, c);
            cx.g.concat_rows(&[z, x, z])
        } else {
            x
        };
        let columns: Vec<Var> = (0..self.kernel)
            .map(|k| {
                let idx = (0..out_len).map(|i| i * self.stride + k).collect();
                cx.g.index_rows(padded, idx)
            })
            .collect();
        let unfolded = if columns.len() == 1 { columns[0] } else { cx.g.concat_cols(&columns) };
        let w = cx.p(self.w);
        let b = cx.p(self.b);
        let y = cx.g.matmul(unfolded, w);
        cx.g.add_row(y, b)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, name: &str, dim: usize) -> Self {
        pb.scoped(name, |pb| Self {
            gamma: pb.ones("gamma", 1, dim),
            beta: pb.zeros("beta", 1, dim),
        })
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Var {
        let n = cx.g.layer_norm_rows(x, Self::EPS);
        let gamma = cx.p(self.gamma);
        let beta = cx.p(self.beta);
        let y = cx.g.mul_row(n, gamma);
        cx.g.add_row(y, beta)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, name: &str, vocab: usize, dim: usize) -> Self {
        pb.scoped(name, |pb| Self {
            table: pb.normal("table", vocab, dim, (1.0 / dim as f64).sqrt()),
            vocab,
            dim,
        })
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, ids: &[usize]) -> Var {
        let t = cx.p(self.table);
        cx.g.index_rows(t, ids.to_vec())
    }
}

/// Multi-head scaled dot-product self-attention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl SelfAttention {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, name: &str, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim must be divisible by heads");
        pb.scoped(name, |pb| Self {
            q: Linear::new(pb, "q", dim, dim, true),
            k: Linear::new(pb, "k", dim, dim, true),
            v: Linear::new(pb, "v", dim, dim, true),
            o: Linear::new(pb, "o", dim, dim, true),
            heads,
            dim,
        })
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Var {
        let q = self.q.forward(cx, x);
        let k = self.k.forward(cx, x);
        let v = self.v.forward(cx, x);
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let outs: Vec<Var> = (0..self.heads)
            .map(|h| {
                let (a, b) = (h * dh, (h + 1) * dh);
                let qh = cx.g.slice_cols(q, a, b);
                let kh = cx.g.slice_cols(k, a, b);
                let vh = cx.g.slice_cols(v, a, b);
                let kt = cx.g.transpose(kh);
                let scores = cx.g.matmul(qh, kt);
                let scores = cx.g.scale(scores, scale);
                let attn = cx.g.softmax_rows(scores);
                cx.g.matmul(attn, vh)
            })
            .collect();
        let joined = if outs.len() == 1 { outs[0] } else { cx.g.concat_cols(&outs) };
        self.o.forward(cx, joined)
    }
}

/// Feed-forward transformer block: self-attention and a two-layer
/// convolutional feed-forward net, each with residual and post-norm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FftBlock {
    pub attn: SelfAttention,
    pub norm1: LayerNorm,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

impl FftBlock {
    pub fn new<R: Rng>(
        pb: &mut ParamBuilder<'_, R>,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        kernel: usize,
        dropout: f64,
    ) -> Self {
        pb.scoped(name, |pb| Self {
            attn: SelfAttention::new(pb, "attn", dim, heads),
            norm1: LayerNorm::new(pb, "norm1", dim),
            conv1: Conv1d::same(pb, "conv1", dim, ffn_dim, kernel),
            conv2: Conv1d::same(pb, "conv2", ffn_dim, dim, kernel),
            norm2: LayerNorm::new(pb, "norm2", dim),
            dropout,
        })
    }

    pub fn forward(&self, cx: &mut Ctx<'_>, x: Var) -> Var {
        let a = self.attn.forward(cx, x);
        let a = cx.dropout(a, self.dropout);
        let r = cx.g.add(x, a);
        let x = self.norm1.forward(cx, r);
        let h = self.conv1.forward(cx, x);
        let h = cx.g.relu(h);
        let h = self.conv2.forward(cx, h);
        let h = cx.dropout(h, self.dropout);
        let r = cx.g.add(x, h);
        self.norm2.forward(cx, r)
    }
}

/// Gated recurrent unit; returns the final hidden state (`1 × hidden`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gru {
    pub input: Linear,
    pub recurrent: Linear,
    pub hidden: usize,
}

impl Gru {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, name: &str, input_dim: usize, hidden: usize) -> Self {
        pb.scoped(name, |pb| Self {
            input: Linear::new(pb, "input", input_dim, 3 * hidden, true),
            recurrent: Linear::new(pb, "recurrent", hidden, 3 * hidden, true),
            hidden,
        })
    }

    pub fn final_state(&self, cx: &mut Ctx<'_>, xs: Var) -> Var {
        let (steps, _) = cx.g.shape(xs);
        let hsz = self.hidden;
        let projected = self.input.forward(cx, xs);
        let mut h = cx.g.zeros(1, hsz);
        for t in 0..steps {
            let xt = cx.g.index_rows(projected, vec![t]);
            let ht = self.recurrent.forward(cx, h);
            let xr = cx.g.slice_cols(xt, 0, hsz);
            let hr = cx.g.slice_cols(ht, 0, hsz);
            let xz = cx.g.slice_cols(xt, hsz, 2 * hsz);
            let hz = cx.g.slice_cols(ht, hsz, 2 * hsz);
            let xn = cx.g.slice_cols(xt, 2 * hsz, 3 * hsz);
            let hn = cx.g.slice_cols(ht, 2 * hsz, 3 * hsz);
            let r = cx.g.add(xr, hr);
            let r = cx.g.sigmoid(r);
            let z = cx.g.add(xz, hz);
            let z = cx.g.sigmoid(z);
            let gated = cx.g.mul(r, hn);
            let n = cx.g.add(xn, gated);
            let n = cx.g.tanh(n);
            let diff = cx.g.sub(h, n);
            let zd = cx.g.mul(z, diff);
            h = cx.g.add(n, zd);
        }
        h
    }
}

/// Sinusoidal position table (`len × dim`).
pub fn sinusoidal_positions(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn builder_fixture() -> (ParamStore, ChaCha8Rng) {
        (ParamStore::new(), ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn conv1d_matches_direct_convolution() {
        let (mut store, mut rng) = builder_fixture();
        let conv = {
            let mut pb = ParamBuilder::new(&mut store, &mut rng);
            Conv1d::new(&mut pb, "c", 2, 3, 3, 2, 1)
        };
        let x = array![[1.0, 0.5], [-0.3, 2.0], [0.7, -1.1], [0.2, 0.4], [1.5, -0.6]];
        let mut cx = Ctx::eval(&store);
        let xv = cx.g.constant(x.clone());
        let y = conv.forward(&mut cx, xv);
        let out = cx.g.value(y).clone();
        assert_eq!(out.dim(), (3, 3));

        let w = store.get(conv.w);
        for o in 0..3 {
            for co in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    let src = (o * 2 + k) as isize - 1;
                    if src < 0 || src >= 5 {
                        continue;
                    }
                    for ci in 0..2 {
                        acc += x[[src as usize, ci]] * w[[k * 2 + ci, co]];
                    }
                }
                assert!((out[[o, co]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_inactive_in_eval() {
        let store = ParamStore::new();
        let mut cx = Ctx::eval(&store);
        let x = cx.g.constant(Array2::ones((4, 4)));
        let y = cx.dropout(x, 0.5);
        assert_eq!(x, y);
    }

    #[test]
    fn gru_final_state_has_hidden_width() {
        let (mut store, mut rng) = builder_fixture();
        let gru = {
            let mut pb = ParamBuilder::new(&mut store, &mut rng);
            Gru::new(&mut pb, "gru", 4, 6)
        };
        let mut cx = Ctx::eval(&store);
        let xs = cx.g.constant(Array2::from_elem((5, 4), 0.1));
        let h = gru.final_state(&mut cx, xs);
        assert_eq!(cx.g.shape(h), (1, 6));
        assert!(cx.g.value(h).iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn positions_are_bounded() {
        let p = sinusoidal_positions(50, 8);
        assert_eq!(p[[0, 0]], 0.0);
        assert_eq!(p[[0, 1]], 1.0);
        assert!(p.iter().all(|v| v.abs() <= 1.0));
    }
}
