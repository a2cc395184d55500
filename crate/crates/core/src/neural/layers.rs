//! Building blocks operating on rows of feature vectors (`rows x features`).

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const LN_EPS: f32 = 1e-5;
pub(crate) const PRELU_INIT: f32 = 0.25;

/// Uniform in `[-a, a]`, `a = 1 / sqrt(fan_in)`.
pub(crate) fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), fan_in: usize) -> Array2<f32> {
    let a = 1.0 / (fan_in as f32).sqrt();
    Array2::from_shape_fn(shape, |_| rng.gen_range(-a..=a))
}

fn uniform_vec(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Array1<f32> {
    let a = 1.0 / (fan_in as f32).sqrt();
    Array1::from_shape_fn(len, |_| rng.gen_range(-a..=a))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out x in`.
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl Linear {
    pub(crate) fn random(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Self {
        Self {
            weight: uniform(rng, (output, input), input),
            bias: uniform_vec(rng, output, input),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f32>) -> Array2<f32> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    pub(crate) fn zero_bias(&mut self) {
        self.bias.fill(0.0);
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
}

impl LayerNorm {
    pub(crate) fn new(features: usize) -> Self {
        Self {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
        }
    }

    /// Normalises every row over its features.
    pub fn forward_inplace(&self, mut x: ArrayViewMut2<'_, f32>) {
        let n = x.ncols() as f32;
        for mut row in x.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for ((v, g), b) in row.iter_mut().zip(&self.gamma).zip(&self.beta) {
                *v = (*v - mean) * inv * g + b;
            }
        }
    }
}

pub(crate) fn prelu_inplace(x: &mut Array2<f32>, slope: f32) {
    x.mapv_inplace(|v| if v >= 0.0 { v } else { slope * v });
}

fn relu_inplace(x: &mut Array2<f32>) {
    x.mapv_inplace(|v| v.max(0.0));
}

fn softmax_rows(x: &mut Array2<f32>) {
    for mut row in x.rows_mut() {
        let max = row.fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Self-attention followed by a position-wise feedforward network, each
/// wrapped in a residual connection and layer normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
    pub heads: usize,
}

impl TransformerLayer {
    pub(crate) fn random(rng: &mut ChaCha8Rng, features: usize, hidden: usize, heads: usize) -> Self {
        Self {
            query: Linear::random(rng, features, features),
            key: Linear::random(rng, features, features),
            value: Linear::random(rng, features, features),
            output: Linear::random(rng, features, features),
            norm1: LayerNorm::new(features),
            ff1: Linear::random(rng, features, hidden),
            ff2: Linear::random(rng, hidden, features),
            norm2: LayerNorm::new(features),
            heads,
        }
    }

    pub(crate) fn linears_mut(&mut self) -> [&mut Linear; 6] {
        [
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.output,
            &mut self.ff1,
            &mut self.ff2,
        ]
    }

    pub(crate) fn is_finite(&self) -> bool {
        [&self.query, &self.key, &self.value, &self.output, &self.ff1, &self.ff2]
            .iter()
            .all(|l| l.is_finite())
    }

    /// `x` holds a batch of sequences, `batch x length x features`; every
    /// sequence is processed independently.
    pub fn forward(&self, x: &mut Array3<f32>) {
        let (batch, len, features) = x.dim();
        let d = features / self.heads;
        let scale = 1.0 / (d as f32).sqrt();
        let mut flat = x
            .view_mut()
            .into_shape_with_order((batch * len, features))
            .expect("contiguous batch");

        let q = self.query.forward(flat.view());
        let k = self.key.forward(flat.view());
        let v = self.value.forward(flat.view());
        let mut attended = Array2::<f32>::zeros((batch * len, features));
        for b in 0..batch {
            let rows = b * len..(b + 1) * len;
            for h in 0..self.heads {
                let cols = h * d..(h + 1) * d;
                let qh = q.slice(s![rows.clone(), cols.clone()]);
                let kh = k.slice(s![rows.clone(), cols.clone()]);
                let vh = v.slice(s![rows.clone(), cols.clone()]);
                let mut scores = qh.dot(&kh.t());
                scores *= scale;
                softmax_rows(&mut scores);
                attended
                    .slice_mut(s![rows.clone(), cols])
                    .assign(&scores.dot(&vh));
            }
        }
        let attn = self.output.forward(attended.view());
        flat += &attn;
        self.norm1.forward_inplace(flat.view_mut());

        let mut hidden = self.ff1.forward(flat.view());
        relu_inplace(&mut hidden);
        let ff = self.ff2.forward(hidden.view());
        flat += &ff;
        self.norm2.forward_inplace(flat.view_mut());
    }
}

/// Mean over the first axis that does not depend on the order of the
/// entries: each column is sorted, then averaged as offsets from its
/// minimum, so identical entries average to themselves exactly.
pub(crate) fn order_free_mean(stack: &[Array2<f32>]) -> Array2<f32> {
    let dim = stack[0].dim();
    let m = stack.len() as f32;
    let mut out = Array2::zeros(dim);
    let mut buf = vec![0f32; stack.len()];
    for ((r, c), o) in out.indexed_iter_mut() {
        for (slot, s) in buf.iter_mut().zip(stack) {
            *slot = s[[r, c]];
        }
        buf.sort_by(f32::total_cmp);
        let base = buf[0];
        let offset: f32 = buf.iter().map(|v| v - base).sum();
        *o = base + offset / m;
    }
    out
}

/// Transform-average-concatenate across microphones.
#[derive(Debug, Clone, PartialEq)]
pub struct Tac {
    pub transform: Linear,
    pub average: Linear,
    /// Acts on `[own transform, transformed average]`; stored as the two
    /// halves of the `features x 2 features` projection.
    pub concat_own: Linear,
    pub concat_avg: Linear,
    pub slopes: [f32; 3],
    pub norm: LayerNorm,
}

impl Tac {
    pub(crate) fn random(rng: &mut ChaCha8Rng, features: usize) -> Self {
        let transform = Linear::random(rng, features, features);
        let average = Linear::random(rng, features, features);
        // Both halves share the fan-in of the full concatenated input.
        let concat = Linear::random(rng, 2 * features, features);
        let concat_own = Linear {
            weight: concat.weight.slice(s![.., ..features]).to_owned(),
            bias: concat.bias.clone(),
        };
        let concat_avg = Linear {
            weight: concat.weight.slice(s![.., features..]).to_owned(),
            bias: Array1::zeros(features),
        };
        Self {
            transform,
            average,
            concat_own,
            concat_avg,
            slopes: [PRELU_INIT; 3],
            norm: LayerNorm::new(features),
        }
    }

    pub(crate) fn linears_mut(&mut self) -> [&mut Linear; 4] {
        [
            &mut self.transform,
            &mut self.average,
            &mut self.concat_own,
            &mut self.concat_avg,
        ]
    }

    pub(crate) fn is_finite(&self) -> bool {
        [&self.transform, &self.average, &self.concat_own, &self.concat_avg]
            .iter()
            .all(|l| l.is_finite())
    }

    /// `mics[m]` is `positions x features`; updated in place.
    pub fn forward(&self, mics: &mut [Array2<f32>]) {
        let transformed: Vec<Array2<f32>> = mics
            .iter()
            .map(|z| {
                let mut u = self.transform.forward(z.view());
                prelu_inplace(&mut u, self.slopes[0]);
                u
            })
            .collect();
        let mut avg = self.average.forward(order_free_mean(&transformed).view());
        prelu_inplace(&mut avg, self.slopes[1]);
        let shared = self.concat_avg.forward(avg.view());
        for (z, u) in mics.iter_mut().zip(&transformed) {
            let mut o = self.concat_own.forward(u.view());
            o += &shared;
            prelu_inplace(&mut o, self.slopes[2]);
            *z += &o;
            self.norm.forward_inplace(z.view_mut());
        }
    }
}

/// Rows of `x`, `positions x features`, grouped as `(outer, inner)` and
/// reordered so that `inner` becomes the sequence axis: returns
/// `outer x inner x features` when `intra`, otherwise `inner x outer x features`.
pub(crate) fn regroup(x: &Array2<f32>, outer: usize, inner: usize, intra: bool) -> Array3<f32> {
    let features = x.ncols();
    let grid = x
        .view()
        .into_shape_with_order((outer, inner, features))
        .expect("positions = outer * inner");
    if intra {
        grid.to_owned()
    } else {
        grid.permuted_axes([1, 0, 2]).as_standard_layout().into_owned()
    }
}

/// Inverse of [`regroup`].
pub(crate) fn ungroup(x: Array3<f32>, intra: bool) -> Array2<f32> {
    let x = if intra {
        x
    } else {
        x.permuted_axes([1, 0, 2]).as_standard_layout().into_owned()
    };
    let (a, b, f) = x.dim();
    x.into_shape_with_order((a * b, f)).expect("contiguous")
}

pub(crate) fn sigmoid_inplace(x: &mut Array2<f32>) {
    x.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp()));
}
