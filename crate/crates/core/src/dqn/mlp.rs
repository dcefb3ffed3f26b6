//! Fully connected network with rectifier hidden layers and a linear output layer.
//!
//! Parameters live in one flat vector so optimizers can treat every model alike. Layer `k`
//! occupies `weights (out x in, row-major)` followed by `biases (out)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations of one forward pass; `acts[0]` is the input.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pub acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Inputs of every layer for a batch of `n` rows, each `n x width` row-major.
#[derive(Debug, Clone, Default)]
pub struct BatchCache {
    pub n: usize,
    pub acts: Vec<Vec<f64>>,
}

/// Dot product with four independent partial sums.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn param_len(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// All-zero network with layer widths `sizes` (input first, output last).
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least an input and an output layer");
        Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_len(sizes)],
        }
    }

    /// Weights uniform in `+-sqrt(6/fan_in)` (hidden) or `+-sqrt(1/fan_in)` (output); zero biases.
    pub fn random<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let layers = net.layer_count();
        for k in 0..layers {
            let fan_in = sizes[k] as f64;
            let bound = if k + 1 == layers { (1.0 / fan_in).sqrt() } else { (6.0 / fan_in).sqrt() };
            let (w, _) = net.layer_mut(k);
            for x in w.iter_mut() {
                *x = rng.gen_range(-bound..bound);
            }
        }
        net
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && params.len() == param_len(sizes)).then(|| Mlp {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offset(&self, k: usize) -> usize {
        param_len(&self.sizes[..=k])
    }

    /// `(weights, biases)` of layer `k`.
    pub fn layer(&self, k: usize) -> (&[f64], &[f64]) {
        let (i, o) = (self.sizes[k], self.sizes[k + 1]);
        let start = self.offset(k);
        let (w, b) = self.params[start..start + i * o + o].split_at(i * o);
        (w, b)
    }

    pub fn layer_mut(&mut self, k: usize) -> (&mut [f64], &mut [f64]) {
        let (i, o) = (self.sizes[k], self.sizes[k + 1]);
        let start = self.offset(k);
        self.params[start..start + i * o + o].split_at_mut(i * o)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cache = ForwardCache::default();
        self.forward_cached(x, &mut cache);
        cache.acts.pop().unwrap()
    }

    /// Forward pass keeping every layer's output (post-activation) for [`Mlp::backward`].
    pub fn forward_cached(&self, x: &[f64], cache: &mut ForwardCache) {
        self.forward_impl(x, cache)
    }

    fn forward_impl(&self, x: &[f64], cache: &mut ForwardCache) {
        assert_eq!(x.len(), self.input_dim(), "input dimension");
        let layers = self.layer_count();
        cache.acts.resize(layers + 1, Vec::new());
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        let mut start = 0;
        for k in 0..layers {
            let (i, o) = (self.sizes[k], self.sizes[k + 1]);
            let w = &self.params[start..start + i * o];
            let b = &self.params[start + i * o..start + i * o + o];
            start += i * o + o;
            let (prev, rest) = cache.acts.split_at_mut(k + 1);
            let input = &prev[k];
            let out = &mut rest[0];
            out.clear();
            let last = k + 1 == layers;
            for r in 0..o {
                let z = b[r] + dot(&w[r * i..(r + 1) * i], input);
                out.push(if last { z } else { z.max(0.0) });
            }
        }
    }

    /// Outputs for `n` inputs stored row-major in `x` (`n x input_dim`); result is
    /// `n x output_dim`.
    pub fn forward_batch(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut cache = BatchCache::default();
        self.hidden_batch(x, n, &mut cache);
        let k = self.layer_count() - 1;
        let mut out = Vec::new();
        self.affine_batch(k, cache.acts.last().unwrap(), n, &mut out);
        out
    }

    /// Output `index[r]` of each row of `x`, keeping hidden activations for
    /// [`Mlp::backward_batch_selected`].
    pub fn forward_batch_selected(&self, x: &[f64], n: usize, index: &[usize], cache: &mut BatchCache) -> Vec<f64> {
        assert_eq!(index.len(), n, "one output index per row");
        self.hidden_batch(x, n, cache);
        let k = self.layer_count() - 1;
        let (w, b) = self.layer(k);
        let i = self.sizes[k];
        let h = cache.acts.last().unwrap();
        index
            .iter()
            .enumerate()
            .map(|(r, &a)| b[a] + dot(&w[a * i..(a + 1) * i], &h[r * i..(r + 1) * i]))
            .collect()
    }

    /// Accumulates the gradient of `sum_r d[r] * out[r][index[r]]` into `grad`.
    pub fn backward_batch_selected(&self, cache: &BatchCache, index: &[usize], d: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size");
        let n = cache.n;
        let layers = self.layer_count();
        let k = layers - 1;
        let i = self.sizes[k];
        let start = self.offset(k);
        let h = &cache.acts[k];
        let w = &self.params[start..start + i * self.sizes[k + 1]];
        let mut delta = vec![0.0; n * i];
        {
            let (gw, gb) = grad[start..].split_at_mut(i * self.sizes[k + 1]);
            for (r, (&a, &dr)) in index.iter().zip(d).enumerate() {
                gb[a] += dr;
                let hr = &h[r * i..(r + 1) * i];
                for (g, v) in gw[a * i..(a + 1) * i].iter_mut().zip(hr) {
                    *g += dr * v;
                }
                if k > 0 {
                    for ((dl, wv), hv) in delta[r * i..(r + 1) * i].iter_mut().zip(&w[a * i..(a + 1) * i]).zip(hr) {
                        *dl = if *hv > 0.0 { dr * wv } else { 0.0 };
                    }
                }
            }
        }
        for k in (0..k).rev() {
            let (i, o) = (self.sizes[k], self.sizes[k + 1]);
            let start = self.offset(k);
            let input = &cache.acts[k];
            let (gw, gb) = grad[start..start + i * o + o].split_at_mut(i * o);
            // gW (o x i) += delta^T (o x n) . input (n x i)
            unsafe {
                matrixmultiply::dgemm(
                    o, n, i, 1.0,
                    delta.as_ptr(), 1, o as isize,
                    input.as_ptr(), i as isize, 1,
                    1.0,
                    gw.as_mut_ptr(), i as isize, 1,
                );
            }
            for row in delta.chunks_exact(o) {
                for (g, v) in gb.iter_mut().zip(row) {
                    *g += v;
                }
            }
            if k == 0 {
                break;
            }
            let w = &self.params[start..start + i * o];
            let mut prev = vec![0.0; n * i];
            // delta_prev (n x i) = delta (n x o) . W (o x i)
            unsafe {
                matrixmultiply::dgemm(
                    n, o, i, 1.0,
                    delta.as_ptr(), o as isize, 1,
                    w.as_ptr(), i as isize, 1,
                    0.0,
                    prev.as_mut_ptr(), i as isize, 1,
                );
            }
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    /// `out = x . W_k^T + b_k` for `n` rows.
    fn affine_batch(&self, k: usize, x: &[f64], n: usize, out: &mut Vec<f64>) {
        let (i, o) = (self.sizes[k], self.sizes[k + 1]);
        let (w, b) = self.layer(k);
        out.clear();
        for _ in 0..n {
            out.extend_from_slice(b);
        }
        unsafe {
            matrixmultiply::dgemm(
                n, i, o, 1.0,
                x.as_ptr(), i as isize, 1,
                w.as_ptr(), 1, i as isize,
                1.0,
                out.as_mut_ptr(), o as isize, 1,
            );
        }
    }

    /// Rectified hidden activations; `cache.acts[k]` holds the input of layer `k`.
    fn hidden_batch(&self, x: &[f64], n: usize, cache: &mut BatchCache) {
        assert_eq!(x.len(), n * self.input_dim(), "batch input size");
        let layers = self.layer_count();
        cache.n = n;
        cache.acts.resize(layers, Vec::new());
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        for k in 0..layers - 1 {
            let (prev, rest) = cache.acts.split_at_mut(k + 1);
            self.affine_batch(k, &prev[k], n, &mut rest[0]);
            for v in rest[0].iter_mut() {
                *v = v.max(0.0);
            }
        }
    }

    /// Accumulates `d(loss)/d(params)` into `grad` given `d(loss)/d(output)`.
    ///
    /// The rectifier's derivative at exactly zero is taken as zero.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size");
        let layers = self.layer_count();
        let mut delta = grad_out.to_vec();
        for k in (0..layers).rev() {
            let (i, o) = (self.sizes[k], self.sizes[k + 1]);
            let start = self.offset(k);
            let w = &self.params[start..start + i * o];
            let input = &cache.acts[k];
            let mut next = vec![0.0; i];
            {
                let (gw, gb) = grad[start..start + i * o + o].split_at_mut(i * o);
                for r in 0..o {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    gb[r] += d;
                    let row = &w[r * i..(r + 1) * i];
                    let grow = &mut gw[r * i..(r + 1) * i];
                    for c in 0..i {
                        grow[c] += d * input[c];
                    }
                    if k > 0 {
                        for c in 0..i {
                            next[c] += d * row[c];
                        }
                    }
                }
            }
            if k > 0 {
                for (n, a) in next.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *n = 0.0;
                    }
                }
            }
            delta = next;
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    inputs: usize,
    outputs: usize,
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

impl Serialize for Mlp {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let layers: Vec<LayerRepr> = (0..self.layer_count())
            .map(|k| {
                let (w, b) = self.layer(k);
                let i = self.sizes[k];
                LayerRepr {
                    inputs: i,
                    outputs: self.sizes[k + 1],
                    weights: w.chunks(i).map(<[f64]>::to_vec).collect(),
                    biases: b.to_vec(),
                }
            })
            .collect();
        layers.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Mlp {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let layers = Vec::<LayerRepr>::deserialize(deserializer)?;
        if layers.is_empty() {
            return Err(D::Error::custom("network has no layers"));
        }
        let mut sizes = vec![layers[0].inputs];
        let mut params = Vec::new();
        for (k, l) in layers.iter().enumerate() {
            if l.inputs != *sizes.last().unwrap() {
                return Err(D::Error::custom(format!("layer {k} input width does not chain")));
            }
            if l.weights.len() != l.outputs
                || l.biases.len() != l.outputs
                || l.weights.iter().any(|r| r.len() != l.inputs)
            {
                return Err(D::Error::custom(format!("layer {k} has inconsistent shapes")));
            }
            params.extend(l.weights.iter().flatten());
            params.extend(&l.biases);
            sizes.push(l.outputs);
        }
        Ok(Mlp { sizes, params })
    }
}
