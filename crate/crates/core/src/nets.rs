//! CTR backends on top of the embedding layer.
//!
//! All three backends end in the same ReLU MLP with a single sigmoid logit.
//! They differ in how the history embeddings are pooled before being
//! concatenated with the target embedding:
//!
//! * `Mlp`: `[Σ e_j, t]`
//! * `Pnn`: `[s, t, s ⊙ t]` with `s = Σ e_j`
//! * `Din`: `[Σ a_j e_j, t]` with `a = softmax(e_j·t / √d)`

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::softmax;

/// Hidden widths used by default (`input × 400 × 120 × 1`).
pub const DEFAULT_HIDDEN: [usize; 2] = [400, 120];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Mlp,
    Pnn,
    Din,
}

impl Backend {
    /// Width of the MLP input for embedding dimension `dim`.
    pub fn feature_dim(self, dim: usize) -> usize {
        match self {
            Backend::Mlp | Backend::Din => 2 * dim,
            Backend::Pnn => 3 * dim,
        }
    }
}

/// One affine layer; `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }
}

/// Weights of a `D`-layer ReLU MLP with a scalar sigmoid head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

impl MlpParams {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("MLP needs at least one layer"));
        }
        for (t, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.fan_out() {
                return Err(Error::invalid(format!("layer {t}: bias length mismatch")));
            }
            if let Some(next) = layers.get(t + 1) {
                if next.fan_in() != layer.fan_out() {
                    return Err(Error::invalid(format!(
                        "layer {} expects {} inputs, layer {t} produces {}",
                        t + 1,
                        next.fan_in(),
                        layer.fan_out()
                    )));
                }
            }
        }
        if layers.last().map(Dense::fan_out) != Some(1) {
            return Err(Error::invalid("final layer must have a single output"));
        }
        Ok(MlpParams { layers })
    }

    /// Glorot-uniform weights, zero biases. `widths` lists every layer size
    /// from input to the final `1`.
    pub fn init(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("need at least input and output widths"));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    weight: Array2::from_shape_simple_fn((fan_out, fan_in), || {
                        rng.gen_range(-limit..=limit)
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    /// Mean spectral norm over all layer matrices, including the output layer.
    pub fn mean_spectral_norm(&self) -> f64 {
        let total: f64 = self.layers.iter().map(|l| spectral_norm(&l.weight)).sum();
        total / self.depth() as f64
    }

    /// Single-example prediction.
    pub fn predict(&self, input: ArrayView1<f64>) -> Result<Prediction> {
        let x = input.insert_axis(Axis(0));
        let cache = self.forward(x)?;
        Ok(Prediction::from_logit(cache.logits[0]))
    }

    /// Batched forward pass; rows of `x` are examples.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "MLP expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let last = self.depth() - 1;
        let mut inputs = Vec::with_capacity(self.depth());
        let mut h = x.to_owned();
        for (t, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            inputs.push(h);
            if t < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        let logits = h.index_axis_move(Axis(1), 0);
        Ok(ForwardCache { inputs, logits })
    }

    /// Reverse pass given `∂loss/∂logit` per example. Returns parameter
    /// gradients and `∂loss/∂input`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_logits: ArrayView1<f64>,
    ) -> (MlpParams, Array2<f64>) {
        let mut grads = self.zeros_like();
        let mut dz = grad_logits.to_owned().insert_axis(Axis(1));
        for t in (0..self.depth()).rev() {
            let h_in = &cache.inputs[t];
            grads.layers[t].weight = dz.t().dot(h_in);
            grads.layers[t].bias = dz.sum_axis(Axis(0));
            let mut dh = dz.dot(&self.layers[t].weight);
            if t > 0 {
                // ReLU gate; derivative at exactly zero taken as zero.
                dh.zip_mut_with(h_in, |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            dz = dh;
        }
        (grads, dz)
    }
}

/// Activations saved by [`MlpParams::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (`h⁰ … h^{D-1}`).
    pub inputs: Vec<Array2<f64>>,
    pub logits: Array1<f64>,
}

impl ForwardCache {
    pub fn probabilities(&self) -> Array1<f64> {
        self.logits.mapv(sigmoid)
    }
}

/// Click probability, kept in logit form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    logit: f64,
}

impl Prediction {
    pub fn from_logit(logit: f64) -> Self {
        Prediction { logit }
    }

    pub fn logit(self) -> f64 {
        self.logit
    }

    pub fn p(self) -> f64 {
        sigmoid(self.logit)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy and its derivative with respect to the logit.
pub fn cross_entropy(pred: Prediction, label: u8) -> (f64, f64) {
    let z = pred.logit;
    let y = f64::from(label);
    // softplus(z) - y·z, stable for large |z|
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    (softplus - y * z, sigmoid(z) - y)
}

/// `|p - y|`; bounded by 1.
pub fn abs_loss(pred: Prediction, label: u8) -> f64 {
    (pred.p() - f64::from(label)).abs()
}

pub fn sum_pool(history: &[ArrayView1<f64>]) -> Result<Array1<f64>> {
    let first = history
        .first()
        .ok_or_else(|| Error::invalid("cannot pool an empty history"))?;
    let mut out = first.to_owned();
    for e in &history[1..] {
        if e.len() != out.len() {
            return Err(Error::invalid("history embeddings differ in dimension"));
        }
        out += e;
    }
    Ok(out)
}

/// `[pooled, target, pooled ⊙ target]`.
pub fn pnn_features(pooled: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<Array1<f64>> {
    if pooled.len() != target.len() {
        return Err(Error::invalid("pooled and target dimensions differ"));
    }
    let d = pooled.len();
    let mut out = Array1::zeros(3 * d);
    out.slice_mut(s![..d]).assign(&pooled);
    out.slice_mut(s![d..2 * d]).assign(&target);
    out.slice_mut(s![2 * d..]).assign(&(&pooled * &target));
    Ok(out)
}

/// Target-attentive pooling; returns the pooled vector and the attention
/// weights.
pub fn din_pool(
    history: &[ArrayView1<f64>],
    target: ArrayView1<f64>,
) -> Result<(Array1<f64>, Vec<f64>)> {
    if history.is_empty() {
        return Err(Error::invalid("cannot pool an empty history"));
    }
    if history.iter().any(|e| e.len() != target.len()) {
        return Err(Error::invalid("history and target dimensions differ"));
    }
    let scale = (target.len() as f64).sqrt().recip();
    let scores: Vec<f64> = history.iter().map(|e| e.dot(&target) * scale).collect();
    let weights = softmax(&scores);
    let mut out = Array1::zeros(target.len());
    for (e, &a) in history.iter().zip(&weights) {
        out.scaled_add(a, e);
    }
    Ok((out, weights))
}

/// What the pooling step keeps for its backward pass.
#[derive(Debug, Clone)]
pub enum PoolCache {
    Sum {
        pooled: Array1<f64>,
    },
    Attention {
        pooled: Array1<f64>,
        weights: Vec<f64>,
    },
}

/// Builds the MLP input for one example.
pub fn features(
    backend: Backend,
    history: &[ArrayView1<f64>],
    target: ArrayView1<f64>,
) -> Result<(Array1<f64>, PoolCache)> {
    let d = target.len();
    match backend {
        Backend::Mlp | Backend::Pnn => {
            let pooled = sum_pool(history)?;
            if pooled.len() != d {
                return Err(Error::invalid("history and target dimensions differ"));
            }
            let feats = if backend == Backend::Pnn {
                pnn_features(pooled.view(), target)?
            } else {
                concat(pooled.view(), target)
            };
            Ok((feats, PoolCache::Sum { pooled }))
        }
        Backend::Din => {
            let (pooled, weights) = din_pool(history, target)?;
            let feats = concat(pooled.view(), target);
            Ok((feats, PoolCache::Attention { pooled, weights }))
        }
    }
}

fn concat(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(a.len() + b.len());
    out.slice_mut(s![..a.len()]).assign(&a);
    out.slice_mut(s![a.len()..]).assign(&b);
    out
}

/// Gradients of one example's features back to its history and target
/// embeddings.
pub fn features_backward(
    backend: Backend,
    grad_features: ArrayView1<f64>,
    cache: &PoolCache,
    history: &[ArrayView1<f64>],
    target: ArrayView1<f64>,
) -> (Vec<Array1<f64>>, Array1<f64>) {
    let d = target.len();
    let g_first = grad_features.slice(s![..d]);
    let g_target = grad_features.slice(s![d..2 * d]);
    match (backend, cache) {
        (Backend::Mlp, PoolCache::Sum { .. }) => {
            let g = g_first.to_owned();
            (vec![g; history.len()], g_target.to_owned())
        }
        (Backend::Pnn, PoolCache::Sum { pooled }) => {
            let g_prod = grad_features.slice(s![2 * d..]);
            let g_pooled = &g_first + &(&g_prod * &target);
            let g_t = &g_target + &(&g_prod * pooled);
            (vec![g_pooled; history.len()], g_t)
        }
        (Backend::Din, PoolCache::Attention { pooled, weights }) => {
            let scale = (d as f64).sqrt().recip();
            let g_u = g_first;
            let u_dot = pooled.dot(&g_u);
            let mut g_t = g_target.to_owned();
            let grads = history
                .iter()
                .zip(weights)
                .map(|(e, &a)| {
                    let ds = a * (e.dot(&g_u) - u_dot);
                    let mut g = g_u.to_owned() * a;
                    g.scaled_add(ds * scale, &target);
                    g_t.scaled_add(ds * scale, e);
                    g
                })
                .collect();
            (grads, g_t)
        }
        _ => unreachable!("pool cache does not match backend"),
    }
}

/// Largest singular value by power iteration on `WᵀW`.
///
/// Starts from the all-ones vector, so relabelling inputs or outputs leaves
/// the iterates unchanged.
pub fn spectral_norm(w: &Array2<f64>) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    let mut v = Array1::from_elem(w.ncols(), 1.0 / (w.ncols() as f64).sqrt());
    let mut sigma = 0.0;
    for _ in 0..500 {
        let u = w.dot(&v);
        let next_sigma = u.dot(&u).sqrt();
        if next_sigma == 0.0 {
            return 0.0;
        }
        let mut next_v = w.t().dot(&u);
        let n = next_v.dot(&next_v).sqrt();
        if n == 0.0 {
            return next_sigma;
        }
        next_v /= n;
        v = next_v;
        if (next_sigma - sigma).abs() <= 1e-14 * next_sigma {
            return next_sigma;
        }
        sigma = next_sigma;
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_net(layers: &[(f64, f64)]) -> MlpParams {
        MlpParams::new(
            layers
                .iter()
                .map(|&(w, b)| Dense {
                    weight: array![[w]],
                    bias: array![b],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn pooling_examples() {
        let a = array![1.0, 2.0];
        let b = array![3.0, 4.0];
        assert_eq!(sum_pool(&[a.view(), b.view()]).unwrap(), array![4.0, 6.0]);
        assert_eq!(sum_pool(&[a.view()]).unwrap(), a);
        let neg = -&a;
        assert_eq!(sum_pool(&[a.view(), neg.view()]).unwrap(), array![0.0, 0.0]);
        assert!(sum_pool(&[]).is_err());
    }

    #[test]
    fn forward_examples() {
        let zero = MlpParams::new(vec![Dense::zeros(3, 4), Dense::zeros(4, 1)]).unwrap();
        assert_eq!(
            zero.predict(array![1.0, -2.0, 3.0].view()).unwrap().p(),
            0.5
        );

        let one = scalar_net(&[(2.0, 0.0)]);
        assert_abs_diff_eq!(
            one.predict(array![1.0].view()).unwrap().p(),
            0.8807970779778823,
            epsilon = 1e-12
        );

        let dead = scalar_net(&[(-1.0, 0.0), (5.0, 0.3)]);
        assert_abs_diff_eq!(
            dead.predict(array![3.0].view()).unwrap().p(),
            sigmoid(0.3),
            epsilon = 1e-15
        );
        assert!(dead.predict(array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn rejects_bad_layer_chain() {
        assert!(MlpParams::new(vec![Dense::zeros(2, 3), Dense::zeros(4, 1)]).is_err());
        assert!(MlpParams::new(vec![Dense::zeros(2, 2)]).is_err());
    }

    #[test]
    fn pnn_examples() {
        let f = pnn_features(array![1.0, 2.0].view(), array![3.0, 4.0].view()).unwrap();
        assert_eq!(f, array![1.0, 2.0, 3.0, 4.0, 3.0, 8.0]);
        let f = pnn_features(array![1.0, 2.0].view(), array![0.0, 0.0].view()).unwrap();
        assert_eq!(f.slice(s![4..]), array![0.0, 0.0]);
        let ones = array![1.0, 1.0];
        let f = pnn_features(ones.view(), ones.view()).unwrap();
        assert_eq!(f.slice(s![4..]), ones);
        assert!(pnn_features(ones.view(), array![1.0].view()).is_err());
    }

    #[test]
    fn din_examples() {
        let v = array![0.3, -1.0];
        let t = array![2.0, 1.0];
        let (out, _) = din_pool(&[v.view(), v.view(), v.view()], t.view()).unwrap();
        for k in 0..2 {
            assert_abs_diff_eq!(out[k], v[k], epsilon = 1e-15);
        }

        let u = array![1.0, 0.0];
        let w = array![0.0, 1.0];
        let t = array![1.0, 1.0];
        let (out, weights) = din_pool(&[u.view(), w.view()], t.view()).unwrap();
        assert_abs_diff_eq!(weights[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(out[0], 0.5, epsilon = 1e-15);

        // Scaled scores (ln 2, 0): u·t/√2 = ln 2 with t = (√2 ln 2, 0).
        let t = array![2f64.sqrt() * std::f64::consts::LN_2, 0.0];
        let (out, weights) = din_pool(&[u.view(), w.view()], t.view()).unwrap();
        assert_abs_diff_eq!(weights[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(out[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(out[1], 1.0 / 3.0, epsilon = 1e-14);
        assert!(din_pool(&[], t.view()).is_err());
    }

    #[test]
    fn loss_examples() {
        let half = Prediction::from_logit(0.0);
        assert_abs_diff_eq!(
            cross_entropy(half, 1).0,
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            cross_entropy(half, 0).0,
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        let p9 = Prediction::from_logit((0.9f64 / 0.1).ln());
        assert_abs_diff_eq!(cross_entropy(p9, 1).0, 0.105360515657826, epsilon = 1e-12);
        assert_abs_diff_eq!(cross_entropy(p9, 1).1, 0.9 - 1.0, epsilon = 1e-12);
        let extreme = Prediction::from_logit(800.0);
        assert!(cross_entropy(extreme, 0).0.is_finite());

        assert_eq!(abs_loss(half, 1), 0.5);
        assert_eq!(abs_loss(Prediction::from_logit(f64::INFINITY), 1), 0.0);
        let quarter = Prediction::from_logit((0.25f64 / 0.75).ln());
        assert_abs_diff_eq!(abs_loss(quarter, 0), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = MlpParams::init(&[4, 6, 1], &mut rng).unwrap();
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i + j) as f64 * 0.1);
        let cache = net.forward(x.view()).unwrap();
        let (g, gx) = net.backward(&cache, Array1::zeros(3).view());
        assert!(g.layers.iter().all(|l| l.weight.iter().all(|&v| v == 0.0)));
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dead_relu_blocks_incoming_gradient() {
        let net = MlpParams::new(vec![
            Dense {
                weight: array![[1.0, 1.0], [-1.0, -1.0]],
                bias: array![0.0, 0.0],
            },
            Dense {
                weight: array![[1.0, 1.0]],
                bias: array![0.0],
            },
        ])
        .unwrap();
        let x = array![[1.0, 2.0]];
        let cache = net.forward(x.view()).unwrap();
        let (g, _) = net.backward(&cache, array![1.0].view());
        assert_eq!(g.layers[0].weight.row(1), array![0.0, 0.0]);
        assert_eq!(g.layers[0].weight.row(0), array![1.0, 2.0]);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let w = array![[3.0, 0.0], [0.0, -5.0], [0.0, 0.0]];
        assert_abs_diff_eq!(spectral_norm(&w), 5.0, epsilon = 1e-9);
        assert_eq!(spectral_norm(&Array2::zeros((2, 2))), 0.0);
    }
}
