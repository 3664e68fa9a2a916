//! Small feed-forward networks with hand-written backward passes.
//!
//! Parameters of an [`Mlp`] live in one flat vector, layer by layer, each
//! layer storing its row-major weight matrix (`out × in`) followed by its
//! bias. Gradients use the same layout, so the optimizer works on plain
//! slices.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngState;
use crate::simplex::{RestrictedSimplexVector, SimplexError, SimplexVector};

/// Default floor of the policy head.
pub const DEFAULT_ETA: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("expected input of dimension {want}, got {got}")]
    ShapeMismatch { want: usize, got: usize },
    #[error("network needs at least an input and an output size")]
    NoLayers,
    #[error("checkpoint layer {index}: {reason}")]
    BadCheckpoint { index: usize, reason: String },
    #[error(transparent)]
    Simplex(#[from] SimplexError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A dense row-major matrix view used for norms and checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Matrix::new(n, n, data)
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.data.iter_mut().for_each(|x| *x *= c);
        self
    }

    /// Largest singular value by power iteration on `WᵀW`.
    pub fn spectral_norm(&self) -> f64 {
        if self.data.iter().all(|&x| x == 0.0) {
            return 0.0;
        }
        // a fixed, non-degenerate start vector
        let mut v: Vec<f64> = (0..self.cols)
            .map(|i| 1.0 + 0.1 * ((i as f64 + 1.0) * 0.618_033_988_75).fract())
            .collect();
        normalize(&mut v);
        let mut wv = vec![0.0; self.rows];
        let mut sigma = 0.0;
        for _ in 0..10_000 {
            for (r, out) in wv.iter_mut().enumerate() {
                let row = &self.data[r * self.cols..(r + 1) * self.cols];
                *out = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            let mut next = vec![0.0; self.cols];
            for (r, &y) in wv.iter().enumerate() {
                let row = &self.data[r * self.cols..(r + 1) * self.cols];
                for (n, a) in next.iter_mut().zip(row) {
                    *n += a * y;
                }
            }
            let lambda = normalize(&mut next);
            v = next;
            let s = lambda.sqrt();
            if (s - sigma).abs() <= 1e-14 * s {
                sigma = s;
                break;
            }
            sigma = s;
        }
        sigma
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// A rectifier MLP: linear layers with ReLU between them and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// `inputs[l]` is the input of layer `l`; the last entry is the output.
    inputs: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    /// All-zero parameters for the layer sizes `[d, h1, …, out]`.
    pub fn zeros(sizes: &[usize]) -> Result<Self, NetError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NetError::NoLayers);
        }
        let n = sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// Fan-in scaled uniform initialization, `U(−1/√fan_in, 1/√fan_in)`.
    pub fn init(sizes: &[usize], rng: &mut RngState) -> Result<Self, NetError> {
        let mut net = Mlp::zeros(sizes)?;
        let mut off = 0;
        for w in sizes.windows(2) {
            let (fan_in, out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[off..off + out * fan_in + out] {
                *p = rng.random_range(-bound..bound);
            }
            off += out * fan_in + out;
        }
        Ok(net)
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

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.sizes[..layer + 1]
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    /// Weight matrix of `layer` as an `out × in` matrix.
    pub fn weight(&self, layer: usize) -> Matrix {
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer);
        Matrix::new(o, i, self.params[off..off + o * i].to_vec())
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer) + o * i;
        &self.params[off..off + o]
    }

    pub fn set_layer(&mut self, layer: usize, weight: &Matrix, bias: &[f64]) {
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        assert_eq!((weight.rows, weight.cols, bias.len()), (o, i, o));
        let off = self.layer_offset(layer);
        self.params[off..off + o * i].copy_from_slice(&weight.data);
        self.params[off + o * i..off + o * i + o].copy_from_slice(bias);
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        let mut cache = MlpCache::default();
        self.forward_cached(x, &mut cache)?;
        Ok(cache.inputs.pop().unwrap())
    }

    pub fn forward_cached<'c>(
        &self,
        x: &[f64],
        cache: &'c mut MlpCache,
    ) -> Result<&'c [f64], NetError> {
        if x.len() != self.input_dim() {
            return Err(NetError::ShapeMismatch {
                want: self.input_dim(),
                got: x.len(),
            });
        }
        let layers = self.num_layers();
        cache.inputs.resize(layers + 1, Vec::new());
        cache.inputs[0].clear();
        cache.inputs[0].extend_from_slice(x);
        let mut off = 0;
        for l in 0..layers {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let (w, rest) = self.params[off..].split_at(o * i);
            let b = &rest[..o];
            let (head, tail) = cache.inputs.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            out.clear();
            for r in 0..o {
                let row = &w[r * i..(r + 1) * i];
                let mut acc = b[r];
                for (a, v) in row.iter().zip(input) {
                    acc += a * v;
                }
                if l + 1 < layers && acc < 0.0 {
                    acc = 0.0;
                }
                out.push(acc);
            }
            off += o * i + o;
        }
        Ok(cache.output())
    }

    /// Accumulates `∂(grad_out · output)/∂params` into `grads`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        let layers = self.num_layers();
        let mut delta = grad_out.to_vec();
        let mut off = self.params.len();
        for l in (0..layers).rev() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            off -= o * i + o;
            let input = &cache.inputs[l];
            let w = &self.params[off..off + o * i];
            let (gw, gb) = grads[off..off + o * i + o].split_at_mut(o * i);
            for r in 0..o {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                gb[r] += d;
                for (g, v) in gw[r * i..(r + 1) * i].iter_mut().zip(input) {
                    *g += d * v;
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; i];
            for r in 0..o {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                for (p, a) in prev.iter_mut().zip(&w[r * i..(r + 1) * i]) {
                    *p += d * a;
                }
            }
            // ReLU mask: the input of layer l is the rectified output of layer l−1
            for (p, &v) in prev.iter_mut().zip(input) {
                if v <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}

/// Output of the η-floored softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub pi: RestrictedSimplexVector,
    pub logits: Vec<f64>,
}

/// `π = (1 − mη)·softmax(z) + η`, computed with max-subtraction.
pub fn floored_softmax(logits: &[f64], eta: f64) -> Vec<f64> {
    let m = logits.len();
    let s = softmax(logits);
    let c = 1.0 - m as f64 * eta;
    s.into_iter().map(|x| c * x + eta).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = s.iter().sum();
    s.iter_mut().for_each(|x| *x /= sum);
    s
}

/// Pulls `∂L/∂π` back through the floored head: `c·s_j (g_j − Σ_i g_i s_i)`.
pub fn floored_softmax_backward(softmax: &[f64], eta: f64, grad_pi: &[f64]) -> Vec<f64> {
    let c = 1.0 - softmax.len() as f64 * eta;
    let dot: f64 = softmax.iter().zip(grad_pi).map(|(s, g)| s * g).sum();
    softmax
        .iter()
        .zip(grad_pi)
        .map(|(s, g)| c * s * (g - dot))
        .collect()
}

/// A policy network: an [`Mlp`] followed by the η-floored softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub mlp: Mlp,
    pub eta: f64,
}

impl PolicyNet {
    pub fn new(d: usize, hidden: &[usize], m: usize, eta: f64, rng: &mut RngState) -> Result<Self, NetError> {
        let mut sizes = vec![d];
        sizes.extend_from_slice(hidden);
        sizes.push(m);
        if eta < 0.0 || eta * m as f64 > 1.0 {
            return Err(SimplexError::BadEta { eta, m }.into());
        }
        Ok(PolicyNet {
            mlp: Mlp::init(&sizes, rng)?,
            eta,
        })
    }

    pub fn m(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn forward(&self, observation: &[f64]) -> Result<PolicyOutput, NetError> {
        let logits = self.mlp.forward(observation)?;
        let pi = floored_softmax(&logits, self.eta);
        Ok(PolicyOutput {
            pi: SimplexVector::from_trusted(pi).restrict(self.eta)?,
            logits,
        })
    }

    /// Forward pass that keeps the cache; returns `(π, softmax(z))`.
    pub fn forward_cached(
        &self,
        observation: &[f64],
        cache: &mut MlpCache,
    ) -> Result<(Vec<f64>, Vec<f64>), NetError> {
        let logits = self.mlp.forward_cached(observation, cache)?;
        let s = softmax(logits);
        let c = 1.0 - s.len() as f64 * self.eta;
        let pi = s.iter().map(|x| c * x + self.eta).collect();
        Ok((pi, s))
    }
}

/// A scalar value network.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub mlp: Mlp,
}

impl ValueNet {
    pub fn new(d: usize, hidden: &[usize], rng: &mut RngState) -> Result<Self, NetError> {
        let mut sizes = vec![d];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(ValueNet {
            mlp: Mlp::init(&sizes, rng)?,
        })
    }

    pub fn forward(&self, observation: &[f64]) -> Result<f64, NetError> {
        Ok(self.mlp.forward(observation)?[0])
    }
}

/// Adaptive-moment optimizer state for one flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One descent step along `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerRecord {
    /// `[out, in]`
    shape: [usize; 2],
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// On-disk form of a policy network: a shape manifest plus layer tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    kind: String,
    eta: f64,
    layers: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn from_policy(net: &PolicyNet) -> Self {
        let layers = (0..net.mlp.num_layers())
            .map(|l| {
                let w = net.mlp.weight(l);
                LayerRecord {
                    shape: [w.rows, w.cols],
                    weights: w.data,
                    bias: net.mlp.bias(l).to_vec(),
                }
            })
            .collect();
        Checkpoint {
            kind: "policy".into(),
            eta: net.eta,
            layers,
        }
    }

    pub fn into_policy(self) -> Result<PolicyNet, NetError> {
        if self.layers.is_empty() {
            return Err(NetError::NoLayers);
        }
        let mut sizes = vec![self.layers[0].shape[1]];
        for (index, l) in self.layers.iter().enumerate() {
            if l.shape[1] != *sizes.last().unwrap() {
                return Err(NetError::BadCheckpoint {
                    index,
                    reason: format!("input size {} does not chain", l.shape[1]),
                });
            }
            if l.weights.len() != l.shape[0] * l.shape[1] || l.bias.len() != l.shape[0] {
                return Err(NetError::BadCheckpoint {
                    index,
                    reason: "tensor length does not match shape".into(),
                });
            }
            sizes.push(l.shape[0]);
        }
        let mut mlp = Mlp::zeros(&sizes)?;
        for (index, l) in self.layers.iter().enumerate() {
            let w = Matrix::new(l.shape[0], l.shape[1], l.weights.clone());
            mlp.set_layer(index, &w, &l.bias);
        }
        let m = mlp.output_dim();
        if self.eta < 0.0 || self.eta * m as f64 > 1.0 {
            return Err(SimplexError::BadEta { eta: self.eta, m }.into());
        }
        Ok(PolicyNet { mlp, eta: self.eta })
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::validate;

    fn random_net(sizes: &[usize], seed: u64) -> Mlp {
        Mlp::init(sizes, &mut RngState::from_seed(seed)).unwrap()
    }

    #[test]
    fn zero_policy_is_uniform() {
        let net = PolicyNet {
            mlp: Mlp::zeros(&[4, 8, 8, 5]).unwrap(),
            eta: 1e-3,
        };
        let out = net.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        for &p in out.pi.entries() {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_head_hits_the_floor() {
        let eta = 1e-3;
        let mut logits = vec![0.0; 5];
        logits[2] = 1e3;
        let pi = floored_softmax(&logits, eta);
        assert!((pi[2] - (1.0 - 4.0 * eta)).abs() < 1e-15);
        for (i, &p) in pi.iter().enumerate() {
            if i != 2 {
                assert!((p - eta).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn huge_logits_keep_the_floor() {
        for eta in [0.0, 1e-6, 1e-3, 0.05, 0.2] {
            for scale in [1.0, 1e3, 1e6] {
                let logits = [scale, -scale, 0.5 * scale, -0.25 * scale, 0.0];
                let pi = floored_softmax(&logits, eta);
                assert!(pi.iter().all(|p| p.is_finite()));
                assert!(validate(&pi, eta).is_ok(), "eta {eta}, scale {scale}: {pi:?}");
            }
        }
    }

    #[test]
    fn policy_output_validates() {
        let net = PolicyNet::new(6, &[16, 16], 5, 0.01, &mut RngState::from_seed(3)).unwrap();
        let mut rng = RngState::from_seed(4);
        for _ in 0..100 {
            let obs: Vec<f64> = (0..6).map(|_| rng.random()).collect();
            let out = net.forward(&obs).unwrap();
            assert!(validate(out.pi.entries(), 0.01).is_ok());
        }
        assert!(matches!(
            net.forward(&[0.0; 3]),
            Err(NetError::ShapeMismatch { want: 6, got: 3 })
        ));
    }

    #[test]
    fn zero_value_net() {
        let v = ValueNet {
            mlp: Mlp::zeros(&[3, 4, 1]).unwrap(),
        };
        assert_eq!(v.forward(&[0.3, 0.1, 0.9]).unwrap(), 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = random_net(&[5, 7, 6, 3], 11);
        let x = [0.3, 0.9, 0.1, 0.5, 0.7];
        let g = [0.4, -1.2, 0.8];
        let mut cache = MlpCache::default();
        net.forward_cached(&x, &mut cache).unwrap();
        let mut grads = vec![0.0; net.params().len()];
        net.backward(&cache, &g, &mut grads);
        let f = |n: &Mlp| -> f64 {
            n.forward(&x).unwrap().iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for i in 0..net.params().len() {
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let up = f(&p);
            p.params_mut()[i] -= 2.0 * h;
            let down = f(&p);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grads[i]).abs() < 1e-7, "param {i}: {fd} vs {}", grads[i]);
        }
    }

    #[test]
    fn floored_jacobian_scales_softmax_jacobian() {
        let z = [0.3, -0.2, 1.1, 0.0];
        let s = softmax(&z);
        for eta in [0.0, 0.05, 0.2] {
            let c = 1.0 - 4.0 * eta;
            for j in 0..4 {
                let mut e = [0.0; 4];
                e[j] = 1.0;
                let floored = floored_softmax_backward(&s, eta, &e);
                let plain = floored_softmax_backward(&s, 0.0, &e);
                for (a, b) in floored.iter().zip(&plain) {
                    assert!((a - c * b).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn spectral_norms() {
        assert!((Matrix::identity(4).scaled(2.0).spectral_norm() - 2.0).abs() < 1e-12);
        assert_eq!(Matrix::new(2, 3, vec![0.0; 6]).spectral_norm(), 0.0);
        // diag(3, 1) rotated: singular values are 3 and 1
        let (c, s) = (0.6f64, 0.8f64);
        let m = Matrix::new(2, 2, vec![3.0 * c, -s, 3.0 * s, c]);
        assert!((m.spectral_norm() - 3.0).abs() < 1e-10);
        // rank one: u vᵀ has norm |u||v|
        let m = Matrix::new(2, 3, vec![1.0, 2.0, 2.0, 2.0, 4.0, 4.0]);
        assert!((m.spectral_norm() - 5f64.sqrt() * 3.0).abs() < 1e-10);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = vec![1.0, -1.0];
        let mut opt = Adam::new(2, 0.1);
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = PolicyNet::new(4, &[8, 8], 5, 1e-3, &mut RngState::from_seed(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.json");
        Checkpoint::from_policy(&net).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap().into_policy().unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn checkpoint_rejects_broken_chain() {
        let json = r#"{"kind":"policy","eta":0.001,"layers":[
            {"shape":[2,3],"weights":[0,0,0,0,0,0],"bias":[0,0]},
            {"shape":[2,4],"weights":[0,0,0,0,0,0,0,0],"bias":[0,0]}]}"#;
        let cp: Checkpoint = serde_json::from_str(json).unwrap();
        assert!(matches!(
            cp.into_policy(),
            Err(NetError::BadCheckpoint { index: 1, .. })
        ));
    }
}
