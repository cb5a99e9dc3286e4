//! Self-mined guidance: an adaptive gamma from the coarsest low band, the
//! structural prior `S = L^gamma`, its Sobel gradient `G`, and the prior loss.

use rand_chacha::ChaCha8Rng;

use crate::conv::ConvSpec;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Conv2d, Linear, ParamStore};
use crate::tensor::Tensor;
use crate::transforms;

/// Lower clamp applied before exponentiation.
pub const EPS: f64 = 1e-6;

/// Divisor mapping Sobel magnitudes to edge probabilities.
pub const EDGE_SCALE: f64 = 8.0;

const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct PriorPack {
    /// Structural prior, in `[0, 1]`.
    pub s: Tensor,
    /// Gradient prior, `>= 0`.
    pub g: Tensor,
    /// Per-channel exponent, `[c, 1, 1]`, in `(0, 1)`.
    pub gamma: Tensor,
}

/// `clamp(L / 2^level, EPS, 1)`. Negative entries mean the band did not come
/// from a `[0, 1]` image.
pub fn normalize_low(low: &Tensor, level: usize) -> Result<Tensor> {
    if let Some(v) = low.data().iter().find(|v| **v < 0.0 || !v.is_finite()) {
        return Err(Error::Precondition(format!("normalize_low: entry {v} is not a nonnegative band value")));
    }
    Ok(normalize_unchecked(low, level))
}

pub(crate) fn normalize_unchecked(low: &Tensor, level: usize) -> Tensor {
    let k = 1.0 / (1u64 << level) as f64;
    low.map(|v| (v * k).clamp(EPS, 1.0))
}

pub(crate) fn normalize_var(g: &mut Graph, low: Var, level: usize) -> Var {
    let k = 1.0 / (1u64 << level) as f64;
    let s = g.scale(low, k);
    g.clamp(s, EPS, 1.0)
}

/// `S = norm^gamma` and `G = sobel(S)` for a given exponent.
pub fn priors_from_gamma(low: &Tensor, level: usize, gamma: &Tensor) -> Result<PriorPack> {
    let norm = normalize_low(low, level)?;
    if gamma.shape() != [norm.channels(), 1, 1] {
        return Err(Error::Shape(format!("gamma {:?} does not match {} channels", gamma.shape(), norm.channels())));
    }
    let s = Tensor::from_fn(norm.channels(), norm.height(), norm.width(), |c, y, x| {
        norm.at(c, y, x).powf(gamma.data()[c])
    });
    let g = transforms::sobel_unchecked(&s);
    Ok(PriorPack { s, g, gamma: gamma.clone() })
}

/// Gamma predictor: two 3x3 convolutions, global average pooling and a
/// two-layer MLP projected to the image channel count.
#[derive(Debug, Clone)]
pub struct Smgm {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Graph handles of one prior-mining pass.
#[derive(Debug, Clone, Copy)]
pub struct PriorVars {
    pub s: Var,
    pub g: Var,
    pub gamma: Var,
}

impl Smgm {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, channels: usize, width: usize) -> Self {
        Self {
            conv1: Conv2d::new(store, rng, &format!("{prefix}.conv1"), channels, width, ConvSpec::same(3)),
            conv2: Conv2d::new(store, rng, &format!("{prefix}.conv2"), width, width, ConvSpec::same(3)),
            fc1: Linear::new(store, rng, &format!("{prefix}.fc1"), width, width),
            fc2: Linear::new(store, rng, &format!("{prefix}.fc2"), width, channels),
        }
    }

    pub fn gamma_var(&self, g: &mut Graph, norm: Var) -> Var {
        let x = self.conv1.forward(g, norm);
        let x = g.silu(x);
        let x = self.conv2.forward(g, x);
        let x = g.silu(x);
        let v = g.global_avg_pool(x);
        let v = self.fc1.forward(g, v);
        let v = g.silu(v);
        let v = self.fc2.forward(g, v);
        g.sigmoid(v)
    }

    pub fn mine_var(&self, g: &mut Graph, low: Var, level: usize) -> PriorVars {
        let norm = normalize_var(g, low, level);
        let gamma = self.gamma_var(g, norm);
        let s = g.pow(norm, gamma);
        let grad = g.sobel(s);
        PriorVars { s, g: grad, gamma }
    }

    pub fn compute_gamma(&self, store: &ParamStore, norm: &Tensor) -> Result<Tensor> {
        if norm.min() < 0.0 || norm.max() > 1.0 {
            return Err(Error::Precondition("compute_gamma: input must lie in [0, 1]".into()));
        }
        let mut g = Graph::inference(store);
        let x = g.constant(norm.clone());
        let gamma = self.gamma_var(&mut g, x);
        Ok(g.value(gamma).clone())
    }

    pub fn mine_priors(&self, store: &ParamStore, low: &Tensor, level: usize) -> Result<PriorPack> {
        let norm = normalize_low(low, level)?;
        let gamma = self.compute_gamma(store, &norm)?;
        priors_from_gamma(low, level, &gamma)
    }
}

pub(crate) fn check_lambdas(l1: f64, l2: f64) -> Result<()> {
    if !(l1 >= 0.0 && l2 >= 0.0) || (l1 == 0.0 && l2 == 0.0) {
        return Err(Error::Config(format!("prior loss weights must be nonnegative and not both zero, got {l1} and {l2}")));
    }
    Ok(())
}

/// Ground-truth gradient prior and soft edge target for a GT low band.
pub(crate) fn gt_targets(gt_low: &Tensor, level: usize) -> (Tensor, Tensor) {
    let s_gt = normalize_unchecked(gt_low, level);
    let g_gt = transforms::sobel_unchecked(&s_gt);
    let edge = g_gt.map(|v| (v / EDGE_SCALE).clamp(0.0, 1.0));
    (g_gt, edge)
}

/// `l1 * mean|G - G_gt| + l2 * BCE(edge(G), edge(G_gt))` on the graph.
pub(crate) fn smgm_loss_var(g: &mut Graph, grad: Var, gt_low: &Tensor, level: usize, l1: f64, l2: f64) -> Var {
    let (g_gt, edge_gt) = gt_targets(gt_low, level);
    let one_minus_t = edge_gt.map(|t| 1.0 - t);
    let g_gt = g.constant(g_gt);
    let t = g.constant(edge_gt);
    let nt = g.constant(one_minus_t);

    let d = g.sub(grad, g_gt);
    let d = g.abs(d);
    let fid = g.mean(d);
    let fid = g.scale(fid, l1);

    let p = g.scale(grad, 1.0 / EDGE_SCALE);
    let p = g.clamp(p, BCE_CLAMP, 1.0 - BCE_CLAMP);
    let lp = g.ln(p);
    let q = g.neg(p);
    let q = g.add_scalar(q, 1.0);
    let lq = g.ln(q);
    let a = g.mul(t, lp);
    let b = g.mul(nt, lq);
    let s = g.add(a, b);
    let bce = g.mean(s);
    let bce = g.scale(bce, -l2);
    g.add(fid, bce)
}

/// Prior loss against the ground-truth band of the same level.
pub fn smgm_loss(pred: &PriorPack, gt_low: &Tensor, level: usize, l1: f64, l2: f64) -> Result<f64> {
    check_lambdas(l1, l2)?;
    if pred.g.shape() != gt_low.shape() {
        return Err(Error::Shape(format!("prior {:?} vs ground-truth band {:?}", pred.g.shape(), gt_low.shape())));
    }
    let mut g = Graph::standalone(false);
    let grad = g.constant(pred.g.clone());
    let loss = smgm_loss_var(&mut g, grad, gt_low, level, l1, l2);
    Ok(g.value(loss).data()[0])
}

/// Mean binary entropy of the soft edge target: the floor of the BCE term.
pub fn edge_entropy(gt_low: &Tensor, level: usize) -> f64 {
    let (_, edge) = gt_targets(gt_low, level);
    let h = |t: f64| {
        let p = t.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
    };
    edge.data().iter().map(|&t| h(t)).sum::<f64>() / edge.len() as f64
}
