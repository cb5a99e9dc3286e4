//! Low-frequency branch: prior-guided amplitude and phase enhancement in the
//! Fourier domain of the coarsest wavelet band, then spatial refinement.

use rand_chacha::ChaCha8Rng;

use crate::conv::{ConvSpec, Padding};
use crate::error::{Error, Result};
use crate::graph::{self, Graph, Var};
use crate::params::{Conv2d, Linear, ParamStore};
use crate::tensor::Tensor;

/// Channel attention over the concatenated amplitudes, a channel-reducing
/// convolution, and a sigmoid gate on the input amplitude.
#[derive(Debug, Clone)]
pub struct AmplitudeBranch {
    pub ca1: Linear,
    pub ca2: Linear,
    pub reduce: Conv2d,
    pub gate: Conv2d,
}

pub struct AmplitudeVars {
    pub out: Var,
    pub b1: Var,
    pub b2: Var,
}

impl AmplitudeBranch {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, c: usize, width: usize) -> Self {
        Self {
            ca1: Linear::new(store, rng, &format!("{prefix}.ca1"), 2 * c, width),
            ca2: Linear::new(store, rng, &format!("{prefix}.ca2"), width, c),
            reduce: Conv2d::new(store, rng, &format!("{prefix}.reduce"), 2 * c, c, ConvSpec::pointwise()),
            gate: Conv2d::new(store, rng, &format!("{prefix}.gate"), 2 * c, c, ConvSpec::pointwise()),
        }
    }

    /// Starts close to `A_s`: channel attention at 0.5, `reduce` picking the
    /// prior amplitude with weight 2, and a nearly closed gate.
    pub fn init_towards_prior(&self, store: &mut ParamStore) {
        let c = self.reduce.out_channels;
        self.ca2.zero(store);
        self.reduce.zero(store);
        for o in 0..c {
            self.reduce.set_weight(store, o, c + o, 0, 0, 2.0);
        }
        store.get_mut(self.gate.weight).data_mut().fill(0.0);
        self.gate.fill_bias(store, -4.0);
    }

    pub fn forward(&self, g: &mut Graph, a: Var, a_s: Var) -> AmplitudeVars {
        let cat = g.concat(&[a, a_s]);
        let pooled = g.global_avg_pool(cat);
        let h = self.ca1.forward(g, pooled);
        let h = g.silu(h);
        let h = self.ca2.forward(g, h);
        let ca = g.sigmoid(h);
        let red = self.reduce.forward(g, cat);
        let b1 = g.mul(ca, red);
        let gate = self.gate.forward(g, cat);
        let gate = g.sigmoid(gate);
        let b2 = g.mul(gate, a);
        let out = g.add(b1, b2);
        AmplitudeVars { out, b1, b2 }
    }
}

/// Single-head attention across the spatial tokens of the phase map.
#[derive(Debug, Clone)]
pub struct PhaseAttention {
    pub qk: Conv2d,
    pub v: Conv2d,
    pub proj: Conv2d,
    pub token_cap: usize,
}

pub struct PhaseVars {
    pub out: Var,
    pub q: Var,
    pub k: Var,
    pub v: Var,
}

impl PhaseAttention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, c: usize, width: usize, token_cap: usize) -> Self {
        Self {
            qk: Conv2d::new(store, rng, &format!("{prefix}.qk"), 2 * c, 2 * width, ConvSpec::same(3)),
            v: Conv2d::new(store, rng, &format!("{prefix}.v"), c, width, ConvSpec::pointwise()),
            proj: Conv2d::new(store, rng, &format!("{prefix}.proj"), width, c, ConvSpec::pointwise()),
            token_cap,
        }
    }

    /// Zero projection: the branch starts by passing the input phase through.
    pub fn init_identity(&self, store: &mut ParamStore) {
        self.proj.zero(store);
    }

    /// `P + proj(softmax(Q^T K / sqrt(d)) V)` with `Q, K` from `[P_s, P]`.
    pub fn forward(&self, g: &mut Graph, p: Var, p_s: Var) -> Result<PhaseVars> {
        let (_, h, w) = g.value(p).chw();
        if h * w > self.token_cap {
            return Err(Error::Precondition(format!(
                "phase attention: {} tokens exceed the cap of {}",
                h * w,
                self.token_cap
            )));
        }
        let cat = g.concat(&[p_s, p]);
        let qk = self.qk.forward(g, cat);
        let parts = g.chunk(qk, 2);
        let (q, k) = (parts[0], parts[1]);
        let v = self.v.forward(g, p);
        let mixed = g.attention(q, k, v);
        let delta = self.proj.forward(g, mixed);
        let out = g.add(p, delta);
        Ok(PhaseVars { out, q, k, v })
    }
}

/// Dilated convolution and multi-level wavelet convolution, fused and added
/// back to the input.
#[derive(Debug, Clone)]
pub struct SpatialEnhance {
    pub lift: Conv2d,
    pub dilated: Option<Conv2d>,
    /// Per level `HL, LH, HH` kernels, then one for the coarsest low band.
    pub wavelet: Option<Vec<Conv2d>>,
    pub wavelet_levels: usize,
    pub fuse: Conv2d,
    pub out: Conv2d,
}

impl SpatialEnhance {
    /// `None` when both sub-branches are disabled.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        c: usize,
        width: usize,
        levels: usize,
        use_dilated: bool,
        use_wavelet: bool,
    ) -> Option<Self> {
        if !use_dilated && !use_wavelet {
            return None;
        }
        let lift = Conv2d::new(store, rng, &format!("{prefix}.lift"), c, width, ConvSpec::same(3));
        let dilated = use_dilated.then(|| {
            let spec = ConvSpec::same(3).dilation(4).padding(Padding::Reflect);
            Conv2d::new(store, rng, &format!("{prefix}.dilated"), width, width, spec)
        });
        let wavelet = use_wavelet.then(|| {
            (0..3 * levels + 1)
                .map(|i| {
                    let name = if i == 3 * levels {
                        format!("{prefix}.wt.low")
                    } else {
                        format!("{prefix}.wt.{}.{}", i / 3 + 1, ["hl", "lh", "hh"][i % 3])
                    };
                    Conv2d::new(store, rng, &name, width, width, ConvSpec::depthwise(3, width))
                })
                .collect::<Vec<_>>()
        });
        let branches = usize::from(use_dilated) + usize::from(use_wavelet);
        let fuse = Conv2d::new(store, rng, &format!("{prefix}.fuse"), branches * width, width, ConvSpec::pointwise());
        let out = Conv2d::new(store, rng, &format!("{prefix}.out"), width, c, ConvSpec::same(3));
        Some(Self { lift, dilated, wavelet, wavelet_levels: levels, fuse, out })
    }

    /// Delta kernels in the wavelet path and a zero output convolution, so the
    /// module starts as the identity.
    pub fn init_identity(&self, store: &mut ParamStore) {
        for k in self.wavelet.iter().flatten() {
            k.identity(store);
        }
        self.out.zero(store);
    }

    /// Number of Haar levels usable on an `h x w` map.
    pub fn effective_levels(&self, h: usize, w: usize) -> usize {
        let twos = (h.trailing_zeros()).min(w.trailing_zeros()) as usize;
        self.wavelet_levels.min(twos)
    }

    /// Decompose, filter every subband depthwise, reconstruct. Maps too small
    /// to halve only see the coarsest kernel.
    pub fn wavelet_conv(&self, g: &mut Graph, x: Var) -> Option<Var> {
        let kernels = self.wavelet.as_ref()?;
        let (width, h, w) = g.value(x).chw();
        let lv = self.effective_levels(h, w);
        let mut details = Vec::with_capacity(lv);
        let mut cur = x;
        for _ in 0..lv {
            let s = g.dwt(cur);
            let parts = g.chunk(s, 4);
            cur = parts[0];
            details.push([parts[1], parts[2], parts[3]]);
        }
        cur = kernels[3 * self.wavelet_levels].forward(g, cur);
        for i in (0..lv).rev() {
            let [hl, lh, hh] = details[i];
            let hl = kernels[3 * i].forward(g, hl);
            let lh = kernels[3 * i + 1].forward(g, lh);
            let hh = kernels[3 * i + 2].forward(g, hh);
            let s = g.concat(&[cur, hl, lh, hh]);
            cur = g.idwt(s);
        }
        debug_assert_eq!(g.value(cur).channels(), width);
        Some(cur)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let lifted = self.lift.forward(g, x);
        let lifted = g.silu(lifted);
        let mut branches = Vec::with_capacity(2);
        if let Some(d) = &self.dilated {
            let y = d.forward(g, lifted);
            branches.push(g.silu(y));
        }
        if let Some(y) = self.wavelet_conv(g, lifted) {
            branches.push(y);
        }
        let cat = if branches.len() == 1 { branches[0] } else { g.concat(&branches) };
        let fused = self.fuse.forward(g, cat);
        let fused = g.silu(fused);
        let y = g.add(lifted, fused);
        let delta = self.out.forward(g, y);
        g.add(x, delta)
    }
}

/// Whole low-frequency branch. Each stage is optional; a missing stage is
/// the identity.
#[derive(Debug, Clone)]
pub struct LowBranch {
    pub amplitude: Option<AmplitudeBranch>,
    pub phase: Option<PhaseAttention>,
    pub spatial: Option<SpatialEnhance>,
    /// The band is divided by `2^level` on entry and rescaled on exit.
    pub level: usize,
}

/// Handles exposed for range checks.
pub struct LowVars {
    pub out: Var,
    pub amplitude: Option<Var>,
    pub b2: Option<Var>,
    pub q: Option<Var>,
    pub k: Option<Var>,
}

fn split_fourier(g: &mut Graph, x: Var) -> (Var, Var) {
    let c = g.value(x).channels();
    let spec = g.fft2(x);
    let re = g.slice_channels(spec, 0, c);
    let im = g.slice_channels(spec, c, 2 * c);
    (g.hypot(re, im), g.atan2(im, re))
}

impl LowBranch {
    pub fn is_identity(&self) -> bool {
        self.amplitude.is_none() && self.phase.is_none() && self.spatial.is_none()
    }

    pub fn forward(&self, g: &mut Graph, low: Var, s: Var) -> Result<LowVars> {
        if g.shape(low) != g.shape(s) {
            return Err(Error::Shape(format!("low band {:?} vs prior {:?}", g.shape(low), g.shape(s))));
        }
        let k = (1u64 << self.level) as f64;
        let x = g.scale(low, 1.0 / k);
        let mut vars = LowVars { out: x, amplitude: None, b2: None, q: None, k: None };
        let mut merged = x;
        if self.amplitude.is_some() || self.phase.is_some() {
            let (a, p) = split_fourier(g, x);
            let (a_s, p_s) = split_fourier(g, s);
            let a_out = match &self.amplitude {
                Some(m) => {
                    let r = m.forward(g, a, a_s);
                    vars.amplitude = Some(a);
                    vars.b2 = Some(r.b2);
                    r.out
                }
                None => a,
            };
            let p_out = match &self.phase {
                Some(m) => {
                    let r = m.forward(g, p, p_s)?;
                    vars.q = Some(r.q);
                    vars.k = Some(r.k);
                    r.out
                }
                None => p,
            };
            let spec = g.polar(a_out, p_out);
            merged = g.ifft2_real(spec);
        }
        let y = match &self.spatial {
            Some(m) => m.forward(g, merged),
            None => merged,
        };
        vars.out = g.scale(y, k);
        Ok(vars)
    }

    /// `(A~, B2)` for a given amplitude pair.
    pub fn amplitude_enhance(&self, store: &ParamStore, a: &Tensor, a_s: &Tensor) -> Result<(Tensor, Tensor)> {
        let m = self.amplitude.as_ref().ok_or_else(|| Error::Config("amplitude branch is disabled".into()))?;
        if a.shape() != a_s.shape() {
            return Err(Error::Shape(format!("amplitude {:?} vs prior amplitude {:?}", a.shape(), a_s.shape())));
        }
        if a.min() < 0.0 || a_s.min() < 0.0 {
            return Err(Error::Precondition("amplitudes must be nonnegative".into()));
        }
        let mut g = Graph::inference(store);
        let (av, asv) = (g.constant(a.clone()), g.constant(a_s.clone()));
        let r = m.forward(&mut g, av, asv);
        Ok((g.value(r.out).clone(), g.value(r.b2).clone()))
    }

    /// Enhanced phase and the row-major `n x n` attention matrix.
    pub fn phase_enhance(&self, store: &ParamStore, p: &Tensor, p_s: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let m = self.phase.as_ref().ok_or_else(|| Error::Config("phase branch is disabled".into()))?;
        if p.shape() != p_s.shape() {
            return Err(Error::Shape(format!("phase {:?} vs prior phase {:?}", p.shape(), p_s.shape())));
        }
        let mut g = Graph::inference(store);
        let (pv, psv) = (g.constant(p.clone()), g.constant(p_s.clone()));
        let r = m.forward(&mut g, pv, psv)?;
        let attn = graph::attention_weights(g.value(r.q), g.value(r.k));
        Ok((g.value(r.out).clone(), attn))
    }

    pub fn spatial_enhance(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let m = self.spatial.as_ref().ok_or_else(|| Error::Config("spatial enhancement is disabled".into()))?;
        let mut g = Graph::inference(store);
        let xv = g.constant(x.clone());
        let y = m.forward(&mut g, xv);
        Ok(g.value(y).clone())
    }

    pub fn low_branch(&self, store: &ParamStore, low: &Tensor, s: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference(store);
        let (lv, sv) = (g.constant(low.clone()), g.constant(s.clone()));
        let r = self.forward(&mut g, lv, sv)?;
        Ok(g.value(r.out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{param_grad_error, sample, weighted_mean};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn amp_branch(c: usize, width: usize, seed: u64) -> (ParamStore, AmplitudeBranch) {
        let mut store = ParamStore::new();
        let m = AmplitudeBranch::new(&mut store, &mut rng(seed), "amp", c, width);
        (store, m)
    }

    fn low(amp: bool, pha: bool, spa: bool, seed: u64) -> (ParamStore, LowBranch) {
        let mut store = ParamStore::new();
        let mut r = rng(seed);
        let lb = LowBranch {
            amplitude: amp.then(|| AmplitudeBranch::new(&mut store, &mut r, "amp", 2, 4)),
            phase: pha.then(|| PhaseAttention::new(&mut store, &mut r, "pha", 2, 4, 64)),
            spatial: if spa { SpatialEnhance::new(&mut store, &mut r, "spa", 2, 4, 2, true, true) } else { None },
            level: 1,
        };
        (store, lb)
    }

    #[test]
    fn zero_weights_halve_the_amplitude() {
        let (mut store, m) = amp_branch(2, 4, 1);
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let lb = LowBranch { amplitude: Some(m), phase: None, spatial: None, level: 0 };
        let a = sample(2, 4, 4, 2, 0.0, 3.0);
        let a_s = sample(2, 4, 4, 3, 0.0, 3.0);
        let (out, b2) = lb.amplitude_enhance(&store, &a, &a_s).unwrap();
        assert!(out.max_abs_diff(&a.map(|v| 0.5 * v)) < 1e-15);
        assert!(b2.max_abs_diff(&a.map(|v| 0.5 * v)) < 1e-15);
    }

    #[test]
    fn amplitude_matches_hand_arithmetic() {
        // 4x4x2: attention pinned at 0.5, reduce = A_s, gate = sigmoid(1.5).
        let (mut store, m) = amp_branch(2, 4, 4);
        m.ca2.zero(&mut store);
        m.reduce.zero(&mut store);
        m.reduce.set_weight(&mut store, 0, 2, 0, 0, 1.0);
        m.reduce.set_weight(&mut store, 1, 3, 0, 0, 1.0);
        store.get_mut(m.gate.weight).data_mut().fill(0.0);
        m.gate.fill_bias(&mut store, 1.5);
        let a = sample(2, 4, 4, 5, 0.0, 2.0);
        let a_s = sample(2, 4, 4, 6, 0.0, 2.0);
        let lb = LowBranch { amplitude: Some(m), phase: None, spatial: None, level: 0 };
        let (out, _) = lb.amplitude_enhance(&store, &a, &a_s).unwrap();
        let sg = 1.0 / (1.0 + (-1.5f64).exp());
        for i in 0..a.len() {
            let want = 0.5 * a_s.data()[i] + sg * a.data()[i];
            assert!((out.data()[i] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn two_token_attention_oracle() {
        let q = Tensor::new(&[1, 1, 2], vec![1.0, -2.0]).unwrap();
        let k = Tensor::new(&[1, 1, 2], vec![0.5, 1.5]).unwrap();
        let v = Tensor::new(&[1, 1, 2], vec![3.0, -1.0]).unwrap();
        let mut g = Graph::standalone(false);
        let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v));
        let out = g.attention(qv, kv, vv);
        let row = |qi: f64| {
            let (e0, e1) = ((qi * 0.5f64).exp(), (qi * 1.5f64).exp());
            (3.0 * e0 - e1) / (e0 + e1)
        };
        assert!((g.value(out).data()[0] - row(1.0)).abs() < 1e-14);
        assert!((g.value(out).data()[1] - row(-2.0)).abs() < 1e-14);
        let w = graph::attention_weights(&q, &k);
        assert!((w[0] + w[1] - 1.0).abs() < 1e-15 && (w[2] + w[3] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn phase_starts_as_pass_through_and_caps_tokens() {
        let mut store = ParamStore::new();
        let m = PhaseAttention::new(&mut store, &mut rng(7), "pha", 2, 4, 16);
        m.init_identity(&mut store);
        let lb = LowBranch { amplitude: None, phase: Some(m), spatial: None, level: 0 };
        let p = sample(2, 4, 4, 8, -3.0, 3.0);
        let (out, attn) = lb.phase_enhance(&store, &p, &p.map(|v| -v)).unwrap();
        assert_eq!(out, p);
        assert_eq!(attn.len(), 256);
        let big = sample(2, 8, 4, 9, -1.0, 1.0);
        let e = lb.phase_enhance(&store, &big, &big).unwrap_err();
        assert!(e.to_string().contains("cap"));
    }

    #[test]
    fn spatial_identity_init() {
        let mut store = ParamStore::new();
        let m = SpatialEnhance::new(&mut store, &mut rng(10), "spa", 3, 4, 3, true, true).unwrap();
        m.init_identity(&mut store);
        let lb = LowBranch { amplitude: None, phase: None, spatial: Some(m), level: 0 };
        let x = sample(3, 8, 8, 11, 0.0, 1.0);
        assert_eq!(lb.spatial_enhance(&store, &x).unwrap(), x);
        assert!(SpatialEnhance::new(&mut store, &mut rng(0), "none", 3, 4, 3, false, false).is_none());
    }

    #[test]
    fn wavelet_conv_with_delta_kernels_is_identity() {
        let mut store = ParamStore::new();
        let m = SpatialEnhance::new(&mut store, &mut rng(12), "spa", 1, 4, 3, false, true).unwrap();
        m.init_identity(&mut store);
        let x = sample(4, 16, 8, 13, -1.0, 1.0);
        let mut g = Graph::inference(&store);
        let xv = g.constant(x.clone());
        let y = m.wavelet_conv(&mut g, xv).unwrap();
        assert!(g.value(y).max_abs_diff(&x) < 1e-12);
        assert_eq!(m.effective_levels(16, 8), 3);
        assert_eq!(m.effective_levels(12, 8), 2);
        assert_eq!(m.effective_levels(6, 8), 1);
        assert_eq!(m.effective_levels(3, 8), 0);
    }

    #[test]
    fn dilated_tap_reads_four_pixels_away() {
        let mut store = ParamStore::new();
        let spec = ConvSpec::same(3).dilation(4).padding(Padding::Reflect);
        let conv = Conv2d::new(&mut store, &mut rng(14), "d", 1, 1, spec);
        conv.zero(&mut store);
        conv.set_weight(&mut store, 0, 0, 2, 2, 1.0);
        let x = sample(1, 12, 12, 15, 0.0, 1.0);
        let mut g = Graph::inference(&store);
        let xv = g.constant(x.clone());
        let y = conv.forward(&mut g, xv);
        let y = g.value(y);
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(y.at(0, r, c), x.at(0, r + 4, c + 4));
            }
        }
        // Reflection at the far edge: row 10 + 4 = 14 maps to 8.
        assert_eq!(y.at(0, 10, 0), x.at(0, 8, 4));
    }

    #[test]
    fn branch_preserves_shape_and_rejects_mismatch() {
        let (store, lb) = low(true, true, true, 16);
        let x = sample(2, 8, 8, 17, 0.0, 2.0);
        let s = sample(2, 8, 8, 18, 0.0, 1.0);
        let y = lb.low_branch(&store, &x, &s).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.is_finite());
        assert!(lb.low_branch(&store, &x, &sample(2, 4, 8, 0, 0.0, 1.0)).is_err());
        let (st, none) = low(false, false, false, 0);
        assert!(none.is_identity());
        assert_eq!(none.low_branch(&st, &x, &s).unwrap().max_abs_diff(&x), 0.0);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let (mut store, lb) = low(true, true, true, 19);
        let x = sample(2, 8, 8, 20, 0.05, 1.5);
        let s = sample(2, 8, 8, 21, 0.05, 1.0);
        let ids: Vec<_> = ["amp.gate.weight", "amp.ca1.bias", "pha.qk.weight", "pha.proj.weight", "spa.dilated.bias", "spa.wt.1.hl.weight"]
            .iter()
            .map(|n| store.find(n).unwrap())
            .collect();
        let err = param_grad_error(&mut store, &ids, |g| {
            let (xv, sv) = (g.constant(x.clone()), g.constant(s.clone()));
            let r = lb.forward(g, xv, sv).unwrap();
            weighted_mean(g, r.out, 22)
        });
        assert!(err < 1e-4, "relative error {err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gated_term_never_exceeds_amplitude(seed in any::<u64>()) {
            let (store, m) = amp_branch(3, 4, seed);
            let lb = LowBranch { amplitude: Some(m), phase: None, spatial: None, level: 0 };
            let a = sample(3, 4, 4, seed ^ 1, 0.0, 5.0);
            let a_s = sample(3, 4, 4, seed ^ 2, 0.0, 5.0);
            let (out, b2) = lb.amplitude_enhance(&store, &a, &a_s).unwrap();
            prop_assert!(out.is_finite());
            for (b, v) in b2.data().iter().zip(a.data()) {
                prop_assert!(b.abs() <= v.abs());
            }
        }

        #[test]
        fn attention_rows_are_convex_weights(seed in any::<u64>()) {
            let q = sample(3, 3, 4, seed, -2.0, 2.0);
            let k = sample(3, 3, 4, seed ^ 9, -2.0, 2.0);
            let v = sample(2, 3, 4, seed ^ 5, -1.0, 1.0);
            let w = graph::attention_weights(&q, &k);
            for row in w.chunks(12) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&p| p >= 0.0));
            }
            let mut g = Graph::standalone(false);
            let (qv, kv, vv) = (g.constant(q), g.constant(k), g.constant(v.clone()));
            let out = g.attention(qv, kv, vv);
            for c in 0..2 {
                let (lo, hi) = v.plane(c).iter().fold((f64::MAX, f64::MIN), |(l, h), &x| (l.min(x), h.max(x)));
                for &o in g.value(out).plane(c) {
                    prop_assert!(o >= lo - 1e-12 && o <= hi + 1e-12);
                }
            }
        }
    }
}
