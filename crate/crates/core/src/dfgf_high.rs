//! High-frequency branch: gradient-prior gating of the detail subbands.

use rand_chacha::ChaCha8Rng;

use crate::conv::ConvSpec;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Conv2d, ParamStore};
use crate::tensor::Tensor;

/// Depthwise 3x3 followed by a pointwise projection.
#[derive(Debug, Clone)]
pub struct SeparableConv {
    pub depthwise: Conv2d,
    pub pointwise: Conv2d,
}

impl SeparableConv {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, cin: usize, cout: usize) -> Self {
        Self {
            depthwise: Conv2d::new(store, rng, &format!("{prefix}.dw"), cin, cin, ConvSpec::depthwise(3, cin)),
            pointwise: Conv2d::new(store, rng, &format!("{prefix}.pw"), cin, cout, ConvSpec::pointwise()),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let y = self.depthwise.forward(g, x);
        self.pointwise.forward(g, y)
    }
}

/// `M_s = sigmoid(conv1x1(F_dw(G)))`, one channel.
#[derive(Debug, Clone)]
pub struct GateMap {
    pub features: SeparableConv,
    pub proj: Conv2d,
}

impl GateMap {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, c: usize, width: usize) -> Self {
        Self {
            features: SeparableConv::new(store, rng, &format!("{prefix}.fdw"), c, width),
            proj: Conv2d::new(store, rng, &format!("{prefix}.proj"), width, 1, ConvSpec::pointwise()),
        }
    }

    pub fn forward(&self, g: &mut Graph, grad: Var) -> Var {
        let f = self.features.forward(g, grad);
        let m = self.proj.forward(g, f);
        g.sigmoid(m)
    }
}

#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResBlock {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let y = self.conv1.forward(g, x);
        let y = g.silu(y);
        let y = self.conv2.forward(g, y);
        g.add(x, y)
    }
}

#[derive(Debug, Clone)]
pub struct HighBranch {
    pub gate: Option<GateMap>,
    pub spatial: Option<SeparableConv>,
    pub use_hf: bool,
    pub fuse: Conv2d,
    pub blocks: Vec<ResBlock>,
    pub heads: [Conv2d; 3],
}

pub struct HighVars {
    pub outs: [Var; 3],
    pub gate: Option<Var>,
    pub spatial: Option<Var>,
    pub enhanced: Option<Var>,
}

impl HighBranch {
    /// `None` when neither the spatial features nor the `F_hf` sum feed the
    /// fusion, leaving nothing to process.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        c: usize,
        width: usize,
        n_res: usize,
        use_gate: bool,
        use_hf: bool,
        use_spatial: bool,
    ) -> Option<Self> {
        if !use_hf && !use_spatial {
            return None;
        }
        let spatial = use_spatial.then(|| SeparableConv::new(store, rng, &format!("{prefix}.fs"), 3 * c, width));
        let gate = (use_spatial && use_gate).then(|| GateMap::new(store, rng, &format!("{prefix}.gate"), c, width));
        let fuse_in = if use_spatial { width } else { 0 } + if use_hf { c } else { 0 };
        let fuse = Conv2d::new(store, rng, &format!("{prefix}.fuse"), fuse_in, width, ConvSpec::same(3));
        let blocks = (0..n_res)
            .map(|i| ResBlock {
                conv1: Conv2d::new(store, rng, &format!("{prefix}.res{i}.conv1"), width, width, ConvSpec::same(3)),
                conv2: Conv2d::new(store, rng, &format!("{prefix}.res{i}.conv2"), width, width, ConvSpec::same(3)),
            })
            .collect();
        let heads = ["hl", "lh", "hh"]
            .map(|n| Conv2d::new(store, rng, &format!("{prefix}.head.{n}"), width, c, ConvSpec::same(3)));
        Some(Self { gate, spatial, use_hf, fuse, blocks, heads })
    }

    pub fn forward(&self, g: &mut Graph, hl: Var, lh: Var, hh: Var, grad: Var) -> Result<HighVars> {
        let s = g.shape(hl).to_vec();
        for (name, v) in [("LH", lh), ("HH", hh), ("G", grad)] {
            if g.shape(v) != s.as_slice() {
                return Err(Error::Shape(format!("high branch: {name} is {:?}, HL is {s:?}", g.shape(v))));
            }
        }
        let mut vars = HighVars { outs: [hl, lh, hh], gate: None, spatial: None, enhanced: None };
        let mut fuse_in = Vec::with_capacity(2);
        if let Some(sp) = &self.spatial {
            let cat = g.concat(&[hl, lh, hh]);
            let fs = sp.forward(g, cat);
            vars.spatial = Some(fs);
            let enhanced = match &self.gate {
                Some(gate) => {
                    let m = gate.forward(g, grad);
                    vars.gate = Some(m);
                    let gated = g.mul(fs, m);
                    g.add(gated, fs)
                }
                None => fs,
            };
            vars.enhanced = Some(enhanced);
            fuse_in.push(enhanced);
        }
        if self.use_hf {
            let sum = g.add(hl, lh);
            let sum = g.add(sum, hh);
            fuse_in.push(g.add(sum, grad));
        }
        let cat = if fuse_in.len() == 1 { fuse_in[0] } else { g.concat(&fuse_in) };
        let mut x = self.fuse.forward(g, cat);
        for b in &self.blocks {
            x = b.forward(g, x);
        }
        vars.outs = [0, 1, 2].map(|i| self.heads[i].forward(g, x));
        Ok(vars)
    }

    /// Gate map for a gradient prior; `None` when the gate is disabled.
    pub fn gate_map(&self, store: &ParamStore, grad: &Tensor) -> Option<Tensor> {
        let gate = self.gate.as_ref()?;
        let mut g = Graph::inference(store);
        let v = g.constant(grad.clone());
        let m = gate.forward(&mut g, v);
        Some(g.value(m).clone())
    }

    pub fn high_branch(
        &self,
        store: &ParamStore,
        hl: &Tensor,
        lh: &Tensor,
        hh: &Tensor,
        grad: &Tensor,
    ) -> Result<[Tensor; 3]> {
        let mut g = Graph::inference(store);
        let vs = [hl, lh, hh, grad].map(|t| g.constant(t.clone()));
        let r = self.forward(&mut g, vs[0], vs[1], vs[2], vs[3])?;
        Ok(r.outs.map(|v| g.value(v).clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{param_grad_error, sample, weighted_mean};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn branch(c: usize, seed: u64, gate: bool, hf: bool, spatial: bool) -> (ParamStore, Option<HighBranch>) {
        let mut store = ParamStore::new();
        let b = HighBranch::new(&mut store, &mut ChaCha8Rng::seed_from_u64(seed), "hb", c, 4, 1, gate, hf, spatial);
        (store, b)
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_gate_is_one_half() {
        let (mut store, b) = branch(3, 1, true, true, true);
        let b = b.unwrap();
        for id in store.ids().filter(|&id| store.name(id).starts_with("hb.gate")).collect::<Vec<_>>() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let m = b.gate_map(&store, &sample(3, 4, 4, 2, 0.0, 3.0)).unwrap();
        assert_eq!(m.shape(), &[1, 4, 4]);
        assert!(m.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn gate_matches_hand_arithmetic() {
        // One channel: delta depthwise, pointwise weights 2 and 1 with bias
        // 0.5, projection weights 1 and -3 with bias 0.25.
        let (mut store, b) = branch(1, 3, true, false, true);
        let b = b.unwrap();
        let gm = b.gate.as_ref().unwrap();
        gm.features.depthwise.identity(&mut store);
        gm.features.pointwise.zero(&mut store);
        gm.features.pointwise.set_weight(&mut store, 0, 0, 0, 0, 2.0);
        gm.features.pointwise.set_weight(&mut store, 1, 0, 0, 0, 1.0);
        store.get_mut(gm.features.pointwise.bias.unwrap()).data_mut()[..2].fill(0.5);
        gm.proj.zero(&mut store);
        gm.proj.set_weight(&mut store, 0, 0, 0, 0, 1.0);
        gm.proj.set_weight(&mut store, 0, 1, 0, 0, -3.0);
        gm.proj.fill_bias(&mut store, 0.25);
        let gr = sample(1, 4, 4, 4, 0.0, 2.0);
        let m = b.gate_map(&store, &gr).unwrap();
        for (o, &v) in m.data().iter().zip(gr.data()) {
            let want = sigmoid((2.0 * v + 0.5) - 3.0 * (v + 0.5) + 0.25);
            assert!((o - want).abs() < 1e-14);
        }
    }

    #[test]
    fn enhanced_features_scale_by_one_plus_gate() {
        let (store, b) = branch(3, 5, true, true, true);
        let b = b.unwrap();
        let mut g = Graph::inference(&store);
        let vs = [6, 7, 8, 9].map(|s| g.constant(sample(3, 4, 6, s, -1.0, 1.0)));
        let r = b.forward(&mut g, vs[0], vs[1], vs[2], vs[3]).unwrap();
        let (fs, m, e) = (g.value(r.spatial.unwrap()), g.value(r.gate.unwrap()), g.value(r.enhanced.unwrap()));
        let (cw, h, w) = fs.chw();
        for c in 0..cw {
            for y in 0..h {
                for x in 0..w {
                    let want = fs.at(c, y, x) * (1.0 + m.at(0, y, x));
                    assert!((e.at(c, y, x) - want).abs() < 1e-14);
                }
            }
        }
        for o in r.outs {
            assert_eq!(g.shape(o), &[3, 4, 6]);
        }
    }

    #[test]
    fn toggles_shape_the_branch() {
        assert!(branch(3, 0, true, false, false).1.is_none());
        let (_, hf_only) = branch(3, 0, true, true, false);
        let hf_only = hf_only.unwrap();
        assert!(hf_only.gate.is_none() && hf_only.spatial.is_none());
        let (store, b) = branch(3, 0, false, true, true);
        assert!(b.unwrap().gate.is_none());
        assert_eq!(store.count_prefix("hb.gate."), 0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (store, b) = branch(3, 0, true, true, true);
        let t = sample(3, 4, 4, 1, 0.0, 1.0);
        let e = b.unwrap().high_branch(&store, &t, &t, &t, &sample(3, 4, 2, 1, 0.0, 1.0)).unwrap_err();
        assert!(e.to_string().contains("G"));
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let (mut store, b) = branch(2, 11, true, true, true);
        let b = b.unwrap();
        let ids: Vec<_> = ["hb.gate.proj.weight", "hb.gate.fdw.dw.weight", "hb.fs.pw.bias", "hb.fuse.bias", "hb.res0.conv1.weight"]
            .iter()
            .map(|n| store.find(n).unwrap())
            .collect();
        let ins: Vec<Tensor> = (0..4).map(|s| sample(2, 4, 4, 30 + s, -1.0, 1.0)).collect();
        let err = param_grad_error(&mut store, &ids, |g| {
            let vs: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
            let r = b.forward(g, vs[0], vs[1], vs[2], vs[3]).unwrap();
            let a = weighted_mean(g, r.outs[0], 1);
            let c = weighted_mean(g, r.outs[2], 2);
            g.add(a, c)
        });
        assert!(err < 1e-4, "relative error {err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gate_stays_in_open_unit_interval(seed in any::<u64>()) {
            let (store, b) = branch(3, seed, true, true, true);
            let m = b.unwrap().gate_map(&store, &sample(3, 4, 4, seed, 0.0, 4.0)).unwrap();
            prop_assert!(m.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
