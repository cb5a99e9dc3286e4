//! Full network: wavelet pyramid, prior mining and the low branch at the
//! coarsest level, high branches at every level, progressive reconstruction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dfgf_high::HighBranch;
use crate::dfgf_low::{AmplitudeBranch, LowBranch, PhaseAttention, SpatialEnhance};
use crate::error::{Error, Result};
use crate::graph::{self, Graph, Var};
use crate::params::ParamStore;
use crate::smgm::{self, PriorPack, PriorVars, Smgm};
use crate::tensor::{Image, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub smgm: bool,
    pub d_low: bool,
    pub d_high: bool,
    pub amp: bool,
    pub pha: bool,
    pub spa: bool,
    pub m_s: bool,
    pub f_hf: bool,
    pub f_s: bool,
    pub wtc: bool,
    pub dc: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self::all(true)
    }
}

impl Toggles {
    pub const NAMES: [&'static str; 11] =
        ["smgm", "d_low", "d_high", "amp", "pha", "spa", "m_s", "f_hf", "f_s", "wtc", "dc"];

    pub fn all(on: bool) -> Self {
        Self {
            smgm: on,
            d_low: on,
            d_high: on,
            amp: on,
            pha: on,
            spa: on,
            m_s: on,
            f_hf: on,
            f_s: on,
            wtc: on,
            dc: on,
        }
    }

    fn slot(&mut self, name: &str) -> Option<&mut bool> {
        Some(match name {
            "smgm" => &mut self.smgm,
            "d_low" => &mut self.d_low,
            "d_high" => &mut self.d_high,
            "amp" => &mut self.amp,
            "pha" => &mut self.pha,
            "spa" => &mut self.spa,
            "m_s" => &mut self.m_s,
            "f_hf" => &mut self.f_hf,
            "f_s" => &mut self.f_s,
            "wtc" => &mut self.wtc,
            "dc" => &mut self.dc,
            _ => return None,
        })
    }

    pub fn get(&self, name: &str) -> Option<bool> {
        let mut c = *self;
        c.slot(name).map(|v| *v)
    }

    pub fn set(&mut self, name: &str, on: bool) -> Result<()> {
        match self.slot(name) {
            Some(v) => {
                *v = on;
                Ok(())
            }
            None => Err(Error::Config(format!(
                "unknown toggle `{name}`; valid toggles are {}",
                Self::NAMES.join(", ")
            ))),
        }
    }

    /// Names of the disabled toggles, in declaration order.
    pub fn disabled(&self) -> Vec<&'static str> {
        Self::NAMES.iter().copied().filter(|n| self.get(n) == Some(false)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub depth: usize,
    pub channels: usize,
    pub smgm_width: usize,
    pub low_width: usize,
    pub high_width: usize,
    pub n_res: usize,
    pub token_cap: usize,
    pub wavelet_levels: usize,
    pub param_budget: usize,
    pub toggles: Toggles,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            channels: 3,
            smgm_width: 16,
            low_width: 16,
            high_width: 16,
            n_res: 2,
            token_cap: 1024,
            wavelet_levels: 3,
            param_budget: 300_000,
            toggles: Toggles::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.depth) {
            return Err(Error::Config(format!("depth must be in 1..=4, got {}", self.depth)));
        }
        for (name, w) in [("smgm_width", self.smgm_width), ("low_width", self.low_width), ("high_width", self.high_width)] {
            if w < 4 {
                return Err(Error::Config(format!("{name} must be at least 4, got {w}")));
            }
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be positive".into()));
        }
        if self.token_cap == 0 {
            return Err(Error::Config("token_cap must be positive".into()));
        }
        Ok(())
    }

    /// Input sides must be multiples of this.
    pub fn multiple(&self) -> usize {
        1 << self.depth
    }
}

/// Per-forward observations of the bounded intermediate quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeStats {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub gate_min: f64,
    pub gate_max: f64,
    /// Largest `|row sum - 1|` of the attention matrix.
    pub attention_row_error: f64,
    /// Largest `|B2| - |A|`; never positive.
    pub b2_excess: f64,
}

impl Default for RangeStats {
    fn default() -> Self {
        Self {
            gamma_min: f64::INFINITY,
            gamma_max: f64::NEG_INFINITY,
            gate_min: f64::INFINITY,
            gate_max: f64::NEG_INFINITY,
            attention_row_error: 0.0,
            b2_excess: f64::NEG_INFINITY,
        }
    }
}

/// Graph handles produced by [`Model::forward_graph`].
pub struct ForwardVars {
    pub output: Var,
    /// Learned priors at the deepest level; `None` without the mining module.
    pub priors: Option<PriorVars>,
    amplitude: Option<(Var, Var)>,
    attention: Option<(Var, Var)>,
    gates: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub smgm: Option<Smgm>,
    pub low: Option<LowBranch>,
    /// Index `i` holds level `i + 1`.
    pub high: Vec<Option<HighBranch>>,
}

fn check_finite(g: &Graph, v: Var, module: &str) -> Result<()> {
    if g.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { module: module.to_string(), step: None })
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let t = config.toggles;
        let c = config.channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let smgm = t.smgm.then(|| Smgm::new(&mut store, &mut rng, "smgm", c, config.smgm_width));
        let low = t.d_low.then(|| {
            let w = config.low_width;
            LowBranch {
                amplitude: t.amp.then(|| AmplitudeBranch::new(&mut store, &mut rng, "low.amp", c, w)),
                phase: t.pha.then(|| PhaseAttention::new(&mut store, &mut rng, "low.pha", c, w, config.token_cap)),
                spatial: if t.spa {
                    SpatialEnhance::new(&mut store, &mut rng, "low.spa", c, w, config.wavelet_levels, t.dc, t.wtc)
                } else {
                    None
                },
                level: config.depth,
            }
        });
        let low = low.filter(|l| !l.is_identity());
        let high = (1..=config.depth)
            .map(|level| {
                if !t.d_high {
                    return None;
                }
                HighBranch::new(
                    &mut store,
                    &mut rng,
                    &format!("high.{level}"),
                    c,
                    config.high_width,
                    config.n_res,
                    t.m_s,
                    t.f_hf,
                    t.f_s,
                )
            })
            .collect();
        let model = Self { config, params: store, smgm, low, high };
        let mut params = model.params.clone();
        if let Some(low) = &model.low {
            if let Some(a) = &low.amplitude {
                a.init_towards_prior(&mut params);
            }
            if let Some(p) = &low.phase {
                p.init_identity(&mut params);
            }
            if let Some(s) = &low.spatial {
                s.init_identity(&mut params);
            }
        }
        Ok(Self { params, ..model })
    }

    /// Rebuilds the module layout for `config` and installs `params`, which
    /// must match it name for name and shape for shape.
    pub fn with_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if model.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (_, name, t) in model.params.iter() {
            let other = params.find(name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let o = params.get(other);
            if o.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    o.shape(),
                    t.shape()
                )));
            }
        }
        let ordered: Vec<(String, Tensor)> = model
            .params
            .iter()
            .map(|(_, name, _)| (name.to_string(), params.get(params.find(name).expect("checked")).clone()))
            .collect();
        let mut store = ParamStore::new();
        for (name, t) in ordered {
            store.add(&name, t);
        }
        model.params = store;
        Ok(model)
    }

    pub fn count_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Scalar counts per module, in forward order. Empty modules are omitted.
    pub fn param_report(&self) -> Vec<(String, usize)> {
        let mut groups: Vec<String> = vec!["smgm".into(), "low.amp".into(), "low.pha".into(), "low.spa".into()];
        groups.extend((1..=self.config.depth).map(|l| format!("high.{l}")));
        groups
            .into_iter()
            .map(|p| {
                let n = self.params.count_prefix(&format!("{p}."));
                (p, n)
            })
            .filter(|(_, n)| *n > 0)
            .collect()
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let (c, h, w) = x.chw();
        if c != self.config.channels {
            return Err(Error::Shape(format!("expected {} channels, got {c}", self.config.channels)));
        }
        let m = self.config.multiple();
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::Precondition(format!("input {h}x{w} is not divisible by 2^{} = {m}", self.config.depth)));
        }
        Ok(())
    }

    /// Records one forward pass of `x` (an image already placed on `g`).
    /// The output is not clamped.
    pub fn forward_graph(&self, g: &mut Graph, x: Var) -> Result<ForwardVars> {
        self.check_input(g.value(x))?;
        let depth = self.config.depth;
        let mut details = Vec::with_capacity(depth);
        let mut cur = x;
        for _ in 0..depth {
            let s = g.dwt(cur);
            let parts = g.chunk(s, 4);
            cur = parts[0];
            details.push([parts[1], parts[2], parts[3]]);
        }

        let need_priors = self.low.is_some() || self.high.iter().any(Option::is_some);
        let mut out = ForwardVars { output: x, priors: None, amplitude: None, attention: None, gates: Vec::new() };
        let (s, grad) = match &self.smgm {
            Some(m) => {
                let p = m.mine_var(g, cur, depth);
                check_finite(g, p.g, "smgm")?;
                let gamma = g.value(p.gamma);
                if gamma.data().iter().any(|&v| v <= 0.0 || v >= 1.0) {
                    return Err(Error::Precondition("smgm: gamma left the open interval (0, 1)".into()));
                }
                out.priors = Some(p);
                (Some(p.s), Some(p.g))
            }
            None if need_priors => {
                let s = smgm::normalize_var(g, cur, depth);
                (Some(s), Some(g.sobel(s)))
            }
            None => (None, None),
        };

        if let Some(low) = &self.low {
            let r = low.forward(g, cur, s.expect("prior"))?;
            check_finite(g, r.out, "low_branch")?;
            out.amplitude = r.amplitude.zip(r.b2);
            out.attention = r.q.zip(r.k);
            cur = r.out;
        }

        for i in (0..depth).rev() {
            let level = i + 1;
            let [mut hl, mut lh, mut hh] = details[i];
            if let Some(hb) = &self.high[i] {
                let gi = if level == depth {
                    grad.expect("prior")
                } else {
                    let n = smgm::normalize_var(g, cur, level);
                    g.sobel(n)
                };
                let r = hb.forward(g, hl, lh, hh, gi)?;
                [hl, lh, hh] = r.outs;
                for v in r.outs {
                    check_finite(g, v, &format!("high_branch level {level}"))?;
                }
                out.gates.extend(r.gate);
            }
            let s = g.concat(&[cur, hl, lh, hh]);
            cur = g.idwt(s);
        }
        out.output = cur;
        Ok(out)
    }

    /// Inference forward: the output clamped to `[0, 1]` and the priors mined
    /// at the deepest level.
    pub fn forward(&self, x: &Image) -> Result<(Image, Option<PriorPack>)> {
        if x.min() < 0.0 || x.max() > 1.0 {
            return Err(Error::Precondition("input values must lie in [0, 1]".into()));
        }
        let mut g = Graph::inference(&self.params);
        let xv = g.constant(x.clone());
        let r = self.forward_graph(&mut g, xv)?;
        let y = g.value(r.output).clamp(0.0, 1.0);
        let priors = r.priors.map(|p| PriorPack {
            s: g.value(p.s).clone(),
            g: g.value(p.g).clone(),
            gamma: g.value(p.gamma).clone(),
        });
        Ok((y, priors))
    }

    pub fn infer(&self, x: &Image) -> Result<Image> {
        Ok(self.forward(x)?.0)
    }

    /// Runs one inference forward and reports the bounded intermediates.
    pub fn range_stats(&self, x: &Image) -> Result<RangeStats> {
        let mut g = Graph::inference(&self.params);
        let xv = g.constant(x.clone());
        let r = self.forward_graph(&mut g, xv)?;
        let mut st = RangeStats::default();
        if let Some(p) = r.priors {
            st.gamma_min = g.value(p.gamma).min();
            st.gamma_max = g.value(p.gamma).max();
        }
        for m in &r.gates {
            st.gate_min = st.gate_min.min(g.value(*m).min());
            st.gate_max = st.gate_max.max(g.value(*m).max());
        }
        if let Some((q, k)) = r.attention {
            let attn = graph::attention_weights(g.value(q), g.value(k));
            let (_, h, w) = g.value(q).chw();
            let n = h * w;
            st.attention_row_error = (0..n)
                .map(|i| (attn[i * n..(i + 1) * n].iter().sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max);
        }
        if let Some((a, b2)) = r.amplitude {
            st.b2_excess = g
                .value(b2)
                .data()
                .iter()
                .zip(g.value(a).data())
                .map(|(b, a)| b.abs() - a.abs())
                .fold(f64::NEG_INFINITY, f64::max);
        }
        Ok(st)
    }
}
