//! Self-check suite: lossless wavelet sampling against interpolating
//! baselines, the Fourier round trip, finite-difference gradient checks and
//! the parameter budget.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data;
use crate::error::Result;
use crate::graph::Graph;
use crate::metrics;
use crate::network::{Model, ModelConfig};
use crate::params::ParamId;
use crate::tensor::{Image, Tensor};
use crate::training;
use crate::transforms;

/// Scalar count the reference implementation reports.
pub const REFERENCE_PARAMS: usize = 210_000;
pub const PARAM_BUDGET: usize = 300_000;
pub const ROUNDS: usize = 3;
pub const LOSSLESS_TOL: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    Wavelet,
    Bilinear,
    Strided,
}

impl Sampler {
    pub const ALL: [Sampler; 3] = [Sampler::Wavelet, Sampler::Bilinear, Sampler::Strided];

    pub fn name(self) -> &'static str {
        match self {
            Sampler::Wavelet => "wavelet",
            Sampler::Bilinear => "bilinear",
            Sampler::Strided => "strided",
        }
    }

    /// `rounds` halvings followed by `rounds` doublings.
    pub fn round_trip(self, x: &Image, rounds: usize) -> Result<Image> {
        match self {
            Sampler::Wavelet => transforms::reconstruct(&transforms::decompose(x, rounds)?),
            Sampler::Bilinear => {
                let mut y = x.clone();
                for _ in 0..rounds {
                    y = box_down(&y);
                }
                for _ in 0..rounds {
                    y = bilinear_up(&y);
                }
                Ok(y)
            }
            Sampler::Strided => {
                let mut y = x.clone();
                for _ in 0..rounds {
                    let (c, h, w) = y.chw();
                    y = Tensor::from_fn(c, h / 2, w / 2, |ci, r, q| y.at(ci, 2 * r, 2 * q));
                }
                for _ in 0..rounds {
                    let (c, h, w) = y.chw();
                    y = Tensor::from_fn(c, h * 2, w * 2, |ci, r, q| y.at(ci, r / 2, q / 2));
                }
                Ok(y)
            }
        }
    }
}

/// Half-pixel-centred bilinear halving, which reduces to a 2x2 mean.
fn box_down(x: &Image) -> Image {
    let (c, h, w) = x.chw();
    Tensor::from_fn(c, h / 2, w / 2, |ci, r, q| {
        0.25 * (x.at(ci, 2 * r, 2 * q) + x.at(ci, 2 * r, 2 * q + 1) + x.at(ci, 2 * r + 1, 2 * q) + x.at(ci, 2 * r + 1, 2 * q + 1))
    })
}

/// Half-pixel-centred bilinear doubling with edge clamping.
fn bilinear_up(x: &Image) -> Image {
    let (c, h, w) = x.chw();
    let tap = |o: usize, n: usize| {
        let s = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    Tensor::from_fn(c, 2 * h, 2 * w, |ci, r, q| {
        let (y0, y1, fy) = tap(r, h);
        let (x0, x1, fx) = tap(q, w);
        let top = x.at(ci, y0, x0) * (1.0 - fx) + x.at(ci, y0, x1) * fx;
        let bot = x.at(ci, y1, x0) * (1.0 - fx) + x.at(ci, y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

pub fn checkerboard(h: usize, w: usize) -> Image {
    Tensor::from_fn(3, h, w, |_, y, x| ((x + y) % 2) as f64)
}

/// Rounds to the nearest 8-bit level.
pub fn quantize8(x: &Image) -> Image {
    x.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

/// The generated 8-bit test images of the sampling comparison.
pub fn sampling_images(n: usize, size: usize) -> Vec<Image> {
    let mut v: Vec<Image> = (0..n as u64).map(|s| quantize8(&data::clean_image(1000 + s, size, size))).collect();
    v.push(checkerboard(size, size));
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingRow {
    pub method: &'static str,
    pub images: usize,
    /// From the MSE pooled over all images, after 8-bit requantisation.
    pub psnr: f64,
    /// Mean SSIM after 8-bit requantisation.
    pub ssim: f64,
    /// Before requantisation.
    pub max_abs_err: f64,
    pub checkerboard_ssim: f64,
}

/// Round trips every image and scores the 8-bit result, as if it were saved
/// and reloaded.
pub fn sampling_comparison(images: &[Image], rounds: usize) -> Result<Vec<SamplingRow>> {
    let mut rows = Vec::new();
    for s in Sampler::ALL {
        let (mut mse, mut q, mut err, mut cb) = (0.0, 0.0, 0.0f64, f64::NAN);
        for (i, x) in images.iter().enumerate() {
            let raw = s.round_trip(x, rounds)?;
            err = err.max(x.max_abs_diff(&raw));
            let y = quantize8(&raw);
            mse += metrics::mse(x, &y)?;
            let ss = metrics::ssim(x, &y)?;
            q += ss;
            if i + 1 == images.len() {
                cb = ss;
            }
        }
        let n = images.len() as f64;
        let psnr = if mse == 0.0 { f64::INFINITY } else { 10.0 * (n / mse).log10() };
        rows.push(SamplingRow { method: s.name(), images: images.len(), psnr, ssim: q / n, max_abs_err: err, checkerboard_ssim: cb });
    }
    Ok(rows)
}

/// Largest `merge(split(x))` error over `n` random `c x h x w` arrays.
pub fn fourier_round_trip(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let x = Tensor::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0));
        let y = transforms::fourier_merge(&transforms::fourier_split(&x)?)?;
        worst = worst.max(x.max_abs_diff(&y));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradProbe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Model used by the gradient check: every module on, width 4, depth 2 so
/// the deepest band of a 16x16 input is 4x4.
pub fn grad_check_config() -> ModelConfig {
    ModelConfig { depth: 2, smgm_width: 4, low_width: 4, high_width: 4, n_res: 1, ..Default::default() }
}

fn probe_loss(model: &Model, x: &Image, y: &Image, gt_low: &Tensor, l1: f64, l2: f64) -> Result<f64> {
    let mut g = Graph::inference(&model.params);
    let xv = g.constant(x.clone());
    let fw = model.forward_graph(&mut g, xv)?;
    let lv = training::total_loss_var(&mut g, fw.output, y, fw.priors.map(|p| p.g), gt_low, model.config.depth, l1, l2);
    Ok(g.value(lv.total).data()[0])
}

/// Central differences of the training objective against reverse mode for
/// `n` parameter entries drawn from the SMGM, the amplitude gate, the phase
/// attention and the high-frequency gates.
pub fn gradient_check(n: usize, seed: u64) -> Result<Vec<GradProbe>> {
    let cfg = grad_check_config();
    let mut model = Model::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    // Move off the structured initialisation so no gradient is zero by construction.
    let ids: Vec<ParamId> = model.params.ids().collect();
    for &id in &ids {
        for v in model.params.get_mut(id).data_mut() {
            *v += rng.random_range(-0.15..0.15);
        }
    }
    let clean = data::clean_image(seed, 16, 16);
    let (x, y) = data::synth_pair(&clean, &data::SynthSpec::default(), seed);
    let gt_low = training::gt_low_band(&y, cfg.depth)?;
    let (l1, l2) = (1.0, 0.1);

    let mut g = Graph::new(&model.params);
    let xv = g.constant(x.clone());
    let fw = model.forward_graph(&mut g, xv)?;
    let lv = training::total_loss_var(&mut g, fw.output, &y, fw.priors.map(|p| p.g), &gt_low, cfg.depth, l1, l2);
    let grads = g.backward(lv.total);

    let groups = ["smgm.", "low.amp.gate", "low.pha.", "high."];
    let mut candidates: Vec<Vec<ParamId>> = groups
        .iter()
        .map(|p| ids.iter().copied().filter(|&id| model.params.name(id).starts_with(p)).collect())
        .collect();
    for (g, c) in groups.iter().zip(&mut candidates) {
        if *g == "high." {
            c.retain(|&id| model.params.name(id).contains("gate"));
        }
    }

    let mut probes = Vec::with_capacity(n);
    for k in 0..n {
        let pool = &candidates[k % candidates.len()];
        let id = pool[rng.random_range(0..pool.len())];
        let len = model.params.get(id).len();
        let j = rng.random_range(0..len);
        let analytic = grads.param(id).map_or(0.0, |t| t.data()[j]);
        let h = 1e-5;
        let orig = model.params.get(id).data()[j];
        model.params.get_mut(id).data_mut()[j] = orig + h;
        let up = probe_loss(&model, &x, &y, &gt_low, l1, l2)?;
        model.params.get_mut(id).data_mut()[j] = orig - h;
        let down = probe_loss(&model, &x, &y, &gt_low, l1, l2)?;
        model.params.get_mut(id).data_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs()).max(1e-7);
        probes.push(GradProbe {
            param: model.params.name(id).to_string(),
            index: j,
            analytic,
            numeric,
            rel_err: (analytic - numeric).abs() / scale,
        });
    }
    Ok(probes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub sampling: Vec<SamplingRow>,
    pub fourier_max_err: f64,
    pub gradients: Vec<GradProbe>,
    pub params: usize,
    pub param_groups: Vec<(String, usize)>,
}

impl VerifyReport {
    pub fn sampling_ok(&self) -> bool {
        self.sampling.iter().all(|r| {
            if r.method == "wavelet" {
                r.max_abs_err < LOSSLESS_TOL && r.ssim == 1.0 && r.psnr == f64::INFINITY
            } else {
                r.ssim < 1.0 && r.checkerboard_ssim < 1.0
            }
        })
    }

    pub fn fourier_ok(&self) -> bool {
        self.fourier_max_err < LOSSLESS_TOL
    }

    pub fn gradients_ok(&self) -> bool {
        !self.gradients.is_empty() && self.gradients.iter().all(|p| p.rel_err < GRAD_TOL)
    }

    pub fn budget_ok(&self) -> bool {
        self.params <= PARAM_BUDGET
    }

    /// Names of the failed checks.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut f = Vec::new();
        if !self.sampling_ok() {
            f.push("lossless sampling");
        }
        if !self.fourier_ok() {
            f.push("fourier round trip");
        }
        if !self.gradients_ok() {
            f.push("gradient check");
        }
        if !self.budget_ok() {
            f.push("parameter budget");
        }
        f
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[sampling] {ROUNDS} rounds down/up, {} images (last is a checkerboard)", self.sampling.first().map_or(0, |r| r.images));
        let _ = writeln!(s, "method,psnr_db,ssim,max_abs_err,checkerboard_ssim");
        for r in &self.sampling {
            let p = if r.psnr.is_infinite() { "inf".to_string() } else { format!("{:.3}", r.psnr) };
            let _ = writeln!(s, "{},{p},{:.6},{:.3e},{:.6}", r.method, r.ssim, r.max_abs_err, r.checkerboard_ssim);
        }
        let _ = writeln!(s, "[fourier] max_abs_err {:.3e}", self.fourier_max_err);
        let _ = writeln!(s, "[gradients] param,index,analytic,numeric,rel_err");
        for p in &self.gradients {
            let _ = writeln!(s, "{},{},{:.6e},{:.6e},{:.2e}", p.param, p.index, p.analytic, p.numeric, p.rel_err);
        }
        let _ = writeln!(s, "[budget] params {} (limit {PARAM_BUDGET}, reference {REFERENCE_PARAMS})", self.params);
        for (g, n) in &self.param_groups {
            let _ = writeln!(s, "  {g} {n}");
        }
        let f = self.failures();
        if f.is_empty() {
            let _ = writeln!(s, "all checks passed");
        } else {
            let _ = writeln!(s, "FAILED: {}", f.join(", "));
        }
        s
    }
}

pub fn run(seed: u64) -> Result<VerifyReport> {
    let images = sampling_images(20, 64);
    let sampling = sampling_comparison(&images, ROUNDS)?;
    let fourier_max_err = fourier_round_trip(20, 3, 32, 48, seed)?;
    let gradients = gradient_check(10, seed)?;
    let model = Model::new(ModelConfig::default(), seed)?;
    Ok(VerifyReport { sampling, fourier_max_err, gradients, params: model.count_params(), param_groups: model.param_report() })
}
