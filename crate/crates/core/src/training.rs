//! Loss assembly, Adam with a multi-step schedule, the training loop and the
//! ablation driver.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::Pair;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::metrics;
use crate::network::{Model, ModelConfig, Toggles};
use crate::params::ParamId;
use crate::smgm::{self, PriorPack};
use crate::tensor::{Image, Tensor};
use crate::transforms;

/// Milestones of a full-length run, rescaled to `iters / FULL_ITERS`.
pub const FULL_MILESTONES: [usize; 3] = [50_000, 100_000, 125_000];
pub const FULL_ITERS: usize = 150_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Explicit milestones; when absent the full-length ones are rescaled.
    pub milestones: Option<Vec<usize>>,
    pub decay: f64,
    pub batch: usize,
    pub crop: usize,
    pub iters: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clipping threshold; off when absent.
    pub grad_clip: Option<f64>,
    /// Defaults to `max(iters / 10, 100)`.
    pub checkpoint_every: Option<usize>,
    /// Evaluate on the held-out pairs every this many steps (and at the end).
    pub eval_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 4.0e-4,
            milestones: None,
            decay: 0.5,
            batch: 8,
            crop: 256,
            iters: 1000,
            lambda1: 1.0,
            lambda2: 0.1,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: None,
            checkpoint_every: None,
            eval_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.decay > 0.0) {
            return Err(Error::Config("decay must be positive".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if self.crop == 0 || self.crop % model.multiple() != 0 {
            return Err(Error::Config(format!(
                "crop {} must be a positive multiple of 2^depth = {}",
                self.crop,
                model.multiple()
            )));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if let Some(m) = &self.milestones {
            if m.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!("milestones {m:?} are not strictly increasing")));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn resolved_milestones(&self) -> Vec<usize> {
        if let Some(m) = &self.milestones {
            return m.clone();
        }
        let mut out: Vec<usize> = Vec::with_capacity(3);
        for m in FULL_MILESTONES {
            let s = ((m as u128 * self.iters as u128) / FULL_ITERS as u128) as usize;
            let floor = out.last().map_or(1, |p| p + 1);
            out.push(s.max(floor));
        }
        out
    }

    /// Learning rate for the update at 0-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let drops = self.resolved_milestones().iter().filter(|&&m| step >= m).count();
        self.lr * self.decay.powi(drops as i32)
    }

    pub fn checkpoint_interval(&self) -> usize {
        self.checkpoint_every.unwrap_or((self.iters / 10).max(100)).max(1)
    }
}

/// Loss handles from [`total_loss_var`].
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub l1: Var,
    pub prior: Option<Var>,
}

/// `mean|y_hat - y| + prior loss` on the graph. The prior term is left out
/// when there are no learned priors or both weights are zero.
pub fn total_loss_var(
    g: &mut Graph,
    y_hat: Var,
    y: &Image,
    prior_grad: Option<Var>,
    gt_low: &Tensor,
    level: usize,
    l1: f64,
    l2: f64,
) -> LossVars {
    let yv = g.constant(y.clone());
    let d = g.sub(y_hat, yv);
    let d = g.abs(d);
    let rec = g.mean(d);
    match prior_grad.filter(|_| l1 > 0.0 || l2 > 0.0) {
        Some(pg) => {
            let ls = smgm::smgm_loss_var(g, pg, gt_low, level, l1, l2);
            LossVars { total: g.add(rec, ls), l1: rec, prior: Some(ls) }
        }
        None => LossVars { total: rec, l1: rec, prior: None },
    }
}

/// Scalar version of the training objective.
pub fn total_loss(
    y_hat: &Image,
    y: &Image,
    priors: Option<&PriorPack>,
    gt_low: &Tensor,
    level: usize,
    l1: f64,
    l2: f64,
) -> Result<f64> {
    if y_hat.shape() != y.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", y_hat.shape(), y.shape())));
    }
    if l1 < 0.0 || l2 < 0.0 {
        return Err(Error::Config("loss weights must be nonnegative".into()));
    }
    let rec = metrics_l1(y_hat, y);
    match priors.filter(|_| l1 > 0.0 || l2 > 0.0) {
        Some(p) => Ok(rec + smgm::smgm_loss(p, gt_low, level, l1, l2)?),
        None => Ok(rec),
    }
}

fn metrics_l1(a: &Image, b: &Image) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Coarsest low band of a ground-truth image.
pub fn gt_low_band(y: &Image, depth: usize) -> Result<Tensor> {
    Ok(transforms::decompose(y, depth)?.coarsest_low().clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub l1: f64,
    pub prior: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub seconds: f64,
    /// Mean PSNR / SSIM of the untouched inputs on the evaluation pairs.
    pub input_psnr: Option<f64>,
    pub input_ssim: Option<f64>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,lr,loss,l1,prior,seconds,eval_psnr,eval_ssim\n");
        for r in &self.steps {
            let ev = self.evals.iter().find(|e| e.step == r.step + 1);
            let (p, q) = ev.map_or((String::new(), String::new()), |e| (e.psnr.to_string(), e.ssim.to_string()));
            let _ = writeln!(s, "{},{},{},{},{},{:.3},{p},{q}", r.step, r.lr, r.loss, r.l1, r.prior, r.seconds);
        }
        s
    }

    pub fn last_eval(&self) -> Option<&EvalRecord> {
        self.evals.last()
    }
}

/// Where training writes checkpoints and what it evaluates on.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub checkpoint_dir: Option<PathBuf>,
    pub eval: Vec<Pair>,
    /// Seed for parameter initialisation; defaults to the data seed.
    pub init_seed: Option<u64>,
}

pub fn checkpoint_name(step: usize) -> String {
    format!("step_{step:07}.ckpt")
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";

struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    fn new(model: &Model) -> Self {
        let zeros: Vec<Tensor> = model.params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    fn step(&mut self, model: &mut Model, grads: &[Tensor], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let ids: Vec<ParamId> = model.params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let p = model.params.get_mut(id).data_mut();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, &gj) in grads[i].data().iter().enumerate() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
    }
}

fn module_of(name: &str) -> String {
    let mut it = name.split('.');
    match (it.next(), it.next()) {
        (Some("high"), Some(l)) => format!("high_branch level {l}"),
        (Some("low"), Some(part)) => format!("low_branch.{part}"),
        (Some(first), _) => first.to_string(),
        _ => name.to_string(),
    }
}

/// Random `crop x crop` window with independent horizontal and vertical
/// flips, applied identically to both images.
fn augment(rng: &mut ChaCha8Rng, pair: &Pair, crop: usize) -> Result<(Image, Image)> {
    let (_, h, w) = pair.low.chw();
    let y0 = rng.random_range(0..=h - crop);
    let x0 = rng.random_range(0..=w - crop);
    let mut x = pair.low.crop(y0, x0, crop, crop)?;
    let mut y = pair.high.crop(y0, x0, crop, crop)?;
    if rng.random_bool(0.5) {
        x = x.flip_horizontal();
        y = y.flip_horizontal();
    }
    if rng.random_bool(0.5) {
        x = x.flip_vertical();
        y = y.flip_vertical();
    }
    Ok((x, y))
}

/// Mean PSNR and SSIM of the model's inference outputs on `pairs`.
pub fn evaluate(model: &Model, pairs: &[Pair]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let (mut p, mut s) = (0.0, 0.0);
    for pair in pairs {
        let out = model.infer(&pair.low)?;
        p += metrics::psnr(&out, &pair.high)?;
        s += metrics::ssim(&out, &pair.high)?;
    }
    Ok((p / pairs.len() as f64, s / pairs.len() as f64))
}

/// Mean PSNR and SSIM of the raw inputs against their targets.
pub fn input_metrics(pairs: &[Pair]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let (mut p, mut s) = (0.0, 0.0);
    for pair in pairs {
        p += metrics::psnr(&pair.low, &pair.high)?;
        s += metrics::ssim(&pair.low, &pair.high)?;
    }
    Ok((p / pairs.len() as f64, s / pairs.len() as f64))
}

struct BatchResult {
    grads: Vec<Tensor>,
    loss: f64,
    l1: f64,
    prior: f64,
}

fn batch_gradients(model: &Model, batch: &[(Image, Image)], cfg: &TrainConfig) -> Result<BatchResult> {
    let depth = model.config.depth;
    let mut grads: Vec<Tensor> = model.params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
    let (mut loss, mut l1, mut prior) = (0.0, 0.0, 0.0);
    let k = 1.0 / batch.len() as f64;
    for (x, y) in batch {
        let mut g = Graph::new(&model.params);
        let xv = g.constant(x.clone());
        let fw = model.forward_graph(&mut g, xv)?;
        let gt_low = gt_low_band(y, depth)?;
        let lv = total_loss_var(&mut g, fw.output, y, fw.priors.map(|p| p.g), &gt_low, depth, cfg.lambda1, cfg.lambda2);
        let total = g.value(lv.total).data()[0];
        if !total.is_finite() {
            return Err(Error::NonFinite { module: "loss".into(), step: None });
        }
        loss += k * total;
        l1 += k * g.value(lv.l1).data()[0];
        prior += k * lv.prior.map_or(0.0, |p| g.value(p).data()[0]);
        let gr = g.backward(lv.total);
        for (id, t) in gr.params() {
            let acc = &mut grads[id.index()];
            for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += k * b;
            }
        }
    }
    Ok(BatchResult { grads, loss, l1, prior })
}

fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) {
    let norm = grads.iter().map(Tensor::sum_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale_inplace(s));
    }
}

fn with_step(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { module, .. } => Error::NonFinite { module, step: Some(step) },
        other => other,
    }
}

/// Trains a fresh model. Deterministic in `(data, configs, options)`.
pub fn train(data: &[Pair], model_cfg: &ModelConfig, cfg: &TrainConfig, opts: &TrainOptions) -> Result<(Model, TrainReport)> {
    cfg.validate(model_cfg)?;
    let model = Model::new(model_cfg.clone(), opts.init_seed.unwrap_or(cfg.seed))?;
    train_model(model, data, cfg, opts)
}

/// Continues training `model` in place of a fresh initialisation.
pub fn train_model(mut model: Model, data: &[Pair], cfg: &TrainConfig, opts: &TrainOptions) -> Result<(Model, TrainReport)> {
    cfg.validate(&model.config)?;
    if data.is_empty() && cfg.iters > 0 {
        return Err(Error::Dataset("training set is empty".into()));
    }
    for p in data {
        let (_, h, w) = p.low.chw();
        if h < cfg.crop || w < cfg.crop {
            return Err(Error::Dataset(format!("{}: {h}x{w} is smaller than the {} crop", p.name, cfg.crop)));
        }
        if p.low.shape() != p.high.shape() {
            return Err(Error::Dataset(format!("{}: low and high shapes differ", p.name)));
        }
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD1B5_4A32_D192_ED03);
    let mut adam = Adam::new(&model);
    let mut report = TrainReport::default();
    if !opts.eval.is_empty() {
        let (p, s) = input_metrics(&opts.eval)?;
        report.input_psnr = Some(p);
        report.input_ssim = Some(s);
    }
    let every = cfg.checkpoint_interval();
    let save = |model: &Model, step: usize, name: &str| -> Result<()> {
        if let Some(dir) = &opts.checkpoint_dir {
            checkpoint::save(&dir.join(name), model, step as u64)?;
        }
        Ok(())
    };
    save(&model, 0, &checkpoint_name(0))?;

    for step in 0..cfg.iters {
        let batch = (0..cfg.batch)
            .map(|_| {
                let i = rng.random_range(0..data.len());
                augment(&mut rng, &data[i], cfg.crop)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut br = batch_gradients(&model, &batch, cfg).map_err(|e| with_step(e, step))?;
        if let Some(c) = cfg.grad_clip {
            clip_global_norm(&mut br.grads, c);
        }
        if let Some((id, _)) = br.grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            let name = model.params.iter().nth(id).map(|(_, n, _)| n.to_string()).unwrap_or_default();
            return Err(Error::NonFinite { module: format!("gradient of {}", module_of(&name)), step: Some(step) });
        }
        let lr = cfg.lr_at(step);
        adam.step(&mut model, &br.grads, lr, cfg);
        if let Some((_, name, _)) = model.params.iter().find(|(_, _, t)| !t.is_finite()) {
            return Err(Error::NonFinite { module: module_of(name), step: Some(step) });
        }
        report.steps.push(StepRecord {
            step,
            lr,
            loss: br.loss,
            l1: br.l1,
            prior: br.prior,
            seconds: start.elapsed().as_secs_f64(),
        });
        let done = step + 1;
        if done % 50 == 0 || done == cfg.iters {
            log::info!("step {done}/{} loss {:.5} lr {lr:.2e}", cfg.iters, br.loss);
        }
        let eval_now = cfg.eval_every.is_some_and(|e| e > 0 && done % e == 0) || done == cfg.iters;
        if eval_now && !opts.eval.is_empty() {
            let (p, s) = evaluate(&model, &opts.eval)?;
            report.evals.push(EvalRecord { step: done, psnr: p, ssim: s });
        }
        if done % every == 0 && done != cfg.iters {
            save(&model, done, &checkpoint_name(done))?;
        }
    }
    if cfg.iters > 0 {
        save(&model, cfg.iters, FINAL_CHECKPOINT)?;
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok((model, report))
}

/// One row of an ablation plan: a label and the toggles it disables.
#[derive(Debug, Clone, PartialEq)]
pub struct ToggleSet {
    pub name: String,
    pub disabled: Vec<String>,
}

impl ToggleSet {
    pub fn new(name: &str, disabled: &[&str]) -> Self {
        Self { name: name.into(), disabled: disabled.iter().map(|s| s.to_string()).collect() }
    }

    pub fn toggles(&self, base: Toggles) -> Result<Toggles> {
        let mut t = base;
        for d in &self.disabled {
            t.set(d, false)?;
        }
        Ok(t)
    }
}

/// Rows D to J of the core-component ablation.
pub fn core_ablation_sets() -> Vec<ToggleSet> {
    vec![
        ToggleSet::new("D", &["smgm"]),
        ToggleSet::new("E", &["d_low"]),
        ToggleSet::new("F", &["d_high"]),
        ToggleSet::new("G", &["smgm", "d_high"]),
        ToggleSet::new("H", &["d_low", "d_high"]),
        ToggleSet::new("I", &["smgm", "d_low"]),
        ToggleSet::new("J", &[]),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub toggles: Toggles,
    pub params: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub depth: usize,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl AblationTable {
    pub fn header() -> String {
        let mut h = String::from("row,depth");
        for n in Toggles::NAMES {
            h.push(',');
            h.push_str(n);
        }
        h.push_str(",lambda1,lambda2,params,psnr,ssim");
        h
    }

    pub fn to_csv(&self) -> String {
        let mut s = Self::header();
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{}", r.name, self.depth);
            for n in Toggles::NAMES {
                let on = r.toggles.get(n).expect("known toggle");
                s.push_str(if on { ",1" } else { ",0" });
            }
            let _ = writeln!(s, ",{},{},{},{:.4},{:.4}", self.lambda1, self.lambda2, r.params, r.psnr, r.ssim);
        }
        s
    }
}

/// Trains one model per toggle set under identical seeds and evaluates each
/// on `eval`.
pub fn ablate(
    data: &[Pair],
    eval: &[Pair],
    base: &ModelConfig,
    cfg: &TrainConfig,
    sets: &[ToggleSet],
) -> Result<AblationTable> {
    let mut seen = BTreeSet::new();
    for s in sets {
        if !seen.insert(s.name.as_str()) {
            return Err(Error::Config(format!("duplicate toggle-set name {}", s.name)));
        }
        s.toggles(base.toggles)?;
    }
    let mut table = AblationTable { rows: Vec::new(), depth: base.depth, lambda1: cfg.lambda1, lambda2: cfg.lambda2 };
    for s in sets {
        let mc = ModelConfig { toggles: s.toggles(base.toggles)?, ..base.clone() };
        let (model, _) = train(data, &mc, cfg, &TrainOptions::default())?;
        let (psnr, ssim) = evaluate(&model, eval)?;
        log::info!("ablation row {}: {psnr:.3} dB, SSIM {ssim:.4}", s.name);
        table.rows.push(AblationRow { name: s.name.clone(), toggles: mc.toggles, params: model.count_params(), psnr, ssim });
    }
    Ok(table)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
