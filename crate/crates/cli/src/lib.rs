//! Command implementations behind the `spjfnet` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use spjfnet::checkpoint;
use spjfnet::data::{self, Pair, SynthSpec};
use spjfnet::metrics;
use spjfnet::network::{Model, ModelConfig, Toggles};
use spjfnet::training::{self, AblationTable, ToggleSet, TrainConfig, TrainOptions, TrainReport};
use spjfnet::verify::{self, VerifyReport};
use spjfnet::{Error, Image, Result, Tensor};

/// Synthetic pairs generated in place of a dataset on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthData {
    pub train: usize,
    pub test: usize,
    pub size: usize,
    pub seed: u64,
    pub spec: SynthSpec,
}

impl Default for SynthData {
    fn default() -> Self {
        Self { train: 64, test: 16, size: 64, seed: 1, spec: SynthSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset root holding `<split>/{low,high}` or `{low,high}`.
    pub root: Option<PathBuf>,
    pub train_split: String,
    pub test_split: String,
    /// Used when `root` is absent.
    pub synth: Option<SynthData>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { root: None, train_split: "train".into(), test_split: "test".into(), synth: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { model: ModelConfig::default(), train: TrainConfig::default(), data: DataConfig::default(), output: "runs/default".into() }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(&self.model)?;
        if let Some(s) = &self.data.synth {
            s.spec.validate()?;
            if s.size == 0 || s.size % self.model.multiple() != 0 {
                return Err(Error::Config(format!("synth size {} must be a positive multiple of {}", s.size, self.model.multiple())));
            }
        }
        if self.data.root.is_none() && self.data.synth.is_none() {
            return Err(Error::Config("data needs either a root directory or a [data.synth] table".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Training and evaluation pairs.
    pub fn load_data(&self) -> Result<(Vec<Pair>, Vec<Pair>)> {
        if let Some(root) = &self.data.root {
            let train = data::load_pairs(root, &self.data.train_split)?.pairs;
            let test = data::load_pairs(root, &self.data.test_split)?.pairs;
            return Ok((train, test));
        }
        let s = self.data.synth.clone().unwrap_or_default();
        let train = data::synth_dataset(s.train, s.size, s.size, &s.spec, s.seed);
        let test = data::synth_dataset(s.test, s.size, s.size, &s.spec, s.seed.wrapping_add(1 << 32));
        Ok((train, test))
    }
}

pub const REPORT_CSV: &str = "train_report.csv";
pub const CONFIG_ECHO: &str = "config.toml";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const ABLATION_CSV: &str = "ablation.csv";

pub struct TrainOutcome {
    pub model: Model,
    pub report: TrainReport,
    pub output: PathBuf,
}

pub fn cmd_train(config: &Path, iters: Option<usize>, seed: Option<u64>) -> Result<TrainOutcome> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(n) = iters {
        cfg.train.iters = n;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    train_run(&cfg)
}

pub fn train_run(cfg: &RunConfig) -> Result<TrainOutcome> {
    let (train, test) = cfg.load_data()?;
    fs::create_dir_all(&cfg.output).map_err(|e| Error::Io { path: cfg.output.clone(), source: e })?;
    training::write_text(&cfg.output.join(CONFIG_ECHO), &cfg.to_toml()?)?;
    let opts = TrainOptions { checkpoint_dir: Some(cfg.output.join(CHECKPOINT_DIR)), eval: test, init_seed: None };
    let (model, report) = training::train(&train, &cfg.model, &cfg.train, &opts)?;
    training::write_text(&cfg.output.join(REPORT_CSV), &report.to_csv())?;
    Ok(TrainOutcome { model, report, output: cfg.output.clone() })
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Mirror-pads the bottom and right edges up to the next multiple of `m`.
pub fn pad_to_multiple(x: &Image, m: usize) -> Image {
    let (c, h, w) = x.chw();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (ph, pw) == (h, w) {
        return x.clone();
    }
    Tensor::from_fn(c, ph, pw, |ci, y, xx| x.at(ci, reflect(y as isize, h), reflect(xx as isize, w)))
}

/// Enhances an image of any size.
pub fn enhance(model: &Model, x: &Image) -> Result<Image> {
    let (_, h, w) = x.chw();
    let padded = pad_to_multiple(x, model.config.multiple());
    let y = model.infer(&padded)?;
    y.crop(0, 0, h, w)
}

fn png_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(Error::Dataset(format!("input {} does not exist", input.display())));
    }
    let mut v: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::Io { path: input.into(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    v.sort();
    Ok(v)
}

/// Writes one enhanced PNG per input, keeping the file name.
pub fn cmd_infer(ckpt: &Path, input: &Path, output: &Path) -> Result<Vec<PathBuf>> {
    let (model, _) = checkpoint::load(ckpt)?;
    let inputs = png_inputs(input)?;
    if inputs.is_empty() {
        return Err(Error::Dataset(format!("no PNG files in {}", input.display())));
    }
    let mut written = Vec::with_capacity(inputs.len());
    for p in inputs {
        let x = data::read_png(&p)?;
        let y = enhance(&model, &x)?;
        let out = output.join(p.file_name().expect("file"));
        data::write_png(&out, &y)?;
        written.push(out);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image rows followed by a `mean` row.
pub fn metric_rows(names: &[String], preds: &[Image], gts: &[Image]) -> Result<Vec<EvalRow>> {
    if preds.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let mut rows = Vec::with_capacity(preds.len() + 1);
    for ((n, p), g) in names.iter().zip(preds).zip(gts) {
        rows.push(EvalRow { name: n.clone(), psnr: metrics::psnr(p, g)?, ssim: metrics::ssim(p, g)? });
    }
    let k = rows.len() as f64;
    let mean = EvalRow {
        name: "mean".into(),
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / k,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / k,
    };
    rows.push(mean);
    Ok(rows)
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("name,psnr,ssim\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.name, r.psnr, r.ssim);
    }
    s
}

/// Evaluates on `<data>/test` (or `<data>` directly) and writes the CSV.
pub fn cmd_eval(ckpt: &Path, data_root: &Path, csv: &Path) -> Result<Vec<EvalRow>> {
    let (model, _) = checkpoint::load(ckpt)?;
    let set = data::load_pairs(data_root, "test")?;
    if set.is_empty() {
        return Err(Error::Dataset(format!("no test pairs under {}", data_root.display())));
    }
    let preds = set.pairs.iter().map(|p| enhance(&model, &p.low)).collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = set.pairs.iter().map(|p| p.name.clone()).collect();
    let gts: Vec<Image> = set.pairs.iter().map(|p| p.high.clone()).collect();
    let rows = metric_rows(&names, &preds, &gts)?;
    training::write_text(csv, &eval_csv(&rows))?;
    Ok(rows)
}

pub fn cmd_verify(report: Option<&Path>, seed: u64) -> Result<VerifyReport> {
    let r = verify::run(seed)?;
    if let Some(p) = report {
        training::write_text(p, &r.to_text())?;
    }
    Ok(r)
}

/// Parses one `--disable` value, e.g. `smgm,d_high`. The empty string is the
/// full model.
pub fn parse_disable(list: &str) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if Toggles::default().get(name).is_none() {
            return Err(Error::Config(format!("unknown toggle {name}; valid toggles: {}", Toggles::NAMES.join(", "))));
        }
        if !out.iter().any(|n| n == name) {
            out.push(name.to_string());
        }
    }
    Ok(out)
}

/// Names a disabled set after its core-ablation row when it has one.
pub fn row_label(disabled: &[String], fallback: usize) -> String {
    let mut d: Vec<&str> = disabled.iter().map(String::as_str).collect();
    d.sort_unstable();
    for s in training::core_ablation_sets() {
        let mut e: Vec<&str> = s.disabled.iter().map(String::as_str).collect();
        e.sort_unstable();
        if e == d {
            return s.name;
        }
    }
    format!("S{fallback}")
}

/// `disable` holds one comma-separated list per toggle set; `core` appends
/// rows D to J. With neither, a single full-model row is produced.
pub fn ablation_sets(disable: &[String], core: bool) -> Result<Vec<ToggleSet>> {
    let mut sets = Vec::new();
    for (i, list) in disable.iter().enumerate() {
        let d = parse_disable(list)?;
        sets.push(ToggleSet { name: row_label(&d, i + 1), disabled: d });
    }
    if core {
        sets.extend(training::core_ablation_sets());
    }
    if sets.is_empty() {
        sets.push(ToggleSet::new("J", &[]));
    }
    Ok(sets)
}

pub fn cmd_ablate(config: &Path, disable: &[String], core: bool) -> Result<(AblationTable, PathBuf)> {
    let cfg = RunConfig::load(config)?;
    let sets = ablation_sets(disable, core)?;
    let (train, test) = cfg.load_data()?;
    let eval = if test.is_empty() { train.clone() } else { test };
    let table = training::ablate(&train, &eval, &cfg.model, &cfg.train, &sets)?;
    let path = cfg.output.join(ABLATION_CSV);
    training::write_text(&path, &table.to_csv())?;
    Ok((table, path))
}
