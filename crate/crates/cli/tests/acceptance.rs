//! One PASS/FAIL line per acceptance criterion.
//!
//! Runs as a plain binary (`harness = false`). Failing criteria are printed
//! and summarised but do not abort the workspace test run; set
//! `SPJFNET_ACCEPTANCE_STRICT=1` to turn any failure into a nonzero exit.
//! `SPJFNET_ACCEPTANCE_ONLY=1,3,10` runs a subset.

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spjfnet::data::{self, synth_dataset, Pair, SynthSpec};
use spjfnet::network::{Model, ModelConfig, Toggles};
use spjfnet::training::{self, TrainConfig, TrainOptions};
use spjfnet::verify::{self, Sampler};
use spjfnet::Tensor;
use spjfnet_cli::{RunConfig, SynthData, CHECKPOINT_DIR};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    Tensor::from_fn(3, h, w, |_, _, _| rng.random_range(0.0..1.0))
}

fn c1_lossless_sampling() -> Outcome {
    let images = verify::sampling_images(20, 64);
    let rows = verify::sampling_comparison(&images, verify::ROUNDS).expect("sampling comparison");
    let wave = &rows[0];
    let others_lossy = rows[1..].iter().all(|r| r.ssim < 1.0 && r.checkerboard_ssim < 1.0);
    let lossless = wave.max_abs_err < 1e-5 && wave.ssim == 1.0 && wave.psnr == f64::INFINITY;
    let mut d = format!("{} images;", wave.images);
    for r in &rows {
        d.push_str(&format!(" {} psnr {:.3} ssim {:.6} max_err {:.1e};", r.method, r.psnr, r.ssim, r.max_abs_err));
    }
    assert_eq!(rows.iter().map(|r| r.method).collect::<Vec<_>>(), Sampler::ALL.map(Sampler::name));
    outcome(lossless && others_lossy, d)
}

fn c2_fourier() -> Outcome {
    let err = verify::fourier_round_trip(20, 3, 64, 64, 2).expect("fourier");
    outcome(err < 1e-5, format!("20 arrays 3x64x64, max_abs_err {err:.2e} (tol 1e-5)"))
}

fn c3_gradients() -> Outcome {
    let probes = verify::gradient_check(10, 3).expect("gradient check");
    let worst = probes.iter().map(|p| p.rel_err).fold(0.0, f64::max);
    let names: Vec<&str> = probes.iter().map(|p| p.param.as_str()).collect();
    outcome(worst < verify::GRAD_TOL, format!("10 probes, worst rel err {worst:.2e} (tol 1e-3): {}", names.join(" ")))
}

fn c4_identity() -> Outcome {
    let m = Model::new(ModelConfig { toggles: Toggles::all(false), ..Default::default() }, 0).expect("model");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let worst = (0..10)
        .map(|_| {
            let x = random_image(&mut rng, 64, 64);
            m.infer(&x).expect("forward").max_abs_diff(&x)
        })
        .fold(0.0, f64::max);
    outcome(worst < 1e-5 && m.count_params() == 0, format!("10 images, max_abs_err {worst:.2e}, {} params", m.count_params()))
}

fn c5_ranges() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut gmin, mut gmax, mut mmin, mut mmax, mut row, mut excess) = (1.0f64, 0.0f64, 1.0f64, 0.0f64, 0.0f64, f64::NEG_INFINITY);
    for i in 0..100 {
        let m = Model::new(ModelConfig::default(), 1000 + i).expect("model");
        let x = random_image(&mut rng, 64, 64);
        let st = m.range_stats(&x).expect("forward");
        gmin = gmin.min(st.gamma_min);
        gmax = gmax.max(st.gamma_max);
        mmin = mmin.min(st.gate_min);
        mmax = mmax.max(st.gate_max);
        row = row.max(st.attention_row_error);
        excess = excess.max(st.b2_excess);
    }
    let pass = gmin > 0.0 && gmax < 1.0 && mmin > 0.0 && mmax < 1.0 && row < 1e-6 && excess <= 0.0;
    outcome(
        pass,
        format!("100 forwards: gamma [{gmin:.4}, {gmax:.4}], M_s [{mmin:.4}, {mmax:.4}], row err {row:.1e}, max(|B2|-|A|) {excess:.2e}"),
    )
}

fn c6_budget() -> Outcome {
    let n = Model::new(ModelConfig::default(), 0).expect("model").count_params();
    outcome(
        n <= verify::PARAM_BUDGET,
        format!("{n} params (limit {}, reference {} = {:.2}x)", verify::PARAM_BUDGET, verify::REFERENCE_PARAMS, n as f64 / verify::REFERENCE_PARAMS as f64),
    )
}

fn probe_config(iters: usize, batch: usize) -> TrainConfig {
    TrainConfig { iters, batch, crop: 64, seed: 7, lr: PROBE_LR, milestones: Some(probe_milestones(iters)), ..Default::default() }
}

/// Learning rate for the desk-scale probes.
const PROBE_LR: f64 = 5e-3;

fn probe_milestones(iters: usize) -> Vec<usize> {
    vec![iters * 3 / 5, iters * 4 / 5, iters * 19 / 20]
}

fn c7_overfit() -> Outcome {
    let pairs = synth_dataset(4, 64, 64, &SynthSpec::default(), 70);
    let opts = TrainOptions { eval: pairs.clone(), ..Default::default() };
    let (_, r) = training::train(&pairs, &ModelConfig::default(), &probe_config(2000, 4), &opts).expect("train");
    let p = r.last_eval().expect("eval").psnr;
    outcome(p >= 35.0, format!("4 pairs 64x64, 2000 iters, batch 4, lr {PROBE_LR}: train PSNR {p:.2} dB (target 35), input {:.2} dB, {:.0}s", r.input_psnr.unwrap_or(f64::NAN), r.seconds))
}

fn c8_generalization() -> Outcome {
    let spec = SynthSpec::default();
    let train = synth_dataset(64, 64, 64, &spec, 800);
    let test = synth_dataset(16, 64, 64, &spec, 9000);
    let opts = TrainOptions { eval: test.clone(), ..Default::default() };
    let (_, r) = training::train(&train, &ModelConfig::default(), &probe_config(5000, 4), &opts).expect("train");
    let e = r.last_eval().expect("eval");
    let (ip, is) = (r.input_psnr.unwrap(), r.input_ssim.unwrap());
    outcome(
        e.psnr - ip >= 5.0 && e.ssim > is,
        format!("64/16 pairs, 5000 iters, batch 4: held-out PSNR {:.2} vs input {ip:.2} dB (+{:.2}), SSIM {:.4} vs {is:.4}, {:.0}s", e.psnr, e.psnr - ip, e.ssim, r.seconds),
    )
}

fn c9_ablation() -> Outcome {
    let spec = SynthSpec::default();
    let train: Vec<Pair> = synth_dataset(16, 64, 64, &spec, 900);
    let test = synth_dataset(8, 64, 64, &spec, 9900);
    let cfg = probe_config(400, 4);
    let sets = training::core_ablation_sets();
    let t0 = Instant::now();
    let table = training::ablate(&train, &test, &ModelConfig::default(), &cfg, &sets).expect("ablate");
    let csv = table.to_csv();
    let identity = Model::new(ModelConfig { toggles: Toggles::all(false), ..Default::default() }, 0).expect("model");
    let (id_psnr, _) = training::evaluate(&identity, &test).expect("eval");
    let j = table.rows.iter().find(|r| r.name == "J").expect("row J");
    let rows_ok = csv.lines().count() == sets.len() + 1;
    let mut d = format!("{} rows, 400 iters each, {:.0}s;", table.rows.len(), t0.elapsed().as_secs_f64());
    for r in &table.rows {
        d.push_str(&format!(" {} {:.2}", r.name, r.psnr));
    }
    d.push_str(&format!("; identity {id_psnr:.2} dB"));
    outcome(rows_ok && j.psnr >= id_psnr, d)
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut cfg = RunConfig {
        model: ModelConfig { depth: 2, smgm_width: 4, low_width: 4, high_width: 4, n_res: 1, ..Default::default() },
        train: TrainConfig { iters: 25, batch: 2, crop: 32, seed: 10, ..Default::default() },
        ..Default::default()
    };
    cfg.data.synth = Some(SynthData { train: 4, test: 2, size: 32, ..Default::default() });
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        cfg.output = dir.path().join(run);
        let out = spjfnet_cli::train_run(&cfg).expect("train");
        bytes.push(fs::read(out.output.join(CHECKPOINT_DIR).join(training::FINAL_CHECKPOINT)).expect("checkpoint"));
    }
    let ckpt = dir.path().join("a").join(CHECKPOINT_DIR).join(training::FINAL_CHECKPOINT);
    let input = dir.path().join("in.png");
    data::write_png(&input, &data::clean_image(10, 45, 61)).expect("png");
    let o1 = spjfnet_cli::cmd_infer(&ckpt, &input, &dir.path().join("o1")).expect("infer");
    let o2 = spjfnet_cli::cmd_infer(&ckpt, &input, &dir.path().join("o2")).expect("infer");
    let png_same = fs::read(&o1[0]).unwrap() == fs::read(&o2[0]).unwrap();
    let ck_same = bytes[0] == bytes[1];
    outcome(ck_same && png_same, format!("checkpoints identical: {ck_same} ({} bytes), PNGs identical: {png_same}", bytes[0].len()))
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("SPJFNET_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let strict = std::env::var("SPJFNET_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "lossless wavelet sampling", c1_lossless_sampling),
        (2, "fourier identity", c2_fourier),
        (3, "gradient fidelity", c3_gradients),
        (4, "identity fallback", c4_identity),
        (5, "range invariants", c5_ranges),
        (6, "parameter budget", c6_budget),
        (7, "overfit probe", c7_overfit),
        (8, "generalization probe", c8_generalization),
        (9, "ablation harness", c9_ablation),
        (10, "determinism", c10_determinism),
    ];
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {id} {name}: {} [{:.1}s]", o.detail, t.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        if strict {
            ExitCode::FAILURE
        } else {
            ExitCode::SUCCESS
        }
    }
}
