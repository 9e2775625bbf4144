//! Acceptance suite. Runs every desk-scale criterion at its stated
//! tolerance and prints one PASS/FAIL line each; exits non-zero if any fail.
//! Full-scale criteria need the real dataset and pretrained weights and are
//! reported as SKIP.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use agiqa_core::checkpoint::Checkpoint;
use agiqa_core::data::{load_manifest, DatasetProfile, ImageTensor, LabelScaler};
use agiqa_core::encoder::{Backbone, DualEncoder, EncoderSpec, StubEncoder, StubEncoderConfig};
use agiqa_core::experiment::{run_config, RunConfig};
use agiqa_core::metrics::{krcc, plcc, srcc, PairedScores, PlccMode};
use agiqa_core::model::{fuse_features, mse_loss, ModelConfig, PromptModel};
use agiqa_core::prompt::QualityCategorySet;
use agiqa_core::report::{read_reports, EvalReport};
use agiqa_core::schedule::{lr_at, lr_at_fractional};
use agiqa_core::train::{evaluate, resume, train, FeatureSet, TrainConfig, TrainState};
use agiqa_core::zero_shot::{zero_shot_from_features, zero_shot_quality, AntonymPromptPair};
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

// Fixtures

fn noise_image(size: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = Array3::from_shape_simple_fn((3, size, size), || StandardNormal.sample(&mut rng));
    ImageTensor::from_array(pixels).unwrap()
}

fn noise_features(enc: &StubEncoder, n: usize, seed: u64) -> Array2<f64> {
    let images: Vec<_> = (0..n)
        .map(|i| noise_image(enc.image_size(), seed * 1000 + i as u64))
        .collect();
    PromptModel::image_features(&images, enc).unwrap()
}

/// Noise-image features labelled by a random teacher model, scaled to [0, 1].
fn teacher_set(enc: &StubEncoder, cfg: &ModelConfig, context: usize, n: usize, seed: u64) -> FeatureSet {
    let features = noise_features(enc, n, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let teacher = PromptModel::init(cfg, context, enc.width(), &mut rng).unwrap();
    let raw = teacher.predict_from_features(features.view(), enc).unwrap();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    FeatureSet::new(
        (0..n).map(|i| format!("syn{i:02}.png")).collect(),
        features,
        raw.iter().map(|y| (y - lo) / (hi - lo)).collect(),
        LabelScaler::new(0.0, 1.0).unwrap(),
    )
    .unwrap()
}

/// PNG files with brightness tracking MOS, and their manifest.
fn write_dataset(dir: &Path, n: usize) -> std::path::PathBuf {
    std::fs::create_dir_all(dir.join("img")).unwrap();
    let mut csv = String::from("image,mos\n");
    for i in 0..n {
        let mos = 5.0 * i as f64 / (n - 1) as f64;
        let level = (30.0 + 40.0 * mos) as u8;
        let img = image::RgbImage::from_fn(40, 40, |x, y| {
            let t = ((x * 5 + y * 11 + i as u32 * 17) % 40) as u8;
            image::Rgb([level.saturating_add(t), level, 200 - t])
        });
        let name = format!("img/{i:03}.png");
        img.save(dir.join(&name)).unwrap();
        csv.push_str(&format!("{name},{mos}\n"));
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, csv).unwrap();
    path
}

// Definitional metric oracles

fn pearson_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    let den = ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
    (den > 1e-12).then(|| (n * sxy - sx * sy) / den)
}

fn rank_oracle(v: &[f64]) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(i, &a)| {
            let below = v.iter().filter(|&&b| b < a).count() as f64;
            let tied = v.iter().enumerate().filter(|&(j, &b)| j != i && b == a).count() as f64;
            1.0 + below + tied / 2.0
        })
        .collect()
}

fn kendall_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (x[i] - x[j], y[i] - y[j]);
            tx += f64::from(u8::from(dx == 0.0));
            ty += f64::from(u8::from(dy == 0.0));
            if dx * dy > 0.0 {
                c += 1.0;
            } else if dx * dy < 0.0 {
                d += 1.0;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as f64;
    let den = ((n0 - tx) * (n0 - ty)).sqrt();
    (den > 0.0).then(|| (c - d) / den)
}

// Criteria

fn c1_metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut instances, mut with_ties, mut worst) = (0, 0, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(2..=8);
        let levels = rng.random_range(2..=7);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.25).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 + 0.5).collect();
        let s = PairedScores::new(x.clone(), y.clone()).unwrap();
        let pairs = [
            (plcc(&s).ok(), pearson_oracle(&x, &y)),
            (srcc(&s).ok(), pearson_oracle(&rank_oracle(&x), &rank_oracle(&y))),
            (krcc(&s).ok(), kendall_oracle(&x, &y)),
        ];
        for (ours, oracle) in pairs {
            match (ours, oracle) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                (a, b) => return Err(format!("defined-ness differs: {a:?} vs {b:?} on {x:?} {y:?}")),
            }
        }
        instances += 1;
        let distinct = |v: &[f64]| {
            let mut u = v.to_vec();
            u.sort_by(f64::total_cmp);
            u.dedup();
            u.len()
        };
        with_ties += usize::from(distinct(&x) < n || distinct(&y) < n);
    }
    let elapsed = start.elapsed();
    ensure!(instances >= 200, "only {instances} instances");
    ensure!(worst <= 1e-9, "max |Δ| = {worst:e}");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "{instances} instances ({with_ties} with ties), max |Δ| = {worst:.1e}, {elapsed:.2?}"
    ))
}

fn c2_metric_invariances() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut rank_worst, mut plcc_worst) = (0.0f64, 0.0f64);
    let transforms: [fn(f64) -> f64; 3] = [f64::exp, |v| v * v * v + v, |v| 2.5 * v - 4.0];
    for trial in 0..500 {
        let n = rng.random_range(3..40);
        // Grid values stay distinct under the transforms.
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-40..40) as f64 / 10.0).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-40..40) as f64 / 10.0).collect();
        let base = PairedScores::new(x.clone(), y.clone()).unwrap();
        let f = transforms[trial % 3];
        for moved in [
            PairedScores::new(x.iter().map(|&v| f(v)).collect(), y.clone()).unwrap(),
            PairedScores::new(x.clone(), y.iter().map(|&v| f(v)).collect()).unwrap(),
        ] {
            for metric in [srcc, krcc] {
                if let (Ok(a), Ok(b)) = (metric(&base), metric(&moved)) {
                    rank_worst = rank_worst.max((a - b).abs());
                }
            }
        }
        let (a, b) = (rng.random_range(0.01..100.0), rng.random_range(-50.0..50.0));
        for moved in [
            PairedScores::new(x.iter().map(|v| a * v + b).collect(), y.clone()).unwrap(),
            PairedScores::new(x.clone(), y.iter().map(|v| a * v + b).collect()).unwrap(),
        ] {
            if let (Ok(p), Ok(q)) = (plcc(&base), plcc(&moved)) {
                plcc_worst = plcc_worst.max((p - q).abs());
            }
        }
    }
    ensure!(rank_worst <= 1e-12, "SRCC/KRCC moved by {rank_worst:e}");
    ensure!(plcc_worst <= 1e-12, "PLCC moved by {plcc_worst:e}");
    Ok(format!(
        "500 trials, SRCC/KRCC max |Δ| = {rank_worst:.1e}, PLCC max |Δ| = {plcc_worst:.1e}"
    ))
}

fn c3_zero_shot() -> Outcome {
    let enc = StubEncoder::new(StubEncoderConfig::tiny(32)).unwrap();
    let pair = AntonymPromptPair::default();
    let swapped = pair.swapped();
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let img = noise_image(enc.image_size(), 500 + seed);
        let a = zero_shot_quality(&img, &pair, &enc).map_err(|e| e.to_string())?;
        let b = zero_shot_quality(&img, &swapped, &enc).map_err(|e| e.to_string())?;
        ensure!(a > 0.0 && a < 1.0, "score {a} outside (0, 1)");
        worst = worst.max((a + b - 1.0).abs());
    }
    ensure!(worst <= 1e-6, "antisymmetry off by {worst:e}");
    let t = Array1::from(vec![0.3, -1.0, 2.0]);
    let x = Array1::from(vec![1.0, 1.0, 1.0]);
    let equal = zero_shot_from_features(x.view(), t.view(), t.view()).unwrap();
    ensure!(equal == 0.5, "equal similarities gave {equal}");
    Ok(format!("50 images, max |s(p,n)+s(n,p)-1| = {worst:.1e}, tie = {equal}"))
}

fn c4_frozen_partition() -> Outcome {
    let enc = StubEncoder::new(StubEncoderConfig::tiny(16)).unwrap();
    let model_cfg = ModelConfig {
        hidden_width: 32,
        ..ModelConfig::default()
    };
    let data = teacher_set(&enc, &model_cfg, 8, 20, 4);
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 32,
        context_length: 8,
        ..TrainConfig::default()
    };
    let before = enc.fingerprint();
    let init = TrainState::init(&model_cfg, &cfg, &enc).unwrap();
    let out = resume(init.clone(), &data, None, &cfg, &enc).map_err(|e| e.to_string())?;
    ensure!(out.last.step == 10, "ran {} steps", out.last.step);
    ensure!(enc.fingerprint() == before, "encoder hash changed");
    ensure!(
        out.last.model.context_digest() != init.model.context_digest(),
        "context hash unchanged"
    );
    ensure!(out.last.model.head_digest() != init.model.head_digest(), "head hash unchanged");
    Ok(format!("10 steps, encoder {}… unchanged", &before[..12]))
}

fn c5_gradient_check() -> Outcome {
    let enc = StubEncoder::new(StubEncoderConfig::tiny(8)).unwrap();
    ensure!(enc.width() == 8 && enc.context_window() == 16, "unexpected stub shape");
    let cfg = ModelConfig {
        categories: QualityCategorySet::with_uniform_levels(["low", "fair", "high"]).unwrap(),
        hidden_width: 16,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = PromptModel::init(&cfg, 2, 8, &mut rng).unwrap();
    let feats = noise_features(&enc, 6, 31);
    let targets = [0.05, 0.9, 0.35, 0.6, 0.2, 0.75];
    let (_, grad) = model.loss_and_gradient(feats.view(), &targets, &enc).unwrap();
    let analytic = grad.flatten();
    let params = model.flat_parameters();
    let context_len = 2 * 8;
    let loss_at = |p: &[f64]| {
        let mut m = model.clone();
        m.set_flat_parameters(p).unwrap();
        m.loss_and_gradient(feats.view(), &targets, &enc).unwrap().0
    };
    let h = 1e-6;
    let (mut worst, mut worst_ctx) = (0.0f64, 0.0f64);
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] += h;
        let up = loss_at(&p);
        p[i] -= 2.0 * h;
        let numeric = (up - loss_at(&p)) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs());
        if scale < 1e-8 {
            continue;
        }
        let rel = (analytic[i] - numeric).abs() / scale;
        worst = worst.max(rel);
        if i < context_len {
            worst_ctx = worst_ctx.max(rel);
        }
    }
    ensure!(worst < 1e-4, "max relative error {worst:e}");
    Ok(format!(
        "{} parameters, max rel err {worst:.1e} (context {worst_ctx:.1e})",
        params.len()
    ))
}

fn c6_shape_contract() -> Outcome {
    let enc = StubEncoder::for_backbone(Backbone::VitB16).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = PromptModel::init(&ModelConfig::default(), 16, enc.width(), &mut rng).unwrap();
    let image = enc.encode_image(&noise_image(224, 1)).unwrap();
    let text = model.text_features(&enc).unwrap();
    let fused = fuse_features(image.view(), text.view()).unwrap();
    ensure!(fused.len() == 3584 && 3584 == 7 * 512, "default fused width {}", fused.len());
    ensure!(model.fused_width() == 3584, "head input {}", model.fused_width());
    for _ in 0..20 {
        let k = rng.random_range(2..12);
        let d = rng.random_range(1..100);
        let img = Array1::from_elem(d, 1.0);
        let txt = Array2::from_elem((k, d), 2.0);
        let w = fuse_features(img.view(), txt.view()).unwrap().len();
        ensure!(w == (k + 1) * d, "K={k} d={d}: width {w}");
    }
    Ok("default 3584 = 7 x 512; 20 random (K, d) satisfy (K+1)d".into())
}

fn c7_overfit_smoke() -> Outcome {
    let start = Instant::now();
    let enc = StubEncoder::new(StubEncoderConfig::tiny(8)).unwrap();
    let model_cfg = ModelConfig {
        normalize_features: true,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        lr: 0.1,
        epochs: 200,
        batch_size: 16,
        context_length: 4,
        warmup_epochs: 0,
        momentum: 0.9,
        eval_every: 1000,
        seed: 1,
        ..TrainConfig::default()
    };
    let data = teacher_set(&enc, &model_cfg, 4, 16, cfg.seed);
    let out = train(&data, None, &model_cfg, &cfg, &enc).map_err(|e| e.to_string())?;
    let eval = evaluate(&out.last.model, &data, &enc, PlccMode::Raw).map_err(|e| e.to_string())?;
    let mse = mse_loss(&eval.predictions, data.targets()).unwrap();
    let srcc = eval.correlations.srcc;
    let elapsed = start.elapsed();
    ensure!(out.last.step == 200, "ran {} steps", out.last.step);
    ensure!(mse < 0.01, "train MSE {mse}");
    ensure!(srcc >= 0.99, "train SRCC {srcc}");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("200 steps: MSE {mse:.2e}, SRCC {srcc:.4}, {elapsed:.2?}"))
}

fn c8_schedule() -> Outcome {
    let cfg = TrainConfig::default();
    let first = lr_at(0, &cfg).unwrap();
    let peak = lr_at(1, &cfg).unwrap();
    let mid = lr_at_fractional(1.0 + 99.0 / 2.0, &cfg).unwrap();
    let last = lr_at(cfg.epochs - 1, &cfg).unwrap();
    ensure!(first == 1e-5, "lr(0) = {first}");
    ensure!(peak == 0.002, "lr(1) = {peak}");
    ensure!((mid - 0.001).abs() <= 1e-12, "midpoint {mid}");
    ensure!(last < 2e-6, "final lr {last}");
    Ok(format!("lr(0)={first}, lr(1)={peak}, mid={mid}, lr(99)={last:.3e}"))
}

fn c9_determinism(dir: &Path) -> Outcome {
    let manifest_path = write_dataset(&dir.join("data"), 24);
    let manifest = load_manifest(&manifest_path, &DatasetProfile::Agiqa3k).unwrap();
    let (manifest, _) = manifest.make_split(0.75, 9).unwrap();
    let mut run = RunConfig {
        encoder: EncoderSpec::Stub(StubEncoderConfig {
            context_window: 24,
            ..StubEncoderConfig::tiny(16)
        }),
        ..RunConfig::default()
    };
    run.model.hidden_width = 32;
    run.train.epochs = 12;
    run.train.batch_size = 8;
    run.train.eval_every = 4;
    run.train.seed = 13;
    let mut checkpoints = Vec::new();
    let mut reports = Vec::new();
    for attempt in 0..2 {
        let enc = run.encoder.build().unwrap();
        let out = run_config(&run, &manifest, &enc, "2026-01-01T00:00:00Z").map_err(|e| e.to_string())?;
        let path = dir.join(format!("ckpt{attempt}.json"));
        Checkpoint::new(&run, manifest.label_range, out.outcome.last, &enc)
            .save(&path)
            .unwrap();
        checkpoints.push(std::fs::read(&path).unwrap());
        reports.push(serde_json::to_vec(&(out.last, out.best)).unwrap());
    }
    ensure!(checkpoints[0] == checkpoints[1], "checkpoints differ");
    ensure!(reports[0] == reports[1], "reports differ");
    Ok(format!(
        "12-epoch runs: checkpoints ({} bytes) and reports bit-identical",
        checkpoints[0].len()
    ))
}

fn agiqa(args: &[&str], cwd: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_agiqa"))
        .args(args)
        .current_dir(cwd)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`agiqa {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn c10_cli_round_trip(dir: &Path) -> Outcome {
    write_dataset(dir, 20);
    let stub = [
        "--stub-encoder",
        "--stub-width",
        "32",
        "--stub-image-size",
        "32",
    ];
    let mut train_args = vec!["train", "--manifest", "manifest.csv", "--epochs", "2", "--out", "runs"];
    train_args.extend(stub);
    agiqa(&train_args, dir)?;
    let runs: Vec<_> = std::fs::read_dir(dir.join("runs"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .collect();
    ensure!(runs.len() == 1, "expected one run directory, found {}", runs.len());
    let run_dir = runs[0].path();
    let ckpt = run_dir.join("last.json");
    ensure!(ckpt.exists(), "no checkpoint written");
    let ckpt = ckpt.to_string_lossy().into_owned();

    let stdout = agiqa(
        &["eval", "--checkpoint", &ckpt, "--manifest", "manifest.csv", "--out", "eval.json"],
        dir,
    )?;
    let printed: EvalReport = serde_json::from_str(&stdout).map_err(|e| e.to_string())?;
    let table = agiqa(&["report", "eval.json", "--format", "markdown"], dir)?;
    agiqa(&["report", "eval.json", "--format", "csv", "--out", "eval.csv"], dir)?;
    let back = read_reports(dir.join("eval.csv")).map_err(|e| e.to_string())?;

    ensure!(back == vec![printed.clone()], "CSV report did not round-trip");
    let m = [printed.plcc, printed.srcc, printed.krcc];
    ensure!(m.iter().all(|v| v.is_finite()), "non-finite metrics {m:?}");
    ensure!(table.lines().count() == 3, "unexpected table:\n{table}");
    ensure!(
        run_dir.file_name().unwrap().to_string_lossy() == printed.config_hash,
        "run dir not named by config hash"
    );
    Ok(format!(
        "train -> eval -> report ok; PLCC {:.3} SRCC {:.3} KRCC {:.3} on {} test images",
        m[0], m[1], m[2], printed.n
    ))
}

fn main() {
    let scratch = tempfile::tempdir().expect("temp dir");
    let c9_dir = scratch.path().join("c9");
    let c10_dir = scratch.path().join("c10");
    std::fs::create_dir_all(&c10_dir).unwrap();

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 metric oracle equivalence", Box::new(c1_metric_oracles)),
        ("2 metric invariances", Box::new(c2_metric_invariances)),
        ("3 zero-shot antisymmetry", Box::new(c3_zero_shot)),
        ("4 frozen/trainable partition", Box::new(c4_frozen_partition)),
        ("5 gradient check", Box::new(c5_gradient_check)),
        ("6 shape contract", Box::new(c6_shape_contract)),
        ("7 overfit smoke", Box::new(c7_overfit_smoke)),
        ("8 schedule", Box::new(c8_schedule)),
        ("9 determinism", Box::new(move || c9_determinism(&c9_dir))),
        ("10 CLI end-to-end", Box::new(move || c10_cli_round_trip(&c10_dir))),
    ];

    let mut failed = 0;
    for (name, check) in &criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS  [{name}] {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  [{name}] {why}");
            }
        }
    }
    for name in [
        "full-scale AGIQA-3K (PLCC 0.8978±0.04, SRCC 0.8618±0.04, KRCC 0.6776±0.05)",
        "full-scale AIGCIQA2023 quality SRCC 0.8140±0.05",
        "full-scale ablation ordering (full > no_regression)",
    ] {
        println!("SKIP  [{name}] needs the dataset and pretrained weights");
    }
    println!(
        "acceptance: {} passed, {failed} failed, 3 skipped",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
