use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Child, Command as Process};

use agiqa_core::checkpoint::Checkpoint;
use agiqa_core::data::{
    load_manifest, preprocess_image_sized, DatasetManifest, DatasetProfile, LabelScaler, Split,
    SplitRecord,
};
use agiqa_core::encoder::{DualEncoder, StubEncoder};
use agiqa_core::experiment::{default_matrix, resume_on_features, AblationVariant, RunConfig};
use agiqa_core::metrics::{correlations, PairedScores, PlccMode};
use agiqa_core::model::PromptModel;
use agiqa_core::report::{emit_all, emit_report, read_reports, render, CheckpointKind, EvalReport, ReportFormat};
use agiqa_core::train::{evaluate, write_log, FeatureSet, TrainState};
use agiqa_core::zero_shot::{AntonymPromptPair, ZeroShotScorer};
use anyhow::{anyhow, bail, Context, Result};

use crate::args::{
    AblateCmd, Command, DataArgs, EvalCmd, MetricsCmd, ReportCmd, ScoreCmd, ScoreMode, SplitArg,
    TrainCmd, WorkerCmd,
};

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(cmd) => train(cmd),
        Command::Eval(cmd) => eval(cmd),
        Command::Score(cmd) => score(cmd),
        Command::Ablate(cmd) => ablate(cmd),
        Command::Metrics(cmd) => metrics(cmd),
        Command::Report(cmd) => report(cmd),
        Command::Worker(cmd) => worker(cmd),
    }
}

/// RFC 3339 time of the run; `SOURCE_DATE_EPOCH` pins it for reproducible output.
fn timestamp() -> String {
    let pinned = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0));
    pinned
        .unwrap_or_else(chrono::Utc::now)
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Writes to stdout; a closed pipe ends the command quietly in `main`.
macro_rules! out {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout().lock(), $($arg)*)?
    };
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|source| agiqa_core::Error::UnwritablePath {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Loads the manifest and either replays a split sidecar or draws a new split.
fn load_split(data: &DataArgs) -> Result<(DatasetManifest, SplitRecord)> {
    let manifest = load_manifest(&data.manifest, &data.profile)
        .with_context(|| format!("loading {}", data.manifest.display()))?;
    Ok(match &data.split {
        Some(path) => {
            let record = SplitRecord::load(path)?;
            (manifest.apply_split(&record)?, record)
        }
        None => manifest.make_split(data.split_ratio, data.split_seed)?,
    })
}

struct RunOutput {
    dir: PathBuf,
    last: EvalReport,
}

/// Trains one config and writes everything under `<out>/<config hash>/`:
/// the config, split, last/best checkpoints, the JSONL log and reports.
fn execute(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    split: &SplitRecord,
    enc: &StubEncoder,
    out: &Path,
    start: Option<TrainState>,
    stamp: &str,
) -> Result<RunOutput> {
    cfg.validate()?;
    let dir = out.join(cfg.config_hash());
    fs::create_dir_all(&dir).map_err(|source| agiqa_core::Error::UnwritablePath {
        path: dir.clone(),
        source,
    })?;
    write_json(&dir.join("config.json"), cfg)?;
    split.save(dir.join("split.json"))?;

    let train_set = FeatureSet::from_manifest(manifest, Split::Train, &cfg.target_dim, enc)?;
    let test_set = FeatureSet::from_manifest(manifest, Split::Test, &cfg.target_dim, enc)?;
    log::info!(
        "{}: {} train / {} test images, run dir {}",
        cfg.variant.key(),
        train_set.len(),
        test_set.len(),
        dir.display()
    );
    let state = match start {
        Some(state) => state,
        None => TrainState::init(&cfg.model, &cfg.train, enc)?,
    };
    let run = resume_on_features(cfg, state, &train_set, &test_set, enc, stamp)?;

    let label_range = manifest.label_range;
    Checkpoint::new(cfg, label_range, run.outcome.last.clone(), enc).save(dir.join("last.json"))?;
    if let Some(best) = &run.outcome.best {
        let mut ckpt = Checkpoint::new(cfg, label_range, best.state.clone(), enc);
        ckpt.kind = CheckpointKind::Best;
        ckpt.save(dir.join("best.json"))?;
    }
    write_log(&run.outcome.history, dir.join("train_log.jsonl"))?;
    write_json(&dir.join("report_last.json"), &run.last)?;
    if let Some(best) = &run.best {
        write_json(&dir.join("report_best.json"), best)?;
    }
    Ok(RunOutput { dir, last: run.last })
}

fn train(cmd: TrainCmd) -> Result<()> {
    let mut data = cmd.data.clone();
    let resumed = match &cmd.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            // Replay the checkpoint's own split unless a sidecar is given.
            data.split_ratio = ckpt.run.split_ratio;
            data.split_seed = ckpt.run.split_seed;
            Some(ckpt)
        }
        None => None,
    };
    let (manifest, split) = load_split(&data)?;
    let (cfg, enc, start) = match resumed {
        Some(ckpt) => {
            let enc = ckpt.encoder.build_from(cmd.encoder.weights_dir.as_deref())?;
            ckpt.verify_encoder(&enc)?;
            (ckpt.run, enc, Some(ckpt.state))
        }
        None => {
            let mut cfg = cmd.train.run_config(&cmd.data, &cmd.encoder);
            cfg.split_ratio = split.ratio;
            cfg.split_seed = split.seed;
            let enc = cfg.encoder.build_from(cmd.encoder.weights_dir.as_deref())?;
            (cfg, enc, None)
        }
    };
    let out = execute(&cfg, &manifest, &split, &enc, &cmd.out, start, &timestamp())?;
    eprintln!("run directory: {}", out.dir.display());
    out!("{}", serde_json::to_string_pretty(&out.last)?);
    Ok(())
}

/// The profile a checkpoint was trained with, when none is given.
fn checkpoint_profile(ckpt: &Checkpoint) -> DatasetProfile {
    ckpt.run.dataset.parse().unwrap_or_else(|_| DatasetProfile::Custom {
        name: ckpt.run.dataset.clone(),
        lo: ckpt.label_range.0,
        hi: ckpt.label_range.1,
        dims: vec![ckpt.run.target_dim.clone()],
    })
}

fn eval(cmd: EvalCmd) -> Result<()> {
    let ckpt = Checkpoint::load(&cmd.checkpoint)?;
    let enc = ckpt.encoder.build_from(cmd.weights_dir.as_deref())?;
    ckpt.verify_encoder(&enc)?;
    let profile = cmd.profile.clone().unwrap_or_else(|| checkpoint_profile(&ckpt));
    let manifest = load_manifest(&cmd.manifest, &profile)?;
    if manifest.label_range != ckpt.label_range {
        bail!(agiqa_core::Error::InvalidConfig(format!(
            "manifest label range {:?} differs from the checkpoint's {:?}",
            manifest.label_range, ckpt.label_range
        )));
    }
    let mut manifest = match &cmd.split {
        Some(path) => manifest.apply_split(&SplitRecord::load(path)?)?,
        None => manifest.make_split(ckpt.run.split_ratio, ckpt.run.split_seed)?.0,
    };
    let split = match cmd.on {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
        SplitArg::All => {
            manifest.records.iter_mut().for_each(|r| r.split = Split::Test);
            Split::Test
        }
    };
    let data = FeatureSet::from_manifest(&manifest, split, &ckpt.run.target_dim, &enc)?;
    let mode = if cmd.logistic {
        PlccMode::Logistic
    } else {
        ckpt.run.plcc_mode
    };
    let eval = evaluate(&ckpt.state.model, &data, &enc, mode)?;
    let report = EvalReport::new(
        &ckpt.run,
        &ckpt.config_hash,
        ckpt.kind,
        data.len(),
        eval.correlations,
        &timestamp(),
    );
    if let Some(path) = &cmd.out {
        write_json(path, &report)?;
    }
    out!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn expand_images(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for pattern in patterns {
        if !pattern.contains(['*', '?', '[']) {
            paths.push(PathBuf::from(pattern));
            continue;
        }
        let mut matched: Vec<PathBuf> = glob::glob(pattern)?.collect::<Result<_, _>>()?;
        if matched.is_empty() {
            bail!("pattern {pattern:?} matched no files");
        }
        matched.sort();
        paths.extend(matched);
    }
    Ok(paths)
}

fn score(cmd: ScoreCmd) -> Result<()> {
    let paths = expand_images(&cmd.images)?;
    match cmd.mode {
        ScoreMode::ZeroShot => {
            let enc = cmd.encoder.spec().build_from(cmd.encoder.weights_dir.as_deref())?;
            let pair = AntonymPromptPair::new(cmd.positive.as_str(), cmd.negative.as_str())?;
            let scorer = ZeroShotScorer::new(&enc, &pair)?;
            for path in &paths {
                let img = preprocess_image_sized(path, enc.image_size())?;
                out!("{} {:.6}", path.display(), scorer.score(&img)?);
            }
        }
        ScoreMode::Tuned => {
            let ckpt_path = cmd
                .checkpoint
                .as_ref()
                .ok_or_else(|| anyhow!("--mode tuned needs --checkpoint"))?; // checked in main
            let ckpt = Checkpoint::load(ckpt_path)?;
            let enc = ckpt.encoder.build_from(cmd.encoder.weights_dir.as_deref())?;
            ckpt.verify_encoder(&enc)?;
            let model = &ckpt.state.model;
            let images = paths
                .iter()
                .map(|p| preprocess_image_sized(p, enc.image_size()))
                .collect::<agiqa_core::Result<Vec<_>>>()?;
            let feats = PromptModel::image_features(&images, &enc)?;
            let text = model.text_features(&enc)?;
            let scaler = LabelScaler::new(ckpt.label_range.0, ckpt.label_range.1)?;
            let scores = model.predict_with_text(feats.view(), &text, &enc)?;
            for (path, s) in paths.iter().zip(scores) {
                out!("{} {:.6}", path.display(), scaler.denormalize(s));
            }
        }
    }
    Ok(())
}

fn select_variants(spec: &str) -> Result<Vec<AblationVariant>> {
    let matrix = default_matrix();
    if matches!(spec.trim(), "default" | "all") {
        return Ok(matrix);
    }
    spec.split(',')
        .map(|key| {
            let key = key.trim();
            matrix.iter().find(|v| v.key() == key).cloned().ok_or_else(|| {
                let known: Vec<String> = matrix.iter().map(|v| v.key()).collect();
                anyhow!(agiqa_core::Error::InvalidVariantParams(format!(
                    "unknown variant {key:?}; known: {}",
                    known.join(", ")
                )))
            })
        })
        .collect()
}

/// Inverse of `DatasetProfile::from_str`, for worker command lines.
fn profile_arg(profile: &DatasetProfile) -> String {
    match profile {
        DatasetProfile::Agiqa3k => "agiqa-3k".into(),
        DatasetProfile::Aigciqa2023 => "aigciqa2023".into(),
        DatasetProfile::Custom { lo, hi, dims, .. } => format!("custom:{lo}:{hi}:{}", dims.join(",")),
    }
}

fn ablate(cmd: AblateCmd) -> Result<()> {
    let (manifest, split) = load_split(&cmd.data)?;
    let mut base = cmd.train.run_config(&cmd.data, &cmd.encoder);
    base.split_ratio = split.ratio;
    base.split_seed = split.seed;
    let configs = select_variants(&cmd.variants)?
        .iter()
        .map(|v| v.apply(&base))
        .collect::<agiqa_core::Result<Vec<_>>>()?;
    fs::create_dir_all(&cmd.out)?;
    let split_path = cmd.out.join("split.json");
    split.save(&split_path)?;
    let stamp = timestamp();
    let weights = cmd.encoder.weights_dir.as_deref();

    let mut reports = Vec::with_capacity(configs.len());
    if cmd.jobs <= 1 {
        for cfg in &configs {
            let enc = cfg.encoder.build_from(weights)?;
            let out = execute(cfg, &manifest, &split, &enc, &cmd.out, None, &stamp)?;
            reports.push(out.last);
        }
    } else {
        let exe = std::env::current_exe()?;
        let mut running: Vec<(String, Child)> = Vec::new();
        let wait = |(key, mut child): (String, Child)| -> Result<()> {
            let status = child.wait()?;
            if !status.success() {
                bail!("worker for variant {key} failed ({status})");
            }
            Ok(())
        };
        for cfg in &configs {
            let dir = cmd.out.join(cfg.config_hash());
            fs::create_dir_all(&dir)?;
            let cfg_path = dir.join("config.json");
            write_json(&cfg_path, cfg)?;
            if running.len() == cmd.jobs {
                wait(running.remove(0))?;
            }
            let mut process = Process::new(&exe);
            process
                .arg("worker")
                .arg("--config")
                .arg(&cfg_path)
                .arg("--manifest")
                .arg(&cmd.data.manifest)
                .args(["--profile", &profile_arg(&cmd.data.profile)])
                .arg("--split")
                .arg(&split_path)
                .arg("--out")
                .arg(&cmd.out)
                .args(["--timestamp", &stamp]);
            if let Some(w) = weights {
                process.arg("--weights-dir").arg(w);
            }
            running.push((cfg.variant.key(), process.spawn()?));
        }
        for job in running {
            wait(job)?;
        }
        for cfg in &configs {
            let path = cmd.out.join(cfg.config_hash()).join("report_last.json");
            reports.extend(read_reports(&path)?);
        }
    }

    let files = emit_all(&reports, &cmd.out, "ablation")?;
    for f in &files {
        eprintln!("wrote {}", f.display());
    }
    write!(std::io::stdout().lock(), "{}", render(&reports, ReportFormat::Markdown)?)?;
    Ok(())
}

fn worker(cmd: WorkerCmd) -> Result<()> {
    let cfg: RunConfig = serde_json::from_slice(&fs::read(&cmd.config)?)?;
    let split = SplitRecord::load(&cmd.split)?;
    let manifest = load_manifest(&cmd.manifest, &cmd.profile)?.apply_split(&split)?;
    let enc = cfg.encoder.build_from(cmd.weights_dir.as_deref())?;
    execute(&cfg, &manifest, &split, &enc, &cmd.out, None, &cmd.timestamp)?;
    Ok(())
}

fn metrics(cmd: MetricsCmd) -> Result<()> {
    let file = File::open(&cmd.csv).with_context(|| format!("opening {}", cmd.csv.display()))?;
    let scores = PairedScores::from_csv(file)?;
    let mode = if cmd.logistic {
        PlccMode::Logistic
    } else {
        PlccMode::Raw
    };
    let c = correlations(&scores, mode)?;
    if cmd.json {
        out!("{}", serde_json::to_string(&c)?);
    } else {
        out!("PLCC {:.4}\nSRCC {:.4}\nKRCC {:.4}", c.plcc, c.srcc, c.krcc);
    }
    Ok(())
}

fn report(cmd: ReportCmd) -> Result<()> {
    let mut reports = Vec::new();
    for path in &cmd.inputs {
        reports.extend(read_reports(path).with_context(|| format!("reading {}", path.display()))?);
    }
    match &cmd.out {
        Some(path) => emit_report(&reports, cmd.format, path)?,
        None => write!(std::io::stdout().lock(), "{}", render(&reports, cmd.format)?)?,
    }
    Ok(())
}
