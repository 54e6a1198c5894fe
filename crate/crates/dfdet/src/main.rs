//! `dfdet` — train and evaluate a partially-manipulated-face detector on top
//! of a frozen vision-transformer encoder.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dfdet::config::{load_config, TrainConfig};
use dfdet::data::manifest::{read_manifests, write_manifests, Label, Split};
use dfdet::data::preprocess::{preprocess_dataset, PreprocessOptions, PreprocessTask};
use dfdet::data::video::FrameDirVideo;
use dfdet::data::{FaceDetector, SyntheticFaceDetector};
use dfdet::error::{Error, Result};
use dfdet::metrics::{emit_plot_data, emit_table, EvalReport, FramePrediction, PredictionSet};
use dfdet::peft::apply_adapter;
use dfdet::sphere::HeadParams;
use dfdet::trainer::{curve_from_metrics, select_best, train, Checkpoint, Predictor};

#[derive(Parser)]
#[command(name = "dfdet", version, about = "Deepfake detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Preset name (setup1..setup5) or path to a config file.
    #[arg(long)]
    config: String,
    /// key=value config overrides (dotted paths, TOML literals).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        load_config(&self.config, &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Face-crop a dataset: sample frames, detect, align, expand, save PNGs.
    Preprocess {
        /// Dataset root: <input>/<method_tag>/<video_id>/<frames...>.
        #[arg(long)]
        input: PathBuf,
        /// Data root to write crops and the manifest into.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 32)]
        frames: usize,
        #[arg(long, default_value_t = 1.3)]
        margin: f64,
        /// Worker threads (parallel builds only).
        #[arg(long)]
        workers: Option<usize>,
        /// Split recorded in the manifest.
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, default_value = "synthetic")]
        detector: String,
        #[arg(long)]
        force: bool,
    },
    /// Train a setup; writes metrics.jsonl and per-epoch checkpoints.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, env = "DFDET_DATA_ROOT")]
        data_root: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        /// Manifest files; default <data-root>/manifests/{train,val}.jsonl.
        #[arg(long)]
        train_manifest: Option<PathBuf>,
        #[arg(long)]
        val_manifest: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Dump per-frame predictions for each test manifest.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint meta file, or a training output dir (best is chosen).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test manifests; each file becomes one dataset tag.
        #[arg(long, required = true, num_args = 1..)]
        manifests: Vec<PathBuf>,
        #[arg(long, env = "DFDET_DATA_ROOT")]
        data_root: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Video-level AUROC table from prediction dumps.
    Report {
        /// Either a dir of <tag>.jsonl dumps (one row) or a dir of
        /// <run>/<tag>.jsonl (one row per run).
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Row name when reporting a single flat predictions dir.
        #[arg(long, default_value = "run")]
        setup_name: String,
        #[arg(long)]
        force: bool,
    },
    /// Validation-AUROC curves from metrics logs.
    Plot {
        /// name=path pairs of metrics.jsonl files, or a dir of
        /// <run>/metrics.jsonl.
        #[arg(long, required = true, num_args = 1..)]
        metrics: Vec<String>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Trainability accounting for a config (no weights needed).
    Inspect {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// True when the artifact already exists and --force was not given.
fn skip_existing(path: &Path, force: bool) -> bool {
    if path.exists() && !force {
        println!("{} exists; skipping (use --force to redo)", path.display());
        true
    } else {
        false
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Preprocess { input, output, frames, margin, workers, split, detector, force } => {
            cmd_preprocess(&input, &output, frames, margin, workers, &split, &detector, force)
        }
        Command::Train { config, data_root, output_dir, train_manifest, val_manifest, force } => {
            cmd_train(&config, &data_root, &output_dir, train_manifest, val_manifest, force)
        }
        Command::Evaluate { config, checkpoint, manifests, data_root, output_dir, force } => {
            cmd_evaluate(&config, &checkpoint, &manifests, &data_root, &output_dir, force)
        }
        Command::Report { predictions, output, setup_name, force } => {
            cmd_report(&predictions, &output, &setup_name, force)
        }
        Command::Plot { metrics, output, force } => cmd_plot(&metrics, &output, force),
        Command::Inspect { config, json } => cmd_inspect(&config, json),
    }
}

fn parse_split(name: &str) -> Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(Error::Config(format!("unknown split `{other}`"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_preprocess(
    input: &Path,
    output: &Path,
    frames: usize,
    margin: f64,
    workers: Option<usize>,
    split: &str,
    detector_name: &str,
    force: bool,
) -> Result<()> {
    let split = parse_split(split)?;
    let manifest_path = output.join("manifests").join(format!("{split:?}.jsonl").to_lowercase());
    if skip_existing(&manifest_path, force) {
        return Ok(());
    }
    #[cfg(feature = "parallel")]
    if let Some(n) = workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("note: worker pool already initialized: {e}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    if workers.is_some() {
        eprintln!("note: sequential build; --workers has no effect");
    }

    let detector: Box<dyn FaceDetector> = match detector_name {
        "synthetic" => Box::new(SyntheticFaceDetector::default()),
        other => {
            return Err(Error::Config(format!(
                "unknown detector `{other}` (the production landmark detector is an external \
                 dependency behind this interface; `synthetic` ships in-tree)"
            )))
        }
    };

    let mut tasks = Vec::new();
    let mut method_dirs: Vec<PathBuf> = std::fs::read_dir(input)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    method_dirs.sort();
    for method_dir in method_dirs {
        let method_tag = method_dir.file_name().unwrap().to_string_lossy().to_string();
        let label = if method_tag.eq_ignore_ascii_case("real") { Label::Real } else { Label::Fake };
        let mut video_dirs: Vec<PathBuf> = std::fs::read_dir(&method_dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        video_dirs.sort();
        for vdir in video_dirs {
            tasks.push(PreprocessTask {
                video: Box::new(FrameDirVideo::open(&vdir)?),
                label,
                method_tag: method_tag.clone(),
                split,
            });
        }
    }
    if tasks.is_empty() {
        return Err(Error::Input(format!("no videos found under {}", input.display())));
    }

    let opts = PreprocessOptions { frames_per_video: frames, margin, crop_side: 256 };
    let (manifests, summary) = preprocess_dataset(&tasks, detector.as_ref(), &opts, output)?;
    write_manifests(&manifest_path, &manifests)?;
    println!(
        "processed {} videos ({} frames dropped); excluded {}",
        summary.processed,
        summary.dropped_frames,
        summary.excluded.len()
    );
    for (vid, reason) in &summary.excluded {
        println!("  excluded {vid}: {reason}");
    }
    println!("manifest: {}", manifest_path.display());
    println!("crops: {}", output.join("crops").display());
    Ok(())
}

fn cmd_train(
    config: &ConfigArgs,
    data_root: &Path,
    output_dir: &Path,
    train_manifest: Option<PathBuf>,
    val_manifest: Option<PathBuf>,
    force: bool,
) -> Result<()> {
    let cfg = config.load()?;
    let metrics = output_dir.join("metrics.jsonl");
    if skip_existing(&metrics, force) {
        return Ok(());
    }
    let train_path = train_manifest.unwrap_or_else(|| data_root.join("manifests/train.jsonl"));
    let val_path = val_manifest.unwrap_or_else(|| data_root.join("manifests/val.jsonl"));
    let train_m = read_manifests(&train_path)?;
    let val_m = read_manifests(&val_path)?;
    let outcome = train(&cfg, &train_m, &val_m, data_root, output_dir)?;
    let best = &outcome.checkpoints[outcome.best_index];
    println!(
        "trained `{}`: {} epochs validated, best val AUROC {:.4} at epoch {}",
        cfg.display_name(),
        outcome.checkpoints.len(),
        best.val_auroc,
        best.epoch
    );
    println!("metrics: {}", outcome.metrics_path.display());
    println!("best checkpoint: {}", best.params_path.display());
    Ok(())
}

/// Resolve a checkpoint argument: a meta file, or a directory whose
/// checkpoints/ (or self) holds meta files — the best one wins.
fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    let dir = if path.join("checkpoints").is_dir() { path.join("checkpoints") } else { path.to_path_buf() };
    let mut metas = Vec::new();
    for entry in std::fs::read_dir(&dir)? {
        let p = entry?.path();
        if p.extension().and_then(|e| e.to_str()) == Some("json")
            && p.to_string_lossy().ends_with(".meta.json")
        {
            metas.push(Checkpoint::load_meta(&p).map(|c| (c, p))?);
        }
    }
    if metas.is_empty() {
        return Err(Error::Config(format!("no checkpoints under {}", dir.display())));
    }
    let checkpoints: Vec<Checkpoint> = metas.iter().map(|(c, _)| c.clone()).collect();
    let best = select_best(&checkpoints).unwrap();
    let (_, path) = metas.iter().find(|(c, _)| c.epoch == best.epoch).unwrap();
    Ok(path.clone())
}

fn cmd_evaluate(
    config: &ConfigArgs,
    checkpoint: &Path,
    manifests: &[PathBuf],
    data_root: &Path,
    output_dir: &Path,
    force: bool,
) -> Result<()> {
    let cfg = config.load()?;
    let meta_path = resolve_checkpoint(checkpoint)?;
    let meta = Checkpoint::load_meta(&meta_path)?;
    if meta.config_hash != cfg.hash() {
        eprintln!("note: checkpoint was written under a different config hash");
    }
    let mut predictor = Predictor::from_checkpoint(&cfg, &meta_path)?;
    std::fs::create_dir_all(output_dir)?;
    for manifest_path in manifests {
        let tag = manifest_path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Input(format!("bad manifest path {}", manifest_path.display())))?;
        let dump = output_dir.join(format!("{tag}.jsonl"));
        if skip_existing(&dump, force) {
            continue;
        }
        let ms = read_manifests(manifest_path)?;
        let records = predictor.predict_manifests(&ms, data_root)?;
        let mut body = String::new();
        for r in &records {
            body.push_str(&serde_json::to_string(r)?);
            body.push('\n');
        }
        std::fs::write(&dump, body)?;
        println!("predictions: {} ({} frames)", dump.display(), records.len());
    }
    Ok(())
}

fn read_prediction_dir(dir: &Path) -> Result<Vec<(String, PredictionSet)>> {
    let mut sets = Vec::new();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("jsonl"))
        .collect();
    files.sort();
    for file in files {
        let tag = file.file_stem().unwrap().to_string_lossy().to_string();
        let text = std::fs::read_to_string(&file)?;
        let mut records: Vec<FramePrediction> = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            records.push(serde_json::from_str(line)?);
        }
        sets.push((tag.clone(), PredictionSet::from_records(&tag, records)?));
    }
    Ok(sets)
}

fn report_row(name: &str, dir: &Path) -> Result<EvalReport> {
    let sets = read_prediction_dir(dir)?;
    if sets.is_empty() {
        return Err(Error::Input(format!("no prediction dumps under {}", dir.display())));
    }
    let mut per_dataset = BTreeMap::new();
    for (tag, set) in sets {
        let (_, excluded) = set.aggregate_video_scores();
        for vid in excluded {
            eprintln!("warning: video {vid} in {tag} has no frame predictions");
        }
        per_dataset.insert(tag, set.video_auroc()? * 100.0);
    }
    Ok(EvalReport {
        setup_name: name.to_string(),
        checkpoint_id: String::new(),
        per_dataset,
    })
}

fn cmd_report(predictions: &Path, output: &Path, setup_name: &str, force: bool) -> Result<()> {
    let table_path = output.join("results_table.txt");
    if skip_existing(&table_path, force) {
        return Ok(());
    }
    let mut runs: Vec<PathBuf> = std::fs::read_dir(predictions)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    runs.sort();
    let reports: Vec<EvalReport> = if runs.is_empty() {
        vec![report_row(setup_name, predictions)?]
    } else {
        runs.iter()
            .map(|r| report_row(&r.file_name().unwrap().to_string_lossy(), r))
            .collect::<Result<Vec<_>>>()?
    };
    let (txt, json) = emit_table(&reports, output)?;
    println!("{}", std::fs::read_to_string(&txt)?);
    println!("table: {}", txt.display());
    println!("table data: {}", json.display());
    Ok(())
}

fn cmd_plot(metrics: &[String], output: &Path, force: bool) -> Result<()> {
    let png = output.join("validation_curves.png");
    if skip_existing(&png, force) {
        return Ok(());
    }
    let mut series = Vec::new();
    for spec in metrics {
        if let Some((name, path)) = spec.split_once('=') {
            series.push(curve_from_metrics(Path::new(path), name)?);
        } else {
            // A directory of <run>/metrics.jsonl.
            let mut runs: Vec<PathBuf> = std::fs::read_dir(spec)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.join("metrics.jsonl").is_file())
                .collect();
            runs.sort();
            for run in runs {
                let name = run.file_name().unwrap().to_string_lossy().to_string();
                series.push(curve_from_metrics(&run.join("metrics.jsonl"), &name)?);
            }
        }
    }
    let (csv, png) = emit_plot_data(&series, output)?;
    println!("curves: {}", csv.display());
    println!("plot: {}", png.display());
    Ok(())
}

fn cmd_inspect(config: &ConfigArgs, json: bool) -> Result<()> {
    let cfg = config.load()?;
    let spec = dfdet::backbone::EncoderSpec::by_name(&cfg.encoder)?;
    let mut tree = dfdet::backbone::parameter_tree(&spec)?;
    HeadParams::attach_structural(&mut tree, spec.feature_dim);
    let report = apply_adapter(&mut tree, &cfg.adapter, cfg.seed)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let approx = |n: usize| -> String {
        if n >= 1_000_000 {
            format!("~{}M", (n as f64 / 1e6).round() as u64)
        } else if n >= 1_000 {
            format!("~{}K", (n as f64 / 1e3).round() as u64)
        } else {
            n.to_string()
        }
    };
    println!("config: {} ({})", config.config, cfg.display_name());
    println!("encoder: {} ({} layers, width {})", spec.name, spec.num_layers, spec.feature_dim);
    println!(
        "trainable: {} / {} ({} / {}, {:.2}%)",
        report.trainable_count,
        report.total_count,
        approx(report.trainable_count),
        approx(report.total_count),
        report.fraction * 100.0
    );
    println!("trainable tensors: {}", report.trainable_names.len());
    for name in report.trainable_names.iter().take(8) {
        println!("  {name}");
    }
    if report.trainable_names.len() > 8 {
        println!("  ... {} more", report.trainable_names.len() - 8);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    #[test]
    fn preset_names_are_wired() {
        assert_eq!(dfdet::config::preset_names().len(), 5);
    }
}
