//! Command-line front end: `generate`, `train`, and `eval`.
//!
//! Every option can come from a `key = value` config file (`--config`);
//! command-line flags override file values, which override built-in
//! defaults. Each run writes a manifest listing the fully resolved
//! configuration — the manifest itself parses as a config file, so a run
//! can be reproduced bit-exactly by passing it back via `--config`.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use crate::data::{self, Dataset, NoiseKind};
use crate::eval::{self, DetectionRecord};
use crate::model;
use crate::objectives::LossBreakdown;
use crate::trainer::{self, EpochMetrics, TrainConfig};
use crate::{Error, Result};

const VERSION_STRING: &str = concat!("labelsift-v", env!("CARGO_PKG_VERSION"));
const HISTOGRAM_BINS: usize = 20;

#[derive(Parser)]
#[command(
    name = "labelsift",
    version,
    about = "Noise-robust classifier training with wrong-label detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic blob dataset, optionally with label noise.
    Generate(GenerateArgs),
    /// Train on a dataset file and write all run artifacts to a directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint against a dataset.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Config file with `key = value` lines (flags override it).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of samples.
    #[arg(long)]
    n: Option<usize>,
    /// Number of classes.
    #[arg(long)]
    k: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Minimum distance between cluster centers.
    #[arg(long)]
    sep: Option<f64>,
    /// Label noise kind: none, sym, asym.
    #[arg(long)]
    noise: Option<String>,
    /// Fraction of labels to corrupt, in [0, 1).
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset file (manifest goes to `<out>.manifest`).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Config file with `key = value` lines (flags override it).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training dataset file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Optional held-out dataset for the acc_test column.
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// Run directory for all artifacts.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Contrastive temperature.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    mixup_alpha: Option<f64>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    aug_strength: Option<f64>,
    /// Epochs between detection-state refreshes.
    #[arg(long)]
    update_frequency: Option<usize>,
    /// Set false to keep all clean weights at 1 (ablation baseline).
    #[arg(long)]
    detect_noise: Option<bool>,
    /// Write an intermediate checkpoint every N epochs (0 = final only).
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Config file with `key = value` lines (flags override it).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model checkpoint to evaluate.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset file to evaluate on.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Neighborhood size for the embedding probe (default: n/10 capped at 200).
    #[arg(long)]
    knn_k: Option<usize>,
    /// Optional directory for eval.csv.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// Entry point used by `main`; returns the process exit code.
pub fn run<I>(args: I) -> u8
where
    I: IntoIterator<Item = String>,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) | Error::Parse { .. } => 1,
                _ => 2,
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

struct ConfigMap {
    path: String,
    values: HashMap<String, (String, usize)>, // value, line number
}

impl ConfigMap {
    fn load(path: Option<&Path>, allowed: &[&str]) -> Result<ConfigMap> {
        let Some(path) = path else {
            return Ok(ConfigMap {
                path: String::new(),
                values: HashMap::new(),
            });
        };
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut values = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim().to_string();
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("unknown key `{key}`"),
                });
            }
            if values
                .insert(key.clone(), (value.trim().to_string(), i + 1))
                .is_some()
            {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(ConfigMap {
            path: path.display().to_string(),
            values,
        })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some((raw, line)) => raw.parse::<T>().map(Some).map_err(|e| Error::Parse {
                path: self.path.clone(),
                line: *line,
                msg: format!("key `{key}`: {e}"),
            }),
        }
    }
}

fn pick<T: FromStr>(flag: Option<T>, cfg: &ConfigMap, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    Ok(flag.or(cfg.get(key)?).unwrap_or(default))
}

fn pick_required<T: FromStr>(flag: Option<T>, cfg: &ConfigMap, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    flag.or(cfg.get(key)?)
        .ok_or_else(|| Error::invalid(format!("missing required option `--{}`", key.replace('_', "-"))))
}

fn pick_optional<T: FromStr>(flag: Option<T>, cfg: &ConfigMap, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    Ok(flag.or(cfg.get(key)?))
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

fn write_manifest(
    path: &Path,
    title: &str,
    comments: &[String],
    keys: &[(&str, String)],
) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# {title}");
    let _ = writeln!(out, "# version: {VERSION_STRING}");
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for (key, value) in keys {
        let _ = writeln!(out, "{key} = {value}");
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn noise_name(kind: NoiseKind) -> &'static str {
    match kind {
        NoiseKind::None => "none",
        NoiseKind::Symmetric => "sym",
        NoiseKind::Asymmetric => "asym",
    }
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

const GENERATE_KEYS: &[&str] = &["n", "k", "d", "sep", "noise", "ratio", "seed", "out"];

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let cfg = ConfigMap::load(args.config.as_deref(), GENERATE_KEYS)?;
    let n = pick(args.n, &cfg, "n", 1000)?;
    let k = pick(args.k, &cfg, "k", 4)?;
    let d = pick(args.d, &cfg, "d", 8)?;
    let sep = pick(args.sep, &cfg, "sep", 6.0)?;
    let noise_raw: String = pick(args.noise, &cfg, "noise", "none".to_string())?;
    let noise = NoiseKind::parse(&noise_raw)?;
    let ratio = pick(args.ratio, &cfg, "ratio", 0.0)?;
    let seed = pick(args.seed, &cfg, "seed", 0)?;
    let out: PathBuf = pick_required(args.out, &cfg, "out")?;

    let clean = data::generate_blobs(n, k, d, sep, seed)?;
    let ds = if noise == NoiseKind::None {
        if ratio > 0.0 {
            return Err(Error::invalid(
                "a positive --ratio needs --noise sym or asym",
            ));
        }
        clean
    } else {
        // Noise draws come from their own stream so they do not replay the
        // feature stream.
        data::inject_noise(&clean, noise, ratio, seed.wrapping_add(1))?
    };
    data::write_dataset(&ds, &out)?;

    let manifest_path = manifest_sibling(&out);
    write_manifest(
        &manifest_path,
        "labelsift generate manifest",
        &[format!("artifact: {}", out.display())],
        &[
            ("n", n.to_string()),
            ("k", k.to_string()),
            ("d", d.to_string()),
            ("sep", sep.to_string()),
            ("noise", noise_name(noise).to_string()),
            ("ratio", ratio.to_string()),
            ("seed", seed.to_string()),
            ("out", out.display().to_string()),
        ],
    )?;
    println!(
        "wrote {} ({} samples, K={}, d={}, noise={} ratio={})",
        out.display(),
        ds.len(),
        ds.num_classes,
        ds.dim(),
        noise_name(ds.noise_kind),
        ds.noise_ratio
    );
    Ok(())
}

fn manifest_sibling(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest");
    out.with_file_name(name)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

const TRAIN_KEYS: &[&str] = &[
    "data",
    "test_data",
    "out",
    "epochs",
    "warmup_epochs",
    "batch_size",
    "base_lr",
    "momentum",
    "weight_decay",
    "tau",
    "mixup_alpha",
    "embedding_dim",
    "hidden_dim",
    "aug_strength",
    "update_frequency",
    "detect_noise",
    "checkpoint_every",
    "seed",
];

fn cmd_train(args: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = ConfigMap::load(args.config.as_deref(), TRAIN_KEYS)?;
    let defaults = TrainConfig::default();

    let data_path: PathBuf = pick_required(args.data, &cfg, "data")?;
    let test_path: Option<PathBuf> = pick_optional(args.test_data, &cfg, "test_data")?;
    let out_dir: PathBuf = pick_required(args.out, &cfg, "out")?;
    let checkpoint_every = pick(args.checkpoint_every, &cfg, "checkpoint_every", 0)?;
    let train_config = TrainConfig {
        epochs: pick(args.epochs, &cfg, "epochs", defaults.epochs)?,
        warmup_epochs: pick(args.warmup_epochs, &cfg, "warmup_epochs", defaults.warmup_epochs)?,
        batch_size: pick(args.batch_size, &cfg, "batch_size", defaults.batch_size)?,
        base_lr: pick(args.base_lr, &cfg, "base_lr", defaults.base_lr)?,
        momentum: pick(args.momentum, &cfg, "momentum", defaults.momentum)?,
        weight_decay: pick(args.weight_decay, &cfg, "weight_decay", defaults.weight_decay)?,
        tau: pick(args.tau, &cfg, "tau", defaults.tau)?,
        mixup_alpha: pick(args.mixup_alpha, &cfg, "mixup_alpha", defaults.mixup_alpha)?,
        embedding_dim: pick(args.embedding_dim, &cfg, "embedding_dim", defaults.embedding_dim)?,
        hidden_dim: pick(args.hidden_dim, &cfg, "hidden_dim", defaults.hidden_dim)?,
        aug_strength: pick(args.aug_strength, &cfg, "aug_strength", defaults.aug_strength)?,
        update_frequency: pick(
            args.update_frequency,
            &cfg,
            "update_frequency",
            defaults.update_frequency,
        )?,
        detect_noise: pick(args.detect_noise, &cfg, "detect_noise", defaults.detect_noise)?,
        seed: pick(args.seed, &cfg, "seed", defaults.seed)?,
    };
    train_config.validate()?;

    let ds = data::read_dataset(&data_path)?;
    let test_ds = test_path.as_ref().map(|p| data::read_dataset(p)).transpose()?;

    fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut artifacts: Vec<String> = Vec::new();

    let mut checkpoint_hook = |epoch: usize, params: &model::ModelParams| -> Result<()> {
        if checkpoint_every > 0 && (epoch + 1).is_multiple_of(checkpoint_every) {
            let name = format!("checkpoint_epoch_{:04}.ckpt", epoch);
            model::write_checkpoint(params, &out_dir.join(&name))?;
            artifacts.push(name);
        }
        Ok(())
    };
    let output = trainer::train(
        &train_config,
        &ds,
        test_ds.as_ref(),
        Some(&mut checkpoint_hook),
    )?;

    let mut metrics_csv = String::from(EpochMetrics::CSV_HEADER);
    metrics_csv.push('\n');
    for m in &output.metrics {
        metrics_csv.push_str(&m.csv_row());
        metrics_csv.push('\n');
    }
    let metrics_path = out_dir.join("metrics.csv");
    fs::write(&metrics_path, metrics_csv)
        .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
    artifacts.push("metrics.csv".to_string());

    let mut losses_csv = String::from(LossBreakdown::CSV_HEADER);
    losses_csv.push('\n');
    for (epoch, step, b) in &output.losses {
        losses_csv.push_str(&b.csv_row(*epoch, *step));
        losses_csv.push('\n');
    }
    let losses_path = out_dir.join("losses.csv");
    fs::write(&losses_path, losses_csv)
        .map_err(|e| Error::io(losses_path.display().to_string(), e))?;
    artifacts.push("losses.csv".to_string());

    model::write_checkpoint(&output.params, &out_dir.join("checkpoint_final.ckpt"))?;
    artifacts.push("checkpoint_final.ckpt".to_string());

    // Final detection state, refit on the trained parameters, for inspection.
    match trainer::e_step(&ds, &output.params, output.final_state.as_ref()) {
        Ok(state) => {
            let gmm_path = out_dir.join("gmm.txt");
            fs::write(&gmm_path, state.gmm.to_text())
                .map_err(|e| Error::io(gmm_path.display().to_string(), e))?;
            artifacts.push("gmm.txt".to_string());

            let records: Vec<DetectionRecord> = ds
                .samples
                .iter()
                .zip(&state.clean_probs)
                .map(|(s, &score)| DetectionRecord {
                    sample_id: s.sample_id,
                    score,
                    is_clean: s.noisy_label == s.true_label,
                })
                .collect();
            eval::export_clean_histogram(&records, HISTOGRAM_BINS, &out_dir.join("clean_hist.csv"))?;
            artifacts.push("clean_hist.csv".to_string());
        }
        Err(e) => eprintln!("warning: skipping detection exports ({e})"),
    }

    let mut comments = vec![format!(
        "duration_seconds: {:.3}",
        started.elapsed().as_secs_f64()
    )];
    comments.extend(artifacts.iter().map(|a| format!("artifact: {a}")));
    let mut keys: Vec<(&str, String)> = vec![("data", data_path.display().to_string())];
    if let Some(t) = &test_path {
        keys.push(("test_data", t.display().to_string()));
    }
    keys.extend([
        ("out", out_dir.display().to_string()),
        ("epochs", train_config.epochs.to_string()),
        ("warmup_epochs", train_config.warmup_epochs.to_string()),
        ("batch_size", train_config.batch_size.to_string()),
        ("base_lr", train_config.base_lr.to_string()),
        ("momentum", train_config.momentum.to_string()),
        ("weight_decay", train_config.weight_decay.to_string()),
        ("tau", train_config.tau.to_string()),
        ("mixup_alpha", train_config.mixup_alpha.to_string()),
        ("embedding_dim", train_config.embedding_dim.to_string()),
        ("hidden_dim", train_config.hidden_dim.to_string()),
        ("aug_strength", train_config.aug_strength.to_string()),
        ("update_frequency", train_config.update_frequency.to_string()),
        ("detect_noise", train_config.detect_noise.to_string()),
        ("checkpoint_every", checkpoint_every.to_string()),
        ("seed", train_config.seed.to_string()),
    ]);
    write_manifest(
        &out_dir.join("manifest.txt"),
        "labelsift train manifest",
        &comments,
        &keys,
    )?;

    match output.metrics.last() {
        Some(last) => println!(
            "trained {} epochs: acc_train={:.4} acc_test={:.4} auc_detect={:.4} (artifacts in {})",
            output.metrics.len(),
            last.acc_train,
            last.acc_test,
            last.auc_detect,
            out_dir.display()
        ),
        None => println!("trained 0 epochs (artifacts in {})", out_dir.display()),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

const EVAL_KEYS: &[&str] = &["checkpoint", "data", "knn_k", "out"];

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = ConfigMap::load(args.config.as_deref(), EVAL_KEYS)?;
    let checkpoint_path: PathBuf = pick_required(args.checkpoint, &cfg, "checkpoint")?;
    let data_path: PathBuf = pick_required(args.data, &cfg, "data")?;
    let knn_k: Option<usize> = pick_optional(args.knn_k, &cfg, "knn_k")?;
    let out_dir: Option<PathBuf> = pick_optional(args.out, &cfg, "out")?;

    let params = model::read_checkpoint(&checkpoint_path)?;
    let ds = data::read_dataset(&data_path)?;
    if ds.is_empty() {
        return Err(Error::invalid("evaluation dataset is empty"));
    }
    if ds.dim() != params.input_dim() {
        return Err(Error::shape(format!(
            "dataset dimension {} does not match checkpoint input dimension {}",
            ds.dim(),
            params.input_dim()
        )));
    }
    if ds.num_classes != params.num_classes() {
        return Err(Error::shape(format!(
            "dataset has K={} but checkpoint has K={}",
            ds.num_classes,
            params.num_classes()
        )));
    }

    let features = features_matrix(&ds);
    let truths: Vec<usize> = ds.samples.iter().map(|s| s.true_label).collect();
    let predictions = trainer::predict_batch(&params, features.view())?;
    let accuracy = eval::accuracy(&predictions, &truths)?;

    let fwd = model::forward(&params, features.view())?;
    let embeddings: Vec<Vec<f64>> = fwd
        .embedding
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect();
    let k = knn_k.unwrap_or_else(|| eval::default_knn_k(ds.len())).min(ds.len());
    let knn_accuracy = eval::knn_eval(&embeddings, &truths, &embeddings, &truths, k)?;

    let detection_auc = match trainer::e_step(&ds, &params, None) {
        Ok(state) => {
            let records: Vec<DetectionRecord> = ds
                .samples
                .iter()
                .zip(&state.clean_probs)
                .map(|(s, &score)| DetectionRecord {
                    sample_id: s.sample_id,
                    score,
                    is_clean: s.noisy_label == s.true_label,
                })
                .collect();
            eval::detection_auc(&records).unwrap_or(f64::NAN)
        }
        Err(e) => {
            eprintln!("warning: detection state unavailable ({e})");
            f64::NAN
        }
    };

    let noisy_labels: Vec<usize> = ds.samples.iter().map(|s| s.noisy_label).collect();
    let imbalance = eval::imbalance_ratio(&noisy_labels, ds.num_classes)?;

    let rows = [
        ("accuracy", accuracy),
        ("knn_accuracy", knn_accuracy),
        ("detection_auc", detection_auc),
        ("imbalance_ratio", imbalance),
    ];
    for (name, value) in &rows {
        println!("{name:<16} {value}");
    }

    if let Some(dir) = out_dir {
        fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let mut csv = String::from("metric,value\n");
        for (name, value) in &rows {
            let _ = writeln!(csv, "{name},{value}");
        }
        let path = dir.join("eval.csv");
        fs::write(&path, csv).map_err(|e| Error::io(path.display().to_string(), e))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn features_matrix(ds: &Dataset) -> Array2<f64> {
    let mut x = Array2::zeros((ds.len(), ds.dim()));
    for (i, s) in ds.samples.iter().enumerate() {
        for (j, &f) in s.features.iter().enumerate() {
            x[(i, j)] = f;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_map_parses_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# comment\nepochs = 10\n\nbase_lr = 0.01\n").unwrap();
        let cfg = ConfigMap::load(Some(&path), TRAIN_KEYS).unwrap();
        assert_eq!(cfg.get::<usize>("epochs").unwrap(), Some(10));
        assert_eq!(cfg.get::<f64>("base_lr").unwrap(), Some(0.01));
        assert_eq!(cfg.get::<u64>("seed").unwrap(), None);

        fs::write(&path, "bogus_key = 1\n").unwrap();
        assert!(ConfigMap::load(Some(&path), TRAIN_KEYS).is_err());
        fs::write(&path, "epochs 10\n").unwrap();
        assert!(ConfigMap::load(Some(&path), TRAIN_KEYS).is_err());
        fs::write(&path, "epochs = 1\nepochs = 2\n").unwrap();
        assert!(ConfigMap::load(Some(&path), TRAIN_KEYS).is_err());
    }

    #[test]
    fn precedence_flag_over_file_over_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "epochs = 10\n").unwrap();
        let cfg = ConfigMap::load(Some(&path), TRAIN_KEYS).unwrap();
        assert_eq!(pick(Some(5usize), &cfg, "epochs", 60).unwrap(), 5);
        assert_eq!(pick(None::<usize>, &cfg, "epochs", 60).unwrap(), 10);
        assert_eq!(pick(None::<usize>, &cfg, "batch_size", 256).unwrap(), 256);
    }

    #[test]
    fn bad_config_value_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "epochs = not_a_number\n").unwrap();
        let cfg = ConfigMap::load(Some(&path), TRAIN_KEYS).unwrap();
        let err = cfg.get::<usize>("epochs").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn manifest_reloads_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        write_manifest(
            &path,
            "test manifest",
            &["duration_seconds: 1.5".to_string()],
            &[("epochs", "12".to_string()), ("base_lr", "0.03".to_string())],
        )
        .unwrap();
        let cfg = ConfigMap::load(Some(&path), TRAIN_KEYS).unwrap();
        assert_eq!(cfg.get::<usize>("epochs").unwrap(), Some(12));
        assert_eq!(cfg.get::<f64>("base_lr").unwrap(), Some(0.03));
    }

    #[test]
    fn manifest_sibling_appends_suffix() {
        assert_eq!(
            manifest_sibling(Path::new("/tmp/ds.txt")),
            Path::new("/tmp/ds.txt.manifest")
        );
    }

    #[test]
    fn missing_required_key_is_usage_error() {
        let cfg = ConfigMap::load(None, TRAIN_KEYS).unwrap();
        let err = pick_required::<PathBuf>(None, &cfg, "data").unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        assert!(err.to_string().contains("--data"));
    }
}
