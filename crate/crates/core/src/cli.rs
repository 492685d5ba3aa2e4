//! Command-line front end: `synth`, `train`, `predict`, `eval`, `recover`.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
//! error (non-finite values during training).

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::data::{
    load_dataset, load_scene, save_dataset, scene_dirs, split_dataset, synth_dataset, tile_scene,
    Mask, SceneSample, SynthConfig,
};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, predict_scene, recovery_experiment, MetricsReport, RecoveryConfig};
use crate::tensor::Rng;
use crate::train::{Checkpoint, Example, TrainConfig, Trainer, LAST_FILE};
use crate::unet::{UNetConfig, UNetModel};

#[derive(Debug, Parser)]
#[command(name = "scarseg", version, about = "RGB+NIR burn-scar segmentation")]
struct Cli {
    /// Seed for every random stream (overrides `seed` in the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset tree.
    Synth,
    /// Train on `<data>/scenes/*`, writing checkpoints and history.csv.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Continue from `<out>/checkpoints/last.amzs` if it exists.
        #[arg(long)]
        resume: bool,
    },
    /// Write prob.png and mask.png for a scene dir (or every scene of a dataset root).
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
    },
    /// Compare predicted masks with reference masks, paired by relative directory.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value = "mask.png")]
        pred_name: String,
        #[arg(long, default_value = "mask.png")]
        reference_name: String,
    },
    /// Run the noisy-label recovery experiment on synthetic scenes.
    Recover,
}

/// Settings that are not part of a model, training or synthesis config.
#[derive(Clone, Debug, PartialEq)]
struct RunSettings {
    tile: usize,
    stride: usize,
    val_fraction: f64,
    tau: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            tile: 256,
            stride: 256,
            val_fraction: 0.2,
            tau: 0.5,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

fn parse_range(key: &str, value: &str) -> Result<(usize, usize)> {
    let (a, b) = value
        .split_once(',')
        .ok_or_else(|| Error::config(format!("{key} expects two comma-separated integers")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

const SYNTH_KEYS: &[&str] = &[
    "canvas",
    "n_scenes",
    "scar_count_range",
    "scar_size_range",
    "river_prob",
    "cloud_prob",
    "label_drop_fraction",
    "false_label_count",
    "nir_bands",
    "nir_bits",
    "seed",
];
const MODEL_KEYS: &[&str] = &["in_channels", "depth", "base_width", "dropout_p", "out_channels"];
const TRAIN_KEYS: &[&str] = &[
    "lr",
    "beta1",
    "beta2",
    "eps_adam",
    "epochs",
    "batch_train",
    "batch_val",
    "early_stop_patience",
    "plateau_patience",
    "plateau_factor",
    "min_lr",
    "min_delta",
    "seed",
];
const RUN_KEYS: &[&str] = &["tile", "stride", "val_fraction", "tau"];

fn set_synth(c: &mut SynthConfig, key: &str, v: &str) -> Result<bool> {
    match key {
        "canvas" => c.canvas = parse(key, v)?,
        "n_scenes" => c.n_scenes = parse(key, v)?,
        "scar_count_range" => c.scar_count_range = parse_range(key, v)?,
        "scar_size_range" => c.scar_size_range = parse_range(key, v)?,
        "river_prob" => c.river_prob = parse(key, v)?,
        "cloud_prob" => c.cloud_prob = parse(key, v)?,
        "label_drop_fraction" => c.label_drop_fraction = parse(key, v)?,
        "false_label_count" => c.false_label_count = parse(key, v)?,
        "nir_bands" => c.nir_bands = parse(key, v)?,
        "nir_bits" => c.nir_bits = parse(key, v)?,
        "seed" => c.seed = parse(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_model(c: &mut UNetConfig, key: &str, v: &str) -> Result<bool> {
    match key {
        "in_channels" => c.in_channels = parse(key, v)?,
        "depth" => c.depth = parse(key, v)?,
        "base_width" => c.base_width = parse(key, v)?,
        "dropout_p" => c.dropout_p = parse(key, v)?,
        "out_channels" => c.out_channels = parse(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_train(c: &mut TrainConfig, key: &str, v: &str) -> Result<bool> {
    match key {
        "lr" => c.lr = parse(key, v)?,
        "beta1" => c.beta1 = parse(key, v)?,
        "beta2" => c.beta2 = parse(key, v)?,
        "eps_adam" => c.eps_adam = parse(key, v)?,
        "epochs" => c.epochs = parse(key, v)?,
        "batch_train" => c.batch_train = parse(key, v)?,
        "batch_val" => c.batch_val = parse(key, v)?,
        "early_stop_patience" => c.early_stop_patience = parse(key, v)?,
        "plateau_patience" => c.plateau_patience = parse(key, v)?,
        "plateau_factor" => c.plateau_factor = parse(key, v)?,
        "min_lr" => c.min_lr = parse(key, v)?,
        "min_delta" => c.min_delta = parse(key, v)?,
        "seed" => c.seed = parse(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_run(c: &mut RunSettings, key: &str, v: &str) -> Result<bool> {
    match key {
        "tile" => c.tile = parse(key, v)?,
        "stride" => c.stride = parse(key, v)?,
        "val_fraction" => c.val_fraction = parse(key, v)?,
        "tau" => c.tau = parse(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Default)]
struct Configs {
    synth: SynthConfig,
    model: UNetConfig,
    train: TrainConfig,
    run: RunSettings,
}

/// Applies config-file entries to the sections a command uses; any other
/// key is an error that lists the valid ones.
fn load_configs(path: Option<&Path>, seed: Option<u64>, sections: &[&str]) -> Result<Configs> {
    apply_configs(Configs::default(), path, seed, sections)
}

fn apply_configs(
    mut c: Configs,
    path: Option<&Path>,
    seed: Option<u64>,
    sections: &[&str],
) -> Result<Configs> {
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (key, value) in parse_key_values(&text)? {
            let mut known = false;
            for s in sections {
                known |= match *s {
                    "synth" => set_synth(&mut c.synth, &key, &value)?,
                    "model" => set_model(&mut c.model, &key, &value)?,
                    "train" => set_train(&mut c.train, &key, &value)?,
                    _ => set_run(&mut c.run, &key, &value)?,
                };
            }
            if !known {
                let mut valid: Vec<&str> = Vec::new();
                for s in sections {
                    valid.extend(match *s {
                        "synth" => SYNTH_KEYS,
                        "model" => MODEL_KEYS,
                        "train" => TRAIN_KEYS,
                        _ => RUN_KEYS,
                    });
                }
                valid.sort_unstable();
                valid.dedup();
                return Err(Error::config(format!(
                    "unknown config key {key:?} in {}; valid keys: {}",
                    path.display(),
                    valid.join(", ")
                )));
            }
        }
    }
    if let Some(s) = seed {
        c.synth.seed = s;
        c.train.seed = s;
    }
    Ok(c)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    match dispatch(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

fn say(cli: &Cli, out: &mut dyn Write, line: &str) {
    if !cli.quiet {
        let _ = writeln!(out, "{line}");
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Synth => {
            let c = load_configs(config, cli.seed, &["synth"])?;
            let scenes = synth_dataset(&c.synth)?;
            create_dir(&cli.out)?;
            save_dataset(&cli.out, &scenes)?;
            say(cli, out, &format!("wrote {} scenes to {}", scenes.len(), cli.out.display()));
            Ok(())
        }
        Command::Train { data, resume } => {
            let c = load_configs(config, cli.seed, &["model", "train", "run"])?;
            c.model.validate()?;
            c.train.validate()?;
            let scenes = load_dataset(data)?;
            let (train_set, val_set) = split_dataset(scenes, c.run.val_fraction, c.train.seed)?;
            let tiles = |set: &[SceneSample]| -> Result<Vec<Example>> {
                let mut v = Vec::new();
                for s in set {
                    v.extend(tile_scene(s, c.run.tile, c.run.stride)?.iter().map(|t| t.example()));
                }
                Ok(v)
            };
            let (train, val) = (tiles(&train_set)?, tiles(&val_set)?);
            let ck_dir = cli.out.join("checkpoints");
            let last = ck_dir.join(LAST_FILE);
            let trainer = if *resume && last.exists() {
                let ck = Checkpoint::load(&last)?;
                if ck.model.config() != &c.model {
                    return Err(Error::config(format!(
                        "checkpoint model config {:?} differs from requested {:?}",
                        ck.model.config(),
                        c.model
                    )));
                }
                Trainer::resume(ck, c.train.clone())?
            } else {
                let model = UNetModel::build(c.model.clone(), &Rng::new(c.train.seed))?;
                Trainer::new(model, c.train.clone())?
            };
            let mut trainer = trainer.with_checkpoint_dir(&ck_dir)?;
            say(
                cli,
                out,
                &format!(
                    "training on {} tiles ({} scenes), validating on {} tiles ({} scenes)",
                    train.len(),
                    train_set.len(),
                    val.len(),
                    val_set.len()
                ),
            );
            let outcome = trainer.fit(&train, Some(&val))?;
            trainer.history.write_csv(&cli.out.join("history.csv"))?;
            for r in &trainer.history.records {
                say(
                    cli,
                    out,
                    &format!(
                        "epoch {} train_loss={:.5} val_loss={:.5} train_acc={:.4} val_acc={:.4} lr={:e}",
                        r.epoch, r.train_loss, r.val_loss, r.train_acc, r.val_acc, r.lr
                    ),
                );
            }
            if let Some(best) = outcome.stopped_at_best {
                say(cli, out, &format!("early stop, restored epoch {best}"));
            }
            Ok(())
        }
        Command::Predict { checkpoint, scene } => {
            // the training config file is accepted as-is; only the run keys matter here
            let c = load_configs(config, cli.seed, &["model", "train", "run"])?;
            let model = Checkpoint::load(checkpoint)?.model;
            let jobs: Vec<(PathBuf, PathBuf)> = if scene.join("scenes").is_dir() {
                scene_dirs(scene)?
                    .into_iter()
                    .map(|d| {
                        let id = d.file_name().unwrap_or_default().to_owned();
                        (d, cli.out.join(id))
                    })
                    .collect()
            } else {
                vec![(scene.clone(), cli.out.clone())]
            };
            for (dir, dest) in jobs {
                let sample = load_scene_inputs(&dir)?;
                let prob = predict_scene(&model, &sample, c.run.tile, c.run.stride)?;
                prob.write(&dest, c.run.tau)?;
                say(cli, out, &format!("{} -> {}", dir.display(), dest.display()));
            }
            Ok(())
        }
        Command::Eval {
            pred,
            reference,
            pred_name,
            reference_name,
        } => {
            load_configs(config, cli.seed, &[])?;
            let pairs = pair_masks(pred, reference, pred_name, reference_name)?;
            let mut csv = format!("item,{}\n", MetricsReport::CSV_HEADER);
            let mut total = MetricsReport::from_counts(0, 0, 0, 0);
            for (rel, p, r) in &pairs {
                let m = compute_metrics(&read_mask(p)?, &read_mask(r)?)
                    .map_err(|e| Error::load(p, e.to_string()))?;
                csv.push_str(&format!("{rel},{}\n", m.to_csv_row()));
                total = total.merge(&m);
            }
            csv.push_str(&format!("ALL,{}\n", total.to_csv_row()));
            create_dir(&cli.out)?;
            let path = cli.out.join("metrics.csv");
            std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
            let _ = write!(out, "pairs={}\n{}", pairs.len(), total.to_key_values());
            Ok(())
        }
        Command::Recover => {
            let d = RecoveryConfig::default();
            let base = Configs {
                synth: d.synth,
                model: d.model,
                train: d.train,
                run: RunSettings {
                    tile: d.tile,
                    stride: d.stride,
                    val_fraction: d.val_fraction,
                    tau: d.tau,
                },
            };
            let c = apply_configs(base, config, cli.seed, &["synth", "model", "train", "run"])?;
            let rc = RecoveryConfig {
                synth: c.synth,
                model: c.model,
                train: c.train,
                tile: c.run.tile,
                stride: c.run.stride,
                val_fraction: c.run.val_fraction,
                tau: c.run.tau,
            };
            create_dir(&cli.out)?;
            let report = recovery_experiment(&rc, Some(&cli.out))?;
            let _ = write!(out, "{}", report.to_key_values());
            Ok(())
        }
    }
}

fn read_mask(path: &Path) -> Result<Mask> {
    Mask::from_raster(&crate::data::read_png(path)?).map_err(|e| Error::load(path, e.to_string()))
}

/// Like [`load_scene`] but tolerates a missing `mask.png` (inference only).
fn load_scene_inputs(dir: &Path) -> Result<SceneSample> {
    if dir.join("mask.png").exists() {
        return load_scene(dir);
    }
    let vis = crate::data::read_png(&dir.join("vis.png"))?;
    let nir = crate::data::read_png(&dir.join("nir.png"))?;
    let labels = Mask::zeros(vis.height, vis.width);
    let sample = SceneSample {
        scene_id: dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        vis,
        nir,
        labels,
        oracle: None,
        confusers: None,
    };
    sample
        .validate()
        .map_err(|e| Error::load(dir, e.to_string()))?;
    Ok(sample)
}

/// Finds every `<rel>/<pred_name>` under `pred` whose `<rel>/<reference_name>`
/// exists under `reference`. Sorted by relative path.
fn pair_masks(
    pred: &Path,
    reference: &Path,
    pred_name: &str,
    reference_name: &str,
) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if !pred.is_dir() {
        return Err(Error::load(pred, "prediction directory not found"));
    }
    if !reference.is_dir() {
        return Err(Error::load(reference, "reference directory not found"));
    }
    let mut pairs = Vec::new();
    let mut stack = vec![pred.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == pred_name) {
                let rel_dir = path.parent().unwrap().strip_prefix(pred).unwrap().to_path_buf();
                let r = reference.join(&rel_dir).join(reference_name);
                if r.exists() {
                    let rel = rel_dir.to_string_lossy().into_owned();
                    pairs.push((if rel.is_empty() { ".".into() } else { rel }, path, r));
                }
            }
        }
    }
    pairs.sort();
    if pairs.is_empty() {
        return Err(Error::load(
            pred,
            format!("no {pred_name} files with a matching {reference_name} under {}", reference.display()),
        ));
    }
    Ok(pairs)
}
