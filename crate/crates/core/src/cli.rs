//! `skeladapt` command line: synthetic data generation, training,
//! evaluation and image export.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal invariant violation.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmark::{CrossViewBenchmark, TARGET_INSTANCE_OFFSET};
use crate::checkpoint::{Checkpoint, SplitInfo};
use crate::encoder::{encode, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, ConfusionMatrix};
use crate::objectives::Ablation;
use crate::skeleton::{
    gen_domain, load_jsonl, ntu_label_from_name, parse_jsonl, parse_ntu_skeleton, save_jsonl, split_target, Domain,
    SkeletonSequence, SynthConfig,
};
use crate::trainer::{train, RunSummary, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Pixel size of one confusion-matrix cell in `confusion.ppm`.
const HEATMAP_CELL: usize = 16;

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Parse { .. } | Error::Record { .. } | Error::Data(_) | Error::Io { .. } | Error::Json(_) => EXIT_DATA,
        Error::Shape { .. } | Error::Backward(_) | Error::MissingGrad(_) | Error::NonFinite(_) => EXIT_INTERNAL,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Labeled source-domain JSONL.
    pub source: PathBuf,
    /// Target-domain JSONL, split into adaptation and test parts.
    pub target: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: PathBuf::from("data/source.jsonl"),
            target: PathBuf::from("data/target.jsonl"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub instances_per_class: usize,
    pub source: SynthConfig,
    pub target: SynthConfig,
}

/// Everything one experiment needs, read from a single TOML file. Relative
/// paths resolve against the directory holding that file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub target_fraction: f64,
    pub data: DataConfig,
    pub synth: SynthSection,
    pub train: TrainConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        let source = SynthConfig::default();
        SynthSection {
            instances_per_class: 40,
            source,
            target: SynthConfig {
                view_angle: 60f64.to_radians(),
                ..source
            },
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            out_dir: PathBuf::from("runs/default"),
            target_fraction: 0.3,
            data: DataConfig::default(),
            synth: SynthSection::default(),
            train: TrainConfig::default(),
        }
    }
}

impl From<&CrossViewBenchmark> for ExperimentConfig {
    fn from(b: &CrossViewBenchmark) -> Self {
        ExperimentConfig {
            out_dir: PathBuf::from("runs/cross_view"),
            target_fraction: b.target_fraction,
            data: DataConfig::default(),
            synth: SynthSection {
                instances_per_class: b.instances_per_class,
                source: b.source,
                target: b.target,
            },
            train: b.train.clone(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path`, or returns the defaults when no file is given.
    /// Relative paths inside the file are made relative to its directory.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ExperimentConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = ExperimentConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.out_dir, &mut cfg.data.source, &mut cfg.data.target] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_fraction > 0.0 && self.target_fraction < 1.0) {
            return Err(Error::Config(format!(
                "target_fraction must be in (0,1), got {}",
                self.target_fraction
            )));
        }
        if self.synth.instances_per_class == 0 {
            return Err(Error::Config("synth.instances_per_class must be positive".into()));
        }
        self.synth.source.validate()?;
        self.synth.target.validate()?;
        if self.synth.source.num_classes != self.synth.target.num_classes {
            return Err(Error::Config(format!(
                "synth.source has {} classes, synth.target has {}",
                self.synth.source.num_classes, self.synth.target.num_classes
            )));
        }
        self.train.validate()
    }
}

#[derive(Debug, Parser)]
#[command(name = "skeladapt", version, about = "Skeleton action recognition with two-level domain adaptation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic source and target datasets as JSONL.
    GenSynth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for source.jsonl and target.jsonl; defaults to
        /// the [data] paths.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the seed of both synthetic domains.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Split the target set, train, and write run artifacts.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// none, no-lfd, no-le or baseline.
        #[arg(long)]
        ablation: Option<Ablation>,
        #[arg(long)]
        target_fraction: Option<f64>,
    },
    /// Top-1 accuracy of a checkpoint. When the checkpoint records a target
    /// split, the same split is redrawn and its test part evaluated.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labeled JSONL dataset.
        #[arg(long)]
        data: PathBuf,
        /// Directory for confusion.csv and confusion.ppm.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Evaluate every record instead of the recorded split.
        #[arg(long)]
        all: bool,
    },
    /// Write one PPM per sequence plus index.csv.
    Encode {
        /// `.skeleton` or `.jsonl` files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Encoder settings are read from [train.encoder].
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::GenSynth { config, out, seed } => cmd_gen_synth(config.as_deref(), out.as_deref(), seed),
        Command::Train {
            config,
            out,
            seed,
            ablation,
            target_fraction,
        } => {
            let overrides = TrainOverrides {
                out,
                seed,
                ablation,
                target_fraction,
            };
            cmd_train(config.as_deref(), &overrides).map(|_| EXIT_OK)
        }
        Command::Eval {
            checkpoint,
            data,
            out,
            all,
        } => cmd_eval(&checkpoint, &data, out.as_deref(), all).map(|_| EXIT_OK),
        Command::Encode { inputs, out, config } => cmd_encode(&inputs, &out, config.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `source.jsonl` and `target.jsonl` and prints per-class counts.
pub fn cmd_gen_synth(config: Option<&Path>, out: Option<&Path>, seed: Option<u64>) -> Result<i32> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.synth.source.seed = s;
        cfg.synth.target.seed = s;
    }
    cfg.validate()?;
    let (source_path, target_path) = match out {
        Some(dir) => (dir.join("source.jsonl"), dir.join("target.jsonl")),
        None => (cfg.data.source.clone(), cfg.data.target.clone()),
    };
    let n = cfg.synth.instances_per_class;
    let source = gen_domain(&cfg.synth.source, n, Domain::Source, 0)?;
    let target = gen_domain(&cfg.synth.target, n, Domain::Target, TARGET_INSTANCE_OFFSET)?;
    for path in [&source_path, &target_path] {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
    }
    save_jsonl(&source, &source_path)?;
    save_jsonl(&target, &target_path)?;
    let counts = |d: &[SkeletonSequence], c: usize| d.iter().filter(|s| s.label.map(|l| l.0) == Some(c)).count();
    println!("class,source,target");
    for c in 0..cfg.synth.source.num_classes {
        println!("{c},{},{}", counts(&source, c), counts(&target, c));
    }
    println!("total,{},{}", source.len(), target.len());
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub ablation: Option<Ablation>,
    pub target_fraction: Option<f64>,
}

/// Trains one configuration and writes `config.echo`, `history.csv`,
/// `summary.json`, `best.ckpt`, `final.ckpt`, `confusion.csv` and
/// `confusion.ppm` into the output directory.
pub fn cmd_train(config: Option<&Path>, overrides: &TrainOverrides) -> Result<RunSummary> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(out) = &overrides.out {
        cfg.out_dir = out.clone();
    }
    if let Some(s) = overrides.seed {
        cfg.train.seed = s;
    }
    if let Some(a) = overrides.ablation {
        cfg.train.ablation = a;
    }
    if let Some(f) = overrides.target_fraction {
        cfg.target_fraction = f;
    }
    cfg.validate()?;

    let source = load_jsonl(&cfg.data.source)?;
    let target = load_jsonl(&cfg.data.target)?;
    let split = SplitInfo {
        fraction: cfg.target_fraction,
        seed: cfg.train.seed,
    };
    let (target_train, target_test) = split_target(&target, split.fraction, split.seed)?;
    let target_train: Vec<_> = target_train.iter().map(SkeletonSequence::without_label).collect();

    let echo = cfg.to_toml()?;
    let config_hash = format!("{:x}", Sha256::digest(echo.as_bytes()));
    let outcome = train(&cfg.train, &source, &target_train, &target_test)?;
    let summary = RunSummary::new(&cfg.train, &outcome, config_hash);

    let dir = &cfg.out_dir;
    create_dir(dir)?;
    write_file(&dir.join("config.echo"), &echo)?;
    write_file(&dir.join("history.csv"), outcome.history.to_csv())?;
    write_file(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Checkpoint::from_model(&outcome.best_model, cfg.train.encoder, Some(split)).save(dir.join("best.ckpt"))?;
    Checkpoint::from_model(&outcome.model, cfg.train.encoder, Some(split)).save(dir.join("final.ckpt"))?;
    write_file(&dir.join("confusion.csv"), outcome.confusion.to_csv())?;
    write_file(&dir.join("confusion.ppm"), outcome.confusion.to_ppm(HEATMAP_CELL))?;
    println!(
        "final accuracy {:.4} (best {:.4} at epoch {})",
        summary.final_accuracy, summary.best_accuracy, summary.best_epoch
    );
    Ok(summary)
}

/// Prints the accuracy to four decimals and returns it with the confusion
/// matrix.
pub fn cmd_eval(checkpoint: &Path, data: &Path, out: Option<&Path>, all: bool) -> Result<(f64, ConfusionMatrix)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.to_model()?;
    let dataset = load_jsonl(data)?;
    if dataset.is_empty() {
        return Err(Error::Data(format!("{} holds no records", data.display())));
    }
    let k = model.config.num_classes;
    if let Some(max) = dataset.iter().filter_map(|s| s.label).map(|l| l.0).max() {
        if max >= k {
            return Err(Error::Data(format!(
                "dataset has labels up to {max} ({} classes) but the checkpoint has {k} classes",
                max + 1
            )));
        }
    }
    let items = match (ckpt.split, all) {
        (Some(split), false) => split_target(&dataset, split.fraction, split.seed)?.1,
        _ => dataset,
    };
    let (acc, cm) = evaluate(&model, &items, &ckpt.encoder)?;
    println!("{acc:.4}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("confusion.csv"), cm.to_csv())?;
        write_file(&dir.join("confusion.ppm"), cm.to_ppm(HEATMAP_CELL))?;
    }
    Ok((acc, cm))
}

fn load_inputs(path: &Path) -> Result<Vec<(String, SkeletonSequence)>> {
    let stem = path
        .file_stem()
        .map_or_else(|| "sequence".to_string(), |s| s.to_string_lossy().into_owned());
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        let text = String::from_utf8(bytes).map_err(|_| Error::Data(format!("{} is not UTF-8", path.display())))?;
        Ok(parse_jsonl(&text)?
            .into_iter()
            .enumerate()
            .map(|(i, s)| (format!("{stem}_{i:05}"), s))
            .collect())
    } else {
        let mut seq = parse_ntu_skeleton(&bytes)?;
        seq.label = ntu_label_from_name(&stem);
        Ok(vec![(stem, seq)])
    }
}

/// Encodes every input sequence to `<out>/<name>.ppm` and lists them in
/// `<out>/index.csv`. Unreadable inputs are reported and skipped; the exit
/// code is 2 if any input failed.
pub fn cmd_encode(inputs: &[PathBuf], out: &Path, config: Option<&Path>) -> Result<i32> {
    let encoder: EncoderConfig = ExperimentConfig::load(config)?.train.encoder;
    encoder.validate()?;
    create_dir(out)?;
    let mut index = String::from("file,label,shape\n");
    let mut failures = 0;
    for path in inputs {
        let encoded = load_inputs(path).and_then(|seqs| {
            seqs.into_iter()
                .map(|(name, seq)| encode(&seq, &encoder).map(|img| (name, seq.label, img)))
                .collect::<Result<Vec<_>>>()
        });
        match encoded {
            Ok(images) => {
                for (name, label, img) in images {
                    let file = format!("{name}.ppm");
                    img.write_ppm(out.join(&file))?;
                    let label = label.map_or(String::new(), |l| l.0.to_string());
                    writeln!(index, "{file},{label},3x{}x{}", img.height(), img.width()).unwrap();
                }
            }
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                failures += 1;
            }
        }
    }
    write_file(&out.join("index.csv"), index)?;
    Ok(if failures == 0 { EXIT_OK } else { EXIT_DATA })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_toml_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml("[train]\nepochs = 3\n[train.sgd]\nbase_lr = 0.02\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.sgd.base_lr, 0.02);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.target_fraction, 0.3);
    }

    #[test]
    fn shipped_benchmark_config_matches() {
        let text = include_str!("../../../configs/cross_view.toml");
        let want = ExperimentConfig::from(&CrossViewBenchmark::default());
        assert_eq!(ExperimentConfig::from_toml(text).unwrap(), want);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = ExperimentConfig::from_toml("[train]\nepoch = 3\n").unwrap_err();
        assert_eq!(exit_code(&e), EXIT_USAGE);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["skeladapt", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["skeladapt", "train", "--ablation", "nope"]), EXIT_USAGE);
        assert_eq!(run(["skeladapt", "--help"]), EXIT_OK);
    }
}
