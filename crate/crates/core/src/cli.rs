//! Command-line entry point.
//!
//! Every verb resolves its configuration from an optional JSON file plus
//! `--set key=value` overrides, writes the resolved document to
//! `<out>/config.json`, and embeds it in every JSON artifact it produces.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checks::{gradient_report, relation_report, GRADCHECK_TOLERANCE};
use crate::config::layered;
use crate::encoders::{Codebook, SEM_DIM};
use crate::error::{Error, Result};
use crate::geometry::Dataset;
use crate::model::ParamStore;
use crate::probes::{embed_entities, speed_probe, zone_probe, EmbedOptions, ProbeConfig};
use crate::synthcity::{generate_city, read_labels, CityParams};
use crate::train::{train, TrainConfig, TrainOutput};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "nara", version, about = "Relation-aware self-supervised learning over vector geoentities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON configuration document.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the seed field of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Dotted configuration override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct Inputs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Dataset in line-delimited JSON.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic city and its labels.
    Synth(Common),
    /// Pretrain on a dataset.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
    /// Export contextual embeddings.
    Embed {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// File with one entity id per line; defaults to every entity.
        #[arg(long, value_name = "PATH")]
        ids: Option<PathBuf>,
    },
    /// Zone classification probe on frozen embeddings.
    ProbeClassify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_name = "PATH")]
        labels: PathBuf,
    },
    /// Road speed regression probe on frozen embeddings.
    ProbeRegress {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_name = "PATH")]
        labels: PathBuf,
    },
    /// Finite-difference check of every loss.
    Gradcheck(Common),
    /// Topology engine against the rasterized oracle.
    Relcheck(Common),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeRun {
    pub embed: EmbedOptions,
    pub probe: ProbeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressRun {
    pub embed: EmbedOptions,
    pub probe: ProbeConfig,
    pub neighbor_mean: bool,
    pub neighbor_radius: f64,
}

impl Default for RegressRun {
    fn default() -> Self {
        Self {
            embed: EmbedOptions::default(),
            probe: ProbeConfig::default(),
            neighbor_mean: false,
            neighbor_radius: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckRun {
    pub seed: u64,
    pub windows: usize,
}

impl Default for GradcheckRun {
    fn default() -> Self {
        Self { seed: 0, windows: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelcheckRun {
    pub seed: u64,
    pub pairs: usize,
}

impl Default for RelcheckRun {
    fn default() -> Self {
        Self { seed: 0, pairs: 1000 }
    }
}

/// Parse `argv` (program name first), run the verb and return the process
/// exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_of(&e)
        }
    }
}

pub fn exit_code_of(e: &Error) -> i32 {
    match e {
        _ if e.is_numeric() => EXIT_NUMERIC,
        Error::Config(_) | Error::Json(_) | Error::MissingIds(_) => EXIT_USAGE,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
        _ => EXIT_CHECK_FAILED,
    }
}

fn resolve<T>(common: &Common, seed_key: &[&str]) -> Result<T>
where
    T: Serialize + serde::de::DeserializeOwned + Default,
{
    let base = common.config.as_deref().map(read_text).transpose()?;
    let mut overrides = Vec::new();
    if let Some(seed) = common.seed {
        overrides.extend(seed_key.iter().map(|k| format!("{k}={seed}")));
    }
    overrides.extend(common.set.iter().cloned());
    layered(base.as_deref(), &overrides)
}

fn echo<T: Serialize>(out: &Path, verb: &str, config: &T) -> Result<serde_json::Value> {
    fs::create_dir_all(out)?;
    let doc = serde_json::json!({ "verb": verb, "config": config });
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&doc)?)?;
    Ok(doc)
}

fn write_report<T: Serialize>(path: &Path, run: &serde_json::Value, key: &str, value: &T) -> Result<()> {
    let mut doc = run.clone();
    doc[key] = serde_json::to_value(value)?;
    fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::parse_lines(&read_text(path)?)
}

fn load_model(path: &Path) -> Result<(ParamStore, Codebook)> {
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{}: checkpoint not found", path.display()),
        )));
    }
    let (params, ck) = ParamStore::load(path)?;
    let seed = ck.seeds.get("codebook_seed").copied().unwrap_or(0);
    Ok((params, Codebook::new(seed, SEM_DIM)))
}

fn read_ids(path: &Path) -> Result<Vec<u64>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            l.trim().parse().map_err(|_| Error::Parse {
                line: k + 1,
                message: format!("`{}` is not an entity id", l.trim()),
            })
        })
        .collect()
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Synth(common) => {
            let p: CityParams = resolve(&common, &["seed"])?;
            p.validate()?;
            echo(&common.out, "synth", &p)?;
            let city = generate_city(&p)?;
            city.write(&common.out)?;
            println!("wrote {} entities to {}", city.dataset.len(), common.out.join("city.jsonl").display());
        }
        Command::Pretrain { common, data } => {
            let cfg: TrainConfig = resolve(&common, &["seed"])?;
            cfg.validate()?;
            echo(&common.out, "pretrain", &cfg)?;
            let dataset = read_dataset(&data)?;
            let outcome = train(
                &dataset,
                &cfg,
                &TrainOutput {
                    dir: Some(common.out.clone()),
                },
            )?;
            let losses = outcome.epoch_losses();
            if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
                println!("epoch loss {first:.6} -> {last:.6}");
            }
            println!("checkpoint {}", common.out.join("checkpoint.json").display());
        }
        Command::Embed { common, inputs, ids } => {
            let opts: EmbedOptions = resolve(&common, &["random_seed"])?;
            echo(&common.out, "embed", &opts)?;
            let (params, codebook) = load_model(&inputs.checkpoint)?;
            let dataset = read_dataset(&inputs.data)?;
            let ids = match ids {
                Some(path) => read_ids(&path)?,
                None => dataset.entities.iter().map(|e| e.id).collect(),
            };
            let emb = embed_entities(&params, &codebook, &dataset, &ids, &opts)?;
            let mut f = std::io::BufWriter::new(fs::File::create(common.out.join("embeddings.jsonl"))?);
            for e in &emb {
                writeln!(f, "{}", serde_json::to_string(e)?)?;
            }
            f.flush()?;
            println!("wrote {} embeddings", emb.len());
        }
        Command::ProbeClassify { common, inputs, labels } => {
            let run: ProbeRun = resolve(&common, &["probe.split_seed", "embed.random_seed"])?;
            let doc = echo(&common.out, "probe-classify", &run)?;
            let (params, codebook) = load_model(&inputs.checkpoint)?;
            let dataset = read_dataset(&inputs.data)?;
            let zones: BTreeMap<u64, usize> = read_labels(&labels)?
                .into_iter()
                .filter_map(|l| l.zone.map(|z| (l.id, z)))
                .collect();
            let m = zone_probe(&params, &codebook, &dataset, &zones, &run.embed, &run.probe)?;
            write_report(&common.out.join("metrics.json"), &doc, "metrics", &m)?;
            println!("macro-F1 {:.2} weighted-F1 {:.2} accuracy {:.2}", m.macro_f1, m.weighted_f1, m.accuracy);
        }
        Command::ProbeRegress { common, inputs, labels } => {
            let run: RegressRun = resolve(&common, &["probe.split_seed", "embed.random_seed"])?;
            let doc = echo(&common.out, "probe-regress", &run)?;
            let (params, codebook) = load_model(&inputs.checkpoint)?;
            let dataset = read_dataset(&inputs.data)?;
            let speeds: BTreeMap<u64, f64> = read_labels(&labels)?
                .into_iter()
                .filter_map(|l| l.speed.map(|s| (l.id, s)))
                .collect();
            let radius = run.neighbor_mean.then_some(run.neighbor_radius);
            let m = speed_probe(&params, &codebook, &dataset, &speeds, &run.embed, &run.probe, radius)?;
            write_report(&common.out.join("metrics.json"), &doc, "metrics", &m)?;
            println!("RMSE {:.3} MAE {:.3} R2 {:.3} MAPE {:.2}", m.rmse, m.mae, m.r2, m.mape);
        }
        Command::Gradcheck(common) => {
            let run: GradcheckRun = resolve(&common, &["seed"])?;
            let doc = echo(&common.out, "gradcheck", &run)?;
            let rows = gradient_report(run.seed, run.windows)?;
            write_report(&common.out.join("gradcheck.json"), &doc, "rows", &rows)?;
            println!("{:<8} {:>14} {:>8}", "loss", "max rel error", "windows");
            for r in &rows {
                println!("{:<8} {:>14.3e} {:>8}", r.loss, r.max_rel_error, r.windows);
            }
            if rows.iter().any(|r| !r.passed()) {
                eprintln!("gradient check above {GRADCHECK_TOLERANCE:e}");
                return Ok(EXIT_CHECK_FAILED);
            }
        }
        Command::Relcheck(common) => {
            let run: RelcheckRun = resolve(&common, &["seed"])?;
            let doc = echo(&common.out, "relcheck", &run)?;
            let report = relation_report(run.seed, run.pairs);
            write_report(&common.out.join("relcheck.json"), &doc, "report", &report)?;
            println!(
                "agreement {}/{} asymmetric {} skipped degenerate {}",
                report.agreements, report.pairs, report.asymmetric, report.degenerate_skipped
            );
            if report.agreements != report.pairs || report.asymmetric > 0 {
                return Ok(EXIT_CHECK_FAILED);
            }
        }
    }
    Ok(EXIT_OK)
}
