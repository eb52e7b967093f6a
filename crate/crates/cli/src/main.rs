use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ldt_core::config::{CampaignConfig, DetectorKind, ModelKind};
use ldt_core::ldt::{initial_model, run_campaign, sweep_thresholds, PhysicalTwin};
use ldt_core::report::{write_campaign_csv, write_per_e_csv, write_summary_json, write_sweep_csv, SweepRow};

#[derive(Parser)]
#[command(name = "ldt", version, about = "Learning digital twin campaigns on a degrading rotor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Campaign config (JSON). Defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory. Falls back to `output_dir` of the config, then `.`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Linear,
    Hybrid,
}

#[derive(Subcommand)]
enum Command {
    /// Dump one experiment of the stream as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Experiment index, 1-based.
        #[arg(long)]
        index: usize,
        /// Adds the prediction of this initial model as a `y_hat` column.
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
    },
    /// Run one campaign: campaign.csv, summary.json, per_e.csv.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Threshold sweep over both models and both error detectors: sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated drift thresholds; defaults to `sweep_grid`.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
}

/// Errors that exit with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn load(common: &Common) -> Result<(CampaignConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => CampaignConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => CampaignConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    Ok((cfg, out))
}

/// Files rendered in memory and written together; nothing is left behind
/// when a write fails.
struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn add(&mut self, name: &str, render: impl FnOnce(&mut Vec<u8>) -> ldt_core::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        render(&mut buf).with_context(|| format!("rendering {name}"))?;
        self.files.push((name.to_string(), buf));
        Ok(())
    }

    fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        let created = !dir.exists();
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut written = Vec::new();
        let result = self.files.iter().try_for_each(|(name, bytes)| {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            written.push(path.clone());
            f.write_all(bytes).and_then(|_| f.sync_all()).with_context(|| format!("writing {}", path.display()))
        });
        if let Err(e) = result {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            if created {
                let _ = fs::remove_dir(dir);
            }
            return Err(e);
        }
        Ok(written)
    }
}

fn cmd_simulate(common: &Common, index: usize, model: Option<ModelArg>) -> Result<Vec<PathBuf>> {
    let (mut cfg, out) = load(common)?;
    let n = cfg.schedule.experiments;
    if index == 0 || index > n {
        return Err(UsageError(format!("--index {index} is outside the valid range [1, {n}]")).into());
    }
    let twin = PhysicalTwin::new(&cfg)?;
    let experiment = twin.experiment(index)?;
    let prediction = match model {
        None => None,
        Some(kind) => {
            cfg.model.kind = match kind {
                ModelArg::Linear => ModelKind::Linear,
                ModelArg::Hybrid => ModelKind::Hybrid,
            };
            let first = if index == 1 { experiment.clone() } else { twin.experiment(1)? };
            Some(initial_model(&cfg, &first)?.rollout(&experiment.u, experiment.y[0])?)
        }
    };
    let mut artifacts = Artifacts::new();
    artifacts.add(&format!("experiment_{index}.csv"), |b| experiment.write_csv(b, prediction.as_deref()))?;
    artifacts.commit(&out)
}

fn cmd_run(common: &Common) -> Result<Vec<PathBuf>> {
    let (cfg, out) = load(common)?;
    let result = run_campaign(&cfg)?;
    let mut artifacts = Artifacts::new();
    artifacts.add("campaign.csv", |b| write_campaign_csv(b, &result.rows))?;
    artifacts.add("summary.json", |b| write_summary_json(b, &result))?;
    artifacts.add("per_e.csv", |b| write_per_e_csv(b, &result.rows))?;
    artifacts.commit(&out)
}

fn cmd_sweep(common: &Common, grid: Option<&[f64]>) -> Result<Vec<PathBuf>> {
    let (mut cfg, out) = load(common)?;
    let mut grid = grid.map(<[f64]>::to_vec).unwrap_or_else(|| cfg.sweep_grid.clone());
    if grid.is_empty() || grid.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(UsageError("--grid needs at least one positive threshold".into()).into());
    }
    grid.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    for model in [ModelKind::Linear, ModelKind::Hybrid] {
        for detector in [DetectorKind::Threshold, DetectorKind::Lddm] {
            cfg.model.kind = model;
            cfg.detector.kind = detector;
            let results = sweep_thresholds(&cfg, &grid)?;
            rows.extend(results.iter().map(SweepRow::from_result));
        }
    }
    let mut artifacts = Artifacts::new();
    artifacts.add("sweep.csv", |b| write_sweep_csv(b, &rows))?;
    artifacts.commit(&out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate { common, index, model } => cmd_simulate(common, *index, *model),
        Command::Run { common } => cmd_run(common),
        Command::Sweep { common, grid } => cmd_sweep(common, grid.as_deref()),
    };
    match outcome {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
