//! `dect`: batch front end for sparse-view dual-energy CT.
//!
//! Stages run in order `simulate`, `labels`, `train-image`, `train-sino`,
//! `evaluate`, each reading the previous stages' files from one run
//! directory and writing a manifest that records their digests.

mod commands;
mod pgm;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dect_core::{build_fan_geometry, Preset, ScannerConfig};

#[derive(Parser, Debug)]
#[command(name = "dect", version, about = "Sparse-view dual-energy CT: simulation, training, reconstruction and evaluation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Named defaults for every stage: `desk` or `paper`.
    #[arg(long, global = true, default_value = "desk")]
    pub preset: String,
    /// Seed of all randomness (phantoms, noise, initialization, batching).
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Run directory; defaults to `<output root>/<preset>-s<seed>`.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    /// Root under which default run directories are created.
    #[arg(long, global = true, env = "DECT_OUTPUT_ROOT", default_value = "runs")]
    pub output_root: PathBuf,
    /// Scanner description (`key = value` lines) overriding the preset
    /// geometry; only `simulate` and standalone `reconstruct` read it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate phantoms and their noisy 9-view sinograms.
    Simulate(commands::SimulateArgs),
    /// Pick the MBIR data weight and reconstruct training labels.
    Labels(commands::LabelsArgs),
    /// Train the image-domain denoiser.
    TrainImage(commands::TrainArgs),
    /// Train the sinogram-domain denoiser on the image denoiser's output.
    TrainSino(commands::TrainArgs),
    /// Reconstruct one sinogram file.
    Reconstruct(commands::ReconstructArgs),
    /// Run every method on the test split and write the NMSE report.
    Evaluate(commands::EvaluateArgs),
    /// Write 8-bit PGM slices of a volume or sinogram file.
    ExportSlices(commands::ExportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Labels(_) => "labels",
            Command::TrainImage(_) => "train-image",
            Command::TrainSino(_) => "train-sino",
            Command::Reconstruct(_) => "reconstruct",
            Command::Evaluate(_) => "evaluate",
            Command::ExportSlices(_) => "export-slices",
        }
    }
}

impl Global {
    pub fn preset(&self) -> Result<Preset> {
        let mut p = Preset::by_name(&self.preset)?;
        if let Some(path) = &self.config {
            let mut cfg = ScannerConfig::load(path).with_context(|| format!("--config {}", path.display()))?;
            if cfg.get("defaults").is_none() {
                cfg.set("defaults", &p.name);
            }
            p.geometry = build_fan_geometry(&cfg).with_context(|| format!("--config {}", path.display()))?;
        }
        Ok(p)
    }

    pub fn run(&self) -> Result<run::Run> {
        let preset = self.preset()?;
        let dir = self
            .run_dir
            .clone()
            .unwrap_or_else(|| self.output_root.join(format!("{}-s{}", preset.name, self.seed)));
        Ok(run::Run {
            dir,
            preset,
            seed: self.seed,
        })
    }
}

/// Error chain on one line, skipping causes already quoted by their parent.
fn one_line(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let msg = cause.to_string().replace('\n', " ");
        if parts.last().is_some_and(|prev| prev.contains(&msg)) {
            continue;
        }
        parts.push(msg);
    }
    parts.join(": ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    if let Some(n) = cli.global.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("dect {name}: error: --workers: {e}");
            return ExitCode::FAILURE;
        }
    }
    let g = &cli.global;
    let outcome = match &cli.command {
        Command::Simulate(a) => commands::simulate(g, a),
        Command::Labels(a) => commands::labels(g, a),
        Command::TrainImage(a) => commands::train(g, a, dect_core::Domain::Image),
        Command::TrainSino(a) => commands::train(g, a, dect_core::Domain::Sinogram),
        Command::Reconstruct(a) => commands::reconstruct(g, a),
        Command::Evaluate(a) => commands::evaluate(g, a),
        Command::ExportSlices(a) => commands::export_slices(g, a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dect {name}: error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn repeated_causes_are_dropped() {
        let inner = anyhow::anyhow!("disk full");
        let e = inner.context("stage `labels` failed for case bag-001: disk full").context("writing labels");
        assert_eq!(one_line(&e), "writing labels: stage `labels` failed for case bag-001: disk full");
    }
}
