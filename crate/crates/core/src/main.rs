use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gridmix::pipeline::{self, ConfigFile, PipelineConfig, PipelineError};

#[derive(Parser)]
#[command(name = "gridmix", version, about = "Carbon footprint of transaction volume from a grid fuel mix")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, gap-fill and align the inputs into the hourly store.
    Ingest(Flags),
    /// Build features and cluster them.
    Cluster(Flags),
    /// Emission series, Bitcoin footprint and reference comparison.
    Carbon(Flags),
    /// Correlations, heatmaps and the findings summary.
    Report(Flags),
}

#[derive(Args, Debug, Clone)]
struct Flags {
    /// JSON file with flat keys mirroring the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    fuel_mix: Option<PathBuf>,
    #[arg(long)]
    btv: Option<PathBuf>,
    #[arg(long)]
    temp: Option<PathBuf>,
    /// celsius or fahrenheit (default).
    #[arg(long)]
    temp_unit: Option<String>,
    #[arg(long)]
    cbeci: Option<PathBuf>,
    #[arg(long)]
    factors: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// IANA zone for timestamps without an offset (default UTC).
    #[arg(long)]
    tz: Option<String>,
    /// hourly|daily|weekly|monthly
    #[arg(long)]
    resolution: Option<String>,
    /// kmeans|minibatch|meanshift|agglomerative
    #[arg(long)]
    method: Option<String>,
    /// <n>|knee|silhouette
    #[arg(long)]
    k: Option<String>,
    /// per-tx:<kwh>|cbeci:<share>
    #[arg(long)]
    energy_model: Option<String>,
    /// Regional share applied to the reference series in the comparison.
    #[arg(long)]
    cbeci_share: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; falls back to $GRIDMIX_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Leave wall-clock data out of every artifact.
    #[arg(long)]
    reproducible: bool,
    /// Write rejected input rows here as JSON lines.
    #[arg(long)]
    reject_log: Option<PathBuf>,
    /// 2d|3d|temperature or a comma list of features.
    #[arg(long)]
    features: Option<String>,
    /// Comma list of features to log2-transform (default btv; `none` for no columns).
    #[arg(long)]
    log_columns: Option<String>,
    #[arg(long)]
    run_id: Option<String>,
}

impl Flags {
    fn to_config(&self) -> ConfigFile {
        ConfigFile {
            fuel_mix: self.fuel_mix.clone(),
            btv: self.btv.clone(),
            temp: self.temp.clone(),
            temp_unit: self.temp_unit.clone(),
            cbeci: self.cbeci.clone(),
            factors: self.factors.clone(),
            taxonomy: self.taxonomy.clone(),
            tz: self.tz.clone(),
            resolution: self.resolution.clone(),
            method: self.method.clone(),
            k: self.k.clone(),
            energy_model: self.energy_model.clone(),
            cbeci_share: self.cbeci_share,
            seed: self.seed,
            out: self.out.clone(),
            reproducible: self.reproducible.then_some(true),
            reject_log: self.reject_log.clone(),
            features: self.features.clone(),
            log_columns: self.log_columns.clone(),
            run_id: self.run_id.clone(),
        }
    }
}

fn run(stage: &str, flags: &Flags) -> Result<serde_json::Value, PipelineError> {
    let base = match &flags.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let cfg = PipelineConfig::resolve(base.overlay(flags.to_config()))?;
    pipeline::run_stage(stage, &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, flags) = match &cli.command {
        Command::Ingest(f) => ("ingest", f),
        Command::Cluster(f) => ("cluster", f),
        Command::Carbon(f) => ("carbon", f),
        Command::Report(f) => ("report", f),
    };
    match run(stage, flags) {
        Ok(manifest) => {
            println!(
                "{}",
                serde_json::json!({
                    "stage": stage,
                    "run_id": manifest["run_id"],
                })
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
