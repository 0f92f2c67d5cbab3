//! The four CLI stages (`ingest`, `cluster`, `carbon`, `report`) and the
//! on-disk run layout:
//!
//! ```text
//! <out>/<run-id>/
//!   manifest.json
//!   store/      hourly.csv, tavg_daily.csv, cbeci.csv, fill_report.json, provenance.json
//!   cluster/<resolution>_<method>/
//!               features.csv, features.json, model.json, assignments.csv, scatter.svg, knee.svg
//!   carbon/     footprint and emission CSVs, trend SVGs, divergence.json, summary.json
//!   report/     summary.json, summary.md, correlation CSVs and heatmaps
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use chrono::{DateTime, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::carbon::{
    self, CarbonError, CarbonFootprintSeries, DipRule, EmissionFactorTable, EnergyModel,
};
use crate::clustering::{self, ClusterError, ClusterModel, ClusterParams, KneeResult, Method};
use crate::ingest::{
    self, format_timestamp, EnergySeries, FuelMixRecord, FuelMixSeries, FuelTaxonomy,
    IngestError, ParseOptions, ParseReport, TempUnit, TransactionVolumeSeries, TxRecord,
};
use crate::matrix::Matrix;
use crate::preprocess::{
    self, Feature, FeatureMatrix, FeatureSpec, PreprocessError, BTV_COLUMN, FUEL_PREFIX,
    TAVG_COLUMN,
};
use crate::report::{self, ChartMeta};
use crate::stats::{self, CorrelationMatrix, StatsError};
use crate::timeseries::{
    self, align, fill_gaps, Aggregator, AlignedTable, FillReport, Resolution, TimeSeries,
    TimeSeriesError,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const OUT_ENV: &str = "GRIDMIX_OUT";
pub const SUMMARY_SCHEMA: &str = include_str!("../data/summary.schema.json");

pub const HIGH_CARBON_CLASS: &str = "high_carbon_low_green";
pub const LOW_CARBON_CLASS: &str = "low_carbon_high_green";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    TimeSeries(#[from] TimeSeriesError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Carbon(#[from] CarbonError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("missing artifact {0}; run the earlier stage first")]
    MissingArtifact(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for PipelineError {
    fn from(e: serde_json::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}

/// Variant name of an error's Debug form, e.g. `ZeroGeneration`.
fn debug_kind(dbg: String) -> String {
    dbg.split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or("Error")
        .to_string()
}

impl PipelineError {
    pub fn kind(&self) -> String {
        match self {
            PipelineError::Ingest(e) => e.kind().to_string(),
            PipelineError::Carbon(CarbonError::Ingest(e)) => e.kind().to_string(),
            PipelineError::TimeSeries(e) => debug_kind(format!("{e:?}")),
            PipelineError::Preprocess(e) => debug_kind(format!("{e:?}")),
            PipelineError::Cluster(e) => debug_kind(format!("{e:?}")),
            PipelineError::Carbon(e) => debug_kind(format!("{e:?}")),
            PipelineError::Stats(e) => debug_kind(format!("{e:?}")),
            PipelineError::MissingArtifact(_) => "MissingArtifact".into(),
            PipelineError::Usage(_) => "Usage".into(),
            PipelineError::Io(_) => "Io".into(),
        }
    }

    /// 1 ingest/alignment/io, 2 usage, 3 clustering, 4 carbon, 5 report.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Ingest(_)
            | PipelineError::TimeSeries(_)
            | PipelineError::Io(_)
            | PipelineError::Carbon(CarbonError::Ingest(_)) => 1,
            PipelineError::Usage(_) => 2,
            PipelineError::Preprocess(_) | PipelineError::Cluster(_) => 3,
            PipelineError::Carbon(_) => 4,
            PipelineError::Stats(_) | PipelineError::MissingArtifact(_) => 5,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({ "error": self.kind(), "message": self.to_string() })
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KPolicy {
    Fixed(usize),
    Knee,
    Silhouette,
}

impl FromStr for KPolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "knee" | "elbow" => Ok(KPolicy::Knee),
            "silhouette" => Ok(KPolicy::Silhouette),
            n => n
                .parse::<usize>()
                .ok()
                .filter(|k| *k >= 1)
                .map(KPolicy::Fixed)
                .ok_or_else(|| format!("--k expects a positive integer, knee or silhouette, got {s:?}")),
        }
    }
}

impl fmt::Display for KPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KPolicy::Fixed(k) => write!(f, "{k}"),
            KPolicy::Knee => f.write_str("knee"),
            KPolicy::Silhouette => f.write_str("silhouette"),
        }
    }
}

/// `per-tx:<kwh>` or `cbeci:<share>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyModelSpec {
    PerTransaction(f64),
    CbeciShare(f64),
}

impl FromStr for EnergyModelSpec {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("--energy-model expects per-tx:<kwh> or cbeci:<share>, got {s:?}");
        let (kind, value) = s.trim().split_once(':').ok_or_else(bad)?;
        let v: f64 = value.trim().parse().map_err(|_| bad())?;
        match kind.trim() {
            "per-tx" | "per_tx" | "pertx" => Ok(EnergyModelSpec::PerTransaction(v)),
            "cbeci" => Ok(EnergyModelSpec::CbeciShare(v)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for EnergyModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnergyModelSpec::PerTransaction(v) => write!(f, "per-tx:{v}"),
            EnergyModelSpec::CbeciShare(v) => write!(f, "cbeci:{v}"),
        }
    }
}

/// Flat settings as they appear in a JSON config file or on the command line.
/// Every key is optional; [`ConfigFile::overlay`] lets flags win over the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub fuel_mix: Option<PathBuf>,
    pub btv: Option<PathBuf>,
    pub temp: Option<PathBuf>,
    pub temp_unit: Option<String>,
    pub cbeci: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub tz: Option<String>,
    pub resolution: Option<String>,
    pub method: Option<String>,
    pub k: Option<String>,
    pub energy_model: Option<String>,
    pub cbeci_share: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub reproducible: Option<bool>,
    pub reject_log: Option<PathBuf>,
    pub features: Option<String>,
    pub log_columns: Option<String>,
    pub run_id: Option<String>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident, $($f:ident),*) => {
        ConfigFile { $($f: $top.$f.or($base.$f)),* }
    };
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = ingest::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Keys set in `top` replace those of `self`.
    pub fn overlay(self, top: ConfigFile) -> ConfigFile {
        let base = self;
        overlay_fields!(
            base, top, fuel_mix, btv, temp, temp_unit, cbeci, factors, taxonomy, tz, resolution,
            method, k, energy_model, cbeci_share, seed, out, reproducible, reject_log, features,
            log_columns, run_id
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub fuel_mix: Option<PathBuf>,
    pub btv: Option<PathBuf>,
    pub temp: Option<PathBuf>,
    pub temp_unit: TempUnit,
    pub cbeci: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub tz: Tz,
    pub resolution: Resolution,
    pub method: Method,
    pub k: KPolicy,
    pub energy_model: EnergyModelSpec,
    /// Share of the reference consumption attributed to the region when
    /// building the comparison series.
    pub cbeci_share: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub reproducible: bool,
    pub reject_log: Option<PathBuf>,
    pub features: FeatureSpec,
    pub run_id: Option<String>,
}

fn usage<E: fmt::Display>(e: E) -> PipelineError {
    PipelineError::Usage(e.to_string())
}

impl PipelineConfig {
    /// Applies defaults. The output directory falls back to `$GRIDMIX_OUT`,
    /// then `gridmix-out`.
    pub fn resolve(c: ConfigFile) -> Result<Self> {
        let mut features = FeatureSpec::parse(c.features.as_deref().unwrap_or("3d")).map_err(usage)?;
        if let Some(cols) = &c.log_columns {
            let cols: Vec<Feature> = cols
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty() && *s != "none")
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(usage)?;
            features = features.with_log_columns(cols);
        }
        let out = c
            .out
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("gridmix-out"));
        let cfg = PipelineConfig {
            fuel_mix: c.fuel_mix,
            btv: c.btv,
            temp: c.temp,
            temp_unit: c
                .temp_unit
                .as_deref()
                .map(str::parse)
                .transpose()
                .map_err(usage)?
                .unwrap_or_default(),
            cbeci: c.cbeci,
            factors: c.factors,
            taxonomy: c.taxonomy,
            tz: c
                .tz
                .as_deref()
                .map(|s| s.parse::<Tz>().map_err(|_| usage(format!("unknown time zone {s:?}"))))
                .transpose()?
                .unwrap_or(Tz::UTC),
            resolution: c
                .resolution
                .as_deref()
                .map(str::parse)
                .transpose()
                .map_err(usage)?
                .unwrap_or(Resolution::Hourly),
            method: c
                .method
                .as_deref()
                .map(str::parse)
                .transpose()
                .map_err(usage)?
                .unwrap_or(Method::Kmeans),
            k: c.k.as_deref().map(str::parse).transpose().map_err(usage)?.unwrap_or(KPolicy::Knee),
            energy_model: c
                .energy_model
                .as_deref()
                .map(str::parse)
                .transpose()
                .map_err(usage)?
                .unwrap_or(EnergyModelSpec::PerTransaction(1.0)),
            cbeci_share: c.cbeci_share.unwrap_or(1.0),
            seed: c.seed.unwrap_or(0),
            out,
            reproducible: c.reproducible.unwrap_or(false),
            reject_log: c.reject_log,
            features,
            run_id: c.run_id,
        };
        if !(cfg.cbeci_share > 0.0 && cfg.cbeci_share <= 1.0) {
            return Err(usage(format!("cbeci_share must be in (0, 1], got {}", cfg.cbeci_share)));
        }
        Ok(cfg)
    }

    /// Settings echoed into the manifest. The output directory is left out
    /// so relocated runs stay byte-identical.
    pub fn snapshot(&self) -> Value {
        let p = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string());
        json!({
            "fuel_mix": p(&self.fuel_mix),
            "btv": p(&self.btv),
            "temp": p(&self.temp),
            "temp_unit": format!("{:?}", self.temp_unit).to_lowercase(),
            "cbeci": p(&self.cbeci),
            "factors": p(&self.factors),
            "taxonomy": p(&self.taxonomy),
            "tz": self.tz.name(),
            "resolution": self.resolution.as_str(),
            "method": self.method.as_str(),
            "k": self.k.to_string(),
            "energy_model": self.energy_model.to_string(),
            "cbeci_share": self.cbeci_share,
            "seed": self.seed,
            "reproducible": self.reproducible,
            "features": self.features.names(),
            "log_columns": self.features.log_columns.iter().map(|f| f.name()).collect::<Vec<_>>(),
        })
    }

    fn inputs(&self) -> Vec<(&'static str, &Option<PathBuf>)> {
        vec![
            ("fuel_mix", &self.fuel_mix),
            ("btv", &self.btv),
            ("temp", &self.temp),
            ("cbeci", &self.cbeci),
            ("factors", &self.factors),
            ("taxonomy", &self.taxonomy),
        ]
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            PipelineError::Ingest(IngestError::FileNotFound(path.display().to_string()))
        }
        _ => PipelineError::Io(format!("{}: {e}", path.display())),
    })?;
    Ok(sha256_hex(&bytes))
}

/// Content hashes of every supplied input, keyed by role.
fn input_hashes(cfg: &PipelineConfig) -> Result<BTreeMap<String, Value>> {
    let mut out = BTreeMap::new();
    for (name, path) in cfg.inputs() {
        if let Some(p) = path {
            out.insert(
                name.to_string(),
                json!({ "path": p.display().to_string(), "sha256": hash_file(p)? }),
            );
        }
    }
    Ok(out)
}

/// Run id: an explicit `--run-id`, else a hash of the input contents, the
/// time zone, the temperature unit and the seed. With no inputs given, the
/// single existing run under the output directory is reused.
pub fn run_id(cfg: &PipelineConfig) -> Result<String> {
    if let Some(id) = &cfg.run_id {
        return Ok(id.clone());
    }
    let hashes = input_hashes(cfg)?;
    if hashes.is_empty() {
        let runs: Vec<String> = std::fs::read_dir(&cfg.out)
            .map(|rd| {
                rd.filter_map(|e| e.ok())
                    .filter(|e| e.path().join("manifest.json").is_file())
                    .map(|e| e.file_name().to_string_lossy().into_owned())
                    .collect()
            })
            .unwrap_or_default();
        return match runs.as_slice() {
            [one] => Ok(one.clone()),
            _ => Err(usage(
                "no input paths given and the run is ambiguous; pass --run-id or the input flags",
            )),
        };
    }
    let mut h = Sha256::new();
    for (name, v) in &hashes {
        h.update(name.as_bytes());
        h.update(v["sha256"].as_str().unwrap_or_default().as_bytes());
    }
    h.update(cfg.tz.name().as_bytes());
    h.update(format!("{:?}", cfg.temp_unit).as_bytes());
    h.update(cfg.seed.to_le_bytes());
    Ok(hex::encode(h.finalize())[..16].to_string())
}

// ---------------------------------------------------------------------------
// Run directory and manifest

/// Artifact writer for one stage. Every write is hashed into the manifest.
pub struct Run {
    pub id: String,
    pub root: PathBuf,
    seed: u64,
    reproducible: bool,
    artifacts: BTreeMap<String, String>,
    started: Instant,
}

impl Run {
    pub fn open(cfg: &PipelineConfig) -> Result<Run> {
        let id = run_id(cfg)?;
        let root = cfg.out.join(&id);
        std::fs::create_dir_all(&root)?;
        Ok(Run {
            id,
            root,
            seed: cfg.seed,
            reproducible: cfg.reproducible,
            artifacts: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn meta(&self) -> ChartMeta {
        ChartMeta {
            run_id: self.id.clone(),
            seed: self.seed,
            generated_at: (!self.reproducible).then(Utc::now),
        }
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, bytes)?;
        self.artifacts.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    fn write_with<F>(&mut self, rel: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    pub fn read(&self, rel: &str) -> Result<Vec<u8>> {
        std::fs::read(self.path(rel)).map_err(|_| PipelineError::MissingArtifact(rel.to_string()))
    }

    /// Merges this stage into `manifest.json`.
    pub fn finish(self, stage: &str, cfg: &PipelineConfig, extra: Value) -> Result<Value> {
        let path = self.path("manifest.json");
        let mut manifest: Value = match std::fs::read(&path) {
            Ok(b) => serde_json::from_slice(&b)?,
            Err(_) => json!({}),
        };
        manifest["tool"] = json!("gridmix");
        manifest["version"] = json!(TOOL_VERSION);
        manifest["run_id"] = json!(self.id);
        manifest["seed"] = json!(self.seed);
        let inputs = input_hashes(cfg)?;
        if !inputs.is_empty() {
            manifest["inputs"] = json!(inputs);
        }
        if !manifest["stages"].is_object() {
            manifest["stages"] = json!({});
        }
        let mut entry = json!({ "config": cfg.snapshot() });
        if let (Value::Object(e), Value::Object(x)) = (&mut entry, extra) {
            e.extend(x);
        }
        manifest["stages"][stage] = entry;
        if !manifest["artifacts"].is_object() {
            manifest["artifacts"] = json!({});
        }
        for (rel, hash) in &self.artifacts {
            manifest["artifacts"][rel] = json!(hash);
        }
        if self.reproducible {
            if let Value::Object(m) = &mut manifest {
                m.remove("timings_ms");
            }
        } else {
            if !manifest["timings_ms"].is_object() {
                manifest["timings_ms"] = json!({});
            }
            manifest["timings_ms"][stage] = json!(self.started.elapsed().as_millis() as u64);
        }
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes)?;
        Ok(manifest)
    }
}

fn notice(msg: &str) {
    eprintln!("{}", json!({ "notice": msg }));
}

// ---------------------------------------------------------------------------
// Store

pub const STORE_HOURLY: &str = "store/hourly.csv";
pub const STORE_TAVG: &str = "store/tavg_daily.csv";
pub const STORE_CBECI: &str = "store/cbeci.csv";
pub const STORE_FILLS: &str = "store/fill_report.json";
pub const STORE_PROVENANCE: &str = "store/provenance.json";

fn load_taxonomy(cfg: &PipelineConfig) -> Result<FuelTaxonomy> {
    Ok(match &cfg.taxonomy {
        Some(p) => FuelTaxonomy::load(p)?,
        None => FuelTaxonomy::default_taxonomy(),
    })
}

fn load_factors(cfg: &PipelineConfig, taxonomy: &FuelTaxonomy) -> Result<EmissionFactorTable> {
    Ok(match &cfg.factors {
        Some(p) => carbon::load_emission_factors(p, taxonomy)?,
        None => {
            let t = EmissionFactorTable::default_table();
            t.check_complete(taxonomy)?;
            t
        }
    })
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| usage(format!("--{flag} is required for ingest")))
}

/// One series per fuel; a fuel absent from a record counts as 0 MW.
pub fn fuel_series(series: &FuelMixSeries) -> Vec<TimeSeries> {
    series
        .fuels()
        .into_iter()
        .map(|fuel| {
            TimeSeries::from_pairs(
                format!("{FUEL_PREFIX}{fuel}"),
                Resolution::Hourly,
                series
                    .records
                    .iter()
                    .map(|r| (r.timestamp, r.generation.get(&fuel).copied().unwrap_or(0.0))),
            )
        })
        .collect()
}

fn log_rejections(
    out: &mut Vec<u8>,
    source: &str,
    report: &ParseReport,
) -> std::io::Result<()> {
    for r in &report.rejections {
        let line = json!({
            "source": source,
            "line": r.line,
            "reason": r.error.to_string(),
            "kind": r.error.kind(),
        });
        serde_json::to_writer(&mut *out, &line)?;
        out.push(b'\n');
    }
    Ok(())
}

/// Parses every source, fills gaps and writes the aligned hourly store.
pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<Value> {
    let fuel_path = required(&cfg.fuel_mix, "fuel-mix")?;
    let btv_path = required(&cfg.btv, "btv")?;
    let mut run = Run::open(cfg)?;
    let taxonomy = load_taxonomy(cfg)?;
    let opts = ParseOptions { tz: cfg.tz };

    let fuel = ingest::read_fuel_mix(ingest::open(fuel_path)?, &taxonomy, opts)?;
    let btv = ingest::read_btv(ingest::open(btv_path)?, opts)?;
    let temp = cfg
        .temp
        .as_ref()
        .map(|p| ingest::read_temperature(ingest::open(p)?, cfg.temp_unit))
        .transpose()?;
    let cbeci = cfg
        .cbeci
        .as_ref()
        .map(|p| ingest::read_cbeci(ingest::open(p)?, opts))
        .transpose()?;

    let mut warnings = BTreeMap::new();
    let mut rejected = Vec::new();
    let mut reports: Vec<(&str, &ParseReport)> = vec![("fuel_mix", &fuel.report), ("btv", &btv.report)];
    if let Some(t) = &temp {
        reports.push(("temp", &t.report));
    }
    if let Some(c) = &cbeci {
        reports.push(("cbeci", &c.report));
    }
    for (name, r) in &reports {
        log_rejections(&mut rejected, name, r)?;
        if !r.warnings.is_empty() {
            warnings.insert(name.to_string(), r.warnings.clone());
        }
    }
    if let Some(p) = &cfg.reject_log {
        std::fs::write(p, &rejected)?;
    }
    let fuel = fuel.into_strict()?;
    let btv = btv.into_strict()?;
    let temp = temp.map(|t| t.into_strict()).transpose()?;
    let cbeci = cbeci.map(|c| c.into_strict()).transpose()?;

    let mut fills: Vec<FillReport> = Vec::new();
    let mut hourly_series = Vec::new();
    let btv_series = TimeSeries::from_pairs(
        BTV_COLUMN,
        Resolution::Hourly,
        btv.records.iter().map(|r| (r.timestamp, r.count as f64)),
    );
    for s in fuel_series(&fuel).iter().chain(std::iter::once(&btv_series)) {
        let (filled, report) = fill_gaps(s, timeseries::DEFAULT_MAX_FORWARD_FILL_HOURS)?;
        fills.push(report);
        hourly_series.push(filled);
    }
    let aggs = vec![Aggregator::Sum; hourly_series.len()];
    let table = align(&hourly_series, Resolution::Hourly, &aggs)?;
    run.write_with(STORE_HOURLY, |b| Ok(table.write_csv(b)?))?;
    let mut provenance = table.provenance();

    if let Some(t) = &temp {
        let s = TimeSeries::from_pairs(
            TAVG_COLUMN,
            Resolution::Daily,
            t.records.iter().map(|r| (r.date.and_time(chrono::NaiveTime::MIN).and_utc(), r.tavg)),
        );
        let (filled, report) = fill_gaps(&s, timeseries::DEFAULT_MAX_FORWARD_FILL_HOURS)?;
        fills.push(report);
        let daily = align(&[filled], Resolution::Daily, &[Aggregator::Mean])?;
        provenance.extend(daily.provenance());
        run.write_with(STORE_TAVG, |b| Ok(daily.write_csv(b)?))?;
    }
    if let Some(c) = &cbeci {
        run.write_with(STORE_CBECI, |b| Ok(ingest::write_energy(c, b)?))?;
    }
    run.write_json(STORE_FILLS, &fills)?;
    run.write_json(STORE_PROVENANCE, &provenance)?;

    let filled: usize = fills.iter().map(|f| f.entries.len()).sum();
    let extra = json!({
        "hourly_rows": table.len(),
        "gap_fills": filled,
        "warnings": warnings,
    });
    run.finish("ingest", cfg, extra)
}

/// Reads back the hourly store with its recorded provenance.
pub fn load_hourly(run: &Run) -> Result<AlignedTable> {
    let bytes = run.read(STORE_HOURLY)?;
    let prov: HashMap<String, timeseries::Provenance> = run
        .read(STORE_PROVENANCE)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .unwrap_or_default();
    Ok(AlignedTable::read_csv(bytes.as_slice(), Resolution::Hourly, Some(&prov))?)
}

fn load_tavg(run: &Run) -> Result<Option<TimeSeries>> {
    match run.read(STORE_TAVG) {
        Ok(bytes) => {
            let t = AlignedTable::read_csv(bytes.as_slice(), Resolution::Daily, None)?;
            Ok(t.to_series().into_iter().next())
        }
        Err(_) => Ok(None),
    }
}

fn load_cbeci(run: &Run) -> Result<Option<EnergySeries>> {
    match run.read(STORE_CBECI) {
        Ok(bytes) => Ok(Some(ingest::parse_cbeci(bytes.as_slice(), ParseOptions::default())?)),
        Err(_) => Ok(None),
    }
}

/// The hourly store at `resolution` (fuel and volume columns summed), with
/// TAVG averaged in when `with_tavg` is set.
pub fn table_at(run: &Run, resolution: Resolution, with_tavg: bool) -> Result<AlignedTable> {
    let hourly = load_hourly(run)?;
    let tavg = if with_tavg {
        Some(load_tavg(run)?.ok_or_else(|| PipelineError::MissingArtifact(STORE_TAVG.into()))?)
    } else {
        None
    };
    if resolution == Resolution::Hourly && tavg.is_none() {
        return Ok(hourly);
    }
    let mut series = hourly.to_series();
    let mut aggs: Vec<Aggregator> = hourly.columns.iter().map(|c| c.provenance.aggregator).collect();
    if let Some(t) = tavg {
        series.push(t);
        aggs.push(Aggregator::Mean);
    }
    Ok(align(&series, resolution, &aggs)?)
}

/// Rebuilds the fuel mix from the `fuel:*` columns of a store table.
pub fn fuel_mix_from_table(table: &AlignedTable, taxonomy: &FuelTaxonomy) -> FuelMixSeries {
    let fuel_cols: Vec<(&str, &[f64])> = table
        .columns
        .iter()
        .filter_map(|c| c.name.strip_prefix(FUEL_PREFIX).map(|f| (f, c.values.as_slice())))
        .collect();
    FuelMixSeries {
        records: table
            .keys
            .iter()
            .enumerate()
            .map(|(i, at)| FuelMixRecord {
                timestamp: *at,
                generation: fuel_cols.iter().map(|(f, v)| (f.to_string(), v[i])).collect(),
            })
            .collect(),
        taxonomy: taxonomy.clone(),
    }
}

pub fn btv_from_table(table: &AlignedTable) -> Result<TransactionVolumeSeries> {
    let col = table
        .column(BTV_COLUMN)
        .ok_or_else(|| PipelineError::MissingArtifact(format!("{STORE_HOURLY} column btv")))?;
    Ok(TransactionVolumeSeries {
        records: table
            .keys
            .iter()
            .zip(col)
            .map(|(at, v)| TxRecord {
                timestamp: *at,
                count: v.round().max(0.0) as u64,
            })
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Cluster

pub fn cluster_dir(resolution: Resolution, method: Method) -> String {
    format!("cluster/{}_{}", resolution.as_str(), method.as_str())
}

/// `model.json` of a clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub run_id: String,
    pub seed: u64,
    pub resolution: Resolution,
    pub k_policy: String,
    pub features: Vec<String>,
    pub rows: usize,
    pub model: ClusterModel,
    pub populations: Vec<usize>,
    /// Centroids mapped back through the normalization (log2 kept).
    pub centroids_raw: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub knee: Option<KneeResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub silhouette_scores: Option<Vec<(usize, f64)>>,
}

fn resolve_k(
    run: &mut Run,
    dir: &str,
    cfg: &PipelineConfig,
    m: &Matrix,
    params: &ClusterParams,
) -> Result<(usize, Option<KneeResult>, Option<Vec<(usize, f64)>>)> {
    if cfg.method == Method::Meanshift {
        return Ok((0, None, None));
    }
    let (k_min, k_max) = clustering::DEFAULT_K_SWEEP;
    match cfg.k {
        KPolicy::Fixed(k) => Ok((k, None, None)),
        KPolicy::Knee => {
            let curve = clustering::sse_curve(m, k_min, k_max, cfg.method, params)?;
            let knee = clustering::knee_locate(&curve);
            let chosen = knee.as_ref().ok().map(|r| r.chosen_k);
            run.write(
                &format!("{dir}/knee.svg"),
                report::knee_svg(&curve, chosen, &run.meta()).as_bytes(),
            )?;
            let knee = knee?;
            Ok((knee.chosen_k, Some(knee), None))
        }
        KPolicy::Silhouette => {
            let hi = k_max.min(m.rows().saturating_sub(1));
            let (k, scores) = clustering::select_k_silhouette(m, 2, hi, cfg.method, params)?;
            Ok((k, None, Some(scores)))
        }
    }
}

fn scatter_for(fm: &FeatureMatrix, model: &ClusterModel, meta: &ChartMeta, title: &str) -> String {
    let centroids = model.centroid_matrix();
    match fm.columns.len() {
        3 => {
            let label = format!(
                "orthographic view (azimuth {}°, elevation {}°) of {}",
                report::AZIMUTH_DEG,
                report::ELEVATION_DEG,
                fm.columns.join(", ")
            );
            report::scatter_svg(
                title,
                &label,
                "projected height",
                &report::project_3d(&fm.values),
                &model.assignments,
                &report::project_3d(&centroids),
                meta,
            )
        }
        1 => {
            let pts: Vec<(f64, f64)> = fm.values.iter_rows().enumerate().map(|(i, r)| (i as f64, r[0])).collect();
            let cs: Vec<(f64, f64)> = centroids.iter_rows().map(|r| (0.0, r[0])).collect();
            report::scatter_svg(title, "bucket index", &fm.columns[0], &pts, &model.assignments, &cs, meta)
        }
        _ => {
            let pts: Vec<(f64, f64)> = fm.values.iter_rows().map(|r| (r[0], r[1])).collect();
            let cs: Vec<(f64, f64)> = centroids.iter_rows().map(|r| (r[0], r[1])).collect();
            report::scatter_svg(
                title,
                &format!("{} (normalized)", fm.columns[0]),
                &format!("{} (normalized)", fm.columns[1]),
                &pts,
                &model.assignments,
                &cs,
                meta,
            )
        }
    }
}

/// Builds features at the configured resolution, resolves k, fits and
/// writes the clustering artifacts.
pub fn cmd_cluster(cfg: &PipelineConfig) -> Result<Value> {
    let mut run = Run::open(cfg)?;
    let taxonomy = load_taxonomy(cfg)?;
    let needs_factors = cfg.features.features.contains(&Feature::Footprint);
    let factors = if needs_factors { Some(load_factors(cfg, &taxonomy)?) } else { None };
    let with_tavg = cfg.features.features.contains(&Feature::Tavg);
    let table = table_at(&run, cfg.resolution, with_tavg)?;
    let fm = preprocess::build_features(&table, &taxonomy, &cfg.features, factors.as_ref())?;
    let params = ClusterParams {
        seed: cfg.seed,
        ..ClusterParams::default()
    };
    let dir = cluster_dir(cfg.resolution, cfg.method);
    let (k, knee, sil_scores) = resolve_k(&mut run, &dir, cfg, &fm.values, &params)?;
    let model = clustering::fit(cfg.method, &fm.values, k, &params)?.with_silhouette(&fm.values)?;
    let centroids_raw = fm.denormalize_points(&model.centroid_matrix()).to_rows();

    run.write_with(&format!("{dir}/features.csv"), |b| Ok(fm.write_csv(b)?))?;
    run.write_json(
        &format!("{dir}/features.json"),
        &json!({
            "run_id": run.id,
            "seed": cfg.seed,
            "resolution": cfg.resolution.as_str(),
            "columns": fm.columns,
            "transforms": fm.transforms,
            "params": fm.params,
            "rows": fm.rows(),
        }),
    )?;
    let keys: Vec<String> = fm.keys.iter().map(|k| format_timestamp(*k)).collect();
    run.write_with(&format!("{dir}/assignments.csv"), |b| {
        Ok(model.write_assignments_csv(&keys, b)?)
    })?;
    let title = format!(
        "{} clusters, {} {} (k={})",
        cfg.resolution.as_str(),
        cfg.method.as_str(),
        fm.columns.join(" / "),
        model.k
    );
    run.write(&format!("{dir}/scatter.svg"), scatter_for(&fm, &model, &run.meta(), &title).as_bytes())?;
    let artifact = ModelArtifact {
        run_id: run.id.clone(),
        seed: cfg.seed,
        resolution: cfg.resolution,
        k_policy: cfg.k.to_string(),
        features: fm.columns.clone(),
        rows: fm.rows(),
        populations: model.populations(),
        model,
        centroids_raw,
        knee,
        silhouette_scores: sil_scores,
    };
    run.write_json(&format!("{dir}/model.json"), &artifact)?;
    let extra = json!({ "k": artifact.model.k, "dir": dir });
    run.finish(&dir, cfg, extra)
}

// ---------------------------------------------------------------------------
// Carbon

pub const CARBON_SUMMARY: &str = "carbon/summary.json";
pub const FOOTPRINT_HOURLY: &str = "carbon/btc_footprint_hourly.csv";

fn resample_footprint(
    fp: &CarbonFootprintSeries,
    resolution: Resolution,
) -> Result<CarbonFootprintSeries> {
    if resolution == Resolution::Hourly || fp.records.is_empty() {
        return Ok(carbon::cumulative(fp));
    }
    let s = fp.to_series("kg", Resolution::Hourly);
    let r = timeseries::resample(&s, resolution, Aggregator::Sum)?;
    Ok(carbon::cumulative(&CarbonFootprintSeries::from_series(&r.series)))
}

fn csv_bytes(fp: &CarbonFootprintSeries) -> Result<Vec<u8>> {
    let mut b = Vec::new();
    fp.write_csv(&mut b)?;
    Ok(b)
}

/// Min-max scaling for overlaying series of different units on one chart.
fn unit_scale(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Daily reference emissions: reference energy × share × the day's mean grid
/// intensity. Days without a complete fuel mix are skipped.
fn reference_footprint(
    cbeci: &EnergySeries,
    share: f64,
    fuel_mix: &FuelMixSeries,
    factors: &EmissionFactorTable,
) -> Result<CarbonFootprintSeries> {
    let mut by_day: BTreeMap<DateTime<Utc>, (f64, usize)> = BTreeMap::new();
    for rec in &fuel_mix.records {
        let i = carbon::grid_carbon_intensity(rec, factors)?;
        let e = by_day.entry(Resolution::Daily.bucket_start(rec.timestamp)).or_default();
        e.0 += i;
        e.1 += 1;
    }
    Ok(CarbonFootprintSeries::from_pairs(cbeci.records.iter().filter_map(|r| {
        let day = Resolution::Daily.bucket_start(r.timestamp);
        by_day
            .get(&day)
            .filter(|(_, n)| *n == 24)
            .map(|(sum, n)| (day, r.kwh * share * (sum / *n as f64) / 1000.0))
    })))
}

/// Per-class grid emissions, the Bitcoin footprint, cumulative series, trend
/// charts and (with a reference series) the divergence report.
pub fn cmd_carbon(cfg: &PipelineConfig) -> Result<Value> {
    let mut run = Run::open(cfg)?;
    let taxonomy = load_taxonomy(cfg)?;
    let factors = load_factors(cfg, &taxonomy)?;
    let hourly = load_hourly(&run)?;
    let fuel_mix = fuel_mix_from_table(&hourly, &taxonomy);
    let btv = btv_from_table(&hourly)?;
    let cbeci = load_cbeci(&run)?;

    let model = match cfg.energy_model {
        EnergyModelSpec::PerTransaction(kwh_per_tx) => EnergyModel::PerTransaction { kwh_per_tx },
        EnergyModelSpec::CbeciShare(region_share) => EnergyModel::CbeciShare {
            cbeci: cbeci.clone().ok_or_else(|| {
                PipelineError::Carbon(CarbonError::InvalidModel(
                    "cbeci energy model needs --cbeci at ingest".into(),
                ))
            })?,
            region_share,
        },
    };
    let energy = carbon::btc_energy(&btv, &model)?;
    let fp_hourly = carbon::cumulative(&carbon::btc_footprint(&energy, &fuel_mix, &factors)?);
    let (cr, gr) = carbon::class_emissions(&fuel_mix, &taxonomy, &factors)?;
    let res = cfg.resolution;
    let tag = res.as_str();

    run.write(FOOTPRINT_HOURLY, &csv_bytes(&fp_hourly)?)?;
    let fp = resample_footprint(&fp_hourly, res)?;
    if res != Resolution::Hourly {
        run.write(&format!("carbon/btc_footprint_{tag}.csv"), &csv_bytes(&fp)?)?;
    }
    let cr_r = resample_footprint(&cr, res)?;
    let gr_r = resample_footprint(&gr, res)?;
    run.write(&format!("carbon/emissions_carbon_rich_{tag}.csv"), &csv_bytes(&cr_r)?)?;
    run.write(&format!("carbon/emissions_green_{tag}.csv"), &csv_bytes(&gr_r)?)?;

    // trend charts at daily granularity or coarser so they stay legible
    let chart_res = res.max(Resolution::Daily);
    let fp_c = resample_footprint(&fp_hourly, chart_res)?;
    let cr_c = resample_footprint(&cr, chart_res)?;
    let gr_c = resample_footprint(&gr, chart_res)?;
    let keys: Vec<DateTime<Utc>> = fp_c.records.iter().map(|r| r.bucket).collect();
    let meta = run.meta();
    run.write(
        "carbon/cumulative.svg",
        report::line_svg(
            "Cumulative Bitcoin transaction footprint",
            "kg CO2eq",
            &keys,
            &[("cumulative".into(), fp_c.cumulative.clone().unwrap_or_default())],
            &meta,
        )
        .as_bytes(),
    )?;
    run.write(
        "carbon/footprint_trend.svg",
        report::line_svg(
            &format!("Bitcoin transaction footprint per {}", chart_res.as_str()),
            "kg CO2eq",
            &keys,
            &[("footprint".into(), fp_c.values())],
            &meta,
        )
        .as_bytes(),
    )?;
    let btv_series = TimeSeries::from_pairs(
        BTV_COLUMN,
        Resolution::Hourly,
        btv.records.iter().map(|r| (r.timestamp, r.count as f64)),
    );
    let btv_c = timeseries::resample(&btv_series, chart_res, Aggregator::Sum)?.series;
    run.write(
        "carbon/volume_vs_emission.svg",
        report::line_svg(
            "Transaction volume vs. emission (min-max scaled)",
            "scaled",
            &keys,
            &[
                ("btv".into(), unit_scale(&btv_c.values())),
                ("footprint".into(), unit_scale(&fp_c.values())),
            ],
            &meta,
        )
        .as_bytes(),
    )?;
    run.write(
        "carbon/class_emissions.svg",
        report::line_svg(
            "Grid emissions by fuel class",
            "kg CO2eq",
            &keys,
            &[
                ("carbon-rich".into(), cr_c.values()),
                ("green-renewable".into(), gr_c.values()),
            ],
            &meta,
        )
        .as_bytes(),
    )?;

    let divergence = match &cbeci {
        None => {
            notice("no reference consumption series in the store; divergence step skipped");
            Value::Null
        }
        Some(c) => {
            let reference = reference_footprint(c, cfg.cbeci_share, &fuel_mix, &factors)?;
            let ours_daily = resample_footprint(&fp_hourly, Resolution::Daily)?;
            let rep = carbon::compare_cbeci(&ours_daily, &reference, DipRule::default())?;
            let keys: Vec<DateTime<Utc>> = rep.buckets.iter().map(|b| b.bucket).collect();
            let index: HashMap<DateTime<Utc>, usize> =
                keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
            let bands: Vec<(usize, usize)> =
                rep.dips.iter().map(|d| (index[&d.start], index[&d.end])).collect();
            let svg = report::line_svg(
                "Footprint vs. reference-derived footprint (daily)",
                "kg CO2eq",
                &keys,
                &[
                    ("ours".into(), rep.buckets.iter().map(|b| b.ours_kg).collect()),
                    ("reference".into(), rep.buckets.iter().map(|b| b.reference_kg).collect()),
                ],
                &meta,
            );
            run.write("carbon/divergence.svg", report::with_bands(&svg, keys.len(), &bands).as_bytes())?;
            let v = json!({
                "run_id": run.id,
                "seed": cfg.seed,
                "region_share": cfg.cbeci_share,
                "report": rep,
            });
            run.write_json("carbon/divergence.json", &v)?;
            json!({ "pearson_r": rep.pearson_r, "dips": rep.dips.len(), "overlap": rep.overlap })
        }
    };

    let summary = json!({
        "run_id": run.id,
        "seed": cfg.seed,
        "resolution": tag,
        "energy_model": cfg.energy_model.to_string(),
        "factors_version": factors.version,
        "factors_citation": factors.citation,
        "btc_energy_kwh": energy.records.iter().map(|r| r.kwh).sum::<f64>(),
        "btc_total_kg": fp_hourly.total(),
        "carbon_rich_total_kg": cr.total(),
        "green_total_kg": gr.total(),
        "divergence": divergence,
    });
    run.write_json(CARBON_SUMMARY, &summary)?;
    run.finish("carbon", cfg, json!({}))
}

// ---------------------------------------------------------------------------
// Report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterShare {
    pub cluster: usize,
    pub population: usize,
    pub share: f64,
    pub carbon_rich: f64,
    pub green: f64,
    pub class: String,
}

/// Names every cluster by its raw centroid: carbon-rich above green is the
/// high-carbon/low-green class.
pub fn cluster_shares(model: &ModelArtifact) -> Option<Vec<ClusterShare>> {
    let ci = model.features.iter().position(|f| f == Feature::CarbonRichMw.name())?;
    let gi = model.features.iter().position(|f| f == Feature::GreenMw.name())?;
    let n: usize = model.populations.iter().sum();
    Some(
        model
            .centroids_raw
            .iter()
            .zip(&model.populations)
            .enumerate()
            .map(|(i, (c, p))| ClusterShare {
                cluster: i,
                population: *p,
                share: *p as f64 / n.max(1) as f64,
                carbon_rich: c[ci],
                green: c[gi],
                class: if c[ci] > c[gi] { HIGH_CARBON_CLASS } else { LOW_CARBON_CLASS }.into(),
            })
            .collect(),
    )
}

fn correlations(table: &AlignedTable, taxonomy: &FuelTaxonomy, fp: &[f64], tavg: Option<&[f64]>) -> Result<CorrelationMatrix> {
    let (carbon, green) = preprocess::class_columns(table, taxonomy)?;
    let total: Vec<f64> = carbon.iter().zip(&green).map(|(a, b)| a + b).collect();
    let btv = table
        .column(BTV_COLUMN)
        .ok_or_else(|| PipelineError::MissingArtifact(format!("{STORE_HOURLY} column btv")))?
        .to_vec();
    let mut names = vec!["carbon_rich_mw", "green_mw", "total_mw", "btv"];
    let mut cols = vec![carbon, green, total, btv];
    if let Some(t) = tavg {
        names.push("tavg");
        cols.push(t.to_vec());
    }
    names.push("btc_footprint_kg");
    cols.push(fp.to_vec());
    let names: Vec<String> = names.into_iter().map(String::from).collect();
    Ok(stats::correlation_matrix(&names, &cols)?)
}

fn read_footprint_csv(bytes: &[u8]) -> Result<Vec<(DateTime<Utc>, f64)>> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| PipelineError::Io(e.to_string()))?;
        let at = ingest::parse_timestamp(&row[0], Tz::UTC, false)
            .ok_or_else(|| PipelineError::Io(format!("bad bucket {:?}", &row[0])))?;
        let kg: f64 = row[1].parse().map_err(|_| PipelineError::Io(format!("bad value {:?}", &row[1])))?;
        out.push((at, kg));
    }
    Ok(out)
}

fn md_r(v: Option<f64>) -> String {
    v.map(|r| format!("{r:.4}")).unwrap_or_else(|| "n/a".into())
}

/// Consolidated findings: correlation tables and heatmaps, cluster shares
/// per class and footprint totals.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<Value> {
    let mut run = Run::open(cfg)?;
    let taxonomy = load_taxonomy(cfg)?;
    let dir = cluster_dir(cfg.resolution, cfg.method);
    let model_path = format!("{dir}/model.json");
    let model: ModelArtifact = serde_json::from_slice(&run.read(&model_path)?)?;
    let carbon_summary: Value = serde_json::from_slice(&run.read(CARBON_SUMMARY)?)?;
    let fp_hourly = read_footprint_csv(&run.read(FOOTPRINT_HOURLY)?)?;

    let hourly = load_hourly(&run)?;
    let fp_by: HashMap<DateTime<Utc>, f64> = fp_hourly.iter().copied().collect();
    let fp_h: Vec<f64> = hourly.keys.iter().map(|k| fp_by.get(k).copied().unwrap_or(0.0)).collect();
    let corr_hourly = correlations(&hourly, &taxonomy, &fp_h, None)?;

    let has_tavg = run.path(STORE_TAVG).is_file();
    let daily = table_at(&run, Resolution::Daily, has_tavg)?;
    let mut fp_daily_map: BTreeMap<DateTime<Utc>, f64> = BTreeMap::new();
    for (at, kg) in &fp_hourly {
        *fp_daily_map.entry(Resolution::Daily.bucket_start(*at)).or_default() += kg;
    }
    let fp_d: Vec<f64> = daily.keys.iter().map(|k| fp_daily_map.get(k).copied().unwrap_or(0.0)).collect();
    let corr_daily = correlations(&daily, &taxonomy, &fp_d, daily.column(TAVG_COLUMN))?;

    let meta = run.meta();
    for (name, m) in [("hourly", &corr_hourly), ("daily", &corr_daily)] {
        run.write_with(&format!("report/correlations_{name}.csv"), |b| Ok(m.write_csv(b)?))?;
        run.write(
            &format!("report/heatmap_{name}.svg"),
            report::heatmap_svg(&format!("Pearson correlation ({name})"), m, &meta).as_bytes(),
        )?;
    }

    let shares = cluster_shares(&model);
    let class_shares = shares.as_ref().map(|s| {
        let high: f64 = s.iter().filter(|c| c.class == HIGH_CARBON_CLASS).map(|c| c.share).sum();
        let low: f64 = s.iter().filter(|c| c.class == LOW_CARBON_CLASS).map(|c| c.share).sum();
        json!({ HIGH_CARBON_CLASS: high, LOW_CARBON_CLASS: low })
    });
    // the cluster with the largest carbon-rich surplus over green
    let dominant = shares.as_ref().and_then(|s| {
        s.iter()
            .filter(|c| c.class == HIGH_CARBON_CLASS)
            .max_by(|a, b| (a.carbon_rich - a.green).total_cmp(&(b.carbon_rich - b.green)))
            .map(|c| json!({ "cluster": c.cluster, "share": c.share }))
    });
    let key = json!({
        "btv_vs_carbon_rich_hourly": corr_hourly.get("btv", "carbon_rich_mw"),
        "btv_vs_carbon_rich_daily": corr_daily.get("btv", "carbon_rich_mw"),
        "tavg_vs_total_daily": corr_daily.get("tavg", "total_mw"),
        "btv_vs_tavg_daily": corr_daily.get("btv", "tavg"),
        "total_vs_carbon_rich_daily": corr_daily.get("total_mw", "carbon_rich_mw"),
    });
    let summary = json!({
        "run_id": run.id,
        "seed": cfg.seed,
        "tool_version": TOOL_VERSION,
        "clusters": {
            "resolution": model.resolution.as_str(),
            "method": model.model.method.as_str(),
            "k": model.model.k,
            "k_policy": model.k_policy,
            "features": model.features,
            "rows": model.rows,
            "sse": model.model.sse,
            "silhouette": model.model.silhouette,
            "populations": model.populations,
            "per_cluster": shares,
            "class_shares": class_shares,
            "dominant_high_carbon": dominant,
        },
        "correlations": {
            "hourly": corr_hourly,
            "daily": corr_daily,
            "key": key,
        },
        "footprint": {
            "energy_model": carbon_summary["energy_model"],
            "factors_version": carbon_summary["factors_version"],
            "btc_energy_kwh": carbon_summary["btc_energy_kwh"],
            "btc_total_kg": carbon_summary["btc_total_kg"],
            "carbon_rich_total_kg": carbon_summary["carbon_rich_total_kg"],
            "green_total_kg": carbon_summary["green_total_kg"],
        },
        "divergence": carbon_summary["divergence"],
    });
    run.write_json("report/summary.json", &summary)?;

    let mut md = String::new();
    md.push_str(&format!("# gridmix run {}\n\nseed {}, tool {}\n\n", run.id, cfg.seed, TOOL_VERSION));
    md.push_str(&format!(
        "## Clusters\n\n{} {} on {} rows, features {}, k = {} ({})\n\n",
        model.resolution.as_str(),
        model.model.method.as_str(),
        model.rows,
        model.features.join(", "),
        model.model.k,
        model.k_policy
    ));
    if let Some(s) = &shares {
        md.push_str("| cluster | population | share | carbon-rich | green | class |\n|---|---|---|---|---|---|\n");
        for c in s {
            md.push_str(&format!(
                "| {} | {} | {:.1}% | {:.0} | {:.0} | {} |\n",
                c.cluster,
                c.population,
                c.share * 100.0,
                c.carbon_rich,
                c.green,
                c.class
            ));
        }
        md.push('\n');
    }
    md.push_str("## Correlations\n\n");
    md.push_str(&format!(
        "- BTV vs. carbon-rich (hourly): {}\n- TAVG vs. total generation (daily): {}\n- BTV vs. TAVG (daily): {}\n- total generation vs. carbon-rich (daily): {}\n\n",
        md_r(corr_hourly.get("btv", "carbon_rich_mw")),
        md_r(corr_daily.get("tavg", "total_mw")),
        md_r(corr_daily.get("btv", "tavg")),
        md_r(corr_daily.get("total_mw", "carbon_rich_mw")),
    ));
    md.push_str(&format!(
        "## Footprint\n\nenergy model {}, factors {}\n\n- Bitcoin transactions: {:.1} kg CO2eq\n- carbon-rich generation: {:.1} kg CO2eq\n- green-renewable generation: {:.1} kg CO2eq\n",
        carbon_summary["energy_model"].as_str().unwrap_or(""),
        carbon_summary["factors_version"].as_str().unwrap_or(""),
        carbon_summary["btc_total_kg"].as_f64().unwrap_or(f64::NAN),
        carbon_summary["carbon_rich_total_kg"].as_f64().unwrap_or(f64::NAN),
        carbon_summary["green_total_kg"].as_f64().unwrap_or(f64::NAN),
    ));
    run.write("report/summary.md", md.as_bytes())?;
    run.finish("report", cfg, json!({}))
}

/// Runs one stage by name.
pub fn run_stage(stage: &str, cfg: &PipelineConfig) -> Result<Value> {
    match stage {
        "ingest" => cmd_ingest(cfg),
        "cluster" => cmd_cluster(cfg),
        "carbon" => cmd_carbon(cfg),
        "report" => cmd_report(cfg),
        other => Err(usage(format!("unknown stage {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_policy_parsing() {
        assert_eq!("3".parse::<KPolicy>().unwrap(), KPolicy::Fixed(3));
        assert_eq!("knee".parse::<KPolicy>().unwrap(), KPolicy::Knee);
        assert_eq!("silhouette".parse::<KPolicy>().unwrap(), KPolicy::Silhouette);
        assert!("0".parse::<KPolicy>().is_err());
        assert!("many".parse::<KPolicy>().is_err());
    }

    #[test]
    fn energy_model_parsing() {
        assert_eq!(
            "per-tx:1.5".parse::<EnergyModelSpec>().unwrap(),
            EnergyModelSpec::PerTransaction(1.5)
        );
        assert_eq!("cbeci:0.1".parse::<EnergyModelSpec>().unwrap(), EnergyModelSpec::CbeciShare(0.1));
        assert!("cbeci".parse::<EnergyModelSpec>().is_err());
        assert!("solar:1".parse::<EnergyModelSpec>().is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = ConfigFile {
            seed: Some(1),
            method: Some("kmeans".into()),
            ..Default::default()
        };
        let flags = ConfigFile {
            seed: Some(9),
            ..Default::default()
        };
        let merged = file.overlay(flags);
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.method.as_deref(), Some("kmeans"));
        let cfg = PipelineConfig::resolve(merged).unwrap();
        assert_eq!(cfg.k, KPolicy::Knee);
        assert_eq!(cfg.resolution, Resolution::Hourly);
    }

    #[test]
    fn unknown_config_key_rejected() {
        assert!(serde_json::from_str::<ConfigFile>(r#"{"sede": 1}"#).is_err());
    }

    #[test]
    fn error_kinds_and_codes() {
        let e = PipelineError::Ingest(IngestError::FileNotFound("x".into()));
        assert_eq!(e.kind(), "FileNotFound");
        assert_eq!(e.exit_code(), 1);
        let e = PipelineError::Cluster(ClusterError::NoKnee);
        assert_eq!(e.kind(), "NoKnee");
        assert_eq!(e.exit_code(), 3);
        let e = PipelineError::Carbon(CarbonError::EmptyOverlap);
        assert_eq!(e.kind(), "EmptyOverlap");
        assert_eq!(e.exit_code(), 4);
        assert_eq!(PipelineError::MissingArtifact("a".into()).exit_code(), 5);
    }
}
