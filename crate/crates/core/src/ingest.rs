//! CSV ingestion for fuel mix, transaction volume, temperature and reference
//! energy series, plus the two-class fuel taxonomy.
//!
//! Every reader has a lenient form (`read_*`) that returns the parsed series
//! together with a [`ParseReport`] listing each rejected row, and a strict
//! form (`parse_*`) that fails on the first rejection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, TimeZone, Timelike, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_TAXONOMY: &str = include_str!("../data/taxonomy.json");

const REQUIRED_CARBON_RICH: [&str; 3] = ["petroleum", "natural gas", "coal"];
const REQUIRED_GREEN: [&str; 4] = ["nuclear", "solar", "hydro", "wind"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("unexpected header: expected {expected}, found {found}")]
    BadHeader { expected: String, found: String },
    #[error("unknown fuel: {0}")]
    UnknownFuel(String),
    #[error("line {line}: timestamp not after the previous row")]
    NonMonotonicTimestamp { line: u64 },
    #[error("line {line}: duplicate timestamp")]
    DuplicateTimestamp { line: u64 },
    #[error("line {line}: fuel {fuel} repeated within the same hour")]
    DuplicateFuelEntry { line: u64, fuel: String },
    #[error("line {line}: negative value")]
    NegativeValue { line: u64 },
    #[error("line {line}: malformed row ({detail})")]
    MalformedRow { line: u64, detail: String },
    #[error("fuel {0} is listed under both classes")]
    ConflictingFuelClass(String),
    #[error("taxonomy lacks required fuel {0}")]
    MissingRequiredFuel(String),
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),
}

impl IngestError {
    pub fn kind(&self) -> &'static str {
        match self {
            IngestError::Io(_) => "Io",
            IngestError::FileNotFound(_) => "FileNotFound",
            IngestError::BadHeader { .. } => "BadHeader",
            IngestError::UnknownFuel(_) => "UnknownFuel",
            IngestError::NonMonotonicTimestamp { .. } => "NonMonotonicTimestamp",
            IngestError::DuplicateTimestamp { .. } => "DuplicateTimestamp",
            IngestError::DuplicateFuelEntry { .. } => "DuplicateFuelEntry",
            IngestError::NegativeValue { .. } => "NegativeValue",
            IngestError::MalformedRow { .. } => "MalformedRow",
            IngestError::ConflictingFuelClass(_) => "ConflictingFuelClass",
            IngestError::MissingRequiredFuel(_) => "MissingRequiredFuel",
            IngestError::InvalidTaxonomy(_) => "InvalidTaxonomy",
        }
    }
}

impl From<csv::Error> for IngestError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        match e.into_kind() {
            csv::ErrorKind::Io(io) => IngestError::Io(io.to_string()),
            other => IngestError::MalformedRow {
                line,
                detail: format!("{other:?}"),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, IngestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuelClass {
    CarbonRich,
    GreenRenewable,
}

impl fmt::Display for FuelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FuelClass::CarbonRich => f.write_str("carbon_rich"),
            FuelClass::GreenRenewable => f.write_str("green_renewable"),
        }
    }
}

/// Lowercases and trims a fuel name.
pub fn normalize_fuel_name(name: &str) -> String {
    name.trim().to_lowercase()
}

#[derive(Debug, Serialize, Deserialize)]
struct TaxonomyFile {
    source: String,
    carbon_rich: Vec<String>,
    green_renewable: Vec<String>,
}

/// Mapping from normalized fuel name to its class.
#[derive(Debug, Clone, PartialEq)]
pub struct FuelTaxonomy {
    source: String,
    classes: BTreeMap<String, FuelClass>,
}

impl FuelTaxonomy {
    /// The taxonomy shipped with the crate (`data/taxonomy.json`).
    pub fn default_taxonomy() -> Self {
        Self::from_json(DEFAULT_TAXONOMY).expect("shipped taxonomy is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TaxonomyFile =
            serde_json::from_str(text).map_err(|e| IngestError::InvalidTaxonomy(e.to_string()))?;
        let mut classes = BTreeMap::new();
        for (names, class) in [
            (&file.carbon_rich, FuelClass::CarbonRich),
            (&file.green_renewable, FuelClass::GreenRenewable),
        ] {
            for name in names {
                let key = normalize_fuel_name(name);
                if key.is_empty() {
                    return Err(IngestError::InvalidTaxonomy("empty fuel name".into()));
                }
                match classes.insert(key.clone(), class) {
                    Some(prev) if prev != class => {
                        return Err(IngestError::ConflictingFuelClass(key))
                    }
                    _ => {}
                }
            }
        }
        let taxonomy = FuelTaxonomy {
            source: file.source,
            classes,
        };
        taxonomy.check_required()?;
        Ok(taxonomy)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?)
    }

    fn check_required(&self) -> Result<()> {
        for (names, class) in [
            (&REQUIRED_CARBON_RICH[..], FuelClass::CarbonRich),
            (&REQUIRED_GREEN[..], FuelClass::GreenRenewable),
        ] {
            for name in names {
                if self.classes.get(*name) != Some(&class) {
                    return Err(IngestError::MissingRequiredFuel((*name).to_string()));
                }
            }
        }
        Ok(())
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn classify(&self, name: &str) -> Result<FuelClass> {
        let key = normalize_fuel_name(name);
        self.classes
            .get(&key)
            .copied()
            .ok_or(IngestError::UnknownFuel(key))
    }

    /// Fuel names in sorted order.
    pub fn fuels(&self) -> impl Iterator<Item = (&str, FuelClass)> {
        self.classes.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.classes.contains_key(&normalize_fuel_name(name))
    }

    pub fn to_json(&self) -> String {
        let mut file = TaxonomyFile {
            source: self.source.clone(),
            carbon_rich: vec![],
            green_renewable: vec![],
        };
        for (name, class) in &self.classes {
            match class {
                FuelClass::CarbonRich => file.carbon_rich.push(name.clone()),
                FuelClass::GreenRenewable => file.green_renewable.push(name.clone()),
            }
        }
        serde_json::to_string_pretty(&file).expect("taxonomy serializes")
    }
}

pub fn classify_fuel(name: &str, taxonomy: &FuelTaxonomy) -> Result<FuelClass> {
    taxonomy.classify(name)
}

// ---------------------------------------------------------------------------
// Series types

#[derive(Debug, Clone, PartialEq)]
pub struct FuelMixRecord {
    pub timestamp: DateTime<Utc>,
    pub generation: BTreeMap<String, f64>,
}

/// Per-class generation of a single record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassTotals {
    pub carbon_rich_mw: f64,
    pub green_mw: f64,
    pub total_mw: f64,
}

impl FuelMixRecord {
    /// Partitions the record's fuels by class. `total_mw` is the sum of the
    /// two class subtotals, so the three values are exactly consistent.
    pub fn class_totals(&self, taxonomy: &FuelTaxonomy) -> Result<ClassTotals> {
        let mut carbon_rich_mw = 0.0;
        let mut green_mw = 0.0;
        for (fuel, mw) in &self.generation {
            match taxonomy.classify(fuel)? {
                FuelClass::CarbonRich => carbon_rich_mw += mw,
                FuelClass::GreenRenewable => green_mw += mw,
            }
        }
        Ok(ClassTotals {
            carbon_rich_mw,
            green_mw,
            total_mw: carbon_rich_mw + green_mw,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuelMixSeries {
    pub records: Vec<FuelMixRecord>,
    pub taxonomy: FuelTaxonomy,
}

impl FuelMixSeries {
    /// Every fuel that appears in at least one record, sorted.
    pub fn fuels(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self
            .records
            .iter()
            .flat_map(|r| r.generation.keys())
            .collect();
        set.into_iter().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxRecord {
    pub timestamp: DateTime<Utc>,
    pub count: u64,
}

/// Transaction counts (BTV).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransactionVolumeSeries {
    pub records: Vec<TxRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureRecord {
    pub date: NaiveDate,
    /// Degrees Celsius.
    pub tavg: f64,
}

/// Daily average temperature (TAVG), stored in °C.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TemperatureSeries {
    pub records: Vec<TemperatureRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRecord {
    pub timestamp: DateTime<Utc>,
    pub kwh: f64,
}

/// Sampling interval detected on an energy series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Granularity {
    /// Most frequent gap between consecutive timestamps, in seconds.
    pub step_seconds: i64,
    /// More than one distinct gap was observed.
    pub irregular: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergySeries {
    pub records: Vec<EnergyRecord>,
    pub granularity: Option<Granularity>,
}

impl EnergySeries {
    pub fn new(records: Vec<EnergyRecord>) -> Self {
        let granularity = detect_granularity(records.iter().map(|r| r.timestamp));
        EnergySeries {
            records,
            granularity,
        }
    }
}

/// Histogram of inter-timestamp gaps; the mode is the step. Any second
/// distinct gap marks the series irregular.
pub fn detect_granularity(stamps: impl Iterator<Item = DateTime<Utc>>) -> Option<Granularity> {
    let stamps: Vec<_> = stamps.collect();
    if stamps.len() < 2 {
        return None;
    }
    let mut hist: BTreeMap<i64, usize> = BTreeMap::new();
    for w in stamps.windows(2) {
        *hist.entry((w[1] - w[0]).num_seconds()).or_default() += 1;
    }
    let (step, _) = hist
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .expect("non-empty histogram");
    Some(Granularity {
        step_seconds: *step,
        irregular: hist.len() > 1,
    })
}

// ---------------------------------------------------------------------------
// Parse reporting

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub line: u64,
    pub error: IngestError,
}

#[derive(Debug, Serialize)]
struct RejectionLine<'a> {
    line: u64,
    reason: &'a str,
    kind: &'a str,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParseReport {
    pub rows_in: u64,
    pub rows_parsed: u64,
    pub rejections: Vec<Rejection>,
    pub warnings: Vec<String>,
}

impl ParseReport {
    fn reject(&mut self, line: u64, error: IngestError) {
        self.rejections.push(Rejection { line, error });
    }

    /// Writes one `{line, reason}` JSON object per rejected row.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.rejections {
            let reason = r.error.to_string();
            let line = RejectionLine {
                line: r.line,
                reason: &reason,
                kind: r.error.kind(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub report: ParseReport,
}

impl<T> Parsed<T> {
    /// Fails with the first rejection, if any.
    pub fn into_strict(self) -> Result<T> {
        match self.report.rejections.into_iter().next() {
            Some(r) => Err(r.error),
            None => Ok(self.value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TempUnit {
    Celsius,
    #[default]
    Fahrenheit,
}

impl std::str::FromStr for TempUnit {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_lowercase().as_str() {
            "c" | "celsius" => Ok(TempUnit::Celsius),
            "f" | "fahrenheit" => Ok(TempUnit::Fahrenheit),
            other => Err(format!("unknown temperature unit {other}")),
        }
    }
}

// ---------------------------------------------------------------------------
// Timestamps

/// Parses ISO-8601 instants (with or without seconds, `Z` or offset) and bare
/// dates. Values without an offset are read in `tz`. When `allow_epoch` is
/// set, an all-digit field is taken as unix seconds.
pub fn parse_timestamp(raw: &str, tz: Tz, allow_epoch: bool) -> Option<DateTime<Utc>> {
    let s = raw.trim();
    if s.is_empty() {
        return None;
    }
    if allow_epoch && s.bytes().all(|b| b.is_ascii_digit() || b == b'-') && !s[1..].contains('-')
    {
        return s
            .parse::<i64>()
            .ok()
            .and_then(|secs| DateTime::from_timestamp(secs, 0));
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    if let Some(stripped) = s.strip_suffix('Z').or_else(|| s.strip_suffix('z')) {
        return parse_naive(stripped).map(|n| Utc.from_utc_datetime(&n));
    }
    for fmt in ["%Y-%m-%dT%H:%M%:z", "%Y-%m-%d %H:%M:%S%:z", "%Y-%m-%d %H:%M%:z"] {
        if let Ok(dt) = DateTime::parse_from_str(s, fmt) {
            return Some(dt.with_timezone(&Utc));
        }
    }
    let naive = parse_naive(s)?;
    tz.from_local_datetime(&naive)
        .earliest()
        .map(|dt| dt.with_timezone(&Utc))
}

fn parse_naive(s: &str) -> Option<NaiveDateTime> {
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(n) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(n);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn floor_hour(ts: DateTime<Utc>) -> DateTime<Utc> {
    ts.with_nanosecond(0)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_minute(0))
        .expect("hour floor is valid")
}

// ---------------------------------------------------------------------------
// Readers

fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source)
}

fn headers<R: Read>(rdr: &mut csv::Reader<R>) -> Result<Vec<String>> {
    Ok(rdr
        .headers()?
        .iter()
        .map(|h| h.trim().trim_start_matches('\u{feff}').to_lowercase())
        .collect())
}

fn expect_header(found: &[String], expected: &[&str]) -> Result<()> {
    if found.len() == expected.len() && found.iter().zip(expected).all(|(a, b)| a == b) {
        Ok(())
    } else {
        Err(IngestError::BadHeader {
            expected: expected.join(","),
            found: found.join(","),
        })
    }
}

fn parse_number(field: &str, line: u64) -> std::result::Result<f64, IngestError> {
    let v: f64 = field.parse().map_err(|_| IngestError::MalformedRow {
        line,
        detail: format!("not a number: {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(IngestError::MalformedRow {
            line,
            detail: format!("non-finite value: {field:?}"),
        });
    }
    if v < 0.0 {
        return Err(IngestError::NegativeValue { line });
    }
    Ok(v)
}

fn row_width(record: &csv::StringRecord, want: usize, line: u64) -> Result<()> {
    if record.len() != want {
        return Err(IngestError::MalformedRow {
            line,
            detail: format!("expected {want} fields, found {}", record.len()),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    pub tz: Tz,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { tz: Tz::UTC }
    }
}

/// Reads a fuel mix in long (`timestamp,fuel,mw`) or wide
/// (`timestamp,<fuel>,…`) shape, detected from the header. Timestamps are
/// floored to the hour; rows falling in the same hour merge into one record.
pub fn read_fuel_mix<R: Read>(
    source: R,
    taxonomy: &FuelTaxonomy,
    opts: ParseOptions,
) -> Result<Parsed<FuelMixSeries>> {
    let mut rdr = csv_reader(source);
    let header = headers(&mut rdr)?;
    if header.first().map(String::as_str) != Some("timestamp") || header.len() < 2 {
        return Err(IngestError::BadHeader {
            expected: "timestamp,fuel,mw | timestamp,<fuel>,...".into(),
            found: header.join(","),
        });
    }
    let long = header.len() == 3 && header[1] == "fuel" && header[2] == "mw";
    let wide_fuels: Vec<String> = if long {
        vec![]
    } else {
        let mut seen = BTreeSet::new();
        for name in &header[1..] {
            let key = normalize_fuel_name(name);
            taxonomy.classify(&key)?;
            if !seen.insert(key.clone()) {
                return Err(IngestError::BadHeader {
                    expected: "distinct fuel columns".into(),
                    found: header.join(","),
                });
            }
        }
        header[1..].iter().map(|h| normalize_fuel_name(h)).collect()
    };

    let mut report = ParseReport::default();
    let mut records: Vec<FuelMixRecord> = Vec::new();
    for row in rdr.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                report.rows_in += 1;
                let err = IngestError::from(e);
                let line = match &err {
                    IngestError::MalformedRow { line, .. } => *line,
                    _ => 0,
                };
                report.reject(line, err);
                continue;
            }
        };
        report.rows_in += 1;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let parsed = if long {
            parse_long_row(&row, line, taxonomy, opts.tz)
        } else {
            parse_wide_row(&row, line, &wide_fuels, opts.tz)
        };
        let (hour, entries) = match parsed {
            Ok(v) => v,
            Err(e) => {
                report.reject(line, e);
                continue;
            }
        };
        match records.last_mut() {
            Some(last) if last.timestamp > hour => {
                report.reject(line, IngestError::NonMonotonicTimestamp { line });
                continue;
            }
            Some(last) if last.timestamp == hour => {
                if let Some((fuel, _)) = entries
                    .iter()
                    .find(|(f, _)| last.generation.contains_key(f))
                {
                    report.reject(
                        line,
                        IngestError::DuplicateFuelEntry {
                            line,
                            fuel: fuel.clone(),
                        },
                    );
                    continue;
                }
                last.generation.extend(entries);
            }
            _ => records.push(FuelMixRecord {
                timestamp: hour,
                generation: entries.into_iter().collect(),
            }),
        }
        report.rows_parsed += 1;
    }
    Ok(Parsed {
        value: FuelMixSeries {
            records,
            taxonomy: taxonomy.clone(),
        },
        report,
    })
}

type RowEntries = (DateTime<Utc>, Vec<(String, f64)>);

fn parse_long_row(
    row: &csv::StringRecord,
    line: u64,
    taxonomy: &FuelTaxonomy,
    tz: Tz,
) -> Result<RowEntries> {
    row_width(row, 3, line)?;
    let ts = parse_timestamp(&row[0], tz, false).ok_or_else(|| IngestError::MalformedRow {
        line,
        detail: format!("bad timestamp {:?}", &row[0]),
    })?;
    let fuel = normalize_fuel_name(&row[1]);
    taxonomy.classify(&fuel)?;
    let mw = parse_number(&row[2], line)?;
    Ok((floor_hour(ts), vec![(fuel, mw)]))
}

fn parse_wide_row(
    row: &csv::StringRecord,
    line: u64,
    fuels: &[String],
    tz: Tz,
) -> Result<RowEntries> {
    row_width(row, fuels.len() + 1, line)?;
    let ts = parse_timestamp(&row[0], tz, false).ok_or_else(|| IngestError::MalformedRow {
        line,
        detail: format!("bad timestamp {:?}", &row[0]),
    })?;
    let mut entries = Vec::with_capacity(fuels.len());
    for (fuel, field) in fuels.iter().zip(row.iter().skip(1)) {
        // empty cell: fuel not reported for this hour
        if field.is_empty() {
            continue;
        }
        entries.push((fuel.clone(), parse_number(field, line)?));
    }
    Ok((floor_hour(ts), entries))
}

pub fn parse_fuel_mix<R: Read>(
    source: R,
    taxonomy: &FuelTaxonomy,
    opts: ParseOptions,
) -> Result<FuelMixSeries> {
    read_fuel_mix(source, taxonomy, opts)?.into_strict()
}

/// Shared reader for `timestamp,<value>` files with strictly increasing
/// timestamps (epoch seconds or ISO-8601).
fn read_stamped<R: Read, T>(
    source: R,
    value_col: &str,
    tz: Tz,
    mut convert: impl FnMut(&str, u64) -> Result<T>,
) -> Result<Parsed<Vec<(DateTime<Utc>, T)>>> {
    let mut rdr = csv_reader(source);
    let header = headers(&mut rdr)?;
    expect_header(&header, &["timestamp", value_col])?;
    let mut report = ParseReport::default();
    let mut out: Vec<(DateTime<Utc>, T)> = Vec::new();
    for row in rdr.records() {
        report.rows_in += 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let err = IngestError::from(e);
                let line = match &err {
                    IngestError::MalformedRow { line, .. } => *line,
                    _ => 0,
                };
                report.reject(line, err);
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let parsed = row_width(&row, 2, line).and_then(|_| {
            let ts = parse_timestamp(&row[0], tz, true).ok_or_else(|| {
                IngestError::MalformedRow {
                    line,
                    detail: format!("bad timestamp {:?}", &row[0]),
                }
            })?;
            Ok((ts, convert(&row[1], line)?))
        });
        let (ts, value) = match parsed {
            Ok(v) => v,
            Err(e) => {
                report.reject(line, e);
                continue;
            }
        };
        if let Some((prev, _)) = out.last() {
            if *prev == ts {
                report.reject(line, IngestError::DuplicateTimestamp { line });
                continue;
            }
            if *prev > ts {
                report.reject(line, IngestError::NonMonotonicTimestamp { line });
                continue;
            }
        }
        out.push((ts, value));
        report.rows_parsed += 1;
    }
    Ok(Parsed { value: out, report })
}

pub fn read_btv<R: Read>(source: R, opts: ParseOptions) -> Result<Parsed<TransactionVolumeSeries>> {
    let parsed = read_stamped(source, "tx_count", opts.tz, |field, line| {
        if field.starts_with('-') || field.starts_with('\u{2212}') {
            return Err(IngestError::NegativeValue { line });
        }
        field.parse::<u64>().map_err(|_| IngestError::MalformedRow {
            line,
            detail: format!("not a count: {field:?}"),
        })
    })?;
    Ok(Parsed {
        value: TransactionVolumeSeries {
            records: parsed
                .value
                .into_iter()
                .map(|(timestamp, count)| TxRecord { timestamp, count })
                .collect(),
        },
        report: parsed.report,
    })
}

pub fn parse_btv<R: Read>(source: R, opts: ParseOptions) -> Result<TransactionVolumeSeries> {
    read_btv(source, opts)?.into_strict()
}

pub fn read_cbeci<R: Read>(source: R, opts: ParseOptions) -> Result<Parsed<EnergySeries>> {
    let parsed = read_stamped(source, "kwh", opts.tz, |field, line| {
        if field.starts_with('\u{2212}') {
            return Err(IngestError::NegativeValue { line });
        }
        parse_number(field, line)
    })?;
    let series = EnergySeries::new(
        parsed
            .value
            .into_iter()
            .map(|(timestamp, kwh)| EnergyRecord { timestamp, kwh })
            .collect(),
    );
    let mut report = parsed.report;
    if let Some(g) = series.granularity.filter(|g| g.irregular) {
        report.warnings.push(format!(
            "IrregularSampling: inter-timestamp gaps are not uniform (modal step {} s)",
            g.step_seconds
        ));
    }
    Ok(Parsed {
        value: series,
        report,
    })
}

pub fn parse_cbeci<R: Read>(source: R, opts: ParseOptions) -> Result<EnergySeries> {
    read_cbeci(source, opts)?.into_strict()
}

pub fn fahrenheit_to_celsius(f: f64) -> f64 {
    (f - 32.0) * 5.0 / 9.0
}

pub fn read_temperature<R: Read>(source: R, unit: TempUnit) -> Result<Parsed<TemperatureSeries>> {
    let mut rdr = csv_reader(source);
    let header = headers(&mut rdr)?;
    expect_header(&header, &["date", "tavg"])?;
    let mut report = ParseReport::default();
    let mut records: Vec<TemperatureRecord> = Vec::new();
    for row in rdr.records() {
        report.rows_in += 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let err = IngestError::from(e);
                let line = match &err {
                    IngestError::MalformedRow { line, .. } => *line,
                    _ => 0,
                };
                report.reject(line, err);
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let parsed = row_width(&row, 2, line).and_then(|_| {
            let date = NaiveDate::parse_from_str(&row[0], "%Y-%m-%d").map_err(|_| {
                IngestError::MalformedRow {
                    line,
                    detail: format!("bad date {:?}", &row[0]),
                }
            })?;
            let raw: f64 = row[1].parse().map_err(|_| IngestError::MalformedRow {
                line,
                detail: format!("not a number: {:?}", &row[1]),
            })?;
            if !raw.is_finite() {
                return Err(IngestError::MalformedRow {
                    line,
                    detail: "non-finite temperature".into(),
                });
            }
            let tavg = match unit {
                TempUnit::Celsius => raw,
                TempUnit::Fahrenheit => fahrenheit_to_celsius(raw),
            };
            Ok(TemperatureRecord { date, tavg })
        });
        match parsed {
            Ok(rec) => {
                if records.last().is_some_and(|p| p.date >= rec.date) {
                    report.reject(line, IngestError::NonMonotonicTimestamp { line });
                    continue;
                }
                records.push(rec);
                report.rows_parsed += 1;
            }
            Err(e) => report.reject(line, e),
        }
    }
    Ok(Parsed {
        value: TemperatureSeries { records },
        report,
    })
}

pub fn parse_temperature<R: Read>(source: R, unit: TempUnit) -> Result<TemperatureSeries> {
    read_temperature(source, unit)?.into_strict()
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IngestError::FileNotFound(path.display().to_string()),
        _ => IngestError::Io(format!("{}: {e}", path.display())),
    })
}

pub fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IngestError::FileNotFound(path.display().to_string()),
        _ => IngestError::Io(format!("{}: {e}", path.display())),
    })
}

// ---------------------------------------------------------------------------
// Writers

fn io_err(e: impl fmt::Display) -> IngestError {
    IngestError::Io(e.to_string())
}

/// Writes the long shape (`timestamp,fuel,mw`).
pub fn write_fuel_mix<W: Write>(series: &FuelMixSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "fuel", "mw"]).map_err(io_err)?;
    for rec in &series.records {
        let ts = format_timestamp(rec.timestamp);
        for (fuel, mw) in &rec.generation {
            w.write_record([ts.as_str(), fuel, &mw.to_string()])
                .map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Writes the wide shape (`timestamp,<fuel>,…`); absent fuels become empty cells.
pub fn write_fuel_mix_wide<W: Write>(series: &FuelMixSeries, out: W) -> Result<()> {
    let fuels = series.fuels();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestamp".to_string()];
    header.extend(fuels.iter().cloned());
    w.write_record(&header).map_err(io_err)?;
    for rec in &series.records {
        let mut row = vec![format_timestamp(rec.timestamp)];
        for f in &fuels {
            row.push(rec.generation.get(f).map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn write_btv<W: Write>(series: &TransactionVolumeSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "tx_count"]).map_err(io_err)?;
    for r in &series.records {
        w.write_record([format_timestamp(r.timestamp), r.count.to_string()])
            .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Writes temperatures in °C; re-read with [`TempUnit::Celsius`].
pub fn write_temperature<W: Write>(series: &TemperatureSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "tavg"]).map_err(io_err)?;
    for r in &series.records {
        w.write_record([r.date.format("%Y-%m-%d").to_string(), r.tavg.to_string()])
            .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn write_energy<W: Write>(series: &EnergySeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "kwh"]).map_err(io_err)?;
    for r in &series.records {
        w.write_record([format_timestamp(r.timestamp), r.kwh.to_string()])
            .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
