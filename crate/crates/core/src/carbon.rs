//! Lifecycle emission accounting: emission factors, grid carbon intensity,
//! per-class grid emissions, Bitcoin energy attribution and footprint, and the
//! comparison against a reference consumption index.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{
    self, format_timestamp, normalize_fuel_name, EnergyRecord, EnergySeries, FuelClass,
    FuelMixRecord, FuelMixSeries, FuelTaxonomy, IngestError, TransactionVolumeSeries,
};
use crate::stats;
use crate::timeseries::{Resolution, TimeSeries};

const DEFAULT_FACTORS: &str = include_str!("../data/emission_factors.csv");
pub const DEFAULT_FACTORS_VERSION: &str = "ipcc-ar5-wg3-annex-iii-table-a.iii.2-median";
pub const DEFAULT_FACTORS_CITATION: &str = "IPCC AR5 WG3 Annex III, Table A.III.2: Emissions of selected electricity supply technologies (gCO2eq/kWh), median lifecycle values";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CarbonError {
    #[error("no emission factor for fuel {0}")]
    MissingFuelFactor(String),
    #[error("emission factor for {fuel} must be positive and finite, got {value}")]
    NonPositiveFactor { fuel: String, value: f64 },
    #[error("zero total generation at {0}")]
    ZeroGeneration(DateTime<Utc>),
    #[error("reference series does not cover {0}")]
    CoverageGap(DateTime<Utc>),
    #[error("no fuel mix record for {0}")]
    AlignmentGap(DateTime<Utc>),
    #[error("series do not overlap")]
    EmptyOverlap,
    #[error("invalid energy model: {0}")]
    InvalidModel(String),
    #[error("factor table: {0}")]
    Table(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

pub type Result<T> = std::result::Result<T, CarbonError>;

/// Lifecycle emission factor per fuel, in gCO2eq per kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionFactorTable {
    factors: BTreeMap<String, f64>,
    sources: BTreeMap<String, String>,
    pub citation: String,
    pub version: String,
}

impl EmissionFactorTable {
    /// The shipped table (`data/emission_factors.csv`).
    pub fn default_table() -> Self {
        let mut t = Self::from_csv(DEFAULT_FACTORS.as_bytes()).expect("shipped factors are valid");
        t.version = DEFAULT_FACTORS_VERSION.to_string();
        t.citation = DEFAULT_FACTORS_CITATION.to_string();
        t
    }

    /// Parses `fuel,gco2eq_per_kwh,source`. The version tag is derived from
    /// the content hash.
    pub fn from_csv<R: Read>(mut source: R) -> Result<Self> {
        let mut text = String::new();
        source
            .read_to_string(&mut text)
            .map_err(|e| CarbonError::Table(e.to_string()))?;
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| CarbonError::Table(e.to_string()))?
            .iter()
            .map(str::to_lowercase)
            .collect();
        if header.len() < 2 || header[0] != "fuel" || header[1] != "gco2eq_per_kwh" {
            return Err(CarbonError::Table(format!(
                "expected header fuel,gco2eq_per_kwh,source, found {}",
                header.join(",")
            )));
        }
        let mut factors = BTreeMap::new();
        let mut sources = BTreeMap::new();
        for row in rdr.records() {
            let row = row.map_err(|e| CarbonError::Table(e.to_string()))?;
            let fuel = normalize_fuel_name(&row[0]);
            let value: f64 = row
                .get(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CarbonError::Table(format!("bad factor for {fuel}")))?;
            if !(value > 0.0) || !value.is_finite() {
                return Err(CarbonError::NonPositiveFactor { fuel, value });
            }
            sources.insert(fuel.clone(), row.get(2).unwrap_or("").to_string());
            factors.insert(fuel, value);
        }
        let digest = Sha256::digest(text.as_bytes());
        Ok(EmissionFactorTable {
            factors,
            sources,
            citation: "user-supplied table".to_string(),
            version: format!("sha256:{}", &hex::encode(digest)[..12]),
        })
    }

    pub fn factor(&self, fuel: &str) -> Result<f64> {
        let key = normalize_fuel_name(fuel);
        self.factors
            .get(&key)
            .copied()
            .ok_or(CarbonError::MissingFuelFactor(key))
    }

    pub fn source_of(&self, fuel: &str) -> Option<&str> {
        self.sources.get(&normalize_fuel_name(fuel)).map(String::as_str)
    }

    pub fn fuels(&self) -> impl Iterator<Item = (&str, f64)> {
        self.factors.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Every taxonomy fuel must have a factor.
    pub fn check_complete(&self, taxonomy: &FuelTaxonomy) -> Result<()> {
        for (fuel, _) in taxonomy.fuels() {
            self.factor(fuel)?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["fuel", "gco2eq_per_kwh", "source"])?;
        for (fuel, f) in &self.factors {
            w.write_record([fuel.as_str(), &f.to_string(), &self.sources[fuel]])?;
        }
        w.flush()
    }
}

/// Loads a factor table and checks it against the active taxonomy.
pub fn load_emission_factors(path: &Path, taxonomy: &FuelTaxonomy) -> Result<EmissionFactorTable> {
    let table = EmissionFactorTable::from_csv(ingest::open(path)?)?;
    table.check_complete(taxonomy)?;
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootprintRecord {
    pub bucket: DateTime<Utc>,
    /// kg CO2eq.
    pub kg: f64,
}

/// Emissions per bucket in kg CO2eq, with an optional running total.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CarbonFootprintSeries {
    pub records: Vec<FootprintRecord>,
    pub cumulative: Option<Vec<f64>>,
}

impl CarbonFootprintSeries {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (DateTime<Utc>, f64)>) -> Self {
        CarbonFootprintSeries {
            records: pairs
                .into_iter()
                .map(|(bucket, kg)| FootprintRecord { bucket, kg })
                .collect(),
            cumulative: None,
        }
    }

    pub fn total(&self) -> f64 {
        self.records.iter().map(|r| r.kg).sum()
    }

    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.kg).collect()
    }

    pub fn to_series(&self, name: &str, resolution: Resolution) -> TimeSeries {
        TimeSeries::from_pairs(name, resolution, self.records.iter().map(|r| (r.bucket, r.kg)))
    }

    pub fn from_series(series: &TimeSeries) -> Self {
        Self::from_pairs(series.samples.iter().map(|s| (s.at, s.value)))
    }

    /// `bucket,kg_co2eq,cumulative_kg`; the running total is computed when absent.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let cum = match &self.cumulative {
            Some(c) => c.clone(),
            None => prefix_sums(&self.values()),
        };
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bucket", "kg_co2eq", "cumulative_kg"])?;
        for (r, c) in self.records.iter().zip(cum) {
            w.write_record([format_timestamp(r.bucket), r.kg.to_string(), c.to_string()])?;
        }
        w.flush()
    }
}

fn prefix_sums(values: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    values
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Prefix sums of the emissions.
pub fn cumulative(series: &CarbonFootprintSeries) -> CarbonFootprintSeries {
    CarbonFootprintSeries {
        records: series.records.clone(),
        cumulative: Some(prefix_sums(&series.values())),
    }
}

/// Generation-weighted mean emission factor of one record, gCO2eq/kWh.
/// The result is clamped to the factor range of the fuels present.
pub fn grid_carbon_intensity(record: &FuelMixRecord, table: &EmissionFactorTable) -> Result<f64> {
    let mut weighted = 0.0;
    let mut total = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (fuel, mw) in &record.generation {
        let f = table.factor(fuel)?;
        if *mw > 0.0 {
            weighted += mw * f;
            total += mw;
            lo = lo.min(f);
            hi = hi.max(f);
        }
    }
    if total <= 0.0 {
        return Err(CarbonError::ZeroGeneration(record.timestamp));
    }
    Ok((weighted / total).clamp(lo, hi))
}

/// Per-class emissions of one hourly record in kg CO2eq:
/// X MW for one hour is 1000·X kWh, times g/kWh, over 1000 g/kg.
pub fn record_class_emissions(
    record: &FuelMixRecord,
    taxonomy: &FuelTaxonomy,
    table: &EmissionFactorTable,
) -> Result<(f64, f64)> {
    let mut carbon_rich = 0.0;
    let mut green = 0.0;
    for (fuel, mw) in &record.generation {
        let kg = mw * table.factor(fuel)?;
        match taxonomy.classify(fuel)? {
            FuelClass::CarbonRich => carbon_rich += kg,
            FuelClass::GreenRenewable => green += kg,
        }
    }
    Ok((carbon_rich, green))
}

/// Hourly emissions of the carbon-rich and green-renewable generation.
pub fn class_emissions(
    series: &FuelMixSeries,
    taxonomy: &FuelTaxonomy,
    table: &EmissionFactorTable,
) -> Result<(CarbonFootprintSeries, CarbonFootprintSeries)> {
    let mut cr = Vec::with_capacity(series.len());
    let mut gr = Vec::with_capacity(series.len());
    for rec in &series.records {
        let (c, g) = record_class_emissions(rec, taxonomy, table)?;
        cr.push((rec.timestamp, c));
        gr.push((rec.timestamp, g));
    }
    Ok((
        CarbonFootprintSeries::from_pairs(cr),
        CarbonFootprintSeries::from_pairs(gr),
    ))
}

/// How Bitcoin transaction volume is turned into energy.
#[derive(Debug, Clone, PartialEq)]
pub enum EnergyModel {
    /// Fixed energy per transaction.
    PerTransaction { kwh_per_tx: f64 },
    /// A share of a reference consumption series, spread over each reference
    /// bucket in proportion to transaction volume.
    CbeciShare {
        cbeci: EnergySeries,
        region_share: f64,
    },
}

impl EnergyModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnergyModel::PerTransaction { kwh_per_tx } => {
                if !(*kwh_per_tx > 0.0) || !kwh_per_tx.is_finite() {
                    return Err(CarbonError::InvalidModel(format!(
                        "kwh_per_tx must be > 0, got {kwh_per_tx}"
                    )));
                }
            }
            EnergyModel::CbeciShare { region_share, .. } => {
                if !(*region_share > 0.0 && *region_share <= 1.0) {
                    return Err(CarbonError::InvalidModel(format!(
                        "region_share must be in (0, 1], got {region_share}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Seconds per reference bucket; a lone record is taken as daily.
fn reference_step(cbeci: &EnergySeries) -> i64 {
    cbeci
        .granularity
        .map(|g| g.step_seconds)
        .or_else(|| {
            ingest::detect_granularity(cbeci.records.iter().map(|r| r.timestamp))
                .map(|g| g.step_seconds)
        })
        .unwrap_or(86_400)
}

pub fn btc_energy(btv: &TransactionVolumeSeries, model: &EnergyModel) -> Result<EnergySeries> {
    model.validate()?;
    match model {
        EnergyModel::PerTransaction { kwh_per_tx } => Ok(EnergySeries::new(
            btv.records
                .iter()
                .map(|r| EnergyRecord {
                    timestamp: r.timestamp,
                    kwh: r.count as f64 * kwh_per_tx,
                })
                .collect(),
        )),
        EnergyModel::CbeciShare {
            cbeci,
            region_share,
        } => {
            let step = chrono::Duration::seconds(reference_step(cbeci));
            // reference bucket index for every BTV record
            let mut owner = Vec::with_capacity(btv.records.len());
            let mut j = 0usize;
            for r in &btv.records {
                while j + 1 < cbeci.records.len() && cbeci.records[j + 1].timestamp <= r.timestamp {
                    j += 1;
                }
                match cbeci.records.get(j) {
                    Some(c) if c.timestamp <= r.timestamp && r.timestamp < c.timestamp + step => {
                        owner.push(j)
                    }
                    _ => return Err(CarbonError::CoverageGap(r.timestamp)),
                }
            }
            let mut totals: HashMap<usize, (u64, usize)> = HashMap::new();
            for (r, o) in btv.records.iter().zip(&owner) {
                let e = totals.entry(*o).or_default();
                e.0 += r.count;
                e.1 += 1;
            }
            let records = btv
                .records
                .iter()
                .zip(&owner)
                .map(|(r, o)| {
                    let bucket_kwh = cbeci.records[*o].kwh * region_share;
                    let (count_total, hours) = totals[o];
                    let kwh = if count_total == 0 {
                        bucket_kwh / hours as f64
                    } else {
                        bucket_kwh * r.count as f64 / count_total as f64
                    };
                    EnergyRecord {
                        timestamp: r.timestamp,
                        kwh,
                    }
                })
                .collect();
            Ok(EnergySeries::new(records))
        }
    }
}

/// `emission(t) = energy_kwh(t) · intensity(t) / 1000` kg CO2eq.
pub fn btc_footprint(
    energy: &EnergySeries,
    fuel_mix: &FuelMixSeries,
    table: &EmissionFactorTable,
) -> Result<CarbonFootprintSeries> {
    let by_hour: HashMap<DateTime<Utc>, &FuelMixRecord> =
        fuel_mix.records.iter().map(|r| (r.timestamp, r)).collect();
    let mut out = Vec::with_capacity(energy.records.len());
    for e in &energy.records {
        if e.kwh == 0.0 {
            out.push((e.timestamp, 0.0));
            continue;
        }
        let rec = by_hour
            .get(&e.timestamp)
            .ok_or(CarbonError::AlignmentGap(e.timestamp))?;
        let intensity = grid_carbon_intensity(rec, table)?;
        out.push((e.timestamp, e.kwh * intensity / 1000.0));
    }
    Ok(CarbonFootprintSeries::from_pairs(out))
}

/// Flags reference buckets that fall more than `drop_fraction` below the
/// median of the preceding `window` buckets while ours does not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipRule {
    pub drop_fraction: f64,
    pub window: usize,
}

impl Default for DipRule {
    fn default() -> Self {
        DipRule {
            drop_fraction: 0.3,
            window: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipInterval {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub buckets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketDifference {
    pub bucket: DateTime<Utc>,
    pub ours_kg: f64,
    pub reference_kg: f64,
    /// `(reference - ours) / ours`; absent where ours is zero and reference is not.
    pub relative_difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub overlap: usize,
    /// Absent when either side is constant or shorter than two buckets.
    pub pearson_r: Option<f64>,
    pub buckets: Vec<BucketDifference>,
    pub dips: Vec<DipInterval>,
    pub rule: DipRule,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

pub fn compare_cbeci(
    ours: &CarbonFootprintSeries,
    reference: &CarbonFootprintSeries,
    rule: DipRule,
) -> Result<DivergenceReport> {
    let ref_by: HashMap<DateTime<Utc>, f64> =
        reference.records.iter().map(|r| (r.bucket, r.kg)).collect();
    let pairs: Vec<(DateTime<Utc>, f64, f64)> = ours
        .records
        .iter()
        .filter_map(|r| ref_by.get(&r.bucket).map(|v| (r.bucket, r.kg, *v)))
        .collect();
    if pairs.is_empty() {
        return Err(CarbonError::EmptyOverlap);
    }
    let o: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let r: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    let pearson_r = stats::pearson(&o, &r).ok();
    let buckets = pairs
        .iter()
        .map(|&(bucket, ours_kg, reference_kg)| BucketDifference {
            bucket,
            ours_kg,
            reference_kg,
            relative_difference: if ours_kg != 0.0 {
                Some((reference_kg - ours_kg) / ours_kg)
            } else if reference_kg == 0.0 {
                Some(0.0)
            } else {
                None
            },
        })
        .collect();

    let keep = 1.0 - rule.drop_fraction;
    let flagged: Vec<bool> = (0..pairs.len())
        .map(|i| {
            if i == 0 || rule.window == 0 {
                return false;
            }
            let from = i.saturating_sub(rule.window);
            let ref_med = median(&mut r[from..i].to_vec());
            let our_med = median(&mut o[from..i].to_vec());
            r[i] < keep * ref_med && !(o[i] < keep * our_med)
        })
        .collect();
    let mut dips = Vec::new();
    let mut i = 0;
    while i < flagged.len() {
        if flagged[i] {
            let start = i;
            while i + 1 < flagged.len() && flagged[i + 1] {
                i += 1;
            }
            dips.push(DipInterval {
                start: pairs[start].0,
                end: pairs[i].0,
                buckets: i - start + 1,
            });
        }
        i += 1;
    }
    Ok(DivergenceReport {
        overlap: pairs.len(),
        pearson_r,
        buckets,
        dips,
        rule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::TxRecord;
    use chrono::{Duration, TimeZone};

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap()
    }

    fn record(fuels: &[(&str, f64)]) -> FuelMixRecord {
        FuelMixRecord {
            timestamp: t0(),
            generation: fuels.iter().map(|(f, v)| (f.to_string(), *v)).collect(),
        }
    }

    fn table(rows: &[(&str, f64)]) -> EmissionFactorTable {
        let mut csv = String::from("fuel,gco2eq_per_kwh,source\n");
        for (f, v) in rows {
            csv.push_str(&format!("{f},{v},test\n"));
        }
        EmissionFactorTable::from_csv(csv.as_bytes()).unwrap()
    }

    #[test]
    fn default_table_covers_taxonomy() {
        let t = EmissionFactorTable::default_table();
        t.check_complete(&FuelTaxonomy::default_taxonomy()).unwrap();
        assert_eq!(t.factor("coal").unwrap(), 820.0);
        assert_eq!(t.factor("natural gas").unwrap(), 490.0);
        assert_eq!(t.factor("wind").unwrap(), 11.0);
        assert_eq!(t.factor("nuclear").unwrap(), 12.0);
        assert_eq!(t.version, DEFAULT_FACTORS_VERSION);
    }

    #[test]
    fn missing_and_non_positive_factors() {
        let t = table(&[("wind", 11.0)]);
        assert_eq!(
            t.check_complete(&FuelTaxonomy::default_taxonomy()).unwrap_err(),
            CarbonError::MissingFuelFactor("batteries".into())
        );
        let full = EmissionFactorTable::default_table();
        let mut rows: Vec<(&str, f64)> = full
            .fuels()
            .filter(|(f, _)| *f != "coal")
            .collect();
        rows.push(("fusion", 1.0));
        let t = table(&rows);
        assert_eq!(
            t.check_complete(&FuelTaxonomy::default_taxonomy()).unwrap_err(),
            CarbonError::MissingFuelFactor("coal".into())
        );
        let bad = EmissionFactorTable::from_csv("fuel,gco2eq_per_kwh,source\ncoal,0,x\n".as_bytes());
        assert!(matches!(bad, Err(CarbonError::NonPositiveFactor { .. })));
    }

    #[test]
    fn intensity_examples() {
        let t = table(&[("coal", 820.0), ("wind", 11.0)]);
        assert_eq!(
            grid_carbon_intensity(&record(&[("coal", 100.0), ("wind", 100.0)]), &t).unwrap(),
            415.5
        );
        assert_eq!(grid_carbon_intensity(&record(&[("wind", 37.0)]), &t).unwrap(), 11.0);
        assert_eq!(
            grid_carbon_intensity(&record(&[("coal", 0.0), ("wind", 0.0)]), &t).unwrap_err(),
            CarbonError::ZeroGeneration(t0())
        );
    }

    #[test]
    fn class_emission_examples() {
        let tax = FuelTaxonomy::default_taxonomy();
        let t = table(&[("natural gas", 490.0), ("wind", 11.0)]);
        assert_eq!(
            record_class_emissions(&record(&[("natural gas", 100.0)]), &tax, &t).unwrap(),
            (49_000.0, 0.0)
        );
        assert_eq!(
            record_class_emissions(&record(&[("natural gas", 0.0), ("wind", 0.0)]), &tax, &t)
                .unwrap(),
            (0.0, 0.0)
        );
        assert_eq!(
            record_class_emissions(&record(&[("wind", 1.0)]), &tax, &t).unwrap(),
            (0.0, 11.0)
        );
    }

    fn hourly_btv(counts: &[u64]) -> TransactionVolumeSeries {
        TransactionVolumeSeries {
            records: counts
                .iter()
                .enumerate()
                .map(|(i, c)| TxRecord {
                    timestamp: t0() + Duration::hours(i as i64),
                    count: *c,
                })
                .collect(),
        }
    }

    fn one_day(kwh: f64) -> EnergySeries {
        EnergySeries::new(vec![EnergyRecord {
            timestamp: t0(),
            kwh,
        }])
    }

    #[test]
    fn energy_models() {
        let e = btc_energy(
            &hourly_btv(&[1000]),
            &EnergyModel::PerTransaction { kwh_per_tx: 1.0 },
        )
        .unwrap();
        assert_eq!(e.records[0].kwh, 1000.0);

        let model = EnergyModel::CbeciShare {
            cbeci: one_day(2400.0),
            region_share: 1.0,
        };
        let e = btc_energy(&hourly_btv(&[5; 24]), &model).unwrap();
        assert!(e.records.iter().all(|r| r.kwh == 100.0));

        let mut counts = vec![1u64; 24];
        counts[0] = 3;
        let e = btc_energy(&hourly_btv(&counts), &model).unwrap();
        assert!((e.records[0].kwh - 2400.0 * 3.0 / 26.0).abs() < 1e-9);
        assert!((e.records[0].kwh - 276.92).abs() < 0.01);
        let total: f64 = e.records.iter().map(|r| r.kwh).sum();
        assert!((total - 2400.0).abs() < 1e-9);

        // zero volume for the whole day: uniform split
        let e = btc_energy(&hourly_btv(&[0; 24]), &model).unwrap();
        assert!(e.records.iter().all(|r| r.kwh == 100.0));

        // 25th hour falls outside the single reference day
        assert_eq!(
            btc_energy(&hourly_btv(&[1; 25]), &model).unwrap_err(),
            CarbonError::CoverageGap(t0() + Duration::hours(24))
        );
        assert!(btc_energy(
            &hourly_btv(&[1]),
            &EnergyModel::CbeciShare {
                cbeci: one_day(1.0),
                region_share: 0.0
            }
        )
        .is_err());
    }

    #[test]
    fn footprint_examples() {
        let t = table(&[("coal", 820.0), ("wind", 11.0)]);
        let mix = FuelMixSeries {
            records: vec![record(&[("coal", 100.0), ("wind", 100.0)])],
            taxonomy: FuelTaxonomy::default_taxonomy(),
        };
        let energy = EnergySeries::new(vec![EnergyRecord {
            timestamp: t0(),
            kwh: 1000.0,
        }]);
        let f = btc_footprint(&energy, &mix, &t).unwrap();
        assert_eq!(f.records[0].kg, 415.5);

        let zero = EnergySeries::new(vec![
            EnergyRecord { timestamp: t0(), kwh: 0.0 },
            EnergyRecord { timestamp: t0() + Duration::hours(5), kwh: 0.0 },
        ]);
        assert_eq!(btc_footprint(&zero, &mix, &t).unwrap().values(), vec![0.0, 0.0]);

        let gap = EnergySeries::new(vec![EnergyRecord {
            timestamp: t0() + Duration::hours(1),
            kwh: 3.0,
        }]);
        assert_eq!(
            btc_footprint(&gap, &mix, &t).unwrap_err(),
            CarbonError::AlignmentGap(t0() + Duration::hours(1))
        );
    }

    #[test]
    fn cumulative_examples() {
        let s = CarbonFootprintSeries::from_pairs(
            [1.0, 2.0, 3.0]
                .iter()
                .enumerate()
                .map(|(i, v)| (t0() + Duration::hours(i as i64), *v)),
        );
        assert_eq!(cumulative(&s).cumulative.unwrap(), vec![1.0, 3.0, 6.0]);
        let z = CarbonFootprintSeries::from_pairs((0..3).map(|i| (t0() + Duration::hours(i), 0.0)));
        assert_eq!(cumulative(&z).cumulative.unwrap(), vec![0.0; 3]);
        let mut buf = vec![];
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("bucket,kg_co2eq,cumulative_kg\n"));
        assert!(text.trim_end().ends_with(",3,6"));
    }

    fn daily(values: &[f64]) -> CarbonFootprintSeries {
        CarbonFootprintSeries::from_pairs(
            values
                .iter()
                .enumerate()
                .map(|(i, v)| (t0() + Duration::days(i as i64), *v)),
        )
    }

    #[test]
    fn divergence_examples() {
        let base: Vec<f64> = (0..60).map(|i| 100.0 + (i % 7) as f64).collect();
        let same = compare_cbeci(&daily(&base), &daily(&base), DipRule::default()).unwrap();
        assert_eq!(same.pearson_r, Some(1.0));
        assert!(same.buckets.iter().all(|b| b.relative_difference == Some(0.0)));
        assert!(same.dips.is_empty());

        let doubled: Vec<f64> = base.iter().map(|v| 2.0 * v).collect();
        let rep = compare_cbeci(&daily(&base), &daily(&doubled), DipRule::default()).unwrap();
        assert_eq!(rep.pearson_r, Some(1.0));
        assert!(rep.buckets.iter().all(|b| b.relative_difference == Some(1.0)));

        let mut dipped = base.clone();
        for v in &mut dipped[30..35] {
            *v *= 0.5;
        }
        let rep = compare_cbeci(&daily(&base), &daily(&dipped), DipRule::default()).unwrap();
        assert_eq!(rep.dips.len(), 1);
        assert_eq!(rep.dips[0].start, t0() + Duration::days(30));
        assert_eq!(rep.dips[0].end, t0() + Duration::days(34));
        assert_eq!(rep.dips[0].buckets, 5);

        let later = CarbonFootprintSeries::from_pairs([(t0() + Duration::days(400), 1.0)]);
        assert_eq!(
            compare_cbeci(&daily(&base), &later, DipRule::default()).unwrap_err(),
            CarbonError::EmptyOverlap
        );
    }
}
