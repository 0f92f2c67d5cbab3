//! Deterministic synthetic year used by the tests, the examples and the README.
//!
//! Every day of 2021 belongs to one of three latent regimes. Hourly class
//! totals are drawn around the regime means, split into fuels, and the
//! transaction volume is built so that its hourly Pearson correlation with
//! the carbon-rich total is exactly the configured target (up to integer
//! rounding of the counts).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Timelike, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ingest::{
    self, EnergyRecord, EnergySeries, FuelMixRecord, FuelMixSeries, FuelTaxonomy,
    TemperatureRecord, TemperatureSeries, TransactionVolumeSeries, TxRecord,
};

pub const FIXTURE_SEED: u64 = 2021;
pub const FIXTURE_HOURS: usize = 8760;

pub const FUEL_MIX_FILE: &str = "fuel_mix.csv";
pub const BTV_FILE: &str = "btv.csv";
pub const TEMPERATURE_FILE: &str = "tavg_f.csv";
pub const CBECI_FILE: &str = "cbeci.csv";
pub const REGIMES_FILE: &str = "regimes.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    /// High carbon-rich, low green generation.
    HighCarbon,
    /// Carbon-rich slightly above green.
    Mixed,
    /// Low carbon-rich, high green generation.
    Green,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::HighCarbon => "high_carbon",
            Regime::Mixed => "mixed",
            Regime::Green => "green",
        }
    }

    /// Mean carbon-rich and green MW.
    fn means(&self) -> (f64, f64) {
        match self {
            Regime::HighCarbon => (17_000.0, 7_000.0),
            Regime::Mixed => (13_000.0, 11_000.0),
            Regime::Green => (6_000.0, 16_000.0),
        }
    }

    /// The two named fuel-usage classes: carbon-rich above green or not.
    pub fn carbon_dominant(&self) -> bool {
        let (c, g) = self.means();
        c > g
    }

    fn temperature_offset(&self) -> f64 {
        match self {
            Regime::HighCarbon => -1.0,
            Regime::Mixed => 0.5,
            Regime::Green => 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConfig {
    pub seed: u64,
    pub year: i32,
    /// Days per regime in the order high-carbon, mixed, green.
    pub regime_days: [usize; 3],
    pub target_correlation: f64,
    /// Hourly noise standard deviation of each class total, MW.
    pub noise_mw: f64,
    pub btv_mean: f64,
    pub btv_sd: f64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            seed: FIXTURE_SEED,
            year: 2021,
            regime_days: [210, 85, 70],
            target_correlation: 0.87,
            noise_mw: 500.0,
            btv_mean: 20_000.0,
            btv_sd: 5_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub config: FixtureConfig,
    /// One regime per day.
    pub day_regimes: Vec<Regime>,
    pub fuel_mix: FuelMixSeries,
    pub btv: TransactionVolumeSeries,
    pub temperature: TemperatureSeries,
    pub cbeci: EnergySeries,
}

const CARBON_SPLIT: [(&str, f64); 5] = [
    ("natural gas", 0.70),
    ("imports", 0.24),
    ("coal", 0.02),
    ("other", 0.03),
    ("petroleum", 0.01),
];
const GREEN_SPLIT: [(&str, f64); 5] = [
    ("wind", 0.30),
    ("hydro", 0.25),
    ("nuclear", 0.25),
    ("geothermal", 0.12),
    ("biomass", 0.08),
];

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Solar share of green generation by hour of day.
fn solar_share(hour: u32) -> f64 {
    let x = (hour as f64 - 6.0) / 12.0;
    if (0.0..=1.0).contains(&x) {
        0.45 * (std::f64::consts::PI * x).sin()
    } else {
        0.0
    }
}

fn split(total: f64, parts: &[(&str, f64)], out: &mut BTreeMap<String, f64>) {
    for (fuel, frac) in parts {
        out.insert(fuel.to_string(), (total * frac).round().max(0.0));
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Residual of `v` after removing its mean and its projection on `basis`
/// (which must have zero mean), scaled to unit population variance.
fn orthonormal_residual(v: &[f64], basis: &[f64]) -> Vec<f64> {
    let m = mean(v);
    let centred: Vec<f64> = v.iter().map(|x| x - m).collect();
    let bb: f64 = basis.iter().map(|b| b * b).sum();
    let vb: f64 = centred.iter().zip(basis).map(|(x, b)| x * b).sum();
    let r: Vec<f64> = centred
        .iter()
        .zip(basis)
        .map(|(x, b)| x - vb / bb * b)
        .collect();
    let sd = (r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64).sqrt();
    r.into_iter().map(|x| x / sd).collect()
}

fn standardize(v: &[f64]) -> Vec<f64> {
    let m = mean(v);
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    v.iter().map(|x| (x - m) / sd).collect()
}

impl Fixture {
    pub fn generate(config: FixtureConfig) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let start_date = NaiveDate::from_ymd_opt(config.year, 1, 1).expect("valid year");
        let days = NaiveDate::from_ymd_opt(config.year + 1, 1, 1)
            .unwrap()
            .signed_duration_since(start_date)
            .num_days() as usize;
        assert_eq!(
            config.regime_days.iter().sum::<usize>(),
            days,
            "regime day counts must cover the year"
        );
        let mut day_regimes = Vec::with_capacity(days);
        for (regime, n) in [Regime::HighCarbon, Regime::Mixed, Regime::Green]
            .into_iter()
            .zip(config.regime_days)
        {
            day_regimes.extend(std::iter::repeat_n(regime, n));
        }
        day_regimes.shuffle(&mut rng);

        let t0: DateTime<Utc> = Utc
            .with_ymd_and_hms(config.year, 1, 1, 0, 0, 0)
            .single()
            .unwrap();
        let hours = days * 24;
        let mut records = Vec::with_capacity(hours);
        let mut carbon = Vec::with_capacity(hours);
        for h in 0..hours {
            let at = t0 + Duration::hours(h as i64);
            let (mc, mg) = day_regimes[h / 24].means();
            let diurnal = (2.0 * std::f64::consts::PI * (at.hour() as f64 - 13.0) / 24.0).cos();
            let c = (mc + 600.0 * diurnal + config.noise_mw * normal(&mut rng)).max(500.0);
            let g = (mg + 300.0 * diurnal + config.noise_mw * normal(&mut rng)).max(500.0);
            let mut generation = BTreeMap::new();
            split(c, &CARBON_SPLIT, &mut generation);
            let solar = (g * solar_share(at.hour())).round();
            generation.insert("solar".to_string(), solar);
            split(g - solar, &GREEN_SPLIT, &mut generation);
            carbon.push(
                CARBON_SPLIT
                    .iter()
                    .map(|(f, _)| generation[*f])
                    .sum::<f64>(),
            );
            records.push(FuelMixRecord {
                timestamp: at,
                generation,
            });
        }

        let zc = standardize(&carbon);
        let noise: Vec<f64> = (0..hours).map(|_| normal(&mut rng)).collect();
        let e = orthonormal_residual(&noise, &zc);
        let rho = config.target_correlation;
        let btv = TransactionVolumeSeries {
            records: zc
                .iter()
                .zip(&e)
                .enumerate()
                .map(|(h, (z, e))| {
                    let y = rho * z + (1.0 - rho * rho).sqrt() * e;
                    TxRecord {
                        timestamp: t0 + Duration::hours(h as i64),
                        count: (config.btv_mean + config.btv_sd * y).round().max(0.0) as u64,
                    }
                })
                .collect(),
        };

        let temperature = TemperatureSeries {
            records: (0..days)
                .map(|d| {
                    let date = start_date + Duration::days(d as i64);
                    let season =
                        (2.0 * std::f64::consts::PI * (date.ordinal() as f64 - 200.0) / 365.0).cos();
                    let c = 16.0
                        + 8.0 * season
                        + day_regimes[d].temperature_offset()
                        + 1.5 * normal(&mut rng);
                    TemperatureRecord {
                        date,
                        tavg: (c * 10.0).round() / 10.0,
                    }
                })
                .collect(),
        };

        // global daily consumption, kWh, with a mid-year dip
        let cbeci = EnergySeries::new(
            (0..days)
                .map(|d| {
                    let trend = 2.6e8 + 1.5e8 * d as f64 / days as f64;
                    let dip = if (170..200).contains(&d) { 0.55 } else { 1.0 };
                    let kwh = trend * dip * (1.0 + 0.03 * normal(&mut rng));
                    EnergyRecord {
                        timestamp: t0 + Duration::days(d as i64),
                        kwh: kwh.round(),
                    }
                })
                .collect(),
        );

        Fixture {
            config,
            day_regimes,
            fuel_mix: FuelMixSeries {
                records,
                taxonomy: FuelTaxonomy::default_taxonomy(),
            },
            btv,
            temperature,
            cbeci,
        }
    }

    /// Regime of every hour.
    pub fn hourly_regimes(&self) -> Vec<Regime> {
        self.day_regimes
            .iter()
            .flat_map(|r| std::iter::repeat_n(*r, 24))
            .collect()
    }

    /// Writes the five fixture files into `dir`. Temperatures are in °F.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let file = |name: &str| std::fs::File::create(dir.join(name));
        let to_io = |e: ingest::IngestError| std::io::Error::other(e.to_string());
        ingest::write_fuel_mix_wide(&self.fuel_mix, file(FUEL_MIX_FILE)?).map_err(to_io)?;
        ingest::write_btv(&self.btv, file(BTV_FILE)?).map_err(to_io)?;
        ingest::write_energy(&self.cbeci, file(CBECI_FILE)?).map_err(to_io)?;

        let mut w = csv::Writer::from_writer(file(TEMPERATURE_FILE)?);
        w.write_record(["date", "tavg"])?;
        for r in &self.temperature.records {
            let f = (r.tavg * 9.0 / 5.0 + 32.0) * 100.0;
            w.write_record([r.date.format("%Y-%m-%d").to_string(), (f.round() / 100.0).to_string()])?;
        }
        w.flush()?;

        let mut out = file(REGIMES_FILE)?;
        writeln!(out, "date,regime")?;
        for (d, r) in self.day_regimes.iter().enumerate() {
            let date = NaiveDate::from_ymd_opt(self.config.year, 1, 1).unwrap() + Duration::days(d as i64);
            writeln!(out, "{},{}", date.format("%Y-%m-%d"), r.as_str())?;
        }
        Ok(())
    }
}

/// Directory of the fixture files shipped with the crate.
pub fn shipped_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::pearson;

    #[test]
    fn structure_and_targets() {
        let f = Fixture::generate(FixtureConfig::default());
        assert_eq!(f.fuel_mix.len(), FIXTURE_HOURS);
        assert_eq!(f.btv.records.len(), FIXTURE_HOURS);
        assert_eq!(f.temperature.records.len(), 365);
        let regimes = f.hourly_regimes();
        let high = regimes.iter().filter(|r| **r == Regime::HighCarbon).count();
        assert_eq!(high, 210 * 24);
        assert!(high * 2 > FIXTURE_HOURS);

        let tax = FuelTaxonomy::default_taxonomy();
        let carbon: Vec<f64> = f
            .fuel_mix
            .records
            .iter()
            .map(|r| r.class_totals(&tax).unwrap().carbon_rich_mw)
            .collect();
        let btv: Vec<f64> = f.btv.records.iter().map(|r| r.count as f64).collect();
        let r = pearson(&btv, &carbon).unwrap();
        assert!((r - 0.87).abs() < 1e-3, "r = {r}");
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            Fixture::generate(FixtureConfig::default()),
            Fixture::generate(FixtureConfig::default())
        );
    }

    #[test]
    fn exact_correlation_before_rounding() {
        let z = standardize(&[1.0, 4.0, 2.0, 8.0, 5.0, 7.0]);
        let e = orthonormal_residual(&[0.3, -1.0, 2.0, 0.1, 0.7, -0.4], &z);
        let y: Vec<f64> = z.iter().zip(&e).map(|(a, b)| 0.6 * a + 0.8 * b).collect();
        assert!((pearson(&y, &z).unwrap() - 0.6).abs() < 1e-12);
    }
}
