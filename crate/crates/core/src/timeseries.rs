//! Gap filling, resampling and alignment of series onto the four analysis
//! resolutions. All buckets are UTC.

use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{format_timestamp, parse_timestamp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimeSeriesError {
    #[error("series {0} is empty")]
    EmptySeries(String),
    #[error("series {series} has native resolution {native:?}, cannot align at {requested:?}")]
    ResolutionMismatch {
        series: String,
        native: Resolution,
        requested: Resolution,
    },
    #[error("series cover no common bucket")]
    EmptyIntersection,
    #[error("series {series} has no sample for bucket {at}")]
    MissingBucket { series: String, at: DateTime<Utc> },
    #[error("series {series}: sample at {at} is not on the {resolution:?} lattice")]
    NotOnLattice {
        series: String,
        at: DateTime<Utc>,
        resolution: Resolution,
    },
    #[error("series {0}: timestamps not strictly increasing")]
    NotIncreasing(String),
    #[error("{0} aggregators given for {1} series")]
    LengthMismatch(usize, usize),
    #[error("table csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, TimeSeriesError>;

/// Analysis resolution, ordered from finest to coarsest.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    #[default]
    Hourly,
    Daily,
    /// ISO weeks, Monday to Sunday.
    Weekly,
    /// Calendar months.
    Monthly,
}

impl Resolution {
    pub const ALL: [Resolution; 4] = [
        Resolution::Hourly,
        Resolution::Daily,
        Resolution::Weekly,
        Resolution::Monthly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Resolution::Hourly => "hourly",
            Resolution::Daily => "daily",
            Resolution::Weekly => "weekly",
            Resolution::Monthly => "monthly",
        }
    }

    /// Start of the bucket containing `ts`.
    pub fn bucket_start(&self, ts: DateTime<Utc>) -> DateTime<Utc> {
        let day = |d: NaiveDate| Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0).unwrap());
        match self {
            Resolution::Hourly => ts
                .with_nanosecond(0)
                .and_then(|t| t.with_second(0))
                .and_then(|t| t.with_minute(0))
                .unwrap(),
            Resolution::Daily => day(ts.date_naive()),
            Resolution::Weekly => {
                let d = ts.date_naive();
                day(d - Duration::days(d.weekday().num_days_from_monday() as i64))
            }
            Resolution::Monthly => {
                let d = ts.date_naive();
                day(NaiveDate::from_ymd_opt(d.year(), d.month(), 1).unwrap())
            }
        }
    }

    /// Start of the bucket after the one starting at `bucket`.
    pub fn next(&self, bucket: DateTime<Utc>) -> DateTime<Utc> {
        match self {
            Resolution::Hourly => bucket + Duration::hours(1),
            Resolution::Daily => bucket + Duration::days(1),
            Resolution::Weekly => bucket + Duration::days(7),
            Resolution::Monthly => {
                let d = bucket.date_naive();
                let (y, m) = if d.month() == 12 {
                    (d.year() + 1, 1)
                } else {
                    (d.year(), d.month() + 1)
                };
                Utc.from_utc_datetime(
                    &NaiveDate::from_ymd_opt(y, m, 1)
                        .unwrap()
                        .and_hms_opt(0, 0, 0)
                        .unwrap(),
                )
            }
        }
    }

    /// How many `finer` buckets make up the bucket starting at `bucket`.
    pub fn subdivisions(&self, bucket: DateTime<Utc>, finer: Resolution) -> usize {
        if finer >= *self {
            return 1;
        }
        let mut n = 0;
        let end = self.next(bucket);
        let mut t = bucket;
        while t < end {
            n += 1;
            t = finer.next(t);
        }
        n
    }
}

impl std::str::FromStr for Resolution {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_lowercase().as_str() {
            "hourly" | "h" => Ok(Resolution::Hourly),
            "daily" | "d" => Ok(Resolution::Daily),
            "weekly" | "w" => Ok(Resolution::Weekly),
            "monthly" | "m" => Ok(Resolution::Monthly),
            other => Err(format!("unknown resolution {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    /// Extensive quantities: MWh, counts, kg.
    #[default]
    Sum,
    /// Intensive quantities: temperature.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub at: DateTime<Utc>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub name: String,
    pub resolution: Resolution,
    pub samples: Vec<Sample>,
    /// Number of samples synthesized by gap filling.
    pub gap_fills: usize,
}

impl TimeSeries {
    pub fn new(name: impl Into<String>, resolution: Resolution, samples: Vec<Sample>) -> Self {
        TimeSeries {
            name: name.into(),
            resolution,
            samples,
            gap_fills: 0,
        }
    }

    pub fn from_pairs(
        name: impl Into<String>,
        resolution: Resolution,
        pairs: impl IntoIterator<Item = (DateTime<Utc>, f64)>,
    ) -> Self {
        Self::new(
            name,
            resolution,
            pairs
                .into_iter()
                .map(|(at, value)| Sample { at, value })
                .collect(),
        )
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.value).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.samples.iter().map(|s| s.value).sum()
    }

    fn check_lattice(&self) -> Result<()> {
        for w in self.samples.windows(2) {
            if w[1].at <= w[0].at {
                return Err(TimeSeriesError::NotIncreasing(self.name.clone()));
            }
        }
        for s in &self.samples {
            if self.resolution.bucket_start(s.at) != s.at {
                return Err(TimeSeriesError::NotOnLattice {
                    series: self.name.clone(),
                    at: s.at,
                    resolution: self.resolution,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMethod {
    ForwardFill,
    Linear,
    /// Boundary extension with the nearest real sample.
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillEntry {
    pub at: DateTime<Utc>,
    pub method: FillMethod,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FillReport {
    pub series: String,
    pub entries: Vec<FillEntry>,
}

pub const DEFAULT_MAX_FORWARD_FILL_HOURS: i64 = 3;

/// Completes the lattice over `[first, last]` of the series.
pub fn fill_gaps(series: &TimeSeries, max_forward_fill_hours: i64) -> Result<(TimeSeries, FillReport)> {
    fill_gaps_within(series, max_forward_fill_hours, None)
}

/// Completes the lattice at the series' own resolution, optionally extended
/// to `window` (inclusive bucket starts). Interior gaps of at most
/// `max_forward_fill_hours` missing hours carry the previous value; longer
/// gaps are interpolated linearly; buckets before the first or after the last
/// sample take the nearest real value.
pub fn fill_gaps_within(
    series: &TimeSeries,
    max_forward_fill_hours: i64,
    window: Option<(DateTime<Utc>, DateTime<Utc>)>,
) -> Result<(TimeSeries, FillReport)> {
    if series.samples.is_empty() {
        return Err(TimeSeriesError::EmptySeries(series.name.clone()));
    }
    series.check_lattice()?;
    let res = series.resolution;
    let first = series.samples[0];
    let last = *series.samples.last().unwrap();
    let (start, end) = match window {
        Some((a, b)) => (res.bucket_start(a).min(first.at), res.bucket_start(b).max(last.at)),
        None => (first.at, last.at),
    };

    let mut out = Vec::with_capacity(series.samples.len());
    let mut report = FillReport {
        series: series.name.clone(),
        entries: vec![],
    };
    let mut push_fill = |out: &mut Vec<Sample>, at, value, method| {
        out.push(Sample { at, value });
        report.entries.push(FillEntry { at, method, value });
    };

    let mut t = start;
    while t < first.at {
        push_fill(&mut out, t, first.value, FillMethod::Nearest);
        t = res.next(t);
    }
    for (i, s) in series.samples.iter().enumerate() {
        out.push(*s);
        if let Some(next) = series.samples.get(i + 1) {
            let missing_from = res.next(s.at);
            if missing_from < next.at {
                let gap_hours = (next.at - missing_from).num_hours();
                let span = (next.at - s.at).num_seconds() as f64;
                let mut t = missing_from;
                while t < next.at {
                    if gap_hours <= max_forward_fill_hours {
                        push_fill(&mut out, t, s.value, FillMethod::ForwardFill);
                    } else {
                        let frac = (t - s.at).num_seconds() as f64 / span;
                        let v = s.value + (next.value - s.value) * frac;
                        push_fill(&mut out, t, v, FillMethod::Linear);
                    }
                    t = res.next(t);
                }
            }
        }
    }
    let mut t = res.next(last.at);
    while t <= end {
        push_fill(&mut out, t, last.value, FillMethod::Nearest);
        t = res.next(t);
    }

    let filled = TimeSeries {
        name: series.name.clone(),
        resolution: res,
        samples: out,
        gap_fills: series.gap_fills + report.entries.len(),
    };
    Ok((filled, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub series: TimeSeries,
    /// Input samples per output bucket.
    pub counts: Vec<usize>,
    /// Buckets holding fewer input samples than the bucket spans.
    pub partial: Vec<bool>,
}

/// Aggregates a series into buckets of `resolution`. Buckets with at least
/// one input sample are emitted; incomplete edge buckets are kept and flagged.
pub fn resample(series: &TimeSeries, resolution: Resolution, aggregator: Aggregator) -> Result<Resampled> {
    if series.samples.is_empty() {
        return Err(TimeSeriesError::EmptySeries(series.name.clone()));
    }
    let mut samples: Vec<Sample> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for s in &series.samples {
        let bucket = resolution.bucket_start(s.at);
        match samples.last_mut() {
            Some(last) if last.at == bucket => {
                last.value += s.value;
                *counts.last_mut().unwrap() += 1;
            }
            Some(last) if last.at > bucket => {
                return Err(TimeSeriesError::NotIncreasing(series.name.clone()))
            }
            _ => {
                samples.push(Sample {
                    at: bucket,
                    value: s.value,
                });
                counts.push(1);
            }
        }
    }
    if aggregator == Aggregator::Mean {
        for (s, n) in samples.iter_mut().zip(&counts) {
            s.value /= *n as f64;
        }
    }
    let finer = series.resolution.min(resolution);
    let partial = samples
        .iter()
        .zip(&counts)
        .map(|(s, n)| *n < resolution.subdivisions(s.at, finer))
        .collect();
    Ok(Resampled {
        series: TimeSeries {
            name: series.name.clone(),
            resolution: resolution.max(series.resolution),
            samples,
            gap_fills: series.gap_fills,
        },
        counts,
        partial,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub aggregator: Aggregator,
    pub gap_fills: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

/// Equal-length named columns keyed by bucket start.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedTable {
    pub resolution: Resolution,
    pub keys: Vec<DateTime<Utc>>,
    pub columns: Vec<Column>,
}

impl AlignedTable {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Adds or replaces a column. Panics if the length differs from the keys.
    pub fn set_column(&mut self, name: &str, values: Vec<f64>, provenance: Provenance) {
        assert_eq!(values.len(), self.keys.len(), "column length");
        let col = Column {
            name: name.to_string(),
            values,
            provenance,
        };
        match self.columns.iter_mut().find(|c| c.name == name) {
            Some(c) => *c = col,
            None => self.columns.push(col),
        }
    }

    /// Splits the table back into one series per column.
    pub fn to_series(&self) -> Vec<TimeSeries> {
        self.columns
            .iter()
            .map(|c| TimeSeries {
                name: c.name.clone(),
                resolution: self.resolution,
                samples: self
                    .keys
                    .iter()
                    .zip(&c.values)
                    .map(|(at, value)| Sample {
                        at: *at,
                        value: *value,
                    })
                    .collect(),
                gap_fills: c.provenance.gap_fills,
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let err = |e: csv::Error| TimeSeriesError::Csv(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["bucket".to_string()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        w.write_record(&header).map_err(err)?;
        for (i, key) in self.keys.iter().enumerate() {
            let mut row = vec![format_timestamp(*key)];
            row.extend(self.columns.iter().map(|c| c.values[i].to_string()));
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| TimeSeriesError::Csv(e.to_string()))
    }

    /// Reads a table written by [`AlignedTable::write_csv`]. Provenance is
    /// taken from `provenance` when given, otherwise defaults to a summed
    /// column sourced from itself.
    pub fn read_csv<R: Read>(
        source: R,
        resolution: Resolution,
        provenance: Option<&HashMap<String, Provenance>>,
    ) -> Result<Self> {
        let err = |e: csv::Error| TimeSeriesError::Csv(e.to_string());
        let mut rdr = csv::Reader::from_reader(source);
        let header: Vec<String> = rdr.headers().map_err(err)?.iter().map(String::from).collect();
        if header.first().map(String::as_str) != Some("bucket") {
            return Err(TimeSeriesError::Csv("first column must be bucket".into()));
        }
        let mut keys = vec![];
        let mut values: Vec<Vec<f64>> = vec![vec![]; header.len() - 1];
        for row in rdr.records() {
            let row = row.map_err(err)?;
            let at = parse_timestamp(&row[0], chrono_tz::Tz::UTC, false)
                .ok_or_else(|| TimeSeriesError::Csv(format!("bad bucket {:?}", &row[0])))?;
            keys.push(at);
            for (i, field) in row.iter().skip(1).enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| TimeSeriesError::Csv(format!("bad value {field:?}")))?;
                values[i].push(v);
            }
        }
        let columns = header[1..]
            .iter()
            .zip(values)
            .map(|(name, values)| Column {
                name: name.clone(),
                values,
                provenance: provenance
                    .and_then(|p| p.get(name).cloned())
                    .unwrap_or(Provenance {
                        source: name.clone(),
                        aggregator: Aggregator::Sum,
                        gap_fills: 0,
                    }),
            })
            .collect();
        Ok(AlignedTable {
            resolution,
            keys,
            columns,
        })
    }

    pub fn provenance(&self) -> std::collections::BTreeMap<String, Provenance> {
        self.columns
            .iter()
            .map(|c| (c.name.clone(), c.provenance.clone()))
            .collect()
    }
}

/// Resamples every series to `resolution` and keeps the buckets covered by
/// all of them. Columns keep the order of `series`.
pub fn align(
    series: &[TimeSeries],
    resolution: Resolution,
    aggregators: &[Aggregator],
) -> Result<AlignedTable> {
    if series.len() != aggregators.len() {
        return Err(TimeSeriesError::LengthMismatch(aggregators.len(), series.len()));
    }
    let mut resampled = Vec::with_capacity(series.len());
    for (s, agg) in series.iter().zip(aggregators) {
        if s.resolution > resolution {
            return Err(TimeSeriesError::ResolutionMismatch {
                series: s.name.clone(),
                native: s.resolution,
                requested: resolution,
            });
        }
        let r = if s.resolution == resolution {
            if s.samples.is_empty() {
                return Err(TimeSeriesError::EmptySeries(s.name.clone()));
            }
            s.clone()
        } else {
            resample(s, resolution, *agg)?.series
        };
        resampled.push(r);
    }
    let Some(first) = resampled.first() else {
        return Err(TimeSeriesError::EmptyIntersection);
    };
    let start = resampled.iter().map(|s| s.samples[0].at).max().unwrap();
    let end = resampled
        .iter()
        .map(|s| s.samples.last().unwrap().at)
        .min()
        .unwrap();
    if start > end {
        return Err(TimeSeriesError::EmptyIntersection);
    }
    let keys: Vec<DateTime<Utc>> = first
        .samples
        .iter()
        .map(|s| s.at)
        .filter(|t| *t >= start && *t <= end)
        .collect();
    let mut columns = Vec::with_capacity(resampled.len());
    for (s, agg) in resampled.iter().zip(aggregators) {
        let lookup: HashMap<DateTime<Utc>, f64> =
            s.samples.iter().map(|x| (x.at, x.value)).collect();
        let mut values = Vec::with_capacity(keys.len());
        for k in &keys {
            match lookup.get(k) {
                Some(v) => values.push(*v),
                None => {
                    return Err(TimeSeriesError::MissingBucket {
                        series: s.name.clone(),
                        at: *k,
                    })
                }
            }
        }
        // every bucket of every series must be present in the key list too
        let covered = s.samples.iter().filter(|x| x.at >= start && x.at <= end).count();
        if covered != keys.len() {
            let key_set: std::collections::HashSet<_> = keys.iter().collect();
            let missing = s
                .samples
                .iter()
                .find(|x| x.at >= start && x.at <= end && !key_set.contains(&x.at))
                .map(|x| x.at)
                .unwrap_or(start);
            return Err(TimeSeriesError::MissingBucket {
                series: first.name.clone(),
                at: missing,
            });
        }
        columns.push(Column {
            name: s.name.clone(),
            values,
            provenance: Provenance {
                source: s.name.clone(),
                aggregator: *agg,
                gap_fills: s.gap_fills,
            },
        });
    }
    Ok(AlignedTable {
        resolution,
        keys,
        columns,
    })
}
