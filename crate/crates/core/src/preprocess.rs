//! Feature transforms: base-2 log scaling, min-max normalization and the
//! assembly of the clustering feature matrix from an aligned table.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carbon::EmissionFactorTable;
use crate::ingest::{format_timestamp, FuelClass, FuelTaxonomy};
use crate::matrix::Matrix;
use crate::timeseries::AlignedTable;

/// Prefix of per-fuel generation columns in an [`AlignedTable`].
pub const FUEL_PREFIX: &str = "fuel:";
pub const BTV_COLUMN: &str = "btv";
pub const TAVG_COLUMN: &str = "tavg";
pub const FOOTPRINT_COLUMN: &str = "footprint";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreprocessError {
    #[error("negative value {value} at index {index}")]
    NegativeValue { index: usize, value: f64 },
    #[error("non-finite value in column {0}")]
    NonFinite(String),
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("normalization params do not match columns: expected {expected:?}, got {found:?}")]
    ParamsMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("fuel column {0}: {1}")]
    Fuel(String, String),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

/// `log2(1 + x)` elementwise.
pub fn log2_transform(values: &[f64]) -> Result<Vec<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(index, &v)| {
            if v < 0.0 {
                Err(PreprocessError::NegativeValue { index, value: v })
            } else {
                Ok((1.0 + v).log2())
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnParams {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub constant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct NormalizationParams {
    pub columns: Vec<ColumnParams>,
}

impl NormalizationParams {
    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }
}

/// Per-column `(x - min) / (max - min)`; constant columns become 0.
pub fn minmax_normalize(matrix: &Matrix, names: &[String]) -> Result<(Matrix, NormalizationParams)> {
    assert_eq!(names.len(), matrix.cols(), "one name per column");
    let mut out = matrix.clone();
    let mut params = NormalizationParams::default();
    for (j, name) in names.iter().enumerate() {
        let col = matrix.column(j);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(PreprocessError::NonFinite(name.clone()));
        }
        let min = col.iter().copied().fold(f64::INFINITY, f64::min);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (min, max) = if col.is_empty() { (0.0, 0.0) } else { (min, max) };
        let constant = min == max;
        for (i, v) in col.iter().enumerate() {
            let y = if constant { 0.0 } else { (v - min) / (max - min) };
            out.set(i, j, y);
        }
        params.columns.push(ColumnParams {
            name: name.clone(),
            min,
            max,
            constant,
        });
    }
    Ok((out, params))
}

/// `x = y (max - min) + min`; constant columns restore `min`.
pub fn inverse_normalize(
    matrix: &Matrix,
    names: &[String],
    params: &NormalizationParams,
) -> Result<Matrix> {
    let expected = params.names();
    if expected.as_slice() != names || names.len() != matrix.cols() {
        return Err(PreprocessError::ParamsMismatch {
            expected,
            found: names.to_vec(),
        });
    }
    let mut out = matrix.clone();
    for (j, p) in params.columns.iter().enumerate() {
        for i in 0..matrix.rows() {
            let x = if p.constant {
                p.min
            } else {
                matrix.get(i, j) * (p.max - p.min) + p.min
            };
            out.set(i, j, x);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    CarbonRichMw,
    GreenMw,
    Btv,
    Tavg,
    Footprint,
}

impl Feature {
    pub fn name(&self) -> &'static str {
        match self {
            Feature::CarbonRichMw => "carbon_rich_mw",
            Feature::GreenMw => "green_mw",
            Feature::Btv => "btv",
            Feature::Tavg => "tavg",
            Feature::Footprint => "footprint",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Feature {
    type Err = PreprocessError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "carbon_rich_mw" | "carbon_rich" => Ok(Feature::CarbonRichMw),
            "green_mw" | "green" => Ok(Feature::GreenMw),
            "btv" => Ok(Feature::Btv),
            "tavg" => Ok(Feature::Tavg),
            "footprint" => Ok(Feature::Footprint),
            other => Err(PreprocessError::UnknownFeature(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Log2,
}

/// Which features to assemble and which of them get the log2 transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub features: Vec<Feature>,
    pub log_columns: BTreeSet<Feature>,
}

impl FeatureSpec {
    pub fn new(features: Vec<Feature>) -> Self {
        FeatureSpec {
            features,
            log_columns: [Feature::Btv].into_iter().collect(),
        }
    }

    /// carbon-rich vs. green generation.
    pub fn two_d() -> Self {
        Self::new(vec![Feature::CarbonRichMw, Feature::GreenMw])
    }

    /// carbon-rich, green and transaction volume.
    pub fn three_d() -> Self {
        Self::new(vec![Feature::CarbonRichMw, Feature::GreenMw, Feature::Btv])
    }

    /// Temperature variant: carbon-rich, green and TAVG.
    pub fn temperature() -> Self {
        Self::new(vec![Feature::CarbonRichMw, Feature::GreenMw, Feature::Tavg])
    }

    pub fn with_log_columns(mut self, cols: impl IntoIterator<Item = Feature>) -> Self {
        self.log_columns = cols.into_iter().collect();
        self
    }

    /// Accepts a preset (`2d`, `3d`, `temperature`) or a comma list of features.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "2d" => Ok(Self::two_d()),
            "3d" => Ok(Self::three_d()),
            "temperature" | "temp" => Ok(Self::temperature()),
            list => Ok(Self::new(
                list.split(',')
                    .filter(|x| !x.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?,
            )),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name().to_string()).collect()
    }
}

/// Normalized features, one row per time bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub keys: Vec<DateTime<Utc>>,
    pub columns: Vec<String>,
    pub values: Matrix,
    pub params: NormalizationParams,
    pub transforms: Vec<Transform>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Undoes the normalization (the log2 transform is kept).
    pub fn denormalized(&self) -> Matrix {
        inverse_normalize(&self.values, &self.columns, &self.params)
            .expect("params built from the same columns")
    }

    /// Maps points in normalized space back to transformed-raw space.
    pub fn denormalize_points(&self, points: &Matrix) -> Matrix {
        inverse_normalize(points, &self.columns, &self.params)
            .expect("params built from the same columns")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["bucket".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (i, key) in self.keys.iter().enumerate() {
            let mut row = vec![format_timestamp(*key)];
            row.extend(self.values.row(i).iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()
    }
}

/// Sums the fuel columns of the table by class: `(carbon_rich, green)`.
pub fn class_columns(table: &AlignedTable, taxonomy: &FuelTaxonomy) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut carbon = vec![0.0; table.len()];
    let mut green = vec![0.0; table.len()];
    for col in &table.columns {
        let Some(fuel) = col.name.strip_prefix(FUEL_PREFIX) else {
            continue;
        };
        let class = taxonomy
            .classify(fuel)
            .map_err(|e| PreprocessError::Fuel(fuel.to_string(), e.to_string()))?;
        let target = match class {
            FuelClass::CarbonRich => &mut carbon,
            FuelClass::GreenRenewable => &mut green,
        };
        for (t, v) in target.iter_mut().zip(&col.values) {
            *t += v;
        }
    }
    Ok((carbon, green))
}

/// Grid emission per bucket in kg CO2eq from the fuel columns (MWh × g/kWh).
pub fn footprint_column(table: &AlignedTable, factors: &EmissionFactorTable) -> Result<Vec<f64>> {
    let mut out = vec![0.0; table.len()];
    for col in &table.columns {
        let Some(fuel) = col.name.strip_prefix(FUEL_PREFIX) else {
            continue;
        };
        let factor = factors
            .factor(fuel)
            .map_err(|e| PreprocessError::Fuel(fuel.to_string(), e.to_string()))?;
        for (o, mwh) in out.iter_mut().zip(&col.values) {
            *o += mwh * factor;
        }
    }
    Ok(out)
}

/// Raw feature columns (after the log2 transform, before normalization).
pub fn raw_features(
    table: &AlignedTable,
    taxonomy: &FuelTaxonomy,
    spec: &FeatureSpec,
    factors: Option<&EmissionFactorTable>,
) -> Result<(Vec<Vec<f64>>, Vec<Transform>)> {
    let needs_classes = spec
        .features
        .iter()
        .any(|f| matches!(f, Feature::CarbonRichMw | Feature::GreenMw));
    let (carbon, green) = if needs_classes {
        if !table.columns.iter().any(|c| c.name.starts_with(FUEL_PREFIX)) {
            return Err(PreprocessError::MissingColumn(format!("{FUEL_PREFIX}*")));
        }
        class_columns(table, taxonomy)?
    } else {
        (vec![], vec![])
    };
    let named = |name: &str| {
        table
            .column(name)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| PreprocessError::MissingColumn(name.to_string()))
    };
    let mut columns = Vec::with_capacity(spec.features.len());
    let mut transforms = Vec::with_capacity(spec.features.len());
    for f in &spec.features {
        let raw = match f {
            Feature::CarbonRichMw => carbon.clone(),
            Feature::GreenMw => green.clone(),
            Feature::Btv => named(BTV_COLUMN)?,
            Feature::Tavg => named(TAVG_COLUMN)?,
            Feature::Footprint => match (table.column(FOOTPRINT_COLUMN), factors) {
                (Some(c), _) => c.to_vec(),
                (None, Some(t)) => footprint_column(table, t)?,
                (None, None) => {
                    return Err(PreprocessError::MissingColumn(FOOTPRINT_COLUMN.into()))
                }
            },
        };
        if spec.log_columns.contains(f) {
            columns.push(log2_transform(&raw)?);
            transforms.push(Transform::Log2);
        } else {
            columns.push(raw);
            transforms.push(Transform::Identity);
        }
    }
    Ok((columns, transforms))
}

pub fn build_features(
    table: &AlignedTable,
    taxonomy: &FuelTaxonomy,
    spec: &FeatureSpec,
    factors: Option<&EmissionFactorTable>,
) -> Result<FeatureMatrix> {
    let (columns, transforms) = raw_features(table, taxonomy, spec, factors)?;
    let names = spec.names();
    let raw = Matrix::from_columns(&columns);
    let raw = if columns.is_empty() {
        Matrix::zeros(table.len(), 0)
    } else {
        raw
    };
    let (values, params) = minmax_normalize(&raw, &names)?;
    Ok(FeatureMatrix {
        keys: table.keys.clone(),
        columns: names,
        values,
        params,
        transforms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::{align, Aggregator, Resolution, TimeSeries};
    use chrono::{Duration, TimeZone};
    use proptest::prelude::*;

    #[test]
    fn log2_examples() {
        assert_eq!(log2_transform(&[0.0, 7.0, 1023.0]).unwrap(), vec![0.0, 3.0, 10.0]);
        assert!(matches!(
            log2_transform(&[1.0, -1.0]),
            Err(PreprocessError::NegativeValue { index: 1, .. })
        ));
    }

    #[test]
    fn minmax_examples() {
        let names = vec!["a".to_string(), "b".to_string()];
        let m = Matrix::from_rows(&[[2.0, 5.0], [4.0, 5.0], [6.0, 5.0]]);
        let (n, p) = minmax_normalize(&m, &names).unwrap();
        assert_eq!(n.column(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(n.column(1), vec![0.0, 0.0, 0.0]);
        assert!(p.columns[1].constant);
        assert!(!p.columns[0].constant);

        let back = inverse_normalize(&n, &names, &p).unwrap();
        assert_eq!(back, m);

        let wrong = vec!["a".to_string(), "c".to_string()];
        assert!(matches!(
            inverse_normalize(&n, &wrong, &p),
            Err(PreprocessError::ParamsMismatch { .. })
        ));
    }

    fn table(fuels: &[(&str, f64)], btv: f64) -> AlignedTable {
        let t0 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        let mut series: Vec<TimeSeries> = fuels
            .iter()
            .map(|(f, v)| {
                TimeSeries::from_pairs(format!("{FUEL_PREFIX}{f}"), Resolution::Hourly, [(t0, *v)])
            })
            .collect();
        series.push(TimeSeries::from_pairs(BTV_COLUMN, Resolution::Hourly, [(t0, btv)]));
        let aggs = vec![Aggregator::Sum; series.len()];
        align(&series, Resolution::Hourly, &aggs).unwrap()
    }

    #[test]
    fn raw_feature_composition() {
        let t = table(&[("coal", 100.0), ("wind", 50.0)], 7.0);
        let (cols, tr) =
            raw_features(&t, &FuelTaxonomy::default_taxonomy(), &FeatureSpec::three_d(), None)
                .unwrap();
        assert_eq!(cols, vec![vec![100.0], vec![50.0], vec![3.0]]);
        assert_eq!(tr, vec![Transform::Identity, Transform::Identity, Transform::Log2]);
    }

    #[test]
    fn spec_selects_columns() {
        let t = table(&[("coal", 100.0), ("wind", 50.0)], 7.0);
        let fm = build_features(&t, &FuelTaxonomy::default_taxonomy(), &FeatureSpec::three_d(), None)
            .unwrap();
        assert_eq!(fm.columns, vec!["carbon_rich_mw", "green_mw", "btv"]);
        assert!(fm.column_index("tavg").is_none());
        let err = build_features(
            &t,
            &FuelTaxonomy::default_taxonomy(),
            &FeatureSpec::temperature(),
            None,
        )
        .unwrap_err();
        assert_eq!(err, PreprocessError::MissingColumn("tavg".into()));
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(FeatureSpec::parse("3d").unwrap(), FeatureSpec::three_d());
        let s = FeatureSpec::parse("btv,tavg").unwrap();
        assert_eq!(s.features, vec![Feature::Btv, Feature::Tavg]);
        assert!(FeatureSpec::parse("btv,nope").is_err());
    }

    fn hourly_table(cols: &[(&str, Vec<f64>)]) -> AlignedTable {
        let t0 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        let series: Vec<TimeSeries> = cols
            .iter()
            .map(|(name, vals)| {
                TimeSeries::from_pairs(
                    *name,
                    Resolution::Hourly,
                    vals.iter()
                        .enumerate()
                        .map(|(i, v)| (t0 + Duration::hours(i as i64), *v)),
                )
            })
            .collect();
        let aggs = vec![Aggregator::Sum; series.len()];
        align(&series, Resolution::Hourly, &aggs).unwrap()
    }

    proptest! {
        #[test]
        fn log2_strictly_monotone(a in 0.0f64..1e9, b in 0.0f64..1e9) {
            prop_assume!(a < b);
            let y = log2_transform(&[a, b]).unwrap();
            prop_assert!(y[0] < y[1]);
        }

        #[test]
        fn affine_invariance_of_linear_columns(
            rows in proptest::collection::vec((0.0f64..1e4, 0.0f64..1e4, -20.0f64..40.0, 0.0f64..1e5), 2..40),
            a in 0.1f64..10.0,
            b in 0.0f64..100.0,
        ) {
            let coal: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let wind: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let tavg: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let btv: Vec<f64> = rows.iter().map(|r| r.3.floor()).collect();
            let spec = FeatureSpec::new(vec![Feature::CarbonRichMw, Feature::GreenMw, Feature::Tavg, Feature::Btv]);
            let tax = FuelTaxonomy::default_taxonomy();
            let base = hourly_table(&[("fuel:coal", coal.clone()), ("fuel:wind", wind.clone()),
                ("tavg", tavg.clone()), ("btv", btv.clone())]);
            let scaled = hourly_table(&[
                ("fuel:coal", coal.iter().map(|x| a * x + b).collect()),
                ("fuel:wind", wind.iter().map(|x| a * x + b).collect()),
                ("tavg", tavg.iter().map(|x| a * x + b).collect()),
                ("btv", btv.clone()),
            ]);
            let f1 = build_features(&base, &tax, &spec, None).unwrap();
            let f2 = build_features(&scaled, &tax, &spec, None).unwrap();
            for i in 0..f1.rows() {
                for j in 0..4 {
                    prop_assert!((f1.values.get(i, j) - f2.values.get(i, j)).abs() < 1e-9);
                }
            }
            prop_assert_eq!(f1.values.cols(), spec.features.len());
            prop_assert_eq!(f1.rows(), base.len());
        }
    }
}
