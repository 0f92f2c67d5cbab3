//! Carbon accounting for cryptocurrency transaction volume against a grid fuel mix.
//!
//! The crate ingests hourly generation, transaction-volume, temperature and
//! reference-consumption series, aligns them to hourly/daily/weekly/monthly
//! buckets, clusters the buckets by carbon-rich vs. green-renewable reliance
//! and attributes lifecycle emissions to the transaction volume.

pub mod carbon;
pub mod clustering;
pub mod fixture;
pub mod ingest;
pub mod matrix;
pub mod pipeline;
pub mod preprocess;
pub mod report;
pub mod stats;
pub mod timeseries;

pub use carbon::{CarbonFootprintSeries, EmissionFactorTable, EnergyModel};
pub use clustering::{ClusterModel, KneeResult, Method};
pub use matrix::Matrix;
pub use ingest::{
    EnergySeries, FuelClass, FuelMixSeries, FuelTaxonomy, TemperatureSeries,
    TransactionVolumeSeries,
};
pub use preprocess::{FeatureMatrix, FeatureSpec, NormalizationParams};
pub use stats::CorrelationMatrix;
pub use timeseries::{Aggregator, AlignedTable, Resolution, TimeSeries};
