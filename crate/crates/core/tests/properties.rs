use std::collections::BTreeMap;

use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;

use gridmix::carbon::{cumulative, grid_carbon_intensity, CarbonFootprintSeries};
use gridmix::clustering::{agglomerative, kmeans, knee_locate, minibatch_kmeans, silhouette};
use gridmix::ingest::FuelMixRecord;
use gridmix::matrix::sq_dist;
use gridmix::stats::{correlation_matrix, pearson};
use gridmix::timeseries::{resample, Aggregator, Resolution, TimeSeries};
use gridmix::{EmissionFactorTable, Matrix};

fn points(max_rows: usize) -> impl Strategy<Value = Matrix> {
    (1usize..=3).prop_flat_map(move |d| {
        prop::collection::vec(prop::collection::vec(-100.0f64..100.0, d), 4..=max_rows)
            .prop_map(|rows| Matrix::from_rows(&rows))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kmeans_assigns_each_row_to_its_nearest_centroid(x in points(60), k in 1usize..4, seed in any::<u64>()) {
        let m = kmeans(&x, k, seed, 300, 0.0).unwrap();
        prop_assert_eq!(m.assignments.len(), x.rows());
        for (i, &a) in m.assignments.iter().enumerate() {
            let own = sq_dist(x.row(i), &m.centroids[a]);
            for c in &m.centroids {
                prop_assert!(own <= sq_dist(x.row(i), c) + 1e-9);
            }
        }
    }

    #[test]
    fn kmeans_is_deterministic(x in points(40), k in 1usize..4, seed in any::<u64>()) {
        prop_assert_eq!(kmeans(&x, k, seed, 300, 1e-6).unwrap(), kmeans(&x, k, seed, 300, 1e-6).unwrap());
        prop_assert_eq!(
            minibatch_kmeans(&x, k, seed, 8, 50).unwrap(),
            minibatch_kmeans(&x, k, seed, 8, 50).unwrap()
        );
    }

    #[test]
    fn agglomerative_uses_exactly_k_clusters(x in points(40), k in 1usize..4) {
        let m = agglomerative(&x, k).unwrap();
        prop_assert_eq!(m.k, k);
        prop_assert!(m.populations().iter().all(|p| *p > 0));
    }

    #[test]
    fn silhouette_in_range(x in points(40), seed in any::<u64>()) {
        let m = kmeans(&x, 2, seed, 300, 0.0).unwrap();
        if m.populations().iter().all(|p| *p > 0) {
            let s = silhouette(&x, &m.assignments).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn knee_lies_inside_the_curve(mut drops in prop::collection::vec(0.0f64..100.0, 3..10)) {
        drops.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut sse = 1000.0;
        let curve: Vec<(usize, f64)> = drops
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let point = (i + 1, sse);
                sse -= d;
                point
            })
            .collect();
        if let Ok(r) = knee_locate(&curve) {
            prop_assert!(r.chosen_k >= 1 && r.chosen_k <= curve.len());
            prop_assert!(!r.monotone_violation);
        }
    }

    #[test]
    fn pearson_symmetric_and_bounded(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..50)) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let (Ok(a), Ok(b)) = (pearson(&x, &y), pearson(&y, &x)) {
            prop_assert_eq!(a, b);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn correlation_matrix_symmetric(cols in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 12), 2..5)) {
        let names: Vec<String> = (0..cols.len()).map(|i| format!("c{i}")).collect();
        let m = correlation_matrix(&names, &cols).unwrap();
        for i in 0..cols.len() {
            for j in 0..cols.len() {
                prop_assert_eq!(m.values[i][j], m.values[j][i]);
            }
        }
    }

    #[test]
    fn daily_resample_is_idempotent_and_conserves(values in prop::collection::vec(0.0f64..1e4, 1..24 * 20), offset in 0i64..24) {
        let t0 = Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap() + Duration::hours(offset);
        let hourly = TimeSeries::from_pairs(
            "v",
            Resolution::Hourly,
            values.iter().enumerate().map(|(i, v)| (t0 + Duration::hours(i as i64), *v)),
        );
        let daily = resample(&hourly, Resolution::Daily, Aggregator::Sum).unwrap();
        let again = resample(&daily.series, Resolution::Daily, Aggregator::Sum).unwrap();
        prop_assert_eq!(&again.series.samples, &daily.series.samples);
        let (h, d) = (hourly.total(), daily.series.total());
        prop_assert!((h - d).abs() <= 1e-9 * h.max(1.0));
        prop_assert_eq!(daily.counts.iter().sum::<usize>(), values.len());
    }

    #[test]
    fn intensity_within_present_factor_range(mix in prop::collection::btree_map(
        prop::sample::select(vec!["coal", "natural gas", "wind", "solar", "nuclear", "hydro", "biomass"]),
        0.0f64..5000.0,
        1..7,
    )) {
        let table = EmissionFactorTable::default_table();
        let generation: BTreeMap<String, f64> = mix.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let present: Vec<f64> = generation
            .iter()
            .filter(|(_, mw)| **mw > 0.0)
            .map(|(f, _)| table.factor(f).unwrap())
            .collect();
        let record = FuelMixRecord { timestamp: Utc::now(), generation };
        match grid_carbon_intensity(&record, &table) {
            Ok(ci) => {
                let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo <= ci && ci <= hi);
            }
            Err(_) => prop_assert!(present.is_empty()),
        }
    }

    #[test]
    fn cumulative_is_a_running_sum(values in prop::collection::vec(0.0f64..1e6, 1..200)) {
        let t0 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        let series = CarbonFootprintSeries::from_pairs(
            values.iter().enumerate().map(|(i, v)| (t0 + Duration::hours(i as i64), *v)),
        );
        let c = cumulative(&series).cumulative.unwrap();
        prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*c.last().unwrap(), series.values().iter().sum::<f64>());
    }
}
