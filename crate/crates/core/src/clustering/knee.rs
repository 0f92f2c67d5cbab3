use serde::{Deserialize, Serialize};

use super::{ClusterError, Result};

/// Kneedle sensitivity.
pub const SENSITIVITY: f64 = 1.0;
const FLAT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KneeResult {
    pub chosen_k: usize,
    /// `(k, sse)` as supplied.
    pub curve: Vec<(usize, f64)>,
    /// Distance of the normalized curve below the chord, per point.
    pub difference: Vec<f64>,
    /// Kneedle threshold at the chosen point (`max - S * mean step`).
    pub threshold: f64,
    /// The supplied SSE rose somewhere; detection ran on the running minimum.
    pub monotone_violation: bool,
}

/// Kneedle on a decreasing convex SSE-vs-k curve.
///
/// Both axes are min-max normalized; the difference curve is
/// `(1 - y) - x`, i.e. how far the curve sags below the straight line from
/// the first to the last point. The knee is the maximum of that curve, with
/// ties resolved to the smallest k.
pub fn knee_locate(curve: &[(usize, f64)]) -> Result<KneeResult> {
    if curve.len() < 3 {
        return Err(ClusterError::TooFewPoints(curve.len()));
    }
    if curve.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(ClusterError::InvalidParameter("k must be strictly increasing".into()));
    }
    if curve.iter().any(|(_, s)| !s.is_finite()) {
        return Err(ClusterError::NonFiniteInput);
    }
    let mut monotone_violation = false;
    let mut envelope = Vec::with_capacity(curve.len());
    let mut running = f64::INFINITY;
    for (i, (_, s)) in curve.iter().enumerate() {
        if i > 0 && *s > curve[i - 1].1 {
            monotone_violation = true;
        }
        running = running.min(*s);
        envelope.push(running);
    }
    let k0 = curve[0].0 as f64;
    let k_span = (curve.last().unwrap().0 - curve[0].0) as f64;
    let y_max = envelope[0];
    let y_min = *envelope.last().unwrap();
    if y_max == y_min {
        return Err(ClusterError::NoKnee);
    }
    let difference: Vec<f64> = curve
        .iter()
        .zip(&envelope)
        .map(|((k, _), y)| {
            let xn = (*k as f64 - k0) / k_span;
            let yn = (y - y_min) / (y_max - y_min);
            (1.0 - yn) - xn
        })
        .collect();
    let mut best = 0;
    for (i, d) in difference.iter().enumerate() {
        if *d > difference[best] {
            best = i;
        }
    }
    if difference[best] <= FLAT || best == 0 || best == curve.len() - 1 {
        return Err(ClusterError::NoKnee);
    }
    let mean_step = 1.0 / (curve.len() - 1) as f64;
    Ok(KneeResult {
        chosen_k: curve[best].0,
        curve: curve.to_vec(),
        threshold: difference[best] - SENSITIVITY * mean_step,
        difference,
        monotone_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ks(sse: &[f64]) -> Vec<(usize, f64)> {
        sse.iter().enumerate().map(|(i, s)| (i + 1, *s)).collect()
    }

    #[test]
    fn hand_curve() {
        // normalized: x = i/5, y = (s-11)/89; difference peaks at k=3 (0.5551)
        let r = knee_locate(&ks(&[100.0, 40.0, 15.0, 13.0, 12.0, 11.0])).unwrap();
        assert_eq!(r.chosen_k, 3);
        let expected_k3 = (1.0 - 4.0 / 89.0) - 0.4;
        assert!((r.difference[2] - expected_k3).abs() < 1e-15);
        assert!(!r.monotone_violation);
    }

    #[test]
    fn straight_line_has_no_knee() {
        assert_eq!(
            knee_locate(&ks(&[60.0, 50.0, 40.0, 30.0, 20.0, 10.0])).unwrap_err(),
            ClusterError::NoKnee
        );
        assert_eq!(knee_locate(&ks(&[5.0, 5.0, 5.0])).unwrap_err(), ClusterError::NoKnee);
    }

    #[test]
    fn guards() {
        assert_eq!(knee_locate(&ks(&[2.0, 1.0])).unwrap_err(), ClusterError::TooFewPoints(2));
        assert!(knee_locate(&[(1, 3.0), (1, 2.0), (2, 1.0)]).is_err());
    }

    #[test]
    fn non_monotone_curve_flagged() {
        let r = knee_locate(&ks(&[100.0, 40.0, 15.0, 16.0, 12.0, 11.0])).unwrap();
        assert!(r.monotone_violation);
        assert_eq!(r.chosen_k, 3);
    }

    #[test]
    fn ties_pick_smallest_k() {
        // differences: k2 = 1 - 0.5 - 0.25, k3 = 1 - 0.25 - 0.5, both exactly 0.25
        let r = knee_locate(&ks(&[4.0, 2.0, 1.0, 0.4, 0.0])).unwrap();
        assert_eq!(r.difference[1], r.difference[2]);
        assert_eq!(r.chosen_k, 2);
    }
}
