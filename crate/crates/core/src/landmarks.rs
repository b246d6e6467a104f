//! End-of-life and knee-point detection on capacity curves.
//!
//! EOL is the first sampled cycle at which capacity has dropped to a fraction
//! of nominal. The knee is found by fitting one least-squares line to each of
//! the two degradation stages over every admissible split and intersecting
//! the pair with the lowest total squared residual.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{CapacityCurve, Dataset};

/// Default EOL threshold as a fraction of nominal capacity.
pub const DEFAULT_EOL_THRESHOLD: f64 = 0.8;
/// Knee detection needs at least 3 points per fitted line.
pub const MIN_KNEE_POINTS: usize = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LandmarkError {
    #[error("knee detection needs at least {MIN_KNEE_POINTS} points, got {0}")]
    InsufficientPoints(usize),
    #[error("EOL threshold must lie in (0, 1), got {0}")]
    BadThreshold(f64),
}

/// Detected prediction targets for one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmarks {
    pub eol_cycle: Option<u32>,
    pub knee_cycle: Option<u32>,
    pub eol_threshold_fraction: f64,
}

/// First sampled cycle at which capacity is at or below
/// `threshold_fraction * nominal`, or `None` when the curve never crosses.
pub fn detect_eol(curve: &CapacityCurve, threshold_fraction: f64) -> Option<u32> {
    let limit = threshold_fraction * curve.nominal_capacity();
    curve
        .capacities()
        .iter()
        .position(|&q| q <= limit)
        .map(|k| curve.cycles()[k])
}

/// Prefix sums for O(1) least-squares line fits over index ranges.
struct SegmentFits {
    sx: Vec<f64>,
    sy: Vec<f64>,
    sxx: Vec<f64>,
    sxy: Vec<f64>,
    syy: Vec<f64>,
}

/// A fitted line `y = intercept + slope * x` with its squared residual.
struct LineFit {
    slope: f64,
    intercept: f64,
    ssr: f64,
}

impl SegmentFits {
    fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let mut f = Self {
            sx: vec![0.0; n + 1],
            sy: vec![0.0; n + 1],
            sxx: vec![0.0; n + 1],
            sxy: vec![0.0; n + 1],
            syy: vec![0.0; n + 1],
        };
        for i in 0..n {
            f.sx[i + 1] = f.sx[i] + x[i];
            f.sy[i + 1] = f.sy[i] + y[i];
            f.sxx[i + 1] = f.sxx[i] + x[i] * x[i];
            f.sxy[i + 1] = f.sxy[i] + x[i] * y[i];
            f.syy[i + 1] = f.syy[i] + y[i] * y[i];
        }
        f
    }

    /// Least-squares line over the inclusive index range `[a, b]`.
    fn fit(&self, a: usize, b: usize) -> LineFit {
        let n = (b - a + 1) as f64;
        let sx = self.sx[b + 1] - self.sx[a];
        let sy = self.sy[b + 1] - self.sy[a];
        let sxx = self.sxx[b + 1] - self.sxx[a];
        let sxy = self.sxy[b + 1] - self.sxy[a];
        let syy = self.syy[b + 1] - self.syy[a];
        let cxx = sxx - sx * sx / n;
        let cxy = sxy - sx * sy / n;
        let cyy = syy - sy * sy / n;
        let slope = cxy / cxx;
        let intercept = (sy - slope * sx) / n;
        LineFit { slope, intercept, ssr: (cyy - slope * cxy).max(0.0) }
    }
}

/// Knee point via exhaustive two-segment least-squares breakpoint search.
///
/// Returns `Ok(None)` when the fitted stage slopes coincide (no knee exists)
/// or the intersection falls outside the curve's cycle span.
pub fn detect_knee(curve: &CapacityCurve) -> Result<Option<u32>, LandmarkError> {
    let len = curve.len();
    if len < MIN_KNEE_POINTS {
        return Err(LandmarkError::InsufficientPoints(len));
    }
    // Center both axes; shifts change neither the split choice nor the
    // intersection abscissa and keep the running sums well conditioned.
    let x_mean = curve.cycles().iter().map(|&c| c as f64).sum::<f64>() / len as f64;
    let y_mean = curve.capacities().iter().sum::<f64>() / len as f64;
    let x: Vec<f64> = curve.cycles().iter().map(|&c| c as f64 - x_mean).collect();
    let y: Vec<f64> = curve.capacities().iter().map(|&q| q - y_mean).collect();
    let fits = SegmentFits::new(&x, &y);

    let mut best: Option<(f64, usize)> = None;
    for split in 2..=len - 3 {
        let total = fits.fit(0, split).ssr + fits.fit(split, len - 1).ssr;
        if best.is_none_or(|(ssr, _)| total < ssr) {
            best = Some((total, split));
        }
    }
    let (_, split) = best.expect("len >= 6 admits at least one split");
    let early = fits.fit(0, split);
    let late = fits.fit(split, len - 1);

    let slope_gap = early.slope - late.slope;
    if slope_gap.abs() <= 1e-12 {
        return Ok(None);
    }
    let crossing = (late.intercept - early.intercept) / slope_gap + x_mean;
    if crossing < curve.first_cycle() as f64 || crossing > curve.last_cycle() as f64 {
        return Ok(None);
    }
    Ok(Some(crossing.round() as u32))
}

/// Per-cell landmark labels plus any per-cell detector failures.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelReport {
    pub labels: BTreeMap<String, Landmarks>,
    pub failures: Vec<(String, LandmarkError)>,
}

/// Labels every cell in the dataset; a failing detector marks the landmark
/// absent for that cell and records the failure without aborting the batch.
pub fn label_dataset(dataset: &Dataset, threshold_fraction: f64) -> Result<LabelReport, LandmarkError> {
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return Err(LandmarkError::BadThreshold(threshold_fraction));
    }
    let mut labels = BTreeMap::new();
    let mut failures = Vec::new();
    for curve in dataset.curves() {
        let eol_cycle = detect_eol(curve, threshold_fraction);
        let knee_cycle = match detect_knee(curve) {
            Ok(k) => k,
            Err(e) => {
                failures.push((curve.cell_id().to_string(), e));
                None
            }
        };
        labels.insert(
            curve.cell_id().to_string(),
            Landmarks { eol_cycle, knee_cycle, eol_threshold_fraction: threshold_fraction },
        );
    }
    Ok(LabelReport { labels, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdg::{apply_params, SdgParams};

    fn curve(cycles: Vec<u32>, caps: Vec<f64>, nominal: f64) -> CapacityCurve {
        CapacityCurve::new("c", cycles, caps, nominal).unwrap()
    }

    /// Two-slope test curve: fade at `s1` until `knee`, then at `s1 + s2`.
    fn two_slope(len: u32, knee: u32, q0: f64, s1: f64, s2: f64, nominal: f64) -> CapacityCurve {
        let cycles: Vec<u32> = (1..=len).collect();
        let caps = cycles
            .iter()
            .map(|&c| q0 - s1 * c as f64 - s2 * (c.saturating_sub(knee)) as f64)
            .collect();
        curve(cycles, caps, nominal)
    }

    #[test]
    fn eol_picks_first_sample_at_or_below_threshold() {
        let c = curve(vec![98, 99, 100], vec![1.70, 1.62, 1.58], 2.0);
        assert_eq!(detect_eol(&c, 0.8), Some(100));
    }

    #[test]
    fn eol_not_reached_when_floored_above_threshold() {
        let c = curve(vec![1, 2, 3], vec![2.0, 1.95, 1.90], 2.0);
        assert_eq!(detect_eol(&c, 0.8), None);
    }

    #[test]
    fn eol_supports_the_deeper_seventy_percent_threshold() {
        // 2.0 Ah nominal at 70% crosses at 1.4 Ah.
        let c = curve(vec![1, 50, 83, 90], vec![2.0, 1.6, 1.39, 1.2], 2.0);
        assert_eq!(detect_eol(&c, 0.7), Some(83));
        assert_eq!(detect_eol(&c, 0.8), Some(50));
    }

    #[test]
    fn eol_is_monotone_in_threshold() {
        let c = two_slope(1000, 600, 2.0, 2e-4, 1e-3, 2.0);
        let mut prev: Option<u32> = None;
        for t in [0.95, 0.9, 0.85, 0.8, 0.75] {
            let e = detect_eol(&c, t);
            if let (Some(p), Some(now)) = (prev, e) {
                assert!(now >= p, "threshold {t}: {now} < {p}");
            }
            if e.is_some() {
                prev = e;
            }
        }
    }

    #[test]
    fn knee_recovers_constructed_breakpoint() {
        let c = two_slope(800, 500, 2.0, 0.001, 0.009, 2.0);
        let knee = detect_knee(&c).unwrap().unwrap();
        assert!((knee as i64 - 500).abs() <= 2, "knee {knee}");
    }

    #[test]
    fn knee_absent_on_straight_line() {
        let cycles: Vec<u32> = (1..=50).collect();
        let caps: Vec<f64> = cycles.iter().map(|&c| 2.0 - 1e-3 * c as f64).collect();
        assert_eq!(detect_knee(&curve(cycles, caps, 2.0)).unwrap(), None);
    }

    #[test]
    fn knee_needs_six_points() {
        let c = curve(vec![1, 2, 3, 4, 5], vec![2.0, 1.9, 1.8, 1.7, 1.6], 2.0);
        assert_eq!(detect_knee(&c), Err(LandmarkError::InsufficientPoints(5)));
    }

    #[test]
    fn knee_is_invariant_under_vertical_offset() {
        let c = two_slope(700, 420, 2.0, 5e-4, 4e-3, 2.0);
        let shifted = curve(
            c.cycles().to_vec(),
            c.capacities().iter().map(|q| q + 0.35).collect(),
            2.0,
        );
        assert_eq!(detect_knee(&c).unwrap(), detect_knee(&shifted).unwrap());
    }

    #[test]
    fn knee_scales_with_elongation() {
        let c = two_slope(900, 500, 2.0, 3e-4, 3e-3, 2.0);
        let base = detect_knee(&c).unwrap().unwrap();
        for e in [0.8, 1.2] {
            let stretched =
                apply_params(&c, &SdgParams { offset: 0.0, slope: 0.0, elongation: e }).unwrap();
            let knee = detect_knee(&stretched).unwrap().unwrap();
            let expected = e * base as f64;
            assert!(
                (knee as f64 - expected).abs() <= 2.0 + e,
                "e={e}: knee {knee} vs {expected}"
            );
        }
    }

    #[test]
    fn label_dataset_isolates_per_cell_failures() {
        let good = two_slope(100, 60, 2.0, 1e-3, 8e-3, 2.0).with_cell_id("good");
        let linear = {
            let cycles: Vec<u32> = (1..=40).collect();
            let caps = cycles.iter().map(|&c| 2.0 - 1e-3 * c as f64).collect();
            curve(cycles, caps, 2.0).with_cell_id("linear")
        };
        let short = curve(vec![1, 2, 3], vec![2.0, 1.9, 1.5], 2.0).with_cell_id("short");
        let ds = Dataset::new("d", vec![good, linear, short], None).unwrap();
        let report = label_dataset(&ds, 0.8).unwrap();
        assert_eq!(report.labels.len(), 3);
        assert!(report.labels["good"].knee_cycle.is_some());
        assert!(report.labels["good"].eol_cycle.is_some());
        assert_eq!(report.labels["linear"].knee_cycle, None);
        assert_eq!(report.labels["short"].knee_cycle, None);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].0, "short");
    }

    #[test]
    fn label_dataset_empty_and_bad_threshold() {
        let ds = Dataset::new("d", vec![], None).unwrap();
        assert!(label_dataset(&ds, 0.8).unwrap().labels.is_empty());
        assert!(matches!(label_dataset(&ds, 1.0), Err(LandmarkError::BadThreshold(_))));
    }
}
