//! Synthetic capacity-fade curve generation.
//!
//! A synthetic curve is a seed curve pushed through three parameters:
//! a vertical *offset* (Ah), a linearly ramped *slope* correction (Ah), and a
//! cycle-axis *elongation* (dimensionless stretch). Parameter statistics are
//! estimated from ordered pairs of seed cells, sampling ranges are derived
//! from those statistics, and batches of new curves are drawn uniformly from
//! the ranges under a deterministic stream per draw.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{CapacityCurve, Dataset, Violation};
use crate::rng;

/// Default number of histogram bins for pairwise parameter statistics.
pub const DEFAULT_HISTOGRAM_BINS: usize = 20;
/// Default elongation sampling half-width (range 1 ± 0.25).
pub const DEFAULT_ELONGATION_HALFWIDTH: f64 = 0.25;
/// Default retry budget per synthetic curve before generation fails.
pub const DEFAULT_RETRY_BUDGET: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdgError {
    #[error("cycle {cycle} outside curve {cell_id:?} span [{first}, {last}]")]
    OutOfRange { cell_id: String, cycle: u32, first: u32, last: u32 },
    #[error("slope reference cycle must be 0 (disabled) or >= 2, got {0}")]
    BadSlopeReference(u32),
    #[error("no group has at least 2 curves; pairwise statistics need 2")]
    InsufficientData,
    #[error("elongation half-width must lie in (0, 1), got {0}")]
    BadHalfwidth(f64),
    #[error("invalid parameter ranges: {0}")]
    BadRanges(String),
    #[error("invalid synthesis parameters: offset/slope must be finite, elongation > 0")]
    BadParams,
    #[error("synthesis produced a degenerate curve: {0}")]
    DegenerateOutput(String),
    #[error("no seed curves supplied")]
    NoSeeds,
    #[error("retry budget ({budget}) exhausted for seed {cell_id:?} at draw {draw}")]
    GenerationFailure { cell_id: String, draw: usize, budget: usize },
}

/// One (offset, slope, elongation) triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdgParams {
    pub offset: f64,
    pub slope: f64,
    pub elongation: f64,
}

impl SdgParams {
    pub fn identity() -> Self {
        Self { offset: 0.0, slope: 0.0, elongation: 1.0 }
    }

    pub fn is_valid(&self) -> bool {
        self.offset.is_finite()
            && self.slope.is_finite()
            && self.elongation.is_finite()
            && self.elongation > 0.0
    }
}

/// Per-dataset sampling bounds for the three parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub offset_min: f64,
    pub offset_max: f64,
    pub slope_min: f64,
    pub slope_max: f64,
    pub elongation_min: f64,
    pub elongation_max: f64,
    /// Cycle used for the slope statistic; 0 disables the slope parameter.
    pub slope_reference_cycle: u32,
}

impl ParamRanges {
    pub fn validate(&self) -> Result<(), SdgError> {
        let ordered = self.offset_min <= self.offset_max
            && self.slope_min <= self.slope_max
            && self.elongation_min <= self.elongation_max;
        if !ordered {
            return Err(SdgError::BadRanges("min exceeds max".into()));
        }
        if !(self.elongation_min > 0.0) {
            return Err(SdgError::BadRanges("elongation lower bound must be > 0".into()));
        }
        if self.slope_reference_cycle == 1 {
            return Err(SdgError::BadSlopeReference(1));
        }
        Ok(())
    }
}

/// Equal-width histogram summary of one parameter's pairwise samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges; a single `[v, v]` pair when all samples coincide.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn build(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            return Self { edges: vec![lo, hi], counts: vec![values.len() as u64] };
        }
        let bins = bins.max(1);
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let ix = (((v - lo) / width) as usize).min(bins - 1);
            counts[ix] += 1;
        }
        Self { edges, counts }
    }
}

/// All ordered-pair parameter samples over a dataset plus their histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseStats {
    pub samples: Vec<SdgParams>,
    pub slope_reference_cycle: u32,
    pub offset_histogram: Histogram,
    pub slope_histogram: Histogram,
    pub elongation_histogram: Histogram,
}

/// Estimates the synthesis parameters mapping curve `j` onto curve `i`.
///
/// Offset compares initial capacities, slope compares the capacity drop from
/// each curve's first point to the reference cycle `n` (0 disables the slope
/// statistic), and elongation is the ratio of final cycle numbers.
pub fn estimate_params(
    curve_i: &CapacityCurve,
    curve_j: &CapacityCurve,
    n: u32,
) -> Result<SdgParams, SdgError> {
    if n == 1 {
        return Err(SdgError::BadSlopeReference(1));
    }
    let offset = curve_i.capacities()[0] - curve_j.capacities()[0];
    let slope = if n == 0 {
        0.0
    } else {
        let drop_i = capacity_at(curve_i, n)? - curve_i.capacities()[0];
        let drop_j = capacity_at(curve_j, n)? - curve_j.capacities()[0];
        drop_i - drop_j
    };
    let elongation = curve_i.last_cycle() as f64 / curve_j.last_cycle() as f64;
    Ok(SdgParams { offset, slope, elongation })
}

fn capacity_at(curve: &CapacityCurve, cycle: u32) -> Result<f64, SdgError> {
    curve.capacity_at(cycle).map_err(|_| SdgError::OutOfRange {
        cell_id: curve.cell_id().to_string(),
        cycle,
        first: curve.first_cycle(),
        last: curve.last_cycle(),
    })
}

/// Collects parameter samples for every ordered pair of distinct cells,
/// within each aging condition when requested (and condition groups exist).
pub fn pairwise_stats(
    dataset: &Dataset,
    n: u32,
    within_condition_only: bool,
    histogram_bins: usize,
) -> Result<PairwiseStats, SdgError> {
    let groups: Vec<Vec<&CapacityCurve>> = match dataset.condition_groups() {
        Some(groups) if within_condition_only => groups
            .values()
            .map(|ids| ids.iter().filter_map(|id| dataset.get(id)).collect())
            .collect(),
        _ => vec![dataset.curves().iter().collect()],
    };

    let mut samples = Vec::new();
    for group in groups.iter().filter(|g| g.len() >= 2) {
        for (a, ci) in group.iter().enumerate() {
            for (b, cj) in group.iter().enumerate() {
                if a != b {
                    samples.push(estimate_params(ci, cj, n)?);
                }
            }
        }
    }
    if samples.is_empty() {
        return Err(SdgError::InsufficientData);
    }

    let col = |f: fn(&SdgParams) -> f64| -> Vec<f64> { samples.iter().map(f).collect() };
    Ok(PairwiseStats {
        offset_histogram: Histogram::build(&col(|p| p.offset), histogram_bins),
        slope_histogram: Histogram::build(&col(|p| p.slope), histogram_bins),
        elongation_histogram: Histogram::build(&col(|p| p.elongation), histogram_bins),
        samples,
        slope_reference_cycle: n,
    })
}

/// Sampling ranges: offset and slope span the observed pairwise extremes,
/// elongation is `1 ± elongation_halfwidth`.
pub fn derive_ranges(stats: &PairwiseStats, elongation_halfwidth: f64) -> Result<ParamRanges, SdgError> {
    if stats.samples.is_empty() {
        return Err(SdgError::InsufficientData);
    }
    if !(elongation_halfwidth > 0.0 && elongation_halfwidth < 1.0) {
        return Err(SdgError::BadHalfwidth(elongation_halfwidth));
    }
    let fold = |f: fn(&SdgParams) -> f64| {
        stats
            .samples
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (offset_min, offset_max) = fold(|p| p.offset);
    let (slope_min, slope_max) = fold(|p| p.slope);
    let ranges = ParamRanges {
        offset_min,
        offset_max,
        slope_min,
        slope_max,
        elongation_min: 1.0 - elongation_halfwidth,
        elongation_max: 1.0 + elongation_halfwidth,
        slope_reference_cycle: stats.slope_reference_cycle,
    };
    ranges.validate()?;
    Ok(ranges)
}

fn uniform_inclusive(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws one parameter triple, each coordinate uniform over its closed range.
pub fn sample_params(ranges: &ParamRanges, rng: &mut impl Rng) -> SdgParams {
    SdgParams {
        offset: uniform_inclusive(rng, ranges.offset_min, ranges.offset_max),
        slope: uniform_inclusive(rng, ranges.slope_min, ranges.slope_max),
        elongation: uniform_inclusive(rng, ranges.elongation_min, ranges.elongation_max),
    }
}

/// Applies one parameter triple to a seed curve.
///
/// Capacities get the constant offset plus the index-linear slope ramp; cycle
/// numbers are stretched by the index-linear elongation ramp anchored at 1 so
/// the first cycle never moves. The stretched curve is then resampled by
/// linear interpolation onto integer cycles from the seed's first cycle to
/// the stretched final cycle rounded half away from zero.
pub fn apply_params(seed: &CapacityCurve, p: &SdgParams) -> Result<CapacityCurve, SdgError> {
    if !p.is_valid() {
        return Err(SdgError::BadParams);
    }
    let len = seed.len();
    let last_index = (len - 1) as f64;
    let ramp = |k: usize| k as f64 / last_index;

    let shifted: Vec<f64> = seed
        .capacities()
        .iter()
        .enumerate()
        .map(|(k, &q)| q + p.offset + p.slope * ramp(k))
        .collect();
    let stretched: Vec<f64> = seed
        .cycles()
        .iter()
        .enumerate()
        .map(|(k, &c)| c as f64 * (1.0 + (p.elongation - 1.0) * ramp(k)))
        .collect();

    if stretched.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SdgError::DegenerateOutput(
            "stretched cycle numbers are not strictly increasing".into(),
        ));
    }
    let first_cycle = seed.first_cycle();
    let final_cycle = stretched[len - 1].round();
    if final_cycle < (first_cycle + 1) as f64 {
        return Err(SdgError::DegenerateOutput(format!(
            "stretched final cycle {final_cycle} leaves fewer than 2 integer cycles"
        )));
    }

    let cycles: Vec<u32> = (first_cycle..=final_cycle as u32).collect();
    let capacities = resample_to_integer_cycles(&stretched, &shifted, &cycles);
    for &q in &capacities {
        if !q.is_finite() || q <= 0.0 {
            return Err(SdgError::DegenerateOutput(format!("non-positive capacity {q}")));
        }
    }

    CapacityCurve::new(seed.cell_id(), cycles, capacities, seed.nominal_capacity())
        .map_err(|v: Violation| SdgError::DegenerateOutput(v.to_string()))
}

/// Linear interpolation of `(xs, ys)` at integer targets via one merge scan.
/// Targets at a knot take the knot value exactly; a target past the final
/// knot (at most the rounding margin of half a cycle) extends the last
/// segment linearly.
fn resample_to_integer_cycles(xs: &[f64], ys: &[f64], targets: &[u32]) -> Vec<f64> {
    let mut out = Vec::with_capacity(targets.len());
    let mut k = 0usize;
    for &t in targets {
        let tf = t as f64;
        while k + 2 < xs.len() && xs[k + 1] <= tf {
            k += 1;
        }
        if tf == xs[k] {
            out.push(ys[k]);
        } else if tf == xs[k + 1] {
            out.push(ys[k + 1]);
        } else {
            let t01 = (tf - xs[k]) / (xs[k + 1] - xs[k]);
            out.push(ys[k] + t01 * (ys[k + 1] - ys[k]));
        }
    }
    out
}

/// Provenance of one synthetic curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProvenance {
    pub synthetic_id: String,
    pub seed_cell_id: String,
    pub offset: f64,
    pub slope: f64,
    pub elongation: f64,
    pub master_seed: u64,
    pub draw_index: usize,
}

/// A generated batch and the provenance of every curve in it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub curves: Vec<CapacityCurve>,
    pub provenance: Vec<SyntheticProvenance>,
}

/// Generates `count` synthetic curves from uniformly chosen seeds.
///
/// Each draw derives its own RNG stream from the master seed, so a batch is
/// reproducible and independent of generation order. Degenerate outputs are
/// rejected and the parameters redrawn, up to `DEFAULT_RETRY_BUDGET` attempts
/// per draw.
pub fn generate_batch(
    seeds: &[CapacityCurve],
    ranges: &ParamRanges,
    count: usize,
    master_seed: u64,
) -> Result<SyntheticBatch, SdgError> {
    generate_batch_with_budget(seeds, ranges, count, master_seed, DEFAULT_RETRY_BUDGET)
}

pub fn generate_batch_with_budget(
    seeds: &[CapacityCurve],
    ranges: &ParamRanges,
    count: usize,
    master_seed: u64,
    retry_budget: usize,
) -> Result<SyntheticBatch, SdgError> {
    if seeds.is_empty() {
        return Err(SdgError::NoSeeds);
    }
    ranges.validate()?;
    let width = count.max(1).to_string().len().max(5);
    let mut curves = Vec::with_capacity(count);
    let mut provenance = Vec::with_capacity(count);
    for draw in 0..count {
        let mut stream = rng::derive(master_seed, "sdg/batch", &[draw as u64]);
        let seed = &seeds[stream.random_range(0..seeds.len())];
        let mut produced = None;
        for _ in 0..retry_budget {
            let p = sample_params(ranges, &mut stream);
            match apply_params(seed, &p) {
                Ok(curve) => {
                    produced = Some((curve, p));
                    break;
                }
                Err(SdgError::DegenerateOutput(_)) => continue,
                Err(other) => return Err(other),
            }
        }
        let (curve, p) = produced.ok_or_else(|| SdgError::GenerationFailure {
            cell_id: seed.cell_id().to_string(),
            draw,
            budget: retry_budget,
        })?;
        let synthetic_id = format!("syn-{draw:0width$}");
        provenance.push(SyntheticProvenance {
            synthetic_id: synthetic_id.clone(),
            seed_cell_id: seed.cell_id().to_string(),
            offset: p.offset,
            slope: p.slope,
            elongation: p.elongation,
            master_seed,
            draw_index: draw,
        });
        curves.push(curve.with_cell_id(synthetic_id));
    }
    Ok(SyntheticBatch { curves, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(id: &str, cycles: Vec<u32>, caps: Vec<f64>) -> CapacityCurve {
        CapacityCurve::new(id, cycles, caps, 2.0).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn estimate_matches_hand_worked_values() {
        // o = 2.00 - 1.95, s = (1.80 - 2.00) - (1.70 - 1.95), e = 1000 / 500.
        let i = curve("i", vec![1, 300, 1000], vec![2.00, 1.80, 1.75]);
        let j = curve("j", vec![1, 300, 500], vec![1.95, 1.70, 1.65]);
        let p = estimate_params(&i, &j, 300).unwrap();
        assert!(close(p.offset, 0.05, 1e-12));
        assert!(close(p.slope, 0.05, 1e-12));
        assert!(close(p.elongation, 2.0, 1e-12));
    }

    #[test]
    fn estimate_on_identical_curves_is_identity() {
        let c = curve("c", vec![1, 2, 3, 4], vec![2.0, 1.9, 1.85, 1.8]);
        let p = estimate_params(&c, &c, 3).unwrap();
        assert_eq!(p, SdgParams { offset: 0.0, slope: 0.0, elongation: 1.0 });
    }

    #[test]
    fn estimate_with_disabled_slope_reference() {
        let i = curve("i", vec![1, 2, 3], vec![2.0, 1.5, 1.0]);
        let j = curve("j", vec![1, 2, 3], vec![1.9, 1.8, 1.7]);
        assert_eq!(estimate_params(&i, &j, 0).unwrap().slope, 0.0);
    }

    #[test]
    fn estimate_rejects_reference_beyond_span() {
        let i = curve("i", vec![1, 2, 3], vec![2.0, 1.9, 1.8]);
        let j = curve("j", vec![1, 2], vec![2.0, 1.9]);
        assert!(matches!(
            estimate_params(&i, &j, 3),
            Err(SdgError::OutOfRange { cycle: 3, .. })
        ));
    }

    #[test]
    fn estimate_is_antisymmetric() {
        let i = curve("i", vec![1, 200, 900], vec![2.02, 1.83, 1.55]);
        let j = curve("j", vec![1, 250, 700], vec![1.97, 1.85, 1.60]);
        let ij = estimate_params(&i, &j, 200).unwrap();
        let ji = estimate_params(&j, &i, 200).unwrap();
        assert_eq!(ij.offset, -ji.offset);
        assert_eq!(ij.slope, -ji.slope);
        assert!(close(ij.elongation, 1.0 / ji.elongation, 1e-15));
    }

    #[test]
    fn pairwise_stats_counts_ordered_pairs() {
        let mk = |id: &str| curve(id, vec![1, 2, 3], vec![2.0, 1.9, 1.8]);
        let ds = Dataset::new("d", (0..5).map(|i| mk(&format!("c{i}"))).collect(), None).unwrap();
        let stats = pairwise_stats(&ds, 2, false, 10).unwrap();
        assert_eq!(stats.samples.len(), 5 * 4);
        // Identical curves: every sample is the identity triple.
        assert!(stats.samples.iter().all(|p| *p == SdgParams::identity()));
    }

    #[test]
    fn pairwise_stats_two_curves_mirror_each_other() {
        let i = curve("i", vec![1, 2, 4], vec![2.0, 1.9, 1.8]);
        let j = curve("j", vec![1, 2, 8], vec![1.9, 1.85, 1.7]);
        let ds = Dataset::new("d", vec![i, j], None).unwrap();
        let stats = pairwise_stats(&ds, 2, false, 10).unwrap();
        assert_eq!(stats.samples.len(), 2);
        let (a, b) = (stats.samples[0], stats.samples[1]);
        assert_eq!(a.offset, -b.offset);
        assert_eq!(a.slope, -b.slope);
        assert!(close(a.elongation * b.elongation, 1.0, 1e-15));
    }

    #[test]
    fn pairwise_stats_needs_two_curves_somewhere() {
        let ds = Dataset::new("d", vec![curve("a", vec![1, 2], vec![2.0, 1.9])], None).unwrap();
        assert_eq!(pairwise_stats(&ds, 0, false, 10), Err(SdgError::InsufficientData));
    }

    #[test]
    fn derive_ranges_pins_elongation_halfwidth() {
        let mk = |id: &str| curve(id, vec![1, 2, 3], vec![2.0, 1.9, 1.8]);
        let ds = Dataset::new("d", vec![mk("a"), mk("b")], None).unwrap();
        let stats = pairwise_stats(&ds, 2, false, 10).unwrap();
        let r = derive_ranges(&stats, 0.25).unwrap();
        assert_eq!((r.elongation_min, r.elongation_max), (0.75, 1.25));
        let r = derive_ranges(&stats, 0.10).unwrap();
        assert!(close(r.elongation_min, 0.90, 1e-15) && close(r.elongation_max, 1.10, 1e-15));
        // Identical seeds collapse offset/slope ranges to [0, 0].
        assert_eq!((r.offset_min, r.offset_max), (0.0, 0.0));
        assert_eq!((r.slope_min, r.slope_max), (0.0, 0.0));
        assert!(matches!(derive_ranges(&stats, 0.0), Err(SdgError::BadHalfwidth(_))));
        assert!(matches!(derive_ranges(&stats, 1.0), Err(SdgError::BadHalfwidth(_))));
    }

    #[test]
    fn sample_params_degenerate_range_is_exact() {
        let ranges = ParamRanges {
            offset_min: 0.125,
            offset_max: 0.125,
            slope_min: -0.5,
            slope_max: -0.5,
            elongation_min: 1.0,
            elongation_max: 1.0,
            slope_reference_cycle: 0,
        };
        let mut stream = rng::derive(1, "t", &[]);
        let p = sample_params(&ranges, &mut stream);
        assert_eq!(p, SdgParams { offset: 0.125, slope: -0.5, elongation: 1.0 });
    }

    #[test]
    fn sample_params_is_deterministic_and_uniform_in_the_mean() {
        let ranges = ParamRanges {
            offset_min: -0.1,
            offset_max: 0.1,
            slope_min: 0.0,
            slope_max: 0.0,
            elongation_min: 0.75,
            elongation_max: 1.25,
            slope_reference_cycle: 0,
        };
        let draws = |seed: u64| -> Vec<SdgParams> {
            let mut stream = rng::derive(seed, "t", &[]);
            (0..100_000).map(|_| sample_params(&ranges, &mut stream)).collect()
        };
        let a = draws(9);
        assert_eq!(a, draws(9));
        let mean = a.iter().map(|p| p.elongation).sum::<f64>() / a.len() as f64;
        assert!(close(mean, 1.0, 0.005), "elongation mean {mean}");
        assert!(a.iter().all(|p| (0.75..=1.25).contains(&p.elongation)));
    }

    #[test]
    fn apply_identity_returns_the_seed() {
        let c = curve("c", vec![1, 2, 3], vec![2.0, 1.9, 1.8]);
        let out = apply_params(&c, &SdgParams::identity()).unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn apply_pure_offset_shifts_capacities() {
        let c = curve("c", vec![1, 2, 3], vec![2.0, 1.9, 1.8]);
        let out = apply_params(&c, &SdgParams { offset: 0.1, slope: 0.0, elongation: 1.0 }).unwrap();
        assert_eq!(out.cycles(), &[1, 2, 3]);
        for (q_out, q_in) in out.capacities().iter().zip(c.capacities()) {
            assert!(close(q_out - q_in, 0.1, 1e-15));
        }
    }

    #[test]
    fn apply_elongation_matches_hand_interpolation() {
        // Stretch [1,2,3] by e=2: stretched cycles [1,3,6], integer grid 1..=6.
        let c = curve("c", vec![1, 2, 3], vec![2.0, 1.9, 1.8]);
        let out = apply_params(&c, &SdgParams { offset: 0.0, slope: 0.0, elongation: 2.0 }).unwrap();
        assert_eq!(out.cycles(), &[1, 2, 3, 4, 5, 6]);
        let third = 0.1 / 3.0;
        let expected = [2.0, 1.95, 1.9, 1.9 - third, 1.9 - 2.0 * third, 1.8];
        for (got, want) in out.capacities().iter().zip(expected) {
            assert!(close(*got, want, 1e-12), "{got} vs {want}");
        }
    }

    #[test]
    fn apply_slope_ramp_is_index_linear() {
        let c = curve("c", vec![1, 2, 3, 4, 5], vec![2.0; 5]);
        let s = -0.2;
        let out = apply_params(&c, &SdgParams { offset: 0.0, slope: s, elongation: 1.0 }).unwrap();
        for (k, (q_out, q_in)) in out.capacities().iter().zip(c.capacities()).enumerate() {
            assert!(close(q_out - q_in, s * k as f64 / 4.0, 1e-15));
        }
    }

    #[test]
    fn apply_rejects_degenerate_outputs() {
        let c = curve("c", vec![1, 2, 3], vec![2.0, 1.9, 1.8]);
        // Offset pushing capacities negative.
        assert!(matches!(
            apply_params(&c, &SdgParams { offset: -2.5, slope: 0.0, elongation: 1.0 }),
            Err(SdgError::DegenerateOutput(_))
        ));
        // Elongation collapsing the curve below 2 integer cycles.
        assert!(matches!(
            apply_params(&c, &SdgParams { offset: 0.0, slope: 0.0, elongation: 0.2 }),
            Err(SdgError::DegenerateOutput(_))
        ));
        // Invalid parameters.
        assert!(matches!(
            apply_params(&c, &SdgParams { offset: 0.0, slope: 0.0, elongation: 0.0 }),
            Err(SdgError::BadParams)
        ));
    }

    #[test]
    fn apply_final_cycle_follows_round_half_away_from_zero() {
        let cycles: Vec<u32> = (1..=10).collect();
        let caps: Vec<f64> = cycles.iter().map(|&c| 2.0 - 0.01 * c as f64).collect();
        let c = curve("c", cycles, caps);
        for e in [0.85, 0.95, 1.05, 1.15, 1.25] {
            let out = apply_params(&c, &SdgParams { offset: 0.0, slope: 0.0, elongation: e }).unwrap();
            assert_eq!(out.last_cycle(), (e * 10.0).round() as u32, "e={e}");
            // Unit-spaced seed: output length tracks round(L * e) within 1.
            let target_len = (10.0 * e).round();
            assert!((out.len() as f64 - target_len).abs() <= 1.0);
        }
    }

    #[test]
    fn generate_batch_is_deterministic_and_validates() {
        let seeds: Vec<CapacityCurve> = (0..3)
            .map(|i| {
                let cycles: Vec<u32> = (1..=40).collect();
                let caps = cycles.iter().map(|&c| 2.0 + i as f64 * 0.01 - 0.012 * c as f64).collect();
                curve(&format!("s{i}"), cycles, caps)
            })
            .collect();
        let ranges = ParamRanges {
            offset_min: -0.02,
            offset_max: 0.02,
            slope_min: -0.01,
            slope_max: 0.01,
            elongation_min: 0.75,
            elongation_max: 1.25,
            slope_reference_cycle: 20,
        };
        let a = generate_batch(&seeds, &ranges, 30, 77).unwrap();
        let b = generate_batch(&seeds, &ranges, 30, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.curves.len(), 30);
        assert_eq!(a.provenance.len(), 30);
        for (c, prov) in a.curves.iter().zip(&a.provenance) {
            assert!(c.validate().is_ok());
            assert_eq!(c.cell_id(), prov.synthetic_id);
            assert!(seeds.iter().any(|s| s.cell_id() == prov.seed_cell_id));
        }
        let empty = generate_batch(&seeds, &ranges, 0, 77).unwrap();
        assert!(empty.curves.is_empty());
    }

    #[test]
    fn generate_batch_reports_exhausted_retries() {
        let seeds = vec![curve("s", vec![1, 2, 3], vec![2.0, 1.9, 1.8])];
        // Offsets that always push capacities negative.
        let ranges = ParamRanges {
            offset_min: -5.0,
            offset_max: -4.0,
            slope_min: 0.0,
            slope_max: 0.0,
            elongation_min: 1.0,
            elongation_max: 1.0,
            slope_reference_cycle: 0,
        };
        assert!(matches!(
            generate_batch(&seeds, &ranges, 1, 0),
            Err(SdgError::GenerationFailure { draw: 0, .. })
        ));
    }
}
