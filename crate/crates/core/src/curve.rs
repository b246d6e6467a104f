//! Capacity-curve data model, validation, and resampling.
//!
//! A [`CapacityCurve`] is one cell's discharge-capacity trajectory over
//! charge-discharge cycles and is the unit every other module consumes.
//! Construction always validates, so any curve handed out by this crate
//! satisfies the invariants checked by [`validate`].

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::interp::{Linear, NaturalCubic, Pchip};

/// First invariant violated by a would-be curve, if any.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("length mismatch: {cycles} cycles vs {capacities} capacities")]
    LengthMismatch { cycles: usize, capacities: usize },
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("cycles not strictly increasing at index {0}")]
    CyclesNotStrictlyIncreasing(usize),
    #[error("first cycle must be >= 1")]
    FirstCycleZero,
    #[error("capacity at index {index} must be positive and finite, got {value}")]
    CapacityNotPositive { index: usize, value: f64 },
    #[error("nominal capacity must be positive and finite, got {0}")]
    NominalNotPositive(f64),
}

/// Checks the raw parts of a curve and reports the first violated invariant.
pub fn validate(cycles: &[u32], capacities: &[f64], nominal_capacity: f64) -> Result<(), Violation> {
    if cycles.len() != capacities.len() {
        return Err(Violation::LengthMismatch {
            cycles: cycles.len(),
            capacities: capacities.len(),
        });
    }
    if cycles.len() < 2 {
        return Err(Violation::TooFewPoints(cycles.len()));
    }
    for (i, w) in cycles.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Violation::CyclesNotStrictlyIncreasing(i + 1));
        }
    }
    if cycles[0] < 1 {
        return Err(Violation::FirstCycleZero);
    }
    for (i, &q) in capacities.iter().enumerate() {
        if !q.is_finite() || q <= 0.0 {
            return Err(Violation::CapacityNotPositive { index: i, value: q });
        }
    }
    if !nominal_capacity.is_finite() || nominal_capacity <= 0.0 {
        return Err(Violation::NominalNotPositive(nominal_capacity));
    }
    Ok(())
}

/// One cell's (cycle, capacity) trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityCurve {
    cell_id: String,
    cycles: Vec<u32>,
    capacities: Vec<f64>,
    nominal_capacity: f64,
}

impl CapacityCurve {
    pub fn new(
        cell_id: impl Into<String>,
        cycles: Vec<u32>,
        capacities: Vec<f64>,
        nominal_capacity: f64,
    ) -> Result<Self, Violation> {
        validate(&cycles, &capacities, nominal_capacity)?;
        Ok(Self { cell_id: cell_id.into(), cycles, capacities, nominal_capacity })
    }

    /// Re-checks the invariants; always `Ok` for curves built through [`Self::new`].
    pub fn validate(&self) -> Result<(), Violation> {
        validate(&self.cycles, &self.capacities, self.nominal_capacity)
    }

    pub fn cell_id(&self) -> &str {
        &self.cell_id
    }

    pub fn cycles(&self) -> &[u32] {
        &self.cycles
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn nominal_capacity(&self) -> f64 {
        self.nominal_capacity
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: L >= 2
    }

    pub fn first_cycle(&self) -> u32 {
        self.cycles[0]
    }

    pub fn last_cycle(&self) -> u32 {
        *self.cycles.last().unwrap()
    }

    pub fn with_cell_id(mut self, cell_id: impl Into<String>) -> Self {
        self.cell_id = cell_id.into();
        self
    }

    /// Capacity at an exact integer cycle, linearly interpolated between the
    /// bracketing samples when the cycle itself was not measured.
    pub fn capacity_at(&self, cycle: u32) -> Result<f64, CurveError> {
        if cycle < self.first_cycle() || cycle > self.last_cycle() {
            return Err(CurveError::OutOfRange {
                cycle,
                first: self.first_cycle(),
                last: self.last_cycle(),
            });
        }
        match self.cycles.binary_search(&cycle) {
            Ok(k) => Ok(self.capacities[k]),
            Err(k) => {
                let (c0, c1) = (self.cycles[k - 1] as f64, self.cycles[k] as f64);
                let t = (cycle as f64 - c0) / (c1 - c0);
                Ok(self.capacities[k - 1] + t * (self.capacities[k] - self.capacities[k - 1]))
            }
        }
    }

    fn cycles_f64(&self) -> Vec<f64> {
        self.cycles.iter().map(|&c| c as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurveError {
    #[error("stride must be >= 1")]
    InvalidStride,
    #[error("downsampling with stride {stride} keeps {kept} point(s); a curve needs 2")]
    StrideTooCoarse { stride: usize, kept: usize },
    #[error("cycle {cycle} outside curve span [{first}, {last}]")]
    OutOfRange { cycle: u32, first: u32, last: u32 },
    #[error("target cycles must be a strictly increasing sequence of at least 2")]
    BadTargets,
    #[error("resampling produced an invalid curve: {0}")]
    InvalidOutput(#[from] Violation),
}

/// Keeps every `stride`-th sample starting from the first point.
pub fn downsample(curve: &CapacityCurve, stride: usize) -> Result<CapacityCurve, CurveError> {
    if stride == 0 {
        return Err(CurveError::InvalidStride);
    }
    let cycles: Vec<u32> = curve.cycles.iter().step_by(stride).copied().collect();
    let capacities: Vec<f64> = curve.capacities.iter().step_by(stride).copied().collect();
    if cycles.len() < 2 {
        return Err(CurveError::StrideTooCoarse { stride, kept: cycles.len() });
    }
    Ok(CapacityCurve::new(
        curve.cell_id.clone(),
        cycles,
        capacities,
        curve.nominal_capacity,
    )?)
}

fn check_targets(curve: &CapacityCurve, targets: &[u32]) -> Result<(), CurveError> {
    if targets.len() < 2 || targets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CurveError::BadTargets);
    }
    for &t in [targets[0], *targets.last().unwrap()].iter() {
        if t < curve.first_cycle() || t > curve.last_cycle() {
            return Err(CurveError::OutOfRange {
                cycle: t,
                first: curve.first_cycle(),
                last: curve.last_cycle(),
            });
        }
    }
    Ok(())
}

fn rebuild(
    curve: &CapacityCurve,
    targets: &[u32],
    capacities: Vec<f64>,
) -> Result<CapacityCurve, CurveError> {
    Ok(CapacityCurve::new(
        curve.cell_id.clone(),
        targets.to_vec(),
        capacities,
        curve.nominal_capacity,
    )?)
}

/// Shape-preserving cubic Hermite resampling; exact at source cycles, never
/// oversteps the values of the bracketing source pair, no extrapolation.
pub fn pchip_resample(curve: &CapacityCurve, targets: &[u32]) -> Result<CapacityCurve, CurveError> {
    check_targets(curve, targets)?;
    let interp = Pchip::new(&curve.cycles_f64(), &curve.capacities).expect("valid curve knots");
    let capacities = targets.iter().map(|&t| interp.eval(t as f64)).collect();
    rebuild(curve, targets, capacities)
}

/// Piecewise-linear resampling; exact at source cycles, no extrapolation.
pub fn linear_resample(curve: &CapacityCurve, targets: &[u32]) -> Result<CapacityCurve, CurveError> {
    check_targets(curve, targets)?;
    let interp = Linear::new(&curve.cycles_f64(), &curve.capacities).expect("valid curve knots");
    let capacities = targets.iter().map(|&t| interp.eval(t as f64)).collect();
    rebuild(curve, targets, capacities)
}

/// Natural cubic-spline resampling; exact at source cycles, no extrapolation.
pub fn cubic_spline_resample(
    curve: &CapacityCurve,
    targets: &[u32],
) -> Result<CapacityCurve, CurveError> {
    check_targets(curve, targets)?;
    let interp = NaturalCubic::new(&curve.cycles_f64(), &curve.capacities).expect("valid curve knots");
    let capacities = targets.iter().map(|&t| interp.eval(t as f64)).collect();
    rebuild(curve, targets, capacities)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("duplicate cell id {0:?}")]
    DuplicateCellId(String),
    #[error("condition group {group:?} references unknown cell {cell_id:?}")]
    UnknownCellInGroup { group: String, cell_id: String },
}

/// A named collection of capacity curves, optionally partitioned into aging
/// test conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    curves: Vec<CapacityCurve>,
    condition_groups: Option<BTreeMap<String, Vec<String>>>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        curves: Vec<CapacityCurve>,
        condition_groups: Option<BTreeMap<String, Vec<String>>>,
    ) -> Result<Self, DatasetError> {
        let mut seen = BTreeSet::new();
        for c in &curves {
            if !seen.insert(c.cell_id()) {
                return Err(DatasetError::DuplicateCellId(c.cell_id().to_string()));
            }
        }
        if let Some(groups) = &condition_groups {
            for (group, members) in groups {
                for cell_id in members {
                    if !seen.contains(cell_id.as_str()) {
                        return Err(DatasetError::UnknownCellInGroup {
                            group: group.clone(),
                            cell_id: cell_id.clone(),
                        });
                    }
                }
            }
        }
        Ok(Self { name: name.into(), curves, condition_groups })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn curves(&self) -> &[CapacityCurve] {
        &self.curves
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn get(&self, cell_id: &str) -> Option<&CapacityCurve> {
        self.curves.iter().find(|c| c.cell_id() == cell_id)
    }

    pub fn condition_groups(&self) -> Option<&BTreeMap<String, Vec<String>>> {
        self.condition_groups.as_ref()
    }
}
