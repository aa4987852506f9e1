//! Belief propagation and the uniform belief grid.

use crate::error::{Error, Result};
use crate::model::{ChannelObservation, SystemParams};

/// Interpolation weights closer than this to a grid node snap onto the node.
const SNAP_TOL: f64 = 1e-9;

/// One-slot belief propagation without channel state information.
pub fn propagate(p: f64, params: &SystemParams) -> f64 {
    params.lambda0() * (1.0 - p) + params.lambda1() * p
}

/// Belief for the next slot after `obs` was received in the current one.
pub fn belief_after_observation(obs: ChannelObservation, p: f64, params: &SystemParams) -> f64 {
    match obs {
        ChannelObservation::AckHigh | ChannelObservation::SensedGood => params.lambda1(),
        ChannelObservation::NackHigh | ChannelObservation::SensedBad => params.lambda0(),
        ChannelObservation::None => propagate(p, params),
    }
}

/// Fixed point of [`propagate`], which is also the stationary GOOD probability.
pub fn stationary_belief(params: &SystemParams) -> Result<f64> {
    let denom = 1.0 - params.lambda1() + params.lambda0();
    if denom <= 0.0 {
        return Err(Error::DegenerateChannel(format!(
            "lambda1 - lambda0 = 1 (lambda0 = {}, lambda1 = {})",
            params.lambda0(),
            params.lambda1()
        )));
    }
    Ok(params.lambda0() / denom)
}

/// Closure of `{p0, lambda0, lambda1}` under at most `depth` applications of
/// [`propagate`], sorted and deduplicated.
pub fn reachable_beliefs(p0: f64, depth: usize, params: &SystemParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * (depth + 1));
    for seed in [p0, params.lambda0(), params.lambda1()] {
        let mut p = seed;
        out.push(p);
        for _ in 0..depth {
            p = propagate(p, params);
            out.push(p);
        }
    }
    sort_dedup(&mut out, 1e-12);
    out
}

pub(crate) fn sort_dedup(values: &mut Vec<f64>, tol: f64) {
    values.sort_by(f64::total_cmp);
    values.dedup_by(|a, b| (*a - *b).abs() <= tol);
}

/// Uniform grid on `[0, 1]` with `resolution` points, both ends included.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeliefGrid {
    resolution: usize,
}

impl BeliefGrid {
    pub const DEFAULT_RESOLUTION: usize = 1001;

    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidParams(format!(
                "belief grid needs at least 2 points, got {resolution}"
            )));
        }
        Ok(Self { resolution })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.resolution
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        1.0 / (self.resolution - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.resolution {
            1.0
        } else {
            i as f64 / (self.resolution - 1) as f64
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.resolution).map(|i| self.point(i))
    }

    /// Index of the grid point closest to `p`.
    pub fn nearest(&self, p: f64) -> usize {
        let pos = p.clamp(0.0, 1.0) * (self.resolution - 1) as f64;
        (pos.round() as usize).min(self.resolution - 1)
    }

    /// Left node and weight on the right node for linear interpolation at `p`.
    ///
    /// Weights within `1e-9` of 0 or 1 are snapped so that beliefs sitting on
    /// grid nodes (notably `lambda0` and `lambda1` on the default grid) are
    /// looked up exactly.
    pub fn locate(&self, p: f64) -> (usize, f64) {
        let n = self.resolution - 1;
        let pos = p.clamp(0.0, 1.0) * n as f64;
        let mut i = (pos.floor() as usize).min(n - 1);
        let mut w = pos - i as f64;
        if w < SNAP_TOL {
            w = 0.0;
        } else if w > 1.0 - SNAP_TOL {
            i += 1;
            w = 0.0;
            if i == n {
                i = n - 1;
                w = 1.0;
            }
        }
        (i, w)
    }

    /// Whether `p` coincides with a grid node (up to the snapping tolerance).
    pub fn on_grid(&self, p: f64) -> bool {
        let (_, w) = self.locate(p);
        w == 0.0 || w == 1.0
    }

    /// Linear interpolation of `row` (one value per grid point) at `p`.
    pub fn interpolate(&self, row: &[f64], p: f64) -> f64 {
        debug_assert_eq!(row.len(), self.resolution);
        let (i, w) = self.locate(p);
        lerp(row, i, w)
    }
}

impl Default for BeliefGrid {
    fn default() -> Self {
        Self {
            resolution: Self::DEFAULT_RESOLUTION,
        }
    }
}

#[inline]
pub(crate) fn lerp(row: &[f64], i: usize, w: f64) -> f64 {
    // `locate` never returns the last node as the left end
    row[i] + w * (row[i + 1] - row[i])
}
