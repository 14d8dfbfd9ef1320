//! Piecewise-affine initial and boundary conditions of the Moskowitz
//! function on one link.
//!
//! Blocks store the count at their lower end (`n_lo`) rather than an affine
//! offset. Offsets are recovered on demand, and continuity between
//! neighbours holds by construction because each new block starts where the
//! previous one ended.

use std::fmt;

use thiserror::Error;

use crate::fundamental_diagram::ConcaveFd;

/// Absolute continuity tolerance between adjacent pieces, in vehicles.
pub const CONTINUITY_TOL: f64 = 1e-9;

const RANGE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Upstream,
    Downstream,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Upstream => "upstream",
            Side::Downstream => "downstream",
        })
    }
}

/// `c(x) = n_lo - density·(x - x_lo)` on `[x_lo, x_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialBlock {
    pub x_lo: f64,
    pub x_hi: f64,
    pub density: f64,
    pub n_lo: f64,
}

impl InitialBlock {
    pub fn value_at(&self, x: f64) -> f64 {
        self.n_lo - self.density * (x - self.x_lo)
    }

    pub fn n_hi(&self) -> f64 {
        self.value_at(self.x_hi)
    }

    /// `b` in `c(x) = -k·x + b`.
    pub fn offset(&self) -> f64 {
        self.n_lo + self.density * self.x_lo
    }

    pub fn width(&self) -> f64 {
        self.x_hi - self.x_lo
    }
}

/// `c(t) = n_lo + flow·(t - t_lo)` on `[t_lo, t_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryBlock {
    pub t_lo: f64,
    pub t_hi: f64,
    pub flow: f64,
    pub n_lo: f64,
}

impl BoundaryBlock {
    pub fn value_at(&self, t: f64) -> f64 {
        self.n_lo + self.flow * (t - self.t_lo)
    }

    pub fn n_hi(&self) -> f64 {
        self.value_at(self.t_hi)
    }

    /// `d` in `c(t) = q·t + d`.
    pub fn offset(&self) -> f64 {
        self.n_lo - self.flow * self.t_lo
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConditionError {
    #[error("initial block {index}: density {value} outside [0, {k_jam}] (growth condition)")]
    DensityOutOfRange { index: usize, value: f64, k_jam: f64 },
    #[error("{side} block {index}: flow {value} outside [0, {q_max}] (capacity)")]
    FlowOutOfRange { side: Side, index: usize, value: f64, q_max: f64 },
    #[error("{side} block must start at t = {expected}, got {got}")]
    TimeGap { side: Side, expected: f64, got: f64 },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViolationKind {
    Density,
    Capacity(Side),
    Continuity,
    BoundaryContinuity(Side),
    Corner(Side),
    Coverage,
}

/// One violated constraint: kind, block index and residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub index: usize,
    pub residual: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ViolationKind::Density => "density outside [0, k_jam]".to_string(),
            ViolationKind::Capacity(side) => format!("{side} flow outside [0, q_max]"),
            ViolationKind::Continuity => "initial blocks discontinuous".to_string(),
            ViolationKind::BoundaryContinuity(side) => format!("{side} blocks discontinuous"),
            ViolationKind::Corner(side) => format!("{side} trace does not start at the initial value"),
            ViolationKind::Coverage => "initial blocks do not tile the link".to_string(),
        };
        write!(f, "block {}: {what} (residual {:e})", self.index, self.residual)
    }
}

/// Value conditions of one link: initial blocks tiling `[x_0, x_n]` plus
/// boundary blocks on both ends, each side starting at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkValueCondition {
    pub x_0: f64,
    pub x_n: f64,
    pub initial: Vec<InitialBlock>,
    pub upstream: Vec<BoundaryBlock>,
    pub downstream: Vec<BoundaryBlock>,
}

impl LinkValueCondition {
    /// Builds the initial blocks from a piecewise-constant density profile.
    /// `x_breaks` has one more entry than `densities`.
    pub fn from_density_profile<F: ConcaveFd + ?Sized>(
        fd: &F,
        x_breaks: &[f64],
        densities: &[f64],
        n_at_x0: f64,
    ) -> Result<Self, ConditionError> {
        if densities.is_empty() || x_breaks.len() != densities.len() + 1 {
            return Err(ConditionError::InvalidProfile(format!(
                "{} breakpoints for {} densities",
                x_breaks.len(),
                densities.len()
            )));
        }
        if !n_at_x0.is_finite() || x_breaks.iter().any(|x| !x.is_finite()) {
            return Err(ConditionError::InvalidProfile("non-finite breakpoint or count".into()));
        }
        if x_breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ConditionError::InvalidProfile("breakpoints must be strictly increasing".into()));
        }
        let k_jam = fd.jam_density();
        let mut initial = Vec::with_capacity(densities.len());
        let mut n = n_at_x0;
        for (index, &k) in densities.iter().enumerate() {
            if !k.is_finite() || k < -RANGE_SLACK * k_jam || k > k_jam * (1.0 + RANGE_SLACK) {
                return Err(ConditionError::DensityOutOfRange { index, value: k, k_jam });
            }
            let block = InitialBlock {
                x_lo: x_breaks[index],
                x_hi: x_breaks[index + 1],
                density: k.clamp(0.0, k_jam),
                n_lo: n,
            };
            n = block.n_hi();
            initial.push(block);
        }
        Ok(Self {
            x_0: x_breaks[0],
            x_n: x_breaks[x_breaks.len() - 1],
            initial,
            upstream: Vec::new(),
            downstream: Vec::new(),
        })
    }

    pub fn length(&self) -> f64 {
        self.x_n - self.x_0
    }

    pub fn n_ini(&self) -> usize {
        self.initial.len()
    }

    pub fn blocks(&self, side: Side) -> &[BoundaryBlock] {
        match side {
            Side::Upstream => &self.upstream,
            Side::Downstream => &self.downstream,
        }
    }

    fn blocks_mut(&mut self, side: Side) -> &mut Vec<BoundaryBlock> {
        match side {
            Side::Upstream => &mut self.upstream,
            Side::Downstream => &mut self.downstream,
        }
    }

    /// Initial count at `x`; `x` is clamped into the link.
    pub fn initial_value(&self, x: f64) -> f64 {
        let x = x.clamp(self.x_0, self.x_n);
        let i = self.initial.partition_point(|b| b.x_hi < x).min(self.initial.len() - 1);
        self.initial[i].value_at(x)
    }

    pub fn boundary_position(&self, side: Side) -> f64 {
        match side {
            Side::Upstream => self.x_0,
            Side::Downstream => self.x_n,
        }
    }

    /// Latest known time and count on one boundary.
    pub fn boundary_end(&self, side: Side) -> (f64, f64) {
        match self.blocks(side).last() {
            Some(b) => (b.t_hi, b.n_hi()),
            None => (0.0, self.initial_value(self.boundary_position(side))),
        }
    }

    /// Appends `[t_lo, t_hi]` with the given flow; `t_lo` must equal the end
    /// of the last block on that side (or 0).
    pub fn append_boundary_block<F: ConcaveFd + ?Sized>(
        &mut self,
        fd: &F,
        side: Side,
        t_lo: f64,
        t_hi: f64,
        flow: f64,
    ) -> Result<(), ConditionError> {
        let flow = self.checked_flow(side, flow, fd.capacity())?;
        let t_end = self.boundary_end(side).0;
        if (t_lo - t_end).abs() > 1e-9 * (1.0 + t_end.abs()) {
            return Err(ConditionError::TimeGap { side, expected: t_end, got: t_lo });
        }
        if !(t_hi > t_lo) {
            return Err(ConditionError::InvalidProfile(format!("empty time block [{t_lo}, {t_hi}]")));
        }
        self.push_boundary(side, t_hi, flow);
        Ok(())
    }

    /// `flow` clamped into `[0, q_max]`, or an error if it is outside by
    /// more than rounding.
    pub(crate) fn checked_flow(&self, side: Side, flow: f64, q_max: f64) -> Result<f64, ConditionError> {
        if !flow.is_finite() || flow < -RANGE_SLACK * q_max || flow > q_max * (1.0 + RANGE_SLACK) {
            let index = self.blocks(side).len();
            return Err(ConditionError::FlowOutOfRange { side, index, value: flow, q_max });
        }
        Ok(flow.clamp(0.0, q_max))
    }

    /// Appends `[end, t_hi]` without checks and returns the count at `t_hi`.
    pub(crate) fn push_boundary(&mut self, side: Side, t_hi: f64, flow: f64) -> f64 {
        let (t_lo, n_lo) = self.boundary_end(side);
        let block = BoundaryBlock { t_lo, t_hi, flow, n_lo };
        self.blocks_mut(side).push(block);
        block.n_hi()
    }

    /// Appends a block of length `dt` after the last one on that side.
    pub fn append_boundary_flow<F: ConcaveFd + ?Sized>(
        &mut self,
        fd: &F,
        side: Side,
        flow: f64,
        dt: f64,
    ) -> Result<(), ConditionError> {
        let t_lo = self.boundary_end(side).0;
        self.append_boundary_block(fd, side, t_lo, t_lo + dt, flow)
    }

    /// Snapshot-style variant of [`append_boundary_flow`](Self::append_boundary_flow).
    pub fn with_boundary_flow<F: ConcaveFd + ?Sized>(
        &self,
        fd: &F,
        side: Side,
        flow: f64,
        dt: f64,
    ) -> Result<Self, ConditionError> {
        let mut next = self.clone();
        next.append_boundary_flow(fd, side, flow, dt)?;
        Ok(next)
    }

    /// Every violated growth, capacity or continuity constraint.
    pub fn validate<F: ConcaveFd + ?Sized>(&self, fd: &F) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        let k_jam = fd.jam_density();
        let q_max = fd.capacity();
        let range_excess = |v: f64, hi: f64| {
            if v < -RANGE_SLACK * hi {
                -v
            } else if v > hi * (1.0 + RANGE_SLACK) {
                v - hi
            } else {
                0.0
            }
        };
        if self.initial.is_empty() {
            out.push(Violation { kind: ViolationKind::Coverage, index: 0, residual: self.length() });
        }
        for (i, b) in self.initial.iter().enumerate() {
            let r = range_excess(b.density, k_jam);
            if r > 0.0 || !b.density.is_finite() {
                out.push(Violation { kind: ViolationKind::Density, index: i, residual: r });
            }
            if !(b.x_hi > b.x_lo) {
                out.push(Violation { kind: ViolationKind::Coverage, index: i, residual: b.x_lo - b.x_hi });
            }
        }
        if let (Some(first), Some(last)) = (self.initial.first(), self.initial.last()) {
            let gap = (first.x_lo - self.x_0).abs().max((last.x_hi - self.x_n).abs());
            if gap > 1e-9 * (1.0 + self.x_n.abs()) {
                out.push(Violation { kind: ViolationKind::Coverage, index: 0, residual: gap });
            }
        }
        for (i, pair) in self.initial.windows(2).enumerate() {
            let geometric = (pair[1].x_lo - pair[0].x_hi).abs();
            if geometric > 1e-9 * (1.0 + pair[0].x_hi.abs()) {
                out.push(Violation { kind: ViolationKind::Coverage, index: i + 1, residual: geometric });
            }
            let jump = (pair[1].value_at(pair[0].x_hi) - pair[0].n_hi()).abs();
            if jump > CONTINUITY_TOL {
                out.push(Violation { kind: ViolationKind::Continuity, index: i + 1, residual: jump });
            }
        }
        for side in [Side::Upstream, Side::Downstream] {
            let blocks = self.blocks(side);
            for (j, b) in blocks.iter().enumerate() {
                let r = range_excess(b.flow, q_max);
                if r > 0.0 || !b.flow.is_finite() {
                    out.push(Violation { kind: ViolationKind::Capacity(side), index: j, residual: r });
                }
            }
            for (j, pair) in blocks.windows(2).enumerate() {
                let jump = (pair[1].value_at(pair[0].t_hi) - pair[0].n_hi())
                    .abs()
                    .max((pair[1].t_lo - pair[0].t_hi).abs());
                if jump > CONTINUITY_TOL {
                    out.push(Violation { kind: ViolationKind::BoundaryContinuity(side), index: j + 1, residual: jump });
                }
            }
            if let (Some(first), false) = (blocks.first(), self.initial.is_empty()) {
                let expected = self.initial_value(self.boundary_position(side));
                let r = (first.value_at(0.0) - expected).abs().max(first.t_lo.abs());
                if r > CONTINUITY_TOL {
                    out.push(Violation { kind: ViolationKind::Corner(side), index: 0, residual: r });
                }
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }
}
