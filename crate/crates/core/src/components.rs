//! Closed-form partial solutions for single affine blocks, and the
//! inf-morphism point solver built from them.
//!
//! Each component is `inf c(t - T, x - T·u) + T·R(u)` restricted to one
//! block of the value condition. The minimiser is either the interior
//! characteristic (strip) or one of the block's two ends (fans), so every
//! component is three-branch and closed form.

use thiserror::Error;

use crate::fundamental_diagram::{ConcaveFd, FundamentalDiagram, TriangularFd};
use crate::value_conditions::{BoundaryBlock, InitialBlock, LinkValueCondition};

/// Relative tolerance on the geometric domain tests (positions and times).
const DOMAIN_TOL: f64 = 1e-9;

/// Values within this relative distance of the minimum count as ties.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Minimiser interior to the block, along its own characteristic.
    Strip,
    /// Minimiser at the block's lower end (`x_lo` or `t_lo`).
    FanLo,
    /// Minimiser at the block's upper end (`x_hi` or `t_hi`).
    FanHi,
    /// Point outside the block's domain of influence.
    Undefined,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentValue {
    pub value: f64,
    pub branch: Branch,
}

impl ComponentValue {
    pub const UNDEFINED: Self = Self { value: f64::INFINITY, branch: Branch::Undefined };

    fn new(value: f64, branch: Branch) -> Self {
        Self { value, branch }
    }

    pub fn is_defined(&self) -> bool {
        self.branch != Branch::Undefined
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("time {0} s is negative")]
    NegativeTime(f64),
    #[error("position {x} m outside link [{x_0}, {x_n}]")]
    OutsideLink { x: f64, x_0: f64, x_n: f64 },
}

fn tol(scale: f64) -> f64 {
    DOMAIN_TOL * (1.0 + scale.abs())
}

/// Component of one initial block, valid for any concave diagram.
pub fn initial_general<F: ConcaveFd + ?Sized>(fd: &F, b: &InitialBlock, x: f64, t: f64) -> ComponentValue {
    if t <= 0.0 {
        return initial_at_zero(b, x);
    }
    let (w, v) = (fd.backward_speed(), fd.free_speed());
    // Speeds u for which x - t·u lands inside the block.
    let lo = ((x - b.x_hi) / t).max(w);
    let hi = ((x - b.x_lo) / t).min(v);
    if lo > hi + tol(v.max(-w)) {
        return ComponentValue::UNDEFINED;
    }
    let vi = fd.speed_at(b.density);
    if vi < lo {
        let u = ((x - b.x_hi) / t).clamp(w, v);
        ComponentValue::new(b.n_hi() + t * fd.conjugate_at(u), Branch::FanHi)
    } else if vi > hi {
        let u = ((x - b.x_lo) / t).clamp(w, v);
        ComponentValue::new(b.n_lo + t * fd.conjugate_at(u), Branch::FanLo)
    } else {
        let value = b.n_lo - b.density * (x - b.x_lo) + t * fd.flux_at(b.density);
        ComponentValue::new(value, Branch::Strip)
    }
}

fn initial_at_zero(b: &InitialBlock, x: f64) -> ComponentValue {
    if x >= b.x_lo - tol(b.x_lo) && x <= b.x_hi + tol(b.x_hi) {
        ComponentValue::new(b.value_at(x), Branch::Strip)
    } else {
        ComponentValue::UNDEFINED
    }
}

/// Triangular closed form of [`initial_general`].
pub fn initial_triangular(fd: &TriangularFd, b: &InitialBlock, x: f64, t: f64) -> ComponentValue {
    if t <= 0.0 {
        return initial_at_zero(b, x);
    }
    let (v, w, kc) = (fd.v_free(), fd.w_cong(), fd.k_crit());
    let reach_hi = b.x_hi + t * v;
    let reach_lo = b.x_lo + t * w;
    if x > reach_hi + tol(reach_hi) || x < reach_lo - tol(reach_lo) {
        return ComponentValue::UNDEFINED;
    }
    if b.density < kc {
        if x >= b.x_lo + t * v {
            let value = b.n_lo - b.density * (x - b.x_lo) + t * v * b.density;
            ComponentValue::new(value, Branch::Strip)
        } else {
            ComponentValue::new(b.n_lo + kc * (t * v - (x - b.x_lo)), Branch::FanLo)
        }
    } else if x <= b.x_hi + t * w {
        let value = b.n_lo - b.density * (x - b.x_lo) + t * w * (b.density - fd.k_jam());
        ComponentValue::new(value, Branch::Strip)
    } else {
        ComponentValue::new(b.n_hi() + kc * (t * v - (x - b.x_hi)), Branch::FanHi)
    }
}

/// Shared shape of the upstream and downstream components.
///
/// `xi` is the signed distance from the boundary to `x`; `limit` is the
/// fastest admissible speed towards `x` (`v` upstream, `w` downstream);
/// `(rho, speed)` is the block's characteristic density and speed, with
/// `speed = 0` meaning the strip never leaves the boundary.
fn boundary_general<F: ConcaveFd + ?Sized>(
    fd: &F,
    b: &BoundaryBlock,
    xi: f64,
    t: f64,
    limit: f64,
    rho: f64,
    speed: f64,
) -> ComponentValue {
    let t_top = t - b.t_lo;
    if t_top < -tol(t) {
        return ComponentValue::UNDEFINED;
    }
    let t_top = t_top.max(0.0);
    let travel = xi / limit;
    let t_edge = t - b.t_hi;
    let t_bot = t_edge.max(travel).max(0.0);
    if t_bot > t_top + tol(t) {
        return ComponentValue::UNDEFINED;
    }
    let t_star = if xi == 0.0 {
        0.0
    } else if speed != 0.0 && (xi / speed) >= 0.0 {
        xi / speed
    } else {
        f64::INFINITY
    };
    if t_star > t_top {
        let u = if t_top > 0.0 { xi / t_top } else { limit };
        ComponentValue::new(b.n_lo + t_top * fd.conjugate_at(u), Branch::FanLo)
    } else if t_star < t_bot {
        // Only the block end can bind here: the travel bound is never
        // stricter than the block's own characteristic.
        let t_b = t_edge.max(0.0);
        let r = if t_b > 0.0 { t_b * fd.conjugate_at(xi / t_b) } else { 0.0 };
        ComponentValue::new(b.n_hi() + r, Branch::FanHi)
    } else {
        ComponentValue::new(b.n_lo + b.flow * (t - b.t_lo) - rho * xi, Branch::Strip)
    }
}

/// Component of one upstream block at `(x, t)`, `x >= x_0`.
pub fn upstream_general<F: ConcaveFd + ?Sized>(fd: &F, b: &BoundaryBlock, x_0: f64, x: f64, t: f64) -> ComponentValue {
    let xi = (x - x_0).max(0.0);
    let rho = fd.free_density_for(b.flow);
    let speed = fd.speed_at(rho).max(0.0);
    boundary_general(fd, b, xi, t, fd.free_speed(), rho, speed)
}

/// Component of one downstream block at `(x, t)`, `x <= x_n`.
pub fn downstream_general<F: ConcaveFd + ?Sized>(fd: &F, b: &BoundaryBlock, x_n: f64, x: f64, t: f64) -> ComponentValue {
    let xi = (x - x_n).min(0.0);
    let rho = fd.congested_density_for(b.flow);
    let speed = fd.speed_at(rho).min(0.0);
    boundary_general(fd, b, xi, t, fd.backward_speed(), rho, speed)
}

/// Triangular closed form of [`upstream_general`].
pub fn upstream_triangular(fd: &TriangularFd, b: &BoundaryBlock, x_0: f64, x: f64, t: f64) -> ComponentValue {
    let xi = (x - x_0).max(0.0);
    let v = fd.v_free();
    let t_top = t - b.t_lo;
    if t_top < -tol(t) || xi > v * t_top + tol(xi) {
        return ComponentValue::UNDEFINED;
    }
    let t_edge = t - b.t_hi;
    if xi >= v * t_edge {
        ComponentValue::new(b.n_lo + b.flow * (t - b.t_lo) - b.flow / v * xi, Branch::Strip)
    } else {
        ComponentValue::new(b.n_hi() + fd.k_crit() * (v * t_edge - xi), Branch::FanHi)
    }
}

/// Triangular closed form of [`downstream_general`].
pub fn downstream_triangular(fd: &TriangularFd, b: &BoundaryBlock, x_n: f64, x: f64, t: f64) -> ComponentValue {
    let xi = (x - x_n).min(0.0);
    let (v, w) = (fd.v_free(), fd.w_cong());
    let t_top = t - b.t_lo;
    if t_top < -tol(t) || xi < w * t_top - tol(xi) {
        return ComponentValue::UNDEFINED;
    }
    let t_edge = t - b.t_hi;
    if xi <= w * t_edge {
        let rho = fd.k_jam() + b.flow / w;
        ComponentValue::new(b.n_lo + b.flow * (t - b.t_lo) - rho * xi, Branch::Strip)
    } else {
        ComponentValue::new(b.n_hi() + fd.k_crit() * (v * t_edge - xi), Branch::FanHi)
    }
}

/// Initial component with the triangular fast path when available.
pub fn initial_component(fd: &FundamentalDiagram, b: &InitialBlock, x: f64, t: f64) -> ComponentValue {
    match fd {
        FundamentalDiagram::Triangular(tri) => initial_triangular(tri, b, x, t),
        other => initial_general(other, b, x, t),
    }
}

pub fn upstream_component(fd: &FundamentalDiagram, b: &BoundaryBlock, x_0: f64, x: f64, t: f64) -> ComponentValue {
    match fd {
        FundamentalDiagram::Triangular(tri) => upstream_triangular(tri, b, x_0, x, t),
        other => upstream_general(other, b, x_0, x, t),
    }
}

pub fn downstream_component(fd: &FundamentalDiagram, b: &BoundaryBlock, x_n: f64, x: f64, t: f64) -> ComponentValue {
    match fd {
        FundamentalDiagram::Triangular(tri) => downstream_triangular(tri, b, x_n, x, t),
        other => downstream_general(other, b, x_n, x, t),
    }
}

pub(crate) fn check_domain(cond: &LinkValueCondition, x: f64, t: f64) -> Result<(), DomainError> {
    if !(t >= 0.0) {
        return Err(DomainError::NegativeTime(t));
    }
    let slack = tol(cond.x_n);
    if !(x >= cond.x_0 - slack && x <= cond.x_n + slack) {
        return Err(DomainError::OutsideLink { x, x_0: cond.x_0, x_n: cond.x_n });
    }
    Ok(())
}

/// Number of leading boundary blocks whose influence can have reached a
/// point `distance` away by time `t` travelling at `speed`.
pub(crate) fn arrived_blocks(blocks: &[BoundaryBlock], distance: f64, speed: f64, t: f64) -> usize {
    let latest_start = t - distance / speed + tol(t);
    blocks.partition_point(|b| b.t_lo <= latest_start)
}

/// Solution at `(x, t)` together with the number of components evaluated.
pub fn solve_point_lh_counted(
    cond: &LinkValueCondition,
    fd: &FundamentalDiagram,
    x: f64,
    t: f64,
) -> Result<(f64, usize), DomainError> {
    check_domain(cond, x, t)?;
    let x = x.clamp(cond.x_0, cond.x_n);
    let mut best = f64::INFINITY;
    let mut evals = 0;
    for b in &cond.initial {
        best = best.min(initial_component(fd, b, x, t).value);
        evals += 1;
    }
    let up = arrived_blocks(&cond.upstream, x - cond.x_0, fd.free_speed(), t);
    for b in &cond.upstream[..up] {
        best = best.min(upstream_component(fd, b, cond.x_0, x, t).value);
    }
    let down = arrived_blocks(&cond.downstream, cond.x_n - x, -fd.backward_speed(), t);
    for b in &cond.downstream[..down] {
        best = best.min(downstream_component(fd, b, cond.x_n, x, t).value);
    }
    Ok((best, evals + up + down))
}

/// Classical Lax-Hopf: minimum over every component that can reach `(x, t)`.
pub fn solve_point_lh(cond: &LinkValueCondition, fd: &FundamentalDiagram, x: f64, t: f64) -> Result<f64, DomainError> {
    solve_point_lh_counted(cond, fd, x, t).map(|(n, _)| n)
}

/// For each point, every initial block index whose component attains the
/// full solution within [`TIE_TOL`].
pub fn domains_of_influence(
    cond: &LinkValueCondition,
    fd: &FundamentalDiagram,
    points: &[(f64, f64)],
) -> Result<Vec<Vec<usize>>, DomainError> {
    points
        .iter()
        .map(|&(x, t)| {
            let n = solve_point_lh(cond, fd, x, t)?;
            let x = x.clamp(cond.x_0, cond.x_n);
            Ok(cond
                .initial
                .iter()
                .enumerate()
                .filter(|(_, b)| {
                    let c = initial_component(fd, b, x, t).value;
                    c.is_finite() && c <= n + TIE_TOL * (1.0 + n.abs())
                })
                .map(|(i, _)| i)
                .collect())
        })
        .collect()
}
