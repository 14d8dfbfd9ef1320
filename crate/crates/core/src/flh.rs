//! Fast Lax-Hopf boundary stepping.
//!
//! A [`FlhLinkState`] advances one link in fixed time steps. At each step it
//! computes the prospective boundary counts `N(x_0, t+Δt)` and
//! `N(x_n, t+Δt)` (without the blocks the junction is about to assign),
//! from which the link demand and supply follow. Candidate components that
//! are permanently dominated are dropped from the cursors and never
//! evaluated again.

use thiserror::Error;

use crate::components::{
    arrived_blocks, check_domain, downstream_component, downstream_triangular, initial_component, initial_triangular,
    solve_point_lh_counted, upstream_component, upstream_triangular, DomainError,
};
use crate::fundamental_diagram::{ConcaveFd, FundamentalDiagram, TriangularFd};
use crate::value_conditions::{ConditionError, LinkValueCondition, Side};

/// Relative slack for activation times: activation is deferred on ties.
const ACTIVATION_TOL: f64 = 1e-12;
/// Relative margin a dominating value must clear before pruning.
const PRUNE_TOL: f64 = 1e-12;
/// Relative slack when comparing block widths for the CFL path.
const WIDTH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlhError {
    #[error("{side} boundary ends at t = {condition} s but the solver is at t = {solver} s")]
    Sequencing { side: Side, condition: f64, solver: f64 },
    #[error("CFL fast path unavailable: {0}")]
    ModeMismatch(String),
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error(transparent)]
    Condition(#[from] ConditionError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlhMode {
    /// Dominance pruning, any concave diagram and block layout.
    General,
    /// Triangular diagram, uniform block width `dx` and `Δt <= dx / max(v, |w|)`:
    /// at most three candidates per step.
    CflTriangular { dx: f64 },
}

fn dominates(killer: f64, victim: f64) -> bool {
    killer.is_finite() && victim.is_finite() && victim > killer + PRUNE_TOL * (1.0 + killer.abs())
}

fn activated(t: f64, activation: f64) -> bool {
    t > activation + ACTIVATION_TOL * (1.0 + activation.abs())
}

/// Per-boundary pruning state.
#[derive(Debug, Clone)]
pub struct BoundaryCursor {
    side: Side,
    /// Surviving initial indices, in order of arrival at this boundary.
    ini_alive: Vec<usize>,
    /// Initial blocks admitted so far (arrival ranks `0..ini_admitted`).
    ini_admitted: usize,
    ini_retired: bool,
    /// Surviving opposite-boundary block indices, ascending.
    bdry_alive: Vec<usize>,
    bdry_admitted: usize,
    last_value: f64,
    last_time: f64,
    op_count: u64,
    last_ops: u32,
    ini_values: Vec<f64>,
    bdry_values: Vec<f64>,
}

impl BoundaryCursor {
    fn new(side: Side, initial_value: f64) -> Self {
        Self {
            side,
            ini_alive: Vec::new(),
            ini_admitted: 0,
            ini_retired: false,
            bdry_alive: Vec::new(),
            bdry_admitted: 0,
            last_value: initial_value,
            last_time: 0.0,
            op_count: 0,
            last_ops: 0,
            ini_values: Vec::new(),
            bdry_values: Vec::new(),
        }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    /// Boundary-adjacent surviving initial index (largest downstream,
    /// smallest upstream), counting blocks that have not arrived yet.
    pub fn hi_active_ini(&self, n_ini: usize) -> Option<usize> {
        if self.ini_retired {
            return None;
        }
        self.ini_alive.first().copied().or_else(|| {
            (self.ini_admitted < n_ini).then(|| rank_to_index(self.side, n_ini, self.ini_admitted))
        })
    }

    pub fn ini_retired(&self) -> bool {
        self.ini_retired
    }

    /// Earliest surviving opposite-boundary block.
    pub fn lo_active_bdry(&self) -> Option<usize> {
        self.bdry_alive.first().copied()
    }

    pub fn alive_initial(&self) -> &[usize] {
        &self.ini_alive
    }

    pub fn alive_boundary(&self) -> &[usize] {
        &self.bdry_alive
    }

    /// Initial indices that have arrived at this boundary.
    pub fn admitted_initial(&self, n_ini: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.ini_admitted).map(move |r| rank_to_index(self.side, n_ini, r))
    }

    pub fn admitted_boundary(&self) -> usize {
        self.bdry_admitted
    }

    pub fn last_value(&self) -> f64 {
        self.last_value
    }

    pub fn last_time(&self) -> f64 {
        self.last_time
    }

    /// Cumulative candidate evaluations.
    pub fn op_count(&self) -> u64 {
        self.op_count
    }

    /// Candidate evaluations of the latest step.
    pub fn last_ops(&self) -> u32 {
        self.last_ops
    }

    fn record(&mut self, ops: u32) {
        self.last_ops = ops;
        self.op_count += u64::from(ops);
    }
}

/// Downstream boundary sees the last initial block first; upstream the first.
fn rank_to_index(side: Side, n_ini: usize, rank: usize) -> usize {
    match side {
        Side::Downstream => n_ini - 1 - rank,
        Side::Upstream => rank,
    }
}

fn opposite(side: Side) -> Side {
    match side {
        Side::Upstream => Side::Downstream,
        Side::Downstream => Side::Upstream,
    }
}

/// Time at which initial block `i` first influences the boundary.
fn initial_arrival(cond: &LinkValueCondition, fd: &FundamentalDiagram, side: Side, i: usize) -> f64 {
    let b = &cond.initial[i];
    match side {
        Side::Downstream => (cond.x_n - b.x_hi) / fd.free_speed(),
        Side::Upstream => (b.x_lo - cond.x_0) / -fd.backward_speed(),
    }
}

/// Speed at which opposite-boundary information crosses the link.
fn crossing_speed(fd: &FundamentalDiagram, side: Side) -> f64 {
    match side {
        Side::Downstream => fd.free_speed(),
        Side::Upstream => -fd.backward_speed(),
    }
}

fn boundary_candidate(cond: &LinkValueCondition, fd: &FundamentalDiagram, side: Side, j: usize, t: f64) -> f64 {
    match side {
        // Downstream boundary reads upstream blocks and vice versa.
        Side::Downstream => upstream_component(fd, &cond.upstream[j], cond.x_0, cond.x_n, t).value,
        Side::Upstream => downstream_component(fd, &cond.downstream[j], cond.x_n, cond.x_0, t).value,
    }
}

fn boundary_candidate_tri(cond: &LinkValueCondition, fd: &TriangularFd, side: Side, j: usize, t: f64) -> f64 {
    match side {
        Side::Downstream => upstream_triangular(fd, &cond.upstream[j], cond.x_0, cond.x_n, t).value,
        Side::Upstream => downstream_triangular(fd, &cond.downstream[j], cond.x_n, cond.x_0, t).value,
    }
}

/// Later arrivals that reach a value strictly below an earlier candidate's
/// kill it for good. `alive` is in arrival order.
fn prune_by_later(alive: &mut Vec<usize>, values: &mut Vec<f64>, t: f64, arrival: impl Fn(usize) -> f64) {
    let mut best_later = f64::INFINITY;
    for pos in (0..alive.len()).rev() {
        let v = values[pos];
        if dominates(best_later, v) {
            values[pos] = f64::NAN;
        } else if activated(t, arrival(alive[pos])) {
            best_later = best_later.min(v);
        }
    }
    retain_marked(alive, values);
}

fn retain_marked(alive: &mut Vec<usize>, values: &mut Vec<f64>) {
    let mut keep = values.iter().map(|v| !v.is_nan());
    alive.retain(|_| keep.next().unwrap_or(true));
    values.retain(|v| !v.is_nan());
}

/// One link advanced by the Fast Lax-Hopf method.
#[derive(Debug, Clone)]
pub struct FlhLinkState {
    cond: LinkValueCondition,
    fd: FundamentalDiagram,
    up: BoundaryCursor,
    down: BoundaryCursor,
    mode: FlhMode,
    dt: f64,
    step: usize,
    /// Cached prospective counts at `t + Δt` (upstream, downstream).
    pending: [Option<f64>; 2],
}

impl FlhLinkState {
    /// General-mode state.
    pub fn new(cond: LinkValueCondition, fd: FundamentalDiagram, dt: f64) -> Result<Self, FlhError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(FlhError::InvalidStep(dt));
        }
        if !cond.upstream.is_empty() || !cond.downstream.is_empty() {
            return Err(FlhError::Sequencing {
                side: if cond.upstream.is_empty() { Side::Downstream } else { Side::Upstream },
                condition: cond.boundary_end(Side::Upstream).0.max(cond.boundary_end(Side::Downstream).0),
                solver: 0.0,
            });
        }
        let up = BoundaryCursor::new(Side::Upstream, cond.boundary_end(Side::Upstream).1);
        let down = BoundaryCursor::new(Side::Downstream, cond.boundary_end(Side::Downstream).1);
        Ok(Self { cond, fd, up, down, mode: FlhMode::General, dt, step: 0, pending: [None, None] })
    }

    /// CFL fast-path state; fails unless the diagram is triangular, the
    /// initial blocks have one common width and the step satisfies CFL.
    pub fn with_cfl(cond: LinkValueCondition, fd: FundamentalDiagram, dt: f64) -> Result<Self, FlhError> {
        let dx = cfl_width(&cond, &fd, dt)?;
        let mut state = Self::new(cond, fd, dt)?;
        state.mode = FlhMode::CflTriangular { dx };
        Ok(state)
    }

    /// CFL mode when eligible, general mode otherwise.
    pub fn auto(cond: LinkValueCondition, fd: FundamentalDiagram, dt: f64) -> Result<Self, FlhError> {
        match cfl_width(&cond, &fd, dt) {
            Ok(_) => Self::with_cfl(cond, fd, dt),
            Err(_) => Self::new(cond, fd, dt),
        }
    }

    pub fn condition(&self) -> &LinkValueCondition {
        &self.cond
    }

    pub fn diagram(&self) -> &FundamentalDiagram {
        &self.fd
    }

    pub fn mode(&self) -> FlhMode {
        self.mode
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn cursor(&self, side: Side) -> &BoundaryCursor {
        match side {
            Side::Upstream => &self.up,
            Side::Downstream => &self.down,
        }
    }

    /// Prospective `N(boundary, t+Δt)` with dominance pruning.
    pub fn boundary_value_step(&mut self, side: Side) -> Result<f64, FlhError> {
        let tau = (self.step + 1) as f64 * self.dt;
        let (cond, fd) = (&self.cond, &self.fd);
        let cursor = match side {
            Side::Upstream => &mut self.up,
            Side::Downstream => &mut self.down,
        };
        Ok(general_step(cursor, cond, fd, tau))
    }

    /// Prospective `N(boundary, t+Δt)` from at most three candidates.
    pub fn cfl_boundary_step(&mut self, side: Side) -> Result<f64, FlhError> {
        let FlhMode::CflTriangular { dx } = self.mode else {
            return Err(FlhError::ModeMismatch("state was built in general mode".into()));
        };
        let Some(tri) = self.fd.as_triangular() else {
            return Err(FlhError::ModeMismatch("diagram is not triangular".into()));
        };
        let tau = (self.step + 1) as f64 * self.dt;
        let (cond, dt) = (&self.cond, self.dt);
        let cursor = match side {
            Side::Upstream => &mut self.up,
            Side::Downstream => &mut self.down,
        };
        Ok(cfl_step(cursor, cond, tri, tau, dt, dx))
    }

    fn prospective(&mut self, side: Side) -> Result<f64, FlhError> {
        let slot = match side {
            Side::Upstream => 0,
            Side::Downstream => 1,
        };
        if let Some(n) = self.pending[slot] {
            return Ok(n);
        }
        let n = match self.mode {
            FlhMode::General => self.boundary_value_step(side)?,
            FlhMode::CflTriangular { .. } => self.cfl_boundary_step(side)?,
        };
        self.pending[slot] = Some(n);
        Ok(n)
    }

    /// Largest outflow over `[t, t+Δt]` under a free exit.
    pub fn demand(&mut self) -> Result<f64, FlhError> {
        let n = self.prospective(Side::Downstream)?;
        let rate = (n - self.down.last_value) / self.dt;
        Ok(rate.clamp(0.0, self.fd.capacity()))
    }

    /// Largest inflow over `[t, t+Δt]` the link can absorb.
    pub fn supply(&mut self) -> Result<f64, FlhError> {
        let n = self.prospective(Side::Upstream)?;
        let rate = (n - self.up.last_value) / self.dt;
        Ok(rate.clamp(0.0, self.fd.capacity()))
    }

    /// Appends the assigned boundary flows for `[t, t+Δt]` and moves to `t+Δt`.
    pub fn advance(&mut self, inflow: f64, outflow: f64) -> Result<(), FlhError> {
        let q_max = self.fd.capacity();
        let inflow = self.cond.checked_flow(Side::Upstream, inflow, q_max)?;
        let outflow = self.cond.checked_flow(Side::Downstream, outflow, q_max)?;
        let t_hi = (self.step + 1) as f64 * self.dt;
        self.up.last_value = self.cond.push_boundary(Side::Upstream, t_hi, inflow);
        self.down.last_value = self.cond.push_boundary(Side::Downstream, t_hi, outflow);
        self.up.last_time = t_hi;
        self.down.last_time = t_hi;
        self.step += 1;
        self.pending = [None, None];
        Ok(())
    }

    /// Exact solution anywhere on the link from the recorded blocks.
    pub fn solve_point(&self, x: f64, t: f64) -> Result<f64, FlhError> {
        Ok(solve_point_lh_counted(&self.cond, &self.fd, x, t)?.0)
    }
}

fn cfl_width(cond: &LinkValueCondition, fd: &FundamentalDiagram, dt: f64) -> Result<f64, FlhError> {
    let Some(tri) = fd.as_triangular() else {
        return Err(FlhError::ModeMismatch("diagram is not triangular".into()));
    };
    let n = cond.n_ini();
    let dx = cond.length() / n as f64;
    for (i, b) in cond.initial.iter().enumerate() {
        let expected = cond.x_0 + i as f64 * dx;
        if (b.x_lo - expected).abs() > WIDTH_TOL * (1.0 + cond.x_n.abs()) {
            return Err(FlhError::ModeMismatch(format!("initial block {i} does not start at x_0 + {i}·Δx")));
        }
    }
    let fastest = tri.v_free().max(-tri.w_cong());
    if dt > dx / fastest * (1.0 + WIDTH_TOL) {
        return Err(FlhError::ModeMismatch(format!(
            "Δt = {dt} s exceeds Δx / max(v, |w|) = {} s",
            dx / fastest
        )));
    }
    Ok(dx)
}

fn general_step(
    cursor: &mut BoundaryCursor,
    cond: &LinkValueCondition,
    fd: &FundamentalDiagram,
    tau: f64,
) -> f64 {
    let side = cursor.side;
    let n_ini = cond.n_ini();
    let x = cond.boundary_position(side);

    while cursor.ini_admitted < n_ini {
        let i = rank_to_index(side, n_ini, cursor.ini_admitted);
        if initial_arrival(cond, fd, side, i) > tau + ACTIVATION_TOL * (1.0 + tau) {
            break;
        }
        if !cursor.ini_retired {
            cursor.ini_alive.push(i);
        }
        cursor.ini_admitted += 1;
    }
    let opp = cond.blocks(opposite(side));
    let speed = crossing_speed(fd, side);
    let arrived = arrived_blocks(opp, cond.length(), speed, tau);
    cursor.bdry_alive.extend(cursor.bdry_admitted..arrived);
    cursor.bdry_admitted = cursor.bdry_admitted.max(arrived);

    // The latest own-side block, continued at u = 0 for one step.
    let carry = cursor.last_value + (tau - cursor.last_time) * fd.conjugate_at(0.0);
    let mut best = carry;
    let mut ops = 1u32;

    cursor.ini_values.clear();
    for &i in &cursor.ini_alive {
        let v = initial_component(fd, &cond.initial[i], x, tau).value;
        cursor.ini_values.push(v);
        best = best.min(v);
    }
    cursor.bdry_values.clear();
    for &j in &cursor.bdry_alive {
        let v = boundary_candidate(cond, fd, side, j, tau);
        cursor.bdry_values.push(v);
        best = best.min(v);
    }
    ops += (cursor.ini_values.len() + cursor.bdry_values.len()) as u32;

    let travel = cond.length() / speed;
    // Opposite-boundary blocks that dominate an initial block retire it.
    if !cursor.ini_alive.is_empty() {
        let mut bdry_best = f64::INFINITY;
        for (&j, &v) in cursor.bdry_alive.iter().zip(&cursor.bdry_values) {
            if activated(tau, opp[j].t_lo + travel) {
                bdry_best = bdry_best.min(v);
            }
        }
        for v in cursor.ini_values.iter_mut() {
            if dominates(bdry_best, *v) {
                *v = f64::NAN;
            }
        }
        retain_marked(&mut cursor.ini_alive, &mut cursor.ini_values);
    }
    prune_by_later(&mut cursor.ini_alive, &mut cursor.ini_values, tau, |i| {
        initial_arrival(cond, fd, side, i)
    });
    if cursor.ini_alive.is_empty() && cursor.ini_admitted == n_ini {
        cursor.ini_retired = true;
    }
    prune_by_later(&mut cursor.bdry_alive, &mut cursor.bdry_values, tau, |j| opp[j].t_lo + travel);

    cursor.record(ops);
    best
}

fn cfl_step(
    cursor: &mut BoundaryCursor,
    cond: &LinkValueCondition,
    fd: &TriangularFd,
    tau: f64,
    dt: f64,
    dx: f64,
) -> f64 {
    let side = cursor.side;
    let n = cond.n_ini() as i64;
    let length = cond.length();
    let x = cond.boundary_position(side);
    let mut best = cursor.last_value + (tau - cursor.last_time) * fd.q_max();
    let mut ops = 1u32;
    let speed = match side {
        Side::Downstream => fd.v_free(),
        Side::Upstream => -fd.w_cong(),
    };
    let crossing = length / speed;
    let eval_initial = |i: i64, best: &mut f64, ops: &mut u32| {
        if (0..n).contains(&i) {
            *best = best.min(initial_triangular(fd, &cond.initial[i as usize], x, tau).value);
            *ops += 1;
        }
    };
    if tau <= crossing * (1.0 + ACTIVATION_TOL) {
        // Both quotients are positive, so truncation is the floor.
        let l = (speed * tau / dx + 1e-9) as i64;
        match side {
            Side::Downstream => {
                let traced = (n - 1 - l).max(0);
                eval_initial(traced, &mut best, &mut ops);
                eval_initial(traced + 1, &mut best, &mut ops);
            }
            Side::Upstream => {
                let traced = l.min(n - 1);
                eval_initial(traced, &mut best, &mut ops);
                eval_initial(traced - 1, &mut best, &mut ops);
            }
        }
    } else {
        let opp = cond.blocks(opposite(side));
        if !opp.is_empty() {
            let k = (((tau - crossing) / dt + 1e-9) as usize).min(opp.len() - 1);
            let mut v = boundary_candidate_tri(cond, fd, side, k, tau);
            ops += 1;
            if !v.is_finite() && k > 0 {
                v = boundary_candidate_tri(cond, fd, side, k - 1, tau);
                ops += 1;
            }
            best = best.min(v);
        }
    }
    cursor.record(ops);
    best
}

/// Per-position pruning state for repeated interior queries at increasing
/// times.
#[derive(Debug, Clone)]
pub struct InteriorProbe {
    x: f64,
    alive: Vec<usize>,
    last_t: f64,
    last_ops: usize,
}

impl InteriorProbe {
    pub fn new(cond: &LinkValueCondition, x: f64) -> Self {
        Self { x, alive: (0..cond.n_ini()).collect(), last_t: 0.0, last_ops: 0 }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    /// Surviving initial indices.
    pub fn alive(&self) -> &[usize] {
        &self.alive
    }

    /// Component evaluations of the latest query.
    pub fn last_ops(&self) -> usize {
        self.last_ops
    }
}

/// Time after which initial block `i`'s component at `x` stays on a fan
/// and grows at exactly `q_max`.
fn fan_time(fd: &TriangularFd, b: &crate::value_conditions::InitialBlock, x: f64) -> f64 {
    if b.density < fd.k_crit() {
        ((x - b.x_lo) / fd.v_free()).max(0.0)
    } else {
        ((b.x_hi - x) / -fd.w_cong()).max(0.0)
    }
}

/// Interior solution with per-position pruning of initial blocks and a
/// single candidate per boundary. Non-triangular diagrams fall back to
/// the full minimisation.
pub fn solve_point_flh(
    cond: &LinkValueCondition,
    fd: &FundamentalDiagram,
    t: f64,
    probe: &mut InteriorProbe,
) -> Result<f64, FlhError> {
    let x = probe.x;
    check_domain(cond, x, t)?;
    let Some(tri) = fd.as_triangular() else {
        let (n, ops) = solve_point_lh_counted(cond, fd, x, t)?;
        probe.last_ops = ops;
        return Ok(n);
    };
    if t < probe.last_t {
        return Err(FlhError::Sequencing { side: Side::Upstream, condition: probe.last_t, solver: t });
    }
    let x = x.clamp(cond.x_0, cond.x_n);
    let mut best = f64::INFINITY;
    let mut ops = 0;
    let mut values = Vec::with_capacity(probe.alive.len());
    for &i in &probe.alive {
        let v = initial_component(fd, &cond.initial[i], x, t).value;
        values.push(v);
        best = best.min(v);
        ops += 1;
    }
    // The most recently arrived block is the minimum on each boundary.
    let up = arrived_blocks(&cond.upstream, x - cond.x_0, tri.v_free(), t);
    if up > 0 {
        best = best.min(upstream_component(fd, &cond.upstream[up - 1], cond.x_0, x, t).value);
        ops += 1;
    }
    let down = arrived_blocks(&cond.downstream, cond.x_n - x, -tri.w_cong(), t);
    if down > 0 {
        best = best.min(downstream_component(fd, &cond.downstream[down - 1], cond.x_n, x, t).value);
        ops += 1;
    }
    for (pos, &i) in probe.alive.iter().enumerate() {
        if activated(t, fan_time(tri, &cond.initial[i], x)) && dominates(best, values[pos]) {
            values[pos] = f64::NAN;
        }
    }
    retain_marked(&mut probe.alive, &mut values);
    probe.last_t = t;
    probe.last_ops = ops;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::solve_point_lh;
    use approx::assert_relative_eq;

    fn highway() -> TriangularFd {
        TriangularFd::from_capacity(30.0, 0.1297, 0.556).unwrap()
    }

    fn uniform(fd: &FundamentalDiagram, length: f64, ks: &[f64]) -> LinkValueCondition {
        let dx = length / ks.len() as f64;
        let breaks: Vec<f64> = (0..=ks.len()).map(|i| i as f64 * dx).collect();
        LinkValueCondition::from_density_profile(fd, &breaks, ks, 0.0).unwrap()
    }

    #[test]
    fn free_flow_demand_and_counts() {
        let fd: FundamentalDiagram = highway().into();
        let cond = uniform(&fd, 1000.0, &[0.004; 5]);
        let mut state = FlhLinkState::with_cfl(cond, fd.clone(), 1.0).unwrap();
        for s in 0..20 {
            let d = state.demand().unwrap();
            assert_relative_eq!(d, 0.12, epsilon = 1e-12);
            assert!(state.cursor(Side::Downstream).last_ops() <= 3);
            state.advance(0.0, d).unwrap();
            let expected = -0.004 * 1000.0 + 0.12 * (s + 1) as f64;
            assert_relative_eq!(state.cursor(Side::Downstream).last_value(), expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn jammed_link_has_zero_supply_and_full_demand() {
        let fd: FundamentalDiagram = highway().into();
        let cond = uniform(&fd, 1000.0, &[0.1297; 4]);
        for mut state in [
            FlhLinkState::new(cond.clone(), fd.clone(), 1.0).unwrap(),
            FlhLinkState::with_cfl(cond.clone(), fd.clone(), 1.0).unwrap(),
        ] {
            assert_eq!(state.supply().unwrap(), 0.0);
            assert_relative_eq!(state.demand().unwrap(), 0.556, epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_link_has_no_demand_and_full_supply() {
        let fd: FundamentalDiagram = highway().into();
        let mut state = FlhLinkState::new(uniform(&fd, 500.0, &[0.0]), fd, 1.0).unwrap();
        assert_eq!(state.demand().unwrap(), 0.0);
        assert_relative_eq!(state.supply().unwrap(), 0.556, epsilon = 1e-12);
    }

    #[test]
    fn downstream_half_jam_keeps_upstream_supply_open() {
        let fd: FundamentalDiagram = highway().into();
        let cond = uniform(&fd, 1000.0, &[0.0, 0.1297]);
        let mut state = FlhLinkState::new(cond, fd, 1.0).unwrap();
        assert_relative_eq!(state.supply().unwrap(), 0.556, epsilon = 1e-12);
    }

    #[test]
    fn steady_inflow_translates_to_outflow() {
        let fd: FundamentalDiagram = highway().into();
        let cond = uniform(&fd, 600.0, &[0.0; 6]);
        let mut state = FlhLinkState::with_cfl(cond, fd.clone(), 2.0).unwrap();
        let q: f64 = 0.3;
        for _ in 0..60 {
            let d = state.demand().unwrap();
            let s = state.supply().unwrap();
            state.advance(q.min(s), d).unwrap();
            let t = state.time();
            let expected = if t <= 20.0 { 0.0 } else { q * (t - 20.0) };
            assert_relative_eq!(state.cursor(Side::Downstream).last_value(), expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn first_step_value_is_initial_plus_growth() {
        let fd: FundamentalDiagram = highway().into();
        let cond = uniform(&fd, 1000.0, &[0.01, 0.05, 0.004]);
        let mut state = FlhLinkState::new(cond.clone(), fd.clone(), 1e-9).unwrap();
        let n = state.boundary_value_step(Side::Downstream).unwrap();
        assert_relative_eq!(n, cond.initial_value(1000.0), epsilon = 1e-6);
    }

    #[test]
    fn cfl_mode_requires_triangular_uniform_blocks() {
        let fd: FundamentalDiagram = highway().into();
        let uneven = LinkValueCondition::from_density_profile(&fd, &[0.0, 100.0, 300.0], &[0.0, 0.0], 0.0).unwrap();
        assert!(matches!(FlhLinkState::with_cfl(uneven, fd.clone(), 1.0), Err(FlhError::ModeMismatch(_))));
        let coarse = uniform(&fd, 100.0, &[0.0; 4]);
        assert!(FlhLinkState::with_cfl(coarse.clone(), fd.clone(), 1.0).is_err());
        let mut general = FlhLinkState::new(coarse, fd, 0.5).unwrap();
        assert!(matches!(general.cfl_boundary_step(Side::Upstream), Err(FlhError::ModeMismatch(_))));
    }

    #[test]
    fn condition_with_boundary_blocks_is_rejected() {
        let fd: FundamentalDiagram = highway().into();
        let mut cond = uniform(&fd, 500.0, &[0.01]);
        cond.append_boundary_flow(&fd, Side::Upstream, 0.1, 1.0).unwrap();
        assert!(matches!(FlhLinkState::new(cond, fd, 1.0), Err(FlhError::Sequencing { .. })));
    }

    #[test]
    fn out_of_range_flow_leaves_the_state_unchanged() {
        let fd: FundamentalDiagram = highway().into();
        let mut state = FlhLinkState::new(uniform(&fd, 500.0, &[0.01]), fd.clone(), 1.0).unwrap();
        assert!(state.advance(0.1, 2.0 * fd.capacity()).is_err());
        assert!(state.condition().upstream.is_empty());
        assert_eq!(state.time(), 0.0);
    }

    #[test]
    fn interior_probe_shrinks_and_matches() {
        let fd: FundamentalDiagram = highway().into();
        // The jam ahead eventually undercuts the free block's fan at x = 50.
        let cond = uniform(&fd, 400.0, &[0.01, 0.1297]);
        let mut probe = InteriorProbe::new(&cond, 50.0);
        let mut previous = usize::MAX;
        for s in 0..60 {
            let t = s as f64;
            let n = solve_point_flh(&cond, &fd, t, &mut probe).unwrap();
            let exact = solve_point_lh(&cond, &fd, 50.0, t).unwrap();
            assert_relative_eq!(n, exact, epsilon = 1e-9 * (1.0 + exact.abs()));
            assert!(probe.last_ops() <= previous);
            previous = probe.last_ops();
        }
        assert_eq!(probe.alive(), &[1]);
    }

    #[test]
    fn single_block_probe_keeps_its_block() {
        let fd: FundamentalDiagram = highway().into();
        let cond = uniform(&fd, 400.0, &[0.03]);
        let mut probe = InteriorProbe::new(&cond, 200.0);
        for s in 0..30 {
            solve_point_flh(&cond, &fd, s as f64, &mut probe).unwrap();
            assert_eq!(probe.alive(), &[0]);
        }
    }
}
