use crate::components::{arrived_blocks, downstream_component, initial_component, upstream_component};
use crate::flh::FlhError;
use crate::fundamental_diagram::{ConcaveFd, FundamentalDiagram};
use crate::value_conditions::{LinkValueCondition, Side};

/// Classical Lax-Hopf link: every boundary value is the minimum over all
/// initial blocks and every opposite-boundary block that has arrived.
#[derive(Debug, Clone)]
pub struct LhLinkState {
    cond: LinkValueCondition,
    fd: FundamentalDiagram,
    dt: f64,
    step: usize,
    ops: [u64; 2],
    last_ops: [u32; 2],
}

impl LhLinkState {
    pub fn new(cond: LinkValueCondition, fd: FundamentalDiagram, dt: f64) -> Result<Self, FlhError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(FlhError::InvalidStep(dt));
        }
        Ok(Self { cond, fd, dt, step: 0, ops: [0; 2], last_ops: [0; 2] })
    }

    pub fn condition(&self) -> &LinkValueCondition {
        &self.cond
    }

    pub fn diagram(&self) -> &FundamentalDiagram {
        &self.fd
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    /// Prospective `N(boundary, t+Δt)` without the block about to be assigned.
    pub fn boundary_value(&mut self, side: Side) -> f64 {
        let tau = (self.step + 1) as f64 * self.dt;
        let cond = &self.cond;
        let fd = &self.fd;
        let (t_last, n_last) = cond.boundary_end(side);
        let mut best = n_last + (tau - t_last) * fd.conjugate_at(0.0);
        let x = cond.boundary_position(side);
        for b in &cond.initial {
            best = best.min(initial_component(fd, b, x, tau).value);
        }
        let mut evals = 1 + cond.n_ini();
        match side {
            Side::Downstream => {
                let k = arrived_blocks(&cond.upstream, cond.length(), fd.free_speed(), tau);
                for b in &cond.upstream[..k] {
                    best = best.min(upstream_component(fd, b, cond.x_0, x, tau).value);
                }
                evals += k;
            }
            Side::Upstream => {
                let k = arrived_blocks(&cond.downstream, cond.length(), -fd.backward_speed(), tau);
                for b in &cond.downstream[..k] {
                    best = best.min(downstream_component(fd, b, cond.x_n, x, tau).value);
                }
                evals += k;
            }
        }
        let slot = side_slot(side);
        self.last_ops[slot] = evals as u32;
        self.ops[slot] += evals as u64;
        best
    }

    pub fn demand(&mut self) -> f64 {
        let n = self.boundary_value(Side::Downstream);
        let last = self.cond.boundary_end(Side::Downstream).1;
        ((n - last) / self.dt).clamp(0.0, self.fd.capacity())
    }

    pub fn supply(&mut self) -> f64 {
        let n = self.boundary_value(Side::Upstream);
        let last = self.cond.boundary_end(Side::Upstream).1;
        ((n - last) / self.dt).clamp(0.0, self.fd.capacity())
    }

    pub fn advance(&mut self, inflow: f64, outflow: f64) -> Result<(), FlhError> {
        let t_lo = self.time();
        let t_hi = (self.step + 1) as f64 * self.dt;
        self.cond.append_boundary_block(&self.fd, Side::Upstream, t_lo, t_hi, inflow)?;
        self.cond.append_boundary_block(&self.fd, Side::Downstream, t_lo, t_hi, outflow)?;
        self.step += 1;
        Ok(())
    }

    pub fn op_count(&self, side: Side) -> u64 {
        self.ops[side_slot(side)]
    }

    pub fn last_ops(&self, side: Side) -> u32 {
        self.last_ops[side_slot(side)]
    }
}

fn side_slot(side: Side) -> usize {
    match side {
        Side::Upstream => 0,
        Side::Downstream => 1,
    }
}
