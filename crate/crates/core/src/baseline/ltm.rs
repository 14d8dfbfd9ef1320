use thiserror::Error;

use crate::fundamental_diagram::{FundamentalDiagram, TriangularFd};
use crate::value_conditions::LinkValueCondition;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LtmError {
    #[error("the link transmission model needs a triangular diagram")]
    NonTriangular,
    #[error("Δt = {dt} s exceeds the link travel time {travel} s")]
    StepTooLong { dt: f64, travel: f64 },
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
}

/// Newell's two-wave method on cumulative curves sampled every `Δt`.
///
/// Counts before `t = 0` are read off the initial condition by the same
/// translation along the free and jam characteristics.
#[derive(Debug, Clone)]
pub struct LtmLinkState {
    fd: TriangularFd,
    dt: f64,
    initial: LinkValueCondition,
    n_up: Vec<f64>,
    n_down: Vec<f64>,
}

impl LtmLinkState {
    pub fn new(cond: &LinkValueCondition, fd: &FundamentalDiagram, dt: f64) -> Result<Self, LtmError> {
        let fd = *fd.as_triangular().ok_or(LtmError::NonTriangular)?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(LtmError::InvalidStep(dt));
        }
        let travel = cond.length() / fd.v_free().max(-fd.w_cong());
        if dt > travel * (1.0 + 1e-12) {
            return Err(LtmError::StepTooLong { dt, travel });
        }
        let mut initial = cond.clone();
        initial.upstream.clear();
        initial.downstream.clear();
        let n_up = vec![initial.initial_value(initial.x_0)];
        let n_down = vec![initial.initial_value(initial.x_n)];
        Ok(Self { fd, dt, initial, n_up, n_down })
    }

    pub fn time(&self) -> f64 {
        (self.n_up.len() - 1) as f64 * self.dt
    }

    pub fn n_up(&self) -> &[f64] {
        &self.n_up
    }

    pub fn n_down(&self) -> &[f64] {
        &self.n_down
    }

    fn sample(curve: &[f64], dt: f64, s: f64) -> f64 {
        let pos = s / dt;
        let i = (pos.floor() as usize).min(curve.len() - 1);
        if i + 1 >= curve.len() {
            return curve[curve.len() - 1];
        }
        let frac = (pos - i as f64).clamp(0.0, 1.0);
        curve[i] + frac * (curve[i + 1] - curve[i])
    }

    /// Upstream curve, extended before `t = 0` along free characteristics.
    fn upstream_at(&self, s: f64) -> f64 {
        if s >= 0.0 {
            Self::sample(&self.n_up, self.dt, s)
        } else {
            self.initial.initial_value(self.initial.x_0 - self.fd.v_free() * s)
        }
    }

    /// Count at `x` implied by the downstream curve at time `s` along a jam
    /// characteristic reaching `x`.
    fn jam_translated(&self, x: f64, t: f64) -> f64 {
        let k_jam = self.fd.k_jam();
        let s = t - (self.initial.x_n - x) / -self.fd.w_cong();
        if s >= 0.0 {
            Self::sample(&self.n_down, self.dt, s) + k_jam * (self.initial.x_n - x)
        } else {
            let y = x - self.fd.w_cong() * t;
            self.initial.initial_value(y) + k_jam * (y - x)
        }
    }

    /// Count at `x` implied by the upstream curve along a free characteristic.
    fn free_translated(&self, x: f64, t: f64) -> f64 {
        self.upstream_at(t - (x - self.initial.x_0) / self.fd.v_free())
    }

    pub fn demand(&self) -> f64 {
        let tau = self.time() + self.dt;
        let last = self.n_down[self.n_down.len() - 1];
        let send = self.free_translated(self.initial.x_n, tau).min(last + self.fd.q_max() * self.dt);
        ((send - last) / self.dt).clamp(0.0, self.fd.q_max())
    }

    pub fn supply(&self) -> f64 {
        let tau = self.time() + self.dt;
        let last = self.n_up[self.n_up.len() - 1];
        let receive = self.jam_translated(self.initial.x_0, tau).min(last + self.fd.q_max() * self.dt);
        ((receive - last) / self.dt).clamp(0.0, self.fd.q_max())
    }

    /// Current `(demand, supply)`.
    pub fn ltm_boundary_step(&self) -> (f64, f64) {
        (self.demand(), self.supply())
    }

    pub fn advance(&mut self, inflow: f64, outflow: f64) {
        let up = self.n_up[self.n_up.len() - 1] + inflow * self.dt;
        let down = self.n_down[self.n_down.len() - 1] + outflow * self.dt;
        self.n_up.push(up);
        self.n_down.push(down);
    }

    /// Newell's interior estimate: the smaller of the free-wave and
    /// jam-wave translations. It ignores expansion fans and is therefore
    /// not the LWR solution in general.
    pub fn ltm_interior_probe(&self, x: f64, t: f64) -> f64 {
        let x = x.clamp(self.initial.x_0, self.initial.x_n);
        self.free_translated(x, t).min(self.jam_translated(x, t))
    }

    pub fn ops_per_step(&self) -> u32 {
        2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::solve_point_lh;
    use approx::assert_relative_eq;

    fn highway() -> FundamentalDiagram {
        TriangularFd::from_capacity(30.0, 0.1297, 0.556).unwrap().into()
    }

    #[test]
    fn steady_inflow_exits_after_free_travel_time() {
        let fd = highway();
        let cond = LinkValueCondition::from_density_profile(&fd, &[0.0, 300.0], &[0.01], 0.0).unwrap();
        let mut ltm = LtmLinkState::new(&cond, &fd, 1.0).unwrap();
        for _ in 0..40 {
            let d = ltm.demand();
            assert_relative_eq!(d, 0.3, epsilon = 1e-12);
            ltm.advance(0.3, d);
        }
    }

    #[test]
    fn jammed_link_refuses_inflow_until_the_wave_returns() {
        let fd = highway();
        let tri = *fd.as_triangular().unwrap();
        let cond = LinkValueCondition::from_density_profile(&fd, &[0.0, 100.0], &[0.1297], 0.0).unwrap();
        let mut ltm = LtmLinkState::new(&cond, &fd, 1.0).unwrap();
        let lag = 100.0 / -tri.w_cong();
        for s in 0..40 {
            let sup = ltm.supply();
            if ((s + 1) as f64) < lag {
                assert_eq!(sup, 0.0, "step {s}");
            }
            let d = ltm.demand();
            ltm.advance(sup, d);
        }
        assert!(ltm.supply() > 0.0);
    }

    #[test]
    fn constant_density_interior_is_exact() {
        let fd = highway();
        for k in [0.01, 0.05] {
            let cond = LinkValueCondition::from_density_profile(&fd, &[0.0, 600.0], &[k], 0.0).unwrap();
            let ltm = LtmLinkState::new(&cond, &fd, 1.0).unwrap();
            for (x, t) in [(100.0, 2.0), (300.0, 5.0), (550.0, 1.0)] {
                let exact = solve_point_lh(&cond, &fd, x, t).unwrap();
                assert_relative_eq!(ltm.ltm_interior_probe(x, t), exact, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn probe_at_boundary_matches_curve() {
        let fd = highway();
        let cond = LinkValueCondition::from_density_profile(&fd, &[0.0, 300.0], &[0.01], 0.0).unwrap();
        let mut ltm = LtmLinkState::new(&cond, &fd, 1.0).unwrap();
        for _ in 0..15 {
            let (d, s) = ltm.ltm_boundary_step();
            ltm.advance(0.2f64.min(s), d);
        }
        assert_relative_eq!(ltm.ltm_interior_probe(0.0, 15.0), ltm.n_up()[15], epsilon = 1e-12);
        assert_relative_eq!(ltm.ltm_interior_probe(300.0, 15.0), ltm.n_down()[15], epsilon = 1e-12);
    }

    #[test]
    fn non_triangular_diagram_is_unsupported() {
        let fd: FundamentalDiagram = crate::fundamental_diagram::GreenshieldsFd::new(1.0, 4.0).unwrap().into();
        let cond = LinkValueCondition::from_density_profile(&fd, &[0.0, 300.0], &[0.5], 0.0).unwrap();
        assert_eq!(LtmLinkState::new(&cond, &fd, 1.0).unwrap_err(), LtmError::NonTriangular);
    }
}
