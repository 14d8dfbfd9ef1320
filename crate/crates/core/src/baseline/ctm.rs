use thiserror::Error;

use crate::fundamental_diagram::{ConcaveFd, FundamentalDiagram};
use crate::value_conditions::LinkValueCondition;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CtmError {
    #[error("CFL violated: cell width {dx} m is below {speed} m/s × Δt = {min} m")]
    Cfl { dx: f64, speed: f64, min: f64 },
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("no density history recorded for this link")]
    NoHistory,
    #[error("probe ({x} m, {t} s) outside the simulated domain")]
    OutOfDomain { x: f64, t: f64 },
}

/// Godunov (cell transmission) discretisation of one link.
#[derive(Debug, Clone)]
pub struct CtmLinkState {
    fd: FundamentalDiagram,
    dt: f64,
    x_0: f64,
    widths: Vec<f64>,
    densities: Vec<f64>,
    fluxes: Vec<f64>,
    n_up: f64,
    n_down: f64,
    step: usize,
    /// Per recorded step: `N_up` followed by the cell densities.
    history: Option<Vec<Vec<f64>>>,
}

impl CtmLinkState {
    /// Cells of width `max(v, |w|)·Δt`, the remainder going to the last
    /// cell, unless `cells` forces a count. Cell densities are exact averages
    /// of the initial profile.
    pub fn new(
        cond: &LinkValueCondition,
        fd: FundamentalDiagram,
        dt: f64,
        cells: Option<usize>,
        record_history: bool,
    ) -> Result<Self, CtmError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(CtmError::InvalidStep(dt));
        }
        let length = cond.length();
        let speed = fd.free_speed().max(-fd.backward_speed());
        let min = speed * dt;
        let widths = match cells {
            Some(m) => {
                let dx = length / m.max(1) as f64;
                vec![dx; m.max(1)]
            }
            None => {
                let m = (length / min * (1.0 + 1e-12)).floor() as usize;
                if m == 0 {
                    vec![length]
                } else {
                    let mut w = vec![min; m];
                    w[m - 1] = length - min * (m - 1) as f64;
                    w
                }
            }
        };
        let narrowest = widths.iter().copied().fold(f64::INFINITY, f64::min);
        if narrowest < min * (1.0 - 1e-9) {
            return Err(CtmError::Cfl { dx: narrowest, speed, min });
        }
        let mut x = cond.x_0;
        let densities = widths
            .iter()
            .map(|&w| {
                let k = (cond.initial_value(x) - cond.initial_value(x + w)) / w;
                x += w;
                k.clamp(0.0, fd.jam_density())
            })
            .collect::<Vec<_>>();
        let n_up = cond.initial_value(cond.x_0);
        let n_down = cond.initial_value(cond.x_n);
        let fluxes = vec![0.0; widths.len() + 1];
        let mut state = Self {
            fd,
            dt,
            x_0: cond.x_0,
            widths,
            densities,
            fluxes,
            n_up,
            n_down,
            step: 0,
            history: record_history.then(Vec::new),
        };
        state.record();
        Ok(state)
    }

    fn record(&mut self) {
        if let Some(h) = self.history.as_mut() {
            let mut row = Vec::with_capacity(self.densities.len() + 1);
            row.push(self.n_up);
            row.extend_from_slice(&self.densities);
            h.push(row);
        }
    }

    pub fn cell_count(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn n_up(&self) -> f64 {
        self.n_up
    }

    pub fn n_down(&self) -> f64 {
        self.n_down
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    /// Vehicles currently on the link.
    pub fn stored(&self) -> f64 {
        self.widths.iter().zip(&self.densities).map(|(w, k)| w * k).sum()
    }

    pub fn demand(&self) -> f64 {
        self.fd.demand_supply_at(self.densities[self.densities.len() - 1]).0
    }

    pub fn supply(&self) -> f64 {
        self.fd.demand_supply_at(self.densities[0]).1
    }

    /// Evaluations per step: demand, supply, flux and update per cell.
    pub fn ops_per_step(&self) -> u32 {
        4 * self.widths.len() as u32
    }

    /// Godunov update with the given boundary flows; returns the new
    /// `(demand, supply)`.
    pub fn ctm_step(&mut self, inflow: f64, outflow: f64) -> (f64, f64) {
        let m = self.densities.len();
        self.fluxes[0] = inflow;
        self.fluxes[m] = outflow;
        for i in 0..m - 1 {
            let d = self.fd.demand_supply_at(self.densities[i]).0;
            let s = self.fd.demand_supply_at(self.densities[i + 1]).1;
            self.fluxes[i + 1] = d.min(s);
        }
        let k_jam = self.fd.jam_density();
        for i in 0..m {
            let k = self.densities[i] + self.dt / self.widths[i] * (self.fluxes[i] - self.fluxes[i + 1]);
            self.densities[i] = k.clamp(0.0, k_jam);
        }
        self.n_up += inflow * self.dt;
        self.n_down += outflow * self.dt;
        self.step += 1;
        self.record();
        (self.demand(), self.supply())
    }

    /// Count and density of the cell containing `x` at step `⌊t/Δt⌋`;
    /// `x` is measured from the link start.
    pub fn probe(&self, x: f64, t: f64) -> Result<(f64, f64), CtmError> {
        let history = self.history.as_ref().ok_or(CtmError::NoHistory)?;
        let length: f64 = self.widths.iter().sum();
        let s = (t / self.dt + 1e-9).floor();
        if !(x >= -1e-9 && x <= length * (1.0 + 1e-12) + 1e-9) || !(s >= 0.0) || s as usize >= history.len() {
            return Err(CtmError::OutOfDomain { x, t });
        }
        let row = &history[s as usize];
        let mut n = row[0];
        let mut lo = 0.0;
        for (i, &w) in self.widths.iter().enumerate() {
            let k = row[i + 1];
            if x <= lo + w || i + 1 == self.widths.len() {
                return Ok((n - k * (x - lo), k));
            }
            n -= k * w;
            lo += w;
        }
        unreachable!("widths are non-empty")
    }

    pub fn x_0(&self) -> f64 {
        self.x_0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fundamental_diagram::TriangularFd;
    use approx::assert_relative_eq;

    fn highway() -> FundamentalDiagram {
        TriangularFd::from_capacity(30.0, 0.1297, 0.556).unwrap().into()
    }

    fn link(fd: &FundamentalDiagram, breaks: &[f64], ks: &[f64]) -> LinkValueCondition {
        LinkValueCondition::from_density_profile(fd, breaks, ks, 0.0).unwrap()
    }

    #[test]
    fn critical_density_is_steady() {
        let fd = highway();
        let kc = fd.critical_density();
        let cond = link(&fd, &[0.0, 300.0], &[kc]);
        let mut ctm = CtmLinkState::new(&cond, fd.clone(), 1.0, None, false).unwrap();
        assert_eq!(ctm.cell_count(), 10);
        for _ in 0..10 {
            ctm.ctm_step(fd.capacity(), fd.capacity());
            for &k in ctm.densities() {
                assert_relative_eq!(k, kc, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn free_cell_cannot_enter_jam() {
        let fd = highway();
        let cond = link(&fd, &[0.0, 30.0, 60.0], &[0.004, 0.1297]);
        let mut ctm = CtmLinkState::new(&cond, fd, 1.0, None, false).unwrap();
        ctm.ctm_step(0.0, 0.0);
        assert_eq!(ctm.densities()[1], 0.1297);
    }

    #[test]
    fn conservation_arithmetic() {
        let fd = highway();
        let cond = link(&fd, &[0.0, 100.0], &[0.004]);
        let mut ctm = CtmLinkState::new(&cond, fd, 1.0, Some(1), false).unwrap();
        ctm.ctm_step(0.12, 0.0);
        assert_relative_eq!(ctm.densities()[0], 0.0052, epsilon = 1e-15);
    }

    #[test]
    fn remainder_goes_to_last_cell() {
        let fd = highway();
        let cond = link(&fd, &[0.0, 100.0], &[0.0]);
        let ctm = CtmLinkState::new(&cond, fd.clone(), 1.0, None, false).unwrap();
        assert_eq!(ctm.widths(), &[30.0, 30.0, 40.0]);
        assert!(matches!(
            CtmLinkState::new(&cond, fd, 1.0, Some(4), false),
            Err(CtmError::Cfl { .. })
        ));
    }

    #[test]
    fn probe_reads_history() {
        let fd = highway();
        let cond = link(&fd, &[0.0, 60.0, 120.0], &[0.01, 0.05]);
        let mut ctm = CtmLinkState::new(&cond, fd, 1.0, None, true).unwrap();
        let (n, k) = ctm.probe(90.0, 0.0).unwrap();
        assert_relative_eq!(n, -0.6 - 1.5, epsilon = 1e-12);
        assert_eq!(k, 0.05);
        ctm.ctm_step(0.1, 0.2);
        let (n, _) = ctm.probe(0.0, 1.0).unwrap();
        assert_relative_eq!(n, 0.1, epsilon = 1e-12);
        assert!(ctm.probe(10.0, 5.0).is_err());
    }
}
