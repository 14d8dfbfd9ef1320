//! Time stepping over a network: gather link demands and supplies, resolve
//! every node, append the resulting boundary flows, advance.

use std::collections::HashMap;
use std::time::Instant;

use thiserror::Error;

use crate::baseline::{CtmLinkState, LhLinkState, LtmLinkState};
use crate::components::solve_point_lh;
use crate::flh::FlhLinkState;
use crate::fundamental_diagram::{ConcaveFd, FundamentalDiagram};
use crate::junction::{resolve_node, NodeSpec};
use crate::network::{Network, NetworkError};
use crate::par::{self, Execution};
use crate::scenario::{EdgeProfile, ModelKind, Scenario, ScenarioError};
use crate::value_conditions::{LinkValueCondition, Side};

/// Half-width of the central difference used for probed densities.
pub const PROBE_DELTA: f64 = 0.5;

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid network: {}", join(.0))]
    Network(Vec<NetworkError>),
    #[error("invalid scenario: {}", join(.0))]
    Scenario(Vec<ScenarioError>),
    #[error("link {link}: {message}")]
    Cfl { link: String, message: String },
    #[error("link {link} at step {step}: {message}")]
    Step { link: String, step: usize, message: String },
    #[error("link-interior probing of {0} results is not supported: the link transmission model does not converge to the LWR solution inside links")]
    ProbeRefused(ModelKind),
    #[error("probe on link {link} at x = {x} m, t = {t} s is outside the simulated domain")]
    OutOfDomain { link: String, x: f64, t: f64 },
    #[error("unknown link {0:?}")]
    UnknownLink(String),
    #[error("no density history was recorded; rerun with history enabled")]
    NoHistory,
    #[error("results are not comparable: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimOptions {
    pub execution: Execution,
    /// Keep CTM cell densities for every step so results can be probed.
    pub record_history: bool,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum LinkSolver {
    Flh(FlhLinkState),
    Lh(LhLinkState),
    Ctm(CtmLinkState),
    Ltm(LtmLinkState),
}

impl LinkSolver {
    pub fn new(
        model: ModelKind,
        cond: LinkValueCondition,
        fd: FundamentalDiagram,
        dt: f64,
        record_history: bool,
    ) -> Result<Self, String> {
        Ok(match model {
            ModelKind::Flh => Self::Flh(FlhLinkState::auto(cond, fd, dt).map_err(|e| e.to_string())?),
            ModelKind::Lh => Self::Lh(LhLinkState::new(cond, fd, dt).map_err(|e| e.to_string())?),
            ModelKind::Ctm => Self::Ctm(CtmLinkState::new(&cond, fd, dt, None, record_history).map_err(|e| e.to_string())?),
            ModelKind::Ltm => Self::Ltm(LtmLinkState::new(&cond, &fd, dt).map_err(|e| e.to_string())?),
        })
    }

    /// `(demand, supply, evaluations)` for the coming step.
    pub fn gather(&mut self) -> Result<(f64, f64, u32), String> {
        match self {
            Self::Flh(s) => {
                let d = s.demand().map_err(|e| e.to_string())?;
                let u = s.supply().map_err(|e| e.to_string())?;
                let ops = s.cursor(Side::Upstream).last_ops().max(s.cursor(Side::Downstream).last_ops());
                Ok((d, u, ops))
            }
            Self::Lh(s) => {
                let (d, u) = (s.demand(), s.supply());
                Ok((d, u, s.last_ops(Side::Upstream).max(s.last_ops(Side::Downstream))))
            }
            Self::Ctm(s) => Ok((s.demand(), s.supply(), s.ops_per_step())),
            Self::Ltm(s) => {
                let (d, u) = s.ltm_boundary_step();
                Ok((d, u, s.ops_per_step()))
            }
        }
    }

    pub fn advance(&mut self, inflow: f64, outflow: f64) -> Result<(), String> {
        match self {
            Self::Flh(s) => s.advance(inflow, outflow).map_err(|e| e.to_string()),
            Self::Lh(s) => s.advance(inflow, outflow).map_err(|e| e.to_string()),
            Self::Ctm(s) => {
                s.ctm_step(inflow, outflow);
                Ok(())
            }
            Self::Ltm(s) => {
                s.advance(inflow, outflow);
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSeries {
    pub id: String,
    pub length: f64,
    pub capacity: f64,
    /// Flow over each step, veh/s.
    pub inflow: Vec<f64>,
    pub outflow: Vec<f64>,
    /// Cumulative counts at every step boundary, `steps + 1` entries.
    pub n_up: Vec<f64>,
    pub n_down: Vec<f64>,
    /// Component (or cell) evaluations per step.
    pub ops: Vec<u32>,
}

/// Wall-clock seconds spent in each phase.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timing {
    pub link: f64,
    pub node: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub model: ModelKind,
    pub dt: f64,
    pub steps: usize,
    /// Sorted by link id.
    pub links: Vec<LinkSeries>,
    pub timing: Timing,
    /// Vehicles that entered from sources and left through sinks.
    pub entered: f64,
    pub exited: f64,
    solvers: Vec<LinkSolver>,
}

struct CompiledNode<'a> {
    spec: &'a NodeSpec,
    incoming: Vec<usize>,
    outgoing: Vec<usize>,
}

fn link_condition(net: &Network, sc: &Scenario, i: usize, fd: &FundamentalDiagram) -> Result<LinkValueCondition, String> {
    let link = &net.links[i];
    let lanes = link.lanes as f64;
    let (breaks, densities) = match sc.initial.iter().find(|p| p.link == link.id) {
        Some(p) => (p.breaks.clone(), p.densities.iter().map(|k| k * lanes).collect()),
        None => (vec![0.0, link.length], vec![0.0]),
    };
    LinkValueCondition::from_density_profile(fd, &breaks, &densities, 0.0).map_err(|e| e.to_string())
}

/// Runs `sc` on `net` with default options.
pub fn simulate(net: &Network, sc: &Scenario) -> Result<SimulationResult, SimError> {
    simulate_with(net, sc, SimOptions::default())
}

pub fn simulate_with(net: &Network, sc: &Scenario, opts: SimOptions) -> Result<SimulationResult, SimError> {
    net.validate().map_err(SimError::Network)?;
    sc.validate(net).map_err(SimError::Scenario)?;
    let index = net.link_index();
    let n_links = net.links.len();
    let mut diagrams = Vec::with_capacity(n_links);
    let mut solvers = Vec::with_capacity(n_links);
    for (i, link) in net.links.iter().enumerate() {
        let fd = link.diagram().map_err(|e| SimError::Cfl { link: link.id.clone(), message: e.to_string() })?;
        let cond = link_condition(net, sc, i, &fd).map_err(|message| SimError::Cfl { link: link.id.clone(), message })?;
        let solver = LinkSolver::new(sc.model, cond, fd.clone(), sc.dt, opts.record_history)
            .map_err(|message| SimError::Cfl { link: link.id.clone(), message })?;
        diagrams.push(fd);
        solvers.push(solver);
    }
    let nodes: Vec<CompiledNode> = net
        .nodes
        .iter()
        .map(|spec| CompiledNode {
            spec,
            incoming: spec.incoming.iter().map(|l| index[l.as_str()]).collect(),
            outgoing: spec.outgoing.iter().map(|l| index[l.as_str()]).collect(),
        })
        .collect();
    let edge = |edges: &[crate::network::EdgeSpec], overrides: &[EdgeProfile]| -> Vec<(usize, f64, EdgeProfile)> {
        edges
            .iter()
            .map(|e| {
                let i = index[e.link.as_str()];
                let profile = overrides.iter().find(|p| p.link == e.link).cloned().unwrap_or_else(|| EdgeProfile::constant(&e.link, e.flow));
                (i, net.links[i].lanes as f64, profile)
            })
            .collect()
    };
    let sources = edge(&net.sources, &sc.demands);
    let sinks = edge(&net.sinks, &sc.supplies);

    let steps = sc.steps();
    let mut series: Vec<LinkSeries> = net
        .links
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let (n_up, n_down) = match &solvers[i] {
                LinkSolver::Flh(s) => (s.condition().boundary_end(Side::Upstream).1, s.condition().boundary_end(Side::Downstream).1),
                LinkSolver::Lh(s) => (s.condition().boundary_end(Side::Upstream).1, s.condition().boundary_end(Side::Downstream).1),
                LinkSolver::Ctm(s) => (s.n_up(), s.n_down()),
                LinkSolver::Ltm(s) => (s.n_up()[0], s.n_down()[0]),
            };
            let mut n_up_v = Vec::with_capacity(steps + 1);
            let mut n_down_v = Vec::with_capacity(steps + 1);
            n_up_v.push(n_up);
            n_down_v.push(n_down);
            LinkSeries {
                id: l.id.clone(),
                length: l.length,
                capacity: diagrams[i].capacity(),
                inflow: Vec::with_capacity(steps),
                outflow: Vec::with_capacity(steps),
                n_up: n_up_v,
                n_down: n_down_v,
                ops: Vec::with_capacity(steps),
            }
        })
        .collect();

    let exec = opts.execution;
    let mut timing = Timing::default();
    let (mut entered, mut exited) = (0.0, 0.0);
    let mut inflow = vec![0.0; n_links];
    let mut outflow = vec![0.0; n_links];
    for step in 0..steps {
        let t = step as f64 * sc.dt;
        let clock = Instant::now();
        let gathered = par::map_mut(exec, &mut solvers, |_, s| s.gather());
        timing.link += clock.elapsed().as_secs_f64();
        let mut demand = vec![0.0; n_links];
        let mut supply = vec![0.0; n_links];
        for (i, g) in gathered.into_iter().enumerate() {
            let (d, s, ops) = g.map_err(|message| SimError::Step { link: net.links[i].id.clone(), step, message })?;
            demand[i] = d;
            supply[i] = s;
            series[i].ops.push(ops);
        }

        let clock = Instant::now();
        let resolved = par::map(exec, &nodes, |_, n| {
            let d: Vec<f64> = n.incoming.iter().map(|&i| demand[i]).collect();
            let s: Vec<f64> = n.outgoing.iter().map(|&o| supply[o]).collect();
            resolve_node(n.spec, &d, &s, t)
        });
        for (n, r) in nodes.iter().zip(resolved) {
            let r = r.map_err(|e| SimError::Network(vec![NetworkError::Junction(e)]))?;
            for (pos, &i) in n.incoming.iter().enumerate() {
                outflow[i] = r.flows[pos].iter().sum();
            }
            for (pos, &o) in n.outgoing.iter().enumerate() {
                inflow[o] = r.flows.iter().map(|row| row[pos]).sum();
            }
        }
        for (i, lanes, p) in &sources {
            inflow[*i] = (p.at(t) * lanes).min(supply[*i]);
            entered += inflow[*i] * sc.dt;
        }
        for (i, lanes, p) in &sinks {
            outflow[*i] = (p.at(t) * lanes).min(demand[*i]);
            exited += outflow[*i] * sc.dt;
        }
        timing.node += clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let advanced = par::map_mut(exec, &mut solvers, |i, s| s.advance(inflow[i], outflow[i]));
        timing.link += clock.elapsed().as_secs_f64();
        for (i, a) in advanced.into_iter().enumerate() {
            a.map_err(|message| SimError::Step { link: net.links[i].id.clone(), step, message })?;
            let s = &mut series[i];
            s.inflow.push(inflow[i]);
            s.outflow.push(outflow[i]);
            let (up, down) = (s.n_up[step] + inflow[i] * sc.dt, s.n_down[step] + outflow[i] * sc.dt);
            s.n_up.push(up);
            s.n_down.push(down);
        }
    }

    let mut order: Vec<usize> = (0..n_links).collect();
    order.sort_by(|&a, &b| net.links[a].id.cmp(&net.links[b].id));
    let mut slots: Vec<Option<(LinkSeries, LinkSolver)>> = series.into_iter().zip(solvers).map(Some).collect();
    let (links, solvers): (Vec<_>, Vec<_>) = order.iter().map(|&i| slots[i].take().expect("each link once")).unzip();
    Ok(SimulationResult { model: sc.model, dt: sc.dt, steps, links, timing, entered, exited, solvers })
}

impl SimulationResult {
    pub fn link(&self, id: &str) -> Option<&LinkSeries> {
        self.links.iter().find(|l| l.id == id)
    }

    fn position(&self, id: &str) -> Result<usize, SimError> {
        self.links.iter().position(|l| l.id == id).ok_or_else(|| SimError::UnknownLink(id.into()))
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn solver(&self, id: &str) -> Option<&LinkSolver> {
        self.position(id).ok().map(|i| &self.solvers[i])
    }

    /// `(count, density)` at `x` metres from the start of `link` at time `t`.
    /// Densities come from a central difference of half-width
    /// [`PROBE_DELTA`] (one-sided at the link ends); CTM reports the value
    /// of the cell holding `x` at step `⌊t/Δt⌋`.
    pub fn probe(&self, link: &str, x: f64, t: f64) -> Result<(f64, f64), SimError> {
        let i = self.position(link)?;
        let length = self.links[i].length;
        let tol = 1e-9 * (1.0 + self.horizon());
        if !(x >= -1e-9 && x <= length + 1e-9 && t >= -tol && t <= self.horizon() + tol) {
            return Err(SimError::OutOfDomain { link: link.into(), x, t });
        }
        let (x, t) = (x.clamp(0.0, length), t.clamp(0.0, self.horizon()));
        let exact = |cond: &LinkValueCondition, fd: &FundamentalDiagram| -> Result<(f64, f64), SimError> {
            let at = |x: f64| solve_point_lh(cond, fd, cond.x_0 + x, t).map_err(|_| SimError::OutOfDomain { link: link.into(), x, t });
            let n = at(x)?;
            let (a, b) = ((x - PROBE_DELTA).max(0.0), (x + PROBE_DELTA).min(length));
            Ok((n, (at(a)? - at(b)?) / (b - a)))
        };
        match &self.solvers[i] {
            LinkSolver::Flh(s) => exact(s.condition(), s.diagram()),
            LinkSolver::Lh(s) => exact(s.condition(), s.diagram()),
            LinkSolver::Ctm(s) => s.probe(x, t).map_err(|e| match e {
                crate::baseline::CtmError::NoHistory => SimError::NoHistory,
                _ => SimError::OutOfDomain { link: link.into(), x, t },
            }),
            LinkSolver::Ltm(_) => Err(SimError::ProbeRefused(self.model)),
        }
    }

    /// Vehicles on `link` at the end of the run, measured by the link model
    /// itself (exact solution, cell contents or curve difference).
    pub fn stored(&self, link: &str) -> Result<f64, SimError> {
        let i = self.position(link)?;
        let t = self.horizon();
        let exact = |cond: &LinkValueCondition, fd: &FundamentalDiagram| {
            let up = solve_point_lh(cond, fd, cond.x_0, t).expect("inside the domain");
            let down = solve_point_lh(cond, fd, cond.x_n, t).expect("inside the domain");
            up - down
        };
        Ok(match &self.solvers[i] {
            LinkSolver::Flh(s) => exact(s.condition(), s.diagram()),
            LinkSolver::Lh(s) => exact(s.condition(), s.diagram()),
            LinkSolver::Ctm(s) => s.stored(),
            LinkSolver::Ltm(s) => s.n_up()[s.n_up().len() - 1] - s.n_down()[s.n_down().len() - 1],
        })
    }

    /// Vehicles on every link at `t = 0`.
    pub fn initially_stored(&self) -> f64 {
        self.links.iter().map(|l| l.n_up[0] - l.n_down[0]).sum()
    }

    /// `entered − exited − Δstored` over the whole network.
    pub fn conservation_residual(&self) -> f64 {
        let stored: f64 = self.links.iter().map(|l| self.stored(&l.id).expect("known link")).sum();
        self.entered - self.exited - (stored - self.initially_stored())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseReport {
    /// `(link id, RMSE of the outflow series)`, sorted by id.
    pub per_link: Vec<(String, f64)>,
    pub mean: f64,
}

/// Root-mean-square difference of every link's outflow series.
pub fn rmse_compare(a: &SimulationResult, b: &SimulationResult) -> Result<RmseReport, SimError> {
    if a.links.len() != b.links.len() || a.steps != b.steps || (a.dt - b.dt).abs() > 1e-12 {
        return Err(SimError::Shape(format!(
            "{} links × {} steps of {} s vs {} links × {} steps of {} s",
            a.links.len(),
            a.steps,
            a.dt,
            b.links.len(),
            b.steps,
            b.dt
        )));
    }
    let by_id: HashMap<&str, &LinkSeries> = b.links.iter().map(|l| (l.id.as_str(), l)).collect();
    let mut per_link = Vec::with_capacity(a.links.len());
    for la in &a.links {
        let lb = by_id.get(la.id.as_str()).ok_or_else(|| SimError::Shape(format!("link {} missing", la.id)))?;
        let n = la.outflow.len().max(1) as f64;
        let sq: f64 = la.outflow.iter().zip(&lb.outflow).map(|(x, y)| (x - y) * (x - y)).sum();
        per_link.push((la.id.clone(), (sq / n).sqrt()));
    }
    let mean = if per_link.is_empty() { 0.0 } else { per_link.iter().map(|p| p.1).sum::<f64>() / per_link.len() as f64 };
    Ok(RmseReport { per_link, mean })
}

/// RMSE of `coarse` outflows against `fine` outflows averaged over each
/// coarse step; `coarse.dt` must be a whole multiple of `fine.dt`.
pub fn rmse_resampled(coarse: &SimulationResult, fine: &SimulationResult) -> Result<RmseReport, SimError> {
    let ratio = coarse.dt / fine.dt;
    let m = ratio.round() as usize;
    if m == 0 || (ratio - m as f64).abs() > 1e-9 * ratio || coarse.steps * m != fine.steps || coarse.links.len() != fine.links.len() {
        return Err(SimError::Shape(format!(
            "{} steps of {} s cannot be aligned with {} steps of {} s",
            coarse.steps, coarse.dt, fine.steps, fine.dt
        )));
    }
    if m == 1 {
        return rmse_compare(coarse, fine);
    }
    let mut averaged = fine.clone();
    for l in &mut averaged.links {
        l.outflow = l.outflow.chunks(m).map(|c| c.iter().sum::<f64>() / m as f64).collect();
    }
    averaged.dt = coarse.dt;
    averaged.steps = coarse.steps;
    rmse_compare(coarse, &averaged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{five_link_network, highway_lane, EdgeSpec, LinkSpec};
    use crate::scenario::InitialProfile;

    fn single_link(flow: f64) -> Network {
        Network {
            links: vec![LinkSpec { id: "a".into(), length: 600.0, lanes: 1, diagram: highway_lane(), from: None, to: None }],
            nodes: vec![],
            sources: vec![EdgeSpec { link: "a".into(), flow }],
            sinks: vec![EdgeSpec { link: "a".into(), flow: 0.556 }],
        }
    }

    fn scenario(model: ModelKind, k: f64, horizon: f64) -> Scenario {
        Scenario {
            initial: vec![InitialProfile { link: "a".into(), breaks: vec![0.0, 600.0], densities: vec![k] }],
            demands: vec![],
            supplies: vec![],
            dt: 1.0,
            horizon,
            model,
            seed: 0,
        }
    }

    #[test]
    fn steady_free_flow_passes_through() {
        for model in ModelKind::ALL {
            let r = simulate(&single_link(0.3), &scenario(model, 0.01, 60.0)).unwrap();
            let a = r.link("a").unwrap();
            for (s, &q) in a.outflow.iter().enumerate() {
                assert!((q - 0.3).abs() < 1e-9, "{model} step {s}: {q}");
            }
        }
    }

    #[test]
    fn empty_network_stays_empty() {
        for model in ModelKind::ALL {
            let r = simulate(&single_link(0.0), &scenario(model, 0.0, 30.0)).unwrap();
            let a = r.link("a").unwrap();
            assert!(a.inflow.iter().chain(&a.outflow).all(|&q| q == 0.0), "{model}");
        }
    }

    #[test]
    fn probes_agree_with_recorded_curves() {
        let r = simulate(&single_link(0.4), &scenario(ModelKind::Flh, 0.02, 40.0)).unwrap();
        let a = r.link("a").unwrap();
        for i in [0usize, 7, 40] {
            let (n, _) = r.probe("a", 0.0, i as f64).unwrap();
            assert!((n - a.n_up[i]).abs() < 1e-9);
        }
        let (n, k) = r.probe("a", 300.0, 0.0).unwrap();
        assert!((n + 6.0).abs() < 1e-12 && (k - 0.02).abs() < 1e-12);
        assert!(r.probe("a", 700.0, 1.0).is_err());
        assert!(r.probe("a", 10.0, 41.0).is_err());
    }

    #[test]
    fn ltm_probes_are_refused() {
        let r = simulate(&single_link(0.4), &scenario(ModelKind::Ltm, 0.02, 10.0)).unwrap();
        assert_eq!(r.probe("a", 300.0, 5.0), Err(SimError::ProbeRefused(ModelKind::Ltm)));
    }

    #[test]
    fn five_link_network_conserves_vehicles() {
        let net = five_link_network();
        for model in ModelKind::ALL {
            let sc = Scenario { initial: vec![], demands: vec![], supplies: vec![], dt: 1.0, horizon: 200.0, model, seed: 0 };
            let r = simulate(&net, &sc).unwrap();
            assert!(r.conservation_residual().abs() < 1e-6, "{model}: {}", r.conservation_residual());
            assert!(r.entered > 0.0 && r.exited > 0.0);
        }
    }

    #[test]
    fn schedules_are_bit_identical() {
        let net = crate::network::grid_network(2, 3, 150.0, 2, 40.0);
        let cfg = crate::scenario::RandomConfig { horizon: 120.0, ..Default::default() };
        let sc = crate::scenario::random_scenario(&net, 5, &cfg).unwrap();
        let par = simulate_with(&net, &sc, SimOptions { execution: Execution::Parallel, record_history: false }).unwrap();
        let seq = simulate_with(&net, &sc, SimOptions { execution: Execution::Sequential, record_history: false }).unwrap();
        assert_eq!(par.links, seq.links);
    }

    #[test]
    fn rmse_of_identical_runs_is_zero() {
        let r = simulate(&five_link_network(), &Scenario { initial: vec![], demands: vec![], supplies: vec![], dt: 1.0, horizon: 50.0, model: ModelKind::Ctm, seed: 0 }).unwrap();
        assert_eq!(rmse_compare(&r, &r).unwrap().mean, 0.0);
        let short = simulate(&five_link_network(), &Scenario { initial: vec![], demands: vec![], supplies: vec![], dt: 1.0, horizon: 20.0, model: ModelKind::Ctm, seed: 0 }).unwrap();
        assert!(matches!(rmse_compare(&r, &short), Err(SimError::Shape(_))));
    }

    #[test]
    fn cfl_violations_are_reported() {
        let mut net = single_link(0.1);
        net.links[0].length = 20.0;
        let mut sc = scenario(ModelKind::Ctm, 0.0, 10.0);
        sc.initial[0].breaks = vec![0.0, 20.0];
        assert!(matches!(simulate(&net, &sc), Err(SimError::Cfl { .. })));
        sc.model = ModelKind::Ltm;
        assert!(matches!(simulate(&net, &sc), Err(SimError::Cfl { .. })));
    }
}
