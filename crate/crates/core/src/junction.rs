//! First-order node model: link demands and supplies in, movement flows out.
//!
//! Supply is shared by oriented priorities `π_i·β_io` (the generic node
//! model of Tampère et al.), with FIFO diverges: every incoming link sends
//! `q_i·β_io` to each outgoing link, so one blocked movement holds the
//! whole approach. Red movements block their approach before allocation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const SPLIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JunctionError {
    #[error("node {node}: {reason}")]
    Malformed { node: String, reason: String },
    #[error("node {node}: expected {expected} {what}, got {got}")]
    Shape { node: String, what: &'static str, expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Movement {
    pub from: String,
    pub to: String,
}

/// Movements that share one periodic green/red schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalGroup {
    pub movements: Vec<Movement>,
    pub period: f64,
    /// Half-open green windows `[start, end)` within one period.
    pub green: Vec<[f64; 2]>,
}

impl SignalGroup {
    pub fn is_green(&self, t: f64) -> bool {
        let phase = t.rem_euclid(self.period);
        self.green.iter().any(|&[a, b]| phase >= a && phase < b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub incoming: Vec<String>,
    pub outgoing: Vec<String>,
    /// `splits[i][o]`: share of incoming `i` bound for outgoing `o`.
    pub splits: Vec<Vec<f64>>,
    /// Merge priority of each incoming link.
    pub priorities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub signals: Vec<SignalGroup>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    Demand,
    Supply,
    Signal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeResolution {
    /// `flows[i][o]` in veh/s.
    pub flows: Vec<Vec<f64>>,
    pub binding: Vec<Vec<Binding>>,
}

impl NodeResolution {
    pub fn incoming_totals(&self) -> Vec<f64> {
        self.flows.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn outgoing_totals(&self) -> Vec<f64> {
        let n_out = self.flows.first().map_or(0, Vec::len);
        (0..n_out).map(|o| self.flows.iter().map(|row| row[o]).sum()).collect()
    }
}

impl NodeSpec {
    fn malformed(&self, reason: impl Into<String>) -> JunctionError {
        JunctionError::Malformed { node: self.id.clone(), reason: reason.into() }
    }

    pub fn validate(&self) -> Result<(), JunctionError> {
        let (n_in, n_out) = (self.incoming.len(), self.outgoing.len());
        if n_in == 0 || n_out == 0 {
            return Err(self.malformed("needs at least one incoming and one outgoing link"));
        }
        if self.splits.len() != n_in {
            return Err(JunctionError::Shape { node: self.id.clone(), what: "split rows", expected: n_in, got: self.splits.len() });
        }
        if self.priorities.len() != n_in {
            return Err(JunctionError::Shape { node: self.id.clone(), what: "priorities", expected: n_in, got: self.priorities.len() });
        }
        for (i, row) in self.splits.iter().enumerate() {
            if row.len() != n_out {
                return Err(JunctionError::Shape { node: self.id.clone(), what: "split columns", expected: n_out, got: row.len() });
            }
            if row.iter().any(|b| !(b.is_finite() && (0.0..=1.0).contains(b))) {
                return Err(self.malformed(format!("split row {i} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SPLIT_TOL * n_out as f64 {
                return Err(self.malformed(format!("split row {i} sums to {sum}, not 1")));
            }
        }
        if self.priorities.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(self.malformed("priorities must be positive"));
        }
        for g in &self.signals {
            if !(g.period.is_finite() && g.period > 0.0) {
                return Err(self.malformed(format!("signal period {} must be positive", g.period)));
            }
            for &[a, b] in &g.green {
                if !(0.0 <= a && a < b && b <= g.period) {
                    return Err(self.malformed(format!("green window [{a}, {b}) outside [0, {}]", g.period)));
                }
            }
            for m in &g.movements {
                if self.movement_index(m).is_none() {
                    return Err(self.malformed(format!("signal movement {} -> {} is not a movement of this node", m.from, m.to)));
                }
            }
        }
        Ok(())
    }

    fn movement_index(&self, m: &Movement) -> Option<(usize, usize)> {
        let i = self.incoming.iter().position(|l| *l == m.from)?;
        let o = self.outgoing.iter().position(|l| *l == m.to)?;
        Some((i, o))
    }
}

/// Green state of every movement at `t`. A movement listed by several
/// groups is green only when all of them are; unlisted movements are green.
pub fn signal_phase(spec: &NodeSpec, t: f64) -> Vec<Vec<bool>> {
    let mut green = vec![vec![true; spec.outgoing.len()]; spec.incoming.len()];
    for g in &spec.signals {
        if g.is_green(t) {
            continue;
        }
        for m in &g.movements {
            if let Some((i, o)) = spec.movement_index(m) {
                green[i][o] = false;
            }
        }
    }
    green
}

/// Movement flows for one time step.
pub fn resolve_node(spec: &NodeSpec, demands: &[f64], supplies: &[f64], t: f64) -> Result<NodeResolution, JunctionError> {
    let (n_in, n_out) = (spec.incoming.len(), spec.outgoing.len());
    if demands.len() != n_in {
        return Err(JunctionError::Shape { node: spec.id.clone(), what: "demands", expected: n_in, got: demands.len() });
    }
    if supplies.len() != n_out {
        return Err(JunctionError::Shape { node: spec.id.clone(), what: "supplies", expected: n_out, got: supplies.len() });
    }
    let green = signal_phase(spec, t);
    let blocked: Vec<bool> = (0..n_in)
        .map(|i| (0..n_out).any(|o| spec.splits[i][o] > 0.0 && !green[i][o]))
        .collect();
    let demand: Vec<f64> = (0..n_in).map(|i| if blocked[i] { 0.0 } else { demands[i].max(0.0) }).collect();
    let totals = allocate(&spec.splits, &spec.priorities, &demand, supplies);

    let mut flows = vec![vec![0.0; n_out]; n_in];
    let mut binding = vec![vec![Binding::Demand; n_out]; n_in];
    for i in 0..n_in {
        for o in 0..n_out {
            flows[i][o] = totals[i] * spec.splits[i][o];
            binding[i][o] = if !green[i][o] || blocked[i] {
                Binding::Signal
            } else if totals[i] >= demand[i] {
                Binding::Demand
            } else {
                Binding::Supply
            };
        }
    }
    Ok(NodeResolution { flows, binding })
}

/// Total flow leaving each incoming link.
fn allocate(splits: &[Vec<f64>], priorities: &[f64], demand: &[f64], supplies: &[f64]) -> Vec<f64> {
    let (n_in, n_out) = (demand.len(), supplies.len());
    let mut remaining: Vec<f64> = supplies.iter().map(|s| s.max(0.0)).collect();
    let mut totals = vec![0.0; n_in];
    let mut open: Vec<bool> = demand.iter().map(|&d| d > 0.0).collect();
    while open.iter().any(|&u| u) {
        // Most restrictive outgoing link per unit of oriented priority.
        let mut best: Option<(usize, f64)> = None;
        for o in 0..n_out {
            let weight: f64 = (0..n_in).filter(|&i| open[i]).map(|i| priorities[i] * splits[i][o]).sum();
            if weight > 0.0 {
                let a = remaining[o] / weight;
                if best.is_none_or(|(_, b)| a < b) {
                    best = Some((o, a));
                }
            }
        }
        let Some((o_star, a)) = best else { break };
        let demand_bound: Vec<usize> = (0..n_in).filter(|&i| open[i] && demand[i] <= a * priorities[i]).collect();
        let granted: Vec<(usize, f64)> = if demand_bound.is_empty() {
            (0..n_in)
                .filter(|&i| open[i] && splits[i][o_star] > 0.0)
                .map(|i| (i, a * priorities[i]))
                .collect()
        } else {
            demand_bound.into_iter().map(|i| (i, demand[i])).collect()
        };
        for (i, q) in granted {
            totals[i] = q;
            open[i] = false;
            for o in 0..n_out {
                remaining[o] = (remaining[o] - q * splits[i][o]).max(0.0);
            }
        }
    }
    totals
}
