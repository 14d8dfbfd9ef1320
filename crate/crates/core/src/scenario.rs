//! Initial conditions, edge profiles and run parameters.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fundamental_diagram::ConcaveFd;
use crate::network::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Flh,
    Lh,
    Ctm,
    Ltm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Flh, ModelKind::Lh, ModelKind::Ctm, ModelKind::Ltm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Flh => "flh",
            Self::Lh => "lh",
            Self::Ctm => "ctm",
            Self::Ltm => "ltm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown model {s:?}; expected one of flh, lh, ctm, ltm"))
    }
}

/// Piecewise-constant per-lane density on one link. `breaks` are measured
/// from the link's upstream end and must span `[0, length]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialProfile {
    pub link: String,
    pub breaks: Vec<f64>,
    pub densities: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowStep {
    pub t: f64,
    pub flow: f64,
}

/// Per-lane edge flow, piecewise constant from each step's `t` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeProfile {
    pub link: String,
    pub steps: Vec<FlowStep>,
}

impl EdgeProfile {
    pub fn constant(link: &str, flow: f64) -> Self {
        Self { link: link.into(), steps: vec![FlowStep { t: 0.0, flow }] }
    }

    pub fn at(&self, t: f64) -> f64 {
        let i = self.steps.partition_point(|s| s.t <= t + 1e-9);
        self.steps[i.saturating_sub(1)].flow
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Links without an entry start empty.
    #[serde(default)]
    pub initial: Vec<InitialProfile>,
    /// Source profiles; sources without one keep the network default.
    #[serde(default)]
    pub demands: Vec<EdgeProfile>,
    /// Sink profiles; sinks without one keep the network default.
    #[serde(default)]
    pub supplies: Vec<EdgeProfile>,
    pub dt: f64,
    pub horizon: f64,
    pub model: ModelKind,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioError {
    BadTiming(String),
    UnknownLink { what: &'static str, link: String },
    NotAnEdge { what: &'static str, link: String },
    Duplicate { what: &'static str, link: String },
    BadProfile { link: String, reason: String },
    BadRange(String),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadTiming(s) => f.write_str(s),
            Self::UnknownLink { what, link } => write!(f, "{what} refers to unknown link {link:?}"),
            Self::NotAnEdge { what, link } => write!(f, "{what} given for link {link:?}, which has no matching network edge"),
            Self::Duplicate { what, link } => write!(f, "more than one {what} for link {link:?}"),
            Self::BadProfile { link, reason } => write!(f, "link {link:?}: {reason}"),
            Self::BadRange(s) => f.write_str(s),
        }
    }
}

impl std::error::Error for ScenarioError {}

impl Scenario {
    /// Number of steps, `round(horizon / dt)`.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Checks the scenario against a (valid) network.
    pub fn validate(&self, net: &Network) -> Result<(), Vec<ScenarioError>> {
        let mut errors = Vec::new();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            errors.push(ScenarioError::BadTiming(format!("dt = {} must be positive", self.dt)));
        } else if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            errors.push(ScenarioError::BadTiming(format!("horizon = {} must be non-negative", self.horizon)));
        } else {
            let n = self.horizon / self.dt;
            if (n - n.round()).abs() > 1e-9 * (1.0 + n) {
                errors.push(ScenarioError::BadTiming(format!("horizon {} is not a multiple of dt {}", self.horizon, self.dt)));
            }
        }
        let index = net.link_index();
        let mut seen = std::collections::HashSet::new();
        for p in &self.initial {
            let Some(&i) = index.get(p.link.as_str()) else {
                errors.push(ScenarioError::UnknownLink { what: "initial profile", link: p.link.clone() });
                continue;
            };
            if !seen.insert(p.link.as_str()) {
                errors.push(ScenarioError::Duplicate { what: "initial profile", link: p.link.clone() });
            }
            let link = &net.links[i];
            let bad = |reason: String| ScenarioError::BadProfile { link: p.link.clone(), reason };
            if p.breaks.len() != p.densities.len() + 1 || p.densities.is_empty() {
                errors.push(bad(format!("{} breaks for {} densities", p.breaks.len(), p.densities.len())));
                continue;
            }
            let span_ok = (p.breaks[0]).abs() <= 1e-9 && (p.breaks[p.breaks.len() - 1] - link.length).abs() <= 1e-9 * (1.0 + link.length);
            if !span_ok || p.breaks.windows(2).any(|w| !(w[1] > w[0])) {
                errors.push(bad(format!("breaks must increase from 0 to {}", link.length)));
            }
            if let Ok(fd) = link.diagram.build() {
                if let Some(&k) = p.densities.iter().find(|&&k| !(0.0..=fd.jam_density()).contains(&k)) {
                    errors.push(bad(format!("density {k} outside [0, {}]", fd.jam_density())));
                }
            }
        }
        for (profiles, edges, what) in [(&self.demands, &net.sources, "demand"), (&self.supplies, &net.sinks, "supply")] {
            let mut seen = std::collections::HashSet::new();
            for p in profiles {
                if !index.contains_key(p.link.as_str()) {
                    errors.push(ScenarioError::UnknownLink { what, link: p.link.clone() });
                    continue;
                }
                if !edges.iter().any(|e| e.link == p.link) {
                    errors.push(ScenarioError::NotAnEdge { what, link: p.link.clone() });
                }
                if !seen.insert(p.link.as_str()) {
                    errors.push(ScenarioError::Duplicate { what, link: p.link.clone() });
                }
                let starts_at_zero = p.steps.first().is_some_and(|s| s.t.abs() <= 1e-9);
                if !starts_at_zero || p.steps.windows(2).any(|w| !(w[1].t > w[0].t)) {
                    errors.push(ScenarioError::BadProfile { link: p.link.clone(), reason: format!("{what} steps must start at t = 0 and increase") });
                }
                if let Some(s) = p.steps.iter().find(|s| !(s.flow.is_finite() && s.flow >= 0.0)) {
                    errors.push(ScenarioError::BadProfile { link: p.link.clone(), reason: format!("{what} flow {} must be non-negative", s.flow) });
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

/// Ranges for [`random_scenario`]; densities and flows are per lane.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomConfig {
    pub density: (f64, f64),
    pub flow: (f64, f64),
    /// Equal-width initial blocks per link.
    pub blocks: usize,
    /// Edge flows are redrawn every `period` seconds.
    pub period: f64,
    pub dt: f64,
    pub horizon: f64,
    pub model: ModelKind,
}

impl Default for RandomConfig {
    fn default() -> Self {
        Self { density: (0.0, 0.03), flow: (0.0, 0.4), blocks: 4, period: 10.0, dt: 1.0, horizon: 300.0, model: ModelKind::Flh }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Uniformly drawn initial densities and edge flows, reproducible per seed.
pub fn random_scenario(net: &Network, seed: u64, cfg: &RandomConfig) -> Result<Scenario, ScenarioError> {
    let (k_lo, k_hi) = cfg.density;
    let (q_lo, q_hi) = cfg.flow;
    if !(k_lo >= 0.0 && k_hi >= k_lo) || !(q_lo >= 0.0 && q_hi >= q_lo) {
        return Err(ScenarioError::BadRange(format!("ranges must be ordered and non-negative: density {:?}, flow {:?}", cfg.density, cfg.flow)));
    }
    for l in &net.links {
        let fd = l.diagram.build().map_err(|e| ScenarioError::BadRange(format!("link {}: {e}", l.id)))?;
        if k_hi > fd.jam_density() {
            return Err(ScenarioError::BadRange(format!("density {k_hi} exceeds jam density {} on link {}", fd.jam_density(), l.id)));
        }
        if q_hi > fd.capacity() {
            return Err(ScenarioError::BadRange(format!("flow {q_hi} exceeds capacity {} on link {}", fd.capacity(), l.id)));
        }
    }
    if cfg.blocks == 0 || !(cfg.period > 0.0) {
        return Err(ScenarioError::BadRange("need at least one block and a positive period".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = if k_hi == 0.0 {
        Vec::new()
    } else {
        net.links
            .iter()
            .map(|l| {
                let dx = l.length / cfg.blocks as f64;
                let mut breaks: Vec<f64> = (0..=cfg.blocks).map(|i| i as f64 * dx).collect();
                breaks[cfg.blocks] = l.length;
                let densities = (0..cfg.blocks).map(|_| draw(&mut rng, cfg.density)).collect();
                InitialProfile { link: l.id.clone(), breaks, densities }
            })
            .collect()
    };
    let pieces = (cfg.horizon / cfg.period).ceil().max(1.0) as usize;
    let mut profile = |link: &str| EdgeProfile {
        link: link.into(),
        steps: (0..pieces).map(|i| FlowStep { t: i as f64 * cfg.period, flow: draw(&mut rng, cfg.flow) }).collect(),
    };
    let demands = net.sources.iter().map(|e| profile(&e.link)).collect();
    let supplies = net.sinks.iter().map(|e| profile(&e.link)).collect();
    Ok(Scenario { initial, demands, supplies, dt: cfg.dt, horizon: cfg.horizon, model: cfg.model, seed })
}
