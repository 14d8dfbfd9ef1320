//! Accuracy comparison and timing runs over random scenarios.

use std::fmt::Write as _;

use crate::engine::{rmse_resampled, simulate_with, SimError, SimOptions};
use crate::io::fixed;
use crate::network::Network;
use crate::scenario::{random_scenario, ModelKind, RandomConfig, Scenario};

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub model: ModelKind,
    pub dt: f64,
    pub mean: f64,
    /// Sample standard deviation over seeds.
    pub std: f64,
    pub seeds: u64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Network-averaged outflow RMSE of each model against FLH run at the
/// finest requested step, over seeds `0..seeds`. Coarser runs are scored
/// against the reference outflows averaged over each of their steps, so
/// every `dt` must be a whole multiple of the smallest.
pub fn compare(
    net: &Network,
    models: &[ModelKind],
    dts: &[f64],
    seeds: u64,
    template: &RandomConfig,
    opts: SimOptions,
) -> Result<Vec<CompareRow>, SimError> {
    let fine = dts.iter().copied().fold(f64::INFINITY, f64::min);
    if !(fine.is_finite() && fine > 0.0) {
        return Err(SimError::Shape("need at least one positive time step".into()));
    }
    let mut errors: Vec<Vec<Vec<f64>>> = vec![vec![Vec::with_capacity(seeds as usize); models.len()]; dts.len()];
    for seed in 0..seeds {
        let base = RandomConfig { dt: fine, model: ModelKind::Flh, ..template.clone() };
        let sc = random_scenario(net, seed, &base).map_err(|e| SimError::Scenario(vec![e]))?;
        let reference = simulate_with(net, &sc, opts)?;
        for (d, &dt) in dts.iter().enumerate() {
            for (m, &model) in models.iter().enumerate() {
                let run = if model == ModelKind::Flh && dt == fine {
                    reference.clone()
                } else {
                    simulate_with(net, &Scenario { model, dt, ..sc.clone() }, opts)?
                };
                errors[d][m].push(rmse_resampled(&run, &reference)?.mean);
            }
        }
    }
    let mut rows = Vec::new();
    for (d, &dt) in dts.iter().enumerate() {
        for (m, &model) in models.iter().enumerate() {
            let (mean, std) = mean_std(&errors[d][m]);
            rows.push(CompareRow { model, dt, mean, std, seeds });
        }
    }
    Ok(rows)
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("model,dt_s,mean_rmse_veh_s,std_rmse_veh_s,seeds\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.model, fixed(r.dt), fixed(r.mean), fixed(r.std), r.seeds);
    }
    out
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut out = format!("{:<6} {:>8} {:>14} {:>14}\n", "model", "dt [s]", "mean RMSE", "std");
    for r in rows {
        let _ = writeln!(out, "{:<6} {:>8} {:>14.6e} {:>14.6e}", r.model.name(), r.dt, r.mean, r.std);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub model: ModelKind,
    pub horizon: f64,
    pub dt: f64,
    /// Median over repeats, seconds.
    pub link_seconds: f64,
    pub node_seconds: f64,
    pub repeats: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median link- and node-phase wall-clock per `(model, horizon)`.
pub fn bench(
    net: &Network,
    models: &[ModelKind],
    horizons: &[f64],
    repeat: usize,
    seed: u64,
    template: &RandomConfig,
    opts: SimOptions,
) -> Result<Vec<BenchRow>, SimError> {
    let repeat = repeat.max(1);
    let mut rows = Vec::new();
    for &horizon in horizons {
        let cfg = RandomConfig { horizon, ..template.clone() };
        let sc = random_scenario(net, seed, &cfg).map_err(|e| SimError::Scenario(vec![e]))?;
        for &model in models {
            let sc = Scenario { model, ..sc.clone() };
            let mut link = Vec::with_capacity(repeat);
            let mut node = Vec::with_capacity(repeat);
            for _ in 0..repeat {
                let r = simulate_with(net, &sc, opts)?;
                link.push(r.timing.link);
                node.push(r.timing.node);
            }
            rows.push(BenchRow { model, horizon, dt: sc.dt, link_seconds: median(link), node_seconds: median(node), repeats: repeat });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("model,horizon_s,dt_s,link_model_s,node_model_s,repeats\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.model,
            fixed(r.horizon),
            fixed(r.dt),
            fixed(r.link_seconds),
            fixed(r.node_seconds),
            r.repeats
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::five_link_network;

    #[test]
    fn flh_against_itself_is_exact() {
        let cfg = RandomConfig { horizon: 60.0, ..Default::default() };
        let rows = compare(&five_link_network(), &[ModelKind::Flh, ModelKind::Lh], &[1.0], 3, &cfg, SimOptions::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.mean <= 1e-9), "{rows:?}");
    }

    #[test]
    fn bench_rows_follow_the_request() {
        let cfg = RandomConfig { horizon: 20.0, ..Default::default() };
        let rows = bench(&five_link_network(), &[ModelKind::Ctm, ModelKind::Ltm], &[10.0, 20.0], 2, 0, &cfg, SimOptions::default()).unwrap();
        assert_eq!(rows.len(), 4);
        let csv = bench_csv(&rows);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("model,horizon_s"));
    }

    #[test]
    fn median_of_even_count() {
        assert_eq!(median(vec![3.0, 1.0, 2.0, 10.0]), 2.5);
    }
}
