#![allow(dead_code)]

use flh_core::baseline::LhLinkState;
use flh_core::flh::FlhLinkState;
use flh_core::fundamental_diagram::{ConcaveFd, FundamentalDiagram};
use flh_core::value_conditions::{BoundaryBlock, InitialBlock, LinkValueCondition, Side};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

pub fn random_condition(rng: &mut ChaCha8Rng, fd: &FundamentalDiagram, blocks: usize, length: f64) -> LinkValueCondition {
    let dx = length / blocks as f64;
    let breaks: Vec<f64> = (0..=blocks).map(|i| i as f64 * dx).collect();
    let ks: Vec<f64> = (0..blocks).map(|_| rng.gen_range(0.0..=fd.jam_density())).collect();
    LinkValueCondition::from_density_profile(fd, &breaks, &ks, rng.gen_range(-20.0..20.0)).unwrap()
}

/// Drives an FLH state and a classical LH state with the same random
/// admissible boundary flows and returns the largest relative gap between
/// their prospective boundary values and rates.
pub fn drive(rng: &mut ChaCha8Rng, mut flh: FlhLinkState, mut lh: LhLinkState, steps: usize) -> f64 {
    let dt = flh.dt();
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let (d, s) = (flh.demand().unwrap(), flh.supply().unwrap());
        let (d_ref, s_ref) = (lh.demand(), lh.supply());
        let n_up = flh.cursor(Side::Upstream).last_value() + s * dt;
        let n_down = flh.cursor(Side::Downstream).last_value() + d * dt;
        worst = worst.max(rel_err(n_up, lh.condition().boundary_end(Side::Upstream).1 + s_ref * dt));
        worst = worst.max(rel_err(n_down, lh.condition().boundary_end(Side::Downstream).1 + d_ref * dt));
        worst = worst.max((d - d_ref).abs()).max((s - s_ref).abs());
        let inflow = s * rng.gen_range(0.0..=1.0);
        let outflow = d * rng.gen_range(0.0..=1.0);
        flh.advance(inflow, outflow).unwrap();
        lh.advance(inflow, outflow).unwrap();
    }
    worst
}

/// Brute-force Lax-Hopf minimisation on dense grids.
pub struct Oracle {
    ks: Vec<f64>,
    qs: Vec<f64>,
    /// Bound on the grid error of `r` per unit time.
    r_err: f64,
    v: f64,
    w: f64,
    k_jam: f64,
    q_max: f64,
}

/// Grid size for densities and for both passes of the position/time search.
pub const GRID: usize = 2000;
const FINE: usize = 400;

impl Oracle {
    /// `kinks` are added to the density grid; `curvature` bounds `|Q''|`
    /// between them.
    pub fn new(fd: &FundamentalDiagram, kinks: &[f64], curvature: f64) -> Self {
        let k_jam = fd.jam_density();
        let dk = k_jam / (GRID - 1) as f64;
        let mut ks: Vec<f64> = (0..GRID).map(|i| i as f64 * dk).chain(kinks.iter().copied()).collect();
        ks.sort_by(f64::total_cmp);
        let qs = ks.iter().map(|&k| fd.flux_at(k)).collect();
        Self {
            ks,
            qs,
            r_err: curvature * dk * dk / 8.0,
            v: fd.free_speed(),
            w: fd.backward_speed(),
            k_jam,
            q_max: fd.capacity(),
        }
    }

    /// `sup_k Q(k) − u·k` over the grid.
    pub fn r(&self, u: f64) -> f64 {
        self.ks.iter().zip(&self.qs).map(|(k, q)| q - u * k).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Minimum of a convex function on `[a, b]`: a coarse pass, then a fine
    /// pass around the coarse minimiser. Returns the value and the fine
    /// spacing.
    fn convex_min(a: f64, b: f64, g: impl Fn(f64) -> f64) -> (f64, f64) {
        if b <= a {
            return (g(a), 0.0);
        }
        let h = (b - a) / (GRID - 1) as f64;
        let (mut best, mut arg) = (f64::INFINITY, a);
        for i in 0..GRID {
            let y = if i + 1 == GRID { b } else { a + i as f64 * h };
            let v = g(y);
            if v < best {
                best = v;
                arg = y;
            }
        }
        let (lo, hi) = ((arg - h).max(a), (arg + h).min(b));
        let hf = (hi - lo) / (FINE - 1) as f64;
        for i in 0..FINE {
            best = best.min(g(lo + i as f64 * hf));
        }
        (best, hf)
    }

    /// `(value, resolution bound)`; the value is infinite when no admissible
    /// point exists.
    pub fn initial(&self, b: &InitialBlock, x: f64, t: f64) -> (f64, f64) {
        let lo = b.x_lo.max(x - self.v * t);
        let hi = b.x_hi.min(x - self.w * t);
        if lo > hi {
            return (f64::INFINITY, 0.0);
        }
        let g = |y: f64| b.n_lo - b.density * (y - b.x_lo) + t * self.r((x - y) / t);
        let (value, h) = Self::convex_min(lo, hi, g);
        let lipschitz = b.density + self.k_jam;
        (value, lipschitz * h / 2.0 + t * self.r_err)
    }

    fn boundary(&self, b: &BoundaryBlock, xi: f64, t: f64, limit: f64) -> (f64, f64) {
        // Latest departure time with an admissible characteristic speed.
        let s_max = b.t_hi.min(t - xi / limit);
        if s_max < b.t_lo {
            return (f64::INFINITY, 0.0);
        }
        let g = |s: f64| {
            let big_t = t - s;
            let wave = if big_t > 0.0 { big_t * self.r(xi / big_t) } else { 0.0 };
            b.n_lo + b.flow * (s - b.t_lo) + wave
        };
        let (value, h) = Self::convex_min(b.t_lo, s_max, g);
        let lipschitz = b.flow + self.q_max;
        (value, lipschitz * h / 2.0 + (t - b.t_lo) * self.r_err)
    }

    pub fn upstream(&self, b: &BoundaryBlock, x_0: f64, x: f64, t: f64) -> (f64, f64) {
        self.boundary(b, x - x_0, t, self.v)
    }

    pub fn downstream(&self, b: &BoundaryBlock, x_n: f64, x: f64, t: f64) -> (f64, f64) {
        self.boundary(b, x - x_n, t, self.w)
    }
}
