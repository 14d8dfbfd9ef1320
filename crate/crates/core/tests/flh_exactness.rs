mod common;

use common::{drive, random_condition};
use flh_core::baseline::LhLinkState;
use flh_core::components::solve_point_lh;
use flh_core::flh::{FlhLinkState, FlhMode};
use flh_core::fundamental_diagram::{ConcaveFd, FundamentalDiagram, GreenshieldsFd, TriangularFd};
use flh_core::value_conditions::Side;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run(seed: u64, fd: FundamentalDiagram, dt: f64, cfl: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cond = random_condition(&mut rng, &fd, 10, 1000.0);
    let flh = if cfl {
        FlhLinkState::with_cfl(cond.clone(), fd.clone(), dt).unwrap()
    } else {
        FlhLinkState::new(cond.clone(), fd.clone(), dt).unwrap()
    };
    let lh = LhLinkState::new(cond, fd, dt).unwrap();
    drive(&mut rng, flh, lh, 200)
}

#[test]
fn general_mode_matches_classical_on_triangular_links() {
    for seed in 0..60 {
        let fd: FundamentalDiagram = TriangularFd::from_speeds(30.0, 5.0, 0.13).unwrap().into();
        let worst = run(seed, fd, 1.0, false);
        assert!(worst <= 1e-9, "seed {seed}: {worst}");
    }
}

#[test]
fn cfl_mode_matches_classical_on_triangular_links() {
    for seed in 0..60 {
        let fd: FundamentalDiagram = TriangularFd::from_speeds(20.0, 6.0, 0.12).unwrap().into();
        let worst = run(100 + seed, fd, 5.0, true);
        assert!(worst <= 1e-9, "seed {seed}: {worst}");
    }
}

#[test]
fn general_mode_matches_classical_on_greenshields_links() {
    for seed in 0..20 {
        let fd: FundamentalDiagram = GreenshieldsFd::new(15.0, 0.15).unwrap().into();
        let worst = run(200 + seed, fd, 1.0, false);
        assert!(worst <= 1e-9, "seed {seed}: {worst}");
    }
}

#[test]
fn boundary_values_match_the_point_solver() {
    let fd: FundamentalDiagram = TriangularFd::from_speeds(25.0, 5.0, 0.13).unwrap().into();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cond = random_condition(&mut rng, &fd, 8, 800.0);
    let mut flh = FlhLinkState::with_cfl(cond, fd.clone(), 2.0).unwrap();
    assert!(matches!(flh.mode(), FlhMode::CflTriangular { .. }));
    for _ in 0..150 {
        let (d, s) = (flh.demand().unwrap(), flh.supply().unwrap());
        let tau = flh.time() + flh.dt();
        // The point solver sees the same blocks as the stepper.
        let cond = flh.condition();
        let n_down = solve_point_lh(cond, &fd, cond.x_n, tau).unwrap();
        let n_up = solve_point_lh(cond, &fd, cond.x_0, tau).unwrap();
        let last_down = flh.cursor(Side::Downstream).last_value();
        let last_up = flh.cursor(Side::Upstream).last_value();
        let expect_d = ((n_down - last_down) / 2.0).clamp(0.0, fd.capacity());
        let expect_s = ((n_up - last_up) / 2.0).clamp(0.0, fd.capacity());
        assert!((d - expect_d).abs() <= 1e-9, "{d} vs {expect_d}");
        assert!((s - expect_s).abs() <= 1e-9, "{s} vs {expect_s}");
        let (inflow, outflow) = (s * rng.gen_range(0.0..=1.0), d * rng.gen_range(0.0..=1.0));
        flh.advance(inflow, outflow).unwrap();
    }
}

#[test]
fn interior_probe_matches_the_point_solver() {
    use flh_core::flh::{solve_point_flh, InteriorProbe};
    for seed in 0..20 {
        let fd: FundamentalDiagram = TriangularFd::from_speeds(20.0, 5.0, 0.13).unwrap().into();
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let cond = random_condition(&mut rng, &fd, 10, 1000.0);
        let mut flh = FlhLinkState::auto(cond, fd.clone(), 1.0).unwrap();
        for _ in 0..120 {
            let (d, s) = (flh.demand().unwrap(), flh.supply().unwrap());
            flh.advance(s * rng.gen_range(0.0..=1.0), d * rng.gen_range(0.0..=1.0)).unwrap();
        }
        let cond = flh.condition();
        let x = rng.gen_range(0.0..1000.0);
        let mut probe = InteriorProbe::new(cond, x);
        for step in 1..=120 {
            let t = step as f64;
            let fast = solve_point_flh(cond, &fd, t, &mut probe).unwrap();
            let exact = solve_point_lh(cond, &fd, x, t).unwrap();
            assert!(common::rel_err(fast, exact) <= 1e-9, "seed {seed} x {x} t {t}: {fast} vs {exact}");
        }
    }
}
