use flh_core::components::solve_point_lh;
use flh_core::flh::FlhLinkState;
use flh_core::fundamental_diagram::{ConcaveFd, FundamentalDiagram, GreenshieldsFd, TriangularFd};
use flh_core::value_conditions::{LinkValueCondition, Side};
use proptest::prelude::*;

fn diagram(triangular: bool) -> FundamentalDiagram {
    if triangular {
        TriangularFd::from_speeds(20.0, 5.0, 0.125).unwrap().into()
    } else {
        GreenshieldsFd::new(20.0, 0.125).unwrap().into()
    }
}

fn link(fd: &FundamentalDiagram, ks: &[f64]) -> LinkValueCondition {
    let n = ks.len();
    let breaks: Vec<f64> = (0..=n).map(|i| i as f64 * 1000.0 / n as f64).collect();
    let densities: Vec<f64> = ks.iter().map(|s| s * fd.jam_density()).collect();
    LinkValueCondition::from_density_profile(fd, &breaks, &densities, 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Pruned blocks never come back: at sampled steps the pruned minimum is
    // the full minimum over every block.
    #[test]
    fn pruning_is_permanent(
        triangular in any::<bool>(),
        ks in prop::collection::vec(0.0f64..=1.0, 10),
        fractions in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 150),
        checks in prop::collection::btree_set(0usize..150, 20),
    ) {
        let fd = diagram(triangular);
        let mut flh = FlhLinkState::new(link(&fd, &ks), fd.clone(), 1.0).unwrap();
        for (step, &(a, b)) in fractions.iter().enumerate() {
            let (d, s) = (flh.demand().unwrap(), flh.supply().unwrap());
            prop_assert!((0.0..=fd.capacity()).contains(&d) && (0.0..=fd.capacity()).contains(&s));
            if checks.contains(&step) {
                let tau = flh.time() + flh.dt();
                for side in [Side::Upstream, Side::Downstream] {
                    let full = solve_point_lh(flh.condition(), &fd, flh.condition().boundary_position(side), tau).unwrap();
                    let rate = if side == Side::Upstream { s } else { d };
                    let pruned = flh.cursor(side).last_value() + rate * flh.dt();
                    let unclamped = full.min(flh.cursor(side).last_value() + fd.capacity() * flh.dt());
                    prop_assert!((pruned - unclamped).abs() <= 1e-9 * (1.0 + full.abs()), "{side:?}: {pruned} vs {full}");
                }
            }
            flh.advance(s * a, d * b).unwrap();
        }
    }
}

#[test]
fn closed_link_with_free_exit_drains() {
    for triangular in [true, false] {
        let fd = diagram(triangular);
        let ks = [0.9, 0.2, 1.0, 0.5, 0.05];
        let mut flh = FlhLinkState::auto(link(&fd, &ks), fd.clone(), 1.0).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..2000 {
            let d = flh.demand().unwrap();
            flh.supply().unwrap();
            flh.advance(0.0, d).unwrap();
            last = d;
        }
        assert!(last <= 1e-9, "demand {last} after draining");
        let tau = flh.time();
        let stored = solve_point_lh(flh.condition(), &fd, 0.0, tau).unwrap()
            - solve_point_lh(flh.condition(), &fd, 1000.0, tau).unwrap();
        assert!(stored.abs() <= 1e-6, "{stored} vehicles left");
    }
}
