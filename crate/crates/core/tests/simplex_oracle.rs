mod oracles;

use kfair::milp::simplex::{solve_lp, LpStatus};
use kfair::rng::SeedStream;
use proptest::prelude::*;
use rand::Rng;

fn check(seed: u64, n: usize, m: usize) -> Result<(), String> {
    let mut rng = SeedStream::new(seed).rng(1);
    let lp = oracles::random_lp(&mut rng, n, m);
    let oracle = oracles::vertex_enumeration(&lp);
    let sol = solve_lp(&lp).map_err(|e| format!("{e:?}"))?;
    if !oracles::status_matches(sol.status, oracle) {
        return Err(format!("status {:?} vs oracle {oracle:?}", sol.status));
    }
    if let (LpStatus::Optimal, Some(best)) = (sol.status, oracle) {
        if (sol.objective - best).abs() > 1e-8 * best.abs().max(1.0) {
            return Err(format!("objective {} vs oracle {best}", sol.objective));
        }
    }
    Ok(())
}

#[test]
fn simplex_matches_vertex_enumeration() {
    let mut rng = SeedStream::new(99).rng(1);
    let mut optimal = 0;
    for seed in 0..400 {
        let (n, m) = (rng.random_range(2..7), rng.random_range(1..7));
        check(seed, n, m).unwrap_or_else(|e| panic!("seed {seed} ({n}x{m}): {e}"));
        let lp = oracles::random_lp(&mut SeedStream::new(seed).rng(1), n, m);
        optimal += usize::from(oracles::vertex_enumeration(&lp).is_some());
    }
    assert!(optimal > 100, "too few feasible instances: {optimal}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn simplex_agrees_on_random_programs(seed in any::<u64>(), n in 1usize..6, m in 0usize..6) {
        prop_assert_eq!(check(seed, n, m), Ok(()));
    }
}

#[test]
fn enumeration_oracles_agree() {
    let mut rng = SeedStream::new(12).rng(1);
    for case in 0..200 {
        let (n, m) = (rng.random_range(1..6), rng.random_range(0..5));
        let lp = oracles::random_lp(&mut rng, n, m);
        let (a, b) = (oracles::vertex_enumeration(&lp), oracles::basic_solution_enumeration(&lp));
        match (a, b) {
            (None, None) => {}
            (Some(x), Some(y)) => assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "case {case}: {x} vs {y}"),
            _ => panic!("case {case}: {a:?} vs {b:?}"),
        }
    }
}
