mod common;

use bessplan::solver::{solve, SolveStatus};
use common::lp_oracle::{random_lp, vertex_oracle, OracleOutcome};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn random_lps_match_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counts = [0usize; 3];
    for k in 0..300 {
        let lp = random_lp(&mut rng, 6, 8);
        let oracle = vertex_oracle(&lp);
        let r = solve(&lp, 1e-9, 200).unwrap();
        match oracle {
            OracleOutcome::Optimal(v) => {
                counts[0] += 1;
                assert_eq!(r.status, SolveStatus::Optimal, "instance {k}: {lp:?}");
                assert!((r.objective - v).abs() <= 1e-6 * (1.0 + v.abs()), "instance {k}: {} vs {v}", r.objective);
                assert!(r.kkt.within(1e-7), "instance {k}: {:?}", r.kkt);
            }
            OracleOutcome::Infeasible => {
                counts[1] += 1;
                assert_eq!(r.status, SolveStatus::PrimalInfeasible, "instance {k}: {lp:?}");
            }
            OracleOutcome::Unbounded => {
                counts[2] += 1;
                assert_eq!(r.status, SolveStatus::DualInfeasible, "instance {k}: {lp:?}");
            }
        }
    }
    assert!(counts.iter().all(|&c| c > 5), "generator should cover every outcome: {counts:?}");
}
