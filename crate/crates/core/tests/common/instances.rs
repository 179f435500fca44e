//! Random small planning instances shared by the robust-model tests.

use bessplan::assembly::ModelConfig;
use bessplan::network::{BaseQuantities, Bus, BusKind, Complex3, Line, Matrix3C, Network};
use bessplan::robust::{BoxSet, RobustInstance};
use num_complex::Complex64;
use rand::Rng;

/// Diagonally dominant line admittance with random mutual coupling.
pub fn random_admittance(rng: &mut impl Rng) -> Matrix3C {
    let g = rng.random_range(2.0..6.0);
    let b = rng.random_range(6.0..18.0);
    Matrix3C::from_fn(|p, q| {
        if p == q {
            Complex64::new(g, -b)
        } else {
            Complex64::new(-g * rng.random_range(0.05..0.3), b * rng.random_range(0.05..0.3))
        }
    })
}

fn bus(id: usize, cost: f64) -> Bus {
    let slack = id == 0;
    Bus {
        id,
        kind: if slack { BusKind::Slack } else { BusKind::Load },
        s_min: Complex3::from_re_im([if slack { 0.0 } else { -5.0 }; 3], [-5.0; 3]),
        s_max: Complex3::from_re_im([5.0; 3], [5.0; 3]),
        v_min: 0.81,
        v_max: 1.21,
        pv_profile: Vec::new(),
        bess_cost: cost,
        bess_candidate: !slack,
    }
}

/// Three-bus feeder (chain or star) with storage candidates at both load
/// buses and one uncertain load step per phase.
pub fn random_instance(rng: &mut impl Rng, max_horizon: usize) -> RobustInstance {
    let horizon = rng.random_range(1..=max_horizon);
    let buses = vec![bus(0, 0.0), bus(1, rng.random_range(0.5..20.0)), bus(2, rng.random_range(0.5..20.0))];
    let second_from = if rng.random_bool(0.5) { 0 } else { 1 };
    let lines = [(0, 1), (second_from, 2)]
        .into_iter()
        .map(|(from, to)| {
            let y = random_admittance(rng);
            Line { from, to, y_fwd: y, y_rev: y, is_transformer: false, flow_cap: None }
        })
        .collect();
    let network = Network::new(BaseQuantities::default(), buses, lines).expect("valid feeder");

    let price_upper: Vec<[f64; 3]> =
        (0..horizon).map(|_| std::array::from_fn(|_| rng.random_range(20.0..120.0))).collect();
    let price_lower = price_upper.iter().map(|r| r.map(|v| v * 0.8)).collect();
    let load_upper: Vec<[f64; 3]> = (0..horizon).map(|_| std::array::from_fn(|_| rng.random_range(0.2..0.8))).collect();
    let mut load_lower = load_upper.clone();
    for p in 0..3 {
        let t = rng.random_range(0..horizon);
        load_lower[t][p] = load_upper[t][p] * rng.random_range(0.5..0.9);
    }
    let share: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
    let weights = vec![[0.0; 3], share, share.map(|v| 1.0 - v)];
    RobustInstance {
        network,
        config: ModelConfig { horizon, ..Default::default() },
        price_box: BoxSet::new(price_lower, price_upper).expect("ordered price box"),
        load_box: BoxSet::new(load_lower, load_upper).expect("ordered load box"),
        weights,
    }
}
