mod common;

use approx::assert_relative_eq;
use dtse::arz::{BoundaryInput, CellState, ModelParams, TrafficState};
use dtse::units::{kmh_to_mps, vehkm_to_vehm};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{fd_jacobian, random_smooth_state, rel_err};

fn small_params(n_cells: usize) -> ModelParams {
    ModelParams {
        n_cells,
        ..ModelParams::default()
    }
}

#[test]
fn flux_vector_matches_high_precision_values() {
    // Reference values from a 40-digit mpmath evaluation of the same road.
    let p = small_params(3);
    let cells: Vec<CellState> = [(60.0, 80.0), (140.0, 30.0), (220.0, 5.0)]
        .iter()
        .map(|&(rho, v)| CellState::from_speed(vehkm_to_vehm(rho), kmh_to_mps(v), &p))
        .collect();
    let x = TrafficState::from_cells(&cells);
    let u = BoundaryInput {
        demand_up: 0.4,
        chi_up: kmh_to_mps(110.0),
        rho_down: vehkm_to_vehm(90.0),
    };
    let f = p.flux_vector(&x, &u);
    let expect = [
        -0.933_333_333_333_333_3,
        -23.628_981_650_217_333,
        1.333_333_333_333_333_3,
        35.851_203_872_439_555,
        -1.675_981_275_691_565_7,
        -42.007_599_944_410_786,
    ];
    for (got, want) in f.iter().zip(expect) {
        assert_relative_eq!(*got, want, max_relative = 1e-12);
    }
}

#[test]
fn closed_road_keeps_its_vehicles() {
    let p = small_params(10);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut x, _) = common::random_state(&p, &mut rng);
    let total = |x: &TrafficState| x.densities().iter().sum::<f64>() * p.dh;
    let m0 = total(&x);
    for _ in 0..200 {
        x = p.step_closed(&x);
    }
    assert!((total(&x) - m0).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jacobian_matches_finite_differences(seed in any::<u64>(), n in 2usize..8) {
        let p = small_params(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, u) = random_smooth_state(&p, 0.01, &mut rng);
        let err = rel_err(&p.jacobian_flux(&x, &u), &fd_jacobian(&p, &x, &u));
        prop_assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn pressure_and_equilibrium_speed_add_to_free_speed(rho in 0.0f64..=0.25) {
        let p = ModelParams::default();
        let sum = p.pressure(rho).unwrap() + p.equilibrium_velocity(rho).unwrap();
        prop_assert!((sum - p.v_f).abs() < 1e-12);
    }

    #[test]
    fn demand_and_supply_are_bounded_by_capacity(rho in 0.0f64..=0.25, chi in 0.0f64..55.0) {
        let p = ModelParams::default();
        let sigma = p.critical_density(chi).unwrap();
        let capacity = sigma * (chi - p.pressure(sigma).unwrap());
        let cell = CellState::new(rho, rho * chi);
        let d = p.demand(cell);
        let s = p.supply(cell, chi);
        prop_assert!(d >= 0.0 && s >= 0.0);
        prop_assert!(d <= capacity.max(0.0) * (1.0 + 1e-12) + 1e-15);
        prop_assert!(s <= capacity.max(0.0) * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn closed_stepping_conserves_vehicles(seed in any::<u64>(), n in 2usize..12) {
        let p = small_params(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut x, _) = common::random_state(&p, &mut rng);
        let m0: f64 = x.densities().iter().sum::<f64>() * p.dh;
        for _ in 0..100 {
            x = p.step_closed(&x);
        }
        let m1: f64 = x.densities().iter().sum::<f64>() * p.dh;
        prop_assert!((m1 - m0).abs() < 1e-10, "{m0} -> {m1}");
    }

    #[test]
    fn linearization_is_exact_at_the_expansion_point(seed in any::<u64>()) {
        let p = small_params(6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, u) = common::random_state(&p, &mut rng);
        let lin = p.linearize(&x, &u);
        let via_lin = &lin.lambda * x.as_vector() + &lin.eta;
        let direct = p.step(&x, &u, None).into_vector();
        prop_assert!(common::rel_err_vec(&via_lin, &direct) < 1e-12);
    }
}
