mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sas_core::seqspace::{self, time_shift};
use sas_core::{BoundedSequence, EspMargin, Extension, SasSystem, System};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sas(seed: u64, n: usize, bp: f64) -> SasSystem {
    let mut r = rng(seed);
    common::random_sas(&mut r, n, 2, 2, bp, 0.8, 0.05)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn recursion_converges_to_series(seed in any::<u64>(), n in 1usize..5, bp in 0.05f64..0.9) {
        let s = sas(seed, n, bp);
        let z = common::scalar_input(&mut rng(seed ^ 9), 300);
        let washout = 120;
        let rec = s.sas_run_recursion(&z, None, washout).unwrap();
        let ser = s.sas_run_series(&z, 1e-10).unwrap();
        let bound = rec.truncation_tail_bound + ser.truncation_tail_bound + 1e-12;
        for pos in washout..z.len() {
            prop_assert!((&rec.states[pos] - &ser.states[pos]).norm() <= bound);
        }
    }

    #[test]
    fn nested_and_product_series_agree(seed in any::<u64>(), n in 1usize..4, lag in 0usize..20) {
        let s = sas(seed, n, 0.6);
        let z = common::scalar_input(&mut rng(seed ^ 3), 40);
        let a = s.series_state(&z, lag, 1e-10).unwrap();
        let b = s.series_state_products(&z, lag, 1e-10).unwrap();
        prop_assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn states_stay_in_the_invariant_ball(seed in any::<u64>(), n in 1usize..5, bp in 0.05f64..0.9) {
        let s = sas(seed, n, bp);
        let z = common::scalar_input(&mut rng(seed ^ 5), 200);
        let sb = s.state_bound();
        for x in s.sas_run_recursion(&z, None, 0).unwrap().states {
            prop_assert!(x.norm() <= sb + 1e-12);
        }
    }

    #[test]
    fn trajectories_contract(seed in any::<u64>(), n in 1usize..5, bp in 0.05f64..0.9) {
        let s = sas(seed, n, bp);
        let z = common::scalar_input(&mut rng(seed ^ 6), 60);
        let a = DVector::from_element(n, 0.3);
        let b = DVector::from_element(n, -0.4);
        let (ta, tb) = (s.sas_run_recursion(&z, Some(&a), 0).unwrap(), s.sas_run_recursion(&z, Some(&b), 0).unwrap());
        let mut r = (&a - &b).norm();
        for (x, y) in ta.states.iter().zip(&tb.states) {
            r *= 1.0 - s.esp_margin();
            prop_assert!((x - y).norm() <= r * (1.0 + 1e-12));
        }
    }

    #[test]
    fn functional_is_time_invariant(seed in any::<u64>(), n in 1usize..4, tau in 0usize..30) {
        let s = sas(seed, n, 0.7);
        let z = common::scalar_input(&mut rng(seed ^ 7), 50);
        let tol = 1e-12;
        let shifted = s.sas_functional(&time_shift(&z, tau), tol).unwrap();
        let lagged = s.readout().dot(&s.series_state(&z, tau, tol).unwrap());
        prop_assert!((shifted - lagged).abs() <= 1e-10);
    }

    #[test]
    fn fading_memory_modulus_holds(seed in any::<u64>(), n in 1usize..4, rho in 0.1f64..0.9) {
        let s = sas(seed, n, 0.7);
        let m = s.fmp_lipschitz_constant(rho).unwrap();
        let mut r = rng(seed ^ 8);
        let tol = 1e-12;
        for _ in 0..10 {
            let (z, v) = (common::scalar_input(&mut r, 64), common::scalar_input(&mut r, 64));
            let lhs = (s.sas_functional(&z, tol).unwrap() - s.sas_functional(&v, tol).unwrap()).abs();
            let rhs = m.constant * seqspace::weighted_distance(&z, &v, &m.weighting).unwrap()
                + 2.0 * s.readout().norm() * tol;
            prop_assert!(lhs <= rhs);
        }
    }

    #[test]
    fn linear_closed_form_matches_recursion(seed in any::<u64>(), n in 1usize..5, d in 1usize..3, sigma in 0.05f64..0.9) {
        let mut r = rng(seed);
        let l = common::random_linear(&mut r, n, d, sigma, 0.05);
        let z = common::vector_input(&mut r, 250, d, 1.0);
        let run = l.linear_run(&z, 1e-11).unwrap();
        let rec = l.linear_run_recursion(&z, None, 200).unwrap();
        for pos in 200..z.len() {
            let gap = (&run.states[pos] - &rec.states[pos]).norm();
            prop_assert!(gap <= run.truncation_tail_bound + rec.truncation_tail_bound + 1e-12);
        }
    }

    #[test]
    fn documents_round_trip(seed in any::<u64>(), n in 1usize..4) {
        let s = System::Sas(sas(seed, n, 0.6));
        let back = System::from_json(&s.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.fingerprint(), s.fingerprint());
        prop_assert_eq!(back, s);
        let l = System::Linear(common::random_linear(&mut rng(seed), n, 1, 0.5, 0.05));
        prop_assert_eq!(System::from_json(&l.to_json().unwrap()).unwrap(), l);
    }
}

#[test]
fn inputs_outside_the_unit_interval_are_rejected() {
    let s = sas(1, 2, 0.5);
    let z = BoundedSequence::scalar(&[0.2, 1.5], 2.0, Extension::Zero).unwrap();
    assert!(s.sas_run_recursion(&z, None, 0).is_err());
    assert!(s.sas_functional(&z, 1e-9).is_err());
}
