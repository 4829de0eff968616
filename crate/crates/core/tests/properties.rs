mod common;

use common::{random_history, random_markings, random_priority_free_net};
use pnfluid::casestudies::{self, EmsAParams, EmsBParams};
use pnfluid::dynamics::{self, InitialCondition, Mode};
use pnfluid::linalg;
use pnfluid::markov::{self, StochasticMatrix};
use pnfluid::rational::{self, int, ratio, Rational};
use pnfluid::smdp::{self, Method};
use pnfluid::stationary;
use pnfluid::PetriNet;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn history_steps(net: &PetriNet, dt: &Rational) -> usize {
    net.places().iter().map(|p| (&p.tau / dt).to_integer().try_into().unwrap_or(0usize)).max().unwrap_or(0).max(1)
}

fn lp_rho(net: &PetriNet, e: &[Rational]) -> Vec<Rational> {
    let model = smdp::petri_to_smdp(net, Some(e)).unwrap();
    let g = smdp::lp_throughput(&model).unwrap();
    g.iter().zip(e).map(|(g, e)| g * e).collect()
}

fn stochastic(rows: Vec<Vec<u8>>) -> StochasticMatrix {
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(i, w)| {
            let w: Vec<i64> = w.iter().enumerate().map(|(j, &x)| if x == 0 && j == i && w.iter().all(|&y| y == 0) { 1 } else { x as i64 }).collect();
            let s: i64 = w.iter().sum();
            w.iter().map(|&x| ratio(x, s)).collect()
        })
        .collect();
    StochasticMatrix::new(rows).unwrap()
}

fn square(max: usize) -> impl Strategy<Value = Vec<Vec<u8>>> {
    (1..=max).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(prop_oneof![Just(0u8), 1u8..4], n), n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projector_is_idempotent_and_invariant(rows in square(6)) {
        let p = stochastic(rows);
        let ps = markov::spectral_projector(&p).unwrap();
        prop_assert_eq!(&linalg::mat_mul(&ps, &ps), &ps);
        prop_assert_eq!(&linalg::mat_mul(p.rows(), &ps), &ps);
        prop_assert_eq!(&linalg::mat_mul(&ps, p.rows()), &ps);
        for row in &ps {
            prop_assert_eq!(row.iter().sum::<Rational>(), int(1));
        }
    }

    #[test]
    fn dynamics_nonexpansive_monotone_homogeneous(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (net, inv) = random_priority_free_net(&mut r);
        let dt = dynamics::natural_step(&net);
        let hn = history_steps(&net, &dt);
        let horizon = &net.max_tau() * int(40);
        let e: Vec<f64> = inv.e.iter().map(rational::to_f64).collect();
        let nq = net.num_transitions();

        let h1 = random_history(&mut r, nq, hn, false);
        let h2 = random_history(&mut r, nq, hn, false);
        let run = |h: &Vec<Vec<f64>>| dynamics::simulate(&net, &InitialCondition::Sampled(h.clone()), &horizon, &dt, Mode::Fluid).unwrap();
        let (a, b) = (run(&h1), run(&h2));
        let gap = |k: usize| (0..nq).map(|q| (a.z[q][k] - b.z[q][k]).abs() / e[q]).fold(0.0, f64::max);
        let window = |k: usize| (k - hn..=k).map(gap).fold(0.0, f64::max);
        for k in hn + 1..a.len() {
            prop_assert!(window(k) <= window(k - 1) + 1e-9, "weighted distance grew at step {}", k);
        }

        let upper: Vec<Vec<f64>> = h1.iter().zip(&h2).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u.max(*v)).collect()).collect();
        let c = run(&upper);
        for q in 0..nq {
            for k in 0..c.len() {
                prop_assert!(c.z[q][k] >= a.z[q][k].max(b.z[q][k]) - 1e-9);
            }
        }

        let shift = r.gen_range(0.5..3.0);
        let shifted: Vec<Vec<f64>> = h1.iter().zip(&e).map(|(row, w)| row.iter().map(|v| v + shift * w).collect()).collect();
        let d = run(&shifted);
        for q in 0..nq {
            for k in 0..d.len() {
                prop_assert!((d.z[q][k] - a.z[q][k] - shift * e[q]).abs() <= 1e-9 * (1.0 + a.z[q][k].abs()));
            }
        }
    }

    #[test]
    fn throughput_is_concave_in_markings(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (net, inv) = random_priority_free_net(&mut r);
        let np = net.num_places();
        let m1 = random_markings(&mut r, np);
        let m2 = random_markings(&mut r, np);
        let mid: Vec<Rational> = m1.iter().zip(&m2).map(|(a, b)| (a + b) / int(2)).collect();
        let at = |m: &[Rational]| lp_rho(&net.with_markings(&m.iter().cloned().enumerate().collect::<Vec<_>>()), &inv.e);
        let (r1, r2, rm) = (at(&m1), at(&m2), at(&mid));
        for q in 0..net.num_transitions() {
            prop_assert!(rm[q] >= (&r1[q] + &r2[q]) / int(2));
        }
    }

    #[test]
    fn exact_methods_agree_on_random_nets(seed in any::<u64>()) {
        let (net, inv) = random_priority_free_net(&mut rng(seed));
        let lp = lp_rho(&net, &inv.e);
        let model = smdp::petri_to_smdp(&net, Some(&inv.e)).unwrap();
        let en = smdp::solve_average_cost(&model, Method::Enumerate).unwrap();
        let en: Vec<Rational> = en.g.iter().zip(&inv.e).map(|(g, e)| g * e).collect();
        let lex = stationary::solve_lex_priority_free(&net).unwrap();
        prop_assert_eq!(&lp, &en);
        prop_assert_eq!(&lp, &lex.rho);
        let germ = stationary::solve_germ_priority(&net).unwrap();
        prop_assert!(germ.iter().all(|s| s.rho == lp));
    }

    #[test]
    fn stationary_regime_is_a_fixed_half_line(seed in any::<u64>()) {
        let (net, _) = random_priority_free_net(&mut rng(seed));
        let sol = stationary::solve_lex_priority_free(&net).unwrap();
        let dt = dynamics::natural_step(&net);
        let horizon = &net.max_tau() * int(20);
        let traj = dynamics::simulate(&net, &InitialCondition::affine(&sol.rho, &sol.u), &horizon, &dt, Mode::Fluid).unwrap();
        for (q, row) in traj.z.iter().enumerate() {
            let (rho, u) = (rational::to_f64(&sol.rho[q]), rational::to_f64(&sol.u[q]));
            for (t, z) in traj.times.iter().zip(row) {
                prop_assert!((z - (rho * t + u)).abs() <= 1e-9 * (1.0 + z.abs()), "q{} leaves the half-line at t = {}", q, t);
            }
        }
    }

    #[test]
    fn ems_a_preselection_split(seed in any::<u64>()) {
        let p = EmsAParams::random(&mut rng(seed));
        let net = casestudies::build_ems_a(&p).unwrap();
        let rho = stationary::solve_lex_priority_free(&net).unwrap().rho;
        prop_assert_eq!(&rho, &casestudies::ems_a_closed_form(&p));
        prop_assert_eq!(&rho[3], &(&p.pi * &rho[1]));
    }

    #[test]
    fn ems_b_table_matches_germ_solutions(seed in any::<u64>()) {
        let p = EmsBParams::random(&mut rng(seed));
        let table = casestudies::ems_b_phase_table(&p).unwrap();
        let net = casestudies::build_ems_b(&p).unwrap();
        let idx = |id: &str| net.transition_index(id).unwrap();
        let sols = stationary::solve_germ_priority(&net).unwrap();
        prop_assert!(!sols.is_empty());
        for s in &sols {
            prop_assert_eq!(&s.rho[idx("z1")], &table.rho1);
            prop_assert_eq!(&s.rho[idx("z5")], &table.rho5);
            prop_assert_eq!(&s.rho[idx("z5p")], &table.rho5p);
            prop_assert_eq!(&s.rho[idx("z3")], &(&p.a.pi * &s.rho[idx("z1")]));
        }
    }
}
