mod common;

use common::*;
use gmsim_core::noise::NoiseModel;
use gmsim_core::static_equilibrium::*;
use gmsim_core::{Belief, StateGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;

fn hand_g(s: f64, xs: &[f64], pi: &[f64], scale: f64) -> f64 {
    let num: f64 = xs.iter().zip(pi).map(|(x, p)| x * p * logistic_sf(s - x, scale)).sum();
    let den: f64 = xs.iter().zip(pi).map(|(x, p)| p * logistic_sf(s - x, scale)).sum();
    num / den
}

fn hand_h(s: f64, xs: &[f64], pi: &[f64], scale: f64) -> f64 {
    let num: f64 = xs.iter().zip(pi).map(|(x, p)| x * p * logistic_cdf(s - x, scale)).sum();
    let den: f64 = xs.iter().zip(pi).map(|(x, p)| p * logistic_cdf(s - x, scale)).sum();
    num / den
}

fn random_belief(rng: &mut ChaCha8Rng, n: usize) -> Belief {
    Belief::new((0..n).map(|_| rng.gen::<f64>() + 1e-3).collect()).unwrap()
}

#[test]
fn h_matches_hand_bayes() {
    let grid = StateGrid::new(vec![0.0, 1.0]).unwrap();
    let pi = Belief::uniform(2);
    let noise = NoiseModel::logistic(2.0).unwrap();
    let psi0 = logistic_cdf(0.4, 2.0);
    let psi1 = logistic_cdf(-0.6, 2.0);
    let expected = 0.5 * psi1 / (0.5 * psi0 + 0.5 * psi1);
    let h = eval_h(0.4, &pi, &grid, &noise).unwrap();
    assert!((h - expected).abs() < 1e-12);
}

#[test]
fn ask_and_bid_match_bisection_oracle() {
    let xs = [0.0, 1.0];
    let pi = [0.5, 0.5];
    let grid = StateGrid::new(xs.to_vec()).unwrap();
    let belief = Belief::new(pi.to_vec()).unwrap();
    let noise = NoiseModel::logistic(2.0).unwrap();
    let ask_oracle = bisect(|s| s - hand_g(s, &xs, &pi, 2.0), 0.0, 1.0);
    let bid_oracle = bisect(|s| s - hand_h(s, &xs, &pi, 2.0), 0.0, 1.0);
    let ask = solve_ask(&belief, &grid, &noise, TOL).unwrap();
    let bid = solve_bid(&belief, &grid, &noise, TOL).unwrap();
    assert!((ask.price - ask_oracle).abs() <= 1e-10, "{} vs {}", ask.price, ask_oracle);
    assert!((bid.price - bid_oracle).abs() <= 1e-10);
    // Symmetric noise and belief: the spread is symmetric around 1/2.
    assert!((ask.price + bid.price - 1.0).abs() < 1e-10);
    assert!(ask.iterations < 60);
}

#[test]
fn degenerate_belief_gives_zero() {
    let grid = StateGrid::new(vec![0.0, 1.0]).unwrap();
    let noise = NoiseModel::logistic(2.0).unwrap();
    let ask = solve_ask(&Belief::point_mass(2, 0), &grid, &noise, TOL).unwrap();
    assert_eq!(ask.price, 0.0);
}

#[test]
fn contraction_in_price() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases = [
        (vec![0.0, 1.0], NoiseModel::logistic(2.0).unwrap()),
        (vec![-1.0, 0.0, 2.0], NoiseModel::logistic(4.0).unwrap()),
        (vec![0.0, 0.5, 1.0, 1.5], NoiseModel::gaussian(3.0).unwrap()),
        (vec![1.0, 2.0], NoiseModel::laplace(1.5).unwrap()),
    ];
    for (xs, noise) in cases {
        let grid = StateGrid::new(xs).unwrap();
        let k = noise.check_gm_condition(grid.range()).unwrap().k;
        assert!(k < 1.0);
        for _ in 0..1000 {
            let pi = random_belief(&mut rng, grid.len());
            let s = grid.min() + rng.gen::<f64>() * grid.range();
            let t = grid.min() + rng.gen::<f64>() * grid.range();
            let dg = (eval_g(s, &pi, &grid, &noise).unwrap() - eval_g(t, &pi, &grid, &noise).unwrap()).abs();
            let dh = (eval_h(s, &pi, &grid, &noise).unwrap() - eval_h(t, &pi, &grid, &noise).unwrap()).abs();
            assert!(dg <= (k + 1e-9) * (s - t).abs());
            assert!(dh <= (k + 1e-9) * (s - t).abs());
        }
    }
}

#[test]
fn lipschitz_in_belief() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = StateGrid::new(vec![0.0, 0.4, 1.0]).unwrap();
    let noise = NoiseModel::logistic(1.5).unwrap();
    let l = contraction_constants(&grid, &noise, 1.0).unwrap().l;
    for _ in 0..1000 {
        let a = random_belief(&mut rng, 3);
        let b = random_belief(&mut rng, 3);
        let s = rng.gen::<f64>();
        let d = (eval_g(s, &a, &grid, &noise).unwrap() - eval_g(s, &b, &grid, &noise).unwrap()).abs();
        assert!(d <= l * a.l1_distance(&b) + 1e-9);
    }
}

#[test]
fn picard_error_ratios_bounded_by_k() {
    let xs = [0.0, 0.3, 1.0];
    let pi = [0.2, 0.5, 0.3];
    let scale = 1.6;
    let k = 1.0 / scale;
    let fixed = bisect(|s| s - hand_g(s, &xs, &pi, scale), 0.0, 1.0);
    let mut s: f64 = xs.iter().zip(&pi).map(|(x, p)| x * p).sum();
    let mut err = (s - fixed).abs();
    for _ in 0..20 {
        s = hand_g(s, &xs, &pi, scale);
        let next = (s - fixed).abs();
        if err < 1e-13 {
            break;
        }
        assert!(next / err <= k + 1e-6);
        err = next;
    }
    let grid = StateGrid::new(xs.to_vec()).unwrap();
    let got = solve_ask(&Belief::new(pi.to_vec()).unwrap(), &grid, &NoiseModel::logistic(scale).unwrap(), TOL).unwrap();
    assert!((got.price - fixed).abs() < 1e-10);
}

#[test]
fn contraction_constants_closed_form() {
    let grid = StateGrid::new(vec![0.0, 1.0]).unwrap();
    let noise = NoiseModel::logistic(2.0).unwrap();
    let c = contraction_constants(&grid, &noise, 1.0).unwrap();
    let phi_c = logistic_sf(1.0, 2.0);
    let l = 2.0 / (phi_c * phi_c);
    let m = 1.0 / 8.0;
    let k1 = 12.0 * l * 2.0 * 1.0 * m;
    assert!((c.k - 0.5).abs() < 1e-9);
    assert!((c.m - m).abs() < 1e-9);
    assert!((c.l - l).abs() < 1e-9);
    assert!((c.k1 - k1).abs() < 1e-9);
    assert!((c.t_star - 0.5 / (2.0 * k1)).abs() < 1e-9);

    let doubled = contraction_constants(&grid, &noise, 2.0).unwrap();
    assert!((doubled.k1 - 2.0 * c.k1).abs() < 1e-9);
    assert!((doubled.t_star - 0.5 * c.t_star).abs() < 1e-12);

    // K is linear in C for a fixed logistic scale.
    let wide = StateGrid::new(vec![0.0, 2.0]).unwrap();
    let noise4 = NoiseModel::logistic(4.0).unwrap();
    let kw = contraction_constants(&wide, &noise4, 1.0).unwrap().k;
    let kn = contraction_constants(&grid, &noise4, 1.0).unwrap().k;
    assert!((kw - 2.0 * kn).abs() < 1e-9);
}

#[test]
fn negative_grid_uses_absolute_maximum() {
    let grid = StateGrid::new(vec![-3.0, -1.0]).unwrap();
    let noise = NoiseModel::logistic(4.0).unwrap();
    let c = contraction_constants(&grid, &noise, 1.0).unwrap();
    let phi_c = logistic_sf(2.0, 4.0);
    assert!((c.l - 6.0 / (phi_c * phi_c)).abs() < 1e-9);
}

fn belief_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..1.0, n).prop_filter("nonzero", |v| v.iter().sum::<f64>() > 1e-6)
}

proptest! {
    #[test]
    fn spread_brackets_mean_and_residuals_small(p in belief_strategy(3), scale in 1.05f64..6.0) {
        let grid = StateGrid::new(vec![0.0, 0.25, 1.0]).unwrap();
        let noise = NoiseModel::logistic(scale).unwrap();
        let pi = Belief::new(p).unwrap();
        let ask = solve_ask(&pi, &grid, &noise, TOL).unwrap().price;
        let bid = solve_bid(&pi, &grid, &noise, TOL).unwrap().price;
        let mean = pi.mean(&grid);
        prop_assert!(bid <= mean + 1e-12 && mean <= ask + 1e-12);
        prop_assert!((eval_g(ask, &pi, &grid, &noise).unwrap() - ask).abs() <= TOL);
        prop_assert!((eval_h(bid, &pi, &grid, &noise).unwrap() - bid).abs() <= TOL);
    }

    #[test]
    fn g_stays_in_range(p in belief_strategy(4), s in 0.0f64..=3.0) {
        let grid = StateGrid::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let noise = NoiseModel::gaussian(2.0).unwrap();
        let pi = Belief::new(p).unwrap();
        let g = eval_g(s, &pi, &grid, &noise).unwrap();
        prop_assert!((0.0..=3.0).contains(&g));
    }
}
