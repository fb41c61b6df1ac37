mod common;

use astro_float::Consts;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{big, rdp_oracle as oracle, to_f64, P, RM};

use caadp::accountant::{
    default_orders, eps_analytic, gaussian_sigma_for, rdp_curve, rdp_gaussian,
    rdp_subsampled_gaussian, rdp_to_eps,
};

#[test]
fn series_matches_high_precision_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let q = 10f64.powf(rng.gen_range(-3.0..-0.05));
        let sigma = 10f64.powf(rng.gen_range(-1.3..0.7));
        let order = rng.gen_range(2..=64u32);
        let got = rdp_subsampled_gaussian(q, sigma, order).unwrap();
        let want = oracle(q, sigma, order);
        let rel = (got - want).abs() / want.abs();
        assert!(
            rel < 1e-6,
            "q={q} sigma={sigma} order={order}: {got} vs {want} (rel {rel:e})"
        );
    }
}

#[test]
fn oracle_agrees_with_closed_form_at_full_sampling() {
    // q = 1 leaves only the k = order term: order / (2 sigma^2)
    for (sigma, order) in [(2.0, 10), (0.7, 5), (1.3, 33)] {
        let want = rdp_gaussian(sigma, f64::from(order));
        let got = oracle(1.0, sigma, order);
        assert!((got - want).abs() / want < 1e-12);
        let lib = rdp_subsampled_gaussian(1.0, sigma, order).unwrap();
        assert!((lib - want).abs() < 1e-9);
    }
}

#[test]
fn analytic_values_match_high_precision() {
    let mut cc = Consts::new().unwrap();
    // sqrt(2 ln(1.25e5)) for the single-release calibration
    let ln = big(1.25e5).ln(P, RM, &mut cc);
    let sigma = to_f64(&big(2.0).mul(&ln, P, RM).sqrt(P, RM));
    assert!((gaussian_sigma_for(1.0, 1e-5, 1.0).unwrap() - sigma).abs() < 1e-12);
    assert!((sigma - 4.8448).abs() < 1e-3);

    // 0.01 * sqrt(2000 ln(1e5))
    let ln = big(1e5).ln(P, RM, &mut cc);
    let eps = to_f64(
        &big(2000.0)
            .mul(&ln, P, RM)
            .sqrt(P, RM)
            .mul(&big(0.01), P, RM),
    );
    assert!((eps_analytic(0.01, 1000, 1.0, 1e-5).unwrap() - eps).abs() < 1e-12);
    assert!((eps - 1.5174).abs() < 1e-3);
}

#[test]
fn epsilon_falls_along_the_noise_grid() {
    let orders = default_orders();
    let grid = [0.02, 0.04, 0.05, 0.08, 0.10, 0.15, 0.20];
    let eps: Vec<f64> = grid
        .iter()
        .map(|&s| {
            let curve = rdp_curve(32.0 / 1440.0, s, &orders).unwrap();
            rdp_to_eps(&curve, 450, 1e-5).unwrap().0
        })
        .collect();
    assert!(eps.windows(2).all(|w| w[1] < w[0]), "{eps:?}");
}
