//! Oracles shared by the integration test targets.
#![allow(dead_code)]

use astro_float::{BigFloat, Consts, RoundingMode};
use caadp::model::{init_params, loss_and_grad, Batch, ModelSpec};
use caadp::tensor::ParamSet;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const P: usize = 512;
pub const RM: RoundingMode = RoundingMode::ToEven;

pub fn big(x: f64) -> BigFloat {
    BigFloat::from_f64(x, P)
}

pub fn to_f64(x: &BigFloat) -> f64 {
    x.to_string().parse().expect("decimal rendering")
}

/// The binomial series summed directly in 512-bit arithmetic, with no
/// log-space rearrangement.
pub fn rdp_oracle(q: f64, sigma: f64, order: u32) -> f64 {
    let mut cc = Consts::new().unwrap();
    let (q, one_minus_q) = (big(q), big(1.0).sub(&big(q), P, RM));
    let two_s2 = big(2.0).mul(&big(sigma), P, RM).mul(&big(sigma), P, RM);
    let mut sum = big(0.0);
    let mut binom = big(1.0);
    for k in 0..=order as u64 {
        if k > 0 {
            binom = binom
                .mul(&BigFloat::from_u64(order as u64 - k + 1, P), P, RM)
                .div(&BigFloat::from_u64(k, P), P, RM);
        }
        let expo = BigFloat::from_u64(k * k.saturating_sub(1), P).div(&two_s2, P, RM);
        let term = binom
            .mul(&one_minus_q.powi((order as u64 - k) as usize, P, RM), P, RM)
            .mul(&q.powi(k as usize, P, RM), P, RM)
            .mul(&expo.exp(P, RM, &mut cc), P, RM);
        sum = sum.add(&term, P, RM);
    }
    let rdp = sum
        .ln(P, RM, &mut cc)
        .div(&BigFloat::from_u64(order as u64 - 1, P), P, RM);
    to_f64(&rdp)
}

const STEP: f64 = 1e-5;

pub fn random_batch(n: usize, l: usize, c: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array3::from_shape_fn((n, l, c), |_| rng.gen_range(-1.0..1.0));
    let y = (0..n).map(|_| rng.gen_range(0..=1u8)).collect();
    Batch::new(x, y).unwrap()
}

fn loss_at(spec: &ModelSpec, params: &ParamSet, batch: &Batch) -> f64 {
    loss_and_grad(spec, params, batch).unwrap().0
}

/// Largest relative error between the analytic gradient and central
/// differences, over every coordinate (or every `stride`-th one).
pub fn max_rel_error(spec: &ModelSpec, batch: &Batch, stride: usize) -> f64 {
    let params = init_params(spec).unwrap();
    let (_, grads) = loss_and_grad(spec, &params, batch).unwrap();
    let mut worst = 0.0f64;
    for t in 0..params.len() {
        for j in (0..params.tensor(t).len()).step_by(stride) {
            let mut p = params.clone();
            p.tensor_mut(t).data_mut()[j] += STEP;
            let up = loss_at(spec, &p, batch);
            p.tensor_mut(t).data_mut()[j] -= 2.0 * STEP;
            let down = loss_at(spec, &p, batch);
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grads.tensor(t).data()[j];
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    worst
}
