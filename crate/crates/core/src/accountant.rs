//! Privacy accounting for noisy gradient descent.
//!
//! Two paths are reported side by side: a closed-form composition bound
//! `q * sqrt(2 T ln(1/delta)) / sigma`, and a Rényi accountant for the
//! Poisson-style subsampled Gaussian mechanism at integer orders, converted
//! to `(epsilon, delta)` with the classic `rdp + ln(1/delta) / (order - 1)`
//! bound. Accounting always uses `sigma_base`, the largest multiplier the
//! adaptive mechanism can apply.
//!
//! ```
//! use caadp::accountant::{eps_analytic, gaussian_sigma_for};
//!
//! let sigma = gaussian_sigma_for(1.0, 1e-5, 1.0).unwrap();
//! assert!((sigma - 4.8448).abs() < 1e-3);
//! let eps = eps_analytic(0.01, 1000, 1.0, 1e-5).unwrap();
//! assert!((eps - 1.5174).abs() < 1e-3);
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dp::{ClipMode, DpConfig, Mechanism, NoiseScaleMode};
use crate::error::{Error, Result};

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("delta {delta} must lie in (0, 1)")))
    }
}

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!(
            "sampling rate {q} must lie in (0, 1]"
        )))
    }
}

/// Noise scale that makes one Gaussian release `(eps, delta)`-private.
pub fn gaussian_sigma_for(eps: f64, delta: f64, sensitivity: f64) -> Result<f64> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::param(format!("epsilon {eps} must be > 0")));
    }
    check_delta(delta)?;
    if !(sensitivity.is_finite() && sensitivity > 0.0) {
        return Err(Error::param(format!(
            "sensitivity {sensitivity} must be > 0"
        )));
    }
    Ok(sensitivity * (2.0 * (1.25 / delta).ln()).sqrt() / eps)
}

/// Closed-form bound after `steps` steps at sampling rate `q`. A zero
/// multiplier gives `f64::INFINITY`.
pub fn eps_analytic(q: f64, steps: usize, sigma_base: f64, delta: f64) -> Result<f64> {
    check_q(q)?;
    check_delta(delta)?;
    if !(sigma_base.is_finite() && sigma_base >= 0.0) {
        return Err(Error::param(format!("sigma {sigma_base} must be >= 0")));
    }
    if sigma_base == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(q * (2.0 * steps as f64 * (1.0 / delta).ln()).sqrt() / sigma_base)
}

/// Rényi divergence of the plain Gaussian mechanism at `order`.
pub fn rdp_gaussian(sigma: f64, order: f64) -> f64 {
    order / (2.0 * sigma * sigma)
}

/// `ln(exp(a) + exp(b))` without overflow.
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Rényi bound of the subsampled Gaussian mechanism at an integer order,
/// summing the binomial series in log space.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, order: u32) -> Result<f64> {
    check_q(q)?;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::param(format!("sigma {sigma} must be > 0")));
    }
    if order < 2 {
        return Err(Error::param(format!("order {order} must be >= 2")));
    }
    let a = f64::from(order);
    let peak = a * (a - 1.0) / (2.0 * sigma * sigma);
    if !peak.is_finite() {
        return Err(Error::Range(format!(
            "order {order} with sigma {sigma} overflows the exponent"
        )));
    }
    if q == 1.0 {
        return Ok(rdp_gaussian(sigma, a));
    }
    let (ln_q, ln_1q) = (q.ln(), (-q).ln_1p());
    let mut ln_binom = 0.0;
    let mut total = f64::NEG_INFINITY;
    for k in 0..=order {
        let kf = f64::from(k);
        if k > 0 {
            ln_binom += (a - kf + 1.0).ln() - kf.ln();
        }
        let term =
            ln_binom + (a - kf) * ln_1q + kf * ln_q + kf * (kf - 1.0) / (2.0 * sigma * sigma);
        total = log_add(total, term);
    }
    let rdp = total / (a - 1.0);
    if !rdp.is_finite() {
        return Err(Error::Range(format!(
            "order {order}: RDP value not representable"
        )));
    }
    Ok(rdp.max(0.0))
}

/// Integer orders 2..=64 plus a coarse tail up to 512.
pub fn default_orders() -> Vec<u32> {
    (2..=64)
        .chain([72, 80, 96, 128, 160, 192, 256, 384, 512])
        .collect()
}

/// Per-step Rényi divergence at each order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub points: Vec<(f64, f64)>,
}

pub fn rdp_curve(q: f64, sigma: f64, orders: &[u32]) -> Result<RdpCurve> {
    let points = orders
        .iter()
        .map(|&o| rdp_subsampled_gaussian(q, sigma, o).map(|v| (f64::from(o), v)))
        .collect::<Result<_>>()?;
    Ok(RdpCurve { points })
}

/// Composes the curve over `steps` steps and returns the smallest
/// `(epsilon, order)` over the curve's orders.
pub fn rdp_to_eps(curve: &RdpCurve, steps: usize, delta: f64) -> Result<(f64, f64)> {
    check_delta(delta)?;
    let offset = (1.0 / delta).ln();
    curve
        .points
        .iter()
        .map(|&(order, rdp)| (steps as f64 * rdp + offset / (order - 1.0), order))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or_else(|| Error::param("empty RDP curve"))
}

/// Diagnostic composition using each step's own multiplier instead of
/// `sigma_base`. `None` when there are no steps.
pub fn heterogeneous_eps(
    q: f64,
    sigmas: &[f64],
    orders: &[u32],
    delta: f64,
) -> Result<Option<f64>> {
    if sigmas.is_empty() {
        return Ok(None);
    }
    if sigmas.iter().any(|&s| s <= 0.0) {
        return Ok(Some(f64::INFINITY));
    }
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for s in sigmas {
        *counts.entry(s.to_bits()).or_default() += 1;
    }
    let mut totals = vec![0.0; orders.len()];
    for (bits, count) in counts {
        for (t, &o) in totals.iter_mut().zip(orders) {
            *t += count as f64 * rdp_subsampled_gaussian(q, f64::from_bits(bits), o)?;
        }
    }
    let curve = RdpCurve {
        points: orders.iter().map(|&o| f64::from(o)).zip(totals).collect(),
    };
    rdp_to_eps(&curve, 1, delta).map(|(eps, _)| Some(eps))
}

/// Epsilon values serialize as numbers, or the string `"inf"`.
mod eps_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn decode<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Text(s) => Err(E::custom(format!(
                "expected a number or \"inf\", got {s:?}"
            ))),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        decode(Repr::deserialize(d)?)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => super::serialize(v, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<Repr>::deserialize(d)?.map(decode).transpose()
        }
    }
}

/// Formats an epsilon for tables and CSV cells.
pub fn format_eps(eps: f64) -> String {
    if eps == f64::INFINITY {
        "inf".to_string()
    } else {
        eps.to_string()
    }
}

/// Privacy accounting of one training run, before training (budgeted
/// epochs) and after it (epochs up to the best checkpoint).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub mechanism: Mechanism,
    pub n_train: usize,
    pub batch_size: usize,
    pub q: f64,
    pub steps_per_epoch: usize,
    pub sigma_base: f64,
    pub delta: f64,
    pub orders: Vec<u32>,
    pub epochs_budgeted: usize,
    pub epochs_actual: usize,
    pub steps_pre: usize,
    pub steps_post: usize,
    #[serde(with = "eps_serde")]
    pub eps_analytic_pre: f64,
    #[serde(with = "eps_serde")]
    pub eps_analytic_post: f64,
    #[serde(with = "eps_serde")]
    pub eps_rdp_pre: f64,
    #[serde(with = "eps_serde")]
    pub eps_rdp_post: f64,
    pub best_order_pre: Option<f64>,
    pub best_order_post: Option<f64>,
    /// set when epsilon is the infinite sentinel (no noise)
    pub unbounded: bool,
    pub clip_mode: ClipMode,
    pub noise_scale_mode: NoiseScaleMode,
    /// per-tensor clipping of the batch mean does not bound one sample's
    /// influence, so the epsilon holds only under the nominal sensitivity
    pub sensitivity_caveat: bool,
    /// diagnostic outside the headline accounting: RDP composed with each step's
    /// own multiplier
    #[serde(with = "eps_serde::option", default)]
    pub eps_rdp_heterogeneous: Option<f64>,
}

/// The four epsilon values `(analytic_pre, analytic_post, rdp_pre,
/// rdp_post)` and the best orders, from the stored inputs.
type EpsValues = (f64, f64, f64, f64, Option<f64>, Option<f64>);

fn compute_eps(
    q: f64,
    sigma_base: f64,
    delta: f64,
    orders: &[u32],
    steps_pre: usize,
    steps_post: usize,
) -> Result<EpsValues> {
    if sigma_base == 0.0 {
        let inf = f64::INFINITY;
        return Ok((inf, inf, inf, inf, None, None));
    }
    let curve = rdp_curve(q, sigma_base, orders)?;
    let (rdp_pre, order_pre) = rdp_to_eps(&curve, steps_pre, delta)?;
    let (rdp_post, order_post) = rdp_to_eps(&curve, steps_post, delta)?;
    Ok((
        eps_analytic(q, steps_pre, sigma_base, delta)?,
        eps_analytic(q, steps_post, sigma_base, delta)?,
        rdp_pre,
        rdp_post,
        Some(order_pre),
        Some(order_post),
    ))
}

impl PrivacyLedger {
    /// Recomputes every epsilon from the stored inputs.
    pub fn recompute(&self) -> Result<PrivacyLedger> {
        let sigma = if self.unbounded { 0.0 } else { self.sigma_base };
        let (ap, aq, rp, rq, op, oq) = compute_eps(
            self.q,
            sigma,
            self.delta,
            &self.orders,
            self.steps_pre,
            self.steps_post,
        )?;
        Ok(PrivacyLedger {
            eps_analytic_pre: ap,
            eps_analytic_post: aq,
            eps_rdp_pre: rp,
            eps_rdp_post: rq,
            best_order_pre: op,
            best_order_post: oq,
            ..self.clone()
        })
    }
}

/// Accounts a run on `n_train` windows over the default order grid.
pub fn account(
    cfg: &DpConfig,
    n_train: usize,
    epochs_budgeted: usize,
    epochs_actual: usize,
) -> Result<PrivacyLedger> {
    cfg.validate()?;
    if n_train < cfg.batch_size {
        return Err(Error::param(format!(
            "{n_train} training windows is fewer than one batch of {}",
            cfg.batch_size
        )));
    }
    if epochs_actual > epochs_budgeted {
        return Err(Error::param(format!(
            "actual epochs {epochs_actual} exceed the budget {epochs_budgeted}"
        )));
    }
    let q = cfg.batch_size as f64 / n_train as f64;
    let steps_per_epoch = n_train / cfg.batch_size;
    let unbounded = cfg.mechanism == Mechanism::NoDp || cfg.sigma_base == 0.0;
    let orders = default_orders();
    let (steps_pre, steps_post) = (
        epochs_budgeted * steps_per_epoch,
        epochs_actual * steps_per_epoch,
    );
    let sigma = if unbounded { 0.0 } else { cfg.sigma_base };
    let (ap, aq, rp, rq, op, oq) =
        compute_eps(q, sigma, cfg.delta, &orders, steps_pre, steps_post)?;
    Ok(PrivacyLedger {
        mechanism: cfg.mechanism,
        n_train,
        batch_size: cfg.batch_size,
        q,
        steps_per_epoch,
        sigma_base: cfg.sigma_base,
        delta: cfg.delta,
        orders,
        epochs_budgeted,
        epochs_actual,
        steps_pre,
        steps_post,
        eps_analytic_pre: ap,
        eps_analytic_post: aq,
        eps_rdp_pre: rp,
        eps_rdp_post: rq,
        best_order_pre: op,
        best_order_post: oq,
        unbounded,
        clip_mode: cfg.clip_mode,
        noise_scale_mode: cfg.noise_scale_mode,
        sensitivity_caveat: cfg.clip_mode == ClipMode::PerTensorBatch,
        eps_rdp_heterogeneous: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_examples() {
        let s1 = gaussian_sigma_for(1.0, 1e-5, 1.0).unwrap();
        assert!((s1 - 4.8448).abs() < 1e-3);
        assert!((gaussian_sigma_for(2.0, 1e-5, 1.0).unwrap() - s1 / 2.0).abs() < 1e-14);
        assert!((gaussian_sigma_for(1.0, 1e-5, 2.0).unwrap() - 2.0 * s1).abs() < 1e-14);
        assert!(gaussian_sigma_for(0.0, 1e-5, 1.0).is_err());
        assert!(gaussian_sigma_for(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn analytic_examples() {
        let e = eps_analytic(0.01, 1000, 1.0, 1e-5).unwrap();
        assert!((e - 1.5174).abs() < 1e-3);
        let e4 = eps_analytic(0.01, 4000, 1.0, 1e-5).unwrap();
        assert!((e4 - 2.0 * e).abs() < 1e-12);
        let small = eps_analytic(0.01, 1000, 0.05, 1e-5).unwrap();
        assert!((small - 30.349).abs() < 1e-3);
        assert_eq!(eps_analytic(0.01, 1000, 0.0, 1e-5).unwrap(), f64::INFINITY);
    }

    #[test]
    fn gaussian_rdp_examples() {
        assert_eq!(rdp_gaussian(2.0, 10.0), 1.25);
        assert_eq!(rdp_gaussian(1.0, 2.0), 1.0);
    }

    #[test]
    fn full_sampling_reduces_to_gaussian() {
        assert!((rdp_subsampled_gaussian(1.0, 1.0, 2).unwrap() - 1.0).abs() < 1e-9);
        for &(sigma, order) in &[(0.7, 5u32), (3.0, 40), (1.3, 512)] {
            let v = rdp_subsampled_gaussian(1.0, sigma, order).unwrap();
            assert!((v - rdp_gaussian(sigma, f64::from(order))).abs() < 1e-9);
        }
    }

    #[test]
    fn vanishing_sampling_rate_vanishes() {
        let v = rdp_subsampled_gaussian(1e-9, 1.0, 8).unwrap();
        assert!(v < 1e-12, "{v}");
    }

    #[test]
    fn overflow_is_a_range_error() {
        let err = rdp_subsampled_gaussian(0.1, 1e-160, 64).unwrap_err();
        assert!(
            matches!(err, Error::Range(ref m) if m.contains("64")),
            "{err}"
        );
    }

    #[test]
    fn conversion_examples() {
        let curve = RdpCurve {
            points: vec![(10.0, 1.25)],
        };
        let (eps, order) = rdp_to_eps(&curve, 1, 1e-5).unwrap();
        assert!((eps - (1.25 + (1e5f64).ln() / 9.0)).abs() < 1e-12);
        assert!((eps - 2.5292).abs() < 1e-4);
        assert_eq!(order, 10.0);

        let curve = rdp_curve(0.01, 1.0, &default_orders()).unwrap();
        let (eps, order) = rdp_to_eps(&curve, 0, 1e-5).unwrap();
        assert_eq!(order, 512.0);
        assert_eq!(eps, (1e5f64).ln() / 511.0);

        let coarse = rdp_curve(0.01, 1.0, &[2, 8, 32]).unwrap();
        let fine = rdp_curve(0.01, 1.0, &[2, 4, 8, 16, 32]).unwrap();
        assert!(
            rdp_to_eps(&fine, 500, 1e-5).unwrap().0 <= rdp_to_eps(&coarse, 500, 1e-5).unwrap().0
        );
        assert!(rdp_to_eps(&RdpCurve { points: vec![] }, 1, 1e-5).is_err());
    }

    #[test]
    fn curve_nondecreasing_in_order() {
        for &(q, sigma) in &[(0.01, 1.0), (0.1, 0.5), (0.3, 2.0), (0.01, 0.05)] {
            let c = rdp_curve(q, sigma, &default_orders()).unwrap();
            for w in c.points.windows(2) {
                assert!(w[1].1 >= w[0].1, "q={q} sigma={sigma}: {w:?}");
            }
        }
    }

    #[test]
    fn ledger_examples() {
        let mut cfg = DpConfig {
            sigma_base: 0.05,
            alpha: 0.6,
            ..DpConfig::new(Mechanism::CaAdp)
        };
        let ca = account(&cfg, 3200, 10, 7).unwrap();
        assert_eq!(ca.q, 0.01);
        assert_eq!((ca.steps_pre, ca.steps_post), (1000, 700));
        assert!((ca.eps_analytic_pre - 30.349).abs() < 1e-3);
        assert!(ca.eps_analytic_post <= ca.eps_analytic_pre);
        assert!(ca.eps_rdp_post <= ca.eps_rdp_pre);
        assert!(ca.orders.contains(&(ca.best_order_pre.unwrap() as u32)));

        cfg.mechanism = Mechanism::ConvDp;
        cfg.alpha = 0.0;
        let conv = account(&cfg, 3200, 10, 7).unwrap();
        assert_eq!(
            (conv.eps_analytic_pre, conv.eps_rdp_pre, conv.eps_rdp_post),
            (ca.eps_analytic_pre, ca.eps_rdp_pre, ca.eps_rdp_post)
        );

        cfg.mechanism = Mechanism::NoDp;
        let none = account(&cfg, 3200, 10, 7).unwrap();
        assert!(none.unbounded);
        let json = serde_json::to_string(&none).unwrap();
        assert!(json.contains(r#""eps_rdp_post":"inf""#), "{json}");
        let back: PrivacyLedger = serde_json::from_str(&json).unwrap();
        assert_eq!(back.eps_analytic_pre, f64::INFINITY);
    }

    #[test]
    fn ledger_recomputes_bit_for_bit() {
        let cfg = DpConfig {
            sigma_base: 0.8,
            batch_size: 16,
            ..DpConfig::new(Mechanism::ConvDp)
        };
        let ledger = account(&cfg, 1000, 30, 12).unwrap();
        let json = serde_json::to_string(&ledger).unwrap();
        let back: PrivacyLedger = serde_json::from_str(&json).unwrap();
        assert_eq!(back.recompute().unwrap(), ledger);
        assert_eq!(back, ledger);
    }

    #[test]
    fn heterogeneous_never_exceeds_sigma_base_accounting() {
        let q = 0.02;
        let orders = default_orders();
        let sigmas = [1.0, 0.7, 1.0, 0.85];
        let het = heterogeneous_eps(q, &sigmas, &orders, 1e-5)
            .unwrap()
            .unwrap();
        let at_min = rdp_to_eps(&rdp_curve(q, 0.7, &orders).unwrap(), 4, 1e-5)
            .unwrap()
            .0;
        let at_max = rdp_to_eps(&rdp_curve(q, 1.0, &orders).unwrap(), 4, 1e-5)
            .unwrap()
            .0;
        assert!(het >= at_max && het <= at_min);
        assert_eq!(heterogeneous_eps(q, &[], &orders, 1e-5).unwrap(), None);
    }
}
