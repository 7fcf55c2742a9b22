//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! Per-step RDP at order α is `ln(A_α) / (α − 1)` where
//! `A_α = E_{z~N(0,σ²)} [((1 − q) + q·exp((2z − 1)/(2σ²)))^α]`.
//! Integer orders use the finite binomial expansion; fractional orders use the
//! two-sided erfc series. Composition over T steps multiplies by T and the
//! conversion to (ε, δ) is `min_α T·rdp(α) + ln(1/δ)/(α − 1)`.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::DpError;

/// 1.25, 1.5, …, 64.
pub fn default_orders() -> Vec<f64> {
    (5..=256).map(|i| i as f64 * 0.25).collect()
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// ln(e^a − e^b) for a ≥ b.
fn log_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a <= b {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// ln(erfc(x)), with an asymptotic expansion where erfc underflows.
fn log_erfc(x: f64) -> f64 {
    if x < 20.0 {
        return erfc(x).ln();
    }
    let x2 = x * x;
    let series = 1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) - 15.0 / (8.0 * x2 * x2 * x2);
    -x2 - x.ln() - 0.5 * std::f64::consts::PI.ln() + series.ln()
}

fn ln_binom(n: f64, k: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

fn log_a_int(q: f64, sigma: f64, alpha: u64) -> f64 {
    let mut log_a = f64::NEG_INFINITY;
    for i in 0..=alpha {
        let fi = i as f64;
        let coef = ln_binom(alpha as f64, fi) + fi * q.ln() + (alpha - i) as f64 * (1.0 - q).ln();
        log_a = log_add(log_a, coef + (fi * fi - fi) / (2.0 * sigma * sigma));
    }
    log_a
}

fn log_a_frac(q: f64, sigma: f64, alpha: f64) -> f64 {
    let (mut log_a0, mut log_a1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let sqrt2s = std::f64::consts::SQRT_2 * sigma;
    // generalized binomial coefficient C(alpha, i), tracked by sign and log-magnitude
    let mut log_coef = 0.0f64;
    let mut positive = true;
    let mut i = 0u64;
    loop {
        let fi = i as f64;
        let j = alpha - fi;
        let log_t0 = log_coef + fi * q.ln() + j * (1.0 - q).ln();
        let log_t1 = log_coef + j * q.ln() + fi * (1.0 - q).ln();
        let log_e0 = 0.5f64.ln() + log_erfc((fi - z0) / sqrt2s);
        let log_e1 = 0.5f64.ln() + log_erfc((z0 - j) / sqrt2s);
        let log_s0 = log_t0 + (fi * fi - fi) / (2.0 * sigma * sigma) + log_e0;
        let log_s1 = log_t1 + (j * j - j) / (2.0 * sigma * sigma) + log_e1;
        if positive {
            log_a0 = log_add(log_a0, log_s0);
            log_a1 = log_add(log_a1, log_s1);
        } else {
            log_a0 = log_sub(log_a0, log_s0);
            log_a1 = log_sub(log_a1, log_s1);
        }
        if log_s0.max(log_s1) < -30.0 || i > 10_000 {
            break;
        }
        // C(alpha, i+1) = C(alpha, i) * (alpha - i) / (i + 1)
        let ratio = (alpha - fi) / (fi + 1.0);
        if ratio == 0.0 {
            break;
        }
        if ratio < 0.0 {
            positive = !positive;
        }
        log_coef += ratio.abs().ln();
        i += 1;
    }
    log_add(log_a0, log_a1)
}

/// Per-step RDP ε(α) of the subsampled Gaussian with sampling rate `q`.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: f64) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    if q >= 1.0 {
        return alpha / (2.0 * sigma * sigma);
    }
    let log_a = if alpha.fract() == 0.0 {
        log_a_int(q, sigma, alpha as u64)
    } else {
        log_a_frac(q, sigma, alpha)
    };
    log_a / (alpha - 1.0)
}

/// ε after `steps` compositions, and the minimizing order.
pub fn epsilon_from_rdp(orders: &[f64], rdp_per_step: &[f64], steps: u64, delta: f64) -> (f64, f64) {
    let mut best = (f64::INFINITY, f64::NAN);
    for (&alpha, &r) in orders.iter().zip(rdp_per_step) {
        let eps = steps as f64 * r + (1.0 / delta).ln() / (alpha - 1.0);
        if eps < best.0 {
            best = (eps, alpha);
        }
    }
    best
}

/// Tracks composed privacy loss of repeated subsampled Gaussian steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub steps: u64,
    pub sampling_rate: f64,
    pub noise_multiplier: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub best_order: Option<f64>,
    pub orders: Vec<f64>,
    #[serde(skip)]
    rdp: Vec<f64>,
}

impl PrivacyLedger {
    pub fn new(sampling_rate: f64, noise_multiplier: f64, delta: f64) -> Result<Self, DpError> {
        Self::with_orders(sampling_rate, noise_multiplier, delta, default_orders())
    }

    pub fn with_orders(
        sampling_rate: f64,
        noise_multiplier: f64,
        delta: f64,
        orders: Vec<f64>,
    ) -> Result<Self, DpError> {
        if !(0.0..=1.0).contains(&sampling_rate) {
            return Err(DpError::InvalidConfig(format!("sampling rate {sampling_rate} outside [0, 1]")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(DpError::InvalidConfig(format!("delta {delta} outside (0, 1)")));
        }
        if noise_multiplier < 0.0 {
            return Err(DpError::InvalidConfig("negative noise multiplier".into()));
        }
        let rdp = orders
            .iter()
            .map(|&a| rdp_subsampled_gaussian(sampling_rate, noise_multiplier, a))
            .collect();
        Ok(Self {
            steps: 0,
            sampling_rate,
            noise_multiplier,
            delta,
            epsilon: 0.0,
            best_order: None,
            orders,
            rdp,
        })
    }

    /// ε the ledger would report after `steps` total steps.
    pub fn epsilon_at(&self, steps: u64) -> Result<f64, DpError> {
        if self.noise_multiplier == 0.0 {
            return Err(DpError::SigmaZero);
        }
        if steps == 0 {
            return Ok(0.0);
        }
        Ok(epsilon_from_rdp(&self.orders, &self.rdp, steps, self.delta).0)
    }

    pub fn record_step(&mut self) -> Result<f64, DpError> {
        self.steps += 1;
        let (eps, order) = if self.noise_multiplier == 0.0 {
            (f64::INFINITY, f64::NAN)
        } else {
            epsilon_from_rdp(&self.orders, &self.rdp, self.steps, self.delta)
        };
        self.epsilon = eps;
        self.best_order = order.is_finite().then_some(order);
        Ok(eps)
    }
}

/// ε(q, σ, T, δ) on the default order grid.
pub fn account_epsilon(sampling_rate: f64, noise_multiplier: f64, steps: u64, delta: f64) -> Result<f64, DpError> {
    PrivacyLedger::new(sampling_rate, noise_multiplier, delta)?.epsilon_at(steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Golden-section minimization of α/(2σ²)·T + ln(1/δ)/(α−1), independent of the order grid.
    fn full_batch_oracle(sigma: f64, steps: f64, delta: f64) -> f64 {
        let f = |a: f64| steps * a / (2.0 * sigma * sigma) + (1.0 / delta).ln() / (a - 1.0);
        let (mut lo, mut hi) = (1.0 + 1e-9, 1e4);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..300 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if f(a) < f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        f(0.5 * (lo + hi))
    }

    #[test]
    fn full_batch_single_step() {
        let oracle = full_batch_oracle(1.0, 1.0, 1e-5);
        assert!((oracle - 5.2985).abs() < 1e-3, "{oracle}");
        let eps = account_epsilon(1.0, 1.0, 1, 1e-5).unwrap();
        assert!((eps - oracle).abs() < 0.01, "{eps} vs {oracle}");
        assert!((eps - 5.30).abs() < 0.01);
    }

    #[test]
    fn sigma_zero_is_explicit() {
        assert!(matches!(account_epsilon(0.1, 0.0, 1, 1e-5), Err(DpError::SigmaZero)));
    }

    #[test]
    fn huge_sigma_goes_to_zero() {
        let eps = account_epsilon(0.1, 1e6, 1000, 1e-5).unwrap();
        // the conversion term ln(1/δ)/(α−1) bottoms out at the largest order
        assert!(eps < (1e5f64).ln() / 63.0 + 1e-6);
        let mut prev = f64::INFINITY;
        for sigma in [0.5, 1.0, 2.0, 8.0, 64.0, 1e3, 1e6] {
            let e = account_epsilon(0.1, sigma, 1000, 1e-5).unwrap();
            assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn doubling_steps_increases_epsilon() {
        for q in [0.01, 0.2, 1.0] {
            let a = account_epsilon(q, 1.1, 100, 1e-5).unwrap();
            let b = account_epsilon(q, 1.1, 200, 1e-5).unwrap();
            assert!(b > a, "q={q}: {a} {b}");
        }
    }

    #[test]
    fn integer_and_fractional_paths_agree_near_integers() {
        let (q, s) = (0.05, 1.3);
        for a in [2.0, 3.0, 8.0] {
            let exact = rdp_subsampled_gaussian(q, s, a);
            let near = rdp_subsampled_gaussian(q, s, a + 1e-7);
            assert!((exact - near).abs() / exact < 1e-4, "{a}: {exact} {near}");
        }
    }

    #[test]
    fn subsampling_never_exceeds_full_batch() {
        for a in default_orders() {
            assert!(rdp_subsampled_gaussian(0.3, 1.0, a) <= a / 2.0 + 1e-12);
        }
    }

    #[test]
    fn ledger_is_monotone() {
        let mut l = PrivacyLedger::new(0.25, 1.0, 1e-5).unwrap();
        let mut prev = 0.0;
        for _ in 0..50 {
            let e = l.record_step().unwrap();
            assert!(e >= prev);
            prev = e;
        }
        assert_eq!(l.steps, 50);
    }
}
