//! Small numeric helpers shared across modules.

use std::f64::consts::LN_2;

/// `ln(sum(exp(xs)))`, returning `-inf` for an empty or all-`-inf` input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + s.ln()
}

/// Adds two log-domain values.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn nats_to_bits(x: f64) -> f64 {
    x / LN_2
}

/// Surprisal in bits of a probability.
pub fn surprisal_bits(p: f64) -> f64 {
    -p.log2()
}

/// Total-variation distance between two distributions on the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Exponentiates and normalizes log weights.
pub fn normalize_log_weights(log_w: &[f64]) -> Vec<f64> {
    let z = logsumexp(log_w);
    log_w.iter().map(|w| (w - z).exp()).collect()
}
