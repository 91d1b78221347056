//! Small numeric helpers shared by the policy and objective code.

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Entropy (nats) of the distribution given by log-probabilities.
pub fn entropy(log_probs: &[f64]) -> f64 {
    -log_probs.iter().map(|&lp| lp.exp() * lp).sum::<f64>()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `y += a * x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one_for_extreme_logits() {
        for logits in [vec![0.0; 4], vec![800.0, -800.0, 3.0], vec![-1e3, -1e3 + 1.0]] {
            let s: f64 = softmax(&logits).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_sigmoid_matches_naive_in_safe_range() {
        for x in [-30.0, -2.0, 0.0, 0.7, 25.0] {
            assert!((log_sigmoid(x) - sigmoid(x).ln()).abs() < 1e-12);
        }
        assert!(log_sigmoid(-1000.0).is_finite());
        assert_eq!(log_sigmoid(1000.0), 0.0);
    }

    #[test]
    fn uniform_entropy_is_log_n() {
        let lp = log_softmax(&[0.0; 4]);
        assert!((entropy(&lp) - 4f64.ln()).abs() < 1e-12);
    }
}
