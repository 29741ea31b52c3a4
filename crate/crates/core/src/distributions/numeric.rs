//! Scalar helpers that stay finite in the tails.

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln σ(x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// `ln(1 - e^{-d})` for `d > 0`.
pub fn log1mexp(d: f64) -> f64 {
    if d <= std::f64::consts::LN_2 {
        (-(-d).exp_m1()).ln()
    } else {
        (-(-d).exp()).ln_1p()
    }
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let z = logsumexp(xs);
    xs.iter().map(|&x| x - z).collect()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    log_softmax(xs).into_iter().map(f64::exp).collect()
}

/// `ln(σ(hi) - σ(lo))` for standardized bounds `lo <= hi`, either of which
/// may be infinite.
pub fn log_sigmoid_diff(hi: f64, lo: f64) -> f64 {
    if hi <= lo {
        return f64::NEG_INFINITY;
    }
    match (lo == f64::NEG_INFINITY, hi == f64::INFINITY) {
        (true, true) => 0.0,
        (true, false) => log_sigmoid(hi),
        (false, true) => log_sigmoid(-lo),
        (false, false) => log_sigmoid(hi) + log_sigmoid(-lo) + log1mexp(hi - lo),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sigmoid_diff_matches_direct() {
        for &(a, b) in &[(0.5, -0.5), (3.0, 1.0), (-2.0, -4.0), (0.1, 0.0999)] {
            let direct = (sigmoid(a) - sigmoid(b)).ln();
            assert!((log_sigmoid_diff(a, b) - direct).abs() < 1e-9, "{a} {b}");
        }
        // far tail where the direct form cancels to zero
        let v = log_sigmoid_diff(60.5, 59.5);
        assert!(v.is_finite() && v < -50.0);
        assert_eq!(log_sigmoid_diff(f64::INFINITY, f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn logsumexp_stable() {
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn log1mexp_branches_agree() {
        let d = std::f64::consts::LN_2;
        let a = (-(-d).exp_m1()).ln();
        let b = (-(-d).exp()).ln_1p();
        assert!((a - b).abs() < 1e-15);
    }
}
