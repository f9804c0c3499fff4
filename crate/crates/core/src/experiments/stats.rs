use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

use crate::error::{Error, Result};

/// Exact two-sided sign test of `P(ρ̂ = +1) = P(ρ̂ = -1)`, conditioning on the
/// number of boundary-correlation outcomes `n_plus + n_minus`.
pub fn sign_test_plus_vs_minus(n_plus: u64, n_minus: u64) -> Result<f64> {
    let n = n_plus + n_minus;
    if n == 0 {
        return Err(Error::invalid("sign test needs at least one boundary-correlation outcome"));
    }
    let b = Binomial::new(0.5, n).expect("valid binomial");
    let k = n_plus.min(n_minus);
    // By symmetry the two tails are equal.
    Ok((2.0 * b.cdf(k)).min(1.0))
}

/// Two-sided pooled z test of equal proportions `x1/n1` vs `x2/n2`.
pub fn two_proportion_test(x1: u64, n1: u64, x2: u64, n2: u64) -> Result<f64> {
    if n1 == 0 || n2 == 0 || x1 > n1 || x2 > n2 {
        return Err(Error::invalid("two-proportion test needs 0 <= x <= n and n >= 1"));
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let pooled = (x1 + x2) as f64 / (n1f + n2f);
    let var = pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f);
    if var == 0.0 {
        return Ok(1.0);
    }
    let z = (x1 as f64 / n1f - x2 as f64 / n2f) / var.sqrt();
    Ok(2.0 * Normal::standard().cdf(-z.abs()))
}

/// Cochran–Armitage test for a linear trend in proportions `x_k / n_k`
/// across ordered groups with scores `scores[k]`. Two-sided p-value.
pub fn cochran_armitage_trend(counts: &[(u64, u64)], scores: &[f64]) -> Result<f64> {
    if counts.len() != scores.len() || counts.len() < 2 {
        return Err(Error::invalid("trend test needs at least two groups with one score each"));
    }
    let n: f64 = counts.iter().map(|c| c.1 as f64).sum();
    let x: f64 = counts.iter().map(|c| c.0 as f64).sum();
    if n == 0.0 {
        return Err(Error::invalid("trend test needs observations"));
    }
    let p = x / n;
    let s_bar: f64 = counts.iter().zip(scores).map(|(c, s)| c.1 as f64 * s).sum::<f64>() / n;
    let t: f64 = counts.iter().zip(scores).map(|(c, s)| c.0 as f64 * (s - s_bar)).sum();
    let var = p * (1.0 - p) * counts.iter().zip(scores).map(|(c, s)| c.1 as f64 * (s - s_bar).powi(2)).sum::<f64>();
    if var == 0.0 {
        return Ok(1.0);
    }
    Ok(2.0 * Normal::standard().cdf(-(t / var.sqrt()).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test_plus_vs_minus(10, 10).unwrap(), 1.0);
        let p = sign_test_plus_vs_minus(20, 5).unwrap();
        // 2 * sum_{k>=20} C(25,k) / 2^25
        let tail: f64 = (20..=25u32)
            .map(|k| {
                let c: f64 = (0..k).map(|i| (25 - i) as f64 / (k - i) as f64).product();
                c / 2f64.powi(25)
            })
            .sum();
        assert!((p - 2.0 * tail).abs() < 1e-12);
        assert!((p - 0.0041).abs() < 5e-5);
        assert!(sign_test_plus_vs_minus(98, 55).unwrap() < 0.001);
        assert!(sign_test_plus_vs_minus(0, 0).is_err());
    }

    #[test]
    fn proportion_tests() {
        assert!(two_proportion_test(40, 100, 40, 100).unwrap() > 0.99);
        assert!(two_proportion_test(10, 400, 60, 400).unwrap() < 1e-6);
        assert_eq!(two_proportion_test(0, 10, 0, 10).unwrap(), 1.0);
        let flat = [(80, 100), (80, 100), (80, 100)];
        assert!(cochran_armitage_trend(&flat, &[0.0, 1.0, 2.0]).unwrap() > 0.99);
        let rising = [(10, 100), (30, 100), (50, 100)];
        assert!(cochran_armitage_trend(&rising, &[0.0, 1.0, 2.0]).unwrap() < 1e-6);
    }
}
