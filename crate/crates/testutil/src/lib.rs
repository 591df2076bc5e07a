//! Independent reference oracles for the test suites.
//!
//! Everything here recomputes quantities the main crate also produces,
//! through a deliberately different route: exhaustive enumeration instead
//! of dynamic programming, Monte-Carlo integration instead of closed
//! forms. Nothing in this crate touches the implementation under test.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Inverse standard-normal CDF (Acklam's rational approximation,
/// relative error below 1.2e-9 over the open unit interval).
pub fn norm_inv_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "p must be in (0,1), got {p}");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// `n` stratified standard-normal samples: one jittered draw per
/// equiprobable stratum. Unbiased like plain Monte Carlo, with far lower
/// integration error for smooth integrands.
pub fn stratified_normal_samples(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let u: f64 = rng.random();
            norm_inv_cdf((i as f64 + u) / n as f64)
        })
        .collect()
}

/// Monte-Carlo estimate of `KL(N(mu, e^logvar) || N(0,1))` from `n`
/// seeded stratified samples of the posterior: the sample mean of
/// `log q(z) - log p(z) = 0.5 (z^2 - u^2 - logvar)` with `z = mu + sigma u`.
pub fn mc_kl_to_standard_normal(mu: f64, logvar: f64, n: usize, seed: u64) -> f64 {
    let sigma = (0.5 * logvar).exp();
    let mut total = 0.0;
    for u in stratified_normal_samples(seed, n) {
        let z = mu + sigma * u;
        total += 0.5 * (z * z - u * u - logvar);
    }
    total / n as f64
}

/// Minimum dynamic-time-warping cost by exhaustive enumeration of every
/// monotonic path with steps `{(1,0), (0,1), (1,1)}`. Costs accumulate
/// start-to-end (left fold), matching the programmed recurrence term for
/// term, so optimal costs agree bit-exactly. Exponential; keep sequences
/// short.
pub fn brute_force_dtw_cost(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    dist: &dyn Fn(&[f64], &[f64]) -> f64,
) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    fn explore(
        a: &[Vec<f64>],
        b: &[Vec<f64>],
        dist: &dyn Fn(&[f64], &[f64]) -> f64,
        i: usize,
        j: usize,
        acc: f64,
        best: &mut f64,
    ) {
        let acc = acc + dist(&a[i], &b[j]);
        if i + 1 == a.len() && j + 1 == b.len() {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            explore(a, b, dist, i + 1, j + 1, acc, best);
        }
        if i + 1 < a.len() {
            explore(a, b, dist, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            explore(a, b, dist, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    explore(a, b, dist, 0, 0, 0.0, &mut best);
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inv_cdf_hits_known_quantiles() {
        assert!(norm_inv_cdf(0.5).abs() < 1e-9);
        // Phi(1.959964) ~ 0.975
        assert!((norm_inv_cdf(0.975) - 1.959963984540054).abs() < 1e-7);
        assert!((norm_inv_cdf(0.025) + 1.959963984540054).abs() < 1e-7);
    }

    #[test]
    fn stratified_samples_have_standard_moments() {
        let xs = stratified_normal_samples(1, 100_000);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-3, "var {var}");
    }

    #[test]
    fn mc_kl_matches_hand_closed_form() {
        // KL(N(1,1) || N(0,1)) = 0.5
        let est = mc_kl_to_standard_normal(1.0, 0.0, 100_000, 7);
        assert!((est - 0.5).abs() / 0.5 < 0.01, "estimate {est}");
    }

    #[test]
    fn brute_force_handles_hand_example() {
        let l2 = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
        let a = vec![vec![0.0], vec![1.0]];
        let b = vec![vec![0.0], vec![1.0], vec![1.0]];
        assert_eq!(brute_force_dtw_cost(&a, &b, &l2), 0.0);
    }
}
