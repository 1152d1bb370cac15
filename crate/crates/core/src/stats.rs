//! Small statistics toolkit for the verification harness.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

/// Two-sided level matching a 3σ normal band.
pub const THREE_SIGMA_ALPHA: f64 = 0.0027;

/// Below this many trials binomial bands come from exact quantiles.
pub const EXACT_BINOMIAL_BELOW: u64 = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinomialBand {
    pub successes: u64,
    pub trials: u64,
    pub p0: f64,
    pub estimate: f64,
    /// Acceptance region for the success count.
    pub lo: u64,
    pub hi: u64,
    pub z: f64,
    pub exact: bool,
    pub pass: bool,
}

/// Test `successes ~ Bin(trials, p0)` at the 3σ level.
pub fn binomial_band(successes: u64, trials: u64, p0: f64) -> BinomialBand {
    let n = trials as f64;
    let sigma = (p0 * (1.0 - p0) * n).sqrt();
    let z = if sigma > 0.0 { (successes as f64 - p0 * n) / sigma } else { 0.0 };
    let estimate = if trials > 0 { successes as f64 / n } else { f64::NAN };
    let (lo, hi, exact) = if p0 <= 0.0 || p0 >= 1.0 || trials == 0 {
        let k = if p0 >= 1.0 { trials } else { 0 };
        (k, k, true)
    } else if trials < EXACT_BINOMIAL_BELOW {
        let b = Binomial::new(p0, trials).expect("valid binomial");
        (b.inverse_cdf(THREE_SIGMA_ALPHA / 2.0), b.inverse_cdf(1.0 - THREE_SIGMA_ALPHA / 2.0), true)
    } else {
        let lo = (p0 * n - 3.0 * sigma).ceil().max(0.0) as u64;
        let hi = (p0 * n + 3.0 * sigma).floor().min(n) as u64;
        (lo, hi, false)
    };
    BinomialBand { successes, trials, p0, estimate, lo, hi, z, exact, pass: lo <= successes && successes <= hi }
}

/// Two-sided normal p-value of a z score.
pub fn normal_p_value(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    2.0 * (1.0 - n.cdf(z.abs()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
}

pub fn mean_estimate(xs: &[f64]) -> MeanEstimate {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
    MeanEstimate { n, mean, sd: var.sqrt(), se: (var / n as f64).sqrt() }
}

/// Kolmogorov–Smirnov statistic against U(0,1) and its asymptotic p-value.
pub fn ks_uniform(samples: &[f64]) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max);
    (d, kolmogorov_p(d, xs.len()))
}

/// `P(D_n > d)` by the Kolmogorov series with the Stephens correction.
pub fn kolmogorov_p(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Regression {
    pub n: usize,
    pub slope: f64,
    pub se: f64,
}

/// Least squares through the origin, `y ≈ b x`, with the residual standard error of `b`.
pub fn regression_through_origin(x: &[f64], y: &[f64]) -> Regression {
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let slope = sxy / sxx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a).powi(2)).sum();
    let n = x.len();
    let se = (rss / (n.max(2) - 1) as f64 / sxx).sqrt();
    Regression { n, slope, se }
}

/// Plug-in conditional mutual information `I(A; B | S)` in nats.
pub fn conditional_mi(a: &[u32], b: &[u32], strata: &[u64]) -> f64 {
    let n = a.len() as f64;
    let mut joint: BTreeMap<(u64, u32, u32), f64> = BTreeMap::new();
    let mut sa: BTreeMap<(u64, u32), f64> = BTreeMap::new();
    let mut sb: BTreeMap<(u64, u32), f64> = BTreeMap::new();
    let mut s: BTreeMap<u64, f64> = BTreeMap::new();
    for i in 0..a.len() {
        *joint.entry((strata[i], a[i], b[i])).or_default() += 1.0;
        *sa.entry((strata[i], a[i])).or_default() += 1.0;
        *sb.entry((strata[i], b[i])).or_default() += 1.0;
        *s.entry(strata[i]).or_default() += 1.0;
    }
    joint
        .iter()
        .map(|(&(k, x, y), &c)| c / n * (c * s[&k] / (sa[&(k, x)] * sb[&(k, y)])).ln())
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PermutationTest {
    pub statistic: f64,
    pub null_mean: f64,
    pub null_q99: f64,
    pub permutations: usize,
    pub p_value: f64,
}

/// Conditional MI against the null of `b` shuffled within each stratum.
pub fn permutation_cmi(a: &[u32], b: &[u32], strata: &[u64], permutations: usize, seed: u64) -> PermutationTest {
    let statistic = conditional_mi(a, b, strata);
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &k) in strata.iter().enumerate() {
        groups.entry(k).or_default().push(i);
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut shuffled = b.to_vec();
    let mut null = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        for idx in groups.values() {
            let mut vals: Vec<u32> = idx.iter().map(|&i| b[i]).collect();
            vals.shuffle(&mut rng);
            for (&i, v) in idx.iter().zip(vals) {
                shuffled[i] = v;
            }
        }
        null.push(conditional_mi(a, &shuffled, strata));
    }
    let exceed = null.iter().filter(|&&x| x >= statistic - 1e-12).count();
    let mut sorted = null.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    PermutationTest {
        statistic,
        null_mean: null.iter().sum::<f64>() / permutations as f64,
        null_q99: sorted[((permutations as f64 * 0.99) as usize).min(permutations - 1)],
        permutations,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
    }
}

/// Holm step-down: which hypotheses are rejected at family level `alpha`.
pub fn holm(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].partial_cmp(&p_values[j]).unwrap());
    let mut rejected = vec![false; m];
    for (rank, &i) in order.iter().enumerate() {
        if p_values[i] <= alpha / (m - rank) as f64 {
            rejected[i] = true;
        } else {
            break;
        }
    }
    rejected
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn binomial_band_exact_and_normal() {
        let b = binomial_band(500, 1000, 0.5);
        assert!(b.exact && b.pass);
        // exact 0.135% quantiles of Bin(1000, 1/2)
        assert!(b.lo >= 450 && b.lo <= 455 && b.hi >= 545 && b.hi <= 550, "{b:?}");
        assert!(!binomial_band(560, 1000, 0.5).pass);
        let b = binomial_band(50_000, 100_000, 0.5);
        assert!(!b.exact && b.pass);
        assert!(binomial_band(0, 10, 0.0).pass);
        assert!(!binomial_band(1, 10, 0.0).pass);
    }

    #[test]
    fn p_values() {
        assert!((normal_p_value(3.0) - THREE_SIGMA_ALPHA).abs() < 1e-4);
        assert!((kolmogorov_p(1.36 / 100.0, 10_000) - 0.05).abs() < 0.005);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let xs: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
        assert!(ks_uniform(&xs).1 > 0.001);
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        assert!(ks_uniform(&sq).1 < 1e-6);
    }

    #[test]
    fn regression_recovers_slope() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let x: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>() - 0.5).collect();
        let y: Vec<f64> = x.iter().map(|a| 2.0 * a + 0.1 * (rng.random::<f64>() - 0.5)).collect();
        let r = regression_through_origin(&x, &y);
        assert!((r.slope - 2.0).abs() < 4.0 * r.se);
    }

    #[test]
    fn cmi_detects_dependence_only_when_present() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let n = 4000;
        let s: Vec<u64> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let a: Vec<u32> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let b_ind: Vec<u32> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let b_dep: Vec<u32> = a.iter().map(|&x| if rng.random::<f64>() < 0.8 { x } else { 1 - x }).collect();
        assert!(permutation_cmi(&a, &b_ind, &s, 200, 9).p_value > 0.01);
        assert!(permutation_cmi(&a, &b_dep, &s, 200, 9).p_value < 0.01);
        // dependence explained by the stratum is not conditional dependence
        let a2: Vec<u32> = s.iter().map(|&k| (k % 2) as u32).collect();
        let b2: Vec<u32> = s.iter().map(|&k| (k / 2 + k % 2) as u32 % 2).collect();
        assert!(conditional_mi(&a2, &b2, &s).abs() < 1e-12);
    }

    #[test]
    fn holm_step_down() {
        assert_eq!(holm(&[0.001, 0.03, 0.04], 0.05), vec![true, false, false]);
        assert_eq!(holm(&[0.01, 0.02, 0.03], 0.1), vec![true, true, true]);
    }
}
