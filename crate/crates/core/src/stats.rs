//! Small statistical toolkit shared by the estimators.

use serde::{Deserialize, Serialize};

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn sum(xs: &[f64]) -> f64 {
    xs.iter().copied().collect::<KahanSum>().total()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    sum(xs) / xs.len() as f64
}

/// Unbiased sample variance (0 for fewer than two samples).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).collect::<KahanSum>().total() / (xs.len() - 1) as f64
}

/// Mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let se = if xs.len() < 2 {
        0.0
    } else {
        (variance(xs) / xs.len() as f64).sqrt()
    };
    (m, se)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = KahanSum::new();
    let mut sxx = KahanSum::new();
    let mut syy = KahanSum::new();
    for (x, y) in xs.iter().zip(ys) {
        sxy.add((x - mx) * (y - my));
        sxx.add((x - mx) * (x - mx));
        syy.add((y - my) * (y - my));
    }
    sxy.total() / (sxx.total() * syy.total()).sqrt()
}

/// 95% two-sided normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `n` trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Proportion {
    pub fn wilson(successes: u64, trials: u64, z: f64) -> Self {
        assert!(successes <= trials);
        if trials == 0 {
            return Self {
                successes,
                trials,
                estimate: f64::NAN,
                ci_low: 0.0,
                ci_high: 1.0,
            };
        }
        let n = trials as f64;
        let p = successes as f64 / n;
        let z2 = z * z;
        let denom = 1.0 + z2 / n;
        let centre = (p + z2 / (2.0 * n)) / denom;
        let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        Self {
            successes,
            trials,
            estimate: p,
            ci_low: if successes == 0 { 0.0 } else { (centre - half).max(0.0) },
            ci_high: if successes == trials { 1.0 } else { (centre + half).min(1.0) },
        }
    }

    pub fn wilson95(successes: u64, trials: u64) -> Self {
        Self::wilson(successes, trials, Z95)
    }

    /// Binomial standard error of the point estimate.
    pub fn se(&self) -> f64 {
        if self.trials == 0 {
            return f64::NAN;
        }
        (self.estimate * (1.0 - self.estimate) / self.trials as f64).sqrt()
    }

    pub fn overlaps(&self, other: &Proportion) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_x - F_y|`.
pub fn ks_statistic(xs: &[f64], ys: &[f64]) -> f64 {
    let mut a: Vec<f64> = xs.to_vec();
    let mut b: Vec<f64> = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        // The alternating series converges badly here and the value is ~1.
        return 1.0;
    }
    let mut total = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        total += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * total).clamp(0.0, 1.0)
}

/// How a p-value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Asymptotic,
    Exact,
    Permutation,
}

/// Two-sample KS p-value: exact lattice-path enumeration when both samples are
/// small, the asymptotic Kolmogorov law otherwise.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> (f64, f64, PValueMethod) {
    let d = ks_statistic(xs, ys);
    let (n, m) = (xs.len(), ys.len());
    if n < 30 || m < 30 {
        (d, ks_exact_sf(n, m, d), PValueMethod::Exact)
    } else {
        let ne = (n * m) as f64 / (n + m) as f64;
        let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
        (d, kolmogorov_sf(lambda), PValueMethod::Asymptotic)
    }
}

/// `P(D >= d)` under H0 for sample sizes `n`, `m`, counting monotone lattice
/// paths that stay strictly inside the band `|i/n - j/m| < d`.
pub fn ks_exact_sf(n: usize, m: usize, d: f64) -> f64 {
    if n == 0 || m == 0 {
        return 1.0;
    }
    let (nf, mf) = (n as f64, m as f64);
    // Guard against rounding: treat values within 1e-12 of d as reaching it.
    let inside = |i: usize, j: usize| ((i as f64 / nf) - (j as f64 / mf)).abs() < d - 1e-12;
    // Path probabilities under uniform random interleaving.
    let mut row = vec![0.0f64; m + 1];
    for i in 0..=n {
        for j in 0..=m {
            let val = if i == 0 && j == 0 {
                1.0
            } else {
                let mut v = 0.0;
                if i > 0 {
                    // came from (i - 1, j): prob of picking from x-sample
                    v += row[j] * (n - (i - 1)) as f64 / ((n - (i - 1)) + (m - j)) as f64;
                }
                if j > 0 {
                    v += row[j - 1] * (m - (j - 1)) as f64 / ((n - i) + (m - (j - 1))) as f64;
                }
                v
            };
            row[j] = if inside(i, j) { val } else { 0.0 };
        }
    }
    (1.0 - row[m]).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_order_insensitive() {
        let xs: Vec<f64> = (0..10_000).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let mut rev = xs.clone();
        rev.reverse();
        let a = sum(&xs);
        let b = sum(&rev);
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn wilson_reference_values() {
        // 98/100: centre (0.98 + 1.92/100)/(1 + 3.84/100), half-width from the score formula.
        let p = Proportion::wilson95(98, 100);
        assert!((p.ci_low - 0.92995).abs() < 1e-4, "{p:?}");
        assert!((p.ci_high - 0.99449).abs() < 1e-4, "{p:?}");
        let z = Proportion::wilson95(0, 200);
        assert_eq!(z.ci_low, 0.0);
        assert!((z.ci_high - 0.018846).abs() < 1e-5);
    }

    #[test]
    fn ks_identical_samples() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert_eq!(ks_statistic(&xs, &xs), 0.0);
        let (_, p, _) = ks_two_sample(&xs, &xs);
        assert!(p > 0.99);
    }

    #[test]
    fn ks_separated_samples() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let ys: Vec<f64> = (0..40).map(|i| 100.0 + i as f64).collect();
        let (d, p, method) = ks_two_sample(&xs, &ys);
        assert_eq!(d, 1.0);
        assert!(p < 1e-10);
        assert_eq!(method, PValueMethod::Asymptotic);
    }

    #[test]
    fn ks_exact_matches_enumeration() {
        // Brute force over all C(6,3) = 20 interleavings of two samples of size 3.
        let n = 3;
        let m = 3;
        let mut stats = Vec::new();
        for mask in 0u32..(1 << 6) {
            if mask.count_ones() != 3 {
                continue;
            }
            let (mut i, mut j, mut d) = (0, 0, 0.0f64);
            for bit in 0..6 {
                if mask & (1 << bit) != 0 {
                    i += 1
                } else {
                    j += 1
                }
                d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
            }
            stats.push(d);
        }
        for &d in &[1.0 / 3.0, 2.0 / 3.0, 1.0] {
            let brute = stats.iter().filter(|&&s| s >= d - 1e-12).count() as f64 / stats.len() as f64;
            assert!((ks_exact_sf(n, m, d) - brute).abs() < 1e-12, "d={d}");
        }
    }

    #[test]
    fn kolmogorov_reference() {
        // Classic 5% critical value 1.358.
        assert!((kolmogorov_sf(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_sf(1.628) - 0.01).abs() < 1e-3);
    }
}
