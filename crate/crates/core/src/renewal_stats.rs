//! Velocity estimators, escape classification and statistical checks on
//! regeneration increments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling_regen::{DStatus, RegenerationRecord};
use crate::env_field::CoefficientField;
use crate::error::{Error, Result};
use crate::path_events::{check_direction, Levels};
use crate::rng::{derive_key, tag, CounterRng};
use crate::sde_sim::{simulate_path, SimConfig, Trajectory};
use crate::stats::{self, KahanSum, PValueMethod, Proportion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityMethod {
    Direct,
    Renewal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityEstimate {
    /// Speed along `l`.
    pub estimate: f64,
    pub se: f64,
    pub n_effective: usize,
    pub method: VelocityMethod,
    /// Mean velocity vector, when the method provides one.
    pub vector: Option<Vec<f64>>,
}

impl VelocityEstimate {
    /// `|a − b| ≤ k · √(se_a² + se_b²)`.
    pub fn agrees_with(&self, other: &VelocityEstimate, k: f64) -> bool {
        (self.estimate - other.estimate).abs() <= k * self.se.hypot(other.se)
    }

    pub fn within(&self, value: f64, k: f64) -> bool {
        (self.estimate - value).abs() <= k * self.se
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean and SE of `l · (X_T − X_0) / T` over the ensemble.
pub fn velocity_direct(trajs: &[Trajectory], l: &[f64]) -> Result<VelocityEstimate> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::Argument("velocity needs at least one trajectory".into()))?;
    check_direction(l, first.dim())?;
    let horizon = first.horizon();
    if !(horizon > 0.0) {
        return Err(Error::Argument("velocity needs a positive horizon".into()));
    }
    if trajs.iter().any(|t| (t.horizon() - horizon).abs() > 1e-12 || t.dim() != first.dim()) {
        return Err(Error::Argument("trajectories must share horizon and dimension".into()));
    }
    let d = first.dim();
    let vels: Vec<Vec<f64>> = trajs
        .iter()
        .map(|t| t.end().iter().zip(t.start()).map(|(a, b)| (a - b) / horizon).collect())
        .collect();
    let along: Vec<f64> = vels.iter().map(|v| dot(v, l)).collect();
    let (m, se) = stats::mean_se(&along);
    let vector = (0..d).map(|j| stats::mean(&vels.iter().map(|v| v[j]).collect::<Vec<_>>())).collect();
    Ok(VelocityEstimate {
        estimate: m,
        se,
        n_effective: trajs.len(),
        method: VelocityMethod::Direct,
        vector: Some(vector),
    })
}

/// Ratio-of-sums speed `Σ l·ΔX / Σ Δτ` with a delta-method standard error.
pub fn velocity_from_increments(dl: &[f64], dtau: &[f64]) -> Result<VelocityEstimate> {
    assert_eq!(dl.len(), dtau.len());
    let n = dl.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "renewal velocity needs at least 2 uncensored increments, got {n}"
        )));
    }
    let sx = stats::sum(dl);
    let sy = stats::sum(dtau);
    let v = sx / sy;
    let (mx, my) = (sx / n as f64, sy / n as f64);
    // Residuals of the linearised ratio: (x − v y) / ȳ.
    let resid: KahanSum = dl
        .iter()
        .zip(dtau)
        .map(|(x, y)| {
            let r = (x - mx) - v * (y - my);
            r * r
        })
        .collect();
    let var = resid.total() / (n - 1) as f64 / (my * my) / n as f64;
    Ok(VelocityEstimate {
        estimate: v,
        se: var.max(0.0).sqrt(),
        n_effective: n,
        method: VelocityMethod::Renewal,
        vector: None,
    })
}

/// Pool the stationary increments `Z_k`, `k ≥ 1`, of every record.
pub fn pooled_increments(records: &[RegenerationRecord]) -> (Vec<f64>, Vec<f64>) {
    let mut dl = Vec::new();
    let mut dtau = Vec::new();
    for r in records {
        for z in r.stationary_increments() {
            dl.push(z.dl);
            dtau.push(z.dtau as f64);
        }
    }
    (dl, dtau)
}

/// Renewal speed along the direction the records were built with.
pub fn velocity_renewal(records: &[RegenerationRecord]) -> Result<VelocityEstimate> {
    let (dl, dtau) = pooled_increments(records);
    velocity_from_increments(&dl, &dtau)
}

/// Bootstrap SE of the renewal ratio, resampling whole records.
pub fn renewal_bootstrap_se(records: &[RegenerationRecord], resamples: usize, seed: u64) -> Result<f64> {
    let base = velocity_renewal(records)?;
    let rng = CounterRng::new(derive_key(seed, 0, tag::PERMUTATION));
    let n = records.len() as u64;
    let mut vals = Vec::with_capacity(resamples);
    for b in 0..resamples as u64 {
        let (mut sx, mut sy) = (KahanSum::new(), KahanSum::new());
        for i in 0..n {
            let r = &records[rng.below(b * n + i, n) as usize];
            for z in r.stationary_increments() {
                sx.add(z.dl);
                sy.add(z.dtau as f64);
            }
        }
        if sy.total() > 0.0 {
            vals.push(sx.total() / sy.total());
        }
    }
    if vals.len() < 2 {
        return Ok(base.se);
    }
    Ok(stats::variance(&vals).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscapeLabel {
    Plus,
    Minus,
    Oscillating,
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeClass {
    pub label: EscapeLabel,
    /// `l · (X_T − X_0)`.
    pub terminal: f64,
    /// Minimum relative level after first reaching `Θ/2` (if reached).
    pub tail_min: Option<f64>,
    /// Maximum relative level after first reaching `−Θ/2` (if reached).
    pub tail_max: Option<f64>,
    pub running_max: f64,
    pub running_min: f64,
    pub theta: f64,
    pub beta: f64,
}

/// Threshold proxy for `l · X_t → ±∞`.
///
/// `plus`: terminal relative level `≥ Θ` and, after first reaching `Θ/2`, the
/// level never falls to `Θ/2 − β`. `minus` mirrors this. `oscillating`: both
/// `±Θ/4` were reached otherwise. Anything else is `undecided`.
pub fn classify_escape(traj: &Trajectory, l: &[f64], theta: f64, beta: f64) -> Result<EscapeClass> {
    check_direction(l, traj.dim())?;
    if !(theta > 0.0) || !(beta >= 0.0) {
        return Err(Error::Argument("classifier needs Θ > 0 and β ≥ 0".into()));
    }
    let lv = Levels::new(traj, l);
    Ok(classify_levels(&lv, theta, beta))
}

pub(crate) fn classify_levels(lv: &Levels, theta: f64, beta: f64) -> EscapeClass {
    let x0 = lv.values()[0];
    let h = lv.horizon();
    let terminal = lv.values().last().unwrap() - x0;
    let running_max = lv.max_on(0.0, h) - x0;
    let running_min = lv.min_on(0.0, h) - x0;
    let tail_min = lv.first_at_or_above(0.0, x0 + theta / 2.0).map(|t| lv.min_on(t, h) - x0);
    let tail_max = lv.first_at_or_below(0.0, x0 - theta / 2.0).map(|t| lv.max_on(t, h) - x0);
    let floor = theta / 2.0 - beta;
    let label = if terminal >= theta && tail_min.is_some_and(|m| m > floor) {
        EscapeLabel::Plus
    } else if terminal <= -theta && tail_max.is_some_and(|m| m < -floor) {
        EscapeLabel::Minus
    } else if running_max >= theta / 4.0 && running_min <= -theta / 4.0 {
        EscapeLabel::Oscillating
    } else {
        EscapeLabel::Undecided
    };
    EscapeClass {
        label,
        terminal,
        tail_min,
        tail_max,
        running_max,
        running_min,
        theta,
        beta,
    }
}

/// Verdict margin: an interval "reaches" 0 or 1 when it comes within this distance.
pub const DICHOTOMY_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ConsistentWith0,
    ConsistentWith1,
    InconsistentWithDichotomy,
}

impl Verdict {
    pub fn describe(&self) -> &'static str {
        match self {
            Verdict::ConsistentWith0 => "consistent with 0",
            Verdict::ConsistentWith1 => "consistent with 1",
            Verdict::InconsistentWithDichotomy => "inconsistent with dichotomy",
        }
    }
}

/// Verdict on a proportion with margin `eta`.
pub fn verdict(p: &Proportion, eta: f64) -> Verdict {
    if p.estimate >= 0.5 && p.ci_high >= 1.0 - eta {
        Verdict::ConsistentWith1
    } else if p.estimate < 0.5 && p.ci_low <= eta {
        Verdict::ConsistentWith0
    } else {
        Verdict::InconsistentWithDichotomy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub plus: u64,
    pub minus: u64,
    pub oscillating: u64,
    pub undecided: u64,
}

impl LabelCounts {
    pub fn from_labels(labels: &[EscapeLabel]) -> Self {
        let c = |want| labels.iter().filter(|&&l| l == want).count() as u64;
        Self {
            plus: c(EscapeLabel::Plus),
            minus: c(EscapeLabel::Minus),
            oscillating: c(EscapeLabel::Oscillating),
            undecided: c(EscapeLabel::Undecided),
        }
    }

    pub fn total(&self) -> u64 {
        self.plus + self.minus + self.oscillating + self.undecided
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroOneReport {
    pub counts: LabelCounts,
    pub plus: Proportion,
    pub minus: Proportion,
    pub either: Proportion,
    pub verdict_plus: Verdict,
    pub verdict_minus: Verdict,
    pub verdict_either: Verdict,
    pub eta: f64,
}

/// Wilson intervals and verdicts for the escape frequencies.
pub fn zero_one_report(labels: &[EscapeLabel]) -> Result<ZeroOneReport> {
    zero_one_from_counts(LabelCounts::from_labels(labels))
}

pub fn zero_one_from_counts(counts: LabelCounts) -> Result<ZeroOneReport> {
    let n = counts.total();
    if n < 30 {
        return Err(Error::InsufficientData(format!("zero-one report needs 30 replicates, got {n}")));
    }
    let plus = Proportion::wilson95(counts.plus, n);
    let minus = Proportion::wilson95(counts.minus, n);
    let mut either = Proportion::wilson95(counts.plus + counts.minus, n);
    // keep p(plus) + p(minus) ≤ p(either) exact under rounding
    either.estimate = either.estimate.max(plus.estimate + minus.estimate);
    Ok(ZeroOneReport {
        verdict_plus: verdict(&plus, DICHOTOMY_MARGIN),
        verdict_minus: verdict(&minus, DICHOTOMY_MARGIN),
        verdict_either: verdict(&either, DICHOTOMY_MARGIN),
        counts,
        plus,
        minus,
        either,
        eta: DICHOTOMY_MARGIN,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub method: Option<PValueMethod>,
    pub alpha: f64,
    /// `None` when the sample is degenerate.
    pub reject: Option<bool>,
    pub degenerate: bool,
    pub sizes: Vec<usize>,
}

impl TestReport {
    fn degenerate(name: String, alpha: f64, sizes: Vec<usize>) -> Self {
        Self {
            name,
            statistic: None,
            p_value: None,
            method: None,
            alpha,
            reject: None,
            degenerate: true,
            sizes,
        }
    }

    fn decided(name: String, stat: f64, p: f64, method: PValueMethod, alpha: f64, sizes: Vec<usize>) -> Self {
        Self {
            name,
            statistic: Some(stat),
            p_value: Some(p),
            method: Some(method),
            alpha,
            reject: Some(p < alpha),
            degenerate: false,
            sizes,
        }
    }

    /// True when the test ran and did not reject.
    pub fn passed(&self) -> bool {
        self.reject == Some(false)
    }
}

fn pooled_lag_correlation(series: &[&[f64]], lag: usize, mean: f64, var: f64) -> Option<f64> {
    let mut acc = KahanSum::new();
    let mut pairs = 0usize;
    for s in series {
        for w in s.windows(lag + 1) {
            acc.add((w[0] - mean) * (w[lag] - mean));
            pairs += 1;
        }
    }
    (pairs > 0).then(|| acc.total() / pairs as f64 / var)
}

/// Lag-`lag` autocorrelation pooled over independent series, with a
/// two-sided permutation p-value (`permutations` shuffles of all values,
/// keeping the series lengths).
pub fn autocorrelation_test(name: &str, series: &[Vec<f64>], lag: usize, permutations: usize, alpha: f64, seed: u64) -> TestReport {
    let all: Vec<f64> = series.iter().flatten().copied().collect();
    let sizes = vec![all.len()];
    let mean = stats::mean(&all);
    let var = all.iter().map(|x| (x - mean) * (x - mean)).collect::<KahanSum>().total() / all.len().max(1) as f64;
    let scale = all.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    if all.len() < 3 || var <= (1e-12 * scale).powi(2) {
        return TestReport::degenerate(name.into(), alpha, sizes);
    }
    let views: Vec<&[f64]> = series.iter().map(|s| s.as_slice()).collect();
    let Some(r) = pooled_lag_correlation(&views, lag, mean, var) else {
        return TestReport::degenerate(name.into(), alpha, sizes);
    };
    let rng = CounterRng::new(derive_key(seed, lag as u64, tag::PERMUTATION));
    let lens: Vec<usize> = series.iter().map(Vec::len).collect();
    let mut buf = all.clone();
    let mut extreme = 0usize;
    for b in 0..permutations as u64 {
        rng.shuffle(b * all.len() as u64, &mut buf);
        let mut views = Vec::with_capacity(lens.len());
        let mut off = 0;
        for &n in &lens {
            views.push(&buf[off..off + n]);
            off += n;
        }
        let rb = pooled_lag_correlation(&views, lag, mean, var).unwrap_or(0.0);
        if rb.abs() >= r.abs() - 1e-12 {
            extreme += 1;
        }
    }
    let p = (1 + extreme) as f64 / (permutations + 1) as f64;
    TestReport::decided(name.into(), r, p, PValueMethod::Permutation, alpha, sizes)
}

/// Two-sample KS with degeneracy handling.
pub fn ks_test(name: &str, xs: &[f64], ys: &[f64], alpha: f64) -> TestReport {
    let sizes = vec![xs.len(), ys.len()];
    if xs.is_empty() || ys.is_empty() {
        return TestReport::degenerate(name.into(), alpha, sizes);
    }
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(xs) && constant(ys) && xs[0] == ys[0] {
        return TestReport::degenerate(name.into(), alpha, sizes);
    }
    let (d, p, method) = stats::ks_two_sample(xs, ys);
    TestReport::decided(name.into(), d, p, method, alpha, sizes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IidOptions {
    pub alpha: f64,
    pub permutations: usize,
    pub max_lag: usize,
    pub seed: u64,
}

impl Default for IidOptions {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            permutations: 999,
            max_lag: 3,
            seed: 0,
        }
    }
}

/// Independence and identical-distribution checks on the increments.
pub fn iid_tests(records: &[RegenerationRecord], opts: &IidOptions) -> Result<Vec<TestReport>> {
    let per: Vec<(Vec<f64>, Vec<f64>)> = records
        .iter()
        .map(|r| {
            let z = r.stationary_increments();
            (z.iter().map(|z| z.dtau as f64).collect(), z.iter().map(|z| z.dl).collect())
        })
        .collect();
    let total: usize = per.iter().map(|p| p.0.len()).sum();
    if total < 50 {
        return Err(Error::InsufficientData(format!("independence tests need 50 increments, got {total}")));
    }
    let dtau: Vec<Vec<f64>> = per.iter().map(|p| p.0.clone()).collect();
    let dl: Vec<Vec<f64>> = per.iter().map(|p| p.1.clone()).collect();
    let mut out = Vec::new();
    for lag in 1..=opts.max_lag {
        for (j, (label, series)) in [("dtau", &dtau), ("dl", &dl)].into_iter().enumerate() {
            let seed = derive_key(opts.seed, j as u64, tag::PERMUTATION);
            out.push(autocorrelation_test(&format!("autocorr_lag{lag}_{label}"), series, lag, opts.permutations, opts.alpha, seed));
        }
    }
    for (label, series) in [("dtau", &dtau), ("dl", &dl)] {
        let (mut even, mut odd) = (Vec::new(), Vec::new());
        for s in series.iter() {
            for (i, v) in s.iter().enumerate() {
                // position i holds Z_{i+1}
                if (i + 1) % 2 == 0 {
                    even.push(*v);
                } else {
                    odd.push(*v);
                }
            }
        }
        out.push(ks_test(&format!("ks_even_odd_{label}"), &even, &odd, opts.alpha));
    }
    let delay: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.d_status == DStatus::InfiniteWithinHorizon)
        .filter_map(|r| r.delay().map(|z| (z.dtau as f64, z.dl)))
        .collect();
    let pooled_tau: Vec<f64> = dtau.iter().flatten().copied().collect();
    let pooled_dl: Vec<f64> = dl.iter().flatten().copied().collect();
    let d_tau: Vec<f64> = delay.iter().map(|p| p.0).collect();
    let d_dl: Vec<f64> = delay.iter().map(|p| p.1).collect();
    out.push(ks_test("ks_delay_vs_stationary_dtau", &d_tau, &pooled_tau, opts.alpha));
    out.push(ks_test("ks_delay_vs_stationary_dl", &d_dl, &pooled_dl, opts.alpha));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tau1Report {
    /// First blocks with `D` infinite.
    pub n: usize,
    pub mean_level: f64,
    pub se_level: f64,
    pub mean_tau: f64,
    pub se_tau: f64,
    /// Running mean of `l · X_{τ_1}` against sample size.
    pub running_mean: Vec<f64>,
    pub low_effective_n: bool,
    /// Whether the running mean moves by less than 10% over the second half
    /// of the sample; `None` when `n` is too small for a verdict.
    pub stable: Option<bool>,
}

/// Moments of `l · X_{τ_1}` and `τ_1` over first blocks with `D = ∞`.
pub fn tau1_moment_report(records: &[RegenerationRecord]) -> Tau1Report {
    let firsts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.d_status == DStatus::InfiniteWithinHorizon)
        .filter_map(|r| r.delay().map(|z| (z.dl, z.dtau as f64)))
        .collect();
    let levels: Vec<f64> = firsts.iter().map(|p| p.0).collect();
    let taus: Vec<f64> = firsts.iter().map(|p| p.1).collect();
    let (mean_level, se_level) = stats::mean_se(&levels);
    let (mean_tau, se_tau) = stats::mean_se(&taus);
    let mut acc = KahanSum::new();
    let running_mean: Vec<f64> = levels
        .iter()
        .enumerate()
        .map(|(i, x)| {
            acc.add(*x);
            acc.total() / (i + 1) as f64
        })
        .collect();
    let n = levels.len();
    let low = n < 30;
    let stable = (!low).then(|| running_mean_stable(&running_mean, 0.10));
    Tau1Report {
        n,
        mean_level,
        se_level,
        mean_tau,
        se_tau,
        running_mean,
        low_effective_n: low,
        stable,
    }
}

/// Range of the running mean over its second half, relative to the final value.
pub fn running_mean_stable(running: &[f64], tolerance: f64) -> bool {
    let half = &running[running.len() / 2..];
    let (lo, hi) = half.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    let last = *running.last().unwrap();
    (hi - lo) <= tolerance * last.abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitVelocitySummary {
    /// `None` when every replicate oscillates (zero velocity).
    pub l_star: Option<Vec<f64>>,
    pub v_plus: Option<VelocityEstimate>,
    pub v_minus: Option<VelocityEstimate>,
    pub non_oscillating: usize,
    pub n: usize,
    /// Fraction of non-oscillating velocity vectors within the angular tolerance of `±l_*`.
    pub collinearity: Option<f64>,
    pub angular_tolerance: f64,
}

/// Angle below which a velocity counts as collinear with `±l_*` (radians).
pub const COLLINEAR_TOLERANCE: f64 = 0.26;

/// Estimate `l_*`, `v_+` and `v_−` from one ensemble. A replicate is
/// non-oscillating when it escapes (plus or minus) along some direction of
/// the grid; `l_*` is the principal axis of the non-oscillating velocities,
/// signed by their mean.
pub fn limit_velocity_summary(trajs: &[Trajectory], grid: &[Vec<f64>], theta: f64, beta: f64) -> Result<LimitVelocitySummary> {
    let first = trajs.first().ok_or_else(|| Error::Argument("empty ensemble".into()))?;
    let d = first.dim();
    if grid.is_empty() {
        return Err(Error::Argument("direction grid is empty".into()));
    }
    for l in grid {
        check_direction(l, d)?;
    }
    let horizon = first.horizon();
    let escaping: Vec<&Trajectory> = trajs
        .iter()
        .filter(|t| {
            grid.iter().any(|l| {
                let c = classify_levels(&Levels::new(t, l), theta, beta);
                matches!(c.label, EscapeLabel::Plus | EscapeLabel::Minus)
            })
        })
        .collect();
    let empty = LimitVelocitySummary {
        l_star: None,
        v_plus: None,
        v_minus: None,
        non_oscillating: escaping.len(),
        n: trajs.len(),
        collinearity: None,
        angular_tolerance: COLLINEAR_TOLERANCE,
    };
    if escaping.is_empty() {
        return Ok(empty);
    }
    let vels: Vec<Vec<f64>> = escaping
        .iter()
        .map(|t| t.end().iter().zip(t.start()).map(|(a, b)| (a - b) / horizon).collect())
        .collect();
    let mut second = nalgebra::DMatrix::<f64>::zeros(d, d);
    for v in &vels {
        let c = nalgebra::DVector::from_column_slice(v);
        second += &c * c.transpose();
    }
    let eig = second.symmetric_eigen();
    let top = eig.eigenvalues.iamax();
    let mut axis: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let mean: Vec<f64> = (0..d).map(|j| stats::mean(&vels.iter().map(|v| v[j]).collect::<Vec<_>>())).collect();
    let sign_ref = if dot(&mean, &axis).abs() > 1e-12 { dot(&mean, &axis) } else { axis.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(1.0) };
    if sign_ref < 0.0 {
        axis.iter_mut().for_each(|x| *x = -*x);
    }
    let axis = crate::path_events::unit(&axis);

    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for t in &escaping {
        let c = classify_levels(&Levels::new(t, &axis), theta, beta);
        let v = c.terminal / horizon;
        match c.label {
            EscapeLabel::Plus => plus.push(v),
            EscapeLabel::Minus => minus.push(-v),
            _ => {}
        }
    }
    let est = |xs: &[f64]| {
        (!xs.is_empty()).then(|| {
            let (m, se) = stats::mean_se(xs);
            VelocityEstimate {
                estimate: m,
                se,
                n_effective: xs.len(),
                method: VelocityMethod::Direct,
                vector: None,
            }
        })
    };
    let aligned = vels
        .iter()
        .filter(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            n > 0.0 && (dot(v, &axis).abs() / n).min(1.0).acos() <= COLLINEAR_TOLERANCE
        })
        .count();
    Ok(LimitVelocitySummary {
        v_plus: est(&plus),
        v_minus: est(&minus),
        collinearity: Some(aligned as f64 / vels.len() as f64),
        l_star: Some(axis),
        ..empty
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub x: Vec<f64>,
    pub escapes: u64,
    pub n: u64,
    pub r_hat: f64,
    pub se: f64,
}

/// Quenched escape frequency from each probe point in a fixed environment.
pub fn harmonic_escape_probe<F: CoefficientField + ?Sized>(
    field: &F,
    probes: &[Vec<f64>],
    l: &[f64],
    sub_ensemble: usize,
    sim: &SimConfig,
    theta: f64,
    beta: f64,
) -> Result<Vec<ProbeRow>> {
    check_direction(l, field.dimension())?;
    if sub_ensemble == 0 {
        return Err(Error::Argument("sub-ensemble size must be positive".into()));
    }
    probes
        .iter()
        .enumerate()
        .map(|(pi, x)| {
            if x.len() != field.dimension() || x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument(format!("probe {pi} is not a finite point of the right dimension")));
            }
            let escapes: u64 = (0..sub_ensemble as u64)
                .into_par_iter()
                .map(|j| {
                    let seed = derive_key(sim.replicate_seed(), pi as u64 * sub_ensemble as u64 + j, tag::PROBE);
                    let p = simulate_path(field, x, &sim.with_seed(seed));
                    let c = classify_levels(&Levels::new(&p, l), theta, beta);
                    u64::from(c.label == EscapeLabel::Plus)
                })
                .sum();
            let p = Proportion::wilson95(escapes, sub_ensemble as u64);
            Ok(ProbeRow {
                x: x.clone(),
                escapes,
                n: sub_ensemble as u64,
                r_hat: p.estimate,
                se: p.se(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling_regen::{Increment, RegenerationRecord};
    use crate::env_field::{make_environment, EnvironmentSpec};

    const E1: [f64; 2] = [1.0, 0.0];

    fn line(v: &[f64], horizon: f64) -> Trajectory {
        let v = v.to_vec();
        Trajectory::from_fn(v.len(), 16, horizon, move |t| v.iter().map(|a| a * t).collect())
    }

    fn record_from(dl: &[f64], dtau: &[u64]) -> RegenerationRecord {
        let mut increments = vec![Increment {
            k: 0,
            dx: vec![3.0],
            dl: 3.0,
            dtau: 5,
            min_rel: 0.0,
            max_rel: 3.0,
        }];
        for (k, (a, b)) in dl.iter().zip(dtau).enumerate() {
            increments.push(Increment {
                k: k + 1,
                dx: vec![*a],
                dl: *a,
                dtau: *b,
                min_rel: 0.0,
                max_rel: *a,
            });
        }
        RegenerationRecord {
            tau: vec![],
            positions: vec![],
            increments,
            last_block_censored: false,
            d_status: DStatus::InfiniteWithinHorizon,
            epsilon: 0.1,
            mode: Default::default(),
            searches: vec![],
        }
    }

    #[test]
    fn direct_on_deterministic_lines() {
        let trajs: Vec<_> = (0..5).map(|_| line(&[0.5, 0.0], 10.0)).collect();
        let v = velocity_direct(&trajs, &E1).unwrap();
        assert!((v.estimate - 0.5).abs() < 1e-12);
        assert_eq!(v.se, 0.0);
        assert!(velocity_direct(&[], &E1).is_err());
    }

    #[test]
    fn direct_on_drifted_brownian() {
        let env = make_environment(EnvironmentSpec::constant(vec![0.5, 0.0], 1.0)).unwrap();
        let trajs: Vec<_> = (0..500)
            .map(|r| simulate_path(&env, &[0.0, 0.0], &SimConfig::new(1.0 / 16.0, 50.0, r).unwrap()))
            .collect();
        let v = velocity_direct(&trajs, &E1).unwrap();
        assert!(v.within(0.5, 3.0), "{v:?}");
        let sym = make_environment(EnvironmentSpec::constant(vec![0.0, 0.0], 1.0)).unwrap();
        let trajs: Vec<_> = (0..500)
            .map(|r| simulate_path(&sym, &[0.0, 0.0], &SimConfig::new(1.0 / 16.0, 50.0, r).unwrap()))
            .collect();
        let v = velocity_direct(&trajs, &E1).unwrap();
        assert!(v.estimate.abs() <= stats::Z95 * v.se, "{v:?}");
    }

    #[test]
    fn renewal_arithmetic() {
        let rec = record_from(&[1.0, 1.0, 1.0], &[2, 2, 2]);
        let v = velocity_renewal(&[rec]).unwrap();
        assert_eq!(v.estimate, 0.5);
        assert_eq!(v.se, 0.0);
        let one = record_from(&[1.0], &[2]);
        assert!(matches!(velocity_renewal(&[one]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn renewal_delta_method_matches_oracle() {
        // Oracle: var(x − v y) / (n ȳ²) with v = Σx/Σy.
        let x = [1.0, 3.0, 2.0, 5.0];
        let y = [2.0, 4.0, 3.0, 6.0];
        let v = 11.0 / 15.0;
        let my = 15.0 / 4.0;
        let r: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - v * b).collect();
        let expect = (stats::variance(&r) / 4.0).sqrt() / my;
        let got = velocity_from_increments(&x, &y).unwrap();
        assert!((got.estimate - v).abs() < 1e-15);
        assert!((got.se - expect).abs() < 1e-12);
    }

    #[test]
    fn classify_examples() {
        let up = line(&[1.0, 0.0], 50.0);
        assert_eq!(classify_escape(&up, &E1, 10.0, 2.5).unwrap().label, EscapeLabel::Plus);
        let down = line(&[-1.0, 0.0], 50.0);
        assert_eq!(classify_escape(&down, &E1, 10.0, 2.5).unwrap().label, EscapeLabel::Minus);
        let wave = Trajectory::from_fn(2, 16, 50.0, |t| vec![5.0 * t.sin(), 0.0]);
        assert_eq!(classify_escape(&wave, &E1, 10.0, 2.5).unwrap().label, EscapeLabel::Oscillating);
        let still = Trajectory::from_fn(2, 16, 50.0, |_| vec![0.0, 0.0]);
        assert_eq!(classify_escape(&still, &E1, 10.0, 2.5).unwrap().label, EscapeLabel::Undecided);
    }

    #[test]
    fn classify_rejects_deep_backtrack() {
        // Reaches 5 = Θ/2, falls back to 2 ≤ Θ/4, then escapes.
        let p = Trajectory::polyline(16, &[(0.0, vec![0.0]), (5.0, vec![5.0]), (8.0, vec![2.0]), (30.0, vec![30.0])]);
        let c = classify_escape(&p, &[1.0], 10.0, 2.5).unwrap();
        assert_eq!(c.label, EscapeLabel::Undecided);
        assert_eq!(c.tail_min, Some(2.0));
    }

    #[test]
    fn zero_one_examples() {
        let counts = LabelCounts {
            plus: 98,
            minus: 0,
            oscillating: 1,
            undecided: 1,
        };
        let r = zero_one_from_counts(counts).unwrap();
        assert!((r.plus.estimate - 0.98).abs() < 1e-15);
        assert_eq!(r.verdict_plus, Verdict::ConsistentWith1);
        assert_eq!(r.verdict_minus, Verdict::ConsistentWith0);
        let osc = zero_one_report(&vec![EscapeLabel::Oscillating; 100]).unwrap();
        assert_eq!(osc.either.estimate, 0.0);
        assert_eq!(osc.verdict_either, Verdict::ConsistentWith0);
        let mut split = vec![EscapeLabel::Plus; 50];
        split.extend(vec![EscapeLabel::Minus; 50]);
        let r = zero_one_report(&split).unwrap();
        assert_eq!(r.either.estimate, 1.0);
        assert_eq!(r.verdict_either, Verdict::ConsistentWith1);
        assert_eq!(r.verdict_plus, Verdict::InconsistentWithDichotomy);
        assert!(zero_one_report(&[EscapeLabel::Plus; 10]).is_err());
    }

    #[test]
    fn autocorrelation_calibration_on_iid_exponentials() {
        let mut accepted = 0;
        for rep in 0..100u64 {
            let rng = CounterRng::new(derive_key(rep, 0, tag::PROBE));
            let xs: Vec<f64> = (0..300).map(|i| -rng.uniform(i).ln()).collect();
            let t = autocorrelation_test("lag1", &[xs], 1, 199, 0.01, rep);
            if t.p_value.unwrap() > 0.01 {
                accepted += 1;
            }
        }
        assert!(accepted >= 90, "{accepted}");
    }

    #[test]
    fn autocorrelation_detects_copies() {
        let rng = CounterRng::new(1);
        let xs: Vec<f64> = (0..200).map(|i| -rng.uniform(i / 2).ln()).collect();
        let t = autocorrelation_test("lag1", &[xs], 1, 999, 0.01, 0);
        assert!(t.statistic.unwrap() > 0.3);
        assert_eq!(t.reject, Some(true));
        let flat = vec![2.0; 100];
        let t = autocorrelation_test("lag1", &[flat], 1, 99, 0.01, 0);
        assert!(t.degenerate && t.p_value.is_none());
    }

    #[test]
    fn iid_tests_need_data() {
        let rec = record_from(&[1.0; 10], &[2; 10]);
        assert!(iid_tests(&[rec], &IidOptions::default()).is_err());
    }

    #[test]
    fn tau1_report_cases() {
        let recs: Vec<_> = (0..40)
            .map(|_| {
                let mut r = record_from(&[1.0, 1.0], &[1, 1]);
                r.increments[0].dl = 4.0;
                r.increments[0].dtau = 4;
                r
            })
            .collect();
        let t = tau1_moment_report(&recs);
        assert_eq!((t.mean_level, t.se_level, t.mean_tau), (4.0, 0.0, 4.0));
        assert_eq!(t.stable, Some(true));
        let t = tau1_moment_report(&recs[..5]);
        assert!(t.low_effective_n && t.stable.is_none());
    }

    #[test]
    fn limit_velocity_constant_drift() {
        let trajs: Vec<_> = (0..20).map(|_| line(&[0.5, 0.0], 100.0)).collect();
        let grid = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let s = limit_velocity_summary(&trajs, &grid, 20.0, 5.0).unwrap();
        let l = s.l_star.unwrap();
        assert!((l[0] - 1.0).abs() < 1e-12 && l[1].abs() < 1e-12);
        assert!((s.v_plus.unwrap().estimate - 0.5).abs() < 1e-12);
        assert!(s.v_minus.is_none());
    }

    #[test]
    fn limit_velocity_two_populations() {
        let mut trajs: Vec<_> = (0..10).map(|_| line(&[0.5, 0.0], 100.0)).collect();
        trajs.extend((0..10).map(|_| line(&[-0.3, 0.0], 100.0)));
        let grid = vec![vec![1.0, 0.0]];
        let s = limit_velocity_summary(&trajs, &grid, 20.0, 5.0).unwrap();
        assert!((s.l_star.unwrap()[0] - 1.0).abs() < 1e-12);
        assert!((s.v_plus.unwrap().estimate - 0.5).abs() < 1e-12);
        assert!((s.v_minus.unwrap().estimate - 0.3).abs() < 1e-12);
        assert_eq!(s.collinearity, Some(1.0));
    }

    #[test]
    fn limit_velocity_all_oscillating() {
        let trajs: Vec<_> = (0..10).map(|_| Trajectory::from_fn(2, 16, 50.0, |t| vec![15.0 * t.sin(), 0.0])).collect();
        let s = limit_velocity_summary(&trajs, &[vec![1.0, 0.0]], 20.0, 5.0).unwrap();
        assert!(s.l_star.is_none() && s.v_plus.is_none() && s.v_minus.is_none());
    }

    #[test]
    fn probe_follows_drift_sign() {
        let sim = SimConfig::new(0.125, 100.0, 9).unwrap();
        let probes = vec![vec![0.0, 0.0], vec![3.0, -2.0]];
        let up = make_environment(EnvironmentSpec::constant(vec![1.0, 0.0], 1.0)).unwrap();
        for row in harmonic_escape_probe(&up, &probes, &E1, 40, &sim, 20.0, 5.0).unwrap() {
            assert_eq!(row.r_hat, 1.0);
        }
        let down = make_environment(EnvironmentSpec::constant(vec![-1.0, 0.0], 1.0)).unwrap();
        for row in harmonic_escape_probe(&down, &probes, &E1, 40, &sim, 20.0, 5.0).unwrap() {
            assert_eq!(row.r_hat, 0.0);
        }
    }
}
