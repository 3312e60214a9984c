//! Bernoulli marks attached to unit time intervals, forced bridges on the
//! marked intervals, and the regeneration times built on top of them.

use serde::{Deserialize, Serialize};

use crate::env_field::{CoefficientField, Environment};
use crate::error::{Error, Result};
use crate::path_events::{ceil_time, check_direction, Levels};
use crate::rng::{derive_key, tag, CounterRng};
use crate::sde_sim::{SimConfig, StepScratch, Trajectory};

/// Proposals tried per bridge before giving up.
pub const BRIDGE_RETRY_CAP: u64 = 100_000;
/// Endpoint tolerance of a guided proposal, in units of `R`.
pub const BRIDGE_PIN_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// Marked intervals are replaced by a bridge into the target ball.
    #[default]
    ForcedBridge,
    /// The path is never modified; a mark needs a coin success and the
    /// realised interval must satisfy the geometric constraints.
    Thinning,
}

/// Settings of the Bernoulli coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub mode: CouplingMode,
    /// No-backtrack guard `Λ` in units of `R`.
    #[serde(default = "default_guard")]
    pub guard: f64,
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_guard() -> f64 {
    10.0
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            mode: CouplingMode::default(),
            guard: default_guard(),
        }
    }
}

impl CouplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config("coupling.epsilon", "must lie in [0, 1]"));
        }
        if !(self.guard > 0.0) || !self.guard.is_finite() {
            return Err(Error::config("coupling.guard", "must be positive and finite"));
        }
        Ok(())
    }
}

/// Target ball `B^x = B(x + 9Rl, R)` and confinement ball `U^x = B(x + 5Rl, 6R)`.
#[derive(Debug, Clone)]
pub struct BridgeGeometry {
    pub target_centre: Vec<f64>,
    pub target_radius: f64,
    pub confine_centre: Vec<f64>,
    pub confine_radius: f64,
}

impl BridgeGeometry {
    pub fn new(x: &[f64], l: &[f64], range: f64) -> Self {
        Self {
            target_centre: x.iter().zip(l).map(|(a, b)| a + 9.0 * range * b).collect(),
            target_radius: range,
            confine_centre: x.iter().zip(l).map(|(a, b)| a + 5.0 * range * b).collect(),
            confine_radius: 6.0 * range,
        }
    }

    pub fn in_target(&self, y: &[f64]) -> bool {
        dist(y, &self.target_centre) < self.target_radius
    }

    pub fn confined(&self, y: &[f64]) -> bool {
        dist(y, &self.confine_centre) < self.confine_radius
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// A unit-time bridge from `x` into the target ball.
#[derive(Debug, Clone)]
pub struct BridgeSample {
    /// `steps_per_unit + 1` points, flattened.
    pub points: Vec<f64>,
    pub target: Vec<f64>,
    pub attempts: u64,
}

/// Uniform point in `B(centre, radius)` from counters `0..=2d` of `rng`.
fn uniform_in_ball(rng: &CounterRng, centre: &[f64], radius: f64) -> Vec<f64> {
    let d = centre.len();
    let g: Vec<f64> = (0..d as u64).map(|j| rng.normal(j)).collect();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let r = radius * rng.uniform(2 * d as u64 + 1).powf(1.0 / d as f64);
    centre.iter().zip(&g).map(|(c, v)| c + r * v / norm).collect()
}

/// Sample a unit-time path from `x` that stays in `U^x` and ends at a point
/// drawn uniformly on `B^x`.
///
/// The endpoint is drawn once. Paths are guided proposals
/// `dZ = (Y − Z)/(1 − s) ds + σ(Z) dβ`, discretised so the last step lands on
/// `Y`, and are rejected until one stays inside the confinement ball.
pub fn sample_forced_bridge<F: CoefficientField + ?Sized>(
    field: &F,
    x: &[f64],
    l: &[f64],
    range: f64,
    steps_per_unit: u32,
    key: u64,
) -> Result<BridgeSample> {
    let d = x.len();
    let geo = BridgeGeometry::new(x, l, range);
    let rng = CounterRng::new(key);
    let target = uniform_in_ball(&rng.split(0, tag::BRIDGE), &geo.target_centre, geo.target_radius);
    let n = steps_per_unit as usize;
    let dt = 1.0 / n as f64;
    let mut scratch = StepScratch::new(d);
    let mut points = vec![0.0; d * (n + 1)];
    for attempt in 0..BRIDGE_RETRY_CAP {
        let noise = rng.split(attempt + 1, tag::BRIDGE);
        points[..d].copy_from_slice(x);
        let mut ok = true;
        for i in 0..n {
            let s0 = i as f64 * dt;
            let s1 = (i + 1) as f64 * dt;
            let shrink = ((1.0 - s1) / (1.0 - s0)).sqrt() * dt.sqrt();
            let (head, tail) = points.split_at_mut((i + 1) * d);
            let z = &head[i * d..];
            let sigma = scratch.sigma_at(field, z);
            for a in 0..d {
                let mut diff = 0.0;
                for b in 0..d {
                    diff += sigma[a * d + b] * noise.normal((i * d + b) as u64);
                }
                tail[a] = z[a] + (target[a] - z[a]) * dt / (1.0 - s0) + diff * shrink;
            }
            if !geo.confined(&tail[..d]) {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let end = &mut points[n * d..];
        if dist(end, &target) > BRIDGE_PIN_TOLERANCE * range {
            continue;
        }
        end.copy_from_slice(&target);
        return Ok(BridgeSample {
            points,
            target,
            attempts: attempt + 1,
        });
    }
    Err(Error::Coupling {
        interval: 0,
        message: format!("no admissible bridge after {BRIDGE_RETRY_CAP} proposals"),
    })
}

/// A path with Bernoulli marks `λ_m` on the integer times `0..=⌊horizon⌋`.
#[derive(Debug, Clone)]
pub struct CoupledTrajectory {
    pub traj: Trajectory,
    pub lambda: Vec<bool>,
    /// Whether `[m, m + 1]` was replaced by a forced bridge.
    pub forced: Vec<bool>,
    pub epsilon: f64,
    pub mode: CouplingMode,
    pub l: Vec<f64>,
    pub range: f64,
    /// Total bridge proposals drawn.
    pub bridge_attempts: u64,
}

impl CoupledTrajectory {
    /// Wrap a given path and marks, e.g. a scripted test case.
    pub fn scripted(traj: Trajectory, lambda: Vec<bool>, l: Vec<f64>, range: f64) -> Result<Self> {
        let marks = (traj.len() - 1) / traj.steps_per_unit() as usize + 1;
        if lambda.len() != marks {
            return Err(Error::Argument(format!("expected {marks} marks, got {}", lambda.len())));
        }
        check_direction(&l, traj.dim())?;
        Ok(Self {
            traj,
            forced: vec![false; lambda.len()],
            lambda,
            epsilon: 0.0,
            mode: CouplingMode::Thinning,
            l,
            range,
            bridge_attempts: 0,
        })
    }

    pub fn levels(&self) -> Levels {
        Levels::new(&self.traj, &self.l)
    }

    /// Indices of marked intervals.
    pub fn marked(&self) -> impl Iterator<Item = u64> + '_ {
        self.lambda.iter().enumerate().filter(|(_, &b)| b).map(|(m, _)| m as u64)
    }
}

/// Simulate from `x0` with Bernoulli(ε) marks on every unit interval.
pub fn attach_bernoulli(
    env: &Environment,
    x0: &[f64],
    cfg: &SimConfig,
    l: &[f64],
    coupling: &CouplingConfig,
) -> Result<CoupledTrajectory> {
    attach_bernoulli_field(env, env.dependence_range(), x0, cfg, l, coupling)
}

/// As [`attach_bernoulli`] for any coefficient field with range `range`.
pub fn attach_bernoulli_field<F: CoefficientField + ?Sized>(
    field: &F,
    range: f64,
    x0: &[f64],
    cfg: &SimConfig,
    l: &[f64],
    coupling: &CouplingConfig,
) -> Result<CoupledTrajectory> {
    coupling.validate()?;
    let d = field.dimension();
    check_direction(l, d)?;
    if x0.len() != d {
        return Err(Error::Argument("start point has wrong dimension".into()));
    }
    let n = cfg.steps_per_unit() as usize;
    let steps = cfg.total_steps() as usize;
    let last = steps / n;
    let dt = cfg.dt();
    let seed = cfg.replicate_seed();
    let noise = CounterRng::new(derive_key(seed, 0, tag::NOISE));
    let coins = CounterRng::new(derive_key(seed, 0, tag::LAMBDA));

    let mut lambda: Vec<bool> = (0..=last as u64).map(|m| coins.bernoulli(m, coupling.epsilon)).collect();
    let mut forced = vec![false; last + 1];
    let mut points = vec![0.0; d * (steps + 1)];
    points[..d].copy_from_slice(x0);
    let mut scratch = StepScratch::new(d);
    let mut attempts = 0;

    for m in 0..last {
        let base = m * n;
        if coupling.mode == CouplingMode::ForcedBridge && lambda[m] {
            let key = derive_key(seed, m as u64, tag::BRIDGE);
            let x = points[base * d..(base + 1) * d].to_vec();
            let b = sample_forced_bridge(field, &x, l, range, cfg.steps_per_unit(), key).map_err(|e| match e {
                Error::Coupling { message, .. } => Error::Coupling {
                    interval: m as u64,
                    message,
                },
                other => other,
            })?;
            attempts += b.attempts;
            points[base * d..(base + n + 1) * d].copy_from_slice(&b.points);
            forced[m] = true;
            continue;
        }
        for i in base..base + n {
            let (head, tail) = points.split_at_mut((i + 1) * d);
            scratch.euler_step(field, &noise, i as u64, dt, &head[i * d..], &mut tail[..d]);
        }
        if coupling.mode == CouplingMode::Thinning && lambda[m] {
            let geo = BridgeGeometry::new(&points[base * d..(base + 1) * d], l, range);
            let inside = (base..=base + n).all(|i| geo.confined(&points[i * d..(i + 1) * d]));
            lambda[m] = inside && geo.in_target(&points[(base + n) * d..(base + n + 1) * d]);
        }
    }
    if coupling.mode == CouplingMode::Thinning {
        // No interval follows the last integer time, so its event cannot be checked.
        lambda[last] = false;
    }

    Ok(CoupledTrajectory {
        traj: Trajectory::from_points(d, cfg.steps_per_unit(), points)?,
        lambda,
        forced,
        epsilon: coupling.epsilon,
        mode: coupling.mode,
        l: l.to_vec(),
        range,
        bridge_attempts: attempts,
    })
}

/// Outcome of the backtrack time `D` after a given integer time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DStatus {
    /// `⌈first time the relative level drops to −R⌉`.
    Finite(u64),
    /// No drop before the horizon and the terminal level clears the guard.
    InfiniteWithinHorizon,
    /// No drop before the horizon but the guard is not met.
    Censored,
}

/// `D` for the path shifted to integer time `from`, with guard `Λ = guard_multiple · R`.
pub fn compute_d(coupled: &CoupledTrajectory, from: u64, guard_multiple: f64) -> DStatus {
    d_status(&coupled.levels(), from, coupled.range, guard_multiple * coupled.range)
}

fn d_status(levels: &Levels, from: u64, range: f64, guard: f64) -> DStatus {
    let x = levels.at_integer(from);
    let t0 = from as f64;
    match levels.first_at_or_below(t0, x - range) {
        Some(t) => DStatus::Finite(ceil_time(t - t0)),
        None => {
            let end = *levels.values().last().unwrap();
            if end >= x + guard {
                DStatus::InfiniteWithinHorizon
            } else {
                DStatus::Censored
            }
        }
    }
}

/// One candidate time `V_k` of the hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VCandidate {
    pub v: f64,
    pub ceil: u64,
    /// `sup_{s ∈ [V, ⌈V⌉]} |l · (X_s − X_V)|`.
    pub oscillation: f64,
    pub accepted: bool,
}

/// `V_k`, `Ñ_k` and `N_1(a)` from time 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyTrace {
    pub candidates: Vec<VCandidate>,
    pub n_tilde: Vec<u64>,
    pub n1: Option<u64>,
}

/// `Ñ_1` for the path shifted to integer time `start`, whose first level is
/// `first_level` (i.e. `M(start) + a`). Later levels are `M(⌈V_k⌉) + R`,
/// with the maximum taken since `start`.
fn n_tilde_1(lv: &Levels, start: u64, first_level: f64, range: f64, log: &mut Option<&mut Vec<VCandidate>>) -> Option<u64> {
    let last = lv.last_integer();
    let s0 = start as f64;
    let mut v = lv.first_at_or_above(s0, first_level)?;
    loop {
        let c = ceil_time(v);
        if c > last {
            return None;
        }
        let osc = lv.oscillation_from(v, c as f64);
        let accepted = osc < range / 2.0;
        if let Some(log) = log.as_deref_mut() {
            log.push(VCandidate {
                v,
                ceil: c,
                oscillation: osc,
                accepted,
            });
        }
        if accepted {
            return Some(c);
        }
        let level = lv.max_on(s0, c as f64) + range;
        v = lv.first_at_or_above(c as f64, level)?;
    }
}

/// `N_1` after `start`: the first `Ñ_k` carrying a mark.
fn n_1(
    lv: &Levels,
    lambda: &[bool],
    start: u64,
    first_level: f64,
    range: f64,
    mut log: Option<&mut Vec<VCandidate>>,
    mut n_tilde: Option<&mut Vec<u64>>,
) -> Option<u64> {
    let mut nt = n_tilde_1(lv, start, first_level, range, &mut log)?;
    loop {
        if let Some(v) = n_tilde.as_deref_mut() {
            v.push(nt);
        }
        if lambda[nt as usize] {
            return Some(nt);
        }
        nt = n_tilde_1(lv, nt, lv.at_integer(nt) + 3.0 * range, range, &mut log)?;
    }
}

/// The hierarchy `V_k(a)`, `Ñ_k(a)`, `N_1(a)` started at time 0.
pub fn compute_hierarchy(coupled: &CoupledTrajectory, l: &[f64], range: f64, a: f64) -> Result<HierarchyTrace> {
    check_direction(l, coupled.traj.dim())?;
    if !(a > 0.0) {
        return Err(Error::Argument("level gap must be positive".into()));
    }
    let lv = Levels::new(&coupled.traj, l);
    let mut candidates = Vec::new();
    let mut n_tilde = Vec::new();
    let n1 = n_1(&lv, &coupled.lambda, 0, lv.at_integer(0) + a, range, Some(&mut candidates), Some(&mut n_tilde));
    Ok(HierarchyTrace {
        candidates,
        n_tilde,
        n1,
    })
}

/// One `(N_k, S_k, D ∘ θ_{S_k})` triple; `R_k = S_k + D` when `D` is finite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegenStep {
    pub n: u64,
    pub s: u64,
    pub d: DStatus,
}

impl RegenStep {
    pub fn r(&self) -> Option<u64> {
        match self.d {
            DStatus::Finite(d) => Some(self.s + d),
            _ => None,
        }
    }
}

/// How a search for the next regeneration time ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchOutcome {
    Regenerated(u64),
    /// The horizon ended before a marked candidate or a complete step.
    Truncated,
    /// The last step saw no backtrack but failed the guard.
    Censored,
}

/// The steps of one search, started at `start` (0 or the previous `τ`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchLog {
    pub start: u64,
    pub steps: Vec<RegenStep>,
    pub outcome: SearchOutcome,
}

/// `Z_k`: the block between consecutive regeneration times (`Z_0` starts at 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Increment {
    pub k: usize,
    pub dx: Vec<f64>,
    /// `l · ΔX`.
    pub dl: f64,
    pub dtau: u64,
    /// Extremes of `l · (X_t − X_{τ_k})` inside the block.
    pub min_rel: f64,
    pub max_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenerationRecord {
    pub tau: Vec<u64>,
    pub positions: Vec<Vec<f64>>,
    /// `Z_0, Z_1, …` for every pair of consecutive certified times.
    pub increments: Vec<Increment>,
    pub last_block_censored: bool,
    /// `D` of the path from time 0.
    pub d_status: DStatus,
    pub epsilon: f64,
    pub mode: CouplingMode,
    pub searches: Vec<SearchLog>,
}

impl RegenerationRecord {
    /// Increments `Z_k` with `k ≥ 1`.
    pub fn stationary_increments(&self) -> &[Increment] {
        if self.increments.is_empty() {
            &[]
        } else {
            &self.increments[1..]
        }
    }

    /// The delay block `Z_0`, if `τ_1` was found.
    pub fn delay(&self) -> Option<&Increment> {
        self.increments.first()
    }
}

/// Detect `τ_1 < τ_2 < …` with no-backtrack guard `Λ = guard_multiple · R`.
pub fn find_regenerations(coupled: &CoupledTrajectory, l: &[f64], range: f64, guard_multiple: f64) -> Result<RegenerationRecord> {
    check_direction(l, coupled.traj.dim())?;
    let lv = Levels::new(&coupled.traj, l);
    let guard = guard_multiple * range;
    let last = lv.last_integer();
    let mut searches = Vec::new();
    let mut tau = Vec::new();
    let mut origin = 0u64;
    loop {
        let mut steps = Vec::new();
        let mut start = origin;
        let mut first_level = lv.at_integer(origin) + 3.0 * range;
        let outcome = loop {
            let Some(n) = n_1(&lv, &coupled.lambda, start, first_level, range, None, None) else {
                break SearchOutcome::Truncated;
            };
            let s = n + 1;
            if s > last {
                break SearchOutcome::Truncated;
            }
            let d = d_status(&lv, s, range, guard);
            steps.push(RegenStep { n, s, d });
            match d {
                DStatus::InfiniteWithinHorizon => break SearchOutcome::Regenerated(s),
                DStatus::Censored => break SearchOutcome::Censored,
                DStatus::Finite(dd) => {
                    let r = s + dd;
                    if r > last {
                        break SearchOutcome::Truncated;
                    }
                    // a_k = M(R_k) − l·X_{R_k} + R, so the first level is M(R_k) + R
                    first_level = lv.max_on(origin as f64, r as f64) + range;
                    start = r;
                }
            }
        };
        searches.push(SearchLog { start: origin, steps, outcome });
        match outcome {
            SearchOutcome::Regenerated(t) => {
                tau.push(t);
                origin = t;
            }
            _ => break,
        }
    }

    let positions: Vec<Vec<f64>> = tau.iter().map(|&t| coupled.traj.at_integer(t).to_vec()).collect();
    let mut increments = Vec::new();
    let mut prev = 0u64;
    for (k, &t) in tau.iter().enumerate() {
        let x0 = coupled.traj.at_integer(prev);
        let x1 = coupled.traj.at_integer(t);
        let dx: Vec<f64> = x1.iter().zip(x0).map(|(a, b)| a - b).collect();
        let base = lv.at_integer(prev);
        increments.push(Increment {
            k,
            dl: dx.iter().zip(l).map(|(a, b)| a * b).sum(),
            dx,
            dtau: t - prev,
            min_rel: lv.min_on(prev as f64, t as f64) - base,
            max_rel: lv.max_on(prev as f64, t as f64) - base,
        });
        prev = t;
    }
    let last_block_censored = matches!(searches.last().map(|s| s.outcome), Some(SearchOutcome::Censored));
    Ok(RegenerationRecord {
        tau,
        positions,
        increments,
        last_block_censored,
        d_status: d_status(&lv, 0, range, guard),
        epsilon: coupled.epsilon,
        mode: coupled.mode,
        searches,
    })
}

/// A violated structural property of a detected hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub property: String,
    pub detail: String,
}

/// Check the structural properties every detected hierarchy must satisfy.
/// `origin_floor` additionally checks `l · (X_{τ_1 − 1 + s} − X_0) ≥ 2R`.
pub fn check_invariants(coupled: &CoupledTrajectory, record: &RegenerationRecord, origin_floor: bool) -> Vec<Violation> {
    let lv = coupled.levels();
    let range = coupled.range;
    let tol = 1e-9;
    let mut out = Vec::new();
    let mut bad = |p: &str, d: String| {
        out.push(Violation {
            property: p.into(),
            detail: d,
        })
    };
    let mut chain_prev = 1u64;
    for (j, search) in record.searches.iter().enumerate() {
        for (k, st) in search.steps.iter().enumerate() {
            if st.n < chain_prev.max(search.start + 1) {
                bad("chain", format!("search {j} step {k}: N = {} after {}", st.n, chain_prev));
            }
            if st.s != st.n + 1 {
                bad("chain", format!("search {j} step {k}: S = {} ≠ N + 1", st.s));
            }
            if !coupled.lambda[st.n as usize] {
                bad("mark", format!("search {j} step {k}: λ at N = {} is 0", st.n));
            }
            let top = lv.max_on(search.start as f64, st.n as f64);
            if top > lv.at_integer(st.n) + range + tol {
                bad(
                    "local_max",
                    format!("search {j} step {k}: sup {top} above level at N plus R ({})", lv.at_integer(st.n) + range),
                );
            }
            chain_prev = st.r().unwrap_or(st.s);
        }
        if let SearchOutcome::Regenerated(t) = search.outcome {
            if search.steps.last().map(|s| s.s) != Some(t) {
                bad("chain", format!("search {j}: τ = {t} is not the last S"));
            }
            chain_prev = t;
        }
    }
    for (k, &t) in record.tau.iter().enumerate() {
        let floor = lv.min_on(t as f64, lv.horizon()) - lv.at_integer(t);
        if floor < -range - tol {
            bad("no_backtrack", format!("τ_{} = {t}: relative minimum {floor}", k + 1));
        }
    }
    if origin_floor {
        if let Some(&t1) = record.tau.first() {
            let low = lv.min_on((t1 - 1) as f64, lv.horizon()) - lv.at_integer(0);
            if low < 2.0 * range - tol {
                bad("origin_floor", format!("τ_1 = {t1}: level {low} after τ_1 − 1"));
            }
        }
    }
    out
}
