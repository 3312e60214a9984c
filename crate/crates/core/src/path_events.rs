//! Stopping times, slabs, running maxima and oscillation statistics on
//! sampled paths. The path between grid points is the linear interpolant, so
//! every crossing time is exact for that interpolant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde_sim::Trajectory;

/// Tolerance used to snap interpolated times onto grid points.
const SNAP: f64 = 1e-9;

/// Smallest integer `≥ t`, treating values within `SNAP` of an integer as that integer.
pub fn ceil_time(t: f64) -> u64 {
    (t - SNAP).ceil().max(0.0) as u64
}

/// Check that `l` is a unit vector of dimension `d`.
pub fn check_direction(l: &[f64], d: usize) -> Result<()> {
    if l.len() != d {
        return Err(Error::Argument(format!("direction has dimension {}, path has {d}", l.len())));
    }
    let n = l.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-12 {
        return Err(Error::Argument(format!("direction must be a unit vector (norm {n})")));
    }
    Ok(())
}

/// Normalise a direction vector.
pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// The piecewise-linear scalar process `l · X_t`.
#[derive(Debug, Clone)]
pub struct Levels {
    values: Vec<f64>,
    steps_per_unit: u32,
}

impl Levels {
    pub fn new(traj: &Trajectory, l: &[f64]) -> Self {
        Self {
            values: traj.project(l),
            steps_per_unit: traj.steps_per_unit(),
        }
    }

    pub fn from_values(values: Vec<f64>, steps_per_unit: u32) -> Self {
        assert!(!values.is_empty());
        Self { values, steps_per_unit }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn steps_per_unit(&self) -> u32 {
        self.steps_per_unit
    }

    pub fn horizon(&self) -> f64 {
        (self.values.len() - 1) as f64 / self.steps_per_unit as f64
    }

    /// Last integer time on the grid.
    pub fn last_integer(&self) -> u64 {
        ((self.values.len() - 1) / self.steps_per_unit as usize) as u64
    }

    fn time(&self, i: usize) -> f64 {
        i as f64 / self.steps_per_unit as f64
    }

    fn index_of(&self, t: f64) -> f64 {
        (t * self.steps_per_unit as f64).clamp(0.0, (self.values.len() - 1) as f64)
    }

    /// Grid index of integer time `m`.
    pub fn integer_index(&self, m: u64) -> usize {
        (m * self.steps_per_unit as u64) as usize
    }

    pub fn at_integer(&self, m: u64) -> f64 {
        self.values[self.integer_index(m)]
    }

    /// Interpolated level at time `t`.
    pub fn at(&self, t: f64) -> f64 {
        let x = self.index_of(t);
        let i = x.floor() as usize;
        let w = x - i as f64;
        if w < SNAP || i + 1 >= self.values.len() {
            return self.values[i.min(self.values.len() - 1)];
        }
        self.values[i] + w * (self.values[i + 1] - self.values[i])
    }

    fn snap(&self, t: f64) -> f64 {
        let g = (t * self.steps_per_unit as f64).round();
        let tg = g / self.steps_per_unit as f64;
        if (t - tg).abs() < SNAP {
            tg
        } else {
            t
        }
    }

    /// First `t ≥ from` at which the level satisfies `hit`. `cross(a, b)`
    /// returns the interpolation weight in `[0, 1]` of the crossing between
    /// consecutive values `a` (not hit) and `b` (hit).
    fn first(&self, from: f64, hit: impl Fn(f64) -> bool, cross: impl Fn(f64, f64) -> f64) -> Option<f64> {
        if from > self.horizon() + SNAP {
            return None;
        }
        let v0 = self.at(from);
        if hit(v0) {
            return Some(from);
        }
        let x = self.index_of(from);
        let mut prev_t = from;
        let mut prev_v = v0;
        let mut j = (x + SNAP).floor() as usize + 1;
        while j < self.values.len() {
            let v = self.values[j];
            if hit(v) {
                let tj = self.time(j);
                let w = cross(prev_v, v).clamp(0.0, 1.0);
                let t = prev_t + w * (tj - prev_t);
                return Some(self.snap(t).clamp(prev_t, tj));
            }
            prev_t = self.time(j);
            prev_v = v;
            j += 1;
        }
        None
    }

    /// First `t ≥ from` with level `≥ u`.
    pub fn first_at_or_above(&self, from: f64, u: f64) -> Option<f64> {
        self.first(from, |v| v >= u, |a, b| (u - a) / (b - a))
    }

    /// First `t ≥ from` with level `≤ u`.
    pub fn first_at_or_below(&self, from: f64, u: f64) -> Option<f64> {
        self.first(from, |v| v <= u, |a, b| (a - u) / (a - b))
    }

    /// First `t ≥ from` with level outside the open interval `(a, b)`.
    pub fn exit_open(&self, from: f64, a: f64, b: f64) -> Option<f64> {
        match (self.first_at_or_above(from, b), self.first_at_or_below(from, a)) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        }
    }

    /// First `t ≥ from` with level outside the closed interval `[a, b]`.
    pub fn exit_closed(&self, from: f64, a: f64, b: f64) -> Option<f64> {
        let up = self.first(from, |v| v > b, |x, y| (b - x) / (y - x));
        let down = self.first(from, |v| v < a, |x, y| (x - a) / (x - y));
        match (up, down) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        }
    }

    /// First `t ≥ from` with level inside the closed interval `[a, b]`.
    pub fn enter_closed(&self, from: f64, a: f64, b: f64) -> Option<f64> {
        let v = self.at(from);
        if v < a {
            self.first_at_or_above(from, a)
        } else if v > b {
            self.first_at_or_below(from, b)
        } else {
            Some(from)
        }
    }

    /// Maximum of the interpolant on `[s, t]`.
    pub fn max_on(&self, s: f64, t: f64) -> f64 {
        self.extreme_on(s, t, f64::max)
    }

    /// Minimum of the interpolant on `[s, t]`.
    pub fn min_on(&self, s: f64, t: f64) -> f64 {
        self.extreme_on(s, t, f64::min)
    }

    fn extreme_on(&self, s: f64, t: f64, pick: fn(f64, f64) -> f64) -> f64 {
        let mut e = pick(self.at(s), self.at(t));
        let lo = (self.index_of(s) - SNAP).ceil() as usize;
        let hi = (self.index_of(t) + SNAP).floor() as usize;
        for i in lo..=hi.min(self.values.len() - 1) {
            e = pick(e, self.values[i]);
        }
        e
    }

    /// `sup_{r ∈ [s, t]} |level(r) − level(s)|`.
    pub fn oscillation_from(&self, s: f64, t: f64) -> f64 {
        let base = self.at(s);
        (self.max_on(s, t) - base).max(base - self.min_on(s, t))
    }
}

/// Which side of which threshold a first passage refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitMode {
    /// `l · X_t ≥ u`
    AbsGe,
    /// `l · X_t ≤ u`
    AbsLe,
    /// `l · (X_t − X_0) ≥ u`
    RelGe,
    /// `l · (X_t − X_0) ≤ u`
    RelLe,
}

/// First passage time of the projected path, `None` if not reached by the horizon.
pub fn hitting_time(traj: &Trajectory, l: &[f64], u: f64, mode: HitMode) -> Option<f64> {
    let lv = Levels::new(traj, l);
    let x0 = lv.values[0];
    match mode {
        HitMode::AbsGe => lv.first_at_or_above(0.0, u),
        HitMode::AbsLe => lv.first_at_or_below(0.0, u),
        HitMode::RelGe => lv.first_at_or_above(0.0, x0 + u),
        HitMode::RelLe => lv.first_at_or_below(0.0, x0 + u),
    }
}

/// The slab `{a < l·x < b}`, or its closure when `closed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabSpec {
    pub l: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub closed: bool,
}

impl SlabSpec {
    pub fn new(l: Vec<f64>, a: f64, b: f64, closed: bool) -> Result<Self> {
        check_direction(&l, l.len())?;
        if !(a < b) {
            return Err(Error::Argument(format!("slab needs a < b, got ({a}, {b})")));
        }
        Ok(Self { l, a, b, closed })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let p: f64 = x.iter().zip(&self.l).map(|(a, b)| a * b).sum();
        if self.closed {
            self.a <= p && p <= self.b
        } else {
            self.a < p && p < self.b
        }
    }
}

/// First exit time from the slab (0 if the path starts outside).
pub fn slab_exit_time(traj: &Trajectory, slab: &SlabSpec) -> Option<f64> {
    let lv = Levels::new(traj, &slab.l);
    if slab.closed {
        lv.exit_closed(0.0, slab.a, slab.b)
    } else {
        lv.exit_open(0.0, slab.a, slab.b)
    }
}

/// `sup_{0 ≤ s ≤ t} l · X_s` on the interpolated path.
pub fn running_max(traj: &Trajectory, l: &[f64], t: f64) -> Result<f64> {
    if !(0.0..=traj.horizon() + SNAP).contains(&t) {
        return Err(Error::Argument(format!("time {t} outside [0, {}]", traj.horizon())));
    }
    Ok(Levels::new(traj, l).max_on(0.0, t))
}

/// A duration that may be infinite by convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HValue {
    Finite(f64),
    Infinite,
}

impl HValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, HValue::Finite(_))
    }

    /// `self ≤ h` with `∞ ≤ h` false for every finite `h`.
    pub fn at_most(&self, h: f64) -> bool {
        match self {
            HValue::Finite(v) => *v <= h + SNAP,
            HValue::Infinite => false,
        }
    }
}

/// Long-visit statistics around the slab `(mL, (m+1)L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationStats {
    pub m: u64,
    pub alpha: u64,
    /// Number of entrances into the inner slab followed by at least one time
    /// unit inside the outer slab, before level `(m + α)L` is reached.
    pub count: u64,
    /// Index of the last such entrance (0 if none).
    pub k: u64,
    pub h: HValue,
    /// Entrance and exit times `(R_k, S_k)`, in order; a trailing visit still
    /// open at the horizon has no exit and is omitted.
    pub visits: Vec<(f64, f64)>,
}

/// Entrance/exit bookkeeping for slab index `m` at scale `L = 3L'`.
pub fn oscillation_stats(traj: &Trajectory, l: &[f64], big_l: f64, m: u64, alpha: u64) -> Result<OscillationStats> {
    check_direction(l, traj.dim())?;
    check_scale(big_l, alpha)?;
    Ok(oscillation_stats_levels(&Levels::new(traj, l), big_l, m, alpha))
}

fn check_scale(big_l: f64, alpha: u64) -> Result<()> {
    if alpha < 2 {
        return Err(Error::Argument("look-ahead multiplier α must be at least 2".into()));
    }
    if !(big_l > 0.0) || !big_l.is_finite() {
        return Err(Error::Argument("level scale L must be positive and finite".into()));
    }
    Ok(())
}

pub(crate) fn oscillation_stats_levels(lv: &Levels, big_l: f64, m: u64, alpha: u64) -> OscillationStats {
    assert!(alpha >= 2, "look-ahead multiplier must be at least 2");
    assert!(big_l > 0.0);
    let lp = big_l / 3.0;
    let base = m as f64 * big_l;
    let t_target = lv.first_at_or_above(0.0, base + alpha as f64 * big_l);
    let t_base = lv.first_at_or_above(0.0, base);

    let mut visits = Vec::new();
    let mut from = 0.0;
    while let Some(r) = lv.enter_closed(from, base + lp, base + 2.0 * lp) {
        let Some(s) = lv.exit_open(r, base, base + big_l) else { break };
        visits.push((r, s));
        if t_target.is_some_and(|t| s >= t) {
            break;
        }
        from = s;
    }

    let mut count = 0;
    let mut k = 0;
    if let Some(tt) = t_target {
        for (i, &(r, s)) in visits.iter().enumerate() {
            if r + 1.0 <= s + SNAP && s < tt {
                count += 1;
                k = i as u64 + 1;
            }
        }
    }
    let h = match (t_target, t_base) {
        (Some(_), Some(tb)) => {
            let s_k = if k == 0 { tb } else { visits[k as usize - 1].1 };
            HValue::Finite(s_k - tb)
        }
        _ => HValue::Infinite,
    };
    OscillationStats {
        m,
        alpha,
        count,
        k,
        h,
        visits,
    }
}

/// `(1 / (M + 1)) Σ_{m=0}^{M} 1{h_α^(m) ≤ h}`.
pub fn oscillation_fraction(traj: &Trajectory, l: &[f64], big_l: f64, h: f64, alpha: u64, max_m: u64) -> Result<f64> {
    check_direction(l, traj.dim())?;
    check_scale(big_l, alpha)?;
    let lv = Levels::new(traj, l);
    let hits = (0..=max_m)
        .filter(|&m| oscillation_stats_levels(&lv, big_l, m, alpha).h.at_most(h))
        .count();
    Ok(hits as f64 / (max_m + 1) as f64)
}

/// Parameters of the no-backtracking event around slab `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmParams {
    pub m: u64,
    /// Level scale `L`; the inner unit is `L' = L / 3`.
    pub big_l: f64,
    pub h0: u64,
    pub k: u64,
    pub alpha: u64,
}

/// True iff at `T_{mL} + h₀` the path is in `(mL + 2L', (m + K)L)`, this time
/// precedes `T_{(m+α)L}`, and afterwards level `(m+α)L` is reached before
/// the path drops to `mL + 2L'`.
pub fn event_cm(traj: &Trajectory, l: &[f64], p: &CmParams) -> Result<bool> {
    check_direction(l, traj.dim())?;
    check_scale(p.big_l, p.alpha)?;
    Ok(event_cm_levels(&Levels::new(traj, l), p))
}

pub(crate) fn event_cm_levels(lv: &Levels, p: &CmParams) -> bool {
    let lp = p.big_l / 3.0;
    let base = p.m as f64 * p.big_l;
    let floor = base + 2.0 * lp;
    let target = base + p.alpha as f64 * p.big_l;
    let Some(tb) = lv.first_at_or_above(0.0, base) else { return false };
    let t0 = tb + p.h0 as f64;
    if t0 > lv.horizon() + SNAP {
        return false;
    }
    let x = lv.at(t0);
    if !(floor < x && x < base + p.k as f64 * p.big_l) {
        return false;
    }
    match lv.first_at_or_above(0.0, target) {
        Some(tt) if tt <= t0 => return false,
        _ => {}
    }
    let Some(up) = lv.first_at_or_above(t0, target) else { return false };
    match lv.first_at_or_below(t0, floor) {
        Some(down) => down > up,
        None => true,
    }
}
