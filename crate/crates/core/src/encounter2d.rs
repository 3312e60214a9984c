//! Close encounters of two diffusions in the same environment, restricted to
//! a slab between their starting levels.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env_field::{make_environment, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::path_events::check_direction;
use crate::rng::{derive_key, tag};
use crate::sde_sim::{simulate_path, SimConfig, Trajectory};
use crate::stats::Proportion;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimum Euclidean distance between segments `[p0, p1]` and `[q0, q1]`.
pub fn segment_distance(p0: &[f64], p1: &[f64], q0: &[f64], q1: &[f64]) -> f64 {
    let d1: Vec<f64> = p1.iter().zip(p0).map(|(a, b)| a - b).collect();
    let d2: Vec<f64> = q1.iter().zip(q0).map(|(a, b)| a - b).collect();
    let r: Vec<f64> = p0.iter().zip(q0).map(|(a, b)| a - b).collect();
    let a = dot(&d1, &d1);
    let e = dot(&d2, &d2);
    let f = dot(&d2, &r);
    const EPS: f64 = 1e-300;
    let (s, t) = if a <= EPS && e <= EPS {
        (0.0, 0.0)
    } else if a <= EPS {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = dot(&d1, &r);
        if e <= EPS {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = dot(&d1, &d2);
            let denom = a * e - b * b;
            let mut s = if denom > 1e-14 * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    p0.iter()
        .zip(&d1)
        .zip(q0.iter().zip(&d2))
        .map(|((p, dp), (q, dq))| {
            let diff = (p + s * dp) - (q + t * dq);
            diff * diff
        })
        .sum::<f64>()
        .sqrt()
}

/// Portions of the polyline whose projection on `l` lies in `[lo, hi]`.
fn clip_segments(traj: &Trajectory, l: &[f64], lo: f64, hi: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = Vec::new();
    let n = traj.len();
    if n == 1 {
        let p = traj.point(0);
        let v = dot(p, l);
        if lo <= v && v <= hi {
            out.push((p.to_vec(), p.to_vec()));
        }
        return out;
    }
    for i in 0..n - 1 {
        let (p, q) = (traj.point(i), traj.point(i + 1));
        let (a, b) = (dot(p, l), dot(q, l));
        // parameter range where lo ≤ a + s (b − a) ≤ hi
        let (mut s0, mut s1) = (0.0f64, 1.0f64);
        if a == b {
            if a < lo || a > hi {
                continue;
            }
        } else {
            let (u, v) = ((lo - a) / (b - a), (hi - a) / (b - a));
            s0 = s0.max(u.min(v));
            s1 = s1.min(u.max(v));
            if s0 > s1 {
                continue;
            }
        }
        let at = |s: f64| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x + s * (y - x)).collect() };
        out.push((at(s0), at(s1)));
    }
    out
}

fn cell_range(a: &[f64], b: &[f64], pad: f64, cell: f64) -> (Vec<i64>, Vec<i64>) {
    let lo = a.iter().zip(b).map(|(x, y)| ((x.min(*y) - pad) / cell).floor() as i64).collect();
    let hi = a.iter().zip(b).map(|(x, y)| ((x.max(*y) + pad) / cell).floor() as i64).collect();
    (lo, hi)
}

fn for_each_cell(lo: &[i64], hi: &[i64], mut f: impl FnMut(&[i64])) {
    let mut cur = lo.to_vec();
    loop {
        f(&cur);
        let mut k = 0;
        loop {
            if k == cur.len() {
                return;
            }
            if cur[k] < hi[k] {
                cur[k] += 1;
                break;
            }
            cur[k] = lo[k];
            k += 1;
        }
    }
}

/// True iff some interpolated points `X_s`, `Y_t`, both with projection in
/// the slab `(L, y_level − L)`, satisfy `|X_s − Y_t| < 2R`.
pub fn pair_encounter(x: &Trajectory, y: &Trajectory, l: &[f64], big_l: f64, y_level: f64, range: f64) -> Result<bool> {
    check_direction(l, x.dim())?;
    if y.dim() != x.dim() {
        return Err(Error::Argument("paths must share dimension".into()));
    }
    let (lo, hi) = (big_l, y_level - big_l);
    if !(lo < hi) {
        return Ok(false);
    }
    let xs = clip_segments(x, l, lo, hi);
    let ys = clip_segments(y, l, lo, hi);
    if xs.is_empty() || ys.is_empty() {
        return Ok(false);
    }
    let reach = 2.0 * range;
    let cell = reach;
    let mut grid: HashMap<Vec<i64>, Vec<u32>> = HashMap::new();
    for (i, (a, b)) in xs.iter().enumerate() {
        let (clo, chi) = cell_range(a, b, 0.0, cell);
        for_each_cell(&clo, &chi, |c| grid.entry(c.to_vec()).or_default().push(i as u32));
    }
    let mut seen = vec![u32::MAX; xs.len()];
    for (j, (a, b)) in ys.iter().enumerate() {
        let (clo, chi) = cell_range(a, b, reach, cell);
        let mut hit = false;
        for_each_cell(&clo, &chi, |c| {
            if hit {
                return;
            }
            if let Some(ids) = grid.get(c) {
                for &i in ids {
                    if seen[i as usize] == j as u32 {
                        continue;
                    }
                    seen[i as usize] = j as u32;
                    let (p, q) = &xs[i as usize];
                    if segment_distance(p, q, a, b) < reach {
                        hit = true;
                        return;
                    }
                }
            }
        });
        if hit {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Two-walker experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncounterConfig {
    /// Level `L`.
    pub level: f64,
    /// Start of the second walker; defaults to `3L · l`.
    #[serde(default)]
    pub partner_start: Option<Vec<f64>>,
    pub replicates: usize,
    /// Horizon of both walkers.
    pub horizon: f64,
}

impl EncounterConfig {
    pub fn partner(&self, l: &[f64]) -> Vec<f64> {
        self.partner_start
            .clone()
            .unwrap_or_else(|| l.iter().map(|v| 3.0 * self.level * v).collect())
    }

    pub fn validate(&self, l: &[f64], range: f64) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Argument("encounter experiment needs at least one replicate".into()));
        }
        if !(self.level >= 4.0 * range) {
            return Err(Error::config("encounter.level", format!("must be at least 4R = {}", 4.0 * range)));
        }
        let y = self.partner(l);
        if y.len() != l.len() {
            return Err(Error::config("encounter.partner_start", "has the wrong dimension"));
        }
        if dot(&y, l) < 3.0 * self.level - 1e-12 {
            return Err(Error::config("encounter.partner_start", "projection must be at least 3L"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterResult {
    pub level: f64,
    pub partner_start: Vec<f64>,
    pub n: u64,
    pub encounters: u64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl EncounterResult {
    pub fn proportion(&self) -> Proportion {
        Proportion::wilson95(self.encounters, self.n)
    }
}

/// Fraction of replicate pairs that meet. Replicate `i` draws a fresh
/// environment and two independent noises from `master_seed`.
pub fn encounter_probability(env: &EnvironmentSpec, cfg: &EncounterConfig, l: &[f64], steps_per_unit: u32, master_seed: u64) -> Result<EncounterResult> {
    if cfg.replicates == 0 {
        return Err(Error::Argument("encounter experiment needs at least one replicate".into()));
    }
    check_direction(l, env.dimension)?;
    cfg.validate(l, env.dependence_range)?;
    let y0 = cfg.partner(l);
    let x0 = vec![0.0; env.dimension];
    let y_level = dot(&y0, l);
    let base = SimConfig::with_steps(steps_per_unit, cfg.horizon, 0)?;
    let hits: Vec<bool> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|i| -> Result<bool> {
            let e = make_environment(env.with_seed(derive_key(master_seed, i, tag::ENVIRONMENT)))?;
            let px = simulate_path(&e, &x0, &base.with_seed(derive_key(master_seed, i, tag::REPLICATE)));
            let py = simulate_path(&e, &y0, &base.with_seed(derive_key(master_seed, i, tag::PARTNER)));
            pair_encounter(&px, &py, l, cfg.level, y_level, env.dependence_range)
        })
        .collect::<Result<_>>()?;
    let encounters = hits.iter().filter(|&&h| h).count() as u64;
    let p = Proportion::wilson95(encounters, cfg.replicates as u64);
    Ok(EncounterResult {
        level: cfg.level,
        partner_start: y0,
        n: cfg.replicates as u64,
        encounters,
        estimate: p.estimate,
        ci_low: p.ci_low,
        ci_high: p.ci_high,
    })
}
