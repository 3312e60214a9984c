//! Euler-Maruyama integration of `dX = σ(X) dβ + b(X) dt` on a uniform grid.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env_field::CoefficientField;
use crate::error::{Error, Result};
use crate::rng::{derive_key, tag, CounterRng};

/// Symmetric square root of a symmetric positive definite matrix (row-major).
pub fn matrix_sqrt(a: &[f64], d: usize) -> Result<Vec<f64>> {
    if a.len() != d * d {
        return Err(Error::Argument(format!("expected {} entries, got {}", d * d, a.len())));
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..d {
        for j in 0..i {
            if (a[i * d + j] - a[j * d + i]).abs() > 1e-12 * scale {
                return Err(Error::NumericalDomain(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let m = nalgebra::DMatrix::from_row_slice(d, d, a);
    let eig = m.symmetric_eigen();
    if let Some(&lo) = eig.eigenvalues.iter().min_by(|x, y| x.total_cmp(y)) {
        if !(lo > 0.0) {
            return Err(Error::NumericalDomain(format!(
                "matrix is not positive definite (smallest eigenvalue {lo})"
            )));
        }
    }
    let roots = eig.eigenvalues.map(f64::sqrt);
    let q = &eig.eigenvectors;
    let s = q * nalgebra::DMatrix::from_diagonal(&roots) * q.transpose();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            // symmetrise the rounding noise away
            out[i * d + j] = 0.5 * (s[(i, j)] + s[(j, i)]);
        }
    }
    Ok(out)
}

/// Square root used inside the integrator. `d ≤ 2` uses the closed forms of
/// the principal root; larger dimensions go through the eigendecomposition.
#[inline]
pub(crate) fn sqrt_spd_into(a: &[f64], d: usize, out: &mut [f64]) {
    match d {
        1 => out[0] = a[0].sqrt(),
        2 => {
            // √A = (A + sI) / t with s = √det A, t = √(tr A + 2s).
            let s = (a[0] * a[3] - a[1] * a[2]).sqrt();
            let t = (a[0] + a[3] + 2.0 * s).sqrt();
            out[0] = (a[0] + s) / t;
            out[1] = a[1] / t;
            out[2] = a[2] / t;
            out[3] = (a[3] + s) / t;
        }
        _ => {
            let r = matrix_sqrt(a, d).expect("coefficient field must yield SPD diffusion matrices");
            out.copy_from_slice(&r);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    EulerMaruyama,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawSimConfig {
    dt: f64,
    horizon: f64,
    #[serde(default)]
    replicate_seed: u64,
    #[serde(default)]
    integrator: Integrator,
}

/// Time step, horizon and noise seed. `dt` is always `1/n` for an integer
/// `n ≥ 4` and the horizon is a whole number of steps, so integer times are
/// grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSimConfig", into = "RawSimConfig")]
pub struct SimConfig {
    steps_per_unit: u32,
    total_steps: u64,
    replicate_seed: u64,
    integrator: Integrator,
}

impl TryFrom<RawSimConfig> for SimConfig {
    type Error = Error;

    fn try_from(raw: RawSimConfig) -> Result<Self> {
        SimConfig::new(raw.dt, raw.horizon, raw.replicate_seed)
    }
}

impl From<SimConfig> for RawSimConfig {
    fn from(c: SimConfig) -> Self {
        RawSimConfig {
            dt: c.dt(),
            horizon: c.horizon(),
            replicate_seed: c.replicate_seed,
            integrator: c.integrator,
        }
    }
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, replicate_seed: u64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::config("simulation.dt", "must be positive"));
        }
        let inv = 1.0 / dt;
        let n = inv.round();
        if (inv - n).abs() > 1e-9 * n || n < 4.0 || n > u32::MAX as f64 {
            return Err(Error::config("simulation.dt", format!("must be 1/n for an integer n ≥ 4, got {dt}")));
        }
        Self::with_steps(n as u32, horizon, replicate_seed)
    }

    /// Construct from the number of steps per unit time.
    pub fn with_steps(steps_per_unit: u32, horizon: f64, replicate_seed: u64) -> Result<Self> {
        if steps_per_unit < 4 {
            return Err(Error::config("simulation.dt", "needs at least 4 steps per unit time"));
        }
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::config("simulation.horizon", "must be finite and non-negative"));
        }
        let steps = horizon * steps_per_unit as f64;
        let rounded = steps.round();
        if (steps - rounded).abs() > 1e-6 {
            return Err(Error::config("simulation.horizon", "must be a whole number of time steps"));
        }
        Ok(Self {
            steps_per_unit,
            total_steps: rounded as u64,
            replicate_seed,
            integrator: Integrator::EulerMaruyama,
        })
    }

    pub fn steps_per_unit(&self) -> u32 {
        self.steps_per_unit
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps_per_unit as f64
    }

    pub fn horizon(&self) -> f64 {
        self.total_steps as f64 / self.steps_per_unit as f64
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn replicate_seed(&self) -> u64 {
        self.replicate_seed
    }

    pub fn integrator(&self) -> Integrator {
        self.integrator
    }

    pub fn with_seed(&self, replicate_seed: u64) -> Self {
        Self {
            replicate_seed,
            ..self.clone()
        }
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::with_steps(self.steps_per_unit, horizon, self.replicate_seed)
    }

    /// Noise stream for the driving Brownian motion.
    pub(crate) fn noise(&self) -> CounterRng {
        CounterRng::new(derive_key(self.replicate_seed, 0, tag::NOISE))
    }
}

/// A sampled path on the grid `t_i = i / steps_per_unit`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    steps_per_unit: u32,
    points: Vec<f64>,
}

impl Trajectory {
    /// Build from flattened points (`len = dim * (steps + 1)`).
    pub fn from_points(dim: usize, steps_per_unit: u32, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::Argument("trajectory needs at least one point of the given dimension".into()));
        }
        if steps_per_unit == 0 {
            return Err(Error::Argument("steps_per_unit must be positive".into()));
        }
        Ok(Self {
            dim,
            steps_per_unit,
            points,
        })
    }

    /// Sample `f` on the grid over `[0, horizon]`.
    pub fn from_fn(dim: usize, steps_per_unit: u32, horizon: f64, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let steps = (horizon * steps_per_unit as f64).round() as usize;
        let mut points = Vec::with_capacity(dim * (steps + 1));
        for i in 0..=steps {
            let p = f(i as f64 / steps_per_unit as f64);
            assert_eq!(p.len(), dim);
            points.extend_from_slice(&p);
        }
        Self {
            dim,
            steps_per_unit,
            points,
        }
    }

    /// Piecewise-linear path through `(t, x)` knots (times increasing, first at 0).
    pub fn polyline(steps_per_unit: u32, knots: &[(f64, Vec<f64>)]) -> Self {
        assert!(!knots.is_empty() && knots[0].0 == 0.0);
        let dim = knots[0].1.len();
        let horizon = knots.last().unwrap().0;
        Self::from_fn(dim, steps_per_unit, horizon, |t| {
            let k = knots.partition_point(|(s, _)| *s <= t).max(1);
            if k >= knots.len() {
                return knots.last().unwrap().1.clone();
            }
            let (t0, x0) = &knots[k - 1];
            let (t1, x1) = &knots[k];
            let w = (t - t0) / (t1 - t0);
            x0.iter().zip(x1).map(|(a, b)| a + w * (b - a)).collect()
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps_per_unit(&self) -> u32 {
        self.steps_per_unit
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps_per_unit as f64
    }

    /// Number of grid points (`steps + 1`).
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        (self.len() - 1) as f64 / self.steps_per_unit as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.steps_per_unit as f64
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn start(&self) -> &[f64] {
        self.point(0)
    }

    pub fn end(&self) -> &[f64] {
        self.point(self.len() - 1)
    }

    /// Grid point at integer time `m`.
    pub fn at_integer(&self, m: u64) -> &[f64] {
        self.point((m * self.steps_per_unit as u64) as usize)
    }

    /// Interpolated position at time `t` (clamped to the horizon).
    pub fn position_at(&self, t: f64) -> Vec<f64> {
        let x = (t * self.steps_per_unit as f64).clamp(0.0, (self.len() - 1) as f64);
        let i = (x.floor() as usize).min(self.len() - 1);
        let w = x - i as f64;
        if i + 1 >= self.len() || w == 0.0 {
            return self.point(i).to_vec();
        }
        self.point(i)
            .iter()
            .zip(self.point(i + 1))
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }

    /// Projections `l · X_{t_i}` on the grid.
    pub fn project(&self, l: &[f64]) -> Vec<f64> {
        assert_eq!(l.len(), self.dim);
        self.points
            .chunks_exact(self.dim)
            .map(|p| p.iter().zip(l).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// CSV with columns `t, x1, ..., xd`, optionally keeping every `stride`-th row.
    pub fn write_csv<W: Write>(&self, mut w: W, stride: usize) -> std::io::Result<()> {
        let stride = stride.max(1);
        write!(w, "t")?;
        for k in 1..=self.dim {
            write!(w, ",x{k}")?;
        }
        writeln!(w)?;
        for i in (0..self.len()).step_by(stride) {
            write!(w, "{}", self.time(i))?;
            for v in self.point(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Scratch buffers for one Euler-Maruyama step.
pub(crate) struct StepScratch {
    a: Vec<f64>,
    b: Vec<f64>,
    sigma: Vec<f64>,
    xi: Vec<f64>,
}

impl StepScratch {
    pub(crate) fn new(d: usize) -> Self {
        Self {
            a: vec![0.0; d * d],
            b: vec![0.0; d],
            sigma: vec![0.0; d * d],
            xi: vec![0.0; d],
        }
    }

    /// `x_next = x + b(x) dt + σ(x) √dt ξ`, with `ξ` read from `noise` at
    /// counters `step * d .. step * d + d`.
    #[inline]
    pub(crate) fn euler_step<F: CoefficientField + ?Sized>(
        &mut self,
        field: &F,
        noise: &CounterRng,
        step: u64,
        dt: f64,
        x: &[f64],
        x_next: &mut [f64],
    ) {
        let d = x.len();
        field.eval_into(x, &mut self.a, &mut self.b);
        sqrt_spd_into(&self.a, d, &mut self.sigma);
        for (j, xi) in self.xi.iter_mut().enumerate() {
            *xi = noise.normal(step * d as u64 + j as u64);
        }
        let sq = dt.sqrt();
        for i in 0..d {
            let mut diff = 0.0;
            for j in 0..d {
                diff += self.sigma[i * d + j] * self.xi[j];
            }
            x_next[i] = x[i] + self.b[i] * dt + diff * sq;
        }
    }

    pub(crate) fn sigma_at<F: CoefficientField + ?Sized>(&mut self, field: &F, x: &[f64]) -> &[f64] {
        field.eval_into(x, &mut self.a, &mut self.b);
        sqrt_spd_into(&self.a, x.len(), &mut self.sigma);
        &self.sigma
    }
}

/// Integrate the quenched SDE from `x0` over `[0, cfg.horizon()]`.
pub fn simulate_path<F: CoefficientField + ?Sized>(field: &F, x0: &[f64], cfg: &SimConfig) -> Trajectory {
    let d = field.dimension();
    assert_eq!(x0.len(), d, "start point has wrong dimension");
    let steps = cfg.total_steps() as usize;
    let dt = cfg.dt();
    let noise = cfg.noise();
    let mut points = vec![0.0; d * (steps + 1)];
    points[..d].copy_from_slice(x0);
    let mut scratch = StepScratch::new(d);
    for i in 0..steps {
        let (head, tail) = points.split_at_mut((i + 1) * d);
        scratch.euler_step(field, &noise, i as u64, dt, &head[i * d..], &mut tail[..d]);
    }
    Trajectory {
        dim: d,
        steps_per_unit: cfg.steps_per_unit(),
        points,
    }
}
