//! Stationary random coefficient fields `(a(x), b(x))`.
//!
//! A random environment is realised as a mollified i.i.d. lattice field:
//! each lattice site carries independent uniforms on `[-1, 1]` keyed on
//! `(master_seed, site)`, and every coefficient entry is the weighted average
//! of the site values within `kernel_radius` under a C² polynomial bump.
//! Two points further than `2 * kernel_radius` apart share no sites, so with
//! `2ρ ≤ R` coefficients on sets at distance ≥ R are independent. The lattice
//! is displaced by a seed-dependent uniform offset, which makes the law of the
//! field invariant under every translation, not only lattice translations.
//!
//! Coefficients are mapped into admissible ranges:
//!
//! * `b(x) = drift_mean + drift_amplitude * G(x)` with `|G(x)| ≤ 1`,
//! * `a(x) = I + δ S(x)` with `S` symmetric and entries in `[-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_key, mix64, tag, CounterRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentMode {
    /// `a ≡ I`, `b ≡ drift_mean`.
    Constant,
    RandomField,
}

/// Parameters of the environment law. Validated by [`EnvironmentSpec::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub dimension: usize,
    /// Range of dependence `R`.
    pub dependence_range: f64,
    /// Ellipticity constant `ν > 1`.
    pub ellipticity: f64,
    /// Bound `K̄ > 1` on `|b| + |a|` and on the Lipschitz constant.
    pub coefficient_bound: f64,
    pub lattice_spacing: f64,
    pub kernel_radius: f64,
    pub drift_mean: Vec<f64>,
    pub drift_amplitude: f64,
    /// `δ` in `a = I + δ S`.
    pub diffusion_amplitude: f64,
    pub master_seed: u64,
    pub mode: EnvironmentMode,
}

impl EnvironmentSpec {
    /// Constant coefficients `a = I`, `b = drift`, with dependence range `range`.
    pub fn constant(drift: Vec<f64>, range: f64) -> Self {
        let d = drift.len();
        let norm = drift.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self {
            dimension: d,
            dependence_range: range,
            ellipticity: 2.0,
            coefficient_bound: (norm + d as f64 + 1.0).max(2.0),
            lattice_spacing: range / 4.0,
            kernel_radius: range / 2.0,
            drift_mean: drift,
            drift_amplitude: 0.0,
            diffusion_amplitude: 0.0,
            master_seed: 0,
            mode: EnvironmentMode::Constant,
        }
    }

    /// Random field with the default geometry `ρ = R/2`, `s = R/4`, the largest
    /// admissible `δ` for the given ellipticity, and the smallest admissible `K̄`
    /// (rounded up).
    pub fn random_field(
        drift_mean: Vec<f64>,
        drift_amplitude: f64,
        range: f64,
        ellipticity: f64,
        master_seed: u64,
    ) -> Self {
        let d = drift_mean.len();
        let mut spec = Self {
            dimension: d,
            dependence_range: range,
            ellipticity,
            coefficient_bound: f64::INFINITY,
            lattice_spacing: range / 4.0,
            kernel_radius: range / 2.0,
            drift_mean,
            drift_amplitude,
            diffusion_amplitude: calibrated_diffusion_amplitude(ellipticity, d),
            master_seed,
            mode: EnvironmentMode::RandomField,
        };
        let needed = spec.size_bound().max(spec.lipschitz_bound()).max(1.0);
        spec.coefficient_bound = (needed * 1.05 * 100.0).ceil() / 100.0;
        spec
    }

    pub fn with_seed(&self, master_seed: u64) -> Self {
        Self {
            master_seed,
            ..self.clone()
        }
    }

    /// Upper bound on `|b(x)| + |a(x)|_F` implied by the construction.
    pub fn size_bound(&self) -> f64 {
        let d = self.dimension as f64;
        let mean = self.drift_mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        match self.mode {
            EnvironmentMode::Constant => mean + d.sqrt(),
            EnvironmentMode::RandomField => {
                mean + self.drift_amplitude + d + self.diffusion_amplitude * d
            }
        }
    }

    /// Upper bound on the Lipschitz constant of `x ↦ (b(x), a(x))`.
    pub fn lipschitz_bound(&self) -> f64 {
        match self.mode {
            EnvironmentMode::Constant => 0.0,
            EnvironmentMode::RandomField => {
                let d = self.dimension as f64;
                let kernel = Kernel {
                    dimension: self.dimension,
                    spacing: self.lattice_spacing,
                    radius: self.kernel_radius,
                };
                (self.drift_amplitude + self.diffusion_amplitude * d) * kernel.average_gradient_bound()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if d == 0 {
            return Err(Error::config("environment.dimension", "must be at least 1"));
        }
        if self.drift_mean.len() != d {
            return Err(Error::config(
                "environment.drift_mean",
                format!("has {} entries, dimension is {d}", self.drift_mean.len()),
            ));
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("environment.{name}"), format!("must be positive and finite, got {v}")))
            }
        };
        positive("dependence_range", self.dependence_range)?;
        positive("lattice_spacing", self.lattice_spacing)?;
        positive("kernel_radius", self.kernel_radius)?;
        if !(self.ellipticity > 1.0) {
            return Err(Error::config("environment.ellipticity", "must exceed 1"));
        }
        if !(self.coefficient_bound > 1.0) {
            return Err(Error::config("environment.coefficient_bound", "must exceed 1"));
        }
        if self.drift_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("environment.drift_mean", "entries must be finite"));
        }
        if !(self.drift_amplitude >= 0.0) || !(self.diffusion_amplitude >= 0.0) {
            return Err(Error::config(
                "environment.drift_amplitude/diffusion_amplitude",
                "must be non-negative",
            ));
        }
        if self.mode == EnvironmentMode::Constant {
            if self.size_bound() > self.coefficient_bound {
                return Err(Error::config(
                    "environment.coefficient_bound",
                    format!("|b| + |a| can reach {:.4} > K̄ = {}", self.size_bound(), self.coefficient_bound),
                ));
            }
            return Ok(());
        }
        if 2.0 * self.kernel_radius > self.dependence_range {
            return Err(Error::config(
                "environment.kernel_radius",
                format!(
                    "2ρ = {} exceeds the dependence range R = {}",
                    2.0 * self.kernel_radius,
                    self.dependence_range
                ),
            ));
        }
        if self.kernel_radius <= 0.5 * self.lattice_spacing * (d as f64).sqrt() {
            return Err(Error::config(
                "environment.lattice_spacing",
                "kernel radius must exceed half the lattice cell diagonal so every point sees a site",
            ));
        }
        let spread = self.diffusion_amplitude * d as f64;
        let nu = self.ellipticity;
        if 1.0 - spread < 1.0 / nu || 1.0 + spread > nu {
            return Err(Error::config(
                "environment.diffusion_amplitude",
                format!(
                    "eigenvalues of a can reach [{:.4}, {:.4}], outside [1/ν, ν] = [{:.4}, {nu}]",
                    1.0 - spread,
                    1.0 + spread,
                    1.0 / nu
                ),
            ));
        }
        if self.size_bound() > self.coefficient_bound {
            return Err(Error::config(
                "environment.coefficient_bound",
                format!(
                    "|drift_mean| + drift_amplitude + d + δ·d = {:.4} exceeds K̄ = {}",
                    self.size_bound(),
                    self.coefficient_bound
                ),
            ));
        }
        let lip = self.lipschitz_bound();
        if lip > self.coefficient_bound {
            return Err(Error::config(
                "environment.coefficient_bound",
                format!("Lipschitz bound {lip:.4} exceeds K̄ = {}", self.coefficient_bound),
            ));
        }
        Ok(())
    }
}

/// Largest `δ` keeping the spectrum of `I + δS` inside `[1/ν, ν]` when
/// `S` has entries in `[-1, 1]` (so `|λ(S)| ≤ d`).
pub fn calibrated_diffusion_amplitude(ellipticity: f64, dimension: usize) -> f64 {
    (1.0 - 1.0 / ellipticity).min(ellipticity - 1.0) / dimension as f64
}

/// `(1 - r²)³` on the unit ball; C² at the boundary.
#[inline]
fn bump(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        let u = 1.0 - r2;
        u * u * u
    }
}

/// `|d/dr bump|` as a function of `r`.
#[inline]
fn bump_slope(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        let u = 1.0 - r * r;
        6.0 * r * u * u
    }
}

#[derive(Debug, Clone, Copy)]
struct Kernel {
    dimension: usize,
    spacing: f64,
    radius: f64,
}

impl Kernel {
    /// Visit every lattice site within `radius` of `p` (lattice coordinates
    /// already include the seed offset) with its weight.
    fn for_each_site(&self, p: &[f64], mut visit: impl FnMut(&[i64], f64)) {
        let d = self.dimension;
        let reach = self.radius / self.spacing;
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for k in 0..d {
            let u = p[k] / self.spacing;
            lo[k] = (u - reach).ceil() as i64;
            hi[k] = (u + reach).floor() as i64;
        }
        let mut idx = lo;
        let inv_r2 = 1.0 / (self.radius * self.radius);
        loop {
            let mut r2 = 0.0;
            for k in 0..d {
                let dx = p[k] - idx[k] as f64 * self.spacing;
                r2 += dx * dx;
            }
            let w = bump(r2 * inv_r2);
            if w > 0.0 {
                visit(&idx[..d], w);
            }
            // odometer increment
            let mut k = 0;
            loop {
                if k == d {
                    return;
                }
                if idx[k] < hi[k] {
                    idx[k] += 1;
                    break;
                }
                idx[k] = lo[k];
                k += 1;
            }
        }
    }

    /// Bound on `sup |∇F|` for a weighted average `F = Σ ξ w / Σ w` with
    /// `|ξ| ≤ 1`: `|∇F| ≤ 2 Σ|∇w| / Σw`. The supremum over one lattice cell is
    /// taken on a fine grid and inflated by 10%.
    fn average_gradient_bound(&self) -> f64 {
        let d = self.dimension;
        let per_axis: usize = match d {
            1 => 400,
            2 => 48,
            3 => 16,
            _ => 6,
        };
        let total = per_axis.pow(d as u32);
        let mut worst: f64 = 0.0;
        let mut p = [0.0f64; MAX_DIM];
        for flat in 0..total {
            let mut rem = flat;
            for pk in p.iter_mut().take(d) {
                *pk = (rem % per_axis) as f64 / per_axis as f64 * self.spacing;
                rem /= per_axis;
            }
            let mut wsum = 0.0;
            let mut gsum = 0.0;
            self.for_each_site(&p[..d], |site, w| {
                let mut r2 = 0.0;
                for k in 0..d {
                    let dx = p[k] - site[k] as f64 * self.spacing;
                    r2 += dx * dx;
                }
                let r = r2.sqrt() / self.radius;
                wsum += w;
                gsum += bump_slope(r) / self.radius;
            });
            worst = worst.max(2.0 * gsum / wsum);
        }
        worst * 1.1
    }
}

pub(crate) const MAX_DIM: usize = 8;

/// Coefficients at a point: `a` row-major `d×d`, `b` length `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Anything that can supply diffusion and drift coefficients pointwise.
///
/// `a` must be symmetric positive definite.
pub trait CoefficientField: Sync {
    fn dimension(&self) -> usize;

    /// Write `a(x)` (row-major) and `b(x)` into the provided buffers.
    fn eval_into(&self, x: &[f64], a: &mut [f64], b: &mut [f64]);

    fn eval(&self, x: &[f64]) -> Coefficients {
        let d = self.dimension();
        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        self.eval_into(x, &mut a, &mut b);
        Coefficients { a, b }
    }
}

/// One realisation `ω` of the environment, possibly shifted by `t_y`.
#[derive(Debug, Clone)]
pub struct Environment {
    spec: EnvironmentSpec,
    origin_offset: Vec<f64>,
    lattice_offset: Vec<f64>,
    site_key: u64,
    kernel: Kernel,
}

impl Environment {
    pub fn new(spec: EnvironmentSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.dimension;
        if d > MAX_DIM {
            return Err(Error::config("environment.dimension", format!("at most {MAX_DIM} supported")));
        }
        let offset_rng = CounterRng::new(derive_key(spec.master_seed, 0, tag::LATTICE_OFFSET));
        let lattice_offset = (0..d)
            .map(|k| offset_rng.uniform(k as u64) * spec.lattice_spacing)
            .collect();
        Ok(Self {
            origin_offset: vec![0.0; d],
            lattice_offset,
            site_key: derive_key(spec.master_seed, 0, tag::ENVIRONMENT),
            kernel: Kernel {
                dimension: d,
                spacing: spec.lattice_spacing,
                radius: spec.kernel_radius,
            },
            spec,
        })
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn origin_offset(&self) -> &[f64] {
        &self.origin_offset
    }

    pub fn dependence_range(&self) -> f64 {
        self.spec.dependence_range
    }

    /// The shifted environment `t_y ω`: evaluating it at `x` gives the
    /// coefficients of `ω` at `x + y`.
    pub fn shift(&self, y: &[f64]) -> Self {
        assert_eq!(y.len(), self.spec.dimension);
        let mut out = self.clone();
        for (o, v) in out.origin_offset.iter_mut().zip(y) {
            *o += v;
        }
        out
    }

    #[inline]
    fn site_values(&self, site: &[i64], out: &mut [f64]) {
        let mut h = self.site_key;
        for &c in site {
            h = mix64(h ^ (c as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        }
        let rng = CounterRng::new(h);
        for (j, v) in out.iter_mut().enumerate() {
            *v = rng.symmetric(j as u64);
        }
    }
}

/// Number of independent scalar fields: `d` drift entries plus the upper
/// triangle of `S`.
fn field_count(d: usize) -> usize {
    d + d * (d + 1) / 2
}

impl CoefficientField for Environment {
    fn dimension(&self) -> usize {
        self.spec.dimension
    }

    fn eval_into(&self, x: &[f64], a: &mut [f64], b: &mut [f64]) {
        let d = self.spec.dimension;
        debug_assert_eq!(x.len(), d);
        match self.spec.mode {
            EnvironmentMode::Constant => {
                for i in 0..d {
                    for j in 0..d {
                        a[i * d + j] = if i == j { 1.0 } else { 0.0 };
                    }
                    b[i] = self.spec.drift_mean[i];
                }
            }
            EnvironmentMode::RandomField => {
                let mut p = [0.0f64; MAX_DIM];
                for k in 0..d {
                    p[k] = (x[k] + self.origin_offset[k]) + self.lattice_offset[k];
                }
                let nf = field_count(d);
                let mut acc = [0.0f64; MAX_DIM + MAX_DIM * (MAX_DIM + 1) / 2];
                let mut vals = [0.0f64; MAX_DIM + MAX_DIM * (MAX_DIM + 1) / 2];
                let mut wsum = 0.0;
                self.kernel.for_each_site(&p[..d], |site, w| {
                    self.site_values(site, &mut vals[..nf]);
                    for j in 0..nf {
                        acc[j] += w * vals[j];
                    }
                    wsum += w;
                });
                let inv = 1.0 / wsum;
                let scale_g = self.spec.drift_amplitude / (d as f64).sqrt();
                for i in 0..d {
                    b[i] = self.spec.drift_mean[i] + scale_g * acc[i] * inv;
                }
                let delta = self.spec.diffusion_amplitude;
                let mut t = d;
                for i in 0..d {
                    for j in i..d {
                        let s = acc[t] * inv;
                        t += 1;
                        let v = if i == j { 1.0 + delta * s } else { delta * s };
                        a[i * d + j] = v;
                        a[j * d + i] = v;
                    }
                }
            }
        }
    }
}

/// Build the environment described by `spec`.
pub fn make_environment(spec: EnvironmentSpec) -> Result<Environment> {
    Environment::new(spec)
}

/// Coefficients `(a, b)` of `env` at `x`.
pub fn eval_coefficients(env: &Environment, x: &[f64]) -> Coefficients {
    env.eval(x)
}

pub fn shift_environment(env: &Environment, y: &[f64]) -> Environment {
    env.shift(y)
}
