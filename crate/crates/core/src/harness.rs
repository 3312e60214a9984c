//! Experiment configuration, ensemble orchestration and result persistence.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::coupling_regen::{attach_bernoulli, check_invariants, find_regenerations, CouplingConfig, RegenerationRecord};
use crate::encounter2d::{encounter_probability, EncounterConfig};
use crate::env_field::{make_environment, EnvironmentMode, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::path_events::{check_direction, oscillation_stats_levels, Levels};
use crate::plots::{render_svg, Line, Series};
use crate::renewal_stats::{
    classify_levels, iid_tests, limit_velocity_summary, pooled_increments, tau1_moment_report, velocity_direct,
    velocity_renewal, zero_one_report, EscapeLabel, IidOptions,
};
use crate::rng::{derive_key, tag};
use crate::sde_sim::{simulate_path, SimConfig, Trajectory};
use crate::stats::{self, Proportion};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable that overrides the configured thread count.
pub const THREADS_ENV: &str = "DRE_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    Regen,
    Velocity,
    Zeroone,
    Encounter,
    Oscillation,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Regen => "regen",
            ExperimentKind::Velocity => "velocity",
            ExperimentKind::Zeroone => "zeroone",
            ExperimentKind::Encounter => "encounter",
            ExperimentKind::Oscillation => "oscillation",
        }
    }
}

/// Environment section of the config file. The geometry fields left out
/// take the defaults of [`EnvironmentSpec::constant`] or
/// [`EnvironmentSpec::random_field`]. Each replicate gets its own seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub mode: EnvironmentMode,
    pub drift_mean: Vec<f64>,
    #[serde(default = "one")]
    pub dependence_range: f64,
    #[serde(default)]
    pub drift_amplitude: f64,
    #[serde(default = "two")]
    pub ellipticity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficient_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice_spacing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion_amplitude: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

impl EnvironmentSection {
    pub fn to_spec(&self) -> EnvironmentSpec {
        let mut spec = match self.mode {
            EnvironmentMode::Constant => EnvironmentSpec::constant(self.drift_mean.clone(), self.dependence_range),
            EnvironmentMode::RandomField => EnvironmentSpec::random_field(
                self.drift_mean.clone(),
                self.drift_amplitude,
                self.dependence_range,
                self.ellipticity,
                0,
            ),
        };
        if let Some(v) = self.coefficient_bound {
            spec.coefficient_bound = v;
        }
        if let Some(v) = self.lattice_spacing {
            spec.lattice_spacing = v;
        }
        if let Some(v) = self.kernel_radius {
            spec.kernel_radius = v;
        }
        if let Some(v) = self.diffusion_amplitude {
            spec.diffusion_amplitude = v;
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub dt: f64,
    pub horizon: f64,
}

/// Escape classifier thresholds. `theta` defaults to `50R`, `beta` to `Θ/4`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncounterSection {
    /// Levels `L` to sweep.
    pub levels: Vec<f64>,
    /// Walker horizon; defaults to the simulation horizon.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Pairs per level; defaults to the replicate count.
    #[serde(default)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillationSection {
    /// Level scale `L`.
    pub scale: f64,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<u64>,
    #[serde(default = "default_h_max")]
    pub h_max: f64,
    /// Slabs `m = 0..=max_m` enter the average.
    pub max_m: u64,
}

fn default_alphas() -> Vec<u64> {
    vec![2, 3, 4]
}

fn default_h_max() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestsSection {
    #[serde(default = "default_test_alpha")]
    pub alpha: f64,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
}

fn default_test_alpha() -> f64 {
    0.01
}

fn default_permutations() -> usize {
    999
}

fn default_max_lag() -> usize {
    3
}

impl Default for TestsSection {
    fn default() -> Self {
        Self {
            alpha: default_test_alpha(),
            permutations: default_permutations(),
            max_lag: default_max_lag(),
        }
    }
}

/// One experiment, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub replicates: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Unit directions; the first one drives single-direction experiments.
    /// Defaults to `e_1`.
    #[serde(default)]
    pub directions: Vec<Vec<f64>>,
    pub environment: EnvironmentSection,
    pub simulation: SimulationSection,
    #[serde(default)]
    pub coupling: CouplingConfig,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encounter: Option<EncounterSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oscillation: Option<OscillationSection>,
    #[serde(default)]
    pub tests: TestsSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| {
            let field = e
                .span()
                .and_then(|r| s.get(..r.start))
                .map(|head| format!("line {}", head.lines().count().max(1)))
                .unwrap_or_else(|| "document".into());
            Error::Config {
                field,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config {
            field: "config".into(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn env_spec(&self) -> EnvironmentSpec {
        self.environment.to_spec()
    }

    pub fn dimension(&self) -> usize {
        self.environment.drift_mean.len()
    }

    pub fn range(&self) -> f64 {
        self.environment.dependence_range
    }

    pub fn direction_grid(&self) -> Vec<Vec<f64>> {
        if self.directions.is_empty() {
            let mut e1 = vec![0.0; self.dimension()];
            if let Some(x) = e1.first_mut() {
                *x = 1.0;
            }
            vec![e1]
        } else {
            self.directions.clone()
        }
    }

    pub fn direction(&self) -> Vec<f64> {
        self.direction_grid().swap_remove(0)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        SimConfig::new(self.simulation.dt, self.simulation.horizon, 0)
    }

    pub fn theta(&self) -> f64 {
        self.classifier.theta.unwrap_or(50.0 * self.range())
    }

    pub fn beta(&self) -> f64 {
        self.classifier.beta.unwrap_or(self.theta() / 4.0)
    }

    pub fn iid_options(&self) -> IidOptions {
        IidOptions {
            alpha: self.tests.alpha,
            permutations: self.tests.permutations,
            max_lag: self.tests.max_lag,
            seed: derive_key(self.master_seed, 0, tag::PERMUTATION),
        }
    }

    /// Check every nested section; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::config("replicates", "must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be at least 1"));
        }
        self.env_spec().validate()?;
        self.sim_config()?;
        self.coupling.validate()?;
        let d = self.dimension();
        for (i, l) in self.direction_grid().iter().enumerate() {
            check_direction(l, d).map_err(|e| Error::config(format!("directions[{i}]"), e.to_string()))?;
        }
        if !(self.theta() > 0.0) || !self.theta().is_finite() {
            return Err(Error::config("classifier.theta", "must be positive and finite"));
        }
        if !(self.beta() >= 0.0) || !self.beta().is_finite() {
            return Err(Error::config("classifier.beta", "must be non-negative and finite"));
        }
        if !(self.tests.alpha > 0.0 && self.tests.alpha < 1.0) {
            return Err(Error::config("tests.alpha", "must lie in (0, 1)"));
        }
        if self.tests.permutations == 0 {
            return Err(Error::config("tests.permutations", "must be at least 1"));
        }
        if self.tests.max_lag == 0 {
            return Err(Error::config("tests.max_lag", "must be at least 1"));
        }
        match self.kind {
            ExperimentKind::Encounter => {
                let enc = self
                    .encounter
                    .as_ref()
                    .ok_or_else(|| Error::config("encounter", "section required for kind = \"encounter\""))?;
                if enc.levels.is_empty() {
                    return Err(Error::config("encounter.levels", "must list at least one level"));
                }
                if enc.replicates == Some(0) {
                    return Err(Error::config("encounter.replicates", "must be at least 1"));
                }
                if let Some(h) = enc.horizon {
                    SimConfig::new(self.simulation.dt, h, 0)
                        .map_err(|_| Error::config("encounter.horizon", "must be a non-negative whole number of steps"))?;
                }
                let l = self.direction();
                for (i, &level) in enc.levels.iter().enumerate() {
                    self.encounter_config(level)
                        .validate(&l, self.range())
                        .map_err(|e| Error::config(format!("encounter.levels[{i}]"), e.to_string()))?;
                }
            }
            ExperimentKind::Oscillation => {
                let osc = self
                    .oscillation
                    .as_ref()
                    .ok_or_else(|| Error::config("oscillation", "section required for kind = \"oscillation\""))?;
                if !(osc.scale > 0.0) || !osc.scale.is_finite() {
                    return Err(Error::config("oscillation.scale", "must be positive and finite"));
                }
                if osc.alphas.is_empty() || osc.alphas.iter().any(|&a| a < 2) {
                    return Err(Error::config("oscillation.alphas", "must be a non-empty list of integers ≥ 2"));
                }
                if !(osc.h_max >= 0.0) || !osc.h_max.is_finite() {
                    return Err(Error::config("oscillation.h_max", "must be non-negative and finite"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn encounter_config(&self, level: f64) -> EncounterConfig {
        let enc = self.encounter.as_ref();
        EncounterConfig {
            level,
            partner_start: None,
            replicates: enc.and_then(|e| e.replicates).unwrap_or(self.replicates),
            horizon: enc.and_then(|e| e.horizon).unwrap_or(self.simulation.horizon),
        }
    }

    /// Canonical JSON with sorted keys, without `threads` and `output_dir`.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("threads");
            m.remove("output_dir");
        }
        // serde_json maps are ordered by key, so this is canonical.
        v.to_string()
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// Thread count: command line, then environment variable, then config.
pub fn resolve_threads(cli: Option<usize>, env_var: Option<&str>, config: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = cli {
        if n == 0 {
            return Err(Error::config("--threads", "must be at least 1"));
        }
        return Ok(Some(n));
    }
    if let Some(s) = env_var {
        return match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::config(THREADS_ENV, format!("expected a positive integer, got {s:?}"))),
        };
    }
    Ok(config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for r in &self.rows {
            writeln!(w, "{}", r.join(","))?;
        }
        Ok(())
    }
}

/// Output of one experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultEnvelope {
    pub config_hash: String,
    pub tool_version: String,
    pub kind: ExperimentKind,
    pub master_seed: u64,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub summary: Value,
    pub series: BTreeMap<String, Series>,
    pub tables: Vec<Table>,
    /// Written to `replicates.jsonl`, not to `envelope.json`.
    #[serde(skip)]
    pub replicates: Vec<Value>,
}

impl ResultEnvelope {
    /// The timestamp-free part written to `summary.json`.
    pub fn summary_document(&self) -> Value {
        json!({
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "kind": self.kind,
            "master_seed": self.master_seed,
            "summary": self.summary,
        })
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary_document()).expect("summary serializes")
    }

    /// Write `replicates.jsonl`, `summary.json`, `envelope.json` and one CSV per table.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let p = dir.join("replicates.jsonl");
        let mut w = BufWriter::new(fs::File::create(&p)?);
        for r in &self.replicates {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        written.push(p);
        let p = dir.join("summary.json");
        fs::write(&p, self.summary_json() + "\n")?;
        written.push(p);
        let p = dir.join("envelope.json");
        fs::write(&p, serde_json::to_string_pretty(self)? + "\n")?;
        written.push(p);
        for t in &self.tables {
            let p = dir.join(format!("{}.csv", t.name));
            t.write_csv(BufWriter::new(fs::File::create(&p)?))?;
            written.push(p);
        }
        Ok(written)
    }

    /// Load a directory written by [`ResultEnvelope::write_to`].
    pub fn read_from(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("envelope.json"))?;
        let mut env: Self = serde_json::from_str(&text)?;
        if let Ok(lines) = fs::read_to_string(dir.join("replicates.jsonl")) {
            env.replicates = lines
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<std::result::Result<_, _>>()?;
        }
        Ok(env)
    }
}

/// Plot kinds understood by [`emit_plots`], each naming a series.
pub const PLOT_KINDS: [&str; 5] = ["trace", "histogram", "gamma", "stability", "fraction"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotOutcome {
    pub written: Vec<PathBuf>,
    /// Requested kinds with no series in the envelope.
    pub skipped: Vec<String>,
}

/// Render the requested series as `<kind>.svg` in `dir`.
pub fn emit_plots(envelope: &ResultEnvelope, kinds: &[String], dir: &Path) -> Result<PlotOutcome> {
    let mut out = PlotOutcome::default();
    for k in kinds {
        match envelope.series.get(k) {
            Some(s) => {
                fs::create_dir_all(dir)?;
                let p = dir.join(format!("{k}.svg"));
                fs::write(&p, render_svg(s))?;
                out.written.push(p);
            }
            None => out.skipped.push(k.clone()),
        }
    }
    Ok(out)
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Run the experiment on a pool of `cfg.threads` workers (all cores if unset).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultEnvelope> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    let started = now_ms();
    let out = pool.install(|| match cfg.kind {
        ExperimentKind::Simulate => run_simulate(cfg),
        ExperimentKind::Regen => run_regen(cfg, false),
        ExperimentKind::Velocity => run_regen(cfg, true),
        ExperimentKind::Zeroone => run_zeroone(cfg),
        ExperimentKind::Encounter => run_encounter(cfg),
        ExperimentKind::Oscillation => run_oscillation(cfg),
    })?;
    Ok(ResultEnvelope {
        config_hash: cfg.config_hash(),
        tool_version: TOOL_VERSION.to_string(),
        kind: cfg.kind,
        master_seed: cfg.master_seed,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        summary: out.summary,
        series: out.series,
        tables: out.tables,
        replicates: out.replicates,
    })
}

struct PipelineOutput {
    replicates: Vec<Value>,
    summary: Value,
    series: BTreeMap<String, Series>,
    tables: Vec<Table>,
}

/// Replicates whose `l · X_t / t` trace goes into the plot series.
const TRACED: usize = 5;
const TRACE_POINTS: usize = 400;

fn velocity_trace(traj: &Trajectory, l: &[f64]) -> Vec<(f64, f64)> {
    let lv = Levels::new(traj, l);
    let v = lv.values();
    let n = traj.steps_per_unit() as usize;
    if v.len() <= n {
        return Vec::new();
    }
    let stride = ((v.len() - n) / TRACE_POINTS).max(1);
    (n..v.len())
        .step_by(stride)
        .map(|i| {
            let t = traj.time(i);
            (t, (v[i] - v[0]) / t)
        })
        .collect()
}

fn trace_series(traces: Vec<(usize, Vec<(f64, f64)>)>) -> Series {
    Series::Lines {
        title: "velocity trace".into(),
        x_label: "t".into(),
        y_label: "l·(X_t − X_0)/t".into(),
        lines: traces
            .into_iter()
            .map(|(i, points)| Line {
                name: format!("replicate {i}"),
                points,
            })
            .collect(),
    }
}

/// Run `f(i)` for every replicate in parallel, tagging errors with the index.
/// Results come back in replicate order.
fn per_replicate<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let res: Vec<Result<T>> = (0..n).into_par_iter().map(&f).collect();
    res.into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Replicate {
                replicate: i,
                source: Box::new(e),
            })
        })
        .collect()
}

struct Lane {
    env: crate::env_field::Environment,
    sim: SimConfig,
}

fn lane(cfg: &ExperimentConfig, base: &EnvironmentSpec, sim: &SimConfig, i: usize) -> Result<Lane> {
    let env = make_environment(base.with_seed(derive_key(cfg.master_seed, i as u64, tag::ENVIRONMENT)))?;
    let sim = sim.with_seed(derive_key(cfg.master_seed, i as u64, tag::REPLICATE));
    Ok(Lane { env, sim })
}

fn run_simulate(cfg: &ExperimentConfig) -> Result<PipelineOutput> {
    let spec = cfg.env_spec();
    let sim = cfg.sim_config()?;
    let l = cfg.direction();
    let x0 = vec![0.0; cfg.dimension()];
    let trajs = per_replicate(cfg.replicates, |i| {
        let ln = lane(cfg, &spec, &sim, i)?;
        Ok(simulate_path(&ln.env, &x0, &ln.sim))
    })?;
    let replicates = trajs
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"replicate": i, "end": t.end(), "level": dot(t.end(), &l)}))
        .collect();
    let v = velocity_direct(&trajs, &l)?;
    let traces = trajs.iter().take(TRACED).enumerate().map(|(i, t)| (i, velocity_trace(t, &l))).collect();
    let mut table = Table {
        name: "trajectory_0".into(),
        header: std::iter::once("t".to_string())
            .chain((0..cfg.dimension()).map(|j| format!("x{j}")))
            .collect(),
        rows: Vec::new(),
    };
    let first = &trajs[0];
    for i in (0..first.len()).step_by(first.steps_per_unit() as usize) {
        let mut row = vec![first.time(i).to_string()];
        row.extend(first.point(i).iter().map(|x| x.to_string()));
        table.rows.push(row);
    }
    Ok(PipelineOutput {
        replicates,
        summary: json!({
            "direction": l,
            "replicates": cfg.replicates,
            "direct": v,
        }),
        series: BTreeMap::from([("trace".to_string(), trace_series(traces))]),
        tables: vec![table],
    })
}

struct RegenLane {
    plain: Trajectory,
    record: RegenerationRecord,
    violations: usize,
    marks: u64,
    intervals: u64,
    trace: Option<Vec<(f64, f64)>>,
}

fn run_regen(cfg: &ExperimentConfig, with_direct: bool) -> Result<PipelineOutput> {
    let spec = cfg.env_spec();
    let sim = cfg.sim_config()?;
    let l = cfg.direction();
    let range = cfg.range();
    let x0 = vec![0.0; cfg.dimension()];
    let lanes = per_replicate(cfg.replicates, |i| {
        let ln = lane(cfg, &spec, &sim, i)?;
        let coupled = attach_bernoulli(&ln.env, &x0, &ln.sim, &l, &cfg.coupling)?;
        let record = find_regenerations(&coupled, &l, range, cfg.coupling.guard)?;
        let violations = check_invariants(&coupled, &record, true).len();
        let plain = if with_direct {
            simulate_path(&ln.env, &x0, &ln.sim)
        } else {
            coupled.traj.clone()
        };
        Ok(RegenLane {
            trace: (i < TRACED).then(|| velocity_trace(&plain, &l)),
            marks: coupled.lambda.iter().filter(|&&b| b).count() as u64,
            intervals: coupled.lambda.len() as u64,
            plain,
            record,
            violations,
        })
    })?;
    let records: Vec<RegenerationRecord> = lanes.iter().map(|r| r.record.clone()).collect();
    let replicates: Vec<Value> = lanes
        .iter()
        .enumerate()
        .map(|(i, r)| {
            json!({
                "replicate": i,
                "tau": r.record.tau,
                "positions": r.record.positions,
                "increments": r.record.increments,
                "last_block_censored": r.record.last_block_censored,
                "d_status": r.record.d_status,
                "violations": r.violations,
                "marks": r.marks,
                "terminal_level": dot(r.plain.end(), &l),
            })
        })
        .collect();
    let (dl, dtau) = pooled_increments(&records);
    let renewal = velocity_renewal(&records);
    let tau1 = tau1_moment_report(&records);
    let iid = iid_tests(&records, &cfg.iid_options());
    let violations: usize = lanes.iter().map(|r| r.violations).sum();
    let marks: u64 = lanes.iter().map(|r| r.marks).sum();
    let intervals: u64 = lanes.iter().map(|r| r.intervals).sum();
    let lambda = Proportion::wilson95(marks, intervals.max(1));
    let mut summary = json!({
        "direction": l,
        "replicates": cfg.replicates,
        "epsilon": cfg.coupling.epsilon,
        "coupling_mode": cfg.coupling.mode,
        "regeneration_times": records.iter().map(|r| r.tau.len()).sum::<usize>(),
        "replicates_with_regeneration": records.iter().filter(|r| !r.tau.is_empty()).count(),
        "uncensored_increments": dl.len(),
        "renewal": renewal.as_ref().ok(),
        "renewal_error": renewal.as_ref().err().map(|e| e.to_string()),
        "tau1": tau1,
        "iid_tests": iid.as_ref().ok(),
        "iid_error": iid.as_ref().err().map(|e| e.to_string()),
        "invariant_violations": violations,
        "lambda_frequency": lambda,
        "lambda_se": lambda.se(),
    });
    let mut series = BTreeMap::new();
    series.insert(
        "histogram".to_string(),
        Series::Histogram {
            title: "regeneration increments".into(),
            x_label: "τ_{k+1} − τ_k".into(),
            values: dtau.clone(),
            integer_bins: true,
        },
    );
    if !tau1.running_mean.is_empty() {
        series.insert(
            "stability".to_string(),
            Series::Lines {
                title: "running mean of l·X_{τ_1}".into(),
                x_label: "sample size".into(),
                y_label: "running mean".into(),
                lines: vec![Line {
                    name: "l·X_{τ_1}".into(),
                    points: tau1.running_mean.iter().enumerate().map(|(i, m)| ((i + 1) as f64, *m)).collect(),
                }],
            },
        );
    }
    let traces: Vec<(usize, Vec<(f64, f64)>)> =
        lanes.iter().enumerate().filter_map(|(i, r)| r.trace.clone().map(|t| (i, t))).collect();
    series.insert("trace".to_string(), trace_series(traces));
    if with_direct {
        let plain: Vec<Trajectory> = lanes.iter().map(|r| r.plain.clone()).collect();
        let direct = velocity_direct(&plain, &l)?;
        let agree = renewal.as_ref().ok().map(|r| r.agrees_with(&direct, 3.0));
        summary["direct"] = json!(direct);
        summary["agreement_3se"] = json!(agree);
    }
    let tables = vec![Table {
        name: "increments".into(),
        header: ["replicate", "k", "dl", "dtau", "min_rel", "max_rel"].map(String::from).to_vec(),
        rows: records
            .iter()
            .enumerate()
            .flat_map(|(i, r)| {
                r.increments.iter().map(move |z| {
                    vec![
                        i.to_string(),
                        z.k.to_string(),
                        z.dl.to_string(),
                        z.dtau.to_string(),
                        z.min_rel.to_string(),
                        z.max_rel.to_string(),
                    ]
                })
            })
            .collect(),
    }];
    Ok(PipelineOutput {
        replicates,
        summary,
        series,
        tables,
    })
}

fn run_zeroone(cfg: &ExperimentConfig) -> Result<PipelineOutput> {
    let spec = cfg.env_spec();
    let sim = cfg.sim_config()?;
    let grid = cfg.direction_grid();
    let (theta, beta) = (cfg.theta(), cfg.beta());
    let x0 = vec![0.0; cfg.dimension()];
    let trajs = per_replicate(cfg.replicates, |i| {
        let ln = lane(cfg, &spec, &sim, i)?;
        Ok(simulate_path(&ln.env, &x0, &ln.sim))
    })?;
    let labels: Vec<Vec<EscapeLabel>> = trajs
        .par_iter()
        .map(|t| grid.iter().map(|l| classify_levels(&Levels::new(t, l), theta, beta).label).collect())
        .collect();
    let replicates = labels
        .iter()
        .zip(&trajs)
        .enumerate()
        .map(|(i, (ls, t))| json!({"replicate": i, "labels": ls, "end": t.end()}))
        .collect();
    let mut per_direction = Vec::new();
    let mut rows = Vec::new();
    for (j, l) in grid.iter().enumerate() {
        let col: Vec<EscapeLabel> = labels.iter().map(|ls| ls[j]).collect();
        let report = zero_one_report(&col);
        let direct = velocity_direct(&trajs, l)?;
        if let Ok(r) = &report {
            rows.push(vec![
                j.to_string(),
                r.counts.plus.to_string(),
                r.counts.minus.to_string(),
                r.counts.oscillating.to_string(),
                r.counts.undecided.to_string(),
                r.plus.estimate.to_string(),
                r.minus.estimate.to_string(),
                r.either.estimate.to_string(),
                r.verdict_either.describe().to_string(),
            ]);
        }
        per_direction.push(json!({
            "direction": l,
            "report": report.as_ref().ok(),
            "report_error": report.as_ref().err().map(|e| e.to_string()),
            "direct": direct,
        }));
    }
    let limit = limit_velocity_summary(&trajs, &grid, theta, beta)?;
    let traces = trajs.iter().take(TRACED).enumerate().map(|(i, t)| (i, velocity_trace(t, &grid[0]))).collect();
    Ok(PipelineOutput {
        replicates,
        summary: json!({
            "replicates": cfg.replicates,
            "theta": theta,
            "beta": beta,
            "directions": per_direction,
            "limit_velocity": limit,
        }),
        series: BTreeMap::from([("trace".to_string(), trace_series(traces))]),
        tables: vec![Table {
            name: "zeroone".into(),
            header: ["direction", "plus", "minus", "oscillating", "undecided", "p_plus", "p_minus", "p_either", "verdict"]
                .map(String::from)
                .to_vec(),
            rows,
        }],
    })
}

fn run_encounter(cfg: &ExperimentConfig) -> Result<PipelineOutput> {
    let spec = cfg.env_spec();
    let l = cfg.direction();
    let spu = cfg.sim_config()?.steps_per_unit();
    let enc = cfg.encounter.as_ref().expect("validated");
    let mut results = Vec::new();
    for &level in &enc.levels {
        results.push(encounter_probability(&spec, &cfg.encounter_config(level), &l, spu, cfg.master_seed)?);
    }
    let point = |f: fn(&crate::encounter2d::EncounterResult) -> f64| results.iter().map(|r| (r.level, f(r))).collect();
    let series = Series::Lines {
        title: "encounter probability".into(),
        x_label: "L".into(),
        y_label: "Γ̂_L".into(),
        lines: vec![
            Line {
                name: "estimate".into(),
                points: point(|r| r.estimate),
            },
            Line {
                name: "95% low".into(),
                points: point(|r| r.ci_low),
            },
            Line {
                name: "95% high".into(),
                points: point(|r| r.ci_high),
            },
        ],
    };
    let rows = results
        .iter()
        .map(|r| {
            vec![
                r.level.to_string(),
                r.n.to_string(),
                r.encounters.to_string(),
                r.estimate.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
            ]
        })
        .collect();
    let decreasing = results.windows(2).all(|w| w[1].estimate < w[0].estimate);
    let separated = results.windows(2).all(|w| w[1].ci_high < w[0].ci_low);
    Ok(PipelineOutput {
        replicates: results.iter().map(|r| json!(r)).collect(),
        summary: json!({
            "direction": l,
            "levels": results,
            "decreasing": decreasing,
            "separated_intervals": separated,
        }),
        series: BTreeMap::from([("gamma".to_string(), series)]),
        tables: vec![Table {
            name: "encounter".into(),
            header: ["level", "n", "encounters", "estimate", "ci_low", "ci_high"].map(String::from).to_vec(),
            rows,
        }],
    })
}

/// Grid of `h` values swept by the oscillation experiment.
fn h_grid(h_max: f64) -> Vec<f64> {
    let n = (2.0 * h_max).floor() as usize;
    (0..=n).map(|i| i as f64 * 0.5).collect()
}

fn run_oscillation(cfg: &ExperimentConfig) -> Result<PipelineOutput> {
    let spec = cfg.env_spec();
    let sim = cfg.sim_config()?;
    let l = cfg.direction();
    let osc = cfg.oscillation.as_ref().expect("validated");
    let x0 = vec![0.0; cfg.dimension()];
    let hs = h_grid(osc.h_max);
    // per replicate, per α: h values for m = 0..=max_m
    let lanes = per_replicate(cfg.replicates, |i| {
        let ln = lane(cfg, &spec, &sim, i)?;
        let traj = simulate_path(&ln.env, &x0, &ln.sim);
        let lv = Levels::new(&traj, &l);
        Ok(osc
            .alphas
            .iter()
            .map(|&a| (0..=osc.max_m).map(|m| oscillation_stats_levels(&lv, osc.scale, m, a)).collect::<Vec<_>>())
            .collect::<Vec<_>>())
    })?;
    let denom = (osc.max_m + 1) as f64;
    let mut rows = Vec::new();
    let mut per_alpha = Vec::new();
    let mut lines = Vec::new();
    for (ai, &alpha) in osc.alphas.iter().enumerate() {
        // fractions[i][j]: replicate i, h = hs[j]
        let fractions: Vec<Vec<f64>> = lanes
            .iter()
            .map(|lane| hs.iter().map(|&h| lane[ai].iter().filter(|s| s.h.at_most(h)).count() as f64 / denom).collect())
            .collect();
        let mean: Vec<f64> = (0..hs.len()).map(|j| stats::mean(&fractions.iter().map(|f| f[j]).collect::<Vec<_>>())).collect();
        let reached = fractions.iter().filter(|f| f.iter().any(|&x| x >= 1.0 / 3.0)).count();
        let first_h = |f: &Vec<f64>| hs.iter().zip(f).find(|(_, &x)| x >= 1.0 / 3.0).map(|(h, _)| *h);
        per_alpha.push(json!({
            "alpha": alpha,
            "mean_fraction": hs.iter().zip(&mean).map(|(h, m)| json!({"h": h, "fraction": m})).collect::<Vec<_>>(),
            "replicates_reaching_third": reached,
            "all_reach_third": reached == lanes.len(),
            "first_h_reaching_third": fractions.iter().map(first_h).collect::<Vec<_>>(),
        }));
        lines.push(Line {
            name: format!("α = {alpha}"),
            points: hs.iter().copied().zip(mean.iter().copied()).collect(),
        });
        for (i, lane) in lanes.iter().enumerate() {
            for s in &lane[ai] {
                let h = match s.h {
                    crate::path_events::HValue::Finite(v) => v.to_string(),
                    crate::path_events::HValue::Infinite => "inf".into(),
                };
                rows.push(vec![i.to_string(), alpha.to_string(), s.m.to_string(), s.count.to_string(), s.k.to_string(), h]);
            }
        }
    }
    let replicates = lanes
        .iter()
        .enumerate()
        .map(|(i, lane)| {
            let per: Vec<Value> = osc
                .alphas
                .iter()
                .zip(lane)
                .map(|(a, st)| json!({"alpha": a, "h": st.iter().map(|s| s.h).collect::<Vec<_>>(), "count": st.iter().map(|s| s.count).collect::<Vec<_>>()}))
                .collect();
            json!({"replicate": i, "alphas": per})
        })
        .collect();
    Ok(PipelineOutput {
        replicates,
        summary: json!({
            "direction": l,
            "scale": osc.scale,
            "max_m": osc.max_m,
            "h_max": osc.h_max,
            "alphas": per_alpha,
        }),
        series: BTreeMap::from([(
            "fraction".to_string(),
            Series::Lines {
                title: "fraction of slabs with h ≤ h".into(),
                x_label: "h".into(),
                y_label: "mean fraction".into(),
                lines,
            },
        )]),
        tables: vec![Table {
            name: "oscillation".into(),
            header: ["replicate", "alpha", "m", "count", "k", "h"].map(String::from).to_vec(),
            rows,
        }],
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
