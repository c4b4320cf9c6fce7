//! Scripted runs of the builtin examples, writing one CSV per curve plus `summary.json`.
//!
//! Layout of the output directory by example:
//!
//! ```text
//! arctan        gap.csv lambda.csv derivative.csv weak_error.csv
//! bump          gap.csv lambda.csv
//! sincos        lambda.csv decay.csv
//! grusin        variance.csv variance_mc.csv
//! xcubed        moments_delta_0.01.csv moments_delta_1.csv
//! circle        divergence.csv radius_delta_<d>.csv
//! circle_noise  moments.csv
//! ou            weak_error_delta_<d>.csv
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{builtin_example, ExampleSpec};
use crate::conditions::{gap_rows, summarize_gap, write_gap_csv, xi_function, LambdaFunction};
use crate::dsl::{ScalarField, VectorField};
use crate::error::{Error, Result};
use crate::estimators::{
    decay_functional, derivative_estimate, moment_supremum, weak_error_curve, write_columns, Reference, RunSpec,
};
use crate::numerics::grid;
use crate::oracles::{circle_divergence, circle_psi, circle_radius_recurrence, grusin_variances, ou_euler_moments, ou_exact_moments, xcubed_threshold};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// User overrides of the scripted defaults. A `delta` override replaces the
/// list of step sizes in the multi-step examples by that single value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

/// Fully resolved parameters of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproduceConfig {
    pub example: String,
    pub deltas: Vec<f64>,
    pub paths: usize,
    pub seed: u64,
    pub horizon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub config: ReproduceConfig,
    pub artifacts: Vec<Artifact>,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Collects files written into one output directory, with their hashes, metrics and checks.
pub struct ArtifactWriter<'a> {
    dir: &'a Path,
    pub artifacts: Vec<Artifact>,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
}

impl<'a> ArtifactWriter<'a> {
    pub fn new(dir: &'a Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(ArtifactWriter { dir, artifacts: vec![], metrics: BTreeMap::new(), checks: vec![] })
    }

    /// Write `name` from the bytes produced by `fill`; the row count excludes a header line.
    pub fn file(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        let rows = buf.iter().filter(|&&b| b == b'\n').count().saturating_sub(1);
        let sha256 = format!("{:x}", Sha256::digest(&buf));
        std::fs::write(self.dir.join(name), &buf)?;
        self.artifacts.push(Artifact { file: name.into(), rows, sha256 });
        Ok(())
    }

    pub fn metric(&mut self, name: impl Into<String>, v: f64) {
        self.metrics.insert(name.into(), v);
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: String) {
        self.checks.push(Check { name: name.into(), passed, detail });
    }
}

fn resolve(spec: &ExampleSpec, o: &Overrides) -> ReproduceConfig {
    let (deltas, paths, horizon): (Vec<f64>, usize, f64) = match spec.name {
        "arctan" => (vec![0.01], 2000, 10.0),
        "bump" => (vec![], 0, 0.0),
        "sincos" => (vec![0.01], 2000, 5.0),
        "grusin" => (vec![1e-3], 10_000, 3.0),
        "xcubed" => (vec![0.01, 1.0], 1000, 100.0),
        "circle" => (vec![0.05, 0.02, 0.01], 0, 0.0),
        "circle_noise" => (vec![0.05], 500, 500.0),
        _ => (vec![0.2, 0.1, 0.05], 0, 10.0),
    };
    ReproduceConfig {
        example: spec.name.into(),
        deltas: o.delta.map_or(deltas, |d| vec![d]),
        paths: o.paths.unwrap_or(paths),
        seed: o.seed.unwrap_or(crate::DEFAULT_SEED),
        horizon: o.horizon.unwrap_or(horizon),
    }
}

fn label(d: f64) -> String {
    format!("{d}")
}

/// Run the scripted pipeline for a builtin and write its artifacts into `out_dir`.
pub fn reproduce(name: &str, overrides: &Overrides, out_dir: &Path) -> Result<Summary> {
    let spec = builtin_example(name)?;
    let config = resolve(&spec, overrides);
    if config.deltas.iter().any(|d| !(*d > 0.0)) || !(config.horizon >= 0.0) {
        return Err(Error::Invalid("step sizes must be positive and the horizon non-negative".into()));
    }
    let mut w = ArtifactWriter::new(out_dir)?;
    match spec.name {
        "arctan" => arctan(&spec, &config, &mut w)?,
        "bump" => gap_and_overlay(&spec, &mut w).map(|_| ())?,
        "sincos" => sincos(&spec, &config, &mut w)?,
        "grusin" => grusin(&spec, &config, &mut w)?,
        "xcubed" => xcubed(&spec, &config, &mut w)?,
        "circle" => circle(&spec, &config, &mut w)?,
        "circle_noise" => circle_noise(&spec, &config, &mut w)?,
        _ => ou(&spec, &config, &mut w)?,
    }
    let summary = Summary { schema_version: SUMMARY_SCHEMA_VERSION, config, artifacts: w.artifacts, metrics: w.metrics, checks: w.checks };
    std::fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

/// `gap.csv` and `lambda.csv` (`x,drift,lambda`); returns `lambda0`.
fn gap_and_overlay(spec: &ExampleSpec, w: &mut ArtifactWriter) -> Result<f64> {
    let model = &spec.model;
    let lambda = LambdaFunction::induced(model)?;
    let (lo, hi, step) = spec.defaults.grid;
    let xs = grid(lo, hi, step);
    let rows = gap_rows(&lambda, &|x| xi_function(model, 0.5, x), &xs)?;
    let g = summarize_gap(&rows, 0.5);
    w.file("gap.csv", |b| write_gap_csv(&rows, b))?;
    overlay(spec, w, &xs)?;
    w.metric("inf_gap", g.infimum);
    w.metric("lambda0", g.lambda0);
    w.check("gap_positive", g.infimum > 0.0, format!("inf(2 lambda - Xi) = {} at x = {}", g.infimum, g.argmin));
    Ok(g.lambda0)
}

fn overlay(spec: &ExampleSpec, w: &mut ArtifactWriter, xs: &[f64]) -> Result<()> {
    let lambda = LambdaFunction::induced(&spec.model)?;
    let drift: Vec<f64> = xs.iter().map(|&x| spec.model.ito_drift(&[x]).map(|d| d[0])).collect::<Result<_, _>>()?;
    let lam: Vec<f64> = xs.iter().map(|&x| lambda.eval(&[x]).regular().unwrap_or(f64::NAN)).collect();
    w.file("lambda.csv", |b| write_columns(b, &["x", "drift", "lambda"], &[xs, &drift, &lam]))
}

fn arctan(spec: &ExampleSpec, c: &ReproduceConfig, w: &mut ArtifactWriter) -> Result<()> {
    let lambda0 = gap_and_overlay(spec, w)?;
    let model = &spec.model;
    let f = ScalarField::parse("tanh(x1)", 1).map_err(|e| Error::Parse { component: 0, source: e })?;
    let v = VectorField::parse(&["1"], 1)?;
    let run = RunSpec::new(vec![0.0], c.deltas[0], c.horizon, c.paths, c.seed);
    let d = derivative_estimate(model, &f, &v, &run)?;
    w.file("derivative.csv", |b| d.write_csv(b))?;
    let over = d.exceedances(&|t: f64| (-lambda0 * t).exp());
    w.check("derivative_bound", over.is_empty(), format!("{} mesh times above exp(-lambda0 t) + 3 stderr", over.len()));
    if let Some(r) = d.decay_rate() {
        w.metric("derivative_decay_rate", r);
    }
    // weak error against a 64x finer coupled path from x0 = 2, capped at T = 6
    let weak = RunSpec::new(vec![2.0], (10.0 * c.deltas[0]).min(0.1), c.horizon.min(6.0), c.paths, c.seed);
    let e = weak_error_curve(model, &|y| y[0].tanh(), &weak, Reference::Fine { m: 64 })?;
    w.file("weak_error.csv", |b| e.write_csv(b))?;
    w.metric("weak_error_sup", e.sup());
    w.metric("weak_error_delta", e.delta);
    w.check("weak_error_finite", !e.divergent && e.sup().is_finite(), format!("sup = {}", e.sup()));
    Ok(())
}

fn sincos(spec: &ExampleSpec, c: &ReproduceConfig, w: &mut ArtifactWriter) -> Result<()> {
    let (lo, hi, step) = spec.defaults.grid;
    overlay(spec, w, &grid(lo, hi, step))?;
    let lambda = LambdaFunction::induced(&spec.model)?;
    let run = RunSpec::new(spec.defaults.x0.clone(), c.deltas[0], c.horizon, c.paths, c.seed);
    let fit = decay_functional(&spec.model, &lambda.functional(), &run)?;
    w.file("decay.csv", |b| fit.write_csv(b))?;
    w.metric("decay_rate", fit.rate);
    w.metric("singular_paths", fit.ends.singular as f64);
    w.check("decay_rate_positive", fit.rate > 0.0, format!("fitted rate {}", fit.rate));
    Ok(())
}

fn grusin(spec: &ExampleSpec, c: &ReproduceConfig, w: &mut ArtifactWriter) -> Result<()> {
    let delta = c.deltas[0];
    let steps_per_record = ((0.1 / delta).round() as usize).max(1);
    let n_total = (10.0 / delta).round() as usize;
    let ns: Vec<usize> = (0..=n_total).step_by(steps_per_record).collect();
    let columns = |ns: &[usize]| {
        let t: Vec<f64> = ns.iter().map(|&n| n as f64 * delta).collect();
        let (ex, eu): (Vec<f64>, Vec<f64>) = ns.iter().map(|&n| grusin_variances(n as f64 * delta, delta, n as u32)).unzip();
        (t, ex, eu)
    };
    let (t, ex, eu) = columns(&ns);
    let gap: Vec<f64> = ex.iter().zip(&eu).map(|(a, b)| a - b).collect();
    w.file("variance.csv", |b| write_columns(b, &["t", "exact", "euler_formula", "gap"], &[&t, &ex, &eu, &gap]))?;
    let at = |time: f64| gap[ns.iter().position(|&n| (n as f64 * delta - time).abs() < 0.5 * delta).unwrap_or(0)].abs();
    w.metric("gap_t1", at(1.0));
    w.metric("gap_t10", at(10.0));
    w.check("variance_gap_grows", at(10.0) > at(1.0), format!("|gap| at t=1: {}, at t=10: {}", at(1.0), at(10.0)));

    let run = RunSpec::new(spec.defaults.x0.clone(), delta, c.horizon, c.paths, c.seed).with_stride(steps_per_record);
    let mc = moment_supremum(&spec.model, &run, Some(&|y| y[1] * y[1]), 0.0)?;
    let mc_ns: Vec<usize> = (0..mc.times.len()).map(|i| i * steps_per_record).collect();
    let (t, ex, eu) = columns(&mc_ns);
    w.file("variance_mc.csv", |b| {
        write_columns(b, &["t", "exact", "euler_formula", "mc", "mc_stderr"], &[&t, &ex, &eu, &mc.mean, &mc.stderr])
    })?;
    let worst = (1..t.len())
        .filter(|&i| (t[i] - t[i].round()).abs() < 1e-9)
        .map(|i| (mc.mean[i] - eu[i]).abs() / mc.stderr[i])
        .fold(0.0, f64::max);
    w.metric("mc_max_z_integer_times", worst);
    w.check("mc_matches_euler_formula", worst <= 3.0, format!("max |mc - formula| / stderr at integer t = {worst}"));
    Ok(())
}

fn xcubed(spec: &ExampleSpec, c: &ReproduceConfig, w: &mut ArtifactWriter) -> Result<()> {
    for &delta in &c.deltas {
        let n_steps = if delta >= 1.0 { 20 } else { 10_000 };
        let run = RunSpec::new(spec.defaults.x0.clone(), delta, n_steps as f64 * delta, c.paths, c.seed);
        let m = moment_supremum(&spec.model, &run, None, 2.0)?;
        w.file(&format!("moments_delta_{}.csv", label(delta)), |b| m.write_csv(b))?;
        let threshold = xcubed_threshold(delta)?;
        let x0sq = spec.defaults.x0[0].powi(2);
        w.metric(format!("sup_second_moment_delta_{}", label(delta)), m.sup);
        w.metric(format!("explosion_fraction_delta_{}", label(delta)), m.ends.explosion_fraction());
        if x0sq >= threshold {
            let first = m.ends.first_explosion;
            w.check(
                format!("explodes_delta_{}", label(delta)),
                first.is_some_and(|s| s <= 10),
                format!("x0^2 = {x0sq} >= {threshold}; first explosion at step {first:?}"),
            );
        } else {
            let ok = m.ends.exploded == 0 && m.sup <= 20.0 + 3.0 * m.sup_stderr;
            w.check(format!("bounded_delta_{}", label(delta)), ok, format!("sup E|Y|^2 = {} (stderr {})", m.sup, m.sup_stderr));
        }
    }
    Ok(())
}

fn circle(spec: &ExampleSpec, c: &ReproduceConfig, w: &mut ArtifactWriter) -> Result<()> {
    let r0: f64 = spec.defaults.x0.iter().map(|v| v * v).sum();
    let n_max = 10_000;
    let mut div = Vec::new();
    for &delta in &c.deltas {
        let radius = circle_radius_recurrence(delta, r0, n_max, circle_psi);
        let idx: Vec<usize> = (0..=n_max).step_by(10).collect();
        let t: Vec<f64> = idx.iter().map(|&i| i as f64 * delta).collect();
        let r: Vec<f64> = idx.iter().map(|&i| radius[i]).collect();
        let exact = vec![r0; idx.len()];
        w.file(&format!("radius_delta_{}.csv", label(delta)), |b| write_columns(b, &["t", "radius_sq", "exact_radius_sq"], &[&t, &r, &exact]))?;
        let d = circle_divergence(delta, r0, n_max);
        w.metric(format!("divergence_delta_{}", label(delta)), d);
        w.check(format!("divergence_delta_{}", label(delta)), d > 1.0, format!("sup_n (|Y_n|^2 - |X_t|^2) = {d}"));
        div.push(d);
    }
    w.file("divergence.csv", |b| write_columns(b, &["delta", "divergence"], &[&c.deltas, &div]))
}

fn circle_noise(spec: &ExampleSpec, c: &ReproduceConfig, w: &mut ArtifactWriter) -> Result<()> {
    let delta = c.deltas[0];
    let stride = ((1.0 / delta).round() as usize).max(1);
    let run = RunSpec::new(spec.defaults.x0.clone(), delta, c.horizon, c.paths, c.seed).with_stride(stride);
    let m = moment_supremum(&spec.model, &run, None, 2.0)?;
    w.file("moments.csv", |b| m.write_csv(b))?;
    w.metric("sup_second_moment", m.sup);
    w.check("no_explosion", m.ends.exploded == 0, format!("{} exploded paths", m.ends.exploded));
    Ok(())
}

fn ou(spec: &ExampleSpec, c: &ReproduceConfig, w: &mut ArtifactWriter) -> Result<()> {
    let x = spec.defaults.x0[0];
    let mut sups = Vec::new();
    for &delta in &c.deltas {
        let n_steps = (c.horizon / delta).round() as u32;
        let t: Vec<f64> = (0..=n_steps).map(|n| n as f64 * delta).collect();
        let exact: Vec<f64> = t.iter().map(|&t| ou_exact_moments(x, t).1).collect();
        let euler: Vec<f64> = (0..=n_steps).map(|n| ou_euler_moments(x, delta, n).1).collect();
        let err: Vec<f64> = exact.iter().zip(&euler).map(|(a, b)| (a - b).abs()).collect();
        let sup = err.iter().cloned().fold(0.0, f64::max);
        w.file(&format!("weak_error_delta_{}.csv", label(delta)), |b| write_columns(b, &["t", "exact", "euler", "error"], &[&t, &exact, &euler, &err]))?;
        w.metric(format!("sup_error_delta_{}", label(delta)), sup);
        sups.push(sup);
    }
    for (i, pair) in sups.windows(2).enumerate() {
        let ratio = pair[0] / pair[1];
        w.metric(format!("ratio_{}", i + 1), ratio);
        w.check(format!("order_one_ratio_{}", i + 1), (1.7..=2.3).contains(&ratio), format!("sup error ratio {ratio}"));
    }
    Ok(())
}
