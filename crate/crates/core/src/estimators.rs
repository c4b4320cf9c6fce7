//! Monte Carlo estimators over Euler ensembles.
//!
//! Paths are processed in fixed chunks of 64 in parallel and the per-chunk
//! moments are merged in chunk order, so every number here is independent of
//! the worker count. Each estimate carries its standard error.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsl::{ScalarField, SmoothField, VectorField};
use crate::error::{Error, Result};
use crate::euler::{check_refinement, refine, run_path, Mesh, PathEnd, PathFunctional, SimOptions, SCHEMA_VERSION};
use crate::model::Dynamics;
use crate::noise::{Increments, NoiseStream};
use crate::numerics::{fit_line, Moments};

const CHUNK: u64 = 64;

/// Scalar observable on states; non-finite values are treated as missing samples.
pub type Observable<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// Common run parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub x0: Vec<f64>,
    pub delta: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Record every `stride`-th mesh state.
    #[serde(default = "one")]
    pub stride: usize,
}

fn one() -> usize {
    1
}

impl RunSpec {
    pub fn new(x0: Vec<f64>, delta: f64, horizon: f64, n_paths: usize, seed: u64) -> Self {
        RunSpec { x0, delta, horizon, n_paths, seed, stride: 1 }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }

    pub fn mesh(&self) -> Mesh {
        Mesh::over(self.delta, self.horizon).with_stride(self.stride)
    }

    fn validate<D: Dynamics + ?Sized>(&self, model: &D) -> Result<()> {
        if self.x0.len() != model.dim() {
            return Err(Error::Dimension(format!("x0 has {} coordinates, model has {}", self.x0.len(), model.dim())));
        }
        if self.n_paths == 0 {
            return Err(Error::Invalid("need at least one path".into()));
        }
        if !(self.horizon >= 0.0) {
            return Err(Error::Invalid(format!("horizon must be non-negative, got {}", self.horizon)));
        }
        Ok(())
    }
}

/// How the paths of an ensemble ended.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndCounts {
    pub completed: usize,
    pub exploded: usize,
    pub singular: usize,
    pub domain: usize,
    /// Earliest step at which any path exploded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_explosion: Option<usize>,
}

impl EndCounts {
    fn record(&mut self, end: &PathEnd) {
        match end {
            PathEnd::Completed => self.completed += 1,
            PathEnd::Exploded { step } => {
                self.exploded += 1;
                self.first_explosion = Some(self.first_explosion.map_or(*step, |s| s.min(*step)));
            }
            PathEnd::Singular { .. } => self.singular += 1,
            PathEnd::Domain { .. } => self.domain += 1,
        }
    }

    fn merge(&mut self, o: &EndCounts) {
        self.completed += o.completed;
        self.exploded += o.exploded;
        self.singular += o.singular;
        self.domain += o.domain;
        self.first_explosion = match (self.first_explosion, o.first_explosion) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }

    pub fn total(&self) -> usize {
        self.completed + self.exploded + self.singular + self.domain
    }

    pub fn explosion_fraction(&self) -> f64 {
        self.exploded as f64 / self.total().max(1) as f64
    }
}

/// Run `per_path` for every path and reduce the sample columns it fills.
/// Columns left as NaN are missing for that path.
fn reduce_paths<F>(n_paths: usize, cols: usize, per_path: F) -> Result<(Vec<Moments>, EndCounts)>
where
    F: Fn(u64, &mut [f64]) -> Result<PathEnd> + Sync,
{
    let n = n_paths as u64;
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<(Vec<Moments>, EndCounts)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Moments::default(); cols];
            let mut ends = EndCounts::default();
            let mut buf = vec![f64::NAN; cols];
            for p in c * CHUNK..((c + 1) * CHUNK).min(n) {
                buf.fill(f64::NAN);
                ends.record(&per_path(p, &mut buf)?);
                for (a, v) in acc.iter_mut().zip(&buf) {
                    if v.is_finite() {
                        a.push(*v);
                    }
                }
            }
            Ok((acc, ends))
        })
        .collect::<Result<_>>()?;
    let mut acc = vec![Moments::default(); cols];
    let mut ends = EndCounts::default();
    for (m, e) in &parts {
        for (a, b) in acc.iter_mut().zip(m) {
            a.merge(b);
        }
        ends.merge(e);
    }
    Ok((acc, ends))
}

fn increments<D: Dynamics + ?Sized>(model: &D, run: &RunSpec, path: u64, delta: f64, m: usize) -> Increments {
    Increments::new(NoiseStream::new(run.seed, path), model.noise_dim(), delta, m)
}

fn running_sup(xs: &[f64]) -> Vec<f64> {
    let mut best = f64::NEG_INFINITY;
    xs.iter()
        .map(|&x| {
            if x > best {
                best = x;
            }
            best
        })
        .collect()
}

/// Reference law for a weak-error curve.
#[derive(Clone, Copy)]
pub enum Reference<'a> {
    /// Closed-form `t -> E phi(X_t)`.
    Exact(&'a (dyn Fn(f64) -> f64 + Sync)),
    /// A coupled path with step `delta / m` driven by the same noise.
    Fine { m: usize },
}

/// Weak error `|E phi(X_t) - E phi(Y_t)|` at each recorded time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub schema_version: u32,
    pub times: Vec<f64>,
    /// Signed `E phi(Y_t) - reference`.
    pub difference: Vec<f64>,
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    pub sup_so_far: Vec<f64>,
    pub delta: f64,
    /// `None` for an exact reference.
    pub delta_ref: Option<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub ends: EndCounts,
    /// More than half of the paths exploded.
    pub divergent: bool,
}

impl ErrorCurve {
    pub fn sup(&self) -> f64 {
        self.sup_so_far.last().copied().unwrap_or(f64::NAN)
    }

    /// `t,estimate,stderr,sup_so_far`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_columns(w, &["t", "estimate", "stderr", "sup_so_far"], &[&self.times, &self.estimate, &self.stderr, &self.sup_so_far])
    }
}

pub fn weak_error_curve<D: Dynamics + ?Sized>(model: &D, phi: Observable, run: &RunSpec, reference: Reference) -> Result<ErrorCurve> {
    run.validate(model)?;
    let mesh = run.mesh();
    let cols = mesh.n_records();
    let opts = SimOptions::default();
    let (moments, ends, delta_ref) = match reference {
        Reference::Exact(_) => {
            let (m, e) = reduce_paths(run.n_paths, cols, |p, buf| {
                let mut incs = increments(model, run, p, mesh.delta, 1);
                run_path(model, &run.x0, &mesh, &mut incs, &opts, |r| {
                    buf[r.index] = phi(r.y);
                    true
                })
            })?;
            (m, e, None)
        }
        Reference::Fine { m } => {
            check_refinement(m)?;
            let fine_mesh = refine(&mesh, m);
            let (mo, e) = reduce_paths(run.n_paths, cols, |p, buf| {
                let mut incs = increments(model, run, p, mesh.delta, m);
                let coarse_end = run_path(model, &run.x0, &mesh, &mut incs, &opts, |r| {
                    buf[r.index] = phi(r.y);
                    true
                })?;
                let mut incs = increments(model, run, p, fine_mesh.delta, 1);
                let fine_end = run_path(model, &run.x0, &fine_mesh, &mut incs, &opts, |r| {
                    buf[r.index] -= phi(r.y);
                    true
                })?;
                // a failed fine path leaves later columns as coarse-only values: drop them
                if !fine_end.is_completed() {
                    let last = match &fine_end {
                        PathEnd::Exploded { step } | PathEnd::Singular { step } | PathEnd::Domain { step, .. } => step / m,
                        PathEnd::Completed => unreachable!(),
                    };
                    let from = last / mesh.stride;
                    buf.iter_mut().skip(from).for_each(|v| *v = f64::NAN);
                    return Ok(fine_end);
                }
                Ok(coarse_end)
            })?;
            (mo, e, Some(fine_mesh.delta))
        }
    };
    let times = mesh.times();
    let difference: Vec<f64> = match reference {
        Reference::Exact(f) => moments.iter().zip(&times).map(|(m, &t)| m.mean - f(t)).collect(),
        Reference::Fine { .. } => moments.iter().map(|m| m.mean).collect(),
    };
    let estimate: Vec<f64> = difference.iter().map(|d| d.abs()).collect();
    Ok(ErrorCurve {
        schema_version: SCHEMA_VERSION,
        sup_so_far: running_sup(&estimate),
        stderr: moments.iter().map(Moments::stderr).collect(),
        difference,
        estimate,
        times,
        delta: run.delta,
        delta_ref,
        n_paths: run.n_paths,
        seed: run.seed,
        divergent: ends.explosion_fraction() > 0.5,
        ends,
    })
}

/// Running supremum over mesh times of `E[|Y|^p u(Y)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCurve {
    pub schema_version: u32,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub sup_so_far: Vec<f64>,
    pub sup: f64,
    pub sup_time: f64,
    /// Standard error at the time the supremum is attained.
    pub sup_stderr: f64,
    pub max_stderr: f64,
    pub ends: EndCounts,
}

impl MomentCurve {
    /// `t,estimate,stderr,sup_so_far`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_columns(w, &["t", "estimate", "stderr", "sup_so_far"], &[&self.times, &self.mean, &self.stderr, &self.sup_so_far])
    }
}

pub fn moment_supremum<D: Dynamics + ?Sized>(model: &D, run: &RunSpec, weight: Option<Observable>, p: f64) -> Result<MomentCurve> {
    run.validate(model)?;
    let mesh = run.mesh();
    let opts = SimOptions::default();
    let (moments, ends) = reduce_paths(run.n_paths, mesh.n_records(), |path, buf| {
        let mut incs = increments(model, run, path, mesh.delta, 1);
        run_path(model, &run.x0, &mesh, &mut incs, &opts, |r| {
            let norm = r.y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let base = if p == 0.0 { 1.0 } else { norm.powf(p) };
            buf[r.index] = base * weight.map_or(1.0, |u| u(r.y));
            true
        })
    })?;
    let mean: Vec<f64> = moments.iter().map(|m| if m.n == 0 { f64::NAN } else { m.mean }).collect();
    let stderr: Vec<f64> = moments.iter().map(Moments::stderr).collect();
    let finite: Vec<f64> = mean.iter().map(|m| if m.is_nan() { f64::NEG_INFINITY } else { *m }).collect();
    let sup_so_far = running_sup(&finite);
    let (mut at, mut sup) = (0, f64::NEG_INFINITY);
    for (i, &m) in finite.iter().enumerate() {
        if m > sup {
            sup = m;
            at = i;
        }
    }
    Ok(MomentCurve {
        schema_version: SCHEMA_VERSION,
        times: mesh.times(),
        sup_time: mesh.time(at),
        sup_stderr: stderr[at],
        max_stderr: stderr.iter().copied().filter(|s| s.is_finite()).fold(0.0, f64::max),
        mean,
        stderr,
        sup_so_far,
        sup,
        ends,
    })
}

/// `E[exp(-2 int_0^t lambda(Y_s) ds)]` with a log-linear fit over the second half of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub schema_version: u32,
    pub times: Vec<f64>,
    pub decay: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Fitted `r` in `decay ~ exp(intercept - r t)`.
    pub rate: f64,
    pub intercept: f64,
    pub residual: f64,
    pub ends: EndCounts,
}

impl DecayFit {
    /// `t,decay,stderr`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_columns(w, &["t", "decay", "stderr"], &[&self.times, &self.decay, &self.stderr])
    }
}

/// Log-linear fit of positive values over the second half of the grid.
pub fn tail_rate(times: &[f64], values: &[f64]) -> Option<(f64, f64, f64)> {
    let start = times.len() / 2;
    let (xs, ys): (Vec<f64>, Vec<f64>) = times[start..]
        .iter()
        .zip(&values[start..])
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(t, v)| (*t, v.ln()))
        .unzip();
    fit_line(&xs, &ys).map(|f| (-f.slope, f.intercept, f.residual))
}

pub fn decay_functional<D: Dynamics + ?Sized>(model: &D, lambda: PathFunctional, run: &RunSpec) -> Result<DecayFit> {
    run.validate(model)?;
    let mesh = run.mesh();
    let opts = SimOptions { occupation: Some(lambda), ..Default::default() };
    let (moments, ends) = reduce_paths(run.n_paths, mesh.n_records(), |path, buf| {
        let mut incs = increments(model, run, path, mesh.delta, 1);
        run_path(model, &run.x0, &mesh, &mut incs, &opts, |r| {
            buf[r.index] = (-2.0 * r.occupation.unwrap_or(0.0)).exp();
            true
        })
    })?;
    let times = mesh.times();
    let decay: Vec<f64> = moments.iter().map(|m| m.mean).collect();
    let (rate, intercept, residual) = tail_rate(&times, &decay).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
    Ok(DecayFit {
        schema_version: SCHEMA_VERSION,
        stderr: moments.iter().map(Moments::stderr).collect(),
        times,
        decay,
        rate,
        intercept,
        residual,
        ends,
    })
}

/// Per-time estimate with standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub schema_version: u32,
    pub times: Vec<f64>,
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    pub ends: EndCounts,
}

impl Curve {
    /// `t,estimate,stderr`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_columns(w, &["t", "estimate", "stderr"], &[&self.times, &self.estimate, &self.stderr])
    }

    /// Fitted exponential decay rate of `|estimate|` over the second half,
    /// using only points resolved above two standard errors.
    pub fn decay_rate(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .estimate
            .iter()
            .zip(&self.stderr)
            .map(|(e, s)| if e.abs() > 2.0 * s { e.abs() } else { f64::NAN })
            .collect();
        tail_rate(&self.times, &vals).map(|r| r.0)
    }

    /// Indices where `|estimate| > bound(t) + 3 stderr`.
    pub fn exceedances(&self, bound: impl Fn(f64) -> f64) -> Vec<usize> {
        (0..self.times.len())
            .filter(|&i| self.estimate[i].abs() > bound(self.times[i]) + 3.0 * self.stderr[i])
            .collect()
    }
}

/// `V P_t f (x0) = E[grad f(Y_t)^T J_t V(x0)]`.
pub fn derivative_estimate<D: Dynamics + ?Sized>(model: &D, f: &ScalarField, v: &VectorField, run: &RunSpec) -> Result<Curve> {
    run.validate(model)?;
    let n = model.dim();
    if f.dim() != n || v.dim() != n {
        return Err(Error::Dimension("observable, direction and model must share a dimension".into()));
    }
    let v0 = v.eval(&run.x0)?;
    let mesh = run.mesh();
    let opts = SimOptions { jacobian: true, ..Default::default() };
    let (moments, ends) = reduce_paths(run.n_paths, mesh.n_records(), |path, buf| {
        let mut incs = increments(model, run, path, mesh.delta, 1);
        let mut jv = vec![0.0; n];
        run_path(model, &run.x0, &mesh, &mut incs, &opts, |r| {
            let j = r.jacobian.expect("jacobian requested");
            for (i, o) in jv.iter_mut().enumerate() {
                *o = (0..n).map(|k| j[i * n + k] * v0[k]).sum();
            }
            // directional derivative of f along J V
            buf[r.index] = f.along(r.y, &jv).map_or(f64::NAN, |d| d[1]);
            true
        })
    })?;
    Ok(Curve {
        schema_version: SCHEMA_VERSION,
        times: mesh.times(),
        estimate: moments.iter().map(|m| m.mean).collect(),
        stderr: moments.iter().map(Moments::stderr).collect(),
        ends,
    })
}

/// Outcome of the pathwise carre-du-champ comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub n_paths: usize,
    pub checked_points: usize,
    pub violating_paths: usize,
    /// Largest `(right - left) / right` seen (negative when all comparisons hold strictly).
    pub worst_relative_gap: f64,
    pub ends: EndCounts,
    pub slack: f64,
}

impl GammaReport {
    pub fn violation_fraction(&self) -> f64 {
        self.violating_paths as f64 / self.n_paths.max(1) as f64
    }
}

/// For one-dimensional additive noise: on each path and at every mesh time,
/// `exp(-2 int lambda) |f'(Y_t)|^2 s^2 >= |f'(Y_t) J_t|^2 s^2` with `s^2 = sum_k sigma_k^2`.
/// A violation is `left < right (1 - slack)`.
pub fn gamma_pathwise_check<D: Dynamics + ?Sized>(
    model: &D,
    lambda: PathFunctional,
    f: &ScalarField,
    run: &RunSpec,
    slack: f64,
) -> Result<GammaReport> {
    run.validate(model)?;
    if model.dim() != 1 || !model.is_additive() {
        return Err(Error::Unsupported("the pathwise inequality check needs a one-dimensional model with additive noise".into()));
    }
    let mut s2 = 0.0;
    let mut v = [0.0];
    for k in 0..model.noise_dim() {
        model.diffusion(k, &run.x0, &mut v)?;
        s2 += v[0] * v[0];
    }
    let mesh = run.mesh();
    let opts = SimOptions { jacobian: true, occupation: Some(lambda), ..Default::default() };
    let per_path: Vec<(bool, usize, f64, PathEnd)> = (0..run.n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut incs = increments(model, run, p, mesh.delta, 1);
            let (mut bad, mut count, mut worst) = (false, 0usize, f64::NEG_INFINITY);
            let end = run_path(model, &run.x0, &mesh, &mut incs, &opts, |r| {
                let fp = f.derivatives_1d(r.y[0]).map_or(f64::NAN, |d| d[1]);
                let j = r.jacobian.expect("jacobian requested")[0];
                let left = (-2.0 * r.occupation.unwrap_or(0.0)).exp() * fp * fp * s2;
                let right = (fp * j).powi(2) * s2;
                count += 1;
                if right > 0.0 {
                    worst = worst.max((right - left) / right);
                }
                if left < right * (1.0 - slack) || !left.is_finite() {
                    bad = true;
                }
                true
            })?;
            Ok((bad, count, worst, end))
        })
        .collect::<Result<_>>()?;
    let mut report = GammaReport {
        n_paths: run.n_paths,
        checked_points: 0,
        violating_paths: 0,
        worst_relative_gap: f64::NEG_INFINITY,
        ends: EndCounts::default(),
        slack,
    };
    for (bad, count, worst, end) in &per_path {
        report.violating_paths += *bad as usize;
        report.checked_points += count;
        report.worst_relative_gap = report.worst_relative_gap.max(*worst);
        report.ends.record(end);
    }
    Ok(report)
}

/// Time averages `(1/t) int_0^t phi(Y_s) ds` averaged over paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicCurve {
    pub schema_version: u32,
    pub times: Vec<f64>,
    pub average: Vec<f64>,
    pub stderr: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<Vec<f64>>,
    pub ends: EndCounts,
}

impl ErgodicCurve {
    /// `t,estimate,stderr[,gap]`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        match &self.gap {
            Some(g) => write_columns(w, &["t", "estimate", "stderr", "gap"], &[&self.times, &self.average, &self.stderr, g]),
            None => write_columns(w, &["t", "estimate", "stderr"], &[&self.times, &self.average, &self.stderr]),
        }
    }
}

/// Trapezoid time averages on the full mesh; recorded every `stride` steps.
pub fn ergodic_average<D: Dynamics + ?Sized>(model: &D, phi: Observable, run: &RunSpec, oracle: Option<f64>) -> Result<ErgodicCurve> {
    run.validate(model)?;
    let mesh = run.mesh();
    let full = Mesh::new(mesh.delta, mesh.n_steps);
    let stride = mesh.stride;
    let opts = SimOptions::default();
    let (moments, ends) = reduce_paths(run.n_paths, mesh.n_records(), |path, buf| {
        let mut incs = increments(model, run, path, mesh.delta, 1);
        let (mut integral, mut prev) = (0.0, f64::NAN);
        run_path(model, &run.x0, &full, &mut incs, &opts, |r| {
            let v = phi(r.y);
            if r.index > 0 {
                integral += 0.5 * full.delta * (prev + v);
            }
            prev = v;
            if r.index % stride == 0 {
                let t = full.time(r.index);
                buf[r.index / stride] = if r.index == 0 { v } else { integral / t };
            }
            true
        })
    })?;
    let average: Vec<f64> = moments.iter().map(|m| m.mean).collect();
    Ok(ErgodicCurve {
        schema_version: SCHEMA_VERSION,
        times: mesh.times(),
        stderr: moments.iter().map(Moments::stderr).collect(),
        gap: oracle.map(|o| average.iter().map(|a| a - o).collect()),
        average,
        oracle,
        ends,
    })
}

/// Write equal-length columns under `header`.
pub fn write_columns<W: Write>(w: W, header: &[&str], cols: &[&[f64]]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(csv_err)?;
    let n = cols.first().map_or(0, |c| c.len());
    let mut row: Vec<String> = Vec::with_capacity(cols.len());
    for i in 0..n {
        row.clear();
        row.extend(cols.iter().map(|c| c[i].to_string()));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::builtin_example;
    use crate::model::SdeModel;

    fn model(name: &str) -> SdeModel {
        builtin_example(name).unwrap().model
    }

    #[test]
    fn ou_exact_error_is_closed_form_without_noise() {
        // phi = x on a noise-free OU: the error is deterministic
        let m = SdeModel::parse("ode", crate::model::Convention::Ito, &["-x1"], &[] as &[Vec<&str>]).unwrap();
        let run = RunSpec::new(vec![2.0], 0.1, 3.0, 5, 1);
        let exact = |t: f64| 2.0 * (-t).exp();
        let c = weak_error_curve(&m, &|y| y[0], &run, Reference::Exact(&exact)).unwrap();
        for (i, &t) in c.times.iter().enumerate() {
            let want = (2.0 * 0.9f64.powi(i as i32) - 2.0 * (-t).exp()).abs();
            assert!((c.estimate[i] - want).abs() < 1e-12);
            assert_eq!(c.stderr[i], 0.0);
        }
        assert!(c.sup_so_far.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn equal_meshes_give_zero_error() {
        let run = RunSpec::new(vec![1.5], 0.05, 2.0, 50, 3);
        let c = weak_error_curve(&model("arctan"), &|y| y[0].tanh(), &run, Reference::Fine { m: 1 }).unwrap();
        assert!(c.estimate.iter().all(|&e| e == 0.0));
        assert!(weak_error_curve(&model("arctan"), &|y| y[0], &run, Reference::Fine { m: 3 }).is_err());
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let run = RunSpec::new(vec![1.0], 0.05, 1.0, 300, 11);
        let go = || weak_error_curve(&model("arctan"), &|y| y[0], &run, Reference::Fine { m: 4 }).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(go);
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(go);
        assert_eq!(one, three);
    }

    #[test]
    fn trivial_moments_and_decay() {
        let run = RunSpec::new(vec![0.3], 0.1, 2.0, 20, 5);
        let mc = moment_supremum(&model("arctan"), &run, None, 0.0).unwrap();
        assert!(mc.mean.iter().all(|&m| m == 1.0));
        assert_eq!(mc.sup, 1.0);
        let lam = |_: &[f64]| Some(0.4);
        let d = decay_functional(&model("arctan"), &lam, &run).unwrap();
        for (t, v) in d.times.iter().zip(&d.decay) {
            assert!((v - (-0.8 * t).exp()).abs() < 1e-12);
        }
        assert!(d.stderr.iter().all(|s| *s < 1e-12));
        assert!((d.rate - 0.8).abs() < 1e-9);
    }

    #[test]
    fn decay_stays_in_unit_interval_for_nonnegative_lambda() {
        let run = RunSpec::new(vec![0.0], 0.02, 2.0, 200, 5);
        let lam = |y: &[f64]| Some(1.0 / (1.0 + y[0] * y[0]));
        let d = decay_functional(&model("arctan"), &lam, &run).unwrap();
        assert!(d.decay.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn ou_derivative_is_deterministic() {
        let run = RunSpec::new(vec![0.7], 0.1, 3.0, 8, 2);
        let f = ScalarField::parse("x1", 1).unwrap();
        let v = VectorField::parse(&["1"], 1).unwrap();
        let c = derivative_estimate(&model("ou"), &f, &v, &run).unwrap();
        for (i, e) in c.estimate.iter().enumerate() {
            // trapezoid of b' = -1 gives exactly exp(-t)
            assert!((e - (-c.times[i]).exp()).abs() < 1e-12);
            assert_eq!(c.stderr[i], 0.0);
        }
        let g = ScalarField::parse("3", 1).unwrap();
        let zero = derivative_estimate(&model("ou"), &g, &v, &run).unwrap();
        assert!(zero.estimate.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn variational_ou_derivative_matches_recurrence() {
        // through the multiplicative-noise code path (Stratonovich form with constant noise is additive,
        // so force the general variational step with a two-dimensional OU)
        let m = SdeModel::parse("ou2", crate::model::Convention::Ito, &["-x1", "-x2"], &[vec!["1", "0"], vec!["0", "1"]]).unwrap();
        let run = RunSpec::new(vec![0.5, 0.1], 0.1, 2.0, 4, 9);
        let f = ScalarField::parse("x1", 2).unwrap();
        let v = VectorField::parse(&["1", "0"], 2).unwrap();
        let c = derivative_estimate(&m, &f, &v, &run).unwrap();
        for (i, e) in c.estimate.iter().enumerate() {
            assert!((e - 0.9f64.powi(i as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_equality_cases() {
        let run = RunSpec::new(vec![0.2], 0.01, 2.0, 20, 4);
        let f = ScalarField::parse("tanh(x1)", 1).unwrap();
        let ou_lam = |_: &[f64]| Some(1.0);
        let r = gamma_pathwise_check(&model("ou"), &ou_lam, &f, &run, 1e-6).unwrap();
        assert_eq!(r.violating_paths, 0);
        assert!(r.worst_relative_gap.abs() < 1e-8);
        let drift = SdeModel::parse("c", crate::model::Convention::Ito, &["0.3"], &[vec!["1"]]).unwrap();
        let zero = |_: &[f64]| Some(0.0);
        let r = gamma_pathwise_check(&drift, &zero, &f, &run, 1e-6).unwrap();
        assert_eq!(r.violating_paths, 0);
        assert!(r.worst_relative_gap.abs() < 1e-14);
        // a rate larger than the truth must be caught
        let too_big = |_: &[f64]| Some(2.0);
        let r = gamma_pathwise_check(&model("ou"), &too_big, &f, &run, 1e-6).unwrap();
        assert_eq!(r.violating_paths, 20);
    }

    #[test]
    fn ergodic_constant_and_stride() {
        let run = RunSpec::new(vec![0.5], 0.01, 1.0, 10, 4).with_stride(10);
        let c = ergodic_average(&model("arctan"), &|_| 2.5, &run, Some(2.5)).unwrap();
        assert_eq!(c.times.len(), 11);
        assert!(c.average.iter().all(|&a| (a - 2.5).abs() < 1e-12));
        assert!(c.gap.unwrap().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn explosions_are_counted_and_excluded() {
        let run = RunSpec::new(vec![4.0], 1.0, 10.0, 100, 1);
        let c = moment_supremum(&model("xcubed"), &run, None, 2.0).unwrap();
        assert_eq!(c.ends.exploded, 100);
        assert!(c.ends.first_explosion.unwrap() <= 10);
        assert!(c.sup > 1e8);
        let e = weak_error_curve(&model("xcubed"), &|y| y[0], &run, Reference::Exact(&|_| 0.0)).unwrap();
        assert!(e.divergent);
    }

    #[test]
    fn csv_headers() {
        let run = RunSpec::new(vec![0.0], 0.5, 1.0, 2, 1);
        let c = weak_error_curve(&model("ou"), &|y| y[0], &run, Reference::Exact(&|_| 0.0)).unwrap();
        let mut out = Vec::new();
        c.write_csv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("t,estimate,stderr,sup_so_far\n0,0,0,0\n"));
        let lam = |_: &[f64]| Some(0.0);
        let d = decay_functional(&model("ou"), &lam, &run).unwrap();
        let mut out = Vec::new();
        d.write_csv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("t,decay,stderr\n"));
    }
}
