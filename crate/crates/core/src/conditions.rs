//! Grid-based audits of the structural hypotheses: obtuse-angle conditions,
//! commutation, ellipticity, the Xi-gap and Lyapunov inequalities.
//!
//! These are numerical audits on finite grids, not proofs.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dsl::{commutator, Bracket, ScalarField, SmoothField, VectorField};
use crate::error::{Error, Result};
use crate::jet::Jet4;
use crate::model::SdeModel;

/// Below this, `|V(x)|` counts as vanishing.
pub const SINGULAR_TOL: f64 = 1e-12;
/// Directions with `|xi . V(x)|` below this are skipped in the N-D obtuse-angle estimate.
pub const XI_TOL: f64 = 1e-10;
pub const COMMUTATION_TOL: f64 = 1e-8;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inapplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub check: String,
    pub verdict: Verdict,
    pub grid: String,
    pub grid_points: usize,
    /// The headline statistic (minimum, maximum or fitted constant, depending on the check).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ConditionReport {
    fn new(check: &str, grid: String, grid_points: usize) -> Self {
        ConditionReport {
            check: check.into(),
            verdict: Verdict::Inapplicable,
            grid,
            grid_points,
            value: None,
            witness: None,
            details: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

fn describe_points(points: &[Vec<f64>]) -> String {
    if points.is_empty() {
        return "empty".into();
    }
    let n = points[0].len();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for p in points {
        for i in 0..n {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    let parts: Vec<String> = (0..n).map(|i| format!("[{}, {}]", lo[i], hi[i])).collect();
    format!("{} points in {}", points.len(), parts.join(" x "))
}

/// `x -> lambda(x)`, or a marker where it is undefined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaValue {
    Regular(f64),
    Singular,
}

impl LambdaValue {
    pub fn regular(self) -> Option<f64> {
        match self {
            LambdaValue::Regular(v) => Some(v),
            LambdaValue::Singular => None,
        }
    }
}

#[derive(Clone, Debug)]
enum LambdaSource {
    Constant(f64),
    Expr(ScalarField),
    /// `-[V1, V0] . V1 / |V1|^2` for a one-dimensional model with one noise field.
    Induced(Box<SdeModel>),
}

/// The rate function in the local obtuse-angle condition.
#[derive(Clone, Debug)]
pub struct LambdaFunction {
    source: LambdaSource,
    pub singular_points: Vec<f64>,
    pub notes: Vec<String>,
}

impl LambdaFunction {
    pub fn constant(c: f64) -> Self {
        LambdaFunction { source: LambdaSource::Constant(c), singular_points: vec![], notes: vec![] }
    }

    pub fn from_expr(f: ScalarField, singular_points: Vec<f64>) -> Self {
        LambdaFunction { source: LambdaSource::Expr(f), singular_points, notes: vec![] }
    }

    /// The tight rate for a one-dimensional model driven by a single noise field.
    pub fn induced(model: &SdeModel) -> Result<Self> {
        if model.dim() != 1 || model.noise_dim() != 1 {
            return Err(Error::Unsupported("induced lambda needs N = 1 and d = 1".into()));
        }
        Ok(LambdaFunction {
            source: LambdaSource::Induced(Box::new(model.clone())),
            singular_points: vec![],
            notes: vec![format!("induced from the fields of `{}`", model.label())],
        })
    }

    pub fn eval(&self, x: &[f64]) -> LambdaValue {
        if x.len() == 1 && self.singular_points.iter().any(|p| (x[0] - p).abs() < SINGULAR_TOL) {
            return LambdaValue::Singular;
        }
        let v = match &self.source {
            LambdaSource::Constant(c) => Ok(LambdaValue::Regular(*c)),
            LambdaSource::Expr(f) => f.value(x).map(LambdaValue::Regular).map_err(Error::from),
            LambdaSource::Induced(m) => loac_lambda_1d(&m.stratonovich_field(), &m.diffusions()[0], x[0]),
        };
        match v {
            Ok(LambdaValue::Regular(l)) if l.is_finite() => LambdaValue::Regular(l),
            _ => LambdaValue::Singular,
        }
    }

    /// Closure form used for occupation integrals.
    pub fn functional(&self) -> impl Fn(&[f64]) -> Option<f64> + Sync + '_ {
        move |x| self.eval(x).regular()
    }
}

/// `lambda(x) = -[V1, V0](x) V1(x) / |V1(x)|^2` in one dimension.
pub fn loac_lambda_1d<A: SmoothField>(v0: &A, v1: &VectorField, x: f64) -> Result<LambdaValue> {
    if v0.dim() != 1 || v1.dim() != 1 {
        return Err(Error::Dimension("loac_lambda_1d needs one-dimensional fields".into()));
    }
    let s = v1.eval(&[x])?[0];
    if s.abs() < SINGULAR_TOL {
        return Ok(LambdaValue::Singular);
    }
    let c = commutator(v1, v0, &[x])?[0];
    Ok(LambdaValue::Regular(-c * s / (s * s)))
}

/// Unit directions for quadratic-form checks: the coordinate axes, 64 points on
/// each coordinate great circle, and for `N >= 3` a further `64 N` low-discrepancy
/// points on the sphere. Antipodal points are omitted (all forms used are even).
pub fn unit_directions(n: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        dirs.push(e);
    }
    for i in 0..n {
        for j in i + 1..n {
            for k in 1..64 {
                if k == 32 {
                    continue;
                }
                let th = std::f64::consts::PI * k as f64 / 64.0;
                let mut v = vec![0.0; n];
                v[i] = th.cos();
                v[j] = th.sin();
                dirs.push(v);
            }
        }
    }
    if n >= 3 {
        // Halton points mapped to normals, then normalised
        let primes = [2u32, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
        let halton = |mut i: u32, b: u32| {
            let (mut f, mut r) = (1.0, 0.0);
            while i > 0 {
                f /= b as f64;
                r += f * (i % b) as f64;
                i /= b;
            }
            r
        };
        for idx in 1..=(64 * n as u32) {
            let mut v: Vec<f64> = (0..n)
                .map(|c| {
                    let (u1, u2) = (halton(idx, primes[(2 * c) % 16]), halton(idx, primes[(2 * c + 1) % 16]));
                    (-2.0 * u1.max(1e-12).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-9 {
                v.iter_mut().for_each(|a| *a /= norm);
                dirs.push(v);
            }
        }
    }
    dirs
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-point estimate of the best obtuse-angle rate along `V`.
#[derive(Clone, Debug)]
pub struct LoacEstimate {
    /// `None` where `V` is orthogonal to every grid direction.
    pub lambda_hat: Vec<Option<f64>>,
    pub report: ConditionReport,
}

/// `lambda_hat(x) = min over xi of -(xi.[V,V0](x)) (V(x).xi) / |xi.V(x)|^2`.
/// Passes when the minimum over the grid is positive (the uniform condition).
pub fn loac_check_nd<A: SmoothField>(v: &VectorField, v0: &A, grid_x: &[Vec<f64>], grid_xi: &[Vec<f64>]) -> Result<LoacEstimate> {
    if grid_x.is_empty() || grid_xi.is_empty() {
        return Err(Error::Invalid("obtuse-angle check needs non-empty grids".into()));
    }
    let mut report = ConditionReport::new("obtuse_angle", describe_points(grid_x), grid_x.len() * grid_xi.len());
    let mut lambda_hat = Vec::with_capacity(grid_x.len());
    let mut worst: Option<Witness> = None;
    let mut vanishing = 0usize;
    for x in grid_x {
        let vx = v.eval(x)?;
        let br = commutator(v, v0, x)?;
        let mut best: Option<(f64, &Vec<f64>)> = None;
        for xi in grid_xi {
            let p = dot(xi, &vx);
            if p.abs() <= XI_TOL {
                continue;
            }
            let r = -dot(xi, &br) * p / (p * p);
            if best.map_or(true, |(b, _)| r < b) {
                best = Some((r, xi));
            }
        }
        match best {
            Some((r, xi)) => {
                lambda_hat.push(Some(r));
                if worst.as_ref().map_or(true, |w| r < w.value) {
                    worst = Some(Witness { x: x.clone(), xi: Some(xi.clone()), value: r });
                }
            }
            None => {
                lambda_hat.push(None);
                vanishing += 1;
            }
        }
    }
    if vanishing > 0 {
        report.notes.push(format!("V vanishes on the direction grid at {vanishing} point(s); inapplicable there"));
    }
    if let Some(w) = worst {
        report.value = Some(w.value);
        report.verdict = if w.value > 0.0 { Verdict::Pass } else { Verdict::Fail };
        report.witness = Some(w);
    }
    Ok(LoacEstimate { lambda_hat, report })
}

/// `max |[V, V_k](x)|` over the grid for each k; pass iff all are below `1e-8`.
pub fn commutation_check(v: &VectorField, diffusions: &[VectorField], grid_x: &[Vec<f64>]) -> Result<ConditionReport> {
    let mut report = ConditionReport::new("commutation", describe_points(grid_x), grid_x.len());
    let mut worst = Witness { x: vec![], xi: None, value: 0.0 };
    for (k, vk) in diffusions.iter().enumerate() {
        let mut max_k: f64 = 0.0;
        for x in grid_x {
            let c = commutator(v, vk, x)?;
            let norm = dot(&c, &c).sqrt();
            max_k = max_k.max(norm);
            if norm > worst.value || worst.x.is_empty() {
                worst = Witness { x: x.clone(), xi: None, value: norm };
            }
        }
        report.details.insert(format!("max_norm_V{}", k + 1), max_k);
    }
    report.value = Some(worst.value);
    report.verdict = if worst.value < COMMUTATION_TOL { Verdict::Pass } else { Verdict::Fail };
    if report.verdict == Verdict::Fail {
        report.witness = Some(worst);
    }
    Ok(report)
}

/// `nu_hat = min over (x, xi) of sum_k |xi . V_k(x)|^2`; pass iff positive.
pub fn ellipticity_check(dim: usize, diffusions: &[VectorField], grid_x: &[Vec<f64>], grid_xi: &[Vec<f64>]) -> Result<ConditionReport> {
    let mut report = ConditionReport::new("ellipticity", describe_points(grid_x), grid_x.len() * grid_xi.len());
    let mut worst: Option<Witness> = None;
    for x in grid_x {
        let vs = diffusions.iter().map(|v| v.eval(x)).collect::<Result<Vec<_>, _>>()?;
        for xi in grid_xi {
            let q: f64 = vs.iter().map(|v| dot(xi, v).powi(2)).sum();
            if worst.as_ref().map_or(true, |w| q < w.value) {
                worst = Some(Witness { x: x.clone(), xi: Some(xi.clone()), value: q });
            }
        }
    }
    let w = worst.ok_or_else(|| Error::Invalid("ellipticity check needs non-empty grids".into()))?;
    report.value = Some(w.value);
    report.verdict = if w.value > 0.0 { Verdict::Pass } else { Verdict::Fail };
    if w.value > 0.0 && w.value < 1e-6 {
        report.notes.push("nu_hat is positive but below 1e-6: nearly degenerate on this grid".into());
    }
    if diffusions.is_empty() {
        report.notes.push(format!("no noise fields in dimension {dim}"));
    }
    report.witness = Some(w);
    Ok(report)
}

/// `Lg(x) = U0 . grad g + sum_k V_k^T (Hess g) V_k`.
pub fn apply_generator(model: &SdeModel, g: &ScalarField, x: &[f64]) -> Result<f64> {
    let u0 = model.ito_drift(x)?;
    let mut out = g.along(x, &u0)?[1];
    for v in model.diffusions() {
        let vx = v.eval(x)?;
        out += g.along(x, &vx)?[2];
    }
    Ok(out)
}

fn additive_variance(model: &SdeModel) -> Result<f64> {
    if model.dim() != 1 || !model.is_additive() {
        return Err(Error::Unsupported("Xi needs a one-dimensional model with additive noise".into()));
    }
    let mut s2 = 0.0;
    for v in model.diffusions() {
        s2 += v.eval(&[0.0])?[0].powi(2);
    }
    Ok(s2)
}

/// `Xi(x) = L cosh(alpha x) / cosh(alpha x) = alpha^2 sigma^2 + alpha b(x) tanh(alpha x)`,
/// where `sigma^2 = sum_k V_k^2` (1 for the standard model).
pub fn xi_function(model: &SdeModel, alpha: f64, x: f64) -> Result<f64> {
    let s2 = additive_variance(model)?;
    let b = model.ito_drift(&[x])?[0];
    Ok(alpha * alpha * s2 + alpha * b * (alpha * x).tanh())
}

/// Outcome of the `2 lambda - Xi` audit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapResult {
    pub alpha: f64,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_points: usize,
    pub infimum: f64,
    pub lambda0: f64,
    pub argmin: f64,
    pub left_end: f64,
    pub right_end: f64,
    pub verdict: Verdict,
    pub warnings: Vec<String>,
}

/// One row of the `x,lambda,xi,gap` dump.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GapRow {
    pub x: f64,
    pub lambda: f64,
    pub xi: f64,
    pub gap: f64,
}

pub fn gap_rows(lambda: &LambdaFunction, xi: &dyn Fn(f64) -> Result<f64>, grid: &[f64]) -> Result<Vec<GapRow>> {
    grid.iter()
        .map(|&x| {
            let l = lambda
                .eval(&[x])
                .regular()
                .ok_or_else(|| Error::Invalid(format!("lambda is singular at grid point {x}")))?;
            let z = xi(x)?;
            Ok(GapRow { x, lambda: l, xi: z, gap: 2.0 * l - z })
        })
        .collect()
}

/// `inf over grid of 2 lambda - Xi`, with `lambda0 = inf / 2`. Passes iff the infimum is positive.
pub fn gap_check(lambda: &LambdaFunction, xi: &dyn Fn(f64) -> Result<f64>, grid: &[f64], alpha: f64) -> Result<GapResult> {
    if grid.len() < 2 {
        return Err(Error::Invalid("gap check needs at least two grid points".into()));
    }
    let rows = gap_rows(lambda, xi, grid)?;
    Ok(summarize_gap(&rows, alpha))
}

pub fn summarize_gap(rows: &[GapRow], alpha: f64) -> GapResult {
    let (mut inf, mut arg) = (f64::INFINITY, f64::NAN);
    for r in rows {
        if r.gap < inf {
            inf = r.gap;
            arg = r.x;
        }
    }
    let n = rows.len();
    let mut warnings = Vec::new();
    if rows[0].gap < rows[1].gap {
        warnings.push(format!("2 lambda - Xi decreases outward at the left end x = {}", rows[0].x));
    }
    if rows[n - 1].gap < rows[n - 2].gap {
        warnings.push(format!("2 lambda - Xi decreases outward at the right end x = {}", rows[n - 1].x));
    }
    GapResult {
        alpha,
        grid_lo: rows[0].x,
        grid_hi: rows[n - 1].x,
        grid_points: n,
        infimum: inf,
        lambda0: inf / 2.0,
        argmin: arg,
        left_end: rows[0].gap,
        right_end: rows[n - 1].gap,
        verdict: if inf > 0.0 { Verdict::Pass } else { Verdict::Fail },
        warnings,
    }
}

/// Default `c` values scanned by [`lyapunov_check`].
pub const LYAPUNOV_C_GRID: [f64; 8] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0];

/// Search for `(c, d)` with `LG <= -cG + d`.
///
/// For each `c`, `d` is the grid maximum of `LG + cG`. A candidate is accepted
/// only if that maximum is attained away from the outer shell of the grid and
/// the function stays below it at radial probes 2, 4, 8 and 16 times further
/// out; otherwise the required `d` grows with the grid. Reports the largest
/// accepted `c`.
pub fn lyapunov_check(model: &SdeModel, g: &ScalarField, grid_x: &[Vec<f64>], c: Option<f64>) -> Result<ConditionReport> {
    let mut report = ConditionReport::new("lyapunov", describe_points(grid_x), grid_x.len());
    let h = |x: &[f64], c: f64| -> Result<f64> { Ok(apply_generator(model, g, x)? + c * g.value(x)?) };
    let norm = |x: &[f64]| dot(x, x).sqrt();
    let rmax = grid_x.iter().map(|x| norm(x)).fold(0.0, f64::max);
    let cs: Vec<f64> = c.map_or_else(|| LYAPUNOV_C_GRID.to_vec(), |c| vec![c]);
    let mut accepted: Option<(f64, f64)> = None;
    let mut last_fail: Option<Witness> = None;
    for &c in &cs {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, x) in grid_x.iter().enumerate() {
            let v = h(x, c)?;
            if !v.is_finite() {
                return Err(Error::Invalid(format!("LG + cG is not finite at {x:?}")));
            }
            if v > best.0 {
                best = (v, i);
            }
        }
        let (d, at) = best;
        let interior = norm(&grid_x[at]) < 0.95 * rmax || rmax == 0.0;
        let mut escape: Option<Witness> = None;
        for x in grid_x.iter().filter(|x| norm(x) >= 0.95 * rmax && norm(x) > 0.0) {
            for k in [2.0, 4.0, 8.0, 16.0] {
                let far: Vec<f64> = x.iter().map(|v| v * k).collect();
                // overflow far out is inconclusive, not a failure
                if let Ok(v) = h(&far, c) {
                    if v.is_finite() && v > d && escape.is_none() {
                        escape = Some(Witness { x: far, xi: None, value: v });
                    }
                }
            }
        }
        report.details.insert(format!("d_at_c={c}"), d);
        if interior && escape.is_none() {
            if accepted.map_or(true, |(ca, _)| c > ca) {
                accepted = Some((c, d));
            }
        } else {
            last_fail = Some(escape.unwrap_or(Witness { x: grid_x[at].clone(), xi: None, value: d }));
        }
    }
    match accepted {
        Some((c, d)) => {
            report.verdict = Verdict::Pass;
            report.value = Some(d);
            report.details.insert("c".into(), c);
            report.details.insert("d".into(), d);
        }
        None => {
            report.verdict = Verdict::Fail;
            report.witness = last_fail;
            report.notes.push("LG + cG keeps growing at the edge of the grid for every c tried".into());
        }
    }
    Ok(report)
}

/// `x . b(x) <= -|x|^2` at every grid point with `|x| > radius`.
pub fn dissipativity_check(model: &SdeModel, grid_x: &[Vec<f64>], radius: f64) -> Result<ConditionReport> {
    let mut report = ConditionReport::new("dissipativity", describe_points(grid_x), grid_x.len());
    let mut worst: Option<Witness> = None;
    for x in grid_x.iter().filter(|x| dot(x, x).sqrt() > radius) {
        let b = model.ito_drift(x)?;
        let excess = dot(x, &b) + dot(x, x);
        if worst.as_ref().map_or(true, |w| excess > w.value) {
            worst = Some(Witness { x: x.clone(), xi: None, value: excess });
        }
    }
    let Some(w) = worst else {
        report.notes.push(format!("no grid point beyond radius {radius}"));
        return Ok(report);
    };
    report.value = Some(w.value);
    report.details.insert("radius".into(), radius);
    report.verdict = if w.value <= 1e-12 * (1.0 + dot(&w.x, &w.x)) { Verdict::Pass } else { Verdict::Fail };
    if report.verdict == Verdict::Fail {
        report.witness = Some(w);
    }
    Ok(report)
}

/// Bracket helper used by reports: `|[V, W](x)|`.
pub fn bracket_norm(v: &VectorField, w: &VectorField, x: &[f64]) -> Result<f64> {
    let b = Bracket::new(v, w)?;
    let mut out = vec![0.0; x.len()];
    b.eval_into(x, &mut out)?;
    Ok(dot(&out, &out).sqrt())
}

/// `x,lambda,xi,gap` rows as CSV.
pub fn write_gap_csv<W: std::io::Write>(rows: &[GapRow], w: W) -> Result<()> {
    let xs: Vec<f64> = rows.iter().map(|r| r.x).collect();
    let ls: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    let zs: Vec<f64> = rows.iter().map(|r| r.xi).collect();
    let gs: Vec<f64> = rows.iter().map(|r| r.gap).collect();
    crate::estimators::write_columns(w, &["x", "lambda", "xi", "gap"], &[&xs, &ls, &zs, &gs])
}

/// Grids and parameters for [`hypothesis_report`].
#[derive(Clone, Debug, Serialize)]
pub struct HypothesisOptions {
    pub alpha: f64,
    /// `(lo, hi, step)` for one-dimensional models.
    pub grid_1d: (f64, f64, f64),
    /// Half-width of the box `[-r, r]^N` used for `N >= 2`.
    pub box_radius: f64,
    pub points_per_axis: usize,
    /// Optional Lyapunov function checked with a scan over `c`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<String>,
    /// Check `x . b(x) <= -|x|^2` beyond this radius.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dissipativity_radius: Option<f64>,
}

impl Default for HypothesisOptions {
    fn default() -> Self {
        HypothesisOptions {
            alpha: 0.5,
            grid_1d: (-60.0, 60.0, 1e-2),
            box_radius: 3.0,
            points_per_axis: 41,
            lyapunov: None,
            dissipativity_radius: None,
        }
    }
}

impl HypothesisOptions {
    pub fn points(&self, dim: usize) -> Vec<Vec<f64>> {
        if dim == 1 {
            let (lo, hi, step) = self.grid_1d;
            return crate::numerics::grid(lo, hi, step).into_iter().map(|x| vec![x]).collect();
        }
        let k = self.points_per_axis.max(2);
        let axis: Vec<f64> = (0..k).map(|i| -self.box_radius + 2.0 * self.box_radius * i as f64 / (k - 1) as f64).collect();
        let mut pts = vec![vec![]];
        for _ in 0..dim {
            pts = pts.into_iter().flat_map(|p: Vec<f64>| axis.iter().map(move |&a| [p.clone(), vec![a]].concat())).collect();
        }
        pts
    }
}

/// Aggregated structural audit of one model.
#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub schema_version: u32,
    pub model: String,
    pub model_hash: String,
    pub options: HypothesisOptions,
    /// (a) uniform ellipticity.
    pub ellipticity: ConditionReport,
    /// (b) polynomial growth of coefficient derivatives.
    pub growth: ConditionReport,
    /// (c) decay of semigroup derivatives.
    pub derivative_decay: ConditionReport,
    /// (d) moment bounds, left to the Monte Carlo harness.
    pub moments: ConditionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<GapResult>,
    pub extra: Vec<ConditionReport>,
    #[serde(skip)]
    pub gap_rows: Vec<GapRow>,
}

impl HypothesisReport {
    pub fn all(&self) -> impl Iterator<Item = &ConditionReport> {
        [&self.ellipticity, &self.growth, &self.derivative_decay, &self.moments].into_iter().chain(self.extra.iter())
    }

    /// Whether any check returned a definite failure.
    pub fn failed(&self) -> bool {
        self.all().any(|r| r.verdict == Verdict::Fail)
    }
}

/// Largest radial derivative of order `k` of any component of `field` at `r * e` over the directions.
fn radial_derivative_max<F: SmoothField>(field: &F, r: f64, dirs: &[Vec<f64>], k: usize) -> Result<f64> {
    let n = field.dim();
    let mut best: f64 = 0.0;
    let mut out = vec![Jet4::constant(0.0); n];
    for e in dirs {
        for sign in [1.0, -1.0] {
            let x: Vec<Jet4> = e.iter().map(|&ei| Jet4::seeded(sign * r * ei, sign * ei)).collect();
            field.eval_into(&x, &mut out)?;
            for o in &out {
                best = best.max(o.derivative(k).abs());
            }
        }
    }
    Ok(best)
}

/// Growth exponents of derivatives of order 1..=4 along rays, fitted on radii
/// `r_max / 4, r_max / 2, r_max`. Passes when every exponent is at most 8.
fn growth_check(model: &SdeModel, r_max: f64) -> Result<ConditionReport> {
    let n = model.dim();
    let dirs = unit_directions(n);
    let mut report = ConditionReport::new("growth", format!("rays of radius up to {r_max}, {} direction(s)", dirs.len()), dirs.len() * 3);
    let radii = [r_max / 4.0, r_max / 2.0, r_max];
    let logs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let mut worst: f64 = 0.0;
    let ito = model.ito_field();
    let mut fields: Vec<(String, Box<dyn Fn(f64, usize) -> Result<f64> + '_>)> = Vec::new();
    let dirs_ref = &dirs;
    fields.push(("drift".into(), Box::new(move |r, k| radial_derivative_max(&ito, r, dirs_ref, k))));
    for (i, v) in model.diffusions().iter().enumerate() {
        fields.push((format!("V{}", i + 1), Box::new(move |r, k| radial_derivative_max(v, r, dirs_ref, k))));
    }
    for (name, f) in &fields {
        for k in 1..=4 {
            let vals = radii.iter().map(|&r| f(r, k)).collect::<Result<Vec<_>>>();
            let vals = match vals {
                Ok(v) => v,
                Err(e) => {
                    report.notes.push(format!("{name}: derivative of order {k} undefined on the rays ({e})"));
                    report.verdict = Verdict::Inapplicable;
                    return Ok(report);
                }
            };
            let exponent = if vals.iter().all(|v| *v < 1e-12) {
                0.0
            } else {
                let ys: Vec<f64> = vals.iter().map(|v| (v + 1e-12).ln()).collect();
                crate::numerics::fit_line(&logs, &ys).map_or(f64::INFINITY, |l| l.slope.max(0.0))
            };
            let exponent = if exponent.is_finite() { (exponent * 10.0).round() / 10.0 } else { exponent };
            report.details.insert(format!("{name}_order{k}"), exponent);
            worst = worst.max(exponent);
        }
    }
    report.value = Some(worst);
    report.verdict = if worst <= 8.0 { Verdict::Pass } else { Verdict::Fail };
    if report.verdict == Verdict::Fail {
        report.witness = Some(Witness { x: vec![r_max; n], xi: None, value: worst });
        report.notes.push("some coefficient derivative grows faster than any low-degree polynomial".into());
    }
    Ok(report)
}

/// Run the structural checks on one model and bundle them.
pub fn hypothesis_report(model: &SdeModel, opts: &HypothesisOptions) -> Result<HypothesisReport> {
    let n = model.dim();
    let pts = opts.points(n);
    let dirs = unit_directions(n);
    let ellipticity = ellipticity_check(n, model.diffusions(), &pts, &dirs)?;
    let r_max = pts.iter().map(|x| dot(x, x).sqrt()).fold(0.0, f64::max);
    let growth = growth_check(model, r_max.max(1.0))?;

    let mut decay = ConditionReport::new("derivative_decay", describe_points(&pts), pts.len());
    let mut gap = None;
    let mut rows_out = Vec::new();
    if n == 1 && model.noise_dim() == 1 {
        let lambda = LambdaFunction::induced(model)?;
        if model.is_additive() {
            let grid: Vec<f64> = pts.iter().map(|x| x[0]).collect();
            let rows = self::gap_rows(&lambda, &|x| xi_function(model, opts.alpha, x), &grid)?;
            let g = summarize_gap(&rows, opts.alpha);
            decay.verdict = g.verdict;
            decay.value = Some(g.lambda0);
            decay.details.insert("inf_gap".into(), g.infimum);
            decay.details.insert("lambda0".into(), g.lambda0);
            decay.details.insert("alpha".into(), opts.alpha);
            decay.notes.extend(g.warnings.iter().cloned());
            decay.notes.push(format!("u = cosh({} x), Xi = Lu/u", opts.alpha));
            if g.verdict == Verdict::Fail {
                decay.witness = Some(Witness { x: vec![g.argmin], xi: None, value: g.infimum });
            }
            gap = Some(g);
            rows_out = rows;
        } else {
            let singular: Vec<f64> = pts.iter().map(|x| x[0]).filter(|&x| lambda.eval(&[x]) == LambdaValue::Singular).collect();
            decay.notes.push(if singular.is_empty() {
                "multiplicative noise: reduce to additive noise with the Lamperti transform before the gap check".into()
            } else {
                format!("lambda is singular at {} grid point(s), first near x = {}; not established on this grid", singular.len(), singular[0])
            });
        }
    } else {
        for (k, v) in model.diffusions().iter().enumerate() {
            let est = loac_check_nd(v, &model.stratonovich_field(), &pts, &dirs)?;
            if let Some(val) = est.report.value {
                decay.details.insert(format!("min_lambda_hat_V{}", k + 1), val);
            }
        }
        decay.notes.push("not established: the general multi-dimensional case needs commutation or bracket-closure structure".into());
    }

    let mut moments = ConditionReport::new("moments", "Monte Carlo".into(), 0);
    moments.notes.push("moment bounds are estimated by the Monte Carlo harness (moment supremum)".into());

    let mut extra = Vec::new();
    if let Some(g) = &opts.lyapunov {
        let g = ScalarField::parse(g, n).map_err(|e| Error::Parse { component: 0, source: e })?;
        extra.push(lyapunov_check(model, &g, &pts, None)?);
    }
    if let Some(r) = opts.dissipativity_radius {
        extra.push(dissipativity_check(model, &pts, r)?);
    }
    Ok(HypothesisReport {
        schema_version: REPORT_SCHEMA_VERSION,
        model: model.label().into(),
        model_hash: model.hash(),
        options: opts.clone(),
        ellipticity,
        growth,
        derivative_decay: decay,
        moments,
        gap,
        extra,
        gap_rows: rows_out,
    })
}
