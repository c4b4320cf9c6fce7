//! Explicit Euler scheme `Y_{n+1} = Y_n + U0(Y_n) delta + sqrt(2) sum_k V_k(Y_n) dB_k`
//! with optional variational Jacobians and occupation integrals.

use std::f64::consts::SQRT_2;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsl::NON_FINITE;
use crate::error::{DomainError, Error, Result};
use crate::model::{Dynamics, ModelFile};
use crate::noise::{Increments, NoiseStream};

/// Paths whose state exceeds this magnitude are flagged as exploded.
pub const EXPLOSION_THRESHOLD: f64 = 1e150;

pub const SCHEMA_VERSION: u32 = 1;

/// Scalar path functional integrated along the mesh; `None` marks a singular point.
pub type PathFunctional<'a> = &'a (dyn Fn(&[f64]) -> Option<f64> + Sync);

#[derive(Clone, Copy, Default)]
pub struct SimOptions<'a> {
    pub jacobian: bool,
    /// `J^(2..4)`; one-dimensional additive-noise models only.
    pub higher_jacobians: bool,
    pub occupation: Option<PathFunctional<'a>>,
}

impl std::fmt::Debug for SimOptions<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimOptions")
            .field("jacobian", &self.jacobian)
            .field("higher_jacobians", &self.higher_jacobians)
            .field("occupation", &self.occupation.is_some())
            .finish()
    }
}

/// Mesh geometry for one run: `n_steps` steps of size `delta`, keeping every `stride`-th state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub delta: f64,
    pub n_steps: usize,
    pub stride: usize,
}

impl Mesh {
    pub fn new(delta: f64, n_steps: usize) -> Self {
        Mesh { delta, n_steps, stride: 1 }
    }

    /// Mesh covering `[0, horizon]`; the step count is rounded to the nearest integer.
    pub fn over(delta: f64, horizon: f64) -> Self {
        Mesh::new(delta, (horizon / delta).round() as usize)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }

    pub fn n_records(&self) -> usize {
        self.n_steps / self.stride + 1
    }

    /// Time of record `i`, by index arithmetic.
    pub fn time(&self, i: usize) -> f64 {
        (i * self.stride) as f64 * self.delta
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_records()).map(|i| self.time(i)).collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Invalid(format!("step size must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

/// How a path ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PathEnd {
    Completed,
    /// State left `[-1e150, 1e150]` or became non-finite at this step.
    Exploded { step: usize },
    /// The occupation functional was singular at this step.
    Singular { step: usize },
    /// A coefficient was undefined at the state reached at this step.
    Domain { step: usize, message: String },
}

impl PathEnd {
    pub fn is_completed(&self) -> bool {
        matches!(self, PathEnd::Completed)
    }
}

/// What a visitor sees at each recorded mesh time.
#[derive(Debug)]
pub struct Record<'a> {
    pub index: usize,
    pub y: &'a [f64],
    /// Row-major `N x N`.
    pub jacobian: Option<&'a [f64]>,
    pub occupation: Option<f64>,
}

/// One Euler step into `out`.
pub fn euler_step<D: Dynamics + ?Sized>(model: &D, y: &[f64], delta: f64, db: &[f64], out: &mut [f64]) -> Result<(), DomainError> {
    model.drift(y, out)?;
    for (o, yi) in out.iter_mut().zip(y) {
        *o = yi + *o * delta;
    }
    let mut v = vec![0.0; y.len()];
    for (k, dbk) in db.iter().enumerate() {
        model.diffusion(k, y, &mut v)?;
        for (o, vi) in out.iter_mut().zip(&v) {
            *o += SQRT_2 * vi * dbk;
        }
    }
    Ok(())
}

fn check_options<D: Dynamics + ?Sized>(model: &D, opts: &SimOptions, mesh: &Mesh) -> Result<()> {
    mesh.validate()?;
    if opts.higher_jacobians {
        if model.dim() != 1 || !model.is_additive() {
            return Err(Error::Unsupported("higher Jacobians need a one-dimensional model with additive noise".into()));
        }
        if mesh.stride != 1 {
            return Err(Error::Unsupported("higher Jacobians need every mesh state (stride 1)".into()));
        }
    }
    Ok(())
}

struct Workspace {
    y: Vec<f64>,
    y_next: Vec<f64>,
    drift: Vec<f64>,
    db: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    v: Vec<f64>,
    jac: Vec<f64>,
    jac_next: Vec<f64>,
    dmat: Vec<f64>,
}

/// Simulate one path driven by `incs`, calling `visit` at every recorded
/// time (including `t = 0`). The visitor returns `false` to stop early.
pub fn run_path<D, F>(model: &D, x0: &[f64], mesh: &Mesh, incs: &mut Increments, opts: &SimOptions, mut visit: F) -> Result<PathEnd>
where
    D: Dynamics + ?Sized,
    F: FnMut(&Record) -> bool,
{
    check_options(model, opts, mesh)?;
    let n = model.dim();
    let d = model.noise_dim();
    if x0.len() != n {
        return Err(Error::Dimension(format!("initial point has {} coordinates, model has {n}", x0.len())));
    }
    if incs.noise_dim() != d {
        return Err(Error::Dimension("increment source and model disagree on noise dimension".into()));
    }
    let additive = model.is_additive();
    let scalar_j = opts.jacobian && n == 1 && additive;
    let mut ws = Workspace {
        y: x0.to_vec(),
        y_next: vec![0.0; n],
        drift: vec![0.0; n],
        db: vec![0.0; d],
        sigma: vec![vec![0.0; n]; d],
        v: vec![0.0; n],
        jac: identity(n),
        jac_next: vec![0.0; n * n],
        dmat: vec![0.0; n * n],
    };
    if additive {
        for k in 0..d {
            model.diffusion(k, x0, &mut ws.sigma[k])?;
        }
    }
    let delta = mesh.delta;
    let half = 0.5 * delta;

    // running trapezoid sums; `prev_*` hold integrand values at the current state
    let mut log_j = 0.0;
    let mut prev_bprime = 0.0;
    if scalar_j {
        model.drift_jacobian(&ws.y, &mut ws.dmat)?;
        prev_bprime = ws.dmat[0];
    }
    let mut occ = 0.0;
    let mut prev_lambda = 0.0;
    if let Some(lam) = opts.occupation {
        match lam(&ws.y) {
            Some(v) => prev_lambda = v,
            None => return Ok(PathEnd::Singular { step: 0 }),
        }
    }

    fn rec<'w>(ws: &'w Workspace, opts: &SimOptions, index: usize, occ: f64) -> Record<'w> {
        Record {
            index,
            y: &ws.y,
            jacobian: if opts.jacobian { Some(&ws.jac) } else { None },
            occupation: opts.occupation.map(|_| occ),
        }
    }
    if !visit(&rec(&ws, opts, 0, occ)) {
        return Ok(PathEnd::Completed);
    }

    for step in 1..=mesh.n_steps {
        incs.next_into(&mut ws.db);
        // explicit Euler update
        if let Err(e) = model.drift(&ws.y, &mut ws.drift) {
            return Ok(failure(e, step));
        }
        for i in 0..n {
            ws.y_next[i] = ws.y[i] + ws.drift[i] * delta;
        }
        for k in 0..d {
            let dbk = ws.db[k];
            if additive {
                for i in 0..n {
                    ws.y_next[i] += SQRT_2 * ws.sigma[k][i] * dbk;
                }
            } else {
                if let Err(e) = model.diffusion(k, &ws.y, &mut ws.v) {
                    return Ok(failure(e, step));
                }
                for i in 0..n {
                    ws.y_next[i] += SQRT_2 * ws.v[i] * dbk;
                }
            }
        }

        // variational flow on the old state, before it is overwritten
        if opts.jacobian && !scalar_j {
            if let Err(e) = variational_step(model, &mut ws, delta) {
                return Ok(failure(e, step));
            }
        }

        std::mem::swap(&mut ws.y, &mut ws.y_next);
        if ws.y.iter().any(|v| !(v.abs() <= EXPLOSION_THRESHOLD)) {
            return Ok(PathEnd::Exploded { step });
        }

        if scalar_j {
            if let Err(e) = model.drift_jacobian(&ws.y, &mut ws.dmat) {
                return Ok(PathEnd::Domain { step, message: e.to_string() });
            }
            log_j += half * (prev_bprime + ws.dmat[0]);
            prev_bprime = ws.dmat[0];
            ws.jac[0] = log_j.exp();
        }
        if let Some(lam) = opts.occupation {
            match lam(&ws.y) {
                Some(v) => {
                    occ += half * (prev_lambda + v);
                    prev_lambda = v;
                }
                None => return Ok(PathEnd::Singular { step }),
            }
        }

        if step % mesh.stride == 0 && !visit(&rec(&ws, opts, step / mesh.stride, occ)) {
            return Ok(PathEnd::Completed);
        }
    }
    Ok(PathEnd::Completed)
}

// Overflowing coefficients mean the next state is not representable: an explosion.
fn failure(e: DomainError, step: usize) -> PathEnd {
    if e.op == NON_FINITE {
        PathEnd::Exploded { step }
    } else {
        PathEnd::Domain { step: step - 1, message: e.to_string() }
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

// J <- J + (DU0 J) delta + sqrt(2) sum_k (DV_k J) dB_k, evaluated at the pre-step state.
fn variational_step<D: Dynamics + ?Sized>(model: &D, ws: &mut Workspace, delta: f64) -> Result<(), DomainError> {
    let n = ws.y.len();
    ws.jac_next.copy_from_slice(&ws.jac);
    model.drift_jacobian(&ws.y, &mut ws.dmat)?;
    mat_mul_add(&ws.dmat, &ws.jac, delta, &mut ws.jac_next, n);
    if !model.is_additive() {
        for k in 0..model.noise_dim() {
            model.diffusion_jacobian(k, &ws.y, &mut ws.dmat)?;
            mat_mul_add(&ws.dmat, &ws.jac, SQRT_2 * ws.db[k], &mut ws.jac_next, n);
        }
    }
    std::mem::swap(&mut ws.jac, &mut ws.jac_next);
    Ok(())
}

fn mat_mul_add(a: &[f64], b: &[f64], s: f64, out: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] += s * acc;
        }
    }
}

/// Scalar higher-order Jacobians along a one-dimensional path.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HigherJacobians {
    pub j2: Vec<f64>,
    pub j3: Vec<f64>,
    pub j4: Vec<f64>,
}

/// A stored Euler trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshPath {
    pub path_id: u64,
    pub dim: usize,
    pub mesh: Mesh,
    /// Record-major states, `dim` values per record.
    pub states: Vec<f64>,
    pub jacobians: Option<Vec<f64>>,
    pub higher: Option<HigherJacobians>,
    pub occupation: Option<Vec<f64>>,
    pub end: PathEnd,
}

impl MeshPath {
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn jacobian(&self, i: usize) -> Option<&[f64]> {
        let nn = self.dim * self.dim;
        self.jacobians.as_ref().map(|j| &j[i * nn..(i + 1) * nn])
    }

    pub fn time(&self, i: usize) -> f64 {
        self.mesh.time(i)
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }
}

/// Simulate path `path_id` with increments from stream `(seed, path_id)` at `mesh.delta`,
/// each built from `substeps` finer sub-increments.
pub fn simulate_path<D: Dynamics + ?Sized>(
    model: &D,
    x0: &[f64],
    mesh: &Mesh,
    seed: u64,
    path_id: u64,
    substeps: usize,
    opts: &SimOptions,
) -> Result<MeshPath> {
    let n = model.dim();
    let mut incs = Increments::new(NoiseStream::new(seed, path_id), model.noise_dim(), mesh.delta, substeps);
    let cap = mesh.n_records();
    let mut states = Vec::with_capacity(cap * n);
    let mut jacs = opts.jacobian.then(|| Vec::with_capacity(cap * n * n));
    let mut occ = opts.occupation.map(|_| Vec::with_capacity(cap));
    let end = run_path(model, x0, mesh, &mut incs, opts, |r| {
        states.extend_from_slice(r.y);
        if let (Some(js), Some(j)) = (jacs.as_mut(), r.jacobian) {
            js.extend_from_slice(j);
        }
        if let (Some(os), Some(o)) = (occ.as_mut(), r.occupation) {
            os.push(o);
        }
        true
    })?;
    let mut path = MeshPath { path_id, dim: n, mesh: *mesh, states, jacobians: jacs, higher: None, occupation: occ, end };
    if opts.higher_jacobians {
        path.higher = Some(higher_jacobians(&path, model)?);
    }
    Ok(path)
}

/// Independent paths `0..n_paths`, simulated in parallel, returned in path order.
pub fn simulate_batch<D: Dynamics + ?Sized>(
    model: &D,
    x0: &[f64],
    mesh: &Mesh,
    n_paths: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<Vec<MeshPath>> {
    check_options(model, opts, mesh)?;
    (0..n_paths as u64).into_par_iter().map(|p| simulate_path(model, x0, mesh, seed, p, 1, opts)).collect()
}

/// Coarse path at `delta` and fine path at `delta / m` driven by the same Brownian motion.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledPair {
    pub coarse: MeshPath,
    /// Recorded on the coarse mesh.
    pub fine: MeshPath,
}

pub fn check_refinement(m: usize) -> Result<()> {
    if m == 0 || !m.is_power_of_two() {
        return Err(Error::Invalid(format!("refinement factor must be a power of two, got {m}")));
    }
    Ok(())
}

/// Fine mesh matching `mesh` refined `m` times, recording at the coarse record times.
pub fn refine(mesh: &Mesh, m: usize) -> Mesh {
    Mesh { delta: mesh.delta / m as f64, n_steps: mesh.n_steps * m, stride: mesh.stride * m }
}

pub fn coupled_pair<D: Dynamics + ?Sized>(
    model: &D,
    x0: &[f64],
    mesh: &Mesh,
    m: usize,
    seed: u64,
    path_id: u64,
    opts: &SimOptions,
) -> Result<CoupledPair> {
    check_refinement(m)?;
    let coarse = simulate_path(model, x0, mesh, seed, path_id, m, opts)?;
    let mut fine = simulate_path(model, x0, &refine(mesh, m), seed, path_id, 1, opts)?;
    fine.mesh = *mesh;
    Ok(CoupledPair { coarse, fine })
}

pub fn coupled_reference<D: Dynamics + ?Sized>(
    model: &D,
    x0: &[f64],
    mesh: &Mesh,
    m: usize,
    n_paths: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<Vec<CoupledPair>> {
    check_refinement(m)?;
    check_options(model, opts, mesh)?;
    (0..n_paths as u64).into_par_iter().map(|p| coupled_pair(model, x0, mesh, m, seed, p, opts)).collect()
}

/// `J^(2)`, `J^(3)`, `J^(4)` for `dX = b(X) dt + sqrt(2) sigma dB`, by nested
/// trapezoid sums over the stored mesh:
///
/// ```text
/// A = int b'' J,   B = int (b''' J^2 + b'' J2),   C = int (b'''' J^3 + 3 b''' J J2 + b'' J3)
/// J2 = J A,   J3 = J B + J2 A,   J4 = J C + 2 J2 B + J3 A
/// ```
pub fn higher_jacobians<D: Dynamics + ?Sized>(path: &MeshPath, model: &D) -> Result<HigherJacobians> {
    if path.dim != 1 || model.dim() != 1 || !model.is_additive() {
        return Err(Error::Unsupported("higher Jacobians need a one-dimensional model with additive noise".into()));
    }
    if path.mesh.stride != 1 {
        return Err(Error::Unsupported("higher Jacobians need every mesh state (stride 1)".into()));
    }
    let len = path.len();
    let half = 0.5 * path.mesh.delta;
    let mut out = HigherJacobians { j2: Vec::with_capacity(len), j3: Vec::with_capacity(len), j4: Vec::with_capacity(len) };
    let (mut log_j, mut a, mut b, mut c) = (0.0, 0.0, 0.0, 0.0);
    let mut prev: Option<([f64; 3], f64)> = None;
    for i in 0..len {
        let d = model.drift_derivatives_1d(path.states[i])?;
        // J from the stored flow when available, else the same trapezoid rule
        let j = match path.jacobians.as_ref() {
            Some(js) => js[i],
            None => {
                if let Some((_, bp)) = prev {
                    log_j += half * (bp + d[1]);
                }
                log_j.exp()
            }
        };
        // integrands g_A, g_B, g_C depend on J2, J3 at the same time, so solve in order
        let step = |prev_g: Option<f64>, g: f64| prev_g.map_or(0.0, |p| half * (p + g));
        let ga = d[2] * j;
        a += step(prev.map(|p| p.0[0]), ga);
        let j2 = j * a;
        let gb = d[3] * j * j + d[2] * j2;
        b += step(prev.map(|p| p.0[1]), gb);
        let j3 = j * b + j2 * a;
        let gc = d[4] * j * j * j + 3.0 * d[3] * j * j2 + d[2] * j3;
        c += step(prev.map(|p| p.0[2]), gc);
        let j4 = j * c + 2.0 * j2 * b + j3 * a;
        out.j2.push(j2);
        out.j3.push(j3);
        out.j4.push(j4);
        prev = Some(([ga, gb, gc], d[1]));
    }
    Ok(out)
}

/// Metadata written next to a path dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchMeta {
    pub schema_version: u32,
    pub seed: u64,
    pub delta: f64,
    pub n_steps: usize,
    pub stride: usize,
    pub n_paths: usize,
    pub model_hash: String,
    pub model: ModelFile,
    pub ends: Vec<PathEnd>,
}

/// CSV with header `t,path_id,x1..xN[,J11..JNN][,occ]`, one row per recorded state.
pub fn write_paths_csv<W: Write>(paths: &[MeshPath], mut w: W) -> std::io::Result<()> {
    let Some(first) = paths.first() else {
        return Ok(());
    };
    let n = first.dim;
    let mut header = String::from("t,path_id");
    for i in 1..=n {
        header.push_str(&format!(",x{i}"));
    }
    if first.jacobians.is_some() {
        for i in 1..=n {
            for j in 1..=n {
                header.push_str(&format!(",J{i}{j}"));
            }
        }
    }
    if first.occupation.is_some() {
        header.push_str(",occ");
    }
    writeln!(w, "{header}")?;
    for p in paths {
        for i in 0..p.len() {
            write!(w, "{},{}", p.time(i), p.path_id)?;
            for v in p.state(i) {
                write!(w, ",{v}")?;
            }
            if let Some(j) = p.jacobian(i) {
                for v in j {
                    write!(w, ",{v}")?;
                }
            }
            if let Some(o) = p.occupation.as_ref() {
                write!(w, ",{}", o[i])?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::builtin_example;
    use crate::model::{Convention, SdeModel};

    fn ou() -> SdeModel {
        builtin_example("ou").unwrap().model
    }

    #[test]
    fn single_step_examples() {
        let mut out = [0.0];
        euler_step(&ou(), &[1.0], 0.1, &[0.0], &mut out).unwrap();
        assert!((out[0] - 0.9).abs() < 1e-15);
        // pure drift: explicit Euler for the ODE
        let ode = SdeModel::parse("ode", Convention::Ito, &["x1^2"], &[]).unwrap();
        euler_step(&ode, &[2.0], 0.5, &[], &mut out).unwrap();
        assert_eq!(out[0], 4.0);
    }

    #[test]
    fn mesh_times_use_index_arithmetic() {
        let m = Mesh::new(0.1, 30).with_stride(3);
        assert_eq!(m.n_records(), 11);
        assert_eq!(m.time(7), 21.0 * 0.1);
        assert_eq!(Mesh::over(1e-3, 10.0).n_steps, 10_000);
    }

    #[test]
    fn replay_is_identical_and_batch_matches_single() {
        let model = builtin_example("arctan").unwrap().model;
        let mesh = Mesh::new(0.01, 200).with_stride(10);
        let opts = SimOptions { jacobian: true, ..Default::default() };
        let batch = simulate_batch(&model, &[0.5], &mesh, 6, 42, &opts).unwrap();
        let again = simulate_batch(&model, &[0.5], &mesh, 6, 42, &opts).unwrap();
        assert_eq!(batch, again);
        let lone = simulate_path(&model, &[0.5], &mesh, 42, 4, 1, &opts).unwrap();
        assert_eq!(lone, batch[4]);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_paths_csv(&batch, &mut a).unwrap();
        write_paths_csv(&again, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("t,path_id,x1,J11\n0,0,0.5,1\n"));
    }

    #[test]
    fn stride_only_thins_records() {
        let model = builtin_example("arctan").unwrap().model;
        let full = simulate_path(&model, &[0.0], &Mesh::new(0.02, 50), 9, 1, 1, &SimOptions::default()).unwrap();
        let thin = simulate_path(&model, &[0.0], &Mesh::new(0.02, 50).with_stride(5), 9, 1, 1, &SimOptions::default()).unwrap();
        for i in 0..thin.len() {
            assert_eq!(thin.state(i), full.state(5 * i));
        }
    }

    #[test]
    fn ou_jacobian_is_deterministic_exponential() {
        let mesh = Mesh::new(1e-3, 2000);
        let p = simulate_path(&ou(), &[0.3], &mesh, 1, 0, 1, &SimOptions { jacobian: true, ..Default::default() }).unwrap();
        for i in (0..p.len()).step_by(250) {
            let j = p.jacobian(i).unwrap()[0];
            assert!((j - (-p.time(i)).exp()).abs() < 1e-3);
        }
    }

    #[test]
    fn constant_occupation_integrates_exactly() {
        let c = |_: &[f64]| Some(0.75);
        let mesh = Mesh::new(0.01, 300);
        let p = simulate_path(&ou(), &[0.0], &mesh, 1, 0, 1, &SimOptions { occupation: Some(&c), ..Default::default() }).unwrap();
        let occ = p.occupation.as_ref().unwrap();
        for i in 0..p.len() {
            assert!((occ[i] - 0.75 * p.time(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_functional_stops_the_path() {
        let lam = |y: &[f64]| (y[0] < 0.5).then_some(1.0);
        let model = SdeModel::parse("up", Convention::Ito, &["1"], &[]).unwrap();
        let p = simulate_path(&model, &[0.0], &Mesh::new(0.1, 20), 1, 0, 1, &SimOptions { occupation: Some(&lam), ..Default::default() })
            .unwrap();
        assert_eq!(p.end, PathEnd::Singular { step: 5 });
    }

    #[test]
    fn explosion_is_flagged() {
        let model = builtin_example("xcubed").unwrap().model;
        let p = simulate_path(&model, &[4.0], &Mesh::new(1.0, 20), 3, 0, 1, &SimOptions::default()).unwrap();
        assert!(matches!(p.end, PathEnd::Exploded { step } if step < 10), "{:?}", p.end);
        assert!(p.states.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn m_equal_one_coupling_is_bit_exact() {
        let model = builtin_example("grusin").unwrap().model;
        let mesh = Mesh::new(0.01, 100);
        let pair = coupled_pair(&model, &[1.0, 0.0], &mesh, 1, 5, 2, &SimOptions::default()).unwrap();
        assert_eq!(pair.coarse, pair.fine);
        assert!(coupled_pair(&model, &[1.0, 0.0], &mesh, 3, 5, 2, &SimOptions::default()).is_err());
    }

    #[test]
    fn deterministic_circle_fine_path_tracks_rotation() {
        let spec = builtin_example("circle").unwrap();
        let mesh = Mesh::over(0.01, 10.0).with_stride(100);
        let pair = coupled_pair(&spec.model, &[1.0, 0.0], &mesh, 64, 0, 0, &SimOptions::default()).unwrap();
        let exact = spec.oracle.exact_path.unwrap()(10.0, &[1.0, 0.0]);
        let y = pair.fine.last();
        assert!(((y[0] - exact[0]).powi(2) + (y[1] - exact[1]).powi(2)).sqrt() < 1e-3);
    }

    #[test]
    fn grusin_jacobian_follows_variational_equation() {
        // J11 = prod (1 + delta), J21 = sqrt(2) sum of dB weighted by J11, J12 = 0, J22 = 1
        let model = builtin_example("grusin").unwrap().model;
        let mesh = Mesh::new(0.01, 50);
        let p = simulate_path(&model, &[1.0, 0.0], &mesh, 8, 0, 1, &SimOptions { jacobian: true, ..Default::default() }).unwrap();
        let j = p.jacobian(50).unwrap();
        assert!((j[0] - 1.01f64.powi(50)).abs() < 1e-12);
        assert_eq!((j[1], j[3]), (0.0, 1.0));
        // linear model: J21 equals the second state coordinate divided by x1(0) = 1
        assert!((j[2] - p.state(50)[1]).abs() < 1e-12);
    }

    #[test]
    fn linear_drift_has_no_higher_jacobians() {
        let p = simulate_path(&ou(), &[0.2], &Mesh::new(0.01, 100), 1, 0, 1, &SimOptions { higher_jacobians: true, ..Default::default() })
            .unwrap();
        let h = p.higher.unwrap();
        assert!(h.j2.iter().chain(&h.j3).chain(&h.j4).all(|&v| v == 0.0));
        let bad = simulate_path(
            &builtin_example("grusin").unwrap().model,
            &[1.0, 0.0],
            &Mesh::new(0.01, 10),
            1,
            0,
            1,
            &SimOptions { higher_jacobians: true, ..Default::default() },
        );
        assert!(bad.is_err());
    }

    fn arctan_path(x0: f64, jacobian: bool, higher: bool) -> MeshPath {
        let model = builtin_example("arctan").unwrap().model;
        let opts = SimOptions { jacobian, higher_jacobians: higher, ..Default::default() };
        simulate_path(&model, &[x0], &Mesh::new(1e-3, 1000), 17, 3, 1, &opts).unwrap()
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        // additive noise: exp of a trapezoid sum, so O(delta) away from the discrete derivative
        let h = 1e-4;
        let p = arctan_path(0.4, true, false);
        let (up, dn) = (arctan_path(0.4 + h, false, false), arctan_path(0.4 - h, false, false));
        for i in (0..p.len()).step_by(100) {
            let fd = (up.state(i)[0] - dn.state(i)[0]) / (2.0 * h);
            let j = p.jacobian(i).unwrap()[0];
            assert!((j - fd).abs() < 1e-3 * fd.abs(), "step {i}: {j} vs {fd}");
        }
        // multiplicative noise: the variational Euler step is the exact derivative of the map
        let model = builtin_example("sincos").unwrap().model;
        let mesh = Mesh::new(1e-3, 1000);
        let run = |x: f64, jacobian| simulate_path(&model, &[x], &mesh, 5, 1, 1, &SimOptions { jacobian, ..Default::default() }).unwrap();
        let p = run(0.3, true);
        let (up, dn) = (run(0.3 + h, false), run(0.3 - h, false));
        for i in (0..p.len()).step_by(100) {
            let fd = (up.state(i)[0] - dn.state(i)[0]) / (2.0 * h);
            assert!((p.jacobian(i).unwrap()[0] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "step {i}");
        }
    }

    fn assert_fd(order: &str, exact: &[f64], up: &[f64], dn: &[f64], h: f64) {
        for i in (100..exact.len()).step_by(100) {
            let fd = (up[i] - dn[i]) / (2.0 * h);
            assert!((exact[i] - fd).abs() < 1e-2 * (1.0 + fd.abs()), "{order} at {i}: {} vs {fd}", exact[i]);
        }
    }

    #[test]
    fn j2_matches_finite_difference_of_j() {
        let h = 1e-3;
        let p = arctan_path(0.4, true, true);
        let (up, dn) = (arctan_path(0.4 + h, true, false), arctan_path(0.4 - h, true, false));
        let j = |q: &MeshPath| q.jacobians.clone().unwrap();
        assert_fd("J2", &p.higher.unwrap().j2, &j(&up), &j(&dn), h);
    }

    #[test]
    fn j3_matches_finite_difference_of_j2() {
        let h = 1e-3;
        let hj = |x: f64| arctan_path(x, false, true).higher.unwrap();
        let (mid, up, dn) = (hj(0.4), hj(0.4 + h), hj(0.4 - h));
        assert!(mid.j3.iter().any(|v| v.abs() > 1e-3));
        assert_fd("J3", &mid.j3, &up.j2, &dn.j2, h);
    }

    #[test]
    fn j4_matches_finite_difference_of_j3() {
        let h = 1e-3;
        let hj = |x: f64| arctan_path(x, false, true).higher.unwrap();
        let (mid, up, dn) = (hj(0.4), hj(0.4 + h), hj(0.4 - h));
        assert!(mid.j4.iter().any(|v| v.abs() > 1e-3));
        assert_fd("J4", &mid.j4, &up.j3, &dn.j3, h);
    }

    #[test]
    fn ou_fine_path_mean_decays_exponentially() {
        let mesh = Mesh::new(1e-2, 100);
        let pairs = coupled_reference(&ou(), &[1.5], &mesh, 16, 10_000, 2024, &SimOptions::default()).unwrap();
        let xs: Vec<f64> = pairs.iter().map(|p| p.fine.last()[0]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 1.5 * (-1.0f64).exp();
        assert!((mean - target).abs() < 3.0 * (var / n).sqrt(), "{mean} vs {target}");
    }
}
