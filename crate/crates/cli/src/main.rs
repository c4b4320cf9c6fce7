mod args;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde::{Deserialize, Serialize};
use utweak_core::catalog::{builtin_example, gaussian_expectation, invariant_expectation, ExampleSpec, BUILTIN_NAMES};
use utweak_core::conditions::{hypothesis_report, write_gap_csv, HypothesisOptions, LambdaFunction, Verdict};
use utweak_core::dsl::{ScalarField, VectorField};
use utweak_core::estimators::{
    decay_functional, derivative_estimate, ergodic_average, gamma_pathwise_check, weak_error_curve, Reference, RunSpec,
};
use utweak_core::euler::{simulate_batch, write_paths_csv, BatchMeta, Mesh, SimOptions};
use utweak_core::model::SdeModel;
use utweak_core::oracles::oracle_table;
use utweak_core::reproduce::{reproduce, Artifact, ArtifactWriter, Check, Overrides};
use utweak_core::{Error, Result};

use args::{Cli, Command, RunArgs};

const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Written as `summary.json` next to every run's artifacts.
#[derive(Debug, Serialize, Deserialize)]
struct RunSummary {
    schema_version: u32,
    tool_version: String,
    command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model_hash: Option<String>,
    artifacts: Vec<Artifact>,
    metrics: BTreeMap<String, f64>,
    checks: Vec<Check>,
    passed: bool,
}

enum Outcome {
    Pass,
    Fail,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    }
    let command = match (cli.command, cli.from_summary) {
        (Some(_), Some(_)) => return Err(Error::Invalid("--from-summary replaces the subcommand; give one or the other".into())),
        (Some(c), None) => c,
        (None, Some(path)) => {
            let text = read(&path)?;
            let summary: RunSummary = serde_json::from_str(&text)
                .map_err(|e| Error::Invalid(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column())))?;
            let mut c = summary.command;
            if let (Some(dir), Some(out)) = (cli.out, c.out_mut()) {
                *out = dir;
            }
            c
        }
        (None, None) => return Err(Error::Invalid("no subcommand given; see `utweak --help`".into())),
    };
    execute(command)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

/// A model plus the builtin it came from, if any.
struct Loaded {
    model: SdeModel,
    spec: Option<ExampleSpec>,
}

fn load_model(source: &str) -> Result<Loaded> {
    if let Some(name) = source.strip_prefix("builtin:") {
        let spec = builtin_example(name)?;
        return Ok(Loaded { model: spec.model.clone(), spec: Some(spec) });
    }
    let text = read(Path::new(source))?;
    let model = SdeModel::from_json(&text).map_err(|e| Error::ModelFile(format!("{source}: {e}")))?;
    Ok(Loaded { model, spec: None })
}

fn scalar(expr: &str, dim: usize) -> Result<ScalarField> {
    ScalarField::parse(expr, dim).map_err(|e| Error::Parse { component: 0, source: e })
}

fn run_spec(a: &RunArgs, l: &Loaded, paths: usize) -> Result<RunSpec> {
    let d = l.spec.as_ref().map(|s| &s.defaults);
    let x0 = a.x0.clone().or_else(|| d.map(|d| d.x0.clone())).unwrap_or_else(|| vec![0.0; l.model.dim()]);
    let delta = a.delta.or(d.map(|d| d.delta)).unwrap_or(0.01);
    let horizon = a.horizon.or(d.map(|d| d.horizon)).unwrap_or(1.0);
    let run = RunSpec::new(x0, delta, horizon, a.paths.unwrap_or(paths), a.seed);
    Ok(match a.stride {
        Some(s) => run.with_stride(s),
        None => run,
    })
}

fn observable(phi: &ScalarField) -> impl Fn(&[f64]) -> f64 + Sync + '_ {
    move |y| phi.value(y).unwrap_or(f64::NAN)
}

fn finish(command: Command, out: &Path, model_hash: Option<String>, w: ArtifactWriter) -> Result<Outcome> {
    let passed = w.checks.iter().all(|c| c.passed);
    for (k, v) in &w.metrics {
        println!("{k:<32} {v}");
    }
    for c in &w.checks {
        println!("{:<4} {:<28} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let summary = RunSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command,
        model_hash,
        artifacts: w.artifacts,
        metrics: w.metrics,
        checks: w.checks,
        passed,
    };
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!("wrote {}", out.join("summary.json").display());
    Ok(if passed { Outcome::Pass } else { Outcome::Fail })
}

fn execute(command: Command) -> Result<Outcome> {
    let args = command.clone();
    match &args {
        Command::Examples(a) => examples(a.json),
        Command::Reproduce(a) => {
            let o = Overrides { delta: a.delta, paths: a.paths, seed: a.seed, horizon: a.horizon };
            let s = reproduce(&a.name, &o, &a.out)?;
            let mut w = ArtifactWriter::new(&a.out)?;
            w.artifacts = s.artifacts;
            w.metrics = s.metrics;
            w.checks = s.checks;
            let hash = builtin_example(&a.name)?.model.hash();
            let out = a.out.clone();
            finish(command, &out, Some(hash), w)
        }
        Command::Check(a) => {
            let l = load_model(&a.model)?;
            let mut opts = HypothesisOptions { alpha: a.alpha, lyapunov: a.lyapunov.clone(), dissipativity_radius: a.dissipativity, ..Default::default() };
            if let Some(s) = &l.spec {
                opts.grid_1d = s.defaults.grid;
            }
            if let Some(g) = &a.grid {
                opts.grid_1d = (g[0], g[1], g[2]);
            }
            opts.box_radius = a.box_radius.unwrap_or(opts.box_radius);
            opts.points_per_axis = a.points_per_axis.unwrap_or(opts.points_per_axis);
            let report = hypothesis_report(&l.model, &opts)?;
            let mut w = ArtifactWriter::new(&a.out)?;
            w.file("report.json", |b| Ok(serde_json::to_writer_pretty(b, &report)?))?;
            if !report.gap_rows.is_empty() {
                w.file("gap.csv", |b| write_gap_csv(&report.gap_rows, b))?;
            }
            if let Some(g) = &report.gap {
                w.metric("inf_gap", g.infimum);
                w.metric("lambda0", g.lambda0);
            }
            for r in report.all() {
                let verdict = serde_json::to_value(r.verdict)?;
                let detail = match (r.value, r.notes.first()) {
                    (Some(v), _) => format!("{} (value {v}; {})", verdict.as_str().unwrap_or("?"), r.grid),
                    (None, Some(n)) => format!("{}: {n}", verdict.as_str().unwrap_or("?")),
                    (None, None) => format!("{} ({})", verdict.as_str().unwrap_or("?"), r.grid),
                };
                // inapplicable checks are reported but do not fail the run
                w.check(r.check.clone(), r.verdict != Verdict::Fail, detail);
            }
            let out = a.out.clone();
            finish(command, &out, Some(l.model.hash()), w)
        }
        Command::Simulate(a) => {
            let l = load_model(&a.run.model)?;
            let run = run_spec(&a.run, &l, 10)?;
            let mesh = Mesh::over(run.delta, run.horizon).with_stride(run.stride);
            let opts = SimOptions { jacobian: a.jacobian, ..Default::default() };
            let paths = simulate_batch(&l.model, &run.x0, &mesh, run.n_paths, run.seed, &opts)?;
            let mut w = ArtifactWriter::new(&a.run.out)?;
            w.file("paths.csv", |b| Ok(write_paths_csv(&paths, b)?))?;
            let meta = BatchMeta {
                schema_version: utweak_core::euler::SCHEMA_VERSION,
                seed: run.seed,
                delta: mesh.delta,
                n_steps: mesh.n_steps,
                stride: mesh.stride,
                n_paths: run.n_paths,
                model_hash: l.model.hash(),
                model: l.model.to_file(),
                ends: paths.iter().map(|p| p.end.clone()).collect(),
            };
            w.file("meta.json", |b| Ok(serde_json::to_writer_pretty(b, &meta)?))?;
            let done = paths.iter().filter(|p| p.end.is_completed()).count();
            w.metric("completed_paths", done as f64);
            let out = a.run.out.clone();
            finish(command, &out, Some(l.model.hash()), w)
        }
        Command::WeakError(a) => {
            let l = load_model(&a.run.model)?;
            let run = run_spec(&a.run, &l, 10_000)?;
            let phi = scalar(&a.phi, l.model.dim())?;
            let obs = observable(&phi);
            let curve = if a.exact {
                let spec = l.spec.as_ref().ok_or_else(|| Error::Unsupported("--exact needs a builtin model".into()))?;
                gaussian_expectation(spec, &obs, 0.0, &run.x0)?;
                let x0 = run.x0.clone();
                let exact = move |t: f64| gaussian_expectation(spec, &obs, t, &x0).unwrap_or(f64::NAN);
                weak_error_curve(&l.model, &observable(&phi), &run, Reference::Exact(&exact))?
            } else {
                weak_error_curve(&l.model, &obs, &run, Reference::Fine { m: a.refine })?
            };
            let mut w = ArtifactWriter::new(&a.run.out)?;
            w.file("weak_error.csv", |b| curve.write_csv(b))?;
            w.metric("sup", curve.sup());
            w.metric("explosion_fraction", curve.ends.explosion_fraction());
            w.check("no_divergence", !curve.divergent, format!("{} exploded paths", curve.ends.exploded));
            let out = a.run.out.clone();
            finish(command, &out, Some(l.model.hash()), w)
        }
        Command::Decay(a) => {
            let l = load_model(&a.run.model)?;
            let run = run_spec(&a.run, &l, 1000)?;
            let lambda = match &a.lambda {
                Some(e) => LambdaFunction::from_expr(scalar(e, l.model.dim())?, vec![]),
                None => LambdaFunction::induced(&l.model)?,
            };
            let fit = decay_functional(&l.model, &lambda.functional(), &run)?;
            let mut w = ArtifactWriter::new(&a.run.out)?;
            w.file("decay.csv", |b| fit.write_csv(b))?;
            w.metric("rate", fit.rate);
            w.metric("intercept", fit.intercept);
            w.metric("singular_paths", fit.ends.singular as f64);
            let out = a.run.out.clone();
            finish(command, &out, Some(l.model.hash()), w)
        }
        Command::Derivative(a) => {
            let l = load_model(&a.run.model)?;
            let n = l.model.dim();
            let run = run_spec(&a.run, &l, 10_000)?;
            let f = scalar(&a.f, n)?;
            let dir = match &a.direction {
                Some(c) => c.clone(),
                None => (0..n).map(|i| if i == 0 { "1".to_string() } else { "0".to_string() }).collect(),
            };
            let v = VectorField::parse(&dir, n)?;
            let curve = derivative_estimate(&l.model, &f, &v, &run)?;
            let mut w = ArtifactWriter::new(&a.run.out)?;
            w.file("derivative.csv", |b| curve.write_csv(b))?;
            if let Some(r) = curve.decay_rate() {
                w.metric("decay_rate", r);
            }
            if let Some(rate) = a.bound_rate {
                let over = curve.exceedances(&|t: f64| (-rate * t).exp());
                w.check("derivative_bound", over.is_empty(), format!("{} mesh times above exp(-{rate} t) + 3 stderr", over.len()));
            }
            if let Some(slack) = a.gamma_slack {
                let lambda = LambdaFunction::induced(&l.model)?;
                let g = gamma_pathwise_check(&l.model, &lambda.functional(), &f, &run, slack)?;
                w.file("gamma.json", |b| Ok(serde_json::to_writer_pretty(b, &g)?))?;
                w.metric("gamma_worst_relative_gap", g.worst_relative_gap);
                w.check("gamma_pathwise", g.violating_paths == 0, format!("{} of {} paths violate", g.violating_paths, g.n_paths));
            }
            let out = a.run.out.clone();
            finish(command, &out, Some(l.model.hash()), w)
        }
        Command::Ergodic(a) => {
            let l = load_model(&a.run.model)?;
            let run = run_spec(&a.run, &l, 1000)?;
            let phi = scalar(&a.phi, l.model.dim())?;
            let oracle = match (a.oracle, a.invariant) {
                (Some(o), _) => Some(o),
                (None, true) => {
                    let spec = l.spec.as_ref().ok_or_else(|| Error::Unsupported("--invariant needs a builtin model".into()))?;
                    if l.model.dim() != 1 {
                        return Err(Error::Unsupported("--invariant needs a one-dimensional model".into()));
                    }
                    Some(invariant_expectation(spec, &|x| phi.value(&[x]).unwrap_or(f64::NAN))?)
                }
                (None, false) => None,
            };
            let curve = ergodic_average(&l.model, &observable(&phi), &run, oracle)?;
            let mut w = ArtifactWriter::new(&a.run.out)?;
            w.file("ergodic.csv", |b| curve.write_csv(b))?;
            let (last, se) = (*curve.average.last().unwrap_or(&f64::NAN), *curve.stderr.last().unwrap_or(&f64::NAN));
            w.metric("average", last);
            w.metric("stderr", se);
            if let Some(o) = oracle {
                w.metric("oracle", o);
                let gap = (last - o).abs();
                w.check("ergodic_average", gap <= a.tolerance + 3.0 * se, format!("|average - oracle| = {gap}, stderr {se}"));
            }
            let out = a.run.out.clone();
            finish(command, &out, Some(l.model.hash()), w)
        }
    }
}

fn examples(json: bool) -> Result<Outcome> {
    let specs: Vec<ExampleSpec> = BUILTIN_NAMES.iter().map(|n| builtin_example(n)).collect::<Result<_>>()?;
    if json {
        #[derive(Serialize)]
        struct Entry<'a> {
            name: &'a str,
            description: &'a str,
            model: utweak_core::model::ModelFile,
            defaults: &'a utweak_core::catalog::Defaults,
            constants: &'a [utweak_core::catalog::Constant],
        }
        let entries: Vec<Entry> = specs
            .iter()
            .map(|s| Entry { name: s.name, description: s.description, model: s.model.to_file(), defaults: &s.defaults, constants: &s.constants })
            .collect();
        let doc = serde_json::json!({ "schema_version": SUMMARY_SCHEMA_VERSION, "examples": entries, "oracles": oracle_table() });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        for s in &specs {
            println!("{:<14} {}", s.name, s.description);
        }
        println!();
        for o in oracle_table() {
            println!("{:<24} {:<14} {}", o.name, o.example, o.formula);
        }
    }
    Ok(Outcome::Pass)
}
