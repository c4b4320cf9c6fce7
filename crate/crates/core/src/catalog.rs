//! Built-in example systems with their closed-form oracles.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Convention, SdeModel};
use crate::numerics::integrate;

/// Where a stored constant comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Stated in the source literature.
    Literature,
    /// Computed here by an independent oracle.
    Derived,
    Trivial,
}

#[derive(Clone, Debug, Serialize)]
pub struct Constant {
    pub name: &'static str,
    pub value: f64,
    pub provenance: Provenance,
    pub note: &'static str,
}

/// Unnormalised one-dimensional invariant density on a truncated domain.
#[derive(Clone, Copy, Debug)]
pub struct Density {
    pub log_density: fn(f64) -> f64,
    pub domain: (f64, f64),
}

type StateFn = fn(f64, &[f64]) -> Vec<f64>;

/// Closed forms attached to a builtin. Each is a function of `(t, x0)`.
#[derive(Clone, Debug, Default)]
pub struct ExactOracle {
    pub mean: Option<StateFn>,
    pub variance: Option<StateFn>,
    /// Deterministic systems only: the exact flow map.
    pub exact_path: Option<StateFn>,
    pub invariant_density: Option<Density>,
}

impl ExactOracle {
    /// Componentwise `E[X_t^2]` from mean and variance.
    pub fn second_moment(&self, t: f64, x0: &[f64]) -> Option<Vec<f64>> {
        let (m, v) = (self.mean?(t, x0), self.variance?(t, x0));
        Some(m.iter().zip(&v).map(|(m, v)| m * m + v).collect())
    }

    /// Whether the marginal laws are Gaussian, so `mean` and `variance` fix them.
    pub fn is_gaussian(&self) -> bool {
        self.mean.is_some() && self.variance.is_some()
    }
}

/// Suggested run parameters.
#[derive(Clone, Debug, Serialize)]
pub struct Defaults {
    pub x0: Vec<f64>,
    pub delta: f64,
    pub horizon: f64,
    /// `(lo, hi, step)` for one-dimensional condition grids.
    pub grid: (f64, f64, f64),
}

#[derive(Clone, Debug)]
pub struct ExampleSpec {
    pub name: &'static str,
    pub description: &'static str,
    pub model: SdeModel,
    pub oracle: ExactOracle,
    pub defaults: Defaults,
    pub constants: Vec<Constant>,
    /// Whether the marginal law is Gaussian for every `t` (so mean and variance fix it).
    pub gaussian: bool,
}

pub const BUILTIN_NAMES: [&str; 8] = ["arctan", "bump", "sincos", "grusin", "xcubed", "circle", "circle_noise", "ou"];

const RADIUS: &str = "sqrt(x1^2 + x2^2)";

fn circle_drift() -> [String; 2] {
    let psi = format!("smoothstep5({RADIUS}, 2, 3)");
    [format!("-x2 - {psi} * x1"), format!("x1 - {psi} * x2")]
}

fn rotation(t: f64, x: &[f64]) -> Vec<f64> {
    let (s, c) = t.sin_cos();
    vec![x[0] * c - x[1] * s, x[0] * s + x[1] * c]
}

pub fn builtin_example(name: &str) -> Result<ExampleSpec> {
    let one = |drift: &str| SdeModel::parse(name, Convention::Ito, &[drift], &[vec!["1"]]);
    let spec = match name {
        "arctan" => ExampleSpec {
            name: "arctan",
            description: "dX = -atan(X) dt + sqrt(2) dB; LOAC with lambda = 1/(1+x^2), invariant density sqrt(1+x^2) exp(-x atan x)",
            model: one("-atan(x1)")?,
            oracle: ExactOracle {
                invariant_density: Some(Density {
                    log_density: |x| 0.5 * (1.0 + x * x).ln() - x * x.atan(),
                    domain: (-40.0, 40.0),
                }),
                ..Default::default()
            },
            defaults: Defaults { x0: vec![0.0], delta: 1e-2, horizon: 10.0, grid: (-60.0, 60.0, 1e-2) },
            constants: vec![
                Constant {
                    name: "lambda0_footnote",
                    value: 0.267,
                    provenance: Provenance::Literature,
                    note: "\"C is about 0.267\"; unclear whether this is lambda0 or inf(2 lambda - Xi)",
                },
                Constant {
                    name: "inf_gap_alpha_half",
                    value: ARCTAN_INF_GAP,
                    provenance: Provenance::Derived,
                    note: "inf of 2 lambda - Xi on [-60, 60], step 1e-2, alpha = 1/2",
                },
                Constant {
                    name: "invariant_second_moment",
                    value: ARCTAN_INVARIANT_X2,
                    provenance: Provenance::Derived,
                    note: "trapezoid on [-40, 40], step 1e-4",
                },
            ],
            gaussian: false,
        },
        "bump" => ExampleSpec {
            name: "bump",
            description: "dX = (2 atan(X - 5) - X) dt + sqrt(2) dB; lambda = 1 - 2/(1+(x-5)^2) is negative near x = 5",
            model: one("2 * atan(x1 - 5) - x1")?,
            oracle: ExactOracle {
                invariant_density: Some(Density {
                    log_density: |x| {
                        let y = x - 5.0;
                        2.0 * y * y.atan() - (1.0 + y * y).ln() - 0.5 * x * x
                    },
                    domain: (-40.0, 40.0),
                }),
                ..Default::default()
            },
            defaults: Defaults { x0: vec![5.0], delta: 1e-2, horizon: 10.0, grid: (-60.0, 60.0, 1e-2) },
            constants: vec![Constant {
                name: "inf_gap_alpha_half",
                value: BUMP_INF_GAP,
                provenance: Provenance::Derived,
                note: "inf of 2 lambda - Xi on [-60, 60], step 1e-3, alpha = 1/2",
            }],
            gaussian: false,
        },
        "sincos" => ExampleSpec {
            name: "sincos",
            description: "dX = -sin(X) dt + sqrt(2) cos(X) o dB (Stratonovich); [V1, V0] = -d/dx, lambda = 1/cos(x)",
            model: SdeModel::parse(name, Convention::Stratonovich, &["-sin(x1)"], &[vec!["cos(x1)"]])?,
            oracle: ExactOracle::default(),
            defaults: Defaults { x0: vec![0.0], delta: 1e-2, horizon: 5.0, grid: (-1.5, 1.5, 1e-3) },
            constants: vec![],
            gaussian: false,
        },
        "grusin" => ExampleSpec {
            name: "grusin",
            description: "V0 = x1 d/dx1, V1 = x1 d/dx2; Var(X^2_t) = e^{2t} - 1 from x = (1, 0) while Euler gives 2((1+delta)^{2n} - 1)/(2 + delta)",
            model: SdeModel::parse(name, Convention::Stratonovich, &["x1", "0"], &[vec!["0", "x1"]])?,
            oracle: ExactOracle {
                mean: Some(|t, x| vec![x[0] * t.exp(), x[1]]),
                variance: Some(|t, x| vec![0.0, x[0] * x[0] * ((2.0 * t).exp() - 1.0)]),
                ..Default::default()
            },
            defaults: Defaults { x0: vec![1.0, 0.0], delta: 1e-3, horizon: 10.0, grid: (-3.0, 3.0, 0.1) },
            constants: vec![],
            gaussian: true,
        },
        "xcubed" => ExampleSpec {
            name: "xcubed",
            description: "dX = (-X^3 - X) dt + sqrt(2) dB; Euler second moments blow up once E[Y_0^2] >= 4 + 4/delta^2",
            model: one("-x1^3 - x1")?,
            oracle: ExactOracle {
                invariant_density: Some(Density { log_density: |x| -0.25 * x.powi(4) - 0.5 * x * x, domain: (-10.0, 10.0) }),
                ..Default::default()
            },
            defaults: Defaults { x0: vec![4.0], delta: 1e-2, horizon: 100.0, grid: (-10.0, 10.0, 1e-2) },
            constants: vec![Constant {
                name: "invariant_second_moment",
                value: XCUBED_INVARIANT_X2,
                provenance: Provenance::Derived,
                note: "quadrature against exp(-x^4/4 - x^2/2)",
            }],
            gaussian: false,
        },
        "circle" => {
            let [d1, d2] = circle_drift();
            ExampleSpec {
                name: "circle",
                description: "ODE rotating on circles, confined by Psi = -smoothstep5(|x|, 2, 3); Euler radius drifts outward to about 2",
                model: SdeModel::parse(name, Convention::Ito, &[d1.as_str(), d2.as_str()], &[])?,
                oracle: ExactOracle { exact_path: Some(rotation), ..Default::default() },
                defaults: Defaults { x0: vec![1.0, 0.0], delta: 0.05, horizon: 500.0, grid: (-4.0, 4.0, 0.05) },
                constants: vec![Constant {
                    name: "sup_radius_gap_lower_bound",
                    value: 1.0,
                    provenance: Provenance::Literature,
                    note: "sup_n(|Y_n|^2 - |X_{t_n}|^2) > 1",
                }],
                gaussian: false,
            }
        }
        "circle_noise" => {
            let [d1, d2] = circle_drift();
            // the reference equation uses dW without the sqrt(2) factor
            let g = format!("0.7071067811865476 * heaviside({RADIUS} - 3)");
            ExampleSpec {
                name: "circle_noise",
                description: "the confined rotation plus noise 1_{|x|>3} dW in each coordinate",
                model: SdeModel::parse(
                    name,
                    Convention::Ito,
                    &[d1.as_str(), d2.as_str()],
                    &[vec![g.as_str(), "0"], vec!["0", g.as_str()]],
                )?,
                oracle: ExactOracle::default(),
                defaults: Defaults { x0: vec![1.0, 0.0], delta: 0.05, horizon: 500.0, grid: (-4.0, 4.0, 0.05) },
                constants: vec![],
                gaussian: false,
            }
        }
        "ou" => ExampleSpec {
            name: "ou",
            description: "dX = -X dt + sqrt(2) dB; mean x e^{-t}, variance 1 - e^{-2t}",
            model: one("-x1")?,
            oracle: ExactOracle {
                mean: Some(|t, x| vec![x[0] * (-t).exp()]),
                variance: Some(|t, _| vec![1.0 - (-2.0 * t).exp()]),
                invariant_density: Some(Density { log_density: |x| -0.5 * x * x, domain: (-20.0, 20.0) }),
                ..Default::default()
            },
            defaults: Defaults { x0: vec![1.0], delta: 0.1, horizon: 10.0, grid: (-10.0, 10.0, 1e-2) },
            constants: vec![],
            gaussian: true,
        },
        other => return Err(Error::UnknownExample(other.to_string())),
    };
    Ok(spec)
}

/// inf of `2 lambda - Xi` for the arctan model, alpha = 1/2, grid [-60, 60] step 1e-2.
pub const ARCTAN_INF_GAP: f64 = 0.503_142_392_874_994_5;
/// Same for the bump model on a step-1e-3 grid.
pub const BUMP_INF_GAP: f64 = 0.203_250_965_061_933_63;
/// `E[x^2]` under the arctan invariant law.
pub const ARCTAN_INVARIANT_X2: f64 = 1.895_003_621_362_856;
/// `E[x^2]` under the xcubed invariant law.
pub const XCUBED_INVARIANT_X2: f64 = 0.467_919_916_973_665_2;

/// `int phi dmu` against the stored invariant density, normalised internally.
pub fn invariant_expectation(spec: &ExampleSpec, phi: &dyn Fn(f64) -> f64) -> Result<f64> {
    let dens = spec
        .oracle
        .invariant_density
        .ok_or_else(|| Error::Unsupported(format!("`{}` has no invariant density", spec.name)))?;
    let (a, b) = dens.domain;
    // shift by the log-density maximum on a coarse grid to keep values O(1)
    let shift = (0..=4000)
        .map(|i| (dens.log_density)(a + (b - a) * i as f64 / 4000.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let rho = |x: f64| ((dens.log_density)(x) - shift).exp();
    let z = integrate(rho, a, b, 32, 1e-11)?;
    let num = integrate(|x| phi(x) * rho(x), a, b, 32, 1e-11 * z.max(1.0))?;
    Ok(num / z)
}

/// `E phi(X_t)` from `x0` for a builtin with Gaussian marginals. At most one
/// coordinate may have positive variance; the others are deterministic.
pub fn gaussian_expectation(spec: &ExampleSpec, phi: &dyn Fn(&[f64]) -> f64, t: f64, x0: &[f64]) -> Result<f64> {
    let (Some(mean), Some(var)) = (spec.oracle.mean, spec.oracle.variance) else {
        return Err(Error::Unsupported(format!("`{}` has no Gaussian closed form", spec.name)));
    };
    let (m, v) = (mean(t, x0), var(t, x0));
    let random: Vec<usize> = (0..v.len()).filter(|&i| v[i] > 0.0).collect();
    match random.as_slice() {
        [] => Ok(phi(&m)),
        &[i] => {
            let s = v[i].sqrt();
            let density = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let f = |z: f64| {
                let mut y = m.clone();
                y[i] += s * z;
                phi(&y) * density(z)
            };
            integrate(f, -12.0, 12.0, 24, 1e-9 * (1.0 + phi(&m).abs()))
        }
        _ => Err(Error::Unsupported("closed-form expectations need at most one random coordinate".into())),
    }
}
