//! Closed forms used as references for the example systems.

use serde::Serialize;

use crate::catalog::Provenance;
use crate::error::{Error, Result};
use crate::jet::smoothstep5;
use crate::numerics::grid;

/// One named closed form, with the formula it implements.
#[derive(Clone, Debug, Serialize)]
pub struct OracleEntry {
    pub name: &'static str,
    pub example: &'static str,
    pub formula: &'static str,
    pub provenance: Provenance,
}

/// Every closed form this module provides.
pub fn oracle_table() -> Vec<OracleEntry> {
    use Provenance::*;
    vec![
        OracleEntry { name: "grusin_exact_variance", example: "grusin", formula: "Var(X^2_t) = x1^2 (e^{2t} - 1)", provenance: Literature },
        OracleEntry {
            name: "grusin_euler_variance",
            example: "grusin",
            formula: "Var(Y^2_{t_n}) = 2 x1^2 ((1+delta)^{2n} - 1)/(2 + delta)",
            provenance: Literature,
        },
        OracleEntry { name: "circle_exact", example: "circle", formula: "X_t = R(t) x for |x| < 2", provenance: Literature },
        OracleEntry {
            name: "circle_radius_recurrence",
            example: "circle",
            formula: "R_{n+1} = ((1 + Psi delta)^2 + delta^2) R_n",
            provenance: Literature,
        },
        OracleEntry { name: "xcubed_threshold", example: "xcubed", formula: "E[Y_0^2] >= 4 + 4/delta^2", provenance: Literature },
        OracleEntry {
            name: "cosh_bound",
            example: "arctan",
            formula: "E cosh(Y_n) <= cosh(x0) + b/(1-a), a = e^delta (1 - alpha delta + pi^2 delta^2/8)",
            provenance: Literature,
        },
        OracleEntry {
            name: "ou_euler_moments",
            example: "ou",
            formula: "E Y_n = (1-delta)^n x, E Y_n^2 = q^{2n} x^2 + 2 delta (1 - q^{2n})/(1 - q^2)",
            provenance: Derived,
        },
    ]
}

/// `(Var X^2_t, Var Y^2_{t_n})` from `x = (1, 0)`.
pub fn grusin_variances(t: f64, delta: f64, n: u32) -> (f64, f64) {
    let exact = (2.0 * t).exp_m1();
    let euler = 2.0 * ((2.0 * n as f64) * delta.ln_1p()).exp_m1() / (2.0 + delta);
    (exact, euler)
}

/// Rotation by angle `t`, the exact flow inside the radius-2 disc.
pub fn circle_exact(t: f64, x: [f64; 2]) -> Result<[f64; 2]> {
    if x[0].hypot(x[1]) >= 2.0 {
        return Err(Error::Invalid("the exact rotation holds only for |x| < 2".into()));
    }
    let (s, c) = t.sin_cos();
    Ok([x[0] * c - x[1] * s, x[0] * s + x[1] * c])
}

/// The confinement `Psi(x) = -smoothstep5(|x|, 2, 3)`.
pub fn circle_psi(r: f64) -> f64 {
    -smoothstep5(r, 2.0, 3.0)
}

/// `R_0, ..., R_n` with `R_{k+1} = ((1 + Psi(sqrt R_k) delta)^2 + delta^2) R_k`.
pub fn circle_radius_recurrence(delta: f64, r0: f64, n: usize, psi: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut r = r0;
    out.push(r);
    for _ in 0..n {
        let p = psi(r.sqrt());
        r *= (1.0 + p * delta).powi(2) + delta * delta;
        out.push(r);
    }
    out
}

/// `sup_{n <= n_max} (|Y_n|^2 - |X_{t_n}|^2)` for the circle from `|x|^2 = r0 < 4`.
/// The exact flow keeps `|X_t|^2 = r0`.
pub fn circle_divergence(delta: f64, r0: f64, n_max: usize) -> f64 {
    circle_radius_recurrence(delta, r0, n_max, circle_psi).iter().map(|r| r - r0).fold(f64::NEG_INFINITY, f64::max)
}

/// `4 + 4/delta^2`.
pub fn xcubed_threshold(delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Invalid(format!("step size must be positive, got {delta}")));
    }
    Ok(4.0 + 4.0 / (delta * delta))
}

/// Constants of the discrete cosh-moment recurrence `E cosh(Y_{n+1}) <= a E cosh(Y_n) + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoshBound {
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
}

impl CoshBound {
    /// `cosh(x0) + b/(1 - a)`.
    pub fn bound(&self, x0: f64) -> f64 {
        x0.cosh() + self.b / (1.0 - self.a)
    }
}

/// `beta(alpha) = max over [-30, 30] (step 1e-3) of -atan(x) sinh(x) + alpha cosh(x)`.
pub fn cosh_beta(alpha: f64) -> Result<f64> {
    if !(alpha > 1.0 && alpha < std::f64::consts::FRAC_PI_2) {
        return Err(Error::Invalid(format!("alpha must lie in (1, pi/2), got {alpha}")));
    }
    Ok(grid(-30.0, 30.0, 1e-3).into_iter().map(|x| -x.atan() * x.sinh() + alpha * x.cosh()).fold(f64::NEG_INFINITY, f64::max))
}

/// `a = e^delta (1 - alpha delta + pi^2 delta^2 / 8)`,
/// `b = e^delta beta delta + e^delta (pi^2/8) delta^2 cosh(pi delta / 2)`.
/// `beta` defaults to [`cosh_beta`]. Fails unless `0 < a < 1`.
pub fn cosh_bound_constants(delta: f64, alpha: f64, beta: Option<f64>) -> Result<CoshBound> {
    let beta = match beta {
        Some(b) => b,
        None => cosh_beta(alpha)?,
    };
    let pi2 = std::f64::consts::PI.powi(2) / 8.0;
    let e = delta.exp();
    let a = e * (1.0 - alpha * delta + pi2 * delta * delta);
    let b = e * beta * delta + e * pi2 * delta * delta * (std::f64::consts::FRAC_PI_2 * delta).cosh();
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Invalid(format!("need 0 < a < 1 for a uniform bound, got a = {a} at delta = {delta}")));
    }
    Ok(CoshBound { delta, alpha, beta, a, b })
}

/// `(E Y_n, E Y_n^2)` for Euler on `dX = -X dt + sqrt(2) dB` from `x`.
pub fn ou_euler_moments(x: f64, delta: f64, n: u32) -> (f64, f64) {
    let q = 1.0 - delta;
    let q2n = q.powi(2 * n as i32);
    let second = if (1.0 - q * q).abs() < f64::EPSILON { q2n * x * x + 2.0 * delta * n as f64 } else { q2n * x * x + 2.0 * delta * (1.0 - q2n) / (1.0 - q * q) };
    (q.powi(n as i32) * x, second)
}

/// `(E X_t, E X_t^2)` for `dX = -X dt + sqrt(2) dB`.
pub fn ou_exact_moments(x: f64, t: f64) -> (f64, f64) {
    let m = x * (-t).exp();
    (m, m * m + 1.0 - (-2.0 * t).exp())
}

/// Sup over the mesh `t_n = n delta <= horizon` of `|E X_t^2 - E Y_n^2|`.
pub fn ou_sup_error_x2(x: f64, delta: f64, horizon: f64) -> f64 {
    let n = (horizon / delta).round() as u32;
    (0..=n)
        .map(|k| (ou_exact_moments(x, k as f64 * delta).1 - ou_euler_moments(x, delta, k).1).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::builtin_example;
    use crate::euler::{simulate_path, Mesh, SimOptions};

    #[test]
    fn grusin_values() {
        assert_eq!(grusin_variances(0.0, 1e-3, 0), (0.0, 0.0));
        let (e, _) = grusin_variances(1.0, 1e-3, 1000);
        assert!((e - 6.38905609893065).abs() < 1e-12);
        // the two variances separate, and the gap grows
        let gap = |t: f64| {
            let (a, b) = grusin_variances(t, 1e-3, (t / 1e-3).round() as u32);
            (a - b).abs()
        };
        assert!(gap(10.0) > gap(1.0));
        // 40-digit reference values computed offline
        let reference = [
            (0.5, 1.7182818284590452354, 1.7160658992862493327),
            (3.0, 402.42879349273512261, 401.0206142592256795),
            (10.0, 485165194.40979027797, 480100869.48396657069),
        ];
        for (t, exact, euler) in reference {
            let (a, b) = grusin_variances(t, 1e-3, (t / 1e-3f64).round() as u32);
            assert!(((a - exact) / exact).abs() < 1e-12);
            assert!(((b - euler) / euler).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_values() {
        let full = circle_exact(2.0 * std::f64::consts::PI, [1.0, 0.0]).unwrap();
        assert!((full[0] - 1.0).abs() < 1e-15 && full[1].abs() < 1e-15);
        assert!(circle_exact(1.0, [2.5, 0.0]).is_err());
        let plain = circle_radius_recurrence(0.1, 1.0, 10, |_| 0.0);
        for (n, r) in plain.iter().enumerate() {
            assert!((r - 1.01f64.powi(n as i32)).abs() < 1e-14);
        }
        for delta in [0.05, 0.02, 0.01] {
            assert!(circle_divergence(delta, 1.0, 10_000) > 1.0, "delta {delta}");
        }
    }

    #[test]
    fn recurrence_matches_simulated_circle() {
        let m = builtin_example("circle").unwrap().model;
        let p = simulate_path(&m, &[1.0, 0.0], &Mesh::new(0.05, 400), 0, 0, 1, &SimOptions::default()).unwrap();
        let rec = circle_radius_recurrence(0.05, 1.0, 400, circle_psi);
        for (i, r) in rec.iter().enumerate() {
            let y = p.state(i);
            assert!((y[0] * y[0] + y[1] * y[1] - r).abs() < 1e-11 * r, "step {i}");
        }
    }

    #[test]
    fn threshold_values() {
        assert_eq!(xcubed_threshold(1.0).unwrap(), 8.0);
        assert_eq!(xcubed_threshold(0.5).unwrap(), 20.0);
        assert!((xcubed_threshold(1e9).unwrap() - 4.0).abs() < 1e-12);
        assert!(xcubed_threshold(0.0).is_err());
    }

    #[test]
    fn cosh_constants() {
        let c = cosh_bound_constants(0.05, 1.2, None).unwrap();
        assert!(c.beta >= 1.2);
        assert!(c.a > 0.0 && c.a < 1.0);
        assert!((c.a - 0.05f64.exp() * (1.0 - 0.06 + std::f64::consts::PI.powi(2) / 8.0 * 0.0025)).abs() < 1e-15);
        assert!(cosh_bound_constants(0.01, 1.2, None).unwrap().a < 1.0);
        assert!(cosh_bound_constants(1.0, 1.2, None).is_err());
        assert!(cosh_beta(1.7).is_err());
        // beta really dominates the inequality on the grid
        for x in grid(-30.0, 30.0, 0.01) {
            assert!(-x.atan() * x.sinh() <= c.beta - 1.2 * x.cosh() + 1e-9 * x.cosh());
        }
    }

    #[test]
    fn ou_order_is_one() {
        let e: Vec<f64> = [0.2, 0.1, 0.05].iter().map(|&d| ou_sup_error_x2(1.0, d, 10.0)).collect();
        for w in e.windows(2) {
            let r = w[0] / w[1];
            assert!((1.7..=2.3).contains(&r), "ratio {r}");
        }
        let (m, s) = ou_euler_moments(1.0, 0.1, 0);
        assert_eq!((m, s), (1.0, 1.0));
        // one step by hand: E Y_1^2 = 0.81 + 0.2
        assert!((ou_euler_moments(1.0, 0.1, 1).1 - 1.01).abs() < 1e-15);
    }

    #[test]
    fn table_is_complete() {
        let t = oracle_table();
        assert!(t.iter().all(|e| !e.formula.is_empty()));
        assert!(t.iter().any(|e| e.example == "grusin"));
    }
}
