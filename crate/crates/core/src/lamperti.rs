//! Lamperti reduction of a one-dimensional elliptic SDE to additive noise.
//!
//! With `U1 = (sum_k V_k^2)^(1/2)` and `h(x) = int_{x_ref}^x 1/U1`, the process
//! `Y = h(X)` solves `dY = b_Y(Y) dt + sqrt(2) dW` where
//! `b_Y(h(x)) = U0(x)/U1(x) - U1'(x)`.

use crate::dsl::SmoothField;
use crate::error::{DomainError, Error, Result};
use crate::jet::{Dual, Jet4, Scalar};
use crate::model::{Dynamics, SdeModel};

const OUTSIDE: &str = "outside the Lamperti working interval";

#[derive(Clone, Debug)]
pub struct Lamperti {
    model: SdeModel,
    x_ref: f64,
    lo: f64,
    hi: f64,
    /// `h` at the cell edges `lo + i * cell`.
    table: Vec<f64>,
    cell: f64,
}

impl Lamperti {
    /// Build the transform on `[lo, hi]` with `h(x_ref) = 0`. Fails unless
    /// `U1` stays above `1e-12` at every table node.
    pub fn new(model: &SdeModel, x_ref: f64, lo: f64, hi: f64) -> Result<Self> {
        if model.dim() != 1 || model.noise_dim() == 0 {
            return Err(Error::Unsupported("the Lamperti transform needs a one-dimensional model with noise".into()));
        }
        if !(lo < x_ref && x_ref < hi) {
            return Err(Error::Invalid(format!("reference point {x_ref} must lie inside ({lo}, {hi})")));
        }
        let cells = (((hi - lo) / 0.01).ceil() as usize).clamp(16, 1 << 16);
        let cell = (hi - lo) / cells as f64;
        let mut me = Lamperti { model: model.clone(), x_ref, lo, hi, table: vec![0.0; cells + 1], cell };
        // a single noise field that changes sign must vanish in between
        let mut last_sign = 0.0;
        for i in 0..=cells {
            let x = me.node(i);
            let u = me.u1(x)?;
            if !(u > 1e-12) {
                return Err(Error::Invalid(format!("ellipticity fails on the working interval: U1({x}) = {u}")));
            }
            if model.noise_dim() == 1 {
                let s = model.diffusions()[0].eval(&[x])?[0].signum();
                if last_sign * s < 0.0 {
                    return Err(Error::Invalid(format!("ellipticity fails on the working interval: V1 changes sign near {x}")));
                }
                last_sign = s;
            }
        }
        // cumulative integral from lo, then shift so that h(x_ref) = 0
        let mut acc = 0.0;
        for i in 1..=cells {
            acc += me.segment(me.node(i - 1), me.node(i))?;
            me.table[i] = acc;
        }
        let shift = me.h_from_table(x_ref)?;
        me.table.iter_mut().for_each(|v| *v -= shift);
        Ok(me)
    }

    fn node(&self, i: usize) -> f64 {
        if i + 1 == self.table.len() {
            self.hi
        } else {
            self.lo + i as f64 * self.cell
        }
    }

    fn segment(&self, a: f64, b: f64) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        let f = |x: f64| self.u1(x).map_or(f64::NAN, |u| 1.0 / u);
        let out = quadrature::integrate(f, a, b, 1e-15);
        if !out.integral.is_finite() {
            return Err(Error::Quadrature(format!("1/U1 is not integrable on [{a}, {b}]")));
        }
        Ok(out.integral)
    }

    fn cell_of(&self, x: f64) -> usize {
        (((x - self.lo) / self.cell).floor().max(0.0) as usize).min(self.table.len() - 2)
    }

    fn h_from_table(&self, x: f64) -> Result<f64> {
        if !(self.lo..=self.hi).contains(&x) {
            return Err(DomainError { op: OUTSIDE, arg: x, component: None }.into());
        }
        let i = self.cell_of(x);
        Ok(self.table[i] + self.segment(self.node(i), x)?)
    }

    pub fn reference_point(&self) -> f64 {
        self.x_ref
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn model(&self) -> &SdeModel {
        &self.model
    }

    /// `U1(x) = (sum_k V_k(x)^2)^(1/2)`.
    pub fn u1(&self, x: f64) -> Result<f64, DomainError> {
        let mut s2 = 0.0;
        let mut o = [0.0];
        for v in self.model.diffusions() {
            v.eval_into(&[x], &mut o)?;
            s2 += o[0] * o[0];
        }
        Ok(s2.sqrt())
    }

    fn u1_jet<T: Scalar>(&self, x: T) -> Result<(T, T), DomainError> {
        let xd = [Dual::new(x, T::cst(1.0))];
        let mut o = [Dual::new(T::cst(0.0), T::cst(0.0))];
        let (mut s2, mut ds) = (T::cst(0.0), T::cst(0.0));
        for v in self.model.diffusions() {
            v.eval_into(&xd, &mut o)?;
            s2 = s2 + o[0].re * o[0].re;
            ds = ds + o[0].re * o[0].du;
        }
        let u = s2.sqrt();
        Ok((u, ds / u))
    }

    /// `h(x) = int_{x_ref}^x 1/U1`.
    pub fn h(&self, x: f64) -> Result<f64> {
        self.h_from_table(x)
    }

    /// `h^{-1}(y)` by bracketing in the table, then safeguarded Newton to `1e-12`.
    pub fn h_inv(&self, y: f64) -> Result<f64> {
        let (first, last) = (self.table[0], self.table[self.table.len() - 1]);
        if !(first..=last).contains(&y) {
            return Err(DomainError { op: OUTSIDE, arg: y, component: None }.into());
        }
        let i = self.table.partition_point(|&v| v <= y).clamp(1, self.table.len() - 1) - 1;
        let (mut a, mut b) = (self.node(i), self.node(i + 1));
        let mut x = a + (b - a) * (y - self.table[i]) / (self.table[i + 1] - self.table[i]);
        for _ in 0..100 {
            let r = self.table[i] + self.segment(self.node(i), x)? - y;
            if r > 0.0 {
                b = x;
            } else {
                a = x;
            }
            if r == 0.0 {
                return Ok(x);
            }
            let mut next = x - r * self.u1(x)?;
            if !(a..=b).contains(&next) {
                next = 0.5 * (a + b);
            }
            let done = (next - x).abs() <= 1e-12 * (1.0 + x.abs());
            x = next;
            if done || b - a <= 1e-15 * (1.0 + x.abs()) {
                return Ok(x);
            }
        }
        Err(Error::Invalid(format!("h^-1 did not converge at y = {y}")))
    }

    /// The reduced drift as a function of `x`: `U0/U1 - U1'`.
    fn drift_x<T: Scalar>(&self, x: T) -> Result<T, DomainError> {
        let (u1, du1) = self.u1_jet(x)?;
        let mut u0 = [T::cst(0.0)];
        self.model.ito_field().eval_into(&[x], &mut u0)?;
        Ok(u0[0] / u1 - du1)
    }

    /// `b_Y(y)`.
    pub fn drift_y(&self, y: f64) -> Result<f64> {
        let x = self.h_inv(y)?;
        Ok(self.drift_x(x)?)
    }

    /// `[b_Y, b_Y', ..., b_Y'''']` at `y`, by composing with the Taylor jet of `h^{-1}`.
    pub fn drift_y_derivatives(&self, y: f64) -> Result<[f64; 5]> {
        let x = self.h_inv(y)?;
        // g = h^{-1} solves g' = U1(g); Picard iteration on jets is exact to order 4 after 5 sweeps
        let mut g = Jet4::constant(x);
        for _ in 0..5 {
            let (u, _) = self.u1_jet(g)?;
            let mut c = [x, 0.0, 0.0, 0.0, 0.0];
            for k in 0..4 {
                c[k + 1] = u.c[k] / (k + 1) as f64;
            }
            g = Jet4 { c };
        }
        Ok(self.drift_x(g)?.derivatives())
    }

    /// `b_Y'(h(x))` written in the original coordinates: `[U1, V0](x) / U1(x)`,
    /// where `V0 = U0 - U1 U1'` is the reduced Stratonovich drift.
    pub fn bracket_rate(&self, x: f64) -> Result<f64> {
        let xd = [Jet4::variable(x)];
        let (u1, du1) = self.u1_jet(xd[0])?;
        let mut u0 = [Jet4::constant(0.0)];
        self.model.ito_field().eval_into(&xd, &mut u0)?;
        let v0 = u0[0] - u1 * du1;
        let (u, du) = (u1.c[0], u1.c[1]);
        let (v, dv) = (v0.c[0], v0.c[1]);
        Ok((dv * u - du * v) / u)
    }
}

fn to_domain(e: Error) -> DomainError {
    match e {
        Error::Domain(d) => d,
        _ => DomainError { op: OUTSIDE, arg: f64::NAN, component: None },
    }
}

impl Dynamics for Lamperti {
    fn dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn is_additive(&self) -> bool {
        true
    }

    fn drift(&self, y: &[f64], out: &mut [f64]) -> Result<(), DomainError> {
        out[0] = self.drift_y(y[0]).map_err(to_domain)?;
        Ok(())
    }

    fn diffusion(&self, _k: usize, _y: &[f64], out: &mut [f64]) -> Result<(), DomainError> {
        out[0] = 1.0;
        Ok(())
    }

    fn drift_jacobian(&self, y: &[f64], out: &mut [f64]) -> Result<(), DomainError> {
        out[0] = self.drift_y_derivatives(y[0]).map_err(to_domain)?[1];
        Ok(())
    }

    fn diffusion_jacobian(&self, _k: usize, _y: &[f64], out: &mut [f64]) -> Result<(), DomainError> {
        out[0] = 0.0;
        Ok(())
    }

    fn drift_derivatives_1d(&self, y: f64) -> Result<[f64; 5], DomainError> {
        self.drift_y_derivatives(y).map_err(to_domain)
    }
}
