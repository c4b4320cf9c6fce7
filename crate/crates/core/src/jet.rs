//! Forward-mode automatic differentiation.
//!
//! Two number types implement [`Scalar`]:
//!
//! * [`Jet4`] carries a truncated Taylor series `c0 + c1 s + ... + c4 s^4` in one
//!   seed direction, so the k-th derivative along the seed is `k! * c_k`.
//! * [`Dual`] is a first-order dual number over any other scalar. Nesting
//!   (`Dual<Dual<f64>>`) gives mixed directional derivatives, which is how
//!   nested Lie brackets get their Jacobians.
//!
//! Domain checks (log of non-positive values etc.) are the caller's job: the
//! expression evaluator inspects [`Scalar::value`] before calling into these
//! methods.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Number type the expression evaluator is generic over.
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    /// Order-zero part.
    fn value(self) -> f64;
    fn scale(self, k: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self {
        self.sin() / self.cos()
    }
    fn atan(self) -> Self;
    fn tanh(self) -> Self;
    fn sinh(self) -> Self;
    fn cosh(self) -> Self;
    fn sqrt(self) -> Self;
    /// `self^r` for real `r`; requires a positive base unless `r` is an integer.
    fn powf(self, r: f64) -> Self;
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::cst(1.0);
        }
        let mut base = self;
        let mut acc = Self::cst(1.0);
        let mut e = n.unsigned_abs();
        let mut first = true;
        while e > 0 {
            if e & 1 == 1 {
                acc = if first { base } else { acc * base };
                first = false;
            }
            e >>= 1;
            if e > 0 {
                base = base * base;
            }
        }
        if n < 0 {
            Self::cst(1.0) / acc
        } else {
            acc
        }
    }
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tan(self) -> Self {
        f64::tan(self)
    }
    fn atan(self) -> Self {
        f64::atan(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sinh(self) -> Self {
        f64::sinh(self)
    }
    fn cosh(self) -> Self {
        f64::cosh(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powf(self, r: f64) -> Self {
        f64::powf(self, r)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// Scalar Taylor jet of order four.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet4 {
    pub c: [f64; 5],
}

const FACT: [f64; 5] = [1.0, 1.0, 2.0, 6.0, 24.0];

impl Jet4 {
    pub fn constant(v: f64) -> Self {
        Jet4 { c: [v, 0.0, 0.0, 0.0, 0.0] }
    }

    /// The identity jet `v + s`.
    pub fn variable(v: f64) -> Self {
        Jet4 { c: [v, 1.0, 0.0, 0.0, 0.0] }
    }

    /// Jet of `v + s * dir`.
    pub fn seeded(v: f64, dir: f64) -> Self {
        Jet4 { c: [v, dir, 0.0, 0.0, 0.0] }
    }

    /// k-th derivative along the seed direction.
    pub fn derivative(&self, k: usize) -> f64 {
        self.c[k] * FACT[k]
    }

    /// All derivatives `[f, f', f'', f''', f'''']`.
    pub fn derivatives(&self) -> [f64; 5] {
        let mut d = self.c;
        for (k, v) in d.iter_mut().enumerate() {
            *v *= FACT[k];
        }
        d
    }

    /// Compose a univariate function with this jet, given the function's value
    /// and first four derivatives at `self.c[0]`.
    fn compose(self, f: [f64; 5]) -> Self {
        let mut h = self;
        h.c[0] = 0.0;
        let h2 = h * h;
        let h3 = h2 * h;
        let h4 = h3 * h;
        let mut out = [f[0], 0.0, 0.0, 0.0, 0.0];
        for k in 1..5 {
            out[k] = f[1] * h.c[k] + f[2] / 2.0 * h2.c[k] + f[3] / 6.0 * h3.c[k] + f[4] / 24.0 * h4.c[k];
        }
        Jet4 { c: out }
    }
}

impl Add for Jet4 {
    type Output = Jet4;
    fn add(self, o: Jet4) -> Jet4 {
        let mut c = self.c;
        for k in 0..5 {
            c[k] += o.c[k];
        }
        Jet4 { c }
    }
}

impl Sub for Jet4 {
    type Output = Jet4;
    fn sub(self, o: Jet4) -> Jet4 {
        let mut c = self.c;
        for k in 0..5 {
            c[k] -= o.c[k];
        }
        Jet4 { c }
    }
}

impl Mul for Jet4 {
    type Output = Jet4;
    fn mul(self, o: Jet4) -> Jet4 {
        let a = &self.c;
        let b = &o.c;
        Jet4 {
            c: [
                a[0] * b[0],
                a[0] * b[1] + a[1] * b[0],
                a[0] * b[2] + a[1] * b[1] + a[2] * b[0],
                a[0] * b[3] + a[1] * b[2] + a[2] * b[1] + a[3] * b[0],
                a[0] * b[4] + a[1] * b[3] + a[2] * b[2] + a[3] * b[1] + a[4] * b[0],
            ],
        }
    }
}

impl Div for Jet4 {
    type Output = Jet4;
    fn div(self, o: Jet4) -> Jet4 {
        let a = &self.c;
        let b = &o.c;
        let mut q = [0.0; 5];
        for k in 0..5 {
            let mut s = a[k];
            for j in 0..k {
                s -= q[j] * b[k - j];
            }
            q[k] = s / b[0];
        }
        Jet4 { c: q }
    }
}

impl Neg for Jet4 {
    type Output = Jet4;
    fn neg(self) -> Jet4 {
        self.scale(-1.0)
    }
}

impl Scalar for Jet4 {
    fn cst(v: f64) -> Self {
        Jet4::constant(v)
    }
    fn value(self) -> f64 {
        self.c[0]
    }
    fn scale(self, k: f64) -> Self {
        let mut c = self.c;
        for v in c.iter_mut() {
            *v *= k;
        }
        Jet4 { c }
    }
    fn exp(self) -> Self {
        let e = self.c[0].exp();
        self.compose([e; 5])
    }
    fn ln(self) -> Self {
        let x = self.c[0];
        let r = 1.0 / x;
        self.compose([x.ln(), r, -r * r, 2.0 * r * r * r, -6.0 * r * r * r * r])
    }
    fn sin(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose([s, c, -s, -c, s])
    }
    fn cos(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose([c, -s, -c, s, c])
    }
    fn tan(self) -> Self {
        let t = self.c[0].tan();
        let s = 1.0 + t * t;
        self.compose([t, s, 2.0 * t * s, 2.0 * s * (1.0 + 3.0 * t * t), 8.0 * t * s * (2.0 + 3.0 * t * t)])
    }
    fn atan(self) -> Self {
        let x = self.c[0];
        let w = 1.0 / (1.0 + x * x);
        self.compose([
            x.atan(),
            w,
            -2.0 * x * w * w,
            (6.0 * x * x - 2.0) * w * w * w,
            24.0 * x * (1.0 - x * x) * w * w * w * w,
        ])
    }
    fn tanh(self) -> Self {
        let t = self.c[0].tanh();
        let u = 1.0 - t * t;
        self.compose([t, u, -2.0 * t * u, u * (6.0 * t * t - 2.0), u * t * (16.0 - 24.0 * t * t)])
    }
    fn sinh(self) -> Self {
        let (s, c) = (self.c[0].sinh(), self.c[0].cosh());
        self.compose([s, c, s, c, s])
    }
    fn cosh(self) -> Self {
        let (s, c) = (self.c[0].sinh(), self.c[0].cosh());
        self.compose([c, s, c, s, c])
    }
    fn sqrt(self) -> Self {
        let r = self.c[0].sqrt();
        let i = 1.0 / self.c[0];
        self.compose([r, 0.5 * r * i, -0.25 * r * i * i, 0.375 * r * i * i * i, -0.9375 * r * i * i * i * i])
    }
    fn powf(self, r: f64) -> Self {
        let x = self.c[0];
        let mut f = [0.0; 5];
        let mut coef = 1.0;
        for (k, slot) in f.iter_mut().enumerate() {
            *slot = coef * x.powf(r - k as f64);
            coef *= r - k as f64;
        }
        self.compose(f)
    }
    fn powi(self, n: i32) -> Self {
        let x = self.c[0];
        let mut f = [0.0; 5];
        let mut coef = 1.0;
        for (k, slot) in f.iter_mut().enumerate() {
            // falling factorial n (n-1) ... vanishes once k exceeds a non-negative n
            *slot = if coef == 0.0 { 0.0 } else { coef * x.powi(n - k as i32) };
            coef *= (n - k as i32) as f64;
        }
        self.compose(f)
    }
}

/// First-order dual number `re + eps * du` over an arbitrary scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub du: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(re: T, du: T) -> Self {
        Dual { re, du }
    }

    fn chain(self, f: T, df: T) -> Self {
        Dual { re: f, du: df * self.du }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual { re: self.re + o.re, du: self.du + o.du }
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual { re: self.re - o.re, du: self.du - o.du }
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual { re: self.re * o.re, du: self.du * o.re + self.re * o.du }
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Dual { re: q, du: (self.du - q * o.du) / o.re }
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual { re: -self.re, du: -self.du }
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn cst(v: f64) -> Self {
        Dual { re: T::cst(v), du: T::cst(0.0) }
    }
    fn value(self) -> f64 {
        self.re.value()
    }
    fn scale(self, k: f64) -> Self {
        Dual { re: self.re.scale(k), du: self.du.scale(k) }
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), T::cst(1.0) / self.re)
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn tan(self) -> Self {
        let t = self.re.tan();
        self.chain(t, T::cst(1.0) + t * t)
    }
    fn atan(self) -> Self {
        self.chain(self.re.atan(), T::cst(1.0) / (T::cst(1.0) + self.re * self.re))
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, T::cst(1.0) - t * t)
    }
    fn sinh(self) -> Self {
        self.chain(self.re.sinh(), self.re.cosh())
    }
    fn cosh(self) -> Self {
        self.chain(self.re.cosh(), self.re.sinh())
    }
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        self.chain(r, T::cst(0.5) / r)
    }
    fn powf(self, r: f64) -> Self {
        self.chain(self.re.powf(r), self.re.powf(r - 1.0).scale(r))
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::cst(1.0);
        }
        self.chain(self.re.powi(n), self.re.powi(n - 1).scale(n as f64))
    }
}

/// Quintic `10t^3 - 15t^4 + 6t^5` bridging 0 at `r = a` to 1 at `r = b` with
/// matching first and second derivatives at both ends; constant outside.
pub fn smoothstep5<T: Scalar>(r: T, a: T, b: T) -> T {
    let (rv, av, bv) = (r.value(), a.value(), b.value());
    if rv <= av {
        return T::cst(0.0);
    }
    if rv >= bv {
        return T::cst(1.0);
    }
    let t = (r - a) / (b - a);
    let t3 = t * t * t;
    t3 * (T::cst(10.0) + t * (T::cst(-15.0) + t.scale(6.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    // k-th central difference with step h, the oracle for jet coefficients.
    fn central_diff(f: &dyn Fn(f64) -> f64, x: f64, k: usize, h: f64) -> f64 {
        // binomial-weighted central differences of order k
        let binom = |n: usize, r: usize| -> f64 {
            (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        };
        let mut s = 0.0;
        for i in 0..=k {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * binom(k, i) * f(x + (k as f64 / 2.0 - i as f64) * h);
        }
        s / h.powi(k as i32)
    }

    fn check_fn(name: &str, f64f: &dyn Fn(f64) -> f64, jetf: &dyn Fn(Jet4) -> Jet4, x: f64) {
        let j = jetf(Jet4::variable(x)).derivatives();
        assert_eq!(j[0], f64f(x), "{name}: order-0 part differs from plain evaluation");
        // Richardson-extrapolated central differences, so the step can stay
        // large enough to keep rounding out of the fourth-order check
        let steps = [0.0, 1e-4, 4e-3, 1e-2, 2e-2];
        for k in 1..=4 {
            let h = steps[k];
            let fd = (4.0 * central_diff(f64f, x, k, h / 2.0) - central_diff(f64f, x, k, h)) / 3.0;
            let tol = f64::max(1e-5, 1e-3 * fd.abs());
            assert!((j[k] - fd).abs() <= tol, "{name} order {k} at {x}: jet {} vs fd {}", j[k], fd);
        }
    }

    #[test]
    fn jet_matches_finite_differences_on_function_set() {
        for &x in &[-1.3, -0.4, 0.2, 0.7, 1.9] {
            check_fn("sin", &f64::sin, &|j| j.sin(), x);
            check_fn("cos", &f64::cos, &|j| j.cos(), x);
            check_fn("tan", &f64::tan, &|j| j.tan(), x * 0.5);
            check_fn("atan", &f64::atan, &|j| j.atan(), x);
            check_fn("tanh", &f64::tanh, &|j| j.tanh(), x);
            check_fn("sinh", &f64::sinh, &|j| j.sinh(), x);
            check_fn("cosh", &f64::cosh, &|j| j.cosh(), x);
            check_fn("exp", &f64::exp, &|j| j.exp(), x);
            check_fn("log", &|v: f64| (v + 2.0).ln(), &|j| (j + Jet4::cst(2.0)).ln(), x);
            check_fn("sqrt", &|v: f64| (v + 2.0).sqrt(), &|j| (j + Jet4::cst(2.0)).sqrt(), x);
            check_fn("powf", &|v: f64| (v + 2.0).powf(1.7), &|j| (j + Jet4::cst(2.0)).powf(1.7), x);
            check_fn("powi", &|v: f64| (v + 3.0).powi(-3), &|j| (j + Jet4::cst(3.0)).powi(-3), x);
            check_fn("powi+", &|v: f64| v.powi(5), &|j| j.powi(5), x);
            check_fn(
                "smoothstep5",
                &|v: f64| smoothstep5(v, -2.0, 2.5),
                &|j| smoothstep5(j, Jet4::cst(-2.0), Jet4::cst(2.5)),
                x,
            );
        }
    }

    #[test]
    fn leibniz_rule_holds_for_products() {
        let x = 0.37;
        let f = Jet4::variable(x).sin();
        let g = Jet4::variable(x).exp();
        let fg = (f * g).derivatives();
        let (fd, gd) = (f.derivatives(), g.derivatives());
        // (fg)'''' = sum C(4,k) f^(k) g^(4-k)
        let binom = [1.0, 4.0, 6.0, 4.0, 1.0];
        let expect: f64 = (0..5).map(|k| binom[k] * fd[k] * gd[4 - k]).sum();
        assert!((fg[4] - expect).abs() < 1e-13);
    }

    #[test]
    fn smoothstep_boundary_conditions() {
        for &(r, v) in &[(2.0, 0.0), (3.0, 1.0), (1.0, 0.0), (4.0, 1.0)] {
            assert_eq!(smoothstep5(r, 2.0, 3.0), v);
        }
        let left = smoothstep5(Jet4::variable(2.0 + 1e-9), Jet4::cst(2.0), Jet4::cst(3.0)).derivatives();
        let right = smoothstep5(Jet4::variable(3.0 - 1e-9), Jet4::cst(2.0), Jet4::cst(3.0)).derivatives();
        for k in 1..3 {
            assert!(left[k].abs() < 1e-6 && right[k].abs() < 1e-6);
        }
        assert!((smoothstep5(2.5, 2.0, 3.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nested_duals_give_second_derivatives() {
        // d^2/dx^2 atan(x) at x = 0.8
        let x = 0.8;
        let v = Dual::new(Dual::new(x, 1.0), Dual::new(1.0, 0.0));
        let r = v.atan();
        let expect = -2.0 * x / (1.0 + x * x).powi(2);
        assert!((r.du.du - expect).abs() < 1e-14);
    }
}
