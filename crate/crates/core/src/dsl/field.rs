use smallvec::SmallVec;

use super::expr::Expr;
use crate::error::{DomainError, Error, ParseError, Result};
use crate::jet::{Dual, Jet4, Scalar};

/// Stack buffer for per-point scratch vectors; dimensions above 4 spill to the heap.
pub(crate) type Buf<T> = SmallVec<[T; 4]>;

/// A map R^N -> R^N that can be evaluated over any [`Scalar`].
pub trait SmoothField: Sync {
    fn dim(&self) -> usize;
    fn eval_into<T: Scalar>(&self, x: &[T], out: &mut [T]) -> Result<(), DomainError>;
}

/// Vector field given by one parsed expression per component.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    dim: usize,
    components: Vec<Expr>,
}

impl VectorField {
    pub fn parse<S: AsRef<str>>(sources: &[S], dim: usize) -> Result<Self> {
        if sources.len() != dim {
            return Err(Error::Dimension(format!("{} component(s) given for dimension {dim}", sources.len())));
        }
        let components = sources
            .iter()
            .enumerate()
            .map(|(i, s)| Expr::parse(s.as_ref(), dim).map_err(|source| Error::Parse { component: i + 1, source }))
            .collect::<Result<Vec<_>>>()?;
        Ok(VectorField { dim, components })
    }

    pub fn from_exprs(components: Vec<Expr>) -> Self {
        VectorField { dim: components.len(), components }
    }

    pub fn zero(dim: usize) -> Self {
        VectorField { dim, components: vec![Expr::Num(0.0); dim] }
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    /// Printed form of each component.
    pub fn sources(&self) -> Vec<String> {
        self.components.iter().map(|e| e.to_string()).collect()
    }

    /// All components constant, i.e. the field has zero Jacobian everywhere.
    pub fn is_constant(&self) -> bool {
        self.components.iter().all(Expr::is_constant)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, DomainError> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }
}

impl SmoothField for VectorField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into<T: Scalar>(&self, x: &[T], out: &mut [T]) -> Result<(), DomainError> {
        for (i, (c, o)) in self.components.iter().zip(out.iter_mut()).enumerate() {
            *o = c.eval(x).map_err(|e| e.in_component(i))?;
        }
        Ok(())
    }
}

/// Scalar observable on R^N.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    dim: usize,
    expr: Expr,
}

impl ScalarField {
    pub fn parse(src: &str, dim: usize) -> Result<Self, ParseError> {
        Ok(ScalarField { dim, expr: Expr::parse(src, dim)? })
    }

    pub fn from_expr(expr: Expr, dim: usize) -> Self {
        ScalarField { dim, expr }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn eval<T: Scalar>(&self, x: &[T]) -> Result<T, DomainError> {
        self.expr.eval(x)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64, DomainError> {
        self.expr.eval(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, DomainError> {
        let mut xd: Buf<Dual<f64>> = x.iter().map(|&v| Dual::new(v, 0.0)).collect();
        let mut g = vec![0.0; x.len()];
        for j in 0..x.len() {
            xd[j].du = 1.0;
            g[j] = self.expr.eval(&xd)?.du;
            xd[j].du = 0.0;
        }
        Ok(g)
    }

    /// Taylor derivatives of `s -> g(x + s v)` at `s = 0`, orders 0 to 4.
    pub fn along(&self, x: &[f64], v: &[f64]) -> Result<[f64; 5], DomainError> {
        let xj: Buf<Jet4> = x.iter().zip(v).map(|(&a, &b)| Jet4::seeded(a, b)).collect();
        Ok(self.expr.eval(&xj)?.derivatives())
    }

    /// Derivatives `[g, g', g'', g''', g'''']` of a one-dimensional observable.
    pub fn derivatives_1d(&self, x: f64) -> Result<[f64; 5], DomainError> {
        self.along(&[x], &[1.0])
    }
}

/// Evaluate `field` at `x` and its directional derivative `Df(x) v`.
pub fn eval_with_directional<F: SmoothField, T: Scalar>(
    field: &F,
    x: &[T],
    v: &[T],
    value: &mut [T],
    deriv: &mut [T],
) -> Result<(), DomainError> {
    let xd: Buf<Dual<T>> = x.iter().zip(v).map(|(&a, &b)| Dual::new(a, b)).collect();
    let mut out: Buf<Dual<T>> = SmallVec::from_elem(Dual::new(T::cst(0.0), T::cst(0.0)), field.dim());
    field.eval_into(&xd, &mut out)?;
    for (i, o) in out.iter().enumerate() {
        value[i] = o.re;
        deriv[i] = o.du;
    }
    Ok(())
}

/// Row-major `N x N` Jacobian: entry `(i, j)` is `d_j f_i`.
pub fn jacobian<F: SmoothField>(field: &F, x: &[f64]) -> Result<Vec<f64>, DomainError> {
    let n = field.dim();
    let mut jac = vec![0.0; n * n];
    jacobian_into(field, x, &mut jac)?;
    Ok(jac)
}

pub fn jacobian_into<F: SmoothField>(field: &F, x: &[f64], jac: &mut [f64]) -> Result<(), DomainError> {
    let n = field.dim();
    let mut xd: Buf<Dual<f64>> = x.iter().map(|&v| Dual::new(v, 0.0)).collect();
    let mut out: Buf<Dual<f64>> = SmallVec::from_elem(Dual::new(0.0, 0.0), n);
    for j in 0..n {
        xd[j].du = 1.0;
        field.eval_into(&xd, &mut out)?;
        xd[j].du = 0.0;
        for i in 0..n {
            jac[i * n + j] = out[i].du;
        }
    }
    Ok(())
}

fn check_dims(a: usize, b: usize, x: usize) -> Result<()> {
    if a != b || a != x {
        return Err(Error::Dimension(format!("fields of dimension {a} and {b} at a point of dimension {x}")));
    }
    Ok(())
}

/// Lie bracket `[V, W] = (DW) V - (DV) W` as a field in its own right, so
/// brackets nest.
#[derive(Clone, Copy, Debug)]
pub struct Bracket<'a, A, B> {
    pub v: &'a A,
    pub w: &'a B,
}

impl<'a, A: SmoothField, B: SmoothField> Bracket<'a, A, B> {
    pub fn new(v: &'a A, w: &'a B) -> Result<Self> {
        check_dims(v.dim(), w.dim(), v.dim())?;
        Ok(Bracket { v, w })
    }
}

impl<A: SmoothField, B: SmoothField> SmoothField for Bracket<'_, A, B> {
    fn dim(&self) -> usize {
        self.v.dim()
    }

    fn eval_into<T: Scalar>(&self, x: &[T], out: &mut [T]) -> Result<(), DomainError> {
        let n = self.dim();
        let zero = T::cst(0.0);
        let mut vx: Buf<T> = SmallVec::from_elem(zero, n);
        let mut wx: Buf<T> = SmallVec::from_elem(zero, n);
        self.v.eval_into(x, &mut vx)?;
        self.w.eval_into(x, &mut wx)?;
        let mut scratch: Buf<T> = SmallVec::from_elem(zero, n);
        let mut dw_v: Buf<T> = SmallVec::from_elem(zero, n);
        let mut dv_w: Buf<T> = SmallVec::from_elem(zero, n);
        eval_with_directional(self.w, x, &vx, &mut scratch, &mut dw_v)?;
        eval_with_directional(self.v, x, &wx, &mut scratch, &mut dv_w)?;
        for i in 0..n {
            out[i] = dw_v[i] - dv_w[i];
        }
        Ok(())
    }
}

pub fn commutator<A: SmoothField, B: SmoothField>(v: &A, w: &B, x: &[f64]) -> Result<Vec<f64>> {
    let b = Bracket::new(v, w)?;
    check_dims(v.dim(), w.dim(), x.len())?;
    let mut out = vec![0.0; x.len()];
    b.eval_into(x, &mut out)?;
    Ok(out)
}

/// A drift in one convention viewed in the other: `base + sign * sum_k (DV_k) V_k`.
///
/// `sign = +1` turns a Stratonovich drift into the Ito drift; `sign = -1` goes back.
#[derive(Clone, Copy, Debug)]
pub struct ConvertedDrift<'a, B = VectorField> {
    pub base: &'a B,
    pub diffusions: &'a [VectorField],
    pub sign: f64,
}

impl<B: SmoothField> SmoothField for ConvertedDrift<'_, B> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval_into<T: Scalar>(&self, x: &[T], out: &mut [T]) -> Result<(), DomainError> {
        self.base.eval_into(x, out)?;
        if self.sign == 0.0 {
            return Ok(());
        }
        let n = self.dim();
        let zero = T::cst(0.0);
        let mut vk: Buf<T> = SmallVec::from_elem(zero, n);
        let mut dvk: Buf<T> = SmallVec::from_elem(zero, n);
        for v in self.diffusions.iter().filter(|v| !v.is_constant()) {
            v.eval_into(x, &mut vk)?;
            let vk_copy = vk.clone();
            eval_with_directional(v, x, &vk_copy, &mut vk, &mut dvk)?;
            for i in 0..n {
                out[i] = out[i] + dvk[i].scale(self.sign);
            }
        }
        Ok(())
    }
}

fn convert(base: &VectorField, diffusions: &[VectorField], x: &[f64], sign: f64) -> Result<Vec<f64>> {
    for v in diffusions {
        check_dims(base.dim(), v.dim(), x.len())?;
    }
    check_dims(base.dim(), base.dim(), x.len())?;
    let mut out = vec![0.0; x.len()];
    ConvertedDrift { base, diffusions, sign }.eval_into(x, &mut out)?;
    Ok(out)
}

/// `U0^i = V0^i + sum_k sum_j V_k^j d_j V_k^i`.
pub fn ito_drift(v0: &VectorField, diffusions: &[VectorField], x: &[f64]) -> Result<Vec<f64>> {
    convert(v0, diffusions, x, 1.0)
}

/// Inverse of [`ito_drift`].
pub fn stratonovich_drift(u0: &VectorField, diffusions: &[VectorField], x: &[f64]) -> Result<Vec<f64>> {
    convert(u0, diffusions, x, -1.0)
}
