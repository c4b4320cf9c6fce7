//! Vector-field definitions: parsing, evaluation and derivatives.

mod expr;
mod field;

pub use expr::{BinOp, Expr, Func, NON_FINITE};
pub use field::{
    commutator, eval_with_directional, ito_drift, jacobian, jacobian_into, stratonovich_drift, Bracket, ConvertedDrift,
    ScalarField, SmoothField, VectorField,
};

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn leaf(dim: usize) -> impl Strategy<Value = Expr> {
        prop_oneof![(0.0f64..5.0).prop_map(|c| Expr::Num((c * 8.0).round() / 8.0)), (0..dim).prop_map(Expr::Var)]
    }

    /// Random trees built only from everywhere-smooth operations.
    fn smooth_expr(dim: usize) -> impl Strategy<Value = Expr> {
        leaf(dim).prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Bin(BinOp::Add, Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b))),
                (inner.clone(), 0i32..4).prop_map(|(a, n)| Expr::PowI(Box::new(a), n)),
                inner.clone().prop_map(|a| Expr::Call(Func::Sin, vec![a])),
                inner.clone().prop_map(|a| Expr::Call(Func::Atan, vec![a])),
                inner.clone().prop_map(|a| Expr::Call(Func::Tanh, vec![a])),
                inner.prop_map(|a| Expr::Call(Func::Cos, vec![a])),
            ]
        })
    }

    fn field(dim: usize) -> impl Strategy<Value = VectorField> {
        proptest::collection::vec(smooth_expr(dim), dim).prop_map(VectorField::from_exprs)
    }

    fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.5f64..1.5, dim)
    }

    fn rel_close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
        (a - b).abs() <= abs + rel * a.abs().max(b.abs())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn print_then_parse_is_fixed_point(e in smooth_expr(3)) {
            let once = Expr::parse(&e.to_string(), 3).unwrap();
            let twice = Expr::parse(&once.to_string(), 3).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(once.to_string(), twice.to_string());
        }

        #[test]
        fn commutator_is_antisymmetric(v in field(2), w in field(2), x in point(2)) {
            if let (Ok(a), Ok(b)) = (commutator(&v, &w, &x), commutator(&w, &v, &x)) {
                for i in 0..2 {
                    prop_assert_eq!(a[i], -b[i]);
                }
            }
        }

        #[test]
        fn jacobian_matches_central_differences(v in field(2), x in point(2)) {
            let Ok(jac) = jacobian(&v, &x) else { return Ok(()); };
            let h = 1e-6;
            for j in 0..2 {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[j] += h;
                xm[j] -= h;
                let (fp, fm) = (v.eval(&xp).unwrap(), v.eval(&xm).unwrap());
                for i in 0..2 {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    prop_assert!(rel_close(jac[i * 2 + j], fd, 1e-6, 1e-6 * (1.0 + fp[i].abs())),
                        "entry ({}, {}): ad {} fd {}", i, j, jac[i * 2 + j], fd);
                }
            }
        }

        #[test]
        fn jacobi_identity(u in field(2), v in field(2), w in field(2), x in point(2)) {
            let vw = Bracket::new(&v, &w).unwrap();
            let wu = Bracket::new(&w, &u).unwrap();
            let uv = Bracket::new(&u, &v).unwrap();
            let (Ok(a), Ok(b), Ok(c)) = (commutator(&u, &vw, &x), commutator(&v, &wu, &x), commutator(&w, &uv, &x)) else {
                return Ok(());
            };
            for i in 0..2 {
                let scale = 1.0 + a[i].abs() + b[i].abs() + c[i].abs();
                prop_assert!((a[i] + b[i] + c[i]).abs() <= 1e-8 * scale);
            }
        }

        #[test]
        fn drift_conventions_round_trip(v0 in field(2), d1 in field(2), d2 in field(2), x in point(2)) {
            let diffs = [d1, d2];
            let ito = ConvertedDrift { base: &v0, diffusions: &diffs, sign: 1.0 };
            let strat = ConvertedDrift { base: &ito, diffusions: &diffs, sign: -1.0 };
            let mut back = vec![0.0; 2];
            let (Ok(orig), Ok(())) = (v0.eval(&x), strat.eval_into(&x, &mut back)) else { return Ok(()); };
            let u0 = ito_drift(&v0, &diffs, &x).unwrap();
            for i in 0..2 {
                let scale = 1.0 + (u0[i] - orig[i]).abs();
                prop_assert!((back[i] - orig[i]).abs() <= 1e-10 * scale, "{} vs {}", back[i], orig[i]);
            }
        }
    }
}
