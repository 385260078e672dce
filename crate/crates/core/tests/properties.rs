use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use apx::expr::{BinOp, Constant, Expression, Func, Node};
use apx::geometry::{polygonal_disk_mesh, structured_square_mesh, DiscreteField, FeSpace, QuadratureRule};
use apx::varexp::{check_modular_relations, holder_pairing, luxemburg_norm, modular, ExponentField, ExponentMode};

const VARS: [&str; 3] = ["x", "y", "t"];

fn node() -> impl Strategy<Value = Node> {
    let leaf = prop_oneof![
        (-1e3f64..1e3).prop_map(Node::Num),
        Just(Node::Const(Constant::Pi)),
        Just(Node::Const(Constant::E)),
        (0usize..3).prop_map(Node::Var),
    ];
    leaf.prop_recursive(5, 40, 3, |inner| {
        let op = prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::Div), Just(BinOp::Pow)];
        let unary = prop_oneof![Just(Func::Sin), Just(Func::Cos), Just(Func::Exp), Just(Func::Log), Just(Func::Abs), Just(Func::Sqrt)];
        let binary = prop_oneof![Just(Func::Pow), Just(Func::Min), Just(Func::Max)];
        prop_oneof![
            inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
            (op, inner.clone(), inner.clone()).prop_map(|(o, a, b)| Node::Binary(o, Box::new(a), Box::new(b))),
            (unary, inner.clone()).prop_map(|(f, a)| Node::Call(f, vec![a])),
            (binary, inner.clone(), inner).prop_map(|(f, a, b)| Node::Call(f, vec![a, b])),
        ]
    })
}

fn same(a: &Result<f64, apx::expr::ExprError>, b: &Result<f64, apx::expr::ExprError>) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()),
        (Err(_), Err(_)) => true,
        _ => false,
    }
}

fn unit_square(n: usize) -> Arc<FeSpace> {
    FeSpace::new(structured_square_mesh(n), 4).unwrap()
}

fn exponent(space: &Arc<FeSpace>, base: f64, amp: f64) -> ExponentField {
    ExponentField::from_fn(space, ExponentMode::Diagnostic, |x, y| base + amp * (1.0 + (3.0 * x - 2.0 * y).sin())).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn printed_expressions_reparse_to_the_same_function(root in node(), pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, -5.0f64..5.0), 4)) {
        let e = Expression::from_node(root, &VARS);
        let text = e.to_string();
        let back = Expression::parse(&text, &VARS).unwrap();
        prop_assert_eq!(back.to_string(), text.clone());
        for (x, y, t) in pts {
            prop_assert!(same(&e.eval(&[x, y, t]), &back.eval(&[x, y, t])), "{} at ({}, {}, {})", text, x, y, t);
        }
    }

    #[test]
    fn luxemburg_norm_is_homogeneous(seed in any::<u64>(), c in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3], base in 2.0f64..4.0, amp in 0.0f64..0.8) {
        let space = unit_square(6);
        let p = exponent(&space, base, amp);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..space.mesh().num_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u = DiscreteField::from_values(&space, values);
        let n1 = luxemburg_norm(&u, &p).unwrap();
        let n2 = luxemburg_norm(&u.scaled(c), &p).unwrap();
        prop_assert!((n2 - c.abs() * n1).abs() <= 1e-12 * n2, "{} vs {}", n2, c.abs() * n1);
    }

    #[test]
    fn norm_modular_relations_hold(scale in -3.0f64..3.0, base in 2.0f64..5.0, amp in 0.0f64..0.9, k in 1.0f64..6.0) {
        let space = unit_square(5);
        let p = exponent(&space, base, amp);
        let u = DiscreteField::interpolate(&space, |x, y| 10f64.powf(scale) * (k * x).cos() * (1.0 + y));
        let rep = check_modular_relations(&u, &p).unwrap();
        prop_assert!(rep.passed(1e-12), "{:?}", rep);
        let rho = modular(&u, &p);
        prop_assert!((rep.modular - rho).abs() <= 1e-15 * rho.max(1.0));
    }

    #[test]
    fn holder_inequality_on_fields(a in 0.1f64..5.0, b in 0.1f64..5.0, base in 2.0f64..5.0, amp in 0.0f64..0.9) {
        let space = unit_square(5);
        let p = exponent(&space, base, amp);
        let u = DiscreteField::interpolate(&space, |x, y| a * (x - y).sin() + 0.1);
        let v = DiscreteField::interpolate(&space, |x, y| b * (x * y).exp() - 1.3);
        let h = holder_pairing(&u, &v, &p).unwrap();
        prop_assert!(h.slack() >= -1e-12, "{:?}", h);
    }

    #[test]
    fn p1_interpolation_reproduces_affine_functions(c0 in -5.0f64..5.0, cx in -5.0f64..5.0, cy in -5.0f64..5.0, level in 0usize..3) {
        let space = FeSpace::new(polygonal_disk_mesh(8, level), 4).unwrap();
        let f = |x: f64, y: f64| c0 + cx * x + cy * y;
        let u = DiscreteField::interpolate(&space, f);
        for g in u.element_gradients() {
            prop_assert!((g[0] - cx).abs() <= 1e-12 * (1.0 + cx.abs() + c0.abs() + cy.abs()));
            prop_assert!((g[1] - cy).abs() <= 1e-12 * (1.0 + cx.abs() + c0.abs() + cy.abs()));
        }
        for (q, v) in space.qp_coords().iter().zip(u.values_at_qps()) {
            prop_assert!((v - f(q[0], q[1])).abs() <= 1e-12 * (1.0 + f(q[0], q[1]).abs()));
        }
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Reference-triangle average of `λ₁^a λ₂^b λ₃^c` is `2 a! b! c! / (a+b+c+2)!`.
#[test]
fn quadrature_rules_integrate_monomials_exactly() {
    for requested in 1..=5 {
        let rule = QuadratureRule::with_degree(requested).unwrap();
        let d = rule.degree() as u32;
        assert!(d >= requested as u32);
        for a in 0..=d {
            for b in 0..=d - a {
                for c in 0..=d - a - b {
                    let exact = 2.0 * factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2);
                    let got: f64 = rule
                        .points()
                        .iter()
                        .zip(rule.weights())
                        .map(|(l, w)| w * l[0].powi(a as i32) * l[1].powi(b as i32) * l[2].powi(c as i32))
                        .sum();
                    assert!((got - exact).abs() <= 1e-13, "degree {d}, ({a},{b},{c}): {got} vs {exact}");
                }
            }
        }
    }
}
