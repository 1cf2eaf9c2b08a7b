use std::collections::BTreeMap;

use bilevel_core::expr::{evaluate, parse, pretty_print, BinOp, Expr, Func};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0.0f64..1e6).prop_map(Expr::num),
        (0u32..100).prop_map(|n| Expr::num(n as f64)),
        Just(Expr::var("eps")),
        prop::sample::select(vec!["a", "b", "E", "k_2"]).prop_map(Expr::param),
    ]
}

fn ast() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(6, 48, 2, |inner| {
        let ops = prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow]);
        let funcs = prop::sample::select(vec![Func::Exp, Func::Log, Func::Tanh, Func::Abs, Func::Sqrt]);
        prop_oneof![
            inner.clone().prop_map(Expr::negate),
            (ops, inner.clone(), inner.clone()).prop_map(|(op, l, r)| Expr::bin(op, l, r)),
            (funcs, inner).prop_map(|(f, a)| Expr::call(f, a)),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pretty_print_round_trips(a in ast()) {
        let text = pretty_print(&a);
        prop_assert_eq!(parse(&text).unwrap(), a, "{}", text);
    }

    #[test]
    fn evaluation_is_finite_or_an_error(a in ast(), eps in -2.0f64..2.0) {
        let env: BTreeMap<String, f64> =
            [("eps", eps), ("a", 1.5), ("b", -0.5), ("E", 3.0), ("k_2", 0.0)]
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect();
        if let Ok(v) = evaluate(&a, &env) {
            prop_assert!(v.is_finite());
        }
    }
}

/// Random infix text over small integers, with optional parentheses and
/// prefix minus anywhere an operand may start.
fn random_infix(rng: &mut ChaCha8Rng, depth: usize) -> String {
    let mut s = String::new();
    if rng.random_bool(0.2) {
        s.push('-');
    }
    if depth == 0 || rng.random_bool(0.3) {
        s.push_str(&rng.random_range(0..10).to_string());
        return s;
    }
    let op = ["+", "-", "*", "/", "^"][rng.random_range(0..5)];
    let body = format!("{} {op} {}", random_infix(rng, depth - 1), random_infix(rng, depth - 1));
    if rng.random_bool(0.4) {
        s.push('(');
        s.push_str(&body);
        s.push(')');
    } else {
        s.push_str(&body);
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Bin(char),
    Neg,
    Open,
}

fn prec(op: Op) -> u8 {
    match op {
        Op::Bin('+' | '-') => 1,
        Op::Bin('*' | '/') => 2,
        Op::Neg => 3,
        Op::Bin('^') => 4,
        _ => 0,
    }
}

/// Shunting-yard to postfix, then a value stack. `None` on any division by
/// zero, NaN or infinity along the way.
fn stack_machine(text: &str) -> Option<f64> {
    let mut out: Vec<Result<f64, Op>> = Vec::new();
    let mut ops: Vec<Op> = Vec::new();
    let mut expect_operand = true;
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        match c {
            '0'..='9' => {
                out.push(Ok(c.to_digit(10).unwrap() as f64));
                expect_operand = false;
            }
            '(' => {
                ops.push(Op::Open);
                expect_operand = true;
            }
            ')' => {
                while let Some(op) = ops.pop() {
                    if op == Op::Open {
                        break;
                    }
                    out.push(Err(op));
                }
                expect_operand = false;
            }
            '-' if expect_operand => ops.push(Op::Neg),
            _ => {
                let op = Op::Bin(c);
                let right = c == '^';
                while let Some(&top) = ops.last() {
                    if top != Op::Open && (prec(top) > prec(op) || (prec(top) == prec(op) && !right)) {
                        out.push(Err(ops.pop().unwrap()));
                    } else {
                        break;
                    }
                }
                ops.push(op);
                expect_operand = true;
            }
        }
    }
    while let Some(op) = ops.pop() {
        out.push(Err(op));
    }
    let mut st: Vec<f64> = Vec::new();
    for item in out {
        let v = match item {
            Ok(v) => v,
            Err(Op::Neg) => -st.pop()?,
            Err(Op::Bin(c)) => {
                let b = st.pop()?;
                let a = st.pop()?;
                match c {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    '/' if b == 0.0 => return None,
                    '/' => a / b,
                    _ => a.powf(b),
                }
            }
            Err(Op::Open) => return None,
        };
        if !v.is_finite() {
            return None;
        }
        st.push(v);
    }
    st.pop()
}

#[test]
fn agrees_with_stack_machine_on_random_infix() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let env = BTreeMap::new();
    let mut checked = 0;
    for _ in 0..1000 {
        let depth = rng.random_range(1..5);
        let text = random_infix(&mut rng, depth);
        let got = evaluate(&parse(&text).unwrap(), &env).ok();
        let want = stack_machine(&text);
        match (got, want) {
            (Some(g), Some(w)) => {
                assert!(g == w || (g - w).abs() <= 1e-12 * w.abs(), "{text}: {g} vs {w}");
                checked += 1;
            }
            (None, None) => {}
            other => panic!("{text}: {other:?}"),
        }
    }
    assert!(checked > 500, "only {checked} finite cases");
}
