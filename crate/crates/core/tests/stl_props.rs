use proptest::prelude::*;

use stl_funnel::robustness::{rho_pointwise, rho_trace, robustness_signal, satisfies};
use stl_funnel::stl::{classify_fragment, conjuncts, parse_formula, Atom, Expr, FragmentClass, Formula, Interval};

const SCHEMA: [&str; 2] = ["x", "y"];

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0usize..2).prop_map(|i| Expr::var(i, SCHEMA[i])),
        (-5.0f64..5.0).prop_map(Expr::Const),
    ];
    leaf.prop_recursive(3, 12, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
            (-3.0f64..3.0, inner.clone()).prop_map(|(c, e)| Expr::Scale(c, Box::new(e))),
            inner.clone().prop_map(|e| Expr::Abs(Box::new(e))),
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            prop::collection::vec(inner.clone(), 1..3).prop_map(Expr::Norm2),
            prop::collection::vec(inner, 1..3).prop_map(Expr::NormInf),
        ]
    })
}

fn psi() -> impl Strategy<Value = Formula> {
    let atom = (expr(), expr()).prop_map(|(l, r)| Formula::atom(Atom::le(l, r)));
    atom.prop_recursive(2, 6, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::or(a, b)),
            inner.prop_map(Formula::not),
        ]
    })
}

fn interval(max: u32) -> impl Strategy<Value = Interval> {
    (0..=max, 0..=max).prop_map(|(a, b)| Interval::new(a.min(b), a.max(b)).unwrap())
}

fn temporal() -> impl Strategy<Value = Formula> {
    prop_oneof![
        (interval(8), psi()).prop_map(|(i, p)| Formula::eventually(i, p)),
        (interval(8), psi()).prop_map(|(i, p)| Formula::always(i, p)),
        (interval(4), interval(4), psi()).prop_map(|(o, i, p)| Formula::eventually_always(o, i, p)),
    ]
}

/// Conjunctions of one to three temporal operators, or a bare predicate.
fn fragment_formula() -> impl Strategy<Value = Formula> {
    prop_oneof![
        1 => psi(),
        4 => prop::collection::vec(temporal(), 1..4).prop_map(Formula::conjunction),
    ]
}

fn trace(len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-6.0f64..6.0, 2), len)
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn print_then_parse_is_stable(f in fragment_formula()) {
        let text = f.to_string();
        let g = parse_formula(&text, &SCHEMA).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
        // A second round must reproduce the same AST exactly.
        let again = parse_formula(&g.to_string(), &SCHEMA).unwrap();
        prop_assert_eq!(&again, &g);
        prop_assert_eq!(g.horizon(), f.horizon());
    }

    #[test]
    fn reparsed_formula_has_same_robustness(f in fragment_formula(), tr in trace(30)) {
        let g = parse_formula(&f.to_string(), &SCHEMA).unwrap();
        let a = robustness_signal(&f, &tr).unwrap();
        let b = robustness_signal(&g, &tr).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(close(*x, *y), "{} vs {}", x, y);
        }
    }

    #[test]
    fn classification_is_total_on_the_fragment(f in fragment_formula()) {
        let class = classify_fragment(&f).unwrap();
        if f.is_temporal() {
            let parts = conjuncts(&f).unwrap();
            match parts.len() {
                1 => prop_assert_eq!(class, FragmentClass::SingleTemporal),
                _ => prop_assert!(matches!(
                    class,
                    FragmentClass::SequentialConjunction | FragmentClass::OverlappingConjunction
                )),
            }
            let overlap = parts.iter().enumerate().any(|(i, p)| {
                parts[i + 1..].iter().any(|q| p.window().overlaps(&q.window()))
            });
            if parts.len() > 1 {
                prop_assert_eq!(overlap, class == FragmentClass::OverlappingConjunction);
            }
        } else {
            prop_assert_eq!(class, FragmentClass::NonTemporal);
        }
    }

    #[test]
    fn negation_flips_sign(f in fragment_formula(), tr in trace(30)) {
        let pos = robustness_signal(&f, &tr).unwrap();
        let neg = robustness_signal(&Formula::not(f), &tr).unwrap();
        for (p, n) in pos.iter().zip(&neg) {
            prop_assert_eq!(*p, -*n);
        }
    }

    #[test]
    fn sign_decides_satisfaction(f in fragment_formula(), tr in trace(30)) {
        let rho = rho_trace(&f, &tr, 0).unwrap();
        prop_assert_eq!(satisfies(&f, &tr, 0).unwrap(), rho >= 0.0);
    }

    #[test]
    fn always_is_min_of_pointwise(p in psi(), tr in trace(20), a in 0u32..5, w in 0u32..5) {
        let i = Interval::new(a, a + w).unwrap();
        let got = rho_trace(&Formula::always(i, p.clone()), &tr, 0).unwrap();
        let want = (a..=a + w)
            .map(|t| rho_pointwise(&p, &tr[t as usize]).unwrap())
            .fold(f64::INFINITY, f64::min);
        prop_assert_eq!(got, want);
        let got = rho_trace(&Formula::eventually(i, p.clone()), &tr, 0).unwrap();
        let want = (a..=a + w)
            .map(|t| rho_pointwise(&p, &tr[t as usize]).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(got, want);
    }
}

#[test]
fn short_trace_is_an_error() {
    let f = parse_formula("G[0,5](x <= 1)", &SCHEMA).unwrap();
    let tr = vec![vec![0.0, 0.0]; 5];
    assert!(rho_trace(&f, &tr, 0).is_err());
    assert!(rho_trace(&f, &[tr.clone(), vec![vec![0.0, 0.0]]].concat(), 0).is_ok());
}

#[test]
fn annulus_center_robustness() {
    // 1 <= |p| <= 2 has its best margin 0.5 on the middle circle.
    let f = parse_formula("norm2(x, y) >= 1 & norm2(x, y) <= 2", &SCHEMA).unwrap();
    let r = rho_pointwise(&f, &[1.5, 0.0]).unwrap();
    assert!((r - 0.5).abs() < 1e-12);
    let r = rho_pointwise(&f, &[0.0, 0.0]).unwrap();
    assert!((r + 1.0).abs() < 1e-12);
}
