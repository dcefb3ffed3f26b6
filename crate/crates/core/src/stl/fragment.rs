use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Formula, Interval};

/// Top-level shape of a formula inside the supported fragment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FragmentClass {
    /// No temporal operator at all.
    NonTemporal,
    /// Exactly one temporal operator over a non-temporal body.
    SingleTemporal,
    /// Conjunction of temporal operators whose windows are disjoint and ordered.
    SequentialConjunction,
    /// Conjunction of temporal operators where at least two windows intersect.
    OverlappingConjunction,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FragmentError {
    #[error("temporal operator under `{0}` is outside the supported fragment")]
    TemporalUnderConnective(&'static str),
    #[error("temporal operators nested beyond `F[a,c1] G[c2,b]`")]
    NestedTemporal,
    #[error("top-level conjunct {0} is not temporal; the fragment conjoins temporal operators only")]
    MixedConjunct(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemporalKind {
    Eventually { a: u32, b: u32 },
    Always { a: u32, b: u32 },
    EventuallyAlways { a: u32, c1: u32, c2: u32, b: u32 },
}

impl TemporalKind {
    /// Steps the conjunct can constrain: `[a,b]` for `F`/`G`, `[a, c1 + b]` for `F G`.
    pub fn window(&self) -> Interval {
        match *self {
            TemporalKind::Eventually { a, b } | TemporalKind::Always { a, b } => {
                Interval { lo: a, hi: b }
            }
            TemporalKind::EventuallyAlways { a, c1, b, .. } => Interval { lo: a, hi: c1 + b },
        }
    }

    /// Shifts every bound to a clock starting at `origin` (bounds saturate at zero).
    pub fn shifted(&self, origin: u32) -> TemporalKind {
        let s = |v: u32| v.saturating_sub(origin);
        match *self {
            TemporalKind::Eventually { a, b } => TemporalKind::Eventually { a: s(a), b: s(b) },
            TemporalKind::Always { a, b } => TemporalKind::Always { a: s(a), b: s(b) },
            // c2 and b are offsets relative to the F witness time, not absolute steps.
            TemporalKind::EventuallyAlways { a, c1, c2, b } => TemporalKind::EventuallyAlways {
                a: s(a),
                c1: s(c1),
                c2,
                b,
            },
        }
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            TemporalKind::Eventually { .. } => "F",
            TemporalKind::Always { .. } => "G",
            TemporalKind::EventuallyAlways { .. } => "FG",
        }
    }
}

/// One top-level temporal conjunct `op[window] psi` with a non-temporal body.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConjunct {
    /// Position in the written conjunction.
    pub index: usize,
    pub kind: TemporalKind,
    pub psi: Formula,
}

impl TemporalConjunct {
    pub fn window(&self) -> Interval {
        self.kind.window()
    }

    /// The conjunct as a standalone formula.
    pub fn formula(&self) -> Formula {
        match self.kind {
            TemporalKind::Eventually { a, b } => {
                Formula::eventually(Interval { lo: a, hi: b }, self.psi.clone())
            }
            TemporalKind::Always { a, b } => {
                Formula::always(Interval { lo: a, hi: b }, self.psi.clone())
            }
            TemporalKind::EventuallyAlways { a, c1, c2, b } => Formula::eventually_always(
                Interval { lo: a, hi: c1 },
                Interval { lo: c2, hi: b },
                self.psi.clone(),
            ),
        }
    }
}

fn flatten_and<'a>(f: &'a Formula, out: &mut Vec<&'a Formula>) {
    match f {
        Formula::And(a, b) => {
            flatten_and(a, out);
            flatten_and(b, out);
        }
        other => out.push(other),
    }
}

fn check_propositional(f: &Formula) -> Result<(), FragmentError> {
    if f.is_temporal() {
        Err(FragmentError::NestedTemporal)
    } else {
        Ok(())
    }
}

/// Splits a temporal formula of the fragment into its top-level conjuncts, in written order.
pub fn conjuncts(f: &Formula) -> Result<Vec<TemporalConjunct>, FragmentError> {
    let mut parts = Vec::new();
    flatten_and(f, &mut parts);
    let mut out = Vec::with_capacity(parts.len());
    for (index, part) in parts.into_iter().enumerate() {
        let (kind, psi) = match part {
            Formula::Eventually(i, psi) => (TemporalKind::Eventually { a: i.lo, b: i.hi }, psi),
            Formula::Always(i, psi) => (TemporalKind::Always { a: i.lo, b: i.hi }, psi),
            Formula::EventuallyAlways { outer, inner, body } => (
                TemporalKind::EventuallyAlways {
                    a: outer.lo,
                    c1: outer.hi,
                    c2: inner.lo,
                    b: inner.hi,
                },
                body,
            ),
            Formula::Not(g) if g.is_temporal() => {
                return Err(FragmentError::TemporalUnderConnective("!"))
            }
            Formula::Or(..) if part.is_temporal() => {
                return Err(FragmentError::TemporalUnderConnective("|"))
            }
            _ => return Err(FragmentError::MixedConjunct(index)),
        };
        check_propositional(psi)?;
        out.push(TemporalConjunct {
            index,
            kind,
            psi: psi.as_ref().clone(),
        });
    }
    Ok(out)
}

/// Classifies the top-level structure of `f`.
///
/// Conjunct windows are compared after sorting by start step; a conjunction is sequential when
/// consecutive windows satisfy `b_i < a_{i+1}`.
pub fn classify_fragment(f: &Formula) -> Result<FragmentClass, FragmentError> {
    if !f.is_temporal() {
        return Ok(FragmentClass::NonTemporal);
    }
    let parts = conjuncts(f)?;
    if parts.len() == 1 {
        return Ok(FragmentClass::SingleTemporal);
    }
    let mut windows: Vec<Interval> = parts.iter().map(TemporalConjunct::window).collect();
    windows.sort_by_key(|w| (w.lo, w.hi));
    let sequential = windows.windows(2).all(|w| w[0].hi < w[1].lo);
    Ok(if sequential {
        FragmentClass::SequentialConjunction
    } else {
        FragmentClass::OverlappingConjunction
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stl::{parse_formula, Atom, Expr};

    const PEND: [&str; 2] = ["theta", "omega"];
    const PLANE: [&str; 3] = ["x", "y", "heading"];

    #[test]
    fn pendulum_three_always_is_sequential() {
        let f = parse_formula(
            "G[400,700](abs(theta) <= 0.05 & abs(omega) <= 0.05) \
             & G[1000,1200](abs(1.57 - theta) <= 0.05 & abs(omega) <= 0.05) \
             & G[1700,2000](abs(-1.57 - theta) <= 0.05 & abs(omega) <= 0.05)",
            &PEND,
        )
        .unwrap();
        assert_eq!(
            classify_fragment(&f).unwrap(),
            FragmentClass::SequentialConjunction
        );
        assert_eq!(conjuncts(&f).unwrap().len(), 3);
    }

    #[test]
    fn navigation_with_shared_windows_is_overlapping() {
        let f = parse_formula(
            "G[0,100](norminf(x-2, y-2) <= 2 & norminf(x-2, y-2) >= 0.5) \
             & F[0,50](norm2(x-3, y-1) <= 0.3) & F[50,90](norm2(x-1, y-3) <= 0.3)",
            &PLANE,
        )
        .unwrap();
        assert_eq!(
            classify_fragment(&f).unwrap(),
            FragmentClass::OverlappingConjunction
        );
    }

    #[test]
    fn touching_windows_overlap() {
        let f = parse_formula("F[0,5](x >= 0) & G[5,9](x >= 1)", &["x"]).unwrap();
        assert_eq!(
            classify_fragment(&f).unwrap(),
            FragmentClass::OverlappingConjunction
        );
    }

    #[test]
    fn single_and_non_temporal() {
        let f = parse_formula("G[0,200](abs(x-5) <= 5 | abs(x-45) <= 5)", &["x"]).unwrap();
        assert_eq!(classify_fragment(&f).unwrap(), FragmentClass::SingleTemporal);
        let f = parse_formula("x >= 1 & x <= 3", &["x"]).unwrap();
        assert_eq!(classify_fragment(&f).unwrap(), FragmentClass::NonTemporal);
    }

    #[test]
    fn triple_nesting_is_outside_fragment() {
        let p = Formula::atom(Atom::ge(Expr::var(0, "p"), Expr::Const(0.0)));
        let i = |a, b| Interval::new(a, b).unwrap();
        let f = Formula::eventually(
            i(0, 10),
            Formula::always(i(0, 5), Formula::eventually(i(0, 2), p)),
        );
        assert_eq!(classify_fragment(&f), Err(FragmentError::NestedTemporal));
    }

    #[test]
    fn connectives_over_temporal_are_rejected() {
        let f = parse_formula("G[0,5](x >= 0) | F[0,5](x >= 1)", &["x"]).unwrap();
        assert_eq!(
            classify_fragment(&f),
            Err(FragmentError::TemporalUnderConnective("|"))
        );
        let f = parse_formula("!G[0,5](x >= 0)", &["x"]).unwrap();
        assert!(classify_fragment(&f).is_err());
        let f = parse_formula("x >= 0 & G[0,5](x >= 0)", &["x"]).unwrap();
        assert_eq!(classify_fragment(&f), Err(FragmentError::MixedConjunct(0)));
    }

    #[test]
    fn eventually_always_window() {
        let f = parse_formula("F[2,6] G[1,3](x >= 0)", &["x"]).unwrap();
        let parts = conjuncts(&f).unwrap();
        assert_eq!(parts[0].window(), Interval { lo: 2, hi: 9 });
        assert_eq!(parts[0].formula(), f);
    }
}
