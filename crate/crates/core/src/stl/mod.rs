//! Abstract syntax for the supported Signal Temporal Logic fragment.
//!
//! Formulas are built from predicate atoms `h(s) >= 0`, Boolean connectives and the bounded
//! temporal operators `F[a,b]` (eventually), `G[a,b]` (always) and the combined
//! `F[a,c1] G[c2,b]`. Time bounds are integer environment steps.
//!
//! Concrete syntax is handled by [`parse_formula`]; [`classify_fragment`] decides which shape of
//! top-level conjunction a formula has, which drives funnel synthesis.

mod fragment;
mod parser;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use fragment::{
    classify_fragment, conjuncts, FragmentClass, FragmentError, TemporalConjunct, TemporalKind,
};
pub use parser::{parse_formula, ParseError};

/// Real-valued expression over the components of a state vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    /// State component, resolved against a schema at parse time.
    Var { index: usize, name: String },
    Const(f64),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    /// Product of a constant factor and an expression.
    Scale(f64, Box<Expr>),
    Abs(Box<Expr>),
    /// Euclidean norm of the listed expressions.
    Norm2(Vec<Expr>),
    /// Max-norm of the listed expressions.
    NormInf(Vec<Expr>),
}

impl Expr {
    pub fn var(index: usize, name: impl Into<String>) -> Self {
        Expr::Var {
            index,
            name: name.into(),
        }
    }

    /// Evaluates the expression at state `s`.
    ///
    /// Panics if a variable index is out of range; parsed expressions only reference indices
    /// from their schema, so callers must pass states of that schema.
    pub fn eval(&self, s: &[f64]) -> f64 {
        match self {
            Expr::Var { index, .. } => s[*index],
            Expr::Const(c) => *c,
            Expr::Neg(e) => -e.eval(s),
            Expr::Add(a, b) => a.eval(s) + b.eval(s),
            Expr::Sub(a, b) => a.eval(s) - b.eval(s),
            Expr::Scale(c, e) => c * e.eval(s),
            Expr::Abs(e) => e.eval(s).abs(),
            Expr::Norm2(items) => items
                .iter()
                .map(|e| {
                    let v = e.eval(s);
                    v * v
                })
                .sum::<f64>()
                .sqrt(),
            Expr::NormInf(items) => items
                .iter()
                .map(|e| e.eval(s).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Largest variable index referenced, if any.
    pub fn max_var_index(&self) -> Option<usize> {
        match self {
            Expr::Var { index, .. } => Some(*index),
            Expr::Const(_) => None,
            Expr::Neg(e) | Expr::Scale(_, e) | Expr::Abs(e) => e.max_var_index(),
            Expr::Add(a, b) | Expr::Sub(a, b) => a.max_var_index().max(b.max_var_index()),
            Expr::Norm2(items) | Expr::NormInf(items) => {
                items.iter().filter_map(Expr::max_var_index).max()
            }
        }
    }
}

/// Predicate atom; holds at `s` iff `h(s) >= 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Atom {
    pub h: Expr,
    pub label: Option<String>,
}

impl Atom {
    pub fn new(h: Expr) -> Self {
        Atom { h, label: None }
    }

    /// Atom for `lhs <= rhs`, normalized to `h = rhs - lhs`.
    pub fn le(lhs: Expr, rhs: Expr) -> Self {
        Atom::new(Expr::Sub(Box::new(rhs), Box::new(lhs)))
    }

    /// Atom for `lhs >= rhs`, normalized to `h = lhs - rhs`.
    pub fn ge(lhs: Expr, rhs: Expr) -> Self {
        Atom::new(Expr::Sub(Box::new(lhs), Box::new(rhs)))
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn eval(&self, s: &[f64]) -> f64 {
        self.h.eval(s)
    }
}

// Labels are display-only.
impl PartialEq for Atom {
    fn eq(&self, other: &Self) -> bool {
        self.h == other.h
    }
}

/// Closed interval of time steps `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub lo: u32,
    pub hi: u32,
}

impl Interval {
    /// Returns `None` when `lo > hi`.
    pub fn new(lo: u32, hi: u32) -> Option<Self> {
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn contains(&self, t: u32) -> bool {
        self.lo <= t && t <= self.hi
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Formula {
    True,
    Atom(Atom),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Eventually(Interval, Box<Formula>),
    Always(Interval, Box<Formula>),
    /// `F[outer] G[inner] body`, i.e. `F[a,c1] G[c2,b]`.
    EventuallyAlways {
        outer: Interval,
        inner: Interval,
        body: Box<Formula>,
    },
}

impl Formula {
    pub fn atom(atom: Atom) -> Self {
        Formula::Atom(atom)
    }

    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn eventually(i: Interval, f: Formula) -> Self {
        Formula::Eventually(i, Box::new(f))
    }

    pub fn always(i: Interval, f: Formula) -> Self {
        Formula::Always(i, Box::new(f))
    }

    pub fn eventually_always(outer: Interval, inner: Interval, f: Formula) -> Self {
        Formula::EventuallyAlways {
            outer,
            inner,
            body: Box::new(f),
        }
    }

    /// Left-nested conjunction of `items`; `True` when empty.
    pub fn conjunction(items: impl IntoIterator<Item = Formula>) -> Self {
        items
            .into_iter()
            .reduce(Formula::and)
            .unwrap_or(Formula::True)
    }

    pub fn is_temporal(&self) -> bool {
        match self {
            Formula::True | Formula::Atom(_) => false,
            Formula::Not(f) => f.is_temporal(),
            Formula::And(a, b) | Formula::Or(a, b) => a.is_temporal() || b.is_temporal(),
            Formula::Eventually(..) | Formula::Always(..) | Formula::EventuallyAlways { .. } => {
                true
            }
        }
    }

    /// Number of future steps needed beyond `t` to evaluate the formula at `t`.
    pub fn horizon(&self) -> u32 {
        match self {
            Formula::True | Formula::Atom(_) => 0,
            Formula::Not(f) => f.horizon(),
            Formula::And(a, b) | Formula::Or(a, b) => a.horizon().max(b.horizon()),
            Formula::Eventually(i, f) | Formula::Always(i, f) => i.hi + f.horizon(),
            Formula::EventuallyAlways { outer, inner, body } => {
                outer.hi + inner.hi + body.horizon()
            }
        }
    }

    /// Nesting depth of temporal operators (`F G` counts as two).
    pub fn temporal_depth(&self) -> usize {
        match self {
            Formula::True | Formula::Atom(_) => 0,
            Formula::Not(f) => f.temporal_depth(),
            Formula::And(a, b) | Formula::Or(a, b) => a.temporal_depth().max(b.temporal_depth()),
            Formula::Eventually(_, f) | Formula::Always(_, f) => 1 + f.temporal_depth(),
            Formula::EventuallyAlways { body, .. } => 2 + body.temporal_depth(),
        }
    }

    /// Largest state index referenced by any atom.
    pub fn max_var_index(&self) -> Option<usize> {
        match self {
            Formula::True => None,
            Formula::Atom(a) => a.h.max_var_index(),
            Formula::Not(f)
            | Formula::Eventually(_, f)
            | Formula::Always(_, f)
            | Formula::EventuallyAlways { body: f, .. } => f.max_var_index(),
            Formula::And(a, b) | Formula::Or(a, b) => a.max_var_index().max(b.max_var_index()),
        }
    }
}

fn write_num(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    // `{:?}` is the shortest representation that parses back to the same f64.
    write!(f, "{v:?}")
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var { name, .. } => write!(f, "{name}"),
            Expr::Const(c) => write_num(f, *c),
            Expr::Neg(e) => write!(f, "-({e})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Scale(c, e) => {
                f.write_str("(")?;
                write_num(f, *c)?;
                write!(f, " * {e})")
            }
            Expr::Abs(e) => write!(f, "abs({e})"),
            Expr::Norm2(items) | Expr::NormInf(items) => {
                let name = if matches!(self, Expr::Norm2(_)) {
                    "norm2"
                } else {
                    "norminf"
                };
                write!(f, "{name}(")?;
                for (i, e) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{e}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Parsed atoms are `rhs - lhs`, printed back as `lhs <= rhs`.
        match &self.h {
            Expr::Sub(rhs, lhs) => write!(f, "{lhs} <= {rhs}"),
            h => write!(f, "{h} >= 0.0"),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => f.write_str("true"),
            Formula::Atom(a) => write!(f, "({a})"),
            Formula::Not(g) => write!(f, "!{g}"),
            Formula::And(a, b) => write!(f, "({a} & {b})"),
            Formula::Or(a, b) => write!(f, "({a} | {b})"),
            Formula::Eventually(i, g) => write!(f, "F{i}({g})"),
            Formula::Always(i, g) => write!(f, "G{i}({g})"),
            Formula::EventuallyAlways { outer, inner, body } => {
                write!(f, "F{outer} G{inner}({body})")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_rejects_reversed_bounds() {
        assert!(Interval::new(700, 400).is_none());
        assert_eq!(Interval::new(3, 3), Some(Interval { lo: 3, hi: 3 }));
    }

    #[test]
    fn horizon_adds_nested_bounds() {
        let p = Formula::atom(Atom::new(Expr::Const(1.0)));
        let fg = Formula::eventually_always(
            Interval::new(0, 2).unwrap(),
            Interval::new(0, 1).unwrap(),
            p.clone(),
        );
        assert_eq!(fg.horizon(), 3);
        let g = Formula::always(Interval::new(5, 9).unwrap(), Formula::not(p));
        assert_eq!(Formula::and(g, fg).horizon(), 9);
    }

    #[test]
    fn norms_evaluate() {
        let e = Expr::Norm2(vec![Expr::Const(3.0), Expr::var(0, "x")]);
        assert_eq!(e.eval(&[4.0]), 5.0);
        let e = Expr::NormInf(vec![Expr::Const(-3.0), Expr::var(0, "x")]);
        assert_eq!(e.eval(&[2.0]), 3.0);
    }
}
