//! Quantitative (robust) semantics.
//!
//! Atoms score `h(s)`, negation flips sign, conjunction and disjunction take `min`/`max`, and
//! the temporal operators take `max` (`F`) or `min` (`G`) over the closed window
//! `[t + a, t + b]` of discrete steps. A formula holds iff its robustness is `>= 0`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stl::Formula;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobustnessError {
    #[error("temporal operator in a formula evaluated at a single state")]
    TemporalInPointwise,
    #[error("trace of length {len} is too short to evaluate at step {t} (formula horizon {horizon})")]
    TraceTooShort { len: usize, t: usize, horizon: u32 },
    #[error("state has {got} components but the formula references component {needed}")]
    StateTooShort { got: usize, needed: usize },
    #[error("empty or invalid sampling box: {0}")]
    InvalidBox(String),
    #[error("sampling box has {got} dimensions but the formula references component {needed}")]
    DimensionMismatch { got: usize, needed: usize },
    #[error("grid resolution must be at least 2, got {0}")]
    GridTooCoarse(usize),
    #[error("grid with {0} points per axis over {1} axes is too large")]
    GridTooLarge(usize, usize),
}

/// Extremes of a non-temporal formula's robustness over the state space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoBounds {
    pub rho_min: f64,
    pub rho_max: f64,
}

impl RhoBounds {
    pub fn new(rho_min: f64, rho_max: f64) -> Option<Self> {
        (rho_min <= rho_max).then_some(RhoBounds { rho_min, rho_max })
    }

    /// Initial funnel width `rho_max - rho_min`.
    pub fn span(&self) -> f64 {
        self.rho_max - self.rho_min
    }
}

fn check_state(f: &Formula, s: &[f64]) -> Result<(), RobustnessError> {
    match f.max_var_index() {
        Some(i) if i >= s.len() => Err(RobustnessError::StateTooShort {
            got: s.len(),
            needed: i,
        }),
        _ => Ok(()),
    }
}

fn pointwise(psi: &Formula, s: &[f64]) -> Result<f64, RobustnessError> {
    Ok(match psi {
        Formula::True => f64::INFINITY,
        Formula::Atom(a) => a.eval(s),
        Formula::Not(f) => -pointwise(f, s)?,
        Formula::And(a, b) => pointwise(a, s)?.min(pointwise(b, s)?),
        Formula::Or(a, b) => pointwise(a, s)?.max(pointwise(b, s)?),
        Formula::Eventually(..) | Formula::Always(..) | Formula::EventuallyAlways { .. } => {
            return Err(RobustnessError::TemporalInPointwise)
        }
    })
}

/// Robustness of a non-temporal formula at a single state.
///
/// `true` scores `+inf`.
pub fn rho_pointwise(psi: &Formula, s: &[f64]) -> Result<f64, RobustnessError> {
    check_state(psi, s)?;
    pointwise(psi, s)
}

#[derive(Clone, Copy)]
enum Extremum {
    Min,
    Max,
}

/// `out[t] = ext(x[t+a ..= t+b])` for every `t` with `t + b < x.len()`.
///
/// Monotone-deque sliding window; the result values are copies of entries of `x`, so this is
/// exact.
fn sliding(x: &[f64], a: usize, b: usize, ext: Extremum) -> Vec<f64> {
    if x.len() <= b {
        return Vec::new();
    }
    let n_out = x.len() - b;
    let mut out = Vec::with_capacity(n_out);
    let mut dq: VecDeque<usize> = VecDeque::new();
    let dominates = |new: f64, old: f64| match ext {
        Extremum::Max => new >= old,
        Extremum::Min => new <= old,
    };
    let mut next = a;
    for t in 0..n_out {
        while next <= t + b {
            while let Some(&back) = dq.back() {
                if dominates(x[next], x[back]) {
                    dq.pop_back();
                } else {
                    break;
                }
            }
            dq.push_back(next);
            next += 1;
        }
        while let Some(&front) = dq.front() {
            if front < t + a {
                dq.pop_front();
            } else {
                break;
            }
        }
        out.push(x[*dq.front().expect("window is never empty")]);
    }
    out
}

fn signal<S: AsRef<[f64]>>(f: &Formula, trace: &[S]) -> Vec<f64> {
    match f {
        Formula::True => vec![f64::INFINITY; trace.len()],
        Formula::Atom(a) => trace.iter().map(|s| a.eval(s.as_ref())).collect(),
        Formula::Not(g) => signal(g, trace).into_iter().map(|v| -v).collect(),
        Formula::And(a, b) | Formula::Or(a, b) => {
            let sa = signal(a, trace);
            let sb = signal(b, trace);
            let is_and = matches!(f, Formula::And(..));
            sa.iter()
                .zip(&sb)
                .map(|(x, y)| if is_and { x.min(*y) } else { x.max(*y) })
                .collect()
        }
        Formula::Eventually(i, g) => {
            sliding(&signal(g, trace), i.lo as usize, i.hi as usize, Extremum::Max)
        }
        Formula::Always(i, g) => {
            sliding(&signal(g, trace), i.lo as usize, i.hi as usize, Extremum::Min)
        }
        Formula::EventuallyAlways { outer, inner, body } => {
            let g = sliding(
                &signal(body, trace),
                inner.lo as usize,
                inner.hi as usize,
                Extremum::Min,
            );
            sliding(&g, outer.lo as usize, outer.hi as usize, Extremum::Max)
        }
    }
}

/// Robustness of `phi` at every step where the trace covers its horizon.
///
/// The result has `trace.len() - phi.horizon()` entries (empty when the trace is too short).
pub fn robustness_signal<S: AsRef<[f64]>>(
    phi: &Formula,
    trace: &[S],
) -> Result<Vec<f64>, RobustnessError> {
    for s in trace {
        check_state(phi, s.as_ref())?;
    }
    Ok(signal(phi, trace))
}

/// Robustness of `phi` on `trace` at step `t`.
pub fn rho_trace<S: AsRef<[f64]>>(
    phi: &Formula,
    trace: &[S],
    t: usize,
) -> Result<f64, RobustnessError> {
    let horizon = phi.horizon();
    if t + horizon as usize >= trace.len() {
        return Err(RobustnessError::TraceTooShort {
            len: trace.len(),
            t,
            horizon,
        });
    }
    // Only the suffix starting at t matters.
    let sig = robustness_signal(phi, &trace[t..])?;
    Ok(sig[0])
}

/// Boolean satisfaction at step `t`, decided by the sign of robustness (zero counts as holding).
pub fn satisfies<S: AsRef<[f64]>>(
    phi: &Formula,
    trace: &[S],
    t: usize,
) -> Result<bool, RobustnessError> {
    Ok(rho_trace(phi, trace, t)? >= 0.0)
}

const MAX_GRID_POINTS: usize = 50_000_000;

/// Samples `psi` on a uniform grid with `grid_n` points per axis over `bounds` and returns the
/// observed extremes.
///
/// Each axis includes both endpoints. Callers with analytic extrema should prefer those.
pub fn estimate_rho_bounds(
    psi: &Formula,
    bounds: &[(f64, f64)],
    grid_n: usize,
) -> Result<RhoBounds, RobustnessError> {
    if psi.is_temporal() {
        return Err(RobustnessError::TemporalInPointwise);
    }
    if grid_n < 2 {
        return Err(RobustnessError::GridTooCoarse(grid_n));
    }
    if let Some(needed) = psi.max_var_index() {
        if needed >= bounds.len() {
            return Err(RobustnessError::DimensionMismatch {
                got: bounds.len(),
                needed,
            });
        }
    }
    for (k, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(RobustnessError::InvalidBox(format!(
                "axis {k} has bounds [{lo}, {hi}]"
            )));
        }
    }
    let dims = bounds.len();
    let total = u32::try_from(dims)
        .ok()
        .and_then(|d| grid_n.checked_pow(d))
        .filter(|&n| n <= MAX_GRID_POINTS)
        .ok_or(RobustnessError::GridTooLarge(grid_n, dims))?;

    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| {
            let step = (hi - lo) / (grid_n - 1) as f64;
            (0..grid_n)
                .map(|i| if i == grid_n - 1 { hi } else { lo + step * i as f64 })
                .collect()
        })
        .collect();

    let mut idx = vec![0usize; dims];
    let mut s: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    let mut rho_min = f64::INFINITY;
    let mut rho_max = f64::NEG_INFINITY;
    for _ in 0..total {
        let v = pointwise(psi, &s)?;
        rho_min = rho_min.min(v);
        rho_max = rho_max.max(v);
        for k in (0..dims).rev() {
            idx[k] += 1;
            if idx[k] < grid_n {
                s[k] = axes[k][idx[k]];
                break;
            }
            idx[k] = 0;
            s[k] = axes[k][0];
        }
    }
    Ok(RhoBounds { rho_min, rho_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stl::parse_formula;
    use std::f64::consts::PI;

    fn p(text: &str, schema: &[&str]) -> Formula {
        parse_formula(text, schema).unwrap()
    }

    #[test]
    fn pointwise_atoms_and_connectives() {
        let th = p("abs(theta) <= 0.05", &["theta", "omega"]);
        assert!((rho_pointwise(&th, &[0.02, 0.0]).unwrap() - 0.03).abs() < 1e-15);
        let both = p("abs(theta) <= 0.05 & abs(omega) <= 0.05", &["theta", "omega"]);
        assert!((rho_pointwise(&both, &[0.02, 0.06]).unwrap() + 0.01).abs() < 1e-15);
        let either = p("abs(x-5) <= 5 | abs(x-45) <= 5", &["x"]);
        assert_eq!(rho_pointwise(&either, &[5.0]).unwrap(), 5.0);
        assert_eq!(rho_pointwise(&Formula::not(either), &[5.0]).unwrap(), -5.0);
    }

    #[test]
    fn pointwise_rejects_temporal_and_short_states() {
        let g = p("G[0,2](x >= 0)", &["x"]);
        assert_eq!(
            rho_pointwise(&g, &[1.0]),
            Err(RobustnessError::TemporalInPointwise)
        );
        let a = p("y >= 0", &["x", "y"]);
        assert!(matches!(
            rho_pointwise(&a, &[1.0]),
            Err(RobustnessError::StateTooShort { .. })
        ));
    }

    // Traces whose single component is the atom robustness itself.
    fn values(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|x| vec![*x]).collect()
    }

    #[test]
    fn temporal_windows() {
        let tr = values(&[1.0, 2.0, 0.5]);
        assert_eq!(rho_trace(&p("G[0,2](x >= 0)", &["x"]), &tr, 0).unwrap(), 0.5);
        assert_eq!(rho_trace(&p("F[0,2](x >= 0)", &["x"]), &tr, 0).unwrap(), 2.0);
        let tr = values(&[-1.0, 3.0, 1.0, -2.0]);
        let fg = p("F[0,2] G[0,1](x >= 0)", &["x"]);
        assert_eq!(rho_trace(&fg, &tr, 0).unwrap(), 1.0);
    }

    #[test]
    fn trace_too_short() {
        let tr = values(&[1.0, 2.0]);
        assert!(matches!(
            rho_trace(&p("G[0,2](x >= 0)", &["x"]), &tr, 0),
            Err(RobustnessError::TraceTooShort { .. })
        ));
        let tr = values(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rho_trace(&p("G[0,2](x >= 0)", &["x"]), &tr, 1).unwrap(), 2.0);
        assert!(rho_trace(&p("G[0,2](x >= 0)", &["x"]), &tr, 2).is_err());
    }

    #[test]
    fn sliding_matches_naive() {
        let x = [3.0, -1.0, 4.0, 1.0, -5.0, 9.0, 2.0, 6.0];
        for a in 0..4 {
            for b in a..6 {
                let got = sliding(&x, a, b, Extremum::Max);
                let want: Vec<f64> = (0..x.len() - b)
                    .map(|t| x[t + a..=t + b].iter().cloned().fold(f64::MIN, f64::max))
                    .collect();
                assert_eq!(got, want, "a={a} b={b}");
            }
        }
    }

    #[test]
    fn bounds_of_pendulum_atom() {
        let th = p("abs(theta) <= 0.05", &["theta"]);
        let b = estimate_rho_bounds(&th, &[(-PI, PI)], 10001).unwrap();
        let spacing = 2.0 * PI / 10000.0;
        assert!((b.rho_max - 0.05).abs() <= spacing);
        assert!((b.rho_min - (0.05 - PI)).abs() <= spacing);
        assert!((b.span() - PI).abs() <= 2.0 * spacing);
    }

    #[test]
    fn bounds_of_constant_atom() {
        let one = p("1 >= 0", &["x"]);
        let b = estimate_rho_bounds(&one, &[(0.0, 3.0)], 5).unwrap();
        assert_eq!(b, RhoBounds::new(1.0, 1.0).unwrap());
    }

    #[test]
    fn bounds_errors() {
        let a = p("y >= 0", &["x", "y"]);
        assert!(matches!(
            estimate_rho_bounds(&a, &[(0.0, 1.0)], 3),
            Err(RobustnessError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            estimate_rho_bounds(&a, &[(0.0, 1.0), (2.0, 1.0)], 3),
            Err(RobustnessError::InvalidBox(_))
        ));
        assert_eq!(
            estimate_rho_bounds(&a, &[(0.0, 1.0), (0.0, 1.0)], 1),
            Err(RobustnessError::GridTooCoarse(1))
        );
    }

    #[test]
    fn annulus_robustness() {
        let psi = p(
            "norm2(x-5, y-5) >= 2 & norm2(x-5, y-5) <= 5",
            &["x", "y", "heading"],
        );
        for k in 0..16 {
            let a = k as f64 * PI / 8.0;
            let s = [5.0 + 3.5 * a.cos(), 5.0 + 3.5 * a.sin(), 0.0];
            assert!((rho_pointwise(&psi, &s).unwrap() - 1.5).abs() < 1e-12);
        }
    }
}
