//! Exponential funnels `gamma(t) = (gamma0 - gamma_inf) e^{-l t} + gamma_inf` and piecewise
//! funnel schedules for conjunctions of temporal operators.
//!
//! A funnel constrains the robustness of a non-temporal sub-formula from below by
//! `rho_max - gamma(t)`. The decay rate `l` is chosen so that this lower bound reaches zero at the
//! closure time `t*`, i.e. `gamma(t*) = rho_max`:
//!
//! ```text
//! l = ln((gamma0 - gamma_inf) / (rho_max - gamma_inf)) / t*
//! ```
//!
//! with `t* = a` for `G[a,b]`, `t* in [a,b]` for `F[a,b]` and `t* in [a+c2, c1+c2]` for
//! `F[a,c1] G[c2,b]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::robustness::RhoBounds;
use crate::stl::{classify_fragment, conjuncts, FragmentClass, FragmentError, Formula, TemporalKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FunnelError {
    #[error("closure time t* = 0 would require an instantly closed funnel; set a t* override or start the window later")]
    ZeroClosure,
    #[error("t* = {t_star} is outside the permitted range [{lo}, {hi}] for {op}")]
    TStarOutOfRange {
        t_star: u32,
        lo: u32,
        hi: u32,
        op: &'static str,
    },
    #[error("funnel needs gamma0 > rho_max > gamma_inf > 0, got gamma0 = {gamma0}, rho_max = {rho_max}, gamma_inf = {gamma_inf}")]
    LogArgument {
        gamma0: f64,
        gamma_inf: f64,
        rho_max: f64,
    },
    #[error("gamma_inf = {gamma_inf} for sub-formula {psi} must lie in (0, {limit})")]
    InvalidGammaInf { psi: usize, gamma_inf: f64, limit: f64 },
    #[error("sub-formula {psi} (`{text}`) has rho_max = {rho_max} <= 0; no state satisfies it robustly")]
    NonPositiveRhoMax { psi: usize, text: String, rho_max: f64 },
    #[error("no robustness bounds supplied for sub-formula {0}")]
    MissingBounds(usize),
    #[error("formula class {0:?} has no funnel schedule")]
    Unsupported(FragmentClass),
    #[error(transparent)]
    Fragment(#[from] FragmentError),
    #[error("horizon {horizon} ends before the last obligation at step {needed}")]
    HorizonTooShort { horizon: u32, needed: u32 },
    #[error("step {t} is outside segment [{begin}, {end}]")]
    OutsideSegment { t: u32, begin: u32, end: u32 },
    #[error("t* override {t_star} precedes the segment clock origin {origin}")]
    OverrideBeforeOrigin { t_star: u32, origin: u32 },
}

/// Parameters of one exponential funnel on a segment-local clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunnelParams {
    pub gamma0: f64,
    pub gamma_inf: f64,
    pub l: f64,
    pub rho_max: f64,
    /// Closure time on the segment-local clock.
    pub t_star: u32,
}

impl FunnelParams {
    /// Builds a funnel that closes at `t_star`, deriving `l`.
    pub fn new(gamma0: f64, gamma_inf: f64, rho_max: f64, t_star: u32) -> Result<Self, FunnelError> {
        let l = closure_rate(gamma0, gamma_inf, rho_max, t_star)?;
        Ok(FunnelParams {
            gamma0,
            gamma_inf,
            l,
            rho_max,
            t_star,
        })
    }

    /// Funnel width after `dt` steps on the local clock. Accepts any `dt >= 0`, including
    /// `f64::INFINITY`.
    pub fn gamma(&self, dt: f64) -> f64 {
        (self.gamma0 - self.gamma_inf) * (-self.l * dt).exp() + self.gamma_inf
    }

    /// Lower robustness bound `rho_max - gamma(dt)`.
    pub fn lower_bound(&self, dt: f64) -> f64 {
        self.rho_max - self.gamma(dt)
    }
}

fn closure_rate(gamma0: f64, gamma_inf: f64, rho_max: f64, t_star: u32) -> Result<f64, FunnelError> {
    if t_star == 0 {
        return Err(FunnelError::ZeroClosure);
    }
    let valid = gamma_inf > 0.0 && rho_max > gamma_inf && gamma0 > rho_max && gamma0.is_finite();
    if !valid {
        return Err(FunnelError::LogArgument {
            gamma0,
            gamma_inf,
            rho_max,
        });
    }
    Ok(((gamma0 - gamma_inf) / (rho_max - gamma_inf)).ln() / t_star as f64)
}

/// Closure time used when none is given: `a` for `G`, `b` for `F` (latest closure, widest
/// funnel) and `c1 + c2` for `F G`.
pub fn default_t_star(kind: &TemporalKind) -> u32 {
    match *kind {
        TemporalKind::Always { a, .. } => a,
        TemporalKind::Eventually { b, .. } => b,
        TemporalKind::EventuallyAlways { c1, c2, .. } => c1 + c2,
    }
}

/// Permitted closure times for each operator.
pub fn t_star_range(kind: &TemporalKind) -> (u32, u32) {
    match *kind {
        TemporalKind::Always { a, .. } => (a, a),
        TemporalKind::Eventually { a, b } => (a, b),
        TemporalKind::EventuallyAlways { a, c1, c2, .. } => (a + c2, c1 + c2),
    }
}

/// Range accepted for an explicit override. `G` additionally admits closure after `a`, up to
/// `b`, which relaxes the start of the obligation; this is the only way to fund `G[0,b]`.
fn override_range(kind: &TemporalKind) -> (u32, u32) {
    match *kind {
        TemporalKind::Always { a, b } => (a, b),
        _ => t_star_range(kind),
    }
}

/// Decay rate for the operator `kind` (bounds on the funnel's own clock).
pub fn synth_l(
    kind: &TemporalKind,
    gamma0: f64,
    gamma_inf: f64,
    rho_max: f64,
    t_star: Option<u32>,
) -> Result<f64, FunnelError> {
    let t_star = t_star.unwrap_or_else(|| default_t_star(kind));
    let (lo, hi) = t_star_range(kind);
    if t_star == 0 {
        return Err(FunnelError::ZeroClosure);
    }
    if t_star < lo || t_star > hi {
        return Err(FunnelError::TStarOutOfRange {
            t_star,
            lo,
            hi,
            op: kind.symbol(),
        });
    }
    closure_rate(gamma0, gamma_inf, rho_max, t_star)
}

/// One piece of a funnel schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelSegment {
    /// Clock origin: `gamma(t_begin) = gamma0`.
    pub t_begin: u32,
    /// First step at which the segment scores rewards.
    pub active_from: u32,
    /// Last step (inclusive).
    pub t_end: u32,
    pub params: FunnelParams,
    /// Index of the temporal conjunct (and its non-temporal body) this segment scores.
    pub psi_index: usize,
    /// The conjunct's operator with its original (absolute) bounds.
    pub op: TemporalKind,
}

impl FunnelSegment {
    pub fn is_active(&self, t: u32) -> bool {
        self.active_from <= t && t <= self.t_end
    }

    /// Absolute step at which the lower bound reaches zero.
    pub fn closure_step(&self) -> u32 {
        self.t_begin + self.params.t_star
    }

    /// `gamma(t)` on the segment clock; `t` must lie in `[t_begin, t_end]`.
    pub fn gamma_at(&self, t: u32) -> Result<f64, FunnelError> {
        if t < self.t_begin || t > self.t_end {
            return Err(FunnelError::OutsideSegment {
                t,
                begin: self.t_begin,
                end: self.t_end,
            });
        }
        Ok(self.params.gamma((t - self.t_begin) as f64))
    }

    pub fn lower_bound_at(&self, t: u32) -> Result<f64, FunnelError> {
        Ok(self.params.rho_max - self.gamma_at(t)?)
    }
}

/// `gamma(t)` of `seg` at absolute step `t`.
pub fn gamma_eval(seg: &FunnelSegment, t: u32) -> Result<f64, FunnelError> {
    seg.gamma_at(t)
}

/// Per-conjunct knobs for [`build_schedule`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentOverrides {
    pub gamma_inf: Option<f64>,
    /// Closure time as an absolute step.
    pub t_star: Option<u32>,
}

/// Ordered funnel segments plus an index of which segments are active at each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelSchedule {
    pub class: FragmentClass,
    pub horizon: u32,
    pub segments: Vec<FunnelSegment>,
    #[serde(skip)]
    active: Vec<Vec<usize>>,
}

impl FunnelSchedule {
    pub fn new(class: FragmentClass, horizon: u32, segments: Vec<FunnelSegment>) -> Self {
        let mut s = FunnelSchedule {
            class,
            horizon,
            segments,
            active: Vec::new(),
        };
        s.rebuild_index();
        s
    }

    fn rebuild_index(&mut self) {
        self.active = (0..=self.horizon)
            .map(|t| {
                self.segments
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.is_active(t))
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
    }

    /// Indices of segments active at `t` (empty beyond the horizon).
    pub fn active_at(&self, t: u32) -> &[usize] {
        self.active.get(t as usize).map_or(&[], Vec::as_slice)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let mut s: FunnelSchedule = serde_json::from_str(text)?;
        s.rebuild_index();
        Ok(s)
    }
}

fn segment_params(
    psi: usize,
    psi_formula: &Formula,
    bounds: &RhoBounds,
    overrides: &SegmentOverrides,
    local: &TemporalKind,
    origin: u32,
) -> Result<FunnelParams, FunnelError> {
    if bounds.rho_max <= 0.0 {
        return Err(FunnelError::NonPositiveRhoMax {
            psi,
            text: psi_formula.to_string(),
            rho_max: bounds.rho_max,
        });
    }
    let gamma0 = bounds.span();
    let limit = gamma0.min(bounds.rho_max);
    let gamma_inf = match overrides.gamma_inf {
        Some(g) if g > 0.0 && g < limit => g,
        Some(g) => {
            return Err(FunnelError::InvalidGammaInf {
                psi,
                gamma_inf: g,
                limit,
            })
        }
        None => limit / 100.0,
    };
    let t_star = match overrides.t_star {
        None => {
            let t = default_t_star(local);
            let (lo, hi) = t_star_range(local);
            if t == 0 {
                return Err(FunnelError::ZeroClosure);
            }
            debug_assert!(lo <= t && t <= hi);
            t
        }
        Some(abs) => {
            if abs < origin {
                return Err(FunnelError::OverrideBeforeOrigin { t_star: abs, origin });
            }
            let t = abs - origin;
            let (lo, hi) = override_range(local);
            if t == 0 {
                return Err(FunnelError::ZeroClosure);
            }
            if t < lo || t > hi {
                return Err(FunnelError::TStarOutOfRange {
                    t_star: abs,
                    lo: lo + origin,
                    hi: hi + origin,
                    op: local.symbol(),
                });
            }
            t
        }
    };
    FunnelParams::new(gamma0, gamma_inf, bounds.rho_max, t_star)
}

/// Builds the funnel schedule for `phi`.
///
/// `bounds[i]` and `overrides[i]` belong to the `i`-th temporal conjunct in written order
/// (missing overrides mean defaults). `gamma0` is `rho_max - rho_min`; `gamma_inf` defaults to
/// `min(gamma0, rho_max) / 100`.
///
/// Sequential conjunctions become consecutive segments over `[0, b_1]`, `(b_1, b_2]`, ... with
/// the clock restarting at each boundary; the last segment extends to `horizon`. Overlapping
/// conjunctions get one independent segment per conjunct over its own window, clocked from the
/// window start.
pub fn build_schedule(
    phi: &Formula,
    bounds: &[RhoBounds],
    overrides: &[SegmentOverrides],
    horizon: u32,
) -> Result<FunnelSchedule, FunnelError> {
    let class = classify_fragment(phi)?;
    if class == FragmentClass::NonTemporal {
        return Err(FunnelError::Unsupported(class));
    }
    let parts = conjuncts(phi)?;
    let needed = parts.iter().map(|c| c.window().hi).max().unwrap_or(0);
    if horizon < needed {
        return Err(FunnelError::HorizonTooShort { horizon, needed });
    }
    let no_override = SegmentOverrides::default();
    let lookup = |i: usize| -> Result<(&RhoBounds, &SegmentOverrides), FunnelError> {
        let b = bounds.get(i).ok_or(FunnelError::MissingBounds(i))?;
        Ok((b, overrides.get(i).unwrap_or(&no_override)))
    };

    let mut segments = Vec::with_capacity(parts.len());
    match class {
        FragmentClass::SingleTemporal | FragmentClass::SequentialConjunction => {
            let mut order: Vec<&_> = parts.iter().collect();
            order.sort_by_key(|c| (c.window().lo, c.window().hi));
            let mut origin = 0u32;
            for (k, c) in order.iter().enumerate() {
                let (b, ov) = lookup(c.index)?;
                let local = c.kind.shifted(origin);
                let params = segment_params(c.index, &c.psi, b, ov, &local, origin)?;
                let last = k + 1 == order.len();
                let end = if last { horizon } else { c.window().hi };
                segments.push(FunnelSegment {
                    t_begin: origin,
                    active_from: if k == 0 { 0 } else { origin + 1 },
                    t_end: end,
                    params,
                    psi_index: c.index,
                    op: c.kind,
                });
                origin = end;
            }
        }
        FragmentClass::OverlappingConjunction => {
            for c in &parts {
                let (b, ov) = lookup(c.index)?;
                let w = c.window();
                let local = c.kind.shifted(w.lo);
                let params = segment_params(c.index, &c.psi, b, ov, &local, w.lo)?;
                segments.push(FunnelSegment {
                    t_begin: w.lo,
                    active_from: w.lo,
                    t_end: w.hi,
                    params,
                    psi_index: c.index,
                    op: c.kind,
                });
            }
        }
        FragmentClass::NonTemporal => unreachable!(),
    }
    Ok(FunnelSchedule::new(class, horizon, segments))
}
