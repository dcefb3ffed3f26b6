//! Time-dependent shaped reward.
//!
//! In funnel mode a segment scores `rho_psi(s) + gamma(t) - rho_max`, which is non-negative
//! exactly when the robustness sits above the funnel's lower bound. Several active segments
//! combine by taking the minimum of their rewards; a step with no active segment scores zero.
//! The no-funnel mode drops the `gamma(t) - rho_max` term and scores raw robustness.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::funnel::{FunnelError, FunnelSchedule};
use crate::robustness::{rho_pointwise, RobustnessError};
use crate::stl::{conjuncts, FragmentError, Formula};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("step {t} is beyond the horizon {horizon}")]
    BeyondHorizon { t: u32, horizon: u32 },
    #[error("no funnel segment is active at step {0}")]
    NoActiveSegment(u32),
    #[error("segment refers to sub-formula {0}, which does not exist")]
    InvalidPsiIndex(usize),
    #[error(transparent)]
    Robustness(#[from] RobustnessError),
    #[error(transparent)]
    Funnel(#[from] FunnelError),
    #[error(transparent)]
    Fragment(#[from] FragmentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    #[default]
    Funnel,
    /// Raw robustness of the active sub-formula, without the funnel term.
    NoFunnel,
}

/// Everything needed to score a state at a time step.
#[derive(Debug, Clone)]
pub struct RewardSpec {
    /// The full temporal formula the schedule was built from.
    pub formula: Formula,
    /// Non-temporal bodies of the temporal conjuncts, in written order.
    pub psis: Vec<Formula>,
    pub schedule: FunnelSchedule,
    pub mode: RewardMode,
}

/// Where a state sits relative to the lower funnel bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FunnelPosition {
    Inside,
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunnelCheck {
    pub position: FunnelPosition,
    /// Funnel-mode reward; negative below the bound.
    pub margin: f64,
    /// Segment whose reward is the minimum at this step.
    pub binding_segment: usize,
}

impl RewardSpec {
    pub fn new(formula: Formula, schedule: FunnelSchedule, mode: RewardMode) -> Result<Self, RewardError> {
        let psis: Vec<Formula> = conjuncts(&formula)?.into_iter().map(|c| c.psi).collect();
        if let Some(seg) = schedule.segments.iter().find(|s| s.psi_index >= psis.len()) {
            return Err(RewardError::InvalidPsiIndex(seg.psi_index));
        }
        Ok(RewardSpec {
            formula,
            psis,
            schedule,
            mode,
        })
    }

    pub fn horizon(&self) -> u32 {
        self.schedule.horizon
    }

    /// Robustness of each sub-formula at `s`.
    pub fn psi_robustness(&self, s: &[f64]) -> Result<Vec<f64>, RewardError> {
        self.psis
            .iter()
            .map(|p| rho_pointwise(p, s).map_err(RewardError::from))
            .collect()
    }

    /// Funnel-mode reward of a single segment, whether or not it is active at `t`.
    pub fn segment_reward(&self, segment: usize, s: &[f64], t: u32) -> Result<f64, RewardError> {
        let seg = &self.schedule.segments[segment];
        let rho = rho_pointwise(&self.psis[seg.psi_index], s)?;
        Ok(rho + seg.gamma_at(t)? - seg.params.rho_max)
    }

    fn check_t(&self, t: u32) -> Result<(), RewardError> {
        if t > self.horizon() {
            return Err(RewardError::BeyondHorizon {
                t,
                horizon: self.horizon(),
            });
        }
        Ok(())
    }

    /// Minimum funnel-mode reward over the segments active at `t`, with the segment attaining
    /// it. `None` when nothing is active.
    pub fn funnel_margin(&self, s: &[f64], t: u32) -> Result<Option<(f64, usize)>, RewardError> {
        self.check_t(t)?;
        let mut best: Option<(f64, usize)> = None;
        for &i in self.schedule.active_at(t) {
            let r = self.segment_reward(i, s, t)?;
            if best.map_or(true, |(b, _)| r < b) {
                best = Some((r, i));
            }
        }
        Ok(best)
    }

    pub fn reward(&self, s: &[f64], t: u32) -> Result<f64, RewardError> {
        match self.mode {
            RewardMode::Funnel => Ok(self.funnel_margin(s, t)?.map_or(0.0, |(r, _)| r)),
            RewardMode::NoFunnel => {
                self.check_t(t)?;
                let mut best: Option<f64> = None;
                for &i in self.schedule.active_at(t) {
                    let seg = &self.schedule.segments[i];
                    let rho = rho_pointwise(&self.psis[seg.psi_index], s)?;
                    best = Some(best.map_or(rho, |b: f64| b.min(rho)));
                }
                Ok(best.unwrap_or(0.0))
            }
        }
    }
}

/// Shaped reward at `(s, t)`.
pub fn reward(spec: &RewardSpec, s: &[f64], t: u32) -> Result<f64, RewardError> {
    spec.reward(s, t)
}

/// Classifies `s` against the funnel lower bound at `t`. A state exactly on the bound counts as
/// inside.
pub fn reward_sign_check(spec: &RewardSpec, s: &[f64], t: u32) -> Result<FunnelCheck, RewardError> {
    let (margin, binding_segment) = spec
        .funnel_margin(s, t)?
        .ok_or(RewardError::NoActiveSegment(t))?;
    Ok(FunnelCheck {
        position: if margin >= 0.0 {
            FunnelPosition::Inside
        } else {
            FunnelPosition::Below
        },
        margin,
        binding_segment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funnel::{FunnelParams, FunnelSegment};
    use crate::stl::{parse_formula, FragmentClass, TemporalKind};

    // Segments over a one-component state whose atom robustness is the state itself.
    fn spec_with(params: &[(FunnelParams, u32, u32)], mode: RewardMode) -> RewardSpec {
        let text = params
            .iter()
            .map(|(_, a, b)| format!("G[{a},{b}](x >= 0)"))
            .collect::<Vec<_>>()
            .join(" & ");
        let formula = parse_formula(&text, &["x"]).unwrap();
        let segments = params
            .iter()
            .enumerate()
            .map(|(i, (p, a, b))| FunnelSegment {
                t_begin: *a,
                active_from: *a,
                t_end: *b,
                params: *p,
                psi_index: i,
                op: TemporalKind::Always { a: *a, b: *b },
            })
            .collect();
        let horizon = params.iter().map(|p| p.2).max().unwrap() + 5;
        let schedule = FunnelSchedule::new(FragmentClass::OverlappingConjunction, horizon, segments);
        RewardSpec::new(formula, schedule, mode).unwrap()
    }

    fn params(gamma0: f64, rho_max: f64, t_star: u32) -> FunnelParams {
        FunnelParams::new(gamma0, 0.1, rho_max, t_star).unwrap()
    }

    #[test]
    fn reward_is_robustness_plus_gap() {
        // gamma = rho_max at closure; rho = 0.3
        let p = params(1.0, 0.5, 10);
        let spec = spec_with(&[(p, 0, 20)], RewardMode::Funnel);
        let r = reward(&spec, &[0.3], 10).unwrap();
        assert!((r - 0.3).abs() < 1e-12);
        let r = reward(&spec, &[0.0], 10).unwrap();
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn overlap_min_and_gaps() {
        // gamma(0) = gamma0: reward = rho + gamma0 - rho_max
        let a = params(1.0, 0.5, 5);
        let b = params(2.0, 0.5, 5);
        let spec = spec_with(&[(a, 0, 10), (b, 5, 15)], RewardMode::Funnel);
        // single segment 0 at t=0: x + 0.5
        assert!((reward(&spec, &[-0.3], 0).unwrap() - 0.2).abs() < 1e-12);
        // at t=5 seg0 has rho_max closure (0 + x), seg1 starts at gamma0 (x + 1.5)
        let r = reward(&spec, &[-0.1], 5).unwrap();
        assert!((r + 0.1).abs() < 1e-12);
        assert_eq!(reward(&spec, &[7.0], 17).unwrap(), 0.0);
        assert!(matches!(
            reward(&spec, &[0.0], 21),
            Err(RewardError::BeyondHorizon { .. })
        ));
    }

    #[test]
    fn sign_check_cases() {
        // Choose l so gamma(t) = 0.9 at t=1: gamma0 = 0.9 at t=0 gives the same thing.
        let p = FunnelParams::new(0.9, 0.05, 0.5, 3).unwrap();
        let spec = spec_with(&[(p, 0, 20)], RewardMode::Funnel);
        let c = reward_sign_check(&spec, &[-0.2], 0).unwrap();
        assert_eq!(c.position, FunnelPosition::Inside);
        assert!((c.margin - 0.2).abs() < 1e-12);
        let c = reward_sign_check(&spec, &[-0.4], 0).unwrap();
        assert_eq!(c.position, FunnelPosition::Inside);
        assert!(c.margin.abs() < 1e-12 && c.margin >= 0.0);

        let p = FunnelParams::new(0.6, 0.05, 0.5, 3).unwrap();
        let spec = spec_with(&[(p, 0, 20)], RewardMode::Funnel);
        let c = reward_sign_check(&spec, &[-1.0], 0).unwrap();
        assert_eq!(c.position, FunnelPosition::Below);
        assert!((c.margin + 0.9).abs() < 1e-12);
        assert_eq!(
            reward_sign_check(&spec, &[0.0], 22),
            Err(RewardError::NoActiveSegment(22))
        );
    }

    #[test]
    fn no_funnel_mode_scores_raw_robustness() {
        let a = params(1.0, 0.5, 5);
        let spec = spec_with(&[(a, 0, 10)], RewardMode::NoFunnel);
        assert_eq!(reward(&spec, &[-0.7], 0).unwrap(), -0.7);
        assert_eq!(reward(&spec, &[-0.7], 12).unwrap(), 0.0);
    }
}
