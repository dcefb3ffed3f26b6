//! Deterministic discrete-time simulators with finite action grids.
//!
//! * pendulum: `theta' = theta + tau*omega`,
//!   `omega' = omega + tau*((g/l) sin theta - mu/(m l^2) omega + a/(m l^2))`, with `theta = 0`
//!   upright and torque `a in {-3, -2.9, ..., 3}`;
//! * diffdrive: unicycle `(x, y, theta)` driven by `v in {-5, -4.5, ..., 5}` and
//!   `omega in {-3, -2.5, ..., 3}`;
//! * integrator: `x' = x + tau*v` with `v in {-3, -2.5, ..., 3}`.
//!
//! Headings are not wrapped. Episodes end only at the horizon.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::SimRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("action index {index} out of range for {count} actions")]
    InvalidAction { index: usize, count: usize },
    #[error("state has {got} components, expected {expected}")]
    StateDim { got: usize, expected: usize },
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Pendulum,
    Diffdrive,
    Integrator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumConstants {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub friction: f64,
}

impl Default for PendulumConstants {
    fn default() -> Self {
        PendulumConstants {
            gravity: 9.8,
            mass: 0.15,
            length: 0.5,
            friction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResetDistribution {
    Fixed { state: Vec<f64> },
    UniformBox { bounds: Vec<(f64, f64)> },
}

fn default_tau() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub kind: EnvKind,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub horizon: u32,
    /// Defaults depend on `kind`, see [`EnvConfig::default_reset`].
    #[serde(default)]
    pub reset: Option<ResetDistribution>,
    #[serde(default)]
    pub pendulum: PendulumConstants,
}

impl EnvConfig {
    pub fn new(kind: EnvKind, horizon: u32) -> Self {
        EnvConfig {
            kind,
            tau: default_tau(),
            horizon,
            reset: None,
            pendulum: PendulumConstants::default(),
        }
    }

    pub fn with_reset(mut self, reset: ResetDistribution) -> Self {
        self.reset = Some(reset);
        self
    }

    /// Hanging pendulum `(pi, 0)`, robot at the origin, integrator uniform on `[0, 50]`.
    pub fn default_reset(kind: EnvKind) -> ResetDistribution {
        match kind {
            EnvKind::Pendulum => ResetDistribution::Fixed {
                state: vec![std::f64::consts::PI, 0.0],
            },
            EnvKind::Diffdrive => ResetDistribution::Fixed {
                state: vec![0.0, 0.0, 0.0],
            },
            EnvKind::Integrator => ResetDistribution::UniformBox {
                bounds: vec![(0.0, 50.0)],
            },
        }
    }

    pub fn reset_distribution(&self) -> ResetDistribution {
        self.reset
            .clone()
            .unwrap_or_else(|| Self::default_reset(self.kind))
    }
}

/// One action dimension: values `(first + i) / divisor` for `i in 0..count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionAxis {
    pub name: String,
    pub unit: String,
    pub first: i64,
    pub count: usize,
    pub divisor: f64,
}

impl ActionAxis {
    fn new(name: &str, unit: &str, first: i64, count: usize, divisor: f64) -> Self {
        ActionAxis {
            name: name.into(),
            unit: unit.into(),
            first,
            count,
            divisor,
        }
    }

    pub fn value(&self, i: usize) -> f64 {
        (self.first + i as i64) as f64 / self.divisor
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.value(i)).collect()
    }
}

/// Cartesian product of action axes, flattened row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGrid {
    pub axes: Vec<ActionAxis>,
}

impl ActionGrid {
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tuple(&self, index: usize) -> Result<Vec<usize>, EnvError> {
        if index >= self.len() {
            return Err(EnvError::InvalidAction {
                index,
                count: self.len(),
            });
        }
        let mut rest = index;
        let mut out = vec![0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            out[k] = rest % axis.count;
            rest /= axis.count;
        }
        Ok(out)
    }

    pub fn index(&self, tuple: &[usize]) -> Option<usize> {
        if tuple.len() != self.axes.len() {
            return None;
        }
        let mut idx = 0;
        for (t, axis) in tuple.iter().zip(&self.axes) {
            if *t >= axis.count {
                return None;
            }
            idx = idx * axis.count + t;
        }
        Some(idx)
    }

    /// Physical action values for a flat index.
    pub fn values(&self, index: usize) -> Result<Vec<f64>, EnvError> {
        Ok(self
            .tuple(index)?
            .iter()
            .zip(&self.axes)
            .map(|(i, a)| a.value(*i))
            .collect())
    }

    /// Flat index of the grid point whose values are closest to `values`.
    pub fn nearest(&self, values: &[f64]) -> Option<usize> {
        if values.len() != self.axes.len() {
            return None;
        }
        let tuple: Vec<usize> = values
            .iter()
            .zip(&self.axes)
            .map(|(v, a)| {
                let i = (v * a.divisor).round() as i64 - a.first;
                i.clamp(0, a.count as i64 - 1) as usize
            })
            .collect();
        self.index(&tuple)
    }
}

/// Names, units and action grid of an environment, for run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSchema {
    pub kind: EnvKind,
    pub state_names: Vec<String>,
    pub state_units: Vec<String>,
    pub tau: f64,
    pub horizon: u32,
    pub actions: ActionGrid,
}

/// Interface shared by the simulators (and test doubles) that the trainer drives.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    fn horizon(&self) -> u32;
    fn reset(&self, rng: &mut SimRng) -> Vec<f64>;
    fn step(&self, s: &[f64], action: usize) -> Result<Vec<f64>, EnvError>;
}

pub fn pendulum_dynamics(c: &PendulumConstants, tau: f64, s: &[f64], torque: f64) -> Vec<f64> {
    let (theta, omega) = (s[0], s[1]);
    let inertia = c.mass * c.length * c.length;
    let accel = (c.gravity / c.length) * theta.sin() - (c.friction / inertia) * omega
        + torque / inertia;
    vec![theta + tau * omega, omega + tau * accel]
}

pub fn diffdrive_dynamics(tau: f64, s: &[f64], v: f64, omega: f64) -> Vec<f64> {
    let (x, y, heading) = (s[0], s[1], s[2]);
    vec![
        x + tau * v * heading.cos(),
        y + tau * v * heading.sin(),
        heading + tau * omega,
    ]
}

pub fn integrator_dynamics(tau: f64, s: &[f64], v: f64) -> Vec<f64> {
    vec![s[0] + tau * v]
}

/// One of the built-in simulators.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: EnvConfig,
    reset: ResetDistribution,
    grid: ActionGrid,
}

impl Simulator {
    pub fn new(cfg: EnvConfig) -> Result<Self, EnvError> {
        if !(cfg.tau > 0.0 && cfg.tau.is_finite()) {
            return Err(EnvError::InvalidConfig(format!("tau must be positive, got {}", cfg.tau)));
        }
        if cfg.horizon < 1 {
            return Err(EnvError::InvalidConfig("horizon must be at least 1".into()));
        }
        let dim = Self::dim_of(cfg.kind);
        let reset = cfg.reset_distribution();
        match &reset {
            ResetDistribution::Fixed { state } if state.len() != dim => {
                return Err(EnvError::InvalidConfig(format!(
                    "fixed reset has {} components, expected {dim}",
                    state.len()
                )))
            }
            ResetDistribution::UniformBox { bounds } => {
                if bounds.len() != dim {
                    return Err(EnvError::InvalidConfig(format!(
                        "reset box has {} axes, expected {dim}",
                        bounds.len()
                    )));
                }
                if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo <= hi && hi.is_finite() && lo.is_finite())) {
                    return Err(EnvError::InvalidConfig(format!("reset box axis [{lo}, {hi}] is empty")));
                }
            }
            _ => {}
        }
        let grid = match cfg.kind {
            EnvKind::Pendulum => ActionGrid {
                axes: vec![ActionAxis::new("torque", "N m", -30, 61, 10.0)],
            },
            EnvKind::Diffdrive => ActionGrid {
                axes: vec![
                    ActionAxis::new("v", "m/s", -10, 21, 2.0),
                    ActionAxis::new("omega", "rad/s", -6, 13, 2.0),
                ],
            },
            EnvKind::Integrator => ActionGrid {
                axes: vec![ActionAxis::new("v", "m/s", -6, 13, 2.0)],
            },
        };
        Ok(Simulator { cfg, reset, grid })
    }

    fn dim_of(kind: EnvKind) -> usize {
        match kind {
            EnvKind::Pendulum => 2,
            EnvKind::Diffdrive => 3,
            EnvKind::Integrator => 1,
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn actions(&self) -> &ActionGrid {
        &self.grid
    }

    pub fn state_names(&self) -> Vec<String> {
        let names: &[&str] = match self.cfg.kind {
            EnvKind::Pendulum => &["theta", "omega"],
            EnvKind::Diffdrive => &["x", "y", "theta"],
            EnvKind::Integrator => &["x"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn schema(&self) -> EnvSchema {
        let units: &[&str] = match self.cfg.kind {
            EnvKind::Pendulum => &["rad", "rad/s"],
            EnvKind::Diffdrive => &["m", "m", "rad"],
            EnvKind::Integrator => &["m"],
        };
        EnvSchema {
            kind: self.cfg.kind,
            state_names: self.state_names(),
            state_units: units.iter().map(|s| s.to_string()).collect(),
            tau: self.cfg.tau,
            horizon: self.cfg.horizon,
            actions: self.grid.clone(),
        }
    }

    /// Initial state for `seed`.
    pub fn reset_seeded(&self, seed: u64) -> Vec<f64> {
        use rand::SeedableRng;
        self.reset(&mut SimRng::seed_from_u64(seed))
    }
}

impl Environment for Simulator {
    fn state_dim(&self) -> usize {
        Self::dim_of(self.cfg.kind)
    }

    fn action_count(&self) -> usize {
        self.grid.len()
    }

    fn horizon(&self) -> u32 {
        self.cfg.horizon
    }

    fn reset(&self, rng: &mut SimRng) -> Vec<f64> {
        match &self.reset {
            ResetDistribution::Fixed { state } => state.clone(),
            ResetDistribution::UniformBox { bounds } => bounds
                .iter()
                .map(|&(lo, hi)| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
                .collect(),
        }
    }

    fn step(&self, s: &[f64], action: usize) -> Result<Vec<f64>, EnvError> {
        let dim = self.state_dim();
        if s.len() != dim {
            return Err(EnvError::StateDim {
                got: s.len(),
                expected: dim,
            });
        }
        let a = self.grid.values(action)?;
        let tau = self.cfg.tau;
        Ok(match self.cfg.kind {
            EnvKind::Pendulum => pendulum_dynamics(&self.cfg.pendulum, tau, s, a[0]),
            EnvKind::Diffdrive => diffdrive_dynamics(tau, s, a[0], a[1]),
            EnvKind::Integrator => integrator_dynamics(tau, s, a[0]),
        })
    }
}
