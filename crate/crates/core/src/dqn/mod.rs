//! Time-aware deep Q-learning.
//!
//! The Q-function takes the episode step as an extra input (`t / horizon`), so the learned
//! greedy policy may differ between identical states visited at different times. Rewards come
//! from a [`RewardSource`], usually a [`RewardSpec`](crate::reward::RewardSpec).

mod checkpoint;
pub mod mlp;
mod network;
mod optim;
mod replay;
mod train;

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::envs::EnvError;
use crate::reward::{RewardError, RewardSpec};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use mlp::Mlp;
pub use network::{q_forward, InputNorm, QFunction, QNetwork, QTable};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use replay::{ReplayBuffer, Transition};
pub use train::{
    continue_training, train, EpsilonConfig, Evaluator, EvalStats, LogRow, TrainConfig, TrainLog, TrainOutcome, Trainer,
};

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("step {t} is beyond the horizon {horizon}")]
    TimeBeyondHorizon { t: u32, horizon: u32 },
    #[error("empty Q-vector")]
    EmptyQ,
    #[error("empty batch")]
    EmptyBatch,
    #[error("epsilon {0} is outside [0, 1]")]
    InvalidEpsilon(f64),
    #[error("non-terminal record at step {t} cannot bootstrap beyond the horizon {horizon}")]
    BootstrapBeyondHorizon { t: u32, horizon: u32 },
    #[error("non-finite loss on batch {digest}")]
    NonFiniteLoss { digest: String },
    #[error("non-finite value at training step {step}: {what}")]
    Diverged { step: u64, what: String },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint does not fit this run: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// Step reward `r(s_t, t)` fed to the trainer.
pub trait RewardSource {
    fn reward(&self, s: &[f64], t: u32) -> Result<f64, RewardError>;
}

impl RewardSource for RewardSpec {
    fn reward(&self, s: &[f64], t: u32) -> Result<f64, RewardError> {
        RewardSpec::reward(self, s, t)
    }
}

impl<F: Fn(&[f64], u32) -> f64> RewardSource for F {
    fn reward(&self, s: &[f64], t: u32) -> Result<f64, RewardError> {
        Ok(self(s, t))
    }
}

/// Index of the largest value, lowest index on ties. NaN never wins.
pub fn argmax(q: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in q.iter().enumerate() {
        match best {
            None if !v.is_nan() => best = Some(i),
            Some(b) if *v > q[b] => best = Some(i),
            _ => {}
        }
    }
    best.or(if q.is_empty() { None } else { Some(0) })
}

/// With probability `eps` a uniformly random action, otherwise the greedy one. The greedy
/// action therefore has probability `1 - eps + eps/|A|`.
pub fn epsilon_greedy<R: Rng>(q: &[f64], eps: f64, rng: &mut R) -> Result<usize, DqnError> {
    if q.is_empty() {
        return Err(DqnError::EmptyQ);
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(DqnError::InvalidEpsilon(eps));
    }
    let u: f64 = rng.gen();
    if u < eps {
        Ok(rng.gen_range(0..q.len()))
    } else {
        Ok(argmax(q).unwrap())
    }
}

/// Linear decay from `start` to `end` over `decay_steps`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn at(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// `y_i = r_i + discount * max_a Q_target(s'_i, a, t_i + 1)`, or `r_i` on terminal records.
pub fn td_target<Q: QFunction>(
    batch: &[&Transition],
    target: &Q,
    discount: f64,
    horizon: u32,
) -> Result<Vec<f64>, DqnError> {
    if batch.is_empty() {
        return Err(DqnError::EmptyBatch);
    }
    let mut boot = Vec::new();
    for (i, tr) in batch.iter().enumerate() {
        if !tr.terminal {
            if tr.t + 1 > horizon {
                return Err(DqnError::BootstrapBeyondHorizon { t: tr.t, horizon });
            }
            boot.push(i);
        }
    }
    let states: Vec<&[f64]> = boot.iter().map(|&i| batch[i].s_next.as_slice()).collect();
    let ts: Vec<u32> = boot.iter().map(|&i| batch[i].t + 1).collect();
    let best = target.max_q_batch(&states, &ts, horizon)?;
    let mut y: Vec<f64> = batch.iter().map(|tr| tr.r).collect();
    for (&i, q) in boot.iter().zip(best) {
        y[i] += discount * q;
    }
    Ok(y)
}

/// Short hash of a batch, used to identify it in divergence reports.
pub fn batch_digest(batch: &[&Transition]) -> String {
    let mut h = Sha256::new();
    for tr in batch {
        for v in tr.s.iter().chain(&tr.s_next).chain(std::iter::once(&tr.r)) {
            h.update(v.to_le_bytes());
        }
        h.update((tr.a as u64).to_le_bytes());
        h.update(tr.t.to_le_bytes());
        h.update([tr.terminal as u8]);
    }
    hex::encode(&h.finalize()[..8])
}

/// One optimizer update on the mean squared TD error. Returns the loss before the update.
pub fn grad_step<Q: QFunction>(
    q: &mut Q,
    opt: &mut Optimizer,
    batch: &[&Transition],
    targets: &[f64],
    horizon: u32,
) -> Result<f64, DqnError> {
    let mut grad = vec![0.0; q.params().len()];
    let loss = q.loss_and_grad(batch, targets, horizon, &mut grad)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(DqnError::NonFiniteLoss {
            digest: batch_digest(batch),
        });
    }
    opt.apply(q.params_mut(), &grad);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tr(r: f64, terminal: bool, t: u32) -> Transition {
        Transition {
            s: vec![0.0],
            a: 0,
            r,
            s_next: vec![0.0],
            t,
            terminal,
        }
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(&[f64::NAN, 2.0]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn epsilon_zero_is_greedy() {
        let mut rng = crate::SimRng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(epsilon_greedy(&[0.0, 5.0, 1.0], 0.0, &mut rng).unwrap(), 1);
        }
        assert!(matches!(epsilon_greedy(&[], 0.1, &mut rng), Err(DqnError::EmptyQ)));
        assert!(epsilon_greedy(&[1.0], 1.5, &mut rng).is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let e = EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay_steps: 100,
        };
        assert_eq!(e.at(0), 1.0);
        assert!((e.at(50) - 0.525).abs() < 1e-12);
        assert_eq!(e.at(100), 0.05);
        assert_eq!(e.at(10_000), 0.05);
    }

    #[test]
    fn td_target_arithmetic() {
        // one-state table with max Q' = 2 at t=1
        let mut table = QTable::zeros(1, 2, 3);
        table.values[2 + 1] = 2.0;
        let b = [tr(1.0, false, 0)];
        let refs: Vec<&Transition> = b.iter().collect();
        let y = td_target(&refs, &table, 0.9, 3).unwrap();
        assert!((y[0] - 2.8).abs() < 1e-12);

        let b = [tr(1.0, true, 2)];
        let refs: Vec<&Transition> = b.iter().collect();
        assert_eq!(td_target(&refs, &table, 0.9, 3).unwrap(), vec![1.0]);

        let mut table = QTable::zeros(1, 1, 3);
        table.values[1] = 1.0;
        let b = [tr(-0.5, false, 0)];
        let refs: Vec<&Transition> = b.iter().collect();
        let y = td_target(&refs, &table, 0.99, 3).unwrap();
        assert!((y[0] - 0.49).abs() < 1e-12);

        let b = [tr(0.0, false, 3)];
        let refs: Vec<&Transition> = b.iter().collect();
        assert!(matches!(
            td_target(&refs, &table, 0.99, 3),
            Err(DqnError::BootstrapBeyondHorizon { .. })
        ));
        assert!(matches!(td_target(&[], &table, 0.99, 3), Err(DqnError::EmptyBatch)));
    }

    #[test]
    fn grad_step_single_linear_parameter() {
        // Q = w * x with the time weight and bias pinned at zero; the LMS step is
        // w' = w + lr * 2 (y - w x) x.
        let mlp = Mlp::from_params(&[2, 1], vec![0.5, 0.0, 0.0]).unwrap();
        let mut net = QNetwork::from_mlp(1, mlp).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1), 3);
        let sample = Transition {
            s: vec![2.0],
            a: 0,
            r: 0.0,
            s_next: vec![2.0],
            t: 0,
            terminal: true,
        };
        let loss = grad_step(&mut net, &mut opt, &[&sample], &[3.0], 10).unwrap();
        assert!((loss - 4.0).abs() < 1e-12);
        let w = net.mlp.params()[0];
        assert!((w - (0.5 + 0.1 * 2.0 * 2.0 * 2.0)).abs() < 1e-12);
        // time input is 0, so its weight sees no gradient; the bias does
        assert_eq!(net.mlp.params()[1], 0.0);
        assert!((net.mlp.params()[2] - 0.1 * 2.0 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn grad_step_zero_error_keeps_params() {
        let mut rng = crate::SimRng::seed_from_u64(2);
        let mut net = QNetwork::random(2, &[5], 3, &mut rng);
        let before = net.clone();
        let sample = Transition {
            s: vec![0.1, 0.2],
            a: 1,
            r: 0.0,
            s_next: vec![0.0, 0.0],
            t: 1,
            terminal: false,
        };
        let y = q_forward(&net, &sample.s, 1, 4).unwrap()[1];
        let mut opt = Optimizer::new(OptimizerConfig::default(), net.mlp.params().len());
        grad_step(&mut net, &mut opt, &[&sample], &[y], 4).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn non_finite_loss_reports_digest() {
        let mut net = QNetwork::zeros(1, &[2], 2);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1), net.mlp.params().len());
        let sample = tr(0.0, true, 0);
        match grad_step(&mut net, &mut opt, &[&sample], &[f64::INFINITY], 4) {
            Err(DqnError::NonFiniteLoss { digest }) => assert_eq!(digest.len(), 16),
            other => panic!("unexpected {other:?}"),
        }
    }
}
