use std::io::Write;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::network::{InputNorm, QFunction, QNetwork};
use super::optim::{Optimizer, OptimizerConfig};
use super::replay::{ReplayBuffer, Transition};
use super::{epsilon_greedy, grad_step, td_target, Checkpoint, DqnError, EpsilonSchedule, RewardSource};
use crate::envs::Environment;
use crate::reward::RewardSpec;
use crate::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsilonConfig {
    pub start: f64,
    pub end: f64,
    /// Defaults to half of the training steps.
    pub decay_steps: Option<u64>,
}

impl Default for EpsilonConfig {
    fn default() -> Self {
        EpsilonConfig {
            start: 1.0,
            end: 0.05,
            decay_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub discount: f64,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub target_update: u64,
    pub eval_freq: u64,
    /// Greedy episodes per evaluation; zero disables evaluation.
    pub eval_episodes: usize,
    pub epsilon: EpsilonConfig,
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
    pub seed: u64,
    pub input_norm: Option<InputNorm>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 100_000,
            discount: 0.99,
            optimizer: OptimizerConfig::default(),
            batch_size: 64,
            target_update: 1000,
            eval_freq: 10_000,
            eval_episodes: 5,
            epsilon: EpsilonConfig::default(),
            hidden: vec![128, 128],
            replay_capacity: 100_000,
            seed: 0,
            input_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DqnError> {
        let bad = |m: String| Err(DqnError::Config(m));
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad(format!("discount must lie in (0, 1), got {}", self.discount));
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return bad(format!("optimizer.lr must be positive, got {}", self.optimizer.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.target_update == 0 {
            return bad("target_update must be positive".into());
        }
        if self.eval_freq == 0 {
            return bad("eval_freq must be positive".into());
        }
        if self.replay_capacity < self.batch_size {
            return bad(format!(
                "replay_capacity {} is smaller than batch_size {}",
                self.replay_capacity, self.batch_size
            ));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layer widths must be positive".into());
        }
        let e = &self.epsilon;
        if !((0.0..=1.0).contains(&e.start) && (0.0..=1.0).contains(&e.end)) {
            return bad(format!("epsilon bounds must lie in [0, 1], got {} and {}", e.start, e.end));
        }
        Ok(())
    }

    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon.start,
            end: self.epsilon.end,
            decay_steps: self.epsilon.decay_steps.unwrap_or(self.total_steps / 2),
        }
    }

    /// Fresh network for `env`, drawn from a stream separate from the training one.
    pub fn initial_network<E: Environment>(&self, env: &E) -> Result<QNetwork, DqnError> {
        let mut rng = SimRng::seed_from_u64(self.seed);
        rng.set_stream(u64::MAX);
        QNetwork::random(env.state_dim(), &self.hidden, env.action_count(), &mut rng)
            .with_input_norm(self.input_norm.clone())
    }
}

/// Summary of a batch of greedy evaluation episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: usize,
    pub satisfaction_rate: f64,
    pub min_robustness: f64,
    pub mean_robustness: f64,
}

/// One line of the training log, written at every evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub episode: u64,
    pub epsilon: f64,
    /// Mean loss over the updates since the previous row.
    pub loss: Option<f64>,
    pub eval_satisfaction_rate: Option<f64>,
    pub eval_min_robustness: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        if self.rows.is_empty() {
            out.write_record(["step", "episode", "epsilon", "loss", "eval_satisfaction_rate", "eval_min_robustness"])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self, csv::Error> {
        let rows = csv::Reader::from_reader(r).deserialize().collect::<Result<_, _>>()?;
        Ok(TrainLog { rows })
    }
}

/// Algorithm state, advanced one environment step at a time.
pub struct Trainer<'a, E: Environment, R: RewardSource, Q: QFunction> {
    env: &'a E,
    reward: &'a R,
    cfg: TrainConfig,
    schedule: EpsilonSchedule,
    online: Q,
    target: Q,
    opt: Optimizer,
    buffer: ReplayBuffer,
    rng: SimRng,
    s: Vec<f64>,
    t: u32,
    step: u64,
    episode: u64,
    loss_sum: f64,
    loss_count: u64,
    log: TrainLog,
}

/// Evaluation hook called at every evaluation point with the online Q-function.
pub type Evaluator<'e, Q> = dyn FnMut(&Q) -> Result<EvalStats, DqnError> + 'e;

impl<'a, E: Environment, R: RewardSource, Q: QFunction> Trainer<'a, E, R, Q> {
    pub fn new(env: &'a E, reward: &'a R, cfg: TrainConfig, q: Q) -> Result<Self, DqnError> {
        Self::start(env, reward, cfg, q, None, 0, 0)
    }

    /// Continues from a checkpointed network and optimizer at its recorded step. The replay
    /// buffer starts empty and the random stream is keyed by the resume step.
    pub fn resume(env: &'a E, reward: &'a R, cfg: TrainConfig, q: Q, opt: Optimizer, step: u64, episode: u64) -> Result<Self, DqnError> {
        Self::start(env, reward, cfg, q, Some(opt), step, episode)
    }

    fn start(
        env: &'a E,
        reward: &'a R,
        cfg: TrainConfig,
        q: Q,
        opt: Option<Optimizer>,
        step: u64,
        episode: u64,
    ) -> Result<Self, DqnError> {
        cfg.validate()?;
        if q.action_count() != env.action_count() {
            return Err(DqnError::Config(format!(
                "Q-function has {} actions, environment has {}",
                q.action_count(),
                env.action_count()
            )));
        }
        let opt = opt.unwrap_or_else(|| Optimizer::new(cfg.optimizer, q.params().len()));
        if opt.config.kind == super::OptimizerKind::Adam && opt.m.len() != q.params().len() {
            return Err(DqnError::Config("optimizer state does not match the network".into()));
        }
        let mut rng = SimRng::seed_from_u64(cfg.seed);
        rng.set_stream(step);
        let s = env.reset(&mut rng);
        Ok(Trainer {
            env,
            reward,
            schedule: cfg.epsilon_schedule(),
            target: q.clone(),
            online: q,
            opt,
            buffer: ReplayBuffer::new(cfg.replay_capacity),
            rng,
            s,
            t: 0,
            step,
            episode,
            loss_sum: 0.0,
            loss_count: 0,
            log: TrainLog::default(),
            cfg,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn online(&self) -> &Q {
        &self.online
    }

    pub fn target(&self) -> &Q {
        &self.target
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.opt
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.total_steps
    }

    /// One pass through the loop body: act, store, maybe evaluate, update, maybe sync.
    pub fn step(&mut self, mut eval: Option<&mut Evaluator<'_, Q>>) -> Result<(), DqnError> {
        let k = self.step;
        let horizon = self.env.horizon();
        let eps = self.schedule.at(k);
        let q = self.online.q_values(&self.s, self.t, horizon)?;
        let a = epsilon_greedy(&q, eps, &mut self.rng)?;
        let s_next = self.env.step(&self.s, a)?;
        if s_next.iter().any(|v| !v.is_finite()) {
            return Err(DqnError::Diverged {
                step: k,
                what: format!("state {s_next:?} after action {a}"),
            });
        }
        let r = self.reward.reward(&self.s, self.t)?;
        if !r.is_finite() {
            return Err(DqnError::Diverged {
                step: k,
                what: format!("reward {r} at t={}", self.t),
            });
        }
        let terminal = self.t + 1 == horizon;
        self.buffer.push(Transition {
            s: std::mem::take(&mut self.s),
            a,
            r,
            s_next: s_next.clone(),
            t: self.t,
            terminal,
        });

        if k % self.cfg.eval_freq == 0 {
            let stats = match eval.as_mut() {
                Some(f) if self.cfg.eval_episodes > 0 => Some(f(&self.online)?),
                _ => None,
            };
            self.log.rows.push(LogRow {
                step: k,
                episode: self.episode,
                epsilon: eps,
                loss: (self.loss_count > 0).then(|| self.loss_sum / self.loss_count as f64),
                eval_satisfaction_rate: stats.map(|s| s.satisfaction_rate),
                eval_min_robustness: stats.map(|s| s.min_robustness),
            });
            self.loss_sum = 0.0;
            self.loss_count = 0;
        }

        if self.buffer.len() >= self.cfg.batch_size {
            let batch = self.buffer.sample(self.cfg.batch_size, &mut self.rng);
            let y = td_target(&batch, &self.target, self.cfg.discount, horizon)?;
            let loss = grad_step(&mut self.online, &mut self.opt, &batch, &y, horizon)?;
            self.loss_sum += loss;
            self.loss_count += 1;
        }

        if k % self.cfg.target_update == 0 {
            self.target = self.online.clone();
        }

        self.step += 1;
        if terminal {
            self.s = self.env.reset(&mut self.rng);
            self.t = 0;
            self.episode += 1;
        } else {
            self.s = s_next;
            self.t += 1;
        }
        Ok(())
    }

    pub fn run(&mut self, mut eval: Option<&mut Evaluator<'_, Q>>) -> Result<(), DqnError> {
        while !self.is_done() {
            self.step(eval.as_deref_mut())?;
        }
        Ok(())
    }

    pub fn finish(self) -> (Q, Optimizer, TrainLog, u64, u64) {
        (self.online, self.opt, self.log, self.step, self.episode)
    }
}

/// Network, optimizer state and log at the end of a run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: QNetwork,
    pub optimizer: Optimizer,
    pub log: TrainLog,
    pub steps: u64,
    pub episodes: u64,
}

impl TrainOutcome {
    pub fn checkpoint(&self, config_digest: String) -> Checkpoint {
        Checkpoint::new(config_digest, self.steps, self.episodes, self.network.clone(), self.optimizer.clone())
    }
}

/// Trains a fresh network on `env` with the shaped reward of `spec`, evaluating greedily
/// against the spec's formula every `eval_freq` steps.
pub fn train<E: Environment>(env: &E, spec: &RewardSpec, cfg: &TrainConfig) -> Result<TrainOutcome, DqnError> {
    let net = cfg.initial_network(env)?;
    continue_training(env, spec, cfg, net, None, 0, 0)
}

/// Like [`train`], starting from the given network and optimizer at `step`.
pub fn continue_training<E: Environment>(
    env: &E,
    spec: &RewardSpec,
    cfg: &TrainConfig,
    net: QNetwork,
    opt: Option<Optimizer>,
    step: u64,
    episode: u64,
) -> Result<TrainOutcome, DqnError> {
    if env.horizon() != spec.horizon() {
        return Err(DqnError::Config(format!(
            "environment horizon {} differs from the reward schedule horizon {}",
            env.horizon(),
            spec.horizon()
        )));
    }
    let mut trainer = match opt {
        Some(opt) => Trainer::resume(env, spec, cfg.clone(), net, opt, step, episode)?,
        None => Trainer::new(env, spec, cfg.clone(), net)?,
    };
    let episodes = cfg.eval_episodes;
    let mut eval = |q: &QNetwork| -> Result<EvalStats, DqnError> {
        crate::evalmon::evaluate_greedy(q, env, spec, episodes, crate::evalmon::EVAL_SEED_BASE)
    };
    trainer.run(Some(&mut eval))?;
    let (network, optimizer, log, steps, episodes) = trainer.finish();
    if !network.all_finite() {
        return Err(DqnError::Diverged {
            step: steps,
            what: "network parameters".into(),
        });
    }
    Ok(TrainOutcome {
        network,
        optimizer,
        log,
        steps,
        episodes,
    })
}
