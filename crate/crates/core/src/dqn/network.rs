//! Time-aware action-value functions: the neural [`QNetwork`] and the tabular [`QTable`]
//! used for exact checks. Both expose the same [`QFunction`] interface to the trainer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{BatchCache, Mlp};
use super::replay::Transition;
use super::DqnError;

/// Anything the trainer can query and fit.
pub trait QFunction: Clone {
    fn action_count(&self) -> usize;

    /// One value per action at `(s, t)`.
    fn q_values(&self, s: &[f64], t: u32, horizon: u32) -> Result<Vec<f64>, DqnError>;

    /// Largest action value at each `(s_i, t_i)`.
    fn max_q_batch(&self, states: &[&[f64]], ts: &[u32], horizon: u32) -> Result<Vec<f64>, DqnError> {
        states
            .iter()
            .zip(ts)
            .map(|(s, &t)| {
                let q = self.q_values(s, t, horizon)?;
                Ok(q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            })
            .collect()
    }

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// `(1/M) sum (y_i - Q(s_i, a_i, t_i))^2` and its gradient, added into `grad`.
    fn loss_and_grad(
        &self,
        batch: &[&Transition],
        targets: &[f64],
        horizon: u32,
        grad: &mut [f64],
    ) -> Result<f64, DqnError>;
}

/// Affine rescaling `(s_i - offset_i) * scale_i` applied to state components before the
/// network sees them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub state_dim: usize,
    pub action_count: usize,
    #[serde(default)]
    pub input_norm: Option<InputNorm>,
    pub mlp: Mlp,
}

fn layer_sizes(state_dim: usize, hidden: &[usize], action_count: usize) -> Vec<usize> {
    let mut sizes = vec![state_dim + 1];
    sizes.extend_from_slice(hidden);
    sizes.push(action_count);
    sizes
}

impl QNetwork {
    pub fn random<R: Rng>(state_dim: usize, hidden: &[usize], action_count: usize, rng: &mut R) -> Self {
        QNetwork {
            state_dim,
            action_count,
            input_norm: None,
            mlp: Mlp::random(&layer_sizes(state_dim, hidden, action_count), rng),
        }
    }

    pub fn zeros(state_dim: usize, hidden: &[usize], action_count: usize) -> Self {
        QNetwork {
            state_dim,
            action_count,
            input_norm: None,
            mlp: Mlp::zeros(&layer_sizes(state_dim, hidden, action_count)),
        }
    }

    /// Wraps an existing network whose input width is `state_dim + 1`.
    pub fn from_mlp(state_dim: usize, mlp: Mlp) -> Result<Self, DqnError> {
        if mlp.input_dim() != state_dim + 1 {
            return Err(DqnError::DimensionMismatch {
                expected: state_dim + 1,
                got: mlp.input_dim(),
            });
        }
        Ok(QNetwork {
            state_dim,
            action_count: mlp.output_dim(),
            input_norm: None,
            mlp,
        })
    }

    pub fn with_input_norm(mut self, norm: Option<InputNorm>) -> Result<Self, DqnError> {
        if let Some(n) = &norm {
            for len in [n.offset.len(), n.scale.len()] {
                if len != self.state_dim {
                    return Err(DqnError::DimensionMismatch {
                        expected: self.state_dim,
                        got: len,
                    });
                }
            }
        }
        self.input_norm = norm;
        Ok(self)
    }

    /// State components (rescaled) followed by `t / horizon`.
    pub fn features(&self, s: &[f64], t: u32, horizon: u32) -> Result<Vec<f64>, DqnError> {
        if s.len() != self.state_dim {
            return Err(DqnError::DimensionMismatch {
                expected: self.state_dim,
                got: s.len(),
            });
        }
        if t > horizon || horizon == 0 {
            return Err(DqnError::TimeBeyondHorizon { t, horizon });
        }
        let mut x = Vec::with_capacity(self.state_dim + 1);
        match &self.input_norm {
            Some(n) => x.extend(s.iter().zip(n.offset.iter().zip(&n.scale)).map(|(v, (o, k))| (v - o) * k)),
            None => x.extend_from_slice(s),
        }
        x.push(t as f64 / horizon as f64);
        Ok(x)
    }

    pub fn all_finite(&self) -> bool {
        self.mlp.params().iter().all(|p| p.is_finite())
    }
}

/// Forward pass with the time feature appended.
pub fn q_forward(net: &QNetwork, s: &[f64], t: u32, horizon: u32) -> Result<Vec<f64>, DqnError> {
    Ok(net.mlp.forward(&net.features(s, t, horizon)?))
}

fn check_batch(batch: &[&Transition], targets: &[f64]) -> Result<(), DqnError> {
    if batch.is_empty() {
        return Err(DqnError::EmptyBatch);
    }
    if batch.len() != targets.len() {
        return Err(DqnError::DimensionMismatch {
            expected: batch.len(),
            got: targets.len(),
        });
    }
    Ok(())
}

impl QFunction for QNetwork {
    fn action_count(&self) -> usize {
        self.action_count
    }

    fn q_values(&self, s: &[f64], t: u32, horizon: u32) -> Result<Vec<f64>, DqnError> {
        q_forward(self, s, t, horizon)
    }

    fn max_q_batch(&self, states: &[&[f64]], ts: &[u32], horizon: u32) -> Result<Vec<f64>, DqnError> {
        let n = states.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut x = Vec::with_capacity(n * (self.state_dim + 1));
        for (s, &t) in states.iter().zip(ts) {
            x.extend(self.features(s, t, horizon)?);
        }
        let out = self.mlp.forward_batch(&x, n);
        Ok(out
            .chunks_exact(self.action_count)
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect())
    }

    fn params(&self) -> &[f64] {
        self.mlp.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.mlp.params_mut()
    }

    fn loss_and_grad(
        &self,
        batch: &[&Transition],
        targets: &[f64],
        horizon: u32,
        grad: &mut [f64],
    ) -> Result<f64, DqnError> {
        check_batch(batch, targets)?;
        let n = batch.len();
        let mut x = Vec::with_capacity(n * (self.state_dim + 1));
        let mut idx = Vec::with_capacity(n);
        for tr in batch {
            if tr.a >= self.action_count {
                return Err(DqnError::DimensionMismatch {
                    expected: self.action_count,
                    got: tr.a + 1,
                });
            }
            x.extend(self.features(&tr.s, tr.t, horizon)?);
            idx.push(tr.a);
        }
        let mut cache = BatchCache::default();
        let q = self.mlp.forward_batch_selected(&x, n, &idx, &mut cache);
        let m = n as f64;
        let mut loss = 0.0;
        let d: Vec<f64> = q
            .iter()
            .zip(targets)
            .map(|(q, y)| {
                let err = y - q;
                loss += err * err / m;
                -2.0 * err / m
            })
            .collect();
        self.mlp.backward_batch_selected(&cache, &idx, &d, grad);
        Ok(loss)
    }
}

/// Lookup table `Q[t][s][a]` over a finite state set; the state vector's first component is
/// the state index. Row `t = horizon` exists and stays zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: u32,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize, horizon: u32) -> Self {
        QTable {
            n_states,
            n_actions,
            horizon,
            values: vec![0.0; (horizon as usize + 1) * n_states * n_actions],
        }
    }

    fn slot(&self, s: &[f64], t: u32) -> Result<usize, DqnError> {
        if t > self.horizon {
            return Err(DqnError::TimeBeyondHorizon { t, horizon: self.horizon });
        }
        let idx = s.first().copied().unwrap_or(f64::NAN);
        if !(idx >= 0.0 && idx.fract() == 0.0 && (idx as usize) < self.n_states) {
            return Err(DqnError::DimensionMismatch {
                expected: self.n_states,
                got: idx as usize,
            });
        }
        Ok((t as usize * self.n_states + idx as usize) * self.n_actions)
    }

    pub fn get(&self, s: usize, a: usize, t: u32) -> f64 {
        self.values[(t as usize * self.n_states + s) * self.n_actions + a]
    }
}

impl QFunction for QTable {
    fn action_count(&self) -> usize {
        self.n_actions
    }

    fn q_values(&self, s: &[f64], t: u32, _horizon: u32) -> Result<Vec<f64>, DqnError> {
        let k = self.slot(s, t)?;
        Ok(self.values[k..k + self.n_actions].to_vec())
    }

    fn params(&self) -> &[f64] {
        &self.values
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn loss_and_grad(
        &self,
        batch: &[&Transition],
        targets: &[f64],
        _horizon: u32,
        grad: &mut [f64],
    ) -> Result<f64, DqnError> {
        check_batch(batch, targets)?;
        let m = batch.len() as f64;
        let mut loss = 0.0;
        for (tr, y) in batch.iter().zip(targets) {
            let k = self.slot(&tr.s, tr.t)? + tr.a;
            let err = y - self.values[k];
            loss += err * err / m;
            grad[k] += -2.0 * err / m;
        }
        Ok(loss)
    }
}
