//! Offline evaluation: rollouts, satisfaction checks against the original formula, and CSV
//! export of trajectories and funnels.
//!
//! Trajectory CSV columns, in order:
//! `t, <state names...>, action, reward, rho_psi_0 ..., gamma_lower, margin, satisfied_so_far`.
//! The last row holds the final state and leaves `action` and `reward` empty; `gamma_lower`
//! and `margin` are empty at steps with no active segment. Numbers are written with 17
//! significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dqn::{argmax, epsilon_greedy, DqnError, EvalStats, QFunction};
use crate::envs::{EnvError, Environment};
use crate::funnel::FunnelSchedule;
use crate::reward::{RewardError, RewardSpec};
use crate::robustness::{rho_pointwise, rho_trace, RobustnessError};
use crate::stl::{conjuncts, Formula, TemporalKind};
use crate::SimRng;

/// Seed of the first evaluation episode; episode `i` uses `EVAL_SEED_BASE + i`.
pub const EVAL_SEED_BASE: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("state became non-finite at step {t}: {state:?}")]
    Diverged { t: u32, state: Vec<f64> },
    #[error("trajectory has {len} states but the formula needs {needed}")]
    TraceTooShort { len: usize, needed: usize },
    #[error("rollout length {steps} exceeds the reward horizon {horizon}")]
    HorizonMismatch { steps: u32, horizon: u32 },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: malformed trajectory CSV: {message}")]
    Format { path: String, message: String },
    #[error("no episodes to summarize")]
    NoEpisodes,
    #[error(transparent)]
    Dqn(#[from] DqnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Robustness(#[from] RobustnessError),
}

impl From<EvalError> for DqnError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Dqn(d) => d,
            EvalError::Env(e) => DqnError::Env(e),
            EvalError::Reward(r) => DqnError::Reward(r),
            other => DqnError::Diverged {
                step: 0,
                what: format!("evaluation: {other}"),
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub seed: Option<u64>,
    pub config_digest: Option<String>,
    pub spec: Option<String>,
    pub state_names: Vec<String>,
}

/// States `s_0 ..= s_T`, actions and rewards `0 .. T`, and per-state monitor columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Robustness of each conjunct body, one row per state.
    pub rho_psi: Vec<Vec<f64>>,
    /// Lower bound `rho_max - gamma(t)` of the binding segment.
    pub gamma_lower: Vec<Option<f64>>,
    pub margin: Vec<Option<f64>>,
    /// Margin has been non-negative at every step so far where a segment was active.
    pub satisfied_so_far: Vec<bool>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.actions.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RolloutPolicy {
    Greedy,
    EpsilonGreedy(f64),
}

/// Monitor columns for state `s` at `t`.
fn monitor_row(spec: &RewardSpec, s: &[f64], t: u32) -> Result<(Vec<f64>, Option<f64>, Option<f64>), EvalError> {
    let rho = spec.psi_robustness(s)?;
    let (lower, margin) = match spec.funnel_margin(s, t)? {
        Some((m, seg)) => (
            Some(spec.schedule.segments[seg].lower_bound_at(t).map_err(RewardError::from)?),
            Some(m),
        ),
        None => (None, None),
    };
    Ok((rho, lower, margin))
}

/// Runs `steps` actions from the reset drawn with `seed`.
pub fn rollout_steps<Q: QFunction, E: Environment>(
    q: &Q,
    env: &E,
    spec: &RewardSpec,
    seed: u64,
    policy: RolloutPolicy,
    steps: u32,
) -> Result<Trajectory, EvalError> {
    if steps > spec.horizon() {
        return Err(EvalError::HorizonMismatch {
            steps,
            horizon: spec.horizon(),
        });
    }
    let horizon = env.horizon();
    let mut rng = SimRng::seed_from_u64(seed);
    let mut s = env.reset(&mut rng);
    let mut traj = Trajectory {
        states: Vec::with_capacity(steps as usize + 1),
        actions: Vec::with_capacity(steps as usize),
        rewards: Vec::with_capacity(steps as usize),
        rho_psi: Vec::new(),
        gamma_lower: Vec::new(),
        margin: Vec::new(),
        satisfied_so_far: Vec::new(),
        meta: TrajectoryMeta {
            seed: Some(seed),
            spec: Some(spec.formula.to_string()),
            ..Default::default()
        },
    };
    let mut ok = true;
    for t in 0..=steps {
        let (rho, lower, margin) = monitor_row(spec, &s, t)?;
        ok &= margin.map_or(true, |m| m >= 0.0);
        traj.rho_psi.push(rho);
        traj.gamma_lower.push(lower);
        traj.margin.push(margin);
        traj.satisfied_so_far.push(ok);
        if t == steps {
            traj.states.push(s);
            break;
        }
        let qv = q.q_values(&s, t, horizon)?;
        let a = match policy {
            RolloutPolicy::Greedy => argmax(&qv).ok_or(DqnError::EmptyQ)?,
            RolloutPolicy::EpsilonGreedy(eps) => epsilon_greedy(&qv, eps, &mut rng)?,
        };
        let next = env.step(&s, a)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::Diverged { t: t + 1, state: next });
        }
        traj.rewards.push(spec.reward(&s, t)?);
        traj.actions.push(a);
        traj.states.push(std::mem::replace(&mut s, next));
    }
    Ok(traj)
}

/// Full-horizon rollout.
pub fn rollout<Q: QFunction, E: Environment>(
    q: &Q,
    env: &E,
    spec: &RewardSpec,
    seed: u64,
    policy: RolloutPolicy,
) -> Result<Trajectory, EvalError> {
    rollout_steps(q, env, spec, seed, policy, env.horizon())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionReport {
    /// `rho(phi, trace, 0) >= 0`.
    pub satisfied: bool,
    pub robustness: f64,
    /// Per conjunct: minimum of the body's robustness over a `G` window, maximum over an `F`
    /// window, the conjunct's own robustness for `F G`; then the minimum over conjuncts.
    pub obligation_robustness: f64,
}

/// Robustness restricted to the obligation windows of each conjunct.
pub fn obligation_robustness<S: AsRef<[f64]>>(phi: &Formula, states: &[S]) -> Result<f64, EvalError> {
    let needed = phi.horizon() as usize + 1;
    if states.len() < needed {
        return Err(EvalError::TraceTooShort {
            len: states.len(),
            needed,
        });
    }
    if !phi.is_temporal() {
        return Ok(rho_pointwise(phi, states[0].as_ref())?);
    }
    let parts = conjuncts(phi).map_err(RewardError::from)?;
    let mut worst = f64::INFINITY;
    for c in parts {
        let window = |a: u32, b: u32| -> Result<Vec<f64>, EvalError> {
            states[a as usize..=b as usize]
                .iter()
                .map(|s| rho_pointwise(&c.psi, s.as_ref()).map_err(EvalError::from))
                .collect()
        };
        let v = match c.kind {
            TemporalKind::Always { a, b } => window(a, b)?.into_iter().fold(f64::INFINITY, f64::min),
            TemporalKind::Eventually { a, b } => window(a, b)?.into_iter().fold(f64::NEG_INFINITY, f64::max),
            TemporalKind::EventuallyAlways { .. } => rho_trace(&c.formula(), states, 0)?,
        };
        worst = worst.min(v);
    }
    Ok(worst)
}

pub fn check_satisfaction(phi: &Formula, traj: &Trajectory) -> Result<SatisfactionReport, EvalError> {
    let needed = phi.horizon() as usize + 1;
    if traj.states.len() < needed {
        return Err(EvalError::TraceTooShort {
            len: traj.states.len(),
            needed,
        });
    }
    let robustness = rho_trace(phi, &traj.states, 0)?;
    Ok(SatisfactionReport {
        satisfied: robustness >= 0.0,
        robustness,
        obligation_robustness: obligation_robustness(phi, &traj.states)?,
    })
}

/// Whether the funnel margins alone certify satisfaction: for every `G` segment the segment's
/// own reward is non-negative at every step of `[a, b]`, and for every `F` segment it is
/// non-negative at some step of `[a, b]`; in both cases only steps whose lower bound is already
/// non-negative count. `None` when the schedule has an `F G` segment.
pub fn funnel_certifies(spec: &RewardSpec, traj: &Trajectory) -> Result<Option<bool>, EvalError> {
    for (i, seg) in spec.schedule.segments.iter().enumerate() {
        let (a, b, always) = match seg.op {
            TemporalKind::Always { a, b } => (a, b, true),
            TemporalKind::Eventually { a, b } => (a, b, false),
            TemporalKind::EventuallyAlways { .. } => return Ok(None),
        };
        if b as usize >= traj.states.len() {
            return Err(EvalError::TraceTooShort {
                len: traj.states.len(),
                needed: b as usize + 1,
            });
        }
        let mut good = (a..=b).map(|t| -> Result<bool, EvalError> {
            if t < seg.t_begin || t > seg.t_end {
                return Ok(false);
            }
            let lower = seg.lower_bound_at(t).map_err(RewardError::from)?;
            Ok(lower >= 0.0 && spec.segment_reward(i, &traj.states[t as usize], t)? >= 0.0)
        });
        let ok = if always {
            good.try_fold(true, |acc, g| g.map(|g| acc && g))?
        } else {
            good.try_fold(false, |acc, g| g.map(|g| acc || g))?
        };
        if !ok {
            return Ok(Some(false));
        }
    }
    Ok(Some(true))
}

/// Greedy episodes with seeds `seed_base, seed_base + 1, ...`, checked against the spec's
/// formula.
pub fn evaluate_greedy<Q: QFunction, E: Environment>(
    q: &Q,
    env: &E,
    spec: &RewardSpec,
    episodes: usize,
    seed_base: u64,
) -> Result<EvalStats, DqnError> {
    let reports = (0..episodes)
        .map(|i| -> Result<SatisfactionReport, EvalError> {
            let traj = rollout(q, env, spec, seed_base + i as u64, RolloutPolicy::Greedy)?;
            check_satisfaction(&spec.formula, &traj)
        })
        .collect::<Result<Vec<_>, _>>()?;
    summarize(&reports).map_err(DqnError::from)
}

pub fn summarize(reports: &[SatisfactionReport]) -> Result<EvalStats, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoEpisodes);
    }
    let n = reports.len() as f64;
    Ok(EvalStats {
        episodes: reports.len(),
        satisfaction_rate: reports.iter().filter(|r| r.satisfied).count() as f64 / n,
        min_robustness: reports.iter().map(|r| r.robustness).fold(f64::INFINITY, f64::min),
        mean_robustness: reports.iter().map(|r| r.robustness).sum::<f64>() / n,
    })
}

fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EvalError {
    EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Column names for a trajectory with the given state names and number of conjuncts.
pub fn trajectory_header(state_names: &[String], n_psi: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(state_names.iter().cloned());
    h.push("action".into());
    h.push("reward".into());
    h.extend((0..n_psi).map(|i| format!("rho_psi_{i}")));
    h.extend(["gamma_lower", "margin", "satisfied_so_far"].map(String::from));
    h
}

fn state_names_of(traj: &Trajectory) -> Vec<String> {
    if traj.meta.state_names.len() == traj.states.first().map_or(0, Vec::len) {
        traj.meta.state_names.clone()
    } else {
        (0..traj.states.first().map_or(0, Vec::len)).map(|i| format!("s{i}")).collect()
    }
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, w: W) -> Result<(), csv::Error> {
    let names = state_names_of(traj);
    let n_psi = traj.rho_psi.first().map_or(0, Vec::len);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(trajectory_header(&names, n_psi))?;
    for (t, s) in traj.states.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(s.iter().map(|v| fmt_num(*v)));
        rec.push(traj.actions.get(t).map(usize::to_string).unwrap_or_default());
        rec.push(opt_num(traj.rewards.get(t).copied()));
        rec.extend(traj.rho_psi[t].iter().map(|v| fmt_num(*v)));
        rec.push(opt_num(traj.gamma_lower[t]));
        rec.push(opt_num(traj.margin[t]));
        rec.push((traj.satisfied_so_far[t] as u8).to_string());
        out.write_record(rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Sidecar path for `csv_path`: `run.csv` becomes `run.meta.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Writes the CSV and its metadata sidecar.
pub fn export_csv(traj: &Trajectory, path: &Path) -> Result<(), EvalError> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    write_trajectory_csv(traj, BufWriter::new(f)).map_err(|e| io_err(path, e))?;
    let mut meta = traj.meta.clone();
    meta.state_names = state_names_of(traj);
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&meta).map_err(|e| io_err(&side, e))?;
    std::fs::write(&side, json).map_err(|e| io_err(&side, e))
}

/// Reads a trajectory CSV. The sidecar is optional; without it, metadata other than the state
/// names (taken from the header) is empty.
pub fn import_csv(path: &Path) -> Result<Trajectory, EvalError> {
    let fmt = |message: String| EvalError::Format {
        path: path.display().to_string(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header: Vec<String> = rdr.headers().map_err(|e| fmt(e.to_string()))?.iter().map(String::from).collect();
    let pos = |name: &str| header.iter().position(|h| h == name);
    let (Some(ia), Some(ir), Some(ig), Some(im), Some(isf)) =
        (pos("action"), pos("reward"), pos("gamma_lower"), pos("margin"), pos("satisfied_so_far"))
    else {
        return Err(fmt("missing one of action, reward, gamma_lower, margin, satisfied_so_far".into()));
    };
    if header.first().map(String::as_str) != Some("t") || ir != ia + 1 || ia < 2 || im != ig + 1 || isf != im + 1 {
        return Err(fmt(format!("unexpected column order {header:?}")));
    }
    let state_names = header[1..ia].to_vec();
    let psi_cols = ir + 1..ig;
    if psi_cols.clone().any(|i| !header[i].starts_with("rho_psi_")) {
        return Err(fmt("robustness columns must be named rho_psi_<i>".into()));
    }
    let num = |v: &str, line: usize| -> Result<f64, EvalError> {
        v.trim().parse::<f64>().map_err(|_| fmt(format!("line {line}: `{v}` is not a number")))
    };
    let opt = |v: &str, line: usize| -> Result<Option<f64>, EvalError> {
        if v.trim().is_empty() {
            Ok(None)
        } else {
            num(v, line).map(Some)
        }
    };
    let mut traj = Trajectory {
        states: vec![],
        actions: vec![],
        rewards: vec![],
        rho_psi: vec![],
        gamma_lower: vec![],
        margin: vec![],
        satisfied_so_far: vec![],
        meta: TrajectoryMeta::default(),
    };
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        let t: usize = rec[0].trim().parse().map_err(|_| fmt(format!("line {line}: bad step `{}`", &rec[0])))?;
        if t != k {
            return Err(fmt(format!("line {line}: step {t} out of sequence")));
        }
        traj.states.push((1..ia).map(|i| num(&rec[i], line)).collect::<Result<_, _>>()?);
        let action = rec[ia].trim();
        if !action.is_empty() {
            if traj.actions.len() != k {
                return Err(fmt(format!("line {line}: action after the final state")));
            }
            traj.actions.push(action.parse().map_err(|_| fmt(format!("line {line}: bad action `{action}`")))?);
        }
        if let Some(r) = opt(&rec[ir], line)? {
            traj.rewards.push(r);
        }
        traj.rho_psi.push(psi_cols.clone().map(|i| num(&rec[i], line)).collect::<Result<_, _>>()?);
        traj.gamma_lower.push(opt(&rec[ig], line)?);
        traj.margin.push(opt(&rec[im], line)?);
        traj.satisfied_so_far.push(match rec[isf].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(fmt(format!("line {line}: bad flag `{other}`"))),
        });
    }
    let side = sidecar_path(path);
    if side.exists() {
        let text = std::fs::read_to_string(&side).map_err(|e| io_err(&side, e))?;
        traj.meta = serde_json::from_str(&text).map_err(|e| io_err(&side, e))?;
    }
    traj.meta.state_names = state_names;
    Ok(traj)
}

/// Funnel bounds per active segment and step: `segment, psi_index, t, gamma, lower_bound,
/// rho_max`. With `only` set, just that segment.
pub fn write_funnel_csv<W: Write>(schedule: &FunnelSchedule, only: Option<usize>, w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["segment", "psi_index", "t", "gamma", "lower_bound", "rho_max"])?;
    for (i, seg) in schedule.segments.iter().enumerate() {
        if only.is_some_and(|o| o != i) {
            continue;
        }
        for t in seg.active_from..=seg.t_end.min(schedule.horizon) {
            let g = seg.params.gamma((t - seg.t_begin) as f64);
            out.write_record([
                i.to_string(),
                seg.psi_index.to_string(),
                t.to_string(),
                fmt_num(g),
                fmt_num(seg.params.rho_max - g),
                fmt_num(seg.params.rho_max),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn export_funnel_csv(schedule: &FunnelSchedule, path: &Path) -> Result<(), EvalError> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    write_funnel_csv(schedule, None, BufWriter::new(f)).map_err(|e| io_err(path, e))
}

pub fn export_segment_csv(schedule: &FunnelSchedule, segment: usize, path: &Path) -> Result<(), EvalError> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    write_funnel_csv(schedule, Some(segment), BufWriter::new(f)).map_err(|e| io_err(path, e))
}
