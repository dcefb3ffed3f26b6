use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use stl_funnel::dqn::{self, load_checkpoint, save_checkpoint, DqnError, EvalStats, QNetwork, TrainLog};
use stl_funnel::envs::{EnvSchema, Environment};
use stl_funnel::evalmon::{
    check_satisfaction, export_csv, export_funnel_csv, export_segment_csv, import_csv, rollout, summarize,
    EvalError, RolloutPolicy, SatisfactionReport,
};
use stl_funnel::funnel::FunnelSchedule;
use stl_funnel::reward::RewardMode;
use stl_funnel::stl::FragmentClass;

use crate::config::{prepare, Prepared, RunConfig};
use crate::CliError;

fn io<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io(dir))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io(path))
}

impl From<DqnError> for CliError {
    fn from(e: DqnError) -> Self {
        match e {
            DqnError::Config(_) | DqnError::CheckpointVersion { .. } | DqnError::CheckpointMismatch(_) => {
                CliError::Config(e.to_string())
            }
            DqnError::Checkpoint { .. } => CliError::Io(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io { .. } => CliError::Io(e.to_string()),
            EvalError::Format { .. } | EvalError::TraceTooShort { .. } | EvalError::NoEpisodes => {
                CliError::Config(e.to_string())
            }
            EvalError::Dqn(d) => d.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub psi_index: usize,
    pub operator: String,
    pub t_begin: u32,
    pub active_from: u32,
    pub t_end: u32,
    pub gamma0: f64,
    pub gamma_inf: f64,
    pub rho_max: f64,
    pub t_star: u32,
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelSummary {
    pub class: FragmentClass,
    pub horizon: u32,
    pub segments: Vec<SegmentSummary>,
    pub files: Vec<PathBuf>,
}

fn summarize_schedule(schedule: &FunnelSchedule) -> Vec<SegmentSummary> {
    schedule
        .segments
        .iter()
        .map(|s| SegmentSummary {
            psi_index: s.psi_index,
            operator: s.op.symbol().to_string(),
            t_begin: s.t_begin,
            active_from: s.active_from,
            t_end: s.t_end,
            gamma0: s.params.gamma0,
            gamma_inf: s.params.gamma_inf,
            rho_max: s.params.rho_max,
            t_star: s.params.t_star,
            l: s.params.l,
        })
        .collect()
}

/// Writes `schedule.json` and `funnel.csv`, plus one `funnel_segment_<i>.csv` per segment when
/// the conjuncts overlap.
pub fn cmd_funnel(cfg: &RunConfig) -> Result<FunnelSummary, CliError> {
    let p = prepare(cfg)?;
    let out = &cfg.out_dir;
    ensure_dir(out)?;
    let mut files = vec![out.join("schedule.json"), out.join("funnel.csv")];
    fs::write(&files[0], p.schedule.to_json() + "\n").map_err(io(&files[0]))?;
    export_funnel_csv(&p.schedule, &files[1])?;
    if p.schedule.class == FragmentClass::OverlappingConjunction {
        for i in 0..p.schedule.segments.len() {
            let path = out.join(format!("funnel_segment_{i}.csv"));
            export_segment_csv(&p.schedule, i, &path)?;
            files.push(path);
        }
    }
    Ok(FunnelSummary {
        class: p.schedule.class,
        horizon: p.schedule.horizon,
        segments: summarize_schedule(&p.schedule),
        files,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_digest: String,
    pub formula: String,
    pub reward_mode: RewardMode,
    pub env: EnvSchema,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub episodes: u64,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub last_eval: Option<EvalStats>,
}

fn run_meta(p: &Prepared) -> RunMeta {
    RunMeta {
        config_digest: p.config.digest(),
        formula: p.formula.to_string(),
        reward_mode: p.config.reward_mode,
        env: p.env.schema(),
        config: p.config.clone(),
    }
}

/// Trains (or resumes from `resume`) and writes `checkpoint.json`, `train_log.csv` and
/// `run_meta.json`.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary, CliError> {
    let p = prepare(cfg)?;
    let out = &cfg.out_dir;
    ensure_dir(out)?;
    let digest = cfg.digest();
    let outcome = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            ckpt.check_compatible(p.env.state_dim(), p.env.action_count(), &digest)?;
            log::info!("resuming from step {}", ckpt.step);
            dqn::continue_training(
                &p.env,
                &p.reward,
                &cfg.train,
                ckpt.network,
                Some(ckpt.optimizer),
                ckpt.step,
                ckpt.episode,
            )?
        }
        None => dqn::train(&p.env, &p.reward, &cfg.train)?,
    };
    let ckpt_path = out.join("checkpoint.json");
    save_checkpoint(&outcome.checkpoint(digest), &ckpt_path)?;
    let log_path = out.join("train_log.csv");
    let f = fs::File::create(&log_path).map_err(io(&log_path))?;
    outcome.log.write_csv(f).map_err(io(&log_path))?;
    write_json(&out.join("run_meta.json"), &run_meta(&p))?;
    Ok(TrainSummary {
        steps: outcome.steps,
        episodes: outcome.episodes,
        checkpoint: ckpt_path,
        log: log_path,
        last_eval: last_eval(&outcome.log),
    })
}

fn last_eval(log: &TrainLog) -> Option<EvalStats> {
    log.rows.iter().rev().find_map(|r| {
        Some(EvalStats {
            episodes: 0,
            satisfaction_rate: r.eval_satisfaction_rate?,
            min_robustness: r.eval_min_robustness?,
            mean_robustness: f64::NAN,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub satisfied: bool,
    pub robustness: f64,
    pub obligation_robustness: f64,
    pub trajectory: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub reward_mode: RewardMode,
    pub formula: String,
    pub episodes: usize,
    pub satisfaction_rate: f64,
    pub min_robustness: f64,
    pub mean_robustness: f64,
    pub min_obligation_robustness: f64,
    pub per_episode: Vec<EpisodeResult>,
}

/// Greedy episodes checked against the formula; writes `eval_summary.json` and one trajectory
/// CSV per episode under `trajectories/`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, episodes: usize) -> Result<EvalSummary, CliError> {
    if episodes == 0 {
        return Err(CliError::Config("eval.episodes: at least one episode is required".into()));
    }
    let p = prepare(cfg)?;
    let ckpt = load_checkpoint(checkpoint)?;
    ckpt.check_compatible(p.env.state_dim(), p.env.action_count(), &cfg.digest())?;
    let net: QNetwork = ckpt.network;
    let dir = cfg.out_dir.join("trajectories");
    ensure_dir(&dir)?;
    let digest = cfg.digest();
    let mut reports: Vec<SatisfactionReport> = Vec::with_capacity(episodes);
    let mut per_episode = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let seed = cfg.eval.seed_base + i as u64;
        let mut traj = rollout(&net, &p.env, &p.reward, seed, RolloutPolicy::Greedy)?;
        traj.meta.state_names = p.env.state_names();
        traj.meta.config_digest = Some(digest.clone());
        let rep = check_satisfaction(&p.formula, &traj)?;
        let path = dir.join(format!("episode_{i:03}.csv"));
        export_csv(&traj, &path)?;
        per_episode.push(EpisodeResult {
            seed,
            satisfied: rep.satisfied,
            robustness: rep.robustness,
            obligation_robustness: rep.obligation_robustness,
            trajectory: path,
        });
        reports.push(rep);
    }
    let stats = summarize(&reports)?;
    let summary = EvalSummary {
        reward_mode: cfg.reward_mode,
        formula: p.formula.to_string(),
        episodes: stats.episodes,
        satisfaction_rate: stats.satisfaction_rate,
        min_robustness: stats.min_robustness,
        mean_robustness: stats.mean_robustness,
        min_obligation_robustness: reports.iter().map(|r| r.obligation_robustness).fold(f64::INFINITY, f64::min),
        per_episode,
    };
    write_json(&cfg.out_dir.join("eval_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub formula: String,
    pub states: usize,
    pub satisfied: bool,
    pub robustness: f64,
    pub obligation_robustness: f64,
}

/// Re-checks a trajectory CSV against the configured formula; writes `monitor.json`.
pub fn cmd_monitor(cfg: &RunConfig, trajectory: &Path) -> Result<MonitorVerdict, CliError> {
    let p = prepare(cfg)?;
    let traj = import_csv(trajectory)?;
    let names = p.env.state_names();
    if traj.meta.state_names != names {
        return Err(CliError::Config(format!(
            "{}: state columns {:?} do not match the environment's {:?}",
            trajectory.display(),
            traj.meta.state_names,
            names
        )));
    }
    let rep = check_satisfaction(&p.formula, &traj)?;
    let verdict = MonitorVerdict {
        formula: p.formula.to_string(),
        states: traj.states.len(),
        satisfied: rep.satisfied,
        robustness: rep.robustness,
        obligation_robustness: rep.obligation_robustness,
    };
    ensure_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("monitor.json"), &verdict)?;
    Ok(verdict)
}
