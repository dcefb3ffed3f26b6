//! Run configuration: one JSON file, optionally patched with `key.path=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use stl_funnel::dqn::TrainConfig;
use stl_funnel::envs::{EnvConfig, Environment, Simulator};
use stl_funnel::evalmon::EVAL_SEED_BASE;
use stl_funnel::funnel::{build_schedule, FunnelSchedule, SegmentOverrides};
use stl_funnel::reward::{RewardMode, RewardSpec};
use stl_funnel::robustness::{estimate_rho_bounds, RhoBounds};
use stl_funnel::stl::{conjuncts, parse_formula, Formula};

use crate::CliError;

/// Per-conjunct settings, in the order the conjuncts are written.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConjunctConfig {
    pub rho_max: Option<f64>,
    pub rho_min: Option<f64>,
    pub gamma_inf: Option<f64>,
    /// Closure time as an absolute step.
    pub t_star: Option<u32>,
}

fn default_grid() -> usize {
    201
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    pub formula: String,
    #[serde(default)]
    pub conjuncts: Vec<ConjunctConfig>,
    /// Box over the state components used to estimate missing robustness bounds.
    #[serde(default)]
    pub domain: Option<Vec<(f64, f64)>>,
    #[serde(default = "default_grid")]
    pub grid: usize,
}

fn default_episodes() -> usize {
    20
}

fn default_seed_base() -> u64 {
    EVAL_SEED_BASE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_seed_base")]
    pub seed_base: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: default_episodes(),
            seed_base: default_seed_base(),
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub spec: SpecConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub reward_mode: RewardMode,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

/// Sets `path` (dot-separated, numeric segments index arrays) inside `root`, creating
/// objects along the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override key `{path}` has an empty segment")));
    }
    let mut cur = root;
    for (n, key) in keys.iter().enumerate() {
        let last = n + 1 == keys.len();
        let here = keys[..=n].join(".");
        if let Ok(i) = key.parse::<usize>() {
            let arr = cur
                .as_array_mut()
                .ok_or_else(|| CliError::Config(format!("`{}` is not an array", keys[..n].join("."))))?;
            if i >= arr.len() {
                if i == arr.len() {
                    arr.push(Value::Null);
                } else {
                    return Err(CliError::Config(format!("index out of range at `{here}`")));
                }
            }
            if last {
                arr[i] = value;
                return Ok(());
            }
            if arr[i].is_null() {
                arr[i] = Value::Object(Default::default());
            }
            cur = &mut arr[i];
        } else {
            if cur.is_null() {
                *cur = Value::Object(Default::default());
            }
            let obj = cur
                .as_object_mut()
                .ok_or_else(|| CliError::Config(format!("`{}` is not an object", keys[..n].join("."))))?;
            if last {
                obj.insert(key.to_string(), value);
                return Ok(());
            }
            cur = obj.entry(key.to_string()).or_insert(Value::Null);
        }
    }
    unreachable!("loop returns on the last key")
}

/// Parses `key=value`; the value is read as JSON when possible, otherwise as a string.
pub fn parse_override(text: &str) -> Result<(String, Value), CliError> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{text}` is not of the form key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl RunConfig {
    pub fn from_value(value: Value) -> Result<Self, CliError> {
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner()))
        })
    }

    /// Reads the file, applies `--set` overrides, then `--seed` and `--out`.
    pub fn load(path: &Path, seed: Option<u64>, out: Option<&Path>, sets: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for s in sets {
            let (k, v) = parse_override(s)?;
            set_path(&mut value, &k, v)?;
        }
        let mut cfg = Self::from_value(value)?;
        if let Some(seed) = seed {
            cfg.train.seed = seed;
        }
        if let Some(out) = out {
            cfg.out_dir = out.to_path_buf();
        }
        Ok(cfg)
    }

    /// Digest of everything that determines training results.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.eval = EvalConfig::default();
        stl_funnel::config_digest(&c)
    }
}

/// Validated run: simulator, parsed formula, bounds, schedule and reward.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub env: Simulator,
    pub formula: Formula,
    pub bounds: Vec<RhoBounds>,
    pub schedule: FunnelSchedule,
    pub reward: RewardSpec,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let env = Simulator::new(cfg.env.clone()).map_err(|e| CliError::Config(format!("env: {e}")))?;
    let names = env.state_names();
    let formula = parse_formula(&cfg.spec.formula, &names).map_err(|e| CliError::Config(format!("spec.formula: {e}")))?;
    if formula.horizon() > env.horizon() {
        return Err(CliError::Config(format!(
            "env.horizon: {} is shorter than the formula horizon {}",
            env.horizon(),
            formula.horizon()
        )));
    }
    let parts = conjuncts(&formula).map_err(|e| CliError::Config(format!("spec.formula: {e}")))?;
    if cfg.spec.conjuncts.len() > parts.len() {
        return Err(CliError::Config(format!(
            "spec.conjuncts: {} entries for {} conjuncts",
            cfg.spec.conjuncts.len(),
            parts.len()
        )));
    }
    let mut bounds = Vec::with_capacity(parts.len());
    let mut overrides = Vec::with_capacity(parts.len());
    for (i, part) in parts.iter().enumerate() {
        let c = cfg.spec.conjuncts.get(i).cloned().unwrap_or_default();
        let (lo, hi) = match (c.rho_min, c.rho_max) {
            (Some(lo), Some(hi)) => (lo, hi),
            (lo, hi) => {
                let domain = cfg.spec.domain.as_ref().ok_or_else(|| {
                    CliError::Config(format!(
                        "spec.domain: needed to estimate the robustness bounds of conjunct {i} \
                         (or set spec.conjuncts.{i}.rho_min and rho_max)"
                    ))
                })?;
                let est = estimate_rho_bounds(&part.psi, domain, cfg.spec.grid)
                    .map_err(|e| CliError::Config(format!("spec.domain: {e}")))?;
                (lo.unwrap_or(est.rho_min), hi.unwrap_or(est.rho_max))
            }
        };
        let b = RhoBounds::new(lo, hi)
            .ok_or_else(|| CliError::Config(format!("spec.conjuncts.{i}: rho_min {lo} exceeds rho_max {hi}")))?;
        bounds.push(b);
        overrides.push(SegmentOverrides {
            gamma_inf: c.gamma_inf,
            t_star: c.t_star,
        });
    }
    let schedule = build_schedule(&formula, &bounds, &overrides, env.horizon())
        .map_err(|e| CliError::Config(format!("spec.conjuncts: {e}")))?;
    let reward = RewardSpec::new(formula.clone(), schedule.clone(), cfg.reward_mode)
        .map_err(|e| CliError::Config(format!("spec: {e}")))?;
    cfg.train.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
    if let Some(n) = &cfg.train.input_norm {
        if n.offset.len() != names.len() || n.scale.len() != names.len() {
            return Err(CliError::Config(format!(
                "train.input_norm: expected {} offsets and scales",
                names.len()
            )));
        }
    }
    Ok(Prepared {
        config: cfg.clone(),
        env,
        formula,
        bounds,
        schedule,
        reward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn dot_path_overrides() {
        let mut v = json!({"train": {"optimizer": {"lr": 0.001}}, "spec": {"conjuncts": [{}]}});
        set_path(&mut v, "train.optimizer.lr", json!(0.5)).unwrap();
        set_path(&mut v, "spec.conjuncts.0.t_star", json!(100)).unwrap();
        set_path(&mut v, "spec.conjuncts.1.t_star", json!(7)).unwrap();
        set_path(&mut v, "eval.episodes", json!(3)).unwrap();
        assert_eq!(v["train"]["optimizer"]["lr"], json!(0.5));
        assert_eq!(v["spec"]["conjuncts"][0]["t_star"], json!(100));
        assert_eq!(v["spec"]["conjuncts"][1]["t_star"], json!(7));
        assert_eq!(v["eval"]["episodes"], json!(3));
        assert!(set_path(&mut v, "spec.conjuncts.5.t_star", json!(1)).is_err());
        assert!(set_path(&mut v, "train..lr", json!(1)).is_err());
        assert_eq!(parse_override("a.b=abc").unwrap().1, json!("abc"));
        assert_eq!(parse_override("a.b=[1,2]").unwrap().1, json!([1, 2]));
        assert!(parse_override("nothing").is_err());
    }

    #[test]
    fn errors_name_the_key() {
        let v = json!({
            "env": {"kind": "integrator", "horizon": 10},
            "spec": {"formula": "G[0,5](x >= 0)"},
            "train": {"discount": "high"}
        });
        match RunConfig::from_value(v) {
            Err(CliError::Config(m)) => assert!(m.starts_with("train.discount"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
