use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};

use stl_funnel::dqn::{load_checkpoint, TrainLog};
use stl_funnel::evalmon::import_csv;
use stl_funnel_cli::{cmd_eval, cmd_funnel, cmd_monitor, cmd_train, CliError, RunConfig};

fn small_config(out: &Path) -> Value {
    json!({
        "env": {
            "kind": "integrator",
            "horizon": 60,
            "reset": { "type": "uniform_box", "bounds": [[4.0, 6.0]] }
        },
        "spec": {
            "formula": "F[10,40](x >= 5.2) & G[45,60](abs(x - 5) <= 0.5)",
            "conjuncts": [
                { "rho_min": -1.0, "rho_max": 0.8 },
                { "rho_min": -0.5, "rho_max": 0.5 }
            ]
        },
        "train": {
            "total_steps": 1500,
            "hidden": [16],
            "batch_size": 16,
            "target_update": 100,
            "eval_freq": 500,
            "eval_episodes": 2,
            "seed": 3
        },
        "eval": { "episodes": 3 },
        "out_dir": out
    })
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn load(dir: &Path, sets: &[&str]) -> RunConfig {
    let out = dir.join("out");
    let path = write_config(dir, &small_config(&out));
    let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
    RunConfig::load(&path, None, None, &sets).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stlfunnel"))
}

#[test]
fn funnel_writes_schedule_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(dir.path(), &[]);
    let summary = cmd_funnel(&cfg).unwrap();
    assert_eq!(summary.segments.len(), 2);
    assert_eq!(summary.files.len(), 2);
    for f in &summary.files {
        assert!(f.exists(), "{}", f.display());
    }
    let text = std::fs::read_to_string(&summary.files[0]).unwrap();
    let back = stl_funnel::funnel::FunnelSchedule::from_json(&text).unwrap();
    assert_eq!(back.segments.len(), 2);
    let csv = std::fs::read_to_string(&summary.files[1]).unwrap();
    assert!(csv.starts_with("segment,psi_index,t,gamma,lower_bound,rho_max"));
    assert_eq!(csv.lines().count(), 1 + 61);

    let cfg = load(
        dir.path(),
        &["spec.formula=\"F[10,50](x >= 5.2) & G[45,60](abs(x - 5) <= 0.5)\"", "spec.conjuncts.1.t_star=50"],
    );
    let summary = cmd_funnel(&cfg).unwrap();
    assert_eq!(summary.files.len(), 4);
}

#[test]
fn train_eval_monitor_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(dir.path(), &[]);
    let t = cmd_train(&cfg, None).unwrap();
    assert_eq!(t.steps, 1500);
    assert_eq!(t.episodes, 25);
    let ckpt = load_checkpoint(&t.checkpoint).unwrap();
    assert_eq!(ckpt.step, 1500);
    assert_eq!(ckpt.config_digest, cfg.digest());
    let log = TrainLog::read_csv(std::fs::File::open(&t.log).unwrap()).unwrap();
    assert_eq!(log.rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 500, 1000]);
    assert!(cfg.out_dir.join("run_meta.json").exists());

    let e = cmd_eval(&cfg, &t.checkpoint, 3).unwrap();
    assert_eq!(e.episodes, 3);
    assert_eq!(e.per_episode.len(), 3);
    let rate = e.per_episode.iter().filter(|p| p.satisfied).count() as f64 / 3.0;
    assert_eq!(e.satisfaction_rate, rate);
    let again = std::fs::read_to_string(cfg.out_dir.join("eval_summary.json")).unwrap();
    assert!(again.contains("satisfaction_rate"));

    for ep in &e.per_episode {
        let traj = import_csv(&ep.trajectory).unwrap();
        assert_eq!(traj.states.len(), 61);
        assert_eq!(traj.meta.seed, Some(ep.seed));
        let v = cmd_monitor(&cfg, &ep.trajectory).unwrap();
        assert_eq!(v.satisfied, ep.satisfied);
        assert_eq!(v.robustness, ep.robustness);
    }

    assert!(matches!(cmd_eval(&cfg, &t.checkpoint, 0), Err(CliError::Config(_))));
}

#[test]
fn resume_continues_the_step_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(dir.path(), &[]);
    let first = cmd_train(&cfg, None).unwrap();
    let saved = dir.path().join("first.json");
    std::fs::copy(&first.checkpoint, &saved).unwrap();
    let cfg2 = load(dir.path(), &["train.total_steps=2400"]);
    let second = cmd_train(&cfg2, Some(&saved)).unwrap();
    assert_eq!(second.steps, 2400);
    assert_eq!(second.episodes, 40);
    let log = TrainLog::read_csv(std::fs::File::open(&second.log).unwrap()).unwrap();
    assert_eq!(log.rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1500, 2000]);
}

#[test]
fn same_seed_reproduces_the_log() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = cmd_train(&load(a.path(), &[]), None).unwrap();
    let rb = cmd_train(&load(b.path(), &[]), None).unwrap();
    let la = std::fs::read_to_string(&ra.log).unwrap();
    let lb = std::fs::read_to_string(&rb.log).unwrap();
    assert_eq!(la, lb);
    let ca = load_checkpoint(&ra.checkpoint).unwrap();
    let cb = load_checkpoint(&rb.checkpoint).unwrap();
    assert_eq!(ca.network, cb.network);
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cases: &[(&str, &str)] = &[
        ("train.batch_sise=3", "train"),
        ("train.discount=1.5", "train"),
        ("spec.formula=\"G[0,10](z <= 1)\"", "spec.formula"),
        ("spec.formula=\"G[0,90](x <= 1)\"", "env.horizon"),
        ("spec.conjuncts.0.rho_min=3", "spec.conjuncts.0"),
        ("env.kind=\"boat\"", "env.kind"),
        ("spec.conjuncts.1.t_star=2", "spec.conjuncts"),
    ];
    for (set, key) in cases {
        let path = write_config(dir.path(), &small_config(&out));
        let err = RunConfig::load(&path, None, None, &[set.to_string()]).and_then(|c| cmd_funnel(&c).map(|_| ()));
        match err {
            Err(CliError::Config(m)) => assert!(m.contains(key), "`{set}` gave `{m}`"),
            other => panic!("`{set}` gave {other:?}"),
        }
    }
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let path = write_config(dir.path(), &small_config(&out));

    let ok = bin().args(["funnel", "--config"]).arg(&path).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let summary: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(summary["segments"].as_array().unwrap().len(), 2);

    let bad = bin()
        .args(["funnel", "--config"])
        .arg(&path)
        .args(["--set", "train.nope=1"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("train"));

    let missing = bin().args(["funnel", "--config", "/nonexistent/run.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(4));

    let short = dir.path().join("short.csv");
    std::fs::write(
        &short,
        "t,x,action,reward,rho_psi_0,rho_psi_1,gamma_lower,margin,satisfied_so_far\n0,5.0,,,0.1,0.5,,,1\n",
    )
    .unwrap();
    let mon = bin()
        .args(["monitor", "--config"])
        .arg(&path)
        .arg("--trajectory")
        .arg(&short)
        .output()
        .unwrap();
    assert_eq!(mon.status.code(), Some(2), "{}", String::from_utf8_lossy(&mon.stderr));

    let out2 = dir.path().join("seeded");
    let train = bin()
        .args(["train", "--config"])
        .arg(&path)
        .args(["--seed", "9", "--set", "train.total_steps=300", "--out"])
        .arg(&out2)
        .output()
        .unwrap();
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(out2.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["train"]["seed"], json!(9));
    assert_eq!(meta["config"]["train"]["total_steps"], json!(300));
}
