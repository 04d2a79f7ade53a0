use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cepo_cli::commands::{run_eval, run_sweep, run_train, CHECKPOINT_FILE, METRICS_FILE, SUMMARY_FILE};
use cepo_cli::metrics::{Metrics, HEADER};
use cepo_cli::{CliError, Preset, RunConfig};
use cepo_core::{Agent, Algo, EnvKind};

fn cepo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cepo")).args(args).output().unwrap()
}

fn tiny(algo: Algo, env: EnvKind, out: &Path) -> RunConfig {
    let mut c = RunConfig::preset(Preset::Desk, algo, env);
    for kv in [
        "steps=300",
        "eval_interval=100",
        "eval_rollouts=2",
        "warmup_steps=64",
        "hidden=16,16",
        "batch_size=16",
        "cem.N=10",
        "cem.T=2",
        "seed=5",
    ] {
        c.set_pair(kv).unwrap();
    }
    c.out = out.to_path_buf();
    c
}

#[test]
fn zero_steps_writes_header_and_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(Algo::SacCepo, EnvKind::Pendulum, dir.path());
    c.set("steps", "0").unwrap();
    let out = run_train(&c).unwrap();
    assert!(out.rows.is_empty());
    assert_eq!(fs::read_to_string(&out.metrics).unwrap(), format!("{}\n", HEADER.join(",")));
    let (agent, env) = Agent::read_checkpoint(&mut fs::File::open(&out.checkpoint).unwrap()).unwrap();
    assert_eq!(env, "pendulum");
    let fresh = Agent::new(c.train.agent.clone(), EnvKind::Pendulum.spec(), c.train.seed).unwrap();
    assert_eq!(agent, fresh);
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for algo in Algo::ALL {
        run_train(&tiny(algo, EnvKind::PointMass, a.path())).unwrap();
        run_train(&tiny(algo, EnvKind::PointMass, b.path())).unwrap();
        for f in [METRICS_FILE, CHECKPOINT_FILE] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{algo} {f}");
        }
    }
}

#[test]
fn cem_column_filled_only_for_cepo() {
    let dir = tempfile::tempdir().unwrap();
    for algo in Algo::ALL {
        let out = run_train(&tiny(algo, EnvKind::PointMass, dir.path())).unwrap();
        let m = Metrics::read(&out.metrics).unwrap();
        assert_eq!(m.rows.len(), 3);
        let cem = m.column("cem_policy_error").unwrap();
        let sigma = m.column("pi_sigma_loss").unwrap();
        // The first row covers updates 65..=100, so every row has losses.
        assert!(m.column("v_loss").unwrap().iter().all(Option::is_some));
        assert_eq!(cem.iter().all(Option::is_some), algo == Algo::SacCepo, "{algo}");
        assert!(cem.iter().all(Option::is_none) || algo == Algo::SacCepo);
        assert_eq!(sigma.iter().all(Option::is_some), algo != Algo::Sac);
        assert!(m.column("wall_seconds").unwrap().iter().all(Option::is_none));
    }
}

#[test]
fn eval_reports_spread_and_checks_env() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_train(&tiny(Algo::Sac, EnvKind::Pendulum, dir.path())).unwrap();
    let one = run_eval(&out.checkpoint, None, 1, 0).unwrap();
    assert_eq!(one.std, 0.0);
    let many = run_eval(&out.checkpoint, Some(EnvKind::Pendulum), 4, 0).unwrap();
    assert_eq!(many.returns.len(), 4);
    assert_eq!(run_eval(&out.checkpoint, None, 4, 0).unwrap(), many);
    assert!(matches!(run_eval(&out.checkpoint, Some(EnvKind::PointMass), 1, 0), Err(CliError::Config(_))));
}

#[test]
fn untrained_pendulum_checkpoint_scores_like_a_random_policy() {
    let dir = tempfile::tempdir().unwrap();
    let mut means = Vec::new();
    for seed in 0..5 {
        let mut c = tiny(Algo::Sac, EnvKind::Pendulum, &dir.path().join(seed.to_string()));
        c.set("steps", "0").unwrap();
        c.set("hidden", "64,64").unwrap();
        c.train.seed = seed;
        let out = run_train(&c).unwrap();
        means.push(run_eval(&out.checkpoint, None, 10, seed).unwrap().mean);
    }
    let m = means.iter().sum::<f64>() / 5.0;
    assert!((-1700.0..=-900.0).contains(&m), "{means:?}");
}

#[test]
fn sweep_of_one_value_equals_train() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny(Algo::SacCepo, EnvKind::PointMass, &dir.path().join("sweep"));
    let rows = run_sweep(&base, "cem.N", &["10".to_string()]).unwrap();
    let single = tiny(Algo::SacCepo, EnvKind::PointMass, &dir.path().join("train"));
    run_train(&single).unwrap();
    assert_eq!(
        fs::read(rows[0].dir.join(METRICS_FILE)).unwrap(),
        fs::read(dir.path().join("train").join(METRICS_FILE)).unwrap()
    );
}

#[test]
fn seed_sweep_writes_one_file_per_value_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = tiny(Algo::Sac, EnvKind::PointMass, dir.path());
    base.set("steps", "120").unwrap();
    let values: Vec<String> = (1..=5).map(|s| s.to_string()).collect();
    let rows = run_sweep(&base, "seed", &values).unwrap();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        assert!(r.dir.join(METRICS_FILE).exists());
    }
    let summary = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
    assert_eq!(summary.lines().count(), 6);
    assert!(summary.starts_with("param,value,final_return_mean,final_return_std,auc"));
}

#[test]
fn zero_iteration_cem_sweep_is_self_imitation() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = tiny(Algo::SacCepo, EnvKind::PointMass, dir.path());
    // One update before the first row: 16 warm-up steps, row at step 17.
    for kv in ["steps=17", "eval_interval=17", "warmup_steps=16"] {
        base.set_pair(kv).unwrap();
    }
    let rows = run_sweep(&base, "cem.T", &["0".to_string(), "10".to_string()]).unwrap();
    let m0 = Metrics::read(&rows[0].dir.join(METRICS_FILE)).unwrap();
    assert_eq!(m0.column("pi_mu_loss").unwrap(), vec![Some(0.0)]);
    assert_eq!(m0.column("cem_policy_error").unwrap(), vec![Some(0.0)]);
    let m10 = Metrics::read(&rows[1].dir.join(METRICS_FILE)).unwrap();
    assert!(m10.column("pi_mu_loss").unwrap()[0].unwrap() > 0.0);
}

#[test]
fn unknown_sweep_parameter_lists_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_sweep(&tiny(Algo::Sac, EnvKind::Pendulum, dir.path()), "cem.K", &["1".into()]).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("cem.rho"));

    let out = cepo(&["sweep", "--param", "bogus", "--values", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("valid names"));
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(cepo(&["train", "--eval-rollouts", "0", "--out", d]).status.code(), Some(1));
    assert_eq!(cepo(&["train", "--set", "gamma=1.5", "--out", d]).status.code(), Some(1));
    assert_eq!(cepo(&["train", "--algo", "ppo"]).status.code(), Some(1));
    // A NaN learning signal aborts the run with the numerical-failure code
    // and keeps the metrics written before the failure.
    let out = cepo(&[
        "train", "--env", "pointmass", "--steps", "400", "--eval-interval", "100", "--out", d,
        "--set", "warmup_steps=150", "--set", "batch_size=16", "--set", "hidden=8,8", "--set", "lr=1e300",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let m = Metrics::read(&dir.path().join(METRICS_FILE)).unwrap();
    assert!(!m.rows.is_empty());
    assert!(!dir.path().join(CHECKPOINT_FILE).exists());
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "algo = \"sac-dpn\"\nsteps = 50\neval_interval = 25\nseed = 2\n[cem]\nN = 12\n").unwrap();
    let out = dir.path().join("o");
    let o = cepo(&[
        "train", "--config", cfg.to_str().unwrap(), "--seed", "3", "--set", "steps=30", "--eval-rollouts", "1",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut resolved = RunConfig::preset(Preset::Paper, Algo::Sac, EnvKind::PointMass);
    resolved.apply_file(&out.join("config.toml")).unwrap();
    assert_eq!(resolved.train.agent.algo, Algo::SacDpn);
    assert_eq!(resolved.train.seed, 3);
    assert_eq!(resolved.train.total_env_steps, 30);
    assert_eq!(resolved.train.agent.cem.sample_count, 12);
    assert_eq!(Metrics::read(&out.join(METRICS_FILE)).unwrap().rows.len(), 2);
}

#[test]
fn verify_passes_and_fault_is_named() {
    let ok = cepo(&["verify", "--gradient-draws", "2"]);
    let text = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(ok.status.code(), Some(0), "{text}");
    for family in ["gradients", "normalization", "sequential-improvement", "cem-vs-grid"] {
        assert!(text.lines().any(|l| l.starts_with(family)), "{family}");
    }
    let bad = cepo(&["verify", "--gradient-draws", "2", "--inject-fault", "pi_sigma_loss"]);
    assert_eq!(bad.status.code(), Some(3));
    let text = String::from_utf8_lossy(&bad.stdout);
    let failing: Vec<&str> = text.lines().filter(|l| l.contains("\tFAIL\t")).collect();
    assert!(failing.iter().any(|l| l.contains("pi_sigma_loss")), "{text}");
    assert!(failing.iter().all(|l| l.contains("pi_sigma_loss") || l.starts_with("summary")), "{text}");
}

#[test]
fn plot_renders_svg() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_train(&tiny(Algo::Sac, EnvKind::PointMass, &dir.path().join("sac"))).unwrap();
    let svg = dir.path().join("c.svg");
    let o = cepo(&["plot", out.metrics.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert!(o.status.success());
    let text = fs::read_to_string(svg).unwrap();
    assert!(text.contains("<polyline") && text.contains(">sac<"));
}
