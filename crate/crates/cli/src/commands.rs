//! The subcommand bodies, callable without going through argument parsing.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use cepo_core::oracle::gradcheck::{Fault, LossKind};
use cepo_core::oracle::suite::{run_verify as verify_suite, VerifyOptions, VerifyReport};
use cepo_core::train::EVAL_STREAM;
use cepo_core::{evaluate, seed_stream, Agent, EnvKind, EvalRow, EvalSummary, Trainer};

use crate::config::{unknown_key, RunConfig, KEYS};
use crate::metrics::{write_table, write_text, Metrics, MetricsWriter};
use crate::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub rows: Vec<EvalRow>,
    pub stopped_early: bool,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

fn save_checkpoint(agent: &Agent, env: EnvKind, path: &Path) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    agent.write_checkpoint(&mut w, env.name())?;
    w.flush()?;
    Ok(())
}

/// Train into `config.out`: `config.toml`, `metrics.csv` (rows written as
/// they are produced) and `checkpoint.bin` with the final parameters. On a
/// numerical failure the metrics so far are kept and no checkpoint is written.
pub fn run_train(config: &RunConfig) -> Result<TrainOutcome, CliError> {
    config.validate()?;
    fs::create_dir_all(&config.out)?;
    write_text(&config.out.join(CONFIG_FILE), &config.to_toml())?;
    let metrics = config.out.join(METRICS_FILE);
    let checkpoint = config.out.join(CHECKPOINT_FILE);
    let mut writer = MetricsWriter::create(&metrics)?;
    let mut trainer = Trainer::new(config.train.clone())?;
    let mut io_error = None;
    let outcome = trainer.run(|row| {
        writer.write(row).map_err(|e| {
            let msg = e.to_string();
            io_error = Some(e);
            cepo_core::Error::Io(std::io::Error::other(msg))
        })
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    let outcome = outcome?;
    writer.finish()?;
    save_checkpoint(trainer.agent(), config.train.env, &checkpoint)?;
    Ok(TrainOutcome {
        rows: outcome.rows,
        stopped_early: outcome.stopped_early,
        metrics,
        checkpoint,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(Agent, EnvKind), CliError> {
    let file = File::open(path).map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    let (agent, env) = Agent::read_checkpoint(&mut BufReader::new(file))?;
    Ok((agent, env.parse()?))
}

/// Deterministic-action rollouts of a saved agent. `env` defaults to the
/// environment recorded in the checkpoint and must match it when given.
pub fn run_eval(checkpoint: &Path, env: Option<EnvKind>, rollouts: usize, seed: u64) -> Result<EvalSummary, CliError> {
    if rollouts == 0 {
        return Err(CliError::Config("rollouts must be >= 1".into()));
    }
    let (agent, saved_env) = load_checkpoint(checkpoint)?;
    let env = env.unwrap_or(saved_env);
    if env != saved_env {
        return Err(CliError::Config(format!(
            "checkpoint was trained on {saved_env}, not {env}"
        )));
    }
    Ok(evaluate(&agent, env, rollouts, &mut seed_stream(seed, EVAL_STREAM))?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub dir: PathBuf,
    pub final_return_mean: Option<f64>,
    pub final_return_std: Option<f64>,
    pub auc: Option<f64>,
}

/// Directory name for one sweep value.
pub fn sweep_dir_name(param: &str, value: &str) -> String {
    let clean: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{param}={clean}")
}

/// One independent training run per value of `param`, each in
/// `base.out/<param>=<value>`, then `base.out/summary.csv` with the final
/// evaluation and the normalized area under the learning curve of each run.
pub fn run_sweep(base: &RunConfig, param: &str, values: &[String]) -> Result<Vec<SweepRow>, CliError> {
    if !KEYS.contains(&param) {
        return Err(unknown_key(param));
    }
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    // Resolve every configuration before running anything.
    let configs = values
        .iter()
        .map(|v| {
            let mut c = base.clone();
            c.set(param, v)?;
            c.out = base.out.join(sweep_dir_name(param, v));
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    fs::create_dir_all(&base.out)?;
    let mut rows = Vec::new();
    for (v, c) in values.iter().zip(&configs) {
        let out = run_train(c)?;
        let m = Metrics::read(&out.metrics)?;
        let fin = m.final_return();
        rows.push(SweepRow {
            value: v.clone(),
            dir: c.out.clone(),
            final_return_mean: fin.map(|f| f.0),
            final_return_std: fin.map(|f| f.1),
            auc: m.normalized_auc(),
        });
    }
    let opt = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                param.to_string(),
                r.value.clone(),
                opt(r.final_return_mean),
                opt(r.final_return_std),
                opt(r.auc),
            ]
        })
        .collect();
    write_table(
        &base.out.join(SUMMARY_FILE),
        &["param", "value", "final_return_mean", "final_return_std", "auc"],
        &table,
    )?;
    Ok(rows)
}

pub fn parse_fault(name: &str) -> Result<Fault, CliError> {
    LossKind::ALL
        .iter()
        .find(|k| k.name() == name)
        .map(|&k| Fault::Corrupt(k))
        .ok_or_else(|| {
            let names: Vec<&str> = LossKind::ALL.iter().map(|k| k.name()).collect();
            CliError::Config(format!("unknown loss {name:?}; expected one of {}", names.join(", ")))
        })
}

/// Run the oracle suite. The report is returned even when checks fail; use
/// [`VerifyReport::passed`] to decide the exit status.
pub fn run_verify(opts: &VerifyOptions) -> Result<VerifyReport, CliError> {
    Ok(verify_suite(opts)?)
}
