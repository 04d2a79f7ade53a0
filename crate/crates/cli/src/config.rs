//! Run configuration: a preset, then an optional config file, then flags.
//!
//! The file is flat TOML. Dotted keys may be written either quoted
//! (`"cem.N" = 100`) or as a `[cem]` table; both flatten to the same name.
//!
//! ```toml
//! algo = "sac-cepo"
//! env = "pendulum"
//! seed = 3
//! hidden = [64, 64]
//!
//! [cem]
//! N = 60
//! rho = 0.05
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cepo_core::{AgentConfig, Algo, EnvKind, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Preset {
    /// Full-size networks, batch 256, buffer 1e6 and the default CEM column.
    Paper,
    /// Small networks and buffer for single-core runs.
    #[default]
    Desk,
}

/// Every settable key, in the order [`RunConfig::to_toml`] writes them.
pub const KEYS: &[&str] = &[
    "algo",
    "env",
    "seed",
    "steps",
    "eval_interval",
    "eval_rollouts",
    "warmup_steps",
    "buffer_capacity",
    "hidden",
    "gamma",
    "alpha",
    "reward_scale",
    "tau",
    "lr",
    "lr_v",
    "lr_q",
    "lr_pi_mu",
    "lr_pi_sigma",
    "batch_size",
    "cem.N",
    "cem.rho",
    "cem.T",
    "cem.s",
    "cem.delta",
    "cem.noise_samples",
    "record_wall_time",
    "stop_at_return",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub out: PathBuf,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    pub fn preset(preset: Preset, algo: Algo, env: EnvKind) -> Self {
        let train = match preset {
            Preset::Paper => TrainConfig::new(env, AgentConfig::paper(algo)),
            Preset::Desk => TrainConfig {
                buffer_capacity: 100_000,
                ..TrainConfig::new(env, AgentConfig::desk(algo))
            },
        };
        Self {
            train,
            out: PathBuf::from("out"),
        }
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.train;
        let a = &mut t.agent;
        match key {
            "algo" => a.algo = value.trim().parse()?,
            "env" => t.env = value.trim().parse()?,
            "seed" => t.seed = parse(key, value)?,
            "steps" => t.total_env_steps = parse(key, value)?,
            "eval_interval" => t.eval_interval = parse(key, value)?,
            "eval_rollouts" => t.eval_rollouts = parse(key, value)?,
            "warmup_steps" => t.warmup_steps = parse(key, value)?,
            "buffer_capacity" => t.buffer_capacity = parse(key, value)?,
            "hidden" => {
                a.hidden = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_, _>>()?
            }
            "gamma" => a.gamma = parse(key, value)?,
            "alpha" => a.alpha = parse(key, value)?,
            "reward_scale" => a.reward_scale = parse(key, value)?,
            "tau" => a.tau = parse(key, value)?,
            "lr" => {
                let lr = parse(key, value)?;
                a.lr_v = lr;
                a.lr_q = lr;
                a.lr_pi_mu = lr;
                a.lr_pi_sigma = lr;
            }
            "lr_v" => a.lr_v = parse(key, value)?,
            "lr_q" => a.lr_q = parse(key, value)?,
            "lr_pi_mu" => a.lr_pi_mu = parse(key, value)?,
            "lr_pi_sigma" => a.lr_pi_sigma = parse(key, value)?,
            "batch_size" => a.batch_size = parse(key, value)?,
            "cem.N" => a.cem.sample_count = parse(key, value)?,
            "cem.rho" => a.cem.elite_density = parse(key, value)?,
            "cem.T" => a.cem.iterations = parse(key, value)?,
            "cem.s" => a.cem.initial_deviation = parse(key, value)?,
            "cem.delta" => a.cem.deviation_floor = parse(key, value)?,
            "cem.noise_samples" => a.cem_noise_samples = parse(key, value)?,
            "record_wall_time" => t.record_wall_time = parse(key, value)?,
            "stop_at_return" => {
                t.stop_at_return = match value.trim() {
                    "" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            other => return Err(unknown_key(other)),
        }
        Ok(())
    }

    /// Apply a `key=value` override as given to `--set`.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected key=value, got {pair:?}")))?;
        self.set(k.trim(), v)
    }

    /// Apply every setting from a TOML string.
    pub fn apply_toml(&mut self, text: &str) -> Result<(), CliError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(format!("config file: {}", e.message())))?;
        let mut flat = Vec::new();
        flatten("", &table, &mut flat)?;
        for (k, v) in flat {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        self.apply_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        Ok(())
    }

    /// Every key with its current value, loadable by [`Self::apply_toml`].
    pub fn to_toml(&self) -> String {
        let t = &self.train;
        let a = &t.agent;
        let mut s = String::new();
        let hidden: Vec<String> = a.hidden.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(s, "algo = \"{}\"", a.algo);
        let _ = writeln!(s, "env = \"{}\"", t.env);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "steps = {}", t.total_env_steps);
        let _ = writeln!(s, "eval_interval = {}", t.eval_interval);
        let _ = writeln!(s, "eval_rollouts = {}", t.eval_rollouts);
        let _ = writeln!(s, "warmup_steps = {}", t.warmup_steps);
        let _ = writeln!(s, "buffer_capacity = {}", t.buffer_capacity);
        let _ = writeln!(s, "hidden = [{}]", hidden.join(", "));
        let _ = writeln!(s, "gamma = {:?}", a.gamma);
        let _ = writeln!(s, "alpha = {:?}", a.alpha);
        let _ = writeln!(s, "reward_scale = {:?}", a.reward_scale);
        let _ = writeln!(s, "tau = {:?}", a.tau);
        let _ = writeln!(s, "lr_v = {:?}", a.lr_v);
        let _ = writeln!(s, "lr_q = {:?}", a.lr_q);
        let _ = writeln!(s, "lr_pi_mu = {:?}", a.lr_pi_mu);
        let _ = writeln!(s, "lr_pi_sigma = {:?}", a.lr_pi_sigma);
        let _ = writeln!(s, "batch_size = {}", a.batch_size);
        let _ = writeln!(s, "record_wall_time = {}", t.record_wall_time);
        if let Some(r) = t.stop_at_return {
            let _ = writeln!(s, "stop_at_return = {r:?}");
        }
        let _ = writeln!(s, "\n[cem]");
        let _ = writeln!(s, "N = {}", a.cem.sample_count);
        let _ = writeln!(s, "rho = {:?}", a.cem.elite_density);
        let _ = writeln!(s, "T = {}", a.cem.iterations);
        let _ = writeln!(s, "s = {:?}", a.cem.initial_deviation);
        let _ = writeln!(s, "delta = {:?}", a.cem.deviation_floor);
        let _ = writeln!(s, "noise_samples = {}", a.cem_noise_samples);
        s
    }
}

pub(crate) fn unknown_key(key: &str) -> CliError {
    CliError::Config(format!("unknown parameter {key:?}; valid names: {}", KEYS.join(", ")))
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, String)>) -> Result<(), CliError> {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        let text = match v {
            toml::Value::Table(t) => {
                flatten(&key, t, out)?;
                continue;
            }
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => format!("{f:?}"),
            toml::Value::Boolean(b) => b.to_string(),
            toml::Value::Array(items) => items
                .iter()
                .map(|i| match i {
                    toml::Value::Integer(n) => Ok(n.to_string()),
                    _ => Err(CliError::Config(format!("{key}: expected a list of integers"))),
                })
                .collect::<Result<Vec<_>, _>>()?
                .join(","),
            toml::Value::Datetime(_) => return Err(CliError::Config(format!("{key}: dates are not supported"))),
        };
        out.push((key, text));
    }
    Ok(())
}
