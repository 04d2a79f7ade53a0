use std::path::PathBuf;
use std::process::ExitCode;

use cepo_cli::commands::{parse_fault, run_eval, run_sweep, run_train, run_verify, SUMMARY_FILE};
use cepo_cli::metrics::Metrics;
use cepo_cli::plot::learning_curve_svg;
use cepo_cli::{CliError, Preset, RunConfig};
use cepo_core::oracle::suite::VerifyOptions;
use cepo_core::{Algo, EnvKind};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cepo", version, about = "Soft actor-critic agents with cross-entropy policy optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write metrics.csv, config.toml and checkpoint.bin.
    Train(RunArgs),
    /// Evaluate a checkpoint with deterministic (mean) actions.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the environment stored in the checkpoint.
        #[arg(long)]
        env: Option<EnvKind>,
        #[arg(long, default_value_t = 10)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// One training run per value of a parameter, plus summary.csv.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Any key accepted by --set, e.g. cem.N or seed.
        #[arg(long)]
        param: String,
        #[arg(long, num_args = 1.., required = true)]
        values: Vec<String>,
    },
    /// Run the oracle suite; exit status 3 if any check fails.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random draws per loss for the gradient checks.
        #[arg(long, default_value_t = 10)]
        gradient_draws: usize,
        /// Corrupt the backward pass of the named loss (self-test of the checker).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Render learning curves from metrics files as SVG.
    Plot {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long, default_value = "curves.svg")]
        out: PathBuf,
        #[arg(long, default_value = "")]
        title: String,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// Flat TOML file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// sac, sac-dpn or sac-cepo [default: sac].
    #[arg(long)]
    algo: Option<Algo>,
    /// pendulum or pointmass [default: pendulum].
    #[arg(long)]
    env: Option<EnvKind>,
    /// Master seed for every random stream [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Total environment steps [default: 50000].
    #[arg(long)]
    steps: Option<usize>,
    /// Environment steps between evaluation rows [default: 1000].
    #[arg(long)]
    eval_interval: Option<usize>,
    /// Deterministic episodes per evaluation row [default: 10].
    #[arg(long)]
    eval_rollouts: Option<usize>,
    /// Output directory [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value` override, repeatable; wins over the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::preset(self.preset, Algo::Sac, EnvKind::Pendulum);
        if let Some(p) = &self.config {
            c.apply_file(p)?;
        }
        for s in &self.sets {
            c.set_pair(s)?;
        }
        let t = &mut c.train;
        if let Some(a) = self.algo {
            t.agent.algo = a;
        }
        if let Some(e) = self.env {
            t.env = e;
        }
        if let Some(s) = self.seed {
            t.seed = s;
        }
        if let Some(s) = self.steps {
            t.total_env_steps = s;
        }
        if let Some(i) = self.eval_interval {
            t.eval_interval = i;
        }
        if let Some(r) = self.eval_rollouts {
            t.eval_rollouts = r;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => {
            let c = args.resolve()?;
            let out = run_train(&c)?;
            for r in &out.rows {
                println!("step {:>8}  return {:>10.3} ± {:.3}", r.env_step, r.eval.mean, r.eval.std);
            }
            if out.stopped_early {
                println!("stopped early: target return reached");
            }
            println!("metrics    {}", out.metrics.display());
            println!("checkpoint {}", out.checkpoint.display());
        }
        Command::Eval {
            checkpoint,
            env,
            rollouts,
            seed,
        } => {
            let s = run_eval(&checkpoint, env, rollouts, seed)?;
            println!("mean {:?}\nstd {:?}", s.mean, s.std);
        }
        Command::Sweep { run, param, values } => {
            let c = run.resolve()?;
            let rows = run_sweep(&c, &param, &values)?;
            for r in &rows {
                println!(
                    "{param}={:<12} final {} ± {}  auc {}",
                    r.value,
                    opt(r.final_return_mean),
                    opt(r.final_return_std),
                    opt(r.auc)
                );
            }
            println!("summary {}", c.out.join(SUMMARY_FILE).display());
        }
        Command::Verify {
            seed,
            gradient_draws,
            inject_fault,
        } => {
            let fault = inject_fault.as_deref().map(parse_fault).transpose()?.unwrap_or_default();
            let report = run_verify(&VerifyOptions {
                seed,
                gradient_draws,
                fault,
                ..VerifyOptions::default()
            })?;
            println!("{report}");
            if !report.passed() {
                let names: Vec<String> = report.failures().map(|c| format!("{}/{}", c.family, c.name)).collect();
                return Err(CliError::Verify(names.join(", ")));
            }
        }
        Command::Plot { metrics, out, title } => {
            let series = metrics
                .iter()
                .map(|p| {
                    let label = p
                        .parent()
                        .and_then(|d| d.file_name())
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_else(|| p.display().to_string());
                    Ok((label, Metrics::read(p)?))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            std::fs::write(&out, learning_curve_svg(&series, &title))?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
