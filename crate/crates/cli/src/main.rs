use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ngarch_cli::{commands, run_jobs, CliError, CliResult, LoadedConfig};

#[derive(Parser)]
#[command(name = "ngarch", version, about = "Fit, forecast and rank GARCH-family volatility models")]
struct Cli {
    /// Override a config key, e.g. `--set model.epochs=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set run.seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated price files from a [simulate] section.
    Simulate(Many),
    /// Fit the configured model on the training split.
    Fit(Many),
    /// One-step-ahead forecasts over the test split from a fitted model.
    Predict {
        #[command(flatten)]
        many: Many,
        /// Artifact to use instead of the one in the output directory.
        #[arg(long)]
        artifact: Option<PathBuf>,
    },
    /// Fit followed by predict.
    Run(Many),
    /// Friedman test, pairwise Wilcoxon tests and cliques over results files.
    Rank {
        #[arg(short, long)]
        config: PathBuf,
    },
}

#[derive(clap::Args)]
struct Many {
    /// Config file; repeat to run several independent jobs.
    #[arg(short, long = "config", required = true)]
    configs: Vec<PathBuf>,
    /// Number of configs processed concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn load_all(paths: &[PathBuf], overrides: &[String]) -> CliResult<Vec<LoadedConfig>> {
    paths.iter().map(|p| LoadedConfig::load(p, overrides)).collect()
}

/// Prints each job's outcome and returns the highest exit code.
fn report<T>(configs: &[LoadedConfig], results: Vec<CliResult<T>>, show: impl Fn(&LoadedConfig, &T)) -> i32 {
    let mut code = 0;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => show(&configs[i], &v),
            Err(e) => {
                let who = configs.get(i).map(|c| c.path.display().to_string()).unwrap_or_default();
                eprintln!("error: {who}: {e}");
                code = code.max(e.exit_code());
            }
        }
    }
    code
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let mut overrides = cli.overrides;
    if let Some(seed) = cli.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    let code = match cli.command {
        Command::Simulate(m) => {
            let cfgs = load_all(&m.configs, &overrides)?;
            let res = run_jobs(&cfgs, m.jobs, commands::simulate);
            report(&cfgs, res, |_, paths| {
                for p in paths {
                    println!("wrote {}", p.display());
                }
            })
        }
        Command::Fit(m) => {
            let cfgs = load_all(&m.configs, &overrides)?;
            let res = run_jobs(&cfgs, m.jobs, commands::fit);
            report(&cfgs, res, |_, s| {
                println!(
                    "fit {}: train_ll={:.4} val_ll={:.4}",
                    s.artifact.display(),
                    s.train_ll,
                    s.val_ll
                )
            })
        }
        Command::Predict { many, artifact } => {
            let cfgs = load_all(&many.configs, &overrides)?;
            if artifact.is_some() && cfgs.len() > 1 {
                return Err(CliError::Config("--artifact needs exactly one config".into()));
            }
            let res = run_jobs(&cfgs, many.jobs, |c| commands::predict(c, artifact.as_deref()));
            report(&cfgs, res, |_, s| {
                println!(
                    "predict {}: {} steps, test_ll={:.4}",
                    s.predictions.display(),
                    s.n_steps,
                    s.test_ll
                )
            })
        }
        Command::Run(m) => {
            let cfgs = load_all(&m.configs, &overrides)?;
            let res = run_jobs(&cfgs, m.jobs, |c| {
                let f = commands::fit(c)?;
                let p = commands::predict(c, None)?;
                Ok((f, p))
            });
            report(&cfgs, res, |_, (f, p)| {
                println!(
                    "run {}: train_ll={:.4} val_ll={:.4} test_ll={:.4}",
                    f.artifact.display(),
                    f.train_ll,
                    f.val_ll,
                    p.test_ll
                )
            })
        }
        Command::Rank { config } => {
            let cfg = LoadedConfig::load(&config, &overrides)?;
            let s = commands::rank(&cfg)?;
            print!("{}", s.report.to_text());
            println!("wrote {} and {}", s.text.display(), s.svg.display());
            0
        }
    };
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
