use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shelab::{output_dir, CommandOptions, HarnessError, RunConfig, RunManifest, Suite, VerifySource};

#[derive(Parser)]
#[command(name = "shelab", version, about = "Stochastic heat equation ensembles and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest of an earlier run (file or directory); `report` accepts several.
    #[arg(long, num_args = 1..)]
    manifest: Vec<PathBuf>,
    /// Output directory [default: $SHELAB_OUTPUT_ROOT/<command>-<hash>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run an ensemble and write trajectories and a manifest.
    Simulate(Common),
    /// Run test suites on a configuration or manifest.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Suites to run, overriding the configuration (e.g. martingale, qv, lemma).
        #[arg(long = "suite")]
        suites: Vec<String>,
    },
    /// Run the configured parameter sweep.
    Sweep(Common),
    /// Summarise one or more manifests.
    Report(Common),
}

fn load_config(common: &Common) -> Result<RunConfig, HarnessError> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| HarnessError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = load_config(&c)?;
            let out = output_dir(c.out.as_deref(), Some(&cfg), "simulate", &cfg.hash()?);
            let o = shelab::simulate(cfg, &CommandOptions { out, jobs: c.jobs })?;
            println!("{}", o.dir.display());
            for f in &o.manifest.failures {
                eprintln!("{f}");
            }
            Ok(o.exit_code())
        }
        Command::Verify { common: c, suites } => {
            let suites = if suites.is_empty() {
                None
            } else {
                Some(suites.iter().map(|s| s.parse()).collect::<Result<Vec<Suite>, _>>()?)
            };
            let (source, cfg) = match (&c.config, c.manifest.as_slice()) {
                (Some(_), []) => {
                    let cfg = load_config(&c)?;
                    (VerifySource::Config(Box::new(cfg.clone())), Some(cfg))
                }
                (None, [m]) => (VerifySource::Manifest(m.clone()), Some(RunManifest::load(m)?.config)),
                (None, []) => (VerifySource::Standalone, None),
                _ => {
                    return Err(HarnessError::Config(
                        "verify takes either --config or a single --manifest".into(),
                    ))
                }
            };
            let hash = match &cfg {
                Some(c) => c.hash()?,
                None => String::new(),
            };
            let out = output_dir(c.out.as_deref(), cfg.as_ref(), "verify", &hash);
            let o = shelab::verify(source, suites, c.seed, &CommandOptions { out, jobs: c.jobs })?;
            for v in &o.manifest.verdicts {
                println!("{}", v.csv_row());
            }
            println!("{}", o.dir.display());
            Ok(o.exit_code())
        }
        Command::Sweep(c) => {
            let cfg = load_config(&c)?;
            let out = output_dir(c.out.as_deref(), Some(&cfg), "sweep", &cfg.hash()?);
            let o = shelab::sweep(cfg, &CommandOptions { out, jobs: c.jobs })?;
            println!("{}", o.dir.display());
            Ok(o.exit_code())
        }
        Command::Report(c) => {
            let out = output_dir(c.out.as_deref(), None, "report", "");
            let r = shelab::report(&c.manifest, &out)?;
            for line in &r.conflicts {
                eprintln!("CONFLICT: {line}");
            }
            for f in &r.failed {
                eprintln!("FAILED: {f}");
            }
            println!("{}", r.path.display());
            Ok(r.exit_code())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
