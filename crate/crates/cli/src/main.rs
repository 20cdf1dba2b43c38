use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sdde_cli::config::{self, LoadedConfig};
use sdde_cli::{classify, pipeline, suite, ExitKind};

#[derive(Parser, Debug)]
#[command(name = "sdde", version, about = "Stochastic delay equations: simulation, measures, stability and tail bounds")]
struct Cli {
    /// Worker threads for ensembles and Monte Carlo runs (default: all cores).
    #[arg(long, global = true, env = "SDDE_WORKERS")]
    workers: Option<usize>,

    /// Base seed, overriding the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Dotted-path override, e.g. `--set model.tau=2.0`. Repeatable.
    #[arg(long = "set", short = 's', global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory (default: `outputs.dir` from the config).
    #[arg(long, short = 'o', global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the ensemble and write the time series.
    Simulate { config: String },
    /// Occupation histogram over the measure window.
    Measure { config: String },
    /// Delay-coordinate phase portrait over the measure window.
    Phase { config: String },
    /// Equilibria, characteristic roots and delay thresholds.
    Stability {
        config: String,
        /// Number of characteristic roots to report.
        #[arg(long, default_value_t = 5)]
        roots: usize,
        /// Also write the report as TOML.
        #[arg(long)]
        toml: Option<PathBuf>,
    },
    /// Tail-bound curves for the `[bounds]` section.
    Bounds { config: String },
    /// Run the acceptance checks, or the checks configured in CONFIG.
    Verify {
        config: Option<String>,
        /// Subset of acceptance criteria, e.g. `--criteria 1,2,11`.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u8>,
    },
    /// Time series, histogram and phase portrait for a preset or config.
    Figures { config: String },
    /// Check a config without running it.
    Validate { config: String },
    /// List the shipped presets, or print one.
    Presets { name: Option<String> },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(kind) => ExitCode::from(kind as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e) as u8)
        }
    }
}

fn load(cli: &Cli, source: &str) -> anyhow::Result<LoadedConfig> {
    let mut loaded = config::load(source, &cli.overrides)?;
    if let Some(seed) = cli.seed {
        loaded.config.set_seed(seed);
    }
    Ok(loaded)
}

/// Loads and refuses configs with error diagnostics.
fn load_valid(cli: &Cli, source: &str) -> anyhow::Result<Result<LoadedConfig, ExitKind>> {
    let loaded = load(cli, source)?;
    let diags = loaded.config.diagnostics(&loaded.base_dir);
    for d in &diags {
        eprintln!("{d}");
    }
    if config::has_errors(&diags) {
        return Ok(Err(ExitKind::Validation));
    }
    Ok(Ok(loaded))
}

fn out_dir(cli: &Cli, loaded: &LoadedConfig) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| loaded.config.outputs.dir.clone())
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: &Cli) -> anyhow::Result<ExitKind> {
    let workers = cli.workers;
    macro_rules! valid {
        ($src:expr) => {
            match load_valid(cli, $src)? {
                Ok(l) => l,
                Err(kind) => return Ok(kind),
            }
        };
    }
    match &cli.command {
        Command::Simulate { config } => {
            let l = valid!(config);
            print_files(&sdde_cli::simulate(&l, &out_dir(cli, &l), workers)?);
        }
        Command::Measure { config } => {
            let l = valid!(config);
            print_files(&sdde_cli::measure(&l, &out_dir(cli, &l), workers)?);
        }
        Command::Phase { config } => {
            let l = valid!(config);
            print_files(&sdde_cli::phase(&l, &out_dir(cli, &l), workers)?);
        }
        Command::Figures { config } => {
            let l = valid!(config);
            print_files(&sdde_cli::figures(&l, &out_dir(cli, &l), workers)?);
        }
        Command::Stability { config, roots, toml } => {
            let l = valid!(config);
            let rep = pipeline::stability(&l.config, *roots)?;
            println!("# {}", l.config.provenance());
            print!("{}", pipeline::stability_text(&rep));
            if let Some(path) = toml {
                pipeline::write_stability_toml(&rep, &l.config.provenance(), path)?;
                println!("wrote {}", path.display());
            }
        }
        Command::Bounds { config } => {
            let l = valid!(config);
            let dir = out_dir(cli, &l);
            pipeline::ensure_dir(&dir)?;
            print_files(&pipeline::bound_curves(&l.config, &dir)?);
        }
        Command::Verify { config: Some(config), .. } => {
            let l = valid!(config);
            let v = sdde_cli::verify_config(&l, &out_dir(cli, &l), workers)?;
            print_files(&v.files);
            for line in &v.lines {
                println!("{line}");
            }
            println!("verify: {}", if v.pass { "PASS" } else { "FAIL" });
            if !v.pass {
                return Ok(ExitKind::Verification);
            }
        }
        Command::Verify { config: None, criteria } => {
            let outcomes = suite::run(criteria, workers, |o| println!("{o}"));
            let failed = outcomes.iter().filter(|o| !o.passed()).count();
            println!("verify: {} ({} of {} criteria passed)", if failed == 0 { "PASS" } else { "FAIL" }, outcomes.len() - failed, outcomes.len());
            if failed > 0 {
                return Ok(ExitKind::Verification);
            }
        }
        Command::Validate { config } => {
            let l = load(cli, config)?;
            let diags = l.config.diagnostics(&l.base_dir);
            for d in &diags {
                println!("{d}");
            }
            if config::has_errors(&diags) {
                return Ok(ExitKind::Validation);
            }
            if diags.is_empty() {
                println!("ok");
            }
        }
        Command::Presets { name: None } => {
            for (name, _) in config::PRESETS {
                println!("{name}");
            }
        }
        Command::Presets { name: Some(name) } => match config::preset(name) {
            Some(text) => print!("{text}"),
            None => anyhow::bail!("unknown preset `{name}`"),
        },
    }
    Ok(ExitKind::Ok)
}
