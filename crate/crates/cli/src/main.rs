//! `aoi-lab`: age-of-information vs. power tradeoff curves from scenario files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::Family;
use config::ConfigError;
use output::{Output, RunManifest};

const DEFAULT_SEED: u64 = 1;

const AFTER_HELP: &str = "\
Every CSV starts with `# manifest: <config digest>`, then a header row.
Numbers carry at most 12 significant digits.

  channel   channel_<variant>.csv   tau,power,energy
  curve     curve_ftt.csv, curve_p.csv      t_s,avg_age,avg_power,provenance
            curve_at.csv                    h_a,t_s,avg_age,avg_power,provenance
            curve_threshold.csv             beta,h,tau_a,tau_b,avg_age,avg_power,provenance
            curve_npopt.csv, curve_popt.csv beta,lambda,t_s,avg_age,avg_power,provenance
            curve_smdp.csv                  beta,avg_age,avg_power,provenance
  smdp      smdp_frontier.csv  beta,avg_age,avg_power,gain,iterations,converged,provenance
            smdp_policy.csv    beta,age,tau
  bounds    bounds.csv         p_c,a_l,a_n,tau_star
  sim       sim.csv            seed,avg_age,age_se,avg_power,power_se,deliveries,transmissions,preemptions
  fading    fading.csv         T,tau,power

Exit status: 0 success, 2 usage or configuration error, 3 infeasible
power budget, 1 anything else. AOI_LAB_THREADS caps worker threads.";

#[derive(Parser)]
#[command(name = "aoi-lab", version, about, after_help = AFTER_HELP)]
struct Cli {
    /// Scenario file (.toml, or .json with the same schema)
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Overwrite existing output files
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads (overrides AOI_LAB_THREADS)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also write a gnuplot script next to each plottable CSV
    #[arg(long, global = true)]
    plot: bool,
    /// Print the documented default scenario and exit
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Power table P(tau) over the action set
    Channel,
    /// Tradeoff curve for one policy family
    Curve {
        #[arg(long, value_enum)]
        family: Family,
    },
    /// Optimal policies over a beta sweep
    Smdp {
        /// Lagrange weights (comma separated); defaults to the solver grid
        #[arg(long, value_delimiter = ',')]
        beta: Vec<f64>,
    },
    /// Lower bounds on the average age over power budgets
    Bounds {
        /// Number of evenly spaced budgets between the extreme average powers
        #[arg(long, default_value_t = 20)]
        pc_grid: usize,
        /// Explicit budgets in mW (comma separated), instead of the grid
        #[arg(long, value_delimiter = ',')]
        pc: Vec<f64>,
    },
    /// Simulate the [policy] section
    Sim {
        /// Independent replications with seeds seed, seed+1, ...
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Per-slot trace file (single replication only)
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Block-fading power curves for several coherence times
    Fading {
        /// Coherence times in slots (comma separated)
        #[arg(long, value_delimiter = ',', default_values_t = [2u32, 10, 50])]
        coherence: Vec<u32>,
    },
}

impl Command {
    fn tag(&self) -> String {
        match self {
            Command::Channel => "channel".into(),
            Command::Curve { family } => format!("curve:{}", family.name()),
            Command::Smdp { .. } => "smdp".into(),
            Command::Bounds { .. } => "bounds".into(),
            Command::Sim { .. } => "sim".into(),
            Command::Fading { .. } => "fading".into(),
        }
    }
}

fn threads(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("AOI_LAB_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| ConfigError(format!("AOI_LAB_THREADS must be a positive integer, got {v:?}")).into()),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.print_defaults {
        print!("{}", config::DEFAULTS);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(ConfigError("no subcommand given; see --help".into()).into());
    };
    let Some(path) = cli.scenario.clone() else {
        return Err(ConfigError("--scenario is required".into()).into());
    };
    let threads = threads(cli.threads)?;
    if threads == Some(0) {
        return Err(ConfigError("thread count must be positive".into()).into());
    }
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let workers = threads.unwrap_or_else(rayon::current_num_threads);
    let cfg = config::load(&path)?;

    let out = Output {
        dir: cli.out.clone(),
        force: cli.force,
        plot: cli.plot,
    };
    let mut extra = Vec::new();
    if let Command::Sim { trace: Some(t), .. } = &command {
        extra.push(t.clone());
        output::exists_check(t, cli.force)?;
    }
    let tables = match &command {
        Command::Channel => commands::channel(&cfg)?,
        Command::Curve { family } => commands::curve(&cfg, *family, cli.seed)?,
        Command::Smdp { beta } => commands::smdp(&cfg, beta)?,
        Command::Bounds { pc_grid, pc } => commands::bounds(&cfg, *pc_grid, pc)?,
        Command::Sim { seeds, trace } => commands::sim(&cfg, cli.seed, *seeds, workers, trace.as_deref())?,
        Command::Fading { coherence } => commands::fading(&cfg, coherence)?,
    };
    let manifest = RunManifest {
        scenario: path,
        command: command.tag(),
        out_dir: cli.out,
        seed: cli.seed,
        version: env!("CARGO_PKG_VERSION"),
        config_digest: cfg.digest(),
        files: Vec::new(),
    };
    for p in out.write(&tables, manifest, &[])? {
        println!("{}", p.display());
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<ConfigError>()) {
        return 2;
    }
    match err.chain().find_map(|e| e.downcast_ref::<aoi_core::Error>()) {
        Some(e) if e.is_infeasible() => 3,
        Some(aoi_core::Error::InvalidParameter { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
