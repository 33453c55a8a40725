use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use aircache_bench::{
    canonical_policies, run_grid, write_atomic, AllocationDoc, AudienceDoc, BenchError,
    EvictionDoc, Format, PolicyDoc, RunConfig, RunReport, ScorerDoc,
};

#[derive(Parser)]
#[command(
    name = "aircache",
    about = "Benchmark harness for attention-guided KV cache compression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Report destination; stdout when omitted and the config names no path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report serialization format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the policy grid declared in the config.
    Run(Common),
    /// Sweeps the relevance threshold for the attention-guided policy.
    SweepAlpha(Common),
    /// Compares the configured (or canonical) policy set.
    ComparePolicies(Common),
}

fn thread_cap() -> Result<Option<usize>, BenchError> {
    match std::env::var("AIRCACHE_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(BenchError::Config(
                "AIRCACHE_THREADS must be a positive integer".into(),
            )),
        },
    }
}

fn execute(
    common: &Common,
    policies: Vec<PolicyDoc>,
    config: &RunConfig,
) -> Result<(), BenchError> {
    let records = match thread_cap()? {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| BenchError::Config(e.to_string()))?;
            pool.install(|| run_grid(config, &policies))?
        }
        None => run_grid(config, &policies)?,
    };
    let report = RunReport::build(records);
    let content = report.render(common.format);
    let out = common
        .out
        .clone()
        .or_else(|| config.out_path.as_ref().map(PathBuf::from));
    match out {
        Some(path) => write_atomic(&path, &content)?,
        None => print!("{content}"),
    }
    Ok(())
}

type PolicySelector = fn(&RunConfig) -> Result<Vec<PolicyDoc>, BenchError>;

fn real_main(cli: Cli) -> Result<(), BenchError> {
    let (common, select): (&Common, PolicySelector) = match &cli.command {
        Command::Run(c) => (c, |cfg| {
            if cfg.policies.is_empty() {
                return Err(BenchError::Config(
                    "run requires at least one policy".into(),
                ));
            }
            Ok(cfg.policies.clone())
        }),
        Command::SweepAlpha(c) => (c, |_| {
            Ok(vec![PolicyDoc {
                scorer: ScorerDoc::EliteWindow { alpha: None },
                allocation: AllocationDoc::Aircache,
                eviction: EvictionDoc::Drop,
                audience: AudienceDoc::VisionOnly,
            }])
        }),
        Command::ComparePolicies(c) => (c, |cfg| {
            Ok(if cfg.policies.is_empty() {
                canonical_policies()
            } else {
                cfg.policies.clone()
            })
        }),
    };

    let text = std::fs::read_to_string(&common.config)?;
    let mut config = RunConfig::from_json(&text)?;
    if let Some(seed) = common.seed {
        config.base_seed = seed;
    }
    if config.normalize()? {
        eprintln!("warning: duplicate alpha values removed from the grid");
    }
    let policies = select(&config)?;
    execute(common, policies, &config)
}

fn main() {
    let cli = Cli::parse();
    let code = match real_main(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
