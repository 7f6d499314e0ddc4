use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use evoharness_core::config::{load_config, ConfigFile};
use evoharness_core::descriptors::DescriptorBuilder;
use evoharness_core::evaluation::{Evaluator, ProblemPackage};
use evoharness_core::evolution::{run_search, Budget, SearchSetup};
use evoharness_core::gateway::{Gateway, OpenRouterTransport, Usd};
use evoharness_core::proxy::{evaluate_strategy, CalibrationMatrix, ObjectiveWeights, Strategy};
use evoharness_core::report::{emit_report, load_conditions};
use evoharness_core::Error;

#[derive(Parser)]
#[command(name = "evoharness", version, about = "Quality-diversity search over LLM-written programs and prompts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a search described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `run.rng_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to `runs/seed-<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize finished runs. Each argument is a run directory or a directory of runs
    /// forming one condition.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Held-out ranking quality of proxy-selection strategies on a score matrix.
    ProxyAblate {
        /// CSV with a header of example ids and one row per candidate (first column: id).
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "5")]
        n_init: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "35")]
        k_proxy: Vec<usize>,
        #[arg(long, default_value_t = 60)]
        splits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "css,kmedoids,ridge")]
        strategy: Vec<StrategyArg>,
        /// Ridge penalty for the random-subset baseline.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Css,
    Kmedoids,
    Ridge,
    Full,
}

impl StrategyArg {
    fn strategy(self, lambda: f64) -> Strategy {
        match self {
            StrategyArg::Css => Strategy::CssMean {
                weights: ObjectiveWeights::default(),
            },
            StrategyArg::Kmedoids => Strategy::KMedoids,
            StrategyArg::Ridge => Strategy::RandomRidge { lambda },
            StrategyArg::Full => Strategy::FullMean,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, seed, out } => run(&config, seed, out),
        Command::Report { dirs, out } => report(&dirs, &out),
        Command::ProxyAblate {
            matrix,
            n_init,
            k_proxy,
            splits,
            seed,
            strategy,
            lambda,
        } => proxy_ablate(&matrix, &n_init, &k_proxy, splits, seed, &strategy, lambda),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Precondition(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> evoharness_core::Result<()> {
    let mut cfg: ConfigFile = load_config(config_path)?;
    if let Some(s) = seed {
        cfg.run.rng_seed = s;
    }
    let problem = Arc::new(ProblemPackage::load(&cfg.problem)?);
    let registry = cfg.registry()?;
    let descriptors = DescriptorBuilder::new(cfg.descriptor_spec(problem.artifact_kind()));
    descriptors.spec().validate(&problem.discovery_set)?;

    let out_dir = out.unwrap_or_else(|| PathBuf::from(format!("runs/seed-{}", cfg.run.rng_seed)));
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml()?)?;

    let transport = OpenRouterTransport::from_env(cfg.models.base_url.clone(), &cfg.models.api_key_env)?;
    let mut gateway = Gateway::new(transport, registry.tariffs()?)
        .with_retry(cfg.retry_policy())
        .with_cost_log(&out_dir.join("costs.jsonl"))?;
    if let Budget::Usd(dollars) = cfg.run.budget {
        gateway = gateway.with_budget(Usd::from_dollars(dollars));
    }
    let gateway = Arc::new(gateway);
    let evaluator = Evaluator::from_package(problem.clone(), gateway.clone(), &registry, cfg.run.rng_seed)?;

    let setup = SearchSetup {
        evaluator,
        gateway: &gateway,
        registry,
        descriptors,
        config: cfg.run.clone(),
        out_dir: Some(out_dir.clone()),
    };
    let outcome = run_search(&setup)?;
    let best = outcome
        .best
        .as_ref()
        .map_or_else(|| "none".to_string(), |b| problem.direction.to_display(b.score).to_string());
    println!(
        "{} evaluations, best {best}, spent {}, stopped on {:?}; outputs in {}",
        outcome.eval_count,
        outcome.total_usd,
        outcome.stop_reason,
        out_dir.display()
    );
    Ok(())
}

fn report(dirs: &[PathBuf], out: &Path) -> evoharness_core::Result<()> {
    let conditions = load_conditions(dirs)?;
    let report = emit_report(&conditions, out)?;
    println!("{}", report.markdown);
    for f in &report.files {
        log::info!("wrote {}", f.display());
    }
    Ok(())
}

fn proxy_ablate(
    matrix_path: &Path,
    n_inits: &[usize],
    k_proxies: &[usize],
    splits: usize,
    seed: u64,
    strategies: &[StrategyArg],
    lambda: f64,
) -> evoharness_core::Result<()> {
    let file = std::fs::File::open(matrix_path)
        .map_err(|e| Error::Config(format!("opening {}: {e}", matrix_path.display())))?;
    let matrix = CalibrationMatrix::read_csv(file)?;
    println!("strategy,n_init,k_proxy,mean_rho,degenerate_splits");
    for s in strategies {
        for &n_init in n_inits {
            for &k in k_proxies {
                let r = evaluate_strategy(&matrix, s.strategy(lambda), n_init, k, splits, seed)?;
                println!("{},{},{},{},{}", r.strategy, r.n_init, r.k_proxy, r.mean_rho, r.degenerate_splits);
            }
        }
    }
    Ok(())
}
