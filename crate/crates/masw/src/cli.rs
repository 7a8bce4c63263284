//! Command-line interface: curve computation, model inversion, dataset
//! generation, and benchmarks.
//!
//! Data (curve files, reports, CSV) goes to the requested file or stdout;
//! progress and instrumentation go to stderr. Exit codes: 0 success, 1 for
//! computation failures such as an unbracketed root, 2 for usage, file, and
//! validation errors.

use std::path::PathBuf;
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use crate::batched::{BatchedConfig, GridStorage, DEFAULT_BLOCK_SIZE, DEFAULT_MEMORY_BUDGET};
use crate::bench::{bench_elimination, bench_strong, bench_weak, to_csv};
use crate::error::{Error, Result};
use crate::io::{
    expand_candidates, gen_uniform, gen_variable, read_curve, read_inversion_spec, read_model,
    render_curve, resolve_spec_path, write_curve, write_curve_annotated, write_text,
    reference_model, reference_sweep, VelocityTier, VARIABLE_DEFAULT_LENGTH,
};
use crate::model::VelocitySweep;
use crate::parallel::{load_balance_report, parallel_dispersion_curve, PartitionStrategy};
use crate::stiffness::TermsCache;
use crate::Engine;

#[derive(Debug, Parser)]
#[command(
    name = "masw",
    version,
    about = "Rayleigh-wave dispersion curves and inversion for layered earth models"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute a model's theoretical dispersion curve.
    Curve(CurveArgs),
    /// Rank candidate models against an experimental curve.
    Invert(InvertArgs),
    /// Generate a synthetic dataset from the bundled reference model.
    Gen(GenArgs),
    /// Run timing experiments and emit CSV.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EngineKind {
    Serial,
    Parallel,
    Batched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Contiguous,
    Modular,
}

impl StrategyArg {
    fn strategy(self) -> PartitionStrategy {
        match self {
            StrategyArg::Contiguous => PartitionStrategy::Contiguous,
            StrategyArg::Modular => PartitionStrategy::Modular,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TierArg {
    #[value(name = "72")]
    T72,
    #[value(name = "238")]
    T238,
    #[value(name = "256")]
    T256,
}

impl TierArg {
    fn tier(self) -> VelocityTier {
        match self {
            TierArg::T72 => VelocityTier::V72,
            TierArg::T238 => VelocityTier::V238,
            TierArg::T256 => VelocityTier::V256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DatasetKind {
    Uniform,
    Variable,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Lowest test velocity (m/s).
    #[arg(long, default_value_t = 50.0)]
    v_min: f64,
    /// Highest test velocity (m/s).
    #[arg(long, default_value_t = 500.0)]
    v_max: f64,
    /// Velocity grid spacing (m/s).
    #[arg(long, default_value_t = 0.5)]
    v_step: f64,
}

impl SweepArgs {
    fn sweep(&self) -> VelocitySweep {
        VelocitySweep::new(self.v_min, self.v_max, self.v_step)
    }
}

fn build_engine(
    kind: EngineKind,
    workers: usize,
    strategy: StrategyArg,
    block_size: usize,
    memory_budget: u64,
    compact_grid: bool,
) -> Engine {
    match kind {
        EngineKind::Serial => Engine::Serial,
        EngineKind::Parallel => Engine::Parallel {
            workers,
            strategy: strategy.strategy(),
        },
        EngineKind::Batched => Engine::Batched(BatchedConfig {
            block_size,
            storage: if compact_grid {
                GridStorage::Signs
            } else {
                GridStorage::Values
            },
            memory_budget,
            threads: 0,
        }),
    }
}

#[derive(Debug, Args)]
struct EngineArgs {
    /// Execution engine; all engines produce identical results.
    #[arg(long, value_enum, default_value_t = EngineKind::Serial)]
    engine: EngineKind,
    /// Worker threads (parallel engine).
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// How wavelengths map onto workers (parallel engine).
    #[arg(long, value_enum, default_value_t = StrategyArg::Contiguous)]
    strategy: StrategyArg,
    /// Velocities per search block (batched engine).
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: usize,
    /// Grid allocation limit in bytes (batched engine).
    #[arg(long, default_value_t = DEFAULT_MEMORY_BUDGET)]
    memory_budget: u64,
    /// Store determinant signs instead of values in the batched grid.
    #[arg(long)]
    compact_grid: bool,
}

impl EngineArgs {
    fn to_engine(&self) -> Engine {
        build_engine(
            self.engine,
            self.workers,
            self.strategy,
            self.block_size,
            self.memory_budget,
            self.compact_grid,
        )
    }
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("points").required(true).args(["wavelengths", "curve"])))]
struct CurveArgs {
    /// Model file (TOML).
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated wavelengths in metres.
    #[arg(long, value_delimiter = ',')]
    wavelengths: Vec<f64>,
    /// Take the wavelengths from an existing curve file instead.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Output curve file; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    sweep: SweepArgs,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
struct InvertArgs {
    /// Inversion spec file (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Also write the report to this file.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Report per-candidate seconds as 0 for reproducible output.
    #[arg(long)]
    deterministic: bool,
    /// Override the spec's engine selection.
    #[arg(long, value_enum)]
    engine: Option<EngineKind>,
    /// Worker threads (with --engine parallel).
    #[arg(long, requires = "engine", default_value_t = 1)]
    workers: usize,
    /// Partition strategy (with --engine parallel).
    #[arg(long, value_enum, requires = "engine", default_value_t = StrategyArg::Contiguous)]
    strategy: StrategyArg,
    /// Velocities per search block (with --engine batched).
    #[arg(long, requires = "engine", default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: usize,
    /// Grid allocation limit in bytes (batched engine).
    #[arg(long, default_value_t = DEFAULT_MEMORY_BUDGET)]
    memory_budget: u64,
    /// Store determinant signs instead of values in the batched grid.
    #[arg(long)]
    compact_grid: bool,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    dataset: DatasetKind,
    /// Target velocity for the uniform dataset (m/s).
    #[arg(long, value_enum, required_if_eq("dataset", "uniform"))]
    tier: Option<TierArg>,
    /// Entry count; defaults to 1000 (uniform) or 40 (variable).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    length: Option<u64>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Subcommand)]
enum BenchCommand {
    /// Fixed dataset, growing worker counts.
    Strong {
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 4, 8])]
        workers: Vec<usize>,
        #[arg(long, value_enum, default_value_t = DatasetKind::Uniform)]
        dataset: DatasetKind,
        /// Dataset entry count; defaults to 1000 (uniform) or 40 (variable).
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        length: Option<u64>,
        #[arg(long, value_enum, default_value_t = TierArg::T238)]
        tier: TierArg,
        #[arg(long, value_enum, default_value_t = StrategyArg::Contiguous)]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// CSV output file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Dataset length grows with the worker count.
    Weak {
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 4, 8])]
        workers: Vec<usize>,
        /// Uniform entries per worker.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..), default_value_t = 1000)]
        base_length: u64,
        #[arg(long, value_enum, default_value_t = TierArg::T238)]
        tier: TierArg,
        #[arg(long, value_enum, default_value_t = StrategyArg::Contiguous)]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Banded vs dense determinant kernel times per matrix order.
    Elimination {
        #[arg(long, value_delimiter = ',', default_values_t = vec![4, 14, 30, 62])]
        orders: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Curve(args) => cmd_curve(args),
        Command::Invert(args) => cmd_invert(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

fn cmd_curve(args: &CurveArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let wavelengths = match &args.curve {
        Some(path) => read_curve(path)?.wavelengths,
        None => args.wavelengths.clone(),
    };
    let sweep = args.sweep.sweep();
    let engine = args.engine.to_engine();

    let started = Instant::now();
    let (curve, determinants) = match &engine {
        Engine::Parallel { workers, strategy } => {
            let (curve, determinants, stats) =
                parallel_dispersion_curve(&model, &wavelengths, &sweep, *workers, *strategy)?;
            eprint!("{}", load_balance_report(&stats));
            (curve, determinants)
        }
        other => other.curve(&model, &wavelengths, &sweep)?,
    };
    eprintln!(
        "engine {}: {} wavelengths, {} determinants, {:.6} s",
        engine.name(),
        curve.len(),
        determinants,
        started.elapsed().as_secs_f64()
    );

    match &args.output {
        Some(path) => write_curve(path, &curve),
        None => {
            print!("{}", render_curve(&curve, &[]));
            Ok(())
        }
    }
}

fn cmd_invert(args: &InvertArgs) -> Result<()> {
    let spec = read_inversion_spec(&args.spec)?;
    let experimental = read_curve(&resolve_spec_path(&args.spec, &spec.experimental))?;
    let candidates = expand_candidates(&spec)?;
    let mut engine = match args.engine {
        Some(kind) => build_engine(
            kind,
            args.workers,
            args.strategy,
            args.block_size,
            args.memory_budget,
            args.compact_grid,
        ),
        None => spec.engine.to_engine(args.memory_budget),
    };
    if args.compact_grid {
        if let Engine::Batched(config) = &mut engine {
            config.storage = GridStorage::Signs;
        }
    }

    let velocities = spec.sweep.materialize()?;
    let mut cache = TermsCache::new();
    let mut report = format!(
        "# inversion: {} candidates, engine {}, sweep {} to {} m/s step {}\n\
         candidate,misfit,determinants,seconds\n",
        candidates.len(),
        engine.name(),
        spec.sweep.v_min,
        spec.sweep.v_max,
        spec.sweep.v_step
    );
    let mut best: Option<(usize, f64)> = None;
    for (id, model) in candidates.iter().enumerate() {
        let table = cache.table(model, &velocities);
        let started = Instant::now();
        let outcome = engine.evaluate_with_table(model, &experimental, &table);
        let seconds = if args.deterministic {
            0.0
        } else {
            started.elapsed().as_secs_f64()
        };
        match outcome {
            Ok(result) => {
                report.push_str(&format!(
                    "{id},{:.16e},{},{seconds:.6}\n",
                    result.misfit, result.determinants_computed
                ));
                if best.is_none_or(|(_, misfit)| result.misfit < misfit) {
                    best = Some((id, result.misfit));
                }
            }
            // a candidate whose sweep brackets no root is reported but
            // cannot win; any other failure aborts the inversion
            Err(Error::NoSignChange { .. }) => {
                report.push_str(&format!("{id},na,0,{seconds:.6}\n"));
            }
            Err(other) => return Err(other),
        }
    }
    if let Some((id, _)) = best {
        report.push_str(&format!("# best: {id}\n"));
    }

    print!("{report}");
    if let Some(path) = &args.output {
        write_text(path, &report)?;
    }
    match best {
        Some(_) => Ok(()),
        None => Err(Error::AllCandidatesFailed),
    }
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let (curve, annotations) = match args.dataset {
        DatasetKind::Uniform => {
            let tier = args.tier.expect("clap enforces --tier for uniform").tier();
            let length = args.length.unwrap_or(1000) as usize;
            let curve = gen_uniform(length, tier)?;
            let annotations = vec![
                ("dataset".to_string(), "uniform".to_string()),
                ("tier".to_string(), tier.to_string()),
                ("length".to_string(), length.to_string()),
            ];
            (curve, annotations)
        }
        DatasetKind::Variable => {
            let length = args.length.unwrap_or(VARIABLE_DEFAULT_LENGTH as u64) as usize;
            let curve = gen_variable(length)?;
            let annotations = vec![
                ("dataset".to_string(), "variable".to_string()),
                ("length".to_string(), length.to_string()),
            ];
            (curve, annotations)
        }
    };
    write_curve_annotated(&args.output, &curve, &annotations)?;
    eprintln!("wrote {} rows to {}", curve.len(), args.output.display());
    Ok(())
}

fn cmd_bench(command: &BenchCommand) -> Result<()> {
    let (records, output) = match command {
        BenchCommand::Strong {
            workers,
            dataset,
            length,
            tier,
            strategy,
            reps,
            output,
        } => {
            let (experimental, name) = match dataset {
                DatasetKind::Uniform => (
                    gen_uniform(length.unwrap_or(1000) as usize, tier.tier())?,
                    "uniform",
                ),
                DatasetKind::Variable => (
                    gen_variable(length.unwrap_or(VARIABLE_DEFAULT_LENGTH as u64) as usize)?,
                    "variable",
                ),
            };
            let records = bench_strong(
                &reference_model(),
                &experimental,
                &reference_sweep(),
                name,
                workers,
                strategy.strategy(),
                *reps,
            )?;
            (records, output)
        }
        BenchCommand::Weak {
            workers,
            base_length,
            tier,
            strategy,
            reps,
            output,
        } => {
            let records = bench_weak(
                &reference_model(),
                &reference_sweep(),
                tier.tier(),
                *base_length as usize,
                workers,
                strategy.strategy(),
                *reps,
            )?;
            (records, output)
        }
        BenchCommand::Elimination {
            orders,
            reps,
            output,
        } => (bench_elimination(orders, *reps)?, output),
    };
    let csv = to_csv(&records);
    match output {
        Some(path) => write_text(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
