use clap::{Parser, Subcommand, ValueEnum};
use voxrca_cli::commands::{self, EvalKind, ExplainScope};
use voxrca_cli::config::RunConfig;
use voxrca_cli::CliError;
use voxrca_core::pipeline::Stage;

#[derive(Parser)]
#[command(
    name = "voxrca",
    about = "Synthetic multi-modal volumetric lesion pipeline with concept-based explanations",
    version
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,

    /// Override the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<String>,

    /// Cap the worker thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Detector,
    Classifier,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Stage {
        match s {
            StageArg::Detector => Stage::Detector,
            StageArg::Classifier => Stage::Classifier,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Global,
    Local,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalKindArg {
    Froc,
    Roc,
    FpReduction,
    PosthocFn,
}

impl From<EvalKindArg> for EvalKind {
    fn from(k: EvalKindArg) -> EvalKind {
        match k {
            EvalKindArg::Froc => EvalKind::Froc,
            EvalKindArg::Roc => EvalKind::Roc,
            EvalKindArg::FpReduction => EvalKind::FpReduction,
            EvalKindArg::PosthocFn => EvalKind::PosthocFn,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    PhantomGen,
    /// Train one pipeline stage.
    Train {
        #[arg(long, value_enum)]
        stage: StageArg,
    },
    /// Detect, filter and select operating points on the test cohort.
    RunPipeline,
    /// Emit global or local explanation reports for one stage.
    Explain {
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long, value_enum)]
        scope: ScopeArg,
        /// Sample id (e.g. test_0003:1); required for --scope local.
        #[arg(long)]
        sample: Option<String>,
    },
    /// Evaluation curves and reports.
    Eval {
        #[arg(long, value_enum)]
        kind: EvalKindArg,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            RunConfig::from_toml(&text)
                .map_err(|e| CliError::Config(format!("cannot parse {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot set thread count: {e}")))?;
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::PhantomGen => commands::cmd_phantom_gen(&cfg),
        Command::Train { stage } => commands::cmd_train(&cfg, (*stage).into()),
        Command::RunPipeline => commands::cmd_run_pipeline(&cfg),
        Command::Explain { stage, scope, sample } => {
            let scope = match scope {
                ScopeArg::Global => ExplainScope::Global,
                ScopeArg::Local => ExplainScope::Local {
                    sample: sample.clone().ok_or_else(|| {
                        CliError::Config("--scope local requires --sample <id>".into())
                    })?,
                },
            };
            commands::cmd_explain(&cfg, (*stage).into(), &scope)
        }
        Command::Eval { kind } => commands::cmd_eval(&cfg, (*kind).into()),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
