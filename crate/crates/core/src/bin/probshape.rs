use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use probshape::pipeline::{Pipeline, PipelineConfig, Stage, StageOutcome, FORMAT_VERSIONS, OUT_DIR_ENV};
use probshape::Result;

#[derive(Parser)]
#[command(name = "probshape", about = "Probabilistic shape descriptors from 3D images", disable_version_flag = true)]
struct Cli {
    /// Print the crate version and on-disk format versions.
    #[arg(long, short = 'V')]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct Common {
    /// Global seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "out")]
    out_dir: PathBuf,
    /// Rerun stages even when their inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample shapes and render their images.
    Generate {
        /// Number of training originals (pool size in principled mode).
        #[arg(long)]
        count: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the shape model and build the augmented training sets.
    Augment(Common),
    /// Train the networks.
    Train(Common),
    /// Predict test-set scores and uncertainties.
    Infer(Common),
    /// Reconstruct surfaces and measure errors.
    Evaluate(Common),
    /// Summary tables and box-plot data.
    Report(Common),
    /// Every stage in order.
    RunAll(Common),
}

fn pipeline(common: &Common, count: Option<usize>) -> Result<Pipeline> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(count) = count {
        cfg.data.count = count;
    }
    Ok(Pipeline::new(cfg, &common.out_dir)?.force(common.force).verbose(!common.quiet))
}

fn run_stage(common: &Common, count: Option<usize>, stage: Stage) -> Result<()> {
    let p = pipeline(common, count)?;
    match p.run_stage(stage)? {
        StageOutcome::Ran => eprintln!("{}: done", stage.name()),
        StageOutcome::Skipped => eprintln!("{}: up to date (use --force to rerun)", stage.name()),
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { count, common } => run_stage(&common, count, Stage::Generate),
        Command::Augment(c) => run_stage(&c, None, Stage::Augment),
        Command::Train(c) => run_stage(&c, None, Stage::Train),
        Command::Infer(c) => run_stage(&c, None, Stage::Infer),
        Command::Evaluate(c) => run_stage(&c, None, Stage::Evaluate),
        Command::Report(c) => run_stage(&c, None, Stage::Report),
        Command::RunAll(c) => {
            let summary = pipeline(&c, None)?.run_all()?;
            println!("{}", summary.to_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.version {
        println!("probshape {}", env!("CARGO_PKG_VERSION"));
        for (name, version) in FORMAT_VERSIONS {
            println!("{name} {version}");
        }
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("no command given; see `probshape --help`");
        return ExitCode::from(2);
    };
    match run(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

