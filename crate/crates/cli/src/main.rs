use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::error;
use onebm::collect::SamplingPolicy;
use onebm::paths::TraversalMode;
use onebm::pipeline::{run_pipeline, PipelineConfig, PipelineError};
use onebm::transform::TransformConfig;

const EXIT_FATAL: u8 = 1;
const EXIT_USAGE: u8 = 2;

/// Generate a feature matrix from a relational database.
#[derive(Debug, Parser)]
#[command(name = "onebm", version)]
struct Args {
    /// Schema JSON file.
    #[arg(long)]
    schema: PathBuf,
    /// Directory with one CSV file per table.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV for the selected feature matrix.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    max_depth: u64,
    #[arg(long, default_value_t = TraversalMode::ForwardOnly)]
    mode: TraversalMode,
    /// Joined-tuple budget per path before sampling kicks in.
    #[arg(long, default_value_t = SamplingPolicy::default().max_joined_size, value_parser = clap::value_parser!(u64).range(1..))]
    max_joined_size: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file overriding transform parameters.
    #[arg(long)]
    transform_config: Option<PathBuf>,
    /// Also write `<out stem>.report.csv` listing removed features.
    #[arg(long)]
    report: bool,
    /// Print the path plan and collection statistics without writing features.
    #[arg(long)]
    explain: bool,
}

fn config(args: Args) -> Result<PipelineConfig, String> {
    let mut cfg = PipelineConfig::new(args.schema, args.data, args.out);
    cfg.max_depth = usize::try_from(args.max_depth).map_err(|e| e.to_string())?;
    cfg.mode = args.mode;
    cfg.policy = SamplingPolicy { max_joined_size: args.max_joined_size, seed: args.seed };
    if let Some(path) = &args.transform_config {
        cfg.transform_cfg = TransformConfig::from_json_file(path).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    cfg.emit_report = args.report;
    cfg.explain_only = args.explain;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let cfg = match config(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run_pipeline(&cfg) {
        Ok(outcome) => {
            if let Some(text) = outcome.explanation {
                print!("{text}");
            }
            ExitCode::SUCCESS
        }
        Err(e @ PipelineError::InvalidConfig(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FATAL)
        }
    }
}
