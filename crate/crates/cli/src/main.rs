use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use satstereo::pipeline::PipelineError;

mod commands;

#[derive(Parser)]
#[command(name = "satstereo", version, about = "Satellite stereo: rectification, matching, DSM generation and evaluation")]
struct Cli {
    /// More log output (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    /// Root directory for external-matcher scratch files.
    #[arg(long, global = true, env = "SATSTEREO_SCRATCH", value_name = "DIR")]
    scratch: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rectify a pair and write the homographies and warped images.
    Rectify(commands::RectifyArgs),
    /// Dense matching of a rectified pair with left-right filtering.
    Match(commands::MatchArgs),
    /// Turn a rectified disparity map into a UTM point cloud.
    Triangulate(commands::TriangulateArgs),
    /// Rasterize and mosaic point clouds into a DSM.
    Dsm(commands::DsmArgs),
    /// Compare a DSM with ground truth.
    Eval(commands::EvalArgs),
    /// Run the full pipeline from a config file.
    Run(commands::RunArgs),
    /// Sort stereo pairs into favorable and challenging geometries.
    ClassifyPairs(commands::ClassifyArgs),
    /// Render a synthetic test scene with a ready-to-run config.
    SynthScene(commands::SynthArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(dir) = &cli.scratch {
        std::env::set_var(satstereo::matching::SCRATCH_ENV, dir);
    }
    let result = match cli.command {
        Command::Rectify(a) => commands::rectify(a),
        Command::Match(a) => commands::match_pair(a),
        Command::Triangulate(a) => commands::triangulate(a),
        Command::Dsm(a) => commands::dsm(a),
        Command::Eval(a) => commands::eval(a),
        Command::Run(a) => commands::run(a),
        Command::ClassifyPairs(a) => commands::classify(a),
        Command::SynthScene(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let PipelineError::Adapter { stderr, .. } = &e {
                if !stderr.is_empty() {
                    eprintln!("adapter stderr:\n{stderr}");
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
