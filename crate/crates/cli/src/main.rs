use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use monobmd::parallel::Execution;
use monobmd_cli::{run_analysis, run_sim, AnalysisRequest, CliError};

#[derive(Parser)]
#[command(name = "monobmd", version, about = "Monotone spline benchmark-dose analysis")]
struct Cli {
    /// Worker threads for the bootstrap and the simulation study (0 = all cores).
    #[arg(long, global = true, env = "BMD_THREADS", default_value_t = 0)]
    threads: usize,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a data file and report the benchmark dose with three lower limits.
    Analyze(AnalyzeArgs),
    /// Run the coverage and timing study described by a TOML file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
    },
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Comma-delimited file with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    response_col: String,
    #[arg(long, default_value = "x")]
    exposure_col: String,
    /// Repeat for several covariates.
    #[arg(long = "covariate-col")]
    covariate_cols: Vec<String>,
    #[arg(long)]
    log1p_exposure: bool,
    #[arg(long, default_value_t = 0.025)]
    p0: f64,
    #[arg(long, default_value_t = 0.01)]
    p_plus: f64,
    #[arg(long, default_value_t = 0.0)]
    x0: f64,
    /// Upper end of the search interval (default: largest exposure).
    #[arg(long)]
    xmax: Option<f64>,
    #[arg(long, default_value_t = 20)]
    basis_count: usize,
    #[arg(long = "boot-m", default_value_t = 1000)]
    boot_m: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    alpha_level: f64,
    #[arg(long)]
    output_dir: PathBuf,
}

impl From<AnalyzeArgs> for AnalysisRequest {
    fn from(a: AnalyzeArgs) -> Self {
        AnalysisRequest {
            data_path: a.data,
            response_col: a.response_col,
            exposure_col: a.exposure_col,
            covariate_cols: a.covariate_cols,
            log1p_exposure: a.log1p_exposure,
            p0: a.p0,
            p_plus: a.p_plus,
            x0: a.x0,
            xmax: a.xmax,
            basis_count: a.basis_count,
            boot_m: a.boot_m,
            seed: a.seed,
            alpha_level: a.alpha_level,
            output_dir: a.output_dir,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::Analyze(args) => {
            let req = AnalysisRequest::from(args);
            let out = run_analysis(&req, exec)?;
            let r = &out.report;
            println!("BMD        {:.6}", r.bmd);
            println!("BMDL delta {:.6}{}", r.bmdl.delta, if r.bmdl.delta_below_x0 { "  (below x0)" } else { "" });
            println!("BMDL pivot {:.6}", r.bmdl.pivot);
            println!("BMDL boot  {:.6}", r.bmdl.boot);
            println!("wrote {}", req.output_dir.display());
        }
        Command::Simulate { config, output_dir } => {
            let rows = run_sim(&config, &output_dir, exec)?;
            println!("{} cells written to {}", rows.len(), output_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("monobmd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
