mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Relativistic diffusions: ψ tables, limiting variances and Monte Carlo runs.
#[derive(Debug, Parser)]
#[command(name = "reldiff", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the model hypotheses and print the report.
    Model(ModelCmd),
    /// Tabulate ψ_β on a radial grid.
    Psi(PsiCmd),
    /// Compute Σ_β² by one or more methods over a list of β.
    Sigma2(Sigma2Cmd),
    /// Monte Carlo estimate of the mean square displacement.
    Simulate(SimulateCmd),
}

#[derive(Debug, Clone, Args)]
pub struct ModelFlags {
    /// Model name: roup, dh or another registry entry.
    #[arg(long, default_value = "dh")]
    pub model: String,
    /// JSON model file; overrides --model, --beta and --d.
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Spatial dimension.
    #[arg(long, default_value_t = 1)]
    pub d: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ManifestFlags {
    /// Where to write the run manifest (default: next to --out, else stderr).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelCmd {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Outer radius of the hypothesis scan.
    #[arg(long, default_value_t = 200.0)]
    pub scan_r_max: f64,
    #[arg(long, default_value_t = 2000)]
    pub n_scan: usize,
    /// Also write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub manifest: ManifestFlags,
}

#[derive(Debug, Args)]
pub struct PsiCmd {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Truncation radius (default from β and ε).
    #[arg(long)]
    pub r_max: Option<f64>,
    /// Force the general construction even when d = 1.
    #[arg(long)]
    pub general: bool,
    #[arg(long, default_value_t = 1e-4)]
    pub residual_tol: f64,
    /// CSV destination (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub manifest: ManifestFlags,
}

#[derive(Debug, Args)]
pub struct Sigma2Cmd {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Comma-separated β values (default: --beta).
    #[arg(long, value_delimiter = ',')]
    pub beta_list: Vec<f64>,
    /// Comma-separated subset of prop2, lemma2, dh_d1, asymptotic.
    #[arg(long, value_delimiter = ',', default_value = "prop2")]
    pub methods: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub manifest: ManifestFlags,
}

#[derive(Debug, Args)]
pub struct SimulateCmd {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Time horizon.
    #[arg(long = "T", default_value_t = 1000.0)]
    pub t_end: f64,
    /// Number of trajectories.
    #[arg(long = "N", default_value_t = 1000)]
    pub n_paths: usize,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated β values; one ensemble per value.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Vec<f64>,
    /// Append a normality report of x_T / (Σ√T) to the summary.
    #[arg(long)]
    pub check_clt: bool,
    #[arg(long, default_value_t = 100)]
    pub bins: usize,
    /// CSV of the radial histogram against the equilibrium law.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    /// JSON run summary (default: next to --out, else stdout).
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub manifest: ManifestFlags,
}

/// Failure classes mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Numerical(_) => 2,
        }
    }
}

impl From<reldiff::Error> for Failure {
    fn from(e: reldiff::Error) -> Self {
        use reldiff::Error as E;
        match e {
            E::InvalidParameter(_) | E::UnknownModel(_) | E::Incompatible(_) => Failure::Config(e.into()),
            _ => Failure::Numerical(e.into()),
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("RELDIFF_THREADS") else {
        return Ok(());
    };
    let n: usize =
        raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            Failure::Config(anyhow::anyhow!("RELDIFF_THREADS must be a positive integer, got `{raw}`"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Config(anyhow::anyhow!("cannot size thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|_| commands::run(&cli));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let (Failure::Config(e) | Failure::Numerical(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
