//! pqlgei: sparse regularized PQL selection of genetic main effects and
//! gene-environment interactions in mixed models.
//!
//! Subcommands: `kinship` (build/cache K and K^D), `fit` (regularization
//! path), `cv` (k-fold cross-validation), `predict` (held-out scores from a
//! fitted model), `simulate` (benchmark harness on synthetic cohorts).

mod commands;
mod pipeline;

use anyhow::Result;
use clap::{ArgAction, Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "pqlgei", version, about)]
struct Cli {
    /// Worker threads (default: all cores; PQLGEI_THREADS overrides).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Treat partial path failures as fatal.
    #[arg(long, global = true, default_value_t = false)]
    strict: bool,
    /// Print iteration traces (variance-component fit).
    #[arg(long, global = true, default_value_t = false)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct InputArgs {
    /// PLINK .bed path (with --bim and --fam), or use --bfile.
    #[arg(long, requires = "bim", requires = "fam")]
    bed: Option<std::path::PathBuf>,
    #[arg(long)]
    bim: Option<std::path::PathBuf>,
    #[arg(long)]
    fam: Option<std::path::PathBuf>,
    /// PLINK prefix expanding to <prefix>.bed/.bim/.fam.
    #[arg(long, conflicts_with = "bed")]
    bfile: Option<std::path::PathBuf>,
    /// Phenotype/covariate table (header row, comma- or tab-separated).
    #[arg(long)]
    pheno: Option<std::path::PathBuf>,
    /// Sample id column in the tables.
    #[arg(long, default_value = "IID")]
    id_col: String,
    /// Phenotype column name.
    #[arg(long, default_value = "pheno")]
    pheno_col: String,
    /// Separate covariate table (defaults to the phenotype table).
    #[arg(long)]
    covar: Option<std::path::PathBuf>,
    /// Covariate column names, comma separated (intercept is implicit).
    #[arg(long, value_delimiter = ',')]
    covar_cols: Vec<String>,
    /// Exposure column name.
    #[arg(long)]
    exposure: Option<String>,
    /// Count copies of the .bim A2 allele instead of A1.
    #[arg(long, default_value_t = false)]
    count_a2: bool,
    /// Response family.
    #[arg(long, default_value = "binomial")]
    family: String,
    /// Estimate the dispersion parameter for binomial responses.
    #[arg(long, default_value_t = false)]
    phi_estimate: bool,
    /// Reuse a kinship cache written by `pqlgei kinship`.
    #[arg(long)]
    kinship: Option<std::path::PathBuf>,
    /// Eigendecomposition cache file (reused when the content hash matches).
    #[arg(long)]
    eigen_cache: Option<std::path::PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct GridArgs {
    /// Sparse-group mixing values, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.5])]
    rho: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    nlambda: usize,
    /// lambda_min / lambda_max (default 0.01, or 0.0001 when p < n).
    #[arg(long)]
    lambda_min_ratio: Option<f64>,
    /// Sequential strong-rule screening (--no-strong-rule disables).
    #[arg(long = "strong-rule", action = ArgAction::SetTrue, default_value_t = true,
          overrides_with = "no_strong_rule")]
    strong_rule: bool,
    #[arg(long = "no-strong-rule", action = ArgAction::SetTrue)]
    no_strong_rule: bool,
}

impl GridArgs {
    fn use_strong_rule(&self) -> bool {
        !self.no_strong_rule
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the kinship pair (K, K^D) and cache it.
    Kinship {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: std::path::PathBuf,
        /// Ignore an existing cache and recompute.
        #[arg(long, default_value_t = false)]
        no_cache: bool,
    },
    /// Fit the regularization path.
    Fit {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: std::path::PathBuf,
        /// Grid point written to the model file: "rho_index,lambda_index"
        /// (default: last lambda of the first rho path).
        #[arg(long)]
        model_index: Option<String>,
    },
    /// Cross-validate the (lambda, rho) grid and refit at the chosen point.
    Cv {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Number of folds.
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Select by the one-standard-error rule instead of the minimum.
        #[arg(long, default_value_t = false)]
        one_se: bool,
        #[arg(long)]
        out: std::path::PathBuf,
    },
    /// Score samples absent from a fitted model's training set.
    Predict {
        #[command(flatten)]
        input: InputArgs,
        /// Model file written by `fit` or `cv`.
        #[arg(long)]
        model: std::path::PathBuf,
        /// Optional file of sample ids to score (one per line).
        #[arg(long)]
        samples: Option<std::path::PathBuf>,
        #[arg(long)]
        out: std::path::PathBuf,
    },
    /// Simulation benchmark harness (or synthetic dataset emission).
    Simulate {
        #[command(flatten)]
        grid: GridArgs,
        /// key=value scenario file overriding the defaults.
        #[arg(long)]
        sim_config: Option<std::path::PathBuf>,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 500)]
        p: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        #[arg(short, long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Break the hierarchical structure of the simulated effects.
        #[arg(long, default_value_t = false)]
        anti_hierarchy: bool,
        /// Write a synthetic dataset instead of running the benchmark.
        #[arg(long, default_value_t = false)]
        emit_data: bool,
        #[arg(long)]
        out: std::path::PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var("PQLGEI_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Kinship { input, out, no_cache } => commands::kinship(&input, &out, no_cache),
        Command::Fit { input, grid, seed, out, model_index } => {
            commands::fit(&input, &grid, seed, &out, model_index.as_deref(), cli.strict, cli.verbose)
        }
        Command::Cv { input, grid, k, seed, one_se, out } => {
            commands::cv(&input, &grid, k, seed, one_se, &out, cli.strict, cli.verbose)
        }
        Command::Predict { input, model, samples, out } => {
            commands::predict(&input, &model, samples.as_deref(), &out)
        }
        Command::Simulate {
            grid,
            sim_config,
            n,
            p,
            reps,
            split,
            k,
            seed,
            anti_hierarchy,
            emit_data,
            out,
        } => commands::simulate(
            &grid,
            sim_config.as_deref(),
            n,
            p,
            reps,
            split,
            k,
            seed,
            anti_hierarchy,
            emit_data,
            &out,
        ),
    }
}
