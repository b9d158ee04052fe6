//! `hdma` command line: fit, predict, infer, simulate and bench-solvers.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hdma::data::{load_csv, load_matrix_csv, Dataset, ResponseCol};
use hdma::error::HdmaError;
use hdma::loss::LossKind;
use hdma::pipeline::{fit_hdma, infer_hdma, prepare_fit, HdmaConfig, HdmaModel, InferParams};
use hdma::sim::{run_replications, SimConfig};
use hdma::solver::PenaltyKind;
use hdma::weights::{fgma_solve, gma_solve, FgmaConfig, GmaConfig, WeightAlgorithm};

#[derive(Parser)]
#[command(
    name = "hdma",
    version,
    about = "High-dimensional model averaging via cross-validation",
    after_help = "Exit codes: 0 success, 1 usage/data error, 2 internal numerical failure.\n\
                  Set HDMA_LOG=debug for verbose logging."
)]
struct Cli {
    /// Cap the worker thread pool (default: all cores). Thread count 1 is
    /// the reproducibility reference.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PenaltyArg {
    Lasso,
    Scad,
    Mcp,
}

impl PenaltyArg {
    fn build(self, scad_a: f64, mcp_gamma: f64) -> PenaltyKind {
        match self {
            PenaltyArg::Lasso => PenaltyKind::Lasso,
            PenaltyArg::Scad => PenaltyKind::Scad { a: scad_a },
            PenaltyArg::Mcp => PenaltyKind::Mcp { gamma: mcp_gamma },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Squared,
    Logistic,
}

impl From<LossArg> for LossKind {
    fn from(v: LossArg) -> Self {
        match v {
            LossArg::Squared => LossKind::Squared,
            LossArg::Logistic => LossKind::Logistic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Fgma,
    Gma,
}

#[derive(Args)]
struct InputArgs {
    /// Input CSV (response + covariate columns).
    #[arg(long)]
    input: PathBuf,

    /// Response column: header name, or 0-based column index.
    #[arg(long, default_value = "y")]
    response: String,

    /// Treat the first row as data, not a header.
    #[arg(long)]
    no_header: bool,
}

impl InputArgs {
    fn load(&self) -> Result<Dataset, HdmaError> {
        let has_header = !self.no_header;
        let response = if has_header {
            ResponseCol::Name(self.response.clone())
        } else {
            let idx: usize = self.response.parse().map_err(|_| {
                HdmaError::Config(format!(
                    "--response must be a 0-based column index for header-less files, got {:?}",
                    self.response
                ))
            })?;
            ResponseCol::Index(idx)
        };
        match (&response, load_csv(&self.input, &response, has_header)) {
            (_, Ok(d)) => Ok(d),
            // A named response that parses as an index is retried by index.
            (ResponseCol::Name(name), Err(HdmaError::MissingResponse(_)))
                if name.parse::<usize>().is_ok() =>
            {
                let idx = name.parse::<usize>().unwrap();
                load_csv(&self.input, &ResponseCol::Index(idx), has_header)
            }
            (_, Err(e)) => Err(e),
        }
    }
}

#[derive(Args)]
struct FitFlags {
    /// Penalty family for candidate fits.
    #[arg(long, value_enum, default_value_t = PenaltyArg::Lasso)]
    penalty: PenaltyArg,

    /// SCAD concavity parameter.
    #[arg(long, default_value_t = 3.7)]
    scad_a: f64,

    /// MCP concavity parameter.
    #[arg(long, default_value_t = 3.0)]
    mcp_gamma: f64,

    /// Loss function.
    #[arg(long, value_enum, default_value_t = LossArg::Squared)]
    loss: LossArg,

    /// Number of nested candidate models.
    #[arg(long, default_value_t = 4)]
    k_ne: usize,

    /// Non-nested group size.
    #[arg(long, default_value_t = 10)]
    d2: usize,

    /// Folds for the weight criterion.
    #[arg(long, default_value_t = 5)]
    folds: usize,

    /// Folds for tuning-parameter selection.
    #[arg(long, default_value_t = 10)]
    cv_folds: usize,

    /// Lambda grid size for tuning-parameter selection.
    #[arg(long, default_value_t = 100)]
    grid_size: usize,

    /// Weight solver.
    #[arg(long, value_enum, default_value_t = AlgorithmArg::Fgma)]
    algorithm: AlgorithmArg,

    /// Skip covariate standardization.
    #[arg(long)]
    no_standardize: bool,

    /// Add an unpenalized intercept.
    #[arg(long)]
    intercept: bool,

    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl FitFlags {
    fn config(&self) -> HdmaConfig {
        let mut cfg = HdmaConfig {
            penalty: self.penalty.build(self.scad_a, self.mcp_gamma),
            loss: self.loss.into(),
            k_ne: self.k_ne,
            d2: self.d2,
            j_folds: self.folds,
            cv_folds: self.cv_folds,
            grid_size: self.grid_size,
            seed: self.seed,
            standardize: !self.no_standardize,
            algorithm: match self.algorithm {
                AlgorithmArg::Fgma => WeightAlgorithm::Fgma,
                AlgorithmArg::Gma => WeightAlgorithm::Gma,
            },
            ..HdmaConfig::default()
        };
        cfg.fit.intercept = self.intercept;
        cfg
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model-averaging estimator and write the model file.
    Fit {
        #[command(flatten)]
        input: InputArgs,

        #[command(flatten)]
        flags: FitFlags,

        #[arg(long)]
        output_dir: PathBuf,
    },

    /// Apply a fitted model to new covariate rows.
    Predict {
        /// Model file from `hdma fit`.
        #[arg(long)]
        model: PathBuf,

        /// Covariate-only CSV with the same p as the training data.
        #[arg(long)]
        input: PathBuf,

        #[arg(long)]
        no_header: bool,

        #[arg(long)]
        output_dir: PathBuf,
    },

    /// Post-averaging simultaneous confidence intervals.
    Infer {
        /// Model file from `hdma fit`.
        #[arg(long)]
        model: PathBuf,

        #[command(flatten)]
        input: InputArgs,

        /// Multiplier bootstrap replications.
        #[arg(long = "B", default_value_t = 500)]
        b: usize,

        #[arg(long, default_value_t = 0.05)]
        alpha: f64,

        /// Comma-separated 1-based covariate indices, or "all".
        #[arg(long = "G", default_value = "all")]
        g: String,

        /// CLIME tuning parameter; default sqrt(log p / n).
        #[arg(long)]
        gamma_n: Option<f64>,

        /// Debias with the raw (unsymmetrized) CLIME estimate.
        #[arg(long)]
        use_raw_w: bool,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        #[arg(long)]
        output_dir: PathBuf,
    },

    /// Run the replication harness from a JSON config.
    Simulate {
        /// SimConfig JSON file; missing fields take defaults.
        #[arg(long)]
        config: PathBuf,

        #[arg(long)]
        output_dir: PathBuf,
    },

    /// Compare the FGMA and GMA weight solvers on one synthetic fit.
    BenchSolvers {
        #[command(flatten)]
        input: InputArgs,

        #[command(flatten)]
        flags: FitFlags,

        /// Iteration budget for both solvers.
        #[arg(long, default_value_t = 500)]
        max_iter: usize,

        #[arg(long)]
        output_dir: PathBuf,
    },
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, HdmaError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| HdmaError::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<(), HdmaError> {
    fs::create_dir_all(dir).map_err(|e| HdmaError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn to_pretty_json<T: serde::Serialize>(value: &T) -> Result<String, HdmaError> {
    serde_json::to_string_pretty(value).map_err(|e| HdmaError::Config(e.to_string()))
}

fn parse_g(raw: &str, p: usize) -> Result<Vec<usize>, HdmaError> {
    if raw.trim().eq_ignore_ascii_case("all") {
        return Ok((0..p).collect());
    }
    raw.split(',')
        .map(|tok| {
            let idx: usize = tok.trim().parse().map_err(|_| {
                HdmaError::Config(format!("--G expects 1-based indices or 'all', got {tok:?}"))
            })?;
            if idx == 0 || idx > p {
                return Err(HdmaError::Config(format!(
                    "--G index {idx} out of range 1..={p}"
                )));
            }
            Ok(idx - 1)
        })
        .collect()
}

fn summarize_model(model: &HdmaModel) -> String {
    let nnz = model.beta_ma.iter().filter(|v| **v != 0.0).count();
    let mut top: Vec<(usize, f64)> = model
        .weights
        .w
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 1e-8)
        .map(|(k, w)| (k, *w))
        .collect();
    top.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let weights_line = top
        .iter()
        .take(8)
        .map(|(k, w)| format!("A_{} ({:.0} vars): {:.4}", k + 1, model.candidate_set.groups[*k].len(), w))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "hdma fit summary\n\
         ----------------\n\
         observations: {}\n\
         covariates:   {}\n\
         candidates:   {} ({} nested, d1={}, p0={}, d2={})\n\
         lambda_n:     {:.6}\n\
         weights >1e-8: {}\n\
         final CV/n:   {:.6}\n\
         solver:       {:?} ({} iterations, terminated by {:?})\n\
         nonzero averaged coefficients: {}\n",
        model.n,
        model.p,
        model.candidate_set.k(),
        model.candidate_set.k_ne,
        model.candidate_set.d1,
        model.candidate_set.p0,
        model.candidate_set.d2,
        model.candidate_set.lambda_n,
        weights_line,
        model.weights.final_cv_over_n(),
        model.weights.algorithm,
        model.weights.iterations,
        model.weights.terminated_by,
        nnz,
    )
}

fn run(cli: Cli) -> Result<(), HdmaError> {
    match cli.command {
        Command::Fit {
            input,
            flags,
            output_dir,
        } => {
            let dataset = input.load()?;
            let cfg = flags.config();
            ensure_dir(&output_dir)?;
            let model = fit_hdma(&dataset, &cfg)?;
            write_file(&output_dir, "config.json", &to_pretty_json(&cfg)?)?;
            write_file(&output_dir, "model.json", &model.to_json()?)?;
            write_file(&output_dir, "weights.json", &to_pretty_json(&model.weights)?)?;
            let mut traj = Vec::new();
            model
                .weights
                .write_trajectory_csv(&mut traj)
                .map_err(|e| HdmaError::Config(e.to_string()))?;
            write_file(&output_dir, "trajectory.csv", &String::from_utf8_lossy(&traj))?;
            write_file(&output_dir, "summary.txt", &summarize_model(&model))?;
            println!("{}", summarize_model(&model));
            println!("model written to {}", output_dir.join("model.json").display());
            Ok(())
        }

        Command::Predict {
            model,
            input,
            no_header,
            output_dir,
        } => {
            let model_json = fs::read_to_string(&model).map_err(|e| HdmaError::Io {
                path: model.clone(),
                source: e,
            })?;
            let model = HdmaModel::from_json(&model_json)?;
            let (x, _) = load_matrix_csv(&input, !no_header)?;
            let preds = model.predict_response(&x)?;
            ensure_dir(&output_dir)?;
            let mut csv = String::from("prediction\n");
            for v in preds.iter() {
                csv.push_str(&format!("{v}\n"));
            }
            write_file(&output_dir, "predictions.csv", &csv)?;
            println!(
                "{} predictions written to {}",
                preds.len(),
                output_dir.join("predictions.csv").display()
            );
            Ok(())
        }

        Command::Infer {
            model,
            input,
            b,
            alpha,
            g,
            gamma_n,
            use_raw_w,
            seed,
            output_dir,
        } => {
            let model_json = fs::read_to_string(&model).map_err(|e| HdmaError::Io {
                path: model.clone(),
                source: e,
            })?;
            let model = HdmaModel::from_json(&model_json)?;
            let dataset = input.load()?;
            let params = InferParams {
                b,
                alpha,
                g: parse_g(&g, model.p)?,
                gamma_n,
                seed,
                use_raw_w,
            };
            let result = infer_hdma(&dataset, &model, &params)?;
            ensure_dir(&output_dir)?;
            write_file(&output_dir, "config.json", &to_pretty_json(&params)?)?;
            write_file(&output_dir, "inference.json", &to_pretty_json(&result)?)?;
            let mut csv = Vec::new();
            result
                .write_csv(&mut csv)
                .map_err(|e| HdmaError::Config(e.to_string()))?;
            write_file(&output_dir, "intervals.csv", &String::from_utf8_lossy(&csv))?;
            let n_sig = result.intervals.iter().filter(|iv| iv.significant()).count();
            println!(
                "Q_hat = {:.6}; {} of {} intervals exclude zero; written to {}",
                result.q_hat,
                n_sig,
                result.intervals.len(),
                output_dir.join("intervals.csv").display()
            );
            Ok(())
        }

        Command::Simulate { config, output_dir } => {
            let raw = fs::read_to_string(&config).map_err(|e| HdmaError::Io {
                path: config.clone(),
                source: e,
            })?;
            let cfg: SimConfig = serde_json::from_str(&raw)
                .map_err(|e| HdmaError::Config(format!("invalid simulate config: {e}")))?;
            cfg.validate()?;
            ensure_dir(&output_dir)?;
            let report = run_replications(&cfg)?;
            write_file(&output_dir, "config.json", &to_pretty_json(&report.config)?)?;
            write_file(&output_dir, "report.json", &report.to_json()?)?;
            let mut csv = Vec::new();
            report
                .write_csv(&mut csv)
                .map_err(|e| HdmaError::Config(e.to_string()))?;
            write_file(&output_dir, "report.csv", &String::from_utf8_lossy(&csv))?;
            if cfg.save_trajectories {
                for (mi, method) in report.methods.iter().enumerate() {
                    if let Some(trajs) = &method.trajectories {
                        for (ri, traj) in trajs.iter().enumerate() {
                            let mut out = String::from("iteration,cv_over_n\n");
                            for (i, v) in traj.iter().enumerate() {
                                out.push_str(&format!("{i},{v}\n"));
                            }
                            write_file(
                                &output_dir,
                                &format!("trajectory_m{}_rep{}.csv", mi + 1, ri + 1),
                                &out,
                            )?;
                        }
                    }
                }
            }
            for m in &report.methods {
                match &m.coverage {
                    Some(c) => println!(
                        "{}: CR = {:.3}, AL = {:.4}",
                        m.name, c.coverage_rate, c.average_length
                    ),
                    None => println!("{}: mean = {:.4}, sd = {:.4}", m.name, m.metric_mean, m.metric_sd),
                }
            }
            if !report.failures.is_empty() {
                eprintln!(
                    "{} of {} replications failed{}",
                    report.failures.len(),
                    cfg.r,
                    if report.valid { "" } else { "; report INVALID (>10%)" }
                );
            }
            println!(
                "report written to {} ({:.1}s)",
                output_dir.join("report.json").display(),
                report.wall_secs
            );
            Ok(())
        }

        Command::BenchSolvers {
            input,
            flags,
            max_iter,
            output_dir,
        } => {
            let dataset = input.load()?;
            let cfg = flags.config();
            ensure_dir(&output_dir)?;
            let prepared = prepare_fit(&dataset, &cfg)?;
            let fgma = fgma_solve(
                &prepared.bundle,
                &FgmaConfig {
                    max_iter,
                    ..FgmaConfig::default()
                },
            );
            let gma = gma_solve(
                &prepared.bundle,
                &GmaConfig {
                    max_iter,
                    ..GmaConfig::default()
                },
            );
            for (name, sol) in [("fgma_trajectory.csv", &fgma), ("gma_trajectory.csv", &gma)] {
                let mut buf = Vec::new();
                sol.write_trajectory_csv(&mut buf)
                    .map_err(|e| HdmaError::Config(e.to_string()))?;
                write_file(&output_dir, name, &String::from_utf8_lossy(&buf))?;
            }
            let bench = serde_json::json!({
                "config": cfg,
                "candidates": prepared.candidate_set.k(),
                "fgma": { "final_cv_over_n": fgma.final_cv_over_n(), "iterations": fgma.iterations,
                          "terminated_by": fgma.terminated_by },
                "gma":  { "final_cv_over_n": gma.final_cv_over_n(), "iterations": gma.iterations,
                          "terminated_by": gma.terminated_by },
            });
            write_file(
                &output_dir,
                "bench.json",
                &serde_json::to_string_pretty(&bench).map_err(|e| HdmaError::Config(e.to_string()))?,
            )?;
            println!(
                "FGMA: CV/n = {:.8} in {} iterations; GMA: CV/n = {:.8} in {} iterations",
                fgma.final_cv_over_n(),
                fgma.iterations,
                gma.final_cv_over_n(),
                gma.iterations
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("HDMA_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
