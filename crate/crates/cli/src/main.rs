//! `histembed` command line: train embeddings, evaluate retrieval, check
//! gradients against finite differences, export similarity histograms, and
//! generate synthetic datasets.
//!
//! Exit codes: 0 success, 2 configuration/usage, 3 data, 4 numerical,
//! 5 input/output.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use histembed::oracle::{encoder_gradcheck, GradCheckLoss};
use histembed::{
    export_histograms, recall_at_k, train, BinomialDevianceParams, Checkpoint, Dataset, Error,
    LossKind, MetricsReport, Result, RunMeta,
};

use config::{default_out_dir, resolve, RunConfig, RunFlags};

#[derive(Parser)]
#[command(
    name = "histembed",
    about = "Deep embedding training with the histogram loss and friends",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an encoder; writes metrics.json, histograms.csv, checkpoint.json.
    Train(RunFlags),
    /// Evaluate a checkpoint; writes eval.json.
    Eval {
        #[command(flatten)]
        flags: RunFlags,
        /// Checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare analytic gradients of the full training chain against central
    /// finite differences; prints a JSON report, exits non-zero above 1e-4.
    Gradcheck(RunFlags),
    /// Embed a dataset with a checkpoint and export its similarity
    /// histograms as CSV.
    HistExport {
        #[command(flatten)]
        flags: RunFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output CSV path (default: <out-dir>/histograms.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset CSV.
    Synth {
        #[arg(long, default_value_t = 16)]
        classes: usize,
        #[arg(long, default_value_t = 32)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 0.15)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path (default: <out-dir>/data.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::ShapeMismatch(_) | Error::ContractViolation(_) => 2,
        Error::Parse(_) | Error::BatchComposition(_) | Error::EmptySampleSet(_) => 3,
        Error::Numerical(_) | Error::DegenerateEmbedding(_) => 4,
        Error::Io(_) | Error::Serialization(_) => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(flags) => run_train(flags),
        Command::Eval { flags, checkpoint } => run_eval(flags, &checkpoint),
        Command::Gradcheck(flags) => run_gradcheck(flags),
        Command::HistExport { flags, checkpoint, out } => run_hist_export(flags, &checkpoint, out),
        Command::Synth { classes, per_class, dim, noise_sigma, seed, out, out_dir } => {
            run_synth(classes, per_class, dim, noise_sigma, seed, out, out_dir)
        }
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {}", err);
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// Loads the configured datasets: either CSVs or deterministic synthetic
/// splits. Synthetic eval data uses fresh classes drawn with seed + 1.
fn load_datasets(config: &RunConfig) -> Result<(Dataset, Dataset)> {
    let train_data = match &config.data {
        Some(path) => Dataset::load_csv(path)?,
        None => Dataset::generate_synthetic(
            config.classes,
            config.per_class,
            config.dim,
            config.noise_sigma,
            config.seed,
        )?,
    };
    let eval_data = match (&config.eval_data, &config.data) {
        (Some(path), _) => Dataset::load_csv(path)?,
        (None, Some(_)) => train_data.clone(),
        (None, None) => Dataset::generate_synthetic(
            config.classes,
            config.per_class,
            config.dim,
            config.noise_sigma,
            config.seed + 1,
        )?,
    };
    Ok((train_data, eval_data))
}

fn eval_dataset_only(config: &RunConfig) -> Result<Dataset> {
    load_datasets(config).map(|(_, eval)| eval)
}

fn run_train(flags: RunFlags) -> Result<ExitCode> {
    let config = resolve(flags)?;
    fs::create_dir_all(&config.out_dir)?;
    let (train_data, eval_data) = load_datasets(&config)?;
    println!(
        "training loss={} bins={} (node step {}) batch={} lr={} iterations={} seed={}",
        config.loss.name(),
        config.bins,
        config.node_step(),
        config.batch_size,
        config.learning_rate,
        config.iterations,
        config.seed
    );

    let outcome = train(&config.train_config(), &train_data, &eval_data)?;
    for (iter, result) in &outcome.eval_history {
        let summary: Vec<String> = result
            .recall
            .iter()
            .map(|(k, v)| format!("R@{}={:.4}", k, v))
            .collect();
        println!("iter {:>6}  {}", iter, summary.join("  "));
    }

    let metrics_path = config.out_dir.join("metrics.json");
    outcome.report.save(&metrics_path)?;
    // Exported histograms show the distribution the loss shaped: the training
    // set under the final parameters. Eval-set histograms are available via
    // `hist-export`.
    let (train_pos, train_neg) =
        histembed::train::dataset_histograms(&outcome.params, &train_data, config.bins)?;
    println!(
        "similarity overlap mass: train {:.6}, eval {:.6}",
        train_pos.overlap_mass(&train_neg)?,
        outcome.eval_hist_pos.overlap_mass(&outcome.eval_hist_neg)?
    );
    let hist_path = config.out_dir.join("histograms.csv");
    export_histograms(&train_pos, &train_neg, &hist_path)?;
    let ck_path = config.out_dir.join("checkpoint.json");
    Checkpoint::new(outcome.params, outcome.adam).save(&ck_path)?;
    println!(
        "wrote {}, {}, {}",
        metrics_path.display(),
        hist_path.display(),
        ck_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_eval(flags: RunFlags, checkpoint: &Path) -> Result<ExitCode> {
    let config = resolve(flags)?;
    fs::create_dir_all(&config.out_dir)?;
    let ck = Checkpoint::load(checkpoint)?;
    let eval_data = eval_dataset_only(&config)?;
    let embeddings = histembed::train::embed_dataset(&ck.params, &eval_data)?;
    let result = recall_at_k(&embeddings, &eval_data.all_labels(), &config.recall_ks)?;

    let report = MetricsReport {
        recall: result
            .recall
            .iter()
            .map(|(k, &v)| (k.to_string(), v))
            .collect(),
        loss_curve: vec![],
        meta: RunMeta {
            loss: "eval".to_string(),
            bins: config.bins,
            batch_size: config.batch_size,
            seed: config.seed,
            iterations: ck.adam.step,
            skipped_queries: result.skipped_queries,
        },
    };
    let path = config.out_dir.join("eval.json");
    report.save(&path)?;
    for (k, v) in &report.recall {
        println!("R@{} = {}", k, v);
    }
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(flags: RunFlags) -> Result<ExitCode> {
    let config = resolve(flags)?;
    fs::create_dir_all(&config.out_dir)?;
    // A coarse grid by default: finite differences need room between nodes.
    let bins = config.bins.min(21);
    let loss = match config.loss {
        LossKind::Histogram => GradCheckLoss::Histogram { bins, margin_nodes: 0 },
        LossKind::HistogramMargin => GradCheckLoss::Histogram {
            bins,
            margin_nodes: config.margin_mu,
        },
        LossKind::BinomialDeviance => GradCheckLoss::BinomialDeviance(BinomialDevianceParams {
            alpha: config.alpha,
            beta: config.beta,
            neg_cost: config.neg_cost,
        }),
        LossKind::TripletSemihard => {
            return Err(Error::InvalidConfig(
                "triplet-semihard selects triplets discontinuously; finite differences \
                 do not apply"
                    .into(),
            ))
        }
    };
    let report = encoder_gradcheck(loss, config.seed, 16, 8, &[12], 8, 4, 1e-6)?;
    let json = report.to_json()?;
    println!("{}", json);
    fs::write(config.out_dir.join("gradcheck.json"), &json)?;
    if report.max_rel_error < 1e-4 {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "error: max relative gradient error {} at {} exceeds 1e-4",
            report.max_rel_error, report.argmax
        );
        Ok(ExitCode::from(4))
    }
}

fn run_hist_export(flags: RunFlags, checkpoint: &Path, out: Option<PathBuf>) -> Result<ExitCode> {
    let config = resolve(flags)?;
    fs::create_dir_all(&config.out_dir)?;
    let ck = Checkpoint::load(checkpoint)?;
    let data = eval_dataset_only(&config)?;
    let (h_plus, h_minus) =
        histembed::train::dataset_histograms(&ck.params, &data, config.bins)?;
    let path = out.unwrap_or_else(|| config.out_dir.join("histograms.csv"));
    export_histograms(&h_plus, &h_minus, &path)?;
    println!(
        "wrote {} ({} nodes, overlap mass {})",
        path.display(),
        config.bins,
        h_plus.overlap_mass(&h_minus)?
    );
    Ok(ExitCode::SUCCESS)
}

fn run_synth(
    classes: usize,
    per_class: usize,
    dim: usize,
    noise_sigma: f64,
    seed: u64,
    out: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> Result<ExitCode> {
    let out_dir = out_dir.unwrap_or_else(default_out_dir);
    let path = match out {
        Some(path) => path,
        None => {
            fs::create_dir_all(&out_dir)?;
            out_dir.join("data.csv")
        }
    };
    let ds = Dataset::generate_synthetic(classes, per_class, dim, noise_sigma, seed)?;
    ds.save_csv(&path)?;
    println!("wrote {} ({} rows, dim {})", path.display(), ds.len(), ds.dim());
    Ok(ExitCode::SUCCESS)
}
