//! Resolved run configuration: command-line flags override config-file values
//! override built-in defaults. Unknown config-file keys are rejected.

use std::fs;
use std::path::PathBuf;

use serde::Deserialize;

use histembed::{BinomialDevianceParams, Error, LossKind, Result, TrainConfig};

/// Optional JSON config file: a flat object whose keys mirror the long flag
/// names (`{"batch-size": 64, "loss": "histogram"}`).
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub classes: Option<usize>,
    pub per_class: Option<usize>,
    pub dim: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub loss: Option<String>,
    pub bins: Option<usize>,
    pub margin_mu: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub neg_cost: Option<f64>,
    pub triplet_margin: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_per_class: Option<usize>,
    pub learning_rate: Option<f64>,
    pub iterations: Option<u64>,
    pub eval_interval: Option<u64>,
    pub recall_ks: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub embed_dim: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &PathBuf) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("config file {}: {}", path.display(), e)))
    }
}

/// Flags shared by `train`, `eval`, `gradcheck`, and `hist-export`; every
/// field is optional here so precedence can be resolved explicitly.
#[derive(Debug, Default, clap::Args)]
pub struct RunFlags {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset CSV (`class_id,f1,...,fD` per line). When absent, a synthetic
    /// dataset is generated from the synthetic options below.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Evaluation dataset CSV. Defaults to a fresh-class synthetic split
    /// (seed + 1) for synthetic runs, or the training data for CSV runs.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Synthetic data: number of classes.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Synthetic data: items per class.
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Synthetic data: feature dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Synthetic data: per-coordinate Gaussian noise level.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Loss: histogram, histogram-margin, binomial-deviance, triplet-semihard.
    #[arg(long)]
    pub loss: Option<String>,
    /// Number of histogram nodes R (node step = 2/(R-1)).
    #[arg(long)]
    pub bins: Option<usize>,
    /// Histogram-margin loss: margin in nodes.
    #[arg(long)]
    pub margin_mu: Option<usize>,
    /// Binomial deviance alpha.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Binomial deviance beta.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Binomial deviance negative cost C.
    #[arg(long)]
    pub neg_cost: Option<f64>,
    /// Triplet loss margin.
    #[arg(long)]
    pub triplet_margin: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Cap on items of one class within a batch.
    #[arg(long)]
    pub max_per_class: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Evaluate every N iterations during training (0 = start/end only).
    #[arg(long)]
    pub eval_interval: Option<u64>,
    /// Recall@K cutoffs, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub recall_ks: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Embedding dimension E.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Output directory (default: $HISTLOSS_OUT_DIR or ./out).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Fully resolved configuration; no absent values downstream.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub loss: LossKind,
    pub bins: usize,
    pub margin_mu: usize,
    pub alpha: f64,
    pub beta: f64,
    pub neg_cost: f64,
    pub triplet_margin: f64,
    pub batch_size: usize,
    pub max_per_class: usize,
    pub learning_rate: f64,
    pub iterations: u64,
    pub eval_interval: u64,
    pub recall_ks: Vec<usize>,
    pub seed: u64,
    pub embed_dim: usize,
    pub out_dir: PathBuf,
}

pub fn default_out_dir() -> PathBuf {
    std::env::var_os("HISTLOSS_OUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Resolves flags over config-file values over defaults.
pub fn resolve(flags: RunFlags) -> Result<RunConfig> {
    let file = match &flags.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let defaults = TrainConfig::default();
    let loss_name = flags
        .loss
        .or(file.loss)
        .unwrap_or_else(|| defaults.loss.name().to_string());
    let config = RunConfig {
        data: flags.data.or(file.data),
        eval_data: flags.eval_data.or(file.eval_data),
        classes: flags.classes.or(file.classes).unwrap_or(16),
        per_class: flags.per_class.or(file.per_class).unwrap_or(32),
        dim: flags.dim.or(file.dim).unwrap_or(32),
        noise_sigma: flags.noise_sigma.or(file.noise_sigma).unwrap_or(0.15),
        loss: LossKind::parse(&loss_name)?,
        bins: flags.bins.or(file.bins).unwrap_or(defaults.bins),
        margin_mu: flags.margin_mu.or(file.margin_mu).unwrap_or(0),
        alpha: flags.alpha.or(file.alpha).unwrap_or(defaults.deviance.alpha),
        beta: flags.beta.or(file.beta).unwrap_or(defaults.deviance.beta),
        neg_cost: flags
            .neg_cost
            .or(file.neg_cost)
            .unwrap_or(defaults.deviance.neg_cost),
        triplet_margin: flags
            .triplet_margin
            .or(file.triplet_margin)
            .unwrap_or(defaults.triplet_margin),
        batch_size: flags
            .batch_size
            .or(file.batch_size)
            .unwrap_or(defaults.batch_size),
        max_per_class: flags
            .max_per_class
            .or(file.max_per_class)
            .unwrap_or(defaults.max_per_class),
        learning_rate: flags
            .learning_rate
            .or(file.learning_rate)
            .unwrap_or(defaults.learning_rate),
        iterations: flags
            .iterations
            .or(file.iterations)
            .unwrap_or(defaults.iterations),
        eval_interval: flags
            .eval_interval
            .or(file.eval_interval)
            .unwrap_or(defaults.eval_interval),
        recall_ks: flags
            .recall_ks
            .or(file.recall_ks)
            .unwrap_or(defaults.recall_ks),
        seed: flags.seed.or(file.seed).unwrap_or(defaults.seed),
        embed_dim: flags
            .embed_dim
            .or(file.embed_dim)
            .unwrap_or(defaults.embed_dim),
        out_dir: flags.out_dir.or(file.out_dir).unwrap_or_else(default_out_dir),
    };
    if config.bins < 2 {
        return Err(Error::InvalidConfig(format!(
            "--bins must be at least 2 nodes, got {}",
            config.bins
        )));
    }
    if config.recall_ks.is_empty() {
        return Err(Error::InvalidConfig("--recall-ks must not be empty".into()));
    }
    Ok(config)
}

impl RunConfig {
    /// The histogram node step this configuration implies.
    pub fn node_step(&self) -> f64 {
        2.0 / (self.bins - 1) as f64
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            bins: self.bins,
            margin_nodes: self.margin_mu,
            deviance: BinomialDevianceParams {
                alpha: self.alpha,
                beta: self.beta,
                neg_cost: self.neg_cost,
            },
            triplet_margin: self.triplet_margin,
            batch_size: self.batch_size,
            max_per_class: self.max_per_class,
            learning_rate: self.learning_rate,
            iterations: self.iterations,
            eval_interval: self.eval_interval,
            recall_ks: self.recall_ks.clone(),
            seed: self.seed,
            hidden_dims: TrainConfig::default().hidden_dims,
            embed_dim: self.embed_dim,
        }
    }
}
