//! Retrieval evaluation (Recall@K), histogram export, and the metrics report.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{MatchLabels, SoftHistogram};
use crate::matrix::{dot, Matrix};

/// Recall@K over a set of queries plus the number of queries skipped because
/// their gallery holds no same-class item.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallResult {
    pub recall: BTreeMap<usize, f64>,
    pub skipped_queries: usize,
}

/// Multi-shot retrieval evaluation: every item is the query in turn, all
/// remaining items form the gallery, ranked by descending cosine similarity.
/// Rank ties break toward the lower item index, so results are deterministic.
pub fn recall_at_k(
    embeddings: &Matrix,
    labels: &MatchLabels,
    ks: &[usize],
) -> Result<RecallResult> {
    let m = embeddings.rows();
    if labels.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} embeddings",
            labels.len(),
            m
        )));
    }
    if m < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 items to evaluate, got {}",
            m
        )));
    }
    if ks.is_empty() {
        return Err(Error::InvalidConfig("no K values given".into()));
    }
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k >= m) {
        return Err(Error::InvalidConfig(format!(
            "K = {} is outside 1..{} (gallery size)",
            bad,
            m - 1
        )));
    }

    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    let mut usable = 0usize;
    let mut skipped = 0usize;
    let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(m - 1);
    for query in 0..m {
        let has_positive = (0..m).any(|g| g != query && labels.matches(query, g));
        if !has_positive {
            skipped += 1;
            continue;
        }
        usable += 1;
        ranked.clear();
        for gallery in 0..m {
            if gallery == query {
                continue;
            }
            ranked.push((dot(embeddings.row(query), embeddings.row(gallery)), gallery));
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let first_match = ranked
            .iter()
            .position(|&(_, g)| labels.matches(query, g))
            .expect("query has a positive");
        for (&k, hit) in hits.iter_mut() {
            if first_match < k {
                *hit += 1;
            }
        }
    }
    if usable == 0 {
        return Err(Error::BatchComposition(
            "every query was skipped: no class has two items".into(),
        ));
    }
    let recall = hits
        .into_iter()
        .map(|(k, h)| (k, h as f64 / usable as f64))
        .collect();
    Ok(RecallResult {
        recall,
        skipped_queries: skipped,
    })
}

/// Writes `t,h_plus,h_minus` rows (with a header line), one row per node, at
/// full round-trip precision.
pub fn export_histograms(
    h_plus: &SoftHistogram,
    h_minus: &SoftHistogram,
    destination: &Path,
) -> Result<()> {
    if h_plus.node_count() != h_minus.node_count() {
        return Err(Error::InvalidConfig(format!(
            "histograms have different node counts: {} vs {}",
            h_plus.node_count(),
            h_minus.node_count()
        )));
    }
    let mut out = Vec::new();
    writeln!(out, "t,h_plus,h_minus")?;
    for r in 0..h_plus.node_count() {
        writeln!(
            out,
            "{},{},{}",
            h_plus.node(r),
            h_plus.values()[r],
            h_minus.values()[r]
        )?;
    }
    fs::write(destination, out)?;
    Ok(())
}

/// Reads a file written by [`export_histograms`] back into the two
/// histograms.
pub fn import_histograms(path: &Path) -> Result<(SoftHistogram, SoftHistogram)> {
    let text = fs::read_to_string(path)?;
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if lineno == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!(
                "line {}: expected 3 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Parse(format!("line {}: bad number `{}`", lineno + 1, s)))
        };
        plus.push(parse(fields[1])?);
        minus.push(parse(fields[2])?);
    }
    Ok((
        SoftHistogram::from_values(plus)?,
        SoftHistogram::from_values(minus)?,
    ))
}

/// Run metadata carried in the metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub loss: String,
    pub bins: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub iterations: u64,
    pub skipped_queries: usize,
}

/// Training/evaluation report serialized as JSON with keys `recall`,
/// `loss_curve`, `meta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Final Recall@K, keyed by K rendered as a string.
    pub recall: BTreeMap<String, f64>,
    /// `(iteration, loss)` pairs, one per training iteration.
    pub loss_curve: Vec<(u64, f64)>,
    pub meta: RunMeta,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Recall@K keyed by integer K, for numeric assertions.
    pub fn recall_by_k(&self) -> Result<BTreeMap<usize, f64>> {
        self.recall
            .iter()
            .map(|(k, &v)| {
                k.parse::<usize>()
                    .map(|k| (k, v))
                    .map_err(|_| Error::Parse(format!("bad recall key `{}`", k)))
            })
            .collect()
    }
}
