//! Evaluation metrics: mean NDCG@k for linear rankers and precision@k for
//! latent models.

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lcr::{InteractionSet, LatentModel};
use crate::ltr::{self, LinearModel, RankingDataset};

pub const CSV_HEADER: &str = "metric,k,mean,n_contexts";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub k: usize,
    pub values: Vec<f64>,
    pub mean: f64,
    pub count: usize,
}

impl MetricReport {
    pub fn from_values(metric: impl Into<String>, k: usize, values: Vec<f64>) -> Self {
        let count = values.len();
        let mean = if count == 0 { 0.0 } else { values.iter().sum::<f64>() / count as f64 };
        Self { metric: metric.into(), k, values, mean, count }
    }

    /// `metric,k,mean,n_contexts`
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.metric, self.k, self.mean, self.count)
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{} = {:.6} over {} contexts", self.metric, self.k, self.mean, self.count)
    }
}

/// One report per truncation level in `ks`.
pub fn mean_ndcg_curve(model: &LinearModel, data: &RankingDataset, ks: &[usize]) -> Result<Vec<MetricReport>> {
    if ks.is_empty() {
        return Err(Error::Config("no truncation levels requested".into()));
    }
    if model.dim() != data.feature_dim {
        return Err(Error::Shape(format!(
            "model dimension {} does not match feature dimension {}",
            model.dim(),
            data.feature_dim
        )));
    }
    ks.iter()
        .map(|&k| {
            let values = data
                .contexts
                .iter()
                .map(|ctx| ltr::ndcg_at_k(model, ctx, data.gain, k))
                .collect::<Result<Vec<_>>>()?;
            Ok(MetricReport::from_values("ndcg", k, values))
        })
        .collect()
}

/// The `k` best-scoring items for context `x`, skipping `exclude`. Ties go to
/// the lower item index.
pub fn top_k_items(model: &LatentModel, x: usize, k: usize, exclude: &HashSet<usize>) -> Vec<usize> {
    let scores = model.scores_for(x);
    let mut candidates: Vec<usize> = (0..model.num_items).filter(|y| !exclude.contains(y)).collect();
    candidates.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    candidates.truncate(k);
    candidates
}

/// Precision@k with the context's training items removed from the candidates.
pub fn precision_at_k(model: &LatentModel, train: &InteractionSet, test: &InteractionSet, k: usize) -> Result<MetricReport> {
    precision_at_k_with(model, train, test, k, true)
}

/// Precision@k averaged over contexts that have at least one test item. The
/// denominator is always `k`, even when fewer than `k` candidates remain.
pub fn precision_at_k_with(
    model: &LatentModel,
    train: &InteractionSet,
    test: &InteractionSet,
    k: usize,
    exclude_train: bool,
) -> Result<MetricReport> {
    if k == 0 {
        return Err(Error::Domain("precision truncation level must be >= 1".into()));
    }
    model.check_matches(test)?;
    if exclude_train {
        model.check_matches(train)?;
    }
    let mut values = Vec::new();
    for x in 0..test.num_contexts() {
        if test.pair_indices_of(x).is_empty() {
            continue;
        }
        let relevant: HashSet<usize> = test.items_of(x).collect();
        let exclude: HashSet<usize> = if exclude_train { train.items_of(x).collect() } else { HashSet::new() };
        let hits = top_k_items(model, x, k, &exclude).iter().filter(|y| relevant.contains(y)).count();
        values.push(hits as f64 / k as f64);
    }
    if values.is_empty() {
        return Err(Error::InvalidData("test set has no observed pairs".into()));
    }
    Ok(MetricReport::from_values("precision", k, values))
}
