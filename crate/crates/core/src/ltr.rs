//! Feature-based ranking: a linear scorer per (context, item) feature vector,
//! the transformed-logistic objectives, their gradients, DCG/NDCG and the
//! regularization-path trainer.

use std::collections::HashSet;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{raw, TransformKind};
use crate::optim::{self, LbfgsOptions};
use crate::rng;

/// Relevance-to-gain map `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Gain {
    /// `2^w - 1`
    #[default]
    Exponential,
    /// `w`
    Linear,
}

impl Gain {
    #[inline]
    pub fn apply(self, w: f64) -> f64 {
        match self {
            Gain::Exponential => w.exp2() - 1.0,
            Gain::Linear => w,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankItem {
    /// Unique within its context; used to break score ties.
    pub id: usize,
    pub features: Vec<f64>,
    /// Graded relevance, finite and >= 0.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextBlock {
    pub id: String,
    pub items: Vec<RankItem>,
    /// Per-context weight, > 0.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingDataset {
    pub contexts: Vec<ContextBlock>,
    pub feature_dim: usize,
    pub gain: Gain,
}

impl RankingDataset {
    /// Builds a dataset and checks every invariant, including that each
    /// context has at least two items.
    pub fn new(contexts: Vec<ContextBlock>, feature_dim: usize) -> Result<Self> {
        let data = Self { contexts, feature_dim, gain: Gain::Exponential };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::InvalidData("feature dimension must be positive".into()));
        }
        if self.contexts.is_empty() {
            return Err(Error::InvalidData("dataset has no contexts".into()));
        }
        for ctx in &self.contexts {
            if ctx.items.len() < 2 {
                return Err(Error::InvalidData(format!(
                    "context {} has {} item(s); at least 2 are required",
                    ctx.id,
                    ctx.items.len()
                )));
            }
            if !(ctx.weight > 0.0 && ctx.weight.is_finite()) {
                return Err(Error::InvalidData(format!("context {} has weight {}", ctx.id, ctx.weight)));
            }
            let mut ids = HashSet::with_capacity(ctx.items.len());
            for item in &ctx.items {
                if !ids.insert(item.id) {
                    return Err(Error::InvalidData(format!(
                        "context {} has duplicate item id {}",
                        ctx.id, item.id
                    )));
                }
                if item.features.len() != self.feature_dim {
                    return Err(Error::Shape(format!(
                        "context {} item {} has {} features, expected {}",
                        ctx.id,
                        item.id,
                        item.features.len(),
                        self.feature_dim
                    )));
                }
                if !(item.score >= 0.0 && item.score.is_finite()) {
                    return Err(Error::InvalidData(format!(
                        "context {} item {} has relevance {}",
                        ctx.id, item.id, item.score
                    )));
                }
                if item.features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidData(format!(
                        "context {} item {} has a non-finite feature",
                        ctx.id, item.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Widens every feature vector to `dim` with zeros, e.g. to align splits
    /// of a sparse file whose largest index differs. Never narrows.
    pub fn pad_features(&mut self, dim: usize) {
        let dim = dim.max(self.feature_dim);
        for ctx in &mut self.contexts {
            for item in &mut ctx.items {
                item.features.resize(dim, 0.0);
            }
        }
        self.feature_dim = dim;
    }

    pub fn num_items(&self) -> usize {
        self.contexts.iter().map(|c| c.items.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub omega: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        Self { omega: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn norm(&self) -> f64 {
        self.omega.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `<features, omega>`.
pub fn score(model: &LinearModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.dim() {
        return Err(Error::Shape(format!(
            "feature vector has length {}, model has dimension {}",
            features.len(),
            model.dim()
        )));
    }
    Ok(dot(features, &model.omega))
}

fn check_model(model: &LinearModel, data: &RankingDataset) -> Result<()> {
    if model.dim() != data.feature_dim {
        return Err(Error::Shape(format!(
            "model dimension {} does not match feature dimension {}",
            model.dim(),
            data.feature_dim
        )));
    }
    if model.omega.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidData("model has non-finite weights".into()));
    }
    Ok(())
}

fn context_scores(model: &LinearModel, ctx: &ContextBlock) -> Vec<f64> {
    ctx.items.iter().map(|it| dot(&it.features, &model.omega)).collect()
}

/// Number of other items in the context scored strictly higher.
pub fn rank_of(model: &LinearModel, ctx: &ContextBlock, item_index: usize) -> Result<usize> {
    let item = ctx.items.get(item_index).ok_or_else(|| {
        Error::Shape(format!(
            "item index {item_index} out of range for context {} with {} items",
            ctx.id,
            ctx.items.len()
        ))
    })?;
    let s = score(model, &item.features)?;
    let mut rank = 0;
    for (j, other) in ctx.items.iter().enumerate() {
        if j != item_index && s - score(model, &other.features)? < 0.0 {
            rank += 1;
        }
    }
    Ok(rank)
}

fn ranks(scores: &[f64]) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .map(|(i, &s)| scores.iter().enumerate().filter(|&(j, &o)| j != i && s - o < 0.0).count())
        .collect()
}

fn regularizer(model: &LinearModel, lambda: f64) -> f64 {
    0.5 * lambda * model.omega.iter().map(|w| w * w).sum::<f64>()
}

/// Convex bound: every pairwise indicator replaced by the logistic loss, no
/// transform.
pub fn objective_basic(model: &LinearModel, data: &RankingDataset, lambda: f64) -> Result<f64> {
    check_model(model, data)?;
    let mut total = 0.0;
    for ctx in &data.contexts {
        let s = context_scores(model, ctx);
        for (i, item) in ctx.items.iter().enumerate() {
            let g = data.gain.apply(item.score);
            if g == 0.0 {
                continue;
            }
            let inner: f64 = (0..s.len()).filter(|&j| j != i).map(|j| raw::logistic_loss(s[i] - s[j])).sum();
            total += ctx.weight * g * inner;
        }
    }
    Ok(total + regularizer(model, lambda))
}

/// Objective with exact pairwise indicators, i.e. in terms of the ranks.
/// `None` sums `v * rank`; `Some(kind)` sums `v * kind(rank)`.
pub fn objective_indicator(
    model: &LinearModel,
    data: &RankingDataset,
    transform: Option<TransformKind>,
) -> Result<f64> {
    check_model(model, data)?;
    let mut total = 0.0;
    for ctx in &data.contexts {
        let s = context_scores(model, ctx);
        for (item, r) in ctx.items.iter().zip(ranks(&s)) {
            let r = r as f64;
            let t = transform.map_or(r, |k| raw::transform(k, r));
            total += ctx.weight * data.gain.apply(item.score) * t;
        }
    }
    Ok(total)
}

/// Transformed bound `sum_x c_x sum_y v(W_xy) kind(sum_{y'} logistic(f_y - f_y'))`
/// plus `(lambda/2)|omega|^2`.
pub fn objective_robirank(
    model: &LinearModel,
    data: &RankingDataset,
    lambda: f64,
    kind: TransformKind,
) -> Result<f64> {
    check_model(model, data)?;
    Ok(value_and_grad(&model.omega, data, lambda, kind, None))
}

pub fn gradient_robirank(
    model: &LinearModel,
    data: &RankingDataset,
    lambda: f64,
    kind: TransformKind,
) -> Result<Vec<f64>> {
    check_model(model, data)?;
    let mut grad = vec![0.0; model.dim()];
    value_and_grad(&model.omega, data, lambda, kind, Some(&mut grad));
    Ok(grad)
}

fn value_and_grad(
    omega: &[f64],
    data: &RankingDataset,
    lambda: f64,
    kind: TransformKind,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let mut total = 0.0;
    if let Some(g) = grad.as_deref_mut() {
        for (gi, wi) in g.iter_mut().zip(omega) {
            *gi = lambda * wi;
        }
    }
    let mut coef = Vec::new();
    for ctx in &data.contexts {
        let s: Vec<f64> = ctx.items.iter().map(|it| dot(&it.features, omega)).collect();
        coef.clear();
        coef.resize(s.len(), 0.0);
        for (i, item) in ctx.items.iter().enumerate() {
            let gain = data.gain.apply(item.score);
            if gain == 0.0 {
                continue;
            }
            let inner: f64 = (0..s.len()).filter(|&j| j != i).map(|j| raw::logistic_loss(s[i] - s[j])).sum();
            total += ctx.weight * gain * raw::transform(kind, inner);
            if grad.is_some() {
                let outer = ctx.weight * gain * raw::transform_grad(kind, inner);
                for j in (0..s.len()).filter(|&j| j != i) {
                    let d = outer * raw::logistic_loss_grad(s[i] - s[j]);
                    coef[i] += d;
                    coef[j] -= d;
                }
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            for (c, item) in coef.iter().zip(&ctx.items) {
                if *c != 0.0 {
                    for (gi, fi) in g.iter_mut().zip(&item.features) {
                        *gi += c * fi;
                    }
                }
            }
        }
    }
    total + 0.5 * lambda * omega.iter().map(|w| w * w).sum::<f64>()
}

/// `c_x * sum_y v(W_xy) / log2(rank + 2)` with strict-inequality ranks.
pub fn dcg(model: &LinearModel, ctx: &ContextBlock, gain: Gain) -> Result<f64> {
    if let Some(it) = ctx.items.first() {
        score(model, &it.features)?;
    }
    let s = context_scores(model, ctx);
    let sum: f64 = ctx
        .items
        .iter()
        .zip(ranks(&s))
        .map(|(it, r)| gain.apply(it.score) / (r as f64 + 2.0).log2())
        .sum();
    Ok(ctx.weight * sum)
}

/// Item indices ordered by model score descending, ties by item id ascending.
pub fn ranked_order(model: &LinearModel, ctx: &ContextBlock) -> Vec<usize> {
    let s = context_scores(model, ctx);
    let mut order: Vec<usize> = (0..ctx.items.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(ctx.items[a].id.cmp(&ctx.items[b].id)));
    order
}

fn truncated_dcg(gains: impl Iterator<Item = f64>, k: usize) -> f64 {
    gains.take(k).enumerate().map(|(pos, g)| g / (pos as f64 + 2.0).log2()).sum()
}

/// NDCG truncated at `k`. A context whose gains are all zero scores 1.
pub fn ndcg_at_k(model: &LinearModel, ctx: &ContextBlock, gain: Gain, k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::Domain("NDCG truncation level must be >= 1".into()));
    }
    if let Some(it) = ctx.items.first() {
        score(model, &it.features)?;
    }
    let mut ideal: Vec<f64> = ctx.items.iter().map(|it| gain.apply(it.score)).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let best = truncated_dcg(ideal.into_iter(), k);
    if best <= 0.0 {
        return Ok(1.0);
    }
    let order = ranked_order(model, ctx);
    let got = truncated_dcg(order.iter().map(|&i| gain.apply(ctx.items[i].score)), k);
    Ok((got / best).clamp(0.0, 1.0))
}

/// Mean NDCG@k over all contexts of `data`.
pub fn mean_ndcg(model: &LinearModel, data: &RankingDataset, k: usize) -> Result<f64> {
    check_model(model, data)?;
    if data.contexts.is_empty() {
        return Err(Error::InvalidData("cannot average NDCG over an empty dataset".into()));
    }
    let mut sum = 0.0;
    for ctx in &data.contexts {
        sum += ndcg_at_k(model, ctx, data.gain, k)?;
    }
    Ok(sum / data.contexts.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Zeros,
    /// i.i.d. Gaussian with variance 1e-2.
    Gaussian,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_grid: Vec<f64>,
    /// Truncation level used for validation model selection.
    pub select_k: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub init: Init,
    pub seed: u64,
    pub kind: TransformKind,
}

pub const DEFAULT_LAMBDA_GRID: [f64; 7] = [1e-9, 1e-7, 1e-5, 1e-3, 1e-1, 10.0, 1e3];

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            select_k: 10,
            max_iters: 500,
            grad_tol: 1e-6,
            init: Init::Zeros,
            seed: 0,
            kind: TransformKind::Rho1,
        }
    }
}

/// Outcome of training at one regularization level.
#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub lambda: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub validation_ndcg: f64,
    pub omega_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedRanker {
    pub model: LinearModel,
    pub lambda: f64,
    pub candidates: Vec<Candidate>,
}

/// Minimizes the objective for every lambda on the grid and keeps the model
/// with the best mean validation NDCG@`select_k` (earliest lambda on ties).
pub fn train(train: &RankingDataset, validation: &RankingDataset, config: &TrainConfig) -> Result<TrainedRanker> {
    train.validate()?;
    validation.validate()?;
    if train.feature_dim != validation.feature_dim {
        return Err(Error::Shape(format!(
            "train has {} features, validation has {}",
            train.feature_dim, validation.feature_dim
        )));
    }
    if config.lambda_grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    if config.select_k == 0 {
        return Err(Error::Config("select_k must be >= 1".into()));
    }
    if let Some(l) = config.lambda_grid.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::Config(format!("invalid regularization value {l}")));
    }

    let dim = train.feature_dim;
    let x0 = match config.init {
        Init::Zeros => vec![0.0; dim],
        Init::Gaussian => {
            let mut r = rng::seeded(config.seed);
            let normal = Normal::new(0.0, 0.1).expect("valid normal");
            (0..dim).map(|_| normal.sample(&mut r)).collect()
        }
    };
    let opts = LbfgsOptions {
        max_iters: config.max_iters,
        grad_tol: config.grad_tol,
        ..LbfgsOptions::default()
    };

    let mut best: Option<(f64, LinearModel, f64)> = None;
    let mut candidates = Vec::with_capacity(config.lambda_grid.len());
    for &lambda in &config.lambda_grid {
        let kind = config.kind;
        let min = optim::minimize(|w, g| value_and_grad(w, train, lambda, kind, Some(g)), x0.clone(), &opts)
            .map_err(|e| Error::Divergence(format!("lambda = {lambda}: {e}")))?;
        let model = LinearModel { omega: min.x };
        let validation_ndcg = mean_ndcg(&model, validation, config.select_k)?;
        candidates.push(Candidate {
            lambda,
            objective: min.value,
            iterations: min.iterations,
            converged: min.converged,
            validation_ndcg,
            omega_norm: model.norm(),
        });
        if best.as_ref().is_none_or(|(score, _, _)| validation_ndcg > *score) {
            best = Some((validation_ndcg, model, lambda));
        }
    }
    let (_, model, lambda) = best.expect("non-empty grid");
    Ok(TrainedRanker { model, lambda, candidates })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: usize, features: Vec<f64>, score: f64) -> RankItem {
        RankItem { id, features, score }
    }

    fn ctx(items: Vec<RankItem>) -> ContextBlock {
        ContextBlock { id: "q".into(), items, weight: 1.0 }
    }

    #[test]
    fn score_basics() {
        assert_eq!(score(&LinearModel::zeros(3), &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let m = LinearModel { omega: vec![1.0, 0.0, 0.0] };
        assert_eq!(score(&m, &[3.5, -1.0, 7.0]).unwrap(), 3.5);
        assert!(matches!(score(&m, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn ranks_follow_strict_inequality() {
        let m = LinearModel { omega: vec![1.0] };
        let c = ctx(vec![
            item(0, vec![1.0], 0.0),
            item(1, vec![3.0], 0.0),
            item(2, vec![2.0], 0.0),
            item(3, vec![3.0], 0.0),
        ]);
        let r: Vec<usize> = (0..4).map(|i| rank_of(&m, &c, i).unwrap()).collect();
        assert_eq!(r, vec![3, 0, 2, 0]);
        assert!(rank_of(&m, &c, 4).is_err());

        let flat = LinearModel { omega: vec![0.0] };
        assert!((0..4).all(|i| rank_of(&flat, &c, i).unwrap() == 0));
    }

    #[test]
    fn basic_objective_small_cases() {
        let zero = LinearModel::zeros(1);
        let c = ctx(vec![item(0, vec![1.0], 1.0), item(1, vec![0.0], 0.0), item(2, vec![2.0], 2.0)]);
        let data = RankingDataset::new(vec![c], 1).unwrap();
        // v = (1, 0, 3), every pair contributes 1 at omega = 0
        assert_eq!(objective_basic(&zero, &data, 0.0).unwrap(), (1.0 + 3.0) * 2.0);

        let t = 0.7;
        let pair = RankingDataset::new(vec![ctx(vec![item(0, vec![t], 1.0), item(1, vec![0.0], 0.0)])], 1).unwrap();
        let m = LinearModel { omega: vec![1.0] };
        assert!((objective_basic(&m, &pair, 0.0).unwrap() - raw::logistic_loss(t)).abs() < 1e-15);
        assert!((objective_robirank(&LinearModel::zeros(1), &pair, 0.0, TransformKind::Rho1).unwrap() - 1.0).abs() < 1e-15);
        let r2 = objective_robirank(&LinearModel::zeros(1), &pair, 0.0, TransformKind::Rho2).unwrap();
        assert!((r2 - (1.0 - 1.0 / 3f64.log2())).abs() < 1e-15);
        assert!((r2 - 0.369070).abs() < 1e-6);
    }

    #[test]
    fn single_pair_gradient_by_hand() {
        let (phi_y, phi_n) = (vec![0.3, -1.2], vec![1.1, 0.4]);
        let w = 2.0;
        let data = RankingDataset::new(
            vec![ContextBlock {
                id: "q".into(),
                items: vec![item(0, phi_y.clone(), 1.0), item(1, phi_n.clone(), 0.0)],
                weight: w,
            }],
            2,
        )
        .unwrap();
        let m = LinearModel { omega: vec![0.5, -0.25] };
        let lambda = 0.3;
        let t = dot(&phi_y, &m.omega) - dot(&phi_n, &m.omega);
        for kind in [TransformKind::Rho1, TransformKind::Rho2] {
            let a = w * 1.0 * raw::transform_grad(kind, raw::logistic_loss(t)) * raw::logistic_loss_grad(t);
            let g = gradient_robirank(&m, &data, lambda, kind).unwrap();
            for d in 0..2 {
                let expect = a * (phi_y[d] - phi_n[d]) + lambda * m.omega[d];
                assert!((g[d] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn saturated_margins_leave_only_regularizer() {
        let data = RankingDataset::new(
            vec![ctx(vec![item(0, vec![1.0, 0.0], 2.0), item(1, vec![0.0, 0.0], 0.0), item(2, vec![-1.0, 0.0], 0.0)])],
            2,
        )
        .unwrap();
        let m = LinearModel { omega: vec![5000.0, 1.0] };
        let lambda = 1e-3;
        let g = gradient_robirank(&m, &data, lambda, TransformKind::Rho1).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - lambda * m.norm()).abs() < 1e-12);
    }

    #[test]
    fn ndcg_worked_example() {
        // model ranks the W = 0 item first and the W = 2 item last
        let m = LinearModel { omega: vec![-1.0] };
        let c = ctx(vec![item(0, vec![2.0], 2.0), item(1, vec![1.0], 1.0), item(2, vec![0.0], 0.0)]);
        let expect = (0.0 + 1.0 / 3f64.log2() + 3.0 / 2.0) / (3.0 + 1.0 / 3f64.log2());
        let v = ndcg_at_k(&m, &c, Gain::Exponential, 3).unwrap();
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 0.58688).abs() < 1e-5);
        let perfect = LinearModel { omega: vec![1.0] };
        for k in 1..=5 {
            assert_eq!(ndcg_at_k(&perfect, &c, Gain::Exponential, k).unwrap(), 1.0);
        }
        assert!(ndcg_at_k(&perfect, &c, Gain::Exponential, 0).is_err());
    }

    #[test]
    fn zero_gain_context() {
        let c = ctx(vec![item(0, vec![2.0], 0.0), item(1, vec![1.0], 0.0)]);
        let m = LinearModel { omega: vec![-1.0] };
        assert_eq!(dcg(&m, &c, Gain::Exponential).unwrap(), 0.0);
        assert_eq!(ndcg_at_k(&m, &c, Gain::Exponential, 1).unwrap(), 1.0);
    }

    #[test]
    fn ties_broken_by_item_id() {
        let c = ctx(vec![item(7, vec![1.0], 0.0), item(3, vec![1.0], 1.0)]);
        let m = LinearModel { omega: vec![1.0] };
        assert_eq!(ranked_order(&m, &c), vec![1, 0]);
        assert_eq!(ndcg_at_k(&m, &c, Gain::Exponential, 1).unwrap(), 1.0);
    }

    #[test]
    fn validation_rejects_bad_data() {
        assert!(RankingDataset::new(vec![ctx(vec![item(0, vec![1.0], 1.0)])], 1).is_err());
        assert!(RankingDataset::new(vec![ctx(vec![item(0, vec![1.0], 1.0), item(0, vec![2.0], 0.0)])], 1).is_err());
        assert!(RankingDataset::new(vec![ctx(vec![item(0, vec![1.0], -1.0), item(1, vec![2.0], 0.0)])], 1).is_err());
        assert!(RankingDataset::new(vec![ctx(vec![item(0, vec![1.0], 1.0), item(1, vec![2.0, 1.0], 0.0)])], 1).is_err());
        assert!(RankingDataset::new(vec![], 0).is_err());
    }
}
