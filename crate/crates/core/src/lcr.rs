//! Latent collaborative retrieval.
//!
//! Contexts and items get `d`-dimensional embeddings `U_x`, `V_y` and are
//! scored by `<U_x, V_y>`. The objective sums, over observed pairs, the
//! `Rho1` transform of the pair's summed logistic losses against every other
//! item. Each transform is replaced by its linear upper bound with one
//! auxiliary variable `xi` per pair:
//!
//! ```text
//! log2(t + 1) <= -log2(xi) + (xi * (t + 1) - 1) / ln 2,   tight at xi = 1/(t + 1)
//! ```
//!
//! which makes the objective a plain sum over `(x, y, y')` triples, so a
//! single sampled triple gives an unbiased gradient that touches three rows.
//! Training alternates stochastic descent on `(U, V)` with the closed-form
//! `xi` update.

use std::f64::consts::LN_2;
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{raw, TransformKind};
use crate::rng::{self, index_excluding};

/// Observed (context, item) pairs over `num_contexts x num_items`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSet {
    num_contexts: usize,
    num_items: usize,
    pairs: Vec<(usize, usize)>,
    // pair indices grouped by context
    by_context: Vec<Vec<usize>>,
}

impl InteractionSet {
    /// Fails on out-of-range indices and on duplicate pairs.
    pub fn new(num_contexts: usize, num_items: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut by_context = vec![Vec::new(); num_contexts];
        for (i, &(x, y)) in pairs.iter().enumerate() {
            if x >= num_contexts || y >= num_items {
                return Err(Error::InvalidData(format!(
                    "pair ({x}, {y}) out of range for {num_contexts} contexts and {num_items} items"
                )));
            }
            by_context[x].push(i);
        }
        for list in &by_context {
            let mut items: Vec<usize> = list.iter().map(|&i| pairs[i].1).collect();
            items.sort_unstable();
            if let Some(w) = items.windows(2).find(|w| w[0] == w[1]) {
                let x = pairs[list[0]].0;
                return Err(Error::InvalidData(format!("duplicate pair ({x}, {})", w[0])));
            }
        }
        Ok(Self { num_contexts, num_items, pairs, by_context })
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Indices into [`pairs`](Self::pairs) of the pairs observed for `x`.
    pub fn pair_indices_of(&self, x: usize) -> &[usize] {
        &self.by_context[x]
    }

    pub fn items_of(&self, x: usize) -> impl Iterator<Item = usize> + '_ {
        self.by_context[x].iter().map(|&i| self.pairs[i].1)
    }

    /// Training requires every context to have at least one pair and at
    /// least two items overall.
    pub fn check_trainable(&self) -> Result<()> {
        if self.num_items < 2 {
            return Err(Error::InvalidData(format!(
                "at least 2 items are required, found {}",
                self.num_items
            )));
        }
        if let Some(x) = self.by_context.iter().position(|l| l.is_empty()) {
            return Err(Error::InvalidData(format!("context {x} has no observed pairs")));
        }
        Ok(())
    }
}

/// Row-major context and item embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentModel {
    pub dim: usize,
    pub num_contexts: usize,
    pub num_items: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl LatentModel {
    pub fn zeros(num_contexts: usize, num_items: usize, dim: usize) -> Self {
        Self {
            dim,
            num_contexts,
            num_items,
            u: vec![0.0; num_contexts * dim],
            v: vec![0.0; num_items * dim],
        }
    }

    /// Entries i.i.d. Gaussian with variance `1/dim`.
    pub fn random<R: rand::Rng + ?Sized>(num_contexts: usize, num_items: usize, dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (1.0 / dim as f64).sqrt()).expect("valid normal");
        let mut m = Self::zeros(num_contexts, num_items, dim);
        m.u.iter_mut().chain(m.v.iter_mut()).for_each(|e| *e = normal.sample(rng));
        m
    }

    pub fn u_row(&self, x: usize) -> &[f64] {
        &self.u[x * self.dim..(x + 1) * self.dim]
    }

    pub fn v_row(&self, y: usize) -> &[f64] {
        &self.v[y * self.dim..(y + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|e| e.is_finite())
    }

    fn frobenius_sq(&self) -> f64 {
        self.u.iter().chain(&self.v).map(|e| e * e).sum()
    }

    /// Scores of every item for context `x`.
    pub fn scores_for(&self, x: usize) -> Vec<f64> {
        let ux = self.u_row(x);
        (0..self.num_items).map(|y| dot(ux, self.v_row(y))).collect()
    }

    pub fn check_matches(&self, data: &InteractionSet) -> Result<()> {
        if self.num_contexts != data.num_contexts() {
            return Err(Error::Shape(format!(
                "model has {} contexts, data has {}",
                self.num_contexts,
                data.num_contexts()
            )));
        }
        if self.num_items != data.num_items() {
            return Err(Error::Shape(format!(
                "model has {} items, data has {}",
                self.num_items,
                data.num_items()
            )));
        }
        if self.u.len() != self.num_contexts * self.dim || self.v.len() != self.num_items * self.dim {
            return Err(Error::Shape("embedding storage does not match the declared shape".into()));
        }
        Ok(())
    }
}

/// One auxiliary variable per observed pair, aligned with
/// [`InteractionSet::pairs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxVars {
    pub xi: Vec<f64>,
}

impl AuxVars {
    pub fn check(&self, data: &InteractionSet) -> Result<()> {
        if self.xi.len() != data.len() {
            return Err(Error::Shape(format!(
                "{} auxiliary variables for {} pairs",
                self.xi.len(),
                data.len()
            )));
        }
        if let Some(bad) = self.xi.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("auxiliary variables must be positive, found {bad}")));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn latent_score(model: &LatentModel, x: usize, y: usize) -> Result<f64> {
    if x >= model.num_contexts || y >= model.num_items {
        return Err(Error::Shape(format!(
            "index ({x}, {y}) out of range for {} contexts and {} items",
            model.num_contexts, model.num_items
        )));
    }
    Ok(dot(model.u_row(x), model.v_row(y)))
}

/// `sum_{y' != y} logistic(f(x,y) - f(x,y'))` for every pair, in pair order.
pub fn loss_sums(model: &LatentModel, data: &InteractionSet) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for x in 0..data.num_contexts() {
        let idx = data.pair_indices_of(x);
        if idx.is_empty() {
            continue;
        }
        let s = model.scores_for(x);
        for &i in idx {
            let y = data.pairs[i].1;
            out[i] = s
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != y)
                .map(|(_, &sj)| raw::logistic_loss(s[y] - sj))
                .sum();
        }
    }
    out
}

/// Exact objective with Frobenius regularization `(mu/2)(|U|^2 + |V|^2)`.
pub fn exact_objective(model: &LatentModel, data: &InteractionSet, mu: f64) -> Result<f64> {
    model.check_matches(data)?;
    let sum: f64 = loss_sums(model, data).into_iter().map(|t| raw::transform(TransformKind::Rho1, t)).sum();
    Ok(sum + 0.5 * mu * model.frobenius_sq())
}

#[inline]
fn bound_term(xi: f64, t: f64) -> f64 {
    -xi.log2() + (xi * (t + 1.0) - 1.0) / LN_2
}

/// Linearized upper bound of [`exact_objective`] at the given auxiliary
/// variables.
pub fn bound_objective(model: &LatentModel, aux: &AuxVars, data: &InteractionSet, mu: f64) -> Result<f64> {
    model.check_matches(data)?;
    aux.check(data)?;
    let sum: f64 = loss_sums(model, data).into_iter().zip(&aux.xi).map(|(t, &xi)| bound_term(xi, t)).sum();
    Ok(sum + 0.5 * mu * model.frobenius_sq())
}

/// Closed-form minimizer of the bound in `xi`: `1 / (sum + 1)`.
pub fn xi_step(model: &LatentModel, data: &InteractionSet) -> Result<AuxVars> {
    model.check_matches(data)?;
    Ok(AuxVars { xi: loss_sums(model, data).into_iter().map(|t| 1.0 / (t + 1.0)).collect() })
}

/// Dense gradient over all embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGradient {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl LatentGradient {
    pub fn zeros_like(model: &LatentModel) -> Self {
        Self { u: vec![0.0; model.u.len()], v: vec![0.0; model.v.len()] }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.u.iter().chain(&self.v).copied().collect()
    }

    pub(crate) fn add_triple(&mut self, model: &LatentModel, x: usize, y: usize, yn: usize, g: f64) {
        let d = model.dim;
        let (ux, vy, vn) = (model.u_row(x), model.v_row(y), model.v_row(yn));
        for k in 0..d {
            self.u[x * d + k] += g * (vy[k] - vn[k]);
            self.v[y * d + k] += g * ux[k];
            self.v[yn * d + k] -= g * ux[k];
        }
    }
}

/// Exact `(U, V)` gradient of the bound without the regularizer:
/// `(1/ln 2) sum_pairs xi sum_{y'} grad logistic(f(x,y) - f(x,y'))`.
pub fn bound_gradient(model: &LatentModel, aux: &AuxVars, data: &InteractionSet) -> Result<LatentGradient> {
    model.check_matches(data)?;
    aux.check(data)?;
    let mut grad = LatentGradient::zeros_like(model);
    for x in 0..data.num_contexts() {
        let idx = data.pair_indices_of(x);
        if idx.is_empty() {
            continue;
        }
        let s = model.scores_for(x);
        for &i in idx {
            let y = data.pairs[i].1;
            for yn in (0..model.num_items).filter(|&j| j != y) {
                let g = aux.xi[i] / LN_2 * raw::logistic_loss_grad(s[y] - s[yn]);
                grad.add_triple(model, x, y, yn, g);
            }
        }
    }
    Ok(grad)
}

/// Gradient of one sampled triple; every row other than `U_x`, `V_y` and
/// `V_neg` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGradient {
    pub x: usize,
    pub y: usize,
    pub neg: usize,
    pub u_x: Vec<f64>,
    pub v_y: Vec<f64>,
    pub v_neg: Vec<f64>,
}

impl SparseGradient {
    /// Gradient of `scale * logistic(f(x,y) - f(x,neg))`.
    pub fn for_triple(model: &LatentModel, x: usize, y: usize, neg: usize, scale: f64) -> Self {
        let (ux, vy, vn) = (model.u_row(x), model.v_row(y), model.v_row(neg));
        let g = scale * raw::logistic_loss_grad(dot(ux, vy) - dot(ux, vn));
        Self {
            x,
            y,
            neg,
            u_x: vy.iter().zip(vn).map(|(a, b)| g * (a - b)).collect(),
            v_y: ux.iter().map(|u| g * u).collect(),
            v_neg: ux.iter().map(|u| -g * u).collect(),
        }
    }

    pub fn scatter_into(&self, grad: &mut LatentGradient, dim: usize) {
        for k in 0..dim {
            grad.u[self.x * dim + k] += self.u_x[k];
            grad.v[self.y * dim + k] += self.v_y[k];
            grad.v[self.neg * dim + k] += self.v_neg[k];
        }
    }
}

/// Scale that makes a uniformly sampled triple an unbiased estimate of
/// [`bound_gradient`]: `|pairs| * (|items| - 1) * xi / ln 2`.
pub fn unbiased_scale(data: &InteractionSet, xi: f64) -> f64 {
    data.len() as f64 * (data.num_items() as f64 - 1.0) * xi / LN_2
}

/// Samples a pair uniformly from the observed set and a second item uniformly
/// from the rest, and returns the scaled triple gradient.
pub fn sg_estimate<R: rand::Rng + ?Sized>(
    model: &LatentModel,
    aux: &AuxVars,
    data: &InteractionSet,
    rng: &mut R,
) -> Result<SparseGradient> {
    if data.num_items() < 2 {
        return Err(Error::InvalidData("stochastic gradient needs at least 2 items".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidData("no observed pairs to sample".into()));
    }
    model.check_matches(data)?;
    aux.check(data)?;
    let i = rng.random_range(0..data.len());
    let (x, y) = data.pairs[i];
    let neg = index_excluding(rng, data.num_items(), y);
    Ok(SparseGradient::for_triple(model, x, y, neg, unbiased_scale(data, aux.xi[i])))
}

/// One stochastic step on the rows `U_x`, `V_y`, `V_neg`: shrink every touched
/// row by `shrink` and move against `weight * grad logistic(...)`.
#[inline]
pub(crate) fn sgd_step(ux: &mut [f64], vy: &mut [f64], vn: &mut [f64], weight: f64, shrink: f64) {
    let g = weight * raw::logistic_loss_grad(dot(ux, vy) - dot(ux, vn));
    for k in 0..ux.len() {
        let (u, a, b) = (ux[k], vy[k], vn[k]);
        ux[k] = shrink * u - g * (a - b);
        vy[k] = shrink * a - g * u;
        vn[k] = shrink * b + g * u;
    }
}

/// Mutable views of two distinct rows of a row-major buffer.
pub(crate) fn two_rows_mut(buf: &mut [f64], dim: usize, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = buf.split_at_mut(b * dim);
        (&mut lo[a * dim..(a + 1) * dim], &mut hi[..dim])
    } else {
        let (lo, hi) = buf.split_at_mut(a * dim);
        (&mut hi[..dim], &mut lo[b * dim..(b + 1) * dim])
    }
}

pub const DEFAULT_ETA_GRID: [f64; 11] = [
    1.0 / 256.0,
    1.0 / 128.0,
    1.0 / 64.0,
    1.0 / 32.0,
    1.0 / 16.0,
    1.0 / 8.0,
    0.25,
    0.5,
    1.0,
    2.0,
    4.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub dim: usize,
    pub eta: f64,
    /// Stochastic updates per (U,V)-step; `None` means one per observed pair.
    pub inner_updates: Option<usize>,
    pub outer_rounds: usize,
    pub mu: f64,
    pub seed: u64,
    /// Multiply each update by `|pairs| (|items| - 1) / ln 2`.
    pub include_scale_constants: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            dim: 5,
            eta: 0.125,
            inner_updates: None,
            outer_rounds: 50,
            mu: 0.0,
            seed: 0,
            include_scale_constants: false,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {}", self.eta)));
        }
        if self.inner_updates == Some(0) {
            return Err(Error::Config("inner_updates must be positive".into()));
        }
        if self.outer_rounds == 0 {
            return Err(Error::Config("outer_rounds must be positive".into()));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("regularization must be >= 0, got {}", self.mu)));
        }
        Ok(())
    }
}

/// Progress after one (U,V)-step and the following xi-step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundReport {
    /// 1-based.
    pub round: usize,
    pub updates: u64,
    pub elapsed_seconds: f64,
    /// Bound at the stale xi, just before the xi-step.
    pub bound_before_xi: f64,
    /// Bound after the xi-step; equals `exact_objective`.
    pub bound_after_xi: f64,
    pub exact_objective: f64,
}

#[derive(Debug, Clone)]
pub struct LatentTrainOutcome {
    pub model: LatentModel,
    pub aux: AuxVars,
    pub initial_objective: f64,
    pub history: Vec<RoundReport>,
}

impl LatentTrainOutcome {
    pub fn final_objective(&self) -> f64 {
        self.history.last().map_or(self.initial_objective, |r| r.exact_objective)
    }
}

/// Shared by the serial and parallel trainers so both start from the same
/// point for a given seed.
pub(crate) fn initial_model(data: &InteractionSet, dim: usize, seed: u64) -> LatentModel {
    LatentModel::random(data.num_contexts(), data.num_items(), dim, &mut rng::derive(seed, 0))
}

pub fn serial_train(data: &InteractionSet, config: &SgdConfig) -> Result<LatentTrainOutcome> {
    serial_train_observed(data, config, |_, _| {})
}

/// Serial alternating trainer; `observer` sees every round report along with
/// the model at that point.
pub fn serial_train_observed<F>(data: &InteractionSet, config: &SgdConfig, mut observer: F) -> Result<LatentTrainOutcome>
where
    F: FnMut(&RoundReport, &LatentModel),
{
    config.validate()?;
    data.check_trainable()?;
    let start = Instant::now();
    let dim = config.dim;
    let mut model = initial_model(data, dim, config.seed);
    let mut aux = xi_step(&model, data)?;
    let initial_objective = exact_objective(&model, data, config.mu)?;
    let mut sampler = rng::derive(config.seed, 1);

    let inner = config.inner_updates.unwrap_or(data.len());
    let constant = if config.include_scale_constants {
        data.len() as f64 * (data.num_items() as f64 - 1.0) / LN_2
    } else {
        1.0
    };
    let shrink = 1.0 - config.eta * config.mu;
    let mut history = Vec::with_capacity(config.outer_rounds);
    let mut updates = 0u64;

    for round in 1..=config.outer_rounds {
        for _ in 0..inner {
            let i = sampler.random_range(0..data.len());
            let (x, y) = data.pairs[i];
            let neg = index_excluding(&mut sampler, data.num_items(), y);
            let weight = config.eta * aux.xi[i] * constant;
            let ux = &mut model.u[x * dim..(x + 1) * dim];
            let (vy, vn) = two_rows_mut(&mut model.v, dim, y, neg);
            sgd_step(ux, vy, vn, weight, shrink);
        }
        updates += inner as u64;
        if !model.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite embeddings after round {round} with eta = {}",
                config.eta
            )));
        }
        let bound_before_xi = bound_objective(&model, &aux, data, config.mu)?;
        aux = xi_step(&model, data)?;
        let exact = exact_objective(&model, data, config.mu)?;
        let report = RoundReport {
            round,
            updates,
            elapsed_seconds: start.elapsed().as_secs_f64(),
            bound_before_xi,
            bound_after_xi: bound_objective(&model, &aux, data, config.mu)?,
            exact_objective: exact,
        };
        observer(&report, &model);
        history.push(report);
    }
    Ok(LatentTrainOutcome { model, aux, initial_objective, history })
}

/// Runs [`serial_train`] for every step size and keeps the run with the
/// lowest final exact objective. Diverging step sizes are skipped.
pub fn tune_eta(data: &InteractionSet, config: &SgdConfig, grid: &[f64]) -> Result<(f64, LatentTrainOutcome)> {
    let mut best: Option<(f64, LatentTrainOutcome)> = None;
    let mut last_err = None;
    for &eta in grid {
        let cfg = SgdConfig { eta, ..config.clone() };
        match serial_train(data, &cfg) {
            Ok(out) => {
                if best.as_ref().is_none_or(|(_, b)| out.final_objective() < b.final_objective()) {
                    best = Some((eta, out));
                }
            }
            Err(e @ Error::Divergence(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Config("step size grid is empty".into())))
}

/// `sum_k^n 1/k`.
pub fn harmonic(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum()
}

/// Rank-weighted loss `sum_pairs Phi(1 + rank)` with `Phi(t) = sum_{k<=t} 1/k`
/// and strict-inequality ranks. For reporting only.
pub fn baseline_objective(model: &LatentModel, data: &InteractionSet) -> Result<f64> {
    model.check_matches(data)?;
    let mut total = 0.0;
    for x in 0..data.num_contexts() {
        let idx = data.pair_indices_of(x);
        if idx.is_empty() {
            continue;
        }
        let s = model.scores_for(x);
        for &i in idx {
            let y = data.pairs[i].1;
            let above = s.iter().enumerate().filter(|&(j, &sj)| j != y && s[y] - sj < 0.0).count();
            total += harmonic(1 + above);
        }
    }
    Ok(total)
}
