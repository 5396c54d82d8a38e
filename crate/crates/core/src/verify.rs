//! Self-contained property checks run by `robirank verify`.
//!
//! Every check builds its own small random instances, so the suite needs no
//! input files. The scalar derivative checks take the derivative functions
//! as parameters; a harness can swap in a broken one and watch the check
//! fail.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::lcr::{self, AuxVars, InteractionSet, LatentGradient, LatentModel, SparseGradient};
use crate::loss::{raw, TransformKind};
use crate::ltr::{self, ContextBlock, LinearModel, RankItem, RankingDataset};
use crate::parallel::{self, PartitionAverage};
use crate::rng;

/// Central difference step.
pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    /// Worst value of the checked quantity over all instances.
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} measured={:.3e} tolerance={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, "  {}", self.detail)?;
        }
        Ok(())
    }
}

/// Derivatives under test.
#[derive(Clone, Copy)]
pub struct Derivatives {
    pub logistic_grad: fn(f64) -> f64,
    pub transform_grad: fn(TransformKind, f64) -> f64,
}

impl Default for Derivatives {
    fn default() -> Self {
        Self { logistic_grad: raw::logistic_loss_grad, transform_grad: raw::transform_grad }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random instances per gradient check.
    pub gradient_instances: usize,
    pub chain_instances: usize,
    pub tightness_instances: usize,
    pub xi_draws: usize,
    pub ssgd_instances: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 2024,
            gradient_instances: 20,
            chain_instances: 100,
            tightness_instances: 50,
            xi_draws: 100,
            ssgd_instances: 5,
        }
    }
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let hi = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let lo = f(&probe);
            probe[i] = x[i];
            (hi - lo) / (2.0 * FD_STEP)
        })
        .collect()
}

fn property(name: &str, measured: f64, tolerance: f64, passed: bool, detail: String) -> PropertyResult {
    PropertyResult { name: name.to_string(), passed, measured, tolerance, detail }
}

fn max_error_check(name: &str, errors: impl IntoIterator<Item = f64>) -> PropertyResult {
    let mut count = 0;
    let mut worst: f64 = 0.0;
    for e in errors {
        count += 1;
        // NaN counts as a failure
        worst = if e.is_nan() { f64::NAN } else if worst.is_nan() { worst } else { worst.max(e) };
    }
    let passed = worst <= FD_TOLERANCE;
    property(name, worst, FD_TOLERANCE, passed, format!("{count} instances"))
}

/// Scalar derivatives of the logistic loss, both transforms and both
/// compositions against central differences.
pub fn scalar_derivatives(derivs: &Derivatives, opts: &VerifyOptions) -> Vec<PropertyResult> {
    let mut r = rng::derive(opts.seed, 10);
    let n = opts.gradient_instances;
    let margins: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
    let sums: Vec<f64> = (0..n).map(|_| r.random_range(0.05..20.0)).collect();
    let fd = |f: &dyn Fn(f64) -> f64, t: f64| (f(t + FD_STEP) - f(t - FD_STEP)) / (2.0 * FD_STEP);
    let rel = |a: f64, b: f64| relative_error(&[a], &[b]);

    let mut out = vec![max_error_check(
        "logistic derivative",
        margins.iter().map(|&t| rel((derivs.logistic_grad)(t), fd(&raw::logistic_loss, t))),
    )];
    for (kind, label) in [(TransformKind::Rho1, "rho1"), (TransformKind::Rho2, "rho2")] {
        out.push(max_error_check(
            &format!("{label} derivative"),
            sums.iter().map(|&t| rel((derivs.transform_grad)(kind, t), fd(&|s| raw::transform(kind, s), t))),
        ));
        out.push(max_error_check(
            &format!("{label}(logistic) derivative"),
            margins.iter().map(|&t| {
                let chain = (derivs.transform_grad)(kind, raw::logistic_loss(t)) * (derivs.logistic_grad)(t);
                rel(chain, fd(&|s| raw::transform(kind, raw::logistic_loss(s)), t))
            }),
        ));
    }
    out
}

/// Random feature-track instance with at least one relevant item per context.
pub fn random_ranking_instance<R: Rng + ?Sized>(r: &mut R, contexts: usize, dim: usize) -> RankingDataset {
    let blocks = (0..contexts)
        .map(|c| {
            let n = r.random_range(2..6);
            let mut items: Vec<RankItem> = (0..n)
                .map(|id| RankItem {
                    id,
                    features: (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect(),
                    score: r.random_range(0..3) as f64,
                })
                .collect();
            if items.iter().all(|i| i.score == 0.0) {
                items[0].score = 1.0;
            }
            ContextBlock { id: format!("c{c}"), items, weight: r.random_range(0.5..2.0) }
        })
        .collect();
    RankingDataset::new(blocks, dim).expect("generated instance is valid")
}

fn random_linear<R: Rng + ?Sized>(r: &mut R, dim: usize) -> LinearModel {
    LinearModel { omega: (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect() }
}

/// Random latent instance; every context has at least one pair.
pub fn random_latent_instance<R: Rng + ?Sized>(
    r: &mut R,
    contexts: usize,
    items: usize,
    dim: usize,
    max_pairs: usize,
) -> (InteractionSet, LatentModel) {
    let mut pairs: Vec<(usize, usize)> = (0..contexts).map(|x| (x, r.random_range(0..items))).collect();
    while pairs.len() < max_pairs {
        let p = (r.random_range(0..contexts), r.random_range(0..items));
        if !pairs.contains(&p) {
            pairs.push(p);
        }
        if pairs.len() >= contexts * items {
            break;
        }
    }
    let data = InteractionSet::new(contexts, items, pairs).expect("generated pairs are valid");
    let model = LatentModel::random(contexts, items, dim, r);
    (data, model)
}

fn random_xi<R: Rng + ?Sized>(r: &mut R, n: usize) -> AuxVars {
    AuxVars { xi: (0..n).map(|_| r.random_range(0.05..1.5)).collect() }
}

/// Full robust-objective gradient in omega, and bound gradient in (U,V).
pub fn objective_gradients(opts: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut r = rng::derive(opts.seed, 11);
    let mut out = Vec::new();
    for (kind, label) in [(TransformKind::Rho1, "rho1"), (TransformKind::Rho2, "rho2")] {
        let mut errors = Vec::new();
        for _ in 0..opts.gradient_instances {
            let dim = r.random_range(2..6);
            let data = random_ranking_instance(&mut r, 3, dim);
            let model = random_linear(&mut r, dim);
            let lambda = r.random_range(0.0..1.0);
            let analytic = ltr::gradient_robirank(&model, &data, lambda, kind)?;
            let numeric = numeric_gradient(
                |w| ltr::objective_robirank(&LinearModel { omega: w.to_vec() }, &data, lambda, kind).unwrap(),
                &model.omega,
            );
            errors.push(relative_error(&analytic, &numeric));
        }
        out.push(max_error_check(&format!("ranking gradient ({label})"), errors));
    }

    let mut errors = Vec::new();
    for _ in 0..opts.gradient_instances {
        let (data, model) = random_latent_instance(&mut r, 3, 5, 3, 7);
        let aux = random_xi(&mut r, data.len());
        let analytic = lcr::bound_gradient(&model, &aux, &data)?.flat();
        let split = model.u.len();
        let mut flat = model.u.clone();
        flat.extend_from_slice(&model.v);
        let numeric = numeric_gradient(
            |w| {
                let m = LatentModel { u: w[..split].to_vec(), v: w[split..].to_vec(), ..model.clone() };
                lcr::bound_objective(&m, &aux, &data, 0.0).unwrap()
            },
            &flat,
        );
        errors.push(relative_error(&analytic, &numeric));
    }
    out.push(max_error_check("latent bound gradient", errors));
    Ok(out)
}

/// `rho1 bound >= rho2 bound >= rho2 of exact ranks`, strictly.
pub fn bound_chain(opts: &VerifyOptions) -> Result<PropertyResult> {
    let mut r = rng::derive(opts.seed, 12);
    let mut min_gap = f64::INFINITY;
    let mut failures = 0;
    for _ in 0..opts.chain_instances {
        let dim = r.random_range(1..5);
        let contexts = r.random_range(1..4);
        let data = random_ranking_instance(&mut r, contexts, dim);
        let model = random_linear(&mut r, dim);
        let l1 = ltr::objective_robirank(&model, &data, 0.0, TransformKind::Rho1)?;
        let l2 = ltr::objective_robirank(&model, &data, 0.0, TransformKind::Rho2)?;
        let exact = ltr::objective_indicator(&model, &data, Some(TransformKind::Rho2))?;
        let gap = (l1 - l2).min(l2 - exact);
        if gap.is_nan() || gap <= 0.0 {
            failures += 1;
        }
        min_gap = min_gap.min(gap);
    }
    Ok(property(
        "bound chain",
        min_gap,
        0.0,
        failures == 0,
        format!("{} instances, {failures} violations, smallest gap shown", opts.chain_instances),
    ))
}

/// Bound equals the exact objective at the closed-form xi, and dominates it
/// for arbitrary positive xi.
pub fn linearization(opts: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut r = rng::derive(opts.seed, 13);
    let mut worst_tight: f64 = 0.0;
    let mut min_slack = f64::INFINITY;
    for _ in 0..opts.tightness_instances {
        let (data, model) = random_latent_instance(&mut r, 4, 6, 3, 10);
        let mu = r.random_range(0.0..0.5);
        let exact = lcr::exact_objective(&model, &data, mu)?;
        let xi = lcr::xi_step(&model, &data)?;
        worst_tight = worst_tight.max((lcr::bound_objective(&model, &xi, &data, mu)? - exact).abs());
        for _ in 0..opts.xi_draws {
            let aux = AuxVars { xi: (0..data.len()).map(|_| r.random_range(1e-3..3.0)).collect() };
            min_slack = min_slack.min(lcr::bound_objective(&model, &aux, &data, mu)? - exact);
        }
    }
    Ok(vec![
        property(
            "bound tight at xi-step",
            worst_tight,
            1e-10,
            worst_tight <= 1e-10,
            format!("{} instances", opts.tightness_instances),
        ),
        property(
            "bound dominates exact",
            min_slack,
            0.0,
            min_slack >= 0.0,
            format!("{} xi draws each, smallest slack shown", opts.xi_draws),
        ),
    ])
}

/// Expected stochastic gradient by full enumeration of (pair, second item).
pub fn enumerate_expected_gradient(model: &LatentModel, aux: &AuxVars, data: &InteractionSet) -> LatentGradient {
    let mut expected = LatentGradient::zeros_like(model);
    let prob = 1.0 / (data.len() as f64 * (data.num_items() as f64 - 1.0));
    for (i, &(x, y)) in data.pairs().iter().enumerate() {
        let scale = lcr::unbiased_scale(data, aux.xi[i]) * prob;
        for neg in (0..data.num_items()).filter(|&j| j != y) {
            SparseGradient::for_triple(model, x, y, neg, scale).scatter_into(&mut expected, model.dim);
        }
    }
    expected
}

pub fn unbiasedness(opts: &VerifyOptions) -> Result<PropertyResult> {
    let mut r = rng::derive(opts.seed, 14);
    let mut worst: f64 = 0.0;
    for _ in 0..opts.gradient_instances {
        let items = r.random_range(2..5);
        let contexts = r.random_range(1..4);
        let dim = r.random_range(1..4);
        let (data, model) = random_latent_instance(&mut r, contexts, items, dim, 6.min(contexts * items));
        let aux = random_xi(&mut r, data.len());
        let exact = lcr::bound_gradient(&model, &aux, &data)?.flat();
        worst = worst.max(relative_error(&enumerate_expected_gradient(&model, &aux, &data).flat(), &exact));
    }
    Ok(property(
        "stochastic gradient unbiased",
        worst,
        1e-10,
        worst <= 1e-10,
        format!("{} enumerated instances", opts.gradient_instances),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsgdSummary {
    pub constants: Vec<f64>,
    pub cosines: Vec<f64>,
    /// `max / min - 1` over the fitted constants.
    pub spread: f64,
}

/// Exhaustive partition averages with `p = 2`, four items.
pub fn ssgd_summary(opts: &VerifyOptions) -> Result<SsgdSummary> {
    let mut r = rng::derive(opts.seed, 15);
    let mut constants = Vec::new();
    let mut cosines = Vec::new();
    for _ in 0..opts.ssgd_instances {
        let (data, model) = random_latent_instance(&mut r, 4, 4, 2, 9);
        let aux = random_xi(&mut r, data.len());
        let contexts = parallel::make_partitions(4, 2, &mut r)?;
        let chk = parallel::ssgd_identity_check(&model, &aux, &data, &contexts, PartitionAverage::Exhaustive, &mut r)?;
        constants.push(chk.constant);
        cosines.push(chk.cosine);
    }
    let max = constants.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = constants.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(SsgdSummary { spread: max / min - 1.0, constants, cosines })
}

pub fn ssgd_identity(opts: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let s = ssgd_summary(opts)?;
    let worst_cos = s.cosines.iter().cloned().fold(f64::INFINITY, f64::min);
    let shown: Vec<String> = s.constants.iter().map(|c| format!("{c:.6}")).collect();
    Ok(vec![
        property(
            "ssgd direction",
            worst_cos,
            0.999,
            worst_cos >= 0.999,
            format!("smallest cosine over {} instances", s.cosines.len()),
        ),
        property(
            "ssgd constant stable",
            s.spread,
            0.05,
            s.spread <= 0.05,
            format!("fitted constants [{}]", shown.join(", ")),
        ),
    ])
}

/// Runs every property.
pub fn run_all(derivs: &Derivatives, opts: &VerifyOptions) -> Result<Vec<PropertyResult>> {
    let mut out = scalar_derivatives(derivs, opts);
    out.extend(objective_gradients(opts)?);
    out.push(bound_chain(opts)?);
    out.extend(linearization(opts)?);
    out.push(unbiasedness(opts)?);
    out.extend(ssgd_identity(opts)?);
    Ok(out)
}
