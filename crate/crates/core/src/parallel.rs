//! Stratified parallel training with shared-nothing workers.
//!
//! Contexts are split once into `p` parts; worker `q` owns the context rows
//! `U^(q)`, the pairs of those contexts and their auxiliary variables for the
//! whole run. Before every (U,V) round the coordinator samples a fresh
//! partition of the items and hands worker `q` exclusive ownership of the
//! item rows `V^(q)`. Worker `q` then runs SGD on the stratum
//!
//! ```text
//! sum over pairs (x, y) with x in X^(q), y in Y^(q) of
//!     -log2(xi) + (xi * (sum_{y' in Y^(q), y' != y} logistic(f(x,y) - f(x,y')) + 1) - 1) / ln 2
//! ```
//!
//! Workers touch disjoint rows, so no locking is needed. The blocks travel
//! back to the coordinator at the end of the round, which acts as the
//! barrier. The xi-step shares a read-only copy of the whole `V` with every
//! worker and each worker refreshes its own auxiliary variables.

use std::collections::HashMap;
use std::f64::consts::LN_2;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lcr::{self, dot, AuxVars, InteractionSet, LatentGradient, LatentModel, LatentTrainOutcome, RoundReport};
use crate::loss::{raw, TransformKind};
use crate::rng::{self, index_excluding};

/// Balanced assignment of `0..n` to parts `0..parts`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    parts: usize,
    assignment: Vec<usize>,
}

impl Partition {
    /// Wraps an explicit assignment.
    pub fn from_assignment(parts: usize, assignment: Vec<usize>) -> Result<Self> {
        if parts == 0 || assignment.iter().any(|&q| q >= parts) {
            return Err(Error::Config(format!("assignment does not fit {parts} parts")));
        }
        Ok(Self { parts, assignment })
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn part_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Members of part `q`, ascending.
    pub fn members(&self, q: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] == q).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.parts];
        for &q in &self.assignment {
            sizes[q] += 1;
        }
        sizes
    }
}

/// Uniformly random balanced partition: parts `0..n % p` get `ceil(n/p)`
/// members, the rest `floor(n/p)`.
pub fn make_partitions<R: rand::Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Result<Partition> {
    if p == 0 || p > n {
        return Err(Error::Config(format!("cannot split {n} elements into {p} non-empty parts")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut assignment = vec![0; n];
    for (pos, &e) in perm.iter().enumerate() {
        assignment[e] = pos % p;
    }
    Ok(Partition { parts: p, assignment })
}

/// Stratum objective of worker `q` (no regularizer).
pub fn stratum_objective(
    model: &LatentModel,
    aux: &AuxVars,
    data: &InteractionSet,
    contexts: &Partition,
    items: &Partition,
    q: usize,
) -> Result<f64> {
    check_strata(model, aux, data, contexts, items, q)?;
    let members = items.members(q);
    let mut total = 0.0;
    for (i, &(x, y)) in data.pairs().iter().enumerate() {
        if contexts.part_of(x) != q || items.part_of(y) != q {
            continue;
        }
        let sy = dot(model.u_row(x), model.v_row(y));
        let t: f64 = members
            .iter()
            .filter(|&&j| j != y)
            .map(|&j| raw::logistic_loss(sy - dot(model.u_row(x), model.v_row(j))))
            .sum();
        let xi = aux.xi[i];
        total += -xi.log2() + (xi * (t + 1.0) - 1.0) / LN_2;
    }
    Ok(total)
}

/// Gradient of [`stratum_objective`] in `(U, V)`.
pub fn stratum_gradient(
    model: &LatentModel,
    aux: &AuxVars,
    data: &InteractionSet,
    contexts: &Partition,
    items: &Partition,
    q: usize,
) -> Result<LatentGradient> {
    check_strata(model, aux, data, contexts, items, q)?;
    let members = items.members(q);
    let mut grad = LatentGradient::zeros_like(model);
    for (i, &(x, y)) in data.pairs().iter().enumerate() {
        if contexts.part_of(x) != q || items.part_of(y) != q {
            continue;
        }
        let sy = dot(model.u_row(x), model.v_row(y));
        for &j in members.iter().filter(|&&j| j != y) {
            let g = aux.xi[i] / LN_2 * raw::logistic_loss_grad(sy - dot(model.u_row(x), model.v_row(j)));
            grad.add_triple(model, x, y, j, g);
        }
    }
    Ok(grad)
}

fn check_strata(
    model: &LatentModel,
    aux: &AuxVars,
    data: &InteractionSet,
    contexts: &Partition,
    items: &Partition,
    q: usize,
) -> Result<()> {
    model.check_matches(data)?;
    aux.check(data)?;
    if contexts.len() != data.num_contexts() || items.len() != data.num_items() {
        return Err(Error::Shape("partitions do not cover the data".into()));
    }
    if contexts.parts() != items.parts() {
        return Err(Error::Config(format!(
            "context partition has {} parts, item partition {}",
            contexts.parts(),
            items.parts()
        )));
    }
    if q >= contexts.parts() {
        return Err(Error::Config(format!("worker {q} out of range for {} workers", contexts.parts())));
    }
    Ok(())
}

/// How to average over item partitions in [`ssgd_identity_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionAverage {
    /// Every balanced partition that [`make_partitions`] can produce, equally
    /// weighted.
    Exhaustive,
    Sampled { trials: usize },
}

#[derive(Debug, Clone)]
pub struct SsgdCheck {
    /// Full bound gradient in `(U, V)`, flattened.
    pub lhs: Vec<f64>,
    /// Mean over item partitions of the summed stratum gradients.
    pub mean_rhs: Vec<f64>,
    /// Least-squares scalar `c` minimizing `|lhs - c * mean_rhs|`.
    pub constant: f64,
    pub scaled_mean_rhs: Vec<f64>,
    pub cosine: f64,
    pub partitions: usize,
}

/// Largest `p^|items|` enumerated by [`PartitionAverage::Exhaustive`].
pub const MAX_EXHAUSTIVE_ASSIGNMENTS: u64 = 1 << 22;

/// Compares the bound gradient with the expected summed stratum gradient
/// under random item partitions, for a fixed context partition.
pub fn ssgd_identity_check<R: rand::Rng + ?Sized>(
    model: &LatentModel,
    aux: &AuxVars,
    data: &InteractionSet,
    contexts: &Partition,
    mode: PartitionAverage,
    rng: &mut R,
) -> Result<SsgdCheck> {
    let p = contexts.parts();
    let n = data.num_items();
    if p > n {
        return Err(Error::Config(format!("{p} workers but only {n} items")));
    }
    let lhs = lcr::bound_gradient(model, aux, data)?.flat();

    let partitions: Vec<Partition> = match mode {
        PartitionAverage::Exhaustive => {
            let total = (p as u64).checked_pow(n as u32).filter(|&t| t <= MAX_EXHAUSTIVE_ASSIGNMENTS);
            let Some(total) = total else {
                return Err(Error::Config(format!(
                    "{n} items over {p} parts is too large to enumerate exhaustively"
                )));
            };
            let target: Vec<usize> = (0..p).map(|q| n / p + usize::from(q < n % p)).collect();
            let mut out = Vec::new();
            let mut assignment = vec![0usize; n];
            for code in 0..total {
                let mut c = code;
                for a in assignment.iter_mut() {
                    *a = (c % p as u64) as usize;
                    c /= p as u64;
                }
                let part = Partition { parts: p, assignment: assignment.clone() };
                if part.sizes() == target {
                    out.push(part);
                }
            }
            out
        }
        PartitionAverage::Sampled { trials } => {
            if trials == 0 {
                return Err(Error::Config("at least one sampled partition is required".into()));
            }
            (0..trials).map(|_| make_partitions(n, p, rng)).collect::<Result<_>>()?
        }
    };

    let mut mean_rhs = vec![0.0; lhs.len()];
    for items in &partitions {
        for q in 0..p {
            let g = stratum_gradient(model, aux, data, contexts, items, q)?.flat();
            for (m, v) in mean_rhs.iter_mut().zip(g) {
                *m += v;
            }
        }
    }
    let count = partitions.len() as f64;
    mean_rhs.iter_mut().for_each(|m| *m /= count);

    let lr: f64 = dot(&lhs, &mean_rhs);
    let rr: f64 = dot(&mean_rhs, &mean_rhs);
    let ll: f64 = dot(&lhs, &lhs);
    let constant = if rr > 0.0 { lr / rr } else { 0.0 };
    let cosine = if rr > 0.0 && ll > 0.0 { lr / (rr.sqrt() * ll.sqrt()) } else { 0.0 };
    let scaled_mean_rhs = mean_rhs.iter().map(|m| constant * m).collect();
    Ok(SsgdCheck { lhs, mean_rhs, constant, scaled_mean_rhs, cosine, partitions: partitions.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelConfig {
    pub workers: usize,
    pub dim: usize,
    pub eta: f64,
    /// Updates each worker makes per (U,V) round. `None` spreads one update
    /// per observed pair over all workers and rounds of an outer iteration.
    pub inner_updates_per_worker: Option<usize>,
    /// Item-partition rounds between xi-steps. `None` means one per worker.
    pub uv_rounds: Option<usize>,
    pub outer_rounds: usize,
    pub mu: f64,
    pub seed: u64,
}

impl Default for ParallelConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            dim: 5,
            eta: 0.125,
            inner_updates_per_worker: None,
            uv_rounds: None,
            outer_rounds: 50,
            mu: 0.0,
            seed: 0,
        }
    }
}

impl ParallelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("at least one worker is required".into()));
        }
        if self.dim == 0 || self.outer_rounds == 0 {
            return Err(Error::Config("dimension and outer rounds must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {}", self.eta)));
        }
        if self.inner_updates_per_worker == Some(0) || self.uv_rounds == Some(0) {
            return Err(Error::Config("update and round counts must be positive".into()));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("regularization must be >= 0, got {}", self.mu)));
        }
        Ok(())
    }

    pub fn uv_rounds(&self) -> usize {
        self.uv_rounds.unwrap_or(self.workers)
    }

    pub fn updates_per_worker(&self, data: &InteractionSet) -> usize {
        self.inner_updates_per_worker
            .unwrap_or_else(|| data.len().div_ceil(self.workers * self.uv_rounds()).max(1))
    }
}

/// Bookkeeping gathered by the coordinator.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ParallelStats {
    /// Rows dealt to more than one worker, or to none, in some round.
    pub ownership_conflicts: usize,
    /// Blocks returned with a round stamp other than the current round.
    pub stale_blocks: usize,
    /// Per worker, the most parameter rows held at once during a (U,V) round.
    pub max_resident_rows: Vec<usize>,
    pub updates_per_worker: Vec<u64>,
    /// Wall time spent inside (U,V) rounds.
    pub uv_seconds: f64,
}

impl ParallelStats {
    pub fn total_updates(&self) -> u64 {
        self.updates_per_worker.iter().sum()
    }

    pub fn updates_per_second(&self) -> f64 {
        if self.uv_seconds > 0.0 {
            self.total_updates() as f64 / self.uv_seconds
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParallelOutcome {
    pub outcome: LatentTrainOutcome,
    pub context_partition: Partition,
    pub stats: ParallelStats,
}

struct VBlock {
    round: u64,
    items: Vec<usize>,
    rows: Vec<f64>,
}

enum Command {
    Train(VBlock),
    XiStep { round: u64, v: Arc<Vec<f64>> },
    Finish,
}

enum Reply {
    Trained { worker: usize, block: VBlock, updates: u64, resident_rows: usize },
    XiDone { worker: usize, partial: XiPartial },
    Finished { worker: usize, contexts: Vec<usize>, u: Vec<f64>, xi: Vec<(usize, f64)> },
    Diverged { worker: usize, round: u64 },
}

#[derive(Default)]
struct XiPartial {
    bound_before: f64,
    exact: f64,
    u_sq: f64,
    u_rows: Vec<f64>,
}

struct Worker {
    id: usize,
    dim: usize,
    num_items: usize,
    contexts: Vec<usize>,
    u: Vec<f64>,
    // (local context row, item, global pair index)
    pairs: Vec<(usize, usize, usize)>,
    xi: Vec<f64>,
    eta: f64,
    shrink: f64,
    updates_per_round: usize,
    rng: rng::Rng,
}

impl Worker {
    fn run(mut self, commands: Receiver<Command>, replies: Sender<Reply>) {
        while let Ok(cmd) = commands.recv() {
            let reply = match cmd {
                Command::Train(block) => self.train(block),
                Command::XiStep { round, v } => self.xi_step(round, &v),
                Command::Finish => {
                    let xi = self.pairs.iter().zip(&self.xi).map(|(&(_, _, i), &v)| (i, v)).collect();
                    let _ = replies.send(Reply::Finished {
                        worker: self.id,
                        contexts: std::mem::take(&mut self.contexts),
                        u: std::mem::take(&mut self.u),
                        xi,
                    });
                    return;
                }
            };
            if replies.send(reply).is_err() {
                return;
            }
        }
    }

    fn train(&mut self, mut block: VBlock) -> Reply {
        let d = self.dim;
        let slot: HashMap<usize, usize> = block.items.iter().enumerate().map(|(s, &y)| (y, s)).collect();
        // pairs of this worker whose item is in the block: (pair slot, item slot)
        let eligible: Vec<(usize, usize)> = self
            .pairs
            .iter()
            .enumerate()
            .filter_map(|(k, &(_, y, _))| slot.get(&y).map(|&s| (k, s)))
            .collect();
        let resident_rows = self.contexts.len() + block.items.len();
        let n_block = block.items.len();
        let mut updates = 0u64;
        if !eligible.is_empty() && n_block >= 2 {
            for _ in 0..self.updates_per_round {
                let (k, sy) = eligible[self.rng.random_range(0..eligible.len())];
                let sn = index_excluding(&mut self.rng, n_block, sy);
                let lx = self.pairs[k].0;
                let ux = &mut self.u[lx * d..(lx + 1) * d];
                let (vy, vn) = lcr::two_rows_mut(&mut block.rows, d, sy, sn);
                lcr::sgd_step(ux, vy, vn, self.eta * self.xi[k], self.shrink);
            }
            updates = self.updates_per_round as u64;
            if !self.u.iter().chain(&block.rows).all(|v| v.is_finite()) {
                return Reply::Diverged { worker: self.id, round: block.round };
            }
        }
        Reply::Trained { worker: self.id, block, updates, resident_rows }
    }

    fn xi_step(&mut self, round: u64, v: &[f64]) -> Reply {
        let d = self.dim;
        let mut partial = XiPartial::default();
        let mut scores = vec![0.0; self.num_items];
        let mut current = usize::MAX;
        for (k, &(lx, y, _)) in self.pairs.iter().enumerate() {
            if lx != current {
                let ux = &self.u[lx * d..(lx + 1) * d];
                for (j, s) in scores.iter_mut().enumerate() {
                    *s = dot(ux, &v[j * d..(j + 1) * d]);
                }
                current = lx;
            }
            let t: f64 = scores
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != y)
                .map(|(_, &sj)| raw::logistic_loss(scores[y] - sj))
                .sum();
            let old = self.xi[k];
            partial.bound_before += -old.log2() + (old * (t + 1.0) - 1.0) / LN_2;
            partial.exact += raw::transform(TransformKind::Rho1, t);
            self.xi[k] = 1.0 / (t + 1.0);
        }
        if !partial.exact.is_finite() {
            return Reply::Diverged { worker: self.id, round };
        }
        partial.u_sq = self.u.iter().map(|e| e * e).sum();
        partial.u_rows = self.u.clone();
        Reply::XiDone { worker: self.id, partial }
    }
}

pub fn parallel_train(data: &InteractionSet, config: &ParallelConfig) -> Result<ParallelOutcome> {
    parallel_train_observed(data, config, |_, _| {})
}

/// Runs the stratified trainer; `observer` is called after every xi-step
/// with the round report and the assembled model.
pub fn parallel_train_observed<F>(data: &InteractionSet, config: &ParallelConfig, mut observer: F) -> Result<ParallelOutcome>
where
    F: FnMut(&RoundReport, &LatentModel),
{
    config.validate()?;
    data.check_trainable()?;
    let p = config.workers;
    if p > data.num_items() || p > data.num_contexts() {
        return Err(Error::Config(format!(
            "{p} workers need at least {p} contexts and {p} items; have {} and {}",
            data.num_contexts(),
            data.num_items()
        )));
    }
    let start = Instant::now();
    let d = config.dim;
    let mut model = lcr::initial_model(data, d, config.seed);
    let contexts = make_partitions(data.num_contexts(), p, &mut rng::derive(config.seed, 2))?;
    let mut coordinator_rng = rng::derive(config.seed, 3);
    let updates_per_round = config.updates_per_worker(data);
    let uv_rounds = config.uv_rounds();

    let mut workers = Vec::with_capacity(p);
    for q in 0..p {
        let owned = contexts.members(q);
        let local: HashMap<usize, usize> = owned.iter().enumerate().map(|(l, &x)| (x, l)).collect();
        let mut pairs = Vec::new();
        for &x in &owned {
            for &i in data.pair_indices_of(x) {
                pairs.push((local[&x], data.pairs()[i].1, i));
            }
        }
        let u = owned.iter().flat_map(|&x| model.u_row(x).to_vec()).collect();
        workers.push(Worker {
            id: q,
            dim: d,
            num_items: data.num_items(),
            xi: vec![1.0; pairs.len()],
            contexts: owned,
            u,
            pairs,
            eta: config.eta,
            shrink: 1.0 - config.eta * config.mu,
            updates_per_round,
            rng: rng::derive(config.seed, 1000 + q as u64),
        });
    }

    let initial_objective = lcr::exact_objective(&model, data, config.mu)?;
    let mut stats = ParallelStats {
        max_resident_rows: vec![0; p],
        updates_per_worker: vec![0; p],
        ..Default::default()
    };
    let mut history = Vec::with_capacity(config.outer_rounds);

    let result: Result<Vec<Reply>> = thread::scope(|scope| {
        let (reply_tx, reply_rx) = channel::<Reply>();
        let mut senders = Vec::with_capacity(p);
        for w in workers {
            let (tx, rx) = channel::<Command>();
            let replies = reply_tx.clone();
            scope.spawn(move || w.run(rx, replies));
            senders.push(tx);
        }
        drop(reply_tx);

        let send = |q: usize, cmd: Command| -> Result<()> {
            senders[q]
                .send(cmd)
                .map_err(|_| Error::Divergence(format!("worker {q} exited unexpectedly")))
        };
        let recv = || -> Result<Reply> {
            reply_rx.recv().map_err(|_| Error::Divergence("worker pool shut down unexpectedly".into()))
        };
        let finish = || {
            for tx in &senders {
                let _ = tx.send(Command::Finish);
            }
        };

        let mut run = || -> Result<()> {
            let mut round_stamp: u64 = 0;
            // initial xi from the starting model
            let v = Arc::new(model.v.clone());
            for q in 0..p {
                send(q, Command::XiStep { round: 0, v: Arc::clone(&v) })?;
            }
            for _ in 0..p {
                match recv()? {
                    Reply::XiDone { .. } => {}
                    Reply::Diverged { worker, .. } => {
                        return Err(Error::Divergence(format!("worker {worker} diverged at initialization")))
                    }
                    _ => unreachable!("unexpected reply during xi-step"),
                }
            }
            let mut updates_total = 0u64;
            for outer in 1..=config.outer_rounds {
                for _ in 0..uv_rounds {
                    round_stamp += 1;
                    let items = make_partitions(data.num_items(), p, &mut coordinator_rng)?;
                    let mut dealt = vec![0u32; data.num_items()];
                    let t0 = Instant::now();
                    for q in 0..p {
                        let members = items.members(q);
                        let mut rows = Vec::with_capacity(members.len() * d);
                        for &y in &members {
                            dealt[y] += 1;
                            rows.extend_from_slice(model.v_row(y));
                        }
                        send(q, Command::Train(VBlock { round: round_stamp, items: members, rows }))?;
                    }
                    stats.ownership_conflicts += dealt.iter().filter(|&&c| c != 1).count();
                    let mut returned = vec![0u32; data.num_items()];
                    for _ in 0..p {
                        match recv()? {
                            Reply::Trained { worker, block, updates, resident_rows } => {
                                if block.round != round_stamp {
                                    stats.stale_blocks += 1;
                                }
                                for (s, &y) in block.items.iter().enumerate() {
                                    returned[y] += 1;
                                    debug_assert_eq!(items.part_of(y), worker, "row {y} came back from the wrong worker");
                                    model.v[y * d..(y + 1) * d].copy_from_slice(&block.rows[s * d..(s + 1) * d]);
                                }
                                stats.updates_per_worker[worker] += updates;
                                updates_total += updates;
                                let r = &mut stats.max_resident_rows[worker];
                                *r = (*r).max(resident_rows);
                            }
                            Reply::Diverged { worker, round } => {
                                return Err(Error::Divergence(format!(
                                    "worker {worker} produced non-finite parameters in round {round} (outer round {outer}) with eta = {}",
                                    config.eta
                                )))
                            }
                            _ => unreachable!("unexpected reply during (U,V) round"),
                        }
                    }
                    stats.ownership_conflicts += returned.iter().filter(|&&c| c != 1).count();
                    stats.uv_seconds += t0.elapsed().as_secs_f64();
                }

                let v = Arc::new(model.v.clone());
                for q in 0..p {
                    send(q, Command::XiStep { round: round_stamp, v: Arc::clone(&v) })?;
                }
                let mut partials: Vec<Option<XiPartial>> = (0..p).map(|_| None).collect();
                for _ in 0..p {
                    match recv()? {
                        Reply::XiDone { worker, partial } => partials[worker] = Some(partial),
                        Reply::Diverged { worker, .. } => {
                            return Err(Error::Divergence(format!(
                                "worker {worker} diverged in outer round {outer} with eta = {}",
                                config.eta
                            )))
                        }
                        _ => unreachable!("unexpected reply during xi-step"),
                    }
                }
                // sum in worker order so the result does not depend on timing
                let (mut before, mut exact, mut u_sq) = (0.0, 0.0, 0.0);
                for (q, part) in partials.into_iter().enumerate() {
                    let part = part.expect("every worker replied");
                    before += part.bound_before;
                    exact += part.exact;
                    u_sq += part.u_sq;
                    for (l, &x) in contexts.members(q).iter().enumerate() {
                        model.u[x * d..(x + 1) * d].copy_from_slice(&part.u_rows[l * d..(l + 1) * d]);
                    }
                }
                let reg = 0.5 * config.mu * (u_sq + model.v.iter().map(|e| e * e).sum::<f64>());
                let report = RoundReport {
                    round: outer,
                    updates: updates_total,
                    elapsed_seconds: start.elapsed().as_secs_f64(),
                    bound_before_xi: before + reg,
                    bound_after_xi: exact + reg,
                    exact_objective: exact + reg,
                };
                observer(&report, &model);
                history.push(report);
            }
            Ok(())
        };

        let outcome = run();
        finish();
        let mut finals = Vec::with_capacity(p);
        while let Ok(reply) = reply_rx.recv() {
            if let Reply::Finished { .. } = reply {
                finals.push(reply);
            }
        }
        outcome.map(|_| finals)
    });

    let mut aux = AuxVars { xi: vec![0.0; data.len()] };
    for reply in result? {
        if let Reply::Finished { worker, contexts: owned, u, xi } = reply {
            debug_assert_eq!(owned, contexts.members(worker));
            for (l, &x) in owned.iter().enumerate() {
                model.u[x * d..(x + 1) * d].copy_from_slice(&u[l * d..(l + 1) * d]);
            }
            for (i, v) in xi {
                aux.xi[i] = v;
            }
        }
    }
    Ok(ParallelOutcome {
        outcome: LatentTrainOutcome { model, aux, initial_objective, history },
        context_partition: contexts,
        stats,
    })
}
