//! Dataset ingestion and synthetic instances.
//!
//! Feature-based ranking data uses the LETOR / SVMlight-with-qid text format:
//!
//! ```text
//! <label> qid:<id> <index>:<value> <index>:<value> ... # optional comment
//! ```
//!
//! with 1-based, strictly increasing feature indices. Lines are grouped into
//! contexts by `qid` in first-appearance order; lines of one query need not
//! be adjacent. Interaction data is one `<user> <item> [count]` record per
//! line; counts are validated and discarded.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lcr::InteractionSet;
use crate::ltr::{ContextBlock, Gain, LinearModel, RankItem, RankingDataset};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LetorRecord {
    pub label: u32,
    pub qid: String,
    /// `(1-based index, value)`, strictly increasing in index.
    pub features: Vec<(usize, f64)>,
    pub comment: Option<String>,
}

/// Parses one line; `Ok(None)` for blank and comment-only lines.
pub fn parse_letor_line(line: &str, line_no: usize) -> Result<Option<LetorRecord>> {
    let (body, comment) = match line.find('#') {
        Some(pos) => (&line[..pos], Some(line[pos + 1..].trim().to_string())),
        None => (line, None),
    };
    let mut tokens = body.split_ascii_whitespace();
    let Some(label_tok) = tokens.next() else {
        return Ok(None);
    };
    let label: u32 = label_tok
        .parse()
        .map_err(|_| Error::parse(line_no, format!("invalid relevance label {label_tok:?}")))?;
    let qid = tokens
        .next()
        .and_then(|t| t.strip_prefix("qid:"))
        .filter(|q| !q.is_empty())
        .ok_or_else(|| Error::parse(line_no, "missing qid:<id> after the label"))?
        .to_string();

    let mut features = Vec::new();
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| Error::parse(line_no, format!("expected <index>:<value>, got {tok:?}")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| Error::parse(line_no, format!("invalid feature index {idx:?}")))?;
        if idx == 0 {
            return Err(Error::parse(line_no, "feature indices are 1-based"));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| Error::parse(line_no, format!("invalid feature value {val:?}")))?;
        if !val.is_finite() {
            return Err(Error::parse(line_no, format!("non-finite feature value for index {idx}")));
        }
        if let Some(&(prev, _)) = features.last() {
            if idx == prev {
                return Err(Error::parse(line_no, format!("duplicate feature index {idx}")));
            }
            if idx < prev {
                return Err(Error::parse(line_no, format!("feature index {idx} after {prev}; indices must increase")));
            }
        }
        features.push((idx, val));
    }
    Ok(Some(LetorRecord { label, qid, features, comment }))
}

#[derive(Debug, Clone, Default)]
pub struct LetorRecords {
    pub records: Vec<LetorRecord>,
    pub lines: usize,
    /// Blank and comment-only lines.
    pub skipped: usize,
}

pub fn parse_letor_records<R: BufRead>(reader: R) -> Result<LetorRecords> {
    let mut out = LetorRecords::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        out.lines += 1;
        match parse_letor_line(&line, i + 1)? {
            Some(rec) => out.records.push(rec),
            None => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Groups records into contexts. Feature vectors are dense with length equal
/// to the largest index in the whole input; context weights are 1.
pub fn records_to_dataset(records: &[LetorRecord]) -> RankingDataset {
    let feature_dim = records
        .iter()
        .filter_map(|r| r.features.last().map(|&(i, _)| i))
        .max()
        .unwrap_or(0);
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut contexts: Vec<ContextBlock> = Vec::new();
    for rec in records {
        let c = *slot.entry(rec.qid.as_str()).or_insert_with(|| {
            contexts.push(ContextBlock { id: rec.qid.clone(), items: Vec::new(), weight: 1.0 });
            contexts.len() - 1
        });
        let mut features = vec![0.0; feature_dim];
        for &(i, v) in &rec.features {
            features[i - 1] = v;
        }
        let items = &mut contexts[c].items;
        items.push(RankItem { id: items.len(), features, score: f64::from(rec.label) });
    }
    RankingDataset { contexts, feature_dim, gain: Gain::Exponential }
}

/// Reads a LETOR file. The result is not validated; training entry points
/// reject datasets that break the ranking invariants (e.g. empty input or
/// single-item queries).
pub fn parse_letor<R: BufRead>(reader: R) -> Result<RankingDataset> {
    Ok(records_to_dataset(&parse_letor_records(reader)?.records))
}

/// Writes every feature explicitly. Relevance values must be non-negative
/// integers.
pub fn write_letor<W: Write>(data: &RankingDataset, mut out: W) -> Result<()> {
    for ctx in &data.contexts {
        for item in &ctx.items {
            if item.score.fract() != 0.0 || item.score < 0.0 || item.score > f64::from(u32::MAX) {
                return Err(Error::InvalidData(format!(
                    "relevance {} of context {} is not a LETOR label",
                    item.score, ctx.id
                )));
            }
            write!(out, "{} qid:{}", item.score as u32, ctx.id)?;
            for (i, v) in item.features.iter().enumerate() {
                write!(out, " {}:{}", i + 1, v)?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// String ids interned to dense indices in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletRecord {
    pub user: String,
    pub item: String,
    pub count: Option<u64>,
}

pub fn parse_triplet_line(line: &str, line_no: usize) -> Result<Option<TripletRecord>> {
    let mut tokens = line.split_whitespace();
    let Some(user) = tokens.next() else {
        return Ok(None);
    };
    let item = tokens
        .next()
        .ok_or_else(|| Error::parse(line_no, "expected <user> <item> [count]"))?;
    let count = match tokens.next() {
        None => None,
        Some(c) => match c.parse::<u64>() {
            Ok(n) if n > 0 => Some(n),
            _ => return Err(Error::parse(line_no, format!("invalid play count {c:?}"))),
        },
    };
    if tokens.next().is_some() {
        return Err(Error::parse(line_no, "too many fields; expected <user> <item> [count]"));
    }
    Ok(Some(TripletRecord { user: user.to_string(), item: item.to_string(), count }))
}

#[derive(Debug, Clone)]
pub struct TripletData {
    pub interactions: InteractionSet,
    pub users: Vocabulary,
    pub items: Vocabulary,
}

/// Reads triplets, interning ids and collapsing repeated pairs.
pub fn parse_triplets<R: BufRead>(reader: R) -> Result<TripletData> {
    let mut users = Vocabulary::default();
    let mut items = Vocabulary::default();
    let mut raw = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if let Some(rec) = parse_triplet_line(&line, i + 1)? {
            raw.push((users.intern(&rec.user), items.intern(&rec.item)));
        }
    }
    let interactions = InteractionSet::new(users.len(), items.len(), dedup_pairs(raw))?;
    Ok(TripletData { interactions, users, items })
}

/// Reads triplets against fixed vocabularies, e.g. a test split mapped onto
/// the training ids. Returns the set and the number of records whose user or
/// item is unknown (those are skipped).
pub fn parse_triplets_with<R: BufRead>(reader: R, users: &Vocabulary, items: &Vocabulary) -> Result<(InteractionSet, usize)> {
    let mut raw = Vec::new();
    let mut unknown = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if let Some(rec) = parse_triplet_line(&line, i + 1)? {
            match (users.get(&rec.user), items.get(&rec.item)) {
                (Some(x), Some(y)) => raw.push((x, y)),
                _ => unknown += 1,
            }
        }
    }
    Ok((InteractionSet::new(users.len(), items.len(), dedup_pairs(raw))?, unknown))
}

fn dedup_pairs(raw: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    let mut seen = std::collections::HashSet::with_capacity(raw.len());
    raw.into_iter().filter(|p| seen.insert(*p)).collect()
}

/// Writes `<user> <item>` lines using index-derived names `u<x>` / `i<y>`.
pub fn write_triplets<W: Write>(data: &InteractionSet, mut out: W) -> Result<()> {
    for &(x, y) in data.pairs() {
        writeln!(out, "u{x}\ti{y}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticRankConfig {
    pub num_contexts: usize,
    pub items_per_context: usize,
    pub dim: usize,
    /// Standard deviation of the Gaussian noise added to the planted score.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticRankConfig {
    fn default() -> Self {
        Self { num_contexts: 50, items_per_context: 20, dim: 10, noise: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticRank {
    pub train: RankingDataset,
    pub validation: RankingDataset,
    pub test: RankingDataset,
    /// Unit-norm weight vector the labels were generated from.
    pub planted: LinearModel,
}

// standard normal tertiles
const TERTILE: f64 = 0.430_727_299_295_457_6;

/// Standard Gaussian features; labels in {0, 1, 2} from the tertiles of
/// `<phi, w*> + noise`, so each label is about equally frequent.
pub fn make_synthetic_rank(config: &SyntheticRankConfig) -> Result<SyntheticRank> {
    if config.num_contexts == 0 || config.items_per_context < 2 || config.dim == 0 {
        return Err(Error::Config(
            "synthetic ranking data needs >= 1 context, >= 2 items per context and dim >= 1".into(),
        ));
    }
    if !(config.noise >= 0.0 && config.noise.is_finite()) {
        return Err(Error::Config(format!("noise must be >= 0, got {}", config.noise)));
    }
    let mut r = rng::derive(config.seed, 0x5EED_0001);
    let mut planted: Vec<f64> = (0..config.dim).map(|_| r.sample(StandardNormal)).collect();
    let norm = planted.iter().map(|w| w * w).sum::<f64>().sqrt();
    planted.iter_mut().for_each(|w| *w /= norm);

    let cut = TERTILE * (1.0 + config.noise * config.noise).sqrt();
    let mut split = |tag: &str| -> Result<RankingDataset> {
        let contexts = (0..config.num_contexts)
            .map(|c| {
                let items = (0..config.items_per_context)
                    .map(|id| {
                        let features: Vec<f64> = (0..config.dim).map(|_| r.sample(StandardNormal)).collect();
                        let mut s: f64 = features.iter().zip(&planted).map(|(a, b)| a * b).sum();
                        if config.noise > 0.0 {
                            s += config.noise * r.sample::<f64, _>(StandardNormal);
                        }
                        let label = if s > cut { 2.0 } else if s > -cut { 1.0 } else { 0.0 };
                        RankItem { id, features, score: label }
                    })
                    .collect();
                ContextBlock { id: format!("{tag}{c}"), items, weight: 1.0 }
            })
            .collect();
        RankingDataset::new(contexts, config.dim)
    };
    let train = split("train")?;
    let validation = split("valid")?;
    let test = split("test")?;
    Ok(SyntheticRank { train, validation, test, planted: LinearModel { omega: planted } })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticLcrConfig {
    pub num_contexts: usize,
    pub num_items: usize,
    pub blocks: usize,
    /// Probability that a same-block pair lands in train; the rest are test.
    pub density: f64,
    pub seed: u64,
}

impl Default for SyntheticLcrConfig {
    fn default() -> Self {
        Self { num_contexts: 30, num_items: 50, blocks: 5, density: 0.6, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticLcr {
    pub train: InteractionSet,
    pub test: InteractionSet,
    pub context_block: Vec<usize>,
    pub item_block: Vec<usize>,
}

/// Attempts made before giving up on a draw that leaves a context without
/// training pairs.
pub const SYNTHETIC_LCR_RETRIES: u64 = 100;

/// Block preference model: contexts and items are dealt into `blocks` groups
/// of near-equal size. Every same-block pair is relevant; each goes to train
/// with probability `density` and to test otherwise. Cross-block pairs never
/// appear.
pub fn make_synthetic_lcr(config: &SyntheticLcrConfig) -> Result<SyntheticLcr> {
    if config.num_contexts == 0 || config.num_items < 2 || config.blocks == 0 {
        return Err(Error::Config("synthetic interaction data needs >= 1 context, >= 2 items, >= 1 block".into()));
    }
    if !(config.density > 0.0 && config.density <= 1.0) {
        return Err(Error::Config(format!("density must be in (0, 1], got {}", config.density)));
    }
    for attempt in 0..SYNTHETIC_LCR_RETRIES {
        let mut r = rng::derive(config.seed, 0x5EED_1000 + attempt);
        let deal = |n: usize, r: &mut rng::Rng| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(r);
            let mut block = vec![0; n];
            for (pos, &e) in perm.iter().enumerate() {
                block[e] = pos % config.blocks;
            }
            block
        };
        let context_block = deal(config.num_contexts, &mut r);
        let item_block = deal(config.num_items, &mut r);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (x, &bx) in context_block.iter().enumerate() {
            for (y, &by) in item_block.iter().enumerate() {
                if bx == by {
                    if config.density >= 1.0 || r.random::<f64>() < config.density {
                        train.push((x, y));
                    } else {
                        test.push((x, y));
                    }
                }
            }
        }
        let train = InteractionSet::new(config.num_contexts, config.num_items, train)?;
        if (0..config.num_contexts).all(|x| !train.pair_indices_of(x).is_empty()) {
            let test = InteractionSet::new(config.num_contexts, config.num_items, test)?;
            return Ok(SyntheticLcr { train, test, context_block, item_block });
        }
    }
    Err(Error::Config(format!(
        "no draw in {SYNTHETIC_LCR_RETRIES} attempts gave every context a training pair; \
         increase density or reduce blocks"
    )))
}
