//! C ABI over the `robirank` crate.
//!
//! All objects are opaque handles created by `rbk_*` constructors and
//! released with the matching `rbk_*_free`. Fallible calls return an
//! [`RbkStatus`]; on failure [`rbk_last_error_message`] describes the error.
//! Handles may be shared across threads for reading but not freed
//! concurrently.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use robirank::checkpoint::Checkpoint;
use robirank::lcr::{self, InteractionSet, LatentModel, SgdConfig};
use robirank::ltr::{self, LinearModel, RankingDataset, TrainConfig};
use robirank::parallel::{self, ParallelConfig};
use robirank::{data, eval, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbkStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    InvalidData = 5,
    Shape = 6,
    Domain = 7,
    Divergence = 8,
    Checkpoint = 9,
    Panic = 10,
}

/// Feature-track dataset (queries with graded items).
pub struct RbkRankingDataset(RankingDataset);
/// Linear scoring function.
pub struct RbkLinearModel(LinearModel);
/// Observed (context, item) pairs.
pub struct RbkInteractions(InteractionSet);
/// Context and item embeddings.
pub struct RbkLatentModel(LatentModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rbk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn status_of(e: &Error) -> RbkStatus {
    match e {
        Error::Domain(_) => RbkStatus::Domain,
        Error::Shape(_) => RbkStatus::Shape,
        Error::InvalidData(_) => RbkStatus::InvalidData,
        Error::Config(_) => RbkStatus::InvalidArgument,
        Error::Parse { .. } => RbkStatus::Parse,
        Error::Divergence(_) => RbkStatus::Divergence,
        Error::Checkpoint(_) => RbkStatus::Checkpoint,
        Error::Io(_) => RbkStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RbkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RbkStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is NULL"));
            RbkStatus::NullArgument
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            RbkStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            RbkStatus::Panic
        }
    }
}

unsafe fn reference<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_value<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = value;
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Reads a LETOR file (`<label> qid:<id> <i>:<v> ...`).
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbk_ranking_dataset_load_letor(path: *const c_char, out: *mut *mut RbkRankingDataset) -> RbkStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let file = std::fs::File::open(&path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        let data = data::parse_letor(std::io::BufReader::new(file))?;
        data.validate()?;
        put(out, RbkRankingDataset(data))
    })
}

/// # Safety
/// `data` must be NULL or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn rbk_ranking_dataset_free(data: *mut RbkRankingDataset) {
    free(data)
}

/// Number of queries; 0 for NULL.
///
/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rbk_ranking_dataset_num_contexts(data: *const RbkRankingDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.contexts.len())
}

/// Feature dimension; 0 for NULL.
///
/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rbk_ranking_dataset_feature_dim(data: *const RbkRankingDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.feature_dim)
}

/// Trains a linear ranker for every lambda in `lambdas` and keeps the one
/// with the best validation NDCG@10. `n_lambdas == 0` uses the default grid.
/// Feature dimensions of the two sets are aligned by zero padding.
///
/// # Safety
/// Handles must be live; `lambdas` must hold `n_lambdas` values.
#[no_mangle]
pub unsafe extern "C" fn rbk_linear_train(
    train: *const RbkRankingDataset,
    valid: *const RbkRankingDataset,
    lambdas: *const f64,
    n_lambdas: usize,
    seed: u64,
    out: *mut *mut RbkLinearModel,
) -> RbkStatus {
    guard(|| {
        let mut train = reference(train, "train")?.0.clone();
        let mut valid = reference(valid, "valid")?.0.clone();
        let dim = train.feature_dim.max(valid.feature_dim);
        train.pad_features(dim);
        valid.pad_features(dim);
        let mut config = TrainConfig { seed, ..TrainConfig::default() };
        if n_lambdas > 0 {
            config.lambda_grid = slice_arg(lambdas, n_lambdas, "lambdas")?.to_vec();
        }
        let trained = ltr::train(&train, &valid, &config)?;
        put(out, RbkLinearModel(trained.model))
    })
}

/// Wraps explicit weights in a model handle.
///
/// # Safety
/// `weights` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn rbk_linear_new(weights: *const f64, dim: usize, out: *mut *mut RbkLinearModel) -> RbkStatus {
    guard(|| {
        let omega = slice_arg(weights, dim, "weights")?.to_vec();
        put(out, RbkLinearModel(LinearModel { omega }))
    })
}

/// # Safety
/// `model` must be NULL or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn rbk_linear_free(model: *mut RbkLinearModel) {
    free(model)
}

/// Number of weights; 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rbk_linear_dim(model: *const RbkLinearModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim())
}

/// Copies the weights into `out`, which must hold `len >= dim` values.
///
/// # Safety
/// `out` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn rbk_linear_weights(model: *const RbkLinearModel, out: *mut f64, len: usize) -> RbkStatus {
    guard(|| {
        let m = &reference(model, "model")?.0;
        if len < m.dim() {
            return Err(Failure::Invalid(format!("buffer holds {len} values, model has {}", m.dim())));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        std::slice::from_raw_parts_mut(out, m.dim()).copy_from_slice(&m.omega);
        Ok(())
    })
}

/// Score of one feature vector.
///
/// # Safety
/// `features` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn rbk_linear_score(
    model: *const RbkLinearModel,
    features: *const f64,
    dim: usize,
    out: *mut f64,
) -> RbkStatus {
    guard(|| {
        let m = &reference(model, "model")?.0;
        let s = ltr::score(m, slice_arg(features, dim, "features")?)?;
        put_value(out, s)
    })
}

/// Mean NDCG@k over the dataset's queries.
///
/// # Safety
/// Handles must be live.
#[no_mangle]
pub unsafe extern "C" fn rbk_linear_mean_ndcg(
    model: *const RbkLinearModel,
    data: *const RbkRankingDataset,
    k: usize,
    out: *mut f64,
) -> RbkStatus {
    guard(|| {
        let m = &reference(model, "model")?.0;
        let mut d = reference(data, "data")?.0.clone();
        if d.feature_dim > m.dim() {
            return Err(Error::Shape(format!("model has {} features, data has {}", m.dim(), d.feature_dim)).into());
        }
        d.pad_features(m.dim());
        let r = eval::mean_ndcg_curve(m, &d, &[k])?;
        put_value(out, r[0].mean)
    })
}

/// # Safety
/// `path` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rbk_linear_save(model: *const RbkLinearModel, path: *const c_char) -> RbkStatus {
    guard(|| {
        let m = reference(model, "model")?.0.clone();
        Checkpoint::Linear(m).save(&path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbk_linear_load(path: *const c_char, out: *mut *mut RbkLinearModel) -> RbkStatus {
    guard(|| {
        let m = Checkpoint::load(&path_arg(path, "path")?)?.into_linear()?;
        put(out, RbkLinearModel(m))
    })
}

/// Builds an interaction set from parallel arrays of context and item
/// indices. Repeated pairs are an error.
///
/// # Safety
/// `contexts` and `items` must each hold `n_pairs` values.
#[no_mangle]
pub unsafe extern "C" fn rbk_interactions_new(
    num_contexts: usize,
    num_items: usize,
    contexts: *const usize,
    items: *const usize,
    n_pairs: usize,
    out: *mut *mut RbkInteractions,
) -> RbkStatus {
    guard(|| {
        let xs = slice_arg(contexts, n_pairs, "contexts")?;
        let ys = slice_arg(items, n_pairs, "items")?;
        let set = InteractionSet::new(num_contexts, num_items, xs.iter().copied().zip(ys.iter().copied()).collect())?;
        put(out, RbkInteractions(set))
    })
}

/// # Safety
/// `data` must be NULL or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn rbk_interactions_free(data: *mut RbkInteractions) {
    free(data)
}

/// Number of pairs; 0 for NULL.
///
/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rbk_interactions_len(data: *const RbkInteractions) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

/// Trains embeddings of size `dim` for `rounds` outer rounds. `workers == 1`
/// runs the serial trainer, larger values the stratified parallel one.
/// `eta <= 0` tunes the step over the default grid (serial only).
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn rbk_latent_train(
    data: *const RbkInteractions,
    dim: usize,
    eta: f64,
    rounds: usize,
    workers: usize,
    seed: u64,
    out: *mut *mut RbkLatentModel,
) -> RbkStatus {
    guard(|| {
        let d = &reference(data, "data")?.0;
        let model = if workers <= 1 {
            let cfg = SgdConfig { dim, eta, outer_rounds: rounds, seed, ..SgdConfig::default() };
            if eta > 0.0 {
                lcr::serial_train(d, &cfg)?.model
            } else {
                lcr::tune_eta(d, &cfg, &lcr::DEFAULT_ETA_GRID)?.1.model
            }
        } else {
            if eta <= 0.0 {
                return Err(Failure::Invalid("parallel training needs an explicit eta".into()));
            }
            let cfg = ParallelConfig { workers, dim, eta, outer_rounds: rounds, seed, ..ParallelConfig::default() };
            parallel::parallel_train(d, &cfg)?.outcome.model
        };
        put(out, RbkLatentModel(model))
    })
}

/// # Safety
/// `model` must be NULL or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn rbk_latent_free(model: *mut RbkLatentModel) {
    free(model)
}

/// Inner product of the context and item embeddings.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn rbk_latent_score(model: *const RbkLatentModel, context: usize, item: usize, out: *mut f64) -> RbkStatus {
    guard(|| {
        let s = lcr::latent_score(&reference(model, "model")?.0, context, item)?;
        put_value(out, s)
    })
}

/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn rbk_latent_objective(
    model: *const RbkLatentModel,
    data: *const RbkInteractions,
    mu: f64,
    out: *mut f64,
) -> RbkStatus {
    guard(|| {
        let v = lcr::exact_objective(&reference(model, "model")?.0, &reference(data, "data")?.0, mu)?;
        put_value(out, v)
    })
}

/// Mean precision@k on `test`, excluding each context's `train` items.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn rbk_latent_precision_at_k(
    model: *const RbkLatentModel,
    train: *const RbkInteractions,
    test: *const RbkInteractions,
    k: usize,
    out: *mut f64,
) -> RbkStatus {
    guard(|| {
        let r = eval::precision_at_k(
            &reference(model, "model")?.0,
            &reference(train, "train")?.0,
            &reference(test, "test")?.0,
            k,
        )?;
        put_value(out, r.mean)
    })
}

/// # Safety
/// `path` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rbk_latent_save(model: *const RbkLatentModel, path: *const c_char) -> RbkStatus {
    guard(|| {
        let m = reference(model, "model")?.0.clone();
        Checkpoint::Latent(m).save(&path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbk_latent_load(path: *const c_char, out: *mut *mut RbkLatentModel) -> RbkStatus {
    guard(|| {
        let m = Checkpoint::load(&path_arg(path, "path")?)?.into_latent()?;
        put(out, RbkLatentModel(m))
    })
}
