//! C ABI over the batch selectors.
//!
//! Callers build an opaque [`AdaselPool`] from a score CSV (with its
//! `.meta.json` sidecar) or from raw arrays, optionally attach embeddings and
//! discriminator outputs, and run the submodular selector or one of the
//! baseline samplers. Every function returns an [`AdaselStatus`]; the last
//! failure message is retrievable per thread via [`adasel_last_error`].
//!
//! The generated header lives at `include/adasel.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use adasel::baselines;
use adasel::data::load_external_scores;
use adasel::perturb::PerturbationBundle;
use adasel::prob::ProbDist;
use adasel::submodular::{greedy_select, CandidatePool, MixWeights, SelectionReport};

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaselStatus {
    AdaselOk = 0,
    AdaselNullPointer = 1,
    AdaselInvalidArgument = 2,
    AdaselIoError = 3,
    AdaselNumericError = 4,
    AdaselPanic = 5,
}

/// Baseline sampler choices for `adasel_select`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaselSampler {
    AdaselSamplerSubmodular = 0,
    AdaselSamplerRandom = 1,
    AdaselSamplerEntropy = 2,
    AdaselSamplerMargin = 3,
    AdaselSamplerKCenter = 4,
    AdaselSamplerAada = 5,
    AdaselSamplerBadge = 6,
}

/// Opaque candidate pool handle.
pub struct AdaselPool {
    ids: Vec<usize>,
    originals: Vec<ProbDist>,
    perturbed: Vec<Vec<ProbDist>>,
    embeddings: Option<Vec<Vec<f64>>>,
    discriminator: Option<Vec<f64>>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized: String = message.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &adasel::Error) -> AdaselStatus {
    set_error(&err.to_string());
    match err {
        adasel::Error::Io { .. } | adasel::Error::Csv(_) => AdaselStatus::AdaselIoError,
        adasel::Error::NonFinite { .. } => AdaselStatus::AdaselNumericError,
        _ => AdaselStatus::AdaselInvalidArgument,
    }
}

fn guard(body: impl FnOnce() -> AdaselStatus) -> AdaselStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            AdaselStatus::AdaselPanic
        }
    }
}

/// Copies the most recent error message for this thread into `buf`
/// (truncated, always NUL-terminated). Returns the full message length in
/// bytes, excluding the terminator.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (to query the
/// length).
#[no_mangle]
pub unsafe extern "C" fn adasel_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn adasel_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a pool from a score CSV with its `.meta.json` sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adasel_pool_from_scores_csv(
    path: *const c_char,
    out: *mut *mut AdaselPool,
) -> AdaselStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            set_error("null pointer argument");
            return AdaselStatus::AdaselNullPointer;
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return AdaselStatus::AdaselInvalidArgument;
            }
        };
        match load_external_scores(Path::new(path)) {
            Ok(scores) => {
                let pool = AdaselPool {
                    ids: scores.ids(),
                    originals: scores.originals(),
                    perturbed: scores.rows.iter().map(|r| r.perturbed.clone()).collect(),
                    embeddings: scores.embeddings(),
                    discriminator: scores.discriminator_outputs(),
                };
                *out = Box::into_raw(Box::new(pool));
                AdaselStatus::AdaselOk
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Builds a pool from row-major arrays: `originals` is `n x classes`,
/// `perturbed` is `n x n_restarts x classes`. Ids are `0..n`.
///
/// # Safety
/// The arrays must hold the stated number of elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn adasel_pool_from_arrays(
    n: usize,
    classes: usize,
    n_restarts: usize,
    originals: *const f64,
    perturbed: *const f64,
    out: *mut *mut AdaselPool,
) -> AdaselStatus {
    guard(|| {
        if originals.is_null() || perturbed.is_null() || out.is_null() {
            set_error("null pointer argument");
            return AdaselStatus::AdaselNullPointer;
        }
        if n == 0 || classes < 2 || n_restarts == 0 {
            set_error("need n >= 1, classes >= 2, n_restarts >= 1");
            return AdaselStatus::AdaselInvalidArgument;
        }
        let orig = std::slice::from_raw_parts(originals, n * classes);
        let pert = std::slice::from_raw_parts(perturbed, n * n_restarts * classes);
        let mut originals_v = Vec::with_capacity(n);
        let mut perturbed_v = Vec::with_capacity(n);
        for i in 0..n {
            let block = &orig[i * classes..(i + 1) * classes];
            match ProbDist::renormalized(block.to_vec(), 1e-6) {
                Ok(p) => originals_v.push(p),
                Err(e) => {
                    set_error(&format!("row {i} original: {e}"));
                    return AdaselStatus::AdaselInvalidArgument;
                }
            }
            let mut restarts = Vec::with_capacity(n_restarts);
            for q in 0..n_restarts {
                let at = (i * n_restarts + q) * classes;
                match ProbDist::renormalized(pert[at..at + classes].to_vec(), 1e-6) {
                    Ok(p) => restarts.push(p),
                    Err(e) => {
                        set_error(&format!("row {i} perturbation {q}: {e}"));
                        return AdaselStatus::AdaselInvalidArgument;
                    }
                }
            }
            perturbed_v.push(restarts);
        }
        *out = Box::into_raw(Box::new(AdaselPool {
            ids: (0..n).collect(),
            originals: originals_v,
            perturbed: perturbed_v,
            embeddings: None,
            discriminator: None,
        }));
        AdaselStatus::AdaselOk
    })
}

/// Attaches `n x dim` row-major embeddings (needed by the k-center and badge
/// samplers).
///
/// # Safety
/// `pool` must come from a constructor; `data` must hold `len(pool) * dim`
/// values.
#[no_mangle]
pub unsafe extern "C" fn adasel_pool_set_embeddings(
    pool: *mut AdaselPool,
    dim: usize,
    data: *const f64,
) -> AdaselStatus {
    guard(|| {
        if pool.is_null() || data.is_null() {
            set_error("null pointer argument");
            return AdaselStatus::AdaselNullPointer;
        }
        if dim == 0 {
            set_error("embedding dim must be >= 1");
            return AdaselStatus::AdaselInvalidArgument;
        }
        let pool = &mut *pool;
        let n = pool.ids.len();
        let values = std::slice::from_raw_parts(data, n * dim);
        if values.iter().any(|v| !v.is_finite()) {
            set_error("embeddings hold non-finite values");
            return AdaselStatus::AdaselInvalidArgument;
        }
        pool.embeddings = Some(values.chunks(dim).map(<[f64]>::to_vec).collect());
        AdaselStatus::AdaselOk
    })
}

/// Attaches per-candidate discriminator outputs in [0, 1] (needed by the
/// aada sampler).
///
/// # Safety
/// `pool` must come from a constructor; `data` must hold `len(pool)` values.
#[no_mangle]
pub unsafe extern "C" fn adasel_pool_set_discriminator(
    pool: *mut AdaselPool,
    data: *const f64,
) -> AdaselStatus {
    guard(|| {
        if pool.is_null() || data.is_null() {
            set_error("null pointer argument");
            return AdaselStatus::AdaselNullPointer;
        }
        let pool = &mut *pool;
        let values = std::slice::from_raw_parts(data, pool.ids.len());
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            set_error("discriminator outputs must lie in [0, 1]");
            return AdaselStatus::AdaselInvalidArgument;
        }
        pool.discriminator = Some(values.to_vec());
        AdaselStatus::AdaselOk
    })
}

/// Number of candidates in the pool (0 for a null handle).
///
/// # Safety
/// `pool` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn adasel_pool_len(pool: *const AdaselPool) -> usize {
    if pool.is_null() {
        0
    } else {
        (*pool).ids.len()
    }
}

/// Frees a pool handle (null is a no-op).
///
/// # Safety
/// `pool` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn adasel_pool_free(pool: *mut AdaselPool) {
    if !pool.is_null() {
        drop(Box::from_raw(pool));
    }
}

fn write_selection(
    report: &SelectionReport,
    budget: usize,
    out_ids: *mut u64,
    out_scores: *mut f64,
) -> AdaselStatus {
    if report.ids.len() != budget {
        set_error(&format!(
            "selection produced {} ids for budget {budget}",
            report.ids.len()
        ));
        return AdaselStatus::AdaselInvalidArgument;
    }
    unsafe {
        for (i, step) in report.steps.iter().enumerate() {
            *out_ids.add(i) = step.id as u64;
            if !out_scores.is_null() {
                *out_scores.add(i) = step.score.unwrap_or(f64::NAN);
            }
        }
    }
    AdaselStatus::AdaselOk
}

fn bundles_of(pool: &AdaselPool) -> Vec<PerturbationBundle> {
    pool.originals
        .iter()
        .zip(&pool.perturbed)
        .map(|(original, perturbed)| PerturbationBundle {
            original: original.clone(),
            perturbed: perturbed.clone(),
        })
        .collect()
}

/// Runs the submodular selector: `budget` picks by greedy maximization of
/// the convex combination `alpha * uncertainty + beta * diversity +
/// (1 - alpha - beta) * representativeness`. Selected ids land in `out_ids`
/// (length `budget`), per-step gains in `out_gains` when non-null.
///
/// # Safety
/// `pool` must be a live handle; `out_ids` must hold `budget` slots and
/// `out_gains` must be null or hold `budget` slots.
#[no_mangle]
pub unsafe extern "C" fn adasel_select_submodular(
    pool: *const AdaselPool,
    budget: usize,
    alpha: f64,
    beta: f64,
    out_ids: *mut u64,
    out_gains: *mut f64,
) -> AdaselStatus {
    guard(|| {
        if pool.is_null() || out_ids.is_null() {
            set_error("null pointer argument");
            return AdaselStatus::AdaselNullPointer;
        }
        let pool = &*pool;
        if budget == 0 || budget > pool.ids.len() {
            set_error(&format!(
                "budget {budget} out of range for {} candidates",
                pool.ids.len()
            ));
            return AdaselStatus::AdaselInvalidArgument;
        }
        let weights = match MixWeights::new(alpha, beta) {
            Ok(w) => w,
            Err(e) => return status_of(&e),
        };
        let candidate_pool = match CandidatePool::from_bundles(pool.ids.clone(), &bundles_of(pool))
        {
            Ok(p) => p,
            Err(e) => return status_of(&e),
        };
        match greedy_select(&candidate_pool, budget, &weights) {
            Ok(report) => write_selection(&report, budget, out_ids, out_gains),
            Err(e) => status_of(&e),
        }
    })
}

/// Runs one of the samplers; `seed` drives the stochastic ones. The
/// submodular choice uses the stock mixing weights (0.5, 0.3).
///
/// # Safety
/// `pool` must be a live handle; `out_ids` must hold `budget` slots.
#[no_mangle]
pub unsafe extern "C" fn adasel_select(
    pool: *const AdaselPool,
    sampler: AdaselSampler,
    budget: usize,
    seed: u64,
    out_ids: *mut u64,
) -> AdaselStatus {
    guard(|| {
        if pool.is_null() || out_ids.is_null() {
            set_error("null pointer argument");
            return AdaselStatus::AdaselNullPointer;
        }
        let pool = &*pool;
        if budget == 0 || budget > pool.ids.len() {
            set_error(&format!(
                "budget {budget} out of range for {} candidates",
                pool.ids.len()
            ));
            return AdaselStatus::AdaselInvalidArgument;
        }
        let embeddings = |what: &str| -> Result<&Vec<Vec<f64>>, AdaselStatus> {
            pool.embeddings.as_ref().ok_or_else(|| {
                set_error(&format!(
                    "{what} needs embeddings (adasel_pool_set_embeddings)"
                ));
                AdaselStatus::AdaselInvalidArgument
            })
        };
        let result = match sampler {
            AdaselSampler::AdaselSamplerSubmodular => {
                return adasel_select_submodular(
                    pool,
                    budget,
                    0.5,
                    0.3,
                    out_ids,
                    std::ptr::null_mut(),
                );
            }
            AdaselSampler::AdaselSamplerRandom => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                baselines::random_select(&pool.ids, budget, &mut rng)
            }
            AdaselSampler::AdaselSamplerEntropy => {
                baselines::entropy_select(&pool.ids, &pool.originals, budget)
            }
            AdaselSampler::AdaselSamplerMargin => {
                baselines::margin_select(&pool.ids, &pool.originals, budget)
            }
            AdaselSampler::AdaselSamplerKCenter => match embeddings("kcenter") {
                Ok(e) => baselines::kcenter_select(&pool.ids, e, &[], budget),
                Err(status) => return status,
            },
            AdaselSampler::AdaselSamplerAada => match pool.discriminator.as_ref() {
                Some(disc) => baselines::aada_select(&pool.ids, &pool.originals, disc, budget),
                None => {
                    set_error("aada needs discriminator outputs (adasel_pool_set_discriminator)");
                    return AdaselStatus::AdaselInvalidArgument;
                }
            },
            AdaselSampler::AdaselSamplerBadge => match embeddings("badge") {
                Ok(e) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    baselines::badge_select(&pool.ids, &pool.originals, e, budget, &mut rng)
                }
                Err(status) => return status,
            },
        };
        match result {
            Ok(report) => write_selection(&report, budget, out_ids, std::ptr::null_mut()),
            Err(e) => status_of(&e),
        }
    })
}
