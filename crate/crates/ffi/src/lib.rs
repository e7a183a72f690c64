//! C ABI over the panel-consensus library.
//!
//! Every function returns a [`PcStatus`]; on failure the message is kept per
//! thread and can be copied out with [`pc_last_error_message`]. Objects cross
//! the boundary as opaque pointers that the caller releases with the matching
//! `*_free` function. Classes and experts are 0-based.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use panel_consensus::data::{
    gen_classwise_experts, gen_equicorr_voters, load_dataset, save_dataset, ClasswiseConfig, Dataset, ExampleRecord,
};
use panel_consensus::harness::{
    ece, run_experiment, write_result, ExperimentConfig, ExperimentResult, OnlineSession, PolicyKind,
};
use panel_consensus::rng;
use panel_consensus::simplex::{AggregationFn, ProbVec};
use panel_consensus::theory::{err_equicorrelated_3, err_random_nq, ConsensusSizeDist};
use panel_consensus::Error;

/// Outcome of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Domain = 3,
    Numerical = 4,
    Sampler = 5,
    Inference = 6,
    Parse = 7,
    Schema = 8,
    Io = 9,
    /// A vote callback reported failure.
    Callback = 10,
    OutOfRange = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcPolicy {
    Bayes = 0,
    Infexp = 1,
    Confusion = 2,
    Random = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcAggregation {
    Consensus = 0,
    /// Positive when any expert votes the positive class.
    AnyPositive = 1,
    /// Positive only when every expert votes the positive class.
    UnanimousPositive = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcPreset {
    ThreeClass = 0,
    LowNoise = 1,
    HighNoise = 2,
}

/// Experiment settings. Fill with [`pc_config_default`] and adjust.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PcConfig {
    pub policy: PcPolicy,
    pub threshold: f64,
    pub seed: u64,
    /// Sliding-window size; 0 disables the window.
    pub window: usize,
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub refit_warmup: usize,
    pub max_depth: usize,
    pub aggregation: PcAggregation,
    /// Positive class for the any/unanimous aggregates.
    pub positive_class: usize,
}

/// Per-run summary. `first50` and `last50` are NaN for runs under 100 examples.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PcSummary {
    pub examples: usize,
    pub error_rate: f64,
    pub mean_queries: f64,
    pub ece: f64,
    pub first50: f64,
    pub last50: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PcRow {
    pub t: usize,
    pub prediction: usize,
    pub truth: usize,
    pub queries: usize,
    pub confidence: f64,
    pub est_error: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PcOutcome {
    pub prediction: usize,
    pub queries: usize,
    pub confidence: f64,
    pub est_error: f64,
}

/// Asks `expert` for its vote, writing the class to `vote`. Returns 0 on
/// success; anything else aborts the example with `PcStatus::Callback`.
pub type PcAskFn = Option<unsafe extern "C" fn(user_data: *mut c_void, expert: usize, vote: *mut usize) -> i32>;

/// Opaque dataset handle.
pub struct PcDataset(Dataset);

/// Opaque experiment result handle.
pub struct PcResult(ExperimentResult);

/// Opaque online session handle.
pub struct PcSession(OnlineSession);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PcStatus {
    match e {
        Error::Domain(_) => PcStatus::Domain,
        Error::Numerical { .. } => PcStatus::Numerical,
        Error::Sampler { .. } => PcStatus::Sampler,
        Error::Inference(_) => PcStatus::Inference,
        Error::Parse { .. } => PcStatus::Parse,
        Error::Schema(_) => PcStatus::Schema,
        Error::Io(_) => PcStatus::Io,
    }
}

struct Fail(PcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

type Ffi<T> = std::result::Result<T, Fail>;

/// Runs `body`, converting errors and panics into a status.
fn guard(body: impl FnOnce() -> Ffi<()>) -> PcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            PcStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(PcStatus::NullArgument, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Ffi<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Ffi<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Ffi<&'a str> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Fail(PcStatus::InvalidUtf8, format!("path is not UTF-8: {e}")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Ffi<()> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn policy_kind(p: PcPolicy) -> PolicyKind {
    match p {
        PcPolicy::Bayes => PolicyKind::Bayes,
        PcPolicy::Infexp => PolicyKind::Infexp,
        PcPolicy::Confusion => PolicyKind::Confusion,
        PcPolicy::Random => PolicyKind::Random,
    }
}

fn experiment_config(c: &PcConfig) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(policy_kind(c.policy), c.threshold, c.seed);
    cfg.window = (c.window > 0).then_some(c.window);
    cfg.chain.chains = c.chains;
    cfg.chain.warmup = c.warmup;
    cfg.chain.draws = c.draws;
    cfg.chain.max_depth = c.max_depth;
    cfg.refit_warmup = c.refit_warmup;
    let positive = c.positive_class;
    cfg.aggregation = match c.aggregation {
        PcAggregation::Consensus => AggregationFn::Consensus,
        PcAggregation::AnyPositive => AggregationFn::AnyPositive { positive },
        PcAggregation::UnanimousPositive => AggregationFn::UnanimousPositive { positive },
    };
    cfg
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the length the full message needs, NUL included.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Desk-scale defaults for `policy` at `threshold`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `PcConfig`.
#[no_mangle]
pub unsafe extern "C" fn pc_config_default(policy: PcPolicy, threshold: f64, seed: u64, out: *mut PcConfig) -> PcStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let cfg = ExperimentConfig::desk(policy_kind(policy), threshold, seed);
        *out = PcConfig {
            policy,
            threshold,
            seed,
            window: 0,
            chains: cfg.chain.chains,
            warmup: cfg.chain.warmup,
            draws: cfg.chain.draws,
            refit_warmup: cfg.refit_warmup,
            max_depth: cfg.chain.max_depth,
            aggregation: PcAggregation::Consensus,
            positive_class: 0,
        };
        Ok(())
    })
}

/// Reads a dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_dataset_load(path: *const c_char, out: *mut *mut PcDataset) -> PcStatus {
    guard(|| {
        let ds = load_dataset(path_arg(path)?)?;
        put(out, PcDataset(ds))
    })
}

/// Generates a class-wise expertise panel of `examples` records.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_dataset_generate_classwise(
    preset: PcPreset,
    examples: usize,
    seed: u64,
    out: *mut *mut PcDataset,
) -> PcStatus {
    guard(|| {
        let cfg = match preset {
            PcPreset::ThreeClass => ClasswiseConfig::three_class_preset(),
            PcPreset::LowNoise => ClasswiseConfig::low_noise_preset(),
            PcPreset::HighNoise => ClasswiseConfig::high_noise_preset(),
        };
        let ds = gen_classwise_experts(&cfg, examples, &mut rng::stream(seed, "gen", 0))?;
        put(out, PcDataset(ds))
    })
}

/// Generates a binary panel of `experts` equicorrelated voters.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_dataset_generate_equicorr(
    experts: usize,
    rho: f64,
    examples: usize,
    classifier_corr: f64,
    seed: u64,
    out: *mut *mut PcDataset,
) -> PcStatus {
    guard(|| {
        let ds = gen_equicorr_voters(experts, rho, examples, classifier_corr, &mut rng::stream(seed, "gen", 0))?;
        put(out, PcDataset(ds))
    })
}

/// Writes a dataset file.
///
/// # Safety
/// `ds` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pc_dataset_save(ds: *const PcDataset, path: *const c_char) -> PcStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        save_dataset(&ds.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Classes, classifiers, experts and record count. Any output may be null.
///
/// # Safety
/// `ds` must come from this library; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_dataset_shape(
    ds: *const PcDataset,
    classes: *mut usize,
    classifiers: *mut usize,
    experts: *mut usize,
    len: *mut usize,
) -> PcStatus {
    guard(|| {
        let ds = &deref(ds, "dataset")?.0;
        for (p, v) in [(classes, ds.classes()), (classifiers, ds.classifiers()), (experts, ds.experts()), (len, ds.len())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn pc_dataset_free(ds: *mut PcDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Runs one policy online over the dataset.
///
/// # Safety
/// `ds` must come from this library; `cfg` must be readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_run_experiment(
    ds: *const PcDataset,
    cfg: *const PcConfig,
    out: *mut *mut PcResult,
) -> PcStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        let cfg = experiment_config(deref(cfg, "config")?);
        let res = run_experiment(&ds.0, &cfg)?;
        put(out, PcResult(res))
    })
}

/// # Safety
/// `res` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_result_summary(res: *const PcResult, out: *mut PcSummary) -> PcStatus {
    guard(|| {
        let s = &deref(res, "result")?.0.summary;
        *deref_mut(out, "out")? = PcSummary {
            examples: s.examples,
            error_rate: s.error_rate,
            mean_queries: s.mean_queries,
            ece: s.ece,
            first50: s.first50.unwrap_or(f64::NAN),
            last50: s.last50.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Number of per-example rows.
///
/// # Safety
/// `res` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_result_len(res: *const PcResult, out: *mut usize) -> PcStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(res, "result")?.0.rows.len();
        Ok(())
    })
}

/// Row `index` (0-based; `t` inside the row is 1-based).
///
/// # Safety
/// `res` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_result_row(res: *const PcResult, index: usize, out: *mut PcRow) -> PcStatus {
    guard(|| {
        let rows = &deref(res, "result")?.0.rows;
        let r = rows
            .get(index)
            .ok_or_else(|| Fail(PcStatus::OutOfRange, format!("row {index} of {}", rows.len())))?;
        *deref_mut(out, "out")? = PcRow {
            t: r.t,
            prediction: r.prediction,
            truth: r.truth,
            queries: r.queries,
            confidence: r.confidence,
            est_error: r.est_error,
        };
        Ok(())
    })
}

/// Writes the result in the line-delimited results format.
///
/// # Safety
/// `res` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pc_result_save(res: *const PcResult, path: *const c_char) -> PcStatus {
    guard(|| {
        let res = deref(res, "result")?;
        let file = std::fs::File::create(path_arg(path)?).map_err(Error::from)?;
        write_result(&res.0, std::io::BufWriter::new(file))?;
        Ok(())
    })
}

/// # Safety
/// `res` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn pc_result_free(res: *mut PcResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Starts an online session for panels of `experts` experts and `classifiers`
/// classifiers over `classes` classes. Fits the prior posterior up front.
///
/// # Safety
/// `cfg` must be readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_session_new(
    classes: usize,
    classifiers: usize,
    experts: usize,
    cfg: *const PcConfig,
    out: *mut *mut PcSession,
) -> PcStatus {
    guard(|| {
        let cfg = experiment_config(deref(cfg, "config")?);
        let session = OnlineSession::new(classes, classifiers, experts, cfg)?;
        put(out, PcSession(session))
    })
}

/// Processes one example. `probs` holds `classifiers × classes` probabilities,
/// one classifier after another. `ask` is called for each queried expert.
///
/// # Safety
/// `session` must come from this library; `probs` must be readable for
/// `probs_len` doubles; `out` must be writable; `ask` must be safe to call
/// with `user_data`.
#[no_mangle]
pub unsafe extern "C" fn pc_session_process(
    session: *mut PcSession,
    probs: *const f64,
    probs_len: usize,
    ask: PcAskFn,
    user_data: *mut c_void,
    out: *mut PcOutcome,
) -> PcStatus {
    guard(|| {
        let s = &mut deref_mut(session, "session")?.0;
        let ask = ask.ok_or_else(|| null("ask"))?;
        if probs.is_null() {
            return Err(null("probs"));
        }
        let out = deref_mut(out, "out")?;
        let k = s.history().classes();
        let m = s.history().classifiers();
        if probs_len != k * m {
            return Err(Fail(PcStatus::Domain, format!("expected {} probabilities, got {probs_len}", k * m)));
        }
        let raw = std::slice::from_raw_parts(probs, probs_len);
        let model_probs = raw
            .chunks(k)
            .map(|c| ProbVec::floored(c, 1e-6).map(|(p, _)| p))
            .collect::<Result<Vec<_>, _>>()?;
        let logits = ExampleRecord { model_probs, expert_votes: Vec::new(), segment: None }.model_logits();
        let mut callback_failed = None;
        let result = s.process(logits, &mut |expert| {
            let mut vote = usize::MAX;
            let code = ask(user_data, expert, &mut vote);
            if code != 0 {
                callback_failed = Some(code);
                return Err(Error::Domain(format!("vote callback for expert {expert} returned {code}")));
            }
            Ok(vote)
        });
        let outcome = match (result, callback_failed) {
            (Err(e), Some(_)) => return Err(Fail(PcStatus::Callback, e.to_string())),
            (r, _) => r?,
        };
        *out = PcOutcome {
            prediction: outcome.prediction,
            queries: outcome.queries,
            confidence: outcome.confidence,
            est_error: outcome.est_error,
        };
        Ok(())
    })
}

/// # Safety
/// `session` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn pc_session_free(session: *mut PcSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Error of the majority of `n_q` random experts (odd) when every panel of
/// `experts` has exactly `n_c` consensus votes and one shared dissent.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_err_random_nq(experts: usize, n_c: usize, n_q: usize, out: *mut f64) -> PcStatus {
    guard(|| {
        let d = ConsensusSizeDist::point_mass(experts, n_c)?;
        *deref_mut(out, "out")? = err_random_nq(&d, n_q)?;
        Ok(())
    })
}

/// Random one- or two-expert error for three equicorrelated voters.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_err_equicorrelated_3(rho: f64, out: *mut f64) -> PcStatus {
    guard(|| {
        *deref_mut(out, "out")? = err_equicorrelated_3(rho)?;
        Ok(())
    })
}

/// Expected calibration error; `correct[i]` is nonzero when prediction i was right.
///
/// # Safety
/// `confidences` and `correct` must be readable for `n` elements (or null when `n` is 0).
#[no_mangle]
pub unsafe extern "C" fn pc_ece(
    confidences: *const f64,
    correct: *const u8,
    n: usize,
    bins: usize,
    out: *mut f64,
) -> PcStatus {
    guard(|| {
        let (c, k) = if n == 0 {
            (&[][..], Vec::new())
        } else {
            if confidences.is_null() || correct.is_null() {
                return Err(null("input array"));
            }
            let k = std::slice::from_raw_parts(correct, n).iter().map(|&b| b != 0).collect();
            (std::slice::from_raw_parts(confidences, n), k)
        };
        *deref_mut(out, "out")? = ece(c, &k, bins)?;
        Ok(())
    })
}
