//! C ABI for the grownet library.
//!
//! Conventions:
//! - Handles (`GrownetModel`, `GrownetDataset`) are opaque pointers created
//!   and destroyed by this library; never free them with `free()`.
//! - Every fallible call returns a [`GrownetStatus`]; on failure
//!   [`grownet_last_error_message`] describes the error (thread-local,
//!   valid until the next failing call on the same thread).
//! - Strings returned through `char **` are owned by the caller and must be
//!   released with [`grownet_string_free`].
//! - All functions are panic-safe: internal panics surface as
//!   `GROWNET_STATUS_INTERNAL`, never as unwinding across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use grownet::data::{load_idx, Dataset};
use grownet::dot::export_dot;
use grownet::graph::{InputSpec, LayerGraph};
use grownet::mcts::{Policy, ScoreMode, SearchBudget};
use grownet::model_io::{load_model, save_model};
use grownet::training::{
    evaluate, make_simset, stratified_split, train, LrMode, Orchestrator, TrainConfig, TrainHooks,
};
use grownet::Error;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrownetStatus {
    Ok = 0,
    InvalidArgument = 1,
    Structure = 2,
    Numeric = 3,
    NotFound = 4,
    Format = 5,
    Io = 6,
    Terminal = 7,
    Dataset = 8,
    NullPointer = 9,
    Utf8 = 10,
    Internal = 11,
}

/// Decision policy for structural changes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrownetPolicy {
    Mcts = 0,
    Greedy = 1,
    Random = 2,
}

/// Simulation orchestrator mode.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrownetOrchestrator {
    Constant = 0,
    ProgressCheck = 1,
    Overfit = 2,
}

/// Candidate scoring mode used inside the search.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrownetScoreMode {
    Accuracy = 0,
    Loss = 1,
}

/// Learning-rate schedule.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrownetLrMode {
    Progressive = 0,
    Constant = 1,
}

/// Training options; obtain defaults from [`grownet_train_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GrownetTrainOptions {
    pub generations: u32,
    pub epochs_per_generation: u32,
    pub lr_max: f64,
    pub lr_mode: GrownetLrMode,
    pub orchestrator: GrownetOrchestrator,
    pub score_mode: GrownetScoreMode,
    pub policy: GrownetPolicy,
    /// MCTS wall-clock budget per generation, in seconds.
    pub time_limit_secs: f64,
    /// When nonzero, run exactly this many MCTS iterations instead of the
    /// wall clock (reproducible mode).
    pub mcts_iterations: u64,
    pub rollout_depth: u32,
    pub exploration: f64,
    pub sim_epochs: u32,
    /// Simulation-set size per class, drawn from the training set.
    pub sim_per_class: u32,
    pub batch_size: u32,
    pub seed: u64,
    pub overfit_gap: f64,
}

/// Opaque model handle.
pub struct GrownetModel {
    graph: LayerGraph,
}

/// Opaque dataset handle.
pub struct GrownetDataset {
    data: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let cleaned: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(cleaned).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> GrownetStatus {
    match err {
        Error::InvalidArgument(_) => GrownetStatus::InvalidArgument,
        Error::Structure(_) | Error::StaleAction(_) | Error::ForbiddenRemoval(_) => {
            GrownetStatus::Structure
        }
        Error::Numeric(_) | Error::Deadlock(_) => GrownetStatus::Numeric,
        Error::NotFound(_) => GrownetStatus::NotFound,
        Error::Format { .. } | Error::Load(_) => GrownetStatus::Format,
        Error::Io(_) => GrownetStatus::Io,
        Error::Terminal(_) => GrownetStatus::Terminal,
        Error::InvalidDataset(_) => GrownetStatus::Dataset,
        Error::Generation { source, .. } => status_of(source),
    }
}

fn fail(err: Error) -> GrownetStatus {
    set_error(&err.to_string());
    status_of(&err)
}

/// Runs an FFI body with panic containment.
fn guarded<F: FnOnce() -> GrownetStatus>(body: F) -> GrownetStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            GrownetStatus::Internal
        }
    }
}

unsafe fn cstr_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, GrownetStatus> {
    if ptr.is_null() {
        set_error(&format!("{what} is a null pointer"));
        return Err(GrownetStatus::NullPointer);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(s),
        Err(_) => {
            set_error(&format!("{what} is not valid UTF-8"));
            Err(GrownetStatus::Utf8)
        }
    }
}

/// Message of the most recent error on this thread. Never null; empty when
/// no error has occurred. Valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn grownet_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn grownet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be a pointer previously returned through a `char **` out
/// parameter of this library, not yet freed; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn grownet_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates the base model with a convolutional input layer.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn grownet_model_new_conv(
    channels: u32,
    height: u32,
    width: u32,
    def_neu: u32,
    conv_channels: u32,
    classes: u32,
    seed: u64,
    out: *mut *mut GrownetModel,
) -> GrownetStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out is a null pointer");
            return GrownetStatus::NullPointer;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match LayerGraph::new_base_model_with_channels(
            InputSpec::Conv {
                channels: channels as usize,
                height: height as usize,
                width: width as usize,
            },
            def_neu as usize,
            conv_channels as usize,
            classes as usize,
            &mut rng,
        ) {
            Ok(graph) => {
                *out = Box::into_raw(Box::new(GrownetModel { graph }));
                GrownetStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Creates the base model with a dense input layer.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn grownet_model_new_dense(
    features: u32,
    def_neu: u32,
    classes: u32,
    seed: u64,
    out: *mut *mut GrownetModel,
) -> GrownetStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out is a null pointer");
            return GrownetStatus::NullPointer;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match LayerGraph::new_base_model(
            InputSpec::Dense {
                features: features as usize,
            },
            def_neu as usize,
            classes as usize,
            &mut rng,
        ) {
            Ok(graph) => {
                *out = Box::into_raw(Box::new(GrownetModel { graph }));
                GrownetStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a model handle; null is ignored.
///
/// # Safety
/// `model` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn grownet_model_free(model: *mut GrownetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of layers in the model; 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle from this library (or null).
#[no_mangle]
pub unsafe extern "C" fn grownet_model_layer_count(model: *const GrownetModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    (*model).graph.len() as u32
}

/// Saves a model to a file.
///
/// # Safety
/// `model` must be a live handle; `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn grownet_model_save(
    model: *const GrownetModel,
    path: *const c_char,
) -> GrownetStatus {
    guarded(|| {
        if model.is_null() {
            set_error("model is a null pointer");
            return GrownetStatus::NullPointer;
        }
        let path = match cstr_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let bytes = save_model(&(*model).graph);
        match std::fs::write(Path::new(path), bytes) {
            Ok(()) => GrownetStatus::Ok,
            Err(e) => fail(Error::Io(e)),
        }
    })
}

/// Loads a model from a file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` writable storage for
/// one pointer.
#[no_mangle]
pub unsafe extern "C" fn grownet_model_load(
    path: *const c_char,
    out: *mut *mut GrownetModel,
) -> GrownetStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out is a null pointer");
            return GrownetStatus::NullPointer;
        }
        let path = match cstr_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let bytes = match std::fs::read(Path::new(path)) {
            Ok(b) => b,
            Err(e) => return fail(Error::Io(e)),
        };
        match load_model(&bytes) {
            Ok(graph) => {
                *out = Box::into_raw(Box::new(GrownetModel { graph }));
                GrownetStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Renders the model architecture as a Graphviz DOT string; free the result
/// with [`grownet_string_free`].
///
/// # Safety
/// `model` must be a live handle; `out_text` writable storage for one
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn grownet_model_export_dot(
    model: *const GrownetModel,
    out_text: *mut *mut c_char,
) -> GrownetStatus {
    guarded(|| {
        if model.is_null() || out_text.is_null() {
            set_error("model/out_text is a null pointer");
            return GrownetStatus::NullPointer;
        }
        let dot = export_dot(&(*model).graph);
        match CString::new(dot) {
            Ok(c) => {
                *out_text = c.into_raw();
                GrownetStatus::Ok
            }
            Err(_) => {
                set_error("DOT output contained an interior NUL");
                GrownetStatus::Internal
            }
        }
    })
}

/// Loads an IDX image/label file pair as a dataset.
///
/// # Safety
/// `images`/`labels` must be valid NUL-terminated strings; `out` writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn grownet_dataset_load_idx(
    images: *const c_char,
    labels: *const c_char,
    out: *mut *mut GrownetDataset,
) -> GrownetStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out is a null pointer");
            return GrownetStatus::NullPointer;
        }
        let images = match cstr_arg(images, "images path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let labels = match cstr_arg(labels, "labels path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_idx(Path::new(images), Path::new(labels)) {
            Ok(data) => {
                *out = Box::into_raw(Box::new(GrownetDataset { data }));
                GrownetStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a dataset handle; null is ignored.
///
/// # Safety
/// `dataset` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn grownet_dataset_free(dataset: *mut GrownetDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `dataset` must be a live handle from this library (or null).
#[no_mangle]
pub unsafe extern "C" fn grownet_dataset_len(dataset: *const GrownetDataset) -> u32 {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).data.len() as u32
}

/// Number of classes; 0 for a null handle.
///
/// # Safety
/// `dataset` must be a live handle from this library (or null).
#[no_mangle]
pub unsafe extern "C" fn grownet_dataset_class_count(dataset: *const GrownetDataset) -> u32 {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).data.class_count() as u32
}

/// Splits a dataset into stratified train/test handles.
///
/// # Safety
/// `dataset` must be a live handle; `out_train`/`out_test` writable storage.
#[no_mangle]
pub unsafe extern "C" fn grownet_dataset_split(
    dataset: *const GrownetDataset,
    test_fraction: f64,
    seed: u64,
    out_train: *mut *mut GrownetDataset,
    out_test: *mut *mut GrownetDataset,
) -> GrownetStatus {
    guarded(|| {
        if dataset.is_null() || out_train.is_null() || out_test.is_null() {
            set_error("null pointer argument");
            return GrownetStatus::NullPointer;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match stratified_split(&(*dataset).data, test_fraction, &mut rng) {
            Ok((train_ds, test_ds)) => {
                *out_train = Box::into_raw(Box::new(GrownetDataset { data: train_ds }));
                *out_test = Box::into_raw(Box::new(GrownetDataset { data: test_ds }));
                GrownetStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Fills `out` with the library defaults.
///
/// # Safety
/// `out` must be a valid pointer to a `GrownetTrainOptions`.
#[no_mangle]
pub unsafe extern "C" fn grownet_train_options_default(
    out: *mut GrownetTrainOptions,
) -> GrownetStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out is a null pointer");
            return GrownetStatus::NullPointer;
        }
        *out = GrownetTrainOptions {
            generations: 10,
            epochs_per_generation: 50,
            lr_max: 0.1,
            lr_mode: GrownetLrMode::Progressive,
            orchestrator: GrownetOrchestrator::ProgressCheck,
            score_mode: GrownetScoreMode::Accuracy,
            policy: GrownetPolicy::Mcts,
            time_limit_secs: 30.0,
            mcts_iterations: 0,
            rollout_depth: 2,
            exploration: std::f64::consts::SQRT_2,
            sim_epochs: 10,
            sim_per_class: 10,
            batch_size: 32,
            seed: 0,
            overfit_gap: 0.05,
        };
        GrownetStatus::Ok
    })
}

fn train_config_from(opts: &GrownetTrainOptions) -> TrainConfig {
    TrainConfig {
        generations: opts.generations as usize,
        epochs_per_generation: opts.epochs_per_generation as usize,
        lr_max: opts.lr_max,
        lr_mode: match opts.lr_mode {
            GrownetLrMode::Progressive => LrMode::Progressive,
            GrownetLrMode::Constant => LrMode::Constant,
        },
        orchestrator: match opts.orchestrator {
            GrownetOrchestrator::Constant => Orchestrator::Constant,
            GrownetOrchestrator::ProgressCheck => Orchestrator::ProgressCheck,
            GrownetOrchestrator::Overfit => Orchestrator::Overfit,
        },
        score_mode: match opts.score_mode {
            GrownetScoreMode::Accuracy => ScoreMode::Accuracy,
            GrownetScoreMode::Loss => ScoreMode::Loss,
        },
        policy: match opts.policy {
            GrownetPolicy::Mcts => Policy::Mcts,
            GrownetPolicy::Greedy => Policy::Greedy,
            GrownetPolicy::Random => Policy::Random,
        },
        budget: SearchBudget {
            time_limit: Duration::from_secs_f64(opts.time_limit_secs.max(0.0)),
            max_iterations: if opts.mcts_iterations > 0 {
                Some(opts.mcts_iterations)
            } else {
                None
            },
            rollout_depth: opts.rollout_depth as usize,
            exploration: opts.exploration,
            sim_epochs: opts.sim_epochs as usize,
        },
        batch_size: opts.batch_size as usize,
        seed: opts.seed,
        overfit_gap: opts.overfit_gap,
    }
}

/// Trains the model in place on a single-input dataset. The simulation set
/// is drawn from the training set (`sim_per_class` samples per class).
/// Writes the final generation's test accuracy to `final_test_acc` when it
/// is non-null.
///
/// # Safety
/// `model` must be a live mutable handle, `train_set`/`test_set` live
/// dataset handles; `opts` a valid options struct.
#[no_mangle]
pub unsafe extern "C" fn grownet_train(
    model: *mut GrownetModel,
    train_set: *const GrownetDataset,
    test_set: *const GrownetDataset,
    opts: *const GrownetTrainOptions,
    final_test_acc: *mut f64,
) -> GrownetStatus {
    guarded(|| {
        if model.is_null() || train_set.is_null() || test_set.is_null() || opts.is_null() {
            set_error("null pointer argument");
            return GrownetStatus::NullPointer;
        }
        let opts_ref = &*opts;
        let cfg = train_config_from(opts_ref);
        let train_parts = std::slice::from_ref(&(*train_set).data);
        let test_parts = std::slice::from_ref(&(*test_set).data);
        let mut rng = ChaCha8Rng::seed_from_u64(opts_ref.seed);
        let simset = match make_simset(
            &train_parts[0],
            opts_ref.sim_per_class as usize,
            &mut rng,
        ) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        let graph = (*model).graph.clone();
        match train(
            graph,
            train_parts,
            test_parts,
            std::slice::from_ref(&simset),
            &cfg,
            TrainHooks::default(),
        ) {
            Ok((trained, history)) => {
                (*model).graph = trained;
                if !final_test_acc.is_null() {
                    *final_test_acc = history
                        .generations
                        .last()
                        .map(|g| g.test_acc)
                        .unwrap_or(f64::NAN);
                }
                GrownetStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Classification accuracy of the model on a dataset.
///
/// # Safety
/// `model` and `dataset` must be live handles; `accuracy` writable.
#[no_mangle]
pub unsafe extern "C" fn grownet_evaluate(
    model: *const GrownetModel,
    dataset: *const GrownetDataset,
    accuracy: *mut f64,
) -> GrownetStatus {
    guarded(|| {
        if model.is_null() || dataset.is_null() || accuracy.is_null() {
            set_error("null pointer argument");
            return GrownetStatus::NullPointer;
        }
        match evaluate(&(*model).graph, std::slice::from_ref(&(*dataset).data), 64) {
            Ok(acc) => {
                *accuracy = acc;
                GrownetStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
