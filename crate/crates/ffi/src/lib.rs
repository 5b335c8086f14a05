//! C ABI over the solver.
//!
//! Every fallible function returns a [`KpStatus`]; on failure the message is
//! available from [`kp_last_error`] on the same thread. Networks and
//! references are opaque handles released with their `_free` function.
//! Panics never cross the boundary; they are reported as
//! `KP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use kuramoto_pinn::evalx::energy_norm;
use kuramoto_pinn::fvref::{fv_solve, FvGrid, RefSolution, DEFAULT_CELLS, DEFAULT_CFL, DEFAULT_LEVELS};
use kuramoto_pinn::model::{InitialConditionKind, ProblemSpec};
use kuramoto_pinn::net::{forward_batch, init_params, ActivationKind, NetConfig, ParamSet};
use kuramoto_pinn::train::{AdamConfig, TrainConfig, Trainer};
use kuramoto_pinn::{Error, ErrorCategory};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KpStatus {
    Ok = 0,
    InvalidInput = 2,
    Numerical = 3,
    Format = 4,
    Io = 5,
    NullPointer = 6,
    Panic = 7,
}

impl From<ErrorCategory> for KpStatus {
    fn from(category: ErrorCategory) -> Self {
        match category {
            ErrorCategory::InvalidInput => KpStatus::InvalidInput,
            ErrorCategory::Numerical => KpStatus::Numerical,
            ErrorCategory::Format => KpStatus::Format,
            ErrorCategory::Io => KpStatus::Io,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KpActivation {
    Tanh = 0,
    Sin = 1,
    Relu = 2,
}

impl From<KpActivation> for ActivationKind {
    fn from(a: KpActivation) -> Self {
        match a {
            KpActivation::Tanh => ActivationKind::Tanh,
            KpActivation::Sin => ActivationKind::Sin,
            KpActivation::Relu => ActivationKind::Relu,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KpInitialCondition {
    Polynomial = 0,
    Dirac = 1,
    Piecewise = 2,
}

/// Problem parameters; start from `kp_problem_default()`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KpProblem {
    pub coupling: f64,
    pub horizon: f64,
    pub initial_condition: KpInitialCondition,
    /// Mollifier half-width of the Dirac initial condition.
    pub mollifier: f64,
}

impl From<&KpProblem> for ProblemSpec {
    fn from(p: &KpProblem) -> Self {
        ProblemSpec {
            coupling: p.coupling,
            horizon: p.horizon,
            ic: match p.initial_condition {
                KpInitialCondition::Polynomial => InitialConditionKind::Polynomial,
                KpInitialCondition::Dirac => InitialConditionKind::Dirac,
                KpInitialCondition::Piecewise => InitialConditionKind::Piecewise,
            },
            mollifier: p.mollifier,
        }
    }
}

/// Training settings; start from `kp_train_options_default()`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KpTrainOptions {
    pub epochs: usize,
    pub n_colloc: usize,
    pub n_ic: usize,
    pub n_quad: usize,
    pub learning_rate: f64,
    /// Seed of the collocation and initial-condition samples.
    pub seed: u64,
}

impl From<&KpTrainOptions> for TrainConfig {
    fn from(o: &KpTrainOptions) -> Self {
        TrainConfig {
            epochs: o.epochs,
            n_colloc: o.n_colloc,
            n_ic: o.n_ic,
            n_quad: o.n_quad,
            adam: AdamConfig {
                learning_rate: o.learning_rate,
                ..AdamConfig::default()
            },
            seed: o.seed,
            ..TrainConfig::default()
        }
    }
}

/// Loss components after training.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KpLoss {
    pub residual: f64,
    pub initial_condition: f64,
    pub total: f64,
}

/// A network configuration with its parameters.
pub struct KpNetwork {
    config: NetConfig,
    params: ParamSet,
}

/// A finite-volume reference solution.
pub struct KpReference {
    solution: RefSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

/// Runs `body`, converting errors and panics into a status.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> KpStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => KpStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer passed for {what}"));
            KpStatus::NullPointer
        }
        Ok(Err(Failure::Solver(e))) => {
            set_last_error(e.to_string());
            e.category().into()
        }
        Err(payload) => {
            let text = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {text}"));
            KpStatus::Panic
        }
    }
}

enum Failure {
    Null(&'static str),
    Solver(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Solver(e)
    }
}

unsafe fn deref<'a, T>(ptr: *const T, what: &'static str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or(Failure::Null(what))
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(Failure::Null("path"));
    }
    let text = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Failure::Solver(Error::config("path is not valid UTF-8")))?;
    Ok(PathBuf::from(text))
}

unsafe fn slice_arg<'a>(data: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn slice_out<'a>(data: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if data.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(data, len))
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kp_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn kp_problem_default() -> KpProblem {
    let spec = ProblemSpec::default();
    KpProblem {
        coupling: spec.coupling,
        horizon: spec.horizon,
        initial_condition: KpInitialCondition::Polynomial,
        mollifier: spec.mollifier,
    }
}

#[no_mangle]
pub extern "C" fn kp_train_options_default() -> KpTrainOptions {
    let config = TrainConfig::default();
    KpTrainOptions {
        epochs: config.epochs,
        n_colloc: config.n_colloc,
        n_ic: config.n_ic,
        n_quad: config.n_quad,
        learning_rate: config.adam.learning_rate,
        seed: config.seed,
    }
}

/// Creates a freshly initialized network.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn kp_network_new(
    activation: KpActivation,
    depth: usize,
    width: usize,
    seed: u64,
    out: *mut *mut KpNetwork,
) -> KpStatus {
    guard(|| {
        let config = NetConfig::new(depth, width, activation.into(), seed);
        let params = init_params(&config)?;
        put(out, Box::into_raw(Box::new(KpNetwork { config, params })), "out")
    })
}

/// Loads a network saved with `kp_network_save` or the command-line tool.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kp_network_load(path: *const c_char, out: *mut *mut KpNetwork) -> KpStatus {
    guard(|| {
        let (config, params) = ParamSet::load(&path_arg(path)?)?;
        put(out, Box::into_raw(Box::new(KpNetwork { config, params })), "out")
    })
}

/// # Safety
/// `network` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn kp_network_save(network: *const KpNetwork, path: *const c_char) -> KpStatus {
    guard(|| {
        let net = deref(network, "network")?;
        net.params.save(&net.config, &path_arg(path)?)?;
        Ok(())
    })
}

/// Number of trainable parameters, or 0 for a NULL handle.
///
/// # Safety
/// `network` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kp_network_param_count(network: *const KpNetwork) -> usize {
    network.as_ref().map_or(0, |n| n.params.len())
}

/// Evaluates `u(theta[i], t[i])` for `i < n` into `out`.
///
/// # Safety
/// `theta`, `t` and `out` must each point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn kp_network_forward(
    network: *const KpNetwork,
    theta: *const f64,
    t: *const f64,
    n: usize,
    out: *mut f64,
) -> KpStatus {
    guard(|| {
        let net = deref(network, "network")?;
        let thetas = slice_arg(theta, n, "theta")?;
        let times = slice_arg(t, n, "t")?;
        let out = slice_out(out, n, "out")?;
        let points: Vec<(f64, f64)> = thetas.iter().copied().zip(times.iter().copied()).collect();
        out.copy_from_slice(&forward_batch(&net.params, &net.config, &points)?);
        Ok(())
    })
}

/// Trains the network in place, starting from its current parameters.
/// `history` may be NULL; otherwise it receives the total loss at the start
/// of each epoch and must hold `options->epochs` doubles. `final_loss` may
/// be NULL.
///
/// # Safety
/// Pointers must be valid as described above.
#[no_mangle]
pub unsafe extern "C" fn kp_network_train(
    network: *mut KpNetwork,
    problem: *const KpProblem,
    options: *const KpTrainOptions,
    history: *mut f64,
    final_loss: *mut KpLoss,
) -> KpStatus {
    guard(|| {
        let net = network.as_mut().ok_or(Failure::Null("network"))?;
        let spec = ProblemSpec::from(deref(problem, "problem")?);
        let config = TrainConfig::from(deref(options, "options")?);
        let report = Trainer::with_params(&net.config, &spec, &config, net.params.clone())?.run()?;
        if !history.is_null() {
            let out = std::slice::from_raw_parts_mut(history, config.epochs);
            for (slot, loss) in out.iter_mut().zip(&report.history) {
                *slot = loss.total;
            }
        }
        if !final_loss.is_null() {
            final_loss.write(KpLoss {
                residual: report.final_loss.residual,
                initial_condition: report.final_loss.ic,
                total: report.final_loss.total,
            });
        }
        net.params = report.params;
        Ok(())
    })
}

/// # Safety
/// `network` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kp_network_free(network: *mut KpNetwork) {
    if !network.is_null() {
        drop(Box::from_raw(network));
    }
}

/// Solves the reference on `cells` cells with `levels` stored time levels.
/// Zero arguments select the defaults (512 cells, 205 levels, CFL 0.9).
///
/// # Safety
/// `problem` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kp_reference_solve(
    problem: *const KpProblem,
    cells: usize,
    levels: usize,
    cfl: f64,
    out: *mut *mut KpReference,
) -> KpStatus {
    guard(|| {
        let spec = ProblemSpec::from(deref(problem, "problem")?);
        spec.validate()?;
        let cells = if cells == 0 { DEFAULT_CELLS } else { cells };
        let levels = if levels == 0 { DEFAULT_LEVELS } else { levels };
        let cfl = if cfl == 0.0 { DEFAULT_CFL } else { cfl };
        let solution = fv_solve(&spec, &FvGrid::new(cells, levels, spec.horizon)?, cfl)?;
        put(out, Box::into_raw(Box::new(KpReference { solution })), "out")
    })
}

/// Loads a reference from a `.bin` or `.csv` file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kp_reference_load(path: *const c_char, out: *mut *mut KpReference) -> KpStatus {
    guard(|| {
        let solution = RefSolution::load(&path_arg(path)?)?;
        put(out, Box::into_raw(Box::new(KpReference { solution })), "out")
    })
}

/// Saves as CSV when the path ends in `.csv`, binary otherwise.
///
/// # Safety
/// `reference` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn kp_reference_save(reference: *const KpReference, path: *const c_char) -> KpStatus {
    guard(|| {
        let r = deref(reference, "reference")?;
        let path = path_arg(path)?;
        if path.extension().is_some_and(|e| e == "csv") {
            r.solution.save_csv(&path)?;
        } else {
            r.solution.save_binary(&path)?;
        }
        Ok(())
    })
}

/// Grid size of the reference.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kp_reference_dims(
    reference: *const KpReference,
    cells: *mut usize,
    levels: *mut usize,
) -> KpStatus {
    guard(|| {
        let r = deref(reference, "reference")?;
        put(cells, r.solution.grid.cells, "cells")?;
        put(levels, r.solution.grid.levels, "levels")
    })
}

/// Copies the cell averages, `out[j * levels + n]` for cell `j` and level
/// `n`; `len` must equal `cells * levels`.
///
/// # Safety
/// `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn kp_reference_values(reference: *const KpReference, out: *mut f64, len: usize) -> KpStatus {
    guard(|| {
        let r = deref(reference, "reference")?;
        if len != r.solution.values.len() {
            return Err(Error::Shape(format!(
                "buffer holds {len} values, reference has {}",
                r.solution.values.len()
            ))
            .into());
        }
        slice_out(out, len, "out")?.copy_from_slice(&r.solution.values);
        Ok(())
    })
}

/// # Safety
/// `reference` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kp_reference_free(reference: *mut KpReference) {
    if !reference.is_null() {
        drop(Box::from_raw(reference));
    }
}

/// RMS difference between the network and the reference over all
/// reference nodes. The reference must have been solved for `problem`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn kp_energy_norm(
    network: *const KpNetwork,
    problem: *const KpProblem,
    reference: *const KpReference,
    out: *mut f64,
) -> KpStatus {
    guard(|| {
        let net = deref(network, "network")?;
        let spec = ProblemSpec::from(deref(problem, "problem")?);
        let r = deref(reference, "reference")?;
        let report = energy_norm(&net.params, &net.config, &spec, &r.solution)?;
        put(out, report.energy_norm, "out")
    })
}
