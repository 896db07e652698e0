//! C ABI over the `fedquad` crate.
//!
//! Conventions:
//! - Every fallible function returns an [`FqStatus`]; `FQ_STATUS_OK` is zero.
//!   On failure, [`fq_last_error`] returns a message for the calling thread.
//! - Objects are opaque handles created by `*_new`/`*_load`/`*_generate`
//!   style functions and released with the matching `*_free`. Passing NULL
//!   to a free function is a no-op.
//! - Output arrays are caller-allocated. Functions that fill one take its
//!   capacity and report the required length through `out_len`; when the
//!   buffer is too small they write nothing and return
//!   `FQ_STATUS_BUFFER_TOO_SMALL`.
//! - Matrices are row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fedquad::config::ExperimentConfig;
use fedquad::data::{
    generate_blobs, load_dataset, partition_dirichlet, partition_iid, BlobConfig, ClientPartition,
    Dataset, DatasetFormat,
};
use fedquad::experiment::{run_experiment, write_run_dir, PreparedData};
use fedquad::federation::{select_clients, FederationRun};
use fedquad::losses::quad_star;
use fedquad::metrics::accuracy;
use fedquad::model::{build_model, embed, EncoderSpec, ModelParameters};
use fedquad::{FedQuadError, Tensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Dimension = 4,
    Io = 5,
    Unsatisfiable = 6,
    Partition = 7,
    Protocol = 8,
    Numeric = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

impl From<&FedQuadError> for FqStatus {
    fn from(e: &FedQuadError) -> Self {
        match e {
            FedQuadError::Config(_) | FedQuadError::Parse { .. } | FedQuadError::Validation(_) => {
                FqStatus::Config
            }
            FedQuadError::Dimension { .. } | FedQuadError::LabelOutOfRange { .. } => {
                FqStatus::Dimension
            }
            FedQuadError::Io { .. } => FqStatus::Io,
            FedQuadError::UnsatisfiableQuadruplet(_) => FqStatus::Unsatisfiable,
            FedQuadError::Partition(_) => FqStatus::Partition,
            FedQuadError::Protocol(_) | FedQuadError::State(_) => FqStatus::Protocol,
            FedQuadError::NonFinite(_) | FedQuadError::DegenerateEmbedding(_) => FqStatus::Numeric,
        }
    }
}

/// Opaque dataset handle.
pub struct FqDataset(Dataset);

/// Opaque set of client partitions.
pub struct FqPartitions(Vec<ClientPartition>);

/// Opaque model parameters.
pub struct FqModel(ModelParameters);

/// Opaque completed experiment.
pub struct FqRun {
    config: ExperimentConfig,
    data: PreparedData,
    run: FederationRun,
}

/// One round of a completed run. `num_participants` counts the clients whose
/// update entered the aggregate.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FqRoundReport {
    pub round: usize,
    pub num_participants: usize,
    pub num_skipped: usize,
    pub ce_loss: f64,
    pub metric_loss: f64,
    pub total_loss: f64,
    pub accuracy: f64,
    pub intra: f64,
    pub inter: f64,
    pub ratio: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("NULs stripped")));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// The most recent error message on this thread, or NULL if the last call
/// succeeded. Valid until the next fedquad call on the same thread.
#[no_mangle]
pub extern "C" fn fq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

struct Failure(FqStatus, String);

impl From<FedQuadError> for Failure {
    fn from(e: FedQuadError) -> Self {
        Failure(FqStatus::from(&e), e.to_string())
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

fn fail<T>(status: FqStatus, msg: impl Into<String>) -> FfiResult<T> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> FqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_last_error();
            FqStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            FqStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    match p.as_ref() {
        Some(r) => Ok(r),
        None => fail(FqStatus::NullPointer, format!("{name} is NULL")),
    }
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> FfiResult<()> {
    if out.is_null() {
        return fail(FqStatus::NullPointer, format!("{name} is NULL"));
    }
    out.write(value);
    Ok(())
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(FqStatus::NullPointer, format!("{name} is NULL"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> FfiResult<PathBuf> {
    Ok(PathBuf::from(str_arg(p, name)?))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(FqStatus::NullPointer, format!("{name} is NULL"));
    }
    CStr::from_ptr(p).to_str().or_else(|_| {
        fail(
            FqStatus::InvalidArgument,
            format!("{name} is not valid UTF-8"),
        )
    })
}

unsafe fn fill<T: Copy>(
    values: &[T],
    buf: *mut T,
    cap: usize,
    out_len: *mut usize,
) -> FfiResult<()> {
    write_out(out_len, values.len(), "out_len")?;
    if values.len() > cap {
        return fail(
            FqStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", values.len()),
        );
    }
    if !values.is_empty() {
        if buf.is_null() {
            return fail(FqStatus::NullPointer, "buf is NULL");
        }
        ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    }
    Ok(())
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Frees a handle created by this library. NULL is ignored.
unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

// ---------------------------------------------------------------- datasets

/// Gaussian blobs. A negative or NaN `separation` selects the default
/// center distance of `4 * std`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn fq_dataset_generate(
    classes: usize,
    dim: usize,
    per_class: usize,
    std: f64,
    separation: f64,
    seed: u64,
    out: *mut *mut FqDataset,
) -> FqStatus {
    guard(|| {
        let mut cfg = BlobConfig::new(classes, dim, per_class, std, seed);
        cfg.center_distance = (separation >= 0.0).then_some(separation);
        let ds = generate_blobs(&cfg)?;
        write_out(out, boxed(FqDataset(ds)), "out")
    })
}

/// Loads a `label,f0,...` CSV. `declared_classes == 0` infers the class
/// count from the labels.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fq_dataset_load_csv(
    path: *const c_char,
    declared_classes: usize,
    out: *mut *mut FqDataset,
) -> FqStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let ds = load_dataset(
            &path,
            DatasetFormat::Csv,
            (declared_classes > 0).then_some(declared_classes),
        )?;
        write_out(out, boxed(FqDataset(ds)), "out")
    })
}

/// # Safety
/// `dataset` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fq_dataset_save_csv(
    dataset: *const FqDataset,
    path: *const c_char,
) -> FqStatus {
    guard(|| {
        let ds = deref(dataset, "dataset")?;
        Ok(ds.0.save_csv(&path_arg(path, "path")?)?)
    })
}

/// Row count, feature dimension and class count.
///
/// # Safety
/// `dataset` must be a live handle; each output pointer may be NULL to skip it.
#[no_mangle]
pub unsafe extern "C" fn fq_dataset_shape(
    dataset: *const FqDataset,
    out_rows: *mut usize,
    out_dim: *mut usize,
    out_classes: *mut usize,
) -> FqStatus {
    guard(|| {
        let ds = &deref(dataset, "dataset")?.0;
        for (p, v) in [
            (out_rows, ds.len()),
            (out_dim, ds.dim()),
            (out_classes, ds.num_classes()),
        ] {
            if !p.is_null() {
                p.write(v);
            }
        }
        Ok(())
    })
}

/// # Safety
/// `dataset` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fq_dataset_free(dataset: *mut FqDataset) {
    release(dataset);
}

// -------------------------------------------------------------- partitions

/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fq_partition_iid(
    dataset: *const FqDataset,
    num_clients: usize,
    seed: u64,
    out: *mut *mut FqPartitions,
) -> FqStatus {
    guard(|| {
        let ds = deref(dataset, "dataset")?;
        let parts = partition_iid(&ds.0, num_clients, seed)?;
        write_out(out, boxed(FqPartitions(parts)), "out")
    })
}

/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fq_partition_dirichlet(
    dataset: *const FqDataset,
    num_clients: usize,
    alpha: f64,
    seed: u64,
    min_samples: usize,
    out: *mut *mut FqPartitions,
) -> FqStatus {
    guard(|| {
        let ds = deref(dataset, "dataset")?;
        let parts = partition_dirichlet(&ds.0, num_clients, alpha, seed, min_samples)?;
        write_out(out, boxed(FqPartitions(parts)), "out")
    })
}

/// # Safety
/// `partitions` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fq_partitions_count(
    partitions: *const FqPartitions,
    out: *mut usize,
) -> FqStatus {
    guard(|| {
        let p = deref(partitions, "partitions")?;
        write_out(out, p.0.len(), "out")
    })
}

/// Sorted row indices of one client.
///
/// # Safety
/// `partitions` must be a live handle; `buf` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn fq_partitions_client_indices(
    partitions: *const FqPartitions,
    client: usize,
    buf: *mut usize,
    cap: usize,
    out_len: *mut usize,
) -> FqStatus {
    guard(|| {
        let p = deref(partitions, "partitions")?;
        let Some(part) = p.0.get(client) else {
            return fail(
                FqStatus::InvalidArgument,
                format!("client {client} out of range for {} partitions", p.0.len()),
            );
        };
        fill(&part.indices, buf, cap, out_len)
    })
}

/// # Safety
/// `partitions` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fq_partitions_free(partitions: *mut FqPartitions) {
    release(partitions);
}

// ------------------------------------------------------------------ losses

/// Quadruplet hinge loss over `rows` embeddings of width `cols` per role.
///
/// # Safety
/// Each role pointer must reference `rows * cols` doubles; `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn fq_quad_star(
    anchors: *const f64,
    positives: *const f64,
    negatives1: *const f64,
    negatives2: *const f64,
    rows: usize,
    cols: usize,
    margin1: f64,
    margin2: f64,
    squared: bool,
    out: *mut f64,
) -> FqStatus {
    guard(|| {
        let n = rows * cols;
        let t = |p: *const f64, name: &str| -> FfiResult<Tensor> {
            Ok(Tensor::matrix(rows, cols, slice(p, n, name)?.to_vec())?)
        };
        let (a, p, n1, n2) = (
            t(anchors, "anchors")?,
            t(positives, "positives")?,
            t(negatives1, "negatives1")?,
            t(negatives2, "negatives2")?,
        );
        if !(margin1 > 0.0 && margin2 > 0.0) {
            return fail(FqStatus::InvalidArgument, "margins must be positive");
        }
        write_out(
            out,
            quad_star(&a, &p, &n1, &n2, margin1, margin2, squared)?,
            "out",
        )
    })
}

// -------------------------------------------------------------- federation

/// The sorted ids of the clients taking part in `round`.
///
/// # Safety
/// `buf` must hold `cap` values; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fq_select_clients(
    num_clients: usize,
    fraction: f64,
    round: usize,
    seed: u64,
    buf: *mut usize,
    cap: usize,
    out_len: *mut usize,
) -> FqStatus {
    guard(|| {
        if num_clients == 0 || !(fraction > 0.0 && fraction <= 1.0) {
            return fail(
                FqStatus::InvalidArgument,
                format!("need num_clients >= 1 and fraction in (0, 1], got {num_clients} and {fraction}"),
            );
        }
        fill(
            &select_clients(num_clients, fraction, round, seed),
            buf,
            cap,
            out_len,
        )
    })
}

// ------------------------------------------------------------------- model

/// # Safety
/// `hidden_dims` must reference `num_hidden` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fq_model_build(
    input_dim: usize,
    hidden_dims: *const usize,
    num_hidden: usize,
    embedding_dim: usize,
    num_classes: usize,
    seed: u64,
    out: *mut *mut FqModel,
) -> FqStatus {
    guard(|| {
        let hidden = slice(hidden_dims, num_hidden, "hidden_dims")?.to_vec();
        let spec = EncoderSpec::new(input_dim, hidden, embedding_dim, num_classes);
        write_out(out, boxed(FqModel(build_model(&spec, seed)?)), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fq_model_load(path: *const c_char, out: *mut *mut FqModel) -> FqStatus {
    guard(|| {
        let params = ModelParameters::load(&path_arg(path, "path")?)?;
        EncoderSpec::infer(&params)?;
        write_out(out, boxed(FqModel(params)), "out")
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fq_model_save(model: *const FqModel, path: *const c_char) -> FqStatus {
    guard(|| {
        let m = deref(model, "model")?;
        Ok(m.0.save(&path_arg(path, "path")?)?)
    })
}

/// Input width, embedding width, class count and total scalar parameters.
///
/// # Safety
/// `model` must be a live handle; each output pointer may be NULL to skip it.
#[no_mangle]
pub unsafe extern "C" fn fq_model_shape(
    model: *const FqModel,
    out_input_dim: *mut usize,
    out_embedding_dim: *mut usize,
    out_classes: *mut usize,
    out_param_count: *mut usize,
) -> FqStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let spec = EncoderSpec::infer(&m.0)?;
        for (p, v) in [
            (out_input_dim, spec.input_dim),
            (out_embedding_dim, spec.embedding_dim),
            (out_classes, spec.num_classes),
            (out_param_count, m.0.param_count()),
        ] {
            if !p.is_null() {
                p.write(v);
            }
        }
        Ok(())
    })
}

/// Embeds `rows` inputs of width `cols`; writes `rows * embedding_dim` values.
///
/// # Safety
/// `inputs` must reference `rows * cols` doubles; `buf` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn fq_model_embed(
    model: *const FqModel,
    inputs: *const f64,
    rows: usize,
    cols: usize,
    buf: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> FqStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let x = Tensor::matrix(rows, cols, slice(inputs, rows * cols, "inputs")?.to_vec())?;
        let z = embed(&m.0, &x)?;
        fill(z.data(), buf, cap, out_len)
    })
}

/// Fraction of `dataset` rows whose predicted class matches the label.
///
/// # Safety
/// `model` and `dataset` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fq_model_accuracy(
    model: *const FqModel,
    dataset: *const FqDataset,
    out: *mut f64,
) -> FqStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let ds = deref(dataset, "dataset")?;
        write_out(out, accuracy(&m.0, &ds.0)?, "out")
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fq_model_free(model: *mut FqModel) {
    release(model);
}

// ------------------------------------------------------------- experiments

/// Runs a full experiment from config text (the CLI's `key = value` format).
/// `workers == 0` keeps the default thread pool. Nothing is written to disk.
///
/// # Safety
/// `config_text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fq_run_experiment(
    config_text: *const c_char,
    workers: usize,
    out: *mut *mut FqRun,
) -> FqStatus {
    guard(|| {
        let mut config = ExperimentConfig::parse(str_arg(config_text, "config_text")?)?;
        if workers > 0 {
            config.federation.workers = Some(workers);
        }
        let (data, run) = run_experiment(&config)?;
        write_out(out, boxed(FqRun { config, data, run }), "out")
    })
}

/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fq_run_round_count(run: *const FqRun, out: *mut usize) -> FqStatus {
    guard(|| {
        let r = deref(run, "run")?;
        write_out(out, r.run.reports.len(), "out")
    })
}

/// Report for round index `index` (0-based; the report's `round` is 1-based).
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fq_run_round_report(
    run: *const FqRun,
    index: usize,
    out: *mut FqRoundReport,
) -> FqStatus {
    guard(|| {
        let r = deref(run, "run")?;
        let Some(rep) = r.run.reports.get(index) else {
            return fail(
                FqStatus::InvalidArgument,
                format!(
                    "round index {index} out of range for {} rounds",
                    r.run.reports.len()
                ),
            );
        };
        let report = FqRoundReport {
            round: rep.round,
            num_participants: rep.participants.len(),
            num_skipped: rep.skipped.len(),
            ce_loss: rep.ce_loss,
            metric_loss: rep.metric_loss,
            total_loss: rep.total_loss,
            accuracy: rep.accuracy,
            intra: rep.intra,
            inter: rep.inter,
            ratio: rep.ratio,
        };
        write_out(out, report, "out")
    })
}

/// A copy of the final global model; free it with [`fq_model_free`].
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fq_run_final_model(run: *const FqRun, out: *mut *mut FqModel) -> FqStatus {
    guard(|| {
        let r = deref(run, "run")?;
        write_out(out, boxed(FqModel(r.run.final_model.clone())), "out")
    })
}

/// Writes `results.csv`, the checkpoint, the partition manifest and the
/// resolved config into `dir`, exactly as the CLI's `run` does.
///
/// # Safety
/// `run` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fq_run_write(run: *const FqRun, dir: *const c_char) -> FqStatus {
    guard(|| {
        let r = deref(run, "run")?;
        Ok(write_run_dir(
            &path_arg(dir, "dir")?,
            &r.config,
            &r.data,
            &r.run,
        )?)
    })
}

/// # Safety
/// `run` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fq_run_free(run: *mut FqRun) {
    release(run);
}
