//! C ABI for `rplsim`.
//!
//! Every fallible function returns an [`RplStatus`] and writes results
//! through out-pointers. On failure, [`rpl_last_error`] copies a
//! description of the most recent error on the calling thread.
//!
//! Handles ([`RplConfig`], [`RplTopology`], [`RplReport`]) are opaque and
//! must be released with their `_free` function. Passing NULL to a `_free`
//! function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rplsim::engine::{self, EngineError, ReportFormat, RunReport, ScenarioConfig};
use rplsim::mac::LossCause;
use rplsim::metric;
use rplsim::routing::{header_size, AddressBook};
use rplsim::topology::{self, SynthParams};
use rplsim::{Metric, NodeId, Topology};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RplStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Simulation = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RplMetricKind {
    Etx = 0,
    /// Uses the `param` argument as the exponent N.
    EtxN = 1,
    /// Uses the `param` argument as the retry count R.
    Lr = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RplLossCause {
    MacDrop = 0,
    NoRoute = 1,
    SpuriousDuplicate = 2,
    QueueOverflow = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RplReportFormat {
    Json = 0,
    Csv = 1,
    Both = 2,
}

pub struct RplConfig(ScenarioConfig);

pub struct RplTopology(Topology);

pub struct RplReport(RunReport);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: RplStatus, msg: impl Into<String>) -> RplStatus {
    set_error(msg);
    status
}

fn engine_status(e: &EngineError) -> RplStatus {
    match e {
        EngineError::Config { .. } | EngineError::Trace(_) | EngineError::Json(_) => {
            RplStatus::Parse
        }
        EngineError::InvalidConfig(_)
        | EngineError::InvalidArgument(_)
        | EngineError::Topology(_) => RplStatus::InvalidArgument,
        EngineError::Io(_) => RplStatus::Io,
    }
}

fn from_engine(e: EngineError) -> RplStatus {
    fail(engine_status(&e), e.to_string())
}

/// Run `f`, turning panics into [`RplStatus::Panic`].
fn guard(f: impl FnOnce() -> RplStatus) -> RplStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            fail(RplStatus::Panic, msg)
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, RplStatus> {
    if p.is_null() {
        return Err(fail(RplStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(RplStatus::InvalidArgument, "string is not valid UTF-8"))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> RplStatus {
    if out.is_null() {
        return fail(RplStatus::NullPointer, "null output pointer");
    }
    out.write(v);
    RplStatus::Ok
}

/// Copy `s` plus a terminating NUL into `buf`. `needed` (optional) receives
/// the full size including the NUL. Leaves the last error untouched.
unsafe fn copy_str(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> RplStatus {
    if !needed.is_null() {
        needed.write(s.len() + 1);
    }
    if buf.is_null() || len < s.len() + 1 {
        return RplStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(s.as_ptr() as *const c_char, buf, s.len());
    buf.add(s.len()).write(0);
    RplStatus::Ok
}

fn metric_from(kind: RplMetricKind, param: f64) -> Result<Metric, RplStatus> {
    let m = match kind {
        RplMetricKind::Etx => Metric::Etx,
        RplMetricKind::EtxN => Metric::Etxn { exponent_n: param },
        RplMetricKind::Lr => {
            if !(0.0..=u32::MAX as f64).contains(&param) || param.fract() != 0.0 {
                return Err(fail(
                    RplStatus::InvalidArgument,
                    "LR retry count must be a non-negative integer",
                ));
            }
            Metric::Lr {
                retries_r: param as u32,
            }
        }
    };
    m.validate()
        .map_err(|e| fail(RplStatus::InvalidArgument, e.to_string()))?;
    Ok(m)
}

// ---------------------------------------------------------------------------
// errors
// ---------------------------------------------------------------------------

/// Copy the calling thread's last error message into `buf`.
///
/// # Safety
/// `buf` must be valid for `len` bytes or NULL; `needed` must be valid or
/// NULL.
#[no_mangle]
pub unsafe extern "C" fn rpl_last_error(
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> RplStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    copy_str(&msg, buf, len, needed)
}

// ---------------------------------------------------------------------------
// pure functions
// ---------------------------------------------------------------------------

/// Delivery probability of a path whose links have PRRs `prrs[0..len]`,
/// each hop allowing `retries` retransmissions.
///
/// # Safety
/// `prrs` must point to `len` doubles (may be NULL when `len == 0`); `out`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpl_path_delivery(
    prrs: *const f64,
    len: usize,
    retries: u32,
    out: *mut f64,
) -> RplStatus {
    guard(|| {
        if prrs.is_null() && len > 0 {
            return fail(RplStatus::NullPointer, "null prrs");
        }
        let prrs = if len == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(prrs, len)
        };
        if prrs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return fail(RplStatus::InvalidArgument, "prr outside [0, 1]");
        }
        write_out(out, metric::path_delivery(prrs, retries))
    })
}

/// Rank through a parent advertising `parent_rank` over a link of PRR
/// `prr`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpl_rank(
    kind: RplMetricKind,
    param: f64,
    parent_rank: f64,
    prr: f64,
    out: *mut f64,
) -> RplStatus {
    guard(|| {
        let m = match metric_from(kind, param) {
            Ok(m) => m,
            Err(s) => return s,
        };
        if !(prr > 0.0 && prr <= 1.0) || !parent_rank.is_finite() {
            return fail(
                RplStatus::InvalidArgument,
                "prr must be in (0, 1] and parent_rank finite",
            );
        }
        match m.rank_via_prr(parent_rank, prr) {
            Some(r) => write_out(out, r),
            None => fail(RplStatus::InvalidArgument, "link unusable"),
        }
    })
}

/// Rank of the root under the given metric.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpl_root_rank(
    kind: RplMetricKind,
    param: f64,
    out: *mut f64,
) -> RplStatus {
    guard(|| match metric_from(kind, param) {
        Ok(m) => write_out(out, m.root_rank()),
        Err(s) => s,
    })
}

/// 95% upper bound on the loss rate (`3 / n_sent`) with no losses, the
/// observed rate otherwise.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpl_rule_of_three(n_sent: u64, losses: u64, out: *mut f64) -> RplStatus {
    guard(|| match engine::rule_of_three(n_sent, losses) {
        Ok(v) => write_out(out, v),
        Err(e) => from_engine(e),
    })
}

/// Source-route header bytes for `hops`, with node addresses given as
/// `node_count` consecutive 8-byte interface identifiers.
///
/// # Safety
/// `addrs` must point to `8 * node_count` bytes, `hops` to `hop_count`
/// node ids (may be NULL when `hop_count == 0`); `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpl_header_size(
    addrs: *const u8,
    node_count: usize,
    root: u16,
    hops: *const u16,
    hop_count: usize,
    prefix_shared: bool,
    out: *mut usize,
) -> RplStatus {
    guard(|| {
        if addrs.is_null() || (hops.is_null() && hop_count > 0) {
            return fail(RplStatus::NullPointer, "null addrs or hops");
        }
        let raw = std::slice::from_raw_parts(addrs, node_count * 8);
        let book = AddressBook::from_addresses(
            NodeId(root),
            raw.chunks_exact(8)
                .map(|c| <[u8; 8]>::try_from(c).expect("chunk of 8"))
                .collect(),
        );
        let hops: Vec<NodeId> = if hop_count == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(hops, hop_count)
                .iter()
                .map(|&h| NodeId(h))
                .collect()
        };
        match header_size(&hops, &book, prefix_shared) {
            Ok(n) => write_out(out, n),
            Err(e) => fail(RplStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// [`rpl_header_size`] for the homogeneous address plan, where addresses
/// differ only in their last two bytes.
///
/// # Safety
/// `hops` must point to `hop_count` node ids (may be NULL when
/// `hop_count == 0`); `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpl_header_size_homogeneous(
    node_count: usize,
    root: u16,
    hops: *const u16,
    hop_count: usize,
    prefix_shared: bool,
    out: *mut usize,
) -> RplStatus {
    guard(|| {
        if node_count > u16::MAX as usize + 1 {
            return fail(RplStatus::InvalidArgument, "node_count too large");
        }
        let book = AddressBook::homogeneous(node_count, NodeId(root));
        let flat: Vec<u8> = (0..node_count)
            .flat_map(|i| *book.get(NodeId(i as u16)).expect("in range"))
            .collect();
        rpl_header_size(
            flat.as_ptr(),
            node_count,
            root,
            hops,
            hop_count,
            prefix_shared,
            out,
        )
    })
}

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpl_config_default(out: *mut *mut RplConfig) -> RplStatus {
    guard(|| {
        write_out(
            out,
            Box::into_raw(Box::new(RplConfig(ScenarioConfig::default()))),
        )
    })
}

/// Parse a key-value scenario. Relative trace paths resolve against the
/// current directory.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpl_config_parse(
    text: *const c_char,
    out: *mut *mut RplConfig,
) -> RplStatus {
    guard(|| {
        let text = match str_arg(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ScenarioConfig::parse_str(text, Path::new(".")) {
            Ok(c) => write_out(out, Box::into_raw(Box::new(RplConfig(c)))),
            Err(e) => from_engine(e),
        }
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpl_config_from_file(
    path: *const c_char,
    out: *mut *mut RplConfig,
) -> RplStatus {
    guard(|| {
        let path = match str_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ScenarioConfig::from_file(Path::new(path)) {
            Ok(c) => write_out(out, Box::into_raw(Box::new(RplConfig(c)))),
            Err(e) => from_engine(e),
        }
    })
}

/// # Safety
/// `cfg` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rpl_config_set_seed(cfg: *mut RplConfig, seed: u64) -> RplStatus {
    match cfg.as_mut() {
        Some(c) => {
            c.0.seed = seed;
            RplStatus::Ok
        }
        None => fail(RplStatus::NullPointer, "null config"),
    }
}

/// # Safety
/// `cfg` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rpl_config_set_duration(
    cfg: *mut RplConfig,
    duration_s: u64,
    warmup_s: u64,
) -> RplStatus {
    match cfg.as_mut() {
        Some(c) => {
            c.0.duration_s = duration_s;
            c.0.warmup_s = warmup_s;
            RplStatus::Ok
        }
        None => fail(RplStatus::NullPointer, "null config"),
    }
}

/// # Safety
/// `cfg` must come from an `rpl_config_*` constructor or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rpl_config_free(cfg: *mut RplConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

// ---------------------------------------------------------------------------
// topology
// ---------------------------------------------------------------------------

/// Synthetic topology with default generator parameters.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpl_topology_synthetic(
    node_count: usize,
    seed: u64,
    out: *mut *mut RplTopology,
) -> RplStatus {
    guard(
        || match topology::generate_synthetic(node_count, seed, &SynthParams::default()) {
            Ok(t) => write_out(out, Box::into_raw(Box::new(RplTopology(t)))),
            Err(e) => fail(RplStatus::InvalidArgument, e.to_string()),
        },
    )
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpl_topology_load_trace(
    path: *const c_char,
    window_ms: u64,
    root: u16,
    out: *mut *mut RplTopology,
) -> RplStatus {
    guard(|| {
        let path = match str_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match topology::load_trace(Path::new(path), window_ms, NodeId(root)) {
            Ok(t) => write_out(out, Box::into_raw(Box::new(RplTopology(t)))),
            Err(e) => from_engine(e.into()),
        }
    })
}

/// # Safety
/// `topo` must be a live handle or NULL; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpl_topology_node_count(
    topo: *const RplTopology,
    out: *mut usize,
) -> RplStatus {
    match topo.as_ref() {
        Some(t) => write_out(out, t.0.node_count()),
        None => fail(RplStatus::NullPointer, "null topology"),
    }
}

/// # Safety
/// `topo` must come from an `rpl_topology_*` constructor or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rpl_topology_free(topo: *mut RplTopology) {
    if !topo.is_null() {
        drop(Box::from_raw(topo));
    }
}

// ---------------------------------------------------------------------------
// simulation and reports
// ---------------------------------------------------------------------------

/// Run the scenario. `topo` may be NULL to use the config's own topology
/// source.
///
/// # Safety
/// `cfg` must be a live handle, `topo` a live handle or NULL, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn rpl_run(
    cfg: *const RplConfig,
    topo: *const RplTopology,
    out: *mut *mut RplReport,
) -> RplStatus {
    guard(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(RplStatus::NullPointer, "null config");
        };
        let result = match topo.as_ref() {
            Some(t) => engine::run_with_topology(&cfg.0, &t.0),
            None => engine::run(&cfg.0),
        };
        match result {
            Ok(r) => write_out(out, Box::into_raw(Box::new(RplReport(r)))),
            Err(e) => {
                let s = engine_status(&e);
                fail(
                    if s == RplStatus::InvalidArgument {
                        s
                    } else {
                        RplStatus::Simulation
                    },
                    e.to_string(),
                )
            }
        }
    })
}

/// # Safety
/// `report` must be a live handle or NULL; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpl_report_packets_sent(
    report: *const RplReport,
    out: *mut u64,
) -> RplStatus {
    match report.as_ref() {
        Some(r) => write_out(out, r.0.packets_sent),
        None => fail(RplStatus::NullPointer, "null report"),
    }
}

/// # Safety
/// `report` must be a live handle or NULL; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpl_report_delivered(
    report: *const RplReport,
    out: *mut u64,
) -> RplStatus {
    match report.as_ref() {
        Some(r) => write_out(out, r.0.delivered),
        None => fail(RplStatus::NullPointer, "null report"),
    }
}

/// # Safety
/// `report` must be a live handle or NULL; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpl_report_losses(
    report: *const RplReport,
    cause: RplLossCause,
    out: *mut u64,
) -> RplStatus {
    let Some(r) = report.as_ref() else {
        return fail(RplStatus::NullPointer, "null report");
    };
    let cause = match cause {
        RplLossCause::MacDrop => LossCause::MacDrop,
        RplLossCause::NoRoute => LossCause::NoRoute,
        RplLossCause::SpuriousDuplicate => LossCause::SpuriousDuplicate,
        RplLossCause::QueueOverflow => LossCause::QueueOverflow,
    };
    write_out(out, r.0.losses.get(&cause).copied().unwrap_or(0))
}

/// # Safety
/// `report` must be a live handle or NULL; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpl_report_loss_rate(
    report: *const RplReport,
    out: *mut f64,
) -> RplStatus {
    match report.as_ref() {
        Some(r) => write_out(out, r.0.loss_rate),
        None => fail(RplStatus::NullPointer, "null report"),
    }
}

/// Serialize the report as JSON into `buf`. Call with `buf == NULL` to
/// learn the size through `needed`.
///
/// # Safety
/// `report` must be a live handle; `buf` valid for `len` bytes or NULL;
/// `needed` valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn rpl_report_json(
    report: *const RplReport,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> RplStatus {
    guard(|| {
        let Some(r) = report.as_ref() else {
            return fail(RplStatus::NullPointer, "null report");
        };
        match r.0.to_json() {
            Ok(json) => match copy_str(&json, buf, len, needed) {
                RplStatus::BufferTooSmall => fail(
                    RplStatus::BufferTooSmall,
                    format!("buffer needs {} bytes", json.len() + 1),
                ),
                s => s,
            },
            Err(e) => from_engine(e),
        }
    })
}

/// Write report files into `out_dir`, creating it if needed.
///
/// # Safety
/// `report` must be a live handle; `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rpl_report_write(
    report: *const RplReport,
    out_dir: *const c_char,
    format: RplReportFormat,
) -> RplStatus {
    guard(|| {
        let Some(r) = report.as_ref() else {
            return fail(RplStatus::NullPointer, "null report");
        };
        let dir = match str_arg(out_dir) {
            Ok(d) => d,
            Err(s) => return s,
        };
        let format = match format {
            RplReportFormat::Json => ReportFormat::Json,
            RplReportFormat::Csv => ReportFormat::Csv,
            RplReportFormat::Both => ReportFormat::Both,
        };
        match engine::emit_report(&r.0, format, Path::new(dir)) {
            Ok(_) => RplStatus::Ok,
            Err(e) => from_engine(e),
        }
    })
}

/// # Safety
/// `report` must come from [`rpl_run`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rpl_report_free(report: *mut RplReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
