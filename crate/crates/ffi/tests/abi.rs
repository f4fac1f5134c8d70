use std::ffi::{c_char, CStr, CString};
use std::ptr;

use rplsim_ffi::*;

fn last_error() -> String {
    let mut needed = 0usize;
    unsafe { rpl_last_error(ptr::null_mut(), 0, &mut needed) };
    let mut buf = vec![0 as c_char; needed];
    let s = unsafe { rpl_last_error(buf.as_mut_ptr(), buf.len(), ptr::null_mut()) };
    assert_eq!(s, RplStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn path_delivery_matches_closed_form() {
    let mut out = 0.0;
    let prrs = [0.5, 0.5];
    assert_eq!(
        unsafe { rpl_path_delivery(prrs.as_ptr(), 2, 1, &mut out) },
        RplStatus::Ok
    );
    assert_eq!(out, 0.5625);
    assert_eq!(
        unsafe { rpl_path_delivery(ptr::null(), 0, 8, &mut out) },
        RplStatus::Ok
    );
    assert_eq!(out, 1.0);
}

#[test]
fn bad_arguments_set_status_and_message() {
    let mut out = 0.0;
    let prrs = [1.5];
    assert_eq!(
        unsafe { rpl_path_delivery(prrs.as_ptr(), 1, 0, &mut out) },
        RplStatus::InvalidArgument
    );
    assert!(last_error().contains("prr"));
    assert_eq!(
        unsafe { rpl_path_delivery(ptr::null(), 3, 0, &mut out) },
        RplStatus::NullPointer
    );
    assert_eq!(
        unsafe { rpl_rule_of_three(0, 0, &mut out) },
        RplStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { rpl_rank(RplMetricKind::Lr, 2.5, 0.0, 0.5, &mut out) },
        RplStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { rpl_config_set_seed(ptr::null_mut(), 1) },
        RplStatus::NullPointer
    );
}

#[test]
fn ranks_per_metric() {
    let mut out = 0.0;
    unsafe {
        assert_eq!(
            rpl_root_rank(RplMetricKind::Etx, 0.0, &mut out),
            RplStatus::Ok
        );
        assert_eq!(out, 1.0);
        rpl_rank(RplMetricKind::Etx, 0.0, 1.0, 0.5, &mut out);
        assert!((out - 3.0).abs() < 1e-12);
        rpl_rank(RplMetricKind::EtxN, 2.0, 1.0, 0.5, &mut out);
        assert!((out - 5.0).abs() < 1e-12);
        assert_eq!(
            rpl_root_rank(RplMetricKind::Lr, 1.0, &mut out),
            RplStatus::Ok
        );
        assert_eq!(out, 0.0);
        rpl_rank(RplMetricKind::Lr, 1.0, 0.0, 0.5, &mut out);
        assert!((out - 0.25).abs() < 1e-12);
    }
}

#[test]
fn rule_of_three_bound() {
    let mut out = 0.0;
    unsafe { rpl_rule_of_three(500_000, 0, &mut out) };
    assert!((out - 6e-6).abs() < 1e-18);
    unsafe { rpl_rule_of_three(1000, 5, &mut out) };
    assert_eq!(out, 0.005);
}

#[test]
fn header_sizes() {
    let hops = [1u16, 2, 3];
    let mut out = 0usize;
    let s = unsafe { rpl_header_size_homogeneous(4, 0, hops.as_ptr(), 3, true, &mut out) };
    assert_eq!(s, RplStatus::Ok);
    assert_eq!(out, 12);

    // addresses sharing nothing with each other or the root
    let mut addrs = Vec::new();
    for i in 0..4u8 {
        addrs.extend_from_slice(&[i + 1, 0xA0 + i, 2, 3, 4, 5, 6, i]);
    }
    let s = unsafe { rpl_header_size(addrs.as_ptr(), 4, 0, hops.as_ptr(), 3, true, &mut out) };
    assert_eq!(s, RplStatus::Ok);
    assert_eq!(out, 6 + 3 * 8);
    unsafe { rpl_header_size(addrs.as_ptr(), 4, 0, hops.as_ptr(), 3, false, &mut out) };
    assert_eq!(out, 6 + 3 * 16);

    let bad = [9u16];
    let s = unsafe { rpl_header_size_homogeneous(4, 0, bad.as_ptr(), 1, true, &mut out) };
    assert_eq!(s, RplStatus::InvalidArgument);
}

#[test]
fn simulate_through_handles() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(rpl_config_default(&mut cfg), RplStatus::Ok);
        rpl_config_set_seed(cfg, 3);
        rpl_config_set_duration(cfg, 200, 60);

        let mut topo = ptr::null_mut();
        assert_eq!(rpl_topology_synthetic(10, 3, &mut topo), RplStatus::Ok);
        let mut n = 0usize;
        rpl_topology_node_count(topo, &mut n);
        assert_eq!(n, 10);

        let mut report = ptr::null_mut();
        assert_eq!(rpl_run(cfg, topo, &mut report), RplStatus::Ok);
        let (mut sent, mut delivered) = (0u64, 0u64);
        rpl_report_packets_sent(report, &mut sent);
        rpl_report_delivered(report, &mut delivered);
        let mut lost = 0;
        for cause in [
            RplLossCause::MacDrop,
            RplLossCause::NoRoute,
            RplLossCause::SpuriousDuplicate,
            RplLossCause::QueueOverflow,
        ] {
            let mut k = 0;
            assert_eq!(rpl_report_losses(report, cause, &mut k), RplStatus::Ok);
            lost += k;
        }
        assert!(sent > 0);
        assert_eq!(sent, delivered + lost);

        let mut needed = 0usize;
        assert_eq!(
            rpl_report_json(report, ptr::null_mut(), 0, &mut needed),
            RplStatus::BufferTooSmall
        );
        let mut buf = vec![0 as c_char; needed];
        assert_eq!(
            rpl_report_json(report, buf.as_mut_ptr(), buf.len(), ptr::null_mut()),
            RplStatus::Ok
        );
        let json: serde_json::Value =
            serde_json::from_str(CStr::from_ptr(buf.as_ptr()).to_str().unwrap()).unwrap();
        assert_eq!(json["packets_sent"].as_u64().unwrap(), sent);

        let dir = tempfile::tempdir().unwrap();
        let d = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(
            rpl_report_write(report, d.as_ptr(), RplReportFormat::Json),
            RplStatus::Ok
        );
        assert!(dir.path().join("report.json").exists());

        rpl_report_free(report);
        rpl_topology_free(topo);
        rpl_config_free(cfg);
        rpl_report_free(ptr::null_mut());
    }
}

#[test]
fn config_parse_errors_are_reported() {
    unsafe {
        let mut cfg = ptr::null_mut();
        let text = CString::new("metric = lr\nduration_s = 120\nwarmup_s = 30\n").unwrap();
        assert_eq!(rpl_config_parse(text.as_ptr(), &mut cfg), RplStatus::Ok);
        rpl_config_free(cfg);

        let text = CString::new("no_such_key = 1\n").unwrap();
        let s = rpl_config_parse(text.as_ptr(), &mut cfg);
        assert_eq!(s, RplStatus::Parse);
        assert!(!last_error().is_empty());

        let path = CString::new("/nonexistent/scenario.cfg").unwrap();
        assert_eq!(rpl_config_from_file(path.as_ptr(), &mut cfg), RplStatus::Io);
        assert_eq!(
            rpl_config_parse(ptr::null(), &mut cfg),
            RplStatus::NullPointer
        );
    }
}

#[test]
fn trace_load_failure_is_an_error() {
    unsafe {
        let mut topo = ptr::null_mut();
        let path = CString::new("/nonexistent/trace.txt").unwrap();
        let s = rpl_topology_load_trace(path.as_ptr(), 60_000, 0, &mut topo);
        assert_ne!(s, RplStatus::Ok);
        assert!(topo.is_null());
    }
}

#[test]
fn header_lists_every_export() {
    let header = include_str!("../include/rplsim.h");
    for f in [
        "rpl_last_error",
        "rpl_path_delivery",
        "rpl_rank",
        "rpl_root_rank",
        "rpl_rule_of_three",
        "rpl_header_size",
        "rpl_header_size_homogeneous",
        "rpl_config_default",
        "rpl_config_parse",
        "rpl_config_from_file",
        "rpl_config_set_seed",
        "rpl_config_set_duration",
        "rpl_config_free",
        "rpl_topology_synthetic",
        "rpl_topology_load_trace",
        "rpl_topology_node_count",
        "rpl_topology_free",
        "rpl_run",
        "rpl_report_packets_sent",
        "rpl_report_delivered",
        "rpl_report_losses",
        "rpl_report_loss_rate",
        "rpl_report_json",
        "rpl_report_write",
        "rpl_report_free",
    ] {
        assert!(header.contains(&format!(" {f}(")), "{f} missing");
    }
    assert!(header.contains("typedef struct RplReport RplReport;"));
}
