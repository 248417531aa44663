//! Measurement-protocol fidelity: trace ordering, counters, CSV schema,
//! determinism, watchdog behavior, and the built-in verifier.

use std::path::PathBuf;
use std::time::Duration;

use halobench::comm::CommContext;
use halobench::harness::{
    self, run_ranks, BenchConfig, CorruptCell, TraceEvent, VerifyOptions, CSV_HEADER,
};
use halobench::transport::Transport;
use halobench::{Error, Strategy};

fn small_config(strategy: Strategy) -> BenchConfig {
    let mut cfg = BenchConfig::desk_default(strategy);
    cfg.global_extents = [8, 8, 8];
    cfg.iterations = 5;
    cfg.runs = 2;
    cfg.n_workers = 2;
    cfg
}

fn temp_path(stem: &str) -> PathBuf {
    let mut p = std::env::temp_dir();
    p.push(format!("{stem}-{}.csv", std::process::id()));
    let _ = std::fs::remove_file(&p);
    p
}

#[test]
fn zero_iterations_produce_a_well_formed_report() {
    let mut cfg = small_config(Strategy::Nonblocking);
    cfg.iterations = 0;
    let report = harness::run_benchmark(&cfg).unwrap();
    assert_eq!(report.iterations, 0);
    assert_eq!(report.runs.len(), 2);
    for run in &report.runs {
        assert_eq!(run.seconds_per_exchange, 0.0);
        assert_eq!(run.counters.start_calls, 0);
    }
}

#[test]
fn same_seed_reproduces_the_same_final_state() {
    for strategy in Strategy::ALL {
        let cfg = small_config(strategy);
        let a = harness::run_benchmark(&cfg).unwrap();
        let b = harness::run_benchmark(&cfg).unwrap();
        assert_eq!(a.mesh_checksum, b.mesh_checksum, "{strategy}");
    }
}

#[test]
fn per_exchange_time_is_total_over_iterations() {
    let report = harness::run_benchmark(&small_config(Strategy::Persistent)).unwrap();
    for run in &report.runs {
        assert_eq!(
            run.seconds_per_exchange,
            run.seconds_total / report.iterations as f64
        );
    }
}

#[test]
fn persistent_setup_happens_once_per_run_outside_the_timer() {
    let cfg = small_config(Strategy::Persistent);
    let report = harness::run_benchmark(&cfg).unwrap();
    // 26 neighbors on a 2x2x2 periodic grid: 26 sends + 26 receives.
    let n_reqs: u64 = 52;
    for run in &report.runs {
        assert_eq!(run.counters.init_calls, n_reqs);
        assert_eq!(run.counters.request_setups, n_reqs);
        assert_eq!(run.counters.start_calls, cfg.iterations as u64 * n_reqs);
        // Nothing was initialized inside the timed region.
        assert_eq!(run.timed_counters.init_calls, 0);
        assert_eq!(run.timed_counters.request_setups, 0);
    }
}

#[test]
fn partitioned_counts_one_pready_per_part_per_message() {
    let cfg = small_config(Strategy::Partitioned);
    let report = harness::run_benchmark(&cfg).unwrap();
    let n_send = 26;
    for run in &report.runs {
        assert_eq!(run.counters.init_calls, 52);
        assert_eq!(
            run.counters.pready_calls,
            (cfg.iterations * n_send * cfg.n_workers) as u64
        );
        assert_eq!(run.timed_counters.init_calls, 0);
    }
}

#[test]
fn nonblocking_rebuilds_requests_every_iteration() {
    let cfg = small_config(Strategy::Nonblocking);
    let report = harness::run_benchmark(&cfg).unwrap();
    for run in &report.runs {
        assert_eq!(run.counters.init_calls, 0);
        assert_eq!(run.counters.request_setups, (cfg.iterations * 52) as u64);
        assert_eq!(run.timed_counters.request_setups, (cfg.iterations * 52) as u64);
    }
}

#[test]
fn trace_shows_init_barrier_timer_exchanges_destroy_in_order() {
    let mut cfg = small_config(Strategy::Persistent);
    cfg.trace = true;
    let report = harness::run_benchmark(&cfg).unwrap();
    for rank in 0..cfg.ranks {
        let events: Vec<&TraceEvent> = report
            .trace
            .iter()
            .filter(|e| {
                matches!(
                    e,
                    TraceEvent::Init { rank: r, .. }
                        | TraceEvent::Barrier { rank: r, .. }
                        | TraceEvent::TimerStart { rank: r, .. }
                        | TraceEvent::Exchange { rank: r, .. }
                        | TraceEvent::TimerStop { rank: r, .. }
                        | TraceEvent::Destroy { rank: r, .. }
                    if *r == rank
                )
            })
            .collect();
        let mut expected = Vec::new();
        for run in 0..cfg.runs {
            expected.push(TraceEvent::Init { rank, run });
            expected.push(TraceEvent::Barrier { rank, run });
            expected.push(TraceEvent::TimerStart { rank, run });
            for iteration in 0..cfg.iterations {
                expected.push(TraceEvent::Exchange {
                    rank,
                    run,
                    iteration,
                });
            }
            expected.push(TraceEvent::TimerStop { rank, run });
            expected.push(TraceEvent::Destroy { rank, run });
        }
        let got: Vec<TraceEvent> = events.into_iter().copied().collect();
        assert_eq!(got, expected, "rank {rank} event order");
    }
}

#[test]
fn csv_header_and_rows_follow_the_schema() {
    let path = temp_path("halobench-schema");
    let cfg = small_config(Strategy::Partitioned);
    let report = harness::run_benchmark(&cfg).unwrap();
    harness::emit_csv(&report, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 1 + cfg.runs);
    for (i, line) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 16);
        assert_eq!(fields[0], "partitioned");
        assert_eq!(fields[1], "8");
        assert_eq!(fields[2], "2x2x2");
        assert_eq!(fields[3], "2"); // workers
        assert_eq!(fields[4], "2"); // parts follow workers for partitioned
        assert_eq!(fields[5], "3"); // vars
        assert_eq!(fields[6], "64"); // 4^3 cells per rank
        assert_eq!(fields[7], "48"); // 16-cell face times 3 vars
        assert_eq!(fields[8], "5"); // iterations
        assert_eq!(fields[9], (i + 1).to_string()); // 1-based run index
        let total: f64 = fields[10].parse().unwrap();
        let per: f64 = fields[11].parse().unwrap();
        // Both columns are rounded to nine decimals independently.
        assert!((per - total / 5.0).abs() < 2e-9);
        let _: u64 = fields[12].parse().unwrap();
        let _: u64 = fields[13].parse().unwrap();
        let _: u64 = fields[14].parse().unwrap();
        let _: u64 = fields[15].parse().unwrap();
    }
    let _ = std::fs::remove_file(&path);
}

#[test]
fn csv_append_writes_the_header_once() {
    let path = temp_path("halobench-append");
    let report = harness::run_benchmark(&small_config(Strategy::Nonblocking)).unwrap();
    harness::emit_csv(&report, &path).unwrap();
    harness::emit_csv(&report, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let headers = text
        .lines()
        .filter(|l| l.starts_with("strategy,"))
        .count();
    assert_eq!(headers, 1);
    assert_eq!(text.lines().count(), 1 + 2 * report.runs.len());
    let _ = std::fs::remove_file(&path);
}

#[test]
fn watchdog_converts_a_hang_into_a_diagnostic() {
    let transport = Transport::new(2);
    let err = run_ranks(transport, Duration::from_millis(300), |rank, ep| {
        if rank == 0 {
            // A receive nobody will ever match.
            let handle = ep.post_recv(1, 4242, 8)?;
            handle.wait()?;
        }
        Ok(())
    })
    .unwrap_err();
    match err {
        Error::WatchdogTimeout { seconds, details } => {
            assert!(seconds <= 0.31);
            assert!(details.contains("unsatisfied recv"), "details: {details}");
            assert!(details.contains("tag=4242"), "details: {details}");
        }
        other => panic!("expected watchdog timeout, got {other:?}"),
    }
}

#[test]
fn rank_panics_are_reported_not_propagated() {
    let transport = Transport::new(2);
    let err = run_ranks(transport, Duration::from_secs(5), |rank, _ep| {
        if rank == 1 {
            panic!("deliberate failure");
        }
        Ok(())
    })
    .unwrap_err();
    match err {
        Error::RankPanic(msg) => {
            assert!(msg.contains("rank 1"), "{msg}");
            assert!(msg.contains("deliberate failure"), "{msg}");
        }
        other => panic!("expected rank panic, got {other:?}"),
    }
}

#[test]
fn non_divisible_extents_are_a_config_error() {
    let mut cfg = small_config(Strategy::Nonblocking);
    cfg.global_extents = [9, 8, 8]; // 9 does not divide over 2 ranks on axis 0
    match harness::run_benchmark(&cfg) {
        Err(Error::Config(msg)) => assert!(msg.contains("not divisible"), "{msg}"),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn strategy_parsing_accepts_exactly_the_three_names() {
    assert_eq!("nonblocking".parse::<Strategy>().unwrap(), Strategy::Nonblocking);
    assert_eq!("persistent".parse::<Strategy>().unwrap(), Strategy::Persistent);
    assert_eq!("partitioned".parse::<Strategy>().unwrap(), Strategy::Partitioned);
    assert!("blocking".parse::<Strategy>().is_err());
}

#[test]
fn verification_passes_at_desk_scale_reductions() {
    let mut cfg = small_config(Strategy::Nonblocking);
    cfg.n_workers = 4;
    let report = harness::run_verification(&cfg).unwrap();
    assert!(report.pass(), "{}", report.summary());
    // Three oracle checks, two differentials, three padding scans.
    assert_eq!(report.checks.len(), 8);
}

#[test]
fn verifier_catches_an_injected_corruption_and_names_the_cell() {
    let cfg = small_config(Strategy::Nonblocking);
    let corrupt = CorruptCell {
        rank: 3,
        var: 1,
        cell: [2, 2, 2],
    };
    let report = harness::run_verification_with(
        &cfg,
        VerifyOptions {
            corrupt: Some(corrupt),
        },
    )
    .unwrap();
    assert!(!report.pass());
    let failing: Vec<_> = report.checks.iter().filter(|c| !c.pass).collect();
    assert!(!failing.is_empty());
    let oracle_fail = failing
        .iter()
        .find(|c| c.name == "ghost-cells-match-sequential-oracle")
        .expect("oracle check should fail");
    assert!(oracle_fail.detail.contains("rank 3"), "{}", oracle_fail.detail);
    assert!(oracle_fail.detail.contains("var 1"), "{}", oracle_fail.detail);
    assert!(
        oracle_fail.detail.contains("[2, 2, 2]"),
        "{}",
        oracle_fail.detail
    );
}

#[test]
fn single_rank_configurations_verify_too() {
    let mut cfg = small_config(Strategy::Nonblocking);
    cfg.ranks = 1;
    cfg.global_extents = [4, 4, 4];
    cfg.n_workers = 1;
    let report = harness::run_verification(&cfg).unwrap();
    assert!(report.pass(), "{}", report.summary());
}

// The harness drives the transport through a CommContext internally; keep a
// direct smoke check that the barrier generation advances once per call.
#[test]
fn barrier_generation_advances_per_benchmark_run() {
    let transport = Transport::new(4);
    let before = transport.barrier_generation();
    let results = run_ranks(transport.clone(), Duration::from_secs(5), |_, ep| {
        let ctx = CommContext::new(ep);
        ctx.endpoint.barrier();
        ctx.endpoint.barrier();
        Ok(())
    })
    .unwrap();
    assert_eq!(results.len(), 4);
    assert_eq!(transport.barrier_generation(), before + 2);
}
