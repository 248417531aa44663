//! Request lifecycle and state-machine coverage for the three strategies,
//! driven directly against the comm layer across in-process ranks.

use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use halobench::comm::{self, CommContext};
use halobench::meshdata::PackBuffer;
use halobench::transport::Transport;
use halobench::Error;

fn two_ranks() -> (CommContext, CommContext) {
    let t = Transport::new(2);
    (
        CommContext::new(t.endpoint(0)),
        CommContext::new(t.endpoint(1)),
    )
}

fn buf_with(values: &[f64], n_parts: usize) -> Arc<PackBuffer> {
    let b = Arc::new(PackBuffer::new(values.len(), n_parts));
    b.fill_logical(values);
    b
}

#[test]
fn isend_irecv_pair_transfers_buffers() {
    let (c0, c1) = two_ranks();
    let payload: Vec<f64> = (0..12).map(|i| i as f64).collect();
    let send = buf_with(&payload, 1);
    let recv = Arc::new(PackBuffer::new(12, 1));
    let j = thread::spawn(move || {
        let mut reqs = vec![comm::irecv(&c1, 0, 7, &recv).unwrap()];
        comm::wait_all(&c1, &mut reqs).unwrap();
        recv.read_logical()
    });
    let mut reqs = vec![comm::isend(&c0, 1, 7, &send).unwrap()];
    comm::wait_all(&c0, &mut reqs).unwrap();
    assert_eq!(j.join().unwrap(), payload);
}

#[test]
fn nonblocking_setups_scale_with_iterations() {
    let (c0, c1) = two_ranks();
    let k = 25;
    let n = 4; // two sends + two recvs per iteration on rank 0
    for _ in 0..k {
        let sends = [buf_with(&[1.0], 1), buf_with(&[2.0], 1)];
        let recvs = [Arc::new(PackBuffer::new(1, 1)), Arc::new(PackBuffer::new(1, 1))];
        let mut r0 = vec![
            comm::isend(&c0, 1, 0, &sends[0]).unwrap(),
            comm::isend(&c0, 1, 1, &sends[1]).unwrap(),
            comm::irecv(&c0, 1, 2, &recvs[0]).unwrap(),
            comm::irecv(&c0, 1, 3, &recvs[1]).unwrap(),
        ];
        let mut r1 = vec![
            comm::isend(&c1, 0, 2, &sends[0]).unwrap(),
            comm::isend(&c1, 0, 3, &sends[1]).unwrap(),
            comm::irecv(&c1, 0, 0, &recvs[0]).unwrap(),
            comm::irecv(&c1, 0, 1, &recvs[1]).unwrap(),
        ];
        comm::wait_all(&c1, &mut r1).unwrap();
        comm::wait_all(&c0, &mut r0).unwrap();
    }
    assert_eq!(c0.counters.snapshot().request_setups, k * n);
}

#[test]
fn zero_length_message_completes_empty() {
    let (c0, c1) = two_ranks();
    let send = Arc::new(PackBuffer::new(0, 1));
    let recv = Arc::new(PackBuffer::new(0, 1));
    let mut r0 = vec![comm::isend(&c0, 1, 0, &send).unwrap()];
    let mut r1 = vec![comm::irecv(&c1, 0, 0, &recv).unwrap()];
    comm::wait_all(&c0, &mut r0).unwrap();
    comm::wait_all(&c1, &mut r1).unwrap();
}

#[test]
fn persistent_amortizes_setup_over_iterations() {
    let k = 1000u64;
    let (c0, c1) = two_ranks();
    let j = thread::spawn(move || {
        let recv = Arc::new(PackBuffer::new(2, 1));
        let mut reqs = vec![comm::recv_init(&c1, 0, 5, &recv).unwrap()];
        for expect in 0..k {
            comm::start_all(&c1, &mut reqs).unwrap();
            comm::wait_all_persistent(&c1, &mut reqs).unwrap();
            // Generations arrive in order, stamped by the sender.
            assert_eq!(recv.read_logical(), vec![expect as f64, -(expect as f64)]);
        }
        for r in reqs.iter_mut() {
            comm::request_free(r).unwrap();
        }
    });
    let send = Arc::new(PackBuffer::new(2, 1));
    let mut reqs = vec![comm::send_init(&c0, 1, 5, &send).unwrap()];
    for gen in 0..k {
        send.fill_logical(&[gen as f64, -(gen as f64)]);
        comm::start_all(&c0, &mut reqs).unwrap();
        comm::wait_all_persistent(&c0, &mut reqs).unwrap();
    }
    for r in reqs.iter_mut() {
        comm::request_free(r).unwrap();
    }
    j.join().unwrap();
    let snap = c0.counters.snapshot();
    assert_eq!(snap.request_setups, 1);
    assert_eq!(snap.init_calls, 1);
    assert_eq!(snap.start_calls, k);
}

#[test]
fn persistent_init_then_free_without_start_is_legal() {
    let (c0, _c1) = two_ranks();
    let buf = buf_with(&[0.0; 4], 1);
    let mut req = comm::send_init(&c0, 1, 0, &buf).unwrap();
    comm::request_free(&mut req).unwrap();
}

#[test]
fn persistent_double_start_rejected() {
    let (c0, _c1) = two_ranks();
    let buf = buf_with(&[0.0; 4], 1);
    let mut reqs = vec![comm::send_init(&c0, 1, 0, &buf).unwrap()];
    comm::start_all(&c0, &mut reqs).unwrap();
    assert!(matches!(
        comm::start_all(&c0, &mut reqs),
        Err(Error::RequestState { op: "start", .. })
    ));
}

#[test]
fn persistent_free_while_started_and_double_free_rejected() {
    let (c0, c1) = two_ranks();
    let buf = buf_with(&[0.0; 4], 1);
    let mut reqs = vec![comm::send_init(&c0, 1, 0, &buf).unwrap()];
    comm::start_all(&c0, &mut reqs).unwrap();
    assert!(matches!(
        comm::request_free(&mut reqs[0]),
        Err(Error::RequestState { op: "free", state: "started" })
    ));
    // Drain the message so the wait completes.
    let recv = Arc::new(PackBuffer::new(4, 1));
    let mut r1 = vec![comm::irecv(&c1, 0, 0, &recv).unwrap()];
    comm::wait_all(&c1, &mut r1).unwrap();
    comm::wait_all_persistent(&c0, &mut reqs).unwrap();
    comm::request_free(&mut reqs[0]).unwrap();
    assert!(matches!(
        comm::request_free(&mut reqs[0]),
        Err(Error::RequestState { op: "free", state: "freed" })
    ));
}

#[test]
fn partitioned_single_part_matches_persistent_behavior() {
    let (c0, c1) = two_ranks();
    let payload = [3.0, 1.0, 4.0, 1.0, 5.0];
    let send = buf_with(&payload, 1);
    let recv = Arc::new(PackBuffer::new(5, 1));
    let j = thread::spawn(move || {
        let reqs = vec![comm::precv_init(&c1, 0, 2, &recv, 1).unwrap()];
        comm::pstart_all(&c1, &reqs).unwrap();
        comm::pwait_all(&c1, &reqs).unwrap();
        comm::prequest_free(&reqs[0]).unwrap();
        recv.read_logical()
    });
    let reqs = vec![comm::psend_init(&c0, 1, 2, &send, 1).unwrap()];
    comm::pstart_all(&c0, &reqs).unwrap();
    comm::pready(&c0, &reqs[0], 0).unwrap();
    comm::pwait_all(&c0, &reqs).unwrap();
    comm::prequest_free(&reqs[0]).unwrap();
    assert_eq!(j.join().unwrap(), payload);
}

#[test]
fn partition_layout_uses_ceil_division() {
    let buf = PackBuffer::new(10, 4);
    assert_eq!(buf.part_size(), 3);
    assert_eq!(buf.padded_len(), 12);
}

#[test]
fn mismatched_partition_counts_fail_at_first_transfer() {
    let (c0, c1) = two_ranks();
    let send = buf_with(&[1.0; 8], 4);
    let recv = Arc::new(PackBuffer::new(8, 2));
    let sender = thread::spawn(move || {
        let reqs = vec![comm::psend_init(&c0, 1, 0, &send, 4).unwrap()];
        comm::pstart_all(&c0, &reqs).unwrap();
        for p in 0..4 {
            comm::pready(&c0, &reqs[0], p).unwrap();
        }
        comm::pwait_all(&c0, &reqs).unwrap();
    });
    let reqs = vec![comm::precv_init(&c1, 0, 0, &recv, 2).unwrap()];
    comm::pstart_all(&c1, &reqs).unwrap();
    assert!(matches!(
        comm::pwait_all(&c1, &reqs),
        Err(Error::PartitionMismatch { expected: 4, got: 2 })
    ));
    sender.join().unwrap();
}

#[test]
fn wait_blocks_until_final_pready() {
    let (c0, c1) = two_ranks();
    let send = buf_with(&[7.0; 9], 3);
    let recv = Arc::new(PackBuffer::new(9, 3));
    let send_reqs = Arc::new(vec![comm::psend_init(&c0, 1, 0, &send, 3).unwrap()]);
    let recv_reqs = vec![comm::precv_init(&c1, 0, 0, &recv, 3).unwrap()];
    comm::pstart_all(&c0, &send_reqs).unwrap();
    comm::pstart_all(&c1, &recv_reqs).unwrap();

    let (tx, rx) = mpsc::channel();
    let waiter_reqs = Arc::clone(&send_reqs);
    let c0 = Arc::new(c0);
    let waiter_ctx = Arc::clone(&c0);
    let waiter = thread::spawn(move || {
        comm::pwait_all(&waiter_ctx, &waiter_reqs).unwrap();
        tx.send(()).unwrap();
    });

    // No pready yet: the wait must not complete.
    assert!(rx.recv_timeout(Duration::from_millis(100)).is_err());
    comm::pready(&c0, &send_reqs[0], 0).unwrap();
    comm::pready(&c0, &send_reqs[0], 2).unwrap();
    assert!(rx.recv_timeout(Duration::from_millis(100)).is_err());
    comm::pready(&c0, &send_reqs[0], 1).unwrap();
    rx.recv_timeout(Duration::from_secs(5)).unwrap();
    waiter.join().unwrap();
    comm::pwait_all(&c1, &recv_reqs).unwrap();
    assert_eq!(recv.read_logical(), vec![7.0; 9]);
}

#[test]
fn parrived_staged_and_monotone() {
    let (c0, c1) = two_ranks();
    let send = buf_with(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3);
    let recv = Arc::new(PackBuffer::new(6, 3));
    let send_reqs = vec![comm::psend_init(&c0, 1, 0, &send, 3).unwrap()];
    let recv_reqs = vec![comm::precv_init(&c1, 0, 0, &recv, 3).unwrap()];
    comm::pstart_all(&c0, &send_reqs).unwrap();
    comm::pstart_all(&c1, &recv_reqs).unwrap();

    for p in 0..3 {
        assert!(!comm::parrived(&recv_reqs[0], p).unwrap());
    }
    comm::pready(&c0, &send_reqs[0], 1).unwrap();
    assert!(comm::parrived(&recv_reqs[0], 1).unwrap());
    assert!(!comm::parrived(&recv_reqs[0], 0).unwrap());
    assert!(!comm::parrived(&recv_reqs[0], 2).unwrap());
    // Monotone: stays true on re-query.
    assert!(comm::parrived(&recv_reqs[0], 1).unwrap());

    comm::pready(&c0, &send_reqs[0], 0).unwrap();
    comm::pready(&c0, &send_reqs[0], 2).unwrap();
    comm::pwait_all(&c0, &send_reqs).unwrap();
    comm::pwait_all(&c1, &recv_reqs).unwrap();
    for p in 0..3 {
        assert!(comm::parrived(&recv_reqs[0], p).unwrap());
    }
    assert_eq!(recv.read_logical(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn pready_permutations_yield_identical_buffers() {
    let payload: Vec<f64> = (0..10).map(|i| i as f64 * 1.5).collect();
    let orders: [[usize; 4]; 4] = [[0, 1, 2, 3], [3, 2, 1, 0], [2, 0, 3, 1], [1, 3, 0, 2]];
    let mut results = Vec::new();
    for order in orders {
        let (c0, c1) = two_ranks();
        let send = buf_with(&payload, 4);
        let recv = Arc::new(PackBuffer::new(10, 4));
        let send_reqs = vec![comm::psend_init(&c0, 1, 0, &send, 4).unwrap()];
        let recv_reqs = vec![comm::precv_init(&c1, 0, 0, &recv, 4).unwrap()];
        comm::pstart_all(&c0, &send_reqs).unwrap();
        comm::pstart_all(&c1, &recv_reqs).unwrap();
        for p in order {
            comm::pready(&c0, &send_reqs[0], p).unwrap();
        }
        comm::pwait_all(&c0, &send_reqs).unwrap();
        comm::pwait_all(&c1, &recv_reqs).unwrap();
        results.push(recv.read_logical());
    }
    for r in &results {
        assert_eq!(r, &payload);
    }
}

#[test]
fn restart_after_wait_transfers_second_generation() {
    let (c0, c1) = two_ranks();
    let send = buf_with(&[0.0; 6], 2);
    let recv = Arc::new(PackBuffer::new(6, 2));
    let send_reqs = vec![comm::psend_init(&c0, 1, 0, &send, 2).unwrap()];
    let recv_reqs = vec![comm::precv_init(&c1, 0, 0, &recv, 2).unwrap()];
    for gen in 0..5 {
        let stamped: Vec<f64> = (0..6).map(|i| (gen * 10 + i) as f64).collect();
        send.fill_logical(&stamped);
        comm::pstart_all(&c0, &send_reqs).unwrap();
        comm::pstart_all(&c1, &recv_reqs).unwrap();
        comm::pready(&c0, &send_reqs[0], 1).unwrap();
        comm::pready(&c0, &send_reqs[0], 0).unwrap();
        comm::pwait_all(&c0, &send_reqs).unwrap();
        comm::pwait_all(&c1, &recv_reqs).unwrap();
        assert_eq!(recv.read_logical(), stamped);
    }
}

#[test]
fn partitioned_state_errors_are_typed() {
    let (c0, c1) = two_ranks();
    let send = buf_with(&[0.0; 4], 2);
    let recv = Arc::new(PackBuffer::new(4, 2));
    let send_reqs = vec![comm::psend_init(&c0, 1, 0, &send, 2).unwrap()];
    let recv_reqs = vec![comm::precv_init(&c1, 0, 0, &recv, 2).unwrap()];

    // pready before start.
    assert!(matches!(
        comm::pready(&c0, &send_reqs[0], 0),
        Err(Error::RequestState { op: "pready", state: "initialized" })
    ));
    // pready on a recv-side request.
    assert!(matches!(
        comm::pready(&c1, &recv_reqs[0], 0),
        Err(Error::WrongDirection { op: "pready", dir: "recv" })
    ));
    // parrived on a send-side request.
    assert!(matches!(
        comm::parrived(&send_reqs[0], 0),
        Err(Error::WrongDirection { op: "parrived", dir: "send" })
    ));

    comm::pstart_all(&c0, &send_reqs).unwrap();
    comm::pstart_all(&c1, &recv_reqs).unwrap();
    comm::pready(&c0, &send_reqs[0], 0).unwrap();
    // Duplicate pready in one generation.
    assert!(matches!(
        comm::pready(&c0, &send_reqs[0], 0),
        Err(Error::DuplicatePready { part: 0 })
    ));
    // Free while started.
    assert!(matches!(
        comm::prequest_free(&send_reqs[0]),
        Err(Error::RequestState { op: "free", state: "started" })
    ));

    comm::pready(&c0, &send_reqs[0], 1).unwrap();
    comm::pwait_all(&c0, &send_reqs).unwrap();
    comm::pwait_all(&c1, &recv_reqs).unwrap();
    comm::prequest_free(&send_reqs[0]).unwrap();
    assert!(matches!(
        comm::prequest_free(&send_reqs[0]),
        Err(Error::RequestState { op: "free", state: "freed" })
    ));
}

#[test]
fn strategy_equivalence_on_identical_buffers() {
    let payload: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();

    // Non-blocking.
    let (c0, c1) = two_ranks();
    let send = buf_with(&payload, 1);
    let recv_nb = Arc::new(PackBuffer::new(10, 1));
    let mut r0 = vec![comm::isend(&c0, 1, 0, &send).unwrap()];
    let mut r1 = vec![comm::irecv(&c1, 0, 0, &recv_nb).unwrap()];
    comm::wait_all(&c0, &mut r0).unwrap();
    comm::wait_all(&c1, &mut r1).unwrap();

    // Persistent.
    let (c0, c1) = two_ranks();
    let send = buf_with(&payload, 1);
    let recv_p = Arc::new(PackBuffer::new(10, 1));
    let mut s = vec![comm::send_init(&c0, 1, 0, &send).unwrap()];
    let mut r = vec![comm::recv_init(&c1, 0, 0, &recv_p).unwrap()];
    comm::start_all(&c0, &mut s).unwrap();
    comm::start_all(&c1, &mut r).unwrap();
    comm::wait_all_persistent(&c0, &mut s).unwrap();
    comm::wait_all_persistent(&c1, &mut r).unwrap();

    // Partitioned, with padding (10 elements over 4 parts).
    let (c0, c1) = two_ranks();
    let send = buf_with(&payload, 4);
    let recv_part = Arc::new(PackBuffer::new(10, 4));
    let sr = vec![comm::psend_init(&c0, 1, 0, &send, 4).unwrap()];
    let rr = vec![comm::precv_init(&c1, 0, 0, &recv_part, 4).unwrap()];
    comm::pstart_all(&c0, &sr).unwrap();
    comm::pstart_all(&c1, &rr).unwrap();
    for p in [2, 0, 3, 1] {
        comm::pready(&c0, &sr[0], p).unwrap();
    }
    comm::pwait_all(&c0, &sr).unwrap();
    comm::pwait_all(&c1, &rr).unwrap();

    assert_eq!(recv_nb.read_logical(), payload);
    assert_eq!(recv_p.read_logical(), payload);
    assert_eq!(recv_part.read_logical(), payload);
}
