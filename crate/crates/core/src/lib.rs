//! Halo-exchange benchmarking over an in-process message-passing transport.
//!
//! Three communication strategies fill ghost cells of a decomposed
//! structured mesh each iteration:
//!
//! - **non-blocking**: fresh send/receive requests every exchange,
//! - **persistent**: requests built once, then started and waited per
//!   exchange,
//! - **partitioned**: persistent messages split into equal partitions, each
//!   marked ready by the worker that packed it.
//!
//! Ranks are threads inside one process; the [`transport`] module provides
//! tagged, source-matched, FIFO-ordered delivery plus a group barrier. The
//! [`harness`] module reproduces the measurement protocol: a barrier before
//! every timed region, batches of exchanges timed together, repeated runs,
//! and CSV output.

pub mod comm;
pub mod error;
pub mod exchange;
pub mod grid;
pub mod harness;
pub mod meshdata;
pub mod oracle;
pub mod transport;

pub use comm::{CommContext, CommCounters, CounterSnapshot};
pub use error::{Error, Result};
pub use exchange::{MessagePlan, WorkerPool};
pub use grid::{BoundaryRegion, NeighborOffset, ProcessGrid};
pub use harness::{BenchConfig, Strategy, TimingReport, VerifyReport};
pub use meshdata::{LocalMesh, PackBuffer};
pub use transport::{Endpoint, Transport};
