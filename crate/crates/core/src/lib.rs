//! Per-connection transport performance monitoring.
//!
//! A scripted connection simulator plays back trace files and emits probe
//! events at the interesting points of each connection's life. Every event
//! carries a snapshot of the connection's KPIs. The aggregator runs the
//! lifecycle state machine over the event stream and, at every state
//! transition worth reporting, cuts the KPIs into a windowed
//! [`PerformanceProfile`]. Profiles are packed into MTU-sized IPFIX messages
//! and shipped over UDP to a collector, which appends them to a line-oriented
//! store and answers summary queries about establishment time, loss-induced
//! stalls and jitter.

pub mod aggregator;
pub mod collector;
pub mod conn;
pub mod fsm;
pub mod ipfix;
pub mod kpi;
pub mod probe;
pub mod sim;
pub mod trace;

pub use aggregator::{Aggregator, BufferConfig, ExportBuffer, PerformanceProfile};
pub use collector::store::{ProfileStore, ReceiveMeta, StoredProfile};
pub use collector::{Collector, IngestCounters, ServeLimits};
pub use conn::{ConnKey, TransportRole};
pub use fsm::{EndReason, LifecycleState, Transition};
pub use kpi::{
    CounterPair, KpiAccumulator, KpiDelta, KpiId, KpiKind, KpiSnapshot, RunningStat, WindowStat,
};
pub use probe::{EventDetail, ProbeEvent, ProbeEventKind, SegmentClass};
pub use sim::{EventSink, ReplaySummary, SimConfig, Simulator};
pub use trace::TraceScript;
