//! Events emitted at the instrumented points of a connection's life.
//!
//! Every event carries the connection identity, the instant it fired and a
//! full KPI snapshot taken at that instant, so a consumer never has to ask
//! the producer for more state.

use crate::conn::ConnKey;
use crate::kpi::KpiSnapshot;

/// Which instrumented point fired.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProbeEventKind {
    /// An outbound connection attempt started.
    ConnectAttempt,
    /// An outbound attempt failed with an errno.
    ConnectError,
    /// An outbound attempt completed the handshake.
    ConnectEstablished,
    /// An inbound connection was accepted.
    AcceptEstablished,
    /// The retransmission timer fired.
    RetransmitTimeout,
    /// Loss recovery finished and the connection is back to normal delivery.
    RecoveryComplete,
    /// An incoming segment was classified against the expected sequence.
    SegmentValidated,
    /// The connection reached its terminal state.
    StateClose,
    /// The multipath meta-level retransmission timer fired.
    MetaRetransmitTimeout,
    /// A subflow carried data originally sent on a sibling subflow.
    SubflowReinject,
    /// A new subflow joined an existing multipath connection.
    SubflowJoin,
}

/// How an incoming segment relates to the next expected sequence number.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentClass {
    /// Starts exactly at the expected sequence.
    InOrder,
    /// Starts before the expected sequence; `dup_bytes` were already
    /// received (the rest, if any, is taken in order).
    Duplicate { dup_bytes: u64 },
    /// Starts `distance` bytes past the expected sequence.
    OutOfOrder { distance: u64 },
}

/// Extra payload specific to the event kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventDetail {
    None,
    /// `SegmentValidated`: the segment and its classification.
    Segment { seq: u64, len: u64, class: SegmentClass },
    /// `RetransmitTimeout`: whether delivery is actually blocked, and how
    /// many bytes the timeout retransmitted.
    Timeout { stalled: bool, retrans_bytes: u64 },
    /// `ConnectError`: the failing errno.
    ConnectFailure { errno: i32 },
    /// `StateClose`: the evidence the close left behind.
    Close { reset: bool, fin_exchanged: bool },
    /// `SubflowReinject`: reinjected bytes and the subflow they came from.
    Reinject { bytes: u64, from_uid: u64 },
}

/// One probe firing.
#[derive(Clone, Debug)]
pub struct ProbeEvent {
    pub kind: ProbeEventKind,
    pub key: ConnKey,
    /// Trace-relative nanoseconds.
    pub at: u64,
    /// For subflows, the meta connection they belong to.
    pub meta_uid: Option<u64>,
    /// KPI state captured when the probe fired.
    pub capture: KpiSnapshot,
    pub detail: EventDetail,
}
