//! Per-connection TCP state and the operations the replay engine drives.

use crate::kpi::{KpiAccumulator, KpiError, KpiId};
use crate::probe::SegmentClass;

/// Mutable state of one simulated TCP connection (or multipath subflow).
///
/// Byte and segment counters mirror what the KPI accumulator reports; the
/// smoothed RTT estimate is connection state proper and is distinct from the
/// windowed RTT statistics that profiles carry.
#[derive(Clone, Debug, Default)]
pub struct TcpConnState {
    /// Next expected receive sequence number.
    pub rcv_nxt: u32,
    pub bytes_sent: u64,
    pub segs_sent: u64,
    pub bytes_received: u64,
    pub segs_received: u64,
    pub bytes_retrans: u64,
    pub segs_retrans: u64,
    pub bytes_errors: u64,
    pub segs_errors: u64,
    /// Smoothed RTT, microseconds. Zero until the first sample.
    pub srtt_us: u64,
    /// RTT variation, microseconds.
    pub rttvar_us: u64,
    pub rtt_samples: u64,
    /// Whether unsent or unacknowledged data is queued. Set by writes; the
    /// simulator does not model acknowledgements, so it stays set once data
    /// has been written.
    pub write_queue_pending: bool,
    pub fin_exchanged: bool,
    pub reset: bool,
}

/// Classify a segment against the next expected sequence number, all
/// arithmetic modulo 2^32.
pub fn classify(rcv_nxt: u32, seq: u32, len: u32) -> SegmentClass {
    let offset = seq.wrapping_sub(rcv_nxt);
    segment_class(
        offset as u64,
        offset >= 1 << 31,
        offset.wrapping_neg() as u64,
        len as u64,
    )
}

/// Shared classification core. `offset` is the serial distance from the
/// expected sequence to the segment start, `wrapped_past` says whether that
/// distance lands in the "already received" half of the sequence space, and
/// `behind` is how far behind the expected sequence the segment starts.
pub(crate) fn segment_class(
    offset: u64,
    wrapped_past: bool,
    behind: u64,
    len: u64,
) -> SegmentClass {
    if offset == 0 {
        SegmentClass::InOrder
    } else if !wrapped_past {
        SegmentClass::OutOfOrder { distance: offset }
    } else if len <= behind {
        SegmentClass::Duplicate { dup_bytes: len }
    } else {
        SegmentClass::Duplicate { dup_bytes: behind }
    }
}

/// Classify an incoming segment and account for it.
///
/// In-order data advances `rcv_nxt` and counts as received. A duplicate
/// counts its already-seen bytes; if it reaches past `rcv_nxt`, the
/// remainder is taken in order in the same step. Out-of-order data is
/// counted with its reordering distance but does not advance `rcv_nxt`;
/// scripts model any later retransmission explicitly.
pub fn validate_incoming(
    state: &mut TcpConnState,
    kpis: &mut KpiAccumulator,
    seq: u32,
    len: u32,
) -> Result<SegmentClass, KpiError> {
    let class = classify(state.rcv_nxt, seq, len);
    match class {
        SegmentClass::InOrder => {
            state.rcv_nxt = state.rcv_nxt.wrapping_add(len);
            state.bytes_received += len as u64;
            state.segs_received += 1;
            kpis.record_counter(KpiId::Received, len as u64, 1)?;
        }
        SegmentClass::Duplicate { dup_bytes } => {
            kpis.record_counter(KpiId::Duplicates, dup_bytes, 1)?;
            let fresh = len as u64 - dup_bytes;
            if fresh > 0 {
                state.rcv_nxt = seq.wrapping_add(len);
                state.bytes_received += fresh;
                state.segs_received += 1;
                kpis.record_counter(KpiId::Received, fresh, 1)?;
            }
        }
        SegmentClass::OutOfOrder { distance } => {
            kpis.record_counter(KpiId::Ofo, len as u64, 1)?;
            kpis.record_sample(KpiId::OfoDist, distance as f64)?;
        }
    }
    Ok(class)
}

/// Feed one RTT measurement into the smoothed estimator and the windowed
/// RTT statistics.
///
/// First sample: `srtt = sample`, `rttvar = sample / 2`. Afterwards the
/// variation is updated before the smoothed value, both in integer
/// microseconds:
///
/// ```text
/// rttvar = (3 * rttvar + |srtt - sample|) / 4
/// srtt   = (7 * srtt   +  sample)         / 8
/// ```
pub fn update_rtt(
    state: &mut TcpConnState,
    kpis: &mut KpiAccumulator,
    sample_us: u64,
) -> Result<(), KpiError> {
    if state.rtt_samples == 0 {
        state.srtt_us = sample_us;
        state.rttvar_us = sample_us / 2;
    } else {
        let dev = state.srtt_us.abs_diff(sample_us);
        state.rttvar_us = (3 * state.rttvar_us + dev) / 4;
        state.srtt_us = (7 * state.srtt_us + sample_us) / 8;
    }
    state.rtt_samples += 1;
    kpis.record_sample(KpiId::Rtt, sample_us as f64)
}

/// Account for a retransmission timer firing.
///
/// The timeout is a stall when data is actually blocked: either the write
/// queue holds pending data, or the connection is still mid-handshake (a
/// lost SYN). Returns whether it stalled.
pub fn fire_retransmit_timer(
    state: &mut TcpConnState,
    kpis: &mut KpiAccumulator,
    connecting: bool,
    retrans_bytes: u64,
) -> Result<bool, KpiError> {
    let stalled = state.write_queue_pending || connecting;
    if stalled {
        kpis.record_event(KpiId::Stalls)?;
    }
    if retrans_bytes > 0 {
        state.bytes_retrans += retrans_bytes;
        state.segs_retrans += 1;
        kpis.record_counter(KpiId::Lost, retrans_bytes, 1)?;
    }
    Ok(stalled)
}
