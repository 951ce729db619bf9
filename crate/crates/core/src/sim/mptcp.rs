//! Multipath meta-connection state.
//!
//! The meta connection is what the application talks to; actual delivery
//! happens on its TCP subflows. The meta reuses the subflow KPI vocabulary
//! with shifted meanings: its sequence space is the 64-bit data-level
//! numbering, a duplicate at the meta level is a received reinjection, an
//! out-of-order segment means one subflow ran ahead of a slower sibling, and
//! a meta-level retransmission timeout signals head-of-line blocking. The
//! meta cannot observe corrupted segments and has no latency of its own, so
//! it tracks neither errors nor RTT.

use crate::kpi::{KpiAccumulator, KpiError, KpiId};
use crate::probe::SegmentClass;

use super::tcp::segment_class;

/// Mutable state of one simulated multipath meta connection.
#[derive(Clone, Debug, Default)]
pub struct MetaConnState {
    /// Next expected data-level sequence number.
    pub dss_rcv_nxt: u64,
    pub bytes_sent: u64,
    pub segs_sent: u64,
    pub bytes_received: u64,
    pub segs_received: u64,
    pub fin_exchanged: bool,
    pub reset: bool,
}

/// Classify a data-level segment against the expected 64-bit sequence.
pub fn classify_dss(dss_rcv_nxt: u64, seq: u64, len: u64) -> SegmentClass {
    let offset = seq.wrapping_sub(dss_rcv_nxt);
    segment_class(offset, offset >= 1 << 63, offset.wrapping_neg(), len)
}

/// Classify and account for an incoming data-level mapping, the meta
/// counterpart of the subflow-level segment validation.
pub fn meta_validate_incoming(
    state: &mut MetaConnState,
    kpis: &mut KpiAccumulator,
    seq: u64,
    len: u64,
) -> Result<SegmentClass, KpiError> {
    let class = classify_dss(state.dss_rcv_nxt, seq, len);
    match class {
        SegmentClass::InOrder => {
            state.dss_rcv_nxt = state.dss_rcv_nxt.wrapping_add(len);
            state.bytes_received += len;
            state.segs_received += 1;
            kpis.record_counter(KpiId::Received, len, 1)?;
        }
        SegmentClass::Duplicate { dup_bytes } => {
            kpis.record_counter(KpiId::Duplicates, dup_bytes, 1)?;
            let fresh = len - dup_bytes;
            if fresh > 0 {
                state.dss_rcv_nxt = seq.wrapping_add(len);
                state.bytes_received += fresh;
                state.segs_received += 1;
                kpis.record_counter(KpiId::Received, fresh, 1)?;
            }
        }
        SegmentClass::OutOfOrder { distance } => {
            kpis.record_counter(KpiId::Ofo, len, 1)?;
            kpis.record_sample(KpiId::OfoDist, distance as f64)?;
        }
    }
    Ok(class)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conn::TransportRole;
    use crate::kpi::CounterPair;

    fn meta_acc() -> KpiAccumulator {
        KpiAccumulator::for_role(TransportRole::MptcpMeta)
    }

    #[test]
    fn received_reinjection_shows_up_as_meta_duplicate() {
        let mut state = MetaConnState::default();
        let mut kpis = meta_acc();
        meta_validate_incoming(&mut state, &mut kpis, 0, 1400).unwrap();
        // The same mapping arrives again over a second subflow.
        let class = meta_validate_incoming(&mut state, &mut kpis, 0, 1400).unwrap();
        assert_eq!(class, SegmentClass::Duplicate { dup_bytes: 1400 });
        assert_eq!(kpis.values().duplicates, CounterPair::new(1400, 1));
        assert_eq!(state.dss_rcv_nxt, 1400);
    }

    #[test]
    fn subflow_skew_shows_up_as_meta_reordering() {
        let mut state = MetaConnState::default();
        let mut kpis = meta_acc();
        // A fast subflow delivers a mapping 8000 bytes ahead of the slow one.
        let class = meta_validate_incoming(&mut state, &mut kpis, 8000, 1400).unwrap();
        assert_eq!(class, SegmentClass::OutOfOrder { distance: 8000 });
        assert_eq!(kpis.values().ofo, CounterPair::new(1400, 1));
        assert_eq!(kpis.values().ofo_dist.mean(), 8000.0);
        assert_eq!(state.dss_rcv_nxt, 0);
    }

    #[test]
    fn dss_classification_wraps_modulo_2_to_the_64() {
        let near_wrap = u64::MAX - 99;
        // 100 old bytes, 60 fresh ones across the wrap point.
        assert_eq!(
            classify_dss(0, near_wrap, 160),
            SegmentClass::Duplicate { dup_bytes: 100 }
        );
        let mut state = MetaConnState { dss_rcv_nxt: 0, ..Default::default() };
        let mut kpis = meta_acc();
        meta_validate_incoming(&mut state, &mut kpis, near_wrap, 160).unwrap();
        assert_eq!(state.dss_rcv_nxt, 60);
        assert_eq!(kpis.values().received, CounterPair::new(60, 1));
    }

    #[test]
    fn dss_classification_matches_the_32_bit_rules_on_shared_ground() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(37);
        for _ in 0..500 {
            let rcv: u32 = rng.gen();
            let len: u32 = rng.gen_range(1..=65535);
            let seq = rcv.wrapping_add(rng.gen_range(-70000i64..70000) as u32);
            let narrow = super::super::tcp::classify(rcv, seq, len);
            // Same positions embedded in the middle of the 64-bit space.
            let wide_rcv = (1u64 << 40) + rcv as u64;
            let delta = seq.wrapping_sub(rcv) as i32 as i64;
            let wide = classify_dss(wide_rcv, wide_rcv.wrapping_add_signed(delta), len as u64);
            assert_eq!(narrow, wide, "rcv={rcv} seq={seq} len={len}");
        }
    }
}
