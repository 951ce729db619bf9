//! Turns probe events into performance profiles and batches them for
//! export.
//!
//! The aggregator mirrors each connection's lifecycle from the event stream
//! alone. When an event crosses a lifecycle transition it cuts a profile:
//! the KPI difference between this capture and the previous cut, so
//! counters arrive as per-window increments rather than lifetime totals.
//! Consecutive profiles of one connection tile: each window starts exactly
//! where the previous one ended.
//!
//! [`ExportBuffer`] packs encoded profiles into wire messages, flushing
//! before a record would push a message past the MTU. Templates go out in
//! their own message at startup and are re-announced periodically, so a
//! collector joining mid-stream eventually becomes able to decode.

use std::sync::mpsc::{sync_channel, SyncSender};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conn::ConnKey;
use crate::fsm::{apply_event, EndReason, FsmError, LifecycleState};
use crate::ipfix::codec::{encode_data_record, encode_message, Set};
use crate::ipfix::registry::{template_set_body, TEMPLATE_SET_ID};
use crate::ipfix::IpfixError;
use crate::kpi::{delta, KpiDelta, KpiError, KpiSnapshot};
use crate::probe::{ProbeEvent, ProbeEventKind};
use crate::sim::{EventSink, ReplaySummary, SimConfig, SimViolation, Simulator};
use crate::trace::TraceScript;
use std::collections::HashMap;

/// One exported measurement window for one connection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerformanceProfile {
    pub key: ConnKey,
    /// Script id of the owning multipath connection, for subflows.
    pub meta_uid: Option<u64>,
    pub from_state: LifecycleState,
    pub to_state: LifecycleState,
    /// 1-based position of this profile in its connection's export stream.
    pub export_seq: u64,
    pub kpis: KpiDelta,
}

impl PerformanceProfile {
    pub fn end_reason(&self) -> Option<EndReason> {
        match self.to_state {
            LifecycleState::Closed(reason) => Some(reason),
            _ => None,
        }
    }

    /// True for the profile cut when an outbound handshake completed.
    pub fn is_establishment(&self) -> bool {
        self.from_state == LifecycleState::Connecting
            && self.to_state == LifecycleState::Established
    }
}

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error(transparent)]
    Lifecycle(#[from] FsmError),
    #[error(transparent)]
    Kpi(#[from] KpiError),
}

struct Track {
    lifecycle: LifecycleState,
    prev: KpiSnapshot,
    export_seq: u64,
}

/// Rebuilds per-connection lifecycle from events and cuts profiles on
/// transitions.
#[derive(Default)]
pub struct Aggregator {
    tracks: HashMap<u64, Track>,
    orphan_events: u64,
}

fn registers(kind: ProbeEventKind) -> bool {
    matches!(
        kind,
        ProbeEventKind::ConnectAttempt
            | ProbeEventKind::AcceptEstablished
            | ProbeEventKind::ConnectEstablished
            | ProbeEventKind::SubflowJoin
    )
}

impl Aggregator {
    pub fn new() -> Self {
        Aggregator::default()
    }

    /// Events for connections this aggregator never saw registered, dropped
    /// on the floor.
    pub fn orphan_events(&self) -> u64 {
        self.orphan_events
    }

    pub fn open_tracks(&self) -> usize {
        self.tracks.len()
    }

    /// Feed one event; returns the profile it cuts, if any.
    pub fn consume(
        &mut self,
        event: &ProbeEvent,
    ) -> Result<Option<PerformanceProfile>, AggregateError> {
        let uid = event.key.uid;
        if !self.tracks.contains_key(&uid) {
            if !registers(event.kind) {
                self.orphan_events += 1;
                return Ok(None);
            }
            self.tracks.insert(
                uid,
                Track {
                    lifecycle: LifecycleState::Init,
                    prev: event.capture.clone(),
                    export_seq: 0,
                },
            );
        }
        let track = self.tracks.get_mut(&uid).expect("just ensured");
        let (next, transition) = apply_event(track.lifecycle, event)?;
        track.lifecycle = next;
        let Some(transition) = transition else {
            return Ok(None);
        };
        let kpis = delta(&track.prev, &event.capture)?;
        track.prev = event.capture.clone();
        track.export_seq += 1;
        let profile = PerformanceProfile {
            key: event.key.clone(),
            meta_uid: event.meta_uid,
            from_state: transition.from,
            to_state: transition.to,
            export_seq: track.export_seq,
            kpis,
        };
        if next.is_closed() {
            self.tracks.remove(&uid);
        }
        Ok(Some(profile))
    }
}

/// Smallest MTU the export buffer accepts.
pub const MIN_MTU: usize = 576;

/// Capacity of the event channel between the replay and aggregation
/// threads.
pub const PIPELINE_DEPTH: usize = 4096;

#[derive(Clone, Debug)]
pub struct BufferConfig {
    /// Largest message the buffer will emit, in bytes.
    pub mtu: usize,
    /// Messages between template re-announcements.
    pub template_refresh: u64,
    /// Seconds of push inactivity after which [`ExportBuffer::flush_if_idle`]
    /// flushes.
    pub idle_flush_secs: u32,
    pub observation_domain: u32,
}

impl Default for BufferConfig {
    fn default() -> Self {
        BufferConfig {
            mtu: 1500,
            template_refresh: 20,
            idle_flush_secs: 5,
            observation_domain: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("mtu {mtu} below the {MIN_MTU}-byte minimum")]
    MtuTooSmall { mtu: usize },
    #[error("encoded record needs {needed} bytes with headers, exceeding mtu {mtu}")]
    RecordTooLarge { needed: usize, mtu: usize },
    #[error(transparent)]
    Encode(#[from] IpfixError),
}

/// Packs encoded profiles into MTU-bounded messages.
///
/// Records are kept in push order. A record never spans messages; when one
/// would not fit, everything pending goes out first. Timestamps are passed
/// in by the caller so identical inputs produce identical bytes.
pub struct ExportBuffer {
    config: BufferConfig,
    /// Encoded records waiting to be sent, with the template each uses.
    pending: Vec<(u16, Vec<u8>)>,
    /// Size of the message the pending records would form.
    pending_size: usize,
    /// Data records sent so far; messages carry it as their sequence base.
    sequence: u64,
    messages_sent: u64,
    /// Messages since the last template announcement; `None` until the
    /// first one goes out.
    since_templates: Option<u64>,
    last_push: Option<u32>,
}

impl ExportBuffer {
    pub fn new(config: BufferConfig) -> Result<Self, ExportError> {
        if config.mtu < MIN_MTU {
            return Err(ExportError::MtuTooSmall { mtu: config.mtu });
        }
        Ok(ExportBuffer {
            config,
            pending: Vec::new(),
            pending_size: 0,
            sequence: 0,
            messages_sent: 0,
            since_templates: None,
            last_push: None,
        })
    }

    /// Data records emitted so far.
    pub fn sequence(&self) -> u64 {
        self.sequence
    }

    pub fn messages_sent(&self) -> u64 {
        self.messages_sent
    }

    /// Add one profile, returning any messages that became ready: a
    /// template announcement when one is due, and the pending batch when
    /// this record would have pushed it past the MTU.
    pub fn push(
        &mut self,
        profile: &PerformanceProfile,
        now: u32,
    ) -> Result<Vec<Vec<u8>>, ExportError> {
        let (template_id, record) = encode_data_record(profile)?;
        let needed = 16 + 4 + record.len();
        if needed > self.config.mtu {
            return Err(ExportError::RecordTooLarge { needed, mtu: self.config.mtu });
        }
        let mut out = Vec::new();
        if self.templates_due() {
            out.push(self.template_message(now));
        }
        let grows_by = match self.pending.last() {
            Some((last_id, _)) if *last_id == template_id => record.len(),
            Some(_) => 4 + record.len(),
            None => 4 + record.len(),
        };
        let base = if self.pending.is_empty() { 16 } else { self.pending_size };
        if !self.pending.is_empty() && base + grows_by > self.config.mtu {
            out.extend(self.flush(now));
        }
        if self.pending.is_empty() {
            self.pending_size = 16 + 4 + record.len();
        } else {
            self.pending_size += grows_by;
        }
        self.pending.push((template_id, record));
        self.last_push = Some(now);
        Ok(out)
    }

    /// Emit everything pending as one message.
    pub fn flush(&mut self, now: u32) -> Option<Vec<u8>> {
        if self.pending.is_empty() {
            return None;
        }
        let records = self.pending.len() as u64;
        let mut sets: Vec<Set> = Vec::new();
        for (template_id, record) in self.pending.drain(..) {
            match sets.last_mut() {
                Some(set) if set.set_id == template_id => set.body.extend_from_slice(&record),
                _ => sets.push(Set { set_id: template_id, body: record }),
            }
        }
        let message = encode_message(
            now,
            self.sequence as u32,
            self.config.observation_domain,
            &sets,
        );
        debug_assert!(message.len() <= self.config.mtu);
        self.pending_size = 0;
        self.sequence += records;
        self.note_message();
        Some(message)
    }

    /// Flush only if nothing has been pushed for the configured idle
    /// window.
    pub fn flush_if_idle(&mut self, now: u32) -> Option<Vec<u8>> {
        match self.last_push {
            Some(last) if now.saturating_sub(last) >= self.config.idle_flush_secs => {
                self.flush(now)
            }
            _ => None,
        }
    }

    fn templates_due(&self) -> bool {
        match self.since_templates {
            None => true,
            Some(n) => n >= self.config.template_refresh,
        }
    }

    fn template_message(&mut self, now: u32) -> Vec<u8> {
        let set = Set { set_id: TEMPLATE_SET_ID, body: template_set_body() };
        let message = encode_message(
            now,
            self.sequence as u32,
            self.config.observation_domain,
            &[set],
        );
        self.since_templates = Some(0);
        self.messages_sent += 1;
        message
    }

    fn note_message(&mut self) {
        self.messages_sent += 1;
        if let Some(n) = &mut self.since_templates {
            *n += 1;
        }
    }
}

/// What a pipeline run produced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineOutcome {
    pub replay: ReplaySummary,
    pub profiles_emitted: u64,
    pub orphan_events: u64,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimViolation),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error("profile handler failed: {0}")]
    Handler(#[from] std::io::Error),
}

struct ChannelSink {
    tx: Option<SyncSender<ProbeEvent>>,
}

impl EventSink for ChannelSink {
    fn on_event(&mut self, event: ProbeEvent) {
        if let Some(tx) = &self.tx {
            if tx.send(event).is_err() {
                // Receiver is gone; finish the replay without blocking.
                self.tx = None;
            }
        }
    }
}

/// Replay a script on one thread while aggregating on the calling thread,
/// the two joined by a bounded channel, and hand each profile to
/// `on_profile` in cut order.
pub fn run_pipeline<F>(
    script: &TraceScript,
    config: SimConfig,
    mut on_profile: F,
) -> Result<PipelineOutcome, PipelineError>
where
    F: FnMut(PerformanceProfile) -> std::io::Result<()>,
{
    let (tx, rx) = sync_channel::<ProbeEvent>(PIPELINE_DEPTH);
    std::thread::scope(|scope| {
        let replay = scope.spawn(move || {
            let mut sink = ChannelSink { tx: Some(tx) };
            Simulator::new(config).replay(script, &mut sink)
        });
        let mut aggregator = Aggregator::new();
        let mut profiles_emitted = 0u64;
        let mut failure: Option<PipelineError> = None;
        while let Ok(event) = rx.recv() {
            match aggregator.consume(&event) {
                Ok(Some(profile)) => {
                    profiles_emitted += 1;
                    if let Err(e) = on_profile(profile) {
                        failure = Some(e.into());
                        break;
                    }
                }
                Ok(None) => {}
                Err(e) => {
                    failure = Some(e.into());
                    break;
                }
            }
        }
        drop(rx);
        let replay = replay.join().expect("replay thread panicked");
        match (replay, failure) {
            (Err(violation), _) => Err(violation.into()),
            (_, Some(failure)) => Err(failure),
            (Ok(summary), None) => Ok(PipelineOutcome {
                replay: summary,
                profiles_emitted,
                orphan_events: aggregator.orphan_events(),
            }),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conn::TransportRole;
    use crate::ipfix::codec::decode_message;
    use crate::ipfix::codec::DecodedSet;
    use crate::kpi::{CounterPair, KpiAccumulator};
    use crate::probe::EventDetail;

    fn events_for(text: &str) -> Vec<ProbeEvent> {
        let script = TraceScript::parse(text).expect("script parses");
        let mut events = Vec::new();
        Simulator::new(SimConfig::default())
            .replay(&script, &mut events)
            .expect("replay succeeds");
        events
    }

    fn profiles_for(text: &str) -> Vec<PerformanceProfile> {
        let mut aggregator = Aggregator::new();
        let mut profiles = Vec::new();
        for event in events_for(text) {
            if let Some(p) = aggregator.consume(&event).expect("consume succeeds") {
                profiles.push(p);
            }
        }
        assert_eq!(aggregator.orphan_events(), 0);
        profiles
    }

    const SYN_LOSS_TRACE: &str = "\
         @0 conn 1 open 10.0.0.1:40000 -> 10.0.0.2:80 via eth0\n\
         @1000000000 conn 1 rto\n\
         @3000000000 conn 1 established rtt=120000\n\
         @3000000000 conn 1 send 1000\n\
         @3500000000 conn 1 close fin\n";

    #[test]
    fn establishment_and_close_profiles_tile_the_connection() {
        let profiles = profiles_for(SYN_LOSS_TRACE);
        assert_eq!(profiles.len(), 2);

        let est = &profiles[0];
        assert_eq!(est.from_state, LifecycleState::Connecting);
        assert_eq!(est.to_state, LifecycleState::Established);
        assert_eq!(est.export_seq, 1);
        assert_eq!(est.kpis.t_start, 0);
        assert_eq!(est.kpis.t_end, 3_000_000_000);
        assert_eq!(est.kpis.stalls, Some(1));
        assert_eq!(est.kpis.rtt.as_ref().map(|r| r.samples), Some(1));
        assert_eq!(est.end_reason(), None);
        assert!(est.is_establishment());

        let fin = &profiles[1];
        assert_eq!(fin.from_state, LifecycleState::Established);
        assert_eq!(fin.to_state, LifecycleState::Closed(EndReason::Finished));
        assert_eq!(fin.export_seq, 2);
        assert_eq!(fin.kpis.t_start, est.kpis.t_end);
        assert_eq!(fin.kpis.t_end, 3_500_000_000);
        assert_eq!(fin.kpis.stalls, Some(0));
        assert_eq!(fin.kpis.sent, CounterPair { bytes: 1000, packets: 1 });
        assert_eq!(fin.end_reason(), Some(EndReason::Finished));
    }

    #[test]
    fn counters_arrive_as_per_window_increments() {
        let profiles = profiles_for(
            "@0 conn 1 open 10.0.0.1:40000 -> 10.0.0.2:80 via eth0\n\
             @1 conn 1 established rtt=40000\n\
             @2 conn 1 send 1000\n\
             @3 conn 1 send 1000\n\
             @4 conn 1 rto retrans=500\n\
             @5 conn 1 send 1000\n\
             @6 conn 1 recovered\n\
             @7 conn 1 close fin\n",
        );
        assert_eq!(profiles.len(), 4);
        let lossy = &profiles[1];
        assert_eq!(lossy.to_state, LifecycleState::Lossy);
        assert_eq!(lossy.kpis.sent, CounterPair { bytes: 2000, packets: 2 });
        assert_eq!(lossy.kpis.lost, CounterPair { bytes: 500, packets: 1 });
        let recovered = &profiles[2];
        assert_eq!(recovered.kpis.sent, CounterPair { bytes: 1000, packets: 1 });
        assert_eq!(recovered.kpis.lost, CounterPair { bytes: 0, packets: 0 });
        let windows: Vec<(u64, u64)> =
            profiles.iter().map(|p| (p.kpis.t_start, p.kpis.t_end)).collect();
        for pair in windows.windows(2) {
            assert_eq!(pair[0].1, pair[1].0);
        }
    }

    #[test]
    fn accepted_connections_export_a_zero_width_establishment_window() {
        let profiles = profiles_for(
            "@0 conn 7 open 192.0.2.9:55000 -> 10.0.0.1:443 via eth1\n\
             @500 conn 7 accepted\n\
             @900 conn 7 close fin\n",
        );
        assert_eq!(profiles.len(), 2);
        let est = &profiles[0];
        assert_eq!(est.from_state, LifecycleState::Init);
        assert_eq!(est.to_state, LifecycleState::Established);
        assert_eq!(est.kpis.t_start, 500);
        assert_eq!(est.kpis.t_end, 500);
        assert!(!est.is_establishment());
    }

    #[test]
    fn events_without_a_registration_are_dropped_as_orphans() {
        let mut aggregator = Aggregator::new();
        let capture = KpiAccumulator::for_role(TransportRole::Tcp).snapshot(5);
        let event = ProbeEvent {
            kind: ProbeEventKind::SegmentValidated,
            key: ConnKey {
                src_ip: "10.0.0.1".parse().unwrap(),
                dst_ip: "10.0.0.2".parse().unwrap(),
                src_port: 1,
                dst_port: 2,
                role: TransportRole::Tcp,
                iface: "eth0".into(),
                uid: 99,
            },
            at: 5,
            meta_uid: None,
            capture,
            detail: EventDetail::None,
        };
        assert!(aggregator.consume(&event).unwrap().is_none());
        assert_eq!(aggregator.orphan_events(), 1);
        assert_eq!(aggregator.open_tracks(), 0);
    }

    #[test]
    fn closed_connections_stop_being_tracked() {
        let mut aggregator = Aggregator::new();
        for event in events_for(SYN_LOSS_TRACE) {
            aggregator.consume(&event).unwrap();
        }
        assert_eq!(aggregator.open_tracks(), 0);
    }

    #[test]
    fn subflow_and_meta_profiles_carry_the_multipath_linkage() {
        let profiles = profiles_for(
            "@0 conn 1 open 10.0.0.1:40000 -> 10.0.0.2:80 via eth0 mptcp\n\
             @1000 conn 1 established rtt=50000\n\
             @2000 conn 1 join subflow=2\n\
             @3000 conn 1 close fin\n",
        );
        let roles: Vec<TransportRole> = profiles.iter().map(|p| p.key.role).collect();
        assert_eq!(
            roles,
            vec![
                TransportRole::MptcpSubflow,
                TransportRole::MptcpMeta,
                TransportRole::MptcpSubflow,
                TransportRole::MptcpSubflow,
                TransportRole::MptcpSubflow,
                TransportRole::MptcpMeta,
            ]
        );
        for p in &profiles {
            match p.key.role {
                TransportRole::MptcpSubflow => assert_eq!(p.meta_uid, Some(1)),
                TransportRole::MptcpMeta => assert_eq!(p.meta_uid, None),
                TransportRole::Tcp => unreachable!(),
            }
        }
        let meta_est = &profiles[1];
        assert_eq!(meta_est.kpis.t_start, 1000);
        assert_eq!(meta_est.kpis.t_end, 1000);
        assert_eq!(meta_est.kpis.rtt, None);
        assert_eq!(meta_est.kpis.stalls, None);
    }

    #[test]
    fn pipeline_matches_single_threaded_aggregation() {
        let script = TraceScript::parse(SYN_LOSS_TRACE).unwrap();
        let mut piped = Vec::new();
        let outcome = run_pipeline(&script, SimConfig::default(), |p| {
            piped.push(p);
            Ok(())
        })
        .expect("pipeline succeeds");
        assert_eq!(outcome.profiles_emitted, 2);
        assert_eq!(outcome.orphan_events, 0);
        assert_eq!(outcome.replay.events_emitted, 4);
        assert_eq!(piped, profiles_for(SYN_LOSS_TRACE));
    }

    #[test]
    fn pipeline_surfaces_script_violations() {
        let script = TraceScript::parse(
            "@0 conn 1 open 10.0.0.1:40000 -> 10.0.0.2:80 via eth0\n\
             @1 conn 1 send 100\n",
        )
        .unwrap();
        let err = run_pipeline(&script, SimConfig::default(), |_| Ok(())).unwrap_err();
        assert!(matches!(err, PipelineError::Sim(_)));
    }

    fn sample_profiles(n: usize) -> Vec<PerformanceProfile> {
        let mut text = String::new();
        for i in 0..n {
            let port = 40000 + i;
            text.push_str(&format!(
                "@{t0} conn {uid} open 10.0.0.1:{port} -> 10.0.0.2:80 via eth0\n\
                 @{t1} conn {uid} established rtt=30000\n\
                 @{t2} conn {uid} close fin\n",
                t0 = i * 10,
                t1 = i * 10 + 1,
                t2 = i * 10 + 2,
                uid = i + 1,
                port = port,
            ));
        }
        profiles_for(&text)
    }

    #[test]
    fn first_push_announces_templates_in_their_own_message() {
        let profiles = sample_profiles(1);
        let mut buffer = ExportBuffer::new(BufferConfig::default()).unwrap();
        let out = buffer.push(&profiles[0], 100).unwrap();
        assert_eq!(out.len(), 1);
        let decoded = decode_message(&out[0]).unwrap();
        assert_eq!(decoded.sequence, 0);
        assert!(matches!(decoded.sets[0], DecodedSet::Templates(_)));
        let flushed = buffer.flush(100).unwrap();
        let decoded = decode_message(&flushed).unwrap();
        assert!(matches!(decoded.sets[0], DecodedSet::Data { .. }));
    }

    #[test]
    fn messages_stay_within_the_mtu_and_records_never_split() {
        let profiles = sample_profiles(40);
        let config = BufferConfig { mtu: 600, ..BufferConfig::default() };
        let mut buffer = ExportBuffer::new(config).unwrap();
        let mut messages = Vec::new();
        for (i, p) in profiles.iter().enumerate() {
            messages.extend(buffer.push(p, i as u32).unwrap());
        }
        messages.extend(buffer.flush(1000));
        let mut records = 0usize;
        for m in &messages {
            assert!(m.len() <= 600, "message of {} bytes exceeds mtu", m.len());
            let decoded = decode_message(m).unwrap();
            for set in &decoded.sets {
                if let DecodedSet::Data { set_id, body } = set {
                    let record_len = if *set_id == 256 { 232 } else { 256 };
                    assert_eq!(body.len() % record_len, 0, "record split across messages");
                    records += body.len() / record_len;
                }
            }
        }
        assert_eq!(records, profiles.len());
    }

    #[test]
    fn sequence_counts_data_records_only() {
        let profiles = sample_profiles(3);
        let mut buffer = ExportBuffer::new(BufferConfig::default()).unwrap();
        let mut messages = Vec::new();
        for p in &profiles {
            messages.extend(buffer.push(p, 7).unwrap());
        }
        messages.extend(buffer.flush(7));
        assert_eq!(decode_message(&messages[0]).unwrap().sequence, 0);
        assert_eq!(decode_message(&messages[1]).unwrap().sequence, 0);
        assert_eq!(buffer.sequence(), profiles.len() as u64);
        let mut buffer2 = ExportBuffer::new(BufferConfig::default()).unwrap();
        for p in &profiles {
            buffer2.push(p, 8).unwrap();
        }
        buffer2.flush(8);
        let out = buffer2.push(&profiles[0], 9).unwrap();
        assert!(out.is_empty());
        let next = buffer2.flush(9).unwrap();
        assert_eq!(decode_message(&next).unwrap().sequence, profiles.len() as u32);
    }

    #[test]
    fn templates_are_refreshed_after_the_configured_message_count() {
        let profiles = sample_profiles(4);
        let config = BufferConfig { template_refresh: 3, ..BufferConfig::default() };
        let mut buffer = ExportBuffer::new(config).unwrap();
        let mut template_messages = 0;
        for (i, p) in profiles.iter().enumerate() {
            for m in buffer.push(p, i as u32).unwrap() {
                let decoded = decode_message(&m).unwrap();
                if matches!(decoded.sets[0], DecodedSet::Templates(_)) {
                    template_messages += 1;
                }
            }
            buffer.flush(i as u32);
        }
        // One announcement up front, another once three messages have gone
        // out since, twice over.
        assert_eq!(template_messages, 3);
    }

    #[test]
    fn idle_flush_waits_for_the_configured_gap() {
        let profiles = sample_profiles(1);
        let mut buffer = ExportBuffer::new(BufferConfig::default()).unwrap();
        buffer.push(&profiles[0], 100).unwrap();
        assert!(buffer.flush_if_idle(104).is_none());
        assert!(buffer.flush_if_idle(105).is_some());
        assert!(buffer.flush_if_idle(200).is_none());
    }

    #[test]
    fn undersized_mtu_is_rejected() {
        let config = BufferConfig { mtu: 575, ..BufferConfig::default() };
        assert!(matches!(
            ExportBuffer::new(config),
            Err(ExportError::MtuTooSmall { mtu: 575 })
        ));
    }
}
