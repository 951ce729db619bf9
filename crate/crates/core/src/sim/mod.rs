//! Scripted replay of connection traces.
//!
//! The replay engine turns a parsed [`TraceScript`] into a stream of probe
//! events, maintaining per-connection transport state and KPI accumulators
//! along the way. It stands in for an instrumented kernel: each directive
//! updates connection state, and the instrumented points emit events
//! carrying a full KPI snapshot.
//!
//! Tracked connections live in a bounded table (default
//! [`DEFAULT_CAPACITY`]). Once the table is full, new registrations are
//! refused and counted, and every later directive for a refused connection
//! is ignored rather than failing the replay; monitoring must degrade, not
//! amplify load. Inbound connections only start existing when they are
//! accepted, so unaccepted handshakes can never occupy table space. State is
//! dropped as soon as a connection closes.
//!
//! # Multipath addressing
//!
//! A script id for a multipath connection addresses the first subflow while
//! the handshake is in flight and the meta connection from establishment
//! onward. The first subflow itself is tracked under a derived id
//! ([`derived_subflow_uid`]); subflows added with `join` keep their own
//! script ids. Closing the meta closes its live subflows first, with the
//! same close evidence and timestamp.

pub mod mptcp;
pub mod tcp;

use std::collections::{HashMap, HashSet};
use std::net::{IpAddr, SocketAddr};

use thiserror::Error;

use crate::conn::{ConnKey, TransportRole, DERIVED_UID_BASE};
use crate::fsm::{apply_event, FsmError, LifecycleState};
use crate::kpi::{KpiAccumulator, KpiError, KpiId};
use crate::probe::{EventDetail, ProbeEvent, ProbeEventKind};
use crate::trace::{CloseKind, Directive, DirectiveOp, TraceScript};

use mptcp::MetaConnState;
use tcp::TcpConnState;

/// Default bound on simultaneously tracked connections.
pub const DEFAULT_CAPACITY: usize = 3000;

#[derive(Clone, Debug)]
pub struct SimConfig {
    /// Maximum simultaneously tracked connections (meta connections and
    /// subflows each take a slot).
    pub capacity: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { capacity: DEFAULT_CAPACITY }
    }
}

/// Consumes the probe events a replay produces.
pub trait EventSink {
    fn on_event(&mut self, event: ProbeEvent);
}

impl EventSink for Vec<ProbeEvent> {
    fn on_event(&mut self, event: ProbeEvent) {
        self.push(event);
    }
}

/// What a replay did, beyond the events it emitted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplaySummary {
    pub directives_applied: u64,
    pub events_emitted: u64,
    /// Connections registered over the whole replay, including ones that
    /// closed again.
    pub connections_tracked: u64,
    /// Registrations refused because the connection table was full.
    pub registrations_refused: u64,
    /// Directives ignored because their connection had been refused.
    pub ignored_directives: u64,
    /// Connections still tracked when the script ended.
    pub still_open: u64,
}

/// A directive that is illegal for the addressed connection's state.
#[derive(Debug, Error)]
#[error("@{at} conn {uid}: {kind}")]
pub struct SimViolation {
    pub at: u64,
    pub uid: u64,
    pub kind: ViolationKind,
}

#[derive(Debug, Error)]
pub enum ViolationKind {
    #[error("`{op}` requires an established connection")]
    NotEstablished { op: &'static str },
    #[error("connection is not open yet")]
    NotOpenYet,
    #[error("connection already closed")]
    UseAfterClose,
    #[error("`{op}` does not apply to a multipath meta connection")]
    MetaRestricted { op: &'static str },
    #[error("`{op}` requires a multipath connection")]
    NotMultipath { op: &'static str },
    #[error("`{op}` requires an established multipath connection")]
    MetaNotEstablished { op: &'static str },
    #[error("subflow {subflow} does not belong to this connection")]
    ForeignSubflow { subflow: u64 },
    #[error("sequence number {seq} does not fit the 32-bit subflow sequence space")]
    SeqOutOfRange { seq: u64 },
    #[error(transparent)]
    Lifecycle(#[from] FsmError),
    #[error(transparent)]
    Kpi(#[from] KpiError),
}

enum ConnKind {
    Tcp(TcpConnState),
    Meta { state: MetaConnState, subflows: Vec<u64> },
}

struct Conn {
    key: ConnKey,
    meta_uid: Option<u64>,
    lifecycle: LifecycleState,
    kpis: KpiAccumulator,
    kind: ConnKind,
}

struct PendingInbound {
    src: SocketAddr,
    dst: SocketAddr,
    iface: String,
    mptcp: bool,
}

/// First-subflow id derived from a multipath connection's script id.
pub fn derived_subflow_uid(script_uid: u64) -> u64 {
    script_uid | DERIVED_UID_BASE
}

/// One-shot replay engine.
pub struct Simulator {
    config: SimConfig,
    conns: HashMap<u64, Conn>,
    /// Script id -> tracked connection id. Bindings outlive the connection
    /// so a directive after close is reported as such.
    bindings: HashMap<u64, u64>,
    /// Script id of a subflow -> script id of its multipath connection.
    /// Never purged, so reinjection provenance can name a closed subflow.
    subflow_parent: HashMap<u64, u64>,
    pending_inbound: HashMap<u64, PendingInbound>,
    refused: HashSet<u64>,
    summary: ReplaySummary,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Self {
        Simulator {
            config,
            conns: HashMap::new(),
            bindings: HashMap::new(),
            subflow_parent: HashMap::new(),
            pending_inbound: HashMap::new(),
            refused: HashSet::new(),
            summary: ReplaySummary::default(),
        }
    }

    /// Apply every directive in global timestamp order, emitting probe
    /// events into `sink`.
    pub fn replay(
        mut self,
        script: &TraceScript,
        sink: &mut dyn EventSink,
    ) -> Result<ReplaySummary, SimViolation> {
        for idx in script.replay_order() {
            let d = &script.directives[idx];
            if self.refused.contains(&d.uid) {
                self.summary.ignored_directives += 1;
                continue;
            }
            self.apply(script, d, sink)?;
            self.summary.directives_applied += 1;
        }
        self.summary.still_open = self.conns.len() as u64;
        Ok(self.summary)
    }

    fn apply(
        &mut self,
        script: &TraceScript,
        d: &Directive,
        sink: &mut dyn EventSink,
    ) -> Result<(), SimViolation> {
        match &d.op {
            DirectiveOp::Open { src, dst, iface, mptcp } => {
                if script.inbound.contains(&d.uid) {
                    // Inbound: remember the endpoints, create nothing until
                    // the connection is actually accepted.
                    self.pending_inbound.insert(
                        d.uid,
                        PendingInbound { src: *src, dst: *dst, iface: iface.clone(), mptcp: *mptcp },
                    );
                    return Ok(());
                }
                match self.open_endpoint(d.uid, *src, *dst, iface, *mptcp) {
                    Some(entity) => {
                        self.emit(d.at, entity, ProbeEventKind::ConnectAttempt, EventDetail::None, sink)
                    }
                    None => Ok(()),
                }
            }
            DirectiveOp::Accepted => {
                let Some(pending) = self.pending_inbound.remove(&d.uid) else {
                    // Not an inbound connection: let the lifecycle machine
                    // reject the event for whatever state this one is in.
                    let entity = self.resolve(d)?;
                    return self.emit(
                        d.at,
                        entity,
                        ProbeEventKind::AcceptEstablished,
                        EventDetail::None,
                        sink,
                    );
                };
                let PendingInbound { src, dst, iface, mptcp } = pending;
                let Some(entity) = self.open_endpoint(d.uid, src, dst, &iface, mptcp) else {
                    return Ok(());
                };
                self.emit(d.at, entity, ProbeEventKind::AcceptEstablished, EventDetail::None, sink)?;
                if mptcp {
                    self.materialize_meta(d, src, dst, &iface, entity, sink)?;
                }
                Ok(())
            }
            DirectiveOp::ConnectError { errno } => {
                let entity = self.resolve(d)?;
                self.emit(
                    d.at,
                    entity,
                    ProbeEventKind::ConnectError,
                    EventDetail::ConnectFailure { errno: *errno },
                    sink,
                )
            }
            DirectiveOp::Established { rtt_us } => {
                let entity = self.resolve(d)?;
                let conn = self.conns.get_mut(&entity).expect("resolved");
                let upgrade = conn.meta_uid == Some(d.uid);
                let src = sock(conn.key.src_ip, conn.key.src_port);
                let dst = sock(conn.key.dst_ip, conn.key.dst_port);
                let iface = conn.key.iface.clone();
                match &mut conn.kind {
                    ConnKind::Tcp(state) => tcp::update_rtt(state, &mut conn.kpis, *rtt_us)
                        .map_err(|e| violation(d, e.into()))?,
                    ConnKind::Meta { .. } => {
                        return Err(violation(d, ViolationKind::MetaRestricted { op: "established" }))
                    }
                }
                self.emit(d.at, entity, ProbeEventKind::ConnectEstablished, EventDetail::None, sink)?;
                if upgrade {
                    self.materialize_meta(d, src, dst, &iface, entity, sink)?;
                }
                Ok(())
            }
            DirectiveOp::Send { len } => {
                let entity = self.resolve(d)?;
                require_established(&self.conns[&entity], "send", d)?;
                let conn = self.conns.get_mut(&entity).expect("resolved");
                match &mut conn.kind {
                    ConnKind::Tcp(state) => {
                        state.bytes_sent += len;
                        state.segs_sent += 1;
                        state.write_queue_pending = true;
                    }
                    ConnKind::Meta { state, .. } => {
                        state.bytes_sent += len;
                        state.segs_sent += 1;
                    }
                }
                conn.kpis
                    .record_counter(KpiId::Sent, *len, 1)
                    .map_err(|e| violation(d, e.into()))
            }
            DirectiveOp::Recv { seq, len } => {
                let entity = self.resolve(d)?;
                require_established(&self.conns[&entity], "recv", d)?;
                let conn = self.conns.get_mut(&entity).expect("resolved");
                let class = match &mut conn.kind {
                    ConnKind::Tcp(state) => {
                        let seq32 = u32::try_from(*seq).map_err(|_| {
                            violation(d, ViolationKind::SeqOutOfRange { seq: *seq })
                        })?;
                        tcp::validate_incoming(state, &mut conn.kpis, seq32, *len as u32)
                            .map_err(|e| violation(d, e.into()))?
                    }
                    ConnKind::Meta { state, .. } => {
                        mptcp::meta_validate_incoming(state, &mut conn.kpis, *seq, *len)
                            .map_err(|e| violation(d, e.into()))?
                    }
                };
                self.emit(
                    d.at,
                    entity,
                    ProbeEventKind::SegmentValidated,
                    EventDetail::Segment { seq: *seq, len: *len, class },
                    sink,
                )
            }
            DirectiveOp::RttSample { us } => {
                let entity = self.resolve(d)?;
                require_established(&self.conns[&entity], "rtt_sample", d)?;
                let conn = self.conns.get_mut(&entity).expect("resolved");
                match &mut conn.kind {
                    ConnKind::Tcp(state) => tcp::update_rtt(state, &mut conn.kpis, *us)
                        .map_err(|e| violation(d, e.into())),
                    ConnKind::Meta { .. } => {
                        Err(violation(d, ViolationKind::MetaRestricted { op: "rtt_sample" }))
                    }
                }
            }
            DirectiveOp::Rto { retrans_bytes } => {
                let entity = self.resolve(d)?;
                let conn = self.conns.get_mut(&entity).expect("resolved");
                let connecting = conn.lifecycle == LifecycleState::Connecting;
                let stalled = match &mut conn.kind {
                    ConnKind::Tcp(state) => {
                        tcp::fire_retransmit_timer(state, &mut conn.kpis, connecting, *retrans_bytes)
                            .map_err(|e| violation(d, e.into()))?
                    }
                    ConnKind::Meta { .. } => {
                        return Err(violation(d, ViolationKind::MetaRestricted { op: "rto" }))
                    }
                };
                self.emit(
                    d.at,
                    entity,
                    ProbeEventKind::RetransmitTimeout,
                    EventDetail::Timeout { stalled, retrans_bytes: *retrans_bytes },
                    sink,
                )
            }
            DirectiveOp::Recovered => {
                let entity = self.resolve(d)?;
                self.emit(d.at, entity, ProbeEventKind::RecoveryComplete, EventDetail::None, sink)
            }
            DirectiveOp::Corrupt { len } => {
                let entity = self.resolve(d)?;
                require_established(&self.conns[&entity], "corrupt", d)?;
                let conn = self.conns.get_mut(&entity).expect("resolved");
                match &mut conn.kind {
                    ConnKind::Tcp(state) => {
                        state.bytes_errors += len;
                        state.segs_errors += 1;
                        conn.kpis
                            .record_counter(KpiId::Errors, *len, 1)
                            .map_err(|e| violation(d, e.into()))
                    }
                    ConnKind::Meta { .. } => {
                        Err(violation(d, ViolationKind::MetaRestricted { op: "corrupt" }))
                    }
                }
            }
            DirectiveOp::Close { kind } => {
                let entity = self.resolve(d)?;
                let cascade = match &self.conns[&entity].kind {
                    ConnKind::Meta { subflows, .. } => subflows.clone(),
                    ConnKind::Tcp(_) => Vec::new(),
                };
                for sub in cascade {
                    if self.conns.contains_key(&sub) {
                        self.close_one(d.at, sub, *kind, sink)?;
                    }
                }
                self.close_one(d.at, entity, *kind, sink)
            }
            DirectiveOp::Join { subflow_uid } => {
                let entity = self.resolve(d)?;
                match &self.conns[&entity].kind {
                    ConnKind::Meta { .. } => {}
                    ConnKind::Tcp(_) if self.conns[&entity].meta_uid == Some(d.uid) => {
                        return Err(violation(d, ViolationKind::MetaNotEstablished { op: "join" }))
                    }
                    ConnKind::Tcp(_) => {
                        return Err(violation(d, ViolationKind::NotMultipath { op: "join" }))
                    }
                }
                let sub_key = ConnKey {
                    role: TransportRole::MptcpSubflow,
                    uid: *subflow_uid,
                    ..self.conns[&entity].key.clone()
                };
                if !self.register(*subflow_uid, sub_key, Some(d.uid), ConnKind::Tcp(TcpConnState::default()))
                {
                    self.refused.insert(*subflow_uid);
                    return Ok(());
                }
                if let ConnKind::Meta { subflows, .. } =
                    &mut self.conns.get_mut(&entity).expect("resolved").kind
                {
                    subflows.push(*subflow_uid);
                }
                self.bindings.insert(*subflow_uid, *subflow_uid);
                self.subflow_parent.insert(*subflow_uid, d.uid);
                self.emit(d.at, *subflow_uid, ProbeEventKind::SubflowJoin, EventDetail::None, sink)
            }
            DirectiveOp::Reinject { bytes, from_uid } => {
                let entity = self.resolve(d)?;
                let conn = &self.conns[&entity];
                match &conn.kind {
                    ConnKind::Meta { .. } => {
                        return Err(violation(d, ViolationKind::MetaRestricted { op: "reinject" }))
                    }
                    ConnKind::Tcp(_) if conn.meta_uid.is_none() => {
                        return Err(violation(d, ViolationKind::NotMultipath { op: "reinject" }))
                    }
                    ConnKind::Tcp(_) => {}
                }
                require_established(conn, "reinject", d)?;
                let parent = conn.meta_uid.expect("subflow has a parent");
                if self.subflow_parent.get(from_uid) != Some(&parent) {
                    return Err(violation(d, ViolationKind::ForeignSubflow { subflow: *from_uid }));
                }
                self.conns
                    .get_mut(&entity)
                    .expect("resolved")
                    .kpis
                    .record_event(KpiId::Reinjections)
                    .map_err(|e| violation(d, e.into()))?;
                self.emit(
                    d.at,
                    entity,
                    ProbeEventKind::SubflowReinject,
                    EventDetail::Reinject { bytes: *bytes, from_uid: *from_uid },
                    sink,
                )
            }
            DirectiveOp::MetaRto => {
                let entity = self.resolve(d)?;
                let conn = &self.conns[&entity];
                match &conn.kind {
                    ConnKind::Meta { .. } => {}
                    ConnKind::Tcp(_) if conn.meta_uid == Some(d.uid) => {
                        return Err(violation(d, ViolationKind::MetaNotEstablished { op: "meta_rto" }))
                    }
                    ConnKind::Tcp(_) => {
                        return Err(violation(d, ViolationKind::NotMultipath { op: "meta_rto" }))
                    }
                }
                require_established(conn, "meta_rto", d)?;
                self.conns
                    .get_mut(&entity)
                    .expect("resolved")
                    .kpis
                    .record_event(KpiId::HolBlocking)
                    .map_err(|e| violation(d, e.into()))?;
                self.emit(
                    d.at,
                    entity,
                    ProbeEventKind::MetaRetransmitTimeout,
                    EventDetail::Timeout { stalled: true, retrans_bytes: 0 },
                    sink,
                )
            }
        }
    }

    /// Register the endpoint a script id initially addresses: the
    /// connection itself, or its first subflow for multipath. Returns the
    /// tracked id, or `None` if the table refused it.
    fn open_endpoint(
        &mut self,
        uid: u64,
        src: SocketAddr,
        dst: SocketAddr,
        iface: &str,
        mptcp: bool,
    ) -> Option<u64> {
        let (entity, role, meta_uid) = if mptcp {
            (derived_subflow_uid(uid), TransportRole::MptcpSubflow, Some(uid))
        } else {
            (uid, TransportRole::Tcp, None)
        };
        let key = conn_key(src, dst, role, iface, entity);
        if !self.register(entity, key, meta_uid, ConnKind::Tcp(TcpConnState::default())) {
            self.refused.insert(uid);
            return None;
        }
        self.bindings.insert(uid, entity);
        if mptcp {
            self.subflow_parent.insert(uid, uid);
        }
        Some(entity)
    }

    /// Create the meta connection once the handshake has confirmed
    /// multipath support, and point the script id at it from then on. The
    /// meta establishes immediately; it never had a handshake of its own.
    fn materialize_meta(
        &mut self,
        d: &Directive,
        src: SocketAddr,
        dst: SocketAddr,
        iface: &str,
        first_subflow: u64,
        sink: &mut dyn EventSink,
    ) -> Result<(), SimViolation> {
        let key = conn_key(src, dst, TransportRole::MptcpMeta, iface, d.uid);
        let kind = ConnKind::Meta { state: MetaConnState::default(), subflows: vec![first_subflow] };
        if !self.register(d.uid, key, None, kind) {
            self.refused.insert(d.uid);
            return Ok(());
        }
        self.bindings.insert(d.uid, d.uid);
        self.emit(d.at, d.uid, ProbeEventKind::ConnectEstablished, EventDetail::None, sink)
    }

    fn close_one(
        &mut self,
        at: u64,
        entity: u64,
        kind: CloseKind,
        sink: &mut dyn EventSink,
    ) -> Result<(), SimViolation> {
        let conn = self.conns.get_mut(&entity).expect("caller checked");
        let (reset, fin_exchanged) = match kind {
            CloseKind::Fin => (false, true),
            CloseKind::Rst => (true, false),
            CloseKind::Drop => (false, false),
        };
        match &mut conn.kind {
            ConnKind::Tcp(state) => {
                state.fin_exchanged = fin_exchanged;
                state.reset = reset;
            }
            ConnKind::Meta { state, .. } => {
                state.fin_exchanged = fin_exchanged;
                state.reset = reset;
            }
        }
        self.emit(
            at,
            entity,
            ProbeEventKind::StateClose,
            EventDetail::Close { reset, fin_exchanged },
            sink,
        )
    }

    fn register(
        &mut self,
        entity: u64,
        key: ConnKey,
        meta_uid: Option<u64>,
        kind: ConnKind,
    ) -> bool {
        if self.conns.len() >= self.config.capacity {
            self.summary.registrations_refused += 1;
            return false;
        }
        let kpis = KpiAccumulator::for_role(key.role);
        self.conns
            .insert(entity, Conn { key, meta_uid, lifecycle: LifecycleState::Init, kpis, kind });
        self.summary.connections_tracked += 1;
        true
    }

    fn resolve(&self, d: &Directive) -> Result<u64, SimViolation> {
        match self.bindings.get(&d.uid) {
            Some(entity) if self.conns.contains_key(entity) => Ok(*entity),
            Some(_) => Err(violation(d, ViolationKind::UseAfterClose)),
            None => Err(violation(d, ViolationKind::NotOpenYet)),
        }
    }

    /// Capture KPIs, run the lifecycle step, hand the event to the sink.
    /// Cutting a profile restarts the KPI sample windows; a close drops the
    /// connection's state entirely.
    fn emit(
        &mut self,
        at: u64,
        entity: u64,
        kind: ProbeEventKind,
        detail: EventDetail,
        sink: &mut dyn EventSink,
    ) -> Result<(), SimViolation> {
        let conn = self.conns.get_mut(&entity).expect("caller resolved");
        let event = ProbeEvent {
            kind,
            key: conn.key.clone(),
            at,
            meta_uid: conn.meta_uid,
            capture: conn.kpis.snapshot(at),
            detail,
        };
        let (next, export) = apply_event(conn.lifecycle, &event).map_err(|e| SimViolation {
            at,
            uid: conn.key.uid,
            kind: e.into(),
        })?;
        conn.lifecycle = next;
        if export.is_some() {
            conn.kpis.reset_window_stats();
        }
        self.summary.events_emitted += 1;
        sink.on_event(event);
        if next.is_closed() {
            self.conns.remove(&entity);
        }
        Ok(())
    }
}

fn violation(d: &Directive, kind: ViolationKind) -> SimViolation {
    SimViolation { at: d.at, uid: d.uid, kind }
}

fn require_established(conn: &Conn, op: &'static str, d: &Directive) -> Result<(), SimViolation> {
    match conn.lifecycle {
        LifecycleState::Established | LifecycleState::Lossy => Ok(()),
        _ => Err(violation(d, ViolationKind::NotEstablished { op })),
    }
}

fn conn_key(
    src: SocketAddr,
    dst: SocketAddr,
    role: TransportRole,
    iface: &str,
    uid: u64,
) -> ConnKey {
    ConnKey {
        src_ip: src.ip(),
        dst_ip: dst.ip(),
        src_port: src.port(),
        dst_port: dst.port(),
        role,
        iface: iface.to_string(),
        uid,
    }
}

fn sock(ip: IpAddr, port: u16) -> SocketAddr {
    SocketAddr::new(ip, port)
}
