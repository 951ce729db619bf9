//! Connection lifecycle state machine.
//!
//! ```text
//!                ConnectAttempt              ConnectEstablished
//!       Init ────────────────▶ Connecting ────────────────▶ Established
//!         │                        │                          ▲     │
//!         │ AcceptEstablished,     │ ConnectError,   Recovery │     │ RetransmitTimeout (stalled),
//!         │ ConnectEstablished,    │ StateClose      Complete │     ▼ MetaRetransmitTimeout
//!         │ SubflowJoin            ▼                          └── Lossy
//!         └──────▶ Established   Closed ◀──────── StateClose ──────┘
//! ```
//!
//! Every transition that changes the delivery phase of the connection cuts a
//! performance profile: establishment, entering or leaving the lossy state,
//! and any close. A retransmission timeout during the handshake keeps the
//! connection in `Connecting` (the stall shows up in the establishment
//! profile's KPIs instead), and one while already `Lossy` adds a stall
//! without cutting a new profile. `Closed` is terminal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe::{EventDetail, ProbeEvent, ProbeEventKind};

/// Why a connection ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    /// Both sides exchanged and acknowledged FINs.
    Finished,
    /// The connection was torn down by a reset.
    Reset,
    /// The connection never got established.
    ConnectError,
    /// Closed without complete evidence (for example the trace ended).
    Other,
}

impl EndReason {
    pub fn code(self) -> u8 {
        match self {
            EndReason::Finished => 1,
            EndReason::Reset => 2,
            EndReason::ConnectError => 3,
            EndReason::Other => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(EndReason::Finished),
            2 => Some(EndReason::Reset),
            3 => Some(EndReason::ConnectError),
            4 => Some(EndReason::Other),
            _ => None,
        }
    }
}

/// Delivery phase of a connection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleState {
    /// Nothing observed yet.
    Init,
    /// Outbound handshake in progress.
    Connecting,
    /// Normal delivery.
    Established,
    /// A retransmission timeout blocked delivery; recovery pending.
    Lossy,
    /// Terminal.
    Closed(EndReason),
}

impl LifecycleState {
    pub fn is_closed(&self) -> bool {
        matches!(self, LifecycleState::Closed(_))
    }

    pub fn code(self) -> u8 {
        match self {
            LifecycleState::Init => 0,
            LifecycleState::Connecting => 1,
            LifecycleState::Established => 2,
            LifecycleState::Lossy => 3,
            LifecycleState::Closed(_) => 4,
        }
    }
}

/// A state change that cuts a profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transition {
    pub from: LifecycleState,
    pub to: LifecycleState,
}

impl Transition {
    pub fn end_reason(&self) -> Option<EndReason> {
        match self.to {
            LifecycleState::Closed(reason) => Some(reason),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FsmError {
    #[error("{kind:?} is impossible while {state:?}")]
    IllegalTransition { state: LifecycleState, kind: ProbeEventKind },
}

fn close_reason(detail: &EventDetail) -> EndReason {
    match detail {
        EventDetail::Close { reset: true, .. } => EndReason::Reset,
        EventDetail::Close { fin_exchanged: true, .. } => EndReason::Finished,
        _ => EndReason::Other,
    }
}

fn timeout_stalled(detail: &EventDetail) -> bool {
    matches!(detail, EventDetail::Timeout { stalled: true, .. })
}

/// Advance the lifecycle by one event.
///
/// Returns the next state and, when the step crosses a profile boundary, the
/// transition the profile should report.
pub fn apply_event(
    state: LifecycleState,
    event: &ProbeEvent,
) -> Result<(LifecycleState, Option<Transition>), FsmError> {
    use LifecycleState::*;
    use ProbeEventKind::*;

    let illegal = Err(FsmError::IllegalTransition { state, kind: event.kind });
    let export = |to: LifecycleState| Ok((to, Some(Transition { from: state, to })));
    let stay = Ok((state, None));

    match (state, event.kind) {
        (Init, ConnectAttempt) => Ok((Connecting, None)),
        // Connections that first become visible when they are already
        // established: accepted inbound connections, remotely joined
        // subflows, and the multipath meta that materializes once the
        // handshake confirms multipath support.
        (Init, AcceptEstablished) | (Init, ConnectEstablished) | (Init, SubflowJoin) => {
            export(Established)
        }
        (Init, _) => illegal,

        (Connecting, ConnectEstablished) => export(Established),
        (Connecting, ConnectError) => export(Closed(EndReason::ConnectError)),
        // A handshake retransmission is a stall inside the establishment
        // window, not a phase change.
        (Connecting, RetransmitTimeout) => stay,
        (Connecting, StateClose) => export(Closed(close_reason(&event.detail))),
        (Connecting, _) => illegal,

        (Established, SegmentValidated) | (Established, SubflowReinject) => stay,
        (Established, RetransmitTimeout) if timeout_stalled(&event.detail) => export(Lossy),
        // Timer fired with nothing blocked: note the event, keep the phase.
        (Established, RetransmitTimeout) => stay,
        (Established, MetaRetransmitTimeout) => export(Lossy),
        // Loss recovery can complete without us ever having marked the
        // connection lossy (no timeout was involved); nothing to report.
        (Established, RecoveryComplete) => stay,
        (Established, StateClose) => export(Closed(close_reason(&event.detail))),
        (Established, _) => illegal,

        (Lossy, SegmentValidated) | (Lossy, SubflowReinject) => stay,
        // Repeated timeouts while already lossy pile onto the stall counter
        // without cutting another profile.
        (Lossy, RetransmitTimeout) | (Lossy, MetaRetransmitTimeout) => stay,
        (Lossy, RecoveryComplete) => export(Established),
        (Lossy, StateClose) => export(Closed(close_reason(&event.detail))),
        (Lossy, _) => illegal,

        (Closed(_), _) => illegal,
    }
}
