//! KPI bookkeeping for a single tracked connection.
//!
//! Counter KPIs accumulate over the connection's lifetime. Sampled KPIs keep
//! running statistics that restart every time a profile is cut, so each
//! window's statistics describe that window alone. The aggregator subtracts
//! successive [`KpiSnapshot`]s with [`delta`] to obtain the [`KpiDelta`]
//! payload of one performance profile.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conn::TransportRole;

/// Identifies one tracked KPI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KpiId {
    Sent,
    Received,
    Lost,
    Errors,
    Rtt,
    Duplicates,
    Ofo,
    OfoDist,
    Stalls,
    Reinjections,
    HolBlocking,
}

/// How a KPI is recorded and reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KpiKind {
    /// Paired byte and segment counts that only ever grow.
    DualCounter,
    /// Plain occurrence count (stalls, reinjections, head-of-line blocking).
    EventCounter,
    /// Per-window sample statistics (RTT, out-of-order distance).
    Sampled,
}

impl KpiId {
    pub fn kind(self) -> KpiKind {
        match self {
            KpiId::Sent
            | KpiId::Received
            | KpiId::Lost
            | KpiId::Errors
            | KpiId::Duplicates
            | KpiId::Ofo => KpiKind::DualCounter,
            KpiId::Stalls | KpiId::Reinjections | KpiId::HolBlocking => KpiKind::EventCounter,
            KpiId::Rtt | KpiId::OfoDist => KpiKind::Sampled,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KpiError {
    #[error("{id:?} is a {kind:?} KPI and cannot be recorded through this call")]
    KindMismatch { id: KpiId, kind: KpiKind },
    #[error("{id:?} is not tracked for {role} connections")]
    NotTracked { id: KpiId, role: TransportRole },
    #[error("counter {id:?} moved backwards between snapshots")]
    NegativeDelta { id: KpiId },
    #[error("snapshot window runs backwards ({t_start} > {t_end})")]
    WindowOrder { t_start: u64, t_end: u64 },
}

/// A byte count and a segment count that move together.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterPair {
    pub bytes: u64,
    pub packets: u64,
}

impl CounterPair {
    pub const ZERO: CounterPair = CounterPair { bytes: 0, packets: 0 };

    pub fn new(bytes: u64, packets: u64) -> Self {
        CounterPair { bytes, packets }
    }

    fn add(&mut self, bytes: u64, packets: u64) {
        self.bytes += bytes;
        self.packets += packets;
    }

    fn since(self, earlier: CounterPair) -> Option<CounterPair> {
        Some(CounterPair {
            bytes: self.bytes.checked_sub(earlier.bytes)?,
            packets: self.packets.checked_sub(earlier.packets)?,
        })
    }
}

/// Streaming mean and variance over one window of samples.
///
/// Single-pass update; `variance` is the population variance of everything
/// recorded since the last reset.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStat {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStat {
    pub fn record(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.mean
        }
    }

    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }

    /// Freeze this window's statistics into the integer form that profiles
    /// carry. Mean and variance are rounded to the nearest integer unit so
    /// the value survives the fixed-width wire encoding unchanged.
    pub fn window_stat(&self) -> WindowStat {
        WindowStat {
            samples: self.count,
            mean: self.mean().round() as u64,
            variance: self.variance().round() as u64,
        }
    }
}

/// Integerized window statistics as reported in a profile.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowStat {
    pub samples: u64,
    pub mean: u64,
    pub variance: u64,
}

/// The full set of KPI values a connection tracks.
///
/// Fields that a role does not track are `None` rather than zero: meta
/// connections have no error or RTT notion at all, only subflows count
/// reinjections, and only metas count head-of-line blocking.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KpiValues {
    pub sent: CounterPair,
    pub received: CounterPair,
    pub lost: CounterPair,
    pub errors: Option<CounterPair>,
    pub duplicates: CounterPair,
    pub ofo: CounterPair,
    pub rtt: Option<RunningStat>,
    pub ofo_dist: RunningStat,
    pub stalls: Option<u64>,
    pub reinjections: Option<u64>,
    pub hol_blocking: Option<u64>,
}

/// Live KPI state for one connection.
#[derive(Clone, Debug)]
pub struct KpiAccumulator {
    role: TransportRole,
    values: KpiValues,
}

impl KpiAccumulator {
    pub fn for_role(role: TransportRole) -> Self {
        let tcp_like = role != TransportRole::MptcpMeta;
        let values = KpiValues {
            errors: tcp_like.then_some(CounterPair::ZERO),
            rtt: tcp_like.then_some(RunningStat::default()),
            stalls: tcp_like.then_some(0),
            reinjections: (role == TransportRole::MptcpSubflow).then_some(0),
            hol_blocking: (role == TransportRole::MptcpMeta).then_some(0),
            ..KpiValues::default()
        };
        KpiAccumulator { role, values }
    }

    pub fn role(&self) -> TransportRole {
        self.role
    }

    pub fn values(&self) -> &KpiValues {
        &self.values
    }

    /// Add to a dual byte/segment counter.
    pub fn record_counter(&mut self, id: KpiId, bytes: u64, packets: u64) -> Result<(), KpiError> {
        if id.kind() != KpiKind::DualCounter {
            return Err(KpiError::KindMismatch { id, kind: id.kind() });
        }
        let counter = match id {
            KpiId::Sent => &mut self.values.sent,
            KpiId::Received => &mut self.values.received,
            KpiId::Lost => &mut self.values.lost,
            KpiId::Duplicates => &mut self.values.duplicates,
            KpiId::Ofo => &mut self.values.ofo,
            KpiId::Errors => self
                .values
                .errors
                .as_mut()
                .ok_or(KpiError::NotTracked { id, role: self.role })?,
            _ => unreachable!("dual counters handled above"),
        };
        counter.add(bytes, packets);
        Ok(())
    }

    /// Count one occurrence of an event KPI.
    pub fn record_event(&mut self, id: KpiId) -> Result<(), KpiError> {
        if id.kind() != KpiKind::EventCounter {
            return Err(KpiError::KindMismatch { id, kind: id.kind() });
        }
        let slot = match id {
            KpiId::Stalls => &mut self.values.stalls,
            KpiId::Reinjections => &mut self.values.reinjections,
            KpiId::HolBlocking => &mut self.values.hol_blocking,
            _ => unreachable!("event counters handled above"),
        };
        match slot {
            Some(count) => {
                *count += 1;
                Ok(())
            }
            None => Err(KpiError::NotTracked { id, role: self.role }),
        }
    }

    /// Add one sample to a windowed statistic.
    pub fn record_sample(&mut self, id: KpiId, value: f64) -> Result<(), KpiError> {
        if id.kind() != KpiKind::Sampled {
            return Err(KpiError::KindMismatch { id, kind: id.kind() });
        }
        match id {
            KpiId::Rtt => match self.values.rtt.as_mut() {
                Some(stat) => {
                    stat.record(value);
                    Ok(())
                }
                None => Err(KpiError::NotTracked { id, role: self.role }),
            },
            KpiId::OfoDist => {
                self.values.ofo_dist.record(value);
                Ok(())
            }
            _ => unreachable!("sampled KPIs handled above"),
        }
    }

    /// Freeze the current values.
    pub fn snapshot(&self, taken_at: u64) -> KpiSnapshot {
        KpiSnapshot { taken_at, values: self.values.clone() }
    }

    /// Restart the sampled-KPI windows. Called whenever a profile is cut so
    /// the next window starts empty; counters keep accumulating.
    pub fn reset_window_stats(&mut self) {
        if let Some(rtt) = self.values.rtt.as_mut() {
            *rtt = RunningStat::default();
        }
        self.values.ofo_dist = RunningStat::default();
    }
}

/// KPI values frozen at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct KpiSnapshot {
    pub taken_at: u64,
    pub values: KpiValues,
}

/// What one profile reports: counter movement over a window plus the
/// window's sample statistics.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KpiDelta {
    pub t_start: u64,
    pub t_end: u64,
    pub sent: CounterPair,
    pub received: CounterPair,
    pub lost: CounterPair,
    pub errors: Option<CounterPair>,
    pub duplicates: CounterPair,
    pub ofo: CounterPair,
    pub rtt: Option<WindowStat>,
    pub ofo_dist: WindowStat,
    pub stalls: Option<u64>,
    pub reinjections: Option<u64>,
    pub hol_blocking: Option<u64>,
}

fn pair_delta(id: KpiId, after: CounterPair, before: CounterPair) -> Result<CounterPair, KpiError> {
    after.since(before).ok_or(KpiError::NegativeDelta { id })
}

fn opt_pair_delta(
    id: KpiId,
    after: Option<CounterPair>,
    before: Option<CounterPair>,
) -> Result<Option<CounterPair>, KpiError> {
    match (after, before) {
        (Some(a), Some(b)) => Ok(Some(pair_delta(id, a, b)?)),
        _ => Ok(None),
    }
}

fn opt_event_delta(id: KpiId, after: Option<u64>, before: Option<u64>) -> Result<Option<u64>, KpiError> {
    match (after, before) {
        (Some(a), Some(b)) => Ok(Some(a.checked_sub(b).ok_or(KpiError::NegativeDelta { id })?)),
        _ => Ok(None),
    }
}

/// Subtract two snapshots of the same connection.
///
/// Counters report their movement between `before` and `after`; sampled KPIs
/// report the statistics of the window that started at `before`, which is
/// when their accumulators were last reset.
pub fn delta(before: &KpiSnapshot, after: &KpiSnapshot) -> Result<KpiDelta, KpiError> {
    if before.taken_at > after.taken_at {
        return Err(KpiError::WindowOrder {
            t_start: before.taken_at,
            t_end: after.taken_at,
        });
    }
    let (b, a) = (&before.values, &after.values);
    Ok(KpiDelta {
        t_start: before.taken_at,
        t_end: after.taken_at,
        sent: pair_delta(KpiId::Sent, a.sent, b.sent)?,
        received: pair_delta(KpiId::Received, a.received, b.received)?,
        lost: pair_delta(KpiId::Lost, a.lost, b.lost)?,
        errors: opt_pair_delta(KpiId::Errors, a.errors, b.errors)?,
        duplicates: pair_delta(KpiId::Duplicates, a.duplicates, b.duplicates)?,
        ofo: pair_delta(KpiId::Ofo, a.ofo, b.ofo)?,
        rtt: a.rtt.as_ref().map(RunningStat::window_stat),
        ofo_dist: a.ofo_dist.window_stat(),
        stalls: opt_event_delta(KpiId::Stalls, a.stalls, b.stalls)?,
        reinjections: opt_event_delta(KpiId::Reinjections, a.reinjections, b.reinjections)?,
        hol_blocking: opt_event_delta(KpiId::HolBlocking, a.hol_blocking, b.hol_blocking)?,
    })
}
