//! Receives exported messages, decodes them back into profiles, and
//! answers operator queries over what it stored.
//!
//! Ingest never fails: a collector that crashes or rejects a whole
//! datagram because one record is bad loses everything else the exporter
//! sent. Anything undecodable is counted and skipped instead. Templates
//! are learned per exporter and observation domain, so several exporters
//! can share one collector without clobbering each other's templates.

pub mod query;
pub mod store;

use std::collections::HashMap;
use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use crate::aggregator::PerformanceProfile;
use crate::ipfix::codec::{decode_data_record, decode_message, DecodedSet, TemplateRecord};
use crate::ipfix::registry::{matches_announced, record_len};

/// Registered port for flow information export over UDP.
pub const DEFAULT_PORT: u16 = 4739;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestCounters {
    /// Datagrams handed to the collector.
    pub messages: u64,
    /// Datagrams that failed message-level decoding.
    pub malformed_messages: u64,
    /// Template records learned or replaced.
    pub templates_learned: u64,
    /// Profiles decoded successfully.
    pub data_records: u64,
    /// Data sets skipped whole because no usable template was known;
    /// without one, record boundaries are unknowable.
    pub undecodable_sets: u64,
    /// Records whose bytes did not decode, including trailing partials.
    pub record_errors: u64,
}

/// Decodes messages from any number of exporters.
#[derive(Default)]
pub struct Collector {
    templates: HashMap<(SocketAddr, u32, u16), TemplateRecord>,
    counters: IngestCounters,
}

impl Collector {
    pub fn new() -> Self {
        Collector::default()
    }

    pub fn counters(&self) -> &IngestCounters {
        &self.counters
    }

    /// Ingest one datagram, appending decoded profiles to `out`.
    pub fn ingest(&mut self, peer: SocketAddr, datagram: &[u8], out: &mut Vec<PerformanceProfile>) {
        self.counters.messages += 1;
        let message = match decode_message(datagram) {
            Ok(m) => m,
            Err(_) => {
                self.counters.malformed_messages += 1;
                return;
            }
        };
        for set in message.sets {
            match set {
                DecodedSet::Templates(records) => {
                    for record in records {
                        let key = (peer, message.domain, record.template_id);
                        if self.templates.get(&key) != Some(&record) {
                            self.templates.insert(key, record);
                            self.counters.templates_learned += 1;
                        }
                    }
                }
                DecodedSet::Data { set_id, body } => {
                    let known = self
                        .templates
                        .get(&(peer, message.domain, set_id))
                        .is_some_and(matches_announced);
                    if !known {
                        self.counters.undecodable_sets += 1;
                        continue;
                    }
                    let rec_len = record_len(set_id).expect("announced ids only");
                    let chunks = body.chunks_exact(rec_len);
                    if !chunks.remainder().is_empty() {
                        self.counters.record_errors += 1;
                    }
                    for chunk in chunks {
                        match decode_data_record(set_id, chunk) {
                            Ok(profile) => {
                                self.counters.data_records += 1;
                                out.push(profile);
                            }
                            Err(_) => self.counters.record_errors += 1,
                        }
                    }
                }
            }
        }
    }
}

/// When a [`serve_on`] loop should stop. With neither bound set it runs
/// until the process dies.
#[derive(Clone, Debug, Default)]
pub struct ServeLimits {
    /// Stop after receiving this many datagrams.
    pub max_messages: Option<u64>,
    /// Stop once this long passes without traffic.
    pub idle_exit: Option<Duration>,
}

/// Receive datagrams on an already-bound socket, ingesting each and
/// handing decoded profiles to `on_profile` along with the sender.
pub fn serve_on<F>(
    socket: &UdpSocket,
    limits: &ServeLimits,
    collector: &mut Collector,
    mut on_profile: F,
) -> std::io::Result<u64>
where
    F: FnMut(PerformanceProfile, SocketAddr) -> std::io::Result<()>,
{
    socket.set_read_timeout(Some(Duration::from_millis(50)))?;
    let mut buf = [0u8; 65535];
    let mut received = 0u64;
    let mut last_traffic = Instant::now();
    let mut profiles = Vec::new();
    loop {
        if limits.max_messages.is_some_and(|max| received >= max) {
            break;
        }
        match socket.recv_from(&mut buf) {
            Ok((n, peer)) => {
                received += 1;
                last_traffic = Instant::now();
                profiles.clear();
                collector.ingest(peer, &buf[..n], &mut profiles);
                for profile in profiles.drain(..) {
                    on_profile(profile, peer)?;
                }
            }
            Err(e)
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                ) =>
            {
                if limits.idle_exit.is_some_and(|idle| last_traffic.elapsed() >= idle) {
                    break;
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(received)
}
