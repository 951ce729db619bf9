//! Operator queries over stored profiles.
//!
//! Three questions the pipeline exists to answer: how long do connection
//! establishments take, how often does the first handshake need a
//! retransmission, and how much do round-trip times wobble once a
//! connection is up. Each query accepts the same filter so an operator can
//! scope it to an address family, a destination prefix, or a time range.

use std::collections::BTreeMap;
use std::net::IpAddr;

use thiserror::Error;

use crate::aggregator::PerformanceProfile;
use crate::collector::store::StoredProfile;
use crate::fsm::LifecycleState;

/// Address family selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IpVersion {
    V4,
    V6,
}

/// An address prefix in CIDR form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Prefix {
    ip: IpAddr,
    bits: u8,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PrefixError {
    #[error("not an address or CIDR prefix: {0:?}")]
    BadSyntax(String),
    #[error("prefix length {bits} exceeds {max} for this address family")]
    BadBits { bits: u8, max: u8 },
}

impl Prefix {
    /// Parse `addr/bits`. A bare address gets the family's customary
    /// aggregation width: /24 for IPv4, /48 for IPv6.
    pub fn parse(text: &str) -> Result<Self, PrefixError> {
        let (addr, bits) = match text.split_once('/') {
            Some((addr, bits)) => {
                let bits: u8 = bits
                    .parse()
                    .map_err(|_| PrefixError::BadSyntax(text.to_string()))?;
                (addr, Some(bits))
            }
            None => (text, None),
        };
        let ip: IpAddr = addr
            .parse()
            .map_err(|_| PrefixError::BadSyntax(text.to_string()))?;
        let max = if ip.is_ipv4() { 32 } else { 128 };
        let bits = bits.unwrap_or(if ip.is_ipv4() { 24 } else { 48 });
        if bits > max {
            return Err(PrefixError::BadBits { bits, max });
        }
        Ok(Prefix { ip, bits })
    }

    pub fn contains(&self, ip: IpAddr) -> bool {
        match (self.ip, ip) {
            (IpAddr::V4(net), IpAddr::V4(host)) => {
                let mask = if self.bits == 0 { 0 } else { u32::MAX << (32 - self.bits) };
                (u32::from(net) & mask) == (u32::from(host) & mask)
            }
            (IpAddr::V6(net), IpAddr::V6(host)) => {
                let mask = if self.bits == 0 { 0 } else { u128::MAX << (128 - self.bits) };
                (u128::from(net) & mask) == (u128::from(host) & mask)
            }
            _ => false,
        }
    }
}

impl std::fmt::Display for Prefix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.ip, self.bits)
    }
}

/// Which stored profiles a query looks at. All bounds are optional and
/// combine with AND. The time range is half-open, `[from_ns, until_ns)`,
/// and applies to the profile's window end.
#[derive(Clone, Debug, Default)]
pub struct ProfileFilter {
    pub ip_version: Option<IpVersion>,
    pub dst_prefix: Option<Prefix>,
    pub from_ns: Option<u64>,
    pub until_ns: Option<u64>,
}

impl ProfileFilter {
    pub fn matches(&self, profile: &PerformanceProfile) -> bool {
        if let Some(version) = self.ip_version {
            let want_v6 = version == IpVersion::V6;
            if profile.key.is_ipv6() != want_v6 {
                return false;
            }
        }
        if let Some(prefix) = self.dst_prefix {
            if !prefix.contains(profile.key.dst_ip) {
                return false;
            }
        }
        if self.from_ns.is_some_and(|from| profile.kpis.t_end < from) {
            return false;
        }
        if self.until_ns.is_some_and(|until| profile.kpis.t_end >= until) {
            return false;
        }
        true
    }
}

/// Distribution of connection establishment times.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EstablishmentStats {
    pub count: u64,
    /// Lower median: for an even count, the smaller of the two middle
    /// values. Zero when no establishments matched.
    pub median_ns: u64,
    pub mean_ns: f64,
    pub variance_ns2: f64,
}

/// How many establishments needed at least one handshake retransmission.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RetransmissionRatio {
    pub establishments: u64,
    pub with_retransmission: u64,
}

impl RetransmissionRatio {
    /// Fraction of establishments that stalled, zero when none matched.
    pub fn ratio(&self) -> f64 {
        if self.establishments == 0 {
            0.0
        } else {
            self.with_retransmission as f64 / self.establishments as f64
        }
    }
}

/// Round-trip-time variance across steady-state windows, summarized the
/// same way establishment times are.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JitterStats {
    /// Windows that carried at least one round-trip sample.
    pub count: u64,
    /// Lower median of the window variances. Zero when nothing matched.
    pub median_variance_micros2: u64,
    pub mean_variance_micros2: f64,
    /// Population variance of the window variances.
    pub variance_micros4: f64,
}

fn filtered<'a>(
    stored: &'a [StoredProfile],
    filter: &ProfileFilter,
) -> impl Iterator<Item = &'a PerformanceProfile> {
    let filter = filter.clone();
    stored
        .iter()
        .map(|record| &record.profile)
        .filter(move |profile| filter.matches(profile))
}

fn establishment_over<'a, I>(profiles: I) -> EstablishmentStats
where
    I: Iterator<Item = &'a PerformanceProfile>,
{
    let mut durations: Vec<u64> = profiles
        .filter(|p| p.is_establishment())
        .map(|p| p.kpis.t_end - p.kpis.t_start)
        .collect();
    durations.sort_unstable();
    if durations.is_empty() {
        return EstablishmentStats::default();
    }
    let count = durations.len() as u64;
    let median_ns = durations[(durations.len() - 1) / 2];
    let mean_ns = durations.iter().map(|&d| d as f64).sum::<f64>() / count as f64;
    let variance_ns2 = durations
        .iter()
        .map(|&d| {
            let diff = d as f64 - mean_ns;
            diff * diff
        })
        .sum::<f64>()
        / count as f64;
    EstablishmentStats { count, median_ns, mean_ns, variance_ns2 }
}

fn retransmission_over<'a, I>(profiles: I) -> RetransmissionRatio
where
    I: Iterator<Item = &'a PerformanceProfile>,
{
    let mut out = RetransmissionRatio::default();
    for profile in profiles.filter(|p| p.is_establishment()) {
        out.establishments += 1;
        if profile.kpis.stalls.unwrap_or(0) >= 1 {
            out.with_retransmission += 1;
        }
    }
    out
}

fn jitter_over<'a, I>(profiles: I) -> JitterStats
where
    I: Iterator<Item = &'a PerformanceProfile>,
{
    let mut variances: Vec<u64> = Vec::new();
    for profile in profiles {
        let steady = matches!(
            profile.from_state,
            LifecycleState::Established | LifecycleState::Lossy
        );
        if !steady {
            continue;
        }
        let Some(rtt) = profile.kpis.rtt else { continue };
        if rtt.samples == 0 {
            continue;
        }
        variances.push(rtt.variance);
    }
    variances.sort_unstable();
    if variances.is_empty() {
        return JitterStats::default();
    }
    let count = variances.len() as u64;
    let median_variance_micros2 = variances[(variances.len() - 1) / 2];
    let mean = variances.iter().map(|&v| v as f64).sum::<f64>() / count as f64;
    let variance_micros4 = variances
        .iter()
        .map(|&v| {
            let diff = v as f64 - mean;
            diff * diff
        })
        .sum::<f64>()
        / count as f64;
    JitterStats {
        count,
        median_variance_micros2,
        mean_variance_micros2: mean,
        variance_micros4,
    }
}

/// How long establishments took, over profiles that record a completed
/// outbound handshake. Accepted connections and multipath meta
/// connections establish without a tracked handshake window and are out
/// of scope.
pub fn establishment_time(stored: &[StoredProfile], filter: &ProfileFilter) -> EstablishmentStats {
    establishment_over(filtered(stored, filter))
}

/// Share of tracked handshakes that needed a retransmission before
/// completing.
pub fn syn_retransmission(
    stored: &[StoredProfile],
    filter: &ProfileFilter,
) -> RetransmissionRatio {
    retransmission_over(filtered(stored, filter))
}

/// Round-trip variance over windows that started in a data-carrying
/// state and observed at least one sample.
pub fn rtt_jitter(stored: &[StoredProfile], filter: &ProfileFilter) -> JitterStats {
    jitter_over(filtered(stored, filter))
}

/// All three queries computed per egress interface, sorted by interface
/// name.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub group: String,
    pub establishment: EstablishmentStats,
    pub syn_retransmission: RetransmissionRatio,
    pub jitter: JitterStats,
}

pub fn report_by_iface(stored: &[StoredProfile], filter: &ProfileFilter) -> Vec<GroupReport> {
    let mut groups: BTreeMap<&str, Vec<&PerformanceProfile>> = BTreeMap::new();
    for profile in filtered(stored, filter) {
        groups.entry(&profile.key.iface).or_default().push(profile);
    }
    groups
        .into_iter()
        .map(|(iface, profiles)| GroupReport {
            group: iface.to_string(),
            establishment: establishment_over(profiles.iter().copied()),
            syn_retransmission: retransmission_over(profiles.iter().copied()),
            jitter: jitter_over(profiles.iter().copied()),
        })
        .collect()
}
