//! Connection identity shared by the simulator, aggregator, exporter and
//! collector.

use std::fmt;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

/// Maximum byte length of an egress interface name.
///
/// Interface names travel in a fixed-width exported field, so longer names
/// are rejected when a trace is parsed instead of being silently truncated
/// on the wire.
pub const MAX_IFACE_LEN: usize = 8;

/// Lowest connection id reserved for internally derived connections (the
/// initial subflow of a multipath connection). Trace files must pick their
/// ids below this bound.
pub const DERIVED_UID_BASE: u64 = 1 << 63;

/// Transport personality of a tracked connection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportRole {
    /// A plain TCP connection.
    Tcp,
    /// One TCP subflow of a multipath connection.
    MptcpSubflow,
    /// The multipath meta connection that the application actually talks to.
    MptcpMeta,
}

impl TransportRole {
    /// Single-byte code used in exported records.
    pub fn code(self) -> u8 {
        match self {
            TransportRole::Tcp => 1,
            TransportRole::MptcpSubflow => 2,
            TransportRole::MptcpMeta => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(TransportRole::Tcp),
            2 => Some(TransportRole::MptcpSubflow),
            3 => Some(TransportRole::MptcpMeta),
            _ => None,
        }
    }
}

impl fmt::Display for TransportRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            TransportRole::Tcp => "tcp",
            TransportRole::MptcpSubflow => "mptcp-subflow",
            TransportRole::MptcpMeta => "mptcp-meta",
        };
        f.write_str(name)
    }
}

/// Identity of one tracked connection.
///
/// The `uid` stays stable for the connection's whole life and is never
/// reused within a replay; it is what ties a stream of probe events and the
/// profiles cut from them together. Subflows additionally reference their
/// meta connection through the profile's `meta_uid` field, not through the
/// key.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConnKey {
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub role: TransportRole,
    pub iface: String,
    pub uid: u64,
}

impl ConnKey {
    pub fn is_ipv6(&self) -> bool {
        self.src_ip.is_ipv6()
    }
}

impl fmt::Display for ConnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "#{} {} {}:{} -> {}:{} via {}",
            self.uid, self.role, self.src_ip, self.src_port, self.dst_ip, self.dst_port, self.iface
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn role_codes_round_trip() {
        for role in [
            TransportRole::Tcp,
            TransportRole::MptcpSubflow,
            TransportRole::MptcpMeta,
        ] {
            assert_eq!(TransportRole::from_code(role.code()), Some(role));
        }
        assert_eq!(TransportRole::from_code(0), None);
        assert_eq!(TransportRole::from_code(4), None);
    }

    #[test]
    fn key_display_names_endpoints_and_interface() {
        let key = ConnKey {
            src_ip: "192.0.2.1".parse().unwrap(),
            dst_ip: "198.51.100.9".parse().unwrap(),
            src_port: 44000,
            dst_port: 443,
            role: TransportRole::Tcp,
            iface: "eth0".into(),
            uid: 7,
        };
        assert_eq!(
            key.to_string(),
            "#7 tcp 192.0.2.1:44000 -> 198.51.100.9:443 via eth0"
        );
    }
}
