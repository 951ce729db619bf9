//! Message and record codec.
//!
//! Every message starts with the 16-byte header:
//!
//! ```text
//!  0                   1                   2                   3
//!  0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |       Version Number          |            Length             |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |                           Export Time                         |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |                       Sequence Number                         |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |                    Observation Domain ID                      |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! ```
//!
//! followed by sets, each introduced by a 4-byte set header:
//!
//! ```text
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |            Set ID             |          Set Length           |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! ```
//!
//! The sequence number counts data records sent before the message, so a
//! receiver can detect datagram loss. Template records announce fields as
//! `(id, length)` pairs; an id with the high bit set is followed by the
//! 4-byte enterprise number it belongs to.
//!
//! Data records are fixed-size: all numbers unsigned big-endian, the
//! interface name zero-padded. Fields the transport role does not track
//! are zero on the wire; the decoder turns them back into absent values.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use super::registry;
use super::IpfixError;
use crate::aggregator::PerformanceProfile;
use crate::conn::{ConnKey, TransportRole, MAX_IFACE_LEN};
use crate::fsm::{EndReason, LifecycleState};
use crate::kpi::{CounterPair, KpiDelta, WindowStat};

pub const VERSION: u16 = 10;

/// One set, already encoded except for its header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Set {
    pub set_id: u16,
    pub body: Vec<u8>,
}

/// One field of a learned template.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldSpec {
    pub ie: u16,
    pub len: u16,
    pub enterprise: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateRecord {
    pub template_id: u16,
    pub fields: Vec<FieldSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecodedSet {
    Templates(Vec<TemplateRecord>),
    Data { set_id: u16, body: Vec<u8> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedMessage {
    pub export_time: u32,
    pub sequence: u32,
    pub domain: u32,
    pub sets: Vec<DecodedSet>,
}

/// Assemble one message from encoded sets.
pub fn encode_message(export_time: u32, sequence: u32, domain: u32, sets: &[Set]) -> Vec<u8> {
    let total: usize = 16 + sets.iter().map(|s| 4 + s.body.len()).sum::<usize>();
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&VERSION.to_be_bytes());
    out.extend_from_slice(&(total as u16).to_be_bytes());
    out.extend_from_slice(&export_time.to_be_bytes());
    out.extend_from_slice(&sequence.to_be_bytes());
    out.extend_from_slice(&domain.to_be_bytes());
    for set in sets {
        out.extend_from_slice(&set.set_id.to_be_bytes());
        out.extend_from_slice(&((4 + set.body.len()) as u16).to_be_bytes());
        out.extend_from_slice(&set.body);
    }
    out
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_pair(out: &mut Vec<u8>, pair: CounterPair) {
    put_u64(out, pair.bytes);
    put_u64(out, pair.packets);
}

fn put_stat(out: &mut Vec<u8>, stat: WindowStat) {
    put_u64(out, stat.samples);
    put_u64(out, stat.mean);
    put_u64(out, stat.variance);
}

/// Encode one profile into its fixed-size record. Returns the template id
/// the record belongs to.
pub fn encode_data_record(profile: &PerformanceProfile) -> Result<(u16, Vec<u8>), IpfixError> {
    let key = &profile.key;
    let k = &profile.kpis;
    let mut out = Vec::with_capacity(registry::RECORD_LEN_V6);
    let template_id = match (key.src_ip, key.dst_ip) {
        (IpAddr::V4(src), IpAddr::V4(dst)) => {
            out.extend_from_slice(&src.octets());
            out.extend_from_slice(&dst.octets());
            registry::TEMPLATE_ID_V4
        }
        (IpAddr::V6(src), IpAddr::V6(dst)) => {
            out.extend_from_slice(&src.octets());
            out.extend_from_slice(&dst.octets());
            registry::TEMPLATE_ID_V6
        }
        _ => return Err(IpfixError::MixedAddressFamilies),
    };
    put_u16(&mut out, key.src_port);
    put_u16(&mut out, key.dst_port);

    out.push(key.role.code());
    if key.iface.len() > MAX_IFACE_LEN {
        return Err(IpfixError::IfaceTooLong);
    }
    let mut iface = [0u8; MAX_IFACE_LEN];
    iface[..key.iface.len()].copy_from_slice(key.iface.as_bytes());
    out.extend_from_slice(&iface);
    put_u64(&mut out, key.uid);
    put_u64(&mut out, profile.meta_uid.unwrap_or(0));
    out.push(profile.from_state.code());
    out.push(profile.to_state.code());
    out.push(profile.end_reason().map(EndReason::code).unwrap_or(0));
    put_u64(&mut out, k.t_start);
    put_u64(&mut out, k.t_end);
    put_u64(&mut out, profile.export_seq);

    put_pair(&mut out, k.sent);
    put_pair(&mut out, k.received);
    put_pair(&mut out, k.lost);
    put_pair(&mut out, k.errors.unwrap_or(CounterPair::ZERO));
    put_pair(&mut out, k.duplicates);
    put_pair(&mut out, k.ofo);
    put_stat(&mut out, k.rtt.unwrap_or_default());
    put_stat(&mut out, k.ofo_dist);
    put_u64(&mut out, k.stalls.unwrap_or(0));
    put_u64(&mut out, k.reinjections.unwrap_or(0));
    put_u64(&mut out, k.hol_blocking.unwrap_or(0));

    debug_assert_eq!(Some(out.len()), registry::record_len(template_id));
    Ok((template_id, out))
}

pub fn decode_message(bytes: &[u8]) -> Result<DecodedMessage, IpfixError> {
    if bytes.len() < 16 {
        return Err(IpfixError::TooShort { len: bytes.len() });
    }
    let version = u16::from_be_bytes([bytes[0], bytes[1]]);
    if version != VERSION {
        return Err(IpfixError::BadVersion(version));
    }
    let declared = u16::from_be_bytes([bytes[2], bytes[3]]) as usize;
    if declared != bytes.len() {
        return Err(IpfixError::LengthMismatch { declared, actual: bytes.len() });
    }
    let export_time = u32::from_be_bytes(bytes[4..8].try_into().unwrap());
    let sequence = u32::from_be_bytes(bytes[8..12].try_into().unwrap());
    let domain = u32::from_be_bytes(bytes[12..16].try_into().unwrap());

    let mut sets = Vec::new();
    let mut pos = 16;
    while pos < bytes.len() {
        if bytes.len() - pos < 4 {
            return Err(IpfixError::BadSetLength { len: bytes.len() - pos });
        }
        let set_id = u16::from_be_bytes([bytes[pos], bytes[pos + 1]]);
        let set_len = u16::from_be_bytes([bytes[pos + 2], bytes[pos + 3]]) as usize;
        if set_len < 4 || pos + set_len > bytes.len() {
            return Err(IpfixError::BadSetLength { len: set_len });
        }
        let body = &bytes[pos + 4..pos + set_len];
        if set_id == registry::TEMPLATE_SET_ID {
            sets.push(DecodedSet::Templates(parse_templates(body)?));
        } else if set_id >= 256 {
            sets.push(DecodedSet::Data { set_id, body: body.to_vec() });
        } else {
            return Err(IpfixError::BadSetId(set_id));
        }
        pos += set_len;
    }
    Ok(DecodedMessage { export_time, sequence, domain, sets })
}

fn parse_templates(body: &[u8]) -> Result<Vec<TemplateRecord>, IpfixError> {
    let mut records = Vec::new();
    let mut pos = 0;
    while body.len() - pos >= 4 {
        let template_id = u16::from_be_bytes([body[pos], body[pos + 1]]);
        let count = u16::from_be_bytes([body[pos + 2], body[pos + 3]]) as usize;
        pos += 4;
        let mut fields = Vec::with_capacity(count);
        for _ in 0..count {
            if body.len() - pos < 4 {
                return Err(IpfixError::TruncatedTemplates);
            }
            let raw = u16::from_be_bytes([body[pos], body[pos + 1]]);
            let len = u16::from_be_bytes([body[pos + 2], body[pos + 3]]);
            pos += 4;
            let enterprise = if raw & 0x8000 != 0 {
                if body.len() - pos < 4 {
                    return Err(IpfixError::TruncatedTemplates);
                }
                let pen = u32::from_be_bytes(body[pos..pos + 4].try_into().unwrap());
                pos += 4;
                Some(pen)
            } else {
                None
            };
            fields.push(FieldSpec { ie: raw & 0x7fff, len, enterprise });
        }
        records.push(TemplateRecord { template_id, fields });
    }
    if pos != body.len() {
        return Err(IpfixError::TruncatedTemplates);
    }
    Ok(records)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> u8 {
        let v = self.buf[self.pos];
        self.pos += 1;
        v
    }

    fn u16(&mut self) -> u16 {
        let v = u16::from_be_bytes(self.buf[self.pos..self.pos + 2].try_into().unwrap());
        self.pos += 2;
        v
    }

    fn u64(&mut self) -> u64 {
        let v = u64::from_be_bytes(self.buf[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        v
    }

    fn take<const N: usize>(&mut self) -> [u8; N] {
        let v: [u8; N] = self.buf[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        v
    }

    fn pair(&mut self) -> CounterPair {
        CounterPair { bytes: self.u64(), packets: self.u64() }
    }

    fn stat(&mut self) -> WindowStat {
        WindowStat { samples: self.u64(), mean: self.u64(), variance: self.u64() }
    }
}

fn state_from_code(code: u8, reason: u8) -> Result<LifecycleState, IpfixError> {
    let state = match code {
        0 => LifecycleState::Init,
        1 => LifecycleState::Connecting,
        2 => LifecycleState::Established,
        3 => LifecycleState::Lossy,
        4 => {
            let reason = EndReason::from_code(reason).ok_or(IpfixError::BadReason(reason))?;
            return Ok(LifecycleState::Closed(reason));
        }
        other => return Err(IpfixError::BadState(other)),
    };
    if reason != 0 {
        return Err(IpfixError::BadReason(reason));
    }
    Ok(state)
}

/// Decode one fixed-size record of a template this exporter announces. The
/// caller is responsible for having checked the announcing template against
/// [`registry::matches_announced`].
pub fn decode_data_record(template_id: u16, record: &[u8]) -> Result<PerformanceProfile, IpfixError> {
    let expected = registry::record_len(template_id).ok_or(IpfixError::UnknownTemplateId(template_id))?;
    if record.len() != expected {
        return Err(IpfixError::PartialRecord { len: record.len(), record: expected });
    }
    let mut r = Reader { buf: record, pos: 0 };
    let (src_ip, dst_ip) = if template_id == registry::TEMPLATE_ID_V4 {
        (
            IpAddr::V4(Ipv4Addr::from(r.take::<4>())),
            IpAddr::V4(Ipv4Addr::from(r.take::<4>())),
        )
    } else {
        (
            IpAddr::V6(Ipv6Addr::from(r.take::<16>())),
            IpAddr::V6(Ipv6Addr::from(r.take::<16>())),
        )
    };
    let src_port = r.u16();
    let dst_port = r.u16();

    let role_code = r.u8();
    let role = TransportRole::from_code(role_code).ok_or(IpfixError::BadRole(role_code))?;
    let iface_raw = r.take::<MAX_IFACE_LEN>();
    let iface_len = iface_raw.iter().position(|&b| b == 0).unwrap_or(MAX_IFACE_LEN);
    let iface = std::str::from_utf8(&iface_raw[..iface_len])
        .map_err(|_| IpfixError::IfaceNotUtf8)?
        .to_string();
    let uid = r.u64();
    let parent = r.u64();
    let from_code = r.u8();
    let to_code = r.u8();
    let reason_code = r.u8();
    let from_state = state_from_code(from_code, 0)?;
    let to_state = state_from_code(to_code, reason_code)?;
    let t_start = r.u64();
    let t_end = r.u64();
    let export_seq = r.u64();

    let sent = r.pair();
    let received = r.pair();
    let lost = r.pair();
    let errors = r.pair();
    let duplicates = r.pair();
    let ofo = r.pair();
    let rtt = r.stat();
    let ofo_dist = r.stat();
    let stalls = r.u64();
    let reinjections = r.u64();
    let hol_blocking = r.u64();
    debug_assert_eq!(r.pos, record.len());

    // Reconstruct field presence from the role, mirroring what each role
    // tracks.
    let tcp_like = role != TransportRole::MptcpMeta;
    let kpis = KpiDelta {
        t_start,
        t_end,
        sent,
        received,
        lost,
        errors: tcp_like.then_some(errors),
        duplicates,
        ofo,
        rtt: tcp_like.then_some(rtt),
        ofo_dist,
        stalls: tcp_like.then_some(stalls),
        reinjections: (role == TransportRole::MptcpSubflow).then_some(reinjections),
        hol_blocking: (role == TransportRole::MptcpMeta).then_some(hol_blocking),
    };
    Ok(PerformanceProfile {
        key: ConnKey { src_ip, dst_ip, src_port, dst_port, role, iface, uid },
        meta_uid: (parent != 0).then_some(parent),
        from_state,
        to_state,
        export_seq,
        kpis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregator::Aggregator;
    use crate::sim::{SimConfig, Simulator};
    use crate::trace::TraceScript;

    fn profiles_for(text: &str) -> Vec<PerformanceProfile> {
        let script = TraceScript::parse(text).expect("script parses");
        let mut events = Vec::new();
        Simulator::new(SimConfig::default()).replay(&script, &mut events).expect("replay");
        let mut aggregator = Aggregator::new();
        let mut profiles = Vec::new();
        for event in events {
            if let Some(p) = aggregator.consume(&event).expect("consume") {
                profiles.push(p);
            }
        }
        profiles
    }

    fn mixed_role_profiles() -> Vec<PerformanceProfile> {
        profiles_for(
            "@0 conn 1 open 10.0.0.1:40000 -> 10.0.0.2:80 via eth0\n\
             @100 conn 1 established rtt=30000\n\
             @200 conn 1 send 1400\n\
             @300 conn 1 recv seq=0 len=1000\n\
             @350 conn 1 recv seq=2000 len=500\n\
             @400 conn 1 rto retrans=1400\n\
             @500 conn 1 recovered\n\
             @600 conn 1 close fin\n\
             @0 conn 2 open [2001:db8::1]:40000 -> [2001:db8::2]:443 via wan0\n\
             @150 conn 2 established rtt=80000\n\
             @250 conn 2 corrupt 700\n\
             @650 conn 2 close rst\n\
             @0 conn 3 open 10.0.0.3:41000 -> 10.0.0.4:80 via eth1 mptcp\n\
             @120 conn 3 established rtt=45000\n\
             @220 conn 3 join subflow=4\n\
             @320 conn 4 reinject 250 from=3\n\
             @420 conn 3 recv seq=0 len=250\n\
             @460 conn 3 recv seq=0 len=250\n\
             @520 conn 3 meta_rto\n\
             @560 conn 3 recovered\n\
             @700 conn 3 close fin\n",
        )
    }

    #[test]
    fn records_round_trip_field_for_field() {
        let profiles = mixed_role_profiles();
        assert!(profiles.len() >= 8);
        let mut saw_v6 = false;
        let mut saw_meta = false;
        for profile in &profiles {
            let (template_id, record) = encode_data_record(profile).expect("encode");
            assert_eq!(record.len(), registry::record_len(template_id).unwrap());
            let back = decode_data_record(template_id, &record).expect("decode");
            assert_eq!(&back, profile);
            saw_v6 |= template_id == registry::TEMPLATE_ID_V6;
            saw_meta |= profile.key.role == TransportRole::MptcpMeta;
        }
        assert!(saw_v6);
        assert!(saw_meta);
    }

    #[test]
    fn absent_fields_are_zero_on_the_wire() {
        let profiles = mixed_role_profiles();
        let meta = profiles
            .iter()
            .find(|p| p.key.role == TransportRole::MptcpMeta && p.kpis.duplicates.packets > 0)
            .expect("meta profile with traffic");
        let (_, record) = encode_data_record(meta).expect("encode");
        // After 12 identity bytes: role, iface, ids, states, window and
        // export counters take 52 bytes, the six counter pairs 96. The rtt
        // triple follows.
        let rtt_offset = 12 + 52 + 96;
        assert!(record[rtt_offset..rtt_offset + 24].iter().all(|&b| b == 0));
        assert!(meta.kpis.rtt.is_none());
        let back = decode_data_record(registry::TEMPLATE_ID_V4, &record).unwrap();
        assert_eq!(back.kpis.rtt, None);
        assert_eq!(back.kpis.errors, None);
        assert_eq!(back.kpis.stalls, None);
        assert_eq!(back.kpis.hol_blocking, meta.kpis.hol_blocking);
    }

    #[test]
    fn message_headers_carry_version_and_exact_length() {
        let body = registry::template_set_body();
        let message = encode_message(1234, 7, 9, &[Set { set_id: registry::TEMPLATE_SET_ID, body }]);
        assert_eq!(u16::from_be_bytes([message[0], message[1]]), VERSION);
        assert_eq!(u16::from_be_bytes([message[2], message[3]]) as usize, message.len());
        let decoded = decode_message(&message).expect("decode");
        assert_eq!(decoded.export_time, 1234);
        assert_eq!(decoded.sequence, 7);
        assert_eq!(decoded.domain, 9);
    }

    #[test]
    fn announced_templates_parse_back_to_the_registry_layout() {
        let message = encode_message(
            0,
            0,
            1,
            &[Set { set_id: registry::TEMPLATE_SET_ID, body: registry::template_set_body() }],
        );
        let decoded = decode_message(&message).unwrap();
        let DecodedSet::Templates(records) = &decoded.sets[0] else {
            panic!("expected template set");
        };
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].template_id, registry::TEMPLATE_ID_V4);
        assert_eq!(records[1].template_id, registry::TEMPLATE_ID_V6);
        for record in records {
            assert_eq!(record.fields.len(), 35);
            assert!(registry::matches_announced(record));
        }
        let mut foreign = records[0].clone();
        foreign.fields[10].len = 4;
        assert!(!registry::matches_announced(&foreign));
    }

    #[test]
    fn malformed_messages_are_rejected() {
        assert_eq!(decode_message(&[0u8; 8]), Err(IpfixError::TooShort { len: 8 }));

        let profiles = mixed_role_profiles();
        let (template_id, record) = encode_data_record(&profiles[0]).unwrap();
        let mut message = encode_message(0, 0, 1, &[Set { set_id: template_id, body: record }]);

        let mut wrong_version = message.clone();
        wrong_version[0..2].copy_from_slice(&9u16.to_be_bytes());
        assert_eq!(decode_message(&wrong_version), Err(IpfixError::BadVersion(9)));

        let mut wrong_length = message.clone();
        wrong_length[2..4].copy_from_slice(&13u16.to_be_bytes());
        assert_eq!(
            decode_message(&wrong_length),
            Err(IpfixError::LengthMismatch { declared: 13, actual: message.len() })
        );

        // Corrupt the role byte inside the record (set header is 4 bytes,
        // identity 12).
        message[16 + 4 + 12] = 9;
        let decoded = decode_message(&message).unwrap();
        let DecodedSet::Data { set_id, body } = &decoded.sets[0] else {
            panic!("expected data set");
        };
        assert_eq!(decode_data_record(*set_id, body), Err(IpfixError::BadRole(9)));
    }

    #[test]
    fn partial_records_are_rejected() {
        let profiles = mixed_role_profiles();
        let (template_id, record) = encode_data_record(&profiles[0]).unwrap();
        assert_eq!(
            decode_data_record(template_id, &record[..100]),
            Err(IpfixError::PartialRecord { len: 100, record: record.len() })
        );
        assert_eq!(
            decode_data_record(900, &record),
            Err(IpfixError::UnknownTemplateId(900))
        );
    }
}
