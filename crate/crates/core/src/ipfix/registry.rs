//! The information elements and templates profiles are exported with.
//!
//! Identity fields use standard element ids; everything profile-specific
//! lives under one private enterprise number. The same registry ships as
//! machine-readable JSON in `data/ie-registry.json` so collectors in other
//! languages can consume the format without reading this file; a test keeps
//! the two in lockstep.

use super::codec::TemplateRecord;

/// Private enterprise number carried by every enterprise-specific field.
/// A placeholder from outside the assigned range; replace it before
/// interoperating with anything real.
pub const PEN: u32 = 61440;

/// Set id that carries template records (RFC 7011 section 3.3.2).
pub const TEMPLATE_SET_ID: u16 = 2;

pub const TEMPLATE_ID_V4: u16 = 256;
pub const TEMPLATE_ID_V6: u16 = 257;

pub const RECORD_LEN_V4: usize = 232;
pub const RECORD_LEN_V6: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldDef {
    pub name: &'static str,
    pub ie: u16,
    pub len: u16,
    pub enterprise: bool,
}

const fn std_field(name: &'static str, ie: u16, len: u16) -> FieldDef {
    FieldDef { name, ie, len, enterprise: false }
}

const fn ent_field(name: &'static str, ie: u16, len: u16) -> FieldDef {
    FieldDef { name, ie, len, enterprise: true }
}

pub static IDENTITY_V4: [FieldDef; 4] = [
    std_field("sourceIPv4Address", 8, 4),
    std_field("destinationIPv4Address", 12, 4),
    std_field("sourceTransportPort", 7, 2),
    std_field("destinationTransportPort", 11, 2),
];

pub static IDENTITY_V6: [FieldDef; 4] = [
    std_field("sourceIPv6Address", 27, 16),
    std_field("destinationIPv6Address", 28, 16),
    std_field("sourceTransportPort", 7, 2),
    std_field("destinationTransportPort", 11, 2),
];

/// The profile body, identical across templates.
pub static PROFILE_FIELDS: [FieldDef; 31] = [
    ent_field("transportRole", 1, 1),
    ent_field("egressInterface", 2, 8),
    ent_field("connectionId", 3, 8),
    ent_field("parentConnectionId", 4, 8),
    ent_field("lifecycleFrom", 5, 1),
    ent_field("lifecycleTo", 6, 1),
    ent_field("endReason", 7, 1),
    ent_field("windowStartNs", 8, 8),
    ent_field("windowEndNs", 9, 8),
    ent_field("exportSeq", 10, 8),
    ent_field("sentBytes", 11, 8),
    ent_field("sentPackets", 12, 8),
    ent_field("receivedBytes", 13, 8),
    ent_field("receivedPackets", 14, 8),
    ent_field("lostBytes", 15, 8),
    ent_field("lostPackets", 16, 8),
    ent_field("errorBytes", 17, 8),
    ent_field("errorPackets", 18, 8),
    ent_field("duplicateBytes", 19, 8),
    ent_field("duplicatePackets", 20, 8),
    ent_field("ofoBytes", 21, 8),
    ent_field("ofoPackets", 22, 8),
    ent_field("rttSampleCount", 23, 8),
    ent_field("rttMeanMicros", 24, 8),
    ent_field("rttVarianceMicros2", 25, 8),
    ent_field("ofoDistanceSamples", 26, 8),
    ent_field("ofoDistanceMeanBytes", 27, 8),
    ent_field("ofoDistanceVarianceBytes2", 28, 8),
    ent_field("stallEvents", 29, 8),
    ent_field("reinjectionEvents", 30, 8),
    ent_field("holBlockingEvents", 31, 8),
];

/// Every field of a template, identity first, in record order.
pub fn template_fields(template_id: u16) -> Option<Vec<FieldDef>> {
    let identity: &[FieldDef] = match template_id {
        TEMPLATE_ID_V4 => &IDENTITY_V4,
        TEMPLATE_ID_V6 => &IDENTITY_V6,
        _ => return None,
    };
    Some(identity.iter().chain(PROFILE_FIELDS.iter()).copied().collect())
}

pub fn record_len(template_id: u16) -> Option<usize> {
    match template_id {
        TEMPLATE_ID_V4 => Some(RECORD_LEN_V4),
        TEMPLATE_ID_V6 => Some(RECORD_LEN_V6),
        _ => None,
    }
}

/// Body of a template set announcing both templates, without the set
/// header.
pub fn template_set_body() -> Vec<u8> {
    let mut out = Vec::new();
    for template_id in [TEMPLATE_ID_V4, TEMPLATE_ID_V6] {
        let fields = template_fields(template_id).expect("known template");
        out.extend_from_slice(&template_id.to_be_bytes());
        out.extend_from_slice(&(fields.len() as u16).to_be_bytes());
        for field in &fields {
            if field.enterprise {
                out.extend_from_slice(&(field.ie | 0x8000).to_be_bytes());
                out.extend_from_slice(&field.len.to_be_bytes());
                out.extend_from_slice(&PEN.to_be_bytes());
            } else {
                out.extend_from_slice(&field.ie.to_be_bytes());
                out.extend_from_slice(&field.len.to_be_bytes());
            }
        }
    }
    out
}

/// Whether a learned template matches the layout this exporter announces
/// under the same template id.
pub fn matches_announced(template: &TemplateRecord) -> bool {
    let Some(fields) = template_fields(template.template_id) else {
        return false;
    };
    template.fields.len() == fields.len()
        && template.fields.iter().zip(&fields).all(|(spec, def)| {
            spec.ie == def.ie
                && spec.len == def.len
                && spec.enterprise == if def.enterprise { Some(PEN) } else { None }
        })
}
