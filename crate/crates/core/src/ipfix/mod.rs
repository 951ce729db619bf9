//! Wire format for exported profiles: template and information element
//! registry plus the message codec.
//!
//! Messages follow the flow information export format (RFC 7011): a 16-byte
//! message header, then sets. Set id 2 carries template records; data sets
//! use the template id as their set id. One template exists per address
//! family, shared by every transport role; fields a role does not track are
//! zero on the wire and reconstructed as absent from the role byte.

pub mod codec;
pub mod registry;

use thiserror::Error;

use crate::conn::MAX_IFACE_LEN;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IpfixError {
    #[error("message of {len} bytes is shorter than the 16-byte header")]
    TooShort { len: usize },
    #[error("unsupported message version {0}")]
    BadVersion(u16),
    #[error("message declares {declared} bytes but carries {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("set length {len} is invalid")]
    BadSetLength { len: usize },
    #[error("set id {0} is neither a template set nor a data set")]
    BadSetId(u16),
    #[error("template set ends mid-record")]
    TruncatedTemplates,
    #[error("template {0} is not one this exporter announces")]
    UnknownTemplateId(u16),
    #[error("data of {len} bytes is not a whole {record}-byte record")]
    PartialRecord { len: usize, record: usize },
    #[error("unknown transport role {0}")]
    BadRole(u8),
    #[error("unknown lifecycle state {0}")]
    BadState(u8),
    #[error("unknown end reason {0}")]
    BadReason(u8),
    #[error("interface name exceeds {MAX_IFACE_LEN} bytes")]
    IfaceTooLong,
    #[error("interface name is not valid utf-8")]
    IfaceNotUtf8,
    #[error("source and destination address families differ")]
    MixedAddressFamilies,
}
