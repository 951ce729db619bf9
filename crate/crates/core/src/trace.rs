//! Line-oriented trace scripts that drive the connection simulator.
//!
//! A script is UTF-8 text, one directive per line. `#` starts a comment and
//! blank lines are skipped. Timestamps are trace-relative nanoseconds and
//! must not decrease for any single connection; directives for different
//! connections may interleave freely and are replayed in global timestamp
//! order (file order breaks ties).
//!
//! ```text
//! @<time_ns> conn <uid> open <src_ip>:<sport> -> <dst_ip>:<dport> via <iface> [mptcp]
//! @<t> conn <uid> accepted
//! @<t> conn <uid> connect_error <errno>
//! @<t> conn <uid> established rtt=<us>
//! @<t> conn <uid> send <len>
//! @<t> conn <uid> recv seq=<n> len=<len>
//! @<t> conn <uid> rtt_sample <us>
//! @<t> conn <uid> rto [retrans=<bytes>]
//! @<t> conn <uid> recovered
//! @<t> conn <uid> corrupt <len>
//! @<t> conn <uid> close fin|rst|drop
//! @<t> conn <uid> join subflow=<uid2>
//! @<t> conn <uid> reinject <bytes> from=<uid2>
//! @<t> conn <uid> meta_rto
//! ```
//!
//! IPv6 endpoints are written in brackets (`[2001:db8::1]:443`). Connection
//! ids are decimal, at least 1 and below 2^63; ids with the top bit set are
//! reserved for connections the simulator derives itself. An `open` whose
//! connection is later `accepted` describes an inbound connection: it only
//! declares the endpoints, and the connection starts existing at the
//! `accepted` instant.
//!
//! With the `mptcp` flag, `open` describes a connection that upgrades to
//! multipath at establishment. From then on the script id addresses the meta
//! connection (`send`, `recv` with data-level sequence numbers, `meta_rto`,
//! `join`, `close`), while subflows created with `join` are addressed by
//! their own ids. The initial subflow is tracked automatically under a
//! derived id.

use std::collections::HashMap;
use std::collections::HashSet;
use std::net::SocketAddr;

use thiserror::Error;

use crate::conn::{DERIVED_UID_BASE, MAX_IFACE_LEN};

/// Largest segment length a script may carry on a single directive.
pub const MAX_SEGMENT_LEN: u64 = 1 << 30;

/// How a `close` directive describes the teardown.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloseKind {
    /// Orderly close, both FINs exchanged and acknowledged.
    Fin,
    /// Reset.
    Rst,
    /// Observation simply stopped.
    Drop,
}

/// One parsed directive.
#[derive(Clone, Debug, PartialEq)]
pub struct Directive {
    pub at: u64,
    pub uid: u64,
    pub op: DirectiveOp,
    /// 1-based source line, for error reporting.
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DirectiveOp {
    Open { src: SocketAddr, dst: SocketAddr, iface: String, mptcp: bool },
    Accepted,
    ConnectError { errno: i32 },
    Established { rtt_us: u64 },
    Send { len: u64 },
    Recv { seq: u64, len: u64 },
    RttSample { us: u64 },
    Rto { retrans_bytes: u64 },
    Recovered,
    Corrupt { len: u64 },
    Close { kind: CloseKind },
    Join { subflow_uid: u64 },
    Reinject { bytes: u64, from_uid: u64 },
    MetaRto,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {kind}")]
pub struct ScriptError {
    pub line: usize,
    pub kind: ScriptErrorKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScriptErrorKind {
    #[error("{0}")]
    Syntax(String),
    #[error("unknown directive `{0}`")]
    UnknownDirective(String),
    #[error("connection id must be between 1 and 2^63-1")]
    UidOutOfRange,
    #[error("connection {0} used before it is opened or joined")]
    UndeclaredConn(u64),
    #[error("connection id {0} is already in use; ids are never reused within a replay")]
    UidReused(u64),
    #[error("timestamps for connection {0} decrease")]
    TimeRegression(u64),
    #[error("interface name `{0}` exceeds {MAX_IFACE_LEN} bytes")]
    IfaceTooLong(String),
    #[error("length {0} exceeds the per-directive maximum of {MAX_SEGMENT_LEN}")]
    LenTooLarge(u64),
    #[error("length must not be zero")]
    ZeroLen,
}

/// A fully parsed script.
#[derive(Clone, Debug)]
pub struct TraceScript {
    pub directives: Vec<Directive>,
    /// Script ids whose connection is inbound (declared by `open`, brought
    /// to life by `accepted`).
    pub inbound: HashSet<u64>,
}

impl TraceScript {
    pub fn parse(text: &str) -> Result<TraceScript, ScriptError> {
        Parser::default().parse(text)
    }

    /// Directive indices in replay order: global timestamp order, file
    /// order breaking ties.
    pub fn replay_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.directives.len()).collect();
        order.sort_by_key(|&i| self.directives[i].at);
        order
    }
}

#[derive(Default)]
struct Parser {
    directives: Vec<Directive>,
    declared: HashSet<u64>,
    last_at: HashMap<u64, u64>,
    /// Opened ids whose direction is not yet resolved.
    pending_direction: HashSet<u64>,
    inbound: HashSet<u64>,
}

impl Parser {
    fn parse(mut self, text: &str) -> Result<TraceScript, ScriptError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            self.parse_line(line, content)
                .map_err(|kind| ScriptError { line, kind })?;
        }
        Ok(TraceScript { directives: self.directives, inbound: self.inbound })
    }

    fn parse_line(&mut self, line: usize, content: &str) -> Result<(), ScriptErrorKind> {
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.len() < 4 || tokens[1] != "conn" {
            return Err(syntax("expected `@<time> conn <uid> <directive> ...`"));
        }
        let at = tokens[0]
            .strip_prefix('@')
            .ok_or_else(|| syntax("timestamp must start with `@`"))?
            .parse::<u64>()
            .map_err(|_| syntax("bad timestamp"))?;
        let uid = tokens[2].parse::<u64>().map_err(|_| syntax("bad connection id"))?;
        if uid == 0 || uid >= DERIVED_UID_BASE {
            return Err(ScriptErrorKind::UidOutOfRange);
        }

        let rest = &tokens[4..];
        let op = match tokens[3] {
            "open" => self.parse_open(rest)?,
            "accepted" => no_args(rest, DirectiveOp::Accepted)?,
            "connect_error" => DirectiveOp::ConnectError { errno: one_num::<i32>(rest, "errno")? },
            "established" => DirectiveOp::Established { rtt_us: one_kv(rest, "rtt")? },
            "send" => DirectiveOp::Send { len: segment_len(one_num(rest, "length")?)? },
            "recv" => {
                let (seq, len) = two_kv(rest, "seq", "len")?;
                DirectiveOp::Recv { seq, len: segment_len(len)? }
            }
            "rtt_sample" => DirectiveOp::RttSample { us: one_num(rest, "microseconds")? },
            "rto" => match rest {
                [] => DirectiveOp::Rto { retrans_bytes: 0 },
                [kv] => DirectiveOp::Rto { retrans_bytes: kv_num(kv, "retrans")? },
                _ => return Err(syntax("rto takes at most `retrans=<bytes>`")),
            },
            "recovered" => no_args(rest, DirectiveOp::Recovered)?,
            "corrupt" => DirectiveOp::Corrupt { len: segment_len(one_num(rest, "length")?)? },
            "close" => match rest {
                ["fin"] => DirectiveOp::Close { kind: CloseKind::Fin },
                ["rst"] => DirectiveOp::Close { kind: CloseKind::Rst },
                ["drop"] => DirectiveOp::Close { kind: CloseKind::Drop },
                _ => return Err(syntax("close takes exactly one of fin|rst|drop")),
            },
            "join" => DirectiveOp::Join { subflow_uid: one_kv(rest, "subflow")? },
            "reinject" => match rest {
                [bytes, kv] => DirectiveOp::Reinject {
                    bytes: segment_len(bytes.parse().map_err(|_| syntax("bad byte count"))?)?,
                    from_uid: kv_num(kv, "from")?,
                },
                _ => return Err(syntax("reinject takes `<bytes> from=<uid>`")),
            },
            "meta_rto" => no_args(rest, DirectiveOp::MetaRto)?,
            other => return Err(ScriptErrorKind::UnknownDirective(other.to_string())),
        };

        self.check_uids(uid, at, &op)?;
        self.directives.push(Directive { at, uid, op, line });
        Ok(())
    }

    fn parse_open(&self, rest: &[&str]) -> Result<DirectiveOp, ScriptErrorKind> {
        let (endpoints, tail) = match rest {
            [src, "->", dst, "via", iface] => ((src, dst, iface), false),
            [src, "->", dst, "via", iface, "mptcp"] => ((src, dst, iface), true),
            _ => {
                return Err(syntax(
                    "open takes `<src_ip>:<sport> -> <dst_ip>:<dport> via <iface> [mptcp]`",
                ))
            }
        };
        let (src, dst, iface) = endpoints;
        let src: SocketAddr = src.parse().map_err(|_| syntax("bad source endpoint"))?;
        let dst: SocketAddr = dst.parse().map_err(|_| syntax("bad destination endpoint"))?;
        if src.is_ipv4() != dst.is_ipv4() {
            return Err(syntax("source and destination address families differ"));
        }
        if iface.len() > MAX_IFACE_LEN {
            return Err(ScriptErrorKind::IfaceTooLong(iface.to_string()));
        }
        Ok(DirectiveOp::Open { src, dst, iface: iface.to_string(), mptcp: tail })
    }

    fn check_uids(&mut self, uid: u64, at: u64, op: &DirectiveOp) -> Result<(), ScriptErrorKind> {
        match op {
            DirectiveOp::Open { .. } => {
                if !self.declared.insert(uid) {
                    return Err(ScriptErrorKind::UidReused(uid));
                }
                self.pending_direction.insert(uid);
            }
            DirectiveOp::Join { subflow_uid } => {
                if !self.declared.contains(&uid) {
                    return Err(ScriptErrorKind::UndeclaredConn(uid));
                }
                if *subflow_uid == 0 || *subflow_uid >= DERIVED_UID_BASE {
                    return Err(ScriptErrorKind::UidOutOfRange);
                }
                if !self.declared.insert(*subflow_uid) {
                    return Err(ScriptErrorKind::UidReused(*subflow_uid));
                }
            }
            _ => {
                if !self.declared.contains(&uid) {
                    return Err(ScriptErrorKind::UndeclaredConn(uid));
                }
            }
        }
        if self.pending_direction.contains(&uid) {
            match op {
                DirectiveOp::Accepted => {
                    self.inbound.insert(uid);
                    self.pending_direction.remove(&uid);
                }
                DirectiveOp::Open { .. } => {}
                _ => {
                    self.pending_direction.remove(&uid);
                }
            }
        }
        if let Some(&prev) = self.last_at.get(&uid) {
            if at < prev {
                return Err(ScriptErrorKind::TimeRegression(uid));
            }
        }
        self.last_at.insert(uid, at);
        Ok(())
    }
}

fn syntax(msg: &str) -> ScriptErrorKind {
    ScriptErrorKind::Syntax(msg.to_string())
}

fn segment_len(len: u64) -> Result<u64, ScriptErrorKind> {
    if len == 0 {
        Err(ScriptErrorKind::ZeroLen)
    } else if len > MAX_SEGMENT_LEN {
        Err(ScriptErrorKind::LenTooLarge(len))
    } else {
        Ok(len)
    }
}

fn no_args(rest: &[&str], op: DirectiveOp) -> Result<DirectiveOp, ScriptErrorKind> {
    if rest.is_empty() {
        Ok(op)
    } else {
        Err(syntax("directive takes no arguments"))
    }
}

fn one_num<T: std::str::FromStr>(rest: &[&str], what: &str) -> Result<T, ScriptErrorKind> {
    match rest {
        [value] => value.parse().map_err(|_| syntax(&format!("bad {what}"))),
        _ => Err(syntax(&format!("expected a single {what}"))),
    }
}

fn kv_num<T: std::str::FromStr>(token: &str, key: &str) -> Result<T, ScriptErrorKind> {
    match token.split_once('=') {
        Some((k, v)) if k == key => v.parse().map_err(|_| syntax(&format!("bad {key} value"))),
        _ => Err(syntax(&format!("expected `{key}=<value>`"))),
    }
}

fn one_kv<T: std::str::FromStr>(rest: &[&str], key: &str) -> Result<T, ScriptErrorKind> {
    match rest {
        [token] => kv_num(token, key),
        _ => Err(syntax(&format!("expected `{key}=<value>`"))),
    }
}

fn two_kv(rest: &[&str], k1: &str, k2: &str) -> Result<(u64, u64), ScriptErrorKind> {
    match rest {
        [a, b] => Ok((kv_num(a, k1)?, kv_num(b, k2)?)),
        _ => Err(syntax(&format!("expected `{k1}=<value> {k2}=<value>`"))),
    }
}
