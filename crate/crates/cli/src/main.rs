//! `flowprof`: replay scripted connection traces into performance
//! profiles, export them over IPFIX, collect them into a store, and run
//! operator reports over what was collected.
//!
//! Exit codes: 0 success, 1 usage (bad flags, unreadable paths, an MTU
//! below the wire minimum), 2 script problems (parse errors and replay
//! violations), 3 internal failures (sockets, storage).
//!
//! Flags beat environment variables, which beat built-in defaults. The
//! recognized variables are `FLOWPROF_STORE`, `FLOWPROF_LISTEN`,
//! `FLOWPROF_COLLECTOR`, `FLOWPROF_MTU` and `FLOWPROF_FORMAT`.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use flowprof_core::aggregator::{
    run_pipeline, BufferConfig, ExportBuffer, ExportError, PerformanceProfile, PipelineError,
};
use flowprof_core::collector::query::{
    establishment_time, report_by_iface, rtt_jitter, syn_retransmission, EstablishmentStats,
    IpVersion, JitterStats, Prefix, ProfileFilter, RetransmissionRatio,
};
use flowprof_core::collector::store::{read_all, ProfileStore, ReceiveMeta, StoredProfile};
use flowprof_core::collector::{serve_on, Collector, ServeLimits, DEFAULT_PORT};
use flowprof_core::sim::{SimConfig, SimViolation, DEFAULT_CAPACITY};
use flowprof_core::trace::{ScriptError, TraceScript};

#[derive(Parser)]
#[command(name = "flowprof", version, about = "Transport performance profiles from scripted traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a trace and write the emitted profiles in store format.
    Replay {
        /// Trace script to replay.
        trace: PathBuf,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Connection table capacity.
        #[arg(long, default_value_t = DEFAULT_CAPACITY)]
        capacity: usize,
    },
    /// Replay a trace and send the profiles to a collector as IPFIX
    /// datagrams.
    Export {
        /// Trace script to replay.
        trace: PathBuf,
        /// Collector endpoint, host:port.
        #[arg(long, env = "FLOWPROF_COLLECTOR")]
        to: String,
        /// Largest message to emit, in bytes.
        #[arg(long, env = "FLOWPROF_MTU", default_value_t = 1500)]
        mtu: usize,
        /// Observation domain id stamped on every message.
        #[arg(long, default_value_t = 1)]
        domain: u32,
        /// Messages between template re-announcements.
        #[arg(long, default_value_t = 20)]
        template_refresh: u64,
        /// Connection table capacity.
        #[arg(long, default_value_t = DEFAULT_CAPACITY)]
        capacity: usize,
    },
    /// Receive IPFIX datagrams and append decoded profiles to a store.
    Collect {
        /// Store file to append to.
        #[arg(long, env = "FLOWPROF_STORE")]
        store: PathBuf,
        /// Address to listen on.
        #[arg(long, env = "FLOWPROF_LISTEN", default_value_t = default_listen())]
        listen: String,
        /// Stop after this many datagrams.
        #[arg(long)]
        max_messages: Option<u64>,
        /// Stop after this long without traffic, in milliseconds.
        #[arg(long)]
        idle_exit_ms: Option<u64>,
    },
    /// Summarize stored profiles.
    Report {
        /// Which summary to print.
        query: Query,
        /// Store file to read.
        #[arg(long, env = "FLOWPROF_STORE")]
        store: PathBuf,
        /// Only look at one address family.
        #[arg(long, value_name = "v4|v6")]
        ip_version: Option<Family>,
        /// Only look at destinations inside this prefix. A bare address
        /// gets /24 or /48 depending on family.
        #[arg(long)]
        dst_prefix: Option<String>,
        /// Only look at windows ending at or after this timestamp
        /// (trace nanoseconds).
        #[arg(long)]
        from_ns: Option<u64>,
        /// Only look at windows ending before this timestamp.
        #[arg(long)]
        until_ns: Option<u64>,
        /// Print one row per group instead of a single summary row.
        #[arg(long, value_enum, default_value_t = GroupBy::None)]
        by: GroupBy,
        #[arg(long, env = "FLOWPROF_FORMAT", value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Query {
    /// Establishment time distribution.
    Establishment,
    /// Share of handshakes that needed a retransmission.
    SynRetrans,
    /// Round-trip variance across steady-state windows.
    Jitter,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Family {
    V4,
    V6,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GroupBy {
    /// One row over everything the filter admits.
    None,
    /// One row per egress interface.
    Iface,
    /// One row per address family.
    IpVersion,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
}

fn default_listen() -> String {
    format!("0.0.0.0:{DEFAULT_PORT}")
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Script(#[from] ScriptError),
    #[error("{0}")]
    Violation(#[from] SimViolation),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Script(_) | CliError::Violation(_) => 2,
            CliError::Failure(_) => 3,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Sim(v) => CliError::Violation(v),
            other => CliError::Failure(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = !matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flowprof: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Replay { trace, out, capacity } => replay(&trace, out.as_deref(), capacity),
        Command::Export { trace, to, mtu, domain, template_refresh, capacity } => {
            export(&trace, &to, mtu, domain, template_refresh, capacity)
        }
        Command::Collect { store, listen, max_messages, idle_exit_ms } => {
            collect(&store, &listen, max_messages, idle_exit_ms)
        }
        Command::Report { query, store, ip_version, dst_prefix, from_ns, until_ns, by, format } => {
            report(query, &store, ip_version, dst_prefix.as_deref(), from_ns, until_ns, by, format)
        }
    }
}

fn load_trace(path: &Path) -> Result<TraceScript, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(TraceScript::parse(&text)?)
}

fn replay(trace: &Path, out: Option<&Path>, capacity: usize) -> Result<(), CliError> {
    let script = load_trace(trace)?;
    let config = SimConfig { capacity };

    let mut writer: BufWriter<Box<dyn Write>> = BufWriter::new(match out {
        Some(path) => Box::new(fs::File::create(path).map_err(|e| {
            CliError::Usage(format!("cannot create {}: {e}", path.display()))
        })?),
        None => Box::new(io::stdout()),
    });

    let outcome = run_pipeline(&script, config, |profile| {
        let record = StoredProfile { profile, received: None };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")
    })?;
    writer.flush().map_err(|e| CliError::Failure(e.to_string()))?;

    eprintln!(
        "replayed {} directives: {} profiles from {} connections, {} refused, {} orphan events",
        outcome.replay.directives_applied,
        outcome.profiles_emitted,
        outcome.replay.connections_tracked,
        outcome.replay.registrations_refused,
        outcome.orphan_events,
    );
    Ok(())
}

/// Message timestamps come from the profile windows, not the wall clock,
/// so exporting the same trace twice produces identical datagrams.
fn export_time(profile: &PerformanceProfile) -> u32 {
    (profile.kpis.t_end / 1_000_000_000) as u32
}

fn export(
    trace: &Path,
    to: &str,
    mtu: usize,
    domain: u32,
    template_refresh: u64,
    capacity: usize,
) -> Result<(), CliError> {
    let script = load_trace(trace)?;
    let dest: SocketAddr = to
        .to_socket_addrs()
        .map_err(|e| CliError::Usage(format!("cannot resolve {to}: {e}")))?
        .next()
        .ok_or_else(|| CliError::Usage(format!("{to} resolves to no address")))?;

    let config = BufferConfig { mtu, template_refresh, idle_flush_secs: 5, observation_domain: domain };
    let mut buffer = match ExportBuffer::new(config) {
        Ok(buffer) => buffer,
        Err(e @ ExportError::MtuTooSmall { .. }) => return Err(CliError::Usage(e.to_string())),
        Err(e) => return Err(CliError::Failure(e.to_string())),
    };

    let bind = if dest.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" };
    let socket =
        UdpSocket::bind(bind).map_err(|e| CliError::Failure(format!("bind {bind}: {e}")))?;

    let mut sent_messages = 0u64;
    let mut last_time = 0u32;
    run_pipeline(&script, SimConfig { capacity }, |profile| {
        last_time = export_time(&profile);
        let ready = buffer
            .push(&profile, last_time)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        for message in ready {
            socket.send_to(&message, dest)?;
            sent_messages += 1;
        }
        Ok(())
    })?;
    if let Some(message) = buffer.flush(last_time) {
        socket
            .send_to(&message, dest)
            .map_err(|e| CliError::Failure(e.to_string()))?;
        sent_messages += 1;
    }

    println!(
        "sent {sent_messages} messages carrying {} records to {dest}",
        buffer.sequence()
    );
    Ok(())
}

fn collect(
    store_path: &Path,
    listen: &str,
    max_messages: Option<u64>,
    idle_exit_ms: Option<u64>,
) -> Result<(), CliError> {
    let socket = UdpSocket::bind(listen)
        .map_err(|e| CliError::Usage(format!("cannot listen on {listen}: {e}")))?;
    let local = socket.local_addr().map_err(|e| CliError::Failure(e.to_string()))?;

    let mut store = ProfileStore::append_to(store_path)
        .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", store_path.display())))?;

    {
        let mut out = io::stdout();
        writeln!(out, "listening on {local}").map_err(|e| CliError::Failure(e.to_string()))?;
        out.flush().map_err(|e| CliError::Failure(e.to_string()))?;
    }

    let limits = ServeLimits {
        max_messages,
        idle_exit: idle_exit_ms.map(Duration::from_millis),
    };
    let mut collector = Collector::new();
    let datagrams = serve_on(&socket, &limits, &mut collector, |profile, peer| {
        let recv_unix_ns = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        store.append(&StoredProfile { profile, received: Some(ReceiveMeta { peer, recv_unix_ns }) })
    })
    .map_err(|e| CliError::Failure(e.to_string()))?;

    let counters = collector.counters();
    println!(
        "received {datagrams} datagrams: {} profiles stored, {} templates learned",
        counters.data_records, counters.templates_learned
    );
    println!(
        "problems: {} malformed messages, {} undecodable sets, {} record errors",
        counters.malformed_messages, counters.undecodable_sets, counters.record_errors
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn report(
    query: Query,
    store_path: &Path,
    ip_version: Option<Family>,
    dst_prefix: Option<&str>,
    from_ns: Option<u64>,
    until_ns: Option<u64>,
    by: GroupBy,
    format: Format,
) -> Result<(), CliError> {
    let dst_prefix = dst_prefix
        .map(Prefix::parse)
        .transpose()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let filter = ProfileFilter {
        ip_version: ip_version.map(|f| match f {
            Family::V4 => IpVersion::V4,
            Family::V6 => IpVersion::V6,
        }),
        dst_prefix,
        from_ns,
        until_ns,
    };

    let stored = read_all(store_path).map_err(|e| match e {
        flowprof_core::collector::store::StoreError::Io(e) => {
            CliError::Usage(format!("cannot read {}: {e}", store_path.display()))
        }
        other => CliError::Failure(format!("{}: {other}", store_path.display())),
    })?;

    let rows = group_rows(&stored, &filter, by);
    let mut out = io::stdout();
    print_report(&mut out, query, &rows, format).map_err(|e| CliError::Failure(e.to_string()))?;
    Ok(())
}

struct Row {
    group: String,
    establishment: EstablishmentStats,
    syn_retransmission: RetransmissionRatio,
    jitter: JitterStats,
}

fn group_rows(stored: &[StoredProfile], filter: &ProfileFilter, by: GroupBy) -> Vec<Row> {
    match by {
        GroupBy::None => vec![Row {
            group: "all".to_string(),
            establishment: establishment_time(stored, filter),
            syn_retransmission: syn_retransmission(stored, filter),
            jitter: rtt_jitter(stored, filter),
        }],
        GroupBy::Iface => report_by_iface(stored, filter)
            .into_iter()
            .map(|r| Row {
                group: r.group,
                establishment: r.establishment,
                syn_retransmission: r.syn_retransmission,
                jitter: r.jitter,
            })
            .collect(),
        GroupBy::IpVersion => [(IpVersion::V4, "v4"), (IpVersion::V6, "v6")]
            .into_iter()
            .map(|(version, name)| {
                let scoped = ProfileFilter { ip_version: Some(version), ..filter.clone() };
                Row {
                    group: name.to_string(),
                    establishment: establishment_time(stored, &scoped),
                    syn_retransmission: syn_retransmission(stored, &scoped),
                    jitter: rtt_jitter(stored, &scoped),
                }
            })
            .collect(),
    }
}

fn print_report<W: Write>(out: &mut W, query: Query, rows: &[Row], format: Format) -> io::Result<()> {
    let csv = format == Format::Csv;
    match query {
        Query::Establishment => {
            if csv {
                writeln!(out, "group,count,median_ns,mean_ns,variance_ns2")?;
            } else {
                writeln!(
                    out,
                    "{:<12} {:>8} {:>14} {:>20} {:>24}",
                    "group", "count", "median_ns", "mean_ns", "variance_ns2"
                )?;
            }
            for row in rows {
                let s = row.establishment;
                if csv {
                    writeln!(
                        out,
                        "{},{},{},{:.6},{:.6}",
                        row.group, s.count, s.median_ns, s.mean_ns, s.variance_ns2
                    )?;
                } else {
                    writeln!(
                        out,
                        "{:<12} {:>8} {:>14} {:>20.6} {:>24.6}",
                        row.group, s.count, s.median_ns, s.mean_ns, s.variance_ns2
                    )?;
                }
            }
        }
        Query::SynRetrans => {
            if csv {
                writeln!(out, "group,establishments,with_retransmission,ratio")?;
            } else {
                writeln!(
                    out,
                    "{:<12} {:>14} {:>20} {:>10}",
                    "group", "establishments", "with_retransmission", "ratio"
                )?;
            }
            for row in rows {
                let s = row.syn_retransmission;
                if csv {
                    writeln!(
                        out,
                        "{},{},{},{:.6}",
                        row.group, s.establishments, s.with_retransmission, s.ratio()
                    )?;
                } else {
                    writeln!(
                        out,
                        "{:<12} {:>14} {:>20} {:>10.6}",
                        row.group, s.establishments, s.with_retransmission, s.ratio()
                    )?;
                }
            }
        }
        Query::Jitter => {
            if csv {
                writeln!(out, "group,count,median_variance_micros2,mean_variance_micros2,variance_micros4")?;
            } else {
                writeln!(
                    out,
                    "{:<12} {:>8} {:>24} {:>24} {:>20}",
                    "group", "count", "median_variance_micros2", "mean_variance_micros2", "variance_micros4"
                )?;
            }
            for row in rows {
                let s = row.jitter;
                if csv {
                    writeln!(
                        out,
                        "{},{},{},{:.6},{:.6}",
                        row.group, s.count, s.median_variance_micros2, s.mean_variance_micros2, s.variance_micros4
                    )?;
                } else {
                    writeln!(
                        out,
                        "{:<12} {:>8} {:>24} {:>24.6} {:>20.6}",
                        row.group, s.count, s.median_variance_micros2, s.mean_variance_micros2, s.variance_micros4
                    )?;
                }
            }
        }
    }
    Ok(())
}
