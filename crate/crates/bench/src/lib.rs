//! Shared input builders for the benchmarks.

use std::fmt::Write;

/// Build a trace exercising `connections` well-behaved connections, each
/// passing through establishment, a short data phase with RTT samples, one
/// retransmission timeout with recovery, and an orderly close.
pub fn synthetic_script(connections: usize) -> String {
    let mut text = String::new();
    for i in 0..connections {
        let uid = i + 1;
        let base = (i as u64) * 10_000_000;
        let port = 40_000 + (i % 20_000);
        let host = i % 250;
        writeln!(
            text,
            "@{} conn {uid} open 10.0.0.{host}:{port} -> 10.1.0.{host}:443 via eth0",
            base
        )
        .unwrap();
        writeln!(text, "@{} conn {uid} established rtt=30000", base + 30_000_000).unwrap();
        for burst in 0..4u64 {
            let at = base + 40_000_000 + burst * 5_000_000;
            writeln!(text, "@{} conn {uid} send 1448", at).unwrap();
            writeln!(text, "@{} conn {uid} rtt_sample {}", at + 1_000_000, 29_000 + burst * 500)
                .unwrap();
            writeln!(text, "@{} conn {uid} recv seq={} len=1200", at + 2_000_000, burst * 1_200)
                .unwrap();
        }
        writeln!(text, "@{} conn {uid} send 1448", base + 70_000_000).unwrap();
        writeln!(text, "@{} conn {uid} rto retrans=1448", base + 90_000_000).unwrap();
        writeln!(text, "@{} conn {uid} recovered", base + 95_000_000).unwrap();
        writeln!(text, "@{} conn {uid} close fin", base + 120_000_000).unwrap();
    }
    text
}
