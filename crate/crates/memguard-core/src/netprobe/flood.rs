//! Rate-paced TCP/UDP flood generator.
//!
//! Floods are confined to allowlisted addresses (loopback by default) and
//! hard-capped in rate and duration. TCP mode uses rapid connect/teardown
//! with payload rather than raw spoofed segments, so no privileged sockets
//! are needed.

use std::net::{SocketAddr, SocketAddrV4, TcpStream, UdpSocket};
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::store::BlacklistStore;
use crate::telemetry::quantize_timestamp;

use super::{Allowlist, FloodProtocol, FloodStats};

/// Hard cap on the configured packet rate.
pub const MAX_RATE_PPS: f64 = 10_000.0;
/// Hard cap on a single flood's duration.
pub const MAX_DURATION_S: f64 = 600.0;
/// Hard cap on the per-packet payload.
pub const MAX_PAYLOAD_BYTES: usize = 60_000;

#[derive(Debug, Clone)]
pub struct FloodConfig {
    pub protocol: FloodProtocol,
    pub rate_pps: f64,
    pub duration_s: f64,
    pub payload_bytes: usize,
    pub allowlist: Allowlist,
}

impl FloodConfig {
    pub fn new(protocol: FloodProtocol, rate_pps: f64, duration_s: f64) -> Self {
        FloodConfig {
            protocol,
            rate_pps,
            duration_s,
            payload_bytes: 64,
            allowlist: Allowlist::loopback(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rate_pps > 0.0 && self.rate_pps <= MAX_RATE_PPS) {
            return Err(Error::InvalidInput(format!(
                "rate {} pps escapes (0, {MAX_RATE_PPS}]",
                self.rate_pps
            )));
        }
        if !(self.duration_s > 0.0 && self.duration_s <= MAX_DURATION_S) {
            return Err(Error::InvalidInput(format!(
                "duration {} s escapes (0, {MAX_DURATION_S}]",
                self.duration_s
            )));
        }
        if self.payload_bytes > MAX_PAYLOAD_BYTES {
            return Err(Error::InvalidInput(format!(
                "payload {} B exceeds {MAX_PAYLOAD_BYTES} B",
                self.payload_bytes
            )));
        }
        Ok(())
    }
}

/// Sends `round(rate * duration)` packets at a steady pace and returns the
/// attacker-side counters. Refuses blacklisted and non-allowlisted targets.
pub fn flood(
    target: SocketAddrV4,
    config: &FloodConfig,
    blacklist: &BlacklistStore,
) -> Result<FloodStats> {
    config.validate()?;
    config.allowlist.require(*target.ip())?;
    if blacklist.contains(*target.ip()) {
        return Err(Error::Refused(format!(
            "{} is blacklisted; refusing to flood it",
            target.ip()
        )));
    }

    let total = (config.rate_pps * config.duration_s).round().max(1.0) as u64;
    let payload = vec![0xA5u8; config.payload_bytes];
    let started = Instant::now();
    let sent = match config.protocol {
        FloodProtocol::Udp => udp_flood(target, &payload, total, config.rate_pps, started)?,
        FloodProtocol::Tcp => tcp_flood(target, &payload, total, config.rate_pps, started),
    };

    Ok(FloodStats {
        packets_sent: sent,
        packets_received: 0,
        bytes_buffered: 0,
        duration_s: quantize_timestamp(started.elapsed().as_secs_f64()),
    })
}

fn pace(started: Instant, index: u64, rate_pps: f64) {
    let target = Duration::from_secs_f64(index as f64 / rate_pps);
    let elapsed = started.elapsed();
    if target > elapsed {
        thread::sleep(target - elapsed);
    }
}

fn udp_flood(
    target: SocketAddrV4,
    payload: &[u8],
    total: u64,
    rate_pps: f64,
    started: Instant,
) -> Result<u64> {
    let socket = UdpSocket::bind("0.0.0.0:0")?;
    let mut sent = 0u64;
    for i in 0..total {
        pace(started, i, rate_pps);
        // Unconnected sends keep succeeding even after the victim closes its
        // socket; the attacker does not observe the mitigation.
        if socket.send_to(payload, SocketAddr::V4(target)).is_ok() {
            sent += 1;
        }
    }
    Ok(sent)
}

fn tcp_flood(
    target: SocketAddrV4,
    payload: &[u8],
    total: u64,
    rate_pps: f64,
    started: Instant,
) -> u64 {
    use std::io::Write;

    let timeout = Duration::from_millis(200);
    let mut sent = 0u64;
    for i in 0..total {
        pace(started, i, rate_pps);
        // A refused connect after mitigation is a lost packet, not an error.
        if let Ok(mut stream) = TcpStream::connect_timeout(&SocketAddr::V4(target), timeout) {
            let _ = stream.set_write_timeout(Some(timeout));
            if stream.write_all(payload).is_ok() {
                sent += 1;
            }
        }
    }
    sent
}
