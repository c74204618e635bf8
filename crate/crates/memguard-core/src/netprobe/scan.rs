//! TCP connect scanner filling the device registry.

use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, TcpStream};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use crate::telemetry::quantize_timestamp;

use super::{AddrRange, Allowlist, DeviceRecord, DeviceStatus};

#[derive(Debug, Clone)]
pub struct ScanConfig {
    pub timeout_ms: u64,
    pub allowlist: Allowlist,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            timeout_ms: 250,
            allowlist: Allowlist::loopback(),
        }
    }
}

fn epoch_s() -> f64 {
    quantize_timestamp(
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default()
            .as_secs_f64(),
    )
}

/// Probes every address in the range on the given ports.
///
/// A host is `Online` when any probe completes a transport handshake or is
/// actively refused (a refusal proves a responding stack); per-host timeouts
/// record `Offline`, not an error. With an empty port list the records carry
/// status only.
pub fn scan(targets: &AddrRange, ports: &[u16], config: &ScanConfig) -> Result<Vec<DeviceRecord>> {
    for port in ports {
        if *port == 0 {
            return Err(Error::InvalidInput("port 0 is not probeable".to_string()));
        }
    }
    for ip in targets.iter() {
        config.allowlist.require(ip)?;
    }

    let timeout = Duration::from_millis(config.timeout_ms.max(1));
    let mut records = Vec::with_capacity(targets.len() as usize);
    for ip in targets.iter() {
        records.push(probe_host(ip, ports, timeout));
    }
    Ok(records)
}

fn probe_host(ip: Ipv4Addr, ports: &[u16], timeout: Duration) -> DeviceRecord {
    let mut online = false;
    let mut open_ports = Vec::new();
    for &port in ports {
        let addr = SocketAddr::V4(SocketAddrV4::new(ip, port));
        match TcpStream::connect_timeout(&addr, timeout) {
            Ok(_) => {
                online = true;
                open_ports.push(port);
            }
            Err(e) if e.kind() == std::io::ErrorKind::ConnectionRefused => {
                // The host answered, just not on this port.
                online = true;
            }
            Err(_) => {}
        }
    }
    DeviceRecord {
        ip,
        mac: None,
        status: if online {
            DeviceStatus::Online
        } else {
            DeviceStatus::Offline
        },
        open_ports,
        blacklisted: false,
        last_seen_s: epoch_s(),
    }
}
