//! Desk-scale network testbed: a subnet/port scanner feeding the device
//! registry, a rate-paced TCP/UDP flood generator, and a victim stub whose
//! buffer growth turns flood traffic into genuine, sampleable memory
//! pressure.
//!
//! Safety interlock: nothing in this module emits packets to an address
//! outside the configured allowlist, which defaults to loopback only.

use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{BlacklistStore, Registry};

pub mod flood;
pub mod scan;
pub mod victim;

pub use flood::{flood, FloodConfig, MAX_DURATION_S, MAX_PAYLOAD_BYTES, MAX_RATE_PPS};
pub use scan::{scan, ScanConfig};
pub use victim::{VictimConfig, VictimSource, VictimStats, VictimStub};

/// Transport used by a flood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloodProtocol {
    Tcp,
    Udp,
}

impl std::str::FromStr for FloodProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tcp" => Ok(FloodProtocol::Tcp),
            "udp" => Ok(FloodProtocol::Udp),
            other => Err(Error::Parse(format!("unknown protocol {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceStatus {
    Online,
    Offline,
}

/// One scanned device in the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub ip: Ipv4Addr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mac: Option<String>,
    pub status: DeviceStatus,
    pub open_ports: Vec<u16>,
    pub blacklisted: bool,
    pub last_seen_s: f64,
}

/// Attacker- or victim-side traffic counters for one flood run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FloodStats {
    pub packets_sent: u64,
    pub packets_received: u64,
    pub bytes_buffered: u64,
    pub duration_s: f64,
}

// ---------------------------------------------------------------------------
// Allowlist
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Cidr {
    network: u32,
    prefix: u8,
}

impl Cidr {
    fn parse(text: &str) -> Result<Self> {
        let (addr_text, prefix) = match text.split_once('/') {
            Some((addr, prefix)) => {
                let prefix: u8 = prefix
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad prefix in {text:?}")))?;
                if prefix > 32 {
                    return Err(Error::Parse(format!("prefix {prefix} exceeds 32")));
                }
                (addr, prefix)
            }
            None => (text, 32),
        };
        let addr: Ipv4Addr = addr_text
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("{addr_text:?} is not an IPv4 address")))?;
        let mask = if prefix == 0 { 0 } else { u32::MAX << (32 - prefix) };
        Ok(Cidr {
            network: u32::from(addr) & mask,
            prefix,
        })
    }

    fn contains(&self, ip: Ipv4Addr) -> bool {
        let mask = if self.prefix == 0 {
            0
        } else {
            u32::MAX << (32 - self.prefix)
        };
        u32::from(ip) & mask == self.network
    }
}

/// The set of networks probe and flood traffic may touch.
#[derive(Debug, Clone, PartialEq)]
pub struct Allowlist {
    entries: Vec<Cidr>,
    display: String,
}

impl Allowlist {
    /// Loopback only.
    pub fn loopback() -> Self {
        Allowlist {
            entries: vec![Cidr {
                network: u32::from(Ipv4Addr::new(127, 0, 0, 0)),
                prefix: 8,
            }],
            display: "127.0.0.0/8".to_string(),
        }
    }

    /// Parses a comma-separated list of addresses or CIDR blocks.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for part in text.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            entries.push(Cidr::parse(part)?);
        }
        if entries.is_empty() {
            return Err(Error::Parse("allowlist is empty".to_string()));
        }
        Ok(Allowlist {
            entries,
            display: text.to_string(),
        })
    }

    pub fn permits(&self, ip: Ipv4Addr) -> bool {
        self.entries.iter().any(|c| c.contains(ip))
    }

    /// Errs with the interlock refusal when the address is outside the list.
    pub fn require(&self, ip: Ipv4Addr) -> Result<()> {
        if self.permits(ip) {
            Ok(())
        } else {
            Err(Error::Refused(format!(
                "{ip} is outside the allowlist ({})",
                self.display
            )))
        }
    }
}

impl Default for Allowlist {
    fn default() -> Self {
        Self::loopback()
    }
}

// ---------------------------------------------------------------------------
// Address ranges
// ---------------------------------------------------------------------------

/// Upper bound on addresses one scan may touch.
pub const MAX_SCAN_ADDRESSES: u32 = 4096;

/// A parsed scan target: a single address, an inclusive `a-b` range, or a
/// CIDR block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddrRange {
    first: u32,
    last: u32,
}

impl AddrRange {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::Parse("empty address range".to_string()));
        }
        let (first, last) = if let Some((a, b)) = text.split_once('-') {
            let first: Ipv4Addr = a
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("{a:?} is not an IPv4 address")))?;
            let last: Ipv4Addr = b
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("{b:?} is not an IPv4 address")))?;
            (u32::from(first), u32::from(last))
        } else if text.contains('/') {
            let cidr = Cidr::parse(text)?;
            let span = if cidr.prefix == 32 {
                0
            } else {
                (1u64 << (32 - cidr.prefix)) as u32 - 1
            };
            (cidr.network, cidr.network.saturating_add(span))
        } else {
            let addr: Ipv4Addr = text
                .parse()
                .map_err(|_| Error::Parse(format!("{text:?} is not an IPv4 address")))?;
            (u32::from(addr), u32::from(addr))
        };
        if last < first {
            return Err(Error::Parse(format!("range {text:?} runs backwards")));
        }
        if last - first >= MAX_SCAN_ADDRESSES {
            return Err(Error::InvalidInput(format!(
                "range {text:?} spans more than {MAX_SCAN_ADDRESSES} addresses"
            )));
        }
        Ok(AddrRange { first, last })
    }

    pub fn iter(&self) -> impl Iterator<Item = Ipv4Addr> + '_ {
        (self.first..=self.last).map(Ipv4Addr::from)
    }

    pub fn len(&self) -> u32 {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

// ---------------------------------------------------------------------------
// Blacklist enforcement
// ---------------------------------------------------------------------------

/// Marks a registered device as blacklisted and persists both the registry
/// and the blacklist. Flood calls against it refuse from then on, and the
/// victim stub drops its traffic.
pub fn blacklist_enforce(
    registry: &mut Registry,
    registry_path: &Path,
    blacklist: &mut BlacklistStore,
    ip: Ipv4Addr,
) -> Result<()> {
    registry.set_blacklisted(ip)?;
    registry.save(registry_path)?;
    blacklist.add(ip)?;
    Ok(())
}
