//! Victim stub: a local process that retains bytes per received packet so
//! flood traffic produces genuine, measurable memory pressure.
//!
//! The stub listens for UDP datagrams and TCP connections on one data port
//! and answers a line-delimited text control protocol on a second port:
//!
//! ```text
//! STATS       -> one JSON line of counters
//! STOPRW      -> cease buffer growth (stop read/write mitigation)
//! DISCONNECT  -> close the data sockets (disconnect mitigation)
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Ipv4Addr, SocketAddrV4, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{quantize_timestamp, HostSource, RawResources, TelemetrySource};

use super::FloodStats;

#[derive(Debug, Clone)]
pub struct VictimConfig {
    pub bind_addr: Ipv4Addr,
    /// Data port; 0 picks an ephemeral port.
    pub data_port: u16,
    /// Control port; 0 picks an ephemeral port.
    pub control_port: u16,
    /// Bytes retained per received packet.
    pub buffer_policy_bytes: usize,
    /// Retention ceiling; the memory readout reports `buffered / cap`.
    pub cap_bytes: usize,
}

impl Default for VictimConfig {
    fn default() -> Self {
        VictimConfig {
            bind_addr: Ipv4Addr::LOCALHOST,
            data_port: 0,
            control_port: 0,
            buffer_policy_bytes: 512,
            cap_bytes: 64 << 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimStats {
    pub packets_received: u64,
    pub bytes_buffered: u64,
    pub cap_bytes: u64,
    pub mem_frac: f64,
    pub duration_s: f64,
    pub rw_stopped: bool,
    pub disconnected: bool,
    pub dropped_blacklisted: u64,
}

struct Inner {
    packets_received: AtomicU64,
    bytes_buffered: AtomicU64,
    dropped_blacklisted: AtomicU64,
    rw_stopped: AtomicBool,
    disconnected: AtomicBool,
    shutdown: AtomicBool,
    started: Instant,
    buffer_policy: usize,
    cap_bytes: u64,
    retained: Mutex<Vec<u8>>,
    blacklist: RwLock<Vec<Ipv4Addr>>,
}

impl Inner {
    fn accept_packet(&self, src: Ipv4Addr) {
        if self.blacklist.read().map(|b| b.contains(&src)).unwrap_or(false) {
            self.dropped_blacklisted.fetch_add(1, Ordering::Relaxed);
            return;
        }
        self.packets_received.fetch_add(1, Ordering::Relaxed);
        if self.rw_stopped.load(Ordering::Relaxed) {
            return;
        }
        let current = self.bytes_buffered.load(Ordering::Relaxed);
        let take = (self.cap_bytes.saturating_sub(current)).min(self.buffer_policy as u64);
        if take == 0 {
            return;
        }
        // Touch every retained byte so the pressure shows up as resident
        // memory, not just reserved address space.
        if let Ok(mut retained) = self.retained.lock() {
            retained.extend(std::iter::repeat(0xA5u8).take(take as usize));
        }
        self.bytes_buffered.fetch_add(take, Ordering::Relaxed);
    }

    fn stats(&self) -> VictimStats {
        let buffered = self.bytes_buffered.load(Ordering::Relaxed);
        VictimStats {
            packets_received: self.packets_received.load(Ordering::Relaxed),
            bytes_buffered: buffered,
            cap_bytes: self.cap_bytes,
            mem_frac: (buffered as f64 / self.cap_bytes as f64).min(1.0),
            duration_s: quantize_timestamp(self.started.elapsed().as_secs_f64()),
            rw_stopped: self.rw_stopped.load(Ordering::Relaxed),
            disconnected: self.disconnected.load(Ordering::Relaxed),
            dropped_blacklisted: self.dropped_blacklisted.load(Ordering::Relaxed),
        }
    }

    fn data_closed(&self) -> bool {
        self.disconnected.load(Ordering::Relaxed) || self.shutdown.load(Ordering::Relaxed)
    }
}

/// Handle to a running victim stub. Dropping the handle without calling
/// [`VictimStub::shutdown`] leaves the threads to exit on their own flags.
pub struct VictimStub {
    inner: Arc<Inner>,
    data_addr: SocketAddrV4,
    control_addr: SocketAddrV4,
    threads: Vec<JoinHandle<()>>,
}

impl VictimStub {
    pub fn start(config: VictimConfig) -> Result<Self> {
        if config.cap_bytes == 0 {
            return Err(Error::InvalidInput(
                "victim cap_bytes must be positive".to_string(),
            ));
        }
        let udp = UdpSocket::bind(SocketAddrV4::new(config.bind_addr, config.data_port))
            .map_err(|e| startup_error("data udp", e))?;
        let data_addr = match udp.local_addr().map_err(|e| startup_error("data udp", e))? {
            std::net::SocketAddr::V4(addr) => addr,
            other => return Err(Error::InvalidInput(format!("unexpected address {other}"))),
        };
        // TCP data listener shares the port number with the UDP socket.
        let tcp = TcpListener::bind(data_addr).map_err(|e| startup_error("data tcp", e))?;
        let control = TcpListener::bind(SocketAddrV4::new(config.bind_addr, config.control_port))
            .map_err(|e| startup_error("control", e))?;
        let control_addr = match control
            .local_addr()
            .map_err(|e| startup_error("control", e))?
        {
            std::net::SocketAddr::V4(addr) => addr,
            other => return Err(Error::InvalidInput(format!("unexpected address {other}"))),
        };

        udp.set_read_timeout(Some(Duration::from_millis(25)))
            .map_err(|e| startup_error("data udp", e))?;
        tcp.set_nonblocking(true)
            .map_err(|e| startup_error("data tcp", e))?;
        control
            .set_nonblocking(true)
            .map_err(|e| startup_error("control", e))?;

        let inner = Arc::new(Inner {
            packets_received: AtomicU64::new(0),
            bytes_buffered: AtomicU64::new(0),
            dropped_blacklisted: AtomicU64::new(0),
            rw_stopped: AtomicBool::new(false),
            disconnected: AtomicBool::new(false),
            shutdown: AtomicBool::new(false),
            started: Instant::now(),
            buffer_policy: config.buffer_policy_bytes,
            cap_bytes: config.cap_bytes as u64,
            retained: Mutex::new(Vec::new()),
            blacklist: RwLock::new(Vec::new()),
        });

        let mut threads = Vec::new();
        {
            let inner = Arc::clone(&inner);
            threads.push(thread::spawn(move || udp_loop(udp, inner)));
        }
        {
            let inner = Arc::clone(&inner);
            threads.push(thread::spawn(move || tcp_loop(tcp, inner)));
        }
        {
            let inner = Arc::clone(&inner);
            threads.push(thread::spawn(move || control_loop(control, inner)));
        }

        Ok(VictimStub {
            inner,
            data_addr,
            control_addr,
            threads,
        })
    }

    pub fn data_addr(&self) -> SocketAddrV4 {
        self.data_addr
    }

    pub fn control_addr(&self) -> SocketAddrV4 {
        self.control_addr
    }

    pub fn stats(&self) -> FloodStats {
        let s = self.inner.stats();
        FloodStats {
            packets_sent: 0,
            packets_received: s.packets_received,
            bytes_buffered: s.bytes_buffered,
            duration_s: s.duration_s,
        }
    }

    pub fn victim_stats(&self) -> VictimStats {
        self.inner.stats()
    }

    /// Normalized memory readout: retained bytes over the cap.
    pub fn mem_frac(&self) -> f64 {
        self.inner.stats().mem_frac
    }

    /// Stop read/write mitigation: buffer growth ceases, traffic still counts.
    pub fn stop_read_write(&self) {
        self.inner.rw_stopped.store(true, Ordering::Relaxed);
    }

    /// Disconnect mitigation: the data sockets close.
    pub fn disconnect(&self) {
        self.inner.disconnected.store(true, Ordering::Relaxed);
    }

    /// Drop traffic from this source address.
    pub fn blacklist_source(&self, ip: Ipv4Addr) {
        if let Ok(mut list) = self.inner.blacklist.write() {
            if !list.contains(&ip) {
                list.push(ip);
            }
        }
    }

    /// A telemetry source reading this stub's memory readout, with host CPU
    /// as the auxiliary metric.
    pub fn telemetry_source(&self, device_id: impl Into<String>) -> VictimSource {
        VictimSource {
            device_id: device_id.into(),
            inner: Arc::clone(&self.inner),
            host: HostSource::new("victim-host"),
        }
    }

    pub fn shutdown(mut self) {
        self.inner.shutdown.store(true, Ordering::Relaxed);
        for handle in self.threads.drain(..) {
            let _ = handle.join();
        }
    }
}

fn startup_error(what: &str, e: std::io::Error) -> Error {
    Error::Acquisition {
        metric: "victim-stub",
        reason: format!("{what} bind failed: {e}"),
    }
}

fn udp_loop(socket: UdpSocket, inner: Arc<Inner>) {
    let mut buf = vec![0u8; 65_536];
    while !inner.data_closed() {
        match socket.recv_from(&mut buf) {
            Ok((_, src)) => {
                let ip = match src.ip() {
                    std::net::IpAddr::V4(ip) => ip,
                    _ => continue,
                };
                inner.accept_packet(ip);
            }
            Err(ref e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut => {}
            Err(_) => break,
        }
    }
    // Socket drops here: a disconnected victim no longer receives.
}

fn tcp_loop(listener: TcpListener, inner: Arc<Inner>) {
    while !inner.data_closed() {
        match listener.accept() {
            Ok((mut stream, src)) => {
                let ip = match src.ip() {
                    std::net::IpAddr::V4(ip) => ip,
                    _ => continue,
                };
                let _ = stream.set_read_timeout(Some(Duration::from_millis(100)));
                let mut sink = [0u8; 4096];
                let _ = stream.read(&mut sink);
                inner.accept_packet(ip);
            }
            Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(2));
            }
            Err(_) => break,
        }
    }
}

fn control_loop(listener: TcpListener, inner: Arc<Inner>) {
    while !inner.shutdown.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => handle_control_conn(stream, &inner),
            Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(5));
            }
            Err(_) => break,
        }
    }
}

fn handle_control_conn(stream: TcpStream, inner: &Inner) {
    let _ = stream.set_read_timeout(Some(Duration::from_millis(500)));
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => return,
    };
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = match line {
            Ok(line) => line,
            Err(_) => break,
        };
        let reply = match line.trim().to_ascii_uppercase().as_str() {
            "STATS" => match serde_json::to_string(&inner.stats()) {
                Ok(json) => json,
                Err(_) => "ERR stats".to_string(),
            },
            "STOPRW" => {
                inner.rw_stopped.store(true, Ordering::Relaxed);
                "OK".to_string()
            }
            "DISCONNECT" => {
                inner.disconnected.store(true, Ordering::Relaxed);
                "OK".to_string()
            }
            "" => continue,
            other => format!("ERR unknown command {other:?}"),
        };
        if writer.write_all(reply.as_bytes()).is_err() || writer.write_all(b"\n").is_err() {
            break;
        }
        let _ = writer.flush();
    }
}

/// Telemetry source backed by a victim stub's memory readout; CPU comes from
/// the host so readings stay general-purpose shaped.
pub struct VictimSource {
    device_id: String,
    inner: Arc<Inner>,
    host: HostSource,
}

impl TelemetrySource for VictimSource {
    fn device_id(&self) -> &str {
        &self.device_id
    }

    fn sample(&mut self) -> Result<RawResources> {
        let stats = self.inner.stats();
        let cpu_percent = self
            .host
            .sample()
            .ok()
            .and_then(|raw| raw.cpu_percent)
            .or(Some(0.0));
        Ok(RawResources {
            used_bytes: stats.bytes_buffered,
            total_bytes: stats.cap_bytes,
            cpu_percent,
        })
    }
}

/// One-shot control-channel command against a running stub.
pub fn control_command(control: SocketAddrV4, command: &str) -> Result<String> {
    let mut stream = TcpStream::connect_timeout(
        &std::net::SocketAddr::V4(control),
        Duration::from_millis(500),
    )?;
    stream.set_read_timeout(Some(Duration::from_millis(500)))?;
    stream.write_all(command.as_bytes())?;
    stream.write_all(b"\n")?;
    stream.flush()?;
    let mut reader = BufReader::new(stream);
    let mut reply = String::new();
    reader.read_line(&mut reply)?;
    Ok(reply.trim_end().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn send_udp(target: SocketAddrV4, count: usize, payload: &[u8]) {
        let socket = UdpSocket::bind("127.0.0.1:0").unwrap();
        for _ in 0..count {
            socket.send_to(payload, target).unwrap();
        }
    }

    fn wait_for<F: Fn() -> bool>(predicate: F, timeout: Duration) -> bool {
        let start = Instant::now();
        while start.elapsed() < timeout {
            if predicate() {
                return true;
            }
            thread::sleep(Duration::from_millis(10));
        }
        predicate()
    }

    #[test]
    fn buffer_policy_accounts_per_packet() {
        let stub = VictimStub::start(VictimConfig {
            buffer_policy_bytes: 512,
            cap_bytes: 1 << 20,
            ..Default::default()
        })
        .unwrap();
        send_udp(stub.data_addr(), 100, &[1u8; 64]);
        assert!(wait_for(
            || stub.stats().packets_received == 100,
            Duration::from_secs(2)
        ));
        assert_eq!(stub.stats().bytes_buffered, 100 * 512);
        stub.shutdown();
    }

    #[test]
    fn cap_saturates_readout_at_one() {
        let stub = VictimStub::start(VictimConfig {
            buffer_policy_bytes: 512,
            cap_bytes: 2048,
            ..Default::default()
        })
        .unwrap();
        send_udp(stub.data_addr(), 10, &[1u8; 8]);
        assert!(wait_for(
            || stub.stats().packets_received == 10,
            Duration::from_secs(2)
        ));
        assert_eq!(stub.stats().bytes_buffered, 2048);
        assert_eq!(stub.mem_frac(), 1.0);
        stub.shutdown();
    }

    #[test]
    fn stoprw_freezes_buffer_growth() {
        let stub = VictimStub::start(VictimConfig::default()).unwrap();
        send_udp(stub.data_addr(), 5, &[1u8; 8]);
        assert!(wait_for(
            || stub.stats().packets_received == 5,
            Duration::from_secs(2)
        ));
        let before = stub.stats().bytes_buffered;
        stub.stop_read_write();
        send_udp(stub.data_addr(), 5, &[1u8; 8]);
        assert!(wait_for(
            || stub.stats().packets_received == 10,
            Duration::from_secs(2)
        ));
        assert_eq!(stub.stats().bytes_buffered, before);
        stub.shutdown();
    }

    #[test]
    fn disconnect_stops_reception() {
        let stub = VictimStub::start(VictimConfig::default()).unwrap();
        send_udp(stub.data_addr(), 3, &[1u8; 8]);
        assert!(wait_for(
            || stub.stats().packets_received == 3,
            Duration::from_secs(2)
        ));
        stub.disconnect();
        thread::sleep(Duration::from_millis(150));
        let before = stub.stats().packets_received;
        send_udp(stub.data_addr(), 20, &[1u8; 8]);
        thread::sleep(Duration::from_millis(200));
        assert_eq!(stub.stats().packets_received, before);
        stub.shutdown();
    }

    #[test]
    fn blacklisted_source_is_dropped() {
        let stub = VictimStub::start(VictimConfig::default()).unwrap();
        stub.blacklist_source(Ipv4Addr::LOCALHOST);
        send_udp(stub.data_addr(), 5, &[1u8; 8]);
        assert!(wait_for(
            || stub.victim_stats().dropped_blacklisted == 5,
            Duration::from_secs(2)
        ));
        assert_eq!(stub.stats().packets_received, 0);
        stub.shutdown();
    }

    #[test]
    fn control_channel_serves_stats_and_mitigation() {
        let stub = VictimStub::start(VictimConfig::default()).unwrap();
        send_udp(stub.data_addr(), 2, &[1u8; 8]);
        assert!(wait_for(
            || stub.stats().packets_received == 2,
            Duration::from_secs(2)
        ));

        let reply = control_command(stub.control_addr(), "STATS").unwrap();
        let stats: VictimStats = serde_json::from_str(&reply).unwrap();
        assert_eq!(stats.packets_received, 2);
        assert!(!stats.rw_stopped);

        assert_eq!(control_command(stub.control_addr(), "STOPRW").unwrap(), "OK");
        assert_eq!(
            control_command(stub.control_addr(), "DISCONNECT").unwrap(),
            "OK"
        );
        let reply = control_command(stub.control_addr(), "STATS").unwrap();
        let stats: VictimStats = serde_json::from_str(&reply).unwrap();
        assert!(stats.rw_stopped);
        assert!(stats.disconnected);

        let reply = control_command(stub.control_addr(), "NONSENSE").unwrap();
        assert!(reply.starts_with("ERR"));
        stub.shutdown();
    }

    #[test]
    fn telemetry_source_reports_buffer_fraction() {
        let stub = VictimStub::start(VictimConfig {
            buffer_policy_bytes: 1024,
            cap_bytes: 4096,
            ..Default::default()
        })
        .unwrap();
        send_udp(stub.data_addr(), 2, &[1u8; 8]);
        assert!(wait_for(
            || stub.stats().packets_received == 2,
            Duration::from_secs(2)
        ));
        let mut source = stub.telemetry_source("victim-0");
        let raw = source.sample().unwrap();
        assert_eq!(raw.used_bytes, 2048);
        assert_eq!(raw.total_bytes, 4096);
        assert!(raw.cpu_percent.is_some());
        stub.shutdown();
    }
}
