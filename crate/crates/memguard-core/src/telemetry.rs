//! Resource telemetry: normalized memory/CPU measurements, device profiles
//! with per-status usage bands, status classification, and host sampling.
//!
//! All memory and CPU figures travel as fractions in `[0, 1]`. Raw sources
//! (byte counts, percentages, free-memory reports) are converted on entry
//! and never leave this module un-normalized.

use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decimal places kept for normalized fractions in logs and traces.
pub const FRACTION_DECIMALS: u32 = 6;
/// Decimal places kept for timestamps in logs and traces.
pub const TIMESTAMP_DECIMALS: u32 = 3;

/// Rounds a fraction to the stable log precision.
pub fn quantize_frac(value: f64) -> f64 {
    let scale = 10f64.powi(FRACTION_DECIMALS as i32);
    (value * scale).round() / scale
}

/// Rounds a timestamp to the stable log precision.
pub fn quantize_timestamp(value: f64) -> f64 {
    let scale = 10f64.powi(TIMESTAMP_DECIMALS as i32);
    (value * scale).round() / scale
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Device architecture, which fixes the auxiliary metric a device reports:
/// general-purpose devices report a CPU fraction, microcontroller-class
/// devices report cumulative thread time in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    GeneralPurpose,
    Microcontroller,
}

/// Operating status inferred from a memory reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusClass {
    Idle,
    Active,
    UnderAttack,
    /// Reading falls outside every profile range.
    Unknown,
}

impl StatusClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            StatusClass::Idle => "idle",
            StatusClass::Active => "active",
            StatusClass::UnderAttack => "under_attack",
            StatusClass::Unknown => "unknown",
        }
    }
}

/// A closed numeric range `[min, max]`. Classification treats memory bands
/// as half-open `[min, max)` so touching bands stay disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub min: f64,
    pub max: f64,
}

impl Band {
    pub const fn new(min: f64, max: f64) -> Self {
        Band { min, max }
    }

    /// Half-open membership `[min, max)`.
    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value < self.max
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

/// Auxiliary-metric range; `max: None` means unbounded above (a device under
/// attack can accumulate arbitrarily large thread time).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxBand {
    pub min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl AuxBand {
    pub const fn new(min: f64, max: f64) -> Self {
        AuxBand { min, max: Some(max) }
    }

    pub const fn open_ended(min: f64) -> Self {
        AuxBand { min, max: None }
    }
}

/// Per-status resource ranges for one device architecture, plus the memory
/// capacity used to normalize raw byte counts.
///
/// Memory bands escalate monotonically: `idle.max <= active.max <= attack.max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub name: String,
    pub architecture: Architecture,
    pub idle_mem: Band,
    pub active_mem: Band,
    pub attack_mem: Band,
    pub idle_aux: AuxBand,
    pub active_aux: AuxBand,
    pub attack_aux: AuxBand,
    pub total_mem_bytes: u64,
}

impl DeviceProfile {
    /// Built-in profile for a general-purpose single-board computer
    /// (1 GiB RAM class). Memory bands: idle 10-20%, active 20-35%,
    /// under attack 36-66%; auxiliary metric is CPU fraction.
    pub fn raspberry_pi() -> Self {
        DeviceProfile {
            name: "raspberry-pi".to_string(),
            architecture: Architecture::GeneralPurpose,
            idle_mem: Band::new(0.10, 0.20),
            active_mem: Band::new(0.20, 0.35),
            attack_mem: Band::new(0.36, 0.66),
            idle_aux: AuxBand::new(0.0055, 0.0088),
            active_aux: AuxBand::new(0.0088, 0.0150),
            attack_aux: AuxBand::new(0.0150, 0.1650),
            total_mem_bytes: 1 << 30,
        }
    }

    /// Built-in profile for a microcontroller-class device (2 KiB SRAM).
    /// Memory bands: idle 8-11%, active 11-16%, under attack 17-45%;
    /// auxiliary metric is cumulative thread time in seconds, unbounded
    /// above while under attack.
    pub fn arduino() -> Self {
        DeviceProfile {
            name: "arduino".to_string(),
            architecture: Architecture::Microcontroller,
            idle_mem: Band::new(0.08, 0.11),
            active_mem: Band::new(0.11, 0.16),
            attack_mem: Band::new(0.17, 0.45),
            idle_aux: AuxBand::new(1.0, 20.0),
            active_aux: AuxBand::new(21.0, 45.0),
            attack_aux: AuxBand::open_ended(45.0),
            total_mem_bytes: 2048,
        }
    }

    /// Looks up a built-in profile by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "raspberry-pi" => Some(Self::raspberry_pi()),
            "arduino" => Some(Self::arduino()),
            _ => None,
        }
    }

    /// Parses a profile from a JSON document. Unknown fields are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let profile: DeviceProfile =
            serde_json::from_str(text).map_err(|e| Error::InvalidProfile(e.to_string()))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn mem_band(&self, status: StatusClass) -> Option<&Band> {
        match status {
            StatusClass::Idle => Some(&self.idle_mem),
            StatusClass::Active => Some(&self.active_mem),
            StatusClass::UnderAttack => Some(&self.attack_mem),
            StatusClass::Unknown => None,
        }
    }

    pub fn aux_band(&self, status: StatusClass) -> Option<&AuxBand> {
        match status {
            StatusClass::Idle => Some(&self.idle_aux),
            StatusClass::Active => Some(&self.active_aux),
            StatusClass::UnderAttack => Some(&self.attack_aux),
            StatusClass::Unknown => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_mem_bytes == 0 {
            return Err(Error::InvalidProfile(format!(
                "{}: total_mem_bytes must be positive",
                self.name
            )));
        }
        let mem_bands = [
            ("idle_mem", &self.idle_mem),
            ("active_mem", &self.active_mem),
            ("attack_mem", &self.attack_mem),
        ];
        for (label, band) in mem_bands {
            if !(band.min.is_finite() && band.max.is_finite()) || band.min > band.max {
                return Err(Error::InvalidProfile(format!(
                    "{}: {} range [{}, {}] is not ordered",
                    self.name, label, band.min, band.max
                )));
            }
            if band.min < 0.0 || band.max > 1.0 {
                return Err(Error::InvalidProfile(format!(
                    "{}: {} range [{}, {}] escapes [0, 1]",
                    self.name, label, band.min, band.max
                )));
            }
        }
        if !(self.idle_mem.max <= self.active_mem.max && self.active_mem.max <= self.attack_mem.max)
        {
            return Err(Error::InvalidProfile(format!(
                "{}: memory bands must escalate idle <= active <= attack",
                self.name
            )));
        }
        if !(self.idle_mem.min <= self.active_mem.min && self.active_mem.min <= self.attack_mem.min)
        {
            return Err(Error::InvalidProfile(format!(
                "{}: memory band minima must escalate idle <= active <= attack",
                self.name
            )));
        }
        let fraction_aux = self.architecture == Architecture::GeneralPurpose;
        let aux_bands = [
            ("idle_aux", &self.idle_aux),
            ("active_aux", &self.active_aux),
            ("attack_aux", &self.attack_aux),
        ];
        for (label, band) in aux_bands {
            if band.min < 0.0 || !band.min.is_finite() {
                return Err(Error::InvalidProfile(format!(
                    "{}: {} minimum {} is invalid",
                    self.name, label, band.min
                )));
            }
            if let Some(max) = band.max {
                if !max.is_finite() || band.min > max {
                    return Err(Error::InvalidProfile(format!(
                        "{}: {} range [{}, {}] is not ordered",
                        self.name, label, band.min, max
                    )));
                }
                if fraction_aux && max > 1.0 {
                    return Err(Error::InvalidProfile(format!(
                        "{}: {} exceeds 1.0 for a CPU-fraction metric",
                        self.name, label
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One timestamped, normalized telemetry sample for one device.
///
/// Exactly one of `cpu_frac` / `thread_time_s` is present, fixed by the
/// device architecture. `attack_flag` is the simulator's ground-truth label
/// and is absent on live readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceReading {
    pub device_id: String,
    pub timestamp_s: f64,
    pub mem_frac: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_frac: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thread_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_flag: Option<bool>,
}

impl ResourceReading {
    pub fn validate(&self) -> Result<()> {
        if !self.timestamp_s.is_finite() || self.timestamp_s < 0.0 {
            return Err(Error::InvalidMeasurement(format!(
                "timestamp {} must be a non-negative real",
                self.timestamp_s
            )));
        }
        if !self.mem_frac.is_finite() || !(0.0..=1.0).contains(&self.mem_frac) {
            return Err(Error::InvalidMeasurement(format!(
                "mem_frac {} escapes [0, 1]",
                self.mem_frac
            )));
        }
        if let Some(cpu) = self.cpu_frac {
            if !cpu.is_finite() || !(0.0..=1.0).contains(&cpu) {
                return Err(Error::InvalidMeasurement(format!(
                    "cpu_frac {cpu} escapes [0, 1]"
                )));
            }
        }
        if let Some(tt) = self.thread_time_s {
            if !tt.is_finite() || tt < 0.0 {
                return Err(Error::InvalidMeasurement(format!(
                    "thread_time_s {tt} must be non-negative"
                )));
            }
        }
        match (self.cpu_frac.is_some(), self.thread_time_s.is_some()) {
            (true, true) => Err(Error::InvalidMeasurement(
                "a reading carries either cpu_frac or thread_time_s, not both".to_string(),
            )),
            (false, false) => Err(Error::InvalidMeasurement(
                "a reading carries exactly one auxiliary metric".to_string(),
            )),
            _ => Ok(()),
        }
    }

    /// Returns the reading rounded to the stable log precision (3-decimal
    /// timestamps, 6-decimal fractions). Idempotent.
    pub fn quantized(mut self) -> Self {
        self.timestamp_s = quantize_timestamp(self.timestamp_s);
        self.mem_frac = quantize_frac(self.mem_frac);
        self.cpu_frac = self.cpu_frac.map(quantize_frac);
        self.thread_time_s = self.thread_time_s.map(quantize_frac);
        self
    }

    /// The architecture implied by which auxiliary metric is present.
    pub fn architecture(&self) -> Option<Architecture> {
        match (self.cpu_frac.is_some(), self.thread_time_s.is_some()) {
            (true, false) => Some(Architecture::GeneralPurpose),
            (false, true) => Some(Architecture::Microcontroller),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Normalizes a raw used-byte count against the profile's capacity,
/// saturating at 1.
pub fn normalize_mem(raw_used_bytes: u64, profile: &DeviceProfile) -> Result<f64> {
    if profile.total_mem_bytes == 0 {
        return Err(Error::InvalidProfile(format!(
            "{}: cannot normalize against zero capacity",
            profile.name
        )));
    }
    Ok((raw_used_bytes as f64 / profile.total_mem_bytes as f64).min(1.0))
}

/// Normalizes a CPU percentage to a fraction, clamping multi-core bursts
/// above 100% to 1.
pub fn normalize_cpu(raw_cpu_percent: f64) -> Result<f64> {
    if !raw_cpu_percent.is_finite() || raw_cpu_percent < 0.0 {
        return Err(Error::InvalidMeasurement(format!(
            "cpu percentage {raw_cpu_percent} must be a non-negative real"
        )));
    }
    Ok((raw_cpu_percent / 100.0).clamp(0.0, 1.0))
}

/// Converts a microcontroller free-memory report into a used fraction
/// (`1 - free/total`), saturating degenerate over-reports at zero.
pub fn used_frac_from_free(free_bytes: u64, total_bytes: u64) -> Result<f64> {
    if total_bytes == 0 {
        return Err(Error::InvalidProfile(
            "cannot derive used fraction from zero capacity".to_string(),
        ));
    }
    Ok((1.0 - free_bytes as f64 / total_bytes as f64).clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Classifies a normalized memory fraction against a profile's bands.
///
/// Bands are half-open `[min, max)` with the higher-severity band winning
/// shared boundaries. A value landing in an uncovered gap between two bands
/// takes the nearer band's class, splitting the gap at its midpoint (ties go
/// to the higher-severity side). Values below every band or at/above the
/// attack maximum are `Unknown`.
pub fn classify_mem_frac(mem_frac: f64, profile: &DeviceProfile) -> StatusClass {
    let ordered = [
        (&profile.attack_mem, StatusClass::UnderAttack),
        (&profile.active_mem, StatusClass::Active),
        (&profile.idle_mem, StatusClass::Idle),
    ];
    for (band, class) in ordered {
        if band.contains(mem_frac) {
            return class;
        }
    }
    // Gap fill between adjacent bands in ascending order.
    let ascending = [
        (&profile.idle_mem, StatusClass::Idle),
        (&profile.active_mem, StatusClass::Active),
        (&profile.attack_mem, StatusClass::UnderAttack),
    ];
    for window in ascending.windows(2) {
        let (lo, lo_class) = window[0];
        let (hi, hi_class) = window[1];
        if mem_frac >= lo.max && mem_frac < hi.min {
            let midpoint = (lo.max + hi.min) / 2.0;
            return if mem_frac < midpoint { lo_class } else { hi_class };
        }
    }
    StatusClass::Unknown
}

/// Classifies a full reading, checking that its metric set matches the
/// profile architecture first.
pub fn classify_status(reading: &ResourceReading, profile: &DeviceProfile) -> Result<StatusClass> {
    reading.validate()?;
    match reading.architecture() {
        Some(arch) if arch == profile.architecture => Ok(classify_mem_frac(reading.mem_frac, profile)),
        Some(arch) => Err(Error::InvalidInput(format!(
            "reading for device {} reports {:?} metrics but profile {} is {:?}",
            reading.device_id, arch, profile.name, profile.architecture
        ))),
        None => Err(Error::InvalidMeasurement(
            "reading carries no auxiliary metric".to_string(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Host sampling
// ---------------------------------------------------------------------------

/// A raw (un-normalized) resource snapshot from some telemetry source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawResources {
    pub used_bytes: u64,
    pub total_bytes: u64,
    /// Aggregate CPU busy percentage over the interval since the previous
    /// snapshot; absent for sources that do not report CPU.
    pub cpu_percent: Option<f64>,
}

/// Something that can be polled for resource usage. The local host and the
/// flood victim stub both implement this, so the same sampler and detector
/// pipeline drives simulated, live-host, and live-victim runs.
pub trait TelemetrySource {
    fn device_id(&self) -> &str;
    fn sample(&mut self) -> Result<RawResources>;
}

/// Number of readings a sampling run emits.
pub fn sample_count(interval_s: f64, duration_s: f64) -> usize {
    (duration_s / interval_s).floor() as usize
}

#[cfg(target_os = "linux")]
#[derive(Debug, Clone, Copy)]
struct CpuTimes {
    busy: u64,
    total: u64,
}

#[cfg(target_os = "linux")]
fn read_cpu_times() -> Result<CpuTimes> {
    let stat = std::fs::read_to_string("/proc/stat").map_err(|e| Error::Acquisition {
        metric: "cpu",
        reason: e.to_string(),
    })?;
    let line = stat
        .lines()
        .find(|l| l.starts_with("cpu "))
        .ok_or(Error::Acquisition {
            metric: "cpu",
            reason: "no aggregate cpu line in /proc/stat".to_string(),
        })?;
    let fields: Vec<u64> = line
        .split_whitespace()
        .skip(1)
        .filter_map(|v| v.parse().ok())
        .collect();
    if fields.len() < 4 {
        return Err(Error::Acquisition {
            metric: "cpu",
            reason: "short aggregate cpu line in /proc/stat".to_string(),
        });
    }
    let idle = fields[3] + fields.get(4).copied().unwrap_or(0);
    let total: u64 = fields.iter().sum();
    Ok(CpuTimes {
        busy: total - idle,
        total,
    })
}

#[cfg(target_os = "linux")]
fn read_mem_usage() -> Result<(u64, u64)> {
    let info = std::fs::read_to_string("/proc/meminfo").map_err(|e| Error::Acquisition {
        metric: "memory",
        reason: e.to_string(),
    })?;
    let mut total_kib = None;
    let mut avail_kib = None;
    for line in info.lines() {
        if let Some(rest) = line.strip_prefix("MemTotal:") {
            total_kib = rest.split_whitespace().next().and_then(|v| v.parse::<u64>().ok());
        } else if let Some(rest) = line.strip_prefix("MemAvailable:") {
            avail_kib = rest.split_whitespace().next().and_then(|v| v.parse::<u64>().ok());
        }
    }
    match (total_kib, avail_kib) {
        (Some(total), Some(avail)) if total > 0 => {
            Ok(((total - avail.min(total)) * 1024, total * 1024))
        }
        _ => Err(Error::Acquisition {
            metric: "memory",
            reason: "MemTotal/MemAvailable missing from /proc/meminfo".to_string(),
        }),
    }
}

/// Local-host telemetry: system resident memory (total minus available) and
/// aggregate CPU busy time over the sampling interval.
pub struct HostSource {
    device_id: String,
    #[cfg(target_os = "linux")]
    prev_cpu: Option<CpuTimes>,
}

impl HostSource {
    pub fn new(device_id: impl Into<String>) -> Self {
        HostSource {
            device_id: device_id.into(),
            #[cfg(target_os = "linux")]
            prev_cpu: None,
        }
    }
}

impl TelemetrySource for HostSource {
    fn device_id(&self) -> &str {
        &self.device_id
    }

    #[cfg(target_os = "linux")]
    fn sample(&mut self) -> Result<RawResources> {
        let (used, total) = read_mem_usage()?;
        let cpu = read_cpu_times()?;
        let cpu_percent = match self.prev_cpu {
            Some(prev) if cpu.total > prev.total => {
                Some(100.0 * (cpu.busy - prev.busy) as f64 / (cpu.total - prev.total) as f64)
            }
            _ => Some(0.0),
        };
        self.prev_cpu = Some(cpu);
        Ok(RawResources {
            used_bytes: used,
            total_bytes: total,
            cpu_percent,
        })
    }

    #[cfg(not(target_os = "linux"))]
    fn sample(&mut self) -> Result<RawResources> {
        Err(Error::Acquisition {
            metric: "memory",
            reason: "host telemetry is only implemented for linux".to_string(),
        })
    }
}

/// Paced sampler turning a [`TelemetrySource`] into an ordered reading
/// stream. Single producer; consumers must preserve per-device order.
pub struct Sampler<S: TelemetrySource> {
    source: S,
    interval: Duration,
    remaining: usize,
    started: Instant,
    tick: u64,
}

impl<S: TelemetrySource> Sampler<S> {
    pub fn new(source: S, interval_s: f64, duration_s: f64) -> Result<Self> {
        if !(interval_s.is_finite() && interval_s > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sampling interval {interval_s}s must be positive"
            )));
        }
        if !(duration_s.is_finite() && duration_s >= interval_s) {
            return Err(Error::InvalidInput(format!(
                "duration {duration_s}s must cover at least one interval of {interval_s}s"
            )));
        }
        Ok(Sampler {
            source,
            interval: Duration::from_secs_f64(interval_s),
            remaining: sample_count(interval_s, duration_s),
            started: Instant::now(),
            tick: 0,
        })
    }
}

impl<S: TelemetrySource> Iterator for Sampler<S> {
    type Item = Result<ResourceReading>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        self.tick += 1;
        let target = self.interval * self.tick as u32;
        let elapsed = self.started.elapsed();
        if target > elapsed {
            thread::sleep(target - elapsed);
        }
        let raw = match self.source.sample() {
            Ok(raw) => raw,
            Err(e) => return Some(Err(e)),
        };
        let mem_frac = if raw.total_bytes == 0 {
            return Some(Err(Error::Acquisition {
                metric: "memory",
                reason: "source reported zero capacity".to_string(),
            }));
        } else {
            (raw.used_bytes as f64 / raw.total_bytes as f64).min(1.0)
        };
        let cpu_frac = match raw.cpu_percent.map(normalize_cpu).transpose() {
            Ok(cpu) => cpu,
            Err(e) => return Some(Err(e)),
        };
        let reading = ResourceReading {
            device_id: self.source.device_id().to_string(),
            timestamp_s: self.started.elapsed().as_secs_f64(),
            mem_frac,
            cpu_frac,
            thread_time_s: None,
            attack_flag: None,
        }
        .quantized();
        Some(Ok(reading))
    }
}

/// Samples the local host every `interval_s` for `duration_s`, emitting
/// `floor(duration/interval)` normalized readings.
///
/// The profile must describe a general-purpose device; a microcontroller
/// profile has no host-side thread-time source here.
pub fn sample_host(
    interval_s: f64,
    duration_s: f64,
    profile: &DeviceProfile,
) -> Result<Vec<ResourceReading>> {
    profile.validate()?;
    if profile.architecture != Architecture::GeneralPurpose {
        return Err(Error::InvalidInput(format!(
            "profile {} expects thread-time telemetry, which the host cannot provide",
            profile.name
        )));
    }
    let sampler = Sampler::new(HostSource::new("host"), interval_s, duration_s)?;
    sampler.collect()
}
