//! Experiment persistence: append-only JSONL reading logs, event logs, the
//! device registry, the address blacklist, and whole-experiment records.
//!
//! Logs are one JSON object per line so every record parses independently
//! and experiment artifacts diff cleanly. Timestamps are stored with a fixed
//! 3-digit fraction and usage fractions with 6 digits, which makes replays
//! bit-exact across machines.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::{DetectionEvent, DetectorConfig, EventKind};
use crate::error::{Error, Result};
use crate::netprobe::DeviceRecord;
use crate::simulator::ScenarioDoc;
use crate::telemetry::{DeviceProfile, ResourceReading};

pub const READINGS_FILE: &str = "readings.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const REGISTRY_FILE: &str = "registry.json";
pub const BLACKLIST_FILE: &str = "blacklist.json";
pub const EXPERIMENT_FILE: &str = "experiment.json";

/// Schema tag carried by the reading-log header line.
pub const READINGS_SCHEMA: &str = "memguard.readings/1";

fn display_path(path: &Path) -> String {
    path.display().to_string()
}

// ---------------------------------------------------------------------------
// Reading log
// ---------------------------------------------------------------------------

/// First line of every reading log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub schema: String,
    pub profile: String,
}

/// Append-only writer for one reading log. Single writer per file; enforces
/// strictly increasing timestamps per device.
pub struct ReadingLogWriter {
    path: PathBuf,
    file: BufWriter<File>,
    last_seen: HashMap<String, f64>,
}

impl ReadingLogWriter {
    /// Creates a fresh log with a header line, truncating any existing file.
    pub fn create(path: impl AsRef<Path>, profile_name: &str) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = BufWriter::new(File::create(&path)?);
        let header = LogHeader {
            schema: READINGS_SCHEMA.to_string(),
            profile: profile_name.to_string(),
        };
        serde_json::to_writer(&mut file, &header).map_err(io_err)?;
        file.write_all(b"\n")?;
        file.flush()?;
        Ok(ReadingLogWriter {
            path,
            file,
            last_seen: HashMap::new(),
        })
    }

    /// Reopens an existing log for appending, rebuilding per-device ordering
    /// state from its contents.
    pub fn open_append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let (_, readings) = load_readings(&path, &ReadingFilter::default())?;
        let mut last_seen = HashMap::new();
        for r in &readings {
            last_seen.insert(r.device_id.clone(), r.timestamp_s);
        }
        let file = BufWriter::new(OpenOptions::new().append(true).open(&path)?);
        Ok(ReadingLogWriter {
            path,
            file,
            last_seen,
        })
    }

    /// Durably appends one reading. A crash mid-write leaves at most one
    /// truncated final line, which loads skip.
    pub fn append(&mut self, reading: &ResourceReading) -> Result<()> {
        reading.validate()?;
        let reading = reading.clone().quantized();
        if let Some(&last) = self.last_seen.get(&reading.device_id) {
            if reading.timestamp_s <= last {
                return Err(Error::OutOfOrder {
                    device_id: reading.device_id.clone(),
                    previous_s: last,
                    current_s: reading.timestamp_s,
                });
            }
        }
        serde_json::to_writer(&mut self.file, &reading).map_err(io_err)?;
        self.file.write_all(b"\n")?;
        self.file.flush()?;
        self.last_seen
            .insert(reading.device_id.clone(), reading.timestamp_s);
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

fn io_err(e: serde_json::Error) -> Error {
    Error::Io(e.into())
}

/// Device/time-window filter for log loads. Bounds are half-open
/// `[t_min, t_max)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReadingFilter {
    pub device_id: Option<String>,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
}

impl ReadingFilter {
    fn admits(&self, reading: &ResourceReading) -> bool {
        if let Some(device) = &self.device_id {
            if &reading.device_id != device {
                return false;
            }
        }
        if let Some(t_min) = self.t_min {
            if reading.timestamp_s < t_min {
                return false;
            }
        }
        if let Some(t_max) = self.t_max {
            if reading.timestamp_s >= t_max {
                return false;
            }
        }
        true
    }
}

/// Loads readings matching the filter, in timestamp order. An unparseable
/// final line without a trailing newline is treated as a truncated tail and
/// skipped; any other bad line is a corruption error with its line number.
pub fn load_readings(
    path: impl AsRef<Path>,
    filter: &ReadingFilter,
) -> Result<(LogHeader, Vec<ResourceReading>)> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path)?;
    let ends_with_newline = raw.ends_with('\n');
    let lines: Vec<&str> = raw.lines().collect();
    if lines.is_empty() {
        return Err(Error::SchemaMismatch {
            path: display_path(path),
            expected: READINGS_SCHEMA.to_string(),
            found: "empty file".to_string(),
        });
    }
    let header: LogHeader = serde_json::from_str(lines[0]).map_err(|e| Error::CorruptLog {
        path: display_path(path),
        line: 1,
        reason: format!("bad header: {e}"),
    })?;
    if header.schema != READINGS_SCHEMA {
        return Err(Error::SchemaMismatch {
            path: display_path(path),
            expected: READINGS_SCHEMA.to_string(),
            found: header.schema,
        });
    }

    let mut readings = Vec::new();
    let last_index = lines.len() - 1;
    for (idx, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ResourceReading>(line) {
            Ok(reading) => {
                if filter.admits(&reading) {
                    readings.push(reading);
                }
            }
            Err(e) => {
                if idx == last_index && !ends_with_newline {
                    // Truncated tail from an interrupted append.
                    continue;
                }
                return Err(Error::CorruptLog {
                    path: display_path(path),
                    line: idx + 1,
                    reason: e.to_string(),
                });
            }
        }
    }
    readings.sort_by(|a, b| a.timestamp_s.total_cmp(&b.timestamp_s));
    Ok((header, readings))
}

// ---------------------------------------------------------------------------
// Event log
// ---------------------------------------------------------------------------

pub fn write_events(path: impl AsRef<Path>, events: &[DetectionEvent]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path.as_ref())?);
    for event in events {
        file.write_all(event_line(event)?.as_bytes())?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Serializes one event exactly as it appears in `events.jsonl`.
pub fn event_line(event: &DetectionEvent) -> Result<String> {
    serde_json::to_string(event).map_err(io_err)
}

pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<DetectionEvent>> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path)?;
    let ends_with_newline = raw.ends_with('\n');
    let lines: Vec<&str> = raw.lines().collect();
    let mut events = Vec::new();
    for (idx, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DetectionEvent>(line) {
            Ok(event) => events.push(event),
            Err(e) => {
                if idx == lines.len() - 1 && !ends_with_newline {
                    continue;
                }
                return Err(Error::CorruptLog {
                    path: display_path(path),
                    line: idx + 1,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(events)
}

// ---------------------------------------------------------------------------
// Registry and blacklist
// ---------------------------------------------------------------------------

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let text = serde_json::to_string_pretty(value).map_err(io_err)?;
    fs::write(&tmp, text.as_bytes())?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// The scanned-device registry, persisted as `registry.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub devices: Vec<DeviceRecord>,
}

impl Registry {
    /// Loads the registry; a missing file is an empty registry.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        match fs::read_to_string(path.as_ref()) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| Error::CorruptLog {
                path: display_path(path.as_ref()),
                line: 0,
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Registry::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_json(path.as_ref(), self)
    }

    pub fn find(&self, ip: Ipv4Addr) -> Option<&DeviceRecord> {
        self.devices.iter().find(|d| d.ip == ip)
    }

    /// Merges scan results, keeping each existing record's blacklist flag.
    pub fn apply_scan(&mut self, records: Vec<DeviceRecord>) {
        for mut record in records {
            match self.devices.iter_mut().find(|d| d.ip == record.ip) {
                Some(existing) => {
                    record.blacklisted = existing.blacklisted;
                    *existing = record;
                }
                None => self.devices.push(record),
            }
        }
        self.devices.sort_by_key(|d| d.ip);
    }

    pub fn set_blacklisted(&mut self, ip: Ipv4Addr) -> Result<()> {
        match self.devices.iter_mut().find(|d| d.ip == ip) {
            Some(device) => {
                device.blacklisted = true;
                Ok(())
            }
            None => Err(Error::NotFound(format!("device {ip} is not registered"))),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct BlacklistDoc {
    addresses: BTreeSet<Ipv4Addr>,
}

/// Path-bound blacklist with set semantics; every mutation persists
/// immediately.
#[derive(Debug)]
pub struct BlacklistStore {
    path: PathBuf,
    doc: BlacklistDoc,
}

impl BlacklistStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let doc = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| Error::CorruptLog {
                path: display_path(&path),
                line: 0,
                reason: e.to_string(),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BlacklistDoc::default(),
            Err(e) => return Err(e.into()),
        };
        Ok(BlacklistStore { path, doc })
    }

    pub fn parse_ip(text: &str) -> Result<Ipv4Addr> {
        text.trim()
            .parse()
            .map_err(|_| Error::Parse(format!("{text:?} is not an IPv4 address")))
    }

    /// Adds an address; returns whether it was newly inserted. Idempotent.
    pub fn add(&mut self, ip: Ipv4Addr) -> Result<bool> {
        let inserted = self.doc.addresses.insert(ip);
        save_json(&self.path, &self.doc)?;
        Ok(inserted)
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        self.doc.addresses.contains(&ip)
    }

    pub fn remove(&mut self, ip: Ipv4Addr) -> Result<bool> {
        let removed = self.doc.addresses.remove(&ip);
        save_json(&self.path, &self.doc)?;
        Ok(removed)
    }

    pub fn addresses(&self) -> impl Iterator<Item = Ipv4Addr> + '_ {
        self.doc.addresses.iter().copied()
    }
}

// ---------------------------------------------------------------------------
// Experiment record
// ---------------------------------------------------------------------------

/// Stream-level metrics derived from a run's readings and events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub readings: u64,
    pub events: u64,
    /// Samples (and seconds) from the first attack-flagged reading — or the
    /// first reading above the absolute threshold when no ground truth is
    /// present — to the first attack declaration.
    pub detection_latency_samples: Option<u64>,
    pub detection_latency_s: Option<f64>,
    /// Samples (and seconds) from the last suspicious reading before the
    /// first stop event to that stop event.
    pub stop_latency_samples: Option<u64>,
    pub stop_latency_s: Option<f64>,
    /// Attack declarations whose triggering reading was not inside a burst
    /// window (ground-truth labels required; zero otherwise).
    pub false_positives: u64,
    pub attack_ongoing_at_end: bool,
}

/// Recomputes summary metrics from a stored reading/event pair.
pub fn compute_summary(
    readings: &[ResourceReading],
    events: &[DetectionEvent],
    config: &DetectorConfig,
) -> SummaryMetrics {
    let index_of = |timestamp: f64, device: &str| -> Option<usize> {
        readings
            .iter()
            .position(|r| r.timestamp_s == timestamp && r.device_id == device)
    };

    let first_start = events.iter().find(|e| e.kind == EventKind::AttackStarted);
    let has_flags = readings.iter().any(|r| r.attack_flag.is_some());

    let anchor = if has_flags {
        readings.iter().position(|r| r.attack_flag == Some(true))
    } else {
        readings
            .iter()
            .position(|r| r.mem_frac > config.absolute_threshold)
    };

    let (detection_latency_samples, detection_latency_s) = match (first_start, anchor) {
        (Some(event), Some(anchor_idx)) => {
            match index_of(event.timestamp_s, &event.device_id) {
                Some(started_idx) if started_idx >= anchor_idx => (
                    Some((started_idx - anchor_idx) as u64),
                    Some(event.timestamp_s - readings[anchor_idx].timestamp_s),
                ),
                _ => (None, None),
            }
        }
        _ => (None, None),
    };

    let first_stop = events.iter().find(|e| e.kind == EventKind::AttackStopped);
    let (stop_latency_samples, stop_latency_s) = match first_stop {
        Some(event) => match index_of(event.timestamp_s, &event.device_id) {
            Some(stop_idx) => {
                let last_suspicious = readings[..stop_idx]
                    .iter()
                    .rposition(|r| r.mem_frac > config.absolute_threshold);
                match last_suspicious {
                    Some(idx) => (
                        Some((stop_idx - idx) as u64),
                        Some(event.timestamp_s - readings[idx].timestamp_s),
                    ),
                    None => (None, None),
                }
            }
            None => (None, None),
        },
        None => (None, None),
    };

    let false_positives = if has_flags {
        events
            .iter()
            .filter(|e| e.kind == EventKind::AttackStarted)
            .filter(|e| {
                index_of(e.timestamp_s, &e.device_id)
                    .map(|idx| readings[idx].attack_flag != Some(true))
                    .unwrap_or(true)
            })
            .count() as u64
    } else {
        0
    };

    let starts = events
        .iter()
        .filter(|e| e.kind == EventKind::AttackStarted)
        .count();
    let stops = events
        .iter()
        .filter(|e| e.kind == EventKind::AttackStopped)
        .count();

    SummaryMetrics {
        readings: readings.len() as u64,
        events: events.len() as u64,
        detection_latency_samples,
        detection_latency_s,
        stop_latency_samples,
        stop_latency_s,
        false_positives,
        attack_ongoing_at_end: starts > stops,
    }
}

/// Everything needed to reproduce and audit one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub scenario: ScenarioDoc,
    pub config: DetectorConfig,
    pub profile: DeviceProfile,
    pub seed: u64,
    pub interval_s: f64,
    pub total_s: f64,
    pub events: Vec<DetectionEvent>,
    pub summary: SummaryMetrics,
}

/// An experiment directory holding the standard file layout.
#[derive(Debug, Clone)]
pub struct ExperimentDir {
    root: PathBuf,
}

impl ExperimentDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ExperimentDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn readings_path(&self) -> PathBuf {
        self.root.join(READINGS_FILE)
    }

    pub fn events_path(&self) -> PathBuf {
        self.root.join(EVENTS_FILE)
    }

    pub fn registry_path(&self) -> PathBuf {
        self.root.join(REGISTRY_FILE)
    }

    pub fn blacklist_path(&self) -> PathBuf {
        self.root.join(BLACKLIST_FILE)
    }

    pub fn record_path(&self) -> PathBuf {
        self.root.join(EXPERIMENT_FILE)
    }

    /// Persists a full run: readings log, events log, and experiment record.
    pub fn write_run(
        &self,
        record: &ExperimentRecord,
        readings: &[ResourceReading],
    ) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        let mut writer = ReadingLogWriter::create(self.readings_path(), &record.profile.name)?;
        for reading in readings {
            writer.append(reading)?;
        }
        write_events(self.events_path(), &record.events)?;
        save_json(&self.record_path(), record)?;
        Ok(())
    }

    pub fn load_record(&self) -> Result<ExperimentRecord> {
        let path = self.record_path();
        let text = fs::read_to_string(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::NotFound(display_path(&path))
            } else {
                e.into()
            }
        })?;
        serde_json::from_str(&text).map_err(|e| Error::CorruptLog {
            path: display_path(&path),
            line: 0,
            reason: e.to_string(),
        })
    }

    pub fn load_readings(&self, filter: &ReadingFilter) -> Result<(LogHeader, Vec<ResourceReading>)> {
        load_readings(self.readings_path(), filter)
    }

    pub fn load_events(&self) -> Result<Vec<DetectionEvent>> {
        load_events(self.events_path())
    }

    /// Recomputes the stored summary from the readings and events on disk;
    /// a mismatch means the directory is corrupt.
    pub fn verify(&self) -> Result<ExperimentRecord> {
        let record = self.load_record()?;
        let (_, readings) = self.load_readings(&ReadingFilter::default())?;
        let events = self.load_events()?;
        if events != record.events {
            return Err(Error::CorruptLog {
                path: display_path(&self.events_path()),
                line: 0,
                reason: "event log does not match the experiment record".to_string(),
            });
        }
        let summary = compute_summary(&readings, &events, &record.config);
        if summary != record.summary {
            return Err(Error::CorruptLog {
                path: display_path(&self.record_path()),
                line: 0,
                reason: "stored summary metrics do not match recomputation".to_string(),
            });
        }
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::DetectorConfig;
    use crate::simulator::{simulate_trace, AttackScenario, DeviceSim, ScenarioDoc};
    use crate::telemetry::DeviceProfile;
    use std::io::Write as _;

    fn reading(device: &str, t: f64, mem: f64) -> ResourceReading {
        ResourceReading {
            device_id: device.to_string(),
            timestamp_s: t,
            mem_frac: mem,
            cpu_frac: Some(0.01),
            thread_time_s: None,
            attack_flag: None,
        }
        .quantized()
    }

    #[test]
    fn append_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(READINGS_FILE);
        let mut writer = ReadingLogWriter::create(&path, "raspberry-pi").unwrap();
        let r = reading("dev-0", 3.0, 0.154321);
        writer.append(&r).unwrap();
        let (header, loaded) = load_readings(&path, &ReadingFilter::default()).unwrap();
        assert_eq!(header.profile, "raspberry-pi");
        assert_eq!(loaded, vec![r]);
    }

    #[test]
    fn out_of_order_append_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(READINGS_FILE);
        let mut writer = ReadingLogWriter::create(&path, "raspberry-pi").unwrap();
        writer.append(&reading("dev-0", 3.0, 0.15)).unwrap();
        let err = writer.append(&reading("dev-0", 3.0, 0.16)).unwrap_err();
        assert!(matches!(err, Error::OutOfOrder { .. }));
        // A different device may share the timestamp.
        writer.append(&reading("dev-1", 3.0, 0.15)).unwrap();
    }

    #[test]
    fn reopen_for_append_keeps_ordering_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(READINGS_FILE);
        {
            let mut writer = ReadingLogWriter::create(&path, "raspberry-pi").unwrap();
            writer.append(&reading("dev-0", 3.0, 0.15)).unwrap();
        }
        let mut writer = ReadingLogWriter::open_append(&path).unwrap();
        assert!(writer.append(&reading("dev-0", 2.0, 0.15)).is_err());
        writer.append(&reading("dev-0", 6.0, 0.16)).unwrap();
        let (_, loaded) = load_readings(&path, &ReadingFilter::default()).unwrap();
        assert_eq!(loaded.len(), 2);
    }

    #[test]
    fn empty_log_with_header_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(READINGS_FILE);
        ReadingLogWriter::create(&path, "arduino").unwrap();
        let (header, loaded) = load_readings(&path, &ReadingFilter::default()).unwrap();
        assert_eq!(header.profile, "arduino");
        assert!(loaded.is_empty());
    }

    #[test]
    fn device_filter_selects_one_stream() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(READINGS_FILE);
        let mut writer = ReadingLogWriter::create(&path, "raspberry-pi").unwrap();
        for k in 1..=5 {
            writer.append(&reading("a", k as f64, 0.15)).unwrap();
            writer.append(&reading("b", k as f64, 0.25)).unwrap();
        }
        let filter = ReadingFilter {
            device_id: Some("b".to_string()),
            ..Default::default()
        };
        let (_, loaded) = load_readings(&path, &filter).unwrap();
        assert_eq!(loaded.len(), 5);
        assert!(loaded.iter().all(|r| r.device_id == "b"));

        let window = ReadingFilter {
            t_min: Some(2.0),
            t_max: Some(4.0),
            ..Default::default()
        };
        let (_, loaded) = load_readings(&path, &window).unwrap();
        assert_eq!(loaded.len(), 4);
    }

    #[test]
    fn truncated_tail_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(READINGS_FILE);
        let mut writer = ReadingLogWriter::create(&path, "raspberry-pi").unwrap();
        writer.append(&reading("dev-0", 3.0, 0.15)).unwrap();
        drop(writer);
        let mut file = OpenOptions::new().append(true).open(&path).unwrap();
        file.write_all(b"{\"device_id\":\"dev-0\",\"tim").unwrap();
        drop(file);
        let (_, loaded) = load_readings(&path, &ReadingFilter::default()).unwrap();
        assert_eq!(loaded.len(), 1);
    }

    #[test]
    fn interior_corruption_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(READINGS_FILE);
        let mut writer = ReadingLogWriter::create(&path, "raspberry-pi").unwrap();
        writer.append(&reading("dev-0", 3.0, 0.15)).unwrap();
        drop(writer);
        let mut file = OpenOptions::new().append(true).open(&path).unwrap();
        file.write_all(b"not json at all\n").unwrap();
        file.write_all(
            format!("{}\n", serde_json::to_string(&reading("dev-0", 6.0, 0.2)).unwrap()).as_bytes(),
        )
        .unwrap();
        drop(file);
        match load_readings(&path, &ReadingFilter::default()) {
            Err(Error::CorruptLog { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn missing_header_is_schema_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(READINGS_FILE);
        fs::write(&path, "").unwrap();
        assert!(matches!(
            load_readings(&path, &ReadingFilter::default()),
            Err(Error::SchemaMismatch { .. })
        ));
        fs::write(&path, "{\"schema\":\"other/9\",\"profile\":\"x\"}\n").unwrap();
        assert!(matches!(
            load_readings(&path, &ReadingFilter::default()),
            Err(Error::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn stress_load_stays_under_budget() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(READINGS_FILE);
        let mut writer = ReadingLogWriter::create(&path, "raspberry-pi").unwrap();
        for k in 1..=12_000u32 {
            writer.append(&reading("dev-0", k as f64 * 0.05, 0.15)).unwrap();
        }
        drop(writer);
        let started = std::time::Instant::now();
        let (_, loaded) = load_readings(&path, &ReadingFilter::default()).unwrap();
        assert_eq!(loaded.len(), 12_000);
        assert!(
            started.elapsed() < std::time::Duration::from_secs(1),
            "load took {:?}",
            started.elapsed()
        );
    }

    #[test]
    fn blacklist_set_semantics_and_persistence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(BLACKLIST_FILE);
        let ip: Ipv4Addr = "127.0.0.1".parse().unwrap();
        {
            let mut store = BlacklistStore::open(&path).unwrap();
            assert!(!store.contains(ip));
            assert!(store.add(ip).unwrap());
            assert!(!store.add(ip).unwrap()); // idempotent
            assert!(store.contains(ip));
        }
        // Fresh process: still blacklisted.
        let store = BlacklistStore::open(&path).unwrap();
        assert!(store.contains(ip));
        assert!(!store.contains("127.0.0.2".parse().unwrap()));
    }

    #[test]
    fn blacklist_rejects_malformed_address() {
        assert!(matches!(
            BlacklistStore::parse_ip("definitely-not-an-ip"),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn replaying_a_stored_log_reproduces_events() {
        let dir = tempfile::tempdir().unwrap();
        let exp = ExperimentDir::new(dir.path().join("exp"));
        let doc = ScenarioDoc::builtin_default();
        let mut device = DeviceSim::new(doc.target_device_id.clone(), DeviceProfile::raspberry_pi(), doc.seed);
        device.device_id = doc.target_device_id.clone();
        let scenario = doc.scenario();
        let config = DetectorConfig::for_profile(&device.profile);
        let readings = simulate_trace(&device, &scenario, 3.0, 600.0).unwrap();
        let events = crate::detector::detector_run(readings.iter(), &config).unwrap();
        let record = ExperimentRecord {
            scenario: doc,
            config: config.clone(),
            profile: device.profile.clone(),
            seed: device.rng_seed,
            interval_s: 3.0,
            total_s: 600.0,
            events: events.clone(),
            summary: compute_summary(&readings, &events, &config),
        };
        exp.write_run(&record, &readings).unwrap();

        let (_, loaded) = exp.load_readings(&ReadingFilter::default()).unwrap();
        assert_eq!(loaded, readings);
        let replayed = crate::detector::detector_run(loaded.iter(), &config).unwrap();
        assert_eq!(replayed, events);
        exp.verify().unwrap();
    }

    #[test]
    fn verify_detects_summary_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let exp = ExperimentDir::new(dir.path().join("exp"));
        let device = DeviceSim::new("device-0", DeviceProfile::raspberry_pi(), 1);
        let scenario = AttackScenario::quiet("device-0");
        let config = DetectorConfig::for_profile(&device.profile);
        let readings = simulate_trace(&device, &scenario, 3.0, 60.0).unwrap();
        let mut record = ExperimentRecord {
            scenario: ScenarioDoc::builtin_default(),
            config: config.clone(),
            profile: device.profile.clone(),
            seed: 1,
            interval_s: 3.0,
            total_s: 60.0,
            events: Vec::new(),
            summary: compute_summary(&readings, &[], &config),
        };
        record.summary.readings += 1;
        exp.write_run(&record, &readings).unwrap();
        assert!(matches!(exp.verify(), Err(Error::CorruptLog { .. })));
    }
}
