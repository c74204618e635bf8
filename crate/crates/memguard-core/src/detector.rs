//! Streaming memory-usage attack detector.
//!
//! A per-device state machine watches the normalized memory reading stream.
//! Each step compares the change since the previous sample (`Diff`) and the
//! absolute level against configured thresholds; suspicious samples advance a
//! counter `C1`, quiet samples advance a timer `T1`. When `C1` exceeds its
//! bound the detector declares an attack and requests mitigation; when `T1`
//! expires afterwards it declares the attack stopped and re-arms.
//!
//! Detection gates on the memory metric only. CPU / thread time ride along in
//! the readings for reporting but never influence the trigger.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::{DeviceProfile, ResourceReading};

/// Default bound on the suspicious-sample counter `C1`.
pub const DEFAULT_COUNT_THRESHOLD: u32 = 3;
/// Default bound on the quiet-sample timer `T1`.
pub const DEFAULT_TIME_THRESHOLD: u32 = 4;
/// Default monitoring cadence in seconds.
pub const DEFAULT_SAMPLE_INTERVAL_S: f64 = 3.0;
/// Margin added above the highest legitimate (active) usage when deriving
/// the default absolute threshold.
pub const ABSOLUTE_THRESHOLD_MARGIN: f64 = 0.02;

/// Which arm(s) of the trigger predicate gate a sample as suspicious.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerMode {
    /// `Diff > reading_threshold`.
    Differential,
    /// `mem_frac > absolute_threshold`.
    Absolute,
    /// Both conditions at once.
    Both,
}

impl fmt::Display for TriggerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TriggerMode::Differential => "differential",
            TriggerMode::Absolute => "absolute",
            TriggerMode::Both => "both",
        };
        f.write_str(s)
    }
}

/// The ordered mitigation steps applied once an attack is declared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitigationAction {
    /// Add the victim's address to the persistent blacklist.
    Blacklist,
    /// Stop read/write operations on the device memory.
    StopReadWrite,
    /// Disconnect the device from the network.
    Disconnect,
}

/// The canonical mitigation order. Action lists must be in-order
/// subsequences of this.
pub const MITIGATION_ORDER: [MitigationAction; 3] = [
    MitigationAction::Blacklist,
    MitigationAction::StopReadWrite,
    MitigationAction::Disconnect,
];

/// Validates that `actions` is an in-order, duplicate-free subsequence of
/// [`MITIGATION_ORDER`].
pub fn validate_mitigation_order(actions: &[MitigationAction]) -> Result<()> {
    let mut cursor = 0usize;
    for action in actions {
        let pos = MITIGATION_ORDER[cursor..]
            .iter()
            .position(|a| a == action)
            .map(|p| cursor + p)
            .ok_or_else(|| {
                Error::ProtocolViolation(format!(
                    "mitigation action {action:?} is out of order or duplicated"
                ))
            })?;
        cursor = pos + 1;
    }
    Ok(())
}

/// Detector thresholds and cadence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Change budget the differential arm compares `Diff` against. The
    /// profile default divides the full expected attack swing by
    /// `count_threshold`, so a ramp spread over several samples still trips
    /// the arm; set it to the full swing to demand a single sudden jump.
    pub reading_threshold: f64,
    /// Memory level above which a sample is suspicious on its own.
    pub absolute_threshold: f64,
    pub trigger_mode: TriggerMode,
    /// Bound on the suspicious-sample counter `C1`; the attack is declared
    /// on the first sample that pushes `C1` past it.
    pub count_threshold: u32,
    /// Bound on the quiet-sample timer `T1`; the attack is declared stopped
    /// on the first quiet sample that pushes `T1` past it.
    pub time_threshold: u32,
    pub sample_interval_s: f64,
    /// Actions requested (in order) when an attack is declared.
    pub mitigation_actions: Vec<MitigationAction>,
}

impl DetectorConfig {
    /// Defaults derived from a device profile: absolute threshold just above
    /// the active band, per-step differential budget, absolute trigger mode.
    pub fn for_profile(profile: &DeviceProfile) -> Self {
        let count_threshold = DEFAULT_COUNT_THRESHOLD;
        DetectorConfig {
            reading_threshold: per_step_budget(derive_reading_threshold(profile), count_threshold),
            absolute_threshold: default_absolute_threshold(profile),
            trigger_mode: TriggerMode::Absolute,
            count_threshold,
            time_threshold: DEFAULT_TIME_THRESHOLD,
            sample_interval_s: DEFAULT_SAMPLE_INTERVAL_S,
            mitigation_actions: MITIGATION_ORDER.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reading_threshold > 0.0 && self.reading_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "reading_threshold {} escapes (0, 1]",
                self.reading_threshold
            )));
        }
        if !(self.absolute_threshold > 0.0 && self.absolute_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "absolute_threshold {} escapes (0, 1)",
                self.absolute_threshold
            )));
        }
        if self.count_threshold < 1 {
            return Err(Error::InvalidConfig(
                "count_threshold must be at least 1".to_string(),
            ));
        }
        if self.time_threshold < 1 {
            return Err(Error::InvalidConfig(
                "time_threshold must be at least 1".to_string(),
            ));
        }
        if !(self.sample_interval_s.is_finite() && self.sample_interval_s > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sample_interval_s {} must be positive",
                self.sample_interval_s
            )));
        }
        validate_mitigation_order(&self.mitigation_actions)
    }
}

/// Maximum expected sudden memory change: attack-band maximum minus the
/// minimum usage across the pre-attack (idle) range.
pub fn derive_reading_threshold(profile: &DeviceProfile) -> f64 {
    profile.attack_mem.max - profile.idle_mem.min
}

/// Spreads the full expected swing over the counter bound, yielding the
/// per-sample change budget used by the differential arm's default.
pub fn per_step_budget(full_swing: f64, count_threshold: u32) -> f64 {
    full_swing / count_threshold.max(1) as f64
}

/// Absolute suspicion level: just above the highest legitimate (active)
/// usage, clamped below 1.
pub fn default_absolute_threshold(profile: &DeviceProfile) -> f64 {
    (profile.active_mem.max + ABSOLUTE_THRESHOLD_MARGIN).min(0.99)
}

/// Detector phase; `AttackActive` exactly while the alert is raised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorPhase {
    Monitoring,
    AttackActive,
}

/// Immutable per-device detector state snapshot. Safe to persist and resume:
/// replaying the remaining stream from a snapshot yields the same events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    /// Previous memory reading (`M1`); absent before the first sample.
    pub prev_mem: Option<f64>,
    /// Timestamp of the last accepted reading, for ordering enforcement.
    pub last_timestamp_s: Option<f64>,
    /// Suspicious-sample counter `C1`.
    pub counter_c1: u32,
    /// Quiet-sample timer `T1`.
    pub timer_t1: u32,
    pub alert: bool,
    pub phase: DetectorPhase,
}

impl DetectorState {
    pub fn new() -> Self {
        DetectorState {
            prev_mem: None,
            last_timestamp_s: None,
            counter_c1: 0,
            timer_t1: 0,
            alert: false,
            phase: DetectorPhase::Monitoring,
        }
    }
}

impl Default for DetectorState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    AttackStarted,
    AttackStopped,
    MitigationApplied,
}

/// A detection or mitigation record tied to the reading that triggered it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionEvent {
    pub kind: EventKind,
    pub device_id: String,
    pub timestamp_s: f64,
    pub mem_frac: f64,
    /// Ordered action list; populated only on `MitigationApplied`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub actions: Vec<MitigationAction>,
}

impl DetectionEvent {
    fn at(kind: EventKind, reading: &ResourceReading) -> Self {
        DetectionEvent {
            kind,
            device_id: reading.device_id.clone(),
            timestamp_s: reading.timestamp_s,
            mem_frac: reading.mem_frac,
            actions: Vec::new(),
        }
    }
}

/// Advances the detector by one reading, returning the next state and any
/// events it emitted. Pure: identical `(state, config, reading)` always
/// yields identical output.
pub fn detector_step(
    state: &DetectorState,
    config: &DetectorConfig,
    reading: &ResourceReading,
) -> Result<(DetectorState, Vec<DetectionEvent>)> {
    config.validate()?;
    reading.validate()?;
    if let Some(last) = state.last_timestamp_s {
        if reading.timestamp_s <= last {
            return Err(Error::OutOfOrder {
                device_id: reading.device_id.clone(),
                previous_s: last,
                current_s: reading.timestamp_s,
            });
        }
    }

    let m2 = reading.mem_frac;
    // First reading has no predecessor: Diff = 0.
    let diff = state.prev_mem.map_or(0.0, |m1| m2 - m1);
    let suspicious = match config.trigger_mode {
        TriggerMode::Differential => diff > config.reading_threshold,
        TriggerMode::Absolute => m2 > config.absolute_threshold,
        TriggerMode::Both => diff > config.reading_threshold && m2 > config.absolute_threshold,
    };

    let mut next = state.clone();
    let mut events = Vec::new();

    if suspicious {
        next.timer_t1 = 0;
        if !next.alert {
            next.counter_c1 += 1;
            if next.counter_c1 > config.count_threshold {
                next.alert = true;
                next.phase = DetectorPhase::AttackActive;
                events.push(DetectionEvent::at(EventKind::AttackStarted, reading));
                let mut mitigation = DetectionEvent::at(EventKind::MitigationApplied, reading);
                mitigation.actions = config.mitigation_actions.clone();
                events.push(mitigation);
            }
        }
        // Alert already raised: keep monitoring, the attack is still on.
    } else if next.counter_c1 > 0 {
        next.timer_t1 += 1;
        if next.timer_t1 > config.time_threshold {
            if next.alert {
                events.push(DetectionEvent::at(EventKind::AttackStopped, reading));
            }
            next.alert = false;
            next.counter_c1 = 0;
            next.timer_t1 = 0;
            next.phase = DetectorPhase::Monitoring;
        }
    }

    next.prev_mem = Some(m2);
    next.last_timestamp_s = Some(reading.timestamp_s);
    Ok((next, events))
}

/// Folds [`detector_step`] over a reading stream, keeping independent state
/// per device. The stream must be time-ordered within each device; distinct
/// devices may interleave freely.
pub fn detector_run<'a, I>(readings: I, config: &DetectorConfig) -> Result<Vec<DetectionEvent>>
where
    I: IntoIterator<Item = &'a ResourceReading>,
{
    config.validate()?;
    let mut states: HashMap<String, DetectorState> = HashMap::new();
    let mut events = Vec::new();
    for reading in readings {
        let state = states
            .entry(reading.device_id.clone())
            .or_insert_with(DetectorState::new);
        let (next, mut emitted) = detector_step(state, config, reading)?;
        *state = next;
        events.append(&mut emitted);
    }
    Ok(events)
}
