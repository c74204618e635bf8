//! Deterministic device simulator.
//!
//! Generates telemetry traces that reproduce the per-status usage footprints
//! of a device profile, wires attack bursts from an attacker onto the target
//! device's memory, and models the physical side of mitigation: a severed
//! link stops bursts from reaching the device, stopped read/write freezes
//! legitimate memory growth, and elevated usage decays back into the active
//! band once the attack no longer lands.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{detector_step, DetectionEvent, DetectorConfig, DetectorState, EventKind};
use crate::error::{Error, Result};
use crate::netprobe::FloodProtocol;
use crate::telemetry::{Architecture, AuxBand, Band, DeviceProfile, ResourceReading};
pub use crate::detector::MitigationAction;

/// Samples an attack onset takes to ramp from the pre-attack level to the
/// attack band.
pub const RAMP_SAMPLES: u32 = 2;
/// Samples elevated usage takes to decay back into the active band once the
/// attack stops landing.
pub const DECAY_SAMPLES: u32 = 4;
/// Seed used by the built-in demo scenario.
pub const DEFAULT_SEED: u64 = 42;

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

/// One flood burst aimed at the target device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackBurst {
    pub start_s: f64,
    pub duration_s: f64,
    pub protocol: FloodProtocol,
    /// Recorded for live-mode floods and reports; the simulator's usage
    /// amplitude is band-driven, not rate-driven.
    pub rate_pps: f64,
}

impl AttackBurst {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }

    pub fn covers(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s()
    }
}

/// A schedule of flood bursts from one attacker against one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackScenario {
    pub attacker_id: String,
    pub target_device_id: String,
    pub bursts: Vec<AttackBurst>,
}

impl AttackScenario {
    pub fn quiet(target_device_id: impl Into<String>) -> Self {
        AttackScenario {
            attacker_id: "attacker-0".to_string(),
            target_device_id: target_device_id.into(),
            bursts: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev_end: Option<f64> = None;
        for burst in &self.bursts {
            if !(burst.start_s.is_finite() && burst.start_s >= 0.0) {
                return Err(Error::InvalidScenario(format!(
                    "burst start {} must be non-negative",
                    burst.start_s
                )));
            }
            if !(burst.duration_s.is_finite() && burst.duration_s > 0.0) {
                return Err(Error::InvalidScenario(format!(
                    "burst duration {} must be positive",
                    burst.duration_s
                )));
            }
            if !(burst.rate_pps.is_finite() && burst.rate_pps > 0.0) {
                return Err(Error::InvalidScenario(format!(
                    "burst rate {} must be positive",
                    burst.rate_pps
                )));
            }
            if let Some(end) = prev_end {
                if burst.start_s < end {
                    return Err(Error::InvalidScenario(
                        "bursts must be sorted and non-overlapping".to_string(),
                    ));
                }
            }
            prev_end = Some(burst.end_s());
        }
        Ok(())
    }

    pub fn covers(&self, t: f64) -> bool {
        self.bursts.iter().any(|b| b.covers(t))
    }
}

/// On-disk scenario document: the attack schedule plus the profile name and
/// seed that make a run reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub profile: String,
    pub seed: u64,
    pub attacker_id: String,
    pub target_device_id: String,
    pub bursts: Vec<AttackBurst>,
}

impl ScenarioDoc {
    /// Built-in demo schedule: a ten-minute run with one 60 s UDP burst
    /// starting at 300 s against a general-purpose device.
    pub fn builtin_default() -> Self {
        ScenarioDoc {
            profile: "raspberry-pi".to_string(),
            seed: DEFAULT_SEED,
            attacker_id: "attacker-0".to_string(),
            target_device_id: "device-0".to_string(),
            bursts: vec![AttackBurst {
                start_s: 300.0,
                duration_s: 60.0,
                protocol: FloodProtocol::Udp,
                rate_pps: 1000.0,
            }],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScenarioDoc =
            serde_json::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))?;
        doc.scenario().validate()?;
        Ok(doc)
    }

    pub fn scenario(&self) -> AttackScenario {
        AttackScenario {
            attacker_id: self.attacker_id.clone(),
            target_device_id: self.target_device_id.clone(),
            bursts: self.bursts.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Device
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkState {
    Connected,
    Disconnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineStatus {
    Idle,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselinePhase {
    pub start_s: f64,
    pub status: BaselineStatus,
}

/// Legitimate-workload schedule for a simulated device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineSchedule {
    Constant(BaselineStatus),
    /// Idle/active phases of equal length, starting idle at t = 0.
    Alternating { period_s: f64 },
    /// Explicit phases sorted by start time; idle before the first.
    Phases(Vec<BaselinePhase>),
}

impl BaselineSchedule {
    pub fn status_at(&self, t: f64) -> BaselineStatus {
        match self {
            BaselineSchedule::Constant(status) => *status,
            BaselineSchedule::Alternating { period_s } => {
                if *period_s <= 0.0 {
                    return BaselineStatus::Idle;
                }
                if (t / period_s).floor() as i64 % 2 == 0 {
                    BaselineStatus::Idle
                } else {
                    BaselineStatus::Active
                }
            }
            BaselineSchedule::Phases(phases) => phases
                .iter()
                .rev()
                .find(|p| t >= p.start_s)
                .map(|p| p.status)
                .unwrap_or(BaselineStatus::Idle),
        }
    }
}

/// A simulated device: its profile, legitimate workload, link and
/// read/write state, and the seed driving all of its randomness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSim {
    pub device_id: String,
    pub profile: DeviceProfile,
    pub baseline: BaselineSchedule,
    pub link_state: LinkState,
    pub rw_enabled: bool,
    pub blacklisted: bool,
    pub rng_seed: u64,
    pub last_mitigation_s: Option<f64>,
}

impl DeviceSim {
    pub fn new(device_id: impl Into<String>, profile: DeviceProfile, rng_seed: u64) -> Self {
        DeviceSim {
            device_id: device_id.into(),
            profile,
            baseline: BaselineSchedule::Alternating { period_s: 60.0 },
            link_state: LinkState::Connected,
            rw_enabled: true,
            blacklisted: false,
            rng_seed,
            last_mitigation_s: None,
        }
    }
}

/// Applies an ordered mitigation action list to the device at `at_s`.
///
/// Actions must be an in-order subsequence of blacklist, stop-read/write,
/// disconnect. An empty list leaves the device unchanged.
pub fn apply_mitigation(
    mut device: DeviceSim,
    actions: &[MitigationAction],
    at_s: f64,
) -> Result<DeviceSim> {
    crate::detector::validate_mitigation_order(actions)?;
    if actions.is_empty() {
        return Ok(device);
    }
    for action in actions {
        match action {
            MitigationAction::Blacklist => device.blacklisted = true,
            MitigationAction::StopReadWrite => device.rw_enabled = false,
            MitigationAction::Disconnect => device.link_state = LinkState::Disconnected,
        }
    }
    device.last_mitigation_s = Some(at_s);
    Ok(device)
}

// ---------------------------------------------------------------------------
// Trace generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
enum Regime {
    Baseline,
    Ramp { taken: u32, from: f64, target: f64 },
    Hold { level: f64 },
    Decay { taken: u32, from: f64, target: f64 },
    Frozen { level: f64 },
}

/// Stateful per-sample generator. The device is passed on every step so a
/// closed loop can mutate link/read-write state between samples.
pub struct TraceGenerator {
    rng: ChaCha8Rng,
    regime: Regime,
    last_level: Option<f64>,
}

impl TraceGenerator {
    pub fn new(device: &DeviceSim) -> Self {
        TraceGenerator {
            rng: ChaCha8Rng::seed_from_u64(device.rng_seed),
            regime: Regime::Baseline,
            last_level: None,
        }
    }

    fn draw(&mut self, band: &Band) -> f64 {
        band.min + self.rng.gen::<f64>() * band.width()
    }

    fn draw_aux(&mut self, band: &AuxBand) -> f64 {
        // Open-ended bands sample within 1.5x the minimum.
        let max = band.max.unwrap_or(band.min * 1.5);
        band.min + self.rng.gen::<f64>() * (max - band.min)
    }

    fn baseline_band<'p>(&self, device: &'p DeviceSim, t: f64) -> (&'p Band, &'p AuxBand) {
        match device.baseline.status_at(t) {
            BaselineStatus::Idle => (&device.profile.idle_mem, &device.profile.idle_aux),
            BaselineStatus::Active => (&device.profile.active_mem, &device.profile.active_aux),
        }
    }

    /// Produces the reading for sample time `t`.
    pub fn next_reading(&mut self, device: &DeviceSim, scenario: &AttackScenario, t: f64) -> ResourceReading {
        let in_burst = scenario.covers(t);
        let effective = in_burst && device.link_state == LinkState::Connected;
        let profile = &device.profile;

        if effective {
            match self.regime {
                Regime::Ramp { .. } | Regime::Hold { .. } => {}
                _ => {
                    let from = match self.last_level {
                        Some(level) => level,
                        None => {
                            let (band, _) = self.baseline_band(device, t);
                            self.draw(band)
                        }
                    };
                    let target = self.draw(&profile.attack_mem);
                    self.regime = Regime::Ramp { taken: 0, from, target };
                }
            }
        } else {
            match self.regime {
                Regime::Ramp { from, target, taken } => {
                    let current = interpolate(from, target, taken, RAMP_SAMPLES);
                    self.regime = self.decay_from(current, profile);
                }
                Regime::Hold { level } => {
                    self.regime = self.decay_from(level, profile);
                }
                _ => {}
            }
        }

        let (mem, aux_band) = match &mut self.regime {
            Regime::Baseline => {
                if device.rw_enabled {
                    let (band, aux) = self.baseline_band(device, t);
                    let band = *band;
                    let aux = *aux;
                    (self.draw(&band), aux)
                } else {
                    // Read/write stopped: legitimate memory growth is frozen.
                    let level = self.last_level.unwrap_or(profile.active_mem.min);
                    self.regime = Regime::Frozen { level };
                    (level, profile.active_aux)
                }
            }
            Regime::Ramp { taken, from, target } => {
                *taken += 1;
                let level = interpolate(*from, *target, *taken, RAMP_SAMPLES);
                let done = *taken >= RAMP_SAMPLES;
                let target = *target;
                if done {
                    self.regime = Regime::Hold { level: target };
                }
                (level, profile.attack_aux)
            }
            Regime::Decay { taken, from, target } => {
                *taken += 1;
                let level = interpolate(*from, *target, *taken, DECAY_SAMPLES);
                let done = *taken >= DECAY_SAMPLES;
                let target = *target;
                if done {
                    self.regime = if device.rw_enabled {
                        Regime::Baseline
                    } else {
                        Regime::Frozen { level: target }
                    };
                }
                (level, profile.active_aux)
            }
            Regime::Hold { level } => (*level, profile.attack_aux),
            Regime::Frozen { level } => (*level, profile.active_aux),
        };

        self.last_level = Some(mem);
        let aux_value = self.draw_aux(&aux_band);
        let (cpu_frac, thread_time_s) = match profile.architecture {
            Architecture::GeneralPurpose => (Some(aux_value.clamp(0.0, 1.0)), None),
            Architecture::Microcontroller => (None, Some(aux_value)),
        };

        ResourceReading {
            device_id: device.device_id.clone(),
            timestamp_s: t,
            mem_frac: mem.clamp(0.0, 1.0),
            cpu_frac,
            thread_time_s,
            attack_flag: Some(in_burst),
        }
        .quantized()
    }

    fn decay_from(&mut self, current: f64, profile: &DeviceProfile) -> Regime {
        if current <= profile.active_mem.max {
            // Already inside legitimate range: nothing to shed.
            return Regime::Baseline;
        }
        let target = self.draw(&profile.active_mem);
        Regime::Decay { taken: 0, from: current, target }
    }
}

fn interpolate(from: f64, target: f64, step: u32, total: u32) -> f64 {
    let frac = (step as f64 / total.max(1) as f64).min(1.0);
    from + (target - from) * frac
}

fn validate_cadence(interval_s: f64, total_s: f64) -> Result<()> {
    if !(interval_s.is_finite() && interval_s > 0.0) {
        return Err(Error::InvalidInput(format!(
            "interval {interval_s}s must be positive"
        )));
    }
    if !(total_s.is_finite() && total_s >= interval_s) {
        return Err(Error::InvalidInput(format!(
            "total duration {total_s}s must cover at least one interval of {interval_s}s"
        )));
    }
    Ok(())
}

fn check_target(device: &DeviceSim, scenario: &AttackScenario) -> Result<()> {
    if scenario.target_device_id != device.device_id {
        return Err(Error::InvalidScenario(format!(
            "scenario targets unknown device {} (simulating {})",
            scenario.target_device_id, device.device_id
        )));
    }
    Ok(())
}

/// Generates `floor(total/interval)` readings for the device under the given
/// attack schedule, with no mitigation feedback. Identical seeds give
/// identical traces.
pub fn simulate_trace(
    device: &DeviceSim,
    scenario: &AttackScenario,
    interval_s: f64,
    total_s: f64,
) -> Result<Vec<ResourceReading>> {
    device.profile.validate()?;
    scenario.validate()?;
    check_target(device, scenario)?;
    validate_cadence(interval_s, total_s)?;

    let samples = crate::telemetry::sample_count(interval_s, total_s);
    let mut generator = TraceGenerator::new(device);
    let mut readings = Vec::with_capacity(samples);
    for k in 1..=samples {
        let t = k as f64 * interval_s;
        readings.push(generator.next_reading(device, scenario, t));
    }
    Ok(readings)
}

/// Result of a closed-loop run: the generated trace, the detector's events,
/// and the device in its final (possibly mitigated) state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRun {
    pub readings: Vec<ResourceReading>,
    pub events: Vec<DetectionEvent>,
    pub device: DeviceSim,
}

/// Steps the simulation one sample at a time, feeding each reading to the
/// detector and applying any requested mitigation back onto the device
/// before the next sample. Deterministic per seed.
pub fn run_closed_loop(
    device: DeviceSim,
    scenario: &AttackScenario,
    config: &DetectorConfig,
    interval_s: f64,
    total_s: f64,
) -> Result<ClosedLoopRun> {
    device.profile.validate()?;
    scenario.validate()?;
    check_target(&device, scenario)?;
    validate_cadence(interval_s, total_s)?;
    config.validate()?;

    let samples = crate::telemetry::sample_count(interval_s, total_s);
    let mut generator = TraceGenerator::new(&device);
    let mut device = device;
    let mut state = DetectorState::new();
    let mut readings = Vec::with_capacity(samples);
    let mut events = Vec::new();

    for k in 1..=samples {
        let t = k as f64 * interval_s;
        let reading = generator.next_reading(&device, scenario, t);
        let (next_state, emitted) = detector_step(&state, config, &reading)?;
        state = next_state;
        for event in &emitted {
            if event.kind == EventKind::MitigationApplied {
                device = apply_mitigation(device, &event.actions, event.timestamp_s)?;
            }
        }
        events.extend(emitted);
        readings.push(reading);
    }

    Ok(ClosedLoopRun {
        readings,
        events,
        device,
    })
}
