//! Detection and mitigation of memory-usage (resource-exhaustion) attacks on
//! resource-constrained smart devices.
//!
//! The crate is organized around a small pipeline:
//!
//! - [`telemetry`] samples and normalizes resource usage and classifies it
//!   against per-status device profiles;
//! - [`detector`] runs the streaming threshold/counter/timer state machine
//!   that declares attack start and stop and requests mitigation;
//! - [`simulator`] reproduces device footprints and attack bursts
//!   deterministically, including the physical effects of mitigation;
//! - [`netprobe`] provides the desk-scale real-network testbed: scanner,
//!   rate-paced flood generator, and a victim stub with genuine memory
//!   pressure;
//! - [`store`] persists readings, events, the registry, the blacklist, and
//!   whole-experiment records in replayable JSONL/JSON files.

pub mod detector;
pub mod error;
pub mod netprobe;
pub mod simulator;
pub mod store;
pub mod telemetry;

pub use detector::{
    default_absolute_threshold, derive_reading_threshold, detector_run, detector_step,
    DetectionEvent, DetectorConfig, DetectorState, EventKind, MitigationAction, TriggerMode,
};
pub use error::{Error, Result};
pub use netprobe::{Allowlist, DeviceRecord, FloodProtocol, FloodStats};
pub use simulator::{
    apply_mitigation, run_closed_loop, simulate_trace, AttackBurst, AttackScenario, DeviceSim,
    ScenarioDoc,
};
pub use store::{ExperimentDir, ExperimentRecord, ReadingFilter, SummaryMetrics};
pub use telemetry::{
    classify_mem_frac, classify_status, normalize_cpu, normalize_mem, sample_host, Architecture,
    Band, DeviceProfile, ResourceReading, StatusClass,
};
