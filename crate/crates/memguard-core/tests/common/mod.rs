//! Shared test fixtures: an independent straight-line reference of the
//! counter/timer detection technique, plus trace builders.

use std::collections::HashMap;

use memguard_core::detector::{DetectionEvent, DetectorConfig, EventKind, TriggerMode};
use memguard_core::telemetry::ResourceReading;

/// Naive batch transcription of the detection technique, kept separate from
/// the production step function on purpose: one pass, one mutable record per
/// device, no early returns, no shared code.
pub fn reference_run(readings: &[ResourceReading], config: &DetectorConfig) -> Vec<DetectionEvent> {
    #[derive(Default)]
    struct RefState {
        m1: Option<f64>,
        c1: u32,
        t1: u32,
        alert: bool,
    }

    let mut states: HashMap<String, RefState> = HashMap::new();
    let mut events = Vec::new();

    for reading in readings {
        let st = states.entry(reading.device_id.clone()).or_default();
        let m2 = reading.mem_frac;
        let diff = match st.m1 {
            Some(m1) => m2 - m1,
            None => 0.0,
        };
        let triggered = match config.trigger_mode {
            TriggerMode::Differential => diff > config.reading_threshold,
            TriggerMode::Absolute => m2 > config.absolute_threshold,
            TriggerMode::Both => {
                diff > config.reading_threshold && m2 > config.absolute_threshold
            }
        };

        if triggered {
            st.t1 = 0;
            if !st.alert {
                st.c1 += 1;
                if st.c1 > config.count_threshold {
                    st.alert = true;
                    events.push(DetectionEvent {
                        kind: EventKind::AttackStarted,
                        device_id: reading.device_id.clone(),
                        timestamp_s: reading.timestamp_s,
                        mem_frac: m2,
                        actions: Vec::new(),
                    });
                    events.push(DetectionEvent {
                        kind: EventKind::MitigationApplied,
                        device_id: reading.device_id.clone(),
                        timestamp_s: reading.timestamp_s,
                        mem_frac: m2,
                        actions: config.mitigation_actions.clone(),
                    });
                }
            }
        } else if st.c1 > 0 {
            st.t1 += 1;
            if st.t1 > config.time_threshold {
                if st.alert {
                    events.push(DetectionEvent {
                        kind: EventKind::AttackStopped,
                        device_id: reading.device_id.clone(),
                        timestamp_s: reading.timestamp_s,
                        mem_frac: m2,
                        actions: Vec::new(),
                    });
                }
                st.alert = false;
                st.c1 = 0;
                st.t1 = 0;
            }
        }

        st.m1 = Some(m2);
    }

    events
}

/// Builds a single-device general-purpose trace from raw memory values, with
/// timestamps 1, 2, 3, ...
pub fn trace_from_values(device: &str, values: &[f64]) -> Vec<ResourceReading> {
    values
        .iter()
        .enumerate()
        .map(|(i, &mem)| ResourceReading {
            device_id: device.to_string(),
            timestamp_s: (i + 1) as f64,
            mem_frac: mem,
            cpu_frac: Some(0.01),
            thread_time_s: None,
            attack_flag: None,
        })
        .collect()
}

/// Checks that one device's event stream follows
/// `(AttackStarted MitigationApplied AttackStopped)*` with an optional
/// unterminated trailing attack.
pub fn assert_alternation(events: &[DetectionEvent]) {
    let mut expecting = EventKind::AttackStarted;
    for event in events {
        assert_eq!(
            event.kind, expecting,
            "event pattern broken at t={}",
            event.timestamp_s
        );
        expecting = match event.kind {
            EventKind::AttackStarted => EventKind::MitigationApplied,
            EventKind::MitigationApplied => EventKind::AttackStopped,
            EventKind::AttackStopped => EventKind::AttackStarted,
        };
    }
    assert!(
        expecting == EventKind::AttackStarted || expecting == EventKind::AttackStopped,
        "stream ends mid-declaration"
    );
}
