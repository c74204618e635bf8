//! Property tests for detector and persistence invariants.

mod common;

use proptest::prelude::*;

use common::{assert_alternation, reference_run, trace_from_values};
use memguard_core::detector::{
    detector_run, detector_step, DetectorConfig, DetectorState, TriggerMode, MITIGATION_ORDER,
};
use memguard_core::store::{load_readings, ReadingFilter, ReadingLogWriter};
use memguard_core::telemetry::{quantize_frac, ResourceReading};

fn config(rt: f64, abs: f64, mode: TriggerMode, count: u32, time: u32) -> DetectorConfig {
    DetectorConfig {
        reading_threshold: rt,
        absolute_threshold: abs,
        trigger_mode: mode,
        count_threshold: count,
        time_threshold: time,
        sample_interval_s: 1.0,
        mitigation_actions: MITIGATION_ORDER.to_vec(),
    }
}

fn mem_values() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec((0u32..=1_000_000u32).prop_map(|v| v as f64 / 1e6), 0..200)
}

fn mode_strategy() -> impl Strategy<Value = TriggerMode> {
    prop_oneof![
        Just(TriggerMode::Differential),
        Just(TriggerMode::Absolute),
        Just(TriggerMode::Both),
    ]
}

proptest! {
    // Scaling every reading and both thresholds by a common factor leaves
    // the emitted event sequence (kinds and trigger indices) unchanged.
    #[test]
    fn scale_coherence(
        values in mem_values(),
        k in (100_000u32..=1_000_000u32).prop_map(|v| v as f64 / 1e6),
        rt in (10_000u32..=1_000_000u32).prop_map(|v| v as f64 / 1e6),
        abs in (50_000u32..950_000u32).prop_map(|v| v as f64 / 1e6),
        mode in mode_strategy(),
        count in 1u32..5,
        time in 1u32..5,
    ) {
        let base = config(rt, abs, mode, count, time);
        let scaled = config(
            quantize_frac(rt * k),
            quantize_frac(abs * k),
            mode,
            count,
            time,
        );
        prop_assume!(scaled.validate().is_ok());

        let readings = trace_from_values("dev-0", &values);
        let scaled_values: Vec<f64> = values.iter().map(|v| quantize_frac(v * k)).collect();
        let scaled_readings = trace_from_values("dev-0", &scaled_values);

        let base_events = detector_run(readings.iter(), &base).unwrap();
        let scaled_events = detector_run(scaled_readings.iter(), &scaled).unwrap();

        let base_seq: Vec<_> = base_events.iter().map(|e| (e.kind, e.timestamp_s as u64)).collect();
        let scaled_seq: Vec<_> = scaled_events.iter().map(|e| (e.kind, e.timestamp_s as u64)).collect();
        prop_assert_eq!(base_seq, scaled_seq);
    }

    // Per device, events always follow started -> mitigation -> stopped, with
    // an optional unterminated trailing attack, and the streaming fold always
    // agrees with the batch reference.
    #[test]
    fn alternation_and_reference_agreement(
        values in mem_values(),
        rt in (10_000u32..=1_000_000u32).prop_map(|v| v as f64 / 1e6),
        abs in (50_000u32..950_000u32).prop_map(|v| v as f64 / 1e6),
        mode in mode_strategy(),
        count in 1u32..5,
        time in 1u32..5,
    ) {
        let cfg = config(rt, abs, mode, count, time);
        let readings = trace_from_values("dev-0", &values);
        let events = detector_run(readings.iter(), &cfg).unwrap();
        assert_alternation(&events);
        prop_assert_eq!(events, reference_run(&readings, &cfg));
    }

    // Stepping from a mid-stream snapshot resumes with identical events.
    #[test]
    fn state_purity_resume(
        values in proptest::collection::vec((0u32..=1_000_000u32).prop_map(|v| v as f64 / 1e6), 2..120),
        split in 1usize..100,
        abs in (50_000u32..950_000u32).prop_map(|v| v as f64 / 1e6),
        count in 1u32..4,
        time in 1u32..4,
    ) {
        let cfg = config(0.9, abs, TriggerMode::Absolute, count, time);
        let readings = trace_from_values("dev-0", &values);
        let split = split.min(readings.len() - 1);

        let full = detector_run(readings.iter(), &cfg).unwrap();

        let mut state = DetectorState::new();
        let mut events = Vec::new();
        for r in &readings[..split] {
            let (next, mut emitted) = detector_step(&state, &cfg, r).unwrap();
            state = next;
            events.append(&mut emitted);
        }
        // Serialize and reload the snapshot, as a monitor restart would.
        let snapshot: DetectorState =
            serde_json::from_str(&serde_json::to_string(&state).unwrap()).unwrap();
        let mut state = snapshot;
        for r in &readings[split..] {
            let (next, mut emitted) = detector_step(&state, &cfg, r).unwrap();
            state = next;
            events.append(&mut emitted);
        }
        prop_assert_eq!(events, full);
    }

    // Readings survive the log format unchanged, and classification of the
    // reloaded reading matches the original.
    #[test]
    fn reading_log_round_trip(
        mems in proptest::collection::vec((0u32..=1_000_000u32).prop_map(|v| v as f64 / 1e6), 1..40),
        micro in any::<bool>(),
        flagged in any::<bool>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("readings.jsonl");
        let mut writer = ReadingLogWriter::create(&path, "prop").unwrap();
        let readings: Vec<ResourceReading> = mems
            .iter()
            .enumerate()
            .map(|(i, &mem)| ResourceReading {
                device_id: "dev-0".to_string(),
                timestamp_s: (i + 1) as f64 * 0.5,
                mem_frac: mem,
                cpu_frac: (!micro).then_some(0.25),
                thread_time_s: micro.then_some(30.0),
                attack_flag: flagged.then_some(mem > 0.5),
            }
            .quantized())
            .collect();
        for r in &readings {
            writer.append(r).unwrap();
        }
        drop(writer);
        let (_, loaded) = load_readings(&path, &ReadingFilter::default()).unwrap();
        prop_assert_eq!(loaded, readings);
    }
}
