use isosim::{build_graph, presets, run_schedule, Lane, ModelSpec, Strategy, Trace, Workload};

fn trace_for(strategy: Strategy) -> (Trace, usize) {
    let profile = presets::rtx4090_tp4();
    let model = ModelSpec {
        num_layers: 3,
        ..presets::model_30b()
    };
    let graph = build_graph(strategy, &model, &Workload::new(2048, 4), &profile).unwrap();
    let schedule = run_schedule(&graph, &profile).unwrap();
    (Trace::from_schedule(&graph, &schedule), graph.len())
}

fn lane_spans(trace: &Trace, lane: Lane) -> Vec<(f64, f64)> {
    trace
        .records
        .iter()
        .filter(|r| r.lane == lane && r.duration_us > 0.0)
        .map(|r| (r.start_us, r.start_us + r.duration_us))
        .collect()
}

fn lanes_overlap(trace: &Trace) -> bool {
    let comm = lane_spans(trace, Lane::Comm);
    lane_spans(trace, Lane::Compute)
        .iter()
        .any(|&(s, e)| comm.iter().any(|&(cs, ce)| s.max(cs) < e.min(ce)))
}

#[test]
fn file_round_trip_preserves_makespan() {
    let dir = tempfile::tempdir().unwrap();
    for strategy in ["serial", "gemm:3", "request", "iso:0.6", "iso4"] {
        let (trace, n) = trace_for(strategy.parse().unwrap());
        assert_eq!(trace.records.len(), n);
        let path = dir.path().join(format!("{strategy}.json"));
        trace.write(&path).unwrap();
        let back = Trace::read(&path).unwrap();
        assert_eq!(back, trace);
        assert_eq!(back.recomputed_makespan_us(), trace.makespan_us);
    }
}

#[test]
fn record_fields_are_part_of_the_format() {
    let (trace, _) = trace_for(Strategy::Serial);
    let json: serde_json::Value = serde_json::from_str(&trace.to_json()).unwrap();
    let first = &json["records"][0];
    for key in [
        "name",
        "lane",
        "start_us",
        "duration_us",
        "micro_batch",
        "layer",
        "stage",
    ] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    assert_eq!(first["name"], "mb0.L0.QkvProj");
    assert_eq!(first["lane"], "ComputeLane");
    assert_eq!(first["stage"], "QkvProj");
}

#[test]
fn serial_lanes_never_overlap_and_iso_lanes_do() {
    let (serial, _) = trace_for(Strategy::Serial);
    assert!(!lanes_overlap(&serial));
    let (iso, _) = trace_for(Strategy::IsoTwoChunk { split_ratio: 0.5 });
    assert!(iso.makespan_us < serial.makespan_us);
    assert!(lanes_overlap(&iso));
}

#[test]
fn malformed_trace_is_rejected() {
    assert!(Trace::from_json("{\"makespan_us\": 1.0}").is_err());
    let dir = tempfile::tempdir().unwrap();
    assert!(Trace::read(&dir.path().join("missing.json")).is_err());
}
