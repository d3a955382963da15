use isosim::{build_graph, validate_graph, HardwareProfile, ModelSpec, Strategy, Workload};

const GOLDEN: &str = include_str!("data/iso_two_chunk_tiny.txt");

fn tiny() -> (ModelSpec, Workload, HardwareProfile) {
    let model = ModelSpec {
        num_layers: 2,
        hidden_size: 8,
        num_heads: 2,
        num_kv_heads: 2,
        ffn_size: 16,
        weight_bytes: 2,
        activation_bytes: 2,
    };
    // One flop per second and one byte per second keep durations readable.
    let profile = HardwareProfile {
        name: "unit".into(),
        compute_throughput: 1.0,
        comm_bandwidth: 1.0,
        comm_base_latency: 0.0,
        contention_factor: 0.0,
        launch_overhead: 0.0,
        comm_element_bytes: 2,
    };
    (model, Workload::new(4, 2), profile)
}

#[test]
fn iso_two_chunk_graph_matches_golden() {
    let (model, workload, profile) = tiny();
    let graph = build_graph(
        Strategy::IsoTwoChunk { split_ratio: 0.5 },
        &model,
        &workload,
        &profile,
    )
    .unwrap();
    assert!(validate_graph(&graph).is_empty());
    assert_eq!(graph.to_text(), GOLDEN);
}
