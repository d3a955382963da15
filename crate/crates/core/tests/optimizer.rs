mod common;

use std::time::Instant;

use isosim::optimizer::{optimize_four_part, optimize_two_chunk_ratio, SplitSearchConfig};
use isosim::{build_graph, presets, run_schedule, Strategy, Workload};

#[test]
fn attention_heavy_prompt_shifts_split_forward() {
    // At 32k tokens causal attention makes the second half of a 0.5 split the
    // heavier chunk, so the best first chunk is longer than half.
    let model = presets::model_30b();
    let profile = presets::rtx4090_tp4();
    let workload = Workload::new(32 * 1024, 4);
    let start = Instant::now();
    let r = optimize_two_chunk_ratio(&model, &workload, &profile, &SplitSearchConfig::default())
        .unwrap();
    assert!(start.elapsed().as_secs_f64() < 10.0);
    assert!(r.ratio > 0.5, "ratio {}", r.ratio);
    assert_eq!(r.evaluated.len(), 41);
    let grid_min = r
        .evaluated
        .iter()
        .map(|e| e.1)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(r.makespan, grid_min);

    // Moving from 0.5 toward the optimum never hurts.
    let at = |x: f64| {
        r.evaluated
            .iter()
            .find(|e| (e.0 - x).abs() < 1e-9)
            .unwrap()
            .1
    };
    let mut prev = at(0.5);
    let mut x = 0.51;
    while x <= r.ratio + 1e-9 {
        assert!(at(x) <= prev, "makespan rose at {x}");
        prev = at(x);
        x += 0.01;
    }
}

#[test]
fn four_part_beats_uniform_split() {
    let scenarios = [
        (presets::model_30b(), presets::rtx4090_tp4(), 8192, 4),
        (presets::model_70b(), presets::a800_tp4(), 16384, 4),
        (common::tiny_model(4), presets::a800_tp8(), 4096, 8),
    ];
    for (model, profile, len, tp) in scenarios {
        let w = Workload::new(len, tp);
        let four = optimize_four_part(&model, &w, &profile, 0.05).unwrap();
        let uniform = build_graph(
            Strategy::IsoFourPart { ratios: [0.25; 4] },
            &model,
            &w,
            &profile,
        )
        .unwrap();
        assert!(four.makespan <= run_schedule(&uniform, &profile).unwrap().makespan);
        assert!((four.ratios.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let two =
            optimize_two_chunk_ratio(&model, &w, &profile, &SplitSearchConfig::default()).unwrap();
        println!(
            "{len} tp{tp}: four {:?} {:.6} vs two {} {:.6}",
            four.ratios, four.makespan, two.ratio, two.makespan
        );
    }
}
