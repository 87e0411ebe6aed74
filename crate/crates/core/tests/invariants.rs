mod common;

use proptest::prelude::*;

use earlytom::merge::{merge_pass, pair_similarities, PassInput};
use earlytom::select::{decouple, global_topk_select, local_window_select, token_budget};
use earlytom::synth::{synth_video, FixtureRng};
use earlytom::types::{MergePassSpec, PassParams, DEFAULT_WEIGHT_FLOOR};
use earlytom::{run_compress, AttentionScores, Execution, FeatureTensor, RunConfig, SegmentList};

fn params(alpha: f64, tau_seg: f64, tau_merge: f64) -> PassParams {
    PassParams {
        alpha,
        tau_seg,
        tau_merge,
        weight_floor: DEFAULT_WEIGHT_FLOOR,
    }
}

/// Video with block structure so that both segmentation and merging fire.
fn video(seed: u64, frames: (usize, usize), tokens: usize, dim: usize) -> (FeatureTensor, AttentionScores) {
    let mut rng = FixtureRng::new(seed);
    let spec = common::random_spec(&mut rng, frames, tokens, dim);
    synth_video(&spec).unwrap()
}

fn config(r: f64, tau_seg: f64, tau_merge: f64, passes: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.compression.retain_ratio = r;
    cfg.compression.tau_seg = tau_seg;
    cfg.compression.tau_merge = tau_merge;
    cfg.compression.merge_passes = (0..passes).map(|i| MergePassSpec::at_layer(2 + 4 * i)).collect();
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frame_count_never_grows_and_heads_tails_survive(
        seed in any::<u64>(),
        tau_seg in 0.3f64..0.95,
        tau_merge in -0.5f64..0.95,
    ) {
        let (features, attention) = video(seed, (1, 24), 6, 5);
        let result = merge_pass(
            PassInput::new(&features).with_attention(&attention),
            &params(0.9, tau_seg, tau_merge),
            Execution::Sequential,
        ).unwrap();
        prop_assert!(result.features.frames() <= features.frames());
        prop_assert_eq!(result.segments.len(), result.input_segments.len());
        prop_assert_eq!(result.provenance.len(), result.features.frames());
        result.provenance.validate(features.frames()).unwrap();
        for (inp, out) in result.input_segments.iter().zip(result.segments.iter()) {
            prop_assert_eq!(features.frame(inp.start), result.features.frame(out.start));
            prop_assert_eq!(features.frame(inp.end - 1), result.features.frame(out.end - 1));
            // Each merge removes one middle frame; at most half of them go.
            let middles_in = inp.len().saturating_sub(2);
            let removed = inp.len() - out.len();
            prop_assert!(removed <= middles_in / 2);
        }
    }

    #[test]
    fn merged_values_lie_in_provenance_hull(
        seed in any::<u64>(),
        tau_merge in -1.0f64..0.9,
        passes in 1usize..4,
    ) {
        let (features, attention) = video(seed, (2, 20), 4, 6);
        let out = run_compress(&config(1.0, 0.2, tau_merge, passes), &features, &attention, Execution::Sequential).unwrap();
        let (merged, att) = (&out.merged_features, &out.merged_attention);
        for (i, sources) in out.provenance.iter().enumerate() {
            for (e, &v) in merged.frame(i).iter().enumerate() {
                let vals = sources.iter().map(|&(s, _)| features.frame(s)[e]);
                let lo = vals.clone().fold(f32::INFINITY, f32::min);
                let hi = vals.fold(f32::NEG_INFINITY, f32::max);
                prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6, "frame {i} elem {e}: {v} not in [{lo}, {hi}]");
            }
            for (t, &v) in att.row(i).iter().enumerate() {
                let vals = sources.iter().map(|&(s, _)| attention.row(s)[t]);
                let lo = vals.clone().fold(f32::INFINITY, f32::min);
                let hi = vals.fold(f32::NEG_INFINITY, f32::max);
                prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
                prop_assert!(v >= 0.0);
            }
        }
    }

    #[test]
    fn budget_is_exact(
        seed in any::<u64>(),
        r in 0.01f64..=1.0,
        tau_merge in 0.0f64..0.95,
    ) {
        let (features, attention) = video(seed, (1, 24), 10, 4);
        let out = run_compress(&config(r, 0.6, tau_merge, 2), &features, &attention, Execution::Sequential).unwrap();
        let (b, l) = (features.frames(), 10);
        let n = out.merged_features.frames();
        let target = (r * (b * l) as f64).round() as usize;
        let expected = target.clamp(n, n * l);
        prop_assert_eq!(out.selection.total_kept(), expected);
        prop_assert_eq!(out.report.total_kept, expected);
        prop_assert_eq!(out.report.budget.floor_applied, target < n);
        prop_assert_eq!(out.report.warnings.iter().any(|w| w.starts_with("ConfigConflict")), target < n);
        prop_assert_eq!(out.selection.tokens.len(), expected * features.dim());
    }

    #[test]
    fn selection_rows_are_sorted_and_in_range(
        seed in any::<u64>(),
        r in 0.05f64..=1.0,
    ) {
        let (features, attention) = video(seed, (1, 16), 12, 3);
        let out = run_compress(&config(r, 0.7, 0.5, 1), &features, &attention, Execution::Sequential).unwrap();
        let sel = &out.selection;
        let frames: Vec<usize> = sel.frames.iter().map(|f| f.frame).collect();
        prop_assert_eq!(frames, (0..out.merged_features.frames()).collect::<Vec<_>>());
        let mut at = 0;
        for f in &sel.frames {
            prop_assert!(f.indices.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(f.indices.iter().all(|&t| t < 12));
            for &t in &f.indices {
                prop_assert_eq!(&sel.tokens[at * 3..(at + 1) * 3], out.merged_features.token(f.frame, t));
                at += 1;
            }
        }
        let segments = SegmentList::try_from(out.report.segments.clone()).unwrap();
        let roles = decouple(&segments);
        prop_assert_eq!(&roles.dynamic_idx, &out.report.dynamic_frames);
    }

    #[test]
    fn schedules_agree(seed in any::<u64>(), r in 0.05f64..=0.5) {
        let (features, attention) = video(seed, (2, 24), 8, 4);
        let cfg = config(r, 0.7, 0.6, 3);
        let seq = run_compress(&cfg, &features, &attention, Execution::Sequential).unwrap();
        let con = run_compress(&cfg, &features, &attention, Execution::Concurrent).unwrap();
        prop_assert_eq!(&seq.selection, &con.selection);
        prop_assert_eq!(seq.merged_features.data(), con.merged_features.data());
        prop_assert_eq!(
            earlytom::pipeline::report_json(&seq.report),
            earlytom::pipeline::report_json(&con.report)
        );
    }

    #[test]
    fn similarities_are_invariant_to_dimension_permutation(
        seed in any::<u64>(),
        rot in 1usize..6,
    ) {
        let mut rng = FixtureRng::new(seed);
        let features = common::random_features(&mut rng, 5, 4, 6);
        let permuted: Vec<f32> = features
            .data()
            .chunks(6)
            .flat_map(|tok| (0..6).map(move |e| tok[(e + rot) % 6]))
            .collect();
        let permuted = FeatureTensor::new(5, 4, 6, permuted).unwrap();
        let a = pair_similarities(&features, Execution::Sequential);
        let b = pair_similarities(&permuted, Execution::Sequential);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn selectors_respect_k(row in prop::collection::vec(0.0f32..1.0, 1..64), frac in 0.0f64..=1.0) {
        let k = (frac * row.len() as f64).round() as usize;
        let top = global_topk_select(&row, k).unwrap();
        let win = local_window_select(&row, k).unwrap();
        prop_assert_eq!(top.len(), k);
        prop_assert_eq!(win.len(), k);
        prop_assert!(top.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(win.windows(2).all(|w| w[0] < w[1]));
        if k > 0 {
            let kth = top.iter().map(|&i| row[i]).fold(f32::INFINITY, f32::min);
            let outside = (0..row.len()).filter(|i| !top.contains(i)).map(|i| row[i]);
            prop_assert!(outside.fold(f32::NEG_INFINITY, f32::max) <= kth);
        }
    }

    #[test]
    fn budget_distribution_is_front_loaded(
        n in 1usize..40,
        extra in 0usize..40,
        l in 1usize..50,
        r in 0.01f64..=1.0,
    ) {
        let b = n + extra;
        let budget = token_budget(r, b, n, l).unwrap();
        prop_assert_eq!(budget.per_frame.len(), n);
        prop_assert!(budget.per_frame.iter().all(|&k| (1..=l).contains(&k)));
        prop_assert!(budget.per_frame.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(budget.per_frame[0] - budget.per_frame[n - 1] <= 1);
    }
}

#[test]
fn straddling_sink_pair_is_kept_by_both_selectors() {
    // Sinks at 7 and 8 sit on either side of the window boundary at 8.
    let mut row = vec![0.1f32; 16];
    row[3] = 0.5;
    row[12] = 0.4;
    row[7] = 4.0;
    row[8] = 3.0;
    assert_eq!(global_topk_select(&row, 2).unwrap(), [7, 8]);
    assert_eq!(local_window_select(&row, 2).unwrap(), [7, 8]);
    // A pair inside one window is damped to a single pick.
    row.swap(8, 6);
    assert_eq!(global_topk_select(&row, 2).unwrap(), [6, 7]);
    assert_eq!(local_window_select(&row, 2).unwrap(), [7, 12]);
}
