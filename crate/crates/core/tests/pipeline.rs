use std::collections::VecDeque;

use segmine::harness::{gen_scenario, mean_iou, Scenario, ScenarioParams};
use segmine::motion::video_saliency;
use segmine::pipeline::{mine, proposal_iou, run, write_output, PipelineConfig, WeightInit};
use segmine::proposals::{extract_proposals, FrameInputs};
use segmine::transfer::{forward, TransferWeights};
use segmine::{Mask, Tensor, VideoBundle64};

fn scenario(distractors: usize) -> (Scenario, VideoBundle64, segmine::SourceGallery64) {
    gen_scenario(
        7,
        &ScenarioParams {
            distractors,
            ..ScenarioParams::default()
        },
    )
    .unwrap()
}

/// 8-connected components by breadth-first flood fill, in raster order of
/// their first pixel.
fn flood_fill(m: &Mask) -> Vec<Vec<usize>> {
    let (w, h) = (m.width() as i64, m.height() as i64);
    let mut seen = vec![false; m.bits().len()];
    let mut out = Vec::new();
    for start in 0..m.bits().len() {
        if !m.bits()[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p as i64 / w, p as i64 % w);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h || nc >= w {
                        continue;
                    }
                    let q = (nr * w + nc) as usize;
                    if m.bits()[q] && !seen[q] {
                        seen[q] = true;
                        comp.push(q);
                        queue.push_back(q);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

#[test]
fn proposals_match_per_frame_recomputation() {
    let (_, b, _) = scenario(2);
    let cfg = PipelineConfig::<f64>::default();
    let theta = TransferWeights::from_mixing(vec![0.25; 4]);
    let probs: Vec<Tensor<f64>> = b.responses.iter().map(|r| forward(r, &theta).unwrap().1).collect();
    let sal = video_saliency(&b.flows, &cfg.motion).unwrap();
    let inputs: Vec<FrameInputs<'_, f64>> = (0..b.frames())
        .map(|i| FrameInputs {
            prob: &probs[i],
            feat_mine: &b.feat_mine[i],
            feat_sim: &b.feat_sim[i],
            saliency: &sal[i],
        })
        .collect();
    let p = extract_proposals(&inputs, &cfg.proposal).unwrap();

    let mut expected = Vec::new();
    for (i, r) in b.responses.iter().enumerate() {
        let hw = 64 * 64;
        let m = Mask::from_fn(64, 64, |row, col| {
            let k = row * 64 + col;
            let s: f64 = (0..4).map(|c| 0.25 * r.data()[c * hw + k]).sum();
            1.0 / (1.0 + (-s).exp()) >= 0.5
        });
        for comp in flood_fill(&m) {
            if comp.len() as f64 >= 0.001 * hw as f64 {
                expected.push((i, comp));
            }
        }
    }
    assert_eq!(p.len(), expected.len());
    assert_eq!(p.len(), 3 * b.frames());
    for (seg, (frame, comp)) in p.segments.iter().zip(&expected) {
        assert_eq!(seg.frame_index, *frame);
        assert_eq!(&seg.pixels.indices().collect::<Vec<_>>(), comp);
    }
}

#[test]
fn default_scenario_converges_on_second_iteration() {
    let (sc, b, g) = scenario(0);
    let out = run(&b, WeightInit::Gallery(&g), &PipelineConfig::default()).unwrap();
    assert_eq!(out.records.len(), 2);
    assert_eq!(out.records[0].iou, 0.0);
    assert_eq!(out.records[1].iou, 1.0);
    assert!(out.warnings.is_empty());
    assert!(mean_iou(&out.masks, &sc.gt).unwrap() >= 0.9);
    // Training moved the weights further towards the mixed categories.
    assert!(out.weights.w[1] > out.initial_weights.w[1]);
    assert!(out.weights.w[3] > out.initial_weights.w[3]);
}

#[test]
fn records_agree_with_history() {
    let (_, b, _) = scenario(2);
    let out = run(&b, WeightInit::OneHot(3), &PipelineConfig::default()).unwrap();
    assert_eq!(out.records.len(), out.history.len());
    for (k, r) in out.records.iter().enumerate() {
        let h = &out.history[k];
        assert_eq!(r.iteration, k + 1);
        assert_eq!(r.proposals, h.proposals.len());
        assert_eq!(r.selected, h.selection.len());
        assert_eq!(r.energy, h.selection.energy);
        if k > 0 {
            let prev = &out.history[k - 1];
            let iou = proposal_iou((&prev.proposals, &prev.selection), (&h.proposals, &h.selection)).unwrap();
            assert_eq!(r.iou, iou);
        }
    }
}

#[test]
fn one_hot_on_a_mixed_channel_finds_the_object_immediately() {
    let (sc, b, _) = scenario(0);
    for k in [1, 3] {
        let out = run(&b, WeightInit::OneHot(k), &PipelineConfig::default()).unwrap();
        let first = &out.history[0].proposals;
        let cover = first.union_masks(0..first.len());
        assert!(mean_iou(&cover, &sc.gt).unwrap() >= 0.8);
    }
    assert!(run(&b, WeightInit::OneHot(4), &PipelineConfig::default()).is_err());
}

#[test]
fn single_iteration_records_the_untrained_loss() {
    let (_, b, g) = scenario(0);
    let cfg = PipelineConfig {
        max_outer_iters: 1,
        ..PipelineConfig::default()
    };
    let out = run(&b, WeightInit::Gallery(&g), &cfg).unwrap();
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.weights, out.initial_weights);
    assert!(out.records[0].loss > 0.0);
}

#[test]
fn no_proposals_falls_back_to_motion() {
    let (sc, mut b, _) = scenario(0);
    for r in &mut b.responses {
        *r = r.map(|_| -10.0);
    }
    let out = run(&b, WeightInit::OneHot(0), &PipelineConfig::default()).unwrap();
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.warnings.len(), 1);
    // Motion alone marks the moving object in every frame with its own flow.
    for t in 0..b.frames() - 1 {
        assert_eq!(out.masks[t], sc.gt[t]);
    }
}

#[test]
fn mining_step_matches_first_iteration() {
    let (_, b, _) = scenario(2);
    let cfg = PipelineConfig::default();
    let out = run(&b, WeightInit::OneHot(1), &cfg).unwrap();
    let state = mine(&b, &out.initial_weights, &cfg).unwrap();
    assert_eq!(state, out.history[0]);
    assert!(mine(&b, &TransferWeights::from_mixing(vec![1.0; 3]), &cfg).is_err());
}

#[test]
fn affine_adapter_is_written_when_enabled() {
    let (_, b, g) = scenario(0);
    let mut cfg = PipelineConfig::default();
    cfg.train.affine = true;
    let out = run(&b, WeightInit::Gallery(&g), &cfg).unwrap();
    assert!(out.weights.affine_enabled);
    let dir = tempfile::tempdir().unwrap();
    write_output(&out, dir.path()).unwrap();
    assert!(dir.path().join("weights_affine.sgt").exists());
    let iters = std::fs::read_to_string(dir.path().join("iters.txt")).unwrap();
    assert_eq!(iters.lines().count(), out.records.len());
}
