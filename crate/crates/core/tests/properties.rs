//! Cross-module invariants that don't fit a single unit-test module.

use crowdtrack::detpost::{fuse_detections, FusionParams};
use crowdtrack::eval::{mmr, mot_metrics, oks, DetEvalParams, PoseEvalParams};
use crowdtrack::harness::{corrupt, generate, NoiseParams, ScenarioParams};
use crowdtrack::io;
use crowdtrack::kalman;
use crowdtrack::posetrack::{decode_heatmap, fuse_heatmaps, smooth_sequence, PoseSequence, PoseSmoothParams};
use crowdtrack::tracker::{cosine_gallery_distance, grid_search, ParamGrid, Sequence, Tracker, TrackerParams};
use crowdtrack::types::{BBox, Detection, FlowField, Heatmap, Keypoint, Pose, TrackedBox};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[test]
fn tracker_is_deterministic_over_repeat_runs() {
    let scenario = generate(&ScenarioParams {
        n_agents: 4,
        n_frames: 40,
        arena: (256, 256),
        seed: 77,
        ..ScenarioParams::default()
    })
    .unwrap();
    let noise = NoiseParams {
        drop_rate: 0.1,
        jitter_std: 0.8,
        fp_rate: 0.5,
        embedding_noise_std: 0.05,
        ..NoiseParams::default()
    };
    let dets = corrupt(&scenario, &noise, 5).unwrap().detections;
    let run = || {
        let mut tracker = Tracker::new(TrackerParams::default()).unwrap();
        tracker.run(&dets).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn track_ids_are_never_reused() {
    let scenario = generate(&ScenarioParams {
        n_agents: 3,
        n_frames: 60,
        arena: (192, 192),
        seed: 11,
        ..ScenarioParams::default()
    })
    .unwrap();
    // heavy drops force repeated track death and re-initiation
    let noise = NoiseParams {
        drop_rate: 0.5,
        ..NoiseParams::default()
    };
    let dets = corrupt(&scenario, &noise, 9).unwrap().detections;
    let mut tracker = Tracker::new(TrackerParams {
        max_age: 2,
        ..TrackerParams::default()
    })
    .unwrap();
    let results = tracker.run(&dets).unwrap();
    // ids first appear in increasing order and never restart
    let mut seen: Vec<i64> = Vec::new();
    let mut retired: Vec<i64> = Vec::new();
    for r in &results {
        for o in &r.outputs {
            if !seen.contains(&o.track_id) {
                assert!(
                    retired.iter().all(|&t| t < o.track_id),
                    "id {} appeared after larger ids retired",
                    o.track_id
                );
                seen.push(o.track_id);
            }
        }
        retired = seen.clone();
    }
}

#[test]
fn grid_search_is_deterministic_despite_parallelism() {
    let scenario = generate(&ScenarioParams {
        n_agents: 2,
        n_frames: 15,
        seed: 303,
        ..ScenarioParams::default()
    })
    .unwrap();
    let sequences = vec![Sequence {
        detections: scenario.perfect_detections().unwrap(),
        ground_truth: scenario.gt_tracks.clone(),
    }];
    let base = TrackerParams::default();
    let mut grid = ParamGrid::singleton(&base);
    grid.n_init = vec![1, 2, 3];
    grid.max_age = vec![5, 30];
    let (best_a, table_a) = grid_search(&sequences, &grid, &base, 0.5).unwrap();
    let (best_b, table_b) = grid_search(&sequences, &grid, &base, 0.5).unwrap();
    assert_eq!(best_a, best_b);
    assert_eq!(table_a.len(), table_b.len());
    for (a, b) in table_a.iter().zip(&table_b) {
        assert_eq!(a.params, b.params);
        assert_eq!(a.report, b.report);
    }
}

#[test]
fn mmr_monotone_under_fp_and_tp_edits() {
    let gt: Vec<TrackedBox> = (1..=4)
        .flat_map(|f| {
            (1..=3).map(move |i| {
                TrackedBox::new(
                    f,
                    i,
                    BBox::new(i as f64 * 40.0, 0.0, i as f64 * 40.0 + 10.0, 10.0).unwrap(),
                    1.0,
                )
                .unwrap()
            })
        })
        .collect();
    let mut preds: Vec<Detection> = gt
        .iter()
        .take(8)
        .map(|t| Detection::new(t.frame, t.bbox, 0.9).unwrap())
        .collect();
    // two false positives at distinct scores
    preds.push(Detection::new(1, BBox::new(200.0, 200.0, 220.0, 230.0).unwrap(), 0.8).unwrap());
    preds.push(Detection::new(2, BBox::new(200.0, 200.0, 220.0, 230.0).unwrap(), 0.7).unwrap());
    let p = DetEvalParams::default();
    let with_all = mmr(&gt, &preds, &p, 4).unwrap();

    // removing a FP never increases MMR
    let without_fp: Vec<Detection> = preds[..preds.len() - 1].to_vec();
    let v = mmr(&gt, &without_fp, &p, 4).unwrap();
    assert!(v <= with_all + 1e-12, "{v} > {with_all}");

    // removing a TP never decreases MMR
    let without_tp: Vec<Detection> = preds[1..].to_vec();
    let v = mmr(&gt, &without_tp, &p, 4).unwrap();
    assert!(v >= with_all - 1e-12, "{v} < {with_all}");
}

#[test]
fn oks_monotone_in_keypoint_distance() {
    let p = PoseEvalParams::uniform(2);
    let gt = Pose::new(
        1,
        None,
        vec![
            Keypoint::new(0.0, 0.0, 1.0).unwrap(),
            Keypoint::new(10.0, 10.0, 1.0).unwrap(),
        ],
    )
    .unwrap();
    let mut last = f64::INFINITY;
    for step in 0..10 {
        let d = step as f64 * 0.5;
        let pred = Pose::new(
            1,
            None,
            vec![
                Keypoint::new(d, 0.0, 1.0).unwrap(),
                Keypoint::new(10.0, 10.0, 1.0).unwrap(),
            ],
        )
        .unwrap();
        let v = oks(&gt, &pred, 100.0, &p).unwrap();
        assert!(v < last || step == 0);
        last = v;
    }
}

#[test]
fn smooth_sequence_translation_equivariance() {
    // shifting all poses by t (flows untouched) shifts the output by t
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let frames: Vec<i64> = (1..=6).collect();
    let mut poses = BTreeMap::new();
    for &f in &frames {
        let kps = (0..3)
            .map(|_| {
                Keypoint::new(
                    rng.random_range(5.0..25.0),
                    rng.random_range(5.0..25.0),
                    1.0,
                )
                .unwrap()
            })
            .collect();
        poses.insert(f, Pose::new(f, Some(1), kps).unwrap());
    }
    let seq = PoseSequence::new(1, poses).unwrap();
    let mut flows = BTreeMap::new();
    for &f in &frames {
        // small random constant fields either direction
        flows.insert(
            (f - 1, f),
            FlowField::constant(64, 64, rng.random_range(-1.0f32..1.0), rng.random_range(-1.0f32..1.0)).unwrap(),
        );
        flows.insert(
            (f + 1, f),
            FlowField::constant(64, 64, rng.random_range(-1.0f32..1.0), rng.random_range(-1.0f32..1.0)).unwrap(),
        );
    }
    let p = PoseSmoothParams { alpha: 0.3 };
    let base = smooth_sequence(&seq, &flows, &p).unwrap();

    let (tx, ty) = (7.25, -3.5);
    let shifted_poses: BTreeMap<i64, Pose> = seq
        .poses
        .iter()
        .map(|(&f, pose)| {
            let kps = pose
                .keypoints
                .iter()
                .map(|k| Keypoint::new(k.x + tx, k.y + ty, k.conf).unwrap())
                .collect();
            (f, Pose::new(f, Some(1), kps).unwrap())
        })
        .collect();
    let shifted = smooth_sequence(&PoseSequence::new(1, shifted_poses).unwrap(), &flows, &p).unwrap();
    for (&f, pose) in &base.poses {
        for (a, b) in pose.keypoints.iter().zip(&shifted.poses[&f].keypoints) {
            assert!((a.x + tx - b.x).abs() < 1e-9);
            assert!((a.y + ty - b.y).abs() < 1e-9);
        }
    }
}

#[test]
fn decode_of_self_fusion_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for _ in 0..20 {
        let values: Vec<f32> = (0..2 * 6 * 7).map(|_| rng.random_range(0.0..1.0)).collect();
        let h = Heatmap::new(2, 6, 7, values).unwrap();
        let fused = fuse_heatmaps(&h, &h).unwrap();
        assert_eq!(
            decode_heatmap(&fused, (3.0, 4.0), (2.0, 2.0), 0).unwrap(),
            decode_heatmap(&h, (3.0, 4.0), (2.0, 2.0), 0).unwrap()
        );
    }
}

#[test]
fn gallery_argmin_invariant_under_query_rescale() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for _ in 0..50 {
        let dim = 8;
        let gallery: Vec<Vec<f32>> = (0..5)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                v.iter().map(|x| (x / n) as f32).collect()
            })
            .collect();
        let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scale = rng.random_range(0.1..50.0);
        let normalize = |v: &[f64]| -> Vec<f32> {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            v.iter().map(|x| (x / n) as f32).collect()
        };
        let q1 = normalize(&raw);
        let scaled: Vec<f64> = raw.iter().map(|x| x * scale).collect();
        let q2 = normalize(&scaled);
        let d1 = cosine_gallery_distance(&gallery, &q1).unwrap();
        let d2 = cosine_gallery_distance(&gallery, &q2).unwrap();
        assert!((d1 - d2).abs() < 1e-6);
    }
}

#[test]
fn fusion_with_full_weight_on_a_keeps_a_boxes() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let p = FusionParams {
        weight_a: 1.0,
        weight_b: 0.0,
        match_iou: 0.5,
    };
    for _ in 0..50 {
        let a: Vec<Detection> = (0..rng.random_range(0..6))
            .map(|_| {
                let x = rng.random_range(0.0..80.0);
                let y = rng.random_range(0.0..80.0);
                Detection::new(
                    0,
                    BBox::new(x, y, x + 12.0, y + 12.0).unwrap(),
                    rng.random::<f64>(),
                )
                .unwrap()
            })
            .collect();
        let b: Vec<Detection> = a
            .iter()
            .map(|d| {
                let mut d = d.clone();
                d.bbox = BBox::new(d.bbox.x1 + 1.0, d.bbox.y1, d.bbox.x2 + 1.0, d.bbox.y2).unwrap();
                d
            })
            .collect();
        let out = fuse_detections(&a, &b, &p);
        for (i, d) in a.iter().enumerate() {
            assert_eq!(out[i].bbox, d.bbox);
            assert_eq!(out[i].score, d.score);
        }
    }
}

#[test]
fn kalman_covariance_stays_symmetric_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut state = kalman::initiate(&BBox::new(10.0, 10.0, 40.0, 80.0).unwrap());
    for _ in 0..100 {
        state = kalman::predict(&state);
        let z = BBox::from_xyah(
            state.mean[0] + rng.random_range(-3.0..3.0),
            state.mean[1] + rng.random_range(-3.0..3.0),
            (state.mean[2] + rng.random_range(-0.05..0.05)).max(0.1),
            (state.mean[3] + rng.random_range(-2.0..2.0)).max(5.0),
        )
        .unwrap();
        state = kalman::update(&state, &z).unwrap();
        let sym_err = (state.cov - state.cov.transpose()).abs().max();
        assert!(sym_err <= 1e-9);
        let eig = state.cov.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-9));
    }
}

#[test]
fn mota_degrades_by_exactly_the_injected_fp_count() {
    let gt: Vec<TrackedBox> = (1..=5)
        .map(|f| TrackedBox::new(f, 1, BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), 1.0).unwrap())
        .collect();
    let mut preds = gt.clone();
    let base = mot_metrics(&gt, &preds, 0.5).unwrap();
    for f in 1..=5 {
        preds.push(
            TrackedBox::new(f, 50, BBox::new(400.0, 400.0, 420.0, 430.0).unwrap(), 1.0).unwrap(),
        );
    }
    let r = mot_metrics(&gt, &preds, 0.5).unwrap();
    assert_eq!(r.fp, base.fp + 5);
    assert!((r.mota - (base.mota - 100.0 * 5.0 / 5.0)).abs() < 1e-9);
}

proptest! {
    // parsers must be total: arbitrary input never panics
    #[test]
    fn mot_parser_is_total(text in "\\PC{0,200}") {
        let _ = io::parse_mot_detections(&text);
        let _ = io::parse_mot_tracks(&text);
    }

    #[test]
    fn flo_reader_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let _ = io::read_flo(&bytes);
    }

    #[test]
    fn pose_reader_is_total(text in "\\PC{0,200}") {
        let _ = io::read_pose_records(&text);
    }

    #[test]
    fn sidecar_reader_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let _ = io::read_embeddings(&bytes);
        let _ = io::read_gray_frame(&bytes);
        let _ = io::read_heatmap(&bytes);
    }
}
