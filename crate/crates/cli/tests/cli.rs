//! End-to-end tests driving the `crowdtrack` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crowdtrack"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_code(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).to_string(),
    )
}

fn synth(dir: &Path, extra: &[&str]) {
    let dir_s = dir.to_str().unwrap();
    let mut args = vec![
        "synth", "--out", dir_s, "--agents", "3", "--frames", "30", "--arena", "128x128",
        "--seed", "5",
    ];
    args.extend_from_slice(extra);
    run_ok(&args);
}

fn machine_report(text: &str) -> BTreeMap<String, f64> {
    text.lines()
        .filter_map(|l| {
            let (k, v) = l.split_once('=')?;
            Some((k.trim().to_string(), v.trim().parse::<f64>().ok()?))
        })
        .collect()
}

fn dir_snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

#[test]
fn synth_writes_expected_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scene");
    synth(&dir, &[]);
    for name in [
        "gt.txt",
        "det.txt",
        "emb.bin",
        "poses.jsonl",
        "gt_poses.jsonl",
        "manifest.txt",
        "effective.config",
    ] {
        assert!(dir.join(name).exists(), "missing {name}");
    }
    assert!(dir.join("flows").is_dir());
    // forward and backward flow per adjacent pair
    assert_eq!(fs::read_dir(dir.join("flows")).unwrap().count(), 2 * 29);
}

#[test]
fn synth_same_seed_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        run_ok(&[
            "synth", "--out", dir.to_str().unwrap(), "--agents", "2", "--frames", "8",
            "--arena", "96x96", "--seed", "11", "--jitter", "0.5", "--fp-rate", "0.5",
            "--write-frames",
        ]);
    }
    assert_eq!(dir_snapshot(&a), dir_snapshot(&b));
}

#[test]
fn synth_too_many_agents_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, stderr) = run_code(&[
        "synth", "--out", tmp.path().join("x").to_str().unwrap(), "--agents", "17", "--dim", "16",
        "--arena", "512x512",
    ]);
    assert_eq!(code, 3, "stderr: {stderr}");
}

#[test]
fn track_perfect_scenario_loses_only_warmup() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scene");
    synth(&dir, &["--no-flows"]);
    let tracks = tmp.path().join("tracks.txt");
    run_ok(&[
        "track", "--dets", dir.join("det.txt").to_str().unwrap(), "--emb",
        dir.join("emb.bin").to_str().unwrap(), "--out", tracks.to_str().unwrap(),
    ]);
    let report_path = tmp.path().join("report.txt");
    run_ok(&[
        "eval", "--gt", dir.join("gt.txt").to_str().unwrap(), "--track-pred",
        tracks.to_str().unwrap(), "--out", report_path.to_str().unwrap(),
    ]);
    let report = machine_report(&fs::read_to_string(report_path).unwrap());
    // losses come only from the n_init warm-up: 2 frames x 3 agents of 90 GT
    assert_eq!(report["mot.fp"], 0.0);
    assert_eq!(report["mot.idsw"], 0.0);
    assert_eq!(report["mot.fn"], 6.0);
    let bound = 100.0 * (1.0 - 2.0 * 2.0 * 3.0 / 90.0);
    assert!(report["mot.mota"] >= bound - 1e-9);
}

#[test]
fn track_empty_detections_writes_empty_file() {
    let tmp = tempfile::tempdir().unwrap();
    let det = tmp.path().join("det.txt");
    let emb = tmp.path().join("emb.bin");
    fs::write(&det, "").unwrap();
    fs::write(&emb, "D 4 N 0\n").unwrap();
    let out = tmp.path().join("tracks.txt");
    run_ok(&[
        "track", "--dets", det.to_str().unwrap(), "--emb", emb.to_str().unwrap(), "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(fs::read_to_string(out).unwrap(), "");
}

#[test]
fn track_missing_embedding_sidecar_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let det = tmp.path().join("det.txt");
    fs::write(&det, "1,-1,10,20,30,40,0.9,-1,-1,-1\n").unwrap();
    let (code, stderr) = run_code(&[
        "track", "--dets", det.to_str().unwrap(), "--emb",
        tmp.path().join("missing.bin").to_str().unwrap(), "--out",
        tmp.path().join("t.txt").to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "stderr: {stderr}");
}

#[test]
fn track_smoothing_with_exact_flows_changes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scene");
    run_ok(&[
        "synth", "--out", dir.to_str().unwrap(), "--agents", "1", "--frames", "12",
        "--arena", "96x96", "--seed", "3",
    ]);
    let plain = tmp.path().join("plain.txt");
    run_ok(&[
        "track", "--dets", dir.join("det.txt").to_str().unwrap(), "--emb",
        dir.join("emb.bin").to_str().unwrap(), "--out", plain.to_str().unwrap(),
    ]);
    let smoothed = tmp.path().join("smoothed.txt");
    // bare --smooth-boxes defaults to the before-tracker placement
    run_ok(&[
        "track", "--dets", dir.join("det.txt").to_str().unwrap(), "--emb",
        dir.join("emb.bin").to_str().unwrap(), "--smooth-boxes", "--flows",
        dir.join("flows").to_str().unwrap(), "--out", smoothed.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read_to_string(plain).unwrap(),
        fs::read_to_string(smoothed).unwrap()
    );
}

#[test]
fn pose_alpha_zero_is_identity_with_ids() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scene");
    synth(&dir, &["--no-flows"]);
    let out = tmp.path().join("poses_out.jsonl");
    run_ok(&[
        "pose", "--tracks", dir.join("gt.txt").to_str().unwrap(), "--poses",
        dir.join("gt_poses.jsonl").to_str().unwrap(), "--alpha", "0", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read_to_string(out).unwrap(),
        fs::read_to_string(dir.join("gt_poses.jsonl")).unwrap()
    );
}

#[test]
fn pose_smoothing_is_fixed_point_on_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scene");
    run_ok(&[
        "synth", "--out", dir.to_str().unwrap(), "--agents", "1", "--frames", "15",
        "--arena", "96x96", "--seed", "9",
    ]);
    let out = tmp.path().join("poses_out.jsonl");
    run_ok(&[
        "pose", "--tracks", dir.join("gt.txt").to_str().unwrap(), "--poses",
        dir.join("gt_poses.jsonl").to_str().unwrap(), "--flows",
        dir.join("flows").to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read_to_string(out).unwrap(),
        fs::read_to_string(dir.join("gt_poses.jsonl")).unwrap()
    );
}

#[test]
fn pose_missing_flow_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scene");
    run_ok(&[
        "synth", "--out", dir.to_str().unwrap(), "--agents", "1", "--frames", "6",
        "--arena", "96x96", "--seed", "2",
    ]);
    fs::remove_file(dir.join("flows").join("000002_000003.flo")).unwrap();
    let (code, stderr) = run_code(&[
        "pose", "--tracks", dir.join("gt.txt").to_str().unwrap(), "--poses",
        dir.join("gt_poses.jsonl").to_str().unwrap(), "--flows",
        dir.join("flows").to_str().unwrap(), "--out",
        tmp.path().join("p.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "stderr: {stderr}");
}

#[test]
fn eval_gt_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scene");
    synth(&dir, &["--no-flows"]);
    let report_path = tmp.path().join("report.txt");
    run_ok(&[
        "eval", "--gt", dir.join("gt.txt").to_str().unwrap(), "--det-pred",
        dir.join("det.txt").to_str().unwrap(), "--track-pred",
        dir.join("gt.txt").to_str().unwrap(), "--gt-poses",
        dir.join("gt_poses.jsonl").to_str().unwrap(), "--pred-poses",
        dir.join("gt_poses.jsonl").to_str().unwrap(), "--out",
        report_path.to_str().unwrap(),
    ]);
    let report = machine_report(&fs::read_to_string(report_path).unwrap());
    assert_eq!(report["det.ap"], 1.0);
    assert!(report["det.mmr_percent"] <= 0.001 + 1e-12);
    assert_eq!(report["mot.mota"], 100.0);
    assert_eq!(report["mot.motp"], 0.0);
    assert_eq!(report["pose.ap_avg"], 100.0);
    assert_eq!(report["pose.ap_50"], 100.0);
    assert_eq!(report["pose.ap_75"], 100.0);
}

#[test]
fn eval_one_dropped_box_gives_83_33() {
    let tmp = tempfile::tempdir().unwrap();
    let mut gt = String::new();
    for frame in 1..=3 {
        gt.push_str(&format!("{frame},1,0,0,10,10,1,-1,-1,-1\n"));
        gt.push_str(&format!("{frame},2,50,0,10,10,1,-1,-1,-1\n"));
    }
    let gt_path = tmp.path().join("gt.txt");
    fs::write(&gt_path, &gt).unwrap();
    let hyp: String = gt.lines().filter(|l| !l.starts_with("2,2")).map(|l| format!("{l}\n")).collect();
    let hyp_path = tmp.path().join("hyp.txt");
    fs::write(&hyp_path, hyp).unwrap();
    let report_path = tmp.path().join("report.txt");
    run_ok(&[
        "eval", "--gt", gt_path.to_str().unwrap(), "--track-pred", hyp_path.to_str().unwrap(),
        "--out", report_path.to_str().unwrap(),
    ]);
    let report = machine_report(&fs::read_to_string(report_path).unwrap());
    assert_eq!(report["mot.fn"], 1.0);
    assert!((report["mot.mota"] - 100.0 * 5.0 / 6.0).abs() < 1e-4);
}

#[test]
fn eval_empty_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let gt_path = tmp.path().join("gt.txt");
    fs::write(&gt_path, "1,1,0,0,10,10,1,-1,-1,-1\n").unwrap();
    let det_path = tmp.path().join("det.txt");
    fs::write(&det_path, "").unwrap();
    let report_path = tmp.path().join("report.txt");
    run_ok(&[
        "eval", "--gt", gt_path.to_str().unwrap(), "--det-pred", det_path.to_str().unwrap(),
        "--out", report_path.to_str().unwrap(),
    ]);
    let report = machine_report(&fs::read_to_string(report_path).unwrap());
    assert_eq!(report["det.ap"], 0.0);
    assert_eq!(report["det.mmr_percent"], 100.0);
}

#[test]
fn eval_out_of_range_frames_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let gt_path = tmp.path().join("gt.txt");
    fs::write(&gt_path, "1,1,0,0,10,10,1,-1,-1,-1\n").unwrap();
    let hyp_path = tmp.path().join("hyp.txt");
    fs::write(&hyp_path, "7,1,0,0,10,10,1,-1,-1,-1\n").unwrap();
    let (code, stderr) = run_code(&[
        "eval", "--gt", gt_path.to_str().unwrap(), "--track-pred", hyp_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "stderr: {stderr}");
}

#[test]
fn gridsearch_degenerate_grid_picks_reachable_point() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scene");
    run_ok(&[
        "synth", "--out", dir.to_str().unwrap(), "--agents", "2", "--frames", "15",
        "--arena", "128x128", "--seed", "21", "--no-flows",
    ]);
    let grid = tmp.path().join("grid.cfg");
    fs::write(&grid, "n_init = 2 100\n").unwrap();
    let best = tmp.path().join("best.cfg");
    run_ok(&[
        "gridsearch", "--seq", dir.to_str().unwrap(), "--grid", grid.to_str().unwrap(),
        "--out-params", best.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(best).unwrap();
    assert!(text.contains("n_init = 2"), "got:\n{text}");

    // an axis with no values is a config error
    fs::write(&grid, "n_init =\n").unwrap();
    let (code, _) = run_code(&[
        "gridsearch", "--seq", dir.to_str().unwrap(), "--grid", grid.to_str().unwrap(),
        "--out-params", tmp.path().join("b2.cfg").to_str().unwrap(),
    ]);
    assert_eq!(code, 3);
}

#[test]
fn overlay_writes_svg_per_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scene");
    run_ok(&[
        "synth", "--out", dir.to_str().unwrap(), "--agents", "2", "--frames", "4",
        "--arena", "96x96", "--seed", "8", "--no-flows",
    ]);
    let out = tmp.path().join("svg");
    run_ok(&[
        "overlay", "--tracks", dir.join("gt.txt").to_str().unwrap(), "--poses",
        dir.join("gt_poses.jsonl").to_str().unwrap(), "--arena", "96x96", "--out",
        out.to_str().unwrap(),
    ]);
    for frame in 1..=4 {
        let svg = fs::read_to_string(out.join(format!("frame_{frame:06}.svg"))).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<rect"));
        assert!(svg.contains("<circle"));
    }
}

#[test]
fn unknown_flag_exits_3() {
    let (code, _) = run_code(&["track", "--definitely-not-a-flag"]);
    assert_eq!(code, 3);
}

#[test]
fn eval_dumps_curve_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let gt_path = tmp.path().join("gt.txt");
    fs::write(
        &gt_path,
        "1,1,0,0,10,10,1,-1,-1,-1\n1,2,50,0,10,10,1,-1,-1,-1\n",
    )
    .unwrap();
    let det_path = tmp.path().join("det.txt");
    fs::write(
        &det_path,
        "1,-1,0,0,10,10,0.9,-1,-1,-1\n1,-1,200,200,10,10,0.4,-1,-1,-1\n",
    )
    .unwrap();
    let curves = tmp.path().join("curves");
    run_ok(&[
        "eval", "--gt", gt_path.to_str().unwrap(), "--det-pred", det_path.to_str().unwrap(),
        "--curves", curves.to_str().unwrap(),
    ]);
    let pr = fs::read_to_string(curves.join("pr_curve.csv")).unwrap();
    assert!(pr.starts_with("recall,precision\n"));
    assert!(pr.lines().count() >= 2);
    let mr = fs::read_to_string(curves.join("miss_rate_curve.csv")).unwrap();
    assert!(mr.starts_with("fppi,miss_rate\n"));
    assert!(mr.lines().count() >= 2);
}

#[test]
fn config_file_values_apply_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scene");
    synth(&dir, &["--no-flows"]);
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "tracker.max_age = 7\nstages.set_nms = true\nnms.iou_threshold = 0.6\n").unwrap();
    let tracks = tmp.path().join("tracks.txt");
    run_ok(&[
        "track", "--dets", dir.join("det.txt").to_str().unwrap(), "--emb",
        dir.join("emb.bin").to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--out",
        tracks.to_str().unwrap(),
    ]);
    let echo = fs::read_to_string(tmp.path().join("tracks.txt.config")).unwrap();
    assert!(echo.contains("tracker.max_age = 7"));
    assert!(echo.contains("nms.iou_threshold = 0.6"));
    assert!(echo.contains("stages.set_nms = true"));

    // a flat tracker-config file overrides the sectioned config
    let tcfg = tmp.path().join("tracker.cfg");
    fs::write(&tcfg, "max_age = 12\n").unwrap();
    run_ok(&[
        "track", "--dets", dir.join("det.txt").to_str().unwrap(), "--emb",
        dir.join("emb.bin").to_str().unwrap(), "--config", cfg.to_str().unwrap(),
        "--tracker-config", tcfg.to_str().unwrap(), "--out", tracks.to_str().unwrap(),
    ]);
    let echo = fs::read_to_string(tmp.path().join("tracks.txt.config")).unwrap();
    assert!(echo.contains("tracker.max_age = 12"));
}

#[test]
fn full_pipeline_composition_on_noise_free_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scene");
    run_ok(&[
        "synth", "--out", dir.to_str().unwrap(), "--agents", "2", "--frames", "20",
        "--arena", "192x192", "--seed", "14",
    ]);

    // track
    let tracks = tmp.path().join("tracks.txt");
    run_ok(&[
        "track", "--dets", dir.join("det.txt").to_str().unwrap(), "--emb",
        dir.join("emb.bin").to_str().unwrap(), "--out", tracks.to_str().unwrap(),
    ]);

    // the pose stage consumes one pose per tracked box; keep the GT pose
    // records of the frames the tracker actually covered
    let covered: std::collections::BTreeSet<i64> = fs::read_to_string(&tracks)
        .unwrap()
        .lines()
        .map(|l| l.split(',').next().unwrap().parse::<i64>().unwrap())
        .collect();
    let gt_poses = fs::read_to_string(dir.join("gt_poses.jsonl")).unwrap();
    let covered_poses: String = gt_poses
        .lines()
        .filter(|l| {
            let frame: i64 = l
                .split("\"frame\":")
                .nth(1)
                .unwrap()
                .split([',', '}'])
                .next()
                .unwrap()
                .trim()
                .parse()
                .unwrap();
            covered.contains(&frame)
        })
        .map(|l| format!("{l}\n"))
        .collect();
    let pose_in = tmp.path().join("poses_in.jsonl");
    fs::write(&pose_in, &covered_poses).unwrap();

    // pose smoothing with the exact flows
    let pose_out = tmp.path().join("poses_out.jsonl");
    run_ok(&[
        "pose", "--tracks", tracks.to_str().unwrap(), "--poses", pose_in.to_str().unwrap(),
        "--flows", dir.join("flows").to_str().unwrap(), "--out", pose_out.to_str().unwrap(),
    ]);

    // evaluate tracking against full GT and poses against covered-frame GT
    let gt_covered = tmp.path().join("gt_poses_covered.jsonl");
    fs::write(&gt_covered, &covered_poses).unwrap();
    let report_path = tmp.path().join("report.txt");
    run_ok(&[
        "eval", "--gt", dir.join("gt.txt").to_str().unwrap(), "--track-pred",
        tracks.to_str().unwrap(), "--gt-poses", gt_covered.to_str().unwrap(), "--pred-poses",
        pose_out.to_str().unwrap(), "--out", report_path.to_str().unwrap(),
    ]);
    let report = machine_report(&fs::read_to_string(report_path).unwrap());
    // losses only from the n_init warm-up frames
    let gt_count = 2.0 * 20.0;
    let bound = 100.0 * (1.0 - 2.0 * 2.0 * 2.0 / gt_count);
    assert!(report["mot.mota"] >= bound - 1e-9, "mota {}", report["mot.mota"]);
    assert_eq!(report["mot.idsw"], 0.0);
    assert_eq!(report["mot.fp"], 0.0);
    assert_eq!(report["pose.ap_avg"], 100.0);
    assert_eq!(report["pose.ap_50"], 100.0);
    assert_eq!(report["pose.ap_75"], 100.0);
}

#[test]
fn outputs_carry_config_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scene");
    synth(&dir, &["--no-flows"]);
    let tracks = tmp.path().join("tracks.txt");
    run_ok(&[
        "track", "--dets", dir.join("det.txt").to_str().unwrap(), "--emb",
        dir.join("emb.bin").to_str().unwrap(), "--set-nms", "--out", tracks.to_str().unwrap(),
    ]);
    let echo = fs::read_to_string(tmp.path().join("tracks.txt.config")).unwrap();
    assert!(echo.contains("stages.set_nms = true"));
}
