//! `crowdtrack eval`: detection AP and log-average miss rate, CLEAR-MOT
//! metrics, and OKS pose AP, as a human table plus machine-readable
//! `metric = value` lines.

use crate::config::RunConfig;
use crate::util::{atomic_write, echo_config, read_text, CliError, CliResult};
use clap::Args;
use crowdtrack::eval::{
    detection_ap, miss_rate_curve, mmr, mot_metrics, pose_ap, pr_curve, DetEvalParams,
    PoseEvalParams,
};
use crowdtrack::io::{parse_mot_detections, parse_mot_tracks, read_pose_records};
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Args)]
pub struct EvalArgs {
    /// Ground-truth MOT file
    #[arg(long)]
    pub gt: PathBuf,
    /// Detections to score with AP / miss rate (MOT file, id -1)
    #[arg(long)]
    pub det_pred: Option<PathBuf>,
    /// Tracker output to score with CLEAR-MOT (MOT file with ids)
    #[arg(long)]
    pub track_pred: Option<PathBuf>,
    /// Ground-truth pose records
    #[arg(long, requires = "pred_poses")]
    pub gt_poses: Option<PathBuf>,
    /// Predicted pose records
    #[arg(long, requires = "gt_poses")]
    pub pred_poses: Option<PathBuf>,
    /// Run configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// IoU threshold override for `deteval.iou_threshold`
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    /// Uniform OKS sigma override for `poseeval.sigma`
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Write the machine-readable report here (defaults to stdout only)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write pr_curve.csv and miss_rate_curve.csv into this directory
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

pub fn run(args: EvalArgs) -> CliResult<()> {
    for path in [Some(&args.gt), args.det_pred.as_ref(), args.track_pred.as_ref(), args.gt_poses.as_ref(), args.pred_poses.as_ref()]
        .into_iter()
        .flatten()
    {
        if !path.exists() {
            return Err(CliError::input(format!("missing input: {}", path.display())));
        }
    }
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(iou) = args.iou_threshold {
        cfg.set("deteval.iou_threshold", iou);
    }
    if let Some(sigma) = args.sigma {
        cfg.set("poseeval.sigma", sigma);
    }
    let iou_threshold = cfg.get_f64("deteval.iou_threshold", 0.5)?;
    let det_params = DetEvalParams {
        iou_threshold,
        ..DetEvalParams::default()
    };

    let gt = parse_mot_tracks(&read_text(&args.gt)?)?;
    if gt.is_empty() {
        return Err(CliError::config("ground truth is empty"));
    }
    let gt_lo = gt.iter().map(|t| t.frame).min().unwrap();
    let gt_hi = gt.iter().map(|t| t.frame).max().unwrap();
    let n_frames = (gt_hi - gt_lo + 1) as u64;
    let check_range = |frames: &[i64], what: &str| -> CliResult<()> {
        if let (Some(&lo), Some(&hi)) = (frames.iter().min(), frames.iter().max()) {
            if lo < gt_lo || hi > gt_hi {
                return Err(CliError::config(format!(
                    "{what} frames {lo}..{hi} fall outside the ground-truth range {gt_lo}..{gt_hi}"
                )));
            }
        }
        Ok(())
    };

    let mut lines: Vec<(String, String)> = Vec::new();
    let mut table = String::new();
    let _ = writeln!(table, "# ground truth: {} boxes, frames {gt_lo}..{gt_hi}", gt.len());

    if let Some(det_path) = &args.det_pred {
        let preds = parse_mot_detections(&read_text(det_path)?)?;
        check_range(&preds.iter().map(|d| d.frame).collect::<Vec<_>>(), "detection")?;
        let ap = detection_ap(&gt, &preds, &det_params)?;
        let miss = mmr(&gt, &preds, &det_params, n_frames)?;
        let _ = writeln!(table, "detection AP        {:>10.4}", ap);
        let _ = writeln!(table, "detection MMR (%)   {:>10.4}", miss);
        lines.push(("det.ap".into(), format!("{ap:.6}")));
        lines.push(("det.mmr_percent".into(), format!("{miss:.6}")));
        if let Some(dir) = &args.curves {
            let pr = pr_curve(&gt, &preds, &det_params)?;
            let mut csv = String::from("recall,precision\n");
            for (r, p) in pr {
                let _ = writeln!(csv, "{r:.6},{p:.6}");
            }
            atomic_write(&dir.join("pr_curve.csv"), csv.as_bytes())?;
            let mr = miss_rate_curve(&gt, &preds, &det_params, n_frames)?;
            let mut csv = String::from("fppi,miss_rate\n");
            for (f, m) in mr {
                let _ = writeln!(csv, "{f:.6},{m:.6}");
            }
            atomic_write(&dir.join("miss_rate_curve.csv"), csv.as_bytes())?;
        }
    }

    if let Some(track_path) = &args.track_pred {
        let preds = parse_mot_tracks(&read_text(track_path)?)?;
        check_range(&preds.iter().map(|t| t.frame).collect::<Vec<_>>(), "track")?;
        let report = mot_metrics(&gt, &preds, iou_threshold)?;
        let _ = writeln!(table, "# motp scale: mean IoU distance over matches, 0 is perfect");
        let _ = writeln!(table, "MOTA (%)            {:>10.4}", report.mota);
        let _ = writeln!(table, "MOTP                {:>10.4}", report.motp);
        let _ = writeln!(table, "FP                  {:>10}", report.fp);
        let _ = writeln!(table, "FN                  {:>10}", report.fn_);
        let _ = writeln!(table, "ID switches         {:>10}", report.idsw);
        lines.push(("mot.mota".into(), format!("{:.6}", report.mota)));
        lines.push(("mot.motp".into(), format!("{:.6}", report.motp)));
        lines.push(("mot.fp".into(), report.fp.to_string()));
        lines.push(("mot.fn".into(), report.fn_.to_string()));
        lines.push(("mot.idsw".into(), report.idsw.to_string()));
        lines.push(("mot.gt_count".into(), report.gt_count.to_string()));
    }

    if let (Some(gp), Some(pp)) = (&args.gt_poses, &args.pred_poses) {
        let gt_poses = read_pose_records(&read_text(gp)?)?;
        let pred_poses = read_pose_records(&read_text(pp)?)?;
        if gt_poses.is_empty() {
            return Err(CliError::config("ground-truth poses are empty"));
        }
        let k = gt_poses[0].k();
        let mut pose_params = PoseEvalParams::uniform(k);
        let sigma = cfg.get_f64("poseeval.sigma", 0.079)?;
        pose_params.sigmas = vec![sigma; k];
        let (ap_avg, ap_50, ap_75) = pose_ap(&gt_poses, &pred_poses, &pose_params, None)?;
        let _ = writeln!(table, "pose AP avg (%)     {:>10.4}", ap_avg);
        let _ = writeln!(table, "pose AP @0.50 (%)   {:>10.4}", ap_50);
        let _ = writeln!(table, "pose AP @0.75 (%)   {:>10.4}", ap_75);
        lines.push(("pose.ap_avg".into(), format!("{ap_avg:.6}")));
        lines.push(("pose.ap_50".into(), format!("{ap_50:.6}")));
        lines.push(("pose.ap_75".into(), format!("{ap_75:.6}")));
    }

    print!("{table}");
    let mut machine = String::new();
    for (key, value) in &lines {
        let _ = writeln!(machine, "{key} = {value}");
    }
    if let Some(out) = &args.out {
        atomic_write(out, machine.as_bytes())?;
        echo_config(out, &cfg.echo())?;
    } else {
        print!("{machine}");
    }
    Ok(())
}
