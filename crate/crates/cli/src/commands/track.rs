//! `crowdtrack track`: fusion -> NMS/Set-NMS -> optional detection smoothing
//! -> identity association, producing a MOT track file.

use crate::config::RunConfig;
use crate::util::{
    atomic_write, echo_config, group_by_frame, load_detections_with_embeddings, read_text,
    CliError, CliResult, FlowDir,
};
use clap::Args;
use crowdtrack::detpost::{fuse_detections, nms, set_nms, smooth_boxes};
use crowdtrack::io::write_mot_tracks;
use crowdtrack::tracker::{Tracker, TrackerParams};
use crowdtrack::types::{Detection, TrackedBox};
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Args)]
pub struct TrackArgs {
    /// MOT detection file (id column must be -1)
    #[arg(long)]
    pub dets: PathBuf,
    /// Embedding sidecar aligned with the detection rows
    #[arg(long)]
    pub emb: PathBuf,
    /// Second detector's MOT file; enables two-model fusion
    #[arg(long, requires = "emb_b")]
    pub dets_b: Option<PathBuf>,
    /// Embedding sidecar for the second detector
    #[arg(long, requires = "dets_b")]
    pub emb_b: Option<PathBuf>,
    /// Run configuration file (`section.key = value` lines)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Flat tracker parameter file; overrides `tracker.*` config keys
    #[arg(long)]
    pub tracker_config: Option<PathBuf>,
    /// Use Set-NMS (proposal-aware) instead of plain NMS
    #[arg(long)]
    pub set_nms: bool,
    /// Skip the NMS stage entirely
    #[arg(long)]
    pub no_nms: bool,
    /// Apply flow-based box smoothing before or after the tracker
    /// (bare flag means before)
    #[arg(long, value_parser = ["before", "after"], num_args = 0..=1, default_missing_value = "before")]
    pub smooth_boxes: Option<String>,
    /// Directory of flow fields named `<from>_<to>.flo` (required for smoothing)
    #[arg(long)]
    pub flows: Option<PathBuf>,
    /// Output MOT track file
    #[arg(long)]
    pub out: PathBuf,
}

fn require_exists(path: &std::path::Path) -> CliResult<()> {
    if !path.exists() {
        return Err(CliError::input(format!("missing input: {}", path.display())));
    }
    Ok(())
}

pub fn run(args: TrackArgs) -> CliResult<()> {
    for path in [Some(&args.dets), Some(&args.emb), args.dets_b.as_ref(), args.emb_b.as_ref()]
        .into_iter()
        .flatten()
    {
        require_exists(path)?;
    }
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(tc) = &args.tracker_config {
        let params = TrackerParams::from_config_str(&read_text(tc)?)?;
        cfg.set("tracker.max_cos_dis", params.max_cos_dis);
        cfg.set("tracker.nn_budget", params.nn_budget);
        cfg.set("tracker.max_age", params.max_age);
        cfg.set("tracker.n_init", params.n_init);
        cfg.set("tracker.max_iou_dis", params.max_iou_dis);
        cfg.set("tracker.gating_threshold", params.gating_threshold);
    }
    if args.set_nms {
        cfg.set("stages.set_nms", "true");
    }
    if args.no_nms {
        cfg.set("stages.nms", "false");
    }
    if let Some(stage) = &args.smooth_boxes {
        cfg.set("stages.smooth_boxes", stage);
    }
    let use_set_nms = cfg.get_bool("stages.set_nms", false)?;
    let run_nms = cfg.get_bool("stages.nms", true)?;
    let smooth_stage = cfg.get("stages.smooth_boxes").unwrap_or("off").to_string();
    if !["off", "before", "after"].contains(&smooth_stage.as_str()) {
        return Err(CliError::config(format!(
            "stages.smooth_boxes must be off|before|after, got '{smooth_stage}'"
        )));
    }
    let nms_params = cfg.nms_params()?;
    let fusion_params = cfg.fusion_params()?;
    let smooth_params = cfg.box_smooth_params()?;
    let tracker_params = cfg.tracker_params()?;

    let mut flow_dir = match (&smooth_stage[..], &args.flows) {
        ("off", _) => None,
        (_, Some(dir)) => {
            require_exists(dir)?;
            Some(FlowDir::new(dir.clone()))
        }
        (_, None) => {
            return Err(CliError::input(
                "--smooth-boxes requires --flows <dir> with <from>_<to>.flo files",
            ))
        }
    };

    let dets = load_detections_with_embeddings(&args.dets, &args.emb)?;
    let n_in = dets.len();
    let mut by_frame = group_by_frame(dets);

    if let (Some(db), Some(eb)) = (&args.dets_b, &args.emb_b) {
        let mut dets_b = load_detections_with_embeddings(db, eb)?;
        for d in &mut dets_b {
            d.model_id = 1;
        }
        let by_frame_b = group_by_frame(dets_b);
        let frames: Vec<i64> = by_frame
            .keys()
            .chain(by_frame_b.keys())
            .copied()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut fused = BTreeMap::new();
        for frame in frames {
            let empty = Vec::new();
            let a = by_frame.get(&frame).unwrap_or(&empty);
            let b = by_frame_b.get(&frame).unwrap_or(&empty);
            fused.insert(frame, fuse_detections(a, b, &fusion_params));
        }
        by_frame = fused;
    }

    if run_nms {
        for dets in by_frame.values_mut() {
            *dets = if use_set_nms {
                set_nms(dets, &nms_params)
            } else {
                nms(dets, &nms_params)
            };
        }
    }
    let n_after_nms: usize = by_frame.values().map(Vec::len).sum();

    if smooth_stage == "before" {
        let flows = flow_dir.as_mut().expect("checked above");
        let frames: Vec<i64> = by_frame.keys().copied().collect();
        let mut prev: Option<(i64, Vec<TrackedBox>)> = None;
        for frame in frames {
            let curr = by_frame.remove(&frame).unwrap_or_default();
            let smoothed = match &prev {
                Some((prev_frame, prev_boxes)) if *prev_frame == frame - 1 => {
                    let field = flows.get(frame - 1, frame)?;
                    smooth_boxes(prev_boxes, &curr, field, &smooth_params)?
                }
                _ => curr,
            };
            // anonymous previous-frame boxes for the next iteration
            let as_tracked = smoothed
                .iter()
                .enumerate()
                .map(|(i, d)| TrackedBox::new(d.frame, i as i64 + 1, d.bbox, d.score))
                .collect::<Result<Vec<_>, _>>()?;
            prev = Some((frame, as_tracked));
            by_frame.insert(frame, smoothed);
        }
    }

    let mut results = Vec::new();
    if let (Some(&lo), Some(&hi)) = (by_frame.keys().next(), by_frame.keys().last()) {
        let mut tracker = Tracker::new(tracker_params)?;
        let empty = Vec::new();
        for frame in lo..=hi {
            let dets = by_frame.get(&frame).unwrap_or(&empty);
            results.push(tracker.step(frame, dets)?);
        }
    }

    if smooth_stage == "after" {
        let flows = flow_dir.as_mut().expect("checked above");
        let mut prev: Option<(i64, Vec<TrackedBox>)> = None;
        for result in &mut results {
            if let Some((prev_frame, prev_boxes)) = &prev {
                if *prev_frame == result.frame - 1 && !result.outputs.is_empty() {
                    let field = flows.get(result.frame - 1, result.frame)?;
                    let as_dets = result
                        .outputs
                        .iter()
                        .map(|t| Detection::new(t.frame, t.bbox, t.score))
                        .collect::<Result<Vec<_>, _>>()?;
                    let smoothed = smooth_boxes(prev_boxes, &as_dets, field, &smooth_params)?;
                    for (out, sm) in result.outputs.iter_mut().zip(smoothed) {
                        out.bbox = sm.bbox;
                    }
                }
            }
            prev = Some((result.frame, result.outputs.clone()));
        }
    }

    let tracks: Vec<TrackedBox> = results.iter().flat_map(|r| r.outputs.clone()).collect();
    let mut ids: Vec<i64> = tracks.iter().map(|t| t.track_id).collect();
    ids.sort_unstable();
    ids.dedup();

    atomic_write(&args.out, write_mot_tracks(&tracks).as_bytes())?;
    echo_config(&args.out, &cfg.echo())?;
    println!(
        "track: {} frames, {} detections in, {} after nms, {} track boxes out, {} identities",
        results.len(),
        n_in,
        n_after_nms,
        tracks.len(),
        ids.len()
    );
    Ok(())
}
