//! `crowdtrack pose`: attach track identities to per-box poses (decoding
//! them from heatmaps first if needed) and smooth each track temporally.

use crate::config::RunConfig;
use crate::util::{atomic_write, echo_config, read_bytes, read_text, CliError, CliResult, FlowDir};
use clap::Args;
use crowdtrack::io::{read_heatmap, read_pose_records, write_pose_records};
use crowdtrack::posetrack::{
    decode_heatmap, fuse_heatmaps, smooth_sequence, transfer_ids, SourcedPose,
};
use crowdtrack::tracker::FrameResult;
use crowdtrack::types::{Pose, TrackedBox};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Args)]
pub struct PoseArgs {
    /// MOT track file whose boxes the poses belong to
    #[arg(long)]
    pub tracks: PathBuf,
    /// Pose records (JSON lines), one per tracked box, frame-aligned with
    /// the track file's (frame, id)-sorted rows
    #[arg(long, conflicts_with = "heatmaps")]
    pub poses: Option<PathBuf>,
    /// Directory of heatmaps named `<frame>_<box>.hm`, one per tracked box
    #[arg(long)]
    pub heatmaps: Option<PathBuf>,
    /// Second model's heatmap directory; fused by averaging
    #[arg(long, requires = "heatmaps")]
    pub heatmaps_b: Option<PathBuf>,
    /// Directory of flow fields named `<from>_<to>.flo`, both directions
    #[arg(long)]
    pub flows: Option<PathBuf>,
    /// Run configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Smoothing weight override for `posesmooth.alpha`
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Output pose record file with track ids attached
    #[arg(long)]
    pub out: PathBuf,
}

fn heatmap_name(frame: i64, box_index: usize) -> String {
    format!("{frame:06}_{box_index:03}.hm")
}

fn load_box_poses(
    args: &PoseArgs,
    frames: &BTreeMap<i64, Vec<TrackedBox>>,
) -> CliResult<Vec<SourcedPose>> {
    if let Some(pose_path) = &args.poses {
        let records = read_pose_records(&read_text(pose_path)?)?;
        let mut per_frame: BTreeMap<i64, Vec<Pose>> = BTreeMap::new();
        for rec in records {
            per_frame.entry(rec.frame).or_default().push(rec);
        }
        let mut out = Vec::new();
        for (&frame, boxes) in frames {
            let empty = Vec::new();
            let poses = per_frame.get(&frame).unwrap_or(&empty);
            if poses.len() != boxes.len() {
                return Err(CliError::config(format!(
                    "frame {frame}: {} pose records for {} tracked boxes",
                    poses.len(),
                    boxes.len()
                )));
            }
            for (box_index, pose) in poses.iter().enumerate() {
                out.push(SourcedPose {
                    frame,
                    box_index,
                    pose: pose.clone(),
                });
            }
        }
        let extraneous: Vec<i64> = per_frame
            .keys()
            .filter(|f| !frames.contains_key(f))
            .copied()
            .collect();
        if !extraneous.is_empty() {
            return Err(CliError::config(format!(
                "pose records reference frames with no tracked boxes: {extraneous:?}"
            )));
        }
        return Ok(out);
    }

    let Some(dir) = &args.heatmaps else {
        return Err(CliError::config("either --poses or --heatmaps is required"));
    };
    if !dir.exists() {
        return Err(CliError::input(format!("missing input: {}", dir.display())));
    }
    let mut out = Vec::new();
    for (&frame, boxes) in frames {
        for (box_index, tracked) in boxes.iter().enumerate() {
            let load = |root: &Path| -> CliResult<crowdtrack::types::Heatmap> {
                let path = root.join(heatmap_name(frame, box_index));
                Ok(read_heatmap(&read_bytes(&path)?)?)
            };
            let mut heatmap = load(dir)?;
            if let Some(dir_b) = &args.heatmaps_b {
                heatmap = fuse_heatmaps(&heatmap, &load(dir_b)?)?;
            }
            // the heatmap grid spans the tracked box
            let scale = (
                tracked.bbox.width() / heatmap.width() as f64,
                tracked.bbox.height() / heatmap.height() as f64,
            );
            let pose = decode_heatmap(&heatmap, (tracked.bbox.x1, tracked.bbox.y1), scale, frame)?;
            out.push(SourcedPose {
                frame,
                box_index,
                pose,
            });
        }
    }
    Ok(out)
}

pub fn run(args: PoseArgs) -> CliResult<()> {
    if !args.tracks.exists() {
        return Err(CliError::input(format!(
            "missing input: {}",
            args.tracks.display()
        )));
    }
    if let Some(p) = &args.poses {
        if !p.exists() {
            return Err(CliError::input(format!("missing input: {}", p.display())));
        }
    }
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(alpha) = args.alpha {
        cfg.set("posesmooth.alpha", alpha);
    }
    let smooth_params = cfg.pose_smooth_params()?;

    let tracks = crowdtrack::io::parse_mot_tracks(&read_text(&args.tracks)?)?;
    let mut frames: BTreeMap<i64, Vec<TrackedBox>> = BTreeMap::new();
    for t in tracks {
        frames.entry(t.frame).or_default().push(t);
    }

    let sourced = load_box_poses(&args, &frames)?;
    let frame_results: Vec<FrameResult> = frames
        .iter()
        .map(|(&frame, boxes)| FrameResult {
            frame,
            outputs: boxes.clone(),
        })
        .collect();
    let sequences = transfer_ids(&frame_results, &sourced)?;

    // alpha 0 leaves every pose untouched, so no flow fields are needed
    let smoothed = if smooth_params.alpha == 0.0 {
        sequences
    } else {
        let Some(flow_path) = &args.flows else {
            return Err(CliError::input(
                "pose smoothing requires --flows <dir> (or --alpha 0 to disable)",
            ));
        };
        if !flow_path.exists() {
            return Err(CliError::input(format!(
                "missing input: {}",
                flow_path.display()
            )));
        }
        let mut flow_dir = FlowDir::new(flow_path.clone());
        let mut out = Vec::with_capacity(sequences.len());
        for seq in &sequences {
            let mut flows = BTreeMap::new();
            let present: Vec<i64> = seq.poses.keys().copied().collect();
            for &frame in &present {
                if seq.poses.contains_key(&(frame - 1)) {
                    flows.insert(
                        (frame - 1, frame),
                        flow_dir.get(frame - 1, frame)?.clone(),
                    );
                }
                if seq.poses.contains_key(&(frame + 1)) {
                    flows.insert(
                        (frame + 1, frame),
                        flow_dir.get(frame + 1, frame)?.clone(),
                    );
                }
            }
            out.push(smooth_sequence(seq, &flows, &smooth_params)?);
        }
        out
    };

    let mut records: Vec<Pose> = smoothed
        .iter()
        .flat_map(|seq| seq.poses.values().cloned())
        .collect();
    records.sort_by_key(|p| (p.frame, p.track_id));
    atomic_write(&args.out, write_pose_records(&records).as_bytes())?;
    echo_config(&args.out, &cfg.echo())?;
    println!(
        "pose: {} tracks, {} poses, alpha {}",
        smoothed.len(),
        records.len(),
        smooth_params.alpha
    );
    Ok(())
}
