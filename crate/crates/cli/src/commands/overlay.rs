//! `crowdtrack overlay`: per-frame SVG renderings of tracked boxes, ids and
//! poses, for output inspection.

use crate::util::{atomic_write, parse_wh, read_text, CliError, CliResult};
use clap::Args;
use crowdtrack::io::{parse_mot_tracks, read_pose_records};
use crowdtrack::types::Pose;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Args)]
pub struct OverlayArgs {
    /// MOT track file to render
    #[arg(long)]
    pub tracks: PathBuf,
    /// Pose records with track ids (optional)
    #[arg(long)]
    pub poses: Option<PathBuf>,
    /// Canvas size as WxH pixels
    #[arg(long, default_value = "128x128")]
    pub arena: String,
    /// Output directory for frame_<n>.svg files
    #[arg(long)]
    pub out: PathBuf,
}

fn id_color(track_id: i64) -> String {
    format!("hsl({}, 70%, 45%)", (track_id * 47) % 360)
}

pub fn run(args: OverlayArgs) -> CliResult<()> {
    if !args.tracks.exists() {
        return Err(CliError::input(format!(
            "missing input: {}",
            args.tracks.display()
        )));
    }
    let (w, h) = parse_wh(&args.arena)?;
    let tracks = parse_mot_tracks(&read_text(&args.tracks)?)?;
    let mut poses_by_frame: BTreeMap<i64, Vec<Pose>> = BTreeMap::new();
    if let Some(pose_path) = &args.poses {
        if !pose_path.exists() {
            return Err(CliError::input(format!(
                "missing input: {}",
                pose_path.display()
            )));
        }
        for pose in read_pose_records(&read_text(pose_path)?)? {
            poses_by_frame.entry(pose.frame).or_default().push(pose);
        }
    }

    let mut frames: BTreeMap<i64, Vec<&crowdtrack::types::TrackedBox>> = BTreeMap::new();
    for t in &tracks {
        frames.entry(t.frame).or_default().push(t);
    }
    let n_frames = frames.len();

    for (frame, boxes) in frames {
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"{w}\" height=\"{h}\" fill=\"#101010\"/>\n"
        );
        for b in boxes {
            let color = id_color(b.track_id);
            let _ = writeln!(
                svg,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                b.bbox.x1,
                b.bbox.y1,
                b.bbox.width(),
                b.bbox.height()
            );
            let _ = writeln!(
                svg,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"9\" fill=\"{color}\">{}</text>",
                b.bbox.x1 + 1.0,
                (b.bbox.y1 - 2.0).max(8.0),
                b.track_id
            );
        }
        if let Some(poses) = poses_by_frame.get(&frame) {
            for pose in poses {
                let color = pose.track_id.map_or_else(|| "#cccccc".to_string(), id_color);
                for k in &pose.keypoints {
                    let _ = writeln!(
                        svg,
                        "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.5\" fill=\"{color}\"/>",
                        k.x, k.y
                    );
                }
            }
        }
        svg.push_str("</svg>\n");
        atomic_write(&args.out.join(format!("frame_{frame:06}.svg")), svg.as_bytes())?;
    }
    println!("overlay: wrote {n_frames} SVG frames to {}", args.out.display());
    Ok(())
}
