//! Pose pipeline: heatmap fusion and decoding, flow-based pose propagation,
//! three-term temporal smoothing, and transfer of track identities onto
//! poses.

use crate::error::{Error, Result};
use crate::flow::propagate_points;
use crate::tracker::FrameResult;
use crate::types::{FlowField, Heatmap, Keypoint, Pose};
use std::collections::BTreeMap;

/// Temporal smoothing weight: the propagated previous and next poses each
/// get `alpha`, the current prediction gets `1 - 2 alpha`. Valid range is
/// [0, 0.5] so the three weights form a convex combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSmoothParams {
    pub alpha: f64,
}

impl Default for PoseSmoothParams {
    fn default() -> Self {
        PoseSmoothParams { alpha: 0.25 }
    }
}

impl PoseSmoothParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.alpha) {
            return Err(Error::validation(format!(
                "pose smoothing alpha {} outside [0, 0.5]",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// One identity's poses over a frame range; gaps are simply absent keys.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub track_id: i64,
    pub poses: BTreeMap<i64, Pose>,
}

impl PoseSequence {
    pub fn new(track_id: i64, poses: BTreeMap<i64, Pose>) -> Result<Self> {
        let mut k = None;
        for pose in poses.values() {
            match k {
                None => k = Some(pose.k()),
                Some(k) if k != pose.k() => {
                    return Err(Error::validation(
                        "poses in one sequence must share a keypoint count",
                    ))
                }
                _ => {}
            }
        }
        Ok(PoseSequence { track_id, poses })
    }
}

/// Element-wise mean of two heatmaps of identical shape.
pub fn fuse_heatmaps(a: &Heatmap, b: &Heatmap) -> Result<Heatmap> {
    if a.k() != b.k() || a.height() != b.height() || a.width() != b.width() {
        return Err(Error::validation(format!(
            "heatmap shapes differ: {}x{}x{} vs {}x{}x{}",
            a.k(),
            a.height(),
            a.width(),
            b.k(),
            b.height(),
            b.width()
        )));
    }
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x + y) / 2.0)
        .collect();
    Heatmap::new(a.k(), a.height(), a.width(), values)
}

/// Decode per-joint keypoints from a heatmap.
///
/// Each joint takes the grid argmax (row-major first occurrence on ties),
/// shifted a quarter cell toward the strictly largest 4-neighbor (no shift
/// when neighbors tie), then mapped to image coordinates as
/// `origin + scale * grid`. Confidence is the peak value. A channel whose
/// values are all equal decodes to the channel center at that value.
pub fn decode_heatmap(
    h: &Heatmap,
    origin: (f64, f64),
    scale: (f64, f64),
    frame: i64,
) -> Result<Pose> {
    if scale.0 <= 0.0 || scale.1 <= 0.0 {
        return Err(Error::validation("decode scale must be positive"));
    }
    let (w, hgt) = (h.width(), h.height());
    let mut keypoints = Vec::with_capacity(h.k());
    for joint in 0..h.k() {
        let first = h.value(joint, 0, 0);
        let all_equal = (0..hgt).all(|y| (0..w).all(|x| h.value(joint, y, x) == first));
        let (gx, gy, conf) = if all_equal {
            ((w as f64 - 1.0) / 2.0, (hgt as f64 - 1.0) / 2.0, first)
        } else {
            let mut best = (0usize, 0usize);
            let mut best_val = f32::NEG_INFINITY;
            for y in 0..hgt {
                for x in 0..w {
                    let v = h.value(joint, y, x);
                    if v > best_val {
                        best_val = v;
                        best = (x, y);
                    }
                }
            }
            let (bx, by) = best;
            // quarter offset toward the unique largest 4-neighbor
            let mut neighbors: Vec<((f64, f64), f32)> = Vec::with_capacity(4);
            if bx > 0 {
                neighbors.push(((-0.25, 0.0), h.value(joint, by, bx - 1)));
            }
            if bx + 1 < w {
                neighbors.push(((0.25, 0.0), h.value(joint, by, bx + 1)));
            }
            if by > 0 {
                neighbors.push(((0.0, -0.25), h.value(joint, by - 1, bx)));
            }
            if by + 1 < hgt {
                neighbors.push(((0.0, 0.25), h.value(joint, by + 1, bx)));
            }
            let max_nb = neighbors
                .iter()
                .map(|&(_, v)| v)
                .fold(f32::NEG_INFINITY, f32::max);
            let top: Vec<&((f64, f64), f32)> =
                neighbors.iter().filter(|&&(_, v)| v == max_nb).collect();
            let (ox, oy) = if top.len() == 1 { top[0].0 } else { (0.0, 0.0) };
            (bx as f64 + ox, by as f64 + oy, best_val)
        };
        keypoints.push(Keypoint::new(
            origin.0 + scale.0 * gx,
            origin.1 + scale.1 * gy,
            (conf as f64).clamp(0.0, 1.0),
        )?);
    }
    Pose::new(frame, None, keypoints)
}

/// Move every keypoint along the flow field; confidences are untouched.
pub fn propagate_pose(pose: &Pose, field: &FlowField) -> Result<Pose> {
    let points: Vec<(f64, f64)> = pose.keypoints.iter().map(|k| (k.x, k.y)).collect();
    let moved = propagate_points(&points, field)?;
    let keypoints = pose
        .keypoints
        .iter()
        .zip(moved)
        .map(|(k, (x, y))| Keypoint::new(x, y, k.conf))
        .collect::<Result<Vec<_>>>()?;
    Pose::new(pose.frame, pose.track_id, keypoints)
}

/// Three-term temporal smoothing of one pose.
///
/// With both neighbors present the output coordinates are
/// `alpha * prev_propagated + alpha * next_propagated + (1 - 2 alpha) * curr`.
/// A missing neighbor reassigns its weight to the current term; with both
/// missing the current pose is returned unchanged. Confidences, frame and
/// track id always come from `curr`. `f_prev_to_k` carries frame k-1 onto k,
/// `f_next_to_k` carries frame k+1 back onto k.
pub fn smooth_pose(
    prev: Option<&Pose>,
    next: Option<&Pose>,
    curr: &Pose,
    f_prev_to_k: Option<&FlowField>,
    f_next_to_k: Option<&FlowField>,
    p: &PoseSmoothParams,
) -> Result<Pose> {
    p.validate()?;
    for neighbor in [prev, next].into_iter().flatten() {
        if neighbor.k() != curr.k() {
            return Err(Error::validation(format!(
                "neighbor pose has {} keypoints, current has {}",
                neighbor.k(),
                curr.k()
            )));
        }
        if let (Some(a), Some(b)) = (neighbor.track_id, curr.track_id) {
            if a != b {
                return Err(Error::validation(format!(
                    "neighbor pose belongs to track {a}, current to track {b}"
                )));
            }
        }
    }
    let propagated_prev = match prev {
        Some(pose) => {
            let field = f_prev_to_k.ok_or_else(|| {
                Error::usage("previous pose present but its flow field is missing")
            })?;
            Some(propagate_pose(pose, field)?)
        }
        None => None,
    };
    let propagated_next = match next {
        Some(pose) => {
            let field = f_next_to_k.ok_or_else(|| {
                Error::usage("next pose present but its flow field is missing")
            })?;
            Some(propagate_pose(pose, field)?)
        }
        None => None,
    };

    let alpha = p.alpha;
    let (w_prev, w_next, w_curr) = match (&propagated_prev, &propagated_next) {
        (Some(_), Some(_)) => (alpha, alpha, 1.0 - 2.0 * alpha),
        (Some(_), None) => (alpha, 0.0, 1.0 - alpha),
        (None, Some(_)) => (0.0, alpha, 1.0 - alpha),
        (None, None) => (0.0, 0.0, 1.0),
    };

    let keypoints = curr
        .keypoints
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let mut x = w_curr * k.x;
            let mut y = w_curr * k.y;
            if let Some(pp) = &propagated_prev {
                x += w_prev * pp.keypoints[i].x;
                y += w_prev * pp.keypoints[i].y;
            }
            if let Some(np) = &propagated_next {
                x += w_next * np.keypoints[i].x;
                y += w_next * np.keypoints[i].y;
            }
            Keypoint::new(x, y, k.conf)
        })
        .collect::<Result<Vec<_>>>()?;
    Pose::new(curr.frame, curr.track_id, keypoints)
}

/// Smooth every pose of a sequence against its raw (unsmoothed) neighbors.
///
/// Neighbors are the poses at frames k-1 and k+1 when present; first, last
/// and gap-adjacent frames fall back to the one-neighbor weighting. `flows`
/// must contain a `(from, to)` field for every adjacent present pair in both
/// directions.
pub fn smooth_sequence(
    seq: &PoseSequence,
    flows: &BTreeMap<(i64, i64), FlowField>,
    p: &PoseSmoothParams,
) -> Result<PoseSequence> {
    let mut out = BTreeMap::new();
    for (&frame, pose) in &seq.poses {
        let prev = seq.poses.get(&(frame - 1));
        let next = seq.poses.get(&(frame + 1));
        let f_prev = match prev {
            Some(_) => Some(flows.get(&(frame - 1, frame)).ok_or_else(|| {
                Error::usage(format!("missing flow field {} -> {}", frame - 1, frame))
            })?),
            None => None,
        };
        let f_next = match next {
            Some(_) => Some(flows.get(&(frame + 1, frame)).ok_or_else(|| {
                Error::usage(format!("missing flow field {} -> {}", frame + 1, frame))
            })?),
            None => None,
        };
        out.insert(frame, smooth_pose(prev, next, pose, f_prev, f_next, p)?);
    }
    PoseSequence::new(seq.track_id, out)
}

/// A pose tied to the tracked box it was estimated from.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcedPose {
    pub frame: i64,
    /// Index into the frame's tracker outputs.
    pub box_index: usize,
    pub pose: Pose,
}

/// Attach track identities to per-box poses and group them per track.
///
/// Every pose inherits the track id of the box it references; the result is
/// one [`PoseSequence`] per track id, ordered by id. The total pose count is
/// preserved.
pub fn transfer_ids(tracks: &[FrameResult], poses: &[SourcedPose]) -> Result<Vec<PoseSequence>> {
    let by_frame: BTreeMap<i64, &FrameResult> = tracks.iter().map(|r| (r.frame, r)).collect();
    let mut grouped: BTreeMap<i64, BTreeMap<i64, Pose>> = BTreeMap::new();
    for sp in poses {
        let frame_result = by_frame.get(&sp.frame).ok_or_else(|| {
            Error::validation(format!("pose references frame {} with no tracks", sp.frame))
        })?;
        let tracked = frame_result.outputs.get(sp.box_index).ok_or_else(|| {
            Error::validation(format!(
                "pose references box {} of frame {}, which has only {} boxes",
                sp.box_index,
                sp.frame,
                frame_result.outputs.len()
            ))
        })?;
        let mut pose = sp.pose.clone();
        pose.frame = sp.frame;
        pose.track_id = Some(tracked.track_id);
        if grouped
            .entry(tracked.track_id)
            .or_default()
            .insert(sp.frame, pose)
            .is_some()
        {
            return Err(Error::validation(format!(
                "two poses reference track {} at frame {}",
                tracked.track_id, sp.frame
            )));
        }
    }
    grouped
        .into_iter()
        .map(|(track_id, poses)| PoseSequence::new(track_id, poses))
        .collect()
}
