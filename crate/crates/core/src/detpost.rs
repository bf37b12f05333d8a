//! Detection post-processing: IoU, NMS, Set-NMS, two-model fusion, and
//! optical-flow detection smoothing.

use crate::error::{Error, Result};
use crate::flow::propagate_points;
use crate::types::{BBox, Detection, FlowField, TrackedBox};

/// Greedy-NMS parameters. Boxes below `score_floor` are dropped up front.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsParams {
    pub iou_threshold: f64,
    pub score_floor: f64,
}

impl Default for NmsParams {
    fn default() -> Self {
        NmsParams {
            iou_threshold: 0.5,
            score_floor: 0.05,
        }
    }
}

impl NmsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::validation(format!(
                "iou_threshold {} outside (0, 1)",
                self.iou_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.score_floor) {
            return Err(Error::validation(format!(
                "score_floor {} outside [0, 1]",
                self.score_floor
            )));
        }
        Ok(())
    }
}

/// Two-model fusion: boxes matched across models are merged with these
/// weights; the weights must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    pub weight_a: f64,
    pub weight_b: f64,
    pub match_iou: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            weight_a: 0.5,
            weight_b: 0.5,
            match_iou: 0.5,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if self.weight_a < 0.0 || self.weight_b < 0.0 {
            return Err(Error::validation("fusion weights must be nonnegative"));
        }
        if (self.weight_a + self.weight_b - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "fusion weights must sum to 1, got {} + {}",
                self.weight_a, self.weight_b
            )));
        }
        if !(self.match_iou > 0.0 && self.match_iou < 1.0) {
            return Err(Error::validation(format!(
                "match_iou {} outside (0, 1)",
                self.match_iou
            )));
        }
        Ok(())
    }
}

/// Flow-based detection smoothing: the blended box is
/// `alpha * propagated_previous + (1 - alpha) * detected`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSmoothParams {
    pub alpha: f64,
    pub match_iou: f64,
}

impl Default for BoxSmoothParams {
    fn default() -> Self {
        BoxSmoothParams {
            alpha: 0.5,
            match_iou: 0.3,
        }
    }
}

impl BoxSmoothParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::validation(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(self.match_iou > 0.0 && self.match_iou < 1.0) {
            return Err(Error::validation(format!(
                "match_iou {} outside (0, 1)",
                self.match_iou
            )));
        }
        Ok(())
    }
}

/// Intersection over union of two boxes; 0 when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Score-descending order with ties broken by ascending input index.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    order
}

fn greedy_nms(dets: &[Detection], p: &NmsParams, skip_same_proposal: bool) -> Vec<Detection> {
    let mut kept: Vec<&Detection> = Vec::new();
    for &i in &score_order(dets) {
        let cand = &dets[i];
        if cand.score < p.score_floor {
            continue;
        }
        let suppressed = kept.iter().any(|k| {
            if skip_same_proposal {
                if let (Some(a), Some(b)) = (k.proposal_id, cand.proposal_id) {
                    if a == b {
                        return false;
                    }
                }
            }
            iou(&k.bbox, &cand.bbox) > p.iou_threshold
        });
        if !suppressed {
            kept.push(cand);
        }
    }
    kept.into_iter().cloned().collect()
}

/// Greedy non-maximum suppression over one frame's detections.
///
/// Output preserves score order (ties by input index).
pub fn nms(dets: &[Detection], p: &NmsParams) -> Vec<Detection> {
    greedy_nms(dets, p, false)
}

/// NMS that never suppresses a box by a kept box from the same proposal.
///
/// Detections without a proposal id behave as if each had a unique one, so
/// with all-distinct proposal ids this reduces exactly to [`nms`].
pub fn set_nms(dets: &[Detection], p: &NmsParams) -> Vec<Detection> {
    greedy_nms(dets, p, true)
}

/// Fuse two models' detections for one frame.
///
/// Cross-model pairs with IoU at or above `match_iou` are matched greedily by
/// descending IoU; each matched pair merges into a single detection with
/// weighted box corners and score. Unmatched detections pass through. Merged
/// pairs keep the higher-score side's embedding, proposal id and model tag.
pub fn fuse_detections(a: &[Detection], b: &[Detection], p: &FusionParams) -> Vec<Detection> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, da) in a.iter().enumerate() {
        for (j, db) in b.iter().enumerate() {
            let ov = iou(&da.bbox, &db.bbox);
            if ov >= p.match_iou {
                pairs.push((ov, i, j));
            }
        }
    }
    pairs.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .expect("IoU is finite")
            .then((x.1, x.2).cmp(&(y.1, y.2)))
    });

    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut merged: Vec<(usize, Detection)> = Vec::new();
    for &(_, i, j) in &pairs {
        if used_a[i] || used_b[j] {
            continue;
        }
        used_a[i] = true;
        used_b[j] = true;
        let (da, db) = (&a[i], &b[j]);
        let bbox = BBox {
            x1: p.weight_a * da.bbox.x1 + p.weight_b * db.bbox.x1,
            y1: p.weight_a * da.bbox.y1 + p.weight_b * db.bbox.y1,
            x2: p.weight_a * da.bbox.x2 + p.weight_b * db.bbox.x2,
            y2: p.weight_a * da.bbox.y2 + p.weight_b * db.bbox.y2,
        };
        let donor = if db.score > da.score { db } else { da };
        merged.push((
            i,
            Detection {
                frame: da.frame,
                bbox,
                score: p.weight_a * da.score + p.weight_b * db.score,
                proposal_id: donor.proposal_id,
                embedding: donor.embedding.clone(),
                model_id: donor.model_id,
            },
        ));
    }
    merged.sort_by_key(|&(i, _)| i);

    let mut out: Vec<Detection> = Vec::with_capacity(a.len() + b.len());
    let mut merged_iter = merged.into_iter().peekable();
    for (i, da) in a.iter().enumerate() {
        if used_a[i] {
            let (_, det) = merged_iter.next().expect("merged entry per used a-index");
            out.push(det);
        } else {
            out.push(da.clone());
        }
    }
    for (j, db) in b.iter().enumerate() {
        if !used_b[j] {
            out.push(db.clone());
        }
    }
    out
}

/// Blend each current detection with its flow-propagated previous box.
///
/// Current detections are matched to at most one previous box, greedily by
/// descending IoU with a floor of `match_iou`. For a matched pair, both
/// corners of the previous box are propagated through the flow field and the
/// output box is `alpha * propagated + (1 - alpha) * detected` per
/// coordinate. Unmatched detections pass through; scores never change.
pub fn smooth_boxes(
    prev: &[TrackedBox],
    curr: &[Detection],
    field: &FlowField,
    p: &BoxSmoothParams,
) -> Result<Vec<Detection>> {
    p.validate()?;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, pb) in prev.iter().enumerate() {
        for (j, cd) in curr.iter().enumerate() {
            let ov = iou(&pb.bbox, &cd.bbox);
            if ov >= p.match_iou {
                pairs.push((ov, i, j));
            }
        }
    }
    pairs.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .expect("IoU is finite")
            .then((x.1, x.2).cmp(&(y.1, y.2)))
    });

    let mut prev_used = vec![false; prev.len()];
    let mut match_of: Vec<Option<usize>> = vec![None; curr.len()];
    for &(_, i, j) in &pairs {
        if prev_used[i] || match_of[j].is_some() {
            continue;
        }
        prev_used[i] = true;
        match_of[j] = Some(i);
    }

    let mut out = Vec::with_capacity(curr.len());
    for (j, cd) in curr.iter().enumerate() {
        let Some(i) = match_of[j] else {
            out.push(cd.clone());
            continue;
        };
        let pb = &prev[i].bbox;
        let corners = propagate_points(&[(pb.x1, pb.y1), (pb.x2, pb.y2)], field)?;
        let predicted = [corners[0].0, corners[0].1, corners[1].0, corners[1].1];
        let detected = [cd.bbox.x1, cd.bbox.y1, cd.bbox.x2, cd.bbox.y2];
        let blend: Vec<f64> = predicted
            .iter()
            .zip(&detected)
            .map(|(&pr, &de)| p.alpha * pr + (1.0 - p.alpha) * de)
            .collect();
        let mut det = cd.clone();
        det.bbox = BBox::new(blend[0], blend[1], blend[2], blend[3])?;
        out.push(det);
    }
    Ok(out)
}
