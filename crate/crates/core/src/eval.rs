//! Evaluation metrics: detection AP, log-average miss rate, CLEAR-MOT, and
//! OKS-based pose AP.
//!
//! Two deliberately different matchers are used. Detection-style AP matches
//! predictions greedily in score order (the detection convention); CLEAR-MOT
//! matches optimally per frame with correspondence persistence (the tracking
//! convention).

use crate::assignment::{hungarian, CostMatrix, FORBIDDEN};
use crate::detpost::iou;
use crate::error::{Error, Result};
use crate::types::{Detection, Pose, TrackedBox};
use std::collections::BTreeMap;

/// Miss rates are clamped to this floor before the geometric mean, so a
/// perfect detector yields a finite log-average.
pub const MISS_RATE_FLOOR: f64 = 1e-5;

/// Detection evaluation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DetEvalParams {
    pub iou_threshold: f64,
    /// Reference FPPI points for the log-average miss rate, strictly
    /// increasing.
    pub fppi_points: Vec<f64>,
}

impl Default for DetEvalParams {
    fn default() -> Self {
        DetEvalParams {
            iou_threshold: 0.5,
            fppi_points: default_fppi_points(),
        }
    }
}

/// Nine log-spaced reference points spanning [0.01, 100].
pub fn default_fppi_points() -> Vec<f64> {
    (0..9).map(|k| 10f64.powf(-2.0 + k as f64 * 0.5)).collect()
}

impl DetEvalParams {
    pub fn validate(&self) -> Result<()> {
        if self.fppi_points.is_empty()
            || self.fppi_points.windows(2).any(|w| w[0] >= w[1])
            || self.fppi_points.iter().any(|&p| p <= 0.0)
        {
            return Err(Error::validation(
                "fppi_points must be positive and strictly increasing",
            ));
        }
        Ok(())
    }
}

/// CLEAR-MOT metric bundle.
///
/// `motp` is reported as the mean IoU distance (1 - IoU) over matched pairs,
/// in [0, 1] with 0 perfect; this is the one documented scale used
/// throughout. `mota` is a percentage and can be negative.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MotReport {
    pub mota: f64,
    pub motp: f64,
    pub fp: u64,
    pub fn_: u64,
    pub idsw: u64,
    pub gt_count: u64,
    pub match_count: u64,
    pub iou_distance_sum: f64,
}

impl MotReport {
    /// Recompute `mota`/`motp` from the raw counts (used after summing
    /// reports across sequences).
    pub fn finalize(&mut self) {
        self.mota = if self.gt_count == 0 {
            0.0
        } else {
            100.0 * (1.0 - (self.fp + self.fn_ + self.idsw) as f64 / self.gt_count as f64)
        };
        self.motp = if self.match_count == 0 {
            0.0
        } else {
            self.iou_distance_sum / self.match_count as f64
        };
    }
}

/// OKS evaluation parameters: keypoint count, per-keypoint constants, and
/// the OKS thresholds swept for the averaged AP.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEvalParams {
    pub k: usize,
    pub sigmas: Vec<f64>,
    pub thresholds: Vec<f64>,
}

impl PoseEvalParams {
    /// Uniform sigmas (0.079) and the 0.50..0.95 step 0.05 threshold sweep.
    pub fn uniform(k: usize) -> Self {
        PoseEvalParams {
            k,
            sigmas: vec![0.079; k],
            thresholds: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.sigmas.len() != self.k {
            return Err(Error::validation(format!(
                "need {} sigmas, got {}",
                self.k,
                self.sigmas.len()
            )));
        }
        if self.sigmas.iter().any(|&s| s <= 0.0) {
            return Err(Error::validation("sigmas must be positive"));
        }
        if self.thresholds.is_empty()
            || self.thresholds.iter().any(|&t| !(0.0 < t && t < 1.0))
        {
            return Err(Error::validation("thresholds must lie in (0, 1)"));
        }
        Ok(())
    }
}

impl Default for PoseEvalParams {
    fn default() -> Self {
        Self::uniform(14)
    }
}

// ---------------------------------------------------------------------------
// Detection AP
// ---------------------------------------------------------------------------

/// Generic scored instance for AP-style matching.
struct ScoredInstance {
    frame: i64,
    score: f64,
    index: usize,
}

/// Rank instances by score descending, ties by (frame, input index).
fn rank_order(items: &[ScoredInstance]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[b]
            .score
            .partial_cmp(&items[a].score)
            .expect("scores are finite")
            .then((items[a].frame, items[a].index).cmp(&(items[b].frame, items[b].index)))
    });
    order
}

/// Greedy score-ordered matching; `similarity(pred_idx, gt_idx)` must return
/// a value in [0, 1] or NaN for cross-frame pairs. Returns per-rank TP flags
/// (and the matched gt index) in rank order.
fn greedy_match(
    preds: &[ScoredInstance],
    gt_frames: &BTreeMap<i64, Vec<usize>>,
    threshold: f64,
    similarity: impl Fn(usize, usize) -> f64,
) -> Vec<Option<usize>> {
    let order = rank_order(preds);
    let mut gt_taken: std::collections::HashSet<usize> = std::collections::HashSet::new();
    let mut matched = vec![None; preds.len()];
    for rank_pos in order.iter().copied() {
        let pred = &preds[rank_pos];
        let Some(frame_gts) = gt_frames.get(&pred.frame) else {
            continue;
        };
        let mut best: Option<(f64, usize)> = None;
        for &g in frame_gts {
            if gt_taken.contains(&g) {
                continue;
            }
            let s = similarity(rank_pos, g);
            if s >= threshold {
                let better = match best {
                    None => true,
                    Some((bs, _)) => s > bs,
                };
                if better {
                    best = Some((s, g));
                }
            }
        }
        if let Some((_, g)) = best {
            gt_taken.insert(g);
            matched[rank_pos] = Some(g);
        }
    }
    matched
}

/// Exact area under the precision-recall curve with the precision envelope
/// (all-point interpolation). `tp_mass` is the per-rank matched ground-truth
/// weight (1.0 for a plain TP), `total_mass` the recall denominator.
fn envelope_ap(ranked_tp_mass: &[f64], total_mass: f64) -> f64 {
    if ranked_tp_mass.is_empty() || total_mass <= 0.0 {
        return 0.0;
    }
    let n = ranked_tp_mass.len();
    let mut tp_cum = 0.0;
    let mut fp_cum = 0.0;
    let mut recalls = Vec::with_capacity(n);
    let mut precisions = Vec::with_capacity(n);
    for &mass in ranked_tp_mass {
        if mass > 0.0 {
            tp_cum += mass;
        } else {
            fp_cum += 1.0;
        }
        recalls.push(tp_cum / total_mass);
        precisions.push(tp_cum / (tp_cum + fp_cum));
    }
    // precision envelope: max precision at recall >= r
    let mut env = precisions.clone();
    for i in (0..n.saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..n {
        ap += (recalls[i] - prev_recall) * env[i];
        prev_recall = recalls[i];
    }
    ap
}

fn group_gt_by_frame(gt_frames: &[i64]) -> BTreeMap<i64, Vec<usize>> {
    let mut map: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &f) in gt_frames.iter().enumerate() {
        map.entry(f).or_default().push(i);
    }
    map
}

/// Average precision of box detections against ground truth.
///
/// Predictions are ranked by score (ties by frame then input index); each
/// prediction greedily takes the highest-IoU unmatched ground-truth box in
/// its frame at or above the IoU threshold. Result lies in [0, 1].
pub fn detection_ap(gt: &[TrackedBox], preds: &[Detection], p: &DetEvalParams) -> Result<f64> {
    p.validate()?;
    if gt.is_empty() {
        return Err(Error::validation(
            "detection AP is undefined with empty ground truth",
        ));
    }
    let gt_map = group_gt_by_frame(&gt.iter().map(|g| g.frame).collect::<Vec<_>>());
    let instances: Vec<ScoredInstance> = preds
        .iter()
        .enumerate()
        .map(|(i, d)| ScoredInstance {
            frame: d.frame,
            score: d.score,
            index: i,
        })
        .collect();
    let matched = greedy_match(&instances, &gt_map, p.iou_threshold, |pi, gi| {
        iou(&preds[pi].bbox, &gt[gi].bbox)
    });
    let order = rank_order(&instances);
    let ranked: Vec<f64> = order
        .iter()
        .map(|&i| if matched[i].is_some() { 1.0 } else { 0.0 })
        .collect();
    Ok(envelope_ap(&ranked, gt.len() as f64))
}

/// Precision-recall points after each ranked prediction, for curve dumps.
pub fn pr_curve(gt: &[TrackedBox], preds: &[Detection], p: &DetEvalParams) -> Result<Vec<(f64, f64)>> {
    p.validate()?;
    if gt.is_empty() {
        return Err(Error::validation("empty ground truth"));
    }
    let gt_map = group_gt_by_frame(&gt.iter().map(|g| g.frame).collect::<Vec<_>>());
    let instances: Vec<ScoredInstance> = preds
        .iter()
        .enumerate()
        .map(|(i, d)| ScoredInstance {
            frame: d.frame,
            score: d.score,
            index: i,
        })
        .collect();
    let matched = greedy_match(&instances, &gt_map, p.iou_threshold, |pi, gi| {
        iou(&preds[pi].bbox, &gt[gi].bbox)
    });
    let order = rank_order(&instances);
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut out = Vec::with_capacity(order.len());
    for &i in &order {
        if matched[i].is_some() {
            tp += 1;
        } else {
            fp += 1;
        }
        out.push((
            tp as f64 / gt.len() as f64,
            tp as f64 / (tp + fp) as f64,
        ));
    }
    Ok(out)
}

/// Miss-rate / FPPI points swept over score thresholds, starting from the
/// empty detection set (FPPI 0, miss rate 1).
///
/// `n_frames` is the number of images over which false positives are
/// averaged.
pub fn miss_rate_curve(
    gt: &[TrackedBox],
    preds: &[Detection],
    p: &DetEvalParams,
    n_frames: u64,
) -> Result<Vec<(f64, f64)>> {
    p.validate()?;
    if gt.is_empty() {
        return Err(Error::validation("miss rate is undefined with empty ground truth"));
    }
    if n_frames == 0 {
        return Err(Error::validation("frame count must be positive"));
    }
    let gt_map = group_gt_by_frame(&gt.iter().map(|g| g.frame).collect::<Vec<_>>());
    let instances: Vec<ScoredInstance> = preds
        .iter()
        .enumerate()
        .map(|(i, d)| ScoredInstance {
            frame: d.frame,
            score: d.score,
            index: i,
        })
        .collect();
    let matched = greedy_match(&instances, &gt_map, p.iou_threshold, |pi, gi| {
        iou(&preds[pi].bbox, &gt[gi].bbox)
    });
    let order = rank_order(&instances);

    let mut curve = vec![(0.0, 1.0)];
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut pos = 0;
    while pos < order.len() {
        // include the whole group of equal scores before emitting a point
        let score = preds[order[pos]].score;
        while pos < order.len() && preds[order[pos]].score == score {
            if matched[order[pos]].is_some() {
                tp += 1;
            } else {
                fp += 1;
            }
            pos += 1;
        }
        curve.push((
            fp as f64 / n_frames as f64,
            1.0 - tp as f64 / gt.len() as f64,
        ));
    }
    Ok(curve)
}

/// Log-average miss rate over the reference FPPI points, in percent.
///
/// For each reference point, the miss rate of the largest achieved FPPI not
/// exceeding it is used (the lowest miss rate at that FPPI); miss rates are
/// clamped to [`MISS_RATE_FLOOR`] before the geometric mean.
pub fn mmr(gt: &[TrackedBox], preds: &[Detection], p: &DetEvalParams, n_frames: u64) -> Result<f64> {
    let curve = miss_rate_curve(gt, preds, p, n_frames)?;
    let mut log_sum = 0.0;
    for &point in &p.fppi_points {
        let reachable = curve.iter().filter(|&&(f, _)| f <= point);
        let best_fppi = reachable
            .clone()
            .map(|&(f, _)| f)
            .fold(f64::NEG_INFINITY, f64::max);
        let miss = if best_fppi.is_finite() {
            reachable
                .filter(|&&(f, _)| f == best_fppi)
                .map(|&(_, m)| m)
                .fold(f64::INFINITY, f64::min)
        } else {
            1.0
        };
        log_sum += miss.max(MISS_RATE_FLOOR).ln();
    }
    Ok((log_sum / p.fppi_points.len() as f64).exp() * 100.0)
}

// ---------------------------------------------------------------------------
// CLEAR-MOT
// ---------------------------------------------------------------------------

fn check_unique_frame_ids(items: &[TrackedBox], what: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for t in items {
        if !seen.insert((t.frame, t.track_id)) {
            return Err(Error::validation(format!(
                "{what} contains duplicate (frame, id) = ({}, {})",
                t.frame, t.track_id
            )));
        }
    }
    Ok(())
}

/// CLEAR-MOT protocol with correspondence persistence.
///
/// Per frame, correspondences from the previous frames are kept while their
/// IoU stays at or above the threshold; remaining pairs are matched optimally
/// on IoU distance. An ID switch is a matched ground-truth object whose
/// hypothesis id differs from its last known one.
pub fn mot_metrics(gt: &[TrackedBox], preds: &[TrackedBox], iou_threshold: f64) -> Result<MotReport> {
    if !(0.0 < iou_threshold && iou_threshold < 1.0) {
        return Err(Error::validation(format!(
            "iou threshold {iou_threshold} outside (0, 1)"
        )));
    }
    if gt.is_empty() {
        return Err(Error::validation("CLEAR-MOT needs nonempty ground truth"));
    }
    check_unique_frame_ids(gt, "ground truth")?;
    check_unique_frame_ids(preds, "hypotheses")?;

    let mut frames: BTreeMap<i64, (Vec<&TrackedBox>, Vec<&TrackedBox>)> = BTreeMap::new();
    for g in gt {
        frames.entry(g.frame).or_default().0.push(g);
    }
    for h in preds {
        frames.entry(h.frame).or_default().1.push(h);
    }

    let mut report = MotReport {
        gt_count: gt.len() as u64,
        ..MotReport::default()
    };
    // last known hypothesis id per ground-truth id; persists across gaps
    let mut last_match: BTreeMap<i64, i64> = BTreeMap::new();

    for (_, (mut gts, mut hyps)) in frames {
        gts.sort_by_key(|g| g.track_id);
        hyps.sort_by_key(|h| h.track_id);

        let mut gt_matched = vec![false; gts.len()];
        let mut hyp_matched = vec![false; hyps.len()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();

        // persist previous correspondences still valid at this threshold
        for (gi, g) in gts.iter().enumerate() {
            let Some(&want) = last_match.get(&g.track_id) else {
                continue;
            };
            let Some(hi) = hyps
                .iter()
                .position(|h| h.track_id == want)
                .filter(|&hi| !hyp_matched[hi])
            else {
                continue;
            };
            if iou(&g.bbox, &hyps[hi].bbox) >= iou_threshold {
                gt_matched[gi] = true;
                hyp_matched[hi] = true;
                pairs.push((gi, hi));
            }
        }

        // optimal matching for the rest
        let free_gt: Vec<usize> = (0..gts.len()).filter(|&i| !gt_matched[i]).collect();
        let free_hyp: Vec<usize> = (0..hyps.len()).filter(|&i| !hyp_matched[i]).collect();
        if !free_gt.is_empty() && !free_hyp.is_empty() {
            let cost = CostMatrix::from_fn(free_gt.len(), free_hyp.len(), |r, c| {
                let ov = iou(&gts[free_gt[r]].bbox, &hyps[free_hyp[c]].bbox);
                if ov < iou_threshold {
                    FORBIDDEN
                } else {
                    1.0 - ov
                }
            });
            for (r, c) in hungarian(&cost) {
                gt_matched[free_gt[r]] = true;
                hyp_matched[free_hyp[c]] = true;
                pairs.push((free_gt[r], free_hyp[c]));
            }
        }

        for (gi, hi) in pairs {
            let g = gts[gi];
            let h = hyps[hi];
            report.match_count += 1;
            report.iou_distance_sum += 1.0 - iou(&g.bbox, &h.bbox);
            if let Some(&prev) = last_match.get(&g.track_id) {
                if prev != h.track_id {
                    report.idsw += 1;
                }
            }
            last_match.insert(g.track_id, h.track_id);
        }
        report.fp += hyp_matched.iter().filter(|&&m| !m).count() as u64;
        report.fn_ += gt_matched.iter().filter(|&&m| !m).count() as u64;
    }

    report.finalize();
    Ok(report)
}

// ---------------------------------------------------------------------------
// OKS and pose AP
// ---------------------------------------------------------------------------

/// Per-keypoint Gaussian similarity, averaged over labeled (conf > 0)
/// ground-truth keypoints. `scale_area` normalizes squared distances.
pub fn oks(gt: &Pose, pred: &Pose, scale_area: f64, p: &PoseEvalParams) -> Result<f64> {
    p.validate()?;
    if gt.k() != p.k || pred.k() != p.k {
        return Err(Error::validation(format!(
            "keypoint count mismatch: gt {}, pred {}, params {}",
            gt.k(),
            pred.k(),
            p.k
        )));
    }
    if scale_area <= 0.0 {
        return Err(Error::validation("scale_area must be positive"));
    }
    oks_similarity(gt, pred, scale_area, p)
}

/// OKS with the zero-area limit: a degenerate scale turns each keypoint term
/// into an exact-hit indicator.
fn oks_similarity(gt: &Pose, pred: &Pose, scale_area: f64, p: &PoseEvalParams) -> Result<f64> {
    let mut sum = 0.0;
    let mut labeled = 0usize;
    for (i, (g, q)) in gt.keypoints.iter().zip(&pred.keypoints).enumerate() {
        if g.conf <= 0.0 {
            continue;
        }
        labeled += 1;
        let d2 = (g.x - q.x).powi(2) + (g.y - q.y).powi(2);
        sum += if scale_area > 0.0 {
            (-d2 / (2.0 * scale_area * p.sigmas[i] * p.sigmas[i])).exp()
        } else if d2 == 0.0 {
            1.0
        } else {
            0.0
        };
    }
    if labeled == 0 {
        return Err(Error::validation("no labeled ground-truth keypoints"));
    }
    Ok(sum / labeled as f64)
}

/// Area of the axis-aligned bounding box of a pose's keypoints.
pub fn keypoint_bbox_area(pose: &Pose) -> f64 {
    let xs: Vec<f64> = pose.keypoints.iter().map(|k| k.x).collect();
    let ys: Vec<f64> = pose.keypoints.iter().map(|k| k.y).collect();
    let w = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        - xs.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let h = ys.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        - ys.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    w * h
}

/// OKS-based average precision, reported in percent.
///
/// Returns `(ap_avg, ap_50, ap_75)` where `ap_avg` averages over
/// `p.thresholds` and the other two use OKS thresholds 0.50 and 0.75.
/// Prediction scores are mean keypoint confidences; each ground-truth pose
/// is normalized by the area of its keypoint bounding box.
///
/// `gt_weights`, when given, assigns a per-instance weight to each
/// ground-truth pose (parallel slice); matched predictions contribute their
/// ground truth's weight to the precision/recall masses while false
/// positives count 1. Uniform weights reproduce the standard metric.
pub fn pose_ap(
    gt: &[Pose],
    preds: &[Pose],
    p: &PoseEvalParams,
    gt_weights: Option<&[f64]>,
) -> Result<(f64, f64, f64)> {
    p.validate()?;
    if gt.is_empty() {
        return Err(Error::validation("pose AP is undefined with empty ground truth"));
    }
    if let Some(w) = gt_weights {
        if w.len() != gt.len() {
            return Err(Error::validation("gt_weights length must match gt"));
        }
        if w.iter().any(|&x| x < 0.0) {
            return Err(Error::validation("gt_weights must be nonnegative"));
        }
    }
    for pose in gt.iter().chain(preds) {
        if pose.k() != p.k {
            return Err(Error::validation(format!(
                "pose with {} keypoints does not match configured K = {}",
                pose.k(),
                p.k
            )));
        }
    }

    let gt_map = group_gt_by_frame(&gt.iter().map(|g| g.frame).collect::<Vec<_>>());
    let instances: Vec<ScoredInstance> = preds
        .iter()
        .enumerate()
        .map(|(i, pose)| ScoredInstance {
            frame: pose.frame,
            score: pose.mean_conf(),
            index: i,
        })
        .collect();
    let areas: Vec<f64> = gt.iter().map(keypoint_bbox_area).collect();
    let weight = |g: usize| gt_weights.map_or(1.0, |w| w[g]);
    let total_mass: f64 = (0..gt.len()).map(weight).sum();

    let order = rank_order(&instances);
    let ap_at = |threshold: f64| -> Result<f64> {
        let matched = greedy_match(&instances, &gt_map, threshold, |pi, gi| {
            oks_similarity(&gt[gi], &preds[pi], areas[gi], p).unwrap_or(0.0)
        });
        let ranked: Vec<f64> = order
            .iter()
            .map(|&i| matched[i].map_or(0.0, weight))
            .collect();
        Ok(envelope_ap(&ranked, total_mass))
    };

    let mut sum = 0.0;
    for &t in &p.thresholds {
        sum += ap_at(t)?;
    }
    let ap_avg = sum / p.thresholds.len() as f64;
    let ap_50 = ap_at(0.50)?;
    let ap_75 = ap_at(0.75)?;
    Ok((ap_avg * 100.0, ap_50 * 100.0, ap_75 * 100.0))
}
