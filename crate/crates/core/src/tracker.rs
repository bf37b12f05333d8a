//! Identity association: appearance-gallery matching cascade with
//! Mahalanobis gating, IoU fallback, track lifecycle, ReID feature
//! combination, and the tracking parameter grid search.

use crate::assignment::{hungarian, CostMatrix, FORBIDDEN};
use crate::detpost::iou;
use crate::error::{Error, Result};
use crate::eval::{mot_metrics, MotReport};
use crate::kalman::{self, KalmanState};
use crate::types::{Detection, TrackedBox};
use rayon::prelude::*;
use std::collections::VecDeque;
use std::fmt::Write as _;

/// Tracking parameters. The five association parameters default to the
/// shipped preset (0.3, 256, 30, 3, 0.7); the gating threshold defaults to
/// the 95th percentile of a chi-square with 4 degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerParams {
    /// Appearance gate: cosine distances above this are excluded.
    pub max_cos_dis: f64,
    /// Maximum number of appearance embeddings kept per track.
    pub nn_budget: usize,
    /// Frames a track survives unmatched before deletion.
    pub max_age: i64,
    /// Consecutive hits required to confirm a tentative track.
    pub n_init: u32,
    /// IoU-distance gate for the fallback matching stage.
    pub max_iou_dis: f64,
    /// Chi-square bound on the squared Mahalanobis gating distance (4 dof).
    pub gating_threshold: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        TrackerParams {
            max_cos_dis: 0.3,
            nn_budget: 256,
            max_age: 30,
            n_init: 3,
            max_iou_dis: 0.7,
            gating_threshold: 9.4877,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_cos_dis > 0.0 && self.max_cos_dis <= 1.0) {
            return Err(Error::validation(format!(
                "max_cos_dis {} outside (0, 1]",
                self.max_cos_dis
            )));
        }
        if self.nn_budget == 0 {
            return Err(Error::validation("nn_budget must be positive"));
        }
        if self.max_age < 1 {
            return Err(Error::validation("max_age must be positive"));
        }
        if self.n_init == 0 {
            return Err(Error::validation("n_init must be positive"));
        }
        if !(self.max_iou_dis > 0.0 && self.max_iou_dis <= 1.0) {
            return Err(Error::validation(format!(
                "max_iou_dis {} outside (0, 1]",
                self.max_iou_dis
            )));
        }
        if self.gating_threshold <= 0.0 {
            return Err(Error::validation("gating_threshold must be positive"));
        }
        Ok(())
    }

    /// Parse the flat `key = value` tracker configuration format.
    /// Unknown keys are an error.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut params = TrackerParams::default();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no + 1, "expected 'key = value'"))?;
            let (key, value) = (key.trim(), value.trim());
            let real = || -> Result<f64> {
                value
                    .parse::<f64>()
                    .map_err(|e| Error::parse(line_no + 1, format!("bad value '{value}': {e}")))
            };
            let integer = || -> Result<i64> {
                value
                    .parse::<i64>()
                    .map_err(|e| Error::parse(line_no + 1, format!("bad value '{value}': {e}")))
            };
            match key {
                "max_cos_dis" => params.max_cos_dis = real()?,
                "nn_budget" => params.nn_budget = integer()? as usize,
                "max_age" => params.max_age = integer()?,
                "n_init" => params.n_init = integer()? as u32,
                "max_iou_dis" => params.max_iou_dis = real()?,
                "gating_threshold" => params.gating_threshold = real()?,
                other => {
                    return Err(Error::validation(format!(
                        "unknown tracker config key '{other}'"
                    )))
                }
            }
        }
        params.validate()?;
        Ok(params)
    }

    pub fn to_config_string(&self) -> String {
        format!(
            "max_cos_dis = {}\nnn_budget = {}\nmax_age = {}\nn_init = {}\nmax_iou_dis = {}\ngating_threshold = {}\n",
            self.max_cos_dis,
            self.nn_budget,
            self.max_age,
            self.n_init,
            self.max_iou_dis,
            self.gating_threshold
        )
    }
}

// ---------------------------------------------------------------------------
// ReID feature combination
// ---------------------------------------------------------------------------

fn normalize(v: Vec<f64>) -> Result<Vec<f32>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::validation(
            "combined feature vector has (near-)zero norm",
        ));
    }
    Ok(v.into_iter().map(|x| (x / norm) as f32).collect())
}

/// Average an embedding with the one extracted from the horizontally flipped
/// crop, renormalized to unit length.
pub fn combine_flip(e: &[f32], e_flip: &[f32]) -> Result<Vec<f32>> {
    if e.len() != e_flip.len() {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {}",
            e.len(),
            e_flip.len()
        )));
    }
    normalize(
        e.iter()
            .zip(e_flip)
            .map(|(&a, &b)| 0.5 * a as f64 + 0.5 * b as f64)
            .collect(),
    )
}

/// Weighted combination of embeddings from models trained at different
/// scales, renormalized to unit length. Weights must sum to 1.
pub fn combine_scales(embeddings: &[Vec<f32>], weights: &[f64]) -> Result<Vec<f32>> {
    if embeddings.is_empty() {
        return Err(Error::validation("no embeddings to combine"));
    }
    if embeddings.len() != weights.len() {
        return Err(Error::validation(format!(
            "{} embeddings but {} weights",
            embeddings.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::validation("weights must be nonnegative"));
    }
    if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::validation("weights must sum to 1"));
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::validation("embedding dimensions differ"));
    }
    let mut acc = vec![0.0f64; dim];
    for (e, &w) in embeddings.iter().zip(weights) {
        for (a, &x) in acc.iter_mut().zip(e) {
            *a += w * x as f64;
        }
    }
    normalize(acc)
}

/// Smallest cosine distance between the query and any gallery embedding.
pub fn cosine_gallery_distance(gallery: &[Vec<f32>], query: &[f32]) -> Result<f64> {
    if gallery.is_empty() {
        return Err(Error::usage("appearance gallery is empty"));
    }
    let mut best = f64::INFINITY;
    for g in gallery {
        let dot: f64 = g.iter().zip(query).map(|(&a, &b)| a as f64 * b as f64).sum();
        best = best.min(1.0 - dot);
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Track lifecycle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    Tentative,
    Confirmed,
    Deleted,
}

/// One identity's evolving state.
#[derive(Debug, Clone)]
pub struct Track {
    pub track_id: i64,
    pub state: TrackState,
    pub kalman: KalmanState,
    gallery: VecDeque<Vec<f32>>,
    pub hits: u32,
    pub time_since_update: i64,
}

impl Track {
    fn new(track_id: i64, kalman: KalmanState, embedding: Vec<f32>) -> Self {
        let mut gallery = VecDeque::new();
        gallery.push_back(embedding);
        Track {
            track_id,
            state: TrackState::Tentative,
            kalman,
            gallery,
            hits: 1,
            time_since_update: 0,
        }
    }

    pub fn gallery(&self) -> &VecDeque<Vec<f32>> {
        &self.gallery
    }

    /// Smallest cosine distance between the query and any gallery entry.
    fn appearance_distance(&self, query: &[f32]) -> f64 {
        let mut best = f64::INFINITY;
        for g in &self.gallery {
            let dot: f64 = g.iter().zip(query).map(|(&a, &b)| a as f64 * b as f64).sum();
            best = best.min(1.0 - dot);
        }
        best
    }

    fn push_embedding(&mut self, embedding: Vec<f32>, nn_budget: usize) {
        self.gallery.push_back(embedding);
        while self.gallery.len() > nn_budget {
            self.gallery.pop_front();
        }
    }
}

/// Tracker output for one frame: the confirmed tracks updated this frame,
/// with boxes taken from the posterior Kalman state.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame: i64,
    pub outputs: Vec<TrackedBox>,
}

/// Multi-object tracker; feed frames in strictly increasing order via
/// [`Tracker::step`].
#[derive(Debug, Clone)]
pub struct Tracker {
    params: TrackerParams,
    tracks: Vec<Track>,
    next_id: i64,
    last_frame: Option<i64>,
    embedding_dim: Option<usize>,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Result<Self> {
        params.validate()?;
        Ok(Tracker {
            params,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
            embedding_dim: None,
        })
    }

    pub fn params(&self) -> &TrackerParams {
        &self.params
    }

    /// Live (non-deleted) tracks, for inspection.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Advance one frame: predict, associate, update lifecycle, and return
    /// the confirmed tracks matched this frame.
    pub fn step(&mut self, frame: i64, detections: &[Detection]) -> Result<FrameResult> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(Error::usage(format!(
                    "frames must be strictly increasing: got {frame} after {last}"
                )));
            }
        }
        self.last_frame = Some(frame);
        for det in detections {
            let Some(emb) = det.embedding.as_deref() else {
                return Err(Error::usage(
                    "every detection fed to the tracker must carry an embedding",
                ));
            };
            match self.embedding_dim {
                None => self.embedding_dim = Some(emb.len()),
                Some(d) if d != emb.len() => {
                    return Err(Error::usage(format!(
                        "embedding dimension changed from {d} to {}",
                        emb.len()
                    )))
                }
                _ => {}
            }
        }

        // 1. predict every live track
        for track in &mut self.tracks {
            track.kalman = kalman::predict(&track.kalman);
        }

        let mut det_free: Vec<usize> = (0..detections.len()).collect();
        let mut matches: Vec<(usize, usize)> = Vec::new(); // (track idx, det idx)

        // 2. matching cascade over confirmed tracks, most recently updated first
        for age in 0..=self.params.max_age {
            if det_free.is_empty() {
                break;
            }
            let level_tracks: Vec<usize> = self
                .tracks
                .iter()
                .enumerate()
                .filter(|(_, t)| t.state == TrackState::Confirmed && t.time_since_update == age)
                .map(|(i, _)| i)
                .collect();
            if level_tracks.is_empty() {
                continue;
            }
            let cost = CostMatrix::from_fn(level_tracks.len(), det_free.len(), |r, c| {
                let track = &self.tracks[level_tracks[r]];
                let det = &detections[det_free[c]];
                let emb = det.embedding.as_deref().expect("checked above");
                let cos = track.appearance_distance(emb);
                if cos > self.params.max_cos_dis {
                    return FORBIDDEN;
                }
                match kalman::gating_distance(&track.kalman, &det.bbox) {
                    Ok(d2) if d2 <= self.params.gating_threshold => cos,
                    _ => FORBIDDEN,
                }
            });
            for (r, c) in hungarian(&cost) {
                matches.push((level_tracks[r], det_free[c]));
            }
            let taken: Vec<usize> = matches.iter().map(|&(_, d)| d).collect();
            det_free.retain(|d| !taken.contains(d));
        }

        // 3. IoU fallback over all remaining tracks, tentative included
        let matched_tracks: Vec<usize> = matches.iter().map(|&(t, _)| t).collect();
        let iou_tracks: Vec<usize> = self
            .tracks
            .iter()
            .enumerate()
            .filter(|(i, t)| t.state != TrackState::Deleted && !matched_tracks.contains(i))
            .map(|(i, _)| i)
            .collect();
        if !iou_tracks.is_empty() && !det_free.is_empty() {
            let cost = CostMatrix::from_fn(iou_tracks.len(), det_free.len(), |r, c| {
                let track = &self.tracks[iou_tracks[r]];
                let det = &detections[det_free[c]];
                let Ok(track_box) = track.kalman.bbox() else {
                    return FORBIDDEN;
                };
                let dis = 1.0 - iou(&track_box, &det.bbox);
                if dis > self.params.max_iou_dis {
                    FORBIDDEN
                } else {
                    dis
                }
            });
            for (r, c) in hungarian(&cost) {
                matches.push((iou_tracks[r], det_free[c]));
            }
            let taken: Vec<usize> = matches.iter().map(|&(_, d)| d).collect();
            det_free.retain(|d| !taken.contains(d));
        }

        // 4. update matched tracks
        let mut matched_this_frame: Vec<usize> = Vec::new();
        let mut result_rows: Vec<(i64, usize)> = Vec::new();
        for &(ti, di) in &matches {
            let det = &detections[di];
            let track = &mut self.tracks[ti];
            track.kalman = kalman::update(&track.kalman, &det.bbox)?;
            track.push_embedding(
                det.embedding.clone().expect("checked above"),
                self.params.nn_budget,
            );
            track.hits += 1;
            track.time_since_update = 0;
            if track.state == TrackState::Tentative && track.hits >= self.params.n_init {
                track.state = TrackState::Confirmed;
            }
            matched_this_frame.push(ti);
            if track.state == TrackState::Confirmed {
                result_rows.push((track.track_id, di));
            }
        }

        // 5. age unmatched tracks and delete expired ones
        for (i, track) in self.tracks.iter_mut().enumerate() {
            if matched_this_frame.contains(&i) || track.state == TrackState::Deleted {
                continue;
            }
            track.time_since_update += 1;
            if track.state == TrackState::Tentative || track.time_since_update > self.params.max_age
            {
                track.state = TrackState::Deleted;
            }
        }
        self.tracks.retain(|t| t.state != TrackState::Deleted);

        // 6. initiate new tentative tracks from leftover detections
        for &di in &det_free {
            let det = &detections[di];
            self.tracks.push(Track::new(
                self.next_id,
                kalman::initiate(&det.bbox),
                det.embedding.clone().expect("checked above"),
            ));
            self.next_id += 1;
        }

        // 7. emit refined boxes of confirmed tracks matched this frame
        let mut outputs = Vec::with_capacity(result_rows.len());
        result_rows.sort_unstable_by_key(|&(id, _)| id);
        for (id, di) in result_rows {
            let track = self
                .tracks
                .iter()
                .find(|t| t.track_id == id)
                .expect("matched track is live");
            outputs.push(TrackedBox::new(
                frame,
                id,
                track.kalman.bbox()?,
                detections[di].score,
            )?);
        }
        Ok(FrameResult { frame, outputs })
    }

    /// Run over a detection list spanning a contiguous frame range; frames
    /// without detections still age the tracks.
    pub fn run(&mut self, detections: &[Detection]) -> Result<Vec<FrameResult>> {
        if detections.is_empty() {
            return Ok(Vec::new());
        }
        let lo = detections.iter().map(|d| d.frame).min().unwrap();
        let hi = detections.iter().map(|d| d.frame).max().unwrap();
        let mut results = Vec::with_capacity((hi - lo + 1) as usize);
        for frame in lo..=hi {
            let frame_dets: Vec<Detection> = detections
                .iter()
                .filter(|d| d.frame == frame)
                .cloned()
                .collect();
            results.push(self.step(frame, &frame_dets)?);
        }
        Ok(results)
    }
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

/// One tracking sequence: its detections (with embeddings) and ground truth.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<TrackedBox>,
}

/// Value lists for the five searched parameters. Axes left at their default
/// hold the base value fixed.
#[derive(Debug, Clone)]
pub struct ParamGrid {
    pub max_cos_dis: Vec<f64>,
    pub nn_budget: Vec<usize>,
    pub max_age: Vec<i64>,
    pub n_init: Vec<u32>,
    pub max_iou_dis: Vec<f64>,
}

impl ParamGrid {
    /// Grid with every axis pinned to the base parameters (a singleton grid).
    pub fn singleton(base: &TrackerParams) -> Self {
        ParamGrid {
            max_cos_dis: vec![base.max_cos_dis],
            nn_budget: vec![base.nn_budget],
            max_age: vec![base.max_age],
            n_init: vec![base.n_init],
            max_iou_dis: vec![base.max_iou_dis],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_cos_dis.is_empty()
            || self.nn_budget.is_empty()
            || self.max_age.is_empty()
            || self.n_init.is_empty()
            || self.max_iou_dis.is_empty()
        {
            return Err(Error::usage("grid axes must not be empty"));
        }
        Ok(())
    }

    /// Cartesian product in fixed axis order:
    /// max_cos_dis, nn_budget, max_age, n_init, max_iou_dis.
    fn points(&self, base: &TrackerParams) -> Vec<TrackerParams> {
        let mut out = Vec::new();
        for &mcd in &self.max_cos_dis {
            for &nb in &self.nn_budget {
                for &ma in &self.max_age {
                    for &ni in &self.n_init {
                        for &mid in &self.max_iou_dis {
                            out.push(TrackerParams {
                                max_cos_dis: mcd,
                                nn_budget: nb,
                                max_age: ma,
                                n_init: ni,
                                max_iou_dis: mid,
                                gating_threshold: base.gating_threshold,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Tracking score of one grid point, aggregated over all sequences.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub params: TrackerParams,
    pub report: MotReport,
}

/// Run the full tracker at every grid point, score MOTA against ground
/// truth, and return the best parameters plus the full table.
///
/// Sequences are evaluated with CLEAR-MOT counts summed before computing the
/// combined MOTA. Ties keep the earliest point in grid-iteration order.
pub fn grid_search(
    sequences: &[Sequence],
    grid: &ParamGrid,
    base: &TrackerParams,
    eval_iou_threshold: f64,
) -> Result<(TrackerParams, Vec<GridPoint>)> {
    grid.validate()?;
    if sequences.is_empty() {
        return Err(Error::usage("grid search needs at least one sequence"));
    }
    let points = grid.points(base);
    let table: Vec<GridPoint> = points
        .par_iter()
        .map(|params| -> Result<GridPoint> {
            let mut combined = MotReport::default();
            for seq in sequences {
                let mut tracker = Tracker::new(*params)?;
                let results = tracker.run(&seq.detections)?;
                let hyps: Vec<TrackedBox> =
                    results.into_iter().flat_map(|r| r.outputs).collect();
                let report = mot_metrics(&seq.ground_truth, &hyps, eval_iou_threshold)?;
                combined.fp += report.fp;
                combined.fn_ += report.fn_;
                combined.idsw += report.idsw;
                combined.gt_count += report.gt_count;
                combined.match_count += report.match_count;
                combined.iou_distance_sum += report.iou_distance_sum;
            }
            combined.finalize();
            Ok(GridPoint {
                params: *params,
                report: combined,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let best = table
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.report
                .mota
                .partial_cmp(&b.report.mota)
                .expect("MOTA is finite")
                .then(ib.cmp(ia)) // earlier point wins ties
        })
        .expect("grid has at least one point");
    Ok((best.1.params, table))
}

/// Render the grid-search table as aligned text.
pub fn format_grid_table(table: &[GridPoint]) -> String {
    let mut out = String::from(
        "max_cos_dis  nn_budget  max_age  n_init  max_iou_dis      MOTA      MOTP      FP      FN    IDSW\n",
    );
    for row in table {
        let p = &row.params;
        let r = &row.report;
        let _ = writeln!(
            out,
            "{:>11.3}  {:>9}  {:>7}  {:>6}  {:>11.3}  {:>8.3}  {:>8.4}  {:>6}  {:>6}  {:>6}",
            p.max_cos_dis, p.nn_budget, p.max_age, p.n_init, p.max_iou_dis, r.mota, r.motp, r.fp,
            r.fn_, r.idsw
        );
    }
    out
}
