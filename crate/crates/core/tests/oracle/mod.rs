//! Brute-force and naive-arithmetic oracles, independent of the library's
//! implementation paths.

use crowdtrack::assignment::CostMatrix;
use crowdtrack::detpost::{iou, NmsParams};
use crowdtrack::types::{Detection, TrackedBox};

// ---------------------------------------------------------------------------
// Assignment: exhaustive permutation search
// ---------------------------------------------------------------------------

/// Score of an assignment under "forbidden pairs are excluded": primarily
/// the number of forbidden pairs used, then the real cost of allowed pairs.
fn assignment_score(costs: &CostMatrix, pairs: &[(usize, usize)]) -> (usize, f64) {
    let mut forbidden = 0usize;
    let mut total = 0.0;
    for &(r, c) in pairs {
        let v = costs.get(r, c);
        if v.is_finite() {
            total += v;
        } else {
            forbidden += 1;
        }
    }
    (forbidden, total)
}

fn enumerate_assignments(
    rows: usize,
    cols: usize,
    current: &mut Vec<(usize, usize)>,
    used_cols: &mut Vec<bool>,
    out: &mut Vec<Vec<(usize, usize)>>,
) {
    if current.len() == rows.min(cols) {
        out.push(current.clone());
        return;
    }
    if rows <= cols {
        let r = current.len();
        for c in 0..cols {
            if !used_cols[c] {
                used_cols[c] = true;
                current.push((r, c));
                enumerate_assignments(rows, cols, current, used_cols, out);
                current.pop();
                used_cols[c] = false;
            }
        }
    } else {
        let c = current.len();
        for r in 0..rows {
            if !used_cols[r] {
                used_cols[r] = true;
                current.push((r, c));
                enumerate_assignments(rows, cols, current, used_cols, out);
                current.pop();
                used_cols[r] = false;
            }
        }
    }
}

/// All min(n, m)-pair assignments, scored; returns the optimum with
/// forbidden pairs dropped, plus its score. Ties prefer the
/// lexicographically smallest pair list.
pub fn brute_force_assignment(costs: &CostMatrix) -> (Vec<(usize, usize)>, usize, f64) {
    let (rows, cols) = (costs.rows(), costs.cols());
    if rows == 0 || cols == 0 {
        return (Vec::new(), 0, 0.0);
    }
    let mut all = Vec::new();
    let mut used = vec![false; rows.max(cols)];
    enumerate_assignments(rows, cols, &mut Vec::new(), &mut used, &mut all);
    let mut best: Option<(Vec<(usize, usize)>, (usize, f64))> = None;
    for mut pairs in all {
        pairs.sort_unstable();
        let score = assignment_score(costs, &pairs);
        let better = match &best {
            None => true,
            Some((bp, bs)) => {
                score.0 < bs.0
                    || (score.0 == bs.0 && score.1 < bs.1 - 1e-12)
                    || (score.0 == bs.0 && (score.1 - bs.1).abs() <= 1e-12 && pairs < *bp)
            }
        };
        if better {
            best = Some((pairs, score));
        }
    }
    let (pairs, (forbidden, total)) = best.expect("at least one assignment exists");
    let kept: Vec<(usize, usize)> = pairs
        .into_iter()
        .filter(|&(r, c)| costs.get(r, c).is_finite())
        .collect();
    (kept, forbidden, total)
}

// ---------------------------------------------------------------------------
// Kalman: naive dense matrix arithmetic with Gauss-Jordan inversion
// ---------------------------------------------------------------------------

pub type Mat = Vec<Vec<f64>>;

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for l in 0..k {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

pub fn mat_add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn mat_sub(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x - y).collect())
        .collect()
}

pub fn mat_t(a: &Mat) -> Mat {
    let (n, m) = (a.len(), a[0].len());
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..n {
        for j in 0..m {
            out[j][i] = a[i][j];
        }
    }
    out
}

pub fn gauss_jordan_inverse(a: &Mat) -> Mat {
    let n = a.len();
    let mut aug: Mat = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().partial_cmp(&aug[j][col].abs()).unwrap())
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        assert!(p.abs() > 1e-12, "singular matrix in oracle");
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let factor = aug[row][col];
                for j in 0..2 * n {
                    aug[row][j] -= factor * aug[col][j];
                }
            }
        }
    }
    aug.into_iter().map(|r| r[n..].to_vec()).collect()
}

// the conventional height-scaled noise weights, written out numerically so
// this route shares no code with the implementation
const ORACLE_WP: f64 = 0.05;
const ORACLE_WV: f64 = 0.00625;

fn oracle_transition() -> Mat {
    let mut f = vec![vec![0.0; 8]; 8];
    for i in 0..8 {
        f[i][i] = 1.0;
    }
    for i in 0..4 {
        f[i][i + 4] = 1.0;
    }
    f
}

fn oracle_projection() -> Mat {
    let mut h = vec![vec![0.0; 8]; 4];
    for i in 0..4 {
        h[i][i] = 1.0;
    }
    h
}

fn diag(values: &[f64]) -> Mat {
    let n = values.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        out[i][i] = values[i];
    }
    out
}

pub fn oracle_predict(mean: &[f64; 8], cov: &Mat) -> ([f64; 8], Mat) {
    let f = oracle_transition();
    let h = mean[3];
    let q_std = [
        ORACLE_WP * h,
        ORACLE_WP * h,
        1e-2,
        ORACLE_WP * h,
        ORACLE_WV * h,
        ORACLE_WV * h,
        1e-5,
        ORACLE_WV * h,
    ];
    let q = diag(&q_std.map(|s| s * s));
    let mean_col: Mat = mean.iter().map(|&v| vec![v]).collect();
    let new_mean = mat_mul(&f, &mean_col);
    let new_cov = mat_add(&mat_mul(&mat_mul(&f, cov), &mat_t(&f)), &q);
    let mut out_mean = [0.0; 8];
    for i in 0..8 {
        out_mean[i] = new_mean[i][0];
    }
    (out_mean, new_cov)
}

fn oracle_project(mean: &[f64; 8], cov: &Mat) -> (Vec<f64>, Mat) {
    let h = oracle_projection();
    let height = mean[3];
    let r_std = [
        ORACLE_WP * height,
        ORACLE_WP * height,
        1e-1,
        ORACLE_WP * height,
    ];
    let r = diag(&r_std.map(|s| s * s));
    let mean_col: Mat = mean.iter().map(|&v| vec![v]).collect();
    let proj_mean = mat_mul(&h, &mean_col).iter().map(|r| r[0]).collect();
    let s = mat_add(&mat_mul(&mat_mul(&h, cov), &mat_t(&h)), &r);
    (proj_mean, s)
}

pub fn oracle_update(mean: &[f64; 8], cov: &Mat, z: &[f64; 4]) -> ([f64; 8], Mat) {
    let (proj_mean, s) = oracle_project(mean, cov);
    let s_inv = gauss_jordan_inverse(&s);
    let h = oracle_projection();
    let k = mat_mul(&mat_mul(cov, &mat_t(&h)), &s_inv);
    let y: Mat = (0..4).map(|i| vec![z[i] - proj_mean[i]]).collect();
    let correction = mat_mul(&k, &y);
    let mut out_mean = [0.0; 8];
    for i in 0..8 {
        out_mean[i] = mean[i] + correction[i][0];
    }
    let new_cov = mat_sub(cov, &mat_mul(&mat_mul(&k, &s), &mat_t(&k)));
    (out_mean, new_cov)
}

pub fn oracle_gating(mean: &[f64; 8], cov: &Mat, z: &[f64; 4]) -> f64 {
    let (proj_mean, s) = oracle_project(mean, cov);
    let s_inv = gauss_jordan_inverse(&s);
    let y: Vec<f64> = (0..4).map(|i| z[i] - proj_mean[i]).collect();
    let mut d2 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            d2 += y[i] * s_inv[i][j] * y[j];
        }
    }
    d2
}

// ---------------------------------------------------------------------------
// NMS: keep-rule evaluated by memoized recursion over priority order
// ---------------------------------------------------------------------------

/// A detection is kept iff its score clears the floor and no kept detection
/// of higher priority overlaps it past the threshold (same-proposal pairs
/// never suppress when `set_variant` is on).
pub fn keep_rule_nms(dets: &[Detection], p: &NmsParams, set_variant: bool) -> Vec<Detection> {
    fn priority(dets: &[Detection], i: usize) -> (f64, usize) {
        (-dets[i].score, i)
    }
    fn kept(
        dets: &[Detection],
        p: &NmsParams,
        set_variant: bool,
        i: usize,
        memo: &mut Vec<Option<bool>>,
    ) -> bool {
        if let Some(v) = memo[i] {
            return v;
        }
        let mut result = dets[i].score >= p.score_floor;
        if result {
            for j in 0..dets.len() {
                if j == i || priority(dets, j) >= priority(dets, i) {
                    continue;
                }
                let exempt = set_variant
                    && matches!(
                        (dets[j].proposal_id, dets[i].proposal_id),
                        (Some(a), Some(b)) if a == b
                    );
                if !exempt
                    && iou(&dets[j].bbox, &dets[i].bbox) > p.iou_threshold
                    && kept(dets, p, set_variant, j, memo)
                {
                    result = false;
                    break;
                }
            }
        }
        memo[i] = Some(result);
        result
    }

    let mut memo = vec![None; dets.len()];
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| priority(dets, a).partial_cmp(&priority(dets, b)).unwrap());
    order
        .into_iter()
        .filter(|&i| kept(dets, p, set_variant, i, &mut memo))
        .map(|i| dets[i].clone())
        .collect()
}

// ---------------------------------------------------------------------------
// Detection AP: threshold enumeration
// ---------------------------------------------------------------------------

/// Recompute the matching from scratch at every distinct score threshold and
/// integrate the precision envelope over the resulting (recall, precision)
/// points.
pub fn threshold_enumeration_ap(gt: &[TrackedBox], preds: &[Detection], iou_thr: f64) -> f64 {
    if gt.is_empty() {
        return f64::NAN;
    }
    let mut scores: Vec<f64> = preds.iter().map(|d| d.score).collect();
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
    scores.dedup();

    // greedy score-ordered matching over a subset of predictions
    let match_subset = |subset: &[usize]| -> (usize, usize) {
        let mut order = subset.to_vec();
        order.sort_by(|&a, &b| {
            preds[b]
                .score
                .partial_cmp(&preds[a].score)
                .unwrap()
                .then((preds[a].frame, a).cmp(&(preds[b].frame, b)))
        });
        let mut taken = vec![false; gt.len()];
        let mut tp = 0;
        let mut fp = 0;
        for &pi in &order {
            let mut best: Option<(f64, usize)> = None;
            for (gi, g) in gt.iter().enumerate() {
                if taken[gi] || g.frame != preds[pi].frame {
                    continue;
                }
                let ov = iou(&g.bbox, &preds[pi].bbox);
                if ov >= iou_thr && best.map_or(true, |(b, _)| ov > b) {
                    best = Some((ov, gi));
                }
            }
            match best {
                Some((_, gi)) => {
                    taken[gi] = true;
                    tp += 1;
                }
                None => fp += 1,
            }
        }
        (tp, fp)
    };

    let mut points: Vec<(f64, f64)> = Vec::new(); // (recall, precision)
    for &t in &scores {
        let subset: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].score >= t).collect();
        let (tp, fp) = match_subset(&subset);
        points.push((
            tp as f64 / gt.len() as f64,
            if tp + fp == 0 {
                1.0
            } else {
                tp as f64 / (tp + fp) as f64
            },
        ));
    }
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(recall, _)) in points.iter().enumerate() {
        let env = points[i..]
            .iter()
            .map(|&(_, p)| p)
            .fold(f64::NEG_INFINITY, f64::max);
        ap += (recall - prev_recall) * env;
        prev_recall = recall;
    }
    ap
}
