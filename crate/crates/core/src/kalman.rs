//! Constant-velocity Kalman filter over box measurements.
//!
//! State is the 8-vector (cx, cy, a, h, vcx, vcy, va, vh): box center, aspect
//! ratio w/h, height, and their velocities. Noise scales with the box height
//! through the two weights below, the conventional choice for this tracker
//! family.

use crate::error::{Error, Result};
use crate::types::BBox;
use nalgebra::{SMatrix, SVector};

pub type StateVector = SVector<f64, 8>;
pub type StateMatrix = SMatrix<f64, 8, 8>;
type MeasVector = SVector<f64, 4>;
type MeasMatrix = SMatrix<f64, 4, 4>;
type ProjMatrix = SMatrix<f64, 4, 8>;

/// Position standard deviation as a fraction of box height.
pub const STD_WEIGHT_POSITION: f64 = 1.0 / 20.0;
/// Velocity standard deviation as a fraction of box height.
pub const STD_WEIGHT_VELOCITY: f64 = 1.0 / 160.0;

/// Gaussian state estimate: mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub cov: StateMatrix,
}

impl KalmanState {
    /// Box implied by the state's position components.
    pub fn bbox(&self) -> Result<BBox> {
        BBox::from_xyah(self.mean[0], self.mean[1], self.mean[2], self.mean[3])
    }
}

fn transition_matrix() -> StateMatrix {
    let mut f = StateMatrix::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn projection_matrix() -> ProjMatrix {
    let mut h = ProjMatrix::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn diag8(stds: [f64; 8]) -> StateMatrix {
    StateMatrix::from_diagonal(&SVector::<f64, 8>::from_iterator(
        stds.iter().map(|s| s * s),
    ))
}

fn measurement_noise(height: f64) -> MeasMatrix {
    let stds = [
        STD_WEIGHT_POSITION * height,
        STD_WEIGHT_POSITION * height,
        1e-1,
        STD_WEIGHT_POSITION * height,
    ];
    MeasMatrix::from_diagonal(&MeasVector::from_iterator(stds.iter().map(|s| s * s)))
}

fn symmetrize(m: &mut StateMatrix) {
    let t = m.transpose();
    *m = (*m + t) * 0.5;
}

/// Initialize a state from an observed box: velocities zero, diagonal
/// covariance with position stds proportional to height.
pub fn initiate(bbox: &BBox) -> KalmanState {
    let [cx, cy, a, h] = bbox.to_xyah();
    let mean = StateVector::from_column_slice(&[cx, cy, a, h, 0.0, 0.0, 0.0, 0.0]);
    let cov = diag8([
        2.0 * STD_WEIGHT_POSITION * h,
        2.0 * STD_WEIGHT_POSITION * h,
        1e-2,
        2.0 * STD_WEIGHT_POSITION * h,
        10.0 * STD_WEIGHT_VELOCITY * h,
        10.0 * STD_WEIGHT_VELOCITY * h,
        1e-5,
        10.0 * STD_WEIGHT_VELOCITY * h,
    ]);
    KalmanState { mean, cov }
}

/// One constant-velocity step: position += velocity, covariance inflated by
/// the process noise.
pub fn predict(state: &KalmanState) -> KalmanState {
    let f = transition_matrix();
    let h = state.mean[3];
    let q = diag8([
        STD_WEIGHT_POSITION * h,
        STD_WEIGHT_POSITION * h,
        1e-2,
        STD_WEIGHT_POSITION * h,
        STD_WEIGHT_VELOCITY * h,
        STD_WEIGHT_VELOCITY * h,
        1e-5,
        STD_WEIGHT_VELOCITY * h,
    ]);
    let mean = f * state.mean;
    let mut cov = f * state.cov * f.transpose() + q;
    symmetrize(&mut cov);
    KalmanState { mean, cov }
}

/// Project the state onto measurement space: (H mean, H P Ht + R).
fn project(state: &KalmanState) -> (MeasVector, MeasMatrix) {
    let h = projection_matrix();
    let r = measurement_noise(state.mean[3]);
    (h * state.mean, h * state.cov * h.transpose() + r)
}

/// Standard Kalman correction against a measured box.
pub fn update(state: &KalmanState, measurement: &BBox) -> Result<KalmanState> {
    let (proj_mean, proj_cov) = project(state);
    let chol = proj_cov
        .cholesky()
        .ok_or_else(|| Error::numerical("innovation covariance is not positive definite"))?;
    let h = projection_matrix();
    // gain K = P Ht S^-1, computed as solving S Kt = H Pt
    let kt = chol.solve(&(h * state.cov.transpose()));
    let gain = kt.transpose();
    let z = MeasVector::from_column_slice(&measurement.to_xyah());
    let innovation = z - proj_mean;
    let mean = state.mean + gain * innovation;
    let mut cov = state.cov - gain * proj_cov * gain.transpose();
    symmetrize(&mut cov);
    if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite state after update"));
    }
    Ok(KalmanState { mean, cov })
}

/// Squared Mahalanobis distance of a measured box under the projected state
/// distribution.
pub fn gating_distance(state: &KalmanState, measurement: &BBox) -> Result<f64> {
    let (proj_mean, proj_cov) = project(state);
    let chol = proj_cov
        .cholesky()
        .ok_or_else(|| Error::numerical("projected covariance is not positive definite"))?;
    let y = MeasVector::from_column_slice(&measurement.to_xyah()) - proj_mean;
    let solved = chol.solve(&y);
    let d2 = y.dot(&solved);
    if !d2.is_finite() {
        return Err(Error::numerical("non-finite gating distance"));
    }
    Ok(d2.max(0.0))
}
