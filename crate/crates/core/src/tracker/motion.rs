//! Sigma-point predict/correct over a constant-velocity box state.
//!
//! The state is `[left, top, width, height, v_left, v_top, v_width, v_height]`.
//! Prediction draws the symmetric sigma set `{μ, μ ± β·colᵢ(√(T·P))}` with
//! `T = 2r + 1`, pushes every point through the transition and recombines them
//! with the mean and covariance weights. Correction is the linear-Gaussian
//! update on the four observed coordinates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::BBox;

pub const STATE_DIM: usize = 8;
pub const OBS_DIM: usize = 4;

const JITTER: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum NumericError {
    #[error("covariance is not positive semi-definite (min eigenvalue {0})")]
    NotPsd(f64),
    #[error("innovation covariance is singular")]
    Singular,
    #[error("invalid sigma parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaParams {
    /// β: multiplier on the square-root columns.
    pub spread: f64,
    /// r: the sigma set is scaled by `T = 2r + 1`.
    pub half_width: usize,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

impl SigmaParams {
    pub fn new(spread: f64, half_width: usize, mean_weights: Vec<f64>, cov_weights: Vec<f64>) -> Result<Self, NumericError> {
        let p = Self { spread, half_width, mean_weights, cov_weights };
        p.validate()?;
        Ok(p)
    }

    /// Weights that reproduce the input mean and covariance exactly for a
    /// `dim`-dimensional state, with `r = dim` and the given spread:
    /// `w₀ = 1 − dim/(β²T)`, `wᵢ = 1/(2β²T)`.
    pub fn standard(dim: usize, spread: f64) -> Self {
        let t = (2 * dim + 1) as f64;
        let wi = 1.0 / (2.0 * spread * spread * t);
        let w0 = 1.0 - dim as f64 / (spread * spread * t);
        let mut w = vec![wi; 2 * dim + 1];
        w[0] = w0;
        Self { spread, half_width: dim, mean_weights: w.clone(), cov_weights: w }
    }

    pub fn window(&self) -> usize {
        2 * self.half_width + 1
    }

    fn validate(&self) -> Result<(), NumericError> {
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(NumericError::Params(format!("spread must be positive, got {}", self.spread)));
        }
        if self.mean_weights.len() != self.cov_weights.len() {
            return Err(NumericError::Params("mean and covariance weights differ in length".into()));
        }
        let total: f64 = self.mean_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(NumericError::Params(format!("mean weights sum to {total}, expected 1")));
        }
        Ok(())
    }
}

impl Default for SigmaParams {
    fn default() -> Self {
        Self::standard(STATE_DIM, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Frames since birth.
    pub age: u32,
    /// Consecutive unmatched frames.
    pub misses: u32,
}

impl TrackState {
    /// State at rest on `bbox` with independent position and velocity variances.
    pub fn from_box(bbox: &BBox, position_var: f64, velocity_var: f64) -> Self {
        let mut mean = DVector::zeros(STATE_DIM);
        for (i, v) in bbox.to_array().into_iter().enumerate() {
            mean[i] = v;
        }
        let mut cov = DMatrix::zeros(STATE_DIM, STATE_DIM);
        for i in 0..OBS_DIM {
            cov[(i, i)] = position_var;
            cov[(i + OBS_DIM, i + OBS_DIM)] = velocity_var;
        }
        Self { mean, covariance: cov, age: 0, misses: 0 }
    }

    /// Observed part of the mean as a box (size clamped at zero).
    pub fn bbox(&self) -> BBox {
        BBox::new(self.mean[0], self.mean[1], self.mean[2].max(0.0), self.mean[3].max(0.0))
    }

    pub fn observed_trace(&self) -> f64 {
        (0..OBS_DIM.min(self.mean.len())).map(|i| self.covariance[(i, i)]).sum()
    }
}

/// `S` with `S·Sᵀ = P` for a symmetric PSD `P`; tiny negative eigenvalues are clipped.
pub fn psd_sqrt(p: &DMatrix<f64>) -> Result<DMatrix<f64>, NumericError> {
    let sym = (p + p.transpose()) * 0.5;
    let scale = sym.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() || min < -1e-9 * scale {
        return Err(NumericError::NotPsd(min));
    }
    let mut s = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let root = lambda.max(0.0).sqrt();
        s.column_mut(j).scale_mut(root);
    }
    Ok(s)
}

/// Sigma points ordered `[μ, μ + β·s₁, …, μ + β·sₙ, μ − β·s₁, …, μ − β·sₙ]`
/// where `sᵢ` are the columns of `√(T·P)`.
pub fn sigma_points(mean: &DVector<f64>, cov: &DMatrix<f64>, params: &SigmaParams) -> Result<Vec<DVector<f64>>, NumericError> {
    params.validate()?;
    let n = mean.len();
    if params.mean_weights.len() != 2 * n + 1 {
        return Err(NumericError::Params(format!(
            "{} weights for a {}-dimensional state, expected {}",
            params.mean_weights.len(),
            n,
            2 * n + 1
        )));
    }
    let root = psd_sqrt(&(cov * params.window() as f64))?;
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(mean.clone());
    for j in 0..n {
        points.push(mean + root.column(j) * params.spread);
    }
    for j in 0..n {
        points.push(mean - root.column(j) * params.spread);
    }
    Ok(points)
}

/// Weighted mean and covariance of transformed sigma points.
pub fn recombine(points: &[DVector<f64>], params: &SigmaParams) -> (DVector<f64>, DMatrix<f64>) {
    let n = points[0].len();
    // Σwᵢpᵢ written around the centre point; identical for Σw = 1 and exact
    // when every point coincides.
    let mut mean = points[0].clone();
    for (p, w) in points.iter().zip(&params.mean_weights).skip(1) {
        mean += (p - &points[0]) * *w;
    }
    let mut cov = DMatrix::zeros(n, n);
    for (p, w) in points.iter().zip(&params.cov_weights) {
        let d = p - &mean;
        cov += &d * d.transpose() * *w;
    }
    (mean, cov)
}

/// Constant-velocity transition: each position component advances by its velocity.
pub fn constant_velocity(x: &DVector<f64>) -> DVector<f64> {
    let half = x.len() / 2;
    let mut out = x.clone();
    for i in 0..half {
        out[i] += x[i + half];
    }
    out
}

/// One prediction step. Fails only if the covariance is not PSD.
pub fn predict(state: &TrackState, params: &SigmaParams, process_noise: &DMatrix<f64>) -> Result<TrackState, NumericError> {
    let points = sigma_points(&state.mean, &state.covariance, params)?;
    let moved: Vec<DVector<f64>> = points.iter().map(constant_velocity).collect();
    let (mean, cov) = recombine(&moved, params);
    let cov = cov + process_noise;
    Ok(TrackState { mean, covariance: (&cov + cov.transpose()) * 0.5, age: state.age + 1, misses: state.misses })
}

/// [`predict`] with one jitter retry (`P + 1e-6·I`).
pub fn predict_repaired(state: &TrackState, params: &SigmaParams, process_noise: &DMatrix<f64>) -> Result<TrackState, NumericError> {
    predict(state, params, process_noise).or_else(|_| {
        let n = state.covariance.nrows();
        let jittered = TrackState { covariance: &state.covariance + DMatrix::identity(n, n) * JITTER, ..state.clone() };
        predict(&jittered, params, process_noise)
    })
}

fn observation_matrix(n: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(OBS_DIM, n);
    for i in 0..OBS_DIM {
        h[(i, i)] = 1.0;
    }
    h
}

/// Measurement update with `z = H·x + v`, `v ~ N(0, R)`, `H = [I₄ 0]`.
/// A singular innovation covariance is retried once with `1e-6·I` added.
pub fn correct(state: &TrackState, measurement: &BBox, measurement_noise: &DMatrix<f64>) -> Result<TrackState, NumericError> {
    let n = state.mean.len();
    let h = observation_matrix(n);
    let z = DVector::from_column_slice(&measurement.to_array());
    let innovation = z - &h * &state.mean;
    let s = &h * &state.covariance * h.transpose() + measurement_noise;
    let s_inv = s
        .clone()
        .cholesky()
        .or_else(|| (s + DMatrix::identity(OBS_DIM, OBS_DIM) * JITTER).cholesky())
        .ok_or(NumericError::Singular)?
        .inverse();
    let gain = &state.covariance * h.transpose() * s_inv;
    let mean = &state.mean + &gain * innovation;
    let i_kh = DMatrix::identity(n, n) - &gain * &h;
    let cov = &i_kh * &state.covariance * i_kh.transpose() + &gain * measurement_noise * gain.transpose();
    Ok(TrackState { mean, covariance: (&cov + cov.transpose()) * 0.5, age: state.age, misses: state.misses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zero_cov_state(velocity: [f64; 4]) -> TrackState {
        let mut s = TrackState::from_box(&BBox::new(10.0, 20.0, 30.0, 40.0), 0.0, 0.0);
        for (i, v) in velocity.into_iter().enumerate() {
            s.mean[OBS_DIM + i] = v;
        }
        s
    }

    #[test]
    fn standard_weights_sum_to_one() {
        let p = SigmaParams::standard(8, 1.0);
        assert_eq!(p.window(), 17);
        assert!((p.mean_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(SigmaParams::new(1.0, 1, vec![0.5, 0.2, 0.2], vec![0.5, 0.2, 0.2]).is_err());
        assert!(SigmaParams::new(0.0, 1, vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3]).is_err());
    }

    #[test]
    fn zero_covariance_moves_exactly_by_velocity() {
        let q = DMatrix::identity(8, 8) * 0.01;
        let s = predict(&zero_cov_state([2.0, 0.0, 0.0, 0.0]), &SigmaParams::default(), &q).unwrap();
        assert_eq!(s.bbox(), BBox::new(12.0, 20.0, 30.0, 40.0));
        assert!((&s.covariance - &q).abs().max() < 1e-15);
    }

    #[test]
    fn zero_velocity_keeps_position() {
        let mut s = TrackState::from_box(&BBox::new(1.0, 2.0, 3.0, 4.0), 5.0, 7.0);
        s.covariance[(0, 4)] = 1.0;
        s.covariance[(4, 0)] = 1.0;
        let p = predict(&s, &SigmaParams::default(), &DMatrix::zeros(8, 8)).unwrap();
        for i in 0..4 {
            assert!((p.mean[i] - s.mean[i]).abs() < 1e-9);
        }
        // Linear transition: exact covariance is A P Aᵀ.
        let mut a = DMatrix::<f64>::identity(8, 8);
        for i in 0..4 {
            a[(i, i + 4)] = 1.0;
        }
        let expected = &a * &s.covariance * a.transpose();
        assert!((&p.covariance - expected).abs().max() < 1e-9);
    }

    #[test]
    fn scalar_sigma_points_by_hand() {
        let params = SigmaParams::new(1.0, 1, vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3]).unwrap();
        let x = 4.0;
        let pts = sigma_points(&DVector::from_element(1, x), &DMatrix::from_element(1, 1, 1.0), &params).unwrap();
        let r3 = 3f64.sqrt();
        assert!((pts[0][0] - x).abs() < 1e-12);
        assert!((pts[1][0] - (x + r3)).abs() < 1e-12);
        assert!((pts[2][0] - (x - r3)).abs() < 1e-12);
        let (mean, _) = recombine(&pts, &params);
        assert!((mean[0] - x).abs() < 1e-12);
    }

    #[test]
    fn non_psd_covariance_is_an_error() {
        let mut s = zero_cov_state([0.0; 4]);
        s.covariance[(0, 0)] = -1.0;
        let q = DMatrix::zeros(8, 8);
        assert!(matches!(predict(&s, &SigmaParams::default(), &q), Err(NumericError::NotPsd(_))));
        assert!(predict_repaired(&s, &SigmaParams::default(), &q).is_err());
    }

    #[test]
    fn scalar_fusion_by_hand() {
        let mut s = TrackState::from_box(&BBox::new(0.0, 0.0, 0.0, 0.0), 1.0, 1.0);
        s.mean[1] = 0.0;
        let post = correct(&s, &BBox::new(2.0, 0.0, 0.0, 0.0), &DMatrix::identity(4, 4)).unwrap();
        assert!((post.mean[0] - 1.0).abs() < 1e-12);
        assert!((post.covariance[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn measurement_noise_limits() {
        let s = TrackState::from_box(&BBox::new(0.0, 0.0, 10.0, 10.0), 4.0, 1.0);
        let z = BBox::new(3.0, -2.0, 12.0, 9.0);
        let vague = correct(&s, &z, &(DMatrix::identity(4, 4) * 1e12)).unwrap();
        assert!((&vague.mean - &s.mean).abs().max() < 1e-9);
        assert!((&vague.covariance - &s.covariance).abs().max() < 1e-9);
        let exact = correct(&s, &z, &DMatrix::zeros(4, 4)).unwrap();
        assert!((exact.bbox().left - 3.0).abs() < 1e-6);
        assert!((exact.bbox().top + 2.0).abs() < 1e-6);
        assert!((exact.bbox().width - 12.0).abs() < 1e-6);
    }

    fn arb_state() -> impl Strategy<Value = TrackState> {
        (prop::collection::vec(-5.0f64..5.0, 64), prop::collection::vec(-100.0f64..100.0, 8)).prop_map(|(l, m)| {
            let l = DMatrix::from_vec(8, 8, l);
            let cov = &l * l.transpose() + DMatrix::identity(8, 8) * 0.1;
            TrackState { mean: DVector::from_vec(m), covariance: cov, age: 0, misses: 0 }
        })
    }

    proptest! {
        #[test]
        fn correct_never_grows_observed_trace(state in arb_state(), r in 0.01f64..100.0, z in prop::collection::vec(-100.0f64..100.0, 4)) {
            let post = correct(&state, &BBox::new(z[0], z[1], z[2], z[3]), &(DMatrix::identity(4, 4) * r)).unwrap();
            prop_assert!(post.observed_trace() <= state.observed_trace() + 1e-9);
            prop_assert!((&post.covariance - post.covariance.transpose()).abs().max() < 1e-9);
        }

        #[test]
        fn predict_keeps_covariance_symmetric_psd(state in arb_state()) {
            let q = DMatrix::identity(8, 8) * 0.01;
            let p = predict(&state, &SigmaParams::default(), &q).unwrap();
            prop_assert!((&p.covariance - p.covariance.transpose()).abs().max() < 1e-9);
            prop_assert!(p.covariance.diagonal().iter().all(|d| *d >= 0.0));
        }
    }
}
