//! Constant-velocity Kalman filter over `(cx, cy, w, h, vx, vy, vw, vh)` and
//! the windowed per-dimension NIS uncertainty used by the fusion network.

use std::collections::VecDeque;

use nalgebra::{SMatrix, SVector};

use crate::error::{domain, Error, Result};
use crate::geometry::BBox;

pub type StateVector = SVector<f64, 8>;
pub type StateCovariance = SMatrix<f64, 8, 8>;
type Measurement = SVector<f64, 4>;
type ObservationMatrix = SMatrix<f64, 4, 8>;

/// Default number of NIS entries kept for the uncertainty estimate.
pub const NIS_WINDOW: usize = 3;

/// Innovation covariances with a condition number above this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Noise standard deviations as fractions of the current box height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub q_pos: f64,
    pub q_vel: f64,
    pub r_pos: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            q_pos: 1.0 / 20.0,
            q_vel: 1.0 / 160.0,
            r_pos: 1.0 / 20.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.q_pos, self.q_vel, self.r_pos]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
        {
            Ok(())
        } else {
            domain(format!(
                "noise standard deviations must be positive: {self:?}"
            ))
        }
    }

    fn process_noise(&self, h: f64) -> StateCovariance {
        let p = (self.q_pos * h).powi(2);
        let v = (self.q_vel * h).powi(2);
        StateCovariance::from_diagonal(&StateVector::from([p, p, p, p, v, v, v, v]))
    }

    fn measurement_noise(&self, h: f64) -> SMatrix<f64, 4, 4> {
        let r = (self.r_pos * h).powi(2);
        SMatrix::<f64, 4, 4>::from_diagonal_element(r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateCovariance,
    /// Most recent per-dimension NIS vectors, oldest first.
    pub nis_history: VecDeque<[f64; 4]>,
    pub window: usize,
    /// Frames since initialization.
    pub age: u32,
}

/// Uncertainty vector plus whether it is the cold-start default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Uncertainty {
    pub sigma: [f64; 4],
    pub cold: bool,
}

fn transition() -> StateCovariance {
    let mut f = StateCovariance::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn observation() -> ObservationMatrix {
    let mut h = ObservationMatrix::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn symmetrize(p: &mut StateCovariance) {
    let t = p.transpose();
    *p = (*p + t) * 0.5;
}

impl KalmanState {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.mean[0], self.mean[1], self.mean[2], self.mean[3])
    }

    /// Drops the NIS window, used after long occlusions.
    pub fn reset_uncertainty(&mut self) {
        self.nis_history.clear();
    }
}

pub fn kf_init(z: &BBox, cfg: &NoiseConfig) -> Result<KalmanState> {
    kf_init_with_window(z, cfg, NIS_WINDOW)
}

pub fn kf_init_with_window(z: &BBox, cfg: &NoiseConfig, window: usize) -> Result<KalmanState> {
    if !(z.w > 0.0 && z.h > 0.0 && z.is_finite()) {
        return domain(format!("initial box must have positive size, got {z:?}"));
    }
    if window == 0 {
        return domain("NIS window must be positive");
    }
    let pos = (2.0 * cfg.r_pos * z.h).powi(2);
    let vel = (10.0 * cfg.r_pos * z.h).powi(2);
    Ok(KalmanState {
        mean: StateVector::from([z.cx, z.cy, z.w, z.h, 0.0, 0.0, 0.0, 0.0]),
        covariance: StateCovariance::from_diagonal(&StateVector::from([
            pos, pos, pos, pos, vel, vel, vel, vel,
        ])),
        nis_history: VecDeque::with_capacity(window),
        window,
        age: 0,
    })
}

/// Time update; returns the new state and its predicted box.
pub fn kf_predict(s: &KalmanState, cfg: &NoiseConfig) -> (KalmanState, BBox) {
    let f = transition();
    let mut next = s.clone();
    next.mean = f * s.mean;
    next.covariance = f * s.covariance * f.transpose() + cfg.process_noise(s.mean[3].abs());
    symmetrize(&mut next.covariance);
    next.age = s.age + 1;
    let b = next.bbox();
    (next, b)
}

/// Measurement update with `z`; appends the per-dimension NIS to the window.
pub fn kf_update(s: &KalmanState, z: &BBox, cfg: &NoiseConfig) -> Result<KalmanState> {
    let h = observation();
    let measurement = Measurement::from(z.to_array());
    let innovation = measurement - h * s.mean;
    let s_cov = h * s.covariance * h.transpose() + cfg.measurement_noise(s.mean[3].abs());

    let eig = s_cov.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || hi / lo > MAX_CONDITION || !hi.is_finite() {
        return Err(Error::Numerical(format!(
            "innovation covariance is singular (eigenvalues {lo:e}..{hi:e})"
        )));
    }
    let s_inv = s_cov
        .try_inverse()
        .ok_or_else(|| Error::Numerical("innovation covariance is not invertible".into()))?;
    let gain = s.covariance * h.transpose() * s_inv;

    let mut next = s.clone();
    next.mean = s.mean + gain * innovation;
    next.covariance = (StateCovariance::identity() - gain * h) * s.covariance;
    symmetrize(&mut next.covariance);

    let nis: [f64; 4] = std::array::from_fn(|i| innovation[i].powi(2) / s_cov[(i, i)]);
    next.nis_history.push_back(nis);
    while next.nis_history.len() > next.window {
        next.nis_history.pop_front();
    }
    Ok(next)
}

/// Per-dimension windowed NIS mean plus population standard deviation.
///
/// An empty window yields the neutral `(1, 1, 1, 1)` with `cold` set.
pub fn uncertainty_vector(s: &KalmanState) -> Uncertainty {
    let n = s.nis_history.len();
    if n == 0 {
        return Uncertainty {
            sigma: [1.0; 4],
            cold: true,
        };
    }
    let mut sigma = [0.0; 4];
    for (i, out) in sigma.iter_mut().enumerate() {
        let mean = s.nis_history.iter().map(|v| v[i]).sum::<f64>() / n as f64;
        let var = s
            .nis_history
            .iter()
            .map(|v| (v[i] - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        *out = mean + var.sqrt();
    }
    Uncertainty { sigma, cold: false }
}
