//! Dynamics and measurement models for the solver.

use std::sync::Arc;

use crate::error::{GbeesError, Result};
use crate::grid::MAX_DIM;

/// Drift and diffusion supplier for a dynamical system. Models are
/// immutable after construction and safe for concurrent reads.
pub trait DynamicsModel: Send + Sync {
    fn dim(&self) -> usize;

    /// Drift velocity f(x) at a phase-space point. Components beyond
    /// `dim()` are ignored.
    fn drift(&self, x: &[f64; MAX_DIM]) -> [f64; MAX_DIM];

    /// Diagonal of the spectral density Q of the state disturbances.
    /// Off-diagonal terms are not supported.
    fn diffusion_diag(&self) -> [f64; MAX_DIM] {
        [0.0; MAX_DIM]
    }
}

/// Solid-body rotation about the origin: u(x,y) = y, v(x,y) = -x.
#[derive(Clone, Copy, Debug, Default)]
pub struct RotationModel;

#[inline]
pub fn rotation_drift(x: &[f64; 2]) -> [f64; 2] {
    [x[1], -x[0]]
}

impl DynamicsModel for RotationModel {
    fn dim(&self) -> usize {
        2
    }

    fn drift(&self, x: &[f64; MAX_DIM]) -> [f64; MAX_DIM] {
        let v = rotation_drift(&[x[0], x[1]]);
        [v[0], v[1], 0.0]
    }
}

/// The three-state Lorenz system in the shifted form
/// f(x) = (sigma (x2 - x1), -x2 - x1 x3, -b x3 + x1 x2 - b r).
#[derive(Clone, Copy, Debug)]
pub struct LorenzModel {
    pub sigma: f64,
    pub b: f64,
    pub r: f64,
}

impl LorenzModel {
    /// The parameter set used throughout the experiments.
    pub fn standard() -> Self {
        LorenzModel {
            sigma: 4.0,
            b: 1.0,
            r: 48.0,
        }
    }
}

#[inline]
pub fn lorenz_drift(x: &[f64; 3], sigma: f64, b: f64, r: f64) -> [f64; 3] {
    [
        sigma * (x[1] - x[0]),
        -x[1] - x[0] * x[2],
        -b * x[2] + x[0] * x[1] - b * r,
    ]
}

impl DynamicsModel for LorenzModel {
    fn dim(&self) -> usize {
        3
    }

    fn drift(&self, x: &[f64; MAX_DIM]) -> [f64; MAX_DIM] {
        lorenz_drift(&[x[0], x[1], x[2]], self.sigma, self.b, self.r)
    }
}

/// Constant drift in `dim` dimensions, with optional diagonal diffusion.
/// Zero velocity gives a pure-diffusion (or frozen) model.
#[derive(Clone, Copy, Debug)]
pub struct ConstantModel {
    pub dim: usize,
    pub velocity: [f64; MAX_DIM],
    pub q_diag: [f64; MAX_DIM],
}

impl ConstantModel {
    pub fn new(dim: usize, velocity: &[f64]) -> Self {
        let mut v = [0.0; MAX_DIM];
        v[..velocity.len()].copy_from_slice(velocity);
        ConstantModel {
            dim,
            velocity: v,
            q_diag: [0.0; MAX_DIM],
        }
    }
}

impl DynamicsModel for ConstantModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, _x: &[f64; MAX_DIM]) -> [f64; MAX_DIM] {
        self.velocity
    }

    fn diffusion_diag(&self) -> [f64; MAX_DIM] {
        self.q_diag
    }
}

/// Observation operator h(x).
#[derive(Clone)]
pub enum ObservationMap {
    /// Observe the listed state components directly.
    Components(Vec<usize>),
    /// Arbitrary map, mainly for tests.
    Custom(Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>),
}

impl ObservationMap {
    pub fn observe(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ObservationMap::Components(cs) => cs.iter().map(|&c| x[c]).collect(),
            ObservationMap::Custom(f) => f(x),
        }
    }

    pub fn obs_dim(&self) -> Option<usize> {
        match self {
            ObservationMap::Components(cs) => Some(cs.len()),
            ObservationMap::Custom(_) => None,
        }
    }
}

/// Gaussian measurement likelihood, kept in log space. Additive
/// constants are dropped; they cancel in the Bayes normalization.
#[derive(Clone)]
pub struct GaussianMeasurementModel {
    observation: ObservationMap,
    noise_std: Vec<f64>,
}

impl GaussianMeasurementModel {
    pub fn new(observation: ObservationMap, noise_std: Vec<f64>) -> Result<Self> {
        if noise_std.is_empty() || noise_std.iter().any(|&s| !(s > 0.0)) {
            return Err(GbeesError::Config(
                "measurement noise std must be positive".into(),
            ));
        }
        if let Some(k) = observation.obs_dim() {
            if k != noise_std.len() {
                return Err(GbeesError::Config(
                    "noise std length must match observation dimension".into(),
                ));
            }
        }
        Ok(GaussianMeasurementModel {
            observation,
            noise_std,
        })
    }

    pub fn observation(&self) -> &ObservationMap {
        &self.observation
    }

    pub fn noise_std(&self) -> &[f64] {
        &self.noise_std
    }

    /// Unnormalized log likelihood: -sum_c (y_c - h_c(x))^2 / (2 std_c^2).
    pub fn log_likelihood(&self, y: &[f64], x: &[f64]) -> f64 {
        let h = self.observation.observe(x);
        debug_assert_eq!(h.len(), y.len());
        let mut ll = 0.0;
        for c in 0..y.len() {
            let r = y[c] - h[c];
            ll -= r * r / (2.0 * self.noise_std[c] * self.noise_std[c]);
        }
        ll
    }
}

pub fn gaussian_log_likelihood(model: &GaussianMeasurementModel, y: &[f64], x: &[f64]) -> f64 {
    model.log_likelihood(y, x)
}
