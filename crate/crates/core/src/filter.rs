//! Per-object particle filter over 3D position.
//!
//! Each tracked object carries a set of weighted position hypotheses.
//! Particles start from a normal distribution around the first observed
//! position with uniform weights. Prediction adds fresh zero-mean Gaussian
//! noise with the same per-axis scales (in camera mode the particles are
//! first carried through the inter-frame camera motion). Observation
//! weighting uses the inverse-distance kernel `w = 1 / (1 + d)` followed by
//! normalization; the state estimate is the weighted mean. Systematic
//! resampling triggers when the effective sample size falls below a
//! configured fraction of the particle count.
//!
//! All operations are pure given an explicit RNG handle, so identical seeds
//! reproduce bit-identical particle sets.

use crate::geometry::{Frame, Point3, Pose};
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("particle set is in frame {got}, expected {expected}")]
    FrameMismatch { expected: Frame, got: Frame },
    #[error("all raw weights are zero")]
    DegenerateWeights,
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
}

/// Particle filter parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Number of particles per tracked object.
    pub n_particles: usize,
    /// Per-axis standard deviations (meters) for both the initial spread
    /// and the per-step prediction noise.
    pub sigma0: [f64; 3],
    /// Frame the particles live in. In `map` mode camera motion leaves
    /// particles untouched (static-world model); in `camera` mode each
    /// prediction carries them through the inter-frame transform.
    pub prediction_frame: Frame,
    /// Resample when ESS < fraction * N. Zero disables resampling. The
    /// inverse-distance kernel produces near-uniform weights, so the ESS
    /// rarely dips much below N; the default of 1.0 resamples every update,
    /// which is what lets the cloud track the observations at all.
    pub resample_ess_fraction: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            n_particles: 100,
            sigma0: [0.05, 0.05, 0.05],
            prediction_frame: Frame::Map,
            resample_ess_fraction: 1.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.n_particles < 2 {
            return Err(FilterError::InvalidConfig(format!(
                "n_particles must be at least 2, got {}",
                self.n_particles
            )));
        }
        if self.sigma0.iter().any(|&s| !(s > 0.0)) {
            return Err(FilterError::InvalidConfig(format!("sigma0 components must be positive, got {:?}", self.sigma0)));
        }
        if !(0.0..=1.0).contains(&self.resample_ess_fraction) {
            return Err(FilterError::InvalidConfig(format!(
                "resample_ess_fraction must be in [0, 1], got {}",
                self.resample_ess_fraction
            )));
        }
        Ok(())
    }
}

/// Weighted 3D position hypotheses for one object.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    positions: Vec<Vector3<f64>>,
    weights: Vec<f64>,
    frame: Frame,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Draws particles i.i.d. from `Normal(mu0, diag(sigma0^2))` with uniform
/// weights `1/N`.
pub fn init<R: Rng>(mu0: &Point3, cfg: &FilterConfig, rng: &mut R) -> ParticleSet {
    let normals: Vec<Normal<f64>> =
        cfg.sigma0.iter().map(|&s| Normal::new(0.0, s).expect("validated sigma")).collect();
    let mu = mu0.vector();
    let positions = (0..cfg.n_particles)
        .map(|_| {
            Vector3::new(
                mu.x + normals[0].sample(rng),
                mu.y + normals[1].sample(rng),
                mu.z + normals[2].sample(rng),
            )
        })
        .collect();
    let w = 1.0 / cfg.n_particles as f64;
    ParticleSet { positions, weights: vec![w; cfg.n_particles], frame: mu0.frame }
}

/// Motion prediction. Map mode: positions get fresh zero-mean Gaussian
/// noise only. Camera mode: each particle is transformed by `delta_t`
/// first, then gets the same noise. Weights are unchanged.
pub fn predict<R: Rng>(
    ps: &ParticleSet,
    delta_t: &Pose,
    cfg: &FilterConfig,
    rng: &mut R,
) -> Result<ParticleSet, FilterError> {
    if ps.frame != cfg.prediction_frame {
        return Err(FilterError::FrameMismatch { expected: cfg.prediction_frame, got: ps.frame });
    }
    let normals: Vec<Normal<f64>> =
        cfg.sigma0.iter().map(|&s| Normal::new(0.0, s).expect("validated sigma")).collect();
    let positions = ps
        .positions
        .iter()
        .map(|p| {
            let moved = match cfg.prediction_frame {
                Frame::Map => *p,
                Frame::Camera => delta_t.transform_vector(p),
            };
            Vector3::new(
                moved.x + normals[0].sample(rng),
                moved.y + normals[1].sample(rng),
                moved.z + normals[2].sample(rng),
            )
        })
        .collect();
    Ok(ParticleSet { positions, weights: ps.weights.clone(), frame: ps.frame })
}

/// Observation update: `w_i = 1 / (1 + ||s_i - s_new||)`, then normalize.
pub fn update_weights(ps: &ParticleSet, s_new: &Point3) -> Result<ParticleSet, FilterError> {
    if s_new.frame != ps.frame {
        return Err(FilterError::FrameMismatch { expected: ps.frame, got: s_new.frame });
    }
    let obs = s_new.vector();
    let raw: Vec<f64> = ps.positions.iter().map(|p| 1.0 / (1.0 + (p - obs).norm())).collect();
    let sum: f64 = raw.iter().sum();
    // Unreachable with this kernel (every weight is positive); kept for
    // alternative kernels plugged in behind the same signature.
    if sum <= 0.0 {
        return Err(FilterError::DegenerateWeights);
    }
    let weights = raw.into_iter().map(|w| w / sum).collect();
    Ok(ParticleSet { positions: ps.positions.clone(), weights, frame: ps.frame })
}

/// Weighted mean of the particles.
pub fn estimate(ps: &ParticleSet) -> Point3 {
    let mut sum = Vector3::zeros();
    for (p, &w) in ps.positions.iter().zip(&ps.weights) {
        sum += w * p;
    }
    Point3::from_vector(sum, ps.frame)
}

/// Degeneracy diagnostic: `1 / sum(w_i^2)`.
pub fn effective_sample_size(ps: &ParticleSet) -> f64 {
    let sq: f64 = ps.weights.iter().map(|w| w * w).sum();
    1.0 / sq
}

/// Systematic resampling: N stratified draws against the cumulative weight
/// distribution. Output weights are uniform and output positions are a
/// multiset drawn from the input positions.
pub fn resample<R: Rng>(ps: &ParticleSet, rng: &mut R) -> ParticleSet {
    let n = ps.positions.len();
    let step = 1.0 / n as f64;
    let start = rng.random::<f64>() * step;
    let mut positions = Vec::with_capacity(n);
    let mut cumulative = ps.weights[0];
    let mut idx = 0;
    for k in 0..n {
        let target = start + k as f64 * step;
        while idx + 1 < n && cumulative < target {
            idx += 1;
            cumulative += ps.weights[idx];
        }
        positions.push(ps.positions[idx]);
    }
    ParticleSet { positions, weights: vec![step; n], frame: ps.frame }
}
