//! Poses on a polar grid around the object, trajectory interpolation and the
//! synthetic observation encoder.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Proposal;

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Wraps an angle difference into `(-π, π]`.
pub fn wrap_signed(delta: f64) -> f64 {
    let w = wrap_angle(delta + PI) - PI;
    if w <= -PI {
        PI
    } else {
        w
    }
}

/// Agent position around the object: bearing `theta` and distance `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub theta: f64,
    pub r: f64,
}

impl Pose {
    /// Builds a pose with `theta` wrapped into `[0, 2π)`.
    pub fn new(theta: f64, r: f64) -> Self {
        Self {
            theta: wrap_angle(theta),
            r,
        }
    }
}

/// Quantized angle × radius grid of viewpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseGrid {
    pub n_angles: usize,
    pub n_radii: usize,
    pub r_min: f64,
    pub r_max: f64,
}

/// Index pair `(angle_idx, radius_idx)` of a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridIndex {
    pub angle: usize,
    pub radius: usize,
}

impl GridIndex {
    pub fn new(angle: usize, radius: usize) -> Self {
        Self { angle, radius }
    }
}

impl PoseGrid {
    pub fn new(n_angles: usize, n_radii: usize, r_min: f64, r_max: f64) -> Result<Self> {
        if n_angles < 2 {
            return Err(Error::InvalidDimension(format!(
                "n_angles must be at least 2, got {n_angles}"
            )));
        }
        if n_radii < 1 {
            return Err(Error::InvalidDimension("n_radii must be at least 1".into()));
        }
        if !(r_min > 0.0) || !r_min.is_finite() {
            return Err(Error::InvalidDimension(format!(
                "r_min must be positive, got {r_min}"
            )));
        }
        if !(r_min <= r_max) || !r_max.is_finite() {
            return Err(Error::InvalidDimension(format!(
                "r_min ({r_min}) must not exceed r_max ({r_max})"
            )));
        }
        Ok(Self {
            n_angles,
            n_radii,
            r_min,
            r_max,
        })
    }

    /// The 76 × 65 grid reaching out to 60 m used by the default experiments.
    pub fn standard() -> Self {
        Self::new(76, 65, 1.0, 60.0).expect("standard grid is valid")
    }

    pub fn len(&self) -> usize {
        self.n_angles * self.n_radii
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn angle_step(&self) -> f64 {
        TAU / self.n_angles as f64
    }

    pub fn radius_step(&self) -> f64 {
        if self.n_radii > 1 {
            (self.r_max - self.r_min) / (self.n_radii - 1) as f64
        } else {
            0.0
        }
    }

    /// Radial span `r_max - r_min`, the bound on any radial label.
    pub fn radial_span(&self) -> f64 {
        self.r_max - self.r_min
    }

    pub fn angle_of(&self, angle_idx: usize) -> f64 {
        angle_idx as f64 * self.angle_step()
    }

    pub fn radius_of(&self, radius_idx: usize) -> f64 {
        if radius_idx + 1 == self.n_radii {
            self.r_max
        } else {
            self.r_min + radius_idx as f64 * self.radius_step()
        }
    }

    pub fn pose_at(&self, angle_idx: usize, radius_idx: usize) -> Result<Pose> {
        if angle_idx >= self.n_angles || radius_idx >= self.n_radii {
            return Err(Error::IndexOutOfRange {
                angle: angle_idx,
                radius: radius_idx,
                n_angles: self.n_angles,
                n_radii: self.n_radii,
            });
        }
        Ok(self.pose(GridIndex::new(angle_idx, radius_idx)))
    }

    /// Pose of an index known to be valid.
    pub(crate) fn pose(&self, idx: GridIndex) -> Pose {
        Pose {
            theta: self.angle_of(idx.angle),
            r: self.radius_of(idx.radius),
        }
    }

    /// Flat angle-major position of an index.
    pub fn flat(&self, idx: GridIndex) -> usize {
        idx.angle * self.n_radii + idx.radius
    }

    pub fn unflat(&self, flat: usize) -> GridIndex {
        GridIndex::new(flat / self.n_radii, flat % self.n_radii)
    }

    /// All indices in angle-major order.
    pub fn indices(&self) -> impl Iterator<Item = GridIndex> + '_ {
        (0..self.len()).map(move |f| self.unflat(f))
    }

    pub fn clamp_radius(&self, r: f64) -> f64 {
        r.clamp(self.r_min, self.r_max)
    }

    pub fn clamp(&self, pose: Pose) -> Pose {
        Pose::new(pose.theta, self.clamp_radius(pose.r))
    }

    /// Nearest grid point to an arbitrary pose (radius clamped first).
    pub fn snap(&self, pose: Pose) -> GridIndex {
        let p = self.clamp(pose);
        let a = (p.theta / self.angle_step()).round() as usize % self.n_angles;
        let j = if self.n_radii > 1 {
            (((p.r - self.r_min) / self.radius_step()).round() as usize).min(self.n_radii - 1)
        } else {
            0
        };
        GridIndex::new(a, j)
    }
}

/// Synthetic stand-in for a camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: Vec<f64>,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub grid: PoseGrid,
    pub obs_dim: usize,
    pub obs_noise_sigma: f64,
    pub encoder_seed: u64,
}

impl WorldConfig {
    pub const DEFAULT_OBS_DIM: usize = 32;

    pub fn new(grid: PoseGrid, obs_dim: usize, obs_noise_sigma: f64, encoder_seed: u64) -> Result<Self> {
        if obs_dim == 0 {
            return Err(Error::InvalidDimension("obs_dim must be positive".into()));
        }
        if !(obs_noise_sigma >= 0.0) || !obs_noise_sigma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "obs_noise_sigma must be a finite value >= 0, got {obs_noise_sigma}"
            )));
        }
        Ok(Self {
            grid,
            obs_dim,
            obs_noise_sigma,
            encoder_seed,
        })
    }

    pub fn encoder(&self) -> Encoder {
        Encoder::new(self.obs_dim, self.encoder_seed)
    }

    /// Observation at `pose`; see [`Encoder::encode`].
    pub fn observe(&self, pose: Pose, noise_seed: u64) -> Observation {
        self.encoder().encode(self, pose, noise_seed)
    }
}

/// Scale of the random projection frequencies.
const FREQUENCY_SCALE: f64 = 2.0;

/// Random-Fourier-feature encoder `cos(Ω·u + φ)` over
/// `u = [cos θ, sin θ, r / r_max]`.
///
/// Building an encoder redraws `Ω` and `φ` from the seed, so callers that
/// observe many poses should build it once.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    omega: Vec<[f64; 3]>,
    phase: Vec<f64>,
}

impl Encoder {
    pub fn new(obs_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut omega = Vec::with_capacity(obs_dim);
        let mut phase = Vec::with_capacity(obs_dim);
        for _ in 0..obs_dim {
            let row: [f64; 3] = std::array::from_fn(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                FREQUENCY_SCALE * z
            });
            omega.push(row);
            phase.push(rng.random_range(0.0..TAU));
        }
        Self { omega, phase }
    }

    pub fn dim(&self) -> usize {
        self.phase.len()
    }

    pub fn encode(&self, world: &WorldConfig, pose: Pose, noise_seed: u64) -> Observation {
        let pose = world.grid.clamp(pose);
        let u = [pose.theta.cos(), pose.theta.sin(), pose.r / world.grid.r_max];
        let mut features: Vec<f64> = self
            .omega
            .iter()
            .zip(&self.phase)
            .map(|(w, phi)| (w[0] * u[0] + w[1] * u[1] + w[2] * u[2] + phi).cos())
            .collect();
        if world.obs_noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            let noise = Normal::new(0.0, world.obs_noise_sigma).expect("sigma validated");
            for f in &mut features {
                *f += noise.sample(&mut rng);
            }
        }
        Observation { features }
    }
}

/// Waypoints from `start` along `proposal`, `n_intermediate + 1` of them at
/// fractions `k / (n_intermediate + 1)`. Angle and radius move together
/// (a spiral about the object); every waypoint is clamped to the grid.
pub fn trajectory(grid: &PoseGrid, start: Pose, proposal: Proposal, n_intermediate: usize) -> Vec<Pose> {
    let n = n_intermediate + 1;
    (1..=n)
        .map(|k| {
            let t = k as f64 / n as f64;
            let (theta, r) = if k == n {
                (start.theta + proposal.dtheta, start.r + proposal.dr)
            } else {
                (start.theta + t * proposal.dtheta, start.r + t * proposal.dr)
            };
            grid.clamp(Pose::new(theta, r))
        })
        .collect()
}
