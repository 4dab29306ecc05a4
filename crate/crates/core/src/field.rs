//! Parametric detector-confidence manifolds over (angle, distance).
//!
//! `p(θ, r) = clamp01(bias + A(θ)·G(r))` where `A` is a sum of wrapped
//! Gaussian lobes in bearing and `G` a logistic falloff in distance.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::round_sig;
use crate::world::{wrap_angle, Pose, PoseGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngularLobe {
    pub mu: f64,
    pub sigma: f64,
    pub weight: f64,
}

impl AngularLobe {
    pub fn new(mu: f64, sigma: f64, weight: f64) -> Self {
        Self { mu, sigma, weight }
    }

    fn response(&self, theta: f64) -> f64 {
        let d = angular_distance(theta, self.mu);
        self.weight * (-d * d / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Unsigned wrapped angular distance in `[0, π]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    if d > PI {
        TAU - d
    } else {
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceField {
    pub lobes: Vec<AngularLobe>,
    /// Distance at which the radial term is 0.5.
    pub r_half: f64,
    pub r_slope: f64,
    pub bias: f64,
}

impl ConfidenceField {
    pub fn new(lobes: Vec<AngularLobe>, r_half: f64, r_slope: f64, bias: f64) -> Result<Self> {
        let field = Self {
            lobes,
            r_half,
            r_slope,
            bias,
        };
        field.validate()?;
        Ok(field)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lobes.is_empty() {
            return Err(Error::InvalidConfig("confidence field needs at least one lobe".into()));
        }
        for (k, lobe) in self.lobes.iter().enumerate() {
            if !(lobe.sigma > 0.0) {
                return Err(Error::InvalidConfig(format!("lobe {k}: sigma must be positive")));
            }
            if !(0.0..=1.0).contains(&lobe.weight) {
                return Err(Error::InvalidConfig(format!("lobe {k}: weight must lie in [0, 1]")));
            }
            if !lobe.mu.is_finite() {
                return Err(Error::InvalidConfig(format!("lobe {k}: mu must be finite")));
            }
        }
        if !(self.r_slope > 0.0) {
            return Err(Error::InvalidConfig("r_slope must be positive".into()));
        }
        if !self.r_half.is_finite() {
            return Err(Error::InvalidConfig("r_half must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.bias) {
            return Err(Error::InvalidConfig("bias must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn angular(&self, theta: f64) -> f64 {
        self.lobes.iter().map(|l| l.response(theta)).sum()
    }

    pub fn radial(&self, r: f64) -> f64 {
        1.0 / (1.0 + ((r - self.r_half) / self.r_slope).exp())
    }

    pub fn confidence(&self, pose: Pose) -> f64 {
        (self.bias + self.angular(pose.theta) * self.radial(pose.r)).clamp(0.0, 1.0)
    }

    /// Car-like manifold: strong broadside lobes, weaker end-on lobes, and a
    /// slow radial falloff.
    pub fn car() -> Self {
        let lobes = vec![
            AngularLobe::new(FRAC_PI_2, 0.30, 0.93),
            AngularLobe::new(3.0 * FRAC_PI_2, 0.30, 0.93),
            AngularLobe::new(0.0, 0.45, 0.83),
            AngularLobe::new(PI, 0.45, 0.83),
        ];
        Self::new(lobes, 40.0, 4.0, 0.04).expect("car preset is valid")
    }

    /// Person-like manifold: near-cylindrical symmetry and detection only at
    /// short range.
    pub fn person() -> Self {
        let lobes = vec![
            AngularLobe::new(0.0, 1.0, 0.65),
            AngularLobe::new(PI, 1.0, 0.65),
            AngularLobe::new(FRAC_PI_2, 1.0, 0.50),
            AngularLobe::new(3.0 * FRAC_PI_2, 1.0, 0.50),
        ];
        Self::new(lobes, 12.0, 2.5, 0.05).expect("person preset is valid")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "car" => Some(Self::car()),
            "person" => Some(Self::person()),
            _ => None,
        }
    }

    /// Evaluates the field at every grid point.
    pub fn export_manifold(&self, grid: &PoseGrid) -> ManifoldTable {
        let values = grid.indices().map(|idx| self.confidence(grid.pose(idx))).collect();
        ManifoldTable { grid: *grid, values }
    }
}

/// Confidence at every grid point, angle-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldTable {
    pub grid: PoseGrid,
    pub values: Vec<f64>,
}

impl ManifoldTable {
    pub fn get(&self, angle_idx: usize, radius_idx: usize) -> f64 {
        self.values[angle_idx * self.grid.n_radii + radius_idx]
    }

    /// Row of confidences over all angles at one radius.
    pub fn ring(&self, radius_idx: usize) -> Vec<f64> {
        (0..self.grid.n_angles).map(|a| self.get(a, radius_idx)).collect()
    }

    /// Population variance of confidence over angle at a fixed radius.
    pub fn angular_variance(&self, radius_idx: usize) -> f64 {
        let ring = self.ring(radius_idx);
        let n = ring.len() as f64;
        let mean = ring.iter().sum::<f64>() / n;
        ring.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,r,confidence\n");
        for (idx, value) in self.grid.indices().zip(&self.values) {
            let pose = self.grid.pose(idx);
            let _ = writeln!(
                out,
                "{},{},{}",
                round_sig(pose.theta),
                round_sig(pose.r),
                round_sig(*value)
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_csv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_lobe_field() -> ConfidenceField {
        ConfidenceField::new(vec![AngularLobe::new(0.0, 1.0, 1.0)], 1e9, 1.0, 0.0).unwrap()
    }

    #[test]
    fn single_lobe_peak_and_shoulder() {
        let f = unit_lobe_field();
        assert!((f.confidence(Pose::new(0.0, 10.0)) - 1.0).abs() < 1e-12);
        assert!((f.angular(1.0) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((f.confidence(Pose::new(1.0, 10.0)) - 0.6065306597).abs() < 1e-9);
    }

    #[test]
    fn car_prefers_broadside() {
        let car = ConfidenceField::car();
        let g = PoseGrid::standard();
        assert!(car.confidence(Pose::new(FRAC_PI_2, g.r_min)) > car.confidence(Pose::new(0.0, g.r_min)));
    }

    #[test]
    fn person_is_closer_range_than_car() {
        assert!(ConfidenceField::person().r_half < ConfidenceField::car().r_half);
    }

    #[test]
    fn presets_are_pi_symmetric() {
        for f in [ConfidenceField::car(), ConfidenceField::person()] {
            for k in 0..50 {
                let theta = k as f64 * 0.13;
                let a = f.confidence(Pose::new(theta, 7.0));
                let b = f.confidence(Pose::new(theta + PI, 7.0));
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn export_matches_pointwise() {
        let g = PoseGrid::new(8, 3, 1.0, 3.0).unwrap();
        let car = ConfidenceField::car();
        let table = car.export_manifold(&g);
        assert_eq!(table.values.len(), 24);
        for a in 0..8 {
            for j in 0..3 {
                let direct = car.confidence(g.pose_at(a, j).unwrap());
                assert_eq!(table.get(a, j).to_bits(), direct.to_bits());
            }
        }
    }

    #[test]
    fn near_constant_field() {
        let f = ConfidenceField::new(vec![AngularLobe::new(0.0, 1e6, 0.5)], 1e9, 1.0, 0.1).unwrap();
        let table = f.export_manifold(&PoseGrid::standard());
        let first = table.values[0];
        assert!(table.values.iter().all(|v| (v - first).abs() < 1e-9));
    }

    #[test]
    fn car_argmax_is_broadside_at_closest_range() {
        let g = PoseGrid::standard();
        let table = ConfidenceField::car().export_manifold(&g);
        let (best, _) = table
            .values
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
        let idx = g.unflat(best);
        assert_eq!(idx.radius, 0);
        assert!(idx.angle == 19 || idx.angle == 57, "argmax at angle index {}", idx.angle);
    }

    #[test]
    fn invalid_fields_rejected() {
        assert!(ConfidenceField::new(vec![], 1.0, 1.0, 0.0).is_err());
        assert!(ConfidenceField::new(vec![AngularLobe::new(0.0, 0.0, 1.0)], 1.0, 1.0, 0.0).is_err());
        assert!(ConfidenceField::new(vec![AngularLobe::new(0.0, 1.0, 1.5)], 1.0, 1.0, 0.0).is_err());
        assert!(ConfidenceField::new(vec![AngularLobe::new(0.0, 1.0, 1.0)], 1.0, 0.0, 0.0).is_err());
        assert!(ConfidenceField::new(vec![AngularLobe::new(0.0, 1.0, 1.0)], 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn csv_layout() {
        let g = PoseGrid::new(4, 2, 1.0, 2.0).unwrap();
        let csv = ConfidenceField::car().export_manifold(&g).to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "theta,r,confidence");
        assert_eq!(lines.len(), 9);
        assert!(lines[1].starts_with("0,1,"));
        assert!(lines[2].starts_with("0,2,"));
        assert!(lines[3].starts_with("1.57079633,1,"));
    }

    #[test]
    fn unknown_preset() {
        assert!(ConfidenceField::preset("bicycle").is_none());
        assert_eq!(ConfidenceField::preset("car"), Some(ConfidenceField::car()));
    }
}
