//! Stakeholder rewards for ego vehicles and the scalar loss built from them.
//!
//! Speeds inside the defensive-driving penalty are taken in units of 1 m/s so
//! that the squared closing speed and the proximity constant `zeta` add as
//! plain numbers.

use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;
use crate::error::{Error, Result};
use crate::geometry::RoadGeometry;

/// Non-negative weights applied to the normalized reward components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub speed: f64,
    pub defensive: f64,
    pub collision: f64,
}

/// Crashes are weighted well above the other components so that a collision
/// inside a rollout dominates the expected loss.
impl Default for LossWeights {
    fn default() -> Self {
        Self {
            collision: 100.0,
            ..Self::unit()
        }
    }
}

impl LossWeights {
    pub fn unit() -> Self {
        Self {
            speed: 1.0,
            defensive: 1.0,
            collision: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Peak of the speed reward.
    pub alpha: f64,
    /// Width of the speed reward, m/s.
    pub sigma: f64,
    /// Target speed, m/s.
    pub target_speed: f64,
    /// Collision penalty magnitude.
    pub kappa: f64,
    /// Defensive penalty scale.
    pub lambda: f64,
    /// Proximity constant added to each squared closing speed.
    pub zeta: f64,
    pub rd_max: f64,
    /// Neighbours farther than this along the track are ignored, metres.
    pub neighbor_radius: f64,
    /// Discount used for cumulative risk.
    pub gamma: f64,
    pub weights: LossWeights,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            sigma: 2.0,
            target_speed: 30.0,
            kappa: 5.0,
            lambda: 0.1,
            zeta: 1.0,
            rd_max: 1.0,
            neighbor_radius: 60.0,
            gamma: 0.95,
            weights: LossWeights::default(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let checks = [
            ("alpha", self.alpha >= 0.0),
            ("sigma", self.sigma > 0.0),
            ("target_speed", self.target_speed >= 0.0),
            ("kappa", self.kappa >= 0.0),
            ("lambda", self.lambda >= 0.0),
            ("zeta", self.zeta >= 0.0),
            ("rd_max", self.rd_max > 0.0),
            ("neighbor_radius", self.neighbor_radius >= 0.0),
            ("gamma", self.gamma > 0.0 && self.gamma <= 1.0),
            ("weights", w.speed >= 0.0 && w.defensive >= 0.0 && w.collision >= 0.0),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(Error::Config(format!("reward parameter {name} out of range"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_speed: f64,
    pub r_collision: f64,
    pub r_defensive: f64,
    pub loss: f64,
}

impl RewardBreakdown {
    pub fn new(r_speed: f64, r_defensive: f64, r_collision: f64, config: &RewardConfig) -> Self {
        Self {
            r_speed,
            r_collision,
            r_defensive,
            loss: step_loss(r_speed, r_defensive, r_collision, config),
        }
    }
}

/// Gaussian speed reward `alpha · exp(−(v − v_T)² / 2σ²)`.
pub fn speed_reward(speed: f64, config: &RewardConfig) -> f64 {
    let dv = speed - config.target_speed;
    config.alpha * (-dv * dv / (2.0 * config.sigma * config.sigma)).exp()
}

pub fn collision_reward(crashed: bool, config: &RewardConfig) -> f64 {
    if crashed {
        -config.kappa
    } else {
        0.0
    }
}

/// Closing speed between `subject` and one neighbour; zero when they drift apart.
///
/// `offset` is the neighbour's signed along-track position relative to the
/// subject (positive ahead). The Heaviside step is zero at zero offset.
pub fn closing_speed(subject_speed: f64, neighbour_speed: f64, offset: f64) -> f64 {
    let ahead = if offset > 0.0 { 1.0 } else { 0.0 };
    let behind = if offset < 0.0 { 1.0 } else { 0.0 };
    (subject_speed - neighbour_speed).max(0.0) * ahead + (neighbour_speed - subject_speed).max(0.0) * behind
}

/// Defensive-driving reward, truncated to `[0, rd_max]`.
pub fn defensive_reward(
    subject: &VehicleState,
    neighbours: &[VehicleState],
    road: &RoadGeometry,
    config: &RewardConfig,
) -> Result<f64> {
    let mut penalty = 0.0;
    for n in neighbours.iter().filter(|n| n.id != subject.id) {
        let offset = road.signed_offset(subject.position, n.position);
        let distance = offset.abs();
        if distance > config.neighbor_radius {
            continue;
        }
        if distance == 0.0 {
            return Err(Error::DegenerateProximity {
                a: subject.id,
                b: n.id,
            });
        }
        let w = closing_speed(subject.speed, n.speed, offset);
        let lane_factor = 2f64.powi(subject.lane.abs_diff(n.lane) as i32);
        penalty += (w * w + config.zeta) / (lane_factor * distance);
    }
    Ok((config.rd_max - config.lambda * penalty).clamp(0.0, config.rd_max))
}

/// Negative weighted sum of the normalized rewards.
///
/// Speed and defensive rewards are scaled into `[0, 1]`, the collision reward
/// into `[-1, 0]`; a zero scale constant makes its component vanish.
pub fn step_loss(r_speed: f64, r_defensive: f64, r_collision: f64, config: &RewardConfig) -> f64 {
    let norm = |r: f64, scale: f64| if scale > 0.0 { r / scale } else { 0.0 };
    let w = &config.weights;
    -(w.speed * norm(r_speed, config.alpha)
        + w.defensive * norm(r_defensive, config.rd_max)
        + w.collision * norm(r_collision, config.kappa))
}

/// All reward components and the loss for one vehicle against its neighbours.
///
/// Vehicles at exactly zero along-track distance (possible only across lanes)
/// drive the defensive reward to its limit of zero.
pub fn score_vehicle(
    subject: &VehicleState,
    neighbours: &[VehicleState],
    road: &RoadGeometry,
    config: &RewardConfig,
) -> RewardBreakdown {
    let r_speed = speed_reward(subject.speed, config);
    let r_collision = collision_reward(subject.crashed, config);
    let r_defensive = match defensive_reward(subject, neighbours, road, config) {
        Ok(r) => r,
        Err(_) if config.lambda > 0.0 => 0.0,
        Err(_) => config.rd_max,
    };
    RewardBreakdown::new(r_speed, r_defensive, r_collision, config)
}
