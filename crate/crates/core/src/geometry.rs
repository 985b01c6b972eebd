//! Closed-loop multi-lane track.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoadGeometry {
    pub lane_count: usize,
    /// Metres. Only used for rendering lateral positions in dumps.
    pub lane_width: f64,
    /// Along-track circumference of the loop, metres.
    pub ring_length: f64,
}

impl Default for RoadGeometry {
    fn default() -> Self {
        Self {
            lane_count: 4,
            lane_width: 4.0,
            ring_length: 1000.0,
        }
    }
}

impl RoadGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.lane_count < 2 {
            return Err(Error::Config(format!(
                "lane_count must be at least 2, got {}",
                self.lane_count
            )));
        }
        if !(self.ring_length > 0.0 && self.ring_length.is_finite()) {
            return Err(Error::Config("ring_length must be positive".into()));
        }
        if !(self.lane_width > 0.0) {
            return Err(Error::Config("lane_width must be positive".into()));
        }
        Ok(())
    }

    /// Distance travelled forward from `from` to reach `to`, in `[0, ring_length)`.
    pub fn forward_distance(&self, from: f64, to: f64) -> f64 {
        let d = (to - from).rem_euclid(self.ring_length);
        // rem_euclid can round up to the modulus itself
        if d >= self.ring_length {
            0.0
        } else {
            d
        }
    }

    /// Signed offset of `to` relative to `from`, in `(-L/2, L/2]`; positive means ahead.
    pub fn signed_offset(&self, from: f64, to: f64) -> f64 {
        let d = self.forward_distance(from, to);
        if d > self.ring_length / 2.0 {
            d - self.ring_length
        } else {
            d
        }
    }

    /// Shortest along-track distance between two positions.
    pub fn ring_distance(&self, a: f64, b: f64) -> f64 {
        self.signed_offset(a, b).abs()
    }

    pub fn wrap(&self, s: f64) -> f64 {
        self.forward_distance(0.0, s)
    }
}
