//! Straight two-direction road strip. Direction 0 drives toward +x, direction
//! 1 toward −x; both wrap at the strip ends.

use crate::geo::{Position, LANE_WIDTH_M};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vehicle {
    pub x: f64,
    pub lane: u8,
    pub direction: u8,
    pub speed_mps: f64,
}

/// Lateral offset of a lane center. Direction 0 uses the lanes south of the
/// median (negative y), direction 1 the lanes north of it.
pub fn lane_y(direction: u8, lane: u8) -> f64 {
    let offset = LANE_WIDTH_M / 2.0 + LANE_WIDTH_M * f64::from(lane);
    if direction == 0 {
        -offset
    } else {
        offset
    }
}

impl Vehicle {
    pub fn position(&self) -> Position {
        Position::planar(self.x, lane_y(self.direction, self.lane))
    }

    pub fn heading_sign(&self) -> f64 {
        if self.direction == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Moves along the lane for `dt_s` seconds at `factor` times the
    /// vehicle's own speed, wrapping modulo `area_m`.
    pub fn advance(&mut self, dt_s: f64, area_m: f64, factor: f64) {
        let dx = self.heading_sign() * self.speed_mps * factor * dt_s;
        self.x = (self.x + dx).rem_euclid(area_m);
    }
}

pub fn kmh_to_mps(kmh: f64) -> f64 {
    kmh / 3.6
}
