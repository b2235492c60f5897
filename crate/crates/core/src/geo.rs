//! Planar event geometry: zone classification around an event, cell sizing
//! from road parameters, and the cell grid every receiver rebuilds from the
//! event coordinates.
//!
//! Altitude is carried in [`Position`] but ignored by every computation here.

use std::f64::consts::TAU;

use thiserror::Error;

/// Width of one lane in meters.
pub const LANE_WIDTH_M: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("speed limit must be positive and finite, got {0}")]
    NonPositiveSpeed(f64),
    #[error("a road needs at least one lane per direction")]
    NoLanes,
    #[error("zone radii must satisfy 0 < danger < uncertainty < security, got ({danger}, {uncertainty}, {security})")]
    InvalidRadii {
        danger: f64,
        uncertainty: f64,
        security: f64,
    },
    #[error("danger radius must be positive and finite, got {0}")]
    InvalidDangerRadius(f64),
    #[error("heading must be finite")]
    InvalidHeading,
}

/// A point in meters: `x` east, `y` north, `z` altitude.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Position { x, y, z }
    }

    pub const fn planar(x: f64, y: f64) -> Self {
        Position { x, y, z: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Euclidean distance in the horizontal plane.
    pub fn planar_distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RoadClass {
    Conventional,
    Highway,
}

impl RoadClass {
    pub fn code(self) -> u8 {
        match self {
            RoadClass::Conventional => 0,
            RoadClass::Highway => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(RoadClass::Conventional),
            1 => Some(RoadClass::Highway),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadProfile {
    lanes_per_direction: u8,
    speed_limit_kmh: f64,
    road_class: RoadClass,
    heading: f64,
}

impl RoadProfile {
    /// Validates the profile and normalizes `heading` into `[0, 2π)`.
    pub fn new(
        lanes_per_direction: u8,
        speed_limit_kmh: f64,
        road_class: RoadClass,
        heading: f64,
    ) -> Result<Self, GeoError> {
        if lanes_per_direction == 0 {
            return Err(GeoError::NoLanes);
        }
        if !(speed_limit_kmh.is_finite() && speed_limit_kmh > 0.0) {
            return Err(GeoError::NonPositiveSpeed(speed_limit_kmh));
        }
        if !heading.is_finite() {
            return Err(GeoError::InvalidHeading);
        }
        let heading = heading.rem_euclid(TAU);
        Ok(RoadProfile {
            lanes_per_direction,
            speed_limit_kmh,
            road_class,
            heading,
        })
    }

    pub fn lanes_per_direction(&self) -> u8 {
        self.lanes_per_direction
    }

    pub fn speed_limit_kmh(&self) -> f64 {
        self.speed_limit_kmh
    }

    pub fn road_class(&self) -> RoadClass {
        self.road_class
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneRadii {
    danger: f64,
    uncertainty: f64,
    security: f64,
}

impl ZoneRadii {
    pub fn new(danger: f64, uncertainty: f64, security: f64) -> Result<Self, GeoError> {
        let ordered = danger.is_finite()
            && uncertainty.is_finite()
            && security.is_finite()
            && 0.0 < danger
            && danger < uncertainty
            && uncertainty < security;
        if !ordered {
            return Err(GeoError::InvalidRadii {
                danger,
                uncertainty,
                security,
            });
        }
        Ok(ZoneRadii {
            danger,
            uncertainty,
            security,
        })
    }

    pub fn danger(&self) -> f64 {
        self.danger
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    pub fn security(&self) -> f64 {
        self.security
    }

    pub fn classify(&self, distance: f64) -> Zone {
        if distance <= self.danger {
            Zone::Danger
        } else if distance <= self.uncertainty {
            Zone::Uncertainty
        } else if distance <= self.security {
            Zone::Security
        } else {
            Zone::OutOfScope
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Zone {
    Danger,
    Uncertainty,
    Security,
    OutOfScope,
}

/// Minimum following distance in meters for a speed limit in km/h: `(v / 10)²`.
pub fn safety_distance(speed_limit_kmh: f64) -> Result<f64, GeoError> {
    if !(speed_limit_kmh.is_finite() && speed_limit_kmh > 0.0) {
        return Err(GeoError::NonPositiveSpeed(speed_limit_kmh));
    }
    let tens = speed_limit_kmh / 10.0;
    Ok(tens * tens)
}

/// `(cell_length, cell_width)` in meters: twice the safety distance along the
/// road, one lane width per lane across it.
pub fn cell_dimensions(road: &RoadProfile) -> (f64, f64) {
    // RoadProfile construction already rejected non-positive speeds.
    let safety = safety_distance(road.speed_limit_kmh).expect("validated road profile");
    (
        2.0 * safety,
        LANE_WIDTH_M * f64::from(road.lanes_per_direction),
    )
}

/// Largest group a cell can hold at normal spacing: one vehicle per safety
/// distance in every lane, counting vehicles on both cell edges.
pub fn max_group_size(road: &RoadProfile) -> usize {
    let (length, _) = cell_dimensions(road);
    let safety = safety_distance(road.speed_limit_kmh).expect("validated road profile");
    let per_lane = (length / safety).floor() as usize + 1;
    per_lane * usize::from(road.lanes_per_direction)
}

pub fn classify_zone(node: &Position, event: &Position, radii: &ZoneRadii) -> Zone {
    radii.classify(node.planar_distance(event))
}

/// Integer cell coordinates; `(0, 0)` is the cell centered on the event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellId {
    /// Along the road heading.
    pub i: i64,
    /// Across the road, positive to the left of the heading.
    pub j: i64,
}

impl CellId {
    pub const CENTRAL: CellId = CellId { i: 0, j: 0 };

    pub const fn new(i: i64, j: i64) -> Self {
        CellId { i, j }
    }
}

/// Rectangular partition of the plane aligned with the road and centered on
/// the event. Each cell is half-open `[lo, hi)` on both axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGrid {
    origin: Position,
    cell_length: f64,
    cell_width: f64,
    heading: f64,
    extent: f64,
}

pub fn build_grid(
    event: Position,
    road: &RoadProfile,
    danger_radius: f64,
) -> Result<CellGrid, GeoError> {
    if !(danger_radius.is_finite() && danger_radius > 0.0) {
        return Err(GeoError::InvalidDangerRadius(danger_radius));
    }
    let (cell_length, cell_width) = cell_dimensions(road);
    Ok(CellGrid {
        origin: event,
        cell_length,
        cell_width,
        heading: road.heading,
        extent: danger_radius,
    })
}

impl CellGrid {
    pub fn origin(&self) -> Position {
        self.origin
    }

    pub fn cell_length(&self) -> f64 {
        self.cell_length
    }

    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// Coordinates of `p` in the road frame: `(u, v)` with `u` along the
    /// heading and `v` to its left.
    pub fn road_frame(&self, p: &Position) -> (f64, f64) {
        let dx = p.x - self.origin.x;
        let dy = p.y - self.origin.y;
        let (sin, cos) = self.heading.sin_cos();
        (dx * cos + dy * sin, -dx * sin + dy * cos)
    }

    pub fn cell_of(&self, p: &Position) -> CellId {
        let (u, v) = self.road_frame(p);
        let i = ((u + self.cell_length / 2.0) / self.cell_length).floor();
        let j = ((v + self.cell_width / 2.0) / self.cell_width).floor();
        CellId {
            i: i as i64,
            j: j as i64,
        }
    }

    pub fn cell_center(&self, id: CellId) -> Position {
        let u = id.i as f64 * self.cell_length;
        let v = id.j as f64 * self.cell_width;
        let (sin, cos) = self.heading.sin_cos();
        Position {
            x: self.origin.x + u * cos - v * sin,
            y: self.origin.y + u * sin + v * cos,
            z: self.origin.z,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn highway(lanes: u8, speed: f64) -> RoadProfile {
        RoadProfile::new(lanes, speed, RoadClass::Highway, 0.0).unwrap()
    }

    #[test]
    fn safety_distance_examples() {
        assert_eq!(safety_distance(120.0).unwrap(), 144.0);
        assert_eq!(safety_distance(10.0).unwrap(), 1.0);
        assert_eq!(safety_distance(80.0).unwrap(), 64.0);
        assert!(safety_distance(0.0).is_err());
        assert!(safety_distance(-30.0).is_err());
        assert!(safety_distance(f64::NAN).is_err());
    }

    #[test]
    fn cell_dimension_examples() {
        let (l, w) = cell_dimensions(&highway(3, 120.0));
        assert_eq!((l, w), (288.0, 12.0));
        assert_eq!(l * w, 3456.0);

        let (l, w) = cell_dimensions(&highway(4, 80.0));
        assert_eq!((l, w), (128.0, 16.0));
        assert_eq!(l * w, 2048.0);

        assert_eq!(cell_dimensions(&highway(1, 10.0)), (2.0, 4.0));
    }

    #[test]
    fn normal_spacing_group_size() {
        assert_eq!(max_group_size(&highway(3, 120.0)), 9);
        assert_eq!(max_group_size(&highway(1, 50.0)), 3);
    }

    #[test]
    fn road_profile_rejects_bad_input() {
        assert_eq!(
            RoadProfile::new(0, 100.0, RoadClass::Highway, 0.0),
            Err(GeoError::NoLanes)
        );
        assert!(RoadProfile::new(2, 0.0, RoadClass::Highway, 0.0).is_err());
        let r = RoadProfile::new(2, 50.0, RoadClass::Conventional, -std::f64::consts::FRAC_PI_2)
            .unwrap();
        assert!((r.heading() - 1.5 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn zone_examples() {
        let radii = ZoneRadii::new(100.0, 500.0, 2000.0).unwrap();
        let event = Position::planar(0.0, 0.0);
        assert_eq!(classify_zone(&event, &event, &radii), Zone::Danger);
        assert_eq!(
            classify_zone(&Position::planar(300.0, 0.0), &event, &radii),
            Zone::Uncertainty
        );
        assert_eq!(
            classify_zone(&Position::planar(0.0, 2001.0), &event, &radii),
            Zone::OutOfScope
        );
        // boundaries are inclusive on the inner zone
        assert_eq!(radii.classify(100.0), Zone::Danger);
        assert_eq!(radii.classify(500.0), Zone::Uncertainty);
        assert_eq!(radii.classify(2000.0), Zone::Security);
        // altitude does not count
        assert_eq!(
            classify_zone(&Position::new(0.0, 0.0, 5000.0), &event, &radii),
            Zone::Danger
        );
    }

    #[test]
    fn radii_must_be_strictly_ordered() {
        assert!(ZoneRadii::new(100.0, 100.0, 200.0).is_err());
        assert!(ZoneRadii::new(0.0, 1.0, 2.0).is_err());
        assert!(ZoneRadii::new(3.0, 2.0, 5.0).is_err());
    }

    #[test]
    fn grid_examples() {
        let road = highway(3, 120.0);
        let grid = build_grid(Position::planar(0.0, 0.0), &road, 100.0).unwrap();
        assert_eq!(grid, build_grid(Position::planar(0.0, 0.0), &road, 100.0).unwrap());
        assert_eq!(grid.cell_of(&Position::planar(0.0, 0.0)), CellId::CENTRAL);
        assert_eq!(grid.cell_of(&Position::planar(100.0, 0.0)), CellId::new(0, 0));
        assert_eq!(grid.cell_of(&Position::planar(150.0, 0.0)), CellId::new(1, 0));
        assert_eq!(grid.cell_of(&Position::planar(144.0, 0.0)), CellId::new(1, 0));
        assert_eq!(grid.cell_of(&Position::planar(-144.0, 0.0)), CellId::new(0, 0));
        assert_eq!(grid.cell_of(&Position::planar(-144.001, 0.0)), CellId::new(-1, 0));
        assert_eq!(grid.cell_of(&Position::planar(0.0, 6.0)), CellId::new(0, 1));
        assert_eq!(grid.cell_of(&Position::planar(0.0, -6.0)), CellId::new(0, 0));
        assert!(build_grid(Position::planar(0.0, 0.0), &road, 0.0).is_err());
    }

    #[test]
    fn grid_follows_heading() {
        let road = RoadProfile::new(3, 120.0, RoadClass::Highway, std::f64::consts::FRAC_PI_2)
            .unwrap();
        let grid = build_grid(Position::planar(10.0, 10.0), &road, 100.0).unwrap();
        // heading north: moving north is "along", moving west is "left"
        assert_eq!(grid.cell_of(&Position::planar(10.0, 160.0)), CellId::new(1, 0));
        assert_eq!(grid.cell_of(&Position::planar(-3.0, 10.0)), CellId::new(0, 1));
        let c = grid.cell_center(CellId::new(1, 0));
        assert!((c.x - 10.0).abs() < 1e-9 && (c.y - 298.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn zone_classification_is_total(d in 0.0f64..1e5, a in 1.0f64..100.0, b in 1.0f64..100.0, c in 1.0f64..100.0) {
            let radii = ZoneRadii::new(a, a + b, a + b + c).unwrap();
            let zone = radii.classify(d);
            let expected = [
                d <= a,
                d > a && d <= a + b,
                d > a + b && d <= a + b + c,
                d > a + b + c,
            ];
            prop_assert_eq!(expected.iter().filter(|x| **x).count(), 1);
            let idx = expected.iter().position(|x| *x).unwrap();
            prop_assert_eq!(zone, [Zone::Danger, Zone::Uncertainty, Zone::Security, Zone::OutOfScope][idx]);
        }

        #[test]
        fn cells_tile_without_gaps(
            lanes in 1u8..6, speed in 10.0f64..150.0, heading in 0.0f64..6.28,
            ox in -500.0f64..500.0, oy in -500.0f64..500.0,
            ci in -4i64..4, cj in -4i64..4,
        ) {
            let road = RoadProfile::new(lanes, speed, RoadClass::Conventional, heading).unwrap();
            let grid = build_grid(Position::planar(ox, oy), &road, 100.0).unwrap();
            let center = grid.cell_center(CellId::new(ci, cj));
            prop_assert_eq!(grid.cell_of(&center), CellId::new(ci, cj));
            // stepping just across each edge lands in the neighboring cell
            let (l, w) = (grid.cell_length(), grid.cell_width());
            let (sin, cos) = grid.heading().sin_cos();
            let eps = 1e-6;
            let step = |du: f64, dv: f64| Position::planar(center.x + du * cos - dv * sin, center.y + du * sin + dv * cos);
            prop_assert_eq!(grid.cell_of(&step(l / 2.0 + eps, 0.0)), CellId::new(ci + 1, cj));
            prop_assert_eq!(grid.cell_of(&step(l / 2.0 - eps, 0.0)), CellId::new(ci, cj));
            prop_assert_eq!(grid.cell_of(&step(-l / 2.0 - eps, 0.0)), CellId::new(ci - 1, cj));
            prop_assert_eq!(grid.cell_of(&step(0.0, w / 2.0 + eps)), CellId::new(ci, cj + 1));
            prop_assert_eq!(grid.cell_of(&step(0.0, -w / 2.0 - eps)), CellId::new(ci, cj - 1));
        }

        #[test]
        fn cell_size_is_monotone(lanes in 1u8..8, speed in 5.0f64..200.0, dv in 0.5f64..50.0) {
            let a = highway(lanes, speed);
            let faster = highway(lanes, speed + dv);
            let wider = highway(lanes + 1, speed);
            prop_assert!(cell_dimensions(&faster).0 > cell_dimensions(&a).0);
            prop_assert!(cell_dimensions(&wider).1 > cell_dimensions(&a).1);
        }

        #[test]
        fn grid_is_deterministic(lanes in 1u8..6, speed in 10.0f64..150.0, heading in 0.0f64..6.28, x in -1e4f64..1e4, y in -1e4f64..1e4) {
            let road = RoadProfile::new(lanes, speed, RoadClass::Highway, heading).unwrap();
            let a = build_grid(Position::planar(x, y), &road, 150.0).unwrap();
            let b = build_grid(Position::planar(x, y), &road, 150.0).unwrap();
            prop_assert_eq!(a.cell_length().to_bits(), b.cell_length().to_bits());
            prop_assert_eq!(a.cell_width().to_bits(), b.cell_width().to_bits());
            prop_assert_eq!(a.heading().to_bits(), b.heading().to_bits());
            prop_assert_eq!(a, b);
        }
    }
}
