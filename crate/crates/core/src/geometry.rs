//! Planar primitives and the four-way intersection map.
//!
//! Everything here is immutable once built. Road boundaries are polylines with
//! a designated corridor side, so the signed pseudo-distance is positive inside
//! the drivable corridor and negative outside of it.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;
use crate::error::{Error, Result};

/// Maximum angular extent of one discretized arc segment.
const MAX_ARC_STEP: f64 = 5.0 * PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    pub fn from_angle(angle: f64) -> Point2 {
        Point2::new(angle.cos(), angle.sin())
    }

    /// Exact rotation by `quarter_turns` × 90° counter-clockwise about the origin.
    pub fn rotate_quarter(self, quarter_turns: usize) -> Point2 {
        (0..quarter_turns % 4).fold(self, |p, _| Point2::new(-p.y, p.x))
    }

    /// Expresses `self` (a world-frame vector) in a frame rotated by `angle`.
    pub fn to_frame(self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x + s * self.y, -s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Side of a directed polyline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// A directed polyline whose `corridor_side` marks where the drivable area is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    vertices: Vec<Point2>,
    corridor_side: Side,
}

impl Polyline {
    pub fn new(vertices: Vec<Point2>, corridor_side: Side) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::Geometry(
                "polyline needs at least two vertices".into(),
            ));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::Geometry("polyline vertex is not finite".into()));
        }
        if vertices.windows(2).any(|w| w[0].distance(w[1]) <= 1e-12) {
            return Err(Error::Geometry("polyline has a zero-length segment".into()));
        }
        Ok(Self {
            vertices,
            corridor_side,
        })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn corridor_side(&self) -> Side {
        self.corridor_side
    }

    pub fn segment_count(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn segment(&self, index: usize) -> (Point2, Point2) {
        (self.vertices[index], self.vertices[index + 1])
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        self.vertices.windows(2).map(|w| (w[0], w[1]))
    }

    fn rotate_quarter(&self, quarter_turns: usize) -> Polyline {
        Polyline {
            vertices: self
                .vertices
                .iter()
                .map(|p| p.rotate_quarter(quarter_turns))
                .collect(),
            corridor_side: self.corridor_side,
        }
    }
}

/// Result of [`pseudo_distance`]: signed distance plus the feature that achieved it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoDistance {
    pub distance: f64,
    /// Index of the active (nearest) segment.
    pub segment: usize,
    /// Projection parameter on the active segment, clamped to `[0, 1]`.
    pub t: f64,
    pub closest: Point2,
    /// +1 on the corridor side of the active segment, −1 otherwise.
    pub sign: f64,
}

impl PseudoDistance {
    /// True when the nearest point is a segment endpoint rather than an interior point.
    pub fn at_vertex(&self) -> bool {
        self.t <= 0.0 || self.t >= 1.0
    }
}

/// Signed nearest-segment distance from `p` to `line`.
///
/// Ties between segments resolve to the lowest segment index.
pub fn pseudo_distance(p: Point2, line: &Polyline) -> PseudoDistance {
    let mut best: Option<(f64, usize, f64, Point2)> = None;
    for (k, (a, b)) in line.segments().enumerate() {
        let ab = b - a;
        let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
        let closest = a + ab * t;
        let d = p.distance(closest);
        if best.is_none_or(|(bd, ..)| d < bd) {
            best = Some((d, k, t, closest));
        }
    }
    let (d, segment, t, closest) = best.expect("polyline has at least one segment");
    let (a, b) = line.segment(segment);
    let on_left = (b - a).cross(p - a) >= 0.0;
    let sign = if on_left == (line.corridor_side == Side::Left) {
        1.0
    } else {
        -1.0
    };
    PseudoDistance {
        distance: sign * d,
        segment,
        t,
        closest,
        sign,
    }
}

/// Circles covering a rectangular footprint, placed along the body axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleDecomposition {
    /// Longitudinal offsets of the circle centers from the vehicle reference point.
    pub offsets: Vec<f64>,
    pub radius: f64,
}

impl CircleDecomposition {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Evenly spaced circles with the smallest radius that covers the rectangle.
pub fn decompose_rectangle(
    length: f64,
    width: f64,
    n_circles: usize,
) -> Result<CircleDecomposition> {
    if !(length > 0.0 && width > 0.0) || !length.is_finite() || !width.is_finite() {
        return Err(Error::Geometry(format!(
            "rectangle dimensions must be positive, got {length} x {width}"
        )));
    }
    if length < width {
        return Err(Error::Geometry(
            "rectangle length must be at least its width".into(),
        ));
    }
    if n_circles == 0 {
        return Err(Error::Geometry("need at least one circle".into()));
    }
    let spacing = length / n_circles as f64;
    let offsets = (0..n_circles)
        .map(|k| -0.5 * length + (k as f64 + 0.5) * spacing)
        .collect();
    let radius = (0.5 * spacing).hypot(0.5 * width);
    Ok(CircleDecomposition { offsets, radius })
}

pub fn circle_centers(state: &VehicleState, decomp: &CircleDecomposition) -> Vec<Point2> {
    let heading = Point2::from_angle(state.theta);
    decomp
        .offsets
        .iter()
        .map(|&o| state.position() + heading * o)
        .collect()
}

/// Corners of the oriented rectangle centered on the vehicle reference point,
/// counter-clockwise starting at rear-right.
pub fn rectangle_corners(state: &VehicleState, length: f64, width: f64) -> [Point2; 4] {
    let fwd = Point2::from_angle(state.theta);
    let left = fwd.perp();
    let c = state.position();
    let (hl, hw) = (0.5 * length, 0.5 * width);
    [
        c - fwd * hl - left * hw,
        c + fwd * hl - left * hw,
        c + fwd * hl + left * hw,
        c - fwd * hl + left * hw,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    South,
    East,
    North,
    West,
}

impl Direction {
    /// Counter-clockwise order: a quarter turn maps each arm onto the next.
    pub const ALL: [Direction; 4] = [
        Direction::South,
        Direction::East,
        Direction::North,
        Direction::West,
    ];

    pub fn index(self) -> usize {
        match self {
            Direction::South => 0,
            Direction::East => 1,
            Direction::North => 2,
            Direction::West => 3,
        }
    }

    pub fn rotate(self, quarter_turns: usize) -> Direction {
        Self::ALL[(self.index() + quarter_turns) % 4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Maneuver {
    Left,
    Straight,
    Right,
}

impl Maneuver {
    pub const ALL: [Maneuver; 3] = [Maneuver::Left, Maneuver::Straight, Maneuver::Right];

    pub fn index(self) -> usize {
        match self {
            Maneuver::Left => 0,
            Maneuver::Straight => 1,
            Maneuver::Right => 2,
        }
    }
}

/// Axis-aligned rectangle (entry and exit regions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point2,
    pub max: Point2,
}

impl Rect {
    pub fn from_corners(a: Point2, b: Point2) -> Self {
        Self {
            min: Point2::new(a.x.min(b.x), a.y.min(b.y)),
            max: Point2::new(a.x.max(b.x), a.y.max(b.y)),
        }
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    fn rotate_quarter(&self, quarter_turns: usize) -> Rect {
        Rect::from_corners(
            self.min.rotate_quarter(quarter_turns),
            self.max.rotate_quarter(quarter_turns),
        )
    }
}

/// Projection of a point onto a reference path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathProjection {
    pub arclength: f64,
    pub segment: usize,
    pub point: Point2,
    /// Unit tangent of the active segment.
    pub tangent: Point2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePath {
    waypoints: Vec<Point2>,
    cumulative_arclength: Vec<f64>,
    pub entry: Direction,
    pub exit: Direction,
    pub maneuver: Maneuver,
}

impl ReferencePath {
    pub fn new(
        waypoints: Vec<Point2>,
        entry: Direction,
        exit: Direction,
        maneuver: Maneuver,
    ) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::Geometry("reference path needs two waypoints".into()));
        }
        let mut cumulative_arclength = Vec::with_capacity(waypoints.len());
        cumulative_arclength.push(0.0);
        for w in waypoints.windows(2) {
            let step = w[0].distance(w[1]);
            if step <= 1e-12 {
                return Err(Error::Geometry(
                    "reference path has repeated waypoints".into(),
                ));
            }
            cumulative_arclength.push(cumulative_arclength.last().unwrap() + step);
        }
        Ok(Self {
            waypoints,
            cumulative_arclength,
            entry,
            exit,
            maneuver,
        })
    }

    pub fn waypoints(&self) -> &[Point2] {
        &self.waypoints
    }

    pub fn cumulative_arclength(&self) -> &[f64] {
        &self.cumulative_arclength
    }

    pub fn length(&self) -> f64 {
        *self.cumulative_arclength.last().unwrap()
    }

    /// Nearest point on the path; ties resolve to the lowest segment index.
    pub fn project(&self, p: Point2) -> PathProjection {
        let mut best = (f64::INFINITY, 0, 0.0, self.waypoints[0]);
        for k in 0..self.waypoints.len() - 1 {
            let (a, b) = (self.waypoints[k], self.waypoints[k + 1]);
            let ab = b - a;
            let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
            let q = a + ab * t;
            let d = p.distance(q);
            if d < best.0 {
                best = (d, k, t, q);
            }
        }
        let (_, segment, t, point) = best;
        let seg_len = self.cumulative_arclength[segment + 1] - self.cumulative_arclength[segment];
        let tangent = (self.waypoints[segment + 1] - self.waypoints[segment]) * (1.0 / seg_len);
        PathProjection {
            arclength: self.cumulative_arclength[segment] + t * seg_len,
            segment,
            point,
            tangent,
        }
    }

    /// Path point at arclength `s`, clamped to the path ends.
    pub fn point_at(&self, s: f64) -> Point2 {
        let s = s.clamp(0.0, self.length());
        let k = self
            .cumulative_arclength
            .partition_point(|&c| c <= s)
            .saturating_sub(1)
            .min(self.waypoints.len() - 2);
        let s0 = self.cumulative_arclength[k];
        let s1 = self.cumulative_arclength[k + 1];
        let t = ((s - s0) / (s1 - s0)).clamp(0.0, 1.0);
        self.waypoints[k] + (self.waypoints[k + 1] - self.waypoints[k]) * t
    }

    /// Heading of the segment containing arclength `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length());
        let k = self
            .cumulative_arclength
            .partition_point(|&c| c <= s)
            .saturating_sub(1)
            .min(self.waypoints.len() - 2);
        let d = self.waypoints[k + 1] - self.waypoints[k];
        d.y.atan2(d.x)
    }

    fn rotate_quarter(&self, quarter_turns: usize) -> ReferencePath {
        ReferencePath {
            waypoints: self
                .waypoints
                .iter()
                .map(|p| p.rotate_quarter(quarter_turns))
                .collect(),
            cumulative_arclength: self.cumulative_arclength.clone(),
            entry: self.entry.rotate(quarter_turns),
            exit: self.exit.rotate(quarter_turns),
            maneuver: self.maneuver,
        }
    }
}

/// `m` points ahead of the projection of `p`, spaced `spacing` apart and clamped to the path end.
pub fn sample_reference_points(
    path: &ReferencePath,
    p: Point2,
    m: usize,
    spacing: f64,
) -> Vec<Point2> {
    let s0 = path.project(p).arclength;
    (1..=m)
        .map(|k| path.point_at(s0 + k as f64 * spacing))
        .collect()
}

/// Left and right road boundaries of one reference path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub left: Polyline,
    pub right: Polyline,
}

impl Corridor {
    pub fn boundary(&self, side: Side) -> &Polyline {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntersectionConfig {
    pub lane_width: f64,
    pub lanes_per_direction: usize,
    /// Length of each arm measured from the edge of the central box.
    pub arm_length: f64,
    pub left_turn_radius: f64,
    pub right_turn_radius: f64,
    /// Depth of each entry region along its arm.
    pub entry_length: f64,
    /// Depth of each exit region along its arm.
    pub exit_length: f64,
}

impl Default for IntersectionConfig {
    fn default() -> Self {
        Self {
            lane_width: 0.3,
            lanes_per_direction: 2,
            arm_length: 2.0,
            left_turn_radius: 0.6,
            right_turn_radius: 0.45,
            entry_length: 1.0,
            exit_length: 0.5,
        }
    }
}

impl IntersectionConfig {
    /// Half-width of the central box.
    pub fn half_size(&self) -> f64 {
        self.lanes_per_direction as f64 * self.lane_width
    }

    /// Distance from the center to the end of each arm.
    pub fn extent(&self) -> f64 {
        self.half_size() + self.arm_length
    }

    fn lane_offset(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lane_width", self.lane_width),
            ("arm_length", self.arm_length),
            ("left_turn_radius", self.left_turn_radius),
            ("right_turn_radius", self.right_turn_radius),
            ("entry_length", self.entry_length),
            ("exit_length", self.exit_length),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Config(format!("map.{name} must be positive")));
            }
        }
        if self.lanes_per_direction == 0 {
            return Err(Error::Config(
                "map.lanes_per_direction must be at least 1".into(),
            ));
        }
        for (name, radius) in [
            ("left_turn_radius", self.left_turn_radius),
            ("right_turn_radius", self.right_turn_radius),
        ] {
            if radius < self.lane_width {
                return Err(Error::Config(format!(
                    "map.{name} ({radius}) is smaller than the lane width ({})",
                    self.lane_width
                )));
            }
        }
        let extent = self.extent();
        let inner = self.lane_offset(0);
        let outer = self.lane_offset(self.lanes_per_direction - 1);
        // Turns must start after the entry region and finish before the exit region.
        let turn_reach = (inner + self.left_turn_radius).max(outer + self.right_turn_radius);
        if turn_reach > extent - self.entry_length.max(self.exit_length) {
            return Err(Error::Config(
                "turn radii do not fit between the entry/exit regions and the box".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionMap {
    pub config: IntersectionConfig,
    /// Indexed by [`Direction::index`].
    pub entry_regions: [Rect; 4],
    pub exit_regions: [Rect; 4],
    /// Ordered by entry (see [`Direction::ALL`]) then maneuver (see [`Maneuver::ALL`]).
    pub reference_paths: Vec<ReferencePath>,
    pub corridors: Vec<Corridor>,
}

impl IntersectionMap {
    pub fn path_index(entry: Direction, maneuver: Maneuver) -> usize {
        3 * entry.index() + maneuver.index()
    }

    /// Index of the path that `path` maps onto under a quarter-turn rotation.
    pub fn rotated_path_index(path: usize, quarter_turns: usize) -> usize {
        let entry = (path / 3 + quarter_turns) % 4;
        3 * entry + path % 3
    }

    pub fn lane_width(&self) -> f64 {
        self.config.lane_width
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Waypoints with their left unit normals, accumulated primitive by primitive.
struct PathBuilder {
    points: Vec<(Point2, Point2)>,
}

impl PathBuilder {
    fn start(p: Point2) -> Self {
        Self {
            points: vec![(p, Point2::default())],
        }
    }

    fn last(&self) -> Point2 {
        self.points.last().unwrap().0
    }

    fn line_to(&mut self, q: Point2) {
        let p = self.last();
        let d = q - p;
        let normal = (d * (1.0 / d.norm())).perp();
        let n = self.points.len();
        if n == 1 {
            self.points[0].1 = normal;
        }
        self.points.push((q, normal));
    }

    /// Arc around `center` from the current point, sweeping `sweep` radians (sign = direction).
    fn arc(&mut self, center: Point2, sweep: f64) {
        let start = self.last() - center;
        let radius = start.norm();
        let phi0 = start.y.atan2(start.x);
        let steps = (sweep.abs() / MAX_ARC_STEP - 1e-9).ceil().max(1.0) as usize;
        for k in 1..=steps {
            let phi = phi0 + sweep * k as f64 / steps as f64;
            let radial = Point2::from_angle(phi);
            let p = center + radial * radius;
            let normal = if sweep > 0.0 { -radial } else { radial };
            self.points.push((p, normal));
        }
    }

    fn finish(self, half_width: f64) -> (Vec<Point2>, Vec<Point2>, Vec<Point2>) {
        let mut center = Vec::with_capacity(self.points.len());
        let mut left = Vec::with_capacity(self.points.len());
        let mut right = Vec::with_capacity(self.points.len());
        for (p, n) in self.points {
            center.push(p);
            left.push(p + n * half_width);
            right.push(p - n * half_width);
        }
        (center, left, right)
    }
}

fn south_entry_paths(cfg: &IntersectionConfig) -> Result<Vec<(ReferencePath, Corridor)>> {
    let extent = cfg.extent();
    let half_width = 0.5 * cfg.lane_width;
    let inner = cfg.lane_offset(0);
    let outer = cfg.lane_offset(cfg.lanes_per_direction - 1);
    let mut out = Vec::with_capacity(3);
    for maneuver in Maneuver::ALL {
        let mut b;
        match maneuver {
            Maneuver::Left => {
                // Inner northbound lane into the inner westbound lane.
                let r = cfg.left_turn_radius;
                b = PathBuilder::start(Point2::new(inner, -extent));
                b.line_to(Point2::new(inner, inner - r));
                b.arc(Point2::new(inner - r, inner - r), FRAC_PI_2);
                b.line_to(Point2::new(-extent, inner));
            }
            Maneuver::Straight => {
                b = PathBuilder::start(Point2::new(outer, -extent));
                b.line_to(Point2::new(outer, extent));
            }
            Maneuver::Right => {
                // Outer northbound lane into the outer eastbound lane.
                let r = cfg.right_turn_radius;
                b = PathBuilder::start(Point2::new(outer, -extent));
                b.line_to(Point2::new(outer, -outer - r));
                b.arc(Point2::new(outer + r, -outer - r), -FRAC_PI_2);
                b.line_to(Point2::new(extent, -outer));
            }
        }
        let exit = match maneuver {
            Maneuver::Right => Direction::East,
            Maneuver::Straight => Direction::North,
            Maneuver::Left => Direction::West,
        };
        let (center, left, right) = b.finish(half_width);
        let path = ReferencePath::new(center, Direction::South, exit, maneuver)?;
        let corridor = Corridor {
            left: Polyline::new(left, Side::Right)?,
            right: Polyline::new(right, Side::Left)?,
        };
        out.push((path, corridor));
    }
    Ok(out)
}

/// Builds the four-way intersection: one arm is constructed and the other three are
/// exact quarter-turn images of it.
pub fn build_intersection(cfg: &IntersectionConfig) -> Result<IntersectionMap> {
    cfg.validate()?;
    let h = cfg.half_size();
    let extent = cfg.extent();
    let south_entry = Rect::from_corners(
        Point2::new(0.0, -extent),
        Point2::new(h, -extent + cfg.entry_length),
    );
    let south_exit = Rect::from_corners(
        Point2::new(-h, -extent - 0.5 * cfg.exit_length),
        Point2::new(0.0, -extent + cfg.exit_length),
    );
    let south = south_entry_paths(cfg)?;

    let mut reference_paths = Vec::with_capacity(12);
    let mut corridors = Vec::with_capacity(12);
    let mut entry_regions = [south_entry; 4];
    let mut exit_regions = [south_exit; 4];
    for turns in 0..4 {
        entry_regions[turns] = south_entry.rotate_quarter(turns);
        exit_regions[turns] = south_exit.rotate_quarter(turns);
        for (path, corridor) in &south {
            reference_paths.push(path.rotate_quarter(turns));
            corridors.push(Corridor {
                left: corridor.left.rotate_quarter(turns),
                right: corridor.right.rotate_quarter(turns),
            });
        }
    }
    Ok(IntersectionMap {
        config: cfg.clone(),
        entry_regions,
        exit_regions,
        reference_paths,
        corridors,
    })
}
