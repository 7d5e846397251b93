//! Exact footprint tests: separating-axis test between oriented rectangles and
//! segment-versus-rectangle intersection for road boundaries.

use crate::geometry::{Point2, Polyline};

fn project(corners: &[Point2; 4], axis: Point2) -> (f64, f64) {
    corners
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            let p = c.dot(axis);
            (lo.min(p), hi.max(p))
        })
}

fn edge_axes(corners: &[Point2; 4]) -> [Point2; 2] {
    let a = corners[1] - corners[0];
    let b = corners[3] - corners[0];
    [a * (1.0 / a.norm()), b * (1.0 / b.norm())]
}

/// Largest interval gap over the four separating axes. Positive means the
/// rectangles are separated by at least that much; non-positive means they
/// overlap (or touch), with `-gap` the smallest penetration depth.
pub fn separation_gap(a: &[Point2; 4], b: &[Point2; 4]) -> f64 {
    let mut gap = f64::NEG_INFINITY;
    for axis in edge_axes(a).into_iter().chain(edge_axes(b)) {
        let (a_lo, a_hi) = project(a, axis);
        let (b_lo, b_hi) = project(b, axis);
        gap = gap.max((b_lo - a_hi).max(a_lo - b_hi));
    }
    gap
}

/// Closed rectangles intersect (touching counts).
pub fn rectangles_overlap(a: &[Point2; 4], b: &[Point2; 4]) -> bool {
    separation_gap(a, b) <= 0.0
}

pub fn point_in_rectangle(p: Point2, corners: &[Point2; 4]) -> bool {
    (0..4).all(|k| {
        let a = corners[k];
        let b = corners[(k + 1) % 4];
        (b - a).cross(p - a) >= 0.0
    })
}

fn orientation(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

pub fn segments_intersect(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
    let d1 = orientation(q1, q2, p1);
    let d2 = orientation(q1, q2, p2);
    let d3 = orientation(p1, p2, q1);
    let d4 = orientation(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Segment meets the filled rectangle (corners counter-clockwise).
pub fn segment_hits_rectangle(a: Point2, b: Point2, corners: &[Point2; 4]) -> bool {
    if point_in_rectangle(a, corners) || point_in_rectangle(b, corners) {
        return true;
    }
    (0..4).any(|k| segments_intersect(a, b, corners[k], corners[(k + 1) % 4]))
}

pub fn polyline_hits_rectangle(line: &Polyline, corners: &[Point2; 4]) -> bool {
    let (lo, hi) = corners.iter().fold(
        (
            Point2::new(f64::INFINITY, f64::INFINITY),
            Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        ),
        |(lo, hi), c| {
            (
                Point2::new(lo.x.min(c.x), lo.y.min(c.y)),
                Point2::new(hi.x.max(c.x), hi.y.max(c.y)),
            )
        },
    );
    line.segments().any(|(a, b)| {
        // Cheap bounding-box rejection before the exact test.
        if a.x.max(b.x) < lo.x || a.x.min(b.x) > hi.x || a.y.max(b.y) < lo.y || a.y.min(b.y) > hi.y
        {
            return false;
        }
        segment_hits_rectangle(a, b, corners)
    })
}
