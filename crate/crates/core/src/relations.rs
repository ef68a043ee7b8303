//! Metric and topological relations between geometries.
//!
//! Relations use a symmetric four-way schema with precedence
//! contains/within > adjacent > intersects > disjoint. Distances are minimum
//! Euclidean distances between the two closed point sets (a polygon is its
//! closed region, not just its ring).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Geometry, GeometryKind, Point};

/// Boundaries closer than this are treated as touching.
pub const TOUCH_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum TopoRelation {
    Disjoint = 0,
    Intersects = 1,
    Adjacent = 2,
    ContainsWithin = 3,
}

impl TopoRelation {
    pub const ALL: [TopoRelation; 4] = [
        TopoRelation::Disjoint,
        TopoRelation::Intersects,
        TopoRelation::Adjacent,
        TopoRelation::ContainsWithin,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    /// Relation of a member to the union of several anchor pieces, given its
    /// relation to each piece. Interior overlap with any piece dominates mere
    /// touching of another.
    pub fn union_of(rels: impl IntoIterator<Item = TopoRelation>) -> TopoRelation {
        let mut best = TopoRelation::Disjoint;
        for r in rels {
            let rank = |r: TopoRelation| match r {
                TopoRelation::Disjoint => 0,
                TopoRelation::Adjacent => 1,
                TopoRelation::Intersects => 2,
                TopoRelation::ContainsWithin => 3,
            };
            if rank(r) > rank(best) {
                best = r;
            }
        }
        best
    }
}

/// Where a point sits relative to a polygon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Interior,
    Boundary,
    Exterior,
}

pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a.lerp(b, t))
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    b.sub(a).cross(c.sub(a))
}

fn within_box(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    (o1 == 0.0 && within_box(a, b, c))
        || (o2 == 0.0 && within_box(a, b, d))
        || (o3 == 0.0 && within_box(c, d, a))
        || (o4 == 0.0 && within_box(c, d, b))
}

pub fn segment_segment_distance(a: Point, b: Point, c: Point, d: Point) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

/// Locate a point relative to a closed polygon ring (crossing-number test,
/// with a tolerance band on the boundary).
pub fn locate_in_polygon(p: Point, ring: &[Point]) -> Location {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if point_segment_distance(p, a, b) <= TOUCH_EPS {
            return Location::Boundary;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    if inside {
        Location::Interior
    } else {
        Location::Exterior
    }
}

/// Minimum Euclidean distance between two closed point sets.
///
/// ```
/// use nara::geometry::Geometry;
/// use nara::relations::min_distance;
/// let d = min_distance(&Geometry::point(0.0, 0.0), &Geometry::point(3.0, 4.0));
/// assert_eq!(d, 5.0);
/// ```
pub fn min_distance(g1: &Geometry, g2: &Geometry) -> f64 {
    if vertex_inside(g1, g2) || vertex_inside(g2, g1) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (a, b) in g1.segments() {
        for (c, d) in g2.segments() {
            best = best.min(segment_segment_distance(a, b, c, d));
            if best == 0.0 {
                return 0.0;
            }
        }
    }
    best
}

/// Any vertex of `g` on or inside polygon `poly`.
fn vertex_inside(g: &Geometry, poly: &Geometry) -> bool {
    poly.kind() == GeometryKind::Polygon
        && g
            .coords()
            .iter()
            .any(|&p| locate_in_polygon(p, poly.coords()) != Location::Exterior)
}

/// True iff `min_distance(anchor, member) <= radius`.
pub fn within_buffer(anchor: &Geometry, member: &Geometry, radius: f64) -> Result<bool> {
    if !(radius >= 0.0) {
        return Err(Error::Invalid(format!(
            "buffer radius must be non-negative, got {radius}"
        )));
    }
    Ok(min_distance(anchor, member) <= radius)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descriptors {
    pub centroid: Point,
    pub length: f64,
    pub area: f64,
}

/// Centroid, length (perimeter for polygons) and area of a geometry.
pub fn geometry_descriptors(g: &Geometry) -> Descriptors {
    let c = g.coords();
    match g.kind() {
        GeometryKind::Point => Descriptors {
            centroid: c[0],
            length: 0.0,
            area: 0.0,
        },
        GeometryKind::Polyline => {
            let mut total = 0.0;
            let mut acc = Point::default();
            for w in c.windows(2) {
                let l = w[0].dist(w[1]);
                total += l;
                acc = acc.add(w[0].lerp(w[1], 0.5).scale(l));
            }
            Descriptors {
                centroid: acc.scale(1.0 / total),
                length: total,
                area: 0.0,
            }
        }
        GeometryKind::Polygon => {
            let a = g.signed_area();
            let (mut cx, mut cy) = (0.0, 0.0);
            for w in c.windows(2) {
                let cr = w[0].cross(w[1]);
                cx += (w[0].x + w[1].x) * cr;
                cy += (w[0].y + w[1].y) * cr;
            }
            Descriptors {
                centroid: Point::new(cx / (6.0 * a), cy / (6.0 * a)),
                length: g.length(),
                area: a.abs(),
            }
        }
    }
}

/// Classify the symmetric topological relation of two geometries.
///
/// ```
/// use nara::geometry::Geometry;
/// use nara::relations::{classify_relation, TopoRelation};
/// let a = Geometry::rect(0.0, 0.0, 1.0, 1.0).unwrap();
/// let b = Geometry::rect(1.0, 0.0, 2.0, 1.0).unwrap();
/// assert_eq!(classify_relation(&a, &b), TopoRelation::Adjacent);
/// ```
pub fn classify_relation(g1: &Geometry, g2: &Geometry) -> TopoRelation {
    if min_distance(g1, g2) > TOUCH_EPS {
        return TopoRelation::Disjoint;
    }
    if is_within(g1, g2) || is_within(g2, g1) {
        return TopoRelation::ContainsWithin;
    }
    if interiors_intersect(g1, g2) {
        TopoRelation::Intersects
    } else {
        TopoRelation::Adjacent
    }
}

/// Sorted parameters in [0, 1] where segment `p→q` meets any of `edges`,
/// including both ends of collinear overlaps, plus 0 and 1.
fn split_params(p: Point, q: Point, edges: &[Point]) -> Vec<f64> {
    let r = q.sub(p);
    let len2 = r.dot(r);
    let mut ts = vec![0.0, 1.0];
    if len2 == 0.0 {
        return ts;
    }
    let len = len2.sqrt();
    let mut push = |t: f64| {
        if (-1e-12..=1.0 + 1e-12).contains(&t) {
            ts.push(t.clamp(0.0, 1.0));
        }
    };
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let s = b.sub(a);
        let denom = r.cross(s);
        let s_len = s.norm();
        let collinear_a = (a.sub(p).cross(r) / len).abs() <= TOUCH_EPS;
        let collinear_b = (b.sub(p).cross(r) / len).abs() <= TOUCH_EPS;
        if collinear_a && collinear_b {
            push(a.sub(p).dot(r) / len2);
            push(b.sub(p).dot(r) / len2);
            continue;
        }
        if denom.abs() > 1e-15 * len * s_len.max(1e-300) {
            let ap = a.sub(p);
            let t = ap.cross(s) / denom;
            let u = ap.cross(r) / denom;
            let tol_t = TOUCH_EPS / len;
            let tol_u = if s_len > 0.0 { TOUCH_EPS / s_len } else { 0.0 };
            if t >= -tol_t && t <= 1.0 + tol_t && u >= -tol_u && u <= 1.0 + tol_u {
                push(t);
            }
        }
        // an edge endpoint resting on the segment
        for e in [a, b] {
            if point_segment_distance(e, p, q) <= TOUCH_EPS {
                push(e.sub(p).dot(r) / len2);
            }
        }
    }
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup_by(|a, b| (*a - *b).abs() * len <= 1e-9);
    ts
}

/// Does the point set of `a` lie entirely within the closed point set of `b`?
fn is_within(a: &Geometry, b: &Geometry) -> bool {
    use GeometryKind::*;
    match (a.kind(), b.kind()) {
        (Point, Point) => a.coords()[0].dist(b.coords()[0]) <= TOUCH_EPS,
        (Point, _) => min_distance(a, b) <= TOUCH_EPS,
        (_, Point) => false,
        (Polygon, Polyline) => false,
        (Polyline, Polyline) => polyline_covered_by(a.coords(), b.coords()),
        (Polyline | Polygon, Polygon) => {
            let ring = b.coords();
            a.coords().windows(2).all(|w| {
                let ts = split_params(w[0], w[1], ring);
                ts.iter()
                    .all(|&t| locate_in_polygon(w[0].lerp(w[1], t), ring) != Location::Exterior)
                    && ts.windows(2).all(|tw| {
                        let mid = w[0].lerp(w[1], 0.5 * (tw[0] + tw[1]));
                        locate_in_polygon(mid, ring) != Location::Exterior
                    })
            })
        }
    }
}

/// Every segment of `a` is covered by collinear pieces of `b`.
fn polyline_covered_by(a: &[Point], b: &[Point]) -> bool {
    a.windows(2).all(|w| {
        let (p, q) = (w[0], w[1]);
        let r = q.sub(p);
        let len2 = r.dot(r);
        if len2 == 0.0 {
            return b
                .windows(2)
                .any(|e| point_segment_distance(p, e[0], e[1]) <= TOUCH_EPS);
        }
        let len = len2.sqrt();
        let mut intervals: Vec<(f64, f64)> = b
            .windows(2)
            .filter(|e| {
                (e[0].sub(p).cross(r) / len).abs() <= TOUCH_EPS
                    && (e[1].sub(p).cross(r) / len).abs() <= TOUCH_EPS
            })
            .map(|e| {
                let t0 = e[0].sub(p).dot(r) / len2;
                let t1 = e[1].sub(p).dot(r) / len2;
                (t0.min(t1), t0.max(t1))
            })
            .collect();
        intervals.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        let tol = TOUCH_EPS / len;
        let mut reach = 0.0;
        for (lo, hi) in intervals {
            if lo > reach + tol {
                break;
            }
            reach = f64::max(reach, hi);
        }
        reach >= 1.0 - tol
    })
}

fn polyline_boundary(coords: &[Point]) -> Vec<Point> {
    let (first, last) = (coords[0], coords[coords.len() - 1]);
    if first.dist(last) <= TOUCH_EPS {
        Vec::new()
    } else {
        vec![first, last]
    }
}

/// Do the interiors of the two geometries share a point? Only called once
/// containment has been ruled out and the geometries touch.
fn interiors_intersect(g1: &Geometry, g2: &Geometry) -> bool {
    use GeometryKind::*;
    match (g1.kind(), g2.kind()) {
        // a point touching anything is handled by containment
        (Point, _) | (_, Point) => true,
        (Polyline, Polyline) => lines_interiors_meet(g1.coords(), g2.coords()),
        (Polyline, Polygon) => line_enters_polygon(g1.coords(), g2.coords()),
        (Polygon, Polyline) => line_enters_polygon(g2.coords(), g1.coords()),
        (Polygon, Polygon) => {
            line_enters_polygon(g1.coords(), g2.coords())
                || line_enters_polygon(g2.coords(), g1.coords())
        }
    }
}

fn line_enters_polygon(line: &[Point], ring: &[Point]) -> bool {
    line.windows(2).any(|w| {
        let ts = split_params(w[0], w[1], ring);
        ts.windows(2).any(|tw| {
            let mid = w[0].lerp(w[1], 0.5 * (tw[0] + tw[1]));
            locate_in_polygon(mid, ring) == Location::Interior
        })
    })
}

fn lines_interiors_meet(a: &[Point], b: &[Point]) -> bool {
    let ba = polyline_boundary(a);
    let bb = polyline_boundary(b);
    let on_boundary =
        |p: Point, bd: &[Point]| bd.iter().any(|&e| e.dist(p) <= TOUCH_EPS);
    for w in a.windows(2) {
        let (p, q) = (w[0], w[1]);
        let ts = split_params(p, q, b);
        for &t in &ts {
            let x = p.lerp(q, t);
            let touches_b = b
                .windows(2)
                .any(|e| point_segment_distance(x, e[0], e[1]) <= TOUCH_EPS);
            if touches_b && !on_boundary(x, &ba) && !on_boundary(x, &bb) {
                return true;
            }
        }
        // collinear overlap of positive length
        for tw in ts.windows(2) {
            let mid = p.lerp(q, 0.5 * (tw[0] + tw[1]));
            if b
                .windows(2)
                .any(|e| point_segment_distance(mid, e[0], e[1]) <= TOUCH_EPS)
                && (tw[1] - tw[0]) * p.dist(q) > TOUCH_EPS
            {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use TopoRelation::*;

    fn sq(x0: f64, y0: f64, x1: f64, y1: f64) -> Geometry {
        Geometry::rect(x0, y0, x1, y1).unwrap()
    }

    fn line(c: &[(f64, f64)]) -> Geometry {
        Geometry::polyline(c).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(
            min_distance(&Geometry::point(0.0, 0.0), &Geometry::point(3.0, 4.0)),
            5.0
        );
        assert_eq!(
            min_distance(&Geometry::point(0.0, 2.0), &line(&[(-1.0, 0.0), (1.0, 0.0)])),
            2.0
        );
        assert_eq!(min_distance(&sq(0.0, 0.0, 2.0, 2.0), &sq(1.0, 1.0, 3.0, 3.0)), 0.0);
        // polygon fully inside another: no edges cross, still distance 0
        assert_eq!(min_distance(&sq(0.0, 0.0, 10.0, 10.0), &sq(4.0, 4.0, 5.0, 5.0)), 0.0);
        assert_eq!(min_distance(&sq(0.0, 0.0, 1.0, 1.0), &sq(4.0, 0.0, 5.0, 1.0)), 3.0);
    }

    #[test]
    fn relation_examples() {
        let unit = sq(0.0, 0.0, 1.0, 1.0);
        assert_eq!(classify_relation(&Geometry::point(0.5, 0.5), &unit), ContainsWithin);
        assert_eq!(classify_relation(&unit, &sq(1.0, 0.0, 2.0, 1.0)), Adjacent);
        assert_eq!(classify_relation(&sq(0.0, 0.0, 2.0, 2.0), &sq(1.0, 1.0, 3.0, 3.0)), Intersects);
        assert_eq!(classify_relation(&unit, &sq(5.0, 5.0, 6.0, 6.0)), Disjoint);
        // corner touch
        assert_eq!(classify_relation(&unit, &sq(1.0, 1.0, 2.0, 2.0)), Adjacent);
        // nested, sharing an edge
        assert_eq!(classify_relation(&sq(0.0, 0.0, 4.0, 4.0), &sq(0.0, 0.0, 1.0, 1.0)), ContainsWithin);
        assert_eq!(classify_relation(&unit, &unit), ContainsWithin);
    }

    #[test]
    fn polyline_relations() {
        let a = line(&[(0.0, 0.0), (2.0, 0.0)]);
        // crossing
        assert_eq!(classify_relation(&a, &line(&[(1.0, -1.0), (1.0, 1.0)])), Intersects);
        // T junction: endpoint on the other's interior
        assert_eq!(classify_relation(&a, &line(&[(1.0, 0.0), (1.0, 1.0)])), Adjacent);
        // noded segments sharing an endpoint
        assert_eq!(classify_relation(&a, &line(&[(2.0, 0.0), (3.0, 0.0)])), Adjacent);
        // partial collinear overlap
        assert_eq!(classify_relation(&a, &line(&[(1.0, 0.0), (3.0, 0.0)])), Intersects);
        // sub-segment
        assert_eq!(classify_relation(&a, &line(&[(0.5, 0.0), (1.5, 0.0)])), ContainsWithin);
        // line through a square
        let s = sq(0.0, 0.0, 1.0, 1.0);
        assert_eq!(classify_relation(&line(&[(-1.0, 0.5), (2.0, 0.5)]), &s), Intersects);
        // line along an edge, outside
        assert_eq!(classify_relation(&line(&[(-1.0, 0.0), (2.0, 0.0)]), &s), Adjacent);
        // line inside
        assert_eq!(classify_relation(&line(&[(0.2, 0.5), (0.8, 0.5)]), &s), ContainsWithin);
        // line from boundary inward
        assert_eq!(classify_relation(&line(&[(0.0, 0.5), (0.5, 0.5)]), &s), ContainsWithin);
        // crosses exactly through a vertex and out
        assert_eq!(classify_relation(&line(&[(-1.0, -1.0), (2.0, 2.0)]), &s), Intersects);
        // touches only a vertex from outside
        assert_eq!(classify_relation(&line(&[(1.0, 1.0), (2.0, 3.0)]), &s), Adjacent);
    }

    #[test]
    fn point_relations() {
        let p = Geometry::point(1.0, 1.0);
        assert_eq!(classify_relation(&p, &Geometry::point(1.0, 1.0)), ContainsWithin);
        assert_eq!(classify_relation(&p, &Geometry::point(1.0, 2.0)), Disjoint);
        assert_eq!(classify_relation(&p, &line(&[(0.0, 1.0), (2.0, 1.0)])), ContainsWithin);
        assert_eq!(classify_relation(&p, &sq(1.0, 0.0, 2.0, 2.0)), ContainsWithin);
    }

    #[test]
    fn concave_polygons() {
        // U shape with a square sitting in its notch, touching three sides
        let u = Geometry::polygon(&[
            (0.0, 0.0),
            (3.0, 0.0),
            (3.0, 3.0),
            (2.0, 3.0),
            (2.0, 1.0),
            (1.0, 1.0),
            (1.0, 3.0),
            (0.0, 3.0),
        ])
        .unwrap();
        assert_eq!(classify_relation(&u, &sq(1.0, 1.0, 2.0, 3.0)), Adjacent);
        assert_eq!(classify_relation(&u, &sq(1.0, 2.0, 2.0, 4.0)), Adjacent);
        assert_eq!(classify_relation(&u, &sq(0.5, 2.0, 1.5, 4.0)), Intersects);
        // a chord across the notch leaves the region
        assert_eq!(classify_relation(&line(&[(0.5, 2.0), (2.5, 2.0)]), &u), Intersects);
    }

    #[test]
    fn buffer_examples() {
        let road = line(&[(-100.0, 0.0), (100.0, 0.0)]);
        assert!(within_buffer(&road, &Geometry::point(0.0, 29.0), 30.0).unwrap());
        assert!(!within_buffer(&road, &Geometry::point(0.0, 31.0), 30.0).unwrap());
        let s = sq(0.0, 0.0, 10.0, 10.0);
        assert!(within_buffer(&s, &Geometry::point(5.0, 5.0), 5.0).unwrap());
        assert!(within_buffer(&s, &Geometry::point(5.0, 5.0), -1.0).is_err());
    }

    #[test]
    fn descriptor_examples() {
        let d = geometry_descriptors(&sq(0.0, 0.0, 1.0, 1.0));
        assert_eq!((d.centroid, d.length, d.area), (Point::new(0.5, 0.5), 4.0, 1.0));
        let d = geometry_descriptors(&line(&[(0.0, 0.0), (10.0, 0.0)]));
        assert_eq!((d.centroid, d.length, d.area), (Point::new(5.0, 0.0), 10.0, 0.0));
        let d = geometry_descriptors(&Geometry::point(3.0, 7.0));
        assert_eq!((d.centroid, d.length, d.area), (Point::new(3.0, 7.0), 0.0, 0.0));
        // clockwise ring gives the same centroid and positive area
        let cw = Geometry::polygon(&[(0.0, 0.0), (0.0, 2.0), (2.0, 2.0), (2.0, 0.0)]).unwrap();
        let d = geometry_descriptors(&cw);
        assert_eq!((d.centroid, d.area), (Point::new(1.0, 1.0), 4.0));
    }

    #[test]
    fn union_relation_prefers_interior_overlap() {
        assert_eq!(TopoRelation::union_of([Adjacent, Intersects, Disjoint]), Intersects);
        assert_eq!(TopoRelation::union_of([Disjoint, Adjacent]), Adjacent);
        assert_eq!(TopoRelation::union_of([]), Disjoint);
        assert_eq!(TopoRelation::union_of([Intersects, ContainsWithin]), ContainsWithin);
    }
}
