//! Brute-force rasterized reference for [`classify_relation`].
//!
//! Shapes are drawn on an integer lattice with axis-aligned and 45° edges, so
//! every vertex and every edge crossing lands on a point of a fine sampling
//! lattice (step 1/8). Each geometry is rasterized into labeled samples
//! (interior or boundary), and the relation is read off by testing samples
//! against the other geometry with exact predicates. Nothing here calls into
//! [`crate::relations`].
//!
//! [`classify_relation`]: crate::relations::classify_relation

use std::collections::BTreeSet;

use rand::Rng;
use serde::Serialize;

use crate::geometry::{Geometry, GeometryKind, Point};
use crate::relations::{classify_relation, TopoRelation};

/// Sampling step of the raster.
pub const STEP: f64 = 0.125;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Interior,
    Boundary,
}

fn key(p: Point) -> (i64, i64) {
    ((p.x / STEP).round() as i64, (p.y / STEP).round() as i64)
}

fn on_segment_exact(p: Point, a: Point, b: Point) -> bool {
    let cr = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    cr == 0.0
        && p.x >= a.x.min(b.x)
        && p.x <= a.x.max(b.x)
        && p.y >= a.y.min(b.y)
        && p.y <= a.y.max(b.y)
}

fn winding_number(p: Point, ring: &[Point]) -> i32 {
    let mut wn = 0;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        let is_left = (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y);
        if a.y <= p.y {
            if b.y > p.y && is_left > 0.0 {
                wn += 1;
            }
        } else if b.y <= p.y && is_left < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// Where `p` sits in `g`: `Some(Interior)`, `Some(Boundary)`, or `None`.
fn membership(p: Point, g: &Geometry) -> Option<Part> {
    let c = g.coords();
    match g.kind() {
        GeometryKind::Point => (p == c[0]).then_some(Part::Interior),
        GeometryKind::Polyline => {
            if !c.windows(2).any(|w| on_segment_exact(p, w[0], w[1])) {
                return None;
            }
            let closed = c[0] == c[c.len() - 1];
            if !closed && (p == c[0] || p == c[c.len() - 1]) {
                Some(Part::Boundary)
            } else {
                Some(Part::Interior)
            }
        }
        GeometryKind::Polygon => {
            if c.windows(2).any(|w| on_segment_exact(p, w[0], w[1])) {
                Some(Part::Boundary)
            } else if winding_number(p, c) != 0 {
                Some(Part::Interior)
            } else {
                None
            }
        }
    }
}

fn rasterize(g: &Geometry) -> Vec<(Point, Part)> {
    let c = g.coords();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut push = |p: Point, out: &mut Vec<(Point, Part)>| {
        if seen.insert(key(p)) {
            if let Some(part) = membership(p, g) {
                out.push((p, part));
            }
        }
    };
    match g.kind() {
        GeometryKind::Point => push(c[0], &mut out),
        GeometryKind::Polyline => {
            for w in c.windows(2) {
                let d = w[1].sub(w[0]);
                let n = (d.x.abs().max(d.y.abs()) / STEP).round() as usize;
                for k in 0..=n {
                    push(w[0].lerp(w[1], k as f64 / n as f64), &mut out);
                }
            }
        }
        GeometryKind::Polygon => {
            let b = g.bbox();
            let (i0, j0) = key(Point::new(b.x_min, b.y_min));
            let (i1, j1) = key(Point::new(b.x_max, b.y_max));
            for i in i0..=i1 {
                for j in j0..=j1 {
                    push(Point::new(i as f64 * STEP, j as f64 * STEP), &mut out);
                }
            }
        }
    }
    out
}

/// Relation computed by the raster oracle.
pub fn oracle_relation(a: &Geometry, b: &Geometry) -> TopoRelation {
    let sa = rasterize(a);
    let sb = rasterize(b);
    let in_b: Vec<Option<Part>> = sa.iter().map(|(p, _)| membership(*p, b)).collect();
    let in_a: Vec<Option<Part>> = sb.iter().map(|(p, _)| membership(*p, a)).collect();

    let touch = in_b.iter().chain(&in_a).any(Option::is_some);
    if !touch {
        return TopoRelation::Disjoint;
    }
    let a_within_b = in_b.iter().all(Option::is_some);
    let b_within_a = in_a.iter().all(Option::is_some);
    if a_within_b || b_within_a {
        return TopoRelation::ContainsWithin;
    }
    let interiors_meet = sa
        .iter()
        .zip(&in_b)
        .any(|((_, pa), m)| *pa == Part::Interior && *m == Some(Part::Interior))
        || sb
            .iter()
            .zip(&in_a)
            .any(|((_, pb), m)| *pb == Part::Interior && *m == Some(Part::Interior));
    if interiors_meet {
        TopoRelation::Intersects
    } else {
        TopoRelation::Adjacent
    }
}

const DIRS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (1.0, 1.0),
    (0.0, 1.0),
    (-1.0, 1.0),
    (-1.0, 0.0),
    (-1.0, -1.0),
    (0.0, -1.0),
    (1.0, -1.0),
];

/// Random lattice shape inside `[0, grid]²`. Returns `None` for degenerate
/// draws (invalid geometry or a self-touching polyline).
pub fn random_lattice_shape<R: Rng>(rng: &mut R, grid: i32) -> Option<Geometry> {
    let g = grid as f64;
    let ip = |rng: &mut R| rng.random_range(0..=grid) as f64;
    match rng.random_range(0..6) {
        0 => Some(Geometry::point(ip(rng), ip(rng))),
        1 => {
            let mut pts = vec![Point::new(ip(rng), ip(rng))];
            for _ in 0..rng.random_range(1..=3) {
                let (dx, dy) = DIRS[rng.random_range(0..8)];
                let len = rng.random_range(1..=3) as f64;
                let last = *pts.last().unwrap();
                let next = Point::new(last.x + dx * len, last.y + dy * len);
                if next.x < 0.0 || next.y < 0.0 || next.x > g || next.y > g {
                    break;
                }
                pts.push(next);
            }
            let geom = Geometry::new(GeometryKind::Polyline, pts).ok()?;
            polyline_is_simple(&geom).then_some(geom)
        }
        2 => {
            let (x0, x1) = ordered(ip(rng), ip(rng));
            let (y0, y1) = ordered(ip(rng), ip(rng));
            Geometry::rect(x0, y0, x1, y1).ok()
        }
        3 => {
            // right isosceles triangle with axis-aligned legs
            let (x, y) = (ip(rng), ip(rng));
            let l = rng.random_range(1..=4) as f64;
            let (sx, sy) = ([1.0, -1.0][rng.random_range(0..2)], [1.0, -1.0][rng.random_range(0..2)]);
            let pts = [(x, y), (x + sx * l, y), (x, y + sy * l)];
            if pts.iter().any(|&(a, b)| a < 0.0 || b < 0.0 || a > g || b > g) {
                return None;
            }
            Geometry::polygon(&pts).ok()
        }
        4 => {
            // diamond: a square rotated by 45°
            let (cx, cy) = (ip(rng), ip(rng));
            let r = rng.random_range(1..=2) as f64;
            let pts = [(cx, cy - r), (cx + r, cy), (cx, cy + r), (cx - r, cy)];
            if pts.iter().any(|&(a, b)| a < 0.0 || b < 0.0 || a > g || b > g) {
                return None;
            }
            Geometry::polygon(&pts).ok()
        }
        _ => {
            // L shape
            let (x0, y0) = (ip(rng), ip(rng));
            let (w, h) = (rng.random_range(2..=4) as f64, rng.random_range(2..=4) as f64);
            let (cw, ch) = (rng.random_range(1..w as i32) as f64, rng.random_range(1..h as i32) as f64);
            if x0 + w > g || y0 + h > g {
                return None;
            }
            Geometry::polygon(&[
                (x0, y0),
                (x0 + w, y0),
                (x0 + w, y0 + ch),
                (x0 + cw, y0 + ch),
                (x0 + cw, y0 + h),
                (x0, y0 + h),
            ])
            .ok()
        }
    }
}

fn ordered(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn polyline_is_simple(g: &Geometry) -> bool {
    let c = g.coords();
    if c[0] == c[c.len() - 1] {
        return false;
    }
    let mut seen = BTreeSet::new();
    for (k, w) in c.windows(2).enumerate() {
        let d = w[1].sub(w[0]);
        let n = (d.x.abs().max(d.y.abs()) / STEP).round() as usize;
        // the first sample of later segments repeats the shared vertex
        let start = usize::from(k > 0);
        for s in start..=n {
            if !seen.insert(key(w[0].lerp(w[1], s as f64 / n as f64))) {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, Serialize)]
pub struct Disagreement {
    pub a: Vec<[f64; 2]>,
    pub a_kind: GeometryKind,
    pub b: Vec<[f64; 2]>,
    pub b_kind: GeometryKind,
    pub classified: u8,
    pub oracle: u8,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub pairs: usize,
    pub degenerate_skipped: usize,
    pub agreements: usize,
    pub asymmetric: usize,
    /// Count per relation code, as seen by the oracle.
    pub relation_counts: [usize; 4],
    pub disagreements: Vec<Disagreement>,
}

impl OracleReport {
    pub fn agreement_rate(&self) -> f64 {
        if self.pairs == 0 {
            1.0
        } else {
            self.agreements as f64 / self.pairs as f64
        }
    }

    pub fn passed(&self) -> bool {
        self.agreements == self.pairs && self.asymmetric == 0
    }
}

/// Compare the implementation against the oracle on `n_pairs`
/// non-degenerate random lattice pairs.
pub fn run_oracle_check<R: Rng>(rng: &mut R, n_pairs: usize, grid: i32) -> OracleReport {
    let mut report = OracleReport {
        pairs: 0,
        degenerate_skipped: 0,
        agreements: 0,
        asymmetric: 0,
        relation_counts: [0; 4],
        disagreements: Vec::new(),
    };
    while report.pairs < n_pairs {
        let (Some(a), Some(b)) = (random_lattice_shape(rng, grid), random_lattice_shape(rng, grid))
        else {
            report.degenerate_skipped += 1;
            continue;
        };
        report.pairs += 1;
        let got = classify_relation(&a, &b);
        let rev = classify_relation(&b, &a);
        let want = oracle_relation(&a, &b);
        report.relation_counts[want.code()] += 1;
        if got != rev {
            report.asymmetric += 1;
        }
        if got == want {
            report.agreements += 1;
        } else if report.disagreements.len() < 20 {
            let pts = |g: &Geometry| g.coords().iter().map(|p| [p.x, p.y]).collect();
            report.disagreements.push(Disagreement {
                a: pts(&a),
                a_kind: a.kind(),
                b: pts(&b),
                b_kind: b.kind(),
                classified: got as u8,
                oracle: want as u8,
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_on_hand_cases() {
        let a = Geometry::rect(0.0, 0.0, 1.0, 1.0).unwrap();
        let b = Geometry::rect(1.0, 0.0, 2.0, 1.0).unwrap();
        assert_eq!(oracle_relation(&a, &b), TopoRelation::Adjacent);
        let c = Geometry::rect(0.0, 0.0, 2.0, 2.0).unwrap();
        let d = Geometry::rect(1.0, 1.0, 3.0, 3.0).unwrap();
        assert_eq!(oracle_relation(&c, &d), TopoRelation::Intersects);
        let x1 = Geometry::polyline(&[(0.0, 0.0), (1.0, 1.0)]).unwrap();
        let x2 = Geometry::polyline(&[(0.0, 1.0), (1.0, 0.0)]).unwrap();
        assert_eq!(oracle_relation(&x1, &x2), TopoRelation::Intersects);
        assert_eq!(
            oracle_relation(&Geometry::point(0.5, 0.5), &a),
            TopoRelation::ContainsWithin
        );
        assert_eq!(oracle_relation(&a, &Geometry::point(5.0, 5.0)), TopoRelation::Disjoint);
    }
}
