//! Fixed, non-learned embedders: a hashed token codebook for semantics and
//! window-local Fourier features for geometry.

use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{Geometry, GeometryKind, Point, TokenBag};
use crate::rng::{fnv1a64, rng_for};

pub const CODEBOOK_ROWS: usize = 4096;
pub const SEM_DIM: usize = 64;
pub const GEOM_DIM: usize = 21;
pub const GEOM_SAMPLES: usize = 16;
pub const FOURIER_FREQS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
pub const EMPTY_TOKEN: &str = "<empty>";

/// Row-major `CODEBOOK_ROWS x dim` table of standard normal draws.
#[derive(Debug, Clone)]
pub struct Codebook {
    dim: usize,
    rows: Vec<f64>,
}

impl Codebook {
    pub fn new(seed: u64, dim: usize) -> Self {
        let mut rng = rng_for(seed, "codebook");
        let rows = (0..CODEBOOK_ROWS * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Codebook { dim, rows }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row_of(&self, token: &str) -> &[f64] {
        let r = (fnv1a64(token.as_bytes()) % CODEBOOK_ROWS as u64) as usize;
        &self.rows[r * self.dim..(r + 1) * self.dim]
    }

    /// Sum of token rows (with multiplicity), L2-normalized.
    pub fn encode(&self, tokens: &TokenBag) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        if tokens.is_empty() {
            v.copy_from_slice(self.row_of(EMPTY_TOKEN));
        } else {
            for t in tokens.tokens() {
                for (a, b) in v.iter_mut().zip(self.row_of(t)) {
                    *a += b;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            // Tokens whose rows cancel exactly; fall back to the reserved row.
            v.copy_from_slice(self.row_of(EMPTY_TOKEN));
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

pub fn encode_semantic(tokens: &TokenBag, codebook_seed: u64) -> Vec<f64> {
    Codebook::new(codebook_seed, SEM_DIM).encode(tokens)
}

/// Center and side length of the square that defines a local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub center: Point,
    pub size: f64,
}

impl Frame {
    pub fn to_local(&self, p: Point) -> Point {
        p.sub(self.center).scale(2.0 / self.size)
    }
}

impl From<&crate::windows::SpatialWindow> for Frame {
    fn from(w: &crate::windows::SpatialWindow) -> Self {
        Frame {
            center: w.center,
            size: w.size(),
        }
    }
}

/// `n` points spaced uniformly by arc length. Closed rings wrap so the
/// first vertex is not sampled twice.
pub fn arc_samples(g: &Geometry, n: usize) -> Vec<Point> {
    let c = g.coords();
    if g.kind() == GeometryKind::Point {
        return vec![c[0]; n];
    }
    let closed = g.kind() == GeometryKind::Polygon;
    let total = g.length();
    let mut cum = Vec::with_capacity(c.len());
    cum.push(0.0);
    for w in c.windows(2) {
        cum.push(cum.last().unwrap() + w[0].dist(w[1]));
    }
    let denom = if closed { n as f64 } else { (n - 1).max(1) as f64 };
    let mut seg = 0;
    (0..n)
        .map(|k| {
            let s = total * k as f64 / denom;
            while seg + 2 < c.len() && cum[seg + 1] < s {
                seg += 1;
            }
            let len = cum[seg + 1] - cum[seg];
            let t = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
            c[seg].lerp(c[seg + 1], t)
        })
        .collect()
}

pub fn encode_geometry(g: &Geometry, frame: &Frame) -> Vec<f64> {
    use std::f64::consts::PI;
    let samples: Vec<Point> = arc_samples(g, GEOM_SAMPLES)
        .into_iter()
        .map(|p| frame.to_local(p))
        .collect();
    let m = samples.len() as f64;
    let mut out = Vec::with_capacity(GEOM_DIM);
    for f in FOURIER_FREQS {
        let mut acc = [0.0; 4];
        for p in &samples {
            let (sx, cx) = (PI * f * p.x).sin_cos();
            let (sy, cy) = (PI * f * p.y).sin_cos();
            acc[0] += sx;
            acc[1] += cx;
            acc[2] += sy;
            acc[3] += cy;
        }
        out.extend(acc.iter().map(|a| a / m));
    }
    let mut onehot = [0.0; 3];
    onehot[g.kind().index()] = 1.0;
    out.extend(onehot);
    let scale = 2.0 / frame.size;
    out.push((g.length() * scale).ln_1p());
    let area = match g.kind() {
        GeometryKind::Polygon => g.signed_area().abs() * scale * scale,
        _ => 0.0,
    };
    out.push(area.ln_1p());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(cx: f64, cy: f64) -> Frame {
        Frame {
            center: Point::new(cx, cy),
            size: 500.0,
        }
    }

    #[test]
    fn semantic_multiset_rules() {
        let cb = Codebook::new(7, SEM_DIM);
        let once = cb.encode(&TokenBag::from_tags(&["cafe"]));
        let twice = cb.encode(&TokenBag::from_tags(&["cafe", "cafe"]));
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(
            cb.encode(&TokenBag::from_tags(&["a", "b"])),
            cb.encode(&TokenBag::from_tags(&["b", "a"]))
        );
        let empty = cb.encode(&TokenBag::default());
        let norm: f64 = empty.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let row = cb.row_of(EMPTY_TOKEN);
        let rn: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, b) in empty.iter().zip(row) {
            assert!((a - b / rn).abs() < 1e-15);
        }
        assert_eq!(encode_semantic(&TokenBag::from_tags(&["x"]), 3), encode_semantic(&TokenBag::from_tags(&["x"]), 3));
        assert_ne!(encode_semantic(&TokenBag::from_tags(&["x"]), 3), encode_semantic(&TokenBag::from_tags(&["x"]), 4));
    }

    #[test]
    fn point_at_center() {
        let e = encode_geometry(&Geometry::point(250.0, 250.0), &frame(250.0, 250.0));
        assert_eq!(e.len(), GEOM_DIM);
        for k in 0..4 {
            assert_eq!(e[4 * k], 0.0);
            assert_eq!(e[4 * k + 1], 1.0);
            assert_eq!(e[4 * k + 2], 0.0);
            assert_eq!(e[4 * k + 3], 1.0);
        }
        assert_eq!(&e[16..19], &[1.0, 0.0, 0.0]);
        assert_eq!(&e[19..], &[0.0, 0.0]);
    }

    #[test]
    fn frame_dependence() {
        let p = Geometry::point(300.0, 300.0);
        assert_ne!(encode_geometry(&p, &frame(250.0, 250.0)), encode_geometry(&p, &frame(500.0, 500.0)));
        let sq = Geometry::rect(200.0, 220.0, 240.0, 260.0).unwrap();
        let moved = sq.translate(500.0, 0.0);
        let a = encode_geometry(&sq, &frame(250.0, 250.0));
        let b = encode_geometry(&moved, &frame(750.0, 250.0));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn arc_sampling() {
        let line = Geometry::polyline(&[(0.0, 0.0), (10.0, 0.0), (10.0, 5.0)]).unwrap();
        let s = arc_samples(&line, 4);
        assert_eq!(s[0], Point::new(0.0, 0.0));
        assert!((s[1].x - 5.0).abs() < 1e-12);
        assert!((s[2].x - 10.0).abs() < 1e-12 && s[2].y.abs() < 1e-12);
        assert!((s[3].y - 5.0).abs() < 1e-12);
        let sq = Geometry::rect(0.0, 0.0, 1.0, 1.0).unwrap();
        let s = arc_samples(&sq, 4);
        assert_eq!(s.len(), 4);
        let mut xs: Vec<(i64, i64)> = s.iter().map(|p| ((p.x * 4.0).round() as i64, (p.y * 4.0).round() as i64)).collect();
        xs.sort();
        xs.dedup();
        assert_eq!(xs.len(), 4);
    }
}
