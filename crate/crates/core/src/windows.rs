//! Spatial windows, neighborhoods, masks, anchor sibling groups and pair
//! sampling.
//!
//! Windows are closed squares tiled over the dataset extent. Membership is
//! inclusive: an entity touching a shared edge belongs to every window that
//! edge bounds. Inside a window, all entity indices are *local* positions
//! into [`SpatialWindow::members`].

use std::collections::{BTreeMap, HashSet};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AnchorKey, BBox, Dataset, Geometry, GeometryKind, Point};
use crate::index::GridIndex;
use crate::relations::{classify_relation, min_distance, TopoRelation};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub size: f64,
    pub stride: f64,
    /// Maximum entities kept per window, nearest to the window center.
    pub cap: usize,
    /// Buffer for polyline anchors (point and polygon members).
    pub line_buffer: f64,
    /// Buffer for polygon anchors (point members).
    pub polygon_buffer: f64,
    /// Maximum separation of same-type global baseline pairs.
    pub global_radius: f64,
    pub n_random: usize,
    pub n_hard: usize,
    pub n_global: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            size: 500.0,
            stride: 250.0,
            cap: 128,
            line_buffer: 30.0,
            polygon_buffer: 5.0,
            global_radius: 100.0,
            n_random: 32,
            n_hard: 16,
            n_global: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWindow {
    pub index: usize,
    pub bounds: BBox,
    pub center: Point,
    /// Dataset indices of the entities the model attends over (capped).
    pub members: Vec<usize>,
    /// Dataset indices of every entity intersecting the window.
    pub neighborhood: Vec<usize>,
}

impl SpatialWindow {
    pub fn size(&self) -> f64 {
        self.bounds.width()
    }
}

/// Window origins along one axis.
fn axis_origins(min: f64, extent: f64, size: f64, stride: f64) -> Vec<f64> {
    if extent <= size {
        return vec![min];
    }
    let k = ((extent - size) / stride + 1e-9).floor() as usize;
    (0..=k).map(|i| min + i as f64 * stride).collect()
}

/// Window squares tiling `extent`, row-major from the lower-left corner.
pub fn window_bounds(extent: &BBox, size: f64, stride: f64) -> Result<Vec<BBox>> {
    if !(size > 0.0 && stride > 0.0 && stride <= size) {
        return Err(Error::Config(format!(
            "window size {size} and stride {stride} must satisfy 0 < stride <= size"
        )));
    }
    let xs = axis_origins(extent.x_min, extent.width(), size, stride);
    let ys = axis_origins(extent.y_min, extent.height(), size, stride);
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| BBox::new(x, y, x + size, y + size)))
        .collect())
}

/// Tile the dataset and resolve each window's neighborhood.
pub fn build_windows(dataset: &Dataset, cfg: &WindowConfig) -> Result<Vec<SpatialWindow>> {
    let bounds = window_bounds(&dataset.extent, cfg.size, cfg.stride)?;
    let index = GridIndex::new(dataset, (cfg.size / 4.0).max(1.0));
    Ok(bounds
        .into_iter()
        .enumerate()
        .map(|(wi, b)| {
            let square = Geometry::rect(b.x_min, b.y_min, b.x_max, b.y_max)
                .expect("window square is a valid polygon");
            let neighborhood: Vec<usize> = index
                .query(&b)
                .into_iter()
                .filter(|&i| min_distance(&dataset.entities[i].geometry, &square) == 0.0)
                .collect();
            let center = Point::new(0.5 * (b.x_min + b.x_max), 0.5 * (b.y_min + b.y_max));
            let members = nearest_members(dataset, &neighborhood, center, cfg.cap);
            SpatialWindow {
                index: wi,
                bounds: b,
                center,
                members,
                neighborhood,
            }
        })
        .collect())
}

/// The `cap` entities nearest to `center` (ties broken by dataset index),
/// returned in ascending dataset order.
pub fn nearest_members(dataset: &Dataset, candidates: &[usize], center: Point, cap: usize) -> Vec<usize> {
    if candidates.len() <= cap {
        return candidates.to_vec();
    }
    let c = Geometry::point(center.x, center.y);
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .map(|&i| (min_distance(&dataset.entities[i].geometry, &c), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut kept: Vec<usize> = scored.into_iter().take(cap).map(|(_, i)| i).collect();
    kept.sort_unstable();
    kept
}

/// Uniformly choose `max(1, floor(ratio * n))` local positions to mask, or
/// none when fewer than two entities are present.
pub fn select_masks<R: Rng>(n: usize, ratio: f64, rng: &mut R) -> Vec<usize> {
    if n < 2 {
        return Vec::new();
    }
    let k = ((ratio * n as f64).floor() as usize).clamp(1, n);
    let mut m = sample(rng, n, k).into_vec();
    m.sort_unstable();
    m
}

/// Entities sharing one relation to one anchor inside a window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiblingGroup {
    pub anchor: AnchorKey,
    pub relation: TopoRelation,
    pub member_kind: GeometryKind,
    /// Local positions, ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Random,
    Hard,
    GlobalBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairSample {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    pub relation: TopoRelation,
    pub kind: PairKind,
}

/// Per-window geometry facts shared by every epoch: pairwise distances and
/// relations, sibling groups and the purified global pair pool.
#[derive(Debug, Clone)]
pub struct WindowContext {
    pub window: SpatialWindow,
    pub kinds: Vec<GeometryKind>,
    /// Equal values iff the entities' token multisets are equal.
    pub token_class: Vec<usize>,
    dist: Vec<f64>,
    rel: Vec<TopoRelation>,
    pub groups: Vec<SiblingGroup>,
    /// Same-type pairs within the global radius that are not co-siblings.
    pub global_pool: Vec<(usize, usize)>,
}

impl WindowContext {
    pub fn build(dataset: &Dataset, window: SpatialWindow, cfg: &WindowConfig) -> Self {
        let ents: Vec<_> = window.members.iter().map(|&i| &dataset.entities[i]).collect();
        let n = ents.len();
        let mut dist = vec![0.0; n * n];
        let mut rel = vec![TopoRelation::ContainsWithin; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let (gi, gj) = (&ents[i].geometry, &ents[j].geometry);
                let d = min_distance(gi, gj);
                let r = if d > crate::relations::TOUCH_EPS {
                    TopoRelation::Disjoint
                } else {
                    classify_relation(gi, gj)
                };
                dist[i * n + j] = d;
                dist[j * n + i] = d;
                rel[i * n + j] = r;
                rel[j * n + i] = r;
            }
        }
        let mut classes = BTreeMap::new();
        let token_class = ents
            .iter()
            .map(|e| {
                let next = classes.len();
                *classes.entry(e.tokens.clone()).or_insert(next)
            })
            .collect();
        let mut ctx = WindowContext {
            kinds: ents.iter().map(|e| e.kind()).collect(),
            token_class,
            dist,
            rel,
            groups: Vec::new(),
            global_pool: Vec::new(),
            window,
        };
        ctx.groups = build_sibling_groups(&ctx, dataset, cfg);
        ctx.global_pool = global_pool(&ctx, cfg.global_radius);
        ctx
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.len() + j]
    }

    pub fn relation(&self, i: usize, j: usize) -> TopoRelation {
        self.rel[i * self.len() + j]
    }

    /// For each entity, every other member of any group it belongs to.
    pub fn sibling_sets(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); self.len()];
        for g in &self.groups {
            for &i in &g.members {
                sets[i].extend(g.members.iter().copied().filter(|&j| j != i));
            }
        }
        for s in &mut sets {
            s.sort_unstable();
            s.dedup();
        }
        sets
    }

    /// Unordered co-sibling pairs `(i, j)` with `i < j`.
    pub fn sibling_pairs(&self) -> HashSet<(usize, usize)> {
        let mut out = HashSet::new();
        for g in &self.groups {
            for (a, &i) in g.members.iter().enumerate() {
                for &j in &g.members[a + 1..] {
                    out.insert((i.min(j), i.max(j)));
                }
            }
        }
        out
    }
}

/// Group point and polygon members by (anchor, relation, member type).
///
/// Polyline anchors take point and polygon members within the line buffer,
/// with noded segments of one way merged into a single anchor; polygon
/// anchors take point members within the polygon buffer. Anchors must be
/// window members themselves.
pub fn build_sibling_groups(ctx: &WindowContext, dataset: &Dataset, cfg: &WindowConfig) -> Vec<SiblingGroup> {
    let members = &ctx.window.members;
    let n = members.len();
    let mut anchors: BTreeMap<AnchorKey, (GeometryKind, Vec<usize>)> = BTreeMap::new();
    for (local, &gi) in members.iter().enumerate() {
        let e = &dataset.entities[gi];
        if matches!(e.kind(), GeometryKind::Polyline | GeometryKind::Polygon) {
            anchors
                .entry(e.anchor_key())
                .or_insert_with(|| (e.kind(), Vec::new()))
                .1
                .push(local);
        }
    }

    let mut groups: BTreeMap<(AnchorKey, TopoRelation, GeometryKind), Vec<usize>> = BTreeMap::new();
    for (key, (anchor_kind, pieces)) in &anchors {
        let (buffer, allowed): (f64, &[GeometryKind]) = match anchor_kind {
            GeometryKind::Polyline => (cfg.line_buffer, &[GeometryKind::Point, GeometryKind::Polygon]),
            _ => (cfg.polygon_buffer, &[GeometryKind::Point]),
        };
        for m in 0..n {
            let kind = ctx.kinds[m];
            if !allowed.contains(&kind) || pieces.contains(&m) {
                continue;
            }
            let d = pieces
                .iter()
                .map(|&p| ctx.distance(m, p))
                .fold(f64::INFINITY, f64::min);
            if d > buffer {
                continue;
            }
            let r = TopoRelation::union_of(pieces.iter().map(|&p| ctx.relation(m, p)));
            groups.entry((*key, r, kind)).or_default().push(m);
        }
    }
    groups
        .into_iter()
        .filter(|(_, m)| !m.is_empty())
        .map(|((anchor, relation, member_kind), members)| SiblingGroup {
            anchor,
            relation,
            member_kind,
            members,
        })
        .collect()
}

fn global_pool(ctx: &WindowContext, radius: f64) -> Vec<(usize, usize)> {
    let siblings = ctx.sibling_pairs();
    let n = ctx.len();
    let mut out = Vec::new();
    for i in 0..n {
        if !matches!(ctx.kinds[i], GeometryKind::Point | GeometryKind::Polygon) {
            continue;
        }
        for j in (i + 1)..n {
            if ctx.kinds[j] == ctx.kinds[i]
                && ctx.distance(i, j) <= radius
                && !siblings.contains(&(i, j))
            {
                out.push((i, j));
            }
        }
    }
    out
}

/// Up to `n_hard` non-disjoint pairs, then up to `n_random` uniform pairs
/// from everything not already chosen.
pub fn sample_geo_pairs<R: Rng>(ctx: &WindowContext, n_random: usize, n_hard: usize, rng: &mut R) -> Vec<PairSample> {
    let n = ctx.len();
    if n < 2 {
        return Vec::new();
    }
    let all: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let hard_pool: Vec<usize> = (0..all.len())
        .filter(|&p| ctx.relation(all[p].0, all[p].1) != TopoRelation::Disjoint)
        .collect();
    let mut chosen = vec![false; all.len()];
    let mut out = Vec::new();
    let make = |(i, j): (usize, usize), kind| PairSample {
        i,
        j,
        distance: ctx.distance(i, j),
        relation: ctx.relation(i, j),
        kind,
    };
    for k in sample(rng, hard_pool.len(), n_hard.min(hard_pool.len())) {
        let p = hard_pool[k];
        chosen[p] = true;
        out.push(make(all[p], PairKind::Hard));
    }
    let rest: Vec<usize> = (0..all.len()).filter(|&p| !chosen[p]).collect();
    for k in sample(rng, rest.len(), n_random.min(rest.len())) {
        out.push(make(all[rest[k]], PairKind::Random));
    }
    out
}

/// Uniform sample of purified same-type pairs for the semivariogram baseline.
pub fn sample_global_pairs<R: Rng>(ctx: &WindowContext, n_global: usize, rng: &mut R) -> Vec<PairSample> {
    let pool = &ctx.global_pool;
    let mut idx = sample(rng, pool.len(), n_global.min(pool.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter()
        .map(|k| {
            let (i, j) = pool[k];
            PairSample {
                i,
                j,
                distance: ctx.distance(i, j),
                relation: ctx.relation(i, j),
                kind: PairKind::GlobalBaseline,
            }
        })
        .collect()
}
