//! Deterministic synthetic city with relational semantic structure.
//!
//! Roads form a square grid. Every grid line is noded at each crossing and
//! split into ways of a few segments that share a parent id. Buildings sit
//! in setback slots along block faces; points of interest sit inside
//! buildings and along roads. Zones are Voronoi cells with imbalanced class
//! priors. Building tokens follow the zone, POIs inside one building follow
//! a shared category distribution, and road speeds fall with nearby POI
//! density.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Dataset, Geoentity, Geometry, Point, TokenBag};
use crate::relations::point_segment_distance;
use crate::rng::rng_for;

pub const ZONE_NAMES: [&str; 8] = [
    "residential",
    "commercial",
    "industrial",
    "institutional",
    "recreation",
    "mixed",
    "transport",
    "utility",
];

const BUILDING_VOCAB: [[&str; 3]; 8] = [
    ["house", "apartments", "terrace"],
    ["retail", "office", "mall"],
    ["warehouse", "factory", "depot"],
    ["school", "hospital", "library"],
    ["pavilion", "clubhouse", "stadium"],
    ["shophouse", "flats", "studio"],
    ["station", "terminal", "garage"],
    ["substation", "pumphouse", "plant"],
];

const POI_VOCAB: [[&str; 4]; 8] = [
    ["bakery", "kindergarten", "laundry", "clinic"],
    ["boutique", "bank", "restaurant", "jeweler"],
    ["hardware", "forklift", "lumber", "scrapyard"],
    ["classroom", "pharmacy", "museum", "lab"],
    ["playground", "gym", "pool", "garden"],
    ["cafe", "salon", "bar", "grocer"],
    ["ticketing", "parking", "taxi", "bikeshare"],
    ["meter", "tower", "tank", "valve"],
];

const ROAD_CLASSES: [(&str, f64); 3] = [("primary", 45.0), ("secondary", 35.0), ("residential", 25.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CityParams {
    pub width: f64,
    pub height: f64,
    pub road_spacing: f64,
    /// Noded segments per way.
    pub way_segments: usize,
    /// Probability that each setback slot holds a building.
    pub building_fill: f64,
    pub max_pois_per_building: usize,
    /// Probability a building hosts any POIs.
    pub poi_building_rate: f64,
    /// Expected roadside POIs per road segment.
    pub roadside_pois_per_segment: f64,
    pub zone_cells: usize,
    pub zone_priors: [f64; 8],
    /// Probability a building's token comes from a random zone.
    pub token_noise: f64,
    /// Fraction of buildings and POIs emitted with no tokens.
    pub empty_token_rate: f64,
    /// Speed drop per POI within the density radius.
    pub density_slope: f64,
    pub density_radius: f64,
    pub speed_noise: f64,
    pub seed: u64,
}

impl Default for CityParams {
    fn default() -> Self {
        Self {
            width: 1000.0,
            height: 1000.0,
            road_spacing: 100.0,
            way_segments: 2,
            building_fill: 0.45,
            max_pois_per_building: 3,
            poi_building_rate: 0.35,
            roadside_pois_per_segment: 0.5,
            zone_cells: 14,
            zone_priors: [0.6, 0.1, 0.08, 0.06, 0.05, 0.05, 0.03, 0.03],
            token_noise: 0.25,
            empty_token_rate: 0.25,
            density_slope: 1.5,
            density_radius: 50.0,
            speed_noise: 1.5,
            seed: 0,
        }
    }
}

impl CityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.road_spacing > 60.0 && self.road_spacing < self.width.min(self.height)) {
            return Err(Error::Config("road spacing must exceed 60 m and be below the extent".into()));
        }
        if self.way_segments == 0 || self.zone_cells == 0 {
            return Err(Error::Config("way_segments and zone_cells must be positive".into()));
        }
        let probs = [self.building_fill, self.poi_building_rate, self.token_noise, self.empty_token_rate];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("rates must lie in [0, 1]".into()));
        }
        if self.zone_priors.iter().any(|p| *p < 0.0) || self.zone_priors.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("zone priors must be non-negative with positive mass".into()));
        }
        Ok(())
    }
}

/// Hidden probe targets for one entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub id: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub zone: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub speed: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct City {
    pub dataset: Dataset,
    pub labels: Vec<Label>,
    /// Parent building id of each POI placed inside a building.
    pub poi_host: BTreeMap<u64, u64>,
}

impl City {
    pub fn zone_of(&self) -> BTreeMap<u64, usize> {
        self.labels.iter().filter_map(|l| l.zone.map(|z| (l.id, z))).collect()
    }

    pub fn speed_of(&self) -> BTreeMap<u64, f64> {
        self.labels.iter().filter_map(|l| l.speed.map(|s| (l.id, s))).collect()
    }

    pub fn labels_to_lines(&self) -> String {
        self.labels
            .iter()
            .map(|l| serde_json::to_string(l).expect("labels serialize") + "\n")
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("city.jsonl"), self.dataset.to_lines())?;
        std::fs::write(dir.join("labels.jsonl"), self.labels_to_lines())?;
        Ok(())
    }
}

pub fn read_labels(path: &Path) -> Result<Vec<Label>> {
    std::fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn road_class(line: usize) -> usize {
    match line % 5 {
        0 => 0,
        3 => 1,
        _ => 2,
    }
}

struct Builder {
    entities: Vec<Geoentity>,
    next_id: u64,
}

impl Builder {
    fn push(&mut self, parent: Option<u64>, tokens: TokenBag, g: Geometry) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.entities.push(Geoentity::new(id, parent, tokens, g));
        id
    }
}

pub fn generate_city(p: &CityParams) -> Result<City> {
    p.validate()?;
    let mut b = Builder {
        entities: Vec::new(),
        next_id: 1,
    };
    let mut labels = Vec::new();
    let nx = (p.width / p.road_spacing).floor() as usize;
    let ny = (p.height / p.road_spacing).floor() as usize;
    let xs: Vec<f64> = (0..=nx).map(|k| k as f64 * p.road_spacing).collect();
    let ys: Vec<f64> = (0..=ny).map(|k| k as f64 * p.road_spacing).collect();

    // Roads: horizontal lines first, then vertical.
    let mut road_segments: Vec<(u64, usize, Point, Point)> = Vec::new();
    let mut way_id = 1_000_000u64;
    for (horizontal, fixed, along) in [(true, &ys, &xs), (false, &xs, &ys)] {
        for (li, &c) in fixed.iter().enumerate() {
            let class = road_class(li);
            let tokens = TokenBag::from_tags(&["highway", ROAD_CLASSES[class].0]);
            for (si, w) in along.windows(2).enumerate() {
                if si % p.way_segments == 0 {
                    way_id += 1;
                }
                let (a, z) = if horizontal {
                    (Point::new(w[0], c), Point::new(w[1], c))
                } else {
                    (Point::new(c, w[0]), Point::new(c, w[1]))
                };
                let g = Geometry::polyline(&[(a.x, a.y), (z.x, z.y)])?;
                let id = b.push(Some(way_id), tokens.clone(), g);
                road_segments.push((id, class, a, z));
            }
        }
    }

    // Zones: Voronoi cells over uniformly placed sites.
    let mut zrng = rng_for(p.seed, "synth.zones");
    let prior = WeightedIndex::new(p.zone_priors).map_err(|e| Error::Config(e.to_string()))?;
    let sites: Vec<(Point, usize)> = (0..p.zone_cells)
        .map(|_| {
            let pt = Point::new(zrng.random_range(0.0..p.width), zrng.random_range(0.0..p.height));
            (pt, prior.sample(&mut zrng))
        })
        .collect();
    let zone_at = |q: Point| {
        sites
            .iter()
            .min_by(|a, b| a.0.dist(q).total_cmp(&b.0.dist(q)))
            .map(|s| s.1)
            .unwrap_or(0)
    };

    // Buildings in setback slots of every block face.
    let mut brng = rng_for(p.seed, "synth.buildings");
    let mut buildings: Vec<(u64, usize, BBox)> = Vec::new();
    let s = p.road_spacing;
    for bx in xs.windows(2) {
        for by in ys.windows(2) {
            let (x0, y0) = (bx[0], by[0]);
            let mut slots = Vec::new();
            for lo in [0.08, 0.6] {
                // bottom and top faces
                slots.push((x0 + lo * s, y0, true, false));
                slots.push((x0 + lo * s, y0 + s, true, true));
            }
            // left and right faces
            slots.push((x0, y0 + 0.38 * s, false, false));
            slots.push((x0 + s, y0 + 0.38 * s, false, true));
            for (sx, sy, along_x, far) in slots {
                if !brng.random_bool(p.building_fill) {
                    continue;
                }
                let setback = brng.random_range(3.0..9.0);
                let depth = brng.random_range(10.0..20.0);
                let width = brng.random_range(0.18 * s..0.3 * s);
                let rect = if along_x {
                    let yb = if far { sy - setback - depth } else { sy + setback };
                    BBox::new(sx, yb, sx + width, yb + depth)
                } else {
                    let xb = if far { sx - setback - depth } else { sx + setback };
                    BBox::new(xb, sy, xb + depth, sy + width.min(0.24 * s))
                };
                let center = Point::new(0.5 * (rect.x_min + rect.x_max), 0.5 * (rect.y_min + rect.y_max));
                let zone = zone_at(center);
                let tokens = if brng.random_bool(p.empty_token_rate) {
                    TokenBag::default()
                } else {
                    let z = if brng.random_bool(p.token_noise) { brng.random_range(0..8) } else { zone };
                    let word = BUILDING_VOCAB[z][brng.random_range(0..3)];
                    TokenBag::from_tags(&["building", word])
                };
                let g = Geometry::rect(rect.x_min, rect.y_min, rect.x_max, rect.y_max)?;
                let id = b.push(None, tokens, g);
                buildings.push((id, zone, rect));
                labels.push(Label {
                    id,
                    zone: Some(zone),
                    speed: None,
                });
            }
        }
    }

    // POIs inside buildings share the host's dominant category.
    let mut prng = rng_for(p.seed, "synth.pois");
    let mut poi_host = BTreeMap::new();
    let mut poi_points: Vec<Point> = Vec::new();
    let poi_tokens = |rng: &mut rand_chacha::ChaCha8Rng, zone: usize, favourite: Option<usize>| {
        if rng.random_bool(p.empty_token_rate) {
            return TokenBag::default();
        }
        let k = match favourite {
            Some(f) if rng.random_bool(0.7) => f,
            _ => rng.random_range(0..4),
        };
        TokenBag::from_tags(&["amenity", POI_VOCAB[zone][k]])
    };
    for &(bid, zone, rect) in &buildings {
        if !prng.random_bool(p.poi_building_rate) {
            continue;
        }
        let favourite = prng.random_range(0..4);
        let count = prng.random_range(1..=p.max_pois_per_building.max(1));
        for _ in 0..count {
            let q = Point::new(
                prng.random_range(rect.x_min + 1.0..rect.x_max - 1.0),
                prng.random_range(rect.y_min + 1.0..rect.y_max - 1.0),
            );
            let tokens = poi_tokens(&mut prng, zone, Some(favourite));
            let id = b.push(None, tokens, Geometry::point(q.x, q.y));
            poi_host.insert(id, bid);
            poi_points.push(q);
        }
    }
    // Roadside POIs, never inside a building.
    let per_segment = p.roadside_pois_per_segment;
    for &(_, _, a, z) in &road_segments {
        let mut count = per_segment.floor() as usize;
        if prng.random_bool(per_segment.fract()) {
            count += 1;
        }
        for _ in 0..count {
            let t = prng.random_range(0.1..0.9);
            let off = prng.random_range(2.0..25.0) * if prng.random_bool(0.5) { 1.0 } else { -1.0 };
            let dir = z.sub(a).scale(1.0 / a.dist(z));
            let q = a.lerp(z, t).add(Point::new(-dir.y, dir.x).scale(off));
            if q.x <= 0.0 || q.y <= 0.0 || q.x >= xs[nx] || q.y >= ys[ny] {
                continue;
            }
            if buildings.iter().any(|(_, _, r)| r.expand(1.0).contains_bbox(&BBox::new(q.x, q.y, q.x, q.y))) {
                continue;
            }
            let zone = zone_at(q);
            let tokens = poi_tokens(&mut prng, zone, None);
            b.push(None, tokens, Geometry::point(q.x, q.y));
            poi_points.push(q);
        }
    }

    // Speeds fall with nearby POI density.
    let mut srng = rng_for(p.seed, "synth.speed");
    let noise = Normal::new(0.0, p.speed_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut road_labels = Vec::new();
    for &(id, class, a, z) in &road_segments {
        let density = poi_points
            .iter()
            .filter(|&&q| point_segment_distance(q, a, z) <= p.density_radius)
            .count() as f64;
        let speed = ROAD_CLASSES[class].1 - p.density_slope * density + noise.sample(&mut srng);
        road_labels.push(Label {
            id,
            zone: None,
            speed: Some(speed),
        });
    }
    road_labels.extend(labels);
    let extent = BBox::new(0.0, 0.0, xs[nx], ys[ny]);
    Ok(City {
        dataset: Dataset::new(b.entities, extent)?,
        labels: road_labels,
        poi_host,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeometryKind;
    use crate::relations::{classify_relation, TopoRelation};

    #[test]
    fn grid_lines_and_noding() {
        let city = generate_city(&CityParams::default()).unwrap();
        let roads: Vec<_> = city.dataset.entities.iter().filter(|e| e.kind() == GeometryKind::Polyline).collect();
        // 11 + 11 lines, 10 segments each
        assert_eq!(roads.len(), 220);
        let ways: std::collections::BTreeSet<_> = roads.iter().map(|e| e.parent_id.unwrap()).collect();
        assert_eq!(ways.len(), 22 * 5);
    }

    #[test]
    fn pois_inside_their_building() {
        let city = generate_city(&CityParams::default()).unwrap();
        let idx = city.dataset.index_of();
        assert!(!city.poi_host.is_empty());
        for (poi, host) in &city.poi_host {
            let a = &city.dataset.entities[idx[poi]].geometry;
            let b = &city.dataset.entities[idx[host]].geometry;
            assert_eq!(classify_relation(a, b), TopoRelation::ContainsWithin);
        }
    }

    #[test]
    fn deterministic_and_seeded() {
        let a = generate_city(&CityParams::default()).unwrap();
        let b = generate_city(&CityParams::default()).unwrap();
        assert_eq!(a.dataset.to_lines(), b.dataset.to_lines());
        assert_eq!(a.labels_to_lines(), b.labels_to_lines());
        let c = generate_city(&CityParams { seed: 1, ..Default::default() }).unwrap();
        assert_ne!(a.dataset.to_lines(), c.dataset.to_lines());
    }

    #[test]
    fn buildings_near_roads_and_disjoint() {
        let city = generate_city(&CityParams::default()).unwrap();
        let b: Vec<_> = city.dataset.entities.iter().filter(|e| e.kind() == GeometryKind::Polygon).collect();
        assert!(b.len() > 100);
        for (i, x) in b.iter().enumerate() {
            let bb = x.geometry.bbox();
            let (cx, cy) = (bb.x_min.rem_euclid(100.0), bb.y_min.rem_euclid(100.0));
            let (ex, ey) = ((bb.x_max).rem_euclid(100.0), (bb.y_max).rem_euclid(100.0));
            let near = cx <= 30.0 || cy <= 30.0 || ex >= 70.0 || ey >= 70.0;
            assert!(near, "{bb:?}");
            for y in &b[i + 1..] {
                assert!(!bb.intersects(&y.geometry.bbox()));
            }
        }
        let zones = city.zone_of();
        assert_eq!(zones.len(), b.len());
        assert_eq!(city.speed_of().len(), 220);
    }
}
