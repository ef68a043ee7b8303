//! Geoentities, their geometries, and the line-delimited ingestion format.
//!
//! Coordinates are planar meters. Longitude/latitude input goes through
//! [`project_lonlat`] before parsing into entities.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Earth radius used by the local equirectangular projection.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point) -> f64 {
        self.sub(o).norm()
    }

    pub fn lerp(self, o: Point, t: f64) -> Point {
        Point::new(self.x + (o.x - self.x) * t, self.y + (o.y - self.y) * t)
    }
}

impl From<[f64; 2]> for Point {
    fn from(p: [f64; 2]) -> Self {
        Point::new(p[0], p[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Point,
    Polyline,
    Polygon,
}

impl GeometryKind {
    pub fn index(self) -> usize {
        match self {
            GeometryKind::Point => 0,
            GeometryKind::Polyline => 1,
            GeometryKind::Polygon => 2,
        }
    }
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeometryKind::Point => "point",
            GeometryKind::Polyline => "polyline",
            GeometryKind::Polygon => "polygon",
        })
    }
}

/// A validated point, polyline, or polygon (exterior ring only, closed).
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    kind: GeometryKind,
    coords: Vec<Point>,
}

impl Geometry {
    /// Build and validate a geometry.
    pub fn new(kind: GeometryKind, coords: Vec<Point>) -> Result<Self> {
        validate(kind, &coords)?;
        Ok(Self { kind, coords })
    }

    pub fn point(x: f64, y: f64) -> Self {
        Self {
            kind: GeometryKind::Point,
            coords: vec![Point::new(x, y)],
        }
    }

    pub fn polyline(coords: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            GeometryKind::Polyline,
            coords.iter().map(|&(x, y)| Point::new(x, y)).collect(),
        )
    }

    /// Polygon from a ring; the ring is closed automatically if it is not.
    pub fn polygon(ring: &[(f64, f64)]) -> Result<Self> {
        let mut coords: Vec<Point> = ring.iter().map(|&(x, y)| Point::new(x, y)).collect();
        if coords.len() >= 3 && coords.first() != coords.last() {
            coords.push(coords[0]);
        }
        Self::new(GeometryKind::Polygon, coords)
    }

    /// Axis-aligned rectangle polygon.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::polygon(&[(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
    }

    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    /// Line segments of the geometry: polyline pieces or ring edges.
    /// A point yields a single degenerate segment.
    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let single = (self.coords.len() == 1).then(|| (self.coords[0], self.coords[0]));
        single
            .into_iter()
            .chain(self.coords.windows(2).map(|w| (w[0], w[1])))
    }

    pub fn bbox(&self) -> BBox {
        BBox::of_points(&self.coords)
    }

    /// Total length of a polyline, perimeter of a polygon, 0 for a point.
    pub fn length(&self) -> f64 {
        self.coords.windows(2).map(|w| w[0].dist(w[1])).sum()
    }

    /// Signed shoelace area of a polygon ring (0 for other kinds).
    pub fn signed_area(&self) -> f64 {
        if self.kind != GeometryKind::Polygon {
            return 0.0;
        }
        shoelace(&self.coords)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Geometry {
        Geometry {
            kind: self.kind,
            coords: self
                .coords
                .iter()
                .map(|p| Point::new(p.x + dx, p.y + dy))
                .collect(),
        }
    }
}

pub(crate) fn shoelace(ring: &[Point]) -> f64 {
    0.5 * ring.windows(2).map(|w| w[0].cross(w[1])).sum::<f64>()
}

fn validate(kind: GeometryKind, coords: &[Point]) -> Result<()> {
    if coords.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::Validation("coordinates must be finite".into()));
    }
    match kind {
        GeometryKind::Point => {
            if coords.len() != 1 {
                return Err(Error::Validation(format!(
                    "point must have exactly 1 vertex, got {}",
                    coords.len()
                )));
            }
        }
        GeometryKind::Polyline => {
            if coords.len() < 2 {
                return Err(Error::Validation(
                    "polyline must have at least 2 vertices".into(),
                ));
            }
            let len: f64 = coords.windows(2).map(|w| w[0].dist(w[1])).sum();
            if len <= 0.0 {
                return Err(Error::Validation(
                    "polyline must have positive length".into(),
                ));
            }
        }
        GeometryKind::Polygon => {
            if coords.first() != coords.last() {
                return Err(Error::Validation("polygon not closed".into()));
            }
            if coords.len() < 4 {
                return Err(Error::Validation(
                    "polygon ring must have at least 4 vertices".into(),
                ));
            }
            if shoelace(coords).abs() <= 0.0 {
                return Err(Error::Validation("polygon must have positive area".into()));
            }
            if !ring_is_simple(coords) {
                return Err(Error::Validation("polygon ring is self-intersecting".into()));
            }
        }
    }
    Ok(())
}

/// True when no two non-adjacent edges of the closed ring touch and no
/// adjacent edges overlap.
fn ring_is_simple(ring: &[Point]) -> bool {
    let n = ring.len() - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[i + 1]);
        if a == b {
            return false;
        }
        for j in (i + 1)..n {
            let (c, d) = (ring[j], ring[j + 1]);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // adjacent edges share exactly one vertex; reject folding back
                let shared = if j == i + 1 { b } else { a };
                let (u, v) = if j == i + 1 { (a, d) } else { (b, c) };
                let e1 = u.sub(shared);
                let e2 = v.sub(shared);
                if e1.cross(e2) == 0.0 && e1.dot(e2) > 0.0 {
                    return false;
                }
            } else if segments_touch(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    b.sub(a).cross(c.sub(a))
}

fn on_segment_collinear(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Exact (no tolerance) closed-segment intersection test.
pub(crate) fn segments_touch(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && on_segment_collinear(a, b, c))
        || (o2 == 0.0 && on_segment_collinear(a, b, d))
        || (o3 == 0.0 && on_segment_collinear(c, d, a))
        || (o4 == 0.0 && on_segment_collinear(c, d, b))
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn of_points(points: &[Point]) -> Self {
        let mut b = BBox::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            b.x_min = b.x_min.min(p.x);
            b.y_min = b.y_min.min(p.y);
            b.x_max = b.x_max.max(p.x);
            b.y_max = b.y_max.max(p.y);
        }
        b
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn union(&self, o: &BBox) -> BBox {
        BBox::new(
            self.x_min.min(o.x_min),
            self.y_min.min(o.y_min),
            self.x_max.max(o.x_max),
            self.y_max.max(o.y_max),
        )
    }

    pub fn expand(&self, r: f64) -> BBox {
        BBox::new(self.x_min - r, self.y_min - r, self.x_max + r, self.y_max + r)
    }

    pub fn intersects(&self, o: &BBox) -> bool {
        self.x_min <= o.x_max && o.x_min <= self.x_max && self.y_min <= o.y_max && o.y_min <= self.y_max
    }

    pub fn contains_bbox(&self, o: &BBox) -> bool {
        o.x_min >= self.x_min && o.x_max <= self.x_max && o.y_min >= self.y_min && o.y_max <= self.y_max
    }
}

/// Sorted multiset of lowercase tokens. Equality is multiset equality.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct TokenBag(Vec<String>);

impl TokenBag {
    pub fn new(mut tokens: Vec<String>) -> Self {
        tokens.sort();
        Self(tokens)
    }

    /// Lowercase each tag and split it on non-alphanumeric characters.
    ///
    /// ```
    /// use nara::geometry::TokenBag;
    /// let bag = TokenBag::from_tags(&["Cafe", "amenity=cafe"]);
    /// assert_eq!(bag.tokens(), &["amenity", "cafe", "cafe"]);
    /// ```
    pub fn from_tags<S: AsRef<str>>(tags: &[S]) -> Self {
        let tokens = tags
            .iter()
            .flat_map(|t| {
                t.as_ref()
                    .to_lowercase()
                    .split(|c: char| !c.is_alphanumeric())
                    .filter(|s| !s.is_empty())
                    .map(str::to_owned)
                    .collect::<Vec<_>>()
            })
            .collect();
        Self::new(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geoentity {
    pub id: u64,
    /// Parent way for noded polyline segments.
    pub parent_id: Option<u64>,
    pub tokens: TokenBag,
    pub geometry: Geometry,
}

impl Geoentity {
    pub fn new(id: u64, parent_id: Option<u64>, tokens: TokenBag, geometry: Geometry) -> Self {
        Self {
            id,
            parent_id,
            tokens,
            geometry,
        }
    }

    pub fn kind(&self) -> GeometryKind {
        self.geometry.kind()
    }

    /// Identity used when this entity acts as an anchor: noded segments of
    /// one way share their parent's identity.
    pub fn anchor_key(&self) -> AnchorKey {
        match (self.kind(), self.parent_id) {
            (GeometryKind::Polyline, Some(p)) => AnchorKey::Way(p),
            _ => AnchorKey::Entity(self.id),
        }
    }

    pub fn to_record(&self) -> RawRecord {
        RawRecord {
            id: self.id,
            parent_id: self.parent_id,
            kind: self.kind(),
            coords: self.geometry.coords().iter().map(|p| [p.x, p.y]).collect(),
            tags: self.tokens.tokens().to_vec(),
        }
    }

    /// Serialize as one line of the ingestion format.
    pub fn to_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("record serialization cannot fail")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnchorKey {
    Entity(u64),
    Way(u64),
}

/// One record of the line-delimited ingestion format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRecord {
    pub id: u64,
    #[serde(default)]
    pub parent_id: Option<u64>,
    pub kind: GeometryKind,
    pub coords: Vec<[f64; 2]>,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl RawRecord {
    pub fn into_entity(self) -> Result<Geoentity> {
        let coords = self.coords.iter().map(|&c| Point::from(c)).collect();
        let geometry = Geometry::new(self.kind, coords)?;
        Ok(Geoentity::new(
            self.id,
            self.parent_id,
            TokenBag::from_tags(&self.tags),
            geometry,
        ))
    }
}

/// Parse and validate a single ingestion record.
pub fn parse_geoentity_record(line: &str) -> Result<Geoentity> {
    parse_record_at(line, 1)
}

fn parse_record_at(line: &str, line_no: usize) -> Result<Geoentity> {
    let raw: RawRecord = serde_json::from_str(line.trim()).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    raw.into_entity().map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("line {line_no}: {msg}")),
        other => other,
    })
}

/// Longitude/latitude in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

/// Local equirectangular projection of lon/lat records (degrees) into planar
/// meters around `origin`.
pub fn project_lonlat(records: &[RawRecord], origin: LonLat) -> Result<Vec<RawRecord>> {
    check_lat(origin.lat)?;
    let cos0 = origin.lat.to_radians().cos();
    records
        .iter()
        .map(|r| {
            let coords = r
                .coords
                .iter()
                .map(|&[lon, lat]| {
                    check_lat(lat)?;
                    Ok([
                        EARTH_RADIUS_M * (lon - origin.lon).to_radians() * cos0,
                        EARTH_RADIUS_M * (lat - origin.lat).to_radians(),
                    ])
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RawRecord {
                coords,
                ..r.clone()
            })
        })
        .collect()
}

fn check_lat(lat: f64) -> Result<()> {
    if !lat.is_finite() || lat.abs() >= 85.0 {
        return Err(Error::Validation(format!(
            "latitude {lat} outside the projection range (|lat| < 85)"
        )));
    }
    Ok(())
}

/// A set of geoentities with an enclosing extent.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub entities: Vec<Geoentity>,
    pub extent: BBox,
}

impl Dataset {
    pub fn new(entities: Vec<Geoentity>, extent: BBox) -> Result<Self> {
        if !(extent.width() > 0.0 && extent.height() > 0.0) {
            return Err(Error::Validation(
                "extent must have positive width and height".into(),
            ));
        }
        let mut seen = std::collections::HashSet::with_capacity(entities.len());
        for e in &entities {
            if !seen.insert(e.id) {
                return Err(Error::Validation(format!("duplicate entity id {}", e.id)));
            }
            if !extent.contains_bbox(&e.geometry.bbox()) {
                return Err(Error::Validation(format!(
                    "entity {} lies outside the dataset extent",
                    e.id
                )));
            }
        }
        Ok(Self { entities, extent })
    }

    /// Dataset whose extent is the bounding box of its entities.
    pub fn from_entities(entities: Vec<Geoentity>) -> Result<Self> {
        let extent = entities
            .iter()
            .map(|e| e.geometry.bbox())
            .reduce(|a, b| a.union(&b))
            .ok_or_else(|| Error::Validation("dataset has no entities".into()))?;
        Self::new(entities, extent)
    }

    /// Parse a whole line-delimited document; blank lines are skipped.
    pub fn parse_lines(text: &str) -> Result<Self> {
        let entities = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| parse_record_at(l, i + 1))
            .collect::<Result<Vec<_>>>()?;
        Self::from_entities(entities)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::parse_lines(&std::fs::read_to_string(path)?)
    }

    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for e in &self.entities {
            s.push_str(&e.to_line());
            s.push('\n');
        }
        s
    }

    pub fn index_of(&self) -> std::collections::HashMap<u64, usize> {
        self.entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id, i))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}
