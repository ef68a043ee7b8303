//! Uniform-grid bucket index over entity bounding boxes.

use std::collections::HashMap;

use crate::geometry::{BBox, Dataset};

pub struct GridIndex {
    cell: f64,
    origin: (f64, f64),
    buckets: HashMap<(i64, i64), Vec<usize>>,
    bboxes: Vec<BBox>,
}

impl GridIndex {
    pub fn new(dataset: &Dataset, cell: f64) -> Self {
        assert!(cell > 0.0);
        let origin = (dataset.extent.x_min, dataset.extent.y_min);
        let mut idx = GridIndex {
            cell,
            origin,
            buckets: HashMap::new(),
            bboxes: dataset.entities.iter().map(|e| e.geometry.bbox()).collect(),
        };
        for i in 0..idx.bboxes.len() {
            let b = idx.bboxes[i];
            let (c0, c1) = idx.cell_range(&b);
            for cx in c0.0..=c1.0 {
                for cy in c0.1..=c1.1 {
                    idx.buckets.entry((cx, cy)).or_default().push(i);
                }
            }
        }
        idx
    }

    fn cell_range(&self, b: &BBox) -> ((i64, i64), (i64, i64)) {
        let f = |v: f64, o: f64| ((v - o) / self.cell).floor() as i64;
        (
            (f(b.x_min, self.origin.0), f(b.y_min, self.origin.1)),
            (f(b.x_max, self.origin.0), f(b.y_max, self.origin.1)),
        )
    }

    /// Entities whose bounding box intersects `query`, ascending by index.
    pub fn query(&self, query: &BBox) -> Vec<usize> {
        let (c0, c1) = self.cell_range(query);
        let mut out = Vec::new();
        for cx in c0.0..=c1.0 {
            for cy in c0.1..=c1.1 {
                if let Some(v) = self.buckets.get(&(cx, cy)) {
                    out.extend(v.iter().copied().filter(|&i| self.bboxes[i].intersects(query)));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}
