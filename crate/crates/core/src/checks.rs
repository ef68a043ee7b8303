//! Self-checks exposed by the command line: finite-difference gradient
//! checks of every loss and the topology oracle comparison.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, Tape};
use crate::encoders::{Codebook, Frame, SEM_DIM};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Geometry};
use crate::index::GridIndex;
use crate::losses::{batch_loss, combine_terms, window_terms, BatchWindow, LossConfig};
use crate::model::{forward_window, Mode, ModelConfig, ParamStore};
use crate::relations::min_distance;
use crate::rng::{rng_for, rng_indexed};
use crate::synthcity::{generate_city, CityParams};
use crate::topology_oracle::{run_oracle_check, OracleReport};
use crate::train::{semantic_table, window_input, PreparedWindow};
use crate::windows::{nearest_members, sample_geo_pairs, sample_global_pairs, select_masks, SpatialWindow, WindowConfig, WindowContext};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_EPS: f64 = 1e-5;

/// A compact model so that finite differences over every parameter stay fast.
pub fn gradcheck_model() -> ModelConfig {
    ModelConfig {
        d: 8,
        d_ff: 8,
        n_layers: 2,
        n_heads: 2,
        ..ModelConfig::default()
    }
}

/// Small windows of `min..=max` entities cut from a synthetic city, each
/// centred on a randomly chosen entity.
pub fn small_windows(seed: u64, count: usize, min: usize, max: usize) -> Result<Vec<PreparedWindow>> {
    let city = generate_city(&CityParams {
        seed,
        ..CityParams::default()
    })?;
    let dataset = &city.dataset;
    let cfg = WindowConfig::default();
    let sem = semantic_table(dataset, &Codebook::new(seed, SEM_DIM));
    let index = GridIndex::new(dataset, 50.0);
    let mut rng = rng_for(seed, "checks.windows");
    let half = 60.0;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let anchor = rng.random_range(0..dataset.len());
        let c = crate::relations::geometry_descriptors(&dataset.entities[anchor].geometry).centroid;
        let bounds = BBox::new(c.x - half, c.y - half, c.x + half, c.y + half);
        let square = Geometry::rect(bounds.x_min, bounds.y_min, bounds.x_max, bounds.y_max)?;
        let neighborhood: Vec<usize> = index
            .query(&bounds)
            .into_iter()
            .filter(|&i| min_distance(&dataset.entities[i].geometry, &square) == 0.0)
            .collect();
        let cap = rng.random_range(min..=max);
        if neighborhood.len() < cap {
            continue;
        }
        let window = SpatialWindow {
            index: out.len(),
            bounds,
            center: c,
            members: nearest_members(dataset, &neighborhood, c, cap),
            neighborhood,
        };
        let frame = Frame::from(&window);
        let input = window_input(dataset, &sem, &window.members, &frame)?;
        let ctx = WindowContext::build(dataset, window, &cfg);
        out.push(PreparedWindow { ctx, input });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub loss: String,
    pub max_rel_error: f64,
    pub windows: usize,
}

impl GradCheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE && self.windows > 0
    }
}

fn only(loss: &LossConfig, which: usize) -> LossConfig {
    let mut c = loss.clone();
    let alphas = [&mut c.alpha_mgsm, &mut c.alpha_geo, &mut c.alpha_acc, &mut c.alpha_rsr];
    for (k, a) in alphas.into_iter().enumerate() {
        *a = if k == which { 1.0 } else { 0.0 };
    }
    c
}

/// Central-difference check of each loss term and the joint loss with
/// respect to the stream outputs `H_sem` and `H_fused` they are computed
/// from, on `n_windows` small windows. Pair and reconstruction heads stay
/// inside the checked function.
pub fn gradient_report(seed: u64, n_windows: usize) -> Result<Vec<GradCheckRow>> {
    let model = gradcheck_model();
    let params = ParamStore::init(&model, seed)?;
    let windows = small_windows(seed, 40 * n_windows, 6, 12)?;
    let base = LossConfig::default();
    let configs = [
        ("mgsm", only(&base, 0)),
        ("geo", only(&base, 1)),
        ("acc", only(&base, 2)),
        ("rsr", only(&base, 3)),
        ("joint", base.clone()),
    ];
    let mut rows: Vec<GradCheckRow> = configs
        .iter()
        .map(|(name, _)| GradCheckRow {
            loss: name.to_string(),
            max_rel_error: 0.0,
            windows: 0,
        })
        .collect();
    for batch in active_batches(seed, &params, n_windows, &windows)? {
        let mut t = Tape::new();
        let p = params.bind_const(&mut t);
        let fwd = forward_window(&mut t, &p, &model, batch.input, &batch.masked, Mode::Eval)?;
        let outputs = [t.value(fwd.h_sem).clone(), t.value(fwd.h_fused).clone()];
        for (row, (_, cfg)) in rows.iter_mut().zip(&configs) {
            let err = grad_check(
                |t, vars| {
                    let p = params.bind_const(t);
                    let terms = window_terms(t, &p, cfg, &batch, vars[0], vars[1])?;
                    let (total, _) = combine_terms(t, cfg, vec![terms])?;
                    Ok(total.expect("term has contributors"))
                },
                &outputs,
                GRADCHECK_EPS,
            )?;
            row.max_rel_error = row.max_rel_error.max(err);
            row.windows += 1;
        }
    }
    Ok(rows)
}

/// The first `n` windows whose masks and pairs give every loss term a
/// contributor and a non-zero relational hinge.
pub fn active_batches<'a>(seed: u64, params: &ParamStore, n: usize, windows: &'a [PreparedWindow]) -> Result<Vec<BatchWindow<'a>>> {
    let cfg = LossConfig::default();
    let mut out = Vec::new();
    for (w, pw) in windows.iter().enumerate() {
        if out.len() == n {
            break;
        }
        let mut rng = rng_indexed(seed, "checks.batch", &[w as u64]);
        let batch = BatchWindow {
            ctx: &pw.ctx,
            input: &pw.input,
            masked: select_masks(pw.ctx.len(), 0.4, &mut rng),
            geo_pairs: sample_geo_pairs(&pw.ctx, 4, 4, &mut rng),
            global_pairs: sample_global_pairs(&pw.ctx, 16, &mut rng),
        };
        let mut t = Tape::new();
        let p = params.bind_const(&mut t);
        let (_, r) = batch_loss(&mut t, &p, &params.config, &cfg, std::slice::from_ref(&batch), None)?;
        if r.n_mgsm > 0 && r.n_geo > 0 && r.n_acc > 0 && r.l_rsr > 0.0 {
            out.push(batch);
        }
    }
    if out.len() < n {
        return Err(Error::Invalid(format!("only {} of {n} candidate windows exercise every loss term", out.len())));
    }
    Ok(out)
}

/// Topology engine against the rasterized oracle.
pub fn relation_report(seed: u64, n_pairs: usize) -> OracleReport {
    run_oracle_check(&mut rng_for(seed, "checks.relations"), n_pairs, 8)
}
