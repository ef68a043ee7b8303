//! Frozen-encoder downstream probes: contextual embedding export, a
//! logistic-regression zone classifier and a linear speed regressor.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::encoders::{Codebook, Frame};
use crate::error::{Error, Result};
use crate::geometry::{Dataset, Geometry, GeometryKind};
use crate::index::GridIndex;
use crate::model::{forward_rows, predict_pair_symmetric, Mode, ParamStore};
use crate::relations::{geometry_descriptors, min_distance};
use crate::rng::{rng_for, rng_indexed};
use crate::train::{semantic_table, window_input, AdamW, PreparedWindow};
use crate::windows::sample_geo_pairs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    /// Entities within the radius of the target.
    Spatial,
    /// The same number of entities drawn uniformly from the whole dataset.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedOptions {
    pub radius: f64,
    pub mask_target: bool,
    pub cap: usize,
    /// Side of the pseudo-window that frames geometry encoding.
    pub window_size: f64,
    pub context: ContextMode,
    /// Seed of the random context draw.
    pub random_seed: u64,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self {
            radius: 100.0,
            mask_target: false,
            cap: 128,
            window_size: 500.0,
            context: ContextMode::Spatial,
            random_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualEmbedding {
    pub id: u64,
    pub h_fused: Vec<f64>,
    pub h_sem: Vec<f64>,
    pub radius: f64,
    pub context_size: usize,
}

impl ContextualEmbedding {
    /// `[h_fused ; h_sem]`
    pub fn concat(&self) -> Vec<f64> {
        [self.h_fused.as_slice(), self.h_sem.as_slice()].concat()
    }
}

/// Entities within `radius` of `target` (itself included), nearest first,
/// at most `cap`.
pub fn spatial_context(dataset: &Dataset, index: &GridIndex, target: usize, radius: f64, cap: usize) -> Vec<usize> {
    let g = &dataset.entities[target].geometry;
    let mut near: Vec<(f64, usize)> = index
        .query(&g.bbox().expand(radius))
        .into_iter()
        .filter(|&i| i != target)
        .map(|i| (min_distance(g, &dataset.entities[i].geometry), i))
        .filter(|(d, _)| *d <= radius)
        .collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    std::iter::once(target)
        .chain(near.into_iter().map(|(_, i)| i))
        .take(cap.max(1))
        .collect()
}

/// Contextual embeddings of `ids` from a frozen model.
pub fn embed_entities(
    params: &ParamStore,
    codebook: &Codebook,
    dataset: &Dataset,
    ids: &[u64],
    opts: &EmbedOptions,
) -> Result<Vec<ContextualEmbedding>> {
    let lookup = dataset.index_of();
    let missing: Vec<u64> = ids.iter().copied().filter(|id| !lookup.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }
    let sem = semantic_table(dataset, codebook);
    let index = GridIndex::new(dataset, 50.0);
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let target = lookup[&id];
        let mut members = spatial_context(dataset, &index, target, opts.radius, opts.cap);
        if opts.context == ContextMode::Random {
            let mut rng = rng_indexed(opts.random_seed, "probe.random_context", &[id]);
            let others = dataset.len() - 1;
            let k = (members.len() - 1).min(others);
            let drawn = rand::seq::index::sample(&mut rng, others, k);
            members = std::iter::once(target)
                .chain(drawn.into_iter().map(|i| if i >= target { i + 1 } else { i }))
                .collect();
        }
        let frame = Frame {
            center: geometry_descriptors(&dataset.entities[target].geometry).centroid,
            size: opts.window_size,
        };
        let input = window_input(dataset, &sem, &members, &frame)?;
        let mut t = Tape::new();
        let p = params.bind_const(&mut t);
        let masked: &[usize] = if opts.mask_target { &[0] } else { &[] };
        let o = forward_rows(&mut t, &p, &params.config, &input, masked, Mode::Eval)?;
        out.push(ContextualEmbedding {
            id,
            h_fused: t.value(o.h_fused).row_slice(0).to_vec(),
            h_sem: t.value(o.h_sem).row_slice(0).to_vec(),
            radius: opts.radius,
            context_size: members.len(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub split_seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 200,
            split_seed: 0,
        }
    }
}

/// Seeded shuffle cut into consecutive fractions.
pub fn split_indices(n: usize, fractions: &[f64], seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, "probe.split"));
    let mut out = Vec::new();
    let mut start = 0;
    let mut acc = 0.0;
    for (k, f) in fractions.iter().enumerate() {
        acc += f;
        let end = if k + 1 == fractions.len() { n } else { ((acc * n as f64).round() as usize).min(n) };
        out.push(idx[start..end].to_vec());
        start = end;
    }
    out
}

/// Column means and standard deviations of the given rows (zero spread
/// maps to one).
fn standardizer(x: &[Vec<f64>], rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for &r in rows {
        for (m, v) in mean.iter_mut().zip(&x[r]) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; d];
    for &r in rows {
        for k in 0..d {
            sd[k] += (x[r][k] - mean[k]).powi(2) / n;
        }
    }
    let sd = sd.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
    (mean, sd)
}

fn design(x: &[Vec<f64>], rows: &[usize], mean: &[f64], sd: &[f64]) -> Result<Mat> {
    let d = mean.len();
    let data = rows
        .iter()
        .flat_map(|&r| (0..d).map(move |k| (x[r][k] - mean[k]) / sd[k]))
        .collect();
    Mat::new(rows.len(), d, data)
}

/// Full-batch gradient training of `X W + b` on the given loss.
fn fit_linear<F>(x: &Mat, out_dim: usize, cfg: &ProbeConfig, loss: F) -> Result<(Mat, Mat)>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut params = BTreeMap::from([
        ("w".to_string(), Mat::zeros(x.cols(), out_dim)),
        ("b".to_string(), Mat::zeros(1, out_dim)),
    ]);
    let mut opt = AdamW::new();
    for _ in 0..cfg.epochs {
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let w = t.param(params["w"].clone());
        let b = t.param(params["b"].clone());
        let h = t.matmul(xv, w)?;
        let out = t.add_bias(h, b)?;
        let l = loss(&mut t, out)?;
        t.backward(l)?;
        let grads = BTreeMap::from([
            ("w".to_string(), t.grad(w).cloned().unwrap_or_else(|| Mat::zeros(x.cols(), out_dim))),
            ("b".to_string(), t.grad(b).cloned().unwrap_or_else(|| Mat::zeros(1, out_dim))),
        ]);
        opt.step_named(&mut params, &grads, cfg.learning_rate, 0.0)?;
    }
    let b = params.remove("b").unwrap();
    let w = params.remove("w").unwrap();
    Ok((w, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyMetrics {
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub val_macro_f1: f64,
}

/// Macro and support-weighted F1 (0 to 100) over the labels present in
/// either `truth` or `pred`.
pub fn f1_scores(truth: &[usize], pred: &[usize]) -> (f64, f64) {
    let mut labels: Vec<usize> = truth.iter().chain(pred).copied().collect();
    labels.sort_unstable();
    labels.dedup();
    let mut macro_sum = 0.0;
    let mut weighted = 0.0;
    for &c in &labels {
        let tp = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p == c).count() as f64;
        let fp = truth.iter().zip(pred).filter(|(t, p)| **t != c && **p == c).count() as f64;
        let fne = truth.iter().zip(pred).filter(|(t, p)| **t == c && **p != c).count() as f64;
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fne) };
        macro_sum += f1;
        weighted += f1 * (tp + fne);
    }
    let n = truth.len().max(1) as f64;
    (100.0 * macro_sum / labels.len().max(1) as f64, 100.0 * weighted / n)
}

/// Multinomial logistic regression on standardized features with a
/// 50/25/25 split.
pub fn probe_classify(features: &[Vec<f64>], labels: &[usize], cfg: &ProbeConfig) -> Result<ClassifyMetrics> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::Invalid("features and labels must be non-empty and aligned".into()));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Invalid("classification needs at least two classes".into()));
    }
    let k = *classes.last().unwrap() + 1;
    let parts = split_indices(features.len(), &[0.5, 0.25, 0.25], cfg.split_seed);
    let (train, val, test) = (&parts[0], &parts[1], &parts[2]);
    let (mean, sd) = standardizer(features, train);
    let xtr = design(features, train, &mean, &sd)?;
    let ytr: Vec<(usize, usize)> = train.iter().enumerate().map(|(r, &i)| (r, labels[i])).collect();
    let n = train.len() as f64;
    let (w, b) = fit_linear(&xtr, k, cfg, |t, logits| {
        let lse = t.masked_logsumexp_rows(logits, &vec![true; ytr.len() * k])?;
        let picked = t.pick(logits, &ytr)?;
        let ce = t.sub(lse, picked)?;
        let s = t.sum(ce)?;
        t.scale(s, 1.0 / n)
    })?;
    let predict = |rows: &[usize]| -> Result<Vec<usize>> {
        let x = design(features, rows, &mean, &sd)?;
        let mut logits = x.matmul(&w);
        for r in 0..logits.rows() {
            for c in 0..k {
                logits.set(r, c, logits.get(r, c) + b.get(0, c));
            }
        }
        Ok((0..logits.rows())
            .map(|r| {
                (0..k)
                    .max_by(|&a, &c| logits.get(r, a).total_cmp(&logits.get(r, c)).then(c.cmp(&a)))
                    .unwrap()
            })
            .collect())
    };
    let truth = |rows: &[usize]| rows.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let pt = predict(test)?;
    let tt = truth(test);
    let (macro_f1, weighted_f1) = f1_scores(&tt, &pt);
    let accuracy = 100.0 * tt.iter().zip(&pt).filter(|(a, b)| a == b).count() as f64 / tt.len().max(1) as f64;
    let (val_macro_f1, _) = f1_scores(&truth(val), &predict(val)?);
    Ok(ClassifyMetrics {
        macro_f1,
        weighted_f1,
        accuracy,
        n_train: train.len(),
        n_val: val.len(),
        n_test: test.len(),
        val_macro_f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    /// Mean absolute percentage error, in percent.
    pub mape: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub val_mae: f64,
}

pub fn regression_metrics(truth: &[f64], pred: &[f64]) -> (f64, f64, f64, f64) {
    let n = truth.len().max(1) as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let sse: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    let sst: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let mae = truth.iter().zip(pred).map(|(t, p)| (t - p).abs()).sum::<f64>() / n;
    let mape = 100.0
        * truth
            .iter()
            .zip(pred)
            .map(|(t, p)| (t - p).abs() / t.abs().max(1e-12))
            .sum::<f64>()
        / n;
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else if sse == 0.0 { 1.0 } else { 0.0 };
    ((sse / n).sqrt(), mae, r2, mape)
}

/// One pooled road: member segment ids and the mean of their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Road {
    pub parent: u64,
    pub segments: Vec<u64>,
    pub speed: f64,
}

/// Group labelled polyline segments by parent way.
pub fn roads_from_labels(dataset: &Dataset, speeds: &BTreeMap<u64, f64>) -> Vec<Road> {
    let mut by_parent: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for e in &dataset.entities {
        if e.kind() == GeometryKind::Polyline && speeds.contains_key(&e.id) {
            by_parent.entry(e.parent_id.unwrap_or(e.id)).or_default().push(e.id);
        }
    }
    by_parent
        .into_iter()
        .map(|(parent, segments)| {
            let speed = segments.iter().map(|s| speeds[s]).sum::<f64>() / segments.len() as f64;
            Road { parent, segments, speed }
        })
        .collect()
}

/// Mean of the segment vectors; order does not matter.
pub fn pool_mean(rows: &[&[f64]]) -> Vec<f64> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.iter().zip(*b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = vec![0.0; rows.first().map_or(0, |r| r.len())];
    for r in &sorted {
        for (o, v) in out.iter_mut().zip(*r) {
            *o += v;
        }
    }
    let n = rows.len().max(1) as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// For each road, the mean training-split speed of other roads within
/// `radius`, falling back to the training mean.
pub fn neighbor_mean_speed(dataset: &Dataset, roads: &[Road], train: &[usize], radius: f64) -> Vec<f64> {
    let lookup = dataset.index_of();
    let geoms: Vec<Vec<&Geometry>> = roads
        .iter()
        .map(|r| r.segments.iter().map(|s| &dataset.entities[lookup[s]].geometry).collect())
        .collect();
    let fallback = train.iter().map(|&i| roads[i].speed).sum::<f64>() / train.len().max(1) as f64;
    let near = |a: usize, b: usize| {
        geoms[a]
            .iter()
            .any(|g| geoms[b].iter().any(|h| min_distance(g, h) <= radius))
    };
    (0..roads.len())
        .map(|i| {
            let vals: Vec<f64> = train.iter().filter(|&&j| j != i && near(i, j)).map(|&j| roads[j].speed).collect();
            if vals.is_empty() {
                fallback
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        })
        .collect()
}

/// Linear regression on standardized features and target, 60/20/20 split.
/// `extra` supplies a per-row feature computed from the training split
/// (e.g. neighbor mean speed).
pub fn probe_regress(
    features: &[Vec<f64>],
    targets: &[f64],
    extra: Option<&dyn Fn(&[usize]) -> Vec<f64>>,
    cfg: &ProbeConfig,
) -> Result<RegressMetrics> {
    if features.len() != targets.len() || features.len() < 10 {
        return Err(Error::Invalid("regression needs at least 10 aligned rows".into()));
    }
    let parts = split_indices(features.len(), &[0.6, 0.2, 0.2], cfg.split_seed);
    let (train, val, test) = (&parts[0], &parts[1], &parts[2]);
    let x: Vec<Vec<f64>> = match extra {
        Some(f) => {
            let col = f(train);
            features.iter().zip(col).map(|(r, c)| [r.as_slice(), &[c]].concat()).collect()
        }
        None => features.to_vec(),
    };
    let (mean, sd) = standardizer(&x, train);
    let y_mean = train.iter().map(|&i| targets[i]).sum::<f64>() / train.len() as f64;
    let y_sd = {
        let v = train.iter().map(|&i| (targets[i] - y_mean).powi(2)).sum::<f64>() / train.len() as f64;
        if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }
    };
    let xtr = design(&x, train, &mean, &sd)?;
    let ytr = Mat::new(train.len(), 1, train.iter().map(|&i| (targets[i] - y_mean) / y_sd).collect())?;
    let (w, b) = fit_linear(&xtr, 1, cfg, |t, out| {
        let y = t.constant(ytr.clone());
        let e = t.sub(out, y)?;
        let sq = t.mul(e, e)?;
        t.mean(sq)
    })?;
    let predict = |rows: &[usize]| -> Result<Vec<f64>> {
        let xm = design(&x, rows, &mean, &sd)?;
        let o = xm.matmul(&w);
        Ok(o.data().iter().map(|v| (v + b.item()) * y_sd + y_mean).collect())
    };
    let truth = |rows: &[usize]| rows.iter().map(|&i| targets[i]).collect::<Vec<_>>();
    let (rmse, mae, r2, mape) = regression_metrics(&truth(test), &predict(test)?);
    let (_, val_mae, _, _) = regression_metrics(&truth(val), &predict(val)?);
    Ok(RegressMetrics {
        rmse,
        mae,
        r2,
        mape,
        n_train: train.len(),
        n_val: val.len(),
        n_test: test.len(),
        val_mae,
    })
}

/// Pooled `h_fused` per road.
pub fn pooled_road_features(roads: &[Road], embeddings: &[ContextualEmbedding]) -> Vec<Vec<f64>> {
    let by_id: HashMap<u64, &ContextualEmbedding> = embeddings.iter().map(|e| (e.id, e)).collect();
    roads
        .iter()
        .map(|r| {
            let rows: Vec<&[f64]> = r.segments.iter().map(|s| by_id[s].h_fused.as_slice()).collect();
            pool_mean(&rows)
        })
        .collect()
}

/// Zone classification from `[h_fused ; h_sem]` of every labelled entity
/// present in `dataset`.
pub fn zone_probe(
    params: &ParamStore,
    codebook: &Codebook,
    dataset: &Dataset,
    zones: &BTreeMap<u64, usize>,
    embed: &EmbedOptions,
    cfg: &ProbeConfig,
) -> Result<ClassifyMetrics> {
    let lookup = dataset.index_of();
    let ids: Vec<u64> = zones.keys().copied().filter(|id| lookup.contains_key(id)).collect();
    let labels: Vec<usize> = ids.iter().map(|id| zones[id]).collect();
    let x: Vec<Vec<f64>> = embed_entities(params, codebook, dataset, &ids, embed)?
        .iter()
        .map(ContextualEmbedding::concat)
        .collect();
    probe_classify(&x, &labels, cfg)
}

/// Road speed regression from pooled segment `h_fused`, optionally with the
/// neighbor mean speed of training roads within `neighbor_radius`.
pub fn speed_probe(
    params: &ParamStore,
    codebook: &Codebook,
    dataset: &Dataset,
    speeds: &BTreeMap<u64, f64>,
    embed: &EmbedOptions,
    cfg: &ProbeConfig,
    neighbor_radius: Option<f64>,
) -> Result<RegressMetrics> {
    let roads = roads_from_labels(dataset, speeds);
    let segments: Vec<u64> = roads.iter().flat_map(|r| r.segments.iter().copied()).collect();
    let emb = embed_entities(params, codebook, dataset, &segments, embed)?;
    let x = pooled_road_features(&roads, &emb);
    let y: Vec<f64> = roads.iter().map(|r| r.speed).collect();
    match neighbor_radius {
        Some(radius) => {
            let extra = |train: &[usize]| neighbor_mean_speed(dataset, &roads, train, radius);
            probe_regress(&x, &y, Some(&extra), cfg)
        }
        None => probe_regress(&x, &y, None, cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairHeadMetrics {
    pub topo_accuracy: f64,
    /// Mean absolute error in window-normalized distance units.
    pub dist_mae: f64,
    pub n_pairs: usize,
}

/// Score the relation and distance heads on sampled within-window pairs
/// (random plus relation-bearing hard pairs), with nothing masked.
pub fn evaluate_pair_heads(
    params: &ParamStore,
    windows: &[PreparedWindow],
    n_random: usize,
    n_hard: usize,
    seed: u64,
) -> Result<PairHeadMetrics> {
    let mut correct = 0usize;
    let mut abs_err = 0.0;
    let mut total = 0usize;
    for (w, pw) in windows.iter().enumerate() {
        let mut rng = rng_indexed(seed, "probe.pairs", &[w as u64]);
        let pairs = sample_geo_pairs(&pw.ctx, n_random, n_hard, &mut rng);
        if pairs.is_empty() {
            continue;
        }
        let mut t = Tape::new();
        let p = params.bind_const(&mut t);
        let o = forward_rows(&mut t, &p, &params.config, &pw.input, &[], Mode::Eval)?;
        let ij: Vec<(usize, usize)> = pairs.iter().map(|s| (s.i, s.j)).collect();
        let (dist, logits) = predict_pair_symmetric(&mut t, &p, o.h_fused, &ij)?;
        let size = pw.ctx.window.size();
        for (s, (d, l)) in pairs.iter().zip(dist.iter().zip(&logits)) {
            let arg = (0..4).max_by(|&a, &b| l[a].total_cmp(&l[b]).then(b.cmp(&a))).unwrap();
            correct += usize::from(arg == s.relation.code());
            abs_err += (d - s.distance / size).abs();
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::NoUsableWindows("no window yields a sampled pair".into()));
    }
    Ok(PairHeadMetrics {
        topo_accuracy: correct as f64 / total as f64,
        dist_mae: abs_err / total as f64,
        n_pairs: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_two_class() {
        let feats: Vec<Vec<f64>> = (0..80).map(|i| vec![if i % 2 == 0 { -1.0 } else { 1.0 }, (i as f64).sin()]).collect();
        let labels: Vec<usize> = (0..80).map(|i| i % 2).collect();
        let m = probe_classify(&feats, &labels, &ProbeConfig::default()).unwrap();
        assert_eq!(m.macro_f1, 100.0);
        assert_eq!(m.accuracy, 100.0);
        assert_eq!((m.n_train, m.n_val, m.n_test), (40, 20, 20));
        assert!(probe_classify(&feats, &vec![1; 80], &ProbeConfig::default()).is_err());
    }

    #[test]
    fn constant_target_is_exact() {
        let feats: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let m = probe_regress(&feats, &[30.0; 20], None, &ProbeConfig::default()).unwrap();
        assert_eq!(m.mae, 0.0);
        assert!(probe_regress(&feats[..5], &[1.0; 5], None, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn linear_target_is_learned() {
        let feats: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64 / 10.0, ((i * 7) % 11) as f64]).collect();
        let y: Vec<f64> = feats.iter().map(|f| 20.0 + 3.0 * f[0] - f[1]).collect();
        let m = probe_regress(&feats, &y, None, &ProbeConfig::default()).unwrap();
        assert!(m.r2 > 0.99, "{m:?}");
    }

    #[test]
    fn f1_known_values() {
        let (m, w) = f1_scores(&[0, 0, 1, 1], &[0, 1, 1, 1]);
        // class 0: p=1 r=.5 f1=2/3; class 1: p=2/3 r=1 f1=.8
        assert!((m - 100.0 * (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-9);
        assert!((w - 100.0 * (2.0 / 3.0 * 2.0 + 0.8 * 2.0) / 4.0).abs() < 1e-9);
    }

    #[test]
    fn pooling() {
        let a = [1.0, 2.0];
        let b = [3.0, 6.0];
        assert_eq!(pool_mean(&[&a]), vec![1.0, 2.0]);
        assert_eq!(pool_mean(&[&a, &b]), pool_mean(&[&b, &a]));
    }

    #[test]
    fn splits_partition() {
        let p = split_indices(10, &[0.6, 0.2, 0.2], 3);
        assert_eq!(p.iter().map(Vec::len).collect::<Vec<_>>(), vec![6, 2, 2]);
        let mut all: Vec<usize> = p.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
