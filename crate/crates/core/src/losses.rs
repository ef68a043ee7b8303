//! Self-supervised objectives.
//!
//! * MGSM: masked semantic reconstruction scored as InfoNCE against the
//!   window's other semantic embeddings.
//! * GEO: pairwise relation classification and normalized distance
//!   regression from the fused stream.
//! * ACC: distance-weighted contrast pulling an entity towards its anchor
//!   siblings and away from other same-type entities.
//! * RSR: a hinge keeping sibling semivariance below the same-type global
//!   semivariance at each distance bin.
//!
//! Window-level helpers return `None` when nothing contributes. Batch
//! means for MGSM and GEO pool all contributing entities and pairs; ACC and
//! RSR average their per-window values over contributing windows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::GeometryKind;
use crate::model::{forward_window, predict_pair, reconstruct, Bound, Mode, ModelConfig, WindowInput};
use crate::relations::TopoRelation;
use crate::windows::{PairSample, SiblingGroup, WindowContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau_mgsm: f64,
    pub tau_acc: f64,
    /// Distance decay scale in meters.
    pub lambda: f64,
    pub delta: f64,
    pub alpha_mgsm: f64,
    pub alpha_geo: f64,
    pub alpha_acc: f64,
    pub alpha_rsr: f64,
    pub alpha_topo: f64,
    pub alpha_dist: f64,
    /// Semivariance bin edges in meters.
    pub bin_edges: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_mgsm: 0.15,
            tau_acc: 0.3,
            lambda: 20.0,
            delta: 0.4,
            alpha_mgsm: 1.0,
            alpha_geo: 1.0,
            alpha_acc: 1.0,
            alpha_rsr: 50.0,
            alpha_topo: 0.5,
            alpha_dist: 100.0,
            bin_edges: vec![0.0, 25.0, 50.0, 100.0, 200.0, 400.0, 800.0],
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_mgsm > 0.0 && self.tau_acc > 0.0 && self.lambda > 0.0) {
            return Err(Error::Config("temperatures and decay scale must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 2.0) {
            return Err(Error::Config(format!("margin {} outside (0, 2)", self.delta)));
        }
        let weights = [
            self.alpha_mgsm,
            self.alpha_geo,
            self.alpha_acc,
            self.alpha_rsr,
            self.alpha_topo,
            self.alpha_dist,
        ];
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        let e = &self.bin_edges;
        if e.len() < 2 || e[0] != 0.0 || e.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("bin edges must start at 0 and increase strictly".into()));
        }
        Ok(())
    }

    /// Bin index of a distance, or `None` past the last edge.
    pub fn bin_of(&self, d: f64) -> Option<usize> {
        self.bin_edges.windows(2).position(|w| d >= w[0] && d < w[1])
    }
}

/// Per-term values of one batch and how many items fed each term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub l_mgsm: f64,
    pub l_geo: f64,
    pub l_acc: f64,
    pub l_rsr: f64,
    pub l_total: f64,
    /// Masked entities with at least two candidates.
    pub n_mgsm: usize,
    /// Ordered pair presentations.
    pub n_geo: usize,
    /// Windows with at least one anchored entity.
    pub n_acc: usize,
    /// Windows with at least one binned sibling pair.
    pub n_rsr: usize,
}

/// Weighted sum of the four terms.
pub fn loss_joint(components: [f64; 4], cfg: &LossConfig) -> f64 {
    let w = [cfg.alpha_mgsm, cfg.alpha_geo, cfg.alpha_acc, cfg.alpha_rsr];
    components.iter().zip(w).map(|(l, a)| a * l).sum()
}

/// Sum of per-item losses plus the number of items.
pub struct Partial {
    pub sum: Var,
    pub count: usize,
}

/// InfoNCE over cosine similarities for the masked rows.
///
/// `e_hat` holds one predicted row per entry of `masked`; `targets` holds
/// every window entity's frozen semantic embedding. Entities sharing a
/// token class with the masked entity are dropped from its candidates.
pub fn loss_mgsm(
    t: &mut Tape,
    e_hat: Var,
    masked: &[usize],
    targets: &Mat,
    token_class: &[usize],
    tau: f64,
) -> Result<Option<Partial>> {
    let n = targets.rows();
    let mut rows = Vec::new();
    let mut mask = Vec::new();
    let mut pos = Vec::new();
    for (k, &i) in masked.iter().enumerate() {
        let cand: Vec<bool> = (0..n).map(|j| j == i || token_class[j] != token_class[i]).collect();
        if cand.iter().filter(|&&c| c).count() < 2 {
            continue;
        }
        pos.push((rows.len(), i));
        rows.push(k);
        mask.extend(cand);
    }
    if rows.is_empty() {
        return Ok(None);
    }
    let pred = t.gather_rows(e_hat, &rows)?;
    let pred = t.l2_normalize_rows(pred)?;
    let tg = t.constant(targets.clone());
    let tg = t.l2_normalize_rows(tg)?;
    let tgt = t.transpose(tg)?;
    let s = t.matmul(pred, tgt)?;
    let s = t.scale(s, 1.0 / tau)?;
    let lse = t.masked_logsumexp_rows(s, &mask)?;
    let num = t.pick(s, &pos)?;
    let per = t.sub(lse, num)?;
    Ok(Some(Partial {
        sum: t.sum(per)?,
        count: rows.len(),
    }))
}

/// `alpha_topo * CE + alpha_dist * squared error` per presented pair.
pub fn loss_geo(
    t: &mut Tape,
    distance: Var,
    logits: Var,
    target_distance: &[f64],
    target_relation: &[TopoRelation],
    alpha_topo: f64,
    alpha_dist: f64,
) -> Result<Option<Partial>> {
    let k = target_distance.len();
    if k == 0 {
        return Ok(None);
    }
    let lse = t.masked_logsumexp_rows(logits, &vec![true; 4 * k])?;
    let at: Vec<(usize, usize)> = target_relation.iter().enumerate().map(|(r, rel)| (r, rel.code())).collect();
    let picked = t.pick(logits, &at)?;
    let ce = t.sub(lse, picked)?;
    let tgt = t.constant(Mat::new(k, 1, target_distance.to_vec())?);
    let err = t.sub(distance, tgt)?;
    let sq = t.mul(err, err)?;
    let a = t.scale(ce, alpha_topo)?;
    let b = t.scale(sq, alpha_dist)?;
    let per = t.add(a, b)?;
    Ok(Some(Partial {
        sum: t.sum(per)?,
        count: k,
    }))
}

/// Sibling weights `exp(-d / lambda)` divided by their sum.
pub fn acc_weights(distances: &[f64], lambda: f64) -> Vec<f64> {
    // Shifting by the nearest distance cancels in the ratio and avoids underflow.
    let near = distances.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = distances.iter().map(|d| (-(d - near) / lambda).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// `true` for every local position not in `masked`.
pub fn unmasked(n: usize, masked: &[usize]) -> Vec<bool> {
    let mut keep = vec![true; n];
    for &m in masked {
        keep[m] = false;
    }
    keep
}

/// Window mean of the anchor-conditioned contrastive loss and the number of
/// anchored entities.
pub fn loss_acc(
    t: &mut Tape,
    h_sem: Var,
    ctx: &WindowContext,
    masked: &[usize],
    tau: f64,
    lambda: f64,
) -> Result<Option<(Var, usize)>> {
    let n = ctx.len();
    let keep = unmasked(n, masked);
    let sets = ctx.sibling_sets();
    let mut anchored = 0usize;
    let mut rows = Vec::new();
    let mut mask = Vec::new();
    let mut pos = Vec::new();
    let mut weights = Vec::new();
    for i in (0..n).filter(|&i| keep[i]) {
        let sib: Vec<usize> = sets[i].iter().copied().filter(|&j| keep[j]).collect();
        if sib.is_empty() {
            continue;
        }
        anchored += 1;
        let contrast: Vec<bool> = (0..n).map(|j| j != i && keep[j] && ctx.kinds[j] == ctx.kinds[i]).collect();
        // A lone sibling with nothing to contrast against scores exactly zero.
        if contrast.iter().filter(|&&c| c).count() == 1 {
            continue;
        }
        let r = rows.len();
        rows.push(i);
        mask.extend(contrast);
        let d: Vec<f64> = sib.iter().map(|&j| ctx.distance(i, j)).collect();
        for (j, w) in sib.iter().zip(acc_weights(&d, lambda)) {
            pos.push((r, *j));
            weights.push(w);
        }
    }
    if anchored == 0 {
        return Ok(None);
    }
    if rows.is_empty() {
        return Ok(Some((t.constant(Mat::scalar(0.0)), anchored)));
    }
    let hn = t.l2_normalize_rows(h_sem)?;
    let hq = t.gather_rows(hn, &rows)?;
    let hnt = t.transpose(hn)?;
    let s = t.matmul(hq, hnt)?;
    let s = t.scale(s, 1.0 / tau)?;
    let lse = t.masked_logsumexp_rows(s, &mask)?;
    let lse = t.sum(lse)?;
    let p = t.pick(s, &pos)?;
    let wp = t.mul_const(p, Mat::new(weights.len(), 1, weights)?)?;
    let attract = t.sum(wp)?;
    let total = t.sub(lse, attract)?;
    Ok(Some((t.scale(total, 1.0 / anchored as f64)?, anchored)))
}

/// Mean of `1 - cos` over `pairs`, given a matrix of cosine similarities.
/// `None` for an empty pair set.
pub fn empirical_semivariance(t: &mut Tape, cos: Var, pairs: &[(usize, usize)]) -> Result<Option<Var>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let c = t.pick(cos, pairs)?;
    let m = t.mean(c)?;
    let neg = t.scale(m, -1.0)?;
    Ok(Some(t.add_scalar(neg, 1.0)?))
}

/// Unmasked sibling pairs of one group, keyed by distance bin.
pub fn sibling_bins(ctx: &WindowContext, group: &SiblingGroup, keep: &[bool], cfg: &LossConfig) -> BTreeMap<usize, Vec<(usize, usize)>> {
    let m: Vec<usize> = group.members.iter().copied().filter(|&i| keep[i]).collect();
    let mut bins: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (a, &i) in m.iter().enumerate() {
        for &j in &m[a + 1..] {
            if let Some(b) = cfg.bin_of(ctx.distance(i, j)) {
                bins.entry(b).or_default().push((i, j));
            }
        }
    }
    bins
}

/// Share of a group's binned pairs falling in each bin.
pub fn bin_weights(bins: &BTreeMap<usize, Vec<(usize, usize)>>) -> BTreeMap<usize, f64> {
    let total: usize = bins.values().map(Vec::len).sum();
    bins.iter().map(|(&b, p)| (b, p.len() as f64 / total as f64)).collect()
}

/// Window mean over sibling groups of the binned semivariogram hinge, and
/// the number of groups with at least one binned pair.
pub fn loss_rsr(
    t: &mut Tape,
    h_sem: Var,
    ctx: &WindowContext,
    masked: &[usize],
    global_pairs: &[PairSample],
    cfg: &LossConfig,
) -> Result<Option<(Var, usize)>> {
    let keep = unmasked(ctx.len(), masked);
    let mut global: BTreeMap<(GeometryKind, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for p in global_pairs.iter().filter(|p| keep[p.i] && keep[p.j]) {
        if let Some(b) = cfg.bin_of(p.distance) {
            global.entry((ctx.kinds[p.i], b)).or_default().push((p.i, p.j));
        }
    }
    let mut groups = Vec::new();
    for g in &ctx.groups {
        let bins = sibling_bins(ctx, g, &keep, cfg);
        if !bins.is_empty() {
            groups.push((g.member_kind, bins));
        }
    }
    if groups.is_empty() {
        return Ok(None);
    }
    let hn = t.l2_normalize_rows(h_sem)?;
    let hnt = t.transpose(hn)?;
    let cos = t.matmul(hn, hnt)?;
    let mut glob_cache: BTreeMap<(GeometryKind, usize), Var> = BTreeMap::new();
    for (key, pairs) in &global {
        if let Some(v) = empirical_semivariance(t, cos, pairs)? {
            glob_cache.insert(*key, v);
        }
    }
    let mut terms = Vec::new();
    for (kind, bins) in &groups {
        let omega = bin_weights(bins);
        for (b, pairs) in bins {
            let Some(&glob) = glob_cache.get(&(*kind, *b)) else { continue };
            let rel = empirical_semivariance(t, cos, pairs)?.expect("non-empty bin");
            let diff = t.sub(rel, glob)?;
            let h = t.add_scalar(diff, cfg.delta)?;
            let h = t.relu(h)?;
            terms.push(t.scale(h, omega[b])?);
        }
    }
    let count = groups.len();
    let sum = if terms.is_empty() {
        t.constant(Mat::scalar(0.0))
    } else {
        let all = t.concat_rows(&terms)?;
        t.sum(all)?
    };
    Ok(Some((t.scale(sum, 1.0 / count as f64)?, count)))
}

/// Everything the joint loss needs for one window of a batch.
pub struct BatchWindow<'a> {
    pub ctx: &'a WindowContext,
    pub input: &'a WindowInput,
    pub masked: Vec<usize>,
    pub geo_pairs: Vec<PairSample>,
    pub global_pairs: Vec<PairSample>,
}

/// Per-window loss terms. `None` means the term has no contributor.
pub struct WindowTerms {
    pub mgsm: Option<Partial>,
    pub geo: Option<Partial>,
    pub acc: Option<(Var, usize)>,
    pub rsr: Option<(Var, usize)>,
}

/// All four terms of one window given its stream outputs.
pub fn window_terms(t: &mut Tape, p: &Bound, cfg: &LossConfig, w: &BatchWindow, h_sem: Var, h_fused: Var) -> Result<WindowTerms> {
    let mgsm = if w.masked.is_empty() {
        None
    } else {
        let e_hat = reconstruct(t, p, h_sem, &w.masked)?;
        loss_mgsm(t, e_hat, &w.masked, &w.input.e_sem, &w.ctx.token_class, cfg.tau_mgsm)?
    };
    let geo = if w.geo_pairs.is_empty() {
        None
    } else {
        let size = w.ctx.window.size();
        let mut ordered = Vec::with_capacity(2 * w.geo_pairs.len());
        let mut dist = Vec::new();
        let mut rel = Vec::new();
        for s in &w.geo_pairs {
            for pair in [(s.i, s.j), (s.j, s.i)] {
                ordered.push(pair);
                dist.push(s.distance / size);
                rel.push(s.relation);
            }
        }
        let pred = predict_pair(t, p, h_fused, &ordered)?;
        loss_geo(t, pred.distance, pred.logits, &dist, &rel, cfg.alpha_topo, cfg.alpha_dist)?
    };
    let acc = loss_acc(t, h_sem, w.ctx, &w.masked, cfg.tau_acc, cfg.lambda)?;
    let rsr = loss_rsr(t, h_sem, w.ctx, &w.masked, &w.global_pairs, cfg)?;
    Ok(WindowTerms { mgsm, geo, acc, rsr })
}

/// Joint loss over a batch on one tape. Returns `None` for the total when
/// no term has any contributor. Windows with fewer than two entities are
/// skipped.
pub fn batch_loss(
    t: &mut Tape,
    p: &Bound,
    model: &ModelConfig,
    cfg: &LossConfig,
    batch: &[BatchWindow],
    mut rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> Result<(Option<Var>, LossReport)> {
    let mut terms = Vec::with_capacity(batch.len());
    for w in batch {
        if w.ctx.len() < 2 {
            continue;
        }
        let mode = match rng.as_deref_mut() {
            Some(r) => Mode::Train(r),
            None => Mode::Eval,
        };
        let fwd = forward_window(t, p, model, w.input, &w.masked, mode)?;
        terms.push(window_terms(t, p, cfg, w, fwd.h_sem, fwd.h_fused)?);
    }
    combine_terms(t, cfg, terms)
}

/// Batch means of each term and their weighted sum.
pub fn combine_terms(t: &mut Tape, cfg: &LossConfig, terms: Vec<WindowTerms>) -> Result<(Option<Var>, LossReport)> {
    let mut mgsm = Vec::new();
    let mut geo = Vec::new();
    let mut acc = Vec::new();
    let mut rsr = Vec::new();
    let mut report = LossReport::default();
    for w in terms {
        if let Some(x) = w.mgsm {
            report.n_mgsm += x.count;
            mgsm.push(x.sum);
        }
        if let Some(x) = w.geo {
            report.n_geo += x.count;
            geo.push(x.sum);
        }
        if let Some((v, _)) = w.acc {
            report.n_acc += 1;
            acc.push(v);
        }
        if let Some((v, _)) = w.rsr {
            report.n_rsr += 1;
            rsr.push(v);
        }
    }
    let mut parts = Vec::new();
    let mut reduce = |t: &mut Tape, vars: &[Var], count: usize, alpha: f64, slot: &mut f64| -> Result<()> {
        if vars.is_empty() {
            return Ok(());
        }
        let all = t.concat_rows(vars)?;
        let s = t.sum(all)?;
        let mean = t.scale(s, 1.0 / count as f64)?;
        *slot = t.value(mean).item();
        if alpha > 0.0 {
            parts.push(t.scale(mean, alpha)?);
        }
        Ok(())
    };
    reduce(t, &mgsm, report.n_mgsm, cfg.alpha_mgsm, &mut report.l_mgsm)?;
    reduce(t, &geo, report.n_geo, cfg.alpha_geo, &mut report.l_geo)?;
    reduce(t, &acc, report.n_acc, cfg.alpha_acc, &mut report.l_acc)?;
    reduce(t, &rsr, report.n_rsr, cfg.alpha_rsr, &mut report.l_rsr)?;
    report.l_total = loss_joint([report.l_mgsm, report.l_geo, report.l_acc, report.l_rsr], cfg);
    if parts.is_empty() {
        return Ok((None, report));
    }
    let all = t.concat_rows(&parts)?;
    let total = t.sum(all)?;
    Ok((Some(total), report))
}
