//! Pretraining loop: window preparation, AdamW, cosine schedule, global
//! norm clipping, JSON-lines logging and checkpoints.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape};
use crate::encoders::{encode_geometry, Codebook, Frame};
use crate::config::layered;
use crate::error::{Error, Result};
use crate::geometry::Dataset;
use crate::losses::{batch_loss, BatchWindow, LossConfig, LossReport};
use crate::model::{ModelConfig, ParamStore, WindowInput};
use crate::rng::{derive_seed, rng_indexed};
use crate::windows::{build_windows, sample_geo_pairs, sample_global_pairs, select_masks, WindowConfig, WindowContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_windows: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
    /// Seed of the frozen semantic codebook, shared by pretraining and
    /// probing.
    pub codebook_seed: u64,
    pub mask_ratio: f64,
    /// Checkpoint period in epochs; 0 writes only the final checkpoint.
    pub eval_every: usize,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub window: WindowConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            weight_decay: 0.01,
            epochs: 100,
            batch_windows: 3,
            grad_clip_norm: 1.0,
            seed: 0,
            codebook_seed: 0,
            mask_ratio: 0.4,
            eval_every: 0,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            window: WindowConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.weight_decay >= 0.0 && self.grad_clip_norm > 0.0) {
            return Err(Error::Config("learning rate and clip norm must be positive".into()));
        }
        if self.batch_windows == 0 {
            return Err(Error::Config("batch_windows must be positive".into()));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!("mask_ratio {} outside (0, 1)", self.mask_ratio)));
        }
        self.loss.validate()?;
        self.model.validate()
    }

    /// Layer `key=value` overrides over an optional JSON document, then
    /// decode and validate.
    pub fn from_json_with_overrides(base: Option<&str>, overrides: &[String]) -> Result<Self> {
        let cfg: TrainConfig = layered(base, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn lr_schedule(epoch: usize, total_epochs: usize, base_lr: f64) -> f64 {
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total_epochs.max(1) as f64).cos())
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, Default)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            ..Default::default()
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without an entry in `grads` still decay.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Mat>, lr: f64, weight_decay: f64) -> Result<()> {
        self.update(params.iter_mut(), grads, lr, |name| {
            if ParamStore::decays(name) {
                weight_decay
            } else {
                0.0
            }
        })
    }

    /// Same update over a plain name-to-matrix map, decaying every entry.
    pub fn step_named(&mut self, params: &mut BTreeMap<String, Mat>, grads: &BTreeMap<String, Mat>, lr: f64, weight_decay: f64) -> Result<()> {
        self.update(params.iter_mut(), grads, lr, |_| weight_decay)
    }

    fn update<'a, I, D>(&mut self, params: I, grads: &BTreeMap<String, Mat>, lr: f64, decay_of: D) -> Result<()>
    where
        I: Iterator<Item = (&'a String, &'a mut Mat)>,
        D: Fn(&str) -> f64,
    {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, p) in params {
            let wd = decay_of(name);
            let n = p.data().len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let g = grads.get(name).map(|g| g.data());
            for (k, theta) in p.data_mut().iter_mut().enumerate() {
                let gk = g.map_or(0.0, |g| g[k]);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                *theta -= lr * (mh / (vh.sqrt() + self.eps) + wd * *theta);
            }
        }
        Ok(())
    }
}

pub fn global_norm(grads: &BTreeMap<String, Mat>) -> f64 {
    grads.values().map(Mat::frobenius_sq).sum::<f64>().sqrt()
}

/// Scale all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Mat>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// A window plus its frozen encoder inputs.
#[derive(Debug, Clone)]
pub struct PreparedWindow {
    pub ctx: WindowContext,
    pub input: WindowInput,
}

/// Semantic embedding of every dataset entity.
pub fn semantic_table(dataset: &Dataset, codebook: &Codebook) -> Vec<Vec<f64>> {
    dataset.entities.iter().map(|e| codebook.encode(&e.tokens)).collect()
}

pub fn window_input(dataset: &Dataset, sem: &[Vec<f64>], members: &[usize], frame: &Frame) -> Result<WindowInput> {
    let n = members.len();
    let e_sem = Mat::new(n, sem.first().map_or(0, Vec::len), members.iter().flat_map(|&i| sem[i].iter().copied()).collect())?;
    let geo: Vec<f64> = members
        .iter()
        .flat_map(|&i| encode_geometry(&dataset.entities[i].geometry, frame))
        .collect();
    let e_geom = Mat::new(n, crate::encoders::GEOM_DIM, geo)?;
    Ok(WindowInput { e_sem, e_geom })
}

/// Build windows, drop those with fewer than two members, and precompute
/// relations and encoder inputs.
pub fn prepare_windows(dataset: &Dataset, cfg: &WindowConfig, codebook: &Codebook) -> Result<Vec<PreparedWindow>> {
    let sem = semantic_table(dataset, codebook);
    let mut out = Vec::new();
    for w in build_windows(dataset, cfg)? {
        if w.members.len() < 2 {
            continue;
        }
        let frame = Frame::from(&w);
        let input = window_input(dataset, &sem, &w.members, &frame)?;
        out.push(PreparedWindow {
            ctx: WindowContext::build(dataset, w, cfg),
            input,
        });
    }
    if out.is_empty() {
        return Err(Error::NoUsableWindows("every window has fewer than two entities".into()));
    }
    Ok(out)
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub epoch: usize,
    pub batch: usize,
    pub l_mgsm: f64,
    pub l_geo: f64,
    pub l_acc: f64,
    pub l_rsr: f64,
    pub l_total: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

impl LogLine {
    fn new(epoch: usize, batch: usize, r: &LossReport, lr: f64, grad_norm: f64) -> Self {
        LogLine {
            epoch,
            batch,
            l_mgsm: r.l_mgsm,
            l_geo: r.l_geo,
            l_acc: r.l_acc,
            l_rsr: r.l_rsr,
            l_total: r.l_total,
            lr,
            grad_norm,
        }
    }
}

pub struct TrainOutcome {
    pub params: ParamStore,
    pub log: Vec<LogLine>,
}

impl TrainOutcome {
    /// Mean joint loss of each epoch's batches.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for l in &self.log {
            let e = sums.entry(l.epoch).or_default();
            e.0 += l.l_total;
            e.1 += 1;
        }
        sums.values().map(|(s, n)| s / *n as f64).collect()
    }
}

/// Masks and pairs for one window, drawn from the batch generator.
pub fn sample_batch_window<'a>(
    pw: &'a PreparedWindow,
    cfg: &TrainConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> BatchWindow<'a> {
    let masked = select_masks(pw.ctx.len(), cfg.mask_ratio, rng);
    let geo_pairs = sample_geo_pairs(&pw.ctx, cfg.window.n_random, cfg.window.n_hard, rng);
    let global_pairs = sample_global_pairs(&pw.ctx, cfg.window.n_global, rng);
    BatchWindow {
        ctx: &pw.ctx,
        input: &pw.input,
        masked,
        geo_pairs,
        global_pairs,
    }
}

/// Where training writes artifacts. Both are optional.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

impl TrainOutput {
    fn log_path(&self) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("train_log.jsonl"))
    }
}

pub fn seeds_of(cfg: &TrainConfig) -> BTreeMap<String, u64> {
    BTreeMap::from([
        ("seed".to_string(), cfg.seed),
        ("codebook_seed".to_string(), cfg.codebook_seed),
        ("init".to_string(), derive_seed(cfg.seed, "init")),
    ])
}

fn save(params: &ParamStore, cfg: &TrainConfig, path: &Path) -> Result<()> {
    params.save(path, seeds_of(cfg), serde_json::to_value(cfg)?)
}

/// Run pretraining from a fresh initialization.
pub fn train(dataset: &Dataset, cfg: &TrainConfig, out: &TrainOutput) -> Result<TrainOutcome> {
    cfg.validate()?;
    let codebook = Codebook::new(cfg.codebook_seed, cfg.model.d_sem);
    let windows = prepare_windows(dataset, &cfg.window, &codebook)?;
    let params = ParamStore::init(&cfg.model, cfg.seed)?;
    train_prepared(&windows, params, cfg, out)
}

pub fn train_prepared(windows: &[PreparedWindow], mut params: ParamStore, cfg: &TrainConfig, out: &TrainOutput) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(d) = &out.dir {
        std::fs::create_dir_all(d)?;
        if let Some(p) = out.log_path() {
            std::fs::write(p, "")?;
        }
    }
    let mut opt = AdamW::new();
    let mut log = Vec::new();
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg.epochs, cfg.learning_rate);
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut rng_indexed(cfg.seed, "shuffle", &[epoch as u64]));
        for (b, chunk) in order.chunks(cfg.batch_windows).enumerate() {
            let mut rng = rng_indexed(cfg.seed, "batch", &[epoch as u64, b as u64]);
            let batch: Vec<BatchWindow> = chunk.iter().map(|&w| sample_batch_window(&windows[w], cfg, &mut rng)).collect();
            let step = (|| -> Result<LogLine> {
                let mut t = Tape::new();
                let bound = params.bind(&mut t);
                let (total, report) = batch_loss(&mut t, &bound, &cfg.model, &cfg.loss, &batch, Some(&mut rng))?;
                let Some(total) = total.filter(|_| report.l_total != 0.0) else {
                    return Ok(LogLine::new(epoch, b, &report, lr, 0.0));
                };
                t.backward(total)?;
                let mut grads = BTreeMap::new();
                for (name, &v) in bound.iter() {
                    if let Some(g) = t.grad(v) {
                        if !g.is_finite() {
                            return Err(Error::NonFiniteGradient(name.clone()));
                        }
                        grads.insert(name.clone(), g.clone());
                    }
                }
                let norm = clip_grad_norm(&mut grads, cfg.grad_clip_norm);
                opt.step(&mut params, &grads, lr, cfg.weight_decay)?;
                Ok(LogLine::new(epoch, b, &report, lr, norm))
            })();
            let line = match step {
                Ok(l) => l,
                Err(e) => {
                    if let Some(d) = &out.dir {
                        save(&params, cfg, &d.join("checkpoint_last_good.json"))?;
                    }
                    return Err(e);
                }
            };
            if let Some(p) = out.log_path() {
                let mut f = OpenOptions::new().append(true).open(p)?;
                writeln!(f, "{}", serde_json::to_string(&line)?)?;
            }
            log.push(line);
        }
        if let Some(d) = &out.dir {
            if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 && epoch + 1 < cfg.epochs {
                save(&params, cfg, &d.join(format!("checkpoint_epoch{}.json", epoch + 1)))?;
            }
        }
    }
    if let Some(d) = &out.dir {
        save(&params, cfg, &d.join("checkpoint.json"))?;
    }
    Ok(TrainOutcome { params, log })
}
