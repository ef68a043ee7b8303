//! Parameters and the dual-stream spatial transformer.
//!
//! Each entity enters as a projected semantic vector and a projected
//! geometry vector. A learned gate mixes them into the fused stream; masked
//! entities contribute the shared mask token instead of their semantics.
//! Every layer computes one set of attention maps from the fused stream and
//! applies it to two value streams, so the semantic stream never sees a
//! masked entity's own tokens.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::encoders::{GEOM_DIM, SEM_DIM};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub d_sem: usize,
    pub d_geom: usize,
    pub gate_bias_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 32,
            d_ff: 64,
            n_layers: 3,
            n_heads: 4,
            dropout: 0.1,
            d_sem: SEM_DIM,
            d_geom: GEOM_DIM,
            gate_bias_init: -2.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_ff == 0 || self.n_layers == 0 || self.n_heads == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.d % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d = {} is not divisible by n_heads = {}",
                self.d, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }
}

/// Named parameter matrices, ordered by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub config: ModelConfig,
    params: BTreeMap<String, Mat>,
}

const STREAMS: [&str; 2] = ["sem", "fused"];

impl ParamStore {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, "init");
        let mut params = BTreeMap::new();
        let (d, ff) = (config.d, config.d_ff);
        let mut linear = |name: &str, fan_in: usize, fan_out: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let a = 1.0 / (fan_in as f64).sqrt();
            let mut u = |n| Mat::new(1, n, (0..n).map(|_| rng.random_range(-a..=a)).collect()).unwrap();
            let w = u(fan_in * fan_out);
            let w = Mat::new(fan_in, fan_out, w.into_data()).unwrap();
            let b = u(fan_out);
            params.insert(format!("{name}.w"), w);
            params.insert(format!("{name}.b"), b);
        };
        linear("proj_sem", config.d_sem, d, &mut rng);
        linear("proj_geom", config.d_geom, d, &mut rng);
        linear("gate.l1", 2 * d, d, &mut rng);
        linear("gate.l2", d, 1, &mut rng);
        for l in 0..config.n_layers {
            for w in ["q", "k", "v_sem", "v_fused"] {
                linear(&format!("layer{l}.{w}"), d, d, &mut rng);
            }
            for s in STREAMS {
                linear(&format!("layer{l}.{s}.out"), d, d, &mut rng);
                linear(&format!("layer{l}.{s}.ff1"), d, ff, &mut rng);
                linear(&format!("layer{l}.{s}.ff2"), ff, d, &mut rng);
            }
        }
        linear("rec.l1", d, d, &mut rng);
        linear("rec.l2", d, config.d_sem, &mut rng);
        linear("dist.l1", 2 * d, d, &mut rng);
        linear("dist.l2", d, 1, &mut rng);
        linear("topo.l1", 2 * d, d, &mut rng);
        linear("topo.l2", d, 4, &mut rng);
        params.insert("gate.l2.b".into(), Mat::scalar(config.gate_bias_init));
        params.insert("mask_token".into(), Mat::zeros(1, d));
        for l in 0..config.n_layers {
            for s in STREAMS {
                for ln in ["ln1", "ln2"] {
                    params.insert(format!("layer{l}.{s}.{ln}.g"), Mat::filled(1, d, 1.0));
                    params.insert(format!("layer{l}.{s}.{ln}.b"), Mat::zeros(1, d));
                }
            }
        }
        Ok(ParamStore {
            config: config.clone(),
            params,
        })
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Mat)> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|m| m.data().len()).sum()
    }

    /// Biases, layer-norm gains and the mask token are exempt from weight
    /// decay.
    pub fn decays(name: &str) -> bool {
        !(name.ends_with(".b") || name.ends_with(".g") || name == "mask_token")
    }

    /// Put every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.params.iter().map(|(k, v)| (k.clone(), tape.param(v.clone()))).collect(),
        }
    }

    /// Put every parameter on `tape` as a constant.
    pub fn bind_const(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.params.iter().map(|(k, v)| (k.clone(), tape.constant(v.clone()))).collect(),
        }
    }

    pub fn to_checkpoint(&self, seeds: BTreeMap<String, u64>, extra: serde_json::Value) -> Checkpoint {
        Checkpoint {
            model: self.config.clone(),
            seeds,
            extra,
            params: self
                .params
                .iter()
                .map(|(k, m)| {
                    (
                        k.clone(),
                        ParamEntry {
                            shape: [m.rows(), m.cols()],
                            data: m.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let reference = ParamStore::init(&ck.model, 0)?;
        let mut params = BTreeMap::new();
        for (name, shape) in reference.params.iter().map(|(k, m)| (k, m.shape())) {
            let e = ck
                .params
                .get(name)
                .ok_or_else(|| Error::Invalid(format!("checkpoint lacks parameter `{name}`")))?;
            if (e.shape[0], e.shape[1]) != shape {
                return Err(Error::Shape {
                    op: "checkpoint",
                    left: shape,
                    right: (e.shape[0], e.shape[1]),
                });
            }
            params.insert(name.clone(), Mat::new(e.shape[0], e.shape[1], e.data.clone())?);
        }
        if let Some(extra) = ck.params.keys().find(|k| !reference.params.contains_key(*k)) {
            return Err(Error::Invalid(format!("unexpected checkpoint parameter `{extra}`")));
        }
        Ok(ParamStore {
            config: ck.model.clone(),
            params,
        })
    }

    pub fn save(&self, path: &Path, seeds: BTreeMap<String, u64>, extra: serde_json::Value) -> Result<()> {
        let ck = self.to_checkpoint(seeds, extra);
        std::fs::write(path, serde_json::to_string(&ck)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Checkpoint)> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok((Self::from_checkpoint(&ck)?, ck))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub seeds: BTreeMap<String, u64>,
    /// Training configuration and any other run metadata.
    #[serde(default)]
    pub extra: serde_json::Value,
    pub params: BTreeMap<String, ParamEntry>,
}

/// Parameters placed on a tape.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Pair parameter names (in store order) with leaves already on a tape.
    pub fn from_vars<'a>(names: impl IntoIterator<Item = &'a String>, vars: &[Var]) -> Self {
        Bound {
            vars: names.into_iter().cloned().zip(vars.iter().copied()).collect(),
        }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    fn linear(&self, t: &mut Tape, x: Var, name: &str) -> Result<Var> {
        let h = t.matmul(x, self.var(&format!("{name}.w")))?;
        t.add_bias(h, self.var(&format!("{name}.b")))
    }

    fn mlp(&self, t: &mut Tape, x: Var, name: &str) -> Result<Var> {
        let h = self.linear(t, x, &format!("{name}.l1"))?;
        let h = t.relu(h)?;
        self.linear(t, h, &format!("{name}.l2"))
    }
}

/// Training mode applies dropout drawn from the given generator.
pub enum Mode<'a> {
    Train(&'a mut rand_chacha::ChaCha8Rng),
    Eval,
}

/// Raw per-entity encoder outputs for one window.
#[derive(Debug, Clone)]
pub struct WindowInput {
    /// `n x d_sem`
    pub e_sem: Mat,
    /// `n x d_geom`
    pub e_geom: Mat,
}

pub struct FuseOutput {
    pub sem: Var,
    pub fused: Var,
    /// `n x 1` gate values.
    pub alpha: Var,
}

pub struct DualStreamOutput {
    pub h_sem: Var,
    pub h_fused: Var,
    pub alpha: Var,
    /// `attention[layer][head]`, each `n x n`.
    pub attention: Vec<Vec<Var>>,
}

/// Gate-mix projected semantic and geometry rows: `(1 - a) s + a g`.
pub fn fuse(t: &mut Tape, p: &Bound, sem: Var, geom: Var) -> Result<FuseOutput> {
    let x = t.concat_cols(&[sem, geom])?;
    let logit = p.mlp(t, x, "gate")?;
    let alpha = t.sigmoid(logit)?;
    let diff = t.sub(geom, sem)?;
    let mix = t.mul_col(diff, alpha)?;
    let fused = t.add(sem, mix)?;
    Ok(FuseOutput { sem, fused, alpha })
}

fn dropout(t: &mut Tape, x: Var, rate: f64, mode: &mut Mode) -> Result<Var> {
    match mode {
        Mode::Train(rng) if rate > 0.0 => {
            let (r, c) = t.value(x).shape();
            let keep = 1.0 / (1.0 - rate);
            let m = (0..r * c)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect();
            t.mul_const(x, Mat::new(r, c, m)?)
        }
        _ => Ok(x),
    }
}

/// Run the transformer over one window. `masked` holds local positions.
pub fn forward_window(
    t: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    input: &WindowInput,
    masked: &[usize],
    mode: Mode,
) -> Result<DualStreamOutput> {
    let n = input.e_sem.rows();
    if n < 2 {
        return Err(Error::WindowTooSmall(n));
    }
    forward_rows(t, p, cfg, input, masked, mode)
}

/// [`forward_window`] without the two-entity minimum, for probe contexts
/// that may hold only the target.
pub fn forward_rows(
    t: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    input: &WindowInput,
    masked: &[usize],
    mut mode: Mode,
) -> Result<DualStreamOutput> {
    let n = input.e_sem.rows();
    if n == 0 || input.e_geom.rows() != n {
        return Err(Error::Shape {
            op: "forward_window",
            left: input.e_sem.shape(),
            right: input.e_geom.shape(),
        });
    }
    let e_sem = t.constant(input.e_sem.clone());
    let e_geom = t.constant(input.e_geom.clone());
    // Masked rows are gathered from the mask token, never from their own
    // semantic projection.
    let sem_all = p.linear(t, e_sem, "proj_sem")?;
    let with_mask = t.concat_rows(&[sem_all, p.var("mask_token")])?;
    let mut idx: Vec<usize> = (0..n).collect();
    for &m in masked {
        idx[m] = n;
    }
    let sem = t.gather_rows(with_mask, &idx)?;
    let geom = p.linear(t, e_geom, "proj_geom")?;
    let f = fuse(t, p, sem, geom)?;

    let (mut xs, mut xf) = (f.sem, f.fused);
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut attention = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let lin = |t: &mut Tape, x, w: &str| p.linear(t, x, &format!("layer{l}.{w}"));
        let q = lin(t, xf, "q")?;
        let k = lin(t, xf, "k")?;
        let values = [lin(t, xs, "v_sem")?, lin(t, xf, "v_fused")?];
        let mut heads = Vec::with_capacity(cfg.n_heads);
        let mut outs = [Vec::new(), Vec::new()];
        for h in 0..cfg.n_heads {
            let (c0, c1) = (h * dh, (h + 1) * dh);
            let qh = t.slice_cols(q, c0, c1)?;
            let kh = t.slice_cols(k, c0, c1)?;
            let kt = t.transpose(kh)?;
            let s = t.matmul(qh, kt)?;
            let s = t.scale(s, scale)?;
            let a = t.softmax_rows(s)?;
            for (o, &v) in outs.iter_mut().zip(&values) {
                let vh = t.slice_cols(v, c0, c1)?;
                o.push(t.matmul(a, vh)?);
            }
            heads.push(a);
        }
        attention.push(heads);
        let mut next = [xs, xf];
        for (si, s) in STREAMS.iter().enumerate() {
            let pre = format!("layer{l}.{s}");
            let o = t.concat_cols(&outs[si])?;
            let o = p.linear(t, o, &format!("{pre}.out"))?;
            let o = dropout(t, o, cfg.dropout, &mut mode)?;
            let y = t.add(next[si], o)?;
            let y = t.layer_norm(y, p.var(&format!("{pre}.ln1.g")), p.var(&format!("{pre}.ln1.b")))?;
            let h = p.linear(t, y, &format!("{pre}.ff1"))?;
            let h = t.relu(h)?;
            let h = p.linear(t, h, &format!("{pre}.ff2"))?;
            let h = dropout(t, h, cfg.dropout, &mut mode)?;
            let z = t.add(y, h)?;
            next[si] = t.layer_norm(z, p.var(&format!("{pre}.ln2.g")), p.var(&format!("{pre}.ln2.b")))?;
        }
        xs = next[0];
        xf = next[1];
    }
    Ok(DualStreamOutput {
        h_sem: xs,
        h_fused: xf,
        alpha: f.alpha,
        attention,
    })
}

/// Predicted semantic embeddings (`k x d_sem`) for the given rows of
/// `h_sem`.
pub fn reconstruct(t: &mut Tape, p: &Bound, h_sem: Var, rows: &[usize]) -> Result<Var> {
    let x = t.gather_rows(h_sem, rows)?;
    p.mlp(t, x, "rec")
}

pub struct PairPrediction {
    /// `k x 1` normalized distance.
    pub distance: Var,
    /// `k x 4` relation logits.
    pub logits: Var,
}

/// Pair heads over `[h_i ; h_j]` for each ordered pair.
pub fn predict_pair(t: &mut Tape, p: &Bound, h_fused: Var, pairs: &[(usize, usize)]) -> Result<PairPrediction> {
    let is: Vec<usize> = pairs.iter().map(|x| x.0).collect();
    let js: Vec<usize> = pairs.iter().map(|x| x.1).collect();
    let hi = t.gather_rows(h_fused, &is)?;
    let hj = t.gather_rows(h_fused, &js)?;
    let x = t.concat_cols(&[hi, hj])?;
    Ok(PairPrediction {
        distance: p.mlp(t, x, "dist")?,
        logits: p.mlp(t, x, "topo")?,
    })
}

/// Eval-mode pair prediction averaged over both presentation orders.
pub fn predict_pair_symmetric(t: &mut Tape, p: &Bound, h_fused: Var, pairs: &[(usize, usize)]) -> Result<(Vec<f64>, Vec<[f64; 4]>)> {
    let both: Vec<(usize, usize)> = pairs.iter().flat_map(|&(i, j)| [(i, j), (j, i)]).collect();
    let pred = predict_pair(t, p, h_fused, &both)?;
    let d = t.value(pred.distance);
    let lg = t.value(pred.logits);
    let mut dist = Vec::with_capacity(pairs.len());
    let mut logits = Vec::with_capacity(pairs.len());
    for k in 0..pairs.len() {
        dist.push(0.5 * (d.get(2 * k, 0) + d.get(2 * k + 1, 0)));
        let mut l = [0.0; 4];
        for (c, v) in l.iter_mut().enumerate() {
            *v = 0.5 * (lg.get(2 * k, c) + lg.get(2 * k + 1, c));
        }
        logits.push(l);
    }
    Ok((dist, logits))
}
