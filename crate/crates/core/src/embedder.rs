//! Trainable crop embedder and its metric-learning objective.
//!
//! The network is a small convolutional feature extractor
//! (`conv3x3 -> ReLU -> avgpool2` per stage), an adaptive average pool onto
//! a coarse spatial grid, and an affine projection whose output is
//! L2-normalised. Training minimises the reciprocal triplet loss
//! `d(a,p) + 1/d(a,n)` over batch-hard mined triplets with SGD, keeping the
//! snapshot with the lowest validation loss.
//!
//! All arithmetic is `f64` and single-threaded so runs are bit-reproducible.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Crop;
use crate::image::Image;
use crate::seed;
use crate::tripletgen::TripletBatch;
use crate::IdentityId;

/// Lower bound applied to the anchor-negative distance inside the loss.
pub const DISTANCE_EPS: f64 = 1e-6;
/// Pre-embeddings shorter than this map to the first basis vector.
const NORM_EPS: f64 = 1e-12;
const STD_EPS: f64 = 1e-6;
pub const CHECKPOINT_FORMAT: &str = "herdid-embedder";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub input_h: usize,
    pub input_w: usize,
    /// Output channels of each conv stage.
    pub channels: Vec<usize>,
    /// Odd square kernel size.
    pub kernel: usize,
    /// Rows and columns of the pooled feature grid.
    pub pool_grid: (usize, usize),
    pub embed_dim: usize,
    /// Standardise each crop to zero mean and unit variance first.
    pub standardize: bool,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            input_h: 40,
            input_w: 96,
            channels: vec![8, 16],
            kernel: 3,
            pool_grid: (2, 6),
            embed_dim: 128,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct StageShape {
    in_c: usize,
    out_c: usize,
    h: usize,
    w: usize,
    w_off: usize,
    b_off: usize,
}

impl StageShape {
    fn pooled(&self) -> (usize, usize) {
        (self.h / 2, self.w / 2)
    }
}

#[derive(Debug, Clone)]
struct Layout {
    stages: Vec<StageShape>,
    feat_c: usize,
    feat_h: usize,
    feat_w: usize,
    fc_w_off: usize,
    fc_b_off: usize,
    n_features: usize,
    n_params: usize,
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) || self.kernel == 0 {
            return Err(Error::invalid("kernel size must be odd"));
        }
        if self.embed_dim == 0 || self.channels.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let (mut h, mut w) = (self.input_h, self.input_w);
        for _ in &self.channels {
            h /= 2;
            w /= 2;
        }
        if h < self.pool_grid.0 || w < self.pool_grid.1 || self.pool_grid.0 == 0 || self.pool_grid.1 == 0
        {
            return Err(Error::invalid(format!(
                "input {}x{} too small for {} stages and a {:?} pool grid",
                self.input_h,
                self.input_w,
                self.channels.len(),
                self.pool_grid
            )));
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        let k2 = self.kernel * self.kernel;
        let mut off = 0;
        let mut stages = Vec::new();
        let (mut c, mut h, mut w) = (1, self.input_h, self.input_w);
        for &out_c in &self.channels {
            let w_off = off;
            off += out_c * c * k2;
            let b_off = off;
            off += out_c;
            stages.push(StageShape {
                in_c: c,
                out_c,
                h,
                w,
                w_off,
                b_off,
            });
            c = out_c;
            h /= 2;
            w /= 2;
        }
        let n_features = c * self.pool_grid.0 * self.pool_grid.1;
        let fc_w_off = off;
        off += self.embed_dim * n_features;
        let fc_b_off = off;
        off += self.embed_dim;
        Layout {
            stages,
            feat_c: c,
            feat_h: h,
            feat_w: w,
            fc_w_off,
            fc_b_off,
            n_features,
            n_params: off,
        }
    }
}

/// Unit-length embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Squared Euclidean distance.
pub fn distance(u: &Embedding, v: &Embedding) -> f64 {
    sq_dist(&u.0, &v.0)
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Reciprocal triplet loss `d_ap + 1/d_an` with `d_an` floored at
/// [`DISTANCE_EPS`].
pub fn rtl_loss(d_ap: f64, d_an: f64) -> Result<f64> {
    if !(d_ap >= 0.0) || !(d_an >= 0.0) {
        return Err(Error::invalid(format!("distances must be >= 0, got {d_ap}, {d_an}")));
    }
    Ok(d_ap + 1.0 / d_an.max(DISTANCE_EPS))
}

/// Partial derivatives `(dL/dd_ap, dL/dd_an)` of [`rtl_loss`].
pub fn rtl_loss_grad(d_ap: f64, d_an: f64) -> Result<(f64, f64)> {
    rtl_loss(d_ap, d_an)?;
    let d_an_grad = if d_an > DISTANCE_EPS { -1.0 / (d_an * d_an) } else { 0.0 };
    Ok((1.0, d_an_grad))
}

/// Grouping of one batch element: positives share `tracklet`, negatives
/// must come from another `video`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleTag {
    pub tracklet: u64,
    pub video: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinedTriplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub d_ap: f64,
    pub d_an: f64,
}

/// For each anchor, the farthest same-tracklet element and the nearest
/// element from a different video. Anchors lacking either are skipped;
/// ties go to the lower index.
pub fn batch_hard_mine(embeddings: &[Embedding], tags: &[SampleTag]) -> Result<Vec<MinedTriplet>> {
    if embeddings.len() != tags.len() {
        return Err(Error::invalid("one tag per embedding required"));
    }
    let n = embeddings.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distance(&embeddings[i], &embeddings[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut out = Vec::new();
    for a in 0..n {
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = dist[a * n + j];
            if tags[j].tracklet == tags[a].tracklet {
                if pos.is_none_or(|(_, b)| d > b) {
                    pos = Some((j, d));
                }
            } else if tags[j].video != tags[a].video && neg.is_none_or(|(_, b)| d < b) {
                neg = Some((j, d));
            }
        }
        if let (Some((p, d_ap)), Some((ng, d_an))) = (pos, neg) {
            out.push(MinedTriplet {
                anchor: a,
                positive: p,
                negative: ng,
                d_ap,
                d_an,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::InsufficientData(
            "no anchor has both an in-batch positive and a negative".into(),
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderModel {
    pub config: EmbedderConfig,
    pub params: Vec<f64>,
}

/// Intermediate values of one forward pass.
struct Trace {
    /// Per stage: zero-padded input and pre-activation conv output.
    padded: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    features: Vec<f64>,
    z: Vec<f64>,
    norm: f64,
    embedding: Vec<f64>,
}

fn grid_bounds(len: usize, cells: usize, i: usize) -> (usize, usize) {
    let start = i * len / cells;
    let end = ((i + 1) * len).div_ceil(cells);
    (start, end)
}

impl EmbedderModel {
    /// Fan-in scaled uniform initialisation, zero biases.
    pub fn new(config: EmbedderConfig, rng_seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut params = vec![0.0; layout.n_params];
        let mut rng = seed::rng(rng_seed, &[0xE3B]);
        let k2 = config.kernel * config.kernel;
        for s in &layout.stages {
            let bound = (6.0 / (s.in_c * k2) as f64).sqrt();
            for p in &mut params[s.w_off..s.b_off] {
                *p = rng.random_range(-bound..bound);
            }
        }
        let bound = (3.0 / layout.n_features as f64).sqrt();
        for p in &mut params[layout.fc_w_off..layout.fc_b_off] {
            *p = rng.random_range(-bound..bound);
        }
        Ok(Self { config, params })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Zeroes the final projection (weights and bias).
    pub fn zero_projection(&mut self) {
        let layout = self.config.layout();
        self.params[layout.fc_w_off..].iter_mut().for_each(|p| *p = 0.0);
    }

    fn prepare_input(&self, crop: &Image) -> Result<Vec<f64>> {
        let cfg = &self.config;
        if crop.height() != cfg.input_h || crop.width() != cfg.input_w {
            return Err(Error::invalid(format!(
                "crop is {}x{}, model expects {}x{}",
                crop.height(),
                crop.width(),
                cfg.input_h,
                cfg.input_w
            )));
        }
        let gray = crop.to_gray();
        let mut x: Vec<f64> = gray.data().iter().map(|&v| v as f64).collect();
        if cfg.standardize {
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt().max(STD_EPS);
            x.iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
        Ok(x)
    }

    fn forward(&self, input: Vec<f64>, layout: &Layout) -> Trace {
        let k = self.config.kernel;
        let pad = k / 2;
        let mut padded_all = Vec::with_capacity(layout.stages.len());
        let mut pre_all = Vec::with_capacity(layout.stages.len());
        let mut x = input;
        for s in &layout.stages {
            let (ph, pw) = (s.h + 2 * pad, s.w + 2 * pad);
            let mut padded = vec![0.0; s.in_c * ph * pw];
            for c in 0..s.in_c {
                for y in 0..s.h {
                    let src = &x[(c * s.h + y) * s.w..(c * s.h + y + 1) * s.w];
                    let dst_start = (c * ph + y + pad) * pw + pad;
                    padded[dst_start..dst_start + s.w].copy_from_slice(src);
                }
            }
            let mut pre = vec![0.0; s.out_c * s.h * s.w];
            for o in 0..s.out_c {
                let out = &mut pre[o * s.h * s.w..(o + 1) * s.h * s.w];
                out.iter_mut().for_each(|v| *v = self.params[s.b_off + o]);
                for c in 0..s.in_c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = self.params[s.w_off + ((o * s.in_c + c) * k + ky) * k + kx];
                            for y in 0..s.h {
                                let row = &padded[(c * ph + y + ky) * pw + kx..][..s.w];
                                let orow = &mut out[y * s.w..(y + 1) * s.w];
                                for (ov, iv) in orow.iter_mut().zip(row) {
                                    *ov += wv * iv;
                                }
                            }
                        }
                    }
                }
            }
            let (oh, ow) = s.pooled();
            let mut pooled = vec![0.0; s.out_c * oh * ow];
            for o in 0..s.out_c {
                for y in 0..oh {
                    for xx in 0..ow {
                        let base = o * s.h * s.w;
                        let a = pre[base + 2 * y * s.w + 2 * xx].max(0.0);
                        let b = pre[base + 2 * y * s.w + 2 * xx + 1].max(0.0);
                        let c2 = pre[base + (2 * y + 1) * s.w + 2 * xx].max(0.0);
                        let d = pre[base + (2 * y + 1) * s.w + 2 * xx + 1].max(0.0);
                        pooled[(o * oh + y) * ow + xx] = 0.25 * (a + b + c2 + d);
                    }
                }
            }
            padded_all.push(padded);
            pre_all.push(pre);
            x = pooled;
        }

        let (gr, gc) = self.config.pool_grid;
        let (fh, fw) = (layout.feat_h, layout.feat_w);
        let mut features = vec![0.0; layout.n_features];
        for c in 0..layout.feat_c {
            for i in 0..gr {
                let (r0, r1) = grid_bounds(fh, gr, i);
                for j in 0..gc {
                    let (c0, c1) = grid_bounds(fw, gc, j);
                    let mut acc = 0.0;
                    for y in r0..r1 {
                        for xx in c0..c1 {
                            acc += x[(c * fh + y) * fw + xx];
                        }
                    }
                    features[(c * gr + i) * gc + j] = acc / ((r1 - r0) * (c1 - c0)) as f64;
                }
            }
        }

        let dim = self.config.embed_dim;
        let nf = layout.n_features;
        let mut z = vec![0.0; dim];
        for (j, zj) in z.iter_mut().enumerate() {
            let wrow = &self.params[layout.fc_w_off + j * nf..layout.fc_w_off + (j + 1) * nf];
            *zj = self.params[layout.fc_b_off + j]
                + wrow.iter().zip(&features).map(|(w, f)| w * f).sum::<f64>();
        }
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let embedding = if norm < NORM_EPS {
            let mut e = vec![0.0; dim];
            e[0] = 1.0;
            e
        } else {
            z.iter().map(|v| v / norm).collect()
        };
        Trace {
            padded: padded_all,
            pre: pre_all,
            features,
            z,
            norm,
            embedding,
        }
    }

    /// Accumulates `dL/dparams` into `grad` given `dL/d(embedding)`.
    fn backward(&self, trace: &Trace, d_embed: &[f64], layout: &Layout, grad: &mut [f64]) {
        if trace.norm < NORM_EPS {
            return;
        }
        let e = &trace.embedding;
        let dot: f64 = e.iter().zip(d_embed).map(|(a, b)| a * b).sum();
        let dz: Vec<f64> = d_embed
            .iter()
            .zip(e)
            .map(|(g, ev)| (g - ev * dot) / trace.norm)
            .collect();
        let _ = &trace.z;

        let nf = layout.n_features;
        let mut dfeat = vec![0.0; nf];
        for (j, &dzj) in dz.iter().enumerate() {
            grad[layout.fc_b_off + j] += dzj;
            let w_off = layout.fc_w_off + j * nf;
            for f in 0..nf {
                grad[w_off + f] += dzj * trace.features[f];
                dfeat[f] += dzj * self.params[w_off + f];
            }
        }

        let (gr, gc) = self.config.pool_grid;
        let (fh, fw) = (layout.feat_h, layout.feat_w);
        let mut dx = vec![0.0; layout.feat_c * fh * fw];
        for c in 0..layout.feat_c {
            for i in 0..gr {
                let (r0, r1) = grid_bounds(fh, gr, i);
                for j in 0..gc {
                    let (c0, c1) = grid_bounds(fw, gc, j);
                    let g = dfeat[(c * gr + i) * gc + j] / ((r1 - r0) * (c1 - c0)) as f64;
                    for y in r0..r1 {
                        for xx in c0..c1 {
                            dx[(c * fh + y) * fw + xx] += g;
                        }
                    }
                }
            }
        }

        let k = self.config.kernel;
        let pad = k / 2;
        for (si, s) in layout.stages.iter().enumerate().rev() {
            let (oh, ow) = s.pooled();
            let pre = &trace.pre[si];
            let padded = &trace.padded[si];
            let mut dpre = vec![0.0; s.out_c * s.h * s.w];
            for o in 0..s.out_c {
                for y in 0..oh {
                    for xx in 0..ow {
                        let g = 0.25 * dx[(o * oh + y) * ow + xx];
                        if g == 0.0 {
                            continue;
                        }
                        for (dy, dxo) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let idx = o * s.h * s.w + (2 * y + dy) * s.w + 2 * xx + dxo;
                            if pre[idx] > 0.0 {
                                dpre[idx] = g;
                            }
                        }
                    }
                }
            }
            let (ph, pw) = (s.h + 2 * pad, s.w + 2 * pad);
            let need_input_grad = si > 0;
            let mut dpadded = if need_input_grad {
                vec![0.0; s.in_c * ph * pw]
            } else {
                Vec::new()
            };
            for o in 0..s.out_c {
                let dout = &dpre[o * s.h * s.w..(o + 1) * s.h * s.w];
                grad[s.b_off + o] += dout.iter().sum::<f64>();
                for c in 0..s.in_c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let widx = s.w_off + ((o * s.in_c + c) * k + ky) * k + kx;
                            let wv = self.params[widx];
                            let mut acc = 0.0;
                            for y in 0..s.h {
                                let row = &padded[(c * ph + y + ky) * pw + kx..][..s.w];
                                let drow = &dout[y * s.w..(y + 1) * s.w];
                                acc += row.iter().zip(drow).map(|(a, b)| a * b).sum::<f64>();
                                if need_input_grad {
                                    let dst = &mut dpadded[(c * ph + y + ky) * pw + kx..][..s.w];
                                    for (dv, g) in dst.iter_mut().zip(drow) {
                                        *dv += wv * g;
                                    }
                                }
                            }
                            grad[widx] += acc;
                        }
                    }
                }
            }
            if need_input_grad {
                let mut next = vec![0.0; s.in_c * s.h * s.w];
                for c in 0..s.in_c {
                    for y in 0..s.h {
                        let src = &dpadded[(c * ph + y + pad) * pw + pad..][..s.w];
                        next[(c * s.h + y) * s.w..(c * s.h + y + 1) * s.w].copy_from_slice(src);
                    }
                }
                dx = next;
            }
        }
    }

    pub fn embed_image(&self, pixels: &Image) -> Result<Embedding> {
        let layout = self.config.layout();
        let input = self.prepare_input(pixels)?;
        Ok(Embedding(self.forward(input, &layout).embedding))
    }

    /// Deterministic forward pass to a unit-norm embedding.
    pub fn embed(&self, crop: &Crop) -> Result<Embedding> {
        self.embed_image(&crop.pixels)
    }

    pub fn embed_all<'a>(&self, images: impl IntoIterator<Item = &'a Image>) -> Result<Vec<Embedding>> {
        images.into_iter().map(|i| self.embed_image(i)).collect()
    }

    /// Mean batch-hard RTL over `images` and its gradient.
    pub fn loss_and_grad(&self, images: &[&Image], tags: &[SampleTag]) -> Result<LossEval> {
        let layout = self.config.layout();
        let traces: Vec<Trace> = images
            .iter()
            .map(|img| Ok(self.forward(self.prepare_input(img)?, &layout)))
            .collect::<Result<_>>()?;
        let embeddings: Vec<Embedding> = traces.iter().map(|t| Embedding(t.embedding.clone())).collect();
        let mined = batch_hard_mine(&embeddings, tags)?;
        let (loss, d_embed) = triplet_objective(&embeddings, &mined)?;
        let mut grad = vec![0.0; self.params.len()];
        for (i, trace) in traces.iter().enumerate() {
            if d_embed[i].iter().any(|&g| g != 0.0) {
                self.backward(trace, &d_embed[i], &layout, &mut grad);
            }
        }
        Ok(LossEval { loss, grad, mined })
    }

    /// Mean RTL over a fixed set of triplets (no re-mining).
    pub fn loss_for(&self, images: &[&Image], triplets: &[MinedTriplet]) -> Result<f64> {
        let embeddings: Vec<Embedding> = images
            .iter()
            .map(|img| self.embed_image(img))
            .collect::<Result<_>>()?;
        let fixed: Vec<MinedTriplet> = triplets
            .iter()
            .map(|t| MinedTriplet {
                d_ap: distance(&embeddings[t.anchor], &embeddings[t.positive]),
                d_an: distance(&embeddings[t.anchor], &embeddings[t.negative]),
                ..*t
            })
            .collect();
        Ok(triplet_objective(&embeddings, &fixed)?.0)
    }

    /// Mean batch-hard RTL without gradients.
    pub fn loss(&self, images: &[&Image], tags: &[SampleTag]) -> Result<f64> {
        let embeddings: Vec<Embedding> = images
            .iter()
            .map(|img| self.embed_image(img))
            .collect::<Result<_>>()?;
        let mined = batch_hard_mine(&embeddings, tags)?;
        Ok(triplet_objective(&embeddings, &mined)?.0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        let bytes = serde_json::to_vec(&ckpt)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_slice(&raw)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        ckpt.model.config.validate()?;
        if ckpt.model.params.len() != ckpt.model.config.layout().n_params {
            return Err(Error::invalid("checkpoint parameter count does not match its config"));
        }
        Ok(ckpt.model)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: EmbedderModel,
}

#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub mined: Vec<MinedTriplet>,
}

/// Mean RTL over `mined` and its gradient with respect to every embedding.
fn triplet_objective(embeddings: &[Embedding], mined: &[MinedTriplet]) -> Result<(f64, Vec<Vec<f64>>)> {
    let dim = embeddings.first().map_or(0, |e| e.0.len());
    let mut d_embed = vec![vec![0.0; dim]; embeddings.len()];
    let scale = 1.0 / mined.len() as f64;
    let mut total = 0.0;
    for t in mined {
        total += rtl_loss(t.d_ap, t.d_an)?;
        let (g_ap, g_an) = rtl_loss_grad(t.d_ap, t.d_an)?;
        let (a, p, n) = (&embeddings[t.anchor].0, &embeddings[t.positive].0, &embeddings[t.negative].0);
        for i in 0..dim {
            let dap = 2.0 * (a[i] - p[i]) * g_ap * scale;
            let dan = 2.0 * (a[i] - n[i]) * g_an * scale;
            d_embed[t.anchor][i] += dap + dan;
            d_embed[t.positive][i] -= dap;
            d_embed[t.negative][i] -= dan;
        }
    }
    Ok((total * scale, d_embed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Recorded for completeness; the reciprocal loss has no margin term.
    pub rtl_margin: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            batches_per_epoch: 30,
            learning_rate: 1e-3,
            momentum: 0.0,
            weight_decay: 1e-4,
            rtl_margin: 2.0,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batches_per_epoch == 0 {
            return Err(Error::invalid("batch_size and batches_per_epoch must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("learning_rate > 0, weight_decay >= 0, momentum in [0,1) required"));
        }
        Ok(())
    }
}

/// Supplies training batches; the batch for `(epoch, index)` must not depend
/// on call order.
pub trait BatchSource {
    fn batch(&mut self, epoch: usize, index: usize) -> Result<TripletBatch>;
}

/// Replays a fixed list of batches every epoch.
impl BatchSource for Vec<TripletBatch> {
    fn batch(&mut self, _epoch: usize, index: usize) -> Result<TripletBatch> {
        if self.is_empty() {
            return Err(Error::InsufficientData("no training batches".into()));
        }
        Ok(self[index % self.len()].clone())
    }
}

/// Labelled crops scored after every epoch; each identity acts as its own
/// tracklet and video.
#[derive(Debug, Clone, Default)]
pub struct ValidationSet {
    pub images: Vec<Image>,
    pub labels: Vec<IdentityId>,
}

impl ValidationSet {
    fn tags(&self) -> Vec<SampleTag> {
        self.labels
            .iter()
            .map(|&l| SampleTag {
                tracklet: l as u64,
                video: l as u64,
            })
            .collect()
    }

    pub fn loss(&self, model: &EmbedderModel) -> Result<f64> {
        let imgs: Vec<&Image> = self.images.iter().collect();
        model.loss(&imgs, &self.tags())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub is_pocket: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Loss of the initial parameters over the first epoch's batches.
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochLog>,
    pub pocket_epoch: Option<usize>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,train_loss,val_loss,is_pocket\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.is_pocket));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn intern<K: std::hash::Hash + Eq>(ids: &mut HashMap<K, u64>, key: K) -> u64 {
    let n = ids.len() as u64;
    *ids.entry(key).or_insert(n)
}

/// Flattens a triplet batch into images and tags. Tracklet ids are only
/// unique within a video, so tracklet keys combine both.
pub fn batch_inputs(batch: &TripletBatch) -> (Vec<&Image>, Vec<SampleTag>) {
    let mut videos = HashMap::new();
    let mut tracklets = HashMap::new();
    let mut images = Vec::with_capacity(batch.len() * 3);
    let mut tags = Vec::with_capacity(batch.len() * 3);
    for i in 0..batch.len() {
        let a = SampleTag {
            tracklet: intern(&mut tracklets, (batch.anchor_videos[i].as_str(), batch.anchor_tracklets[i])),
            video: intern(&mut videos, batch.anchor_videos[i].as_str()),
        };
        let n = SampleTag {
            tracklet: intern(&mut tracklets, (batch.negative_videos[i].as_str(), batch.negative_tracklets[i])),
            video: intern(&mut videos, batch.negative_videos[i].as_str()),
        };
        images.push(&batch.anchors[i].pixels);
        tags.push(a);
        images.push(&batch.positives[i].pixels);
        tags.push(a);
        images.push(&batch.negatives[i].pixels);
        tags.push(n);
    }
    (images, tags)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EmbedderModel,
    pub log: TrainLog,
}

/// SGD with momentum and weight decay on the mean batch-hard RTL; returns
/// the epoch snapshot with the lowest validation loss.
pub fn train(
    initial: EmbedderModel,
    batches: &mut dyn BatchSource,
    val: &ValidationSet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if val.images.is_empty() {
        return Err(Error::InsufficientData("validation set is empty".into()));
    }
    let mut model = initial;
    let initial_val_loss = val.loss(&model)?;
    let mut initial_train_loss = 0.0;
    for b in 0..cfg.batches_per_epoch {
        let batch = batches.batch(0, b)?;
        let (imgs, tags) = batch_inputs(&batch);
        initial_train_loss += model.loss(&imgs, &tags)?;
    }
    initial_train_loss /= cfg.batches_per_epoch as f64;

    let mut velocity = vec![0.0; model.params.len()];
    let mut pocket: Option<(f64, usize, Vec<f64>)> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for b in 0..cfg.batches_per_epoch {
            let batch = batches.batch(epoch, b)?;
            let (imgs, tags) = batch_inputs(&batch);
            let eval = model.loss_and_grad(&imgs, &tags)?;
            if !eval.loss.is_finite() || eval.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: b,
                    detail: format!("loss = {}", eval.loss),
                });
            }
            epoch_loss += eval.loss;
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&eval.grad) {
                *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
                *p -= cfg.learning_rate * *v;
            }
        }
        let val_loss = val.loss(&model)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: epoch + 1,
                batch: usize::MAX,
                detail: "validation loss".into(),
            });
        }
        if pocket.as_ref().is_none_or(|(best, _, _)| val_loss < *best) {
            pocket = Some((val_loss, epoch + 1, model.params.clone()));
        }
        epochs.push(EpochLog {
            epoch: epoch + 1,
            train_loss: epoch_loss / cfg.batches_per_epoch as f64,
            val_loss,
            is_pocket: false,
        });
    }
    let pocket_epoch = pocket.as_ref().map(|p| p.1);
    if let Some((_, best_epoch, params)) = pocket {
        model.params = params;
        for e in &mut epochs {
            e.is_pocket = e.epoch == best_epoch;
        }
    }
    Ok(TrainOutcome {
        model,
        log: TrainLog {
            initial_train_loss,
            initial_val_loss,
            epochs,
            pocket_epoch,
        },
    })
}
