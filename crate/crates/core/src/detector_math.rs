//! Numerical core of the oriented one-stage detector: focal loss, rotated
//! anchor pyramids, box delta coding and Average Precision.
//!
//! Backbone training is not part of this crate; detections are produced by
//! the synthetic noise model in [`crate::synthherd`].

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, rotated_iou, Detection, OrientedBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalLossParams {
    pub gamma: f64,
    pub alpha: f64,
    /// Weight of the regression branch relative to classification.
    pub loss_balance_lambda: f64,
}

impl Default for FocalLossParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: 0.25,
            loss_balance_lambda: 1.0,
        }
    }
}

impl FocalLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::invalid(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must be in [0,1], got {}", self.alpha)));
        }
        if !(self.loss_balance_lambda > 0.0) {
            return Err(Error::invalid("loss_balance_lambda must be > 0"));
        }
        Ok(())
    }
}

fn check_prob(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("probability {p} must lie strictly in (0,1)")))
    }
}

/// `(p_t, alpha_t, dp_t/dp)` for a binary label.
fn target_terms(p: f64, positive: bool, params: &FocalLossParams) -> (f64, f64, f64) {
    if positive {
        (p, params.alpha, 1.0)
    } else {
        (1.0 - p, 1.0 - params.alpha, -1.0)
    }
}

/// `-alpha_t (1 - p_t)^gamma ln(p_t)`.
pub fn focal_loss(p: f64, positive: bool, params: &FocalLossParams) -> Result<f64> {
    check_prob(p)?;
    params.validate()?;
    let (pt, at, _) = target_terms(p, positive, params);
    Ok(-at * (1.0 - pt).powf(params.gamma) * pt.ln())
}

/// Analytic derivative of [`focal_loss`] with respect to `p`.
pub fn focal_loss_grad(p: f64, positive: bool, params: &FocalLossParams) -> Result<f64> {
    check_prob(p)?;
    params.validate()?;
    let (pt, at, sign) = target_terms(p, positive, params);
    let g = params.gamma;
    let q = 1.0 - pt;
    let focal_term = if g == 0.0 { 0.0 } else { g * q.powf(g - 1.0) * pt.ln() };
    let d_dpt = at * (focal_term - q.powf(g) / pt);
    Ok(d_dpt * sign)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PyramidLevel {
    P3,
    P4,
    P5,
    P6,
    P7,
}

impl PyramidLevel {
    pub const ALL: [PyramidLevel; 5] = [
        PyramidLevel::P3,
        PyramidLevel::P4,
        PyramidLevel::P5,
        PyramidLevel::P6,
        PyramidLevel::P7,
    ];

    pub fn stride(self) -> usize {
        match self {
            PyramidLevel::P3 => 8,
            PyramidLevel::P4 => 16,
            PyramidLevel::P5 => 32,
            PyramidLevel::P6 => 64,
            PyramidLevel::P7 => 128,
        }
    }
}

/// Anchor shapes shared by all levels. Sizes are given in units of the
/// level stride and scaled per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub base_sizes: Vec<(f64, f64)>,
    pub angles: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        // Three octave scales of a 4-stride box at the 5:2 torso aspect.
        let aspect: f64 = 2.5;
        let base_sizes = [0.0, 1.0 / 3.0, 2.0 / 3.0]
            .iter()
            .map(|e| {
                let s = 4.0 * 2f64.powf(*e);
                (s * aspect.sqrt(), s / aspect.sqrt())
            })
            .collect();
        Self {
            base_sizes,
            angles: vec![-FRAC_PI_2, 0.0, FRAC_PI_2, PI],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub level: PyramidLevel,
    pub stride: usize,
    pub cols: usize,
    pub rows: usize,
    /// Pixel sizes at this level.
    pub base_sizes: Vec<(f64, f64)>,
    pub angles: Vec<f64>,
    /// Row-major over cells; within a cell, sizes outer and angles inner.
    pub anchors: Vec<OrientedBox>,
}

pub fn generate_level_anchors(
    image_w: usize,
    image_h: usize,
    level: PyramidLevel,
    config: &AnchorConfig,
) -> Result<AnchorGrid> {
    if config.base_sizes.is_empty() || config.angles.is_empty() {
        return Err(Error::invalid("anchor config needs at least one size and one angle"));
    }
    if image_w == 0 || image_h == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }
    let stride = level.stride();
    let cols = image_w.div_ceil(stride);
    let rows = image_h.div_ceil(stride);
    let s = stride as f64;
    let base_sizes: Vec<(f64, f64)> = config
        .base_sizes
        .iter()
        .map(|&(w, h)| (w * s, h * s))
        .collect();
    let mut anchors = Vec::with_capacity(rows * cols * base_sizes.len() * config.angles.len());
    for i in 0..rows {
        for j in 0..cols {
            let cx = (j as f64 + 0.5) * s;
            let cy = (i as f64 + 0.5) * s;
            for &(w, h) in &base_sizes {
                for &theta in &config.angles {
                    anchors.push(OrientedBox::new(cx, cy, w, h, theta)?);
                }
            }
        }
    }
    Ok(AnchorGrid {
        level,
        stride,
        cols,
        rows,
        base_sizes,
        angles: config.angles.iter().map(|&a| normalize_angle(a)).collect(),
        anchors,
    })
}

/// Anchor grids for P3 through P7.
pub fn generate_rotated_anchors(
    image_w: usize,
    image_h: usize,
    config: &AnchorConfig,
) -> Result<Vec<AnchorGrid>> {
    PyramidLevel::ALL
        .iter()
        .map(|&level| generate_level_anchors(image_w, image_h, level, config))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
    pub dtheta: f64,
}

pub fn encode_box(gt: &OrientedBox, anchor: &OrientedBox) -> BoxDelta {
    BoxDelta {
        dx: (gt.cx() - anchor.cx()) / anchor.w(),
        dy: (gt.cy() - anchor.cy()) / anchor.h(),
        dw: (gt.w() / anchor.w()).ln(),
        dh: (gt.h() / anchor.h()).ln(),
        dtheta: normalize_angle(gt.theta() - anchor.theta()),
    }
}

pub fn decode_box(delta: &BoxDelta, anchor: &OrientedBox) -> Result<OrientedBox> {
    OrientedBox::new(
        anchor.cx() + delta.dx * anchor.w(),
        anchor.cy() + delta.dy * anchor.h(),
        anchor.w() * delta.dw.exp(),
        anchor.h() * delta.dh.exp(),
        anchor.theta() + delta.dtheta,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub ap: f64,
    pub iou_thr: f64,
    pub n_preds: usize,
    pub n_gts: usize,
    /// `[recall, precision]` after each prediction in confidence order.
    pub pr_curve: Vec<[f64; 2]>,
    pub interpolation: String,
}

/// Average Precision of `preds` against per-image ground truth.
///
/// `Detection::frame_index` selects the image in `gts`. Each prediction, in
/// descending confidence order, claims the highest-IoU unclaimed ground truth
/// of its image when that IoU reaches `iou_thr`. AP is the area under the
/// precision envelope (continuous, all-points interpolation).
pub fn average_precision(
    preds: &[Detection],
    gts: &[Vec<OrientedBox>],
    iou_thr: f64,
) -> Result<ApReport> {
    let n_gts: usize = gts.iter().map(Vec::len).sum();
    if n_gts == 0 {
        return Err(Error::InsufficientData(
            "average precision needs at least one ground truth box".into(),
        ));
    }
    for p in preds {
        if !(0.0..=1.0).contains(&p.confidence) {
            return Err(Error::invalid(format!("confidence {} outside [0,1]", p.confidence)));
        }
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| preds[j].confidence.total_cmp(&preds[i].confidence));

    let mut claimed: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut pr_curve = Vec::with_capacity(preds.len());
    for i in order {
        let pred = &preds[i];
        let mut best: Option<(usize, f64)> = None;
        if let Some(image_gts) = gts.get(pred.frame_index) {
            for (g, gt) in image_gts.iter().enumerate() {
                if claimed[pred.frame_index][g] {
                    continue;
                }
                let iou = rotated_iou(&pred.bbox, gt);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
        }
        match best {
            Some((g, iou)) if iou >= iou_thr => {
                claimed[pred.frame_index][g] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
        pr_curve.push([tp as f64 / n_gts as f64, tp as f64 / (tp + fp) as f64]);
    }

    Ok(ApReport {
        ap: area_under_envelope(&pr_curve),
        iou_thr,
        n_preds: preds.len(),
        n_gts,
        pr_curve,
        interpolation: "continuous".into(),
    })
}

fn area_under_envelope(curve: &[[f64; 2]]) -> f64 {
    let mut recall = Vec::with_capacity(curve.len() + 2);
    let mut precision = Vec::with_capacity(curve.len() + 2);
    recall.push(0.0);
    precision.push(0.0);
    for &[r, p] in curve {
        recall.push(r);
        precision.push(p);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    for i in 1..recall.len() {
        ap += (recall[i] - recall[i - 1]) * precision[i];
    }
    ap
}
