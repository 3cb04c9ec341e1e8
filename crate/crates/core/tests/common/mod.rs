//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use herdid_core::clustering::ClusterRanking;
use herdid_core::embedder::{EmbedderConfig, EmbedderModel, SampleTag};
use herdid_core::geometry::OrientedBox;
use herdid_core::image::Image;
use herdid_core::IdentityId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn hull(b: &OrientedBox) -> (f64, f64, f64, f64) {
    let (s, c) = b.theta().sin_cos();
    let ex = (b.w() / 2.0 * c).abs() + (b.h() / 2.0 * s).abs();
    let ey = (b.w() / 2.0 * s).abs() + (b.h() / 2.0 * c).abs();
    (b.cx() - ex, b.cy() - ey, b.cx() + ex, b.cy() + ey)
}

/// Range of `x` inside `b` along the horizontal line at `y`, from the four
/// half-plane constraints of the box written in local coordinates.
fn row_span(b: &OrientedBox, y: f64) -> Option<(f64, f64)> {
    let (s, c) = b.theta().sin_cos();
    let dy = y - b.cy();
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    // |c*dx + s*dy| <= w/2 and |-s*dx + c*dy| <= h/2, each linear in dx.
    for (k, off, half) in [(c, s * dy, b.w() / 2.0), (-s, c * dy, b.h() / 2.0)] {
        if k.abs() < 1e-15 {
            if off.abs() > half {
                return None;
            }
            continue;
        }
        let (a, z) = ((-half - off) / k, (half - off) / k);
        lo = lo.max(a.min(z));
        hi = hi.min(a.max(z));
    }
    (lo <= hi).then(|| (b.cx() + lo, b.cx() + hi))
}

/// Number of cell centres `x0 + (j + 0.5) * sx`, `j < res`, inside `[lo, hi]`.
fn cells_in(span: Option<(f64, f64)>, x0: f64, sx: f64, res: usize) -> (i64, i64) {
    match span {
        None => (0, -1),
        Some((lo, hi)) => {
            let first = ((lo - x0) / sx - 0.5).ceil().max(0.0) as i64;
            let last = (((hi - x0) / sx - 0.5).floor() as i64).min(res as i64 - 1);
            (first, last)
        }
    }
}

/// IoU by counting cell centres of a `res x res` grid laid over the union
/// of both boxes' bounding rectangles. Each row is counted as the runs of
/// centres falling inside each box.
pub fn raster_iou(a: &OrientedBox, b: &OrientedBox, res: usize) -> f64 {
    let (ax0, ay0, ax1, ay1) = hull(a);
    let (bx0, by0, bx1, by1) = hull(b);
    let (x0, y0) = (ax0.min(bx0), ay0.min(by0));
    let (x1, y1) = (ax1.max(bx1), ay1.max(by1));
    let (sx, sy) = ((x1 - x0) / res as f64, (y1 - y0) / res as f64);
    let (mut inter, mut union) = (0i64, 0i64);
    let len = |(f, l): (i64, i64)| (l - f + 1).max(0);
    for i in 0..res {
        let y = y0 + (i as f64 + 0.5) * sy;
        let ra = cells_in(row_span(a, y), x0, sx, res);
        let rb = cells_in(row_span(b, y), x0, sx, res);
        let both = len((ra.0.max(rb.0), ra.1.min(rb.1)));
        inter += both;
        union += len(ra) + len(rb) - both;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn random_box(r: &mut ChaCha8Rng, centre_range: f64, size: (f64, f64)) -> OrientedBox {
    OrientedBox::new(
        r.random_range(0.0..centre_range),
        r.random_range(0.0..centre_range),
        r.random_range(size.0..size.1),
        r.random_range(size.0..size.1),
        r.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
    .unwrap()
}

/// ARI by classifying every unordered pair of points.
pub fn pair_counting_ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut neither) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let num = 2.0 * (both * neither - only_a * only_b);
    let den = (both + only_a) * (only_a + neither) + (both + only_b) * (only_b + neither);
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

/// Every set partition of `n` points as a restricted growth string.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let next = prefix.iter().max().map_or(0, |m| m + 1);
        for label in 0..=next {
            prefix.push(label);
            grow(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::new(), n, &mut out);
    out
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative error between two vectors in the Euclidean norm.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn tiny_config() -> EmbedderConfig {
    EmbedderConfig {
        input_h: 8,
        input_w: 12,
        channels: vec![2, 3],
        kernel: 3,
        pool_grid: (1, 2),
        embed_dim: 8,
        standardize: true,
    }
}

pub fn random_image(h: usize, w: usize, r: &mut ChaCha8Rng) -> Image {
    Image::from_fn(h, w, |_, _| r.random::<f32>())
}

/// Analytic versus central-difference gradient of the mean batch-hard
/// loss for one random tiny model, with the mined triplets held fixed.
/// Returns the relative error and the parameter count.
pub fn tiny_model_gradient_error(seed: u64) -> (f64, usize) {
    let mut r = rng(seed);
    let mut model = EmbedderModel::new(tiny_config(), seed).unwrap();
    let images: Vec<Image> = (0..6).map(|_| random_image(8, 12, &mut r)).collect();
    let refs: Vec<&Image> = images.iter().collect();
    let tags: Vec<SampleTag> = (0..6u64)
        .map(|i| SampleTag {
            tracklet: i / 2,
            video: i / 2,
        })
        .collect();
    let eval = model.loss_and_grad(&refs, &tags).unwrap();
    let h = 1e-5;
    let mut numeric = vec![0.0; model.n_params()];
    for (i, g) in numeric.iter_mut().enumerate() {
        let orig = model.params[i];
        model.params[i] = orig + h;
        let up = model.loss_for(&refs, &eval.mined).unwrap();
        model.params[i] = orig - h;
        let down = model.loss_for(&refs, &eval.mined).unwrap();
        model.params[i] = orig;
        *g = (up - down) / (2.0 * h);
    }
    (relative_error(&eval.grad, &numeric), model.n_params())
}

/// Top-N accuracy by scanning each point's full ranking.
pub fn brute_top_n(rankings: &[ClusterRanking], clusters: &[usize], labels: &[IdentityId], n: usize) -> f64 {
    let mut hits = 0;
    for (c, l) in clusters.iter().zip(labels) {
        let ranking = rankings.iter().find(|r| r.cluster == *c).unwrap();
        for (pos, entry) in ranking.identities.iter().enumerate() {
            if entry.identity == *l {
                if pos < n {
                    hits += 1;
                }
                break;
            }
        }
    }
    hits as f64 / clusters.len() as f64
}
