//! Deterministic synthetic herd: coat-pattern identities, top-down walkway
//! videos with exact ground truth, labelled stills, and a detector noise
//! model standing in for a trained oriented detector.
//!
//! Everything is a pure function of the scenario and its seed; a video is
//! fully described by its [`SynthVideo`] plan and frames are rendered on demand.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Detection, OrientedBox};
use crate::image::Image;
use crate::seed;
use crate::tracking::Tracklet;

/// Canonical torso raster, 5:2 like a top-down body.
pub const PATTERN_H: usize = 40;
pub const PATTERN_W: usize = 100;
pub const MAX_HERD: usize = 10_000;
const MAX_PAIR_NCC: f64 = 0.9;
const BLOB_SIGMA: f64 = 5.0;
const EDGE_SIGMA: f64 = 1.2;
const DARK: f32 = 0.08;
const LIGHT: f32 = 0.92;

pub use crate::IdentityId;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthIdentity {
    pub identity_id: IdentityId,
    /// `PATTERN_H x PATTERN_W` grey texture, head towards +col.
    pub pattern: Image,
    pub enrollable: bool,
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamped borders.
fn blur(img: &Image, sigma: f64) -> Image {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (h, w) = (img.height(), img.width());
    let mut tmp = Image::new(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = (x as i64 + i as i64 - r).clamp(0, w as i64 - 1) as usize;
                acc += kv * img.get(y, xx, 0);
            }
            tmp.set(y, x, 0, acc);
        }
    }
    let mut out = Image::new(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = (y as i64 + i as i64 - r).clamp(0, h as i64 - 1) as usize;
                acc += kv * tmp.get(yy, x, 0);
            }
            out.set(y, x, 0, acc);
        }
    }
    out
}

/// Zero-mean normalised cross-correlation of two equally sized rasters.
pub fn normalized_cross_correlation(a: &Image, b: &Image) -> f64 {
    let n = a.data().len() as f64;
    let ma = a.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x as f64 - ma, y as f64 - mb);
        num += x * y;
        da += x * x;
        db += y * y;
    }
    if da == 0.0 || db == 0.0 {
        return 0.0;
    }
    num / (da * db).sqrt()
}

/// Fraction of dark and light pixels of a pattern.
pub fn dark_light_fractions(pattern: &Image) -> (f64, f64) {
    let mid = (DARK + LIGHT) / 2.0;
    let n = pattern.data().len() as f64;
    let dark = pattern.data().iter().filter(|&&v| v < mid).count() as f64 / n;
    (dark, 1.0 - dark)
}

fn blob_pattern(rng: &mut seed::Rng) -> Image {
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let noise = Image::from_fn(PATTERN_H, PATTERN_W, |_, _| normal.sample(rng));
    let smooth = blur(&noise, BLOB_SIGMA);
    let mut sorted: Vec<f32> = smooth.data().to_vec();
    sorted.sort_by(f32::total_cmp);
    let white_fraction = rng.random_range(0.3..0.7);
    let cut = sorted[((1.0 - white_fraction) * (sorted.len() - 1) as f64) as usize];
    let binary = Image::from_fn(PATTERN_H, PATTERN_W, |r, c| {
        if smooth.get(r, c, 0) > cut {
            LIGHT
        } else {
            DARK
        }
    });
    blur(&binary, EDGE_SIGMA)
}

fn all_black_pattern(rng: &mut seed::Rng) -> Image {
    Image::from_fn(PATTERN_H, PATTERN_W, |_, _| DARK + rng.random_range(0.0..0.03))
}

/// `n` enrollable identities with pairwise pattern correlation below 0.9.
pub fn generate_herd(n: usize, rng_seed: u64) -> Result<Vec<SynthIdentity>> {
    if n == 0 {
        return Err(Error::invalid("herd size must be at least 1"));
    }
    if n > MAX_HERD {
        return Err(Error::invalid(format!("herd size {n} exceeds {MAX_HERD}")));
    }
    let mut herd: Vec<SynthIdentity> = Vec::with_capacity(n);
    for id in 0..n {
        let mut attempt = 0u64;
        loop {
            let mut rng = seed::rng(rng_seed, &[0xC0A7, id as u64, attempt]);
            let pattern = blob_pattern(&mut rng);
            let (dark, light) = dark_light_fractions(&pattern);
            let distinct = herd
                .iter()
                .all(|o| normalized_cross_correlation(&o.pattern, &pattern) < MAX_PAIR_NCC);
            if dark >= 0.05 && light >= 0.05 && distinct {
                herd.push(SynthIdentity {
                    identity_id: id as IdentityId,
                    pattern,
                    enrollable: true,
                });
                break;
            }
            attempt += 1;
        }
    }
    Ok(herd)
}

/// Pattern-free identity, the un-enrollable case.
pub fn all_black_identity(identity_id: IdentityId, rng_seed: u64) -> SynthIdentity {
    let mut rng = seed::rng(rng_seed, &[0xB1AC, identity_id as u64]);
    SynthIdentity {
        identity_id,
        pattern: all_black_pattern(&mut rng),
        enrollable: false,
    }
}

/// Herd for a scenario: enrollable identities first, then all-black ones.
pub fn scenario_herd(scenario: &SynthScenario) -> Result<Vec<SynthIdentity>> {
    let mut herd = generate_herd(scenario.n_individuals, scenario.rng_seed)?;
    for i in 0..scenario.n_unenrollable {
        let id = (scenario.n_individuals + i) as IdentityId;
        herd.push(all_black_identity(id, scenario.rng_seed));
    }
    Ok(herd)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthScenario {
    pub n_individuals: usize,
    pub n_unenrollable: usize,
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub fps: f64,
    pub frame_width: usize,
    pub frame_height: usize,
    /// Inclusive range of animals walking through one video.
    pub animals_per_video: (usize, usize),
    /// Torso length and width in pixels at scale 1.
    pub body_size: (f64, f64),
    /// Per-appearance relative size spread.
    pub size_spread: f64,
    /// Walking speed range in pixels per second.
    pub walk_speed: (f64, f64),
    /// Amplitude of the heading wobble in radians.
    pub heading_noise: f64,
    /// Spread of still-image headings around the walkway axis, radians.
    pub still_heading_spread: f64,
    pub stills_per_identity: usize,
    /// Per-video (and per-still) gain is drawn from `1 +- gain_spread`.
    pub gain_spread: f64,
    pub offset_spread: f64,
    pub pixel_noise: f64,
    pub rng_seed: u64,
}

impl Default for SynthScenario {
    fn default() -> Self {
        Self {
            n_individuals: 20,
            n_unenrollable: 0,
            n_videos: 60,
            frames_per_video: 165,
            fps: 30.0,
            frame_width: 640,
            frame_height: 360,
            animals_per_video: (1, 2),
            body_size: (100.0, 40.0),
            size_spread: 0.05,
            walk_speed: (90.0, 140.0),
            heading_noise: 0.06,
            still_heading_spread: 0.25,
            stills_per_identity: 24,
            gain_spread: 0.12,
            offset_spread: 0.04,
            pixel_noise: 0.02,
            rng_seed: 7,
        }
    }
}

impl SynthScenario {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.n_individuals + self.n_unenrollable,
            self.n_videos,
            self.frames_per_video,
            self.frame_width,
            self.frame_height,
            self.animals_per_video.0,
        ];
        if counts.contains(&0) {
            return Err(Error::invalid("scenario counts must all be positive"));
        }
        if self.animals_per_video.0 > self.animals_per_video.1 {
            return Err(Error::invalid("animals_per_video range is inverted"));
        }
        if self.animals_per_video.1 > self.n_individuals + self.n_unenrollable {
            return Err(Error::invalid("more animals per video than identities"));
        }
        if !(self.fps > 0.0) || !(self.body_size.0 > 0.0) || !(self.body_size.1 > 0.0) {
            return Err(Error::invalid("fps and body size must be positive"));
        }
        Ok(())
    }

    /// Identity of every animal in every video; each identity is used
    /// before any is repeated.
    pub fn video_plan(&self) -> Vec<Vec<IdentityId>> {
        let total = (self.n_individuals + self.n_unenrollable) as IdentityId;
        let mut rng = seed::rng(self.rng_seed, &[0x91A7]);
        let mut pool: Vec<IdentityId> = Vec::new();
        let mut plan = Vec::with_capacity(self.n_videos);
        for _ in 0..self.n_videos {
            let k = rng.random_range(self.animals_per_video.0..=self.animals_per_video.1);
            let mut chosen: Vec<IdentityId> = Vec::with_capacity(k);
            while chosen.len() < k {
                if pool.is_empty() {
                    pool = (0..total).collect();
                    pool.shuffle(&mut rng);
                }
                let pos = pool.iter().position(|id| !chosen.contains(id));
                match pos {
                    Some(p) => chosen.push(pool.remove(p)),
                    None => {
                        // Remaining pool only repeats this video's animals; refill.
                        let mut fresh: Vec<IdentityId> = (0..total).collect();
                        fresh.shuffle(&mut rng);
                        pool.extend(fresh);
                    }
                }
            }
            plan.push(chosen);
        }
        plan
    }

    pub fn video_id(video_index: usize) -> String {
        format!("video_{video_index:04}")
    }
}

/// Walking trajectory of one animal through a video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnimalPath {
    pub identity: IdentityId,
    pub lane_y: f64,
    pub start_x: f64,
    /// Signed horizontal speed, pixels per second.
    pub velocity: f64,
    pub scale: f64,
    pub wobble_amp: f64,
    pub wobble_freq: f64,
    pub wobble_phase: f64,
}

impl AnimalPath {
    pub fn pose_at(&self, t: f64, body: (f64, f64)) -> OrientedBox {
        let base = if self.velocity >= 0.0 { 0.0 } else { PI };
        let phase = 2.0 * PI * self.wobble_freq * t + self.wobble_phase;
        let theta = base + self.wobble_amp * phase.sin();
        // Lateral drift consistent with the heading wobble.
        let lateral = self.velocity.abs() * self.wobble_amp / (2.0 * PI * self.wobble_freq)
            * (self.wobble_phase.cos() - phase.cos());
        let y = self.lane_y + if self.velocity >= 0.0 { lateral } else { -lateral };
        OrientedBox::new(
            self.start_x + self.velocity * t,
            y,
            body.0 * self.scale,
            body.1 * self.scale,
            theta,
        )
        .expect("scenario bodies have positive size")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtInstance {
    pub identity: IdentityId,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    /// Some corner lies outside the frame.
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtTracklet {
    pub tracklet_id: u64,
    pub video_id: String,
    pub identity: IdentityId,
    pub detections: Vec<Detection>,
}

impl GtTracklet {
    pub fn as_tracklet(&self) -> Tracklet {
        Tracklet {
            tracklet_id: self.tracklet_id,
            video_id: self.video_id.clone(),
            detections: self.detections.clone(),
            closed: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Photometric {
    gain: f32,
    offset: f32,
}

/// One planned video; frames are rendered on request.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub video_index: usize,
    pub video_id: String,
    pub fps: f64,
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    pub animals: Vec<AnimalPath>,
    body: (f64, f64),
    base_seed: u64,
    photometric: Photometric,
    pixel_noise: f64,
    background: Image,
}

fn background(width: usize, height: usize, rng: &mut seed::Rng) -> Image {
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    // Coarse floor texture, upsampled by bilinear lookup.
    let coarse = Image::from_fn(height / 16 + 2, width / 16 + 2, |_, _| normal.sample(rng));
    let coarse = blur(&coarse, 1.0);
    Image::from_fn(height, width, |r, c| {
        let v = coarse.sample_bilinear_clamped(c as f64 / 16.0, r as f64 / 16.0, 0);
        (0.45 + 0.05 * v).clamp(0.0, 1.0)
    })
}

fn draw_animal(frame: &mut Image, pattern: &Image, bbox: &OrientedBox, ph: Photometric) {
    let margin = 1.0;
    let (x0, y0, x1, y1) = bbox.aabb();
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    let c0 = ((x0 - margin).floor() as i64).max(0);
    let c1 = ((x1 + margin).ceil() as i64).min(w - 1);
    let r0 = ((y0 - margin).floor() as i64).max(0);
    let r1 = ((y1 + margin).ceil() as i64).min(h - 1);
    let (pw, phh) = (pattern.width() as f64, pattern.height() as f64);
    for r in r0..=r1 {
        for c in c0..=c1 {
            let p = crate::geometry::Point::new(c as f64 + 0.5, r as f64 + 0.5);
            let (u, v) = bbox.image_to_local(p);
            if u.abs() > bbox.w() / 2.0 + margin || v.abs() > bbox.h() / 2.0 + margin {
                continue;
            }
            let px = (u / bbox.w() + 0.5) * pw;
            let py = (v / bbox.h() + 0.5) * phh;
            let value = pattern.sample_bilinear_clamped(px, py, 0);
            frame.set(r as usize, c as usize, 0, ph.gain * value + ph.offset);
        }
    }
}

fn add_noise(frame: &mut Image, sigma: f64, rng: &mut seed::Rng) {
    if sigma > 0.0 {
        let normal = Normal::new(0.0f32, sigma as f32).unwrap();
        for v in frame.data_mut() {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
    } else {
        for v in frame.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

fn photometric(scenario: &SynthScenario, rng: &mut seed::Rng) -> Photometric {
    let gain = 1.0 + scenario.gain_spread * rng.random_range(-1.0..=1.0);
    let offset = scenario.offset_spread * rng.random_range(-1.0..=1.0);
    Photometric {
        gain: gain as f32,
        offset: offset as f32,
    }
}

fn is_clipped(bbox: &OrientedBox, width: usize, height: usize) -> bool {
    bbox.corners().iter().any(|p| {
        p.x < 0.0 || p.y < 0.0 || p.x > width as f64 || p.y > height as f64
    })
}

fn centre_inside(bbox: &OrientedBox, width: usize, height: usize) -> bool {
    bbox.cx() >= 0.0 && bbox.cy() >= 0.0 && bbox.cx() < width as f64 && bbox.cy() < height as f64
}

impl SynthVideo {
    pub fn time_of(&self, frame_index: usize) -> f64 {
        frame_index as f64 / self.fps
    }

    /// Ground-truth instances visible (centre inside the frame) at a frame.
    pub fn gt_instances(&self, frame_index: usize) -> Vec<GtInstance> {
        let t = self.time_of(frame_index);
        self.animals
            .iter()
            .filter_map(|a| {
                let bbox = a.pose_at(t, self.body);
                centre_inside(&bbox, self.width, self.height).then(|| GtInstance {
                    identity: a.identity,
                    clipped: is_clipped(&bbox, self.width, self.height),
                    bbox,
                })
            })
            .collect()
    }

    /// Ground-truth tracklets restricted to `frames` (ascending). Each
    /// animal contributes one tracklet per contiguous visible run.
    pub fn gt_tracklets(&self, frames: &[usize]) -> Vec<GtTracklet> {
        let mut out = Vec::new();
        for animal in &self.animals {
            let mut current: Vec<Detection> = Vec::new();
            let flush = |current: &mut Vec<Detection>, out: &mut Vec<GtTracklet>| {
                if !current.is_empty() {
                    out.push(GtTracklet {
                        tracklet_id: 0,
                        video_id: self.video_id.clone(),
                        identity: animal.identity,
                        detections: std::mem::take(current),
                    });
                }
            };
            for &f in frames {
                let bbox = animal.pose_at(self.time_of(f), self.body);
                if centre_inside(&bbox, self.width, self.height) {
                    current.push(Detection {
                        bbox,
                        confidence: 1.0,
                        frame_index: f,
                    });
                } else {
                    flush(&mut current, &mut out);
                }
            }
            flush(&mut current, &mut out);
        }
        out.sort_by_key(|t| (t.detections[0].frame_index, t.identity));
        for (i, t) in out.iter_mut().enumerate() {
            t.tracklet_id = i as u64;
        }
        out
    }

    pub fn render_frame(&self, herd: &[SynthIdentity], frame_index: usize) -> Result<Image> {
        let mut frame = self.background.clone();
        let t = self.time_of(frame_index);
        for a in &self.animals {
            let identity = herd
                .iter()
                .find(|h| h.identity_id == a.identity)
                .ok_or_else(|| Error::invalid(format!("identity {} not in herd", a.identity)))?;
            let bbox = a.pose_at(t, self.body);
            draw_animal(&mut frame, &identity.pattern, &bbox, self.photometric);
        }
        let mut rng = seed::rng(self.base_seed, &[0xF4A3E, self.video_index as u64, frame_index as u64]);
        add_noise(&mut frame, self.pixel_noise, &mut rng);
        Ok(frame)
    }
}

/// Plans video `video_index` of the scenario.
pub fn render_video(
    herd: &[SynthIdentity],
    scenario: &SynthScenario,
    video_index: usize,
) -> Result<SynthVideo> {
    scenario.validate()?;
    let plan = scenario.video_plan();
    let ids = plan
        .get(video_index)
        .ok_or_else(|| Error::invalid(format!("video index {video_index} out of range")))?;
    for id in ids {
        if !herd.iter().any(|h| h.identity_id == *id) {
            return Err(Error::invalid(format!("identity {id} assigned to video is not in herd")));
        }
    }
    let mut rng = seed::rng(scenario.rng_seed, &[0x71DE0, video_index as u64]);
    let (w, h) = (scenario.frame_width as f64, scenario.frame_height as f64);
    let lanes = ids.len();
    let duration = scenario.frames_per_video as f64 / scenario.fps;
    let mut animals = Vec::with_capacity(lanes);
    for (lane, &identity) in ids.iter().enumerate() {
        let lane_y = h * (lane as f64 + 1.0) / (lanes as f64 + 1.0) + rng.random_range(-8.0..8.0);
        let speed = rng.random_range(scenario.walk_speed.0..=scenario.walk_speed.1);
        let rightwards = rng.random_bool(0.5);
        let travel = speed * duration;
        // Start so that the animal is on screen for a good share of the clip.
        let offset = rng.random_range(0.05..0.35) * w;
        let (start_x, velocity) = if rightwards {
            (offset.min(w - travel * 0.5), speed)
        } else {
            ((w - offset).max(travel * 0.5), -speed)
        };
        animals.push(AnimalPath {
            identity,
            lane_y,
            start_x,
            velocity,
            scale: 1.0 + scenario.size_spread * rng.random_range(-1.0..=1.0),
            wobble_amp: scenario.heading_noise * rng.random_range(0.5..=1.0),
            wobble_freq: rng.random_range(0.3..0.8),
            wobble_phase: rng.random_range(0.0..2.0 * PI),
        });
    }
    let ph = photometric(scenario, &mut rng);
    let bg = background(scenario.frame_width, scenario.frame_height, &mut rng);
    Ok(SynthVideo {
        video_index,
        video_id: SynthScenario::video_id(video_index),
        fps: scenario.fps,
        n_frames: scenario.frames_per_video,
        width: scenario.frame_width,
        height: scenario.frame_height,
        animals,
        body: scenario.body_size,
        base_seed: scenario.rng_seed,
        photometric: ph,
        pixel_noise: scenario.pixel_noise,
        background: bg,
    })
}

/// A labelled single-animal image, the identity test material.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthStill {
    pub still_index: usize,
    pub identity: IdentityId,
    pub image: Image,
    pub gt_box: OrientedBox,
}

/// Renders still `still_index` of `identity`.
pub fn render_still(
    herd: &[SynthIdentity],
    scenario: &SynthScenario,
    identity: IdentityId,
    still_index: usize,
) -> Result<SynthStill> {
    let animal = herd
        .iter()
        .find(|h| h.identity_id == identity)
        .ok_or_else(|| Error::invalid(format!("identity {identity} not in herd")))?;
    let mut rng = seed::rng(scenario.rng_seed, &[0x57111, identity as u64, still_index as u64]);
    let (w, h) = (scenario.frame_width as f64, scenario.frame_height as f64);
    let scale = 1.0 + scenario.size_spread * rng.random_range(-1.0..=1.0);
    let base = if rng.random_bool(0.5) { 0.0 } else { PI };
    let heading = base + scenario.still_heading_spread * rng.random_range(-1.0..=1.0);
    let gt_box = OrientedBox::new(
        rng.random_range(0.25..0.75) * w,
        rng.random_range(0.3..0.7) * h,
        scenario.body_size.0 * scale,
        scenario.body_size.1 * scale,
        heading,
    )?;
    let mut image = background(scenario.frame_width, scenario.frame_height, &mut rng);
    let ph = photometric(scenario, &mut rng);
    draw_animal(&mut image, &animal.pattern, &gt_box, ph);
    add_noise(&mut image, scenario.pixel_noise, &mut rng);
    Ok(SynthStill {
        still_index,
        identity,
        image,
        gt_box,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorNoise {
    pub center_sigma: f64,
    /// Relative standard deviation of width and height.
    pub size_sigma: f64,
    pub angle_sigma: f64,
    pub miss_rate: f64,
    /// Expected false positives per frame.
    pub false_positive_rate: f64,
    /// True positives score `U(tp_conf_min, 1]`.
    pub tp_conf_min: f64,
    /// False positives score `U(fp_conf_range.0, fp_conf_range.1)`.
    pub fp_conf_range: (f64, f64),
}

impl Default for DetectorNoise {
    fn default() -> Self {
        Self {
            center_sigma: 1.5,
            size_sigma: 0.02,
            angle_sigma: 0.02,
            miss_rate: 0.02,
            false_positive_rate: 0.05,
            tp_conf_min: 0.6,
            fp_conf_range: (0.3, 0.7),
        }
    }
}

impl DetectorNoise {
    pub fn none() -> Self {
        Self {
            center_sigma: 0.0,
            size_sigma: 0.0,
            angle_sigma: 0.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            tp_conf_min: 1.0,
            fp_conf_range: (0.3, 0.7),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates_ok = (0.0..=1.0).contains(&self.miss_rate)
            && self.false_positive_rate >= 0.0
            && (0.0..=1.0).contains(&self.tp_conf_min)
            && (0.0..=1.0).contains(&self.fp_conf_range.0)
            && (0.0..=1.0).contains(&self.fp_conf_range.1)
            && self.fp_conf_range.0 <= self.fp_conf_range.1;
        let sigmas_ok = [self.center_sigma, self.size_sigma, self.angle_sigma]
            .iter()
            .all(|s| *s >= 0.0);
        if rates_ok && sigmas_ok {
            Ok(())
        } else {
            Err(Error::invalid("detector noise rates must lie in [0,1] and sigmas be >= 0"))
        }
    }
}

/// Perturbs one box with the noise model.
pub fn jitter_box(bbox: &OrientedBox, noise: &DetectorNoise, rng: &mut seed::Rng) -> Result<OrientedBox> {
    let n = Normal::new(0.0, 1.0).unwrap();
    let (zx, zy, zw, zh, zt): (f64, f64, f64, f64, f64) =
        (n.sample(rng), n.sample(rng), n.sample(rng), n.sample(rng), n.sample(rng));
    OrientedBox::new(
        bbox.cx() + noise.center_sigma * zx,
        bbox.cy() + noise.center_sigma * zy,
        bbox.w() * (noise.size_sigma * zw).exp(),
        bbox.h() * (noise.size_sigma * zh).exp(),
        bbox.theta() + noise.angle_sigma * zt,
    )
}

/// Simulated detector output for ground-truth frames.
///
/// `gt` maps frame index to the boxes visible there; the result keeps the
/// same key order. Draws for each frame depend only on `(rng_seed, frame)`.
pub fn jitter_detections(
    gt: &BTreeMap<usize, Vec<OrientedBox>>,
    noise: &DetectorNoise,
    frame_size: (usize, usize),
    body_size: (f64, f64),
    rng_seed: u64,
) -> Result<BTreeMap<usize, Vec<Detection>>> {
    noise.validate()?;
    let mut out = BTreeMap::new();
    for (&frame, boxes) in gt {
        let mut rng = seed::rng(rng_seed, &[0xDE7EC7, frame as u64]);
        let mut dets = Vec::with_capacity(boxes.len());
        for b in boxes {
            // Always draw so the stream does not depend on the miss outcome.
            let missed = rng.random::<f64>() < noise.miss_rate;
            let jittered = jitter_box(b, noise, &mut rng)?;
            let conf = if noise.tp_conf_min >= 1.0 {
                1.0
            } else {
                rng.random_range(noise.tp_conf_min..=1.0)
            };
            if !missed {
                dets.push(Detection::new(jittered, conf, frame)?);
            }
        }
        let n_fp = poisson(noise.false_positive_rate, &mut rng);
        for _ in 0..n_fp {
            let bbox = OrientedBox::new(
                rng.random_range(0.0..frame_size.0 as f64),
                rng.random_range(0.0..frame_size.1 as f64),
                body_size.0 * rng.random_range(0.6..1.2),
                body_size.1 * rng.random_range(0.6..1.2),
                rng.random_range(-PI..PI),
            )?;
            let conf = rng.random_range(noise.fp_conf_range.0..=noise.fp_conf_range.1);
            dets.push(Detection::new(bbox, conf, frame)?);
        }
        out.insert(frame, dets);
    }
    Ok(out)
}

fn poisson(lambda: f64, rng: &mut seed::Rng) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    // Knuth; rates here are small.
    let l = (-lambda).exp();
    let mut k = 0;
    let mut p = 1.0;
    loop {
        p *= rng.random::<f64>();
        if p <= l {
            return k;
        }
        k += 1;
    }
}
