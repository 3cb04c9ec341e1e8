//! Contrastive training data from tracklets: rotation-normalised positive
//! sets with rotational augmentation, and triplet batches whose negatives
//! come from other videos.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{extract_normalized_crop, Crop, OrientedBox};
use crate::image::Image;
use crate::seed;
use crate::tracking::Tracklet;
use crate::IdentityId;

pub const CROP_H: usize = 40;
pub const CROP_W: usize = 96;
pub const DEFAULT_MAX_ANGLE_DEG: f64 = 7.0;
pub const DEFAULT_AUG_PER_CROP: usize = 2;
pub const DEFAULT_BATCH_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub tracklet_id: u64,
    pub video_id: String,
    pub crops: Vec<Crop>,
}

impl SampleSet {
    /// Directory name used when the set is persisted.
    pub fn dir_name(&self) -> String {
        format!("{}_t{:05}", self.video_id, self.tracklet_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub aug_per_crop: usize,
    pub max_angle_deg: f64,
    pub crop_h: usize,
    pub crop_w: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            aug_per_crop: DEFAULT_AUG_PER_CROP,
            max_angle_deg: DEFAULT_MAX_ANGLE_DEG,
            crop_h: CROP_H,
            crop_w: CROP_W,
        }
    }
}

/// Crops every detection of `tracklet` and adds `aug_per_crop` copies cut
/// with the box angle perturbed uniformly within `±max_angle_deg`.
///
/// Crops are ordered per detection: the original first, then its copies.
pub fn build_positive_set(
    tracklet: &Tracklet,
    frames: &BTreeMap<usize, Image>,
    aug: &AugmentConfig,
    rng_seed: u64,
) -> Result<SampleSet> {
    if tracklet.is_empty() {
        return Err(Error::invalid("tracklet has no detections"));
    }
    if !(aug.max_angle_deg >= 0.0) {
        return Err(Error::invalid("max_angle_deg must be >= 0"));
    }
    let mut rng = seed::rng(rng_seed, &[tracklet.tracklet_id]);
    let max_rad = aug.max_angle_deg.to_radians();
    let mut crops = Vec::with_capacity(tracklet.len() * (1 + aug.aug_per_crop));
    for det in &tracklet.detections {
        let frame = frames.get(&det.frame_index).ok_or(Error::MissingFrame {
            tracklet_id: tracklet.tracklet_id,
            frame_index: det.frame_index,
        })?;
        crops.push(extract_normalized_crop(
            frame,
            &det.bbox,
            det.frame_index,
            aug.crop_h,
            aug.crop_w,
        )?);
        for _ in 0..aug.aug_per_crop {
            let delta = if max_rad > 0.0 {
                rng.random_range(-max_rad..=max_rad)
            } else {
                0.0
            };
            let rotated = det.bbox.with_theta(det.bbox.theta() + delta);
            crops.push(extract_normalized_crop(
                frame,
                &rotated,
                det.frame_index,
                aug.crop_h,
                aug.crop_w,
            )?);
        }
    }
    Ok(SampleSet {
        tracklet_id: tracklet.tracklet_id,
        video_id: tracklet.video_id.clone(),
        crops,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub anchors: Vec<Crop>,
    pub positives: Vec<Crop>,
    pub negatives: Vec<Crop>,
    /// Shared by anchor and positive.
    pub anchor_tracklets: Vec<u64>,
    pub anchor_videos: Vec<String>,
    pub negative_tracklets: Vec<u64>,
    pub negative_videos: Vec<String>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Batch from bare images, each wrapped in a placeholder crop record.
    pub fn from_images(
        anchors: Vec<Image>,
        positives: Vec<Image>,
        negatives: Vec<Image>,
        anchor_tracklets: Vec<u64>,
        anchor_videos: Vec<String>,
        negative_tracklets: Vec<u64>,
        negative_videos: Vec<String>,
    ) -> Self {
        let wrap = |v: Vec<Image>| -> Vec<Crop> {
            v.into_iter()
                .map(|pixels| Crop {
                    source_box: OrientedBox::new(0.0, 0.0, pixels.width() as f64, pixels.height() as f64, 0.0)
                        .expect("image dimensions are positive"),
                    pixels,
                    frame_index: 0,
                })
                .collect()
        };
        Self {
            anchors: wrap(anchors),
            positives: wrap(positives),
            negatives: wrap(negatives),
            anchor_tracklets,
            anchor_videos,
            negative_tracklets,
            negative_videos,
        }
    }
}

/// Draws `batch_size` triplets. Each slot picks a set with at least two
/// crops uniformly, takes anchor and positive from it without replacement,
/// and a negative from a uniformly chosen set of another video.
pub fn sample_triplet_batch(sets: &[SampleSet], batch_size: usize, rng_seed: u64) -> Result<TripletBatch> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let videos: BTreeSet<&str> = sets.iter().map(|s| s.video_id.as_str()).collect();
    if videos.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "triplets need at least 2 videos, got {}",
            videos.len()
        )));
    }
    let usable: Vec<usize> = (0..sets.len()).filter(|&i| sets[i].crops.len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::InsufficientData("no sample set has 2 or more crops".into()));
    }
    // Anchor sets must have a set from another video to draw a negative from.
    let anchorable: Vec<usize> = usable
        .iter()
        .copied()
        .filter(|&i| sets.iter().any(|s| s.video_id != sets[i].video_id && !s.crops.is_empty()))
        .collect();
    if anchorable.is_empty() {
        return Err(Error::InsufficientData(
            "no multi-crop set has a non-empty set in another video".into(),
        ));
    }

    let mut rng = seed::rng(rng_seed, &[]);
    let mut batch = TripletBatch {
        anchors: Vec::with_capacity(batch_size),
        positives: Vec::with_capacity(batch_size),
        negatives: Vec::with_capacity(batch_size),
        anchor_tracklets: Vec::with_capacity(batch_size),
        anchor_videos: Vec::with_capacity(batch_size),
        negative_tracklets: Vec::with_capacity(batch_size),
        negative_videos: Vec::with_capacity(batch_size),
    };
    for _ in 0..batch_size {
        let a_set = &sets[anchorable[rng.random_range(0..anchorable.len())]];
        let n = a_set.crops.len();
        let ai = rng.random_range(0..n);
        let mut pi = rng.random_range(0..n - 1);
        if pi >= ai {
            pi += 1;
        }
        let candidates: Vec<&SampleSet> = sets
            .iter()
            .filter(|s| s.video_id != a_set.video_id && !s.crops.is_empty())
            .collect();
        let n_set = candidates[rng.random_range(0..candidates.len())];
        let ni = rng.random_range(0..n_set.crops.len());

        batch.anchors.push(a_set.crops[ai].clone());
        batch.positives.push(a_set.crops[pi].clone());
        batch.negatives.push(n_set.crops[ni].clone());
        batch.anchor_tracklets.push(a_set.tracklet_id);
        batch.anchor_videos.push(a_set.video_id.clone());
        batch.negative_tracklets.push(n_set.tracklet_id);
        batch.negative_videos.push(n_set.video_id.clone());
    }
    Ok(batch)
}

/// Deterministic per-(epoch, batch) triplet sampling over fixed sets.
#[derive(Debug, Clone)]
pub struct TripletSampler {
    pub sets: Vec<SampleSet>,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl crate::embedder::BatchSource for TripletSampler {
    fn batch(&mut self, epoch: usize, index: usize) -> Result<TripletBatch> {
        let s = seed::derive(self.rng_seed, &[epoch as u64, index as u64]);
        sample_triplet_batch(&self.sets, self.batch_size, s)
    }
}

/// Splits sample indices into (validation, test) at `1:(ratio-1)` per
/// identity. Each identity with at least two samples contributes at least
/// one to each side.
pub fn stratified_split(labels: &[IdentityId], ratio: usize, rng_seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if ratio < 2 {
        return Err(Error::invalid("split ratio must be >= 2"));
    }
    let mut by_id: BTreeMap<IdentityId, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_id.entry(l).or_default().push(i);
    }
    let (mut val, mut test) = (Vec::new(), Vec::new());
    for (id, mut idx) in by_id {
        idx.shuffle(&mut seed::rng(rng_seed, &[id as u64]));
        let n = idx.len();
        let n_val = if n < 2 { 0 } else { ((n as f64 / ratio as f64).round() as usize).clamp(1, n - 1) };
        val.extend_from_slice(&idx[..n_val]);
        test.extend_from_slice(&idx[n_val..]);
    }
    val.sort_unstable();
    test.sort_unstable();
    Ok((val, test))
}

#[derive(Serialize, Deserialize)]
struct SetManifest {
    tracklet_id: u64,
    video_id: String,
    crops: Vec<String>,
}


/// Writes each set as a directory of PNG crops with JSON sidecars plus a
/// top-level `manifest.json`.
pub fn save_sample_sets(dir: &Path, sets: &[SampleSet]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Vec::with_capacity(sets.len());
    for set in sets {
        let name = set.dir_name();
        let sub = dir.join(&name);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let mut stems = Vec::with_capacity(set.crops.len());
        for (i, crop) in set.crops.iter().enumerate() {
            let stem = format!("crop_{i:04}");
            crop.save(&sub, &stem)?;
            stems.push(format!("{name}/{stem}"));
        }
        manifest.push(SetManifest {
            tracklet_id: set.tracklet_id,
            video_id: set.video_id.clone(),
            crops: stems,
        });
    }
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load_sample_sets(dir: &Path) -> Result<Vec<SampleSet>> {
    let path = dir.join("manifest.json");
    let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Vec<SetManifest> = serde_json::from_slice(&raw)?;
    manifest
        .into_iter()
        .map(|m| {
            let crops = m
                .crops
                .iter()
                .map(|rel| {
                    let p = dir.join(rel);
                    let parent = p.parent().unwrap_or(dir);
                    let stem = p.file_name().and_then(|s| s.to_str()).unwrap_or_default();
                    Crop::load(parent, stem)
                })
                .collect::<Result<_>>()?;
            Ok(SampleSet {
                tracklet_id: m.tracklet_id,
                video_id: m.video_id,
                crops,
            })
        })
        .collect()
}
