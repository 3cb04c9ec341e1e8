//! End-to-end orchestration: ingest or synthesise data, track, build
//! triplet sets, train the embedder, fit the mixture, evaluate, and persist
//! every artifact under one output directory.
//!
//! Stages `data`, `train` and `cluster` are cached: each writes a
//! `stage.hash` fingerprint of its configuration and upstream hash, and a
//! later run with a matching fingerprint reloads the stored artifacts
//! instead of recomputing them. Evaluation always reruns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{
    adjusted_rand_index, assign, fit_gmm_with, overlap_scores, rank_clusters, top_n_accuracy, ClusterRanking,
    GmmConfig, GmmModel, DEFAULT_EM_ITERATIONS, DEFAULT_TOLERANCE, VARIANCE_FLOOR,
};
use crate::detector_math::{average_precision, ApReport};
use crate::embedder::{train, EmbedderConfig, EmbedderModel, Embedding, TrainConfig, TrainLog, ValidationSet};
use crate::error::{Error, Result};
use crate::geometry::{extract_normalized_crop, rotated_iou, rotated_nms, Crop, Detection, OrientedBox};
use crate::image::Image;
use crate::seed;
use crate::synthherd::{
    jitter_box, jitter_detections, render_still, render_video, scenario_herd, DetectorNoise, SynthIdentity,
    SynthScenario, SynthVideo,
};
use crate::tracking::{filter_short, link_detections, sample_frames, Tracklet, TrackingConfig, MIN_TRAINING_TRACKLET_LEN};
use crate::tripletgen::{
    build_positive_set, load_sample_sets, save_sample_sets, stratified_split, AugmentConfig, SampleSet,
    TripletSampler,
};
use crate::IdentityId;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TOP_N: [usize; 5] = [1, 2, 4, 8, 16];

const TAG_STILLS: u64 = 0x5711;
const TAG_SPLIT: u64 = 0x5B17;
const TAG_VIDEO: u64 = 0x71DE;
const TAG_SETS: u64 = 0x5E75;
const TAG_INIT: u64 = 0x1417;
const TAG_SAMPLER: u64 = 0x5A3B;
const TAG_GMM: u64 = 0x63A1;
const TAG_RANK: u64 = 0x7A4C;

/// Where frames, detections and stills come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Generated in memory from a scenario, with a simulated detector.
    Synthetic {
        #[serde(default)]
        scenario: SynthScenario,
        #[serde(default)]
        detector_noise: DetectorNoise,
    },
    /// A dataset directory in the layout written by [`write_synthetic_dataset`].
    Ingested { root: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            scenario: SynthScenario::default(),
            detector_noise: DetectorNoise::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    /// Detections below this confidence are not tracked.
    pub confidence_threshold: f64,
    pub nms_iou: f64,
    /// IoU threshold for the detector AP report.
    pub ap_iou: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.5,
            nms_iou: 0.5,
            ap_iou: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripletConfig {
    pub augment: AugmentConfig,
    pub min_tracklet_len: usize,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            augment: AugmentConfig::default(),
            min_tracklet_len: MIN_TRAINING_TRACKLET_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    /// Number of mixture components; defaults to the enrolled identity count.
    pub k: Option<usize>,
    pub em_iterations: usize,
    pub tol: f64,
    pub var_floor: f64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            k: None,
            em_iterations: DEFAULT_EM_ITERATIONS,
            tol: DEFAULT_TOLERANCE,
            var_floor: VARIANCE_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    /// Stills go to validation and test at `1 : split_ratio - 1`.
    pub split_ratio: usize,
    pub top_n: Vec<usize>,
    /// Exemplar crops listed per identity for the label service.
    pub exemplars: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            split_ratio: 4,
            top_n: DEFAULT_TOP_N.to_vec(),
            exemplars: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub source: DataSource,
    pub detection: DetectionConfig,
    pub tracking: TrackingConfig,
    pub triplets: TripletConfig,
    pub embedder: EmbedderConfig,
    pub training: TrainConfig,
    pub clustering: ClusteringConfig,
    pub evaluation: EvaluationConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            source: DataSource::default(),
            detection: DetectionConfig::default(),
            tracking: TrackingConfig::default(),
            triplets: TripletConfig::default(),
            embedder: EmbedderConfig::default(),
            training: TrainConfig::default(),
            clustering: ClusteringConfig::default(),
            evaluation: EvaluationConfig::default(),
            output_dir: PathBuf::from("herdid_out"),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_slice(&raw)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.source {
            DataSource::Synthetic {
                scenario,
                detector_noise,
            } => {
                scenario.validate()?;
                detector_noise.validate()?;
            }
            DataSource::Ingested { root } => {
                if root.as_os_str().is_empty() {
                    return Err(Error::invalid("ingested source needs a root directory"));
                }
            }
        }
        self.tracking.validate()?;
        self.embedder.validate()?;
        self.training.validate()?;
        let aug = &self.triplets.augment;
        if aug.crop_h != self.embedder.input_h || aug.crop_w != self.embedder.input_w {
            return Err(Error::invalid(format!(
                "crop size {}x{} does not match embedder input {}x{}",
                aug.crop_h, aug.crop_w, self.embedder.input_h, self.embedder.input_w
            )));
        }
        if self.triplets.min_tracklet_len < 2 {
            return Err(Error::invalid("min_tracklet_len must be >= 2 to form positives"));
        }
        if self.evaluation.split_ratio < 2 || self.evaluation.top_n.contains(&0) {
            return Err(Error::invalid("split_ratio must be >= 2 and every N >= 1"));
        }
        if self.clustering.k == Some(0) || self.clustering.em_iterations == 0 {
            return Err(Error::invalid("k and em_iterations must be positive"));
        }
        if !(0.0..=1.0).contains(&self.detection.confidence_threshold) {
            return Err(Error::invalid("confidence_threshold must lie in [0,1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Validation,
    Test,
}

/// One labelled still crop used for validation or testing.
#[derive(Debug, Clone, PartialEq)]
pub struct StillCrop {
    pub name: String,
    pub identity: IdentityId,
    pub split: Split,
    pub crop: Crop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StillEntry {
    name: String,
    identity: IdentityId,
    split: Split,
}

/// A training tracklet as persisted in `data/tracklets.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackletRecord {
    /// Unique across the run.
    pub tracklet_id: u64,
    pub video_id: String,
    pub detections: Vec<Detection>,
    /// Majority ground-truth identity, when ground truth is available.
    pub gt_identity: Option<IdentityId>,
    /// Paths (relative to the output directory) of the un-augmented crops.
    pub crops: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DataArtifacts {
    pub sets: Vec<SampleSet>,
    pub tracklets: Vec<TrackletRecord>,
    pub stills: Vec<StillCrop>,
    pub identities: Vec<IdentityId>,
    pub ap: Option<ApReport>,
}

impl DataArtifacts {
    /// Un-augmented crops of every set, in set order.
    pub fn original_crops(&self, aug_per_crop: usize) -> Vec<(u64, &Crop)> {
        self.sets
            .iter()
            .flat_map(|s| s.crops.iter().step_by(aug_per_crop + 1).map(move |c| (s.tracklet_id, c)))
            .collect()
    }

    fn stills_of(&self, split: Split) -> Vec<&StillCrop> {
        self.stills.iter().filter(|s| s.split == split).collect()
    }
}

/// Ground-truth boxes and identities per frame index.
type GtFrames = BTreeMap<usize, Vec<(OrientedBox, IdentityId)>>;

trait VideoInput {
    fn id(&self) -> &str;
    fn fps(&self) -> f64;
    fn n_frames(&self) -> usize;
    fn detections(&self, frames: &[usize]) -> Result<BTreeMap<usize, Vec<Detection>>>;
    fn ground_truth(&self, frames: &[usize]) -> Result<Option<GtFrames>>;
    fn frame(&self, index: usize) -> Result<Image>;
}

struct SynthInput<'a> {
    video: SynthVideo,
    herd: &'a [SynthIdentity],
    noise: DetectorNoise,
    body: (f64, f64),
    seed: u64,
}

impl VideoInput for SynthInput<'_> {
    fn id(&self) -> &str {
        &self.video.video_id
    }

    fn fps(&self) -> f64 {
        self.video.fps
    }

    fn n_frames(&self) -> usize {
        self.video.n_frames
    }

    fn detections(&self, frames: &[usize]) -> Result<BTreeMap<usize, Vec<Detection>>> {
        let gt: BTreeMap<usize, Vec<OrientedBox>> = frames
            .iter()
            .map(|&f| (f, self.video.gt_instances(f).into_iter().map(|g| g.bbox).collect()))
            .collect();
        jitter_detections(
            &gt,
            &self.noise,
            (self.video.width, self.video.height),
            self.body,
            seed::derive(self.seed, &[TAG_VIDEO, self.video.video_index as u64]),
        )
    }

    fn ground_truth(&self, frames: &[usize]) -> Result<Option<GtFrames>> {
        Ok(Some(
            frames
                .iter()
                .map(|&f| {
                    let inst = self.video.gt_instances(f).into_iter().map(|g| (g.bbox, g.identity)).collect();
                    (f, inst)
                })
                .collect(),
        ))
    }

    fn frame(&self, index: usize) -> Result<Image> {
        self.video.render_frame(self.herd, index)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VideoMeta {
    fps: f64,
    n_frames: usize,
    width: usize,
    height: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GtRecord {
    frame_index: usize,
    identity: IdentityId,
    #[serde(rename = "box")]
    bbox: OrientedBox,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StillRecord {
    file: String,
    identity: IdentityId,
    /// Detector box the crop is cut from.
    #[serde(rename = "box")]
    bbox: OrientedBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_box: Option<OrientedBox>,
}

struct IngestedInput {
    id: String,
    dir: PathBuf,
    meta: VideoMeta,
    detections: BTreeMap<usize, Vec<Detection>>,
    gt: Option<GtFrames>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&raw)?)
}

fn frame_file(index: usize) -> String {
    format!("frame_{index:06}.png")
}

impl IngestedInput {
    fn open(dir: &Path) -> Result<Self> {
        let id = dir
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::invalid(format!("bad video directory {}", dir.display())))?
            .to_string();
        let meta: VideoMeta = read_json(&dir.join("meta.json"))?;
        let mut detections: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
        for d in read_jsonl::<Detection>(&dir.join("detections.jsonl"))? {
            detections.entry(d.frame_index).or_default().push(d);
        }
        let gt_path = dir.join("gt.jsonl");
        let gt = if gt_path.exists() {
            let mut map: GtFrames = BTreeMap::new();
            for g in read_jsonl::<GtRecord>(&gt_path)? {
                map.entry(g.frame_index).or_default().push((g.bbox, g.identity));
            }
            Some(map)
        } else {
            None
        };
        Ok(Self {
            id,
            dir: dir.to_path_buf(),
            meta,
            detections,
            gt,
        })
    }
}

impl VideoInput for IngestedInput {
    fn id(&self) -> &str {
        &self.id
    }

    fn fps(&self) -> f64 {
        self.meta.fps
    }

    fn n_frames(&self) -> usize {
        self.meta.n_frames
    }

    fn detections(&self, frames: &[usize]) -> Result<BTreeMap<usize, Vec<Detection>>> {
        Ok(frames
            .iter()
            .map(|&f| (f, self.detections.get(&f).cloned().unwrap_or_default()))
            .collect())
    }

    fn ground_truth(&self, frames: &[usize]) -> Result<Option<GtFrames>> {
        Ok(self.gt.as_ref().map(|gt| {
            frames
                .iter()
                .map(|&f| (f, gt.get(&f).cloned().unwrap_or_default()))
                .collect()
        }))
    }

    fn frame(&self, index: usize) -> Result<Image> {
        Image::load_png(&self.dir.join("frames").join(frame_file(index)))
    }
}

/// Majority identity among the ground-truth boxes each detection overlaps
/// with IoU >= 0.5; ties go to the smaller label.
fn vote_identity(
    detections: &[Detection],
    gt: &GtFrames,
) -> Option<IdentityId> {
    let mut votes: BTreeMap<IdentityId, usize> = BTreeMap::new();
    for d in detections {
        let Some(boxes) = gt.get(&d.frame_index) else { continue };
        let best = boxes
            .iter()
            .map(|(b, id)| (rotated_iou(&d.bbox, b), *id))
            .filter(|(iou, _)| *iou >= 0.5)
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        if let Some((_, id)) = best {
            *votes.entry(id).or_default() += 1;
        }
    }
    let top = votes.values().copied().max()?;
    votes.into_iter().find(|(_, v)| *v == top).map(|(id, _)| id)
}

struct Accumulated {
    sets: Vec<SampleSet>,
    tracklets: Vec<TrackletRecord>,
    ap_preds: Vec<Detection>,
    ap_gts: Vec<Vec<OrientedBox>>,
    has_gt: bool,
    next_tracklet: u64,
}

fn process_video(input: &dyn VideoInput, cfg: &PipelineConfig, acc: &mut Accumulated) -> Result<()> {
    let frames = sample_frames(input.fps(), input.n_frames(), cfg.tracking.sample_rate_hz)?;
    let raw = input.detections(&frames)?;
    let gt = input.ground_truth(&frames)?;

    if let Some(gt) = &gt {
        acc.has_gt = true;
        for &f in &frames {
            let image = acc.ap_gts.len();
            acc.ap_gts.push(gt.get(&f).map(|v| v.iter().map(|(b, _)| *b).collect()).unwrap_or_default());
            for d in raw.get(&f).into_iter().flatten() {
                acc.ap_preds.push(Detection { frame_index: image, ..*d });
            }
        }
    }

    let per_frame: Vec<Vec<Detection>> = frames
        .iter()
        .map(|f| {
            let dets = raw.get(f).map(Vec::as_slice).unwrap_or_default();
            rotated_nms(dets, cfg.detection.nms_iou, cfg.detection.confidence_threshold)
        })
        .collect();
    let linked = link_detections(input.id(), &per_frame, &cfg.tracking)?;
    let kept = filter_short(linked, cfg.triplets.min_tracklet_len);
    if kept.is_empty() {
        return Ok(());
    }

    let needed: BTreeSet<usize> = kept.iter().flat_map(|t| t.frame_indices()).collect();
    let mut images = BTreeMap::new();
    for f in needed {
        images.insert(f, input.frame(f)?);
    }
    let stride = cfg.triplets.augment.aug_per_crop + 1;
    for mut t in kept {
        t.tracklet_id = acc.next_tracklet;
        acc.next_tracklet += 1;
        let mut set = build_positive_set(&t, &images, &cfg.triplets.augment, seed::derive(cfg.seed, &[TAG_SETS]))?;
        set.crops.iter_mut().for_each(|c| c.pixels.quantize_u8());
        let dir = set.dir_name();
        let crops = (0..t.len())
            .map(|i| format!("data/sets/{dir}/crop_{:04}.png", i * stride))
            .collect();
        acc.tracklets.push(TrackletRecord {
            tracklet_id: t.tracklet_id,
            video_id: t.video_id.clone(),
            gt_identity: gt.as_ref().and_then(|g| vote_identity(&t.detections, g)),
            detections: t.detections,
            crops,
        });
        acc.sets.push(set);
    }
    Ok(())
}

fn cut_still(image: &Image, bbox: &OrientedBox, index: usize, aug: &AugmentConfig) -> Result<Crop> {
    let mut crop = extract_normalized_crop(&image.to_gray(), bbox, index, aug.crop_h, aug.crop_w)?;
    crop.pixels.quantize_u8();
    Ok(crop)
}

fn split_stills(
    raw: Vec<(String, IdentityId, Crop)>,
    cfg: &PipelineConfig,
) -> Result<Vec<StillCrop>> {
    let labels: Vec<IdentityId> = raw.iter().map(|r| r.1).collect();
    let (val, _) = stratified_split(&labels, cfg.evaluation.split_ratio, seed::derive(cfg.seed, &[TAG_SPLIT]))?;
    let val: BTreeSet<usize> = val.into_iter().collect();
    Ok(raw
        .into_iter()
        .enumerate()
        .map(|(i, (name, identity, crop))| StillCrop {
            name,
            identity,
            split: if val.contains(&i) { Split::Validation } else { Split::Test },
            crop,
        })
        .collect())
}

fn compute_data(cfg: &PipelineConfig) -> Result<DataArtifacts> {
    let mut acc = Accumulated {
        sets: Vec::new(),
        tracklets: Vec::new(),
        ap_preds: Vec::new(),
        ap_gts: Vec::new(),
        has_gt: false,
        next_tracklet: 0,
    };
    let aug = &cfg.triplets.augment;
    let (identities, raw_stills) = match &cfg.source {
        DataSource::Synthetic {
            scenario,
            detector_noise,
        } => {
            let herd = scenario_herd(scenario)?;
            for v in 0..scenario.n_videos {
                let input = SynthInput {
                    video: render_video(&herd, scenario, v)?,
                    herd: &herd,
                    noise: *detector_noise,
                    body: scenario.body_size,
                    seed: scenario.rng_seed,
                };
                process_video(&input, cfg, &mut acc)?;
            }
            let identities: Vec<IdentityId> =
                herd.iter().filter(|h| h.enrollable).map(|h| h.identity_id).collect();
            let mut stills = Vec::new();
            for &id in &identities {
                for s in 0..scenario.stills_per_identity {
                    let still = render_still(&herd, scenario, id, s)?;
                    let mut rng = seed::rng(scenario.rng_seed, &[TAG_STILLS, id as u64, s as u64]);
                    let bbox = jitter_box(&still.gt_box, detector_noise, &mut rng)?;
                    let name = format!("still_{id:04}_{s:03}");
                    stills.push((name, id, cut_still(&still.image, &bbox, stills.len(), aug)?));
                }
            }
            (identities, stills)
        }
        DataSource::Ingested { root } => {
            let videos_dir = root.join("videos");
            let mut dirs: Vec<PathBuf> = fs::read_dir(&videos_dir)
                .map_err(|e| Error::io(&videos_dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            dirs.sort();
            for dir in &dirs {
                process_video(&IngestedInput::open(dir)?, cfg, &mut acc)?;
            }
            let stills_dir = root.join("stills");
            let records: Vec<StillRecord> = read_jsonl(&stills_dir.join("stills.jsonl"))?;
            let mut stills = Vec::with_capacity(records.len());
            for (i, r) in records.iter().enumerate() {
                let image = Image::load_png(&stills_dir.join(&r.file))?;
                let name = Path::new(&r.file)
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("still")
                    .to_string();
                stills.push((name, r.identity, cut_still(&image, &r.bbox, i, aug)?));
            }
            let ids_path = root.join("identities.json");
            let identities: Vec<IdentityId> = if ids_path.exists() {
                read_json(&ids_path)?
            } else {
                let set: BTreeSet<IdentityId> = records.iter().map(|r| r.identity).collect();
                set.into_iter().collect()
            };
            (identities, stills)
        }
    };
    if identities.is_empty() {
        return Err(Error::InsufficientData("no enrolled identities".into()));
    }
    let stills = split_stills(raw_stills, cfg)?;
    let ap = if acc.has_gt && acc.ap_gts.iter().any(|g| !g.is_empty()) {
        Some(average_precision(&acc.ap_preds, &acc.ap_gts, cfg.detection.ap_iou)?)
    } else {
        None
    };
    Ok(DataArtifacts {
        sets: acc.sets,
        tracklets: acc.tracklets,
        stills,
        identities,
        ap,
    })
}

fn save_data(dir: &Path, data: &DataArtifacts) -> Result<()> {
    save_sample_sets(&dir.join("sets"), &data.sets)?;
    write_jsonl(&dir.join("tracklets.jsonl"), &data.tracklets)?;
    let stills_dir = dir.join("stills");
    fs::create_dir_all(&stills_dir).map_err(|e| Error::io(&stills_dir, e))?;
    let mut entries = Vec::with_capacity(data.stills.len());
    for s in &data.stills {
        s.crop.save(&stills_dir, &s.name)?;
        entries.push(StillEntry {
            name: s.name.clone(),
            identity: s.identity,
            split: s.split,
        });
    }
    write_json(&stills_dir.join("stills.json"), &entries)?;
    write_json(&dir.join("identities.json"), &data.identities)?;
    if let Some(ap) = &data.ap {
        write_json(&dir.join("ap_report.json"), ap)?;
    }
    Ok(())
}

fn load_data(dir: &Path) -> Result<DataArtifacts> {
    let sets = load_sample_sets(&dir.join("sets"))?;
    let tracklets = read_jsonl(&dir.join("tracklets.jsonl"))?;
    let stills_dir = dir.join("stills");
    let entries: Vec<StillEntry> = read_json(&stills_dir.join("stills.json"))?;
    let stills = entries
        .into_iter()
        .map(|e| {
            Ok(StillCrop {
                crop: Crop::load(&stills_dir, &e.name)?,
                name: e.name,
                identity: e.identity,
                split: e.split,
            })
        })
        .collect::<Result<_>>()?;
    let ap_path = dir.join("ap_report.json");
    let ap = if ap_path.exists() { Some(read_json(&ap_path)?) } else { None };
    Ok(DataArtifacts {
        sets,
        tracklets,
        stills,
        identities: read_json(&dir.join("identities.json"))?,
        ap,
    })
}

fn fingerprint(upstream: &str, parts: &[&serde_json::Value]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(upstream.as_bytes());
    for p in parts {
        h.update(serde_json::to_vec(p)?);
        h.update([0u8]);
    }
    Ok(hex::encode(h.finalize()))
}

fn cached(dir: &Path, hash: &str) -> bool {
    fs::read_to_string(dir.join("stage.hash")).is_ok_and(|h| h.trim() == hash)
}

/// Clears `dir` and runs `compute`, writing the fingerprint last so an
/// interrupted stage is never mistaken for a complete one.
fn fresh_stage<T>(dir: &Path, hash: &str, compute: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = compute(dir)?;
    let path = dir.join("stage.hash");
    fs::write(&path, format!("{hash}\n")).map_err(|e| Error::io(&path, e))?;
    Ok(out)
}

fn stage<T>(
    dir: &Path,
    hash: &str,
    load: impl FnOnce(&Path) -> Result<T>,
    compute: impl FnOnce(&Path) -> Result<T>,
) -> Result<(T, bool)> {
    if cached(dir, hash) {
        if let Ok(v) = load(dir) {
            return Ok((v, true));
        }
    }
    fresh_stage(dir, hash, compute).map(|v| (v, false))
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ari: f64,
    pub top_n: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub identities: usize,
    pub clusters: usize,
    pub tracklets: usize,
    pub training_crops: usize,
    pub validation_stills: usize,
    pub test_stills: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub pocket_epoch: Option<usize>,
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    pub pocket_val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSummary {
    pub converged: bool,
    pub em_steps: usize,
    pub reseeds: usize,
    pub final_mean_log_likelihood: f64,
}

/// Summary of a run; paths are relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub ap: Option<f64>,
    pub ap_iou: f64,
    pub metrics: Metrics,
    /// Test Top-N accuracy for every N from 1 to the identity count.
    pub top_n_curve: Vec<f64>,
    /// Top-N over training tracklets with known ground truth.
    pub tracklet_top_n: BTreeMap<String, f64>,
    pub counts: Counts,
    pub training: TrainingSummary,
    pub clustering: ClusteringSummary,
    pub artifacts: BTreeMap<String, String>,
}

/// Per-cluster entry of `clusters.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub cluster: usize,
    pub assigned_identity: Option<IdentityId>,
    pub training_crops: usize,
    pub validation_stills: usize,
    pub ranking: ClusterRanking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityExemplars {
    pub identity: IdentityId,
    pub exemplars: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub identity: IdentityId,
    /// Overlap of the identity with the tracklet's cluster.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackletSuggestion {
    pub tracklet_id: u64,
    pub video_id: String,
    pub crops: Vec<String>,
    pub cluster: usize,
    /// Every enrolled identity, best first.
    pub candidates: Vec<Candidate>,
    pub gt_identity: Option<IdentityId>,
}

/// Everything the label service needs, written as `suggestions.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestions {
    pub identities: Vec<IdentityExemplars>,
    pub tracklets: Vec<TrackletSuggestion>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub stages: Vec<StageStatus>,
}

fn embed_crops(model: &EmbedderModel, crops: &[&Crop]) -> Result<Vec<Vec<f64>>> {
    crops.iter().map(|c| model.embed(c).map(|e| e.0)).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn n_key(n: usize) -> String {
    n.to_string()
}

/// Runs every stage, reusing cached artifacts whose fingerprints match.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("config.json"), cfg)?;
    let mut stages = Vec::new();

    let data_hash = fingerprint(
        "data",
        &[
            &to_value(&cfg.source)?,
            &to_value(&cfg.detection)?,
            &to_value(&cfg.tracking)?,
            &to_value(&cfg.triplets)?,
            &to_value(&cfg.evaluation.split_ratio)?,
            &to_value(&cfg.seed)?,
        ],
    )?;
    let (data, hit) = stage(&out.join("data"), &data_hash, load_data, |dir| {
        let data = compute_data(cfg)?;
        save_data(dir, &data)?;
        Ok(data)
    })
    .map_err(|e| e.in_stage("data"))?;
    stages.push(StageStatus {
        stage: "data".into(),
        cached: hit,
    });

    let val_stills = data.stills_of(Split::Validation);
    let test_stills = data.stills_of(Split::Test);
    if val_stills.is_empty() || test_stills.is_empty() {
        return Err(Error::InsufficientData("need validation and test stills".into()).in_stage("data"));
    }

    let train_hash = fingerprint(&data_hash, &[&to_value(&cfg.embedder)?, &to_value(&cfg.training)?])?;
    let ((model, log), hit) = stage(
        &out.join("train"),
        &train_hash,
        |dir| Ok((EmbedderModel::load(&dir.join("model.json"))?, read_json(&dir.join("train_log.json"))?)),
        |dir| {
            let init = EmbedderModel::new(
                cfg.embedder.clone(),
                seed::derive(cfg.seed, &[TAG_INIT, cfg.training.rng_seed]),
            )?;
            let mut sampler = TripletSampler {
                sets: data.sets.clone(),
                batch_size: cfg.training.batch_size,
                rng_seed: seed::derive(cfg.seed, &[TAG_SAMPLER, cfg.training.rng_seed]),
            };
            let val = ValidationSet {
                images: val_stills.iter().map(|s| s.crop.pixels.clone()).collect(),
                labels: val_stills.iter().map(|s| s.identity).collect(),
            };
            let outcome = train(init, &mut sampler, &val, &cfg.training)?;
            outcome.model.save(&dir.join("model.json"))?;
            outcome.log.write_csv(&dir.join("train_log.csv"))?;
            write_json(&dir.join("train_log.json"), &outcome.log)?;
            Ok((outcome.model, outcome.log))
        },
    )
    .map_err(|e| e.in_stage("train"))?;
    stages.push(StageStatus {
        stage: "train".into(),
        cached: hit,
    });

    let aug = cfg.triplets.augment.aug_per_crop;
    let originals = data.original_crops(aug);
    let k = cfg.clustering.k.unwrap_or(data.identities.len());
    let gmm_cfg = GmmConfig {
        k,
        max_iter: cfg.clustering.em_iterations,
        tol: cfg.clustering.tol,
        var_floor: cfg.clustering.var_floor,
        rng_seed: seed::derive(cfg.seed, &[TAG_GMM]),
    };
    let cluster_hash = fingerprint(&train_hash, &[&to_value(&gmm_cfg)?])?;
    let mut train_embeddings: Option<Vec<Vec<f64>>> = None;
    let (gmm, hit) = stage(
        &out.join("cluster"),
        &cluster_hash,
        |dir| read_json::<GmmModel>(&dir.join("gmm.json")),
        |dir| {
            let crops: Vec<&Crop> = originals.iter().map(|(_, c)| *c).collect();
            let x = embed_crops(&model, &crops)?;
            let gmm = fit_gmm_with(&x, &gmm_cfg)?;
            write_json(&dir.join("gmm.json"), &gmm)?;
            train_embeddings = Some(x);
            Ok(gmm)
        },
    )
    .map_err(|e| e.in_stage("cluster"))?;
    stages.push(StageStatus {
        stage: "cluster".into(),
        cached: hit,
    });

    let report = evaluate(cfg, &data, &model, &log, &gmm, train_embeddings).map_err(|e| e.in_stage("evaluate"))?;
    stages.push(StageStatus {
        stage: "evaluate".into(),
        cached: false,
    });
    Ok(RunOutcome { report, stages })
}

fn evaluate(
    cfg: &PipelineConfig,
    data: &DataArtifacts,
    model: &EmbedderModel,
    log: &TrainLog,
    gmm: &GmmModel,
    train_embeddings: Option<Vec<Vec<f64>>>,
) -> Result<EvalReport> {
    let out = &cfg.output_dir;
    let aug = cfg.triplets.augment.aug_per_crop;
    let originals = data.original_crops(aug);
    let train_x = match train_embeddings {
        Some(x) => x,
        None => embed_crops(model, &originals.iter().map(|(_, c)| *c).collect::<Vec<_>>())?,
    };
    let train_assign = assign(gmm, &train_x)?;

    let val = data.stills_of(Split::Validation);
    let test = data.stills_of(Split::Test);
    let val_x = embed_crops(model, &val.iter().map(|s| &s.crop).collect::<Vec<_>>())?;
    let test_x = embed_crops(model, &test.iter().map(|s| &s.crop).collect::<Vec<_>>())?;
    let val_assign = assign(gmm, &val_x)?;
    let test_assign = assign(gmm, &test_x)?;
    let val_labels: Vec<IdentityId> = val.iter().map(|s| s.identity).collect();
    let test_labels: Vec<IdentityId> = test.iter().map(|s| s.identity).collect();

    let table = overlap_scores(&val_assign.clusters, &val_labels)?;
    let rankings = rank_clusters(&table, gmm.k, &data.identities, seed::derive(cfg.seed, &[TAG_RANK]));

    let mut grid = cfg.evaluation.top_n.clone();
    grid.sort_unstable();
    grid.dedup();
    let mut top_n = BTreeMap::new();
    for &n in &grid {
        top_n.insert(n_key(n), top_n_accuracy(&rankings, &test_assign.clusters, &test_labels, n)?);
    }
    let top_n_curve = (1..=data.identities.len())
        .map(|n| top_n_accuracy(&rankings, &test_assign.clusters, &test_labels, n))
        .collect::<Result<Vec<_>>>()?;
    let ari = adjusted_rand_index(&test_assign.clusters, &test_labels)?;
    let metrics = Metrics { ari, top_n };

    // Tracklet-level suggestions: summed responsibilities pick the cluster.
    let mut tracklet_resp: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for ((tid, _), r) in originals.iter().zip(&train_assign.responsibilities) {
        let acc = tracklet_resp.entry(*tid).or_insert_with(|| vec![0.0; gmm.k]);
        acc.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    let mut suggestions = Vec::with_capacity(data.tracklets.len());
    for t in &data.tracklets {
        let cluster = tracklet_resp.get(&t.tracklet_id).map_or(0, |r| argmax(r));
        let candidates = rankings[cluster]
            .identities
            .iter()
            .map(|r| Candidate {
                identity: r.identity,
                confidence: r.overlap,
            })
            .collect();
        suggestions.push(TrackletSuggestion {
            tracklet_id: t.tracklet_id,
            video_id: t.video_id.clone(),
            crops: t.crops.clone(),
            cluster,
            candidates,
            gt_identity: t.gt_identity,
        });
    }
    let enrolled: BTreeSet<IdentityId> = data.identities.iter().copied().collect();
    let scored: Vec<&TrackletSuggestion> = suggestions
        .iter()
        .filter(|s| s.gt_identity.is_some_and(|g| enrolled.contains(&g)))
        .collect();
    let mut tracklet_top_n = BTreeMap::new();
    if !scored.is_empty() {
        let clusters: Vec<usize> = scored.iter().map(|s| s.cluster).collect();
        let labels: Vec<IdentityId> = scored.iter().filter_map(|s| s.gt_identity).collect();
        for &n in &grid {
            tracklet_top_n.insert(n_key(n), top_n_accuracy(&rankings, &clusters, &labels, n)?);
        }
    }

    let exemplars = data
        .identities
        .iter()
        .map(|&id| {
            let best_cluster = table
                .scores
                .iter()
                .filter(|s| s.identity == id)
                .max_by(|a, b| a.value.total_cmp(&b.value).then(b.cluster.cmp(&a.cluster)))
                .map(|s| s.cluster);
            let mut members: Vec<(bool, f64, usize)> = val
                .iter()
                .enumerate()
                .filter(|(_, s)| s.identity == id)
                .map(|(i, _)| {
                    let c = val_assign.clusters[i];
                    let in_best = Some(c) == best_cluster;
                    let resp = best_cluster.map_or(0.0, |b| val_assign.responsibilities[i][b]);
                    (in_best, resp, i)
                })
                .collect();
            members.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
            IdentityExemplars {
                identity: id,
                exemplars: members
                    .iter()
                    .take(cfg.evaluation.exemplars)
                    .map(|m| format!("data/stills/{}.png", val[m.2].name))
                    .collect(),
            }
        })
        .collect();

    let clusters_report: Vec<ClusterReport> = rankings
        .iter()
        .map(|r| ClusterReport {
            cluster: r.cluster,
            assigned_identity: r.assigned(),
            training_crops: train_assign.clusters.iter().filter(|&&c| c == r.cluster).count(),
            validation_stills: val_assign.clusters.iter().filter(|&&c| c == r.cluster).count(),
            ranking: r.clone(),
        })
        .collect();

    let mut artifacts = BTreeMap::new();
    for (k, v) in [
        ("config", "config.json"),
        ("tracklets", "data/tracklets.jsonl"),
        ("sample_sets", "data/sets/manifest.json"),
        ("stills", "data/stills/stills.json"),
        ("model", "train/model.json"),
        ("train_log", "train/train_log.csv"),
        ("gmm", "cluster/gmm.json"),
        ("clusters", "clusters.json"),
        ("suggestions", "suggestions.json"),
        ("metrics", "metrics.json"),
    ] {
        artifacts.insert(k.to_string(), v.to_string());
    }
    if data.ap.is_some() {
        artifacts.insert("ap_report".into(), "data/ap_report.json".into());
    }

    let report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        ap: data.ap.as_ref().map(|a| a.ap),
        ap_iou: cfg.detection.ap_iou,
        metrics,
        top_n_curve,
        tracklet_top_n,
        counts: Counts {
            identities: data.identities.len(),
            clusters: gmm.k,
            tracklets: data.tracklets.len(),
            training_crops: originals.len(),
            validation_stills: val.len(),
            test_stills: test.len(),
        },
        training: TrainingSummary {
            epochs: log.epochs.len(),
            pocket_epoch: log.pocket_epoch,
            initial_train_loss: log.initial_train_loss,
            initial_val_loss: log.initial_val_loss,
            pocket_val_loss: log.epochs.iter().find(|e| e.is_pocket).map(|e| e.val_loss),
        },
        clustering: ClusteringSummary {
            converged: gmm.converged,
            em_steps: gmm.log_likelihood_trace.len().saturating_sub(1),
            reseeds: gmm.reseeds.len(),
            final_mean_log_likelihood: gmm.log_likelihood_trace.last().copied().unwrap_or(f64::NAN),
        },
        artifacts,
    };

    write_json(&out.join("metrics.json"), &report.metrics)?;
    write_json(&out.join("report.json"), &report)?;
    fs::write(out.join("report.txt"), render_text(&report)).map_err(|e| Error::io(&out.join("report.txt"), e))?;
    write_json(&out.join("clusters.json"), &clusters_report)?;
    write_json(
        &out.join("suggestions.json"),
        &Suggestions {
            identities: exemplars,
            tracklets: suggestions,
        },
    )?;
    Ok(report)
}

/// Human-readable rendering of a report.
pub fn render_text(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "herdid evaluation report (schema v{})", r.schema_version);
    let _ = writeln!(s);
    if let Some(ap) = r.ap {
        let _ = writeln!(s, "detector AP@{:.2}     {:.4}", r.ap_iou, ap);
    }
    let _ = writeln!(s, "adjusted Rand index  {:.4}", r.metrics.ari);
    let mut keys: Vec<(usize, &String)> = r.metrics.top_n.keys().map(|k| (k.parse().unwrap_or(0), k)).collect();
    keys.sort_unstable();
    for (_, k) in keys {
        let _ = writeln!(s, "top-{:<3} accuracy     {:.4}", k, r.metrics.top_n[k]);
    }
    let _ = writeln!(s);
    let c = &r.counts;
    let _ = writeln!(
        s,
        "identities {}  clusters {}  tracklets {}  training crops {}  stills {} val / {} test",
        c.identities, c.clusters, c.tracklets, c.training_crops, c.validation_stills, c.test_stills
    );
    let t = &r.training;
    let _ = writeln!(
        s,
        "training: {} epochs, pocket epoch {}, val loss {:.4} -> {}",
        t.epochs,
        t.pocket_epoch.map_or("-".to_string(), |e| e.to_string()),
        t.initial_val_loss,
        t.pocket_val_loss.map_or("-".to_string(), |v| format!("{v:.4}"))
    );
    let g = &r.clustering;
    let _ = writeln!(
        s,
        "clustering: {} EM steps, converged {}, {} reseeds",
        g.em_steps, g.converged, g.reseeds
    );
    s
}

/// Writes one CSV row per crop: `id,cluster,e0..e{d-1}`. `cluster` is
/// empty when no mixture is given.
pub fn export_embeddings(
    model: &EmbedderModel,
    crops: &[(String, &Crop)],
    gmm: Option<&GmmModel>,
    path: &Path,
) -> Result<usize> {
    let dim = model.config.embed_dim;
    let mut out = String::from("id,cluster");
    for i in 0..dim {
        let _ = write!(out, ",e{i}");
    }
    out.push('\n');
    for (id, crop) in crops {
        if id.contains(',') || id.contains('\n') {
            return Err(Error::invalid(format!("crop id {id:?} cannot be written to CSV")));
        }
        let e = model.embed(crop)?;
        let cluster = gmm.map(|g| crate::clustering::assign_one(g, &e.0).0.to_string()).unwrap_or_default();
        let _ = write!(out, "{id},{cluster}");
        for v in &e.0 {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(crops.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub id: String,
    pub cluster: Option<usize>,
    pub embedding: Embedding,
}

pub fn read_embeddings_csv(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = raw.lines();
    let header = lines.next().ok_or_else(|| Error::Csv("empty file".into()))?;
    let dim = header.split(',').count().saturating_sub(2);
    lines
        .enumerate()
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 2 {
                return Err(Error::Csv(format!("row {} has {} fields, expected {}", i + 1, fields.len(), dim + 2)));
            }
            let cluster = if fields[1].is_empty() {
                None
            } else {
                Some(fields[1].parse().map_err(|_| Error::Csv(format!("row {}: bad cluster", i + 1)))?)
            };
            let vector = fields[2..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| Error::Csv(format!("row {}: bad value {f:?}", i + 1))))
                .collect::<Result<_>>()?;
            Ok(EmbeddingRow {
                id: fields[0].to_string(),
                cluster,
                embedding: Embedding(vector),
            })
        })
        .collect()
}

/// Exports embeddings of every training crop and still of a finished run.
pub fn export_run_embeddings(output_dir: &Path, path: &Path) -> Result<usize> {
    let cfg: PipelineConfig = read_json(&output_dir.join("config.json"))?;
    let data = load_data(&output_dir.join("data"))?;
    let model = EmbedderModel::load(&output_dir.join("train/model.json"))?;
    let gmm: GmmModel = read_json(&output_dir.join("cluster/gmm.json"))?;
    let aug = cfg.triplets.augment.aug_per_crop;
    let mut crops: Vec<(String, &Crop)> = Vec::new();
    for set in &data.sets {
        for (i, c) in set.crops.iter().enumerate().step_by(aug + 1) {
            crops.push((format!("{}/crop_{i:04}", set.dir_name()), c));
        }
    }
    for s in &data.stills {
        crops.push((s.name.clone(), &s.crop));
    }
    export_embeddings(&model, &crops, Some(&gmm), path)
}

/// Loads the suggestions written by a completed run.
pub fn load_suggestions(output_dir: &Path) -> Result<Suggestions> {
    read_json(&output_dir.join("suggestions.json"))
}

pub fn load_report(output_dir: &Path) -> Result<EvalReport> {
    read_json(&output_dir.join("report.json"))
}

/// Writes a synthetic scenario to disk in the ingestion layout:
///
/// ```text
/// videos/<video_id>/meta.json          fps, frame count, size
/// videos/<video_id>/frames/frame_NNNNNN.png
/// videos/<video_id>/detections.jsonl   simulated detector output
/// videos/<video_id>/gt.jsonl           ground-truth boxes with identities
/// videos/<video_id>/gt_tracklets.jsonl
/// stills/still_IIII_SSS.png
/// stills/stills.jsonl                  identity, detector box, gt box
/// identities.json                      enrolled identities
/// ```
///
/// Frames are written every `frame_stride` frames; detections and ground
/// truth cover the same frames.
pub fn write_synthetic_dataset(
    scenario: &SynthScenario,
    noise: &DetectorNoise,
    root: &Path,
    frame_stride: usize,
) -> Result<()> {
    scenario.validate()?;
    noise.validate()?;
    if frame_stride == 0 {
        return Err(Error::invalid("frame_stride must be >= 1"));
    }
    let herd = scenario_herd(scenario)?;
    for v in 0..scenario.n_videos {
        let video = render_video(&herd, scenario, v)?;
        let dir = root.join("videos").join(&video.video_id);
        let frames_dir = dir.join("frames");
        fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        write_json(
            &dir.join("meta.json"),
            &VideoMeta {
                fps: video.fps,
                n_frames: video.n_frames,
                width: video.width,
                height: video.height,
            },
        )?;
        let frames: Vec<usize> = (0..video.n_frames).step_by(frame_stride).collect();
        let input = SynthInput {
            video,
            herd: &herd,
            noise: *noise,
            body: scenario.body_size,
            seed: scenario.rng_seed,
        };
        let dets: Vec<Detection> = input.detections(&frames)?.into_values().flatten().collect();
        write_jsonl(&dir.join("detections.jsonl"), &dets)?;
        let mut gt = Vec::new();
        for &f in &frames {
            for g in input.video.gt_instances(f) {
                gt.push(GtRecord {
                    frame_index: f,
                    identity: g.identity,
                    bbox: g.bbox,
                });
            }
            input.frame(f)?.save_png(&frames_dir.join(frame_file(f)))?;
        }
        write_jsonl(&dir.join("gt.jsonl"), &gt)?;
        write_jsonl(&dir.join("gt_tracklets.jsonl"), &input.video.gt_tracklets(&frames))?;
    }
    let stills_dir = root.join("stills");
    fs::create_dir_all(&stills_dir).map_err(|e| Error::io(&stills_dir, e))?;
    let identities: Vec<IdentityId> = herd.iter().filter(|h| h.enrollable).map(|h| h.identity_id).collect();
    let mut records = Vec::new();
    for &id in &identities {
        for s in 0..scenario.stills_per_identity {
            let still = render_still(&herd, scenario, id, s)?;
            let mut rng = seed::rng(scenario.rng_seed, &[TAG_STILLS, id as u64, s as u64]);
            let bbox = jitter_box(&still.gt_box, noise, &mut rng)?;
            let file = format!("still_{id:04}_{s:03}.png");
            still.image.save_png(&stills_dir.join(&file))?;
            records.push(StillRecord {
                file,
                identity: id,
                bbox,
                gt_box: Some(still.gt_box),
            });
        }
    }
    write_jsonl(&stills_dir.join("stills.jsonl"), &records)?;
    write_json(&root.join("identities.json"), &identities)?;
    Ok(())
}

/// Tracklet view used by tests and tools: the persisted record as a
/// [`Tracklet`].
impl TrackletRecord {
    pub fn as_tracklet(&self) -> Tracklet {
        Tracklet {
            tracklet_id: self.tracklet_id,
            video_id: self.video_id.clone(),
            detections: self.detections.clone(),
            closed: true,
        }
    }
}

pub fn load_data_artifacts(output_dir: &Path) -> Result<DataArtifacts> {
    load_data(&output_dir.join("data"))
}
