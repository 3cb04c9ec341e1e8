//! Tracking-by-detection: frame sampling and nearest-centre linking of
//! per-frame detections into tracklets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Detection;

/// Shortest tracklet kept for contrastive training.
pub const MIN_TRAINING_TRACKLET_LEN: usize = 3;

/// How far a tracklet head may move between sampled frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    /// Fixed pixel radius.
    Fixed(f64),
    /// `factor` times the mean box diagonal of the incoming frame.
    Adaptive { factor: f64 },
}

impl Default for Gate {
    fn default() -> Self {
        Gate::Adaptive { factor: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingConfig {
    pub sample_rate_hz: f64,
    pub gate: Gate,
    pub max_missed_frames: usize,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 5.0,
            gate: Gate::default(),
            max_missed_frames: 0,
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::invalid("sample_rate_hz must be > 0"));
        }
        match self.gate {
            Gate::Fixed(d) if !(d > 0.0) => Err(Error::invalid("gate distance must be > 0")),
            Gate::Adaptive { factor } if !(factor > 0.0) => {
                Err(Error::invalid("adaptive gate factor must be > 0"))
            }
            _ => Ok(()),
        }
    }

    fn gate_for(&self, frame: &[Detection]) -> f64 {
        match self.gate {
            Gate::Fixed(d) => d,
            Gate::Adaptive { factor } => {
                if frame.is_empty() {
                    0.0
                } else {
                    let mean =
                        frame.iter().map(|d| d.bbox.diagonal()).sum::<f64>() / frame.len() as f64;
                    factor * mean
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub tracklet_id: u64,
    pub video_id: String,
    pub detections: Vec<Detection>,
    #[serde(default)]
    pub closed: bool,
}

impl Tracklet {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn head(&self) -> &Detection {
        self.detections.last().expect("tracklets are never empty")
    }

    pub fn frame_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.detections.iter().map(|d| d.frame_index)
    }
}

/// Frame indices `floor(i * fps / rate)` below `n_frames`, ascending and unique.
pub fn sample_frames(video_fps: f64, n_frames: usize, rate_hz: f64) -> Result<Vec<usize>> {
    if !(rate_hz > 0.0) {
        return Err(Error::invalid(format!("sample rate must be > 0, got {rate_hz}")));
    }
    if !(video_fps > 0.0) {
        return Err(Error::invalid(format!("video fps must be > 0, got {video_fps}")));
    }
    let step = video_fps / rate_hz;
    let mut out: Vec<usize> = Vec::new();
    for i in 0usize.. {
        // The nudge keeps exact multiples like 29.999999 from flooring down.
        let idx = (i as f64 * step + 1e-9).floor() as usize;
        if idx >= n_frames {
            break;
        }
        if out.last() != Some(&idx) {
            out.push(idx);
        }
    }
    Ok(out)
}

struct OpenTrack {
    tracklet: Tracklet,
    missed: usize,
}

/// Links per-frame detections of one video into tracklets.
///
/// Each entry of `frames` holds the detections of one sampled frame, in
/// temporal order. Candidate (tracklet head, detection) pairs within the
/// gate are accepted greedily in ascending centre distance, ties broken by
/// `(tracklet_id, detection index)`. Unmatched detections start new
/// tracklets; a tracklet unmatched for more than `max_missed_frames`
/// consecutive sampled frames is closed.
pub fn link_detections(
    video_id: &str,
    frames: &[Vec<Detection>],
    cfg: &TrackingConfig,
) -> Result<Vec<Tracklet>> {
    cfg.validate()?;
    let mut next_id = 0u64;
    let mut open: Vec<OpenTrack> = Vec::new();
    let mut done: Vec<Tracklet> = Vec::new();

    for frame in frames {
        let gate = cfg.gate_for(frame);
        let mut pairs: Vec<(f64, u64, usize, usize)> = Vec::new();
        for (ti, track) in open.iter().enumerate() {
            let head = track.tracklet.head();
            for (di, det) in frame.iter().enumerate() {
                if det.frame_index <= head.frame_index {
                    continue;
                }
                let d = head.bbox.center().dist(&det.bbox.center());
                if d <= gate {
                    pairs.push((d, track.tracklet.tracklet_id, di, ti));
                }
            }
        }
        pairs.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });

        let mut det_taken = vec![false; frame.len()];
        let mut track_taken = vec![false; open.len()];
        for &(_, _, di, ti) in &pairs {
            if det_taken[di] || track_taken[ti] {
                continue;
            }
            det_taken[di] = true;
            track_taken[ti] = true;
            open[ti].tracklet.detections.push(frame[di]);
            open[ti].missed = 0;
        }

        let mut still_open = Vec::with_capacity(open.len());
        for (ti, mut track) in open.into_iter().enumerate() {
            if !track_taken[ti] {
                track.missed += 1;
            }
            if track.missed > cfg.max_missed_frames {
                track.tracklet.closed = true;
                done.push(track.tracklet);
            } else {
                still_open.push(track);
            }
        }
        open = still_open;

        for (di, det) in frame.iter().enumerate() {
            if !det_taken[di] {
                open.push(OpenTrack {
                    tracklet: Tracklet {
                        tracklet_id: next_id,
                        video_id: video_id.to_string(),
                        detections: vec![*det],
                        closed: false,
                    },
                    missed: 0,
                });
                next_id += 1;
            }
        }
    }

    for mut track in open {
        track.tracklet.closed = true;
        done.push(track.tracklet);
    }
    done.sort_by_key(|t| t.tracklet_id);
    Ok(done)
}

/// Drops tracklets shorter than `min_len`.
pub fn filter_short(tracklets: Vec<Tracklet>, min_len: usize) -> Vec<Tracklet> {
    tracklets.into_iter().filter(|t| t.len() >= min_len).collect()
}
