use herdid_core::synthherd::{render_video, scenario_herd, SynthScenario};
use herdid_core::tracking::sample_frames;
use herdid_core::tripletgen::{build_positive_set, sample_triplet_batch, AugmentConfig};
use std::collections::BTreeMap;

#[test]
fn sets_from_rendered_tracklets_feed_valid_batches() {
    let sc = SynthScenario {
        n_individuals: 4,
        n_videos: 3,
        ..Default::default()
    };
    let herd = scenario_herd(&sc).unwrap();
    let mut sets = Vec::new();
    for v in 0..sc.n_videos {
        let video = render_video(&herd, &sc, v).unwrap();
        let frames = sample_frames(sc.fps, sc.frames_per_video, 5.0).unwrap();
        let images: BTreeMap<_, _> = frames.iter().map(|&f| (f, video.render_frame(&herd, f).unwrap())).collect();
        for t in video.gt_tracklets(&frames) {
            let set = build_positive_set(&t.as_tracklet(), &images, &AugmentConfig::default(), 3).unwrap();
            assert_eq!(set.crops.len(), 3 * t.detections.len());
            sets.push(set);
        }
    }
    let a = sample_triplet_batch(&sets, 16, 1).unwrap();
    let b = sample_triplet_batch(&sets, 16, 1).unwrap();
    assert_eq!(a, b);
    for i in 0..a.len() {
        assert_ne!(a.anchor_videos[i], a.negative_videos[i]);
        let set = sets
            .iter()
            .find(|s| s.tracklet_id == a.anchor_tracklets[i] && s.video_id == a.anchor_videos[i])
            .unwrap();
        assert!(set.crops.contains(&a.anchors[i]) && set.crops.contains(&a.positives[i]));
    }
}
