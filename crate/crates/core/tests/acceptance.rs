//! Acceptance suite. Runs every criterion in sequence, prints one
//! `PASS`/`FAIL` line per criterion and exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use herdid_core::clustering::{adjusted_rand_index, fit_gmm_with, GmmConfig};
use herdid_core::detector_math::{average_precision, decode_box, encode_box, focal_loss, focal_loss_grad, FocalLossParams};
use herdid_core::geometry::{rotated_iou, Detection, OrientedBox};
use herdid_core::pipeline::{run_pipeline, PipelineConfig};
use herdid_core::synthherd::{jitter_detections, render_video, scenario_herd, DetectorNoise, SynthScenario};
use herdid_core::tracking::{link_detections, sample_frames, TrackingConfig};
use herdid_core::IdentityId;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Outcome {
    let msg = msg.into();
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(elapsed: Duration, limit_s: f64, detail: String) -> Outcome {
    let s = elapsed.as_secs_f64();
    check(s < limit_s, format!("{detail}, {s:.2}s (limit {limit_s}s)"))
}

fn geometry_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = common::rng(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let a = common::random_box(&mut r, 60.0, (10.0, 60.0));
        let b = common::random_box(&mut r, 60.0, (10.0, 60.0));
        worst = worst.max((rotated_iou(&a, &b) - common::raster_iou(&a, &b, 1000)).abs());
    }
    let sq = OrientedBox::new(0.0, 0.0, 2.0, 2.0, 0.0).unwrap();
    let diamond = sq.with_theta(PI / 4.0);
    let iou45 = rotated_iou(&sq, &diamond);
    if worst > 2e-3 || (iou45 - 0.7071).abs() > 2e-3 {
        return Err(format!("max |Δ| {worst:.2e}, 45° square {iou45:.5}"));
    }
    within(start.elapsed(), 30.0, format!("max |Δ| {worst:.2e} over 500 pairs, 45° square {iou45:.5}"))
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut r = common::rng(77);
    let params = FocalLossParams::default();
    let mut worst_focal: f64 = 0.0;
    for _ in 0..20 {
        let p: f64 = r.random_range(0.02..0.98);
        for positive in [true, false] {
            let analytic = focal_loss_grad(p, positive, &params).map_err(|e| e.to_string())?;
            let numeric = common::central_difference(|q| focal_loss(q, positive, &params).unwrap(), p, 1e-6);
            worst_focal = worst_focal.max(common::relative_error(&[analytic], &[numeric]));
        }
    }
    let mut worst_rtl: f64 = 0.0;
    let mut n_params = 0;
    for seed in 0..20 {
        let (err, n) = common::tiny_model_gradient_error(seed);
        worst_rtl = worst_rtl.max(err);
        n_params = n;
    }
    let detail = format!("focal {worst_focal:.2e} (40 points), RTL {worst_rtl:.2e} (20 seeds, {n_params} params)");
    if worst_focal > 1e-4 || worst_rtl > 1e-4 || n_params > 500 {
        return Err(detail);
    }
    within(start.elapsed(), 10.0, detail)
}

fn encode_decode() -> Outcome {
    let mut r = common::rng(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let gt = common::random_box(&mut r, 1000.0, (4.0, 300.0));
        let anchor = common::random_box(&mut r, 1000.0, (4.0, 300.0));
        let back = decode_box(&encode_box(&gt, &anchor), &anchor).map_err(|e| e.to_string())?;
        for (x, y) in [
            (back.cx(), gt.cx()),
            (back.cy(), gt.cy()),
            (back.w(), gt.w()),
            (back.h(), gt.h()),
            (back.theta(), gt.theta()),
        ] {
            worst = worst.max((x - y).abs());
        }
    }
    check(worst <= 1e-9, format!("max error {worst:.2e} over 1000 pairs"))
}

fn em_correctness() -> Outcome {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut worst_drop: f64 = 0.0;
    for seed in 0..50 {
        let mut r = common::rng(seed);
        let centres: Vec<[f64; 3]> = (0..3).map(|_| [0; 3].map(|_| r.random_range(-4.0..4.0))).collect();
        let x: Vec<Vec<f64>> = (0..150)
            .map(|i| centres[i % 3].iter().map(|c| c + noise.sample(&mut r)).collect())
            .collect();
        let cfg = GmmConfig {
            k: 4,
            max_iter: 200,
            tol: f64::NEG_INFINITY,
            rng_seed: seed,
            ..Default::default()
        };
        let g = fit_gmm_with(&x, &cfg).map_err(|e| e.to_string())?;
        if g.log_likelihood_trace.len() < 201 {
            return Err(format!("seed {seed}: only {} EM evaluations", g.log_likelihood_trace.len()));
        }
        for w in g.log_likelihood_trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }

    let mut r = common::rng(99);
    let x: Vec<Vec<f64>> = (0..400)
        .map(|_| vec![r.random_range(-3.0..5.0), 2.0 * noise.sample(&mut r), r.random_range(0.0..1.0)])
        .collect();
    let n = x.len() as f64;
    let cfg = GmmConfig {
        k: 1,
        max_iter: 50,
        ..Default::default()
    };
    let g = fit_gmm_with(&x, &cfg).map_err(|e| e.to_string())?;
    let mut mle_err: f64 = (g.weights[0] - 1.0).abs();
    for d in 0..3 {
        let mean = x.iter().map(|p| p[d]).sum::<f64>() / n;
        let var = x.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / n;
        mle_err = mle_err.max((g.means[0][d] - mean).abs()).max((g.variances[0][d] - var).abs());
    }

    let mut r = common::rng(3);
    let truth = [[-2.0, 1.0], [3.0, -1.5]];
    let spread = Normal::new(0.0, 0.2).unwrap();
    let x: Vec<Vec<f64>> = (0..4000)
        .map(|i| truth[i % 2].iter().map(|c| c + spread.sample(&mut r)).collect())
        .collect();
    let cfg = GmmConfig {
        k: 2,
        max_iter: 200,
        ..Default::default()
    };
    let g = fit_gmm_with(&x, &cfg).map_err(|e| e.to_string())?;
    let mut mean_err: f64 = 0.0;
    for t in &truth {
        let nearest = g
            .means
            .iter()
            .map(|m| (m[0] - t[0]).abs().max((m[1] - t[1]).abs()))
            .fold(f64::INFINITY, f64::min);
        mean_err = mean_err.max(nearest);
    }
    check(
        worst_drop <= 1e-9 && mle_err <= 1e-9 && mean_err <= 0.01,
        format!("largest LL drop {worst_drop:.2e} (50 seeds x 200 iters), k=1 MLE error {mle_err:.2e}, two-cloud mean error {mean_err:.4}"),
    )
}

fn ari_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut pairs = 0usize;
    for n in 2..=6 {
        let parts = common::set_partitions(n);
        for a in &parts {
            for b in &parts {
                let ours = adjusted_rand_index(a, b).map_err(|e| e.to_string())?;
                worst = worst.max((ours - common::pair_counting_ari(a, b)).abs());
                pairs += 1;
            }
        }
    }
    let mut identical_ok = true;
    for n in 2..=6 {
        for a in common::set_partitions(n) {
            identical_ok &= adjusted_rand_index(&a, &a).unwrap() == 1.0;
        }
    }
    let mut r = common::rng(11);
    let truth: Vec<usize> = (0..100).map(|i| i % 5).collect();
    let mut total = 0.0;
    for _ in 0..1000 {
        let mut perm = truth.clone();
        perm.shuffle(&mut r);
        total += adjusted_rand_index(&truth, &perm).unwrap();
    }
    let mean = total / 1000.0;
    check(
        worst <= 1e-12 && identical_ok && mean.abs() <= 0.05,
        format!("max |Δ| {worst:.1e} over {pairs} partition pairs (n ≤ 6), identical → 1: {identical_ok}, mean ARI of 1000 permutations {mean:+.4}"),
    )
}

fn tracking() -> Outcome {
    let mut videos = 0;
    let mut tracklets = 0;
    let mut switches = 0;
    let mut mismatched = Vec::new();
    for seed in 0..20u64 {
        let sc = SynthScenario {
            n_individuals: 6,
            n_videos: 10,
            rng_seed: seed,
            ..Default::default()
        };
        let herd = scenario_herd(&sc).map_err(|e| e.to_string())?;
        for v in 0..sc.n_videos {
            let video = render_video(&herd, &sc, v).map_err(|e| e.to_string())?;
            let frames = sample_frames(sc.fps, sc.frames_per_video, 5.0).map_err(|e| e.to_string())?;
            let gt: BTreeMap<usize, Vec<(OrientedBox, IdentityId)>> = frames
                .iter()
                .map(|&f| (f, video.gt_instances(f).into_iter().map(|g| (g.bbox, g.identity)).collect()))
                .collect();
            videos += 1;

            let exact: Vec<Vec<Detection>> = gt
                .iter()
                .map(|(&f, g)| g.iter().map(|(b, _)| Detection::new(*b, 1.0, f).unwrap()).collect())
                .collect();
            let linked = link_detections(&video.video_id, &exact, &TrackingConfig::default()).map_err(|e| e.to_string())?;
            let expected = video.gt_tracklets(&frames);
            tracklets += expected.len();
            let same = linked.len() == expected.len()
                && expected.iter().all(|g| linked.iter().any(|t| t.detections == g.detections));
            if !same {
                mismatched.push(video.video_id.clone());
            }

            let boxes = gt.iter().map(|(f, g)| (*f, g.iter().map(|x| x.0).collect())).collect();
            let noisy = jitter_detections(&boxes, &DetectorNoise::default(), (sc.frame_width, sc.frame_height), sc.body_size, seed * 1000 + v as u64)
                .map_err(|e| e.to_string())?;
            let per_frame: Vec<Vec<Detection>> = noisy.into_values().collect();
            for t in link_detections(&video.video_id, &per_frame, &TrackingConfig::default()).map_err(|e| e.to_string())? {
                let ids: Vec<IdentityId> = t
                    .detections
                    .iter()
                    .filter_map(|d| gt[&d.frame_index].iter().find(|(b, _)| rotated_iou(b, &d.bbox) > 0.5).map(|x| x.1))
                    .collect();
                switches += ids.windows(2).filter(|w| w[0] != w[1]).count();
            }
        }
    }
    check(
        mismatched.is_empty() && switches == 0,
        format!(
            "20 seeds, {videos} videos, {tracklets} GT tracklets, {} not reproduced, {switches} identity switches under detector noise",
            mismatched.len()
        ),
    )
}

fn ap_sanity() -> Outcome {
    let bx = |x: f64| OrientedBox::new(x, 50.0, 80.0, 30.0, 0.2).unwrap();
    let gts = vec![vec![bx(0.0), bx(100.0)]];
    let perfect: Vec<Detection> = gts[0].iter().map(|b| Detection::new(*b, 1.0, 0).unwrap()).collect();
    let ap_perfect = average_precision(&perfect, &gts, 0.7).map_err(|e| e.to_string())?.ap;
    let one_fp = vec![Detection::new(bx(0.0), 0.9, 0).unwrap(), Detection::new(bx(500.0), 0.8, 0).unwrap()];
    let ap_half = average_precision(&one_fp, &gts, 0.7).map_err(|e| e.to_string())?.ap;

    let frames: BTreeMap<usize, Vec<OrientedBox>> = (0..30)
        .map(|f| {
            let x = 60.0 + 15.0 * f as f64;
            (f, vec![OrientedBox::new(x, 100.0, 100.0, 40.0, 0.05).unwrap(), OrientedBox::new(620.0 - x, 250.0, 95.0, 38.0, 3.0).unwrap()])
        })
        .collect();
    let gt_lists: Vec<Vec<OrientedBox>> = frames.values().cloned().collect();
    let mut sweep = Vec::new();
    for sigma in [0.0, 2.0, 4.0, 8.0, 16.0] {
        let noise = DetectorNoise {
            center_sigma: sigma,
            size_sigma: sigma * 0.01,
            angle_sigma: sigma * 0.01,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            ..DetectorNoise::default()
        };
        let dets = jitter_detections(&frames, &noise, (640, 360), (100.0, 40.0), 21).map_err(|e| e.to_string())?;
        let preds: Vec<Detection> = dets.into_values().flatten().collect();
        sweep.push(average_precision(&preds, &gt_lists, 0.7).map_err(|e| e.to_string())?.ap);
    }
    let monotone = sweep.windows(2).all(|w| w[1] <= w[0]);
    let curve: Vec<String> = sweep.iter().map(|a| format!("{a:.3}")).collect();
    check(
        ap_perfect == 1.0 && ap_half == 0.5 && monotone,
        format!("perfect {ap_perfect}, 2 GT + 1 FP {ap_half}, jitter sweep [{}]", curve.join(", ")),
    )
}

fn benchmark(dir: &Path) -> Outcome {
    let cfg = PipelineConfig {
        output_dir: dir.to_path_buf(),
        ..Default::default()
    };
    let start = Instant::now();
    let report = run_pipeline(&cfg).map_err(|e| e.to_string())?.report;
    let elapsed = start.elapsed().as_secs_f64();
    let m = &report.metrics;
    let (top1, top4) = (m.top_n["1"], m.top_n["4"]);
    let curve = &report.top_n_curve;
    let monotone = curve.windows(2).all(|w| w[0] <= w[1]);
    let k = report.counts.identities;
    let at_k = curve.get(k - 1).copied().unwrap_or(f64::NAN);
    check(
        top1 >= 0.85 && top4 >= 0.95 && m.ari >= 0.70 && elapsed <= 600.0 && monotone && at_k == 1.0 && k == 20,
        format!(
            "{k} identities, Top-1 {top1:.3}, Top-4 {top4:.3}, ARI {:.3}, Top-N monotone {monotone}, Top-{k} {at_k:.3}, {elapsed:.0}s (limit 600s)",
            m.ari
        ),
    )
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    let cfg = PipelineConfig {
        output_dir: second.to_path_buf(),
        ..Default::default()
    };
    run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let mut differing = Vec::new();
    for f in ["metrics.json", "report.json"] {
        let a = std::fs::read(first.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = std::fs::read(second.join(f)).map_err(|e| format!("{f}: {e}"))?;
        if a != b {
            differing.push(f);
        }
    }
    check(
        differing.is_empty(),
        if differing.is_empty() {
            "metrics.json and report.json byte-identical across two fresh runs".to_string()
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let first = tempfile::tempdir().expect("tempdir");
    let second = tempfile::tempdir().expect("tempdir");
    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("geometry oracle", Box::new(geometry_oracle)),
        ("gradient checks", Box::new(gradient_checks)),
        ("encode/decode roundtrip", Box::new(encode_decode)),
        ("EM correctness", Box::new(em_correctness)),
        ("ARI oracle", Box::new(ari_oracle)),
        ("tracking", Box::new(tracking)),
        ("AP sanity", Box::new(ap_sanity)),
        ("end-to-end benchmark", Box::new(|| benchmark(first.path()))),
        ("determinism", Box::new(|| determinism(first.path(), second.path()))),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
