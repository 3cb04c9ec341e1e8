//! Oriented-box algebra: corners, rotated IoU, rotated NMS and
//! rotation-normalised crop extraction.
//!
//! Angles follow the head direction of the animal and are measured from the
//! image +x axis towards +y with the usual rotation matrix, normalised to
//! `[-pi, pi)`. Because image rows grow downwards this reads as clockwise on
//! screen; every routine in the crate uses the same convention.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Intersections with area below this are treated as empty.
const AREA_EPS: f64 = 1e-12;

/// Wraps an angle into `[-pi, pi)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = theta - two_pi * ((theta + PI) / two_pi).floor();
    if r >= PI {
        r -= two_pi;
    }
    if r < -PI {
        r += two_pi;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Deserialize)]
struct RawBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta: f64,
}

/// Rotated rectangle `(cx, cy, w, h, theta)`; `w` runs along the head direction.
///
/// Construction validates the extents, so every live value has positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct OrientedBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta: f64,
}

impl TryFrom<RawBox> for OrientedBox {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        OrientedBox::new(raw.cx, raw.cy, raw.w, raw.h, raw.theta)
    }
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        let finite = [cx, cy, w, h, theta].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidBox(format!(
                "non-finite parameters ({cx}, {cy}, {w}, {h}, {theta})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "extents must be positive, got w={w} h={h}"
            )));
        }
        Ok(Self {
            cx,
            cy,
            w,
            h,
            theta: normalize_angle(theta),
        })
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    /// Same box with a different heading.
    pub fn with_theta(&self, theta: f64) -> Self {
        Self {
            theta: normalize_angle(theta),
            ..*self
        }
    }

    /// Maps box-local coordinates (`u` along the head, `v` across) to the image.
    #[inline]
    pub fn local_to_image(&self, u: f64, v: f64) -> Point {
        let (s, c) = self.theta.sin_cos();
        Point::new(self.cx + u * c - v * s, self.cy + u * s + v * c)
    }

    #[inline]
    pub fn image_to_local(&self, p: Point) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let dx = p.x - self.cx;
        let dy = p.y - self.cy;
        (dx * c + dy * s, -dx * s + dy * c)
    }

    pub fn contains(&self, p: Point) -> bool {
        let (u, v) = self.image_to_local(p);
        u.abs() <= self.w / 2.0 && v.abs() <= self.h / 2.0
    }

    /// Corners in counter-clockwise order (positive signed area), starting
    /// at the front-left corner `(+w/2, +h/2)` in box-local coordinates.
    pub fn corners(&self) -> [Point; 4] {
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        [
            self.local_to_image(hw, hh),
            self.local_to_image(-hw, hh),
            self.local_to_image(-hw, -hh),
            self.local_to_image(hw, -hh),
        ]
    }

    /// Axis-aligned bounds `(min_x, min_y, max_x, max_y)`.
    pub fn aabb(&self) -> (f64, f64, f64, f64) {
        let c = self.corners();
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in c {
            b.0 = b.0.min(p.x);
            b.1 = b.1.min(p.y);
            b.2 = b.2.max(p.x);
            b.3 = b.3.max(p.y);
        }
        b
    }
}

/// Signed shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

#[inline]
fn cross(a: Point, b: Point, p: Point) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

fn segment_line_intersection(p: Point, q: Point, a: Point, b: Point) -> Point {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let t = dp / (dp - dq);
    Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// Sutherland–Hodgman clip of `subject` against the convex CCW polygon `clip`.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output: Vec<Point> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().unwrap();
        let mut prev_in = cross(a, b, prev) >= 0.0;
        for &cur in &input {
            let cur_in = cross(a, b, cur) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(prev, cur, a, b));
            }
            prev = cur;
            prev_in = cur_in;
        }
    }
    output
}

pub fn intersection_area(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let area = polygon_area(&clip_convex(&a.corners(), &b.corners())).abs();
    if area < AREA_EPS {
        0.0
    } else {
        area
    }
}

/// Intersection over union of two oriented boxes.
pub fn rotated_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    // Cheap reject on the circumscribed circles.
    let reach = (a.diagonal() + b.diagonal()) / 2.0;
    if a.center().dist(&b.center()) > reach {
        return 0.0;
    }
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    pub confidence: f64,
    pub frame_index: usize,
}

impl Detection {
    pub fn new(bbox: OrientedBox, confidence: f64, frame_index: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self {
            bbox,
            confidence,
            frame_index,
        })
    }
}

/// Confidence filtering followed by greedy rotated non-maximum suppression.
///
/// Equal confidences keep input order, so the lower index wins.
pub fn rotated_nms(dets: &[Detection], iou_thr: f64, conf_thr: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].confidence >= conf_thr)
        .collect();
    order.sort_by(|&i, &j| dets[j].confidence.total_cmp(&dets[i].confidence));

    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let cand = &dets[i];
        if kept
            .iter()
            .all(|k| rotated_iou(&k.bbox, &cand.bbox) <= iou_thr)
        {
            kept.push(*cand);
        }
    }
    kept
}

/// Rotation-normalised region of interest cut from a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub pixels: Image,
    pub source_box: OrientedBox,
    pub frame_index: usize,
}

#[derive(Serialize, Deserialize)]
struct CropSidecar {
    source_box: OrientedBox,
    frame_index: usize,
}

impl Crop {
    /// Writes `<stem>.png` plus a `<stem>.json` sidecar into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        self.pixels.save_png(&dir.join(format!("{stem}.png")))?;
        let sidecar = CropSidecar {
            source_box: self.source_box,
            frame_index: self.frame_index,
        };
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, serde_json::to_vec(&sidecar)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Crop> {
        let pixels = Image::load_png(&dir.join(format!("{stem}.png")))?;
        let path = dir.join(format!("{stem}.json"));
        let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let sidecar: CropSidecar = serde_json::from_slice(&raw)?;
        Ok(Crop {
            pixels,
            source_box: sidecar.source_box,
            frame_index: sidecar.frame_index,
        })
    }
}

/// Samples the interior of `bbox` into an `out_h x out_w` crop with the head
/// direction along +col. Samples falling outside the frame read as zero.
pub fn extract_normalized_crop(
    frame: &Image,
    bbox: &OrientedBox,
    frame_index: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Crop> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!(
            "crop size must be positive, got {out_h}x{out_w}"
        )));
    }
    let channels = frame.channels();
    let mut pixels = Image::new(out_h, out_w, channels);
    let sx = bbox.w() / out_w as f64;
    let sy = bbox.h() / out_h as f64;
    for r in 0..out_h {
        let v = (r as f64 + 0.5) * sy - bbox.h() / 2.0;
        for c in 0..out_w {
            let u = (c as f64 + 0.5) * sx - bbox.w() / 2.0;
            let p = bbox.local_to_image(u, v);
            for ch in 0..channels {
                pixels.set(r, c, ch, frame.sample_bilinear(p.x, p.y, ch));
            }
        }
    }
    Ok(Crop {
        pixels,
        source_box: *bbox,
        frame_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: Point, x: f64, y: f64) -> bool {
        (a.x - x).abs() < 1e-12 && (a.y - y).abs() < 1e-12
    }

    #[test]
    fn axis_aligned_corners() {
        let b = OrientedBox::new(0.0, 0.0, 4.0, 2.0, 0.0).unwrap();
        let c = b.corners();
        assert!(close(c[0], 2.0, 1.0));
        assert!(close(c[1], -2.0, 1.0));
        assert!(close(c[2], -2.0, -1.0));
        assert!(close(c[3], 2.0, -1.0));
        assert!(polygon_area(&c) > 0.0);
    }

    #[test]
    fn quarter_turn_corners_rotate_ccw() {
        let b = OrientedBox::new(0.0, 0.0, 4.0, 2.0, FRAC_PI_2).unwrap();
        let c = b.corners();
        // (x, y) -> (-y, x)
        assert!(close(c[0], -1.0, 2.0));
        assert!(close(c[1], -1.0, -2.0));
        assert!(close(c[2], 1.0, -2.0));
        assert!(close(c[3], 1.0, 2.0));
    }

    #[test]
    fn diamond_corner_distances() {
        let b = OrientedBox::new(5.0, 5.0, 2.0, 2.0, PI / 4.0).unwrap();
        let centre = b.center();
        let mut mean = Point::new(0.0, 0.0);
        for p in b.corners() {
            assert!((p.dist(&centre) - 2f64.sqrt()).abs() < 1e-12);
            mean.x += p.x / 4.0;
            mean.y += p.y / 4.0;
        }
        assert!(mean.dist(&centre) < 1e-9);
    }

    #[test]
    fn theta_is_normalised() {
        let b = OrientedBox::new(0.0, 0.0, 1.0, 1.0, PI).unwrap();
        assert_eq!(b.theta(), -PI);
        let b = OrientedBox::new(0.0, 0.0, 1.0, 1.0, 7.0 * PI / 2.0).unwrap();
        assert!((b.theta() + FRAC_PI_2).abs() < 1e-12);
        for k in -50..50 {
            let t = normalize_angle(k as f64 * 0.37);
            assert!((-PI..PI).contains(&t));
        }
    }

    #[test]
    fn degenerate_boxes_are_rejected() {
        assert!(OrientedBox::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(OrientedBox::new(0.0, 0.0, 1.0, -1.0, 0.0).is_err());
        assert!(OrientedBox::new(f64::NAN, 0.0, 1.0, 1.0, 0.0).is_err());
        let json = r#"{"cx":0,"cy":0,"w":0,"h":2,"theta":0}"#;
        assert!(serde_json::from_str::<OrientedBox>(json).is_err());
    }

    #[test]
    fn iou_basic_cases() {
        let a = OrientedBox::new(10.0, 10.0, 6.0, 3.0, 0.3).unwrap();
        assert!((rotated_iou(&a, &a) - 1.0).abs() < 1e-9);
        let far = OrientedBox::new(1010.0, 10.0, 2.0, 2.0, 0.0).unwrap();
        let near = OrientedBox::new(10.0, 10.0, 2.0, 2.0, 0.0).unwrap();
        assert_eq!(rotated_iou(&near, &far), 0.0);
    }

    #[test]
    fn iou_square_vs_diamond_is_octagon() {
        let a = OrientedBox::new(0.0, 0.0, 2.0, 2.0, 0.0).unwrap();
        let b = OrientedBox::new(0.0, 0.0, 2.0, 2.0, PI / 4.0).unwrap();
        let inter = 8.0 * 2f64.sqrt() - 8.0;
        assert!((intersection_area(&a, &b) - inter).abs() < 1e-12);
        let expected = inter / (8.0 - inter);
        assert!((rotated_iou(&a, &b) - expected).abs() < 1e-12);
        assert!((expected - 0.7071).abs() < 2e-3);
    }

    #[test]
    fn touching_boxes_have_zero_iou() {
        let a = OrientedBox::new(0.0, 0.0, 2.0, 2.0, 0.0).unwrap();
        let b = OrientedBox::new(2.0, 0.0, 2.0, 2.0, 0.0).unwrap();
        assert_eq!(rotated_iou(&a, &b), 0.0);
    }

    fn det(cx: f64, conf: f64) -> Detection {
        Detection::new(OrientedBox::new(cx, 0.0, 4.0, 2.0, 0.0).unwrap(), conf, 0).unwrap()
    }

    #[test]
    fn nms_single_and_duplicates() {
        let one = [det(0.0, 0.5)];
        assert_eq!(rotated_nms(&one, 0.28, 0.3), one.to_vec());
        let dup = [det(0.0, 0.8), det(0.0, 0.9)];
        let kept = rotated_nms(&dup, 0.28, 0.3);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.9);
        assert!(rotated_nms(&[], 0.5, 0.0).is_empty());
        assert!(rotated_nms(&[det(0.0, 0.2)], 0.5, 0.3).is_empty());
    }

    #[test]
    fn nms_tie_keeps_lower_index() {
        let mut a = det(0.0, 0.7);
        a.frame_index = 1;
        let mut b = det(0.1, 0.7);
        b.frame_index = 2;
        let kept = rotated_nms(&[a, b], 0.28, 0.0);
        assert_eq!(kept, vec![a]);
    }

    #[test]
    fn confidence_bounds() {
        let b = OrientedBox::new(0.0, 0.0, 1.0, 1.0, 0.0).unwrap();
        assert!(Detection::new(b, 1.2, 0).is_err());
        assert!(Detection::new(b, -0.1, 0).is_err());
    }

    fn gradient_frame() -> Image {
        Image::from_fn(30, 40, |r, c| ((r * 40 + c) as f32) / 1200.0)
    }

    #[test]
    fn identity_warp_reproduces_subimage() {
        let frame = gradient_frame();
        // Sub-image rows 5..15, cols 8..28.
        let b = OrientedBox::new(18.0, 10.0, 20.0, 10.0, 0.0).unwrap();
        let crop = extract_normalized_crop(&frame, &b, 3, 10, 20).unwrap();
        assert_eq!(crop.frame_index, 3);
        for r in 0..10 {
            for c in 0..20 {
                let d = (crop.pixels.get(r, c, 0) - frame.get(r + 5, c + 8, 0)).abs();
                assert!(d <= 1e-6, "({r},{c}) differs by {d}");
            }
        }
    }

    #[test]
    fn half_turn_warp_rotates_180() {
        let frame = gradient_frame();
        let b = OrientedBox::new(18.0, 10.0, 20.0, 10.0, PI).unwrap();
        let crop = extract_normalized_crop(&frame, &b, 0, 10, 20).unwrap();
        for r in 0..10 {
            for c in 0..20 {
                let want = frame.get(5 + 9 - r, 8 + 19 - c, 0);
                assert!((crop.pixels.get(r, c, 0) - want).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn quarter_turn_warp_matches_explicit_rotation() {
        let frame = gradient_frame();
        // Head along +y: the box spans cols cx-3..cx+3 (h=6) and rows cy-5..cy+5 (w=10).
        let (cx, cy) = (20usize, 15usize);
        let b = OrientedBox::new(cx as f64, cy as f64, 10.0, 6.0, FRAC_PI_2).unwrap();
        let crop = extract_normalized_crop(&frame, &b, 0, 6, 10).unwrap();
        for r in 0..6 {
            for c in 0..10 {
                // crop(r, c) <- image(row = cy - 5 + c, col = cx + 2 - r)
                let want = frame.get(cy - 5 + c, cx + 2 - r, 0);
                assert!((crop.pixels.get(r, c, 0) - want).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn crop_outside_frame_is_zero_padded() {
        let frame = Image::filled(10, 10, 1, 1.0);
        let b = OrientedBox::new(0.0, 5.0, 10.0, 4.0, 0.0).unwrap();
        let crop = extract_normalized_crop(&frame, &b, 0, 4, 10).unwrap();
        assert_eq!(crop.pixels.get(1, 0, 0), 0.0);
        assert_eq!(crop.pixels.get(1, 9, 0), 1.0);
    }

    #[test]
    fn crop_size_must_be_positive() {
        let frame = gradient_frame();
        let b = OrientedBox::new(10.0, 10.0, 4.0, 4.0, 0.0).unwrap();
        assert!(extract_normalized_crop(&frame, &b, 0, 0, 4).is_err());
        assert!(extract_normalized_crop(&frame, &b, 0, 4, 0).is_err());
    }

    #[test]
    fn crop_sidecar_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let frame = gradient_frame();
        let b = OrientedBox::new(10.0, 10.0, 8.0, 4.0, 0.2).unwrap();
        let crop = extract_normalized_crop(&frame, &b, 7, 4, 8).unwrap();
        crop.save(dir.path(), "c0").unwrap();
        let back = Crop::load(dir.path(), "c0").unwrap();
        assert_eq!(back.source_box, b);
        assert_eq!(back.frame_index, 7);
        let json = serde_json::to_value(b).unwrap();
        for key in ["cx", "cy", "w", "h", "theta"] {
            assert!(json.get(key).is_some());
        }
    }
}
