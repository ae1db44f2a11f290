//! Capsule rasterizer and ground-truth map synthesis.
//!
//! Geometry comes from FK in math coordinates (y up) and is flipped to image
//! coordinates (row 0 at the top) here; everything stored on a sample is in
//! image coordinates. Parts are composited back-to-front in the pose's depth
//! order with 1-pixel analytic edge coverage, and pixel ownership (coverage
//! >= 0.5, later parts override) feeds occlusion-aware hand-normal maps.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use xum_core::{Frame, Scalar};

use crate::character::{CharacterSpec, GLYPH_COLOR};
use crate::pose::{ExpressionSpec, PoseSpec};
use crate::skeleton::*;

pub const DEFAULT_SIGMA: f64 = 2.0;
/// Gaussian stamps are truncated beyond this many sigmas (values < 4e-5).
const SIGMA_CUTOFF: f64 = 4.5;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CropBox {
    pub cx: f64,
    pub cy: f64,
    pub side: f64,
}

#[derive(Debug, Clone)]
pub struct MapsOnly<S: Scalar> {
    /// (J_total, 2) keypoints in image coordinates (x, y).
    pub keypoints: Array2<f64>,
    pub visible: Vec<bool>,
    /// (J_total, H, W) unnormalized Gaussian heatmaps; zero for invisible joints.
    pub heatmaps: Array3<S>,
    /// (H, W, 3) capsule normals over hand pixels, zero elsewhere.
    pub normals: Array3<S>,
    /// (H, W) 1.0 where a hand part owns the pixel.
    pub normal_mask: Array2<S>,
}

#[derive(Debug, Clone)]
pub struct RenderedSample<S: Scalar> {
    pub frame: Frame<S>,
    pub maps: MapsOnly<S>,
    pub face_box: CropBox,
    pub lh_box: CropBox,
    pub rh_box: CropBox,
    pub expression: ExpressionSpec,
    /// True when left- and right-hand parts both painted some common pixel.
    pub hand_overlap: bool,
}

#[derive(Debug, Clone, Copy)]
struct PartGeom {
    p0: (f64, f64),
    p1: (f64, f64),
    radius: f64,
    is_hand: bool,
    side: Side,
}

fn to_img(p: (f64, f64), h: usize) -> (f64, f64) {
    (p.0, (h as f64 - 1.0) - p.1)
}

/// Squared-distance helper: closest point parameter on segment [a,b].
fn seg_closest(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let l2 = dx * dx + dy * dy;
    let t = if l2 <= 1e-12 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / l2).clamp(0.0, 1.0)
    };
    (a.0 + t * dx, a.1 + t * dy)
}

/// Unit capsule normal at pixel p owned by the capsule (a, b, w): in-plane
/// component (v/w) where v is the offset from the axis, out-of-plane
/// component sqrt(1-(|v|/w)^2). On the axis this is exactly (0,0,1).
pub fn capsule_normal(p: (f64, f64), a: (f64, f64), b: (f64, f64), w: f64) -> [f64; 3] {
    let c = seg_closest(p, a, b);
    let v = (p.0 - c.0, p.1 - c.1);
    let r = (v.0 * v.0 + v.1 * v.1).sqrt();
    let ratio = (r / w).min(1.0);
    let (nx, ny) = if r <= 1e-12 { (0.0, 0.0) } else { (v.0 / w, v.1 / w) };
    [nx, ny, (1.0 - ratio * ratio).max(0.0).sqrt()]
}

/// Per-part world->image geometry. Index = part id.
fn part_geometry(character: &CharacterSpec, pose: &PoseSpec, h: usize) -> (Vec<PartGeom>, Vec<(f64, f64)>, f64, (f64, f64)) {
    let (bones, kps) = forward_kinematics(
        pose.root_position,
        pose.root_rotation,
        &pose.joint_angles,
        &character.limb_lengths,
        &character.limb_widths,
        character.hand_scale,
        character.head_radius_scale,
    );
    let head_radius = HEAD_BASE_RADIUS * character.head_radius_scale;
    let mut geoms = vec![
        PartGeom { p0: (0.0, 0.0), p1: (0.0, 0.0), radius: 0.0, is_hand: false, side: Side::None };
        N_PARTS
    ];
    for (i, b) in BONES.iter().enumerate() {
        let Some(part) = b.part else { continue };
        let g = &bones[i];
        let (p0, p1, radius) = if part == PART_HEAD {
            let c = to_img(g.p1, h);
            (c, c, head_radius)
        } else {
            (to_img(g.p0, h), to_img(g.p1, h), g.radius)
        };
        geoms[part] = PartGeom { p0, p1, radius, is_hand: b.is_hand, side: b.side };
    }
    let kps_img: Vec<(f64, f64)> = kps.iter().map(|&p| to_img(p, h)).collect();
    // head "up" direction in image coordinates (for glyph placement)
    let neck_cum = bones[B_HEAD].cum_angle;
    let head_up = (neck_cum.cos(), -neck_cum.sin());
    (geoms, kps_img, head_radius, head_up)
}

struct Raster {
    w: usize,
    h: usize,
    color: Option<Vec<f64>>, // h*w*3
    owner: Vec<u8>,          // part id, 255 = background
    hand_bits: Vec<u8>,      // bit0: left hand painted, bit1: right
}

const NO_OWNER: u8 = 255;

impl Raster {
    fn new(w: usize, h: usize, with_color: bool) -> Self {
        Raster {
            w,
            h,
            color: with_color.then(|| vec![0.0; w * h * 3]),
            owner: vec![NO_OWNER; w * h],
            hand_bits: vec![0; w * h],
        }
    }

    /// Composite one capsule; `owner_part` claims pixels with coverage >= 0.5.
    fn draw_capsule(
        &mut self,
        a: (f64, f64),
        b: (f64, f64),
        radius: f64,
        color: Option<[f64; 3]>,
        owner_part: Option<u8>,
        hand_bit: u8,
    ) {
        if radius <= 0.0 {
            return;
        }
        let pad = radius + 1.0;
        let x0 = (a.0.min(b.0) - pad).floor().max(0.0) as usize;
        let x1 = (a.0.max(b.0) + pad).ceil().min(self.w as f64 - 1.0) as usize;
        let y0 = (a.1.min(b.1) - pad).floor().max(0.0) as usize;
        let y1 = (a.1.max(b.1) + pad).ceil().min(self.h as f64 - 1.0) as usize;
        if x0 > x1 || y0 > y1 || (a.1.max(b.1) + pad) < 0.0 || (a.0.max(b.0) + pad) < 0.0 {
            return;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = (x as f64, y as f64);
                let c = seg_closest(p, a, b);
                let d = ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt();
                let alpha = (radius + 0.5 - d).clamp(0.0, 1.0);
                if alpha <= 0.0 {
                    continue;
                }
                let idx = y * self.w + x;
                if let (Some(buf), Some(col)) = (self.color.as_mut(), color) {
                    for ch in 0..3 {
                        let px = &mut buf[idx * 3 + ch];
                        *px = alpha * col[ch] + (1.0 - alpha) * *px;
                    }
                }
                if alpha >= 0.5 {
                    if let Some(part) = owner_part {
                        self.owner[idx] = part;
                    }
                    self.hand_bits[idx] |= hand_bit;
                }
            }
        }
    }
}

fn draw_glyphs(r: &mut Raster, center: (f64, f64), radius: f64, up: (f64, f64), e: &ExpressionSpec) {
    let right = (-up.1, up.0); // up rotated 90deg in image space
    let at = |u: f64, v: f64| (center.0 + u * up.0 + v * right.0, center.1 + u * up.1 + v * right.1);
    let seg = |r: &mut Raster, c: (f64, f64), half: f64, rad: f64| {
        let a = (c.0 - half * right.0, c.1 - half * right.1);
        let b = (c.0 + half * right.0, c.1 + half * right.1);
        r.draw_capsule(a, b, rad.max(0.38), Some(GLYPH_COLOR), None, 0);
    };
    // eyes (left eye on the -right side), mouth, brows
    seg(r, at(0.22 * radius, -0.34 * radius), 0.13 * radius, (0.045 + 0.17 * e.eye_open_left) * radius);
    seg(r, at(0.22 * radius, 0.34 * radius), 0.13 * radius, (0.045 + 0.17 * e.eye_open_right) * radius);
    seg(r, at(-0.40 * radius, 0.0), 0.26 * radius, (0.045 + 0.19 * e.mouth_open) * radius);
    let brow_u = (0.50 + 0.22 * e.brow_raise) * radius;
    seg(r, at(brow_u, -0.34 * radius), 0.15 * radius, 0.05 * radius);
    seg(r, at(brow_u, 0.34 * radius), 0.15 * radius, 0.05 * radius);
}

fn stamp_heatmaps<S: Scalar>(kps: &[(f64, f64)], visible: &[bool], w: usize, h: usize, sigma: f64) -> Array3<S> {
    let mut hm = Array3::<S>::zeros((kps.len(), h, w));
    let reach = SIGMA_CUTOFF * sigma;
    for (j, (&(kx, ky), &vis)) in kps.iter().zip(visible).enumerate() {
        if !vis {
            continue;
        }
        let x0 = ((kx - reach).ceil()).max(0.0) as usize;
        let x1 = ((kx + reach).floor()).min(w as f64 - 1.0) as usize;
        let y0 = ((ky - reach).ceil()).max(0.0) as usize;
        let y1 = ((ky + reach).floor()).min(h as f64 - 1.0) as usize;
        if (kx - reach) > w as f64 - 1.0 || (ky - reach) > h as f64 - 1.0 || (kx + reach) < 0.0 || (ky + reach) < 0.0 {
            continue;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (x as f64 - kx).powi(2) + (y as f64 - ky).powi(2);
                if d2 <= reach * reach {
                    hm[(j, y, x)] = S::from_f((-d2 / (2.0 * sigma * sigma)).exp());
                }
            }
        }
    }
    hm
}

fn build_maps<S: Scalar>(
    geoms: &[PartGeom],
    raster: &Raster,
    kps_img: &[(f64, f64)],
    sigma: f64,
) -> MapsOnly<S> {
    let (w, h) = (raster.w, raster.h);
    let visible: Vec<bool> = kps_img
        .iter()
        .map(|&(x, y)| {
            let (rx, ry) = (x.round(), y.round());
            rx >= 0.0 && rx <= w as f64 - 1.0 && ry >= 0.0 && ry <= h as f64 - 1.0
        })
        .collect();
    let heatmaps = stamp_heatmaps::<S>(kps_img, &visible, w, h, sigma);
    let mut normals = Array3::<S>::zeros((h, w, 3));
    let mut mask = Array2::<S>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let part = raster.owner[y * w + x];
            if part == NO_OWNER {
                continue;
            }
            let g = &geoms[part as usize];
            if !g.is_hand {
                continue;
            }
            let n = capsule_normal((x as f64, y as f64), g.p0, g.p1, g.radius);
            for (ch, v) in n.iter().enumerate() {
                normals[(y, x, ch)] = S::from_f(*v);
            }
            mask[(y, x)] = S::one();
        }
    }
    let mut keypoints = Array2::<f64>::zeros((kps_img.len(), 2));
    for (j, &(x, y)) in kps_img.iter().enumerate() {
        keypoints[(j, 0)] = x;
        keypoints[(j, 1)] = y;
    }
    MapsOnly { keypoints, visible, heatmaps, normals, normal_mask: mask }
}

fn rasterize(
    geoms: &[PartGeom],
    order: &[usize],
    character: &CharacterSpec,
    expression: Option<&ExpressionSpec>,
    head_up: (f64, f64),
    w: usize,
    h: usize,
    with_color: bool,
) -> Raster {
    let mut r = Raster::new(w, h, with_color);
    for &part in order {
        let g = &geoms[part];
        let color = with_color.then(|| character.colors[part]);
        let hand_bit = match (g.is_hand, g.side) {
            (true, Side::Left) => 1,
            (true, Side::Right) => 2,
            _ => 0,
        };
        r.draw_capsule(g.p0, g.p1, g.radius, color, Some(part as u8), hand_bit);
        if part == PART_HEAD {
            if let Some(e) = expression.filter(|_| with_color) {
                draw_glyphs(&mut r, g.p0, g.radius, head_up, e);
            }
        }
    }
    r
}

fn hand_reach(character: &CharacterSpec, right: bool) -> f64 {
    let (palm, f1a, f1b) = if right { (B_R_PALM, 19, 20) } else { (B_L_PALM, 9, 10) };
    let lm = &character.limb_lengths;
    character.hand_scale
        * (BONES[palm].base_len * lm[palm]
            + BONES[f1a].base_len * lm[f1a]
            + BONES[f1b].base_len * lm[f1b]
            + 0.5 * BONES[f1b].base_width * character.limb_widths[f1b])
}

/// Render with an explicit heatmap sigma (the `Config.heatmap_sigma` path).
pub fn render_with<S: Scalar>(
    character: &CharacterSpec,
    pose: &PoseSpec,
    expression: &ExpressionSpec,
    canvas_size: usize,
    sigma: f64,
) -> RenderedSample<S> {
    let (w, h) = (canvas_size, canvas_size);
    let (geoms, kps_img, head_radius, head_up) = part_geometry(character, pose, h);
    let raster = rasterize(&geoms, &pose.limb_depth_order, character, Some(expression), head_up, w, h, true);
    let maps = build_maps::<S>(&geoms, &raster, &kps_img, sigma);
    let buf = raster.color.as_ref().expect("color pass");
    let mut frame = Frame::<S>::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                frame.pixels[(y, x, ch)] = S::from_f(buf[(y * w + x) * 3 + ch]);
            }
        }
    }
    frame.quantize();
    let hand_overlap = raster.hand_bits.iter().any(|&b| b == 3);
    let face_box = CropBox {
        cx: kps_img[KP_HEAD].0,
        cy: kps_img[KP_HEAD].1,
        side: 3.6 * head_radius,
    };
    let hand_box = |wrist: usize, right: bool| {
        let reach = hand_reach(character, right);
        CropBox { cx: kps_img[wrist].0, cy: kps_img[wrist].1, side: 2.0 * reach + 3.0 }
    };
    RenderedSample {
        frame,
        maps,
        face_box,
        lh_box: hand_box(KP_L_WRIST, false),
        rh_box: hand_box(KP_R_WRIST, true),
        expression: *expression,
        hand_overlap,
    }
}

/// Default-sigma render matching `Config::default().heatmap_sigma`.
pub fn render<S: Scalar>(
    character: &CharacterSpec,
    pose: &PoseSpec,
    expression: &ExpressionSpec,
    canvas_size: usize,
) -> RenderedSample<S> {
    render_with(character, pose, expression, canvas_size, DEFAULT_SIGMA)
}

/// True if any frame of the clip paints some pixel with parts of both hands
/// (the hand-over-hand occlusion criterion for the sampler's gesture quota).
pub fn poses_have_hand_overlap(character: &CharacterSpec, poses: &[PoseSpec], canvas_size: usize) -> bool {
    poses.iter().any(|pose| {
        let (geoms, _, _, head_up) = part_geometry(character, pose, canvas_size);
        let r = rasterize(&geoms, &pose.limb_depth_order, character, None, head_up, canvas_size, canvas_size, false);
        r.hand_bits.iter().any(|&b| b == 3)
    })
}

/// Supervision maps only (no color buffer, no glyphs): used to regenerate
/// ground truth from specs without touching stored frames.
pub fn render_maps<S: Scalar>(character: &CharacterSpec, pose: &PoseSpec, canvas_size: usize, sigma: f64) -> MapsOnly<S> {
    let (w, h) = (canvas_size, canvas_size);
    let (geoms, kps_img, _, head_up) = part_geometry(character, pose, h);
    let raster = rasterize(&geoms, &pose.limb_depth_order, character, None, head_up, w, h, false);
    build_maps::<S>(&geoms, &raster, &kps_img, sigma)
}

/// Bilinear square-crop resample with zero padding outside the canvas.
pub fn crop_resize<S: Scalar>(frame: &Frame<S>, bx: &CropBox, out_size: usize) -> Frame<S> {
    let (h, w) = (frame.height(), frame.width());
    let mut out = Frame::<S>::zeros(out_size, out_size);
    let step = bx.side / out_size as f64;
    let x_start = bx.cx - bx.side / 2.0;
    let y_start = bx.cy - bx.side / 2.0;
    let sample = |y: f64, x: f64, ch: usize| -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let mut acc = 0.0;
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                let (px, py) = (x0 + dx, y0 + dy);
                if px >= 0.0 && px <= w as f64 - 1.0 && py >= 0.0 && py <= h as f64 - 1.0 {
                    acc += wy * wx * frame.pixels[(py as usize, px as usize, ch)].to_f();
                }
            }
        }
        acc
    };
    // pixel i covers [i-0.5, i+0.5]: output center oy sits at y_start+(oy+0.5)*step
    for oy in 0..out_size {
        let sy = y_start + (oy as f64 + 0.5) * step;
        for ox in 0..out_size {
            let sx = x_start + (ox as f64 + 0.5) * step;
            for ch in 0..3 {
                out.pixels[(oy, ox, ch)] = S::from_f(sample(sy, sx, ch));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::character::sample_character;
    use crate::pose::{sample_expression_sequence, sample_pose_sequence, sample_pose_sequence_gestured, Gesture};
    use xum_core::rng_fork;

    type R = f64;

    fn any_sample(seed: u64) -> RenderedSample<R> {
        let mut rng = rng_fork(seed, "render-test");
        let ch = sample_character(&mut rng);
        let poses = sample_pose_sequence(&mut rng, 3, 64.0);
        let exprs = sample_expression_sequence(&mut rng, 3);
        render::<R>(&ch, &poses[2], &exprs[2], 64)
    }

    #[test]
    fn heatmap_peak_is_one_at_integral_keypoint() {
        let hm = stamp_heatmaps::<R>(&[(20.0, 31.0)], &[true], 64, 64, 2.0);
        assert_eq!(hm[(0, 31, 20)], 1.0);
        assert!(hm[(0, 31, 21)] < 1.0);
    }

    #[test]
    fn axis_pixel_normal_is_unit_z() {
        let n = capsule_normal((5.0, 3.0), (1.0, 3.0), (9.0, 3.0), 1.3);
        assert_eq!(n, [0.0, 0.0, 1.0]);
        // off-axis pixels keep unit norm
        let n2 = capsule_normal((5.0, 3.9), (1.0, 3.0), (9.0, 3.0), 1.3);
        let len = (n2[0] * n2[0] + n2[1] * n2[1] + n2[2] * n2[2]).sqrt();
        assert!((len - 1.0).abs() < 1e-12);
        assert!(n2[1] > 0.0);
    }

    #[test]
    fn rendered_maps_satisfy_contracts() {
        for seed in 0..6u64 {
            let s = any_sample(seed);
            let (h, w) = (64usize, 64usize);
            // heatmap argmax at the rounded keypoint for visible joints
            for j in 0..J_TOTAL {
                let channel = s.maps.heatmaps.index_axis(ndarray::Axis(0), j);
                if !s.maps.visible[j] {
                    assert!(channel.iter().all(|&v| v == 0.0), "invisible joint {j} must be blank");
                    continue;
                }
                let mut best = (0usize, 0usize);
                let mut bv = -1.0;
                for y in 0..h {
                    for x in 0..w {
                        if channel[(y, x)] > bv {
                            bv = channel[(y, x)];
                            best = (y, x);
                        }
                    }
                }
                let kx = s.maps.keypoints[(j, 0)].round();
                let ky = s.maps.keypoints[(j, 1)].round();
                assert_eq!(best, (ky as usize, kx as usize), "joint {j}");
            }
            // normals: unit inside mask, exact zero outside
            for y in 0..h {
                for x in 0..w {
                    let n = [
                        s.maps.normals[(y, x, 0)],
                        s.maps.normals[(y, x, 1)],
                        s.maps.normals[(y, x, 2)],
                    ];
                    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                    if s.maps.normal_mask[(y, x)] == 1.0 {
                        assert!((len - 1.0).abs() < 1e-4);
                    } else {
                        assert_eq!(n, [0.0, 0.0, 0.0]);
                    }
                }
            }
            // frame pixels quantized into [0,1]
            assert!(s.frame.pixels.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn off_canvas_keypoint_marked_invisible_with_blank_heatmap() {
        let mut rng = rng_fork(40, "offcanvas");
        let ch = sample_character(&mut rng);
        let mut pose = sample_pose_sequence(&mut rng, 1, 64.0).remove(0);
        // raise the figure so the head leaves the canvas top but the pelvis stays
        pose.root_position = (32.0, 50.0);
        let e = ExpressionSpec::neutral();
        let s = render::<R>(&ch, &pose, &e, 64);
        assert!(!s.maps.visible[KP_HEAD]);
        assert!(s
            .maps
            .heatmaps
            .index_axis(ndarray::Axis(0), KP_HEAD)
            .iter()
            .all(|&v| v == 0.0));
        // pelvis stays on canvas
        assert!(s.maps.visible[KP_PELVIS]);
    }

    #[test]
    fn crossed_hands_render_with_hand_overlap() {
        let mut rng = rng_fork(3, "overlap");
        let ch = sample_character(&mut rng);
        let poses = sample_pose_sequence_gestured(&mut rng, 40, 64.0, Gesture::CrossedHands);
        let s = render::<R>(&ch, &poses[39], &ExpressionSpec::neutral(), 64);
        assert!(s.hand_overlap);
        // the hand mask must be non-trivial
        assert!(s.maps.normal_mask.iter().filter(|&&m| m == 1.0).count() > 20);
    }

    #[test]
    fn expressions_change_only_head_glyphs() {
        let mut rng = rng_fork(8, "glyph");
        let ch = sample_character(&mut rng);
        let pose = sample_pose_sequence(&mut rng, 1, 64.0).remove(0);
        let e1 = ExpressionSpec { eye_open_left: 0.0, eye_open_right: 0.0, mouth_open: 0.0, brow_raise: 0.0 };
        let e2 = ExpressionSpec { eye_open_left: 1.0, eye_open_right: 1.0, mouth_open: 1.0, brow_raise: 1.0 };
        let a = render::<R>(&ch, &pose, &e1, 64);
        let b = render::<R>(&ch, &pose, &e2, 64);
        assert_ne!(a.frame.pixels, b.frame.pixels);
        // keypoints and maps identical (glyphs do not move geometry)
        assert_eq!(a.maps.keypoints, b.maps.keypoints);
        assert_eq!(a.maps.heatmaps, b.maps.heatmaps);
    }

    #[test]
    fn maps_only_path_matches_full_render() {
        let mut rng = rng_fork(21, "maps");
        let ch = sample_character(&mut rng);
        let pose = sample_pose_sequence(&mut rng, 1, 64.0).remove(0);
        let full = render::<R>(&ch, &pose, &ExpressionSpec::neutral(), 64);
        let maps = render_maps::<R>(&ch, &pose, 64, DEFAULT_SIGMA);
        assert_eq!(full.maps.heatmaps, maps.heatmaps);
        assert_eq!(full.maps.normals, maps.normals);
        assert_eq!(full.maps.normal_mask, maps.normal_mask);
        assert_eq!(full.maps.visible, maps.visible);
    }

    #[test]
    fn crop_resize_identity_box_is_lossless_at_same_size() {
        let s = any_sample(2);
        let bx = CropBox { cx: 31.5, cy: 31.5, side: 64.0 };
        let c = crop_resize(&s.frame, &bx, 64);
        let mut max_err = 0.0f64;
        for (a, b) in c.pixels.iter().zip(s.frame.pixels.iter()) {
            max_err = max_err.max((a - b).abs());
        }
        assert!(max_err < 1e-9, "identity crop should reproduce the frame, err {max_err}");
    }

    #[test]
    fn render_is_deterministic() {
        let a = any_sample(5);
        let b = any_sample(5);
        assert_eq!(a.frame.pixels, b.frame.pixels);
        assert_eq!(a.maps.keypoints, b.maps.keypoints);
    }
}
