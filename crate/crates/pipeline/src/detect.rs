//! Keypoint recovery from rendered or generated frames of the synthetic
//! characters, using the part-coded color palette.
//!
//! Stage 1 assigns each pixel to the nearest part color (tight tolerance, so
//! anti-aliased boundary pixels stay unassigned). Stage 2 estimates each
//! capsule part's axis from its pixels. Stage 3 rebuilds the skeleton in
//! topological order with the *exact* bone lengths from the character spec:
//! every joint is placed at its parent joint plus bone-length times the
//! estimated direction, so a partially occluded part (crossed hands) only
//! costs direction accuracy, never length. Parts with no pixels fall back to
//! the rig's rest orientation relative to their parent.

use ndarray::Array2;
use xum_core::{Frame, Scalar};
use xum_syndata::skeleton::{BONES, HEAD_BASE_RADIUS, J_TOTAL, KP_PELVIS, N_PARTS, PART_HEAD};
use xum_syndata::character::GLYPH_COLOR;
use xum_syndata::CharacterSpec;

/// Maximum RGB distance for a pixel to count as a part's interior. The
/// palette guarantees ≥ 0.22 separation between parts (and vs background and
/// glyph ink), so 0.10 rejects blends while tolerating generation noise.
const COLOR_TOL: f64 = 0.10;
/// Glyph ink matcher (eyes/mouth punched into the head disc).
const GLYPH_TOL: f64 = 0.08;
/// Below this many classified pixels the frame is treated as figure-free.
const MIN_FIGURE_PIXELS: usize = 10;
/// Classified interiors end ~0.27 px inside the capsule radius on average
/// (anti-aliased rim pixels fail the color tolerance), so axial extremes sit
/// radius − 0.27 beyond the segment endpoints.
const CAP_MARGIN: f64 = 0.27;

#[derive(Debug, Clone)]
pub struct Detection {
    /// (J_TOTAL, 2) keypoint estimates in image coordinates.
    pub keypoints: Array2<f64>,
    /// Per-joint flag: inside the canvas and supported by at least one
    /// adjacent part with classified pixels.
    pub visible: Vec<bool>,
}

fn color_dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Per-part pixel lists (pixel centers at integer coordinates), plus glyph
/// ink pixels for the head-centroid merge.
fn segment<S: Scalar>(frame: &Frame<S>, character: &CharacterSpec) -> (Vec<Vec<(f64, f64)>>, Vec<(f64, f64)>) {
    let (h, w) = (frame.height(), frame.width());
    let mut parts: Vec<Vec<(f64, f64)>> = vec![Vec::new(); N_PARTS];
    let mut glyphs: Vec<(f64, f64)> = Vec::new();
    let tol2 = COLOR_TOL * COLOR_TOL;
    let gtol2 = GLYPH_TOL * GLYPH_TOL;
    for y in 0..h {
        for x in 0..w {
            let px = [
                frame.pixels[[y, x, 0]].to_f(),
                frame.pixels[[y, x, 1]].to_f(),
                frame.pixels[[y, x, 2]].to_f(),
            ];
            let mut best = usize::MAX;
            let mut best_d = tol2;
            for (p, c) in character.colors.iter().enumerate() {
                let d = color_dist2(px, *c);
                if d < best_d {
                    best_d = d;
                    best = p;
                }
            }
            if best != usize::MAX {
                parts[best].push((x as f64, y as f64));
            } else if color_dist2(px, GLYPH_COLOR) < gtol2 {
                glyphs.push((x as f64, y as f64));
            }
        }
    }
    (parts, glyphs)
}

fn centroid(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    (sx / n, sy / n)
}

/// Dominant eigenvector of the 2×2 pixel covariance (unit, arbitrary sign).
fn principal_axis(pts: &[(f64, f64)], c: (f64, f64)) -> (f64, f64) {
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for &(x, y) in pts {
        let (dx, dy) = (x - c.0, y - c.1);
        xx += dx * dx;
        xy += dx * dy;
        yy += dy * dy;
    }
    let tr = xx + yy;
    let det = xx * yy - xy * xy;
    let lam = tr / 2.0 + ((tr * tr / 4.0 - det).max(0.0)).sqrt();
    // Eigenvector of [[xx, xy], [xy, yy]] for eigenvalue lam.
    let (vx, vy) = if xy.abs() > 1e-9 {
        (lam - yy, xy)
    } else if xx >= yy {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let n = (vx * vx + vy * vy).sqrt();
    if n < 1e-12 {
        (1.0, 0.0)
    } else {
        (vx / n, vy / n)
    }
}

struct PartEstimate {
    centroid: (f64, f64),
    axis: (f64, f64),
    /// Axial extremes (projection onto axis, relative to centroid) after
    /// removing the rounded-cap extension.
    lo: f64,
    hi: f64,
    count: usize,
}

fn estimate_part(pts: &[(f64, f64)], radius: f64) -> Option<PartEstimate> {
    if pts.is_empty() {
        return None;
    }
    let c = centroid(pts);
    let axis = principal_axis(pts, c);
    let cap = (radius - CAP_MARGIN).max(0.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        let s = (x - c.0) * axis.0 + (y - c.1) * axis.1;
        lo = lo.min(s);
        hi = hi.max(s);
    }
    Some(PartEstimate { centroid: c, axis, lo: lo + cap, hi: hi - cap, count: pts.len() })
}

/// Keypoint index at a bone's base: the parent bone's endpoint, or the pelvis
/// for root bones.
fn base_kp(bone: usize) -> usize {
    match BONES[bone].parent {
        None => KP_PELVIS,
        Some(p) => BONES[p].child_kp,
    }
}

/// Bone length/radius fully scaled by the character spec, in pixels.
fn bone_scale(character: &CharacterSpec, i: usize) -> (f64, f64) {
    let b = &BONES[i];
    let extra = if b.is_hand { character.hand_scale } else { 1.0 }
        * if b.part == Some(PART_HEAD) { character.head_radius_scale } else { 1.0 };
    (
        b.base_len * character.limb_lengths[i] * extra,
        0.5 * b.base_width * character.limb_widths[i] * extra,
    )
}

/// Rotation of math-coordinate angle `a` applied to an image-space unit
/// vector (the y-flip turns counter-clockwise into clockwise).
fn rotate_img(v: (f64, f64), a: f64) -> (f64, f64) {
    let (c, s) = (a.cos(), -a.sin());
    (v.0 * c - v.1 * s, v.0 * s + v.1 * c)
}

fn norm_dir(v: (f64, f64)) -> Option<(f64, f64)> {
    let n = (v.0 * v.0 + v.1 * v.1).sqrt();
    (n > 1e-9).then(|| (v.0 / n, v.1 / n))
}

/// Recover the 28 keypoints of a single rendered character. Deterministic;
/// requires the character spec for its color palette and bone geometry.
pub fn detect_keypoints_synthetic<S: Scalar>(frame: &Frame<S>, character: &CharacterSpec) -> Detection {
    let (parts, glyphs) = segment(frame, character);
    let total_pixels: usize = parts.iter().map(|p| p.len()).sum();
    let mut keypoints = Array2::<f64>::zeros((J_TOTAL, 2));
    let mut visible = vec![false; J_TOTAL];
    if total_pixels < MIN_FIGURE_PIXELS {
        return Detection { keypoints, visible };
    }

    let estimates: Vec<Option<PartEstimate>> = (0..N_PARTS)
        .map(|p| {
            let bone = BONES.iter().position(|b| b.part == Some(p)).expect("part has a bone");
            let (_, radius) = bone_scale(character, bone);
            estimate_part(&parts[p], radius)
        })
        .collect();

    // Pelvis bootstrap from the near endpoints of torso and thighs. The rig
    // keeps the figure upright (root rotation within ±0.3 of vertical), so
    // the chest end of the torso is always the smaller image y and the knee
    // ends of the thighs the larger.
    let mut pelvis_votes: Vec<((f64, f64), f64)> = Vec::new();
    for (bone, far_is_down) in [(0usize, false), (23, true), (25, true)] {
        let part = BONES[bone].part.expect("drawable");
        if let Some(est) = &estimates[part] {
            if est.count < 3 {
                continue;
            }
            let up = est.axis.1 < 0.0; // axis points toward smaller y
            let near_s = match (far_is_down, up) {
                (false, true) | (true, false) => est.lo,
                _ => est.hi,
            };
            let near = (est.centroid.0 + near_s * est.axis.0, est.centroid.1 + near_s * est.axis.1);
            pelvis_votes.push((near, (est.count.min(40)) as f64));
        }
    }
    if pelvis_votes.is_empty() {
        return Detection { keypoints, visible };
    }
    let wsum: f64 = pelvis_votes.iter().map(|v| v.1).sum();
    let pelvis = pelvis_votes
        .iter()
        .fold((0.0, 0.0), |a, (p, w)| (a.0 + p.0 * w / wsum, a.1 + p.1 * w / wsum));
    keypoints[[KP_PELVIS, 0]] = pelvis.0;
    keypoints[[KP_PELVIS, 1]] = pelvis.1;

    // Skeleton rebuild in topological bone order with exact bone lengths.
    let mut kp_pos = vec![None::<(f64, f64)>; J_TOTAL];
    kp_pos[KP_PELVIS] = Some(pelvis);
    let mut cum_dir = vec![(0.0f64, -1.0f64); BONES.len()];
    for (i, b) in BONES.iter().enumerate() {
        let parent_pos = kp_pos[base_kp(i)].expect("topological order");
        let parent_dir = match b.parent {
            Some(p) => cum_dir[p],
            // Root children hang off the unobserved root rotation; the torso
            // estimate is its best proxy (spine deviation is bounded small).
            None => {
                if i == 0 {
                    (0.0, -1.0)
                } else {
                    rotate_img(cum_dir[0], -BONES[0].fixed)
                }
            }
        };
        let rest_dir = rotate_img(parent_dir, b.fixed);
        let (len, _) = bone_scale(character, i);
        let est = b.part.and_then(|p| estimates[p].as_ref());

        if b.part == Some(PART_HEAD) {
            // The head is a disc at the bone's endpoint; merge nearby glyph
            // ink back into the blob so eye/mouth holes do not bias the
            // centroid.
            let head_radius = HEAD_BASE_RADIUS * character.head_radius_scale;
            let center = match est {
                Some(e) => {
                    let mut pts: Vec<(f64, f64)> = parts[PART_HEAD].clone();
                    for &g in &glyphs {
                        let d2 = (g.0 - e.centroid.0).powi(2) + (g.1 - e.centroid.1).powi(2);
                        if d2 < (1.5 * head_radius).powi(2) {
                            pts.push(g);
                        }
                    }
                    centroid(&pts)
                }
                None => (parent_pos.0 + len * rest_dir.0, parent_pos.1 + len * rest_dir.1),
            };
            kp_pos[b.child_kp] = Some(center);
            cum_dir[i] = est
                .and_then(|_| norm_dir((center.0 - parent_pos.0, center.1 - parent_pos.1)))
                .unwrap_or(parent_dir);
            continue;
        }

        let dir = match est {
            Some(e) if e.count >= 6 => {
                // Orient the axis away from the parent joint.
                let fwd = (e.centroid.0 - parent_pos.0) * e.axis.0
                    + (e.centroid.1 - parent_pos.1) * e.axis.1;
                let axis = if fwd >= 0.0 { e.axis } else { (-e.axis.0, -e.axis.1) };
                let far_s = if fwd >= 0.0 { e.hi } else { -e.lo };
                let far = (e.centroid.0 + far_s * axis.0, e.centroid.1 + far_s * axis.1);
                let to_far = (far.0 - parent_pos.0, far.1 - parent_pos.1);
                let reach = (to_far.0 * to_far.0 + to_far.1 * to_far.1).sqrt();
                if reach >= 0.5 * len {
                    norm_dir(to_far).unwrap_or(axis)
                } else {
                    axis
                }
            }
            Some(e) => {
                norm_dir((e.centroid.0 - parent_pos.0, e.centroid.1 - parent_pos.1)).unwrap_or(rest_dir)
            }
            None => rest_dir,
        };
        kp_pos[b.child_kp] = Some((parent_pos.0 + len * dir.0, parent_pos.1 + len * dir.1));
        cum_dir[i] = dir;
    }

    // Visibility: inside the canvas and at least one adjacent drawable part
    // has pixel support.
    let (h, w) = (frame.height() as f64, frame.width() as f64);
    let mut support = vec![false; J_TOTAL];
    for (i, b) in BONES.iter().enumerate() {
        let seen = b.part.map(|p| !parts[p].is_empty()).unwrap_or(false);
        if seen {
            support[b.child_kp] = true;
            support[base_kp(i)] = true;
        }
    }
    for j in 0..J_TOTAL {
        let p = kp_pos[j].unwrap_or((0.0, 0.0));
        keypoints[[j, 0]] = p.0;
        keypoints[[j, 1]] = p.1;
        let inside = p.0.round() >= 0.0 && p.0.round() <= w - 1.0 && p.1.round() >= 0.0 && p.1.round() <= h - 1.0;
        visible[j] = inside && support[j];
    }
    Detection { keypoints, visible }
}
