//! Fixed 2D rig: 27 bones (25 drawable parts + 2 virtual clavicles), 28
//! keypoints, 26 sampled joint angles. Geometry lives in math coordinates
//! (x right, y up, positive angles counter-clockwise); the renderer converts
//! to image rows. Joint angles are deviations from a rest pose baked into
//! per-bone fixed angles, so the all-zero pose is a natural standing figure.

use std::f64::consts::PI;

pub const J_TOTAL: usize = 28;
pub const J_BODY: usize = 14;
pub const N_ANGLES: usize = 26;
pub const N_BONES: usize = 27;
pub const N_PARTS: usize = 25;

// Keypoint indices.
pub const KP_PELVIS: usize = 0;
pub const KP_CHEST: usize = 1;
pub const KP_NECK: usize = 2;
pub const KP_HEAD: usize = 3;
pub const KP_L_SHOULDER: usize = 4;
pub const KP_L_ELBOW: usize = 5;
pub const KP_L_WRIST: usize = 6;
pub const KP_R_SHOULDER: usize = 7;
pub const KP_R_ELBOW: usize = 8;
pub const KP_R_WRIST: usize = 9;
pub const KP_L_KNEE: usize = 10;
pub const KP_L_ANKLE: usize = 11;
pub const KP_R_KNEE: usize = 12;
pub const KP_R_ANKLE: usize = 13;
pub const KP_L_PALM: usize = 14;
// 15..=20: left finger mid/tip x3; 21: right palm; 22..=27: right fingers.
pub const KP_R_PALM: usize = 21;

// Angle indices (deviations from rest).
pub const A_SPINE: usize = 0;
pub const A_NECK: usize = 1;
pub const A_L_SHOULDER: usize = 2;
pub const A_L_ELBOW: usize = 3;
pub const A_L_WRIST: usize = 4;
pub const A_L_HIP: usize = 5;
pub const A_L_KNEE: usize = 6;
pub const A_L_ANKLE: usize = 7; // no foot part: visually inert, kept for rig symmetry
pub const A_R_SHOULDER: usize = 8;
pub const A_R_ELBOW: usize = 9;
pub const A_R_WRIST: usize = 10;
pub const A_R_HIP: usize = 11;
pub const A_R_KNEE: usize = 12;
pub const A_R_ANKLE: usize = 13;
pub const A_L_FINGERS: usize = 14; // 14..=19: (prox, dist) x3
pub const A_R_FINGERS: usize = 20; // 20..=25

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    None,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy)]
pub struct Bone {
    pub name: &'static str,
    /// Parent bone index; None means the bone hangs off the root (pelvis).
    pub parent: Option<usize>,
    /// Keypoint written by this bone's endpoint.
    pub child_kp: usize,
    pub base_len: f64,
    pub base_width: f64,
    /// Index into joint_angles, or None for rigid bones.
    pub angle: Option<usize>,
    /// Rest orientation relative to the parent's cumulative angle.
    pub fixed: f64,
    /// Drawable part slot (palette index), or None for virtual bones.
    pub part: Option<usize>,
    pub side: Side,
    pub is_hand: bool,
}

pub const B_TORSO: usize = 0;
pub const B_NECK: usize = 1;
pub const B_HEAD: usize = 2;
pub const B_L_CLAV: usize = 3;
pub const B_L_UPPER: usize = 4;
pub const B_L_FORE: usize = 5;
pub const B_L_PALM: usize = 6;
pub const B_R_CLAV: usize = 13;
pub const B_R_UPPER: usize = 14;
pub const B_R_FORE: usize = 15;
pub const B_R_PALM: usize = 16;
pub const B_L_THIGH: usize = 23;
pub const B_L_SHIN: usize = 24;
pub const B_R_THIGH: usize = 25;
pub const B_R_SHIN: usize = 26;

/// Part indices (dense over drawable bones, used for palette + depth order).
pub const PART_HEAD: usize = 2;

const HALF_PI: f64 = PI / 2.0;

macro_rules! bone {
    ($name:expr, $parent:expr, $kp:expr, $len:expr, $w:expr, $angle:expr, $fixed:expr, $part:expr, $side:expr, $hand:expr) => {
        Bone {
            name: $name,
            parent: $parent,
            child_kp: $kp,
            base_len: $len,
            base_width: $w,
            angle: $angle,
            fixed: $fixed,
            part: $part,
            side: $side,
            is_hand: $hand,
        }
    };
}

/// The rig. Bone order is topological (parents precede children).
pub const BONES: [Bone; N_BONES] = [
    // 0 torso: pelvis -> chest, points along root rotation (up at rest)
    bone!("torso", None, KP_CHEST, 14.0, 4.4, Some(A_SPINE), 0.0, Some(0), Side::None, false),
    // 1 neck: chest -> neck
    bone!("neck", Some(B_TORSO), KP_NECK, 4.0, 1.9, Some(A_NECK), 0.0, Some(1), Side::None, false),
    // 2 head offset: neck -> head center (disc with its own radius; rides the neck angle)
    bone!("head", Some(B_NECK), KP_HEAD, 4.4, 0.0, None, 0.0, Some(PART_HEAD), Side::None, false),
    // 3 left clavicle (virtual): chest -> l_shoulder, fixed 90 deg CCW from spine
    bone!("l_clav", Some(B_TORSO), KP_L_SHOULDER, 4.6, 0.0, None, HALF_PI, None, Side::Left, false),
    // 4..12 left arm + hand
    bone!("l_upper", Some(B_L_CLAV), KP_L_ELBOW, 9.0, 2.6, Some(A_L_SHOULDER), HALF_PI, Some(3), Side::Left, false),
    bone!("l_fore", Some(B_L_UPPER), KP_L_WRIST, 8.0, 2.2, Some(A_L_ELBOW), 0.0, Some(4), Side::Left, false),
    bone!("l_palm", Some(B_L_FORE), KP_L_PALM, 3.4, 2.5, Some(A_L_WRIST), 0.0, Some(5), Side::Left, true),
    bone!("l_f0a", Some(B_L_PALM), 15, 2.5, 1.05, Some(A_L_FINGERS), -0.45, Some(6), Side::Left, true),
    bone!("l_f0b", Some(7), 16, 2.1, 0.95, Some(A_L_FINGERS + 1), 0.0, Some(7), Side::Left, true),
    bone!("l_f1a", Some(B_L_PALM), 17, 2.7, 1.05, Some(A_L_FINGERS + 2), 0.0, Some(8), Side::Left, true),
    bone!("l_f1b", Some(9), 18, 2.2, 0.95, Some(A_L_FINGERS + 3), 0.0, Some(9), Side::Left, true),
    bone!("l_f2a", Some(B_L_PALM), 19, 2.5, 1.05, Some(A_L_FINGERS + 4), 0.45, Some(10), Side::Left, true),
    bone!("l_f2b", Some(11), 20, 2.1, 0.95, Some(A_L_FINGERS + 5), 0.0, Some(11), Side::Left, true),
    // 13 right clavicle (virtual)
    bone!("r_clav", Some(B_TORSO), KP_R_SHOULDER, 4.6, 0.0, None, -HALF_PI, None, Side::Right, false),
    // 14..22 right arm + hand (fan angles mirrored)
    bone!("r_upper", Some(B_R_CLAV), KP_R_ELBOW, 9.0, 2.6, Some(A_R_SHOULDER), -HALF_PI, Some(12), Side::Right, false),
    bone!("r_fore", Some(B_R_UPPER), KP_R_WRIST, 8.0, 2.2, Some(A_R_ELBOW), 0.0, Some(13), Side::Right, false),
    bone!("r_palm", Some(B_R_FORE), KP_R_PALM, 3.4, 2.5, Some(A_R_WRIST), 0.0, Some(14), Side::Right, true),
    bone!("r_f0a", Some(B_R_PALM), 22, 2.5, 1.05, Some(A_R_FINGERS), 0.45, Some(15), Side::Right, true),
    bone!("r_f0b", Some(17), 23, 2.1, 0.95, Some(A_R_FINGERS + 1), 0.0, Some(16), Side::Right, true),
    bone!("r_f1a", Some(B_R_PALM), 24, 2.7, 1.05, Some(A_R_FINGERS + 2), 0.0, Some(17), Side::Right, true),
    bone!("r_f1b", Some(19), 25, 2.2, 0.95, Some(A_R_FINGERS + 3), 0.0, Some(18), Side::Right, true),
    bone!("r_f2a", Some(B_R_PALM), 26, 2.5, 1.05, Some(A_R_FINGERS + 4), -0.45, Some(19), Side::Right, true),
    bone!("r_f2b", Some(21), 27, 2.1, 0.95, Some(A_R_FINGERS + 5), 0.0, Some(20), Side::Right, true),
    // 23..26 legs (root children, rest pointing down with slight outward splay)
    bone!("l_thigh", None, KP_L_KNEE, 12.0, 3.4, Some(A_L_HIP), PI - 0.12, Some(21), Side::Left, false),
    bone!("l_shin", Some(B_L_THIGH), KP_L_ANKLE, 11.0, 2.7, Some(A_L_KNEE), 0.0, Some(22), Side::Left, false),
    bone!("r_thigh", None, KP_R_KNEE, 12.0, 3.4, Some(A_R_HIP), -(PI - 0.12), Some(23), Side::Right, false),
    bone!("r_shin", Some(B_R_THIGH), KP_R_ANKLE, 11.0, 2.7, Some(A_R_KNEE), 0.0, Some(24), Side::Right, false),
];

/// part index -> bone index.
pub fn part_bone(part: usize) -> usize {
    BONES
        .iter()
        .position(|b| b.part == Some(part))
        .expect("part index valid")
}

/// Base disc radius of the head part (scaled by head_radius_scale).
pub const HEAD_BASE_RADIUS: f64 = 4.8;

/// Single-chain forward kinematics: cumulative angle per link is root_rotation
/// plus the sum of all link angles so far; each link advances by its length
/// along the cumulative direction.
pub fn fk_chain(root: (f64, f64), root_rotation: f64, links: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(links.len());
    let mut pos = root;
    let mut cum = root_rotation;
    for &(len, angle) in links {
        cum += angle;
        pos = (pos.0 + len * cum.cos(), pos.1 + len * cum.sin());
        out.push(pos);
    }
    out
}

/// Per-bone world geometry after forward kinematics.
#[derive(Debug, Clone)]
pub struct BoneWorld {
    /// Segment endpoints in math coordinates.
    pub p0: (f64, f64),
    pub p1: (f64, f64),
    /// Capsule radius (half width), fully scaled.
    pub radius: f64,
    pub cum_angle: f64,
    pub length: f64,
}

/// Full-rig forward kinematics.
///
/// `len_mul`/`width_mul`: per-bone multipliers (identity scaling);
/// `hand_scale`, `head_scale`: extra multipliers applied to hand bones and
/// the head offset/disc respectively. Returns per-bone geometry plus the 28
/// keypoints (pelvis first).
pub fn forward_kinematics(
    root: (f64, f64),
    root_rotation: f64,
    angles: &[f64],
    len_mul: &[f64],
    width_mul: &[f64],
    hand_scale: f64,
    head_scale: f64,
) -> (Vec<BoneWorld>, Vec<(f64, f64)>) {
    assert_eq!(angles.len(), N_ANGLES);
    assert_eq!(len_mul.len(), N_BONES);
    assert_eq!(width_mul.len(), N_BONES);
    let mut bones_out: Vec<BoneWorld> = Vec::with_capacity(N_BONES);
    let mut kps = vec![(0.0f64, 0.0f64); J_TOTAL];
    kps[KP_PELVIS] = root;
    for (i, b) in BONES.iter().enumerate() {
        let (parent_pos, parent_cum) = match b.parent {
            None => (root, root_rotation),
            Some(p) => (bones_out[p].p1, bones_out[p].cum_angle),
        };
        let dev = b.angle.map(|a| angles[a]).unwrap_or(0.0);
        let cum = parent_cum + b.fixed + dev;
        let extra = if b.is_hand { hand_scale } else { 1.0 } * if i == B_HEAD { head_scale } else { 1.0 };
        let len = b.base_len * len_mul[i] * extra;
        let p1 = (parent_pos.0 + len * cum.cos(), parent_pos.1 + len * cum.sin());
        let radius = 0.5 * b.base_width * width_mul[i] * extra;
        kps[b.child_kp] = p1;
        bones_out.push(BoneWorld {
            p0: parent_pos,
            p1,
            radius,
            cum_angle: cum,
            length: len,
        });
    }
    (bones_out, kps)
}

/// Pose parameters recoverable from keypoints alone: cumulative angles for
/// root children (torso, thighs), deviations for everything below them.
/// Used by linear probes and the identity-transfer check; identical across
/// characters rendered under the same pose because bone directions are
/// length-invariant.
pub const N_RECOVERABLE: usize = 12;

pub fn recover_pose_params(kps: &[(f64, f64)]) -> [f64; N_RECOVERABLE] {
    let dir = |a: usize, b: usize| -> f64 {
        let dx = kps[b].0 - kps[a].0;
        let dy = kps[b].1 - kps[a].1;
        dy.atan2(dx)
    };
    let wrap = |x: f64| -> f64 {
        let mut v = x;
        while v > PI {
            v -= 2.0 * PI;
        }
        while v < -PI {
            v += 2.0 * PI;
        }
        v
    };
    let torso = dir(KP_PELVIS, KP_CHEST);
    let neck = wrap(dir(KP_CHEST, KP_NECK) - torso);
    // shoulder deviation: upper-arm cum minus (torso cum + clav fixed + upper fixed)
    let l_sh = wrap(dir(KP_L_SHOULDER, KP_L_ELBOW) - torso - PI);
    let r_sh = wrap(dir(KP_R_SHOULDER, KP_R_ELBOW) - torso + PI);
    let l_el = wrap(dir(KP_L_ELBOW, KP_L_WRIST) - dir(KP_L_SHOULDER, KP_L_ELBOW));
    let r_el = wrap(dir(KP_R_ELBOW, KP_R_WRIST) - dir(KP_R_SHOULDER, KP_R_ELBOW));
    let l_wr = wrap(dir(KP_L_WRIST, KP_L_PALM) - dir(KP_L_ELBOW, KP_L_WRIST));
    let r_wr = wrap(dir(KP_R_WRIST, KP_R_PALM) - dir(KP_R_ELBOW, KP_R_WRIST));
    let l_hip = dir(KP_PELVIS, KP_L_KNEE);
    let r_hip = dir(KP_PELVIS, KP_R_KNEE);
    let l_kn = wrap(dir(KP_L_KNEE, KP_L_ANKLE) - l_hip);
    let r_kn = wrap(dir(KP_R_KNEE, KP_R_ANKLE) - r_hip);
    [torso, neck, l_sh, l_el, l_wr, r_sh, r_el, r_wr, l_hip, l_kn, r_hip, r_kn]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_bone_chain_straight() {
        let pts = fk_chain((0.0, 0.0), 0.0, &[(1.0, 0.0), (1.0, 0.0)]);
        assert_eq!(pts[1], (2.0, 0.0));
    }

    #[test]
    fn two_bone_chain_quarter_turn() {
        // angles (pi/2, 0): both links point +y under x-right/y-up/CCW.
        let pts = fk_chain((0.0, 0.0), 0.0, &[(1.0, PI / 2.0), (1.0, 0.0)]);
        assert!((pts[1].0 - 0.0).abs() < 1e-12);
        assert!((pts[1].1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rig_is_topologically_ordered_and_consistent() {
        let mut parts_seen = std::collections::BTreeSet::new();
        let mut angles_seen = std::collections::BTreeSet::new();
        let mut kps_seen = std::collections::BTreeSet::new();
        for (i, b) in BONES.iter().enumerate() {
            if let Some(p) = b.parent {
                assert!(p < i, "bone {i} parent {p} must precede it");
            }
            if let Some(part) = b.part {
                assert!(parts_seen.insert(part), "part {part} duplicated");
                assert!(part < N_PARTS);
            }
            if let Some(a) = b.angle {
                assert!(angles_seen.insert(a), "angle {a} duplicated");
                assert!(a < N_ANGLES);
            }
            assert!(kps_seen.insert(b.child_kp), "keypoint {} duplicated", b.child_kp);
            assert!(b.child_kp < J_TOTAL && b.child_kp != KP_PELVIS);
        }
        assert_eq!(parts_seen.len(), N_PARTS);
        // every keypoint except the pelvis is written by exactly one bone
        assert_eq!(kps_seen.len(), J_TOTAL - 1);
        // ankles have angles but no bone consumes them past the shin (inert)
        assert!(angles_seen.contains(&A_L_ANKLE) == false && angles_seen.contains(&A_R_ANKLE) == false);
    }

    fn unit_muls() -> (Vec<f64>, Vec<f64>) {
        (vec![1.0; N_BONES], vec![1.0; N_BONES])
    }

    #[test]
    fn rest_pose_stands_upright() {
        let (lm, wm) = unit_muls();
        let (_, kps) = forward_kinematics((32.0, 26.0), PI / 2.0, &[0.0; N_ANGLES], &lm, &wm, 1.0, 1.0);
        // chest above pelvis, head above chest
        assert!(kps[KP_CHEST].1 > kps[KP_PELVIS].1 + 10.0);
        assert!(kps[KP_HEAD].1 > kps[KP_NECK].1);
        // shoulders split left/right of the spine
        assert!(kps[KP_L_SHOULDER].0 < 32.0 - 3.0);
        assert!(kps[KP_R_SHOULDER].0 > 32.0 + 3.0);
        // arms hang down, wrists below elbows below shoulders
        assert!(kps[KP_L_WRIST].1 < kps[KP_L_ELBOW].1 && kps[KP_L_ELBOW].1 < kps[KP_L_SHOULDER].1);
        assert!(kps[KP_R_WRIST].1 < kps[KP_R_ELBOW].1);
        // ankles below knees below pelvis
        assert!(kps[KP_L_ANKLE].1 < kps[KP_L_KNEE].1 && kps[KP_L_KNEE].1 < kps[KP_PELVIS].1);
        // fingers exist below palms
        assert!(kps[16].1 < kps[KP_L_PALM].1 + 1.0);
    }

    #[test]
    fn length_scaling_is_linear() {
        let (lm, wm) = unit_muls();
        let angles: Vec<f64> = (0..N_ANGLES).map(|i| 0.1 * (i as f64).sin()).collect();
        let (b1, _) = forward_kinematics((0.0, 0.0), 0.3, &angles, &lm, &wm, 1.0, 1.0);
        let lm2: Vec<f64> = lm.iter().map(|x| x * 2.0).collect();
        let (b2, _) = forward_kinematics((0.0, 0.0), 0.3, &angles, &lm2, &wm, 1.0, 1.0);
        for (a, b) in b1.iter().zip(b2.iter()) {
            let va = (a.p1.0 - a.p0.0, a.p1.1 - a.p0.1);
            let vb = (b.p1.0 - b.p0.0, b.p1.1 - b.p0.1);
            assert!((vb.0 - 2.0 * va.0).abs() < 1e-9);
            assert!((vb.1 - 2.0 * va.1).abs() < 1e-9);
        }
    }

    #[test]
    fn recovery_matches_fk_and_is_character_invariant() {
        let angles: Vec<f64> = (0..N_ANGLES).map(|i| 0.35 * ((i * 7 + 3) as f64).sin()).collect();
        let (lm, wm) = unit_muls();
        let (_, kp_a) = forward_kinematics((30.0, 25.0), PI / 2.0 + 0.1, &angles, &lm, &wm, 1.0, 1.0);
        let lm_b: Vec<f64> = (0..N_BONES).map(|i| 0.8 + 0.4 * (((i * 13 + 1) as f64).sin().abs())).collect();
        let (_, kp_b) = forward_kinematics((33.0, 27.5), PI / 2.0 + 0.1, &angles, &lm_b, &wm, 1.3, 0.8);
        let ra = recover_pose_params(&kp_a);
        let rb = recover_pose_params(&kp_b);
        for (x, y) in ra.iter().zip(rb.iter()) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
        // spot-check deviations against the sampled angles
        assert!((ra[1] - angles[A_NECK]).abs() < 1e-9);
        assert!((ra[2] - angles[A_L_SHOULDER]).abs() < 1e-9);
        assert!((ra[3] - angles[A_L_ELBOW]).abs() < 1e-9);
        assert!((ra[9] - angles[A_L_KNEE]).abs() < 1e-9);
        // torso cum = root_rotation + spine deviation
        assert!((ra[0] - (PI / 2.0 + 0.1 + angles[A_SPINE])).abs() < 1e-9);
    }
}
