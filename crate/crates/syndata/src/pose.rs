//! Pose and expression sampling: Ornstein–Uhlenbeck random walks pulled
//! toward gesture target poses, with every per-step angle delta hard-clamped
//! to 0.3 rad so sequences stay temporally smooth.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use xum_core::{Error, RandomStream, Result};

use crate::skeleton::*;

/// Hard bound on per-step angle change (rad); the smoothness contract.
pub const MAX_STEP: f64 = 0.28;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PoseSpec {
    /// Root (pelvis) position in math coordinates (x right, y up), pixels.
    pub root_position: (f64, f64),
    pub root_rotation: f64,
    /// 26 joint deviations from the rest pose, radians.
    pub joint_angles: Vec<f64>,
    /// Painter's-algorithm order over the 25 drawable parts (later = on top).
    pub limb_depth_order: Vec<usize>,
}

impl PoseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.joint_angles.len() != N_ANGLES {
            return Err(Error::Data(format!(
                "pose expects {N_ANGLES} joint angles, got {}",
                self.joint_angles.len()
            )));
        }
        if !self
            .joint_angles
            .iter()
            .chain(std::iter::once(&self.root_rotation))
            .all(|a| a.is_finite() && (-PI..=PI).contains(a))
        {
            return Err(Error::Data("joint angles must lie in [-pi, pi]".into()));
        }
        let mut seen = vec![false; N_PARTS];
        if self.limb_depth_order.len() != N_PARTS {
            return Err(Error::Data("depth order must cover all parts".into()));
        }
        for &p in &self.limb_depth_order {
            if p >= N_PARTS || seen[p] {
                return Err(Error::Data("depth order is not a permutation".into()));
            }
            seen[p] = true;
        }
        Ok(())
    }

    pub fn rest(canvas: f64) -> Self {
        PoseSpec {
            root_position: (canvas / 2.0, canvas * 0.4),
            root_rotation: PI / 2.0,
            joint_angles: vec![0.0; N_ANGLES],
            limb_depth_order: default_depth_order(false),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ExpressionSpec {
    pub eye_open_left: f64,
    pub eye_open_right: f64,
    pub mouth_open: f64,
    pub brow_raise: f64,
}

impl ExpressionSpec {
    pub const DIM: usize = 4;

    pub fn neutral() -> Self {
        ExpressionSpec { eye_open_left: 0.6, eye_open_right: 0.6, mouth_open: 0.3, brow_raise: 0.3 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|v| (0.0..=1.0).contains(v)) {
            Ok(())
        } else {
            Err(Error::Data("expression params must lie in [0,1]".into()))
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.eye_open_left, self.eye_open_right, self.mouth_open, self.brow_raise]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        ExpressionSpec { eye_open_left: v[0], eye_open_right: v[1], mouth_open: v[2], brow_raise: v[3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gesture {
    Free,
    Wave,
    CrossedHands,
    FingerPoint,
    Crouch,
}

/// legs (shuffle-able), then torso/neck/head, then the back arm, then the
/// front arm — so hands can occlude the body, the face, and each other.
fn arm_parts(side_right: bool) -> [usize; 9] {
    let base = if side_right { B_R_UPPER } else { B_L_UPPER };
    let mut out = [0usize; 9];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = BONES[base + k].part.expect("arm bones are drawable");
    }
    out
}

pub fn default_depth_order(right_arm_on_top: bool) -> Vec<usize> {
    let mut order = Vec::with_capacity(N_PARTS);
    for b in [B_L_THIGH, B_L_SHIN, B_R_THIGH, B_R_SHIN, B_TORSO, B_NECK] {
        order.push(BONES[b].part.unwrap());
    }
    order.push(PART_HEAD);
    let (back, front) = if right_arm_on_top {
        (arm_parts(false), arm_parts(true))
    } else {
        (arm_parts(true), arm_parts(false))
    };
    order.extend_from_slice(&back);
    order.extend_from_slice(&front);
    order
}

/// Per-clip sampled depth order: legs shuffled among themselves, a coin flip
/// for which arm draws on top. Body below arms so crossed hands occlude it.
fn sample_depth_order(rng: &mut RandomStream) -> Vec<usize> {
    let mut order = default_depth_order(rng.bernoulli(0.5));
    rng.shuffle(&mut order[0..4]);
    order
}

struct JointLaw {
    target: f64,
    pull: f64,
    noise: f64,
    bound: f64,
}

fn angle_bound(a: usize) -> f64 {
    match a {
        A_SPINE => 0.45,
        A_NECK => 0.5,
        A_L_SHOULDER | A_R_SHOULDER => 2.72,
        A_L_ELBOW | A_R_ELBOW => 2.6,
        A_L_WRIST | A_R_WRIST => 1.2,
        A_L_HIP | A_R_HIP => 0.9,
        A_L_KNEE | A_R_KNEE => 2.3,
        A_L_ANKLE | A_R_ANKLE => 0.8,
        _ => 1.1, // fingers
    }
}

fn laws_for(gesture: Gesture, t: usize) -> Vec<JointLaw> {
    let mut laws: Vec<JointLaw> = (0..N_ANGLES)
        .map(|a| JointLaw {
            target: 0.0,
            pull: 0.10,
            noise: if a >= A_L_FINGERS { 0.12 } else { 0.08 },
            bound: angle_bound(a),
        })
        .collect();
    let mut fix = |a: usize, target: f64| {
        laws[a] = JointLaw { target, pull: 0.38, noise: 0.035, bound: angle_bound(a) };
    };
    match gesture {
        Gesture::Free => {}
        Gesture::Wave => {
            fix(A_R_SHOULDER, 2.55);
            // forearm and wrist oscillate around the raised arm
            fix(A_R_ELBOW, -0.35 + 0.55 * (2.0 * PI * t as f64 / 6.0).sin());
            fix(A_R_WRIST, 0.3 * (2.0 * PI * t as f64 / 3.0).sin());
        }
        Gesture::CrossedHands => {
            // Elbows swing outward and forearms fold in so both palms meet at
            // the body midline (verified numerically in tests): hands overlap.
            fix(A_L_SHOULDER, -0.9);
            fix(A_L_ELBOW, 1.98);
            fix(A_L_WRIST, 0.3);
            fix(A_R_SHOULDER, 0.9);
            fix(A_R_ELBOW, -1.98);
            fix(A_R_WRIST, -0.3);
        }
        Gesture::FingerPoint => {
            fix(A_R_SHOULDER, PI / 2.0);
            fix(A_R_ELBOW, 0.0);
            fix(A_R_WRIST, 0.0);
            // straighten the finger fan along the palm axis
            for (k, b) in [(0usize, -0.45f64), (2, 0.0), (4, 0.45)] {
                fix(A_R_FINGERS + k, -b);
                fix(A_R_FINGERS + k + 1, 0.0);
            }
        }
        Gesture::Crouch => {
            fix(A_SPINE, 0.3);
            fix(A_L_HIP, -0.55);
            fix(A_L_KNEE, 1.3);
            fix(A_R_HIP, 0.55);
            fix(A_R_KNEE, -1.3);
        }
    }
    laws
}

fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

pub fn sample_pose_sequence(rng: &mut RandomStream, t_len: usize, canvas: f64) -> Vec<PoseSpec> {
    let u = rng.uniform_f64();
    let gesture = if u < 0.30 {
        Gesture::Free
    } else if u < 0.48 {
        Gesture::Wave
    } else if u < 0.76 {
        Gesture::CrossedHands
    } else if u < 0.90 {
        Gesture::FingerPoint
    } else {
        Gesture::Crouch
    };
    sample_pose_sequence_gestured(rng, t_len, canvas, gesture)
}

pub fn sample_pose_sequence_gestured(
    rng: &mut RandomStream,
    t_len: usize,
    canvas: f64,
    gesture: Gesture,
) -> Vec<PoseSpec> {
    let depth = sample_depth_order(rng);
    let base_root = (
        canvas * 0.5 + rng.uniform_in(-4.5, 4.5),
        canvas * 0.40 + rng.uniform_in(-2.5, 2.5),
    );
    let crouch_drop = if gesture == Gesture::Crouch { 5.5 } else { 0.0 };
    // gesture clips start partially converged (mid-gesture), so short clips
    // still exhibit the gesture — crossed-hands clips overlap from early on
    let laws0 = laws_for(gesture, 0);
    let mut angles: Vec<f64> = laws0
        .iter()
        .map(|law| {
            let base = if law.pull > 0.3 { 0.8 * law.target } else { 0.0 };
            clamp(base + rng.normal_f64() * 0.12, -law.bound, law.bound)
        })
        .collect();
    let mut root = (base_root.0, base_root.1 - 0.8 * crouch_drop);
    let mut rot = PI / 2.0 + rng.uniform_in(-0.1, 0.1);
    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len {
        if t > 0 {
            let laws = laws_for(gesture, t);
            for (a, law) in laws.iter().enumerate() {
                let drift = law.pull * (law.target - angles[a]) + rng.normal_f64() * law.noise;
                angles[a] = clamp(angles[a] + clamp(drift, -MAX_STEP, MAX_STEP), -law.bound, law.bound);
            }
            let tx = base_root.0;
            let ty = base_root.1 - crouch_drop;
            root.0 += clamp(0.2 * (tx - root.0) + rng.normal_f64() * 0.45, -1.2, 1.2);
            root.1 += clamp(0.2 * (ty - root.1) + rng.normal_f64() * 0.45, -1.2, 1.2);
            rot += clamp(0.2 * (PI / 2.0 - rot) + rng.normal_f64() * 0.018, -0.05, 0.05);
            rot = clamp(rot, PI / 2.0 - 0.3, PI / 2.0 + 0.3);
        }
        out.push(PoseSpec {
            root_position: root,
            root_rotation: rot,
            joint_angles: angles.clone(),
            limb_depth_order: depth.clone(),
        });
    }
    out
}

pub fn sample_expression_sequence(rng: &mut RandomStream, t_len: usize) -> Vec<ExpressionSpec> {
    let mut state = [
        rng.uniform_f64(),
        rng.uniform_f64(),
        rng.uniform_f64(),
        rng.uniform_f64(),
    ];
    // eyes mostly track a shared openness target; mouth/brows free
    let targets = [
        rng.uniform_f64(),
        rng.uniform_f64(),
        rng.uniform_f64(),
        rng.uniform_f64(),
    ];
    let mut out = Vec::with_capacity(t_len);
    let mut blink = 0usize;
    for _ in 0..t_len {
        if blink == 0 && rng.uniform_f64() < 0.08 {
            blink = 2;
        }
        for k in 0..4 {
            let tgt = if blink > 0 && k < 2 { 0.0 } else { targets[k] };
            let d = 0.3 * (tgt - state[k]) + rng.normal_f64() * 0.07;
            state[k] = clamp(state[k] + clamp(d, -0.25, 0.25), 0.0, 1.0);
        }
        blink = blink.saturating_sub(1);
        out.push(ExpressionSpec {
            eye_open_left: state[0],
            eye_open_right: state[1],
            mouth_open: state[2],
            brow_raise: state[3],
        });
    }
    out
}
