//! Training-pair assembly.
//!
//! `same_identity`: reference, drive, and target all come from one character;
//! encoder inputs are appearance-augmented copies of the target frames so the
//! motion encoders cannot shortcut through appearance.
//! `cross_identity`: drive frames come from character A, reference + targets
//! from character B under the *same* pose/expression stream; supervision maps
//! are always rendered in the reference (target) character's geometry.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use xum_core::{Error, Frame, RandomStream, Result, Scalar};

use crate::augment::{apply_augment, map_point, sample_augment, AugmentParams};
use crate::character::{sample_character, CharacterSpec};
use crate::pose::{
    sample_expression_sequence, sample_pose_sequence, ExpressionSpec, PoseSpec,
};
use crate::render::{render_maps, render_with, CropBox, MapsOnly};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    SameIdentity,
    CrossIdentity,
}

#[derive(Debug, Clone)]
pub struct TrainingSample<S: Scalar> {
    pub mode: SampleMode,
    pub canvas: usize,
    pub sigma: f64,
    pub char_ref: CharacterSpec,
    pub char_drive: CharacterSpec,
    pub ref_pose: PoseSpec,
    pub ref_expression: ExpressionSpec,
    pub poses: Vec<PoseSpec>,
    pub expressions: Vec<ExpressionSpec>,
    pub augment: Option<AugmentParams>,
    pub ref_frame: Frame<S>,
    pub drive_frames: Vec<Frame<S>>,
    pub face_boxes: Vec<CropBox>,
    pub lh_boxes: Vec<CropBox>,
    pub rh_boxes: Vec<CropBox>,
    pub target_frames: Vec<Frame<S>>,
    /// (J_total, 2) image-coordinate keypoints of the target frames.
    pub target_keypoints: Vec<Array2<f64>>,
    pub target_visible: Vec<Vec<bool>>,
}

impl<S: Scalar> TrainingSample<S> {
    pub fn clip_len(&self) -> usize {
        self.drive_frames.len()
    }

    /// Ground-truth heatmaps/normals for frame `t`, in the reference
    /// character's geometry (regenerated from specs, bit-stable).
    pub fn supervision_maps(&self, t: usize) -> MapsOnly<S> {
        render_maps(&self.char_ref, &self.poses[t], self.canvas, self.sigma)
    }
}

/// Deterministic assembly from explicit specs (the sampled entry point below
/// draws the specs first and then calls this).
#[allow(clippy::too_many_arguments)]
pub fn assemble_sample<S: Scalar>(
    mode: SampleMode,
    char_ref: CharacterSpec,
    char_drive: CharacterSpec,
    ref_pose: PoseSpec,
    ref_expression: ExpressionSpec,
    poses: Vec<PoseSpec>,
    expressions: Vec<ExpressionSpec>,
    augment: Option<AugmentParams>,
    canvas: usize,
    sigma: f64,
) -> TrainingSample<S> {
    assert_eq!(poses.len(), expressions.len());
    let ref_rendered = render_with::<S>(&char_ref, &ref_pose, &ref_expression, canvas, sigma);
    let t_len = poses.len();
    let mut target_frames = Vec::with_capacity(t_len);
    let mut target_keypoints = Vec::with_capacity(t_len);
    let mut target_visible = Vec::with_capacity(t_len);
    let mut drive_frames = Vec::with_capacity(t_len);
    let mut face_boxes = Vec::with_capacity(t_len);
    let mut lh_boxes = Vec::with_capacity(t_len);
    let mut rh_boxes = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let tgt = render_with::<S>(&char_ref, &poses[t], &expressions[t], canvas, sigma);
        match (mode, &augment) {
            (SampleMode::SameIdentity, Some(aug)) => {
                let mut warped = apply_augment(&tgt.frame, aug);
                warped.quantize();
                drive_frames.push(warped);
                let map_box = |b: &CropBox| {
                    let c = map_point(aug, (b.cx, b.cy));
                    CropBox { cx: c.0, cy: c.1, side: b.side * aug.scale }
                };
                face_boxes.push(map_box(&tgt.face_box));
                lh_boxes.push(map_box(&tgt.lh_box));
                rh_boxes.push(map_box(&tgt.rh_box));
            }
            (SampleMode::SameIdentity, None) | (SampleMode::CrossIdentity, _) => {
                let drv = if mode == SampleMode::CrossIdentity {
                    render_with::<S>(&char_drive, &poses[t], &expressions[t], canvas, sigma)
                } else {
                    tgt.clone()
                };
                drive_frames.push(drv.frame);
                face_boxes.push(drv.face_box);
                lh_boxes.push(drv.lh_box);
                rh_boxes.push(drv.rh_box);
            }
        }
        target_frames.push(tgt.frame);
        target_keypoints.push(tgt.maps.keypoints);
        target_visible.push(tgt.maps.visible);
    }
    TrainingSample {
        mode,
        canvas,
        sigma,
        char_ref,
        char_drive,
        ref_pose,
        ref_expression,
        poses,
        expressions,
        augment,
        ref_frame: ref_rendered.frame,
        drive_frames,
        face_boxes,
        lh_boxes,
        rh_boxes,
        target_frames,
        target_keypoints,
        target_visible,
    }
}

pub fn make_training_sample<S: Scalar>(
    rng: &mut RandomStream,
    mode: SampleMode,
    clip_len: usize,
    canvas: usize,
    sigma: f64,
) -> TrainingSample<S> {
    let char_ref = sample_character(rng);
    let char_drive = match mode {
        SampleMode::SameIdentity => char_ref.clone(),
        SampleMode::CrossIdentity => sample_character(rng),
    };
    let poses = sample_pose_sequence(rng, clip_len, canvas as f64);
    let expressions = sample_expression_sequence(rng, clip_len);
    let ref_pose = sample_pose_sequence(rng, 1, canvas as f64).remove(0);
    let ref_expression = sample_expression_sequence(rng, 1).remove(0);
    let augment = match mode {
        SampleMode::SameIdentity => Some(sample_augment(rng, canvas)),
        SampleMode::CrossIdentity => None,
    };
    assemble_sample(
        mode,
        char_ref,
        char_drive,
        ref_pose,
        ref_expression,
        poses,
        expressions,
        augment,
        canvas,
        sigma,
    )
}

/// Storage form: frames as 8-bit RGB (lossless — rendered and augmented
/// frames are quantized to the 8-bit grid), everything else as specs so the
/// heavy supervision maps can be regenerated bit-identically on demand.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompactSample {
    pub mode: SampleMode,
    pub canvas: usize,
    pub sigma: f64,
    pub char_ref: CharacterSpec,
    pub char_drive: CharacterSpec,
    pub ref_pose: PoseSpec,
    pub ref_expression: ExpressionSpec,
    pub poses: Vec<PoseSpec>,
    pub expressions: Vec<ExpressionSpec>,
    pub augment: Option<AugmentParams>,
    #[serde(skip)]
    pub ref_frame: Vec<u8>,
    #[serde(skip)]
    pub drive_frames: Vec<Vec<u8>>,
    #[serde(skip)]
    pub target_frames: Vec<Vec<u8>>,
    pub face_boxes: Vec<CropBox>,
    pub lh_boxes: Vec<CropBox>,
    pub rh_boxes: Vec<CropBox>,
    pub target_keypoints: Vec<Vec<[f64; 2]>>,
    pub target_visible: Vec<Vec<bool>>,
}

impl CompactSample {
    pub fn clip_len(&self) -> usize {
        self.drive_frames.len()
    }

    pub fn from_sample<S: Scalar>(s: &TrainingSample<S>) -> Self {
        CompactSample {
            mode: s.mode,
            canvas: s.canvas,
            sigma: s.sigma,
            char_ref: s.char_ref.clone(),
            char_drive: s.char_drive.clone(),
            ref_pose: s.ref_pose.clone(),
            ref_expression: s.ref_expression,
            poses: s.poses.clone(),
            expressions: s.expressions.clone(),
            augment: s.augment.clone(),
            ref_frame: s.ref_frame.to_u8(),
            drive_frames: s.drive_frames.iter().map(|f| f.to_u8()).collect(),
            target_frames: s.target_frames.iter().map(|f| f.to_u8()).collect(),
            face_boxes: s.face_boxes.clone(),
            lh_boxes: s.lh_boxes.clone(),
            rh_boxes: s.rh_boxes.clone(),
            target_keypoints: s
                .target_keypoints
                .iter()
                .map(|k| k.rows().into_iter().map(|r| [r[0], r[1]]).collect())
                .collect(),
            target_visible: s.target_visible.clone(),
        }
    }

    pub fn materialize<S: Scalar>(&self) -> Result<TrainingSample<S>> {
        let c = self.canvas;
        let frame = |data: &Vec<u8>| Frame::<S>::from_u8(c, c, data);
        let kps: Vec<Array2<f64>> = self
            .target_keypoints
            .iter()
            .map(|k| {
                Array2::from_shape_vec((k.len(), 2), k.iter().flatten().copied().collect())
                    .map_err(|e| Error::Data(format!("keypoint table: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(TrainingSample {
            mode: self.mode,
            canvas: c,
            sigma: self.sigma,
            char_ref: self.char_ref.clone(),
            char_drive: self.char_drive.clone(),
            ref_pose: self.ref_pose.clone(),
            ref_expression: self.ref_expression,
            poses: self.poses.clone(),
            expressions: self.expressions.clone(),
            augment: self.augment.clone(),
            ref_frame: frame(&self.ref_frame)?,
            drive_frames: self.drive_frames.iter().map(frame).collect::<Result<_>>()?,
            face_boxes: self.face_boxes.clone(),
            lh_boxes: self.lh_boxes.clone(),
            rh_boxes: self.rh_boxes.clone(),
            target_frames: self.target_frames.iter().map(frame).collect::<Result<_>>()?,
            target_keypoints: kps,
            target_visible: self.target_visible.clone(),
        })
    }
}
