//! Procedural 2D articulated-character data: capsule-limb figures with
//! per-limb identity scaling, scripted gesture sampling, ground-truth
//! keypoints/heatmaps/hand-normal maps, face/hand crop boxes, appearance
//! augmentation, and a lossless on-disk dataset format. Same-identity pairs
//! use augmentation; cross-identity pairs render two characters under one
//! shared pose stream.

pub mod augment;
pub mod character;
pub mod dataset;
pub mod pose;
pub mod render;
pub mod sample;
pub mod skeleton;

pub use augment::{apply_augment, map_point, sample_augment, AugmentParams};
pub use character::{sample_character, CharacterSpec};
pub use dataset::{read_dataset, sample_dir_name, write_dataset};
pub use pose::{
    sample_expression_sequence, sample_pose_sequence, sample_pose_sequence_gestured,
    ExpressionSpec, Gesture, PoseSpec,
};
pub use render::{
    capsule_normal, crop_resize, poses_have_hand_overlap, render, render_maps, render_with,
    CropBox, MapsOnly, RenderedSample, DEFAULT_SIGMA,
};
pub use sample::{assemble_sample, make_training_sample, CompactSample, SampleMode, TrainingSample};
pub use skeleton::{forward_kinematics, recover_pose_params, J_BODY, J_TOTAL, N_ANGLES, N_PARTS};
