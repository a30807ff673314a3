//! High-precision robot arm reaching: a ground-truth kinematic forward model
//! with joint quantization, a from-scratch inverse-model network, embodied
//! self-supervised pretraining, and per-target online iterative refinement
//! with forward simulation and strategy racing.

pub mod bench;
pub mod emssl;
pub mod kinematics;
pub mod model;
pub mod perception;
pub mod reach;

pub use kinematics::{
    displacement_in_tool_frame, forward_kinematics, max_relative_distance, min_end_displacement,
    quantize, residual_after, ArmGeometry, EndPose, JointConfig, JointDelta, JointResolution,
    KinematicsError, RelativePosition,
};
