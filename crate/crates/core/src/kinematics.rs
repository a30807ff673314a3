//! Analytic 6-DOF serial-arm forward kinematics with joint quantization.
//!
//! This module is the ground-truth forward model: given a joint configuration
//! and a commanded joint variation it predicts the end-effector motion exactly,
//! including the actuator's angular resolution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DOF: usize = 6;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("joint {joint} angle {angle_deg:.4}° outside range [{lo_deg:.2}°, {hi_deg:.2}°]")]
    JointOutOfRange {
        joint: usize,
        angle_deg: f64,
        lo_deg: f64,
        hi_deg: f64,
    },
    #[error("joint {joint} delta {delta_deg:.4}° exceeds bound ±{bound_deg:.2}°")]
    DeltaOutOfBound {
        joint: usize,
        delta_deg: f64,
        bound_deg: f64,
    },
}

pub fn deg(rad: f64) -> f64 {
    rad.to_degrees()
}

pub fn rad(deg: f64) -> f64 {
    deg.to_radians()
}

/// Arm state: six joint angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub angles: [f64; DOF],
}

impl JointConfig {
    pub fn new(angles: [f64; DOF]) -> Self {
        Self { angles }
    }

    pub fn from_degrees(angles_deg: [f64; DOF]) -> Self {
        let mut angles = [0.0; DOF];
        for (a, d) in angles.iter_mut().zip(angles_deg.iter()) {
            *a = rad(*d);
        }
        Self { angles }
    }

    pub fn to_degrees(&self) -> [f64; DOF] {
        let mut out = [0.0; DOF];
        for (o, a) in out.iter_mut().zip(self.angles.iter()) {
            *o = deg(*a);
        }
        out
    }

    pub fn apply(&self, dq: &JointDelta) -> JointConfig {
        let mut angles = self.angles;
        for (a, d) in angles.iter_mut().zip(dq.deltas.iter()) {
            *a += d;
        }
        JointConfig { angles }
    }
}

/// Commanded joint variation, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointDelta {
    pub deltas: [f64; DOF],
}

impl JointDelta {
    pub fn new(deltas: [f64; DOF]) -> Self {
        Self { deltas }
    }

    pub fn zero() -> Self {
        Self { deltas: [0.0; DOF] }
    }

    pub fn from_degrees(deltas_deg: [f64; DOF]) -> Self {
        let mut deltas = [0.0; DOF];
        for (a, d) in deltas.iter_mut().zip(deltas_deg.iter()) {
            *a = rad(*d);
        }
        Self { deltas }
    }

    pub fn to_degrees(&self) -> [f64; DOF] {
        let mut out = [0.0; DOF];
        for (o, a) in out.iter_mut().zip(self.deltas.iter()) {
            *o = deg(*a);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.deltas.iter().all(|d| *d == 0.0)
    }
}

/// Smallest commandable joint increment, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointResolution {
    pub alpha: f64,
}

impl JointResolution {
    pub fn from_degrees(alpha_deg: f64) -> Self {
        assert!(alpha_deg > 0.0, "resolution must be positive");
        Self { alpha: rad(alpha_deg) }
    }
}

/// Target position expressed in the current tool frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativePosition {
    pub p: [f64; 3],
}

impl RelativePosition {
    pub fn new(p: [f64; 3]) -> Self {
        Self { p }
    }

    pub fn zero() -> Self {
        Self { p: [0.0; 3] }
    }

    pub fn norm(&self) -> f64 {
        norm3(&self.p)
    }
}

pub fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn sub3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Rigid transform: p_out = rot * p_in + trans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub rot: [[f64; 3]; 3],
    pub trans: [f64; 3],
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            rot: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            trans: [0.0; 3],
        }
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self { rot: Self::identity().rot, trans: t }
    }

    pub fn compose(&self, other: &Transform) -> Transform {
        let mut rot = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rot[i][j] = (0..3).map(|k| self.rot[i][k] * other.rot[k][j]).sum();
            }
        }
        Transform {
            rot,
            trans: self.apply(&other.trans),
        }
    }

    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        let mut out = self.trans;
        for i in 0..3 {
            for j in 0..3 {
                out[i] += self.rot[i][j] * p[j];
            }
        }
        out
    }

    pub fn rotate(&self, v: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i] += self.rot[i][j] * v[j];
            }
        }
        out
    }

    /// Rotate by the transpose of `rot` (maps world vectors into this frame).
    pub fn rotate_inv(&self, v: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i] += self.rot[j][i] * v[j];
            }
        }
        out
    }

    pub fn inverse(&self) -> Transform {
        let mut rot = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rot[i][j] = self.rot[j][i];
            }
        }
        let t = self.rotate_inv(&self.trans);
        Transform {
            rot,
            trans: [-t[0], -t[1], -t[2]],
        }
    }
}

/// One row of the Denavit-Hartenberg table (standard convention).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    /// Link length, meters.
    pub a: f64,
    /// Link offset, meters.
    pub d: f64,
    /// Link twist, radians.
    pub alpha_twist: f64,
    /// Joint variable offset, radians.
    pub theta_offset: f64,
}

impl DhRow {
    /// T = Rz(theta + offset) * Tz(d) * Tx(a) * Rx(alpha).
    pub fn transform(&self, theta: f64) -> Transform {
        let (st, ct) = (theta + self.theta_offset).sin_cos();
        let (sa, ca) = self.alpha_twist.sin_cos();
        Transform {
            rot: [
                [ct, -st * ca, st * sa],
                [st, ct * ca, -ct * sa],
                [0.0, sa, ca],
            ],
            trans: [self.a * ct, self.a * st, self.d],
        }
    }
}

/// End-effector pose in the base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndPose {
    pub position: [f64; 3],
    pub orientation: [[f64; 3]; 3],
}

impl EndPose {
    pub fn as_transform(&self) -> Transform {
        Transform {
            rot: self.orientation,
            trans: self.position,
        }
    }

    /// Map a point given in this tool frame into the base frame.
    pub fn point_in_base(&self, rel: &RelativePosition) -> [f64; 3] {
        self.as_transform().apply(&rel.p)
    }
}

/// Full geometric description of the arm plus command limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmGeometry {
    pub dh_rows: [DhRow; DOF],
    /// Flange to needle-tip transform.
    pub tool_offset: Transform,
    /// Closed intervals, radians.
    pub joint_ranges: [(f64, f64); DOF],
    /// Per-joint |delta| bound, radians.
    pub delta_bound: f64,
}

/// Wrist-3 lever arm calibrated so a 1° step moves the tip 2.91 mm.
pub const DEFAULT_LEVER_ARM_M: f64 = 0.16676;

impl ArmGeometry {
    /// Published UR3 kinematic table, Table-I joint ranges, ±10° delta bound,
    /// and a needle tip placed 166.76 mm off the wrist-3 axis.
    pub fn ur3_default() -> Self {
        let dh = |a: f64, d: f64, alpha: f64| DhRow {
            a,
            d,
            alpha_twist: alpha,
            theta_offset: 0.0,
        };
        let half_pi = std::f64::consts::FRAC_PI_2;
        Self {
            dh_rows: [
                dh(0.0, 0.1519, half_pi),
                dh(-0.24365, 0.0, 0.0),
                dh(-0.21325, 0.0, 0.0),
                dh(0.0, 0.11235, half_pi),
                dh(0.0, 0.08535, -half_pi),
                dh(0.0, 0.0819, 0.0),
            ],
            tool_offset: Transform::from_translation([DEFAULT_LEVER_ARM_M, 0.0, 0.04]),
            joint_ranges: [
                (rad(-90.0), rad(0.0)),
                (rad(-180.0), rad(-90.0)),
                (rad(-90.0), rad(0.0)),
                (rad(-135.0), rad(-45.0)),
                (rad(45.0), rad(135.0)),
                (rad(90.0), rad(180.0)),
            ],
            delta_bound: rad(10.0),
        }
    }

    /// Mid-workspace configuration used as the default evaluation start.
    /// At this posture the wrist-3 lever arm is the smallest single-step
    /// lever, so the exact minimum displacement matches lever_arm * alpha.
    pub fn reference_config() -> JointConfig {
        JointConfig::from_degrees([-45.0, -135.0, -45.0, -90.0, 60.0, 160.0])
    }

    /// Radial distance from the wrist-3 axis to the needle tip.
    pub fn tool_lever_arm(&self) -> f64 {
        let t = &self.tool_offset.trans;
        (t[0] * t[0] + t[1] * t[1]).sqrt()
    }

    pub fn check_in_range(&self, q: &JointConfig) -> Result<(), KinematicsError> {
        for (i, (&angle, &(lo, hi))) in q.angles.iter().zip(self.joint_ranges.iter()).enumerate() {
            if angle < lo || angle > hi {
                return Err(KinematicsError::JointOutOfRange {
                    joint: i,
                    angle_deg: deg(angle),
                    lo_deg: deg(lo),
                    hi_deg: deg(hi),
                });
            }
        }
        Ok(())
    }

    /// Clamp each angle into its joint range.
    pub fn clamp_config(&self, q: &JointConfig) -> JointConfig {
        let mut angles = q.angles;
        for (a, &(lo, hi)) in angles.iter_mut().zip(self.joint_ranges.iter()) {
            *a = a.clamp(lo, hi);
        }
        JointConfig { angles }
    }

    /// Clamp a delta so that q + dq stays within the joint ranges.
    pub fn clamp_delta(&self, q: &JointConfig, dq: &JointDelta) -> JointDelta {
        let mut deltas = dq.deltas;
        for i in 0..DOF {
            let (lo, hi) = self.joint_ranges[i];
            deltas[i] = deltas[i].clamp(lo - q.angles[i], hi - q.angles[i]);
        }
        JointDelta { deltas }
    }
}

fn chain_pose(q: &JointConfig, geom: &ArmGeometry) -> EndPose {
    let mut t = Transform::identity();
    for (row, &theta) in geom.dh_rows.iter().zip(q.angles.iter()) {
        t = t.compose(&row.transform(theta));
    }
    t = t.compose(&geom.tool_offset);
    EndPose {
        position: t.trans,
        orientation: t.rot,
    }
}

/// Tip pose via the DH chain product composed with the tool offset.
pub fn forward_kinematics(q: &JointConfig, geom: &ArmGeometry) -> Result<EndPose, KinematicsError> {
    geom.check_in_range(q)?;
    Ok(chain_pose(q, geom))
}

/// FK without the range check, for probing moves that may cross a limit.
pub fn forward_kinematics_unchecked(q: &JointConfig, geom: &ArmGeometry) -> EndPose {
    chain_pose(q, geom)
}

/// Round each component to the nearest multiple of alpha, ties away from zero.
pub fn quantize(dq: &JointDelta, res: &JointResolution) -> JointDelta {
    let mut deltas = dq.deltas;
    for d in deltas.iter_mut() {
        *d = (*d / res.alpha).round() * res.alpha;
    }
    JointDelta { deltas }
}

/// Tip displacement caused by executing `dq`, expressed in the pre-motion
/// tool frame. This is the relabel Δp for the sample (s=q, Δp, Δq=dq).
pub fn displacement_in_tool_frame(
    q: &JointConfig,
    dq: &JointDelta,
    geom: &ArmGeometry,
) -> Result<RelativePosition, KinematicsError> {
    let pre = forward_kinematics(q, geom)?;
    let post = forward_kinematics(&q.apply(dq), geom)?;
    let d = sub3(&post.position, &pre.position);
    Ok(RelativePosition::new(pre.as_transform().rotate_inv(&d)))
}

/// Executes `dq` virtually: returns the new configuration and the target
/// re-expressed in the post-motion tool frame. The norm of the residual is
/// the reaching precision.
pub fn residual_after(
    q: &JointConfig,
    dq: &JointDelta,
    target_rel: &RelativePosition,
    geom: &ArmGeometry,
) -> Result<(JointConfig, RelativePosition), KinematicsError> {
    let pre = forward_kinematics(q, geom)?;
    let q_new = q.apply(dq);
    let post = forward_kinematics(&q_new, geom)?;
    let target_base = pre.as_transform().apply(&target_rel.p);
    let d = sub3(&target_base, &post.position);
    Ok((q_new, RelativePosition::new(post.as_transform().rotate_inv(&d))))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MinDisplacement {
    /// Smallest nonzero tip displacement over the 12 single-step moves, meters.
    pub exact: f64,
    /// lever_arm * alpha for the last joint, meters.
    pub small_angle: f64,
}

/// Smallest tip motion achievable by a single-joint single-step move at `q`.
pub fn min_end_displacement(
    q: &JointConfig,
    res: &JointResolution,
    geom: &ArmGeometry,
) -> MinDisplacement {
    let base = forward_kinematics_unchecked(q, geom);
    let mut exact = f64::INFINITY;
    for joint in 0..DOF {
        for sign in [-1.0, 1.0] {
            let mut dq = JointDelta::zero();
            dq.deltas[joint] = sign * res.alpha;
            let moved = forward_kinematics_unchecked(&q.apply(&dq), geom);
            let disp = norm3(&sub3(&moved.position, &base.position));
            if disp > 0.0 && disp < exact {
                exact = disp;
            }
        }
    }
    MinDisplacement {
        exact,
        small_angle: geom.tool_lever_arm() * res.alpha,
    }
}

/// Seeded random search for the largest tool-frame displacement reachable
/// with per-joint deltas bounded by `delta_bound`.
pub fn max_relative_distance(
    delta_bound: f64,
    geom: &ArmGeometry,
    n_samples: usize,
    seed: u64,
) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut max = 0.0f64;
    for _ in 0..n_samples {
        let (q, dq) = sample_config_and_delta(geom, delta_bound, &mut rng);
        let disp = displacement_in_tool_frame(&q, &dq, geom)
            .expect("sampled move in range")
            .norm();
        if disp > max {
            max = disp;
        }
    }
    max
}

/// Uniform q over the joint ranges and uniform dq over ±bound, rejecting
/// deltas that would leave the ranges.
pub fn sample_config_and_delta<R: rand::Rng>(
    geom: &ArmGeometry,
    delta_bound: f64,
    rng: &mut R,
) -> (JointConfig, JointDelta) {
    let mut angles = [0.0; DOF];
    for (a, &(lo, hi)) in angles.iter_mut().zip(geom.joint_ranges.iter()) {
        *a = rng.random_range(lo..=hi);
    }
    let q = JointConfig::new(angles);
    if delta_bound == 0.0 {
        return (q, JointDelta::zero());
    }
    loop {
        let mut deltas = [0.0; DOF];
        for d in deltas.iter_mut() {
            *d = rng.random_range(-delta_bound..=delta_bound);
        }
        let dq = JointDelta::new(deltas);
        if geom.check_in_range(&q.apply(&dq)).is_ok() {
            return (q, dq);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    /// Product-of-exponentials FK, written independently of the DH chain.
    /// Screw axes are derived from the zero-configuration frames only.
    mod poe {
        use super::super::*;

        fn rodrigues(axis: &[f64; 3], theta: f64) -> [[f64; 3]; 3] {
            let (s, c) = theta.sin_cos();
            let v = 1.0 - c;
            let (x, y, z) = (axis[0], axis[1], axis[2]);
            [
                [c + x * x * v, x * y * v - z * s, x * z * v + y * s],
                [y * x * v + z * s, c + y * y * v, y * z * v - x * s],
                [z * x * v - y * s, z * y * v + x * s, c + z * z * v],
            ]
        }

        /// Rotation of `p` about the line (point, axis) by theta.
        fn rotate_about_line(p: &[f64; 3], point: &[f64; 3], axis: &[f64; 3], theta: f64) -> [f64; 3] {
            let r = rodrigues(axis, theta);
            let rel = sub3(p, point);
            let mut out = *point;
            for i in 0..3 {
                for j in 0..3 {
                    out[i] += r[i][j] * rel[j];
                }
            }
            out
        }

        /// Joint axes (point + direction) at the zero configuration, plus the
        /// zero-configuration tip, extracted by evaluating the frame chain once.
        fn zero_config_axes(geom: &ArmGeometry) -> (Vec<([f64; 3], [f64; 3])>, [f64; 3]) {
            let mut t = Transform::identity();
            let mut axes = Vec::new();
            for row in geom.dh_rows.iter() {
                // joint i rotates about the z axis of the frame before its own
                // DH transform is applied
                axes.push((t.trans, [t.rot[0][2], t.rot[1][2], t.rot[2][2]]));
                t = t.compose(&row.transform(0.0));
            }
            t = t.compose(&geom.tool_offset);
            (axes, t.trans)
        }

        pub fn tip_position(q: &JointConfig, geom: &ArmGeometry) -> [f64; 3] {
            let (axes, tip0) = zero_config_axes(geom);
            // apply joints outermost-first; each rotates everything distal to it
            let mut tip = tip0;
            let mut moved_axes: Vec<([f64; 3], [f64; 3])> = axes.clone();
            for i in 0..DOF {
                let (point, axis) = moved_axes[i];
                let theta = q.angles[i];
                tip = rotate_about_line(&tip, &point, &axis, theta);
                for j in (i + 1)..DOF {
                    let (p_j, a_j) = moved_axes[j];
                    let new_p = rotate_about_line(&p_j, &point, &axis, theta);
                    let r = rodrigues(&axis, theta);
                    let mut new_a = [0.0; 3];
                    for x in 0..3 {
                        for y in 0..3 {
                            new_a[x] += r[x][y] * a_j[y];
                        }
                    }
                    moved_axes[j] = (new_p, new_a);
                }
            }
            tip
        }
    }

    fn geom() -> ArmGeometry {
        ArmGeometry::ur3_default()
    }

    fn random_config<R: rand::Rng>(geom: &ArmGeometry, rng: &mut R) -> JointConfig {
        let mut angles = [0.0; DOF];
        for (a, &(lo, hi)) in angles.iter_mut().zip(geom.joint_ranges.iter()) {
            *a = rng.random_range(lo..=hi);
        }
        JointConfig::new(angles)
    }

    #[test]
    fn zero_pose_matches_dh_product() {
        let mut g = geom();
        g.tool_offset = Transform::identity();
        g.joint_ranges = [(rad(-360.0), rad(360.0)); DOF];
        let q = JointConfig::new([0.0; DOF]);
        let pose = forward_kinematics(&q, &g).unwrap();
        let mut t = Transform::identity();
        for row in g.dh_rows.iter() {
            t = t.compose(&row.transform(0.0));
        }
        for i in 0..3 {
            assert_abs_diff_eq!(pose.position[i], t.trans[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn fk_matches_poe_oracle() {
        let g = geom();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let q = random_config(&g, &mut rng);
            let pose = forward_kinematics(&q, &g).unwrap();
            let oracle = poe::tip_position(&q, &g);
            let err = norm3(&sub3(&pose.position, &oracle));
            assert!(err < 1e-9, "FK/PoE mismatch {err}");
        }
    }

    #[test]
    fn fk_orientation_orthonormal() {
        let g = geom();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let q = random_config(&g, &mut rng);
            let r = forward_kinematics(&q, &g).unwrap().orientation;
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() < 1e-9);
                }
            }
            let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
                - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
                + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
            assert!((det - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn base_joint_rotation_preserves_axis_distance() {
        let mut g = geom();
        g.joint_ranges[0] = (rad(-180.0), rad(180.0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut q = random_config(&g, &mut rng);
            q.angles[0] = 0.0;
            let p0 = forward_kinematics(&q, &g).unwrap().position;
            let r0 = (p0[0] * p0[0] + p0[1] * p0[1]).sqrt();
            let phi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            q.angles[0] = phi;
            let p1 = forward_kinematics(&q, &g).unwrap().position;
            let r1 = (p1[0] * p1[0] + p1[1] * p1[1]).sqrt();
            assert_abs_diff_eq!(r0, r1, epsilon = 1e-12);
            assert_abs_diff_eq!(p0[2], p1[2], epsilon = 1e-12);
            // rotating the base by phi rotates the tip about z by phi
            let expect = [
                p0[0] * phi.cos() - p0[1] * phi.sin(),
                p0[0] * phi.sin() + p0[1] * phi.cos(),
                p0[2],
            ];
            assert!(norm3(&sub3(&p1, &expect)) < 1e-12);
        }
    }

    #[test]
    fn out_of_range_joint_reports_index() {
        let g = geom();
        let mut q = JointConfig::from_degrees([-45.0, -135.0, -45.0, -90.0, 90.0, 135.0]);
        q.angles[2] = rad(10.0);
        match forward_kinematics(&q, &g) {
            Err(KinematicsError::JointOutOfRange { joint, .. }) => assert_eq!(joint, 2),
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn quantize_fixed_point_and_nearest() {
        let res = JointResolution::from_degrees(0.01);
        let exact = JointDelta::from_degrees([0.02, -0.05, 0.0, 1.0, -0.33, 0.07]);
        let q = quantize(&exact, &res);
        for (a, b) in q.deltas.iter().zip(exact.deltas.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let dq = JointDelta::from_degrees([0.016, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let q = quantize(&dq, &res);
        assert_abs_diff_eq!(deg(q.deltas[0]), 0.02, epsilon = 1e-12);
        // ties round away from zero (binary-exact alpha so 1.5*alpha is a tie)
        let res = JointResolution { alpha: 0.25 };
        let tie = JointDelta::new([0.375, -0.375, 0.0, 0.0, 0.0, 0.0]);
        let q = quantize(&tie, &res);
        assert_eq!(q.deltas[0], 0.5);
        assert_eq!(q.deltas[1], -0.5);
    }

    #[test]
    fn quantize_idempotent_random() {
        use rand::Rng;
        let res = JointResolution::from_degrees(0.1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let mut deltas = [0.0; DOF];
            for d in deltas.iter_mut() {
                *d = rng.random_range(-0.2..0.2);
            }
            let dq = JointDelta::new(deltas);
            let q1 = quantize(&dq, &res);
            let q2 = quantize(&q1, &res);
            assert_eq!(q1, q2);
            for (orig, quant) in dq.deltas.iter().zip(q1.deltas.iter()) {
                assert!((orig - quant).abs() <= res.alpha / 2.0 + 1e-15);
            }
        }
    }

    #[test]
    fn displacement_zero_delta_is_zero() {
        let g = geom();
        let q = JointConfig::from_degrees([-45.0, -135.0, -45.0, -90.0, 90.0, 135.0]);
        let d = displacement_in_tool_frame(&q, &JointDelta::zero(), &g).unwrap();
        assert_eq!(d.p, [0.0; 3]);
    }

    #[test]
    fn displacement_norm_is_base_frame_distance() {
        let g = geom();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let (q, dq) = sample_config_and_delta(&g, g.delta_bound, &mut rng);
            let d = displacement_in_tool_frame(&q, &dq, &g).unwrap();
            let pre = forward_kinematics(&q, &g).unwrap().position;
            let post = forward_kinematics(&q.apply(&dq), &g).unwrap().position;
            assert_abs_diff_eq!(d.norm(), norm3(&sub3(&post, &pre)), epsilon = 1e-12);
        }
    }

    #[test]
    fn residual_identity_and_cancellation() {
        let g = geom();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let (q, dq) = sample_config_and_delta(&g, g.delta_bound, &mut rng);
            let target = displacement_in_tool_frame(&q, &dq, &g).unwrap();
            // dq = 0 leaves the target untouched
            let (_, r0) = residual_after(&q, &JointDelta::zero(), &target, &g).unwrap();
            assert!(norm3(&sub3(&r0.p, &target.p)) < 1e-12);
            // the exact dq cancels it
            let (_, r1) = residual_after(&q, &dq, &target, &g).unwrap();
            assert!(r1.norm() < 1e-9);
        }
    }

    #[test]
    fn residual_matches_geometric_oracle() {
        let g = geom();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        for _ in 0..200 {
            let (q, dq) = sample_config_and_delta(&g, g.delta_bound, &mut rng);
            let dq2 = loop {
                let mut deltas = [0.0; DOF];
                for d in deltas.iter_mut() {
                    *d = rng.random_range(-g.delta_bound..=g.delta_bound);
                }
                let cand = JointDelta::new(deltas);
                if g.check_in_range(&q.apply(&cand)).is_ok() {
                    break cand;
                }
            };
            let target = displacement_in_tool_frame(&q, &dq2, &g).unwrap();
            let (_, res) = residual_after(&q, &dq, &target, &g).unwrap();
            // oracle: distance in the base frame from the post-motion tip to
            // the target point
            let pre = forward_kinematics(&q, &g).unwrap();
            let post = forward_kinematics(&q.apply(&dq), &g).unwrap();
            let target_base = pre.as_transform().apply(&target.p);
            let dist = norm3(&sub3(&target_base, &post.position));
            assert_abs_diff_eq!(res.norm(), dist, epsilon = 1e-12);
        }
    }

    #[test]
    fn min_displacement_matches_table_values() {
        let g = geom();
        let q = ArmGeometry::reference_config();
        let cases: [(f64, f64); 3] = [(1.0, 2.91e-3), (0.1, 0.29e-3), (0.01, 0.03e-3)];
        for (alpha_deg, expect) in cases {
            let md = min_end_displacement(&q, &JointResolution::from_degrees(alpha_deg), &g);
            let tol = (0.02 * expect).max(0.005e-3);
            assert!(
                (md.exact - expect).abs() < tol,
                "alpha {alpha_deg}°: {:.5} mm vs {:.5} mm",
                md.exact * 1e3,
                expect * 1e3
            );
            // small-angle estimate tracks the exact evaluation
            assert!((md.exact - md.small_angle).abs() / md.small_angle < 0.01);
        }
    }

    #[test]
    fn min_displacement_linear_in_alpha() {
        let g = geom();
        let q = JointConfig::from_degrees([-30.0, -120.0, -60.0, -80.0, 100.0, 120.0]);
        let a = min_end_displacement(&q, &JointResolution::from_degrees(0.5), &g);
        let b = min_end_displacement(&q, &JointResolution::from_degrees(0.25), &g);
        assert_abs_diff_eq!(a.small_angle, 2.0 * b.small_angle, epsilon = 1e-15);
    }

    #[test]
    fn max_relative_distance_zero_bound() {
        let g = geom();
        assert_eq!(max_relative_distance(0.0, &g, 100, 1), 0.0);
    }

    #[test]
    fn max_relative_distance_monotone_in_bound() {
        let g = geom();
        let d1 = max_relative_distance(rad(1.0), &g, 2000, 42);
        let d5 = max_relative_distance(rad(5.0), &g, 2000, 42);
        let d10 = max_relative_distance(rad(10.0), &g, 2000, 42);
        assert!(d1 < d5 && d5 < d10);
    }
}
