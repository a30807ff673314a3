//! Simulated end-mounted stereo rig.
//!
//! Projects the ground-truth target into (optionally integer-quantized) pixel
//! coordinates and recovers the relative position via binocular parallax. The
//! rig is rectified: both cameras share intrinsics and orientation, the right
//! camera is displaced by the baseline along the camera x axis.

use crate::kinematics::{forward_kinematics, ArmGeometry, JointConfig, RelativePosition, Transform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("point depth {0:.4} m is not positive")]
    NonPositiveDepth(f64),
    #[error("projection ({u:.1}, {v:.1}) outside the {width}x{height} sensor")]
    OutOfView { u: f64, v: f64, width: u32, height: u32 },
    #[error("non-positive disparity {0:.4} px")]
    DegenerateDisparity(f64),
    #[error(transparent)]
    Kinematics(#[from] crate::kinematics::KinematicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub f_x: f64,
    pub f_y: f64,
    pub c_x: f64,
    pub c_y: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    pub intrinsics: CameraIntrinsics,
    /// Baseline, meters.
    pub baseline: f64,
    /// Tool frame -> left-camera frame.
    pub mount: Transform,
    /// Round pixel coordinates to integers before triangulating.
    pub pixel_quantization: bool,
}

impl StereoRig {
    /// ZED-Mini-like defaults: 700 px focal length, 1280x720 sensor,
    /// 63 mm baseline, camera 40 mm above and 30 mm behind the tip,
    /// optical axis along the tool z axis.
    pub fn default_rig() -> Self {
        Self {
            intrinsics: CameraIntrinsics {
                f_x: 700.0,
                f_y: 700.0,
                c_x: 640.0,
                c_y: 360.0,
                width: 1280,
                height: 720,
            },
            baseline: 0.063,
            mount: Transform::from_translation([0.0, -0.04, -0.03]),
            pixel_quantization: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPair {
    pub u_l: f64,
    pub v_l: f64,
    pub u_r: f64,
    pub v_r: f64,
}

/// Pinhole projection of a left-camera-frame point into both cameras.
pub fn project(point_cam: &[f64; 3], rig: &StereoRig) -> Result<PixelPair, PerceptionError> {
    let [x, y, z] = *point_cam;
    if z <= 0.0 {
        return Err(PerceptionError::NonPositiveDepth(z));
    }
    let intr = &rig.intrinsics;
    let u_l = intr.f_x * x / z + intr.c_x;
    let v = intr.f_y * y / z + intr.c_y;
    let u_r = intr.f_x * (x - rig.baseline) / z + intr.c_x;
    for &(u, vv) in &[(u_l, v), (u_r, v)] {
        if u < 0.0 || u >= intr.width as f64 || vv < 0.0 || vv >= intr.height as f64 {
            return Err(PerceptionError::OutOfView {
                u,
                v: vv,
                width: intr.width,
                height: intr.height,
            });
        }
    }
    let (u_l, v_l, u_r, v_r) = if rig.pixel_quantization {
        (u_l.round(), v.round(), u_r.round(), v.round())
    } else {
        (u_l, v, u_r, v)
    };
    Ok(PixelPair { u_l, v_l, u_r, v_r })
}

/// Parallax triangulation: p_z = f b / (u_l - u_r), then the pinhole model.
pub fn triangulate(
    u_l: f64,
    v_l: f64,
    u_r: f64,
    intr: &CameraIntrinsics,
    baseline: f64,
) -> Result<[f64; 3], PerceptionError> {
    let disparity = u_l - u_r;
    if disparity <= 0.0 {
        return Err(PerceptionError::DegenerateDisparity(disparity));
    }
    let p_z = intr.f_x * baseline / disparity;
    let p_x = (u_l - intr.c_x) * p_z / intr.f_x;
    let p_y = (v_l - intr.c_y) * p_z / intr.f_y;
    Ok([p_x, p_y, p_z])
}

/// Observe a base-frame target through the rig mounted on the arm at `q` and
/// return its position in the tool frame. With quantization off this is the
/// ground-truth relative position.
pub fn observe_relative(
    target_base: &[f64; 3],
    q: &JointConfig,
    rig: &StereoRig,
    geom: &ArmGeometry,
) -> Result<RelativePosition, PerceptionError> {
    let pose = forward_kinematics(q, geom)?;
    let base_to_cam = pose.as_transform().compose(&rig.mount).inverse();
    let point_cam = base_to_cam.apply(target_base);
    let px = project(&point_cam, rig)?;
    let recovered = triangulate(px.u_l, px.v_l, px.u_r, &rig.intrinsics, rig.baseline)?;
    Ok(RelativePosition::new(rig.mount.apply(&recovered)))
}

/// Ground-truth relative position of a base-frame target, bypassing the rig.
pub fn true_relative(
    target_base: &[f64; 3],
    q: &JointConfig,
    geom: &ArmGeometry,
) -> Result<RelativePosition, crate::kinematics::KinematicsError> {
    let pose = forward_kinematics(q, geom)?;
    let d = crate::kinematics::sub3(target_base, &pose.position);
    Ok(RelativePosition::new(pose.as_transform().rotate_inv(&d)))
}

/// Worst-case recovered-position error when each pixel coordinate is rounded
/// by at most half a pixel, evaluated by scanning the corners of the rounding
/// box (the error is monotone in each coordinate).
pub fn rounding_error_bound(point_cam: &[f64; 3], rig: &StereoRig) -> f64 {
    let mut exact_rig = rig.clone();
    exact_rig.pixel_quantization = false;
    let px = match project(point_cam, &exact_rig) {
        Ok(p) => p,
        Err(_) => return f64::INFINITY,
    };
    let mut worst = 0.0f64;
    for du_l in [-0.5, 0.5] {
        for du_r in [-0.5, 0.5] {
            for dv in [-0.5, 0.5] {
                if let Ok(p) = triangulate(
                    px.u_l + du_l,
                    px.v_l + dv,
                    px.u_r + du_r,
                    &rig.intrinsics,
                    rig.baseline,
                ) {
                    let e = crate::kinematics::norm3(&crate::kinematics::sub3(&p, point_cam));
                    if e > worst {
                        worst = e;
                    }
                }
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{norm3, sub3};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn rig() -> StereoRig {
        StereoRig::default_rig()
    }

    #[test]
    fn optical_axis_point_projects_to_principal_point() {
        let r = rig();
        let z = 0.5;
        let px = project(&[0.0, 0.0, z], &r).unwrap();
        assert_abs_diff_eq!(px.u_l, r.intrinsics.c_x, epsilon = 1e-12);
        assert_abs_diff_eq!(px.v_l, r.intrinsics.c_y, epsilon = 1e-12);
        assert_abs_diff_eq!(
            px.u_l - px.u_r,
            r.intrinsics.f_x * r.baseline / z,
            epsilon = 1e-12
        );
    }

    #[test]
    fn non_positive_depth_rejected() {
        let r = rig();
        assert!(matches!(
            project(&[0.0, 0.0, -0.1], &r),
            Err(PerceptionError::NonPositiveDepth(_))
        ));
        assert!(matches!(
            project(&[5.0, 0.0, 0.3], &r),
            Err(PerceptionError::OutOfView { .. })
        ));
    }

    #[test]
    fn triangulate_inverts_disparity() {
        let r = rig();
        let z = 0.8;
        let disp = r.intrinsics.f_x * r.baseline / z;
        let p = triangulate(r.intrinsics.c_x, r.intrinsics.c_y, r.intrinsics.c_x - disp, &r.intrinsics, r.baseline)
            .unwrap();
        assert_abs_diff_eq!(p[2], z, epsilon = 1e-12);
        // doubling the disparity halves the depth
        let p2 = triangulate(
            r.intrinsics.c_x,
            r.intrinsics.c_y,
            r.intrinsics.c_x - 2.0 * disp,
            &r.intrinsics,
            r.baseline,
        )
        .unwrap();
        assert_abs_diff_eq!(p2[2], z / 2.0, epsilon = 1e-12);
        assert!(matches!(
            triangulate(10.0, 10.0, 10.0, &r.intrinsics, r.baseline),
            Err(PerceptionError::DegenerateDisparity(_))
        ));
    }

    #[test]
    fn round_trip_identity_without_quantization() {
        let r = rig();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..500 {
            let p = [
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.15..0.15),
                rng.random_range(0.2..1.5),
            ];
            let px = match project(&p, &r) {
                Ok(px) => px,
                Err(_) => continue,
            };
            assert_eq!(px.v_l, px.v_r);
            let back = triangulate(px.u_l, px.v_l, px.u_r, &r.intrinsics, r.baseline).unwrap();
            assert!(norm3(&sub3(&back, &p)) < 1e-12);
        }
    }

    #[test]
    fn quantized_recovery_within_rounding_bound() {
        let mut r = rig();
        r.pixel_quantization = true;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        for _ in 0..500 {
            let p = [
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.15..0.15),
                rng.random_range(0.2..1.5),
            ];
            let px = match project(&p, &r) {
                Ok(px) => px,
                Err(_) => continue,
            };
            let back = match triangulate(px.u_l, px.v_l, px.u_r, &r.intrinsics, r.baseline) {
                Ok(b) => b,
                Err(_) => continue,
            };
            let err = norm3(&sub3(&back, &p));
            let bound = rounding_error_bound(&p, &r);
            assert!(err <= bound + 1e-12, "err {err} > bound {bound} at {p:?}");
        }
    }

    #[test]
    fn depth_error_bound_grows_with_depth() {
        let r = rig();
        let mut last = 0.0;
        for i in 1..20 {
            let z = 0.2 + 0.05 * i as f64;
            let bound = rounding_error_bound(&[0.0, 0.0, z], &r);
            assert!(bound > last, "bound not monotone at z={z}");
            last = bound;
        }
    }

    #[test]
    fn observe_exact_matches_ground_truth() {
        let g = ArmGeometry::ur3_default();
        let r = rig();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let mut checked = 0;
        for _ in 0..2000 {
            let (q, dq) = crate::kinematics::sample_config_and_delta(&g, g.delta_bound, &mut rng);
            let truth = crate::kinematics::displacement_in_tool_frame(&q, &dq, &g).unwrap();
            let pose = forward_kinematics(&q, &g).unwrap();
            let target_base = pose.as_transform().apply(&truth.p);
            match observe_relative(&target_base, &q, &r, &g) {
                Ok(obs) => {
                    assert!(norm3(&sub3(&obs.p, &truth.p)) < 1e-12);
                    checked += 1;
                }
                Err(PerceptionError::OutOfView { .. })
                | Err(PerceptionError::NonPositiveDepth(_))
                | Err(PerceptionError::DegenerateDisparity(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
        assert!(checked > 50, "too few in-view samples: {checked}");
    }

    #[test]
    fn closer_observation_reduces_worst_case_error() {
        let r = rig();
        let far = rounding_error_bound(&[0.02, 0.01, 1.0], &r);
        let near = rounding_error_bound(&[0.01, 0.005, 0.5], &r);
        assert!(near < far);
    }

    #[test]
    fn quantized_observation_error_bounded() {
        let g = ArmGeometry::ur3_default();
        let mut r = rig();
        r.pixel_quantization = true;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(37);
        let mut checked = 0;
        for _ in 0..1000 {
            let (q, _) = crate::kinematics::sample_config_and_delta(&g, g.delta_bound, &mut rng);
            // synthesize a target inside the camera frustum
            let cam = [
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(0.15..0.6),
            ];
            let pose = forward_kinematics(&q, &g).unwrap();
            let cam_to_base = pose.as_transform().compose(&r.mount);
            let target_base = cam_to_base.apply(&cam);
            let truth = true_relative(&target_base, &q, &g).unwrap();
            if let Ok(obs) = observe_relative(&target_base, &q, &r, &g) {
                let err = norm3(&sub3(&obs.p, &truth.p));
                let bound = rounding_error_bound(&cam, &r);
                assert!(err <= bound + 1e-12);
                checked += 1;
            }
        }
        assert!(checked > 500);
    }
}
