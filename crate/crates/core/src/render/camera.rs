use serde::{Deserialize, Serialize};

use crate::geom::{Point2, Point3};
use crate::sim::CarState;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    /// Horizontal field of view.
    pub fov_deg: f64,
    pub image_w: usize,
    pub image_h: usize,
    pub sensor_diameter_mm: f64,
    pub mount_height: f64,
    /// Negative looks down.
    pub mount_pitch_deg: f64,
    /// Camera displacement along the car's left normal.
    pub lateral_offset: f64,
    /// Extra yaw relative to the car heading, positive to the left.
    pub yaw_offset_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fov_deg: 60.0,
            image_w: 320,
            image_h: 180,
            sensor_diameter_mm: 11.345,
            mount_height: 1.0,
            mount_pitch_deg: -6.0,
            lateral_offset: 0.0,
            yaw_offset_deg: 0.0,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::invalid(format!("camera.fov_deg {} not in (0, 180)", self.fov_deg)));
        }
        if self.image_w < 200 || self.image_h < 66 {
            return Err(Error::invalid("camera image must be at least 200x66"));
        }
        Ok(())
    }

    /// Camera pose for a car state.
    pub fn pose_for(&self, state: &CarState) -> CamPose {
        let ground = state.position + state.left_normal() * self.lateral_offset;
        CamPose {
            position: Point3::new(ground.x, ground.y, self.mount_height),
            yaw: state.heading + self.yaw_offset_deg.to_radians(),
            pitch: self.mount_pitch_deg.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CamPose {
    pub position: Point3,
    /// Radians CCW from +x.
    pub yaw: f64,
    /// Radians, positive looks up.
    pub pitch: f64,
}

impl CamPose {
    /// Forward, right and up unit vectors.
    pub fn basis(&self) -> (Point3, Point3, Point3) {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let forward = Point3::new(cy * cp, sy * cp, sp);
        let right = Point3::new(sy, -cy, 0.0);
        let up = right.cross(forward);
        (forward, right, up)
    }
}

/// Lens focal length (mm) giving `fov_deg` on a sensor of diameter `d_mm`.
pub fn focal_from_fov(d_mm: f64, fov_deg: f64) -> Result<f64> {
    if !(d_mm > 0.0) || !(fov_deg > 0.0 && fov_deg < 180.0) {
        return Err(Error::invalid(format!("focal_from_fov needs d > 0 and fov in (0, 180), got ({d_mm}, {fov_deg})")));
    }
    Ok(d_mm / (2.0 * (fov_deg.to_radians() / 2.0).tan()))
}

/// Focal length in pixels (square pixels).
pub fn focal_px(cam: &CameraConfig) -> f64 {
    (cam.image_w as f64 / 2.0) / (cam.fov_deg.to_radians() / 2.0).tan()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel { u: f64, v: f64, depth: f64 },
    Behind,
}

impl Projection {
    pub fn pixel(self) -> Option<(f64, f64)> {
        match self {
            Projection::Pixel { u, v, .. } => Some((u, v)),
            Projection::Behind => None,
        }
    }
}

/// Pinhole projection; `u` grows rightward and `v` downward from the top-left.
pub fn project(pose: &CamPose, cam: &CameraConfig, p: Point3) -> Projection {
    let (f, r, up) = pose.basis();
    let d = p - pose.position;
    let z = d.dot(f);
    if z <= 1e-9 {
        return Projection::Behind;
    }
    let fp = focal_px(cam);
    Projection::Pixel {
        u: cam.image_w as f64 / 2.0 + fp * d.dot(r) / z,
        v: cam.image_h as f64 / 2.0 - fp * d.dot(up) / z,
        depth: z,
    }
}

/// Intersects the ray through pixel `(u, v)` with the ground plane.
pub fn unproject_ground(pose: &CamPose, cam: &CameraConfig, u: f64, v: f64) -> Option<Point2> {
    let (f, r, up) = pose.basis();
    let fp = focal_px(cam);
    let x = (u - cam.image_w as f64 / 2.0) / fp;
    let y = (v - cam.image_h as f64 / 2.0) / fp;
    let ray = f + r * x - up * y;
    if ray.z >= -1e-12 {
        return None;
    }
    let t = -pose.position.z / ray.z;
    Some((pose.position + ray * t).xy())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level_pose() -> CamPose {
        CamPose {
            position: Point3::new(0.0, 0.0, 1.0),
            yaw: 0.0,
            pitch: 0.0,
        }
    }

    #[test]
    fn focal_length_from_fov() {
        let f = focal_from_fov(11.345, 60.0).unwrap();
        assert!((f - 9.825).abs() < 1e-3, "{f}");
        assert!(focal_from_fov(11.345, 179.999).unwrap() < 1e-3);
        assert!(focal_from_fov(11.345, 180.0).is_err());
        assert!(focal_from_fov(0.0, 60.0).is_err());
        let fs: Vec<f64> = (1..18).map(|k| focal_from_fov(11.345, 10.0 * k as f64).unwrap()).collect();
        assert!(fs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn principal_point_and_ground_point() {
        let cam = CameraConfig::default();
        let pose = level_pose();
        let (u, v) = project(&pose, &cam, Point3::new(25.0, 0.0, 1.0)).pixel().unwrap();
        assert!((u - 160.0).abs() < 1e-9 && (v - 90.0).abs() < 1e-9);
        let (u, v) = project(&pose, &cam, Point3::new(10.0, 0.0, 0.0)).pixel().unwrap();
        let fp = 160.0 / 30f64.to_radians().tan();
        assert!((fp - 277.128).abs() < 1e-3);
        assert!((u - 160.0).abs() < 1e-9);
        assert!((v - (90.0 + fp * 0.1)).abs() < 1e-9);
        assert!((v - 117.7).abs() < 0.02);
    }

    #[test]
    fn left_is_left_and_behind_is_flagged() {
        let cam = CameraConfig::default();
        let pose = level_pose();
        let (u, _) = project(&pose, &cam, Point3::new(8.0, 2.0, 0.0)).pixel().unwrap();
        assert!(u < 160.0);
        assert_eq!(project(&pose, &cam, Point3::new(-3.0, 0.0, 0.0)), Projection::Behind);
    }

    #[test]
    fn ground_round_trip() {
        let cam = CameraConfig::default();
        let pose = CamPose {
            position: Point3::new(3.0, -2.0, 1.0),
            yaw: 0.7,
            pitch: -0.1,
        };
        let (f, r, _) = pose.basis();
        for dist in [2.0, 5.0, 13.0, 50.0] {
            for lat in [-2.0, 0.0, 1.5] {
                let p = pose.position.xy() + Point2::new(f.x, f.y).normalized() * dist + Point2::new(r.x, r.y) * lat;
                let (u, v) = project(&pose, &cam, Point3::on_ground(p)).pixel().unwrap();
                let q = unproject_ground(&pose, &cam, u, v).unwrap();
                assert!(p.dist(q) < 1e-6, "{p:?} vs {q:?}");
            }
        }
    }

    #[test]
    fn wider_fov_shrinks_pixel_distances() {
        let pose = level_pose();
        let a = Point3::new(8.0, 1.8, 0.0);
        let b = Point3::new(8.0, -1.8, 0.0);
        let span = |fov: f64| {
            let cam = CameraConfig { fov_deg: fov, ..CameraConfig::default() };
            let (ua, va) = project(&pose, &cam, a).pixel().unwrap();
            let (ub, vb) = project(&pose, &cam, b).pixel().unwrap();
            (ua - ub).hypot(va - vb)
        };
        assert!(span(64.0) < span(60.0));
    }
}
