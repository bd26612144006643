use serde::{Deserialize, Serialize};

use super::{GeometryError, Pose, Ray, Vec3};

/// Pinhole intrinsics. Camera frame: +X right, +Y down, +Z forward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx >= 0.0
            && self.cx < f64::from(self.width)
            && self.cy >= 0.0
            && self.cy < f64::from(self.height);
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics)
        }
    }

    /// Intrinsics with the principal point at the image center and a
    /// horizontal field of view of `hfov` radians.
    pub fn from_fov(width: u32, height: u32, hfov: f64) -> Self {
        let fx = f64::from(width) * 0.5 / (hfov * 0.5).tan();
        Self {
            fx,
            fy: fx,
            cx: f64::from(width) * 0.5,
            cy: f64::from(height) * 0.5,
            width,
            height,
        }
    }

    pub fn contains(&self, pixel: [f64; 2]) -> bool {
        pixel[0] >= 0.0
            && pixel[1] >= 0.0
            && pixel[0] < f64::from(self.width)
            && pixel[1] < f64::from(self.height)
    }

    /// Camera-frame point at z-depth `depth` seen through `pixel`.
    pub fn unproject_camera(&self, pixel: [f64; 2], depth: f64) -> Vec3 {
        Vec3::new(
            (pixel[0] - self.cx) / self.fx * depth,
            (pixel[1] - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Image coordinates of a camera-frame point, `None` behind the camera.
    pub fn project_camera(&self, p: Vec3) -> Option<[f64; 2]> {
        if p.z <= 0.0 {
            return None;
        }
        Some([self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy])
    }
}

/// A posed camera: where a view was taken from and how it projects.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

impl CameraView {
    pub fn ray(&self, pixel: [f64; 2]) -> Ray {
        pixel_ray(pixel, &self.intrinsics, &self.pose)
    }
}

/// World point at z-depth `depth` behind `pixel`, for a camera at `camera_pose`.
pub fn unproject(
    pixel: [f64; 2],
    depth: f64,
    intrinsics: &CameraIntrinsics,
    camera_pose: &Pose,
) -> Result<Vec3, GeometryError> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    if !intrinsics.contains(pixel) {
        return Err(GeometryError::PixelOutOfBounds(pixel));
    }
    Ok(camera_pose.apply(intrinsics.unproject_camera(pixel, depth)))
}

/// Pixel at which `world` appears, `None` if it lies behind the camera.
pub fn project(world: Vec3, intrinsics: &CameraIntrinsics, camera_pose: &Pose) -> Option<[f64; 2]> {
    intrinsics.project_camera(camera_pose.inverse().apply(world))
}

/// Viewing ray through `pixel`, starting at the camera center.
pub fn pixel_ray(pixel: [f64; 2], intrinsics: &CameraIntrinsics, camera_pose: &Pose) -> Ray {
    let dir_cam = intrinsics.unproject_camera(pixel, 1.0);
    let dir = camera_pose
        .apply_vector(dir_cam)
        .normalized()
        .unwrap_or(Vec3::Z);
    Ray {
        origin: camera_pose.position,
        direction: dir,
    }
}
