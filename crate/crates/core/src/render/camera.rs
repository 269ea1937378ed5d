use nalgebra::{Matrix3, Point3, Quaternion, Unit, UnitQuaternion, Vector3};

use super::RenderError;

/// Number of f64 values in a serialized camera.
pub const CAMERA_WIRE_LEN: usize = 11;

/// A pinhole camera. It looks down its local −z axis with +y up; depth is
/// the Euclidean distance from `position` along the pixel ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Point3<f64>,
    /// Camera-to-world rotation.
    pub orientation: UnitQuaternion<f64>,
    /// Vertical field of view in degrees.
    pub vertical_fov: f64,
    pub near: f64,
    pub far: f64,
}

impl CameraPose {
    pub fn new(
        position: Point3<f64>,
        orientation: UnitQuaternion<f64>,
        vertical_fov: f64,
        near: f64,
        far: f64,
    ) -> Result<Self, RenderError> {
        let cam = Self {
            position,
            orientation,
            vertical_fov,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// A camera at `eye` looking at `target`.
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        vertical_fov: f64,
        near: f64,
        far: f64,
    ) -> Result<Self, RenderError> {
        let forward = target - eye;
        if forward.norm() == 0.0 || forward.cross(&up).norm() == 0.0 {
            return Err(RenderError::InvalidCamera(
                "eye, target and up must not be collinear".into(),
            ));
        }
        let back = -forward.normalize();
        let right = up.cross(&back).normalize();
        let true_up = back.cross(&right);
        let m = Matrix3::from_columns(&[right, true_up, back]);
        let orientation = UnitQuaternion::from_matrix(&m);
        Self::new(eye, orientation, vertical_fov, near, far)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let q = self.orientation.quaternion();
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(RenderError::InvalidCamera(format!(
                "orientation quaternion has norm {}",
                q.norm()
            )));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(RenderError::InvalidCamera(format!(
                "need 0 < near < far, got near {} far {}",
                self.near, self.far
            )));
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < 180.0) {
            return Err(RenderError::InvalidCamera(format!(
                "vertical_fov {} outside (0, 180)",
                self.vertical_fov
            )));
        }
        if !self.position.iter().all(|v| v.is_finite()) {
            return Err(RenderError::InvalidCamera("position is not finite".into()));
        }
        Ok(())
    }

    /// The camera rotated by `angle_deg` about `axis` through `center`,
    /// keeping its aim relative to the scene.
    pub fn orbit(&self, center: Point3<f64>, axis: Vector3<f64>, angle_deg: f64) -> Self {
        let rot = UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle_deg.to_radians());
        Self {
            position: center + rot * (self.position - center),
            orientation: rot * self.orientation,
            ..*self
        }
    }

    /// Serialized as position (3), quaternion w,x,y,z (4), vertical fov,
    /// near, far and the image aspect ratio the camera was used with.
    pub fn to_wire(&self, aspect: f64) -> [f64; CAMERA_WIRE_LEN] {
        let q = self.orientation.quaternion();
        [
            self.position.x,
            self.position.y,
            self.position.z,
            q.w,
            q.i,
            q.j,
            q.k,
            self.vertical_fov,
            self.near,
            self.far,
            aspect,
        ]
    }

    /// Inverse of [`to_wire`](Self::to_wire) for the first ten values.
    pub fn from_wire(v: &[f64]) -> Result<Self, RenderError> {
        if v.len() < 10 {
            return Err(RenderError::InvalidCamera(format!("{} camera values, need 10", v.len())));
        }
        let q = Quaternion::new(v[3], v[4], v[5], v[6]);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(RenderError::InvalidCamera(format!(
                "orientation quaternion has norm {}",
                q.norm()
            )));
        }
        Self::new(
            Point3::new(v[0], v[1], v[2]),
            UnitQuaternion::new_unchecked(q),
            v[7],
            v[8],
            v[9],
        )
    }

    /// Precomputed per-image projection.
    pub fn frame(&self, width: usize, height: usize) -> CameraFrame {
        CameraFrame::new(self, width, height)
    }
}

/// A camera bound to an image size, for generating and projecting rays.
#[derive(Debug, Clone, Copy)]
pub struct CameraFrame {
    pub origin: Vector3<f64>,
    to_world: Matrix3<f64>,
    to_camera: Matrix3<f64>,
    tan_half: f64,
    aspect: f64,
    width: usize,
    height: usize,
    pub near: f64,
    pub far: f64,
}

impl CameraFrame {
    fn new(cam: &CameraPose, width: usize, height: usize) -> Self {
        let to_world = *cam.orientation.to_rotation_matrix().matrix();
        Self {
            origin: cam.position.coords,
            to_world,
            to_camera: to_world.transpose(),
            tan_half: (cam.vertical_fov.to_radians() * 0.5).tan(),
            aspect: width as f64 / height as f64,
            width,
            height,
            near: cam.near,
            far: cam.far,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn aspect(&self) -> f64 {
        self.aspect
    }

    /// Unit world-space direction of the ray through the centre of pixel
    /// `(px, py)`; row 0 is the top of the image.
    pub fn ray_dir(&self, px: usize, py: usize) -> Vector3<f64> {
        let x = ((px as f64 + 0.5) / self.width as f64 * 2.0 - 1.0) * self.tan_half * self.aspect;
        let y = (1.0 - (py as f64 + 0.5) / self.height as f64 * 2.0) * self.tan_half;
        (self.to_world * Vector3::new(x, y, -1.0)).normalize()
    }

    /// Continuous image coordinates of `p` (pixel centres at `i + 0.5`) and
    /// its ray depth; `None` behind the camera or outside the depth range.
    pub fn project_continuous(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        self.project_local(&(self.to_camera * (p - self.origin)))
    }

    fn project_local(&self, c: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        if c.z >= 0.0 {
            return None;
        }
        let depth = c.norm();
        if depth < self.near || depth > self.far {
            return None;
        }
        let x = c.x / -c.z / (self.tan_half * self.aspect);
        let y = c.y / -c.z / self.tan_half;
        let fx = (x + 1.0) * 0.5 * self.width as f64;
        let fy = (1.0 - y) * 0.5 * self.height as f64;
        Some((fx, fy, depth))
    }

    /// Pixel containing the projection of `p`, with its ray depth, or `None`
    /// if it falls behind the camera, outside the image or the depth range.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(usize, usize, f64)> {
        let (fx, fy, depth) = self.project_continuous(p)?;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (px, py) = (fx.floor() as usize, fy.floor() as usize);
        (px < self.width && py < self.height).then_some((px, py, depth))
    }
}

/// Maps points on the pixel rays of one frame into another frame's image.
pub(crate) struct Warp {
    src: CameraFrame,
    dst: CameraFrame,
    shift: Vector3<f64>,
}

impl Warp {
    pub(crate) fn new(src: CameraFrame, dst: CameraFrame) -> Self {
        Self {
            shift: dst.to_camera * (src.origin - dst.origin),
            src,
            dst,
        }
    }

    /// Direction of source pixel `(px, py)`'s ray in destination camera space.
    pub(crate) fn ray(&self, px: usize, py: usize) -> Vector3<f64> {
        self.dst.to_camera * self.src.ray_dir(px, py)
    }

    /// Destination image coordinates and depth of the point at `t` along `ray`.
    pub(crate) fn point(&self, ray: &Vector3<f64>, t: f64) -> Option<(f64, f64, f64)> {
        self.dst.project_local(&(self.shift + ray * t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraPose {
        CameraPose::look_at(
            Point3::new(0.0, 0.0, 10.0),
            Point3::origin(),
            Vector3::y(),
            45.0,
            0.1,
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn look_at_down_minus_z_is_identity() {
        let c = cam();
        assert!(c.orientation.angle() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        let c = cam();
        assert!(CameraPose::new(c.position, c.orientation, 180.0, 0.1, 1.0).is_err());
        assert!(CameraPose::new(c.position, c.orientation, 45.0, 1.0, 1.0).is_err());
        let mut w = c.to_wire(1.0);
        w[3] = 2.0;
        assert!(CameraPose::from_wire(&w).is_err());
    }

    #[test]
    fn wire_round_trip() {
        let c = cam().orbit(Point3::origin(), Vector3::y(), 30.0);
        assert_eq!(CameraPose::from_wire(&c.to_wire(1.5)).unwrap(), c);
    }

    #[test]
    fn project_inverts_ray() {
        let c = cam().orbit(Point3::new(1.0, 0.0, 0.0), Vector3::new(0.3, 1.0, 0.0), 17.0);
        let f = c.frame(64, 48);
        for (px, py) in [(0, 0), (63, 47), (20, 31)] {
            let p = f.origin + f.ray_dir(px, py) * 7.5;
            let (qx, qy, d) = f.project(&p).unwrap();
            assert_eq!((qx, qy), (px, py));
            assert!((d - 7.5).abs() < 1e-9);
        }
    }

    #[test]
    fn orbit_keeps_target_centred() {
        let c = cam().orbit(Point3::origin(), Vector3::y(), 1.0);
        let f = c.frame(65, 65);
        let (px, py, d) = f.project(&Vector3::zeros()).unwrap();
        assert_eq!((px, py), (32, 32));
        assert!((d - 10.0).abs() < 1e-9);
    }
}
