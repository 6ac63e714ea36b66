use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::world::Workspace;

pub type Vec3 = Vector3<f64>;

/// Pinhole depth camera. Pixel coordinates are continuous `(u, v)` with `u`
/// along image columns (camera right) and `v` along rows (camera down); the
/// principal point sits at the image center.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub eye: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// `(rows, cols)`.
    pub image_size: (usize, usize),
    pub focal: f64,
}

impl CameraModel {
    pub fn new(eye: Vec3, look_at: Vec3, up: Vec3, image_size: (usize, usize), focal: f64) -> Result<Self> {
        if (eye - look_at).norm() < 1e-12 {
            return Err(Error::Config("camera eye coincides with look_at".into()));
        }
        if !(focal > 0.0) {
            return Err(Error::Config(format!("camera focal {focal} must be positive")));
        }
        let forward = (look_at - eye).normalize();
        if forward.cross(&up).norm() < 1e-9 {
            return Err(Error::Config("camera up vector parallel to the view direction".into()));
        }
        Ok(Self {
            eye,
            look_at,
            up: up.normalize(),
            image_size,
            focal,
        })
    }

    /// Camera aimed at `look_at` whose focal length is chosen so that the
    /// workspace (up to `max_height` above the table) fills the image with a
    /// small margin.
    pub fn framing(
        eye: Vec3,
        look_at: Vec3,
        up: Vec3,
        image_size: (usize, usize),
        workspace: &Workspace,
        max_height: f64,
    ) -> Result<Self> {
        let mut cam = Self::new(eye, look_at, up, image_size, 1.0)?;
        let r = cam.rotation();
        let (mut mx, mut my) = (0.0f64, 0.0f64);
        for &x in &workspace_xs(workspace) {
            for &y in &workspace_ys(workspace) {
                for z in [0.0, max_height] {
                    let pc = r * (Vec3::new(x, y, z) - eye);
                    mx = mx.max((pc.x / pc.z).abs());
                    my = my.max((pc.y / pc.z).abs());
                }
            }
        }
        let (rows, cols) = image_size;
        cam.focal = 0.98 * (0.5 * cols as f64 / mx).min(0.5 * rows as f64 / my);
        Ok(cam)
    }

    /// World-to-camera rotation; rows are the camera right, down and forward
    /// axes.
    pub fn rotation(&self) -> Matrix3<f64> {
        let forward = (self.look_at - self.eye).normalize();
        let right = forward.cross(&self.up).normalize();
        let down = forward.cross(&right);
        Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()])
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (0.5 * self.image_size.1 as f64, 0.5 * self.image_size.0 as f64)
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        let (cx, cy) = self.principal_point();
        Matrix3::new(self.focal, 0.0, cx, 0.0, self.focal, cy, 0.0, 0.0, 1.0)
    }

    /// Unit world-frame ray direction through a (continuous) pixel.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        let (cx, cy) = self.principal_point();
        let local = Vec3::new((u - cx) / self.focal, (v - cy) / self.focal, 1.0);
        (self.rotation().transpose() * local).normalize()
    }

    /// Homography taking table-plane points `(x, y, 1)` to homogeneous pixels.
    pub fn table_homography(&self) -> Matrix3<f64> {
        let r = self.rotation();
        let t = -(r * self.eye);
        let mut m = Matrix3::zeros();
        m.set_column(0, &r.column(0));
        m.set_column(1, &r.column(1));
        m.set_column(2, &t);
        self.intrinsics() * m
    }

    /// Pixel to table-plane point through the inverse homography.
    pub fn pixel_to_table(&self, u: f64, v: f64) -> Result<Vec2> {
        let h_inv = self
            .table_homography()
            .try_inverse()
            .ok_or(Error::HorizonRay { u, v })?;
        let p = h_inv * Vec3::new(u, v, 1.0);
        // p = (x, y, 1) / depth; a non-positive scale means the ray points
        // away from (or parallel to) the table
        if p.z <= 1e-12 {
            return Err(Error::HorizonRay { u, v });
        }
        Ok(Vec2::new(p.x / p.z, p.y / p.z))
    }

    /// Table-plane point to the pixel it projects to.
    pub fn table_to_pixel(&self, point: &Vec2) -> Result<(f64, f64)> {
        let p = self.table_homography() * Vec3::new(point.x, point.y, 1.0);
        if p.z <= 1e-12 {
            return Err(Error::HorizonRay { u: point.x, v: point.y });
        }
        Ok((p.x / p.z, p.y / p.z))
    }

    pub fn project(&self, point: &Vec3) -> Option<(f64, f64)> {
        let pc = self.rotation() * (point - self.eye);
        if pc.z <= 0.0 {
            return None;
        }
        let (cx, cy) = self.principal_point();
        Some((cx + self.focal * pc.x / pc.z, cy + self.focal * pc.y / pc.z))
    }
}

fn workspace_xs(ws: &Workspace) -> [f64; 2] {
    [ws.min[0], ws.max[0]]
}

fn workspace_ys(ws: &Workspace) -> [f64; 2] {
    [ws.min[1], ws.max[1]]
}

/// Tallest object the default cameras are framed for.
pub const FRAMING_HEIGHT: f64 = 0.10;

/// Two cameras at `elevation_deg` on opposite sides (-x and +x) of the
/// workspace, both aimed at its center.
pub fn dual_cameras(workspace: &Workspace, image_side: usize, elevation_deg: f64) -> Result<[CameraModel; 2]> {
    let c = workspace.center();
    let target = Vec3::new(c.x, c.y, 0.0);
    let range = 0.64;
    let el = elevation_deg.to_radians();
    let make = |sign: f64| {
        let eye = target + Vec3::new(sign * range * el.cos(), 0.0, range * el.sin());
        CameraModel::framing(
            eye,
            target,
            Vec3::new(0.0, 0.0, 1.0),
            (image_side, image_side),
            workspace,
            FRAMING_HEIGHT,
        )
    };
    Ok([make(-1.0)?, make(1.0)?])
}

/// Straight-down camera placed far away so that its projection is close to
/// orthographic over the workspace.
pub fn overhead_camera(workspace: &Workspace, image_side: usize) -> Result<CameraModel> {
    let c = workspace.center();
    CameraModel::framing(
        Vec3::new(c.x, c.y, 50.0),
        Vec3::new(c.x, c.y, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        (image_side, image_side),
        workspace,
        0.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oblique() -> CameraModel {
        dual_cameras(&Workspace::centered(0.256), 192, 45.0).unwrap()[0].clone()
    }

    #[test]
    fn principal_point_hits_optical_axis() {
        let cam = oblique();
        let (cx, cy) = cam.principal_point();
        let p = cam.pixel_to_table(cx, cy).unwrap();
        // independent oracle: intersect eye + t * forward with z = 0
        let f = (cam.look_at - cam.eye).normalize();
        let t = -cam.eye.z / f.z;
        let hit = cam.eye + f * t;
        assert!((p - Vec2::new(hit.x, hit.y)).norm() < 1e-9);
        assert!(p.norm() < 1e-9, "axis aimed at the workspace center");
    }

    #[test]
    fn horizon_ray_rejected() {
        let cam = CameraModel::new(
            Vec3::new(0.0, 0.0, 0.5),
            Vec3::new(1.0, 0.0, 0.5),
            Vec3::new(0.0, 0.0, 1.0),
            (100, 100),
            50.0,
        )
        .unwrap();
        // upper half of the image looks above the horizon
        assert!(matches!(cam.pixel_to_table(50.0, 10.0), Err(Error::HorizonRay { .. })));
        assert!(cam.pixel_to_table(50.0, 90.0).is_ok());
    }

    #[test]
    fn degenerate_cameras_rejected() {
        let e = Vec3::new(0.0, 0.0, 1.0);
        assert!(CameraModel::new(e, e, Vec3::y(), (10, 10), 5.0).is_err());
        assert!(CameraModel::new(e, Vec3::zeros(), Vec3::y(), (10, 10), 0.0).is_err());
    }

    #[test]
    fn homography_agrees_with_ray_cast() {
        let cam = oblique();
        for (u, v) in [(10.0, 150.0), (96.0, 96.0), (180.5, 40.25)] {
            let d = cam.ray(u, v);
            let t = -cam.eye.z / d.z;
            let hit = cam.eye + d * t;
            let p = cam.pixel_to_table(u, v).unwrap();
            assert!((p - Vec2::new(hit.x, hit.y)).norm() < 1e-9);
        }
    }
}
