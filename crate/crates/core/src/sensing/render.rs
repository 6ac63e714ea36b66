use crate::geometry::Vec2;
use crate::world::Scene;

use super::camera::{CameraModel, Vec3};

pub const TABLE_COLOR: [f32; 3] = [0.30, 0.30, 0.30];

/// Per-pixel nearest-surface depth (distance along the unit pixel ray,
/// `INFINITY` where nothing is hit) and color, row-major `(rows, cols)`.
#[derive(Debug, Clone)]
pub struct DepthView {
    pub camera: CameraModel,
    pub depth: Vec<f64>,
    pub color: Vec<[f32; 3]>,
}

impl DepthView {
    pub fn rows(&self) -> usize {
        self.camera.image_size.0
    }

    pub fn cols(&self) -> usize {
        self.camera.image_size.1
    }

    /// World point seen at pixel `(row, col)`, if any.
    pub fn surface_point(&self, row: usize, col: usize) -> Option<Vec3> {
        let t = self.depth[row * self.cols() + col];
        t.is_finite().then(|| {
            let d = self.camera.ray(col as f64 + 0.5, row as f64 + 0.5);
            self.camera.eye + d * t
        })
    }
}

/// An object as an extruded convex prism.
struct Prism {
    planes: Vec<(Vec2, f64)>,
    lo: Vec2,
    hi: Vec2,
    height: f64,
    color: [f32; 3],
}

impl Prism {
    /// Entry distance of the ray into the prism (Cyrus-Beck clipping).
    fn entry(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        let mut clip = |rate: f64, slack: f64| -> bool {
            // constraint: rate * t <= slack
            if rate.abs() < 1e-15 {
                return slack >= 0.0;
            }
            let t = slack / rate;
            if rate > 0.0 {
                t1 = t1.min(t);
            } else {
                t0 = t0.max(t);
            }
            t0 <= t1
        };
        // bounding box first
        if !(clip(d.x, self.hi.x - o.x)
            && clip(-d.x, o.x - self.lo.x)
            && clip(d.y, self.hi.y - o.y)
            && clip(-d.y, o.y - self.lo.y)
            && clip(d.z, self.height - o.z)
            && clip(-d.z, o.z))
        {
            return None;
        }
        for (n, c) in &self.planes {
            if !clip(n.x * d.x + n.y * d.y, c - (n.x * o.x + n.y * o.y)) {
                return None;
            }
        }
        Some(t0)
    }
}

/// Ray-casts every pixel center against the object prisms and the table
/// plane, keeping the nearest surface (z-buffer semantics): surfaces behind
/// taller objects are never attributed to this view.
pub fn render_view(scene: &Scene, cam: &CameraModel) -> DepthView {
    let prisms: Vec<Prism> = scene
        .objects
        .iter()
        .map(|o| {
            let fp = o.footprint();
            let (lo, hi) = fp.bounds();
            Prism {
                planes: fp.half_planes().collect(),
                lo,
                hi,
                height: o.height,
                color: o.color.map(|c| c as f32),
            }
        })
        .collect();
    let (rows, cols) = cam.image_size;
    let rot_t = cam.rotation().transpose();
    let (cx, cy) = cam.principal_point();
    let mut depth = vec![f64::INFINITY; rows * cols];
    let mut color = vec![[0.0f32; 3]; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let local = Vec3::new(
                (c as f64 + 0.5 - cx) / cam.focal,
                (r as f64 + 0.5 - cy) / cam.focal,
                1.0,
            );
            let d = (rot_t * local).normalize();
            let mut best = f64::INFINITY;
            let mut best_color = [0.0f32; 3];
            if d.z < 0.0 {
                best = -cam.eye.z / d.z;
                best_color = TABLE_COLOR;
            }
            for p in &prisms {
                if let Some(t) = p.entry(&cam.eye, &d) {
                    if t < best {
                        best = t;
                        best_color = p.color;
                    }
                }
            }
            depth[r * cols + c] = best;
            color[r * cols + c] = best_color;
        }
    }
    DepthView {
        camera: cam.clone(),
        depth,
        color,
    }
}
