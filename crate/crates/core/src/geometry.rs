//! Planar convex-polygon primitives used by the tabletop world.
//!
//! Every object footprint (including circles, which are approximated by a
//! regular polygon) is a convex polygon with counter-clockwise vertices, so
//! overlap, directional separation and chord queries all reduce to the
//! half-plane form of the Minkowski difference.

use nalgebra::Vector2;

pub type Vec2 = Vector2<f64>;

/// Segment count used when approximating circular arcs.
pub const ARC_SEGMENTS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Vec2>,
}

impl ConvexPolygon {
    /// Builds a polygon from counter-clockwise vertices. Callers are
    /// responsible for convexity; use [`convex_hull`] for arbitrary points.
    pub fn new(vertices: Vec<Vec2>) -> Self {
        debug_assert!(vertices.len() >= 3);
        Self { vertices }
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn translated(&self, by: Vec2) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| v + by).collect(),
        }
    }

    /// Regular polygon inscribed in a circle; the first vertex lies at `phase`.
    pub fn regular(center: Vec2, radius: f64, segments: usize, phase: f64) -> Self {
        let vertices = (0..segments)
            .map(|i| {
                let a = phase + std::f64::consts::TAU * i as f64 / segments as f64;
                center + Vec2::new(radius * a.cos(), radius * a.sin())
            })
            .collect();
        Self { vertices }
    }

    /// Outward unit normal of every edge together with its support offset.
    pub fn half_planes(&self) -> impl Iterator<Item = (Vec2, f64)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let e = b - a;
            let normal = Vec2::new(e.y, -e.x).normalize();
            (normal, normal.dot(&a))
        })
    }

    pub fn support(&self, dir: &Vec2) -> f64 {
        self.vertices
            .iter()
            .map(|v| v.dot(dir))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn centroid(&self) -> Vec2 {
        let mut area = 0.0;
        let mut c = Vec2::zeros();
        let n = self.vertices.len();
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let cross = p.x * q.y - q.x * p.y;
            area += cross;
            c += (p + q) * cross;
        }
        c / (3.0 * area)
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        0.5 * (0..n)
            .map(|i| {
                let p = self.vertices[i];
                let q = self.vertices[(i + 1) % n];
                p.x * q.y - q.x * p.y
            })
            .sum::<f64>()
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        self.half_planes().all(|(n, c)| n.dot(p) <= c + 1e-12)
    }

    /// Axis-aligned bounds as `(min, max)`.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::repeat(f64::INFINITY);
        let mut hi = Vec2::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Parameter interval `[s0, s1]` of the line `origin + s * dir` that lies
    /// inside the polygon, if the line crosses it.
    pub fn chord(&self, origin: &Vec2, dir: &Vec2) -> Option<(f64, f64)> {
        let mut s0 = f64::NEG_INFINITY;
        let mut s1 = f64::INFINITY;
        for (n, c) in self.half_planes() {
            let rate = n.dot(dir);
            let slack = c - n.dot(origin);
            if rate.abs() < 1e-15 {
                if slack < 0.0 {
                    return None;
                }
                continue;
            }
            let s = slack / rate;
            if rate > 0.0 {
                s1 = s1.min(s);
            } else {
                s0 = s0.max(s);
            }
        }
        (s0 <= s1).then_some((s0, s1))
    }
}

/// Half-planes of the Minkowski difference `a - b`: the set of offsets `x`
/// such that `b + x` touches `a`.
fn difference_planes(a: &ConvexPolygon, b: &ConvexPolygon) -> Vec<(Vec2, f64)> {
    let mut planes = Vec::with_capacity(a.vertices.len() + b.vertices.len());
    for (n, _) in a.half_planes() {
        planes.push((n, a.support(&n) + b.support(&-n)));
    }
    for (n, _) in b.half_planes() {
        let n = -n;
        planes.push((n, a.support(&n) + b.support(&-n)));
    }
    planes
}

/// Separating-axis penetration depth: positive when the polygons overlap
/// (the minimum translation distance), zero or negative when separated.
pub fn penetration(a: &ConvexPolygon, b: &ConvexPolygon) -> f64 {
    difference_planes(a, b)
        .into_iter()
        .map(|(_, c)| c)
        .fold(f64::INFINITY, f64::min)
}

/// Cheap bounding-box rejection before the full separating-axis test.
pub fn bounds_overlap(a: &ConvexPolygon, b: &ConvexPolygon) -> bool {
    let (alo, ahi) = a.bounds();
    let (blo, bhi) = b.bounds();
    alo.x < bhi.x && blo.x < ahi.x && alo.y < bhi.y && blo.y < ahi.y
}

/// Smallest `t >= 0` such that `moving + t * dir` no longer overlaps
/// `fixed`. Returns 0 when the polygons are already separated. `dir` must be
/// a unit vector.
pub fn exit_distance(fixed: &ConvexPolygon, moving: &ConvexPolygon, dir: &Vec2) -> f64 {
    let planes = difference_planes(fixed, moving);
    if planes.iter().any(|&(_, c)| c <= 0.0) {
        return 0.0;
    }
    planes
        .into_iter()
        .filter_map(|(n, c)| {
            let rate = n.dot(dir);
            (rate > 1e-15).then(|| c / rate)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Andrew's monotone chain; returns a counter-clockwise hull.
pub fn convex_hull(points: &[Vec2]) -> ConvexPolygon {
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| (*a - *b).norm() < 1e-15);
    let cross = |o: &Vec2, a: &Vec2, b: &Vec2| (a - o).perp(&(b - o));
    let mut hull: Vec<Vec2> = Vec::with_capacity(pts.len() * 2);
    for p in pts.iter() {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    ConvexPolygon::new(hull)
}

/// Rectangle centered at `center` with half extents along the rotated axes.
pub fn oriented_rect(center: Vec2, half_along: f64, half_across: f64, angle: f64) -> ConvexPolygon {
    let u = Vec2::new(angle.cos(), angle.sin());
    let n = Vec2::new(-u.y, u.x);
    ConvexPolygon::new(vec![
        center - u * half_along - n * half_across,
        center + u * half_along - n * half_across,
        center + u * half_along + n * half_across,
        center - u * half_along + n * half_across,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(cx: f64, cy: f64, h: f64) -> ConvexPolygon {
        oriented_rect(Vec2::new(cx, cy), h, h, 0.0)
    }

    #[test]
    fn penetration_sign() {
        let a = square(0.0, 0.0, 1.0);
        assert!((penetration(&a, &square(1.5, 0.0, 1.0)) - 0.5).abs() < 1e-12);
        assert!(penetration(&a, &square(3.0, 0.0, 1.0)) < 0.0);
        assert!(penetration(&a, &square(2.0, 0.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn exit_along_direction() {
        let a = square(0.0, 0.0, 1.0);
        let b = square(1.5, 0.0, 1.0);
        let t = exit_distance(&a, &b, &Vec2::new(1.0, 0.0));
        assert!((t - 0.5).abs() < 1e-12);
        // pushing diagonally needs a longer travel to clear the x faces
        let d = Vec2::new(1.0, 1.0).normalize();
        let t = exit_distance(&a, &b, &d);
        assert!((t - 0.5 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(exit_distance(&a, &square(5.0, 0.0, 1.0), &d), 0.0);
    }

    #[test]
    fn chord_of_square() {
        let a = square(0.0, 0.0, 1.0);
        let (s0, s1) = a.chord(&Vec2::new(-5.0, 0.5), &Vec2::new(1.0, 0.0)).unwrap();
        assert!((s0 - 4.0).abs() < 1e-12 && (s1 - 6.0).abs() < 1e-12);
        assert!(a.chord(&Vec2::new(-5.0, 1.5), &Vec2::new(1.0, 0.0)).is_none());
    }

    #[test]
    fn hull_of_two_disks_is_capsule() {
        let mut pts = ConvexPolygon::regular(Vec2::zeros(), 1.0, 16, 0.0).vertices().to_vec();
        pts.extend(ConvexPolygon::regular(Vec2::new(4.0, 0.0), 1.0, 16, 0.0).vertices());
        let hull = convex_hull(&pts);
        assert!(hull.area() > 8.0 && hull.area() < 8.0 + std::f64::consts::PI);
        assert!(hull.contains(&Vec2::new(2.0, 0.9)));
        assert!(!hull.contains(&Vec2::new(2.0, 1.1)));
    }

    #[test]
    fn regular_polygon_centroid() {
        let p = ConvexPolygon::regular(Vec2::new(0.3, -0.2), 0.5, ARC_SEGMENTS, 0.1);
        assert!((p.centroid() - Vec2::new(0.3, -0.2)).norm() < 1e-12);
    }
}
