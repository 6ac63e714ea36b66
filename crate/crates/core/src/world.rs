//! Deterministic 2D tabletop: object spawning, quasi-static pushing and an
//! analytic parallel-jaw grasp test.

use std::f64::consts::TAU;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    bounds_overlap, convex_hull, exit_distance, oriented_rect, penetration, ConvexPolygon, Vec2,
    ARC_SEGMENTS,
};

/// Footprint overlap tolerated between resting objects (1 mm).
pub const OVERLAP_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Block,
    Triangle,
    Semicircle,
    Cylinder,
}

impl Shape {
    pub const UNKNOWN: [Shape; 3] = [Shape::Triangle, Shape::Semicircle, Shape::Cylinder];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Block => "block",
            Shape::Triangle => "triangle",
            Shape::Semicircle => "semicircle",
            Shape::Cylinder => "cylinder",
        }
    }
}

impl std::str::FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block" => Ok(Shape::Block),
            "triangle" => Ok(Shape::Triangle),
            "semicircle" => Ok(Shape::Semicircle),
            "cylinder" => Ok(Shape::Cylinder),
            other => Err(Error::Parse(format!("unknown shape `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: heading.rem_euclid(TAU),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// One rigid object on the table.
///
/// `half_extents` is shape-specific: half-width/half-depth for blocks,
/// `[r, r]` for cylinders and semicircles, base and height halves for
/// triangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: u32,
    pub shape: Shape,
    pub half_extents: [f64; 2],
    pub height: f64,
    pub pose: Pose,
    pub color: [f64; 3],
}

impl ObjectInstance {
    pub fn new(
        id: u32,
        shape: Shape,
        half_extents: [f64; 2],
        height: f64,
        pose: Pose,
        color: [f64; 3],
    ) -> Result<Self> {
        if !(half_extents[0] > 0.0 && half_extents[1] > 0.0 && height > 0.0) {
            return Err(Error::Config(format!(
                "object {id}: extents {half_extents:?} and height {height} must be positive"
            )));
        }
        Ok(Self {
            id,
            shape,
            half_extents,
            height,
            pose: Pose::new(pose.x, pose.y, pose.heading),
            color,
        })
    }

    fn local_vertices(&self) -> Vec<Vec2> {
        let [a, b] = self.half_extents;
        match self.shape {
            Shape::Block => vec![
                Vec2::new(-a, -b),
                Vec2::new(a, -b),
                Vec2::new(a, b),
                Vec2::new(-a, b),
            ],
            Shape::Triangle => vec![Vec2::new(-a, -b), Vec2::new(a, -b), Vec2::new(0.0, b)],
            Shape::Cylinder => ConvexPolygon::regular(Vec2::zeros(), a, ARC_SEGMENTS, 0.0)
                .vertices()
                .to_vec(),
            Shape::Semicircle => {
                // flat edge at y = -r/2 so the bounding box is centered on the pose
                let half = ARC_SEGMENTS / 2;
                (0..=half)
                    .map(|i| {
                        let t = std::f64::consts::PI * i as f64 / half as f64;
                        Vec2::new(a * t.cos(), a * t.sin() - 0.5 * a)
                    })
                    .collect()
            }
        }
    }

    /// World-frame footprint polygon.
    pub fn footprint(&self) -> ConvexPolygon {
        let (s, c) = self.pose.heading.sin_cos();
        let p = self.pose.position();
        ConvexPolygon::new(
            self.local_vertices()
                .into_iter()
                .map(|v| p + Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Workspace {
    pub fn centered(side: f64) -> Self {
        Self {
            min: [-side / 2.0, -side / 2.0],
            max: [side / 2.0, side / 2.0],
        }
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn depth(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
        )
    }

    pub fn contains_point(&self, p: &Vec2) -> bool {
        p.x >= self.min[0] && p.x <= self.max[0] && p.y >= self.min[1] && p.y <= self.max[1]
    }

    pub fn contains_polygon(&self, poly: &ConvexPolygon) -> bool {
        poly.vertices().iter().all(|v| self.contains_point(v))
    }
}

/// Tunable world parameters. Defaults are the desk-scale values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub workspace: Workspace,
    /// Side of the centered square in which object positions are sampled.
    pub spawn_extent: f64,
    pub spawn_budget: usize,
    pub tip_radius: f64,
    pub max_push_iterations: usize,
    pub push_distance: f64,
    pub aperture: f64,
    pub finger_width: f64,
    pub closing_margin: f64,
    pub block_half_width: (f64, f64),
    pub block_half_length: (f64, f64),
    pub object_height: (f64, f64),
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            workspace: Workspace::centered(0.256),
            spawn_extent: 0.16,
            spawn_budget: 10_000,
            tip_radius: 0.005,
            max_push_iterations: 64,
            push_distance: 0.05,
            aperture: 0.06,
            finger_width: 0.01,
            closing_margin: 0.002,
            block_half_width: (0.012, 0.018),
            block_half_length: (0.012, 0.032),
            object_height: (0.02, 0.05),
        }
    }
}

const PALETTE: [[f64; 3]; 8] = [
    [0.90, 0.20, 0.20],
    [0.20, 0.75, 0.25],
    [0.20, 0.35, 0.90],
    [0.95, 0.80, 0.15],
    [0.85, 0.40, 0.85],
    [0.15, 0.80, 0.85],
    [0.95, 0.55, 0.15],
    [0.60, 0.85, 0.30],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub workspace: Workspace,
    pub objects: Vec<ObjectInstance>,
    pub step_count: usize,
}

impl Scene {
    pub fn empty(workspace: Workspace) -> Self {
        Self {
            workspace,
            objects: Vec::new(),
            step_count: 0,
        }
    }

    /// True once every object is gone or the action cap is reached.
    pub fn is_terminal(&self, max_actions: usize) -> bool {
        self.objects.is_empty() || self.step_count >= max_actions
    }

    pub fn object(&self, id: u32) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Largest pairwise footprint penetration (negative when all separated).
    pub fn max_overlap(&self) -> f64 {
        let fps: Vec<_> = self.objects.iter().map(|o| o.footprint()).collect();
        let mut worst = f64::NEG_INFINITY;
        for i in 0..fps.len() {
            for j in i + 1..fps.len() {
                worst = worst.max(penetration(&fps[i], &fps[j]));
            }
        }
        worst
    }

    /// Drops every object not fully inside the workspace; returns removed ids.
    fn remove_out_of_view(&mut self) -> Vec<u32> {
        let ws = self.workspace;
        let mut removed = Vec::new();
        self.objects.retain(|o| {
            let keep = ws.contains_polygon(&o.footprint());
            if !keep {
                removed.push(o.id);
            }
            keep
        });
        removed
    }

    /// One JSON record per line: a header with the workspace bounds and step
    /// count, then one line per object.
    pub fn to_snapshot(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Header<'a> {
            workspace: &'a Workspace,
            step_count: usize,
        }
        let mut out = serde_json::to_string(&Header {
            workspace: &self.workspace,
            step_count: self.step_count,
        })?;
        out.push('\n');
        for o in &self.objects {
            out.push_str(&serde_json::to_string(o)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            workspace: Workspace,
            step_count: usize,
        }
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::Parse("empty scene snapshot".into()))?,
        )?;
        let mut objects = Vec::new();
        for line in lines {
            let o: ObjectInstance = serde_json::from_str(line)?;
            objects.push(ObjectInstance::new(
                o.id,
                o.shape,
                o.half_extents,
                o.height,
                o.pose,
                o.color,
            )?);
        }
        Ok(Self {
            workspace: header.workspace,
            objects,
            step_count: header.step_count,
        })
    }
}

fn sample_extents(shape: Shape, cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let mut u = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
    match shape {
        Shape::Block => [u(cfg.block_half_width), u(cfg.block_half_length)],
        Shape::Cylinder => {
            let r = u((0.015, 0.022));
            [r, r]
        }
        Shape::Semicircle => {
            let r = u((0.020, 0.026));
            [r, r]
        }
        Shape::Triangle => [u((0.018, 0.024)), u((0.015, 0.020))],
    }
}

/// Places `n_known` blocks followed by `n_unknown` objects of
/// `unknown_shape` by rejection sampling over uniform positions and headings.
pub fn spawn_scene(
    n_known: usize,
    n_unknown: usize,
    unknown_shape: Shape,
    seed: u64,
    cfg: &WorldConfig,
) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = Scene::empty(cfg.workspace);
    let mut footprints: Vec<ConvexPolygon> = Vec::new();
    let center = cfg.workspace.center();
    let half = 0.5 * cfg.spawn_extent;
    let requested = n_known + n_unknown;
    let mut rejected = 0usize;

    let shapes = std::iter::repeat_n(Shape::Block, n_known)
        .chain(std::iter::repeat_n(unknown_shape, n_unknown));
    for (id, shape) in shapes.enumerate() {
        let half_extents = sample_extents(shape, cfg, &mut rng);
        let height = {
            let (lo, hi) = cfg.object_height;
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        };
        let color = *PALETTE.choose(&mut rng).expect("palette is non-empty");
        loop {
            let pose = Pose::new(
                center.x + rng.random_range(-half..=half),
                center.y + rng.random_range(-half..=half),
                rng.random_range(0.0..TAU),
            );
            let obj = ObjectInstance::new(id as u32, shape, half_extents, height, pose, color)?;
            let fp = obj.footprint();
            let fits = cfg.workspace.contains_polygon(&fp)
                && footprints
                    .iter()
                    .all(|other| !bounds_overlap(&fp, other) || penetration(&fp, other) <= 0.0);
            if fits {
                footprints.push(fp);
                scene.objects.push(obj);
                break;
            }
            rejected += 1;
            if rejected >= cfg.spawn_budget {
                return Err(Error::PlacementBudgetExhausted {
                    attempts: rejected,
                    requested,
                });
            }
        }
    }
    Ok(scene)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushCommand {
    pub start: Vec2,
    pub direction_angle: f64,
    pub distance: f64,
}

impl PushCommand {
    pub fn new(start: Vec2, direction_angle: f64, distance: f64) -> Result<Self> {
        if !(distance > 0.0 && distance.is_finite()) {
            return Err(Error::Config(format!("push distance {distance} must be positive")));
        }
        Ok(Self {
            start,
            direction_angle: direction_angle.rem_euclid(TAU),
            distance,
        })
    }

    pub fn direction(&self) -> Vec2 {
        Vec2::new(self.direction_angle.cos(), self.direction_angle.sin())
    }

    pub fn end(&self) -> Vec2 {
        self.start + self.direction() * self.distance
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PushReport {
    /// Ids whose pose changed, in scene order.
    pub moved: Vec<u32>,
    /// Ids pushed (partly) out of the workspace and dropped from the scene.
    pub removed: Vec<u32>,
    /// Pairwise resolution passes used for chained contacts.
    pub iterations: usize,
}

/// Swept region of the pusher tip.
pub fn push_capsule(cmd: &PushCommand, tip_radius: f64) -> ConvexPolygon {
    let mut pts = ConvexPolygon::regular(cmd.start, tip_radius, 16, 0.0)
        .vertices()
        .to_vec();
    pts.extend(ConvexPolygon::regular(cmd.end(), tip_radius, 16, 0.0).vertices());
    convex_hull(&pts)
}

/// Quasi-static translation-only push: objects touched by the swept tip are
/// carried along the push direction until clear of it, and chained contacts
/// are resolved by pairwise projection along the same direction.
pub fn apply_push(scene: &Scene, cmd: &PushCommand, cfg: &WorldConfig) -> (Scene, PushReport) {
    let mut next = scene.clone();
    next.step_count += 1;
    let dir = cmd.direction();
    let capsule = push_capsule(cmd, cfg.tip_radius);
    let n = next.objects.len();
    let mut fps: Vec<ConvexPolygon> = next.objects.iter().map(|o| o.footprint()).collect();
    let mut offsets = vec![0.0f64; n];

    for i in 0..n {
        if bounds_overlap(&capsule, &fps[i]) && penetration(&capsule, &fps[i]) > 0.0 {
            let t = exit_distance(&capsule, &fps[i], &dir);
            offsets[i] += t;
            fps[i] = fps[i].translated(dir * t);
        }
    }

    let mut iterations = 0;
    if offsets.iter().any(|&t| t > 0.0) {
        while iterations < cfg.max_push_iterations {
            iterations += 1;
            let mut changed = false;
            for i in 0..n {
                for j in i + 1..n {
                    if !bounds_overlap(&fps[i], &fps[j]) || penetration(&fps[i], &fps[j]) <= 1e-9 {
                        continue;
                    }
                    // the object that has not moved yet is the one being
                    // pushed; otherwise the one further along the push
                    let mover = match (offsets[i] > 0.0, offsets[j] > 0.0) {
                        (true, false) => j,
                        (false, true) => i,
                        _ => {
                            let pi = fps[i].centroid().dot(&dir);
                            let pj = fps[j].centroid().dot(&dir);
                            if pi > pj {
                                i
                            } else {
                                j
                            }
                        }
                    };
                    let fixed = if mover == i { j } else { i };
                    let t = exit_distance(&fps[fixed], &fps[mover], &dir);
                    if t > 0.0 {
                        offsets[mover] += t;
                        fps[mover] = fps[mover].translated(dir * t);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }

    let mut moved = Vec::new();
    for (obj, &t) in next.objects.iter_mut().zip(&offsets) {
        if t > 0.0 {
            obj.pose.x += dir.x * t;
            obj.pose.y += dir.y * t;
            moved.push(obj.id);
        }
    }
    let removed = next.remove_out_of_view();
    (
        next,
        PushReport {
            moved,
            removed,
            iterations,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspCommand {
    pub center: Vec2,
    /// Orientation of the closing axis.
    pub angle: f64,
    pub aperture: f64,
    pub finger_width: f64,
    pub descend_height: f64,
}

impl GraspCommand {
    pub fn new(
        center: Vec2,
        angle: f64,
        aperture: f64,
        finger_width: f64,
        descend_height: f64,
    ) -> Result<Self> {
        if !(aperture > finger_width && finger_width > 0.0) {
            return Err(Error::Config(format!(
                "gripper needs aperture ({aperture}) > finger width ({finger_width}) > 0"
            )));
        }
        Ok(Self {
            center,
            angle: angle.rem_euclid(TAU),
            aperture,
            finger_width,
            descend_height,
        })
    }

    pub fn closing_axis(&self) -> Vec2 {
        Vec2::new(self.angle.cos(), self.angle.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraspFailure {
    NothingBetweenFingers,
    MultipleObjects,
    TooWide,
    FingerCollision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraspOutcome {
    pub success: bool,
    pub grasped: Option<u32>,
    pub failure: Option<GraspFailure>,
}

/// Analytic parallel-jaw grasp. The jaws open to `aperture` along the
/// closing axis through the grasp center; the grasp succeeds when exactly
/// one object lies between them, it fits with `closing_margin` to spare, and
/// the finger sweeps clear every other object.
pub fn apply_grasp(scene: &Scene, cmd: &GraspCommand, cfg: &WorldConfig) -> (Scene, GraspOutcome) {
    let mut next = scene.clone();
    next.step_count += 1;
    let fail = |next: Scene, why| {
        (
            next,
            GraspOutcome {
                success: false,
                grasped: None,
                failure: Some(why),
            },
        )
    };
    let axis = cmd.closing_axis();
    let half = 0.5 * cmd.aperture;
    let fps: Vec<ConvexPolygon> = next.objects.iter().map(|o| o.footprint()).collect();

    let mut target: Option<(usize, f64, f64)> = None;
    for (i, fp) in fps.iter().enumerate() {
        if let Some((s0, s1)) = fp.chord(&cmd.center, &axis) {
            if s1 >= -half && s0 <= half {
                if target.is_some() {
                    return fail(next, GraspFailure::MultipleObjects);
                }
                target = Some((i, s0, s1));
            }
        }
    }
    let Some((idx, s0, s1)) = target else {
        return fail(next, GraspFailure::NothingBetweenFingers);
    };
    if s0 < -half || s1 > half || s1 - s0 > cmd.aperture - cfg.closing_margin {
        return fail(next, GraspFailure::TooWide);
    }

    // finger sweeps from the open position to the object's chord ends
    let half_w = 0.5 * cmd.finger_width;
    let sweep = |a: f64, b: f64| {
        let mid = cmd.center + axis * (0.5 * (a + b));
        oriented_rect(mid, 0.5 * (b - a).max(1e-9), half_w, cmd.angle)
    };
    let fingers = [sweep(s1, half), sweep(-half, s0)];
    for (i, fp) in fps.iter().enumerate() {
        if i == idx {
            continue;
        }
        if fingers
            .iter()
            .any(|f| bounds_overlap(f, fp) && penetration(f, fp) > 0.0)
        {
            return fail(next, GraspFailure::FingerCollision);
        }
    }

    let grasped = next.objects.remove(idx).id;
    (
        next,
        GraspOutcome {
            success: true,
            grasped: Some(grasped),
            failure: None,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cylinder(id: u32, x: f64, y: f64, r: f64) -> ObjectInstance {
        ObjectInstance::new(id, Shape::Cylinder, [r, r], 0.03, Pose::new(x, y, 0.0), [1.0, 0.0, 0.0])
            .unwrap()
    }

    fn block(id: u32, x: f64, y: f64, hx: f64, hy: f64, heading: f64) -> ObjectInstance {
        ObjectInstance::new(id, Shape::Block, [hx, hy], 0.03, Pose::new(x, y, heading), [0.0, 1.0, 0.0])
            .unwrap()
    }

    fn scene_of(objects: Vec<ObjectInstance>) -> Scene {
        Scene {
            workspace: Workspace::centered(0.256),
            objects,
            step_count: 0,
        }
    }

    #[test]
    fn spawn_ten_blocks_without_overlap() {
        let scene = spawn_scene(10, 0, Shape::Block, 7, &WorldConfig::default()).unwrap();
        assert_eq!(scene.objects.len(), 10);
        assert!(scene.objects.iter().all(|o| o.shape == Shape::Block));
        assert!(scene.max_overlap() <= OVERLAP_TOLERANCE);
    }

    #[test]
    fn spawn_empty_scene_is_terminal() {
        let scene = spawn_scene(0, 0, Shape::Cylinder, 1, &WorldConfig::default()).unwrap();
        assert!(scene.objects.is_empty());
        assert!(scene.is_terminal(50));
    }

    #[test]
    fn spawn_mixed_scene() {
        let scene = spawn_scene(1, 5, Shape::Cylinder, 3, &WorldConfig::default()).unwrap();
        let blocks = scene.objects.iter().filter(|o| o.shape == Shape::Block).count();
        let cyl = scene.objects.iter().filter(|o| o.shape == Shape::Cylinder).count();
        assert_eq!((blocks, cyl), (1, 5));
    }

    #[test]
    fn spawn_is_seeded() {
        let cfg = WorldConfig::default();
        assert_eq!(
            spawn_scene(4, 2, Shape::Triangle, 11, &cfg).unwrap(),
            spawn_scene(4, 2, Shape::Triangle, 11, &cfg).unwrap()
        );
    }

    #[test]
    fn spawn_budget_exhaustion() {
        let cfg = WorldConfig {
            workspace: Workspace::centered(0.05),
            spawn_extent: 0.05,
            ..WorldConfig::default()
        };
        let err = spawn_scene(10, 0, Shape::Block, 0, &cfg).unwrap_err();
        assert!(matches!(err, Error::PlacementBudgetExhausted { attempts: 10_000, .. }));
    }

    #[test]
    fn terminal_conditions() {
        let s = scene_of(vec![cylinder(0, 0.0, 0.0, 0.02), cylinder(1, 0.06, 0.0, 0.02), cylinder(2, -0.06, 0.0, 0.02)]);
        assert!(!s.is_terminal(50));
        let capped = Scene { step_count: 50, ..s };
        assert!(capped.is_terminal(50));
    }

    #[test]
    fn heading_is_normalized() {
        let o = block(0, 0.0, 0.0, 0.01, 0.01, -0.5);
        assert!(o.pose.heading >= 0.0 && o.pose.heading < TAU);
        assert!(ObjectInstance::new(0, Shape::Block, [0.0, 0.01], 0.02, Pose::new(0.0, 0.0, 0.0), [0.0; 3]).is_err());
    }

    #[test]
    fn push_through_empty_space_is_noop() {
        let cfg = WorldConfig::default();
        let s = scene_of(vec![cylinder(0, 0.08, 0.08, 0.02)]);
        let cmd = PushCommand::new(Vec2::new(-0.08, -0.08), 0.0, 0.05).unwrap();
        let (next, report) = apply_push(&s, &cmd, &cfg);
        assert!(report.moved.is_empty() && report.removed.is_empty());
        assert_eq!(next.objects, s.objects);
        assert_eq!(next.step_count, 1);
    }

    #[test]
    fn push_chains_into_touching_blocks() {
        let cfg = WorldConfig::default();
        let s = scene_of(vec![
            block(0, 0.0, 0.0, 0.015, 0.015, 0.0),
            block(1, 0.030, 0.0, 0.015, 0.015, 0.0),
        ]);
        let cmd = PushCommand::new(Vec2::new(-0.04, 0.0), 0.0, 0.05).unwrap();
        let (next, report) = apply_push(&s, &cmd, &cfg);
        assert_eq!(report.moved, vec![0, 1]);
        // tip ends at x = 0.01, so block 0 rests with its back face at 0.015
        assert!((next.objects[0].pose.x - 0.030).abs() < 1e-6);
        assert!((next.objects[1].pose.x - 0.060).abs() < 1e-6);
        assert!(next.max_overlap() <= OVERLAP_TOLERANCE);
    }

    #[test]
    fn push_out_of_workspace_removes() {
        let cfg = WorldConfig::default();
        let s = scene_of(vec![cylinder(0, 0.10, 0.0, 0.02)]);
        let cmd = PushCommand::new(Vec2::new(0.075, 0.0), 0.0, 0.05).unwrap();
        let (next, report) = apply_push(&s, &cmd, &cfg);
        assert_eq!(report.removed, vec![0]);
        assert!(next.objects.is_empty());
    }

    #[test]
    fn grasp_over_empty_table_fails() {
        let cfg = WorldConfig::default();
        let s = scene_of(vec![cylinder(0, 0.08, 0.08, 0.02)]);
        let cmd = GraspCommand::new(Vec2::new(-0.05, -0.05), 0.0, 0.06, 0.01, 0.0).unwrap();
        let (next, out) = apply_grasp(&s, &cmd, &cfg);
        assert!(!out.success);
        assert_eq!(out.failure, Some(GraspFailure::NothingBetweenFingers));
        assert_eq!(next.objects, s.objects);
    }

    #[test]
    fn grasp_isolated_cylinder() {
        let cfg = WorldConfig::default();
        let s = scene_of(vec![cylinder(4, 0.01, -0.02, 0.02)]);
        let cmd = GraspCommand::new(Vec2::new(0.01, -0.02), 0.3, 0.06, 0.01, 0.03).unwrap();
        let (next, out) = apply_grasp(&s, &cmd, &cfg);
        assert!(out.success);
        assert_eq!(out.grasped, Some(4));
        assert!(next.objects.is_empty());
    }

    #[test]
    fn grasp_too_wide_block() {
        let cfg = WorldConfig::default();
        let s = scene_of(vec![block(0, 0.0, 0.0, 0.035, 0.01, 0.0)]);
        let cmd = GraspCommand::new(Vec2::zeros(), 0.0, 0.06, 0.01, 0.03).unwrap();
        let (_, out) = apply_grasp(&s, &cmd, &cfg);
        assert!(!out.success);
        // the same block fits across its short side
        let cmd = GraspCommand::new(Vec2::zeros(), std::f64::consts::FRAC_PI_2, 0.06, 0.01, 0.03).unwrap();
        assert!(apply_grasp(&s, &cmd, &cfg).1.success);
    }

    #[test]
    fn grasp_blocked_by_neighbour() {
        let cfg = WorldConfig::default();
        // neighbour sits beside the target, clear of the closing line but
        // under the finger sweep
        let s = scene_of(vec![
            cylinder(0, 0.0, 0.0, 0.015),
            block(1, 0.025, 0.007, 0.004, 0.004, 0.0),
        ]);
        let cmd = GraspCommand::new(Vec2::zeros(), 0.0, 0.06, 0.01, 0.03).unwrap();
        let (_, out) = apply_grasp(&s, &cmd, &cfg);
        assert_eq!(out.failure, Some(GraspFailure::FingerCollision));
        // two objects on the closing line
        let s = scene_of(vec![cylinder(0, -0.012, 0.0, 0.01), cylinder(1, 0.012, 0.0, 0.01)]);
        let (_, out) = apply_grasp(&s, &cmd, &cfg);
        assert_eq!(out.failure, Some(GraspFailure::MultipleObjects));
    }

    #[test]
    fn snapshot_round_trip() {
        let s = spawn_scene(3, 2, Shape::Semicircle, 5, &WorldConfig::default()).unwrap();
        let text = s.to_snapshot().unwrap();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(Scene::from_snapshot(&text).unwrap(), s);
    }
}
