//! Rotation-stack inference, greedy and exploratory action selection, and
//! the mapping from a discrete action to a world command.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::qfcn::{Network, TargetNetwork, Tensor};
use crate::sensing::{HeightmapState, STATE_CHANNELS};
use crate::world::{GraspCommand, PushCommand, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Push,
    Grasp,
}

impl Primitive {
    pub const ALL: [Primitive; 2] = [Primitive::Push, Primitive::Grasp];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Push => "push",
            Primitive::Grasp => "grasp",
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which primitives the agent may execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionSet {
    PushGrasp,
    GraspOnly,
}

impl ActionSet {
    pub fn allows(self, p: Primitive) -> bool {
        matches!((self, p), (ActionSet::PushGrasp, _) | (ActionSet::GraspOnly, Primitive::Grasp))
    }

    pub fn primitives(self) -> &'static [Primitive] {
        match self {
            ActionSet::PushGrasp => &Primitive::ALL,
            ActionSet::GraspOnly => &[Primitive::Grasp],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionSet::PushGrasp => "push-grasp",
            ActionSet::GraspOnly => "grasp-only",
        }
    }
}

impl FromStr for ActionSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "push-grasp" => Ok(ActionSet::PushGrasp),
            "grasp-only" => Ok(ActionSet::GraspOnly),
            _ => Err(Error::Config(format!("unknown action set `{s}`"))),
        }
    }
}

/// Q values indexed `[primitive][rotation bin][u][v]`, all in the world
/// (unrotated) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QMaps {
    pub n_rotations: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl QMaps {
    pub fn new(n_rotations: usize, rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != 2 * n_rotations * rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} Q values for 2x{n_rotations}x{rows}x{cols}",
                values.len()
            )));
        }
        Ok(Self {
            n_rotations,
            rows,
            cols,
            values,
        })
    }

    pub fn offset(&self, p: Primitive, bin: usize, u: usize, v: usize) -> usize {
        ((p.index() * self.n_rotations + bin) * self.rows + u) * self.cols + v
    }

    pub fn get(&self, p: Primitive, bin: usize, u: usize, v: usize) -> f32 {
        self.values[self.offset(p, bin, u, v)]
    }

    pub fn map(&self, p: Primitive, bin: usize) -> &[f32] {
        let n = self.rows * self.cols;
        let start = (p.index() * self.n_rotations + bin) * n;
        &self.values[start..start + n]
    }

    /// Largest value over the allowed primitives.
    pub fn max(&self, actions: ActionSet) -> f32 {
        let per = self.n_rotations * self.rows * self.cols;
        actions
            .primitives()
            .iter()
            .flat_map(|p| &self.values[p.index() * per..(p.index() + 1) * per])
            .copied()
            .fold(f32::NEG_INFINITY, f32::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub primitive: Primitive,
    pub rotation_bin: usize,
    pub pixel: (usize, usize),
    pub explored: bool,
}

/// One bilinear sample: four source indices and weights.
pub type Taps = [(u32, f32); 4];

/// Precomputed resampling tables between the world grid and each rotated
/// frame. Rotating by `-k * 360 / n` about the grid center means the rotated
/// image at `p` shows the world at `c + R(k * 360 / n) (p - c)`.
#[derive(Debug, Clone)]
pub struct RotationGrid {
    pub rows: usize,
    pub cols: usize,
    pub n_rotations: usize,
    /// Per bin: world-grid taps for each rotated pixel (zero outside).
    to_rotated: Vec<Vec<Taps>>,
    /// Per bin: rotated-frame taps for each world pixel (edge clamped).
    to_world: Vec<Vec<Taps>>,
}

fn snap(f: f64) -> f64 {
    let r = f.round();
    if (f - r).abs() < 1e-9 {
        r
    } else {
        f
    }
}

fn bilinear_taps(fu: f64, fv: f64, rows: usize, cols: usize, clamp: bool) -> Taps {
    let (fu, fv) = if clamp {
        (fu.clamp(0.0, (rows - 1) as f64), fv.clamp(0.0, (cols - 1) as f64))
    } else {
        (fu, fv)
    };
    let (fu, fv) = (snap(fu), snap(fv));
    let (u0, v0) = (fu.floor(), fv.floor());
    let (wu, wv) = (fu - u0, fv - v0);
    let mut taps = [(0u32, 0.0f32); 4];
    let corners = [
        (u0, v0, (1.0 - wu) * (1.0 - wv)),
        (u0, v0 + 1.0, (1.0 - wu) * wv),
        (u0 + 1.0, v0, wu * (1.0 - wv)),
        (u0 + 1.0, v0 + 1.0, wu * wv),
    ];
    for (slot, &(u, v, w)) in taps.iter_mut().zip(&corners) {
        let inside = u >= 0.0 && v >= 0.0 && (u as usize) < rows && (v as usize) < cols;
        if inside && w > 0.0 {
            *slot = ((u as usize * cols + v as usize) as u32, w as f32);
        }
    }
    taps
}

impl RotationGrid {
    pub fn new(rows: usize, cols: usize, n_rotations: usize) -> Result<Self> {
        if n_rotations == 0 {
            return Err(Error::Config("at least one rotation bin is required".into()));
        }
        let (cu, cv) = (rows as f64 / 2.0, cols as f64 / 2.0);
        let table = |angle: f64, clamp: bool| -> Vec<Taps> {
            let (s, c) = angle.sin_cos();
            let mut out = Vec::with_capacity(rows * cols);
            for u in 0..rows {
                for v in 0..cols {
                    let (du, dv) = (u as f64 + 0.5 - cu, v as f64 + 0.5 - cv);
                    let su = cu + c * du - s * dv - 0.5;
                    let sv = cv + s * du + c * dv - 0.5;
                    out.push(bilinear_taps(su, sv, rows, cols, clamp));
                }
            }
            out
        };
        let step = TAU / n_rotations as f64;
        Ok(Self {
            rows,
            cols,
            n_rotations,
            to_rotated: (0..n_rotations).map(|k| table(k as f64 * step, false)).collect(),
            to_world: (0..n_rotations).map(|k| table(-(k as f64) * step, true)).collect(),
        })
    }

    fn resample(taps: &[Taps], src: &[f32], dst: &mut [f32]) {
        for (d, t) in dst.iter_mut().zip(taps) {
            *d = t.iter().map(|&(i, w)| w * src[i as usize]).sum();
        }
    }

    /// Rotates every channel of a `(channels, rows, cols)` stack by
    /// `-bin * 360 / n` degrees, zero-padded.
    pub fn rotate(&self, x: &Tensor<f32>, bin: usize) -> Tensor<f32> {
        let n = self.rows * self.cols;
        let mut out = Tensor::zeros(x.channels, self.rows, self.cols);
        for c in 0..x.channels {
            Self::resample(&self.to_rotated[bin], &x.data[c * n..(c + 1) * n], &mut out.data[c * n..(c + 1) * n]);
        }
        out
    }

    /// Maps a rotated-frame map back onto the world grid (edge clamped).
    pub fn unrotate(&self, map: &[f32], bin: usize, out: &mut [f32]) {
        Self::resample(&self.to_world[bin], map, out);
    }

    /// Rotated-frame pixels (and weights) that make up world pixel `(u, v)`
    /// of rotation `bin`.
    pub fn world_taps(&self, bin: usize, u: usize, v: usize) -> Vec<((usize, usize), f32)> {
        self.to_world[bin][u * self.cols + v]
            .iter()
            .filter(|&&(_, w)| w > 0.0)
            .map(|&(i, w)| ((i as usize / self.cols, i as usize % self.cols), w))
            .collect()
    }
}

/// State as a `(4, rows, cols)` tensor: RGB plus validity.
pub fn state_tensor(state: &HeightmapState) -> Tensor<f32> {
    let g = &state.geometry;
    Tensor {
        channels: STATE_CHANNELS,
        rows: g.rows,
        cols: g.cols,
        data: state.to_channels(),
    }
}

/// Element `k` is the state rotated by `-k * 360 / n` about the grid center.
pub fn build_rotation_stack(state: &HeightmapState, grid: &RotationGrid) -> Vec<Tensor<f32>> {
    let x = state_tensor(state);
    (0..grid.n_rotations).map(|k| grid.rotate(&x, k)).collect()
}

/// Anything that maps a rotated input stack to a one-channel Q map.
pub trait QFunction {
    fn qmap(&self, input: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl QFunction for Network<f32> {
    fn qmap(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.forward_eval(input)
    }
}

impl QFunction for TargetNetwork<f32> {
    fn qmap(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.forward_eval(input)
    }
}

/// Runs each net on each rotation and resamples the outputs into the world
/// grid. Primitives outside `actions` are left at zero without evaluation.
pub fn evaluate_qmaps(
    push: &dyn QFunction,
    grasp: &dyn QFunction,
    stack: &[Tensor<f32>],
    grid: &RotationGrid,
    actions: ActionSet,
) -> Result<QMaps> {
    if stack.len() != grid.n_rotations {
        return Err(Error::ShapeMismatch(format!(
            "{} rotated inputs for {} bins",
            stack.len(),
            grid.n_rotations
        )));
    }
    let n = grid.rows * grid.cols;
    let mut values = vec![0.0f32; 2 * grid.n_rotations * n];
    for &p in actions.primitives() {
        let net: &dyn QFunction = match p {
            Primitive::Push => push,
            Primitive::Grasp => grasp,
        };
        for (k, x) in stack.iter().enumerate() {
            let q = net.qmap(x)?;
            if q.rows != grid.rows || q.cols != grid.cols || q.channels != 1 {
                return Err(Error::ShapeMismatch(format!(
                    "Q map {}x{}x{} on a {}x{} grid",
                    q.channels, q.rows, q.cols, grid.rows, grid.cols
                )));
            }
            let start = (p.index() * grid.n_rotations + k) * n;
            grid.unrotate(&q.data, k, &mut values[start..start + n]);
        }
    }
    QMaps::new(grid.n_rotations, grid.rows, grid.cols, values)
}

/// Global argmax over the allowed primitives; the first maximum in
/// `(primitive, bin, u, v)` order wins.
pub fn greedy_action(qmaps: &QMaps, actions: ActionSet) -> ActionSpec {
    let mut best: Option<(f32, Primitive, usize, usize, usize)> = None;
    for &p in actions.primitives() {
        for k in 0..qmaps.n_rotations {
            let map = qmaps.map(p, k);
            for (i, &q) in map.iter().enumerate() {
                if best.is_none_or(|b| q > b.0) {
                    best = Some((q, p, k, i / qmaps.cols, i % qmaps.cols));
                }
            }
        }
    }
    let (_, primitive, rotation_bin, u, v) = best.expect("Q maps are non-empty");
    ActionSpec {
        primitive,
        rotation_bin,
        pixel: (u, v),
        explored: false,
    }
}

/// Epsilon-greedy selection. Exploratory actions draw the primitive, bin
/// and a valid pixel uniformly (any pixel if none is valid).
pub fn select_action<R: Rng + ?Sized>(
    qmaps: &QMaps,
    actions: ActionSet,
    valid: &[bool],
    epsilon: f64,
    rng: &mut R,
) -> ActionSpec {
    if rng.random::<f64>() < epsilon {
        let prims = actions.primitives();
        let primitive = prims[rng.random_range(0..prims.len())];
        let rotation_bin = rng.random_range(0..qmaps.n_rotations);
        let n_valid = valid.iter().filter(|&&v| v).count();
        let idx = if n_valid == 0 {
            rng.random_range(0..qmaps.rows * qmaps.cols)
        } else {
            let pick = rng.random_range(0..n_valid);
            valid
                .iter()
                .enumerate()
                .filter(|(_, &v)| v)
                .nth(pick)
                .map(|(i, _)| i)
                .expect("pick < n_valid")
        };
        ActionSpec {
            primitive,
            rotation_bin,
            pixel: (idx / qmaps.cols, idx % qmaps.cols),
            explored: true,
        }
    } else {
        greedy_action(qmaps, actions)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WorldCommand {
    Push(PushCommand),
    Grasp(GraspCommand),
}

/// Tool angle of a rotation bin, in radians.
pub fn bin_angle(bin: usize, n_rotations: usize) -> f64 {
    TAU * bin as f64 / n_rotations as f64
}

pub fn action_to_world(
    action: &ActionSpec,
    state: &HeightmapState,
    n_rotations: usize,
    cfg: &WorldConfig,
) -> Result<WorldCommand> {
    let g = &state.geometry;
    let (u, v) = action.pixel;
    if u >= g.rows || v >= g.cols {
        return Err(Error::PixelOutOfRange {
            u,
            v,
            rows: g.rows,
            cols: g.cols,
        });
    }
    let at: Vec2 = g.cell_center(u, v);
    let angle = bin_angle(action.rotation_bin, n_rotations);
    Ok(match action.primitive {
        Primitive::Push => WorldCommand::Push(PushCommand::new(at, angle, cfg.push_distance)?),
        Primitive::Grasp => WorldCommand::Grasp(GraspCommand::new(
            at,
            angle,
            cfg.aperture,
            cfg.finger_width,
            state.height_at(u, v) as f64,
        )?),
    })
}

/// Linear from `start` at step 0 to `end` at `anneal_steps`, then constant.
pub fn anneal_epsilon(step: usize, start: f64, end: f64, anneal_steps: usize) -> f64 {
    if anneal_steps == 0 || step >= anneal_steps {
        return end;
    }
    start + (end - start) * (step as f64 / anneal_steps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_schedule_points() {
        assert_eq!(anneal_epsilon(0, 0.65, 0.1, 2000), 0.65);
        assert_eq!(anneal_epsilon(2000, 0.65, 0.1, 2000), 0.1);
        assert_eq!(anneal_epsilon(5000, 0.65, 0.1, 2000), 0.1);
        assert!((anneal_epsilon(1000, 0.65, 0.1, 2000) - 0.375).abs() < 1e-15);
    }

    #[test]
    fn bin_angles_are_exact() {
        assert_eq!(bin_angle(4, 16).to_degrees(), 90.0);
        assert_eq!(bin_angle(0, 16), 0.0);
    }

    #[test]
    fn identity_rotation() {
        let grid = RotationGrid::new(8, 8, 1).unwrap();
        let x = Tensor::new(1, 8, 8, (0..64).map(|i| i as f32).collect()).unwrap();
        assert_eq!(grid.rotate(&x, 0), x);
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let mut q = QMaps::new(2, 4, 4, vec![0.0; 64]).unwrap();
        let a = q.offset(Primitive::Grasp, 0, 1, 1);
        let b = q.offset(Primitive::Push, 1, 3, 3);
        q.values[a] = 2.0;
        q.values[b] = 2.0;
        let act = greedy_action(&q, ActionSet::PushGrasp);
        assert_eq!((act.primitive, act.rotation_bin, act.pixel), (Primitive::Push, 1, (3, 3)));
        let act = greedy_action(&q, ActionSet::GraspOnly);
        assert_eq!((act.primitive, act.rotation_bin, act.pixel), (Primitive::Grasp, 0, (1, 1)));
    }
}
