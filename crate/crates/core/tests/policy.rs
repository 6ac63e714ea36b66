use pushgrasp::geometry::Vec2;
use pushgrasp::policy::{
    action_to_world, bin_angle, build_rotation_stack, evaluate_qmaps, greedy_action, select_action, ActionSet,
    ActionSpec, Primitive, QFunction, QMaps, RotationGrid, WorldCommand,
};
use pushgrasp::qfcn::{Architecture, Network, Tensor};
use pushgrasp::sensing::{HeightmapGeometry, HeightmapState};
use pushgrasp::world::{WorldConfig, Workspace};
use pushgrasp::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state(n: usize, seed: u64) -> HeightmapState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = HeightmapState::empty(HeightmapGeometry::covering(&Workspace::centered(0.256), n));
    for i in 0..n * n {
        s.color[i] = [rng.random(), rng.random(), rng.random()];
        s.height[i] = rng.random_range(0.0..0.05);
        s.valid[i] = rng.random_bool(0.8);
    }
    s
}

/// Quarter turn as an index permutation: out[u][v] = img[n-1-v][u].
fn quarter_turn(img: &[f32], n: usize) -> Vec<f32> {
    let mut out = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            out[u * n + v] = img[(n - 1 - v) * n + u];
        }
    }
    out
}

#[test]
fn right_angle_rotations_are_permutations() {
    let n = 10;
    let grid = RotationGrid::new(n, n, 4).unwrap();
    for (mu, mv) in [(0, 0), (2, 7), (9, 3), (4, 5)] {
        let mut img = vec![0.0f32; n * n];
        img[mu * n + mv] = 1.0;
        let x = Tensor::new(1, n, n, img.clone()).unwrap();
        let mut expect = img;
        for k in 0..4 {
            assert_eq!(grid.rotate(&x, k).data, expect, "bin {k}, mark ({mu}, {mv})");
            expect = quarter_turn(&expect, n);
        }
    }
}

#[test]
fn single_rotation_stack_is_identity() {
    let state = random_state(12, 1);
    let stack = build_rotation_stack(&state, &RotationGrid::new(12, 12, 1).unwrap());
    assert_eq!(stack.len(), 1);
    assert_eq!(stack[0].data, state.to_channels());
}

#[test]
fn opposite_rotations_cancel_on_interior() {
    // bilinear resampling reproduces affine fields, so only the clipped
    // border can differ
    let n = 32;
    let grid = RotationGrid::new(n, n, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let (a, b, c): (f32, f32, f32) = (rng.random(), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
        let img: Vec<f32> = (0..n * n).map(|i| a + b * (i / n) as f32 + c * (i % n) as f32).collect();
        let x = Tensor::new(1, n, n, img.clone()).unwrap();
        for k in 1..8 {
            let back = grid.rotate(&grid.rotate(&x, k), 8 - k);
            for u in 0..n {
                for v in 0..n {
                    let r = ((u as f64 + 0.5 - n as f64 / 2.0).powi(2) + (v as f64 + 0.5 - n as f64 / 2.0).powi(2)).sqrt();
                    if r < n as f64 / 2.0 - 2.0 {
                        let i = u * n + v;
                        assert!((back.data[i] - img[i]).abs() < 1e-3, "k {k} at ({u}, {v})");
                    }
                }
            }
        }
    }
}

/// Bilinear sample at fractional `(fu, fv)` in cell-index coordinates.
fn sample(img: &[f32], n: usize, fu: f64, fv: f64, clamp: bool) -> f32 {
    let (fu, fv) = if clamp {
        (fu.clamp(0.0, (n - 1) as f64), fv.clamp(0.0, (n - 1) as f64))
    } else {
        (fu, fv)
    };
    let (u0, v0) = (fu.floor(), fv.floor());
    let mut acc = 0.0f64;
    for (du, wu) in [(0.0, 1.0 - (fu - u0)), (1.0, fu - u0)] {
        for (dv, wv) in [(0.0, 1.0 - (fv - v0)), (1.0, fv - v0)] {
            let (u, v) = (u0 + du, v0 + dv);
            if u >= 0.0 && v >= 0.0 && (u as usize) < n && (v as usize) < n {
                acc += wu * wv * img[u as usize * n + v as usize] as f64;
            }
        }
    }
    acc as f32
}

/// Image rotated so that pixel `p` shows `img` at `c + R(theta)(p - c)`.
fn rotate_by(img: &[f32], n: usize, theta: f64, clamp: bool) -> Vec<f32> {
    let c = n as f64 / 2.0;
    let (s, co) = theta.sin_cos();
    let mut out = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            let (du, dv) = (u as f64 + 0.5 - c, v as f64 + 0.5 - c);
            out[u * n + v] = sample(img, n, c + co * du - s * dv - 0.5, c + s * du + co * dv - 0.5, clamp);
        }
    }
    out
}

fn small_arch() -> Architecture {
    "in=4 conv(4,6,3,2,1) bn(6,0.1) relu conv(6,6,3,1,1) bn(6,0.1) relu conv(6,1,1,1,0) up(2)"
        .parse()
        .unwrap()
}

#[test]
fn qmaps_match_independent_recompute() {
    let n = 16;
    let n_rot = 8;
    let grid = RotationGrid::new(n, n, n_rot).unwrap();
    let push = Network::<f32>::init(&small_arch(), 4).unwrap();
    let grasp = Network::<f32>::init(&small_arch(), 5).unwrap();
    let state = random_state(n, 6);
    let q = evaluate_qmaps(&push, &grasp, &build_rotation_stack(&state, &grid), &grid, ActionSet::PushGrasp).unwrap();
    let channels = state.to_channels();
    let step = std::f64::consts::TAU / n_rot as f64;
    for (p, net) in [(Primitive::Push, &push), (Primitive::Grasp, &grasp)] {
        for k in 0..n_rot {
            let rotated: Vec<f32> = channels
                .chunks(n * n)
                .flat_map(|ch| rotate_by(ch, n, k as f64 * step, false))
                .collect();
            let out = net.forward_eval(&Tensor::new(4, n, n, rotated).unwrap()).unwrap();
            let world = rotate_by(&out.data, n, -(k as f64) * step, true);
            for (i, (&a, &b)) in q.map(p, k).iter().zip(&world).enumerate() {
                assert!((a - b).abs() < 1e-4, "{p} bin {k} cell {i}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn constant_nets_give_constant_maps() {
    let n = 8;
    let grid = RotationGrid::new(n, n, 4).unwrap();
    let mut nets = [Network::<f32>::init(&small_arch(), 0).unwrap(), Network::<f32>::init(&small_arch(), 1).unwrap()];
    for (net, bias) in nets.iter_mut().zip([0.25f32, -0.5]) {
        for s in net.trainable_mut() {
            s.fill(0.0);
        }
        *net.output_bias_mut() = bias;
    }
    let stack = build_rotation_stack(&random_state(n, 3), &grid);
    let q = evaluate_qmaps(&nets[0], &nets[1], &stack, &grid, ActionSet::PushGrasp).unwrap();
    for k in 0..4 {
        assert!(q.map(Primitive::Push, k).iter().all(|&x| x == 0.25));
        assert!(q.map(Primitive::Grasp, k).iter().all(|&x| x == -0.5));
    }
    let g = evaluate_qmaps(&nets[0], &nets[1], &stack, &grid, ActionSet::GraspOnly).unwrap();
    assert!(g.map(Primitive::Push, 0).iter().all(|&x| x == 0.0));
}

fn brute_force(q: &QMaps, actions: ActionSet) -> ActionSpec {
    let mut all = Vec::new();
    for &p in actions.primitives() {
        for k in 0..q.n_rotations {
            for u in 0..q.rows {
                for v in 0..q.cols {
                    all.push((q.get(p, k, u, v), p, k, u, v));
                }
            }
        }
    }
    let top = all.iter().map(|e| e.0).fold(f32::NEG_INFINITY, f32::max);
    let (_, p, k, u, v) = all
        .into_iter()
        .filter(|e| e.0 == top)
        .min_by_key(|e| (e.1, e.2, e.3, e.4))
        .unwrap();
    ActionSpec {
        primitive: p,
        rotation_bin: k,
        pixel: (u, v),
        explored: false,
    }
}

#[test]
fn greedy_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..100 {
        let (n_rot, rows, cols) = (rng.random_range(1..17), rng.random_range(1..24), rng.random_range(1..24));
        let len = 2 * n_rot * rows * cols;
        // few distinct levels so ties are common
        let levels = rng.random_range(1..6);
        let values = (0..len).map(|_| rng.random_range(0..levels) as f32 * 0.5 - 1.0).collect();
        let q = QMaps::new(n_rot, rows, cols, values).unwrap();
        for actions in [ActionSet::PushGrasp, ActionSet::GraspOnly] {
            let expect = brute_force(&q, actions);
            assert_eq!(greedy_action(&q, actions), expect, "case {case}");
            let valid = vec![true; rows * cols];
            assert_eq!(select_action(&q, actions, &valid, 0.0, &mut rng), expect);
        }
    }
}

#[test]
fn strict_maximum_is_found() {
    let (n_rot, n) = (16, 32);
    let mut q = QMaps::new(n_rot, n, n, vec![0.0; 2 * n_rot * n * n]).unwrap();
    let at = q.offset(Primitive::Grasp, 3, 10, 20);
    q.values[at] = 1.0;
    let a = greedy_action(&q, ActionSet::PushGrasp);
    assert_eq!((a.primitive, a.rotation_bin, a.pixel), (Primitive::Grasp, 3, (10, 20)));
}

#[test]
fn exploration_rate_and_uniformity() {
    let (n_rot, n) = (8, 16);
    let q = QMaps::new(n_rot, n, n, vec![0.0; 2 * n_rot * n * n]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let valid: Vec<bool> = (0..n * n).map(|i| i % 3 != 0).collect();
    let m = 10_000.0;
    for eps in [0.1, 0.3, 0.65] {
        let picks: Vec<ActionSpec> = (0..10_000).map(|_| select_action(&q, ActionSet::PushGrasp, &valid, eps, &mut rng)).collect();
        let explored = picks.iter().filter(|a| a.explored).count() as f64 / m;
        assert!((explored - eps).abs() < 4.0 * (eps * (1.0 - eps) / m).sqrt(), "eps {eps}: {explored}");
        for a in picks.iter().filter(|a| a.explored) {
            assert!(valid[a.pixel.0 * n + a.pixel.1]);
        }
    }
    let picks: Vec<ActionSpec> = (0..10_000).map(|_| select_action(&q, ActionSet::PushGrasp, &valid, 1.0, &mut rng)).collect();
    let pushes = picks.iter().filter(|a| a.primitive == Primitive::Push).count() as f64;
    assert!((pushes - m / 2.0).abs() < 3.0 * (m * 0.25).sqrt());
    assert!(picks.iter().all(|a| a.explored));
    let only = select_action(&q, ActionSet::GraspOnly, &valid, 1.0, &mut rng);
    assert_eq!(only.primitive, Primitive::Grasp);
}

#[test]
fn world_mapping_inverts_the_grid() {
    let cfg = WorldConfig::default();
    let state = random_state(64, 12);
    let g = state.geometry;
    for u in 0..64 {
        for v in 0..64 {
            let expect = Vec2::new(-0.128 + (u as f64 + 0.5) * 0.004, -0.128 + (v as f64 + 0.5) * 0.004);
            let action = ActionSpec {
                primitive: if (u + v) % 2 == 0 { Primitive::Push } else { Primitive::Grasp },
                rotation_bin: (u + v) % 16,
                pixel: (u, v),
                explored: false,
            };
            let at = match action_to_world(&action, &state, 16, &cfg).unwrap() {
                WorldCommand::Push(p) => {
                    assert_eq!(p.distance, 0.05);
                    assert!((p.direction_angle - (22.5 * ((u + v) % 16) as f64).to_radians()).abs() < 1e-12);
                    p.start
                }
                WorldCommand::Grasp(gc) => {
                    assert_eq!(gc.descend_height, state.height_at(u, v) as f64);
                    gc.center
                }
            };
            assert!((at - expect).norm() < 1e-12);
            assert_eq!(g.cell_of(&at), Some((u, v)));
        }
    }
    assert_eq!(bin_angle(4, 16).to_degrees(), 90.0);
    let bad = ActionSpec {
        primitive: Primitive::Push,
        rotation_bin: 0,
        pixel: (64, 0),
        explored: false,
    };
    assert!(action_to_world(&bad, &state, 16, &cfg).is_err());
}

/// Fixed, orientation-sensitive scoring: a pixel scores high when channel 0
/// is bright there and dark two columns to the right. Off-grid neighbours
/// count as very bright so border pixels, whose score would otherwise tie
/// across bins, never win.
struct EdgeOracle;

impl QFunction for EdgeOracle {
    fn qmap(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (r, c) = (x.rows, x.cols);
        let mut out = Tensor::zeros(1, r, c);
        for u in 0..r {
            for v in 0..c {
                let right = if v + 2 < c { x.at(0, u, v + 2) } else { 10.0 };
                out.data[u * c + v] = x.at(0, u, v) - right;
            }
        }
        Ok(out)
    }
}

struct Floor;

impl QFunction for Floor {
    fn qmap(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(Tensor::new(1, x.rows, x.cols, vec![-10.0; x.rows * x.cols])?)
    }
}

/// The same scene with the world turned by `j` quarter turns about the
/// workspace center.
fn turn_world(state: &HeightmapState, j: usize) -> HeightmapState {
    let g = state.geometry;
    let c = g.origin + Vec2::new(g.rows as f64, g.cols as f64) * (0.5 * g.cell_size);
    let theta = -(j as f64) * std::f64::consts::FRAC_PI_2;
    let (s, co) = theta.sin_cos();
    let mut out = state.clone();
    for u in 0..g.rows {
        for v in 0..g.cols {
            let d = g.cell_center(u, v) - c;
            let src = c + Vec2::new(co * d.x - s * d.y, s * d.x + co * d.y);
            let (su, sv) = g.cell_of(&src).unwrap();
            let (i, k) = (g.index(u, v), g.index(su, sv));
            out.color[i] = state.color[k];
            out.height[i] = state.height[k];
            out.valid[i] = state.valid[k];
        }
    }
    out
}

#[test]
fn greedy_action_turns_with_the_world() {
    let n = 24;
    let n_rot = 4;
    let grid = RotationGrid::new(n, n, n_rot).unwrap();
    let cfg = WorldConfig::default();
    for seed in 0..20 {
        let state = random_state(n, 100 + seed);
        let c = Vec2::zeros();
        let act = |s: &HeightmapState| {
            let q = evaluate_qmaps(&EdgeOracle, &Floor, &build_rotation_stack(s, &grid), &grid, ActionSet::PushGrasp).unwrap();
            let a = greedy_action(&q, ActionSet::PushGrasp);
            match action_to_world(&a, s, n_rot, &cfg).unwrap() {
                WorldCommand::Push(p) => (p.start, p.direction_angle),
                WorldCommand::Grasp(_) => panic!("floor grasp chosen"),
            }
        };
        let (p0, a0) = act(&state);
        for j in 1..4 {
            let (pj, aj) = act(&turn_world(&state, j));
            let t = j as f64 * std::f64::consts::FRAC_PI_2;
            let expect_p = c + Vec2::new(t.cos() * p0.x - t.sin() * p0.y, t.sin() * p0.x + t.cos() * p0.y);
            assert!((pj - expect_p).norm() < 1e-12, "seed {seed} turn {j}: {pj:?} vs {expect_p:?}");
            let da = (aj - a0 - t).rem_euclid(std::f64::consts::TAU);
            assert!(da < 1e-12 || std::f64::consts::TAU - da < 1e-12, "seed {seed} turn {j}: angle {a0} -> {aj}");
        }
    }
}
