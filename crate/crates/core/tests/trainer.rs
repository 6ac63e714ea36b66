use pushgrasp::policy::{action_to_world, build_rotation_stack, ActionSet, ActionSpec, Primitive, WorldCommand};
use pushgrasp::qfcn::{Architecture, Mode, Network};
use pushgrasp::reward::RewardScheme;
use pushgrasp::trainer::{
    actions_to_success, final_attempt_rate, parse_metrics, run_training, td_target, Trainer, METRICS_HEADER,
};
use pushgrasp::world::apply_grasp;
use pushgrasp::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> TrainConfig {
    let mut cfg = TrainConfig::desk_scale();
    cfg.resolution = 16;
    cfg.n_rotations = 4;
    cfg.objects_per_episode = 2;
    cfg.total_actions = 40;
    cfg.anneal_steps = 30;
    cfg.target_sync_interval = 10;
    cfg.max_actions_per_episode = 12;
    cfg.architecture = "in=4 conv(4,8,3,2,1) bn(8,0.1) relu conv(8,8,3,1,1) bn(8,0.1) relu conv(8,1,1,1,0) up(2)"
        .parse::<Architecture>()
        .unwrap();
    cfg
}

fn params(net: &Network<f32>) -> Vec<f32> {
    net.state_slices().concat()
}

#[test]
fn td_target_matches_formula() {
    assert_eq!(td_target(1.0, 7.0, true, 0.6), 1.0);
    assert!((td_target(0.5, 1.0, false, 0.6) - 1.1).abs() < 1e-12);
    assert_eq!(td_target(-0.1, 0.0, false, 0.6), -0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let (r, q, g) = (rng.random_range(-1.0..1.0), rng.random_range(-5.0..5.0), rng.random_range(0.01..0.99));
        let terminal = rng.random_bool(0.3);
        let direct = if terminal { r } else { r + g * q };
        assert!((td_target(r, q, terminal, g) - direct).abs() <= 1e-12);
    }
}

#[test]
fn identical_seeds_give_identical_metrics() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_training(small(), Some(d.path())).unwrap();
    }
    for name in ["metrics.csv", "episodes.csv", "config.txt", "checkpoints/grasp_final.ckpt", "checkpoints/push_final.ckpt"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let mut other = small();
    other.seed = 1;
    let c = tempfile::tempdir().unwrap();
    run_training(other, Some(c.path())).unwrap();
    assert_ne!(
        std::fs::read(dirs[0].path().join("metrics.csv")).unwrap(),
        std::fs::read(c.path().join("metrics.csv")).unwrap()
    );
}

#[test]
fn each_step_updates_only_the_executed_net() {
    let mut t = Trainer::new(small()).unwrap();
    for _ in 0..30 {
        let push = params(&t.agent.push);
        let grasp = params(&t.agent.grasp);
        let row = t.step().unwrap().row;
        let (moved, still) = match row.primitive {
            Primitive::Push => ((push, &t.agent.push), (grasp, &t.agent.grasp)),
            Primitive::Grasp => ((grasp, &t.agent.grasp), (push, &t.agent.push)),
        };
        assert_ne!(moved.0, params(moved.1));
        assert_eq!(still.0, params(still.1));
    }
}

#[test]
fn grasp_only_never_touches_the_push_net() {
    let mut cfg = small();
    cfg.actions = ActionSet::GraspOnly;
    let initial = Trainer::new(cfg.clone()).unwrap();
    let run = run_training(cfg, None).unwrap();
    assert!(run.rows.iter().all(|r| r.primitive == Primitive::Grasp));
    assert_eq!(params(&run.agent.push), params(&initial.agent.push));
    assert_ne!(params(&run.agent.grasp), params(&initial.agent.grasp));
}

#[test]
fn logged_loss_matches_recomputed_td_error() {
    let mut t = Trainer::new(small()).unwrap();
    for _ in 0..25 {
        let eps = t.epsilon();
        let (action, _, stack) = t.propose(eps).unwrap();
        let net = t.agent.net(action.primitive).clone();
        let (out, _) = net.forward_with_stats(&stack[action.rotation_bin], Mode::Train).unwrap();
        let q: f64 = t
            .agent
            .grid
            .world_taps(action.rotation_bin, action.pixel.0, action.pixel.1)
            .iter()
            .map(|&((r, c), w)| w as f64 * out.at(0, r, c) as f64)
            .sum();
        let row = t.step_with(action, eps, &stack).unwrap().row;
        let expect = (row.td_target - q).powi(2);
        assert!((row.loss - expect).abs() < 1e-6 * expect.max(1.0), "{} vs {expect}", row.loss);
    }
}

#[test]
fn targets_hold_between_syncs() {
    let mut cfg = small();
    cfg.target_sync_interval = 50;
    let mut t = Trainer::new(cfg).unwrap();
    let probe = build_rotation_stack(t.state(), &t.agent.grid);
    let frozen = t.agent.target_qmaps(&probe, ActionSet::PushGrasp).unwrap();
    for step in 1..=50 {
        t.step().unwrap();
        let now = t.agent.target_qmaps(&probe, ActionSet::PushGrasp).unwrap();
        if step < 50 {
            assert_eq!(now.values, frozen.values, "step {step}");
        } else {
            assert_ne!(now.values, frozen.values);
            assert_eq!(now.values, t.agent.current_qmaps(&probe, ActionSet::PushGrasp).unwrap().values);
        }
    }
}

#[test]
fn epsilon_anneals_monotonically() {
    let run = run_training(small(), None).unwrap();
    assert_eq!(run.rows[0].epsilon, 0.65);
    assert!(run.rows.windows(2).all(|w| w[1].epsilon <= w[0].epsilon));
    assert_eq!(run.rows.last().unwrap().epsilon, 0.1);
    assert!(run.rows.windows(2).all(|w| w[1].global_step == w[0].global_step + 1));
}

#[test]
fn zero_budget_writes_only_the_initial_checkpoint() {
    let mut cfg = small();
    cfg.total_actions = 0;
    let dir = tempfile::tempdir().unwrap();
    let run = run_training(cfg, Some(dir.path())).unwrap();
    assert!(run.rows.is_empty() && run.episodes.is_empty());
    assert_eq!(std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap(), format!("{METRICS_HEADER}\n"));
    let mut ckpts: Vec<String> = std::fs::read_dir(dir.path().join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    ckpts.sort();
    assert_eq!(ckpts, ["grasp_initial.ckpt", "push_initial.ckpt"]);
}

#[test]
fn metrics_round_trip_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_training(small(), Some(dir.path())).unwrap();
    let back = parse_metrics(&std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(back.len(), run.rows.len());
    for (a, b) in back.iter().zip(&run.rows) {
        let mut b = b.clone();
        b.explored = false;
        assert_eq!(*a, b);
    }
    assert_eq!(final_attempt_rate(&back, 200).ok(), final_attempt_rate(&run.rows, 200).ok());
    assert_eq!(actions_to_success(&back, 5, 0.5), actions_to_success(&run.rows, 5, 0.5));
    assert!(parse_metrics("step\n1").is_err());
}

#[test]
fn single_reward_never_penalises() {
    let mut cfg = small();
    cfg.reward = RewardScheme::Single;
    let run = run_training(cfg, None).unwrap();
    assert!(run.rows.iter().all(|r| [0.0, 0.5, 1.0].contains(&r.reward)));
}

#[test]
fn successful_grasp_counts_and_closes_group() {
    let mut cfg = small();
    cfg.group_size = 1;
    let mut t = Trainer::new(cfg.clone()).unwrap();
    // find a grasp the world accepts by scanning bins at each object's cell
    let g = t.state().geometry;
    let mut chosen = None;
    'search: for o in &t.scene().objects {
        let (u, v) = g.cell_of(&o.pose.position()).unwrap();
        for du in -1i64..=1 {
            for dv in -1i64..=1 {
                for bin in 0..cfg.n_rotations {
                    let a = ActionSpec {
                        primitive: Primitive::Grasp,
                        rotation_bin: bin,
                        pixel: ((u as i64 + du) as usize, (v as i64 + dv) as usize),
                        explored: false,
                    };
                    let Ok(WorldCommand::Grasp(cmd)) = action_to_world(&a, t.state(), cfg.n_rotations, &t.world) else {
                        continue;
                    };
                    if apply_grasp(t.scene(), &cmd, &t.world).1.success {
                        chosen = Some(a);
                        break 'search;
                    }
                }
            }
        }
    }
    let action = chosen.expect("some object is graspable");
    let before = t.scene().objects.len();
    let stack = build_rotation_stack(t.state(), &t.agent.grid);
    let report = t.step_with(action, 0.0, &stack).unwrap();
    assert!(report.row.grasped);
    assert_eq!(report.row.reward, 1.0);
    assert_eq!((report.row.grasp_attempts, report.row.grasp_successes), (1, 1));
    assert_eq!(report.row.objects_remaining, before - 1);
    assert_eq!(report.group_completed, Some(0));
    assert_eq!(t.group(), 1);
}

#[test]
fn disabled_primitive_is_rejected() {
    let mut cfg = small();
    cfg.actions = ActionSet::GraspOnly;
    let mut t = Trainer::new(cfg).unwrap();
    let stack = build_rotation_stack(t.state(), &t.agent.grid);
    let push = ActionSpec {
        primitive: Primitive::Push,
        rotation_bin: 0,
        pixel: (8, 8),
        explored: false,
    };
    assert!(t.step_with(push, 0.1, &stack).is_err());
}
