//! Online Q-learning: act, observe, reward, one TD update on the executed
//! primitive's network, periodic target sync, metrics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::policy::{
    action_to_world, anneal_epsilon, build_rotation_stack, evaluate_qmaps, select_action, ActionSet, ActionSpec,
    Primitive, QMaps, RotationGrid, WorldCommand,
};
use crate::qfcn::{write_checkpoint, Architecture, Network, TargetNetwork, Tensor};
use crate::reward::Outcome;
use crate::sensing::{pixel_change_rate, HeightmapState, Sensor};
use crate::world::{apply_grasp, apply_push, spawn_scene, Scene, Shape, WorldConfig};

/// `reward` on terminal transitions, else `reward + gamma * next_qmax`.
pub fn td_target(reward: f64, next_qmax: f64, terminal: bool, gamma: f64) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * next_qmax
    }
}

pub const METRICS_HEADER: &str = "global_step,episode,group,primitive,rotation_bin,pixel,reward,td_target,loss,epsilon,grasp_attempts,grasp_successes,objects_remaining,wall_time";

/// One executed action. Grasp counters are cumulative over the run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub global_step: usize,
    pub episode: usize,
    pub group: usize,
    pub primitive: Primitive,
    pub rotation_bin: usize,
    pub pixel: (usize, usize),
    pub reward: f64,
    pub td_target: f64,
    pub loss: f64,
    pub epsilon: f64,
    pub grasp_attempts: usize,
    pub grasp_successes: usize,
    pub objects_remaining: usize,
    pub wall_time: f64,
    /// Not a CSV column: whether this was a successful grasp.
    pub grasped: bool,
    pub explored: bool,
}

impl MetricsRow {
    /// CSV line; the pixel is written as `u:v`.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}:{},{},{},{},{},{},{},{},{}",
            self.global_step,
            self.episode,
            self.group,
            self.primitive,
            self.rotation_bin,
            self.pixel.0,
            self.pixel.1,
            self.reward,
            self.td_target,
            self.loss,
            self.epsilon,
            self.grasp_attempts,
            self.grasp_successes,
            self.objects_remaining,
            self.wall_time
        )
    }
}

/// Reads a metrics CSV back. Success of each grasp is recovered from the
/// cumulative counter; `explored` is not stored and reads as false.
pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Parse("metrics header".into()));
    }
    let mut rows: Vec<MetricsRow> = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse(format!("metrics row `{line}`"));
        if f.len() != 14 {
            return Err(bad());
        }
        let u = |s: &str| s.parse::<usize>().map_err(|_| bad());
        let r = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let (pu, pv) = f[5].split_once(':').ok_or_else(bad)?;
        let grasp_successes = u(f[11])?;
        let before = rows.last().map_or(0, |r| r.grasp_successes);
        rows.push(MetricsRow {
            global_step: u(f[0])?,
            episode: u(f[1])?,
            group: u(f[2])?,
            primitive: match f[3] {
                "push" => Primitive::Push,
                "grasp" => Primitive::Grasp,
                _ => return Err(bad()),
            },
            rotation_bin: u(f[4])?,
            pixel: (u(pu)?, u(pv)?),
            reward: r(f[6])?,
            td_target: r(f[7])?,
            loss: r(f[8])?,
            epsilon: r(f[9])?,
            grasp_attempts: u(f[10])?,
            grasp_successes,
            objects_remaining: u(f[12])?,
            wall_time: r(f[13])?,
            grasped: grasp_successes > before,
            explored: false,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeEnd {
    Cleared,
    ActionCap,
    Stalled,
    Budget,
}

impl EpisodeEnd {
    pub fn name(self) -> &'static str {
        match self {
            EpisodeEnd::Cleared => "cleared",
            EpisodeEnd::ActionCap => "action_cap",
            EpisodeEnd::Stalled => "stalled",
            EpisodeEnd::Budget => "budget",
        }
    }
}

pub const EPISODES_HEADER: &str = "episode,first_step,actions,objects_presented,objects_grasped,end";

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub first_step: usize,
    pub actions: usize,
    pub objects_presented: usize,
    pub objects_grasped: usize,
    pub end: EpisodeEnd,
}

impl EpisodeRecord {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.episode,
            self.first_step,
            self.actions,
            self.objects_presented,
            self.objects_grasped,
            self.end.name()
        )
    }
}

/// Grasp success over a window of metrics rows: `per_object` is objects
/// grasped over objects presented, `per_attempt` successes over grasp
/// attempts. Either is `None` when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessRate {
    pub per_object: Option<f64>,
    pub per_attempt: Option<f64>,
}

pub fn success_rate(grasped: usize, presented: usize, attempts: usize) -> Result<SuccessRate> {
    if presented == 0 && attempts == 0 {
        return Err(Error::EmptyWindow);
    }
    let ratio = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
    Ok(SuccessRate {
        per_object: ratio(grasped, presented),
        per_attempt: ratio(grasped, attempts),
    })
}

/// Per-attempt success over the last `window` grasp attempts in `rows`.
pub fn final_attempt_rate(rows: &[MetricsRow], window: usize) -> Result<f64> {
    let grasps: Vec<bool> = rows
        .iter()
        .filter(|r| r.primitive == Primitive::Grasp)
        .map(|r| r.grasped)
        .collect();
    let tail = &grasps[grasps.len().saturating_sub(window)..];
    if tail.is_empty() {
        return Err(Error::EmptyWindow);
    }
    Ok(tail.iter().filter(|&&g| g).count() as f64 / tail.len() as f64)
}

/// First global step at which the trailing `window` grasp attempts reach
/// `level` per-attempt success.
pub fn actions_to_success(rows: &[MetricsRow], window: usize, level: f64) -> Option<usize> {
    let mut recent = std::collections::VecDeque::with_capacity(window);
    let mut hits = 0usize;
    for r in rows.iter().filter(|r| r.primitive == Primitive::Grasp) {
        recent.push_back(r.grasped);
        hits += r.grasped as usize;
        if recent.len() > window {
            hits -= recent.pop_front().expect("non-empty") as usize;
        }
        if recent.len() == window && hits as f64 >= level * window as f64 {
            return Some(r.global_step);
        }
    }
    None
}

/// The two current networks, their targets and the rotation tables.
#[derive(Debug, Clone)]
pub struct Agent {
    pub push: Network<f32>,
    pub grasp: Network<f32>,
    pub push_target: TargetNetwork<f32>,
    pub grasp_target: TargetNetwork<f32>,
    pub grid: RotationGrid,
}

impl Agent {
    pub fn new(arch: &Architecture, resolution: usize, n_rotations: usize, seed: u64) -> Result<Self> {
        let mut seeds = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_4e75);
        let push = Network::init(arch, seeds.random())?;
        let grasp = Network::init(arch, seeds.random())?;
        Ok(Self {
            push_target: TargetNetwork::from_current(&push),
            grasp_target: TargetNetwork::from_current(&grasp),
            push,
            grasp,
            grid: RotationGrid::new(resolution, resolution, n_rotations)?,
        })
    }

    pub fn from_networks(push: Network<f32>, grasp: Network<f32>, resolution: usize, n_rotations: usize) -> Result<Self> {
        Ok(Self {
            push_target: TargetNetwork::from_current(&push),
            grasp_target: TargetNetwork::from_current(&grasp),
            push,
            grasp,
            grid: RotationGrid::new(resolution, resolution, n_rotations)?,
        })
    }

    pub fn current_qmaps(&self, stack: &[Tensor<f32>], actions: ActionSet) -> Result<QMaps> {
        evaluate_qmaps(&self.push, &self.grasp, stack, &self.grid, actions)
    }

    pub fn target_qmaps(&self, stack: &[Tensor<f32>], actions: ActionSet) -> Result<QMaps> {
        evaluate_qmaps(&self.push_target, &self.grasp_target, stack, &self.grid, actions)
    }

    pub fn sync_targets(&mut self) -> Result<()> {
        self.push_target.sync(&self.push)?;
        self.grasp_target.sync(&self.grasp)
    }

    pub fn net(&self, p: Primitive) -> &Network<f32> {
        match p {
            Primitive::Push => &self.push,
            Primitive::Grasp => &self.grasp,
        }
    }

    fn net_mut(&mut self, p: Primitive) -> &mut Network<f32> {
        match p {
            Primitive::Push => &mut self.push,
            Primitive::Grasp => &mut self.grasp,
        }
    }

    /// Pushes the current networks to two checkpoint files.
    pub fn save(&self, dir: &Path, tag: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |net: &Network<f32>, name: String| -> Result<PathBuf> {
            let path = dir.join(name);
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(f);
            write_checkpoint(net, &mut w).map_err(|e| Error::io(&path, e))?;
            w.flush().map_err(|e| Error::io(&path, e))?;
            Ok(path)
        };
        Ok((
            write(&self.push, format!("push_{tag}.ckpt"))?,
            write(&self.grasp, format!("grasp_{tag}.ckpt"))?,
        ))
    }
}

/// Outcome of executing one command in the world.
#[derive(Debug, Clone)]
pub struct Executed {
    pub scene: Scene,
    pub state: HeightmapState,
    pub outcome: Outcome,
    pub grasped: Option<u32>,
}

pub fn execute(
    scene: &Scene,
    state: &HeightmapState,
    action: &ActionSpec,
    sensor: &Sensor,
    n_rotations: usize,
    world: &WorldConfig,
) -> Result<Executed> {
    match action_to_world(action, state, n_rotations, world)? {
        WorldCommand::Push(cmd) => {
            let (next, _) = apply_push(scene, &cmd, world);
            let next_state = sensor.observe(&next);
            let tau = pixel_change_rate(state, &next_state)?;
            Ok(Executed {
                scene: next,
                state: next_state,
                outcome: Outcome::push(tau),
                grasped: None,
            })
        }
        WorldCommand::Grasp(cmd) => {
            let (next, out) = apply_grasp(scene, &cmd, world);
            let next_state = sensor.observe(&next);
            Ok(Executed {
                scene: next,
                state: next_state,
                outcome: Outcome::grasp(out.success),
                grasped: out.grasped,
            })
        }
    }
}

/// What one call to [`Trainer::step`] produced.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub row: MetricsRow,
    pub episode_end: Option<EpisodeRecord>,
    /// Index of the group completed by this step, if any.
    pub group_completed: Option<usize>,
}

/// Owns the whole mutable training state; deterministic per seed.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub world: WorldConfig,
    pub agent: Agent,
    sensor: Sensor,
    rng: ChaCha8Rng,
    scene: Scene,
    state: HeightmapState,
    global_step: usize,
    episode: usize,
    episode_first_step: usize,
    episode_presented: usize,
    episode_grasped: usize,
    stall: usize,
    grasp_attempts: usize,
    grasp_successes: usize,
    objects_presented: usize,
    clock: Instant,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let world = cfg.world();
        let agent = Agent::new(&cfg.architecture, cfg.resolution, cfg.n_rotations, cfg.seed)?;
        let sensor = Sensor::new(&world.workspace, cfg.resolution, cfg.perspectives)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let scene = spawn_scene(cfg.objects_per_episode, 0, Shape::Block, rng.random(), &world)?;
        let state = sensor.observe(&scene);
        Ok(Self {
            episode_presented: scene.objects.len(),
            objects_presented: scene.objects.len(),
            cfg,
            world,
            agent,
            sensor,
            rng,
            scene,
            state,
            global_step: 0,
            episode: 0,
            episode_first_step: 0,
            episode_grasped: 0,
            stall: 0,
            grasp_attempts: 0,
            grasp_successes: 0,
            clock: Instant::now(),
        })
    }

    pub fn global_step(&self) -> usize {
        self.global_step
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn state(&self) -> &HeightmapState {
        &self.state
    }

    pub fn sensor(&self) -> &Sensor {
        &self.sensor
    }

    pub fn group(&self) -> usize {
        self.grasp_successes / self.cfg.group_size
    }

    pub fn objects_presented(&self) -> usize {
        self.objects_presented
    }

    pub fn epsilon(&self) -> f64 {
        anneal_epsilon(self.global_step, self.cfg.epsilon_start, self.cfg.epsilon_final, self.cfg.anneal_steps)
    }

    /// Closes the current episode with `end` and spawns the next one.
    fn next_episode(&mut self, end: EpisodeEnd) -> Result<EpisodeRecord> {
        let record = EpisodeRecord {
            episode: self.episode,
            first_step: self.episode_first_step,
            actions: self.global_step - self.episode_first_step,
            objects_presented: self.episode_presented,
            objects_grasped: self.episode_grasped,
            end,
        };
        self.episode += 1;
        self.episode_first_step = self.global_step;
        self.episode_grasped = 0;
        self.stall = 0;
        self.scene = spawn_scene(self.cfg.objects_per_episode, 0, Shape::Block, self.rng.random(), &self.world)?;
        self.state = self.sensor.observe(&self.scene);
        self.episode_presented = self.scene.objects.len();
        self.objects_presented += self.episode_presented;
        Ok(record)
    }

    /// Record for the episode in progress, used when the budget runs out.
    pub fn close_episode(&self) -> EpisodeRecord {
        EpisodeRecord {
            episode: self.episode,
            first_step: self.episode_first_step,
            actions: self.global_step - self.episode_first_step,
            objects_presented: self.episode_presented,
            objects_grasped: self.episode_grasped,
            end: EpisodeEnd::Budget,
        }
    }

    /// Selects an action for the current state without acting.
    pub fn propose(&mut self, epsilon: f64) -> Result<(ActionSpec, QMaps, Vec<Tensor<f32>>)> {
        let stack = build_rotation_stack(&self.state, &self.agent.grid);
        let qmaps = self.agent.current_qmaps(&stack, self.cfg.actions)?;
        let action = select_action(&qmaps, self.cfg.actions, &self.state.valid, epsilon, &mut self.rng);
        Ok((action, qmaps, stack))
    }

    /// observe, select, act, observe, reward, TD target from the target
    /// nets, one SGD step on the executed primitive's net, target sync on
    /// schedule.
    pub fn step(&mut self) -> Result<StepReport> {
        let epsilon = self.epsilon();
        let (action, _, stack) = self.propose(epsilon)?;
        self.step_with(action, epsilon, &stack)
    }

    /// As [`Trainer::step`] with a caller-chosen action.
    pub fn step_with(&mut self, action: ActionSpec, epsilon: f64, stack: &[Tensor<f32>]) -> Result<StepReport> {
        if !self.cfg.actions.allows(action.primitive) {
            return Err(Error::Config(format!("{} is disabled in this variant", action.primitive)));
        }
        let ex = execute(&self.scene, &self.state, &action, &self.sensor, self.cfg.n_rotations, &self.world)?;
        let reward = self.cfg.reward.reward(&ex.outcome)?;
        let terminal = ex.scene.is_terminal(self.cfg.max_actions_per_episode);
        let next_qmax = if terminal {
            0.0
        } else {
            let next_stack = build_rotation_stack(&ex.state, &self.agent.grid);
            self.agent.target_qmaps(&next_stack, self.cfg.actions)?.max(self.cfg.actions) as f64
        };
        let target = td_target(reward, next_qmax, terminal, self.cfg.gamma);

        let (u, v) = action.pixel;
        let taps = self.agent.grid.world_taps(action.rotation_bin, u, v);
        let net = self.agent.net_mut(action.primitive);
        let bp = net.backward_weighted(&stack[action.rotation_bin], &taps, target as f32)?;
        net.sgd_step(&bp.grads, self.cfg.lr as f32, self.cfg.weight_decay as f32)?;
        net.apply_batch_stats(&bp.stats)?;

        let group_before = self.group();
        self.global_step += 1;
        if self.global_step % self.cfg.target_sync_interval == 0 {
            self.agent.sync_targets()?;
        }
        let success = ex.grasped.is_some();
        if action.primitive == Primitive::Grasp {
            self.grasp_attempts += 1;
        }
        if success {
            self.grasp_successes += 1;
            self.episode_grasped += 1;
        }
        let unchanged = !success && matches!(ex.outcome.tau, None | Some(0.0));
        self.stall = if unchanged { self.stall + 1 } else { 0 };

        let row = MetricsRow {
            global_step: self.global_step,
            episode: self.episode,
            group: group_before,
            primitive: action.primitive,
            rotation_bin: action.rotation_bin,
            pixel: action.pixel,
            reward,
            td_target: target,
            loss: bp.loss as f64,
            epsilon,
            grasp_attempts: self.grasp_attempts,
            grasp_successes: self.grasp_successes,
            objects_remaining: ex.scene.objects.len(),
            wall_time: if self.cfg.wall_clock {
                self.clock.elapsed().as_secs_f64()
            } else {
                0.0
            },
            grasped: success,
            explored: action.explored,
        };
        let group_completed = (self.group() > group_before).then_some(group_before);

        self.scene = ex.scene;
        self.state = ex.state;
        let end = if self.scene.objects.is_empty() {
            Some(EpisodeEnd::Cleared)
        } else if terminal {
            Some(EpisodeEnd::ActionCap)
        } else if self.stall >= self.cfg.stall_limit {
            Some(EpisodeEnd::Stalled)
        } else {
            None
        };
        let episode_end = end.map(|e| self.next_episode(e)).transpose()?;
        Ok(StepReport {
            row,
            episode_end,
            group_completed,
        })
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub rows: Vec<MetricsRow>,
    pub episodes: Vec<EpisodeRecord>,
    pub objects_presented: usize,
    pub agent: Agent,
}

struct RunFiles {
    dir: PathBuf,
    metrics: BufWriter<File>,
    episodes: BufWriter<File>,
}

impl RunFiles {
    fn create(dir: &Path, cfg: &TrainConfig) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| -> Result<BufWriter<File>> {
            let p = dir.join(name);
            Ok(BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?))
        };
        let cfg_path = dir.join("config.txt");
        std::fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
        let mut metrics = open("metrics.csv")?;
        let mut episodes = open("episodes.csv")?;
        writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(dir, e))?;
        writeln!(episodes, "{EPISODES_HEADER}").map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics,
            episodes,
        })
    }

    fn row(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.metrics, "{}", row.to_csv())
            .and_then(|_| self.metrics.flush())
            .map_err(|e| Error::io(&self.dir, e))
    }

    fn episode(&mut self, rec: &EpisodeRecord) -> Result<()> {
        writeln!(self.episodes, "{}", rec.to_csv())
            .and_then(|_| self.episodes.flush())
            .map_err(|e| Error::io(&self.dir, e))
    }
}

/// Trains for `cfg.total_actions` actions. With `out`, writes
/// `config.txt`, `metrics.csv`, `episodes.csv` and checkpoints (initial,
/// one per completed group, final unless nothing ran) under it.
pub fn run_training(cfg: TrainConfig, out: Option<&Path>) -> Result<TrainingRun> {
    let mut trainer = Trainer::new(cfg)?;
    let mut files = out.map(|d| RunFiles::create(d, &trainer.cfg)).transpose()?;
    let ckpt_dir = out.map(|d| d.join("checkpoints"));
    if let Some(d) = &ckpt_dir {
        trainer.agent.save(d, "initial")?;
    }
    let mut rows = Vec::with_capacity(trainer.cfg.total_actions);
    let mut episodes = Vec::new();
    for _ in 0..trainer.cfg.total_actions {
        let report = trainer.step()?;
        if let Some(f) = files.as_mut() {
            f.row(&report.row)?;
        }
        rows.push(report.row);
        if let Some(rec) = report.episode_end {
            if let Some(f) = files.as_mut() {
                f.episode(&rec)?;
            }
            episodes.push(rec);
        }
        if let (Some(g), Some(d)) = (report.group_completed, &ckpt_dir) {
            trainer.agent.save(d, &format!("group{g:03}"))?;
        }
    }
    if trainer.global_step() > trainer.episode_first_step {
        let rec = trainer.close_episode();
        if let Some(f) = files.as_mut() {
            f.episode(&rec)?;
        }
        episodes.push(rec);
    }
    if let (Some(d), true) = (&ckpt_dir, trainer.global_step() > 0) {
        trainer.agent.save(d, "final")?;
    }
    Ok(TrainingRun {
        rows,
        episodes,
        objects_presented: trainer.objects_presented,
        agent: trainer.agent,
    })
}
