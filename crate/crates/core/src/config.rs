//! Training configuration and its flat `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::policy::ActionSet;
use crate::qfcn::Architecture;
use crate::reward::RewardScheme;
use crate::sensing::Perspectives;
use crate::world::WorldConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epsilon_start: f64,
    pub epsilon_final: f64,
    pub anneal_steps: usize,
    pub target_sync_interval: usize,
    pub resolution: usize,
    pub n_rotations: usize,
    pub max_actions_per_episode: usize,
    pub objects_per_episode: usize,
    pub group_size: usize,
    /// Episode ends after this many consecutive actions that change nothing.
    pub stall_limit: usize,
    pub total_actions: usize,
    /// Side of the central square objects are spawned in (m).
    pub spawn_extent: f64,
    pub perspectives: Perspectives,
    pub actions: ActionSet,
    pub reward: RewardScheme,
    pub seed: u64,
    pub architecture: Architecture,
    /// Fill the `wall_time` metrics column; off keeps outputs reproducible.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.6,
            lr: 1e-4,
            weight_decay: 0.03125,
            epsilon_start: 0.65,
            epsilon_final: 0.1,
            anneal_steps: 2000,
            target_sync_interval: 50,
            resolution: 224,
            n_rotations: 16,
            max_actions_per_episode: 50,
            objects_per_episode: 10,
            group_size: 100,
            stall_limit: 10,
            total_actions: 3000,
            spawn_extent: WorldConfig::default().spawn_extent,
            perspectives: Perspectives::Dual,
            actions: ActionSet::PushGrasp,
            reward: RewardScheme::Piecewise,
            seed: 0,
            architecture: Architecture::stride16(),
            wall_clock: false,
        }
    }
}

fn perspectives_name(p: Perspectives) -> &'static str {
    match p {
        Perspectives::Dual => "dual",
        Perspectives::Single => "single",
    }
}

impl FromStr for Perspectives {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(Perspectives::Dual),
            "single" => Ok(Perspectives::Single),
            _ => Err(Error::Config(format!("unknown perspectives `{s}`"))),
        }
    }
}

impl TrainConfig {
    /// 64x64 grid, 8 rotations, 4 objects, 3000 actions. The stride-16 net
    /// only peaks every 16 cells at this size, coarser than the objects, so
    /// desk scale uses the stride-4 net; plain SGD there needs lr 1e-3 to
    /// move within the budget.
    pub fn desk_scale() -> Self {
        Self {
            architecture: Architecture::stride4(),
            lr: 1e-3,
            resolution: 64,
            n_rotations: 8,
            objects_per_episode: 4,
            total_actions: 3000,
            ..Self::default()
        }
    }

    /// World parameters with this config's overrides applied.
    pub fn world(&self) -> WorldConfig {
        WorldConfig {
            spawn_extent: self.spawn_extent,
            ..WorldConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if !(0.0 <= self.epsilon_final && self.epsilon_final <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return bad(format!(
                "need 0 <= epsilon_final ({}) <= epsilon_start ({}) <= 1",
                self.epsilon_final, self.epsilon_start
            ));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr must be positive and weight_decay non-negative".into());
        }
        self.architecture.validate()?;
        if self.resolution == 0 || self.architecture.output_size(self.resolution, self.resolution)? != (self.resolution, self.resolution) {
            return bad(format!("architecture does not preserve a {0}x{0} grid", self.resolution));
        }
        if self.architecture.input_channels != crate::sensing::STATE_CHANNELS {
            return bad(format!("architecture takes {} channels, the state has {}", self.architecture.input_channels, crate::sensing::STATE_CHANNELS));
        }
        if !(self.spawn_extent > 0.0) {
            return bad(format!("spawn_extent {} must be positive", self.spawn_extent));
        }
        if self.n_rotations == 0 || self.objects_per_episode == 0 || self.group_size == 0 {
            return bad("n_rotations, objects_per_episode and group_size must be positive".into());
        }
        if self.target_sync_interval == 0 || self.max_actions_per_episode == 0 || self.stall_limit == 0 {
            return bad("target_sync_interval, max_actions_per_episode and stall_limit must be positive".into());
        }
        Ok(())
    }

    /// `key = value` lines using the field names.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("gamma", self.gamma.to_string());
        kv("lr", self.lr.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("epsilon_start", self.epsilon_start.to_string());
        kv("epsilon_final", self.epsilon_final.to_string());
        kv("anneal_steps", self.anneal_steps.to_string());
        kv("target_sync_interval", self.target_sync_interval.to_string());
        kv("resolution", self.resolution.to_string());
        kv("n_rotations", self.n_rotations.to_string());
        kv("max_actions_per_episode", self.max_actions_per_episode.to_string());
        kv("objects_per_episode", self.objects_per_episode.to_string());
        kv("group_size", self.group_size.to_string());
        kv("stall_limit", self.stall_limit.to_string());
        kv("total_actions", self.total_actions.to_string());
        kv("spawn_extent", self.spawn_extent.to_string());
        kv("perspectives", perspectives_name(self.perspectives).into());
        kv("actions", self.actions.name().into());
        kv("reward", self.reward.name().into());
        kv("seed", self.seed.to_string());
        kv("architecture", self.architecture.to_string());
        kv("wall_clock", self.wall_clock.to_string());
        s
    }

    /// Applies one `key`, `value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "gamma" => self.gamma = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "epsilon_start" => self.epsilon_start = num(key, value)?,
            "epsilon_final" => self.epsilon_final = num(key, value)?,
            "anneal_steps" => self.anneal_steps = num(key, value)?,
            "target_sync_interval" => self.target_sync_interval = num(key, value)?,
            "resolution" => self.resolution = num(key, value)?,
            "n_rotations" => self.n_rotations = num(key, value)?,
            "max_actions_per_episode" => self.max_actions_per_episode = num(key, value)?,
            "objects_per_episode" => self.objects_per_episode = num(key, value)?,
            "group_size" => self.group_size = num(key, value)?,
            "stall_limit" => self.stall_limit = num(key, value)?,
            "total_actions" => self.total_actions = num(key, value)?,
            "spawn_extent" => self.spawn_extent = num(key, value)?,
            "perspectives" => self.perspectives = value.parse()?,
            "actions" => self.actions = value.parse()?,
            "reward" => self.reward = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "architecture" => self.architecture = value.parse()?,
            "wall_clock" => self.wall_clock = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses the text form over `base`; blank lines and `#` comments are
    /// skipped.
    pub fn from_text_over(base: Self, text: &str) -> Result<Self> {
        let mut cfg = base;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_text_over(Self::default(), text)
    }
}
