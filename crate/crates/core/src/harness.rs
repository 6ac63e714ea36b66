//! Ablation matrix, generalization protocol, plot data and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::policy::{build_rotation_stack, greedy_action, ActionSet, Primitive};
use crate::sensing::{Perspectives, Sensor};
use crate::trainer::{actions_to_success, execute, final_attempt_rate, run_training, Agent, MetricsRow};
use crate::world::{spawn_scene, Shape};

/// Grasp attempts in the final success-rate window.
pub const FINAL_WINDOW: usize = 200;
/// Trailing grasp attempts used to decide when 50% success is reached.
pub const CONVERGENCE_WINDOW: usize = 50;
pub const CONVERGENCE_LEVEL: f64 = 0.5;
pub const ROLLING_WINDOW: usize = 5;
pub const APPEARANCES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Full,
    SinglePerspective,
    GraspOnly,
    SingleReward,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::SinglePerspective,
        Variant::GraspOnly,
        Variant::SingleReward,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::SinglePerspective => "single-perspective",
            Variant::GraspOnly => "grasp-only",
            Variant::SingleReward => "single-reward",
        }
    }

    /// `base` with exactly this variant's axis switched off.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.perspectives = Perspectives::Dual;
        cfg.actions = ActionSet::PushGrasp;
        cfg.reward = crate::reward::RewardScheme::Piecewise;
        match self {
            Variant::Full => {}
            Variant::SinglePerspective => cfg.perspectives = Perspectives::Single,
            Variant::GraspOnly => cfg.actions = ActionSet::GraspOnly,
            Variant::SingleReward => cfg.reward = crate::reward::RewardScheme::Single,
        }
        cfg
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Summary of one (variant, seed) training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub variant: Variant,
    pub seed: u64,
    pub actions: usize,
    pub grasp_attempts: usize,
    pub grasp_successes: usize,
    pub objects_presented: usize,
    /// Per-attempt success over the last [`FINAL_WINDOW`] grasp attempts.
    pub final_success_rate: Option<f64>,
    /// Objects grasped over objects presented, whole run.
    pub object_success_rate: Option<f64>,
    pub actions_to_50: Option<usize>,
    /// Per-group per-attempt success rate.
    pub group_series: Vec<(usize, f64)>,
}

pub const RESULTS_HEADER: &str = "variant,seed,actions,grasp_attempts,grasp_successes,objects_presented,final_success_rate,object_success_rate,actions_to_50";

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl RunSummary {
    pub fn from_rows(variant: Variant, seed: u64, rows: &[MetricsRow], objects_presented: usize) -> Self {
        let attempts = rows.iter().filter(|r| r.primitive == Primitive::Grasp).count();
        let successes = rows.iter().filter(|r| r.grasped).count();
        let mut groups: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.primitive == Primitive::Grasp) {
            let e = groups.entry(r.group).or_default();
            e.0 += r.grasped as usize;
            e.1 += 1;
        }
        Self {
            variant,
            seed,
            actions: rows.len(),
            grasp_attempts: attempts,
            grasp_successes: successes,
            objects_presented: if rows.is_empty() { 0 } else { objects_presented },
            final_success_rate: final_attempt_rate(rows, FINAL_WINDOW).ok(),
            object_success_rate: (objects_presented > 0 && !rows.is_empty())
                .then(|| successes as f64 / objects_presented as f64),
            actions_to_50: actions_to_success(rows, CONVERGENCE_WINDOW, CONVERGENCE_LEVEL),
            group_series: groups.into_iter().map(|(g, (s, n))| (g, s as f64 / n as f64)).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.variant.name(),
            self.seed,
            self.actions,
            self.grasp_attempts,
            self.grasp_successes,
            self.objects_presented,
            opt(self.final_success_rate),
            opt(self.object_success_rate),
            opt(self.actions_to_50)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResults {
    pub runs: Vec<RunSummary>,
}

impl AblationResults {
    pub fn table(&self) -> String {
        let mut s = format!("{RESULTS_HEADER}\n");
        for r in &self.runs {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }

    pub fn get(&self, variant: Variant, seed: u64) -> Option<&RunSummary> {
        self.runs.iter().find(|r| r.variant == variant && r.seed == seed)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains every (variant, seed) pair for `budget` actions. With `out`,
/// each run writes under `<out>/<variant>/seed<k>/` and the summary table
/// goes to `<out>/results.csv`, rewritten after every run.
pub fn run_ablation(base: &TrainConfig, variants: &[Variant], seeds: &[u64], budget: usize, out: Option<&Path>) -> Result<AblationResults> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one variant and one seed".into()));
    }
    let mut results = AblationResults { runs: Vec::new() };
    for &variant in variants {
        for &seed in seeds {
            let mut cfg = variant.apply(base);
            cfg.seed = seed;
            cfg.total_actions = budget;
            let dir = out.map(|o| o.join(variant.name()).join(format!("seed{seed}")));
            let run = run_training(cfg, dir.as_deref())?;
            results
                .runs
                .push(RunSummary::from_rows(variant, seed, &run.rows, run.objects_presented));
            if let Some(o) = out {
                write_file(&o.join("results.csv"), &results.table())?;
            }
        }
    }
    Ok(results)
}

/// Trailing mean over up to `window` values.
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let w = &values[lo..=i];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

/// One CSV per variant with the seed-averaged per-group success rate and
/// its rolling mean. Returns the files written.
pub fn emit_plot_data(results: &AblationResults, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut variants: Vec<Variant> = results.runs.iter().map(|r| r.variant).collect();
    variants.sort();
    variants.dedup();
    let mut paths = Vec::new();
    for v in variants {
        let mut per_group: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in results.runs.iter().filter(|r| r.variant == v) {
            for &(g, rate) in &r.group_series {
                per_group.entry(g).or_default().push(rate);
            }
        }
        let groups: Vec<usize> = per_group.keys().copied().collect();
        let rates: Vec<f64> = per_group
            .values()
            .map(|xs| xs.iter().sum::<f64>() / xs.len() as f64)
            .collect();
        let rolling = rolling_mean(&rates, ROLLING_WINDOW);
        let mut text = format!(
            "# group: training group index; success_rate: per-attempt grasp success in the group, mean over seeds; rolling_mean: trailing mean over {ROLLING_WINDOW} groups\ngroup,success_rate,rolling_mean\n"
        );
        for ((g, r), m) in groups.iter().zip(&rates).zip(&rolling) {
            let _ = writeln!(text, "{g},{r},{m}");
        }
        let path = dir.join(format!("plot_{}.csv", v.name()));
        write_file(&path, &text)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Parses a results table written by [`AblationResults::table`].
pub fn parse_results(text: &str) -> Result<AblationResults> {
    let mut lines = text.lines();
    if lines.next() != Some(RESULTS_HEADER) {
        return Err(Error::Parse("results table header".into()));
    }
    let mut runs = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::Parse(format!("results row `{line}`")));
        }
        let p = |s: &str| -> Result<usize> { s.parse().map_err(|_| Error::Parse(format!("`{s}` in `{line}`"))) };
        let pf = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::Parse(format!("`{s}` in `{line}`")))
            }
        };
        runs.push(RunSummary {
            variant: f[0].parse()?,
            seed: p(f[1])? as u64,
            actions: p(f[2])?,
            grasp_attempts: p(f[3])?,
            grasp_successes: p(f[4])?,
            objects_presented: p(f[5])?,
            final_success_rate: pf(f[6])?,
            object_success_rate: pf(f[7])?,
            actions_to_50: if f[8].is_empty() { None } else { Some(p(f[8])?) },
            group_series: Vec::new(),
        });
    }
    Ok(AblationResults { runs })
}

/// Unknown/known object counts per episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mix {
    pub n_unknown: usize,
    pub n_known: usize,
}

impl Mix {
    pub const TABLE: [Mix; 3] = [
        Mix { n_unknown: 1, n_known: 5 },
        Mix { n_unknown: 3, n_known: 3 },
        Mix { n_unknown: 5, n_known: 1 },
    ];

    pub fn label(self) -> String {
        format!("{}U+{}K", self.n_unknown, self.n_known)
    }
}

/// Unknown-object successes for one (mix, shape, method) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub successes: usize,
    pub appearances: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizationReport {
    /// Keyed by (mix, method name, shape).
    pub cells: BTreeMap<(Mix, String, Shape), Cell>,
    pub methods: Vec<String>,
}

impl GeneralizationReport {
    pub fn cell(&self, mix: Mix, method: &str, shape: Shape) -> Option<Cell> {
        self.cells.get(&(mix, method.to_string(), shape)).copied()
    }

    /// Rows `mix x method`, columns triangle, semicircle, cylinder.
    pub fn table(&self) -> String {
        let mut s = String::from("mix,method");
        for shape in Shape::UNKNOWN {
            let _ = write!(s, ",{}", shape.name());
        }
        s.push('\n');
        for mix in Mix::TABLE {
            for m in &self.methods {
                let _ = write!(s, "{},{m}", mix.label());
                for shape in Shape::UNKNOWN {
                    match self.cell(mix, m, shape) {
                        Some(c) => {
                            let _ = write!(s, ",{}/{}", c.successes, c.appearances);
                        }
                        None => s.push(','),
                    }
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Greedy episodes without learning until `appearances` objects of
/// `shape` have been presented (`mix.n_unknown` per episode alongside
/// `mix.n_known` blocks); counts the ones grasped.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_cell(
    agent: &Agent,
    cfg: &TrainConfig,
    actions: ActionSet,
    mix: Mix,
    shape: Shape,
    appearances: usize,
    seed: u64,
) -> Result<Cell> {
    let world = cfg.world();
    let sensor = Sensor::new(&world.workspace, cfg.resolution, cfg.perspectives)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut presented = 0;
    let mut successes = 0;
    while presented < appearances {
        let n_unknown = mix.n_unknown.min(appearances - presented);
        let mut scene = spawn_scene(mix.n_known, n_unknown, shape, rng.random(), &world)?;
        presented += n_unknown;
        let mut state = sensor.observe(&scene);
        let mut stall = 0;
        while !scene.is_terminal(cfg.max_actions_per_episode) && stall < cfg.stall_limit {
            let stack = build_rotation_stack(&state, &agent.grid);
            let qmaps = agent.current_qmaps(&stack, actions)?;
            let action = greedy_action(&qmaps, actions);
            let ex = execute(&scene, &state, &action, &sensor, cfg.n_rotations, &world)?;
            let grasped_target = ex
                .grasped
                .and_then(|id| scene.object(id))
                .is_some_and(|o| o.shape == shape);
            successes += grasped_target as usize;
            let unchanged = ex.grasped.is_none() && matches!(ex.outcome.tau, None | Some(0.0));
            stall = if unchanged { stall + 1 } else { 0 };
            scene = ex.scene;
            state = ex.state;
        }
    }
    Ok(Cell {
        successes,
        appearances: presented,
    })
}

/// Unknown-object protocol (mix × shape grid) for each (name, agent, action set) method.
pub fn run_generalization(
    methods: &[(&str, &Agent, ActionSet)],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<GeneralizationReport> {
    let mut cells = BTreeMap::new();
    for (mi, mix) in Mix::TABLE.into_iter().enumerate() {
        for (si, shape) in Shape::UNKNOWN.into_iter().enumerate() {
            // both methods see the same scenes
            let cell_seed = seed.wrapping_mul(1000).wrapping_add((mi * 10 + si) as u64);
            for &(name, agent, actions) in methods {
                let cell = evaluate_cell(agent, cfg, actions, mix, shape, APPEARANCES, cell_seed)?;
                cells.insert((mix, name.to_string(), shape), cell);
            }
        }
    }
    Ok(GeneralizationReport {
        cells,
        methods: methods.iter().map(|m| m.0.to_string()).collect(),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `<dir>/manifest`: the config echo followed by a SHA-256 line
/// for every other file under `dir`, sorted by relative path.
pub fn write_manifest(dir: &Path, config_echo: &str) -> Result<PathBuf> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out)?;
            } else if p.file_name().is_some_and(|n| n != "manifest") {
                out.push(p.strip_prefix(base).expect("under base").to_path_buf());
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort();
    let mut text = String::from("[config]\n");
    text.push_str(config_echo);
    if !config_echo.ends_with('\n') {
        text.push('\n');
    }
    text.push_str("[files]\n");
    for rel in files {
        let path = dir.join(&rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let _ = writeln!(text, "{}  {}", sha256_hex(&bytes), rel.display());
    }
    let path = dir.join("manifest");
    write_file(&path, &text)?;
    Ok(path)
}
