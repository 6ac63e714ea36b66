use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pushgrasp::harness::{
    emit_plot_data, evaluate_cell, run_ablation, run_generalization, write_manifest, AblationResults, Mix,
    RunSummary, Variant, APPEARANCES,
};
use pushgrasp::policy::ActionSet;
use pushgrasp::qfcn::{gradient_check, read_checkpoint, Architecture, Network};
use pushgrasp::trainer::{parse_metrics, run_training, Agent};
use pushgrasp::world::Shape;
use pushgrasp::{Error, Result, TrainConfig};

#[derive(Parser)]
#[command(name = "pushgrasp", version, about = "Push-grasp Q-learning on a simulated tabletop")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    resolution: Option<usize>,
    /// dual | single
    #[arg(long)]
    perspectives: Option<String>,
    /// push-grasp | grasp-only
    #[arg(long)]
    actions: Option<String>,
    /// piecewise | single
    #[arg(long)]
    reward: Option<String>,
    /// Total training actions.
    #[arg(long)]
    budget: Option<usize>,
    /// Flat `key = value` config file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::desk_scale();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            cfg = TrainConfig::from_text_over(cfg, &text)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.resolution {
            cfg.resolution = r;
        }
        if let Some(p) = &self.perspectives {
            cfg.perspectives = p.parse()?;
        }
        if let Some(a) = &self.actions {
            cfg.actions = a.parse()?;
        }
        if let Some(r) = &self.reward {
            cfg.reward = r.parse()?;
        }
        if let Some(b) = self.budget {
            cfg.total_actions = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Greedy evaluation of trained checkpoints on block scenes.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory holding push_<tag>.ckpt and grasp_<tag>.ckpt.
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, default_value = "final")]
        tag: String,
        /// Objects to present.
        #[arg(long, default_value_t = 100)]
        objects: usize,
    },
    /// Train every ablation variant for every seed.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "full,single-perspective,grasp-only,single-reward")]
        variants: Vec<String>,
    },
    /// Unknown-object protocol for a full and a grasp-only checkpoint.
    Generalize {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory of the full method.
        #[arg(long)]
        full: PathBuf,
        /// Checkpoint directory of the grasp-only method.
        #[arg(long)]
        grasp_only: PathBuf,
        #[arg(long, default_value = "final")]
        tag: String,
    },
    /// Finite-difference check of the analytic gradients on the tiny net.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-variant plot series from an `ablate` output directory.
    PlotData {
        /// Directory written by `ablate`.
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_agent(dir: &Path, tag: &str, cfg: &TrainConfig) -> Result<Agent> {
    let load = |prim: &str| -> Result<Network<f32>> {
        let path = dir.join(format!("{prim}_{tag}.ckpt"));
        let f = File::open(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        read_checkpoint(BufReader::new(f), &cfg.architecture)
    };
    Agent::from_networks(load("push")?, load("grasp")?, cfg.resolution, cfg.n_rotations)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let cfg = common.config()?;
            let run = run_training(cfg.clone(), Some(&common.out))?;
            let s = RunSummary::from_rows(Variant::Full, cfg.seed, &run.rows, run.objects_presented);
            println!(
                "{} actions, {}/{} grasps succeeded, final rate {}",
                s.actions,
                s.grasp_successes,
                s.grasp_attempts,
                s.final_success_rate.map_or("n/a".into(), |r| format!("{r:.3}"))
            );
            write_manifest(&common.out, &cfg.to_text())?;
        }
        Command::Eval {
            common,
            checkpoints,
            tag,
            objects,
        } => {
            let cfg = common.config()?;
            create_dir(&common.out)?;
            let agent = load_agent(&checkpoints, &tag, &cfg)?;
            // blocks only: the "unknown" slot holds blocks too
            let mix = Mix {
                n_unknown: cfg.objects_per_episode,
                n_known: 0,
            };
            let cell = evaluate_cell(&agent, &cfg, cfg.actions, mix, Shape::Block, objects, cfg.seed)?;
            let text = format!(
                "objects_presented,objects_grasped,success_rate\n{},{},{}\n",
                cell.appearances,
                cell.successes,
                cell.successes as f64 / cell.appearances.max(1) as f64
            );
            print!("{text}");
            write(&common.out.join("eval.csv"), &text)?;
            write_manifest(&common.out, &cfg.to_text())?;
        }
        Command::Ablate {
            common,
            seeds,
            variants,
        } => {
            let cfg = common.config()?;
            create_dir(&common.out)?;
            let variants: Vec<Variant> = variants.iter().map(|v| v.parse()).collect::<Result<_>>()?;
            let results = run_ablation(&cfg, &variants, &seeds, cfg.total_actions, Some(&common.out))?;
            print!("{}", results.table());
            write_manifest(&common.out, &cfg.to_text())?;
        }
        Command::Generalize {
            common,
            full,
            grasp_only,
            tag,
        } => {
            let cfg = common.config()?;
            create_dir(&common.out)?;
            let full = load_agent(&full, &tag, &cfg)?;
            let grasp = load_agent(&grasp_only, &tag, &cfg)?;
            let report = run_generalization(
                &[("ours", &full, ActionSet::PushGrasp), ("grasp-only", &grasp, ActionSet::GraspOnly)],
                &cfg,
                cfg.seed,
            )?;
            debug_assert!(report.cells.values().all(|c| c.appearances == APPEARANCES));
            print!("{}", report.table());
            write(&common.out.join("generalization.csv"), &report.table())?;
            write_manifest(&common.out, &cfg.to_text())?;
        }
        Command::GradCheck {
            seed,
            step,
            tolerance,
            out,
        } => {
            let report = gradient_check(&Architecture::tiny(), 8, 8, seed, step, tolerance)?;
            let text = format!(
                "scalars,failures,max_relative_error,tolerance\n{},{},{},{}\n",
                report.scalars, report.failures, report.max_relative_error, report.tolerance
            );
            print!("{text}");
            if let Some(dir) = out {
                create_dir(&dir)?;
                write(&dir.join("grad_check.csv"), &text)?;
                write_manifest(&dir, &format!("seed = {seed}\nstep = {step}\ntolerance = {tolerance}\n"))?;
            }
            if !report.passed() {
                return Err(Error::Config(format!(
                    "{} of {} gradients exceed relative error {tolerance}",
                    report.failures, report.scalars
                )));
            }
        }
        Command::PlotData { from, out } => {
            let mut results = AblationResults { runs: Vec::new() };
            for variant in Variant::ALL {
                let vdir = from.join(variant.name());
                let Ok(entries) = std::fs::read_dir(&vdir) else {
                    continue;
                };
                let mut seeds: Vec<(u64, PathBuf)> = entries
                    .filter_map(|e| e.ok())
                    .filter_map(|e| {
                        let name = e.file_name().into_string().ok()?;
                        Some((name.strip_prefix("seed")?.parse().ok()?, e.path()))
                    })
                    .collect();
                seeds.sort();
                for (seed, dir) in seeds {
                    let path = dir.join("metrics.csv");
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path, source: e })?;
                    let rows = parse_metrics(&text)?;
                    results.runs.push(RunSummary::from_rows(variant, seed, &rows, 0));
                }
            }
            if results.runs.is_empty() {
                return Err(Error::Config(format!("no runs found under {}", from.display())));
            }
            for p in emit_plot_data(&results, &out)? {
                println!("{}", p.display());
            }
            write_manifest(&out, &format!("from = {}\n", from.display()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
