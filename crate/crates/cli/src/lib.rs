//! Subcommands of the `lanegeom` binary.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use lanegeom::bev::{rasterize, BevMap};
use lanegeom::config::{mix_seed, parse_override, RunConfig, KEYS};
use lanegeom::curve::{fit_curve, CurveParams};
use lanegeom::eval::{evaluate, EvalReport};
use lanegeom::fit::{check_gradients, jittered_state, seed_curves, FitProblem};
use lanegeom::io;
use lanegeom::pipeline::{curves_to_polylines, demo_run, fit_scene, perturb_curve, recovery_run, SceneSummary};
use lanegeom::synth::{generate_scene, synthesize_cloud, Scene};
use lanegeom::{GridSpec, Polyline3};

#[derive(Parser, Debug)]
#[command(
    name = "lanegeom",
    version,
    about = "3D lane geometry experiments on synthetic LiDAR scenes",
    after_help = "Every configuration key is also accepted as a flag, e.g. `--lr 0.02` or `--set lr=0.02`.\n\
                  Precedence: flags, then --config file, then built-in defaults."
)]
pub struct Cli {
    /// Key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed (overrides the configuration).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for multi-scene commands (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Configuration override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate `scenes` synthetic scenes with point clouds.
    Synth,
    /// Rasterize a scene's (or a bare cloud's) points into a BEV map.
    Rasterize {
        #[arg(long, conflicts_with = "cloud", required_unless_present = "cloud")]
        scene: Option<PathBuf>,
        /// Cloud file; the grid comes from the configured region.
        #[arg(long)]
        cloud: Option<PathBuf>,
    },
    /// Optimize lane curves for one scene.
    Fit {
        #[arg(long)]
        scene: PathBuf,
        /// `seeds` (from the scene's cloud), `perturbed` (ground truth moved
        /// by the perturbation settings), or a lanes JSON file.
        #[arg(long, default_value = "seeds")]
        init: String,
    },
    /// Score predicted lanes against ground truth.
    Eval {
        /// Lanes JSON (or scene JSON) with predictions.
        #[arg(long)]
        pred: PathBuf,
        /// Lanes JSON (or scene JSON) with ground truth.
        #[arg(long)]
        gt: PathBuf,
    },
    /// Compare analytic and finite-difference gradients of the objective.
    CheckGrads {
        /// Scene JSON; a generated scene is used when absent.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Number of random states to check.
        #[arg(long, default_value_t = 1)]
        states: usize,
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
    },
    /// Synthesize, rasterize, seed, optimize and evaluate `scenes` scenes.
    Demo,
    /// Optimize `scenes` scenes from perturbed ground truth and evaluate.
    Recover,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Rasterize { .. } => "rasterize",
            Command::Fit { .. } => "fit",
            Command::Eval { .. } => "eval",
            Command::CheckGrads { .. } => "check-grads",
            Command::Demo => "demo",
            Command::Recover => "recover",
        }
    }
}

/// Rewrites `--key value` and `--key=value` for configuration keys into
/// `--set key=value` (dashes in the key may stand for underscores).
pub fn expand_config_flags(args: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    if let Some(first) = it.next() {
        out.push(first);
    }
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            out.push(a);
            continue;
        };
        let (name, inline) = match body.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        let key = name.replace('-', "_");
        if key == "seed" || !KEYS.contains(&key.as_str()) {
            out.push(a);
            continue;
        }
        match inline.or_else(|| it.next()) {
            Some(v) => {
                out.push("--set".into());
                out.push(format!("{key}={v}"));
            }
            None => out.push(a),
        }
    }
    out
}

/// Defaults, then the config file, then `--set` flags, then `--seed`.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?),
        None => None,
    };
    let label = cli.config.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
    let mut overrides = cli.set.iter().map(|s| parse_override(s)).collect::<lanegeom::Result<Vec<_>>>()?;
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    Ok(RunConfig::resolve(text.as_deref().map(|t| (t, label.as_str())), &overrides)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(io::write_atomic(path, text.as_bytes())?)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
}

/// Lanes from a lanes JSON or scene JSON file.
fn read_any_lanes(path: &Path) -> Result<Vec<Polyline3<f64>>> {
    Ok(io::read_lanes(path)?)
}

/// Runs one parsed command line; returns the JSON summary printed on stdout.
pub fn run(cli: Cli) -> Result<serde_json::Value> {
    let cfg = resolve_config(&cli)?;
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let snapshot = cli.out.join(format!("{}.resolved.cfg", cli.command.name()));
    write_text(&snapshot, &cfg.to_text())?;
    log::info!("resolved configuration written to {}", snapshot.display());
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.unwrap_or(0)).build()?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Synth => pool.install(|| cmd_synth(&cfg, out)),
        Command::Rasterize { scene, cloud } => cmd_rasterize(&cfg, out, scene.as_deref(), cloud.as_deref()),
        Command::Fit { scene, init } => cmd_fit(&cfg, out, scene, init),
        Command::Eval { pred, gt } => cmd_eval(&cfg, out, pred, gt),
        Command::CheckGrads { scene, states, step } => cmd_check_grads(&cfg, out, scene.as_deref(), *states, *step),
        Command::Demo => pool.install(|| cmd_batch(&cfg, out, "demo")),
        Command::Recover => pool.install(|| cmd_batch(&cfg, out, "recover")),
    }
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<serde_json::Value> {
    let files = (0..cfg.scenes)
        .into_par_iter()
        .map(|i| -> Result<String> {
            let c = cfg.for_scene(i);
            let mut scene = generate_scene(&c.scene)?.scene;
            scene.cloud = synthesize_cloud(&scene, &c.cloud)?;
            let path = io::write_scene(out, &format!("scene_{i:04}"), &scene)?;
            log::info!("scene {i}: {} lanes, {} points", scene.lanes.len(), scene.cloud.len());
            Ok(path.display().to_string())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({ "command": "synth", "scenes": files }))
}

pub fn cmd_rasterize(cfg: &RunConfig, out: &Path, scene: Option<&Path>, cloud: Option<&Path>) -> Result<serde_json::Value> {
    let (name, points, spec): (String, _, GridSpec<f64>) = match (scene, cloud) {
        (Some(p), _) => {
            let s: Scene<f64> = io::read_scene(p)?;
            if s.cloud_file.is_none() {
                bail!("scene {} has no point cloud", p.display());
            }
            (stem(p), s.cloud, s.region)
        }
        (None, Some(p)) => (stem(p), io::load_point_cloud(p)?, cfg.scene.region),
        (None, None) => bail!("rasterize needs --scene or --cloud"),
    };
    let bev = rasterize(&points, &spec);
    let path = out.join(format!("{name}.bev"));
    io::write_bev(&path, &bev)?;
    let occupied = bev.density().iter().filter(|&&d| d > 0.0).count();
    Ok(json!({ "command": "rasterize", "bev": path, "points": points.len(), "occupied_cells": occupied }))
}

#[derive(Serialize)]
struct FitFile {
    curves: Vec<CurveParams<f64>>,
    probs: Vec<f64>,
    reported: Vec<usize>,
    report: EvalReport,
    iterations: usize,
    converged: bool,
    final_loss: f64,
}

pub fn cmd_fit(cfg: &RunConfig, out: &Path, scene_path: &Path, init: &str) -> Result<serde_json::Value> {
    let scene: Scene<f64> = io::read_scene(scene_path)?;
    let mut cfg = cfg.clone();
    cfg.fit.seed = mix_seed(cfg.seed, 2);
    let init_curves: Vec<CurveParams<f64>> = match init {
        "seeds" => {
            if scene.cloud.is_empty() {
                bail!("scene {} has no point cloud to seed from", scene_path.display());
            }
            let bev: BevMap<f64> = rasterize(&scene.cloud, &scene.region);
            seed_curves(&bev, &cfg.seeding)?
        }
        "perturbed" => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 3));
            scene
                .lanes
                .iter()
                .map(|l| Ok(perturb_curve(&fit_curve(l)?.params, &cfg.perturb, &mut rng)))
                .collect::<lanegeom::Result<_>>()?
        }
        path => read_any_lanes(Path::new(path))?
            .iter()
            .map(|l| fit_curve(l).map(|f| f.params))
            .collect::<lanegeom::Result<_>>()?,
    };
    let outcome = fit_scene(&scene, &init_curves, &cfg)?;
    let name = stem(scene_path);
    let state = &outcome.result.state;
    let probs: Vec<f64> = (0..state.slots.len()).map(|j| state.prob(j)).collect();
    let reported: Vec<usize> = (0..probs.len()).filter(|&j| probs[j] >= cfg.fit.prob_threshold).collect();
    let file = FitFile {
        curves: state.slots.iter().map(|s| s.theta).collect(),
        probs,
        reported,
        report: outcome.report.clone(),
        iterations: outcome.result.iterations,
        converged: outcome.result.converged,
        final_loss: outcome.result.final_loss.total,
    };
    io::write_json(&out.join(format!("{name}.fit.json")), &file)?;
    let pred = curves_to_polylines(&outcome.lanes, cfg.eval.spacing)?;
    io::write_lanes(&out.join(format!("{name}.pred.json")), &pred)?;
    write_text(&out.join(format!("{name}.trace.csv")), &outcome.result.trace_csv())?;
    eprint!("{}", outcome.report.table());
    Ok(json!({
        "command": "fit",
        "init_curves": init_curves.len(),
        "predicted": outcome.lanes.len(),
        "iterations": outcome.result.iterations,
        "report": outcome.report,
    }))
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, pred: &Path, gt: &Path) -> Result<serde_json::Value> {
    let p = read_any_lanes(pred)?;
    let g = read_any_lanes(gt)?;
    let report = evaluate(&p, &g, &cfg.eval.thresholds, cfg.eval.spacing)?;
    io::write_json(&out.join("report.json"), &report)?;
    write_text(&out.join("report.txt"), &report.table())?;
    eprint!("{}", report.table());
    Ok(json!({ "command": "eval", "report": report }))
}

pub fn cmd_check_grads(cfg: &RunConfig, out: &Path, scene: Option<&Path>, states: usize, step: f64) -> Result<serde_json::Value> {
    let lanes = match scene {
        Some(p) => io::read_scene::<f64>(p)?.lanes,
        None => generate_scene(&cfg.for_scene(0).scene)?.scene.lanes,
    };
    let curves = lanes.iter().map(|l| fit_curve(l).map(|f| f.params)).collect::<lanegeom::Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 4));
    let problem = FitProblem::from_lanes(&lanes, &cfg.fit, &mut rng)?;
    let weights = cfg.fit.weights::<f64>();
    let mut results = Vec::with_capacity(states);
    for k in 0..states {
        let state = jittered_state(&problem, &curves, &mut rng)?;
        let perm: Vec<usize> = lanegeom::assignment::hungarian(&lanegeom::assignment::cost_matrix(
            &state.predictions(),
            &problem.gts,
            weights.lambda1,
        )?);
        let check = check_gradients(&state, &problem, &perm, &weights, true, step)?;
        log::info!("state {k}: max relative error {:e} at {}", check.max_rel_error, check.worst_index);
        results.push(json!({ "state": k, "max_rel_error": check.max_rel_error, "worst_index": check.worst_index, "dim": check.analytic.len() }));
    }
    let worst = results.iter().map(|r| r["max_rel_error"].as_f64().unwrap()).fold(0.0, f64::max);
    let report = json!({ "command": "check-grads", "step": step, "max_rel_error": worst, "states": results });
    io::write_json(&out.join("grad_check.json"), &report)?;
    Ok(report)
}

#[derive(Serialize)]
struct ThresholdMean {
    tau: f64,
    precision: f64,
    recall: f64,
    f1: f64,
}

#[derive(Serialize)]
struct BatchSummary {
    command: String,
    scenes: usize,
    means: Vec<ThresholdMean>,
    per_scene: Vec<SceneSummary>,
}

pub fn cmd_batch(cfg: &RunConfig, out: &Path, kind: &str) -> Result<serde_json::Value> {
    let summaries = (0..cfg.scenes)
        .into_par_iter()
        .map(|i| -> Result<SceneSummary> {
            let outcome = if kind == "demo" { demo_run(cfg, i)?.3 } else { recovery_run(cfg, i)?.1 };
            let summary = outcome.summary(i, cfg.scene_seed(i));
            io::write_json(&out.join(format!("{kind}_{i:04}.json")), &summary)?;
            let pred = curves_to_polylines(&outcome.lanes, cfg.eval.spacing)?;
            io::write_lanes(&out.join(format!("{kind}_{i:04}.pred.json")), &pred)?;
            log::info!("{kind} scene {i}: F1 {:?}", summary.report.scores.iter().map(|s| s.f1).collect::<Vec<_>>());
            Ok(summary)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = summaries.len().max(1) as f64;
    let means = cfg
        .eval
        .thresholds
        .iter()
        .enumerate()
        .map(|(k, &tau)| ThresholdMean {
            tau,
            precision: summaries.iter().map(|s| s.report.scores[k].precision).sum::<f64>() / n,
            recall: summaries.iter().map(|s| s.report.scores[k].recall).sum::<f64>() / n,
            f1: summaries.iter().map(|s| s.report.scores[k].f1).sum::<f64>() / n,
        })
        .collect::<Vec<_>>();
    let mut table = format!("{:>8}  {:>12}  {:>9}  {:>7}\n", "tau(m)", "Precision(%)", "Recall(%)", "F1(%)");
    for m in &means {
        table.push_str(&format!("{:>8.2}  {:>12.2}  {:>9.2}  {:>7.2}\n", m.tau, 100.0 * m.precision, 100.0 * m.recall, 100.0 * m.f1));
    }
    eprint!("{table}");
    let summary = BatchSummary { command: kind.into(), scenes: summaries.len(), means, per_scene: summaries };
    io::write_json(&out.join(format!("{kind}_summary.json")), &summary)?;
    write_text(&out.join(format!("{kind}_summary.txt")), &table)?;
    Ok(serde_json::to_value(json!({ "command": kind, "scenes": summary.scenes, "means": summary.means }))?)
}

/// Machine-readable form of an error.
pub fn error_json(err: &anyhow::Error) -> serde_json::Value {
    let kind = err.chain().find_map(|e| e.downcast_ref::<lanegeom::Error>()).map(|e| e.kind()).unwrap_or("error");
    let mut message = String::new();
    for cause in err.chain().map(|e| e.to_string()) {
        // Library errors already embed their source text.
        if !message.contains(&cause) {
            if !message.is_empty() {
                message.push_str(": ");
            }
            message.push_str(&cause);
        }
    }
    json!({ "error": { "kind": kind, "message": message } })
}
