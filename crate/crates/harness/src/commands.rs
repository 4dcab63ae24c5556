//! Subcommands. Each one validates its whole configuration, runs on a
//! dedicated worker pool and writes its result files plus `manifest.json`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use langevin_core::analysis::{
    assumption_check, ks_statistic, mode_frequencies_of, tv_discrete, AssumptionKind, AssumptionReport,
    CheckConstants, EscapeReport, EscapeTrace, EscapeTracer, ModeReport, Threshold, ThresholdKind,
};
use langevin_core::conditional::{conditional_mixture, sample_chain_rule, PatchLayout, PrefixState};
use langevin_core::rng::{stream, Purpose};
use langevin_core::samplers::{ChainBatch, InitSpec, NoObserver, Trajectory};
use langevin_core::MixtureModel;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{build_config, read_config_value, Experiment, ExperimentConfig, ModelSource, SamplerKind};
use crate::error::{HarnessError, HarnessResult};
use crate::report::{fmt_float, final_csv, trace_csv, OutputDir};
use crate::svg;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "LANGEVIN_WORKERS";

/// Largest relative error `score-check` accepts.
pub const SCORE_TOLERANCE: f64 = 1e-4;
/// Per-coordinate KS bound for exact per-patch composition in `tv-check`.
pub const KS_EXACT_TOLERANCE: f64 = 0.03;
/// Per-coordinate KS bound for chained dynamics in `tv-check`.
pub const KS_CHAINED_TOLERANCE: f64 = 0.05;
/// Desk-scale caps lifted by `--full`.
pub const DESK_MAX_ITERATIONS: usize = 100_000;
pub const DESK_MAX_BATCH: usize = 1000;
/// Most points drawn per SVG panel.
const MAX_PLOT_POINTS: usize = 20_000;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct CommonOptions {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub full: bool,
    pub overrides: Vec<(String, Value)>,
}

/// What a subcommand reports on stdout.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: Value,
    /// False when a check subcommand misses its acceptance threshold.
    pub passed: bool,
    pub out_dir: PathBuf,
}

impl CommonOptions {
    /// Config file, then `--set` overrides, then `--seed` and `--out`.
    pub fn load_config(&self, preset: &[(String, Value)]) -> HarnessResult<ExperimentConfig> {
        let mut base = match &self.config {
            Some(p) => Some(read_config_value(p)?),
            None => None,
        };
        if let Some(Value::Object(map)) = base.as_mut() {
            for (k, v) in preset {
                map.entry(k.clone()).or_insert_with(|| v.clone());
            }
        } else if !preset.is_empty() {
            base = Some(Value::Object(preset.iter().cloned().collect()));
        }
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), json!(seed)));
        }
        if let Some(out) = &self.out {
            overrides.push(("out".into(), json!(out)));
        }
        let mut config = build_config(base, &overrides)?;
        // Model paths are made absolute so the echoed config works from anywhere.
        if let ModelSource::Path(p) = &config.model {
            if p.is_relative() {
                let dir = self
                    .config
                    .as_ref()
                    .and_then(|c| c.parent().map(Path::to_path_buf))
                    .unwrap_or_default();
                let joined = dir.join(p);
                config.model = ModelSource::Path(std::path::absolute(&joined).unwrap_or(joined));
            }
        }
        Ok(config)
    }

    fn out_dir(&self, config: &ExperimentConfig, default: &str) -> PathBuf {
        config.out.clone().unwrap_or_else(|| PathBuf::from("out").join(default))
    }

    fn worker_count(&self) -> HarnessResult<usize> {
        let n = match self.workers {
            Some(n) => n,
            None => match std::env::var(WORKERS_ENV) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map_err(|_| HarnessError::config(format!("{WORKERS_ENV}={v:?} is not a worker count")))?,
                Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
            },
        };
        if n == 0 {
            return Err(HarnessError::config("workers must be at least 1"));
        }
        Ok(n)
    }

    /// Runs `f` on a pool of the requested size.
    pub fn in_pool<T: Send>(&self, f: impl FnOnce() -> HarnessResult<T> + Send) -> HarnessResult<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.worker_count()?)
            .build()
            .map_err(|e| HarnessError::Io(e.to_string()))?;
        pool.install(f)
    }
}

#[derive(Debug, Clone, Serialize)]
struct ModesFile<'a> {
    #[serde(flatten)]
    report: &'a ModeReport,
    weights: Vec<f64>,
    tv_to_weights: f64,
}

fn modes_file<'a>(report: &'a ModeReport, model: &MixtureModel) -> HarnessResult<ModesFile<'a>> {
    let weights = model.weights();
    Ok(ModesFile {
        tv_to_weights: tv_discrete(&report.frequencies, &weights)?,
        report,
        weights,
    })
}

fn thin<T>(items: Vec<T>, max: usize) -> Vec<T> {
    if items.len() <= max {
        return items;
    }
    let stride = items.len().div_ceil(max);
    items.into_iter().step_by(stride).collect()
}

fn labelled_panels(states: &[&[f64]], exp: &Experiment, title: &str) -> HarnessResult<Vec<svg::Panel>> {
    let labels = states
        .iter()
        .map(|x| langevin_core::analysis::cluster_mode(x, &exp.model, exp.config.radius_coef))
        .collect::<langevin_core::Result<Vec<_>>>()?;
    Ok(svg::distance_panels(states, &labels, &exp.model, title))
}

fn recorded_states(trajectories: &[Trajectory]) -> Vec<&[f64]> {
    let all: Vec<&[f64]> = trajectories
        .iter()
        .flat_map(|t| t.states.iter().map(|s| s.as_slice()))
        .collect();
    thin(all, MAX_PLOT_POINTS)
}

/// `run`: one sampler, final states, optional trajectories, mode report and
/// distance panels.
pub fn cmd_run(opts: &CommonOptions) -> HarnessResult<Outcome> {
    let started = Instant::now();
    let config = opts.load_config(&[])?;
    let exp = Experiment::resolve(config, None)?;
    let root = opts.out_dir(&exp.config, "run");
    let (batch, _) = opts.in_pool(|| exp.execute(&NoObserver))?;
    // Clustering needs at least one non-universal component.
    let report = if exp.model.num_components() > 1 {
        Some(mode_frequencies_of(&batch.states, &exp.model, exp.config.radius_coef)?)
    } else {
        None
    };

    let mut out = OutputDir::create(&root)?;
    out.write("final.csv", &final_csv(&batch.states, batch.dim))?;
    if let Some(trajectories) = &batch.recorded {
        out.write("trace.csv", &trace_csv(trajectories, batch.dim))?;
    }
    if let Some(report) = &report {
        out.write_json("modes.json", &modes_file(report, &exp.model)?)?;
    }
    if let (Some(trajectories), Some(_)) = (&batch.recorded, &report) {
        let states = recorded_states(trajectories);
        let title = format!("{} dynamics, recorded states", exp.config.sampler.name());
        for p in labelled_panels(&states, &exp, &title)? {
            let name = panel_name(&p);
            out.write(&name, &svg::render(std::slice::from_ref(&p)))?;
        }
    }
    let summary = json!({
        "command": "run",
        "sampler": exp.config.sampler.name(),
        "iterations": exp.config.iterations,
        "batch": exp.config.batch,
        "frequencies": report.map(|r| r.frequencies),
        "out": root,
    });
    out.finish("run", &exp.config, json!({}), started.elapsed())?;
    Ok(Outcome {
        summary,
        passed: true,
        out_dir: root,
    })
}

fn panel_name(p: &svg::Panel) -> String {
    format!("panel_d{}_d{}.svg", p.axes.0, p.axes.1)
}

/// Central finite differences of `f` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|j| {
            y[j] = x[j] + h;
            let up = f(&y);
            y[j] = x[j] - h;
            let down = f(&y);
            y[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a - b‖_∞ / max(‖a‖_∞, 1)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreCheckReport {
    pub points: usize,
    pub fd_step: f64,
    pub conditional: bool,
    pub evaluations: usize,
    pub max_relative_error: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Relative errors between analytic and finite-difference scores at random
/// points drawn from `N(0, (3 max ν)² I)`.
pub fn score_errors(
    model: &MixtureModel,
    points: usize,
    fd_step: f64,
    seed: u64,
    conditional: Option<PatchLayout>,
) -> HarnessResult<Vec<f64>> {
    if points == 0 {
        return Err(HarnessError::config("points must be at least 1"));
    }
    if !(fd_step > 0.0 && fd_step.is_finite()) {
        return Err(HarnessError::config(format!("fd_step must be positive, got {fd_step}")));
    }
    let scale = 3.0
        * model
            .components()
            .iter()
            .map(|c| c.variance().sqrt())
            .fold(0.0, f64::max);
    let per_point = (0..points)
        .into_par_iter()
        .map(|i| -> langevin_core::Result<Vec<f64>> {
            let mut rng = stream(seed, i as u64, Purpose::Evaluation);
            let x: Vec<f64> = (0..model.dim())
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            match conditional {
                None => {
                    let fd = central_difference(|y| model.log_density(y).unwrap_or(f64::NAN), &x, fd_step);
                    Ok(vec![relative_error(&model.score(&x)?, &fd)])
                }
                Some(layout) => {
                    let mut errs = Vec::new();
                    for q in 0..layout.num_patches() {
                        let prefix = PrefixState::of_point(layout, &x, q)?;
                        let patch = &x[layout.range(q)];
                        for sigma in [0.0, 0.5] {
                            let cond = conditional_mixture(model, &prefix, sigma)?;
                            let fd = central_difference(|y| cond.log_density(y).unwrap_or(f64::NAN), patch, fd_step);
                            errs.push(relative_error(&cond.score(patch)?, &fd));
                        }
                    }
                    Ok(errs)
                }
            }
        })
        .collect::<langevin_core::Result<Vec<_>>>()?;
    Ok(per_point.into_iter().flatten().collect())
}

/// `score-check`: analytic against central-difference scores.
pub fn cmd_score_check(opts: &CommonOptions, points: usize, fd_step: f64, conditional: bool) -> HarnessResult<Outcome> {
    let started = Instant::now();
    let config = opts.load_config(&[])?;
    let model = config.model.load(None)?;
    let layout = if conditional {
        let q = config
            .patch_size
            .ok_or_else(|| HarnessError::config("conditional score check needs patch_size"))?;
        Some(PatchLayout::new(model.dim(), q)?)
    } else {
        None
    };
    let root = opts.out_dir(&config, "score-check");
    let errors = opts.in_pool(|| score_errors(&model, points, fd_step, config.seed, layout))?;
    let max = errors.iter().copied().fold(0.0, f64::max);
    let pass = errors.iter().all(|e| *e < SCORE_TOLERANCE);
    let report = ScoreCheckReport {
        points,
        fd_step,
        conditional,
        evaluations: errors.len(),
        max_relative_error: max,
        threshold: SCORE_TOLERANCE,
        pass,
    };
    let mut out = OutputDir::create(&root)?;
    out.write_json("score_check.json", &report)?;
    out.finish(
        "score-check",
        &config,
        json!({"points": points, "fd_step": fd_step, "conditional": conditional}),
        started.elapsed(),
    )?;
    Ok(Outcome {
        summary: serde_json::to_value(&report)?,
        passed: pass,
        out_dir: root,
    })
}

/// Options of `theorem-check`.
#[derive(Debug, Clone, Copy)]
pub struct TheoremOptions {
    pub kind: ThresholdKind,
    pub c_v: Option<f64>,
    pub c_l: Option<f64>,
    /// Run even if the model fails the theorem's assumption.
    pub allow_unverified: bool,
}

/// The assumption a theorem rests on and the constants it is checked with.
pub fn theorem_assumption(
    kind: ThresholdKind,
    config: &ExperimentConfig,
    c_v: Option<f64>,
    c_l: Option<f64>,
) -> (AssumptionKind, CheckConstants) {
    let c_sigma = Some(config.noise.lambda_first);
    match kind {
        ThresholdKind::VanillaGaussian => (AssumptionKind::Assumption1, CheckConstants::default()),
        ThresholdKind::AnnealedGaussian => (
            AssumptionKind::Theorem2Means,
            CheckConstants {
                c_sigma,
                ..Default::default()
            },
        ),
        ThresholdKind::VanillaSubgaussian => (AssumptionKind::Assumption2, CheckConstants { c_sigma: None, c_v, c_l }),
        ThresholdKind::AnnealedSubgaussian => (AssumptionKind::Assumption3, CheckConstants { c_sigma, c_v, c_l }),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoremCheckFile {
    pub threshold_kind: ThresholdKind,
    pub sampler: SamplerKind,
    pub iterations: usize,
    pub batch: usize,
    pub threshold_at_first_level: f64,
    pub threshold_at_last_level: f64,
    pub assumption: AssumptionReport,
    pub assumption_overridden: bool,
    pub report: EscapeReport,
}

fn failed_clauses(report: &AssumptionReport) -> String {
    report
        .failures()
        .map(|c| format!("{}[{}] {} > {}", c.clause, c.component, c.lhs, c.rhs))
        .collect::<Vec<_>>()
        .join("; ")
}

/// `theorem-check`: runs vanilla or annealed dynamics and scans every step
/// for entry into a non-universal mode ball.
pub fn cmd_theorem_check(opts: &CommonOptions, theorem: TheoremOptions) -> HarnessResult<Outcome> {
    let started = Instant::now();
    let sampler = if theorem.kind.is_annealed() {
        SamplerKind::Annealed
    } else {
        SamplerKind::Vanilla
    };
    let mut config = opts.load_config(&[])?;
    config.sampler = sampler;
    let exp = Experiment::resolve(config, None)?;
    let (assumption_kind, constants) = theorem_assumption(theorem.kind, &exp.config, theorem.c_v, theorem.c_l);
    let assumption = assumption_check(assumption_kind, &exp.model, constants)?;
    if !assumption.passed() {
        let msg = format!("{} fails: {}", assumption_kind.name(), failed_clauses(&assumption));
        if !theorem.allow_unverified {
            return Err(HarnessError::Assumption(msg));
        }
        eprintln!("warning: {msg}; continuing");
    }
    let threshold = Threshold::for_model(theorem.kind, &exp.model, theorem.c_v)?;
    let tracer = EscapeTracer::new(&exp.model, threshold, exp.config.record_every)?;
    let root = opts.out_dir(&exp.config, "theorem-check");
    let (batch, traces) = opts.in_pool(|| exp.execute(&tracer))?;
    let report = tracer.report(&traces)?;
    let levels = exp.schedules.noise.levels();
    let file = TheoremCheckFile {
        threshold_kind: theorem.kind,
        sampler,
        iterations: exp.config.iterations,
        batch: exp.config.batch,
        threshold_at_first_level: threshold.at(levels[0])?,
        threshold_at_last_level: threshold.at(levels[levels.len() - 1])?,
        assumption_overridden: !assumption.passed(),
        assumption,
        report,
    };
    let mut out = OutputDir::create(&root)?;
    out.write_json("escape.json", &file)?;
    out.write("final.csv", &final_csv(&batch.states, batch.dim))?;
    if exp.config.record_every > 0 {
        out.write("escape_trace.csv", &escape_trace_csv(&traces))?;
    }
    out.finish(
        "theorem-check",
        &exp.config,
        json!({"kind": theorem.kind, "c_v": theorem.c_v, "c_l": theorem.c_l,
               "allow_unverified": theorem.allow_unverified}),
        started.elapsed(),
    )?;
    let pass = file.report.violation_count() == 0;
    Ok(Outcome {
        summary: json!({
            "command": "theorem-check",
            "threshold_kind": theorem.kind,
            "violation_fraction": file.report.fraction,
            "closest_ratio": file.report.closest_ratio,
            "assumption_passed": !file.assumption_overridden,
            "out": root,
        }),
        passed: pass,
        out_dir: root,
    })
}

fn escape_trace_csv(traces: &[EscapeTrace]) -> String {
    let mut s = String::from("chain,step,sigma,min_sq_dist,null_sq_norm\n");
    for (chain, t) in traces.iter().enumerate() {
        let th = &t.thinned;
        for i in 0..th.steps.len() {
            s.push_str(&format!("{chain},{}", th.steps[i]));
            for v in [th.sigmas[i], th.min_sq_dist[i], th.null_sq_norm[i]] {
                s.push(',');
                fmt_float(&mut s, v);
            }
            s.push('\n');
        }
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct TvCheckReport {
    pub n: usize,
    pub ks_exact: Vec<f64>,
    pub ks_chained: Vec<f64>,
    pub max_ks_exact: f64,
    pub max_ks_chained: f64,
    pub ks_exact_threshold: f64,
    pub ks_chained_threshold: f64,
    /// Absent for single-component models, which have no modes to compare.
    pub modes: Option<TvModes>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TvModes {
    pub reference: ModeReport,
    pub exact: ModeReport,
    pub chained: ModeReport,
    pub tv_exact: f64,
    pub tv_chained: f64,
}

/// `n` draws composed patch by patch from exact conditionals, one stream per draw.
pub fn exact_composition(model: &MixtureModel, layout: PatchLayout, seed: u64, n: usize) -> HarnessResult<Vec<Vec<f64>>> {
    Ok((0..n)
        .into_par_iter()
        .map(|i| sample_chain_rule(model, layout, &mut stream(seed, i as u64, Purpose::Exact)))
        .collect::<langevin_core::Result<Vec<_>>>()?)
}

/// `n` direct mixture draws, one stream per draw.
pub fn reference_sample(model: &MixtureModel, seed: u64, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .into_par_iter()
        .map(|i| model.draw(&mut stream(seed, i as u64, Purpose::Reference)).1)
        .collect()
}

pub fn per_coordinate_ks(a: &[Vec<f64>], b: &[Vec<f64>], dim: usize) -> Vec<f64> {
    (0..dim)
        .into_par_iter()
        .map(|j| {
            let x: Vec<f64> = a.iter().map(|p| p[j]).collect();
            let y: Vec<f64> = b.iter().map(|p| p[j]).collect();
            ks_statistic(&x, &y)
        })
        .collect()
}

/// `tv-check`: exact composition and chained dynamics against direct sampling.
pub fn cmd_tv_check(opts: &CommonOptions, n: Option<usize>) -> HarnessResult<Outcome> {
    let started = Instant::now();
    let mut config = opts.load_config(&[])?;
    if config.sampler != SamplerKind::Chained {
        return Err(HarnessError::config("tv-check needs a chained config"));
    }
    if let Some(n) = n {
        config.batch = n;
    }
    let exp = Experiment::resolve(config, None)?;
    let layout = exp.layout.expect("chained config has a layout");
    let n = exp.config.batch;
    let seed = exp.config.seed;
    let root = opts.out_dir(&exp.config, "tv-check");
    let (exact, reference, chained) = opts.in_pool(|| {
        let exact = exact_composition(&exp.model, layout, seed, n)?;
        let reference = reference_sample(&exp.model, seed, n);
        let (chained, _) = exp.execute(&NoObserver)?;
        Ok((exact, reference, chained))
    })?;
    let dim = exp.model.dim();
    let radius = exp.config.radius_coef;
    let ks_exact = per_coordinate_ks(&exact, &reference, dim);
    let ks_chained = per_coordinate_ks(&chained.states, &reference, dim);
    let modes = if exp.model.num_components() > 1 {
        let reference = mode_frequencies_of(&reference, &exp.model, radius)?;
        let exact = mode_frequencies_of(&exact, &exp.model, radius)?;
        let chained = mode_frequencies_of(&chained.states, &exp.model, radius)?;
        Some(TvModes {
            tv_exact: tv_discrete(&exact.frequencies, &reference.frequencies)?,
            tv_chained: tv_discrete(&chained.frequencies, &reference.frequencies)?,
            reference,
            exact,
            chained,
        })
    } else {
        None
    };
    let max_ks_exact = ks_exact.iter().copied().fold(0.0, f64::max);
    let max_ks_chained = ks_chained.iter().copied().fold(0.0, f64::max);
    let report = TvCheckReport {
        n,
        max_ks_exact,
        max_ks_chained,
        ks_exact_threshold: KS_EXACT_TOLERANCE,
        ks_chained_threshold: KS_CHAINED_TOLERANCE,
        pass: max_ks_exact < KS_EXACT_TOLERANCE && max_ks_chained < KS_CHAINED_TOLERANCE,
        ks_exact,
        ks_chained,
        modes,
    };
    let mut out = OutputDir::create(&root)?;
    out.write_json("tv_check.json", &report)?;
    out.write("final.csv", &final_csv(&chained.states, dim))?;
    out.finish("tv-check", &exp.config, json!({"n": n}), started.elapsed())?;
    Ok(Outcome {
        summary: json!({
            "command": "tv-check",
            "n": n,
            "max_ks_exact": report.max_ks_exact,
            "max_ks_chained": report.max_ks_chained,
            "tv_exact": report.modes.as_ref().map(|m| m.tv_exact),
            "tv_chained": report.modes.as_ref().map(|m| m.tv_chained),
            "pass": report.pass,
            "out": root,
        }),
        passed: report.pass,
        out_dir: root,
    })
}

/// Named starting points of the synthetic experiments.
pub const PRESETS: [(&str, usize); 3] = [("fig2-init-mode0", 0), ("init-mode1", 1), ("init-mode2", 2)];

pub fn preset_init(name: &str) -> HarnessResult<InitSpec> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, i)| InitSpec::Component(*i))
        .ok_or_else(|| {
            let names: Vec<_> = PRESETS.iter().map(|p| p.0).collect();
            HarnessError::config(format!("unknown preset {name:?}; available: {}", names.join(", ")))
        })
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub sampler: SamplerKind,
    pub iterations: usize,
    pub batch: usize,
    pub counts: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub tv_to_weights: f64,
    /// Fraction of chains that ever entered a non-universal mode ball of
    /// the theorem threshold; vanilla and annealed only.
    pub escape_fraction: Option<f64>,
    pub closest_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReproduceSummary {
    pub preset: String,
    pub radius_coef: f64,
    pub weights: Vec<f64>,
    pub rows: Vec<SummaryRow>,
}

/// `reproduce-synthetic`: vanilla, annealed and chained dynamics from one
/// preset start at each horizon, sharing model and seed.
pub fn cmd_reproduce(opts: &CommonOptions, preset: &str, horizons: Option<Vec<usize>>) -> HarnessResult<Outcome> {
    let started = Instant::now();
    let init = preset_init(preset)?;
    let base = opts.load_config(&[("init".into(), serde_json::to_value(&init)?)])?;
    let horizons = horizons.unwrap_or_else(|| {
        let mut h = vec![1_000, 10_000, 100_000];
        if opts.full {
            h.push(1_000_000);
        }
        h
    });
    if horizons.is_empty() {
        return Err(HarnessError::config("need at least one horizon"));
    }
    if !opts.full {
        if let Some(t) = horizons.iter().find(|t| **t > DESK_MAX_ITERATIONS) {
            return Err(HarnessError::config(format!(
                "horizon {t} exceeds the desk cap {DESK_MAX_ITERATIONS}; pass --full"
            )));
        }
        if base.batch > DESK_MAX_BATCH {
            return Err(HarnessError::config(format!(
                "batch {} exceeds the desk cap {DESK_MAX_BATCH}; pass --full",
                base.batch
            )));
        }
    }
    let mut experiments = Vec::new();
    for &t in &horizons {
        for sampler in SamplerKind::ALL {
            let mut cfg = base.clone();
            cfg.sampler = sampler;
            cfg.iterations = t;
            cfg.record_every = 0;
            experiments.push(Experiment::resolve(cfg, None)?);
        }
    }
    let root = opts.out_dir(&base, &format!("reproduce-{preset}"));
    let model = experiments[0].model.clone();
    let mut out = OutputDir::create(&root)?;
    let mut rows = Vec::new();
    for exp in &experiments {
        let (batch, escape) = opts.in_pool(|| run_with_escape(exp))?;
        let report = mode_frequencies_of(&batch.states, &model, exp.config.radius_coef)?;
        let tag = format!("{}_t{}", exp.config.sampler.name(), exp.config.iterations);
        out.write(&format!("final_{tag}.csv"), &final_csv(&batch.states, batch.dim))?;
        let states: Vec<&[f64]> = thin(batch.states.iter().map(|s| s.as_slice()).collect(), MAX_PLOT_POINTS);
        let title = format!("{} T={}", exp.config.sampler.name(), exp.config.iterations);
        let panels = labelled_panels(&states, exp, &title)?;
        if !panels.is_empty() {
            out.write(&format!("panel_{tag}.svg"), &svg::render(&panels))?;
        }
        rows.push(SummaryRow {
            sampler: exp.config.sampler,
            iterations: exp.config.iterations,
            batch: exp.config.batch,
            tv_to_weights: tv_discrete(&report.frequencies, &model.weights())?,
            counts: report.counts,
            frequencies: report.frequencies,
            escape_fraction: escape.as_ref().map(|e| e.fraction),
            closest_ratio: escape.as_ref().map(|e| e.closest_ratio),
        });
    }
    let summary = ReproduceSummary {
        preset: preset.to_string(),
        radius_coef: base.radius_coef,
        weights: model.weights(),
        rows,
    };
    out.write_json("summary.json", &summary)?;
    out.finish(
        "reproduce-synthetic",
        &base,
        json!({"preset": preset, "horizons": horizons, "full": opts.full}),
        started.elapsed(),
    )?;
    Ok(Outcome {
        summary: serde_json::to_value(&summary)?,
        passed: true,
        out_dir: root,
    })
}

/// Runs an experiment; vanilla and annealed runs also trace the Gaussian
/// theorem threshold at every step.
fn run_with_escape(exp: &Experiment) -> HarnessResult<(ChainBatch, Option<EscapeReport>)> {
    let kind = match exp.config.sampler {
        SamplerKind::Vanilla => ThresholdKind::VanillaGaussian,
        SamplerKind::Annealed => ThresholdKind::AnnealedGaussian,
        SamplerKind::Chained => return Ok((exp.execute(&NoObserver)?.0, None)),
    };
    if exp.model.num_components() < 2 {
        return Ok((exp.execute(&NoObserver)?.0, None));
    }
    let tracer = EscapeTracer::new(&exp.model, Threshold::for_model(kind, &exp.model, None)?, 0)?;
    let (batch, traces) = exp.execute(&tracer)?;
    Ok((batch, Some(tracer.report(&traces)?)))
}
