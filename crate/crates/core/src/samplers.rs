//! Vanilla, annealed and chained Langevin dynamics.
//!
//! All three samplers share the update
//!
//! ```text
//! x_t = x_{t-1} + (ε_t / 2) ∇ log P_{σ_t}(x_{t-1}) + √ε_t ξ_t,   ξ_t ~ N(0, I)
//! ```
//!
//! Vanilla uses `σ_t = 0`; annealed follows a block-constant geometric noise
//! schedule; chained runs the annealed schedule on one patch at a time against
//! the exact conditional score and freezes each patch once it is done.
//!
//! Chains are independent and run in parallel on the ambient rayon pool. Each
//! chain draws from streams keyed by `(seed, chain, purpose)`, so results do not
//! depend on the number of workers.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditional::{conditional_mixture_with, PatchLayout, PerturbationMode, PrefixState};
use crate::mixture::MixtureModel;
use crate::rng::{stream, Purpose, StreamRng};
use crate::{Error, Result};

/// Default final step size `ε_T`.
pub const DEFAULT_EPS_BASE: f64 = 2e-5;

/// States whose norm exceeds this multiple of `√d` abort the run.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// `count` geometrically spaced levels from `first` down to `last`.
pub fn build_geometric_levels(first: f64, last: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::input(format!("need at least 2 noise levels, got {count}")));
    }
    if !(last > 0.0 && first >= last && first.is_finite()) {
        return Err(Error::input(format!(
            "noise levels need first >= last > 0, got first {first}, last {last}"
        )));
    }
    let ratio = last / first;
    let span = (count - 1) as f64;
    let mut levels: Vec<f64> = (0..count)
        .map(|i| first * ratio.powf(i as f64 / span))
        .collect();
    levels[0] = first;
    levels[count - 1] = last;
    Ok(levels)
}

/// Per-step noise levels `σ_1 … σ_T`, block-constant over the distinct levels.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    levels: Vec<f64>,
    per_step: Vec<f64>,
}

impl NoiseSchedule {
    /// Repeats each level `iterations / L` times.
    pub fn expand(levels: &[f64], iterations: usize) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::input("noise schedule needs at least one level"));
        }
        if levels.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::input("noise levels must be positive and finite"));
        }
        if levels.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::input("noise levels must be non-increasing"));
        }
        if iterations % levels.len() != 0 {
            return Err(Error::input(format!(
                "{} noise levels do not divide {iterations} iterations",
                levels.len()
            )));
        }
        let repeat = iterations / levels.len();
        let per_step = levels
            .iter()
            .flat_map(|l| std::iter::repeat_n(*l, repeat))
            .collect();
        Ok(Self {
            levels: levels.to_vec(),
            per_step,
        })
    }

    /// Zero noise at every step: annealed dynamics on the clean density.
    pub fn unperturbed(iterations: usize) -> Self {
        Self {
            levels: vec![0.0],
            per_step: vec![0.0; iterations],
        }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn per_step(&self) -> &[f64] {
        &self.per_step
    }

    pub fn len(&self) -> usize {
        self.per_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_step.is_empty()
    }

    /// `σ_0`, the level used for initialization.
    pub fn initial(&self) -> f64 {
        self.per_step.first().copied().unwrap_or(0.0)
    }
}

/// Per-step sizes `ε_t = ε_base σ_t² / σ_T²`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    base: f64,
    per_step: Vec<f64>,
}

impl StepSchedule {
    pub fn build(noise: &NoiseSchedule, eps_base: f64) -> Result<Self> {
        check_step(eps_base)?;
        let last = *noise
            .per_step
            .last()
            .ok_or_else(|| Error::input("step schedule needs a non-empty noise schedule"))?;
        if last <= 0.0 {
            return Err(Error::input("final noise level must be positive"));
        }
        let last_sq = last * last;
        let per_step = noise
            .per_step
            .iter()
            .map(|s| eps_base * (s * s / last_sq))
            .collect();
        Ok(Self {
            base: eps_base,
            per_step,
        })
    }

    pub fn constant(eps: f64, iterations: usize) -> Result<Self> {
        check_step(eps)?;
        Ok(Self {
            base: eps,
            per_step: vec![eps; iterations],
        })
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn per_step(&self) -> &[f64] {
        &self.per_step
    }

    pub fn len(&self) -> usize {
        self.per_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_step.is_empty()
    }
}

fn check_step(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::input(format!("step size must be positive and finite, got {eps}")))
    }
}

#[inline]
fn ld_update(x: &mut [f64], score: &[f64], eps: f64, noise: &[f64]) {
    let half = 0.5 * eps;
    let root = eps.sqrt();
    for ((xi, si), ni) in x.iter_mut().zip(score).zip(noise) {
        *xi += half * si + root * ni;
    }
}

/// One Langevin update `x + (ε/2) s + √ε ξ`.
pub fn ld_step(score: &[f64], x: &[f64], eps: f64, noise: &[f64]) -> Result<Vec<f64>> {
    Error::check_dim(x.len(), score.len())?;
    Error::check_dim(x.len(), noise.len())?;
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::NonFinite(format!("step size {eps}")));
    }
    for (name, v) in [("score", score), ("state", x), ("noise", noise)] {
        if v.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite(name.into()));
        }
    }
    let mut out = x.to_vec();
    ld_update(&mut out, score, eps, noise);
    Ok(out)
}

/// How a chain's starting point is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSpec {
    /// Draw from component `i`, perturbed by the initial noise level.
    Component(usize),
    StandardNormal,
    Explicit(Vec<f64>),
}

/// Initial state for one chain. Component draws use variance `ν_i² + σ_0²`.
pub fn init_state<R: Rng + ?Sized>(
    spec: &InitSpec,
    model: &MixtureModel,
    noise_level_0: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    match spec {
        InitSpec::Component(i) => {
            let c = model.components().get(*i).ok_or_else(|| {
                Error::input(format!(
                    "init component {i} out of range for {} components",
                    model.num_components()
                ))
            })?;
            Ok(c.draw(rng, noise_level_0 * noise_level_0))
        }
        InitSpec::StandardNormal => Ok((0..model.dim())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()),
        InitSpec::Explicit(v) => {
            Error::check_dim(model.dim(), v.len())?;
            Ok(v.clone())
        }
    }
}

/// Run parameters shared by all samplers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub seed: u64,
    pub batch: usize,
    pub init: InitSpec,
    /// Trajectory thinning stride; 0 keeps only the final state.
    #[serde(default)]
    pub record_every: usize,
}

impl SamplerConfig {
    pub fn validate(&self, model: &MixtureModel) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::input("batch must be at least 1"));
        }
        match &self.init {
            InitSpec::Component(i) if *i >= model.num_components() => Err(Error::input(format!(
                "init component {i} out of range for {} components",
                model.num_components()
            ))),
            InitSpec::Explicit(v) => Error::check_dim(model.dim(), v.len()),
            _ => Ok(()),
        }
    }
}

/// Recorded states of one chain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

/// Final states of all chains plus optional thinned trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainBatch {
    pub dim: usize,
    pub step: usize,
    pub states: Vec<Vec<f64>>,
    pub recorded: Option<Vec<Trajectory>>,
}

/// Per-step hook, called with every state a chain visits including step 0.
/// Each chain owns its own trace.
pub trait Observer: Sync {
    type Trace: Send;

    fn start(&self, chain: usize) -> Self::Trace;

    fn observe(&self, trace: &mut Self::Trace, step: usize, sigma: f64, x: &[f64]);
}

/// Observer that records nothing.
pub struct NoObserver;

impl Observer for NoObserver {
    type Trace = ();

    fn start(&self, _chain: usize) {}

    fn observe(&self, _trace: &mut (), _step: usize, _sigma: f64, _x: &[f64]) {}
}

struct ChainRun<T> {
    state: Vec<f64>,
    trajectory: Option<Trajectory>,
    trace: T,
}

struct Tracker<'a, O: Observer> {
    observer: &'a O,
    trace: O::Trace,
    stride: usize,
    trajectory: Option<Trajectory>,
}

impl<'a, O: Observer> Tracker<'a, O> {
    fn new(observer: &'a O, chain: usize, stride: usize) -> Self {
        Self {
            observer,
            trace: observer.start(chain),
            stride,
            trajectory: (stride > 0).then(Trajectory::default),
        }
    }

    fn visit(&mut self, step: usize, sigma: f64, x: &[f64]) {
        self.observer.observe(&mut self.trace, step, sigma, x);
        if let Some(t) = self.trajectory.as_mut() {
            if step % self.stride == 0 {
                t.steps.push(step);
                t.sigmas.push(sigma);
                t.states.push(x.to_vec());
            }
        }
    }

    fn finish(self, state: Vec<f64>) -> ChainRun<O::Trace> {
        ChainRun {
            state,
            trajectory: self.trajectory,
            trace: self.trace,
        }
    }
}

fn check_state(x: &[f64], chain: usize, step: usize) -> Result<()> {
    let mut norm_sq = 0.0;
    for v in x {
        if !v.is_finite() {
            return Err(Error::Divergence {
                chain,
                step,
                reason: "non-finite state".into(),
            });
        }
        norm_sq += v * v;
    }
    let limit = DIVERGENCE_FACTOR * (x.len() as f64).sqrt();
    if norm_sq.sqrt() > limit {
        return Err(Error::Divergence {
            chain,
            step,
            reason: format!("state norm {} exceeds {limit}", norm_sq.sqrt()),
        });
    }
    Ok(())
}

fn fill_normal(rng: &mut StreamRng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

fn collect_chains<T: Send>(
    dim: usize,
    step: usize,
    record: bool,
    runs: Vec<Result<ChainRun<T>>>,
) -> Result<(ChainBatch, Vec<T>)> {
    // First failing chain by index, independent of scheduling.
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut states = Vec::with_capacity(runs.len());
    let mut traces = Vec::with_capacity(runs.len());
    let mut recorded = Vec::new();
    for r in runs {
        states.push(r.state);
        traces.push(r.trace);
        if let Some(t) = r.trajectory {
            recorded.push(t);
        }
    }
    Ok((
        ChainBatch {
            dim,
            step,
            states,
            recorded: record.then_some(recorded),
        },
        traces,
    ))
}

fn run_full<O: Observer>(
    model: &MixtureModel,
    config: &SamplerConfig,
    sigmas: &[f64],
    steps: &[f64],
    observer: &O,
) -> Result<(ChainBatch, Vec<O::Trace>)> {
    config.validate(model)?;
    if sigmas.len() != config.iterations || steps.len() != config.iterations {
        return Err(Error::input(format!(
            "schedules of length {} / {} do not match {} iterations",
            sigmas.len(),
            steps.len(),
            config.iterations
        )));
    }
    let dim = model.dim();
    let sigma_0 = sigmas.first().copied().unwrap_or(0.0);
    let runs: Vec<_> = (0..config.batch)
        .into_par_iter()
        .map(|chain| -> Result<ChainRun<O::Trace>> {
            let mut init_rng = stream(config.seed, chain as u64, Purpose::Init);
            let mut rng = stream(config.seed, chain as u64, Purpose::Dynamics);
            let mut x = init_state(&config.init, model, sigma_0, &mut init_rng)?;
            let mut tracker = Tracker::new(observer, chain, config.record_every);
            tracker.visit(0, sigma_0, &x);
            let mut score = vec![0.0; dim];
            let mut noise = vec![0.0; dim];
            let mut scratch = vec![0.0; model.num_components()];
            for (t, (sigma, eps)) in sigmas.iter().zip(steps).enumerate() {
                model.score_into(&x, sigma * sigma, &mut score, &mut scratch);
                fill_normal(&mut rng, &mut noise);
                ld_update(&mut x, &score, *eps, &noise);
                check_state(&x, chain, t + 1)?;
                tracker.visit(t + 1, *sigma, &x);
            }
            Ok(tracker.finish(x))
        })
        .collect();
    collect_chains(dim, config.iterations, config.record_every > 0, runs)
}

/// Langevin dynamics on the clean density with the given step sizes.
pub fn run_vanilla(model: &MixtureModel, config: &SamplerConfig, steps: &StepSchedule) -> Result<ChainBatch> {
    Ok(run_vanilla_observed(model, config, steps, &NoObserver)?.0)
}

pub fn run_vanilla_observed<O: Observer>(
    model: &MixtureModel,
    config: &SamplerConfig,
    steps: &StepSchedule,
    observer: &O,
) -> Result<(ChainBatch, Vec<O::Trace>)> {
    let zeros = vec![0.0; steps.len()];
    run_full(model, config, &zeros, &steps.per_step, observer)
}

/// Langevin dynamics on `P_{σ_t}` with decreasing `σ_t`.
pub fn run_annealed(
    model: &MixtureModel,
    config: &SamplerConfig,
    noise: &NoiseSchedule,
    steps: &StepSchedule,
) -> Result<ChainBatch> {
    Ok(run_annealed_observed(model, config, noise, steps, &NoObserver)?.0)
}

pub fn run_annealed_observed<O: Observer>(
    model: &MixtureModel,
    config: &SamplerConfig,
    noise: &NoiseSchedule,
    steps: &StepSchedule,
    observer: &O,
) -> Result<(ChainBatch, Vec<O::Trace>)> {
    run_full(model, config, &noise.per_step, &steps.per_step, observer)
}

/// Options specific to chained dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChainedOptions {
    pub mode: PerturbationMode,
}

/// Chained Langevin dynamics. `noise` and `steps` describe one patch; the
/// total iteration count in `config` must equal their length times the number
/// of patches.
pub fn run_chained(
    model: &MixtureModel,
    config: &SamplerConfig,
    layout: PatchLayout,
    noise: &NoiseSchedule,
    steps: &StepSchedule,
) -> Result<ChainBatch> {
    Ok(run_chained_observed(model, config, layout, noise, steps, ChainedOptions::default(), &NoObserver)?.0)
}

pub fn run_chained_observed<O: Observer>(
    model: &MixtureModel,
    config: &SamplerConfig,
    layout: PatchLayout,
    noise: &NoiseSchedule,
    steps: &StepSchedule,
    options: ChainedOptions,
    observer: &O,
) -> Result<(ChainBatch, Vec<O::Trace>)> {
    config.validate(model)?;
    Error::check_dim(model.dim(), layout.dim())?;
    let per_patch = noise.len();
    if steps.len() != per_patch {
        return Err(Error::input(format!(
            "noise schedule has {per_patch} steps but step schedule has {}",
            steps.len()
        )));
    }
    if per_patch * layout.num_patches() != config.iterations {
        return Err(Error::input(format!(
            "per-patch schedule of {per_patch} steps over {} patches does not match {} iterations",
            layout.num_patches(),
            config.iterations
        )));
    }
    let dim = model.dim();
    let q_size = layout.patch_size();
    let sigma_0 = noise.initial();
    let runs: Vec<_> = (0..config.batch)
        .into_par_iter()
        .map(|chain| -> Result<ChainRun<O::Trace>> {
            let mut init_rng = stream(config.seed, chain as u64, Purpose::Init);
            let mut rng = stream(config.seed, chain as u64, Purpose::Dynamics);
            let mut x = init_state(&config.init, model, sigma_0, &mut init_rng)?;
            let mut tracker = Tracker::new(observer, chain, config.record_every);
            tracker.visit(0, sigma_0, &x);
            let mut score = vec![0.0; q_size];
            let mut noise_buf = vec![0.0; q_size];
            let mut scratch = vec![0.0; model.num_components()];
            for q in 0..layout.num_patches() {
                let range = layout.range(q);
                let prefix = PrefixState::new(layout, x[..range.start].to_vec())?;
                let mut cond = conditional_mixture_with(model, &prefix, 0.0, options.mode)?;
                let mut cond_sigma = 0.0;
                for (t, (sigma, eps)) in noise.per_step.iter().zip(&steps.per_step).enumerate() {
                    let extra = match options.mode {
                        PerturbationMode::CleanPrefix => sigma * sigma,
                        PerturbationMode::PerturbedJoint => {
                            if *sigma != cond_sigma {
                                cond = conditional_mixture_with(model, &prefix, *sigma, options.mode)?;
                                cond_sigma = *sigma;
                            }
                            0.0
                        }
                    };
                    let step = q * per_patch + t + 1;
                    let patch = &mut x[range.clone()];
                    cond.score_into(patch, extra, &mut score, &mut scratch);
                    fill_normal(&mut rng, &mut noise_buf);
                    ld_update(patch, &score, *eps, &noise_buf);
                    check_state(patch, chain, step)?;
                    tracker.visit(step, *sigma, &x);
                }
            }
            Ok(tracker.finish(x))
        })
        .collect();
    collect_chains(dim, config.iterations, config.record_every > 0, runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::ks_statistic;
    use crate::GaussianComponent;

    fn paper_levels() -> Vec<f64> {
        build_geometric_levels(1.0, 0.01, 10).unwrap()
    }

    fn config(iterations: usize, batch: usize, init: InitSpec) -> SamplerConfig {
        SamplerConfig {
            iterations,
            seed: 42,
            batch,
            init,
            record_every: 0,
        }
    }

    #[test]
    fn geometric_levels() {
        let l = paper_levels();
        assert_eq!(l.len(), 10);
        assert_eq!(l[0], 1.0);
        assert_eq!(l[9], 0.01);
        let expected = 10f64.powf(-2.0 / 9.0);
        assert!((l[1] - expected).abs() <= 1e-15 * expected);
        assert!(l.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(build_geometric_levels(0.3, 0.3, 4).unwrap(), vec![0.3; 4]);
        assert!(build_geometric_levels(1.0, 0.1, 1).is_err());
        assert!(build_geometric_levels(0.1, 1.0, 3).is_err());
        assert!(build_geometric_levels(1.0, 0.0, 3).is_err());
    }

    #[test]
    fn schedule_expansion() {
        let s = NoiseSchedule::expand(&[1.0, 0.1], 4).unwrap();
        assert_eq!(s.per_step(), &[1.0, 1.0, 0.1, 0.1]);

        let levels = paper_levels();
        let s = NoiseSchedule::expand(&levels, 1000).unwrap();
        assert_eq!(s.len(), 1000);
        for l in &levels {
            assert_eq!(s.per_step().iter().filter(|v| *v == l).count(), 100);
        }
        let mut distinct = s.per_step().to_vec();
        distinct.dedup();
        assert_eq!(distinct, levels);

        let err = NoiseSchedule::expand(&levels, 1005).unwrap_err().to_string();
        assert!(err.contains("10") && err.contains("1005"), "{err}");
        assert!(NoiseSchedule::expand(&[0.1, 1.0], 2).is_err());
    }

    #[test]
    fn step_schedule() {
        let noise = NoiseSchedule::expand(&paper_levels(), 100).unwrap();
        let steps = StepSchedule::build(&noise, 2e-5).unwrap();
        assert_eq!(*steps.per_step().last().unwrap(), 2e-5);
        assert!((steps.per_step()[0] - 0.2).abs() <= 1e-15 * 0.2);
        assert!(steps.per_step().windows(2).all(|w| w[1] <= w[0]));
        for (e, s) in steps.per_step().iter().zip(noise.per_step()) {
            let want = 2e-5 * s * s / 1e-4;
            assert!((e - want).abs() <= 1e-15 * want);
        }

        let flat = NoiseSchedule::expand(&[0.5], 7).unwrap();
        let steps = StepSchedule::build(&flat, 0.01).unwrap();
        assert_eq!(steps.per_step(), &[0.01; 7]);

        assert!(StepSchedule::build(&NoiseSchedule::unperturbed(3), 0.1).is_err());
        assert!(StepSchedule::build(&flat, 0.0).is_err());
    }

    #[test]
    fn ld_step_arithmetic() {
        assert_eq!(ld_step(&[0.0, 0.0], &[1.0, 2.0], 0.3, &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(ld_step(&[-2.0], &[0.0], 1.0, &[0.5]).unwrap(), vec![-0.5]);
        assert!(ld_step(&[f64::NAN], &[0.0], 1.0, &[0.5]).is_err());
        assert!(ld_step(&[0.0], &[0.0], 1.0, &[0.5, 0.1]).is_err());
    }

    #[test]
    fn stationary_variance_of_discretized_chain() {
        // x' = (1 - ε/2) x + √ε ξ has stationary variance 1 / (1 - ε/4).
        let eps = 0.01;
        let t = 100_000;
        let model = MixtureModel::gaussian(vec![0.0], 1.0).unwrap();
        let steps = StepSchedule::constant(eps, t).unwrap();
        let mut cfg = config(t, 20, InitSpec::Explicit(vec![0.0]));
        cfg.record_every = 1;
        let batch = run_vanilla(&model, &cfg, &steps).unwrap();
        let recorded = batch.recorded.unwrap();

        // Reference recursion over the same noise stream.
        let mut rng = stream(cfg.seed, 0, Purpose::Dynamics);
        let mut x = 0.0f64;
        for (k, rec) in recorded[0].states.iter().enumerate().skip(1).take(1000) {
            let z: f64 = rng.sample(StandardNormal);
            x = x + 0.5 * eps * (-x) + eps.sqrt() * z;
            assert!((rec[0] - x).abs() < 1e-12, "step {k}");
        }

        let burn = 10_000;
        let tail: Vec<f64> = recorded
            .iter()
            .flat_map(|tr| tr.states[burn..].iter().map(|s| s[0]))
            .collect();
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let var = tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / tail.len() as f64;
        let target = 1.0 / (1.0 - eps / 4.0);
        assert!((var / target - 1.0).abs() < 0.05, "{var} vs {target}");
    }

    #[test]
    fn zero_iterations_return_initialization() {
        let model = MixtureModel::synthetic(3).unwrap();
        let v = vec![0.5, -1.5, 2.0];
        let steps = StepSchedule::constant(0.1, 0).unwrap();
        let out = run_vanilla(&model, &config(0, 2, InitSpec::Explicit(v.clone())), &steps).unwrap();
        assert_eq!(out.states, vec![v.clone(), v]);
        assert_eq!(out.step, 0);
    }

    #[test]
    fn annealed_with_zero_noise_is_vanilla() {
        let model = MixtureModel::synthetic(8).unwrap();
        let noise = NoiseSchedule::expand(&paper_levels(), 200).unwrap();
        let steps = StepSchedule::build(&noise, 1e-3).unwrap();
        let cfg = config(200, 6, InitSpec::Component(0));
        let vanilla = run_vanilla(&model, &cfg, &steps).unwrap();
        let annealed = run_annealed(&model, &cfg, &NoiseSchedule::unperturbed(200), &steps).unwrap();
        assert_eq!(vanilla, annealed);
    }

    #[test]
    fn chained_with_one_patch_is_annealed() {
        let model = MixtureModel::synthetic(6).unwrap();
        let noise = NoiseSchedule::expand(&paper_levels(), 100).unwrap();
        let steps = StepSchedule::build(&noise, 1e-3).unwrap();
        let mut cfg = config(100, 5, InitSpec::Component(0));
        cfg.record_every = 7;
        let annealed = run_annealed(&model, &cfg, &noise, &steps).unwrap();
        let chained = run_chained(&model, &cfg, PatchLayout::new(6, 6).unwrap(), &noise, &steps).unwrap();
        assert_eq!(annealed, chained);
    }

    struct FullStates;

    impl Observer for FullStates {
        type Trace = Vec<Vec<f64>>;

        fn start(&self, _chain: usize) -> Self::Trace {
            Vec::new()
        }

        fn observe(&self, trace: &mut Self::Trace, _step: usize, _sigma: f64, x: &[f64]) {
            trace.push(x.to_vec());
        }
    }

    #[test]
    fn completed_patches_stay_frozen() {
        let model = MixtureModel::synthetic(6).unwrap();
        let layout = PatchLayout::new(6, 2).unwrap();
        let noise = NoiseSchedule::expand(&paper_levels(), 20).unwrap();
        let steps = StepSchedule::build(&noise, 1e-3).unwrap();
        let cfg = config(60, 3, InitSpec::Component(0));
        let (batch, traces) =
            run_chained_observed(&model, &cfg, layout, &noise, &steps, ChainedOptions::default(), &FullStates)
                .unwrap();
        for (trace, last) in traces.iter().zip(&batch.states) {
            assert_eq!(trace.len(), 61);
            assert_eq!(trace.last().unwrap(), last);
            for q in 0..3 {
                let done = (q + 1) * 20;
                let r = layout.range(q);
                for later in &trace[done..] {
                    assert_eq!(&later[r.clone()], &trace[done][r.clone()]);
                }
                // Unprocessed patches hold their initial values.
                for earlier in &trace[..q * 20 + 1] {
                    assert_eq!(&earlier[r.clone()], &trace[0][r.clone()]);
                }
            }
        }
    }

    #[test]
    fn chained_schedule_mismatch_is_rejected() {
        let model = MixtureModel::synthetic(4).unwrap();
        let noise = NoiseSchedule::expand(&[1.0, 0.1], 10).unwrap();
        let steps = StepSchedule::build(&noise, 1e-3).unwrap();
        let layout = PatchLayout::new(4, 2).unwrap();
        assert!(run_chained(&model, &config(30, 1, InitSpec::Component(0)), layout, &noise, &steps).is_err());
        assert!(run_chained(&model, &config(20, 1, InitSpec::Component(0)), layout, &noise, &steps).is_ok());
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let model = MixtureModel::synthetic(10).unwrap();
        let noise = NoiseSchedule::expand(&paper_levels(), 100).unwrap();
        let steps = StepSchedule::build(&noise, 2e-5).unwrap();
        let cfg = config(100, 16, InitSpec::Component(0));
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_annealed(&model, &cfg, &noise, &steps).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn divergence_is_reported_with_chain_and_step() {
        let model = MixtureModel::gaussian(vec![0.0; 2], 1e-3).unwrap();
        let steps = StepSchedule::constant(10.0, 50).unwrap();
        let err = run_vanilla(&model, &config(50, 2, InitSpec::Explicit(vec![1.0, 1.0])), &steps).unwrap_err();
        assert!(matches!(err, Error::Divergence { chain: 0, .. }), "{err}");
    }

    #[test]
    fn init_state_variants() {
        let model = MixtureModel::synthetic(4).unwrap();
        let mut rng = stream(0, 0, Purpose::Init);
        let v = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(init_state(&InitSpec::Explicit(v.clone()), &model, 0.3, &mut rng).unwrap(), v);
        assert!(init_state(&InitSpec::Component(3), &model, 0.0, &mut rng).is_err());
        assert!(init_state(&InitSpec::Explicit(vec![0.0]), &model, 0.0, &mut rng).is_err());

        let n = 10_000;
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| init_state(&InitSpec::Component(0), &model, 0.0, &mut rng).unwrap())
            .collect();
        for j in 0..4 {
            let mean = draws.iter().map(|d| d[j]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 4.0 * (3.0 / n as f64).sqrt());
        }
        let wide: Vec<f64> = (0..n)
            .map(|_| init_state(&InitSpec::Component(0), &model, 1.0, &mut rng).unwrap()[0])
            .collect();
        let var = wide.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((var / 4.0 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn annealed_single_component_matches_target() {
        let model = MixtureModel::new(
            vec![1.0],
            vec![GaussianComponent::new(vec![2.0, -1.0, 0.0], 0.5).unwrap()],
        )
        .unwrap();
        let noise = NoiseSchedule::expand(&paper_levels(), 100_000).unwrap();
        let steps = StepSchedule::build(&noise, DEFAULT_EPS_BASE).unwrap();
        let cfg = config(100_000, 1000, InitSpec::StandardNormal);
        let out = run_annealed(&model, &cfg, &noise, &steps).unwrap();
        // A large reference keeps the two-sample KS noise well below the 0.05 bound.
        let reference = model.sample(&mut stream(1, 0, Purpose::Reference), 100_000).unwrap();
        for j in 0..3 {
            let a: Vec<f64> = out.states.iter().map(|s| s[j]).collect();
            let ks = ks_statistic(&a, &reference.coordinate(j));
            assert!(ks < 0.05, "coord {j}: {ks}");
        }
    }
}
