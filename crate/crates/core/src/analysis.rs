//! Mode clustering, distances between sample sets, null-space geometry of the
//! mixture means, mode-seeking thresholds, assumption checks and escape scans.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::mixture::{sq_dist, MixtureModel, SampleBatch};
use crate::samplers::{Observer, Trajectory};
use crate::{Error, Result};

/// Default squared-radius coefficient: a point is in mode `i` only if
/// `‖x - μ_i‖² ≤ 5d`.
pub const DEFAULT_RADIUS_COEF: f64 = 5.0;

/// Relative rank tolerance for the mean-offset basis.
pub const RANK_TOL: f64 = 1e-10;

/// Label of `x`: the nearest non-universal mean if it lies within
/// `radius_coef · d` (squared), otherwise 0. Ties go to the lower index.
pub fn cluster_mode(x: &[f64], model: &MixtureModel, radius_coef: f64) -> Result<usize> {
    Error::check_dim(model.dim(), x.len())?;
    if model.num_components() < 2 {
        return Err(Error::input("clustering needs at least one non-universal component"));
    }
    let mut best = (1, f64::INFINITY);
    for (i, c) in model.components().iter().enumerate().skip(1) {
        let d = sq_dist(x, c.mean());
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(if best.1 <= radius_coef * model.dim() as f64 {
        best.0
    } else {
        0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub counts: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub total: usize,
    pub radius_coef: f64,
}

pub fn mode_frequencies(batch: &SampleBatch, model: &MixtureModel, radius_coef: f64) -> Result<ModeReport> {
    mode_frequencies_of(batch.points(), model, radius_coef)
}

pub fn mode_frequencies_of(points: &[Vec<f64>], model: &MixtureModel, radius_coef: f64) -> Result<ModeReport> {
    if points.is_empty() {
        return Err(Error::input("cannot cluster an empty batch"));
    }
    let mut counts = vec![0usize; model.num_components()];
    for p in points {
        counts[cluster_mode(p, model, radius_coef)?] += 1;
    }
    let total = points.len();
    Ok(ModeReport {
        frequencies: counts.iter().map(|c| *c as f64 / total as f64).collect(),
        counts,
        total,
        radius_coef,
    })
}

/// Total variation between two discrete distributions, `½ Σ |p_i - q_i|`.
pub fn tv_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    Error::check_dim(p.len(), q.len())?;
    for v in [p, q] {
        let sum: f64 = v.iter().sum();
        if v.iter().any(|x| !(*x >= -1e-9)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::input(format!("{v:?} is not a probability vector")));
        }
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// KS statistic of one coordinate across two batches.
pub fn marginal_ks(a: &SampleBatch, b: &SampleBatch, coord: usize) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("KS needs two non-empty batches"));
    }
    Error::check_dim(a.dim(), b.dim())?;
    if coord >= a.dim() {
        return Err(Error::input(format!(
            "coordinate {coord} out of range for dimension {}",
            a.dim()
        )));
    }
    Ok(ks_statistic(&a.coordinate(coord), &b.coordinate(coord)))
}

/// Orthonormal basis of `span{μ_i - μ_0}` anchored at `μ_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSpaceFrame {
    origin: Vec<f64>,
    basis: Vec<Vec<f64>>,
}

impl NullSpaceFrame {
    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    /// Basis vectors (the columns of `R`).
    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    /// `Rᵀ(x - μ_0)`.
    pub fn coordinates(&self, x: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|b| b.iter().zip(x.iter().zip(&self.origin)).map(|(r, (xi, oi))| r * (xi - oi)).sum())
            .collect()
    }
}

/// Column-pivoted QR of the mean offsets; numerical rank at [`RANK_TOL`]
/// relative to the largest pivot.
pub fn null_space_frame(model: &MixtureModel) -> Result<NullSpaceFrame> {
    let k = model.num_components();
    if k < 2 {
        return Err(Error::input("null-space frame needs at least one non-universal component"));
    }
    let d = model.dim();
    let origin = model.components()[0].mean().to_vec();
    let offsets = DMatrix::from_fn(d, k - 1, |row, col| {
        model.components()[col + 1].mean()[row] - origin[row]
    });
    let qr = offsets.col_piv_qr();
    let r = qr.r();
    let q = qr.q();
    let diag = r.nrows().min(r.ncols());
    let lead = if diag > 0 { r[(0, 0)].abs() } else { 0.0 };
    let rank = (0..diag)
        .take_while(|&j| lead > 0.0 && r[(j, j)].abs() > RANK_TOL * lead)
        .count();
    let basis = (0..rank).map(|j| q.column(j).iter().copied().collect()).collect();
    Ok(NullSpaceFrame { origin, basis })
}

/// `‖y‖² - ‖Rᵀy‖²` with `y = x - μ_0`, clamped at zero.
pub fn null_space_sq_norm(x: &[f64], frame: &NullSpaceFrame) -> Result<f64> {
    Error::check_dim(frame.origin.len(), x.len())?;
    let total = sq_dist(x, &frame.origin);
    let inside: f64 = frame.coordinates(x).iter().map(|c| c * c).sum();
    Ok((total - inside).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdKind {
    VanillaGaussian,
    AnnealedGaussian,
    VanillaSubgaussian,
    AnnealedSubgaussian,
}

impl ThresholdKind {
    pub fn name(self) -> &'static str {
        match self {
            ThresholdKind::VanillaGaussian => "vanilla-gaussian",
            ThresholdKind::AnnealedGaussian => "annealed-gaussian",
            ThresholdKind::VanillaSubgaussian => "vanilla-subgaussian",
            ThresholdKind::AnnealedSubgaussian => "annealed-subgaussian",
        }
    }

    pub fn is_annealed(self) -> bool {
        matches!(self, ThresholdKind::AnnealedGaussian | ThresholdKind::AnnealedSubgaussian)
    }

    pub fn is_subgaussian(self) -> bool {
        matches!(self, ThresholdKind::VanillaSubgaussian | ThresholdKind::AnnealedSubgaussian)
    }
}

/// Squared distance the mode-seeking results say `‖x_t - μ_i‖²` stays above.
pub fn theorem_threshold(
    kind: ThresholdKind,
    sigma0_sq: f64,
    numax_sq: f64,
    d: usize,
    sigma_t: f64,
    c_v: Option<f64>,
) -> Result<f64> {
    Threshold::new(kind, sigma0_sq, numax_sq, d, c_v)?.at(sigma_t)
}

/// A threshold with its model constants fixed, evaluated per noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    kind: ThresholdKind,
    sigma0_sq: f64,
    numax_sq: f64,
    d: f64,
    c_v: f64,
}

impl Threshold {
    pub fn new(kind: ThresholdKind, sigma0_sq: f64, numax_sq: f64, d: usize, c_v: Option<f64>) -> Result<Self> {
        if !(sigma0_sq > 0.0 && numax_sq > 0.0 && d > 0) {
            return Err(Error::input("threshold needs positive variances and dimension"));
        }
        let c_v = match (kind.is_subgaussian(), c_v) {
            (true, Some(c)) if c > 0.0 && c < 1.0 => c,
            (true, Some(c)) => return Err(Error::input(format!("c_v must lie in (0, 1), got {c}"))),
            (true, None) => return Err(Error::input(format!("{} threshold needs c_v", kind.name()))),
            (false, _) => 0.0,
        };
        Ok(Self {
            kind,
            sigma0_sq,
            numax_sq,
            d: d as f64,
            c_v,
        })
    }

    /// Universal-mode and largest mode variances read from a model.
    pub fn for_model(kind: ThresholdKind, model: &MixtureModel, c_v: Option<f64>) -> Result<Self> {
        let numax_sq = model
            .max_mode_variance()
            .ok_or_else(|| Error::input("threshold needs at least one non-universal component"))?;
        Self::new(kind, model.components()[0].variance(), numax_sq, model.dim(), c_v)
    }

    pub fn kind(&self) -> ThresholdKind {
        self.kind
    }

    pub fn at(&self, sigma_t: f64) -> Result<f64> {
        if !(sigma_t >= 0.0 && sigma_t.is_finite()) {
            return Err(Error::input(format!("noise level must be non-negative, got {sigma_t}")));
        }
        Ok(self.eval(sigma_t))
    }

    fn eval(&self, sigma_t: f64) -> f64 {
        let (s0, nm, d, cv) = (self.sigma0_sq, self.numax_sq, self.d, self.c_v);
        let st = sigma_t * sigma_t;
        match self.kind {
            ThresholdKind::VanillaGaussian => (s0 + nm) / 2.0 * d,
            ThresholdKind::AnnealedGaussian => (s0 + nm + 2.0 * st) / 2.0 * d,
            ThresholdKind::VanillaSubgaussian => (s0 / 2.0 + nm / (2.0 * (1.0 - cv))) * d,
            ThresholdKind::AnnealedSubgaussian => ((s0 + st) / 2.0 + (nm + st) / (2.0 * (1.0 - cv))) * d,
        }
    }

    /// Vanilla thresholds ignore the noise level.
    fn eval_for(&self, sigma_t: f64) -> f64 {
        if self.kind.is_annealed() {
            self.eval(sigma_t)
        } else {
            self.eval(0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub chain: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeReport {
    pub violations: Vec<Option<Violation>>,
    pub fraction: f64,
    pub threshold_kind: String,
    /// Smallest `min_i ‖x_t - μ_i‖² / threshold(t)` seen over all chains.
    pub closest_ratio: f64,
}

impl EscapeReport {
    pub fn violation_count(&self) -> usize {
        self.violations.iter().filter(|v| v.is_some()).count()
    }

    fn from_chains(threshold_kind: &str, chains: Vec<(Option<usize>, f64)>) -> Self {
        let n = chains.len();
        let closest_ratio = chains.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let violations: Vec<_> = chains
            .into_iter()
            .enumerate()
            .map(|(chain, (first, _))| first.map(|step| Violation { chain, step }))
            .collect();
        let count = violations.iter().filter(|v| v.is_some()).count();
        Self {
            fraction: count as f64 / n as f64,
            violations,
            threshold_kind: threshold_kind.into(),
            closest_ratio,
        }
    }
}

/// `min_{i ≥ 1} ‖x - μ_i‖²`.
pub fn min_mode_sq_dist(x: &[f64], model: &MixtureModel) -> f64 {
    model.components()[1..]
        .iter()
        .map(|c| sq_dist(x, c.mean()))
        .fold(f64::INFINITY, f64::min)
}

/// Scalar summary of one chain: per-step nearest-mode distance and
/// null-space norm, kept at a thinning stride.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalarTrace {
    pub steps: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub min_sq_dist: Vec<f64>,
    pub null_sq_norm: Vec<f64>,
}

/// Scans recorded trajectories for states inside any non-universal mode ball
/// `‖x_t - μ_i‖² ≤ threshold(σ_t)`.
pub fn escape_scan(
    trajectories: &[Trajectory],
    model: &MixtureModel,
    threshold: &Threshold,
) -> Result<EscapeReport> {
    if model.num_components() < 2 {
        return Err(Error::input("escape scan needs at least one non-universal component"));
    }
    let traces = trajectories
        .iter()
        .map(|t| {
            let min_sq_dist = t.states.iter().map(|x| min_mode_sq_dist(x, model)).collect();
            ScalarTrace {
                steps: t.steps.clone(),
                sigmas: t.sigmas.clone(),
                min_sq_dist,
                null_sq_norm: Vec::new(),
            }
        })
        .collect::<Vec<_>>();
    escape_scan_traces(&traces, threshold)
}

/// Escape scan over precomputed scalar traces.
pub fn escape_scan_traces(traces: &[ScalarTrace], threshold: &Threshold) -> Result<EscapeReport> {
    if traces.is_empty() {
        return Err(Error::input("escape scan needs at least one trajectory"));
    }
    let mut chains = Vec::with_capacity(traces.len());
    for (chain, t) in traces.iter().enumerate() {
        if t.steps.is_empty() {
            return Err(Error::input(format!("trajectory of chain {chain} is empty")));
        }
        let mut first = None;
        let mut closest = f64::INFINITY;
        for ((step, sigma), dist) in t.steps.iter().zip(&t.sigmas).zip(&t.min_sq_dist) {
            let limit = threshold.eval_for(*sigma);
            closest = closest.min(dist / limit);
            if first.is_none() && *dist <= limit {
                first = Some(*step);
            }
        }
        chains.push((first, closest));
    }
    Ok(EscapeReport::from_chains(threshold.kind().name(), chains))
}

/// Per-chain result of [`EscapeTracer`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EscapeTrace {
    pub first_violation: Option<usize>,
    pub closest_ratio: f64,
    pub thinned: ScalarTrace,
}

/// Observer that evaluates the escape event at every step while keeping only
/// a thinned scalar trace in memory.
pub struct EscapeTracer<'a> {
    model: &'a MixtureModel,
    frame: NullSpaceFrame,
    threshold: Threshold,
    stride: usize,
}

impl<'a> EscapeTracer<'a> {
    /// `stride` = 0 keeps no thinned trace.
    pub fn new(model: &'a MixtureModel, threshold: Threshold, stride: usize) -> Result<Self> {
        Ok(Self {
            model,
            frame: null_space_frame(model)?,
            threshold,
            stride,
        })
    }

    pub fn report(&self, traces: &[EscapeTrace]) -> Result<EscapeReport> {
        if traces.is_empty() {
            return Err(Error::input("escape scan needs at least one trajectory"));
        }
        Ok(EscapeReport::from_chains(
            self.threshold.kind().name(),
            traces.iter().map(|t| (t.first_violation, t.closest_ratio)).collect(),
        ))
    }
}

impl Observer for EscapeTracer<'_> {
    type Trace = EscapeTrace;

    fn start(&self, _chain: usize) -> EscapeTrace {
        EscapeTrace {
            first_violation: None,
            closest_ratio: f64::INFINITY,
            thinned: ScalarTrace::default(),
        }
    }

    fn observe(&self, trace: &mut EscapeTrace, step: usize, sigma: f64, x: &[f64]) {
        let dist = min_mode_sq_dist(x, self.model);
        let limit = self.threshold.eval_for(sigma);
        trace.closest_ratio = trace.closest_ratio.min(dist / limit);
        if trace.first_violation.is_none() && dist <= limit {
            trace.first_violation = Some(step);
        }
        if self.stride > 0 && step % self.stride == 0 {
            let t = &mut trace.thinned;
            t.steps.push(step);
            t.sigmas.push(sigma);
            t.min_sq_dist.push(dist);
            t.null_sq_norm.push(null_space_sq_norm(x, &self.frame).unwrap_or(f64::NAN));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssumptionKind {
    #[serde(rename = "assumption-1")]
    Assumption1,
    #[serde(rename = "theorem-2-means")]
    Theorem2Means,
    #[serde(rename = "assumption-2")]
    Assumption2,
    #[serde(rename = "assumption-3")]
    Assumption3,
}

impl AssumptionKind {
    pub fn name(self) -> &'static str {
        match self {
            AssumptionKind::Assumption1 => "assumption-1",
            AssumptionKind::Theorem2Means => "theorem-2-means",
            AssumptionKind::Assumption2 => "assumption-2",
            AssumptionKind::Assumption3 => "assumption-3",
        }
    }
}

/// Constants entering the sub-Gaussian and annealed conditions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckConstants {
    pub c_sigma: Option<f64>,
    pub c_v: Option<f64>,
    pub c_l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseResult {
    pub component: usize,
    pub clause: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub kind: AssumptionKind,
    pub clauses: Vec<ClauseResult>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ClauseResult> {
        self.clauses.iter().filter(|c| !c.pass)
    }
}

/// Gaussian mean bound `(ν_0² - ν_i²)/2 · (ln(ν_i²/ν_0²) - ν_i²/(2ν_0²) + ν_0²/(2ν_i²)) · d`.
pub fn gaussian_mean_bound(nu0_sq: f64, nui_sq: f64, d: usize) -> f64 {
    (nu0_sq - nui_sq) / 2.0 * ((nui_sq / nu0_sq).ln() - nui_sq / (2.0 * nu0_sq) + nu0_sq / (2.0 * nui_sq)) * d as f64
}

/// Mean bound for annealed Gaussian dynamics with noise levels up to `c_σ`.
/// The denominators `2ν_0² + c_σ²` and `2ν_i² + c_σ²` are kept as published.
pub fn annealed_gaussian_mean_bound(nu0_sq: f64, nui_sq: f64, c_sigma: f64, d: usize) -> f64 {
    let c2 = c_sigma * c_sigma;
    (nu0_sq - nui_sq) / 2.0
        * (((nui_sq + c2) / (nu0_sq + c2)).ln() - (nui_sq + c2) / (2.0 * nu0_sq + c2) + (nu0_sq + c2) / (2.0 * nui_sq + c2))
        * d as f64
}

fn lipschitz_factor(c_v: f64, c_l: f64) -> f64 {
    (4.0 * (c_l * c_l + c_v * c_l) / (c_v * (1.0 - c_v))).max(1.0)
}

/// The two factors of the sub-Gaussian mean bound: the prefactor
/// `((1-c_v)ν_0² - ν_i²) / (2(1-c_v))` and the bracketed log term.
pub fn subgaussian_bound_factors(nu0_sq: f64, nui_sq: f64, c_v: f64, c_l: f64) -> (f64, f64) {
    let a = 1.0 - c_v;
    let prefactor = (a * nu0_sq - nui_sq) / (2.0 * a);
    let log_term = (c_v * nui_sq / ((c_l * c_l + c_v * c_l) * nu0_sq)).ln() - nui_sq / (2.0 * a * nu0_sq)
        + a * nu0_sq / (2.0 * nui_sq);
    (prefactor, log_term)
}

/// Evaluates every clause of the chosen condition for every non-universal
/// component and reports both sides of each inequality.
pub fn assumption_check(
    kind: AssumptionKind,
    model: &MixtureModel,
    constants: CheckConstants,
) -> Result<AssumptionReport> {
    let k = model.num_components();
    if k < 2 {
        return Err(Error::input("assumption check needs at least one non-universal component"));
    }
    let positive = |name: &str, v: Option<f64>| -> Result<f64> {
        match v {
            Some(x) if x > 0.0 && x.is_finite() => Ok(x),
            Some(x) => Err(Error::input(format!("{name} must be positive, got {x}"))),
            None => Err(Error::input(format!("{} needs {name}", kind.name()))),
        }
    };
    let d = model.dim();
    let nu0_sq = model.components()[0].variance();
    let numax_sq = model.max_mode_variance().unwrap_or(0.0);
    let origin = model.components()[0].mean();
    let mut clauses = Vec::new();
    let mut push = |component: usize, clause: &str, lhs: f64, rhs: f64, pass: bool| {
        clauses.push(ClauseResult {
            component,
            clause: clause.into(),
            lhs,
            rhs,
            pass,
        })
    };

    match kind {
        AssumptionKind::Assumption1 | AssumptionKind::Theorem2Means => {
            let c_sigma = if kind == AssumptionKind::Theorem2Means {
                Some(positive("c_sigma", constants.c_sigma)?)
            } else {
                None
            };
            for (i, c) in model.components().iter().enumerate().skip(1) {
                let nui_sq = c.variance();
                push(i, "variance-order", nui_sq, nu0_sq, nui_sq < nu0_sq);
                let lhs = sq_dist(c.mean(), origin);
                let rhs = match c_sigma {
                    None => gaussian_mean_bound(nu0_sq, nui_sq, d),
                    Some(cs) => annealed_gaussian_mean_bound(nu0_sq, nui_sq, cs, d),
                };
                push(i, "mean-bound", lhs, rhs, lhs <= rhs);
            }
        }
        AssumptionKind::Assumption2 | AssumptionKind::Assumption3 => {
            let c_v = positive("c_v", constants.c_v)?;
            if c_v >= 1.0 {
                return Err(Error::input(format!("c_v must lie in (0, 1), got {c_v}")));
            }
            let c_l = positive("c_l", constants.c_l)?;
            let c2 = if kind == AssumptionKind::Assumption3 {
                let cs = positive("c_sigma", constants.c_sigma)?;
                cs * cs
            } else {
                0.0
            };
            let rhs = lipschitz_factor(c_v, c_l) * (numax_sq + c2) / (1.0 - c_v) - c2;
            push(0, "variance-margin", nu0_sq, rhs, nu0_sq > rhs);
            for (i, c) in model.components().iter().enumerate().skip(1) {
                let nui_sq = c.variance();
                // A Gaussian score is (1/ν²)-Lipschitz, (1/(ν²+σ²)) after perturbation.
                push(i, "score-lipschitz", 1.0, c_l, 1.0 <= c_l);
                let (prefactor, log_term) = subgaussian_bound_factors(nu0_sq + c2, nui_sq + c2, c_v, c_l);
                push(i, "bound-prefactor-positive", prefactor, 0.0, prefactor > 0.0);
                push(i, "bound-log-term-positive", log_term, 0.0, log_term > 0.0);
                let lhs = sq_dist(c.mean(), origin);
                let bound = prefactor * log_term * d as f64;
                push(i, "mean-bound", lhs, bound, lhs <= bound);
            }
        }
    }
    Ok(AssumptionReport { kind, clauses })
}
