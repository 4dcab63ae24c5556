//! Isotropic Gaussian mixtures.
//!
//! A [`MixtureModel`] is `P(x) = Σ_i w_i N(x; μ_i, ν_i² I_d)`. Component 0 is
//! the universal mode. Weights are stored as log-weights so that conditional
//! mixtures whose weights underflow `f64` remain representable; every density,
//! score and responsibility is evaluated through log-sum-exp.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Absolute tolerance on `Σ w_i = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// `log Σ exp(v_i)`, stable for arbitrarily spread inputs.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// One isotropic component `N(mean, variance · I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    mean: Vec<f64>,
    variance: f64,
}

impl GaussianComponent {
    pub fn new(mean: Vec<f64>, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::input(format!(
                "component variance must be positive and finite, got {variance}"
            )));
        }
        if mean.is_empty() {
            return Err(Error::input("component mean must be non-empty"));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("component mean".into()));
        }
        Ok(Self { mean, variance })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `log N(x; μ, (ν² + extra_variance) I)` without length checks.
    pub(crate) fn log_density_with(&self, x: &[f64], extra_variance: f64) -> f64 {
        let var = self.variance + extra_variance;
        let sq = sq_dist(x, &self.mean);
        -0.5 * (self.mean.len() as f64) * (LN_2PI + var.ln()) - 0.5 * sq / var
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        Error::check_dim(self.dim(), x.len())?;
        Ok(self.log_density_with(x, 0.0))
    }

    /// One draw from `N(μ, (ν² + extra_variance) I)`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, extra_variance: f64) -> Vec<f64> {
        let sd = (self.variance + extra_variance).sqrt();
        self.mean
            .iter()
            .map(|m| {
                let z: f64 = rng.sample(StandardNormal);
                m + sd * z
            })
            .collect()
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Weighted mixture of isotropic Gaussians sharing one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct MixtureModel {
    dim: usize,
    components: Vec<GaussianComponent>,
    log_weights: Vec<f64>,
}

impl MixtureModel {
    /// Builds a model from linear weights. Weights are validated, never
    /// renormalized.
    pub fn new(weights: Vec<f64>, components: Vec<GaussianComponent>) -> Result<Self> {
        if weights.len() != components.len() {
            return Err(Error::input(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::input(format!(
                "weights must be strictly positive, got {w}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::input(format!("weights sum to {sum}, expected 1")));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Self::assemble(log_weights, components)
    }

    /// Builds a model from normalized log-weights (`log Σ exp = 0` within
    /// [`WEIGHT_SUM_TOL`]). Every log-weight must be finite.
    pub fn from_log_weights(
        log_weights: Vec<f64>,
        components: Vec<GaussianComponent>,
    ) -> Result<Self> {
        if log_weights.len() != components.len() {
            return Err(Error::input(format!(
                "{} log-weights for {} components",
                log_weights.len(),
                components.len()
            )));
        }
        if log_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::input("log-weights must be finite"));
        }
        let lse = log_sum_exp(&log_weights);
        if lse.abs() > WEIGHT_SUM_TOL {
            return Err(Error::input(format!(
                "log-weights are not normalized (log-sum-exp {lse})"
            )));
        }
        Self::assemble(log_weights, components)
    }

    fn assemble(log_weights: Vec<f64>, components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::input("a mixture needs at least one component"))?;
        let dim = first.dim();
        for c in &components {
            Error::check_dim(dim, c.dim())?;
        }
        Ok(Self {
            dim,
            components,
            log_weights,
        })
    }

    /// Single isotropic Gaussian `N(mean, variance · I)`.
    pub fn gaussian(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![GaussianComponent::new(mean, variance)?])
    }

    /// The three-mode benchmark `0.2 N(0, 3I) + 0.4 N(1, I) + 0.4 N(-1, I)`.
    pub fn synthetic(dim: usize) -> Result<Self> {
        Self::three_mode(dim, 1.0)
    }

    /// `0.2 N(0, 3I) + 0.4 N(a·1, I) + 0.4 N(-a·1, I)`.
    pub fn three_mode(dim: usize, offset: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("dimension must be positive"));
        }
        Self::new(
            vec![0.2, 0.4, 0.4],
            vec![
                GaussianComponent::new(vec![0.0; dim], 3.0)?,
                GaussianComponent::new(vec![offset; dim], 1.0)?,
                GaussianComponent::new(vec![-offset; dim], 1.0)?,
            ],
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    /// Largest variance among the non-universal components (`ν_max²`).
    pub fn max_mode_variance(&self) -> Option<f64> {
        self.components[1..]
            .iter()
            .map(|c| c.variance)
            .reduce(f64::max)
    }

    /// Fills `terms[i] = log w_i + log N(x; μ_i, (ν_i² + extra) I)`.
    pub(crate) fn joint_log_terms(&self, x: &[f64], extra_variance: f64, terms: &mut [f64]) {
        for ((t, c), lw) in terms.iter_mut().zip(&self.components).zip(&self.log_weights) {
            *t = lw + c.log_density_with(x, extra_variance);
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        Error::check_dim(self.dim, x.len())?;
        let mut terms = vec![0.0; self.num_components()];
        self.joint_log_terms(x, 0.0, &mut terms);
        Ok(log_sum_exp(&terms))
    }

    /// Posterior component probabilities `w_i P_i(x) / P(x)`.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.dim, x.len())?;
        let mut terms = vec![0.0; self.num_components()];
        self.joint_log_terms(x, 0.0, &mut terms);
        normalize_log_terms(&mut terms);
        Ok(terms)
    }

    /// `∇ log P(x) = -Σ_i r_i(x) (x - μ_i) / ν_i²`.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.dim, x.len())?;
        let mut out = vec![0.0; self.dim];
        let mut scratch = vec![0.0; self.num_components()];
        self.score_into(x, 0.0, &mut out, &mut scratch);
        Ok(out)
    }

    /// Score of the model perturbed by noise of variance `extra_variance`,
    /// written into `out`. `scratch` must hold one slot per component.
    /// Lengths are not checked; samplers call this in their inner loop.
    pub fn score_into(&self, x: &[f64], extra_variance: f64, out: &mut [f64], scratch: &mut [f64]) {
        self.joint_log_terms(x, extra_variance, scratch);
        normalize_log_terms(scratch);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (c, r) in self.components.iter().zip(scratch.iter()) {
            if *r == 0.0 {
                continue;
            }
            let coef = r / (c.variance + extra_variance);
            for ((o, xi), mi) in out.iter_mut().zip(x).zip(&c.mean) {
                *o -= coef * (xi - mi);
            }
        }
    }

    /// `P_σ = P * N(0, σ² I)`: each component variance grows by `σ²`.
    pub fn perturb(&self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::input(format!(
                "noise level must be non-negative and finite, got {sigma}"
            )));
        }
        let extra = sigma * sigma;
        Ok(Self {
            dim: self.dim,
            components: self
                .components
                .iter()
                .map(|c| GaussianComponent {
                    mean: c.mean.clone(),
                    variance: c.variance + extra,
                })
                .collect(),
            log_weights: self.log_weights.clone(),
        })
    }

    /// Draws a component index from the categorical weights.
    pub fn draw_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        draw_categorical_log(&self.log_weights, rng)
    }

    /// One draw, returning the component it came from.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vec<f64>) {
        let i = self.draw_component(rng);
        (i, self.components[i].draw(rng, 0.0))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<SampleBatch> {
        Ok(self.sample_labeled(rng, n)?.0)
    }

    /// `n` draws together with the component index of each draw.
    pub fn sample_labeled<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        n: usize,
    ) -> Result<(SampleBatch, Vec<usize>)> {
        if n == 0 {
            return Err(Error::input("sample count must be at least 1"));
        }
        let (labels, points): (Vec<_>, Vec<_>) = (0..n).map(|_| self.draw(rng)).unzip();
        Ok((
            SampleBatch {
                dim: self.dim,
                points,
                provenance: "mixture sample".into(),
            },
            labels,
        ))
    }
}

/// Turns log-terms into probabilities in place.
pub(crate) fn normalize_log_terms(terms: &mut [f64]) {
    let lse = log_sum_exp(terms);
    for t in terms.iter_mut() {
        *t = (*t - lse).exp();
    }
}

pub(crate) fn draw_categorical_log<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let probs: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.len() - 1
}

/// Points of a common dimension with a free-form provenance label.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    dim: usize,
    points: Vec<Vec<f64>>,
    provenance: String,
}

impl SampleBatch {
    pub fn new(dim: usize, points: Vec<Vec<f64>>, provenance: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("dimension must be positive"));
        }
        for p in &points {
            Error::check_dim(dim, p.len())?;
        }
        Ok(Self {
            dim,
            points,
            provenance: provenance.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec<f64>> {
        self.points
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Values of one coordinate across all points.
    pub fn coordinate(&self, coord: usize) -> Vec<f64> {
        self.points.iter().map(|p| p[coord]).collect()
    }
}

/// Outcome of a Monte-Carlo moment generating function check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MgfCheck {
    pub estimate: f64,
    pub bound: f64,
    pub ratio: f64,
    pub std_error: f64,
    pub pass: bool,
}

/// Estimates `E[exp(αᵀ(z - μ))]` for `z` drawn from `component` and compares
/// it to the sub-Gaussian bound `exp(ν² ‖α‖² / 2)`. Passes unless the
/// estimate exceeds the bound by more than five standard errors.
pub fn mgf_check<R: Rng + ?Sized>(
    component: &GaussianComponent,
    alpha: &[f64],
    rng: &mut R,
    n: usize,
) -> Result<MgfCheck> {
    Error::check_dim(component.dim(), alpha.len())?;
    if n == 0 {
        return Err(Error::input("sample count must be at least 1"));
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..n {
        let z = component.draw(rng, 0.0);
        let dot: f64 = alpha
            .iter()
            .zip(z.iter().zip(&component.mean))
            .map(|(a, (zi, mi))| a * (zi - mi))
            .sum();
        let v = dot.exp();
        // Welford
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    let std_error = (var / n as f64).sqrt();
    let alpha_sq: f64 = alpha.iter().map(|a| a * a).sum();
    let bound = (0.5 * component.variance * alpha_sq).exp();
    Ok(MgfCheck {
        estimate: mean,
        bound,
        ratio: mean / bound,
        std_error,
        pass: mean <= bound + 5.0 * std_error,
    })
}

/// JSON form of a model. Means may be given as a vector or as
/// `{"fill": c}` for the constant vector `c · 1_d`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub components: Vec<ComponentSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub mean: MeanSpec,
    pub variance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanSpec {
    Vector(Vec<f64>),
    Fill { fill: f64 },
}

impl TryFrom<ModelSpec> for MixtureModel {
    type Error = Error;

    fn try_from(spec: ModelSpec) -> Result<Self> {
        if spec.dim == 0 {
            return Err(Error::input("dimension must be positive"));
        }
        let components = spec
            .components
            .into_iter()
            .map(|c| {
                let mean = match c.mean {
                    MeanSpec::Vector(v) => {
                        Error::check_dim(spec.dim, v.len())?;
                        v
                    }
                    MeanSpec::Fill { fill } => vec![fill; spec.dim],
                };
                GaussianComponent::new(mean, c.variance)
            })
            .collect::<Result<Vec<_>>>()?;
        MixtureModel::new(spec.weights, components)
    }
}

impl From<MixtureModel> for ModelSpec {
    fn from(model: MixtureModel) -> Self {
        ModelSpec {
            dim: model.dim,
            weights: model.weights(),
            components: model
                .components
                .into_iter()
                .map(|c| ComponentSpec {
                    mean: MeanSpec::Vector(c.mean),
                    variance: c.variance,
                })
                .collect(),
        }
    }
}
