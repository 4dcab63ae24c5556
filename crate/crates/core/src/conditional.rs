//! Exact prefix-conditional patch distributions.
//!
//! A sample of dimension `d` is split into `d / Q` contiguous patches of size
//! `Q`. For an isotropic mixture the conditional of patch `q` given the
//! previous patches is again a mixture over the same components: the means
//! and variances restrict to the patch coordinates and each weight is
//! multiplied by the component's likelihood of the prefix.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mixture::{log_sum_exp, sq_dist, GaussianComponent, MixtureModel};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Split of `dim` coordinates into contiguous patches of `patch_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchLayout {
    dim: usize,
    patch_size: usize,
}

impl PatchLayout {
    pub fn new(dim: usize, patch_size: usize) -> Result<Self> {
        if dim == 0 || patch_size == 0 {
            return Err(Error::input("dimension and patch size must be positive"));
        }
        if dim % patch_size != 0 {
            return Err(Error::input(format!(
                "patch size {patch_size} does not divide dimension {dim}"
            )));
        }
        Ok(Self { dim, patch_size })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.dim / self.patch_size
    }

    /// Coordinates covered by the zero-based patch `index`.
    pub fn range(&self, index: usize) -> Range<usize> {
        index * self.patch_size..(index + 1) * self.patch_size
    }
}

/// The already generated patches `x^(1), …, x^(q-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixState {
    layout: PatchLayout,
    values: Vec<f64>,
}

impl PrefixState {
    pub fn empty(layout: PatchLayout) -> Self {
        Self {
            layout,
            values: Vec::new(),
        }
    }

    pub fn new(layout: PatchLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() % layout.patch_size != 0 || values.len() > layout.dim {
            return Err(Error::input(format!(
                "prefix of length {} is not a whole number of patches of size {} within dimension {}",
                values.len(),
                layout.patch_size,
                layout.dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prefix values".into()));
        }
        Ok(Self { layout, values })
    }

    /// Prefix consisting of the first `completed` patches of a full point.
    pub fn of_point(layout: PatchLayout, x: &[f64], completed: usize) -> Result<Self> {
        Error::check_dim(layout.dim, x.len())?;
        if completed > layout.num_patches() {
            return Err(Error::input(format!(
                "{completed} completed patches exceed {}",
                layout.num_patches()
            )));
        }
        Self::new(layout, x[..completed * layout.patch_size].to_vec())
    }

    pub fn layout(&self) -> PatchLayout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of completed patches `q - 1`.
    pub fn completed(&self) -> usize {
        self.values.len() / self.layout.patch_size
    }

    pub fn is_complete(&self) -> bool {
        self.values.len() == self.layout.dim
    }

    /// Coordinates of the next patch to generate.
    pub fn next_range(&self) -> Result<Range<usize>> {
        if self.is_complete() {
            return Err(Error::InvalidState(
                "all patches are already generated".into(),
            ));
        }
        Ok(self.layout.range(self.completed()))
    }

    pub fn push_patch(&mut self, patch: &[f64]) -> Result<()> {
        self.next_range()?;
        Error::check_dim(self.layout.patch_size, patch.len())?;
        if patch.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("patch values".into()));
        }
        self.values.extend_from_slice(patch);
        Ok(())
    }
}

/// How the noise level enters the conditional patch distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    /// Weights from the clean prefix likelihood (variances `ν²`); only the
    /// patch itself is convolved with `N(0, σ² I_Q)`. This is the target of
    /// denoising score matching on clean prefixes.
    #[default]
    CleanPrefix,
    /// Conditional of the perturbed joint: prefix likelihood evaluated at
    /// variances `ν² + σ²`.
    PerturbedJoint,
}

fn check_model(model: &MixtureModel, prefix: &PrefixState) -> Result<()> {
    Error::check_dim(prefix.layout.dim, model.dim())
}

fn prefix_log_weights_with(model: &MixtureModel, prefix: &PrefixState, extra_variance: f64) -> Vec<f64> {
    let n = prefix.values.len();
    if n == 0 {
        return model.log_weights().to_vec();
    }
    let mut terms: Vec<f64> = model
        .components()
        .iter()
        .zip(model.log_weights())
        .map(|(c, lw)| {
            let var = c.variance() + extra_variance;
            let sq = sq_dist(&prefix.values, &c.mean()[..n]);
            lw - 0.5 * n as f64 * (LN_2PI + var.ln()) - 0.5 * sq / var
        })
        .collect();
    let lse = log_sum_exp(&terms);
    terms.iter_mut().for_each(|t| *t -= lse);
    terms
}

/// Normalized log-weights of the components given the prefix. An empty prefix
/// returns the model's log-weights unchanged.
pub fn prefix_log_weights(model: &MixtureModel, prefix: &PrefixState) -> Result<Vec<f64>> {
    check_model(model, prefix)?;
    Ok(prefix_log_weights_with(model, prefix, 0.0))
}

/// `P_σ(x^(q) | prefix)` as a `Q`-dimensional mixture.
pub fn conditional_mixture(model: &MixtureModel, prefix: &PrefixState, sigma: f64) -> Result<MixtureModel> {
    conditional_mixture_with(model, prefix, sigma, PerturbationMode::CleanPrefix)
}

pub fn conditional_mixture_with(
    model: &MixtureModel,
    prefix: &PrefixState,
    sigma: f64,
    mode: PerturbationMode,
) -> Result<MixtureModel> {
    check_model(model, prefix)?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::input(format!(
            "noise level must be non-negative and finite, got {sigma}"
        )));
    }
    let range = prefix.next_range()?;
    let extra = sigma * sigma;
    let weight_extra = match mode {
        PerturbationMode::CleanPrefix => 0.0,
        PerturbationMode::PerturbedJoint => extra,
    };
    let log_weights = prefix_log_weights_with(model, prefix, weight_extra);
    let components = model
        .components()
        .iter()
        .map(|c| GaussianComponent::new(c.mean()[range.clone()].to_vec(), c.variance() + extra))
        .collect::<Result<Vec<_>>>()?;
    MixtureModel::from_log_weights(log_weights, components)
}

/// Exact score `∇_{x^(q)} log P_σ(x^(q) | prefix)`.
pub fn conditional_score(
    model: &MixtureModel,
    prefix: &PrefixState,
    patch_value: &[f64],
    sigma: f64,
) -> Result<Vec<f64>> {
    let cond = conditional_mixture(model, prefix, sigma)?;
    cond.score(patch_value)
}

/// One exact draw of the next patch from the clean conditional.
pub fn sample_conditional_exact<R: Rng + ?Sized>(
    model: &MixtureModel,
    prefix: &PrefixState,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let cond = conditional_mixture(model, prefix, 0.0)?;
    Ok(cond.draw(rng).1)
}

/// Full point built patch by patch from exact conditionals.
pub fn sample_chain_rule<R: Rng + ?Sized>(
    model: &MixtureModel,
    layout: PatchLayout,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Error::check_dim(layout.dim, model.dim())?;
    let mut prefix = PrefixState::empty(layout);
    while !prefix.is_complete() {
        let patch = sample_conditional_exact(model, &prefix, rng)?;
        prefix.push_patch(&patch)?;
    }
    Ok(prefix.values)
}
