//! End-to-end estimation: regularity, noise, mean and covariance.

use serde::{Deserialize, Serialize};

use crate::covariance::{estimate_covariance, CovarianceOptions, CovarianceSurface};
use crate::mean::{estimate_mean, MeanEstimate, SmoothingOptions};
use crate::model::{EvalGrid, FunctionalDataset};
use crate::regularity::{
    default_anchors, estimate_noise, estimate_regularity_grid, NoiseEstimate, NoiseMode, PresmoothRule, RegularityEstimate,
    RegularitySchedule,
};
use crate::Result;

/// Every tuning knob of the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct PipelineOptions {
    pub gamma: f64,
    pub gamma_exp: f64,
    pub delta_max: usize,
    pub presmooth: PresmoothRule,
    pub noise_mode: NoiseMode,
    /// Regularity anchors for the mean (uniform on [0.05, 0.95]).
    pub mean_anchors: usize,
    /// Regularity anchors (and bandwidth lattice size) for the covariance.
    pub cov_anchors: usize,
    pub mean: SmoothingOptions,
    pub cov: CovarianceOptions,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            gamma_exp: 2.0,
            delta_max: 2,
            presmooth: PresmoothRule::default(),
            noise_mode: NoiseMode::TimeVarying,
            mean_anchors: 50,
            cov_anchors: 10,
            mean: SmoothingOptions::default(),
            cov: CovarianceOptions::default(),
        }
    }
}

impl PipelineOptions {
    pub fn schedule(&self, dataset: &FunctionalDataset) -> Result<RegularitySchedule> {
        RegularitySchedule::with_params(dataset.m_hat(), self.gamma, self.gamma_exp, self.delta_max, self.presmooth)
    }

    pub fn regularity(&self, dataset: &FunctionalDataset, anchors: usize) -> Result<Vec<RegularityEstimate>> {
        let schedule = self.schedule(dataset)?;
        estimate_regularity_grid(dataset, &default_anchors(anchors)?, &schedule, self.mean.presmooth_kernel)
    }

    pub fn noise(&self, dataset: &FunctionalDataset, grid: &EvalGrid) -> Result<NoiseEstimate> {
        estimate_noise(dataset, grid, self.noise_mode)
    }

    /// Regularity at the mean anchors, noise on `grid`, then the mean.
    pub fn mean(&self, dataset: &FunctionalDataset, grid: &EvalGrid) -> Result<MeanFit> {
        let schedule = self.schedule(dataset)?;
        let regs = self.regularity(dataset, self.mean_anchors)?;
        let noise = self.noise(dataset, grid)?;
        let mean = estimate_mean(dataset, grid, &regs, &noise, &schedule, &self.mean)?;
        Ok(MeanFit { regs, noise, mean })
    }

    /// Covariance on `grid`, centered with a mean fitted on the same grid
    /// (skipped when the mean is assumed zero). A supplied mean fit may live
    /// on any grid; it is interpolated.
    pub fn covariance(&self, dataset: &FunctionalDataset, grid: &EvalGrid, mean: Option<&MeanFit>) -> Result<CovarianceSurface> {
        let schedule = self.schedule(dataset)?;
        let fitted;
        let (mean_est, noise) = match mean {
            Some(m) => (Some(&m.mean), m.noise.clone()),
            None if self.cov.assume_zero_mean => (None, self.noise(dataset, grid)?),
            None => {
                fitted = self.mean(dataset, grid)?;
                (Some(&fitted.mean), fitted.noise.clone())
            }
        };
        let regs = self.regularity(dataset, self.cov_anchors)?;
        estimate_covariance(dataset, grid, &regs, &noise, &schedule, mean_est, &self.cov)
    }
}

/// Mean estimate together with the ingredients it was built from.
#[derive(Debug, Clone)]
pub struct MeanFit {
    pub regs: Vec<RegularityEstimate>,
    pub noise: NoiseEstimate,
    pub mean: MeanEstimate,
}
