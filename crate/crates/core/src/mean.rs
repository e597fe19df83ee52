//! Adaptive mean-function estimation.
//!
//! At each anchor the bandwidth minimizes a three-term risk: a bias term
//! driven by the local regularity, a variance term driven by the noise level
//! and the effective number of observations, and a penalty for curves that
//! have too few points in the window and drop out of the average.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kernel::{kernel_abs_moment, window_weights, Kernel, MAX_ORDER};
use crate::model::{interp_linear, nearest_index, EvalGrid, FunctionalDataset};
use crate::regularity::{presmoothed_values, NoiseEstimate, RegularityEstimate, RegularitySchedule};
use crate::{Error, Result};

/// Log-spaced bandwidth candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthGrid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl BandwidthGrid {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo > 0.0 && hi < 1.0 && lo < hi) || count < 2 {
            return Err(Error::Configuration(format!(
                "bandwidth grid needs 0 < lo < hi < 1 and at least 2 points, got [{lo}, {hi}] x {count}"
            )));
        }
        Ok(Self { lo, hi, count })
    }

    /// 151 points on `[1/m̂, 0.5]`.
    pub fn default_mean(m_hat: f64) -> Result<Self> {
        Self::new(1.0 / m_hat, 0.5, 151)
    }

    /// 41 points on `[0.01, 0.1]`.
    pub fn default_covariance() -> Self {
        Self { lo: 0.01, hi: 0.1, count: 41 }
    }

    pub fn values(&self) -> Vec<f64> {
        let (a, b) = (self.lo.ln(), self.hi.ln());
        let step = (b - a) / (self.count - 1) as f64;
        let mut v: Vec<f64> = (0..self.count).map(|k| (a + k as f64 * step).exp()).collect();
        v[0] = self.lo;
        v[self.count - 1] = self.hi;
        v
    }
}

/// Smoothing settings shared by the mean and covariance estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct SmoothingOptions {
    /// Kernel of the local-polynomial estimates.
    pub kernel: Kernel,
    /// Kernel used to presmooth curves for the moment plug-ins.
    pub presmooth_kernel: Kernel,
    /// Minimum number of points in a window; raised to `order + 1` if lower.
    pub k0: usize,
    /// Also minimize the risk over `k0 ∈ {order+1, order+2, order+3}`.
    pub joint_k0: bool,
    /// Replace the measured `C̄₁` by the kernel moment `∫|u|^{2α}K(u)du`.
    pub kernel_moment: bool,
    /// Bandwidth candidates; `None` uses the estimator's default.
    pub bandwidths: Option<BandwidthGrid>,
}

impl Default for SmoothingOptions {
    fn default() -> Self {
        Self {
            kernel: Kernel::Biweight,
            presmooth_kernel: Kernel::Epanechnikov,
            k0: 2,
            joint_k0: false,
            kernel_moment: false,
            bandwidths: None,
        }
    }
}

impl SmoothingOptions {
    /// `k0` values to try for a given order.
    pub fn k0_candidates(&self, order: usize) -> Vec<usize> {
        let base = self.k0.max(order + 1);
        if self.joint_k0 {
            (order + 1..=order + 3).collect()
        } else {
            vec![base]
        }
    }
}

/// Local-polynomial order used for a regularity estimate.
pub fn smoothing_order(reg: &RegularityEstimate) -> usize {
    reg.delta_hat.min(MAX_ORDER)
}

/// Summary of one curve's weights at `(t, h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveWeightSummary {
    /// `Σ_m W_m Y_m`.
    pub estimate: f64,
    /// `c_i = Σ |W_m|`.
    pub c: f64,
    /// `c_i(α) = Σ |(T_m - t)/h|^α |W_m|`.
    pub c_alpha: f64,
    /// `max_m |W_m|`.
    pub max_abs: f64,
}

/// Weights summary for every curve (`None` for curves with `w_i = 0`).
pub fn curve_summaries(
    dataset: &FunctionalDataset,
    t: f64,
    h: f64,
    order: usize,
    kernel: Kernel,
    k0: usize,
    alpha: f64,
) -> Vec<Option<CurveWeightSummary>> {
    let mut buf = Vec::new();
    dataset
        .curves()
        .iter()
        .map(|c| {
            let (start, ok) = window_weights(c.times(), t, h, order, 0, kernel, k0, &mut buf);
            if !ok {
                return None;
            }
            let times = &c.times()[start..start + buf.len()];
            let values = &c.values()[start..start + buf.len()];
            let mut s = CurveWeightSummary { estimate: 0.0, c: 0.0, c_alpha: 0.0, max_abs: 0.0 };
            for ((w, x), y) in buf.iter().zip(times).zip(values) {
                let aw = w.abs();
                s.estimate += w * y;
                s.c += aw;
                if aw > 0.0 {
                    let z = ((x - t) / h).abs();
                    s.c_alpha += if alpha == 0.0 { aw } else { z.powf(alpha) * aw };
                }
                s.max_abs = s.max_abs.max(aw);
            }
            Some(s)
        })
        .collect()
}

/// Curve-inclusion quantities entering the mean risk at `(t, h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionStats {
    pub t: f64,
    pub h: f64,
    /// Exponent used in `c_i(·, α)`.
    pub alpha: f64,
    pub n: usize,
    /// `w_i(t; h)`.
    pub w: Vec<bool>,
    /// `𝒲_N = Σ w_i`.
    pub w_n: usize,
    /// `c_i` (0 for excluded curves).
    pub c: Vec<f64>,
    /// `c_i(·, α)` (0 for excluded curves).
    pub c_alpha: Vec<f64>,
    /// `max_m |W_m|` (0 for excluded curves).
    pub max_abs: Vec<f64>,
    /// `𝒩_i = w_i / max_m |W_m|` (0 for excluded curves).
    pub n_i: Vec<f64>,
    /// `𝒩_μ = [𝒲_N⁻² Σ w_i c_i / 𝒩_i]⁻¹`, 0 when `𝒲_N = 0`.
    pub n_mu: f64,
    /// `C̄₁ = 𝒲_N⁻¹ Σ w_i c_i c_i(·, α)`, 0 when `𝒲_N = 0`.
    pub c_bar1: f64,
}

impl InclusionStats {
    pub fn from_summaries(t: f64, h: f64, alpha: f64, summaries: &[Option<CurveWeightSummary>]) -> Self {
        let n = summaries.len();
        let mut w = vec![false; n];
        let mut c = vec![0.0; n];
        let mut c_alpha = vec![0.0; n];
        let mut n_i = vec![0.0; n];
        let mut max_abs = vec![0.0; n];
        let (mut w_n, mut inv_sum, mut cc_sum) = (0usize, 0.0, 0.0);
        for (i, s) in summaries.iter().enumerate() {
            if let Some(s) = s {
                w[i] = true;
                c[i] = s.c;
                c_alpha[i] = s.c_alpha;
                n_i[i] = 1.0 / s.max_abs;
                max_abs[i] = s.max_abs;
                w_n += 1;
                inv_sum += s.c * s.max_abs;
                cc_sum += s.c * s.c_alpha;
            }
        }
        let (n_mu, c_bar1) = if w_n == 0 {
            (0.0, 0.0)
        } else {
            let wn = w_n as f64;
            ((wn * wn) / inv_sum, cc_sum / wn)
        };
        Self { t, h, alpha, n, w, w_n, c, c_alpha, max_abs, n_i, n_mu, c_bar1 }
    }
}

/// Inclusion statistics of the order-`order` smoother at `(t, h)`, with
/// exponent `alpha` in `c_i(·, α)`.
pub fn inclusion_stats(
    dataset: &FunctionalDataset,
    t: f64,
    h: f64,
    order: usize,
    kernel: Kernel,
    k0: usize,
    alpha: f64,
) -> Result<InclusionStats> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
    }
    if order > MAX_ORDER || k0 < order + 1 {
        return Err(Error::InvalidArgument(format!("need k0 >= order + 1 and order <= {MAX_ORDER}, got k0 = {k0}, order = {order}")));
    }
    let sums = curve_summaries(dataset, t, h, order, kernel, k0, alpha);
    Ok(InclusionStats::from_summaries(t, h, alpha, &sums))
}

/// The three risk terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskTerms {
    pub bias: f64,
    pub var: f64,
    pub dropout: f64,
    pub total: f64,
}

impl RiskTerms {
    /// Sentinel for bandwidths where no curve qualifies.
    pub const INFINITE: RiskTerms = RiskTerms { bias: f64::INFINITY, var: f64::INFINITY, dropout: f64::INFINITY, total: f64::INFINITY };

    fn new(bias: f64, var: f64, dropout: f64) -> Self {
        Self { bias, var, dropout, total: bias + var + dropout }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).map(|j| j as f64).product()
}

/// `q₁² h^{2α̂} + q₂²/𝒩_μ + q₃²(1/𝒲_N - 1/N)` with `q₁² = C̄₁ L̂² / δ̂!²`,
/// `q₂² = σ²_max`, `q₃² = Var(X_t)`. `C̄₁` comes from `stats`.
pub fn mean_risk(stats: &InclusionStats, reg: &RegularityEstimate, noise: &NoiseEstimate, var_x_t: f64, n: usize) -> RiskTerms {
    mean_risk_with(stats, stats.c_bar1, reg, noise.sigma2_max, var_x_t, n)
}

pub(crate) fn mean_risk_with(stats: &InclusionStats, c_bar1: f64, reg: &RegularityEstimate, sigma2_max: f64, var_x_t: f64, n: usize) -> RiskTerms {
    if stats.w_n == 0 {
        return RiskTerms::INFINITE;
    }
    let fact = factorial(reg.delta_hat);
    let q1_sq = c_bar1 * reg.l2_hat / (fact * fact);
    let bias = q1_sq * stats.h.powf(2.0 * reg.alpha_hat);
    let var = sigma2_max / stats.n_mu;
    let dropout = var_x_t * (1.0 / stats.w_n as f64 - 1.0 / n as f64);
    RiskTerms::new(bias, var, dropout)
}

/// Risk over the bandwidth grid at one point, with its minimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskProfile {
    pub t: f64,
    pub bandwidths: Vec<f64>,
    pub terms: Vec<RiskTerms>,
    pub w_n: Vec<usize>,
    pub h_star: f64,
    /// Index of `h_star` in `bandwidths`.
    pub star: usize,
    /// `k0` at the minimum.
    pub k0: usize,
    pub q1_sq: f64,
    pub q2_sq: f64,
    pub q3_sq: f64,
}

impl RiskProfile {
    pub fn total(&self) -> Vec<f64> {
        self.terms.iter().map(|r| r.total).collect()
    }
}

/// Sample mean, variance (divisor `n - 1`) and second moment of the defined
/// entries; `None` if there are none.
pub(crate) fn moments(values: impl Iterator<Item = f64>) -> Option<(f64, f64, f64)> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let m2 = v.iter().map(|x| x * x).sum::<f64>() / n;
    Some((mean, var, m2))
}

/// `Var(X_t)` plug-in: empirical variance of the presmoothed curve values.
pub fn presmoothed_variance(dataset: &FunctionalDataset, t: f64, schedule: &RegularitySchedule, kernel: Kernel) -> f64 {
    moments(presmoothed_values(dataset, t, schedule, kernel).into_iter().flatten()).map_or(0.0, |m| m.1)
}

/// Minimizes the mean risk over the bandwidth grid (ties go to the smaller
/// bandwidth, then the smaller `k0`).
pub fn select_mean_bandwidth(
    dataset: &FunctionalDataset,
    t: f64,
    reg: &RegularityEstimate,
    noise: &NoiseEstimate,
    var_x_t: f64,
    opts: &SmoothingOptions,
) -> Result<RiskProfile> {
    let grid = match opts.bandwidths {
        Some(g) => g,
        None => BandwidthGrid::default_mean(dataset.m_hat())?,
    };
    let bandwidths = grid.values();
    let order = smoothing_order(reg);
    let alpha = 2.0 * reg.alpha_hat;
    let moment = if opts.kernel_moment { Some(kernel_abs_moment(opts.kernel, alpha)?) } else { None };
    let n = dataset.n_curves();

    let mut best: Option<RiskProfile> = None;
    for k0 in opts.k0_candidates(order) {
        let mut terms = Vec::with_capacity(bandwidths.len());
        let mut w_n = Vec::with_capacity(bandwidths.len());
        let mut c_bars = Vec::with_capacity(bandwidths.len());
        for &h in &bandwidths {
            let stats = InclusionStats::from_summaries(t, h, alpha, &curve_summaries(dataset, t, h, order, opts.kernel, k0, alpha));
            let c_bar = moment.unwrap_or(stats.c_bar1);
            terms.push(mean_risk_with(&stats, c_bar, reg, noise.sigma2_max, var_x_t, n));
            w_n.push(stats.w_n);
            c_bars.push(c_bar);
        }
        let Some(star) = argmin(&terms) else { continue };
        if best.as_ref().is_none_or(|b| terms[star].total < b.terms[b.star].total) {
            let fact = factorial(reg.delta_hat);
            best = Some(RiskProfile {
                t,
                h_star: bandwidths[star],
                star,
                k0,
                q1_sq: c_bars[star] * reg.l2_hat / (fact * fact),
                q2_sq: noise.sigma2_max,
                q3_sq: var_x_t,
                bandwidths: bandwidths.clone(),
                terms,
                w_n,
            });
        }
    }
    best.ok_or(Error::NoAdmissibleBandwidth { t })
}

/// First index of the smallest finite total.
pub(crate) fn argmin(terms: &[RiskTerms]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, r) in terms.iter().enumerate() {
        if r.total.is_finite() && best.is_none_or(|b| r.total < terms[b].total) {
            best = Some(k);
        }
    }
    best
}

/// Adaptive mean estimate on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanEstimate {
    pub grid: Vec<f64>,
    /// `μ̂*(t)`, `None` where no curve qualifies.
    pub values: Vec<Option<f64>>,
    pub h_star: Vec<f64>,
    pub w_n: Vec<usize>,
    pub order: Vec<usize>,
    /// Risk terms at the interpolated bandwidth.
    pub risk: Vec<RiskTerms>,
    /// Risk profiles at the anchors.
    pub anchors: Vec<RiskProfile>,
}

impl MeanEstimate {
    /// `μ̂*` at `t` by linear interpolation between defined grid values.
    pub fn interpolate(&self, t: f64) -> Option<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self.grid.iter().zip(&self.values).filter_map(|(&x, v)| v.map(|v| (x, v))).unzip();
        if xs.is_empty() {
            return None;
        }
        Some(interp_linear(&xs, &ys, t))
    }

    /// Bandwidth at `t`, interpolated from the anchors.
    pub fn bandwidth_at(&self, t: f64) -> f64 {
        let (xs, ys) = anchor_curve(&self.anchors);
        interp_linear(&xs, &ys, t)
    }
}

/// Anchor positions and optimal bandwidths, with repeated positions
/// (boundary clamping) collapsed to the first occurrence.
fn anchor_curve(profiles: &[RiskProfile]) -> (Vec<f64>, Vec<f64>) {
    let mut xs: Vec<f64> = Vec::with_capacity(profiles.len());
    let mut ys = Vec::with_capacity(profiles.len());
    for p in profiles {
        if xs.last().is_none_or(|&x| p.t > x) {
            xs.push(p.t);
            ys.push(p.h_star);
        }
    }
    (xs, ys)
}

/// Mean estimate on `grid`: bandwidths are optimized at the regularity
/// anchors and linearly interpolated; the order at each grid point follows
/// the nearest anchor.
pub fn estimate_mean(
    dataset: &FunctionalDataset,
    grid: &EvalGrid,
    regs: &[RegularityEstimate],
    noise: &NoiseEstimate,
    schedule: &RegularitySchedule,
    opts: &SmoothingOptions,
) -> Result<MeanEstimate> {
    if regs.is_empty() {
        return Err(Error::InvalidArgument("need at least one regularity anchor".into()));
    }
    if regs.windows(2).any(|w| w[1].anchor_t2 < w[0].anchor_t2) {
        return Err(Error::InvalidArgument("regularity anchors must be sorted".into()));
    }
    let anchors: Vec<RiskProfile> = regs
        .par_iter()
        .map(|reg| {
            let var_x = presmoothed_variance(dataset, reg.anchor_t2, schedule, opts.presmooth_kernel);
            select_mean_bandwidth(dataset, reg.anchor_t2, reg, noise, var_x, opts)
        })
        .collect::<Result<_>>()?;

    let (ax, ah) = anchor_curve(&anchors);
    let anchor_t: Vec<f64> = regs.iter().map(|r| r.anchor_t2).collect();
    let n = dataset.n_curves();
    let rows: Vec<(Option<f64>, f64, usize, usize, RiskTerms)> = grid
        .points()
        .par_iter()
        .map(|&t| {
            let k = nearest_index(&anchor_t, t);
            let reg = &regs[k];
            let order = smoothing_order(reg);
            let k0 = anchors[k].k0;
            let h = interp_linear(&ax, &ah, t);
            let alpha = 2.0 * reg.alpha_hat;
            let sums = curve_summaries(dataset, t, h, order, opts.kernel, k0, alpha);
            let stats = InclusionStats::from_summaries(t, h, alpha, &sums);
            let value = (stats.w_n > 0).then(|| sums.iter().flatten().map(|s| s.estimate).sum::<f64>() / stats.w_n as f64);
            let c_bar = if opts.kernel_moment { kernel_abs_moment(opts.kernel, alpha).unwrap_or(stats.c_bar1) } else { stats.c_bar1 };
            let var_x = presmoothed_variance(dataset, t, schedule, opts.presmooth_kernel);
            let risk = mean_risk_with(&stats, c_bar, reg, noise.sigma2_max, var_x, n);
            (value, h, stats.w_n, order, risk)
        })
        .collect();

    let mut est = MeanEstimate {
        grid: grid.points().to_vec(),
        values: Vec::with_capacity(rows.len()),
        h_star: Vec::with_capacity(rows.len()),
        w_n: Vec::with_capacity(rows.len()),
        order: Vec::with_capacity(rows.len()),
        risk: Vec::with_capacity(rows.len()),
        anchors,
    };
    for (v, h, w, o, r) in rows {
        est.values.push(v);
        est.h_star.push(h);
        est.w_n.push(w);
        est.order.push(o);
        est.risk.push(r);
    }
    Ok(est)
}
