//! Local regularity, Hölder constant and noise level estimation.
//!
//! Around an anchor `t2`, the curves are presmoothed at `t1 < t2 < t3` with
//! `t3 - t1 = Δ*/2`, and the mean squared increments `θ̂_d(s, t)` of the
//! `d`-th derivative give the local Hölder exponent through the ratio of
//! increments over a doubled gap.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kernel::{smooth_at, Kernel};
use crate::model::{CurveObservations, EvalGrid, FunctionalDataset};
use crate::{Error, Result};

/// Lower and upper clipping bounds for the estimated Hölder exponent.
pub const H_MIN: f64 = 0.05;
pub const H_MAX: f64 = 1.0;

/// How the presmoothing bandwidth is derived from `m̂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "value")]
pub enum PresmoothRule {
    /// `h = (Δ* / (2 m̂))^{1/3}`.
    CubeRoot,
    /// `h = κ / m̂`: roughly `κ` observations on each side of the point.
    PointCount(f64),
    /// A fixed bandwidth.
    Fixed(f64),
}

impl Default for PresmoothRule {
    fn default() -> Self {
        PresmoothRule::PointCount(2.0)
    }
}

/// Tuning constants of the regularity estimator, resolved for a given `m̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularitySchedule {
    pub m_hat: f64,
    pub gamma: f64,
    pub gamma_exp: f64,
    /// `Δ* = 2 exp(-log^γ m̂)`, the width of `[t1, t3]` is `Δ*/2`.
    pub delta_star: f64,
    /// `φ = log^{-Γ} m̂`; `δ` is raised while `Ĥ_δ ≥ 1 - φ`.
    pub phi: f64,
    pub presmooth_bandwidth: f64,
    pub delta_max: usize,
    pub rule: PresmoothRule,
}

impl RegularitySchedule {
    /// Defaults: `γ = 1/2`, `Γ = 2`, `delta_max = 2`, presmoothing `h = 2/m̂`.
    pub fn new(m_hat: f64) -> Result<Self> {
        Self::with_params(m_hat, 0.5, 2.0, 2, PresmoothRule::default())
    }

    pub fn with_params(m_hat: f64, gamma: f64, gamma_exp: f64, delta_max: usize, rule: PresmoothRule) -> Result<Self> {
        if !(m_hat > 1.0) {
            return Err(Error::Configuration(format!("need m_hat > 1 for the regularity schedule, got {m_hat}")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Configuration(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        if !(gamma_exp > 0.0) {
            return Err(Error::Configuration(format!("Gamma exponent must be positive, got {gamma_exp}")));
        }
        if delta_max + 2 > crate::kernel::MAX_ORDER + 1 {
            return Err(Error::Configuration(format!("delta_max {delta_max} too large")));
        }
        let log_m = m_hat.ln();
        let delta_star = 2.0 * (-log_m.powf(gamma)).exp();
        let phi = log_m.powf(-gamma_exp);
        let presmooth_bandwidth = match rule {
            PresmoothRule::CubeRoot => (delta_star / (2.0 * m_hat)).cbrt(),
            PresmoothRule::PointCount(k) if k > 0.0 => k / m_hat,
            PresmoothRule::Fixed(h) if h > 0.0 && h < 1.0 => h,
            other => return Err(Error::Configuration(format!("invalid presmoothing rule {other:?}"))),
        };
        Ok(Self { m_hat, gamma, gamma_exp, delta_star, phi, presmooth_bandwidth, delta_max, rule })
    }

    /// The presmoothing triple `(t1, t2, t3)` for an anchor, moved inwards if
    /// needed so the presmoothing windows stay inside the domain.
    pub fn anchor_points(&self, t2: f64) -> (f64, f64, f64) {
        let half = self.delta_star / 4.0;
        let margin = half + self.presmooth_bandwidth;
        let t2 = if margin < 0.5 { t2.clamp(margin, 1.0 - margin) } else { 0.5 };
        (t2 - half, t2, t2 + half)
    }

    /// Presmoothing bandwidth, polynomial order and minimum point count used
    /// for the `d`-th derivative.
    fn presmooth_setup(&self, d: usize) -> (f64, usize, usize) {
        if d == 0 {
            (self.presmooth_bandwidth, 0, 1)
        } else {
            ((d + 1) as f64 * self.presmooth_bandwidth, d + 1, d + 2)
        }
    }
}

/// Presmoothed `d`-th derivative of one curve at `t`, `None` when undefined.
pub fn presmoothed_derivative(curve: &CurveObservations, d: usize, t: f64, schedule: &RegularitySchedule, kernel: Kernel) -> Option<f64> {
    let (h, order, k0) = schedule.presmooth_setup(d);
    let mut buf = Vec::new();
    smooth_at(curve, t, h, order, d, kernel, k0, &mut buf)
}

/// Presmoothed values `X̃_t` of every curve (`None` when undefined).
pub fn presmoothed_values(dataset: &FunctionalDataset, t: f64, schedule: &RegularitySchedule, kernel: Kernel) -> Vec<Option<f64>> {
    dataset.curves().iter().map(|c| presmoothed_derivative(c, 0, t, schedule, kernel)).collect()
}

/// Mean squared increment of presmoothed derivatives plus the number of
/// curves it averages over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta {
    pub value: f64,
    pub retained: usize,
}

/// `θ̂_d(s, t)`: mean over curves of `(∇̃^d X_t - ∇̃^d X_s)²`.
pub fn estimate_theta(dataset: &FunctionalDataset, d: usize, s: f64, t: f64, schedule: &RegularitySchedule, kernel: Kernel) -> Result<f64> {
    theta_with_count(dataset, d, s, t, schedule, kernel).map(|th| th.value)
}

pub fn theta_with_count(dataset: &FunctionalDataset, d: usize, s: f64, t: f64, schedule: &RegularitySchedule, kernel: Kernel) -> Result<Theta> {
    if s == t || !(s > 0.0 && s < 1.0 && t > 0.0 && t < 1.0) {
        return Err(Error::InvalidArgument(format!("theta needs distinct points in (0, 1), got {s}, {t}")));
    }
    if d > schedule.delta_max {
        return Err(Error::InvalidArgument(format!("derivative order {d} above delta_max {}", schedule.delta_max)));
    }
    let diffs = dataset.curves().iter().filter_map(|c| {
        let a = presmoothed_derivative(c, d, s, schedule, kernel)?;
        let b = presmoothed_derivative(c, d, t, schedule, kernel)?;
        Some(b - a)
    });
    mean_square(diffs)
}

fn mean_square(diffs: impl Iterator<Item = f64>) -> Result<Theta> {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in diffs {
        sum += x * x;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InsufficientData { retained: 0 });
    }
    Ok(Theta { value: sum / n as f64, retained: n })
}

/// `Ĥ = (log θ̂(t1,t3) - log θ̂(t1,t2)) / (2 log 2)` clipped to `[H_MIN, H_MAX]`.
#[allow(non_snake_case)]
pub fn estimate_H(theta_13: f64, theta_12: f64) -> Result<f64> {
    Ok(raw_H(theta_13, theta_12)?.clamp(H_MIN, H_MAX))
}

/// The unclipped increment-ratio exponent.
#[allow(non_snake_case)]
pub fn raw_H(theta_13: f64, theta_12: f64) -> Result<f64> {
    if !(theta_13 > 0.0 && theta_12 > 0.0) {
        return Err(Error::DegenerateIncrement { theta_13, theta_12 });
    }
    Ok((theta_13.ln() - theta_12.ln()) / (2.0 * std::f64::consts::LN_2))
}

/// `L̂² = ½ (θ̂(t2,t3)/|t3-t2|^{2H} + θ̂(t1,t2)/|t2-t1|^{2H})`, `H = α̂ - δ̂`.
#[allow(non_snake_case)]
pub fn estimate_L2(theta_23: f64, theta_12: f64, t1: f64, t2: f64, t3: f64, alpha_hat: f64, delta_hat: usize) -> Result<f64> {
    if !(t1 < t2 && t2 < t3) {
        return Err(Error::InvalidArgument(format!("need t1 < t2 < t3, got {t1}, {t2}, {t3}")));
    }
    if !(theta_23 >= 0.0 && theta_12 >= 0.0) {
        return Err(Error::InvalidArgument("increments must be nonnegative".into()));
    }
    let e = 2.0 * (alpha_hat - delta_hat as f64);
    Ok(0.5 * (theta_23 / (t3 - t2).powf(e) + theta_12 / (t2 - t1).powf(e)))
}

/// Local regularity at one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityEstimate {
    /// Effective anchor (after any clamping away from the boundary).
    pub anchor_t2: f64,
    pub t1: f64,
    pub t3: f64,
    /// `Ĥ_d` for `d = 0..=delta_hat`.
    pub h_hat: Vec<f64>,
    pub delta_hat: usize,
    pub alpha_hat: f64,
    pub l2_hat: f64,
    /// `[θ̂(t1,t2), θ̂(t2,t3), θ̂(t1,t3)]` for each `d = 0..=delta_hat`.
    pub thetas: Vec<[f64; 3]>,
    /// Curves with defined presmoothed values at all three points, at `delta_hat`.
    pub retained: usize,
}

impl RegularityEstimate {
    /// Builds an estimate directly from its headline values, for callers
    /// that know the regularity.
    pub fn known(t2: f64, alpha: f64, l2: f64) -> Self {
        let delta_hat = alpha.ceil() as usize - 1;
        Self {
            anchor_t2: t2,
            t1: t2,
            t3: t2,
            h_hat: vec![alpha - delta_hat as f64],
            delta_hat,
            alpha_hat: alpha,
            l2_hat: l2,
            thetas: Vec::new(),
            retained: 0,
        }
    }

    /// `Ĥ` at the selected derivative order.
    #[allow(non_snake_case)]
    pub fn H(&self) -> f64 {
        self.h_hat[self.delta_hat]
    }

    pub fn theta_12(&self) -> f64 {
        self.thetas.get(self.delta_hat).map_or(f64::NAN, |t| t[0])
    }

    pub fn theta_13(&self) -> f64 {
        self.thetas.get(self.delta_hat).map_or(f64::NAN, |t| t[2])
    }
}

/// Selects `δ̂` as the first `d` with `Ĥ_d < 1 - φ` (capped at `delta_max`).
pub fn select_delta(h_hat: &[f64], phi: f64, delta_max: usize) -> usize {
    h_hat
        .iter()
        .take(delta_max + 1)
        .position(|&h| h < 1.0 - phi)
        .unwrap_or(delta_max.min(h_hat.len().saturating_sub(1)))
}

/// Estimates `α̂ = δ̂ + Ĥ_δ̂` and `L̂²` around `anchor_t2`.
pub fn estimate_regularity(dataset: &FunctionalDataset, anchor_t2: f64, schedule: &RegularitySchedule, kernel: Kernel) -> Result<RegularityEstimate> {
    let (t1, t2, t3) = schedule.anchor_points(anchor_t2);
    if !(t1 > 0.0 && t3 < 1.0) {
        return Err(Error::Configuration(format!("anchor interval [{t1}, {t3}] leaves (0, 1)")));
    }
    let mut h_hat = Vec::new();
    let mut thetas = Vec::new();
    let mut retained = 0;
    for d in 0..=schedule.delta_max {
        let mut sums = [0.0; 3];
        let mut n = 0usize;
        for c in dataset.curves() {
            let x1 = presmoothed_derivative(c, d, t1, schedule, kernel);
            let x2 = presmoothed_derivative(c, d, t2, schedule, kernel);
            let x3 = presmoothed_derivative(c, d, t3, schedule, kernel);
            if let (Some(x1), Some(x2), Some(x3)) = (x1, x2, x3) {
                sums[0] += (x2 - x1).powi(2);
                sums[1] += (x3 - x2).powi(2);
                sums[2] += (x3 - x1).powi(2);
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::InsufficientData { retained: 0 });
        }
        let th = sums.map(|s| s / n as f64);
        let h = estimate_H(th[2], th[0])?;
        h_hat.push(h);
        thetas.push(th);
        retained = n;
        if h < 1.0 - schedule.phi {
            break;
        }
    }
    let delta_hat = select_delta(&h_hat, schedule.phi, schedule.delta_max);
    let alpha_hat = delta_hat as f64 + h_hat[delta_hat];
    let th = thetas[delta_hat];
    let l2_hat = estimate_L2(th[1], th[0], t1, t2, t3, alpha_hat, delta_hat)?;
    Ok(RegularityEstimate { anchor_t2: t2, t1, t3, h_hat, delta_hat, alpha_hat, l2_hat, thetas, retained })
}

/// Regularity at every anchor of `anchors`, computed in parallel.
pub fn estimate_regularity_grid(
    dataset: &FunctionalDataset,
    anchors: &EvalGrid,
    schedule: &RegularitySchedule,
    kernel: Kernel,
) -> Result<Vec<RegularityEstimate>> {
    anchors
        .points()
        .par_iter()
        .map(|&t2| estimate_regularity(dataset, t2, schedule, kernel))
        .collect()
}

/// Default anchor grid: `n` points on [0.05, 0.95].
pub fn default_anchors(n: usize) -> Result<EvalGrid> {
    EvalGrid::uniform(0.05, 0.95, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// One variance from all successive differences of each curve.
    Constant,
    /// Per grid point, from the `K₀` observations nearest to it.
    #[default]
    TimeVarying,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimate {
    pub grid: Vec<f64>,
    pub sigma2_grid: Vec<f64>,
    pub sigma2_max: f64,
    /// Neighbourhood size `K₀` (0 in constant mode).
    pub k0: usize,
}

impl NoiseEstimate {
    /// A noise level known in advance.
    pub fn known(sigma2: f64) -> Self {
        Self { grid: vec![0.5], sigma2_grid: vec![sigma2], sigma2_max: sigma2, k0: 0 }
    }
}

/// `K₀ = ⌊m̂ exp(-(log log m̂)²)⌋`, at least 2.
pub fn noise_neighbourhood(m_hat: f64) -> Result<usize> {
    let ll = m_hat.ln().ln();
    if !ll.is_finite() {
        return Err(Error::Configuration(format!("m_hat = {m_hat} too small for the noise neighbourhood")));
    }
    let k = (m_hat * (-ll * ll).exp()).floor();
    Ok((k as usize).max(2))
}

/// `σ̂²(t) = N⁻¹ Σ_i (2|S_i|)⁻¹ Σ_{m ∈ S_i} (Y_m - Y_{m-1})²`.
pub fn estimate_noise(dataset: &FunctionalDataset, grid: &EvalGrid, mode: NoiseMode) -> Result<NoiseEstimate> {
    if let Some(c) = dataset.curves().iter().find(|c| c.len() < 2) {
        return Err(Error::InvalidArgument(format!(
            "noise estimation needs at least 2 observations per curve; curve {} has {}",
            c.curve_id(),
            c.len()
        )));
    }
    let n = dataset.n_curves() as f64;
    match mode {
        NoiseMode::Constant => {
            let total: f64 = dataset
                .curves()
                .iter()
                .map(|c| {
                    let y = c.values();
                    let ss: f64 = y.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
                    ss / (2.0 * (y.len() - 1) as f64)
                })
                .sum();
            let s2 = total / n;
            Ok(NoiseEstimate { grid: grid.points().to_vec(), sigma2_grid: vec![s2; grid.len()], sigma2_max: s2, k0: 0 })
        }
        NoiseMode::TimeVarying => {
            let k0 = noise_neighbourhood(dataset.m_hat())?;
            let sigma2_grid: Vec<f64> = grid
                .points()
                .iter()
                .map(|&t| {
                    let total: f64 = dataset.curves().iter().map(|c| local_diff_variance(c, t, k0)).sum();
                    total / n
                })
                .collect();
            let sigma2_max = sigma2_grid.iter().copied().fold(0.0, f64::max);
            Ok(NoiseEstimate { grid: grid.points().to_vec(), sigma2_grid, sigma2_max, k0 })
        }
    }
}

/// Half mean squared successive difference over the `k0` observations
/// (excluding the first) whose times are closest to `t`.
fn local_diff_variance(curve: &CurveObservations, t: f64, k0: usize) -> f64 {
    let times = curve.times();
    let y = curve.values();
    // Candidate indices are 1..len, so that Y_{m-1} exists.
    let cand = &times[1..];
    let k = k0.min(cand.len());
    let pos = cand.partition_point(|&x| x < t);
    let (mut lo, mut hi) = (pos, pos);
    while hi - lo < k {
        let take_left = if lo == 0 {
            false
        } else if hi == cand.len() {
            true
        } else {
            t - cand[lo - 1] <= cand[hi] - t
        };
        if take_left {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    let ss: f64 = (lo + 1..hi + 1).map(|m| (y[m] - y[m - 1]).powi(2)).sum();
    ss / (2.0 * k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CurveObservations;

    fn dataset(curves: Vec<(Vec<f64>, Vec<f64>)>) -> FunctionalDataset {
        FunctionalDataset::new(
            curves
                .into_iter()
                .enumerate()
                .map(|(i, (t, y))| CurveObservations::new(i as i64, t, y).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn grid_times(m: usize) -> Vec<f64> {
        (0..m).map(|k| (k as f64 + 0.5) / m as f64).collect()
    }

    #[test]
    fn h_rule_examples() {
        assert!((estimate_H(2.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((estimate_H(4.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(estimate_H(1.0, 1.0).unwrap(), H_MIN);
        assert!(matches!(estimate_H(0.0, 1.0), Err(Error::DegenerateIncrement { .. })));
        assert!((estimate_H(6.0, 3.0).unwrap() - estimate_H(2.0, 1.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn delta_rule_examples() {
        assert_eq!(select_delta(&[0.7], 0.05, 2), 0);
        assert_eq!(select_delta(&[0.99, 0.5], 0.05, 2), 1);
        assert_eq!(select_delta(&[0.99, 0.99, 0.99], 0.05, 2), 2);
        // A smaller φ raises the threshold 1 - φ and can only lower δ̂.
        assert_eq!(select_delta(&[0.97, 0.5], 0.01, 2), 0);
    }

    #[test]
    fn l2_examples() {
        let (t1, t2, t3) = (0.4, 0.45, 0.5);
        let g: f64 = 0.05;
        let h = 0.3;
        let v = g.powf(2.0 * h);
        assert!((estimate_L2(v, v, t1, t2, t3, h, 0).unwrap() - 1.0).abs() < 1e-12);
        assert!((estimate_L2(2.0 * v, v, t1, t2, t3, h, 0).unwrap() - 1.5).abs() < 1e-12);
        assert!((estimate_L2(v, v, t1, t2, t3, 1.0 + h, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_values() {
        let s = RegularitySchedule::new(300.0).unwrap();
        let lm = 300f64.ln();
        assert!((s.delta_star - 2.0 * (-lm.sqrt()).exp()).abs() < 1e-15);
        assert!((s.phi - lm.powi(-2)).abs() < 1e-15);
        assert!((s.presmooth_bandwidth - 2.0 / 300.0).abs() < 1e-15);
        let c = RegularitySchedule::with_params(300.0, 0.5, 2.0, 2, PresmoothRule::CubeRoot).unwrap();
        assert!((c.presmooth_bandwidth - (c.delta_star / 600.0).cbrt()).abs() < 1e-15);
        assert!(RegularitySchedule::new(1.0).is_err());
    }

    #[test]
    fn theta_of_constants_is_zero() {
        let t = grid_times(50);
        let ds = dataset(vec![(t.clone(), vec![1.0; 50]), (t, vec![-2.0; 50])]);
        let s = RegularitySchedule::new(50.0).unwrap();
        assert!(estimate_theta(&ds, 0, 0.3, 0.6, &s, Kernel::Epanechnikov).unwrap() < 1e-28);
    }

    #[test]
    fn theta_averages_squared_differences() {
        // Linear curves with slopes 1/3 and 1 give increments 0.1 and 0.3 over
        // [0.3, 0.6]; NW on symmetric equidistant windows reproduces lines.
        let t = grid_times(100);
        let y1: Vec<f64> = t.iter().map(|x| x / 3.0).collect();
        let y2 = t.clone();
        let ds = dataset(vec![(t.clone(), y1), (t, y2)]);
        let s = RegularitySchedule::new(100.0).unwrap();
        let th = estimate_theta(&ds, 0, 0.3, 0.6, &s, Kernel::Epanechnikov).unwrap();
        assert!((th - 0.05).abs() < 1e-12, "{th}");
    }

    #[test]
    fn theta_without_data_errors() {
        let ds = dataset(vec![(vec![0.1, 0.2], vec![0.0, 1.0])]);
        let s = RegularitySchedule::new(100.0).unwrap();
        assert!(matches!(
            estimate_theta(&ds, 0, 0.5, 0.8, &s, Kernel::Epanechnikov),
            Err(Error::InsufficientData { retained: 0 })
        ));
    }

    #[test]
    fn k0_for_thousand() {
        assert_eq!(noise_neighbourhood(1000.0).unwrap(), 23);
        assert!(noise_neighbourhood(1.0).is_err());
    }

    #[test]
    fn nearest_neighbourhood_diffs() {
        let t = grid_times(10);
        let y: Vec<f64> = (0..10).map(|k| if k % 2 == 0 { 0.0 } else { 1.0 }).collect();
        let c = CurveObservations::new(0, t, y).unwrap();
        // Every successive difference is ±1.
        assert!((local_diff_variance(&c, 0.5, 3) - 0.5).abs() < 1e-15);
        assert!((local_diff_variance(&c, 0.01, 4) - 0.5).abs() < 1e-15);
        assert!((local_diff_variance(&c, 0.99, 40) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn scale_equivariance_of_estimates() {
        let t = grid_times(200);
        let curves: Vec<(Vec<f64>, Vec<f64>)> = (0..20)
            .map(|i| {
                let y: Vec<f64> = t.iter().map(|x| ((i as f64 + 1.0) * 7.0 * x).sin() + (i as f64 * 0.37 * x).cos()).collect();
                (t.clone(), y)
            })
            .collect();
        let ds = dataset(curves);
        let scaled = ds.affine(3.0, 0.0);
        let s = RegularitySchedule::new(ds.m_hat()).unwrap();
        let a = estimate_regularity(&ds, 0.5, &s, Kernel::Epanechnikov).unwrap();
        let b = estimate_regularity(&scaled, 0.5, &s, Kernel::Epanechnikov).unwrap();
        assert_eq!(a.delta_hat, b.delta_hat);
        assert!((a.alpha_hat - b.alpha_hat).abs() < 1e-10);
        assert!((b.l2_hat / a.l2_hat - 9.0).abs() < 1e-9);
        for (x, y) in a.thetas.iter().zip(&b.thetas) {
            for k in 0..3 {
                assert!((y[k] / x[k] - 9.0).abs() < 1e-9);
            }
        }
    }
}
