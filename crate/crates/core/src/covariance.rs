//! Adaptive covariance estimation.
//!
//! Off the diagonal band `|s - t| <= 𝔡`, the second moment `E(X_s X_t)` is
//! estimated by averaging products of smoothed curve values over curves that
//! qualify at both points, with a bandwidth minimizing a two-sided risk.
//! Inside the band, each point takes the value of the nearest band-boundary
//! point along its anti-diagonal.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kernel::kernel_abs_moment;
use crate::mean::{argmin, curve_summaries, factorial, moments, smoothing_order, BandwidthGrid, InclusionStats, MeanEstimate, RiskTerms, SmoothingOptions};
use crate::model::{nearest_index, EvalGrid, FunctionalDataset};
use crate::quadrature::gauss_legendre;
use crate::regularity::{presmoothed_values, NoiseEstimate, RegularityEstimate, RegularitySchedule};
use crate::{Error, Result};

/// Pairwise inclusion quantities at `(s, t, h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInclusionStats {
    pub s: f64,
    pub t: f64,
    pub h: f64,
    /// `w_i(s,t;h) = w_i(s;h) w_i(t;h)`.
    pub w_pair: Vec<bool>,
    pub w_n_pair: usize,
    /// `𝒩_Γ(t|s;h)`, 0 when no curve qualifies.
    pub n_gamma_t_given_s: f64,
    pub n_gamma_s_given_t: f64,
    /// `𝔆̄₁(t|s;h,α)`, 0 when no curve qualifies.
    pub c_frak_t_given_s: f64,
    pub c_frak_s_given_t: f64,
}

impl PairInclusionStats {
    /// Combines the single-point statistics at `s` and `t` (same `h`); the
    /// exponents of `c_i(·, α)` are those of the inputs.
    pub fn new(at_s: &InclusionStats, at_t: &InclusionStats) -> Result<Self> {
        if at_s.n != at_t.n || at_s.h != at_t.h {
            return Err(Error::InvalidArgument("pair statistics need the same curves and bandwidth".into()));
        }
        let w_pair: Vec<bool> = at_s.w.iter().zip(&at_t.w).map(|(a, b)| *a && *b).collect();
        let w_n_pair = w_pair.iter().filter(|&&w| w).count();
        let side = |st: &InclusionStats| -> (f64, f64) {
            if w_n_pair == 0 {
                return (0.0, 0.0);
            }
            let (mut inv, mut cc) = (0.0, 0.0);
            for i in (0..st.n).filter(|&i| w_pair[i]) {
                inv += st.c[i] * st.max_abs[i];
                cc += st.c[i] * st.c_alpha[i];
            }
            let w = w_n_pair as f64;
            (w * w / inv, cc / w)
        };
        let (n_t, c_t) = side(at_t);
        let (n_s, c_s) = side(at_s);
        Ok(Self {
            s: at_s.t,
            t: at_t.t,
            h: at_s.h,
            w_pair,
            w_n_pair,
            n_gamma_t_given_s: n_t,
            n_gamma_s_given_t: n_s,
            c_frak_t_given_s: c_t,
            c_frak_s_given_t: c_s,
        })
    }
}

/// The two conditional risks and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovRiskTerms {
    pub t_given_s: RiskTerms,
    pub s_given_t: RiskTerms,
    pub total: f64,
}

impl CovRiskTerms {
    pub const INFINITE: CovRiskTerms = CovRiskTerms { t_given_s: RiskTerms::INFINITE, s_given_t: RiskTerms::INFINITE, total: f64::INFINITY };
}

/// Moment plug-ins entering the covariance risk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMoments {
    /// `E(X_s²)`.
    pub m2_s: f64,
    /// `E(X_t²)`.
    pub m2_t: f64,
    /// `Var(X_s X_t)`.
    pub var_prod: f64,
}

/// `ℛ_Γ(t|s;h) + ℛ_Γ(s|t;h)`, each `𝔮₁² h^{2α̂} + 𝔮₂²/𝒩_Γ + 𝔮₃²(1/𝒲_N(s,t) - 1/N)`
/// with `𝔮₁² = 2 E(X_s²) 𝔆̄₁(t|s) L̂_t² / δ̂_t!²`, `𝔮₂² = σ²_max E(X_s²)` and
/// `𝔮₃² = Var(X_s X_t)/2`. Infinite when no curve qualifies or when
/// `h >= |s - t|/2`.
pub fn covariance_risk(
    pair: &PairInclusionStats,
    reg_s: &RegularityEstimate,
    reg_t: &RegularityEstimate,
    noise: &NoiseEstimate,
    mom: &PairMoments,
    n: usize,
) -> CovRiskTerms {
    covariance_risk_with(pair, pair.c_frak_t_given_s, pair.c_frak_s_given_t, reg_s, reg_t, noise.sigma2_max, mom, n)
}

#[allow(clippy::too_many_arguments)]
fn covariance_risk_with(
    pair: &PairInclusionStats,
    c_t: f64,
    c_s: f64,
    reg_s: &RegularityEstimate,
    reg_t: &RegularityEstimate,
    sigma2_max: f64,
    mom: &PairMoments,
    n: usize,
) -> CovRiskTerms {
    if pair.w_n_pair == 0 || pair.h >= (pair.s - pair.t).abs() / 2.0 {
        return CovRiskTerms::INFINITE;
    }
    let dropout = mom.var_prod / 2.0 * (1.0 / pair.w_n_pair as f64 - 1.0 / n as f64);
    let one_side = |c: f64, reg: &RegularityEstimate, m2_other: f64, n_gamma: f64| {
        let fact = factorial(reg.delta_hat);
        let bias = 2.0 * m2_other * c * reg.l2_hat / (fact * fact) * pair.h.powf(2.0 * reg.alpha_hat);
        let var = sigma2_max * m2_other / n_gamma;
        RiskTerms { bias, var, dropout, total: bias + var + dropout }
    };
    let t_given_s = one_side(c_t, reg_t, mom.m2_s, pair.n_gamma_t_given_s);
    let s_given_t = one_side(c_s, reg_s, mom.m2_t, pair.n_gamma_s_given_t);
    CovRiskTerms { t_given_s, s_given_t, total: t_given_s.total + s_given_t.total }
}

/// Width `𝔡` of the diagonal band and its exponent `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandWidth {
    pub d: f64,
    pub c: f64,
}

/// `𝔡 = (N⁻² Σ 1/M_i)^c` with `c = (2α̂ + 1/2)/(2α̂ + 1)²`.
pub fn diagonal_band_width(dataset: &FunctionalDataset, alpha_hat: f64) -> Result<BandWidth> {
    if !(alpha_hat > 0.0) {
        return Err(Error::InvalidArgument(format!("regularity must be positive, got {alpha_hat}")));
    }
    let n = dataset.n_curves() as f64;
    let base = dataset.curves().iter().map(|c| 1.0 / c.len() as f64).sum::<f64>() / (n * n);
    let a2 = 2.0 * alpha_hat;
    let c = (a2 + 0.5) / ((a2 + 1.0) * (a2 + 1.0));
    debug_assert!(a2 / ((a2 + 1.0) * (a2 + 1.0)) < c && c < 1.0 / (a2 + 1.0));
    Ok(BandWidth { d: base.powf(c), c })
}

/// `∬_{t-𝔡 <= s <= t} {Γ(u - 𝔡/2, u + 𝔡/2) - Γ(s, t)}² ds dt` over the unit
/// square, `u = (s + t)/2` clamped to `[𝔡/2, 1 - 𝔡/2]`.
pub fn diagonal_fill_error<F: Fn(f64, f64) -> f64 + Sync>(cov: F, d: f64) -> f64 {
    band_integral(d, |s, t, a, b| (cov(a, b) - cov(s, t)).powi(2))
}

/// Expected single-path analogue of [`diagonal_fill_error`] for a centered
/// Gaussian process: the covariance is replaced by the product `X_s X_t`
/// and the squared difference is averaged with Isserlis' theorem.
pub fn expected_path_fill_error<F: Fn(f64, f64) -> f64 + Sync>(cov: F, d: f64) -> f64 {
    band_integral(d, |s, t, a, b| {
        let (aa, bb, ab) = (cov(a, a), cov(b, b), cov(a, b));
        let (ss, tt, st) = (cov(s, s), cov(t, t), cov(s, t));
        let (as_, bt, at, bs) = (cov(a, s), cov(b, t), cov(a, t), cov(b, s));
        aa * bb + 2.0 * ab * ab + ss * tt + 2.0 * st * st - 2.0 * ab * st - 2.0 * as_ * bt - 2.0 * at * bs
    })
}

/// Integrates `f(s, t, a, b)` over the band with `(a, b)` the boundary point,
/// in coordinates `v = t - s ∈ [0, 𝔡]`, `u = (s+t)/2 ∈ [v/2, 1 - v/2]`.
fn band_integral<F: Fn(f64, f64, f64, f64) -> f64 + Sync>(d: f64, f: F) -> f64 {
    if !(d > 0.0 && d < 1.0) {
        return 0.0;
    }
    let lo = d / 2.0;
    let hi = 1.0 - d / 2.0;
    let inner = |v: f64| {
        let g = |u: f64| {
            let uc = u.clamp(lo, hi);
            f(u - v / 2.0, u + v / 2.0, uc - d / 2.0, uc + d / 2.0)
        };
        // Split at the clamping kinks.
        gauss_legendre(&g, v / 2.0, lo, 8) + gauss_legendre(&g, lo, hi, 64) + gauss_legendre(&g, hi, 1.0 - v / 2.0, 8)
    };
    let panels = 32;
    let width = d / panels as f64;
    (0..panels)
        .into_par_iter()
        .map(|p| gauss_legendre(&inner, p as f64 * width, (p + 1) as f64 * width, 1))
        .sum()
}

/// Settings of the covariance estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct CovarianceOptions {
    #[serde(flatten)]
    pub smoothing: SmoothingOptions,
    /// Treat the mean as zero so that `Γ̂ = γ̂`.
    pub assume_zero_mean: bool,
    /// Clip negative eigenvalues of the assembled surface.
    pub psd_projection: bool,
}

impl Default for CovarianceOptions {
    fn default() -> Self {
        Self {
            smoothing: SmoothingOptions { bandwidths: Some(BandwidthGrid::default_covariance()), ..SmoothingOptions::default() },
            assume_zero_mean: false,
            psd_projection: false,
        }
    }
}

/// Estimated covariance on a square grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSurface {
    pub grid: Vec<f64>,
    /// `Γ̂*(s, t)`; NaN where undefined.
    pub values: Vec<Vec<f64>>,
    /// `γ̂(s, t)`; NaN where undefined.
    pub gamma_values: Vec<Vec<f64>>,
    pub h_star: Vec<Vec<f64>>,
    pub w_n_pair: Vec<Vec<usize>>,
    pub in_band: Vec<Vec<bool>>,
    pub undefined_mask: Vec<Vec<bool>>,
    pub band: BandWidth,
    /// Anchor positions of the bandwidth lattice.
    pub lattice: Vec<f64>,
    /// Selected bandwidths on the lattice after filling gaps.
    pub lattice_h: Vec<Vec<f64>>,
}

/// One off-band evaluation.
#[derive(Debug, Clone, Copy)]
struct PairValue {
    gamma: f64,
    cov: f64,
    h: f64,
    w_n: usize,
}

/// Moment plug-ins from presmoothed values over curves defined at both points.
pub fn pair_moments(xs: &[Option<f64>], xt: &[Option<f64>]) -> PairMoments {
    let both: Vec<(f64, f64)> = xs.iter().zip(xt).filter_map(|(a, b)| Some(((*a)?, (*b)?))).collect();
    let m2 = |v: &mut dyn Iterator<Item = f64>| moments(v).map_or(0.0, |m| m.2);
    PairMoments {
        m2_s: m2(&mut both.iter().map(|p| p.0)),
        m2_t: m2(&mut both.iter().map(|p| p.1)),
        var_prod: moments(both.iter().map(|p| p.0 * p.1)).map_or(0.0, |m| m.1),
    }
}

/// Full risk profile for one off-band pair.
#[allow(clippy::too_many_arguments)]
pub fn select_covariance_bandwidth(
    dataset: &FunctionalDataset,
    s: f64,
    t: f64,
    reg_s: &RegularityEstimate,
    reg_t: &RegularityEstimate,
    noise: &NoiseEstimate,
    mom: &PairMoments,
    opts: &SmoothingOptions,
) -> Result<Option<(f64, CovRiskTerms)>> {
    let grid = opts.bandwidths.unwrap_or(BandwidthGrid::default_covariance());
    let (os, ot) = (smoothing_order(reg_s), smoothing_order(reg_t));
    let (as2, at2) = (2.0 * reg_s.alpha_hat, 2.0 * reg_t.alpha_hat);
    let (ks, kt) = (opts.k0.max(os + 1), opts.k0.max(ot + 1));
    let moments_override = if opts.kernel_moment {
        Some((kernel_abs_moment(opts.kernel, at2)?, kernel_abs_moment(opts.kernel, as2)?))
    } else {
        None
    };
    let n = dataset.n_curves();
    let hs = grid.values();
    let mut risks = Vec::with_capacity(hs.len());
    for &h in &hs {
        if h >= (s - t).abs() / 2.0 {
            risks.push(CovRiskTerms::INFINITE);
            continue;
        }
        let st_s = InclusionStats::from_summaries(s, h, as2, &curve_summaries(dataset, s, h, os, opts.kernel, ks, as2));
        let st_t = InclusionStats::from_summaries(t, h, at2, &curve_summaries(dataset, t, h, ot, opts.kernel, kt, at2));
        let pair = PairInclusionStats::new(&st_s, &st_t)?;
        let (c_t, c_s) = moments_override.unwrap_or((pair.c_frak_t_given_s, pair.c_frak_s_given_t));
        risks.push(covariance_risk_with(&pair, c_t, c_s, reg_s, reg_t, noise.sigma2_max, mom, n));
    }
    let totals: Vec<RiskTerms> = risks.iter().map(|r| RiskTerms { bias: 0.0, var: 0.0, dropout: 0.0, total: r.total }).collect();
    Ok(argmin(&totals).map(|k| (hs[k], risks[k])))
}

/// Covariance surface on `grid`.
///
/// Bandwidths are optimized at off-band pairs of the regularity anchors,
/// gaps on that lattice (diagonal, in-band or inadmissible pairs) take the
/// nearest available value, and the lattice is bilinearly interpolated to
/// every evaluated pair. The band width uses the average anchor regularity.
pub fn estimate_covariance(
    dataset: &FunctionalDataset,
    grid: &EvalGrid,
    regs: &[RegularityEstimate],
    noise: &NoiseEstimate,
    schedule: &RegularitySchedule,
    mean: Option<&MeanEstimate>,
    opts: &CovarianceOptions,
) -> Result<CovarianceSurface> {
    if dataset.n_curves() < 2 {
        return Err(Error::InvalidArgument("covariance estimation needs at least 2 curves".into()));
    }
    if regs.is_empty() {
        return Err(Error::InvalidArgument("need at least one regularity anchor".into()));
    }
    if mean.is_none() && !opts.assume_zero_mean {
        return Err(Error::InvalidArgument("a mean estimate is required unless the mean is assumed zero".into()));
    }
    let sm = &opts.smoothing;
    let alpha_bar = regs.iter().map(|r| r.alpha_hat).sum::<f64>() / regs.len() as f64;
    let band = diagonal_band_width(dataset, alpha_bar)?;
    let (glo, ghi) = (grid.lo(), grid.hi());
    if band.d >= ghi - glo {
        return Err(Error::Surface(format!("band width {} covers the whole grid", band.d)));
    }

    // Bandwidth lattice on the anchors (deduplicated after clamping).
    let mut lat_idx: Vec<usize> = Vec::new();
    for (k, r) in regs.iter().enumerate() {
        if lat_idx.last().is_none_or(|&j| r.anchor_t2 > regs[j].anchor_t2) {
            lat_idx.push(k);
        }
    }
    let lattice: Vec<f64> = lat_idx.iter().map(|&k| regs[k].anchor_t2).collect();
    let presmoothed: Vec<Vec<Option<f64>>> =
        lattice.iter().map(|&a| presmoothed_values(dataset, a, schedule, sm.presmooth_kernel)).collect();
    let l = lattice.len();
    let pairs: Vec<(usize, usize)> = (0..l).flat_map(|j| (j + 1..l).map(move |k| (j, k))).collect();
    let found: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|&(j, k)| {
            let (s, t) = (lattice[j], lattice[k]);
            if (t - s).abs() <= band.d {
                return Ok(None);
            }
            let mom = pair_moments(&presmoothed[j], &presmoothed[k]);
            Ok(select_covariance_bandwidth(dataset, s, t, &regs[lat_idx[j]], &regs[lat_idx[k]], noise, &mom, sm)?.map(|(h, _)| h))
        })
        .collect::<Result<_>>()?;
    let mut raw = vec![vec![None; l]; l];
    for (&(j, k), h) in pairs.iter().zip(found) {
        raw[j][k] = h;
        raw[k][j] = h;
    }
    let lattice_h = fill_lattice(&raw).ok_or_else(|| Error::Surface("no admissible bandwidth on the anchor lattice".into()))?;

    let anchor_t: Vec<f64> = regs.iter().map(|r| r.anchor_t2).collect();
    let ctx = PairContext { dataset, regs, anchor_t: &anchor_t, lattice: &lattice, lattice_h: &lattice_h, mean, opts };

    let pts = grid.points();
    let n = pts.len();
    // Boundary evaluations are shared along anti-diagonals.
    let half = band.d / 2.0;
    let boundary_u = |j: usize, k: usize| -> f64 {
        let u = if grid.is_uniform() {
            glo + (j + k) as f64 * (ghi - glo) / (2 * (n - 1)) as f64
        } else {
            (pts[j] + pts[k]) / 2.0
        };
        u.clamp(glo + half, ghi - half)
    };
    let mut band_keys: Vec<(usize, usize)> = Vec::new();
    let mut key_of: HashMap<u64, usize> = HashMap::new();
    for j in 0..n {
        for k in j..n {
            if pts[k] - pts[j] <= band.d {
                let u = boundary_u(j, k);
                key_of.entry(u.to_bits()).or_insert_with(|| {
                    band_keys.push((j, k));
                    band_keys.len() - 1
                });
            }
        }
    }
    let band_vals: Vec<Option<PairValue>> = band_keys
        .par_iter()
        .map(|&(j, k)| {
            let u = boundary_u(j, k);
            ctx.evaluate(u - half, u + half)
        })
        .collect::<Result<_>>()?;

    let rows: Vec<Vec<(Option<PairValue>, bool)>> = (0..n)
        .into_par_iter()
        .map(|j| {
            (j..n)
                .map(|k| {
                    if pts[k] - pts[j] <= band.d {
                        let key = key_of[&boundary_u(j, k).to_bits()];
                        Ok((band_vals[key], true))
                    } else {
                        Ok((ctx.evaluate(pts[j], pts[k])?, false))
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let nan = f64::NAN;
    let mut surf = CovarianceSurface {
        grid: pts.to_vec(),
        values: vec![vec![nan; n]; n],
        gamma_values: vec![vec![nan; n]; n],
        h_star: vec![vec![nan; n]; n],
        w_n_pair: vec![vec![0; n]; n],
        in_band: vec![vec![false; n]; n],
        undefined_mask: vec![vec![true; n]; n],
        band,
        lattice,
        lattice_h,
    };
    for (j, row) in rows.into_iter().enumerate() {
        for (off, (val, in_band)) in row.into_iter().enumerate() {
            let k = j + off;
            for (a, b) in [(j, k), (k, j)] {
                surf.in_band[a][b] = in_band;
                if let Some(v) = val {
                    surf.values[a][b] = v.cov;
                    surf.gamma_values[a][b] = v.gamma;
                    surf.h_star[a][b] = v.h;
                    surf.w_n_pair[a][b] = v.w_n;
                    surf.undefined_mask[a][b] = false;
                }
            }
        }
    }
    if let Some(j) = surf.undefined_mask.iter().position(|r| r.iter().all(|&u| u)) {
        return Err(Error::Surface(format!("no defined value in row t = {}", pts[j])));
    }
    if opts.psd_projection {
        project_psd(&mut surf.values);
    }
    Ok(surf)
}

struct PairContext<'a> {
    dataset: &'a FunctionalDataset,
    regs: &'a [RegularityEstimate],
    anchor_t: &'a [f64],
    lattice: &'a [f64],
    lattice_h: &'a [Vec<f64>],
    mean: Option<&'a MeanEstimate>,
    opts: &'a CovarianceOptions,
}

impl PairContext<'_> {
    /// `γ̂(s,t;h)` and `Γ̂` at the interpolated bandwidth; `None` when no
    /// curve qualifies at both points or the mean is undefined.
    fn evaluate(&self, s: f64, t: f64) -> Result<Option<PairValue>> {
        let sm = &self.opts.smoothing;
        let h = bilinear(self.lattice, self.lattice_h, s, t);
        let reg_s = &self.regs[nearest_index(self.anchor_t, s)];
        let reg_t = &self.regs[nearest_index(self.anchor_t, t)];
        let (os, ot) = (smoothing_order(reg_s), smoothing_order(reg_t));
        let xs = curve_summaries(self.dataset, s, h, os, sm.kernel, sm.k0.max(os + 1), 0.0);
        let xt = curve_summaries(self.dataset, t, h, ot, sm.kernel, sm.k0.max(ot + 1), 0.0);
        let (mut sum, mut w_n) = (0.0, 0usize);
        for (a, b) in xs.iter().zip(&xt) {
            if let (Some(a), Some(b)) = (a, b) {
                sum += a.estimate * b.estimate;
                w_n += 1;
            }
        }
        if w_n == 0 {
            return Ok(None);
        }
        let gamma = sum / w_n as f64;
        let cov = if self.opts.assume_zero_mean {
            gamma
        } else {
            let m = self.mean.expect("checked by caller");
            match (m.interpolate(s), m.interpolate(t)) {
                (Some(ms), Some(mt)) => gamma - ms * mt,
                _ => return Ok(None),
            }
        };
        Ok(Some(PairValue { gamma, cov, h, w_n }))
    }
}

/// Replaces each missing lattice entry by the nearest present one (in index
/// distance; ties go to the first in row-major order).
fn fill_lattice(raw: &[Vec<Option<f64>>]) -> Option<Vec<Vec<f64>>> {
    let l = raw.len();
    let present: Vec<(usize, usize, f64)> =
        (0..l).flat_map(|j| (0..l).filter_map(move |k| raw[j][k].map(|h| (j, k, h)))).collect();
    if present.is_empty() {
        return None;
    }
    Some(
        (0..l)
            .map(|j| {
                (0..l)
                    .map(|k| {
                        raw[j][k].unwrap_or_else(|| {
                            let dist = |&(a, b, _): &(usize, usize, f64)| {
                                let (da, db) = (a as i64 - j as i64, b as i64 - k as i64);
                                da * da + db * db
                            };
                            present.iter().min_by_key(|p| dist(p)).map(|p| p.2).unwrap()
                        })
                    })
                    .collect()
            })
            .collect(),
    )
}

/// Bilinear interpolation on a square lattice, clamped at the edges.
fn bilinear(xs: &[f64], z: &[Vec<f64>], s: f64, t: f64) -> f64 {
    if xs.len() == 1 {
        return z[0][0];
    }
    let locate = |x: f64| -> (usize, f64) {
        let x = x.clamp(xs[0], xs[xs.len() - 1]);
        let k = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
        (k - 1, (x - xs[k - 1]) / (xs[k] - xs[k - 1]))
    };
    let (j, a) = locate(s);
    let (k, b) = locate(t);
    z[j][k] * (1.0 - a) * (1.0 - b) + z[j + 1][k] * a * (1.0 - b) + z[j][k + 1] * (1.0 - a) * b + z[j + 1][k + 1] * a * b
}

/// Sets negative eigenvalues of the (symmetric, fully defined) matrix to zero.
fn project_psd(values: &mut [Vec<f64>]) {
    let n = values.len();
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return;
    }
    let m = DMatrix::from_fn(n, n, |r, c| values[r][c]);
    let eig = m.symmetric_eigen();
    let lam = eig.eigenvalues.map(|l| l.max(0.0));
    let back = &eig.eigenvectors * DMatrix::from_diagonal(&lam) * eig.eigenvectors.transpose();
    for r in 0..n {
        for c in r..n {
            let v = 0.5 * (back[(r, c)] + back[(c, r)]);
            values[r][c] = v;
            values[c][r] = v;
        }
    }
}
