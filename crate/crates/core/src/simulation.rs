//! Gaussian process simulation with known regularity.
//!
//! Supported processes are fractional Brownian motion, the fractional
//! Ornstein–Uhlenbeck covariance `exp(-a|s-t|^ρ)` and Karhunen–Loève
//! expansions with eigenvalues `j^{-ν}` on the trigonometric basis.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{CurveObservations, FunctionalDataset};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProcessKind {
    /// Fractional Brownian motion started at 0.
    Fbm { hurst: f64 },
    /// Stationary process with covariance `exp(-a|s-t|^rho)`.
    Fou { a: f64, rho: f64 },
    /// `Σ_j sqrt(j^{-nu}) Z_j φ_j(t)` over the first `n_terms` basis functions.
    KlPowerLaw { nu: f64, n_terms: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeanFn {
    #[default]
    Zero,
    /// `β₀ t + √2 Σ_k (cos_k cos(2kπt) + sin_k sin(2kπt))`.
    Fourier {
        beta0: f64,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
}

impl MeanFn {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            MeanFn::Zero => 0.0,
            MeanFn::Fourier { beta0, cos, sin } => {
                let mut v = beta0 * t;
                let n = cos.len().max(sin.len());
                for k in 1..=n {
                    let w = 2.0 * k as f64 * PI * t;
                    let c = cos.get(k - 1).copied().unwrap_or(0.0);
                    let s = sin.get(k - 1).copied().unwrap_or(0.0);
                    v += SQRT_2 * (c * w.cos() + s * w.sin());
                }
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    #[serde(flatten)]
    pub kind: ProcessKind,
    #[serde(default)]
    pub mean: MeanFn,
}

impl ProcessSpec {
    pub fn new(kind: ProcessKind) -> Result<Self> {
        let spec = Self { kind, mean: MeanFn::Zero };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_mean(mut self, mean: MeanFn) -> Self {
        self.mean = mean;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self.kind {
            ProcessKind::Fbm { hurst } if !(hurst > 0.0 && hurst < 1.0) => bad(format!("hurst must lie in (0, 1), got {hurst}")),
            ProcessKind::Fou { a, .. } if !(a > 0.0) => bad(format!("fOU scale a must be positive, got {a}")),
            ProcessKind::Fou { rho, .. } if !(rho > 0.0 && rho < 2.0) => bad(format!("fOU rho must lie in (0, 2), got {rho}")),
            ProcessKind::KlPowerLaw { nu, .. } if !(nu > 1.0) => bad(format!("KL exponent nu must exceed 1, got {nu}")),
            ProcessKind::KlPowerLaw { n_terms: 0, .. } => bad("KL expansion needs at least one term".into()),
            _ => Ok(()),
        }
    }

    /// Local regularity of the sample paths.
    pub fn true_alpha(&self) -> f64 {
        match self.kind {
            ProcessKind::Fbm { hurst } => hurst,
            ProcessKind::Fou { rho, .. } => rho / 2.0,
            ProcessKind::KlPowerLaw { nu, .. } => (nu - 1.0) / 2.0,
        }
    }

    pub fn true_mean(&self, t: f64) -> f64 {
        self.mean.eval(t)
    }

    pub fn true_covariance(&self, s: f64, t: f64) -> f64 {
        true_covariance(self, s, t)
    }
}

/// Exact covariance `Γ(s, t)` of the centered process.
pub fn true_covariance(spec: &ProcessSpec, s: f64, t: f64) -> f64 {
    match spec.kind {
        ProcessKind::Fbm { hurst } => {
            let e = 2.0 * hurst;
            0.5 * (s.abs().powf(e) + t.abs().powf(e) - (s - t).abs().powf(e))
        }
        ProcessKind::Fou { a, rho } => (-a * (s - t).abs().powf(rho)).exp(),
        ProcessKind::KlPowerLaw { nu, n_terms } => kl_covariance(nu, n_terms, s, t),
    }
}

/// `Σ_j j^{-ν} φ_j(s) φ_j(t)`. Pairs `(2k, 2k+1)` combine into
/// `(λ_{2k}+λ_{2k+1}) cos(2kπ(s-t)) + (λ_{2k}-λ_{2k+1}) cos(2kπ(s+t))`;
/// the cosines are advanced by the Chebyshev recurrence.
fn kl_covariance(nu: f64, n_terms: usize, s: f64, t: f64) -> f64 {
    let lambda = |j: usize| if j <= n_terms { (j as f64).powf(-nu) } else { 0.0 };
    let mut total = 1.0;
    let (cd, cs) = ((2.0 * PI * (s - t)).cos(), (2.0 * PI * (s + t)).cos());
    let (mut d_prev, mut d_cur) = (1.0, cd);
    let (mut s_prev, mut s_cur) = (1.0, cs);
    let mut k = 1;
    while 2 * k <= n_terms {
        let (l0, l1) = (lambda(2 * k), lambda(2 * k + 1));
        total += (l0 + l1) * d_cur + (l0 - l1) * s_cur;
        let d_next = 2.0 * cd * d_cur - d_prev;
        let s_next = 2.0 * cs * s_cur - s_prev;
        (d_prev, d_cur, s_prev, s_cur) = (d_cur, d_next, s_cur, s_next);
        k += 1;
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseSpec {
    #[default]
    None,
    Homoscedastic { sd: f64 },
    /// Standard deviation moving linearly from `sd0` at t = 0 to `sd1` at t = 1.
    TimeVarying { sd0: f64, sd1: f64 },
    /// `sd · (1 + tanh(scale · x) / 2)`: bounded in `[sd/2, 3sd/2]`.
    StateDependent { sd: f64, scale: f64 },
}

impl NoiseSpec {
    pub fn sd(&self, t: f64, x: f64) -> f64 {
        match *self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Homoscedastic { sd } => sd,
            NoiseSpec::TimeVarying { sd0, sd1 } => sd0 + (sd1 - sd0) * t,
            NoiseSpec::StateDependent { sd, scale } => sd * (1.0 + 0.5 * (scale * x).tanh()),
        }
    }

    /// Upper bound of the noise standard deviation.
    pub fn sd_max(&self) -> f64 {
        match *self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Homoscedastic { sd } => sd,
            NoiseSpec::TimeVarying { sd0, sd1 } => sd0.max(sd1),
            NoiseSpec::StateDependent { sd, .. } => 1.5 * sd,
        }
    }

    /// Same shape with every standard deviation multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        match *self {
            NoiseSpec::None => NoiseSpec::None,
            NoiseSpec::Homoscedastic { sd } => NoiseSpec::Homoscedastic { sd: k * sd },
            NoiseSpec::TimeVarying { sd0, sd1 } => NoiseSpec::TimeVarying { sd0: k * sd0, sd1: k * sd1 },
            NoiseSpec::StateDependent { sd, scale } => NoiseSpec::StateDependent { sd: k * sd, scale },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseSpec::None => true,
            NoiseSpec::Homoscedastic { sd } => sd >= 0.0 && sd.is_finite(),
            NoiseSpec::TimeVarying { sd0, sd1 } => sd0 >= 0.0 && sd1 >= 0.0 && sd0.is_finite() && sd1.is_finite(),
            NoiseSpec::StateDependent { sd, scale } => sd >= 0.0 && sd.is_finite() && scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid noise specification {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    /// Times i.i.d. Uniform(0, 1), sorted.
    IndependentUniform,
    /// Times `(k - 1/2)/m`, `k = 1..m`, shared by every curve.
    CommonEquidistant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub m: usize,
    /// Relative jitter of the per-curve count `M_i ~ U[(1-p)m, (1+p)m]`.
    #[serde(default)]
    pub p: f64,
}

impl DesignSpec {
    pub fn independent(m: usize, p: f64) -> Self {
        Self { kind: DesignKind::IndependentUniform, m, p }
    }

    pub fn common(m: usize) -> Self {
        Self { kind: DesignKind::CommonEquidistant, m, p: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidArgument(format!("need m >= 2 observations per curve, got {}", self.m)));
        }
        if !(self.p >= 0.0 && self.p < 1.0) {
            return Err(Error::InvalidArgument(format!("jitter p must lie in [0, 1), got {}", self.p)));
        }
        if self.kind == DesignKind::CommonEquidistant && self.p != 0.0 {
            return Err(Error::InvalidArgument("a common design cannot jitter the number of points".into()));
        }
        Ok(())
    }

    fn draw_times(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self.kind {
            DesignKind::CommonEquidistant => common_times(self.m),
            DesignKind::IndependentUniform => {
                let m = self.m as f64;
                let count = if self.p > 0.0 {
                    let lo = (1.0 - self.p) * m;
                    let hi = (1.0 + self.p) * m;
                    rng.random_range(lo..=hi).round() as usize
                } else {
                    self.m
                };
                let count = count.max(2);
                let mut times: Vec<f64> = Vec::with_capacity(count);
                while times.len() < count {
                    let t: f64 = rng.random();
                    if t > 0.0 {
                        times.push(t);
                    }
                }
                times.sort_by(f64::total_cmp);
                times.dedup();
                times
            }
        }
    }
}

fn common_times(m: usize) -> Vec<f64> {
    (0..m).map(|k| (k as f64 + 0.5) / m as f64).collect()
}

/// A simulated dataset together with the noiseless paths that produced it.
#[derive(Debug, Clone)]
pub struct SimulatedSample {
    pub dataset: FunctionalDataset,
    /// `X^{(i)}(T_m)` for each curve, aligned with the observation times.
    pub latent: Vec<Vec<f64>>,
    /// Extra points where the latent paths were also recorded.
    pub grid: Vec<f64>,
    /// `X^{(i)}` at `grid`, jointly drawn with the observed values.
    pub latent_grid: Vec<Vec<f64>>,
}

impl SimulatedSample {
    /// Writes `curve_id,t,x_true` rows.
    pub fn write_latent_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["curve_id", "t", "x_true"])?;
        for (c, x) in self.dataset.curves().iter().zip(&self.latent) {
            for (t, v) in c.times().iter().zip(x) {
                w.write_record(&[c.curve_id().to_string(), t.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws `n` noisy curves. Deterministic in `seed`, regardless of the number
/// of threads.
pub fn sample_dataset(spec: &ProcessSpec, design: &DesignSpec, noise: &NoiseSpec, n: usize, seed: u64) -> Result<SimulatedSample> {
    sample_dataset_with_grid(spec, design, noise, n, seed, &[])
}

/// Like [`sample_dataset`], additionally recording every latent path at
/// the points of `grid` (drawn jointly with the observations).
pub fn sample_dataset_with_grid(
    spec: &ProcessSpec,
    design: &DesignSpec,
    noise: &NoiseSpec,
    n: usize,
    seed: u64,
    grid: &[f64],
) -> Result<SimulatedSample> {
    spec.validate()?;
    design.validate()?;
    noise.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one curve".into()));
    }
    if grid.iter().any(|&g| !(g > 0.0 && g < 1.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("latent grid must be increasing inside (0, 1)".into()));
    }

    // A common design shares one factorization across curves.
    let shared = match design.kind {
        DesignKind::CommonEquidistant => {
            let (union, _, _) = merge_times(&common_times(design.m), grid);
            Some(PathSampler::new(spec, &union, DesignKind::CommonEquidistant).map_err(|msg| Error::Generation { curve: 0, msg })?)
        }
        DesignKind::IndependentUniform => None,
    };

    let curves: Vec<(CurveObservations, Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let times = design.draw_times(&mut rng);
            let (union, obs_idx, grid_idx) = merge_times(&times, grid);
            let local;
            let sampler = match &shared {
                Some(s) => s,
                None => {
                    local = PathSampler::new(spec, &union, design.kind).map_err(|msg| Error::Generation { curve: i, msg })?;
                    &local
                }
            };
            let path = sampler.draw(&mut rng);
            let with_mean = |k: usize| path[k] + spec.true_mean(union[k]);
            let latent: Vec<f64> = obs_idx.iter().map(|&k| with_mean(k)).collect();
            let latent_grid: Vec<f64> = grid_idx.iter().map(|&k| with_mean(k)).collect();
            let values: Vec<f64> = times
                .iter()
                .zip(&latent)
                .map(|(&t, &x)| {
                    let e: f64 = rng.sample(StandardNormal);
                    x + noise.sd(t, x) * e
                })
                .collect();
            let curve = CurveObservations::new(i as i64, times, values).map_err(|e| Error::Generation { curve: i, msg: e.to_string() })?;
            Ok((curve, latent, latent_grid))
        })
        .collect::<Result<_>>()?;

    let mut obs = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    let mut latent_grid = Vec::with_capacity(n);
    for (c, l, g) in curves {
        obs.push(c);
        latent.push(l);
        latent_grid.push(g);
    }
    Ok(SimulatedSample { dataset: FunctionalDataset::new(obs)?, latent, grid: grid.to_vec(), latent_grid })
}

/// Sorted union of two increasing sequences, with the positions of each
/// input in the union.
fn merge_times(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<usize>, Vec<usize>) {
    let mut union = Vec::with_capacity(a.len() + b.len());
    let mut ia = Vec::with_capacity(a.len());
    let mut ib = Vec::with_capacity(b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let k = union.len();
        union.push(next);
        if a.get(i) == Some(&next) {
            ia.push(k);
            i += 1;
        }
        if b.get(j) == Some(&next) {
            ib.push(k);
            j += 1;
        }
    }
    (union, ia, ib)
}

/// Draws centered paths at a fixed increasing set of times.
enum PathSampler {
    /// Brownian motion: independent Gaussian increments.
    Brownian { times: Vec<f64> },
    /// Ornstein–Uhlenbeck (`ρ = 1`): exact AR(1) recursion.
    OrnsteinUhlenbeck { times: Vec<f64>, a: f64 },
    /// Truncated Karhunen–Loève sum evaluated term by term.
    Expansion { times: Vec<f64>, nu: f64, n_terms: usize },
    /// `x = F z` with `F Fᵀ = Σ`.
    Factor(DMatrix<f64>),
}

impl PathSampler {
    fn new(spec: &ProcessSpec, times: &[f64], design: DesignKind) -> std::result::Result<Self, String> {
        let times_v = times.to_vec();
        match spec.kind {
            ProcessKind::Fbm { hurst: 0.5 } => return Ok(PathSampler::Brownian { times: times_v }),
            ProcessKind::Fou { a, rho: 1.0 } => return Ok(PathSampler::OrnsteinUhlenbeck { times: times_v, a }),
            ProcessKind::KlPowerLaw { nu, n_terms } if design == DesignKind::IndependentUniform || n_terms <= times.len() => {
                return Ok(PathSampler::Expansion { times: times_v, nu, n_terms });
            }
            _ => {}
        }
        let m = times.len();
        let mut cov = DMatrix::<f64>::zeros(m, m);
        for r in 0..m {
            for c in 0..=r {
                let v = true_covariance(spec, times[r], times[c]);
                cov[(r, c)] = v;
                cov[(c, r)] = v;
            }
        }
        factorize(cov).map(PathSampler::Factor)
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            PathSampler::Brownian { times } => {
                let mut x = 0.0;
                let mut prev = 0.0;
                times
                    .iter()
                    .map(|&t| {
                        let z: f64 = rng.sample(StandardNormal);
                        x += (t - prev).sqrt() * z;
                        prev = t;
                        x
                    })
                    .collect()
            }
            PathSampler::OrnsteinUhlenbeck { times, a } => {
                let mut out = Vec::with_capacity(times.len());
                let mut x: f64 = 0.0;
                for (k, &t) in times.iter().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    x = if k == 0 {
                        z
                    } else {
                        let r = (-a * (t - times[k - 1])).exp();
                        r * x + (1.0 - r * r).max(0.0).sqrt() * z
                    };
                    out.push(x);
                }
                out
            }
            PathSampler::Expansion { times, nu, n_terms } => {
                let coef: Vec<f64> = (1..=*n_terms)
                    .map(|j| {
                        let z: f64 = rng.sample(StandardNormal);
                        (j as f64).powf(-nu / 2.0) * z
                    })
                    .collect();
                times.iter().map(|&t| kl_path_value(&coef, t)).collect()
            }
            PathSampler::Factor(f) => {
                let z: Vec<f64> = (0..f.ncols()).map(|_| rng.sample(StandardNormal)).collect();
                let z = nalgebra::DVector::from_vec(z);
                (f * z).iter().copied().collect()
            }
        }
    }
}

/// `Σ_j coef_j φ_j(t)`, with the harmonics advanced by complex rotation.
fn kl_path_value(coef: &[f64], t: f64) -> f64 {
    let mut v = coef[0];
    let (sw, cw) = (2.0 * PI * t).sin_cos();
    let (mut c, mut s) = (1.0, 0.0);
    let mut j = 1;
    while j < coef.len() {
        (c, s) = (c * cw - s * sw, s * cw + c * sw);
        v += SQRT_2 * coef[j] * c;
        if j + 1 < coef.len() {
            v += SQRT_2 * coef[j + 1] * s;
        }
        j += 2;
    }
    v
}

/// Cholesky factor, or a symmetric square root with tiny negative
/// eigenvalues clipped to zero when the matrix is numerically indefinite.
fn factorize(cov: DMatrix<f64>) -> std::result::Result<DMatrix<f64>, String> {
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = cov.symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let floor = -1e-10 * lmax.max(1.0);
    let mut scale = Vec::with_capacity(eig.eigenvalues.len());
    for &l in eig.eigenvalues.iter() {
        if l < floor {
            return Err(format!("covariance matrix has eigenvalue {l:e} below the clipping floor"));
        }
        scale.push(l.max(0.0).sqrt());
    }
    let mut f = eig.eigenvectors;
    for (c, s) in scale.iter().enumerate() {
        f.column_mut(c).scale_mut(*s);
    }
    Ok(f)
}
