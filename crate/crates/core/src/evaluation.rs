//! Integrated squared errors and the replication experiment runner.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::EvalGrid;
use crate::pipeline::PipelineOptions;
use crate::simulation::{sample_dataset_with_grid, DesignKind, DesignSpec, NoiseSpec, ProcessSpec};
use crate::{Error, Result};

/// Trapezoidal `∫ (f - g)²` over the span of `grid`. NaN entries are
/// undefined: segments touching them are skipped and the integral is
/// rescaled to the full span.
pub fn ise_1d(f: &[f64], g: &[f64], grid: &[f64]) -> Result<f64> {
    if f.len() != grid.len() || g.len() != grid.len() {
        return Err(Error::Evaluation(format!("length mismatch: {} / {} values on {} points", f.len(), g.len(), grid.len())));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Evaluation("grid must be strictly increasing".into()));
    }
    let d: Vec<f64> = f.iter().zip(g).map(|(a, b)| (a - b).powi(2)).collect();
    let (mut total, mut covered) = (0.0, 0.0);
    for k in 1..grid.len() {
        if d[k - 1].is_finite() && d[k].is_finite() {
            let w = grid[k] - grid[k - 1];
            total += 0.5 * w * (d[k - 1] + d[k]);
            covered += w;
        }
    }
    if covered == 0.0 {
        return Err(Error::Evaluation("fewer than 2 adjacent defined points".into()));
    }
    Ok(total * (grid[grid.len() - 1] - grid[0]) / covered)
}

/// Two-dimensional analogue of [`ise_1d`] on the square `grid × grid`:
/// each cell contributes its area times the mean of its four corners.
pub fn ise_2d(f: &[Vec<f64>], g: &[Vec<f64>], grid: &[f64]) -> Result<f64> {
    let n = grid.len();
    if f.len() != n || g.len() != n || f.iter().chain(g).any(|r| r.len() != n) {
        return Err(Error::Evaluation("surface shape does not match the grid".into()));
    }
    let d: Vec<Vec<f64>> = f.iter().zip(g).map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).collect()).collect();
    let (mut total, mut covered) = (0.0, 0.0);
    for j in 1..n {
        for k in 1..n {
            let corners = [d[j - 1][k - 1], d[j][k - 1], d[j - 1][k], d[j][k]];
            if corners.iter().all(|c| c.is_finite()) {
                let area = (grid[j] - grid[j - 1]) * (grid[k] - grid[k - 1]);
                total += area * corners.iter().sum::<f64>() / 4.0;
                covered += area;
            }
        }
    }
    if covered == 0.0 {
        return Err(Error::Evaluation("no fully defined grid cell".into()));
    }
    let span = grid[n - 1] - grid[0];
    Ok(total * span * span / covered)
}

/// `μ̃(t) = N⁻¹ Σ X^{(i)}(t)` from paths recorded on a common grid.
pub fn empirical_mean_tilde(paths: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = paths.first() else { return Vec::new() };
    let n = paths.len() as f64;
    (0..first.len()).map(|k| paths.iter().map(|p| p[k]).sum::<f64>() / n).collect()
}

/// `Γ̃(s,t) = (N-1)⁻¹ Σ (X_s - μ̃_s)(X_t - μ̃_t)`.
pub fn empirical_cov_tilde(paths: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if paths.len() < 2 {
        return Err(Error::Evaluation("empirical covariance needs at least 2 paths".into()));
    }
    let mu = empirical_mean_tilde(paths);
    let m = mu.len();
    let centered: Vec<Vec<f64>> = paths.iter().map(|p| p.iter().zip(&mu).map(|(x, u)| x - u).collect()).collect();
    let denom = (paths.len() - 1) as f64;
    let mut out = vec![vec![0.0; m]; m];
    for j in 0..m {
        for k in j..m {
            let v = centered.iter().map(|c| c[j] * c[k]).sum::<f64>() / denom;
            out[j][k] = v;
            out[k][j] = v;
        }
    }
    Ok(out)
}

/// Least-squares slope of `y` on `x` with its standard error (NaN with
/// fewer than three points).
pub fn fit_slope(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Evaluation("slope needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Evaluation("slope needs distinct x values".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let se = if x.len() > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok((slope, se))
}

/// Linear-interpolation quantile (type 7) of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// `(N, m)` pair of one experiment configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSize {
    pub n: usize,
    pub m: usize,
}

/// Observation design shared by all configurations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExperimentDesign {
    pub kind: DesignKind,
    #[serde(default)]
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replications: usize,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default = "yes")]
    pub estimate_covariance: bool,
    /// Points of the mean evaluation grid on [0.005, 0.995].
    #[serde(default = "default_grid")]
    pub mean_grid: usize,
    /// Points per axis of the covariance evaluation grid.
    #[serde(default = "default_grid")]
    pub cov_grid: usize,
    pub process: ProcessSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub design: ExperimentDesign,
    #[serde(default)]
    pub estimator: PipelineOptions,
    pub configs: Vec<SampleSize>,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_grid() -> usize {
    101
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Configuration(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.configs.is_empty() {
            return bad("no (n, m) configurations given".into());
        }
        if self.mean_grid < 2 || self.cov_grid < 2 {
            return bad("evaluation grids need at least 2 points".into());
        }
        self.process.validate()?;
        self.noise.validate()?;
        for c in &self.configs {
            self.design_for(c).validate()?;
            if c.n < 2 {
                return bad(format!("configuration needs n >= 2, got {}", c.n));
            }
        }
        Ok(())
    }

    fn design_for(&self, c: &SampleSize) -> DesignSpec {
        DesignSpec { kind: self.design.kind, m: c.m, p: self.design.p }
    }
}

/// Errors of one replication against both targets.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReplicationIse {
    pub mean_tilde: f64,
    pub mean_true: f64,
    pub cov_tilde: Option<f64>,
    pub cov_true: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRow {
    pub config_id: usize,
    pub size: SampleSize,
    pub rep: usize,
    /// `None` when the replication failed.
    pub ise: Option<ReplicationIse>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub metric: &'static str,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSummary {
    pub config_id: usize,
    pub size: SampleSize,
    pub p: f64,
    pub reps_ok: usize,
    pub reps_failed: usize,
    pub metrics: Vec<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSlope {
    pub metric: &'static str,
    pub slope: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReplicationRow>,
    pub configs: Vec<ConfigSummary>,
    /// Log-log slope of the median ISE against `N·m`, per metric.
    pub slopes: Vec<RateSlope>,
}

/// Seed of replication `rep` of configuration `config`.
pub fn replication_seed(seed: u64, config: usize, rep: usize) -> u64 {
    let mut x = seed;
    for v in [config as u64, rep as u64] {
        x = splitmix(x ^ splitmix(v.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    x
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Simulates, estimates and scores one replication.
pub fn run_replication(cfg: &ExperimentConfig, size: SampleSize, seed: u64) -> Result<ReplicationIse> {
    let mean_grid = EvalGrid::unit(cfg.mean_grid)?;
    let cov_grid = EvalGrid::unit(cfg.cov_grid)?;
    let mut all: Vec<f64> = mean_grid.points().to_vec();
    if cfg.estimate_covariance {
        all.extend_from_slice(cov_grid.points());
        all.sort_by(f64::total_cmp);
        all.dedup();
    }
    let sample = sample_dataset_with_grid(&cfg.process, &cfg.design_for(&size), &cfg.noise, size.n, seed, &all)?;
    let pick = |pts: &[f64]| -> Vec<Vec<f64>> {
        let idx: Vec<usize> = pts.iter().map(|p| all.partition_point(|a| a < p)).collect();
        sample.latent_grid.iter().map(|row| idx.iter().map(|&k| row[k]).collect()).collect()
    };
    let ds = &sample.dataset;
    let est = &cfg.estimator;

    let fit = est.mean(ds, &mean_grid)?;
    let mu_hat: Vec<f64> = fit.mean.values.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let mean_paths = pick(mean_grid.points());
    let mu_tilde = empirical_mean_tilde(&mean_paths);
    let mu_true: Vec<f64> = mean_grid.points().iter().map(|&t| cfg.process.true_mean(t)).collect();
    let mut out = ReplicationIse {
        mean_tilde: ise_1d(&mu_hat, &mu_tilde, mean_grid.points())?,
        mean_true: ise_1d(&mu_hat, &mu_true, mean_grid.points())?,
        cov_tilde: None,
        cov_true: None,
    };
    if cfg.estimate_covariance {
        let surf = est.covariance(ds, &cov_grid, Some(&fit))?;
        let cov_paths = pick(cov_grid.points());
        let g_tilde = empirical_cov_tilde(&cov_paths)?;
        let pts = cov_grid.points();
        let g_true: Vec<Vec<f64>> = pts.iter().map(|&s| pts.iter().map(|&t| cfg.process.true_covariance(s, t)).collect()).collect();
        out.cov_tilde = Some(ise_2d(&surf.values, &g_tilde, pts)?);
        out.cov_true = Some(ise_2d(&surf.values, &g_true, pts)?);
    }
    Ok(out)
}

/// Share of failed replications tolerated per configuration.
pub const MAX_FAILURE_RATE: f64 = 0.05;

/// Runs every replication of every configuration on `cfg.workers` threads.
/// Results do not depend on the number of workers.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Experiment(format!("cannot start worker pool: {e}")))?;
    let tasks: Vec<(usize, SampleSize, usize)> =
        cfg.configs.iter().enumerate().flat_map(|(c, &size)| (0..cfg.replications).map(move |r| (c, size, r))).collect();
    let rows: Vec<ReplicationRow> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(config_id, size, rep)| {
                let ise = run_replication(cfg, size, replication_seed(cfg.seed, config_id, rep)).ok();
                ReplicationRow { config_id, size, rep, ise }
            })
            .collect()
    });

    let mut configs = Vec::with_capacity(cfg.configs.len());
    for (config_id, &size) in cfg.configs.iter().enumerate() {
        let ok: Vec<ReplicationIse> = rows.iter().filter(|r| r.config_id == config_id).filter_map(|r| r.ise).collect();
        let failed = cfg.replications - ok.len();
        if ok.is_empty() || failed as f64 >= MAX_FAILURE_RATE * cfg.replications as f64 && failed > 0 {
            return Err(Error::Experiment(format!(
                "configuration {config_id} (N = {}, m = {}): {failed} of {} replications failed",
                size.n, size.m, cfg.replications
            )));
        }
        let mut metrics = Vec::new();
        let mut push = |name: &'static str, vals: Vec<f64>| {
            if !vals.is_empty() {
                metrics.push(MetricSummary { metric: name, q25: quantile(&vals, 0.25), q50: quantile(&vals, 0.5), q75: quantile(&vals, 0.75) });
            }
        };
        push("ise_mean_tilde", ok.iter().map(|r| r.mean_tilde).collect());
        push("ise_mean_true", ok.iter().map(|r| r.mean_true).collect());
        push("ise_cov_tilde", ok.iter().filter_map(|r| r.cov_tilde).collect());
        push("ise_cov_true", ok.iter().filter_map(|r| r.cov_true).collect());
        configs.push(ConfigSummary { config_id, size, p: cfg.design.p, reps_ok: ok.len(), reps_failed: failed, metrics });
    }

    let mut slopes = Vec::new();
    let distinct_nm = {
        let mut nm: Vec<usize> = configs.iter().map(|c| c.size.n * c.size.m).collect();
        nm.sort_unstable();
        nm.dedup();
        nm.len()
    };
    if distinct_nm >= 2 {
        for metric in ["ise_mean_tilde", "ise_mean_true", "ise_cov_tilde", "ise_cov_true"] {
            let pts: Vec<(f64, f64)> = configs
                .iter()
                .filter_map(|c| c.metrics.iter().find(|m| m.metric == metric).map(|m| (((c.size.n * c.size.m) as f64).ln(), m.q50.ln())))
                .collect();
            if pts.len() == configs.len() && pts.iter().all(|p| p.1.is_finite()) {
                let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
                let (slope, se) = fit_slope(&x, &y)?;
                slopes.push(RateSlope { metric, slope, se });
            }
        }
    }
    Ok(ExperimentReport { rows, configs, slopes })
}

impl ExperimentReport {
    /// Per-replication CSV.
    pub fn write_rows<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["config_id", "N", "m", "p", "rep", "ise_mean_tilde", "ise_mean_true", "ise_cov_tilde", "ise_cov_true"])?;
        let p = self.configs.first().map_or(0.0, |c| c.p);
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in &self.rows {
            let ise = r.ise;
            w.write_record(&[
                r.config_id.to_string(),
                r.size.n.to_string(),
                r.size.m.to_string(),
                p.to_string(),
                r.rep.to_string(),
                opt(ise.map(|i| i.mean_tilde)),
                opt(ise.map(|i| i.mean_true)),
                opt(ise.and_then(|i| i.cov_tilde)),
                opt(ise.and_then(|i| i.cov_true)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Quantile summary CSV followed by `# slope ...` comment lines.
    pub fn write_summary<W: Write>(&self, mut out: W) -> Result<()> {
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["config_id", "N", "m", "p", "reps_ok", "reps_failed", "metric", "q25", "q50", "q75"])?;
            for c in &self.configs {
                for m in &c.metrics {
                    w.write_record(&[
                        c.config_id.to_string(),
                        c.size.n.to_string(),
                        c.size.m.to_string(),
                        c.p.to_string(),
                        c.reps_ok.to_string(),
                        c.reps_failed.to_string(),
                        m.metric.to_string(),
                        m.q25.to_string(),
                        m.q50.to_string(),
                        m.q75.to_string(),
                    ])?;
                }
            }
            w.flush()?;
        }
        for s in &self.slopes {
            writeln!(out, "# slope metric={} slope={} se={}", s.metric, s.slope, s.se)?;
        }
        Ok(())
    }

    pub fn slope(&self, metric: &str) -> Option<&RateSlope> {
        self.slopes.iter().find(|s| s.metric == metric)
    }

    pub fn median(&self, config_id: usize, metric: &str) -> Option<f64> {
        self.configs.get(config_id)?.metrics.iter().find(|m| m.metric == metric).map(|m| m.q50)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(n: usize) -> Vec<f64> {
        (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn ise_examples() {
        let g = unit_grid(101);
        let z = vec![0.0; 101];
        assert_eq!(ise_1d(&z, &z, &g).unwrap(), 0.0);
        let one = vec![1.0; 101];
        assert!((ise_1d(&one, &z, &g).unwrap() - 1.0).abs() < 1e-12);
        let lin: Vec<f64> = g.clone();
        assert!((ise_1d(&lin, &z, &g).unwrap() - 1.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn ise_skips_undefined_points() {
        let g = unit_grid(11);
        let mut f = vec![1.0; 11];
        f[5] = f64::NAN;
        let z = vec![0.0; 11];
        assert!((ise_1d(&f, &z, &g).unwrap() - 1.0).abs() < 1e-12);
        let all_nan = vec![f64::NAN; 11];
        assert!(ise_1d(&all_nan, &z, &g).is_err());
    }

    #[test]
    fn ise_2d_constant_difference() {
        let g = unit_grid(11);
        let one = vec![vec![1.0; 11]; 11];
        let z = vec![vec![0.0; 11]; 11];
        assert!((ise_2d(&one, &z, &g).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tilde_examples() {
        let a = vec![1.0, 2.0, 3.0];
        assert_eq!(empirical_mean_tilde(&[a.clone(), a.clone()]), a);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert_eq!(empirical_mean_tilde(&[a.clone(), neg.clone()]), vec![0.0; 3]);
        let c = empirical_cov_tilde(&[a.clone(), neg]).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                assert!((c[j][k] - 2.0 * a[j] * a[k]).abs() < 1e-12);
            }
        }
        let same = empirical_cov_tilde(&[a.clone(), a.clone()]).unwrap();
        assert!(same.iter().flatten().all(|&v| v == 0.0));
        assert!(empirical_cov_tilde(&[a]).is_err());
    }

    #[test]
    fn slope_of_exact_line() {
        let (s, se) = fit_slope(&[1.0, 2.0, 3.0], &[2.0, 0.0, -2.0]).unwrap();
        assert!((s + 2.0).abs() < 1e-15);
        assert!(se.abs() < 1e-12);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    #[test]
    fn replication_seeds_differ() {
        let a = replication_seed(1, 0, 0);
        assert_ne!(a, replication_seed(1, 0, 1));
        assert_ne!(a, replication_seed(1, 1, 0));
        assert_ne!(a, replication_seed(2, 0, 0));
        assert_eq!(a, replication_seed(1, 0, 0));
    }
}
