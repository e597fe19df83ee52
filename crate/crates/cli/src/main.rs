use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use fda_adapt::evaluation::{run_experiment, ExperimentConfig};
use fda_adapt::model::{ingest_long_csv, ingest_long_csv_rescaled};
use fda_adapt::pipeline::PipelineOptions;
use fda_adapt::regularity::{NoiseMode, PresmoothRule};
use fda_adapt::simulation::{sample_dataset, DesignKind, DesignSpec, MeanFn, NoiseSpec, ProcessKind, ProcessSpec};
use fda_adapt::{EvalGrid, FunctionalDataset, Kernel};

#[derive(Parser)]
#[command(name = "fda-adapt", version, about = "Adaptive mean and covariance estimation for noisy functional data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate noisy Gaussian-process curves as long CSV.
    Simulate(SimulateArgs),
    /// Local regularity estimates at uniform anchors.
    Regularity(RegularityArgs),
    /// Adaptive mean function on a uniform grid.
    Mean(MeanArgs),
    /// Adaptive covariance surface on a uniform grid.
    Cov(CovArgs),
    /// Replicated simulation experiment from a TOML file.
    Experiment(ExperimentArgs),
}

/// A CLI failure, tagged with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn usage(err: anyhow::Error) -> Failure {
    Failure { code: 1, err }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let code = match err.downcast_ref::<fda_adapt::Error>() {
            Some(e) if !e.is_validation() => 2,
            _ => 1,
        };
        Failure { code, err }
    }
}

impl From<fda_adapt::Error> for Failure {
    fn from(e: fda_adapt::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Regularity(a) => regularity(a),
        Command::Mean(a) => mean(a),
        Command::Cov(a) => cov(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(usage)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn set_workers(workers: Option<usize>) -> Result<(), Failure> {
    if let Some(w) = workers {
        if w == 0 {
            return Err(usage(anyhow::anyhow!("--workers must be at least 1")));
        }
        // Ignore a pool that is already configured.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum ProcessArg {
    Fbm,
    Fou,
    Kl,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    None,
    Homoscedastic,
    TimeVarying,
    StateDependent,
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignArg {
    Independent,
    Common,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML file with `n`, `seed`, `[process]`, `[noise]`, `[design]`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    process: Option<ProcessArg>,
    /// Hurst index of fractional Brownian motion.
    #[arg(long)]
    hurst: Option<f64>,
    /// Rate `a` of the covariance `exp(-a|s-t|^rho)`.
    #[arg(long)]
    fou_a: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Eigenvalue decay exponent of the KL process.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    n_terms: Option<usize>,
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    /// Noise standard deviation (value at t = 0 for time-varying noise).
    #[arg(long)]
    sd: Option<f64>,
    /// Noise standard deviation at t = 1 for time-varying noise.
    #[arg(long)]
    sd1: Option<f64>,
    /// Slope inside tanh for state-dependent noise.
    #[arg(long)]
    noise_scale: Option<f64>,
    #[arg(long, value_enum)]
    design: Option<DesignArg>,
    /// Number of curves.
    #[arg(long)]
    n: Option<usize>,
    /// Mean number of points per curve.
    #[arg(long)]
    m: Option<usize>,
    /// Relative spread of the per-curve point count.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the noiseless values as `curve_id,t,x_true`.
    #[arg(long)]
    latent_out: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateFile {
    n: Option<usize>,
    seed: Option<u64>,
    process: Option<ProcessSpec>,
    noise: Option<NoiseSpec>,
    design: Option<DesignSpec>,
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let file: SimulateFile = read_config(a.config.as_deref())?;
    let mean = file.process.as_ref().map(|p| p.mean.clone()).unwrap_or(MeanFn::Zero);
    let mut kind = match a.process {
        Some(ProcessArg::Fbm) => ProcessKind::Fbm { hurst: 0.5 },
        Some(ProcessArg::Fou) => ProcessKind::Fou { a: 1.0, rho: 1.0 },
        Some(ProcessArg::Kl) => ProcessKind::KlPowerLaw { nu: 2.4, n_terms: 100 },
        None => file.process.map(|p| p.kind).unwrap_or(ProcessKind::Fbm { hurst: 0.5 }),
    };
    match &mut kind {
        ProcessKind::Fbm { hurst } => *hurst = a.hurst.unwrap_or(*hurst),
        ProcessKind::Fou { a: rate, rho } => {
            *rate = a.fou_a.unwrap_or(*rate);
            *rho = a.rho.unwrap_or(*rho);
        }
        ProcessKind::KlPowerLaw { nu, n_terms } => {
            *nu = a.nu.unwrap_or(*nu);
            *n_terms = a.n_terms.unwrap_or(*n_terms);
        }
    }
    let process = ProcessSpec { kind, mean };

    let sd = a.sd.unwrap_or(0.0);
    let noise = match a.noise {
        Some(NoiseArg::None) => NoiseSpec::None,
        Some(NoiseArg::Homoscedastic) => NoiseSpec::Homoscedastic { sd },
        Some(NoiseArg::TimeVarying) => NoiseSpec::TimeVarying { sd0: sd, sd1: a.sd1.unwrap_or(sd) },
        Some(NoiseArg::StateDependent) => NoiseSpec::StateDependent { sd, scale: a.noise_scale.unwrap_or(1.0) },
        None => match (file.noise, a.sd) {
            (Some(n), _) => n,
            (None, Some(sd)) => NoiseSpec::Homoscedastic { sd },
            (None, None) => NoiseSpec::None,
        },
    };

    let mut design = file.design.unwrap_or(DesignSpec::independent(50, 0.0));
    match a.design {
        Some(DesignArg::Independent) => design.kind = DesignKind::IndependentUniform,
        Some(DesignArg::Common) => design.kind = DesignKind::CommonEquidistant,
        None => {}
    }
    design.m = a.m.unwrap_or(design.m);
    design.p = a.p.unwrap_or(design.p);
    let n = a.n.or(file.n).unwrap_or(100);
    let seed = a.seed.or(file.seed).unwrap_or(0);

    let sample = sample_dataset(&process, &design, &noise, n, seed)?;
    let mut out = output(a.out.as_deref())?;
    sample.dataset.write_csv(&mut out)?;
    out.flush().context("writing dataset")?;
    if let Some(p) = &a.latent_out {
        let mut w = output(Some(p))?;
        sample.write_latent_csv(&mut w)?;
        w.flush().context("writing latent values")?;
    }
    Ok(())
}

/// Estimator options shared by the estimation subcommands.
#[derive(Args)]
struct EstimatorArgs {
    /// Long CSV with columns curve_id,t,y.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Observation interval `lo,hi` when times are not in (0, 1).
    #[arg(long, value_delimiter = ',', num_args = 2)]
    domain: Option<Vec<f64>>,
    /// TOML file: top-level `data`, `domain`, `grid`, `anchors`, `out` and
    /// an `[estimator]` table. Flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kernel: Option<Kernel>,
    /// Kernel of the presmoothing step.
    #[arg(long)]
    presmooth_kernel: Option<Kernel>,
    /// Minimum number of points in a smoothing window.
    #[arg(long)]
    k0: Option<usize>,
    /// Minimize the risk over k0 as well (mean only).
    #[arg(long)]
    joint_k0: bool,
    /// Use the kernel moment in place of the measured bias constant.
    #[arg(long)]
    kernel_moment: bool,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    gamma_exp: Option<f64>,
    #[arg(long)]
    delta_max: Option<usize>,
    #[arg(long, value_enum)]
    noise_mode: Option<NoiseModeArg>,
    /// Presmoothing bandwidth: `cube-root`, `points:<k>` (k / m) or `fixed:<h>`.
    #[arg(long, value_parser = parse_presmooth)]
    presmooth: Option<PresmoothRule>,
    /// Output CSV (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "FDA_ADAPT_WORKERS")]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseModeArg {
    Constant,
    TimeVarying,
}

fn parse_presmooth(s: &str) -> Result<PresmoothRule, String> {
    let num = |v: &str| v.parse::<f64>().map_err(|e| format!("{v}: {e}"));
    match s.split_once(':') {
        None if s == "cube-root" => Ok(PresmoothRule::CubeRoot),
        Some(("points", v)) => Ok(PresmoothRule::PointCount(num(v)?)),
        Some(("fixed", v)) => Ok(PresmoothRule::Fixed(num(v)?)),
        _ => Err(format!("unknown presmoothing rule '{s}'")),
    }
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EstimatorFile {
    data: Option<PathBuf>,
    domain: Option<[f64; 2]>,
    grid: Option<usize>,
    anchors: Option<usize>,
    out: Option<PathBuf>,
    workers: Option<usize>,
    estimator: PipelineOptions,
}

struct Prepared {
    dataset: FunctionalDataset,
    options: PipelineOptions,
    file: EstimatorFile,
    out: Option<PathBuf>,
}

impl EstimatorArgs {
    fn prepare(self) -> Result<Prepared, Failure> {
        let file: EstimatorFile = read_config(self.config.as_deref())?;
        set_workers(self.workers.or(file.workers))?;
        let mut o = file.estimator.clone();
        if let Some(k) = self.kernel {
            o.mean.kernel = k;
            o.cov.smoothing.kernel = k;
        }
        if let Some(k) = self.presmooth_kernel {
            o.mean.presmooth_kernel = k;
            o.cov.smoothing.presmooth_kernel = k;
        }
        if let Some(k0) = self.k0 {
            o.mean.k0 = k0;
            o.cov.smoothing.k0 = k0;
        }
        o.mean.joint_k0 |= self.joint_k0;
        if self.kernel_moment {
            o.mean.kernel_moment = true;
            o.cov.smoothing.kernel_moment = true;
        }
        o.gamma = self.gamma.unwrap_or(o.gamma);
        o.gamma_exp = self.gamma_exp.unwrap_or(o.gamma_exp);
        o.delta_max = self.delta_max.unwrap_or(o.delta_max);
        o.presmooth = self.presmooth.unwrap_or(o.presmooth);
        match self.noise_mode {
            Some(NoiseModeArg::Constant) => o.noise_mode = NoiseMode::Constant,
            Some(NoiseModeArg::TimeVarying) => o.noise_mode = NoiseMode::TimeVarying,
            None => {}
        }

        let data = self
            .data
            .or_else(|| file.data.clone())
            .ok_or_else(|| usage(anyhow::anyhow!("no input data: pass --data or set `data` in the config file")))?;
        let domain = self.domain.map(|d| [d[0], d[1]]).or(file.domain);
        let dataset = match domain {
            Some([lo, hi]) => ingest_long_csv_rescaled(&data, lo, hi),
            None => ingest_long_csv(&data),
        }
        .with_context(|| format!("reading {}", data.display()))?;
        let out = self.out.or_else(|| file.out.clone());
        Ok(Prepared { dataset, options: o, file, out })
    }
}

impl Prepared {
    fn grid(&self, flag: Option<usize>) -> Result<EvalGrid, Failure> {
        Ok(EvalGrid::unit(flag.or(self.file.grid).unwrap_or(101))?)
    }

    /// Maps a point of the unit interval back to the original time scale.
    fn time(&self, u: f64) -> f64 {
        self.dataset.transform().map_or(u, |tr| tr.invert(u))
    }
}

#[derive(Args)]
struct RegularityArgs {
    #[command(flatten)]
    est: EstimatorArgs,
    /// Number of uniform anchors on [0.05, 0.95].
    #[arg(long)]
    anchors: Option<usize>,
}

fn regularity(a: RegularityArgs) -> Result<(), Failure> {
    let p = a.est.prepare()?;
    let anchors = a.anchors.or(p.file.anchors).unwrap_or(p.options.mean_anchors);
    let regs = p.options.regularity(&p.dataset, anchors)?;
    let mut out = output(p.out.as_deref())?;
    writeln!(out, "t2,t1,t3,delta_hat,H_hat,alpha_hat,L2_hat,theta_12,theta_13,retained_curves").context("writing output")?;
    for r in &regs {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            p.time(r.anchor_t2),
            p.time(r.t1),
            p.time(r.t3),
            r.delta_hat,
            r.H(),
            r.alpha_hat,
            r.l2_hat,
            r.theta_12(),
            r.theta_13(),
            r.retained
        )
        .context("writing output")?;
    }
    out.flush().context("writing output")?;
    Ok(())
}

#[derive(Args)]
struct MeanArgs {
    #[command(flatten)]
    est: EstimatorArgs,
    /// Points of the uniform evaluation grid on [0.005, 0.995].
    #[arg(long)]
    grid: Option<usize>,
}

fn mean(a: MeanArgs) -> Result<(), Failure> {
    let p = a.est.prepare()?;
    let grid = p.grid(a.grid)?;
    let fit = p.options.mean(&p.dataset, &grid)?;
    let m = &fit.mean;
    let mut out = output(p.out.as_deref())?;
    writeln!(out, "t,mu_hat,h_star,W_N,risk_bias,risk_var,risk_dropout").context("writing output")?;
    for k in 0..m.grid.len() {
        let r = &m.risk[k];
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.time(m.grid[k]),
            opt(m.values[k]),
            m.h_star[k],
            m.w_n[k],
            r.bias,
            r.var,
            r.dropout
        )
        .context("writing output")?;
    }
    out.flush().context("writing output")?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn finite(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

#[derive(Args)]
struct CovArgs {
    #[command(flatten)]
    est: EstimatorArgs,
    /// Points per axis of the uniform evaluation grid on [0.005, 0.995].
    #[arg(long)]
    grid: Option<usize>,
    /// Treat the mean as zero.
    #[arg(long)]
    assume_zero_mean: bool,
    /// Clip negative eigenvalues of the estimated surface.
    #[arg(long)]
    psd: bool,
}

fn cov(a: CovArgs) -> Result<(), Failure> {
    let mut p = a.est.prepare()?;
    p.options.cov.assume_zero_mean |= a.assume_zero_mean;
    p.options.cov.psd_projection |= a.psd;
    let grid = p.grid(a.grid)?;
    let surf = p.options.covariance(&p.dataset, &grid, None)?;
    let mut out = output(p.out.as_deref())?;
    writeln!(out, "# d={} c={}", surf.band.d, surf.band.c).context("writing output")?;
    writeln!(out, "s,t,gamma_hat,Gamma_hat,h_star,in_band,W_N_pair").context("writing output")?;
    let g = &surf.grid;
    for j in 0..g.len() {
        for k in 0..g.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.time(g[j]),
                p.time(g[k]),
                finite(surf.gamma_values[j][k]),
                finite(surf.values[j][k]),
                finite(surf.h_star[j][k]),
                surf.in_band[j][k],
                surf.w_n_pair[j][k]
            )
            .context("writing output")?;
        }
    }
    out.flush().context("writing output")?;
    Ok(())
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment description.
    #[arg(long)]
    config: PathBuf,
    /// Per-replication CSV (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Quantile and slope summary CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long, env = "FDA_ADAPT_WORKERS")]
    workers: Option<usize>,
}

fn experiment(a: ExperimentArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display())).map_err(usage)?;
    let mut cfg: ExperimentConfig = toml::from_str(&text).with_context(|| format!("parsing {}", a.config.display())).map_err(usage)?;
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.replications = a.replications.unwrap_or(cfg.replications);
    cfg.workers = a.workers.unwrap_or(cfg.workers);
    let report = run_experiment(&cfg)?;
    let mut out = output(a.out.as_deref())?;
    report.write_rows(&mut out)?;
    out.flush().context("writing report")?;
    if let Some(path) = &a.summary {
        let mut w = output(Some(path))?;
        report.write_summary(&mut w)?;
        w.flush().context("writing summary")?;
    }
    Ok(())
}
