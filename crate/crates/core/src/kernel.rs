//! Kernels and local-polynomial smoothing weights.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::{window_range, CurveObservations, EvalGrid};
use crate::quadrature::adaptive_simpson;
use crate::{Error, Result};

/// Relative eigenvalue floor below which the moment matrix counts as singular.
const SINGULAR_RATIO: f64 = 1e-12;
/// Highest supported polynomial order.
pub const MAX_ORDER: usize = 4;

/// Symmetric kernel supported on [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Uniform,
    #[default]
    Epanechnikov,
    Biweight,
}

impl Kernel {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        if u.abs() > 1.0 {
            return 0.0;
        }
        match self {
            Kernel::Uniform => 0.5,
            Kernel::Epanechnikov => 0.75 * (1.0 - u * u),
            Kernel::Biweight => {
                let v = 1.0 - u * u;
                0.9375 * v * v
            }
        }
    }

    /// `∫ |u|^a K(u) du`.
    pub fn abs_moment(self, a: f64) -> Result<f64> {
        kernel_abs_moment(self, a)
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Uniform => "uniform",
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Biweight => "biweight",
        })
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Kernel::Uniform),
            "epanechnikov" | "epa" => Ok(Kernel::Epanechnikov),
            "biweight" | "quartic" => Ok(Kernel::Biweight),
            other => Err(Error::InvalidArgument(format!("unknown kernel `{other}`"))),
        }
    }
}

/// `∫ |u|^a K(u) du`; closed form for the biweight, adaptive Simpson otherwise.
pub fn kernel_abs_moment(kernel: Kernel, a: f64) -> Result<f64> {
    if !(a >= 0.0) || !a.is_finite() {
        return Err(Error::InvalidArgument(format!("moment exponent must be >= 0, got {a}")));
    }
    if a == 0.0 {
        return Ok(1.0);
    }
    if kernel == Kernel::Biweight {
        return Ok(15.0 * (1.0 / (a + 1.0) - 2.0 / (a + 3.0) + 1.0 / (a + 5.0)) / 8.0);
    }
    let f = |u: f64| if u == 0.0 && a == 0.0 { kernel.eval(0.0) } else { u.powf(a) * kernel.eval(u) };
    Ok(2.0 * adaptive_simpson(&f, 0.0, 1.0, 1e-13))
}

/// Local-polynomial weights of one curve at one point.
///
/// `weights[k]` applies to observation `start + k`; only observations with
/// `|T_m - t| <= h` carry weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LpWeights {
    pub target_t: f64,
    pub h: f64,
    pub order: usize,
    pub start: usize,
    pub weights: Vec<f64>,
    pub degenerate: bool,
}

impl LpWeights {
    /// Observation indices covered by the weights.
    pub fn indices(&self) -> Range<usize> {
        self.start..self.start + self.weights.len()
    }

    /// `Σ W_m Y_m`, or `None` when degenerate.
    pub fn apply(&self, values: &[f64]) -> Option<f64> {
        if self.degenerate {
            return None;
        }
        Some(dot(&self.weights, &values[self.indices()]))
    }

    /// `Σ |W_m|`.
    pub fn abs_sum(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    /// `max |W_m|` (0 when empty).
    pub fn max_abs(&self) -> f64 {
        self.weights.iter().fold(0.0, |m, w| m.max(w.abs()))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_args(h: f64, order: usize) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
    }
    if order > MAX_ORDER {
        return Err(Error::InvalidArgument(format!("order {order} exceeds maximum {MAX_ORDER}")));
    }
    Ok(())
}

/// Local-polynomial weights of order `order` at `t` with bandwidth `h`.
///
/// The curve is degenerate at `t` when fewer than `k0` times fall in
/// `[t - h, t + h]` or the moment matrix is numerically singular.
pub fn lp_weights(curve: &CurveObservations, t: f64, h: f64, order: usize, kernel: Kernel, k0: usize) -> Result<LpWeights> {
    lp_derivative_weights(curve, t, h, order, 0, kernel, k0)
}

/// Weights estimating the `deriv`-th derivative from an order-`order` fit.
pub fn lp_derivative_weights(
    curve: &CurveObservations,
    t: f64,
    h: f64,
    order: usize,
    deriv: usize,
    kernel: Kernel,
    k0: usize,
) -> Result<LpWeights> {
    check_args(h, order)?;
    if deriv > order {
        return Err(Error::InvalidArgument(format!("derivative {deriv} exceeds order {order}")));
    }
    let mut weights = Vec::new();
    let (start, ok) = window_weights(curve.times(), t, h, order, deriv, kernel, k0, &mut weights);
    Ok(LpWeights { target_t: t, h, order, start, degenerate: !ok, weights: if ok { weights } else { Vec::new() } })
}

/// Fills `out` with the weights for the observations in the `h`-window
/// around `t`; returns the window start and whether the fit is
/// non-degenerate. Arguments are assumed valid.
#[allow(clippy::too_many_arguments)]
pub(crate) fn window_weights(
    times: &[f64],
    t: f64,
    h: f64,
    order: usize,
    deriv: usize,
    kernel: Kernel,
    k0: usize,
    out: &mut Vec<f64>,
) -> (usize, bool) {
    out.clear();
    let range = window_range(times, t, h);
    let start = range.start;
    let count = range.len();
    if count < k0.max(1) {
        return (start, false);
    }
    let window = &times[range];
    if order == 0 {
        let mut total = 0.0;
        for &x in window {
            let k = kernel.eval((x - t) / h);
            out.push(k);
            total += k;
        }
        if !(total > 0.0) {
            out.clear();
            return (start, false);
        }
        for w in out.iter_mut() {
            *w /= total;
        }
        return (start, true);
    }

    let p = order + 1;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut u = [0.0; MAX_ORDER + 1];
    for &x in window {
        let z = (x - t) / h;
        let k = kernel.eval(z);
        if k == 0.0 {
            continue;
        }
        basis(z, order, &mut u);
        for r in 0..p {
            for c in r..p {
                a[(r, c)] += u[r] * u[c] * k;
            }
        }
    }
    for r in 0..p {
        for c in 0..r {
            a[(r, c)] = a[(c, r)];
        }
    }
    let eig = a.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if !(lmax > 0.0) || lmin <= SINGULAR_RATIO * lmax {
        return (start, false);
    }
    let Some(chol) = a.cholesky() else {
        return (start, false);
    };
    let mut e = DVector::<f64>::zeros(p);
    e[deriv] = 1.0;
    // A is symmetric, so e_dᵀ A⁻¹ U = (A⁻¹ e_d)ᵀ U.
    let row = chol.solve(&e);
    let scale = h.powi(deriv as i32);
    for &x in window {
        let z = (x - t) / h;
        let k = kernel.eval(z);
        if k == 0.0 {
            out.push(0.0);
            continue;
        }
        basis(z, order, &mut u);
        let v: f64 = (0..p).map(|j| row[j] * u[j]).sum();
        out.push(v * k / scale);
    }
    (start, true)
}

/// `U(z) = (1, z, z²/2!, …, z^p/p!)`.
#[inline]
fn basis(z: f64, order: usize, u: &mut [f64; MAX_ORDER + 1]) {
    u[0] = 1.0;
    for j in 1..=order {
        u[j] = u[j - 1] * z / j as f64;
    }
}

/// Nadaraya–Watson smooth of one curve at each grid point; `None` where the
/// window holds no observation with positive kernel weight.
pub fn nw_presmooth(curve: &CurveObservations, grid: &EvalGrid, h: f64, kernel: Kernel) -> Result<Vec<(f64, Option<f64>)>> {
    check_args(h, 0)?;
    let mut buf = Vec::new();
    Ok(grid
        .points()
        .iter()
        .map(|&t| (t, smooth_at(curve, t, h, 0, 0, kernel, 1, &mut buf)))
        .collect())
}

/// Smoothed value (or derivative) of one curve at `t`, `None` if degenerate.
#[allow(clippy::too_many_arguments)]
pub(crate) fn smooth_at(
    curve: &CurveObservations,
    t: f64,
    h: f64,
    order: usize,
    deriv: usize,
    kernel: Kernel,
    k0: usize,
    buf: &mut Vec<f64>,
) -> Option<f64> {
    let (start, ok) = window_weights(curve.times(), t, h, order, deriv, kernel, k0, buf);
    ok.then(|| dot(buf, &curve.values()[start..start + buf.len()]))
}
