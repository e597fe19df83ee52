//! Observed functional data, evaluation grids and long-format CSV I/O.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Noisy measurements of one curve: `values[m] = X(times[m]) + noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveObservations {
    curve_id: i64,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl CurveObservations {
    /// Builds a curve, checking that times are strictly increasing inside
    /// (0, 1) and that every value is finite. Duplicate times are rejected.
    pub fn new(curve_id: i64, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidArgument(format!("curve {curve_id} has no observations")));
        }
        if times.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "curve {curve_id}: {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        for &t in &times {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "curve {curve_id}: time {t} outside (0, 1)"
                )));
            }
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "curve {curve_id}: times not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("curve {curve_id}: non-finite value")));
        }
        Ok(Self { curve_id, times, values })
    }

    pub fn curve_id(&self) -> i64 {
        self.curve_id
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of measurements `M_i`.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index range of the observations with `|T_m - t| <= h`.
    pub fn window(&self, t: f64, h: f64) -> std::ops::Range<usize> {
        window_range(&self.times, t, h)
    }

    /// Same times, values multiplied by `a` and shifted by `b`.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        Self {
            curve_id: self.curve_id,
            times: self.times.clone(),
            values: self.values.iter().map(|v| a * v + b).collect(),
        }
    }
}

pub(crate) fn window_range(times: &[f64], t: f64, h: f64) -> std::ops::Range<usize> {
    let lo = times.partition_point(|&x| x < t - h);
    let hi = times.partition_point(|&x| x <= t + h);
    // Guard against rounding in t ± h: the window is |T - t| <= h.
    let mut lo = lo;
    while lo > 0 && (times[lo - 1] - t).abs() <= h {
        lo -= 1;
    }
    while lo < hi && (times[lo] - t).abs() > h {
        lo += 1;
    }
    let mut hi = hi.max(lo);
    while hi < times.len() && (times[hi] - t).abs() <= h {
        hi += 1;
    }
    while hi > lo && (times[hi - 1] - t).abs() > h {
        hi -= 1;
    }
    lo..hi
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    /// Each curve has its own observation times.
    Independent,
    /// All curves share one time grid.
    Common,
}

/// Affine map `t' = (t - offset) / scale` applied to raw times at ingestion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeTransform {
    pub offset: f64,
    pub scale: f64,
}

impl TimeTransform {
    /// Maps the interval `[lo, hi]` onto `[0, 1]`.
    pub fn from_interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidArgument(format!("invalid domain [{lo}, {hi}]")));
        }
        Ok(Self { offset: lo, scale: hi - lo })
    }

    pub fn apply(&self, t: f64) -> f64 {
        (t - self.offset) / self.scale
    }

    pub fn invert(&self, u: f64) -> f64 {
        u * self.scale + self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    curves: Vec<CurveObservations>,
    design: Design,
    m_hat: f64,
    transform: Option<TimeTransform>,
}

impl FunctionalDataset {
    /// Builds a dataset and detects the design: `Common` iff every curve has
    /// bitwise identical times.
    pub fn new(curves: Vec<CurveObservations>) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let first = curves[0].times();
        let common = curves.iter().all(|c| {
            c.times().len() == first.len()
                && c.times().iter().zip(first).all(|(a, b)| a.to_bits() == b.to_bits())
        });
        let design = if common { Design::Common } else { Design::Independent };
        let m_hat = mean_obs_count(&curves);
        Ok(Self { curves, design, m_hat, transform: None })
    }

    pub fn curves(&self) -> &[CurveObservations] {
        &self.curves
    }

    pub fn n_curves(&self) -> usize {
        self.curves.len()
    }

    pub fn design(&self) -> Design {
        self.design
    }

    /// Average number of observations per curve, `N⁻¹ Σ M_i`.
    pub fn m_hat(&self) -> f64 {
        self.m_hat
    }

    pub fn transform(&self) -> Option<TimeTransform> {
        self.transform
    }

    /// Applies `y -> a·y + b` to every measurement.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        Self {
            curves: self.curves.iter().map(|c| c.affine(a, b)).collect(),
            design: self.design,
            m_hat: self.m_hat,
            transform: self.transform,
        }
    }

    /// Reads a long-format CSV (`curve_id,t,y`) with times already in (0, 1).
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        ingest_long_csv(path)
    }

    /// Writes the dataset back as long-format CSV, curves in order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["curve_id", "t", "y"])?;
        for c in &self.curves {
            for (t, y) in c.times().iter().zip(c.values()) {
                let t = match self.transform {
                    Some(tr) => tr.invert(*t),
                    None => *t,
                };
                w.write_record(&[c.curve_id().to_string(), t.to_string(), y.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `N⁻¹ Σ M_i` over the given curves (0 for an empty slice).
pub fn mean_obs_count(curves: &[CurveObservations]) -> f64 {
    if curves.is_empty() {
        return 0.0;
    }
    let total: usize = curves.iter().map(|c| c.len()).sum();
    total as f64 / curves.len() as f64
}

/// Reads a long-format CSV file; see [`read_long_csv`].
pub fn ingest_long_csv(path: impl AsRef<Path>) -> Result<FunctionalDataset> {
    let file = std::fs::File::open(path)?;
    read_long_csv(file, None)
}

/// Reads a long-format CSV whose times live in `[lo, hi]`, rescaling them to
/// the unit interval. The transform is kept on the dataset and undone when
/// writing.
pub fn ingest_long_csv_rescaled(path: impl AsRef<Path>, lo: f64, hi: f64) -> Result<FunctionalDataset> {
    let file = std::fs::File::open(path)?;
    read_long_csv(file, Some(TimeTransform::from_interval(lo, hi)?))
}

/// Parses `curve_id,t,y` rows in any order. Curves are returned sorted by id
/// with sorted times.
pub fn read_long_csv<R: Read>(input: R, transform: Option<TimeTransform>) -> Result<FunctionalDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("missing column `{name}`"),
        })
    };
    let (ci, ti, yi) = (col("curve_id")?, col("t")?, col("y")?);

    let mut by_curve: BTreeMap<i64, Vec<(f64, f64, u64)>> = BTreeMap::new();
    for (k, rec) in reader.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let field = |i: usize| {
            rec.get(i).ok_or_else(|| Error::Parse { line, msg: "missing field".into() })
        };
        let id: i64 = field(ci)?
            .parse()
            .map_err(|_| Error::Parse { line, msg: format!("bad curve_id `{}`", &rec[ci]) })?;
        let raw_t: f64 = field(ti)?
            .parse()
            .map_err(|_| Error::Parse { line, msg: format!("bad time `{}`", &rec[ti]) })?;
        let y: f64 = field(yi)?
            .parse()
            .map_err(|_| Error::Parse { line, msg: format!("bad value `{}`", &rec[yi]) })?;
        if !raw_t.is_finite() {
            return Err(Error::Parse { line, msg: "non-finite time".into() });
        }
        let t = transform.map_or(raw_t, |tr| tr.apply(raw_t));
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Domain { line, t: raw_t });
        }
        if !y.is_finite() {
            return Err(Error::Value { line });
        }
        by_curve.entry(id).or_default().push((t, y, line));
    }
    if by_curve.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut curves = Vec::with_capacity(by_curve.len());
    for (id, mut obs) in by_curve {
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = obs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Parse {
                line: w[1].2,
                msg: format!("duplicate time {} in curve {id}", w[1].0),
            });
        }
        let (times, values) = obs.into_iter().map(|(t, y, _)| (t, y)).unzip();
        curves.push(CurveObservations::new(id, times, values)?);
    }
    let mut ds = FunctionalDataset::new(curves)?;
    ds.transform = transform;
    Ok(ds)
}

/// Strictly increasing evaluation points inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    points: Vec<f64>,
    uniform: bool,
}

impl EvalGrid {
    /// `n` equally spaced points from `lo` to `hi` inclusive.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("grid needs at least 2 points, got {n}")));
        }
        if !(lo > 0.0 && hi < 1.0 && lo < hi) {
            return Err(Error::InvalidArgument(format!("grid bounds [{lo}, {hi}] must lie in (0, 1)")));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|k| lo + k as f64 * step).collect();
        points[n - 1] = hi;
        Ok(Self { points, uniform: true })
    }

    /// Default grid for integrated errors: `n` points spanning [0.005, 0.995].
    pub fn unit(n: usize) -> Result<Self> {
        Self::uniform(0.005, 0.995, n)
    }

    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("grid needs at least one point".into()));
        }
        if points.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::InvalidArgument("grid points must lie in (0, 1)".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("grid points must be strictly increasing".into()));
        }
        Ok(Self { points, uniform: false })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn lo(&self) -> f64 {
        self.points[0]
    }

    pub fn hi(&self) -> f64 {
        self.points[self.points.len() - 1]
    }
}

/// Linear interpolation of `(xs, ys)` at `x`, clamped to the end values
/// outside the range. `xs` must be strictly increasing.
pub(crate) fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n == 1 || x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let k = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[k - 1], xs[k]);
    let w = (x - x0) / (x1 - x0);
    ys[k - 1] * (1.0 - w) + ys[k] * w
}

/// Index of the value in `xs` closest to `x` (ties go to the lower index).
pub(crate) fn nearest_index(xs: &[f64], x: f64) -> usize {
    let k = xs.partition_point(|&v| v < x);
    if k == 0 {
        0
    } else if k == xs.len() {
        xs.len() - 1
    } else if (x - xs[k - 1]) <= (xs[k] - x) {
        k - 1
    } else {
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<FunctionalDataset> {
        read_long_csv(s.as_bytes(), None)
    }

    #[test]
    fn shared_times_detected_as_common() {
        let ds = parse("curve_id,t,y\n1,0.1,1\n1,0.5,2\n1,0.9,3\n2,0.9,0\n2,0.1,1\n2,0.5,4\n").unwrap();
        assert_eq!(ds.design(), Design::Common);
        assert_eq!(ds.n_curves(), 2);
        assert_eq!(ds.m_hat(), 3.0);
        assert_eq!(ds.curves()[1].times(), &[0.1, 0.5, 0.9]);
        assert_eq!(ds.curves()[1].values(), &[1.0, 4.0, 0.0]);
    }

    #[test]
    fn different_times_are_independent() {
        let ds = parse("curve_id,t,y\n1,0.1,1\n1,0.5,2\n2,0.2,0\n2,0.5,4\n").unwrap();
        assert_eq!(ds.design(), Design::Independent);
    }

    #[test]
    fn nan_value_rejected() {
        let err = parse("curve_id,t,y\n1,0.5,NaN\n").unwrap_err();
        assert!(matches!(err, Error::Value { line: 2 }), "{err:?}");
    }

    #[test]
    fn time_outside_domain_rejected() {
        let err = parse("curve_id,t,y\n1,0.5,1\n1,1.0,2\n").unwrap_err();
        assert!(matches!(err, Error::Domain { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse("curve_id,t,y\n1,0.5,1\n1,abc,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn empty_file_rejected() {
        assert!(matches!(parse("curve_id,t,y\n").unwrap_err(), Error::EmptyDataset));
    }

    #[test]
    fn duplicate_times_rejected() {
        let err = parse("curve_id,t,y\n1,0.5,1\n1,0.5,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err:?}");
    }

    #[test]
    fn rescaled_ingestion_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "curve_id,t,y\n1,10,1\n1,15,2\n2,12,3\n").unwrap();
        let ds = ingest_long_csv_rescaled(&path, 0.0, 20.0).unwrap();
        assert_eq!(ds.curves()[0].times(), &[0.5, 0.75]);
        let mut out = Vec::new();
        ds.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "curve_id,t,y\n1,10,1\n1,15,2\n2,12,3\n");
    }

    #[test]
    fn mean_obs_count_examples() {
        let mk = |m: usize| {
            let times: Vec<f64> = (1..=m).map(|k| k as f64 / (m + 1) as f64).collect();
            CurveObservations::new(0, times, vec![0.0; m]).unwrap()
        };
        assert_eq!(mean_obs_count(&[mk(100), mk(100), mk(100)]), 100.0);
        assert_eq!(mean_obs_count(&[mk(80), mk(120)]), 100.0);
        assert_eq!(mean_obs_count(&[mk(40)]), 40.0);
    }

    #[test]
    fn window_is_closed_interval() {
        let times = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(window_range(&times, 0.25, 0.05), 1..3);
        assert_eq!(window_range(&times, 0.2, 0.1), 0..3);
        assert_eq!(window_range(&times, 0.9, 0.1), 4..4);
    }

    #[test]
    fn interpolation_clamps() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [0.0, 10.0, 0.0];
        assert_eq!(interp_linear(&xs, &ys, 0.5), 5.0);
        assert_eq!(interp_linear(&xs, &ys, -1.0), 0.0);
        assert_eq!(interp_linear(&xs, &ys, 3.0), 0.0);
        assert_eq!(nearest_index(&xs, 1.4), 1);
        assert_eq!(nearest_index(&xs, 1.6), 2);
    }
}
