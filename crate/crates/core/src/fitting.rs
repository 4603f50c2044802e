//! Parameter estimation for the contrast and saturation models.
//!
//! Both fits minimize the weighted sum of squared residuals
//! `sum(((y_i - model(x_i)) / sigma_i)^2)`. Uncertainties come from a
//! case-resampling bootstrap with percentile intervals at 16 % and 84 %.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::models::{capped_poisson_contrast, GateMode};
use crate::rng;
use crate::stats::quantile_sorted;

/// Search interval for optical depths.
pub const OD_RANGE: (f64, f64) = (0.0, 50.0);
/// Absolute tolerance of the optical depth minimizer.
pub const OD_TOL: f64 = 1e-9;
/// Grid intervals of the bracketing scan over `OD_RANGE`.
pub const OD_GRID: usize = 250;
/// Relative simplex diameter at which the saturation fit stops.
pub const SIMPLEX_TOL: f64 = 1e-8;
/// Smallest accepted number of bootstrap resamples.
pub const MIN_BOOT: u64 = 100;
/// Largest tolerated fraction of skipped bootstrap resamples.
pub const MAX_SKIPPED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
}

/// Observations `(x, y, sigma)` with a free-form label.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataSet {
    pub points: Vec<DataPoint>,
    pub label: String,
}

impl DataSet {
    pub fn new(points: Vec<DataPoint>, label: impl Into<String>) -> Self {
        Self { points, label: label.into() }
    }

    /// Points with unit weights.
    pub fn unweighted(xy: impl IntoIterator<Item = (f64, f64)>, label: impl Into<String>) -> Self {
        let points = xy.into_iter().map(|(x, y)| DataPoint { x, y, sigma: 1.0 }).collect();
        Self::new(points, label)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn distinct_x(&self) -> usize {
        let mut xs: Vec<f64> = self.points.iter().map(|p| p.x).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs.len()
    }

    pub fn violations(&self, min_points: usize) -> Vec<String> {
        let mut v = Vec::new();
        if self.points.len() < min_points {
            v.push(format!("need at least {min_points} points (got {})", self.points.len()));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !(p.x >= 0.0 && p.x.is_finite()) {
                v.push(format!("point {i}: x must be finite and >= 0 (got {})", p.x));
            }
            if !p.y.is_finite() {
                v.push(format!("point {i}: y must be finite (got {})", p.y));
            }
            if !(p.sigma > 0.0 && p.sigma.is_finite()) {
                v.push(format!("point {i}: sigma must be finite and > 0 (got {})", p.sigma));
            }
        }
        v
    }

    pub fn validate(&self, min_points: usize) -> Result<()> {
        let v = self.violations(min_points);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    /// Read three-column CSV. A header row is required; its names are free, so
    /// files written with domain-specific headers (e.g. `n_gate_in,contrast,sigma`)
    /// read back unchanged.
    pub fn read_csv<R: Read>(reader: R, label: impl Into<String>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 3 {
            return Err(Error::Parse(format!("expected header with 3 columns (x, y, sigma), got {}", headers.len())));
        }
        let mut points = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| -> Result<f64> {
                let raw = rec.get(i).unwrap_or("");
                raw.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("row {}: column {} is not a number: '{raw}'", line + 1, i + 1)))
            };
            points.push(DataPoint { x: field(0)?, y: field(1)?, sigma: field(2)? });
        }
        Ok(Self::new(points, label))
    }

    pub fn write_csv<W: Write>(&self, writer: W, header: [&str; 3]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(header)?;
        for p in &self.points {
            w.write_record([p.x.to_string(), p.y.to_string(), p.sigma.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    fn weighted_sse(&self, model: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().map(|p| ((p.y - model(p.x)) / p.sigma).powi(2)).sum()
    }
}

/// Diagnostics attached to a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFlag {
    /// Estimate sits on the lower end of the search interval.
    AtLowerBound,
    /// Estimate sits on the upper end of the search interval.
    AtUpperBound,
    /// The data do not constrain all parameters (e.g. no curvature).
    IllConditioned,
    /// At least one confidence interval is effectively unbounded.
    UnboundedInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParam {
    pub name: String,
    pub value: f64,
    /// 68 % bootstrap percentile interval.
    pub ci_68: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<FitParam>,
    /// Weighted sum of squared residuals at the estimate.
    pub sse: f64,
    pub n_boot: u64,
    /// Bootstrap resamples that could not be fitted.
    pub skipped_resamples: u64,
    pub converged: bool,
    pub flags: Vec<FitFlag>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<&FitParam> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.param(name).map(|p| p.value)
    }

    pub fn has_flag(&self, flag: FitFlag) -> bool {
        self.flags.contains(&flag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub n_boot: u64,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { n_boot: 400, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    /// One `(p16, p84)` interval per fitted parameter.
    pub intervals: Vec<(f64, f64)>,
    pub n_boot: u64,
    pub skipped: u64,
}

/// Case-resampling bootstrap.
///
/// Resample `b` draws its point indices from stream `(seed, BOOTSTRAP, b)`.
/// Resamples with fewer than `min_distinct` distinct x values, or whose fit
/// fails, are skipped and counted; more than 10 % skipped is an error.
pub fn bootstrap_ci<F>(
    data: &DataSet,
    options: BootstrapOptions,
    min_distinct: usize,
    fit: F,
) -> Result<BootstrapSummary>
where
    F: Fn(&DataSet) -> Result<Vec<f64>> + Sync,
{
    if options.n_boot < MIN_BOOT {
        return domain(format!("n_boot must be >= {MIN_BOOT} (got {})", options.n_boot));
    }
    if data.is_empty() {
        return Err(Error::InsufficientData("empty data set".into()));
    }
    let n = data.len();
    let estimates: Vec<Option<Vec<f64>>> = (0..options.n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(options.seed, rng::domain::BOOTSTRAP, b);
            let points = (0..n).map(|_| data.points[rng.random_range(0..n)]).collect();
            let resample = DataSet::new(points, data.label.clone());
            if resample.distinct_x() < min_distinct {
                return None;
            }
            fit(&resample).ok()
        })
        .collect();

    let kept: Vec<Vec<f64>> = estimates.into_iter().flatten().collect();
    let skipped = options.n_boot - kept.len() as u64;
    if skipped as f64 > MAX_SKIPPED_FRACTION * options.n_boot as f64 {
        return Err(Error::InsufficientData(format!(
            "{skipped} of {} bootstrap resamples could not be fitted",
            options.n_boot
        )));
    }
    let n_params = kept.first().map_or(0, Vec::len);
    let intervals = (0..n_params)
        .map(|j| {
            let mut col: Vec<f64> = kept.iter().map(|v| v[j]).collect();
            col.sort_by(f64::total_cmp);
            (quantile_sorted(&col, 0.16), quantile_sorted(&col, 0.84))
        })
        .collect();
    Ok(BootstrapSummary { intervals, n_boot: options.n_boot, skipped })
}

/// Scalar minimization result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMinimum {
    pub x: f64,
    pub value: f64,
    pub iterations: u32,
}

/// Minimize `f` on `[lo, hi]`: a uniform grid scan brackets the global
/// minimum, then golden-section search refines it to `tol`.
pub fn bracketed_minimize<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, grid: usize, tol: f64) -> Result<ScalarMinimum> {
    let step = (hi - lo) / grid as f64;
    let mut best = (0usize, f64::INFINITY);
    for i in 0..=grid {
        let v = f(lo + step * i as f64);
        if v.is_nan() {
            return Err(Error::NonConvergence(format!("objective is NaN at {}", lo + step * i as f64)));
        }
        if v < best.1 {
            best = (i, v);
        }
    }
    let mut a = lo + step * best.0.saturating_sub(1) as f64;
    let mut b = (lo + step * (best.0 + 1) as f64).min(hi);

    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut iterations = 0;
    while b - a > tol {
        iterations += 1;
        if iterations > 500 {
            return Err(Error::NonConvergence(format!("golden section stalled on [{a}, {b}]")));
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    // The grid node itself may beat the interior points at a boundary.
    let mut x = 0.5 * (a + b);
    let mut value = f(x);
    let node = lo + step * best.0 as f64;
    if best.1 < value {
        x = node;
        value = best.1;
    }
    if !value.is_finite() {
        return Err(Error::NonConvergence(format!("objective not finite at minimum ({value})")));
    }
    Ok(ScalarMinimum { x, value, iterations })
}

fn od_param_name(mode: GateMode) -> &'static str {
    match mode {
        GateMode::Incoming => "od_sp",
        GateMode::Stored => "od_st",
    }
}

/// Weighted SSE of the capped-Poisson contrast model at optical depth `od`.
pub fn od_objective(data: &DataSet, od: f64, cap: u32) -> f64 {
    data.weighted_sse(|n| capped_poisson_contrast(n, od, cap).unwrap_or(f64::NAN))
}

/// Point estimate of the optical depth, without uncertainties.
pub fn estimate_od(data: &DataSet, cap: u32) -> Result<ScalarMinimum> {
    bracketed_minimize(|od| od_objective(data, od, cap), OD_RANGE.0, OD_RANGE.1, OD_GRID, OD_TOL)
}

fn check_contrast_data(data: &DataSet) -> Result<()> {
    data.validate(2)?;
    let bad: Vec<String> = data
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| !(p.y > -1.0 && p.y <= 1.0))
        .map(|(i, p)| format!("point {i}: contrast must lie in (-1, 1] (got {})", p.y))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(bad))
    }
}

/// Fit the optical depth per gate photon (`Incoming`) or per stored
/// excitation (`Stored`) to contrast data `(mean gate number, contrast, sigma)`.
pub fn fit_od(data: &DataSet, cap: u32, mode: GateMode, boot: BootstrapOptions) -> Result<FitResult> {
    check_contrast_data(data)?;
    if cap < 1 {
        return domain("cap must be >= 1");
    }
    let best = estimate_od(data, cap)?;
    let summary = bootstrap_ci(data, boot, 2, |d| Ok(vec![estimate_od(d, cap)?.x]))?;

    let mut flags = Vec::new();
    if best.x <= OD_RANGE.0 + OD_TOL {
        flags.push(FitFlag::AtLowerBound);
    }
    if best.x >= OD_RANGE.1 - OD_TOL {
        flags.push(FitFlag::AtUpperBound);
    }
    Ok(FitResult {
        params: vec![FitParam { name: od_param_name(mode).into(), value: best.x, ci_68: summary.intervals[0] }],
        sse: best.value,
        n_boot: summary.n_boot,
        skipped_resamples: summary.skipped,
        converged: true,
        flags,
    })
}

/// Nelder-Mead result.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexMinimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: u32,
    pub converged: bool,
}

/// Nelder-Mead simplex descent. Stops when every vertex lies within
/// `rel_tol * max(1, |best|)` of the best vertex in each coordinate.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    start: &[f64],
    scale: &[f64],
    rel_tol: f64,
    max_iter: u32,
) -> SimplexMinimum {
    let dim = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..dim {
        let mut v = start.to_vec();
        v[i] += scale[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let best = &simplex[0];
        let diameter_ok =
            simplex[1..].iter().all(|v| v.iter().zip(best).all(|(a, b)| (a - b).abs() <= rel_tol * b.abs().max(1.0)));
        if diameter_ok {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> =
            (0..dim).map(|i| simplex[..dim].iter().map(|v| v[i]).sum::<f64>() / dim as f64).collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[dim]).map(|(c, w)| c + t * (w - c)).collect() };

        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[dim] = expanded;
                values[dim] = fe;
            } else {
                simplex[dim] = reflected;
                values[dim] = fr;
            }
            continue;
        }
        if fr < values[dim - 1] {
            simplex[dim] = reflected;
            values[dim] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[dim] {
            let c = along(-0.5);
            let fc = f(&c);
            (c, fc)
        } else {
            let c = along(0.5);
            let fc = f(&c);
            (c, fc)
        };
        if fc < values[dim].min(fr) {
            simplex[dim] = contracted;
            values[dim] = fc;
            continue;
        }
        // shrink towards the best vertex
        let best = simplex[0].clone();
        for k in 1..=dim {
            simplex[k] = simplex[k].iter().zip(&best).map(|(v, b)| b + 0.5 * (v - b)).collect();
            values[k] = f(&simplex[k]);
        }
    }
    let i = (0..=dim).min_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap_or(0);
    SimplexMinimum { x: simplex[i].clone(), value: values[i], iterations, converged }
}

/// Weighted SSE of `a (1 - exp(-x / b))`; infinite outside `a >= 0, b > 0`.
pub fn saturation_objective(data: &DataSet, a: f64, b: f64) -> f64 {
    if !(a >= 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return f64::INFINITY;
    }
    data.weighted_sse(|x| a * -(-x / b).exp_m1())
}

const SATURATION_RESTARTS: usize = 8;
const SATURATION_MAX_ITER: u32 = 20_000;
/// Below this ratio of the largest input to the fitted `b`, the transfer
/// curve shows too little curvature to pin `b` (it changes by < 5 %).
const LINEAR_REGIME_RATIO: f64 = 0.1;

/// Point estimate `(a, b)` from restarted simplex descent.
pub fn estimate_saturation(data: &DataSet) -> Result<SimplexMinimum> {
    let max_y = data.points.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let mut xs: Vec<f64> = data.points.iter().map(|p| p.x).collect();
    xs.sort_by(f64::total_cmp);
    let median_x = quantile_sorted(&xs, 0.5);
    let start = [1.05 * max_y.max(f64::MIN_POSITIVE), median_x.max(f64::MIN_POSITIVE)];

    let objective = |p: &[f64]| saturation_objective(data, p[0], p[1]);
    let mut candidates: Vec<SimplexMinimum> = Vec::new();
    let mut from = start.to_vec();
    for _ in 0..SATURATION_RESTARTS {
        let scale = [0.2 * from[0].abs().max(1e-3), 0.2 * from[1].abs().max(1e-3)];
        let m = nelder_mead(&objective, &from, &scale, SIMPLEX_TOL, SATURATION_MAX_ITER);
        let stalled = candidates.last().is_some_and(|prev: &SimplexMinimum| {
            m.x.iter().zip(&prev.x).all(|(a, b)| (a - b).abs() <= SIMPLEX_TOL * b.abs().max(1.0))
        });
        from = m.x.clone();
        candidates.push(m);
        if stalled {
            break;
        }
    }
    // lowest SSE wins; exact ties go to the smaller amplitude
    let best = candidates
        .into_iter()
        .min_by(|p, q| p.value.total_cmp(&q.value).then(p.x[0].total_cmp(&q.x[0])))
        .expect("at least one restart");
    if !best.value.is_finite() {
        return Err(Error::NonConvergence("saturation objective not finite".into()));
    }
    Ok(best)
}

/// Fit the source transfer curve `a (1 - exp(-x / b))` to
/// `(input photons, output photons, sigma)` data.
pub fn fit_saturation(data: &DataSet, boot: BootstrapOptions) -> Result<FitResult> {
    data.validate(3)?;
    if data.distinct_x() < 3 {
        return Err(Error::InsufficientData("need at least 3 distinct inputs".into()));
    }
    let best = estimate_saturation(data)?;
    let summary = bootstrap_ci(data, boot, 3, |d| Ok(estimate_saturation(d)?.x))?;

    let max_x = data.points.iter().map(|p| p.x).fold(0.0, f64::max);
    let mut flags = Vec::new();
    let ill = max_x / best.x[1] < LINEAR_REGIME_RATIO;
    if ill {
        flags.push(FitFlag::IllConditioned);
    }
    if ill || summary.intervals[1].1 * LINEAR_REGIME_RATIO > max_x {
        flags.push(FitFlag::UnboundedInterval);
    }
    if !best.converged && !ill {
        return Err(Error::NonConvergence(format!(
            "simplex did not shrink below {SIMPLEX_TOL} after {} iterations (a = {}, b = {})",
            best.iterations, best.x[0], best.x[1]
        )));
    }
    let names = ["a", "b"];
    Ok(FitResult {
        params: names
            .iter()
            .zip(&best.x)
            .zip(&summary.intervals)
            .map(|((n, &v), &ci)| FitParam { name: (*n).into(), value: v, ci_68: ci })
            .collect(),
        sse: best.value,
        n_boot: summary.n_boot,
        skipped_resamples: summary.skipped,
        converged: best.converged,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{transfer, SaturationParams};

    fn contrast_data(od: f64, cap: u32) -> DataSet {
        let pts = (1..=14)
            .map(|i| {
                let n = 0.25 * i as f64;
                DataPoint { x: n, y: capped_poisson_contrast(n, od, cap).unwrap(), sigma: 0.04 }
            })
            .collect();
        DataSet::new(pts, "synthetic")
    }

    fn saturation_data(a: f64, b: f64) -> DataSet {
        let sat = SaturationParams { a, b };
        let pts = (1..=10)
            .map(|i| {
                let x = 25.0 * i as f64;
                DataPoint { x, y: transfer(x, &sat), sigma: 1.0 }
            })
            .collect();
        DataSet::new(pts, "synthetic")
    }

    const BOOT: BootstrapOptions = BootstrapOptions { n_boot: 100, seed: 11 };

    #[test]
    fn od_round_trip_zero_noise() {
        for &od in &[0.45, 0.75, 0.94, 2.2] {
            for mode in [GateMode::Incoming, GateMode::Stored] {
                let r = fit_od(&contrast_data(od, 3), 3, mode, BOOT).unwrap();
                let p = &r.params[0];
                assert!((p.value - od).abs() < 1e-6, "od={od}: {}", p.value);
                assert!(p.ci_68.1 - p.ci_68.0 < 1e-6);
                assert!(r.flags.is_empty());
            }
        }
        let r = fit_od(&contrast_data(0.75, 3), 3, GateMode::Stored, BOOT).unwrap();
        assert_eq!(r.params[0].name, "od_st");
    }

    #[test]
    fn od_zero_is_flagged_at_boundary() {
        let r = fit_od(&contrast_data(0.0, 3), 3, GateMode::Incoming, BOOT).unwrap();
        assert!(r.params[0].value.abs() < 1e-9);
        assert!(r.has_flag(FitFlag::AtLowerBound));
    }

    #[test]
    fn od_objective_is_unimodal_and_grid_consistent() {
        for &od in &[0.3, 0.75, 2.2, 6.0] {
            let data = contrast_data(od, 3);
            let grid: Vec<f64> = (0..1000).map(|i| 50.0 * i as f64 / 999.0).collect();
            let vals: Vec<f64> = grid.iter().map(|&g| od_objective(&data, g, 3)).collect();
            let argmin = (0..vals.len()).min_by(|&i, &j| vals[i].total_cmp(&vals[j])).unwrap();
            // decreasing then non-decreasing
            assert!(vals[..=argmin].windows(2).all(|w| w[1] <= w[0] + 1e-12));
            assert!(vals[argmin..].windows(2).all(|w| w[1] >= w[0] - 1e-12));
            let fitted = estimate_od(&data, 3).unwrap().x;
            assert!((fitted - grid[argmin]).abs() <= 50.0 / 999.0);
        }
    }

    #[test]
    fn od_fit_rejects_bad_input() {
        let mut d = contrast_data(0.75, 3);
        d.points.truncate(1);
        assert!(fit_od(&d, 3, GateMode::Incoming, BOOT).is_err());
        let mut d = contrast_data(0.75, 3);
        d.points[0].y = 1.5;
        assert!(fit_od(&d, 3, GateMode::Incoming, BOOT).is_err());
        let mut d = contrast_data(0.75, 3);
        d.points[0].sigma = 0.0;
        assert!(fit_od(&d, 3, GateMode::Incoming, BOOT).is_err());
    }

    #[test]
    fn saturation_round_trip_zero_noise() {
        let r = fit_saturation(&saturation_data(46.0, 70.0), BOOT).unwrap();
        assert!(r.converged);
        assert!((r.value("a").unwrap() / 46.0 - 1.0).abs() < 1e-4);
        assert!((r.value("b").unwrap() / 70.0 - 1.0).abs() < 1e-4);
        assert!(r.flags.is_empty(), "{:?}", r.flags);
        for p in &r.params {
            assert!(p.ci_68.1 - p.ci_68.0 < 1e-6 * p.value);
        }
    }

    #[test]
    fn saturation_linear_data_is_flagged() {
        let d = DataSet::unweighted((1..=6).map(|i| (i as f64, i as f64)), "linear");
        let r = fit_saturation(&d, BOOT).unwrap();
        assert!(r.has_flag(FitFlag::IllConditioned));
        assert!(r.has_flag(FitFlag::UnboundedInterval));
        // the initial slope a / b stays identifiable
        let slope = r.value("a").unwrap() / r.value("b").unwrap();
        assert!((slope - 1.0).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn saturation_needs_three_distinct_points() {
        let d = DataSet::unweighted([(1.0, 1.0), (1.0, 1.0), (2.0, 1.5)], "few");
        assert!(fit_saturation(&d, BOOT).is_err());
    }

    #[test]
    fn saturation_sse_is_locally_minimal() {
        let mut d = saturation_data(46.0, 70.0);
        for (i, p) in d.points.iter_mut().enumerate() {
            p.y += if i % 2 == 0 { 0.7 } else { -0.5 };
        }
        let r = fit_saturation(&d, BOOT).unwrap();
        let (a, b) = (r.value("a").unwrap(), r.value("b").unwrap());
        let mut rng = rng::stream(5, 0, 0);
        for _ in 0..100 {
            let pa = a * (1.0 + rng.random_range(-0.2..0.2));
            let pb = b * (1.0 + rng.random_range(-0.2..0.2));
            assert!(r.sse <= saturation_objective(&d, pa, pb));
        }
    }

    #[test]
    fn bootstrap_is_deterministic_and_guarded() {
        let mut d = contrast_data(0.75, 3);
        for (i, p) in d.points.iter_mut().enumerate() {
            p.y += 0.03 * ((i * 7 % 5) as f64 - 2.0) / 2.0;
        }
        let opts = BootstrapOptions { n_boot: 1000, seed: 3 };
        let f = |d: &DataSet| Ok(vec![estimate_od(d, 3)?.x]);
        let a = bootstrap_ci(&d, opts, 2, f).unwrap();
        let b = bootstrap_ci(&d, opts, 2, f).unwrap();
        assert_eq!(a, b);
        assert!(a.intervals[0].0 < 0.75 && 0.75 < a.intervals[0].1 + 0.1);

        assert!(bootstrap_ci(&d, BootstrapOptions { n_boot: 99, seed: 0 }, 2, f).is_err());
        // every resample fails -> too many skipped
        let fail = |_: &DataSet| -> Result<Vec<f64>> { Err(Error::NonConvergence("x".into())) };
        assert!(matches!(bootstrap_ci(&d, opts, 2, fail), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn csv_round_trip_with_custom_header() {
        let d = contrast_data(0.75, 3);
        let mut buf = Vec::new();
        d.write_csv(&mut buf, ["n_gate_in", "contrast", "sigma"]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("n_gate_in,contrast,sigma\n"));
        let back = DataSet::read_csv(buf.as_slice(), "synthetic").unwrap();
        assert_eq!(back, d);
        assert!(DataSet::read_csv("x,y\n1,2\n".as_bytes(), "bad").is_err());
        assert!(DataSet::read_csv("x,y,sigma\n1,a,1\n".as_bytes(), "bad").is_err());
    }
}
