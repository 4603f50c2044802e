//! Single-shot detection of a stored Rydberg excitation from one run's source
//! photon count.
//!
//! The detected-count distribution is modeled as a Poisson mixture: component
//! `k` holds the runs with `k` stored excitations (weight from the Poisson
//! statistics of the gate, capped at the blockade capacity) and has mean
//! `mu0 * exp(-k * od_st)`. A run is declared "excitation present" when its
//! count is at or below an integer threshold.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{domain, Error, Result};
use crate::rng;
use crate::stats::{poisson_cdf, poisson_pmf, poisson_pmfs, poisson_quantile, poisson_upper_tail};

/// Tolerance on the sum of mixture weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
/// The threshold scan stops at this quantile of the brightest component.
pub const SCAN_QUANTILE: f64 = 0.9999;
/// Minimum expected count per pooled bin in the goodness-of-fit statistic.
pub const GOF_MIN_EXPECTED: f64 = 5.0;
/// Minimum runs for the dispersion test.
pub const MIN_DISPERSION_RUNS: u64 = 30;

/// Runs per detected-event count.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "BTreeMap<u64, u64>", into = "BTreeMap<u64, u64>")]
pub struct CountHistogram {
    counts: BTreeMap<u64, u64>,
    total: u64,
}

impl From<BTreeMap<u64, u64>> for CountHistogram {
    fn from(mut counts: BTreeMap<u64, u64>) -> Self {
        counts.retain(|_, r| *r > 0);
        let total = counts.values().sum();
        Self { counts, total }
    }
}

impl From<CountHistogram> for BTreeMap<u64, u64> {
    fn from(h: CountHistogram) -> Self {
        h.counts
    }
}

impl FromIterator<u64> for CountHistogram {
    fn from_iter<I: IntoIterator<Item = u64>>(iter: I) -> Self {
        let mut h = Self::new();
        for v in iter {
            h.add(v);
        }
        h
    }
}

impl CountHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, events: u64) {
        self.add_runs(events, 1);
    }

    pub fn add_runs(&mut self, events: u64, runs: u64) {
        if runs > 0 {
            *self.counts.entry(events).or_default() += runs;
            self.total += runs;
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Runs that registered exactly `events` events.
    pub fn get(&self, events: u64) -> u64 {
        self.counts.get(&events).copied().unwrap_or(0)
    }

    /// Non-empty bins in increasing event order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts.iter().map(|(&e, &r)| (e, r))
    }

    pub fn max_events(&self) -> Option<u64> {
        self.counts.keys().next_back().copied()
    }

    pub fn mean(&self) -> f64 {
        if self.total == 0 {
            return f64::NAN;
        }
        let sum: u64 = self.iter().map(|(e, r)| e * r).sum();
        sum as f64 / self.total as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.total < 2 {
            return 0.0;
        }
        let m = self.mean();
        let ss: f64 = self.iter().map(|(e, r)| r as f64 * (e as f64 - m).powi(2)).sum();
        ss / (self.total - 1) as f64
    }

    /// Run counts for bins `0..len`.
    pub fn dense(&self, len: usize) -> Vec<u64> {
        (0..len as u64).map(|e| self.get(e)).collect()
    }

    /// CSV with columns `events,runs`, one row per non-empty bin.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["events", "runs"])?;
        for (e, r) in self.iter() {
            w.write_record([e.to_string(), r.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["events", "runs"] {
            return Err(Error::Parse(format!(
                "expected header 'events,runs', got '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut h = Self::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<u64> {
                let raw = rec.get(i).unwrap_or("");
                raw.parse::<u64>().map_err(|_| {
                    Error::Parse(format!("row {}: expected a non-negative integer, got '{raw}'", line + 1))
                })
            };
            h.add_runs(parse(0)?, parse(1)?);
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    /// Mean detected events.
    pub mean: f64,
}

/// Poisson mixture over the number of stored excitations; component 0 is the
/// ungated one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    components: Vec<MixtureComponent>,
}

impl MixtureModel {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return domain("mixture needs at least one component");
        }
        let mut v = Vec::new();
        for (k, c) in components.iter().enumerate() {
            if !(c.weight >= 0.0) {
                v.push(format!("component {k}: weight must be >= 0 (got {})", c.weight));
            }
            if !(c.mean >= 0.0 && c.mean.is_finite()) {
                v.push(format!("component {k}: mean must be finite and >= 0 (got {})", c.mean));
            }
        }
        let sum: f64 = components.iter().map(|c| c.weight).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            v.push(format!("weights must sum to 1 (got {sum})"));
        }
        if !v.is_empty() {
            return Err(Error::InvalidConfig(v));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn ungated_weight(&self) -> f64 {
        self.components[0].weight
    }

    pub fn gated_weight(&self) -> f64 {
        self.components[1..].iter().map(|c| c.weight).sum()
    }

    /// Composition of the gated sub-ensemble: `w_k / (1 - w_0)` for `k >= 1`.
    pub fn conditional_gated_weights(&self) -> Vec<f64> {
        let g = self.gated_weight();
        self.components[1..].iter().map(|c| if g > 0.0 { c.weight / g } else { 0.0 }).collect()
    }

    pub fn pmf(&self, events: u64) -> f64 {
        self.components.iter().map(|c| c.weight * poisson_pmf(events, c.mean)).sum()
    }

    fn gated_cdf(&self, tau: u64) -> f64 {
        self.components[1..].iter().map(|c| c.weight * poisson_cdf(tau, c.mean)).sum::<f64>() / self.gated_weight()
    }

    fn brightest_mean(&self) -> f64 {
        self.components.iter().map(|c| c.mean).fold(0.0, f64::max)
    }

    fn is_degenerate(&self) -> bool {
        let m0 = self.components[0].mean;
        self.components.iter().all(|c| c.mean == m0)
    }
}

/// Mixture for `n_stored` mean stored excitations (Poisson, capped at `cap`),
/// each attenuating the ungated mean `mu0` by `exp(-od_st)`.
pub fn mixture_from_params(n_stored: f64, cap: u32, od_st: f64, mu0: f64) -> Result<MixtureModel> {
    if !(n_stored >= 0.0 && n_stored.is_finite()) {
        return domain(format!("n_stored must be finite and >= 0 (got {n_stored})"));
    }
    if !(od_st >= 0.0) {
        return domain(format!("od_st must be >= 0 (got {od_st})"));
    }
    if !(mu0 > 0.0 && mu0.is_finite()) {
        return domain(format!("mu0 must be finite and > 0 (got {mu0})"));
    }
    if cap < 1 {
        return domain("cap must be >= 1");
    }
    if n_stored == 0.0 {
        return MixtureModel::new(vec![MixtureComponent { weight: 1.0, mean: mu0 }]);
    }
    let mut weights = poisson_pmfs(n_stored, cap as usize);
    weights.push(poisson_upper_tail(cap as u64, n_stored));
    let components = weights
        .into_iter()
        .enumerate()
        .map(|(k, weight)| MixtureComponent { weight, mean: mu0 * (-(k as f64) * od_st).exp() })
        .collect();
    MixtureModel::new(components)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRow {
    pub events: u64,
    pub observed: u64,
    pub model_total: f64,
    pub model_gated: f64,
    pub model_ungated: f64,
}

/// Observed histogram split into the expected gated and ungated run counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub total: u64,
    pub rows: Vec<DecompositionRow>,
    /// Pearson statistic over bins pooled to at least 5 expected runs.
    pub chi_square: f64,
    pub dof: u64,
    pub p_value: f64,
}

impl Decomposition {
    pub fn gated_mass(&self) -> f64 {
        self.rows.iter().map(|r| r.model_gated).sum()
    }

    pub fn ungated_mass(&self) -> f64 {
        self.rows.iter().map(|r| r.model_ungated).sum()
    }

    /// Residuals `observed - model_total` per bin.
    pub fn residuals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.observed as f64 - r.model_total).collect()
    }

    /// Threshold chosen on the data rather than the model: the gated
    /// histogram is the observed one minus the modeled ungated part (clamped
    /// at zero), the ungated histogram is the modeled ungated part.
    pub fn empirical_threshold(&self) -> Result<ThresholdResult> {
        let gated: Vec<f64> = self.rows.iter().map(|r| (r.observed as f64 - r.model_ungated).max(0.0)).collect();
        let ungated: Vec<f64> = self.rows.iter().map(|r| r.model_ungated).collect();
        threshold_from_histograms(&gated, &ungated)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["events", "observed", "model_total", "model_gated", "model_ungated"])?;
        for r in &self.rows {
            w.write_record([
                r.events.to_string(),
                r.observed.to_string(),
                r.model_total.to_string(),
                r.model_gated.to_string(),
                r.model_ungated.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rows only; the goodness-of-fit fields are recomputed by [`decompose`].
    pub fn read_rows_csv<R: Read>(reader: R) -> Result<Vec<DecompositionRow>> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.deserialize() {
            rows.push(rec?);
        }
        Ok(rows)
    }
}

/// Expected per-bin run counts of the gated and ungated parts of `observed`
/// under `model`, plus a goodness-of-fit test. The last row absorbs the model
/// mass beyond it, so each column sums to its model total.
pub fn decompose(observed: &CountHistogram, model: &MixtureModel) -> Result<Decomposition> {
    if observed.total() == 0 {
        return Err(Error::InsufficientData("empty histogram".into()));
    }
    let total = observed.total() as f64;
    let last = observed.max_events().unwrap_or(0).max(poisson_quantile(1.0 - 1e-13, model.brightest_mean()));

    let mut rows = Vec::with_capacity(last as usize + 1);
    let mut cum_gated = 0.0;
    let mut cum_ungated = 0.0;
    let w0 = model.ungated_weight();
    let m0 = model.components[0].mean;
    for events in 0..=last {
        let (ungated, gated) = if events < last {
            let u = w0 * poisson_pmf(events, m0);
            let g: f64 = model.components[1..].iter().map(|c| c.weight * poisson_pmf(events, c.mean)).sum();
            (u, g)
        } else {
            let u = w0 * poisson_upper_tail(events, m0);
            let g: f64 = model.components[1..].iter().map(|c| c.weight * poisson_upper_tail(events, c.mean)).sum();
            (u, g)
        };
        cum_gated += gated;
        cum_ungated += ungated;
        rows.push(DecompositionRow {
            events,
            observed: observed.get(events),
            model_total: total * (gated + ungated),
            model_gated: total * gated,
            model_ungated: total * ungated,
        });
    }
    debug_assert!((cum_gated + cum_ungated - 1.0).abs() < 1e-9);

    let (chi_square, bins) = pooled_chi_square(&rows);
    let dof = bins.saturating_sub(1) as u64;
    let p_value = if dof == 0 {
        1.0
    } else {
        let chi = ChiSquared::new(dof as f64).map_err(|e| Error::Domain(e.to_string()))?;
        1.0 - chi.cdf(chi_square)
    };
    Ok(Decomposition { total: observed.total(), rows, chi_square, dof, p_value })
}

/// Pool adjacent bins left to right until each holds at least
/// [`GOF_MIN_EXPECTED`] expected runs; a short remainder merges into the last
/// pool.
fn pooled_chi_square(rows: &[DecompositionRow]) -> (f64, usize) {
    let mut pools: Vec<(f64, f64)> = Vec::new();
    let (mut exp, mut obs) = (0.0, 0.0);
    for r in rows {
        exp += r.model_total;
        obs += r.observed as f64;
        if exp >= GOF_MIN_EXPECTED {
            pools.push((obs, exp));
            exp = 0.0;
            obs = 0.0;
        }
    }
    if exp > 0.0 || obs > 0.0 {
        match pools.last_mut() {
            Some(last) => {
                last.0 += obs;
                last.1 += exp;
            }
            None => pools.push((obs, exp)),
        }
    }
    let chi = pools.iter().filter(|(_, e)| *e > 0.0).map(|(o, e)| (o - e).powi(2) / e).sum();
    (chi, pools.len())
}

/// Decision quality of one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    /// "Excitation present" iff detected events <= `tau`.
    pub tau: u64,
    /// Prior-weighted single-shot accuracy.
    pub fidelity: f64,
    pub p_detect_given_gated: f64,
    pub p_reject_given_ungated: f64,
    /// Unweighted mean of the two conditional success probabilities.
    pub balanced_accuracy: f64,
    /// False when the gated and ungated count laws coincide.
    pub discriminating: bool,
    /// Set when the fidelity falls below both prior weights.
    pub below_priors: bool,
}

impl ThresholdResult {
    fn new(tau: u64, w_gated: f64, p_detect: f64, p_reject: f64, discriminating: bool) -> Self {
        let w0 = 1.0 - w_gated;
        let fidelity = w_gated * p_detect + w0 * p_reject;
        Self {
            tau,
            fidelity,
            p_detect_given_gated: p_detect,
            p_reject_given_ungated: p_reject,
            balanced_accuracy: 0.5 * (p_detect + p_reject),
            discriminating,
            below_priors: fidelity < w_gated.min(w0),
        }
    }
}

/// Fidelity of threshold `tau` under `model`.
pub fn threshold_fidelity(model: &MixtureModel, tau: u64) -> Result<ThresholdResult> {
    let wg = model.gated_weight();
    if !(wg > 0.0) {
        return domain("model has no gated component with positive weight");
    }
    let p_detect = model.gated_cdf(tau);
    let p_reject = 1.0 - poisson_cdf(tau, model.components[0].mean);
    Ok(ThresholdResult::new(tau, wg, p_detect, p_reject, !model.is_degenerate()))
}

/// Largest threshold examined by [`optimal_threshold`].
pub fn threshold_scan_limit(model: &MixtureModel) -> u64 {
    poisson_quantile(SCAN_QUANTILE, model.brightest_mean())
}

/// Threshold with the highest fidelity; ties go to the smaller threshold.
///
/// When every component has the same mean the counts carry no information:
/// the result is the better trivial rule (always "present" if the gated prior
/// dominates, else always "absent") with fidelity `max(w0, 1 - w0)`, flagged
/// as non-discriminating.
pub fn optimal_threshold(model: &MixtureModel) -> Result<ThresholdResult> {
    let wg = model.gated_weight();
    if !(wg > 0.0) {
        return domain("model has no gated component with positive weight");
    }
    let limit = threshold_scan_limit(model);
    if model.is_degenerate() {
        let w0 = model.ungated_weight();
        return Ok(if wg > w0 {
            ThresholdResult::new(limit, wg, 1.0, 0.0, false)
        } else {
            ThresholdResult::new(0, wg, 0.0, 1.0, false)
        });
    }
    let mut best = threshold_fidelity(model, 0)?;
    for tau in 1..=limit {
        let r = threshold_fidelity(model, tau)?;
        if r.fidelity > best.fidelity {
            best = r;
        }
    }
    Ok(best)
}

/// Best threshold for two explicit (possibly fractional) run-count
/// histograms indexed by event count. Priors are the histogram masses.
pub fn threshold_from_histograms(gated: &[f64], ungated: &[f64]) -> Result<ThresholdResult> {
    let len = gated.len().max(ungated.len());
    let at = |h: &[f64], i: usize| h.get(i).copied().unwrap_or(0.0);
    let g_total: f64 = gated.iter().sum();
    let u_total: f64 = ungated.iter().sum();
    if !(g_total > 0.0 && u_total > 0.0) {
        return Err(Error::InsufficientData("both histograms need positive mass".into()));
    }
    let wg = g_total / (g_total + u_total);
    let mut best: Option<ThresholdResult> = None;
    let (mut g_cum, mut u_cum) = (0.0, 0.0);
    for tau in 0..len {
        g_cum += at(gated, tau);
        u_cum += at(ungated, tau);
        let r = ThresholdResult::new(tau as u64, wg, g_cum / g_total, 1.0 - u_cum / u_total, true);
        if best.is_none_or(|b| r.fidelity > b.fidelity) {
            best = Some(r);
        }
    }
    best.ok_or_else(|| Error::InsufficientData("empty histograms".into()))
}

/// Index-of-dispersion test for Poissonian counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionTest {
    /// Sample variance over sample mean.
    pub index: f64,
    /// Two-sided Monte Carlo p-value.
    pub p_value: f64,
    /// `p_value >= 0.05`.
    pub passes: bool,
    pub n_null: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispersionOptions {
    /// Simulated null histograms.
    pub n_null: u64,
    pub seed: u64,
}

impl Default for DispersionOptions {
    fn default() -> Self {
        Self { n_null: 999, seed: 0 }
    }
}

/// Compare the index of dispersion of `hist` with its distribution over
/// Poisson samples of the same size and mean.
pub fn poissonness_test(hist: &CountHistogram, options: DispersionOptions) -> Result<DispersionTest> {
    if hist.total() < MIN_DISPERSION_RUNS {
        return Err(Error::InsufficientData(format!(
            "dispersion test needs at least {MIN_DISPERSION_RUNS} runs (got {})",
            hist.total()
        )));
    }
    if options.n_null < 1 {
        return domain("n_null must be >= 1");
    }
    let mean = hist.mean();
    if mean == 0.0 {
        return Err(Error::InsufficientData("no events registered in any run".into()));
    }
    let index = hist.variance() / mean;
    let n = hist.total();
    let law = Poisson::new(mean).map_err(|e| Error::Domain(e.to_string()))?;
    let null: Vec<f64> = (0..options.n_null)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(options.seed, rng::domain::DISPERSION_NULL, r);
            let (mut s, mut ss) = (0.0, 0.0);
            for _ in 0..n {
                let x: f64 = law.sample(&mut rng);
                s += x;
                ss += x * x;
            }
            let m = s / n as f64;
            if m == 0.0 {
                return 1.0;
            }
            let var = (ss - n as f64 * m * m) / (n - 1) as f64;
            var / m
        })
        .collect();
    let below = null.iter().filter(|&&d| d <= index).count() as f64;
    let above = null.iter().filter(|&&d| d >= index).count() as f64;
    let denom = options.n_null as f64 + 1.0;
    let p_value = (2.0 * ((below + 1.0) / denom).min((above + 1.0) / denom)).min(1.0);
    Ok(DispersionTest { index, p_value, passes: p_value >= 0.05, n_null: options.n_null })
}
