//! Seeded Monte Carlo of the transistor pulse sequence.
//!
//! One run: a coherent gate pulse is stored as up to `cap` Rydberg
//! excitations, each of which stays in the source volume for an exponentially
//! distributed time; source photons then arrive as a Poisson process over the
//! integration window and are transmitted with probability
//! `p_sat * exp(-k_active(t) * od)`, where `p_sat` is the uniform thinning
//! that reproduces the self-blockade transfer curve; transmitted photons are
//! detected with the overall detection efficiency.
//!
//! The number of active excitations is piecewise constant in time, so within
//! each piece the thinned Poisson process is sampled directly as a Poisson
//! count. This is exact in distribution and independent of the photon number.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::CountHistogram;
use crate::error::{domain, Error, Result};
use crate::fitting::{DataPoint, DataSet};
use crate::models::{switch_contrast, GateMode, SaturationParams, TransistorParams};
use crate::rng::{self, StreamRng};
use crate::stats::{poisson_pmfs, poisson_upper_tail};

/// Inputs of one simulated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Mean gate photons per pulse.
    pub n_gate_in: f64,
    /// `Incoming`: every gate photon up to the cap attenuates the source with
    /// `od_sp`; storage losses are already folded into that optical depth and
    /// `a_ge`, `p_store` are not applied. `Stored`: photons survive absorption
    /// with `1 - a_ge`, are stored with `p_store`, and each stored excitation
    /// attenuates with `od_st`.
    pub gate_mode: GateMode,
    /// Storage probability of a gate photon that survived absorption.
    pub p_store: f64,
    pub params: TransistorParams,
    /// Source self-blockade; `None` is a linear medium (`p_sat = 1`).
    pub sat: Option<SaturationParams>,
    /// Source photons per µs.
    pub source_rate: f64,
    /// Integration window, µs.
    pub t_int: f64,
    /// Mean time (µs) before an excitation leaves the source volume; `None`
    /// keeps excitations for the whole window.
    pub retention_tau: Option<f64>,
    pub seed: u64,
}

impl SimConfig {
    /// 30 µs window, coherent gate counted as incoming photons, low source
    /// rate (no self-blockade).
    pub fn paper_30us(seed: u64) -> Self {
        Self {
            n_gate_in: 1.04,
            gate_mode: GateMode::Incoming,
            p_store: 1.0,
            params: TransistorParams::paper_30us(),
            sat: None,
            source_rate: 0.69,
            t_int: 30.0,
            retention_tau: None,
            seed,
        }
    }

    /// 90 µs window with self-blockade, effective optical depths.
    pub fn paper_90us(seed: u64) -> Self {
        let params = TransistorParams::paper_90us();
        let p_store =
            calibrate_p_store(0.75, params.a_ge, params.cap, 0.61).expect("90 µs storage numbers are consistent");
        Self {
            n_gate_in: 0.75,
            gate_mode: GateMode::Incoming,
            p_store,
            params,
            sat: Some(SaturationParams::paper()),
            source_rate: 0.69,
            t_int: 90.0,
            retention_tau: None,
            seed,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.params.violations();
        if !(self.n_gate_in >= 0.0 && self.n_gate_in.is_finite()) {
            v.push(format!("n_gate_in must be finite and >= 0 (got {})", self.n_gate_in));
        }
        if !(0.0..=1.0).contains(&self.p_store) {
            v.push(format!("p_store must lie in [0, 1] (got {})", self.p_store));
        }
        if let Some(sat) = &self.sat {
            v.extend(sat.violations());
        }
        if !(self.source_rate >= 0.0 && self.source_rate.is_finite()) {
            v.push(format!("source_rate must be finite and >= 0 (got {})", self.source_rate));
        }
        if !(self.t_int > 0.0 && self.t_int.is_finite()) {
            v.push(format!("t_int must be finite and > 0 (got {})", self.t_int));
        }
        if let Some(tau) = self.retention_tau {
            if !(tau > 0.0) {
                v.push(format!("retention_tau must be > 0 (got {tau})"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    /// Mean source photons incident per window.
    pub fn source_photons_in(&self) -> f64 {
        self.source_rate * self.t_int
    }

    /// Uniform self-blockade thinning `p_sat`.
    pub fn saturation_thinning(&self) -> f64 {
        match &self.sat {
            Some(sat) => sat.transmitted_fraction(self.source_photons_in()).min(1.0),
            None => 1.0,
        }
    }

    /// Optical depth of one acting gate excitation.
    pub fn excitation_od(&self) -> f64 {
        self.params.od(self.gate_mode)
    }

    /// Mean of the uncapped number of acting gate excitations.
    pub fn uncapped_excitation_mean(&self) -> f64 {
        match self.gate_mode {
            GateMode::Incoming => self.n_gate_in,
            GateMode::Stored => self.n_gate_in * (1.0 - self.params.a_ge) * self.p_store,
        }
    }

    /// Same experiment without gate photons.
    pub fn reference(&self) -> Self {
        Self { n_gate_in: 0.0, ..self.clone() }
    }
}

/// Counts from one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcome {
    /// Gate excitations acting on the source (never above the cap).
    pub k_stored: u32,
    pub gate_detected: u64,
    pub source_detected: u64,
    /// Source photons leaving the medium, before the detector.
    pub source_transmitted: u64,
}

/// Aggregate of many independent runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub n_runs: u64,
    /// Detected source photons per run.
    pub histogram: CountHistogram,
    pub mean_source_detected: f64,
    pub mean_source_transmitted: f64,
    pub mean_gate_detected: f64,
    pub mean_stored: f64,
    /// Detected source photon histogram of the runs with exactly `k` stored
    /// excitations, indexed by `k`.
    pub by_stored: Vec<CountHistogram>,
    /// Contrast against a gate-free reference ensemble, when one was run.
    pub contrast_vs_reference: Option<f64>,
}

impl EnsembleResult {
    /// Runs with at least one stored excitation.
    pub fn gated_runs(&self) -> u64 {
        self.by_stored.iter().skip(1).map(CountHistogram::total).sum()
    }

    /// Standard error of `mean_source_detected`.
    pub fn standard_error(&self) -> f64 {
        (self.histogram.variance() / self.n_runs as f64).sqrt()
    }
}

struct GateDraw {
    acting: u32,
    transmitted: u64,
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("finite positive mean");
    let x: f64 = d.sample(rng);
    x as u64
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("p in (0, 1)").sample(rng)
}

fn draw_gate<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> GateDraw {
    let cap = config.params.cap;
    let photons = poisson(config.n_gate_in, rng);
    match config.gate_mode {
        GateMode::Incoming => {
            let acting = photons.min(cap as u64) as u32;
            GateDraw { acting, transmitted: photons - acting as u64 }
        }
        GateMode::Stored => {
            let survivors = binomial(photons, 1.0 - config.params.a_ge, rng);
            let candidates = binomial(survivors, config.p_store, rng);
            let acting = candidates.min(cap as u64) as u32;
            GateDraw { acting, transmitted: survivors - acting as u64 }
        }
    }
}

/// Number of stored gate excitations in one pulse: Poisson photons, thinned by
/// absorption and storage, capped by blockade.
pub fn draw_stored<R: Rng + ?Sized>(n_gate_in: f64, a_ge: f64, p_store: f64, cap: u32, rng: &mut R) -> u32 {
    let photons = poisson(n_gate_in, rng);
    let survivors = binomial(photons, 1.0 - a_ge, rng);
    binomial(survivors, p_store, rng).min(cap as u64) as u32
}

/// Simulate one pulse sequence. The configuration is assumed valid.
pub fn simulate_run<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> RunOutcome {
    let gate = draw_gate(config, rng);
    simulate_source(config, gate.acting, gate.transmitted, rng)
}

/// Source window with a forced number of acting excitations.
pub fn simulate_run_with_stored<R: Rng + ?Sized>(config: &SimConfig, k: u32, rng: &mut R) -> RunOutcome {
    simulate_source(config, k, 0, rng)
}

fn simulate_source<R: Rng + ?Sized>(config: &SimConfig, k: u32, gate_transmitted: u64, rng: &mut R) -> RunOutcome {
    let eta = config.params.eta_det;
    let gate_detected = binomial(gate_transmitted, eta, rng);
    let t_int = config.t_int;

    // Departure times, clipped to the window and sorted.
    let mut departures: Vec<f64> = (0..k)
        .map(|_| match config.retention_tau {
            Some(tau) => {
                let e: f64 = Exp1.sample(rng);
                (tau * e).min(t_int)
            }
            None => t_int,
        })
        .collect();
    departures.sort_by(f64::total_cmp);

    let rate = config.source_rate * config.saturation_thinning();
    let od = config.excitation_od();
    let mut transmitted = 0;
    let mut start = 0.0;
    let mut active = k;
    for end in departures.into_iter().chain(std::iter::once(t_int)) {
        let len = end - start;
        if len > 0.0 {
            transmitted += poisson(rate * len * (-(active as f64) * od).exp(), rng);
        }
        start = end;
        active = active.saturating_sub(1);
    }
    let source_detected = binomial(transmitted, eta, rng);

    RunOutcome { k_stored: k, gate_detected, source_detected, source_transmitted: transmitted }
}

fn run_all(config: &SimConfig, n_runs: u64, domain: u64) -> Vec<RunOutcome> {
    (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let mut rng: StreamRng = rng::stream(config.seed, domain, i);
            simulate_run(config, &mut rng)
        })
        .collect()
}

fn aggregate(config: &SimConfig, runs: &[RunOutcome]) -> EnsembleResult {
    let n = runs.len() as u64;
    let mut histogram = CountHistogram::new();
    let mut by_stored = vec![CountHistogram::new(); config.params.cap as usize + 1];
    let (mut det, mut tx, mut gate, mut stored) = (0u64, 0u64, 0u64, 0u64);
    for r in runs {
        histogram.add(r.source_detected);
        by_stored[r.k_stored as usize].add(r.source_detected);
        det += r.source_detected;
        tx += r.source_transmitted;
        gate += r.gate_detected;
        stored += r.k_stored as u64;
    }
    let nf = n as f64;
    EnsembleResult {
        n_runs: n,
        histogram,
        mean_source_detected: det as f64 / nf,
        mean_source_transmitted: tx as f64 / nf,
        mean_gate_detected: gate as f64 / nf,
        mean_stored: stored as f64 / nf,
        by_stored,
        contrast_vs_reference: None,
    }
}

/// Run `n_runs` independent experiments. Run `i` draws from stream
/// `(config.seed, ENSEMBLE, i)`, and all sums are over integers, so the result
/// is bit-identical for any thread count.
pub fn simulate_ensemble(config: &SimConfig, n_runs: u64) -> Result<EnsembleResult> {
    config.validate()?;
    if n_runs < 1 {
        return domain("n_runs must be >= 1");
    }
    Ok(aggregate(config, &run_all(config, n_runs, rng::domain::ENSEMBLE)))
}

/// Like [`simulate_ensemble`], plus a gate-free reference ensemble (its own
/// streams) to report the switch contrast. Returns `(gated, reference)`.
pub fn simulate_with_reference(config: &SimConfig, n_runs: u64) -> Result<(EnsembleResult, EnsembleResult)> {
    let mut gated = simulate_ensemble(config, n_runs)?;
    let reference_cfg = config.reference();
    let reference = aggregate(&reference_cfg, &run_all(&reference_cfg, n_runs, rng::domain::REFERENCE));
    gated.contrast_vs_reference = Some(switch_contrast(gated.mean_source_detected, reference.mean_source_detected)?);
    Ok((gated, reference))
}

/// Mean of a resample of a histogram with the same number of runs, drawn as
/// a multinomial over its bins.
fn resampled_mean<R: Rng + ?Sized>(hist: &CountHistogram, rng: &mut R) -> f64 {
    let total = hist.total();
    let mut remaining_n = total;
    let mut remaining_p = 1.0;
    let mut sum = 0u64;
    for (events, runs) in hist.iter() {
        if remaining_n == 0 {
            break;
        }
        let p = runs as f64 / total as f64;
        let drawn = binomial(remaining_n, (p / remaining_p).min(1.0), rng);
        sum += drawn * events;
        remaining_n -= drawn;
        remaining_p -= p;
    }
    sum as f64 / total as f64
}

/// Bootstrap standard deviation of the contrast between two ensembles.
pub fn bootstrap_contrast_sigma(
    gated: &CountHistogram,
    reference: &CountHistogram,
    n_boot: u64,
    seed: u64,
) -> Result<f64> {
    if n_boot < 2 {
        return domain("n_boot must be >= 2");
    }
    let samples: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = rng::stream(seed, rng::domain::BOOTSTRAP, b);
            let g = resampled_mean(gated, &mut rng);
            let r = resampled_mean(reference, &mut rng);
            switch_contrast(g, r).ok()
        })
        .collect();
    if samples.len() < 2 {
        return Err(Error::UndefinedContrast);
    }
    Ok(crate::stats::mean_and_var(&samples).1.sqrt())
}

/// Settings for [`contrast_scan`].
#[derive(Debug, Clone, Copy)]
pub struct ScanOptions {
    pub n_runs: u64,
    pub n_boot: u64,
}

/// Contrast versus gate photon number. `configs` must contain a zero-gate
/// reference; every other config yields one `(n_gate_in, contrast, sigma)`
/// point, simulated on its own child seed of the reference seed.
pub fn contrast_scan(configs: &[SimConfig], options: ScanOptions) -> Result<DataSet> {
    let reference_cfg = configs
        .iter()
        .find(|c| c.n_gate_in == 0.0)
        .ok_or_else(|| Error::Domain("contrast scan needs a zero-gate reference config".into()))?;
    let seed = reference_cfg.seed;
    let reference = simulate_ensemble(
        &SimConfig { seed: rng::child_seed(seed, rng::domain::SCAN, 0), ..reference_cfg.clone() },
        options.n_runs,
    )?;
    if reference.mean_source_detected == 0.0 {
        return Err(Error::UndefinedContrast);
    }

    let mut points = Vec::new();
    for (i, cfg) in configs.iter().enumerate().filter(|(_, c)| c.n_gate_in != 0.0) {
        let point_seed = rng::child_seed(seed, rng::domain::SCAN, i as u64 + 1);
        let gated = simulate_ensemble(&SimConfig { seed: point_seed, ..cfg.clone() }, options.n_runs)?;
        let contrast = switch_contrast(gated.mean_source_detected, reference.mean_source_detected)?;
        let sigma = bootstrap_contrast_sigma(&gated.histogram, &reference.histogram, options.n_boot, point_seed)?;
        // A resampling spread of exactly zero would make the point unusable
        // as a weighted observation.
        points.push(DataPoint { x: cfg.n_gate_in, y: contrast, sigma: sigma.max(f64::EPSILON) });
    }
    Ok(DataSet { points, label: "contrast-scan".into() })
}

/// Distribution of acting excitations `P(k)`, `k = 0..=cap`.
pub fn stored_distribution(config: &SimConfig) -> Vec<f64> {
    let cap = config.params.cap;
    let mean = config.uncapped_excitation_mean();
    let mut p = poisson_pmfs(mean, cap as usize);
    p.push(poisson_upper_tail(cap as u64, mean));
    p
}

/// `E[min(K, cap)]` for `K ~ Poisson(mean)`.
pub fn capped_poisson_mean(mean: f64, cap: u32) -> f64 {
    let p = poisson_pmfs(mean, cap as usize);
    let below: f64 = p.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    below + cap as f64 * poisson_upper_tail(cap as u64, mean)
}

/// Window-averaged source transmission factor with `k` excitations, each
/// present with probability `exp(-t / tau)` at time `t`:
/// `(1/T) ∫ (1 - (1 - e^{-od}) e^{-t/tau})^k dt`, expanded binomially.
pub fn window_transmission(k: u32, od: f64, retention_tau: Option<f64>, t_int: f64) -> f64 {
    let Some(tau) = retention_tau else {
        return (-(k as f64) * od).exp();
    };
    let c = -(-od).exp_m1();
    let x = t_int / tau;
    let mut binom = 1.0;
    let mut sum = 0.0;
    for j in 0..=k {
        let avg = if j == 0 {
            1.0
        } else {
            let jx = j as f64 * x;
            -(-jx).exp_m1() / jx
        };
        sum += binom * (-c).powi(j as i32) * avg;
        binom = binom * (k - j) as f64 / (j + 1) as f64;
    }
    sum
}

/// Exact ensemble contrast implied by the simulation model, conditioning on
/// the capped excitation number.
pub fn analytic_contrast(config: &SimConfig) -> f64 {
    let od = config.excitation_od();
    let transmission: f64 = stored_distribution(config)
        .iter()
        .enumerate()
        .map(|(k, p)| p * window_transmission(k as u32, od, config.retention_tau, config.t_int))
        .sum();
    1.0 - transmission
}

/// Retention time that turns an instantaneous single-excitation optical depth
/// `od_instant` into an effective window-averaged one `od_effective`, i.e.
/// `window_transmission(1, od_instant, tau, t_int) = exp(-od_effective)`.
pub fn calibrate_retention_tau(od_instant: f64, od_effective: f64, t_int: f64) -> Result<f64> {
    if !(od_effective > 0.0 && od_effective < od_instant && od_instant.is_finite()) {
        return domain(format!("need 0 < od_effective < od_instant (got {od_effective}, {od_instant})"));
    }
    if !(t_int > 0.0) {
        return domain("t_int must be > 0");
    }
    // With x = t_int / tau: (1 - e^{-x}) / x = (1 - e^{-od_eff}) / (1 - e^{-od_inst}).
    let target = (-od_effective).exp_m1() / (-od_instant).exp_m1();
    let avg = |x: f64| -(-x).exp_m1() / x;
    let (mut lo, mut hi) = (1e-12f64, 1.0f64);
    while avg(hi) > target {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::NonConvergence("retention time bracket".into()));
        }
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if avg(mid) > target {
            lo = mid
        } else {
            hi = mid
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    Ok(t_int / (lo * hi).sqrt())
}

/// Storage probability giving a mean of `target_stored` capped stored
/// excitations for `n_gate_in` incoming photons.
pub fn calibrate_p_store(n_gate_in: f64, a_ge: f64, cap: u32, target_stored: f64) -> Result<f64> {
    if !(n_gate_in > 0.0) || !(0.0..1.0).contains(&a_ge) || cap < 1 {
        return domain("need n_gate_in > 0, a_ge in [0, 1), cap >= 1");
    }
    if !(target_stored >= 0.0 && target_stored < cap as f64) {
        return domain(format!("target stored mean must lie in [0, cap) (got {target_stored})"));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while capped_poisson_mean(hi, cap) < target_stored {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if capped_poisson_mean(mid, cap) < target_stored {
            lo = mid
        } else {
            hi = mid
        }
    }
    let lambda = 0.5 * (lo + hi);
    let p = lambda / ((1.0 - a_ge) * n_gate_in);
    if p > 1.0 {
        return Err(Error::InconsistentMeasurement(format!(
            "storing {target_stored} on average needs p_store = {p:.4} > 1"
        )));
    }
    Ok(p)
}
