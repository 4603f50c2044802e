//! Closed-form transistor models.
//!
//! Contrast is always a dimensionless fraction (never a percentage); photon
//! numbers are means per pulse or per detection window.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::stats::{poisson_pmfs, poisson_upper_tail};

/// Default number of gate excitations the medium can hold at once.
pub const DEFAULT_CAP: u32 = 3;

/// Slack below zero tolerated by [`stored_mean`] before it reports an
/// inconsistent measurement.
pub const STORED_MEAN_TOL: f64 = 1e-9;

/// Physical constants of the transistor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransistorParams {
    /// Source optical depth caused by one incoming gate photon.
    pub od_sp: f64,
    /// Source optical depth caused by one stored gate excitation.
    pub od_st: f64,
    /// Blockade capacity: the most gate excitations stored at once.
    pub cap: u32,
    /// Gate absorption on the intermediate state.
    pub a_ge: f64,
    /// Overall photon detection efficiency.
    pub eta_det: f64,
}

impl TransistorParams {
    /// Values for the 30 µs integration window.
    pub fn paper_30us() -> Self {
        Self { od_sp: 0.75, od_st: 2.2, cap: DEFAULT_CAP, a_ge: 0.15, eta_det: 0.31 }
    }

    /// Effective values for the 90 µs window, where excitations partially fly
    /// out of the source volume during detection.
    pub fn paper_90us() -> Self {
        Self { od_sp: 0.45, od_st: 0.94, ..Self::paper_30us() }
    }

    pub fn od(&self, mode: GateMode) -> f64 {
        match mode {
            GateMode::Incoming => self.od_sp,
            GateMode::Stored => self.od_st,
        }
    }

    /// Every violated invariant, as human-readable messages.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.od_sp >= 0.0 && self.od_sp.is_finite()) {
            v.push(format!("od_sp must be finite and >= 0 (got {})", self.od_sp));
        }
        if !(self.od_st >= 0.0 && self.od_st.is_finite()) {
            v.push(format!("od_st must be finite and >= 0 (got {})", self.od_st));
        }
        if self.cap < 1 {
            v.push("cap must be >= 1 (got 0)".to_string());
        }
        if !(0.0..1.0).contains(&self.a_ge) {
            v.push(format!("a_ge must lie in [0, 1) (got {})", self.a_ge));
        }
        if !(self.eta_det > 0.0 && self.eta_det <= 1.0) {
            v.push(format!("eta_det must lie in (0, 1] (got {})", self.eta_det));
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

    /// Soft checks that do not invalidate the parameters.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.od_sp > self.od_st {
            w.push(format!(
                "od_sp ({}) exceeds od_st ({}): an incoming photon attenuates more than a stored excitation",
                self.od_sp, self.od_st
            ));
        }
        w
    }
}

impl Default for TransistorParams {
    fn default() -> Self {
        Self::paper_30us()
    }
}

/// Source self-blockade: transmitted photons `a (1 - exp(-n / b))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationParams {
    /// Largest number of photons the medium transmits per window.
    pub a: f64,
    /// Input photon number at which the self-nonlinear regime sets in.
    pub b: f64,
}

impl SaturationParams {
    pub fn paper() -> Self {
        Self { a: 46.0, b: 70.0 }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.a >= 0.0 && self.a.is_finite()) {
            v.push(format!("saturation a must be finite and >= 0 (got {})", self.a));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            v.push(format!("saturation b must be finite and > 0 (got {})", self.b));
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

    pub fn transfer(&self, n_in: f64) -> f64 {
        transfer(n_in, self)
    }

    /// Fraction of input photons transmitted, `transfer(n) / n`, with the
    /// `n -> 0` limit `a / b`.
    pub fn transmitted_fraction(&self, n_in: f64) -> f64 {
        let x = n_in / self.b;
        if x < 1e-8 {
            self.a / self.b * (1.0 - 0.5 * x)
        } else {
            self.a * -(-x).exp_m1() / n_in
        }
    }
}

impl Default for SaturationParams {
    fn default() -> Self {
        Self::paper()
    }
}

/// Mean input and output photon numbers of one beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonCounts {
    pub mean_in: f64,
    pub mean_out: f64,
    /// Set when `mean_out > mean_in` was explicitly accepted as a measurement
    /// artifact.
    pub artifact: bool,
}

impl PhotonCounts {
    /// Rejects negative means and outputs exceeding inputs.
    pub fn new(mean_in: f64, mean_out: f64) -> Result<Self> {
        let c = Self::with_artifact(mean_in, mean_out)?;
        if c.artifact {
            return Err(Error::InconsistentMeasurement(format!(
                "transmitted mean {mean_out} exceeds input mean {mean_in}"
            )));
        }
        Ok(c)
    }

    /// Like [`PhotonCounts::new`] but flags, rather than rejects, an output
    /// exceeding the input.
    pub fn with_artifact(mean_in: f64, mean_out: f64) -> Result<Self> {
        nonneg("mean_in", mean_in)?;
        nonneg("mean_out", mean_out)?;
        Ok(Self { mean_in, mean_out, artifact: mean_out > mean_in })
    }

    /// Stored gate excitations implied by these gate counts.
    pub fn stored_mean(&self, a_ge: f64) -> Result<f64> {
        stored_mean(self.mean_in, self.mean_out, a_ge)
    }
}

/// Which optical depth a gate photon number refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    /// Mean number of gate photons sent into the medium (uses `od_sp`).
    Incoming,
    /// Mean number of gate excitations actually stored (uses `od_st`).
    Stored,
}

impl std::str::FromStr for GateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "incoming" => Ok(Self::Incoming),
            "stored" => Ok(Self::Stored),
            other => Err(Error::Parse(format!("unknown gate mode '{other}' (expected incoming|stored)"))),
        }
    }
}

/// Photon statistics of the gate input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "statistics", rename_all = "lowercase")]
pub enum GateInput {
    /// Poissonian gate with the given mean.
    Coherent { mean: f64, mode: GateMode },
    /// Deterministic number of gate photons or excitations.
    Fock { photons: u32, mode: GateMode },
}

impl GateInput {
    pub fn contrast(&self, params: &TransistorParams) -> Result<f64> {
        match *self {
            GateInput::Coherent { mean, mode } => capped_poisson_contrast(mean, params.od(mode), params.cap),
            GateInput::Fock { photons, mode } => {
                nonneg("od", params.od(mode))?;
                Ok(fock_contrast(photons, params.od(mode), params.cap))
            }
        }
    }
}

fn nonneg(name: &str, x: f64) -> Result<()> {
    if x >= 0.0 && !x.is_nan() {
        Ok(())
    } else {
        domain(format!("{name} must be >= 0 (got {x})"))
    }
}

/// Fractional drop in mean source transmission caused by the gate,
/// `1 - with_gate / no_gate`.
pub fn switch_contrast(with_gate: f64, no_gate: f64) -> Result<f64> {
    nonneg("with_gate", with_gate)?;
    nonneg("no_gate", no_gate)?;
    if no_gate == 0.0 {
        return Err(Error::UndefinedContrast);
    }
    Ok(1.0 - with_gate / no_gate)
}

/// Mean stored gate excitations, `(1 - a_ge) n_in - n_out`.
///
/// Results within [`STORED_MEAN_TOL`] below zero are treated as noise and
/// clamped; anything further below zero is an inconsistent measurement.
pub fn stored_mean(n_in: f64, n_out: f64, a_ge: f64) -> Result<f64> {
    nonneg("n_in", n_in)?;
    nonneg("n_out", n_out)?;
    if !(0.0..1.0).contains(&a_ge) {
        return domain(format!("a_ge must lie in [0, 1) (got {a_ge})"));
    }
    let stored = (1.0 - a_ge) * n_in - n_out;
    if stored < -STORED_MEAN_TOL {
        return Err(Error::InconsistentMeasurement(format!(
            "more gate photons transmitted ({n_out}) than survive absorption ({})",
            (1.0 - a_ge) * n_in
        )));
    }
    Ok(stored.max(0.0))
}

/// Best contrast any switch can reach with a coherent gate of mean `n_gate`:
/// only the vacuum component `e^{-n}` goes unswitched.
pub fn coherent_limit(n_gate: f64) -> Result<f64> {
    nonneg("n_gate", n_gate)?;
    Ok(-(-n_gate).exp_m1())
}

/// Expected contrast for a Poissonian number of gate excitations with mean
/// `mean`, each attenuating the source by `e^{-od}`, of which at most `cap`
/// act at once.
///
/// The infinite Poisson sum is split at the cap: terms below it are summed
/// directly and everything at or above it shares the saturated attenuation
/// `e^{-cap od}`, weighted by the exact Poisson upper tail.
pub fn capped_poisson_contrast(mean: f64, od: f64, cap: u32) -> Result<f64> {
    nonneg("mean", mean)?;
    nonneg("od", od)?;
    if cap < 1 {
        return domain("cap must be >= 1");
    }
    if od.is_infinite() {
        return coherent_limit(mean);
    }
    if mean.is_infinite() {
        return Ok(-(-(cap as f64) * od).exp_m1());
    }
    // Written as sum of p(k) (1 - e^{-min(k,cap) od}) so that the k = 0 term
    // vanishes identically and small means keep full relative precision.
    let pmfs = poisson_pmfs(mean, cap as usize);
    let below: f64 = pmfs.iter().enumerate().skip(1).map(|(k, p)| p * -(-(k as f64) * od).exp_m1()).sum();
    let tail = poisson_upper_tail(cap as u64, mean);
    Ok(below + tail * -(-(cap as f64) * od).exp_m1())
}

/// Contrast versus mean incoming gate photons, optical depth `od_sp` each.
pub fn expected_contrast_incoming(n_gate: f64, od_sp: f64, cap: u32) -> Result<f64> {
    capped_poisson_contrast(n_gate, od_sp, cap)
}

/// Contrast versus mean stored gate excitations, optical depth `od_st` each.
pub fn expected_contrast_stored(n_stored: f64, od_st: f64, cap: u32) -> Result<f64> {
    capped_poisson_contrast(n_stored, od_st, cap)
}

/// Contrast for exactly `k` gate photons (or excitations).
pub fn fock_contrast(k: u32, od: f64, cap: u32) -> f64 {
    -(-(k.min(cap) as f64) * od).exp_m1()
}

/// Mean transmitted source photons for `n_source_in` input photons.
pub fn transfer(n_source_in: f64, sat: &SaturationParams) -> f64 {
    sat.a * -(-n_source_in / sat.b).exp_m1()
}

/// Source photons removed by the gate.
pub fn gain(no_gate_out: f64, with_gate_out: f64) -> f64 {
    no_gate_out - with_gate_out
}

/// Transmitted source photons with the gate on: the saturated transfer curve
/// scaled by `1 - C`.
pub fn with_gate_transfer(
    gate: GateInput,
    params: &TransistorParams,
    sat: &SaturationParams,
    n_source_in: f64,
) -> Result<f64> {
    nonneg("n_source_in", n_source_in)?;
    let c = gate.contrast(params)?;
    Ok((1.0 - c) * transfer(n_source_in, sat))
}

/// Gain expected from the contrast model composed with the source transfer
/// function.
pub fn predicted_gain(
    gate: GateInput,
    params: &TransistorParams,
    sat: &SaturationParams,
    n_source_in: f64,
) -> Result<f64> {
    nonneg("n_source_in", n_source_in)?;
    let c = gate.contrast(params)?;
    Ok(c * transfer(n_source_in, sat))
}

/// Hard-rod estimate of how many blockade spheres fit along the cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    /// `floor(4 sigma_l / r_b) + 1`, rods of length `r_b` packed along the
    /// ±2σ extent of the cloud.
    pub hard_rod: u32,
    /// The capacity actually used: the hard-rod value clamped to the
    /// configured cap.
    pub cap: u32,
}

/// Heuristic blockade capacity. Nothing in the crate calls this implicitly;
/// the configured cap (default 3) stays in force unless the caller adopts the
/// estimate.
pub fn blockade_capacity(
    cloud_length_sigma: f64,
    blockade_radius: f64,
    configured_cap: u32,
) -> Result<CapacityEstimate> {
    if !(cloud_length_sigma > 0.0 && cloud_length_sigma.is_finite()) {
        return domain(format!("cloud length sigma must be finite and > 0 (got {cloud_length_sigma})"));
    }
    if !(blockade_radius > 0.0) {
        return domain(format!("blockade radius must be > 0 (got {blockade_radius})"));
    }
    if configured_cap < 1 {
        return domain("cap must be >= 1");
    }
    let rods = (4.0 * cloud_length_sigma / blockade_radius).floor();
    let hard_rod = if rods >= u32::MAX as f64 { u32::MAX } else { rods as u32 + 1 };
    Ok(CapacityEstimate { hard_rod, cap: hard_rod.min(configured_cap) })
}
