//! Config files (TOML) and their resolution into run settings.
//!
//! Every key is optional; missing keys take the 30 µs defaults. The presence
//! of a `[saturation]` section switches on source self-blockade.

use std::path::Path;

use serde::{Deserialize, Serialize};
use spt_core::fitting::MIN_BOOT;
use spt_core::models::{GateMode, SaturationParams, TransistorParams};
use spt_core::montecarlo::{calibrate_retention_tau, SimConfig};

use crate::failure::Failure;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    transistor: TransistorSection,
    saturation: Option<SaturationParams>,
    #[serde(default)]
    simulation: SimulationSection,
    #[serde(default)]
    scan: ScanSection,
    #[serde(default)]
    fit: FitSection,
    #[serde(default)]
    detection: DetectionSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransistorSection {
    od_sp: Option<f64>,
    od_st: Option<f64>,
    cap: Option<u32>,
    a_ge: Option<f64>,
    eta_det: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationSection {
    n_gate_in: Option<f64>,
    gate_mode: Option<GateMode>,
    p_store: Option<f64>,
    source_rate: Option<f64>,
    t_int: Option<f64>,
    retention_tau: Option<f64>,
    od_instant: Option<f64>,
    seed: Option<u64>,
    runs: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanSection {
    n_gate_in: Option<Vec<f64>>,
    n_source_in: Option<Vec<f64>>,
    n_boot: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitSection {
    mode: Option<GateMode>,
    n_boot: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionSection {
    n_stored: Option<f64>,
    mu0: Option<f64>,
    n_null: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Io(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Failure::Validation(vec![format!("config {}: {}", path.display(), e.message())]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSettings {
    pub n_gate_in: f64,
    pub gate_mode: GateMode,
    pub p_store: f64,
    pub source_rate: f64,
    pub t_int: f64,
    pub retention_tau: Option<f64>,
    /// Instantaneous optical depth of one acting excitation. When set, the
    /// configured optical depth is the window-averaged one and a retention
    /// time is calibrated to connect the two.
    pub od_instant: Option<f64>,
    pub seed: u64,
    pub runs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanSettings {
    pub n_gate_in: Vec<f64>,
    pub n_source_in: Vec<f64>,
    pub n_boot: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSettings {
    pub mode: GateMode,
    pub n_boot: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionSettings {
    pub n_stored: f64,
    /// Mean detected counts without gate; estimated from data when absent.
    pub mu0: Option<f64>,
    pub n_null: u64,
}

/// Fully resolved settings: file values over defaults, flags over both.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub transistor: TransistorParams,
    pub saturation: Option<SaturationParams>,
    pub simulation: SimulationSettings,
    pub scan: ScanSettings,
    pub fit: FitSettings,
    pub detection: DetectionSettings,
}

/// Flag values that take precedence over the config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<u64>,
    pub mode: Option<GateMode>,
}

fn default_gate_scan() -> Vec<f64> {
    (1..=14).map(|i| 0.25 * i as f64).collect()
}

fn default_source_scan() -> Vec<f64> {
    (1..=10).map(|i| 25.0 * i as f64).collect()
}

impl Settings {
    pub fn resolve(file: FileConfig, flags: Overrides) -> Self {
        let d = TransistorParams::paper_30us();
        let t = file.transistor;
        let transistor = TransistorParams {
            od_sp: t.od_sp.unwrap_or(d.od_sp),
            od_st: t.od_st.unwrap_or(d.od_st),
            cap: t.cap.unwrap_or(d.cap),
            a_ge: t.a_ge.unwrap_or(d.a_ge),
            eta_det: t.eta_det.unwrap_or(d.eta_det),
        };
        let ds = SimConfig::paper_30us(0);
        let s = file.simulation;
        let simulation = SimulationSettings {
            n_gate_in: s.n_gate_in.unwrap_or(ds.n_gate_in),
            gate_mode: s.gate_mode.unwrap_or(ds.gate_mode),
            p_store: s.p_store.unwrap_or(ds.p_store),
            source_rate: s.source_rate.unwrap_or(ds.source_rate),
            t_int: s.t_int.unwrap_or(ds.t_int),
            retention_tau: s.retention_tau,
            od_instant: s.od_instant,
            seed: flags.seed.or(s.seed).unwrap_or(0),
            runs: flags.runs.or(s.runs).unwrap_or(250),
        };
        let scan = ScanSettings {
            n_gate_in: file.scan.n_gate_in.unwrap_or_else(default_gate_scan),
            n_source_in: file.scan.n_source_in.unwrap_or_else(default_source_scan),
            n_boot: file.scan.n_boot.unwrap_or(200),
        };
        let fit = FitSettings {
            mode: flags.mode.or(file.fit.mode).unwrap_or(GateMode::Incoming),
            n_boot: file.fit.n_boot.unwrap_or(400),
        };
        let detection = DetectionSettings {
            n_stored: file.detection.n_stored.unwrap_or(0.61),
            mu0: file.detection.mu0,
            n_null: file.detection.n_null.unwrap_or(999),
        };
        Self { transistor, saturation: file.saturation, simulation, scan, fit, detection }
    }

    /// Every violated invariant.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.base_sim_config().violations();
        let s = &self.simulation;
        if s.runs < 1 {
            v.push(format!("runs must be >= 1 (got {})", s.runs));
        }
        if let Some(od_i) = s.od_instant {
            let od_eff = self.transistor.od(s.gate_mode);
            if s.retention_tau.is_some() {
                v.push("retention_tau and od_instant are mutually exclusive".into());
            }
            if !(od_i > od_eff && od_eff > 0.0 && od_i.is_finite()) {
                v.push(format!(
                    "od_instant ({od_i}) must be finite and exceed the effective optical depth ({od_eff}) > 0"
                ));
            }
        }
        for (name, xs) in [("scan.n_gate_in", &self.scan.n_gate_in), ("scan.n_source_in", &self.scan.n_source_in)] {
            if xs.is_empty() {
                v.push(format!("{name} must not be empty"));
            }
            if let Some(bad) = xs.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
                v.push(format!("{name} values must be finite and >= 0 (got {bad})"));
            }
        }
        if self.scan.n_boot < MIN_BOOT {
            v.push(format!("scan.n_boot must be >= {MIN_BOOT} (got {})", self.scan.n_boot));
        }
        if self.fit.n_boot < MIN_BOOT {
            v.push(format!("fit.n_boot must be >= {MIN_BOOT} (got {})", self.fit.n_boot));
        }
        let d = &self.detection;
        if !(d.n_stored >= 0.0 && d.n_stored.is_finite()) {
            v.push(format!("detection.n_stored must be finite and >= 0 (got {})", d.n_stored));
        }
        if let Some(mu0) = d.mu0 {
            if !(mu0 > 0.0 && mu0.is_finite()) {
                v.push(format!("detection.mu0 must be finite and > 0 (got {mu0})"));
            }
        }
        if d.n_null < 1 {
            v.push("detection.n_null must be >= 1 (got 0)".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Failure::Validation(v))
        }
    }

    fn base_sim_config(&self) -> SimConfig {
        let s = &self.simulation;
        SimConfig {
            n_gate_in: s.n_gate_in,
            gate_mode: s.gate_mode,
            p_store: s.p_store,
            params: self.transistor,
            sat: self.saturation,
            source_rate: s.source_rate,
            t_int: s.t_int,
            retention_tau: s.retention_tau,
            seed: s.seed,
        }
    }

    /// Simulation config, with the retention time calibrated when
    /// `od_instant` is set. Settings must be valid.
    pub fn sim_config(&self) -> Result<SimConfig, Failure> {
        let mut cfg = self.base_sim_config();
        if let Some(od_i) = self.simulation.od_instant {
            let od_eff = cfg.params.od(cfg.gate_mode);
            cfg.retention_tau = Some(calibrate_retention_tau(od_i, od_eff, cfg.t_int)?);
            match cfg.gate_mode {
                GateMode::Incoming => cfg.params.od_sp = od_i,
                GateMode::Stored => cfg.params.od_st = od_i,
            }
        }
        Ok(cfg)
    }
}
