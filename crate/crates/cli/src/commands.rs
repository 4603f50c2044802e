//! The pipelines behind each subcommand. Each returns its result files
//! rendered in memory; writing them is left to the caller.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spt_core::detection::{
    decompose, mixture_from_params, optimal_threshold, poissonness_test, CountHistogram, Decomposition,
    DispersionOptions, ThresholdResult,
};
use spt_core::fitting::{fit_od, fit_saturation, BootstrapOptions, DataSet, FitResult};
use spt_core::models::{transfer, GateMode};
use spt_core::montecarlo::{
    analytic_contrast, bootstrap_contrast_sigma, contrast_scan, simulate_ensemble, simulate_with_reference,
    EnsembleResult, ScanOptions, SimConfig,
};
use spt_core::rng;
use spt_core::Error;

use crate::config::Settings;
use crate::failure::Failure;
use crate::output::{entry, json, table, Artifact, Entry, Format};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    ContrastScan,
    GainScan,
    TransferScan,
    Simulate,
    FitOd,
    FitSaturation,
    Detect,
}

impl CommandKind {
    /// File stem of the command's outputs.
    pub fn stem(self) -> &'static str {
        match self {
            CommandKind::ContrastScan => "contrast_scan",
            CommandKind::GainScan => "gain_scan",
            CommandKind::TransferScan => "transfer_scan",
            CommandKind::Simulate => "simulate",
            CommandKind::FitOd => "fit_od",
            CommandKind::FitSaturation => "fit_saturation",
            CommandKind::Detect => "detect",
        }
    }
}

/// Everything that determines a run, as recorded in the provenance sidecar.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: CommandKind,
    pub config_path: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub format: Format,
    pub threads: usize,
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub n_gate_in: f64,
    pub contrast: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub n_source_in: f64,
    pub no_gate_out: f64,
    pub no_gate_sigma: f64,
    pub with_gate_out: f64,
    pub with_gate_sigma: f64,
    pub model_no_gate: f64,
    pub model_with_gate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub n_source_in: f64,
    pub gain: f64,
    pub sigma: f64,
    pub model_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub parameter: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub sse: f64,
    pub n_boot: u64,
    pub skipped_resamples: u64,
    pub converged: bool,
    /// Semicolon-separated fit flags.
    pub flags: String,
}

pub fn execute(manifest: &RunManifest, settings: &Settings) -> Result<Vec<Artifact>, Failure> {
    let f = manifest.format;
    match manifest.command {
        CommandKind::ContrastScan => run_contrast_scan(settings, f),
        CommandKind::TransferScan => run_transfer_scan(settings, f),
        CommandKind::GainScan => run_gain_scan(settings, f),
        CommandKind::Simulate => run_simulate(settings, f),
        CommandKind::FitOd => run_fit_od(settings, required_input(manifest)?, f),
        CommandKind::FitSaturation => run_fit_saturation(settings, required_input(manifest)?, f),
        CommandKind::Detect => run_detect(settings, manifest.input.as_deref(), f),
    }
}

fn required_input(manifest: &RunManifest) -> Result<&Path, Failure> {
    manifest.input.as_deref().ok_or_else(|| Failure::Validation(vec!["--input is required".into()]))
}

fn open(path: &Path) -> Result<std::fs::File, Failure> {
    std::fs::File::open(path).map_err(|e| Failure::Io(format!("cannot open {}: {e}", path.display())))
}

fn run_contrast_scan(settings: &Settings, format: Format) -> Result<Vec<Artifact>, Failure> {
    let base = settings.sim_config()?;
    let mut configs = vec![base.reference()];
    configs.extend(
        settings.scan.n_gate_in.iter().filter(|&&x| x != 0.0).map(|&x| SimConfig { n_gate_in: x, ..base.clone() }),
    );
    let options = ScanOptions { n_runs: settings.simulation.runs, n_boot: settings.scan.n_boot };
    let data = contrast_scan(&configs, options)?;
    let rows: Vec<ContrastRow> =
        data.points.iter().map(|p| ContrastRow { n_gate_in: p.x, contrast: p.y, sigma: p.sigma }).collect();
    Ok(vec![table("contrast_scan", &rows, format)?])
}

fn source_scan(settings: &Settings) -> Result<Vec<TransferRow>, Failure> {
    let base = settings.sim_config()?;
    let eta = base.params.eta_det;
    let runs = settings.simulation.runs;
    let mut rows = Vec::new();
    for (i, &n_in) in settings.scan.n_source_in.iter().enumerate() {
        let seed = rng::child_seed(base.seed, rng::domain::SCAN, i as u64);
        let cfg = SimConfig { source_rate: n_in / base.t_int, seed, ..base.clone() };
        let gated = simulate_ensemble(&cfg, runs)?;
        let reference_seed = rng::child_seed(seed, rng::domain::REFERENCE, 0);
        let reference = simulate_ensemble(&SimConfig { seed: reference_seed, ..cfg.reference() }, runs)?;
        let model_no_gate = match &cfg.sat {
            Some(sat) => transfer(n_in, sat),
            None => n_in,
        };
        rows.push(TransferRow {
            n_source_in: n_in,
            no_gate_out: reference.mean_source_detected / eta,
            no_gate_sigma: reference.standard_error() / eta,
            with_gate_out: gated.mean_source_detected / eta,
            with_gate_sigma: gated.standard_error() / eta,
            model_no_gate,
            model_with_gate: model_no_gate * (1.0 - analytic_contrast(&cfg)),
        });
    }
    Ok(rows)
}

fn run_transfer_scan(settings: &Settings, format: Format) -> Result<Vec<Artifact>, Failure> {
    Ok(vec![table("transfer_scan", &source_scan(settings)?, format)?])
}

fn run_gain_scan(settings: &Settings, format: Format) -> Result<Vec<Artifact>, Failure> {
    let rows: Vec<GainRow> = source_scan(settings)?
        .into_iter()
        .map(|r| GainRow {
            n_source_in: r.n_source_in,
            gain: r.no_gate_out - r.with_gate_out,
            sigma: r.no_gate_sigma.hypot(r.with_gate_sigma),
            model_gain: r.model_no_gate - r.model_with_gate,
        })
        .collect();
    Ok(vec![table("gain_scan", &rows, format)?])
}

#[derive(Serialize)]
struct SimulateJson<'a> {
    config: &'a SimConfig,
    summary: &'a [Entry],
    gated: &'a EnsembleResult,
    reference: &'a EnsembleResult,
}

fn histogram_csv(stem: &str, hist: &CountHistogram) -> Result<Artifact, Failure> {
    let mut bytes = Vec::new();
    hist.write_csv(&mut bytes)?;
    Ok(Artifact { name: format!("{stem}.csv"), bytes })
}

fn run_simulate(settings: &Settings, format: Format) -> Result<Vec<Artifact>, Failure> {
    let cfg = settings.sim_config()?;
    let runs = settings.simulation.runs;
    let (gated, reference) = simulate_with_reference(&cfg, runs)?;
    let sigma = bootstrap_contrast_sigma(&gated.histogram, &reference.histogram, settings.scan.n_boot, cfg.seed)?;
    let mut summary = vec![
        entry("n_runs", runs as f64),
        entry("contrast", gated.contrast_vs_reference.unwrap_or(f64::NAN)),
        entry("contrast_sigma", sigma),
        entry("analytic_contrast", analytic_contrast(&cfg)),
        entry("gated_mean_detected", gated.mean_source_detected),
        entry("gated_standard_error", gated.standard_error()),
        entry("reference_mean_detected", reference.mean_source_detected),
        entry("reference_standard_error", reference.standard_error()),
        entry("mean_stored", gated.mean_stored),
        entry("gated_run_fraction", gated.gated_runs() as f64 / runs as f64),
        entry("mean_gate_detected", gated.mean_gate_detected),
    ];
    if let Some(tau) = cfg.retention_tau {
        summary.push(entry("retention_tau", tau));
    }
    match format {
        Format::Csv => Ok(vec![
            histogram_csv("simulate_gated", &gated.histogram)?,
            histogram_csv("simulate_reference", &reference.histogram)?,
            table("simulate_summary", &summary, format)?,
        ]),
        Format::Json => Ok(vec![json(
            "simulate",
            &SimulateJson { config: &cfg, summary: &summary, gated: &gated, reference: &reference },
        )?]),
    }
}

fn fit_rows(fit: &FitResult) -> Vec<FitRow> {
    let flags = fit
        .flags
        .iter()
        .map(|f| serde_json::to_value(f).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
        .collect::<Vec<_>>()
        .join(";");
    fit.params
        .iter()
        .map(|p| FitRow {
            parameter: p.name.clone(),
            value: p.value,
            ci_low: p.ci_68.0,
            ci_high: p.ci_68.1,
            sse: fit.sse,
            n_boot: fit.n_boot,
            skipped_resamples: fit.skipped_resamples,
            converged: fit.converged,
            flags: flags.clone(),
        })
        .collect()
}

fn fit_artifact(stem: &str, fit: &FitResult, format: Format) -> Result<Artifact, Failure> {
    match format {
        Format::Csv => table(stem, &fit_rows(fit), format),
        Format::Json => json(stem, fit),
    }
}

fn boot(settings: &Settings) -> BootstrapOptions {
    BootstrapOptions { n_boot: settings.fit.n_boot, seed: settings.simulation.seed }
}

fn run_fit_od(settings: &Settings, input: &Path, format: Format) -> Result<Vec<Artifact>, Failure> {
    let data = DataSet::read_csv(open(input)?, input.display().to_string())?;
    let fit = fit_od(&data, settings.transistor.cap, settings.fit.mode, boot(settings))?;
    Ok(vec![fit_artifact("fit_od", &fit, format)?])
}

fn run_fit_saturation(settings: &Settings, input: &Path, format: Format) -> Result<Vec<Artifact>, Failure> {
    let data = DataSet::read_csv(open(input)?, input.display().to_string())?;
    let fit = fit_saturation(&data, boot(settings))?;
    Ok(vec![fit_artifact("fit_saturation", &fit, format)?])
}

#[derive(Serialize)]
struct DetectJson<'a> {
    report: &'a [Entry],
    threshold: &'a ThresholdResult,
    empirical_threshold: Option<&'a ThresholdResult>,
    decomposition: &'a Decomposition,
    gated_histogram: &'a CountHistogram,
    reference_histogram: Option<&'a CountHistogram>,
}

/// Config for simulating stored excitations with Poisson mean `n_stored`.
fn detection_sim_config(settings: &Settings) -> Result<SimConfig, Failure> {
    let mut s = settings.clone();
    s.simulation.gate_mode = GateMode::Stored;
    let survivors = (1.0 - s.transistor.a_ge) * s.simulation.n_gate_in;
    s.simulation.p_store = s.detection.n_stored / survivors;
    if !(survivors > 0.0 && s.simulation.p_store <= 1.0) {
        return Err(Failure::Validation(vec![format!(
            "detection.n_stored ({}) exceeds the surviving gate photons (1 - a_ge) * n_gate_in = {survivors}",
            s.detection.n_stored
        )]));
    }
    s.validate()?;
    s.sim_config()
}

fn run_detect(settings: &Settings, input: Option<&Path>, format: Format) -> Result<Vec<Artifact>, Failure> {
    let d = &settings.detection;
    let cap = settings.transistor.cap;
    let od_st = settings.transistor.od_st;
    let seed = settings.simulation.seed;
    let dispersion = DispersionOptions { n_null: d.n_null, seed };

    let (observed, reference, true_gated) = match input {
        Some(path) => (CountHistogram::read_csv(open(path)?)?, None, None),
        None => {
            let cfg = detection_sim_config(settings)?;
            let (gated, reference) = simulate_with_reference(&cfg, settings.simulation.runs)?;
            let true_gated = gated.gated_runs() as f64 / gated.n_runs as f64;
            (gated.histogram, Some(reference.histogram), Some(true_gated))
        }
    };
    if observed.total() == 0 {
        return Err(Error::InsufficientData("empty histogram".into()).into());
    }
    let mu0 = match (d.mu0, &reference) {
        (Some(mu0), _) => mu0,
        (None, Some(r)) => r.mean(),
        // Method of moments: the mixture mean is mu0 * sum_k w_k e^{-k od}.
        (None, None) => {
            let unit = mixture_from_params(d.n_stored, cap, od_st, 1.0)?;
            let scale: f64 = unit.components().iter().map(|c| c.weight * c.mean).sum();
            observed.mean() / scale
        }
    };
    if !(mu0 > 0.0) {
        return Err(Failure::Numerical(format!("no-gate mean count is {mu0}; nothing to discriminate")));
    }

    let model = mixture_from_params(d.n_stored, cap, od_st, mu0)?;
    let decomposition = decompose(&observed, &model)?;
    let threshold = optimal_threshold(&model)?;
    let empirical = decomposition.empirical_threshold().ok();

    let mut report = vec![
        entry("mu0", mu0),
        entry("n_stored", d.n_stored),
        entry("od_st", od_st),
        entry("cap", cap as f64),
        entry("runs", observed.total() as f64),
        entry("tau", threshold.tau as f64),
        entry("fidelity", threshold.fidelity),
        entry("p_detect_given_gated", threshold.p_detect_given_gated),
        entry("p_reject_given_ungated", threshold.p_reject_given_ungated),
        entry("balanced_accuracy", threshold.balanced_accuracy),
        entry("discriminating", f64::from(u8::from(threshold.discriminating))),
        entry("below_priors", f64::from(u8::from(threshold.below_priors))),
    ];
    if let Some(e) = &empirical {
        report.push(entry("empirical_tau", e.tau as f64));
        report.push(entry("empirical_fidelity", e.fidelity));
    }
    report.extend([
        entry("chi_square", decomposition.chi_square),
        entry("dof", decomposition.dof as f64),
        entry("gof_p_value", decomposition.p_value),
        entry("decomposed_gated_fraction", decomposition.gated_mass() / observed.total() as f64),
    ]);
    if let Some(t) = true_gated {
        report.push(entry("true_gated_fraction", t));
    }
    for (name, hist) in [("observed", Some(&observed)), ("reference", reference.as_ref())] {
        if let Some(Ok(test)) = hist.map(|h| poissonness_test(h, dispersion)) {
            report.push(entry(&format!("{name}_dispersion_index"), test.index));
            report.push(entry(&format!("{name}_dispersion_p_value"), test.p_value));
        }
    }

    match format {
        Format::Csv => {
            let mut bytes = Vec::new();
            decomposition.write_csv(&mut bytes)?;
            let mut out = vec![
                table("detect_report", &report, format)?,
                Artifact { name: "detect_decomposition.csv".into(), bytes },
            ];
            if let Some(r) = &reference {
                out.push(histogram_csv("detect_gated", &observed)?);
                out.push(histogram_csv("detect_reference", r)?);
            }
            Ok(out)
        }
        Format::Json => Ok(vec![json(
            "detect",
            &DetectJson {
                report: &report,
                threshold: &threshold,
                empirical_threshold: empirical.as_ref(),
                decomposition: &decomposition,
                gated_histogram: &observed,
                reference_histogram: reference.as_ref(),
            },
        )?]),
    }
}
