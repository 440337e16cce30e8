//! Seeded end-to-end benchmark: truth sampling, detector simulation,
//! pseudo-data, every requested method, metrics and output files.
//!
//! Seed streams per distribution `d` (its position in the config list):
//!
//! ```text
//! base = derive_seed(master_seed, d)
//! A    = derive_seed(base, 1)   truth sample
//! B    = derive_seed(base, 2)   response MC (sample: derive_seed(B, 0), detector: derive_seed(B, 1))
//! C    = derive_seed(base, 3)   Poisson pseudo-data
//! D    = derive_seed(base, 4)   annealing
//! E    = derive_seed(base, 5)   bootstrap toys
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::datagen::{apply_detector, build_response, poissonize, sample_truth, DetectorModel, DistributionSpec};
use crate::error::{Result, UnfoldError};
use crate::histogram::{fold, uniform_edges, Histogram, ResponseMatrix};
use crate::methods::{LambdaChoice, UnfoldSettings, Unfolder};
use crate::metrics::{binwise_ratio, bootstrap_errors, chi2};
use crate::plot::emit_plot;
use crate::qubo;
use crate::result::Method;
use crate::seed::derive_seed;
use crate::solvers::{AnnealSchedule, CdConfig};
use crate::unfolders::{IbuConfig, SvdConfig};

pub const STREAM_TRUTH: u64 = 1;
pub const STREAM_RESPONSE: u64 = 2;
pub const STREAM_DATA: u64 = 3;
pub const STREAM_ANNEAL: u64 = 4;
pub const STREAM_BOOTSTRAP: u64 = 5;

pub const CSV_FILE: &str = "benchmark.csv";
pub const JSON_FILE: &str = "results.json";
pub const SCAN_FILE: &str = "lambda_scan.csv";

/// Benchmark configuration. Every field has a default, so `{}` is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub distributions: Vec<DistributionSpec>,
    pub n_events: usize,
    pub n_bins: usize,
    /// Events in the independent sample used to estimate the response.
    pub response_events: usize,
    /// Detector; `None` uses [`DetectorModel::default_for_bin_width`] per distribution.
    pub detector: Option<DetectorModel>,
    /// Flat expected background per reco bin.
    pub background: f64,
    pub methods: Vec<Method>,
    pub lambda: LambdaChoice,
    pub headroom: f64,
    pub ibu: IbuConfig,
    pub svd: SvdConfig,
    pub cd: CdConfig,
    /// The seed field is ignored; annealing seeds come from stream D.
    pub anneal: AnnealSchedule,
    /// Poisson toys per record; 0 disables the bootstrap.
    pub bootstrap_toys: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            distributions: DistributionSpec::defaults(),
            n_events: 10_000,
            n_bins: 12,
            response_events: 100_000,
            detector: None,
            background: 0.0,
            methods: Method::BENCHMARK.to_vec(),
            lambda: LambdaChoice::Discrepancy,
            headroom: qubo::DEFAULT_HEADROOM,
            ibu: IbuConfig::default(),
            svd: SvdConfig::default(),
            cd: CdConfig::default(),
            anneal: AnnealSchedule::default(),
            bootstrap_toys: 30,
            master_seed: 0,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl BenchmarkConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| UnfoldError::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| UnfoldError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 3 {
            return Err(UnfoldError::invalid(format!("n_bins must be >= 3, got {}", self.n_bins)));
        }
        if self.n_events == 0 || self.response_events == 0 {
            return Err(UnfoldError::invalid("n_events and response_events must be >= 1"));
        }
        if self.methods.is_empty() {
            return Err(UnfoldError::invalid("methods must not be empty"));
        }
        if self.distributions.is_empty() {
            return Err(UnfoldError::invalid("distributions must not be empty"));
        }
        let mut names: Vec<&str> = self.distributions.iter().map(|d| d.name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(UnfoldError::invalid("each distribution kind may appear once"));
        }
        for d in &self.distributions {
            d.validate()?;
        }
        if let Some(det) = &self.detector {
            det.validate()?;
        }
        if !(self.background >= 0.0 && self.background.is_finite()) {
            return Err(UnfoldError::invalid("background must be finite and >= 0"));
        }
        if self.bootstrap_toys == 1 {
            return Err(UnfoldError::invalid("bootstrap_toys must be 0 or >= 2"));
        }
        if let LambdaChoice::Fixed(v) = self.lambda {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(UnfoldError::invalid(format!("lambda must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn settings(&self) -> UnfoldSettings {
        UnfoldSettings {
            lambda: self.lambda,
            headroom: self.headroom,
            ibu: self.ibu.clone(),
            svd: self.svd.clone(),
            cd: self.cd,
            anneal: self.anneal,
        }
    }

    fn distribution_seed(&self, index: usize) -> u64 {
        derive_seed(self.master_seed, index as u64)
    }
}

/// Truth, response and pseudo-data for one distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub distribution: String,
    pub seed: u64,
    pub truth: Histogram,
    pub measured: Histogram,
    pub response: ResponseMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<Histogram>,
}

/// Builds the instance for `cfg.distributions[index]`.
pub fn generate_instance(cfg: &BenchmarkConfig, index: usize) -> Result<Instance> {
    let spec = cfg
        .distributions
        .get(index)
        .ok_or_else(|| UnfoldError::invalid(format!("no distribution at index {index}")))?;
    let base = cfg.distribution_seed(index);
    let (low, high) = spec.range;
    let edges = uniform_edges(low, high, cfg.n_bins)?;
    let detector = cfg
        .detector
        .unwrap_or_else(|| DetectorModel::default_for_bin_width((high - low) / cfg.n_bins as f64));

    let truth_values = sample_truth(spec, cfg.n_events, derive_seed(base, STREAM_TRUTH))?;
    let truth = Histogram::from_values(edges.clone(), truth_values)?;

    let stream_b = derive_seed(base, STREAM_RESPONSE);
    let mc = sample_truth(spec, cfg.response_events, derive_seed(stream_b, 0))?;
    let mc = apply_detector(&mc, &detector, derive_seed(stream_b, 1))?;
    let response = build_response(&mc, &edges)?;

    let background = if cfg.background > 0.0 {
        Some(Histogram::new(edges.clone(), vec![cfg.background; cfg.n_bins])?)
    } else {
        None
    };
    let mu = fold(&response, &truth, background.as_ref())?;
    let measured = poissonize(&mu, derive_seed(base, STREAM_DATA))?;
    Ok(Instance {
        distribution: spec.name().to_string(),
        seed: base,
        truth,
        measured,
        response,
        background,
    })
}

/// One method applied to one distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub distribution: String,
    pub method: Method,
    /// Regularization strength used; `None` for methods without one.
    pub lambda: Option<f64>,
    pub chi2: Option<f64>,
    pub excluded_bins: usize,
    pub estimate: Vec<f64>,
    /// Bootstrap standard deviations; empty when unavailable.
    pub errors: Vec<f64>,
    pub ratio: Vec<Option<f64>>,
    pub seed: u64,
    pub hyperparameters: Value,
    pub diagnostics: BTreeMap<String, Value>,
    /// Set when the method failed; the numeric fields are then empty.
    pub error: Option<String>,
}

/// All records for one distribution together with its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRun {
    pub distribution: String,
    pub seed: u64,
    pub edges: Vec<f64>,
    pub truth: Vec<f64>,
    pub measured: Vec<f64>,
    pub records: Vec<BenchmarkRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub runs: Vec<DistributionRun>,
}

impl BenchmarkReport {
    pub fn records(&self) -> impl Iterator<Item = &BenchmarkRecord> {
        self.runs.iter().flat_map(|r| r.records.iter())
    }

    pub fn record(&self, distribution: &str, method: Method) -> Option<&BenchmarkRecord> {
        self.records()
            .find(|r| r.distribution == distribution && r.method == method)
    }
}

fn hyperparameters(method: Method, settings: &UnfoldSettings) -> Value {
    match method {
        Method::Mi => json!({}),
        Method::Ibu => json!({ "iterations": settings.ibu.iterations, "prior": settings.ibu.prior }),
        Method::Svd => json!({ "rank": settings.svd.rank }),
        Method::Cd => json!({
            "lambda": settings.lambda,
            "headroom": settings.headroom,
            "max_sweeps": settings.cd.max_sweeps,
        }),
        Method::Anneal | Method::Brute => json!({
            "lambda": settings.lambda,
            "headroom": settings.headroom,
            "sweeps": settings.anneal.sweeps,
            "reads": settings.anneal.reads,
            "seed": settings.anneal.seed,
        }),
    }
}

/// Runs `methods` on a prepared instance. Failures become records with `error` set.
pub fn run_methods(
    instance: &Instance,
    methods: &[Method],
    settings: &UnfoldSettings,
    bootstrap_toys: usize,
) -> DistributionRun {
    let base = instance.seed;
    let settings = UnfoldSettings {
        anneal: AnnealSchedule {
            seed: derive_seed(base, STREAM_ANNEAL),
            ..settings.anneal
        },
        ..settings.clone()
    };
    let beta = instance.background.as_ref();
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();
    let records = methods
        .iter()
        .map(|&method| {
            let unfolder = Unfolder::new(method, settings.clone());
            let mut rec = BenchmarkRecord {
                distribution: instance.distribution.clone(),
                method,
                lambda: None,
                chi2: None,
                excluded_bins: 0,
                estimate: Vec::new(),
                errors: Vec::new(),
                ratio: Vec::new(),
                seed: base,
                hyperparameters: hyperparameters(method, &settings),
                diagnostics: BTreeMap::new(),
                error: None,
            };
            let outcome = unfolder
                .run(&instance.response, &instance.measured, beta)
                .and_then(|res| {
                    let c = chi2(&instance.truth, &res.estimate)?;
                    let ratio = binwise_ratio(&instance.truth, &res.estimate)?;
                    Ok((res, c, ratio))
                });
            match outcome {
                Ok((res, c, ratio)) => {
                    rec.lambda = res.diagnostics.get("lambda").and_then(Value::as_f64);
                    rec.chi2 = Some(c.value);
                    rec.excluded_bins = c.excluded_bins;
                    rec.estimate = res.estimate;
                    rec.ratio = ratio;
                    rec.diagnostics = res.diagnostics;
                }
                Err(e) => {
                    rec.error = Some(e.to_string());
                    return rec;
                }
            }
            if bootstrap_toys >= 2 {
                let seed = derive_seed(base, STREAM_BOOTSTRAP);
                match bootstrap_errors(&unfolder, &instance.response, &instance.measured, beta, bootstrap_toys, seed) {
                    Ok(b) => {
                        rec.errors = b.std;
                        rec.diagnostics.insert("bootstrap_toys".into(), b.toys.into());
                        rec.diagnostics.insert("bootstrap_failed".into(), b.failed.into());
                    }
                    Err(e) => {
                        rec.diagnostics.insert("bootstrap_error".into(), e.to_string().into());
                    }
                }
            }
            rec
        })
        .collect();
    DistributionRun {
        distribution: instance.distribution.clone(),
        seed: base,
        edges: instance.truth.edges().to_vec(),
        truth: instance.truth.counts().to_vec(),
        measured: instance.measured.counts().to_vec(),
        records,
    }
}

/// Runs the full benchmark in memory. Runs are ordered by distribution name,
/// records within a run by method.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let settings = cfg.settings();
    let mut runs = (0..cfg.distributions.len())
        .into_par_iter()
        .map(|d| {
            let instance = generate_instance(cfg, d)?;
            Ok(run_methods(&instance, &cfg.methods, &settings, cfg.bootstrap_toys))
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| a.distribution.cmp(&b.distribution));
    Ok(BenchmarkReport {
        config: cfg.clone(),
        runs,
    })
}

fn io_err(path: &Path, e: impl ToString) -> UnfoldError {
    UnfoldError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes one row per (distribution, method, bin).
pub fn write_csv(report: &BenchmarkReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record([
        "distribution", "method", "lambda", "chi2", "bin_index", "truth", "measured", "estimate", "error", "ratio",
    ])
    .map_err(|e| io_err(path, e))?;
    for run in &report.runs {
        for rec in &run.records {
            for i in 0..run.truth.len() {
                w.write_record([
                    rec.distribution.clone(),
                    rec.method.to_string(),
                    opt_cell(rec.lambda),
                    opt_cell(rec.chi2),
                    i.to_string(),
                    run.truth[i].to_string(),
                    run.measured[i].to_string(),
                    opt_cell(rec.estimate.get(i).copied()),
                    opt_cell(rec.errors.get(i).copied()),
                    opt_cell(rec.ratio.get(i).copied().flatten()),
                ])
                .map_err(|e| io_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn svg_path(dir: &Path, distribution: &str) -> PathBuf {
    dir.join(format!("{distribution}.svg"))
}

/// Writes the CSV table, the JSON report and one SVG per distribution into `dir`.
pub fn write_outputs(report: &BenchmarkReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let csv_path = dir.join(CSV_FILE);
    write_csv(report, &csv_path)?;
    let json_path = dir.join(JSON_FILE);
    write_json(report, &json_path)?;
    let mut written = vec![csv_path, json_path];
    for run in &report.runs {
        let path = svg_path(dir, &run.distribution);
        emit_plot(run, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// One line of a lambda scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub distribution: String,
    pub lambda: f64,
    pub method: Method,
    pub chi2: Option<f64>,
    /// Lowest chi-square for this distribution and method (ties all marked).
    pub is_argmin: bool,
    pub error: Option<String>,
}

/// Runs the optimization methods in `methods` (CD and ANNEAL by default) at
/// each fixed `lambda` of `grid`, on the same data as [`run_benchmark`].
pub fn scan_lambda(cfg: &BenchmarkConfig, grid: &[f64], methods: Option<&[Method]>) -> Result<Vec<ScanRow>> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(UnfoldError::invalid("lambda grid is empty"));
    }
    if let Some(bad) = grid.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(UnfoldError::invalid(format!("lambda must be >= 0, got {bad}")));
    }
    let methods: Vec<Method> = methods
        .unwrap_or(&[Method::Cd, Method::Anneal])
        .iter()
        .copied()
        .filter(|m| m.is_optimization())
        .collect();
    if methods.is_empty() {
        return Err(UnfoldError::invalid("lambda scan needs CD, ANNEAL or BRUTE"));
    }
    let base_settings = cfg.settings();
    let per_dist = (0..cfg.distributions.len())
        .into_par_iter()
        .map(|d| {
            let instance = generate_instance(cfg, d)?;
            let mut rows = Vec::new();
            for &lambda in grid {
                let settings = UnfoldSettings {
                    lambda: LambdaChoice::Fixed(lambda),
                    ..base_settings.clone()
                };
                let run = run_methods(&instance, &methods, &settings, 0);
                for rec in run.records {
                    rows.push(ScanRow {
                        distribution: rec.distribution,
                        lambda,
                        method: rec.method,
                        chi2: rec.chi2,
                        is_argmin: false,
                        error: rec.error,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<ScanRow> = per_dist.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        a.distribution
            .cmp(&b.distribution)
            .then(a.method.cmp(&b.method))
    });
    let mut best: BTreeMap<(String, Method), f64> = BTreeMap::new();
    for r in &rows {
        if let Some(c) = r.chi2 {
            let e = best.entry((r.distribution.clone(), r.method)).or_insert(c);
            *e = e.min(c);
        }
    }
    for r in &mut rows {
        r.is_argmin = r.chi2.is_some() && r.chi2 == best.get(&(r.distribution.clone(), r.method)).copied();
    }
    Ok(rows)
}

pub fn write_scan_csv(rows: &[ScanRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["distribution", "lambda", "method", "chi2", "is_argmin", "error"])
        .map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record([
            r.distribution.clone(),
            r.lambda.to_string(),
            r.method.to_string(),
            opt_cell(r.chi2),
            r.is_argmin.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}
