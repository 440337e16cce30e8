//! Uniform entry point over every unfolding method.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, UnfoldError};
use crate::histogram::{fold, poisson_loglik, signal_counts, Histogram, ResponseMatrix};
use crate::laplacian::Laplacian;
use crate::qubo::{self, build_objective, direct_residual, encode, estimate_bounds, QuadraticObjective};
use crate::result::{Method, UnfoldResult};
use crate::solvers::{solve_anneal, solve_bruteforce, solve_integer_cd, AnnealSchedule, CdConfig, SolveOutcome};
use crate::unfolders::{unfold_ibu, unfold_mi, unfold_svd, IbuConfig, SvdConfig};

/// Relative grid searched by [`LambdaChoice::Discrepancy`]: `1e-5 .. 1e1`, four points per decade.
pub fn discrepancy_grid() -> Vec<f64> {
    (0..=24).map(|k| 1e-5 * 10f64.powf(k as f64 / 4.0)).collect()
}

/// How the regularization strength is set.
///
/// `Discrepancy` picks the largest grid value whose coordinate-descent
/// solution still fits the data to within the Poisson expectation,
/// `||R z - (n - beta)||^2 <= sum_i n_i`. In JSON a number means `Fixed`
/// and the string `"discrepancy"` the data-driven choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64),
    Discrepancy,
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::Discrepancy
    }
}

impl fmt::Display for LambdaChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaChoice::Fixed(v) => write!(f, "{v}"),
            LambdaChoice::Discrepancy => f.write_str("discrepancy"),
        }
    }
}

impl std::str::FromStr for LambdaChoice {
    type Err = UnfoldError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("discrepancy") || s.eq_ignore_ascii_case("auto") {
            return Ok(LambdaChoice::Discrepancy);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| UnfoldError::invalid(format!("bad lambda '{s}'")))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(UnfoldError::invalid(format!("lambda must be >= 0, got {v}")));
        }
        Ok(LambdaChoice::Fixed(v))
    }
}

impl Serialize for LambdaChoice {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LambdaChoice::Fixed(v) => ser.serialize_f64(*v),
            LambdaChoice::Discrepancy => ser.serialize_str("discrepancy"),
        }
    }
}

impl<'de> Deserialize<'de> for LambdaChoice {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(v) => Ok(LambdaChoice::Fixed(v)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Outcome of the discrepancy search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    /// `(lambda, data-fit residual)` for every grid point.
    pub scan: Vec<(f64, f64)>,
    pub target: f64,
    /// No grid point met the target; the smallest was used.
    pub fallback: bool,
}

/// Largest `lambda` in `grid` whose CD solution has `||R z - y||^2 <= sum(n)`.
pub fn select_lambda_discrepancy(
    r: &ResponseMatrix,
    n: &Histogram,
    beta: Option<&Histogram>,
    grid: &[f64],
    headroom: f64,
    cd: &CdConfig,
) -> Result<LambdaSelection> {
    if grid.is_empty() {
        return Err(UnfoldError::invalid("lambda grid is empty"));
    }
    let m = r.n_bins();
    let laplacian = Laplacian::new(m)?;
    let y = signal_counts(n, beta)?;
    let bounds = estimate_bounds(n, r.efficiencies(), headroom)?;
    let (start, _) = cd_start(r, n, beta)?;
    let target = n.total();
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut scan = Vec::with_capacity(grid.len());
    let mut chosen = None;
    for &lambda in &grid {
        let obj = build_objective(r, n, beta, lambda, Some(&laplacian))?;
        let out = solve_integer_cd(&obj, &bounds, &start, cd)?;
        let z: Vec<f64> = out.outcome.z.iter().map(|&v| v as f64).collect();
        let fit = direct_residual(r, &y, 0.0, None, &z)?;
        scan.push((lambda, fit));
        if fit <= target {
            chosen = Some(lambda);
        }
    }
    Ok(LambdaSelection {
        lambda: chosen.unwrap_or(grid[0]),
        scan,
        target,
        fallback: chosen.is_none(),
    })
}

/// Hyperparameters shared by all methods; each method reads the fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnfoldSettings {
    pub lambda: LambdaChoice,
    pub headroom: f64,
    pub ibu: IbuConfig,
    pub svd: SvdConfig,
    pub cd: CdConfig,
    pub anneal: AnnealSchedule,
}

impl Default for UnfoldSettings {
    fn default() -> Self {
        Self {
            lambda: LambdaChoice::Discrepancy,
            headroom: qubo::DEFAULT_HEADROOM,
            ibu: IbuConfig::default(),
            svd: SvdConfig::default(),
            cd: CdConfig::default(),
            anneal: AnnealSchedule::default(),
        }
    }
}

/// A method together with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Unfolder {
    pub method: Method,
    pub settings: UnfoldSettings,
}

impl Unfolder {
    pub fn new(method: Method, settings: UnfoldSettings) -> Self {
        Self { method, settings }
    }

    /// Same configuration with a different annealing seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.settings.anneal.seed = seed;
        out
    }

    pub fn run(&self, r: &ResponseMatrix, n: &Histogram, beta: Option<&Histogram>) -> Result<UnfoldResult> {
        let s = &self.settings;
        match self.method {
            Method::Mi => unfold_mi(r, n, beta),
            Method::Ibu => unfold_ibu(r, n, beta, &s.ibu),
            Method::Svd => unfold_svd(r, n, beta, &s.svd),
            Method::Cd | Method::Anneal | Method::Brute => self.run_optimization(r, n, beta),
        }
    }

    fn run_optimization(&self, r: &ResponseMatrix, n: &Histogram, beta: Option<&Histogram>) -> Result<UnfoldResult> {
        let s = &self.settings;
        let m = r.n_bins();
        let laplacian = if m >= 3 { Some(Laplacian::new(m)?) } else { None };
        let mut selection = None;
        let lambda = match s.lambda {
            LambdaChoice::Fixed(v) => v,
            LambdaChoice::Discrepancy if laplacian.is_none() => 0.0,
            LambdaChoice::Discrepancy => {
                let sel = select_lambda_discrepancy(r, n, beta, &discrepancy_grid(), s.headroom, &s.cd)?;
                let v = sel.lambda;
                selection = Some(sel);
                v
            }
        };
        if laplacian.is_none() && lambda > 0.0 {
            return Err(UnfoldError::invalid(format!(
                "lambda > 0 needs at least 3 bins, got {m}"
            )));
        }
        let obj = build_objective(r, n, beta, lambda, laplacian.as_ref())?;
        let bounds = estimate_bounds(n, r.efficiencies(), s.headroom)?;

        let mut res = match self.method {
            Method::Cd => {
                let (start, origin) = cd_start(r, n, beta)?;
                let cd = solve_integer_cd(&obj, &bounds, &start, &s.cd)?;
                let mut res = outcome_result(Method::Cd, &obj, &cd.outcome)
                    .diag("start", origin)
                    .diag("converged", cd.converged);
                if !cd.skipped.is_empty() {
                    res.warn(format!("coordinates {:?} skipped: zero curvature", cd.skipped));
                }
                res
            }
            Method::Anneal => {
                let model = encode(&obj, &bounds)?;
                let (b0, b1) = s.anneal.betas(&model);
                let out = solve_anneal(&model, &s.anneal)?;
                outcome_result(Method::Anneal, &obj, &out)
                    .diag("n_bits", model.n_bits())
                    .diag("reads", s.anneal.reads)
                    .diag("seed", s.anneal.seed)
                    .diag("beta_start", b0)
                    .diag("beta_end", b1)
                    .diag("qubo_energy", out.energy)
            }
            Method::Brute => {
                let model = encode(&obj, &bounds)?;
                let out = solve_bruteforce(&model)?;
                outcome_result(Method::Brute, &obj, &out)
                    .diag("n_bits", model.n_bits())
                    .diag("qubo_energy", out.energy)
            }
            _ => unreachable!("not an optimization method"),
        };
        res.set_diag("lambda", lambda);
        res.set_diag("lambda_rule", s.lambda.to_string());
        if let Some(sel) = selection {
            res.set_diag("discrepancy_target", sel.target);
            if sel.fallback {
                res.warn("no lambda met the discrepancy target; used the smallest grid value");
            }
        }
        res.set_diag("z_max", bounds.as_slice().to_vec());
        let estimate = Histogram::new(n.edges().to_vec(), res.estimate.clone())?;
        let mu = fold(r, &estimate, beta)?;
        let loglik = poisson_loglik(n, &mu)?;
        if loglik.is_finite() {
            res.set_diag("poisson_loglik", loglik);
        } else {
            res.set_diag("poisson_loglik", "-inf");
            res.warn("folded estimate has zero expectation in a bin with data");
        }
        Ok(res)
    }
}

fn outcome_result(method: Method, obj: &QuadraticObjective, out: &SolveOutcome) -> UnfoldResult {
    let z: Vec<f64> = out.z.iter().map(|&v| v as f64).collect();
    let value = obj.value(&z);
    let mut res = UnfoldResult::new(method, z)
        .diag("objective", value)
        .diag("residual", value + obj.offset)
        .diag("sweeps", out.sweeps)
        .diag("evaluations", out.evaluations)
        .diag("read_energies", out.read_energies.clone());
    if out.clamped {
        res.warn("solution decoded above a bin bound and was clamped");
        res.set_diag("clamped", true);
    }
    res
}

/// Coordinate-descent start: the matrix-inversion estimate when it exists,
/// otherwise the efficiency-corrected data.
pub fn cd_start(r: &ResponseMatrix, n: &Histogram, beta: Option<&Histogram>) -> Result<(Vec<f64>, &'static str)> {
    match unfold_mi(r, n, beta) {
        Ok(mi) => Ok((mi.estimate, "mi")),
        Err(_) => {
            let y = signal_counts(n, beta)?;
            let z = y
                .iter()
                .zip(r.efficiencies())
                .map(|(v, e)| if *e > 0.0 { v / e } else { 0.0 })
                .collect();
            Ok((z, "efficiency"))
        }
    }
}
