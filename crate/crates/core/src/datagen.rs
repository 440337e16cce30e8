//! Synthetic truth spectra, a toy detector, response estimation from
//! truth/reco pairs, and Poisson pseudo-data.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Cauchy, Distribution, Exp, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UnfoldError};
use crate::histogram::{bin_index, Histogram, ResponseMatrix};
use crate::seed;

/// Shape of a truth distribution together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Normal { mean: f64, sigma: f64 },
    Exponential { rate: f64 },
    Gamma { shape: f64, scale: f64 },
    /// Relativistic resonance approximated by a Cauchy line shape;
    /// `width` is the full width at half maximum.
    BreitWigner { location: f64, width: f64 },
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Normal { .. } => "normal",
            Shape::Exponential { .. } => "exponential",
            Shape::Gamma { .. } => "gamma",
            Shape::BreitWigner { .. } => "breit_wigner",
        }
    }
}

/// A truth distribution truncated to a histogramming window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    #[serde(flatten)]
    pub shape: Shape,
    pub range: (f64, f64),
}

impl DistributionSpec {
    pub const KINDS: [&'static str; 4] = ["normal", "exponential", "gamma", "breit_wigner"];

    /// Default parameters for one of [`Self::KINDS`].
    pub fn default_for(kind: &str) -> Result<Self> {
        let spec = match kind {
            "normal" => {
                let range = (-4.0, 4.0);
                let w = range.1 - range.0;
                Self {
                    shape: Shape::Normal {
                        mean: 0.5 * (range.0 + range.1),
                        sigma: w / 8.0,
                    },
                    range,
                }
            }
            "exponential" => {
                let range = (0.0, 6.0);
                Self {
                    // six mean lifetimes across the window
                    shape: Shape::Exponential {
                        rate: 6.0 / (range.1 - range.0),
                    },
                    range,
                }
            }
            "gamma" => {
                let range = (0.0, 8.0);
                Self {
                    shape: Shape::Gamma {
                        shape: 2.0,
                        scale: (range.1 - range.0) / 8.0,
                    },
                    range,
                }
            }
            "breit_wigner" => {
                let range = (0.0, 8.0);
                Self {
                    shape: Shape::BreitWigner {
                        location: 0.5 * (range.0 + range.1),
                        width: (range.1 - range.0) / 16.0,
                    },
                    range,
                }
            }
            other => {
                return Err(UnfoldError::invalid(format!(
                    "unknown distribution kind '{other}'"
                )))
            }
        };
        Ok(spec)
    }

    /// The four default shapes in canonical order.
    pub fn defaults() -> Vec<Self> {
        Self::KINDS
            .iter()
            .map(|k| Self::default_for(k).expect("built-in kind"))
            .collect()
    }

    pub fn name(&self) -> &'static str {
        self.shape.name()
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(UnfoldError::invalid(format!("empty range [{lo}, {hi}]")));
        }
        let ok = match self.shape {
            Shape::Normal { mean, sigma } => mean.is_finite() && sigma > 0.0 && sigma.is_finite(),
            Shape::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            Shape::Gamma { shape, scale } => {
                shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()
            }
            Shape::BreitWigner { location, width } => {
                location.is_finite() && width > 0.0 && width.is_finite()
            }
        };
        if !ok {
            return Err(UnfoldError::invalid(format!(
                "invalid parameters for {}: {:?}",
                self.name(),
                self.shape
            )));
        }
        Ok(())
    }
}

/// Draws `n_events` values from `spec`, resampling anything outside `spec.range`.
pub fn sample_truth(spec: &DistributionSpec, n_events: usize, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    if n_events == 0 {
        return Err(UnfoldError::invalid("n_events must be at least 1"));
    }
    let mut rng = seed::rng(seed);
    let (lo, hi) = spec.range;
    let draw: Box<dyn Fn(&mut seed::Rng) -> f64> = match spec.shape {
        Shape::Normal { mean, sigma } => {
            let d = Normal::new(mean, sigma).map_err(|e| UnfoldError::invalid(e.to_string()))?;
            Box::new(move |r| d.sample(r))
        }
        Shape::Exponential { rate } => {
            let d = Exp::new(rate).map_err(|e| UnfoldError::invalid(e.to_string()))?;
            Box::new(move |r| d.sample(r))
        }
        Shape::Gamma { shape, scale } => {
            let d = Gamma::new(shape, scale).map_err(|e| UnfoldError::invalid(e.to_string()))?;
            Box::new(move |r| d.sample(r))
        }
        Shape::BreitWigner { location, width } => {
            let d = Cauchy::new(location, 0.5 * width)
                .map_err(|e| UnfoldError::invalid(e.to_string()))?;
            Box::new(move |r| d.sample(r))
        }
    };

    let max_attempts = n_events.saturating_mul(1000).saturating_add(1_000_000);
    let mut out = Vec::with_capacity(n_events);
    let mut attempts = 0usize;
    while out.len() < n_events {
        attempts += 1;
        if attempts > max_attempts {
            return Err(UnfoldError::invalid(format!(
                "window [{lo}, {hi}] holds too little of the {} distribution",
                spec.name()
            )));
        }
        let v = draw(&mut rng);
        if (lo..=hi).contains(&v) {
            out.push(v);
        }
    }
    Ok(out)
}

/// Gaussian resolution, additive bias, and flat detection efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub smear_sigma: f64,
    pub bias: f64,
    pub efficiency: f64,
}

impl DetectorModel {
    pub const TRANSPARENT: DetectorModel = DetectorModel {
        smear_sigma: 0.0,
        bias: 0.0,
        efficiency: 1.0,
    };

    /// One bin width of resolution, a quarter-bin bias, 70 % efficiency.
    pub fn default_for_bin_width(bin_width: f64) -> Self {
        Self {
            smear_sigma: bin_width,
            bias: 0.25 * bin_width,
            efficiency: 0.7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.smear_sigma >= 0.0 && self.smear_sigma.is_finite()) {
            return Err(UnfoldError::invalid(format!(
                "smear_sigma must be >= 0, got {}",
                self.smear_sigma
            )));
        }
        if !self.bias.is_finite() {
            return Err(UnfoldError::invalid("bias must be finite"));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(UnfoldError::invalid(format!(
                "efficiency must be in (0, 1], got {}",
                self.efficiency
            )));
        }
        Ok(())
    }
}

/// Paired truth and reconstructed values; `None` marks an undetected event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecoSample {
    truth_values: Vec<f64>,
    reco_values: Vec<Option<f64>>,
}

impl TruthRecoSample {
    pub fn new(truth_values: Vec<f64>, reco_values: Vec<Option<f64>>) -> Result<Self> {
        crate::error::check_len("reco values", truth_values.len(), reco_values.len())?;
        Ok(Self {
            truth_values,
            reco_values,
        })
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth_values
    }

    pub fn reco(&self) -> &[Option<f64>] {
        &self.reco_values
    }

    pub fn len(&self) -> usize {
        self.truth_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth_values.is_empty()
    }

    pub fn detected_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.reco_values.iter().filter(|r| r.is_some()).count() as f64 / self.len() as f64
    }

    /// Histogram of the detected reco values.
    pub fn reco_histogram(&self, edges: &[f64]) -> Result<Histogram> {
        Histogram::from_values(edges.to_vec(), self.reco_values.iter().flatten().copied())
    }
}

/// Passes each truth value through the detector independently.
pub fn apply_detector(truth: &[f64], model: &DetectorModel, seed: u64) -> Result<TruthRecoSample> {
    model.validate()?;
    let mut rng = seed::rng(seed);
    let smear = if model.smear_sigma > 0.0 {
        Some(Normal::new(0.0, model.smear_sigma).map_err(|e| UnfoldError::invalid(e.to_string()))?)
    } else {
        None
    };
    let reco = truth
        .iter()
        .map(|&t| {
            let detected = model.efficiency >= 1.0 || rng.random::<f64>() < model.efficiency;
            if !detected {
                return None;
            }
            let noise = smear.map_or(0.0, |d| d.sample(&mut rng));
            Some(t + model.bias + noise)
        })
        .collect();
    TruthRecoSample::new(truth.to_vec(), reco)
}

/// Estimates the response matrix from truth/reco pairs.
///
/// Reco values outside the window count as undetected, so each column sums
/// to that truth bin's efficiency. Truth values outside the window are ignored.
pub fn build_response(sample: &TruthRecoSample, edges: &[f64]) -> Result<ResponseMatrix> {
    if sample.is_empty() {
        return Err(UnfoldError::invalid("response sample is empty"));
    }
    if edges.len() < 2 {
        return Err(UnfoldError::invalid("need at least one bin"));
    }
    let m = edges.len() - 1;
    let mut migrations = DMatrix::<f64>::zeros(m, m);
    let mut generated = vec![0u64; m];
    for (&t, r) in sample.truth().iter().zip(sample.reco()) {
        let Some(j) = bin_index(edges, t) else {
            continue;
        };
        generated[j] += 1;
        if let Some(i) = r.and_then(|v| bin_index(edges, v)) {
            migrations[(i, j)] += 1.0;
        }
    }
    if let Some(bin) = generated.iter().position(|&g| g == 0) {
        return Err(UnfoldError::EmptyTruthBin { bin });
    }
    for (j, &g) in generated.iter().enumerate() {
        let total = g as f64;
        for i in 0..m {
            migrations[(i, j)] /= total;
        }
    }
    ResponseMatrix::from_entries(migrations)
}

/// Independent Poisson draws around each bin expectation.
pub fn poissonize(mu: &Histogram, seed: u64) -> Result<Histogram> {
    let mut rng = seed::rng(seed);
    let counts = poisson_counts(mu.counts(), &mut rng)?;
    Histogram::observed(mu.edges().to_vec(), counts)
}

pub(crate) fn poisson_counts(mu: &[f64], rng: &mut seed::Rng) -> Result<Vec<f64>> {
    mu.iter()
        .enumerate()
        .map(|(i, &m)| {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(UnfoldError::invalid(format!(
                    "bin {i} has invalid expectation {m}"
                )));
            }
            if m == 0.0 {
                return Ok(0.0);
            }
            let d = Poisson::new(m).map_err(|e| UnfoldError::invalid(e.to_string()))?;
            Ok(d.sample(rng))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histogram::uniform_edges;

    #[test]
    fn normal_mean_within_clt_bound() {
        let spec = DistributionSpec {
            shape: Shape::Normal {
                mean: 0.0,
                sigma: 1.0,
            },
            range: (-50.0, 50.0),
        };
        let n = 10_000;
        let xs = sample_truth(&spec, n, 11).unwrap();
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 5.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn exponential_truncation() {
        let spec = DistributionSpec {
            shape: Shape::Exponential { rate: 1.0 },
            range: (0.0, 6.0),
        };
        let xs = sample_truth(&spec, 10_000, 3).unwrap();
        assert_eq!(xs.len(), 10_000);
        assert!(xs.iter().all(|x| (0.0..=6.0).contains(x)));
    }

    #[test]
    fn sampling_is_deterministic() {
        for spec in DistributionSpec::defaults() {
            let a = sample_truth(&spec, 500, 99).unwrap();
            let b = sample_truth(&spec, 500, 99).unwrap();
            assert_eq!(a, b);
            let c = sample_truth(&spec, 500, 100).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let bad = [
            Shape::Normal {
                mean: 0.0,
                sigma: 0.0,
            },
            Shape::Exponential { rate: -1.0 },
            Shape::Gamma {
                shape: 0.0,
                scale: 1.0,
            },
            Shape::BreitWigner {
                location: 0.0,
                width: 0.0,
            },
        ];
        for shape in bad {
            let spec = DistributionSpec {
                shape,
                range: (0.0, 1.0),
            };
            assert!(sample_truth(&spec, 10, 0).is_err());
        }
        let empty = DistributionSpec {
            shape: Shape::Exponential { rate: 1.0 },
            range: (1.0, 1.0),
        };
        assert!(sample_truth(&empty, 10, 0).is_err());
        assert!(sample_truth(&DistributionSpec::default_for("normal").unwrap(), 0, 0).is_err());
        assert!(DistributionSpec::default_for("landau").is_err());
    }

    #[test]
    fn transparent_and_shifted_detectors() {
        let truth: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let s = apply_detector(&truth, &DetectorModel::TRANSPARENT, 1).unwrap();
        assert!(s.reco().iter().zip(&truth).all(|(r, t)| *r == Some(*t)));

        let shift = DetectorModel {
            smear_sigma: 0.0,
            bias: 0.5,
            efficiency: 1.0,
        };
        let s = apply_detector(&truth, &shift, 1).unwrap();
        assert!(s.reco().iter().zip(&truth).all(|(r, t)| *r == Some(*t + 0.5)));
    }

    #[test]
    fn detected_fraction_binomial_bound() {
        let n = 100_000;
        let truth = vec![0.0; n];
        let model = DetectorModel {
            smear_sigma: 0.3,
            bias: 0.0,
            efficiency: 0.7,
        };
        let s = apply_detector(&truth, &model, 5).unwrap();
        let tol = 5.0 * (0.7f64 * 0.3 / n as f64).sqrt();
        assert!((s.detected_fraction() - 0.7).abs() < tol);
    }

    #[test]
    fn invalid_detector() {
        for model in [
            DetectorModel {
                smear_sigma: -1.0,
                bias: 0.0,
                efficiency: 1.0,
            },
            DetectorModel {
                smear_sigma: 0.0,
                bias: 0.0,
                efficiency: 0.0,
            },
            DetectorModel {
                smear_sigma: 0.0,
                bias: 0.0,
                efficiency: 1.5,
            },
        ] {
            assert!(apply_detector(&[1.0], &model, 0).is_err());
        }
    }

    #[test]
    fn transparent_response_is_identity() {
        let spec = DistributionSpec::default_for("gamma").unwrap();
        let edges = uniform_edges(spec.range.0, spec.range.1, 12).unwrap();
        let truth = sample_truth(&spec, 20_000, 8).unwrap();
        let s = apply_detector(&truth, &DetectorModel::TRANSPARENT, 9).unwrap();
        let r = build_response(&s, &edges).unwrap();
        assert_eq!(r, ResponseMatrix::identity(12));
    }

    #[test]
    fn half_efficiency_response() {
        let edges = uniform_edges(0.0, 10.0, 10).unwrap();
        let truth: Vec<f64> = (0..50_000).map(|i| (i % 10) as f64 + 0.5).collect();
        let model = DetectorModel {
            smear_sigma: 0.0,
            bias: 0.0,
            efficiency: 0.5,
        };
        let r = build_response(&apply_detector(&truth, &model, 4).unwrap(), &edges).unwrap();
        let per_bin = 5_000.0f64;
        let tol = 5.0 * (0.25 / per_bin).sqrt();
        for j in 0..10 {
            assert!((r.efficiencies()[j] - 0.5).abs() < tol);
            for i in 0..10 {
                if i != j {
                    assert_eq!(r.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn smeared_columns_are_probabilities() {
        let spec = DistributionSpec::default_for("normal").unwrap();
        let edges = uniform_edges(spec.range.0, spec.range.1, 12).unwrap();
        let truth = sample_truth(&spec, 50_000, 21).unwrap();
        let model = DetectorModel::default_for_bin_width(edges[1] - edges[0]);
        let r = build_response(&apply_detector(&truth, &model, 22).unwrap(), &edges).unwrap();
        for j in 0..12 {
            let col: f64 = r.matrix().column(j).iter().sum();
            assert!((0.0..=1.0).contains(&col));
            assert!((col - r.efficiencies()[j]).abs() <= 1e-12);
        }
    }

    #[test]
    fn empty_truth_bin_is_named() {
        let edges = uniform_edges(0.0, 3.0, 3).unwrap();
        let s = TruthRecoSample::new(vec![0.5, 2.5], vec![Some(0.5), Some(2.5)]).unwrap();
        assert_eq!(
            build_response(&s, &edges),
            Err(UnfoldError::EmptyTruthBin { bin: 1 })
        );
    }

    #[test]
    fn poisson_edge_cases() {
        let edges = uniform_edges(0.0, 2.0, 2).unwrap();
        let mu = Histogram::new(edges.clone(), vec![0.0, 3.5]).unwrap();
        for s in 0..20 {
            let n = poissonize(&mu, s).unwrap();
            assert_eq!(n.counts()[0], 0.0);
            assert!(n.is_integral());
        }
        assert_eq!(poissonize(&mu, 7).unwrap(), poissonize(&mu, 7).unwrap());
        assert!(poisson_counts(&[-1.0], &mut seed::rng(0)).is_err());
    }

    #[test]
    fn poisson_mean_clt_bound() {
        let edges = uniform_edges(0.0, 1.0, 1).unwrap();
        let mu = Histogram::new(edges, vec![100.0]).unwrap();
        let seeds = 1000;
        let mean = (0..seeds)
            .map(|s| poissonize(&mu, s).unwrap().counts()[0])
            .sum::<f64>()
            / seeds as f64;
        assert!((mean - 100.0).abs() < 5.0 * (100.0f64 / seeds as f64).sqrt());
    }
}
