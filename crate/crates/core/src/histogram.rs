//! Binned spectra, detector response, and the discrete folding map.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{check_len, Result, UnfoldError};

/// Absolute tolerance for the column-sum / efficiency consistency check.
pub const EFFICIENCY_TOLERANCE: f64 = 1e-12;

/// A one-dimensional binned spectrum.
///
/// Holds truth histograms, measured histograms, expectations and
/// backgrounds alike. Counts are stored as reals; `integral` marks
/// histograms that were validated as integer-valued (observed data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHistogram", into = "RawHistogram")]
pub struct Histogram {
    edges: Vec<f64>,
    counts: Vec<f64>,
    integral: bool,
}

#[derive(Serialize, Deserialize)]
struct RawHistogram {
    edges: Vec<f64>,
    counts: Vec<f64>,
}

impl TryFrom<RawHistogram> for Histogram {
    type Error = UnfoldError;

    fn try_from(raw: RawHistogram) -> Result<Self> {
        Histogram::new(raw.edges, raw.counts)
    }
}

impl From<Histogram> for RawHistogram {
    fn from(h: Histogram) -> Self {
        RawHistogram {
            edges: h.edges,
            counts: h.counts,
        }
    }
}

/// `n_bins` equal-width bin boundaries spanning `[low, high]`.
pub fn uniform_edges(low: f64, high: f64, n_bins: usize) -> Result<Vec<f64>> {
    if n_bins == 0 {
        return Err(UnfoldError::invalid("bin count must be positive"));
    }
    if !(low.is_finite() && high.is_finite() && low < high) {
        return Err(UnfoldError::invalid(format!(
            "histogram window [{low}, {high}] is empty"
        )));
    }
    let width = (high - low) / n_bins as f64;
    let mut edges: Vec<f64> = (0..n_bins).map(|k| low + width * k as f64).collect();
    edges.push(high);
    Ok(edges)
}

fn validate_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(UnfoldError::invalid("a histogram needs at least two edges"));
    }
    if edges.iter().any(|e| !e.is_finite()) {
        return Err(UnfoldError::invalid("bin edges must be finite"));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(UnfoldError::invalid("bin edges must be strictly increasing"));
    }
    Ok(())
}

impl Histogram {
    /// Real-valued histogram (expectations, estimates, backgrounds).
    pub fn new(edges: Vec<f64>, counts: Vec<f64>) -> Result<Self> {
        validate_edges(&edges)?;
        check_len("histogram counts", edges.len() - 1, counts.len())?;
        if let Some((i, c)) = counts
            .iter()
            .enumerate()
            .find(|(_, c)| !c.is_finite() || **c < 0.0)
        {
            return Err(UnfoldError::invalid(format!(
                "bin {i} has invalid count {c}"
            )));
        }
        let integral = counts.iter().all(|c| c.fract() == 0.0);
        Ok(Self {
            edges,
            counts,
            integral,
        })
    }

    /// Observed histogram; every count must be a non-negative integer.
    pub fn observed(edges: Vec<f64>, counts: Vec<f64>) -> Result<Self> {
        let h = Self::new(edges, counts)?;
        if !h.integral {
            return Err(UnfoldError::invalid(
                "observed histogram counts must be integers",
            ));
        }
        Ok(h)
    }

    /// All-zero histogram on the given binning.
    pub fn zeros(edges: Vec<f64>) -> Result<Self> {
        let m = edges.len().saturating_sub(1);
        Self::new(edges, vec![0.0; m])
    }

    /// Fills `values` into the binning. Bins are half-open `[lo, hi)` except
    /// the last, which includes its upper edge. Out-of-window values are dropped.
    pub fn from_values(edges: Vec<f64>, values: impl IntoIterator<Item = f64>) -> Result<Self> {
        validate_edges(&edges)?;
        let mut counts = vec![0.0; edges.len() - 1];
        for v in values {
            if let Some(b) = bin_index(&edges, v) {
                counts[b] += 1.0;
            }
        }
        Self::new(edges, counts)
    }

    /// Same binning, new contents.
    pub fn with_counts(&self, counts: Vec<f64>) -> Result<Self> {
        Self::new(self.edges.clone(), counts)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn is_integral(&self) -> bool {
        self.integral
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn same_binning(&self, other: &Histogram) -> bool {
        self.edges == other.edges
    }
}

/// Bin containing `value`, or `None` outside the window.
pub fn bin_index(edges: &[f64], value: f64) -> Option<usize> {
    let m = edges.len().checked_sub(1)?;
    if !value.is_finite() || value < edges[0] || value > edges[m] {
        return None;
    }
    if value == edges[m] {
        return Some(m - 1);
    }
    // first edge strictly greater than value, minus one
    Some(edges.partition_point(|e| *e <= value) - 1)
}

/// Square migration matrix `R[i][j]` = P(reco bin i | truth bin j), with
/// per-truth-bin efficiencies equal to the column sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawResponse", into = "RawResponse")]
pub struct ResponseMatrix {
    entries: DMatrix<f64>,
    efficiencies: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawResponse {
    entries: Vec<Vec<f64>>,
    efficiencies: Vec<f64>,
}

impl TryFrom<RawResponse> for ResponseMatrix {
    type Error = UnfoldError;

    fn try_from(raw: RawResponse) -> Result<Self> {
        let m = raw.entries.len();
        for row in &raw.entries {
            check_len("response row", m, row.len())?;
        }
        let entries = DMatrix::from_fn(m, m, |i, j| raw.entries[i][j]);
        ResponseMatrix::new(entries, raw.efficiencies)
    }
}

impl From<ResponseMatrix> for RawResponse {
    fn from(r: ResponseMatrix) -> Self {
        let m = r.n_bins();
        RawResponse {
            entries: (0..m)
                .map(|i| (0..m).map(|j| r.entries[(i, j)]).collect())
                .collect(),
            efficiencies: r.efficiencies,
        }
    }
}

impl ResponseMatrix {
    /// Validates probabilities and that each column sums to its efficiency.
    pub fn new(entries: DMatrix<f64>, efficiencies: Vec<f64>) -> Result<Self> {
        let m = entries.nrows();
        if m == 0 {
            return Err(UnfoldError::invalid("response matrix is empty"));
        }
        check_len("response columns", m, entries.ncols())?;
        check_len("efficiencies", m, efficiencies.len())?;
        if let Some(v) = entries
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(UnfoldError::invalid(format!(
                "response entry {v} is not a probability"
            )));
        }
        for (j, &eps) in efficiencies.iter().enumerate() {
            if !(0.0..=1.0).contains(&eps) {
                return Err(UnfoldError::invalid(format!(
                    "efficiency {eps} of bin {j} outside [0, 1]"
                )));
            }
            let col: f64 = entries.column(j).iter().sum();
            if (col - eps).abs() > EFFICIENCY_TOLERANCE {
                return Err(UnfoldError::invalid(format!(
                    "column {j} sums to {col}, efficiency says {eps}"
                )));
            }
        }
        Ok(Self {
            entries,
            efficiencies,
        })
    }

    /// Efficiencies taken as the column sums.
    pub fn from_entries(entries: DMatrix<f64>) -> Result<Self> {
        let eff = entries.column_iter().map(|c| c.iter().sum()).collect();
        Self::new(entries, eff)
    }

    pub fn identity(m: usize) -> Self {
        Self {
            entries: DMatrix::identity(m, m),
            efficiencies: vec![1.0; m],
        }
    }

    pub fn n_bins(&self) -> usize {
        self.efficiencies.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn efficiencies(&self) -> &[f64] {
        &self.efficiencies
    }

    pub fn get(&self, reco: usize, truth: usize) -> f64 {
        self.entries[(reco, truth)]
    }

    /// `R z`, without background.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let m = self.n_bins();
        (0..m)
            .map(|i| (0..m).map(|j| self.entries[(i, j)] * z[j]).sum())
            .collect()
    }
}

/// Expected reconstructed spectrum `mu_i = sum_j R_ij z_j + beta_i`.
pub fn fold(r: &ResponseMatrix, z: &Histogram, beta: Option<&Histogram>) -> Result<Histogram> {
    check_len("truth histogram", r.n_bins(), z.n_bins())?;
    let mut mu = r.apply(z.counts());
    if let Some(b) = beta {
        check_len("background histogram", r.n_bins(), b.n_bins())?;
        for (m, b) in mu.iter_mut().zip(b.counts()) {
            *m += b;
        }
    }
    // round-off in R z can leave -0.0 or a -1e-17; clamp so the result stays a valid histogram
    for m in &mut mu {
        if *m < 0.0 {
            *m = 0.0;
        }
    }
    z.with_counts(mu)
}

/// Poisson log-likelihood `sum_i n_i ln mu_i - mu_i - ln Gamma(n_i + 1)`.
///
/// Returns negative infinity when some bin has `mu_i = 0` but `n_i > 0`.
pub fn poisson_loglik(n: &Histogram, mu: &Histogram) -> Result<f64> {
    check_len("expectation histogram", n.n_bins(), mu.n_bins())?;
    let mut total = 0.0;
    for (&k, &m) in n.counts().iter().zip(mu.counts()) {
        if k > 0.0 {
            if m <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += k * m.ln();
        }
        total -= m + ln_gamma(k + 1.0);
    }
    Ok(total)
}

/// Subtracts an optional background from `n`, leaving negatives as-is.
pub(crate) fn signal_counts(n: &Histogram, beta: Option<&Histogram>) -> Result<Vec<f64>> {
    match beta {
        None => Ok(n.counts().to_vec()),
        Some(b) => {
            check_len("background histogram", n.n_bins(), b.n_bins())?;
            Ok(n.counts().iter().zip(b.counts()).map(|(n, b)| n - b).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn edges(m: usize) -> Vec<f64> {
        uniform_edges(0.0, m as f64, m).unwrap()
    }

    #[test]
    fn identity_fold_is_passthrough() {
        let r = ResponseMatrix::identity(2);
        let z = Histogram::new(edges(2), vec![5.0, 3.0]).unwrap();
        let mu = fold(&r, &z, Some(&Histogram::zeros(edges(2)).unwrap())).unwrap();
        assert_eq!(mu.counts(), &[5.0, 3.0]);
    }

    #[test]
    fn pure_background_fold() {
        let r = ResponseMatrix::from_entries(DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.2, 0.4]))
            .unwrap();
        let z = Histogram::zeros(edges(2)).unwrap();
        let beta = Histogram::new(edges(2), vec![2.0, 7.0]).unwrap();
        assert_eq!(fold(&r, &z, Some(&beta)).unwrap().counts(), &[2.0, 7.0]);
    }

    #[test]
    fn hand_multiplied_fold() {
        let r = ResponseMatrix::from_entries(DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.5, 1.0]))
            .unwrap();
        let z = Histogram::new(edges(2), vec![10.0, 4.0]).unwrap();
        let beta = Histogram::new(edges(2), vec![1.0, 0.0]).unwrap();
        assert_eq!(fold(&r, &z, Some(&beta)).unwrap().counts(), &[6.0, 9.0]);
    }

    #[test]
    fn fold_rejects_mismatched_bins() {
        let r = ResponseMatrix::identity(3);
        let z = Histogram::new(edges(2), vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            fold(&r, &z, None),
            Err(UnfoldError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn loglik_examples() {
        let one = Histogram::new(edges(1), vec![1.0]).unwrap();
        assert_relative_eq!(poisson_loglik(&one, &one).unwrap(), -1.0, epsilon = 1e-12);
        let n = Histogram::new(edges(1), vec![0.0]).unwrap();
        let mu = Histogram::new(edges(1), vec![2.0]).unwrap();
        assert_relative_eq!(poisson_loglik(&n, &mu).unwrap(), -2.0, epsilon = 1e-12);
        let zero = Histogram::new(edges(1), vec![0.0]).unwrap();
        assert_eq!(poisson_loglik(&one, &zero).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn loglik_peaks_at_observed() {
        let n = Histogram::new(edges(3), vec![4.0, 0.0, 17.0]).unwrap();
        let best = poisson_loglik(&n, &Histogram::new(edges(3), vec![4.0, 1e-300, 17.0]).unwrap())
            .unwrap();
        for scale in [0.5, 0.9, 1.1, 2.0] {
            let mu = Histogram::new(edges(3), vec![4.0 * scale, 0.3, 17.0 * scale]).unwrap();
            assert!(poisson_loglik(&n, &mu).unwrap() < best);
        }
    }

    #[test]
    fn rejects_bad_histograms() {
        assert!(Histogram::new(vec![0.0, 1.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(Histogram::new(edges(2), vec![1.0]).is_err());
        assert!(Histogram::new(edges(2), vec![1.0, -1.0]).is_err());
        assert!(Histogram::new(edges(2), vec![1.0, f64::NAN]).is_err());
        assert!(Histogram::observed(edges(2), vec![1.0, 0.5]).is_err());
        assert!(Histogram::observed(edges(2), vec![1.0, 2.0]).unwrap().is_integral());
    }

    #[test]
    fn response_checks_column_sums() {
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.5, 1.0]);
        assert!(ResponseMatrix::new(m.clone(), vec![1.0, 0.9]).is_err());
        assert!(ResponseMatrix::new(m, vec![1.0, 1.0]).is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 1.0]);
        assert!(ResponseMatrix::from_entries(bad).is_err());
    }

    #[test]
    fn bin_lookup_edges() {
        let e = edges(3);
        assert_eq!(bin_index(&e, 0.0), Some(0));
        assert_eq!(bin_index(&e, 0.999), Some(0));
        assert_eq!(bin_index(&e, 1.0), Some(1));
        assert_eq!(bin_index(&e, 3.0), Some(2));
        assert_eq!(bin_index(&e, 3.0001), None);
        assert_eq!(bin_index(&e, -0.1), None);
    }

    #[test]
    fn json_schema_round_trip() {
        let h = Histogram::new(vec![0.0, 0.1, 0.30000000000000004], vec![1.0 / 3.0, 2.5e-300])
            .unwrap();
        let text = serde_json::to_string(&h).unwrap();
        assert!(text.starts_with(r#"{"edges":"#));
        let back: Histogram = serde_json::from_str(&text).unwrap();
        assert_eq!(back, h);

        let r = ResponseMatrix::from_entries(DMatrix::from_row_slice(
            2,
            2,
            &[0.1, 0.7, 0.2, 0.3],
        ))
        .unwrap();
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains(r#""entries":[[0.1,0.7],[0.2,0.3]]"#));
        let back: ResponseMatrix = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }
}
