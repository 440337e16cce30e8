//! Reconstruction quality: Pearson chi-square, bin-wise ratios, and Poisson
//! bootstrap uncertainties.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::poisson_counts;
use crate::error::{check_len, Result, UnfoldError};
use crate::histogram::{Histogram, ResponseMatrix};
use crate::methods::Unfolder;
use crate::seed::{self, derive_seed};

/// Chi-square value and how many zero-truth bins were left out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chi2 {
    pub value: f64,
    pub excluded_bins: usize,
}

/// `sum_i (z_true_i - z_hat_i)^2 / z_true_i` over bins with positive truth.
pub fn chi2(truth: &Histogram, estimate: &[f64]) -> Result<Chi2> {
    check_len("estimate", truth.n_bins(), estimate.len())?;
    let mut value = 0.0;
    let mut excluded_bins = 0;
    for (&t, &e) in truth.counts().iter().zip(estimate) {
        if t > 0.0 {
            value += (t - e) * (t - e) / t;
        } else {
            excluded_bins += 1;
        }
    }
    if excluded_bins == truth.n_bins() {
        return Err(UnfoldError::invalid(
            "chi-square undefined: every truth bin is empty",
        ));
    }
    Ok(Chi2 {
        value,
        excluded_bins,
    })
}

/// `z_hat_i / z_true_i`, `None` where the truth bin is empty.
pub fn binwise_ratio(truth: &Histogram, estimate: &[f64]) -> Result<Vec<Option<f64>>> {
    check_len("estimate", truth.n_bins(), estimate.len())?;
    Ok(truth
        .counts()
        .iter()
        .zip(estimate)
        .map(|(&t, &e)| if t > 0.0 { Some(e / t) } else { None })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub std: Vec<f64>,
    pub toys: usize,
    pub failed: usize,
}

/// Per-bin sample standard deviation of `unfolder` over Poisson replicas of `n`.
///
/// Toy `t` resamples with `derive_seed(seed, t)`; annealing toys are also
/// reseeded from that stream. Failed toys are skipped; more than half failing
/// is an error.
pub fn bootstrap_errors(
    unfolder: &Unfolder,
    r: &ResponseMatrix,
    n: &Histogram,
    beta: Option<&Histogram>,
    n_toys: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    if n_toys < 2 {
        return Err(UnfoldError::invalid("bootstrap needs at least 2 toys"));
    }
    check_len("measured histogram", r.n_bins(), n.n_bins())?;
    let toys: Vec<Option<Vec<f64>>> = (0..n_toys)
        .into_par_iter()
        .map(|t| {
            let toy_seed = derive_seed(seed, t as u64);
            let mut rng = seed::rng(toy_seed);
            let counts = poisson_counts(n.counts(), &mut rng).ok()?;
            let toy = n.with_counts(counts).ok()?;
            unfolder
                .reseeded(derive_seed(toy_seed, 1))
                .run(r, &toy, beta)
                .ok()
                .map(|res| res.estimate)
        })
        .collect();

    let ok: Vec<&Vec<f64>> = toys.iter().flatten().collect();
    let failed = n_toys - ok.len();
    if 2 * failed > n_toys || ok.len() < 2 {
        return Err(UnfoldError::BootstrapFailed {
            failed,
            total: n_toys,
        });
    }
    let m = r.n_bins();
    let k = ok.len() as f64;
    let std = (0..m)
        .map(|i| {
            let mean = ok.iter().map(|z| z[i]).sum::<f64>() / k;
            let var = ok.iter().map(|z| (z[i] - mean).powi(2)).sum::<f64>() / (k - 1.0);
            var.sqrt()
        })
        .collect();
    Ok(BootstrapSummary {
        std,
        toys: ok.len(),
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histogram::uniform_edges;
    use crate::methods::UnfoldSettings;
    use crate::result::Method;

    fn hist(counts: &[f64]) -> Histogram {
        Histogram::new(uniform_edges(0.0, 1.0, counts.len()).unwrap(), counts.to_vec()).unwrap()
    }

    #[test]
    fn chi2_examples() {
        let t = hist(&[4.0, 9.0]);
        assert_eq!(chi2(&t, &[4.0, 9.0]).unwrap().value, 0.0);
        assert_eq!(chi2(&t, &[6.0, 6.0]).unwrap().value, 2.0);
        let scaled = hist(&[12.0, 27.0]);
        assert!((chi2(&scaled, &[18.0, 18.0]).unwrap().value - 6.0).abs() < 1e-12);
    }

    #[test]
    fn chi2_zero_truth_bins() {
        let t = hist(&[0.0, 9.0]);
        let c = chi2(&t, &[5.0, 9.0]).unwrap();
        assert_eq!(c.value, 0.0);
        assert_eq!(c.excluded_bins, 1);
        assert!(chi2(&hist(&[0.0, 0.0]), &[1.0, 1.0]).is_err());
        assert!(chi2(&t, &[1.0]).is_err());
    }

    #[test]
    fn ratios() {
        let t = hist(&[2.0, 0.0, 5.0]);
        assert_eq!(
            binwise_ratio(&t, &[2.0, 1.0, 10.0]).unwrap(),
            vec![Some(1.0), None, Some(2.0)]
        );
    }

    #[test]
    fn bootstrap_empty_data_has_zero_spread() {
        let u = Unfolder::new(Method::Mi, UnfoldSettings::default());
        let s = bootstrap_errors(&u, &ResponseMatrix::identity(3), &hist(&[0.0; 3]), None, 10, 1)
            .unwrap();
        assert_eq!(s.std, vec![0.0; 3]);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let u = Unfolder::new(Method::Mi, UnfoldSettings::default());
        let n = hist(&[40.0, 80.0, 25.0]);
        let r = ResponseMatrix::identity(3);
        let a = bootstrap_errors(&u, &r, &n, None, 20, 9).unwrap();
        let b = bootstrap_errors(&u, &r, &n, None, 20, 9).unwrap();
        assert_eq!(a, b);
        assert!(bootstrap_errors(&u, &r, &n, None, 1, 9).is_err());
    }

    #[test]
    fn bootstrap_fails_when_most_toys_fail() {
        // singular response: every MI toy fails
        let r = ResponseMatrix::from_entries(nalgebra::DMatrix::from_element(2, 2, 0.5)).unwrap();
        let u = Unfolder::new(Method::Mi, UnfoldSettings::default());
        assert!(matches!(
            bootstrap_errors(&u, &r, &hist(&[3.0, 3.0]), None, 10, 0),
            Err(UnfoldError::BootstrapFailed { failed: 10, total: 10 })
        ));
    }
}
