//! Baseline unfolding estimators: matrix inversion, iterative Bayesian
//! unfolding, and the truncated singular-value pseudo-inverse.
//!
//! The SVD estimator here is the plain truncated pseudo-inverse. It does not
//! apply the curvature-weighted rescaling of the Hoecker-Kartvelishvili method.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, UnfoldError};
use crate::histogram::{signal_counts, Histogram, ResponseMatrix};
use crate::result::{Method, UnfoldResult};

/// Condition-number estimate above which inversion is refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Singular values in descending order with their vectors.
///
/// Ties keep the original index order, so the decomposition is reproducible.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub fn sorted_svd(a: &DMatrix<f64>) -> SortedSvd {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    // stable sort: equal values stay in index order
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let u = DMatrix::from_fn(u.nrows(), order.len(), |i, k| u[(i, order[k])]);
    let v = DMatrix::from_fn(v_t.ncols(), order.len(), |i, k| v_t[(order[k], i)]);
    SortedSvd {
        u,
        singular_values: order.iter().map(|&k| s[k]).collect(),
        v,
    }
}

/// `sigma_max / sigma_min`, infinite for an exactly singular matrix.
pub fn condition_number(singular_values: &[f64]) -> f64 {
    let max = singular_values.iter().copied().fold(0.0, f64::max);
    let min = singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Matrix inversion `z = R^-1 (n - beta)`.
///
/// Negative entries are reported unchanged.
pub fn unfold_mi(r: &ResponseMatrix, n: &Histogram, beta: Option<&Histogram>) -> Result<UnfoldResult> {
    check_len("measured histogram", r.n_bins(), n.n_bins())?;
    let y = DVector::from_vec(signal_counts(n, beta)?);
    let svd = sorted_svd(r.matrix());
    let condition = condition_number(&svd.singular_values);
    if !(condition <= MAX_CONDITION) {
        return Err(UnfoldError::SingularResponse { condition });
    }
    let lu = r.matrix().clone().lu();
    let mut z = lu
        .solve(&y)
        .ok_or(UnfoldError::SingularResponse { condition })?;
    // one step of iterative refinement
    let residual = &y - r.matrix() * &z;
    if let Some(dz) = lu.solve(&residual) {
        z += dz;
    }
    Ok(UnfoldResult::new(Method::Mi, z.iter().copied().collect()).diag("condition_number", condition))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    #[default]
    Uniform,
    Measured,
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbuConfig {
    pub iterations: usize,
    #[serde(default)]
    pub prior: Prior,
}

impl Default for IbuConfig {
    fn default() -> Self {
        Self {
            iterations: 4,
            prior: Prior::Uniform,
        }
    }
}

/// One Bayes update of `z` given signal counts `y`.
///
/// Returns the number of reco bins skipped because their folded
/// expectation vanished while data were present.
fn ibu_step(r: &ResponseMatrix, y: &[f64], z: &[f64], out: &mut [f64]) -> usize {
    let m = r.n_bins();
    let folded = r.apply(z);
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut skipped = 0;
    for i in 0..m {
        if y[i] == 0.0 {
            continue;
        }
        if folded[i] <= 0.0 {
            skipped += 1;
            continue;
        }
        let w = y[i] / folded[i];
        for j in 0..m {
            out[j] += r.get(i, j) * z[j] * w;
        }
    }
    for (o, e) in out.iter_mut().zip(r.efficiencies()) {
        *o /= e;
    }
    skipped
}

/// Iterative Bayesian unfolding with a fixed number of updates.
pub fn unfold_ibu(
    r: &ResponseMatrix,
    n: &Histogram,
    beta: Option<&Histogram>,
    cfg: &IbuConfig,
) -> Result<UnfoldResult> {
    let m = r.n_bins();
    check_len("measured histogram", m, n.n_bins())?;
    if cfg.iterations == 0 {
        return Err(UnfoldError::invalid("IBU needs at least one iteration"));
    }
    if let Some(j) = r.efficiencies().iter().position(|&e| e <= 0.0) {
        return Err(UnfoldError::invalid(format!(
            "IBU needs positive efficiencies; bin {j} has none"
        )));
    }
    let y: Vec<f64> = signal_counts(n, beta)?
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let total = y.iter().sum::<f64>();
    let mut z = match &cfg.prior {
        Prior::Uniform => vec![(total / m as f64).max(1.0); m],
        Prior::Measured => y.clone(),
        Prior::Custom(p) => {
            check_len("IBU prior", m, p.len())?;
            p.clone()
        }
    };
    if z.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(UnfoldError::invalid("IBU prior must be strictly positive"));
    }

    let mut next = vec![0.0; m];
    let mut skipped_total = 0;
    for _ in 0..cfg.iterations {
        skipped_total += ibu_step(r, &y, &z, &mut next);
        std::mem::swap(&mut z, &mut next);
    }
    let mut res = UnfoldResult::new(Method::Ibu, z).diag("iterations", cfg.iterations);
    if skipped_total > 0 {
        res.warn(format!(
            "{skipped_total} reco-bin terms skipped for zero folded expectation"
        ));
    }
    Ok(res)
}

/// Iterates IBU and reports every intermediate estimate.
pub fn ibu_trajectory(
    r: &ResponseMatrix,
    n: &Histogram,
    prior: &[f64],
    iterations: usize,
) -> Result<Vec<Vec<f64>>> {
    check_len("IBU prior", r.n_bins(), prior.len())?;
    let y = n.counts();
    let mut z = prior.to_vec();
    let mut next = vec![0.0; z.len()];
    let mut out = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        ibu_step(r, y, &z, &mut next);
        std::mem::swap(&mut z, &mut next);
        out.push(z.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SvdConfig {
    /// Retained singular values; `None` keeps every `sigma_k >= 1e-3 sigma_1`.
    pub rank: Option<usize>,
}

/// Relative spectrum threshold for the default SVD rank.
pub const SVD_DEFAULT_THRESHOLD: f64 = 1e-3;

pub fn default_svd_rank(singular_values: &[f64]) -> usize {
    let s1 = singular_values.first().copied().unwrap_or(0.0);
    singular_values
        .iter()
        .take_while(|&&s| s > 0.0 && s >= SVD_DEFAULT_THRESHOLD * s1)
        .count()
        .max(1)
}

/// Truncated pseudo-inverse `z = V S_k^+ U^T (n - beta)`.
pub fn unfold_svd(
    r: &ResponseMatrix,
    n: &Histogram,
    beta: Option<&Histogram>,
    cfg: &SvdConfig,
) -> Result<UnfoldResult> {
    let m = r.n_bins();
    check_len("measured histogram", m, n.n_bins())?;
    let y = DVector::from_vec(signal_counts(n, beta)?);
    let svd = sorted_svd(r.matrix());
    let s = &svd.singular_values;
    let requested = match cfg.rank {
        Some(k) if k == 0 || k > m => {
            return Err(UnfoldError::invalid(format!(
                "SVD rank must be in 1..={m}, got {k}"
            )))
        }
        Some(k) => k,
        None => default_svd_rank(s),
    };
    let cutoff = s[0] * m as f64 * f64::EPSILON;
    let nonzero = s.iter().take_while(|&&v| v > cutoff).count();
    let rank = requested.min(nonzero);

    let mut z = DVector::<f64>::zeros(m);
    for k in 0..rank {
        let coeff = svd.u.column(k).dot(&y) / s[k];
        z.axpy(coeff, &svd.v.column(k), 1.0);
    }
    let mut res = UnfoldResult::new(Method::Svd, z.iter().copied().collect())
        .diag("rank", rank)
        .diag("singular_values", s.clone());
    if rank < requested {
        res.warn(format!(
            "rank {requested} clipped to {rank} nonzero singular values"
        ));
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histogram::{fold, uniform_edges};

    fn hist(counts: &[f64]) -> Histogram {
        Histogram::new(uniform_edges(0.0, 1.0, counts.len()).unwrap(), counts.to_vec()).unwrap()
    }

    fn smear3() -> ResponseMatrix {
        ResponseMatrix::from_entries(DMatrix::from_row_slice(
            3,
            3,
            &[0.6, 0.2, 0.0, 0.2, 0.5, 0.2, 0.0, 0.2, 0.6],
        ))
        .unwrap()
    }

    #[test]
    fn mi_identity_and_scalar() {
        let n = hist(&[10.0, 6.0]);
        let res = unfold_mi(&ResponseMatrix::identity(2), &n, None).unwrap();
        assert_eq!(res.estimate, vec![10.0, 6.0]);

        let half = ResponseMatrix::from_entries(DMatrix::identity(2, 2) * 0.5).unwrap();
        let res = unfold_mi(&half, &n, None).unwrap();
        assert!((res.estimate[0] - 20.0).abs() < 1e-12);
        assert!((res.estimate[1] - 12.0).abs() < 1e-12);
    }

    #[test]
    fn mi_round_trip_with_background() {
        let r = smear3();
        let n = hist(&[40.0, 55.0, 31.0]);
        let beta = hist(&[2.0, 1.0, 0.5]);
        let z = unfold_mi(&r, &n, Some(&beta)).unwrap().estimate;
        let folded: Vec<f64> = r.apply(&z).iter().zip(beta.counts()).map(|(a, b)| a + b).collect();
        for (f, n) in folded.iter().zip(n.counts()) {
            assert!((f - n).abs() <= 1e-9 * 55.0);
        }
    }

    #[test]
    fn mi_rejects_singular() {
        let r = ResponseMatrix::from_entries(DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]))
            .unwrap();
        assert!(matches!(
            unfold_mi(&r, &hist(&[1.0, 1.0]), None),
            Err(UnfoldError::SingularResponse { .. })
        ));
    }

    #[test]
    fn ibu_identity_one_step() {
        let n = hist(&[7.0, 0.0, 3.0]);
        let cfg = IbuConfig {
            iterations: 1,
            prior: Prior::Custom(vec![1.0, 5.0, 0.2]),
        };
        let res = unfold_ibu(&ResponseMatrix::identity(3), &n, None, &cfg).unwrap();
        assert_eq!(res.estimate, vec![7.0, 0.0, 3.0]);
    }

    #[test]
    fn ibu_fixed_point() {
        let r = smear3();
        let truth = vec![100.0, 250.0, 80.0];
        let n = fold(&r, &hist(&truth), None).unwrap();
        for iterations in [1, 4, 25] {
            let cfg = IbuConfig {
                iterations,
                prior: Prior::Custom(truth.clone()),
            };
            let z = unfold_ibu(&r, &n, None, &cfg).unwrap().estimate;
            for (a, b) in z.iter().zip(&truth) {
                assert!((a - b).abs() <= 1e-9 * b);
            }
        }
    }

    #[test]
    fn ibu_rejects_bad_config() {
        let r = smear3();
        let n = hist(&[1.0, 2.0, 3.0]);
        let zero_iter = IbuConfig {
            iterations: 0,
            prior: Prior::Uniform,
        };
        assert!(unfold_ibu(&r, &n, None, &zero_iter).is_err());
        let bad_prior = IbuConfig {
            iterations: 1,
            prior: Prior::Custom(vec![1.0, 0.0, 1.0]),
        };
        assert!(unfold_ibu(&r, &n, None, &bad_prior).is_err());
        let dead = ResponseMatrix::from_entries(DMatrix::from_row_slice(
            2,
            2,
            &[1.0, 0.0, 0.0, 0.0],
        ))
        .unwrap();
        assert!(unfold_ibu(&dead, &hist(&[1.0, 1.0]), None, &IbuConfig::default()).is_err());
    }

    #[test]
    fn ibu_skips_unreachable_reco_bins() {
        // reco bin 1 gets nothing from any truth bin
        let r = ResponseMatrix::from_entries(DMatrix::from_row_slice(
            2,
            2,
            &[0.5, 0.5, 0.0, 0.0],
        ))
        .unwrap();
        let res = unfold_ibu(&r, &hist(&[4.0, 3.0]), None, &IbuConfig::default()).unwrap();
        assert_eq!(res.warnings().len(), 1);
        assert!(res.estimate.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn svd_full_rank_matches_mi() {
        let r = smear3();
        let n = hist(&[40.0, 55.0, 31.0]);
        let mi = unfold_mi(&r, &n, None).unwrap().estimate;
        let svd = unfold_svd(&r, &n, None, &SvdConfig { rank: Some(3) }).unwrap().estimate;
        for (a, b) in mi.iter().zip(&svd) {
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
        }
    }

    #[test]
    fn svd_identity_any_rank() {
        let n = hist(&[5.0, 9.0, 2.0, 4.0]);
        for k in 1..=4 {
            let z = unfold_svd(&ResponseMatrix::identity(4), &n, None, &SvdConfig { rank: Some(k) })
                .unwrap()
                .estimate;
            // identity: ties broken by index, so rank k keeps the first k bins
            for (i, v) in z.iter().enumerate() {
                let want = if i < k { n.counts()[i] } else { 0.0 };
                assert!((v - want).abs() < 1e-12, "k={k} i={i} v={v}");
            }
        }
    }

    #[test]
    fn svd_rank_validation_and_clipping() {
        let r = smear3();
        let n = hist(&[1.0, 2.0, 3.0]);
        assert!(unfold_svd(&r, &n, None, &SvdConfig { rank: Some(0) }).is_err());
        assert!(unfold_svd(&r, &n, None, &SvdConfig { rank: Some(4) }).is_err());

        let rank1 = ResponseMatrix::from_entries(DMatrix::from_row_slice(
            2,
            2,
            &[0.5, 0.5, 0.5, 0.5],
        ))
        .unwrap();
        let res = unfold_svd(&rank1, &hist(&[2.0, 2.0]), None, &SvdConfig { rank: Some(2) }).unwrap();
        assert_eq!(res.diagnostics["rank"], 1);
        assert_eq!(res.warnings().len(), 1);
    }

    #[test]
    fn sorted_svd_reconstructs() {
        let a = smear3().matrix().clone();
        let svd = sorted_svd(&a);
        assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
        let s = DMatrix::from_diagonal(&DVector::from_vec(svd.singular_values.clone()));
        let back = &svd.u * s * svd.v.transpose();
        assert!((back - a).abs().max() < 1e-12);
    }

    #[test]
    fn default_rank_threshold() {
        assert_eq!(default_svd_rank(&[1.0, 0.5, 2e-3, 5e-4]), 3);
        assert_eq!(default_svd_rank(&[1.0, 1e-3]), 2);
        assert_eq!(default_svd_rank(&[1.0, 0.0]), 1);
    }
}
