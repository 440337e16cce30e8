//! Regularized least-squares objective over integer bin contents and its
//! lowering to a quadratic unconstrained binary optimization (QUBO) problem.
//!
//! The integer problem is
//!
//! ```text
//! min_z  a.z + z^T B z          a = -2 R^T (n - beta)
//!                               B = R^T R + lambda D^T D
//! ```
//!
//! which differs from `||R z - (n - beta)||^2 + lambda ||D z||^2` only by the
//! constant `offset = ||n - beta||^2`. Each `z_i` is written in binary,
//! `z_i = sum_k 2^k x_{i,k}`, and the bitstrings of all bins are concatenated.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_len, Result, UnfoldError};
use crate::histogram::{signal_counts, Histogram, ResponseMatrix};
use crate::laplacian::Laplacian;

/// Default multiplicative headroom on the efficiency-corrected bound.
pub const DEFAULT_HEADROOM: f64 = 2.0;
/// Smallest per-bin upper bound.
pub const MIN_BOUND: u64 = 16;
/// Default cap on the number of binary variables.
pub const DEFAULT_MAX_BITS: usize = 4096;

/// `a.z + z^T B z + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub a: Vec<f64>,
    pub b: DMatrix<f64>,
    pub offset: f64,
    pub lambda: f64,
}

/// Builds the objective for data `n - beta`. `laplacian` may be omitted only when `lambda == 0`.
pub fn build_objective(
    r: &ResponseMatrix,
    n: &Histogram,
    beta: Option<&Histogram>,
    lambda: f64,
    laplacian: Option<&Laplacian>,
) -> Result<QuadraticObjective> {
    let m = r.n_bins();
    check_len("measured histogram", m, n.n_bins())?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(UnfoldError::invalid(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    let y = DVector::from_vec(signal_counts(n, beta)?);
    let rm = r.matrix();
    let a = (rm.transpose() * &y) * -2.0;
    let mut b = rm.transpose() * rm;
    if lambda > 0.0 {
        let d = laplacian.ok_or_else(|| {
            UnfoldError::invalid("lambda > 0 requires a curvature operator")
        })?;
        check_len("laplacian", m, d.n_bins())?;
        b += d.gram() * lambda;
    }
    // exact symmetry, independent of how the products were rounded
    let b = DMatrix::from_fn(m, m, |i, j| 0.5 * (b[(i, j)] + b[(j, i)]));
    Ok(QuadraticObjective {
        a: a.iter().copied().collect(),
        b,
        offset: y.dot(&y),
        lambda,
    })
}

impl QuadraticObjective {
    pub fn n_bins(&self) -> usize {
        self.a.len()
    }

    /// `a.z + z^T B z` (offset excluded).
    pub fn value(&self, z: &[f64]) -> f64 {
        let m = self.n_bins();
        let mut total = 0.0;
        for i in 0..m {
            let mut row = 0.0;
            for j in 0..m {
                row += self.b[(i, j)] * z[j];
            }
            total += z[i] * (self.a[i] + row);
        }
        total
    }

    /// `a.z + z^T B z + offset`, i.e. the residual plus penalty.
    pub fn residual(&self, z: &[f64]) -> f64 {
        self.value(z) + self.offset
    }

    pub fn value_checked(&self, z: &[f64]) -> Result<f64> {
        check_len("objective point", self.n_bins(), z.len())?;
        Ok(self.value(z))
    }
}

/// `||R z - y||^2 + lambda ||D z||^2`, evaluated directly.
pub fn direct_residual(
    r: &ResponseMatrix,
    y: &[f64],
    lambda: f64,
    laplacian: Option<&Laplacian>,
    z: &[f64],
) -> Result<f64> {
    check_len("data vector", r.n_bins(), y.len())?;
    check_len("objective point", r.n_bins(), z.len())?;
    let fit: f64 = r
        .apply(z)
        .iter()
        .zip(y)
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    let penalty = match laplacian {
        Some(d) if lambda > 0.0 => lambda * d.penalty(z)?,
        _ => 0.0,
    };
    Ok(fit + penalty)
}

/// Inclusive per-bin upper bounds on the integer solution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BoundsVector(Vec<u64>);

impl BoundsVector {
    pub fn new(z_max: Vec<u64>) -> Result<Self> {
        if z_max.contains(&0) {
            return Err(UnfoldError::invalid("every bound must be at least 1"));
        }
        Ok(Self(z_max))
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `z_max_i = max(16, ceil(headroom * n_i / eps_i))`.
pub fn estimate_bounds(n: &Histogram, eps: &[f64], headroom: f64) -> Result<BoundsVector> {
    check_len("efficiencies", n.n_bins(), eps.len())?;
    if !(headroom >= 1.0 && headroom.is_finite()) {
        return Err(UnfoldError::invalid(format!(
            "headroom must be >= 1, got {headroom}"
        )));
    }
    let z_max = n
        .counts()
        .iter()
        .zip(eps)
        .enumerate()
        .map(|(i, (&c, &e))| {
            if !(e > 0.0) {
                return Err(UnfoldError::invalid(format!(
                    "bin {i} has zero efficiency; no bound can be estimated"
                )));
            }
            Ok(((headroom * c / e).ceil() as u64).max(MIN_BOUND))
        })
        .collect::<Result<Vec<_>>>()?;
    BoundsVector::new(z_max)
}

/// Number of bits needed to represent every integer in `[0, z_max]`.
pub fn bit_length(z_max: u64) -> usize {
    (u64::BITS - z_max.leading_zeros()).max(1) as usize
}

/// Binary-encoded objective `f_Q(x) = a_bin.x + x^T B_bin x`.
///
/// `b_bin` is symmetric and keeps its diagonal; since `x_k^2 = x_k` the
/// compact single-matrix form is `Q = B_bin + diag(a_bin)` (see [`QuboModel::q_matrix`]).
#[derive(Debug, Clone, PartialEq)]
pub struct QuboModel {
    pub a_bin: Vec<f64>,
    pub b_bin: DMatrix<f64>,
    /// `p_i = (1, 2, ..., 2^(l_i - 1))` per bin.
    pub precision: Vec<Vec<u64>>,
    pub bit_offsets: Vec<usize>,
    pub z_max: Vec<u64>,
    pub offset: f64,
}

/// A decoded bitstring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub z: Vec<u64>,
    /// Set when some bin exceeded its bound and was clamped.
    pub clamped: bool,
}

pub fn encode(obj: &QuadraticObjective, bounds: &BoundsVector) -> Result<QuboModel> {
    encode_with_cap(obj, bounds, DEFAULT_MAX_BITS)
}

pub fn encode_with_cap(
    obj: &QuadraticObjective,
    bounds: &BoundsVector,
    max_bits: usize,
) -> Result<QuboModel> {
    let m = obj.n_bins();
    check_len("bounds", m, bounds.len())?;
    let lengths: Vec<usize> = bounds.as_slice().iter().map(|&z| bit_length(z)).collect();
    let n_bits: usize = lengths.iter().sum();
    if n_bits > max_bits {
        return Err(UnfoldError::Capacity {
            what: "binary variables",
            required: n_bits,
            limit: max_bits,
        });
    }
    let precision: Vec<Vec<u64>> = lengths
        .iter()
        .map(|&l| (0..l).map(|k| 1u64 << k).collect())
        .collect();
    let mut bit_offsets = Vec::with_capacity(m);
    let mut acc = 0;
    for &l in &lengths {
        bit_offsets.push(acc);
        acc += l;
    }
    // bit -> (bin, place value)
    let owner: Vec<(usize, f64)> = precision
        .iter()
        .enumerate()
        .flat_map(|(i, p)| p.iter().map(move |&w| (i, w as f64)))
        .collect();

    let a_bin = owner.iter().map(|&(i, w)| obj.a[i] * w).collect();
    let b_bin = DMatrix::from_fn(n_bits, n_bits, |k, l| {
        let (i, wi) = owner[k];
        let (j, wj) = owner[l];
        obj.b[(i, j)] * wi * wj
    });
    Ok(QuboModel {
        a_bin,
        b_bin,
        precision,
        bit_offsets,
        z_max: bounds.as_slice().to_vec(),
        offset: obj.offset,
    })
}

impl QuboModel {
    pub fn n_bits(&self) -> usize {
        self.a_bin.len()
    }

    pub fn n_bins(&self) -> usize {
        self.precision.len()
    }

    fn check_bits(&self, x: &[u8]) -> Result<()> {
        check_len("bitstring", self.n_bits(), x.len())?;
        if x.iter().any(|&b| b > 1) {
            return Err(UnfoldError::invalid("bitstring entries must be 0 or 1"));
        }
        Ok(())
    }

    /// `f_Q(x)`. Panics-free for well-formed `x`; see [`Self::energy_checked`].
    pub fn energy(&self, x: &[u8]) -> f64 {
        let on: Vec<usize> = (0..x.len()).filter(|&k| x[k] == 1).collect();
        let mut e = 0.0;
        for &k in &on {
            e += self.a_bin[k];
            for &l in &on {
                e += self.b_bin[(k, l)];
            }
        }
        e
    }

    pub fn energy_checked(&self, x: &[u8]) -> Result<f64> {
        self.check_bits(x)?;
        Ok(self.energy(x))
    }

    /// Place-value decoding without clamping.
    pub fn decode_raw(&self, x: &[u8]) -> Result<Vec<u64>> {
        self.check_bits(x)?;
        Ok(self
            .precision
            .iter()
            .zip(&self.bit_offsets)
            .map(|(p, &off)| {
                p.iter()
                    .enumerate()
                    .map(|(k, w)| w * x[off + k] as u64)
                    .sum()
            })
            .collect())
    }

    /// Place-value decoding clamped to `[0, z_max]`.
    pub fn decode(&self, x: &[u8]) -> Result<Decoded> {
        let raw = self.decode_raw(x)?;
        let mut clamped = false;
        let z = raw
            .into_iter()
            .zip(&self.z_max)
            .map(|(v, &hi)| {
                if v > hi {
                    clamped = true;
                    hi
                } else {
                    v
                }
            })
            .collect();
        Ok(Decoded { z, clamped })
    }

    /// Bitstring representing `z`; each entry must fit in its bin's bits.
    pub fn encode_point(&self, z: &[u64]) -> Result<Vec<u8>> {
        check_len("integer point", self.n_bins(), z.len())?;
        let mut x = vec![0u8; self.n_bits()];
        for (i, &v) in z.iter().enumerate() {
            let l = self.precision[i].len();
            if l < 64 && v >> l != 0 {
                return Err(UnfoldError::invalid(format!(
                    "value {v} of bin {i} needs more than {l} bits"
                )));
            }
            for k in 0..l {
                x[self.bit_offsets[i] + k] = ((v >> k) & 1) as u8;
            }
        }
        Ok(x)
    }

    /// Compact form `Q = B_bin + diag(a_bin)` with `f_Q(x) = x^T Q x`.
    pub fn q_matrix(&self) -> DMatrix<f64> {
        let mut q = self.b_bin.clone();
        for (k, a) in self.a_bin.iter().enumerate() {
            q[(k, k)] += a;
        }
        q
    }

    /// Serializable dense form.
    pub fn to_document(&self) -> QuboDocument {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect()
        };
        QuboDocument {
            convention: "f(x) = a_bin . x + x^T b_bin x = x^T q x, x in {0,1}^n; objective = f(x) + offset",
            n_bits: self.n_bits(),
            a_bin: self.a_bin.clone(),
            b_bin: rows(&self.b_bin),
            q: rows(&self.q_matrix()),
            precision: self.precision.clone(),
            bit_offsets: self.bit_offsets.clone(),
            z_max: self.z_max.clone(),
            offset: self.offset,
        }
    }
}

/// JSON shape of an exported QUBO.
#[derive(Debug, Clone, Serialize)]
pub struct QuboDocument {
    pub convention: &'static str,
    pub n_bits: usize,
    pub a_bin: Vec<f64>,
    pub b_bin: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub precision: Vec<Vec<u64>>,
    pub bit_offsets: Vec<usize>,
    pub z_max: Vec<u64>,
    pub offset: f64,
}
