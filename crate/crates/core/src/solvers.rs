//! Minimizers for the binary and integer forms of the unfolding objective.
//!
//! * [`solve_bruteforce`]: exhaustive Gray-code enumeration, exact oracle for small models.
//! * [`solve_anneal`]: single-bit-flip Metropolis simulated annealing on the QUBO.
//! * [`solve_integer_cd`]: bounded-integer coordinate descent on the quadratic objective.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, UnfoldError};
use crate::qubo::{BoundsVector, QuadraticObjective, QuboModel};
use crate::seed::{self, derive_seed};

/// Largest model [`solve_bruteforce`] will enumerate.
pub const MAX_BRUTE_BITS: usize = 24;

/// Stream index used to seed the energy-scale probe of the annealer.
const SCALE_PROBE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveOutcome {
    /// Best bitstring, for solvers working on the binary form.
    pub bits: Option<Vec<u8>>,
    /// Integer bin contents of the solution (clamped to the bounds).
    pub z: Vec<u64>,
    /// Objective at the solution, offset excluded: `f_Q(bits)` for binary
    /// solvers, `a.z + z^T B z` for coordinate descent.
    pub energy: f64,
    pub evaluations: u64,
    /// Best energy of each independent read (a single entry for deterministic solvers).
    pub read_energies: Vec<f64>,
    pub sweeps: usize,
    /// Whether decoding hit a bound.
    pub clamped: bool,
}

/// Local-field bookkeeping for single-bit flips.
///
/// `field[k] = sum_j B[k][j] x_j` including the diagonal; flipping bit `k`
/// changes `f_Q` by `d * (a[k] + B[k][k] + 2 (field[k] - B[k][k] x_k))`, `d = 1 - 2 x_k`.
struct FlipState<'a> {
    a_bin: &'a [f64],
    /// Column-major `B_bin`; symmetric, so column `k` is also row `k`.
    b: &'a [f64],
    diag: Vec<f64>,
    x: Vec<u8>,
    field: Vec<f64>,
    energy: f64,
}

impl<'a> FlipState<'a> {
    fn new(model: &'a QuboModel, x: Vec<u8>) -> Self {
        let n = model.n_bits();
        let b = model.b_bin.as_slice();
        let mut field = vec![0.0; n];
        for (k, &bit) in x.iter().enumerate() {
            if bit == 1 {
                for (f, bk) in field.iter_mut().zip(&b[k * n..(k + 1) * n]) {
                    *f += bk;
                }
            }
        }
        Self {
            a_bin: &model.a_bin,
            b,
            diag: (0..n).map(|k| b[k * n + k]).collect(),
            energy: model.energy(&x),
            x,
            field,
        }
    }

    #[inline]
    fn delta(&self, k: usize) -> f64 {
        let bkk = self.diag[k];
        let xk = self.x[k] as f64;
        (1.0 - 2.0 * xk) * (self.a_bin[k] + bkk + 2.0 * (self.field[k] - bkk * xk))
    }

    #[inline]
    fn flip(&mut self, k: usize, delta: f64) {
        let n = self.x.len();
        let d = 1.0 - 2.0 * self.x[k] as f64;
        self.x[k] ^= 1;
        for (f, b) in self.field.iter_mut().zip(&self.b[k * n..(k + 1) * n]) {
            *f += d * b;
        }
        self.energy += delta;
    }
}

/// Single-bit moves shared by the annealer's two state representations.
trait BitMoves {
    fn bits(&self) -> &[u8];
    fn energy(&self) -> f64;
    fn delta(&self, k: usize) -> f64;
    fn flip(&mut self, k: usize, delta: f64);
}

impl BitMoves for FlipState<'_> {
    fn bits(&self) -> &[u8] {
        &self.x
    }
    fn energy(&self) -> f64 {
        self.energy
    }
    fn delta(&self, k: usize) -> f64 {
        FlipState::delta(self, k)
    }
    fn flip(&mut self, k: usize, delta: f64) {
        FlipState::flip(self, k, delta)
    }
}

/// Bin-level view of a model produced by [`crate::qubo::encode`]:
/// `b_bin[k][m] = B[i][j] w_k w_m` and `a_bin[k] = a[i] w_k`.
struct BlockForm {
    bin_of: Vec<usize>,
    weight: Vec<f64>,
    a: Vec<f64>,
    /// Column-major `M x M`.
    b: Vec<f64>,
}

fn block_form(model: &QuboModel) -> Option<BlockForm> {
    let n = model.n_bits();
    let m = model.n_bins();
    let mut bin_of = Vec::with_capacity(n);
    let mut weight = Vec::with_capacity(n);
    for (i, p) in model.precision.iter().enumerate() {
        if model.bit_offsets.get(i) != Some(&bin_of.len()) {
            return None;
        }
        for &w in p {
            bin_of.push(i);
            weight.push(w as f64);
        }
    }
    if bin_of.len() != n || n == 0 {
        return None;
    }
    let first = |i: usize| model.bit_offsets[i];
    let w0 = |i: usize| weight[first(i)];
    let a: Vec<f64> = (0..m).map(|i| model.a_bin[first(i)] / w0(i)).collect();
    let mut b = vec![0.0; m * m];
    for j in 0..m {
        for i in 0..m {
            b[j * m + i] = model.b_bin[(first(i), first(j))] / (w0(i) * w0(j));
        }
    }
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs()));
    for k in 0..n {
        if !close(model.a_bin[k], a[bin_of[k]] * weight[k]) {
            return None;
        }
        for l in 0..n {
            let expect = b[bin_of[l] * m + bin_of[k]] * weight[k] * weight[l];
            if !close(model.b_bin[(k, l)], expect) {
                return None;
            }
        }
    }
    Some(BlockForm { bin_of, weight, a, b })
}

/// Keeps `g = B z` per bin instead of per-bit fields: the field of bit `k`
/// in bin `i` is `w_k g_i`, so a flip costs `O(M)` rather than `O(n)`.
struct BinFieldState<'a> {
    form: &'a BlockForm,
    x: Vec<u8>,
    g: Vec<f64>,
    energy: f64,
}

impl<'a> BinFieldState<'a> {
    fn new(form: &'a BlockForm, model: &QuboModel, x: Vec<u8>) -> Self {
        let m = form.a.len();
        let mut z = vec![0.0; m];
        for (k, &bit) in x.iter().enumerate() {
            z[form.bin_of[k]] += bit as f64 * form.weight[k];
        }
        let g = (0..m)
            .map(|i| (0..m).map(|j| form.b[j * m + i] * z[j]).sum())
            .collect();
        Self {
            form,
            energy: model.energy(&x),
            x,
            g,
        }
    }
}

impl BitMoves for BinFieldState<'_> {
    fn bits(&self) -> &[u8] {
        &self.x
    }
    fn energy(&self) -> f64 {
        self.energy
    }
    #[inline]
    fn delta(&self, k: usize) -> f64 {
        let m = self.form.a.len();
        let i = self.form.bin_of[k];
        let w = self.form.weight[k];
        let bkk = self.form.b[i * m + i] * w * w;
        let xk = self.x[k] as f64;
        (1.0 - 2.0 * xk) * (self.form.a[i] * w + bkk + 2.0 * (w * self.g[i] - bkk * xk))
    }
    #[inline]
    fn flip(&mut self, k: usize, delta: f64) {
        let m = self.form.a.len();
        let i = self.form.bin_of[k];
        let step = (1.0 - 2.0 * self.x[k] as f64) * self.form.weight[k];
        self.x[k] ^= 1;
        for (g, b) in self.g.iter_mut().zip(&self.form.b[i * m..(i + 1) * m]) {
            *g += step * b;
        }
        self.energy += delta;
    }
}

fn outcome_from_bits(
    model: &QuboModel,
    bits: Vec<u8>,
    evaluations: u64,
    read_energies: Vec<f64>,
    sweeps: usize,
) -> Result<SolveOutcome> {
    let decoded = model.decode(&bits)?;
    Ok(SolveOutcome {
        energy: model.energy(&bits),
        z: decoded.z,
        clamped: decoded.clamped,
        bits: Some(bits),
        evaluations,
        read_energies,
        sweeps,
    })
}

fn tie_tolerance(e: f64) -> f64 {
    1e-9 * (1.0 + e.abs())
}

/// `true` if `(e, x)` beats `(best_e, best_x)`; near-equal energies fall back
/// to the lexicographically smaller bitstring.
fn improves(e: f64, x: &[u8], best_e: f64, best_x: &[u8]) -> bool {
    if e < best_e - tie_tolerance(best_e) {
        true
    } else if e <= best_e + tie_tolerance(best_e) {
        x < best_x
    } else {
        false
    }
}

/// Global minimizer of `f_Q` over all `2^n` bitstrings.
pub fn solve_bruteforce(model: &QuboModel) -> Result<SolveOutcome> {
    let n = model.n_bits();
    if n > MAX_BRUTE_BITS {
        return Err(UnfoldError::Capacity {
            what: "bits for exhaustive search",
            required: n,
            limit: MAX_BRUTE_BITS,
        });
    }
    let mut state = FlipState::new(model, vec![0u8; n]);
    let mut best_x = state.x.clone();
    let mut best_e = state.energy;
    let total: u64 = 1 << n;
    for step in 1..total {
        // Gray code: flip the lowest set bit of the step counter
        let k = step.trailing_zeros() as usize;
        let delta = state.delta(k);
        state.flip(k, delta);
        if improves(state.energy, &state.x, best_e, &best_x) {
            best_e = state.energy;
            best_x.copy_from_slice(&state.x);
        }
    }
    let energy = model.energy(&best_x);
    outcome_from_bits(model, best_x, total, vec![energy], 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub sweeps: usize,
    pub reads: usize,
    /// Initial inverse temperature; derived from the energy scale when absent.
    #[serde(default)]
    pub beta_start: Option<f64>,
    /// Final inverse temperature; derived from the model when absent.
    #[serde(default)]
    pub beta_end: Option<f64>,
    pub seed: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            sweeps: 1000,
            reads: 20,
            beta_start: None,
            beta_end: None,
            seed: 0,
        }
    }
}

impl AnnealSchedule {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sweeps == 0 || self.reads == 0 {
            return Err(UnfoldError::invalid("sweeps and reads must be at least 1"));
        }
        if let (Some(b0), Some(b1)) = (self.beta_start, self.beta_end) {
            if !(b0 > 0.0 && b0 < b1 && b1.is_finite()) {
                return Err(UnfoldError::invalid(format!(
                    "need 0 < beta_start < beta_end, got {b0} and {b1}"
                )));
            }
        }
        Ok(())
    }

    /// Resolved `(beta_start, beta_end)` for `model`.
    ///
    /// The hot end is `0.1 / sigma_E`, with `sigma_E` the energy spread over
    /// 100 random bitstrings. The cold end is the larger of `10 / sigma_E` and
    /// `10 / b_min`, where `b_min` is the smallest positive diagonal of
    /// `B_bin`, the cost scale of a unit change in one bin near the optimum.
    pub fn betas(&self, model: &QuboModel) -> (f64, f64) {
        let sigma = energy_spread(model, 100, derive_seed(self.seed, SCALE_PROBE_STREAM));
        let sigma = if sigma > 0.0 { sigma } else { 1.0 };
        let b_min = (0..model.n_bits())
            .map(|k| model.b_bin[(k, k)])
            .filter(|v| *v > 0.0)
            .fold(f64::INFINITY, f64::min);
        let start = self.beta_start.unwrap_or(0.1 / sigma);
        let mut end = self.beta_end.unwrap_or_else(|| {
            let cold = if b_min.is_finite() { 10.0 / b_min } else { 0.0 };
            (10.0 / sigma).max(cold)
        });
        if end <= start {
            end = start * 100.0;
        }
        (start, end)
    }
}

/// Standard deviation of `f_Q` over uniformly random bitstrings.
pub fn energy_spread(model: &QuboModel, samples: usize, seed: u64) -> f64 {
    let mut rng = seed::rng(seed);
    let n = model.n_bits();
    let energies: Vec<f64> = (0..samples)
        .map(|_| {
            let x: Vec<u8> = (0..n).map(|_| rng.random::<bool>() as u8).collect();
            model.energy(&x)
        })
        .collect();
    let mean = energies.iter().sum::<f64>() / samples as f64;
    let var = energies.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (samples as f64 - 1.0);
    var.sqrt()
}

/// Geometric interpolation from `start` to `end` over `steps` points.
pub fn geometric_schedule(start: f64, end: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![end];
    }
    let ratio = (end / start).ln() / (steps - 1) as f64;
    (0..steps).map(|s| start * (ratio * s as f64).exp()).collect()
}

struct ReadResult {
    bits: Vec<u8>,
    energy: f64,
    proposals: u64,
}

fn anneal_read(model: &QuboModel, form: Option<&BlockForm>, betas: &[f64], seed: u64) -> ReadResult {
    let n = model.n_bits();
    let mut rng = seed::rng(seed);
    let x: Vec<u8> = (0..n).map(|_| rng.random::<bool>() as u8).collect();
    match form {
        Some(f) => metropolis(BinFieldState::new(f, model, x), model, betas, &mut rng),
        None => metropolis(FlipState::new(model, x), model, betas, &mut rng),
    }
}

fn metropolis(mut state: impl BitMoves, model: &QuboModel, betas: &[f64], rng: &mut seed::Rng) -> ReadResult {
    let n = model.n_bits();
    let mut best_x = state.bits().to_vec();
    let mut best_e = state.energy();
    let mut proposals = 0u64;
    for &beta in betas {
        for k in 0..n {
            proposals += 1;
            let delta = state.delta(k);
            // exp(-36) < 3e-16: such moves are rejected without drawing
            let accept = delta <= 0.0 || (beta * delta < 36.0 && rng.random::<f64>() < (-beta * delta).exp());
            if accept {
                state.flip(k, delta);
                if state.energy() < best_e {
                    best_e = state.energy();
                    best_x.copy_from_slice(state.bits());
                }
            }
        }
    }
    ReadResult {
        energy: model.energy(&best_x),
        bits: best_x,
        proposals,
    }
}

/// Simulated annealing with independent restarts.
///
/// Read `r` is seeded with `derive_seed(sched.seed, r)`, so increasing
/// `reads` keeps the earlier reads unchanged. Each read starts from a random
/// bitstring and returns the lowest-energy state it visited.
pub fn solve_anneal(model: &QuboModel, sched: &AnnealSchedule) -> Result<SolveOutcome> {
    sched.validate()?;
    let (b0, b1) = sched.betas(model);
    if !(b0 > 0.0 && b0 < b1) {
        return Err(UnfoldError::invalid(format!(
            "need 0 < beta_start < beta_end, got {b0} and {b1}"
        )));
    }
    let betas = geometric_schedule(b0, b1, sched.sweeps);
    let form = block_form(model);
    let reads: Vec<ReadResult> = {
        use rayon::prelude::*;
        (0..sched.reads)
            .into_par_iter()
            .map(|r| anneal_read(model, form.as_ref(), &betas, derive_seed(sched.seed, r as u64)))
            .collect()
    };
    let mut best = 0;
    for r in 1..reads.len() {
        if improves(reads[r].energy, &reads[r].bits, reads[best].energy, &reads[best].bits) {
            best = r;
        }
    }
    let evaluations = reads.iter().map(|r| r.proposals).sum();
    let read_energies = reads.iter().map(|r| r.energy).collect();
    let bits = reads[best].bits.clone();
    let mut out = outcome_from_bits(model, bits, evaluations, read_energies, sched.sweeps)?;
    out.sweeps = sched.sweeps;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdConfig {
    pub max_sweeps: usize,
}

impl Default for CdConfig {
    fn default() -> Self {
        Self { max_sweeps: 200 }
    }
}

/// Coordinate-descent outcome with per-sweep bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct CdOutcome {
    pub outcome: SolveOutcome,
    /// Objective after each completed sweep.
    pub sweep_energies: Vec<f64>,
    /// Coordinates skipped because their diagonal curvature vanished.
    pub skipped: Vec<usize>,
    pub converged: bool,
}

/// Bounded-integer coordinate descent from `start`.
///
/// `start` is rounded and clamped into the bounds. Each coordinate moves to
/// whichever of its current value, `floor(t*)` and `ceil(t*)` (clamped) gives
/// the lowest objective, `t*` being the exact one-dimensional minimizer.
/// Stops after a sweep without changes or after `max_sweeps`.
pub fn solve_integer_cd(
    obj: &QuadraticObjective,
    bounds: &BoundsVector,
    start: &[f64],
    cfg: &CdConfig,
) -> Result<CdOutcome> {
    let m = obj.n_bins();
    check_len("bounds", m, bounds.len())?;
    check_len("start point", m, start.len())?;
    let hi = bounds.as_slice();
    let mut z: Vec<f64> = start
        .iter()
        .zip(hi)
        .map(|(&s, &h)| {
            let s = if s.is_finite() { s.round() } else { 0.0 };
            s.clamp(0.0, h as f64)
        })
        .collect();

    let skipped: Vec<usize> = (0..m).filter(|&i| !(obj.b[(i, i)] > 0.0)).collect();
    let mut evaluations = 0u64;
    let mut sweep_energies = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_sweeps {
        let mut changed = false;
        for i in 0..m {
            let bii = obj.b[(i, i)];
            if !(bii > 0.0) {
                continue;
            }
            // objective restricted to z_i = t:  bii t^2 + 2 g t + const
            let g = 0.5 * obj.a[i]
                + (0..m)
                    .filter(|&j| j != i)
                    .map(|j| obj.b[(i, j)] * z[j])
                    .sum::<f64>();
            let phi = |t: f64| bii * t * t + 2.0 * g * t;
            let t_star = -g / bii;
            let upper = hi[i] as f64;
            let current = z[i];
            let mut best_t = current;
            let mut best_phi = phi(current);
            for cand in [t_star.floor(), t_star.ceil()] {
                let c = cand.clamp(0.0, upper);
                let p = phi(c);
                evaluations += 1;
                if p < best_phi {
                    best_phi = p;
                    best_t = c;
                }
            }
            if best_t != current {
                z[i] = best_t;
                changed = true;
            }
        }
        sweep_energies.push(obj.value(&z));
        if !changed {
            converged = true;
            break;
        }
    }
    let energy = obj.value(&z);
    let sweeps = sweep_energies.len();
    Ok(CdOutcome {
        outcome: SolveOutcome {
            bits: None,
            z: z.iter().map(|&v| v as u64).collect(),
            energy,
            evaluations,
            read_energies: vec![energy],
            sweeps,
            clamped: false,
        },
        sweep_energies,
        skipped,
        converged,
    })
}
