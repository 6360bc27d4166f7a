//! Hopping kernels, periodic potentials, Bloch fibers and the ballistic coefficient.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::{par, C64, I};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LatticeError {
    #[error("hopping kernel has no entries")]
    Empty,
    #[error("offset {offset:?} does not have dimension {dim}")]
    DimensionMismatch { offset: Vec<i64>, dim: usize },
    #[error("hopping entry at the zero offset")]
    ZeroOffset,
    #[error("entry at {offset:?} is not the conjugate of its mirror")]
    NotSelfAdjoint { offset: Vec<i64> },
    #[error("support spans a sublattice of index {index}")]
    NonGenerating { index: u128 },
    #[error("wave vector must be nonzero")]
    ZeroVector,
    #[error("invalid periodic potential: {0}")]
    InvalidPotential(&'static str),
    #[error("Brillouin-zone quadrature did not converge (last relative change {change:e})")]
    QuadratureNotConverged { change: f64 },
    #[error("initial state must be nonempty and normalizable")]
    InvalidState,
}

/// Finite-support hopping `ξ ↦ h(ξ)`, with `H₀(x, z) = h(x − z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HoppingKernel {
    dim: usize,
    entries: Vec<(Vec<i64>, C64)>,
}

impl HoppingKernel {
    pub fn new(dim: usize, entries: Vec<(Vec<i64>, C64)>) -> Self {
        Self { dim, entries }
    }

    /// Unit nearest-neighbour hopping in `dim` dimensions.
    pub fn nearest_neighbor(dim: usize) -> Self {
        let mut entries = Vec::new();
        for axis in 0..dim {
            for s in [1i64, -1] {
                let mut xi = vec![0; dim];
                xi[axis] = s;
                entries.push((xi, C64::new(1.0, 0.0)));
            }
        }
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(Vec<i64>, C64)] {
        &self.entries
    }

    pub fn value(&self, xi: &[i64]) -> C64 {
        self.entries
            .iter()
            .filter(|(o, _)| o.as_slice() == xi)
            .map(|(_, v)| *v)
            .sum()
    }

    /// Largest `|ξ_j|` over the support.
    pub fn range(&self) -> i64 {
        self.entries
            .iter()
            .flat_map(|(o, _)| o.iter().map(|c| c.abs()))
            .max()
            .unwrap_or(0)
    }

    pub fn l1_norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v.norm()).sum()
    }

    /// `v_max = 2 Σ |ξ| |h(ξ)|`.
    pub fn max_speed(&self) -> f64 {
        2.0 * self
            .entries
            .iter()
            .map(|(o, v)| libm::sqrt(o.iter().map(|&c| (c * c) as f64).sum::<f64>()) * v.norm())
            .sum::<f64>()
    }

    /// `Σ (1 + |ξ|²) |h(ξ)|`, which dominates `ĥ` and its first two derivatives.
    pub fn symbol_bound(&self) -> f64 {
        self.entries
            .iter()
            .map(|(o, v)| (1.0 + o.iter().map(|&c| (c * c) as f64).sum::<f64>()) * v.norm())
            .sum()
    }

    pub fn is_real(&self) -> bool {
        self.entries.iter().all(|(_, v)| v.im == 0.0)
    }
}

/// Outcome of [`validate_hopping`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub support_size: usize,
    pub rank: usize,
    /// Index of the sublattice spanned by the support (1 when it spans `Z^d`).
    pub lattice_index: u128,
}

/// Checks self-adjointness exactly and that the support generates `Z^d`.
pub fn validate_hopping(h: &HoppingKernel) -> Result<ValidationReport, LatticeError> {
    if h.entries.is_empty() {
        return Err(LatticeError::Empty);
    }
    for (o, _) in &h.entries {
        if o.len() != h.dim {
            return Err(LatticeError::DimensionMismatch { offset: o.clone(), dim: h.dim });
        }
        if o.iter().all(|&c| c == 0) {
            return Err(LatticeError::ZeroOffset);
        }
    }
    let support: Vec<&Vec<i64>> = h
        .entries
        .iter()
        .filter(|(_, v)| *v != C64::new(0.0, 0.0))
        .map(|(o, _)| o)
        .collect();
    for (o, v) in &h.entries {
        let mirror: Vec<i64> = o.iter().map(|c| -c).collect();
        if h.value(&mirror) != h.value(o).conj() {
            let _ = v;
            return Err(LatticeError::NotSelfAdjoint { offset: o.clone() });
        }
    }
    let rows: Vec<Vec<i128>> = support.iter().map(|o| o.iter().map(|&c| c as i128).collect()).collect();
    let (rank, index) = lattice_index(rows, h.dim);
    if rank < h.dim {
        return Err(LatticeError::NonGenerating { index: 0 });
    }
    if index != 1 {
        return Err(LatticeError::NonGenerating { index });
    }
    Ok(ValidationReport { support_size: support.len(), rank, lattice_index: index })
}

/// Row-reduces integer generators to Hermite form; returns the rank and, at full
/// rank, the absolute determinant of the pivot block.
fn lattice_index(mut rows: Vec<Vec<i128>>, dim: usize) -> (usize, u128) {
    let mut pivot_row = 0;
    let mut det: u128 = 1;
    for col in 0..dim {
        loop {
            let nz: Vec<usize> = (pivot_row..rows.len()).filter(|&r| rows[r][col] != 0).collect();
            if nz.is_empty() {
                break;
            }
            let best = *nz.iter().min_by_key(|&&r| rows[r][col].abs()).unwrap();
            rows.swap(pivot_row, best);
            let p = rows[pivot_row][col];
            let mut done = true;
            for r in pivot_row + 1..rows.len() {
                let q = rows[r][col] / p;
                if q != 0 {
                    for c in 0..dim {
                        rows[r][c] -= q * rows[pivot_row][c];
                    }
                }
                if rows[r][col] != 0 {
                    done = false;
                }
            }
            if done {
                break;
            }
        }
        if pivot_row < rows.len() && rows[pivot_row][col] != 0 {
            det = det.saturating_mul(rows[pivot_row][col].unsigned_abs());
            pivot_row += 1;
        } else {
            return (pivot_row, 0);
        }
    }
    (pivot_row, det)
}

/// `ĥ(k)` with gradient and Hessian (row-major `d×d`).
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolValue {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Vec<f64>,
    /// Discarded imaginary part of `ĥ(k)`.
    pub imag_residual: f64,
    /// Common bound on `‖ĥ‖∞, ‖ĥ'‖∞, ‖ĥ''‖∞`.
    pub bound: f64,
}

/// `ĥ(k) = Σ e^{−ik·ξ} h(ξ)` and its derivatives.
pub fn hopping_symbol(h: &HoppingKernel, k: &[f64]) -> SymbolValue {
    let d = h.dim;
    let mut value = C64::new(0.0, 0.0);
    let mut grad = vec![C64::new(0.0, 0.0); d];
    let mut hess = vec![C64::new(0.0, 0.0); d * d];
    for (o, v) in &h.entries {
        let phase = phase(k, o) * v;
        value += phase;
        for i in 0..d {
            grad[i] += -I * (o[i] as f64) * phase;
            for j in 0..d {
                hess[i * d + j] += -((o[i] * o[j]) as f64) * phase;
            }
        }
    }
    SymbolValue {
        value: value.re,
        gradient: grad.iter().map(|g| g.re).collect(),
        hessian: hess.iter().map(|g| g.re).collect(),
        imag_residual: value.im.abs(),
        bound: h.symbol_bound(),
    }
}

/// `e^{−ik·ξ}`.
pub(crate) fn phase(k: &[f64], xi: &[i64]) -> C64 {
    let arg: f64 = k.iter().zip(xi).map(|(a, &b)| a * b as f64).sum();
    C64::new(libm::cos(arg), -libm::sin(arg))
}

/// `‖ĥ‖∞ = max_k |ĥ(k)|`, by a torus grid search polished with Newton steps.
pub fn symbol_sup_norm(h: &HoppingKernel) -> f64 {
    let d = h.dim;
    let n: usize = match d {
        1 => 4096,
        2 => 256,
        _ => 48,
    };
    let total = n.pow(d as u32);
    let mut best: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut k = vec![0.0; d];
    for m in 0..total {
        let mut rem = m;
        for kj in k.iter_mut() {
            *kj = 2.0 * core::f64::consts::PI * (rem % n) as f64 / n as f64;
            rem /= n;
        }
        let v = hopping_symbol(h, &k).value.abs();
        if best.len() < 4 || v > best[best.len() - 1].0 {
            best.push((v, k.clone()));
            best.sort_by(|a, b| b.0.total_cmp(&a.0));
            best.truncate(4);
        }
    }
    let mut sup = best[0].0;
    for (_, start) in best {
        let mut k = start;
        for _ in 0..20 {
            let s = hopping_symbol(h, &k);
            let sign = if s.value >= 0.0 { 1.0 } else { -1.0 };
            let g = DMatrix::from_fn(d, 1, |i, _| sign * s.gradient[i]);
            let hm = DMatrix::from_fn(d, d, |i, j| sign * s.hessian[i * d + j]);
            let step = match hm.lu().solve(&g) {
                Some(st) => st,
                None => break,
            };
            let trial: Vec<f64> = k.iter().zip(step.iter()).map(|(a, b)| a - b).collect();
            let tv = hopping_symbol(h, &trial).value.abs();
            if tv >= s.value.abs() {
                k = trial;
                sup = sup.max(tv);
            } else {
                break;
            }
        }
    }
    sup
}

/// `Σ_ξ |k·ξ|² |h(ξ)|²`.
pub fn nondegeneracy_form(h: &HoppingKernel, k: &[f64]) -> Result<f64, LatticeError> {
    if k.iter().all(|&c| c == 0.0) {
        return Err(LatticeError::ZeroVector);
    }
    Ok(h.entries
        .iter()
        .map(|(o, v)| {
            let dot: f64 = k.iter().zip(o).map(|(a, &b)| a * b as f64).sum();
            dot * dot * v.norm_sqr()
        })
        .sum())
}

/// Real `p⃗`-periodic potential given by its values on the cell `Z_p⃗`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicPotential {
    period: Vec<usize>,
    values: Vec<f64>,
}

impl PeriodicPotential {
    /// `values` are indexed by [`PeriodicPotential::cell_index`] (first axis fastest).
    pub fn new(period: Vec<usize>, values: Vec<f64>) -> Result<Self, LatticeError> {
        if period.is_empty() || period.iter().any(|&p| p == 0) {
            return Err(LatticeError::InvalidPotential("period entries must be positive"));
        }
        if values.len() != period.iter().product::<usize>() {
            return Err(LatticeError::InvalidPotential("value count must equal the cell size"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LatticeError::InvalidPotential("values must be finite"));
        }
        Ok(Self { period, values })
    }

    pub fn zero(dim: usize) -> Self {
        Self { period: vec![1; dim], values: vec![0.0] }
    }

    pub fn period(&self) -> &[usize] {
        &self.period
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.period.len()
    }

    /// `⊗p⃗ = Π p_j`.
    pub fn cell_count(&self) -> usize {
        self.values.len()
    }

    /// Linear index of `x mod p⃗`.
    pub fn cell_index(&self, x: &[i64]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (j, &p) in self.period.iter().enumerate() {
            idx += x[j].rem_euclid(p as i64) as usize * stride;
            stride *= p;
        }
        idx
    }

    /// Coordinates of the cell with linear index `sigma`.
    pub fn cell_coords(&self, mut sigma: usize) -> Vec<i64> {
        self.period
            .iter()
            .map(|&p| {
                let c = (sigma % p) as i64;
                sigma /= p;
                c
            })
            .collect()
    }

    pub fn value_at(&self, x: &[i64]) -> f64 {
        self.values[self.cell_index(x)]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Hermitian fiber of `H₀ + U` at quasimomentum `θ`, with sorted bands.
#[derive(Debug, Clone)]
pub struct BlochFiber {
    pub theta: Vec<f64>,
    pub matrix: DMatrix<C64>,
    pub energies: Vec<f64>,
    /// Column `n` is the normalized eigenvector of band `n`.
    pub eigenvectors: DMatrix<C64>,
}

impl BlochFiber {
    /// Groups of band indices whose energies agree within `tol`.
    pub fn degenerate_groups(&self, tol: f64) -> Vec<core::ops::Range<usize>> {
        let mut groups = Vec::new();
        let mut start = 0;
        for n in 1..=self.energies.len() {
            if n == self.energies.len() || self.energies[n] - self.energies[n - 1] > tol {
                groups.push(start..n);
                start = n;
            }
        }
        groups
    }

    /// Orthogonal projector onto the span of the given bands.
    pub fn projector(&self, bands: core::ops::Range<usize>) -> DMatrix<C64> {
        let v = self.eigenvectors.columns(bands.start, bands.len());
        &v * v.adjoint()
    }
}

fn fiber_matrix(h: &HoppingKernel, u: &PeriodicPotential, theta: &[f64], axis: Option<usize>) -> DMatrix<C64> {
    let n = u.cell_count();
    let mut m = DMatrix::zeros(n, n);
    for s in 0..n {
        let sc = u.cell_coords(s);
        for (o, v) in &h.entries {
            let target: Vec<i64> = sc.iter().zip(o).map(|(a, b)| a + b).collect();
            let t = u.cell_index(&target);
            let mut val = phase(theta, o) * v;
            if let Some(j) = axis {
                val *= -I * o[j] as f64;
            }
            m[(s, t)] += val;
        }
        if axis.is_none() {
            m[(s, s)] += C64::new(u.values[s], 0.0);
        }
    }
    m
}

/// Fiber with entries `Σ_{ξ ≡ σ'−σ} h(ξ) e^{−iθ·ξ} + δ_{σσ'} u(σ)`.
pub fn bloch_fiber(h: &HoppingKernel, u: &PeriodicPotential, theta: &[f64]) -> BlochFiber {
    let matrix = fiber_matrix(h, u, theta, None);
    let herm = (&matrix + matrix.adjoint()) * C64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let energies = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let n = matrix.nrows();
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    BlochFiber { theta: theta.to_vec(), matrix, energies, eigenvectors }
}

/// `∂_{θ_j}` of the fiber matrix.
pub fn bloch_fiber_derivative(h: &HoppingKernel, u: &PeriodicPotential, theta: &[f64], axis: usize) -> DMatrix<C64> {
    fiber_matrix(h, u, theta, Some(axis))
}

/// Options for [`ballistic_matrix`].
#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    pub rel_tol: f64,
    pub initial_points: usize,
    /// Cap on the total number of grid points.
    pub max_points: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-8, initial_points: 16, max_points: 1 << 20 }
    }
}

#[derive(Debug, Clone)]
pub struct BallisticResult {
    /// Row-major `d×d`.
    pub matrix: Vec<f64>,
    pub points_per_axis: usize,
    pub last_change: f64,
}

/// `lim M(t)/t²` at zero coupling: band velocities compressed onto each
/// degenerate band group, weighted by the fiber content of `ψ₀`.
pub fn ballistic_matrix(
    h: &HoppingKernel,
    u: &PeriodicPotential,
    psi0: &[(Vec<i64>, C64)],
    opts: QuadratureOptions,
) -> Result<BallisticResult, LatticeError> {
    let d = h.dim;
    let norm: f64 = psi0.iter().map(|(_, a)| a.norm_sqr()).sum();
    if psi0.is_empty() || !(norm > 0.0) {
        return Err(LatticeError::InvalidState);
    }
    let mut n = opts.initial_points.max(2);
    let mut prev = ballistic_grid(h, u, psi0, n, norm);
    loop {
        let next_n = n * 2;
        if next_n.pow(d as u32) > opts.max_points {
            let change = relative_change(&prev, &ballistic_grid(h, u, psi0, n / 2, norm));
            return Err(LatticeError::QuadratureNotConverged { change });
        }
        let next = ballistic_grid(h, u, psi0, next_n, norm);
        let change = relative_change(&next, &prev);
        n = next_n;
        prev = next;
        if change < opts.rel_tol {
            return Ok(BallisticResult { matrix: prev, points_per_axis: n, last_change: change });
        }
    }
}

fn relative_change(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let scale: f64 = a.iter().map(|x| x * x).sum();
    if scale == 0.0 {
        libm::sqrt(diff)
    } else {
        libm::sqrt(diff / scale)
    }
}

fn ballistic_grid(h: &HoppingKernel, u: &PeriodicPotential, psi0: &[(Vec<i64>, C64)], n: usize, norm: f64) -> Vec<f64> {
    let d = h.dim;
    let total = n.pow(d as u32);
    let contributions = par::map_collect(total, |m| {
        let mut rem = m;
        let theta: Vec<f64> = (0..d)
            .map(|_| {
                let t = 2.0 * core::f64::consts::PI * (rem % n) as f64 / n as f64;
                rem /= n;
                t
            })
            .collect();
        ballistic_integrand(h, u, psi0, &theta)
    });
    let mut acc = vec![0.0; d * d];
    for c in contributions {
        for (a, v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / (total as f64 * norm)).collect()
}

fn ballistic_integrand(h: &HoppingKernel, u: &PeriodicPotential, psi0: &[(Vec<i64>, C64)], theta: &[f64]) -> Vec<f64> {
    let d = h.dim;
    let fiber = bloch_fiber(h, u, theta);
    let cells = u.cell_count();
    let mut w = nalgebra::DVector::<C64>::zeros(cells);
    for (y, a) in psi0 {
        let arg: f64 = theta.iter().zip(y).map(|(t, &c)| t * c as f64).sum();
        w[u.cell_index(y)] += C64::new(libm::cos(arg), libm::sin(arg)) * a.conj();
    }
    let scale = 1.0 + fiber.energies.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let groups = fiber.degenerate_groups(1e-9 * scale);
    let derivs: Vec<DMatrix<C64>> = (0..d).map(|j| bloch_fiber_derivative(h, u, theta, j)).collect();
    let mut vel: Vec<nalgebra::DVector<C64>> = vec![nalgebra::DVector::zeros(cells); d];
    for g in groups {
        let p = fiber.projector(g);
        let pw = &p * &w;
        for j in 0..d {
            vel[j] += &p * (&derivs[j] * &pw);
        }
    }
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = vel[i].dotc(&vel[j]).re;
        }
    }
    out
}
