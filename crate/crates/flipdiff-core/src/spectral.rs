//! Gap estimates, the tracked eigenvalue `E(k)`, the diffusion matrix and its
//! weak-coupling limit, all computed on a truncated augmented space.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::augmented::{c0_constant, AugSpace, AugVector, AugmentedError, FiberOperator, Geometry, Subspace};
use crate::lattice::{symbol_sup_norm, HoppingKernel, PeriodicPotential};
use crate::linalg::{arnoldi_eigs, fgmres, norm, shifted_minres, Csr, CsrBuilder, KrylovConfig, KrylovError, LinearOperator};
use crate::markov::{markov_constants, MarkovError};
use crate::simulate::{abel_second_moment, deterministic_moments, Model, SimulateError};
use crate::C64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpectralError {
    #[error("coupling λ must be positive")]
    ZeroCoupling,
    #[error("{what} did not converge (residual {residual:e})")]
    SolverNotConverged { what: &'static str, residual: f64 },
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("tracked eigenvalue {value} approaches the gap {gap}")]
    GapCollision { value: f64, gap: f64 },
    #[error("no axis has a nonzero projection onto the kernel")]
    DegenerateKernel,
    #[error("Schur complement is singular")]
    Singular,
    #[error(transparent)]
    Augmented(#[from] AugmentedError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
}

impl From<KrylovError> for SpectralError {
    fn from(e: KrylovError) -> Self {
        match e {
            KrylovError::NotConverged { residual, .. } => SpectralError::SolverNotConverged { what: "Krylov solve", residual },
            KrylovError::Dimension { .. } => SpectralError::Augmented(AugmentedError::TruncationMismatch),
            KrylovError::NotDissipative(v) => SpectralError::ValidationFailed(alloc::format!("nonpositive damping {v}")),
        }
    }
}

/// Solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConfig {
    /// Relative residual of linear solves.
    pub solve_tol: f64,
    /// Relative eigen-residual accepted for Ritz pairs.
    pub eigen_tol: f64,
    /// Relative residual of the inner random-sector solves.
    pub inner_tol: f64,
    pub max_iter: usize,
    pub restart: usize,
    pub arnoldi_steps: usize,
    /// Shift for inverse iteration on `L̂_k`.
    pub inverse_shift: f64,
    /// Step of the finite-difference Hessian of `E(k)`.
    pub hessian_step: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            solve_tol: 1e-10,
            eigen_tol: 1e-8,
            inner_tol: 1e-13,
            max_iter: 4000,
            restart: 30,
            arnoldi_steps: 40,
            inverse_shift: -1e-4,
            hessian_step: 1e-3,
        }
    }
}

/// Closed-form lower-bound constants for the gap of `L̂₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapBound {
    pub c1: f64,
    /// `None` for a trivial cell, where `H₁` is empty.
    pub c2: Option<f64>,
    pub g_bound: f64,
    pub c0: Option<f64>,
    pub relaxation_time: f64,
    pub chi: f64,
    pub gamma: f64,
    pub h_sup: f64,
    pub u_sup: f64,
}

pub fn gap_bound_constants(lambda: f64, rate: f64, space: &AugSpace) -> Result<GapBound, SpectralError> {
    if !(lambda > 0.0) {
        return Err(SpectralError::ZeroCoupling);
    }
    let mc = markov_constants(rate)?;
    let h_sup = symbol_sup_norm(space.hopping());
    let u_sup = space.potential().sup_norm();
    let t = mc.relaxation_time;
    let chi2 = lambda * lambda * mc.chi * mc.chi;
    let inner = 2.0 + mc.gamma + 4.0 * t * (h_sup + u_sup + lambda);
    let c1 = chi2 / (t * (chi2 + 2.0 * inner * inner));
    let c0 = match c0_constant(space.hopping(), space.potential().period()) {
        Ok(v) => Some(v),
        Err(AugmentedError::TrivialCell) => None,
        Err(e) => return Err(e.into()),
    };
    let c2 = c0.map(|c0| {
        let den = 4.0 * h_sup + 4.0 * u_sup + 8.0 * t * lambda * lambda + 2.0 * lambda + (mc.gamma + 1.0) / (2.0 * t);
        c1 * c0 / (den * den)
    });
    let mut g = c1.min(1.0 / (2.0 * t));
    if let Some(c2) = c2 {
        g = g.min(c2);
    }
    Ok(GapBound { c1, c2, g_bound: g, c0, relaxation_time: t, chi: mc.chi, gamma: mc.gamma, h_sup, u_sup })
}

struct ShiftedHermitian<'a> {
    a: &'a Csr,
    shift: f64,
}

impl LinearOperator for ShiftedHermitian<'_> {
    fn dim(&self) -> usize {
        self.a.nrows
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.a.matvec(x, y);
        if self.shift != 0.0 {
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi -= xi * self.shift;
            }
        }
    }
}

/// Direct-but-iterative factorization of `L̂ − z (+ φφ*)` through the Schur
/// complement onto the `S = ∅` sector.
pub struct SectorSolver {
    n: usize,
    sector: Vec<usize>,
    rest: Vec<usize>,
    a_rr: Csr,
    a_rn: Csr,
    a_nr: Csr,
    damping: Vec<f64>,
    im_shift: f64,
    schur: nalgebra::linalg::LU<C64, nalgebra::Dyn, nalgebra::Dyn>,
    inner: KrylovConfig,
    pub inner_iterations: AtomicUsize,
}

impl SectorSolver {
    /// The sector partition and the `S = ∅` block, without the Schur complement.
    fn split(space: &AugSpace, hermitian: &Csr, rate: f64, z: C64, lift: Option<&AugVector>, cfg: &SpectralConfig) -> (Self, DMatrix<C64>) {
        let n = space.len();
        let ns = space.walsh().len();
        let mut pos = vec![0u32; n];
        let mut sector = Vec::new();
        let mut rest = Vec::new();
        for i in 0..n {
            if i % ns == 0 {
                pos[i] = sector.len() as u32;
                sector.push(i);
            } else {
                pos[i] = rest.len() as u32;
                rest.push(i);
            }
        }
        let mut b_rr = CsrBuilder::with_capacity(rest.len(), rest.len(), hermitian.nnz());
        let mut b_rn = CsrBuilder::new(sector.len());
        for &i in &rest {
            for (c, v) in hermitian.row(i) {
                if c % ns == 0 {
                    b_rn.push(pos[c] as usize, v);
                } else {
                    b_rr.push(pos[c] as usize, v);
                }
            }
            b_rr.finish_row();
            b_rn.finish_row();
        }
        let mut b_nr = CsrBuilder::new(rest.len());
        let m = sector.len();
        let mut l_nn = DMatrix::<C64>::zeros(m, m);
        for (r, &i) in sector.iter().enumerate() {
            for (c, v) in hermitian.row(i) {
                if c % ns == 0 {
                    l_nn[(r, pos[c] as usize)] += crate::I * v;
                } else {
                    b_nr.push(pos[c] as usize, v);
                }
            }
            b_nr.finish_row();
            l_nn[(r, r)] -= z;
        }
        if let Some(phi) = lift {
            for (r, &i) in sector.iter().enumerate() {
                for (c, &j) in sector.iter().enumerate() {
                    l_nn[(r, c)] += phi.data[i] * phi.data[j].conj();
                }
            }
        }
        let damping: Vec<f64> = rest.iter().map(|&i| 2.0 * rate * space.walsh().subset(i % ns).len() as f64 - z.re).collect();
        let inner = KrylovConfig { tol: cfg.inner_tol, max_iter: cfg.max_iter, restart: cfg.restart };
        let a_rr = b_rr.build();
        let a_rn = b_rn.build();
        let a_nr = b_nr.build();
        let solver = Self {
            n,
            sector,
            rest,
            a_rr,
            a_rn,
            a_nr,
            damping,
            im_shift: z.im,
            schur: DMatrix::<C64>::identity(1, 1).lu(),
            inner,
            inner_iterations: AtomicUsize::new(0),
        };
        (solver, l_nn)
    }

    /// `hermitian` is `K̂_k + Û + λV̂`; the generator is `B + i·hermitian`.
    pub fn new(
        space: &AugSpace,
        hermitian: &Csr,
        rate: f64,
        z: C64,
        lift: Option<&AugVector>,
        cfg: &SpectralConfig,
    ) -> Result<Self, SpectralError> {
        let (mut solver, l_nn) = Self::split(space, hermitian, rate, z, lift, cfg);
        let m = solver.sector.len();
        let a_rn_adj = solver.a_rn.adjoint();
        let cols: Vec<Result<Vec<C64>, SpectralError>> = crate::par::map_collect(m, |j| {
            let mut rhs = vec![C64::new(0.0, 0.0); solver.rest.len()];
            for (r, v) in a_rn_adj.row(j) {
                rhs[r] = crate::I * v.conj();
            }
            let y = solver.random_solve(&rhs)?;
            let mut col = vec![C64::new(0.0, 0.0); m];
            solver.a_nr.matvec(&y, &mut col);
            Ok(col)
        });
        let mut s = l_nn;
        for (j, col) in cols.into_iter().enumerate() {
            let col = col?;
            for r in 0..m {
                s[(r, j)] -= crate::I * col[r];
            }
        }
        solver.schur = s.lu();
        if solver.schur.u().diagonal().iter().any(|d| d.norm() == 0.0 || !d.re.is_finite()) {
            return Err(SpectralError::Singular);
        }
        Ok(solver)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `G⁻¹ b` for `G = (B − Re z) + i(A_RR − Im z)` on the random sector.
    fn random_solve(&self, b: &[C64]) -> Result<Vec<C64>, SpectralError> {
        let op = ShiftedHermitian { a: &self.a_rr, shift: self.im_shift };
        let (x, stats) = shifted_minres(&self.damping, &op, b, self.inner)?;
        self.inner_iterations.fetch_add(stats.iterations, Ordering::Relaxed);
        Ok(x)
    }

    /// `(L̂ − z)⁻¹ b` in full coordinates.
    pub fn solve(&self, b: &[C64]) -> Result<Vec<C64>, SpectralError> {
        let b_r: Vec<C64> = self.rest.iter().map(|&i| b[i]).collect();
        let mut b_n: Vec<C64> = self.sector.iter().map(|&i| b[i]).collect();
        let y = self.random_solve(&b_r)?;
        let mut t = vec![C64::new(0.0, 0.0); self.sector.len()];
        self.a_nr.matvec(&y, &mut t);
        for (bn, ti) in b_n.iter_mut().zip(&t) {
            *bn -= crate::I * ti;
        }
        let x_n = self.schur.solve(&DVector::from_vec(b_n)).ok_or(SpectralError::Singular)?;
        let mut c = vec![C64::new(0.0, 0.0); self.rest.len()];
        self.a_rn.matvec(x_n.as_slice(), &mut c);
        c.iter_mut().for_each(|v| *v *= crate::I);
        let corr = self.random_solve(&c)?;
        let mut x = vec![C64::new(0.0, 0.0); self.n];
        for (k, &i) in self.sector.iter().enumerate() {
            x[i] = x_n[k];
        }
        for (k, &i) in self.rest.iter().enumerate() {
            x[i] = y[k] - corr[k];
        }
        Ok(x)
    }
}

/// `L̂ − z + φφ*` as an exact sparse matvec.
struct GeneratorOp<'a> {
    l: &'a Csr,
    z: C64,
    lift: Option<&'a AugVector>,
}

impl LinearOperator for GeneratorOp<'_> {
    fn dim(&self) -> usize {
        self.l.nrows
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.l.matvec(x, y);
        if self.z != C64::new(0.0, 0.0) {
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi -= self.z * xi;
            }
        }
        if let Some(phi) = self.lift {
            let c = crate::linalg::dotc(&phi.data, x);
            crate::linalg::axpy(c, &phi.data, y);
        }
    }
}

/// `(L̂ − z)⁻¹` presented as a linear operator; the first failure is recorded.
struct InverseOp<'a> {
    solver: &'a SectorSolver,
    error: RefCell<Option<SpectralError>>,
}

impl LinearOperator for InverseOp<'_> {
    fn dim(&self) -> usize {
        self.solver.dim()
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        match self.solver.solve(x) {
            Ok(v) => y.copy_from_slice(&v),
            Err(e) => {
                y.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
                self.error.borrow_mut().get_or_insert(e);
            }
        }
    }
}

/// An operator-level view of one `(λ, r)` model on a truncation.
pub struct FiberProblem<'a> {
    pub space: &'a AugSpace,
    pub lambda: f64,
    pub rate: f64,
    pub config: SpectralConfig,
}

/// Numerically computed low-lying spectrum of `L̂₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub g_num: f64,
    /// Converged eigenvalues of smallest real part, ascending.
    pub eigenvalues: Vec<C64>,
    /// `|⟨φ₀, v₀⟩|` for the unit eigenvector of the zero eigenvalue.
    pub zero_overlap: f64,
    pub zero_eigenvalue: C64,
    pub bound: GapBound,
    pub lambda: f64,
    pub rate: f64,
    pub shift: f64,
}

/// Diffusion matrix with its validation diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionMatrix {
    pub entries: DMatrix<C64>,
    pub symmetric: DMatrix<f64>,
    pub max_imag: f64,
    pub max_asymmetry: f64,
    pub trace: f64,
    pub radius: Option<usize>,
    pub order: usize,
}

impl DiffusionMatrix {
    fn validated(entries: DMatrix<C64>, space: &AugSpace, check: bool) -> Result<Self, SpectralError> {
        let d = entries.nrows();
        let scale = entries.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let max_imag = entries.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        let mut max_asym: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                max_asym = max_asym.max((entries[(i, j)] - entries[(j, i)]).norm());
            }
        }
        let symmetric = DMatrix::from_fn(d, d, |i, j| 0.5 * (entries[(i, j)].re + entries[(j, i)].re));
        let trace = symmetric.trace();
        let radius = match &space.truncation().geometry {
            Geometry::Box { radius } => Some(*radius),
            Geometry::Torus { .. } => None,
        };
        let out = Self { entries, symmetric, max_imag, max_asymmetry: max_asym, trace, radius, order: space.truncation().order };
        if check {
            if max_imag >= 1e-6 * scale {
                return Err(SpectralError::ValidationFailed(alloc::format!("imaginary part {max_imag:e} relative to {scale:e}")));
            }
            if max_asym >= 1e-8 * scale.max(1.0) {
                return Err(SpectralError::ValidationFailed(alloc::format!("asymmetry {max_asym:e}")));
            }
            if out.symmetric.clone().cholesky().is_none() {
                return Err(SpectralError::ValidationFailed(String::from("not positive definite")));
            }
        }
        Ok(out)
    }
}

/// Result of the weak-coupling limit, restricted to axes with ballistic transport.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticDiffusion {
    /// Rows and columns of excluded axes are zero.
    pub matrix: DiffusionMatrix,
    pub included: Vec<usize>,
    pub excluded: Vec<usize>,
    pub kernel_rank: usize,
}

impl<'a> FiberProblem<'a> {
    pub fn new(space: &'a AugSpace, lambda: f64, rate: f64) -> Self {
        Self { space, lambda, rate, config: SpectralConfig::default() }
    }

    pub fn with_config(mut self, config: SpectralConfig) -> Self {
        self.config = config;
        self
    }

    fn zero_k(&self) -> Vec<f64> {
        vec![0.0; self.space.dim()]
    }

    fn hermitian(&self, lambda: f64, k: &[f64]) -> Result<Csr, SpectralError> {
        Ok(self.space.assemble(&FiberOperator::Hermitian { lambda, k: k.to_vec() })?)
    }

    fn generator(&self, k: &[f64]) -> Result<Csr, SpectralError> {
        Ok(self.space.assemble(&FiberOperator::Generator { lambda: self.lambda, rate: self.rate, k: k.to_vec() })?)
    }

    pub fn gap_bound(&self) -> Result<GapBound, SpectralError> {
        gap_bound_constants(self.lambda, self.rate, self.space)
    }

    /// Shift-invert Arnoldi for the eigenvalues of `L̂₀` nearest `g_bound/2`.
    pub fn gap_numeric(&self) -> Result<GapReport, SpectralError> {
        let bound = self.gap_bound()?;
        let k0 = self.zero_k();
        let herm = self.hermitian(self.lambda, &k0)?;
        let l = self.generator(&k0)?;
        let z = bound.g_bound / 2.0;
        let solver = SectorSolver::new(self.space, &herm, self.rate, C64::new(z, 0.0), None, &self.config)?;
        let inv = InverseOp { solver: &solver, error: RefCell::new(None) };
        let n = self.space.len();
        let mut st = 0x5eed_u64;
        let mut start: Vec<C64> = (0..n)
            .map(|_| {
                st = crate::rng::splitmix64(st);
                C64::new((st >> 11) as f64 / (1u64 << 53) as f64 - 0.5, 0.0)
            })
            .collect();
        let lnorm = (0..n).map(|r| l.row(r).map(|(_, v)| v.norm()).sum::<f64>()).fold(0.0, f64::max);
        let phi = self.space.phi0();
        let mut steps = self.config.arnoldi_steps;
        let mut rounds = 0;
        loop {
            let pairs = arnoldi_eigs(&inv, &start, steps);
            if let Some(e) = inv.error.borrow_mut().take() {
                return Err(e);
            }
            let mut accepted: Vec<(C64, f64)> = Vec::new();
            let mut zero: Option<(C64, f64)> = None;
            let mut lv = vec![C64::new(0.0, 0.0); n];
            for p in &pairs {
                if p.value.norm() == 0.0 {
                    continue;
                }
                let mu = C64::new(z, 0.0) + C64::new(1.0, 0.0) / p.value;
                l.matvec(&p.vector, &mut lv);
                crate::linalg::axpy(-mu, &p.vector, &mut lv);
                let res = norm(&lv);
                if res > self.config.eigen_tol * lnorm.max(1.0) {
                    continue;
                }
                if mu.norm() < 1e-9 {
                    let ov = crate::linalg::dotc(&phi.data, &p.vector).norm();
                    if zero.is_some() {
                        return Err(SpectralError::ValidationFailed(String::from("zero eigenvalue is not simple")));
                    }
                    zero = Some((mu, ov));
                } else {
                    accepted.push((mu, res));
                }
            }
            accepted.sort_by(|a, b| a.0.re.total_cmp(&b.0.re));
            if let (Some((z0, ov)), false) = (zero, accepted.is_empty()) {
                let sector_bound = 2.0 * bound.h_sup + 2.0 * bound.u_sup + 2.0 * self.lambda;
                for (mu, _) in &accepted {
                    if mu.re < -1e-9 || mu.im.abs() > sector_bound + 1e-9 {
                        return Err(SpectralError::ValidationFailed(alloc::format!("eigenvalue {mu} outside the numerical range")));
                    }
                }
                let eigenvalues: Vec<C64> = accepted.iter().take(10).map(|a| a.0).collect();
                return Ok(GapReport {
                    g_num: eigenvalues[0].re,
                    eigenvalues,
                    zero_overlap: ov,
                    zero_eigenvalue: z0,
                    bound,
                    lambda: self.lambda,
                    rate: self.rate,
                    shift: z,
                });
            }
            rounds += 1;
            if rounds >= 3 {
                let best = pairs.iter().map(|p| p.residual).fold(f64::INFINITY, f64::min);
                return Err(SpectralError::SolverNotConverged { what: "shift-invert Arnoldi", residual: best });
            }
            steps *= 2;
            start = vec![C64::new(0.0, 0.0); n];
            for p in pairs.iter().take(12) {
                crate::linalg::axpy(C64::new(1.0, 0.0), &p.vector, &mut start);
            }
        }
    }

    /// Solver for `J = L̂₀|_{φ₀^⊥}` through the lifted operator `L̂₀ + φ₀φ₀*`.
    pub fn j_solver(&self) -> Result<JSolver<'a>, SpectralError> {
        if !(self.lambda > 0.0) {
            return Err(SpectralError::ZeroCoupling);
        }
        let k0 = self.zero_k();
        let herm = self.hermitian(self.lambda, &k0)?;
        let generator = self.generator(&k0)?;
        let phi = self.space.phi0();
        let precond = SectorSolver::new(self.space, &herm, self.rate, C64::new(0.0, 0.0), Some(&phi), &self.config)?;
        Ok(JSolver { space: self.space, generator, phi, precond, config: self.config })
    }

    /// `φ̃_j = ∂_{k_j}K̂₀ φ₀`.
    pub fn velocity_vector(&self, axis: usize) -> Result<AugVector, SpectralError> {
        Ok(self.space.apply(&FiberOperator::HoppingDerivative { k: self.zero_k(), axis }, &self.space.phi0())?)
    }

    pub fn diffusion_matrix(&self) -> Result<DiffusionMatrix, SpectralError> {
        let js = self.j_solver()?;
        let pr = self.space.projections()?;
        let d = self.space.dim();
        let mut phis = Vec::with_capacity(d);
        let mut xs = Vec::with_capacity(d);
        for i in 0..d {
            let f = self.velocity_vector(i)?;
            let x = js.solve(&f)?;
            xs.push(pr.apply(Subspace::H2, &x)?);
            phis.push(f);
        }
        let mut m = DMatrix::<C64>::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = phis[j].dot(&xs[i])? + phis[i].dot(&xs[j])?;
            }
        }
        DiffusionMatrix::validated(m, self.space, true)
    }

    /// Eigenvalue of `L̂_k` of minimal modulus by shifted inverse iteration from `φ₀`.
    pub fn track_eigenvalue(&self, k: &[f64], gap: Option<f64>) -> Result<C64, SpectralError> {
        let herm = self.hermitian(self.lambda, k)?;
        let l = self.generator(k)?;
        let z = C64::new(self.config.inverse_shift, 0.0);
        let solver = SectorSolver::new(self.space, &herm, self.rate, z, None, &self.config)?;
        let phi = self.space.phi0();
        let mut v = phi.data.clone();
        let mut lv = vec![C64::new(0.0, 0.0); v.len()];
        let mut last = C64::new(f64::INFINITY, 0.0);
        let mut e = C64::new(0.0, 0.0);
        for _ in 0..60 {
            let w = solver.solve(&v)?;
            let wn = norm(&w);
            v = w.iter().map(|c| c / wn).collect();
            l.matvec(&v, &mut lv);
            e = crate::linalg::dotc(&phi.data, &lv) / crate::linalg::dotc(&phi.data, &v);
            if (e - last).norm() <= 1e-15 + 1e-12 * e.norm() {
                break;
            }
            last = e;
        }
        crate::linalg::axpy(-e, &v, &mut lv);
        let res = norm(&lv);
        if res > self.config.eigen_tol {
            return Err(SpectralError::SolverNotConverged { what: "inverse iteration", residual: res });
        }
        if let Some(g) = gap {
            if e.norm() >= g / 2.0 {
                return Err(SpectralError::GapCollision { value: e.norm(), gap: g });
            }
        }
        if e.re < -1e-9 {
            return Err(SpectralError::ValidationFailed(alloc::format!("Re E(k) = {} is negative", e.re)));
        }
        Ok(e)
    }

    /// Hessian of `E` at `k = 0` by Richardson-extrapolated central differences.
    pub fn eigenvalue_hessian(&self, gap: Option<f64>) -> Result<DMatrix<C64>, SpectralError> {
        let d = self.space.dim();
        let eps = self.config.hessian_step;
        let e0 = self.track_eigenvalue(&self.zero_k(), gap)?;
        let at = |pairs: &[(usize, f64)]| -> Result<C64, SpectralError> {
            let mut k = vec![0.0; d];
            for &(a, s) in pairs {
                k[a] += s;
            }
            self.track_eigenvalue(&k, gap)
        };
        let mut hess = DMatrix::<C64>::zeros(d, d);
        for i in 0..d {
            let p1 = at(&[(i, eps)])?;
            let m1 = at(&[(i, -eps)])?;
            let p2 = at(&[(i, 2.0 * eps)])?;
            let m2 = at(&[(i, -2.0 * eps)])?;
            hess[(i, i)] = (-p2 + p1 * 16.0 - e0 * 30.0 + m1 * 16.0 - m2) / (12.0 * eps * eps);
            for j in 0..i {
                let mixed = |h: f64| -> Result<C64, SpectralError> {
                    let pp = at(&[(i, h), (j, h)])?;
                    let pm = at(&[(i, h), (j, -h)])?;
                    let mp = at(&[(i, -h), (j, h)])?;
                    let mm = at(&[(i, -h), (j, -h)])?;
                    Ok((pp - pm - mp + mm) / (4.0 * h * h))
                };
                let v = (mixed(eps)? * 4.0 - mixed(2.0 * eps)?) / 3.0;
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        Ok(hess)
    }

    /// Weak-coupling limit `D⁰` on the kernel of `Π₂(K̂₀ + Û)Π₂`.
    pub fn asymptotic_diffusion(&self) -> Result<AsymptoticDiffusion, SpectralError> {
        let space = self.space;
        let pr = space.projections()?;
        let q = &pr.tilde_basis;
        let ns = space.walsh().len();
        let d = space.dim();
        let m = q.ncols();
        if m == 0 {
            return Err(SpectralError::DegenerateKernel);
        }
        let mut a = DMatrix::<C64>::zeros(m, d);
        for i in 0..d {
            let f = self.velocity_vector(i)?;
            let sector = DVector::from_iterator(space.sector_len(), f.data.iter().step_by(ns).copied());
            a.set_column(i, &(q.adjoint() * sector));
        }
        let scale = (0..d).map(|i| self.velocity_vector(i).map(|v| v.norm())).collect::<Result<Vec<_>, _>>()?;
        let included: Vec<usize> = (0..d).filter(|&i| a.column(i).norm() > 1e-10 * scale[i].max(1e-300)).collect();
        let excluded: Vec<usize> = (0..d).filter(|i| !included.contains(i)).collect();
        if included.is_empty() {
            return Err(SpectralError::DegenerateKernel);
        }
        let k0 = self.zero_k();
        let free = self.hermitian(0.0, &k0)?;
        let (solver, _) = SectorSolver::split(space, &free, self.rate, C64::new(0.0, 0.0), None, &self.config);
        let coupling = space.assemble(&FiberOperator::Coupling)?;
        let n = space.len();
        let mut r = DMatrix::<C64>::zeros(m, m);
        let mut vq = vec![C64::new(0.0, 0.0); n];
        let mut back = vec![C64::new(0.0, 0.0); n];
        for b in 0..m {
            let mut full = vec![C64::new(0.0, 0.0); n];
            for s in 0..space.sector_len() {
                full[s * ns] = q[(s, b)];
            }
            coupling.matvec(&full, &mut vq);
            let rhs: Vec<C64> = solver.rest.iter().map(|&i| vq[i]).collect();
            let y = solver.random_solve(&rhs)?;
            let mut yf = vec![C64::new(0.0, 0.0); n];
            for (k, &i) in solver.rest.iter().enumerate() {
                yf[i] = y[k];
            }
            coupling.matvec(&yf, &mut back);
            let sector = DVector::from_iterator(space.sector_len(), back.iter().step_by(ns).copied());
            r.set_column(b, &(q.adjoint() * sector));
        }
        let lu = r.lu();
        let mut out = DMatrix::<C64>::zeros(d, d);
        let sols: Vec<DVector<C64>> = (0..d)
            .map(|i| lu.solve(&a.column(i).into_owned()).ok_or(SpectralError::Singular))
            .collect::<Result<_, _>>()?;
        for &i in &included {
            for &j in &included {
                out[(i, j)] = a.column(j).dotc(&sols[i]) + a.column(i).dotc(&sols[j]);
            }
        }
        let sub = DMatrix::from_fn(included.len(), included.len(), |a_, b_| out[(included[a_], included[b_])]);
        DiffusionMatrix::validated(sub, space, true)?;
        let matrix = DiffusionMatrix::validated(out, space, false)?;
        Ok(AsymptoticDiffusion { matrix, included, excluded, kernel_rank: m })
    }
}

/// Solves `J x = rhs` on `φ₀^⊥` by flexible GMRES preconditioned with the
/// sector factorization of `L̂₀ + φ₀φ₀*`.
pub struct JSolver<'a> {
    space: &'a AugSpace,
    generator: Csr,
    phi: AugVector,
    precond: SectorSolver,
    config: SpectralConfig,
}

impl JSolver<'_> {
    pub fn solve(&self, rhs: &AugVector) -> Result<AugVector, SpectralError> {
        let mut b = rhs.clone();
        let c = self.phi.dot(&b)?;
        crate::linalg::axpy(-c, &self.phi.data, &mut b.data);
        let op = GeneratorOp { l: &self.generator, z: C64::new(0.0, 0.0), lift: Some(&self.phi) };
        let mut x = vec![C64::new(0.0, 0.0); b.len()];
        let mut err: Option<SpectralError> = None;
        let mut pc = |r: &[C64], z: &mut [C64]| match self.precond.solve(r) {
            Ok(v) => z.copy_from_slice(&v),
            Err(e) => {
                z.copy_from_slice(r);
                err.get_or_insert(e);
            }
        };
        let cfg = KrylovConfig { tol: self.config.solve_tol, max_iter: self.config.max_iter, restart: self.config.restart };
        let result = fgmres(&op, &mut pc, &b.data, &mut x, cfg);
        if let Some(e) = err {
            return Err(e);
        }
        result?;
        let mut out = self.space.vector(x)?;
        let c = self.phi.dot(&out)?;
        crate::linalg::axpy(-c, &self.phi.data, &mut out.data);
        Ok(out)
    }
}

/// One rung of the Abel-mean ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaPoint {
    pub eta: f64,
    /// `2⟨φ̃_j, (I + iη⁻¹(K̂₀ + Û))⁻¹ φ̃_j⟩` per axis.
    pub lhs: Vec<f64>,
    /// `η³∫₀^∞ e^{−ηt} M_jj(t) dt` per axis.
    pub rhs: Vec<f64>,
    /// Largest `|lhs − rhs|` over axes.
    pub residual: f64,
    /// Left side recomputed on a torus of twice the size.
    pub lhs_doubled: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaReport {
    pub points: Vec<EtaPoint>,
    /// Least-squares slope of `log residual` against `log η`; `None` when
    /// fewer than two residuals are resolvable from zero.
    pub exponent: Option<f64>,
}

struct ScaledCsr<'a> {
    a: &'a Csr,
    factor: f64,
}

impl LinearOperator for ScaledCsr<'_> {
    fn dim(&self) -> usize {
        self.a.nrows
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.a.matvec(x, y);
        for v in y.iter_mut() {
            *v *= self.factor;
        }
    }
}

fn resolvent_form(h: &HoppingKernel, u: &PeriodicPotential, eta: f64, size: usize, config: &SpectralConfig) -> Result<Vec<f64>, SpectralError> {
    let d = h.dim();
    let extent: Vec<usize> = u.period().iter().map(|p| size.div_ceil(*p) * p).collect();
    let space = AugSpace::new(h.clone(), u.clone(), crate::augmented::Truncation::torus(extent, 0))?;
    let zero = vec![0.0; d];
    let a = space.assemble(&FiberOperator::Hermitian { lambda: 0.0, k: zero.clone() })?;
    let op = ScaledCsr { a: &a, factor: 1.0 / eta };
    let ones = vec![1.0; space.len()];
    let phi = space.phi0();
    let cfg = KrylovConfig { tol: config.solve_tol, max_iter: config.max_iter, restart: config.restart };
    let mut out = Vec::with_capacity(d);
    for axis in 0..d {
        let v = space.apply(&FiberOperator::HoppingDerivative { k: zero.clone(), axis }, &phi)?;
        let (x, _) = shifted_minres(&ones, &op, &v.data, cfg)?;
        out.push(2.0 * crate::linalg::dotc(&v.data, &x).re);
    }
    Ok(out)
}

/// Compares the resolvent form of the `λ = 0` generator at `k = 0` with the
/// Abel mean of the deterministic second moments, averaged over starting
/// sites in the unit cell, along a ladder of `η`. The torus has
/// `sites_per_inverse_eta / η` sites per axis.
pub fn eta_moment_identity_check(
    h: &HoppingKernel,
    u: &PeriodicPotential,
    etas: &[f64],
    sites_per_inverse_eta: f64,
    config: &SpectralConfig,
) -> Result<EtaReport, SpectralError> {
    let d = h.dim();
    if let Some(&bad) = etas.iter().find(|e| !(**e > 0.0)) {
        return Err(SpectralError::ValidationFailed(alloc::format!("η must be positive, got {bad}")));
    }
    let model = Model::Periodic(u.clone());
    let cells = u.cell_count();
    let mut points = Vec::with_capacity(etas.len());
    for &eta in etas {
        let size = libm::ceil(sites_per_inverse_eta / eta) as usize;
        let lhs = resolvent_form(h, u, eta, size, config)?;
        let lhs_doubled = resolvent_form(h, u, eta, 2 * size, config)?;
        let relaxation = 2.0 / eta;
        let horizon = 40.0 / eta;
        let steps = libm::ceil(horizon / 0.05) as usize;
        let times: Vec<f64> = (0..=steps).map(|i| horizon * i as f64 / steps as f64).collect();
        let mut rhs = vec![0.0; d];
        for sigma in 0..cells {
            let series = deterministic_moments(h, &model, &u.cell_coords(sigma), times.clone())?;
            let abel = abel_second_moment(&series, relaxation)?;
            for (r, v) in rhs.iter_mut().zip(&abel.values) {
                *r += 4.0 * v / cells as f64;
            }
        }
        let residual = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        points.push(EtaPoint { eta, lhs, rhs, residual, lhs_doubled });
    }
    let scale = points.iter().flat_map(|p| p.lhs.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-12 * scale.max(1.0);
    let usable: Vec<(f64, f64)> =
        points.iter().filter(|p| p.residual > floor).map(|p| (libm::log(p.eta), libm::log(p.residual))).collect();
    let exponent = (usable.len() >= 2).then(|| {
        let n = usable.len() as f64;
        let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
        let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = usable.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        sxy / sxx
    });
    Ok(EtaReport { points, exponent })
}

/// Derivative of `t ↦ e^{−tL(κ)}` along `κ` from the block exponential
/// `exp(−t [[L, L'], [0, L]])`, whose upper-right block is
/// `−∫₀ᵗ e^{−(t−s)L} L' e^{−sL} ds`.
pub fn semigroup_derivative(l: &DMatrix<C64>, dl: &DMatrix<C64>, t: f64) -> Result<DMatrix<C64>, crate::linalg::DenseError> {
    let n = l.nrows();
    let mut block = DMatrix::<C64>::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(l);
    block.view_mut((0, n), (n, n)).copy_from(dl);
    block.view_mut((n, n), (n, n)).copy_from(l);
    let e = crate::linalg::expm(&(block * C64::new(-t, 0.0)))?;
    Ok(e.view((0, n), (n, n)).into_owned())
}
