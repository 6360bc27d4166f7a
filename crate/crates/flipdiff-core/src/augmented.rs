//! The Floquet-fibered augmented space at finite truncation.
//!
//! Coordinates are `(x, σ, S)`: a lattice offset `x`, a cell index `σ ∈ Z_p⃗`
//! and a Walsh subset `S` of noise sites with `|S| ≤ K`. The linear index is
//! `(x·⊗p⃗ + σ)·#S + rank(S)`, so the non-random sector `S = ∅` consists of every
//! `#S`-th entry.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::lattice::{phase, HoppingKernel, LatticeError, PeriodicPotential};
use crate::linalg::{orthonormalize, Csr, CsrBuilder};
use crate::markov::{MarkovError, WalshBasis};
use crate::C64;

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentedError {
    #[error("vector truncation does not match the space")]
    TruncationMismatch,
    #[error("kernel dimension {kernel} does not match potential dimension {potential}")]
    DimensionMismatch { kernel: usize, potential: usize },
    #[error("quasimomentum has {got} components, expected {expected}")]
    Quasimomentum { got: usize, expected: usize },
    #[error("axis {axis} out of range")]
    Axis { axis: usize },
    #[error("torus size {size} on axis {axis} is not a positive multiple of the period {period}")]
    Incommensurate { axis: usize, size: usize, period: usize },
    #[error("trivial cell: ⊗p⃗ = 1")]
    TrivialCell,
    #[error("vector support leaves the truncation")]
    OutsideTruncation,
    #[error(transparent)]
    Walsh(#[from] MarkovError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Eigenvalue multiset of `A_p^m` for the cyclic right shift `A_p`, as
/// `(value, multiplicity)` pairs.
pub fn shift_power_eigs(p: usize, m: i64) -> Vec<(C64, usize)> {
    assert!(p >= 1, "period must be positive");
    let r = m.rem_euclid(p as i64) as usize;
    let g = gcd(r, p);
    let distinct = p / g;
    (0..distinct)
        .map(|j| {
            let a = 2.0 * core::f64::consts::PI * j as f64 / distinct as f64;
            (C64::new(libm::cos(a), libm::sin(a)), g)
        })
        .collect()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// The permutation matrix `A_p⃗^m⃗ = ⊗_j A_{p_j}^{m_j}`, `(A w)_σ = w_{σ−m}`.
pub fn shift_matrix(period: &[usize], m: &[i64]) -> DMatrix<C64> {
    let cells = PeriodicPotential::new(period.to_vec(), vec![0.0; period.iter().product()]).expect("valid period");
    let n = cells.cell_count();
    let mut a = DMatrix::zeros(n, n);
    for sigma in 0..n {
        let c: Vec<i64> = cells.cell_coords(sigma).iter().zip(m).map(|(s, mj)| s - mj).collect();
        a[(sigma, cells.cell_index(&c))] = C64::new(1.0, 0.0);
    }
    a
}

/// Orthonormal basis of `∩_j Ker(I − A_p⃗^{m⃗_j})`.
pub fn kernel_intersection(period: &[usize], generators: &[Vec<i64>]) -> Vec<DVector<C64>> {
    let n: usize = period.iter().product();
    let mut gram = DMatrix::<C64>::zeros(n, n);
    for m in generators {
        let d = DMatrix::<C64>::identity(n, n) - shift_matrix(period, m);
        gram += d.adjoint() * d;
    }
    let eig = gram.symmetric_eigen();
    let vecs: Vec<DVector<C64>> = (0..n)
        .filter(|&i| eig.eigenvalues[i].abs() < 1e-10)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    orthonormalize(&vecs, 1e-8)
}

/// `c₀ = min_{ℓ≠0} Σ_ξ |h(ξ)|² |1 − e^{−2πi Σ_j ℓ_j ξ_j / p_j}|²`.
pub fn c0_constant(h: &HoppingKernel, period: &[usize]) -> Result<f64, AugmentedError> {
    let cells = PeriodicPotential::new(period.to_vec(), vec![0.0; period.iter().product()])?;
    if h.dim() != period.len() {
        return Err(AugmentedError::DimensionMismatch { kernel: h.dim(), potential: period.len() });
    }
    if cells.cell_count() == 1 {
        return Err(AugmentedError::TrivialCell);
    }
    let mut best = f64::INFINITY;
    for l in 1..cells.cell_count() {
        let ell = cells.cell_coords(l);
        let mut s = 0.0;
        for (xi, v) in h.entries() {
            let a: f64 = (0..period.len())
                .map(|j| 2.0 * core::f64::consts::PI * ell[j] as f64 * xi[j] as f64 / period[j] as f64)
                .sum();
            s += v.norm_sqr() * (C64::new(1.0, 0.0) - C64::new(libm::cos(a), -libm::sin(a))).norm_sqr();
        }
        best = best.min(s);
    }
    Ok(best)
}

/// Lattice truncation of the augmented space.
#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    /// Offsets and noise sites in `[−L, L]^d`; reads outside are zero.
    Box { radius: usize },
    /// Offsets and noise sites on `Z_{n_1} × … × Z_{n_d}` with wrap-around.
    Torus { size: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub geometry: Geometry,
    /// Walsh order cap `K`.
    pub order: usize,
}

impl Truncation {
    pub fn boxed(radius: usize, order: usize) -> Self {
        Self { geometry: Geometry::Box { radius }, order }
    }

    pub fn torus(size: Vec<usize>, order: usize) -> Self {
        Self { geometry: Geometry::Torus { size }, order }
    }
}

/// Operators acting fiberwise on the augmented space.
#[derive(Debug, Clone, PartialEq)]
pub enum FiberOperator {
    /// `K̂_k`.
    Hopping { k: Vec<f64> },
    /// `∂_{k_j} K̂_k`.
    HoppingDerivative { k: Vec<f64>, axis: usize },
    /// `∂_{k_i}∂_{k_j} K̂_k`.
    HoppingSecondDerivative { k: Vec<f64>, axes: (usize, usize) },
    /// `Û`.
    Potential,
    /// `V̂`.
    Coupling,
    /// `B` at flip rate `rate`.
    Flip { rate: f64 },
    /// `K̂_k + Û + λV̂`.
    Hermitian { lambda: f64, k: Vec<f64> },
    /// `L̂_k = iK̂_k + iÛ + iλV̂ + B`.
    Generator { lambda: f64, rate: f64, k: Vec<f64> },
}

/// Subspaces of the direct-sum decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subspace {
    /// `span{φ₀}`.
    H0,
    /// `x = 0`, `S = ∅`, cell vector orthogonal to `1⃗`.
    H1,
    /// `x ≠ 0`, `S = ∅`.
    H2,
    /// `S ≠ ∅`.
    H3,
    /// `Ker(P₁K̂₀) ∩ H₂`.
    Pi2,
    /// Kernel of `Π₂(K̂₀ + Û)Π₂` within `Ran Π₂`.
    PiTilde,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    extent: Vec<usize>,
    periodic: bool,
    order: usize,
    period: Vec<usize>,
}

/// Coefficients over the augmented index set of one truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugVector {
    layout: Layout,
    pub data: Vec<C64>,
}

impl AugVector {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm(&self.data)
    }

    /// `⟨self, other⟩`, conjugate-linear in `self`.
    pub fn dot(&self, other: &AugVector) -> Result<C64, AugmentedError> {
        if self.layout != other.layout {
            return Err(AugmentedError::TruncationMismatch);
        }
        Ok(crate::linalg::dotc(&self.data, &other.data))
    }
}

#[derive(Debug, Clone, Copy)]
enum HopKind {
    Value,
    First(usize),
    Second(usize, usize),
}

struct Terms {
    direct: Vec<C64>,
    shifted: Vec<C64>,
    potential: C64,
    coupling: C64,
    flip: f64,
}

/// An augmented space with its hopping kernel and periodic potential.
#[derive(Debug, Clone)]
pub struct AugSpace {
    h: HoppingKernel,
    u: PeriodicPotential,
    truncation: Truncation,
    layout: Layout,
    lower: Vec<i64>,
    strides: Vec<usize>,
    nsites: usize,
    cells: usize,
    origin: usize,
    walsh: WalshBasis,
    site_shift: Vec<Vec<u32>>,
    walsh_shift: Vec<Vec<u32>>,
    cell_shift: Vec<Vec<u32>>,
    potential_diff: Vec<f64>,
}

impl AugSpace {
    pub fn new(h: HoppingKernel, u: PeriodicPotential, truncation: Truncation) -> Result<Self, AugmentedError> {
        let d = h.dim();
        if u.dim() != d {
            return Err(AugmentedError::DimensionMismatch { kernel: d, potential: u.dim() });
        }
        let (extent, lower, periodic) = match &truncation.geometry {
            Geometry::Box { radius } => (vec![2 * radius + 1; d], vec![-(*radius as i64); d], false),
            Geometry::Torus { size } => {
                if size.len() != d {
                    return Err(AugmentedError::DimensionMismatch { kernel: d, potential: size.len() });
                }
                for (axis, (&n, &p)) in size.iter().zip(u.period()).enumerate() {
                    if n == 0 || n % p != 0 {
                        return Err(AugmentedError::Incommensurate { axis, size: n, period: p });
                    }
                }
                (size.clone(), vec![0; d], true)
            }
        };
        let mut strides = vec![1usize; d];
        for j in 1..d {
            strides[j] = strides[j - 1] * extent[j - 1];
        }
        let nsites: usize = extent.iter().product();
        let walsh = WalshBasis::new(nsites, truncation.order)?;
        let cells = u.cell_count();
        let layout = Layout { extent: extent.clone(), periodic, order: truncation.order, period: u.period().to_vec() };
        let mut space = Self {
            h,
            u,
            truncation,
            layout,
            lower,
            strides,
            nsites,
            cells,
            origin: 0,
            walsh,
            site_shift: Vec::new(),
            walsh_shift: Vec::new(),
            cell_shift: Vec::new(),
            potential_diff: Vec::new(),
        };
        space.origin = space.site_of(&vec![0; d]).expect("origin inside truncation");
        space.build_tables();
        Ok(space)
    }

    fn build_tables(&mut self) {
        let d = self.dim();
        let entries = self.h.entries().to_vec();
        for (xi, _) in &entries {
            let shift: Vec<u32> = (0..self.nsites)
                .map(|x| {
                    let c: Vec<i64> = self.site_coords(x).iter().zip(xi).map(|(a, b)| a - b).collect();
                    self.site_of(&c).map_or(NONE, |s| s as u32)
                })
                .collect();
            let wshift: Vec<u32> = (0..self.walsh.len())
                .map(|s| self.walsh.map_subset(s, |z| (shift[z as usize] != NONE).then(|| shift[z as usize])).map_or(NONE, |r| r as u32))
                .collect();
            let cshift: Vec<u32> = (0..self.cells)
                .map(|sigma| {
                    let c: Vec<i64> = self.u.cell_coords(sigma).iter().zip(xi).map(|(a, b)| a - b).collect();
                    self.u.cell_index(&c) as u32
                })
                .collect();
            self.site_shift.push(shift);
            self.walsh_shift.push(wshift);
            self.cell_shift.push(cshift);
        }
        let mut pd = Vec::with_capacity(self.nsites * self.cells);
        for x in 0..self.nsites {
            let xc = self.site_coords(x);
            for sigma in 0..self.cells {
                let sc = self.u.cell_coords(sigma);
                let diff: Vec<i64> = (0..d).map(|j| xc[j] - sc[j]).collect();
                let neg: Vec<i64> = sc.iter().map(|v| -v).collect();
                pd.push(self.u.value_at(&diff) - self.u.value_at(&neg));
            }
        }
        self.potential_diff = pd;
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub fn hopping(&self) -> &HoppingKernel {
        &self.h
    }

    pub fn potential(&self) -> &PeriodicPotential {
        &self.u
    }

    pub fn truncation(&self) -> &Truncation {
        &self.truncation
    }

    pub fn walsh(&self) -> &WalshBasis {
        &self.walsh
    }

    pub fn is_periodic(&self) -> bool {
        self.layout.periodic
    }

    pub fn extent(&self) -> &[usize] {
        &self.layout.extent
    }

    /// Total number of coordinates.
    pub fn len(&self) -> usize {
        self.nsites * self.cells * self.walsh.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sites(&self) -> usize {
        self.nsites
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    /// Dimension of the `S = ∅` sector.
    pub fn sector_len(&self) -> usize {
        self.nsites * self.cells
    }

    pub fn index(&self, site: usize, sigma: usize, subset: usize) -> usize {
        (site * self.cells + sigma) * self.walsh.len() + subset
    }

    /// Inverse of [`AugSpace::index`].
    pub fn decompose(&self, idx: usize) -> (usize, usize, usize) {
        let ns = self.walsh.len();
        let s = idx % ns;
        let xs = idx / ns;
        (xs / self.cells, xs % self.cells, s)
    }

    pub fn site_coords(&self, site: usize) -> Vec<i64> {
        (0..self.dim())
            .map(|j| ((site / self.strides[j]) % self.layout.extent[j]) as i64 + self.lower[j])
            .collect()
    }

    pub fn site_of(&self, coords: &[i64]) -> Option<usize> {
        let mut idx = 0;
        for j in 0..self.dim() {
            let n = self.layout.extent[j] as i64;
            let mut c = coords[j] - self.lower[j];
            if self.layout.periodic {
                c = c.rem_euclid(n);
            } else if c < 0 || c >= n {
                return None;
            }
            idx += c as usize * self.strides[j];
        }
        Some(idx)
    }

    pub fn zeros(&self) -> AugVector {
        AugVector { layout: self.layout.clone(), data: vec![C64::new(0.0, 0.0); self.len()] }
    }

    pub fn vector(&self, data: Vec<C64>) -> Result<AugVector, AugmentedError> {
        if data.len() != self.len() {
            return Err(AugmentedError::TruncationMismatch);
        }
        Ok(AugVector { layout: self.layout.clone(), data })
    }

    fn check(&self, v: &AugVector) -> Result<(), AugmentedError> {
        if v.layout != self.layout || v.data.len() != self.len() {
            return Err(AugmentedError::TruncationMismatch);
        }
        Ok(())
    }

    /// `φ₀ = (⊗p⃗)^{−1/2} δ₀ ⊗ 1⃗ ⊗ ω_∅`.
    pub fn phi0(&self) -> AugVector {
        let mut v = self.zeros();
        let a = 1.0 / libm::sqrt(self.cells as f64);
        for sigma in 0..self.cells {
            v.data[self.index(self.origin, sigma, 0)] = C64::new(a, 0.0);
        }
        v
    }

    /// `ρ̂_{0;k}(x)_σ = Σ_{n ≡ σ} e^{−ik·n} ψ₀(x−n) conj ψ₀(−n)` in the `S = ∅` sector.
    pub fn initial_density(&self, psi0: &[(Vec<i64>, C64)], k: &[f64]) -> Result<AugVector, AugmentedError> {
        self.check_k(k)?;
        let mut v = self.zeros();
        for (a, pa) in psi0 {
            for (b, pb) in psi0 {
                // n = −b, x = a + n.
                let n: Vec<i64> = b.iter().map(|c| -c).collect();
                let x: Vec<i64> = a.iter().zip(&n).map(|(p, q)| p + q).collect();
                let site = self.site_of(&x).ok_or(AugmentedError::OutsideTruncation)?;
                let sigma = self.u.cell_index(&n);
                v.data[self.index(site, sigma, 0)] += phase(k, &n) * pa * pb.conj();
            }
        }
        Ok(v)
    }

    fn check_k(&self, k: &[f64]) -> Result<(), AugmentedError> {
        if k.len() != self.dim() {
            return Err(AugmentedError::Quasimomentum { got: k.len(), expected: self.dim() });
        }
        Ok(())
    }

    fn terms(&self, op: &FiberOperator) -> Result<Terms, AugmentedError> {
        let d = self.dim();
        let zero = C64::new(0.0, 0.0);
        let one = C64::new(1.0, 0.0);
        let i = crate::I;
        let axis_ok = |a: usize| if a < d { Ok(()) } else { Err(AugmentedError::Axis { axis: a }) };
        let (hop, kind, k, potential, coupling, flip): (C64, HopKind, Option<&[f64]>, C64, C64, f64) = match op {
            FiberOperator::Hopping { k } => (one, HopKind::Value, Some(k), zero, zero, 0.0),
            FiberOperator::HoppingDerivative { k, axis } => {
                axis_ok(*axis)?;
                (one, HopKind::First(*axis), Some(k), zero, zero, 0.0)
            }
            FiberOperator::HoppingSecondDerivative { k, axes } => {
                axis_ok(axes.0)?;
                axis_ok(axes.1)?;
                (one, HopKind::Second(axes.0, axes.1), Some(k), zero, zero, 0.0)
            }
            FiberOperator::Potential => (zero, HopKind::Value, None, one, zero, 0.0),
            FiberOperator::Coupling => (zero, HopKind::Value, None, zero, one, 0.0),
            FiberOperator::Flip { rate } => (zero, HopKind::Value, None, zero, zero, 2.0 * rate),
            FiberOperator::Hermitian { lambda, k } => (one, HopKind::Value, Some(k), one, C64::new(*lambda, 0.0), 0.0),
            FiberOperator::Generator { lambda, rate, k } => (i, HopKind::Value, Some(k), i, i * *lambda, 2.0 * rate),
        };
        let mut direct = vec![zero; self.h.entries().len()];
        let mut shifted = vec![zero; self.h.entries().len()];
        if let Some(k) = k {
            self.check_k(k)?;
            for (e, (xi, v)) in self.h.entries().iter().enumerate() {
                let ph = phase(k, xi);
                let (dc, sc) = match kind {
                    HopKind::Value => (*v, -*v * ph),
                    HopKind::First(j) => (zero, i * xi[j] as f64 * *v * ph),
                    HopKind::Second(a, b) => (zero, (xi[a] * xi[b]) as f64 * *v * ph),
                };
                direct[e] = hop * dc;
                shifted[e] = hop * sc;
            }
        }
        Ok(Terms { direct, shifted, potential, coupling, flip })
    }

    fn visit_row(&self, t: &Terms, row: usize, f: &mut impl FnMut(usize, C64)) {
        let (x, sigma, s) = self.decompose(row);
        for e in 0..t.direct.len() {
            let xs = self.site_shift[e][x];
            if xs == NONE {
                continue;
            }
            let xs = xs as usize;
            if t.direct[e] != C64::new(0.0, 0.0) {
                f(self.index(xs, sigma, s), t.direct[e]);
            }
            let ws = self.walsh_shift[e][s];
            if ws != NONE && t.shifted[e] != C64::new(0.0, 0.0) {
                f(self.index(xs, self.cell_shift[e][sigma] as usize, ws as usize), t.shifted[e]);
            }
        }
        let mut diag = C64::new(0.0, 0.0);
        if t.potential != C64::new(0.0, 0.0) {
            diag += t.potential * self.potential_diff[x * self.cells + sigma];
        }
        if t.flip != 0.0 {
            diag += t.flip * self.walsh.subset(s).len() as f64;
        }
        if diag != C64::new(0.0, 0.0) {
            f(row, diag);
        }
        if t.coupling != C64::new(0.0, 0.0) && x != self.origin {
            if let Some(r) = self.walsh.toggle(s, x as u32) {
                f(self.index(x, sigma, r), t.coupling);
            }
            if let Some(r) = self.walsh.toggle(s, self.origin as u32) {
                f(self.index(x, sigma, r), -t.coupling);
            }
        }
    }

    /// Sparse matrix of `op` in the canonical index order.
    pub fn assemble(&self, op: &FiberOperator) -> Result<Csr, AugmentedError> {
        let t = self.terms(op)?;
        let n = self.len();
        let mut b = CsrBuilder::with_capacity(n, n, n * (2 * t.direct.len() + 3));
        for row in 0..n {
            self.visit_row(&t, row, &mut |c, v| b.push(c, v));
            b.finish_row();
        }
        Ok(b.build())
    }

    /// Dense restriction of `op` to the `S = ∅` sector (rows and columns).
    pub fn sector_matrix(&self, op: &FiberOperator) -> Result<DMatrix<C64>, AugmentedError> {
        let t = self.terms(op)?;
        let ns = self.walsh.len();
        let m = self.sector_len();
        let mut out = DMatrix::zeros(m, m);
        for r in 0..m {
            self.visit_row(&t, r * ns, &mut |c, v| {
                if c % ns == 0 {
                    out[(r, c / ns)] += v;
                }
            });
        }
        Ok(out)
    }

    pub fn apply(&self, op: &FiberOperator, c: &AugVector) -> Result<AugVector, AugmentedError> {
        self.check(c)?;
        let t = self.terms(op)?;
        let mut out = self.zeros();
        for (row, o) in out.data.iter_mut().enumerate() {
            let mut s = C64::new(0.0, 0.0);
            self.visit_row(&t, row, &mut |col, v| s += v * c.data[col]);
            *o = s;
        }
        Ok(out)
    }

    /// Kernel data for `Π₂` and `Π̃`.
    pub fn projections(&self) -> Result<Projections, AugmentedError> {
        let m = self.sector_len();
        let p = self.cells;
        let k0 = vec![0.0; self.dim()];
        let hop = self.sector_matrix(&FiberOperator::Hopping { k: k0.clone() })?;
        let in_h2 = |i: usize| i / p != self.origin;
        // Ran(P₂K̂₀P₁): images of an orthonormal basis of 1⃗^⊥ at the origin.
        let ones = DVector::from_element(p, C64::new(1.0, 0.0));
        let mut cell_vecs = vec![ones];
        cell_vecs.extend((0..p).map(|s| DVector::from_fn(p, |i, _| if i == s { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })));
        let cell_basis = orthonormalize(&cell_vecs, 1e-10);
        let mut images = Vec::new();
        for w in cell_basis.iter().skip(1) {
            let mut e = DVector::<C64>::zeros(m);
            for s in 0..p {
                e[self.origin * p + s] = w[s];
            }
            let mut img = &hop * e;
            for i in 0..m {
                if !in_h2(i) {
                    img[i] = C64::new(0.0, 0.0);
                }
            }
            images.push(img);
        }
        let scale = hop.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
        let q: Vec<DVector<C64>> = orthonormalize(&images, 1e-10).into_iter().filter(|v| v.norm() > 1e-10 * scale).collect();
        let mut candidates = q.clone();
        for i in (0..m).filter(|&i| in_h2(i)) {
            let mut e = DVector::<C64>::zeros(m);
            e[i] = C64::new(1.0, 0.0);
            candidates.push(e);
        }
        let full = orthonormalize(&candidates, 1e-8);
        let pi2: Vec<DVector<C64>> = full.into_iter().skip(q.len()).collect();
        let pi2_basis = if pi2.is_empty() { DMatrix::zeros(m, 0) } else { DMatrix::from_columns(&pi2) };
        let herm = hop + self.sector_matrix(&FiberOperator::Potential)?;
        let compressed = pi2_basis.adjoint() * &herm * &pi2_basis;
        let nk = compressed.nrows();
        let tilde_basis = if nk == 0 {
            DMatrix::zeros(m, 0)
        } else {
            let eig = compressed.symmetric_eigen();
            let top = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let cols: Vec<DVector<C64>> = (0..nk)
                .filter(|&i| eig.eigenvalues[i].abs() <= 1e-8 * top.max(1e-300))
                .map(|i| &pi2_basis * eig.eigenvectors.column(i))
                .collect();
            if cols.is_empty() {
                DMatrix::zeros(m, 0)
            } else {
                DMatrix::from_columns(&orthonormalize(&cols, 1e-8))
            }
        };
        Ok(Projections { layout: self.layout.clone(), walsh_len: self.walsh.len(), cells: p, origin: self.origin, pi2_basis, tilde_basis })
    }

    /// Projection onto one subspace; computes the kernel data on every call.
    pub fn project(&self, tag: Subspace, c: &AugVector) -> Result<AugVector, AugmentedError> {
        self.projections()?.apply(tag, c)
    }

    /// Frobenius norms of the structurally vanishing blocks of `K̂₀`, `Û`, `V̂`,
    /// `B` and `L̂₀`; each bounds the block's operator norm.
    pub fn block_check(&self, lambda: f64, rate: f64) -> Result<Vec<BlockResidual>, AugmentedError> {
        use Subspace::*;
        let k0 = vec![0.0; self.dim()];
        let all = [H0, H1, H2, H3];
        let not3 = [H0, H1, H2];
        let ops: [(&'static str, FiberOperator); 5] = [
            ("K", FiberOperator::Hopping { k: k0.clone() }),
            ("U", FiberOperator::Potential),
            ("V", FiberOperator::Coupling),
            ("B", FiberOperator::Flip { rate }),
            ("L", FiberOperator::Generator { lambda, rate, k: k0 }),
        ];
        let blocks: [(&'static str, &'static str, &[Subspace], &[Subspace]); 17] = [
            ("K", "P0 K", &[H0], &all),
            ("K", "K P0", &all, &[H0]),
            ("K", "P1 K P1", &[H1], &[H1]),
            ("K", "P3 K P3^c", &[H3], &not3),
            ("K", "P3^c K P3", &not3, &[H3]),
            ("U", "U P0", &all, &[H0]),
            ("U", "U P1", &all, &[H1]),
            ("U", "P1 U P1", &[H1], &[H1]),
            ("U", "P3 U P3^c", &[H3], &not3),
            ("U", "P3^c U P3", &not3, &[H3]),
            ("V", "P3^c V P3^c", &not3, &not3),
            ("V", "V P0", &all, &[H0]),
            ("V", "V P1", &all, &[H1]),
            ("B", "B P3^c", &all, &not3),
            ("B", "P3^c B", &not3, &all),
            ("L", "L P0", &all, &[H0]),
            ("L", "P0 L", &[H0], &all),
        ];
        let mut out = Vec::new();
        for (name, op) in &ops {
            let a = self.assemble(op)?;
            let adj = a.adjoint();
            for (n, label, rows, cols) in blocks.iter() {
                if n != name {
                    continue;
                }
                out.push(BlockResidual { block: label, residual: self.block_norm(&a, &adj, rows, cols) });
            }
        }
        Ok(out)
    }

    fn block_norm(&self, a: &Csr, adj: &Csr, rows: &[Subspace], cols: &[Subspace]) -> f64 {
        let p = self.cells;
        let ones_norm = 1.0 / libm::sqrt(p as f64);
        // ‖P_rows v‖² for a sparse column v.
        let proj_sq = |entries: &[(usize, C64)]| -> f64 {
            let mut sq = 0.0;
            let mut fiber = vec![C64::new(0.0, 0.0); p];
            for &(i, v) in entries {
                let (x, sigma, s) = self.decompose(i);
                if s != 0 {
                    if rows.contains(&Subspace::H3) {
                        sq += v.norm_sqr();
                    }
                } else if x != self.origin {
                    if rows.contains(&Subspace::H2) {
                        sq += v.norm_sqr();
                    }
                } else {
                    fiber[sigma] += v;
                }
            }
            let mean: C64 = fiber.iter().sum::<C64>() / p as f64;
            if rows.contains(&Subspace::H0) {
                sq += (mean * ones_norm * p as f64).norm_sqr();
            }
            if rows.contains(&Subspace::H1) {
                sq += fiber.iter().map(|f| (f - mean).norm_sqr()).sum::<f64>();
            }
            sq
        };
        let mut total = 0.0;
        let mut dense_cols: Vec<Vec<C64>> = Vec::new();
        if cols.contains(&Subspace::H0) {
            dense_cols.push(vec![C64::new(ones_norm, 0.0); p]);
        }
        if cols.contains(&Subspace::H1) {
            let mut vs = vec![DVector::from_element(p, C64::new(1.0, 0.0))];
            vs.extend((0..p).map(|s| DVector::from_fn(p, |i, _| if i == s { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })));
            for w in orthonormalize(&vs, 1e-10).iter().skip(1) {
                dense_cols.push(w.iter().copied().collect());
            }
        }
        for w in dense_cols {
            let mut acc: alloc::collections::BTreeMap<usize, C64> = alloc::collections::BTreeMap::new();
            for (sigma, ws) in w.iter().enumerate() {
                let j = self.index(self.origin, sigma, 0);
                for (i, v) in adj.row(j) {
                    *acc.entry(i).or_insert(C64::new(0.0, 0.0)) += v.conj() * ws;
                }
            }
            let acc: Vec<(usize, C64)> = acc.into_iter().collect();
            total += proj_sq(&acc);
        }
        for j in 0..a.ncols {
            let (x, _, s) = self.decompose(j);
            let take = if s != 0 { cols.contains(&Subspace::H3) } else { x != self.origin && cols.contains(&Subspace::H2) };
            if !take {
                continue;
            }
            let col: Vec<(usize, C64)> = adj.row(j).map(|(i, v)| (i, v.conj())).collect();
            total += proj_sq(&col);
        }
        libm::sqrt(total)
    }

    /// Floquet transform of a torus function in Walsh coordinates,
    /// `F̂_k(X, σ, S) = Σ_{n ≡ σ} e^{−ik·n} F(X−n, −n, S−n)`, with `F` indexed by
    /// `(x·sites + y)·#S + rank(S)`.
    pub fn floquet_transform(&self, f: &[C64], k: &[f64]) -> Result<AugVector, AugmentedError> {
        self.check_k(k)?;
        let ns = self.walsh.len();
        let n = self.nsites;
        if !self.layout.periodic || f.len() != n * n * ns {
            return Err(AugmentedError::TruncationMismatch);
        }
        let mut out = self.zeros();
        for nsite in 0..n {
            let nc = self.site_coords(nsite);
            let sigma = self.u.cell_index(&nc);
            let ph = phase(k, &nc);
            let neg: Vec<i64> = nc.iter().map(|c| -c).collect();
            let y = self.site_of(&neg).expect("torus");
            let shift_map: Vec<u32> = (0..n)
                .map(|z| {
                    let zc: Vec<i64> = self.site_coords(z).iter().zip(&nc).map(|(a, b)| a - b).collect();
                    self.site_of(&zc).expect("torus") as u32
                })
                .collect();
            let ranks: Vec<usize> = (0..ns).map(|s| self.walsh.map_subset(s, |z| Some(shift_map[z as usize])).expect("torus")).collect();
            for big_x in 0..n {
                let xc: Vec<i64> = self.site_coords(big_x).iter().zip(&nc).map(|(a, b)| a - b).collect();
                let x = self.site_of(&xc).expect("torus");
                for s in 0..ns {
                    out.data[self.index(big_x, sigma, s)] += ph * f[(x * n + y) * ns + ranks[s]];
                }
            }
        }
        Ok(out)
    }

    /// `δ₀ ⊗ 1⃗ ⊗ ω_∅`, the pairing vector of the Fourier-transformed density.
    pub fn pairing_vector(&self) -> AugVector {
        let mut v = self.phi0();
        let s = libm::sqrt(self.cells as f64);
        v.data.iter_mut().for_each(|z| *z *= s);
        v
    }
}

/// Frobenius norm of one structurally vanishing block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockResidual {
    pub block: &'static str,
    pub residual: f64,
}

/// Orthonormal bases of `Ran Π₂` and `Ran Π̃` in `S = ∅` sector coordinates.
#[derive(Debug, Clone)]
pub struct Projections {
    layout: Layout,
    walsh_len: usize,
    cells: usize,
    origin: usize,
    pub pi2_basis: DMatrix<C64>,
    pub tilde_basis: DMatrix<C64>,
}

impl Projections {
    pub fn apply(&self, tag: Subspace, c: &AugVector) -> Result<AugVector, AugmentedError> {
        if c.layout != self.layout {
            return Err(AugmentedError::TruncationMismatch);
        }
        let ns = self.walsh_len;
        let p = self.cells;
        let mut out = AugVector { layout: self.layout.clone(), data: vec![C64::new(0.0, 0.0); c.len()] };
        let o = self.origin;
        match tag {
            Subspace::H0 | Subspace::H1 => {
                let mean: C64 = (0..p).map(|s| c.data[(o * p + s) * ns]).sum::<C64>() / p as f64;
                for s in 0..p {
                    let i = (o * p + s) * ns;
                    out.data[i] = if tag == Subspace::H0 { mean } else { c.data[i] - mean };
                }
            }
            Subspace::H2 => {
                for (j, v) in c.data.iter().enumerate().step_by(ns) {
                    if j / ns / p != o {
                        out.data[j] = *v;
                    }
                }
            }
            Subspace::H3 => {
                for (j, v) in c.data.iter().enumerate() {
                    if j % ns != 0 {
                        out.data[j] = *v;
                    }
                }
            }
            Subspace::Pi2 | Subspace::PiTilde => {
                let w = if tag == Subspace::Pi2 { &self.pi2_basis } else { &self.tilde_basis };
                let sector = DVector::from_iterator(c.len() / ns, c.data.iter().step_by(ns).copied());
                let r = w * (w.adjoint() * sector);
                for (i, v) in r.iter().enumerate() {
                    out.data[i * ns] = *v;
                }
            }
        }
        Ok(out)
    }

    pub fn pi2_rank(&self) -> usize {
        self.pi2_basis.ncols()
    }

    pub fn tilde_rank(&self) -> usize {
        self.tilde_basis.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::HoppingKernel;

    fn chain(p: usize, u: Vec<f64>, trunc: Truncation) -> AugSpace {
        AugSpace::new(HoppingKernel::nearest_neighbor(1), PeriodicPotential::new(vec![p], u).unwrap(), trunc).unwrap()
    }

    fn random_vec(space: &AugSpace, seed: u64) -> AugVector {
        let mut st = seed;
        let data = (0..space.len())
            .map(|_| {
                st = crate::rng::splitmix64(st);
                let a = (st >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                st = crate::rng::splitmix64(st);
                let b = (st >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                C64::new(a, b)
            })
            .collect();
        space.vector(data).unwrap()
    }

    #[test]
    fn shift_eigs_match_matrix() {
        for (p, m) in [(4usize, 2i64), (3, 0), (6, 4), (5, -2)] {
            let eig = crate::linalg::eigenvalues(&shift_matrix(&[p], &[m])).unwrap();
            let pairs = shift_power_eigs(p, m);
            assert_eq!(pairs.iter().map(|x| x.1).sum::<usize>(), p);
            for (v, mult) in &pairs {
                let count = eig.iter().filter(|e| (*e - v).norm() < 1e-9).count();
                assert_eq!(count, *mult, "p={p} m={m}");
            }
        }
        let p4 = shift_power_eigs(4, 2);
        assert_eq!(p4.len(), 2);
        assert!(p4.iter().all(|x| x.1 == 2));
    }

    #[test]
    fn kernel_intersections() {
        assert_eq!(kernel_intersection(&[2, 2], &[vec![1, 0], vec![0, 1]]).len(), 1);
        assert_eq!(kernel_intersection(&[4], &[vec![2]]).len(), 2);
        let k = kernel_intersection(&[2], &[vec![3]]);
        assert_eq!(k.len(), 1);
        assert!((k[0][0] - k[0][1]).norm() < 1e-12);
    }

    #[test]
    fn c0_examples() {
        let h = HoppingKernel::nearest_neighbor(1);
        assert!((c0_constant(&h, &[2]).unwrap() - 8.0).abs() < 1e-12);
        assert!((c0_constant(&h, &[3]).unwrap() - 6.0).abs() < 1e-12);
        assert_eq!(c0_constant(&h, &[1]), Err(AugmentedError::TrivialCell));
    }

    #[test]
    fn c0_matches_quadratic_form() {
        let h2 = HoppingKernel::nearest_neighbor(2);
        for (h, period) in [(HoppingKernel::nearest_neighbor(1), vec![4usize]), (h2, vec![2, 3])] {
            let n: usize = period.iter().product();
            let mut q = DMatrix::<C64>::zeros(n, n);
            for (xi, v) in h.entries() {
                let neg: Vec<i64> = xi.iter().map(|c| -c).collect();
                let d = DMatrix::<C64>::identity(n, n) - shift_matrix(&period, &neg);
                q += d.adjoint() * d * C64::new(v.norm_sqr(), 0.0);
            }
            let eig = q.symmetric_eigen();
            let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            vals.sort_by(f64::total_cmp);
            assert!(vals[0].abs() < 1e-10);
            assert!((vals[1] - c0_constant(&h, &period).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn hopping_on_delta_matches_shift_form() {
        let s = chain(2, vec![0.0, 1.0], Truncation::boxed(3, 1));
        let x = s.site_of(&[1]).unwrap();
        let w = [C64::new(0.3, 0.1), C64::new(-1.2, 0.4)];
        let mut v = s.zeros();
        for sigma in 0..2 {
            v.data[s.index(x, sigma, 0)] = w[sigma];
        }
        let out = s.apply(&FiberOperator::Hopping { k: vec![0.0] }, &v).unwrap();
        let mut expect = s.zeros();
        for (xi, hv) in s.hopping().entries() {
            let y = s.site_of(&[1 - xi[0]]).unwrap();
            let neg = [-xi[0]];
            let a = shift_matrix(&[2], &neg);
            let wv = DVector::from_row_slice(&w);
            let img = (DMatrix::<C64>::identity(2, 2) - a) * wv;
            for sigma in 0..2 {
                expect.data[s.index(y, sigma, 0)] += *hv * img[sigma];
            }
        }
        for (a, b) in out.data.iter().zip(&expect.data) {
            assert!((a - b).norm() < 1e-14);
        }
        let mut ones = s.zeros();
        for sigma in 0..2 {
            ones.data[s.index(x, sigma, 0)] = C64::new(1.0, 0.0);
        }
        assert!(s.apply(&FiberOperator::Hopping { k: vec![0.0] }, &ones).unwrap().norm() < 1e-14);
    }

    #[test]
    fn derivative_on_phi0() {
        let s = chain(2, vec![0.0, 1.0], Truncation::boxed(3, 2));
        let out = s.apply(&FiberOperator::HoppingDerivative { k: vec![0.0], axis: 0 }, &s.phi0()).unwrap();
        let a = 1.0 / libm::sqrt(2.0);
        let mut expect = s.zeros();
        for (xi, hv) in s.hopping().entries() {
            let y = s.site_of(xi).unwrap();
            for sigma in 0..2 {
                expect.data[s.index(y, sigma, 0)] += crate::I * xi[0] as f64 * *hv * a;
            }
        }
        for (a, b) in out.data.iter().zip(&expect.data) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn operators_self_adjoint_and_accretive() {
        let s = chain(2, vec![0.0, 1.0], Truncation::torus(vec![6], 3));
        for op in [FiberOperator::Hopping { k: vec![0.7] }, FiberOperator::Potential, FiberOperator::Coupling] {
            assert!(s.assemble(&op).unwrap().hermitian_defect() < 1e-14, "{op:?}");
        }
        let b = chain(2, vec![0.0, 1.0], Truncation::boxed(3, 2));
        for op in [FiberOperator::Hopping { k: vec![1.3] }, FiberOperator::Potential, FiberOperator::Coupling] {
            assert!(b.assemble(&op).unwrap().hermitian_defect() < 1e-14, "{op:?}");
        }
        let gen = FiberOperator::Generator { lambda: 0.7, rate: 1.0, k: vec![0.4] };
        for seed in 0..100 {
            let f = random_vec(&b, seed);
            let lf = b.apply(&gen, &f).unwrap();
            let q = f.dot(&lf).unwrap();
            assert!(q.re >= -1e-12);
            let bound = 2.0 * 2.0 + 2.0 * 1.0 + 2.0 * 0.7;
            let l0 = b.apply(&FiberOperator::Generator { lambda: 0.7, rate: 1.0, k: vec![0.0] }, &f).unwrap();
            assert!(f.dot(&l0).unwrap().im.abs() <= bound * f.norm() * f.norm() + 1e-12);
        }
    }

    fn op_norm(a: &Csr) -> f64 {
        let adj = a.adjoint();
        let n = a.nrows;
        let mut v: Vec<C64> = (0..n).map(|i| C64::new(1.0 + (i as f64 * 0.37).sin(), 0.1)).collect();
        let mut tmp = vec![C64::new(0.0, 0.0); n];
        let mut w = vec![C64::new(0.0, 0.0); n];
        let mut est = 0.0;
        for _ in 0..300 {
            let nv = crate::linalg::norm(&v);
            v.iter_mut().for_each(|z| *z /= nv);
            a.matvec(&v, &mut tmp);
            adj.matvec(&tmp, &mut w);
            est = libm::sqrt(crate::linalg::norm(&w));
            core::mem::swap(&mut v, &mut w);
        }
        est
    }

    #[test]
    fn norm_bounds() {
        let s = chain(2, vec![0.0, 1.0], Truncation::boxed(4, 2));
        let hsup = crate::lattice::symbol_sup_norm(s.hopping());
        assert!(op_norm(&s.assemble(&FiberOperator::Hopping { k: vec![0.3] }).unwrap()) <= 2.0 * hsup + 1e-9);
        assert!(op_norm(&s.assemble(&FiberOperator::Potential).unwrap()) <= 2.0 * 1.0 + 1e-9);
        assert!(op_norm(&s.assemble(&FiberOperator::Coupling).unwrap()) <= 2.0 + 1e-9);
    }

    #[test]
    fn derivatives_match_differences() {
        let s = chain(2, vec![0.0, 1.0], Truncation::boxed(4, 2));
        let k = 0.4;
        let eps = 1e-4;
        for seed in 0..20 {
            let f = random_vec(&s, 100 + seed);
            let ap = s.apply(&FiberOperator::Hopping { k: vec![k + eps] }, &f).unwrap();
            let am = s.apply(&FiberOperator::Hopping { k: vec![k - eps] }, &f).unwrap();
            let a0 = s.apply(&FiberOperator::Hopping { k: vec![k] }, &f).unwrap();
            let d1 = s.apply(&FiberOperator::HoppingDerivative { k: vec![k], axis: 0 }, &f).unwrap();
            let d2 = s.apply(&FiberOperator::HoppingSecondDerivative { k: vec![k], axes: (0, 0) }, &f).unwrap();
            for i in 0..s.len() {
                let fd = (ap.data[i] - am.data[i]) / (2.0 * eps);
                assert!((fd - d1.data[i]).norm() < 1e-7);
                let sd = (ap.data[i] - 2.0 * a0.data[i] + am.data[i]) / (eps * eps);
                assert!((sd - d2.data[i]).norm() < 1e-4);
            }
        }
    }

    #[test]
    fn projections_decompose_identity() {
        let s = chain(2, vec![0.0, 1.0], Truncation::boxed(3, 2));
        let pr = s.projections().unwrap();
        let phi = s.phi0();
        assert!((pr.apply(Subspace::H0, &phi).unwrap().data.iter().zip(&phi.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)) < 1e-15);
        for tag in [Subspace::H1, Subspace::H2, Subspace::H3] {
            assert!(pr.apply(tag, &phi).unwrap().norm() < 1e-15);
        }
        for seed in 0..100 {
            let f = random_vec(&s, seed);
            let mut sum = s.zeros();
            for tag in [Subspace::H0, Subspace::H1, Subspace::H2, Subspace::H3] {
                let p = pr.apply(tag, &f).unwrap();
                let pp = pr.apply(tag, &p).unwrap();
                for i in 0..s.len() {
                    sum.data[i] += p.data[i];
                    assert!((pp.data[i] - p.data[i]).norm() < 1e-12);
                }
            }
            for i in 0..s.len() {
                assert!((sum.data[i] - f.data[i]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn pi2_is_kernel_of_p1_k_p2() {
        let s = chain(2, vec![0.0, 1.0], Truncation::boxed(3, 1));
        let pr = s.projections().unwrap();
        let hop = s.sector_matrix(&FiberOperator::Hopping { k: vec![0.0] }).unwrap();
        let m = s.sector_len();
        let o = s.origin();
        // P₁ K̂₀ P₂ as a dense matrix on the sector.
        let mut block = DMatrix::<C64>::zeros(m, m);
        for r in 0..m {
            for c in 0..m {
                if r / 2 == o && c / 2 != o {
                    block[(r, c)] = hop[(r, c)];
                }
            }
        }
        let mean = DMatrix::<C64>::from_fn(m, m, |r, c| if r / 2 == o && c / 2 == o { C64::new(0.5, 0.0) } else { C64::new(0.0, 0.0) });
        let p1 = DMatrix::<C64>::from_fn(m, m, |r, c| if r == c && r / 2 == o { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }) - mean;
        let op = &p1 * block;
        let svd = op.clone().svd(false, false);
        let rank = svd.singular_values.iter().filter(|v| **v > 1e-10).count();
        assert_eq!(pr.pi2_rank(), 2 * (m / 2 - 1) - rank);
        assert!((&op * &pr.pi2_basis).norm() < 1e-12);
        // Kernel vectors supported on site 1 are multiples of 1⃗.
        let x1 = s.site_of(&[1]).unwrap();
        let site_only = DMatrix::<C64>::from_fn(m, 2, |r, c| if r == x1 * 2 + c { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
        let restricted = &op * &site_only;
        let svd1 = restricted.svd(false, true);
        let v_t = svd1.v_t.unwrap();
        let small = svd1.singular_values.iter().position(|v| *v < 1e-10).expect("kernel on site");
        assert_eq!(svd1.singular_values.iter().filter(|v| **v < 1e-10).count(), 1);
        let w = v_t.row(small);
        assert!((w[0] - w[1]).norm() < 1e-12);
    }

    #[test]
    fn pi_tilde_is_kernel() {
        let s = chain(2, vec![0.0, 1.0], Truncation::boxed(5, 1));
        let pr = s.projections().unwrap();
        assert!(pr.tilde_rank() > 0);
        let herm = s.sector_matrix(&FiberOperator::Hopping { k: vec![0.0] }).unwrap() + s.sector_matrix(&FiberOperator::Potential).unwrap();
        let pi2 = &pr.pi2_basis * pr.pi2_basis.adjoint();
        assert!((&pi2 * herm * &pr.tilde_basis).norm() < 1e-8);
    }

    #[test]
    fn structural_blocks_vanish() {
        let s = chain(2, vec![0.0, 1.0], Truncation::boxed(3, 2));
        for b in s.block_check(0.5, 1.0).unwrap() {
            assert!(b.residual < 1e-12, "{b:?}");
        }
    }

    #[test]
    fn floquet_plancherel_on_torus() {
        let n = 6;
        let s = chain(2, vec![0.0, 1.0], Truncation::torus(vec![n], 2));
        let ns = s.walsh().len();
        let mut st = 7u64;
        let f: Vec<C64> = (0..n * n * ns)
            .map(|_| {
                st = crate::rng::splitmix64(st);
                C64::new((st >> 40) as f64 / 1e7 - 0.8, (st & 0xffff) as f64 / 1e5)
            })
            .collect();
        let fnorm: f64 = f.iter().map(|z| z.norm_sqr()).sum();
        let mut total = 0.0;
        for m in 0..n {
            let k = 2.0 * core::f64::consts::PI * m as f64 / n as f64;
            let t = s.floquet_transform(&f, &[k]).unwrap();
            total += t.norm() * t.norm();
        }
        assert!((total / n as f64 - fnorm).abs() < 1e-10 * fnorm);
    }

    #[test]
    fn initial_density_of_delta() {
        let s = chain(2, vec![0.0, 1.0], Truncation::boxed(2, 1));
        let rho = s.initial_density(&[(vec![0], C64::new(1.0, 0.0))], &[0.9]).unwrap();
        let mut e = s.zeros();
        e.data[s.index(s.origin(), 0, 0)] = C64::new(1.0, 0.0);
        assert_eq!(rho, e);
        assert_eq!(s.apply(&FiberOperator::Potential, &AugSpace::zeros(&chain(2, vec![0.0, 1.0], Truncation::boxed(3, 1)))), Err(AugmentedError::TruncationMismatch));
    }
}
