//! Sparse storage, Krylov solvers and small dense helpers.

mod csr;
mod dense;
mod krylov;

pub use csr::{Csr, CsrBuilder};
pub use dense::{eigenvalues, expm, orthonormalize, DenseError};
pub use krylov::{arnoldi_eigs, fgmres, shifted_minres, KrylovConfig, KrylovError, KrylovStats, RitzPair};

use alloc::vec::Vec;

use crate::C64;

/// A linear map on `C^n`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[C64], y: &mut [C64]);
}

/// Conjugate-linear in the first argument.
pub fn dotc(a: &[C64], b: &[C64]) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        s += x.conj() * y;
    }
    s
}

pub fn norm(a: &[C64]) -> f64 {
    libm::sqrt(a.iter().map(|z| z.norm_sqr()).sum::<f64>())
}

/// `y += alpha x`.
pub fn axpy(alpha: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: C64, x: &mut [C64]) {
    for v in x.iter_mut() {
        *v *= alpha;
    }
}

pub fn zeros(n: usize) -> Vec<C64> {
    alloc::vec![C64::new(0.0, 0.0); n]
}
