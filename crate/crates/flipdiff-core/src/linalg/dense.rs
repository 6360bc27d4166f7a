use alloc::vec::Vec;
#[cfg(test)]
use alloc::vec;

use nalgebra::{DMatrix, DVector};

use crate::C64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DenseError {
    #[error("matrix is singular")]
    Singular,
    #[error("QR iteration did not converge")]
    NoConvergence,
}

/// `e^{A}` by scaling and squaring with a degree-18 Taylor polynomial.
pub fn expm(a: &DMatrix<C64>) -> Result<DMatrix<C64>, DenseError> {
    let n = a.nrows();
    let norm1 = (0..n).map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max);
    let mut squarings = 0u32;
    let mut s = 1.0;
    while norm1 / s > 0.5 {
        s *= 2.0;
        squarings += 1;
    }
    let scaled = a / C64::new(s, 0.0);
    let mut result = DMatrix::<C64>::identity(n, n);
    let mut term = DMatrix::<C64>::identity(n, n);
    for k in 1..=18 {
        term = &term * &scaled / C64::new(k as f64, 0.0);
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    if result.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(DenseError::Singular);
    }
    Ok(result)
}

/// Eigenvalues of a general complex matrix by Householder reduction to
/// Hessenberg form and Wilkinson-shifted QR iteration.
pub fn eigenvalues(a: &DMatrix<C64>) -> Result<Vec<C64>, DenseError> {
    let n = a.nrows();
    let mut h = a.clone();
    hessenberg_in_place(&mut h);
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return Ok(out);
    }
    let eps = f64::EPSILON;
    let mut hi = n - 1;
    let mut iter = 0usize;
    loop {
        if hi == 0 {
            out.push(h[(0, 0)]);
            break;
        }
        let mut lo = hi;
        while lo > 0 {
            let off = h[(lo, lo - 1)].norm();
            let scale = h[(lo, lo)].norm() + h[(lo - 1, lo - 1)].norm();
            if off <= eps * scale.max(f64::MIN_POSITIVE) {
                h[(lo, lo - 1)] = C64::new(0.0, 0.0);
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            out.push(h[(hi, hi)]);
            hi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        if iter > 60 * n.max(10) {
            return Err(DenseError::NoConvergence);
        }
        let mu = if iter % 11 == 0 {
            h[(hi, hi)] + C64::new(h[(hi, hi - 1)].norm(), 0.0) * 1.5
        } else {
            let (p, q, r, s) = (h[(hi - 1, hi - 1)], h[(hi - 1, hi)], h[(hi, hi - 1)], h[(hi, hi)]);
            let half = (p - s) * 0.5;
            let disc = (half * half + q * r).sqrt();
            let m1 = (p + s) * 0.5 + disc;
            let m2 = (p + s) * 0.5 - disc;
            if (m1 - s).norm() < (m2 - s).norm() {
                m1
            } else {
                m2
            }
        };
        for i in lo..=hi {
            h[(i, i)] -= mu;
        }
        let mut rots: Vec<(f64, C64)> = Vec::with_capacity(hi - lo);
        for k in lo..hi {
            let (c, s) = givens(h[(k, k)], h[(k + 1, k)]);
            for j in k..=hi {
                let x = h[(k, j)];
                let y = h[(k + 1, j)];
                h[(k, j)] = x * c + s * y;
                h[(k + 1, j)] = -s.conj() * x + y * c;
            }
            rots.push((c, s));
        }
        for (idx, k) in (lo..hi).enumerate() {
            let (c, s) = rots[idx];
            for i in lo..=(k + 1).min(hi) {
                let x = h[(i, k)];
                let y = h[(i, k + 1)];
                h[(i, k)] = x * c + y * s.conj();
                h[(i, k + 1)] = -x * s + y * c;
            }
        }
        for i in lo..=hi {
            h[(i, i)] += mu;
        }
    }
    Ok(out)
}

fn givens(a: C64, b: C64) -> (f64, C64) {
    let na = a.norm();
    let nb = b.norm();
    if nb == 0.0 {
        return (1.0, C64::new(0.0, 0.0));
    }
    if na == 0.0 {
        return (0.0, b.conj() / nb);
    }
    let rho = libm::hypot(na, nb);
    (na / rho, (a / na) * b.conj() / rho)
}

fn hessenberg_in_place(h: &mut DMatrix<C64>) {
    let n = h.nrows();
    for k in 0..n.saturating_sub(2) {
        let x: Vec<C64> = (k + 1..n).map(|i| h[(i, k)]).collect();
        let xn = libm::sqrt(x.iter().map(|z| z.norm_sqr()).sum::<f64>());
        if xn == 0.0 {
            continue;
        }
        let ph = if x[0].norm() > 0.0 { x[0] / x[0].norm() } else { C64::new(1.0, 0.0) };
        let mut v = x;
        v[0] += ph * xn;
        let vn2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if vn2 == 0.0 {
            continue;
        }
        for j in 0..n {
            let mut s = C64::new(0.0, 0.0);
            for (t, vi) in v.iter().enumerate() {
                s += vi.conj() * h[(k + 1 + t, j)];
            }
            let f = s * (2.0 / vn2);
            for (t, vi) in v.iter().enumerate() {
                h[(k + 1 + t, j)] -= vi * f;
            }
        }
        for i in 0..n {
            let mut s = C64::new(0.0, 0.0);
            for (t, vi) in v.iter().enumerate() {
                s += h[(i, k + 1 + t)] * vi;
            }
            let f = s * (2.0 / vn2);
            for (t, vi) in v.iter().enumerate() {
                h[(i, k + 1 + t)] -= f * vi.conj();
            }
        }
        for i in k + 2..n {
            h[(i, k)] = C64::new(0.0, 0.0);
        }
    }
}

/// Modified Gram–Schmidt with one reorthogonalization pass; vectors whose
/// remaining norm falls below `tol` times their original norm are dropped.
pub fn orthonormalize(vectors: &[DVector<C64>], tol: f64) -> Vec<DVector<C64>> {
    let mut basis: Vec<DVector<C64>> = Vec::new();
    for v in vectors {
        let original = v.norm();
        if original == 0.0 {
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dotc(&w);
                w -= q * c;
            }
        }
        let wn = w.norm();
        if wn > tol * original {
            basis.push(w / C64::new(wn, 0.0));
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_rotation_generator() {
        let t = 2.3;
        let a = DMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(-t, 0.0), C64::new(t, 0.0), C64::new(0.0, 0.0)]);
        let e = expm(&a).unwrap();
        assert!((e[(0, 0)].re - libm::cos(t)).abs() < 1e-13);
        assert!((e[(1, 0)].re - libm::sin(t)).abs() < 1e-13);
    }

    #[test]
    fn eigenvalues_of_companion_matrix() {
        // Roots 1, 2, 3, i.
        let roots = [C64::new(1.0, 0.0), C64::new(2.0, 0.0), C64::new(3.0, 0.0), C64::new(0.0, 1.0)];
        let mut coeffs = vec![C64::new(1.0, 0.0)];
        for r in roots {
            let mut next = vec![C64::new(0.0, 0.0); coeffs.len() + 1];
            for (i, c) in coeffs.iter().enumerate() {
                next[i] += c;
                next[i + 1] -= c * r;
            }
            coeffs = next;
        }
        let n = roots.len();
        let mut m = DMatrix::<C64>::zeros(n, n);
        for j in 0..n {
            m[(0, j)] = -coeffs[j + 1];
        }
        for i in 1..n {
            m[(i, i - 1)] = C64::new(1.0, 0.0);
        }
        let eig = eigenvalues(&m).unwrap();
        for r in roots {
            assert!(eig.iter().any(|e| (e - r).norm() < 1e-10), "{eig:?}");
        }
    }

    #[test]
    fn eigenvalues_of_random_matrix_preserve_trace_and_det() {
        let n = 30;
        let mut st = 11u64;
        let m = DMatrix::<C64>::from_fn(n, n, |_, _| {
            st = crate::rng::splitmix64(st);
            C64::new((st >> 40) as f64 / (1u64 << 24) as f64 - 0.5, (st & 0xfff) as f64 / 4096.0 - 0.5)
        });
        let eig = eigenvalues(&m).unwrap();
        let tr: C64 = eig.iter().sum();
        assert!((tr - m.trace()).norm() < 1e-10);
        let prod: C64 = eig.iter().product();
        let det = m.clone().lu().determinant();
        assert!((prod - det).norm() < 1e-8 * det.norm());
    }

    #[test]
    fn expm_of_scalar() {
        let z = C64::new(-3.0, 5.0);
        let e = expm(&DMatrix::from_element(1, 1, z)).unwrap();
        assert!((e[(0, 0)] - z.exp()).norm() < 1e-12 * z.exp().norm());
    }
}
