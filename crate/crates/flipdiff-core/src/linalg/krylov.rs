use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::{axpy, dotc, norm, zeros, LinearOperator};
use crate::C64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KrylovError {
    #[error("no convergence after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("dimension mismatch: operator {op}, vector {vec}")]
    Dimension { op: usize, vec: usize },
    #[error("shifted system is not dissipative (diagonal entry {0})")]
    NotDissipative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 2000, restart: 40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KrylovStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Complex Givens rotation `[c s; −s̄ c]` mapping `(a, b)` to `(r, 0)`.
fn givens(a: C64, b: C64) -> (f64, C64, C64) {
    let na = a.norm();
    let nb = b.norm();
    if nb == 0.0 {
        return (1.0, C64::new(0.0, 0.0), a);
    }
    if na == 0.0 {
        return (0.0, b.conj() / nb, C64::new(nb, 0.0));
    }
    let rho = libm::hypot(na, nb);
    let ph = a / na;
    (na / rho, ph * b.conj() / rho, ph * rho)
}

fn rotate(c: f64, s: C64, a: C64, b: C64) -> (C64, C64) {
    (a * c + s * b, -s.conj() * a + b * c)
}

/// Restarted flexible GMRES with right preconditioning. `x` holds the initial
/// guess and receives the solution.
pub fn fgmres(
    a: &dyn LinearOperator,
    precond: &mut dyn FnMut(&[C64], &mut [C64]),
    b: &[C64],
    x: &mut [C64],
    cfg: KrylovConfig,
) -> Result<KrylovStats, KrylovError> {
    let n = a.dim();
    if b.len() != n || x.len() != n {
        return Err(KrylovError::Dimension { op: n, vec: b.len() });
    }
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        return Ok(KrylovStats::default());
    }
    let m = cfg.restart.max(1);
    let mut total = 0;
    let mut r = zeros(n);
    let mut tmp = zeros(n);
    loop {
        a.apply(x, &mut tmp);
        for i in 0..n {
            r[i] = b[i] - tmp[i];
        }
        let beta = norm(&r);
        let rel = beta / bnorm;
        if rel <= cfg.tol {
            return Ok(KrylovStats { iterations: total, relative_residual: rel });
        }
        if total >= cfg.max_iter {
            return Err(KrylovError::NotConverged { iterations: total, residual: rel });
        }
        let mut v: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        let mut z: Vec<Vec<C64>> = Vec::with_capacity(m);
        v.push(r.iter().map(|e| e / beta).collect());
        let mut h = vec![vec![C64::new(0.0, 0.0); m]; m + 1];
        let mut rot: Vec<(f64, C64)> = Vec::with_capacity(m);
        let mut g = vec![C64::new(0.0, 0.0); m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k = 0;
        while k < m && total < cfg.max_iter {
            let mut zk = zeros(n);
            precond(&v[k], &mut zk);
            let mut w = zeros(n);
            a.apply(&zk, &mut w);
            z.push(zk);
            for _pass in 0..2 {
                for i in 0..=k {
                    let hij = dotc(&v[i], &w);
                    h[i][k] += hij;
                    axpy(-hij, &v[i], &mut w);
                }
            }
            let wn = norm(&w);
            h[k + 1][k] = C64::new(wn, 0.0);
            for i in 0..k {
                let (c, s) = rot[i];
                let (p, q) = rotate(c, s, h[i][k], h[i + 1][k]);
                h[i][k] = p;
                h[i + 1][k] = q;
            }
            let (c, s, rr) = givens(h[k][k], h[k + 1][k]);
            h[k][k] = rr;
            h[k + 1][k] = C64::new(0.0, 0.0);
            rot.push((c, s));
            let (p, q) = rotate(c, s, g[k], g[k + 1]);
            g[k] = p;
            g[k + 1] = q;
            total += 1;
            k += 1;
            if g[k].norm() / bnorm <= cfg.tol * 0.5 || wn == 0.0 {
                break;
            }
            v.push(w.iter().map(|e| e / wn).collect());
        }
        let mut y = vec![C64::new(0.0, 0.0); k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            axpy(*yj, &z[j], x);
        }
    }
}

/// Solves `(D + iH) x = b` for a positive diagonal `D` and Hermitian `H` via
/// Lanczos-based residual minimization on the symmetrically scaled system
/// `I + i D^{-1/2} H D^{-1/2}`, with iterative refinement against the true residual.
pub fn shifted_minres(
    diag: &[f64],
    h: &dyn LinearOperator,
    b: &[C64],
    cfg: KrylovConfig,
) -> Result<(Vec<C64>, KrylovStats), KrylovError> {
    let n = h.dim();
    if diag.len() != n || b.len() != n {
        return Err(KrylovError::Dimension { op: n, vec: b.len() });
    }
    if let Some(&d) = diag.iter().find(|&&d| !(d > 0.0)) {
        return Err(KrylovError::NotDissipative(d));
    }
    let s: Vec<f64> = diag.iter().map(|d| 1.0 / libm::sqrt(*d)).collect();
    let rhs: Vec<C64> = b.iter().zip(&s).map(|(v, si)| v * si).collect();
    let rnorm0 = norm(&rhs);
    let mut y = zeros(n);
    if rnorm0 == 0.0 {
        return Ok((y, KrylovStats::default()));
    }
    let scaled = Scaled { h, s: &s, buf: core::cell::RefCell::new(zeros(n)) };
    let mut total = 0;
    let mut r = rhs.clone();
    let mut tmp = zeros(n);
    for _round in 0..6 {
        let rn = norm(&r);
        let rel = rn / rnorm0;
        if rel <= cfg.tol {
            let x = y.iter().zip(&s).map(|(v, si)| v * si).collect();
            return Ok((x, KrylovStats { iterations: total, relative_residual: rel }));
        }
        let budget = cfg.max_iter.saturating_sub(total);
        if budget == 0 {
            return Err(KrylovError::NotConverged { iterations: total, residual: rel });
        }
        let (dy, its) = minres_core(&scaled, &r, cfg.tol * rnorm0 / rn * 0.5, budget);
        total += its;
        axpy(C64::new(1.0, 0.0), &dy, &mut y);
        scaled.apply(&y, &mut tmp);
        for i in 0..n {
            r[i] = rhs[i] - (y[i] + crate::I * tmp[i]);
        }
    }
    let rel = norm(&r) / rnorm0;
    if rel <= cfg.tol {
        let x = y.iter().zip(&s).map(|(v, si)| v * si).collect();
        return Ok((x, KrylovStats { iterations: total, relative_residual: rel }));
    }
    Err(KrylovError::NotConverged { iterations: total, residual: rel })
}

struct Scaled<'a> {
    h: &'a dyn LinearOperator,
    s: &'a [f64],
    buf: core::cell::RefCell<Vec<C64>>,
}

impl LinearOperator for Scaled<'_> {
    fn dim(&self) -> usize {
        self.h.dim()
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        let mut buf = self.buf.borrow_mut();
        for i in 0..x.len() {
            buf[i] = x[i] * self.s[i];
        }
        self.h.apply(&buf, y);
        for i in 0..x.len() {
            y[i] *= self.s[i];
        }
    }
}

/// MINRES for `(I + iA) y = r`, `A` Hermitian, from `y = 0`.
fn minres_core(a: &dyn LinearOperator, r: &[C64], rel_tol: f64, max_iter: usize) -> (Vec<C64>, usize) {
    let n = a.dim();
    let beta1 = norm(r);
    let mut y = zeros(n);
    let mut v_prev = zeros(n);
    let mut v: Vec<C64> = r.iter().map(|e| e / beta1).collect();
    let mut w_prev2 = zeros(n);
    let mut w_prev = zeros(n);
    let mut beta = 0.0;
    let mut rot_prev2: Option<(f64, C64)> = None;
    let mut rot_prev: Option<(f64, C64)> = None;
    let mut g = C64::new(beta1, 0.0);
    let mut wv = zeros(n);
    let mut its = 0;
    while its < max_iter {
        a.apply(&v, &mut wv);
        for i in 0..n {
            wv[i] -= v_prev[i] * beta;
        }
        let alpha = dotc(&v, &wv).re;
        for i in 0..n {
            wv[i] -= v[i] * alpha;
        }
        let beta_next = norm(&wv);
        // Column of I + iT̄: super (iβ), diagonal (1 + iα), sub (iβ_next).
        let mut top = C64::new(0.0, 0.0);
        let mut mid = C64::new(0.0, beta);
        let mut diag = C64::new(1.0, alpha);
        if let Some((c, s)) = rot_prev2 {
            let (p, q) = rotate(c, s, top, mid);
            top = p;
            mid = q;
        }
        if let Some((c, s)) = rot_prev {
            let (p, q) = rotate(c, s, mid, diag);
            mid = p;
            diag = q;
        }
        let (c, s, rr) = givens(diag, C64::new(0.0, beta_next));
        let phi = g * c;
        g = -s.conj() * g;
        let mut w = zeros(n);
        for i in 0..n {
            w[i] = (v[i] - top * w_prev2[i] - mid * w_prev[i]) / rr;
            y[i] += phi * w[i];
        }
        its += 1;
        if g.norm() <= rel_tol * beta1 || beta_next == 0.0 {
            break;
        }
        w_prev2 = core::mem::replace(&mut w_prev, w);
        rot_prev2 = rot_prev;
        rot_prev = Some((c, s));
        let inv = 1.0 / beta_next;
        for i in 0..n {
            let nv = wv[i] * inv;
            v_prev[i] = v[i];
            v[i] = nv;
        }
        beta = beta_next;
    }
    (y, its)
}

/// A Ritz approximation of an eigenpair.
#[derive(Debug, Clone)]
pub struct RitzPair {
    pub value: C64,
    pub vector: Vec<C64>,
    /// `‖A v − θ v‖` for the unit Ritz vector.
    pub residual: f64,
}

/// `m`-step Arnoldi with full reorthogonalization from `start`; returns Ritz pairs
/// sorted by decreasing modulus.
pub fn arnoldi_eigs(a: &dyn LinearOperator, start: &[C64], m: usize) -> Vec<RitzPair> {
    let n = a.dim();
    let m = m.min(n).max(1);
    let mut v: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
    let s0 = norm(start);
    v.push(start.iter().map(|e| e / s0).collect());
    let mut h = DMatrix::<C64>::zeros(m + 1, m);
    let mut steps = m;
    for k in 0..m {
        let mut w = zeros(n);
        a.apply(&v[k], &mut w);
        for _pass in 0..2 {
            for i in 0..=k {
                let hij = dotc(&v[i], &w);
                h[(i, k)] += hij;
                axpy(-hij, &v[i], &mut w);
            }
        }
        let wn = norm(&w);
        h[(k + 1, k)] = C64::new(wn, 0.0);
        if wn <= 1e-14 * h.column(k).norm() {
            steps = k + 1;
            break;
        }
        v.push(w.iter().map(|e| e / wn).collect());
    }
    let hm = h.view((0, 0), (steps, steps)).into_owned();
    let eig = match super::eigenvalues(&hm) {
        Ok(e) => e,
        Err(_) => return Vec::new(),
    };
    let mut pairs: Vec<RitzPair> = eig
        .iter()
        .map(|&theta| {
            let y = small_eigenvector(&hm, theta);
            let mut vec = zeros(n);
            for (j, yj) in y.iter().enumerate() {
                axpy(*yj, &v[j], &mut vec);
            }
            let vn = norm(&vec);
            vec.iter_mut().for_each(|e| *e /= vn);
            let mut av = zeros(n);
            a.apply(&vec, &mut av);
            axpy(-theta, &vec, &mut av);
            RitzPair { value: theta, vector: vec, residual: norm(&av) }
        })
        .collect();
    pairs.sort_by(|p, q| q.value.norm().total_cmp(&p.value.norm()));
    pairs
}

fn small_eigenvector(h: &DMatrix<C64>, theta: C64) -> DVector<C64> {
    let k = h.nrows();
    let shift = theta + C64::new(1e-13, 1e-13) * (1.0 + theta.norm());
    let mut m = h.clone();
    for i in 0..k {
        m[(i, i)] -= shift;
    }
    let lu = m.lu();
    let mut y = DVector::from_fn(k, |i, _| C64::new(1.0 + 0.1 * i as f64, 0.3));
    for _ in 0..3 {
        if let Some(sol) = lu.solve(&y) {
            let nn = sol.norm();
            if nn > 0.0 && nn.is_finite() {
                y = sol / C64::new(nn, 0.0);
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CsrBuilder;

    fn random_hermitian(n: usize, seed: u64) -> crate::linalg::Csr {
        let mut state = seed;
        let mut next = || {
            state = crate::rng::splitmix64(state);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut dense = DMatrix::<C64>::zeros(n, n);
        for i in 0..n {
            dense[(i, i)] = C64::new(2.0 * next(), 0.0);
            for j in i + 1..(i + 4).min(n) {
                let v = C64::new(next(), next());
                dense[(i, j)] = v;
                dense[(j, i)] = v.conj();
            }
        }
        let mut b = CsrBuilder::new(n);
        for i in 0..n {
            for j in 0..n {
                if dense[(i, j)] != C64::new(0.0, 0.0) {
                    b.push(j, dense[(i, j)]);
                }
            }
            b.finish_row();
        }
        b.build()
    }

    #[test]
    fn minres_matches_dense_solve() {
        let n = 120;
        let h = random_hermitian(n, 3);
        let diag: Vec<f64> = (0..n).map(|i| 0.5 + (i % 3) as f64).collect();
        let b: Vec<C64> = (0..n).map(|i| C64::new((i as f64).sin(), 0.2)).collect();
        let (x, stats) = shifted_minres(&diag, &h, &b, KrylovConfig { tol: 1e-12, ..Default::default() }).unwrap();
        let mut dense = h.to_dense() * crate::I;
        for i in 0..n {
            dense[(i, i)] += diag[i];
        }
        let exact = dense.lu().solve(&DVector::from_vec(b.clone())).unwrap();
        let err: f64 = x.iter().zip(exact.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "err {err} stats {stats:?}");
    }

    #[test]
    fn fgmres_nonsymmetric() {
        let n = 80;
        let h = random_hermitian(n, 9);
        let mut dense = h.to_dense();
        for i in 0..n {
            dense[(i, i)] += C64::new(3.0, 0.5);
            if i + 1 < n {
                dense[(i, i + 1)] += C64::new(0.7, 0.0);
            }
        }
        let mut bld = CsrBuilder::new(n);
        for i in 0..n {
            for j in 0..n {
                if dense[(i, j)] != C64::new(0.0, 0.0) {
                    bld.push(j, dense[(i, j)]);
                }
            }
            bld.finish_row();
        }
        let a = bld.build();
        let b: Vec<C64> = (0..n).map(|i| C64::new(1.0, i as f64 * 0.01)).collect();
        let mut x = zeros(n);
        let cfg = KrylovConfig { tol: 1e-12, max_iter: 500, restart: 15 };
        let stats = fgmres(&a, &mut |r, z| z.copy_from_slice(r), &b, &mut x, cfg).unwrap();
        assert!(stats.relative_residual <= 1e-12);
        let exact = dense.lu().solve(&DVector::from_vec(b)).unwrap();
        let err: f64 = x.iter().zip(exact.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9);
    }

    #[test]
    fn arnoldi_finds_dominant_eigenvalues() {
        let n = 60;
        let mut b = CsrBuilder::new(n);
        for i in 0..n {
            b.push(i, C64::new(1.0 / (1.0 + i as f64), 0.01 * i as f64));
            if i + 1 < n {
                b.push(i + 1, C64::new(0.01, 0.0));
            }
            b.finish_row();
        }
        let a = b.build();
        let start: Vec<C64> = (0..n).map(|i| C64::new(1.0, (i as f64).cos())).collect();
        let pairs = arnoldi_eigs(&a, &start, 40);
        assert!((pairs[0].value - C64::new(1.0, 0.0)).norm() < 1e-6, "{:?}", pairs[0].value);
        assert!(pairs[0].residual < 1e-6);
    }
}
