use alloc::vec::Vec;
use core::fmt::Write;

use super::LinearOperator;
use crate::C64;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<C64>,
}

/// Row-by-row assembly; duplicate columns within a row are summed and exact
/// zeros dropped.
pub struct CsrBuilder {
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<C64>,
    scratch: Vec<(u32, C64)>,
}

impl CsrBuilder {
    pub fn new(ncols: usize) -> Self {
        Self { ncols, row_ptr: alloc::vec![0], cols: Vec::new(), vals: Vec::new(), scratch: Vec::new() }
    }

    pub fn with_capacity(ncols: usize, rows: usize, nnz: usize) -> Self {
        let mut b = Self::new(ncols);
        b.row_ptr.reserve(rows);
        b.cols.reserve(nnz);
        b.vals.reserve(nnz);
        b
    }

    pub fn push(&mut self, col: usize, val: C64) {
        self.scratch.push((col as u32, val));
    }

    pub fn finish_row(&mut self) {
        self.scratch.sort_unstable_by_key(|e| e.0);
        let mut i = 0;
        while i < self.scratch.len() {
            let c = self.scratch[i].0;
            let mut v = C64::new(0.0, 0.0);
            while i < self.scratch.len() && self.scratch[i].0 == c {
                v += self.scratch[i].1;
                i += 1;
            }
            if v != C64::new(0.0, 0.0) {
                self.cols.push(c);
                self.vals.push(v);
            }
        }
        self.scratch.clear();
        self.row_ptr.push(self.cols.len());
    }

    pub fn build(self) -> Csr {
        Csr { nrows: self.row_ptr.len() - 1, ncols: self.ncols, row_ptr: self.row_ptr, cols: self.cols, vals: self.vals }
    }
}

impl Csr {
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().zip(&self.vals[span]).map(|(&c, &v)| (c as usize, v))
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        for (r, yr) in y.iter_mut().enumerate().take(self.nrows) {
            let mut s = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[k] * x[self.cols[k] as usize];
            }
            *yr = s;
        }
    }

    /// `y += alpha A x`.
    pub fn matvec_add(&self, alpha: C64, x: &[C64], y: &mut [C64]) {
        for (r, yr) in y.iter_mut().enumerate().take(self.nrows) {
            let mut s = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[k] * x[self.cols[k] as usize];
            }
            *yr += alpha * s;
        }
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[span.clone()].binary_search(&(c as u32)) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn adjoint(&self) -> Csr {
        let mut counts = alloc::vec![0usize; self.ncols + 1];
        for &c in &self.cols {
            counts[c as usize + 1] += 1;
        }
        for i in 0..self.ncols {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = alloc::vec![0u32; self.nnz()];
        let mut vals = alloc::vec![C64::new(0.0, 0.0); self.nnz()];
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[k] as usize;
                let dst = next[c];
                next[c] += 1;
                cols[dst] = r as u32;
                vals[dst] = self.vals[k].conj();
            }
        }
        Csr { nrows: self.ncols, ncols: self.nrows, row_ptr: counts, cols, vals }
    }

    /// Largest entrywise deviation from Hermitian symmetry.
    pub fn hermitian_defect(&self) -> f64 {
        let adj = self.adjoint();
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - adj.get(r, c)).norm());
            }
            for (c, v) in adj.row(r) {
                worst = worst.max((v - self.get(r, c)).norm());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<C64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    /// Coordinate-triplet text: one `row,col,re,im` line per stored entry.
    pub fn write_triplets(&self, out: &mut impl Write) -> core::fmt::Result {
        writeln!(out, "row,col,re,im")?;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                writeln!(out, "{},{},{},{}", r, c, v.re, v.im)?;
            }
        }
        Ok(())
    }
}

impl LinearOperator for Csr {
    fn dim(&self) -> usize {
        self.nrows
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.matvec(x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_merges_and_adjoint() {
        let mut b = CsrBuilder::new(3);
        b.push(2, C64::new(1.0, 1.0));
        b.push(0, C64::new(2.0, 0.0));
        b.push(2, C64::new(1.0, -1.0));
        b.finish_row();
        b.push(1, C64::new(1.0, 0.0));
        b.push(1, C64::new(-1.0, 0.0));
        b.finish_row();
        let m = b.build();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 2), C64::new(2.0, 0.0));
        let a = m.adjoint();
        assert_eq!(a.nrows, 3);
        assert_eq!(a.get(2, 0), C64::new(2.0, 0.0));
        let mut s = alloc::string::String::new();
        m.write_triplets(&mut s).unwrap();
        assert_eq!(s, "row,col,re,im\n0,0,2,0\n0,2,2,0\n");
    }
}
