//! Monte Carlo propagation of the flip-noise Schrödinger equation, ensemble
//! statistics, moment fits and characteristic-function diagnostics.
//!
//! Between flips the Hamiltonian is constant and `e^{−iHΔt}ψ` is applied by a
//! Chebyshev expansion. Amplitudes live on an adaptive bounding box; flips at
//! sites the wave cannot reach within one step only toggle the stored sign.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::lattice::{HoppingKernel, PeriodicPotential};
use crate::markov::{sample_flip_schedule, FlipParams, MarkovError};
use crate::rng::derive_seed;
use crate::{par, C64};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulateError {
    #[error("Chebyshev expansion needs more than {cap} terms")]
    ToleranceNotReached { cap: usize },
    #[error("mass {mass:e} within the guard band exceeds tolerance {tolerance:e}")]
    BoxLeakage { mass: f64, tolerance: f64 },
    #[error("norm drifted by {drift:e} over one step")]
    NormDrift { drift: f64 },
    #[error("fit window holds {points} sample times, at least 4 are needed")]
    WindowTooShort { points: usize },
    #[error("horizon {horizon} is shorter than {required}")]
    HorizonTooShort { horizon: f64, required: f64 },
    #[error("box half-width {given} is below the required {required}")]
    BoxTooSmall { given: usize, required: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

/// On-site term of the noiseless Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Periodic(PeriodicPotential),
    /// `2g cos 2π(θ + xα)` on a one-dimensional lattice.
    AlmostMathieu { coupling: f64, phase: f64, frequency: f64 },
}

impl Model {
    pub fn value(&self, x: &[i64]) -> f64 {
        match self {
            Model::Periodic(u) => u.value_at(x),
            Model::AlmostMathieu { coupling, phase, frequency } => {
                2.0 * coupling * libm::cos(2.0 * core::f64::consts::PI * (phase + x[0] as f64 * frequency))
            }
        }
    }

    /// The model seen from `x0`: `value(x)` of the result is `value(x + x0)` of `self`.
    pub fn translated(&self, x0: &[i64]) -> Model {
        match self {
            Model::Periodic(u) => {
                let values = (0..u.cell_count())
                    .map(|c| {
                        let y: Vec<i64> = u.cell_coords(c).iter().zip(x0).map(|(a, b)| a + b).collect();
                        u.value_at(&y)
                    })
                    .collect();
                Model::Periodic(PeriodicPotential::new(u.period().to_vec(), values).expect("same period"))
            }
            Model::AlmostMathieu { coupling, phase, frequency } => {
                Model::AlmostMathieu { coupling: *coupling, phase: phase + x0[0] as f64 * frequency, frequency: *frequency }
            }
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match self {
            Model::Periodic(u) => (u.min(), u.max()),
            Model::AlmostMathieu { coupling, .. } => (-2.0 * coupling.abs(), 2.0 * coupling.abs()),
        }
    }
}

/// Spatial domain: a Dirichlet box `[−L, L]^d` or a periodic torus `Π [0, n_j)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Box { half_width: usize },
    Torus { size: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub hopping: HoppingKernel,
    pub model: Model,
    pub lambda: f64,
    pub rate: f64,
    pub domain: Domain,
    pub horizon: f64,
    /// Increasing, within `[0, horizon]`.
    pub sample_times: Vec<f64>,
    pub trajectories: usize,
    pub seed: u64,
    /// Chebyshev coefficient cutoff.
    pub tolerance: f64,
    pub initial: Vec<(Vec<i64>, C64)>,
    pub record_density: bool,
    /// Wave vectors for `Σ e^{ik·x/√t} |ψ_t(x)|²`, evaluated at every positive sample time.
    pub char_grid: Vec<Vec<f64>>,
    pub blocks: usize,
    /// Relative guard-band mass above which a run is rejected.
    pub leakage_tol: f64,
}

/// Guard band width in sites.
pub const GUARD: usize = 10;

/// `ceil(v_max·horizon) + 10`.
pub fn required_half_width(h: &HoppingKernel, horizon: f64) -> usize {
    libm::ceil(h.max_speed() * horizon) as usize + GUARD
}

impl EnsembleConfig {
    /// Box run from `δ₀`, with twice the guard band beyond the smallest admissible box.
    pub fn periodic(h: HoppingKernel, u: PeriodicPotential, lambda: f64, rate: f64, horizon: f64) -> Self {
        let dim = h.dim();
        let half_width = required_half_width(&h, horizon) + 2 * GUARD;
        Self {
            hopping: h,
            model: Model::Periodic(u),
            lambda,
            rate,
            domain: Domain::Box { half_width },
            horizon,
            sample_times: vec![horizon],
            trajectories: 1000,
            seed: 0,
            tolerance: 1e-13,
            initial: vec![(vec![0; dim], C64::new(1.0, 0.0))],
            record_density: false,
            char_grid: Vec::new(),
            blocks: 100,
            leakage_tol: 1e-6,
        }
    }

    /// One-dimensional nearest-neighbour run with the almost-Mathieu on-site term.
    pub fn almost_mathieu(coupling: f64, phase: f64, frequency: f64, lambda: f64, rate: f64, horizon: f64) -> Self {
        let mut cfg = Self::periodic(HoppingKernel::nearest_neighbor(1), PeriodicPotential::zero(1), lambda, rate, horizon);
        cfg.model = Model::AlmostMathieu { coupling, phase, frequency };
        cfg
    }

    pub fn dim(&self) -> usize {
        self.hopping.dim()
    }

    pub fn validate(&self) -> Result<(), SimulateError> {
        let d = self.dim();
        if d == 0 || self.hopping.entries().is_empty() {
            return Err(SimulateError::InvalidConfig("hopping kernel is empty"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(SimulateError::InvalidConfig("coupling must be finite and nonnegative"));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(SimulateError::InvalidConfig("flip rate must be positive"));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(SimulateError::InvalidConfig("horizon must be finite and nonnegative"));
        }
        if self.sample_times.is_empty() {
            return Err(SimulateError::InvalidConfig("no sample times"));
        }
        if self.sample_times.windows(2).any(|w| w[1] <= w[0])
            || self.sample_times.iter().any(|&t| !(0.0..=self.horizon).contains(&t))
        {
            return Err(SimulateError::InvalidConfig("sample times must increase within [0, horizon]"));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(SimulateError::InvalidConfig("tolerance must lie in (0, 1)"));
        }
        if self.char_grid.iter().any(|k| k.len() != d) {
            return Err(SimulateError::InvalidConfig("wave vector dimension differs from lattice"));
        }
        match &self.model {
            Model::Periodic(u) if u.dim() != d => {
                return Err(SimulateError::InvalidConfig("potential dimension differs from lattice"))
            }
            Model::AlmostMathieu { .. } if d != 1 => {
                return Err(SimulateError::InvalidConfig("almost-Mathieu model is one-dimensional"))
            }
            _ => {}
        }
        match &self.domain {
            Domain::Box { half_width } => {
                let required = required_half_width(&self.hopping, self.horizon);
                if *half_width < required {
                    return Err(SimulateError::BoxTooSmall { given: *half_width, required });
                }
                if self.initial.iter().any(|(x, _)| x.len() != d || x.iter().any(|c| c.unsigned_abs() as usize > *half_width)) {
                    return Err(SimulateError::InvalidConfig("initial state leaves the box"));
                }
            }
            Domain::Torus { size } => {
                if size.len() != d || size.iter().any(|&n| n == 0) {
                    return Err(SimulateError::InvalidConfig("torus size does not match dimension"));
                }
                if let Model::Periodic(u) = &self.model {
                    if size.iter().zip(u.period()).any(|(n, p)| n % p != 0) {
                        return Err(SimulateError::InvalidConfig("torus size must be a multiple of the period"));
                    }
                }
                if self.initial.iter().any(|(x, _)| x.len() != d || x.iter().zip(size).any(|(&c, &n)| c < 0 || c as usize >= n)) {
                    return Err(SimulateError::InvalidConfig("initial state leaves the torus"));
                }
            }
        }
        let norm: f64 = self.initial.iter().map(|(_, a)| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(SimulateError::InvalidConfig("initial state is not normalized"));
        }
        Ok(())
    }
}

/// Amplitudes on `[−L, L]^d`, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub half_width: usize,
    pub dim: usize,
    pub amplitudes: Vec<C64>,
    pub time: f64,
}

impl WaveState {
    pub fn delta(dim: usize, half_width: usize, site: &[i64]) -> Self {
        let mut s = Self { half_width, dim, amplitudes: vec![C64::new(0.0, 0.0); (2 * half_width + 1).pow(dim as u32)], time: 0.0 };
        let idx = s.index(site).expect("site inside box");
        s.amplitudes[idx] = C64::new(1.0, 0.0);
        s
    }

    pub fn index(&self, site: &[i64]) -> Option<usize> {
        let w = 2 * self.half_width + 1;
        let mut idx = 0;
        for &c in site {
            let p = c + self.half_width as i64;
            if p < 0 || p as usize >= w {
                return None;
            }
            idx = idx * w + p as usize;
        }
        Some(idx)
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.amplitudes.iter().map(|a| a.norm_sqr()).sum())
    }
}

/// `exp(−iHΔt)ψ` for `H = H₀ + diag(potential)` on the box of `state`, with
/// `potential` in the same site order as the amplitudes.
pub fn propagate_constant(
    state: &WaveState,
    h: &HoppingKernel,
    potential: &[f64],
    dt: f64,
    tol: f64,
) -> Result<WaveState, SimulateError> {
    if !(dt >= 0.0) {
        return Err(SimulateError::InvalidConfig("negative time step"));
    }
    if potential.len() != state.amplitudes.len() || h.dim() != state.dim {
        return Err(SimulateError::InvalidConfig("potential does not match the state"));
    }
    let lo = potential.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = potential.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let geo = Geometry::boxed(state.dim, state.half_width, h.range() as usize);
    let engine = Engine::new(geo, h, |_, i| potential[i], (lo, hi), 0.0, tol, usize::MAX / 2);
    let mut ws = engine.workspace();
    for (i, &a) in state.amplitudes.iter().enumerate() {
        let s = engine.geo.sites[i];
        ws.psi.re[s] = a.re;
        ws.psi.im[s] = a.im;
    }
    ws.win_lo = engine.geo.lo.clone();
    ws.win_hi = engine.geo.hi.clone();
    engine.trim(&mut ws);
    let before = engine.norm_sqr(&ws);
    let after = engine.step(&mut ws, dt)?;
    check_drift(before, after)?;
    let amplitudes = engine.geo.sites.iter().map(|&s| C64::new(ws.psi.re[s], ws.psi.im[s])).collect();
    Ok(WaveState { half_width: state.half_width, dim: state.dim, amplitudes, time: state.time + dt })
}

fn check_drift(before: f64, after: f64) -> Result<(), SimulateError> {
    let drift = (libm::sqrt(after) - libm::sqrt(before)).abs();
    if drift > 1e-10 || !drift.is_finite() {
        return Err(SimulateError::NormDrift { drift });
    }
    Ok(())
}

/// `(2 − δ_{n0}) J_n(x)` up to the first index past `x` whose term drops below
/// `tol`, from Miller's backward recurrence normalized by `J₀ + 2ΣJ_{2k} = 1`.
fn chebyshev_coefficients(x: f64, tol: f64, cap: usize, work: &mut Vec<f64>, out: &mut Vec<f64>) -> Result<(), SimulateError> {
    out.clear();
    if x == 0.0 {
        out.push(1.0);
        return Ok(());
    }
    let top = (x + 10.0 * libm::cbrt(x) + 25.0) as usize;
    let inv = 2.0 / x;
    work.clear();
    work.resize(top + 2, 0.0);
    work[top] = 1e-300;
    for n in (1..=top).rev() {
        work[n - 1] = n as f64 * inv * work[n] - work[n + 1];
        if work[n - 1].abs() > 1e250 {
            for v in work[n - 1..].iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let norm = work[0] + 2.0 * work.iter().skip(2).step_by(2).sum::<f64>();
    for n in 0..=top {
        let c = if n == 0 { 1.0 } else { 2.0 } * work[n] / norm;
        if n as f64 > x && c.abs() < tol {
            return Ok(());
        }
        if n >= cap {
            return Err(SimulateError::ToleranceNotReached { cap });
        }
        out.push(c);
    }
    Err(SimulateError::ToleranceNotReached { cap: top })
}

/// Storage layout: a padded box (zero-filled border of hopping range) or a torus.
#[derive(Debug, Clone)]
struct Geometry {
    dim: usize,
    ext: Vec<usize>,
    strides: Vec<usize>,
    /// Physical storage range per axis (inclusive).
    lo: Vec<usize>,
    hi: Vec<usize>,
    /// Coordinate of storage position 0 per axis.
    coord0: Vec<i64>,
    torus: bool,
    reach: usize,
    /// Storage index of each physical site, in lexicographic coordinate order.
    sites: Vec<usize>,
    coords: Vec<Vec<i64>>,
}

impl Geometry {
    fn boxed(dim: usize, half_width: usize, reach: usize) -> Self {
        let w = 2 * half_width + 1;
        let ext = vec![w + 2 * reach; dim];
        let lo = vec![reach; dim];
        let hi = vec![reach + w - 1; dim];
        let coord0 = vec![-(half_width as i64) - reach as i64; dim];
        Self::finish(dim, ext, lo, hi, coord0, false, reach)
    }

    fn torus(size: &[usize], reach: usize) -> Self {
        let dim = size.len();
        let hi = size.iter().map(|n| n - 1).collect();
        Self::finish(dim, size.to_vec(), vec![0; dim], hi, vec![0; dim], true, reach)
    }

    fn finish(dim: usize, ext: Vec<usize>, lo: Vec<usize>, hi: Vec<usize>, coord0: Vec<i64>, torus: bool, reach: usize) -> Self {
        let mut strides = vec![1usize; dim];
        for j in (0..dim.saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * ext[j + 1];
        }
        let mut sites = Vec::new();
        let mut coords = Vec::new();
        for_each_row(&lo, &hi, |pos, start| {
            for off in 0..=(hi[dim - 1] - lo[dim - 1]) {
                coords.push(
                    pos.iter()
                        .enumerate()
                        .map(|(j, &q)| (q + if j == dim - 1 { off } else { 0 }) as i64 + coord0[j])
                        .collect(),
                );
                sites.push(start + off);
            }
        }, &strides);
        Self { dim, ext, strides, lo, hi, coord0, torus, reach, sites, coords }
    }

    fn len(&self) -> usize {
        self.ext.iter().product()
    }

    fn storage(&self, x: &[i64]) -> usize {
        x.iter()
            .enumerate()
            .map(|(j, &c)| {
                let p = if self.torus { c.rem_euclid(self.ext[j] as i64) } else { c - self.coord0[j] };
                p as usize * self.strides[j]
            })
            .sum()
    }

    fn position(&self, mut idx: usize, out: &mut [usize]) {
        for j in 0..self.dim {
            out[j] = idx / self.strides[j];
            idx %= self.strides[j];
        }
    }

    /// Coordinate along `axis` used by moments; minimal image on a torus.
    fn coordinate(&self, axis: usize, p: usize) -> f64 {
        let c = p as i64 + self.coord0[axis];
        if self.torus {
            let n = self.ext[axis] as i64;
            let m = c.rem_euclid(n);
            (if 2 * m > n { m - n } else { m }) as f64
        } else {
            c as f64
        }
    }
}

/// Calls `f(position, storage index)` at the first point of every last-axis row of the box.
fn for_each_row(lo: &[usize], hi: &[usize], mut f: impl FnMut(&[usize], usize), strides: &[usize]) {
    let d = lo.len();
    let mut pos = lo.to_vec();
    loop {
        let start: usize = pos.iter().zip(strides).map(|(p, s)| p * s).sum();
        f(&pos, start);
        let mut j = d.wrapping_sub(2);
        loop {
            if j == usize::MAX {
                return;
            }
            if pos[j] < hi[j] {
                pos[j] += 1;
                break;
            }
            pos[j] = lo[j];
            j = j.wrapping_sub(1);
        }
    }
}

#[derive(Debug, Clone)]
struct Field {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Field {
    fn zeros(n: usize) -> Self {
        Self { re: vec![0.0; n], im: vec![0.0; n] }
    }
}

struct Workspace {
    psi: Field,
    a: Field,
    b: Field,
    acc: Field,
    /// `(V(x) − c)/a` per storage index.
    diag: Vec<f64>,
    win_lo: Vec<usize>,
    win_hi: Vec<usize>,
    reg_lo: Vec<usize>,
    reg_hi: Vec<usize>,
    pos: Vec<usize>,
    row: Field,
    coeffs: Vec<f64>,
    bessel: Vec<f64>,
}

struct Engine {
    geo: Geometry,
    offsets: Vec<isize>,
    hop_re: Vec<f64>,
    hop_im: Vec<f64>,
    real: bool,
    neighbors: Vec<u32>,
    /// Unscaled static potential per storage index.
    base: Vec<f64>,
    center: f64,
    scale: f64,
    tol: f64,
    cap: usize,
    trim: f64,
}

impl Engine {
    fn new(
        geo: Geometry,
        h: &HoppingKernel,
        potential: impl Fn(&[i64], usize) -> f64,
        bounds: (f64, f64),
        lambda: f64,
        tol: f64,
        cap: usize,
    ) -> Self {
        let center = 0.5 * (bounds.0 + bounds.1);
        let scale = (h.l1_norm() + 0.5 * (bounds.1 - bounds.0) + lambda).max(1e-12);
        let mut base = vec![0.0; geo.len()];
        for (i, (&s, x)) in geo.sites.iter().zip(&geo.coords).enumerate() {
            base[s] = potential(x, i);
        }
        let offsets: Vec<isize> = h
            .entries()
            .iter()
            .map(|(xi, _)| xi.iter().zip(&geo.strides).map(|(&c, &s)| c as isize * s as isize).sum())
            .collect();
        let hop_re = h.entries().iter().map(|(_, v)| v.re / scale).collect();
        let hop_im = h.entries().iter().map(|(_, v)| v.im / scale).collect();
        let mut neighbors = Vec::new();
        if geo.torus {
            let nh = h.entries().len();
            neighbors = vec![0u32; geo.len() * nh];
            for (&s, x) in geo.sites.iter().zip(&geo.coords) {
                for (e, (xi, _)) in h.entries().iter().enumerate() {
                    let src: Vec<i64> = x.iter().zip(xi).map(|(a, b)| a - b).collect();
                    neighbors[s * nh + e] = geo.storage(&src) as u32;
                }
            }
        }
        Self {
            geo,
            offsets,
            hop_re,
            hop_im,
            real: h.is_real(),
            neighbors,
            base,
            center,
            scale,
            tol,
            cap,
            trim: 1e-16,
        }
    }

    fn workspace(&self) -> Workspace {
        let n = self.geo.len();
        let d = self.geo.dim;
        let diag = self.base.iter().map(|&u| (u - self.center) / self.scale).collect();
        Workspace {
            psi: Field::zeros(n),
            a: Field::zeros(n),
            b: Field::zeros(n),
            acc: Field::zeros(n),
            diag,
            win_lo: self.geo.lo.clone(),
            win_hi: self.geo.lo.clone(),
            reg_lo: vec![0; d],
            reg_hi: vec![0; d],
            pos: vec![0; d],
            row: Field::zeros(self.geo.ext[d - 1]),
            coeffs: Vec::new(),
            bessel: Vec::new(),
        }
    }

    fn set_region(&self, ws: &mut Workspace, by: usize) {
        for j in 0..self.geo.dim {
            if self.geo.torus {
                ws.reg_lo[j] = self.geo.lo[j];
                ws.reg_hi[j] = self.geo.hi[j];
            } else {
                ws.reg_lo[j] = ws.win_lo[j].saturating_sub(by).max(self.geo.lo[j]);
                ws.reg_hi[j] = (ws.win_hi[j] + by).min(self.geo.hi[j]);
            }
        }
    }

    /// `(tr, ti) = H̃ inp` on the row `start..start + width`.
    fn hamiltonian_row(&self, diag: &[f64], inp: &Field, start: usize, width: usize, tr: &mut [f64], ti: &mut [f64]) {
        let n = width;
        let (tr, ti) = (&mut tr[..n], &mut ti[..n]);
        let dg = &diag[start..start + n];
        let (xr, xi) = (&inp.re[start..start + n], &inp.im[start..start + n]);
        for i in 0..n {
            tr[i] = dg[i] * xr[i];
            ti[i] = dg[i] * xi[i];
        }
        let nh = self.offsets.len();
        if self.geo.torus {
            for i in 0..n {
                let idx = start + i;
                for (e, &j) in self.neighbors[idx * nh..(idx + 1) * nh].iter().enumerate() {
                    let j = j as usize;
                    tr[i] += self.hop_re[e] * inp.re[j] - self.hop_im[e] * inp.im[j];
                    ti[i] += self.hop_re[e] * inp.im[j] + self.hop_im[e] * inp.re[j];
                }
            }
            return;
        }
        for e in 0..nh {
            let s0 = (start as isize - self.offsets[e]) as usize;
            let (yr, yi) = (&inp.re[s0..s0 + n], &inp.im[s0..s0 + n]);
            let (hr, hi) = (self.hop_re[e], self.hop_im[e]);
            if self.real {
                for i in 0..n {
                    tr[i] += hr * yr[i];
                    ti[i] += hr * yi[i];
                }
            } else {
                for i in 0..n {
                    tr[i] += hr * yr[i] - hi * yi[i];
                    ti[i] += hr * yi[i] + hi * yr[i];
                }
            }
        }
    }

    /// Single-pass `out = 2H̃cur − prev`, `acc += c·out` for a real two-term stencil;
    /// `prev` is `out` itself when `None`.
    #[allow(clippy::too_many_arguments)]
    fn pair_update(&self, diag: &[f64], cur: &Field, prev: Option<&Field>, out: &mut Field, acc: &mut Field, c: (f64, f64), s: usize, n: usize) {
        let (h0, h1) = (2.0 * self.hop_re[0], 2.0 * self.hop_re[1]);
        let s0 = (s as isize - self.offsets[0]) as usize;
        let s1 = (s as isize - self.offsets[1]) as usize;
        let dg = &diag[s..s + n];
        let (xr, xi) = (&cur.re[s..s + n], &cur.im[s..s + n]);
        let (ar0, ai0) = (&cur.re[s0..s0 + n], &cur.im[s0..s0 + n]);
        let (ar1, ai1) = (&cur.re[s1..s1 + n], &cur.im[s1..s1 + n]);
        let (or, oi) = (&mut out.re[s..s + n], &mut out.im[s..s + n]);
        let (qr, qi) = (&mut acc.re[s..s + n], &mut acc.im[s..s + n]);
        let (cr, ci) = c;
        match prev {
            Some(p) => {
                let (pr, pi) = (&p.re[s..s + n], &p.im[s..s + n]);
                for i in 0..n {
                    let r = 2.0 * dg[i] * xr[i] + h0 * ar0[i] + h1 * ar1[i] - pr[i];
                    let m = 2.0 * dg[i] * xi[i] + h0 * ai0[i] + h1 * ai1[i] - pi[i];
                    or[i] = r;
                    oi[i] = m;
                    qr[i] += cr * r - ci * m;
                    qi[i] += cr * m + ci * r;
                }
            }
            None => {
                for i in 0..n {
                    let r = 2.0 * dg[i] * xr[i] + h0 * ar0[i] + h1 * ar1[i] - or[i];
                    let m = 2.0 * dg[i] * xi[i] + h0 * ai0[i] + h1 * ai1[i] - oi[i];
                    or[i] = r;
                    oi[i] = m;
                    qr[i] += cr * r - ci * m;
                    qi[i] += cr * m + ci * r;
                }
            }
        }
    }

    /// Advances `ψ` by `dt` at the current on-site values and returns `‖ψ‖²`.
    fn step(&self, ws: &mut Workspace, dt: f64) -> Result<f64, SimulateError> {
        let x = self.scale * dt.max(0.0);
        chebyshev_coefficients(x, self.tol, self.cap, &mut ws.bessel, &mut ws.coeffs)?;
        let order = ws.coeffs.len() - 1;
        self.set_region(ws, order * self.geo.reach);
        let d = self.geo.dim;
        let Workspace { psi, a, b, acc, diag, reg_lo, reg_hi, row, coeffs, .. } = ws;
        let width = reg_hi[d - 1] - reg_lo[d - 1] + 1;
        let strides = &self.geo.strides;
        let (tr, ti) = (&mut row.re[..width], &mut row.im[..width]);
        let c0 = coeffs[0];
        if order == 0 {
            for_each_row(reg_lo, reg_hi, |_, s| {
                let span = s..s + width;
                for (o, p) in acc.re[span.clone()].iter_mut().zip(&psi.re[span.clone()]) {
                    *o = c0 * p;
                }
                for (o, p) in acc.im[span.clone()].iter_mut().zip(&psi.im[span]) {
                    *o = c0 * p;
                }
            }, strides);
        } else {
            // φ₁ = H̃ψ, acc = c₀ψ − i c₁φ₁.
            let c1 = coeffs[1];
            for_each_row(reg_lo, reg_hi, |_, s| {
                self.hamiltonian_row(diag, psi, s, width, tr, ti);
                let span = s..s + width;
                a.re[span.clone()].copy_from_slice(tr);
                a.im[span.clone()].copy_from_slice(ti);
                for ((o, p), m) in acc.re[span.clone()].iter_mut().zip(&psi.re[span.clone()]).zip(ti.iter()) {
                    *o = c0 * p + c1 * m;
                }
                for ((o, p), r) in acc.im[span.clone()].iter_mut().zip(&psi.im[span]).zip(tr.iter()) {
                    *o = c0 * p - c1 * r;
                }
            }, strides);
        }
        for n in 2..=order {
            let c = coeffs[n];
            let (cr, ci) = match n % 4 {
                0 => (c, 0.0),
                1 => (0.0, -c),
                2 => (-c, 0.0),
                _ => (0.0, c),
            };
            // φ_n = 2H̃φ_{n−1} − φ_{n−2}; even n writes into b, odd into a.
            let (cur, out): (&Field, &mut Field) = if n % 2 == 0 { (&*a, &mut *b) } else { (&*b, &mut *a) };
            let prev_psi = n == 2;
            let pair = !self.geo.torus && self.real && self.offsets.len() == 2;
            for_each_row(reg_lo, reg_hi, |_, s| {
                let span = s..s + width;
                let n = width;
                if pair {
                    self.pair_update(diag, cur, if prev_psi { Some(psi) } else { None }, out, acc, (cr, ci), s, n);
                    return;
                }
                self.hamiltonian_row(diag, cur, s, width, tr, ti);
                let (tr, ti) = (&tr[..n], &ti[..n]);
                let (or, oi) = (&mut out.re[span.clone()], &mut out.im[span.clone()]);
                let (ar, ai) = (&mut acc.re[span.clone()], &mut acc.im[span.clone()]);
                let (or, oi, ar, ai) = (&mut or[..n], &mut oi[..n], &mut ar[..n], &mut ai[..n]);
                if prev_psi {
                    let (pr, pi) = (&psi.re[span.clone()], &psi.im[span]);
                    let (pr, pi) = (&pr[..n], &pi[..n]);
                    for i in 0..n {
                        or[i] = 2.0 * tr[i] - pr[i];
                        oi[i] = 2.0 * ti[i] - pi[i];
                    }
                } else {
                    for i in 0..n {
                        or[i] = 2.0 * tr[i] - or[i];
                        oi[i] = 2.0 * ti[i] - oi[i];
                    }
                }
                for i in 0..n {
                    ar[i] += cr * or[i] - ci * oi[i];
                    ai[i] += cr * oi[i] + ci * or[i];
                }
            }, strides);
        }
        let (pc, ps) = (libm::cos(self.center * dt), libm::sin(self.center * dt));
        let mut norm = 0.0;
        for_each_row(reg_lo, reg_hi, |_, s| {
            let span = s..s + width;
            let (pr, pi) = (&mut psi.re[span.clone()], &mut psi.im[span.clone()]);
            for (((r, m), x), y) in pr.iter_mut().zip(pi.iter_mut()).zip(&acc.re[span.clone()]).zip(&acc.im[span.clone()]) {
                *r = pc * x + ps * y;
                *m = pc * y - ps * x;
                norm += *r * *r + *m * *m;
            }
            for f in [&mut *acc, &mut *a, &mut *b] {
                f.re[span.clone()].fill(0.0);
                f.im[span.clone()].fill(0.0);
            }
        }, strides);
        ws.win_lo.clone_from(&ws.reg_lo);
        ws.win_hi.clone_from(&ws.reg_hi);
        self.trim(ws);
        Ok(norm)
    }

    /// Shrinks the window to the bounding box of amplitudes above the trim level.
    fn trim(&self, ws: &mut Workspace) {
        if self.geo.torus {
            return;
        }
        let d = self.geo.dim;
        let thr = self.trim * self.trim;
        let Workspace { psi, win_lo, win_hi, reg_lo, reg_hi, .. } = ws;
        reg_lo.clone_from(win_hi);
        reg_hi.clone_from(win_lo);
        let mut any = false;
        let width = win_hi[d - 1] - win_lo[d - 1] + 1;
        for_each_row(win_lo, win_hi, |pos, start| {
            let row_re = &psi.re[start..start + width];
            let row_im = &psi.im[start..start + width];
            let above = |k: &usize| row_re[*k] * row_re[*k] + row_im[*k] * row_im[*k] > thr;
            if let Some(f) = (0..width).find(above) {
                let l = (0..width).rev().find(above).unwrap_or(f);
                any = true;
                for j in 0..d - 1 {
                    reg_lo[j] = reg_lo[j].min(pos[j]);
                    reg_hi[j] = reg_hi[j].max(pos[j]);
                }
                reg_lo[d - 1] = reg_lo[d - 1].min(pos[d - 1] + f);
                reg_hi[d - 1] = reg_hi[d - 1].max(pos[d - 1] + l);
            }
        }, &self.geo.strides);
        if !any {
            reg_lo.clone_from(win_lo);
            reg_hi.clone_from(win_lo);
        }
        if reg_lo != win_lo || reg_hi != win_hi {
            for_each_row(win_lo, win_hi, |pos, start| {
                let row = start..start + width;
                if (0..d - 1).any(|j| pos[j] < reg_lo[j] || pos[j] > reg_hi[j]) {
                    psi.re[row.clone()].fill(0.0);
                    psi.im[row].fill(0.0);
                    return;
                }
                let keep = start + reg_lo[d - 1] - pos[d - 1]..start + reg_hi[d - 1] - pos[d - 1] + 1;
                for f in [&mut psi.re, &mut psi.im] {
                    f[start..keep.start].fill(0.0);
                    f[keep.end..row.end].fill(0.0);
                }
            }, &self.geo.strides);
            win_lo.clone_from(reg_lo);
            win_hi.clone_from(reg_hi);
        }
    }

    fn norm_sqr(&self, ws: &Workspace) -> f64 {
        let mut s = 0.0;
        let d = self.geo.dim;
        let width = ws.win_hi[d - 1] - ws.win_lo[d - 1] + 1;
        for_each_row(&ws.win_lo, &ws.win_hi, |_, start| {
            for idx in start..start + width {
                s += ws.psi.re[idx] * ws.psi.re[idx] + ws.psi.im[idx] * ws.psi.im[idx];
            }
        }, &self.geo.strides);
        s
    }

    /// Mass on sites within `GUARD` of the box boundary.
    fn guard_mass(&self, ws: &Workspace) -> f64 {
        if self.geo.torus {
            return 0.0;
        }
        let d = self.geo.dim;
        let inside = (0..d).all(|j| ws.win_lo[j] >= self.geo.lo[j] + GUARD && ws.win_hi[j] + GUARD <= self.geo.hi[j]);
        if inside {
            return 0.0;
        }
        let mut s = 0.0;
        let mut pos = vec![0; d];
        let width = ws.win_hi[d - 1] - ws.win_lo[d - 1] + 1;
        for_each_row(&ws.win_lo, &ws.win_hi, |_, start| {
            for idx in start..start + width {
                self.geo.position(idx, &mut pos);
                if (0..d).any(|j| pos[j] < self.geo.lo[j] + GUARD || pos[j] + GUARD > self.geo.hi[j]) {
                    s += ws.psi.re[idx] * ws.psi.re[idx] + ws.psi.im[idx] * ws.psi.im[idx];
                }
            }
        }, &self.geo.strides);
        s
    }

    /// Writes `[mass, M (d×d), Re/Im char values...]` and returns the mass.
    fn observe(&self, ws: &Workspace, t: f64, grid: &[Vec<f64>], out: &mut Vec<f64>) -> f64 {
        let d = self.geo.dim;
        let lo = &ws.win_lo;
        let hi = &ws.win_hi;
        let width = hi[d - 1] - lo[d - 1] + 1;
        let mut mass = 0.0;
        let mut m = vec![0.0; d * d];
        let mut x = vec![0.0; d];
        for_each_row(lo, hi, |pos, start| {
            for (j, xj) in x.iter_mut().enumerate().take(d - 1) {
                *xj = self.geo.coordinate(j, pos[j]);
            }
            for off in 0..width {
                let idx = start + off;
                let rho = ws.psi.re[idx] * ws.psi.re[idx] + ws.psi.im[idx] * ws.psi.im[idx];
                if rho == 0.0 {
                    continue;
                }
                x[d - 1] = self.geo.coordinate(d - 1, pos[d - 1] + off);
                mass += rho;
                for i in 0..d {
                    for j in i..d {
                        m[i * d + j] += x[i] * x[j] * rho;
                    }
                }
            }
        }, &self.geo.strides);
        for i in 0..d {
            for j in 0..i {
                m[i * d + j] = m[j * d + i];
            }
        }
        out.push(mass);
        out.extend_from_slice(&m);
        if !grid.is_empty() {
            let inv = if t > 0.0 { 1.0 / libm::sqrt(t) } else { 0.0 };
            let mut tables: Vec<Vec<C64>> = vec![Vec::new(); d];
            for k in grid {
                for j in 0..d {
                    let arg = k[j] * inv;
                    let n = hi[j] - lo[j] + 1;
                    let tab = &mut tables[j];
                    tab.clear();
                    if self.geo.torus {
                        // Minimal-image coordinates are not monotone in storage order.
                        tab.extend((lo[j]..=hi[j]).map(|p| {
                            let a = arg * self.geo.coordinate(j, p);
                            C64::new(libm::cos(a), libm::sin(a))
                        }));
                    } else {
                        let a0 = arg * self.geo.coordinate(j, lo[j]);
                        let step = C64::new(libm::cos(arg), libm::sin(arg));
                        let mut z = C64::new(libm::cos(a0), libm::sin(a0));
                        for _ in 0..n {
                            tab.push(z);
                            z *= step;
                        }
                    }
                }
                let mut s = C64::new(0.0, 0.0);
                for_each_row(lo, hi, |pos, start| {
                    let mut pre = C64::new(1.0, 0.0);
                    for j in 0..d - 1 {
                        pre *= tables[j][pos[j] - lo[j]];
                    }
                    let last = &tables[d - 1];
                    let mut row = C64::new(0.0, 0.0);
                    for off in 0..width {
                        let idx = start + off;
                        let rho = ws.psi.re[idx] * ws.psi.re[idx] + ws.psi.im[idx] * ws.psi.im[idx];
                        row += last[off] * rho;
                    }
                    s += pre * row;
                }, &self.geo.strides);
                out.push(s.re);
                out.push(s.im);
            }
        }
        mass
    }

    fn density(&self, ws: &Workspace, out: &mut Vec<f64>) {
        out.extend(self.geo.sites.iter().map(|&s| ws.psi.re[s] * ws.psi.re[s] + ws.psi.im[s] * ws.psi.im[s]));
    }
}

/// Per-trajectory output.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    /// `M_{ij}` per sample, row-major `d×d` blocks.
    pub moments: Vec<f64>,
    /// `|ψ_t(x)|²` per sample in [`Simulator::sites`] order.
    pub density: Vec<Vec<f64>>,
    pub characteristic: Vec<Vec<C64>>,
    pub segments: usize,
    pub flips: usize,
}

/// Reusable propagation setup for one configuration.
pub struct Simulator {
    config: EnsembleConfig,
    engine: Engine,
    /// `aΔt` cap per Chebyshev segment.
    step_cap: f64,
    margin: usize,
    initial: Vec<(usize, C64)>,
}

impl Simulator {
    pub fn new(config: &EnsembleConfig) -> Result<Self, SimulateError> {
        config.validate()?;
        let reach = config.hopping.range() as usize;
        let geo = match &config.domain {
            Domain::Box { half_width } => Geometry::boxed(config.dim(), *half_width, reach),
            Domain::Torus { size } => Geometry::torus(size, reach),
        };
        let model = config.model.clone();
        let engine = Engine::new(geo, &config.hopping, |x, _| model.value(x), model.bounds(), config.lambda, config.tolerance, 4096);
        let step_cap = 0.5;
        let mut coeffs = Vec::new();
        chebyshev_coefficients(step_cap, config.tolerance, engine.cap, &mut Vec::new(), &mut coeffs)?;
        let margin = (coeffs.len() - 1) * reach;
        let initial = config.initial.iter().map(|(x, a)| (engine.geo.storage(x), *a)).collect();
        Ok(Self { config: config.clone(), engine, step_cap, margin, initial })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    /// Physical site coordinates in density order.
    pub fn sites(&self) -> &[Vec<i64>] {
        &self.engine.geo.coords
    }

    pub fn run(&self, index: u64) -> Result<Trajectory, SimulateError> {
        let mut flat = Vec::new();
        let mut density = Vec::new();
        let (segments, flips) = self.run_into(index, self.config.record_density, &mut flat, &mut density)?;
        let d = self.config.dim();
        let k = self.config.char_grid.len();
        let per = 1 + d * d + 2 * k;
        let samples = self.config.sample_times.len();
        let mut traj = Trajectory {
            times: self.config.sample_times.clone(),
            mass: Vec::with_capacity(samples),
            moments: Vec::with_capacity(samples * d * d),
            density: Vec::new(),
            characteristic: Vec::new(),
            segments,
            flips,
        };
        for s in 0..samples {
            let row = &flat[s * per..(s + 1) * per];
            traj.mass.push(row[0]);
            traj.moments.extend_from_slice(&row[1..1 + d * d]);
            if k > 0 {
                traj.characteristic.push((0..k).map(|i| C64::new(row[1 + d * d + 2 * i], row[2 + d * d + 2 * i])).collect());
            }
        }
        let n = self.engine.geo.sites.len();
        if self.config.record_density {
            traj.density = density.chunks(n).map(<[f64]>::to_vec).collect();
        }
        Ok(traj)
    }

    fn run_into(&self, index: u64, with_density: bool, flat: &mut Vec<f64>, density: &mut Vec<f64>) -> Result<(usize, usize), SimulateError> {
        let cfg = &self.config;
        let eng = &self.engine;
        let geo = &eng.geo;
        let mut ws = eng.workspace();
        for &(s, a) in &self.initial {
            ws.psi.re[s] += a.re;
            ws.psi.im[s] += a.im;
        }
        let d = geo.dim;
        let mut lo = vec![usize::MAX; d];
        let mut hi = vec![0; d];
        for &(s, _) in &self.initial {
            geo.position(s, &mut ws.pos);
            for j in 0..d {
                lo[j] = lo[j].min(ws.pos[j]);
                hi[j] = hi[j].max(ws.pos[j]);
            }
        }
        if geo.torus {
            lo = geo.lo.clone();
            hi = geo.hi.clone();
        }
        ws.win_lo = lo;
        ws.win_hi = hi;

        let mut events: Vec<(f64, u32)> = Vec::new();
        let mut signs: Vec<i8> = Vec::new();
        let noisy = cfg.lambda > 0.0;
        if noisy {
            let params = FlipParams::new(cfg.rate, geo.coords.clone())?;
            let schedule = sample_flip_schedule(&params, cfg.horizon, derive_seed(cfg.seed, index));
            events = schedule.events();
            signs = schedule.initial;
            let shift = cfg.lambda / eng.scale;
            for (&s, &w) in geo.sites.iter().zip(&signs) {
                ws.diag[s] += shift * w as f64;
            }
        }
        let toggle = 2.0 * cfg.lambda / eng.scale;
        let dt_max = self.step_cap / eng.scale;
        let mut t = 0.0;
        let mut segments = 0usize;
        let mut ev = 0usize;
        let mut mass0 = eng.norm_sqr(&ws);
        let advance = |ws: &mut Workspace, t: &mut f64, target: f64, segments: &mut usize, mass0: &mut f64| -> Result<(), SimulateError> {
            while target - *t > 0.0 {
                let dt = (target - *t).min(dt_max);
                let m = eng.step(ws, dt)?;
                *segments += 1;
                *t = if dt == target - *t { target } else { *t + dt };
                check_drift(*mass0, m)?;
                *mass0 = m;
            }
            Ok(())
        };
        let record = |ws: &Workspace, t: f64, flat: &mut Vec<f64>, density: &mut Vec<f64>| -> Result<(), SimulateError> {
            let mass = eng.observe(ws, t, if t > 0.0 { &cfg.char_grid } else { &[] }, flat);
            if t <= 0.0 {
                for _ in 0..cfg.char_grid.len() {
                    flat.push(mass);
                    flat.push(0.0);
                }
            }
            if (mass - 1.0).abs() > 1e-9 {
                return Err(SimulateError::NormDrift { drift: (mass - 1.0).abs() });
            }
            let guard = eng.guard_mass(ws);
            if guard > cfg.leakage_tol * mass {
                return Err(SimulateError::BoxLeakage { mass: guard, tolerance: cfg.leakage_tol * mass });
            }
            if with_density {
                eng.density(ws, density);
            }
            Ok(())
        };
        for &ts in &cfg.sample_times {
            while ev < events.len() && events[ev].0 <= ts {
                let (tf, site) = events[ev];
                ev += 1;
                if tf - t > dt_max {
                    advance(&mut ws, &mut t, tf - dt_max, &mut segments, &mut mass0)?;
                }
                geo.position(geo.sites[site as usize], &mut ws.pos);
                let near = geo.torus
                    || (0..d).all(|j| ws.pos[j] + self.margin >= ws.win_lo[j] && ws.pos[j] <= ws.win_hi[j] + self.margin);
                if near {
                    advance(&mut ws, &mut t, tf, &mut segments, &mut mass0)?;
                }
                let s = &mut signs[site as usize];
                let idx = geo.sites[site as usize];
                ws.diag[idx] -= toggle * *s as f64;
                *s = -*s;
            }
            advance(&mut ws, &mut t, ts, &mut segments, &mut mass0)?;
            record(&ws, ts, flat, density)?;
        }
        Ok((segments, ev))
    }
}

/// One trajectory; the flip schedule is seeded by `(config.seed, index)`.
pub fn run_trajectory(config: &EnsembleConfig, index: u64) -> Result<Trajectory, SimulateError> {
    Simulator::new(config)?.run(index)
}

/// Block sums of per-trajectory observables over contiguous index blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub dim: usize,
    pub times: Vec<f64>,
    pub k_grid: Vec<Vec<f64>>,
    pub sites: Vec<Vec<i64>>,
    pub trajectories: usize,
    pub block_counts: Vec<usize>,
    /// Per block: `[samples × (1 + d² + 2K)]` then `[samples × sites]` when density is recorded.
    pub block_sums: Vec<Vec<f64>>,
    pub has_density: bool,
}

impl EnsembleResult {
    fn per_sample(&self) -> usize {
        1 + self.dim * self.dim + 2 * self.k_grid.len()
    }

    fn total(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.block_sums[0].len()];
        for b in &self.block_sums {
            for (a, v) in t.iter_mut().zip(b) {
                *a += v;
            }
        }
        t
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.trajectories as f64;
        self.total().into_iter().map(|v| v / n).collect()
    }

    /// Leave-one-block-out means.
    pub fn replicas(&self) -> Vec<Vec<f64>> {
        let total = self.total();
        self.block_sums
            .iter()
            .zip(&self.block_counts)
            .map(|(b, &c)| {
                let n = (self.trajectories - c) as f64;
                total.iter().zip(b).map(|(t, v)| (t - v) / n).collect()
            })
            .collect()
    }

    /// Block-jackknife standard errors of [`mean`](Self::mean).
    pub fn stderr(&self) -> Vec<f64> {
        jackknife(&self.replicas())
    }

    pub fn moment_series(&self) -> MomentSeries {
        let mean = self.mean();
        let err = self.stderr();
        let reps = self.replicas();
        let per = self.per_sample();
        let d2 = self.dim * self.dim;
        let pick = |v: &[f64]| -> Vec<f64> { (0..self.times.len()).flat_map(|s| v[s * per + 1..s * per + 1 + d2].to_vec()).collect() };
        MomentSeries {
            dim: self.dim,
            times: self.times.clone(),
            moments: pick(&mean),
            stderr: pick(&err),
            mass: (0..self.times.len()).map(|s| mean[s * per]).collect(),
            ensemble_size: self.trajectories,
            replicas: reps.iter().map(|r| pick(r)).collect(),
        }
    }

    /// Mean characteristic-function values and their standard errors at sample `s`.
    pub fn characteristic(&self, s: usize) -> (Vec<C64>, Vec<f64>) {
        let mean = self.mean();
        let err = self.stderr();
        let base = s * self.per_sample() + 1 + self.dim * self.dim;
        (0..self.k_grid.len())
            .map(|i| {
                let (r, im) = (base + 2 * i, base + 2 * i + 1);
                (C64::new(mean[r], mean[im]), libm::hypot(err[r], err[im]))
            })
            .unzip()
    }

    /// Mean density and standard errors at sample `s`.
    pub fn density(&self, s: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        if !self.has_density {
            return None;
        }
        let mean = self.mean();
        let err = self.stderr();
        let n = self.sites.len();
        let base = self.times.len() * self.per_sample() + s * n;
        Some((mean[base..base + n].to_vec(), err[base..base + n].to_vec()))
    }
}

fn jackknife(replicas: &[Vec<f64>]) -> Vec<f64> {
    let b = replicas.len();
    if b < 2 {
        return vec![f64::NAN; replicas.first().map_or(0, Vec::len)];
    }
    let len = replicas[0].len();
    (0..len)
        .map(|i| {
            let mean = replicas.iter().map(|r| r[i]).sum::<f64>() / b as f64;
            let ss: f64 = replicas.iter().map(|r| (r[i] - mean) * (r[i] - mean)).sum();
            libm::sqrt(ss * (b - 1) as f64 / b as f64)
        })
        .collect()
}

/// Runs `config.trajectories` trajectories in `config.blocks` contiguous blocks.
pub fn run_ensemble(config: &EnsembleConfig) -> Result<EnsembleResult, SimulateError> {
    if config.trajectories < 2 {
        return Err(SimulateError::InvalidConfig("at least two trajectories are needed"));
    }
    let sim = Simulator::new(config)?;
    let n = config.trajectories;
    let blocks = config.blocks.clamp(2, n);
    let bounds: Vec<usize> = (0..=blocks).map(|b| b * n / blocks).collect();
    let results = par::map_collect(blocks, |b| -> Result<Vec<f64>, SimulateError> {
        let mut sum: Vec<f64> = Vec::new();
        let mut flat = Vec::new();
        let mut dens = Vec::new();
        for i in bounds[b]..bounds[b + 1] {
            flat.clear();
            dens.clear();
            sim.run_into(i as u64, config.record_density, &mut flat, &mut dens)?;
            flat.extend_from_slice(&dens);
            if sum.is_empty() {
                sum = vec![0.0; flat.len()];
            }
            for (a, v) in sum.iter_mut().zip(&flat) {
                *a += v;
            }
        }
        Ok(sum)
    });
    let block_sums = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(EnsembleResult {
        dim: config.dim(),
        times: config.sample_times.clone(),
        k_grid: config.char_grid.clone(),
        sites: sim.sites().to_vec(),
        trajectories: n,
        block_counts: bounds.windows(2).map(|w| w[1] - w[0]).collect(),
        block_sums,
        has_density: config.record_density,
    })
}

/// Second moments `M_{ij}(t) = Σ x_i x_j E|ψ_t(x)|²` with jackknife errors.
pub fn ensemble_moments(config: &EnsembleConfig) -> Result<MomentSeries, SimulateError> {
    Ok(run_ensemble(config)?.moment_series())
}

/// `Σ_x e^{ik·x/√t} E|ψ_t(x)|²` over `k_grid`.
pub fn characteristic_function(config: &EnsembleConfig, k_grid: &[Vec<f64>], t: f64) -> Result<Vec<C64>, SimulateError> {
    if !(t > 0.0) {
        return Err(SimulateError::InvalidConfig("characteristic function needs t > 0"));
    }
    let mut cfg = config.clone();
    cfg.sample_times = vec![t];
    cfg.char_grid = k_grid.to_vec();
    cfg.record_density = false;
    Ok(run_ensemble(&cfg)?.characteristic(0).0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSeries {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Row-major `d×d` block per sample time.
    pub moments: Vec<f64>,
    pub stderr: Vec<f64>,
    pub mass: Vec<f64>,
    pub ensemble_size: usize,
    /// Leave-one-block-out moment series, laid out like `moments`.
    pub replicas: Vec<Vec<f64>>,
}

impl MomentSeries {
    /// Series without error information, e.g. synthetic or deterministic input.
    pub fn from_values(dim: usize, times: Vec<f64>, moments: Vec<f64>) -> Self {
        let n = times.len();
        Self { dim, stderr: vec![0.0; moments.len()], mass: vec![1.0; n], ensemble_size: 1, replicas: Vec::new(), times, moments }
    }

    pub fn from_trajectory(traj: &Trajectory, dim: usize) -> Self {
        let mut s = Self::from_values(dim, traj.times.clone(), traj.moments.clone());
        s.mass = traj.mass.clone();
        s
    }

    pub fn moment(&self, sample: usize, i: usize, j: usize) -> f64 {
        self.moments[sample * self.dim * self.dim + i * self.dim + j]
    }

    pub fn matrix(&self, sample: usize) -> DMatrix<f64> {
        let d = self.dim;
        DMatrix::from_row_slice(d, d, &self.moments[sample * d * d..(sample + 1) * d * d])
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionFit {
    pub matrix: DMatrix<f64>,
    /// Half-widths of 95% intervals per entry.
    pub ci95: DMatrix<f64>,
    pub trace: f64,
    pub trace_ci95: f64,
    pub intercept: DMatrix<f64>,
    /// Quadratic coefficient of each diagonal moment over the window.
    pub curvature: Vec<f64>,
    pub nonlinear: bool,
    pub points: usize,
}

fn polyfit(t: &[f64], y: &[f64], degree: usize) -> Vec<f64> {
    let n = degree + 1;
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    let a = DMatrix::from_fn(t.len(), n, |r, c| {
        let s = t[r] - mean;
        (0..c).fold(1.0, |acc, _| acc * s)
    });
    let rhs = nalgebra::DVector::from_column_slice(y);
    let coef = (a.transpose() * &a).lu().solve(&(a.transpose() * rhs)).unwrap_or_else(|| nalgebra::DVector::zeros(n));
    // Back to powers of t.
    let mut out = vec![0.0; n];
    for (c, &v) in coef.iter().enumerate() {
        // (t − m)^c = Σ_k C(c,k) t^k (−m)^{c−k}
        for k in 0..=c {
            let b = binom_coeff(c, k);
            let mut p = 1.0;
            for _ in 0..c - k {
                p *= -mean;
            }
            out[k] += v * b * p;
        }
    }
    out
}

fn binom_coeff(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Least-squares slopes of `M_{ij}(t)` over `window`, with jackknife or
/// residual-based 95% intervals and a quadratic-trend test on the diagonal.
pub fn fit_diffusion(series: &MomentSeries, window: (f64, f64)) -> Result<DiffusionFit, SimulateError> {
    let idx: Vec<usize> = (0..series.times.len())
        .filter(|&s| series.times[s] >= window.0 - 1e-12 && series.times[s] <= window.1 + 1e-12)
        .collect();
    if idx.len() < 4 {
        return Err(SimulateError::WindowTooShort { points: idx.len() });
    }
    let d = series.dim;
    let t: Vec<f64> = idx.iter().map(|&s| series.times[s]).collect();
    let column = |src: &[f64], i: usize, j: usize| -> Vec<f64> { idx.iter().map(|&s| src[s * d * d + i * d + j]).collect() };
    let mut slope = DMatrix::zeros(d, d);
    let mut icpt = DMatrix::zeros(d, d);
    let mut ci = DMatrix::zeros(d, d);
    let mut trace_reps = vec![0.0; series.replicas.len()];
    let mut trace_resid = 0.0;
    let mut curvature = Vec::with_capacity(d);
    let mut nonlinear = false;
    let tm = t.iter().sum::<f64>() / t.len() as f64;
    let stt: f64 = t.iter().map(|x| (x - tm) * (x - tm)).sum();
    for i in 0..d {
        for j in 0..d {
            let y = column(&series.moments, i, j);
            let lin = polyfit(&t, &y, 1);
            slope[(i, j)] = lin[1];
            icpt[(i, j)] = lin[0];
            let sigma = if series.replicas.len() >= 2 {
                let reps: Vec<Vec<f64>> = series.replicas.iter().map(|r| vec![polyfit(&t, &column(r, i, j), 1)[1]]).collect();
                if i == j {
                    for (acc, r) in trace_reps.iter_mut().zip(&reps) {
                        *acc += r[0];
                    }
                }
                jackknife(&reps)[0]
            } else {
                let ss: f64 = t.iter().zip(&y).map(|(x, v)| (v - lin[0] - lin[1] * x) * (v - lin[0] - lin[1] * x)).sum();
                let s2 = ss / (t.len() - 2) as f64 / stt;
                if i == j {
                    trace_resid += s2;
                }
                libm::sqrt(s2)
            };
            ci[(i, j)] = 1.96 * sigma;
            if i == j {
                let quad = polyfit(&t, &y, 2);
                let c = quad[2];
                let sc = if series.replicas.len() >= 2 {
                    let reps: Vec<Vec<f64>> = series.replicas.iter().map(|r| vec![polyfit(&t, &column(r, i, j), 2)[2]]).collect();
                    jackknife(&reps)[0]
                } else {
                    let ss: f64 = t
                        .iter()
                        .zip(&y)
                        .map(|(x, v)| {
                            let e = v - quad[0] - quad[1] * x - quad[2] * x * x;
                            e * e
                        })
                        .sum();
                    let s4: f64 = t.iter().map(|x| libm::pow((x - tm) * (x - tm) - stt / t.len() as f64, 2.0)).sum();
                    libm::sqrt(ss / (t.len() as f64 - 3.0).max(1.0) / s4)
                };
                let span = t[t.len() - 1] - t[0];
                let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
                if c.abs() > 2.0 * sc && c.abs() * span * span > 1e-9 * scale {
                    nonlinear = true;
                }
                curvature.push(c);
            }
        }
    }
    let trace = slope.trace();
    let trace_ci95 = if series.replicas.len() >= 2 {
        1.96 * jackknife(&trace_reps.into_iter().map(|v| vec![v]).collect::<Vec<_>>())[0]
    } else {
        1.96 * libm::sqrt(trace_resid)
    };
    Ok(DiffusionFit { matrix: slope, ci95: ci, trace, trace_ci95, intercept: icpt, curvature, nonlinear, points: idx.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbelAverage {
    pub relaxation_time: f64,
    /// `(2/T³)∫₀^∞ e^{−2t/T} M_{jj}(t) dt` per axis.
    pub values: Vec<f64>,
    /// Tail contribution beyond the horizon per axis.
    pub tail: Vec<f64>,
    pub positive: bool,
}

/// `∫_τ^∞ e^{−st} tⁿ dt` for `n ≤ 2`.
fn exp_moment_tail(s: f64, tau: f64, n: usize) -> f64 {
    let e = libm::exp(-s * tau);
    match n {
        0 => e / s,
        1 => e * (tau / s + 1.0 / (s * s)),
        _ => e * (tau * tau / s + 2.0 * tau / (s * s) + 2.0 / (s * s * s)),
    }
}

/// `∫ e^{−st} p(t) dt` over `[t_0, t_m]` for the interpolant `p` through the points.
fn weighted_segment(s: f64, t: &[f64], y: &[f64]) -> f64 {
    let m = t.len();
    let u: Vec<f64> = t.iter().map(|x| x - t[0]).collect();
    let v = DMatrix::from_fn(m, m, |r, c| (0..c).fold(1.0, |acc, _| acc * u[r]));
    let coef = v.lu().solve(&nalgebra::DVector::from_column_slice(y)).unwrap_or_else(|| nalgebra::DVector::zeros(m));
    let h = u[m - 1];
    let mut fact = 1.0;
    let mut sum = 0.0;
    for (n, c) in coef.iter().enumerate() {
        if n > 0 {
            fact *= n as f64;
        }
        let full = fact / libm::pow(s, n as f64 + 1.0);
        let part = if n == 0 { -libm::expm1(-s * h) / s } else { full - exp_moment_tail(s, h, n) };
        sum += c * part;
    }
    libm::exp(-s * t[0]) * sum
}

/// Abel average of each diagonal moment. The exponential weight is integrated
/// exactly against piecewise-quadratic interpolants of the samples, plus the closed-form tail of a quadratic
/// fitted to the last third of the series.
pub fn abel_second_moment(series: &MomentSeries, relaxation_time: f64) -> Result<AbelAverage, SimulateError> {
    let horizon = series.horizon();
    let big_t = relaxation_time;
    if !(big_t > 0.0) {
        return Err(SimulateError::InvalidConfig("relaxation time must be positive"));
    }
    if horizon < 5.0 * big_t {
        return Err(SimulateError::HorizonTooShort { horizon, required: 5.0 * big_t });
    }
    let s = 2.0 / big_t;
    let pref = 2.0 / (big_t * big_t * big_t);
    let times = &series.times;
    let n = times.len();
    if n < 2 {
        return Err(SimulateError::WindowTooShort { points: n });
    }
    let d = series.dim;
    let mut values = Vec::with_capacity(d);
    let mut tails = Vec::with_capacity(d);
    for j in 0..d {
        let mut ts: Vec<f64> = times.clone();
        let mut ys: Vec<f64> = (0..n).map(|k| series.moment(k, j, j)).collect();
        if ts[0] > 0.0 {
            // Moments start from zero for a localized initial state.
            ts.insert(0, 0.0);
            ys.insert(0, 0.0);
        }
        let mut integral = 0.0;
        let mut k = 0;
        while k + 1 < ts.len() {
            let m = if k + 2 < ts.len() { 2 } else { 1 };
            integral += weighted_segment(s, &ts[k..=k + m], &ys[k..=k + m]);
            k += m;
        }
        let from = (2 * n) / 3;
        let tt: Vec<f64> = times[from..].to_vec();
        let yy: Vec<f64> = (from..n).map(|k| series.moment(k, j, j)).collect();
        let coef = if tt.len() >= 3 { polyfit(&tt, &yy, 2) } else { vec![yy.last().copied().unwrap_or(0.0), 0.0, 0.0] };
        let tail: f64 = (0..3).map(|p| coef[p] * exp_moment_tail(s, horizon, p)).sum();
        values.push(pref * (integral + tail));
        tails.push(pref * tail);
    }
    let positive = values.iter().all(|&v| v > 0.0);
    Ok(AbelAverage { relaxation_time, values, tail: tails, positive })
}

/// `lim M_{jj}(t)/t²` per axis from Abel averages at `T` and `2T`, with the
/// `1/T` correction removed by `2A(2T) − A(T)`.
pub fn ballistic_coefficient(series: &MomentSeries, relaxation_time: f64) -> Result<Vec<f64>, SimulateError> {
    let a1 = abel_second_moment(series, relaxation_time)?;
    let a2 = abel_second_moment(series, 2.0 * relaxation_time)?;
    Ok(a1.values.iter().zip(&a2.values).map(|(x, y)| 2.0 * (2.0 * y - x)).collect())
}

/// `sup_k |φ(k) − e^{−½kᵀDk}|` over the grid.
pub fn clt_distance(empirical: &[C64], k_grid: &[Vec<f64>], diffusion: &DMatrix<f64>) -> f64 {
    empirical
        .iter()
        .zip(k_grid)
        .map(|(phi, k)| {
            let kv = nalgebra::DVector::from_column_slice(k);
            let q = (kv.transpose() * diffusion * &kv)[(0, 0)];
            (phi - C64::new(libm::exp(-0.5 * q), 0.0)).norm()
        })
        .fold(0.0, f64::max)
}

/// Deterministic `λ = 0` moments of the displacement from `start`, on a box
/// sized for the last sample time.
pub fn deterministic_moments(h: &HoppingKernel, model: &Model, start: &[i64], times: Vec<f64>) -> Result<MomentSeries, SimulateError> {
    let horizon = times.last().copied().unwrap_or(0.0);
    let mut cfg = EnsembleConfig::periodic(h.clone(), PeriodicPotential::zero(h.dim()), 0.0, 1.0, horizon);
    cfg.model = model.translated(start);
    cfg.sample_times = times;
    let traj = run_trajectory(&cfg, 0)?;
    Ok(MomentSeries::from_trajectory(&traj, h.dim()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn chain() -> HoppingKernel {
        HoppingKernel::nearest_neighbor(1)
    }

    fn reference(lambda: f64, horizon: f64) -> EnsembleConfig {
        let u = PeriodicPotential::new(vec![2], vec![0.0, 1.0]).unwrap();
        EnsembleConfig::periodic(chain(), u, lambda, 1.0, horizon)
    }

    #[test]
    fn bessel_coefficients_match_libm() {
        let (mut work, mut c) = (Vec::new(), Vec::new());
        for x in [1e-9, 0.02, 0.5, 3.0, 40.0] {
            chebyshev_coefficients(x, 1e-14, 10_000, &mut work, &mut c).unwrap();
            for (n, v) in c.iter().enumerate() {
                let j = libm::jn(n as i32, x) * if n == 0 { 1.0 } else { 2.0 };
                assert!((v - j).abs() < 1e-14 * (1.0 + j.abs()), "x={x} n={n}");
            }
            assert!(c.len() as f64 > x);
        }
        assert!(matches!(chebyshev_coefficients(500.0, 1e-14, 100, &mut work, &mut c), Err(SimulateError::ToleranceNotReached { .. })));
    }

    #[test]
    fn chebyshev_zero_step_is_identity() {
        let s = WaveState::delta(1, 5, &[0]);
        let out = propagate_constant(&s, &chain(), &vec![0.3; 11], 0.0, 1e-13).unwrap();
        assert_eq!(out.amplitudes, s.amplitudes);
    }

    #[test]
    fn single_site_phase() {
        let h = HoppingKernel::new(1, vec![(vec![5], C64::new(0.0, 0.0))]);
        let s = WaveState::delta(1, 0, &[0]);
        let c = 1.7;
        let out = propagate_constant(&s, &h, &[c], 2.5, 1e-14).unwrap();
        let expect = C64::new(0.0, -c * 2.5).exp();
        assert!((out.amplitudes[0] - expect).norm() < 1e-12);
    }

    #[test]
    fn free_chain_matches_bessel() {
        let t = 3.0;
        let s = WaveState::delta(1, 30, &[0]);
        let out = propagate_constant(&s, &chain(), &vec![0.0; 61], t, 1e-14).unwrap();
        for x in -30i64..=30 {
            let exact = libm::jn(x as i32, 2.0 * t);
            let got = out.amplitudes[out.index(&[x]).unwrap()].norm_sqr();
            assert!((got - exact * exact).abs() < 1e-12, "x={x}");
        }
        assert!((out.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trajectory_at_zero_coupling_is_bessel() {
        let mut cfg = EnsembleConfig::periodic(chain(), PeriodicPotential::zero(1), 0.0, 1.0, 6.0);
        cfg.sample_times = vec![0.0, 2.0, 6.0];
        cfg.record_density = true;
        let traj = run_trajectory(&cfg, 3).unwrap();
        let sim = Simulator::new(&cfg).unwrap();
        for (s, &t) in cfg.sample_times.iter().enumerate() {
            for (x, rho) in sim.sites().iter().zip(&traj.density[s]) {
                let j = libm::jn(x[0] as i32, 2.0 * t);
                assert!((rho - j * j).abs() < 1e-12);
            }
            assert_abs_diff_eq!(traj.moments[s], 2.0 * t * t, epsilon = 1e-9);
        }
        assert_eq!(traj.moments[0], 0.0);
        let other = run_trajectory(&cfg, 99).unwrap();
        assert_eq!(traj.density, other.density);
    }

    #[test]
    fn torus_matches_box_before_wrap() {
        let mut cfg = reference(0.0, 2.0);
        cfg.sample_times = vec![1.0, 2.0];
        let boxed = run_trajectory(&cfg, 0).unwrap();
        cfg.domain = Domain::Torus { size: vec![60] };
        let torus = run_trajectory(&cfg, 0).unwrap();
        for (a, b) in boxed.moments.iter().zip(&torus.moments) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn trajectories_are_reproducible() {
        let mut cfg = reference(1.0, 5.0);
        cfg.sample_times = vec![1.0, 5.0];
        cfg.record_density = true;
        let a = run_trajectory(&cfg, 17).unwrap();
        let b = run_trajectory(&cfg, 17).unwrap();
        assert_eq!(a, b);
        let c = run_trajectory(&cfg, 18).unwrap();
        assert_ne!(a.density, c.density);
        assert!(a.flips > 0);
        for m in &a.mass {
            assert!((m - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn lazy_flips_match_eager_segmentation() {
        // A zero margin forces every flip to break the segment; results must agree.
        let mut cfg = reference(0.8, 4.0);
        cfg.sample_times = vec![4.0];
        cfg.record_density = true;
        let sim = Simulator::new(&cfg).unwrap();
        let lazy = sim.run(5).unwrap();
        let eager = Simulator { margin: 10_000, ..Simulator::new(&cfg).unwrap() }.run(5).unwrap();
        assert!(eager.segments > lazy.segments);
        for (a, b) in lazy.density[0].iter().zip(&eager.density[0]) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_coupling_ensemble_has_no_variance() {
        let mut cfg = reference(0.0, 3.0);
        cfg.sample_times = vec![0.0, 1.5, 3.0];
        cfg.trajectories = 8;
        cfg.blocks = 4;
        cfg.record_density = true;
        let res = run_ensemble(&cfg).unwrap();
        assert!(res.stderr().iter().all(|&e| e < 1e-14));
        let series = res.moment_series();
        assert_eq!(series.moment(0, 0, 0), 0.0);
    }

    #[test]
    fn free_ensemble_second_moment() {
        let mut cfg = EnsembleConfig::periodic(chain(), PeriodicPotential::zero(1), 0.0, 1.0, 4.0);
        cfg.sample_times = vec![1.0, 2.0, 4.0];
        cfg.trajectories = 4;
        let series = ensemble_moments(&cfg).unwrap();
        for (s, &t) in series.times.iter().enumerate() {
            assert_abs_diff_eq!(series.moment(s, 0, 0), 2.0 * t * t, epsilon = 1e-9);
            assert_abs_diff_eq!(series.mass[s], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn characteristic_function_symmetry() {
        let mut cfg = reference(1.0, 3.0);
        cfg.sample_times = vec![3.0];
        cfg.trajectories = 6;
        let grid: Vec<Vec<f64>> = [0.0, 0.7, -0.7, 1.9, -1.9].iter().map(|&k| vec![k]).collect();
        let phi = characteristic_function(&cfg, &grid, 3.0).unwrap();
        assert!((phi[0] - C64::new(1.0, 0.0)).norm() < 1e-9);
        assert_eq!(phi[1], phi[2].conj());
        assert_eq!(phi[3], phi[4].conj());
    }

    #[test]
    fn two_dimensional_box_conserves_mass() {
        let h = HoppingKernel::nearest_neighbor(2);
        let u = PeriodicPotential::new(vec![2, 1], vec![0.0, 0.5]).unwrap();
        let mut cfg = EnsembleConfig::periodic(h, u, 0.7, 1.0, 2.0);
        cfg.sample_times = vec![1.0, 2.0];
        cfg.char_grid = vec![vec![0.0, 0.0], vec![0.5, -0.3], vec![-0.5, 0.3]];
        let traj = run_trajectory(&cfg, 1).unwrap();
        assert!((traj.mass[1] - 1.0).abs() < 1e-9);
        assert_eq!(traj.moments[1 * 4 + 1], traj.moments[1 * 4 + 2]);
        assert_eq!(traj.characteristic[1][1], traj.characteristic[1][2].conj());
    }

    #[test]
    fn undersized_box_is_rejected() {
        let mut cfg = reference(0.5, 10.0);
        cfg.domain = Domain::Box { half_width: 20 };
        assert!(matches!(cfg.validate(), Err(SimulateError::BoxTooSmall { .. })));
    }

    #[test]
    fn leakage_is_detected() {
        let mut cfg = reference(0.0, 3.0);
        cfg.domain = Domain::Box { half_width: 1000 };
        cfg.initial = vec![(vec![995], C64::new(1.0, 0.0))];
        cfg.sample_times = vec![3.0];
        assert!(matches!(run_trajectory(&cfg, 0), Err(SimulateError::BoxLeakage { .. })));
    }

    #[test]
    fn almost_mathieu_runs() {
        let mut cfg = EnsembleConfig::almost_mathieu(0.5, 0.1, (5f64.sqrt() - 1.0) / 2.0, 0.5, 1.0, 3.0);
        cfg.sample_times = vec![3.0];
        let traj = run_trajectory(&cfg, 0).unwrap();
        assert!((traj.mass[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn linear_series_fit_is_exact() {
        let times: Vec<f64> = (0..11).map(|i| 20.0 + 2.0 * i as f64).collect();
        let moments = times.iter().map(|t| 3.25 * t).collect();
        let fit = fit_diffusion(&MomentSeries::from_values(1, times, moments), (20.0, 40.0)).unwrap();
        assert_abs_diff_eq!(fit.trace, 3.25, epsilon = 1e-10);
        assert!(!fit.nonlinear);
    }

    #[test]
    fn ballistic_series_is_flagged() {
        let times: Vec<f64> = (0..11).map(|i| 20.0 + 2.0 * i as f64).collect();
        let series = deterministic_moments(&chain(), &Model::Periodic(PeriodicPotential::zero(1)), &[0], times).unwrap();
        let fit = fit_diffusion(&series, (20.0, 40.0)).unwrap();
        assert!(fit.nonlinear);
    }

    #[test]
    fn short_window_is_rejected() {
        let s = MomentSeries::from_values(1, vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]);
        assert!(matches!(fit_diffusion(&s, (0.0, 5.0)), Err(SimulateError::WindowTooShort { points: 3 })));
    }

    #[test]
    fn abel_average_of_quadratic() {
        let times: Vec<f64> = (0..=400).map(|i| i as f64 * 0.05).collect();
        let c = 1.3;
        let big_t = 2.0;
        let s = MomentSeries::from_values(1, times.clone(), times.iter().map(|t| c * t * t).collect());
        let a = abel_second_moment(&s, big_t).unwrap();
        assert_abs_diff_eq!(a.values[0], c / 2.0, epsilon = 1e-8);
        let zero = MomentSeries::from_values(1, times.clone(), vec![0.0; times.len()]);
        assert_eq!(abel_second_moment(&zero, big_t).unwrap().values[0], 0.0);
        assert!(matches!(abel_second_moment(&s, 5.0), Err(SimulateError::HorizonTooShort { .. })));
    }

    #[test]
    fn free_chain_ballistic_coefficient() {
        let times: Vec<f64> = (0..=400).map(|i| i as f64 * 0.1).collect();
        let series = deterministic_moments(&chain(), &Model::Periodic(PeriodicPotential::zero(1)), &[0], times).unwrap();
        let a = abel_second_moment(&series, 1.0).unwrap();
        assert_abs_diff_eq!(a.values[0], 1.0, epsilon = 1e-6);
        let b = ballistic_coefficient(&series, 2.0).unwrap();
        assert_abs_diff_eq!(b[0], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn clt_distance_of_gaussian_is_zero() {
        let d = DMatrix::from_row_slice(1, 1, &[2.5]);
        let grid: Vec<Vec<f64>> = (0..11).map(|i| vec![-1.0 + 0.2 * i as f64]).collect();
        let phi: Vec<C64> = grid.iter().map(|k| C64::new(libm::exp(-1.25 * k[0] * k[0]), 0.0)).collect();
        assert!(clt_distance(&phi, &grid, &d) < 1e-15);
        assert!(clt_distance(&[C64::new(1.0, 0.0)], &[vec![0.0]], &d) < 1e-15);
    }
}
