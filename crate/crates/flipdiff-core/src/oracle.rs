//! Exact small-torus reference: the lifted master equation over every noise
//! configuration, an adaptive Dormand–Prince integrator for it, and the
//! cross-checks that bind the Monte Carlo and fiber engines to it.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::augmented::{AugSpace, AugmentedError, FiberOperator, Truncation};
use crate::lattice::{HoppingKernel, PeriodicPotential};
use crate::linalg::{dotc, Csr, CsrBuilder, LinearOperator};
use crate::markov::{pointwise_generator, pointwise_sign, walsh_matrix};
use crate::simulate::{run_ensemble, Domain, EnsembleConfig, SimulateError};
use crate::C64;

/// Largest number of noise sites the enumeration accepts.
pub const MAX_NOISE_SITES: usize = 12;
/// Largest number of complex entries in a master state.
pub const MAX_STATES: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("state space of {states} entries exceeds the budget of {limit}")]
    StateSpaceTooLarge { states: usize, limit: usize },
    #[error("integrator failed at t = {time}: {reason}")]
    IntegratorFailed { time: f64, reason: &'static str },
    #[error("{check} failed at {location}: deviation {deviation:e} exceeds {tolerance:e}")]
    CheckFailed { check: String, location: String, deviation: f64, tolerance: f64 },
    #[error("invalid oracle input: {0}")]
    InvalidInput(&'static str),
    #[error(transparent)]
    Augmented(#[from] AugmentedError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
}

/// Site enumeration of a torus, first axis fastest.
#[derive(Debug, Clone, PartialEq)]
struct TorusSites {
    extent: Vec<usize>,
    strides: Vec<usize>,
}

impl TorusSites {
    fn new(extent: &[usize]) -> Self {
        let mut strides = vec![1usize; extent.len()];
        for j in 1..extent.len() {
            strides[j] = strides[j - 1] * extent[j - 1];
        }
        Self { extent: extent.to_vec(), strides }
    }

    fn len(&self) -> usize {
        self.extent.iter().product()
    }

    fn coords(&self, site: usize) -> Vec<i64> {
        self.extent.iter().zip(&self.strides).map(|(n, s)| ((site / s) % n) as i64).collect()
    }

    fn index(&self, x: &[i64]) -> usize {
        x.iter().zip(&self.extent).zip(&self.strides).map(|((c, n), s)| c.rem_euclid(*n as i64) as usize * s).sum()
    }

    fn shifted(&self, site: usize, xi: &[i64]) -> usize {
        let c: Vec<i64> = self.coords(site).iter().zip(xi).map(|(a, b)| a - b).collect();
        self.index(&c)
    }
}

/// `L = iK + iU + iλV + B` on functions `F(x, y, ω)` with `x, y` on a torus and
/// `ω ∈ {±1}^N` carried by the first `N` sites. The entry index is
/// `(x·sites + y)·2^N + ω`, where bit `z` of `ω` set means `ω_z = −1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterGenerator {
    torus: TorusSites,
    noise: usize,
    pub matrix: Csr,
}

impl MasterGenerator {
    pub fn extent(&self) -> &[usize] {
        &self.torus.extent
    }

    pub fn sites(&self) -> usize {
        self.torus.len()
    }

    pub fn noise_sites(&self) -> usize {
        self.noise
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows == 0
    }

    pub fn index(&self, x: usize, y: usize, omega: usize) -> usize {
        (x * self.sites() + y) * (1 << self.noise) + omega
    }

    pub fn site_coords(&self, site: usize) -> Vec<i64> {
        self.torus.coords(site)
    }

    /// Torus site of `x`, wrapped.
    pub fn site_of(&self, x: &[i64]) -> usize {
        self.torus.index(x)
    }

    /// `ρ₀ ⊗ 𝟙` as a master state.
    pub fn lift(&self, rho0: &DMatrix<C64>) -> Result<Vec<C64>, OracleError> {
        let n = self.sites();
        if rho0.nrows() != n || rho0.ncols() != n {
            return Err(OracleError::InvalidInput("initial density does not match the torus"));
        }
        let nw = 1usize << self.noise;
        let mut out = vec![C64::new(0.0, 0.0); self.len()];
        for x in 0..n {
            for y in 0..n {
                let v = rho0[(x, y)];
                let base = self.index(x, y, 0);
                out[base..base + nw].iter_mut().for_each(|z| *z = v);
            }
        }
        Ok(out)
    }

    /// `|ψ₀⟩⟨ψ₀|` on the torus.
    pub fn pure_density(&self, psi0: &[(Vec<i64>, C64)]) -> DMatrix<C64> {
        let n = self.sites();
        let mut psi = vec![C64::new(0.0, 0.0); n];
        for (x, a) in psi0 {
            psi[self.site_of(x)] += a;
        }
        DMatrix::from_fn(n, n, |x, y| psi[x] * psi[y].conj())
    }
}

pub fn build_master_generator(
    h: &HoppingKernel,
    u: &PeriodicPotential,
    lambda: f64,
    rate: f64,
    torus: &[usize],
    noise_sites: usize,
) -> Result<MasterGenerator, OracleError> {
    if torus.len() != h.dim() || u.dim() != h.dim() {
        return Err(OracleError::InvalidInput("dimension mismatch between kernel, potential and torus"));
    }
    if torus.iter().zip(u.period()).any(|(n, p)| *n == 0 || n % p != 0) {
        return Err(OracleError::InvalidInput("torus is not commensurate with the period"));
    }
    if !(rate >= 0.0) || !lambda.is_finite() {
        return Err(OracleError::InvalidInput("rate must be nonnegative and λ finite"));
    }
    let sites = TorusSites::new(torus);
    let n = sites.len();
    if noise_sites > n {
        return Err(OracleError::InvalidInput("more noise sites than torus sites"));
    }
    let states = n.checked_mul(n).and_then(|m| m.checked_mul(1usize.checked_shl(noise_sites as u32)?));
    let limit = MAX_STATES;
    match states {
        Some(s) if noise_sites <= MAX_NOISE_SITES && s <= limit => {}
        _ => return Err(OracleError::StateSpaceTooLarge { states: states.unwrap_or(usize::MAX), limit }),
    }
    let nw = 1usize << noise_sites;
    let i = crate::I;
    let entries = h.entries();
    let left: Vec<Vec<usize>> = entries.iter().map(|(xi, _)| (0..n).map(|x| sites.shifted(x, xi)).collect()).collect();
    let pot: Vec<f64> = (0..n).map(|x| u.value_at(&sites.coords(x))).collect();
    let sign = |w: usize, x: usize| -> f64 {
        if x >= noise_sites {
            0.0
        } else if w & (1 << x) != 0 {
            -1.0
        } else {
            1.0
        }
    };
    let len = n * n * nw;
    let mut b = CsrBuilder::with_capacity(len, len, len * (2 * entries.len() + noise_sites + 1));
    for x in 0..n {
        for y in 0..n {
            for w in 0..nw {
                for (e, (_, hv)) in entries.iter().enumerate() {
                    b.push((left[e][x] * n + y) * nw + w, i * hv);
                    b.push((x * n + left[e][y]) * nw + w, -i * hv.conj());
                }
                let diag = i * (pot[x] - pot[y] + lambda * (sign(w, x) - sign(w, y))) + rate * noise_sites as f64;
                b.push((x * n + y) * nw + w, diag);
                for z in 0..noise_sites {
                    b.push((x * n + y) * nw + (w ^ (1 << z)), C64::new(-rate, 0.0));
                }
                b.finish_row();
            }
        }
    }
    Ok(MasterGenerator { torus: sites, noise: noise_sites, matrix: b.build() })
}

/// `e^{−tA} y₀` at each of the nondecreasing `times`, by Dormand–Prince 5(4)
/// with local error per step below `tol` relative to the state size.
pub fn integrate_semigroup(a: &dyn LinearOperator, y0: &[C64], times: &[f64], tol: f64) -> Result<Vec<Vec<C64>>, OracleError> {
    const A: [[f64; 6]; 6] = [
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const E: [f64; 7] = [
        35.0 / 384.0 - 5179.0 / 57600.0,
        0.0,
        500.0 / 1113.0 - 7571.0 / 16695.0,
        125.0 / 192.0 - 393.0 / 640.0,
        -2187.0 / 6784.0 + 92097.0 / 339200.0,
        11.0 / 84.0 - 187.0 / 2100.0,
        -1.0 / 40.0,
    ];
    let n = a.dim();
    if y0.len() != n {
        return Err(OracleError::InvalidInput("initial state length does not match the operator"));
    }
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(OracleError::InvalidInput("times must be nonnegative and nondecreasing"));
    }
    if !(tol > 0.0) {
        return Err(OracleError::InvalidInput("tolerance must be positive"));
    }
    let rhs = |y: &[C64], out: &mut [C64]| {
        a.apply(y, out);
        out.iter_mut().for_each(|z| *z = -*z);
    };
    let mut y = y0.to_vec();
    let scale = y.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(f64::MIN_POSITIVE);
    let mut k: Vec<Vec<C64>> = (0..7).map(|_| vec![C64::new(0.0, 0.0); n]).collect();
    let mut stage = vec![C64::new(0.0, 0.0); n];
    let mut ynew = vec![C64::new(0.0, 0.0); n];
    rhs(&y, &mut k[0]);
    let fnorm = k[0].iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let mut step = if fnorm > 0.0 { 0.01 * scale / fnorm } else { 1.0 };
    let mut t = 0.0;
    let mut out = Vec::with_capacity(times.len());
    let mut steps = 0usize;
    for &target in times {
        while t < target {
            steps += 1;
            if steps > 10_000_000 {
                return Err(OracleError::IntegratorFailed { time: t, reason: "step budget exhausted" });
            }
            let last = step >= target - t;
            let dt = if last { target - t } else { step };
            for s in 0..6 {
                stage.copy_from_slice(&y);
                for (r, coeff) in A[s].iter().enumerate().take(s + 1) {
                    if *coeff != 0.0 {
                        let c = coeff * dt;
                        for (st, kv) in stage.iter_mut().zip(&k[r]) {
                            *st += kv * c;
                        }
                    }
                }
                rhs(&stage, &mut k[s + 1]);
            }
            ynew.copy_from_slice(&stage);
            let mut err = 0.0f64;
            for idx in 0..n {
                let mut e = C64::new(0.0, 0.0);
                for (r, ec) in E.iter().enumerate() {
                    if *ec != 0.0 {
                        e += k[r][idx] * *ec;
                    }
                }
                let w = tol * (scale + y[idx].norm().max(ynew[idx].norm()));
                err = err.max((e * dt).norm() / w);
            }
            if !err.is_finite() {
                return Err(OracleError::IntegratorFailed { time: t, reason: "non-finite state" });
            }
            if err <= 1.0 {
                t = if last { target } else { t + dt };
                core::mem::swap(&mut y, &mut ynew);
                let (head, tail) = k.split_at_mut(6);
                head[0].copy_from_slice(&tail[0]);
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * libm::pow(err, -0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 && last {
                step = step.max(dt * factor.min(1.0));
            } else {
                step = dt * factor;
            }
            if step < 1e-14 * (1.0 + t) {
                return Err(OracleError::IntegratorFailed { time: t, reason: "step size underflow" });
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// Exact ensemble averages on the torus at each sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactEvolution {
    pub times: Vec<f64>,
    /// `E|ψ_t(x)|²` per time, in torus site order.
    pub density: Vec<Vec<f64>>,
    /// `E[ψ_t(x) conj ψ_t(y)]` per time.
    pub coherence: Vec<DMatrix<C64>>,
    pub mass: Vec<f64>,
    /// `max_ω |Σ_x F_t(x, x, ω) − 1|` per time.
    pub marginal_defect: Vec<f64>,
}

impl ExactEvolution {
    /// Largest `|C(x, y) − conj C(y, x)|` over all times.
    pub fn hermiticity_defect(&self) -> f64 {
        self.coherence.iter().map(|c| (c - c.adjoint()).iter().fold(0.0f64, |m, z| m.max(z.norm()))).fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of the Hermitian part of the coherence over all times.
    pub fn min_eigenvalue(&self) -> f64 {
        self.coherence
            .iter()
            .map(|c| {
                let herm = (c + c.adjoint()) * C64::new(0.5, 0.0);
                herm.symmetric_eigenvalues().iter().fold(f64::INFINITY, |m, v| m.min(*v))
            })
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn propagate_exact(generator: &MasterGenerator, rho0: &DMatrix<C64>, times: &[f64], tol: f64) -> Result<ExactEvolution, OracleError> {
    let state = generator.lift(rho0)?;
    let states = integrate_semigroup(&generator.matrix, &state, times, tol)?;
    let n = generator.sites();
    let nw = 1usize << generator.noise;
    let weight = 1.0 / nw as f64;
    let mut out = ExactEvolution {
        times: times.to_vec(),
        density: Vec::with_capacity(times.len()),
        coherence: Vec::with_capacity(times.len()),
        mass: Vec::with_capacity(times.len()),
        marginal_defect: Vec::with_capacity(times.len()),
    };
    for f in &states {
        let c = DMatrix::from_fn(n, n, |x, y| {
            let block = &f[generator.index(x, y, 0)..generator.index(x, y, 0) + nw];
            block[0] + block.iter().map(|z| z - block[0]).sum::<C64>() * weight
        });
        let density: Vec<f64> = (0..n).map(|x| c[(x, x)].re).collect();
        let defect = (0..nw)
            .map(|w| ((0..n).map(|x| f[generator.index(x, x, w)]).sum::<C64>() - C64::new(1.0, 0.0)).norm())
            .fold(0.0, f64::max);
        out.mass.push(density.iter().sum());
        out.marginal_defect.push(defect);
        out.density.push(density);
        out.coherence.push(c);
    }
    Ok(out)
}

/// Outcome of one cross-check.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Verdict {
    pub name: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Where the largest deviation occurred.
    pub location: String,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CrossCheckReport {
    pub verdicts: Vec<Verdict>,
}

impl CrossCheckReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    /// The first failing verdict as an error.
    pub fn into_result(self) -> Result<Self, OracleError> {
        match self.verdicts.iter().find(|v| !v.passed) {
            Some(v) => Err(OracleError::CheckFailed {
                check: v.name.clone(),
                location: v.location.clone(),
                deviation: v.max_deviation,
                tolerance: v.tolerance,
            }),
            None => Ok(self),
        }
    }
}

/// Inputs of [`cross_checks`]. Noise lives on every torus site.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCheckConfig {
    pub hopping: HoppingKernel,
    pub potential: PeriodicPotential,
    pub lambda: f64,
    pub rate: f64,
    pub torus: Vec<usize>,
    pub initial: Vec<(Vec<i64>, C64)>,
    pub times: Vec<f64>,
    pub trajectories: usize,
    pub seed: u64,
    /// Allowed Monte Carlo deviation in jackknife standard errors.
    pub sigma_bound: f64,
    pub fourier_tol: f64,
    pub walsh_tol: f64,
    pub integrator_tol: f64,
}

impl CrossCheckConfig {
    /// Six-site chain with a two-site cell `u = (0, 1)`, `r = 1`, `λ = 0.5`, `ψ₀ = δ₀`.
    pub fn reference() -> Self {
        Self {
            hopping: HoppingKernel::nearest_neighbor(1),
            potential: PeriodicPotential::new(vec![2], vec![0.0, 1.0]).expect("valid cell"),
            lambda: 0.5,
            rate: 1.0,
            torus: vec![6],
            initial: vec![(vec![0], C64::new(1.0, 0.0))],
            times: vec![0.5, 1.0, 2.0],
            trajectories: 20_000,
            seed: 20_240_611,
            sigma_bound: 3.0,
            fourier_tol: 1e-8,
            walsh_tol: 1e-12,
            integrator_tol: 1e-12,
        }
    }
}

fn k_grid(extent: &[usize]) -> Vec<Vec<f64>> {
    let total: usize = extent.iter().product();
    let sites = TorusSites::new(extent);
    (0..total)
        .map(|m| sites.coords(m).iter().zip(extent).map(|(c, n)| 2.0 * core::f64::consts::PI * *c as f64 / *n as f64).collect())
        .collect()
}

fn fmt_point(x: &[i64]) -> String {
    let parts: Vec<String> = x.iter().map(|c| format!("{c}")).collect();
    format!("({})", parts.join(","))
}

/// Monte Carlo `E|ψ_t(x)|²` against the exact evolution, in jackknife σ.
pub fn monte_carlo_check(cfg: &CrossCheckConfig, exact: &ExactEvolution, generator: &MasterGenerator) -> Result<Verdict, OracleError> {
    let horizon = cfg.times.iter().copied().fold(0.0, f64::max);
    let mut ens = EnsembleConfig::periodic(cfg.hopping.clone(), cfg.potential.clone(), cfg.lambda, cfg.rate, horizon);
    ens.domain = Domain::Torus { size: cfg.torus.clone() };
    ens.sample_times = cfg.times.clone();
    ens.trajectories = cfg.trajectories;
    ens.seed = cfg.seed;
    ens.initial = cfg.initial.clone();
    ens.record_density = true;
    let result = run_ensemble(&ens)?;
    let mut worst = (0.0f64, String::from("none"));
    for (s, t) in result.times.iter().enumerate() {
        let exact_s = exact.times.iter().position(|e| (e - t).abs() < 1e-12).ok_or(OracleError::InvalidInput("sample time missing from the exact series"))?;
        let (mean, err) = result.density(s).expect("density recorded");
        for (i, x) in result.sites.iter().enumerate() {
            let diff = (mean[i] - exact.density[exact_s][generator.site_of(x)]).abs();
            let z = if err[i] > 0.0 {
                diff / err[i]
            } else if diff < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            if z > worst.0 {
                worst = (z, format!("x = {}, t = {t}", fmt_point(x)));
            }
        }
    }
    Ok(Verdict { name: String::from("monte_carlo_vs_exact"), max_deviation: worst.0, tolerance: cfg.sigma_bound, passed: worst.0 <= cfg.sigma_bound, location: worst.1 })
}

/// `⟨δ₀⊗1⃗⊗ω_∅, e^{−tL̂_k} ρ̂_{0;k}⟩` against `Σ_x e^{ik·x} E|ψ_t(x)|²` at every
/// discrete `k` of the torus.
pub fn floquet_check(cfg: &CrossCheckConfig, exact: &ExactEvolution, generator: &MasterGenerator) -> Result<Verdict, OracleError> {
    let sites = generator.sites();
    let space = AugSpace::new(cfg.hopping.clone(), cfg.potential.clone(), Truncation::torus(cfg.torus.clone(), sites))?;
    let pairing = space.pairing_vector();
    let mut worst = (0.0f64, String::from("none"));
    for k in k_grid(&cfg.torus) {
        let l = space.assemble(&FiberOperator::Generator { lambda: cfg.lambda, rate: cfg.rate, k: k.clone() })?;
        let rho = space.initial_density(&cfg.initial, &k)?;
        let states = integrate_semigroup(&l, &rho.data, &exact.times, cfg.integrator_tol)?;
        for (s, state) in states.iter().enumerate() {
            let fiber = dotc(&pairing.data, state);
            let dft: C64 = (0..sites)
                .map(|x| {
                    let phase: f64 = generator.site_coords(x).iter().zip(&k).map(|(c, kj)| *c as f64 * kj).sum();
                    C64::from_polar(exact.density[s][x], phase)
                })
                .sum();
            let dev = (fiber - dft).norm();
            if dev > worst.0 {
                let ks: Vec<String> = k.iter().map(|v| format!("{v:.6}")).collect();
                worst = (dev, format!("k = ({}), t = {}", ks.join(","), exact.times[s]));
            }
        }
    }
    Ok(Verdict { name: String::from("floquet_fiber"), max_deviation: worst.0, tolerance: cfg.fourier_tol, passed: worst.0 <= cfg.fourier_tol, location: worst.1 })
}

/// Largest entrywise mismatch between the Walsh-coordinate `V̂` and `B` of a
/// full-order torus space and their pointwise forms `ω_X − ω_0` and
/// `r Σ_z (I − F_z)` after conjugation by the Walsh matrix.
pub fn walsh_consistency(h: &HoppingKernel, u: &PeriodicPotential, rate: f64, torus: &[usize]) -> Result<(f64, String), OracleError> {
    let n: usize = torus.iter().product();
    if n > MAX_NOISE_SITES {
        return Err(OracleError::StateSpaceTooLarge { states: 1 << n.min(40), limit: 1 << MAX_NOISE_SITES });
    }
    let space = AugSpace::new(h.clone(), u.clone(), Truncation::torus(torus.to_vec(), n))?;
    let basis = space.walsh();
    let w = walsh_matrix(basis).map(|v| C64::new(v, 0.0));
    let nw = w.nrows();
    let flip_point = pointwise_generator(n, rate).map(|v| C64::new(v, 0.0));
    let signs: Vec<DMatrix<C64>> = (0..n).map(|x| pointwise_sign(n, x).map(|v| C64::new(v, 0.0))).collect();
    let origin = space.origin();
    let cells = space.cells();
    let mut worst = (0.0f64, String::from("none"));
    for (name, op) in [("coupling", FiberOperator::Coupling), ("flip", FiberOperator::Flip { rate })] {
        let full = space.assemble(&op)?;
        for x in 0..space.sites() {
            for sigma in 0..cells {
                let block = DMatrix::from_fn(nw, nw, |a, b| full.get(space.index(x, sigma, a), space.index(x, sigma, b)));
                let point = match name {
                    "flip" => flip_point.clone(),
                    _ if x == origin => DMatrix::zeros(nw, nw),
                    _ => &signs[x] - &signs[origin],
                };
                let dev = (&w * &block - &point * &w).iter().fold(0.0f64, |m, z| m.max(z.norm()));
                if dev > worst.0 {
                    worst = (dev, format!("{name} at site {x}, cell {sigma}"));
                }
            }
        }
    }
    Ok(worst)
}

/// The three verdicts on the configuration's torus.
pub fn cross_checks(cfg: &CrossCheckConfig) -> Result<CrossCheckReport, OracleError> {
    let sites: usize = cfg.torus.iter().product();
    let generator = build_master_generator(&cfg.hopping, &cfg.potential, cfg.lambda, cfg.rate, &cfg.torus, sites)?;
    let rho0 = generator.pure_density(&cfg.initial);
    let exact = propagate_exact(&generator, &rho0, &cfg.times, cfg.integrator_tol)?;
    let mc = monte_carlo_check(cfg, &exact, &generator)?;
    let fl = floquet_check(cfg, &exact, &generator)?;
    let (dev, location) = walsh_consistency(&cfg.hopping, &cfg.potential, cfg.rate, &cfg.torus)?;
    let walsh = Verdict { name: String::from("walsh_consistency"), max_deviation: dev, tolerance: cfg.walsh_tol, passed: dev <= cfg.walsh_tol, location };
    Ok(CrossCheckReport { verdicts: vec![mc, fl, walsh] })
}
