//! Flip-process sampling, the Walsh basis, and the diagonal flip generator.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::rng::{derive_seed, site_key, stream_rng};
use crate::C64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MarkovError {
    #[error("flip rate must be positive, got {0}")]
    NonpositiveRate(f64),
    #[error("time {t} is outside [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("site set is empty")]
    EmptySites,
    #[error("subset order cap {cap} exceeds the site count {sites}")]
    OrderCap { cap: usize, sites: usize },
    #[error("coefficient vector has length {got}, basis has {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

/// Rate and site set of the flip process.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipParams {
    pub rate: f64,
    /// Site coordinates; stream keys are derived from these, not from the order.
    pub sites: Vec<Vec<i64>>,
}

impl FlipParams {
    pub fn new(rate: f64, sites: Vec<Vec<i64>>) -> Result<Self, MarkovError> {
        if !(rate > 0.0) {
            return Err(MarkovError::NonpositiveRate(rate));
        }
        if sites.is_empty() {
            return Err(MarkovError::EmptySites);
        }
        Ok(Self { rate, sites })
    }
}

/// Per-site sign history over `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipSchedule {
    pub horizon: f64,
    pub seed: u64,
    pub initial: Vec<i8>,
    /// Strictly increasing flip times per site, all in `(0, horizon]`.
    pub times: Vec<Vec<f64>>,
}

impl FlipSchedule {
    pub fn total_flips(&self) -> usize {
        self.times.iter().map(Vec::len).sum()
    }

    /// All flips as `(time, site)` sorted by time (ties by site).
    pub fn events(&self) -> Vec<(f64, u32)> {
        let mut ev: Vec<(f64, u32)> = Vec::with_capacity(self.total_flips());
        for (s, ts) in self.times.iter().enumerate() {
            ev.extend(ts.iter().map(|&t| (t, s as u32)));
        }
        ev.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        ev
    }
}

/// Samples one flip schedule for `(seed, params, horizon)`.
pub fn sample_flip_schedule(params: &FlipParams, horizon: f64, seed: u64) -> FlipSchedule {
    let base = derive_seed(seed, 0x666c_6970);
    let mut initial = Vec::with_capacity(params.sites.len());
    let mut times = Vec::with_capacity(params.sites.len());
    for site in &params.sites {
        let (sign, ts) = sample_site(params.rate, horizon, base, site);
        initial.push(sign);
        times.push(ts);
    }
    FlipSchedule { horizon, seed, initial, times }
}

pub(crate) fn sample_site(rate: f64, horizon: f64, base: u64, site: &[i64]) -> (i8, Vec<f64>) {
    let mut rng = stream_rng(base, site_key(site));
    let sign = if rng.gen::<bool>() { 1 } else { -1 };
    let mut ts = Vec::new();
    let mut t = 0.0;
    loop {
        let u: f64 = 1.0 - rng.gen::<f64>();
        t += -libm::log(u) / rate;
        if t > horizon {
            break;
        }
        if ts.last().map_or(true, |&l| t > l) {
            ts.push(t);
        }
    }
    (sign, ts)
}

/// `ω_x(t)`: the initial sign times `(−1)^{#flips in (0, t]}`.
pub fn potential_value(schedule: &FlipSchedule, site: usize, t: f64) -> Result<i8, MarkovError> {
    if !(0.0..=schedule.horizon).contains(&t) {
        return Err(MarkovError::OutOfHorizon { t, horizon: schedule.horizon });
    }
    let flips = schedule.times[site].partition_point(|&s| s <= t);
    let s = schedule.initial[site];
    Ok(if flips % 2 == 0 { s } else { -s })
}

/// Canonical enumeration of subsets of `0..sites` with at most `cap` elements.
///
/// Ranks are ordered by size, then colexicographically, so `∅` has rank 0.
#[derive(Debug, Clone)]
pub struct WalshBasis {
    sites: usize,
    cap: usize,
    binom: Vec<Vec<u64>>,
    offsets: Vec<usize>,
    members: Vec<u32>,
    starts: Vec<u32>,
}

impl WalshBasis {
    pub fn new(sites: usize, cap: usize) -> Result<Self, MarkovError> {
        if cap > sites {
            return Err(MarkovError::OrderCap { cap, sites });
        }
        let mut binom = vec![vec![0u64; cap + 2]; sites + 1];
        for n in 0..=sites {
            binom[n][0] = 1;
            for k in 1..=cap + 1 {
                binom[n][k] = if n == 0 { 0 } else { binom[n - 1][k - 1] + binom[n - 1][k] };
            }
        }
        let mut offsets = vec![0usize; cap + 2];
        for k in 0..=cap {
            offsets[k + 1] = offsets[k] + binom[sites][k] as usize;
        }
        let total = offsets[cap + 1];
        let mut starts = vec![0u32; total + 1];
        let mut members = Vec::new();
        for k in 0..=cap {
            let mut comb: Vec<u32> = (0..k as u32).collect();
            for r in 0..binom[sites][k] as usize {
                let rank = offsets[k] + r;
                starts[rank] = members.len() as u32;
                members.extend_from_slice(&comb);
                next_colex(&mut comb);
            }
        }
        starts[total] = members.len() as u32;
        Ok(Self { sites, cap, binom, offsets, members, starts })
    }

    pub fn len(&self) -> usize {
        self.offsets[self.cap + 1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Sorted members of the subset with this rank.
    pub fn subset(&self, rank: usize) -> &[u32] {
        &self.members[self.starts[rank] as usize..self.starts[rank + 1] as usize]
    }

    /// Rank of a sorted subset, or `None` if it exceeds the cap.
    pub fn rank(&self, sorted: &[u32]) -> Option<usize> {
        let k = sorted.len();
        if k > self.cap {
            return None;
        }
        let mut r = self.offsets[k];
        for (i, &s) in sorted.iter().enumerate() {
            r += self.binom[s as usize][i + 1] as usize;
        }
        Some(r)
    }

    /// Rank of `subset(rank) △ {site}` if within the cap.
    pub fn toggle(&self, rank: usize, site: u32) -> Option<usize> {
        let s = self.subset(rank);
        let mut buf: [u32; 16] = [0; 16];
        let mut v: Vec<u32>;
        let out: &[u32] = match s.binary_search(&site) {
            Ok(pos) => {
                if s.len() - 1 <= 16 {
                    buf[..pos].copy_from_slice(&s[..pos]);
                    buf[pos..s.len() - 1].copy_from_slice(&s[pos + 1..]);
                    &buf[..s.len() - 1]
                } else {
                    v = s.to_vec();
                    v.remove(pos);
                    &v
                }
            }
            Err(pos) => {
                if s.len() + 1 > self.cap {
                    return None;
                }
                if s.len() < 16 {
                    buf[..pos].copy_from_slice(&s[..pos]);
                    buf[pos] = site;
                    buf[pos + 1..s.len() + 1].copy_from_slice(&s[pos..]);
                    &buf[..s.len() + 1]
                } else {
                    v = s.to_vec();
                    v.insert(pos, site);
                    &v
                }
            }
        };
        self.rank(out)
    }

    /// Rank of the image of `subset(rank)` under a site map, if every image exists.
    pub fn map_subset(&self, rank: usize, map: impl Fn(u32) -> Option<u32>) -> Option<usize> {
        let s = self.subset(rank);
        let mut v: Vec<u32> = Vec::with_capacity(s.len());
        for &x in s {
            v.push(map(x)?);
        }
        v.sort_unstable();
        self.rank(&v)
    }
}

fn next_colex(comb: &mut [u32]) {
    let k = comb.len();
    for i in 0..k {
        if i + 1 == k || comb[i] + 1 < comb[i + 1] {
            comb[i] += 1;
            for (j, c) in comb.iter_mut().enumerate().take(i) {
                *c = j as u32;
            }
            return;
        }
    }
}

/// Applies `B` in Walsh coordinates: the coefficient at `S` times `2r|S|`.
pub fn apply_flip_generator(coeffs: &[C64], basis: &WalshBasis, rate: f64) -> Result<Vec<C64>, MarkovError> {
    if coeffs.len() != basis.len() {
        return Err(MarkovError::LengthMismatch { got: coeffs.len(), expected: basis.len() });
    }
    Ok(coeffs
        .iter()
        .enumerate()
        .map(|(r, &c)| c * (2.0 * rate * basis.subset(r).len() as f64))
        .collect())
}

/// Constants of the flip process entering the gap estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovConstants {
    /// Inverse of the smallest nonzero eigenvalue of `B`.
    pub relaxation_time: f64,
    /// `‖B⁻¹(ω_x − ω_0)‖` for `x ≠ 0`.
    pub chi: f64,
    pub gamma: f64,
    pub b: f64,
}

pub fn markov_constants(rate: f64) -> Result<MarkovConstants, MarkovError> {
    if !(rate > 0.0) {
        return Err(MarkovError::NonpositiveRate(rate));
    }
    Ok(MarkovConstants {
        relaxation_time: 1.0 / (2.0 * rate),
        chi: core::f64::consts::SQRT_2 / (2.0 * rate),
        gamma: 0.0,
        b: 0.0,
    })
}

/// The jump generator `r Σ_x (I − F_x)` on functions of `{±1}^n`; the state
/// with bit `x` set has `ω_x = −1`.
pub fn pointwise_generator(n: usize, rate: f64) -> nalgebra::DMatrix<f64> {
    let dim = 1usize << n;
    let mut g = nalgebra::DMatrix::zeros(dim, dim);
    for s in 0..dim {
        for x in 0..n {
            g[(s, s)] += rate;
            g[(s, s ^ (1 << x))] -= rate;
        }
    }
    g
}

/// Columns are the Walsh functions `ω_S` evaluated on the `2^n` states, in the
/// rank order of `basis` (which must have `cap = n`).
pub fn walsh_matrix(basis: &WalshBasis) -> nalgebra::DMatrix<f64> {
    let n = basis.sites();
    let dim = 1usize << n;
    nalgebra::DMatrix::from_fn(dim, basis.len(), |state, rank| {
        basis
            .subset(rank)
            .iter()
            .fold(1.0, |acc, &x| if state & (1 << x) != 0 { -acc } else { acc })
    })
}

/// `ω_x` as a diagonal multiplication on the `2^n` states.
pub fn pointwise_sign(n: usize, site: usize) -> nalgebra::DMatrix<f64> {
    let dim = 1usize << n;
    nalgebra::DMatrix::from_fn(dim, dim, |a, b| {
        if a != b {
            0.0
        } else if a & (1 << site) != 0 {
            -1.0
        } else {
            1.0
        }
    })
}

/// Pointwise-basis coefficient vector `f(ω)` corresponding to Walsh coefficients.
pub fn walsh_to_pointwise(basis: &WalshBasis, coeffs: &[C64]) -> Vec<C64> {
    let w = walsh_matrix(basis);
    (0..w.nrows())
        .map(|s| (0..w.ncols()).map(|r| coeffs[r] * w[(s, r)]).sum())
        .collect()
}
