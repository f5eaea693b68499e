//! Exhaustive small-N computations on `Grid^N`: Gibbs measures, sequential
//! conditional laws, modulated free energy, N-particle Fisher information,
//! theorem constants and inequality audits.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::MeanFieldModel;
use crate::grid::{check_len, relative_entropy, Grid, GridMeasure};
use crate::kernel::{ModeKernel, RegularityBudget};

/// Largest admissible number of configurations `M^N`.
pub const STATE_CAP: usize = 1 << 22;
const BLOCK: usize = 4096;

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Neumaier {
    sum: f64,
    c: f64,
}

impl Neumaier {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn total(self) -> f64 {
        self.sum + self.c
    }
}

pub(crate) fn csum(it: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = Neumaier::default();
    for x in it {
        s.add(x);
    }
    s.total()
}

/// Exact joint law on `Grid^N`, row-major with particle 1 slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigDistribution {
    grid: Arc<Grid>,
    n: usize,
    weights: Vec<f64>,
}

pub(crate) fn state_count(m: usize, n: usize) -> Result<usize> {
    let mut s: usize = 1;
    for _ in 0..n {
        s = s
            .checked_mul(m)
            .filter(|&v| v <= STATE_CAP)
            .ok_or(Error::StateSpaceTooLarge {
                states: m.saturating_pow(n as u32),
                cap: STATE_CAP,
            })?;
    }
    Ok(s)
}

fn check_n(n: usize) -> Result<()> {
    if !(2..=6).contains(&n) {
        return Err(Error::OutOfRange(format!(
            "particle count N = {n} outside 2..=6"
        )));
    }
    Ok(())
}

impl ConfigDistribution {
    /// Normalise raw nonnegative configuration weights.
    pub fn new(grid: &Arc<Grid>, n: usize, raw: &[f64]) -> Result<ConfigDistribution> {
        check_n(n)?;
        let states = state_count(grid.len(), n)?;
        check_len(states, raw.len())?;
        for (idx, &v) in raw.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { idx });
            }
            if v < 0.0 {
                return Err(Error::Negative { idx, value: v });
            }
        }
        let total = csum(raw.iter().copied());
        if total <= 0.0 {
            return Err(Error::AllZero);
        }
        Ok(ConfigDistribution {
            grid: grid.clone(),
            n,
            weights: raw.iter().map(|v| v / total).collect(),
        })
    }

    /// Normalise `exp(logw)` stably.
    pub fn from_log_weights(
        grid: &Arc<Grid>,
        n: usize,
        logw: &[f64],
    ) -> Result<ConfigDistribution> {
        let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::AllZero);
        }
        let raw: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
        ConfigDistribution::new(grid, n, &raw)
    }

    /// Tensor product of one-particle laws.
    pub fn product(factors: &[GridMeasure]) -> Result<ConfigDistribution> {
        let n = factors.len();
        check_n(n)?;
        let grid = factors[0].grid().clone();
        for f in factors {
            crate::grid::same_grid(f, &factors[0])?;
        }
        let states = state_count(grid.len(), n)?;
        let mut w = vec![1.0; states];
        let mut coords = vec![0; n];
        for (idx, wi) in w.iter_mut().enumerate() {
            decode(idx, grid.len(), &mut coords);
            for (f, &c) in factors.iter().zip(&coords) {
                *wi *= f.weights()[c];
            }
        }
        Ok(ConfigDistribution {
            grid,
            n,
            weights: w,
        })
    }

    /// `ν^{⊗N}`.
    pub fn iid(nu: &GridMeasure, n: usize) -> Result<ConfigDistribution> {
        ConfigDistribution::product(&vec![nu.clone(); n])
    }

    /// `m^N_* ∝ exp(−(N/2)⟨W_m, μ_x^{⊗2}⟩) Π m(x_i)`.
    pub fn gibbs_measure(model: &MeanFieldModel, n: usize) -> Result<ConfigDistribution> {
        let logw = gibbs_log_weights(model, n)?;
        ConfigDistribution::from_log_weights(model.grid(), n, &logw)
    }

    pub(crate) fn from_parts(grid: &Arc<Grid>, n: usize, weights: Vec<f64>) -> ConfigDistribution {
        ConfigDistribution {
            grid: grid.clone(),
            n,
            weights,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn decode(&self, idx: usize) -> Vec<usize> {
        let mut c = vec![0; self.n];
        decode(idx, self.grid.len(), &mut c);
        c
    }

    pub fn encode(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.grid.len() + c)
    }

    /// Stride of particle `k` (0-based) in the flat index.
    pub fn stride(&self, k: usize) -> usize {
        self.grid.len().pow((self.n - 1 - k) as u32)
    }

    fn same_shape(&self, other: &ConfigDistribution) -> Result<()> {
        if self.n != other.n || *self.grid != *other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// `E_{x∼ν^N}[f(idx, x)]` with deterministic blockwise compensated sums.
    pub fn expect<F>(&self, f: F) -> f64
    where
        F: Fn(usize, &[usize]) -> f64 + Sync,
    {
        let m = self.grid.len();
        let n = self.n;
        let nb = self.weights.len().div_ceil(BLOCK);
        let parts: Vec<f64> = (0..nb)
            .into_par_iter()
            .map(|b| {
                let mut coords = vec![0; n];
                let mut s = Neumaier::default();
                let hi = ((b + 1) * BLOCK).min(self.weights.len());
                for idx in b * BLOCK..hi {
                    let w = self.weights[idx];
                    if w > 0.0 {
                        decode(idx, m, &mut coords);
                        s.add(w * f(idx, &coords));
                    }
                }
                s.total()
            })
            .collect();
        csum(parts)
    }

    /// Law of particle `k` (0-based).
    pub fn marginal(&self, k: usize) -> Result<GridMeasure> {
        let m = self.grid.len();
        let s = self.stride(k);
        let mut raw = vec![0.0; m];
        for (idx, w) in self.weights.iter().enumerate() {
            raw[(idx / s) % m] += w;
        }
        GridMeasure::normalize(&raw, &self.grid)
    }

    fn transposed(&self, k: usize) -> Vec<f64> {
        let m = self.grid.len();
        let (sa, sb) = (self.stride(k), self.stride(k + 1));
        (0..self.weights.len())
            .map(|idx| {
                let a = (idx / sa) % m;
                let b = (idx / sb) % m;
                let j = idx - a * sa - b * sb + b * sa + a * sb;
                self.weights[j]
            })
            .collect()
    }

    /// Exchangeability under every adjacent transposition, to `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n - 1).all(|k| {
            self.transposed(k)
                .iter()
                .zip(&self.weights)
                .all(|(a, b)| (a - b).abs() <= tol)
        })
    }

    /// Average over all particle permutations.
    pub fn symmetrized(&self) -> ConfigDistribution {
        let perms = permutations(self.n);
        let m = self.grid.len();
        let mut out = vec![0.0; self.weights.len()];
        let mut coords = vec![0; self.n];
        let mut moved = vec![0; self.n];
        for (idx, o) in out.iter_mut().enumerate() {
            decode(idx, m, &mut coords);
            let mut s = Neumaier::default();
            for p in &perms {
                for (k, &pk) in p.iter().enumerate() {
                    moved[k] = coords[pk];
                }
                s.add(self.weights[moved.iter().fold(0, |acc, &c| acc * m + c)]);
            }
            *o = s.total() / perms.len() as f64;
        }
        ConfigDistribution {
            grid: self.grid.clone(),
            n: self.n,
            weights: out,
        }
    }

    /// `H(ν^N | m^{⊗N})`.
    pub fn relative_entropy_product(&self, m: &GridMeasure) -> Result<f64> {
        check_len(self.grid.len(), m.len())?;
        let logm: Vec<f64> = m.weights().iter().map(|p| p.ln()).collect();
        let mut bad = None;
        for (idx, &w) in self.weights.iter().enumerate() {
            if w > 0.0 {
                let c = self.decode(idx);
                if let Some(&k) = c.iter().find(|&&k| m.weights()[k] <= 0.0) {
                    bad = Some(k);
                    break;
                }
            }
        }
        if let Some(idx) = bad {
            return Err(Error::SupportViolation { idx });
        }
        let h =
            self.expect(|idx, c| self.weights[idx].ln() - c.iter().map(|&k| logm[k]).sum::<f64>());
        Ok(h.max(0.0))
    }

    /// `H(ν^N | ref)` for another configuration law.
    pub fn relative_entropy(&self, reference: &ConfigDistribution) -> Result<f64> {
        self.same_shape(reference)?;
        for (idx, (&p, &q)) in self.weights.iter().zip(&reference.weights).enumerate() {
            if p > 0.0 && q <= 0.0 {
                return Err(Error::SupportViolation { idx });
            }
        }
        Ok(self
            .expect(|idx, _| (self.weights[idx] / reference.weights[idx]).ln())
            .max(0.0))
    }

    /// Total variation distance.
    pub fn tv_distance(&self, other: &ConfigDistribution) -> Result<f64> {
        self.same_shape(other)?;
        Ok(0.5
            * csum(
                self.weights
                    .iter()
                    .zip(&other.weights)
                    .map(|(a, b)| (a - b).abs()),
            ))
    }

    /// `E⟨U, μ_x^{⊗2}⟩`.
    pub fn expected_energy(&self, u: &ModeKernel) -> f64 {
        self.expect(|_, c| empirical_energy(u, c))
    }

    /// `F^N(ν^N|m) = H(ν^N|m^{⊗N}) + (N/2) E⟨W_m, μ_x^{⊗2}⟩`.
    pub fn modulated_free_energy(&self, model: &MeanFieldModel) -> Result<f64> {
        let h = self.relative_entropy_product(model.reference())?;
        Ok(h + 0.5 * self.n as f64 * self.expected_energy(model.reduced()))
    }

    /// `Σ_i Σ_x ν(x) (D_i log(ν/ref))(x)²` with per-axis central differences.
    pub fn fisher(&self, reference: &ConfigDistribution) -> Result<f64> {
        self.same_shape(reference)?;
        let mut logr = Vec::with_capacity(self.len());
        for (idx, (&p, &q)) in self.weights.iter().zip(&reference.weights).enumerate() {
            if p <= 0.0 || q <= 0.0 {
                return Err(Error::ZeroDensity { idx });
            }
            logr.push(p.ln() - q.ln());
        }
        let g = &self.grid;
        let h = g.dx();
        let strides: Vec<usize> = (0..self.n).map(|k| self.stride(k)).collect();
        Ok(self.expect(|idx, c| {
            let mut s = 0.0;
            for (k, &st) in strides.iter().enumerate() {
                let at = |j: usize| idx - c[k] * st + j * st;
                let d = match (g.left(c[k]), g.right(c[k])) {
                    (Some(l), Some(r)) => (logr[at(r)] - logr[at(l)]) / (2.0 * h),
                    (None, Some(r)) => (logr[at(r)] - logr[idx]) / h,
                    (Some(l), None) => (logr[idx] - logr[at(l)]) / h,
                    (None, None) => 0.0,
                };
                s += d * d;
            }
            s
        }))
    }

    /// Sequential conditional laws `ν_k(·|x^{[k−1]})`.
    pub fn conditional_decomposition(&self) -> ConditionalDecomposition {
        let m = self.grid.len();
        let n = self.n;
        let mut prefix = vec![Vec::new(); n + 1];
        prefix[n] = self.weights.clone();
        for k in (0..n).rev() {
            let next = &prefix[k + 1];
            prefix[k] = (0..m.pow(k as u32))
                .map(|p| csum(next[p * m..(p + 1) * m].iter().copied()))
                .collect();
        }
        let mut conds = Vec::with_capacity(n);
        let mut zero_prefixes = 0;
        for k in 0..n {
            let mut t = vec![0.0; m.pow(k as u32 + 1)];
            for (p, &mass) in prefix[k].iter().enumerate() {
                let row = &mut t[p * m..(p + 1) * m];
                if mass > 0.0 {
                    for (y, v) in row.iter_mut().enumerate() {
                        *v = prefix[k + 1][p * m + y] / mass;
                    }
                } else {
                    zero_prefixes += 1;
                    row.iter_mut().for_each(|v| *v = 1.0 / m as f64);
                }
            }
            conds.push(t);
        }
        ConditionalDecomposition {
            grid: self.grid.clone(),
            n,
            prefix,
            conds,
            zero_prefixes,
        }
    }
}

/// Unnormalised log-weights of the N-particle Gibbs measure.
pub fn gibbs_log_weights(model: &MeanFieldModel, n: usize) -> Result<Vec<f64>> {
    check_n(n)?;
    let grid = model.grid().clone();
    let states = state_count(grid.len(), n)?;
    let logm: Vec<f64> = model.reference().weights().iter().map(|p| p.ln()).collect();
    let wm = model.reduced();
    let logw: Vec<f64> = (0..states)
        .into_par_iter()
        .map_init(
            || vec![0usize; n],
            |coords, idx| {
                decode(idx, grid.len(), coords);
                let e = 0.5 * n as f64 * empirical_energy(wm, coords);
                let base: f64 = coords.iter().map(|&c| logm[c]).sum();
                (base, e)
            },
        )
        .map(|(b, e)| {
            if e.abs() > crate::tilts::EXP_GUARD {
                f64::NAN
            } else {
                b - e
            }
        })
        .collect();
    if let Some(i) = logw.iter().position(|v| v.is_nan()) {
        let mut coords = vec![0; n];
        decode(i, grid.len(), &mut coords);
        return Err(Error::Overflow {
            exponent: 0.5 * n as f64 * empirical_energy(wm, &coords),
        });
    }
    Ok(logw)
}

fn decode(mut idx: usize, m: usize, coords: &mut [usize]) {
    for c in coords.iter_mut().rev() {
        *c = idx % m;
        idx /= m;
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    heap_permute(n, &mut p, &mut out);
    out
}

fn heap_permute(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if k <= 1 {
        out.push(p.clone());
        return;
    }
    for i in 0..k {
        heap_permute(k - 1, p, out);
        if k % 2 == 0 {
            p.swap(i, k - 1);
        } else {
            p.swap(0, k - 1);
        }
    }
}

/// `⟨U, μ_x^{⊗2}⟩` for the empirical measure of a configuration.
pub fn empirical_energy(u: &ModeKernel, coords: &[usize]) -> f64 {
    let inv = 1.0 / coords.len() as f64;
    u.modes()
        .iter()
        .map(|m| {
            let c: f64 = coords.iter().map(|&k| m.r[k]).sum::<f64>() * inv;
            m.weight * c * c
        })
        .sum()
}

/// Conditional tables of a configuration law.
#[derive(Debug, Clone)]
pub struct ConditionalDecomposition {
    grid: Arc<Grid>,
    n: usize,
    /// `prefix[k]` is the law of the first `k` particles (length `M^k`).
    prefix: Vec<Vec<f64>>,
    /// `conds[k]` holds rows `ν_{k+1}(·|p)` for every prefix `p` of length `k`.
    conds: Vec<Vec<f64>>,
    zero_prefixes: usize,
}

impl ConditionalDecomposition {
    /// Number of prefixes with zero mass (given uniform conditionals).
    pub fn zero_prefixes(&self) -> usize {
        self.zero_prefixes
    }

    /// Conditional law of particle `k` (0-based) given the prefix index.
    pub fn conditional(&self, k: usize, prefix: usize) -> &[f64] {
        let m = self.grid.len();
        &self.conds[k][prefix * m..(prefix + 1) * m]
    }

    pub fn prefix_law(&self, k: usize) -> &[f64] {
        &self.prefix[k]
    }

    /// Prefix index of particle `k` inside a full configuration index.
    pub fn prefix_of(&self, idx: usize, k: usize) -> usize {
        idx / self.grid.len().pow((self.n - k) as u32)
    }

    /// Product of conditionals along a configuration.
    pub fn chain_product(&self, idx: usize) -> f64 {
        let m = self.grid.len();
        let mut coords = vec![0; self.n];
        decode(idx, m, &mut coords);
        (0..self.n)
            .map(|k| self.conditional(k, self.prefix_of(idx, k))[coords[k]])
            .product()
    }

    /// `⟨r_a, ν_k(·|p)⟩` for every mode, prefix and particle.
    fn mode_moments(&self, u: &ModeKernel) -> Vec<Vec<Vec<f64>>> {
        let m = self.grid.len();
        (0..self.n)
            .map(|k| {
                (0..m.pow(k as u32))
                    .map(|p| {
                        let row = self.conditional(k, p);
                        u.modes()
                            .iter()
                            .map(|md| csum(md.r.iter().zip(row).map(|(a, b)| a * b)))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// `Σ_k E[H(ν_k|m)]`.
    pub fn expected_conditional_entropy(&self, m: &GridMeasure) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n);
        for k in 0..self.n {
            let mut s = Neumaier::default();
            for (p, &mass) in self.prefix[k].iter().enumerate() {
                if mass > 0.0 {
                    let row = GridMeasure::normalize(self.conditional(k, p), &self.grid)?;
                    s.add(mass * relative_entropy(&row, m)?);
                }
            }
            out.push(s.total());
        }
        Ok(out)
    }
}

/// Both sides of the chain rule `H(ν^N|m^{⊗N}) = Σ_k E[H(ν_k|m)]`.
pub fn chain_rule(nu: &ConfigDistribution, m: &GridMeasure) -> Result<(f64, f64)> {
    let dec = nu.conditional_decomposition();
    let lhs = nu.relative_entropy_product(m)?;
    let rhs = csum(dec.expected_conditional_entropy(m)?);
    Ok((lhs, rhs))
}

/// `(1/N) Σ_k E[H(ν_k|m)] − E[H(ν̄|m)]`, nonnegative by convexity.
pub fn flat_convexity_margin(nu: &ConfigDistribution, m: &GridMeasure) -> Result<f64> {
    let dec = nu.conditional_decomposition();
    let avg = csum(dec.expected_conditional_entropy(m)?) / nu.n as f64;
    let g = nu.grid.len();
    let n = nu.n;
    let logm: Vec<f64> = m.weights().iter().map(|p| p.ln()).collect();
    let mix = nu.expect(|idx, _| {
        let mut bar = vec![0.0; g];
        for k in 0..n {
            for (b, v) in bar
                .iter_mut()
                .zip(dec.conditional(k, dec.prefix_of(idx, k)))
            {
                *b += v / n as f64;
            }
        }
        bar.iter()
            .zip(&logm)
            .filter(|(b, _)| **b > 0.0)
            .map(|(b, lm)| b * (b.ln() - lm))
            .sum()
    });
    Ok(avg - mix)
}

/// Sides and slacks of the conditional-approximation identities and bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproxReport {
    /// `E⟨U, (μ_x − ν̄)^{⊗2}⟩`.
    pub martingale_lhs: f64,
    /// `(1/N²) Σ_k E⟨U, (δ_{X^k} − ν_k)^{⊗2}⟩`.
    pub martingale_rhs: f64,
    pub positive_kernel: bool,
    /// Slacks of the two Cauchy–Schwarz comparisons of `μ_x` and `ν̄`.
    pub comparison_margins: Option<[f64; 2]>,
    /// Slack of the bound on `E|⟨U, ν_N ⊗ (μ_x − ν̄)⟩|`.
    pub cross_margin: Option<f64>,
    pub symmetric: bool,
    /// `E⟨U, ν_N ⊗ ν̄⟩` against `(1/N) Σ_k E⟨U, ν_k^{⊗2}⟩`.
    pub tower: Option<(f64, f64)>,
    /// Upper and lower slacks of the reversed-Jensen bounds.
    pub reversed_jensen_margins: Option<[f64; 2]>,
    /// `4 M_U − E⟨U, (δ_{X^k} − ν_k)^{⊗2}⟩` per particle for bounded kernels.
    pub error_control_margins: Option<Vec<f64>>,
    pub zero_prefixes: usize,
}

/// Evaluate the conditional-approximation identities for `ν^N` and `U`.
pub fn approx_identities(
    nu: &ConfigDistribution,
    u: &ModeKernel,
    epsilon: f64,
) -> Result<ApproxReport> {
    if !(epsilon > 0.0) {
        return Err(Error::OutOfRange(format!(
            "epsilon = {epsilon} must be positive"
        )));
    }
    let dec = nu.conditional_decomposition();
    let cm = dec.mode_moments(u);
    let n = nu.n;
    let nf = n as f64;
    let modes = u.modes();
    let a_count = modes.len();

    // Per-configuration pieces: empirical moments, mixture moments, last conditional.
    let bar = |idx: usize| -> Vec<f64> {
        let mut b = vec![0.0; a_count];
        for (k, cmk) in cm.iter().enumerate() {
            for (ba, v) in b.iter_mut().zip(&cmk[dec.prefix_of(idx, k)]) {
                *ba += v / nf;
            }
        }
        b
    };
    let emp = |c: &[usize]| -> Vec<f64> {
        modes
            .iter()
            .map(|m| c.iter().map(|&k| m.r[k]).sum::<f64>() / nf)
            .collect()
    };
    let quad = |x: &[f64], y: &[f64]| -> f64 {
        modes
            .iter()
            .zip(x.iter().zip(y))
            .map(|(m, (a, b))| m.weight * a * b)
            .sum()
    };
    let diff = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(a, b)| a - b).collect() };

    let martingale_lhs = nu.expect(|idx, c| {
        let d = diff(&emp(c), &bar(idx));
        quad(&d, &d)
    });
    let per_k: Vec<f64> = (0..n)
        .map(|k| {
            nu.expect(|idx, c| {
                let own: Vec<f64> = modes.iter().map(|m| m.r[c[k]]).collect();
                let d = diff(&own, &cm[k][dec.prefix_of(idx, k)]);
                quad(&d, &d)
            })
        })
        .collect();
    let s = csum(per_k.iter().copied());
    let martingale_rhs = s / (nf * nf);

    let positive_kernel = modes.iter().all(|m| m.weight >= 0.0);
    let e_mu = nu.expect(|_, c| {
        let e = emp(c);
        quad(&e, &e)
    });
    let e_bar = nu.expect(|idx, _| {
        let b = bar(idx);
        quad(&b, &b)
    });
    let last = |idx: usize| -> &Vec<f64> { &cm[n - 1][dec.prefix_of(idx, n - 1)] };
    let e_last = nu.expect(|idx, _| quad(last(idx), last(idx)));
    let (mut comparison_margins, mut cross_margin) = (None, None);
    if positive_kernel {
        let err = (1.0 + 1.0 / epsilon) * martingale_rhs;
        comparison_margins = Some([
            (1.0 + epsilon) * e_bar + err - e_mu,
            (1.0 + epsilon) * e_mu + err - e_bar,
        ]);
        let cross = nu.expect(|idx, c| quad(last(idx), &diff(&emp(c), &bar(idx))).abs());
        cross_margin = Some(epsilon * e_last + s / (4.0 * epsilon * nf * nf) - cross);
    }

    let symmetric = nu.is_symmetric(1e-12);
    let (mut tower, mut reversed_jensen_margins) = (None, None);
    if symmetric {
        let lhs = nu.expect(|idx, _| quad(last(idx), &bar(idx)));
        let rhs = csum((0..n).map(|k| {
            nu.expect(|idx, _| {
                let v = &cm[k][dec.prefix_of(idx, k)];
                quad(v, v)
            })
        })) / nf;
        tower = Some((lhs, rhs));
        if positive_kernel {
            let tail = s / (4.0 * epsilon * nf * nf);
            let upper = e_mu + epsilon * e_last + tail - rhs;
            let lower = rhs - (e_mu - epsilon * e_last - per_k[n - 1] / nf - tail);
            reversed_jensen_margins = Some([upper, lower]);
        }
    }

    let bounded = modes
        .iter()
        .all(|m| m.class == crate::kernel::ModeClass::Bounded);
    let error_control_margins = if positive_kernel && bounded {
        let m_u = u.double_oscillation()? / 4.0;
        Some(per_k.iter().map(|v| 4.0 * m_u - v).collect())
    } else {
        None
    };

    Ok(ApproxReport {
        martingale_lhs,
        martingale_rhs,
        positive_kernel,
        comparison_margins,
        cross_margin,
        symmetric,
        tower,
        reversed_jensen_margins,
        error_control_margins,
        zero_prefixes: dec.zero_prefixes(),
    })
}

/// Which constant pack to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    Coer,
    Contr1,
    Contr2,
    IpCoer,
    IpContr,
    EntropyCoer,
    Defective,
}

impl Theorem {
    pub fn name(self) -> &'static str {
        match self {
            Theorem::Coer => "coer",
            Theorem::Contr1 => "contr1",
            Theorem::Contr2 => "contr2",
            Theorem::IpCoer => "ip_coer",
            Theorem::IpContr => "ip_contr",
            Theorem::EntropyCoer => "entropy_coer",
            Theorem::Defective => "defective",
        }
    }
}

impl FromStr for Theorem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "coer" => Theorem::Coer,
            "contr1" => Theorem::Contr1,
            "contr2" => Theorem::Contr2,
            "ip_coer" => Theorem::IpCoer,
            "ip_contr" => Theorem::IpContr,
            "entropy_coer" => Theorem::EntropyCoer,
            "defective" => Theorem::Defective,
            other => return Err(Error::OutOfRange(format!("unknown theorem `{other}`"))),
        })
    }
}

/// Inputs shared by every constant pack; the state-space dimension is 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremInputs {
    pub n: usize,
    pub delta: f64,
    pub epsilon: f64,
    /// Mean-field Polyak–Łojasiewicz constant, needed by `contr2`.
    pub lambda: Option<f64>,
    pub budget: RegularityBudget,
}

/// Evaluated constants. Entries not produced by a theorem stay `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremConstants {
    pub theorem: Theorem,
    pub inputs: TheoremInputs,
    pub delta_n: Option<f64>,
    pub delta_f: Option<f64>,
    pub lambda_n: Option<f64>,
    pub delta_i: Option<f64>,
    /// `Δ_I` with the sign exactly as displayed where it differs from the
    /// reading used for audits.
    pub delta_i_verbatim: Option<f64>,
    /// Additive constant of the audited inequality.
    pub offset: Option<f64>,
    /// Offset of the long-time entropy bound as displayed (`contr` variant).
    pub offset_verbatim: Option<f64>,
    pub w1_constant: Option<f64>,
    /// The produced rate is nonpositive or a size hypothesis fails.
    pub vacuous: bool,
    pub formula: &'static str,
}

impl TheoremConstants {
    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (k, v) in [
            ("delta_N", self.delta_n),
            ("Delta_F", self.delta_f),
            ("lambda_N", self.lambda_n),
            ("Delta_I", self.delta_i),
            ("Delta_I_verbatim", self.delta_i_verbatim),
            ("offset", self.offset),
            ("offset_verbatim", self.offset_verbatim),
            ("W1_constant", self.w1_constant),
        ] {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        }
        m
    }
}

const D: f64 = 1.0;

/// Evaluate the displayed constants of a theorem.
pub fn theorem_constants(theorem: Theorem, inputs: TheoremInputs) -> Result<TheoremConstants> {
    let TheoremInputs {
        n,
        delta,
        epsilon,
        lambda,
        budget,
    } = inputs;
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::OutOfRange(format!("delta = {delta} outside (0, 1]")));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::OutOfRange(format!(
            "epsilon = {epsilon} outside (0, 1]"
        )));
    }
    if n < 2 {
        return Err(Error::OutOfRange(format!("N = {n} must be at least 2")));
    }
    let nf = n as f64;
    let (m_w, l_w) = (budget.m_w, budget.ell_w());
    let (mu_r, l_r) = (budget.mu_r(), budget.ell_r());
    let (rho, rho_pi) = (budget.rho, budget.rho_pi);
    let mut out = TheoremConstants {
        theorem,
        inputs,
        delta_n: None,
        delta_f: None,
        lambda_n: None,
        delta_i: None,
        delta_i_verbatim: None,
        offset: None,
        offset_verbatim: None,
        w1_constant: None,
        vacuous: false,
        formula: "verbatim",
    };
    let coer = || {
        let k = 1.0 + (m_w + l_w) / (epsilon * delta);
        let dn = (1.0 - epsilon) * delta - k * 2.0 * l_w / nf;
        let df = 2.0 * k * (m_w + l_w * D);
        (dn, df)
    };
    let contr1 = || {
        let k = 1.0 + (m_w + l_w) * (1.0 + mu_r + l_r) / (delta * delta * epsilon);
        let ln = delta
            * rho_pi
            * (1.0
                - epsilon
                - 8.0 * rho * l_r / (rho_pi * epsilon * delta * delta * nf)
                - 48.0 * l_w / (delta * delta * nf) * k);
        let di = 2.0
            * rho_pi
            * (8.0 * rho / (rho_pi * epsilon) * (mu_r + l_r * D) + 48.0 * k * (m_w + l_w * D));
        (ln, di)
    };
    match theorem {
        Theorem::Coer => {
            let (dn, df) = coer();
            out.delta_n = Some(dn);
            out.delta_f = Some(df);
            out.offset = Some(df);
            out.vacuous = dn <= 0.0;
        }
        Theorem::EntropyCoer => {
            let (dn, df) = coer();
            let off = df + 2.0 * m_w + 2.0 * l_w * D;
            out.delta_n = Some(dn);
            out.delta_f = Some(df);
            out.offset = Some(off);
            out.w1_constant = Some(dn * rho / (64.0 * (1.0 + off).powi(2)));
            out.vacuous = dn <= 0.0;
        }
        Theorem::Contr1 => {
            let (ln, di) = contr1();
            out.lambda_n = Some(ln);
            out.delta_i = Some(di);
            out.offset = Some(di);
            out.vacuous = ln <= 0.0;
        }
        Theorem::Contr2 => {
            let lam = lambda
                .filter(|l| *l > 0.0)
                .ok_or_else(|| Error::OutOfRange("contr2 needs a positive lambda".into()))?;
            let eta = lam / rho;
            let a = (1.0 + mu_r + l_r) * (1.0 + (mu_r + l_r) / (delta * eta));
            let b = 1.0 + (m_w + l_w) * (1.0 + (mu_r + l_r) / delta) / epsilon;
            let ln = lam
                * (1.0
                    - epsilon
                    - 12.0 * l_r / (epsilon * delta * eta * nf) * a
                    - 48.0 * l_w / (delta * nf) * b);
            let first = 12.0 * (mu_r + l_r * D) / epsilon * a;
            let second = 48.0 * eta * (m_w + l_w * D) * b;
            out.lambda_n = Some(ln);
            out.delta_i = Some(2.0 * rho * (first + second));
            out.delta_i_verbatim = Some(2.0 * rho * (first - second));
            out.offset = out.delta_i;
            out.vacuous = ln <= 0.0;
        }
        Theorem::IpCoer => {
            let dn = delta - (1.0 + m_w + l_w) / (nf - 1.0);
            out.delta_n = Some(dn);
            out.vacuous = dn <= 0.0;
        }
        Theorem::IpContr => {
            let c = 1.0 + m_w + l_w;
            let ok = nf > c / delta + 1.0;
            let ln = 2.0 * rho_pi * (delta - 2.0 * c / ((nf - 1.0) * delta - c));
            out.lambda_n = Some(ln);
            out.vacuous = !ok || ln <= 0.0;
        }
        Theorem::Defective => {
            let (dn, df) = coer();
            let (ln, di) = contr1();
            out.delta_n = Some(dn);
            out.delta_f = Some(df);
            out.lambda_n = Some(ln);
            out.delta_i = Some(di);
            out.offset = Some(di + 2.0 * ln * df);
            out.offset_verbatim = Some(-di / (2.0 * ln) - df);
            out.vacuous = dn <= 0.0 || ln <= 0.0;
        }
    }
    Ok(out)
}

/// Signed audit of one inequality on an exact configuration law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub theorem: String,
    pub inputs: BTreeMap<String, f64>,
    pub constants: BTreeMap<String, f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_config: Option<Vec<usize>>,
}

fn inputs_map(i: &TheoremInputs) -> BTreeMap<String, f64> {
    let b = &i.budget;
    let mut m = BTreeMap::new();
    for (k, v) in [
        ("N", i.n as f64),
        ("d", D),
        ("delta", i.delta),
        ("epsilon", i.epsilon),
        ("M_W", b.m_w),
        ("L_W", b.l_w),
        ("M_R", b.m_r),
        ("L_R", b.l_r),
        ("rho", b.rho),
        ("rho_Pi", b.rho_pi),
        ("ell_W", b.ell_w()),
        ("mu_R", b.mu_r()),
        ("ell_R", b.ell_r()),
    ] {
        m.insert(k.to_string(), v);
    }
    if let Some(l) = i.lambda {
        m.insert("lambda".into(), l);
    }
    m
}

fn witness(nu: &ConfigDistribution, margin: f64) -> Option<Vec<usize>> {
    if margin >= 0.0 {
        return None;
    }
    let (idx, _) = nu
        .weights
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &w)| if w > acc.1 { (i, w) } else { acc },
        );
    Some(nu.decode(idx))
}

/// Audit the inequality attached to `constants` at `ν^N`.
pub fn inequality_audit(
    nu: &ConfigDistribution,
    model: &MeanFieldModel,
    constants: &TheoremConstants,
) -> Result<AuditReport> {
    if nu.n != constants.inputs.n {
        return Err(Error::OutOfRange(format!(
            "distribution has N = {}, constants were evaluated at N = {}",
            nu.n, constants.inputs.n
        )));
    }
    let need = |v: Option<f64>| v.ok_or_else(|| Error::OutOfRange("missing constant".into()));
    let b = &constants.inputs.budget;
    let (lhs, rhs) = match constants.theorem {
        Theorem::Coer => {
            let lhs = nu.modulated_free_energy(model)?;
            let h = nu.relative_entropy_product(model.reference())?;
            (lhs, need(constants.delta_n)? * h - need(constants.delta_f)?)
        }
        Theorem::EntropyCoer => {
            let gibbs = ConfigDistribution::gibbs_measure(model, nu.n)?;
            let lhs = nu.relative_entropy(&gibbs)?;
            let h = nu.relative_entropy_product(model.reference())?;
            let _ = b;
            (lhs, need(constants.delta_n)? * h - need(constants.offset)?)
        }
        Theorem::Contr1 | Theorem::Contr2 => {
            if constants.theorem == Theorem::Contr2 && !nu.is_symmetric(1e-12) {
                return Err(Error::NotSymmetric);
            }
            let gibbs = ConfigDistribution::gibbs_measure(model, nu.n)?;
            let lhs = nu.fisher(&gibbs)?;
            let f = nu.modulated_free_energy(model)?;
            (
                lhs,
                2.0 * need(constants.lambda_n)? * f - need(constants.delta_i)?,
            )
        }
        Theorem::Defective => {
            let gibbs = ConfigDistribution::gibbs_measure(model, nu.n)?;
            let lhs = nu.fisher(&gibbs)?;
            let h = nu.relative_entropy(&gibbs)?;
            (
                lhs,
                2.0 * need(constants.lambda_n)? * h - need(constants.offset)?,
            )
        }
        Theorem::IpCoer | Theorem::IpContr => {
            return Err(Error::OutOfRange(
                "independent-projection bounds are audited on product states".into(),
            ))
        }
    };
    let margin = lhs - rhs;
    Ok(AuditReport {
        theorem: constants.theorem.name().into(),
        inputs: inputs_map(&constants.inputs),
        constants: constants.to_map(),
        lhs,
        rhs,
        margin,
        witness_config: witness(nu, margin),
    })
}

/// Second bound of the entropy-coercivity statement, with `W₁` bounded above
/// by `diam(X^N)·TV` (Euclidean diameter `√N·diam X`).
pub fn w1_audit(
    nu: &ConfigDistribution,
    model: &MeanFieldModel,
    constants: &TheoremConstants,
) -> Result<AuditReport> {
    let c = constants
        .w1_constant
        .ok_or_else(|| Error::OutOfRange("constants carry no W1 prefactor".into()))?;
    let gibbs = ConfigDistribution::gibbs_measure(model, nu.n)?;
    let lhs = nu.relative_entropy(&gibbs)?;
    let w1 = (nu.n as f64).sqrt() * nu.grid.diameter() * nu.tv_distance(&gibbs)?;
    let rhs = c * w1 * w1;
    let margin = lhs - rhs;
    Ok(AuditReport {
        theorem: "entropy_coer_w1".into(),
        inputs: inputs_map(&constants.inputs),
        constants: constants.to_map(),
        lhs,
        rhs,
        margin,
        witness_config: witness(nu, margin),
    })
}

/// `N E⟨U,(μ_x − m)^{⊗2}⟩ ≤ (2/(1−δ)) H(ν^N|m^{⊗N}) + 4(1 + (1−δ)/(2δ))` for
/// a positive `U` with `Osc₂ U ≤ 4`.
pub fn jw_audit(
    nu: &ConfigDistribution,
    u: &ModeKernel,
    m: &GridMeasure,
    delta: f64,
) -> Result<AuditReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::OutOfRange(format!("delta = {delta} outside (0, 1)")));
    }
    if u.modes().iter().any(|md| md.weight < 0.0) {
        return Err(Error::OutOfRange("kernel must be positive".into()));
    }
    let osc = u.double_oscillation()?;
    if osc > 4.0 + 1e-12 {
        return Err(Error::OutOfRange(format!(
            "double oscillation {osc} exceeds 4"
        )));
    }
    let um = u.reduce(m)?;
    let nf = nu.n as f64;
    let lhs = nf * nu.expected_energy(&um);
    let h = nu.relative_entropy_product(m)?;
    let rhs = 2.0 / (1.0 - delta) * h + 4.0 * (1.0 + (1.0 - delta) / (2.0 * delta));
    let margin = rhs - lhs;
    let mut inputs = BTreeMap::new();
    inputs.insert("N".into(), nf);
    inputs.insert("delta".into(), delta);
    inputs.insert("osc2_U".into(), osc);
    Ok(AuditReport {
        theorem: "jw".into(),
        inputs,
        constants: BTreeMap::new(),
        lhs,
        rhs,
        margin,
        witness_config: witness(nu, margin),
    })
}

/// Mean-field limit gaps for `ν^{⊗N}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitGap {
    pub n: usize,
    /// `F^N(ν^{⊗N}|m)/N − F(ν|m)`.
    pub gap_f: f64,
    /// `(1/2N) Σ_x ν(x) ⟨W, (δ_x − ν)^{⊗2}⟩`.
    pub gap_f_exact: f64,
    /// `I(ν^{⊗N}|m^N_*)/N − I(ν|Π[ν])`.
    pub gap_i: f64,
}

pub fn tensor_limit_gap(nu: &GridMeasure, model: &MeanFieldModel, n: usize) -> Result<LimitGap> {
    let prod = ConfigDistribution::iid(nu, n)?;
    let nf = n as f64;
    let gap_f = prod.modulated_free_energy(model)? / nf - model.free_energy(nu)?;
    let w = model.kernel();
    let mom = w.moments(nu);
    let self_term = csum(nu.weights().iter().enumerate().map(|(i, p)| {
        p * w
            .modes()
            .iter()
            .zip(&mom)
            .map(|(md, c)| md.weight * (md.r[i] - c).powi(2))
            .sum::<f64>()
    }));
    let gap_f_exact = self_term / (2.0 * nf);
    let gibbs = ConfigDistribution::gibbs_measure(model, n)?;
    let gap_i = prod.fisher(&gibbs)? / nf - model.pl_gap(nu)?;
    Ok(LimitGap {
        n,
        gap_f,
        gap_f_exact,
        gap_i,
    })
}

/// Least-squares fit `y ≈ a + b x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mx, b)
}
