//! Uniform 1D grids and probability vectors living on them.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Shape of the discretized state space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology {
    /// The circle `[0, 2π)` with wrap-around neighbours.
    Periodic,
    /// The truncated line `[-half_width, half_width]`, endpoints included.
    Interval { half_width: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    topology: Topology,
    points: Vec<f64>,
    dx: f64,
}

impl Grid {
    /// `m` equispaced points `i·2π/m` on the circle.
    pub fn periodic(m: usize) -> Result<Arc<Grid>> {
        if m < 4 {
            return Err(Error::InvalidGrid(format!(
                "need at least 4 points, got {m}"
            )));
        }
        let dx = 2.0 * PI / m as f64;
        let points = (0..m).map(|i| i as f64 * dx).collect();
        Ok(Arc::new(Grid {
            topology: Topology::Periodic,
            points,
            dx,
        }))
    }

    /// `m` equispaced points covering `[-l, l]` including both endpoints.
    pub fn interval(m: usize, l: f64) -> Result<Arc<Grid>> {
        if m < 4 {
            return Err(Error::InvalidGrid(format!(
                "need at least 4 points, got {m}"
            )));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half-width must be positive, got {l}"
            )));
        }
        let dx = 2.0 * l / (m - 1) as f64;
        let points = (0..m).map(|i| -l + i as f64 * dx).collect();
        Ok(Arc::new(Grid {
            topology: Topology::Interval { half_width: l },
            points,
            dx,
        }))
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.topology, Topology::Periodic)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Largest distance between two points of the state space.
    pub fn diameter(&self) -> f64 {
        match self.topology {
            Topology::Periodic => PI,
            Topology::Interval { half_width } => 2.0 * half_width,
        }
    }

    /// Evaluate `f` at every grid point.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.points.iter().map(|&x| f(x)).collect()
    }

    /// Index of the right neighbour, `None` past the right wall.
    pub fn right(&self, i: usize) -> Option<usize> {
        let m = self.len();
        if i + 1 < m {
            Some(i + 1)
        } else if self.is_periodic() {
            Some(0)
        } else {
            None
        }
    }

    /// Index of the left neighbour, `None` past the left wall.
    pub fn left(&self, i: usize) -> Option<usize> {
        if i > 0 {
            Some(i - 1)
        } else if self.is_periodic() {
            Some(self.len() - 1)
        } else {
            None
        }
    }

    /// Central difference of a grid function; wraps on the circle and is
    /// one-sided at interval walls.
    pub fn central_diff(&self, u: &[f64]) -> Vec<f64> {
        let m = self.len();
        let h = self.dx;
        (0..m)
            .map(|i| match (self.left(i), self.right(i)) {
                (Some(l), Some(r)) => (u[r] - u[l]) / (2.0 * h),
                (None, Some(r)) => (u[r] - u[i]) / h,
                (Some(l), None) => (u[i] - u[l]) / h,
                (None, None) => 0.0,
            })
            .collect()
    }

    /// Linear interpolation of grid samples at an arbitrary position.
    /// Positions are wrapped on the circle and clamped on the interval.
    pub fn interpolate(&self, u: &[f64], x: f64) -> f64 {
        let m = self.len();
        match self.topology {
            Topology::Periodic => {
                let s = x.rem_euclid(2.0 * PI) / self.dx;
                let i = (s.floor() as usize).min(m - 1);
                let t = s - i as f64;
                let j = (i + 1) % m;
                u[i] * (1.0 - t) + u[j] * t
            }
            Topology::Interval { half_width } => {
                let s = ((x + half_width) / self.dx).clamp(0.0, (m - 1) as f64);
                let i = (s.floor() as usize).min(m - 2);
                let t = s - i as f64;
                u[i] * (1.0 - t) + u[i + 1] * t
            }
        }
    }

    fn same(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
        Arc::ptr_eq(a, b) || **a == **b
    }
}

/// A probability vector on a grid; entries are density × Δx.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    grid: Arc<Grid>,
    weights: Vec<f64>,
}

impl GridMeasure {
    /// Scale a nonnegative vector to unit mass.
    pub fn normalize(raw: &[f64], grid: &Arc<Grid>) -> Result<GridMeasure> {
        check_len(grid.len(), raw.len())?;
        for (idx, &v) in raw.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { idx });
            }
            if v < 0.0 {
                return Err(Error::Negative { idx, value: v });
            }
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::AllZero);
        }
        if !total.is_finite() {
            return Err(Error::NonFinite { idx: 0 });
        }
        let weights = raw.iter().map(|v| v / total).collect();
        Ok(GridMeasure {
            grid: grid.clone(),
            weights,
        })
    }

    /// Normalize `exp(logw)` without overflow.
    pub fn from_log_weights(logw: &[f64], grid: &Arc<Grid>) -> Result<GridMeasure> {
        check_len(grid.len(), logw.len())?;
        let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::AllZero);
        }
        let raw: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
        GridMeasure::normalize(&raw, grid)
    }

    /// Wrap weights as-is; callers guarantee nonnegativity and unit mass.
    pub(crate) fn from_parts(grid: &Arc<Grid>, weights: Vec<f64>) -> GridMeasure {
        GridMeasure {
            grid: grid.clone(),
            weights,
        }
    }

    pub fn uniform(grid: &Arc<Grid>) -> GridMeasure {
        let m = grid.len();
        GridMeasure {
            grid: grid.clone(),
            weights: vec![1.0 / m as f64; m],
        }
    }

    pub fn dirac(grid: &Arc<Grid>, i: usize) -> GridMeasure {
        let mut weights = vec![0.0; grid.len()];
        weights[i] = 1.0;
        GridMeasure {
            grid: grid.clone(),
            weights,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
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

    pub fn min_weight(&self) -> f64 {
        self.weights.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Convex combination `(1-t)·self + t·other`.
    pub fn mix(&self, other: &GridMeasure, t: f64) -> Result<GridMeasure> {
        same_grid(self, other)?;
        let raw: Vec<f64> = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        GridMeasure::normalize(&raw, &self.grid)
    }

    /// Write `x,weight` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "weight"])?;
        for (x, p) in self.grid.points().iter().zip(&self.weights) {
            w.write_record([format!("{x:.16e}"), format!("{p:.16e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read `x,weight` rows back onto `grid`; abscissae must match the grid.
    pub fn read_csv<R: Read>(input: R, grid: &Arc<Grid>) -> Result<GridMeasure> {
        let mut r = csv::Reader::from_reader(input);
        let mut raw = Vec::with_capacity(grid.len());
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or(Error::NonFinite { idx: i })
            };
            let x = parse(0)?;
            let p = parse(1)?;
            match grid.points().get(i) {
                Some(&gx) if (gx - x).abs() <= 1e-12 * grid.dx().max(1.0) => raw.push(p),
                _ => return Err(Error::GridMismatch),
            }
        }
        GridMeasure::normalize(&raw, grid)
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::LengthMismatch { expected, got });
    }
    Ok(())
}

pub(crate) fn same_grid(a: &GridMeasure, b: &GridMeasure) -> Result<()> {
    if Grid::same(&a.grid, &b.grid) {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// `Σ ν_i log(ν_i/m_i)` with `0·log 0 = 0`.
pub fn relative_entropy(nu: &GridMeasure, m: &GridMeasure) -> Result<f64> {
    same_grid(nu, m)?;
    let mut h = 0.0;
    for (idx, (&p, &q)) in nu.weights.iter().zip(&m.weights).enumerate() {
        if p > 0.0 {
            if q <= 0.0 {
                return Err(Error::SupportViolation { idx });
            }
            h += p * (p / q).ln();
        }
    }
    Ok(h.max(0.0))
}

/// `Σ ν_i (D log(ν/m))_i²` with the grid's central difference.
pub fn relative_fisher(nu: &GridMeasure, m: &GridMeasure) -> Result<f64> {
    same_grid(nu, m)?;
    let mut logr = Vec::with_capacity(nu.len());
    for (idx, (&p, &q)) in nu.weights.iter().zip(&m.weights).enumerate() {
        if p <= 0.0 || q <= 0.0 {
            return Err(Error::ZeroDensity { idx });
        }
        logr.push(p.ln() - q.ln());
    }
    let d = nu.grid.central_diff(&logr);
    Ok(nu.weights.iter().zip(&d).map(|(p, g)| p * g * g).sum())
}

/// `Σ f_i ν_i`.
pub fn integrate(nu: &GridMeasure, f: &[f64]) -> Result<f64> {
    check_len(nu.len(), f.len())?;
    Ok(nu.weights.iter().zip(f).map(|(p, v)| p * v).sum())
}

/// Total variation distance `½ Σ |ν_i − μ_i|`.
pub fn tv_distance(nu: &GridMeasure, mu: &GridMeasure) -> Result<f64> {
    same_grid(nu, mu)?;
    Ok(0.5
        * nu.weights
            .iter()
            .zip(&mu.weights)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

/// Quantile function as (right end of level set, abscissa) for atoms with mass.
fn quantile_steps(w: &[f64], x: &[f64]) -> Vec<(f64, f64)> {
    let mut steps = Vec::with_capacity(w.len());
    let mut c = 0.0;
    for (&p, &xi) in w.iter().zip(x) {
        if p > 0.0 {
            c += p;
            steps.push((c, xi));
        }
    }
    if let Some(last) = steps.last_mut() {
        last.0 = 1.0;
    }
    steps
}

/// `∫₀¹ |F⁻¹(t) − G⁻¹(t+α)|² dt` with `G⁻¹` lifted by `G⁻¹(s+1) = G⁻¹(s) + period`.
fn lifted_cost(f: &[(f64, f64)], g: &[(f64, f64)], alpha: f64, period: f64) -> f64 {
    let mut k = alpha.floor();
    let frac = alpha - k;
    let mut j = g.iter().position(|s| s.0 > frac).unwrap_or(g.len() - 1);
    let mut t = 0.0;
    let mut cost = 0.0;
    let mut i = 0;
    while i < f.len() {
        let (fe, fx) = f[i];
        let ge = g[j].0 + k - alpha;
        let gx = g[j].1 + period * k;
        let next = fe.min(ge);
        if next > t {
            cost += (next - t) * (fx - gx) * (fx - gx);
            t = next;
        }
        if fe <= ge {
            i += 1;
        }
        if ge <= fe {
            j += 1;
            if j == g.len() {
                j = 0;
                k += 1.0;
            }
        }
    }
    cost
}

/// Quadratic Wasserstein distance. Matched quantiles on the interval; on the
/// circle the lifted quantile cost is minimised over the cyclic offset.
pub fn wasserstein2(nu: &GridMeasure, mu: &GridMeasure) -> Result<f64> {
    same_grid(nu, mu)?;
    let x = nu.grid.points();
    let f = quantile_steps(&nu.weights, x);
    let g = quantile_steps(&mu.weights, x);
    if !nu.grid.is_periodic() {
        return Ok(lifted_cost(&f, &g, 0.0, 0.0).max(0.0).sqrt());
    }
    let period = 2.0 * PI;
    // The cost is convex and piecewise linear in α with kinks where a level of
    // F meets a shifted level of G, and it is optimal somewhere in [-1, 1].
    let mut cands = Vec::with_capacity((f.len() + 1) * (g.len() + 1));
    let fl: Vec<f64> = std::iter::once(0.0).chain(f.iter().map(|s| s.0)).collect();
    let gl: Vec<f64> = std::iter::once(0.0).chain(g.iter().map(|s| s.0)).collect();
    for &a in &fl {
        for &b in &gl {
            cands.push(a - b);
        }
    }
    cands.sort_by(|a, b| a.total_cmp(b));
    cands.dedup();
    let cost = |a: f64| lifted_cost(&f, &g, a, period);
    let (mut lo, mut hi) = (0usize, cands.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if cost(cands[mid + 1]) < cost(cands[mid]) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    Ok(cost(cands[lo]).max(0.0).sqrt())
}

/// Exhaustive minimum of the lifted cost over every candidate offset.
#[doc(hidden)]
pub fn wasserstein2_exhaustive(nu: &GridMeasure, mu: &GridMeasure) -> Result<f64> {
    same_grid(nu, mu)?;
    let x = nu.grid.points();
    let f = quantile_steps(&nu.weights, x);
    let g = quantile_steps(&mu.weights, x);
    if !nu.grid.is_periodic() {
        return Ok(lifted_cost(&f, &g, 0.0, 0.0).max(0.0).sqrt());
    }
    let mut best = f64::INFINITY;
    for a in std::iter::once(0.0).chain(f.iter().map(|s| s.0)) {
        for b in std::iter::once(0.0).chain(g.iter().map(|s| s.0)) {
            best = best.min(lifted_cost(&f, &g, a - b, 2.0 * PI));
        }
    }
    Ok(best.max(0.0).sqrt())
}
