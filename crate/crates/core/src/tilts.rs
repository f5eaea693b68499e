//! Exponential tilts along mode functions and the Legendre pair they induce.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{check_len, GridMeasure};
use crate::kernel::ModeKernel;

/// Largest admissible `|h·r(x)|`.
pub const EXP_GUARD: f64 = 700.0;

/// Tilts `T_h m ∝ e^{h·r} m` of a base measure along one or two modes.
#[derive(Debug, Clone)]
pub struct TiltFamily {
    base: GridMeasure,
    modes: Vec<Vec<f64>>,
    mu0: Vec<f64>,
    rmax: f64,
}

/// `f(h)`, `∇f(h)` and `∇²f(h)` (row-major `n×n`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Helmholtz {
    pub f: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

/// Value of the conjugate `g(μ)` and the field `h` attaining the supremum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Legendre {
    pub g: f64,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalConstants {
    pub j_c: f64,
    pub ell: f64,
    pub h_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbedDeltas {
    pub coer: f64,
    pub fe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GDeltaMin {
    pub min_value: f64,
    pub argmin_mu: f64,
    /// Stationary points `(ℓ, μ_ℓ, G_δ(μ_ℓ))`.
    pub stationary: Vec<(f64, f64, f64)>,
}

impl TiltFamily {
    pub fn new(base: &GridMeasure, modes: Vec<Vec<f64>>) -> Result<TiltFamily> {
        if modes.is_empty() || modes.len() > 2 {
            return Err(Error::OutOfRange(format!(
                "tilts need 1 or 2 modes, got {}",
                modes.len()
            )));
        }
        for r in &modes {
            check_len(base.len(), r.len())?;
        }
        let mu0 = modes.iter().map(|r| dot(r, base.weights())).collect();
        let rmax = modes
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        Ok(TiltFamily {
            base: base.clone(),
            modes,
            mu0,
            rmax,
        })
    }

    /// Tilts along the mode functions of a kernel.
    pub fn from_kernel(base: &GridMeasure, w: &ModeKernel) -> Result<TiltFamily> {
        TiltFamily::new(base, w.modes().iter().map(|m| m.r.clone()).collect())
    }

    pub fn base(&self) -> &GridMeasure {
        &self.base
    }

    pub fn modes(&self) -> &[Vec<f64>] {
        &self.modes
    }

    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    /// `μ_0 = ⟨r, m⟩`.
    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    /// Largest `|r_a(x)|` over modes and grid points.
    pub fn rmax(&self) -> f64 {
        self.rmax
    }

    /// Box in which fields stay below the exponent guard.
    pub fn h_box(&self) -> f64 {
        if self.rmax > 0.0 {
            EXP_GUARD / (self.rmax * self.dim() as f64)
        } else {
            f64::INFINITY
        }
    }

    fn exponents(&self, h: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), h.len())?;
        let n = self.base.len();
        let mut e = vec![0.0; n];
        for (r, &ha) in self.modes.iter().zip(h) {
            for (ei, ri) in e.iter_mut().zip(r) {
                *ei += ha * ri;
            }
        }
        if let Some(bad) = e.iter().find(|v| !(v.abs() <= EXP_GUARD)) {
            return Err(Error::Overflow { exponent: *bad });
        }
        Ok(e)
    }

    pub fn tilt(&self, h: &[f64]) -> Result<GridMeasure> {
        let e = self.exponents(h)?;
        if h.iter().all(|&v| v == 0.0) {
            return Ok(self.base.clone());
        }
        let top = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = self
            .base
            .weights()
            .iter()
            .zip(&e)
            .map(|(m, x)| m * (x - top).exp())
            .collect();
        GridMeasure::normalize(&raw, self.base.grid())
    }

    /// Log-moment generating function with its gradient and covariance.
    pub fn helmholtz(&self, h: &[f64]) -> Result<Helmholtz> {
        let e = self.exponents(h)?;
        let w = self.base.weights();
        let top = e
            .iter()
            .zip(w)
            .filter(|(_, &m)| m > 0.0)
            .map(|(x, _)| *x)
            .fold(f64::NEG_INFINITY, f64::max);
        let p: Vec<f64> = w.iter().zip(&e).map(|(m, x)| m * (x - top).exp()).collect();
        let z: f64 = p.iter().sum();
        let f = top + z.ln();
        let n = self.dim();
        let grad: Vec<f64> = self.modes.iter().map(|r| dot(r, &p) / z).collect();
        let mut hess = vec![0.0; n * n];
        for a in 0..n {
            for b in a..n {
                let c: f64 = p
                    .iter()
                    .zip(&self.modes[a])
                    .zip(&self.modes[b])
                    .map(|((pi, ra), rb)| pi * (ra - grad[a]) * (rb - grad[b]))
                    .sum::<f64>()
                    / z;
                hess[a * n + b] = c;
                hess[b * n + a] = c;
            }
        }
        Ok(Helmholtz { f, grad, hess })
    }

    /// Third cumulant of the first mode under `T_{ℓ e₁} m`, i.e. `f‴` along `e₁`.
    pub fn third_derivative(&self, ell: f64) -> Result<f64> {
        let mut h = vec![0.0; self.dim()];
        h[0] = ell;
        let t = self.tilt(&h)?;
        let r = &self.modes[0];
        let mean = dot(r, t.weights());
        Ok(t.weights()
            .iter()
            .zip(r)
            .map(|(p, x)| p * (x - mean).powi(3))
            .sum())
    }

    /// Scalar profile `(f, f′, f″)` along the first mode direction.
    pub fn profile(&self, ell: f64) -> Result<(f64, f64, f64)> {
        let mut h = vec![0.0; self.dim()];
        h[0] = ell;
        let hz = self.helmholtz(&h)?;
        Ok((hz.f, hz.grad[0], hz.hess[0]))
    }

    /// `g(μ) = sup_h h·μ − f(h)` by damped Newton on the convex `f(h) − h·μ`.
    pub fn gibbs(&self, mu: &[f64]) -> Result<Legendre> {
        check_len(self.dim(), mu.len())?;
        let n = self.dim();
        let out = || Error::OutOfImage {
            target: mu.to_vec(),
        };
        let hbox = self.h_box();
        let obj = |h: &[f64]| -> Result<(f64, Helmholtz)> {
            let hz = self.helmholtz(h)?;
            Ok((hz.f - dot(h, mu), hz))
        };
        let mut h = vec![0.0; n];
        let (mut val, mut hz) = obj(&h)?;
        let scale = 1.0 + self.rmax;
        for _ in 0..200 {
            let grad: Vec<f64> = hz.grad.iter().zip(mu).map(|(a, b)| a - b).collect();
            let gnorm = grad.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if gnorm <= 4.0 * f64::EPSILON * scale {
                return Ok(Legendre { g: -val, h });
            }
            let step = solve(&hz.hess, &grad, n).ok_or_else(out)?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = h.iter().zip(&step).map(|(a, s)| a - t * s).collect();
                if trial.iter().any(|v| v.abs() > hbox) {
                    t *= 0.5;
                    continue;
                }
                let (tv, thz) = obj(&trial)?;
                let dec: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
                if tv <= val - 1e-4 * t * dec || (tv - val).abs() <= 1e-15 * (1.0 + val.abs()) {
                    let moved = trial.iter().zip(&h).any(|(a, b)| a != b);
                    h = trial;
                    val = tv;
                    hz = thz;
                    accepted = moved;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // Stalled at round-off: accept if the gradient is already tiny.
                let g2 = hz
                    .grad
                    .iter()
                    .zip(mu)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if g2 <= 1e-10 * scale {
                    return Ok(Legendre { g: -val, h });
                }
                return Err(out());
            }
        }
        let g2 = hz
            .grad
            .iter()
            .zip(mu)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if g2 <= 1e-10 * scale {
            Ok(Legendre { g: -val, h })
        } else {
            Err(out())
        }
    }

    /// Sorted roots of `ℓ = h_ext + J f′(ℓ)` along the first mode.
    pub fn self_consistency_roots(
        &self,
        j: f64,
        h_ext: f64,
        bracket: Option<f64>,
    ) -> Result<Vec<f64>> {
        let lim =
            bracket.unwrap_or_else(|| self.default_bracket(h_ext.abs() + j.abs() * self.rmax));
        let excess = |l: f64| -> Result<f64> { Ok(l - h_ext - j * self.profile(l)?.1) };
        scan_roots(excess, lim)
    }

    fn default_bracket(&self, reach: f64) -> f64 {
        (reach + 1.0).min(self.h_box())
    }

    /// `J_c = 1/f″(0)`, `ℓ(J)` solving `f″(ℓ) = 1/J` and `h_c = J f′(ℓ) − ℓ`.
    pub fn critical_constants(&self, j: f64) -> Result<CriticalConstants> {
        let (_, _, f2) = self.profile(0.0)?;
        let j_c = 1.0 / f2;
        let ghs_range = (30.0 / self.rmax.max(1e-300)).min(self.h_box());
        for k in 1..=256 {
            let l = ghs_range * k as f64 / 256.0;
            let f3 = self.third_derivative(l)?;
            if f3 > 1e-12 * f2 {
                return Err(Error::NotGhs { at: l, value: f3 });
            }
        }
        if j <= j_c {
            return Ok(CriticalConstants {
                j_c,
                ell: 0.0,
                h_c: 0.0,
            });
        }
        let target = 1.0 / j;
        let mut hi = 1.0 / self.rmax.max(1e-300);
        while self.profile(hi)?.2 > target {
            hi *= 2.0;
            if hi > self.h_box() {
                return Err(Error::BracketTooNarrow { lo: 0.0, hi });
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.profile(mid)?.2 > target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.max(1.0) {
                break;
            }
        }
        let ell = 0.5 * (lo + hi);
        let h_c = j * self.profile(ell)?.1 - ell;
        Ok(CriticalConstants { j_c, ell, h_c })
    }

    /// Minimum of the recentred landscape
    /// `G_δ(μ) = (1−δ)(g(μ) − g(μ₊) − ℓ₊(μ−μ₊)) − (J/2)(μ−μ₊)²`
    /// over its stationary points, `ℓ₊` being the largest self-consistent field.
    pub fn g_delta_min(&self, delta: f64, j: f64, h_ext: f64) -> Result<GDeltaMin> {
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::OutOfRange(format!(
                "delta = {delta} must lie in [0, 1)"
            )));
        }
        let roots = self.self_consistency_roots(j, h_ext, None)?;
        let lp = *roots
            .last()
            .ok_or(Error::BracketTooNarrow { lo: 0.0, hi: 0.0 })?;
        let (fp, mup, _) = self.profile(lp)?;
        let c = 1.0 - delta;
        let gval = |l: f64| -> Result<(f64, f64)> {
            let (f, mu, _) = self.profile(l)?;
            let g_rel = (l * mu - f) - (lp * mup - fp) - lp * (mu - mup);
            Ok((mu, c * g_rel - 0.5 * j * (mu - mup).powi(2)))
        };
        let lim = self.default_bracket(lp.abs() + 2.0 * self.rmax * j / c);
        let phi = |l: f64| -> Result<f64> { Ok(c * (l - lp) / j - (self.profile(l)?.1 - mup)) };
        // roots past a clamped box are covered by the endpoint evaluations below
        let mut ells = scan_sign_changes(phi, lim)?;
        ells.push(lp);
        let mut stationary = Vec::with_capacity(ells.len());
        for &l in &ells {
            let (mu, v) = gval(l)?;
            stationary.push((l, mu, v));
        }
        stationary.sort_by(|a, b| a.0.total_cmp(&b.0));
        stationary.dedup_by(|a, b| (a.0 - b.0).abs() <= 1e-9 * (1.0 + a.0.abs()));
        let mut best = (f64::INFINITY, mup);
        for &(_, mu, v) in &stationary {
            if v < best.0 {
                best = (v, mu);
            }
        }
        for l in [-lim, lim] {
            let (mu, v) = gval(l)?;
            if v < best.0 {
                best = (v, mu);
            }
        }
        Ok(GDeltaMin {
            min_value: best.0,
            argmin_mu: best.1,
            stationary,
        })
    }

    /// Largest `δ ∈ [0, δ_max]` with `min G_δ ≥ −tol`, by bisection.
    pub fn optimal_g_delta(&self, j: f64, h_ext: f64, delta_max: f64, tol: f64) -> Result<f64> {
        let ok = |d: f64| -> Result<bool> { Ok(self.g_delta_min(d, j, h_ext)?.min_value >= -tol) };
        if !ok(0.0)? {
            return Ok(0.0);
        }
        if ok(delta_max)? {
            return Ok(delta_max);
        }
        let (mut lo, mut hi) = (0.0, delta_max);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if ok(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }
}

/// Coercivity and free-energy constants for a reference within a factor `α`
/// of a rotationally symmetric GHS base.
pub fn perturbed_deltas(alpha: f64, j: f64, j_c: f64) -> Result<PerturbedDeltas> {
    let limit = (j_c / j).sqrt();
    if !(alpha >= 1.0 && alpha < limit) {
        return Err(Error::AlphaOutOfRange { alpha, limit });
    }
    let a2 = alpha * alpha;
    let coer = 1.0 - a2 * j / j_c;
    let fe = if 2.0 * a2 < j / j_c + j_c / j {
        Some((j_c * j_c - 2.0 * a2 * j_c * j + j * j) / (j_c * (j_c - a2 * j)))
    } else {
        None
    };
    Ok(PerturbedDeltas { coer, fe })
}

const PRESCAN: usize = 4096;

/// Every sign change of `f` on `[-lim, lim]`, refined by bisection.
fn scan_roots(f: impl Fn(f64) -> Result<f64>, lim: f64) -> Result<Vec<f64>> {
    if !(f(-lim)? < 0.0 && f(lim)? > 0.0) {
        return Err(Error::BracketTooNarrow { lo: -lim, hi: lim });
    }
    scan_sign_changes(f, lim)
}

/// Sign changes of `f` on `[−lim, lim]` without requiring a signed bracket.
fn scan_sign_changes(f: impl Fn(f64) -> Result<f64>, lim: f64) -> Result<Vec<f64>> {
    let lo_v = f(-lim)?;
    let mut roots: Vec<f64> = Vec::new();
    let step = 2.0 * lim / PRESCAN as f64;
    let mut xa = -lim;
    let mut fa = lo_v;
    for k in 1..=PRESCAN {
        let xb = if k == PRESCAN {
            lim
        } else {
            -lim + k as f64 * step
        };
        let fb = f(xb)?;
        if fb == 0.0 {
            roots.push(xb);
        } else if fa != 0.0 && (fa < 0.0) != (fb < 0.0) {
            roots.push(bisect(&f, xa, xb, fa)?);
        }
        xa = xb;
        fa = fb;
    }
    roots.sort_by(|a, b| a.total_cmp(b));
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + a.abs()));
    Ok(roots)
}

fn bisect(f: &impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, mut fa: f64) -> Result<f64> {
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if b - a <= 1e-12 * (1.0 + mid.abs()) * 1e-2 || mid == a || mid == b {
            break;
        }
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve the `n×n` symmetric system for `n ≤ 2`.
fn solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    match n {
        1 => (a[0] > 0.0).then(|| vec![b[0] / a[0]]),
        2 => {
            let det = a[0] * a[3] - a[1] * a[2];
            if !(det > 0.0) {
                return None;
            }
            Some(vec![
                (a[3] * b[0] - a[1] * b[1]) / det,
                (a[0] * b[1] - a[2] * b[0]) / det,
            ])
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{relative_entropy, Grid};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn xy_family(m: usize) -> TiltFamily {
        let g = Grid::periodic(m).unwrap();
        TiltFamily::new(
            &GridMeasure::uniform(&g),
            vec![g.sample(f64::cos), g.sample(f64::sin)],
        )
        .unwrap()
    }

    fn cw_family(m: usize, l: f64) -> TiltFamily {
        let g = Grid::interval(m, l).unwrap();
        let base =
            GridMeasure::normalize(&g.sample(|x| (-(x.powi(4) / 4.0 - x * x)).exp()), &g).unwrap();
        TiltFamily::new(&base, vec![g.points().to_vec()]).unwrap()
    }

    #[test]
    fn tilt_examples() {
        let fam = xy_family(64);
        assert_eq!(fam.tilt(&[0.0, 0.0]).unwrap(), *fam.base());
        let a = fam.tilt(&[0.4, -0.3]).unwrap();
        let twice = TiltFamily::new(&a, fam.modes().to_vec())
            .unwrap()
            .tilt(&[0.6, 1.1])
            .unwrap();
        let once = fam.tilt(&[1.0, 0.8]).unwrap();
        for (x, y) in twice.weights().iter().zip(once.weights()) {
            assert!((x - y).abs() < 1e-15);
        }
        let vm = fam.tilt(&[2.0, 0.0]).unwrap();
        let g = fam.base().grid();
        // Normaliser 2π I₀(2) from a fine Simpson rule.
        let n = 20_000;
        let hstep = 2.0 * std::f64::consts::PI / n as f64;
        let mut z = 0.0;
        for i in 0..=n {
            let c = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            z += c * (2.0 * (i as f64 * hstep).cos()).exp();
        }
        z *= hstep / 3.0;
        for (p, &t) in vm.weights().iter().zip(g.points()) {
            assert_relative_eq!(*p, (2.0 * t.cos()).exp() * g.dx() / z, max_relative = 1e-12);
        }
        assert!(matches!(
            fam.tilt(&[800.0, 0.0]),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn helmholtz_examples() {
        let fam = xy_family(64);
        let hz = fam.helmholtz(&[0.0, 0.0]).unwrap();
        assert!(hz.f.abs() < 1e-15);
        assert_relative_eq!(hz.hess[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(hz.hess[3], 0.5, epsilon = 1e-15);
        assert!(hz.hess[1].abs() < 1e-15);
        let ring: Vec<f64> = (0..24)
            .map(|k| {
                let a = k as f64 * 0.261;
                fam.helmholtz(&[1.7 * a.cos(), 1.7 * a.sin()]).unwrap().f
            })
            .collect();
        let spread = ring.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - ring.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 1e-10);
        let cw = cw_family(801, 5.0);
        let (_, _, f2) = cw.profile(0.0).unwrap();
        let var = crate::grid::integrate(cw.base(), &cw.base().grid().sample(|x| x * x)).unwrap();
        assert_relative_eq!(f2, var, max_relative = 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let fam = xy_family(48);
        let h = [0.7, -1.2];
        let hz = fam.helmholtz(&h).unwrap();
        let e = 1e-5;
        for a in 0..2 {
            let mut hp = h;
            let mut hm = h;
            hp[a] += e;
            hm[a] -= e;
            let fd = (fam.helmholtz(&hp).unwrap().f - fam.helmholtz(&hm).unwrap().f) / (2.0 * e);
            assert!((fd - hz.grad[a]).abs() / hz.grad[a].abs() < 1e-6);
        }
    }

    #[test]
    fn gibbs_examples() {
        let fam = xy_family(64);
        let g0 = fam.gibbs(&[0.0, 0.0]).unwrap();
        assert!(g0.g.abs() < 1e-15 && g0.h.iter().all(|v| v.abs() < 1e-12));
        for h in [[0.3, 0.1], [2.0, -1.0], [-4.0, 3.0]] {
            let t = fam.tilt(&h).unwrap();
            let hz = fam.helmholtz(&h).unwrap();
            let lg = fam.gibbs(&hz.grad).unwrap();
            assert!((lg.h[0] - h[0]).abs() < 1e-8 && (lg.h[1] - h[1]).abs() < 1e-8);
            let ent = relative_entropy(&t, fam.base()).unwrap();
            assert_relative_eq!(lg.g, ent, epsilon = 1e-10);
        }
        assert!(matches!(
            fam.gibbs(&[1.5, 0.0]),
            Err(Error::OutOfImage { .. })
        ));
    }

    #[test]
    fn roots_and_critical_constants() {
        let cw = cw_family(201, 5.0);
        let cc = cw.critical_constants(1.0).unwrap();
        assert!(cc.j_c > 0.0 && cc.j_c < 1.0, "{cc:?}");
        let sub = cw.self_consistency_roots(0.5 * cc.j_c, 0.0, None).unwrap();
        assert_eq!(sub.len(), 1);
        assert!(sub[0].abs() < 1e-10);
        let j = 1.5 * cc.j_c;
        let cc = cw.critical_constants(j).unwrap();
        assert!(cc.ell > 0.0 && cc.h_c > 0.0);
        let roots = cw.self_consistency_roots(j, 0.3 * cc.h_c, None).unwrap();
        assert_eq!(roots.len(), 3);
        let wider = cw
            .self_consistency_roots(j, 0.3 * cc.h_c, Some(40.0))
            .unwrap();
        for (a, b) in roots.iter().zip(&wider) {
            assert!((a - b).abs() < 1e-10);
        }
        let at_c = cw.critical_constants(cc.j_c).unwrap();
        assert_eq!((at_c.ell, at_c.h_c), (0.0, 0.0));
        let xy = xy_family(128);
        let cc = xy.critical_constants(1.0).unwrap();
        assert_relative_eq!(cc.j_c, 2.0, epsilon = 1e-12);
        assert!(matches!(
            cw.self_consistency_roots(j, 0.0, Some(0.01)),
            Err(Error::BracketTooNarrow { .. })
        ));
    }

    #[test]
    fn perturbed_delta_examples() {
        let d = perturbed_deltas(1.0, 1.0, 2.0).unwrap();
        assert_relative_eq!(d.coer, 0.5, epsilon = 1e-15);
        assert_relative_eq!(d.fe.unwrap(), 0.5, epsilon = 1e-15);
        let d = perturbed_deltas(1.0, 1.5, 2.0).unwrap();
        assert_relative_eq!(d.coer, 0.25, epsilon = 1e-15);
        assert_relative_eq!(d.fe.unwrap(), 0.25, epsilon = 1e-15);
        assert!(matches!(
            perturbed_deltas(2f64.sqrt(), 1.0, 2.0),
            Err(Error::AlphaOutOfRange { .. })
        ));
        assert!(matches!(
            perturbed_deltas(0.9, 1.0, 2.0),
            Err(Error::AlphaOutOfRange { .. })
        ));
        let d = perturbed_deltas(1.3, 1.0, 2.0).unwrap();
        assert!(d.fe.is_none());
    }

    #[test]
    fn g_delta_examples() {
        let cw = cw_family(201, 5.0);
        let j = 1.5 * cw.critical_constants(1.0).unwrap().j_c;
        let h = 0.3 * cw.critical_constants(j).unwrap().h_c;
        let roots = cw.self_consistency_roots(j, h, None).unwrap();
        let g0 = cw.g_delta_min(0.0, j, h).unwrap();
        assert_eq!(g0.stationary.len(), 3);
        for ((l, _, v), r) in g0.stationary.iter().zip(&roots) {
            assert!((l - r).abs() < 1e-9);
            if (l - roots[2]).abs() > 1e-9 {
                assert!(*v > 0.0);
            } else {
                assert!(v.abs() < 1e-12);
            }
        }
        let dopt = cw.optimal_g_delta(j, h, 0.9, 1e-10).unwrap();
        assert!(dopt > 0.0);
        let gd = cw.g_delta_min(0.5 * dopt, j, h).unwrap();
        assert!(gd.min_value.abs() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn fenchel_and_convexity(h1 in -5.0f64..5.0, h2 in -5.0f64..5.0, k1 in -5.0f64..5.0, k2 in -5.0f64..5.0) {
            let fam = xy_family(48);
            let hz = fam.helmholtz(&[h1, h2]).unwrap();
            let lg = fam.gibbs(&hz.grad).unwrap();
            let lhs = lg.g + hz.f;
            let rhs = h1 * hz.grad[0] + h2 * hz.grad[1];
            prop_assert!((lhs - rhs).abs() < 1e-8);
            let mu_a = hz.grad.clone();
            let mu_b = fam.helmholtz(&[k1, k2]).unwrap().grad;
            let mid: Vec<f64> = mu_a.iter().zip(&mu_b).map(|(a, b)| 0.5 * (a + b)).collect();
            let ga = fam.gibbs(&mu_a).unwrap().g;
            let gb = fam.gibbs(&mu_b).unwrap().g;
            let gm = fam.gibbs(&mid).unwrap().g;
            prop_assert!(gm <= 0.5 * (ga + gb) + 1e-10);
        }
    }
}
