//! Interaction kernels `U(x,y) = Σ_a w_a r_a(x) r_a(y)` in mode form.

use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{check_len, Grid, GridMeasure};

/// Regularity class of a mode: bounded oscillation or quadratic growth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ModeClass {
    Bounded,
    Quadratic,
}

/// Named mode functions usable from configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Cos,
    Sin,
    X,
}

impl Primitive {
    pub fn value(self, x: f64) -> f64 {
        match self {
            Primitive::Cos => x.cos(),
            Primitive::Sin => x.sin(),
            Primitive::X => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Primitive::Cos => -x.sin(),
            Primitive::Sin => x.cos(),
            Primitive::X => 1.0,
        }
    }

    pub fn class(self) -> ModeClass {
        match self {
            Primitive::X => ModeClass::Quadratic,
            _ => ModeClass::Bounded,
        }
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cos" => Ok(Primitive::Cos),
            "sin" => Ok(Primitive::Sin),
            "x" => Ok(Primitive::X),
            other => Err(Error::OutOfRange(format!(
                "unknown mode primitive `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub weight: f64,
    pub r: Vec<f64>,
    pub dr: Option<Vec<f64>>,
    pub class: ModeClass,
}

impl Mode {
    pub fn primitive(grid: &Grid, p: Primitive, weight: f64) -> Mode {
        Mode {
            weight,
            r: grid.sample(|x| p.value(x)),
            dr: Some(grid.sample(|x| p.derivative(x))),
            class: p.class(),
        }
    }

    fn dr(&self, mode: usize) -> Result<&[f64]> {
        self.dr.as_deref().ok_or(Error::MissingDerivatives { mode })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeKernel {
    grid: Arc<Grid>,
    modes: Vec<Mode>,
}

/// Budget for the O(M³) double-oscillation scan.
pub const OSC_BUDGET: usize = 1 << 27;

impl ModeKernel {
    pub fn new(grid: &Arc<Grid>, modes: Vec<Mode>) -> Result<ModeKernel> {
        let m = grid.len();
        for mode in &modes {
            check_len(m, mode.r.len())?;
            if let Some(dr) = &mode.dr {
                check_len(m, dr.len())?;
            }
            if !mode.weight.is_finite() {
                return Err(Error::OutOfRange(format!("mode weight {}", mode.weight)));
            }
        }
        Ok(ModeKernel {
            grid: grid.clone(),
            modes,
        })
    }

    pub fn zero(grid: &Arc<Grid>) -> ModeKernel {
        ModeKernel {
            grid: grid.clone(),
            modes: Vec::new(),
        }
    }

    /// `−J cos(θ−θ′)` as the two modes `cos` and `sin`.
    pub fn xy(grid: &Arc<Grid>, j: f64) -> ModeKernel {
        ModeKernel {
            grid: grid.clone(),
            modes: vec![
                Mode::primitive(grid, Primitive::Cos, -j),
                Mode::primitive(grid, Primitive::Sin, -j),
            ],
        }
    }

    /// `−J x y` as a single quadratic mode.
    pub fn curie_weiss(grid: &Arc<Grid>, j: f64) -> ModeKernel {
        ModeKernel {
            grid: grid.clone(),
            modes: vec![Mode::primitive(grid, Primitive::X, -j)],
        }
    }

    pub fn from_primitives(grid: &Arc<Grid>, terms: &[(Primitive, f64)]) -> ModeKernel {
        let modes = terms
            .iter()
            .map(|&(p, w)| Mode::primitive(grid, p, w))
            .collect();
        ModeKernel {
            grid: grid.clone(),
            modes,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn is_zero(&self) -> bool {
        self.modes.iter().all(|m| m.weight == 0.0)
    }

    fn filtered(&self, keep: impl Fn(&Mode) -> bool, flip: bool) -> ModeKernel {
        let modes = self
            .modes
            .iter()
            .filter(|m| keep(m))
            .map(|m| Mode {
                weight: if flip { -m.weight } else { m.weight },
                ..m.clone()
            })
            .collect();
        ModeKernel {
            grid: self.grid.clone(),
            modes,
        }
    }

    /// `U⁺`: the modes with positive weight.
    pub fn positive_part(&self) -> ModeKernel {
        self.filtered(|m| m.weight > 0.0, false)
    }

    /// `U⁻`: the modes with negative weight, stored with `|w_a|`.
    pub fn negative_part(&self) -> ModeKernel {
        self.filtered(|m| m.weight < 0.0, true)
    }

    pub fn class_part(&self, class: ModeClass) -> ModeKernel {
        self.filtered(|m| m.class == class, false)
    }

    /// Dense entry `U(x_i, x_j)`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.modes.iter().map(|m| m.weight * m.r[i] * m.r[j]).sum()
    }

    /// `⟨r_a, v⟩` for every mode and an arbitrary signed weight vector.
    pub fn moments_of(&self, v: &[f64]) -> Vec<f64> {
        self.modes
            .iter()
            .map(|m| m.r.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn moments(&self, nu: &GridMeasure) -> Vec<f64> {
        self.moments_of(nu.weights())
    }

    /// Bilinear form `⟨U, a ⊗ b⟩` for signed weight vectors.
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> f64 {
        let ma = self.moments_of(a);
        let mb = self.moments_of(b);
        self.modes
            .iter()
            .zip(ma.iter().zip(&mb))
            .map(|(m, (x, y))| m.weight * x * y)
            .sum()
    }

    /// `⟨U, ν ⊗ ν′⟩`.
    pub fn pair_energy(&self, nu: &GridMeasure, nu2: &GridMeasure) -> Result<f64> {
        crate::grid::same_grid(nu, nu2)?;
        check_len(self.grid.len(), nu.len())?;
        Ok(self.bilinear(nu.weights(), nu2.weights()))
    }

    /// The field `x ↦ ⟨U(x,·), v⟩`.
    pub fn potential_of(&self, v: &[f64]) -> Vec<f64> {
        let c = self.moments_of(v);
        self.field(&c)
    }

    /// `x ↦ Σ_a w_a r_a(x) c_a` for given mode coefficients.
    pub fn field(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (m, &ca) in self.modes.iter().zip(c) {
            let s = m.weight * ca;
            for (o, r) in out.iter_mut().zip(&m.r) {
                *o += s * r;
            }
        }
        out
    }

    pub fn potential(&self, nu: &GridMeasure) -> Vec<f64> {
        self.potential_of(nu.weights())
    }

    /// Diagonal `x ↦ U(x,x)`.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for m in &self.modes {
            for (o, r) in out.iter_mut().zip(&m.r) {
                *o += m.weight * r * r;
            }
        }
        out
    }

    /// Reduced kernel: every mode recentred to have zero mean under `m`.
    pub fn reduce(&self, m: &GridMeasure) -> Result<ModeKernel> {
        check_len(self.grid.len(), m.len())?;
        let modes = self
            .modes
            .iter()
            .map(|mode| {
                let c: f64 = mode.r.iter().zip(m.weights()).map(|(a, b)| a * b).sum();
                Mode {
                    r: mode.r.iter().map(|v| v - c).collect(),
                    ..mode.clone()
                }
            })
            .collect();
        Ok(ModeKernel {
            grid: self.grid.clone(),
            modes,
        })
    }

    /// Mean-field drift field `x ↦ Σ_a w_a r_a′(x) ⟨r_a, ν⟩`.
    pub fn drift(&self, nu: &GridMeasure) -> Result<Vec<f64>> {
        let c = self.moments(nu);
        self.drift_from_moments(&c)
    }

    pub fn drift_from_moments(&self, c: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.grid.len()];
        for (a, (m, &ca)) in self.modes.iter().zip(c).enumerate() {
            let dr = m.dr(a)?;
            let s = m.weight * ca;
            for (o, d) in out.iter_mut().zip(dr) {
                *o += s * d;
            }
        }
        Ok(out)
    }

    /// `sup ⟨U, (δ_x−δ_y)⊗(δ_z−δ_w)⟩` over grid quadruples.
    pub fn double_oscillation(&self) -> Result<f64> {
        self.double_oscillation_with_budget(OSC_BUDGET)
    }

    pub fn double_oscillation_with_budget(&self, budget: usize) -> Result<f64> {
        let live: Vec<&Mode> = self.modes.iter().filter(|m| m.weight != 0.0).collect();
        match live.len() {
            0 => return Ok(0.0),
            1 => {
                let m = live[0];
                let osc = oscillation(&m.r);
                return Ok(m.weight.abs() * osc * osc);
            }
            _ => {}
        }
        let n = self.grid.len();
        let cost = n.saturating_mul(n).saturating_mul(n);
        if cost > budget {
            return Err(Error::GridTooLarge { points: n, budget });
        }
        // For a fixed difference vector d = r(x) − r(y) the inner supremum
        // over (z, w) is the oscillation of z ↦ Σ_a w_a d_a r_a(z).
        let mut best = 0.0f64;
        let mut phi = vec![0.0; n];
        let mut d = vec![0.0; live.len()];
        for x in 0..n {
            for y in (x + 1)..n {
                for (da, m) in d.iter_mut().zip(&live) {
                    *da = m.weight * (m.r[x] - m.r[y]);
                }
                phi.iter_mut().for_each(|p| *p = 0.0);
                for (da, m) in d.iter().zip(&live) {
                    for (p, r) in phi.iter_mut().zip(&m.r) {
                        *p += da * r;
                    }
                }
                best = best.max(oscillation(&phi));
            }
        }
        Ok(best)
    }

    /// `sup_{x,y} |∂₁∂₂ U(x,y)|` from derivative samples.
    pub fn mixed_derivative_bound(&self) -> Result<f64> {
        let live: Vec<(usize, &Mode)> = self
            .modes
            .iter()
            .enumerate()
            .filter(|(_, m)| m.weight != 0.0)
            .collect();
        if live.is_empty() {
            return Ok(0.0);
        }
        let mut drs = Vec::with_capacity(live.len());
        for &(a, m) in &live {
            drs.push(m.dr(a)?);
        }
        if live.len() == 1 {
            let top = drs[0].iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            return Ok(live[0].1.weight.abs() * top * top);
        }
        let n = self.grid.len();
        let mut best = 0.0f64;
        for x in 0..n {
            for y in x..n {
                let v: f64 = live
                    .iter()
                    .zip(&drs)
                    .map(|((_, m), dr)| m.weight * dr[x] * dr[y])
                    .sum();
                best = best.max(v.abs());
            }
        }
        Ok(best)
    }

    /// Dominating kernel with modes `(w_a² max|r_a′|², r_a)`.
    pub fn dominating_r(&self) -> Result<ModeKernel> {
        let mut modes = Vec::with_capacity(self.modes.len());
        for (a, m) in self.modes.iter().enumerate() {
            let dr = m.dr(a)?;
            let top = dr.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            modes.push(Mode {
                weight: m.weight * m.weight * top * top,
                r: m.r.clone(),
                dr: m.dr.clone(),
                class: m.class,
            });
        }
        Ok(ModeKernel {
            grid: self.grid.clone(),
            modes,
        })
    }
}

fn oscillation(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    hi - lo
}

/// Regularity constants of a kernel pair `(W, R)` plus the log-Sobolev
/// constants of the reference and of the local equilibria.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegularityBudget {
    pub m_w: f64,
    pub l_w: f64,
    pub m_r: f64,
    pub l_r: f64,
    pub rho: f64,
    pub rho_pi: f64,
    /// Worst sampled slack of the R-domination inequality.
    pub domination_margin: f64,
}

impl RegularityBudget {
    pub fn new(m_w: f64, l_w: f64, m_r: f64, l_r: f64, rho: f64, rho_pi: f64) -> Result<Self> {
        for (name, v) in [("M_W", m_w), ("L_W", l_w), ("M_R", m_r), ("L_R", l_r)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::OutOfRange(format!(
                    "{name} = {v} must be finite and >= 0"
                )));
            }
        }
        if !(rho_pi > 0.0 && rho >= rho_pi && rho.is_finite()) {
            return Err(Error::OutOfRange(format!(
                "need rho >= rho_pi > 0, got rho = {rho}, rho_pi = {rho_pi}"
            )));
        }
        Ok(RegularityBudget {
            m_w,
            l_w,
            m_r,
            l_r,
            rho,
            rho_pi,
            domination_margin: f64::INFINITY,
        })
    }

    pub fn ell_w(&self) -> f64 {
        self.l_w / self.rho
    }

    pub fn mu_r(&self) -> f64 {
        self.m_r / self.rho
    }

    pub fn ell_r(&self) -> f64 {
        self.l_r / (self.rho * self.rho)
    }
}

const DOMINATION_SAMPLES: usize = 1000;
const DOMINATION_SEED: u64 = 0x005e_edd0;

fn random_measure(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    match rng.random_range(0..3) {
        0 => {
            let mut v = vec![0.0; n];
            v[rng.random_range(0..n)] = 1.0;
            v
        }
        1 => {
            let mut v = vec![0.0; n];
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            let t: f64 = rng.random();
            v[a] += t;
            v[b] += 1.0 - t;
            v
        }
        _ => {
            let raw: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        }
    }
}

/// Measure `M_W, L_W, M_R, L_R` from the declared bounded/quadratic split and
/// audit `|⟨∂₁W(y,·), ν−ν′⟩|² ≤ ⟨R, (ν−ν′)^{⊗2}⟩` on random triples.
pub fn budget_audit(
    w: &ModeKernel,
    r: &ModeKernel,
    rho: f64,
    rho_pi: f64,
) -> Result<RegularityBudget> {
    let wb = w.class_part(ModeClass::Bounded);
    let wq = w.class_part(ModeClass::Quadratic);
    let m_w =
        (wb.positive_part().double_oscillation()? + wb.negative_part().double_oscillation()?) / 4.0;
    let l_w = wq.positive_part().mixed_derivative_bound()?
        + wq.negative_part().mixed_derivative_bound()?;
    let m_r = r.class_part(ModeClass::Bounded).double_oscillation()? / 4.0;
    let l_r = r
        .class_part(ModeClass::Quadratic)
        .mixed_derivative_bound()?;
    let mut budget = RegularityBudget::new(m_w, l_w, m_r, l_r, rho, rho_pi)?;

    let n = w.grid().len();
    for (a, m) in w.modes().iter().enumerate() {
        m.dr(a)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(DOMINATION_SEED);
    let mut worst = f64::INFINITY;
    for sample in 0..DOMINATION_SAMPLES {
        let y = rng.random_range(0..n);
        let a = random_measure(&mut rng, n);
        let b = random_measure(&mut rng, n);
        let diff: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
        let c = w.moments_of(&diff);
        let lhs: f64 = w
            .modes()
            .iter()
            .zip(&c)
            .map(|(m, ca)| m.weight * m.dr.as_ref().map_or(0.0, |d| d[y]) * ca)
            .sum::<f64>()
            .powi(2);
        let rhs = r.bilinear(&diff, &diff);
        let margin = rhs - lhs;
        if margin < -1e-10 {
            return Err(Error::DominationViolated {
                sample,
                y_index: y,
                excess: -margin,
            });
        }
        worst = worst.min(margin);
    }
    budget.domination_margin = worst;
    Ok(budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn exhaustive_osc(u: &ModeKernel) -> f64 {
        let n = u.grid().len();
        let mut best = f64::NEG_INFINITY;
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    for w in 0..n {
                        let v = u.entry(x, z) - u.entry(x, w) - u.entry(y, z) + u.entry(y, w);
                        best = best.max(v);
                    }
                }
            }
        }
        best
    }

    fn dense_pair(u: &ModeKernel, a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += u.entry(i, j) * a[i] * b[j];
            }
        }
        s
    }

    #[test]
    fn pair_energy_examples() {
        let g = Grid::periodic(32).unwrap();
        let w = ModeKernel::xy(&g, 1.5);
        let u = GridMeasure::uniform(&g);
        assert!(w.pair_energy(&u, &u).unwrap().abs() < 1e-15);
        let single = ModeKernel::new(
            &g,
            vec![Mode {
                weight: 1.0,
                r: g.sample(|x| x.cos() + 0.5),
                dr: None,
                class: ModeClass::Bounded,
            }],
        )
        .unwrap();
        let (dx, dy) = (GridMeasure::dirac(&g, 3), GridMeasure::dirac(&g, 11));
        let want = (g.points()[3].cos() + 0.5) * (g.points()[11].cos() + 0.5);
        assert_relative_eq!(single.pair_energy(&dx, &dy).unwrap(), want, epsilon = 1e-15);
        let nu = GridMeasure::normalize(&g.sample(|t| t.cos().exp()), &g).unwrap();
        let mom = w.moments(&nu);
        let e = w.pair_energy(&nu, &nu).unwrap();
        assert_relative_eq!(
            e,
            -1.5 * (mom[0] * mom[0] + mom[1] * mom[1]),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            e,
            dense_pair(&w, nu.weights(), nu.weights()),
            max_relative = 1e-12
        );
    }

    #[test]
    fn reduce_examples() {
        let g = Grid::periodic(16).unwrap();
        let w = ModeKernel::xy(&g, 1.0);
        let u = GridMeasure::uniform(&g);
        let ws = w.reduce(&u).unwrap();
        for (a, b) in w.modes().iter().zip(ws.modes()) {
            for (x, y) in a.r.iter().zip(&b.r) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        let m = GridMeasure::normalize(&g.sample(|t| (0.3 * t.sin() + t.cos()).exp()), &g).unwrap();
        let wm = w.reduce(&m).unwrap();
        let wmm = wm.reduce(&m).unwrap();
        assert_eq!(wm.modes().len(), wmm.modes().len());
        for (a, b) in wm.modes().iter().zip(wmm.modes()) {
            for (x, y) in a.r.iter().zip(&b.r) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        let nu = GridMeasure::dirac(&g, 5);
        assert!(wm.pair_energy(&m, &nu).unwrap().abs() < 1e-15);
    }

    #[test]
    fn double_oscillation_examples() {
        let g = Grid::periodic(32).unwrap();
        let constant = ModeKernel::new(
            &g,
            vec![Mode {
                weight: 2.0,
                r: vec![1.0; 32],
                dr: None,
                class: ModeClass::Bounded,
            }],
        )
        .unwrap();
        assert_eq!(constant.double_oscillation().unwrap(), 0.0);
        let w = ModeKernel::xy(&g, 1.0);
        let osc = w.double_oscillation().unwrap();
        assert_relative_eq!(osc, exhaustive_osc(&w), epsilon = 1e-12);
        assert!((osc - 4.0).abs() <= 2.0 * g.dx());
        let line = Grid::interval(21, 2.0).unwrap();
        let cw = ModeKernel::curie_weiss(&line, 0.7);
        let osc = cw.double_oscillation().unwrap();
        assert_relative_eq!(osc, exhaustive_osc(&cw), epsilon = 1e-12);
        assert_relative_eq!(osc, 4.0 * 0.7 * 4.0, epsilon = 1e-12);
        let big = Grid::periodic(1024).unwrap();
        assert!(matches!(
            ModeKernel::xy(&big, 1.0).double_oscillation(),
            Err(Error::GridTooLarge { .. })
        ));
    }

    #[test]
    fn dominating_kernel_examples() {
        let g = Grid::periodic(64).unwrap();
        let j = 1.3;
        let r = ModeKernel::xy(&g, j).dominating_r().unwrap();
        for m in r.modes() {
            assert_relative_eq!(m.weight, j * j, max_relative = 1e-12);
        }
        let line = Grid::interval(33, 3.0).unwrap();
        let rc = ModeKernel::curie_weiss(&line, j).dominating_r().unwrap();
        assert_relative_eq!(rc.modes()[0].weight, j * j, epsilon = 1e-15);
        assert!(ModeKernel::zero(&g).dominating_r().unwrap().is_zero());
        let bare = ModeKernel::new(
            &g,
            vec![Mode {
                weight: 1.0,
                r: vec![0.0; 64],
                dr: None,
                class: ModeClass::Bounded,
            }],
        )
        .unwrap();
        assert!(matches!(
            bare.dominating_r(),
            Err(Error::MissingDerivatives { mode: 0 })
        ));
    }

    #[test]
    fn drift_examples() {
        let g = Grid::periodic(64).unwrap();
        let j = 1.5;
        let w = ModeKernel::xy(&g, j);
        let u = GridMeasure::uniform(&g);
        assert!(w.drift(&u).unwrap().iter().all(|v| v.abs() < 1e-14));
        // ∇₁[−J cos(θ − 0)] = J sin θ.
        let d = w.drift(&GridMeasure::dirac(&g, 0)).unwrap();
        for (v, &t) in d.iter().zip(g.points()) {
            assert!((v - j * t.sin()).abs() < 1e-14);
        }
        let line = Grid::interval(41, 2.0).unwrap();
        let nu = GridMeasure::normalize(&line.sample(|x| (0.8 * x - x * x).exp()), &line).unwrap();
        let mean = crate::grid::integrate(&nu, line.points()).unwrap();
        let d = ModeKernel::curie_weiss(&line, j).drift(&nu).unwrap();
        assert!(d.iter().all(|v| (v + j * mean).abs() < 1e-14));
    }

    #[test]
    fn budget_examples() {
        let g = Grid::periodic(64).unwrap();
        let j = 1.5;
        let w = ModeKernel::xy(&g, j);
        let b = budget_audit(&w, &w.dominating_r().unwrap(), 1.0, (-2.0 * j).exp()).unwrap();
        assert!((b.m_w - j).abs() < 1e-12, "{b:?}");
        assert!((b.m_r - j * j).abs() < 1e-12);
        assert_eq!((b.l_w, b.l_r), (0.0, 0.0));
        assert!(b.domination_margin >= -1e-12);
        let line = Grid::interval(51, 4.0).unwrap();
        let cw = ModeKernel::curie_weiss(&line, j);
        let b = budget_audit(&cw, &cw.dominating_r().unwrap(), 1.0, 0.5).unwrap();
        assert_eq!((b.m_w, b.m_r), (0.0, 0.0));
        assert_relative_eq!(b.l_w, j, epsilon = 1e-15);
        assert_relative_eq!(b.l_r, j * j, epsilon = 1e-15);
        let z = ModeKernel::zero(&g);
        let b = budget_audit(&z, &z, 1.0, 1.0).unwrap();
        assert_eq!((b.m_w, b.l_w, b.m_r, b.l_r), (0.0, 0.0, 0.0, 0.0));
        let weak = ModeKernel::xy(&g, 0.1 * j);
        assert!(matches!(
            budget_audit(&w, &weak, 1.0, 0.5),
            Err(Error::DominationViolated { .. })
        ));
    }

    fn measure(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum::<f64>() + 1e-9;
            v.iter().map(|x| (x + 1e-9 / v.len() as f64) / s).collect()
        })
    }

    fn random_kernel(g: &Arc<Grid>, ws: &[f64], phase: &[f64]) -> ModeKernel {
        let modes = ws
            .iter()
            .zip(phase)
            .enumerate()
            .map(|(k, (&w, &p))| Mode {
                weight: w,
                r: g.sample(|x| ((k + 1) as f64 * x + p).cos() + 0.3 * p),
                dr: None,
                class: ModeClass::Bounded,
            })
            .collect();
        ModeKernel::new(g, modes).unwrap()
    }

    proptest! {
        #[test]
        fn sign_parts_are_positive(a in measure(12), b in measure(12),
                                   ws in proptest::collection::vec(-2.0f64..2.0, 3),
                                   ph in proptest::collection::vec(0.0f64..3.0, 3)) {
            let g = Grid::periodic(12).unwrap();
            let u = random_kernel(&g, &ws, &ph);
            let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            prop_assert!(u.positive_part().bilinear(&d, &d) >= -1e-15);
            prop_assert!(u.negative_part().bilinear(&d, &d) >= -1e-15);
        }

        #[test]
        fn dual_cumulant_and_dense_oracle(a in measure(10), b in measure(10), c in measure(10),
                                          ws in proptest::collection::vec(-2.0f64..2.0, 3),
                                          ph in proptest::collection::vec(0.0f64..3.0, 3)) {
            let g = Grid::periodic(10).unwrap();
            let u = random_kernel(&g, &ws, &ph);
            let m = GridMeasure::normalize(&c, &g).unwrap();
            let um = u.reduce(&m).unwrap();
            let da: Vec<f64> = a.iter().zip(m.weights()).map(|(x, y)| x - y).collect();
            let db: Vec<f64> = b.iter().zip(m.weights()).map(|(x, y)| x - y).collect();
            let lhs = dense_pair(&u, &da, &db);
            let rhs = um.bilinear(&a, &b);
            prop_assert!((lhs - rhs).abs() < 1e-12);
            let modes = u.bilinear(&a, &b);
            prop_assert!((modes - dense_pair(&u, &a, &b)).abs() <= 1e-10 * modes.abs().max(1.0));
            let o1 = u.double_oscillation().unwrap();
            let o2 = um.double_oscillation().unwrap();
            prop_assert!((o1 - o2).abs() < 1e-12);
            prop_assert!((o1 - exhaustive_osc(&u)).abs() < 1e-12);
        }
    }
}
