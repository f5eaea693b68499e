//! Mean-field free energy, local equilibria and the coercivity / free-energy /
//! Polyak–Łojasiewicz condition checks.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{relative_entropy, relative_fisher, same_grid, GridMeasure};
use crate::kernel::{ModeKernel, RegularityBudget};
use crate::tilts::{TiltFamily, EXP_GUARD};

/// A reference measure `m` together with an interaction kernel `W`.
#[derive(Debug, Clone)]
pub struct MeanFieldModel {
    reference: GridMeasure,
    w: ModeKernel,
    w_m: ModeKernel,
    budget: Option<RegularityBudget>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Condition {
    /// `F(ν|m) ≥ δ H(ν|m)`.
    Coer,
    /// `H(ν|Π[ν]) ≥ δ F(ν|m)`.
    FE,
    /// `I(ν|Π[ν]) ≥ 2λ F(ν|m)`.
    PL,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    pub condition: Condition,
    pub delta: f64,
    pub min_margin: f64,
    pub argmin_h: Vec<f64>,
    #[serde(skip)]
    pub margins: Vec<f64>,
}

impl MeanFieldModel {
    pub fn new(reference: GridMeasure, w: ModeKernel) -> Result<MeanFieldModel> {
        if reference.grid().as_ref() != w.grid().as_ref() {
            return Err(Error::GridMismatch);
        }
        if let Some(idx) = reference.weights().iter().position(|&p| p <= 0.0) {
            return Err(Error::ZeroDensity { idx });
        }
        let w_m = w.reduce(&reference)?;
        Ok(MeanFieldModel {
            reference,
            w,
            w_m,
            budget: None,
        })
    }

    pub fn with_budget(mut self, budget: RegularityBudget) -> Self {
        self.budget = Some(budget);
        self
    }

    /// Same kernel and budget around a different reference measure.
    pub fn rebase(&self, reference: GridMeasure) -> Result<MeanFieldModel> {
        let mut out = MeanFieldModel::new(reference, self.w.clone())?;
        out.budget = self.budget;
        Ok(out)
    }

    pub fn reference(&self) -> &GridMeasure {
        &self.reference
    }

    pub fn kernel(&self) -> &ModeKernel {
        &self.w
    }

    pub fn reduced(&self) -> &ModeKernel {
        &self.w_m
    }

    pub fn budget(&self) -> Option<&RegularityBudget> {
        self.budget.as_ref()
    }

    pub fn grid(&self) -> &std::sync::Arc<crate::grid::Grid> {
        self.reference.grid()
    }

    /// Exponent `x ↦ −⟨W_m(x,·), ν⟩` of the local equilibrium.
    pub fn mean_field(&self, nu: &GridMeasure) -> Result<Vec<f64>> {
        same_grid(nu, &self.reference)?;
        let mut e = self.w_m.potential(nu);
        for v in e.iter_mut() {
            *v = -*v;
            if !(v.abs() <= EXP_GUARD) {
                return Err(Error::Overflow { exponent: *v });
            }
        }
        Ok(e)
    }

    /// `Π[ν] ∝ exp(−⟨W_m(x,·), ν⟩) m`.
    pub fn local_equilibrium(&self, nu: &GridMeasure) -> Result<GridMeasure> {
        let e = self.mean_field(nu)?;
        self.gibbs_of_field(&e)
    }

    /// Normalised `exp(e)·m`.
    pub fn gibbs_of_field(&self, e: &[f64]) -> Result<GridMeasure> {
        let top = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = self
            .reference
            .weights()
            .iter()
            .zip(e)
            .map(|(m, x)| m * (x - top).exp())
            .collect();
        GridMeasure::normalize(&raw, self.grid())
    }

    /// Local equilibrium of a signed (leave-one-out style) weight vector.
    pub fn local_equilibrium_of(&self, v: &[f64]) -> Result<GridMeasure> {
        let mut e = self.w_m.potential_of(v);
        for x in e.iter_mut() {
            *x = -*x;
            if !(x.abs() <= EXP_GUARD) {
                return Err(Error::Overflow { exponent: *x });
            }
        }
        self.gibbs_of_field(&e)
    }

    /// `F(ν|m) = H(ν|m) + ½⟨W_m, ν⊗ν⟩`.
    pub fn free_energy(&self, nu: &GridMeasure) -> Result<f64> {
        let h = relative_entropy(nu, &self.reference)?;
        Ok(h + 0.5 * self.w_m.pair_energy(nu, nu)?)
    }

    /// `H(ν | Π[ν])`.
    pub fn fe_gap(&self, nu: &GridMeasure) -> Result<f64> {
        relative_entropy(nu, &self.local_equilibrium(nu)?)
    }

    /// `I(ν | Π[ν])` with the grid Fisher information.
    pub fn pl_gap(&self, nu: &GridMeasure) -> Result<f64> {
        relative_fisher(nu, &self.local_equilibrium(nu)?)
    }

    /// Signed slack of a condition at `ν`; nonnegative means it holds there.
    pub fn condition_margin(&self, cond: Condition, param: f64, nu: &GridMeasure) -> Result<f64> {
        let f = self.free_energy(nu)?;
        Ok(match cond {
            Condition::Coer => f - param * relative_entropy(nu, &self.reference)?,
            Condition::FE => self.fe_gap(nu)? - param * f,
            Condition::PL => self.pl_gap(nu)? - 2.0 * param * f,
        })
    }

    /// Tilt family of the reference along the kernel modes.
    pub fn tilts(&self) -> Result<TiltFamily> {
        TiltFamily::from_kernel(&self.reference, &self.w)
    }

    /// Minimum condition margin over the tilts `T_h m`, `h` ranging over
    /// `tilt_grid`. Ties resolve to the lowest index.
    pub fn condition_scan(
        &self,
        cond: Condition,
        param: f64,
        tilt_grid: &[Vec<f64>],
    ) -> Result<ScanReport> {
        let fam = self.tilts()?;
        let margins: Vec<f64> = tilt_grid
            .par_iter()
            .map(|h| {
                let nu = fam.tilt(h)?;
                self.condition_margin(cond, param, &nu)
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut best = 0;
        for (i, &v) in margins.iter().enumerate() {
            if v < margins[best] {
                best = i;
            }
        }
        Ok(ScanReport {
            condition: cond,
            delta: param,
            min_margin: margins.get(best).copied().unwrap_or(f64::INFINITY),
            argmin_h: tilt_grid.get(best).cloned().unwrap_or_default(),
            margins,
        })
    }

    /// Largest parameter in `[0, hi]` keeping the scanned margin above `-tol`.
    pub fn optimal_delta(
        &self,
        cond: Condition,
        tilt_grid: &[Vec<f64>],
        hi: f64,
        tol: f64,
    ) -> Result<f64> {
        let ok = |d: f64| -> Result<bool> {
            Ok(self.condition_scan(cond, d, tilt_grid)?.min_margin >= -tol)
        };
        if !ok(0.0)? {
            return Ok(0.0);
        }
        if ok(hi)? {
            return Ok(hi);
        }
        let (mut lo, mut up) = (0.0, hi);
        for _ in 0..40 {
            let mid = 0.5 * (lo + up);
            if ok(mid)? {
                lo = mid;
            } else {
                up = mid;
            }
        }
        Ok(lo)
    }
}

/// Fields on a polar grid covering the disc `|h| ≤ radius` (or the segment
/// `[-radius, radius]` in one dimension).
pub fn disc_tilts(dim: usize, radius: f64, n_radial: usize, n_angular: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    match dim {
        1 => {
            for k in 0..=2 * n_radial {
                out.push(vec![-radius + radius * k as f64 / n_radial as f64]);
            }
        }
        _ => {
            out.push(vec![0.0, 0.0]);
            for i in 1..=n_radial {
                let r = radius * i as f64 / n_radial as f64;
                for k in 0..n_angular {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / n_angular as f64;
                    out.push(vec![r * a.cos(), r * a.sin()]);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate, tv_distance, Grid};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp1};

    fn xy_model(m: usize, j: f64) -> MeanFieldModel {
        let g = Grid::periodic(m).unwrap();
        MeanFieldModel::new(GridMeasure::uniform(&g), ModeKernel::xy(&g, j)).unwrap()
    }

    #[test]
    fn local_equilibrium_examples() {
        let g = Grid::periodic(32).unwrap();
        let m = GridMeasure::normalize(&g.sample(|t| 2.0 + t.sin()), &g).unwrap();
        let free = MeanFieldModel::new(m.clone(), ModeKernel::zero(&g)).unwrap();
        let nu = GridMeasure::dirac(&g, 4);
        assert_eq!(free.local_equilibrium(&nu).unwrap(), m);
        let model = xy_model(64, 1.5);
        let pm = model.local_equilibrium(model.reference()).unwrap();
        assert!(tv_distance(&pm, model.reference()).unwrap() < 1e-15);
        let fam = model.tilts().unwrap();
        let nu = fam.tilt(&[0.8, 0.0]).unwrap();
        let mu = fam.helmholtz(&[0.8, 0.0]).unwrap().grad;
        let want = fam.tilt(&[1.5 * mu[0], 1.5 * mu[1]]).unwrap();
        assert!(tv_distance(&model.local_equilibrium(&nu).unwrap(), &want).unwrap() < 1e-14);
    }

    #[test]
    fn free_energy_examples() {
        let model = xy_model(64, 1.5);
        assert!(model.free_energy(model.reference()).unwrap().abs() < 1e-15);
        let fam = model.tilts().unwrap();
        let h = [1.0, 0.0];
        let nu = fam.tilt(&h).unwrap();
        let mu = fam.helmholtz(&h).unwrap().grad;
        let g = fam.gibbs(&mu).unwrap().g;
        let closed = g - 0.75 * (mu[0] * mu[0] + mu[1] * mu[1]);
        assert_relative_eq!(model.free_energy(&nu).unwrap(), closed, epsilon = 1e-12);
        let f = fam.helmholtz(&[1.5 * mu[0], 1.5 * mu[1]]).unwrap().f;
        let gap = g + f - 1.5 * (mu[0] * mu[0] + mu[1] * mu[1]);
        assert_relative_eq!(model.fe_gap(&nu).unwrap(), gap, epsilon = 1e-12);
        let g2 = Grid::interval(41, 4.0).unwrap();
        let m = GridMeasure::normalize(&g2.sample(|x| (-x * x / 2.0).exp()), &g2).unwrap();
        let free = MeanFieldModel::new(m.clone(), ModeKernel::zero(&g2)).unwrap();
        let nu =
            GridMeasure::normalize(&g2.sample(|x| (-(x - 1.0).powi(2) / 2.0).exp()), &g2).unwrap();
        let h = relative_entropy(&nu, &m).unwrap();
        assert_eq!(free.free_energy(&nu).unwrap(), h);
        assert_relative_eq!(free.fe_gap(&nu).unwrap(), h, epsilon = 1e-15);
        assert_relative_eq!(
            free.pl_gap(&nu).unwrap(),
            relative_fisher(&nu, &m).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn fe_gap_expansion() {
        let model = xy_model(40, 1.2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let raw: Vec<f64> = (0..40).map(|_| Exp1.sample(&mut rng)).collect();
            let nu = GridMeasure::normalize(&raw, model.grid()).unwrap();
            let e = model.mean_field(&nu).unwrap();
            let log_z = integrate(
                model.reference(),
                &e.iter().map(|x| x.exp()).collect::<Vec<_>>(),
            )
            .unwrap()
            .ln();
            let want = relative_entropy(&nu, model.reference()).unwrap()
                + model.reduced().pair_energy(&nu, &nu).unwrap()
                + log_z;
            assert_relative_eq!(model.fe_gap(&nu).unwrap(), want, epsilon = 1e-10);
        }
    }

    #[test]
    fn xy_scans() {
        let model = xy_model(64, 1.5);
        let hs = disc_tilts(2, 10.0, 40, 8);
        let coer = model.condition_scan(Condition::Coer, 0.25, &hs).unwrap();
        assert!(coer.min_margin >= -1e-8, "{coer:?}");
        let fe = model.condition_scan(Condition::FE, 0.25, &hs).unwrap();
        assert!(fe.min_margin >= -1e-8, "{fe:?}");
        let bad = model.condition_scan(Condition::Coer, 0.30, &hs).unwrap();
        assert!(bad.min_margin <= -1e-4);
        let zero = model.condition_scan(Condition::Coer, 0.0, &hs).unwrap();
        assert!(zero.min_margin >= -1e-15);
        let opt = model
            .optimal_delta(Condition::Coer, &hs, 1.0, 1e-10)
            .unwrap();
        assert!((opt - 0.25).abs() < 1e-2, "{opt}");
    }

    #[test]
    fn dirichlet_fuzz_never_beats_tilts() {
        let model = xy_model(32, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let conc: f64 = 0.2 + 3.0 * rand::Rng::random::<f64>(&mut rng);
            let raw: Vec<f64> = (0..32)
                .map(|_| {
                    let e: f64 = Exp1.sample(&mut rng);
                    e.powf(conc)
                })
                .collect();
            let nu = GridMeasure::normalize(&raw, model.grid()).unwrap();
            assert!(model.condition_margin(Condition::Coer, 0.25, &nu).unwrap() >= -1e-10);
            assert!(model.condition_margin(Condition::FE, 0.25, &nu).unwrap() >= -1e-10);
        }
    }

    #[test]
    fn pl_gap_vanishes_at_fixed_points() {
        let model = xy_model(64, 1.0);
        assert!(model.pl_gap(model.reference()).unwrap() < 1e-20);
    }
}
