//! Ready-made XY and double-well Curie–Weiss models, and the time-dependent
//! constants used to evaluate the generation-of-chaos bound on XY runs.

use std::sync::Arc;

use serde::Serialize;

use crate::dynamics::{fit_gamma_m, goc_bound, ChaosRecord};
use crate::error::{Error, Result};
use crate::exact_gibbs::{theorem_constants, Theorem, TheoremInputs};
use crate::functionals::MeanFieldModel;
use crate::grid::{integrate, Grid, GridMeasure};
use crate::kernel::{budget_audit, ModeKernel, RegularityBudget};
use crate::tilts::{perturbed_deltas, CriticalConstants, TiltFamily};

/// XY model `W = −J cos(θ−θ′)` on `m` circle points, uniform reference,
/// `R = J² cos(θ−θ′)`, `ρ = 1`, `ρ_Π = e^{−2J}`.
pub fn xy(m: usize, j: f64) -> Result<MeanFieldModel> {
    if !(j > 0.0 && j.is_finite()) {
        return Err(Error::OutOfRange(format!("coupling J = {j} must be positive")));
    }
    let g = Grid::periodic(m)?;
    let w = ModeKernel::xy(&g, j);
    let r = ModeKernel::xy(&g, -j * j);
    let budget = budget_audit(&w, &r, 1.0, (-2.0 * j).exp())?;
    Ok(MeanFieldModel::new(GridMeasure::uniform(&g), w)?.with_budget(budget))
}

/// `J_c = 1/Var_{m}(cos)` of the XY reference; exactly 2 on any grid of at
/// least three points.
pub fn xy_critical(model: &MeanFieldModel) -> Result<f64> {
    Ok(model.tilts()?.profile(0.0)?.2.recip())
}

/// Double-well Curie–Weiss: `V_h = θx⁴/4 − σx²/2 − hx`, `W = −Jxy`.
#[derive(Debug, Clone)]
pub struct CurieWeiss {
    pub theta: f64,
    pub sigma: f64,
    pub j: f64,
    pub h: f64,
    grid: Arc<Grid>,
}

impl CurieWeiss {
    pub fn new(theta: f64, sigma: f64, j: f64, h: f64, m: usize, l: f64) -> Result<CurieWeiss> {
        if !(theta > 0.0) {
            return Err(Error::OutOfRange(format!("theta = {theta} must be positive")));
        }
        if !(j > 0.0) {
            return Err(Error::OutOfRange(format!("coupling J = {j} must be positive")));
        }
        if !(sigma.is_finite() && h.is_finite()) {
            return Err(Error::OutOfRange("sigma and h must be finite".into()));
        }
        Ok(CurieWeiss { theta, sigma, j, h, grid: Grid::interval(m, l)? })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// `m_* ∝ e^{−V_0}`.
    pub fn base(&self) -> Result<GridMeasure> {
        let (t, s) = (self.theta, self.sigma);
        GridMeasure::from_log_weights(&self.grid.sample(|x| -(t * x.powi(4) / 4.0 - s * x * x / 2.0)), &self.grid)
    }

    pub fn family(&self) -> Result<TiltFamily> {
        TiltFamily::new(&self.base()?, vec![self.grid.points().to_vec()])
    }

    pub fn critical(&self) -> Result<CriticalConstants> {
        self.family()?.critical_constants(self.j)
    }

    /// Roots of `ℓ = h + J f′(ℓ)`, ascending.
    pub fn roots(&self) -> Result<Vec<f64>> {
        self.family()?.self_consistency_roots(self.j, self.h, None)
    }

    /// Invariant measure `T_ℓ m_*` of a root.
    pub fn invariant(&self, ell: f64) -> Result<GridMeasure> {
        self.family()?.tilt(&[ell])
    }

    /// Model centred at an invariant measure, with a regularity budget using
    /// the supplied log-Sobolev constants.
    pub fn model(&self, reference: GridMeasure, rho: f64, rho_pi: f64) -> Result<MeanFieldModel> {
        let w = ModeKernel::curie_weiss(&self.grid, self.j);
        let r = ModeKernel::curie_weiss(&self.grid, -self.j * self.j);
        let budget = budget_audit(&w, &r, rho, rho_pi)?;
        Ok(MeanFieldModel::new(reference, w)?.with_budget(budget))
    }
}

/// Inputs of the time-dependent constants at one instant of an XY run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct XyInstant {
    /// Smallest `α ≥ 1` with `α⁻¹ m_* ≤ m_t ≤ α m_*`.
    pub alpha: f64,
    pub delta: f64,
    pub rho: f64,
    pub rho_pi: f64,
}

/// `δ(t)` from the perturbed coercivity and free-energy bounds, `ρ(t) = α⁻²`
/// by bounded perturbation of the reference, and
/// `ρ_Π(t) = exp(−2J(1 + |⟨r, m_t⟩|)) α⁻²`.
pub fn xy_instant(m_t: &GridMeasure, reference: &GridMeasure, j: f64, j_c: f64) -> Result<XyInstant> {
    let mut alpha: f64 = 1.0;
    for (idx, (&p, &q)) in m_t.weights().iter().zip(reference.weights()).enumerate() {
        if p <= 0.0 {
            return Err(Error::ZeroDensity { idx });
        }
        alpha = alpha.max(p / q).max(q / p);
    }
    let pd = perturbed_deltas(alpha, j, j_c)?;
    let fe = pd.fe.ok_or_else(|| {
        Error::OutOfRange(format!("free-energy condition unavailable at alpha = {alpha}"))
    })?;
    let g = m_t.grid();
    let c = integrate(m_t, &g.sample(f64::cos))?;
    let s = integrate(m_t, &g.sample(f64::sin))?;
    let a2 = alpha * alpha;
    Ok(XyInstant {
        alpha,
        delta: pd.coer.min(fe),
        rho: 1.0 / a2,
        rho_pi: (-2.0 * j * (1.0 + c.hypot(s))).exp() / a2,
    })
}

/// Measured modulated free energy against the evaluated bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GocCurve {
    pub ts: Vec<f64>,
    pub measured: Vec<f64>,
    pub bound: Vec<f64>,
    pub lambda_n: Vec<f64>,
    pub delta_i: Vec<f64>,
    pub gamma: f64,
    pub m_err: f64,
    pub instants: Vec<XyInstant>,
}

impl GocCurve {
    /// Smallest `bound − measured` over the logged times.
    pub fn min_slack(&self) -> f64 {
        self.bound.iter().zip(&self.measured).map(|(b, m)| b - m).fold(f64::INFINITY, f64::min)
    }
}

/// Evaluate the generation-of-chaos bound along a recorded XY run using
/// `contr1` constants with the time-dependent substitutions and `γ`, `M`
/// fitted from the recorded error terms.
pub fn xy_goc_curve(
    records: &[ChaosRecord],
    model: &MeanFieldModel,
    j: f64,
    n: usize,
    epsilon: f64,
) -> Result<GocCurve> {
    if records.is_empty() {
        return Err(Error::OutOfRange("empty chaos record".into()));
    }
    let j_c = xy_critical(model)?;
    let base = model.budget().ok_or_else(|| Error::OutOfRange("model carries no regularity budget".into()))?;
    let mut lambda_n = Vec::with_capacity(records.len());
    let mut delta_i = Vec::with_capacity(records.len());
    let mut instants = Vec::with_capacity(records.len());
    for r in records {
        let inst = xy_instant(&r.m_t, model.reference(), j, j_c)?;
        let budget = RegularityBudget::new(base.m_w, base.l_w, base.m_r, base.l_r, inst.rho, inst.rho_pi)?;
        let c = theorem_constants(
            Theorem::Contr1,
            TheoremInputs { n, delta: inst.delta, epsilon, lambda: None, budget },
        )?;
        lambda_n.push(c.lambda_n.expect("contr1 sets lambda_n"));
        delta_i.push(c.delta_i.expect("contr1 sets delta_i"));
        instants.push(inst);
    }
    let f: Vec<f64> = records.iter().map(|r| r.f_n_mod).collect();
    let lhs: Vec<f64> = records.iter().map(|r| r.goc_lhs).collect();
    let (gamma, m_err) = fit_gamma_m(&f, &lhs)?;
    let k = records.len();
    let ts: Vec<f64> = records.iter().map(|r| r.t).collect();
    let bound = goc_bound(&ts, &lambda_n, &vec![gamma; k], &delta_i, &vec![m_err; k], f[0])?;
    Ok(GocCurve { ts, measured: f, bound, lambda_n, delta_i, gamma, m_err, instants })
}
