//! Time stepping: the mean-field Fokker–Planck flow, the N-particle master
//! equation, Euler–Maruyama ensembles and the independent-projection flow,
//! with dissipation and generation-of-chaos diagnostics.
//!
//! Every grid flow uses the square-root-approximation flux
//! `J_{i→i+1} = √(Π_i Π_{i+1})/Δx² · (ρ_i/Π_i − ρ_{i+1}/Π_{i+1})`, where `Π`
//! is the target Gibbs profile at the current state. It is central diffusion
//! plus an upwind-consistent drift `D log Π`, conserves mass exactly and has
//! `Π` as a discrete fixed point.

use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact_gibbs::{csum, gibbs_log_weights, ConfigDistribution};
use crate::functionals::MeanFieldModel;
use crate::grid::{relative_entropy, relative_fisher, same_grid, Grid, GridMeasure, Topology};
use crate::kernel::ModeKernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ExplicitUpwind,
    SemiImplicit,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explicit_upwind" | "explicit" => Ok(Scheme::ExplicitUpwind),
            "semi_implicit" => Ok(Scheme::SemiImplicit),
            other => Err(Error::OutOfRange(format!("unknown scheme `{other}`"))),
        }
    }
}

/// One-particle jump rates towards the right and left neighbours.
struct Rates {
    right: Vec<f64>,
    left: Vec<f64>,
}

impl Rates {
    fn towards(grid: &Grid, pi: &[f64]) -> Rates {
        let m = grid.len();
        let h2 = grid.dx() * grid.dx();
        let rate = |i: usize, j: Option<usize>| j.map_or(0.0, |j| (pi[j] / pi[i]).sqrt() / h2);
        Rates {
            right: (0..m).map(|i| rate(i, grid.right(i))).collect(),
            left: (0..m).map(|i| rate(i, grid.left(i))).collect(),
        }
    }

    fn max_exit(&self) -> f64 {
        self.right.iter().zip(&self.left).map(|(a, b)| a + b).fold(0.0, f64::max)
    }

    fn explicit(&self, grid: &Grid, rho: &[f64], dt: f64) -> Vec<f64> {
        (0..rho.len())
            .map(|i| {
                let mut v = rho[i] * (1.0 - dt * (self.right[i] + self.left[i]));
                if let Some(l) = grid.left(i) {
                    v += dt * rho[l] * self.right[l];
                }
                if let Some(r) = grid.right(i) {
                    v += dt * rho[r] * self.left[r];
                }
                v
            })
            .collect()
    }

    /// Solve `(I − dt L) x = rho` with the generator frozen.
    fn implicit(&self, grid: &Grid, rho: &[f64], dt: f64) -> Vec<f64> {
        let m = rho.len();
        let diag: Vec<f64> = (0..m).map(|i| 1.0 + dt * (self.right[i] + self.left[i])).collect();
        let sub: Vec<f64> = (0..m).map(|i| grid.left(i).map_or(0.0, |l| -dt * self.right[l])).collect();
        let sup: Vec<f64> = (0..m).map(|i| grid.right(i).map_or(0.0, |r| -dt * self.left[r])).collect();
        if grid.is_periodic() {
            solve_cyclic(&sub, &diag, &sup, rho)
        } else {
            solve_tridiagonal(&sub, &diag, &sup, rho)
        }
    }
}

/// Thomas algorithm; `sub[0]` and `sup[m-1]` are ignored.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..m {
        let den = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / den;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / den;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = d[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Periodic tridiagonal solve by Sherman–Morrison; `sub[0]` couples to the
/// last unknown and `sup[m-1]` to the first.
fn solve_cyclic(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let m = diag.len();
    let (alpha, beta) = (sup[m - 1], sub[0]);
    let gamma = -diag[0];
    let mut bb = diag.to_vec();
    bb[0] -= gamma;
    bb[m - 1] -= alpha * beta / gamma;
    let x = solve_tridiagonal(sub, &bb, sup, rhs);
    let mut u = vec![0.0; m];
    u[0] = gamma;
    u[m - 1] = alpha;
    let z = solve_tridiagonal(sub, &bb, sup, &u);
    let fact = (x[0] + beta * x[m - 1] / gamma) / (1.0 + z[0] + beta * z[m - 1] / gamma);
    x.iter().zip(&z).map(|(a, b)| a - fact * b).collect()
}

/// Clip tiny negatives produced by round-off, preserving mass.
fn settle(grid: &Arc<Grid>, mut w: Vec<f64>, events: &mut usize) -> Result<GridMeasure> {
    for (idx, v) in w.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { idx });
        }
    }
    if w.iter().any(|&v| v < 0.0) {
        *events += 1;
        let mass: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v = v.max(0.0));
        let clipped: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v *= mass / clipped);
    }
    Ok(GridMeasure::from_parts(grid, w))
}

/// State of the mean-field flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub m: GridMeasure,
    pub dt: f64,
    pub scheme: Scheme,
    /// Steps in which round-off negatives were clipped.
    pub clip_events: usize,
}

impl FlowState {
    pub fn new(m: GridMeasure, dt: f64, scheme: Scheme) -> Result<FlowState> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::OutOfRange(format!("time step {dt} must be positive")));
        }
        Ok(FlowState { t: 0.0, m, dt, scheme, clip_events: 0 })
    }

    pub fn mass(&self) -> f64 {
        csum(self.m.weights().iter().copied())
    }
}

/// Largest explicit step keeping the update a Markov kernel at `m`.
pub fn flow_stability_bound(m: &GridMeasure, model: &MeanFieldModel) -> Result<f64> {
    let pi = model.local_equilibrium(m)?;
    Ok(1.0 / Rates::towards(m.grid(), pi.weights()).max_exit())
}

fn sqra_step(
    rho: &GridMeasure,
    pi: &GridMeasure,
    dt: f64,
    scheme: Scheme,
    events: &mut usize,
) -> Result<GridMeasure> {
    let grid = rho.grid();
    let rates = Rates::towards(grid, pi.weights());
    let w = match scheme {
        Scheme::ExplicitUpwind => {
            let bound = 1.0 / rates.max_exit();
            if dt > bound {
                return Err(Error::UnstableStep { dt, bound });
            }
            rates.explicit(grid, rho.weights(), dt)
        }
        Scheme::SemiImplicit => rates.implicit(grid, rho.weights(), dt),
    };
    settle(grid, w, events)
}

/// One step of `∂_t m = ∇·(m ∇ log(m/Π[m]))`.
pub fn mf_step(state: &FlowState, model: &MeanFieldModel) -> Result<FlowState> {
    same_grid(&state.m, model.reference())?;
    let pi = model.local_equilibrium(&state.m)?;
    let mut events = state.clip_events;
    let m = sqra_step(&state.m, &pi, state.dt, state.scheme, &mut events)?;
    Ok(FlowState { t: state.t + state.dt, m, dt: state.dt, scheme: state.scheme, clip_events: events })
}

/// Run `steps` flow steps, returning every visited state including the first.
pub fn mf_trajectory(start: &FlowState, model: &MeanFieldModel, steps: usize) -> Result<Vec<FlowState>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(start.clone());
    for _ in 0..steps {
        let next = mf_step(out.last().expect("nonempty"), model)?;
        out.push(next);
    }
    Ok(out)
}

/// Residuals of a discrete dissipation identity along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipationReport {
    /// `|ΔF/(2dt) + I|` at every interior sample.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub max_dissipation: f64,
}

fn report(energies: &[f64], dissipation: &[f64], dt: f64) -> Result<DissipationReport> {
    if energies.len() < 3 {
        return Err(Error::OutOfRange("dissipation check needs at least 3 samples".into()));
    }
    let residuals: Vec<f64> = (1..energies.len() - 1)
        .map(|n| ((energies[n + 1] - energies[n - 1]) / (2.0 * dt) + dissipation[n]).abs())
        .collect();
    Ok(DissipationReport {
        max_residual: residuals.iter().cloned().fold(0.0, f64::max),
        max_dissipation: dissipation.iter().cloned().fold(0.0, f64::max),
        residuals,
    })
}

/// Compare the centred time difference of `F(m_t|m_*)` with `−I(m_t|Π[m_t])`
/// along equally spaced samples.
pub fn dissipation_check(traj: &[GridMeasure], dt: f64, model: &MeanFieldModel) -> Result<DissipationReport> {
    let f = traj.iter().map(|m| model.free_energy(m)).collect::<Result<Vec<_>>>()?;
    let i = traj.iter().map(|m| model.pl_gap(m)).collect::<Result<Vec<_>>>()?;
    report(&f, &i, dt)
}

/// State of the N-particle master equation with its cached generator.
#[derive(Debug, Clone)]
pub struct MasterState {
    pub t: f64,
    pub dt: f64,
    pub joint: ConfigDistribution,
    log_g: Arc<Vec<f64>>,
    bound: f64,
}

impl MasterState {
    /// Particles jump to grid neighbours at rate `√(G(x′)/G(x))/Δx²`, where
    /// `G` is the unnormalised Gibbs weight; this is the per-axis
    /// square-root discretisation of the N-particle Fokker–Planck operator,
    /// self-interaction included.
    pub fn new(joint: ConfigDistribution, model: &MeanFieldModel, dt: f64) -> Result<MasterState> {
        if **joint.grid() != **model.grid() {
            return Err(Error::GridMismatch);
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::OutOfRange(format!("time step {dt} must be positive")));
        }
        let log_g = gibbs_log_weights(model, joint.n())?;
        let mut state = MasterState { t: 0.0, dt, joint, log_g: Arc::new(log_g), bound: f64::INFINITY };
        state.bound = (0..state.joint.n())
            .map(|k| 1.0 / state.max_exit(k))
            .fold(f64::INFINITY, f64::min);
        if dt > state.bound {
            return Err(Error::UnstableStep { dt, bound: state.bound });
        }
        Ok(state)
    }

    pub fn stability_bound(&self) -> f64 {
        self.bound
    }

    fn neighbours(&self, idx: usize, k: usize) -> [Option<usize>; 2] {
        let g = self.joint.grid();
        let s = self.joint.stride(k);
        let c = (idx / s) % g.len();
        [g.left(c), g.right(c)].map(|n| n.map(|n| idx - c * s + n * s))
    }

    fn rate(&self, from: usize, to: usize) -> f64 {
        let h = self.joint.grid().dx();
        (0.5 * (self.log_g[to] - self.log_g[from])).exp() / (h * h)
    }

    fn max_exit(&self, k: usize) -> f64 {
        (0..self.joint.len())
            .into_par_iter()
            .map(|idx| self.neighbours(idx, k).iter().flatten().map(|&j| self.rate(idx, j)).sum::<f64>())
            .reduce(|| 0.0, f64::max)
    }

    pub fn mass(&self) -> f64 {
        csum(self.joint.weights().iter().copied())
    }
}

/// One Lie-split step: explicit Euler along each particle axis in turn.
pub fn master_step(state: &MasterState) -> Result<MasterState> {
    let mut w = state.joint.weights().to_vec();
    let dt = state.dt;
    for k in 0..state.joint.n() {
        let cur = &w;
        w = (0..cur.len())
            .into_par_iter()
            .map(|idx| {
                let mut v = cur[idx];
                for j in state.neighbours(idx, k).into_iter().flatten() {
                    v += dt * (cur[j] * state.rate(j, idx) - cur[idx] * state.rate(idx, j));
                }
                v
            })
            .collect();
    }
    for (idx, v) in w.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { idx });
        }
    }
    if w.iter().any(|&v| v < 0.0) {
        let mass: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v = v.max(0.0));
        let clipped: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v *= mass / clipped);
    }
    let joint = ConfigDistribution::from_parts(state.joint.grid(), state.joint.n(), w);
    Ok(MasterState { t: state.t + dt, dt, joint, log_g: state.log_g.clone(), bound: state.bound })
}

/// Modulated free energy of the joint against the flow, and its entropy part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChaosMetrics {
    pub t: f64,
    /// `H(m^N_t|m_t^{⊗N}) + (N/2) E⟨W, (μ_x − m_t)^{⊗2}⟩`.
    pub f_n_mod: f64,
    /// `H(m^N_t|m_t^{⊗N})`.
    pub h_rel: f64,
}

fn check_times(master: &MasterState, flow: &FlowState) -> Result<()> {
    if (master.t - flow.t).abs() > 1e-9 * (1.0 + flow.t.abs()) {
        return Err(Error::OutOfRange(format!("joint at t = {} but flow at t = {}", master.t, flow.t)));
    }
    if **master.joint.grid() != **flow.m.grid() {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

pub fn chaos_metrics(master: &MasterState, flow: &FlowState, model: &MeanFieldModel) -> Result<ChaosMetrics> {
    check_times(master, flow)?;
    let h_rel = master.joint.relative_entropy_product(&flow.m)?;
    let wt = model.kernel().reduce(&flow.m)?;
    let f_n_mod = h_rel + 0.5 * master.joint.n() as f64 * master.joint.expected_energy(&wt);
    Ok(ChaosMetrics { t: flow.t, f_n_mod, h_rel })
}

/// Left side of the generation-of-chaos error condition together with the
/// current modulated free energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GocSample {
    pub t: f64,
    pub lhs: f64,
    pub f_n_mod: f64,
}

/// `v_t = −D log(m_t/Π[m_t])`.
pub fn transport_field(m: &GridMeasure, model: &MeanFieldModel) -> Result<Vec<f64>> {
    let pi = model.local_equilibrium(m)?;
    let mut logr = Vec::with_capacity(m.len());
    for (idx, (&p, &q)) in m.weights().iter().zip(pi.weights()).enumerate() {
        if p <= 0.0 {
            return Err(Error::ZeroDensity { idx });
        }
        logr.push(p.ln() - q.ln());
    }
    Ok(m.grid().central_diff(&logr).into_iter().map(|d| -d).collect())
}

/// `−E ∫∫ ∇₁W(y,z) v_t(z) (μ_x − m_t)^{⊗2}(dy dz)` under the joint.
pub fn goc_error_lhs(joint: &ConfigDistribution, m: &GridMeasure, w: &ModeKernel, v: &[f64]) -> Result<f64> {
    let nf = joint.n() as f64;
    let mut pieces = Vec::with_capacity(w.modes().len());
    for (a, mode) in w.modes().iter().enumerate() {
        let dr = mode.dr.as_ref().ok_or(Error::MissingDerivatives { mode: a })?;
        let g: Vec<f64> = mode.r.iter().zip(v).map(|(r, v)| r * v).collect();
        let cf = crate::grid::integrate(m, dr)?;
        let cg = crate::grid::integrate(m, &g)?;
        pieces.push((mode.weight, dr.clone(), g, cf, cg));
    }
    Ok(-joint.expect(|_, c| {
        pieces
            .iter()
            .map(|(wa, f, g, cf, cg)| {
                let ef = c.iter().map(|&k| f[k]).sum::<f64>() / nf - cf;
                let eg = c.iter().map(|&k| g[k]).sum::<f64>() / nf - cg;
                wa * ef * eg
            })
            .sum()
    }))
}

pub fn goc_error_estimate(master: &MasterState, flow: &FlowState, model: &MeanFieldModel) -> Result<GocSample> {
    check_times(master, flow)?;
    let v = transport_field(&flow.m, model)?;
    let lhs = goc_error_lhs(&master.joint, &flow.m, model.kernel(), &v)?;
    let f_n_mod = chaos_metrics(master, flow, model)?.f_n_mod;
    Ok(GocSample { t: flow.t, lhs, f_n_mod })
}

/// One logged instant of a coupled master/flow run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChaosRecord {
    pub t: f64,
    pub f_n_mod: f64,
    pub h_rel: f64,
    pub goc_lhs: f64,
    /// `H(m^N_t|m^N_*)` against the N-particle Gibbs measure.
    pub h_gibbs: f64,
    #[serde(skip)]
    pub m_t: GridMeasure,
}

/// Evolve the joint law and the flow side by side with a common explicit
/// step, logging every `stride` steps (and the start).
pub fn chaos_run(
    model: &MeanFieldModel,
    joint: ConfigDistribution,
    m0: GridMeasure,
    dt: f64,
    steps: usize,
    stride: usize,
) -> Result<Vec<ChaosRecord>> {
    if stride == 0 {
        return Err(Error::OutOfRange("stride must be positive".into()));
    }
    let gibbs = ConfigDistribution::gibbs_measure(model, joint.n())?;
    let mut master = MasterState::new(joint, model, dt)?;
    let mut flow = FlowState::new(m0, dt, Scheme::ExplicitUpwind)?;
    let mut out = Vec::with_capacity(steps / stride + 1);
    for k in 0..=steps {
        if k % stride == 0 {
            let c = chaos_metrics(&master, &flow, model)?;
            let g = goc_error_estimate(&master, &flow, model)?;
            out.push(ChaosRecord {
                t: flow.t,
                f_n_mod: c.f_n_mod,
                h_rel: c.h_rel,
                goc_lhs: g.lhs,
                h_gibbs: master.joint.relative_entropy(&gibbs)?,
                m_t: flow.m.clone(),
            });
        }
        if k < steps {
            master = master_step(&master)?;
            flow = mf_step(&flow, model)?;
            master.t = flow.t;
        }
    }
    Ok(out)
}

/// Fit `lhs ≤ 2γ F + M` with `γ, M ≥ 0`: nonnegative least squares, then `M`
/// raised to the upper envelope so the bound holds at every sample.
pub fn fit_gamma_m(f: &[f64], lhs: &[f64]) -> Result<(f64, f64)> {
    check_len_eq(f.len(), lhs.len())?;
    if f.is_empty() {
        return Err(Error::OutOfRange("no samples to fit".into()));
    }
    let n = f.len() as f64;
    let sse = |g: f64, m: f64| -> f64 { f.iter().zip(lhs).map(|(x, y)| (y - 2.0 * g * x - m).powi(2)).sum() };
    let (a, b) = crate::exact_gibbs::linear_fit(f, lhs);
    let mut cands = vec![(0.0, (lhs.iter().sum::<f64>() / n).max(0.0))];
    if b >= 0.0 && a >= 0.0 {
        cands.push((b / 2.0, a));
    }
    let ff: f64 = f.iter().map(|x| x * x).sum();
    if ff > 0.0 {
        let g = (f.iter().zip(lhs).map(|(x, y)| x * y).sum::<f64>() / (2.0 * ff)).max(0.0);
        cands.push((g, 0.0));
    }
    let (gamma, m0) = cands
        .into_iter()
        .min_by(|p, q| sse(p.0, p.1).total_cmp(&sse(q.0, q.1)))
        .expect("nonempty");
    let envelope = f.iter().zip(lhs).map(|(x, y)| y - 2.0 * gamma * x).fold(f64::NEG_INFINITY, f64::max);
    Ok((gamma, m0.max(envelope).max(0.0)))
}

fn check_len_eq(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { expected: a, got: b });
    }
    Ok(())
}

/// `e^{−2Γ(t,0)} F0 + ∫_0^t e^{−2Γ(t,s)} (Δ_I(s) + M(s)) ds` with
/// `Γ(t,s) = ∫_s^t (λ_N − γ)`, by the trapezoid rule on the sample times.
/// Returns the bound at every sample time.
pub fn goc_bound(
    ts: &[f64],
    lambda_n: &[f64],
    gamma: &[f64],
    delta_i: &[f64],
    m_err: &[f64],
    f0: f64,
) -> Result<Vec<f64>> {
    let k = ts.len();
    for len in [lambda_n.len(), gamma.len(), delta_i.len(), m_err.len()] {
        check_len_eq(k, len)?;
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if ts.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::OutOfRange("sample times must increase".into()));
    }
    let rate: Vec<f64> = lambda_n.iter().zip(gamma).map(|(l, g)| l - g).collect();
    let mut cum = vec![0.0; k];
    for j in 1..k {
        cum[j] = cum[j - 1] + 0.5 * (ts[j] - ts[j - 1]) * (rate[j] + rate[j - 1]);
    }
    let src: Vec<f64> = delta_i.iter().zip(m_err).map(|(a, b)| a + b).collect();
    Ok((0..k)
        .map(|i| {
            let kern = |j: usize| (-2.0 * (cum[i] - cum[j])).exp() * src[j];
            let integral = csum((1..=i).map(|j| 0.5 * (ts[j] - ts[j - 1]) * (kern(j) + kern(j - 1))));
            (-2.0 * cum[i]).exp() * f0 + integral
        })
        .collect())
}

/// Particle ensemble for the Euler–Maruyama scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub t: f64,
    pub positions: Vec<f64>,
    pub seed: u64,
    pub step: u64,
    pub dt: f64,
    /// Disable the Brownian increment (test mode).
    pub noise: bool,
    /// Wall reflections performed so far.
    pub reflections: u64,
}

impl EnsembleState {
    pub fn new(positions: Vec<f64>, seed: u64, dt: f64) -> Result<EnsembleState> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::OutOfRange(format!("time step {dt} must be positive")));
        }
        Ok(EnsembleState { t: 0.0, positions, seed, step: 0, dt, noise: true, reflections: 0 })
    }

    /// Empirical mean of a grid function, linearly interpolated.
    pub fn empirical_mean(&self, grid: &Grid, f: &[f64]) -> f64 {
        csum(self.positions.iter().map(|&x| grid.interpolate(f, x))) / self.positions.len() as f64
    }
}

/// Standard normal increment for particle `i` at step `step`, from an
/// independent counter-addressed ChaCha stream.
pub fn brownian_increment(seed: u64, i: usize, step: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng.set_word_pos(step as u128 * 128);
    StandardNormal.sample(&mut rng)
}

fn confine(grid: &Grid, mut x: f64) -> (f64, u64) {
    match grid.topology() {
        Topology::Periodic => (x.rem_euclid(2.0 * std::f64::consts::PI), 0),
        Topology::Interval { half_width: l } => {
            let mut n = 0;
            while x > l || x < -l {
                x = if x > l { 2.0 * l - x } else { -2.0 * l - x };
                n += 1;
            }
            (x, n)
        }
    }
}

/// `X ← X + b(X) dt + √(2dt) ξ` with `b = D log m − Σ_a w_a r_a′ ⟨r̃_a, μ_X⟩`,
/// the same drift decomposition as the grid flow (self-interaction included).
pub fn em_step(state: &EnsembleState, model: &MeanFieldModel) -> Result<EnsembleState> {
    let grid = model.grid();
    let logm: Vec<f64> = model.reference().weights().iter().map(|p| p.ln()).collect();
    let dlogm = grid.central_diff(&logm);
    let wm = model.reduced();
    let mut field = Vec::with_capacity(wm.modes().len());
    for (a, mode) in wm.modes().iter().enumerate() {
        let dr = mode.dr.as_ref().ok_or(Error::MissingDerivatives { mode: a })?;
        let c = state.empirical_mean(grid, &mode.r);
        field.push((mode.weight * c, dr));
    }
    let sd = (2.0 * state.dt).sqrt();
    let moved: Vec<(f64, u64)> = state
        .positions
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut b = grid.interpolate(&dlogm, x);
            for (s, dr) in &field {
                b -= s * grid.interpolate(dr, x);
            }
            let mut y = x + b * state.dt;
            if state.noise {
                y += sd * brownian_increment(state.seed, i, state.step);
            }
            confine(grid, y)
        })
        .collect();
    let reflections = state.reflections + moved.iter().map(|p| p.1).sum::<u64>();
    Ok(EnsembleState {
        t: state.t + state.dt,
        positions: moved.into_iter().map(|p| p.0).collect(),
        seed: state.seed,
        step: state.step + 1,
        dt: state.dt,
        noise: state.noise,
        reflections,
    })
}

/// Marginals of the independent-projection flow.
#[derive(Debug, Clone, PartialEq)]
pub struct IpState {
    pub t: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub xi: Vec<GridMeasure>,
    pub clip_events: usize,
}

impl IpState {
    pub fn new(xi: Vec<GridMeasure>, dt: f64, scheme: Scheme) -> Result<IpState> {
        if xi.len() < 2 {
            return Err(Error::OutOfRange(format!("need N >= 2 marginals, got {}", xi.len())));
        }
        for x in &xi {
            same_grid(x, &xi[0])?;
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::OutOfRange(format!("time step {dt} must be positive")));
        }
        Ok(IpState { t: 0.0, dt, scheme, xi, clip_events: 0 })
    }
}

/// `ξ̄^{−i} = (1/(N−1)) Σ_{j≠i} ξ^j`.
pub fn leave_one_out(xi: &[GridMeasure], i: usize) -> Vec<f64> {
    let inv = 1.0 / (xi.len() - 1) as f64;
    let mut out = vec![0.0; xi[0].len()];
    for (j, x) in xi.iter().enumerate().filter(|(j, _)| *j != i) {
        let _ = j;
        for (o, w) in out.iter_mut().zip(x.weights()) {
            *o += inv * w;
        }
    }
    out
}

fn ip_targets(xi: &[GridMeasure], model: &MeanFieldModel) -> Result<Vec<GridMeasure>> {
    (0..xi.len()).map(|i| model.local_equilibrium_of(&leave_one_out(xi, i))).collect()
}

/// One step of every marginal towards `Π[ξ̄^{−i}]`, targets frozen at the
/// start of the step.
pub fn ip_step(state: &IpState, model: &MeanFieldModel) -> Result<IpState> {
    same_grid(&state.xi[0], model.reference())?;
    let targets = ip_targets(&state.xi, model)?;
    let mut events = state.clip_events;
    let xi = state
        .xi
        .iter()
        .zip(&targets)
        .map(|(x, pi)| sqra_step(x, pi, state.dt, state.scheme, &mut events))
        .collect::<Result<Vec<_>>>()?;
    Ok(IpState { t: state.t + state.dt, dt: state.dt, scheme: state.scheme, xi, clip_events: events })
}

/// Independent-projection energy, dissipation and theorem margins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IpFunctionals {
    pub f_ind: f64,
    pub entropy_sum: f64,
    pub dissipation: f64,
    /// `F_ind − δ_N Σ H` and `Σ I − 2λ_N F_ind`, when constants are available.
    pub margins: Option<[f64; 2]>,
    pub delta_n: Option<f64>,
    pub lambda_n: Option<f64>,
    /// The size hypothesis of the contractivity bound fails.
    pub vacuous: bool,
}

fn ip_pair_sum(xi: &[GridMeasure], wm: &ModeKernel) -> f64 {
    let moms: Vec<Vec<f64>> = xi.iter().map(|x| wm.moments(x)).collect();
    wm.modes()
        .iter()
        .enumerate()
        .map(|(a, md)| {
            let tot: f64 = moms.iter().map(|c| c[a]).sum();
            let sq: f64 = moms.iter().map(|c| c[a] * c[a]).sum();
            md.weight * (tot * tot - sq)
        })
        .sum()
}

/// `F_ind = Σ H(ξ^i|m) + (1/(2(N−1))) Σ_{i≠j} ⟨W_m, ξ^i⊗ξ^j⟩` and
/// `Σ_i I(ξ^i|Π[ξ̄^{−i}])`. Margins use the model's regularity budget with
/// the coercivity constant `delta` when both are present.
pub fn ip_functionals(xi: &[GridMeasure], model: &MeanFieldModel, delta: Option<f64>) -> Result<IpFunctionals> {
    let n = xi.len();
    if n < 2 {
        return Err(Error::OutOfRange(format!("need N >= 2 marginals, got {n}")));
    }
    let entropy_sum = csum(xi.iter().map(|x| relative_entropy(x, model.reference())).collect::<Result<Vec<_>>>()?);
    let f_ind = entropy_sum + ip_pair_sum(xi, model.reduced()) / (2.0 * (n - 1) as f64);
    let targets = ip_targets(xi, model)?;
    let dissipation =
        csum(xi.iter().zip(&targets).map(|(x, p)| relative_fisher(x, p)).collect::<Result<Vec<_>>>()?);
    let mut out =
        IpFunctionals { f_ind, entropy_sum, dissipation, margins: None, delta_n: None, lambda_n: None, vacuous: false };
    if let (Some(delta), Some(budget)) = (delta, model.budget()) {
        use crate::exact_gibbs::{theorem_constants, Theorem, TheoremInputs};
        let inputs = TheoremInputs { n, delta, epsilon: 1.0, lambda: None, budget: *budget };
        let coer = theorem_constants(Theorem::IpCoer, inputs)?;
        let contr = theorem_constants(Theorem::IpContr, inputs)?;
        let dn = coer.delta_n.expect("ip_coer sets delta_n");
        let ln = contr.lambda_n.expect("ip_contr sets lambda_n");
        out.margins = Some([f_ind - dn * entropy_sum, dissipation - 2.0 * ln * f_ind]);
        out.delta_n = Some(dn);
        out.lambda_n = Some(ln);
        out.vacuous = contr.vacuous;
    }
    Ok(out)
}

/// Both sides of `F_ind − F^N(ξ¹⊗…⊗ξ^N|m)` against
/// `(1/(2N(N−1))) Σ_{i≠j} ⟨W_m, ξ^i⊗ξ^j⟩ − (1/(2N)) Σ_i ∫ W_m(x,x) ξ^i(dx)`.
pub fn ip_difference(xi: &[GridMeasure], model: &MeanFieldModel) -> Result<(f64, f64)> {
    let n = xi.len();
    let nf = n as f64;
    let f_ind = ip_functionals(xi, model, None)?.f_ind;
    let prod = ConfigDistribution::product(xi)?;
    let lhs = f_ind - prod.modulated_free_energy(model)?;
    let diag = model.reduced().diagonal();
    let self_sum = csum(xi.iter().map(|x| x.weights().iter().zip(&diag).map(|(p, d)| p * d).sum::<f64>()));
    let rhs = ip_pair_sum(xi, model.reduced()) / (2.0 * nf * (nf - 1.0)) - self_sum / (2.0 * nf);
    Ok((lhs, rhs))
}

/// Centred difference of `F_ind` against `−Σ_i I(ξ^i|Π[ξ̄^{−i}])`.
pub fn ip_dissipation_check(traj: &[Vec<GridMeasure>], dt: f64, model: &MeanFieldModel) -> Result<DissipationReport> {
    let fun = traj.iter().map(|xi| ip_functionals(xi, model, None)).collect::<Result<Vec<_>>>()?;
    let f: Vec<f64> = fun.iter().map(|r| r.f_ind).collect();
    let i: Vec<f64> = fun.iter().map(|r| r.dissipation).collect();
    report(&f, &i, dt)
}
