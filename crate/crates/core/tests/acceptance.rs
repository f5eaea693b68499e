//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::process::ExitCode;
use std::time::Instant;

use mflab_core::dynamics::{
    chaos_run, dissipation_check, ip_dissipation_check, ip_step, master_step, mf_trajectory, FlowState,
    IpState, MasterState, Scheme,
};
use mflab_core::exact_gibbs::{
    approx_identities, chain_rule, inequality_audit, jw_audit, tensor_limit_gap, theorem_constants,
    ConfigDistribution, Theorem, TheoremInputs,
};
use mflab_core::functionals::{disc_tilts, Condition, MeanFieldModel};
use mflab_core::kernel::{Mode, ModeClass, ModeKernel};
use mflab_core::models::{self, CurieWeiss};
use mflab_core::tilts::TiltFamily;
use mflab_core::{relative_entropy, Grid, GridMeasure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

struct Outcome {
    pass: bool,
    detail: String,
}

fn random_measure(g: &std::sync::Arc<Grid>, rng: &mut ChaCha8Rng, conc: f64) -> GridMeasure {
    let raw: Vec<f64> = (0..g.len())
        .map(|_| {
            let e: f64 = Exp1.sample(rng);
            e.powf(conc) + 1e-300
        })
        .collect();
    GridMeasure::normalize(&raw, g).unwrap()
}

fn random_kernel(g: &std::sync::Arc<Grid>, rng: &mut ChaCha8Rng) -> ModeKernel {
    let modes = (0..3)
        .map(|_| Mode {
            weight: 4.0 * rng.random::<f64>() - 2.0,
            r: (0..g.len()).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect(),
            dr: None,
            class: ModeClass::Bounded,
        })
        .collect();
    ModeKernel::new(g, modes).unwrap()
}

fn identity_suite() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1d);
    let g = Grid::periodic(6)?;
    let (mut chain, mut approx1, mut dual, mut gap) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let raw: Vec<f64> = (0..216)
            .map(|_| {
                let e: f64 = Exp1.sample(&mut rng);
                e.powi(3)
            })
            .collect();
        let nu = ConfigDistribution::new(&g, 3, &raw)?;
        let m = random_measure(&g, &mut rng, 1.0);
        let (l, r) = chain_rule(&nu, &m)?;
        chain = chain.max((l - r).abs());
        let u = random_kernel(&g, &mut rng);
        let rep = approx_identities(&nu, &u, 0.5)?;
        approx1 = approx1.max((rep.martingale_lhs - rep.martingale_rhs).abs());
    }
    for _ in 0..100 {
        let u = random_kernel(&g, &mut rng);
        let m = random_measure(&g, &mut rng, 1.0);
        let a = random_measure(&g, &mut rng, 2.0);
        let b = random_measure(&g, &mut rng, 2.0);
        let da: Vec<f64> = a.weights().iter().zip(m.weights()).map(|(x, y)| x - y).collect();
        let db: Vec<f64> = b.weights().iter().zip(m.weights()).map(|(x, y)| x - y).collect();
        let mut dense = 0.0;
        for i in 0..g.len() {
            for j in 0..g.len() {
                dense += u.entry(i, j) * da[i] * db[j];
            }
        }
        let reduced = u.reduce(&m)?.bilinear(a.weights(), b.weights());
        dual = dual.max((dense - reduced).abs());
    }
    let model = models::xy(8, 1.5)?;
    for _ in 0..5 {
        let nu = random_measure(model.grid(), &mut rng, 1.0);
        for n in 2..=5 {
            let lg = tensor_limit_gap(&nu, &model, n)?;
            gap = gap.max((lg.gap_f - lg.gap_f_exact).abs());
        }
    }
    let pass = chain <= 1e-10 && approx1 <= 1e-10 && dual <= 1e-10 && gap <= 1e-12;
    Ok(Outcome {
        pass,
        detail: format!(
            "chain-rule {chain:.1e}, approx-1 {approx1:.1e}, dual-cumulant {dual:.1e}, tensor gap {gap:.1e}"
        ),
    })
}

fn xy_constants() -> Result<Outcome> {
    let model = models::xy(64, 1.5)?;
    let hs = disc_tilts(2, 10.0, 40, 8);
    let coer = model.condition_scan(Condition::Coer, 0.25, &hs)?.min_margin;
    let fe = model.condition_scan(Condition::FE, 0.25, &hs)?.min_margin;
    let bad = model.condition_scan(Condition::Coer, 0.30, &hs)?.min_margin;
    Ok(Outcome {
        pass: coer >= -1e-8 && fe >= -1e-8 && bad <= -1e-4,
        detail: format!("Coer(0.25) {coer:.2e}, FE(0.25) {fe:.2e}, Coer(0.30) {bad:.2e}"),
    })
}

fn curie_weiss() -> Result<Outcome> {
    let probe = CurieWeiss::new(1.0, 2.0, 1.0, 0.0, 201, 5.0)?;
    let j_c = probe.critical()?.j_c;
    let mut cw = probe.clone();
    cw.j = 1.5 * j_c;
    let h_c = cw.critical()?.h_c;
    cw.h = 0.3 * h_c;
    let roots = cw.roots()?;
    let n_roots = roots.len();
    if n_roots != 3 {
        return Ok(Outcome { pass: false, detail: format!("{n_roots} roots at J = {:.4}", cw.j) });
    }
    let plus = cw.invariant(roots[2])?;
    let minus = cw.invariant(roots[0])?;
    let model = cw.model(plus, 1.0, 1.0)?;
    let pl = model.pl_gap(&minus)?;
    let fe = model.free_energy(&minus)?;
    let fam = cw.family()?;
    let d_opt = fam.optimal_g_delta(cw.j, cw.h, 0.999, 1e-10)?;
    let delta = 0.5 * d_opt;
    let gmin = fam.g_delta_min(delta, cw.j, cw.h)?.min_value;
    Ok(Outcome {
        pass: pl < 1e-8 && fe > 1e-3 && delta > 0.0 && gmin.abs() <= 1e-8,
        detail: format!(
            "J_c {j_c:.5}, h_c {h_c:.5}, roots {:.4}/{:.4}/{:.4}, pl_gap(m-) {pl:.1e}, F(m-|m+) {fe:.3e}, \
             min G_delta {gmin:.1e} at delta {delta:.4}",
            roots[0], roots[1], roots[2]
        ),
    })
}

fn inequality_fuzz() -> Result<Outcome> {
    let model = models::xy(8, 1.5)?;
    let budget = *model.budget().expect("xy carries a budget");
    let coer = theorem_constants(
        Theorem::Coer,
        TheoremInputs { n: 3, delta: 0.25, epsilon: 0.5, lambda: None, budget },
    )?;
    let u = ModeKernel::xy(model.grid(), -1.0);
    let deltas = [0.05, 0.25, 0.5, 0.75, 0.95];
    let mut rng = ChaCha8Rng::seed_from_u64(0xf022);
    let (mut worst_coer, mut worst_jw) = (f64::INFINITY, f64::INFINITY);
    for k in 0..1000 {
        let conc = [1.0, 3.0, 8.0][k % 3];
        let raw: Vec<f64> = (0..512)
            .map(|_| {
                let e: f64 = Exp1.sample(&mut rng);
                e.powf(conc)
            })
            .collect();
        let nu = ConfigDistribution::new(model.grid(), 3, &raw)?.symmetrized();
        worst_coer = worst_coer.min(inequality_audit(&nu, &model, &coer)?.margin);
        for &d in &deltas {
            worst_jw = worst_jw.min(jw_audit(&nu, &u, model.reference(), d)?.margin);
        }
    }
    Ok(Outcome {
        pass: worst_coer >= 0.0 && worst_jw >= 0.0,
        detail: format!(
            "min coercivity margin {worst_coer:.3} (delta_N {:.3}, Delta_F {:.3}), min jw margin {worst_jw:.3}",
            coer.delta_n.unwrap(),
            coer.delta_f.unwrap()
        ),
    })
}

fn xy_relaxation_residual(m: usize, dt: f64, t_end: f64) -> Result<f64> {
    let model = models::xy(m, 1.5)?;
    let fam = model.tilts()?;
    let start = fam.tilt(&[1.5, 0.5])?;
    let steps = (t_end / dt).round() as usize;
    let traj = mf_trajectory(&FlowState::new(start, dt, Scheme::ExplicitUpwind)?, &model, steps)?;
    let ms: Vec<GridMeasure> = traj.into_iter().map(|s| s.m).collect();
    Ok(dissipation_check(&ms, dt, &model)?.max_residual)
}

fn ip_residual(m: usize, dt: f64, t_end: f64) -> Result<f64> {
    let model = models::xy(m, 1.5)?;
    let fam = model.tilts()?;
    let xi = vec![fam.tilt(&[1.5, 0.0])?, fam.tilt(&[-0.5, 1.0])?, fam.tilt(&[0.2, -1.2])?, fam.tilt(&[0.8, 0.8])?];
    let mut s = IpState::new(xi, dt, Scheme::ExplicitUpwind)?;
    let steps = (t_end / dt).round() as usize;
    let mut traj = vec![s.xi.clone()];
    for _ in 0..steps {
        s = ip_step(&s, &model)?;
        traj.push(s.xi.clone());
    }
    Ok(ip_dissipation_check(&traj, dt, &model)?.max_residual)
}

fn dynamics_suite() -> Result<Outcome> {
    let t_end = 0.05;
    let (r0, r1) = (xy_relaxation_residual(128, 1e-4, t_end)?, xy_relaxation_residual(181, 5e-5, t_end)?);
    let flow_ratio = r1 / r0;
    let (i0, i1) = (ip_residual(128, 1e-4, t_end)?, ip_residual(181, 5e-5, t_end)?);
    let ip_ratio = i1 / i0;

    let model = models::xy(8, 1.5)?;
    let fam = model.tilts()?;
    let start = ConfigDistribution::iid(&fam.tilt(&[1.5, 0.0])?, 3)?;
    let gibbs = ConfigDistribution::gibbs_measure(&model, 3)?;
    let rho_pi = (-3.0f64).exp();
    let dt = 0.05;
    let mut ms = MasterState::new(start, &model, dt)?;
    let steps = (50.0 / rho_pi / dt).ceil() as usize;
    for _ in 0..steps {
        ms = master_step(&ms)?;
    }
    let tv = ms.joint.tv_distance(&gibbs)?;

    let chaos_model = models::xy(10, 1.0)?;
    let cf = chaos_model.tilts()?;
    let (a, b) = (cf.tilt(&[0.6, 0.0])?, cf.tilt(&[-0.6, 0.0])?);
    let pa = ConfigDistribution::iid(&a, 3)?;
    let pb = ConfigDistribution::iid(&b, 3)?;
    let mix: Vec<f64> = pa.weights().iter().zip(pb.weights()).map(|(x, y)| 0.5 * (x + y)).collect();
    let joint = ConfigDistribution::new(chaos_model.grid(), 3, &mix)?;
    let m0 = a.mix(&b, 0.5)?;
    let recs = chaos_run(&chaos_model, joint, m0, 0.01, 2000, 20)?;
    let burn_in = 1.0;
    let after: Vec<f64> = recs.iter().filter(|r| r.t >= burn_in - 1e-9).map(|r| r.f_n_mod).collect();
    let monotone = after.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let curve = models::xy_goc_curve(&recs, &chaos_model, 1.0, 3, 0.5)?;
    let slack = curve.min_slack();

    let pass = flow_ratio <= 0.6 && ip_ratio <= 0.6 && tv < 5e-3 && monotone && slack >= 0.0;
    Ok(Outcome {
        pass,
        detail: format!(
            "flow residual {r0:.2e} -> {r1:.2e} (ratio {flow_ratio:.3}), ip residual {i0:.2e} -> {i1:.2e} \
             (ratio {ip_ratio:.3}), master TV {tv:.1e}, F_N_mod {:.4} -> {:.4} monotone after t={burn_in}: \
             {monotone}, goc min slack {slack:.3e} (gamma {:.3e}, M {:.3e})",
            recs[0].f_n_mod,
            recs.last().unwrap().f_n_mod,
            curve.gamma,
            curve.m_err
        ),
    })
}

fn tilt_identities(model: &MeanFieldModel, fam: &TiltFamily, hs: &[Vec<f64>], j: f64) -> Result<(f64, f64)> {
    let g = model.grid();
    let mu0 = fam.mu0().to_vec();
    let base = fam.base();
    let (mut worst, mut fenchel) = (0.0f64, 0.0f64);
    for h in hs {
        let t = fam.tilt(h)?;
        let hz = fam.helmholtz(h)?;
        let mu_h = hz.grad.clone();
        let dmu: Vec<f64> = mu_h.iter().zip(&mu0).map(|(a, b)| a - b).collect();
        let dmu2: f64 = dmu.iter().map(|v| v * v).sum();
        let d: Vec<f64> = t.weights().iter().zip(base.weights()).map(|(a, b)| a - b).collect();
        let mut energy = 0.0;
        for i in 0..g.len() {
            for k in 0..g.len() {
                energy += model.kernel().entry(i, k) * d[i] * d[k];
            }
        }
        worst = worst.max((energy + j * dmu2).abs());
        let gval = fam.gibbs(&mu_h)?.g;
        worst = worst.max((relative_entropy(&t, base)? - gval).abs());
        let k: Vec<f64> = dmu.iter().map(|v| j * v).collect();
        let f_k = fam.helmholtz(&k)?.f;
        let mu0_dot: f64 = mu0.iter().zip(&dmu).map(|(a, b)| a * b).sum();
        let closed = gval + f_k - j * mu0_dot - j * dmu2;
        worst = worst.max((model.fe_gap(&t)? - closed).abs());
        let hdot: f64 = h.iter().zip(&mu_h).map(|(a, b)| a * b).sum();
        fenchel = fenchel.max((gval + hz.f - hdot).abs());
    }
    Ok((worst, fenchel))
}

fn tilt_legendre() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7117);
    let xy = models::xy(128, 1.5)?;
    let xf = xy.tilts()?;
    let hs: Vec<Vec<f64>> = (0..50)
        .map(|_| {
            let r = 5.0 * rng.random::<f64>();
            let a = std::f64::consts::TAU * rng.random::<f64>();
            vec![r * a.cos(), r * a.sin()]
        })
        .collect();
    let (xw, xfen) = tilt_identities(&xy, &xf, &hs, 1.5)?;
    let cw = CurieWeiss::new(1.0, 2.0, 0.8, 0.0, 201, 5.0)?;
    let cwm = MeanFieldModel::new(cw.base()?, ModeKernel::curie_weiss(cw.grid(), cw.j))?;
    let cf = cw.family()?;
    let hs: Vec<Vec<f64>> = (0..50).map(|_| vec![6.0 * rng.random::<f64>() - 3.0]).collect();
    let (cwo, cfen) = tilt_identities(&cwm, &cf, &hs, cw.j)?;
    let worst = xw.max(xfen).max(cwo).max(cfen);
    Ok(Outcome {
        pass: worst <= 1e-8,
        detail: format!("XY identities {xw:.1e}, Fenchel {xfen:.1e}; CW identities {cwo:.1e}, Fenchel {cfen:.1e}"),
    })
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<Outcome>); 6] = [
        ("identity suite", identity_suite),
        ("XY constants", xy_constants),
        ("Curie-Weiss phase structure", curie_weiss),
        ("theorem inequality fuzz", inequality_fuzz),
        ("dynamics suite", dynamics_suite),
        ("tilt-Legendre cross-checks", tilt_legendre),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let clock = Instant::now();
        let (ok, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "[{}] {name} ({:.1}s): {detail}",
            if ok { "PASS" } else { "FAIL" },
            clock.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of 6 criteria passed", 6 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
