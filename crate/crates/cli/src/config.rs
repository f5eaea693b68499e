//! Experiment configuration: parsing, validation and default resolution.

use std::path::{Path, PathBuf};

use mflab_core::kernel::{budget_audit, ModeKernel, Primitive};
use mflab_core::models::{self, CurieWeiss};
use mflab_core::{Grid, GridMeasure};
use mflab_core::functionals::MeanFieldModel;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Experiment;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },

    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::ConfigInvalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: Option<ModelBlock>,
    pub experiment: Option<ExperimentBlock>,
    #[serde(default)]
    pub numeric: NumericBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub name: Option<String>,
    #[serde(rename = "J")]
    pub j: Option<f64>,
    pub theta: Option<f64>,
    pub sigma: Option<f64>,
    pub h: Option<f64>,
    #[serde(rename = "M")]
    pub m: Option<usize>,
    #[serde(rename = "L")]
    pub l: Option<f64>,
    /// Log-Sobolev constants of a Curie–Weiss or custom model.
    pub rho: Option<f64>,
    pub rho_pi: Option<f64>,
    /// Custom models only.
    pub topology: Option<String>,
    pub modes: Option<Vec<ModeSpec>>,
    pub potential: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub primitive: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub name: Option<String>,
    pub samples: Option<usize>,
    pub theorems: Option<Vec<String>>,
    pub condition: Option<String>,
    pub radius: Option<f64>,
    pub n_radial: Option<usize>,
    pub n_angular: Option<usize>,
    pub j_range: Option<[f64; 2]>,
    pub h_range: Option<[f64; 2]>,
    pub resolution: Option<[usize; 2]>,
    pub boundary_band: Option<f64>,
    pub tilt: Option<Vec<f64>>,
    pub scheme: Option<String>,
    pub particles: Option<usize>,
    pub master: Option<bool>,
    pub burn_in: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericBlock {
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub dt: Option<f64>,
    #[serde(rename = "T")]
    pub t: Option<f64>,
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    pub lambda: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub identity: Option<f64>,
    pub inequality: Option<f64>,
    pub limit_gap: Option<f64>,
    pub dissipation: Option<f64>,
    pub monotone: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: Option<PathBuf>,
    pub stride: Option<usize>,
}

/// Load a TOML config, or the `config` entry of a previously written
/// `manifest.json`.
pub fn load(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| invalid("<manifest>", e.to_string()))?;
        let cfg = v
            .get("config")
            .ok_or_else(|| invalid("config", "manifest carries no `config` entry"))?;
        return serde_json::from_value(cfg.clone()).map_err(|e| parse_error(&e.to_string()));
    }
    parse(&text)
}

pub fn parse(text: &str) -> Result<Config, ConfigError> {
    toml::from_str(text).map_err(|e| parse_error(e.message()))
}

fn parse_error(msg: &str) -> ConfigError {
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.contains("field"))
        .unwrap_or("<parse>");
    invalid(field, msg.trim())
}

fn positive(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(field, format!("{v} must be positive and finite")))
    }
}

fn unit_interval(field: &str, v: f64, closed_right: bool) -> Result<f64, ConfigError> {
    let ok = v > 0.0 && (v < 1.0 || (closed_right && v == 1.0));
    if ok {
        Ok(v)
    } else {
        let r = if closed_right { "(0, 1]" } else { "(0, 1)" };
        Err(invalid(field, format!("{v} must lie in {r}")))
    }
}

fn require<T: Clone>(field: &str, v: &Option<T>) -> Result<T, ConfigError> {
    v.clone().ok_or_else(|| invalid(field, "missing"))
}

/// The model named in the config, built and validated.
pub enum BuiltModel {
    Xy { model: MeanFieldModel, j: f64 },
    CurieWeiss { cw: CurieWeiss, model: MeanFieldModel },
    Custom { model: MeanFieldModel },
}

impl BuiltModel {
    pub fn model(&self) -> &MeanFieldModel {
        match self {
            BuiltModel::Xy { model, .. } | BuiltModel::CurieWeiss { model, .. } | BuiltModel::Custom { model } => model,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BuiltModel::Xy { .. } => "xy",
            BuiltModel::CurieWeiss { .. } => "curie_weiss",
            BuiltModel::Custom { .. } => "custom",
        }
    }
}

/// A validated config with every default filled in.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub experiment: Experiment,
    pub config: Config,
    pub out: PathBuf,
}

impl Resolved {
    pub fn model(&self) -> &ModelBlock {
        self.config.model.as_ref().expect("resolved")
    }

    pub fn exp(&self) -> &ExperimentBlock {
        self.config.experiment.as_ref().expect("resolved")
    }

    pub fn num(&self) -> &NumericBlock {
        &self.config.numeric
    }

    pub fn n(&self) -> usize {
        self.num().n.expect("resolved")
    }

    pub fn seeds(&self) -> &[u64] {
        self.num().seeds.as_deref().expect("resolved")
    }

    pub fn stride(&self) -> usize {
        self.config.output.stride.expect("resolved")
    }

    pub fn tol(&self) -> &Tolerances {
        &self.num().tolerances
    }

    pub fn build_model(&self) -> anyhow::Result<BuiltModel> {
        build_model(self.model())
    }
}

fn default<T: Clone>(slot: &mut Option<T>, v: T) -> T {
    slot.get_or_insert(v).clone()
}

/// Validate every field and fill defaults. `out` overrides `output.directory`.
pub fn resolve(mut cfg: Config, out: Option<&Path>) -> Result<Resolved, ConfigError> {
    let mb = cfg.model.as_mut().ok_or_else(|| invalid("model", "missing block"))?;
    let name = require("model.name", &mb.name)?;
    match name.as_str() {
        "xy" => {
            positive("model.J", require("model.J", &mb.j)?)?;
            default(&mut mb.m, 64);
            for (f, set) in [("theta", mb.theta.is_some()), ("sigma", mb.sigma.is_some()), ("h", mb.h.is_some()), ("L", mb.l.is_some())] {
                if set {
                    return Err(invalid(&format!("model.{f}"), "not a parameter of the xy model"));
                }
            }
        }
        "curie_weiss" => {
            positive("model.theta", default(&mut mb.theta, 1.0))?;
            let s = default(&mut mb.sigma, 2.0);
            if !s.is_finite() {
                return Err(invalid("model.sigma", "must be finite"));
            }
            positive("model.J", require("model.J", &mb.j)?)?;
            if !default(&mut mb.h, 0.0).is_finite() {
                return Err(invalid("model.h", "must be finite"));
            }
            default(&mut mb.m, 201);
            positive("model.L", default(&mut mb.l, 5.0))?;
        }
        "custom" => {
            let topo = default(&mut mb.topology, "periodic".into());
            if topo != "periodic" && topo != "interval" {
                return Err(invalid("model.topology", format!("`{topo}` is neither periodic nor interval")));
            }
            if topo == "interval" {
                positive("model.L", default(&mut mb.l, 5.0))?;
            }
            default(&mut mb.m, 64);
            let modes = require("model.modes", &mb.modes)?;
            if modes.is_empty() {
                return Err(invalid("model.modes", "at least one mode is required"));
            }
            for (k, md) in modes.iter().enumerate() {
                md.primitive
                    .parse::<Primitive>()
                    .map_err(|e| invalid(&format!("model.modes[{k}].primitive"), e.to_string()))?;
                if !md.weight.is_finite() {
                    return Err(invalid(&format!("model.modes[{k}].weight"), "must be finite"));
                }
            }
            default(&mut mb.potential, Vec::new());
        }
        other => {
            return Err(invalid("model.name", format!("`{other}` is not one of xy, curie_weiss, custom")));
        }
    }
    let m = mb.m.unwrap_or_default();
    if m < 3 {
        return Err(invalid("model.M", format!("{m} grid points; at least 3 are required")));
    }
    if name != "xy" {
        positive("model.rho", default(&mut mb.rho, 1.0))?;
        positive("model.rho_pi", default(&mut mb.rho_pi, 1.0))?;
    } else if mb.rho.is_some() || mb.rho_pi.is_some() {
        return Err(invalid("model.rho", "xy log-Sobolev constants are fixed by the model"));
    }
    if name != "custom" && (mb.modes.is_some() || mb.potential.is_some() || mb.topology.is_some()) {
        return Err(invalid("model.modes", "modes, potential and topology apply to custom models only"));
    }

    let eb = cfg.experiment.as_mut().ok_or_else(|| invalid("experiment", "missing block"))?;
    let ename = require("experiment.name", &eb.name)?;
    let experiment: Experiment = ename
        .parse()
        .map_err(|_| invalid("experiment.name", format!("unknown experiment `{ename}`; see `mflab list`")))?;
    let nb = &mut cfg.numeric;
    let tol = &mut nb.tolerances;
    for (f, v) in [
        ("identity", default(&mut tol.identity, 1e-10)),
        ("inequality", default(&mut tol.inequality, 1e-9)),
        ("limit_gap", default(&mut tol.limit_gap, 1e-12)),
        ("dissipation", default(&mut tol.dissipation, 0.05)),
        ("monotone", default(&mut tol.monotone, 1e-12)),
    ] {
        positive(&format!("numeric.tolerances.{f}"), v)?;
    }
    if default(&mut nb.seeds, vec![0]).is_empty() {
        return Err(invalid("numeric.seeds", "at least one seed is required"));
    }
    unit_interval("numeric.eps", default(&mut nb.eps, 0.5), true)?;
    unit_interval("numeric.delta", default(&mut nb.delta, 0.25), true)?;
    if let Some(l) = nb.lambda {
        positive("numeric.lambda", l)?;
    }
    let stride = default(&mut cfg.output.stride, 10);
    if stride == 0 {
        return Err(invalid("output.stride", "must be positive"));
    }

    let n_default = match experiment {
        Experiment::LimitGap => 5,
        Experiment::IndependentProjection => 4,
        _ => 3,
    };
    let n = default(&mut nb.n, n_default);
    if n < 2 {
        return Err(invalid("numeric.N", format!("{n} particles; at least 2 are required")));
    }
    let dynamic = matches!(
        experiment,
        Experiment::Relax | Experiment::Chaos | Experiment::IndependentProjection
    );
    if dynamic {
        positive("numeric.dt", require("numeric.dt", &nb.dt)?)?;
        let t = positive("numeric.T", require("numeric.T", &nb.t)?)?;
        if t / nb.dt.unwrap_or(1.0) > 1e8 {
            return Err(invalid("numeric.T", "more than 1e8 steps requested"));
        }
    }

    match experiment {
        Experiment::AuditIdentities => {
            positive("experiment.samples", default(&mut eb.samples, 100) as f64)?;
        }
        Experiment::AuditInequalities => {
            positive("experiment.samples", default(&mut eb.samples, 1000) as f64)?;
            let ths = default(
                &mut eb.theorems,
                ["coer", "entropy_coer", "contr1", "defective", "jw"].map(String::from).to_vec(),
            );
            for (k, t) in ths.iter().enumerate() {
                let known = ["coer", "entropy_coer", "contr1", "contr2", "defective", "jw", "w1"];
                if !known.contains(&t.as_str()) {
                    return Err(invalid(&format!("experiment.theorems[{k}]"), format!("unknown theorem `{t}`")));
                }
                if t == "contr2" && nb.lambda.is_none() {
                    return Err(invalid("numeric.lambda", "contr2 needs a positive lambda"));
                }
            }
            if name == "custom" {
                return Err(invalid("model.name", "inequality audits need the xy or curie_weiss budget"));
            }
        }
        Experiment::ConditionScan => {
            let c = default(&mut eb.condition, "coer".into());
            if !["coer", "fe", "pl"].contains(&c.as_str()) {
                return Err(invalid("experiment.condition", format!("`{c}` is not one of coer, fe, pl")));
            }
            positive("experiment.radius", default(&mut eb.radius, 10.0))?;
            positive("experiment.n_radial", default(&mut eb.n_radial, 40) as f64)?;
            positive("experiment.n_angular", default(&mut eb.n_angular, 8) as f64)?;
        }
        Experiment::PhaseDiagram => {
            if name != "curie_weiss" {
                return Err(invalid("model.name", "phase-diagram needs the curie_weiss model"));
            }
            let [j0, j1] = default(&mut eb.j_range, [0.5, 2.0]);
            if !(j0 > 0.0 && j1 > j0) {
                return Err(invalid("experiment.j_range", "need 0 < lo < hi"));
            }
            let [h0, h1] = default(&mut eb.h_range, [0.0, 1.5]);
            if !(h0.is_finite() && h1 > h0) {
                return Err(invalid("experiment.h_range", "need lo < hi"));
            }
            let [a, b] = default(&mut eb.resolution, [16, 16]);
            if a < 2 || b < 2 {
                return Err(invalid("experiment.resolution", "need at least 2 points per axis"));
            }
            positive("experiment.boundary_band", default(&mut eb.boundary_band, 0.02))?;
        }
        Experiment::Relax | Experiment::Chaos | Experiment::LimitGap | Experiment::IndependentProjection => {
            let dim = match name.as_str() {
                "xy" => 2,
                "curie_weiss" => 1,
                _ => mb_modes(&cfg.model),
            };
            let start = match experiment {
                Experiment::Chaos => 0.6,
                Experiment::IndependentProjection => 1.5,
                _ => 1.0,
            };
            let mut tilt = vec![0.0; dim];
            tilt[0] = start;
            let tilt = default(&mut eb.tilt, tilt);
            if tilt.len() != dim {
                return Err(invalid("experiment.tilt", format!("{} components for {dim} modes", tilt.len())));
            }
            if tilt.iter().any(|v| !v.is_finite()) {
                return Err(invalid("experiment.tilt", "must be finite"));
            }
            if experiment == Experiment::Chaos {
                positive("experiment.burn_in", default(&mut eb.burn_in, 1.0))?;
                if name == "custom" {
                    return Err(invalid("model.name", "chaos needs the xy or curie_weiss model"));
                }
            }
            if experiment == Experiment::Relax {
                let s = default(&mut eb.scheme, "explicit_upwind".into());
                s.parse::<mflab_core::dynamics::Scheme>()
                    .map_err(|e| invalid("experiment.scheme", e.to_string()))?;
                default(&mut eb.master, false);
                if eb.particles == Some(0) {
                    return Err(invalid("experiment.particles", "must be positive"));
                }
            }
            if experiment == Experiment::IndependentProjection {
                let s = default(&mut eb.scheme, "explicit_upwind".into());
                s.parse::<mflab_core::dynamics::Scheme>()
                    .map_err(|e| invalid("experiment.scheme", e.to_string()))?;
            }
        }
    }

    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => cfg
            .output
            .directory
            .clone()
            .ok_or_else(|| invalid("output.directory", "missing; pass --out or set it in the config"))?,
    };
    cfg.output.directory = Some(dir.clone());
    Ok(Resolved {
        experiment,
        config: cfg,
        out: dir,
    })
}

fn mb_modes(model: &Option<ModelBlock>) -> usize {
    model.as_ref().and_then(|m| m.modes.as_ref()).map_or(1, Vec::len)
}

/// Build a resolved model block.
pub fn build_model(mb: &ModelBlock) -> anyhow::Result<BuiltModel> {
    let m = mb.m.expect("resolved");
    Ok(match mb.name.as_deref() {
        Some("xy") => {
            let j = mb.j.expect("resolved");
            BuiltModel::Xy {
                model: models::xy(m, j)?,
                j,
            }
        }
        Some("curie_weiss") => {
            let cw = CurieWeiss::new(
                mb.theta.expect("resolved"),
                mb.sigma.expect("resolved"),
                mb.j.expect("resolved"),
                mb.h.expect("resolved"),
                m,
                mb.l.expect("resolved"),
            )?;
            let roots = cw.roots()?;
            let plus = cw.invariant(*roots.last().expect("self-consistency has a root"))?;
            let model = cw.model(plus, mb.rho.expect("resolved"), mb.rho_pi.expect("resolved"))?;
            BuiltModel::CurieWeiss { cw, model }
        }
        _ => {
            let grid = if mb.topology.as_deref() == Some("interval") {
                Grid::interval(m, mb.l.expect("resolved"))?
            } else {
                Grid::periodic(m)?
            };
            let terms: Vec<(Primitive, f64)> = mb
                .modes
                .as_ref()
                .expect("resolved")
                .iter()
                .map(|md| Ok((md.primitive.parse::<Primitive>()?, md.weight)))
                .collect::<mflab_core::Result<_>>()?;
            let w = ModeKernel::from_primitives(&grid, &terms);
            let coeffs = mb.potential.clone().unwrap_or_default();
            let periodic = grid.is_periodic();
            let v = grid.sample(|x| {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, c)| if periodic { c * (k as f64 * x).cos() } else { c * x.powi(k as i32) })
                    .sum::<f64>()
            });
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            let reference = GridMeasure::from_log_weights(&neg, &grid)?;
            let r_terms: Vec<(Primitive, f64)> = terms.iter().map(|&(p, w)| (p, -w * w)).collect();
            let r = ModeKernel::from_primitives(&grid, &r_terms);
            let budget = budget_audit(&w, &r, mb.rho.expect("resolved"), mb.rho_pi.expect("resolved"))?;
            BuiltModel::Custom {
                model: MeanFieldModel::new(reference, w)?.with_budget(budget),
            }
        }
    })
}
