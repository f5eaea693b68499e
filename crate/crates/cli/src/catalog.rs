use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    AuditIdentities,
    AuditInequalities,
    ConditionScan,
    PhaseDiagram,
    Relax,
    Chaos,
    IndependentProjection,
    LimitGap,
}

pub struct Entry {
    pub experiment: Experiment,
    pub required: &'static str,
    pub optional: &'static str,
    pub exercises: &'static str,
}

pub const CATALOG: [Entry; 8] = [
    Entry {
        experiment: Experiment::AuditIdentities,
        required: "model",
        optional: "numeric.N, numeric.seeds, experiment.samples, numeric.tolerances.{identity,limit_gap}",
        exercises: "exact N-particle identities: entropy chain rule, conditional-approximation martingale equality, \
                    reduced-kernel bilinear identity, tensorized free-energy gap",
    },
    Entry {
        experiment: Experiment::AuditInequalities,
        required: "model (xy or curie_weiss)",
        optional: "numeric.{N,eps,delta,lambda,seeds}, experiment.{samples,theorems}, numeric.tolerances.inequality",
        exercises: "N-particle coercivity, entropy coercivity, contractivity, defective log-Sobolev and \
                    empirical-energy bounds on random exchangeable laws",
    },
    Entry {
        experiment: Experiment::ConditionScan,
        required: "model",
        optional: "numeric.delta, experiment.{condition,radius,n_radial,n_angular}",
        exercises: "coercivity, free-energy and Polyak-Lojasiewicz conditions over tilted measures; optimal delta",
    },
    Entry {
        experiment: Experiment::PhaseDiagram,
        required: "model (curie_weiss)",
        optional: "experiment.{j_range,h_range,resolution,boundary_band}",
        exercises: "Curie-Weiss self-consistency roots, critical coupling and critical field, three-root regime",
    },
    Entry {
        experiment: Experiment::Relax,
        required: "model, numeric.dt, numeric.T",
        optional: "numeric.{N,seeds}, experiment.{tilt,scheme,particles,master}, output.stride",
        exercises: "mean-field Fokker-Planck relaxation and free-energy dissipation; particle ensemble; \
                    N-particle master equation relaxation to the Gibbs measure",
    },
    Entry {
        experiment: Experiment::Chaos,
        required: "model (xy or curie_weiss), numeric.dt, numeric.T",
        optional: "numeric.{N,eps}, experiment.{tilt,burn_in}, output.stride",
        exercises: "generation of chaos: modulated free energy along the exact N-particle flow against the \
                    Gronwall-type bound",
    },
    Entry {
        experiment: Experiment::IndependentProjection,
        required: "model, numeric.dt, numeric.T",
        optional: "numeric.{N,delta,seeds}, experiment.{tilt,scheme}, output.stride",
        exercises: "independent projection: product-state flow, its dissipation identity, difference formula \
                    and coercivity/contractivity margins",
    },
    Entry {
        experiment: Experiment::LimitGap,
        required: "model",
        optional: "numeric.N, experiment.tilt, numeric.tolerances.limit_gap",
        exercises: "recovery of the mean-field free energy and Fisher information from tensorized N-particle \
                    quantities",
    },
];

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::AuditIdentities => "audit-identities",
            Experiment::AuditInequalities => "audit-inequalities",
            Experiment::ConditionScan => "condition-scan",
            Experiment::PhaseDiagram => "phase-diagram",
            Experiment::Relax => "relax",
            Experiment::Chaos => "chaos",
            Experiment::IndependentProjection => "independent-projection",
            Experiment::LimitGap => "limit-gap",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        CATALOG
            .iter()
            .map(|e| e.experiment)
            .find(|e| e.name() == s)
            .ok_or(())
    }
}

pub fn print_catalog(out: &mut impl Write) -> io::Result<()> {
    for e in &CATALOG {
        writeln!(out, "{}", e.experiment)?;
        writeln!(out, "  required:  {}", e.required)?;
        writeln!(out, "  optional:  {}", e.optional)?;
        writeln!(out, "  exercises: {}", e.exercises.split_whitespace().collect::<Vec<_>>().join(" "))?;
    }
    Ok(())
}
