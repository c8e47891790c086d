//! The bundled model problems and their analytic oracles.

pub mod brusselator;
pub mod cgl;
pub mod cglext;
pub mod heat;
pub mod ks;
pub mod masscons;
pub mod pollution;

pub use brusselator::BrusselatorProblem;
pub use cgl::{CglBc, CglProblem};
pub use cglext::CglExtProblem;
pub use heat::LinearHeatProblem;
pub use ks::KsProblem;
pub use masscons::MassConsProblem;
pub use pollution::PollutionProblem;

use crate::problem::PdeProblem;

/// Demo registry for the CLI: construct a problem with default settings by
/// name, optionally overriding the mesh resolution.
pub fn by_name(name: &str, n_override: Option<usize>) -> Option<Box<dyn PdeProblem>> {
    match name {
        "cgl" => Some(Box::new(CglProblem::neumann(n_override.unwrap_or(30)))),
        "cgl-dirichlet" => Some(Box::new(CglProblem::new(CglBc::Dirichlet, n_override.unwrap_or(30)))),
        "cglpbc" => Some(Box::new(CglProblem::periodic(n_override.unwrap_or(32)))),
        "cglpbc-tw" => Some(Box::new(CglProblem::periodic_tw(n_override.unwrap_or(32)))),
        "brussel" => Some(Box::new(BrusselatorProblem::new(n_override.unwrap_or(60)))),
        "mass-cons" => Some(Box::new(MassConsProblem::new(n_override.unwrap_or(50)))),
        "ks" => Some(Box::new(KsProblem::new(n_override.unwrap_or(100)))),
        "pollution" => Some(Box::new(PollutionProblem::new(n_override.unwrap_or(40)))),
        "cglext" => Some(Box::new(CglExtProblem::new(n_override.unwrap_or(30)))),
        "heat" => Some(Box::new(LinearHeatProblem::new(n_override.unwrap_or(30)))),
        _ => None,
    }
}

pub fn demo_names() -> &'static [&'static str] {
    &["cgl", "cgl-dirichlet", "cglpbc", "cglpbc-tw", "brussel", "mass-cons", "ks", "pollution", "cglext", "heat"]
}
