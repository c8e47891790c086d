//! Shared harness for the acceptance suite: canned continuation runs of the
//! demo problems at the resolutions the criteria call for.

#![allow(dead_code)]

use ndarray::prelude::*;
use pdecont::branching::{hoswibra, HoswibraOpts};
use pdecont::c64;
use pdecont::demos::CglProblem;
use pdecont::hopf::{cont_po, newton_po, HopfBranch, HopfOrbit, PoMode, PoSettings};
use pdecont::problem::{ConstraintCtx, PdeProblem};
use pdecont::steady::{cont_steady, Branch, BranchPoint, ContSettings, PointType, SteadyState};

/// Continue the trivial cGL branch over r in [-0.05, ~1.1] and return the
/// detected Hopf points.
pub fn cgl_trivial_branch(n: usize, n_eig: usize, mu2: f64) -> (CglProblem, Branch) {
    let p = CglProblem::neumann(n);
    let mut pv = p.default_params();
    pv.set_primary(-0.05);
    let state = SteadyState { u: Array1::zeros(p.n_u()), params: pv };
    let settings = ContSettings {
        ds: 0.05,
        dsmax: 0.12,
        n_eig,
        mu2,
        bisec_max: 30,
        ..Default::default()
    };
    let mut cs = ConstraintCtx::default();
    let branch = cont_steady(&p, state, &settings, &mut cs, 25, 1.0).expect("cGL steady branch");
    (p, branch)
}

pub fn hopf_points(branch: &Branch) -> Vec<BranchPoint> {
    branch.points.iter().filter(|pt| pt.ptype == PointType::Hopf).cloned().collect()
}

/// Switch at a cGL Hopf point and continue the orbit branch. `dlam = None`
/// estimates the parameter step from the normal form; vertical predictors
/// (Some(0.0)) are the robust choice at the patterned Hopf points.
pub fn cgl_orbit_branch(
    p: &CglProblem,
    hp: &BranchPoint,
    tl: usize,
    steps: usize,
    flcheck: u8,
    ds: f64,
    dlam: Option<f64>,
    tol: f64,
) -> HopfBranch {
    let opts = HoswibraOpts { tl, dlam, ..Default::default() };
    let orbit = hoswibra(p, hp, &opts).expect("hoswibra");
    let settings = PoSettings {
        ds,
        dsmax: 0.3,
        tol,
        flcheck,
        nfloq: 20,
        detect: false,
        lam_step_max: 0.45,
        ..Default::default()
    };
    let mut cs = ConstraintCtx::default();
    cont_po(p, orbit, &settings, &mut cs, steps).expect("cont_po")
}

/// Instability index of the orbit at exactly lambda = target (nearest record
/// corrected at fixed parameter, then multipliers).
pub fn ind_at_lambda(
    prob: &dyn PdeProblem,
    branch: &HopfBranch,
    target: f64,
    from_step: usize,
) -> Option<usize> {
    let orbit = orbit_at_lambda_from(prob, branch, target, from_step)?;
    let fl = pdecont::floquet::floq_fa1(prob, &orbit, 20, 1e-4).ok()?;
    Some(fl.ind)
}

/// Converged orbit at exactly the requested primary-parameter value, from the
/// branch record nearest to it. `from_step` restricts the seeding records to
/// one monotone branch segment (e.g. past a fold).
pub fn orbit_at_lambda_from(
    prob: &dyn PdeProblem,
    branch: &HopfBranch,
    target: f64,
    from_step: usize,
) -> Option<HopfOrbit> {
    let rec = branch
        .records
        .iter()
        .filter(|r| r.step >= from_step.max(1))
        .min_by(|a, b| {
            (a.orbit.lambda() - target)
                .abs()
                .partial_cmp(&(b.orbit.lambda() - target).abs())
                .unwrap()
        })?;
    let mut orbit = rec.orbit.clone();
    orbit.params.set_primary(target);
    let settings = PoSettings::default();
    let cs = ConstraintCtx::default();
    newton_po(prob, &mut orbit, &cs, &settings, PoMode::FixedLambda, None, None, 0.0, None).ok()?;
    Some(orbit)
}

pub fn orbit_at_lambda(
    prob: &dyn PdeProblem,
    branch: &HopfBranch,
    target: f64,
) -> Option<HopfOrbit> {
    orbit_at_lambda_from(prob, branch, target, 1)
}

/// Analytic period of the spatially homogeneous cGL wave train at r.
pub fn cgl_analytic_period(p: &CglProblem, r: f64) -> f64 {
    let mut pv = p.default_params();
    pv.set_primary(r);
    let (_, omega) = CglProblem::wavetrain(&pv, 0.0, true).expect("wavetrain");
    2.0 * std::f64::consts::PI / omega.abs()
}

/// Shift list with an extra imaginary target.
pub fn shifts(extra: &[f64]) -> Vec<c64> {
    std::iter::once(c64::new(0.0, 0.0))
        .chain(extra.iter().map(|&w| c64::new(0.0, w)))
        .collect()
}

pub fn pass(criterion: usize, details: &str) {
    println!("ACCEPTANCE {criterion}: PASS - {details}");
}

use pdecont::demos::BrusselatorProblem;

/// Continue the homogeneous Brusselator branch in b, monitoring shifts at 0
/// and near the Hopf frequencies.
pub fn brusselator_steady(n: usize, steps: usize) -> (BrusselatorProblem, Branch) {
    let p = BrusselatorProblem::new(n);
    let pv = p.default_params();
    let state = SteadyState { u: p.steady_state(&pv), params: pv };
    let settings = ContSettings {
        ds: 0.05,
        dsmax: 0.15,
        n_eig: 8,
        shifts: shifts(&[1.0]),
        ..Default::default()
    };
    let mut cs = ConstraintCtx::default();
    let branch = cont_steady(&p, state, &settings, &mut cs, steps, 1.0).expect("brusselator branch");
    (p, branch)
}

pub fn brusselator_orbit_branch(
    p: &BrusselatorProblem,
    hp: &BranchPoint,
    tl: usize,
    steps: usize,
    flcheck: u8,
    ds: f64,
    detect_off: bool,
    tol: f64,
) -> HopfBranch {
    let opts = HoswibraOpts { tl, dlam: Some(0.0), ..Default::default() };
    let orbit = hoswibra(p, hp, &opts).expect("hoswibra brusselator");
    let settings = PoSettings {
        ds,
        dsmax: 0.2,
        tol,
        flcheck,
        nfloq: 12,
        first_tol: Some(1e-4),
        detect: !detect_off,
        ..Default::default()
    };
    let mut cs = ConstraintCtx::default();
    cont_po(p, orbit, &settings, &mut cs, steps).expect("brusselator cont_po")
}
