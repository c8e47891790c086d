//! Branch data as diff-friendly CSV. Column order is fixed:
//! step, ptype, ind, lambda, p0..p{np-1}, T, min_u1, max_u1, norm
//! (T = 0 on steady branches; ind is the unstable eigenvalue count there and
//! the multiplier index on orbit branches).

use crate::hopf::HopfBranch;
use crate::problem::PdeProblem;
use crate::steady::Branch;
use std::fmt::Write as _;

pub fn header(n_params: usize) -> String {
    let mut s = String::from("step,ptype,ind,lambda");
    for k in 0..n_params {
        let _ = write!(s, ",p{k}");
    }
    s.push_str(",T,min_u1,max_u1,norm\n");
    s
}

fn row(
    step: usize,
    ptype: &str,
    ind: isize,
    lambda: f64,
    params: &[f64],
    period: f64,
    min_u1: f64,
    max_u1: f64,
    norm: f64,
) -> String {
    let mut s = format!("{step},{ptype},{ind},{lambda:.12e}");
    for &p in params {
        let _ = write!(s, ",{p:.12e}");
    }
    let _ = writeln!(s, ",{period:.12e},{min_u1:.12e},{max_u1:.12e},{norm:.12e}");
    s
}

/// Spatial L2 norm scaled by 1/sqrt(|Omega|) (steady analogue of the orbit
/// plotting norm).
pub fn steady_norm(prob: &dyn PdeProblem, u: &ndarray::Array1<f64>) -> f64 {
    let nd = prob.mesh().n_dof();
    let mass = &prob.ops().mass;
    let mut acc = 0.0;
    for c in 0..prob.n_comp() {
        let uc = u.slice(ndarray::s![c * nd..(c + 1) * nd]);
        acc += uc.dot(&mass.dot(&uc));
    }
    (acc / prob.mesh().volume()).max(0.0).sqrt()
}

pub fn steady_branch_csv(prob: &dyn PdeProblem, branch: &Branch) -> String {
    let mut out = String::new();
    if let Some(first) = branch.points.first() {
        out.push_str(&header(first.params.values.len()));
    }
    let nd = prob.mesh().n_dof();
    for pt in &branch.points {
        let u1 = pt.u.slice(ndarray::s![..nd]);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in u1.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let ind = pt.unstable.first().map(|&c| c as isize).unwrap_or(-1);
        out.push_str(&row(
            pt.step,
            pt.ptype.tag(),
            ind,
            pt.lambda(),
            &pt.params.values,
            0.0,
            lo,
            hi,
            steady_norm(prob, &pt.u),
        ));
    }
    out
}

pub fn orbit_branch_csv(prob: &dyn PdeProblem, branch: &HopfBranch) -> String {
    let mut out = String::new();
    if let Some(first) = branch.records.first() {
        out.push_str(&header(first.orbit.params.values.len()));
    }
    for rec in &branch.records {
        let o = &rec.orbit;
        let (lo, hi) = o.comp_min_max(prob, 0);
        let ind = rec.ind().map(|i| i as isize).unwrap_or(-1);
        out.push_str(&row(
            rec.step,
            rec.ptype.tag(),
            ind,
            o.lambda(),
            &o.params.values,
            o.period,
            lo,
            hi,
            o.star_norm(prob),
        ));
    }
    out
}

/// Per-point multiplier CSV (written alongside orbit branches).
pub fn multiplier_csv(branch: &HopfBranch) -> String {
    let mut out = String::from("step,re,im,abs\n");
    for rec in &branch.records {
        if let Some(fl) = &rec.multipliers {
            for g in &fl.multipliers {
                let _ = writeln!(out, "{},{:.12e},{:.12e},{:.12e}", rec.step, g.re, g.im, g.norm());
            }
        }
    }
    out
}
