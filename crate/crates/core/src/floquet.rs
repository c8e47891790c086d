//! Floquet multipliers of periodic orbits, the instability index, and
//! detection/localization of bifurcations along orbit branches.
//!
//! Two algorithms: the monodromy product (fast, accurate for dissipative
//! problems, useless when multipliers span many orders of magnitude) and a
//! product-free variant that computes the eigenvalues theta of the block
//! cyclic single-step map and groups gamma = theta^M without ever forming
//! the long product. Orbit constraints are ignored here, so problems with
//! continuous symmetries show near-1 neutral multipliers next to the exact
//! trivial one.

use crate::c64;
use crate::hopf::{newton_po, variational_blocks, HopfOrbit, HopfTangent, PoMode, PoSettings};
use crate::lapack::{eig_real, LuReal};
use crate::problem::{ConstraintCtx, PdeProblem};
use ndarray::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FloquetError {
    #[error("variational block {index} not factorizable")]
    BlockSingular { index: usize },
    #[error("lapack failure: {0}")]
    Lapack(#[from] crate::lapack::LapackError),
    #[error("cyclic pencil size {size} exceeds cap {cap}; use a coarser t-mesh or fewer unknowns")]
    SizeCap { size: usize, cap: usize },
    #[error("orbit correction failed during bisection: {0}")]
    Resolve(String),
}

/// Multiplier set of one orbit.
#[derive(Debug, Clone)]
pub struct FloquetResult {
    /// Multipliers sorted by modulus, largest first.
    pub multipliers: Vec<c64>,
    /// |gamma_1 - 1| for the computed multiplier nearest 1.
    pub err: f64,
    /// Count of |gamma| > 1 + fltol.
    pub ind: usize,
    pub fltol: f64,
    /// Set when the product overflowed or went non-finite.
    pub unreliable: bool,
}

/// Warning threshold on the trivial-multiplier error.
pub const FLTOL_WARN: f64 = 1e-6;

pub fn po_index(multipliers: &[c64], fltol: f64) -> usize {
    multipliers.iter().filter(|g| g.norm() > 1.0 + fltol).count()
}

fn trivial_error(multipliers: &[c64]) -> f64 {
    multipliers
        .iter()
        .map(|g| (g - c64::new(1.0, 0.0)).norm())
        .fold(f64::INFINITY, f64::min)
}

fn sort_by_modulus(mults: &mut [c64]) {
    mults.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap()
            .then(a.re.partial_cmp(&b.re).unwrap())
            .then(a.im.partial_cmp(&b.im).unwrap())
    });
}

/// Monodromy matrix at the first slice: the product of the single-step maps
/// M_j^{-1} H_j taken once around the period.
pub fn monodromy(prob: &dyn PdeProblem, orbit: &HopfOrbit) -> Result<Array2<f64>, FloquetError> {
    let (mj, hj) = variational_blocks(prob, orbit);
    let mu = mj.len();
    let n_u = orbit.n_u();
    let mut prod = Array2::<f64>::eye(n_u);
    // order: M_1^{-1} H_1 * M_{mu-1}^{-1} H_{mu-1} * ... * M_2^{-1} H_2 applied
    // to v_1, i.e. accumulate left-multiplications walking j = 1..mu then 0.
    for step in 1..=mu {
        let j = step % mu; // 1, 2, ..., mu-1, 0
        let lu = LuReal::new(&mj[j].view()).map_err(|_| FloquetError::BlockSingular { index: j })?;
        let rhs = hj[j].dot(&prod);
        prod = lu
            .solve_mat(&rhs.view())
            .map_err(|_| FloquetError::BlockSingular { index: j })?;
    }
    Ok(prod)
}

/// Monodromy-product multiplier computation: the `nfloq` largest-modulus
/// eigenvalues. Fails soft (flagged unreliable) when the product degenerates.
pub fn floq_fa1(
    prob: &dyn PdeProblem,
    orbit: &HopfOrbit,
    nfloq: usize,
    fltol: f64,
) -> Result<FloquetResult, FloquetError> {
    let m = monodromy(prob, orbit)?;
    let unreliable = m.iter().any(|v| !v.is_finite());
    if unreliable {
        return Ok(FloquetResult {
            multipliers: Vec::new(),
            err: f64::INFINITY,
            ind: 0,
            fltol,
            unreliable: true,
        });
    }
    let (vals, _) = eig_real(&m.view())?;
    let mut mults = vals;
    sort_by_modulus(&mut mults);
    mults.truncate(nfloq.min(mults.len()));
    let err = trivial_error(&mults);
    let ind = po_index(&mults, fltol);
    Ok(FloquetResult { multipliers: mults, err, ind, fltol, unreliable: false })
}

/// Monodromy eigenpairs (multipliers with slice-0 eigenvectors), used for
/// branch switching from orbits.
pub fn monodromy_eig(
    prob: &dyn PdeProblem,
    orbit: &HopfOrbit,
) -> Result<(Vec<c64>, Array2<c64>), FloquetError> {
    let m = monodromy(prob, orbit)?;
    Ok(eig_real(&m.view())?)
}

pub const FA2_SIZE_CAP: usize = 8000;

/// Product-free multipliers via the block cyclic single-step map: with
/// C v = (A_1 v_{M}, A_2 v_1, ..., A_M v_{M-1}), A_j = M_j^{-1} H_j, each
/// multiplier gamma contributes M eigenvalues theta of C with theta^M =
/// gamma. Eigenvalues are computed once for the big (dense, real) C, then
/// gamma values are clustered greedily into groups of M.
pub fn floq_fa2(
    prob: &dyn PdeProblem,
    orbit: &HopfOrbit,
    fltol: f64,
) -> Result<FloquetResult, FloquetError> {
    let (mj, hj) = variational_blocks(prob, orbit);
    let mu = mj.len();
    let n_u = orbit.n_u();
    let size = mu * n_u;
    if size > FA2_SIZE_CAP {
        return Err(FloquetError::SizeCap { size, cap: FA2_SIZE_CAP });
    }
    // single-step blocks (well-conditioned individually)
    let mut steps: Vec<Array2<f64>> = Vec::with_capacity(mu);
    for j in 0..mu {
        let lu = LuReal::new(&mj[j].view()).map_err(|_| FloquetError::BlockSingular { index: j })?;
        steps.push(
            lu.solve_mat(&hj[j].view())
                .map_err(|_| FloquetError::BlockSingular { index: j })?,
        );
    }
    let mut c = Array2::<f64>::zeros((size, size));
    for j in 0..mu {
        let jprev = if j == 0 { mu - 1 } else { j - 1 };
        let mut blk = c.slice_mut(s![j * n_u..(j + 1) * n_u, jprev * n_u..(jprev + 1) * n_u]);
        blk.assign(&steps[j]);
    }
    let (thetas, _) = eig_real(&c.view())?;

    // gamma = theta^M, then cluster the M-fold copies
    let gammas: Vec<c64> = thetas.iter().map(|t| t.powu(mu as u32)).collect();
    let mut order: Vec<usize> = (0..gammas.len()).collect();
    order.sort_by(|&a, &b| {
        gammas[b]
            .norm()
            .partial_cmp(&gammas[a].norm())
            .unwrap()
            .then(gammas[a].re.partial_cmp(&gammas[b].re).unwrap())
            .then(gammas[a].im.partial_cmp(&gammas[b].im).unwrap())
    });
    let mut assigned = vec![false; gammas.len()];
    let mut mults: Vec<c64> = Vec::with_capacity(n_u);
    for &seed_idx in &order {
        if assigned[seed_idx] {
            continue;
        }
        let seed = gammas[seed_idx];
        // collect the M nearest unassigned values
        let mut cand: Vec<(f64, usize)> = gammas
            .iter()
            .enumerate()
            .filter(|(i, _)| !assigned[*i])
            .map(|(i, g)| ((g - seed).norm(), i))
            .collect();
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let take = mu.min(cand.len());
        let mut mean = c64::new(0.0, 0.0);
        for &(_, i) in cand.iter().take(take) {
            assigned[i] = true;
            mean += gammas[i];
        }
        mults.push(mean / take as f64);
    }
    sort_by_modulus(&mut mults);
    let err = trivial_error(&mults);
    let ind = po_index(&mults, fltol);
    Ok(FloquetResult { multipliers: mults, err, ind, fltol, unreliable: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoBifKind {
    /// Multiplier through +1 (orbit fold / pitchfork / transcritical).
    PlusOne,
    /// Multiplier through -1 (period doubling).
    PeriodDoubling,
    /// Complex pair through the unit circle.
    Torus,
}

/// A localized index change along an orbit branch.
#[derive(Debug, Clone)]
pub struct PoBifEvent {
    pub kind: PoBifKind,
    pub orbit: HopfOrbit,
    pub gamma: c64,
    /// Slice-0 eigenvector of the critical multiplier (real part).
    pub v1: Array1<f64>,
    pub ind_before: usize,
    pub ind_after: usize,
    /// Localization ran out of bisections, or several multipliers crossed.
    pub ambiguous: bool,
}

/// Angle criterion separating the trivial multiplier (eigenvector parallel to
/// the discrete time derivative at slice 0) from a genuine +1 crossing.
const TRIVIAL_ANGLE_DEG: f64 = 10.0;

fn unit_angle_deg(v: &ArrayView1<c64>, w: &ArrayView1<f64>) -> f64 {
    // angle between the real span of v and w
    let mut dot_r = 0.0;
    let mut dot_i = 0.0;
    let mut nv = 0.0;
    let mut nw = 0.0;
    for (a, b) in v.iter().zip(w.iter()) {
        dot_r += a.re * b;
        dot_i += a.im * b;
        nv += a.norm_sqr();
        nw += b * b;
    }
    let cosang = (dot_r * dot_r + dot_i * dot_i).sqrt() / (nv.sqrt() * nw.sqrt()).max(1e-300);
    cosang.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Identify the critical (non-trivial) multiplier of an orbit: the one whose
/// modulus is nearest the unit circle after excluding the trivial direction.
pub fn critical_multiplier(
    prob: &dyn PdeProblem,
    orbit: &HopfOrbit,
) -> Result<(c64, Array1<f64>), FloquetError> {
    let (vals, vecs) = monodromy_eig(prob, orbit)?;
    // discrete du/dt at slice 0
    let mu = orbit.m_unique();
    let span = orbit.t[1] + (1.0 - orbit.t[mu - 1]);
    let udot = (&orbit.y.column(1) - &orbit.y.column(mu - 1)) / span;
    let mut best: Option<(f64, usize)> = None;
    for (i, g) in vals.iter().enumerate() {
        let angle = unit_angle_deg(&vecs.column(i), &udot.view());
        let near_one = (g - c64::new(1.0, 0.0)).norm() < 0.3;
        if near_one && angle < TRIVIAL_ANGLE_DEG {
            continue; // trivial direction
        }
        let dist = (g.norm() - 1.0).abs();
        if best.map(|(d, _)| dist < d).unwrap_or(true) {
            best = Some((dist, i));
        }
    }
    let (_, idx) = best.ok_or(FloquetError::Resolve("no non-trivial multiplier".into()))?;
    let v = vecs.column(idx);
    let re_norm: f64 = v.iter().map(|z| z.re * z.re).sum::<f64>().sqrt();
    let v1 = if re_norm > 1e-12 {
        v.mapv(|z| z.re / re_norm)
    } else {
        let im_norm: f64 = v.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
        v.mapv(|z| z.im / im_norm)
    };
    Ok((vals[idx], v1))
}

/// Bisection localization of an index change between two consecutive orbit
/// records. Re-solves the orbit at secant midpoints; classification follows
/// where the critical multiplier sits when the change is bracketed.
#[allow(clippy::too_many_arguments)]
pub fn hobifdetec(
    prob: &dyn PdeProblem,
    orbit_a: &HopfOrbit,
    fl_a: &FloquetResult,
    orbit_b: &HopfOrbit,
    fl_b: &FloquetResult,
    cs: &ConstraintCtx,
    settings: &PoSettings,
) -> Result<Vec<PoBifEvent>, FloquetError> {
    if fl_a.ind == fl_b.ind {
        return Ok(Vec::new());
    }
    let ambiguous_jump = fl_a.ind.abs_diff(fl_b.ind) >= 2;
    let mut secant: HopfTangent = orbit_b.diff(orbit_a);
    let len = orbit_a.ip_norm(&secant);
    secant.du /= len;
    secant.dt_period /= len;
    secant.dlam /= len;
    for w in &mut secant.dw {
        *w /= len;
    }

    let mut lo = 0.0f64;
    let mut hi = len;
    let mut best: Option<(HopfOrbit, FloquetResult)> = None;
    for _ in 0..settings.bisec {
        let mid = 0.5 * (lo + hi);
        let mut trial = orbit_a.clone();
        trial.step_by(&secant, mid);
        match newton_po(
            prob,
            &mut trial,
            cs,
            settings,
            PoMode::Arclength,
            Some(orbit_a),
            Some(&secant),
            mid,
            None,
        ) {
            Ok(_) => {}
            Err(_) => {
                hi = mid;
                continue;
            }
        }
        let fl = match settings.flcheck {
            2 => floq_fa2(prob, &trial, settings.fltol),
            _ => floq_fa1(prob, &trial, settings.nfloq, settings.fltol),
        };
        let fl = match fl {
            Ok(f) => f,
            Err(_) => {
                hi = mid;
                continue;
            }
        };
        if fl.ind == fl_a.ind {
            lo = mid;
        } else {
            hi = mid;
            best = Some((trial, fl));
        }
    }
    let (orbit_loc, fl_loc) = best.unwrap_or_else(|| (orbit_b.clone(), fl_b.clone()));
    let (gamma, v1) = critical_multiplier(prob, &orbit_loc)?;
    let kind = if (gamma - c64::new(1.0, 0.0)).norm() < 0.2 {
        PoBifKind::PlusOne
    } else if (gamma + c64::new(1.0, 0.0)).norm() < 0.2 {
        PoBifKind::PeriodDoubling
    } else {
        PoBifKind::Torus
    };
    Ok(vec![PoBifEvent {
        kind,
        orbit: orbit_loc,
        gamma,
        v1,
        ind_before: fl_a.ind,
        ind_after: fl_loc.ind,
        ambiguous: ambiguous_jump,
    }])
}
