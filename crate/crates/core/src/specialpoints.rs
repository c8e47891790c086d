//! Two-parameter continuation of Hopf points and branch points via extended
//! systems: a detected point is polished by Newton on the augmented system
//! (state, critical eigendata, frequency/eigenshift, parameter), then
//! continued in a second parameter with a parameters-only arclength chart.
//! Entry transforms build the augmented state from stored eigendata; exit
//! transforms hand back a plain steady state for ordinary continuation.

use crate::c64;
use crate::lapack::LuReal;
use crate::linsys::{eigs_near, lu_solve, EigRequest};
use crate::problem::{self, jacobian, spjac, ParamVec, PdeProblem};
use crate::steady::BranchPoint;
use ndarray::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpecialPointError {
    #[error("record carries no critical eigendata")]
    MissingEigenpair,
    #[error("normalization vector is orthogonal to the eigenvector")]
    DegenerateNormalization,
    #[error("Newton on the extended system stalled (residual {residual:.3e})")]
    NoConvergence { residual: f64 },
    #[error("linear solve failed: {0}")]
    Linear(#[from] crate::linsys::LinsysError),
    #[error("eigensolver failed at validation: {0}")]
    Validation(String),
}

/// Augmented unknown of Hopf-point continuation:
/// (u, phi_r, phi_i, omega, lambda) with the frozen normalization vector c.
#[derive(Debug, Clone)]
pub struct HpState {
    pub u: Array1<f64>,
    pub phi_r: Array1<f64>,
    pub phi_i: Array1<f64>,
    pub omega: f64,
    pub params: ParamVec,
    pub c: Array1<f64>,
}

/// Augmented unknown of branch-point continuation:
/// (u, psi, lambda, mu) with the adjoint kernel vector psi.
#[derive(Debug, Clone)]
pub struct BpState {
    pub u: Array1<f64>,
    pub psi: Array1<f64>,
    pub mu: f64,
    pub params: ParamVec,
}

/// Build the augmented Hopf-point state from a detected record: the stored
/// eigenpair is rotated so that c^T phi_r = 1, c^T phi_i = 0 with c frozen to
/// the (normalized) real part at entry.
pub fn hpcontini(hp: &BranchPoint) -> Result<HpState, SpecialPointError> {
    let crit = hp.critical.as_ref().ok_or(SpecialPointError::MissingEigenpair)?;
    // pencil convention -G_u v = mu M v; the extended system wants
    // G_u phi = +i omega M phi, i.e. phi = conj(v) for Im(mu) > 0.
    let phi: Array1<c64> = if crit.value.im > 0.0 {
        crit.vector.mapv(|z| z.conj())
    } else {
        crit.vector.clone()
    };
    let omega = crit.value.im.abs();
    let mut c = phi.mapv(|z| z.re);
    let cn = c.dot(&c).sqrt();
    if cn < 1e-14 {
        return Err(SpecialPointError::DegenerateNormalization);
    }
    c /= cn;
    // rotate/scale phi so that c^T phi = 1 (complex division)
    let alpha: c64 = phi.iter().zip(c.iter()).map(|(z, &ci)| z * ci).sum();
    if alpha.norm() < 1e-14 {
        return Err(SpecialPointError::DegenerateNormalization);
    }
    let phi = phi.mapv(|z| z / alpha);
    Ok(HpState {
        u: hp.u.clone(),
        phi_r: phi.mapv(|z| z.re),
        phi_i: phi.mapv(|z| z.im),
        omega,
        params: hp.params.clone(),
        c,
    })
}

/// Return to plain continuation from the u-part of the augmented state.
pub fn hpcontexit(state: &HpState) -> crate::steady::SteadyState {
    crate::steady::SteadyState { u: state.u.clone(), params: state.params.clone() }
}

pub fn bpcontexit(state: &BpState) -> crate::steady::SteadyState {
    crate::steady::SteadyState { u: state.u.clone(), params: state.params.clone() }
}

fn hp_residual(prob: &dyn PdeProblem, st: &HpState) -> Array1<f64> {
    let n = prob.n_u();
    let g = prob.rhs(&st.u.view(), &st.params, None);
    let gu = jacobian(prob, &st.u.view(), &st.params, None);
    let m = prob.mass_sys();
    let r2 = &gu.dot(&st.phi_r) + &(m.dot(&st.phi_i) * st.omega);
    let r3 = &gu.dot(&st.phi_i) - &(m.dot(&st.phi_r) * st.omega);
    let mut out = Array1::<f64>::zeros(3 * n + 2);
    out.slice_mut(s![..n]).assign(&g);
    out.slice_mut(s![n..2 * n]).assign(&r2);
    out.slice_mut(s![2 * n..3 * n]).assign(&r3);
    out[3 * n] = st.c.dot(&st.phi_r) - 1.0;
    out[3 * n + 1] = st.c.dot(&st.phi_i);
    out
}

/// Assembled Jacobian of the extended Hopf system with columns
/// (u, phi_r, phi_i, omega) plus one column per extra parameter index.
fn hp_jacobian(prob: &dyn PdeProblem, st: &HpState, extra_params: &[usize]) -> Array2<f64> {
    let n = prob.n_u();
    let rows = 3 * n + 2;
    let cols = 3 * n + 1 + extra_params.len();
    let gu = jacobian(prob, &st.u.view(), &st.params, None);
    let m = prob.mass_sys();
    let dr = spjac(prob, &st.u.view(), &st.params, &st.phi_r.view(), false);
    let di = spjac(prob, &st.u.view(), &st.params, &st.phi_i.view(), false);
    let mut j = Array2::<f64>::zeros((rows, cols));
    j.slice_mut(s![..n, ..n]).assign(&gu);
    j.slice_mut(s![n..2 * n, ..n]).assign(&dr);
    j.slice_mut(s![n..2 * n, n..2 * n]).assign(&gu);
    j.slice_mut(s![n..2 * n, 2 * n..3 * n]).assign(&m.mapv(|v| st.omega * v));
    j.slice_mut(s![2 * n..3 * n, ..n]).assign(&di);
    j.slice_mut(s![2 * n..3 * n, n..2 * n]).assign(&m.mapv(|v| -st.omega * v));
    j.slice_mut(s![2 * n..3 * n, 2 * n..3 * n]).assign(&gu);
    // omega column
    let momega = m.dot(&st.phi_i);
    for i in 0..n {
        j[[n + i, 3 * n]] = momega[i];
    }
    let momega2 = m.dot(&st.phi_r);
    for i in 0..n {
        j[[2 * n + i, 3 * n]] = -momega2[i];
    }
    // normalization rows
    for i in 0..n {
        j[[3 * n, n + i]] = st.c[i];
        j[[3 * n + 1, 2 * n + i]] = st.c[i];
    }
    // parameter columns by finite differences of (G, G_u phi_r, G_u phi_i)
    for (k, &pi) in extra_params.iter().enumerate() {
        let col = 3 * n + 1 + k;
        let h = problem::fd_step(st.params.values[pi]);
        let mut pp = st.params.clone();
        pp.values[pi] += h;
        let gup = jacobian(prob, &st.u.view(), &pp, None);
        let gp = prob.rhs(&st.u.view(), &pp, None);
        pp.values[pi] = st.params.values[pi] - h;
        let gum = jacobian(prob, &st.u.view(), &pp, None);
        let gm = prob.rhs(&st.u.view(), &pp, None);
        let dg = (&gp - &gm) / (2.0 * h);
        let dgu = (&gup - &gum) / (2.0 * h);
        let d2r = dgu.dot(&st.phi_r);
        let d2i = dgu.dot(&st.phi_i);
        for i in 0..n {
            j[[i, col]] = dg[i];
            j[[n + i, col]] = d2r[i];
            j[[2 * n + i, col]] = d2i[i];
        }
    }
    j
}

pub const SP_TOL: f64 = 1e-8;
const SP_MAX_NEWTON: usize = 15;

/// Newton localization of a (simple) Hopf point with (omega, lambda) free.
pub fn hploc(prob: &dyn PdeProblem, state: &mut HpState) -> Result<(), SpecialPointError> {
    let n = prob.n_u();
    let li = state.params.primary;
    for _ in 0..SP_MAX_NEWTON {
        let r = hp_residual(prob, state);
        let res = r.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if res <= SP_TOL {
            return Ok(());
        }
        if !res.is_finite() {
            break;
        }
        let j = hp_jacobian(prob, state, &[li]);
        let rhs = r.mapv(|v| -v);
        let dz = lu_solve(&j.view(), &rhs.view())?;
        for i in 0..n {
            state.u[i] += dz[i];
            state.phi_r[i] += dz[n + i];
            state.phi_i[i] += dz[2 * n + i];
        }
        state.omega += dz[3 * n];
        state.params.values[li] += dz[3 * n + 1];
    }
    let r = hp_residual(prob, state);
    Err(SpecialPointError::NoConvergence {
        residual: r.iter().fold(0.0f64, |m, &v| m.max(v.abs())),
    })
}

/// One sample along a two-parameter point curve.
#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub lambda: f64,
    pub w: f64,
    /// omega for Hopf curves, the eigen-shift mu for branch-point curves.
    pub aux: f64,
    pub u: Array1<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct PointCurve {
    pub points: Vec<CurvePoint>,
    pub stall_reason: Option<String>,
}

/// Continue the Hopf-point system in (lambda, w): arclength over the two
/// parameters with equal weights.
pub fn hpcont(
    prob: &dyn PdeProblem,
    start: &HpState,
    wpar: usize,
    nsteps: usize,
    ds: f64,
) -> Result<PointCurve, SpecialPointError> {
    let mut state = start.clone();
    hploc(prob, &mut state)?;
    let n = prob.n_u();
    let li = state.params.primary;
    let mut curve = PointCurve::default();
    curve.points.push(CurvePoint {
        lambda: state.params.primary_value(),
        w: state.params.values[wpar],
        aux: state.omega,
        u: state.u.clone(),
    });

    // parameter-space tangent (t_lam, t_w), normalized with weights 1/2
    let mut tan = (0.0f64, 0.0f64);
    let mut have_tan = false;
    let mut step_len = ds;
    let mut step = 0;
    while step < nsteps {
        // tangent: solve J_ext z = 0 with normalization row over (lam, w)
        let jext = hp_jacobian(prob, &state, &[li, wpar]);
        let rows = 3 * n + 2;
        let mut jsq = Array2::<f64>::zeros((rows + 1, rows + 1));
        jsq.slice_mut(s![..rows, ..]).assign(&jext);
        if have_tan {
            jsq[[rows, rows - 1]] = 0.5 * tan.0;
            jsq[[rows, rows]] = 0.5 * tan.1;
        } else {
            jsq[[rows, rows]] = 0.5;
        }
        let mut rhs = Array1::<f64>::zeros(rows + 1);
        rhs[rows] = 1.0;
        let z = lu_solve(&jsq.view(), &rhs.view())?;
        let (tl, tw) = (z[rows - 1], z[rows]);
        let nrm = (0.5 * (tl * tl + tw * tw)).sqrt();
        let mut t = (tl / nrm, tw / nrm);
        if have_tan && 0.5 * (t.0 * tan.0 + t.1 * tan.1) < 0.0 {
            t = (-t.0, -t.1);
        }
        tan = t;
        have_tan = true;
        // scaled full-state predictor direction
        let du = z.slice(s![..3 * n + 1]).mapv(|v| v / nrm);

        let mut trial = state.clone();
        for i in 0..n {
            trial.u[i] += step_len * du[i];
            trial.phi_r[i] += step_len * du[n + i];
            trial.phi_i[i] += step_len * du[2 * n + i];
        }
        trial.omega += step_len * du[3 * n];
        trial.params.values[li] += step_len * tan.0;
        trial.params.values[wpar] += step_len * tan.1;

        match hp_correct(prob, &mut trial, li, wpar, &state, tan, step_len) {
            Ok(()) => {
                state = trial;
                curve.points.push(CurvePoint {
                    lambda: state.params.primary_value(),
                    w: state.params.values[wpar],
                    aux: state.omega,
                    u: state.u.clone(),
                });
                step += 1;
            }
            Err(_) => {
                step_len *= 0.5;
                if step_len < 1e-8 {
                    curve.stall_reason = Some(format!("step collapsed at point {step}"));
                    return Ok(curve);
                }
            }
        }
    }
    Ok(curve)
}

#[allow(clippy::too_many_arguments)]
fn hp_correct(
    prob: &dyn PdeProblem,
    st: &mut HpState,
    li: usize,
    wpar: usize,
    base: &HpState,
    tan: (f64, f64),
    ds: f64,
) -> Result<(), SpecialPointError> {
    let n = prob.n_u();
    for _ in 0..SP_MAX_NEWTON {
        let mut r = hp_residual(prob, st).to_vec();
        let arc = 0.5 * tan.0 * (st.params.values[li] - base.params.values[li])
            + 0.5 * tan.1 * (st.params.values[wpar] - base.params.values[wpar])
            - ds;
        r.push(arc);
        let r = Array1::from_vec(r);
        let res = r.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if res <= SP_TOL {
            return Ok(());
        }
        if !res.is_finite() {
            break;
        }
        let jext = hp_jacobian(prob, st, &[li, wpar]);
        let rows = 3 * n + 2;
        let mut jsq = Array2::<f64>::zeros((rows + 1, rows + 1));
        jsq.slice_mut(s![..rows, ..]).assign(&jext);
        jsq[[rows, rows - 1]] = 0.5 * tan.0;
        jsq[[rows, rows]] = 0.5 * tan.1;
        let dz = lu_solve(&jsq.view(), &(r.mapv(|v| -v)).view())?;
        for i in 0..n {
            st.u[i] += dz[i];
            st.phi_r[i] += dz[n + i];
            st.phi_i[i] += dz[2 * n + i];
        }
        st.omega += dz[3 * n];
        st.params.values[li] += dz[rows - 1];
        st.params.values[wpar] += dz[rows];
    }
    Err(SpecialPointError::NoConvergence { residual: f64::NAN })
}

/// Build the augmented branch-point state from a detected record: psi is the
/// adjoint kernel direction at the critical eigenvalue.
pub fn bpcontini(prob: &dyn PdeProblem, bp: &BranchPoint) -> Result<BpState, SpecialPointError> {
    let gu = jacobian(prob, &bp.u.view(), &bp.params, None);
    let at = gu.t().mapv(|v| -v);
    let sets = eigs_near(
        &at.view(),
        &prob.mass_sys().view(),
        &EigRequest::single(c64::new(0.0, 0.0), 3),
    );
    let pairs = sets.into_iter().next().unwrap()?;
    let adj = pairs
        .iter()
        .min_by(|x, y| x.value.norm().partial_cmp(&y.value.norm()).unwrap())
        .ok_or(SpecialPointError::MissingEigenpair)?;
    let mut psi = adj.vector.mapv(|z| z.re);
    let nrm = psi.dot(&psi).sqrt();
    if nrm < 1e-14 {
        psi = adj.vector.mapv(|z| z.im);
    }
    let nrm = psi.dot(&psi).sqrt();
    psi /= nrm;
    Ok(BpState { u: bp.u.clone(), psi, mu: 0.0, params: bp.params.clone() })
}

fn bp_residual(prob: &dyn PdeProblem, st: &BpState) -> Array1<f64> {
    let n = prob.n_u();
    let g = prob.rhs(&st.u.view(), &st.params, None);
    let gu = jacobian(prob, &st.u.view(), &st.params, None);
    let m = prob.mass_sys();
    let glam = problem::param_deriv(prob, &st.u.view(), &st.params, st.params.primary, None);
    let mut out = Array1::<f64>::zeros(2 * n + 2);
    let r1 = &g + &(m.dot(&st.psi) * st.mu);
    out.slice_mut(s![..n]).assign(&r1);
    out.slice_mut(s![n..2 * n]).assign(&gu.t().dot(&st.psi));
    out[2 * n] = st.psi.dot(&st.psi) - 1.0;
    out[2 * n + 1] = st.psi.dot(&glam);
    out
}

/// Jacobian columns: (u, psi, lambda, mu) plus optional extra parameter.
fn bp_jacobian(prob: &dyn PdeProblem, st: &BpState, extra: Option<usize>) -> Array2<f64> {
    let n = prob.n_u();
    let li = st.params.primary;
    let rows = 2 * n + 2;
    let cols = 2 * n + 2 + usize::from(extra.is_some());
    let gu = jacobian(prob, &st.u.view(), &st.params, None);
    let m = prob.mass_sys();
    let dadj = spjac(prob, &st.u.view(), &st.params, &st.psi.view(), true);
    let mut j = Array2::<f64>::zeros((rows, cols));
    j.slice_mut(s![..n, ..n]).assign(&gu);
    j.slice_mut(s![..n, n..2 * n]).assign(&m.mapv(|v| st.mu * v));
    j.slice_mut(s![n..2 * n, ..n]).assign(&dadj);
    j.slice_mut(s![n..2 * n, n..2 * n]).assign(&gu.t());
    for i in 0..n {
        j[[2 * n, n + i]] = 2.0 * st.psi[i];
    }
    // d/du of psi^T G_lam by finite differences
    let glam_row = {
        let mut row = Array1::<f64>::zeros(n);
        let mut work = st.u.clone();
        for k in 0..n {
            let h = problem::fd_step(st.u[k]);
            work[k] = st.u[k] + h;
            let gp = problem::param_deriv(prob, &work.view(), &st.params, li, None);
            work[k] = st.u[k] - h;
            let gm = problem::param_deriv(prob, &work.view(), &st.params, li, None);
            work[k] = st.u[k];
            row[k] = st.psi.dot(&(&gp - &gm)) / (2.0 * h);
        }
        row
    };
    for i in 0..n {
        j[[2 * n + 1, i]] = glam_row[i];
    }
    let glam = problem::param_deriv(prob, &st.u.view(), &st.params, li, None);
    for i in 0..n {
        j[[2 * n + 1, n + i]] = glam[i];
    }
    // parameter columns: lambda, mu, extra
    let param_cols: Vec<usize> = std::iter::once(li).chain(extra).collect();
    for (k, &pi) in param_cols.iter().enumerate() {
        // lambda is column 2n, mu columns 2n+1, extra 2n+2
        let col = if k == 0 { 2 * n } else { 2 * n + 2 };
        let h = problem::fd_step(st.params.values[pi]);
        let mut pp = st.params.clone();
        pp.values[pi] += h;
        let gp = prob.rhs(&st.u.view(), &pp, None);
        let gup = jacobian(prob, &st.u.view(), &pp, None);
        let glamp = problem::param_deriv(prob, &st.u.view(), &pp, li, None);
        pp.values[pi] = st.params.values[pi] - h;
        let gm = prob.rhs(&st.u.view(), &pp, None);
        let gum = jacobian(prob, &st.u.view(), &pp, None);
        let glamm = problem::param_deriv(prob, &st.u.view(), &pp, li, None);
        let dg = (&gp - &gm) / (2.0 * h);
        let dgu_psi = (&gup.t().dot(&st.psi) - &gum.t().dot(&st.psi)) / (2.0 * h);
        let dglam = (&glamp - &glamm) / (2.0 * h);
        for i in 0..n {
            j[[i, col]] = dg[i];
            j[[n + i, col]] = dgu_psi[i];
        }
        j[[2 * n + 1, col]] = st.psi.dot(&dglam);
    }
    // mu column
    let mpsi = m.dot(&st.psi);
    for i in 0..n {
        j[[i, 2 * n + 1]] = mpsi[i];
    }
    j
}

/// Newton localization of a (simple) branch point with (lambda, mu) free.
pub fn bploc(prob: &dyn PdeProblem, state: &mut BpState) -> Result<(), SpecialPointError> {
    let n = prob.n_u();
    let li = state.params.primary;
    for _ in 0..SP_MAX_NEWTON {
        let r = bp_residual(prob, state);
        let res = r.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if res <= SP_TOL {
            return Ok(());
        }
        if !res.is_finite() {
            break;
        }
        let j = bp_jacobian(prob, state, None);
        let dz = lu_solve(&j.view(), &(r.mapv(|v| -v)).view())?;
        for i in 0..n {
            state.u[i] += dz[i];
            state.psi[i] += dz[n + i];
        }
        state.params.values[li] += dz[2 * n];
        state.mu += dz[2 * n + 1];
    }
    let r = bp_residual(prob, state);
    Err(SpecialPointError::NoConvergence {
        residual: r.iter().fold(0.0f64, |m, &v| m.max(v.abs())),
    })
}

/// Continue the branch-point system in (lambda, w).
pub fn bpcont(
    prob: &dyn PdeProblem,
    start: &BpState,
    wpar: usize,
    nsteps: usize,
    ds: f64,
) -> Result<PointCurve, SpecialPointError> {
    let mut state = start.clone();
    bploc(prob, &mut state)?;
    let n = prob.n_u();
    let li = state.params.primary;
    let mut curve = PointCurve::default();
    curve.points.push(CurvePoint {
        lambda: state.params.primary_value(),
        w: state.params.values[wpar],
        aux: state.mu,
        u: state.u.clone(),
    });

    let mut tan = (0.0f64, 0.0f64);
    let mut have_tan = false;
    let mut step_len = ds;
    let mut step = 0;
    while step < nsteps {
        let jext = bp_jacobian(prob, &state, Some(wpar));
        let rows = 2 * n + 2;
        let mut jsq = Array2::<f64>::zeros((rows + 1, rows + 1));
        jsq.slice_mut(s![..rows, ..]).assign(&jext);
        if have_tan {
            jsq[[rows, 2 * n]] = 0.5 * tan.0;
            jsq[[rows, 2 * n + 2]] = 0.5 * tan.1;
        } else {
            jsq[[rows, 2 * n + 2]] = 0.5;
        }
        let mut rhs = Array1::<f64>::zeros(rows + 1);
        rhs[rows] = 1.0;
        let z = lu_solve(&jsq.view(), &rhs.view())?;
        let (tl, tw) = (z[2 * n], z[2 * n + 2]);
        let nrm = (0.5 * (tl * tl + tw * tw)).sqrt();
        let mut t = (tl / nrm, tw / nrm);
        if have_tan && 0.5 * (t.0 * tan.0 + t.1 * tan.1) < 0.0 {
            t = (-t.0, -t.1);
        }
        tan = t;
        have_tan = true;
        let du = z.mapv(|v| v / nrm);

        let mut trial = state.clone();
        for i in 0..n {
            trial.u[i] += step_len * du[i];
            trial.psi[i] += step_len * du[n + i];
        }
        trial.mu += step_len * du[2 * n + 1];
        trial.params.values[li] += step_len * tan.0;
        trial.params.values[wpar] += step_len * tan.1;

        match bp_correct(prob, &mut trial, li, wpar, &state, tan, step_len) {
            Ok(()) => {
                state = trial;
                curve.points.push(CurvePoint {
                    lambda: state.params.primary_value(),
                    w: state.params.values[wpar],
                    aux: state.mu,
                    u: state.u.clone(),
                });
                step += 1;
            }
            Err(_) => {
                step_len *= 0.5;
                if step_len < 1e-8 {
                    curve.stall_reason = Some(format!("step collapsed at point {step}"));
                    return Ok(curve);
                }
            }
        }
    }
    Ok(curve)
}

#[allow(clippy::too_many_arguments)]
fn bp_correct(
    prob: &dyn PdeProblem,
    st: &mut BpState,
    li: usize,
    wpar: usize,
    base: &BpState,
    tan: (f64, f64),
    ds: f64,
) -> Result<(), SpecialPointError> {
    let n = prob.n_u();
    for _ in 0..SP_MAX_NEWTON {
        let mut r = bp_residual(prob, st).to_vec();
        let arc = 0.5 * tan.0 * (st.params.values[li] - base.params.values[li])
            + 0.5 * tan.1 * (st.params.values[wpar] - base.params.values[wpar])
            - ds;
        r.push(arc);
        let r = Array1::from_vec(r);
        let res = r.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if res <= SP_TOL {
            return Ok(());
        }
        if !res.is_finite() {
            break;
        }
        let jext = bp_jacobian(prob, st, Some(wpar));
        let rows = 2 * n + 2;
        let mut jsq = Array2::<f64>::zeros((rows + 1, rows + 1));
        jsq.slice_mut(s![..rows, ..]).assign(&jext);
        jsq[[rows, 2 * n]] = 0.5 * tan.0;
        jsq[[rows, 2 * n + 2]] = 0.5 * tan.1;
        let dz = lu_solve(&jsq.view(), &(r.mapv(|v| -v)).view())?;
        for i in 0..n {
            st.u[i] += dz[i];
            st.psi[i] += dz[n + i];
        }
        st.params.values[li] += dz[2 * n];
        st.mu += dz[2 * n + 1];
        st.params.values[wpar] += dz[2 * n + 2];
    }
    Err(SpecialPointError::NoConvergence { residual: f64::NAN })
}

/// Direct eigensolve validation at a curve point: for Hopf curves the
/// smallest |Re| near i*omega, for BP curves the smallest |mu|.
pub fn validate_curve_point(
    prob: &dyn PdeProblem,
    u: &Array1<f64>,
    params: &ParamVec,
    shift: c64,
) -> Result<c64, SpecialPointError> {
    let gu = jacobian(prob, &u.view(), params, None);
    let a = gu.mapv(|v| -v);
    let sets = eigs_near(&a.view(), &prob.mass_sys().view(), &EigRequest::single(shift, 4));
    let pairs = sets
        .into_iter()
        .next()
        .unwrap()
        .map_err(|e| SpecialPointError::Validation(e.to_string()))?;
    pairs
        .iter()
        .min_by(|x, y| x.value.re.abs().partial_cmp(&y.value.re.abs()).unwrap())
        .map(|p| p.value)
        .ok_or_else(|| SpecialPointError::Validation("no eigenvalue returned".into()))
}

/// Row-scaled condition estimate of the extended Hopf Jacobian; regular at a
/// simple Hopf point.
pub fn hp_regularity(prob: &dyn PdeProblem, st: &HpState) -> Result<f64, SpecialPointError> {
    let li = st.params.primary;
    let j = hp_jacobian(prob, st, &[li]);
    let mut scaled = j.clone();
    for mut row in scaled.rows_mut() {
        let nrm = row.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-300);
        row.mapv_inplace(|v| v / nrm);
    }
    let lu = LuReal::new(&scaled.view()).map_err(crate::linsys::LinsysError::from)?;
    Ok(lu.rcond().map_err(crate::linsys::LinsysError::from)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos::CglProblem;
    use crate::problem::ConstraintCtx;
    use crate::steady::{cont_steady, ContSettings, PointType, SteadyState};

    fn cgl_first_hp() -> (CglProblem, BranchPoint) {
        let p = CglProblem::neumann(16);
        let mut pv = p.default_params();
        pv.set_primary(0.15);
        let state = SteadyState { u: Array1::zeros(p.n_u()), params: pv };
        let settings = ContSettings { ds: 0.04, dsmax: 0.08, n_eig: 12, ..Default::default() };
        let mut cs = ConstraintCtx::default();
        let branch = cont_steady(&p, state, &settings, &mut cs, 8, 1.0).unwrap();
        let hp = branch
            .points
            .into_iter()
            .find(|pt| pt.ptype == PointType::Hopf)
            .expect("no Hopf point found");
        (p, hp)
    }

    #[test]
    fn hploc_refines_cgl_hopf_point() {
        // second Hopf point of cGL sits exactly at r = kappa^2 with omega = nu
        let (p, hp) = cgl_first_hp();
        let mut st = hpcontini(&hp).unwrap();
        hploc(&p, &mut st).unwrap();
        // continuous location 0.25 up to the FEM eigenvalue error
        assert!((st.params.primary_value() - 0.25).abs() < 5e-3, "r = {}", st.params.primary_value());
        assert!((st.omega - 1.0).abs() < 1e-3, "omega = {}", st.omega);
        // residual rows satisfied
        let r = hp_residual(&p, &st);
        assert!(r.iter().all(|v| v.abs() < 1e-7));
        // direct eigensolve at the refined point: pure imaginary pair
        let mu = validate_curve_point(&p, &st.u, &st.params, c64::new(0.0, st.omega)).unwrap();
        assert!(mu.re.abs() < 1e-9, "Re mu = {}", mu.re);
    }

    #[test]
    fn hp_jacobian_block_pattern() {
        let (p, hp) = cgl_first_hp();
        let st = hpcontini(&hp).unwrap();
        let n = p.n_u();
        let j = hp_jacobian(&p, &st, &[st.params.primary]);
        // zero blocks of the first row block: phi_r, phi_i, omega columns
        for i in 0..n {
            for k in 0..n {
                assert_eq!(j[[i, n + k]], 0.0);
                assert_eq!(j[[i, 2 * n + k]], 0.0);
            }
            assert_eq!(j[[i, 3 * n]], 0.0);
        }
        // normalization rows touch only their phi block
        for k in 0..n {
            assert_eq!(j[[3 * n, k]], 0.0);
            assert_eq!(j[[3 * n, 2 * n + k]], 0.0);
            assert_eq!(j[[3 * n + 1, k]], 0.0);
            assert_eq!(j[[3 * n + 1, n + k]], 0.0);
        }
        assert_eq!(j[[3 * n, 3 * n]], 0.0);
        assert_eq!(j[[3 * n + 1, 3 * n]], 0.0);
    }

    #[test]
    fn hp_regular_at_simple_point() {
        let (p, hp) = cgl_first_hp();
        let mut st = hpcontini(&hp).unwrap();
        hploc(&p, &mut st).unwrap();
        let rc = hp_regularity(&p, &st).unwrap();
        assert!(rc > 1e-8, "rcond = {:e}", rc);
    }

    #[test]
    fn degenerate_normalization_rejected() {
        let (p, hp) = cgl_first_hp();
        let mut st = hpcontini(&hp).unwrap();
        // c orthogonal to phi_r makes the normalization row unsolvable
        st.c = Array1::zeros(p.n_u());
        let r = hp_residual(&p, &st);
        assert!((r[3 * p.n_u()] + 1.0).abs() < 1e-14, "c^T phi_r - 1 = {}", r[3 * p.n_u()]);
        // Newton cannot fix a structurally zero row
        assert!(hploc(&p, &mut st).is_err());
    }

    #[test]
    fn hpcont_follows_cgl_hopf_line_in_nu() {
        // the cGL Hopf point location r = kappa^2 is nu-independent while
        // omega = nu: the curve in (r, nu) must track that line
        let (p, hp) = cgl_first_hp();
        let st = hpcontini(&hp).unwrap();
        let curve = hpcont(&p, &st, crate::demos::cgl::P_NU, 5, 0.05).unwrap();
        assert!(curve.points.len() >= 4, "stalled: {:?}", curve.stall_reason);
        let r0 = curve.points[0].lambda;
        for pt in &curve.points {
            assert!((pt.lambda - r0).abs() < 5e-3, "r drifted to {}", pt.lambda);
            assert!((pt.aux - pt.w).abs() < 5e-3, "omega {} vs nu {}", pt.aux, pt.w);
        }
    }
}
