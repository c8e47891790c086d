//! Newton correction and pseudo-arclength continuation of steady states with
//! constraints, detection and bisection-localization of steady and Hopf
//! bifurcation points from eigenvalue crossings, and the frequency-shift
//! scan used to seed Hopf detection in problems with clustered spectra.

use crate::c64;
use crate::linsys::{eigs_near, solve_bordered, BorderedSystem, DenseCore, EigPair, EigRequest};
use crate::problem::{
    self, jacobian, param_deriv, q_jac_u, q_param_deriv, ConstraintCtx, ParamVec, PdeProblem,
};
use ndarray::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SteadyError {
    #[error("Newton did not converge within {its} iterations (residual {residual:.3e})")]
    NoConvergence { its: usize, residual: f64 },
    #[error("linear solve failed: {0}")]
    Linear(#[from] crate::linsys::LinsysError),
    #[error("problem error: {0}")]
    Problem(#[from] crate::problem::ProblemError),
    #[error("constraint count {nq} does not match free auxiliary parameters {nw}")]
    ConstraintMismatch { nq: usize, nw: usize },
}

/// Numerical controls for steady continuation.
#[derive(Debug, Clone)]
pub struct ContSettings {
    pub tol: f64,
    pub max_newton: usize,
    pub ds: f64,
    pub dsmin: f64,
    pub dsmax: f64,
    pub n_eig: usize,
    /// Shifts near which eigenvalues are monitored.
    pub shifts: Vec<c64>,
    /// |Re mu| below which a bisection is started.
    pub mu1: f64,
    /// |Re mu| accepted as converged localization.
    pub mu2: f64,
    pub bisec_max: usize,
    /// Target parameter values to land on exactly.
    pub usrlam: Vec<f64>,
    /// Weight of the state part in the arclength inner product.
    pub xi: f64,
    pub detect: bool,
    /// Largest accepted primary-parameter move per step.
    pub lam_step_max: f64,
}

impl Default for ContSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_newton: 20,
            ds: 0.1,
            dsmin: 1e-6,
            dsmax: 0.5,
            n_eig: 20,
            shifts: vec![c64::new(0.0, 0.0)],
            mu1: 0.5,
            mu2: 1e-4,
            bisec_max: 10,
            usrlam: Vec::new(),
            xi: 0.0, // 0 means: set to 1/n_u at branch start
            detect: true,
            lam_step_max: 0.5,
        }
    }
}

impl ContSettings {
    pub fn effective_xi(&self, n_u: usize) -> f64 {
        if self.xi > 0.0 {
            self.xi
        } else {
            1.0 / n_u as f64
        }
    }
}

/// Full unknown of the steady continuation: state, auxiliary parameters, and
/// the primary parameter (all parameter data lives in `params`).
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub u: Array1<f64>,
    pub params: ParamVec,
}

/// Tangent along a steady branch in (u, w, lambda) coordinates.
#[derive(Debug, Clone)]
pub struct SteadyTangent {
    pub du: Array1<f64>,
    pub dw: Vec<f64>,
    pub dlam: f64,
}

/// Weighted inner product defining step lengths and the arclength row.
pub fn steady_ip(xi: f64, a: &SteadyTangent, b: &SteadyTangent) -> f64 {
    let mut s = xi * a.du.dot(&b.du);
    s += (1.0 - xi) * a.dlam * b.dlam;
    for (x, y) in a.dw.iter().zip(b.dw.iter()) {
        s += (1.0 - xi) * x * y;
    }
    s
}

fn diff_state(xi: f64, a: &SteadyState, b: &SteadyState, t: &SteadyTangent) -> f64 {
    let d = SteadyTangent {
        du: &a.u - &b.u,
        dw: a
            .params
            .aux_values()
            .iter()
            .zip(b.params.aux_values())
            .map(|(x, y)| x - y)
            .collect(),
        dlam: a.params.primary_value() - b.params.primary_value(),
    };
    steady_ip(xi, &d, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectorMode {
    /// All parameters fixed; aux parameters adjust to meet constraints.
    Fixed,
    /// Arclength chart: primary parameter free, arclength row closes the system.
    Arclength,
}

#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Newton corrector for the constrained steady system. In `Fixed` mode the
/// unknowns are (u, w); in `Arclength` mode additionally lambda, closed by
/// the arclength equation centered at `base` with direction `tangent` and
/// step `ds`.
#[allow(clippy::too_many_arguments)]
pub fn newton_steady(
    prob: &dyn PdeProblem,
    state: &mut SteadyState,
    cs: &ConstraintCtx,
    settings: &ContSettings,
    mode: CorrectorMode,
    base: Option<&SteadyState>,
    tangent: Option<&SteadyTangent>,
    ds: f64,
) -> Result<NewtonReport, SteadyError> {
    let n_u = prob.n_u();
    let nq = prob.n_q();
    let nw = state.params.n_aux();
    if nq != nw {
        return Err(SteadyError::ConstraintMismatch { nq, nw });
    }
    let xi = settings.effective_xi(n_u);
    let n_border = nw + usize::from(mode == CorrectorMode::Arclength);

    let mut last_res = f64::INFINITY;
    for it in 0..settings.max_newton {
        let g = problem::residual(prob, &state.u.view(), &state.params, None)?;
        let q = prob.q(&state.u.view(), &state.params, cs);
        let arc = match mode {
            CorrectorMode::Arclength => {
                diff_state(xi, state, base.unwrap(), tangent.unwrap()) - ds
            }
            CorrectorMode::Fixed => 0.0,
        };
        let res = g
            .iter()
            .chain(q.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()))
            .max(arc.abs());
        last_res = res;
        if res <= settings.tol {
            return Ok(NewtonReport { iterations: it, residual: res, converged: true });
        }
        if !res.is_finite() || res > 1e8 {
            break;
        }

        let gu = jacobian(prob, &state.u.view(), &state.params, None);
        let qu = if nq > 0 {
            q_jac_u(prob, &state.u.view(), &state.params, cs)
        } else {
            Array2::zeros((0, n_u))
        };

        // border columns: aux parameters, then lambda (arclength only)
        let mut bcols = Array2::<f64>::zeros((n_u, n_border));
        let mut dmat = Array2::<f64>::zeros((n_border, n_border));
        let mut crows = Array2::<f64>::zeros((n_border, n_u));
        let mut rhs_border = Array1::<f64>::zeros(n_border);
        for (k, &pi) in state.params.aux.clone().iter().enumerate() {
            let gcol = param_deriv(prob, &state.u.view(), &state.params, pi, None);
            bcols.column_mut(k).assign(&gcol);
            let qcol = q_param_deriv(prob, &state.u.view(), &state.params, pi, cs);
            for r in 0..nq {
                dmat[[r, k]] = qcol[r];
            }
        }
        for r in 0..nq {
            crows.row_mut(r).assign(&qu.row(r));
            rhs_border[r] = -q[r];
        }
        if mode == CorrectorMode::Arclength {
            let li = state.params.primary;
            let gcol = param_deriv(prob, &state.u.view(), &state.params, li, None);
            bcols.column_mut(n_border - 1).assign(&gcol);
            let qcol = q_param_deriv(prob, &state.u.view(), &state.params, li, cs);
            for r in 0..nq {
                dmat[[r, n_border - 1]] = qcol[r];
            }
            let t = tangent.unwrap();
            let arow = n_border - 1;
            for i in 0..n_u {
                crows[[arow, i]] = xi * t.du[i];
            }
            for (k, tw) in t.dw.iter().enumerate() {
                dmat[[arow, k]] = (1.0 - xi) * tw;
            }
            dmat[[arow, n_border - 1]] = (1.0 - xi) * t.dlam;
            rhs_border[arow] = -arc;
        }

        let core = DenseCore::new(gu);
        let neg_g = g.mapv(|v| -v);
        let sys = BorderedSystem {
            core: &core,
            b: bcols.view(),
            c: crows.view(),
            d: dmat.view(),
            f: neg_g.view(),
            g: rhs_border.view(),
        };
        let (du, dy) = solve_bordered(&sys)?;

        state.u += &du;
        for (k, &pi) in state.params.aux.clone().iter().enumerate() {
            state.params.values[pi] += dy[k];
        }
        if mode == CorrectorMode::Arclength {
            let li = state.params.primary;
            state.params.values[li] += dy[n_border - 1];
        }
    }
    Err(SteadyError::NoConvergence { its: settings.max_newton, residual: last_res })
}

/// Unstable eigenvalue counts near each monitored shift, plus the computed
/// pairs for later inspection.
#[derive(Debug, Clone)]
pub struct EigSummary {
    pub unstable: Vec<usize>,
    pub pairs: Vec<EigPair>,
}

pub fn eig_summary(
    prob: &dyn PdeProblem,
    state: &SteadyState,
    settings: &ContSettings,
) -> Result<EigSummary, SteadyError> {
    let gu = jacobian(prob, &state.u.view(), &state.params, None);
    let a = gu.mapv(|v| -v);
    let req = EigRequest::new(settings.shifts.clone(), settings.n_eig);
    let sets = eigs_near(&a.view(), &prob.mass_sys().view(), &req);
    let ntol = prob.neutral_tol();
    let mut unstable = Vec::with_capacity(sets.len());
    let mut pairs = Vec::new();
    for set in sets {
        let set = set?;
        unstable.push(set.iter().filter(|p| p.value.re > ntol).count());
        pairs.extend(set);
    }
    Ok(EigSummary { unstable, pairs })
}

/// Critical eigendata stored at a localized bifurcation point.
#[derive(Debug, Clone)]
pub struct CriticalPair {
    pub value: c64,
    pub vector: Array1<c64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointType {
    Initial,
    Regular,
    Hopf,
    Branch,
    Fold,
    UserLam,
}

impl PointType {
    pub fn tag(&self) -> &'static str {
        match self {
            PointType::Initial => "IN",
            PointType::Regular => "RG",
            PointType::Hopf => "HP",
            PointType::Branch => "BP",
            PointType::Fold => "FP",
            PointType::UserLam => "UL",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub step: usize,
    pub ptype: PointType,
    pub u: Array1<f64>,
    pub params: ParamVec,
    pub unstable: Vec<usize>,
    pub critical: Option<CriticalPair>,
    /// Localization hit the bisection cap without meeting mu2.
    pub warn: bool,
}

impl BranchPoint {
    pub fn lambda(&self) -> f64 {
        self.params.primary_value()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub stall_reason: Option<String>,
}

impl Branch {
    pub fn bifurcations(&self) -> impl Iterator<Item = &BranchPoint> {
        self.points
            .iter()
            .filter(|p| matches!(p.ptype, PointType::Hopf | PointType::Branch))
    }
}

fn compute_tangent(
    prob: &dyn PdeProblem,
    state: &SteadyState,
    cs: &ConstraintCtx,
    settings: &ContSettings,
    prev: Option<&SteadyTangent>,
    dir: f64,
) -> Result<SteadyTangent, SteadyError> {
    let n_u = prob.n_u();
    let nq = prob.n_q();
    let nw = state.params.n_aux();
    let xi = settings.effective_xi(n_u);
    let k = nw + 1;

    let gu = jacobian(prob, &state.u.view(), &state.params, None);
    let mut bcols = Array2::<f64>::zeros((n_u, k));
    let mut dmat = Array2::<f64>::zeros((k, k));
    let mut crows = Array2::<f64>::zeros((k, n_u));
    let mut rhs_g = Array1::<f64>::zeros(k);
    let qu = if nq > 0 {
        q_jac_u(prob, &state.u.view(), &state.params, cs)
    } else {
        Array2::zeros((0, n_u))
    };
    for (col, &pi) in state.params.aux.iter().chain([&state.params.primary]).enumerate() {
        let gcol = param_deriv(prob, &state.u.view(), &state.params, pi, None);
        bcols.column_mut(col).assign(&gcol);
        let qcol = q_param_deriv(prob, &state.u.view(), &state.params, pi, cs);
        for r in 0..nq {
            dmat[[r, col]] = qcol[r];
        }
    }
    for r in 0..nq {
        crows.row_mut(r).assign(&qu.row(r));
    }
    // normalization row: previous tangent, or the bare lambda direction
    let arow = k - 1;
    match prev {
        Some(t) => {
            for i in 0..n_u {
                crows[[arow, i]] = xi * t.du[i];
            }
            for (kk, tw) in t.dw.iter().enumerate() {
                dmat[[arow, kk]] = (1.0 - xi) * tw;
            }
            dmat[[arow, arow]] = (1.0 - xi) * t.dlam;
        }
        None => {
            dmat[[arow, arow]] = 1.0 - xi;
        }
    }
    rhs_g[arow] = 1.0;

    let core = DenseCore::new(gu);
    let zeros = Array1::<f64>::zeros(n_u);
    let sys = BorderedSystem {
        core: &core,
        b: bcols.view(),
        c: crows.view(),
        d: dmat.view(),
        f: zeros.view(),
        g: rhs_g.view(),
    };
    let (du, dy) = solve_bordered(&sys)?;
    let mut t = SteadyTangent {
        du,
        dw: dy.iter().take(nw).cloned().collect(),
        dlam: dy[arow],
    };
    let norm = steady_ip(xi, &t, &t).sqrt();
    t.du /= norm;
    for w in &mut t.dw {
        *w /= norm;
    }
    t.dlam /= norm;
    // orientation
    let orient = match prev {
        Some(p) => steady_ip(xi, &t, p),
        None => t.dlam * dir,
    };
    if orient < 0.0 {
        t.du *= -1.0;
        for w in &mut t.dw {
            *w *= -1.0;
        }
        t.dlam = -t.dlam;
    }
    Ok(t)
}

/// One localized bifurcation event between two consecutive branch points.
#[derive(Debug, Clone)]
pub struct BifEvent {
    pub kind: PointType,
    pub state: SteadyState,
    pub unstable: Vec<usize>,
    pub critical: CriticalPair,
    pub warn: bool,
}

/// Localize an eigenvalue crossing between states `a` and `b` (whose
/// summaries differ) by bisection in arclength along the secant.
#[allow(clippy::too_many_arguments)]
pub fn detect_bifurcation(
    prob: &dyn PdeProblem,
    cs: &ConstraintCtx,
    settings: &ContSettings,
    a: &SteadyState,
    sum_a: &EigSummary,
    b: &SteadyState,
    sum_b: &EigSummary,
) -> Result<Vec<BifEvent>, SteadyError> {
    if sum_a.unstable == sum_b.unstable {
        return Ok(Vec::new());
    }
    let n_u = prob.n_u();
    let xi = settings.effective_xi(n_u);
    let mut secant = SteadyTangent {
        du: &b.u - &a.u,
        dw: a
            .params
            .aux_values()
            .iter()
            .zip(b.params.aux_values())
            .map(|(x, y)| y - x)
            .collect(),
        dlam: b.params.primary_value() - a.params.primary_value(),
    };
    let len = steady_ip(xi, &secant, &secant).sqrt();
    secant.du /= len;
    for w in &mut secant.dw {
        *w /= len;
    }
    secant.dlam /= len;

    let ntol = prob.neutral_tol();
    let crit_of = |sum: &EigSummary| -> Option<CriticalPair> {
        sum.pairs
            .iter()
            .filter(|p| p.value.re.abs() > ntol || ntol == 0.0)
            .min_by(|x, y| x.value.re.abs().partial_cmp(&y.value.re.abs()).unwrap())
            .map(|p| CriticalPair { value: p.value, vector: p.vector.clone() })
    };

    let (mut lo, mut hi) = (0.0f64, len);
    let mut best: Option<(SteadyState, EigSummary)> = None;
    let mut warn = true;
    for _ in 0..settings.bisec_max {
        let mid = 0.5 * (lo + hi);
        let mut trial = a.clone();
        trial.u.scaled_add(mid, &secant.du);
        for (k, w) in secant.dw.iter().enumerate() {
            let idx = trial.params.aux[k];
            trial.params.values[idx] += mid * w;
        }
        let li = trial.params.primary;
        trial.params.values[li] += mid * secant.dlam;
        if newton_steady(
            prob,
            &mut trial,
            cs,
            settings,
            CorrectorMode::Arclength,
            Some(a),
            Some(&secant),
            mid,
        )
        .is_err()
        {
            // corrector failed mid-segment; shrink toward the left state
            hi = mid;
            continue;
        }
        let sum_mid = eig_summary(prob, &trial, settings)?;
        if sum_mid.unstable == sum_a.unstable {
            lo = mid;
        } else {
            hi = mid;
        }
        let crit = crit_of(&sum_mid);
        if let Some(c) = &crit {
            if sum_mid.unstable != sum_a.unstable {
                best = Some((trial, sum_mid));
                if c.value.re.abs() < settings.mu2 {
                    warn = false;
                    break;
                }
            }
        }
    }
    let (state, summary) = match best {
        Some(v) => v,
        None => (b.clone(), sum_b.clone()),
    };
    let critical = match crit_of(&summary) {
        Some(c) => c,
        None => return Ok(Vec::new()),
    };
    let kind = if critical.value.im.abs() > 1e-6 {
        PointType::Hopf
    } else {
        PointType::Branch
    };
    Ok(vec![BifEvent { kind, state, unstable: summary.unstable, critical, warn }])
}

/// Pseudo-arclength continuation driver: predictor/corrector steps with
/// adaptive step size, bifurcation detection, fold marking, and exact
/// landings on user-requested parameter values.
pub fn cont_steady(
    prob: &dyn PdeProblem,
    start: SteadyState,
    settings: &ContSettings,
    cs: &mut ConstraintCtx,
    nsteps: usize,
    dir: f64,
) -> Result<Branch, SteadyError> {
    let mut branch = Branch::default();
    let mut state = start;
    newton_steady(prob, &mut state, cs, settings, CorrectorMode::Fixed, None, None, 0.0)?;
    let mut summary = eig_summary(prob, &state, settings)?;
    branch.points.push(BranchPoint {
        step: 0,
        ptype: PointType::Initial,
        u: state.u.clone(),
        params: state.params.clone(),
        unstable: summary.unstable.clone(),
        critical: None,
        warn: false,
    });

    let mut tangent = compute_tangent(prob, &state, cs, settings, None, dir)?;
    let mut ds = settings.ds;
    let mut usrlam_pending: Vec<f64> = settings.usrlam.clone();

    for step in 1..=nsteps {
        let mut accepted = false;
        while !accepted {
            let mut trial = state.clone();
            trial.u.scaled_add(ds, &tangent.du);
            for (k, w) in tangent.dw.iter().enumerate() {
                let idx = trial.params.aux[k];
                trial.params.values[idx] += ds * w;
            }
            let li = trial.params.primary;
            trial.params.values[li] += ds * tangent.dlam;

            match newton_steady(
                prob,
                &mut trial,
                cs,
                settings,
                CorrectorMode::Arclength,
                Some(&state),
                Some(&tangent),
                ds,
            ) {
                Ok(report)
                    if (trial.params.primary_value() - state.params.primary_value()).abs()
                        <= settings.lam_step_max =>
                {
                    let new_tangent =
                        compute_tangent(prob, &trial, cs, settings, Some(&tangent), dir)?;
                    let new_summary = eig_summary(prob, &trial, settings)?;

                    // user-requested parameter values inside this step
                    let (l0, l1) = (state.params.primary_value(), trial.params.primary_value());
                    usrlam_pending.retain(|&target| {
                        let inside = (l0 - target) * (l1 - target) < 0.0;
                        if inside {
                            let mut at = state.clone();
                            let frac = (target - l0) / (l1 - l0);
                            at.u = &state.u * (1.0 - frac) + &trial.u * frac;
                            let li = at.params.primary;
                            at.params.values[li] = target;
                            for (k, &pi) in at.params.aux.clone().iter().enumerate() {
                                at.params.values[pi] = state.params.values[pi] * (1.0 - frac)
                                    + trial.params.values[pi] * frac;
                                let _ = k;
                            }
                            if newton_steady(
                                prob,
                                &mut at,
                                cs,
                                settings,
                                CorrectorMode::Fixed,
                                None,
                                None,
                                0.0,
                            )
                            .is_ok()
                            {
                                let us = eig_summary(prob, &at, settings)
                                    .map(|s| s.unstable)
                                    .unwrap_or_default();
                                branch.points.push(BranchPoint {
                                    step,
                                    ptype: PointType::UserLam,
                                    u: at.u,
                                    params: at.params,
                                    unstable: us,
                                    critical: None,
                                    warn: false,
                                });
                                return false;
                            }
                        }
                        true
                    });

                    if settings.detect {
                        for ev in detect_bifurcation(
                            prob, cs, settings, &state, &summary, &trial, &new_summary,
                        )? {
                            branch.points.push(BranchPoint {
                                step,
                                ptype: ev.kind,
                                u: ev.state.u.clone(),
                                params: ev.state.params.clone(),
                                unstable: ev.unstable.clone(),
                                critical: Some(ev.critical),
                                warn: ev.warn,
                            });
                        }
                    }

                    let fold = tangent.dlam * new_tangent.dlam < 0.0;
                    branch.points.push(BranchPoint {
                        step,
                        ptype: if fold { PointType::Fold } else { PointType::Regular },
                        u: trial.u.clone(),
                        params: trial.params.clone(),
                        unstable: new_summary.unstable.clone(),
                        critical: None,
                        warn: false,
                    });

                    state = trial;
                    summary = new_summary;
                    tangent = new_tangent;
                    if cs.u_ref.is_some() {
                        cs.u_ref = Some(state.u.clone());
                    }
                    if report.iterations <= 3 {
                        ds = (ds * 1.3).min(settings.dsmax);
                    }
                    accepted = true;
                }
                _ => {
                    ds *= 0.5;
                    if ds < settings.dsmin {
                        branch.stall_reason =
                            Some(format!("step size {ds:.2e} fell below dsmin at step {step}"));
                        return Ok(branch);
                    }
                }
            }
        }
    }
    Ok(branch)
}

/// Scan omega in [0, omega_max] for the shift i*omega whose nearest pencil
/// eigenvalue has the smallest |Re|; returns that eigenvalue's |Im| as the
/// suggested extra shift, or 0 when nothing beats the shift at the origin.
pub fn initeig(
    prob: &dyn PdeProblem,
    state: &SteadyState,
    omega_max: f64,
) -> Result<f64, SteadyError> {
    let gu = jacobian(prob, &state.u.view(), &state.params, None);
    let a = gu.mapv(|v| -v);
    let m = prob.mass_sys();
    let grid = 64;
    let mut best: Option<(f64, c64)> = None; // (|Re|, mu)
    for k in 0..grid {
        let omega = omega_max * k as f64 / (grid - 1) as f64;
        let req = EigRequest::single(c64::new(0.0, omega), 1);
        let sets = eigs_near(&a.view(), &m.view(), &req);
        let pairs = match &sets[0] {
            Ok(p) if !p.is_empty() => p,
            _ => continue,
        };
        let mu = pairs[0].value;
        if best.as_ref().map(|(r, _)| mu.re.abs() < *r).unwrap_or(true) {
            best = Some((mu.re.abs(), mu));
        }
    }
    // A purely real near-critical spectrum yields Im = 0, i.e. no extra shift.
    let found = best.map(|(_, mu)| mu.im.abs()).unwrap_or(0.0);
    Ok(if found < 1e-8 { 0.0 } else { found })
}
