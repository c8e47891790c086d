//! User-facing problem definition: residual, Jacobian, constraints, parameter
//! handling, and the finite-difference fallbacks used when analytic hooks are
//! absent.
//!
//! Sign convention throughout: the semi-discrete system is M u' = -G(u, lam)
//! with G(u) = K u - M f(u) for semilinear problems, so eigenvalues mu of
//! -G_u v = mu M v are growth rates.

use crate::fem1d::{Mesh1D, Operators};
use ndarray::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("residual has non-finite entry at component index {index}")]
    NonFinite { index: usize },
    #[error("parameter index {index} out of range (have {len})")]
    BadParamIndex { index: usize, len: usize },
    #[error("active parameter indices must be pairwise distinct")]
    DuplicateActive,
}

/// Ordered real parameters with pointers to the active ones: `primary` is the
/// continuation parameter, `aux` the additional parameters freed by
/// constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVec {
    pub values: Vec<f64>,
    pub primary: usize,
    pub aux: Vec<usize>,
}

impl ParamVec {
    pub fn new(values: Vec<f64>, primary: usize, aux: Vec<usize>) -> Result<Self, ProblemError> {
        let len = values.len();
        let mut seen = vec![primary];
        if primary >= len {
            return Err(ProblemError::BadParamIndex { index: primary, len });
        }
        for &a in &aux {
            if a >= len {
                return Err(ProblemError::BadParamIndex { index: a, len });
            }
            if seen.contains(&a) {
                return Err(ProblemError::DuplicateActive);
            }
            seen.push(a);
        }
        Ok(Self { values, primary, aux })
    }

    pub fn primary_value(&self) -> f64 {
        self.values[self.primary]
    }

    pub fn set_primary(&mut self, v: f64) {
        self.values[self.primary] = v;
    }

    pub fn n_aux(&self) -> usize {
        self.aux.len()
    }

    pub fn aux_values(&self) -> Vec<f64> {
        self.aux.iter().map(|&i| self.values[i]).collect()
    }

    pub fn set_aux(&mut self, k: usize, v: f64) {
        let idx = self.aux[k];
        self.values[idx] = v;
    }
}

/// Scaled time t in [0,1) and the current period, passed to non-autonomous
/// right-hand sides.
#[derive(Debug, Clone, Copy)]
pub struct TimeCtx {
    pub t: f64,
    pub period: f64,
}

/// Mutable per-branch state owned by the continuation driver, read by
/// constraints that need a reference profile (e.g. translational phase
/// conditions).
#[derive(Debug, Clone, Default)]
pub struct ConstraintCtx {
    pub u_ref: Option<Array1<f64>>,
}

/// A spatially discretized PDE problem. `n_dof` unknowns per component,
/// components stored block-wise: u = (u_1(x_1..), u_2(x_1..), ...).
pub trait PdeProblem {
    fn name(&self) -> &str;
    fn n_comp(&self) -> usize;
    fn mesh(&self) -> &Mesh1D;
    fn ops(&self) -> &Operators;

    /// System dynamical mass matrix; zero rows on algebraic components.
    fn mass_sys(&self) -> &Array2<f64>;

    /// Component indices whose mass rows vanish (algebraic constraints).
    fn algebraic_comps(&self) -> &[usize] {
        &[]
    }

    /// Residual G(u, lam); time context present only for non-autonomous runs.
    fn rhs(&self, u: &ArrayView1<f64>, p: &ParamVec, tc: Option<&TimeCtx>) -> Array1<f64>;

    /// Analytic Jacobian d_u G if available.
    fn jac(&self, _u: &ArrayView1<f64>, _p: &ParamVec, _tc: Option<&TimeCtx>) -> Option<Array2<f64>> {
        None
    }

    /// Number of steady constraints.
    fn n_q(&self) -> usize {
        0
    }

    fn q(&self, _u: &ArrayView1<f64>, _p: &ParamVec, _cs: &ConstraintCtx) -> Array1<f64> {
        Array1::zeros(0)
    }

    /// Analytic d_u q (n_q x n_u) if available.
    fn q_jac_u(&self, _u: &ArrayView1<f64>, _p: &ParamVec, _cs: &ConstraintCtx) -> Option<Array2<f64>> {
        None
    }

    /// Number of periodic-orbit constraints.
    fn n_qh(&self) -> usize {
        0
    }

    /// Orbit constraints evaluated on the unique time slices (columns of y).
    fn qh(
        &self,
        _y: &ArrayView2<f64>,
        _tmesh: &[f64],
        _p: &ParamVec,
        _cs: &ConstraintCtx,
    ) -> Array1<f64> {
        Array1::zeros(0)
    }

    /// d_u Q_H as an n_qh x (m_unique * n_u) matrix (slice-major columns).
    fn qh_jac_u(
        &self,
        _y: &ArrayView2<f64>,
        _tmesh: &[f64],
        _p: &ParamVec,
        _cs: &ConstraintCtx,
    ) -> Option<Array2<f64>> {
        None
    }

    /// Directional second derivative d_u(G_u phi) (or d_u(G_u^T phi) when
    /// `adjoint`), used by Hopf/branch point continuation.
    fn spjac(
        &self,
        _u: &ArrayView1<f64>,
        _p: &ParamVec,
        _phi: &ArrayView1<f64>,
        _adjoint: bool,
    ) -> Option<Array2<f64>> {
        None
    }

    /// Current-value objective (optimal-control demos).
    fn objective(&self, _u: &ArrayView1<f64>, _p: &ParamVec) -> Option<f64> {
        None
    }

    /// Hint that the periodic-orbit Newton solver should skip the structured
    /// elimination (problems with extreme Floquet spreads).
    fn prefer_monolithic_po(&self) -> bool {
        false
    }

    /// Margin above zero for counting an eigenvalue as unstable; problems with
    /// persistent neutral modes set this to a small positive value.
    fn neutral_tol(&self) -> f64 {
        0.0
    }

    fn n_u(&self) -> usize {
        self.n_comp() * self.mesh().n_dof()
    }

    /// Default parameter vector of the problem (used by the CLI registry).
    fn default_params_dyn(&self) -> ParamVec;

    /// Natural starting state for continuation (trivial or closed-form).
    fn initial_state(&self, _p: &ParamVec) -> ndarray::Array1<f64> {
        ndarray::Array1::zeros(self.n_u())
    }
}

/// FD step for state and parameter derivatives.
pub fn fd_step(value: f64) -> f64 {
    1e-6 * (1.0 + value.abs())
}

/// Residual with a non-finite check.
pub fn residual(
    p: &dyn PdeProblem,
    u: &ArrayView1<f64>,
    pv: &ParamVec,
    tc: Option<&TimeCtx>,
) -> Result<Array1<f64>, ProblemError> {
    let g = p.rhs(u, pv, tc);
    if let Some(index) = g.iter().position(|v| !v.is_finite()) {
        return Err(ProblemError::NonFinite { index });
    }
    Ok(g)
}

/// Central-difference Jacobian, column by column.
pub fn fd_jacobian(
    p: &dyn PdeProblem,
    u: &ArrayView1<f64>,
    pv: &ParamVec,
    tc: Option<&TimeCtx>,
) -> Array2<f64> {
    let n = u.len();
    let mut work = u.to_owned();
    let mut jac = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let h = fd_step(u[j]);
        work[j] = u[j] + h;
        let gp = p.rhs(&work.view(), pv, tc);
        work[j] = u[j] - h;
        let gm = p.rhs(&work.view(), pv, tc);
        work[j] = u[j];
        let col = (&gp - &gm) / (2.0 * h);
        jac.column_mut(j).assign(&col);
    }
    jac
}

/// Analytic Jacobian when provided, FD otherwise.
pub fn jacobian(
    p: &dyn PdeProblem,
    u: &ArrayView1<f64>,
    pv: &ParamVec,
    tc: Option<&TimeCtx>,
) -> Array2<f64> {
    p.jac(u, pv, tc).unwrap_or_else(|| fd_jacobian(p, u, pv, tc))
}

/// d_lam G for one parameter index, central differences.
pub fn param_deriv(
    p: &dyn PdeProblem,
    u: &ArrayView1<f64>,
    pv: &ParamVec,
    index: usize,
    tc: Option<&TimeCtx>,
) -> Array1<f64> {
    let mut pp = pv.clone();
    let v0 = pv.values[index];
    let h = fd_step(v0);
    pp.values[index] = v0 + h;
    let gp = p.rhs(u, &pp, tc);
    pp.values[index] = v0 - h;
    let gm = p.rhs(u, &pp, tc);
    (&gp - &gm) / (2.0 * h)
}

/// d_lam q for one parameter index.
pub fn q_param_deriv(
    p: &dyn PdeProblem,
    u: &ArrayView1<f64>,
    pv: &ParamVec,
    index: usize,
    cs: &ConstraintCtx,
) -> Array1<f64> {
    let mut pp = pv.clone();
    let v0 = pv.values[index];
    let h = fd_step(v0);
    pp.values[index] = v0 + h;
    let qp = p.q(u, &pp, cs);
    pp.values[index] = v0 - h;
    let qm = p.q(u, &pp, cs);
    (&qp - &qm) / (2.0 * h)
}

/// FD version of d_u q.
pub fn fd_q_jac_u(
    p: &dyn PdeProblem,
    u: &ArrayView1<f64>,
    pv: &ParamVec,
    cs: &ConstraintCtx,
) -> Array2<f64> {
    let n = u.len();
    let nq = p.n_q();
    let mut work = u.to_owned();
    let mut jac = Array2::<f64>::zeros((nq, n));
    for j in 0..n {
        let h = fd_step(u[j]);
        work[j] = u[j] + h;
        let qp = p.q(&work.view(), pv, cs);
        work[j] = u[j] - h;
        let qm = p.q(&work.view(), pv, cs);
        work[j] = u[j];
        for i in 0..nq {
            jac[[i, j]] = (qp[i] - qm[i]) / (2.0 * h);
        }
    }
    jac
}

pub fn q_jac_u(
    p: &dyn PdeProblem,
    u: &ArrayView1<f64>,
    pv: &ParamVec,
    cs: &ConstraintCtx,
) -> Array2<f64> {
    p.q_jac_u(u, pv, cs).unwrap_or_else(|| fd_q_jac_u(p, u, pv, cs))
}

/// FD fallback for the directional second derivative d_u(G_u phi); with
/// `adjoint` it differentiates G_u^T phi instead.
pub fn spjac_fd(
    p: &dyn PdeProblem,
    u: &ArrayView1<f64>,
    pv: &ParamVec,
    phi: &ArrayView1<f64>,
    adjoint: bool,
) -> Array2<f64> {
    let n = u.len();
    let mut work = u.to_owned();
    let mut out = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let h = fd_step(u[j]);
        work[j] = u[j] + h;
        let jp = jacobian(p, &work.view(), pv, None);
        work[j] = u[j] - h;
        let jm = jacobian(p, &work.view(), pv, None);
        work[j] = u[j];
        let dj = (&jp - &jm) / (2.0 * h);
        let col = if adjoint { dj.t().dot(phi) } else { dj.dot(phi) };
        out.column_mut(j).assign(&col);
    }
    out
}

pub fn spjac(
    p: &dyn PdeProblem,
    u: &ArrayView1<f64>,
    pv: &ParamVec,
    phi: &ArrayView1<f64>,
    adjoint: bool,
) -> Array2<f64> {
    p.spjac(u, pv, phi, adjoint)
        .unwrap_or_else(|| spjac_fd(p, u, pv, phi, adjoint))
}

/// Largest relative discrepancy between two matrices, with its location.
fn max_rel_discrepancy(a: &Array2<f64>, b: &Array2<f64>) -> (f64, (usize, usize)) {
    let scale = a.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-12);
    let mut worst = (0.0, (0, 0));
    for ((i, j), &av) in a.indexed_iter() {
        let d = (av - b[[i, j]]).abs() / scale;
        if d > worst.0 {
            worst = (d, (i, j));
        }
    }
    worst
}

#[derive(Debug, Clone)]
pub struct DerivCheck {
    pub max_rel: f64,
    pub location: (usize, usize),
    pub pass: bool,
}

/// Comparison report of analytic hooks against finite differences.
#[derive(Debug, Clone, Default)]
pub struct DerivReport {
    pub jac: Option<DerivCheck>,
    pub q_jac: Option<DerivCheck>,
    pub spjac: Option<DerivCheck>,
    pub spjac_adjoint: Option<DerivCheck>,
}

impl DerivReport {
    pub fn pass(&self) -> bool {
        [&self.jac, &self.q_jac, &self.spjac, &self.spjac_adjoint]
            .iter()
            .all(|c| c.as_ref().map(|c| c.pass).unwrap_or(true))
    }
}

pub const DERIV_CHECK_TOL: f64 = 1e-4;

/// Check every analytic derivative hook the problem provides against finite
/// differences at (u, lam). Hooks that are absent are skipped.
pub fn check_derivatives(p: &dyn PdeProblem, u: &ArrayView1<f64>, pv: &ParamVec) -> DerivReport {
    let cs = ConstraintCtx::default();
    let mut report = DerivReport::default();
    if let Some(aj) = p.jac(u, pv, None) {
        let fd = fd_jacobian(p, u, pv, None);
        let (max_rel, location) = max_rel_discrepancy(&aj, &fd);
        report.jac = Some(DerivCheck { max_rel, location, pass: max_rel <= DERIV_CHECK_TOL });
    }
    if p.n_q() > 0 {
        if let Some(aq) = p.q_jac_u(u, pv, &cs) {
            let fd = fd_q_jac_u(p, u, pv, &cs);
            let (max_rel, location) = max_rel_discrepancy(&aq, &fd);
            report.q_jac = Some(DerivCheck { max_rel, location, pass: max_rel <= DERIV_CHECK_TOL });
        }
    }
    // Probe direction for the second-derivative hooks.
    let phi = Array1::from_shape_fn(u.len(), |i| (0.37 * (i as f64 + 1.0)).sin());
    for adjoint in [false, true] {
        if let Some(asp) = p.spjac(u, pv, &phi.view(), adjoint) {
            let fd = spjac_fd(p, u, pv, &phi.view(), adjoint);
            let (max_rel, location) = max_rel_discrepancy(&asp, &fd);
            let check = DerivCheck { max_rel, location, pass: max_rel <= DERIV_CHECK_TOL };
            if adjoint {
                report.spjac_adjoint = Some(check);
            } else {
                report.spjac = Some(check);
            }
        }
    }
    report
}
