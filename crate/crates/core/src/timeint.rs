//! Direct time integration of the spatially discretized system from
//! periodic-orbit initial data, as an a-posteriori stability check: a
//! theta-scheme with per-step (chord) Newton, monitoring the sup-norm
//! distance to the starting profile.

use crate::hopf::HopfOrbit;
use crate::lapack::LuReal;
use crate::problem::{ParamVec, PdeProblem, TimeCtx};
use ndarray::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TimeIntError {
    #[error("problem has algebraic rows; not integrable as an initial value problem")]
    NotIntegrable,
    #[error("step Newton failed at t = {t:.4} (residual {residual:.3e})")]
    StepFailed { t: f64, residual: f64 },
    #[error("linear algebra failure: {0}")]
    Linear(#[from] crate::lapack::LapackError),
}

#[derive(Debug, Clone)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    /// e(t) = ||u(t) - u_0||_inf per accepted step.
    pub errors: Vec<f64>,
    /// (time, state) snapshots every `save_every` steps.
    pub snapshots: Vec<(f64, Array1<f64>)>,
}

#[derive(Debug, Clone)]
pub struct TintSettings {
    /// Implicitness: 1/2 trapezoid (default), 1 backward Euler.
    pub theta: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
    pub save_every: usize,
}

impl Default for TintSettings {
    fn default() -> Self {
        Self { theta: 0.5, newton_tol: 1e-9, max_newton: 8, save_every: 100 }
    }
}

/// Integrate M u' = -G(u) from `u0` over `nperiods` periods of the orbit with
/// `npp` steps per period, recording e(t) = ||u(t) - u0||_inf. The Jacobian
/// factorization is reused across steps (chord Newton) and refreshed only
/// when convergence degrades.
pub fn hotintxs(
    prob: &dyn PdeProblem,
    orbit: &HopfOrbit,
    u0: &Array1<f64>,
    npp: usize,
    nperiods: usize,
    settings: &TintSettings,
) -> Result<TimeSeries, TimeIntError> {
    if !prob.algebraic_comps().is_empty() {
        return Err(TimeIntError::NotIntegrable);
    }
    let params = orbit.params.clone();
    let dt = orbit.period / npp as f64;
    let nsteps = npp * nperiods;
    integrate(prob, u0, &params, dt, nsteps, orbit.period, settings)
}

/// Plain integration driver (also used directly by tests): fixed step dt.
pub fn integrate(
    prob: &dyn PdeProblem,
    u0: &Array1<f64>,
    params: &ParamVec,
    dt: f64,
    nsteps: usize,
    period_hint: f64,
    settings: &TintSettings,
) -> Result<TimeSeries, TimeIntError> {
    let mass = prob.mass_sys();
    let theta = settings.theta;
    let mut u = u0.clone();
    let mut t = 0.0;
    let mut series = TimeSeries {
        times: vec![0.0],
        errors: vec![0.0],
        snapshots: vec![(0.0, u.clone())],
    };

    // chord Jacobian: M/dt + theta * G_u, refreshed on slow convergence
    let build_lu = |uref: &Array1<f64>, tref: f64| -> Result<LuReal, TimeIntError> {
        let tc = TimeCtx { t: (tref / period_hint).rem_euclid(1.0), period: period_hint };
        let gu = crate::problem::jacobian(prob, &uref.view(), params, Some(&tc));
        let a = mass.mapv(|v| v / dt) + &gu.mapv(|v| theta * v);
        Ok(LuReal::new(&a.view())?)
    };
    let mut lu = build_lu(&u, 0.0)?;

    for step in 1..=nsteps {
        let t_new = t + dt;
        let tc_old = TimeCtx { t: (t / period_hint).rem_euclid(1.0), period: period_hint };
        let tc_new = TimeCtx { t: (t_new / period_hint).rem_euclid(1.0), period: period_hint };
        let g_old = prob.rhs(&u.view(), params, Some(&tc_old));
        let mut unew = u.clone();
        let mut converged = false;
        for attempt in 0..2 {
            for _ in 0..settings.max_newton {
                let g_new = prob.rhs(&unew.view(), params, Some(&tc_new));
                // residual of M (u_new - u)/dt + theta G(u_new) + (1-theta) G(u) = 0
                let r = &mass.dot(&(&unew - &u)).mapv(|v| v / dt)
                    + &(&g_new.mapv(|v| theta * v) + &g_old.mapv(|v| (1.0 - theta) * v));
                let res = r.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
                if res <= settings.newton_tol {
                    converged = true;
                    break;
                }
                if !res.is_finite() {
                    break;
                }
                let du = lu.solve_vec(&r.mapv(|v| -v).view())?;
                unew += &du;
            }
            if converged {
                break;
            }
            if attempt == 0 {
                // refresh the chord Jacobian once at the current iterate
                lu = build_lu(&unew, t_new)?;
            }
        }
        if !converged {
            let g_new = prob.rhs(&unew.view(), params, Some(&tc_new));
            let r = &mass.dot(&(&unew - &u)).mapv(|v| v / dt)
                + &(&g_new.mapv(|v| theta * v) + &g_old.mapv(|v| (1.0 - theta) * v));
            return Err(TimeIntError::StepFailed {
                t: t_new,
                residual: r.iter().fold(0.0f64, |m, &v| m.max(v.abs())),
            });
        }
        u = unew;
        t = t_new;
        let e = (&u - u0).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        series.times.push(t);
        series.errors.push(e);
        if step % settings.save_every == 0 || step == nsteps {
            series.snapshots.push((t, u.clone()));
        }
    }
    Ok(series)
}
