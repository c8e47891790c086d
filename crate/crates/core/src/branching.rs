//! Branch-switching constructors: onto orbit branches from Hopf points
//! (simple and multiple, with a normal-form step estimate), onto traveling
//! waves continued as relative equilibria in the comoving frame, from
//! periodic orbits at multipliers near +-1 (including period doubling with
//! t-mesh doubling), direct orbit guesses without a Hopf point, and the
//! lab-frame period utility for modulated waves.

use crate::c64;
use crate::floquet::{monodromy_eig, PoBifEvent};
use crate::hopf::{variational_blocks, HopfOrbit, HopfTangent, HopfWeights};
use crate::lapack::LuReal;
use crate::linsys::{eigs_near, EigRequest};
use crate::problem::{jacobian, ParamVec, PdeProblem};
use crate::steady::{BranchPoint, SteadyState};
use ndarray::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BranchingError {
    #[error("record carries no critical eigenpair")]
    MissingEigenpair,
    #[error("normal-form estimate failed ({0}); pass an explicit dlam")]
    NormalForm(String),
    #[error("eigenbasis of dimension {found} too small for {wanted} mode coefficients")]
    BasisTooSmall { wanted: usize, found: usize },
    #[error("no traveling mode: wave number must be nonzero")]
    ZeroWaveNumber,
    #[error("no multiplier within 0.2 of {target}; candidates: {candidates}")]
    NoCriticalMultiplier { target: f64, candidates: String },
    #[error("floquet failure: {0}")]
    Floquet(#[from] crate::floquet::FloquetError),
    #[error("eigensolver failure: {0}")]
    Linsys(#[from] crate::linsys::LinsysError),
}

/// Options for switching from a Hopf point onto the orbit branch.
#[derive(Debug, Clone)]
pub struct HoswibraOpts {
    /// Parameter step direction/scale; skips the normal-form estimate.
    pub dlam: Option<f64>,
    /// Amplitude factor; defaults to the normal-form value (or 1 with dlam).
    pub al: Option<f64>,
    /// Number of (uniform) initial t-mesh points.
    pub tl: usize,
    /// FD step for the normal-form estimate.
    pub hodel: f64,
    /// Coefficients over the numerically returned eigenbasis at multiple
    /// Hopf points.
    pub z: Option<Vec<c64>>,
    /// Auxiliary active parameter indices for orbit constraints.
    pub aux: Vec<usize>,
    pub free_t: bool,
    /// Report the predictor residual.
    pub pcheck: bool,
    pub x0i: usize,
}

impl Default for HoswibraOpts {
    fn default() -> Self {
        Self {
            dlam: None,
            al: None,
            tl: 30,
            hodel: 1e-4,
            z: None,
            aux: Vec::new(),
            free_t: true,
            pcheck: false,
            x0i: 0,
        }
    }
}

/// Hopf eigendata (omega > 0 and the complex mode) from a detected point.
pub fn hopf_eigendata(hp: &BranchPoint) -> Result<(f64, Array1<c64>), BranchingError> {
    let crit = hp.critical.as_ref().ok_or(BranchingError::MissingEigenpair)?;
    let omega = crit.value.im.abs();
    if omega <= 0.0 {
        return Err(BranchingError::MissingEigenpair);
    }
    // store the mode rotating as e^{-i omega t} in the predictor convention
    let psi = if crit.value.im > 0.0 {
        crit.vector.mapv(|z| z.conj())
    } else {
        crit.vector.clone()
    };
    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    Ok((omega, psi.mapv(|z| z / norm)))
}

/// Normal-form step data at a simple Hopf point: the eigenvalue crossing
/// speed d Re(mu)/d lambda by finite differences, and the resonant cubic
/// coefficient of the nonlinearity projected on the center eigenspace. The
/// returned dlam is the sign of the parameter offset on the bifurcating
/// side, al the amplitude scale sqrt(|mu_r'/c1|). This is an estimate for
/// semilinear problems; constrained problems should bypass it with an
/// explicit dlam.
pub fn hogetnf(
    prob: &dyn PdeProblem,
    hp: &BranchPoint,
    hodel: f64,
) -> Result<(f64, f64), BranchingError> {
    let crit = hp.critical.as_ref().ok_or(BranchingError::MissingEigenpair)?;
    let mu0 = crit.value;
    let mass = prob.mass_sys();

    // d Re(mu) / d lambda by tracking the eigenvalue across lambda +- hodel
    let eig_at = |lam: f64| -> Result<c64, BranchingError> {
        let mut pv = hp.params.clone();
        pv.set_primary(lam);
        let gu = jacobian(prob, &hp.u.view(), &pv, None);
        let a = gu.mapv(|v| -v);
        let sets = eigs_near(&a.view(), &mass.view(), &EigRequest::single(mu0, 3));
        let pairs = sets.into_iter().next().unwrap()?;
        pairs
            .iter()
            .min_by(|x, y| (x.value - mu0).norm().partial_cmp(&(y.value - mu0).norm()).unwrap())
            .map(|p| p.value)
            .ok_or_else(|| BranchingError::NormalForm("eigenvalue tracking lost the pair".into()))
    };
    let lam_h = hp.params.primary_value();
    let mu_plus = eig_at(lam_h + hodel)?;
    let mu_minus = eig_at(lam_h - hodel)?;
    let mu_r_prime = (mu_plus.re - mu_minus.re) / (2.0 * hodel);
    if !mu_r_prime.is_finite() || mu_r_prime.abs() < 1e-12 {
        return Err(BranchingError::NormalForm(format!(
            "degenerate crossing speed {mu_r_prime:.3e}"
        )));
    }

    // adjoint eigenvector at conj(mu0)
    let gu = jacobian(prob, &hp.u.view(), &hp.params, None);
    let at = gu.t().mapv(|v| -v);
    let sets = eigs_near(&at.view(), &mass.view(), &EigRequest::single(mu0.conj(), 3));
    let pairs = sets.into_iter().next().unwrap()?;
    let adj = pairs
        .iter()
        .min_by(|x, y| {
            (x.value - mu0.conj())
                .norm()
                .partial_cmp(&(y.value - mu0.conj()).norm())
                .unwrap()
        })
        .ok_or_else(|| BranchingError::NormalForm("no adjoint eigenvector".into()))?;
    let phi = &adj.vector;
    let psi = &crit.vector;

    // resonant cubic coefficient by sampling f on the center circle at two
    // radii and extracting the e^{i omega t} Fourier component's eps^3 part
    let mc = mass.mapv(|v| c64::new(v, 0.0));
    let mpsi = mc.dot(psi);
    let denom: c64 = phi.iter().zip(mpsi.iter()).map(|(a, b)| a.conj() * b).sum();
    if denom.norm() < 1e-12 {
        return Err(BranchingError::NormalForm("ill-conditioned projection".into()));
    }
    let g0 = prob.rhs(&hp.u.view(), &hp.params, None);
    let fourier = |eps: f64| -> c64 {
        let nt = 16;
        let mut acc = c64::new(0.0, 0.0);
        for k in 0..nt {
            let th = 2.0 * std::f64::consts::PI * k as f64 / nt as f64;
            let rot = c64::new(0.0, th).exp();
            let dir = psi.mapv(|z| (z * rot).re * 2.0 * eps);
            let up = &hp.u + &dir;
            let g = prob.rhs(&up.view(), &hp.params, None);
            // -(G(u*+w) - G(u*)) is M f(w)-like up to the stiffness part,
            // whose contribution is linear and drops out of the eps^3 fit
            let dg = (&g - &g0).mapv(|v| c64::new(-v, 0.0));
            let proj: c64 = phi.iter().zip(dg.iter()).map(|(a, b)| a.conj() * b).sum();
            acc += proj * rot.conj();
        }
        acc / c64::new(nt as f64, 0.0) / denom
    };
    let eps = hodel.sqrt().max(1e-3);
    let f1 = fourier(eps);
    let f2 = fourier(2.0 * eps);
    let c1 = ((f2 - f1 * 2.0) / (6.0 * eps * eps * eps)).re;
    if !c1.is_finite() || c1.abs() < 1e-10 {
        return Err(BranchingError::NormalForm(format!("cubic coefficient {c1:.3e}")));
    }
    let dlam = -(mu_r_prime * c1).signum();
    let al = (mu_r_prime / c1).abs().sqrt();
    Ok((dlam, al))
}

/// Build the orbit predictor at a Hopf point: a constant base orbit carrying
/// a normalized tangent, so that one arclength step of length ds lands on
/// lambda = lambda_H + ds dlam/nu, u = u0 + 2 al (ds/nu) Re(e^{-i omega T t}
/// Psi), T = 2 pi / omega. With user coefficients z the predictor combines
/// the numerically returned eigenbasis instead.
pub fn hoswibra(
    prob: &dyn PdeProblem,
    hp: &BranchPoint,
    opts: &HoswibraOpts,
) -> Result<HopfOrbit, BranchingError> {
    let (omega, psi1) = hopf_eigendata(hp)?;
    let (dlam, al) = match (opts.dlam, opts.al) {
        (Some(d), a) => (d, a.unwrap_or(1.0)),
        (None, a) => {
            let (d, al_nf) = hogetnf(prob, hp, opts.hodel)?;
            (d, a.unwrap_or(al_nf))
        }
    };

    // predictor mode: single eigenvector, or user combination of the basis
    let mode: Array1<c64> = match &opts.z {
        None => psi1,
        Some(z) => {
            let crit = hp.critical.as_ref().ok_or(BranchingError::MissingEigenpair)?;
            let gu = jacobian(prob, &hp.u.view(), &hp.params, None);
            let a = gu.mapv(|v| -v);
            let sets = eigs_near(
                &a.view(),
                &prob.mass_sys().view(),
                &EigRequest::single(crit.value, z.len().max(2)),
            );
            let pairs = sets.into_iter().next().unwrap()?;
            if pairs.len() < z.len() {
                return Err(BranchingError::BasisTooSmall { wanted: z.len(), found: pairs.len() });
            }
            let n = prob.n_u();
            let mut combined = Array1::<c64>::zeros(n);
            for (zk, pair) in z.iter().zip(pairs.iter()) {
                let norm: f64 = pair.vector.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                // align rotation convention as in hopf_eigendata
                let vec = if pair.value.im > 0.0 {
                    pair.vector.mapv(|v| v.conj() / norm)
                } else {
                    pair.vector.mapv(|v| v / norm)
                };
                combined += &vec.mapv(|v| v * zk);
            }
            combined
        }
    };

    let n_u = prob.n_u();
    let m = opts.tl;
    let mu = m - 1;
    let t: Vec<f64> = (0..m).map(|j| j as f64 / mu as f64).collect();
    let mut params = hp.params.clone();
    params.aux = opts.aux.clone();

    let mut y = Array2::<f64>::zeros((n_u, m));
    for j in 0..m {
        y.column_mut(j).assign(&hp.u);
    }
    let mut orbit = HopfOrbit {
        y,
        t: t.clone(),
        period: 2.0 * std::f64::consts::PI / omega,
        params,
        y0d: Array2::zeros((n_u, m)),
        tau: None,
        weights: HopfWeights::default(),
        y0dsw: 2,
        free_t: opts.free_t,
        x0i: opts.x0i,
    };

    // raw tangent: orbit direction in u, parameter direction dlam
    let mut du = Array2::<f64>::zeros((n_u, mu));
    for j in 0..mu {
        let rot = c64::new(0.0, -2.0 * std::f64::consts::PI * t[j]).exp();
        let col = mode.mapv(|z| 2.0 * al * (z * rot).re);
        du.column_mut(j).assign(&col);
    }
    let nw = orbit.params.n_aux();
    let mut tau = HopfTangent { du, dt_period: 0.0, dlam, dw: vec![0.0; nw] };
    let norm = orbit.ip_norm(&tau);
    tau.du /= norm;
    tau.dlam /= norm;

    // phase anchor from the predictor's analytic time derivative
    let mass = prob.mass_sys();
    for j in 0..mu {
        let rot = c64::new(0.0, -2.0 * std::f64::consts::PI * t[j]).exp();
        let dcol = mode.mapv(|z| {
            let w = z * rot * c64::new(0.0, -2.0 * std::f64::consts::PI);
            2.0 * al * w.re / norm
        });
        orbit.y0d.column_mut(j).assign(&mass.dot(&dcol));
    }
    let first = orbit.y0d.column(0).to_owned();
    orbit.y0d.column_mut(m - 1).assign(&first);

    orbit.tau = Some(tau);
    Ok(orbit)
}

/// Predictor residual at step length ds, for diagnostics.
pub fn predictor_residual(
    prob: &dyn PdeProblem,
    orbit: &HopfOrbit,
    ds: f64,
) -> Result<f64, crate::hopf::HopfError> {
    let mut trial = orbit.clone();
    if let Some(tau) = &orbit.tau {
        trial.step_by(tau, ds);
    }
    let g = crate::hopf::assemble_g(prob, &trial)?;
    Ok(g.iter().fold(0.0f64, |m, &v| m.max(v.abs())))
}

/// Switch a Hopf point with spatial wave number `kwnr` onto the traveling
/// wave branch, continued as a relative equilibrium: returns the comoving
/// steady guess with the frame speed s = omega/kwnr stored at parameter
/// `spar` (and made active). The caller must continue with the problem's
/// translational phase condition and the reference profile set to the guess.
pub fn twswibra(
    prob: &dyn PdeProblem,
    hp: &BranchPoint,
    spar: usize,
    kwnr: f64,
    eps: f64,
    z1: c64,
) -> Result<SteadyState, BranchingError> {
    if kwnr == 0.0 {
        return Err(BranchingError::ZeroWaveNumber);
    }
    let (omega, psi) = hopf_eigendata(hp)?;
    let dir = psi.mapv(|z| 2.0 * (z * z1).re);
    let u = &hp.u + &dir.mapv(|v| eps * v);
    let mut params = hp.params.clone();
    params.values[spar] = omega / kwnr;
    params.aux = vec![spar];
    let _ = prob;
    Ok(SteadyState { u, params })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoSwitchSign {
    PlusOne,
    MinusOne,
    Auto,
}

/// Switch from a periodic-orbit branch point: the critical eigenvector is
/// propagated once around the period to give a tangent predictor; at -1 the
/// t-mesh and period are doubled and the predictor continues antisymmetric
/// over the second half.
pub fn poswibra(
    prob: &dyn PdeProblem,
    event: &PoBifEvent,
    sign: PoSwitchSign,
) -> Result<HopfOrbit, BranchingError> {
    let parent = &event.orbit;
    let n_u = parent.n_u();
    let mu = parent.m_unique();

    // resolve the requested multiplier
    let (gamma, v1) = match sign {
        PoSwitchSign::Auto => (event.gamma, event.v1.clone()),
        PoSwitchSign::PlusOne | PoSwitchSign::MinusOne => {
            let target = if sign == PoSwitchSign::PlusOne { 1.0 } else { -1.0 };
            if (event.gamma - c64::new(target, 0.0)).norm() < 0.2 {
                (event.gamma, event.v1.clone())
            } else {
                // hunt for the requested multiplier directly
                let (vals, vecs) = monodromy_eig(prob, parent)?;
                let mut cand: Vec<(f64, usize)> = vals
                    .iter()
                    .enumerate()
                    .map(|(i, g)| ((g - c64::new(target, 0.0)).norm(), i))
                    .collect();
                cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                // skip the trivial direction when aiming at +1
                let mut pick = None;
                for &(d, i) in &cand {
                    if d > 0.2 {
                        break;
                    }
                    if sign == PoSwitchSign::PlusOne && is_trivial_direction(parent, &vecs.column(i)) {
                        continue;
                    }
                    pick = Some(i);
                    break;
                }
                let i = pick.ok_or_else(|| BranchingError::NoCriticalMultiplier {
                    target,
                    candidates: vals
                        .iter()
                        .take(8)
                        .map(|g| format!("{:.3}{:+.3}i", g.re, g.im))
                        .collect::<Vec<_>>()
                        .join(", "),
                })?;
                let v = vecs.column(i);
                let rn: f64 = v.iter().map(|z| z.re * z.re).sum::<f64>().sqrt();
                (vals[i], v.mapv(|z| z.re / rn))
            }
        }
    };
    let doubling = (gamma + c64::new(1.0, 0.0)).norm() < (gamma - c64::new(1.0, 0.0)).norm();

    // propagate the slice-0 eigenvector around the period
    let (mj, hj) = variational_blocks(prob, parent);
    let mut vs: Vec<Array1<f64>> = Vec::with_capacity(mu);
    vs.push(v1.clone());
    for j in 1..mu {
        let lu = LuReal::new(&mj[j].view())
            .map_err(|_| crate::floquet::FloquetError::BlockSingular { index: j })?;
        let rhs = hj[j].dot(&vs[j - 1]);
        let next = lu
            .solve_mat(&rhs.view().insert_axis(Axis(1)))
            .map_err(|_| crate::floquet::FloquetError::BlockSingular { index: j })?;
        vs.push(next.column(0).to_owned());
    }

    if !doubling {
        let mut du = Array2::<f64>::zeros((n_u, mu));
        for (j, v) in vs.iter().enumerate() {
            du.column_mut(j).assign(v);
        }
        let nw = parent.params.n_aux();
        let mut tau = HopfTangent { du, dt_period: 0.0, dlam: 0.0, dw: vec![0.0; nw] };
        let norm = parent.ip_norm(&tau);
        tau.du /= norm;
        let mut child = parent.clone();
        child.tau = Some(tau);
        child.refresh_y0d(prob);
        Ok(child)
    } else {
        // period doubling: t_new = (t, 1 + t)/2, m doubled, T doubled,
        // predictor (V, -V)
        let m_new = 2 * mu + 1;
        let mut t_new = Vec::with_capacity(m_new);
        for j in 0..mu {
            t_new.push(parent.t[j] / 2.0);
        }
        for j in 0..mu {
            t_new.push(0.5 + parent.t[j] / 2.0);
        }
        t_new.push(1.0);
        let mut y = Array2::<f64>::zeros((n_u, m_new));
        let mut du = Array2::<f64>::zeros((n_u, m_new - 1));
        for j in 0..mu {
            y.column_mut(j).assign(&parent.y.column(j));
            y.column_mut(mu + j).assign(&parent.y.column(j));
            du.column_mut(j).assign(&vs[j]);
            du.column_mut(mu + j).assign(&vs[j].mapv(|v| -v));
        }
        y.column_mut(m_new - 1).assign(&parent.y.column(0));
        let mut child = HopfOrbit {
            y,
            t: t_new,
            period: 2.0 * parent.period,
            params: parent.params.clone(),
            y0d: Array2::zeros((n_u, m_new)),
            tau: None,
            weights: parent.weights,
            y0dsw: parent.y0dsw,
            free_t: parent.free_t,
            x0i: parent.x0i,
        };
        let nw = child.params.n_aux();
        let mut tau = HopfTangent { du, dt_period: 0.0, dlam: 0.0, dw: vec![0.0; nw] };
        let norm = child.ip_norm(&tau);
        tau.du /= norm;
        child.tau = Some(tau);
        child.refresh_y0d(prob);
        Ok(child)
    }
}

fn is_trivial_direction(orbit: &HopfOrbit, v: &ArrayView1<c64>) -> bool {
    let mu = orbit.m_unique();
    let span = orbit.t[1] + (1.0 - orbit.t[mu - 1]);
    let udot = (&orbit.y.column(1) - &orbit.y.column(mu - 1)) / span;
    let mut dot_r = 0.0;
    let mut dot_i = 0.0;
    let mut nv = 0.0;
    let mut nw = 0.0;
    for (a, b) in v.iter().zip(udot.iter()) {
        dot_r += a.re * b;
        dot_i += a.im * b;
        nv += a.norm_sqr();
        nw += b * b;
    }
    let cosang = (dot_r * dot_r + dot_i * dot_i).sqrt() / (nv.sqrt() * nw.sqrt()).max(1e-300);
    cosang.clamp(-1.0, 1.0).acos().to_degrees() < 10.0
}

/// Direct orbit guess without a Hopf point: slices from a user function of
/// scaled time, ready for a fixed-lambda correction.
pub fn poiniguess(
    prob: &dyn PdeProblem,
    t_mesh: Vec<f64>,
    guess: impl Fn(f64) -> Array1<f64>,
    period: f64,
    params: ParamVec,
    free_t: bool,
    x0i: usize,
) -> HopfOrbit {
    let m = t_mesh.len();
    let n_u = prob.n_u();
    let mut y = Array2::<f64>::zeros((n_u, m));
    for (j, &tj) in t_mesh.iter().enumerate() {
        y.column_mut(j).assign(&guess(tj));
    }
    let mut orbit = HopfOrbit {
        y,
        t: t_mesh,
        period,
        params,
        y0d: Array2::zeros((n_u, m)),
        tau: None,
        weights: HopfWeights::default(),
        y0dsw: 2,
        free_t,
        x0i,
    };
    orbit.close();
    orbit.refresh_y0d(prob);
    orbit
}

/// Temporal amplitude of an orbit: the largest over components/nodes of the
/// oscillation range across slices. Near zero flags a degenerate (steady)
/// orbit.
pub fn orbit_amplitude(orbit: &HopfOrbit) -> f64 {
    let mu = orbit.m_unique();
    let mut amp = 0.0f64;
    for i in 0..orbit.n_u() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for j in 0..mu {
            lo = lo.min(orbit.y[[i, j]]);
            hi = hi.max(orbit.y[[i, j]]);
        }
        amp = amp.max(hi - lo);
    }
    amp
}

/// Minimal integers (m, q) with |m s T - q L| <= tol * L and the lab-frame
/// period T* = m T of a modulated traveling wave; None when no resonance is
/// found below the cap.
pub fn lab_frame_period(
    s: f64,
    period: f64,
    domain_len: f64,
    tol: f64,
    m_max: usize,
) -> Option<(usize, usize, f64)> {
    if s == 0.0 || period <= 0.0 {
        return None;
    }
    for m in 1..=m_max {
        let travel = (m as f64) * s.abs() * period;
        let q = (travel / domain_len).round();
        if q >= 1.0 && (travel - q * domain_len).abs() <= tol * domain_len {
            return Some((m, q as usize, m as f64 * period));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn lab_frame_period_examples() {
        let (m, q, tstar) = lab_frame_period(1.0, 2.0 * PI, 2.0 * PI, 1e-9, 64).unwrap();
        assert_eq!((m, q), (1, 1));
        assert!((tstar - 2.0 * PI).abs() < 1e-12);

        let (m, q, tstar) = lab_frame_period(1.0, PI, 2.0 * PI, 1e-9, 64).unwrap();
        assert_eq!((m, q), (2, 1));
        assert!((tstar - 2.0 * PI).abs() < 1e-12);

        assert!(lab_frame_period(0.003, 1.0, 2.0 * PI, 1e-6, 8).is_none());
    }
}
