//! Cubic-quintic complex Ginzburg-Landau equation as a 2-component real
//! system on (-pi, pi):
//!
//!   d_t u1 = lap u1 + r u1 - nu u2 - (u1^2+u2^2)(c3 u1 - mu u2) - c5 (u1^2+u2^2)^2 u1
//!   d_t u2 = lap u2 + d^2 nu u1 + r u2 - (u1^2+u2^2)(mu u1 + c3 u2) - c5 (...)^2 u2
//!
//! Parameters (r, nu, mu, c3, c5[, delta, s]); r is the usual continuation
//! parameter. The periodic variant carries the frame-speed advection term
//! s * d_x u used to continue traveling waves as relative equilibria.

use crate::fem1d::{assemble_operators, block_expand, build_mesh_sym, BcKind, Mesh1D, Operators};
use crate::problem::{ConstraintCtx, ParamVec, PdeProblem, TimeCtx};
use ndarray::prelude::*;
use std::f64::consts::PI;

pub const P_R: usize = 0;
pub const P_NU: usize = 1;
pub const P_MU: usize = 2;
pub const P_C3: usize = 3;
pub const P_C5: usize = 4;
pub const P_DELTA: usize = 5;
pub const P_SPEED: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CglBc {
    Neumann,
    Dirichlet,
    Periodic,
}

pub struct CglProblem {
    name: String,
    mesh: Mesh1D,
    ops: Operators,
    k_sys: Array2<f64>,
    m_sys: Array2<f64>,
    kx_sys: Option<Array2<f64>>,
    bc: CglBc,
    /// Spatial-translation phase condition (periodic BC only), freeing the
    /// frame speed s; used for standing-wave selection and TW continuation.
    translation_pc: bool,
}

impl CglProblem {
    pub fn new(bc: CglBc, n: usize) -> Self {
        let kind = match bc {
            CglBc::Neumann => BcKind::Neumann,
            CglBc::Dirichlet => BcKind::Dirichlet,
            CglBc::Periodic => BcKind::Periodic,
        };
        let mesh = build_mesh_sym(PI, n, kind).unwrap();
        let ops = assemble_operators(&mesh);
        let id2 = Array2::eye(2);
        let k_sys = block_expand(&ops.stiff.view(), &id2.view());
        let m_sys = block_expand(&ops.mass.view(), &id2.view());
        let kx_sys = (bc == CglBc::Periodic).then(|| block_expand(&ops.adv.view(), &id2.view()));
        let name = match bc {
            CglBc::Neumann => "cgl",
            CglBc::Dirichlet => "cgl-dirichlet",
            CglBc::Periodic => "cglpbc",
        };
        Self { name: name.to_string(), mesh, ops, k_sys, m_sys, kx_sys, bc, translation_pc: false }
    }

    /// Periodic variant with the translational phase condition active.
    pub fn periodic_tw(n: usize) -> Self {
        let mut p = Self::new(CglBc::Periodic, n);
        p.translation_pc = true;
        p
    }

    fn translation_row(&self, uref: &Array1<f64>) -> Array1<f64> {
        // <d_x u_ref, u> summed over components, via the advection matrix
        let nd = self.mesh.n_dof();
        let kx = &self.ops.adv;
        let mut row = Array1::zeros(2 * nd);
        for c in 0..2 {
            let dref = kx.dot(&uref.slice(s![c * nd..(c + 1) * nd]));
            row.slice_mut(s![c * nd..(c + 1) * nd]).assign(&dref);
        }
        row
    }

    pub fn neumann(n: usize) -> Self {
        Self::new(CglBc::Neumann, n)
    }

    pub fn periodic(n: usize) -> Self {
        Self::new(CglBc::Periodic, n)
    }

    /// Default parameters (r, nu, mu, c3, c5) = (0, 1, 0.1, -1, 1); the
    /// periodic variant appends (delta, s) = (1, 0).
    pub fn default_params(&self) -> ParamVec {
        let values = if self.bc == CglBc::Periodic {
            vec![0.0, 1.0, 0.1, -1.0, 1.0, 1.0, 0.0]
        } else {
            vec![0.0, 1.0, 0.1, -1.0, 1.0]
        };
        ParamVec::new(values, P_R, vec![]).unwrap()
    }

    pub fn n_dof(&self) -> usize {
        self.mesh.n_dof()
    }

    /// Hopf points from u = 0 sit at r = kappa^2 for the admissible wave
    /// numbers kappa = k/2 on (-pi, pi).
    pub fn hbp_location(k: usize) -> f64 {
        let kappa = k as f64 / 2.0;
        kappa * kappa
    }

    /// Wave-train amplitude |R|^2 and frequency for wavenumber k: the
    /// branches of |R|^2 = -c3/(2 c5) +- sqrt(c3^2/(4 c5^2) + r - k^2) with
    /// omega = nu - mu |R|^2. `upper` picks the +(large-amplitude) branch.
    pub fn wavetrain(p: &ParamVec, k: f64, upper: bool) -> Option<(f64, f64)> {
        let (r, nu, mu, c3, c5) = (p.values[P_R], p.values[P_NU], p.values[P_MU], p.values[P_C3], p.values[P_C5]);
        let disc = c3 * c3 / (4.0 * c5 * c5) + r - k * k;
        if disc < 0.0 {
            return None;
        }
        let base = -c3 / (2.0 * c5);
        let rsq = if upper { base + disc.sqrt() } else { base - disc.sqrt() };
        if rsq < 0.0 {
            return None;
        }
        Some((rsq, nu - mu * rsq))
    }

    fn nodal_f(&self, u: &ArrayView1<f64>, p: &ParamVec) -> Array1<f64> {
        let nd = self.mesh.n_dof();
        let (r, nu, mu, c3, c5) = (p.values[P_R], p.values[P_NU], p.values[P_MU], p.values[P_C3], p.values[P_C5]);
        let d2 = if self.bc == CglBc::Periodic { p.values[P_DELTA] * p.values[P_DELTA] } else { 1.0 };
        let mut f = Array1::<f64>::zeros(2 * nd);
        for i in 0..nd {
            let (u1, u2) = (u[i], u[nd + i]);
            let ua = u1 * u1 + u2 * u2;
            f[i] = r * u1 - nu * u2 - ua * (c3 * u1 - mu * u2) - c5 * ua * ua * u1;
            f[nd + i] = d2 * nu * u1 + r * u2 - ua * (mu * u1 + c3 * u2) - c5 * ua * ua * u2;
        }
        f
    }
}

impl PdeProblem for CglProblem {
    fn name(&self) -> &str {
        &self.name
    }

    fn n_comp(&self) -> usize {
        2
    }

    fn mesh(&self) -> &Mesh1D {
        &self.mesh
    }

    fn ops(&self) -> &Operators {
        &self.ops
    }

    fn mass_sys(&self) -> &Array2<f64> {
        &self.m_sys
    }

    fn rhs(&self, u: &ArrayView1<f64>, p: &ParamVec, _tc: Option<&TimeCtx>) -> Array1<f64> {
        let f = self.nodal_f(u, p);
        let mut g = self.k_sys.dot(u) - self.m_sys.dot(&f);
        if let Some(kx) = &self.kx_sys {
            let s = p.values[P_SPEED];
            if s != 0.0 {
                g.scaled_add(-s, &kx.dot(u));
            }
        }
        g
    }

    fn jac(&self, u: &ArrayView1<f64>, p: &ParamVec, _tc: Option<&TimeCtx>) -> Option<Array2<f64>> {
        let nd = self.mesh.n_dof();
        let (r, nu, mu, c3, c5) = (p.values[P_R], p.values[P_NU], p.values[P_MU], p.values[P_C3], p.values[P_C5]);
        let d2 = if self.bc == CglBc::Periodic { p.values[P_DELTA] * p.values[P_DELTA] } else { 1.0 };
        let mut j11 = Array1::<f64>::zeros(nd);
        let mut j12 = Array1::<f64>::zeros(nd);
        let mut j21 = Array1::<f64>::zeros(nd);
        let mut j22 = Array1::<f64>::zeros(nd);
        for i in 0..nd {
            let (u1, u2) = (u[i], u[nd + i]);
            let ua = u1 * u1 + u2 * u2;
            j11[i] = r - 2.0 * u1 * (c3 * u1 - mu * u2) - c3 * ua - c5 * (4.0 * u1 * u1 * ua + ua * ua);
            j12[i] = -nu - 2.0 * u2 * (c3 * u1 - mu * u2) + mu * ua - 4.0 * c5 * ua * u1 * u2;
            j21[i] = d2 * nu - 2.0 * u1 * (mu * u1 + c3 * u2) - mu * ua - 4.0 * c5 * ua * u1 * u2;
            j22[i] = r - 2.0 * u2 * (mu * u1 + c3 * u2) - c3 * ua - c5 * (4.0 * u2 * u2 * ua + ua * ua);
        }
        let mut gu = self.k_sys.clone();
        let m = &self.ops.mass;
        for (bi, bj, col) in [(0, 0, &j11), (0, 1, &j12), (1, 0, &j21), (1, 1, &j22)] {
            let mut blk = gu.slice_mut(s![bi * nd..(bi + 1) * nd, bj * nd..(bj + 1) * nd]);
            for jj in 0..nd {
                let scale = col[jj];
                for ii in 0..nd {
                    blk[[ii, jj]] -= m[[ii, jj]] * scale;
                }
            }
        }
        if let Some(kx) = &self.kx_sys {
            let sp = p.values[P_SPEED];
            if sp != 0.0 {
                gu.scaled_add(-sp, kx);
            }
        }
        Some(gu)
    }

    fn default_params_dyn(&self) -> ParamVec {
        self.default_params()
    }

    fn n_q(&self) -> usize {
        usize::from(self.translation_pc)
    }

    fn q(&self, u: &ArrayView1<f64>, _p: &ParamVec, cs: &ConstraintCtx) -> Array1<f64> {
        if !self.translation_pc {
            return Array1::zeros(0);
        }
        match &cs.u_ref {
            Some(uref) => {
                let row = self.translation_row(uref);
                array![row.dot(u) - row.dot(&uref.view())]
            }
            None => array![0.0],
        }
    }

    fn q_jac_u(&self, _u: &ArrayView1<f64>, _p: &ParamVec, cs: &ConstraintCtx) -> Option<Array2<f64>> {
        if !self.translation_pc {
            return Some(Array2::zeros((0, self.n_u())));
        }
        let mut out = Array2::zeros((1, self.n_u()));
        if let Some(uref) = &cs.u_ref {
            let row = self.translation_row(uref);
            out.row_mut(0).assign(&row);
        }
        Some(out)
    }

    fn n_qh(&self) -> usize {
        usize::from(self.translation_pc)
    }

    fn qh(&self, y: &ArrayView2<f64>, _tmesh: &[f64], _p: &ParamVec, cs: &ConstraintCtx) -> Array1<f64> {
        if !self.translation_pc {
            return Array1::zeros(0);
        }
        match &cs.u_ref {
            Some(uref) => {
                let row = self.translation_row(uref);
                let total: f64 = y.columns().into_iter().map(|col| row.dot(&col)).sum();
                array![total - y.ncols() as f64 * row.dot(&uref.view())]
            }
            None => array![0.0],
        }
    }

    fn qh_jac_u(
        &self,
        y: &ArrayView2<f64>,
        _tmesh: &[f64],
        _p: &ParamVec,
        cs: &ConstraintCtx,
    ) -> Option<Array2<f64>> {
        if !self.translation_pc {
            return Some(Array2::zeros((0, y.ncols() * self.n_u())));
        }
        let nu = self.n_u();
        let mut out = Array2::zeros((1, y.ncols() * nu));
        if let Some(uref) = &cs.u_ref {
            let row = self.translation_row(uref);
            for j in 0..y.ncols() {
                out.slice_mut(s![0, j * nu..(j + 1) * nu]).assign(&row);
            }
        }
        Some(out)
    }
}
