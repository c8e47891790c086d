//! Kuramoto-Sivashinsky equation on (-2, 2) with periodic BC, written as a
//! two-component second-order system with a singular system mass matrix:
//!
//!   M d_t u1 = K u1 + alpha K u2 - 1/2 Kx(u1^2) + s Kx u1 + eps M 1,
//!   0        = K u1 + M u2,
//!
//! i.e. u2 plays d_x^2 u1 and its rows are algebraic. Translation and boost
//! invariance require a mass constraint (freeing eps) and, away from the
//! trivial state, a translational phase condition (freeing s).

use crate::fem1d::{assemble_operators, block_expand, build_mesh_sym, BcKind, Mesh1D, Operators};
use crate::problem::{ConstraintCtx, ParamVec, PdeProblem, TimeCtx};
use ndarray::prelude::*;

pub const P_ALPHA: usize = 0;
pub const P_MASS: usize = 1;
pub const P_SPEED: usize = 2;
pub const P_EPS: usize = 3;

pub struct KsProblem {
    mesh: Mesh1D,
    ops: Operators,
    m_sys: Array2<f64>,
    /// (1/|Omega|) 1^T M row for the mass functional.
    mass_row: Array1<f64>,
    m_ones: Array1<f64>,
    /// Translational phase condition active (patterned branches only).
    translation_pc: bool,
}

impl KsProblem {
    pub fn new(n: usize) -> Self {
        Self::build(n, false)
    }

    pub fn with_translation_pc(n: usize) -> Self {
        Self::build(n, true)
    }

    fn build(n: usize, translation_pc: bool) -> Self {
        let mesh = build_mesh_sym(2.0, n, BcKind::Periodic).unwrap();
        let ops = assemble_operators(&mesh);
        let pat = array![[1.0, 0.0], [0.0, 0.0]];
        let m_sys = block_expand(&ops.mass.view(), &pat.view());
        let vol = mesh.volume();
        let mass_row = ops.mass.sum_axis(Axis(0)) / vol;
        let m_ones = ops.mass.dot(&Array1::from_elem(mesh.n_dof(), 1.0));
        Self { mesh, ops, m_sys, mass_row, m_ones, translation_pc }
    }

    /// (alpha, m, s, eps) = (0.5, 0, 0, 0); alpha primary, eps freed for the
    /// mass constraint (plus s when the translational condition is active).
    pub fn default_params(&self) -> ParamVec {
        let aux = if self.translation_pc { vec![P_EPS, P_SPEED] } else { vec![P_EPS] };
        ParamVec::new(vec![0.5, 0.0, 0.0, 0.0], P_ALPHA, aux).unwrap()
    }

    /// Steady bifurcations from u = 0 at alpha_k = (2/(k pi))^2.
    pub fn alpha_k(k: usize) -> f64 {
        let v = 2.0 / (k as f64 * std::f64::consts::PI);
        v * v
    }

    pub fn mass_of(&self, u: &ArrayView1<f64>) -> f64 {
        let nd = self.mesh.n_dof();
        (0..nd).map(|i| self.mass_row[i] * u[i]).sum()
    }
}

impl PdeProblem for KsProblem {
    fn name(&self) -> &str {
        "ks"
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

    fn default_params_dyn(&self) -> ParamVec {
        self.default_params()
    }

    fn algebraic_comps(&self) -> &[usize] {
        &[1]
    }

    fn neutral_tol(&self) -> f64 {
        // boost/translation modes sit exactly on the imaginary axis
        1e-8
    }

    fn rhs(&self, u: &ArrayView1<f64>, p: &ParamVec, _tc: Option<&TimeCtx>) -> Array1<f64> {
        let nd = self.mesh.n_dof();
        let (alpha, s, eps) = (p.values[P_ALPHA], p.values[P_SPEED], p.values[P_EPS]);
        let u1 = u.slice(s![..nd]);
        let u2 = u.slice(s![nd..]);
        let k = &self.ops.stiff;
        let kx = &self.ops.adv;
        let m = &self.ops.mass;
        let u1sq = u1.mapv(|v| v * v);
        let mut g = Array1::zeros(2 * nd);
        let g1 = -(k.dot(&u1) + alpha * k.dot(&u2)) + 0.5 * kx.dot(&u1sq) - s * kx.dot(&u1)
            - eps * &self.m_ones;
        let g2 = -(k.dot(&u1) + m.dot(&u2));
        g.slice_mut(s![..nd]).assign(&g1);
        g.slice_mut(s![nd..]).assign(&g2);
        g
    }

    fn jac(&self, u: &ArrayView1<f64>, p: &ParamVec, _tc: Option<&TimeCtx>) -> Option<Array2<f64>> {
        let nd = self.mesh.n_dof();
        let (alpha, s) = (p.values[P_ALPHA], p.values[P_SPEED]);
        let k = &self.ops.stiff;
        let kx = &self.ops.adv;
        let m = &self.ops.mass;
        let mut j = Array2::zeros((2 * nd, 2 * nd));
        for jj in 0..nd {
            for ii in 0..nd {
                j[[ii, jj]] = -k[[ii, jj]] + kx[[ii, jj]] * u[jj] - s * kx[[ii, jj]];
                j[[ii, nd + jj]] = -alpha * k[[ii, jj]];
                j[[nd + ii, jj]] = -k[[ii, jj]];
                j[[nd + ii, nd + jj]] = -m[[ii, jj]];
            }
        }
        Some(j)
    }

    fn n_q(&self) -> usize {
        if self.translation_pc {
            2
        } else {
            1
        }
    }

    fn q(&self, u: &ArrayView1<f64>, p: &ParamVec, cs: &ConstraintCtx) -> Array1<f64> {
        let nd = self.mesh.n_dof();
        let q1 = self.mass_of(&u.view()) - p.values[P_MASS];
        if !self.translation_pc {
            return array![q1];
        }
        let q2 = match &cs.u_ref {
            Some(uref) => {
                let dref = self.ops.adv.dot(&uref.slice(s![..nd]));
                dref.dot(&u.slice(s![..nd])) - dref.dot(&uref.slice(s![..nd]))
            }
            None => 0.0,
        };
        array![q1, q2]
    }

    fn q_jac_u(&self, _u: &ArrayView1<f64>, _p: &ParamVec, cs: &ConstraintCtx) -> Option<Array2<f64>> {
        let nd = self.mesh.n_dof();
        let nq = self.n_q();
        let mut rows = Array2::zeros((nq, 2 * nd));
        for i in 0..nd {
            rows[[0, i]] = self.mass_row[i];
        }
        if self.translation_pc {
            if let Some(uref) = &cs.u_ref {
                let dref = self.ops.adv.dot(&uref.slice(s![..nd]));
                for i in 0..nd {
                    rows[[1, i]] = dref[i];
                }
            }
        }
        Some(rows)
    }

    fn n_qh(&self) -> usize {
        self.n_q()
    }

    fn qh(&self, y: &ArrayView2<f64>, _tmesh: &[f64], p: &ParamVec, cs: &ConstraintCtx) -> Array1<f64> {
        let mut total = Array1::zeros(self.n_qh());
        for col in y.columns() {
            let qs = self.q(&col, p, cs);
            total += &qs;
        }
        total
    }

    fn qh_jac_u(
        &self,
        y: &ArrayView2<f64>,
        _tmesh: &[f64],
        p: &ParamVec,
        cs: &ConstraintCtx,
    ) -> Option<Array2<f64>> {
        let nu = 2 * self.mesh.n_dof();
        let mslices = y.ncols();
        let nqh = self.n_qh();
        let mut rows = Array2::zeros((nqh, mslices * nu));
        for j in 0..mslices {
            let per = self.q_jac_u(&y.column(j), p, cs)?;
            rows.slice_mut(s![.., j * nu..(j + 1) * nu]).assign(&per);
        }
        Some(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::check_derivatives;

    #[test]
    fn trivial_state_is_steady() {
        let p = KsProblem::new(40);
        let pv = p.default_params();
        let g = p.rhs(&Array1::zeros(p.n_u()).view(), &pv, None);
        assert!(g.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn alpha_oracle() {
        assert!((KsProblem::alpha_k(1) - 0.4052847345693511).abs() < 1e-12);
        assert!((KsProblem::alpha_k(2) - 0.10132118364233778).abs() < 1e-12);
    }

    #[test]
    fn jacobian_matches_fd() {
        let p = KsProblem::new(16);
        let pv = p.default_params();
        let u = Array1::from_shape_fn(p.n_u(), |i| 0.4 * ((i as f64) * 0.37).sin());
        let report = check_derivatives(&p, &u.view(), &pv);
        assert!(report.pass(), "{:?}", report);
    }

    #[test]
    fn boost_symmetry_residual_identity() {
        // shifting u1 by a constant c maps the rhs onto the one with s -> s - c
        let p = KsProblem::new(20);
        let mut pv = p.default_params();
        pv.values[P_SPEED] = 0.3;
        let nd = p.mesh().n_dof();
        let u = Array1::from_shape_fn(2 * nd, |i| 0.5 * ((i as f64) * 0.23).cos());
        let c = 0.7;
        let mut shifted = u.clone();
        for i in 0..nd {
            shifted[i] += c;
        }
        let g_shifted = p.rhs(&shifted.view(), &pv, None);
        let mut pv2 = pv.clone();
        pv2.values[P_SPEED] = pv.values[P_SPEED] - c;
        let g_boosted = p.rhs(&u.view(), &pv2, None);
        let err = (&g_shifted - &g_boosted).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(err < 1e-12, "boost identity defect {}", err);
    }
}
