//! Mass-conserving reaction-diffusion toy system
//!
//!   d_t u1 = lap u1 + d2 lap u2 + f(u1, u2),
//!   d_t u2 = lap u2 - f(u1, u2),
//!
//! f = alpha u1 - u1^3 + beta u1 u2, Neumann BC on (-pi, pi). The total mass
//! of u1 + u2 is conserved, so steady continuation carries the mass
//! constraint with beta freed, and periodic orbits carry its time-averaged
//! analogue.

use crate::fem1d::{assemble_operators, block_expand, build_mesh_sym, BcKind, Mesh1D, Operators};
use crate::problem::{ConstraintCtx, ParamVec, PdeProblem, TimeCtx};
use ndarray::prelude::*;
use std::f64::consts::PI;

pub const P_ALPHA: usize = 0;
pub const P_BETA: usize = 1;
pub const P_D2: usize = 2;
pub const P_MASS: usize = 3;

pub struct MassConsProblem {
    mesh: Mesh1D,
    ops: Operators,
    k_sys: Array2<f64>,
    m_sys: Array2<f64>,
    /// Row vector of the discrete mass functional (1/|Omega|) 1^T M.
    mass_row: Array1<f64>,
}

impl MassConsProblem {
    pub fn new(n: usize) -> Self {
        let mesh = build_mesh_sym(PI, n, BcKind::Neumann).unwrap();
        let ops = assemble_operators(&mesh);
        let d2 = 10.0;
        let pat = array![[1.0, d2], [0.0, 1.0]];
        let k_sys = block_expand(&ops.stiff.view(), &pat.view());
        let m_sys = block_expand(&ops.mass.view(), &Array2::eye(2).view());
        let vol = mesh.volume();
        let mass_row = ops.mass.sum_axis(Axis(0)) / vol;
        Self { mesh, ops, k_sys, m_sys, mass_row }
    }

    /// (alpha, beta, d2, m) = (1, 1, 10, 0); alpha primary, beta freed for
    /// the mass constraint.
    pub fn default_params(&self) -> ParamVec {
        let mut values = vec![0.0; 4];
        values[P_ALPHA] = 1.0;
        values[P_BETA] = 1.0;
        values[P_D2] = 10.0;
        values[P_MASS] = 0.0;
        ParamVec::new(values, P_ALPHA, vec![P_BETA]).unwrap()
    }

    /// Homogeneous family u2 = -u1, u1 = -beta/2 +- sqrt(beta^2/4 + alpha).
    pub fn homogeneous_state(&self, p: &ParamVec, plus: bool) -> Array1<f64> {
        let (alpha, beta) = (p.values[P_ALPHA], p.values[P_BETA]);
        let root = (beta * beta / 4.0 + alpha).sqrt();
        let u1 = -beta / 2.0 + if plus { root } else { -root };
        let nd = self.mesh.n_dof();
        let mut u = Array1::zeros(2 * nd);
        for i in 0..nd {
            u[i] = u1;
            u[nd + i] = -u1;
        }
        u
    }

    /// Discrete mass (1/|Omega|) integral of u1 + u2.
    pub fn mass_of(&self, u: &ArrayView1<f64>) -> f64 {
        let nd = self.mesh.n_dof();
        let mut m = 0.0;
        for i in 0..nd {
            m += self.mass_row[i] * (u[i] + u[nd + i]);
        }
        m
    }

    fn nodal_f(&self, u: &ArrayView1<f64>, p: &ParamVec) -> Array1<f64> {
        let (alpha, beta) = (p.values[P_ALPHA], p.values[P_BETA]);
        let nd = self.mesh.n_dof();
        let mut f = Array1::zeros(2 * nd);
        for i in 0..nd {
            let (a, b) = (u[i], u[nd + i]);
            let v = alpha * a - a * a * a + beta * a * b;
            f[i] = v;
            f[nd + i] = -v;
        }
        f
    }
}

impl PdeProblem for MassConsProblem {
    fn name(&self) -> &str {
        "mass-cons"
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

    fn neutral_tol(&self) -> f64 {
        // the conservation mode sits exactly on the imaginary axis
        1e-8
    }

    fn default_params_dyn(&self) -> ParamVec {
        self.default_params()
    }

    fn initial_state(&self, p: &ParamVec) -> Array1<f64> {
        self.homogeneous_state(p, false)
    }

    fn rhs(&self, u: &ArrayView1<f64>, p: &ParamVec, _tc: Option<&TimeCtx>) -> Array1<f64> {
        self.k_sys.dot(u) - self.m_sys.dot(&self.nodal_f(u, p))
    }

    fn jac(&self, u: &ArrayView1<f64>, p: &ParamVec, _tc: Option<&TimeCtx>) -> Option<Array2<f64>> {
        let (alpha, beta) = (p.values[P_ALPHA], p.values[P_BETA]);
        let nd = self.mesh.n_dof();
        let mut gu = self.k_sys.clone();
        let m = &self.ops.mass;
        for i in 0..nd {
            let (a, b) = (u[i], u[nd + i]);
            let fu = alpha - 3.0 * a * a + beta * b;
            let fv = beta * a;
            let jf = [[fu, fv], [-fu, -fv]];
            for bi in 0..2 {
                for bj in 0..2 {
                    let s = jf[bi][bj];
                    if s == 0.0 {
                        continue;
                    }
                    for ii in 0..nd {
                        gu[[bi * nd + ii, bj * nd + i]] -= m[[ii, i]] * s;
                    }
                }
            }
        }
        Some(gu)
    }

    fn n_q(&self) -> usize {
        1
    }

    fn q(&self, u: &ArrayView1<f64>, p: &ParamVec, _cs: &ConstraintCtx) -> Array1<f64> {
        array![self.mass_of(u) - p.values[P_MASS]]
    }

    fn q_jac_u(&self, _u: &ArrayView1<f64>, _p: &ParamVec, _cs: &ConstraintCtx) -> Option<Array2<f64>> {
        let nd = self.mesh.n_dof();
        let mut row = Array2::zeros((1, 2 * nd));
        for i in 0..nd {
            row[[0, i]] = self.mass_row[i];
            row[[0, nd + i]] = self.mass_row[i];
        }
        Some(row)
    }

    fn n_qh(&self) -> usize {
        1
    }

    /// Time-averaged mass over the unique slices; with the arclength system
    /// solved to tolerance this holds pointwise in t as well.
    fn qh(&self, y: &ArrayView2<f64>, _tmesh: &[f64], p: &ParamVec, _cs: &ConstraintCtx) -> Array1<f64> {
        let mut total = 0.0;
        for col in y.columns() {
            total += self.mass_of(&col) - p.values[P_MASS];
        }
        array![total]
    }

    fn qh_jac_u(
        &self,
        y: &ArrayView2<f64>,
        _tmesh: &[f64],
        _p: &ParamVec,
        _cs: &ConstraintCtx,
    ) -> Option<Array2<f64>> {
        let nd = self.mesh.n_dof();
        let mslices = y.ncols();
        let nu = 2 * nd;
        let mut row = Array2::zeros((1, mslices * nu));
        for j in 0..mslices {
            for i in 0..nd {
                row[[0, j * nu + i]] = self.mass_row[i];
                row[[0, j * nu + nd + i]] = self.mass_row[i];
            }
        }
        Some(row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{check_derivatives, residual, ConstraintCtx};

    #[test]
    fn homogeneous_family_is_steady() {
        let p = MassConsProblem::new(30);
        let pv = p.default_params();
        // paper start point: u1 = -1/2 - sqrt(5/4)
        let u = p.homogeneous_state(&pv, false);
        assert!((u[0] - (-0.5 - 1.25f64.sqrt())).abs() < 1e-14);
        let g = residual(&p, &u.view(), &pv, None).unwrap();
        let norm = g.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(norm < 1e-12, "residual {}", norm);
        // and it carries zero total mass
        assert!(p.mass_of(&u.view()).abs() < 1e-14);
    }

    #[test]
    fn discrete_mass_conservation_identity() {
        // The conserved combination annihilates the rhs image: 1^T (G_1 + G_2) = 0.
        let p = MassConsProblem::new(24);
        let pv = p.default_params();
        let nd = p.mesh().n_dof();
        let u = Array1::from_shape_fn(2 * nd, |i| 0.4 * ((i as f64) * 0.7).sin() - 0.3);
        let g = p.rhs(&u.view(), &pv, None);
        let mut s = 0.0;
        for i in 0..nd {
            s += g[i] + g[nd + i];
        }
        assert!(s.abs() < 1e-12, "conservation defect {}", s);
    }

    #[test]
    fn derivative_hooks_match_fd() {
        let p = MassConsProblem::new(10);
        let pv = p.default_params();
        let nd = p.mesh().n_dof();
        let u = Array1::from_shape_fn(2 * nd, |i| 0.3 * ((i as f64) * 0.3).cos() - 0.8);
        let report = check_derivatives(&p, &u.view(), &pv);
        assert!(report.pass(), "{:?}", report);
    }

    #[test]
    fn qh_sums_slice_masses() {
        let p = MassConsProblem::new(8);
        let pv = p.default_params();
        let nd = p.mesh().n_dof();
        let nu = 2 * nd;
        let y = Array2::from_shape_fn((nu, 3), |(i, j)| 0.1 * (i + j) as f64);
        let cs = ConstraintCtx::default();
        let qh = p.qh(&y.view(), &[0.0, 0.3, 0.7], &pv, &cs);
        let direct: f64 = (0..3).map(|j| p.mass_of(&y.column(j))).sum();
        assert!((qh[0] - direct).abs() < 1e-13);
    }
}
