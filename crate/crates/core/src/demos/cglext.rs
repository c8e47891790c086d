//! cGL equation with a multiplicative time-periodic forcing of the quintic
//! coefficient,
//!
//!   c5(t, x) = c5* + a tanh(10 ((t - b T) mod T)) sin x,
//!
//! used to exercise non-autonomous periodic orbits and the fixed-period mode
//! (T frozen, dispersion nu freed instead). For a = 0 it reduces exactly to
//! the plain cGL problem.

use crate::fem1d::{assemble_operators, block_expand, build_mesh_sym, BcKind, Mesh1D, Operators};
use crate::problem::{ParamVec, PdeProblem, TimeCtx};
use ndarray::prelude::*;
use std::f64::consts::PI;

pub const P_R: usize = 0;
pub const P_NU: usize = 1;
pub const P_MU: usize = 2;
pub const P_C3: usize = 3;
pub const P_C5: usize = 4;
pub const P_FAMP: usize = 5;
pub const P_FPHASE: usize = 6;

pub struct CglExtProblem {
    mesh: Mesh1D,
    ops: Operators,
    k_sys: Array2<f64>,
    m_sys: Array2<f64>,
    sinx: Array1<f64>,
}

impl CglExtProblem {
    pub fn new(n: usize) -> Self {
        let mesh = build_mesh_sym(PI, n, BcKind::Neumann).unwrap();
        let ops = assemble_operators(&mesh);
        let id2 = Array2::eye(2);
        let k_sys = block_expand(&ops.stiff.view(), &id2.view());
        let m_sys = block_expand(&ops.mass.view(), &id2.view());
        let sinx = Array1::from_iter(mesh.points.iter().map(|&x| x.sin()));
        Self { mesh, ops, k_sys, m_sys, sinx }
    }

    /// (r, nu, mu, c3, c5, a, b) = (0, 1, 0.1, -1, 1, 0.5, 0.5).
    pub fn default_params(&self) -> ParamVec {
        ParamVec::new(vec![0.0, 1.0, 0.1, -1.0, 1.0, 0.5, 0.5], P_R, vec![]).unwrap()
    }

    /// Forcing profile of c5 at scaled time t in [0,1): T-periodic by
    /// construction of the wrapped phase.
    pub fn c5_at(&self, i: usize, p: &ParamVec, tc: Option<&TimeCtx>) -> f64 {
        let c5 = p.values[P_C5];
        let a = p.values[P_FAMP];
        match tc {
            Some(tc) if a != 0.0 => {
                let phase = (tc.t - p.values[P_FPHASE]).rem_euclid(1.0);
                c5 + a * (10.0 * phase * tc.period).tanh() * self.sinx[i]
            }
            _ => c5,
        }
    }
}

impl PdeProblem for CglExtProblem {
    fn name(&self) -> &str {
        "cglext"
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

    fn rhs(&self, u: &ArrayView1<f64>, p: &ParamVec, tc: Option<&TimeCtx>) -> Array1<f64> {
        let nd = self.mesh.n_dof();
        let (r, nu, mu, c3) = (p.values[P_R], p.values[P_NU], p.values[P_MU], p.values[P_C3]);
        let mut f = Array1::zeros(2 * nd);
        for i in 0..nd {
            let (u1, u2) = (u[i], u[nd + i]);
            let ua = u1 * u1 + u2 * u2;
            let c5 = self.c5_at(i, p, tc);
            f[i] = r * u1 - nu * u2 - ua * (c3 * u1 - mu * u2) - c5 * ua * ua * u1;
            f[nd + i] = nu * u1 + r * u2 - ua * (mu * u1 + c3 * u2) - c5 * ua * ua * u2;
        }
        self.k_sys.dot(u) - self.m_sys.dot(&f)
    }

    fn jac(&self, u: &ArrayView1<f64>, p: &ParamVec, tc: Option<&TimeCtx>) -> Option<Array2<f64>> {
        let nd = self.mesh.n_dof();
        let (r, nu, mu, c3) = (p.values[P_R], p.values[P_NU], p.values[P_MU], p.values[P_C3]);
        let mut gu = self.k_sys.clone();
        let m = &self.ops.mass;
        for i in 0..nd {
            let (u1, u2) = (u[i], u[nd + i]);
            let ua = u1 * u1 + u2 * u2;
            let c5 = self.c5_at(i, p, tc);
            let jf = [
                [
                    r - 2.0 * u1 * (c3 * u1 - mu * u2) - c3 * ua - c5 * (4.0 * u1 * u1 * ua + ua * ua),
                    -nu - 2.0 * u2 * (c3 * u1 - mu * u2) + mu * ua - 4.0 * c5 * ua * u1 * u2,
                ],
                [
                    nu - 2.0 * u1 * (mu * u1 + c3 * u2) - mu * ua - 4.0 * c5 * ua * u1 * u2,
                    r - 2.0 * u2 * (mu * u1 + c3 * u2) - c3 * ua - c5 * (4.0 * u2 * u2 * ua + ua * ua),
                ],
            ];
            for bi in 0..2 {
                for bj in 0..2 {
                    let s = jf[bi][bj];
                    for ii in 0..nd {
                        gu[[bi * nd + ii, bj * nd + i]] -= m[[ii, i]] * s;
                    }
                }
            }
        }
        Some(gu)
    }
}
