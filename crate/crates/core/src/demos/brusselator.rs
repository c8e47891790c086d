//! Extended Brusselator: three-component reaction-diffusion system
//!
//!   d_t u = D_u lap u + f(u,v) - c u + d w,
//!   d_t v = D_v lap v + g(u,v),
//!   d_t w = D_w lap w + c u - d w,
//!
//! with f = a - (1+b) u + u^2 v, g = b u - u^2 v, Neumann BC on
//! (-pi/1.4, pi/1.4). The homogeneous state (a, b/a, a c/d) loses stability
//! to wave, Turing, and Hopf modes as b grows, which makes it the workhorse
//! for two-parameter point continuation and for bifurcations from periodic
//! orbits. Analytic directional second derivatives are provided for both.

use crate::fem1d::{assemble_operators, block_expand, build_mesh_sym, BcKind, Mesh1D, Operators};
use crate::problem::{ParamVec, PdeProblem, TimeCtx};
use ndarray::prelude::*;
use std::f64::consts::PI;

pub const P_A: usize = 0;
pub const P_B: usize = 1;
pub const P_C: usize = 2;
pub const P_D: usize = 3;

pub struct BrusselatorProblem {
    mesh: Mesh1D,
    ops: Operators,
    k_sys: Array2<f64>,
    m_sys: Array2<f64>,
}

impl BrusselatorProblem {
    pub fn new(n: usize) -> Self {
        let mesh = build_mesh_sym(PI / 1.4, n, BcKind::Neumann).unwrap();
        let ops = assemble_operators(&mesh);
        let diff = Array2::from_diag(&array![0.01, 0.1, 1.0]);
        let k_sys = block_expand(&ops.stiff.view(), &diff.view());
        let m_sys = block_expand(&ops.mass.view(), &Array2::eye(3).view());
        Self { mesh, ops, k_sys, m_sys }
    }

    /// (a, b, c, d) = (0.95, 2.75, 1, 1); b is the usual primary parameter.
    pub fn default_params(&self) -> ParamVec {
        ParamVec::new(vec![0.95, 2.75, 1.0, 1.0], P_B, vec![]).unwrap()
    }

    /// Spatially homogeneous steady state (a, b/a, a c/d).
    pub fn steady_state(&self, p: &ParamVec) -> Array1<f64> {
        let (a, b, c, d) = (p.values[P_A], p.values[P_B], p.values[P_C], p.values[P_D]);
        let nd = self.mesh.n_dof();
        let mut u = Array1::zeros(3 * nd);
        for i in 0..nd {
            u[i] = a;
            u[nd + i] = b / a;
            u[2 * nd + i] = a * c / d;
        }
        u
    }

    fn nodal_f(&self, u: &ArrayView1<f64>, p: &ParamVec) -> Array1<f64> {
        let (a, b, c, d) = (p.values[P_A], p.values[P_B], p.values[P_C], p.values[P_D]);
        let nd = self.mesh.n_dof();
        let mut f = Array1::zeros(3 * nd);
        for i in 0..nd {
            let (x, y, z) = (u[i], u[nd + i], u[2 * nd + i]);
            f[i] = a - (1.0 + b) * x + x * x * y - c * x + d * z;
            f[nd + i] = b * x - x * x * y;
            f[2 * nd + i] = c * x - d * z;
        }
        f
    }
}

impl PdeProblem for BrusselatorProblem {
    fn name(&self) -> &str {
        "brussel"
    }

    fn n_comp(&self) -> usize {
        3
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

    fn initial_state(&self, p: &ParamVec) -> Array1<f64> {
        self.steady_state(p)
    }

    fn rhs(&self, u: &ArrayView1<f64>, p: &ParamVec, _tc: Option<&TimeCtx>) -> Array1<f64> {
        self.k_sys.dot(u) - self.m_sys.dot(&self.nodal_f(u, p))
    }

    fn jac(&self, u: &ArrayView1<f64>, p: &ParamVec, _tc: Option<&TimeCtx>) -> Option<Array2<f64>> {
        let (b, c, d) = (p.values[P_B], p.values[P_C], p.values[P_D]);
        let nd = self.mesh.n_dof();
        let mut gu = self.k_sys.clone();
        let m = &self.ops.mass;
        // nodal Jacobian of f: 3x3 per node
        for i in 0..nd {
            let (x, y) = (u[i], u[nd + i]);
            let jf = [
                [-(1.0 + b) + 2.0 * x * y - c, x * x, d],
                [b - 2.0 * x * y, -x * x, 0.0],
                [c, 0.0, -d],
            ];
            for bi in 0..3 {
                for bj in 0..3 {
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

    fn spjac(
        &self,
        u: &ArrayView1<f64>,
        _p: &ParamVec,
        phi: &ArrayView1<f64>,
        adjoint: bool,
    ) -> Option<Array2<f64>> {
        let nd = self.mesh.n_dof();
        let n = 3 * nd;
        // Only f and g are nonlinear, with second derivatives
        // f_uu = 2v, f_uv = 2u, g_uu = -2v, g_uv = -2u.
        let mut out = Array2::<f64>::zeros((n, n));
        if !adjoint {
            // d_u(G_u phi) = -M_sys d_u(J_f phi); build the nodal blocks then
            // apply the scalar mass column-wise.
            let m = &self.ops.mass;
            for i in 0..nd {
                let (x, y) = (u[i], u[nd + i]);
                let (p1, p2) = (phi[i], phi[nd + i]);
                // rows: components, cols: (u, v) at node i
                let blk = [
                    [2.0 * y * p1 + 2.0 * x * p2, 2.0 * x * p1],
                    [-2.0 * y * p1 - 2.0 * x * p2, -2.0 * x * p1],
                ];
                for bi in 0..2 {
                    for bj in 0..2 {
                        let s = blk[bi][bj];
                        if s == 0.0 {
                            continue;
                        }
                        for ii in 0..nd {
                            out[[bi * nd + ii, bj * nd + i]] -= m[[ii, i]] * s;
                        }
                    }
                }
            }
        } else {
            // d_u(G_u^T psi) = -d_u(J_f^T M psi), nodal in the weighted vector.
            let w = self.m_sys.dot(phi);
            for i in 0..nd {
                let (x, y) = (u[i], u[nd + i]);
                let (w1, w2) = (w[i], w[nd + i]);
                let blk = [
                    [2.0 * y * w1 - 2.0 * y * w2, 2.0 * x * w1 - 2.0 * x * w2],
                    [2.0 * x * w1 - 2.0 * x * w2, 0.0],
                ];
                for bi in 0..2 {
                    for bj in 0..2 {
                        let s = blk[bi][bj];
                        if s != 0.0 {
                            out[[bi * nd + i, bj * nd + i]] -= s;
                        }
                    }
                }
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{check_derivatives, residual};

    #[test]
    fn homogeneous_state_is_steady() {
        let p = BrusselatorProblem::new(40);
        let pv = p.default_params();
        let us = p.steady_state(&pv);
        let g = residual(&p, &us.view(), &pv, None).unwrap();
        let norm = g.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(norm < 1e-12, "residual {}", norm);
    }

    #[test]
    fn derivative_hooks_match_fd() {
        let p = BrusselatorProblem::new(8);
        let pv = p.default_params();
        let mut u = p.steady_state(&pv);
        for (i, v) in u.iter_mut().enumerate() {
            *v += 0.1 * ((i as f64) * 0.31).sin();
        }
        let report = check_derivatives(&p, &u.view(), &pv);
        assert!(report.pass(), "{:?}", report);
    }
}
