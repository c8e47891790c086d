//! Canonical system of a distributed optimal-control problem ("optimal
//! pollution"): states v1, v2 (emissions, stock) and co-states l1, l2, with
//! control k = -(1 + l1)/gamma eliminated by the maximum principle:
//!
//!   d_t v1 =  d1 lap v1 + (1 + l1)/gamma,
//!   d_t v2 =  d2 lap v2 + v1 - alpha(v2),
//!   d_t l1 = -d1 lap l1 + rho l1 - p - l2,
//!   d_t l2 = -d2 lap l2 + (rho + alpha'(v2)) l2 + beta,
//!
//! with damage function alpha(v2) = -v2^2/2 and Neumann BC. The backward
//! diffusion makes the system ill-posed as an initial value problem; steady
//! states and Hopf orbits are still perfectly continuable. Half the Floquet
//! multipliers are huge, which is exactly what breaks monodromy-product
//! multiplier computations and motivates the product-free algorithm.
//!
//! The parameter point is chosen so that the spatially homogeneous canonical
//! steady state (-1/8, 1/2, -1, -2) (independent of gamma) undergoes a Hopf
//! bifurcation at gamma = 128/9 with frequency omega = sqrt(1/8).

use crate::fem1d::{assemble_operators, block_expand, build_mesh_sym, BcKind, Mesh1D, Operators};
use crate::problem::{ParamVec, PdeProblem, TimeCtx};
use ndarray::prelude::*;

pub const P_GAMMA: usize = 0;
pub const P_RHO: usize = 1;
pub const P_PRICE: usize = 2;
pub const P_BETA: usize = 3;

pub struct PollutionProblem {
    mesh: Mesh1D,
    ops: Operators,
    k_sys: Array2<f64>,
    m_sys: Array2<f64>,
    mass_row: Array1<f64>,
}

impl PollutionProblem {
    pub fn new(n: usize) -> Self {
        let mesh = build_mesh_sym(1.0, n, BcKind::Neumann).unwrap();
        let ops = assemble_operators(&mesh);
        let (d1, d2) = (1.0, 1.0);
        let diff = Array2::from_diag(&array![d1, d2, -d1, -d2]);
        let k_sys = block_expand(&ops.stiff.view(), &diff.view());
        let m_sys = block_expand(&ops.mass.view(), &Array2::eye(4).view());
        let vol = mesh.volume();
        let mass_row = ops.mass.sum_axis(Axis(0)) / vol;
        Self { mesh, ops, k_sys, m_sys, mass_row }
    }

    /// (gamma, rho, p, beta) = (16, 1, 1, 1); gamma primary.
    pub fn default_params(&self) -> ParamVec {
        ParamVec::new(vec![16.0, 1.0, 1.0, 1.0], P_GAMMA, vec![]).unwrap()
    }

    /// Hopf point of the homogeneous state in gamma, for the default
    /// (rho, p, beta).
    pub fn gamma_hopf() -> f64 {
        128.0 / 9.0
    }

    pub fn omega_hopf() -> f64 {
        (1.0f64 / 8.0).sqrt()
    }

    /// Spatially homogeneous canonical steady state, gamma-independent.
    pub fn css(&self) -> Array1<f64> {
        let nd = self.mesh.n_dof();
        let mut u = Array1::zeros(4 * nd);
        for i in 0..nd {
            u[i] = -0.125;
            u[nd + i] = 0.5;
            u[2 * nd + i] = -1.0;
            u[3 * nd + i] = -2.0;
        }
        u
    }

    /// Local current value J_c = p v1 - beta v2 - C(k), C(k) = k + k^2/(2 gamma).
    fn jc_nodal(&self, u: &ArrayView1<f64>, p: &ParamVec) -> Array1<f64> {
        let nd = self.mesh.n_dof();
        let (gamma, price, beta) = (p.values[P_GAMMA], p.values[P_PRICE], p.values[P_BETA]);
        Array1::from_shape_fn(nd, |i| {
            let (v1, v2, l1) = (u[i], u[nd + i], u[2 * nd + i]);
            let k = -(1.0 + l1) / gamma;
            price * v1 - beta * v2 - (k + k * k / (2.0 * gamma))
        })
    }

    fn nodal_f(&self, u: &ArrayView1<f64>, p: &ParamVec) -> Array1<f64> {
        let nd = self.mesh.n_dof();
        let (gamma, rho, price, beta) =
            (p.values[P_GAMMA], p.values[P_RHO], p.values[P_PRICE], p.values[P_BETA]);
        let mut f = Array1::zeros(4 * nd);
        for i in 0..nd {
            let (v1, v2, l1, l2) = (u[i], u[nd + i], u[2 * nd + i], u[3 * nd + i]);
            // alpha(v2) = -v2^2/2, alpha' = -v2
            f[i] = (1.0 + l1) / gamma;
            f[nd + i] = v1 + v2 * v2 / 2.0;
            f[2 * nd + i] = rho * l1 - price - l2;
            f[3 * nd + i] = (rho - v2) * l2 + beta;
        }
        f
    }
}

impl PdeProblem for PollutionProblem {
    fn name(&self) -> &str {
        "pollution"
    }

    fn n_comp(&self) -> usize {
        4
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

    fn initial_state(&self, _p: &ParamVec) -> Array1<f64> {
        self.css()
    }

    // numerical Jacobians only for this demo

    fn rhs(&self, u: &ArrayView1<f64>, p: &ParamVec, _tc: Option<&TimeCtx>) -> Array1<f64> {
        self.k_sys.dot(u) - self.m_sys.dot(&self.nodal_f(u, p))
    }

    fn objective(&self, u: &ArrayView1<f64>, p: &ParamVec) -> Option<f64> {
        let jc = self.jc_nodal(u, p);
        Some(self.mass_row.dot(&jc))
    }

    fn prefer_monolithic_po(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsys::{eigs_near, EigRequest};
    use crate::problem::residual;
    use num_complex::Complex64 as c64;

    #[test]
    fn css_is_steady_for_any_gamma() {
        let p = PollutionProblem::new(24);
        let mut pv = p.default_params();
        let u = p.css();
        for g in [10.0, PollutionProblem::gamma_hopf(), 20.0] {
            pv.set_primary(g);
            let r = residual(&p, &u.view(), &pv, None).unwrap();
            let norm = r.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            assert!(norm < 1e-12, "gamma={}: residual {}", g, norm);
        }
    }

    #[test]
    fn hopf_pair_crosses_at_gamma_star() {
        let p = PollutionProblem::new(20);
        let mut pv = p.default_params();
        let u = p.css();
        let omega = PollutionProblem::omega_hopf();
        let shift = c64::new(0.0, omega);
        let crit_re = |gamma: f64, pv: &mut ParamVec| -> f64 {
            pv.set_primary(gamma);
            let a = crate::problem::jacobian(&p, &u.view(), pv, None).mapv(|v| -v);
            let sets = eigs_near(&a.view(), &p.mass_sys().view(), &EigRequest::single(shift, 3));
            let pairs = sets[0].as_ref().unwrap();
            pairs
                .iter()
                .min_by(|x, y| x.value.re.abs().partial_cmp(&y.value.re.abs()).unwrap())
                .unwrap()
                .value
                .re
        };
        let gstar = PollutionProblem::gamma_hopf();
        let re_at = crit_re(gstar, &mut pv);
        assert!(re_at.abs() < 1e-6, "Re mu at gamma* = {}", re_at);
        let re_lo = crit_re(gstar - 1.0, &mut pv);
        let re_hi = crit_re(gstar + 1.0, &mut pv);
        assert!(
            re_lo * re_hi < 0.0,
            "no sign change around gamma*: {} vs {}",
            re_lo,
            re_hi
        );
    }

    #[test]
    fn objective_constant_state_matches_pointwise_formula() {
        let p = PollutionProblem::new(16);
        let pv = p.default_params();
        let u = p.css();
        let j = p.objective(&u.view(), &pv).unwrap();
        // constant integrand: average equals the nodal value
        let gamma = pv.values[P_GAMMA];
        let k = -(1.0 + (-1.0)) / gamma; // l1 = -1 => k = 0
        let expected = 1.0 * (-0.125) - 1.0 * 0.5 - (k + k * k / (2.0 * gamma));
        assert!((j - expected).abs() < 1e-10, "{} vs {}", j, expected);
    }
}
