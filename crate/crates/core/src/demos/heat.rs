//! Scalar linear heat problem u_t = u_xx - a u on (-pi, pi), used as a
//! closed-form oracle for eigenvalue, Floquet, and time-integration tests:
//! growth rates are mu_k = -(kappa_k^2 + a).

use crate::fem1d::{assemble_operators, build_mesh_sym, BcKind, Mesh1D, Operators};
use crate::problem::{ParamVec, PdeProblem, TimeCtx};
use ndarray::prelude::*;
use std::f64::consts::PI;

pub const P_A: usize = 0;

pub struct LinearHeatProblem {
    mesh: Mesh1D,
    ops: Operators,
}

impl LinearHeatProblem {
    pub fn new(n: usize) -> Self {
        let mesh = build_mesh_sym(PI, n, BcKind::Neumann).unwrap();
        let ops = assemble_operators(&mesh);
        Self { mesh, ops }
    }

    pub fn default_params(&self) -> ParamVec {
        ParamVec::new(vec![1.0], P_A, vec![]).unwrap()
    }

    /// Continuous growth rate of mode k (wavenumber k/2 on (-pi, pi)).
    pub fn growth_rate(k: usize, a: f64) -> f64 {
        let kappa = k as f64 / 2.0;
        -(kappa * kappa + a)
    }
}

impl PdeProblem for LinearHeatProblem {
    fn name(&self) -> &str {
        "heat"
    }

    fn n_comp(&self) -> usize {
        1
    }

    fn mesh(&self) -> &Mesh1D {
        &self.mesh
    }

    fn ops(&self) -> &Operators {
        &self.ops
    }

    fn mass_sys(&self) -> &Array2<f64> {
        &self.ops.mass
    }

    fn default_params_dyn(&self) -> ParamVec {
        self.default_params()
    }

    fn rhs(&self, u: &ArrayView1<f64>, p: &ParamVec, _tc: Option<&TimeCtx>) -> Array1<f64> {
        self.ops.stiff.dot(u) + p.values[P_A] * self.ops.mass.dot(u)
    }

    fn jac(&self, _u: &ArrayView1<f64>, p: &ParamVec, _tc: Option<&TimeCtx>) -> Option<Array2<f64>> {
        Some(&self.ops.stiff + &(p.values[P_A] * &self.ops.mass))
    }
}
