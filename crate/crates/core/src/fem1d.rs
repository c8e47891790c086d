//! 1D P1 finite elements: meshes on (-l, l) and the scalar operator matrices
//! (mass, stiffness, first derivative, boundary terms) every problem builds on,
//! including the fill/drop transforms for periodic boundary conditions.
//!
//! Element integrals are closed-form, so mass and stiffness are exact for P1
//! hat functions. Dirichlet conditions are imposed by a stiff-spring penalty
//! folded into the working stiffness matrix; eigenvalue tests have to ignore
//! the resulting O(penalty) modes.

use ndarray::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("half-length must be positive, got {0}")]
    BadLength(f64),
    #[error("need at least 2 intervals, got {0}")]
    BadIntervals(usize),
    #[error("periodic BC must be set on both endpoints")]
    MixedPeriodic,
}

/// Boundary condition at one endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BcKind {
    Neumann,
    Dirichlet,
    Robin { q: f64, g: f64 },
    Periodic,
}

/// Uniform 1D mesh on (-l, l) with per-endpoint boundary conditions.
#[derive(Debug, Clone)]
pub struct Mesh1D {
    pub points: Vec<f64>,
    pub bc_left: BcKind,
    pub bc_right: BcKind,
}

impl Mesh1D {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn half_length(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn spacing(&self) -> f64 {
        self.points[1] - self.points[0]
    }

    pub fn is_periodic(&self) -> bool {
        self.bc_left == BcKind::Periodic
    }

    /// Domain measure |Omega| = 2l.
    pub fn volume(&self) -> f64 {
        2.0 * self.half_length()
    }

    /// Number of unknowns per component: n_p - 1 under periodic BC, else n_p.
    pub fn n_dof(&self) -> usize {
        if self.is_periodic() {
            self.n_points() - 1
        } else {
            self.n_points()
        }
    }
}

/// Scalar operator matrices for a mesh. Under periodic BC the working
/// matrices `mass`, `stiff`, `adv` act on the reduced grid (last point
/// identified with the first) and `fill`/`drop` translate between grids.
#[derive(Debug, Clone)]
pub struct Operators {
    /// Working mass matrix (reduced under pBC).
    pub mass: Array2<f64>,
    /// Working stiffness matrix including boundary terms.
    pub stiff: Array2<f64>,
    /// Working first-derivative (advection) matrix.
    pub adv: Array2<f64>,
    /// Boundary-condition matrix on the full grid (penalty/Robin entries).
    pub bc_q: Array2<f64>,
    /// Boundary load from Robin data g (full grid).
    pub bc_load: Array1<f64>,
    /// Maps reduced vectors to the full grid (periodic only).
    pub fill: Option<Array2<f64>>,
    /// Drops the redundant last point (periodic only); drop * fill = I.
    pub drop: Option<Array2<f64>>,
}

pub const DIRICHLET_PENALTY_FACTOR: f64 = 1e3;

/// Build a uniform mesh with n intervals (n+1 points) on (-l, l).
pub fn build_mesh(l: f64, n: usize, bc_left: BcKind, bc_right: BcKind) -> Result<Mesh1D, FemError> {
    if !(l > 0.0) {
        return Err(FemError::BadLength(l));
    }
    if n < 2 {
        return Err(FemError::BadIntervals(n));
    }
    if (bc_left == BcKind::Periodic) != (bc_right == BcKind::Periodic) {
        return Err(FemError::MixedPeriodic);
    }
    let h = 2.0 * l / n as f64;
    let points = (0..=n).map(|i| -l + h * i as f64).collect();
    Ok(Mesh1D { points, bc_left, bc_right })
}

/// Convenience for the common symmetric-BC case.
pub fn build_mesh_sym(l: f64, n: usize, bc: BcKind) -> Result<Mesh1D, FemError> {
    build_mesh(l, n, bc, bc)
}

/// Assemble exact P1 mass, stiffness and advection matrices, fold boundary
/// terms into the stiffness, and produce fill/drop plus reduced operators for
/// periodic meshes.
pub fn assemble_operators(mesh: &Mesh1D) -> Operators {
    let np = mesh.n_points();
    let mut mass = Array2::<f64>::zeros((np, np));
    let mut stiff = Array2::<f64>::zeros((np, np));
    let mut adv = Array2::<f64>::zeros((np, np));

    for e in 0..np - 1 {
        let h = mesh.points[e + 1] - mesh.points[e];
        let me = [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
        let ke = [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]];
        let ae = [[-0.5, 0.5], [-0.5, 0.5]];
        for a in 0..2 {
            for b in 0..2 {
                mass[[e + a, e + b]] += me[a][b];
                stiff[[e + a, e + b]] += ke[a][b];
                adv[[e + a, e + b]] += ae[a][b];
            }
        }
    }

    let mut bc_q = Array2::<f64>::zeros((np, np));
    let mut bc_load = Array1::<f64>::zeros(np);
    let kmax = stiff.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let penalty = DIRICHLET_PENALTY_FACTOR * kmax;
    for (idx, bc) in [(0usize, mesh.bc_left), (np - 1, mesh.bc_right)] {
        match bc {
            BcKind::Neumann | BcKind::Periodic => {}
            BcKind::Dirichlet => {
                bc_q[[idx, idx]] = penalty;
            }
            BcKind::Robin { q, g } => {
                bc_q[[idx, idx]] = q;
                bc_load[idx] = g;
            }
        }
    }

    if mesh.is_periodic() {
        let nr = np - 1;
        let mut fill = Array2::<f64>::zeros((np, nr));
        for i in 0..nr {
            fill[[i, i]] = 1.0;
        }
        fill[[np - 1, 0]] = 1.0;
        let mut drop = Array2::<f64>::zeros((nr, np));
        for i in 0..nr {
            drop[[i, i]] = 1.0;
        }
        // Galerkin transform sums the seam contributions, which is the correct
        // weak form on the circle.
        let trafo = |a: &Array2<f64>| fill.t().dot(a).dot(&fill);
        Operators {
            mass: trafo(&mass),
            stiff: trafo(&stiff),
            adv: trafo(&adv),
            bc_q,
            bc_load,
            fill: Some(fill),
            drop: Some(drop),
        }
    } else {
        Operators {
            stiff: &stiff + &bc_q,
            mass,
            adv,
            bc_q,
            bc_load,
            fill: None,
            drop: None,
        }
    }
}

/// Kronecker-style expansion of a scalar operator to an N-component system
/// matrix: block (i, j) = pattern[i, j] * op, components stored block-wise.
pub fn block_expand(op: &ArrayView2<f64>, pattern: &ArrayView2<f64>) -> Array2<f64> {
    let n = op.nrows();
    let nc = pattern.nrows();
    assert_eq!(op.ncols(), n, "scalar operator must be square");
    assert_eq!(pattern.ncols(), nc, "pattern must be square");
    let mut out = Array2::<f64>::zeros((nc * n, nc * n));
    for bi in 0..nc {
        for bj in 0..nc {
            let c = pattern[[bi, bj]];
            if c == 0.0 {
                continue;
            }
            let mut blk = out.slice_mut(s![bi * n..(bi + 1) * n, bj * n..(bj + 1) * n]);
            blk.scaled_add(c, op);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lapack::eig_real;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn mesh_spacing_matches() {
        let m = build_mesh_sym(PI, 30, BcKind::Neumann).unwrap();
        assert_eq!(m.n_points(), 31);
        assert_abs_diff_eq!(m.spacing(), PI / 15.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m.points[0], -PI, epsilon = 1e-14);
        assert_abs_diff_eq!(m.points[30], PI, epsilon = 1e-14);
    }

    #[test]
    fn tiny_mesh_points() {
        let m = build_mesh_sym(1.0, 2, BcKind::Neumann).unwrap();
        assert_eq!(m.points, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn periodic_mesh_drops_last() {
        let m = build_mesh_sym(2.0, 4, BcKind::Periodic).unwrap();
        assert_eq!(m.n_points(), 5);
        assert_eq!(m.n_dof(), 4);
        let ops = assemble_operators(&m);
        assert_eq!(ops.mass.nrows(), 4);
        let drop = ops.drop.as_ref().unwrap();
        let fill = ops.fill.as_ref().unwrap();
        let prod = drop.dot(fill);
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(prod[[i, j]], if i == j { 1.0 } else { 0.0 }, epsilon = 0.0);
            }
        }
    }

    #[test]
    fn invalid_mesh_args_rejected() {
        assert!(build_mesh_sym(0.0, 10, BcKind::Neumann).is_err());
        assert!(build_mesh_sym(1.0, 1, BcKind::Neumann).is_err());
        assert!(build_mesh(1.0, 4, BcKind::Periodic, BcKind::Neumann).is_err());
    }

    #[test]
    fn mass_sums_to_volume() {
        for bc in [BcKind::Neumann, BcKind::Periodic] {
            let m = build_mesh_sym(2.0, 17, bc).unwrap();
            let ops = assemble_operators(&m);
            assert_abs_diff_eq!(ops.mass.sum(), 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn stiffness_kernel_is_constant() {
        for bc in [BcKind::Neumann, BcKind::Periodic] {
            let m = build_mesh_sym(1.5, 13, bc).unwrap();
            let ops = assemble_operators(&m);
            let ones = Array1::from_elem(ops.stiff.nrows(), 1.0);
            let r = ops.stiff.dot(&ones);
            assert!(r.iter().all(|v| v.abs() < 1e-13), "K*1 = {:?}", r);
            let ra = ops.adv.dot(&ones);
            assert!(ra.iter().all(|v| v.abs() < 1e-13), "Kx*1 = {:?}", ra);
        }
    }

    #[test]
    fn periodic_advection_antisymmetric() {
        let m = build_mesh_sym(2.0, 12, BcKind::Periodic).unwrap();
        let ops = assemble_operators(&m);
        let sum = &ops.adv + &ops.adv.t();
        assert!(sum.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn mass_is_spd() {
        let m = build_mesh_sym(PI, 20, BcKind::Neumann).unwrap();
        let ops = assemble_operators(&m);
        // Cholesky by hand: all pivots positive.
        let mut a = ops.mass.clone();
        let n = a.nrows();
        for k in 0..n {
            assert!(a[[k, k]] > 0.0, "pivot {} nonpositive", k);
            let d = a[[k, k]];
            for i in k + 1..n {
                let f = a[[i, k]] / d;
                for j in k..n {
                    a[[i, j]] -= f * a[[k, j]];
                }
            }
        }
        let asym = (&ops.mass - &ops.mass.t()).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(asym < 1e-15);
    }

    /// Generalized eigenvalues of (K, M) on (-l, l) with Neumann BC against
    /// the exact (k pi / (2 l))^2, via a dense solve + eigensolver oracle.
    fn neumann_laplace_eigs(l: f64, n: usize, count: usize) -> Vec<f64> {
        let m = build_mesh_sym(l, n, BcKind::Neumann).unwrap();
        let ops = assemble_operators(&m);
        let minv_k = crate::lapack::LuReal::new(&ops.mass.view())
            .unwrap()
            .solve_mat(&ops.stiff.view())
            .unwrap();
        let (vals, _) = eig_real(&minv_k.view()).unwrap();
        let mut re: Vec<f64> = vals.iter().map(|z| z.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        re.into_iter().take(count).collect()
    }

    #[test]
    fn laplace_eigenvalues_neumann() {
        let eigs = neumann_laplace_eigs(PI, 30, 3);
        assert!(eigs[0].abs() < 1e-10);
        assert_abs_diff_eq!(eigs[1], 0.25, epsilon = 1e-3);
        assert_abs_diff_eq!(eigs[2], 1.0, epsilon = 5e-3);
    }

    #[test]
    fn laplace_eigenvalue_converges_quadratically() {
        // FEM with consistent mass is superconvergent here; just require >= 2nd order.
        let e1 = (neumann_laplace_eigs(PI, 20, 2)[1] - 0.25).abs();
        let e2 = (neumann_laplace_eigs(PI, 40, 2)[1] - 0.25).abs();
        let e3 = (neumann_laplace_eigs(PI, 80, 2)[1] - 0.25).abs();
        assert!(e2 < e1 / 3.5, "rate check: {} vs {}", e1, e2);
        assert!(e3 < e2 / 3.5, "rate check: {} vs {}", e2, e3);
    }

    #[test]
    fn block_expand_patterns() {
        let m = build_mesh_sym(1.0, 4, BcKind::Neumann).unwrap();
        let ops = assemble_operators(&m);
        let np = ops.mass.nrows();
        let id2 = Array2::eye(2);
        let msys = block_expand(&ops.mass.view(), &id2.view());
        assert_eq!(msys.nrows(), 2 * np);
        assert_abs_diff_eq!(msys.sum(), 2.0 * ops.mass.sum(), epsilon = 1e-12);
        // off-diagonal coupling pattern
        let pat = array![[1.0, 0.5], [1.0, 0.0]];
        let ksys = block_expand(&ops.stiff.view(), &pat.view());
        assert_abs_diff_eq!(ksys[[0, np]], 0.5 * ops.stiff[[0, 0]], epsilon = 1e-14);
        assert_abs_diff_eq!(ksys[[np, 0]], ops.stiff[[0, 0]], epsilon = 1e-14);
        assert_abs_diff_eq!(ksys[[np, np]], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn dirichlet_penalty_on_diagonal() {
        let m = build_mesh_sym(1.0, 8, BcKind::Dirichlet).unwrap();
        let ops = assemble_operators(&m);
        assert!(ops.stiff[[0, 0]] > 1e2);
        assert!(ops.bc_q[[0, 0]] > 1e2);
        assert_eq!(ops.bc_q[[1, 1]], 0.0);
    }

    proptest! {
        #[test]
        fn fill_drop_roundtrip(vals in proptest::collection::vec(-1e3f64..1e3, 6)) {
            let m = build_mesh_sym(1.0, 6, BcKind::Periodic).unwrap();
            let ops = assemble_operators(&m);
            let v = Array1::from_vec(vals);
            let full = ops.fill.as_ref().unwrap().dot(&v);
            let back = ops.drop.as_ref().unwrap().dot(&full);
            prop_assert!(back.iter().zip(v.iter()).all(|(a, b)| a == b));
        }

        #[test]
        fn mass_sum_equals_volume_any_n(n in 2usize..40, l in 0.3f64..5.0) {
            let m = build_mesh_sym(l, n, BcKind::Neumann).unwrap();
            let ops = assemble_operators(&m);
            prop_assert!((ops.mass.sum() - 2.0 * l).abs() < 1e-10 * l.max(1.0));
        }
    }
}
