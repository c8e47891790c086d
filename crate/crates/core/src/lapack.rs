//! Thin safe wrappers around the system LAPACK (via OpenBLAS): dense LU
//! factorization/solve and nonsymmetric eigendecompositions, real and complex.
//!
//! All routines copy into column-major scratch buffers, so callers can stay in
//! ndarray's default row-major layout.

use ndarray::prelude::*;
use num_complex::Complex64 as c64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LapackError {
    #[error("matrix is singular: zero pivot at index {pivot}")]
    Singular { pivot: usize },
    #[error("LAPACK routine {routine} failed with info={info}")]
    Failed { routine: &'static str, info: i32 },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

extern "C" {
    fn dgetrf_(m: *const i32, n: *const i32, a: *mut f64, lda: *const i32, ipiv: *mut i32, info: *mut i32);
    fn dgetrs_(
        trans: *const u8, n: *const i32, nrhs: *const i32, a: *const f64, lda: *const i32,
        ipiv: *const i32, b: *mut f64, ldb: *const i32, info: *mut i32,
    );
    fn dgecon_(
        norm: *const u8, n: *const i32, a: *const f64, lda: *const i32, anorm: *const f64,
        rcond: *mut f64, work: *mut f64, iwork: *mut i32, info: *mut i32,
    );
    fn dgeev_(
        jobvl: *const u8, jobvr: *const u8, n: *const i32, a: *mut f64, lda: *const i32,
        wr: *mut f64, wi: *mut f64, vl: *mut f64, ldvl: *const i32, vr: *mut f64, ldvr: *const i32,
        work: *mut f64, lwork: *const i32, info: *mut i32,
    );
    fn zgeev_(
        jobvl: *const u8, jobvr: *const u8, n: *const i32, a: *mut c64, lda: *const i32,
        w: *mut c64, vl: *mut c64, ldvl: *const i32, vr: *mut c64, ldvr: *const i32,
        work: *mut c64, lwork: *const i32, rwork: *mut f64, info: *mut i32,
    );
    fn dgelsd_(
        m: *const i32, n: *const i32, nrhs: *const i32, a: *mut f64, lda: *const i32,
        b: *mut f64, ldb: *const i32, s: *mut f64, rcond: *const f64, rank: *mut i32,
        work: *mut f64, lwork: *const i32, iwork: *mut i32, info: *mut i32,
    );
}

/// Minimal-norm least-squares solution of a (possibly rank-deficient) square
/// system; the workhorse for consistent systems with structurally redundant
/// rows (conservation identities).
pub fn lsq_solve(a: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Result<Array1<f64>, LapackError> {
    ensure_blas_sane();
    let (m, n) = a.dim();
    if m != n {
        return Err(LapackError::NotSquare { rows: m, cols: n });
    }
    assert_eq!(b.len(), m);
    if n == 0 {
        return Ok(Array1::zeros(0));
    }
    let mut abuf = to_col_major(a);
    let mut bbuf: Vec<f64> = b.to_vec();
    let (mi, ni, one) = (m as i32, n as i32, 1i32);
    let mut sing = vec![0.0f64; n];
    let rcond = 1e-12f64;
    let mut rank = 0i32;
    let mut info = 0i32;
    // workspace query
    let mut wkopt = 0.0f64;
    let mut iwkopt = 0i32;
    let lwork_query = -1i32;
    unsafe {
        dgelsd_(
            &mi, &ni, &one, abuf.as_mut_ptr(), &mi, bbuf.as_mut_ptr(), &mi, sing.as_mut_ptr(),
            &rcond, &mut rank, &mut wkopt, &lwork_query, &mut iwkopt, &mut info,
        )
    };
    if info != 0 {
        return Err(LapackError::Failed { routine: "dgelsd", info });
    }
    let lwork = wkopt as i32;
    let mut work = vec![0.0f64; lwork as usize];
    let mut iwork = vec![0i32; iwkopt.max(1) as usize];
    unsafe {
        dgelsd_(
            &mi, &ni, &one, abuf.as_mut_ptr(), &mi, bbuf.as_mut_ptr(), &mi, sing.as_mut_ptr(),
            &rcond, &mut rank, work.as_mut_ptr(), &lwork, iwork.as_mut_ptr(), &mut info,
        )
    };
    if info != 0 {
        return Err(LapackError::Failed { routine: "dgelsd", info });
    }
    Ok(Array1::from_vec(bbuf))
}

/// OpenBLAS's runtime dispatcher may select AVX-512 kernels that produce
/// wrong results under CPU emulation. Pin a widely-correct kernel set unless
/// the user chose one, and verify a factor/solve round trip once per process.
fn ensure_blas_sane() {
    use std::sync::Once;
    static INIT: Once = Once::new();
    INIT.call_once(|| {
        if std::env::var_os("OPENBLAS_CORETYPE").is_none() {
            std::env::set_var("OPENBLAS_CORETYPE", "HASWELL");
        }
        let n = 32usize;
        let a = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j { 4.0 + 0.1 * i as f64 } else { 1.0 / (1.0 + (i as f64 - j as f64).powi(2)) }
        });
        let b = Array1::from_shape_fn(n, |i| (0.3 * i as f64).cos());
        let lu = LuReal::new_inner(&a.view()).expect("LAPACK dgetrf failed in sanity check");
        let x = lu.solve_vec(&b.view()).expect("LAPACK dgetrs failed in sanity check");
        let res = (&a.dot(&x) - &b).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(
            res < 1e-10,
            "BLAS/LAPACK sanity check failed (residual {res:.2e}); \
             try setting OPENBLAS_CORETYPE to a supported kernel set",
        );
    });
}

fn to_col_major(a: &ArrayView2<f64>) -> Vec<f64> {
    let (m, n) = a.dim();
    let mut v = vec![0.0; m * n];
    for j in 0..n {
        for i in 0..m {
            v[j * m + i] = a[[i, j]];
        }
    }
    v
}

/// One-norm of a matrix already stored column-major.
fn one_norm_cm(a: &[f64], m: usize, n: usize) -> f64 {
    (0..n)
        .map(|j| a[j * m..(j + 1) * m].iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// LU factorization of a real square matrix with partial pivoting.
pub struct LuReal {
    n: usize,
    lu: Vec<f64>, // column-major factors
    ipiv: Vec<i32>,
    anorm: f64,
}

impl LuReal {
    pub fn new(a: &ArrayView2<f64>) -> Result<Self, LapackError> {
        ensure_blas_sane();
        Self::new_inner(a)
    }

    fn new_inner(a: &ArrayView2<f64>) -> Result<Self, LapackError> {
        let (m, n) = a.dim();
        if m != n {
            return Err(LapackError::NotSquare { rows: m, cols: n });
        }
        if n == 0 {
            return Ok(Self { n: 0, lu: Vec::new(), ipiv: Vec::new(), anorm: 0.0 });
        }
        let mut lu = to_col_major(a);
        let anorm = one_norm_cm(&lu, n, n);
        let mut ipiv = vec![0i32; n];
        let mut info = 0i32;
        let ni = n as i32;
        unsafe { dgetrf_(&ni, &ni, lu.as_mut_ptr(), &ni, ipiv.as_mut_ptr(), &mut info) };
        if info > 0 {
            return Err(LapackError::Singular { pivot: info as usize - 1 });
        }
        if info < 0 {
            return Err(LapackError::Failed { routine: "dgetrf", info });
        }
        Ok(Self { n, lu, ipiv, anorm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_vec(&self, b: &ArrayView1<f64>) -> Result<Array1<f64>, LapackError> {
        assert_eq!(b.len(), self.n);
        if self.n == 0 {
            return Ok(Array1::zeros(0));
        }
        let mut x: Vec<f64> = b.to_vec();
        let (ni, one) = (self.n as i32, 1i32);
        let mut info = 0i32;
        unsafe {
            dgetrs_(
                b"N".as_ptr(), &ni, &one, self.lu.as_ptr(), &ni, self.ipiv.as_ptr(),
                x.as_mut_ptr(), &ni, &mut info,
            )
        };
        if info != 0 {
            return Err(LapackError::Failed { routine: "dgetrs", info });
        }
        Ok(Array1::from_vec(x))
    }

    /// Solve for several right-hand sides given as matrix columns.
    pub fn solve_mat(&self, b: &ArrayView2<f64>) -> Result<Array2<f64>, LapackError> {
        assert_eq!(b.nrows(), self.n);
        if self.n == 0 {
            return Ok(Array2::zeros((0, b.ncols())));
        }
        let nrhs = b.ncols();
        let mut x = to_col_major(b);
        let (ni, nr) = (self.n as i32, nrhs as i32);
        let mut info = 0i32;
        unsafe {
            dgetrs_(
                b"N".as_ptr(), &ni, &nr, self.lu.as_ptr(), &ni, self.ipiv.as_ptr(),
                x.as_mut_ptr(), &ni, &mut info,
            )
        };
        if info != 0 {
            return Err(LapackError::Failed { routine: "dgetrs", info });
        }
        let mut out = Array2::zeros((self.n, nrhs));
        for j in 0..nrhs {
            for i in 0..self.n {
                out[[i, j]] = x[j * self.n + i];
            }
        }
        Ok(out)
    }

    /// Reciprocal condition estimate in the one-norm; ~0 means numerically singular.
    pub fn rcond(&self) -> Result<f64, LapackError> {
        if self.n == 0 {
            return Ok(1.0);
        }
        let ni = self.n as i32;
        let mut rcond = 0.0f64;
        let mut work = vec![0.0f64; 4 * self.n];
        let mut iwork = vec![0i32; self.n];
        let mut info = 0i32;
        unsafe {
            dgecon_(
                b"1".as_ptr(), &ni, self.lu.as_ptr(), &ni, &self.anorm, &mut rcond,
                work.as_mut_ptr(), iwork.as_mut_ptr(), &mut info,
            )
        };
        if info != 0 {
            return Err(LapackError::Failed { routine: "dgecon", info });
        }
        Ok(rcond)
    }
}

/// Eigenvalues and right eigenvectors of a real square matrix.
pub fn eig_real(a: &ArrayView2<f64>) -> Result<(Vec<c64>, Array2<c64>), LapackError> {
    ensure_blas_sane();
    let (m, n) = a.dim();
    if m != n {
        return Err(LapackError::NotSquare { rows: m, cols: n });
    }
    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }
    let mut buf = to_col_major(a);
    let ni = n as i32;
    let mut wr = vec![0.0f64; n];
    let mut wi = vec![0.0f64; n];
    let mut vr = vec![0.0f64; n * n];
    let lwork = (8 * n).max(64) as i32;
    let mut work = vec![0.0f64; lwork as usize];
    let mut info = 0i32;
    unsafe {
        dgeev_(
            b"N".as_ptr(), b"V".as_ptr(), &ni, buf.as_mut_ptr(), &ni,
            wr.as_mut_ptr(), wi.as_mut_ptr(), std::ptr::null_mut(), &1,
            vr.as_mut_ptr(), &ni, work.as_mut_ptr(), &lwork, &mut info,
        )
    };
    if info != 0 {
        return Err(LapackError::Failed { routine: "dgeev", info });
    }
    let vals: Vec<c64> = wr.iter().zip(&wi).map(|(&r, &i)| c64::new(r, i)).collect();
    // Unpack dgeev's packed real storage: a conjugate pair occupies two
    // real columns holding Re(v) and Im(v).
    let mut vecs = Array2::<c64>::zeros((n, n));
    let mut j = 0;
    while j < n {
        if wi[j] != 0.0 && j + 1 < n {
            for i in 0..n {
                let re = vr[j * n + i];
                let im = vr[(j + 1) * n + i];
                vecs[[i, j]] = c64::new(re, im);
                vecs[[i, j + 1]] = c64::new(re, -im);
            }
            j += 2;
        } else {
            for i in 0..n {
                vecs[[i, j]] = c64::new(vr[j * n + i], 0.0);
            }
            j += 1;
        }
    }
    Ok((vals, vecs))
}

/// Eigenvalues and right eigenvectors of a complex square matrix.
pub fn eig_complex(a: &ArrayView2<c64>) -> Result<(Vec<c64>, Array2<c64>), LapackError> {
    ensure_blas_sane();
    let (m, n) = a.dim();
    if m != n {
        return Err(LapackError::NotSquare { rows: m, cols: n });
    }
    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }
    let mut buf = vec![c64::new(0.0, 0.0); n * n];
    for j in 0..n {
        for i in 0..n {
            buf[j * n + i] = a[[i, j]];
        }
    }
    let ni = n as i32;
    let mut w = vec![c64::new(0.0, 0.0); n];
    let mut vr = vec![c64::new(0.0, 0.0); n * n];
    let lwork = (4 * n).max(64) as i32;
    let mut work = vec![c64::new(0.0, 0.0); lwork as usize];
    let mut rwork = vec![0.0f64; 2 * n];
    let mut info = 0i32;
    unsafe {
        zgeev_(
            b"N".as_ptr(), b"V".as_ptr(), &ni, buf.as_mut_ptr(), &ni, w.as_mut_ptr(),
            std::ptr::null_mut(), &1, vr.as_mut_ptr(), &ni,
            work.as_mut_ptr(), &lwork, rwork.as_mut_ptr(), &mut info,
        )
    };
    if info != 0 {
        return Err(LapackError::Failed { routine: "zgeev", info });
    }
    let mut vecs = Array2::<c64>::zeros((n, n));
    for j in 0..n {
        for i in 0..n {
            vecs[[i, j]] = vr[j * n + i];
        }
    }
    Ok((w, vecs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lu_solves_identity() {
        let a = Array2::eye(4);
        let b = array![1.0, -2.0, 3.0, 0.5];
        let lu = LuReal::new(&a.view()).unwrap();
        let x = lu.solve_vec(&b.view()).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(x[i], b[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn lu_reports_singular() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        match LuReal::new(&a.view()) {
            Err(LapackError::Singular { .. }) => {}
            other => panic!("expected singular error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn eig_real_known_spectrum() {
        // Rotation-like block: eigenvalues 1 +- 2i, and 3.
        let a = array![[1.0, -2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 3.0]];
        let (vals, vecs) = eig_real(&a.view()).unwrap();
        let mut mods: Vec<f64> = vals.iter().map(|z| z.im.abs()).collect();
        mods.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_abs_diff_eq!(mods[2], 2.0, epsilon = 1e-12);
        // residual check A v = lambda v for each pair
        for (k, &lam) in vals.iter().enumerate() {
            let v = vecs.column(k);
            for i in 0..3 {
                let mut av = c64::new(0.0, 0.0);
                for j in 0..3 {
                    av += a[[i, j]] * v[j];
                }
                let r = av - lam * v[i];
                assert!(r.norm() < 1e-12, "residual {} for eigenvalue {}", r.norm(), lam);
            }
        }
    }

    #[test]
    fn eig_complex_diagonal() {
        let mut a = Array2::<c64>::zeros((2, 2));
        a[[0, 0]] = c64::new(1.0, 1.0);
        a[[1, 1]] = c64::new(-2.0, 0.5);
        let (vals, _) = eig_complex(&a.view()).unwrap();
        let mut got: Vec<(f64, f64)> = vals.iter().map(|z| (z.re, z.im)).collect();
        got.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_abs_diff_eq!(got[0].0, -2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(got[1].1, 1.0, epsilon = 1e-14);
    }
}
