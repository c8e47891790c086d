//! Linear algebra kernels shared by the continuation code: LU solves,
//! bordered systems solved by block elimination with a monolithic fallback,
//! and generalized eigenvalues targeted near user-supplied shifts.
//!
//! Everything is dense; problem sizes here stay small enough that robustness
//! is worth more than sparsity. Complex shifts are handled in split
//! real/imaginary form so a single real factorization kernel serves all
//! solves.

use crate::c64;
use crate::lapack::{self, LapackError, LuReal};
use ndarray::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinsysError {
    #[error(transparent)]
    Lapack(#[from] LapackError),
    #[error("factorization failed at shift {shift}")]
    ShiftFactorization { shift: c64 },
    #[error("core and monolithic factorization both singular")]
    BothSingular,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Relative residual above which block elimination is distrusted and the
/// assembled monolithic system is solved instead.
const BORDER_RESIDUAL_TOL: f64 = 1e-9;
/// Condition estimate beyond which the core factorization is not trusted.
const CORE_RCOND_MIN: f64 = 1e-12;

/// Solve a dense square system; errors carry the zero-pivot index.
pub fn lu_solve(a: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Result<Array1<f64>, LinsysError> {
    let lu = LuReal::new(a)?;
    Ok(lu.solve_vec(b)?)
}

/// Square solve that falls back to a minimal-norm least-squares solution when
/// the matrix is singular or severely ill-conditioned but the system is
/// consistent (structurally redundant rows, e.g. conservation identities).
/// The residual of the returned solution is verified; an inconsistent system
/// still errors out.
pub fn solve_square_robust(
    a: &ArrayView2<f64>,
    b: &ArrayView1<f64>,
) -> Result<Array1<f64>, LinsysError> {
    let direct = match LuReal::new(a) {
        Ok(lu) => match lu.rcond() {
            Ok(rc) if rc > 1e-14 => Some(lu.solve_vec(b)?),
            _ => None,
        },
        Err(crate::lapack::LapackError::Singular { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let x = match direct {
        Some(x) => x,
        None => crate::lapack::lsq_solve(a, b)?,
    };
    let r = &a.dot(&x) - b;
    let anorm = a.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1.0);
    let xnorm = x.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let bnorm = b.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let rnorm = r.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    // the truncated-rank path may leave a machine-level defect in the dead
    // directions; allow it in absolute terms
    let allow = (1e-7 * (anorm * xnorm + bnorm)).max(1e-13 * (1.0 + anorm));
    if !rnorm.is_finite() || rnorm > allow {
        return Err(LinsysError::BothSingular);
    }
    Ok(x)
}

/// Core block of a bordered system. Implementations may exploit structure;
/// `assemble_dense` must produce the same operator for the fallback path.
pub trait CoreSolver {
    fn dim(&self) -> usize;
    fn factor_ok(&self) -> bool;
    fn solve_mat(&self, rhs: &ArrayView2<f64>) -> Result<Array2<f64>, LinsysError>;
    fn apply(&self, x: &ArrayView1<f64>) -> Array1<f64>;
    fn assemble_dense(&self) -> Array2<f64>;
}

/// Dense core backed by an LU factorization.
pub struct DenseCore {
    a: Array2<f64>,
    lu: Option<LuReal>,
    well_conditioned: bool,
}

impl DenseCore {
    pub fn new(a: Array2<f64>) -> Self {
        let lu = LuReal::new(&a.view()).ok();
        let well_conditioned = match &lu {
            Some(f) => f.rcond().map(|r| r > CORE_RCOND_MIN).unwrap_or(false),
            None => false,
        };
        Self { a, lu, well_conditioned }
    }
}

impl CoreSolver for DenseCore {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn factor_ok(&self) -> bool {
        self.lu.is_some() && self.well_conditioned
    }

    fn solve_mat(&self, rhs: &ArrayView2<f64>) -> Result<Array2<f64>, LinsysError> {
        match &self.lu {
            Some(f) => Ok(f.solve_mat(rhs)?),
            None => Err(LinsysError::BothSingular),
        }
    }

    fn apply(&self, x: &ArrayView1<f64>) -> Array1<f64> {
        self.a.dot(x)
    }

    fn assemble_dense(&self) -> Array2<f64> {
        self.a.clone()
    }
}

/// Bordered system [[A, B], [C, D]] (x; y) = (f; g) with a small border.
pub struct BorderedSystem<'a, S: CoreSolver> {
    pub core: &'a S,
    pub b: ArrayView2<'a, f64>,
    pub c: ArrayView2<'a, f64>,
    pub d: ArrayView2<'a, f64>,
    pub f: ArrayView1<'a, f64>,
    pub g: ArrayView1<'a, f64>,
}

impl<'a, S: CoreSolver> BorderedSystem<'a, S> {
    fn check_dims(&self) -> Result<(usize, usize), LinsysError> {
        let n = self.core.dim();
        let k = self.d.nrows();
        if self.b.dim() != (n, k)
            || self.c.dim() != (k, n)
            || self.d.ncols() != k
            || self.f.len() != n
            || self.g.len() != k
        {
            return Err(LinsysError::Dimension(format!(
                "core {}x{}, B {:?}, C {:?}, D {:?}, f {}, g {}",
                n,
                n,
                self.b.dim(),
                self.c.dim(),
                self.d.dim(),
                self.f.len(),
                self.g.len()
            )));
        }
        Ok((n, k))
    }

    fn assemble_monolithic(&self) -> (Array2<f64>, Array1<f64>) {
        let (n, k) = (self.core.dim(), self.d.nrows());
        let mut full = Array2::<f64>::zeros((n + k, n + k));
        full.slice_mut(s![..n, ..n]).assign(&self.core.assemble_dense());
        full.slice_mut(s![..n, n..]).assign(&self.b);
        full.slice_mut(s![n.., ..n]).assign(&self.c);
        full.slice_mut(s![n.., n..]).assign(&self.d);
        let mut rhs = Array1::<f64>::zeros(n + k);
        rhs.slice_mut(s![..n]).assign(&self.f);
        rhs.slice_mut(s![n..]).assign(&self.g);
        (full, rhs)
    }

    fn residual_rel(&self, x: &Array1<f64>, y: &Array1<f64>) -> f64 {
        let r1 = &(&self.core.apply(&x.view()) + &self.b.dot(y)) - &self.f;
        let r2 = &(&self.c.dot(x) + &self.d.dot(y)) - &self.g;
        let num = r1
            .iter()
            .chain(r2.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        let scale = self
            .f
            .iter()
            .chain(self.g.iter())
            .chain(x.iter())
            .chain(y.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        num / (scale + f64::MIN_POSITIVE)
    }
}

/// Solve a bordered system by block elimination on the core, falling back to
/// a monolithic LU when the core is singular, ill-conditioned, or the
/// eliminated solution fails its residual check.
pub fn solve_bordered<S: CoreSolver>(
    sys: &BorderedSystem<'_, S>,
) -> Result<(Array1<f64>, Array1<f64>), LinsysError> {
    let (n, k) = sys.check_dims()?;

    if sys.core.factor_ok() {
        let mut rhs = Array2::<f64>::zeros((n, k + 1));
        rhs.slice_mut(s![.., ..k]).assign(&sys.b);
        rhs.slice_mut(s![.., k]).assign(&sys.f);
        if let Ok(sol) = sys.core.solve_mat(&rhs.view()) {
            let xb = sol.slice(s![.., ..k]);
            let xf = sol.slice(s![.., k]).to_owned();
            let schur = &sys.d - &sys.c.dot(&xb);
            let srhs = &sys.g - &sys.c.dot(&xf);
            if let Ok(slu) = LuReal::new(&schur.view()) {
                if let Ok(y) = slu.solve_vec(&srhs.view()) {
                    let x = &xf - &xb.dot(&y);
                    if x.iter().chain(y.iter()).all(|v| v.is_finite())
                        && sys.residual_rel(&x, &y) <= BORDER_RESIDUAL_TOL
                    {
                        return Ok((x, y));
                    }
                }
            }
        }
    }

    let (full, rhs) = sys.assemble_monolithic();
    let sol = solve_square_robust(&full.view(), &rhs.view())?;
    Ok((sol.slice(s![..n]).to_owned(), sol.slice(s![n..]).to_owned()))
}

/// Shifts near which generalized eigenvalues are requested.
#[derive(Debug, Clone)]
pub struct EigRequest {
    pub shifts: Vec<c64>,
    pub count: usize,
}

impl EigRequest {
    pub fn new(shifts: Vec<c64>, count: usize) -> Self {
        assert!(count >= 1, "eigenvalue count must be at least 1");
        Self { shifts, count }
    }

    pub fn single(shift: c64, count: usize) -> Self {
        Self::new(vec![shift], count)
    }
}

#[derive(Debug, Clone)]
pub struct EigPair {
    pub value: c64,
    pub vector: Array1<c64>,
}

/// Residual bound each returned eigenpair must satisfy.
const EIG_RESIDUAL_TOL: f64 = 1e-8;

fn split_shift_solve(
    a: &ArrayView2<f64>,
    m: &ArrayView2<f64>,
    shift: c64,
) -> Result<(Array2<c64>, c64), LinsysError> {
    let n = a.nrows();
    // (A - sigma M) x = M e_j for all j, in split real/imaginary form.
    // dgetrf reports exact singularity only; a shift sitting on an eigenvalue
    // usually yields a ~1e-16 trailing pivot with info=0, so gate on the
    // condition estimate as well.
    let checked = |lu: LuReal| -> Result<LuReal, LapackError> {
        if lu.rcond()? < 1e-13 {
            Err(LapackError::Singular { pivot: lu.dim() - 1 })
        } else {
            Ok(lu)
        }
    };
    let factor = |sh: c64| -> Result<Array2<c64>, LapackError> {
        if sh.im == 0.0 {
            let smat = a - &(m * sh.re);
            let lu = checked(LuReal::new(&smat.view())?)?;
            let x = lu.solve_mat(m)?;
            Ok(x.mapv(|v| c64::new(v, 0.0)))
        } else {
            let mut big = Array2::<f64>::zeros((2 * n, 2 * n));
            let ams = a - &(m * sh.re);
            big.slice_mut(s![..n, ..n]).assign(&ams);
            big.slice_mut(s![n.., n..]).assign(&ams);
            big.slice_mut(s![..n, n..]).assign(&(m * sh.im));
            big.slice_mut(s![n.., ..n]).assign(&(m * (-sh.im)));
            let lu = checked(LuReal::new(&big.view())?)?;
            let mut rhs = Array2::<f64>::zeros((2 * n, n));
            rhs.slice_mut(s![..n, ..]).assign(m);
            let x = lu.solve_mat(&rhs.view())?;
            let mut c = Array2::<c64>::zeros((n, n));
            for j in 0..n {
                for i in 0..n {
                    c[[i, j]] = c64::new(x[[i, j]], x[[n + i, j]]);
                }
            }
            Ok(c)
        }
    };
    match factor(shift) {
        Ok(c) => Ok((c, shift)),
        Err(LapackError::Singular { .. }) => {
            // Shift sits on an eigenvalue; nudge it off and retry once. The
            // nudge is large enough that the inverted mode does not swamp the
            // accuracy of the remaining eigenvectors.
            let nudged = shift + c64::new(1e-5 * (1.0 + shift.norm()), 0.0);
            factor(nudged)
                .map(|c| (c, nudged))
                .map_err(|_| LinsysError::ShiftFactorization { shift })
        }
        Err(e) => Err(e.into()),
    }
}

/// Generalized eigenvalues of A v = mu M v nearest each shift, by
/// shift-invert: the eigenvalues theta of (A - sigma M)^{-1} M map to
/// mu = sigma + 1/theta. Results per shift are sorted by distance to the
/// shift, ties by real part then imaginary part. M may be singular on
/// algebraic rows; the corresponding infinite eigenvalues are discarded.
pub fn eigs_near(
    a: &ArrayView2<f64>,
    m: &ArrayView2<f64>,
    req: &EigRequest,
) -> Vec<Result<Vec<EigPair>, LinsysError>> {
    req.shifts
        .iter()
        .map(|&shift| eigs_near_single(a, m, shift, req.count))
        .collect()
}

fn eigs_near_single(
    a: &ArrayView2<f64>,
    m: &ArrayView2<f64>,
    shift: c64,
    count: usize,
) -> Result<Vec<EigPair>, LinsysError> {
    let n = a.nrows();
    if a.dim() != (n, n) || m.dim() != (n, n) {
        return Err(LinsysError::Dimension(format!("A {:?}, M {:?}", a.dim(), m.dim())));
    }
    let (c, used_shift) = split_shift_solve(a, m, shift)?;
    let (thetas, vecs) = lapack::eig_complex(&c.view())?;

    // Filter by direct residual in the original pencil before ranking, so
    // inaccurate pairs do not consume requested slots.
    let ac = a.mapv(|v| c64::new(v, 0.0));
    let mc = m.mapv(|v| c64::new(v, 0.0));
    let mut pairs: Vec<EigPair> = Vec::new();
    for (k, &theta) in thetas.iter().enumerate() {
        if theta.norm() < 1e-14 {
            continue; // infinite eigenvalue (algebraic row)
        }
        let value = used_shift + theta.finv();
        let vector = vecs.column(k).to_owned();
        let av = ac.dot(&vector);
        let mv = mc.dot(&vector);
        let mut num = 0.0f64;
        let mut vn = 0.0f64;
        for i in 0..n {
            num += (av[i] - value * mv[i]).norm_sqr();
            vn += vector[i].norm_sqr();
        }
        let scale = 1.0 + value.norm();
        if num.sqrt() <= EIG_RESIDUAL_TOL * scale * vn.sqrt().max(f64::MIN_POSITIVE) {
            pairs.push(EigPair { value, vector });
        }
    }
    pairs.sort_by(|p, q| {
        let dp = (p.value - shift).norm();
        let dq = (q.value - shift).norm();
        dp.partial_cmp(&dq)
            .unwrap()
            .then(p.value.re.partial_cmp(&q.value.re).unwrap())
            .then(p.value.im.partial_cmp(&q.value.im).unwrap())
    });
    pairs.truncate(count.min(pairs.len()));
    Ok(pairs)
}
