//! Dense complex-matrix kernel.
//!
//! Every bipartite operator uses the A-major index convention: the basis
//! vector `|a⟩⊗|b⟩` sits at index `a·d_B + b`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tol;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<Complex64>;
pub type RMatrix = DMatrix<f64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Local dimensions of a two-factor space `A⊗B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FactoredDims {
    pub a: usize,
    pub b: usize,
}

impl FactoredDims {
    pub fn new(a: usize, b: usize) -> Result<Self> {
        if a == 0 || b == 0 {
            return Err(Error::InvalidParameter(format!(
                "factor dimensions must be positive, got ({a}, {b})"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn total(&self) -> usize {
        self.a * self.b
    }

    pub fn swapped(&self) -> Self {
        Self { a: self.b, b: self.a }
    }

    pub fn as_slice(&self) -> [usize; 2] {
        [self.a, self.b]
    }

    fn check(&self, x: &CMatrix) -> Result<()> {
        if x.nrows() != x.ncols() || x.nrows() != self.total() {
            return Err(Error::DimensionMismatch(format!(
                "operator is {}x{}, dims ({}, {}) need {}x{}",
                x.nrows(),
                x.ncols(),
                self.a,
                self.b,
                self.total(),
                self.total()
            )));
        }
        Ok(())
    }
}

/// Which tensor factor an operation addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Factor {
    A,
    B,
}

impl Factor {
    pub fn other(self) -> Self {
        match self {
            Factor::A => Factor::B,
            Factor::B => Factor::A,
        }
    }

    fn position(self) -> usize {
        match self {
            Factor::A => 0,
            Factor::B => 1,
        }
    }
}

/// A square matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix(CMatrix);

impl SquareMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        check_square_finite(&m)?;
        Ok(Self(m))
    }

    pub fn from_row_major(dim: usize, entries: &[C64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for dim {dim}, got {}",
                dim * dim,
                entries.len()
            )));
        }
        Self::new(CMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }

    pub fn tensor(&self, other: &SquareMatrix) -> SquareMatrix {
        SquareMatrix(tensor(&self.0, &other.0))
    }
}

impl AsRef<CMatrix> for SquareMatrix {
    fn as_ref(&self) -> &CMatrix {
        &self.0
    }
}

/// A Hermitian matrix. Inputs within the relative tolerance
/// [`tol::HERM_TOL`] are accepted and stored as their exact Hermitian part.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator(CMatrix);

impl HermitianOperator {
    pub fn new(m: CMatrix) -> Result<Self> {
        check_square_finite(&m)?;
        let dev = hermiticity_deviation(&m);
        if dev > tol::HERM_TOL {
            return Err(Error::NotHermitian(dev));
        }
        Ok(Self(symmetrize(&m)))
    }

    /// `(X + X†)/2` of any square matrix.
    pub fn hermitian_part_of(m: &CMatrix) -> Self {
        Self(symmetrize(m))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = CMatrix::zeros(n, n);
        for (i, v) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(*v, 0.0);
        }
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        trace(&self.0).re
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        eigh(&self.0).0.iter().copied().collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        max_eigenvalue(&self.0)
    }
}

impl AsRef<CMatrix> for HermitianOperator {
    fn as_ref(&self) -> &CMatrix {
        &self.0
    }
}

impl From<HermitianOperator> for SquareMatrix {
    fn from(h: HermitianOperator) -> Self {
        SquareMatrix(h.0)
    }
}

/// A density operator on `A⊗B`.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteState {
    rho: HermitianOperator,
    dims: FactoredDims,
}

impl BipartiteState {
    /// Validates Hermiticity, positivity and unit trace within
    /// [`tol::DENSITY_TOL`].
    pub fn new(rho: CMatrix, dims: FactoredDims) -> Result<Self> {
        dims.check(&rho)?;
        let rho = HermitianOperator::new(rho)?;
        check_density(&rho)?;
        Ok(Self { rho, dims })
    }

    pub fn dims(&self) -> FactoredDims {
        self.dims
    }

    pub fn operator(&self) -> &HermitianOperator {
        &self.rho
    }

    pub fn matrix(&self) -> &CMatrix {
        self.rho.as_matrix()
    }

    /// Reduced state on the given factor.
    pub fn marginal(&self, keep: Factor) -> CMatrix {
        partial_trace(self.matrix(), self.dims, keep.other()).expect("dims validated")
    }
}

/// Checks that `h` is a density operator within [`tol::DENSITY_TOL`].
pub fn check_density(h: &HermitianOperator) -> Result<()> {
    let tr = h.trace();
    if (tr - 1.0).abs() > tol::DENSITY_TOL {
        return Err(Error::NotDensity(format!("trace is {tr}")));
    }
    let lmin = h.min_eigenvalue();
    if lmin < -tol::DENSITY_TOL {
        return Err(Error::NotDensity(format!("minimum eigenvalue {lmin:.3e}")));
    }
    Ok(())
}

fn check_square_finite(m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Err(Error::InvalidParameter("empty matrix".into()));
    }
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// `‖X − X†‖_F / ‖X‖_F`, zero for the zero matrix.
pub fn hermiticity_deviation(m: &CMatrix) -> f64 {
    let nrm = m.norm();
    if nrm == 0.0 {
        return 0.0;
    }
    (m - m.adjoint()).norm() / nrm
}

fn symmetrize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// `(X + X†)/2`.
pub fn hermitian_part(m: &CMatrix) -> HermitianOperator {
    HermitianOperator::hermitian_part_of(m)
}

/// Kronecker product, `(A⊗B)[(i·dB+k),(j·dB+l)] = A[i,j]·B[k,l]`.
pub fn tensor(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Kronecker product of a list of factors, left to right.
pub fn tensor_all(factors: &[&CMatrix]) -> CMatrix {
    let mut out = CMatrix::from_element(1, 1, ONE);
    for f in factors {
        out = out.kronecker(*f);
    }
    out
}

pub fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

pub fn trace(m: &CMatrix) -> C64 {
    m.trace()
}

/// `Tr(X† Y)`.
pub fn frobenius_inner(x: &CMatrix, y: &CMatrix) -> C64 {
    x.dotc(y)
}

/// `Tr(X Y)` without forming the product.
pub fn trace_product(x: &CMatrix, y: &CMatrix) -> C64 {
    let mut s = ZERO;
    for i in 0..x.nrows() {
        for k in 0..x.ncols() {
            s += x[(i, k)] * y[(k, i)];
        }
    }
    s
}

/// `Re Tr(X Y)`, the real pairing of Hermitian operators.
pub fn pair(x: &CMatrix, y: &CMatrix) -> f64 {
    trace_product(x, y).re
}

pub fn frobenius_norm(m: &CMatrix) -> f64 {
    m.norm()
}

/// Singular values in nonincreasing order.
pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Sum of singular values.
///
/// Math: Schatten 1-norm
pub fn trace_norm(m: &CMatrix) -> f64 {
    singular_values(m).iter().sum()
}

/// Largest singular value.
pub fn operator_norm(m: &CMatrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Eigen-decomposition of the Hermitian part of `m`, eigenvalues ascending.
pub fn eigh(m: &CMatrix) -> (DVector<f64>, CMatrix) {
    let h = symmetrize(m);
    let eig = h.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = CMatrix::zeros(n, n);
    for (c, &i) in idx.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    eigh(m).0[0]
}

pub fn max_eigenvalue(m: &CMatrix) -> f64 {
    let v = eigh(m).0;
    v[v.len() - 1]
}

/// `V f(Λ) V†` for the Hermitian part of `m`.
pub fn hermitian_fn(m: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (vals, vecs) = eigh(m);
    let mut scaled = vecs.clone();
    for (c, v) in vals.iter().enumerate() {
        let fv = C64::new(f(*v), 0.0);
        for r in 0..scaled.nrows() {
            scaled[(r, c)] *= fv;
        }
    }
    &scaled * vecs.adjoint()
}

/// Positive part `X₊` of a Hermitian operator.
pub fn positive_part(m: &CMatrix) -> CMatrix {
    hermitian_fn(m, |v| v.max(0.0))
}

/// Projector onto the span of eigenvectors with eigenvalue above `threshold`.
pub fn support_projector(m: &CMatrix, threshold: f64) -> CMatrix {
    hermitian_fn(m, |v| if v > threshold { 1.0 } else { 0.0 })
}

/// Principal square root of the PSD part.
pub fn psd_sqrt(m: &CMatrix) -> CMatrix {
    hermitian_fn(m, |v| v.max(0.0).sqrt())
}

/// `X^{-1/2}` with eigenvalues clamped below at `floor > 0`.
pub fn inv_sqrt_floor(m: &CMatrix, floor: f64) -> CMatrix {
    hermitian_fn(m, |v| 1.0 / v.max(floor).sqrt())
}

/// Nearest PSD matrix in Frobenius norm.
pub fn clip_psd(m: &CMatrix) -> CMatrix {
    positive_part(m)
}

/// `λ_min(X) ≥ −tol·max(1, ‖X‖_∞)`.
pub fn is_psd(x: &HermitianOperator, tol: f64) -> bool {
    is_psd_matrix(x.as_matrix(), tol)
}

/// [`is_psd`] on the Hermitian part of a raw matrix.
pub fn is_psd_matrix(m: &CMatrix, tol: f64) -> bool {
    let vals = eigh(m).0;
    let n = vals.len();
    let scale = vals[0].abs().max(vals[n - 1].abs()).max(1.0);
    vals[0] >= -tol * scale
}

fn digits(mut idx: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for k in (0..dims.len()).rev() {
        out[k] = idx % dims[k];
        idx /= dims[k];
    }
    out
}

fn undigits(ds: &[usize], dims: &[usize]) -> usize {
    ds.iter().zip(dims).fold(0, |acc, (d, n)| acc * n + d)
}

fn check_multi(x: &CMatrix, dims: &[usize]) -> Result<()> {
    let total: usize = dims.iter().product();
    if x.nrows() != total || x.ncols() != total {
        return Err(Error::DimensionMismatch(format!(
            "operator is {}x{}, factor dims {:?} need {total}x{total}",
            x.nrows(),
            x.ncols(),
            dims
        )));
    }
    Ok(())
}

/// Traces out the factors listed in `traced` from an operator on
/// `⊗_k C^{dims[k]}`; the remaining factors keep their order.
pub fn partial_trace_multi(x: &CMatrix, dims: &[usize], traced: &[usize]) -> Result<CMatrix> {
    check_multi(x, dims)?;
    if let Some(&bad) = traced.iter().find(|&&t| t >= dims.len()) {
        return Err(Error::InvalidParameter(format!("no factor {bad} in {dims:?}")));
    }
    let kept: Vec<usize> = (0..dims.len()).filter(|k| !traced.contains(k)).collect();
    let kept_dims: Vec<usize> = kept.iter().map(|&k| dims[k]).collect();
    let tr_dims: Vec<usize> = traced.iter().map(|&k| dims[k]).collect();
    let dk: usize = kept_dims.iter().product();
    let total = x.nrows();
    let mut key = Vec::with_capacity(total);
    for r in 0..total {
        let ds = digits(r, dims);
        let kd: Vec<usize> = kept.iter().map(|&k| ds[k]).collect();
        let td: Vec<usize> = traced.iter().map(|&k| ds[k]).collect();
        key.push((undigits(&kd, &kept_dims), undigits(&td, &tr_dims)));
    }
    let mut out = CMatrix::zeros(dk, dk);
    for r in 0..total {
        let (kr, tr) = key[r];
        for c in 0..total {
            let (kc, tc) = key[c];
            if tr == tc {
                out[(kr, kc)] += x[(r, c)];
            }
        }
    }
    Ok(out)
}

/// `Tr_A X` (a `d_B×d_B` matrix) or `Tr_B X` (`d_A×d_A`).
///
/// Math: reduced density operator of a bipartite state
pub fn partial_trace(x: &CMatrix, dims: FactoredDims, which: Factor) -> Result<CMatrix> {
    dims.check(x)?;
    partial_trace_multi(x, &dims.as_slice(), &[which.position()])
}

/// Reorders tensor factors: output factor `k` is input factor `perm[k]`.
pub fn permute_factors(x: &CMatrix, dims: &[usize], perm: &[usize]) -> Result<CMatrix> {
    check_multi(x, dims)?;
    let mut seen = vec![false; dims.len()];
    if perm.len() != dims.len()
        || perm
            .iter()
            .any(|&p| p >= dims.len() || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::InvalidParameter(format!(
            "{perm:?} is not a permutation of {} factors",
            dims.len()
        )));
    }
    let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let total = x.nrows();
    let map: Vec<usize> = (0..total)
        .map(|r| {
            let ds = digits(r, dims);
            let nd: Vec<usize> = perm.iter().map(|&p| ds[p]).collect();
            undigits(&nd, &new_dims)
        })
        .collect();
    let mut out = CMatrix::zeros(total, total);
    for r in 0..total {
        for c in 0..total {
            out[(map[r], map[c])] = x[(r, c)];
        }
    }
    Ok(out)
}

/// `A⊗B ↦ B⊗A`; the result has dims `dims.swapped()`.
pub fn swap_factors(x: &CMatrix, dims: FactoredDims) -> Result<CMatrix> {
    dims.check(x)?;
    permute_factors(x, &dims.as_slice(), &[1, 0])
}

/// Transpose on the listed factors of a multi-factor operator.
pub fn partial_transpose_multi(x: &CMatrix, dims: &[usize], which: &[usize]) -> Result<CMatrix> {
    check_multi(x, dims)?;
    let total = x.nrows();
    let all: Vec<Vec<usize>> = (0..total).map(|r| digits(r, dims)).collect();
    let mut out = CMatrix::zeros(total, total);
    for r in 0..total {
        for c in 0..total {
            let mut dr = all[r].clone();
            let mut dc = all[c].clone();
            for &k in which {
                std::mem::swap(&mut dr[k], &mut dc[k]);
            }
            out[(undigits(&dr, dims), undigits(&dc, dims))] = x[(r, c)];
        }
    }
    Ok(out)
}

pub fn partial_transpose(x: &CMatrix, dims: FactoredDims, which: Factor) -> Result<CMatrix> {
    dims.check(x)?;
    partial_transpose_multi(x, &dims.as_slice(), &[which.position()])
}

/// Unnormalized maximally entangled vector `Σ_i |i⟩⊗|i⟩` as a projector-like
/// operator `Σ_ij e_ij⊗e_ij`.
pub fn max_entangled_unnormalized(d: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d * d, d * d);
    for i in 0..d {
        for j in 0..d {
            m[(i * d + i, j * d + j)] = ONE;
        }
    }
    m
}

/// The maximally entangled density operator on `C^d⊗C^d`.
pub fn max_entangled(d: usize) -> CMatrix {
    max_entangled_unnormalized(d) / C64::new(d as f64, 0.0)
}

pub fn maximally_mixed(d: usize) -> CMatrix {
    identity(d) / C64::new(d as f64, 0.0)
}

/// Matrix unit `e_ij` of size `d`.
pub fn matrix_unit(d: usize, i: usize, j: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    m[(i, j)] = ONE;
    m
}

/// `|v⟩⟨v|`.
pub fn projector(v: &DVector<C64>) -> CMatrix {
    v * v.adjoint()
}

/// Number of real coordinates of a `d×d` Hermitian matrix.
pub fn hermitian_coord_len(d: usize) -> usize {
    d * d
}

/// Coordinates of a Hermitian matrix in the orthonormal basis
/// `{E_kk} ∪ {(E_kl+E_lk)/√2, i(E_lk−E_kl)/√2 : k<l}`, so that
/// `coords(X)·coords(Y) = Tr(XY)`.
pub fn hermitian_coords(m: &CMatrix) -> Vec<f64> {
    let d = m.nrows();
    let s2 = std::f64::consts::SQRT_2;
    let mut v = Vec::with_capacity(d * d);
    for k in 0..d {
        v.push(m[(k, k)].re);
    }
    for k in 0..d {
        for l in (k + 1)..d {
            let z = (m[(k, l)] + m[(l, k)].conj()) * 0.5;
            v.push(s2 * z.re);
            v.push(-s2 * z.im);
        }
    }
    v
}

/// Inverse of [`hermitian_coords`].
pub fn from_hermitian_coords(d: usize, v: &[f64]) -> CMatrix {
    assert_eq!(v.len(), d * d, "coordinate length");
    let s2 = std::f64::consts::SQRT_2;
    let mut m = CMatrix::zeros(d, d);
    for k in 0..d {
        m[(k, k)] = C64::new(v[k], 0.0);
    }
    let mut p = d;
    for k in 0..d {
        for l in (k + 1)..d {
            let z = C64::new(v[p] / s2, -v[p + 1] / s2);
            m[(k, l)] = z;
            m[(l, k)] = z.conj();
            p += 2;
        }
    }
    m
}

/// The orthonormal Hermitian basis behind [`hermitian_coords`].
pub fn hermitian_basis(d: usize) -> Vec<CMatrix> {
    (0..d * d)
        .map(|i| {
            let mut e = vec![0.0; d * d];
            e[i] = 1.0;
            from_hermitian_coords(d, &e)
        })
        .collect()
}

/// One term `coeff · A⊗B` of an operator-Schmidt decomposition.
#[derive(Debug, Clone)]
pub struct SchmidtTerm {
    pub coeff: f64,
    pub a: CMatrix,
    pub b: CMatrix,
}

/// Relative cutoff below which Hermitian Schmidt terms are dropped.
pub const SCHMIDT_DROP: f64 = 1e-12;

/// Realignment `R[a·d_A+a', b·d_B+b'] = X[a·d_B+b, a'·d_B+b']`, whose singular
/// values are the operator-Schmidt coefficients of `X`.
pub fn realign(x: &CMatrix, dims: FactoredDims) -> Result<CMatrix> {
    dims.check(x)?;
    let (da, db) = (dims.a, dims.b);
    let mut r = CMatrix::zeros(da * da, db * db);
    for a in 0..da {
        for ap in 0..da {
            for b in 0..db {
                for bp in 0..db {
                    r[(a * da + ap, b * db + bp)] = x[(a * db + b, ap * db + bp)];
                }
            }
        }
    }
    Ok(r)
}

/// `X = Σ coeff_j A_j⊗B_j` with Frobenius-orthonormal `{A_j}`, `{B_j}` and
/// nonincreasing coefficients. For Hermitian `X` all factors are Hermitian
/// and terms below `SCHMIDT_DROP·coeff_max` are dropped.
///
/// Math: operator-Schmidt decomposition with Hermitian real/imaginary split
pub fn operator_schmidt(x: &CMatrix, dims: FactoredDims) -> Result<Vec<SchmidtTerm>> {
    dims.check(x)?;
    if hermiticity_deviation(x) <= tol::HERM_TOL {
        return Ok(hermitian_schmidt(x, dims));
    }
    let r = realign(x, dims)?;
    let svd = r.svd(true, true);
    let u = svd.u.expect("requested u");
    let vt = svd.v_t.expect("requested v_t");
    let (da, db) = (dims.a, dims.b);
    let mut terms: Vec<SchmidtTerm> = (0..svd.singular_values.len())
        .map(|j| {
            let a = CMatrix::from_fn(da, da, |i, k| u[(i * da + k, j)]);
            let b = CMatrix::from_fn(db, db, |i, k| vt[(j, i * db + k)]);
            SchmidtTerm {
                coeff: svd.singular_values[j],
                a,
                b,
            }
        })
        .collect();
    terms.sort_by(|p, q| q.coeff.total_cmp(&p.coeff));
    Ok(terms)
}

/// Hermitian decomposition: expand `X = Σ C[k,l] H_k⊗G_l` in orthonormal
/// Hermitian bases (C is real for Hermitian X), then re-orthogonalize via the
/// real SVD of C.
fn hermitian_schmidt(x: &CMatrix, dims: FactoredDims) -> Vec<SchmidtTerm> {
    let (da, db) = (dims.a, dims.b);
    let ha = hermitian_basis(da);
    let mut c = RMatrix::zeros(da * da, db * db);
    for (k, h) in ha.iter().enumerate() {
        // Tr[(H⊗G)X] = Tr[G · Tr_A((H⊗I)X)]
        let y = partial_trace(&(tensor(h, &identity(db)) * x), dims, Factor::A).expect("dims");
        let coords = hermitian_coords(&y.adjoint());
        for (l, v) in coords.iter().enumerate() {
            c[(k, l)] = *v;
        }
    }
    let svd = c.svd(true, true);
    let u = svd.u.expect("requested u");
    let vt = svd.v_t.expect("requested v_t");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let mut terms = Vec::new();
    for j in 0..svd.singular_values.len() {
        let s = svd.singular_values[j];
        if smax == 0.0 || s < SCHMIDT_DROP * smax {
            continue;
        }
        let a = from_hermitian_coords(da, &u.column(j).iter().copied().collect::<Vec<_>>());
        let b = from_hermitian_coords(db, &vt.row(j).iter().copied().collect::<Vec<_>>());
        terms.push(SchmidtTerm { coeff: s, a, b });
    }
    terms.sort_by(|p, q| q.coeff.total_cmp(&p.coeff));
    terms
}

/// `Σ coeff_j A_j⊗B_j`.
pub fn schmidt_reconstruct(terms: &[SchmidtTerm], dims: FactoredDims) -> CMatrix {
    let mut x = CMatrix::zeros(dims.total(), dims.total());
    for t in terms {
        x += tensor(&t.a, &t.b) * C64::new(t.coeff, 0.0);
    }
    x
}

/// Real matrix `[[Re H, −Im H],[Im H, Re H]]`.
pub fn embed_complex(h: &CMatrix) -> RMatrix {
    let n = h.nrows();
    let mut out = RMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i, j + n)] = -z.im;
            out[(i + n, j)] = z.im;
        }
    }
    out
}

pub fn real_to_complex(m: &RMatrix) -> CMatrix {
    m.map(|v| C64::new(v, 0.0))
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Builds a matrix from row-major real parts.
pub fn real_matrix(rows: usize, cols: usize, data: &[f64]) -> CMatrix {
    CMatrix::from_row_slice(rows, cols, &data.iter().map(|v| cr(*v)).collect::<Vec<_>>())
}

pub fn pauli_x() -> CMatrix {
    real_matrix(2, 2, &[0.0, 1.0, 1.0, 0.0])
}

pub fn pauli_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, c(0.0, -1.0), c(0.0, 1.0), ZERO])
}

pub fn pauli_z() -> CMatrix {
    real_matrix(2, 2, &[1.0, 0.0, 0.0, -1.0])
}
