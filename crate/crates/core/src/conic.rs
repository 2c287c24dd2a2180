//! Semidefinite programs over Hermitian matrix variables.
//!
//! A problem is
//!
//! ```text
//! minimize    Σ_v Re Tr(C_v X_v) + c₀
//! subject to  Σ L_e(X) = E₀          (equality constraints)
//!             Σ L_k(X) + Z₀ ⪰ 0      (PSD constraints)
//! ```
//!
//! with dual
//!
//! ```text
//! maximize    Σ ⟨Y_e, E₀⟩ − Σ ⟨Y_k, Z₀⟩ + c₀
//! subject to  Σ L_e*(Y_e) + Σ L_k*(Y_k) = C,  Y_k ⪰ 0.
//! ```
//!
//! Maximization problems are solved as minimization of the negated
//! objective; their dual variables satisfy the constraint with `−C`.
//! Complex PSD constraints enter the real backend through
//! `[[Re Z, −Im Z],[Im Z, Re Z]] ⪰ 0`. Every returned status is re-derived
//! from the iterates: the backend's own label is advisory.

use std::fmt;
use std::sync::Arc;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
    SupportedConeT::{NonnegativeConeT, PSDTriangleConeT, ZeroConeT},
};

use crate::error::{Error, Result};
use crate::linalg::{
    self, embed_complex as embed_raw, from_hermitian_coords, hermitian_basis, hermitian_coords, hermiticity_deviation,
    partial_trace_multi, partial_transpose_multi, permute_factors, tensor, CMatrix, HermitianOperator, RMatrix, C64,
};
use crate::tol;

/// Real constraint rows, right-hand side and per-row complex coefficients.
type LoweredConstraint = (RMatrix, Vec<f64>, Vec<Vec<(usize, CMatrix)>>);

/// `[[Re H, −Im H],[Im H, Re H]]`; PSD exactly when `H` is.
pub fn embed_complex(h: &HermitianOperator) -> RMatrix {
    embed_raw(h.as_matrix())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EqId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PsdId(usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl EqId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl PsdId {
    pub fn index(self) -> usize {
        self.0
    }
}

type CustomFn = Arc<dyn Fn(&CMatrix) -> CMatrix + Send + Sync>;

/// One real-linear step of a [`LinearMap`].
#[derive(Clone)]
pub enum MapStep {
    Scale(f64),
    LeftMul(CMatrix),
    RightMul(CMatrix),
    /// `X ↦ K X K†`.
    Conjugate(CMatrix),
    PartialTrace {
        dims: Vec<usize>,
        traced: Vec<usize>,
    },
    /// `X ↦ I_d ⊗ X`.
    KronLeft(usize),
    /// `X ↦ X ⊗ I_d`.
    KronRight(usize),
    /// `X ↦ M ⊗ X`.
    KronLeftOp(CMatrix),
    /// `X ↦ X ⊗ M`.
    KronRightOp(CMatrix),
    Transpose,
    PartialTranspose {
        dims: Vec<usize>,
        which: Vec<usize>,
    },
    Permute {
        dims: Vec<usize>,
        perm: Vec<usize>,
    },
    /// `X ↦ Tr X` as a `1×1` matrix.
    Trace,
    /// Places `X` at block offset `(row, col)` of a `size×size` zero matrix,
    /// together with `X†` at `(col, row)` when the offsets differ.
    Block {
        size: usize,
        row: usize,
        col: usize,
    },
    Custom(CustomFn),
}

impl fmt::Debug for MapStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapStep::Scale(s) => write!(f, "Scale({s})"),
            MapStep::LeftMul(m) => write!(f, "LeftMul({}x{})", m.nrows(), m.ncols()),
            MapStep::RightMul(m) => write!(f, "RightMul({}x{})", m.nrows(), m.ncols()),
            MapStep::Conjugate(m) => write!(f, "Conjugate({}x{})", m.nrows(), m.ncols()),
            MapStep::PartialTrace { dims, traced } => write!(f, "PartialTrace({dims:?}, {traced:?})"),
            MapStep::KronLeft(d) => write!(f, "KronLeft({d})"),
            MapStep::KronRight(d) => write!(f, "KronRight({d})"),
            MapStep::KronLeftOp(m) => write!(f, "KronLeftOp({}x{})", m.nrows(), m.ncols()),
            MapStep::KronRightOp(m) => write!(f, "KronRightOp({}x{})", m.nrows(), m.ncols()),
            MapStep::Transpose => write!(f, "Transpose"),
            MapStep::PartialTranspose { dims, which } => write!(f, "PartialTranspose({dims:?}, {which:?})"),
            MapStep::Permute { dims, perm } => write!(f, "Permute({dims:?}, {perm:?})"),
            MapStep::Trace => write!(f, "Trace"),
            MapStep::Block { size, row, col } => write!(f, "Block({size}, {row}, {col})"),
            MapStep::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl MapStep {
    fn eval(&self, x: &CMatrix) -> Result<CMatrix> {
        Ok(match self {
            MapStep::Scale(s) => x * C64::new(*s, 0.0),
            MapStep::LeftMul(m) => {
                check_mul(m.ncols(), x.nrows())?;
                m * x
            }
            MapStep::RightMul(m) => {
                check_mul(x.ncols(), m.nrows())?;
                x * m
            }
            MapStep::Conjugate(k) => {
                check_mul(k.ncols(), x.nrows())?;
                k * x * k.adjoint()
            }
            MapStep::PartialTrace { dims, traced } => partial_trace_multi(x, dims, traced)?,
            MapStep::KronLeft(d) => tensor(&linalg::identity(*d), x),
            MapStep::KronRight(d) => tensor(x, &linalg::identity(*d)),
            MapStep::KronLeftOp(m) => tensor(m, x),
            MapStep::KronRightOp(m) => tensor(x, m),
            MapStep::Transpose => x.transpose(),
            MapStep::PartialTranspose { dims, which } => partial_transpose_multi(x, dims, which)?,
            MapStep::Permute { dims, perm } => permute_factors(x, dims, perm)?,
            MapStep::Trace => CMatrix::from_element(1, 1, x.trace()),
            MapStep::Block { size, row, col } => {
                let (r, c) = (x.nrows(), x.ncols());
                if row + r > *size || col + c > *size {
                    return Err(Error::DimensionMismatch(format!(
                        "block {r}x{c} at ({row}, {col}) exceeds size {size}"
                    )));
                }
                let mut out = CMatrix::zeros(*size, *size);
                out.view_mut((*row, *col), (r, c)).copy_from(x);
                if row != col {
                    out.view_mut((*col, *row), (c, r)).copy_from(&x.adjoint());
                }
                out
            }
            MapStep::Custom(f) => f(x),
        })
    }
}

fn check_mul(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!(
            "cannot multiply: inner dims {a} and {b}"
        )));
    }
    Ok(())
}

/// A real-linear map between Hermitian matrix spaces, composed of steps
/// applied left to right.
#[derive(Debug, Clone, Default)]
pub struct LinearMap {
    steps: Vec<MapStep>,
}

impl LinearMap {
    pub fn id() -> Self {
        Self::default()
    }

    pub fn then(mut self, step: MapStep) -> Self {
        self.steps.push(step);
        self
    }

    pub fn scale(self, s: f64) -> Self {
        self.then(MapStep::Scale(s))
    }

    pub fn left(self, m: CMatrix) -> Self {
        self.then(MapStep::LeftMul(m))
    }

    pub fn right(self, m: CMatrix) -> Self {
        self.then(MapStep::RightMul(m))
    }

    pub fn conj(self, k: CMatrix) -> Self {
        self.then(MapStep::Conjugate(k))
    }

    pub fn ptrace(self, dims: &[usize], traced: &[usize]) -> Self {
        self.then(MapStep::PartialTrace {
            dims: dims.to_vec(),
            traced: traced.to_vec(),
        })
    }

    pub fn kron_left(self, d: usize) -> Self {
        self.then(MapStep::KronLeft(d))
    }

    pub fn kron_right(self, d: usize) -> Self {
        self.then(MapStep::KronRight(d))
    }

    pub fn kron_left_op(self, m: CMatrix) -> Self {
        self.then(MapStep::KronLeftOp(m))
    }

    pub fn kron_right_op(self, m: CMatrix) -> Self {
        self.then(MapStep::KronRightOp(m))
    }

    pub fn transpose(self) -> Self {
        self.then(MapStep::Transpose)
    }

    pub fn ptranspose(self, dims: &[usize], which: &[usize]) -> Self {
        self.then(MapStep::PartialTranspose {
            dims: dims.to_vec(),
            which: which.to_vec(),
        })
    }

    pub fn permute(self, dims: &[usize], perm: &[usize]) -> Self {
        self.then(MapStep::Permute {
            dims: dims.to_vec(),
            perm: perm.to_vec(),
        })
    }

    pub fn trace(self) -> Self {
        self.then(MapStep::Trace)
    }

    pub fn block(self, size: usize, row: usize, col: usize) -> Self {
        self.then(MapStep::Block { size, row, col })
    }

    pub fn custom(self, f: impl Fn(&CMatrix) -> CMatrix + Send + Sync + 'static) -> Self {
        self.then(MapStep::Custom(Arc::new(f)))
    }

    pub fn eval(&self, x: &CMatrix) -> Result<CMatrix> {
        let mut cur = x.clone();
        for s in &self.steps {
            cur = s.eval(&cur)?;
        }
        Ok(cur)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone)]
struct VarSpec {
    name: String,
    dim: usize,
    psd: Option<PsdId>,
}

#[derive(Debug, Clone)]
struct Constraint {
    name: String,
    terms: Vec<(VarId, LinearMap)>,
    constant: CMatrix,
}

/// An SDP over Hermitian matrix variables; see the module docs for the
/// primal/dual conventions.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    sense: Sense,
    vars: Vec<VarSpec>,
    objective: Vec<(VarId, CMatrix)>,
    objective_constant: f64,
    eqs: Vec<Constraint>,
    psds: Vec<Constraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Inaccurate,
}

/// Result of [`SdpProblem::solve`]. Values are in the problem's own sense.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub primal_value: f64,
    pub dual_value: f64,
    pub primal_vars: Vec<CMatrix>,
    /// One Hermitian dual per equality constraint.
    pub eq_duals: Vec<CMatrix>,
    /// One PSD dual per PSD constraint.
    pub psd_duals: Vec<CMatrix>,
    pub gap: f64,
    /// Largest violation of equality/PSD constraints by `primal_vars`.
    pub primal_infeasibility: f64,
    /// `‖Σ L*(Y) − C‖` in coordinates, for the returned duals.
    pub dual_infeasibility: f64,
    pub iterations: u32,
    pub backend_status: String,
}

impl SdpSolution {
    pub fn var(&self, v: VarId) -> &CMatrix {
        &self.primal_vars[v.0]
    }

    pub fn eq_dual(&self, e: EqId) -> &CMatrix {
        &self.eq_duals[e.0]
    }

    pub fn psd_dual(&self, k: PsdId) -> &CMatrix {
        &self.psd_duals[k.0]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }

    /// Converts an `Inaccurate` status into an error carrying the bounds.
    pub fn require_optimal(self, what: &str) -> Result<Self> {
        match self.status {
            SdpStatus::Optimal => Ok(self),
            SdpStatus::Inaccurate => Err(Error::Inaccurate {
                message: what.to_string(),
                lower: self.primal_value.min(self.dual_value),
                upper: self.primal_value.max(self.dual_value),
            }),
            s => Err(Error::Solver(format!("{what}: solver reported {s:?}"))),
        }
    }
}

/// Backend accuracy, tighter than the reported tolerances.
const BACKEND_TOL: f64 = 1e-10;
/// Relative singular-value cutoff for redundant equality rows.
const EQ_RANK_TOL: f64 = 1e-10;
/// Relative residual of equality data outside the row space that counts as
/// inconsistent.
const EQ_INCONSISTENT_TOL: f64 = 1e-9;
/// Static KKT regularization constants tried in order; the backend's
/// iterative refinement recovers accuracy better from the larger values.
const STATIC_REG_LADDER: &[f64] = &[1e-6, 1e-7, 1e-5, 1e-8];
/// Farkas residual allowed relative to the certificate's pairing.
const FARKAS_REL_TOL: f64 = 1e-6;

impl SdpProblem {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            vars: Vec::new(),
            objective: Vec::new(),
            objective_constant: 0.0,
            eqs: Vec::new(),
            psds: Vec::new(),
        }
    }

    /// A free Hermitian `dim×dim` variable. Dimension one gives a real scalar.
    pub fn add_var(&mut self, name: &str, dim: usize) -> VarId {
        assert!(dim > 0, "variable dimension must be positive");
        self.vars.push(VarSpec {
            name: name.to_string(),
            dim,
            psd: None,
        });
        VarId(self.vars.len() - 1)
    }

    /// A Hermitian variable constrained PSD; the constraint id is available
    /// from [`SdpProblem::psd_of`].
    pub fn add_psd_var(&mut self, name: &str, dim: usize) -> VarId {
        let v = self.add_var(name, dim);
        let k = self.add_psd_constraint(name, vec![(v, LinearMap::id())], CMatrix::zeros(dim, dim));
        self.vars[v.0].psd = Some(k);
        v
    }

    pub fn psd_of(&self, v: VarId) -> Option<PsdId> {
        self.vars[v.0].psd
    }

    pub fn var_dim(&self, v: VarId) -> usize {
        self.vars[v.0].dim
    }

    pub fn var_name(&self, v: VarId) -> &str {
        &self.vars[v.0].name
    }

    /// Adds `Re Tr(C X_v)` to the objective (`C` enters through its
    /// Hermitian part).
    pub fn add_objective(&mut self, v: VarId, c: CMatrix) {
        self.objective.push((v, c));
    }

    pub fn add_objective_constant(&mut self, c0: f64) {
        self.objective_constant += c0;
    }

    /// `Σ L(X) = E₀`.
    pub fn add_eq_constraint(&mut self, name: &str, terms: Vec<(VarId, LinearMap)>, constant: CMatrix) -> EqId {
        self.eqs.push(Constraint {
            name: name.to_string(),
            terms,
            constant,
        });
        EqId(self.eqs.len() - 1)
    }

    /// `Σ L(X) + Z₀ ⪰ 0`.
    pub fn add_psd_constraint(&mut self, name: &str, terms: Vec<(VarId, LinearMap)>, constant: CMatrix) -> PsdId {
        self.psds.push(Constraint {
            name: name.to_string(),
            terms,
            constant,
        });
        PsdId(self.psds.len() - 1)
    }

    /// Evaluates the objective at given variable values (problem sense).
    pub fn objective_at(&self, xs: &[CMatrix]) -> f64 {
        self.objective_constant
            + self
                .objective
                .iter()
                .map(|(v, c)| linalg::pair(c, &xs[v.0]))
                .sum::<f64>()
    }

    fn eval_constraint(&self, c: &Constraint, xs: &[CMatrix]) -> Result<CMatrix> {
        let mut out = c.constant.clone() * C64::new(0.0, 0.0);
        for (v, map) in &c.terms {
            let y = map.eval(&xs[v.0])?;
            if y.shape() != out.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "constraint '{}' term on '{}' has shape {:?}, constant has {:?}",
                    c.name,
                    self.vars[v.0].name,
                    y.shape(),
                    out.shape()
                )));
            }
            out += y;
        }
        Ok(out)
    }

    /// `Σ L_e(X)` for an equality constraint.
    pub fn eq_lhs(&self, e: EqId, xs: &[CMatrix]) -> Result<CMatrix> {
        self.eval_constraint(&self.eqs[e.0], xs)
    }

    /// `Σ L_k(X) + Z₀` for a PSD constraint.
    pub fn psd_expr(&self, k: PsdId, xs: &[CMatrix]) -> Result<CMatrix> {
        Ok(self.eval_constraint(&self.psds[k.0], xs)? + &self.psds[k.0].constant)
    }

    /// Solves with relative duality-gap tolerance `gap_tol` and the default
    /// feasibility tolerance.
    pub fn solve(&self, gap_tol: f64) -> Result<SdpSolution> {
        Assembled::new(self)?.solve(self, gap_tol)
    }

    /// Solves with the process-wide gap tolerance (see [`tol::gap_tol`]).
    pub fn solve_default(&self) -> Result<SdpSolution> {
        self.solve(tol::gap_tol())
    }
}

/// Coordinate matrix of `L` restricted to variable `v`: column `i` holds the
/// Hermitian coordinates of `L(H_i)`.
fn map_matrix(map: &LinearMap, dim_in: usize, out_dim: usize, what: &str) -> Result<(RMatrix, Vec<CMatrix>)> {
    let basis = hermitian_basis(dim_in);
    let mut m = RMatrix::zeros(out_dim * out_dim, basis.len());
    let mut images = Vec::with_capacity(basis.len());
    for (i, h) in basis.iter().enumerate() {
        let y = map.eval(h)?;
        if y.nrows() != out_dim || y.ncols() != out_dim {
            return Err(Error::DimensionMismatch(format!(
                "{what}: map output is {}x{}, expected {out_dim}x{out_dim}",
                y.nrows(),
                y.ncols()
            )));
        }
        let dev = hermiticity_deviation(&y);
        if dev > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "{what}: map does not preserve Hermiticity (deviation {dev:.2e})"
            )));
        }
        for (r, v) in hermitian_coords(&y).iter().enumerate() {
            m[(r, i)] = *v;
        }
        images.push(y);
    }
    Ok((m, images))
}

/// Upper-triangular, column-major packing with `√2` off-diagonal scaling.
fn svec(m: &RMatrix) -> Vec<f64> {
    let n = m.nrows();
    let s2 = std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            out.push(if i == j {
                m[(i, j)]
            } else {
                s2 * 0.5 * (m[(i, j)] + m[(j, i)])
            });
        }
    }
    out
}

fn unsvec(v: &[f64], n: usize) -> RMatrix {
    let s2 = std::f64::consts::SQRT_2;
    let mut m = RMatrix::zeros(n, n);
    let mut p = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, j)] = v[p];
            } else {
                m[(i, j)] = v[p] / s2;
                m[(j, i)] = v[p] / s2;
            }
            p += 1;
        }
    }
    m
}

/// Complex Hermitian `Y` with `Re Tr(Y Z) = Tr(S·embed(Z))` for the real
/// symmetric `S = [[P, Q],[Qᵀ, R]]`.
fn fold_embedded_dual(s: &RMatrix, m: usize) -> CMatrix {
    CMatrix::from_fn(m, m, |i, j| {
        let re = s[(i, j)] + s[(i + m, j + m)];
        let im = s[(j, i + m)] - s[(i, j + m)];
        C64::new(re, im)
    })
}

struct PsdBlock {
    dim: usize,
    row_offset: usize,
    rows: usize,
}

struct Assembled {
    n: usize,
    var_offsets: Vec<usize>,
    q: Vec<f64>,
    /// Per equality constraint, its coordinate matrix over all variables and
    /// its constant coordinates.
    eq_maps: Vec<(RMatrix, Vec<f64>)>,
    /// Per PSD constraint, its coordinate matrix and constant coordinates.
    psd_maps: Vec<(RMatrix, Vec<f64>)>,
    psd_blocks: Vec<PsdBlock>,
    /// Orthonormal basis of the retained equality row space (columns).
    eq_basis: RMatrix,
    eq_inconsistency: Option<Vec<f64>>,
    a_dense: RMatrix,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

impl Assembled {
    fn new(p: &SdpProblem) -> Result<Self> {
        let mut var_offsets = Vec::with_capacity(p.vars.len());
        let mut n = 0;
        for v in &p.vars {
            var_offsets.push(n);
            n += v.dim * v.dim;
        }
        let sign = match p.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut q = vec![0.0; n];
        for (v, c) in &p.objective {
            let d = p.vars[v.0].dim;
            if c.nrows() != d || c.ncols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "objective coefficient for '{}' is {}x{}, variable is {d}x{d}",
                    p.vars[v.0].name,
                    c.nrows(),
                    c.ncols()
                )));
            }
            for (i, x) in hermitian_coords(c).iter().enumerate() {
                q[var_offsets[v.0] + i] += sign * x;
            }
        }

        let build = |c: &Constraint, kind: &str| -> Result<LoweredConstraint> {
            let m = c.constant.nrows();
            if c.constant.ncols() != m {
                return Err(Error::NotSquare {
                    rows: m,
                    cols: c.constant.ncols(),
                });
            }
            let dev = hermiticity_deviation(&c.constant);
            if dev > tol::HERM_TOL {
                return Err(Error::NotHermitian(dev));
            }
            let mut mat = RMatrix::zeros(m * m, n);
            let mut images: Vec<Vec<(usize, CMatrix)>> = vec![Vec::new(); n];
            for (v, map) in &c.terms {
                if v.0 >= p.vars.len() {
                    return Err(Error::InvalidParameter(format!(
                        "{kind} '{}' references unknown variable",
                        c.name
                    )));
                }
                let what = format!("{kind} '{}' on '{}'", c.name, p.vars[v.0].name);
                let (mm, imgs) = map_matrix(map, p.vars[v.0].dim, m, &what)?;
                let off = var_offsets[v.0];
                for (i, img) in imgs.into_iter().enumerate() {
                    images[off + i].push((v.0, img));
                    for r in 0..m * m {
                        mat[(r, off + i)] += mm[(r, i)];
                    }
                }
            }
            Ok((mat, hermitian_coords(&c.constant), images))
        };

        let mut eq_maps = Vec::new();
        for c in &p.eqs {
            let (m, k, _) = build(c, "equality")?;
            eq_maps.push((m, k));
        }
        let mut psd_maps = Vec::new();
        let mut psd_images = Vec::new();
        for c in &p.psds {
            let (m, k, imgs) = build(c, "PSD constraint")?;
            psd_maps.push((m, k));
            psd_images.push(imgs);
        }

        // Stack equality rows and keep an orthonormal basis of their span.
        let n_eq: usize = eq_maps.iter().map(|(m, _)| m.nrows()).sum();
        let mut a_eq = RMatrix::zeros(n_eq, n);
        let mut b_eq = Vec::with_capacity(n_eq);
        let mut r0 = 0;
        for (m, k) in &eq_maps {
            a_eq.view_mut((r0, 0), (m.nrows(), n)).copy_from(m);
            b_eq.extend_from_slice(k);
            r0 += m.nrows();
        }
        let (eq_basis, eq_inconsistency) = if n_eq == 0 {
            (RMatrix::zeros(0, 0), None)
        } else {
            reduce_rows(&a_eq, &b_eq)
        };
        let r = eq_basis.ncols();

        let mut psd_blocks = Vec::new();
        let mut rows = r;
        for c in &p.psds {
            let m = c.constant.nrows();
            let len = if m == 1 { 1 } else { (2 * m) * (2 * m + 1) / 2 };
            psd_blocks.push(PsdBlock {
                dim: m,
                row_offset: rows,
                rows: len,
            });
            rows += len;
        }

        let mut a_dense = RMatrix::zeros(rows, n);
        let mut b = vec![0.0; rows];
        if r > 0 {
            let ared = eq_basis.transpose() * &a_eq;
            a_dense.view_mut((0, 0), (r, n)).copy_from(&ared);
            let bred = eq_basis.transpose() * nalgebra::DVector::from_vec(b_eq.clone());
            b[..r].copy_from_slice(bred.as_slice());
        }
        let mut cones = Vec::new();
        if r > 0 {
            cones.push(ZeroConeT(r));
        }
        for ((blk, c), imgs) in psd_blocks.iter().zip(&p.psds).zip(&psd_images) {
            if blk.dim == 1 {
                for (col, list) in imgs.iter().enumerate() {
                    let s: f64 = list.iter().map(|(_, y)| y[(0, 0)].re).sum();
                    a_dense[(blk.row_offset, col)] = -s;
                }
                b[blk.row_offset] = c.constant[(0, 0)].re;
                cones.push(NonnegativeConeT(1));
            } else {
                for (col, list) in imgs.iter().enumerate() {
                    if list.is_empty() {
                        continue;
                    }
                    let mut z = CMatrix::zeros(blk.dim, blk.dim);
                    for (_, y) in list {
                        z += y;
                    }
                    for (i, v) in svec(&embed_raw(&z)).iter().enumerate() {
                        a_dense[(blk.row_offset + i, col)] = -v;
                    }
                }
                for (i, v) in svec(&embed_raw(&c.constant)).iter().enumerate() {
                    b[blk.row_offset + i] = *v;
                }
                cones.push(PSDTriangleConeT(2 * blk.dim));
            }
        }
        Ok(Self {
            n,
            var_offsets,
            q,
            eq_maps,
            psd_maps,
            psd_blocks,
            eq_basis,
            eq_inconsistency,
            a_dense,
            b,
            cones,
        })
    }

    fn unpack_vars(&self, p: &SdpProblem, x: &[f64]) -> Vec<CMatrix> {
        p.vars
            .iter()
            .zip(&self.var_offsets)
            .map(|(v, &off)| from_hermitian_coords(v.dim, &x[off..off + v.dim * v.dim]))
            .collect()
    }

    /// Equality duals in the module's sign convention from backend `z`.
    fn unpack_eq_duals(&self, z: &[f64]) -> Vec<CMatrix> {
        let r = self.eq_basis.ncols();
        let full = if r > 0 {
            &self.eq_basis * nalgebra::DVector::from_column_slice(&z[..r])
        } else {
            nalgebra::DVector::zeros(self.eq_basis.nrows())
        };
        self.split_eq(full.as_slice(), -1.0)
    }

    fn split_eq(&self, full: &[f64], sign: f64) -> Vec<CMatrix> {
        let mut out = Vec::new();
        let mut off = 0;
        for (m, _) in &self.eq_maps {
            let len = m.nrows();
            let d = (len as f64).sqrt().round() as usize;
            let seg: Vec<f64> = full[off..off + len].iter().map(|v| sign * v).collect();
            out.push(from_hermitian_coords(d, &seg));
            off += len;
        }
        out
    }

    fn unpack_psd_duals(&self, z: &[f64]) -> Vec<CMatrix> {
        self.psd_blocks
            .iter()
            .map(|blk| {
                let seg = &z[blk.row_offset..blk.row_offset + blk.rows];
                if blk.dim == 1 {
                    CMatrix::from_element(1, 1, C64::new(seg[0], 0.0))
                } else {
                    let s = unsvec(seg, 2 * blk.dim);
                    fold_embedded_dual(&s, blk.dim)
                }
            })
            .collect()
    }

    /// `Σ L_e*(Y_e) + Σ L_k*(Y_k)` in variable coordinates.
    fn adjoint_apply(&self, eq: &[CMatrix], psd: &[CMatrix]) -> Vec<f64> {
        let mut out = nalgebra::DVector::<f64>::zeros(self.n);
        for ((m, _), y) in self.eq_maps.iter().zip(eq) {
            out += m.transpose() * nalgebra::DVector::from_vec(hermitian_coords(y));
        }
        for ((m, _), y) in self.psd_maps.iter().zip(psd) {
            out += m.transpose() * nalgebra::DVector::from_vec(hermitian_coords(y));
        }
        out.as_slice().to_vec()
    }

    fn dual_objective(&self, eq: &[CMatrix], psd: &[CMatrix]) -> f64 {
        let mut v = 0.0;
        for ((_, k), y) in self.eq_maps.iter().zip(eq) {
            v += dot(k, &hermitian_coords(y));
        }
        for ((_, k), y) in self.psd_maps.iter().zip(psd) {
            v -= dot(k, &hermitian_coords(y));
        }
        v
    }

    fn primal_infeasibility(&self, p: &SdpProblem, xs: &[CMatrix]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, c) in p.eqs.iter().enumerate() {
            let lhs = p.eq_lhs(EqId(i), xs)?;
            let scale = 1.0 + c.constant.norm();
            worst = worst.max((lhs - &c.constant).norm() / scale);
        }
        for i in 0..p.psds.len() {
            let z = p.psd_expr(PsdId(i), xs)?;
            let vals = linalg::eigh(&z).0;
            let scale = vals[0].abs().max(vals[vals.len() - 1].abs()).max(1.0);
            worst = worst.max((-vals[0] / scale).max(0.0));
        }
        Ok(worst)
    }

    fn solve(&self, p: &SdpProblem, gap_tol: f64) -> Result<SdpSolution> {
        let sign = match p.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        if let Some(y) = &self.eq_inconsistency {
            // Equality data outside the row space: `y` itself is a Farkas ray.
            let eq_duals = self.split_eq(y, 1.0);
            let psd_duals: Vec<CMatrix> = self.psd_blocks.iter().map(|b| CMatrix::zeros(b.dim, b.dim)).collect();
            let pairing = self.dual_objective(&eq_duals, &psd_duals);
            return Ok(SdpSolution {
                status: SdpStatus::Infeasible,
                primal_value: f64::INFINITY * sign,
                dual_value: f64::INFINITY * sign,
                primal_vars: p.vars.iter().map(|v| CMatrix::zeros(v.dim, v.dim)).collect(),
                eq_duals,
                psd_duals,
                gap: f64::INFINITY,
                primal_infeasibility: pairing,
                dual_infeasibility: 0.0,
                iterations: 0,
                backend_status: "InconsistentEqualities".into(),
            });
        }

        let mut last = None;
        for &reg in STATIC_REG_LADDER {
            let sol = self.run_backend(p, gap_tol, reg)?;
            if sol.status != SdpStatus::Inaccurate {
                return Ok(sol);
            }
            last = Some(sol);
        }
        Ok(last.expect("ladder is nonempty"))
    }

    fn run_backend(&self, p: &SdpProblem, gap_tol: f64, static_reg: f64) -> Result<SdpSolution> {
        let sign = match p.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(500)
            .tol_gap_abs(BACKEND_TOL)
            .tol_gap_rel(BACKEND_TOL)
            .tol_feas(BACKEND_TOL)
            .tol_infeas_abs(BACKEND_TOL)
            .tol_infeas_rel(BACKEND_TOL)
            .tol_ktratio(1e-8)
            .static_regularization_constant(static_reg)
            .build()
            .map_err(|e| Error::Solver(format!("backend settings: {e:?}")))?;
        let pmat = CscMatrix::<f64>::zeros((self.n, self.n));
        let amat = dense_to_csc(&self.a_dense);
        let mut solver = DefaultSolver::new(&pmat, &self.q, &amat, &self.b, &self.cones, settings)
            .map_err(|e| Error::Solver(format!("backend setup: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let backend_status = format!("{:?}", sol.status);
        let xs = self.unpack_vars(p, &sol.x);
        let eq_duals = self.unpack_eq_duals(&sol.z);
        let psd_duals = self.unpack_psd_duals(&sol.z);

        match sol.status {
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                let (ok, eq_duals, psd_duals, pairing, resid) = self.check_farkas(eq_duals, psd_duals);
                Ok(SdpSolution {
                    status: if ok {
                        SdpStatus::Infeasible
                    } else {
                        SdpStatus::Inaccurate
                    },
                    primal_value: f64::INFINITY * sign,
                    dual_value: f64::INFINITY * sign,
                    primal_vars: xs,
                    eq_duals,
                    psd_duals,
                    gap: f64::INFINITY,
                    primal_infeasibility: pairing,
                    dual_infeasibility: resid,
                    iterations: sol.iterations,
                    backend_status,
                })
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => Ok(SdpSolution {
                status: SdpStatus::Unbounded,
                primal_value: -f64::INFINITY * sign,
                dual_value: -f64::INFINITY * sign,
                primal_vars: xs,
                eq_duals,
                psd_duals,
                gap: f64::INFINITY,
                primal_infeasibility: f64::NAN,
                dual_infeasibility: f64::NAN,
                iterations: sol.iterations,
                backend_status,
            }),
            _ => {
                let primal_min = dot(&self.q, &sol.x) + sign * p.objective_constant;
                let dual_min = self.dual_objective(&eq_duals, &psd_duals) + sign * p.objective_constant;
                let resid = self.adjoint_apply(&eq_duals, &psd_duals);
                let dual_inf = resid
                    .iter()
                    .zip(&self.q)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let q_norm = self.q.iter().map(|v| v * v).sum::<f64>().sqrt();
                let psd_dual_ok = psd_duals.iter().all(|y| linalg::is_psd_matrix(y, tol::FEAS_TOL));
                let prim_inf = self.primal_infeasibility(p, &xs)?;
                let gap = (primal_min - dual_min).abs();
                let ok = prim_inf <= tol::FEAS_TOL
                    && dual_inf <= tol::FEAS_TOL * (1.0 + q_norm)
                    && psd_dual_ok
                    && gap <= gap_tol * (1.0 + primal_min.abs());
                Ok(SdpSolution {
                    status: if ok { SdpStatus::Optimal } else { SdpStatus::Inaccurate },
                    primal_value: sign * primal_min,
                    dual_value: sign * dual_min,
                    primal_vars: xs,
                    eq_duals,
                    psd_duals,
                    gap,
                    primal_infeasibility: prim_inf,
                    dual_infeasibility: dual_inf,
                    iterations: sol.iterations,
                    backend_status,
                })
            }
        }
    }

    /// Cleans and checks a Farkas ray: PSD duals are clipped to the cone,
    /// the ray is normalized to unit pairing, and the residual
    /// `‖Σ L*(Y)‖` must be small relative to it.
    fn check_farkas(&self, eq: Vec<CMatrix>, psd: Vec<CMatrix>) -> (bool, Vec<CMatrix>, Vec<CMatrix>, f64, f64) {
        let psd: Vec<CMatrix> = psd
            .into_iter()
            .map(|y| {
                if y.nrows() == 1 {
                    y.map(|v| C64::new(v.re.max(0.0), 0.0))
                } else {
                    linalg::clip_psd(&y)
                }
            })
            .collect();
        let pairing = self.dual_objective(&eq, &psd);
        if !pairing.is_finite() || pairing <= 0.0 {
            return (false, eq, psd, pairing, f64::INFINITY);
        }
        let s = 1.0 / pairing;
        let eq: Vec<CMatrix> = eq.into_iter().map(|y| y * C64::new(s, 0.0)).collect();
        let psd: Vec<CMatrix> = psd.into_iter().map(|y| y * C64::new(s, 0.0)).collect();
        let resid = self.adjoint_apply(&eq, &psd);
        let r = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
        let size: f64 = eq
            .iter()
            .chain(psd.iter())
            .map(|y| y.norm_squared())
            .sum::<f64>()
            .sqrt();
        let ok = r <= FARKAS_REL_TOL * size.max(1.0);
        (ok, eq, psd, 1.0, r)
    }
}

/// Orthonormal basis of the column space of `Aᵀ`'s row span as seen from the
/// data side: returns `U_r` (left singular vectors with nonnegligible
/// singular values) and, when `b` has a component outside `range(U_r)`,
/// that component as a Farkas ray.
fn reduce_rows(a: &RMatrix, b: &[f64]) -> (RMatrix, Option<Vec<f64>>) {
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested u");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax > 0.0 && svd.singular_values[i] > EQ_RANK_TOL * smax)
        .collect();
    let mut basis = RMatrix::zeros(a.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        basis.set_column(c, &u.column(i));
    }
    let bv = nalgebra::DVector::from_column_slice(b);
    let proj = &basis * (basis.transpose() * &bv);
    let resid = &bv - proj;
    let inconsistent = resid.norm() > EQ_INCONSISTENT_TOL * (1.0 + bv.norm());
    (basis, inconsistent.then(|| resid.as_slice().to_vec()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dense_to_csc(a: &RMatrix) -> CscMatrix<f64> {
    let (m, n) = a.shape();
    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for j in 0..n {
        for i in 0..m {
            let v = a[(i, j)];
            if v != 0.0 {
                rowval.push(i);
                nzval.push(v);
            }
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, cr, pauli_y, real_matrix};
    use proptest::prelude::*;

    fn herm(n: usize) -> impl Strategy<Value = CMatrix> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * n).prop_map(move |v| {
            let m = CMatrix::from_row_slice(n, n, &v.iter().map(|(r, i)| c(*r, *i)).collect::<Vec<_>>());
            &m + m.adjoint()
        })
    }

    /// min t s.t. t·I − A ⪰ 0.
    fn lambda_max_sdp(a: &CMatrix) -> SdpSolution {
        let n = a.nrows();
        let mut p = SdpProblem::new(Sense::Minimize);
        let t = p.add_var("t", 1);
        p.add_objective(t, CMatrix::from_element(1, 1, cr(1.0)));
        p.add_psd_constraint(
            "t I - A",
            vec![(t, LinearMap::id().custom(move |x| linalg::identity(n) * x[(0, 0)]))],
            -a.clone(),
        );
        p.solve(1e-7).unwrap()
    }

    #[test]
    fn embed_examples() {
        assert_eq!(embed_complex(&HermitianOperator::identity(2)), RMatrix::identity(4, 4));
        let e = embed_complex(&HermitianOperator::new(pauli_y()).unwrap());
        let mut ev: Vec<f64> = e.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] + 1.0).abs() < 1e-12 && (ev[1] + 1.0).abs() < 1e-12);
        assert!((ev[2] - 1.0).abs() < 1e-12 && (ev[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svec_roundtrip_and_pairing() {
        let a = real_matrix(3, 3, &[1.0, 2.0, 3.0, 2.0, 5.0, 6.0, 3.0, 6.0, 9.0]).map(|z| z.re);
        let b = real_matrix(3, 3, &[0.5, -1.0, 0.0, -1.0, 2.0, 1.5, 0.0, 1.5, -3.0]).map(|z| z.re);
        assert!((unsvec(&svec(&a), 3) - &a).norm() < 1e-14);
        let tr = (&a * &b).trace();
        assert!((dot(&svec(&a), &svec(&b)) - tr).abs() < 1e-12);
    }

    #[test]
    fn density_feasibility_is_optimal() {
        let mut p = SdpProblem::new(Sense::Minimize);
        let x = p.add_psd_var("X", 3);
        p.add_eq_constraint(
            "trace",
            vec![(x, LinearMap::id().trace())],
            CMatrix::from_element(1, 1, cr(1.0)),
        );
        let s = p.solve(1e-7).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        let rho = s.var(x);
        assert!((rho.trace().re - 1.0).abs() < 1e-8);
        assert!(linalg::is_psd_matrix(rho, 1e-8));
    }

    #[test]
    fn negative_trace_is_infeasible_with_certificate() {
        let mut p = SdpProblem::new(Sense::Minimize);
        let x = p.add_psd_var("X", 2);
        let e = p.add_eq_constraint(
            "trace",
            vec![(x, LinearMap::id().trace())],
            CMatrix::from_element(1, 1, cr(-1.0)),
        );
        let s = p.solve(1e-7).unwrap();
        assert_eq!(s.status, SdpStatus::Infeasible);
        // Y_e·(−1) − 0 > 0 with L_e*(Y_e) + Y_k = 0, Y_k ⪰ 0
        let ye = s.eq_dual(e)[(0, 0)].re;
        let yk = s.psd_dual(p.psd_of(x).unwrap());
        assert!(ye < 0.0);
        assert!(linalg::is_psd_matrix(yk, 1e-9));
        assert!((yk + linalg::identity(2) * cr(ye)).norm() < 1e-6);
    }

    #[test]
    fn inconsistent_equalities_give_direct_certificate() {
        let mut p = SdpProblem::new(Sense::Minimize);
        let x = p.add_var("x", 1);
        let e1 = p.add_eq_constraint("a", vec![(x, LinearMap::id())], CMatrix::from_element(1, 1, cr(1.0)));
        let e2 = p.add_eq_constraint(
            "b",
            vec![(x, LinearMap::id().scale(2.0))],
            CMatrix::from_element(1, 1, cr(3.0)),
        );
        let s = p.solve(1e-7).unwrap();
        assert_eq!(s.status, SdpStatus::Infeasible);
        let (y1, y2) = (s.eq_dual(e1)[(0, 0)].re, s.eq_dual(e2)[(0, 0)].re);
        assert!((y1 + 2.0 * y2).abs() < 1e-12);
        assert!(y1 + 3.0 * y2 > 0.0);
    }

    #[test]
    fn maximize_sense_and_dual_convention() {
        // max Tr(A X) s.t. X ⪰ 0, Tr X = 1 → λ_max(A)
        let a = real_matrix(2, 2, &[1.0, 0.5, 0.5, -1.0]);
        let mut p = SdpProblem::new(Sense::Maximize);
        let x = p.add_psd_var("X", 2);
        p.add_objective(x, a.clone());
        let e = p.add_eq_constraint(
            "trace",
            vec![(x, LinearMap::id().trace())],
            CMatrix::from_element(1, 1, cr(1.0)),
        );
        let s = p.solve(1e-7).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        let want = linalg::max_eigenvalue(&a);
        assert!((s.primal_value - want).abs() < 1e-7);
        assert!((s.dual_value - want).abs() < 1e-7);
        // dual of min −Tr(AX): y + Y_k = −A
        let y = s.eq_dual(e)[(0, 0)].re;
        let yk = s.psd_dual(p.psd_of(x).unwrap());
        assert!((yk + linalg::identity(2) * cr(y) + &a).norm() < 1e-6);
    }

    #[test]
    fn rejects_non_hermitian_map() {
        let mut p = SdpProblem::new(Sense::Minimize);
        let x = p.add_var("X", 2);
        p.add_eq_constraint(
            "bad",
            vec![(x, LinearMap::id().left(real_matrix(2, 2, &[1.0, 1.0, 0.0, 1.0])))],
            CMatrix::zeros(2, 2),
        );
        assert!(matches!(p.solve(1e-7), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn block_map_places_adjoint() {
        let x = CMatrix::from_row_slice(2, 2, &[cr(1.0), c(0.0, 1.0), cr(2.0), cr(3.0)]);
        let y = LinearMap::id().block(4, 0, 2).eval(&x).unwrap();
        assert_eq!(y[(0, 3)], c(0.0, 1.0));
        assert_eq!(y[(3, 0)], c(0.0, -1.0));
        assert!(hermiticity_deviation(&y) < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn min_t_equals_lambda_max(a in herm(3)) {
            let s = lambda_max_sdp(&a);
            prop_assert_eq!(s.status, SdpStatus::Optimal);
            let want = linalg::max_eigenvalue(&a);
            prop_assert!((s.primal_value - want).abs() < 1e-7 * (1.0 + want.abs()));
            prop_assert!(s.primal_value >= s.dual_value - 1e-7 * (1.0 + want.abs()));
        }

        #[test]
        fn embedding_min_eigenvalue(a in herm(3)) {
            let h = HermitianOperator::new(a.clone()).unwrap();
            let e = embed_complex(&h);
            let lmin = e.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!((lmin - h.min_eigenvalue()).abs() < 1e-10);
        }

        #[test]
        fn folded_dual_pairs_like_embedding(z in herm(3), s in herm(6)) {
            let sr = s.map(|v| v.re);
            let y = fold_embedded_dual(&sr, 3);
            let lhs = linalg::pair(&y, &z);
            let rhs = (&sr * embed_raw(&z)).trace();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn solutions_are_reproducible(a in herm(2)) {
            let s1 = lambda_max_sdp(&a);
            let s2 = lambda_max_sdp(&a);
            prop_assert_eq!(s1.primal_value.to_bits(), s2.primal_value.to_bits());
            prop_assert_eq!(s1.psd_duals[0].clone(), s2.psd_duals[0].clone());
        }
    }
}
