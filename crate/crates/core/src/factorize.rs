//! Channel factorization: `S = Φ∘T` (post-processing) and `S = T∘Φ`
//! (pre-processing), decided by SDP over the Choi matrix of `Φ` and
//! certified either by `Φ` or by an explicit witness.

use crate::channel::{self, Channel};
use crate::conic::LinearMap;
use crate::entropy;
use crate::error::{Error, Result};
use crate::linalg::{self, cr, swap_factors, tensor, trace_norm, CMatrix, Factor, FactoredDims};
use crate::majorize::{self, choi_distance, choi_feasibility, Feasibility, MajorizeOptions, VerdictKind};
use crate::tol;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorOptions {
    /// Trace-norm tolerance on Choi matrices for accepting a factor.
    pub decision_tol: f64,
    /// Minimum log2 separation for accepting a witness.
    pub witness_min_gap: f64,
}

impl Default for FactorOptions {
    fn default() -> Self {
        Self {
            decision_tol: tol::DECISION_TOL,
            witness_min_gap: tol::WITNESS_MIN_GAP,
        }
    }
}

/// One term `weight · ω⊗τ` of a separable density on `reference⊗input`.
#[derive(Debug, Clone)]
pub struct SeparableTerm {
    pub weight: f64,
    /// Density on the reference system (dimension of the output of `S`).
    pub reference: CMatrix,
    /// Density on the common input system of `T` and `S`.
    pub input: CMatrix,
}

#[derive(Debug, Clone)]
pub enum FactorWitnessKind {
    /// Separable `ρ` with `λ((id⊗S)ρ) > λ((id⊗T)ρ)`, refuting `S = Φ∘T`.
    SeparableState(Vec<SeparableTerm>),
    /// PSD `x` on `output⊗input` with `‖(T†⊗id)x‖∞ < ‖(S†⊗id)x‖∞`,
    /// refuting `S = T∘Φ`.
    PositiveOperator(CMatrix),
}

/// `lhs` is the value on the `T` side and `rhs` on the `S` side; any
/// factorization forces `lhs ≥ rhs`.
#[derive(Debug, Clone)]
pub struct FactorWitness {
    pub kind: FactorWitnessKind,
    pub lhs: f64,
    pub rhs: f64,
}

impl FactorWitness {
    /// `log₂(rhs/lhs)`, positive when the witness refutes factorization.
    pub fn gap(&self) -> f64 {
        (self.rhs / self.lhs).log2()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactorKind {
    Factors,
    NoFactor,
    Undecided,
}

impl FactorKind {
    pub fn word(self) -> &'static str {
        match self {
            FactorKind::Factors => "Factors",
            FactorKind::NoFactor => "NoFactor",
            FactorKind::Undecided => "Undecided",
        }
    }
}

#[derive(Debug, Clone)]
pub enum FactorVerdict {
    Factors(Channel),
    NoFactor(FactorWitness),
    Undecided(String),
}

#[derive(Debug, Clone)]
pub struct FactorizationDecision {
    pub verdict: FactorVerdict,
    /// Trace norm of the Choi mismatch for the best middle channel found.
    pub residual: f64,
}

impl FactorizationDecision {
    pub fn kind(&self) -> FactorKind {
        match self.verdict {
            FactorVerdict::Factors(_) => FactorKind::Factors,
            FactorVerdict::NoFactor(_) => FactorKind::NoFactor,
            FactorVerdict::Undecided(_) => FactorKind::Undecided,
        }
    }

    pub fn middle(&self) -> Option<&Channel> {
        match &self.verdict {
            FactorVerdict::Factors(c) => Some(c),
            _ => None,
        }
    }

    pub fn witness(&self) -> Option<&FactorWitness> {
        match &self.verdict {
            FactorVerdict::NoFactor(w) => Some(w),
            _ => None,
        }
    }
}

/// Which side the middle channel sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    /// `S = Φ∘T`
    Post,
    /// `S = T∘Φ`
    Pre,
}

fn require_cptp(ch: &Channel, name: &str) -> Result<()> {
    ch.require_cptp(tol::CHANNEL_TOL)
        .map_err(|e| Error::NotChannel(format!("{name}: {e}")))
}

/// Runs the feasibility solve, the distance fallback and witness extraction
/// shared by both factorization problems.
fn decide(
    side: Side,
    t: &Channel,
    s: &Channel,
    map: LinearMap,
    d_in: usize,
    d_out: usize,
    opts: &FactorOptions,
) -> Result<FactorizationDecision> {
    let compose = |phi: &Channel| match side {
        Side::Post => channel::compose(phi, t),
        Side::Pre => channel::compose(t, phi),
    };
    let choi_residual = |phi: &Channel| -> Result<f64> { Ok(trace_norm(&(compose(phi)?.choi() - s.choi()))) };
    let witness_from = |w: &CMatrix| -> Result<std::result::Result<FactorWitness, f64>> {
        match side {
            Side::Post => separable_witness(t, s, w, opts.witness_min_gap),
            Side::Pre => positive_witness(t, s, w, opts.witness_min_gap),
        }
    };
    let mut best_res = f64::INFINITY;
    let mut notes = Vec::new();

    match choi_feasibility(map.clone(), d_in, d_out, s.choi())? {
        Feasibility::Feasible(phi) => {
            let res = choi_residual(&phi)?;
            if res <= opts.decision_tol && phi.validate_default().is_cptp() {
                return Ok(FactorizationDecision {
                    verdict: FactorVerdict::Factors(phi),
                    residual: res,
                });
            }
            best_res = res;
            notes.push(format!("feasibility solve left residual {res:.3e}"));
        }
        Feasibility::Separated(w) => match witness_from(&w)? {
            Ok(wit) => {
                return Ok(FactorizationDecision {
                    verdict: FactorVerdict::NoFactor(wit),
                    residual: f64::INFINITY,
                })
            }
            Err(g) => notes.push(format!("Farkas witness gap {g:.3e} too small")),
        },
        Feasibility::Unclear => notes.push("feasibility solve inaccurate".into()),
    }

    match choi_distance(map, d_in, d_out, s.choi()) {
        Ok(dist) => {
            let res = choi_residual(&dist.channel)?;
            best_res = best_res.min(res);
            if res <= opts.decision_tol && dist.channel.validate_default().is_cptp() {
                return Ok(FactorizationDecision {
                    verdict: FactorVerdict::Factors(dist.channel),
                    residual: res,
                });
            }
            if dist.lower > 0.0 {
                match witness_from(&dist.separator)? {
                    Ok(wit) => {
                        return Ok(FactorizationDecision {
                            verdict: FactorVerdict::NoFactor(wit),
                            residual: res,
                        })
                    }
                    Err(g) => notes.push(format!("distance witness gap {g:.3e} too small")),
                }
            } else {
                notes.push("distance lower bound not positive".into());
            }
        }
        Err(e) => notes.push(format!("distance solve failed: {e}")),
    }
    Ok(FactorizationDecision {
        verdict: FactorVerdict::Undecided(notes.join("; ")),
        residual: best_res,
    })
}

/// Decides whether `S = Φ∘T` for a CPTP `Φ` from the output of `T` to the
/// output of `S`.
///
/// Math: post-processing factorization and its separable-state witness
pub fn post_factor(t: &Channel, s: &Channel, opts: &FactorOptions) -> Result<FactorizationDecision> {
    require_cptp(t, "T")?;
    require_cptp(s, "S")?;
    if t.d_in() != s.d_in() {
        return Err(Error::DimensionMismatch(format!(
            "T and S have input dims {} and {}",
            t.d_in(),
            s.d_in()
        )));
    }
    let map = majorize::conversion_map(t.choi(), t.dims(), s.d_out());
    decide(Side::Post, t, s, map, t.d_out(), s.d_out(), opts)
}

/// Decides whether `S = T∘Φ` for a CPTP `Φ` on the input of `T`.
///
/// Math: pre-processing factorization and its positive-operator witness
pub fn pre_factor(t: &Channel, s: &Channel, opts: &FactorOptions) -> Result<FactorizationDecision> {
    require_cptp(t, "T")?;
    require_cptp(s, "S")?;
    if t.dims() != s.dims() {
        return Err(Error::DimensionMismatch(
            "T and S must have equal input and output dims".into(),
        ));
    }
    let d = t.d_in();
    let tc = t.clone();
    let map = LinearMap::id().custom(move |j| {
        tc.apply_to_factor(j, FactoredDims { a: d, b: d }, Factor::B)
            .expect("dims fixed at construction")
            .0
    });
    decide(Side::Pre, t, s, map, d, d, opts)
}

/// Rewrites a separating operator `W` on `input⊗output` as a separable
/// density via `a⊗b + ‖b‖|a|⊗1 = a₊⊗(‖b‖+b) + a₋⊗(‖b‖−b)`. The shift pairs
/// to the same constant with every trace-preserving composition.
fn separable_from_separator(w: &CMatrix, dims: FactoredDims) -> Result<Vec<SeparableTerm>> {
    let schmidt = linalg::operator_schmidt(&linalg::hermitian_part(w).into_inner(), dims)?;
    let ib = linalg::identity(dims.b);
    let mut raw = Vec::new();
    for t in schmidt {
        let a = &t.a * cr(t.coeff);
        let b = t.b.clone();
        let nb = linalg::operator_norm(&b);
        let pa = linalg::positive_part(&a);
        let na = linalg::positive_part(&-&a);
        raw.push((pa, &ib * cr(nb) + &b));
        raw.push((na, &ib * cr(nb) - &b));
    }
    let mut terms = Vec::new();
    for (p, q) in raw {
        let (tp, tq) = (p.trace().re, q.trace().re);
        if tp <= 1e-14 || tq <= 1e-14 {
            continue;
        }
        terms.push(SeparableTerm {
            weight: tp * tq,
            reference: linalg::clip_psd(&(q.transpose() / cr(tq))),
            input: linalg::clip_psd(&(p.transpose() / cr(tp))),
        });
    }
    let total: f64 = terms.iter().map(|t| t.weight).sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::InvalidParameter("separator has no positive part".into()));
    }
    for t in &mut terms {
        t.weight /= total;
    }
    Ok(terms)
}

/// `Σ_j w_j ω_j⊗τ_j` on `reference⊗input`.
pub fn separable_state(terms: &[SeparableTerm]) -> CMatrix {
    let (dr, di) = (terms[0].reference.nrows(), terms[0].input.nrows());
    terms.iter().fold(CMatrix::zeros(dr * di, dr * di), |acc, t| {
        acc + tensor(&t.reference, &t.input) * cr(t.weight)
    })
}

fn lambda_after(ch: &Channel, rho: &CMatrix, d_ref: usize) -> Result<f64> {
    let dims = FactoredDims::new(d_ref, ch.d_in())?;
    let (out, od) = ch.apply_to_factor(rho, dims, Factor::B)?;
    Ok(entropy::hmin_of(&linalg::hermitian_part(&out).into_inner(), od)?.lambda)
}

fn separable_witness(
    t: &Channel,
    s: &Channel,
    w: &CMatrix,
    min_gap: f64,
) -> Result<std::result::Result<FactorWitness, f64>> {
    let terms = separable_from_separator(w, FactoredDims::new(t.d_in(), s.d_out())?)?;
    let rho = linalg::hermitian_part(&separable_state(&terms)).into_inner();
    let lhs = lambda_after(t, &rho, s.d_out())?;
    let rhs = lambda_after(s, &rho, s.d_out())?;
    let wit = FactorWitness {
        kind: FactorWitnessKind::SeparableState(terms),
        lhs,
        rhs,
    };
    let g = wit.gap();
    Ok(if g >= min_gap { Ok(wit) } else { Err(g) })
}

/// `‖(id⊗Ψ†)(x)‖∞` for `x` on `input⊗output`.
fn adjoint_norm(ch: &Channel, x: &CMatrix) -> Result<f64> {
    let adj = ch.adjoint();
    let (y, _) = adj.apply_to_factor(x, FactoredDims::new(ch.d_in(), ch.d_out())?, Factor::B)?;
    Ok(linalg::max_eigenvalue(&linalg::hermitian_part(&y).into_inner()))
}

/// Shifts `W` to a positive operator, picks the density `σ` attaining the
/// projective norm of its `T†` image, and conjugates by `(σ+δ)^{-1/2}`,
/// halving `δ` until the operator-norm inequality verifies.
fn positive_witness(
    t: &Channel,
    s: &Channel,
    w: &CMatrix,
    min_gap: f64,
) -> Result<std::result::Result<FactorWitness, f64>> {
    let d = t.d_in();
    let dims = FactoredDims::new(d, t.d_out())?;
    let split = majorize::positive_split(w, dims)?;
    let w4 = split
        .terms
        .iter()
        .fold(CMatrix::zeros(dims.total(), dims.total()), |acc, (c, e)| {
            acc + tensor(c, e)
        });
    let w4 = linalg::clip_psd(&w4);
    let (y, _) = t.adjoint().apply_to_factor(&w4, dims, Factor::B)?;
    let y = linalg::hermitian_part(&y).into_inner();
    let ty = y.trace().re;
    if ty.is_nan() || ty <= 0.0 {
        return Ok(Err(f64::NEG_INFINITY));
    }
    // ω lives on the first factor; swap so it is the conditioning factor
    let sq = FactoredDims::new(d, d)?;
    let (_, omega) = entropy::lambda_with_omega(&swap_factors(&(&y / cr(ty)), sq)?, sq)?;
    let omega = linalg::clip_psd(&omega);
    let sigma = &omega / cr(omega.trace().re);
    let mut delta = 1e-9;
    let mut best = f64::NEG_INFINITY;
    for _ in 0..=10 {
        let k = tensor(
            &linalg::inv_sqrt_floor(&(&sigma + linalg::identity(d) * cr(delta)), 0.0),
            &linalg::identity(t.d_out()),
        );
        let mut x4 = &k * &w4 * &k;
        x4 /= cr(x4.trace().re);
        let x4 = linalg::hermitian_part(&x4).into_inner();
        let lhs = adjoint_norm(t, &x4)?;
        let rhs = adjoint_norm(s, &x4)?;
        let g = (rhs / lhs).log2();
        if g >= min_gap {
            return Ok(Ok(FactorWitness {
                kind: FactorWitnessKind::PositiveOperator(swap_factors(&x4, dims)?),
                lhs,
                rhs,
            }));
        }
        best = best.max(g);
        delta /= 2.0;
    }
    Ok(Err(best))
}

/// Recomputes `(lhs, rhs)` of a witness from the channels alone.
pub fn verify_factor_witness(t: &Channel, s: &Channel, w: &FactorWitness) -> Result<(f64, f64)> {
    match &w.kind {
        FactorWitnessKind::SeparableState(terms) => {
            let total: f64 = terms.iter().map(|t| t.weight).sum();
            if terms.is_empty() || (total - 1.0).abs() > tol::DENSITY_TOL || terms.iter().any(|t| t.weight < 0.0) {
                return Err(Error::InvalidParameter(
                    "separable weights must be a distribution".into(),
                ));
            }
            for term in terms {
                linalg::check_density(&linalg::hermitian_part(&term.reference))?;
                linalg::check_density(&linalg::hermitian_part(&term.input))?;
            }
            let rho = linalg::hermitian_part(&separable_state(terms)).into_inner();
            let d_ref = terms[0].reference.nrows();
            Ok((lambda_after(t, &rho, d_ref)?, lambda_after(s, &rho, d_ref)?))
        }
        FactorWitnessKind::PositiveOperator(x) => {
            let xh = linalg::hermitian_part(x);
            if !linalg::is_psd(&xh, tol::DENSITY_TOL) {
                return Err(Error::NotPsd(xh.min_eigenvalue()));
            }
            let x = swap_factors(xh.as_matrix(), FactoredDims::new(t.d_out(), t.d_in())?)?;
            Ok((adjoint_norm(t, &x)?, adjoint_norm(s, &x)?))
        }
    }
}

/// Outcome of comparing post-factorization with majorization of the
/// normalized Choi states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChoiEquivalence {
    pub factorization: FactorKind,
    pub majorization: VerdictKind,
    /// Both decided and in agreement.
    pub agree: bool,
}

/// `S = Φ∘T` exactly when `χ_S/d` is majorized by `χ_T/d` with the
/// channel on the output factor.
///
/// Math: post-factorization equals majorization of normalized Choi states
pub fn choi_majorization_equiv(t: &Channel, s: &Channel) -> Result<ChoiEquivalence> {
    if t.dims() != s.dims() {
        return Err(Error::DimensionMismatch("T and S must have equal dims".into()));
    }
    let f = post_factor(t, s, &FactorOptions::default())?.kind();
    let dims = t.dims();
    let rho = linalg::BipartiteState::new(t.choi_state(), dims)?;
    let sigma = linalg::BipartiteState::new(s.choi_state(), dims)?;
    let m = majorize::is_majorized(&rho, &sigma, &MajorizeOptions::default())?.kind();
    let agree = matches!(
        (f, m),
        (FactorKind::Factors, VerdictKind::Majorized) | (FactorKind::NoFactor, VerdictKind::NotMajorized)
    );
    Ok(ChoiEquivalence {
        factorization: f,
        majorization: m,
        agree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, pauli_x, pauli_z};
    use proptest::prelude::*;

    fn mat(n: usize, m: usize) -> impl Strategy<Value = CMatrix> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * m)
            .prop_map(move |v| CMatrix::from_row_slice(n, m, &v.iter().map(|(r, i)| c(*r, *i)).collect::<Vec<_>>()))
    }

    fn cptp(d: usize) -> impl Strategy<Value = Channel> {
        proptest::collection::vec(mat(d, d), 2).prop_map(move |ks| {
            let s: CMatrix = ks
                .iter()
                .map(|k| k.adjoint() * k)
                .fold(CMatrix::zeros(d, d), |a, b| a + b);
            let n = linalg::inv_sqrt_floor(&s, 1e-12);
            let ks: Vec<CMatrix> = ks.iter().map(|k| k * &n).collect();
            channel::choi_from_kraus(&ks).unwrap()
        })
    }

    fn hadamard() -> CMatrix {
        (pauli_x() + pauli_z()) * cr(std::f64::consts::FRAC_1_SQRT_2)
    }

    #[test]
    fn channel_factors_through_itself() {
        let t = channel::depolarizing(2, 0.3).unwrap();
        let opts = FactorOptions::default();
        assert_eq!(post_factor(&t, &t, &opts).unwrap().kind(), FactorKind::Factors);
        assert_eq!(pre_factor(&t, &t, &opts).unwrap().kind(), FactorKind::Factors);
    }

    #[test]
    fn identity_post_factors_anything() {
        let s = channel::depolarizing(2, 0.6).unwrap();
        let d = post_factor(&channel::identity(2), &s, &FactorOptions::default()).unwrap();
        let phi = d.middle().unwrap();
        assert!(trace_norm(&(phi.choi() - s.choi())) < 1e-6);
    }

    #[test]
    fn depolarized_input_cannot_be_restored() {
        let t = channel::depolarizing(2, 1.0).unwrap();
        let s = channel::identity(2);
        let d = post_factor(&t, &s, &FactorOptions::default()).unwrap();
        let w = d.witness().expect("witness");
        assert!(w.gap() >= tol::WITNESS_MIN_GAP);
        let FactorWitnessKind::SeparableState(terms) = &w.kind else {
            panic!("wrong witness kind")
        };
        let total: f64 = terms.iter().map(|t| t.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let (l, r) = verify_factor_witness(&t, &s, w).unwrap();
        assert!((r / l).log2() >= tol::WITNESS_MIN_GAP);
    }

    #[test]
    fn unitary_pre_factor_is_recovered() {
        let t = channel::unitary(&hadamard()).unwrap();
        let v = pauli_x() * c(0.0, 1.0);
        let vch = channel::unitary(&v).unwrap();
        let s = channel::compose(&t, &vch).unwrap();
        let d = pre_factor(&t, &s, &FactorOptions::default()).unwrap();
        let phi = d.middle().unwrap();
        assert!(trace_norm(&(phi.choi() - vch.choi())) < 1e-5);
    }

    #[test]
    fn dephasing_is_not_left_invertible() {
        let t = channel::dephasing(2);
        let s = channel::identity(2);
        let d = pre_factor(&t, &s, &FactorOptions::default()).unwrap();
        let w = d.witness().expect("witness");
        assert!(matches!(w.kind, FactorWitnessKind::PositiveOperator(_)));
        let (l, r) = verify_factor_witness(&t, &s, w).unwrap();
        assert!((r / l).log2() >= tol::WITNESS_MIN_GAP);
    }

    #[test]
    fn equivalence_on_fixed_pairs() {
        let id = channel::identity(2);
        let dep = channel::depolarizing(2, 1.0).unwrap();
        assert!(choi_majorization_equiv(&id, &id).unwrap().agree);
        let e = choi_majorization_equiv(&dep, &id).unwrap();
        assert_eq!(e.factorization, FactorKind::NoFactor);
        assert!(e.agree);
    }

    #[test]
    fn mismatched_dims_are_rejected() {
        let r = post_factor(&channel::identity(2), &channel::identity(3), &FactorOptions::default());
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        #[test]
        fn constructed_post_factor_found(t in cptp(2), phi in cptp(2)) {
            let s = channel::compose(&phi, &t).unwrap();
            let d = post_factor(&t, &s, &FactorOptions::default()).unwrap();
            prop_assert_ne!(d.kind(), FactorKind::NoFactor);
            if let Some(m) = d.middle() {
                let back = channel::compose(m, &t).unwrap();
                prop_assert!(trace_norm(&(back.choi() - s.choi())) <= 1e-6);
            }
        }

        #[test]
        fn post_factorization_is_transitive(t in cptp(2), p1 in cptp(2), p2 in cptp(2)) {
            let opts = FactorOptions::default();
            let s = channel::compose(&p1, &t).unwrap();
            let r = channel::compose(&p2, &s).unwrap();
            let a = post_factor(&t, &s, &opts).unwrap();
            let b = post_factor(&s, &r, &opts).unwrap();
            if a.kind() == FactorKind::Factors && b.kind() == FactorKind::Factors {
                prop_assert_eq!(post_factor(&t, &r, &opts).unwrap().kind(), FactorKind::Factors);
            }
        }

        #[test]
        fn constructed_pre_factor_found(t in cptp(2), phi in cptp(2)) {
            let s = channel::compose(&t, &phi).unwrap();
            let d = pre_factor(&t, &s, &FactorOptions::default()).unwrap();
            prop_assert_ne!(d.kind(), FactorKind::NoFactor);
        }
    }
}
