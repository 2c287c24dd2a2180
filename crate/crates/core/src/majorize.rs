//! Quantum majorization of bipartite states and convertibility of state
//! families, with constructive entanglement-breaking witnesses.
//!
//! `σ` is majorized by `ρ` when `σ = (id_A⊗Φ)(ρ)` for a CPTP map `Φ` on `B`.
//! A negative answer is certified by an entanglement-breaking channel `Ψ`
//! on `A` with `H_min(A'|B)` strictly larger on `(Ψ⊗id)ρ` than on
//! `(Ψ⊗id)σ`.

use crate::channel::{self, Channel};
use crate::conic::{LinearMap, SdpProblem, SdpStatus, Sense};
use crate::entropy;
use crate::error::{Error, Result};
use crate::linalg::{
    self, cr, partial_trace, partial_transpose, permute_factors, swap_factors, tensor, trace_norm, BipartiteState,
    CMatrix, Factor, FactoredDims, HermitianOperator,
};
use crate::tol;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MajorizeOptions {
    /// Factor the channel acts on.
    pub factor: Factor,
    /// Trace-norm tolerance for accepting a channel.
    pub decision_tol: f64,
    /// Minimum `H_min` separation in bits for accepting a witness.
    pub witness_min_gap: f64,
}

impl Default for MajorizeOptions {
    fn default() -> Self {
        Self {
            factor: Factor::B,
            decision_tol: tol::DECISION_TOL,
            witness_min_gap: tol::WITNESS_MIN_GAP,
        }
    }
}

/// Which trace-preserving completion produced a witness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WitnessBranch {
    /// Equal marginals on the witness factor: the sub-channel built from the
    /// separating operator is completed by dumping its deficit into the
    /// maximally mixed state.
    DeficitCompletion,
    /// Unequal marginals: a two-outcome measurement on the support of the
    /// positive part of the marginal difference.
    MarginalProjection,
}

/// An entanglement-breaking channel separating two states in `H_min`.
#[derive(Debug, Clone)]
pub struct Witness {
    /// EB-CPTP channel on the factor opposite to the one `Φ` acts on.
    pub eb_channel: Channel,
    pub acts_on: Factor,
    /// `H_min` of `(Ψ⊗id)ρ` in bits, conditioned on the factor `Φ` acts on.
    pub hmin_rho: f64,
    /// Same for `σ`.
    pub hmin_sigma: f64,
    /// The separating Hermitian operator before any positivity shift.
    pub raw_dual: HermitianOperator,
    pub branch: WitnessBranch,
}

impl Witness {
    pub fn gap(&self) -> f64 {
        self.hmin_rho - self.hmin_sigma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Margins {
    /// Trace-norm residual of the best channel found.
    pub feas_residual: f64,
    /// Best lower bound on `min_Φ ‖σ − (id⊗Φ)ρ‖₁` from the solver.
    pub distance_lower: f64,
    /// Largest `H_min` gap achieved by any attempted witness.
    pub witness_gap: f64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub enum Verdict {
    Majorized(Channel),
    NotMajorized(Witness),
    Undecided(Margins),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VerdictKind {
    Majorized,
    NotMajorized,
    Undecided,
}

impl Verdict {
    pub fn kind(&self) -> VerdictKind {
        match self {
            Verdict::Majorized(_) => VerdictKind::Majorized,
            Verdict::NotMajorized(_) => VerdictKind::NotMajorized,
            Verdict::Undecided(_) => VerdictKind::Undecided,
        }
    }
}

impl VerdictKind {
    pub fn word(self) -> &'static str {
        match self {
            VerdictKind::Majorized => "Majorized",
            VerdictKind::NotMajorized => "NotMajorized",
            VerdictKind::Undecided => "Undecided",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MajorizationDecision {
    pub verdict: Verdict,
    /// `‖σ − (id⊗Φ)ρ‖₁` for the best channel found (infinite if none).
    pub feas_residual: f64,
    /// `H_min` gap of the reported witness, zero when there is none.
    pub witness_gap: f64,
}

impl MajorizationDecision {
    pub fn kind(&self) -> VerdictKind {
        self.verdict.kind()
    }

    pub fn channel(&self) -> Option<&Channel> {
        match &self.verdict {
            Verdict::Majorized(c) => Some(c),
            _ => None,
        }
    }

    pub fn witness(&self) -> Option<&Witness> {
        match &self.verdict {
            Verdict::NotMajorized(w) => Some(w),
            _ => None,
        }
    }
}

/// `L_ρ(J) = (id_A⊗Φ_J)(ρ) = Tr_{B_in}[(ρ^{T_B}⊗I_out)(I_A⊗J)]` as a map of
/// the Choi matrix `J` on `B_in⊗B_out`.
pub fn conversion_map(rho: &CMatrix, dims: FactoredDims, d_out: usize) -> LinearMap {
    let rt = partial_transpose(rho, dims, Factor::B).expect("dims checked by caller");
    LinearMap::id()
        .kron_left(dims.a)
        .left(tensor(&rt, &linalg::identity(d_out)))
        .ptrace(&[dims.a, dims.b, d_out], &[1])
}

/// `M = L_ρ*(W)`, so that `Tr(W (id⊗Φ_J)ρ) = Tr(M J)` for Hermitian `J`.
///
/// Math: pairing of a separating operator with all channel images of a state
pub fn pairing_operator(w: &CMatrix, rho: &CMatrix, dims: FactoredDims, d_out: usize) -> Result<CMatrix> {
    let out_dims = FactoredDims::new(dims.a, d_out)?;
    if w.nrows() != out_dims.total() || w.ncols() != out_dims.total() {
        return Err(Error::DimensionMismatch("pairing operator has wrong size".into()));
    }
    let (da, din) = (dims.a, dims.b);
    let lifted = permute_factors(&tensor(w, &linalg::identity(din)), &[da, d_out, din], &[0, 2, 1])?;
    let rt = partial_transpose(rho, dims, Factor::B)?;
    let prod = lifted * tensor(&rt, &linalg::identity(d_out));
    let m = linalg::partial_trace_multi(&prod, &[da, din, d_out], &[0])?;
    Ok(linalg::hermitian_part(&m).into_inner())
}

/// Clips `J` to PSD and renormalizes to trace preservation.
pub(crate) fn repair_choi(j: &CMatrix, d_in: usize, d_out: usize) -> Channel {
    let jp = linalg::clip_psd(j);
    let dims = FactoredDims { a: d_in, b: d_out };
    let t = partial_trace(&jp, dims, Factor::B).expect("dims");
    let s = linalg::inv_sqrt_floor(&t, 1e-14);
    let k = tensor(&s, &linalg::identity(d_out));
    Channel::from_choi_unchecked(&k * jp * &k, d_in, d_out)
}

fn residual(ch: &Channel, rho: &CMatrix, dims: FactoredDims, sigma: &CMatrix) -> f64 {
    let (out, _) = ch.apply_to_factor(rho, dims, Factor::B).expect("dims");
    trace_norm(&(sigma - out))
}

pub(crate) enum Feasibility {
    Feasible(Channel),
    /// Separating operator from a verified Farkas ray.
    Separated(CMatrix),
    Unclear,
}

/// Feasibility SDP `J ⪰ 0, Tr_out J = I, L(J) = target` for a linear map
/// `L` of the Choi matrix.
pub(crate) fn choi_feasibility(map: LinearMap, d_in: usize, d_out: usize, target: &CMatrix) -> Result<Feasibility> {
    let mut p = SdpProblem::new(Sense::Minimize);
    let j = p.add_psd_var("J", d_in * d_out);
    p.add_eq_constraint(
        "Tr_out J = I",
        vec![(j, LinearMap::id().ptrace(&[d_in, d_out], &[1]))],
        linalg::identity(d_in),
    );
    let conv = p.add_eq_constraint("L(J) = target", vec![(j, map)], target.clone());
    let sol = p.solve_default()?;
    Ok(match sol.status {
        SdpStatus::Optimal => Feasibility::Feasible(repair_choi(sol.var(j), d_in, d_out)),
        SdpStatus::Infeasible => Feasibility::Separated(sol.eq_dual(conv).clone()),
        _ => Feasibility::Unclear,
    })
}

fn feasibility(rho: &CMatrix, dims: FactoredDims, sigma: &CMatrix, d_out: usize) -> Result<Feasibility> {
    choi_feasibility(conversion_map(rho, dims, d_out), dims.b, d_out, sigma)
}

/// Solution of `min_Φ ‖target − L(J_Φ)‖₁` over CPTP `Φ`.
#[derive(Debug, Clone)]
pub struct DistanceSolve {
    pub status: SdpStatus,
    pub value: f64,
    pub lower: f64,
    pub channel: Channel,
    /// Dual operator with `−I ⪯ W ⪯ I` and
    /// `Tr(W target) − sup_Φ Tr(W L(J_Φ)) ≥ lower`.
    pub separator: CMatrix,
}

/// Trace-norm epigraph SDP jointly over the Choi matrix:
/// `min Tr P + Tr N s.t. L(J) + P − N = target, P, N ⪰ 0, J CPTP`.
pub(crate) fn choi_distance(map: LinearMap, d_in: usize, d_out: usize, target: &CMatrix) -> Result<DistanceSolve> {
    let n_out = target.nrows();
    let mut p = SdpProblem::new(Sense::Minimize);
    let j = p.add_psd_var("J", d_in * d_out);
    let pv = p.add_psd_var("P", n_out);
    let nv = p.add_psd_var("N", n_out);
    p.add_objective(pv, linalg::identity(n_out));
    p.add_objective(nv, linalg::identity(n_out));
    p.add_eq_constraint(
        "Tr_out J = I",
        vec![(j, LinearMap::id().ptrace(&[d_in, d_out], &[1]))],
        linalg::identity(d_in),
    );
    let conv = p.add_eq_constraint(
        "L(J) + P - N = target",
        vec![(j, map), (pv, LinearMap::id()), (nv, LinearMap::id().scale(-1.0))],
        target.clone(),
    );
    let sol = p.solve_default()?;
    if !matches!(sol.status, SdpStatus::Optimal | SdpStatus::Inaccurate) {
        return Err(Error::Solver(format!("trace-distance SDP reported {:?}", sol.status)));
    }
    let channel = repair_choi(sol.var(j), d_in, d_out);
    Ok(DistanceSolve {
        status: sol.status,
        value: sol.primal_value,
        lower: sol.dual_value.max(0.0),
        channel,
        separator: sol.eq_dual(conv).clone(),
    })
}

/// `min_Φ ‖σ − (id⊗Φ)ρ‖₁` over CPTP `Φ: B_in → B_out`.
pub fn conversion_distance(rho: &CMatrix, dims: FactoredDims, sigma: &CMatrix, d_out: usize) -> Result<DistanceSolve> {
    choi_distance(conversion_map(rho, dims, d_out), dims.b, d_out, sigma)
}

/// `max_Φ Tr(W (id⊗Φ)ρ)` over CPTP `Φ` on `B`, with a maximizing channel.
///
/// Math: supremum of a separating functional over all channel images
pub fn sup_pairing(w: &HermitianOperator, rho: &BipartiteState) -> Result<(f64, Channel)> {
    sup_pairing_general(w.as_matrix(), rho.matrix(), rho.dims(), rho.dims().b)
}

pub fn sup_pairing_general(w: &CMatrix, rho: &CMatrix, dims: FactoredDims, d_out: usize) -> Result<(f64, Channel)> {
    let d_in = dims.b;
    let m = pairing_operator(w, rho, dims, d_out)?;
    let mut p = SdpProblem::new(Sense::Maximize);
    let j = p.add_psd_var("J", d_in * d_out);
    p.add_objective(j, m);
    p.add_eq_constraint(
        "Tr_out J = I",
        vec![(j, LinearMap::id().ptrace(&[d_in, d_out], &[1]))],
        linalg::identity(d_in),
    );
    let sol = p.solve_default()?.require_optimal("channel pairing SDP")?;
    Ok((sol.primal_value, repair_choi(sol.var(j), d_in, d_out)))
}

/// `W + K·1⊗1 = Σ_k c_k⊗d_k` with every `c_k, d_k ⪰ 0`.
#[derive(Debug, Clone)]
pub struct PositiveSplit {
    pub terms: Vec<(CMatrix, CMatrix)>,
    pub shift: f64,
}

/// Splits a Hermitian operator into positive tensor terms after adding the
/// smallest shift the term-wise identity
/// `a⊗b + ‖a‖‖b‖·1⊗1 = ½[(a+‖a‖)⊗(b+‖b‖) + (‖a‖−a)⊗(‖b‖−b)]` needs.
/// Terms that are already positive⊗positive (or negative⊗negative) are kept
/// without shift.
///
/// Math: Hermitian operator-Schmidt split shifted into positive tensor terms
pub fn positive_split(w: &CMatrix, dims: FactoredDims) -> Result<PositiveSplit> {
    let schmidt = linalg::operator_schmidt(&linalg::hermitian_part(w).into_inner(), dims)?;
    let (ia, ib) = (linalg::identity(dims.a), linalg::identity(dims.b));
    let mut terms = Vec::new();
    let mut shift = 0.0;
    for t in schmidt {
        let a = &t.a * cr(t.coeff);
        let b = t.b.clone();
        let (ea, eb) = (linalg::eigh(&a).0, linalg::eigh(&b).0);
        let (amin, amax) = (ea[0], ea[ea.len() - 1]);
        let (bmin, bmax) = (eb[0], eb[eb.len() - 1]);
        let na = amin.abs().max(amax.abs());
        let nb = bmin.abs().max(bmax.abs());
        let slack = 1e-12;
        if amin >= -slack * na && bmin >= -slack * nb {
            terms.push((linalg::clip_psd(&a), linalg::clip_psd(&b)));
        } else if amax <= slack * na && bmax <= slack * nb {
            terms.push((linalg::clip_psd(&-a), linalg::clip_psd(&-b)));
        } else {
            terms.push(((&a + &ia * cr(na)) * cr(0.5), &b + &ib * cr(nb)));
            terms.push(((&ia * cr(na) - &a) * cr(0.5), &ib * cr(nb) - &b));
            shift += na * nb;
        }
    }
    Ok(PositiveSplit { terms, shift })
}

/// Outcome of [`extract_witness`].
#[derive(Debug, Clone)]
pub enum WitnessAttempt {
    Verified(Witness),
    Unverified { raw_dual: HermitianOperator, best_gap: f64 },
}

/// Builds the deficit-completion channel: measure `{Tr(d_k)c_k/N}` and
/// prepare `d_kᵀ/Tr d_k`, with the leftover POVM element preparing `I/d_B`.
fn deficit_completion(split: &PositiveSplit, dims: FactoredDims) -> Option<Channel> {
    let (da, db) = (dims.a, dims.b);
    let mut tpi = CMatrix::zeros(da, da);
    for (c, d) in &split.terms {
        tpi += c * d.trace();
    }
    let n = linalg::max_eigenvalue(&tpi);
    if !n.is_finite() || n <= 0.0 {
        return None;
    }
    let mut povm = Vec::new();
    let mut states = Vec::new();
    let mut sum = CMatrix::zeros(da, da);
    for (c, d) in &split.terms {
        let td = d.trace().re;
        if td <= 1e-14 * n {
            continue;
        }
        let x = linalg::hermitian_part(&(c * cr(td / n))).into_inner();
        sum += &x;
        povm.push(x);
        states.push(linalg::hermitian_part(&(d.transpose() / cr(td))).into_inner());
    }
    let rest = linalg::clip_psd(&(linalg::identity(da) - &sum));
    // absorb rounding so that the POVM sums to the identity exactly
    let fix = linalg::identity(da) - &sum - &rest;
    povm.push(&rest + fix);
    states.push(linalg::maximally_mixed(db));
    channel::eb_from_ensemble(&povm, &states).ok()
}

/// Two-outcome measure-and-prepare channel `ω ↦ Tr(q ω)e₀ + Tr((1−q)ω)I/d'`
/// with `q` the support projector of `(σ_A − ρ_A)₊`.
fn marginal_projection(rho_a: &CMatrix, sigma_a: &CMatrix, d_out: usize) -> Option<Channel> {
    let diff = sigma_a - rho_a;
    let scale = trace_norm(&diff);
    if scale <= 0.0 {
        return None;
    }
    let q = linalg::support_projector(&diff, 1e-12 * scale);
    if q.trace().re < 0.5 {
        return None;
    }
    let da = rho_a.nrows();
    let e0 = linalg::matrix_unit(d_out, 0, 0);
    let q2 = linalg::identity(da) - &q;
    channel::eb_from_ensemble(&[q, q2], &[e0, linalg::maximally_mixed(d_out)]).ok()
}

fn witness_hmins(psi: &Channel, rho: &CMatrix, sigma: &CMatrix, dims: FactoredDims) -> Result<(f64, f64)> {
    let (r, nd) = psi.apply_to_factor(rho, dims, Factor::A)?;
    let (s, _) = psi.apply_to_factor(sigma, dims, Factor::A)?;
    let hr = entropy::hmin_of(&linalg::hermitian_part(&r).into_inner(), nd)?.value_bits;
    let hs = entropy::hmin_of(&linalg::hermitian_part(&s).into_inner(), nd)?.value_bits;
    Ok((hr, hs))
}

/// Turns a separating operator `W` (with `Tr(Wσ) > sup_Φ Tr(W(id⊗Φ)ρ)`) into
/// an entanglement-breaking channel `Ψ` on `A` and verifies the `H_min`
/// separation numerically.
///
/// Math: constructive entanglement-breaking witness from a separating operator
pub fn extract_witness(
    w: &HermitianOperator,
    rho: &BipartiteState,
    sigma: &BipartiteState,
    min_gap: f64,
) -> Result<WitnessAttempt> {
    if rho.dims() != sigma.dims() {
        return Err(Error::DimensionMismatch("states have different dims".into()));
    }
    extract_witness_general(w.as_matrix(), rho.matrix(), sigma.matrix(), rho.dims(), min_gap)
}

fn extract_witness_general(
    w: &CMatrix,
    rho: &CMatrix,
    sigma: &CMatrix,
    out_dims: FactoredDims,
    min_gap: f64,
) -> Result<WitnessAttempt> {
    let raw = linalg::hermitian_part(w);
    let rho_a = partial_trace(rho, out_dims, Factor::B)?;
    let sigma_a = partial_trace(sigma, out_dims, Factor::B)?;
    let marg_diff = trace_norm(&(&sigma_a - &rho_a));
    let split = positive_split(raw.as_matrix(), out_dims)?;

    let mut order = vec![WitnessBranch::DeficitCompletion, WitnessBranch::MarginalProjection];
    if marg_diff > 1e-7 {
        order.reverse();
    }
    let mut best = f64::NEG_INFINITY;
    for branch in order {
        let psi = match branch {
            WitnessBranch::DeficitCompletion => deficit_completion(&split, out_dims),
            WitnessBranch::MarginalProjection => marginal_projection(&rho_a, &sigma_a, out_dims.b.max(2)),
        };
        let Some(psi) = psi else { continue };
        let (hr, hs) = match witness_hmins(&psi, rho, sigma, out_dims) {
            Ok(v) => v,
            Err(Error::Inaccurate { .. }) => continue,
            Err(e) => return Err(e),
        };
        best = best.max(hr - hs);
        if hr - hs >= min_gap {
            return Ok(WitnessAttempt::Verified(Witness {
                eb_channel: psi,
                acts_on: Factor::A,
                hmin_rho: hr,
                hmin_sigma: hs,
                raw_dual: raw,
                branch,
            }));
        }
    }
    Ok(WitnessAttempt::Unverified {
        raw_dual: raw,
        best_gap: best,
    })
}

/// Decides `σ = (id⊗Φ)(ρ)` for `ρ` on `A⊗B_in`, `σ` on `A⊗B_out`.
fn decide(
    rho: &CMatrix,
    dims: FactoredDims,
    sigma: &CMatrix,
    d_out: usize,
    opts: &MajorizeOptions,
) -> Result<MajorizationDecision> {
    let out_dims = FactoredDims::new(dims.a, d_out)?;
    let mut best_res = f64::INFINITY;
    let mut best_gap = f64::NEG_INFINITY;
    let mut distance_lower = 0.0;
    let mut reason = String::new();

    let majorized = |ch: Channel, res: f64| MajorizationDecision {
        verdict: Verdict::Majorized(ch),
        feas_residual: res,
        witness_gap: 0.0,
    };
    let not_majorized = |w: Witness, res: f64| MajorizationDecision {
        witness_gap: w.gap(),
        verdict: Verdict::NotMajorized(w),
        feas_residual: res,
    };

    match feasibility(rho, dims, sigma, d_out)? {
        Feasibility::Feasible(ch) => {
            let res = residual(&ch, rho, dims, sigma);
            if res <= opts.decision_tol && ch.validate_default().is_cptp() {
                return Ok(majorized(ch, res));
            }
            best_res = res;
            reason.push_str("feasibility solve left residual; ");
        }
        Feasibility::Separated(w) => match extract_witness_general(&w, rho, sigma, out_dims, opts.witness_min_gap)? {
            WitnessAttempt::Verified(wit) => return Ok(not_majorized(wit, f64::INFINITY)),
            WitnessAttempt::Unverified { best_gap: g, .. } => {
                best_gap = best_gap.max(g);
                reason.push_str("Farkas witness failed verification; ");
            }
        },
        Feasibility::Unclear => reason.push_str("feasibility solve inaccurate; "),
    }

    // Fall back to the distance SDP, which always has a strictly feasible
    // point and yields a bounded separating operator.
    match conversion_distance(rho, dims, sigma, d_out) {
        Ok(dist) => {
            let res = residual(&dist.channel, rho, dims, sigma);
            best_res = best_res.min(res);
            distance_lower = dist.lower;
            if res <= opts.decision_tol && dist.channel.validate_default().is_cptp() {
                return Ok(majorized(dist.channel, res));
            }
            if dist.lower > 0.0 {
                match extract_witness_general(&dist.separator, rho, sigma, out_dims, opts.witness_min_gap)? {
                    WitnessAttempt::Verified(wit) => return Ok(not_majorized(wit, res)),
                    WitnessAttempt::Unverified { best_gap: g, .. } => {
                        best_gap = best_gap.max(g);
                        reason.push_str("distance witness failed verification");
                    }
                }
            } else {
                reason.push_str("distance lower bound not positive");
            }
        }
        Err(e) => reason.push_str(&format!("distance solve failed: {e}")),
    }
    Ok(MajorizationDecision {
        verdict: Verdict::Undecided(Margins {
            feas_residual: best_res,
            distance_lower,
            witness_gap: best_gap.max(0.0),
            reason,
        }),
        feas_residual: best_res,
        witness_gap: best_gap.max(0.0),
    })
}

/// Decides whether `σ = (id⊗Φ)(ρ)` for some CPTP `Φ` on the factor given
/// by `opts.factor`, returning the channel or a verified witness.
///
/// Math: quantum majorization decided by channel feasibility or an entanglement-breaking min-entropy witness
pub fn is_majorized(
    rho: &BipartiteState,
    sigma: &BipartiteState,
    opts: &MajorizeOptions,
) -> Result<MajorizationDecision> {
    if rho.dims() != sigma.dims() {
        return Err(Error::DimensionMismatch(format!(
            "states have dims ({}, {}) and ({}, {})",
            rho.dims().a,
            rho.dims().b,
            sigma.dims().a,
            sigma.dims().b
        )));
    }
    let dims = rho.dims();
    match opts.factor {
        Factor::B => decide(rho.matrix(), dims, sigma.matrix(), dims.b, opts),
        Factor::A => {
            let r = swap_factors(rho.matrix(), dims)?;
            let s = swap_factors(sigma.matrix(), dims)?;
            let mut d = decide(&r, dims.swapped(), &s, dims.a, opts)?;
            if let Verdict::NotMajorized(w) = &mut d.verdict {
                w.acts_on = Factor::B;
                w.raw_dual =
                    HermitianOperator::hermitian_part_of(&swap_factors(w.raw_dual.as_matrix(), dims.swapped())?);
            }
            Ok(d)
        }
    }
}

/// Recomputes the `H_min` values of a witness from scratch.
pub fn verify_witness(w: &Witness, rho: &BipartiteState, sigma: &BipartiteState) -> Result<(f64, f64)> {
    let dims = rho.dims();
    match w.acts_on {
        Factor::A => witness_hmins(&w.eb_channel, rho.matrix(), sigma.matrix(), dims),
        Factor::B => {
            let r = swap_factors(rho.matrix(), dims)?;
            let s = swap_factors(sigma.matrix(), dims)?;
            witness_hmins(&w.eb_channel, &r, &s, dims.swapped())
        }
    }
}

/// Pairs `(ρ_i, σ_i)` for family convertibility.
#[derive(Debug, Clone)]
pub struct FamilyInstance {
    pairs: Vec<(CMatrix, CMatrix)>,
    weights: Vec<f64>,
    d_in: usize,
    d_out: usize,
}

impl FamilyInstance {
    /// Validates densities and weights; weights default to uniform and
    /// must be positive for every pair used.
    pub fn new(pairs: Vec<(CMatrix, CMatrix)>, weights: Option<Vec<f64>>) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty family".into()))?;
        let (d_in, d_out) = (first.0.nrows(), first.1.nrows());
        for (r, s) in &pairs {
            if r.nrows() != d_in || s.nrows() != d_out {
                return Err(Error::DimensionMismatch("family members have inconsistent dims".into()));
            }
            linalg::check_density(&HermitianOperator::new(r.clone())?)?;
            linalg::check_density(&HermitianOperator::new(s.clone())?)?;
        }
        let n = pairs.len();
        let weights = match weights {
            None => vec![1.0 / n as f64; n],
            Some(w) => {
                if w.len() != n {
                    return Err(Error::InvalidParameter(format!("{} weights for {n} pairs", w.len())));
                }
                let total: f64 = w.iter().sum();
                if w.iter().any(|v| !v.is_finite() || *v <= 0.0) || (total - 1.0).abs() > tol::DENSITY_TOL {
                    return Err(Error::InvalidParameter("weights must be positive and sum to 1".into()));
                }
                w
            }
        };
        Ok(Self {
            pairs,
            weights,
            d_in,
            d_out,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(CMatrix, CMatrix)] {
        &self.pairs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The sub-instance on the given indices, with renormalized weights.
    pub fn subfamily(&self, idx: &[usize]) -> Result<Self> {
        let total: f64 = idx.iter().map(|&i| self.weights[i]).sum();
        Self::new(
            idx.iter().map(|&i| self.pairs[i].clone()).collect(),
            Some(idx.iter().map(|&i| self.weights[i] / total).collect()),
        )
    }

    /// `Σ_i μ_i |i⟩⟨i|⊗ρ_i` and `Σ_i μ_i |i⟩⟨i|⊗σ_i`.
    pub fn classical_embedding(&self) -> (CMatrix, CMatrix) {
        let n = self.len();
        let mut r = CMatrix::zeros(n * self.d_in, n * self.d_in);
        let mut s = CMatrix::zeros(n * self.d_out, n * self.d_out);
        for (i, ((ri, si), mu)) in self.pairs.iter().zip(&self.weights).enumerate() {
            let e = linalg::matrix_unit(n, i, i) * cr(*mu);
            r += tensor(&e, ri);
            s += tensor(&e, si);
        }
        (r, s)
    }
}

/// Decision for a state family, with the witness read as a weighted
/// ensemble `(λ_i, ω_i)` when negative.
#[derive(Debug, Clone)]
pub struct FamilyDecision {
    pub decision: MajorizationDecision,
    /// `λ_i` and `ω_i = Ψ(|i⟩⟨i|)`, for which
    /// `H_min(A|B)` of `Σ λ_i ω_i⊗ρ_i` exceeds that of `Σ λ_i ω_i⊗σ_i`.
    pub ensemble: Option<(Vec<f64>, Vec<CMatrix>)>,
}

/// Decides whether one CPTP map sends every `ρ_i` to `σ_i`.
///
/// Math: family convertibility and its weighted-ensemble min-entropy witness
pub fn convert_family(inst: &FamilyInstance, opts: &MajorizeOptions) -> Result<FamilyDecision> {
    let (d_in, d_out) = (inst.d_in, inst.d_out);
    let n = inst.len();
    let mut p = SdpProblem::new(Sense::Minimize);
    let j = p.add_psd_var("J", d_in * d_out);
    p.add_eq_constraint(
        "Tr_out J = I",
        vec![(j, LinearMap::id().ptrace(&[d_in, d_out], &[1]))],
        linalg::identity(d_in),
    );
    let single = FactoredDims { a: 1, b: d_in };
    let eqs: Vec<_> = inst
        .pairs
        .iter()
        .enumerate()
        .map(|(i, (r, s))| {
            p.add_eq_constraint(
                &format!("Phi(rho_{i}) = sigma_{i}"),
                vec![(j, conversion_map(r, single, d_out))],
                s.clone(),
            )
        })
        .collect();
    let sol = p.solve_default()?;
    let (r_hat, s_hat) = inst.classical_embedding();
    let dims_hat = FactoredDims::new(n, d_in)?;
    let out_hat = FactoredDims::new(n, d_out)?;

    let family_residual = |ch: &Channel| -> f64 {
        inst.pairs
            .iter()
            .map(|(r, s)| trace_norm(&(s - ch.apply(r).expect("dims"))))
            .fold(0.0, f64::max)
    };
    let ensemble_of = |w: &Witness| -> (Vec<f64>, Vec<CMatrix>) {
        let omegas = (0..n)
            .map(|i| w.eb_channel.apply(&linalg::matrix_unit(n, i, i)).expect("dims"))
            .collect();
        (inst.weights.clone(), omegas)
    };

    match sol.status {
        SdpStatus::Optimal => {
            let ch = repair_choi(sol.var(j), d_in, d_out);
            let res = family_residual(&ch);
            if res <= opts.decision_tol && ch.validate_default().is_cptp() {
                return Ok(FamilyDecision {
                    decision: MajorizationDecision {
                        verdict: Verdict::Majorized(ch),
                        feas_residual: res,
                        witness_gap: 0.0,
                    },
                    ensemble: None,
                });
            }
        }
        SdpStatus::Infeasible => {
            let mut w = CMatrix::zeros(out_hat.total(), out_hat.total());
            for (i, e) in eqs.iter().enumerate() {
                let ei = linalg::matrix_unit(n, i, i) * cr(1.0 / inst.weights[i]);
                w += tensor(&ei, sol.eq_dual(*e));
            }
            if let WitnessAttempt::Verified(wit) =
                extract_witness_general(&w, &r_hat, &s_hat, out_hat, opts.witness_min_gap)?
            {
                let ens = ensemble_of(&wit);
                return Ok(FamilyDecision {
                    decision: MajorizationDecision {
                        witness_gap: wit.gap(),
                        verdict: Verdict::NotMajorized(wit),
                        feas_residual: f64::INFINITY,
                    },
                    ensemble: Some(ens),
                });
            }
        }
        _ => {}
    }
    // The embedded majorization problem is equivalent; use its fallbacks.
    let mut d = decide(&r_hat, dims_hat, &s_hat, d_out, opts)?;
    if let Verdict::Majorized(ch) = &d.verdict {
        d.feas_residual = family_residual(ch);
        if d.feas_residual > opts.decision_tol {
            d.verdict = Verdict::Undecided(Margins {
                feas_residual: d.feas_residual,
                distance_lower: 0.0,
                witness_gap: 0.0,
                reason: "embedded channel misses a family member".into(),
            });
        }
    }
    let ensemble = d.witness().map(ensemble_of);
    Ok(FamilyDecision { decision: d, ensemble })
}

/// Result of scanning subfamilies.
#[derive(Debug, Clone)]
pub struct SubfamilyReport {
    pub full: VerdictKind,
    /// Every subfamily checked, in scan order.
    pub checked: Vec<(Vec<usize>, VerdictKind)>,
    /// First subfamily found not convertible.
    pub first_obstruction: Option<Vec<usize>>,
    /// Subfamilies reported not convertible although the full family is.
    pub violations: usize,
}

impl SubfamilyReport {
    /// Full feasibility implies feasibility of every subfamily.
    pub fn consistent(&self) -> bool {
        self.violations == 0
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k == 0 || k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let mut i = k;
        while i > 0 && cur[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        cur[i - 1] += 1;
        for j in i..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Runs [`convert_family`] on every proper subfamily of size at most
/// `k_max` (by size, then lexicographically) and on the full family.
///
/// Math: convertibility of a family reduces to its finite subfamilies
pub fn finite_subfamily_scan(inst: &FamilyInstance, k_max: usize, opts: &MajorizeOptions) -> Result<SubfamilyReport> {
    let n = inst.len();
    let full = convert_family(inst, opts)?.decision.kind();
    let mut checked = Vec::new();
    let mut first_obstruction = None;
    let mut violations = 0;
    for k in 1..=k_max.min(n.saturating_sub(1)) {
        for idx in combinations(n, k) {
            let kind = convert_family(&inst.subfamily(&idx)?, opts)?.decision.kind();
            if kind == VerdictKind::NotMajorized {
                if first_obstruction.is_none() {
                    first_obstruction = Some(idx.clone());
                }
                if full == VerdictKind::Majorized {
                    violations += 1;
                }
            }
            checked.push((idx, kind));
        }
    }
    if first_obstruction.is_none() && full == VerdictKind::NotMajorized {
        first_obstruction = Some((0..n).collect());
    }
    Ok(SubfamilyReport {
        full,
        checked,
        first_obstruction,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, real_matrix};
    use proptest::prelude::*;

    fn mat(n: usize, m: usize) -> impl Strategy<Value = CMatrix> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * m)
            .prop_map(move |v| CMatrix::from_row_slice(n, m, &v.iter().map(|(r, i)| c(*r, *i)).collect::<Vec<_>>()))
    }

    fn density(n: usize) -> impl Strategy<Value = CMatrix> {
        mat(n, n).prop_map(|g| {
            let r = &g * g.adjoint() + linalg::identity(g.nrows()) * cr(1e-2);
            let t = r.trace();
            linalg::hermitian_part(&(r / t)).into_inner()
        })
    }

    fn cptp(d_in: usize, d_out: usize) -> impl Strategy<Value = Channel> {
        proptest::collection::vec(mat(d_out, d_in), 2).prop_map(move |ks| {
            let s: CMatrix = ks
                .iter()
                .map(|k| k.adjoint() * k)
                .fold(CMatrix::zeros(d_in, d_in), |a, b| a + b);
            let n = linalg::inv_sqrt_floor(&s, 1e-12);
            let ks: Vec<CMatrix> = ks.iter().map(|k| k * &n).collect();
            channel::choi_from_kraus(&ks).unwrap()
        })
    }

    fn st(m: CMatrix, a: usize, b: usize) -> BipartiteState {
        BipartiteState::new(m, FactoredDims::new(a, b).unwrap()).unwrap()
    }

    #[test]
    fn conversion_map_matches_channel_action() {
        let dims = FactoredDims::new(2, 2).unwrap();
        let rho = linalg::max_entangled(2) * cr(0.7) + linalg::maximally_mixed(4) * cr(0.3);
        let ch = channel::depolarizing(2, 0.4).unwrap();
        let lhs = conversion_map(&rho, dims, 2).eval(ch.choi()).unwrap();
        let (rhs, _) = ch.apply_to_factor(&rho, dims, Factor::B).unwrap();
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn identical_states_are_majorized() {
        let rho = st(
            linalg::max_entangled(2) * cr(0.6) + linalg::maximally_mixed(4) * cr(0.4),
            2,
            2,
        );
        let d = is_majorized(&rho, &rho, &MajorizeOptions::default()).unwrap();
        assert_eq!(d.kind(), VerdictKind::Majorized);
        assert!(d.feas_residual <= 1e-8, "{}", d.feas_residual);
    }

    #[test]
    fn replacement_target_is_majorized() {
        let rho = st(linalg::max_entangled(2), 2, 2);
        let omega = real_matrix(2, 2, &[0.3, 0.2, 0.2, 0.7]);
        let sigma = st(tensor(&linalg::maximally_mixed(2), &omega), 2, 2);
        let d = is_majorized(&rho, &sigma, &MajorizeOptions::default()).unwrap();
        assert_eq!(d.kind(), VerdictKind::Majorized);
        let ch = d.channel().unwrap();
        assert!(ch.validate_default().is_cptp());
    }

    #[test]
    fn product_cannot_become_entangled() {
        let rho = st(linalg::maximally_mixed(4), 2, 2);
        let sigma = st(linalg::max_entangled(2), 2, 2);
        let d = is_majorized(&rho, &sigma, &MajorizeOptions::default()).unwrap();
        let w = d.witness().expect("witness");
        assert!(w.gap() >= tol::WITNESS_MIN_GAP);
        assert_eq!(w.eb_channel.validate_default().eb, Some(true));
        assert!(w.eb_channel.validate_default().is_cptp());
        let (hr, hs) = verify_witness(w, &rho, &sigma).unwrap();
        assert!(hr - hs >= tol::WITNESS_MIN_GAP);
    }

    #[test]
    fn factor_a_flag_mirrors_factor_b() {
        let omega = real_matrix(2, 2, &[0.3, 0.2, 0.2, 0.7]);
        let rho = st(linalg::max_entangled(2), 2, 2);
        let sigma = st(tensor(&omega, &linalg::maximally_mixed(2)), 2, 2);
        let opts = MajorizeOptions {
            factor: Factor::A,
            ..Default::default()
        };
        let d = is_majorized(&rho, &sigma, &opts).unwrap();
        assert_eq!(d.kind(), VerdictKind::Majorized);
        let (out, _) = d
            .channel()
            .unwrap()
            .apply_to_factor(rho.matrix(), rho.dims(), Factor::A)
            .unwrap();
        assert!(trace_norm(&(out - sigma.matrix())) < 1e-6);

        let prod = st(linalg::maximally_mixed(4), 2, 2);
        let d = is_majorized(&prod, &rho, &opts).unwrap();
        let w = d.witness().expect("witness");
        assert_eq!(w.acts_on, Factor::B);
        let (hr, hs) = verify_witness(w, &prod, &rho).unwrap();
        assert!(hr - hs >= tol::WITNESS_MIN_GAP);
    }

    #[test]
    fn unequal_marginals_take_projection_branch() {
        let rho = st(
            tensor(&real_matrix(2, 2, &[0.9, 0.0, 0.0, 0.1]), &linalg::maximally_mixed(2)),
            2,
            2,
        );
        let sigma = st(
            tensor(&real_matrix(2, 2, &[0.2, 0.0, 0.0, 0.8]), &linalg::maximally_mixed(2)),
            2,
            2,
        );
        let d = is_majorized(&rho, &sigma, &MajorizeOptions::default()).unwrap();
        let w = d.witness().expect("witness");
        assert_eq!(w.branch, WitnessBranch::MarginalProjection);
    }

    #[test]
    fn equal_marginal_instance_takes_deficit_branch() {
        // maximally mixed A-marginals on both sides, entanglement created
        let rho = st(
            linalg::max_entangled(2) * cr(0.2) + linalg::maximally_mixed(4) * cr(0.8),
            2,
            2,
        );
        let sigma = st(
            linalg::max_entangled(2) * cr(0.9) + linalg::maximally_mixed(4) * cr(0.1),
            2,
            2,
        );
        let d = is_majorized(&rho, &sigma, &MajorizeOptions::default()).unwrap();
        let w = d.witness().expect("witness");
        assert_eq!(w.branch, WitnessBranch::DeficitCompletion);
        assert!(w.eb_channel.validate_default().is_cptp());
    }

    #[test]
    fn positive_input_needs_no_shift() {
        let dims = FactoredDims::new(2, 2).unwrap();
        let a = real_matrix(2, 2, &[0.7, 0.1, 0.1, 0.3]);
        let b = real_matrix(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        let split = positive_split(&tensor(&a, &b), dims).unwrap();
        assert_eq!(split.shift, 0.0);
        let rebuilt = split
            .terms
            .iter()
            .fold(CMatrix::zeros(4, 4), |acc, (c, d)| acc + tensor(c, d));
        assert!((rebuilt - tensor(&a, &b)).norm() < 1e-12);
    }

    #[test]
    fn family_examples() {
        let p0 = real_matrix(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let p1 = real_matrix(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let plus = real_matrix(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let opts = MajorizeOptions::default();
        let inst = FamilyInstance::new(vec![(p0.clone(), p0.clone()), (p1.clone(), p1.clone())], None).unwrap();
        assert_eq!(
            convert_family(&inst, &opts).unwrap().decision.kind(),
            VerdictKind::Majorized
        );
        // measure and prepare sends orthogonal inputs anywhere
        let inst = FamilyInstance::new(vec![(p0.clone(), plus.clone()), (p1.clone(), p0.clone())], None).unwrap();
        assert_eq!(
            convert_family(&inst, &opts).unwrap().decision.kind(),
            VerdictKind::Majorized
        );
        // one input cannot go to two outputs
        let pi = linalg::maximally_mixed(2);
        let inst = FamilyInstance::new(vec![(pi.clone(), p0.clone()), (pi.clone(), plus.clone())], None).unwrap();
        let fd = convert_family(&inst, &opts).unwrap();
        assert_eq!(fd.decision.kind(), VerdictKind::NotMajorized);
        let (lam, omegas) = fd.ensemble.unwrap();
        // recompute the ensemble inequality directly
        let dims = FactoredDims::new(2, 2).unwrap();
        let mut x = CMatrix::zeros(4, 4);
        let mut y = CMatrix::zeros(4, 4);
        for ((l, w), (r, s)) in lam.iter().zip(&omegas).zip(inst.pairs()) {
            x += tensor(w, r) * cr(*l);
            y += tensor(w, s) * cr(*l);
        }
        let hx = entropy::hmin_of(&x, dims).unwrap().value_bits;
        let hy = entropy::hmin_of(&y, dims).unwrap().value_bits;
        assert!(hx - hy >= tol::WITNESS_MIN_GAP);
    }

    #[test]
    fn scan_single_pair_equals_convert() {
        let p0 = real_matrix(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let pi = linalg::maximally_mixed(2);
        let inst = FamilyInstance::new(vec![(pi, p0)], None).unwrap();
        let opts = MajorizeOptions::default();
        let rep = finite_subfamily_scan(&inst, 3, &opts).unwrap();
        assert!(rep.checked.is_empty());
        assert_eq!(rep.full, convert_family(&inst, &opts).unwrap().decision.kind());
    }

    #[test]
    fn scan_locates_pair_obstruction() {
        let p0 = real_matrix(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let p1 = real_matrix(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let pi = linalg::maximally_mixed(2);
        let inst =
            FamilyInstance::new(vec![(p0.clone(), p0.clone()), (pi.clone(), p0.clone()), (pi, p1)], None).unwrap();
        let rep = finite_subfamily_scan(&inst, 2, &MajorizeOptions::default()).unwrap();
        assert_eq!(rep.full, VerdictKind::NotMajorized);
        assert_eq!(rep.first_obstruction, Some(vec![0, 2]));
        assert!(rep.consistent());
    }

    #[test]
    fn combinations_in_lexicographic_order() {
        assert_eq!(
            combinations(4, 2),
            vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]
        );
        assert!(combinations(2, 3).is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn pairing_operator_matches_direct(w in mat(4, 4), rho in density(4), ch in cptp(2, 2)) {
            let dims = FactoredDims::new(2, 2).unwrap();
            let w = linalg::hermitian_part(&w).into_inner();
            let m = pairing_operator(&w, &rho, dims, 2).unwrap();
            let (out, _) = ch.apply_to_factor(&rho, dims, Factor::B).unwrap();
            let direct = linalg::pair(&w, &out);
            prop_assert!((linalg::pair(&m, ch.choi()) - direct).abs() < 1e-10);
        }

        #[test]
        fn sup_pairing_dominates_samples(w in mat(4, 4), rho in density(4), ch in cptp(2, 2)) {
            let dims = FactoredDims::new(2, 2).unwrap();
            let w = linalg::hermitian_part(&w);
            let state = st(rho.clone(), 2, 2);
            let (v, best) = sup_pairing(&w, &state).unwrap();
            let (out, _) = ch.apply_to_factor(&rho, dims, Factor::B).unwrap();
            prop_assert!(v >= linalg::pair(w.as_matrix(), &out) - 1e-7);
            let (bo, _) = best.apply_to_factor(&rho, dims, Factor::B).unwrap();
            prop_assert!((linalg::pair(w.as_matrix(), &bo) - v).abs() < 1e-5);
        }

        #[test]
        fn shift_cancels_in_separation(w in mat(4, 4), rho in density(4), sigma in density(4)) {
            let dims = FactoredDims::new(2, 2).unwrap();
            let w = linalg::hermitian_part(&w);
            let split = positive_split(w.as_matrix(), dims).unwrap();
            let w4 = split.terms.iter().fold(CMatrix::zeros(4, 4), |acc, (c, d)| acc + tensor(c, d));
            prop_assert!((&w4 - (w.as_matrix() + linalg::identity(4) * cr(split.shift))).norm() < 1e-10);
            for (c, d) in &split.terms {
                prop_assert!(linalg::is_psd_matrix(c, 1e-12) && linalg::is_psd_matrix(d, 1e-12));
            }
            let rs = st(rho, 2, 2);
            let (s1, _) = sup_pairing(&w, &rs).unwrap();
            let (s4, _) = sup_pairing(&HermitianOperator::hermitian_part_of(&w4), &rs).unwrap();
            let sep = linalg::pair(w.as_matrix(), &sigma) - s1;
            let sep4 = linalg::pair(&w4, &sigma) - s4;
            prop_assert!((sep - sep4).abs() <= 1e-7 * (1.0 + split.shift));
        }

        #[test]
        fn planted_instances_are_majorized(rho in density(4), ch in cptp(2, 2)) {
            let dims = FactoredDims::new(2, 2).unwrap();
            let (sigma, _) = ch.apply_to_factor(&rho, dims, Factor::B).unwrap();
            let sigma = linalg::hermitian_part(&sigma).into_inner();
            let d = is_majorized(&st(rho.clone(), 2, 2), &st(sigma.clone(), 2, 2), &MajorizeOptions::default()).unwrap();
            prop_assert_ne!(d.kind(), VerdictKind::NotMajorized);
            if let Some(c) = d.channel() {
                let (out, _) = c.apply_to_factor(&rho, dims, Factor::B).unwrap();
                prop_assert!(trace_norm(&(out - sigma)) <= 1e-6);
            }
        }
    }
}
