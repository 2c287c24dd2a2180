//! Approximate majorization and factorization: diamond norm, least
//! conversion error, and the slack inequalities that follow from a small
//! error.

use crate::channel::{self, Channel};
use crate::conic::{LinearMap, SdpProblem, SdpStatus, Sense};
use crate::entropy;
use crate::error::{Error, Result};
use crate::linalg::{
    self, c, cr, partial_trace, trace_norm, BipartiteState, CMatrix, Factor, FactoredDims, HermitianOperator,
};
use crate::majorize::{self, repair_choi};
use crate::tol;

/// Optimal error with the optimizer and the dual data bounding it.
#[derive(Debug, Clone)]
pub struct ApproxResult {
    pub delta_star: f64,
    /// Dual objective, a certified lower bound up to solver accuracy.
    pub lower: f64,
    pub optimizer: Channel,
    /// Dual operator certifying `lower`.
    pub certificate: CMatrix,
    pub gap: f64,
}

fn check_choi_dims(j: &HermitianOperator, d_in: usize, d_out: usize) -> Result<()> {
    if j.dim() != d_in * d_out || d_in == 0 || d_out == 0 {
        return Err(Error::DimensionMismatch(format!(
            "Choi matrix has dim {}, expected {d_in}·{d_out}",
            j.dim()
        )));
    }
    Ok(())
}

/// Diamond norm of the Hermitian-preserving map with Choi matrix `j` on
/// `input⊗output`, from the SDP
/// `max Re Tr(J X) s.t. [[ρ₀⊗1, X], [X†, ρ₁⊗1]] ⪰ 0` over densities `ρ₀, ρ₁`.
///
/// Math: diamond (completely bounded trace) norm of a Hermitian-preserving map
pub fn diamond_norm(j: &HermitianOperator, d_in: usize, d_out: usize) -> Result<f64> {
    check_choi_dims(j, d_in, d_out)?;
    let n = d_in * d_out;
    let mut p = SdpProblem::new(Sense::Maximize);
    let r0 = p.add_psd_var("rho0", d_in);
    let r1 = p.add_psd_var("rho1", d_in);
    let h1 = p.add_var("Re X", n);
    let h2 = p.add_var("Im X", n);
    p.add_objective(h1, j.as_matrix().clone());
    for r in [r0, r1] {
        p.add_eq_constraint(
            "Tr rho = 1",
            vec![(r, LinearMap::id().trace())],
            CMatrix::identity(1, 1),
        );
    }
    let i_n = linalg::identity(n) * c(0.0, 1.0);
    p.add_psd_constraint(
        "block PSD",
        vec![
            (r0, LinearMap::id().kron_right(d_out).block(2 * n, 0, 0)),
            (r1, LinearMap::id().kron_right(d_out).block(2 * n, n, n)),
            (h1, LinearMap::id().block(2 * n, 0, n)),
            (h2, LinearMap::id().left(i_n).block(2 * n, 0, n)),
        ],
        CMatrix::zeros(2 * n, 2 * n),
    );
    let sol = p.solve_default()?.require_optimal("diamond norm SDP")?;
    Ok(sol.primal_value.max(0.0))
}

/// `2·max{Tr(J W) : 0 ⪯ W ⪯ ω⊗1, Tr ω ≤ 1}`, equal to the diamond norm for
/// maps that annihilate the trace, such as differences of channels.
///
/// Math: diamond norm of a channel difference as a supremum over positive inputs bounded by ω⊗1
pub fn diamond_norm_sup_form(j: &HermitianOperator, d_in: usize, d_out: usize) -> Result<f64> {
    check_choi_dims(j, d_in, d_out)?;
    let tr_out = partial_trace(j.as_matrix(), FactoredDims::new(d_in, d_out)?, Factor::B)?;
    if tr_out.norm() > 1e-8 * (1.0 + j.as_matrix().norm()) {
        return Err(Error::InvalidParameter(
            "sup form needs a trace-annihilating map".into(),
        ));
    }
    let n = d_in * d_out;
    let mut p = SdpProblem::new(Sense::Maximize);
    let w = p.add_psd_var("W", n);
    let om = p.add_psd_var("omega", d_in);
    p.add_objective(w, j.as_matrix() * cr(2.0));
    p.add_psd_constraint(
        "omega⊗1 - W ⪰ 0",
        vec![
            (om, LinearMap::id().kron_right(d_out)),
            (w, LinearMap::id().scale(-1.0)),
        ],
        CMatrix::zeros(n, n),
    );
    p.add_psd_constraint(
        "Tr omega ≤ 1",
        vec![(om, LinearMap::id().trace().scale(-1.0))],
        CMatrix::identity(1, 1),
    );
    let sol = p.solve_default()?.require_optimal("diamond sup-form SDP")?;
    Ok(sol.primal_value.max(0.0))
}

/// `‖T − S‖⋄` for two channels with equal dims.
pub fn diamond_distance(t: &Channel, s: &Channel) -> Result<f64> {
    let diff = t.difference(s)?;
    diamond_norm(diff.choi_operator(), t.d_in(), t.d_out())
}

fn approx_from(
    status: SdpStatus,
    primal: f64,
    dual: f64,
    optimizer: Channel,
    certificate: CMatrix,
    what: &str,
) -> Result<ApproxResult> {
    match status {
        SdpStatus::Optimal => Ok(ApproxResult {
            delta_star: primal.max(0.0),
            lower: dual.max(0.0),
            optimizer,
            certificate,
            gap: (primal - dual).abs(),
        }),
        SdpStatus::Inaccurate => Err(Error::Inaccurate {
            message: format!("{what} solved only approximately"),
            lower: dual,
            upper: primal,
        }),
        other => Err(Error::Solver(format!("{what} reported {other:?}"))),
    }
}

/// `min_Φ ‖σ − (id⊗Φ)ρ‖₁` over CPTP `Φ` on `B`.
///
/// Math: least trace-norm error of converting one bipartite state into another
pub fn min_conversion_error(rho: &BipartiteState, sigma: &BipartiteState) -> Result<ApproxResult> {
    if rho.dims() != sigma.dims() {
        return Err(Error::DimensionMismatch("states have different dims".into()));
    }
    let dims = rho.dims();
    let d = majorize::conversion_distance(rho.matrix(), dims, sigma.matrix(), dims.b)?;
    approx_from(
        d.status,
        d.value,
        d.lower,
        d.channel,
        d.separator,
        "conversion error SDP",
    )
}

/// `min_Φ ‖S − Φ∘T‖⋄` as one SDP: `min 2t` subject to
/// `Z ⪰ J_S − J_{Φ∘T}`, `Z ⪰ 0`, `Tr_out Z ⪯ t·1`, `Φ` CPTP.
///
/// Math: least diamond-norm error of post-processing one channel into another
pub fn min_post_factor_error(t: &Channel, s: &Channel) -> Result<ApproxResult> {
    t.require_cptp(tol::CHANNEL_TOL)?;
    s.require_cptp(tol::CHANNEL_TOL)?;
    if t.d_in() != s.d_in() {
        return Err(Error::DimensionMismatch("T and S have different input dims".into()));
    }
    let (d_in, dm, d_out) = (t.d_in(), t.d_out(), s.d_out());
    let n = d_in * d_out;
    let mut p = SdpProblem::new(Sense::Minimize);
    let j = p.add_psd_var("J_Phi", dm * d_out);
    let z = p.add_psd_var("Z", n);
    let tv = p.add_var("t", 1);
    p.add_objective(tv, CMatrix::identity(1, 1) * cr(2.0));
    p.add_eq_constraint(
        "Tr_out J = I",
        vec![(j, LinearMap::id().ptrace(&[dm, d_out], &[1]))],
        linalg::identity(dm),
    );
    let k = p.add_psd_constraint(
        "Z - J_S + J_{Phi T} ⪰ 0",
        vec![
            (z, LinearMap::id()),
            (j, majorize::conversion_map(t.choi(), t.dims(), d_out)),
        ],
        -s.choi().clone(),
    );
    p.add_psd_constraint(
        "t - Tr_out Z ⪰ 0",
        vec![
            (tv, LinearMap::id().kron_left(d_in)),
            (z, LinearMap::id().ptrace(&[d_in, d_out], &[1]).scale(-1.0)),
        ],
        CMatrix::zeros(d_in, d_in),
    );
    let sol = p.solve_default()?;
    let phi = repair_choi(sol.var(j), dm, d_out);
    approx_from(
        sol.status,
        sol.primal_value,
        sol.dual_value,
        phi,
        sol.psd_dual(k).clone(),
        "post-factor error SDP",
    )
}

/// Evaluated sides of a slack inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlackCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// Multiplier of `δ/2` on the right-hand side.
    pub constant: f64,
    pub holds: bool,
}

/// Numerical allowance when comparing the two sides.
const SLACK_TOL: f64 = 1e-6;

fn lambda_of(x: &CMatrix, dims: FactoredDims) -> Result<f64> {
    Ok(entropy::hmin_of(&linalg::hermitian_part(x).into_inner(), dims)?.lambda)
}

/// Checks `λ((Ψ⊗id)σ) ≤ λ((Ψ⊗id)ρ) + (δ/2)·‖J_Ψ‖∞` for an error `δ`
/// achievable by a channel on `B`, where `λ = 2^{-H_min}`. The constant is
/// the largest value `λ((Ψ⊗id)X)` takes on positive `X` of unit trace.
///
/// Math: slack inequality implied by an approximate state conversion
pub fn check_apro1(rho: &BipartiteState, sigma: &BipartiteState, psi: &Channel, delta: f64) -> Result<SlackCheck> {
    if rho.dims() != sigma.dims() {
        return Err(Error::DimensionMismatch("states have different dims".into()));
    }
    let dims = rho.dims();
    if psi.d_in() != dims.a {
        return Err(Error::DimensionMismatch("witness channel must act on A".into()));
    }
    psi.require_cptp(tol::CHANNEL_TOL)?;
    let mism = trace_norm(&(rho.marginal(Factor::A) - sigma.marginal(Factor::A)));
    if mism > tol::DENSITY_TOL {
        return Err(Error::InvalidParameter(format!("A-marginals differ by {mism:.3e}")));
    }
    let (r, nd) = psi.apply_to_factor(rho.matrix(), dims, Factor::A)?;
    let (s, _) = psi.apply_to_factor(sigma.matrix(), dims, Factor::A)?;
    let constant = linalg::max_eigenvalue(psi.choi());
    let lhs = lambda_of(&s, nd)?;
    let rhs = lambda_of(&r, nd)? + 0.5 * delta * constant;
    Ok(SlackCheck {
        lhs,
        rhs,
        constant,
        holds: lhs <= rhs + SLACK_TOL,
    })
}

/// Checks `λ((id⊗S)ρ) ≤ λ((id⊗T)ρ) + (δ/2)·λ(ρ)` for `ρ` on
/// `reference⊗input`, where every `λ` conditions on the second factor and
/// `δ ≥ min_Φ ‖S − Φ∘T‖⋄`.
///
/// Math: slack inequality implied by an approximate channel factorization
pub fn check_apro2(t: &Channel, s: &Channel, rho: &BipartiteState, delta: f64) -> Result<SlackCheck> {
    if t.d_in() != s.d_in() || rho.dims().b != t.d_in() {
        return Err(Error::DimensionMismatch("state must live on reference⊗input".into()));
    }
    let dims = rho.dims();
    let (xs, ds) = s.apply_to_factor(rho.matrix(), dims, Factor::B)?;
    let (xt, dt) = t.apply_to_factor(rho.matrix(), dims, Factor::B)?;
    let constant = lambda_of(rho.matrix(), dims)?;
    let lhs = lambda_of(&xs, ds)?;
    let rhs = lambda_of(&xt, dt)? + 0.5 * delta * constant;
    Ok(SlackCheck {
        lhs,
        rhs,
        constant,
        holds: lhs <= rhs + SLACK_TOL,
    })
}

/// `sup{Tr(x(ρ−σ)) : 0 ⪯ x ⪯ 1}`, attained by the projector onto the
/// positive part of `ρ−σ`.
///
/// Math: trace distance as a supremum over effects
pub fn trace_dist_variational(rho: &CMatrix, sigma: &CMatrix) -> Result<f64> {
    if rho.shape() != sigma.shape() {
        return Err(Error::DimensionMismatch("operators have different sizes".into()));
    }
    let diff = linalg::hermitian_part(&(rho - sigma)).into_inner();
    Ok(linalg::positive_part(&diff).trace().re)
}

/// Bounds produced by alternating witness and channel rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxTrace {
    /// Best `‖σ − (id⊗Φ_k)ρ‖₁` over the channels visited.
    pub upper: f64,
    /// Value of the last restricted min-max problem.
    pub lower: f64,
    pub rounds: usize,
}

/// Cutting-plane check of the min-max exchange behind the conversion error:
/// the sup step takes the sign operator of the current residual, the inf
/// step minimizes the worst pairing over all witnesses collected so far.
pub fn alternating_minmax(
    rho: &BipartiteState,
    sigma: &BipartiteState,
    max_rounds: usize,
    tol: f64,
) -> Result<MinMaxTrace> {
    let dims = rho.dims();
    let db = dims.b;
    let map = majorize::conversion_map(rho.matrix(), dims, db);
    let mut phi = channel::identity(db);
    let mut witnesses: Vec<CMatrix> = Vec::new();
    let mut upper = f64::INFINITY;
    let mut lower = 0.0;
    for round in 1..=max_rounds {
        let (out, _) = phi.apply_to_factor(rho.matrix(), dims, Factor::B)?;
        let resid = linalg::hermitian_part(&(sigma.matrix() - out)).into_inner();
        upper = upper.min(trace_norm(&resid));
        if upper - lower <= tol {
            return Ok(MinMaxTrace {
                upper,
                lower,
                rounds: round,
            });
        }
        let (vals, vecs) = linalg::eigh(&resid);
        let signs = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            vals.len(),
            vals.iter().map(|v| cr(if *v >= 0.0 { 1.0 } else { -1.0 })),
        ));
        witnesses.push(&vecs * signs * vecs.adjoint());

        let mut p = SdpProblem::new(Sense::Minimize);
        let j = p.add_psd_var("J", db * db);
        let t = p.add_var("t", 1);
        p.add_objective(t, CMatrix::identity(1, 1));
        p.add_eq_constraint(
            "Tr_out J = I",
            vec![(j, LinearMap::id().ptrace(&[db, db], &[1]))],
            linalg::identity(db),
        );
        for w in &witnesses {
            let target = linalg::pair(w, sigma.matrix());
            p.add_psd_constraint(
                "t ≥ pairing",
                vec![(t, LinearMap::id()), (j, map.clone().left(w.clone()).trace())],
                CMatrix::identity(1, 1) * cr(-target),
            );
        }
        let sol = p.solve_default()?.require_optimal("restricted min-max SDP")?;
        lower = sol.primal_value.max(0.0);
        phi = repair_choi(sol.var(j), db, db);
    }
    Ok(MinMaxTrace {
        upper,
        lower,
        rounds: max_rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{pauli_z, real_matrix, tensor};
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

    fn st(m: CMatrix) -> BipartiteState {
        BipartiteState::new(m, FactoredDims::new(2, 2).unwrap()).unwrap()
    }

    #[test]
    fn diamond_of_zero_map_vanishes() {
        let t = channel::depolarizing(2, 0.3).unwrap();
        assert!(diamond_distance(&t, &t).unwrap() < 1e-6);
    }

    #[test]
    fn identity_against_phase_flip_is_two() {
        let z = channel::unitary(&pauli_z()).unwrap();
        let d = diamond_distance(&channel::identity(2), &z).unwrap();
        assert!((d - 2.0).abs() < 1e-6, "{d}");
        let diff = channel::identity(2).difference(&z).unwrap();
        let s = diamond_norm_sup_form(diff.choi_operator(), 2, 2).unwrap();
        assert!((s - 2.0).abs() < 1e-6, "{s}");
    }

    #[test]
    fn diamond_of_positive_map_is_its_trace_bound() {
        // for CP maps the diamond norm is ‖Tr_out J‖∞
        let t = channel::depolarizing(2, 0.5).unwrap().scaled(0.7);
        let d = diamond_norm(t.choi_operator(), 2, 2).unwrap();
        assert!((d - 0.7).abs() < 1e-6);
    }

    #[test]
    fn reachable_target_has_no_error() {
        let rho = st(linalg::max_entangled(2));
        let omega = real_matrix(2, 2, &[0.3, 0.2, 0.2, 0.7]);
        let sigma = st(tensor(&linalg::maximally_mixed(2), &omega));
        let r = min_conversion_error(&rho, &sigma).unwrap();
        assert!(r.delta_star <= 1e-6);
    }

    #[test]
    fn entangling_target_error_and_slack() {
        let rho = st(linalg::maximally_mixed(4));
        let sigma = st(linalg::max_entangled(2));
        let r = min_conversion_error(&rho, &sigma).unwrap();
        // best product approximation of the maximally entangled state
        assert!((r.delta_star - 1.5).abs() < 1e-5, "{}", r.delta_star);
        let chk = check_apro1(&rho, &sigma, &channel::identity(2), r.delta_star).unwrap();
        assert!(chk.holds, "{chk:?}");
        // the bound is tight here
        assert!((chk.lhs - chk.rhs).abs() < 1e-5);
        let strict = check_apro1(&rho, &sigma, &channel::identity(2), 0.0).unwrap();
        assert!(!strict.holds);
    }

    #[test]
    fn junk_admixture_error_is_bounded() {
        let eps = 0.05;
        let rho = linalg::max_entangled(2);
        let reach = tensor(&linalg::maximally_mixed(2), &real_matrix(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let junk = linalg::max_entangled(2);
        let sigma = &reach * cr(1.0 - eps) + junk * cr(eps);
        let r = min_conversion_error(&st(rho), &st(sigma)).unwrap();
        assert!(r.delta_star <= 2.0 * eps + 1e-6);
    }

    #[test]
    fn post_factor_error_cases() {
        let t = channel::depolarizing(2, 0.4).unwrap();
        assert!(min_post_factor_error(&t, &t).unwrap().delta_star <= 1e-6);
        let r = min_post_factor_error(&channel::dephasing(2), &channel::identity(2)).unwrap();
        assert!(r.delta_star > 0.1);
        assert!(r.optimizer.validate_default().is_cptp());
    }

    #[test]
    fn variational_trace_distance() {
        let p0 = real_matrix(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let p1 = real_matrix(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!((trace_dist_variational(&p0, &p1).unwrap() - 1.0).abs() < 1e-14);
        assert!(trace_dist_variational(&p0, &p0).unwrap().abs() < 1e-14);
    }

    #[test]
    fn marginal_mismatch_is_rejected() {
        let a = st(tensor(
            &real_matrix(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            &linalg::maximally_mixed(2),
        ));
        let b = st(linalg::maximally_mixed(4));
        assert!(check_apro1(&a, &b, &channel::identity(2), 0.1).is_err());
    }

    #[test]
    fn minmax_agrees_with_joint_sdp() {
        let rho = st(linalg::maximally_mixed(4));
        let sigma = st(linalg::max_entangled(2) * cr(0.8) + linalg::maximally_mixed(4) * cr(0.2));
        let r = min_conversion_error(&rho, &sigma).unwrap();
        let mm = alternating_minmax(&rho, &sigma, 60, 1e-5).unwrap();
        assert!((mm.upper - r.delta_star).abs() <= 2e-4, "{mm:?} vs {}", r.delta_star);
        assert!(mm.lower <= r.delta_star + 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn diamond_forms_agree(t in cptp(2), s in cptp(2)) {
            let diff = t.difference(&s).unwrap();
            let a = diamond_norm(diff.choi_operator(), 2, 2).unwrap();
            let b = diamond_norm_sup_form(diff.choi_operator(), 2, 2).unwrap();
            prop_assert!((a - b).abs() <= 1e-6, "{} vs {}", a, b);
            prop_assert!(a <= 2.0 + 1e-6);
        }

        #[test]
        fn trace_distance_matches_eigensolve(r in density(3), s in density(3)) {
            let v = trace_dist_variational(&r, &s).unwrap();
            prop_assert!((v - 0.5 * trace_norm(&(&r - &s))).abs() <= 1e-12);
        }

        #[test]
        fn apro2_holds_at_optimal_error(t in cptp(2), s in cptp(2), rho in density(4)) {
            let r = min_post_factor_error(&t, &s).unwrap();
            let chk = check_apro2(&t, &s, &st(rho), r.delta_star).unwrap();
            prop_assert!(chk.holds, "{:?}", chk);
        }
    }
}
