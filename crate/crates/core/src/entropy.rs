//! Conditional min-entropy and the norms built from it.
//!
//! `λ(x) = min{Tr ω : 1_A⊗ω ⪰ x}` over Hermitian `ω` on `B`, and for a
//! density `ρ`, `H_min(A|B)_ρ = −log₂ λ(ρ)`.

use crate::conic::{LinearMap, SdpProblem, SdpSolution, Sense};
use crate::error::{Error, Result};
use crate::linalg::{self, partial_trace, BipartiteState, CMatrix, Factor, FactoredDims, HermitianOperator};
use crate::tol;

#[derive(Debug, Clone)]
pub struct HminResult {
    /// `−log₂ lambda`.
    pub value_bits: f64,
    /// `min Tr ω` subject to `ρ ⪯ 1_A⊗ω`.
    pub lambda: f64,
    pub optimal_omega: CMatrix,
    /// PSD operator on `A⊗B` with `Tr_A X = I_B` and `Tr(Xρ) ≈ lambda`.
    pub dual_x: CMatrix,
    pub gap: f64,
}

/// Primal SDP `min Tr ω s.t. 1_A⊗ω − x ⪰ 0`.
fn lambda_sdp(x: &CMatrix, dims: FactoredDims) -> Result<(SdpSolution, crate::conic::VarId, crate::conic::PsdId)> {
    if x.nrows() != dims.total() || x.ncols() != dims.total() {
        return Err(Error::DimensionMismatch(format!(
            "operator is {}x{}, dims ({}, {})",
            x.nrows(),
            x.ncols(),
            dims.a,
            dims.b
        )));
    }
    let mut p = SdpProblem::new(Sense::Minimize);
    let w = p.add_var("omega", dims.b);
    p.add_objective(w, linalg::identity(dims.b));
    let k = p.add_psd_constraint("1⊗ω ⪰ x", vec![(w, LinearMap::id().kron_left(dims.a))], -x.clone());
    let sol = p.solve_default()?.require_optimal("min-entropy SDP")?;
    Ok((sol, w, k))
}

/// Conditional min-entropy of a density operator, with primal and dual
/// certificates.
///
/// Math: conditional min-entropy as the least trace of a dominating 1⊗ω
pub fn hmin(rho: &BipartiteState) -> Result<HminResult> {
    hmin_of(rho.matrix(), rho.dims())
}

/// [`hmin`] on a raw operator, checked to be a density within
/// [`tol::DENSITY_TOL`].
pub fn hmin_of(rho: &CMatrix, dims: FactoredDims) -> Result<HminResult> {
    let h = HermitianOperator::new(rho.clone())?;
    linalg::check_density(&h)?;
    let (sol, w, k) = lambda_sdp(h.as_matrix(), dims)?;
    let lambda = sol.primal_value;
    Ok(HminResult {
        value_bits: -lambda.log2(),
        lambda,
        optimal_omega: sol.var(w).clone(),
        dual_x: sol.psd_dual(k).clone(),
        gap: sol.gap,
    })
}

/// `max{Tr(Xρ) : X ⪰ 0, Tr_A X = I_B}`, solved as its own SDP.
///
/// Math: min-entropy as a supremum over positive X with unit B-marginal
pub fn hmin_dual(rho: &BipartiteState) -> Result<(f64, CMatrix)> {
    let dims = rho.dims();
    let mut p = SdpProblem::new(Sense::Maximize);
    let x = p.add_psd_var("X", dims.total());
    p.add_objective(x, rho.matrix().clone());
    p.add_eq_constraint(
        "Tr_A X = I",
        vec![(x, LinearMap::id().ptrace(&dims.as_slice(), &[0]))],
        linalg::identity(dims.b),
    );
    let sol = p.solve_default()?.require_optimal("min-entropy dual SDP")?;
    Ok((sol.primal_value, sol.var(x).clone()))
}

/// `min{Tr ω : 1_A⊗ω ⪰ x}` for any Hermitian `x`. For PSD `x` this is the
/// projective tensor norm; otherwise only a lower bound for it.
///
/// Math: extension of the min-entropy functional to self-adjoint operators
pub fn lambda_selfadjoint(x: &HermitianOperator, dims: FactoredDims) -> Result<f64> {
    Ok(lambda_sdp(x.as_matrix(), dims)?.0.primal_value)
}

/// `min{Tr ω : 1_A⊗ω ⪰ x}` with its optimal `ω`.
pub(crate) fn lambda_with_omega(x: &CMatrix, dims: FactoredDims) -> Result<(f64, CMatrix)> {
    let (sol, w, _) = lambda_sdp(x, dims)?;
    Ok((sol.primal_value, sol.var(w).clone()))
}

/// `λ_max(Tr_B x)`, the supremum of `Tr((a†a⊗1)x)` over `‖a‖₂ = 1`.
///
/// Math: vector-valued L-infinity(L1) norm of a positive operator
pub fn linfl1_norm(x: &HermitianOperator, dims: FactoredDims) -> Result<f64> {
    if !linalg::is_psd(x, tol::DENSITY_TOL) {
        return Err(Error::NotPsd(x.min_eigenvalue()));
    }
    let m = partial_trace(x.as_matrix(), dims, Factor::B)?;
    Ok(linalg::max_eigenvalue(&m))
}

/// `−log₂ λ`.
pub fn bits(lambda: f64) -> f64 {
    -lambda.log2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{self, Channel};
    use crate::linalg::{c, cr, tensor, C64};
    use proptest::prelude::*;

    fn mat(n: usize, m: usize) -> impl Strategy<Value = CMatrix> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * m)
            .prop_map(move |v| CMatrix::from_row_slice(n, m, &v.iter().map(|(r, i)| c(*r, *i)).collect::<Vec<_>>()))
    }

    fn density(n: usize) -> impl Strategy<Value = CMatrix> {
        mat(n, n).prop_map(|g| {
            let r = &g * g.adjoint() + linalg::identity(g.nrows()) * cr(1e-3);
            let t = r.trace();
            r / t
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

    fn unitary(n: usize) -> impl Strategy<Value = CMatrix> {
        mat(n, n).prop_map(|g| g.qr().q())
    }

    fn state(m: CMatrix, a: usize, b: usize) -> BipartiteState {
        BipartiteState::new(m, FactoredDims::new(a, b).unwrap()).unwrap()
    }

    #[test]
    fn product_with_maximally_mixed_a_gives_one_bit() {
        let sigma = linalg::real_matrix(3, 3, &[0.5, 0.1, 0.0, 0.1, 0.3, 0.05, 0.0, 0.05, 0.2]);
        let rho = state(tensor(&linalg::maximally_mixed(2), &sigma), 2, 3);
        let r = hmin(&rho).unwrap();
        assert!((r.value_bits - 1.0).abs() < 1e-6, "{}", r.value_bits);
        assert!((r.lambda - 0.5).abs() < 1e-7);
        assert!((&r.optimal_omega - &sigma * cr(0.5)).norm() < 1e-6);
    }

    #[test]
    fn max_entangled_gives_minus_one_bit() {
        let rho = state(linalg::max_entangled(2), 2, 2);
        let r = hmin(&rho).unwrap();
        assert!((r.value_bits + 1.0).abs() < 1e-6);
        assert!((r.lambda * 2f64.powf(r.value_bits) - 1.0).abs() < 1e-9);
        let ptr = partial_trace(&r.dual_x, rho.dims(), Factor::A).unwrap();
        assert!((ptr - linalg::identity(2)).norm() < 1e-6);
        assert!(linalg::trace_product(&r.dual_x, rho.matrix()).re >= r.lambda - 1e-6);
        let (v, x) = hmin_dual(&rho).unwrap();
        assert!((v - 2.0).abs() < 1e-6);
        assert!((x - linalg::max_entangled(2) * cr(2.0)).norm() < 1e-4);
    }

    #[test]
    fn trivial_a_system_gives_zero() {
        let rho = state(linalg::real_matrix(2, 2, &[0.3, 0.1, 0.1, 0.7]), 1, 2);
        let r = hmin(&rho).unwrap();
        assert!((r.lambda - 1.0).abs() < 1e-7);
        assert!(r.value_bits.abs() < 1e-6);
    }

    #[test]
    fn dual_of_product_state() {
        let sigma = linalg::real_matrix(2, 2, &[0.8, 0.0, 0.0, 0.2]);
        let rho = state(tensor(&linalg::maximally_mixed(3), &sigma), 3, 2);
        let (v, _) = hmin_dual(&rho).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn lambda_of_minus_identity() {
        let dims = FactoredDims::new(2, 3).unwrap();
        let x = HermitianOperator::new(-linalg::identity(6)).unwrap();
        assert!((lambda_selfadjoint(&x, dims).unwrap() + 3.0).abs() < 1e-6);
    }

    #[test]
    fn lambda_of_a_tensor_identity() {
        // 1⊗ω ⪰ a⊗1 forces ω ⪰ λ_max(a)·1, so the value is d_B·λ_max(a)
        let a = linalg::real_matrix(2, 2, &[0.3, -0.4, -0.4, -0.5]);
        let dims = FactoredDims::new(2, 2).unwrap();
        let x = HermitianOperator::new(tensor(&a, &linalg::identity(2))).unwrap();
        let want = 2.0 * linalg::max_eigenvalue(&a);
        assert!((lambda_selfadjoint(&x, dims).unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn linfl1_examples() {
        let dims = FactoredDims::new(2, 2).unwrap();
        let sigma = linalg::real_matrix(2, 2, &[0.6, 0.1, 0.1, 0.4]);
        let x = HermitianOperator::new(tensor(&linalg::identity(2), &sigma)).unwrap();
        assert!((linfl1_norm(&x, dims).unwrap() - 1.0).abs() < 1e-12);
        let phi = HermitianOperator::new(linalg::max_entangled(2)).unwrap();
        assert!((linfl1_norm(&phi, dims).unwrap() - 0.5).abs() < 1e-12);
        let neg = HermitianOperator::new(-linalg::identity(4)).unwrap();
        assert!(linfl1_norm(&neg, dims).is_err());
    }

    #[test]
    fn hmin_rejects_non_density() {
        let dims = FactoredDims::new(2, 2).unwrap();
        assert!(hmin_of(&(linalg::identity(4) * cr(0.5)), dims).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn strong_duality(rho in density(6)) {
            let st = state(rho, 2, 3);
            let p = hmin(&st).unwrap();
            let (d, x) = hmin_dual(&st).unwrap();
            prop_assert!((p.lambda - d).abs() <= 1e-6);
            prop_assert!(linalg::is_psd_matrix(&x, 1e-8));
            // ρ ⪯ 1⊗ω
            let slack = tensor(&linalg::identity(2), &p.optimal_omega) - st.matrix();
            prop_assert!(linalg::is_psd_matrix(&slack, tol::FEAS_TOL));
        }

        #[test]
        fn data_processing_on_b(rho in density(4), ch in cptp(2, 2)) {
            let st = state(rho, 2, 2);
            let (out, nd) = ch.apply_to_factor(st.matrix(), st.dims(), Factor::B).unwrap();
            let before = hmin(&st).unwrap().value_bits;
            let after = hmin_of(&linalg::hermitian_part(&out).into_inner(), nd).unwrap().value_bits;
            prop_assert!(after >= before - 1e-6, "{after} < {before}");
        }

        #[test]
        fn local_unitary_invariance(rho in density(4), u in unitary(2), v in unitary(2)) {
            let st = state(rho.clone(), 2, 2);
            let w = tensor(&u, &v);
            let rot = linalg::hermitian_part(&(&w * &rho * w.adjoint())).into_inner();
            let a = hmin(&st).unwrap().value_bits;
            let b = hmin_of(&rot, st.dims()).unwrap().value_bits;
            prop_assert!((a - b).abs() <= 1e-7 * (1.0 + a.abs()) + 1e-7);
        }

        #[test]
        fn unitary_on_b_preserves(rho in density(4), v in unitary(2)) {
            let st = state(rho.clone(), 2, 2);
            let ch = channel::unitary(&v).unwrap();
            let (out, nd) = ch.apply_to_factor(st.matrix(), st.dims(), Factor::B).unwrap();
            let a = hmin(&st).unwrap().value_bits;
            let b = hmin_of(&linalg::hermitian_part(&out).into_inner(), nd).unwrap().value_bits;
            prop_assert!((a - b).abs() <= 1e-6);
        }

        #[test]
        fn subadditivity(x in mat(4, 4), y in mat(4, 4)) {
            let dims = FactoredDims::new(2, 2).unwrap();
            let hx = linalg::hermitian_part(&x);
            let hy = linalg::hermitian_part(&y);
            let hs = linalg::hermitian_part(&(hx.as_matrix() + hy.as_matrix()));
            let lx = lambda_selfadjoint(&hx, dims).unwrap();
            let ly = lambda_selfadjoint(&hy, dims).unwrap();
            let ls = lambda_selfadjoint(&hs, dims).unwrap();
            prop_assert!(ls <= lx + ly + 1e-8 * (1.0 + lx.abs() + ly.abs()));
        }

        #[test]
        fn psd_scaling_identity(g in mat(4, 4), s in 0.1f64..5.0) {
            let dims = FactoredDims::new(2, 2).unwrap();
            let x = &g * g.adjoint() * cr(s);
            let t = x.trace().re;
            let lx = lambda_selfadjoint(&HermitianOperator::hermitian_part_of(&x), dims).unwrap();
            let rho = linalg::hermitian_part(&(x / C64::new(t, 0.0))).into_inner();
            let lh = hmin_of(&rho, dims).unwrap().lambda;
            prop_assert!((lx - lh * t).abs() <= 1e-6 * (1.0 + lx.abs()));
        }

        #[test]
        fn linfl1_dominates_samples(g in mat(4, 4), a in mat(2, 2)) {
            let dims = FactoredDims::new(2, 2).unwrap();
            let x = HermitianOperator::hermitian_part_of(&(&g * g.adjoint()));
            let n = linfl1_norm(&x, dims).unwrap();
            let an = a.norm();
            prop_assume!(an > 1e-3);
            let a = a / cr(an);
            let aa = a.adjoint() * &a;
            let v = linalg::trace_product(&tensor(&aa, &linalg::identity(2)), x.as_matrix()).re;
            prop_assert!(v <= n + 1e-10);
        }
    }
}
