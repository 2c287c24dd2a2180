//! Reproducible instance generators and brute-force verifiers that do not
//! go through the conic solver they are used to check.

use std::collections::BTreeMap;

use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use serde::Serialize;

use crate::channel::{self, Channel};
use crate::entropy;
use crate::error::{Error, Result};
use crate::linalg::{self, c, cr, tensor, trace_norm, BipartiteState, CMatrix, Factor, FactoredDims, C64};
use crate::majorize::{self, MajorizeOptions, VerdictKind};

/// Seed of every generator here; equal seeds give bit-identical output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Seed(pub u64);

impl Seed {
    /// Independent sub-seed for shard or instance `index` (SplitMix64).
    pub fn derive(self, index: u64) -> Seed {
        let mut z = self
            .0
            .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Seed(z ^ (z >> 31))
    }
}

/// PCG-64 stream with uniform and Gaussian draws.
pub struct OracleRng {
    rng: Pcg64,
    spare: Option<f64>,
}

impl OracleRng {
    pub fn new(seed: Seed) -> Self {
        Self {
            rng: Pcg64::seed_from_u64(seed.0),
            spare: None,
        }
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by the Box–Muller transform.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, co) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * co
    }

    /// Standard complex Gaussian, `E|z|² = 1`.
    pub fn complex_normal(&mut self) -> C64 {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        c(self.normal() * h, self.normal() * h)
    }

    pub fn ginibre(&mut self, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| self.complex_normal())
    }
}

/// `G G†/Tr` with `G` a `d×rank` complex Gaussian matrix.
pub fn random_density(d: usize, rank: usize, seed: Seed) -> Result<CMatrix> {
    if d == 0 || rank == 0 || rank > d {
        return Err(Error::InvalidParameter(format!(
            "need 1 ≤ rank ≤ d, got d={d}, rank={rank}"
        )));
    }
    let g = OracleRng::new(seed).ginibre(d, rank);
    let r = &g * g.adjoint();
    let t = r.trace().re;
    Ok(linalg::hermitian_part(&(r / cr(t))).into_inner())
}

/// Haar isometry `d_in → rows` from the QR factorization of a Gaussian
/// matrix with the phases of `R` fixed.
fn haar_isometry(rows: usize, d_in: usize, rng: &mut OracleRng) -> CMatrix {
    let g = rng.ginibre(rows, d_in);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d_in {
        let z = r[(j, j)];
        let ph = if z.norm() > 0.0 { z / cr(z.norm()) } else { cr(1.0) };
        for i in 0..rows {
            q[(i, j)] *= ph;
        }
    }
    q
}

/// Kraus operators `K_k[i,j] = V[i·env + k, j]` of a Haar isometry
/// `V: d_in → d_out⊗env`.
pub fn random_kraus(d_in: usize, d_out: usize, env: usize, seed: Seed) -> Result<Vec<CMatrix>> {
    if d_in == 0 || d_out == 0 || env == 0 || d_out * env < d_in {
        return Err(Error::InvalidParameter(format!(
            "no isometry from dim {d_in} into {d_out}·{env}"
        )));
    }
    let v = haar_isometry(d_out * env, d_in, &mut OracleRng::new(seed));
    Ok((0..env)
        .map(|k| CMatrix::from_fn(d_out, d_in, |i, j| v[(i * env + k, j)]))
        .collect())
}

/// Channel `ρ ↦ Tr_env VρV†` for a Haar isometry `V`.
pub fn random_cptp(d_in: usize, d_out: usize, env: usize, seed: Seed) -> Result<Channel> {
    channel::choi_from_kraus(&random_kraus(d_in, d_out, env, seed)?)
}

/// Haar unitary of size `d`.
pub fn random_unitary(d: usize, seed: Seed) -> CMatrix {
    haar_isometry(d, d, &mut OracleRng::new(seed))
}

/// `(id⊗Φ)(ρ)` or `(Φ⊗id)(ρ)` from Kraus operators, without the Choi matrix.
pub fn apply_kraus(kraus: &[CMatrix], rho: &CMatrix, dims: FactoredDims, which: Factor) -> CMatrix {
    let lift = |k: &CMatrix| match which {
        Factor::A => tensor(k, &linalg::identity(dims.b)),
        Factor::B => tensor(&linalg::identity(dims.a), k),
    };
    kraus.iter().fold(CMatrix::zeros(0, 0), |acc, k| {
        let l = lift(k);
        let term = &l * rho * l.adjoint();
        if acc.nrows() == 0 {
            term
        } else {
            acc + term
        }
    })
}

/// `t(r) = λ_max((1⊗ω_r)^{-1/2} ρ (1⊗ω_r)^{-1/2})` for the qubit state
/// `ω_r = (1 + r·σ)/2`, the least scale making `t·1⊗ω_r` dominate `ρ`.
fn scale_for(rho: &CMatrix, d_a: usize, r: [f64; 3]) -> f64 {
    let n = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    let cap = 1.0 - 1e-9;
    let r = if n > cap { r.map(|x| x * cap / n) } else { r };
    let w = (linalg::identity(2)
        + linalg::pauli_x() * cr(r[0])
        + linalg::pauli_y() * cr(r[1])
        + linalg::pauli_z() * cr(r[2]))
        * cr(0.5);
    let (vals, vecs) = linalg::eigh(&w);
    let inv = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        2,
        vals.iter().map(|v| cr(1.0 / v.max(1e-300).sqrt())),
    ));
    let k = tensor(&linalg::identity(d_a), &(&vecs * inv * vecs.adjoint()));
    linalg::max_eigenvalue(&linalg::hermitian_part(&(&k * rho * &k)).into_inner())
}

/// `min{Tr ω : 1⊗ω ⪰ ρ}` for a qubit `B`, by scanning `resolution` points
/// of the Bloch ball and refining the best one with a pattern search.
///
/// Math: conditional min-entropy re-evaluated by direct search over ω
pub fn grid_hmin(rho: &CMatrix, dims: FactoredDims, resolution: usize) -> Result<f64> {
    if dims.b != 2 {
        return Err(Error::InvalidParameter(format!(
            "grid search needs d_B = 2, got {}",
            dims.b
        )));
    }
    if rho.nrows() != dims.total() {
        return Err(Error::DimensionMismatch("state does not match dims".into()));
    }
    let resolution = resolution.max(8);
    let shells = ((resolution as f64).cbrt().ceil() as usize).max(2);
    let per_shell = (resolution / shells).max(4);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut best = ([0.0; 3], scale_for(rho, dims.a, [0.0; 3]));
    for s in 1..=shells {
        let radius = s as f64 / shells as f64;
        for i in 0..per_shell {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / per_shell as f64;
            let rr = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let r = [radius * rr * phi.cos(), radius * rr * phi.sin(), radius * z];
            let v = scale_for(rho, dims.a, r);
            if v < best.1 {
                best = (r, v);
            }
        }
    }
    let mut step = 1.0 / shells as f64;
    while step > 1e-10 {
        let mut improved = false;
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut r = best.0;
                r[axis] += sign * step;
                let n = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                if n > 1.0 {
                    r = r.map(|x| x / n);
                }
                let v = scale_for(rho, dims.a, r);
                if v < best.1 {
                    best = (r, v);
                    improved = true;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    Ok(best.1)
}

/// Largest `‖(id⊗(T−S))(ψψ†)‖₁` over random and locally improved pure
/// inputs `ψ` on `input⊗input`, evaluated through Kraus operators.
pub fn diamond_lower_bound(kraus_t: &[CMatrix], kraus_s: &[CMatrix], samples: usize, seed: Seed) -> f64 {
    let d = kraus_t[0].ncols();
    let dims = FactoredDims { a: d, b: d };
    let value = |psi: &CMatrix| {
        let n = psi.norm();
        let p = psi / cr(n);
        let rho = &p * p.adjoint();
        trace_norm(&(apply_kraus(kraus_t, &rho, dims, Factor::B) - apply_kraus(kraus_s, &rho, dims, Factor::B)))
    };
    let mut rng = OracleRng::new(seed);
    let mut best_psi = rng.ginibre(d * d, 1);
    let mut best = value(&best_psi);
    for _ in 1..samples {
        let psi = rng.ginibre(d * d, 1);
        let v = value(&psi);
        if v > best {
            best = v;
            best_psi = psi;
        }
    }
    let mut step = 0.5;
    while step > 1e-7 {
        let mut improved = false;
        for _ in 0..8 {
            let cand = &best_psi / cr(best_psi.norm()) + rng.ginibre(d * d, 1) * cr(step);
            let v = value(&cand);
            if v > best {
                best = v;
                best_psi = cand;
                improved = true;
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    best
}

/// Smallest `‖σ − (id⊗Φ)ρ‖₁` over random channels, an upper bound on the
/// optimal conversion error.
pub fn conversion_error_search(
    rho: &CMatrix,
    sigma: &CMatrix,
    dims: FactoredDims,
    samples: usize,
    seed: Seed,
) -> Result<f64> {
    let mut best = f64::INFINITY;
    for i in 0..samples as u64 {
        let env = 1 + (i as usize % (dims.b * dims.b));
        let k = random_kraus(dims.b, dims.b, env, seed.derive(i))?;
        best = best.min(trace_norm(&(sigma - apply_kraus(&k, rho, dims, Factor::B))));
    }
    Ok(best)
}

/// Largest `Tr(W (id⊗Φ)ρ)` over random channels.
pub fn pairing_search(w: &CMatrix, rho: &CMatrix, dims: FactoredDims, samples: usize, seed: Seed) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for i in 0..samples as u64 {
        let env = 1 + (i as usize % (dims.b * dims.b));
        let k = random_kraus(dims.b, dims.b, env, seed.derive(i))?;
        best = best.max(linalg::pair(w, &apply_kraus(&k, rho, dims, Factor::B)));
    }
    Ok(best)
}

/// Best lower bound `2(λ_S − λ_T)/λ(ρ)` on the least post-factorization
/// error over random densities `ρ` on `input⊗input`.
pub fn post_factor_error_search(t: &Channel, s: &Channel, samples: usize, seed: Seed) -> Result<f64> {
    let d = t.d_in();
    let dims = FactoredDims::new(d, d)?;
    let mut best: f64 = 0.0;
    for i in 0..samples as u64 {
        let rank = 1 + (i as usize % (d * d));
        let rho = random_density(d * d, rank, seed.derive(i))?;
        let (xs, ds) = s.apply_to_factor(&rho, dims, Factor::B)?;
        let (xt, dt) = t.apply_to_factor(&rho, dims, Factor::B)?;
        let ls = entropy::hmin_of(&linalg::hermitian_part(&xs).into_inner(), ds)?.lambda;
        let lt = entropy::hmin_of(&linalg::hermitian_part(&xt).into_inner(), dt)?.lambda;
        let lr = entropy::hmin_of(&rho, dims)?.lambda;
        best = best.max(2.0 * (ls - lt) / lr);
    }
    Ok(best)
}

/// Counts and worst margins of one property suite. Holds no timing data so
/// equal seeds give byte-identical JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub n: usize,
    pub seed: u64,
    pub passed: usize,
    pub failed: usize,
    /// Smallest margin by which a check passed (negative when one failed).
    pub worst_margin: Option<f64>,
    pub failure_seeds: Vec<u64>,
    /// Named tallies, such as verdict counts.
    pub counts: BTreeMap<String, usize>,
}

impl SuiteReport {
    fn new(suite: &str, n: usize, seed: Seed) -> Self {
        Self {
            suite: suite.into(),
            n,
            seed: seed.0,
            passed: 0,
            failed: 0,
            worst_margin: None,
            failure_seeds: Vec::new(),
            counts: BTreeMap::new(),
        }
    }

    fn record(&mut self, margin: f64, seed: Seed) {
        self.worst_margin = Some(self.worst_margin.map_or(margin, |w| w.min(margin)));
        if margin >= 0.0 {
            self.passed += 1;
        } else {
            self.failed += 1;
            self.failure_seeds.push(seed.0);
        }
    }

    fn tally(&mut self, key: &str) {
        *self.counts.entry(key.into()).or_insert(0) += 1;
    }

    pub fn count(&self, key: &str) -> usize {
        self.counts.get(key).copied().unwrap_or(0)
    }
}

/// Dims `(d_A, d_B)` with each factor 2 or 3, drawn from the seed.
fn small_dims(seed: Seed) -> FactoredDims {
    let mut rng = OracleRng::new(seed);
    let a = 2 + (rng.uniform() * 2.0) as usize;
    let b = 2 + (rng.uniform() * 2.0) as usize;
    FactoredDims { a, b }
}

/// Data processing and strong duality of `H_min` on `n` random instances.
///
/// Math: min-entropy never decreases under a channel on the conditioning factor
pub fn monotonicity_suite(n: usize, seed: Seed) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("monotonicity", n, seed);
    for i in 0..n as u64 {
        let s = seed.derive(i);
        let dims = small_dims(s.derive(0));
        let rho = random_density(dims.total(), 1 + (i as usize % dims.total()), s.derive(1))?;
        let state = BipartiteState::new(rho.clone(), dims)?;
        let k = random_kraus(dims.b, dims.b, 1 + (i as usize % 3), s.derive(2))?;
        let out = linalg::hermitian_part(&apply_kraus(&k, &rho, dims, Factor::B)).into_inner();
        let h0 = entropy::hmin(&state)?;
        let h1 = entropy::hmin_of(&out, dims)?;
        rep.record(h1.value_bits - h0.value_bits + 1e-6, s);
        let (dual, _) = entropy::hmin_dual(&state)?;
        rep.record(1e-6 - (dual - h0.lambda).abs(), s);
    }
    Ok(rep)
}

/// Planted-feasible and planted-infeasible majorization instances with
/// `d_A = d_B = 2`; checks soundness of every verdict.
pub fn majorization_roundtrip_suite(n: usize, seed: Seed) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("majorization_roundtrip", n, seed);
    let dims = FactoredDims::new(2, 2)?;
    let opts = MajorizeOptions::default();
    for i in 0..n as u64 {
        let s = seed.derive(i);
        if i % 2 == 0 {
            let rho = random_density(4, 1 + (i as usize / 2) % 4, s.derive(1))?;
            let k = random_kraus(2, 2, 1 + (i as usize / 2) % 3, s.derive(2))?;
            let sigma = linalg::hermitian_part(&apply_kraus(&k, &rho, dims, Factor::B)).into_inner();
            let d = majorize::is_majorized(
                &BipartiteState::new(rho.clone(), dims)?,
                &BipartiteState::new(sigma.clone(), dims)?,
                &opts,
            )?;
            rep.tally(&format!("planted_feasible_{}", d.kind().word()));
            let margin = match d.channel() {
                Some(ch) => {
                    let out = apply_kraus(&kraus_of(ch), &rho, dims, Factor::B);
                    opts.decision_tol - trace_norm(&(out - sigma))
                }
                None if d.kind() == VerdictKind::NotMajorized => -1.0,
                None => 0.0,
            };
            rep.record(margin, s);
        } else {
            let (rho, sigma) = planted_infeasible(s)?;
            let (rs, ss) = (
                BipartiteState::new(rho.clone(), dims)?,
                BipartiteState::new(sigma.clone(), dims)?,
            );
            let d = majorize::is_majorized(&rs, &ss, &opts)?;
            rep.tally(&format!("planted_infeasible_{}", d.kind().word()));
            let margin = match d.witness() {
                Some(w) => {
                    let (hr, hs) = majorize::verify_witness(w, &rs, &ss)?;
                    hr - hs - opts.witness_min_gap
                }
                None if d.kind() == VerdictKind::Majorized => -1.0,
                None => 0.0,
            };
            rep.record(margin, s);
        }
    }
    Ok(rep)
}

/// Separable `ρ` and an entangled `σ` (negative partial transpose), so no
/// local channel on `B` maps one to the other.
pub fn planted_infeasible(seed: Seed) -> Result<(CMatrix, CMatrix)> {
    let mut rng = OracleRng::new(seed.derive(0));
    let terms = 1 + (rng.uniform() * 3.0) as usize;
    let mut rho = CMatrix::zeros(4, 4);
    for t in 0..terms as u64 {
        let a = random_density(2, 1 + (t as usize % 2), seed.derive(10 + t))?;
        let b = random_density(2, 1 + (t as usize % 2), seed.derive(20 + t))?;
        rho += tensor(&a, &b) / cr(terms as f64);
    }
    let dims = FactoredDims { a: 2, b: 2 };
    for attempt in 0..64u64 {
        let u = random_unitary(2, seed.derive(100 + attempt));
        let v = random_unitary(2, seed.derive(200 + attempt));
        let p = 0.75 + 0.25 * rng.uniform();
        let local = tensor(&u, &v);
        let ent = &local * linalg::max_entangled(2) * local.adjoint();
        let sigma = ent * cr(p) + random_density(4, 4, seed.derive(300 + attempt))? * cr(1.0 - p);
        let sigma = linalg::hermitian_part(&sigma).into_inner();
        if linalg::min_eigenvalue(&linalg::partial_transpose(&sigma, dims, Factor::B)?) < -1e-2 {
            return Ok((rho, sigma));
        }
    }
    Err(Error::InvalidParameter("could not draw an entangled target".into()))
}

/// Like [`planted_infeasible`] but with equal `A`-marginals: `ρ = π⊗τ` and
/// `σ = p·(U⊗V)Φ⁺(U⊗V)† + (1−p)·π⊗ω`, both with `A`-marginal `π`.
pub fn planted_infeasible_matched(seed: Seed) -> Result<(CMatrix, CMatrix)> {
    let dims = FactoredDims { a: 2, b: 2 };
    let pi = linalg::maximally_mixed(2);
    let rho = tensor(&pi, &random_density(2, 1 + (seed.0 % 2) as usize, seed.derive(1))?);
    let mut rng = OracleRng::new(seed.derive(0));
    for attempt in 0..64u64 {
        let local = tensor(
            &random_unitary(2, seed.derive(100 + attempt)),
            &random_unitary(2, seed.derive(200 + attempt)),
        );
        let p = 0.6 + 0.4 * rng.uniform();
        let ent = &local * linalg::max_entangled(2) * local.adjoint();
        let junk = tensor(&pi, &random_density(2, 2, seed.derive(300 + attempt))?);
        let sigma = linalg::hermitian_part(&(ent * cr(p) + junk * cr(1.0 - p))).into_inner();
        if linalg::min_eigenvalue(&linalg::partial_transpose(&sigma, dims, Factor::B)?) < -1e-2 {
            return Ok((rho, sigma));
        }
    }
    Err(Error::InvalidParameter("could not draw an entangled target".into()))
}

/// Kraus operators of a CP map from the eigendecomposition of its Choi
/// matrix, for independent re-application.
pub fn kraus_of(ch: &Channel) -> Vec<CMatrix> {
    let (vals, vecs) = linalg::eigh(ch.choi());
    let (d_in, d_out) = (ch.d_in(), ch.d_out());
    vals.iter()
        .enumerate()
        .filter(|(_, v)| **v > 1e-14)
        .map(|(k, v)| {
            let s = v.sqrt();
            // J = Σ |K⟩⟩⟨⟨K| with |K⟩⟩ = Σ_i e_i⊗K e_i
            CMatrix::from_fn(d_out, d_in, |o, i| vecs[(i * d_out + o, k)] * cr(s))
        })
        .collect()
}
