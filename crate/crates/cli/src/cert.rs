//! Certificate files and their offline re-verification. Verification uses
//! the library's own thresholds, never the ones recorded in the file, and
//! recomputes every claimed number from the inputs.

use std::collections::BTreeMap;

use qmaj::approx;
use qmaj::channel::{self, Channel};
use qmaj::entropy;
use qmaj::factorize::{self, FactorWitness, FactorWitnessKind, SeparableTerm};
use qmaj::linalg::{self, trace_norm, BipartiteState, CMatrix, Factor, FactoredDims, HermitianOperator};
use qmaj::majorize::{self, Witness, WitnessBranch};
use qmaj::oracle;
use qmaj::tol;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::format::MatrixFile;

/// Relative agreement required between a claimed number and its recomputation.
pub const CLAIM_TOL: f64 = 1e-5;

/// Agreement required between the grid search and the SDP for `λ` when the
/// conditioning system is a qubit.
pub const GRID_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverInfo {
    pub gap_tol: f64,
    pub decision_tol: f64,
    pub witness_min_gap: f64,
}

impl SolverInfo {
    pub fn current(decision_tol: f64) -> Self {
        Self {
            gap_tol: tol::gap_tol(),
            decision_tol,
            witness_min_gap: tol::WITNESS_MIN_GAP,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermRecord {
    pub weight: f64,
    pub reference: MatrixFile,
    pub input: MatrixFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WitnessRecord {
    /// Measure-and-prepare channel given by its POVM and prepared states.
    EbChannel {
        acts_on: String,
        branch: String,
        povm: Vec<MatrixFile>,
        states: Vec<MatrixFile>,
        hmin_rho: f64,
        hmin_sigma: f64,
    },
    /// Weights and states `ω_i` with `H_min` of `Σ λ_i ω_i⊗ρ_i` above that of `Σ λ_i ω_i⊗σ_i`.
    FamilyEnsemble {
        weights: Vec<f64>,
        omegas: Vec<MatrixFile>,
        hmin_rho: f64,
        hmin_sigma: f64,
    },
    SeparableState {
        terms: Vec<TermRecord>,
        lhs: f64,
        rhs: f64,
    },
    PositiveOperator {
        x: MatrixFile,
        lhs: f64,
        rhs: f64,
    },
    /// Primal and dual optimizers bracketing `λ`.
    HminDual {
        omega: MatrixFile,
        dual_x: MatrixFile,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub verdict: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<String>,
    /// Non-finite values are stored as `null`.
    pub margins: BTreeMap<String, Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<MatrixFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessRecord>,
    pub solver: SolverInfo,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl Certificate {
    pub fn new(command: &str, verdict: &str, solver: SolverInfo) -> Self {
        Self {
            tool: "qmaj".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            verdict: verdict.into(),
            factor: None,
            margins: BTreeMap::new(),
            channel: None,
            witness: None,
            solver,
            seeds: Vec::new(),
        }
    }

    pub fn margin(mut self, key: &str, v: f64) -> Self {
        self.margins.insert(key.into(), v.is_finite().then_some(v));
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("malformed certificate: {e}")))
    }

    fn claimed(&self, key: &str) -> CliResult<f64> {
        self.margins
            .get(key)
            .copied()
            .flatten()
            .ok_or_else(|| CliError::Input(format!("certificate lacks margin {key:?}")))
    }
}

pub fn factor_word(f: Factor) -> &'static str {
    match f {
        Factor::A => "A",
        Factor::B => "B",
    }
}

pub fn parse_factor(s: &str) -> CliResult<Factor> {
    match s {
        "A" | "a" => Ok(Factor::A),
        "B" | "b" => Ok(Factor::B),
        _ => Err(CliError::Input(format!("factor must be A or B, got {s:?}"))),
    }
}

fn branch_word(b: WitnessBranch) -> &'static str {
    match b {
        WitnessBranch::DeficitCompletion => "deficit_completion",
        WitnessBranch::MarginalProjection => "marginal_projection",
    }
}

/// Record of a majorization witness; requires the channel's ensemble.
pub fn eb_record(w: &Witness) -> CliResult<WitnessRecord> {
    let ens = w
        .eb_channel
        .ensemble()
        .ok_or_else(|| CliError::Solver("witness channel has no recorded ensemble".into()))?;
    Ok(WitnessRecord::EbChannel {
        acts_on: factor_word(w.acts_on).into(),
        branch: branch_word(w.branch).into(),
        povm: ens.povm.iter().cloned().map(MatrixFile::operator).collect(),
        states: ens.states.iter().cloned().map(MatrixFile::operator).collect(),
        hmin_rho: w.hmin_rho,
        hmin_sigma: w.hmin_sigma,
    })
}

pub fn factor_record(w: &FactorWitness) -> WitnessRecord {
    match &w.kind {
        FactorWitnessKind::SeparableState(terms) => WitnessRecord::SeparableState {
            terms: terms
                .iter()
                .map(|t| TermRecord {
                    weight: t.weight,
                    reference: MatrixFile::operator(t.reference.clone()),
                    input: MatrixFile::operator(t.input.clone()),
                })
                .collect(),
            lhs: w.lhs,
            rhs: w.rhs,
        },
        FactorWitnessKind::PositiveOperator(x) => WitnessRecord::PositiveOperator {
            x: MatrixFile::operator(x.clone()),
            lhs: w.lhs,
            rhs: w.rhs,
        },
    }
}

/// Outcome of [`verify`]: `Some(true)` verified, `Some(false)` refuted,
/// `None` when the certificate makes no checkable claim.
#[derive(Debug, Clone)]
pub struct Verification {
    pub verified: Option<bool>,
    pub margin: f64,
    pub notes: Vec<String>,
}

impl Verification {
    fn new() -> Self {
        Self {
            verified: Some(true),
            margin: f64::INFINITY,
            notes: Vec::new(),
        }
    }

    /// Records a check `margin ≥ 0`.
    fn check(&mut self, what: &str, margin: f64) {
        let ok = margin >= 0.0;
        self.margin = self.margin.min(margin);
        if !ok {
            self.verified = Some(false);
        }
        self.notes.push(format!(
            "{} {what} (margin {margin:.3e})",
            if ok { "ok" } else { "FAIL" }
        ));
    }

    fn fail(&mut self, what: String) {
        self.verified = Some(false);
        self.margin = self.margin.min(-1.0);
        self.notes.push(format!("FAIL {what}"));
    }
}

fn rel_agree(claimed: f64, actual: f64) -> f64 {
    CLAIM_TOL * (1.0 + actual.abs()) - (claimed - actual).abs()
}

/// Inputs to a certificate, already parsed.
pub enum Inputs {
    States(BipartiteState, BipartiteState),
    State(BipartiteState),
    Channels(Channel, Channel),
    Family(Vec<(CMatrix, CMatrix)>, Option<Vec<f64>>),
}

pub fn verify(cert: &Certificate, inputs: &Inputs) -> CliResult<Verification> {
    let mut v = Verification::new();
    if cert.verdict == "Undecided" {
        v.verified = None;
        v.notes.push("certificate records no decision".into());
        return Ok(v);
    }
    match (cert.command.as_str(), inputs) {
        ("hmin", Inputs::State(rho)) => verify_hmin(cert, rho, &mut v)?,
        ("majorize", Inputs::States(rho, sigma)) => verify_majorize(cert, rho, sigma, &mut v)?,
        ("convert-family", Inputs::Family(pairs, weights)) => verify_family(cert, pairs, weights.as_deref(), &mut v)?,
        ("factor-post" | "factor-pre", Inputs::Channels(t, s)) => verify_factor(cert, t, s, &mut v)?,
        ("diamond", Inputs::Channels(t, s)) => {
            let j = t.difference(s)?;
            let value = approx::diamond_norm_sup_form(j.choi_operator(), t.d_in(), t.d_out())?;
            v.check(
                "diamond norm matches the supremum form",
                rel_agree(cert.claimed("diamond_norm")?, value),
            );
        }
        ("approx-convert", Inputs::States(rho, sigma)) => {
            let ch = channel_of(cert)?;
            require_cptp(&ch, &mut v);
            if v.verified == Some(true) {
                let (out, _) = ch.apply_to_factor(rho.matrix(), rho.dims(), Factor::B)?;
                let err = trace_norm(&(sigma.matrix() - out));
                v.check(
                    "optimizer achieves delta_star",
                    cert.claimed("delta_star")? + tol::DECISION_TOL - err,
                );
            }
        }
        ("approx-factor", Inputs::Channels(t, s)) => {
            let ch = channel_of(cert)?;
            require_cptp(&ch, &mut v);
            if v.verified == Some(true) {
                let err = approx::diamond_distance(s, &channel::compose(&ch, t)?)?;
                v.check(
                    "optimizer achieves delta_star",
                    cert.claimed("delta_star")? + tol::DECISION_TOL - err,
                );
            }
        }
        (cmd, _) => return Err(CliError::Input(format!("inputs do not match a {cmd:?} certificate"))),
    }
    Ok(v)
}

fn channel_of(cert: &Certificate) -> CliResult<Channel> {
    cert.channel
        .clone()
        .ok_or_else(|| CliError::Input("certificate lacks a channel".into()))?
        .into_channel()
}

fn require_cptp(ch: &Channel, v: &mut Verification) {
    let val = ch.validate_default();
    if !val.is_cptp() {
        v.fail(format!("recorded channel is not CPTP (cp={}, tp={})", val.cp, val.tp));
    }
}

fn verify_hmin(cert: &Certificate, rho: &BipartiteState, v: &mut Verification) -> CliResult<()> {
    let Some(WitnessRecord::HminDual { omega, dual_x }) = &cert.witness else {
        return Err(CliError::Input("hmin certificate lacks its optimizers".into()));
    };
    let dims = rho.dims();
    let omega = linalg::hermitian_part(&omega.data).into_inner();
    let x = linalg::hermitian_part(&dual_x.data).into_inner();
    if omega.nrows() != dims.b || x.nrows() != dims.total() {
        return Err(CliError::Input("optimizer dims do not match the state".into()));
    }
    let dominance = linalg::tensor(&linalg::identity(dims.a), &omega) - rho.matrix();
    v.check("1⊗ω dominates ρ", linalg::min_eigenvalue(&dominance) + tol::FEAS_TOL);
    v.check("dual operator is positive", linalg::min_eigenvalue(&x) + tol::FEAS_TOL);
    let marg = linalg::partial_trace(&x, dims, Factor::A)?;
    v.check(
        "dual operator has unit marginal",
        tol::FEAS_TOL * 10.0 - (marg - linalg::identity(dims.b)).norm(),
    );
    let upper = omega.trace().re;
    let lower = linalg::pair(&x, rho.matrix());
    v.check(
        "primal and dual values meet",
        CLAIM_TOL * upper.abs().max(1.0) - (upper - lower),
    );
    v.check(
        "claimed lambda lies in the bracket",
        rel_agree(cert.claimed("lambda")?, 0.5 * (upper + lower)),
    );
    Ok(())
}

/// `λ` of a state conditioned on its first factor, with `Ψ` applied to it.
fn lambda_grid(state: &CMatrix, dims: FactoredDims) -> Option<f64> {
    (dims.b == 2)
        .then(|| oracle::grid_hmin(state, dims, 2000).ok())
        .flatten()
}

fn verify_majorize(
    cert: &Certificate,
    rho: &BipartiteState,
    sigma: &BipartiteState,
    v: &mut Verification,
) -> CliResult<()> {
    let factor = parse_factor(cert.factor.as_deref().unwrap_or("B"))?;
    match cert.verdict.as_str() {
        "Majorized" => {
            let ch = channel_of(cert)?;
            require_cptp(&ch, v);
            if v.verified == Some(true) {
                let (out, _) = ch.apply_to_factor(rho.matrix(), rho.dims(), factor)?;
                v.check(
                    "channel reproduces σ",
                    tol::DECISION_TOL - trace_norm(&(sigma.matrix() - out)),
                );
            }
        }
        "NotMajorized" => {
            let Some(WitnessRecord::EbChannel {
                acts_on,
                povm,
                states,
                hmin_rho,
                hmin_sigma,
                ..
            }) = &cert.witness
            else {
                return Err(CliError::Input("NotMajorized certificate lacks an EB witness".into()));
            };
            let acts_on = parse_factor(acts_on)?;
            if acts_on == factor {
                v.fail("witness acts on the same factor as the channel".into());
                return Ok(());
            }
            let povm: Vec<CMatrix> = povm.iter().map(|m| m.data.clone()).collect();
            let states: Vec<CMatrix> = states.iter().map(|m| m.data.clone()).collect();
            let psi = match channel::eb_from_ensemble(&povm, &states) {
                Ok(psi) => psi,
                Err(e) => {
                    v.fail(format!("witness ensemble is not a measure-and-prepare channel: {e}"));
                    return Ok(());
                }
            };
            let w = Witness {
                eb_channel: psi.clone(),
                acts_on,
                hmin_rho: *hmin_rho,
                hmin_sigma: *hmin_sigma,
                raw_dual: HermitianOperator::identity(1),
                branch: WitnessBranch::DeficitCompletion,
            };
            let (hr, hs) = majorize::verify_witness(&w, rho, sigma)?;
            v.check("H_min gap reaches the minimum", hr - hs - tol::WITNESS_MIN_GAP);
            v.check("claimed H_min of the ρ side", rel_agree(*hmin_rho, hr));
            v.check("claimed H_min of the σ side", rel_agree(*hmin_sigma, hs));
            for (name, state, h) in [("ρ", rho, hr), ("σ", sigma, hs)] {
                let (out, nd) = psi.apply_to_factor(state.matrix(), state.dims(), acts_on)?;
                let (out, nd) = match acts_on {
                    Factor::A => (out, nd),
                    Factor::B => (linalg::swap_factors(&out, nd)?, nd.swapped()),
                };
                let out = linalg::hermitian_part(&out).into_inner();
                if let Some(g) = lambda_grid(&out, nd) {
                    v.check(
                        &format!("grid search agrees on the {name} side"),
                        GRID_TOL - (g - (-h).exp2()).abs(),
                    );
                }
            }
        }
        other => return Err(CliError::Input(format!("unknown verdict {other:?}"))),
    }
    Ok(())
}

fn verify_family(
    cert: &Certificate,
    pairs: &[(CMatrix, CMatrix)],
    weights: Option<&[f64]>,
    v: &mut Verification,
) -> CliResult<()> {
    match cert.verdict.as_str() {
        "Majorized" => {
            let ch = channel_of(cert)?;
            require_cptp(&ch, v);
            if v.verified == Some(true) {
                let mut worst: f64 = 0.0;
                for (r, s) in pairs {
                    worst = worst.max(trace_norm(&(s - ch.apply(r)?)));
                }
                v.check("channel reproduces every σ_i", tol::DECISION_TOL - worst);
            }
        }
        "NotMajorized" => {
            let Some(WitnessRecord::FamilyEnsemble {
                weights: lam,
                omegas,
                hmin_rho,
                hmin_sigma,
            }) = &cert.witness
            else {
                return Err(CliError::Input(
                    "NotMajorized family certificate lacks its ensemble".into(),
                ));
            };
            if lam.len() != pairs.len() || omegas.len() != pairs.len() {
                return Err(CliError::Input("ensemble size does not match the family".into()));
            }
            if let Some(w) = weights {
                let total: f64 = w.iter().sum();
                let dev = lam
                    .iter()
                    .zip(w)
                    .map(|(a, b)| (a - b / total).abs())
                    .fold(0.0, f64::max);
                v.check("ensemble weights match the family weights", tol::DENSITY_TOL - dev);
            }
            let total: f64 = lam.iter().sum();
            if lam.iter().any(|l| *l < 0.0) || (total - 1.0).abs() > tol::DENSITY_TOL {
                v.fail("ensemble weights are not a distribution".into());
                return Ok(());
            }
            let d = omegas[0].data.nrows();
            let (din, dout) = (pairs[0].0.nrows(), pairs[0].1.nrows());
            let mut r = CMatrix::zeros(d * din, d * din);
            let mut s = CMatrix::zeros(d * dout, d * dout);
            for ((l, o), (ri, si)) in lam.iter().zip(omegas).zip(pairs) {
                let oh = linalg::hermitian_part(&o.data);
                if o.data.nrows() != d || linalg::check_density(&oh).is_err() || !linalg::is_psd(&oh, tol::DENSITY_TOL)
                {
                    v.fail("ensemble contains a non-density".into());
                    return Ok(());
                }
                r += linalg::tensor(oh.as_matrix(), ri) * linalg::cr(*l);
                s += linalg::tensor(oh.as_matrix(), si) * linalg::cr(*l);
            }
            let r = linalg::hermitian_part(&r).into_inner();
            let s = linalg::hermitian_part(&s).into_inner();
            let hr = entropy::hmin_of(&r, FactoredDims::new(d, din)?)?.value_bits;
            let hs = entropy::hmin_of(&s, FactoredDims::new(d, dout)?)?.value_bits;
            v.check("H_min gap reaches the minimum", hr - hs - tol::WITNESS_MIN_GAP);
            v.check("claimed H_min of the ρ side", rel_agree(*hmin_rho, hr));
            v.check("claimed H_min of the σ side", rel_agree(*hmin_sigma, hs));
        }
        other => return Err(CliError::Input(format!("unknown verdict {other:?}"))),
    }
    Ok(())
}

fn verify_factor(cert: &Certificate, t: &Channel, s: &Channel, v: &mut Verification) -> CliResult<()> {
    let post = cert.command == "factor-post";
    match cert.verdict.as_str() {
        "Factors" => {
            let ch = channel_of(cert)?;
            require_cptp(&ch, v);
            if v.verified == Some(true) {
                let built = if post {
                    channel::compose(&ch, t)?
                } else {
                    channel::compose(t, &ch)?
                };
                if built.dims() != s.dims() {
                    v.fail("composition has the wrong dims".into());
                } else {
                    v.check(
                        "composition reproduces S",
                        tol::DECISION_TOL - trace_norm(&(built.choi() - s.choi())),
                    );
                }
            }
        }
        "NoFactor" => {
            let (kind, lhs, rhs) = match &cert.witness {
                Some(WitnessRecord::SeparableState { terms, lhs, rhs }) if post => (
                    FactorWitnessKind::SeparableState(
                        terms
                            .iter()
                            .map(|t| SeparableTerm {
                                weight: t.weight,
                                reference: t.reference.data.clone(),
                                input: t.input.data.clone(),
                            })
                            .collect(),
                    ),
                    *lhs,
                    *rhs,
                ),
                Some(WitnessRecord::PositiveOperator { x, lhs, rhs }) if !post => {
                    (FactorWitnessKind::PositiveOperator(x.data.clone()), *lhs, *rhs)
                }
                _ => return Err(CliError::Input("NoFactor certificate lacks a matching witness".into())),
            };
            let w = FactorWitness { kind, lhs, rhs };
            match factorize::verify_factor_witness(t, s, &w) {
                Ok((l, r)) => {
                    v.check(
                        "witness separation reaches the minimum",
                        (r / l).log2() - tol::WITNESS_MIN_GAP,
                    );
                    v.check("claimed T-side value", rel_agree(lhs, l));
                    v.check("claimed S-side value", rel_agree(rhs, r));
                }
                Err(e) => v.fail(format!("witness is malformed: {e}")),
            }
        }
        other => return Err(CliError::Input(format!("unknown verdict {other:?}"))),
    }
    Ok(())
}
