//! Quantum channels as Choi matrices.
//!
//! The Choi matrix of `Φ: M_{d_in} → M_{d_out}` is `J = Σ_ij e_ij ⊗ Φ(e_ij)`,
//! input factor first. Channels act by `Φ(ρ) = Tr_in[(ρᵀ⊗I) J]`, which pins
//! the pairing `Tr(Y Φ(X)) = Tr(J (Xᵀ⊗Y))`.

use crate::error::{Error, Result};
use crate::linalg::{
    self, cr, eigh, is_psd_matrix, partial_trace, partial_transpose, swap_factors, tensor, CMatrix, Factor,
    FactoredDims, HermitianOperator, ZERO,
};
use crate::tol;

/// A Hermitian-preserving linear map given by its Choi matrix. Complete
/// positivity is a property checked by [`Channel::validate`], not assumed.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    d_in: usize,
    d_out: usize,
    choi: HermitianOperator,
    eb_by_construction: bool,
    ensemble: Option<EbEnsemble>,
}

/// POVM and prepared states of a measure-and-prepare channel.
#[derive(Debug, Clone, PartialEq)]
pub struct EbEnsemble {
    pub povm: Vec<CMatrix>,
    pub states: Vec<CMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelClass {
    Cptp,
    Cptni,
    Cp,
    EbCptp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelValidation {
    pub cp: bool,
    pub tp: bool,
    pub tni: bool,
    pub unital: bool,
    /// `None` when entanglement breaking cannot be decided exactly.
    pub eb: Option<bool>,
}

impl ChannelValidation {
    pub fn is_cptp(&self) -> bool {
        self.cp && self.tp
    }

    /// The most specific class that applies, if the map is CP at all.
    pub fn class(&self) -> Option<ChannelClass> {
        match (self.cp, self.tp, self.tni, self.eb) {
            (false, ..) => None,
            (true, true, _, Some(true)) => Some(ChannelClass::EbCptp),
            (true, true, ..) => Some(ChannelClass::Cptp),
            (true, false, true, _) => Some(ChannelClass::Cptni),
            _ => Some(ChannelClass::Cp),
        }
    }
}

/// Largest `d_in·d_out` at which PPT of the Choi matrix decides entanglement
/// breaking exactly.
pub const EB_EXACT_MAX_DIM: usize = 6;

impl Channel {
    /// Wraps a Hermitian Choi matrix of size `d_in·d_out`.
    pub fn from_choi(choi: CMatrix, d_in: usize, d_out: usize) -> Result<Self> {
        let dims = FactoredDims::new(d_in, d_out)?;
        if choi.nrows() != dims.total() || choi.ncols() != dims.total() {
            return Err(Error::DimensionMismatch(format!(
                "Choi matrix is {}x{}, expected {}x{} for d_in={d_in}, d_out={d_out}",
                choi.nrows(),
                choi.ncols(),
                dims.total(),
                dims.total()
            )));
        }
        Ok(Self {
            d_in,
            d_out,
            choi: HermitianOperator::new(choi)?,
            eb_by_construction: false,
            ensemble: None,
        })
    }

    pub(crate) fn from_choi_unchecked(choi: CMatrix, d_in: usize, d_out: usize) -> Self {
        Self {
            d_in,
            d_out,
            choi: HermitianOperator::hermitian_part_of(&choi),
            eb_by_construction: false,
            ensemble: None,
        }
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn dims(&self) -> FactoredDims {
        FactoredDims {
            a: self.d_in,
            b: self.d_out,
        }
    }

    pub fn choi(&self) -> &CMatrix {
        self.choi.as_matrix()
    }

    pub fn choi_operator(&self) -> &HermitianOperator {
        &self.choi
    }

    /// Choi matrix divided by `d_in`; a density operator for CPTP maps.
    pub fn choi_state(&self) -> CMatrix {
        self.choi() / cr(self.d_in as f64)
    }

    /// True when built from an explicit measure-and-prepare ensemble.
    pub fn eb_by_construction(&self) -> bool {
        self.eb_by_construction
    }

    /// The ensemble this channel was built from by [`eb_from_ensemble`].
    pub fn ensemble(&self) -> Option<&EbEnsemble> {
        self.ensemble.as_ref()
    }

    /// `Φ(ρ) = Tr_in[(ρᵀ⊗I) J]`.
    ///
    /// Math: Choi correspondence, action of a map on states
    pub fn apply(&self, rho: &CMatrix) -> Result<CMatrix> {
        if rho.nrows() != self.d_in || rho.ncols() != self.d_in {
            return Err(Error::DimensionMismatch(format!(
                "channel input dim {} but operator is {}x{}",
                self.d_in,
                rho.nrows(),
                rho.ncols()
            )));
        }
        let (di, dout) = (self.d_in, self.d_out);
        let j = self.choi();
        let mut out = CMatrix::zeros(dout, dout);
        for m in 0..di {
            for i in 0..di {
                let r = rho[(m, i)];
                if r == ZERO {
                    continue;
                }
                for k in 0..dout {
                    for l in 0..dout {
                        out[(k, l)] += r * j[(m * dout + k, i * dout + l)];
                    }
                }
            }
        }
        Ok(out)
    }

    /// `(id⊗Φ)(ρ)` for `which = B` or `(Φ⊗id)(ρ)` for `which = A`. The
    /// returned dims replace the acted-on factor by `d_out`.
    ///
    /// Math: channel acting on one factor of a bipartite state
    pub fn apply_to_factor(&self, rho: &CMatrix, dims: FactoredDims, which: Factor) -> Result<(CMatrix, FactoredDims)> {
        let acted = match which {
            Factor::A => dims.a,
            Factor::B => dims.b,
        };
        if acted != self.d_in || rho.nrows() != dims.total() || rho.ncols() != dims.total() {
            return Err(Error::DimensionMismatch(format!(
                "channel input dim {} does not match factor {:?} of dims ({}, {}) with operator {}x{}",
                self.d_in,
                which,
                dims.a,
                dims.b,
                rho.nrows(),
                rho.ncols()
            )));
        }
        let (di, dout) = (self.d_in, self.d_out);
        let j = self.choi();
        match which {
            Factor::B => {
                let da = dims.a;
                let nd = FactoredDims { a: da, b: dout };
                let mut out = CMatrix::zeros(nd.total(), nd.total());
                for a in 0..da {
                    for ap in 0..da {
                        for m in 0..di {
                            for i in 0..di {
                                let r = rho[(a * di + m, ap * di + i)];
                                if r == ZERO {
                                    continue;
                                }
                                for k in 0..dout {
                                    for l in 0..dout {
                                        out[(a * dout + k, ap * dout + l)] += r * j[(m * dout + k, i * dout + l)];
                                    }
                                }
                            }
                        }
                    }
                }
                Ok((out, nd))
            }
            Factor::A => {
                let db = dims.b;
                let nd = FactoredDims { a: dout, b: db };
                let mut out = CMatrix::zeros(nd.total(), nd.total());
                for b in 0..db {
                    for bp in 0..db {
                        for m in 0..di {
                            for i in 0..di {
                                let r = rho[(m * db + b, i * db + bp)];
                                if r == ZERO {
                                    continue;
                                }
                                for k in 0..dout {
                                    for l in 0..dout {
                                        out[(k * db + b, l * db + bp)] += r * j[(m * dout + k, i * dout + l)];
                                    }
                                }
                            }
                        }
                    }
                }
                Ok((out, nd))
            }
        }
    }

    /// The Frobenius adjoint `Φ†`, with Choi matrix `swap(Jᵀ)`.
    ///
    /// Math: adjoint of a channel is completely positive and unital
    pub fn adjoint(&self) -> Channel {
        let jt = self.choi().transpose();
        let swapped = swap_factors(&jt, self.dims()).expect("dims consistent");
        Channel::from_choi_unchecked(swapped, self.d_out, self.d_in)
    }

    /// `Φ†(Y)`.
    pub fn apply_adjoint(&self, y: &CMatrix) -> Result<CMatrix> {
        self.adjoint().apply(y)
    }

    /// `Tr_out J`, which equals `I_in` exactly for trace-preserving maps.
    pub fn trace_out(&self) -> CMatrix {
        partial_trace(self.choi(), self.dims(), Factor::B).expect("dims consistent")
    }

    /// Checks complete positivity, trace preservation, trace non-increase,
    /// unitality and (where decidable) entanglement breaking.
    ///
    /// Math: complete positivity iff Choi matrix positive; trace preservation iff partial trace is identity
    pub fn validate(&self, tol: f64) -> ChannelValidation {
        let cp = is_psd_matrix(self.choi(), tol);
        let t = self.trace_out();
        let id_in = linalg::identity(self.d_in);
        let tp = (&t - &id_in).norm() <= tol;
        let tni = is_psd_matrix(&(&id_in - &t), tol);
        let unital = (self.apply(&id_in).expect("dims") - linalg::identity(self.d_out)).norm() <= tol;
        let eb = if self.eb_by_construction {
            Some(cp)
        } else if self.d_in * self.d_out <= EB_EXACT_MAX_DIM {
            let pt = partial_transpose(self.choi(), self.dims(), Factor::A).expect("dims");
            Some(cp && is_psd_matrix(&pt, tol))
        } else {
            None
        };
        ChannelValidation {
            cp,
            tp,
            tni,
            unital,
            eb,
        }
    }

    /// [`Channel::validate`] with the default tolerance.
    pub fn validate_default(&self) -> ChannelValidation {
        self.validate(tol::CHANNEL_TOL)
    }

    /// Errors unless the map is CPTP within `tol`.
    pub fn require_cptp(&self, tol: f64) -> Result<()> {
        let v = self.validate(tol);
        if !v.cp {
            return Err(Error::NotChannel(format!(
                "Choi matrix not PSD (minimum eigenvalue {:.3e})",
                eigh(self.choi()).0[0]
            )));
        }
        if !v.tp {
            return Err(Error::NotChannel(format!(
                "not trace preserving (deviation {:.3e})",
                (self.trace_out() - linalg::identity(self.d_in)).norm()
            )));
        }
        Ok(())
    }

    /// Scales the Choi matrix, e.g. to build sub-channels.
    pub fn scaled(&self, s: f64) -> Channel {
        let mut ch = Channel::from_choi_unchecked(self.choi() * cr(s), self.d_in, self.d_out);
        ch.eb_by_construction = self.eb_by_construction && s >= 0.0;
        ch
    }

    /// `Φ − Ψ` as a Hermitian-preserving map.
    pub fn difference(&self, other: &Channel) -> Result<Channel> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch("channels have different dims".into()));
        }
        Ok(Channel::from_choi_unchecked(
            self.choi() - other.choi(),
            self.d_in,
            self.d_out,
        ))
    }
}

/// `J = Σ_k |K_k⟩⟩⟨⟨K_k|` with `|K⟩⟩ = Σ_i |i⟩⊗K|i⟩`.
pub fn choi_from_kraus(kraus: &[CMatrix]) -> Result<Channel> {
    let first = kraus
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty Kraus list".into()))?;
    let (d_out, d_in) = (first.nrows(), first.ncols());
    if d_in == 0 || d_out == 0 {
        return Err(Error::InvalidParameter("empty Kraus operator".into()));
    }
    let n = d_in * d_out;
    let mut j = CMatrix::zeros(n, n);
    for k in kraus {
        if k.nrows() != d_out || k.ncols() != d_in {
            return Err(Error::DimensionMismatch(format!(
                "Kraus operators of shapes {}x{} and {}x{}",
                d_out,
                d_in,
                k.nrows(),
                k.ncols()
            )));
        }
        let v = nalgebra::DVector::from_fn(n, |r, _| k[(r % d_out, r / d_out)]);
        j += &v * v.adjoint();
    }
    Channel::from_choi(j, d_in, d_out)
}

/// Identity channel on `M_d`.
pub fn identity(d: usize) -> Channel {
    Channel::from_choi_unchecked(linalg::max_entangled_unnormalized(d), d, d)
}

/// `ρ ↦ U ρ U†`.
pub fn unitary(u: &CMatrix) -> Result<Channel> {
    choi_from_kraus(std::slice::from_ref(u))
}

/// Replacement channel `ρ ↦ Tr(ρ)·ω` with Choi `I_in⊗ω`.
pub fn replacement(omega: &CMatrix, d_in: usize) -> Result<Channel> {
    let w = HermitianOperator::new(omega.clone())?;
    linalg::check_density(&w)?;
    let mut ch = Channel::from_choi(tensor(&linalg::identity(d_in), w.as_matrix()), d_in, w.dim())?;
    ch.eb_by_construction = true;
    Ok(ch)
}

/// `ρ ↦ (1−p)ρ + p·Tr(ρ)·I/d`.
pub fn depolarizing(d: usize, p: f64) -> Result<Channel> {
    if !(0.0..=1.0).contains(&p) || d == 0 {
        return Err(Error::InvalidParameter(format!(
            "depolarizing needs d ≥ 1 and p in [0, 1], got d={d}, p={p}"
        )));
    }
    let id = linalg::max_entangled_unnormalized(d) * cr(1.0 - p);
    let rep = linalg::identity(d * d) * cr(p / d as f64);
    let mut ch = Channel::from_choi(id + rep, d, d)?;
    ch.eb_by_construction = p == 1.0;
    Ok(ch)
}

/// Completely dephasing channel in the computational basis.
pub fn dephasing(d: usize) -> Channel {
    let povm: Vec<CMatrix> = (0..d).map(|i| linalg::matrix_unit(d, i, i)).collect();
    eb_from_ensemble(&povm, &povm).expect("basis projectors form a POVM")
}

/// `Φ(ρ) = Σ_j Tr(x_j ρ) ω_j`, with Choi matrix `Σ_j x_jᵀ⊗ω_j`.
///
/// Math: entanglement-breaking (measure-and-prepare) channels
pub fn eb_from_ensemble(povm: &[CMatrix], states: &[CMatrix]) -> Result<Channel> {
    if povm.is_empty() || povm.len() != states.len() {
        return Err(Error::InvalidParameter(format!(
            "need equal nonempty POVM and state lists, got {} and {}",
            povm.len(),
            states.len()
        )));
    }
    let d_in = povm[0].nrows();
    let d_out = states[0].nrows();
    let mut sum = CMatrix::zeros(d_in, d_in);
    let mut j = CMatrix::zeros(d_in * d_out, d_in * d_out);
    for (x, w) in povm.iter().zip(states) {
        if x.nrows() != d_in || x.ncols() != d_in || w.nrows() != d_out || w.ncols() != d_out {
            return Err(Error::DimensionMismatch("inconsistent POVM or state dims".into()));
        }
        let xh = HermitianOperator::new(x.clone())?;
        if !linalg::is_psd(&xh, tol::DENSITY_TOL) {
            return Err(Error::NotPsd(xh.min_eigenvalue()));
        }
        let wh = HermitianOperator::new(w.clone())?;
        linalg::check_density(&wh)?;
        sum += xh.as_matrix();
        j += tensor(&xh.as_matrix().transpose(), wh.as_matrix());
    }
    let dev = (&sum - linalg::identity(d_in)).norm();
    if dev > tol::DENSITY_TOL {
        return Err(Error::InvalidParameter(format!(
            "POVM elements sum to identity only within {dev:.3e}"
        )));
    }
    let mut ch = Channel::from_choi(j, d_in, d_out)?;
    ch.eb_by_construction = true;
    ch.ensemble = Some(EbEnsemble {
        povm: povm.to_vec(),
        states: states.to_vec(),
    });
    Ok(ch)
}

/// `Φ₂∘Φ₁`, with Choi matrix `(id⊗Φ₂)(J₁)`.
pub fn compose(ch2: &Channel, ch1: &Channel) -> Result<Channel> {
    if ch1.d_out != ch2.d_in {
        return Err(Error::DimensionMismatch(format!(
            "cannot compose: first map outputs dim {}, second expects {}",
            ch1.d_out, ch2.d_in
        )));
    }
    let (j, _) = ch2.apply_to_factor(ch1.choi(), ch1.dims(), Factor::B)?;
    let mut out = Channel::from_choi_unchecked(j, ch1.d_in, ch2.d_out);
    out.eb_by_construction = ch1.eb_by_construction || ch2.eb_by_construction;
    Ok(out)
}
