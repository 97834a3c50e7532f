//! Secure norm validation between the two servers.
//!
//! The servers hold additive shares of a client update `x` and want to learn
//! only `Valid(x) = 1(x^T x - C^2 <= 0)`. With a pre-dealt pair `(a, r)`,
//! `a^T a = r`, they open the masked difference `b = x - a` and each computes
//!
//! ```text
//! y_j = [r]_j + 2 b^T [a]_j + (b^T b - C^2) / 2
//! ```
//!
//! so that `y_A + y_B = x^T x - C^2`. The sign of `y` is then decided by a
//! comparison gate. The gate here is an ideal functionality: it reconstructs
//! `y` internally and hands each server a fresh share of the output bit. Its
//! messages carry [`Endpoint::IdealGate`] as sender so the trust boundary is
//! visible in every transcript.
//!
//! Correlated randomness comes from a simulated trusted dealer. Every triple
//! is single-use; consuming one twice is an error.

use thiserror::Error;

use crate::ffield::{FieldElement, FieldError, FixedPointCodec, PrimeField};
use crate::seed::{derive_rng, StreamRng};
use crate::sharing::{PartyId, ShareVector, SharingError};
use crate::transcript::{Endpoint, MessageKind, MessageLog};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("{kind} triple #{id} was already consumed")]
    TripleReused { kind: &'static str, id: u64 },
    #[error("dimension mismatch: triple has {expected}, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("norm triple dimension must be at least 1")]
    EmptyDimension,
    #[error("share ownership: expected shares of S_A and S_B in that order")]
    WrongOwners,
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// One server's share of a Beaver triple `(a, b, c)`, `a * b = c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeaverShare {
    pub a: FieldElement,
    pub b: FieldElement,
    pub c: FieldElement,
}

#[derive(Clone, Debug)]
pub struct BeaverTriple {
    id: u64,
    shares: [BeaverShare; 2],
    consumed: bool,
}

impl BeaverTriple {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn share(&self, party: PartyId) -> &BeaverShare {
        &self.shares[party.index()]
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    fn consume(&mut self) -> Result<[BeaverShare; 2], MpcError> {
        if self.consumed {
            return Err(MpcError::TripleReused {
                kind: "beaver",
                id: self.id,
            });
        }
        self.consumed = true;
        Ok(self.shares)
    }
}

/// One server's share of a norm triple `(a, r)`, `a^T a = r`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NormTripleShare {
    pub owner: PartyId,
    pub a: Vec<FieldElement>,
    pub r: FieldElement,
}

#[derive(Clone, Debug)]
pub struct NormTriple {
    id: u64,
    shares: [NormTripleShare; 2],
    consumed: bool,
}

impl NormTriple {
    /// Assembles a triple from explicit shares, e.g. for exhaustive checks.
    /// The relation `a^T a = r` is not checked.
    pub fn from_shares(id: u64, shares: [NormTripleShare; 2]) -> Result<Self, MpcError> {
        if shares[0].owner != PartyId::ServerA || shares[1].owner != PartyId::ServerB {
            return Err(MpcError::WrongOwners);
        }
        let d = shares[0].a.len();
        if d == 0 {
            return Err(MpcError::EmptyDimension);
        }
        if shares[1].a.len() != d {
            return Err(MpcError::DimensionMismatch {
                expected: d,
                got: shares[1].a.len(),
            });
        }
        Ok(NormTriple {
            id,
            shares,
            consumed: false,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn dimension(&self) -> usize {
        self.shares[0].a.len()
    }

    pub fn share(&self, party: PartyId) -> &NormTripleShare {
        &self.shares[party.index()]
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    fn check_fresh(&self) -> Result<(), MpcError> {
        if self.consumed {
            Err(MpcError::TripleReused {
                kind: "norm",
                id: self.id,
            })
        } else {
            Ok(())
        }
    }
}

/// Simulated trusted third party. Also hosts the ideal comparison gate,
/// whose only randomness is the mask used to share its output bit.
#[derive(Debug)]
pub struct TrustedDealer {
    field: PrimeField,
    rng: StreamRng,
    beaver_issued: u64,
    norm_issued: u64,
    comparisons: u64,
}

impl TrustedDealer {
    pub fn new(field: PrimeField, rng: StreamRng) -> Self {
        TrustedDealer {
            field,
            rng,
            beaver_issued: 0,
            norm_issued: 0,
            comparisons: 0,
        }
    }

    pub fn from_seed(field: PrimeField, root_seed: u64) -> Self {
        Self::new(field, derive_rng(root_seed, "dealer", &[]))
    }

    pub fn field(&self) -> &PrimeField {
        &self.field
    }

    pub fn beaver_issued(&self) -> u64 {
        self.beaver_issued
    }

    pub fn norm_issued(&self) -> u64 {
        self.norm_issued
    }

    pub fn comparisons(&self) -> u64 {
        self.comparisons
    }

    pub fn deal_beaver_triple(&mut self) -> BeaverTriple {
        let f = self.field;
        let a = f.random(&mut self.rng);
        let b = f.random(&mut self.rng);
        let c = f.mul(a, b);
        let mut split = |v: FieldElement| {
            let s = f.random(&mut self.rng);
            (s, f.sub(v, s))
        };
        let (a0, a1) = split(a);
        let (b0, b1) = split(b);
        let (c0, c1) = split(c);
        let id = self.beaver_issued;
        self.beaver_issued += 1;
        BeaverTriple {
            id,
            shares: [
                BeaverShare { a: a0, b: b0, c: c0 },
                BeaverShare { a: a1, b: b1, c: c1 },
            ],
            consumed: false,
        }
    }

    pub fn deal_norm_triple(&mut self, d: usize) -> Result<NormTriple, MpcError> {
        if d == 0 {
            return Err(MpcError::EmptyDimension);
        }
        let f = self.field;
        let a = f.random_vec(d, &mut self.rng);
        let r = f.dot(&a, &a);
        let a0 = f.random_vec(d, &mut self.rng);
        let a1 = f.sub_vec(&a, &a0);
        let r0 = f.random(&mut self.rng);
        let r1 = f.sub(r, r0);
        let id = self.norm_issued;
        self.norm_issued += 1;
        Ok(NormTriple {
            id,
            shares: [
                NormTripleShare {
                    owner: PartyId::ServerA,
                    a: a0,
                    r: r0,
                },
                NormTripleShare {
                    owner: PartyId::ServerB,
                    a: a1,
                    r: r1,
                },
            ],
            consumed: false,
        })
    }

    fn comparison_mask(&mut self) -> FieldElement {
        self.comparisons += 1;
        self.field.random(&mut self.rng)
    }
}

const SA: Endpoint = Endpoint::Server(PartyId::ServerA);
const SB: Endpoint = Endpoint::Server(PartyId::ServerB);

/// Beaver multiplication of shared scalars `x`, `y`. Opens only
/// `d = x - a` and `e = y - b`.
pub fn beaver_multiply(
    field: &PrimeField,
    x: [FieldElement; 2],
    y: [FieldElement; 2],
    triple: &mut BeaverTriple,
    log: &mut MessageLog,
) -> Result<[FieldElement; 2], MpcError> {
    let t = triple.consume()?;
    let d_sh = [field.sub(x[0], t[0].a), field.sub(x[1], t[1].a)];
    let e_sh = [field.sub(y[0], t[0].b), field.sub(y[1], t[1].b)];
    log.record(SA, SB, MessageKind::BeaverOpening, None, &[d_sh[0], e_sh[0]]);
    log.record(SB, SA, MessageKind::BeaverOpening, None, &[d_sh[1], e_sh[1]]);
    let d = field.add(d_sh[0], d_sh[1]);
    let e = field.add(e_sh[0], e_sh[1]);
    let de_half = field.mul(field.mul(d, e), field.inv_two());
    let z = |j: usize| {
        let mut z = de_half;
        z = field.add(z, field.mul(d, t[j].b));
        z = field.add(z, field.mul(e, t[j].a));
        field.add(z, t[j].c)
    };
    Ok([z(0), z(1)])
}

/// Steps 1-2 of norm validation: shares of `y = x^T x - c_sq`.
///
/// `c_sq` must be encoded at the product scale `2f`. Returns the shares of
/// `y` and the opened vector `b = x - a`.
pub fn secure_norm_shares(
    field: &PrimeField,
    x_a: &ShareVector,
    x_b: &ShareVector,
    c_sq: FieldElement,
    triple: &mut NormTriple,
    client: Option<usize>,
    log: &mut MessageLog,
) -> Result<([FieldElement; 2], Vec<FieldElement>), MpcError> {
    if x_a.owner != PartyId::ServerA || x_b.owner != PartyId::ServerB {
        return Err(MpcError::WrongOwners);
    }
    triple.check_fresh()?;
    let d = triple.dimension();
    for got in [x_a.len(), x_b.len()] {
        if got != d {
            return Err(MpcError::DimensionMismatch { expected: d, got });
        }
    }
    triple.consumed = true;
    let [ta, tb] = &triple.shares;

    // Step 1: open b = x - a.
    let b_a = field.sub_vec(&x_a.values, &ta.a);
    let b_b = field.sub_vec(&x_b.values, &tb.a);
    log.record(SA, SB, MessageKind::MaskedDifference, client, &b_a);
    log.record(SB, SA, MessageKind::MaskedDifference, client, &b_b);
    let b = field.add_vec(&b_a, &b_b);

    // Step 2: local linear combination. Each server adds half the public term.
    let public_half = field.mul(field.sub(field.dot(&b, &b), c_sq), field.inv_two());
    let two = field.element(2);
    let local = |share: &NormTripleShare| {
        let lin = field.mul(two, field.dot(&b, &share.a));
        field.add(field.add(share.r, lin), public_half)
    };
    Ok(([local(ta), local(tb)], b))
}

/// Step 3: the opened bit `1(y <= 0)`, reading `y` through its signed
/// representative. Ideal functionality; see the module docs.
pub fn secure_sign_test(
    field: &PrimeField,
    y: [FieldElement; 2],
    dealer: &mut TrustedDealer,
    client: Option<usize>,
    log: &mut MessageLog,
) -> FieldElement {
    // Inside the gate.
    let y_val = field.add(y[0], y[1]);
    let bit = if field.to_signed(y_val) <= 0 {
        FieldElement::ONE
    } else {
        FieldElement::ZERO
    };
    let mask = dealer.comparison_mask();
    let out = [mask, field.sub(bit, mask)];
    log.record(Endpoint::IdealGate, SA, MessageKind::VerdictShare, client, &out[..1]);
    log.record(Endpoint::IdealGate, SB, MessageKind::VerdictShare, client, &out[1..]);

    // Servers exchange their output shares to open the bit.
    log.record(SA, SB, MessageKind::VerdictShare, client, &out[..1]);
    log.record(SB, SA, MessageKind::VerdictShare, client, &out[1..]);
    field.add(out[0], out[1])
}

/// Outcome of validating one submission.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationVerdict {
    pub client: Option<usize>,
    pub valid: bool,
    /// The opened masked difference `b = x - a`.
    pub revealed_b: Vec<FieldElement>,
    /// The opened bit.
    pub revealed_bit: FieldElement,
}

/// The public threshold `(C + slack)^2` at the product scale.
pub fn encode_squared_bound(
    field: &PrimeField,
    codec: &FixedPointCodec,
    bound: f64,
) -> Result<FieldElement, FieldError> {
    codec.encode_at(field, bound * bound, codec.product_scale_bits())
}

/// True when every `x` with `||x|| <= 2 * bound` keeps `x^T x` at scale `2f`
/// inside the positive half of the field, so the sign test is meaningful.
pub fn validation_headroom_ok(field: &PrimeField, codec: &FixedPointCodec, bound: f64) -> bool {
    let scaled = 4.0 * bound * bound * (codec.product_scale_bits() as f64).exp2();
    scaled < field.modulus() as f64 / 2.0
}

/// Full validation: accepts iff `||decode(x)||_2 <= c + slack`.
#[allow(clippy::too_many_arguments)]
pub fn validate_update(
    field: &PrimeField,
    codec: &FixedPointCodec,
    x_a: &ShareVector,
    x_b: &ShareVector,
    c: f64,
    slack: f64,
    dealer: &mut TrustedDealer,
    client: Option<usize>,
    log: &mut MessageLog,
) -> Result<ValidationVerdict, MpcError> {
    let c_sq = encode_squared_bound(field, codec, c + slack)?;
    let mut triple = dealer.deal_norm_triple(x_a.len())?;
    let (y, b) = secure_norm_shares(field, x_a, x_b, c_sq, &mut triple, client, log)?;
    let bit = secure_sign_test(field, y, dealer, client, log);
    Ok(ValidationVerdict {
        client,
        valid: bit == FieldElement::ONE,
        revealed_b: b,
        revealed_bit: bit,
    })
}
