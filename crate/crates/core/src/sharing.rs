//! Two-party additive secret sharing of field vectors.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ffield::{FieldElement, PrimeField};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SharingError {
    #[error("share length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("cannot reconstruct from two shares held by {0}")]
    SameOwner(PartyId),
    #[error("cannot accumulate a share of {incoming} into an accumulator of {acc}")]
    OwnerMismatch { acc: PartyId, incoming: PartyId },
}

/// One of the two aggregation servers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PartyId {
    ServerA,
    ServerB,
}

impl PartyId {
    pub const BOTH: [PartyId; 2] = [PartyId::ServerA, PartyId::ServerB];

    pub fn other(self) -> PartyId {
        match self {
            PartyId::ServerA => PartyId::ServerB,
            PartyId::ServerB => PartyId::ServerA,
        }
    }

    pub fn index(self) -> usize {
        match self {
            PartyId::ServerA => 0,
            PartyId::ServerB => 1,
        }
    }
}

impl std::fmt::Display for PartyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PartyId::ServerA => f.write_str("S_A"),
            PartyId::ServerB => f.write_str("S_B"),
        }
    }
}

/// One server's additive share of a field vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareVector {
    pub owner: PartyId,
    pub values: Vec<FieldElement>,
}

impl ShareVector {
    pub fn zeros(owner: PartyId, len: usize) -> Self {
        ShareVector {
            owner,
            values: vec![FieldElement::ZERO; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Splits `x` into `(share_A, share_B)`: `share_A` is uniform over F^d and
/// `share_B = x - share_A`.
pub fn split<R: Rng + ?Sized>(
    field: &PrimeField,
    x: &[FieldElement],
    rng: &mut R,
) -> (ShareVector, ShareVector) {
    let a = field.random_vec(x.len(), rng);
    let b = field.sub_vec(x, &a);
    (
        ShareVector {
            owner: PartyId::ServerA,
            values: a,
        },
        ShareVector {
            owner: PartyId::ServerB,
            values: b,
        },
    )
}

pub fn reconstruct(
    field: &PrimeField,
    a: &ShareVector,
    b: &ShareVector,
) -> Result<Vec<FieldElement>, SharingError> {
    if a.owner == b.owner {
        return Err(SharingError::SameOwner(a.owner));
    }
    if a.len() != b.len() {
        return Err(SharingError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(field.add_vec(&a.values, &b.values))
}

/// Adds `incoming` into `acc` coordinate-wise.
pub fn accumulate(
    field: &PrimeField,
    acc: &mut ShareVector,
    incoming: &ShareVector,
) -> Result<(), SharingError> {
    if acc.owner != incoming.owner {
        return Err(SharingError::OwnerMismatch {
            acc: acc.owner,
            incoming: incoming.owner,
        });
    }
    if acc.len() != incoming.len() {
        return Err(SharingError::LengthMismatch {
            left: acc.len(),
            right: incoming.len(),
        });
    }
    for (slot, &v) in acc.values.iter_mut().zip(&incoming.values) {
        *slot = field.add(*slot, v);
    }
    Ok(())
}
