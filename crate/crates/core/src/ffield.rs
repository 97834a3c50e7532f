//! Prime-field arithmetic and the fixed-point embedding of reals into it.
//!
//! All MPC in this crate runs over a public prime field. Field elements are
//! plain `u64` residues; the [`PrimeField`] value carries the modulus and
//! performs every operation, so the same code runs over the default Mersenne
//! prime and over tiny fields used for exhaustive checks.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 2^61 - 1.
pub const DEFAULT_MODULUS: u64 = (1u64 << 61) - 1;

pub const DEFAULT_SCALE_BITS: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("modulus {0} is not an odd prime below 2^63")]
    InvalidModulus(u64),
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("value {value} overflows the fixed-point range at scale 2^{scale_bits}")]
    Overflow { value: f64, scale_bits: u32 },
    #[error("cannot encode non-finite value {0}")]
    NonFinite(f64),
}

/// A residue in `[0, p)`. Only meaningful together with the [`PrimeField`]
/// that produced it.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct FieldElement(u64);

impl FieldElement {
    pub const ZERO: FieldElement = FieldElement(0);
    pub const ONE: FieldElement = FieldElement(1);

    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }
}

impl std::fmt::Display for FieldElement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The public prime field F_p.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct PrimeField {
    modulus: u64,
}

impl Default for PrimeField {
    fn default() -> Self {
        PrimeField {
            modulus: DEFAULT_MODULUS,
        }
    }
}

impl TryFrom<u64> for PrimeField {
    type Error = FieldError;
    fn try_from(p: u64) -> Result<Self, FieldError> {
        PrimeField::new(p)
    }
}

impl From<PrimeField> for u64 {
    fn from(f: PrimeField) -> u64 {
        f.modulus
    }
}

impl PrimeField {
    /// Builds the field of integers mod `p`. `p` must be an odd prime below
    /// 2^63 so that the sum of two residues fits in a `u64` and halving is
    /// always possible.
    pub fn new(p: u64) -> Result<Self, FieldError> {
        if p < 3 || p >= 1u64 << 63 || !is_prime(p) {
            return Err(FieldError::InvalidModulus(p));
        }
        Ok(PrimeField { modulus: p })
    }

    #[inline]
    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    /// Largest positive value of a signed representative, `(p - 1) / 2`.
    #[inline]
    pub fn half_modulus(&self) -> u64 {
        self.modulus / 2
    }

    #[inline]
    pub fn element(&self, v: u64) -> FieldElement {
        FieldElement(v % self.modulus)
    }

    pub fn from_i128(&self, v: i128) -> FieldElement {
        let p = self.modulus as i128;
        FieldElement(v.rem_euclid(p) as u64)
    }

    #[inline]
    pub fn from_i64(&self, v: i64) -> FieldElement {
        self.from_i128(v as i128)
    }

    #[inline]
    pub fn add(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        let s = a.0 + b.0;
        if s >= self.modulus {
            FieldElement(s - self.modulus)
        } else {
            FieldElement(s)
        }
    }

    #[inline]
    pub fn sub(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        if a.0 >= b.0 {
            FieldElement(a.0 - b.0)
        } else {
            FieldElement(a.0 + self.modulus - b.0)
        }
    }

    #[inline]
    pub fn neg(&self, a: FieldElement) -> FieldElement {
        if a.0 == 0 {
            a
        } else {
            FieldElement(self.modulus - a.0)
        }
    }

    #[inline]
    pub fn mul(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        FieldElement(((a.0 as u128 * b.0 as u128) % self.modulus as u128) as u64)
    }

    pub fn pow(&self, base: FieldElement, mut exp: u64) -> FieldElement {
        let mut acc = FieldElement::ONE;
        let mut b = base;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, b);
            }
            b = self.mul(b, b);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse by Fermat's little theorem.
    pub fn inv(&self, a: FieldElement) -> Result<FieldElement, FieldError> {
        if a.0 == 0 {
            return Err(FieldError::ZeroInverse);
        }
        Ok(self.pow(a, self.modulus - 2))
    }

    /// `inv(2)`, i.e. `(p + 1) / 2`.
    #[inline]
    pub fn inv_two(&self) -> FieldElement {
        FieldElement(self.modulus / 2 + 1)
    }

    /// Signed representative in `(-p/2, p/2]`.
    #[inline]
    pub fn to_signed(&self, e: FieldElement) -> i64 {
        if e.0 <= self.half_modulus() {
            e.0 as i64
        } else {
            e.0 as i64 - self.modulus as i64
        }
    }

    /// Uniform element of F_p.
    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldElement {
        FieldElement(rng.random_range(0..self.modulus))
    }

    pub fn random_vec<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<FieldElement> {
        (0..len).map(|_| self.random(rng)).collect()
    }

    pub fn add_vec(&self, a: &[FieldElement], b: &[FieldElement]) -> Vec<FieldElement> {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(&x, &y)| self.add(x, y)).collect()
    }

    pub fn sub_vec(&self, a: &[FieldElement], b: &[FieldElement]) -> Vec<FieldElement> {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(&x, &y)| self.sub(x, y)).collect()
    }

    /// Inner product, accumulated in 128 bits and reduced once per term.
    pub fn dot(&self, a: &[FieldElement], b: &[FieldElement]) -> FieldElement {
        debug_assert_eq!(a.len(), b.len());
        let p = self.modulus as u128;
        let mut acc: u128 = 0;
        for (&x, &y) in a.iter().zip(b) {
            acc = (acc + x.0 as u128 * y.0 as u128) % p;
        }
        FieldElement(acc as u64)
    }
}

/// Deterministic Miller-Rabin; the witness set is exact for all 64-bit inputs.
fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const WITNESSES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &w in &WITNESSES {
        if n == w {
            return true;
        }
        if n % w == 0 {
            return false;
        }
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut acc = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = mulmod(acc, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        acc
    };
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for &a in &WITNESSES {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Fixed-point embedding `x -> round(x * 2^f) mod p`.
///
/// Products of two encoded values carry scale `2f`; constants compared
/// against such products must be encoded with [`FixedPointCodec::encode_at`]
/// at [`FixedPointCodec::product_scale_bits`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    pub scale_bits: u32,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        FixedPointCodec {
            scale_bits: DEFAULT_SCALE_BITS,
        }
    }
}

impl FixedPointCodec {
    pub fn new(scale_bits: u32) -> Self {
        FixedPointCodec { scale_bits }
    }

    pub fn product_scale_bits(&self) -> u32 {
        2 * self.scale_bits
    }

    /// Quantization step `2^-f`.
    pub fn resolution(&self) -> f64 {
        (-(self.scale_bits as f64)).exp2()
    }

    /// Largest magnitude representable at scale `f` without crossing p/2.
    pub fn max_magnitude(&self, field: &PrimeField) -> f64 {
        field.modulus() as f64 / 2.0 / (self.scale_bits as f64).exp2()
    }

    pub fn encode(&self, field: &PrimeField, x: f64) -> Result<FieldElement, FieldError> {
        self.encode_at(field, x, self.scale_bits)
    }

    /// Encodes at an explicit scale. Rounds half away from zero.
    pub fn encode_at(
        &self,
        field: &PrimeField,
        x: f64,
        scale_bits: u32,
    ) -> Result<FieldElement, FieldError> {
        if !x.is_finite() {
            return Err(FieldError::NonFinite(x));
        }
        let scaled = x * (scale_bits as f64).exp2();
        if scaled.abs() >= field.modulus() as f64 / 2.0 {
            return Err(FieldError::Overflow {
                value: x,
                scale_bits,
            });
        }
        Ok(field.from_i128(scaled.round() as i128))
    }

    pub fn encode_vec(&self, field: &PrimeField, xs: &[f64]) -> Result<Vec<FieldElement>, FieldError> {
        xs.iter().map(|&x| self.encode(field, x)).collect()
    }

    pub fn decode(&self, field: &PrimeField, e: FieldElement) -> f64 {
        self.decode_at(field, e, self.scale_bits)
    }

    pub fn decode_at(&self, field: &PrimeField, e: FieldElement, scale_bits: u32) -> f64 {
        field.to_signed(e) as f64 / (scale_bits as f64).exp2()
    }

    pub fn decode_vec(&self, field: &PrimeField, es: &[FieldElement]) -> Vec<f64> {
        es.iter().map(|&e| self.decode(field, e)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn f61() -> PrimeField {
        PrimeField::default()
    }

    #[test]
    fn add_wraps_and_has_identity() {
        let f = f61();
        let p = f.modulus();
        assert_eq!(f.add(f.element(p - 1), FieldElement::ONE), FieldElement::ZERO);
        assert_eq!(f.add(FieldElement::ZERO, f.element(12345)), f.element(12345));
        assert_eq!(f.add(f.element(3), f.element(4)).value(), 7);
    }

    #[test]
    fn mul_matches_bigint_oracle() {
        let f = f61();
        let a = f.element(1 << 40);
        assert_eq!(f.mul(FieldElement::ONE, a), a);
        assert_eq!(f.mul(FieldElement::ZERO, a), FieldElement::ZERO);
        let expected = (BigUint::from(1u64 << 40) * BigUint::from(1u64 << 40))
            % BigUint::from(f.modulus());
        let expected: u64 = expected.try_into().unwrap();
        assert_eq!(f.mul(a, a).value(), expected);
        // 2^80 mod (2^61 - 1) = 2^19
        assert_eq!(expected, 1 << 19);

        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let x = f.random(&mut rng);
            let y = f.random(&mut rng);
            let big = (BigUint::from(x.value()) * BigUint::from(y.value()))
                % BigUint::from(f.modulus());
            let big: u64 = big.try_into().unwrap();
            assert_eq!(f.mul(x, y).value(), big);
        }
    }

    #[test]
    fn inverse() {
        let f = f61();
        assert_eq!(f.inv(FieldElement::ONE).unwrap(), FieldElement::ONE);
        assert_eq!(f.inv(f.element(2)).unwrap().value(), (f.modulus() + 1) / 2);
        assert_eq!(f.inv_two(), f.inv(f.element(2)).unwrap());
        assert_eq!(f.inv(FieldElement::ZERO), Err(FieldError::ZeroInverse));
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let a = f.random(&mut rng);
            if a == FieldElement::ZERO {
                continue;
            }
            assert_eq!(f.mul(a, f.inv(a).unwrap()), FieldElement::ONE);
        }
    }

    #[test]
    fn modulus_validation() {
        assert!(PrimeField::new(31).is_ok());
        assert!(PrimeField::new(DEFAULT_MODULUS).is_ok());
        assert!(PrimeField::new(2).is_err());
        assert!(PrimeField::new(33).is_err());
        assert!(PrimeField::new((1 << 61) + 1).is_err());
        // 2^64 - 59 is prime but too wide
        assert!(PrimeField::new(u64::MAX - 58).is_err());
        // large composite with no small factors: 4294967291 * 4294967279
        assert!(!is_prime(4294967291u64 * 4294967279u64));
        assert!(is_prime(4294967291));
    }

    #[test]
    fn ring_axioms_randomized() {
        let f = f61();
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        for _ in 0..10_000 {
            let (a, b, c) = (f.random(&mut rng), f.random(&mut rng), f.random(&mut rng));
            assert_eq!(f.add(f.add(a, b), c), f.add(a, f.add(b, c)));
            assert_eq!(f.mul(f.mul(a, b), c), f.mul(a, f.mul(b, c)));
            assert_eq!(f.add(a, b), f.add(b, a));
            assert_eq!(f.mul(a, b), f.mul(b, a));
            assert_eq!(f.mul(a, f.add(b, c)), f.add(f.mul(a, b), f.mul(a, c)));
            assert_eq!(f.add(a, f.neg(a)), FieldElement::ZERO);
            assert_eq!(f.sub(a, b), f.add(a, f.neg(b)));
        }
    }

    #[test]
    fn encode_examples() {
        let f = f61();
        let c = FixedPointCodec::default();
        assert_eq!(c.encode(&f, 1.5).unwrap().value(), 98304);
        assert_eq!(c.encode(&f, 0.0).unwrap(), FieldElement::ZERO);
        assert_eq!(c.encode(&f, -1.0).unwrap().value(), f.modulus() - 65536);
        assert_eq!(c.decode(&f, FieldElement::ZERO), 0.0);
        // half away from zero
        let half_step = 0.5 * c.resolution();
        assert_eq!(c.encode(&f, half_step).unwrap().value(), 1);
        assert_eq!(c.encode(&f, -half_step).unwrap(), f.neg(FieldElement::ONE));
    }

    #[test]
    fn encode_rejects_overflow_and_non_finite() {
        let f = f61();
        let c = FixedPointCodec::default();
        let limit = c.max_magnitude(&f);
        assert!(matches!(c.encode(&f, limit), Err(FieldError::Overflow { .. })));
        assert!(matches!(c.encode(&f, -limit * 1.5), Err(FieldError::Overflow { .. })));
        assert!(c.encode(&f, limit * 0.99).is_ok());
        assert!(matches!(c.encode(&f, f64::NAN), Err(FieldError::NonFinite(_))));
    }

    #[test]
    fn additive_decoding_error() {
        let f = f61();
        let c = FixedPointCodec::default();
        let s = f.add(c.encode(&f, 0.1).unwrap(), c.encode(&f, 0.2).unwrap());
        assert!((c.decode(&f, s) - 0.3).abs() <= c.resolution());
    }

    #[test]
    fn product_scale_decoding() {
        let f = f61();
        let c = FixedPointCodec::default();
        let a = c.encode(&f, -2.5).unwrap();
        let b = c.encode(&f, 4.0).unwrap();
        let prod = f.mul(a, b);
        assert_eq!(c.decode_at(&f, prod, c.product_scale_bits()), -10.0);
        assert_eq!(prod, c.encode_at(&f, -10.0, 32).unwrap());
    }

    proptest! {
        #[test]
        fn roundtrip_within_half_step(x in -((1u64 << 20) as f64)..(1u64 << 20) as f64) {
            let f = f61();
            let c = FixedPointCodec::default();
            let back = c.decode(&f, c.encode(&f, x).unwrap());
            prop_assert!((back - x).abs() <= 0.5 * c.resolution());
        }

        #[test]
        fn signed_representative_keeps_sign(x in -1.0e6f64..1.0e6) {
            let f = f61();
            let c = FixedPointCodec::default();
            prop_assume!(x.abs() >= c.resolution());
            let s = f.to_signed(c.encode(&f, x).unwrap());
            prop_assert_eq!(s.signum() as f64, x.signum());
        }

        #[test]
        fn signed_representative_is_congruent(v in any::<u64>()) {
            let f = f61();
            let e = f.element(v);
            let s = f.to_signed(e);
            prop_assert!(s.unsigned_abs() <= f.half_modulus());
            prop_assert_eq!(f.from_i64(s), e);
        }
    }
}
