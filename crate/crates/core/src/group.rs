//! Prime-order group arithmetic on the Ed25519 curve, point encoding, and the
//! Keccak-256 hash functions every other module builds on.

use std::fmt;
use std::ops::{Add, Neg};

use curve25519_dalek::constants::ED25519_BASEPOINT_TABLE;
use curve25519_dalek::edwards::{CompressedEdwardsY, EdwardsPoint};
use curve25519_dalek::scalar::Scalar as DalekScalar;
use curve25519_dalek::traits::Identity;
use rand::{CryptoRng, RngCore};
use sha3::{Digest, Keccak256};

use crate::error::GroupError;

/// Order of the prime subgroup, little-endian.
pub const GROUP_ORDER_LE: [u8; 32] = [
    0xed, 0xd3, 0xf5, 0x5c, 0x1a, 0x63, 0x12, 0x58, 0xd6, 0x9c, 0xf7, 0xa2, 0xde, 0xf9, 0xde, 0x14,
    0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x10,
];

/// An integer modulo the group order `l`, always held in canonical reduced form.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scalar(DalekScalar);

impl Scalar {
    pub const ZERO: Scalar = Scalar(DalekScalar::ZERO);
    pub const ONE: Scalar = Scalar(DalekScalar::ONE);

    /// Parses a canonical little-endian encoding. Values `>= l` are rejected.
    pub fn from_canonical_bytes(bytes: [u8; 32]) -> Result<Self, GroupError> {
        Option::from(DalekScalar::from_canonical_bytes(bytes))
            .map(Scalar)
            .ok_or(GroupError::InvalidScalar)
    }

    pub fn from_bytes_mod_order(bytes: [u8; 32]) -> Self {
        Scalar(DalekScalar::from_bytes_mod_order(bytes))
    }

    pub fn from_u64(v: u64) -> Self {
        Scalar(DalekScalar::from(v))
    }

    /// Draws a uniformly random non-zero scalar.
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        loop {
            let mut wide = [0u8; 64];
            rng.fill_bytes(&mut wide);
            let s = DalekScalar::from_bytes_mod_order_wide(&wide);
            if s != DalekScalar::ZERO {
                return Scalar(s);
            }
        }
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn is_zero(&self) -> bool {
        self.0 == DalekScalar::ZERO
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(s: &str) -> Result<Self, GroupError> {
        Self::from_canonical_bytes(decode_hex32(s)?)
    }

    pub(crate) fn inner(&self) -> &DalekScalar {
        &self.0
    }
}

impl Add for Scalar {
    type Output = Scalar;
    fn add(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 + rhs.0)
    }
}

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar(-self.0)
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Scalar({})", self.to_hex())
    }
}

/// A point on the Ed25519 curve.
#[derive(Clone, Copy, Eq)]
pub struct GroupPoint(EdwardsPoint);

impl GroupPoint {
    pub fn identity() -> Self {
        GroupPoint(EdwardsPoint::identity())
    }

    /// The canonical base point `G`.
    pub fn base() -> Self {
        GroupPoint(curve25519_dalek::constants::ED25519_BASEPOINT_POINT)
    }

    /// The 32-byte compressed encoding.
    pub fn encode(&self) -> [u8; 32] {
        self.0.compress().to_bytes()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.encode())
    }

    pub fn from_hex(s: &str) -> Result<Self, GroupError> {
        decode_point(&decode_hex32(s)?).ok_or(GroupError::InvalidPoint)
    }

    pub fn is_identity(&self) -> bool {
        self.0 == EdwardsPoint::identity()
    }

    pub(crate) fn inner(&self) -> &EdwardsPoint {
        &self.0
    }
}

impl PartialEq for GroupPoint {
    fn eq(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

impl std::hash::Hash for GroupPoint {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.encode().hash(state)
    }
}

impl Add for GroupPoint {
    type Output = GroupPoint;
    fn add(self, rhs: GroupPoint) -> GroupPoint {
        GroupPoint(self.0 + rhs.0)
    }
}

impl Neg for GroupPoint {
    type Output = GroupPoint;
    fn neg(self) -> GroupPoint {
        GroupPoint(-self.0)
    }
}

impl fmt::Debug for GroupPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupPoint({})", self.to_hex())
    }
}

/// A 32-byte Keccak-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest32(pub [u8; 32]);

impl Digest32 {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, GroupError> {
        decode_hex32(s).map(Digest32)
    }
}

impl fmt::Debug for Digest32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest32({})", self.to_hex())
    }
}

impl fmt::Display for Digest32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// `k·G`. Fails for `k = 0`; values `>= l` cannot be represented by [`Scalar`].
pub fn scalar_mul_base(k: &Scalar) -> Result<GroupPoint, GroupError> {
    if k.is_zero() {
        return Err(GroupError::InvalidScalar);
    }
    Ok(GroupPoint(ED25519_BASEPOINT_TABLE * k.inner()))
}

/// `k·P`.
pub fn point_mul(k: &Scalar, p: &GroupPoint) -> Result<GroupPoint, GroupError> {
    if k.is_zero() {
        return Err(GroupError::InvalidScalar);
    }
    Ok(GroupPoint(k.inner() * p.inner()))
}

/// Decodes a canonical point encoding.
///
/// Returns `None` for strings that are not on the curve, for non-canonical
/// encodings (`y >= p`, or negative zero `x`), and for the eight small-order
/// points.
pub fn decode_point(bytes: &[u8; 32]) -> Option<GroupPoint> {
    let point = CompressedEdwardsY(*bytes).decompress()?;
    if point.compress().to_bytes() != *bytes || point.is_small_order() {
        return None;
    }
    Some(GroupPoint(point))
}

pub fn is_valid_point(bytes: &[u8; 32]) -> bool {
    decode_point(bytes).is_some()
}

/// Keccak-256 (original padding, as used by Monero).
pub fn hash(bytes: &[u8]) -> Digest32 {
    Digest32(Keccak256::digest(bytes).into())
}

/// Keccak-256 over the concatenation of `parts`.
pub fn hash_parts(parts: &[&[u8]]) -> Digest32 {
    let mut h = Keccak256::new();
    for p in parts {
        h.update(p);
    }
    Digest32(h.finalize().into())
}

/// Keccak-256 digest reduced modulo `l`.
pub fn hash_to_scalar(bytes: &[u8]) -> Scalar {
    Scalar::from_bytes_mod_order(hash(bytes).0)
}

/// LEB128 varint, as Monero serializes output indices.
pub fn write_varint(mut v: u64, out: &mut Vec<u8>) {
    while v >= 0x80 {
        out.push((v as u8 & 0x7f) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

pub(crate) fn decode_hex32(s: &str) -> Result<[u8; 32], GroupError> {
    let v = hex::decode(s.trim()).map_err(|_| GroupError::BadHex)?;
    v.try_into().map_err(|_| GroupError::BadHex)
}

pub fn xor32(a: &[u8; 32], b: &[u8; 32]) -> [u8; 32] {
    let mut out = [0u8; 32];
    for i in 0..32 {
        out[i] = a[i] ^ b[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn l_minus_one() -> Scalar {
        let mut b = GROUP_ORDER_LE;
        b[0] -= 1;
        Scalar::from_canonical_bytes(b).unwrap()
    }

    #[test]
    fn base_mul_edge_cases() {
        assert_eq!(scalar_mul_base(&Scalar::ONE).unwrap(), GroupPoint::base());
        let g = GroupPoint::base();
        assert_eq!(scalar_mul_base(&Scalar::from_u64(2)).unwrap(), g + g);
        let neg = scalar_mul_base(&l_minus_one()).unwrap();
        assert_eq!(neg, -g);
        assert!((neg + g).is_identity());
        assert_eq!(scalar_mul_base(&Scalar::ZERO), Err(GroupError::InvalidScalar));
        assert_eq!(
            Scalar::from_canonical_bytes(GROUP_ORDER_LE),
            Err(GroupError::InvalidScalar)
        );
    }

    #[test]
    fn point_mul_paths_agree() {
        let g = GroupPoint::base();
        assert_eq!(point_mul(&Scalar::ONE, &g).unwrap(), g);
        let seven = Scalar::from_u64(7);
        assert_eq!(point_mul(&seven, &g).unwrap(), scalar_mul_base(&seven).unwrap());
        let mut acc = g;
        for _ in 0..6 {
            acc = acc + g;
        }
        assert_eq!(acc, scalar_mul_base(&seven).unwrap());

        let (a, b) = (Scalar::from_u64(3), Scalar::from_u64(5));
        let lhs = point_mul(&a, &scalar_mul_base(&b).unwrap()).unwrap();
        let rhs = point_mul(&b, &scalar_mul_base(&a).unwrap()).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn decode_roundtrip_and_bit_flips() {
        let g = GroupPoint::base();
        assert_eq!(decode_point(&g.encode()), Some(g));
        // Some flip of the high y bits must leave the curve.
        let enc = g.encode();
        let invalid = (0..8).any(|bit| {
            let mut b = enc;
            b[30] ^= 1 << bit;
            decode_point(&b).is_none()
        });
        assert!(invalid);
        // Identity is small order.
        assert!(decode_point(&GroupPoint::identity().encode()).is_none());
        // Non-canonical y = p encodes zero.
        let mut p = [0xffu8; 32];
        p[0] = 0xed;
        p[31] = 0x7f;
        assert!(decode_point(&p).is_none());
    }

    #[test]
    fn random_strings_decode_about_half_the_time() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let n = 10_000;
        let valid = (0..n)
            .filter(|_| {
                let mut b = [0u8; 32];
                rng.fill_bytes(&mut b);
                is_valid_point(&b)
            })
            .count();
        let rate = valid as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.05, "rate {rate}");
    }

    #[test]
    fn keccak_known_digests() {
        // Keccak-256 of the empty string (pre-NIST padding).
        assert_eq!(
            hash(b"").to_hex(),
            "c5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470"
        );
        assert_eq!(hash(b"abc"), hash(b"abc"));
        assert_eq!(hash_parts(&[b"ab", b"c"]), hash(b"abc"));
    }

    #[test]
    fn hash_to_scalar_is_reduced() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let mut b = [0u8; 40];
            rng.fill_bytes(&mut b);
            let s = hash_to_scalar(&b);
            assert!(Scalar::from_canonical_bytes(s.to_bytes()).is_ok());
        }
    }

    #[test]
    fn varint_layout() {
        let mut v = Vec::new();
        write_varint(0, &mut v);
        write_varint(127, &mut v);
        write_varint(300, &mut v);
        assert_eq!(v, vec![0x00, 0x7f, 0xac, 0x02]);
    }
}
