//! Monero-style wallet keys, one-time (stealth) output addresses and amount
//! masking: the "normal transaction" baseline that covert transactions must
//! blend into.
//!
//! Byte layouts:
//!
//! * derivation digest `H(S, t) = Keccak(encode(S) || varint(t))`
//! * stealth address `K = Hs(H(S, t))·G + K^s`
//! * amount pad `Keccak("amount" || H(S, t))[..8]`, XORed with the
//!   little-endian amount

use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{GroupError, ParseError};
use crate::group::{
    self, decode_point, hash, hash_parts, point_mul, scalar_mul_base, Digest32, GroupPoint, Scalar,
};

/// Domain string mixed into the amount pad.
pub const AMOUNT_DOMAIN: &[u8] = b"amount";

/// A wallet's view and spend key pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyQuad {
    pub view_priv: Scalar,
    pub view_pub: GroupPoint,
    pub spend_priv: Scalar,
    pub spend_pub: GroupPoint,
}

/// The public half of a [`KeyQuad`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PublicAddress {
    pub view_pub: GroupPoint,
    pub spend_pub: GroupPoint,
}

impl KeyQuad {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let view_priv = Scalar::random(rng);
        let spend_priv = Scalar::random(rng);
        Self::from_private(view_priv, spend_priv).expect("random scalars are non-zero")
    }

    pub fn from_private(view_priv: Scalar, spend_priv: Scalar) -> Result<Self, GroupError> {
        Ok(KeyQuad {
            view_pub: scalar_mul_base(&view_priv)?,
            spend_pub: scalar_mul_base(&spend_priv)?,
            view_priv,
            spend_priv,
        })
    }

    pub fn public(&self) -> PublicAddress {
        PublicAddress { view_pub: self.view_pub, spend_pub: self.spend_pub }
    }

    /// Checks `pub = priv·G` for both pairs.
    pub fn is_consistent(&self) -> bool {
        scalar_mul_base(&self.view_priv).ok() == Some(self.view_pub)
            && scalar_mul_base(&self.spend_priv).ok() == Some(self.spend_pub)
    }

    pub fn to_file(&self) -> WalletFile {
        WalletFile {
            view_priv: Some(self.view_priv.to_hex()),
            view_pub: self.view_pub.to_hex(),
            spend_priv: Some(self.spend_priv.to_hex()),
            spend_pub: self.spend_pub.to_hex(),
        }
    }
}

/// On-disk wallet document: four lowercase hex keys. Public-only documents
/// omit the private fields.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalletFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_priv: Option<String>,
    pub view_pub: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spend_priv: Option<String>,
    pub spend_pub: String,
}

impl WalletFile {
    pub fn public_only(addr: &PublicAddress) -> Self {
        WalletFile {
            view_priv: None,
            view_pub: addr.view_pub.to_hex(),
            spend_priv: None,
            spend_pub: addr.spend_pub.to_hex(),
        }
    }

    pub fn public_address(&self) -> Result<PublicAddress, GroupError> {
        Ok(PublicAddress {
            view_pub: GroupPoint::from_hex(&self.view_pub)?,
            spend_pub: GroupPoint::from_hex(&self.spend_pub)?,
        })
    }

    /// Rebuilds the key quad, rejecting documents whose public keys do not
    /// match their private keys.
    pub fn key_quad(&self) -> Result<KeyQuad, GroupError> {
        let view_priv = Scalar::from_hex(self.view_priv.as_deref().ok_or(GroupError::BadHex)?)?;
        let spend_priv = Scalar::from_hex(self.spend_priv.as_deref().ok_or(GroupError::BadHex)?)?;
        let quad = KeyQuad::from_private(view_priv, spend_priv)?;
        if quad.public() != self.public_address()? {
            return Err(GroupError::InvalidPoint);
        }
        Ok(quad)
    }
}

/// Per-transaction key pair `(k^r, K^r)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TxKeys {
    pub tx_priv: Scalar,
    pub tx_pub: GroupPoint,
}

impl TxKeys {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self::from_private(Scalar::random(rng)).expect("non-zero")
    }

    pub fn from_private(tx_priv: Scalar) -> Result<Self, GroupError> {
        Ok(TxKeys { tx_pub: scalar_mul_base(&tx_priv)?, tx_priv })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Output {
    pub stealth_address: [u8; 32],
    pub masked_amount: [u8; 8],
    pub index: u32,
}

/// A transaction as carried by the ledger.
///
/// Canonical serialization (all integers little-endian):
///
/// ```text
/// tx_pub      32 bytes
/// n_outputs   u32
/// n times:    index u32 | stealth_address 32 bytes | masked_amount 8 bytes
/// fee         u64
/// ```
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Transaction {
    pub tx_pub: [u8; 32],
    pub outputs: Vec<Output>,
    pub fee: u64,
}

pub const OUTPUT_WIRE_LEN: usize = 4 + 32 + 8;

impl Transaction {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 4 + self.outputs.len() * OUTPUT_WIRE_LEN + 8);
        out.extend_from_slice(&self.tx_pub);
        out.extend_from_slice(&(self.outputs.len() as u32).to_le_bytes());
        for o in &self.outputs {
            out.extend_from_slice(&o.index.to_le_bytes());
            out.extend_from_slice(&o.stealth_address);
            out.extend_from_slice(&o.masked_amount);
        }
        out.extend_from_slice(&self.fee.to_le_bytes());
        out
    }

    /// Parses the canonical serialization; `base` is added to error offsets.
    pub fn from_bytes(bytes: &[u8], base: usize) -> Result<Self, ParseError> {
        let mut r = Reader { bytes, pos: 0, base };
        let tx_pub = r.array::<32>("tx_pub")?;
        let n = u32::from_le_bytes(r.array::<4>("output count")?) as usize;
        if n > (bytes.len().saturating_sub(r.pos)) / OUTPUT_WIRE_LEN {
            return Err(ParseError::new(base + r.pos - 4, format!("output count {n} exceeds record")));
        }
        let mut outputs = Vec::with_capacity(n);
        for _ in 0..n {
            let index = u32::from_le_bytes(r.array::<4>("output index")?);
            let stealth_address = r.array::<32>("stealth address")?;
            let masked_amount = r.array::<8>("masked amount")?;
            outputs.push(Output { stealth_address, masked_amount, index });
        }
        let fee = u64::from_le_bytes(r.array::<8>("fee")?);
        if r.pos != bytes.len() {
            return Err(ParseError::new(base + r.pos, "trailing bytes after transaction"));
        }
        Ok(Transaction { tx_pub, outputs, fee })
    }

    /// Keccak-256 of the canonical serialization.
    pub fn id(&self) -> Digest32 {
        hash(&self.to_bytes())
    }

    pub fn tx_pub_point(&self) -> Option<GroupPoint> {
        decode_point(&self.tx_pub)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl Reader<'_> {
    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], ParseError> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(ParseError::new(self.base + self.pos, format!("truncated {what}")));
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(out)
    }
}

/// ECDH: `priv·pub`. Sender uses `(k^r, K^v)`, receiver `(k^v, K^r)`.
pub fn derive_shared_secret(priv_key: &Scalar, pub_key: &GroupPoint) -> Result<GroupPoint, GroupError> {
    point_mul(priv_key, pub_key)
}

/// `H(S, t)`.
pub fn derivation_digest(shared: &GroupPoint, index: u32) -> Digest32 {
    let mut buf = Vec::with_capacity(40);
    buf.extend_from_slice(&shared.encode());
    group::write_varint(index as u64, &mut buf);
    hash(&buf)
}

/// `K = Hs(H(S, t))·G + K^s`.
pub fn stealth_address(shared: &GroupPoint, index: u32, spend_pub: &GroupPoint) -> GroupPoint {
    let k = Scalar::from_bytes_mod_order(derivation_digest(shared, index).0);
    // Hs(...) = 0 has negligible probability; fall back to the spend key itself.
    match scalar_mul_base(&k) {
        Ok(p) => p + *spend_pub,
        Err(_) => *spend_pub,
    }
}

fn first8(d: &Digest32) -> [u8; 8] {
    let mut out = [0u8; 8];
    out.copy_from_slice(&d.0[..8]);
    out
}

/// `Keccak("amount" || H(S, t))[..8]`.
pub fn amount_pad(shared: &GroupPoint, index: u32) -> [u8; 8] {
    first8(&hash_parts(&[AMOUNT_DOMAIN, derivation_digest(shared, index).as_bytes()]))
}

pub fn xor_amount(amount: u64, pad: [u8; 8]) -> [u8; 8] {
    (amount ^ u64::from_le_bytes(pad)).to_le_bytes()
}

pub fn mask_amount(amount: u64, shared: &GroupPoint, index: u32) -> [u8; 8] {
    xor_amount(amount, amount_pad(shared, index))
}

pub fn unmask_amount(masked: &[u8; 8], shared: &GroupPoint, index: u32) -> u64 {
    u64::from_le_bytes(xor_amount(u64::from_le_bytes(*masked), amount_pad(shared, index)))
}

/// Builds a standard output paying `to` at position `index` under `tx_keys`.
pub fn standard_output(tx_keys: &TxKeys, to: &PublicAddress, index: u32, amount: u64) -> Output {
    let shared = derive_shared_secret(&tx_keys.tx_priv, &to.view_pub).expect("tx key is non-zero");
    Output {
        stealth_address: stealth_address(&shared, index, &to.spend_pub).encode(),
        masked_amount: mask_amount(amount, &shared, index),
        index,
    }
}

/// Upper bound (exclusive) for randomly drawn filler amounts: 1 XMR.
pub const FILLER_AMOUNT_LIMIT: u64 = 1_000_000_000_000;

pub fn random_amount<R: Rng>(rng: &mut R) -> u64 {
    rng.gen_range(1..FILLER_AMOUNT_LIMIT)
}

/// A one-recipient payment with a change output back to the sender.
pub fn build_normal_tx<R: RngCore + CryptoRng>(
    rng: &mut R,
    sender: &PublicAddress,
    recipient: &PublicAddress,
    amount: u64,
    fee: u64,
) -> Transaction {
    let keys = TxKeys::random(rng);
    let change = random_amount(rng);
    Transaction {
        tx_pub: keys.tx_pub.encode(),
        outputs: vec![
            standard_output(&keys, recipient, 0, amount),
            standard_output(&keys, sender, 1, change),
        ],
        fee,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanResult {
    Owned(u64),
    NotMine,
}

/// Receiver-side recomputation of an output's address from `K^r`.
pub fn scan_output(tx: &Transaction, out: &Output, view_priv: &Scalar, spend_pub: &GroupPoint) -> ScanResult {
    let Some(tx_pub) = tx.tx_pub_point() else {
        return ScanResult::NotMine;
    };
    let Ok(shared) = derive_shared_secret(view_priv, &tx_pub) else {
        return ScanResult::NotMine;
    };
    if stealth_address(&shared, out.index, spend_pub).encode() == out.stealth_address {
        ScanResult::Owned(unmask_amount(&out.masked_amount, &shared, out.index))
    } else {
        ScanResult::NotMine
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn shared_secret_symmetry() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let p = scalar_mul_base(&Scalar::from_u64(9)).unwrap();
        assert_eq!(derive_shared_secret(&Scalar::ONE, &p).unwrap(), p);
        for _ in 0..100 {
            let bob = KeyQuad::generate(&mut rng);
            let tx = TxKeys::random(&mut rng);
            assert_eq!(
                derive_shared_secret(&tx.tx_priv, &bob.view_pub).unwrap(),
                derive_shared_secret(&bob.view_priv, &tx.tx_pub).unwrap()
            );
        }
        assert!(derive_shared_secret(&Scalar::ZERO, &p).is_err());
    }

    #[test]
    fn stealth_address_properties() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let bob = KeyQuad::generate(&mut rng);
        let s = scalar_mul_base(&Scalar::random(&mut rng)).unwrap();
        let a0 = stealth_address(&s, 0, &bob.spend_pub);
        assert_eq!(a0, stealth_address(&s, 0, &bob.spend_pub));
        assert_ne!(a0, stealth_address(&s, 1, &bob.spend_pub));
    }

    #[test]
    fn amount_masking() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let s = scalar_mul_base(&Scalar::random(&mut rng)).unwrap();
        for a in [0, 1, u64::MAX] {
            assert_eq!(unmask_amount(&mask_amount(a, &s, 0), &s, 0), a);
        }
        let pad = hash_parts(&[b"amount", derivation_digest(&s, 0).as_bytes()]);
        assert_eq!(mask_amount(0, &s, 0), pad.0[..8]);
    }

    #[test]
    fn normal_tx_scan() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let alice = KeyQuad::generate(&mut rng);
        let bob = KeyQuad::generate(&mut rng);
        let carol = KeyQuad::generate(&mut rng);
        let tx = build_normal_tx(&mut rng, &alice.public(), &bob.public(), 12_345, 1);
        assert_eq!(
            scan_output(&tx, &tx.outputs[0], &bob.view_priv, &bob.spend_pub),
            ScanResult::Owned(12_345)
        );
        assert_eq!(
            scan_output(&tx, &tx.outputs[0], &carol.view_priv, &carol.spend_pub),
            ScanResult::NotMine
        );
        assert!(matches!(
            scan_output(&tx, &tx.outputs[1], &alice.view_priv, &alice.spend_pub),
            ScanResult::Owned(_)
        ));
        assert!(tx.outputs.iter().all(|o| decode_point(&o.stealth_address).is_some()));
    }

    #[test]
    fn wallet_file_roundtrip_and_tamper() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let w = KeyQuad::generate(&mut rng);
        assert!(w.is_consistent());
        let file = w.to_file();
        let json = serde_json::to_string(&file).unwrap();
        let back: WalletFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.key_quad().unwrap(), w);

        let other = KeyQuad::generate(&mut rng);
        let mut bad = file.clone();
        bad.view_pub = other.view_pub.to_hex();
        assert!(bad.key_quad().is_err());
        assert!(WalletFile::public_only(&w.public()).key_quad().is_err());
    }

    #[test]
    fn tx_wire_roundtrip_and_truncation() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let a = KeyQuad::generate(&mut rng);
        let tx = build_normal_tx(&mut rng, &a.public(), &a.public(), 5, 1);
        let bytes = tx.to_bytes();
        assert_eq!(Transaction::from_bytes(&bytes, 0).unwrap(), tx);
        let err = Transaction::from_bytes(&bytes[..bytes.len() - 3], 100).unwrap_err();
        assert_eq!(err.offset, 100 + bytes.len() - 8);
    }
}
