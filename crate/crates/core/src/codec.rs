//! Embedding and extraction for the three covert transaction types.
//!
//! * **AuthTx**: the sender signs `Keccak(K^r)` with its private view key and
//!   XORs the two signature halves `(r, s)` into the stealth addresses of
//!   outputs 0 and 1.
//! * **TransTx**: a 32-byte message segment is encrypted under a one-time key
//!   `Keccak(K^ori || K^v || K^s)` and XORed into the output-0 address. The
//!   output-0 amount carries an [`AmountCode`] masked with a pad that also
//!   hashes in the AuthTx signature.
//! * **FbTx**: the receiver embeds its own signature exactly like an AuthTx,
//!   addressed back to the sender; a missing sequence number, if any, rides in
//!   the output-0 amount.
//!
//! Every generated address must decode as a valid point, otherwise the
//! transaction key is redrawn. Each covert transaction ends with a standard
//! change output back to its creator.

use aes::cipher::{KeyIvInit, StreamCipher};
use ed25519_dalek::hazmat::{raw_sign, ExpandedSecretKey};
use ed25519_dalek::VerifyingKey;
use sha2::Sha512;
use rand::{CryptoRng, Rng, RngCore};

use crate::error::CodecError;
use crate::group::{decode_point, hash, hash_parts, is_valid_point, xor32, GroupPoint, Scalar};
use crate::monero::{
    derivation_digest, derive_shared_secret, mask_amount, random_amount, standard_output, stealth_address,
    xor_amount, KeyQuad, Output, PublicAddress, Transaction, TxKeys, AMOUNT_DOMAIN,
};

/// Default cap on transaction-key draws per special field.
pub const DEFAULT_MAX_DRAWS: u32 = 1000;
/// Amounts at or above this value are not valid [`AmountCode`]s.
pub const AMOUNT_CODE_LIMIT: u64 = 2_000_000_000;
pub const MAX_SEQ: u16 = 999;
pub const MAX_MIDDLE: u32 = 999_999;

const SIGNING_PREFIX_DOMAIN: &[u8] = b"mbct-eddsa-nonce-prefix";

type Aes256Ctr = ctr::Ctr128BE<aes::Aes256>;

/// A 64-byte Ed25519 signature `(r, s)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature {
    pub r: [u8; 32],
    pub s: [u8; 32],
}

impl Signature {
    pub fn to_bytes(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(&self.r);
        out[32..].copy_from_slice(&self.s);
        out
    }

    pub fn from_bytes(b: &[u8; 64]) -> Self {
        let mut r = [0u8; 32];
        let mut s = [0u8; 32];
        r.copy_from_slice(&b[..32]);
        s.copy_from_slice(&b[32..]);
        Signature { r, s }
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }
}

impl std::fmt::Debug for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Signature({})", self.to_hex())
    }
}

/// Nonce prefix for signing with a bare scalar (there is no Ed25519 seed to
/// expand): `Keccak("mbct-eddsa-nonce-prefix" || k)`.
fn signing_prefix(secret: &Scalar) -> [u8; 32] {
    hash_parts(&[SIGNING_PREFIX_DOMAIN, &secret.to_bytes()]).0
}

/// Signs `Keccak(encode(K^r))` with the signer's private view scalar.
pub fn sign_tx_key(tx_keys: &TxKeys, signer_view_priv: &Scalar) -> Signature {
    let public = crate::group::scalar_mul_base(signer_view_priv).expect("view key is non-zero");
    let esk = ExpandedSecretKey { scalar: *signer_view_priv.inner(), hash_prefix: signing_prefix(signer_view_priv) };
    let vk = VerifyingKey::from(*public.inner());
    let msg = hash(&tx_keys.tx_pub.encode());
    let sig = raw_sign::<Sha512>(&esk, msg.as_bytes(), &vk);
    Signature::from_bytes(&sig.to_bytes())
}

/// Strict Ed25519 verification of `sig` over `Keccak(tx_pub)` under `view_pub`.
pub fn verify_tx_key(sig: &Signature, tx_pub: &[u8; 32], view_pub: &GroupPoint) -> bool {
    let vk = VerifyingKey::from(*view_pub.inner());
    let msg = hash(tx_pub);
    vk.verify_strict(msg.as_bytes(), &ed25519_dalek::Signature::from_bytes(&sig.to_bytes())).is_ok()
}

/// Ten-decimal-digit amount layout: `flag | six random digits | three-digit sequence`.
///
/// A flag of 1 marks a non-final segment, 0 the final one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AmountCode {
    pub flag: u8,
    pub middle: u32,
    pub seq: u16,
}

impl AmountCode {
    pub fn new(flag: u8, middle: u32, seq: u16) -> Result<Self, CodecError> {
        if seq > MAX_SEQ {
            return Err(CodecError::SequenceOutOfRange(seq as u32));
        }
        assert!(flag <= 1 && middle <= MAX_MIDDLE, "amount code digits out of range");
        Ok(AmountCode { flag, middle, seq })
    }

    pub fn value(&self) -> u64 {
        self.flag as u64 * 1_000_000_000 + self.middle as u64 * 1_000 + self.seq as u64
    }

    pub fn is_final(&self) -> bool {
        self.flag == 0
    }
}

pub fn encode_amount<R: Rng + ?Sized>(seq: u32, is_final: bool, rng: &mut R) -> Result<u64, CodecError> {
    if seq > MAX_SEQ as u32 {
        return Err(CodecError::SequenceOutOfRange(seq));
    }
    let middle = rng.gen_range(0..=MAX_MIDDLE);
    Ok(AmountCode::new(u8::from(!is_final), middle, seq as u16)?.value())
}

pub fn decode_amount(a: u64) -> Option<AmountCode> {
    if a >= AMOUNT_CODE_LIMIT {
        return None;
    }
    Some(AmountCode {
        flag: (a / 1_000_000_000) as u8,
        middle: ((a / 1_000) % 1_000_000) as u32,
        seq: (a % 1_000) as u16,
    })
}

/// `Keccak("amount" || H(S, t) || r || s)[..8]`.
pub fn signed_amount_pad(shared: &GroupPoint, index: u32, sig: &Signature) -> [u8; 8] {
    let d = hash_parts(&[AMOUNT_DOMAIN, derivation_digest(shared, index).as_bytes(), &sig.r, &sig.s]);
    let mut out = [0u8; 8];
    out.copy_from_slice(&d.0[..8]);
    out
}

pub fn mask_amount_signed(a: u64, shared: &GroupPoint, index: u32, sig: &Signature) -> [u8; 8] {
    xor_amount(a, signed_amount_pad(shared, index, sig))
}

pub fn unmask_amount_signed(h: &[u8; 8], shared: &GroupPoint, index: u32, sig: &Signature) -> u64 {
    u64::from_le_bytes(xor_amount(u64::from_le_bytes(*h), signed_amount_pad(shared, index, sig)))
}

/// One-time symmetric key for a single TransTx.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct SessionKey(pub [u8; 32]);

pub fn derive_session_key(original: &GroupPoint, recipient: &PublicAddress) -> SessionKey {
    SessionKey(
        hash_parts(&[&original.encode(), &recipient.view_pub.encode(), &recipient.spend_pub.encode()]).0,
    )
}

/// AES-256 in counter mode with an all-zero initial counter block.
pub fn encrypt_segment(segment: &[u8; 32], key: &SessionKey) -> [u8; 32] {
    let mut buf = *segment;
    let mut cipher = Aes256Ctr::new((&key.0).into(), (&[0u8; 16]).into());
    cipher.apply_keystream(&mut buf);
    buf
}

pub fn decrypt_segment(ciphertext: &[u8; 32], key: &SessionKey) -> [u8; 32] {
    encrypt_segment(ciphertext, key)
}

/// Sender-side `(S, K^ori)` for output `index`.
fn sender_original(tx_keys: &TxKeys, to: &PublicAddress, index: u32) -> (GroupPoint, GroupPoint) {
    let shared = derive_shared_secret(&tx_keys.tx_priv, &to.view_pub).expect("tx key is non-zero");
    (shared, stealth_address(&shared, index, &to.spend_pub))
}

/// Receiver-side `(S, K^ori)` for output `index`, or `None` if `K^r` is not a
/// valid point.
fn receiver_original(tx: &Transaction, me: &KeyQuad, index: u32) -> Option<(GroupPoint, GroupPoint)> {
    let tx_pub = tx.tx_pub_point()?;
    let shared = derive_shared_secret(&me.view_priv, &tx_pub).ok()?;
    Some((shared, stealth_address(&shared, index, &me.spend_pub)))
}

/// Signature-bearing addresses shared by AuthTx and FbTx.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpecialFieldAuth {
    pub tx_keys: TxKeys,
    pub signature: Signature,
    pub addresses: [[u8; 32]; 2],
    /// Transaction-key draws spent, including the accepted one.
    pub draws: u32,
}

/// One attempt of the AuthTx embedding for a fixed `k^r`; `None` when either
/// resulting address is not a valid point.
pub fn auth_field_for_key(tx_keys: TxKeys, signer_view_priv: &Scalar, to: &PublicAddress) -> Option<SpecialFieldAuth> {
    let signature = sign_tx_key(&tx_keys, signer_view_priv);
    let (_, k0) = sender_original(&tx_keys, to, 0);
    let (_, k1) = sender_original(&tx_keys, to, 1);
    let a0 = xor32(&signature.r, &k0.encode());
    let a1 = xor32(&signature.s, &k1.encode());
    (is_valid_point(&a0) && is_valid_point(&a1))
        .then_some(SpecialFieldAuth { tx_keys, signature, addresses: [a0, a1], draws: 1 })
}

pub fn gen_auth_field<R: RngCore + CryptoRng>(
    rng: &mut R,
    signer_view_priv: &Scalar,
    to: &PublicAddress,
    max_draws: u32,
) -> Result<SpecialFieldAuth, CodecError> {
    for draw in 1..=max_draws {
        if let Some(mut field) = auth_field_for_key(TxKeys::random(rng), signer_view_priv, to) {
            field.draws = draw;
            return Ok(field);
        }
    }
    Err(CodecError::RetryBudgetExceeded { draws: max_draws })
}

/// Address-carrying outputs 0 and 1 (filler amounts unless `amount0` is
/// given) plus a change output at index 2.
fn signature_tx<R: RngCore + CryptoRng>(
    field: &SpecialFieldAuth,
    to: &PublicAddress,
    change_to: &PublicAddress,
    amount0: Option<[u8; 8]>,
    rng: &mut R,
    fee: u64,
) -> Transaction {
    let (s0, _) = sender_original(&field.tx_keys, to, 0);
    let (s1, _) = sender_original(&field.tx_keys, to, 1);
    let h0 = amount0.unwrap_or_else(|| mask_amount(random_amount(rng), &s0, 0));
    let h1 = mask_amount(random_amount(rng), &s1, 1);
    Transaction {
        tx_pub: field.tx_keys.tx_pub.encode(),
        outputs: vec![
            Output { stealth_address: field.addresses[0], masked_amount: h0, index: 0 },
            Output { stealth_address: field.addresses[1], masked_amount: h1, index: 1 },
            standard_output(&field.tx_keys, change_to, 2, random_amount(rng)),
        ],
        fee,
    }
}

pub fn auth_tx<R: RngCore + CryptoRng>(
    field: &SpecialFieldAuth,
    to: &PublicAddress,
    change_to: &PublicAddress,
    rng: &mut R,
    fee: u64,
) -> Transaction {
    signature_tx(field, to, change_to, None, rng, fee)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuthResult {
    Authenticated { sender: GroupPoint, signature: Signature },
    NotAuth,
}

/// Recovers `(r', s')` from outputs 0 and 1 and checks it against each
/// candidate sender's view key in order.
pub fn extract_auth(tx: &Transaction, me: &KeyQuad, candidates: &[GroupPoint]) -> AuthResult {
    // Two signature outputs plus change.
    if tx.outputs.len() < 3 || tx.outputs[0].index != 0 || tx.outputs[1].index != 1 {
        return AuthResult::NotAuth;
    }
    let (Some((_, k0)), Some((_, k1))) = (receiver_original(tx, me, 0), receiver_original(tx, me, 1)) else {
        return AuthResult::NotAuth;
    };
    let signature = Signature {
        r: xor32(&tx.outputs[0].stealth_address, &k0.encode()),
        s: xor32(&tx.outputs[1].stealth_address, &k1.encode()),
    };
    candidates
        .iter()
        .find(|c| verify_tx_key(&signature, &tx.tx_pub, c))
        .map(|c| AuthResult::Authenticated { sender: *c, signature })
        .unwrap_or(AuthResult::NotAuth)
}

/// Output-0 payload of a TransTx.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpecialFieldTrans {
    pub tx_keys: TxKeys,
    pub address: [u8; 32],
    pub masked_amount: [u8; 8],
    /// The plaintext [`AmountCode`] value.
    pub amount: u64,
    pub draws: u32,
}

/// One TransTx embedding attempt for a fixed `k^r` and amount.
pub fn trans_field_for_key(
    tx_keys: TxKeys,
    segment: &[u8; 32],
    amount: u64,
    to: &PublicAddress,
    sig: &Signature,
) -> Option<SpecialFieldTrans> {
    let (shared, original) = sender_original(&tx_keys, to, 0);
    let key = derive_session_key(&original, to);
    let address = xor32(&original.encode(), &encrypt_segment(segment, &key));
    is_valid_point(&address).then(|| SpecialFieldTrans {
        tx_keys,
        address,
        masked_amount: mask_amount_signed(amount, &shared, 0, sig),
        amount,
        draws: 1,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn gen_trans_field<R: RngCore + CryptoRng>(
    segment: &[u8; 32],
    seq: u32,
    is_final: bool,
    to: &PublicAddress,
    sig: &Signature,
    rng: &mut R,
    max_draws: u32,
) -> Result<SpecialFieldTrans, CodecError> {
    let amount = encode_amount(seq, is_final, rng)?;
    for draw in 1..=max_draws {
        if let Some(mut field) = trans_field_for_key(TxKeys::random(rng), segment, amount, to, sig) {
            field.draws = draw;
            return Ok(field);
        }
    }
    Err(CodecError::RetryBudgetExceeded { draws: max_draws })
}

/// Covert output 0 plus a change output at index 1.
pub fn trans_tx<R: RngCore + CryptoRng>(
    field: &SpecialFieldTrans,
    change_to: &PublicAddress,
    rng: &mut R,
    fee: u64,
) -> Transaction {
    Transaction {
        tx_pub: field.tx_keys.tx_pub.encode(),
        outputs: vec![
            Output { stealth_address: field.address, masked_amount: field.masked_amount, index: 0 },
            standard_output(&field.tx_keys, change_to, 1, random_amount(rng)),
        ],
        fee,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentResult {
    Segment { data: [u8; 32], seq: u16, is_final: bool },
    NotCovert,
}

pub fn extract_segment(tx: &Transaction, me: &KeyQuad, sig: &Signature) -> SegmentResult {
    let Some(out) = tx.outputs.first().filter(|o| o.index == 0) else {
        return SegmentResult::NotCovert;
    };
    let Some((shared, original)) = receiver_original(tx, me, 0) else {
        return SegmentResult::NotCovert;
    };
    let original_bytes = original.encode();
    if out.stealth_address == original_bytes {
        // An ordinary payment to us.
        return SegmentResult::NotCovert;
    }
    let Some(code) = decode_amount(unmask_amount_signed(&out.masked_amount, &shared, 0, sig)) else {
        return SegmentResult::NotCovert;
    };
    let key = derive_session_key(&original, &me.public());
    let data = decrypt_segment(&xor32(&out.stealth_address, &original_bytes), &key);
    SegmentResult::Segment { data, seq: code.seq, is_final: code.is_final() }
}

/// FbTx payload: a responder signature plus, for a Nack, a masked sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpecialFieldFb {
    pub auth: SpecialFieldAuth,
    pub masked_amount: Option<[u8; 8]>,
}

/// `mms = 0` means everything arrived; otherwise it names the missing sequence.
pub fn gen_fb_field<R: RngCore + CryptoRng>(
    rng: &mut R,
    responder_view_priv: &Scalar,
    originator: &PublicAddress,
    mms: u16,
    max_draws: u32,
) -> Result<SpecialFieldFb, CodecError> {
    if mms > MAX_SEQ {
        return Err(CodecError::SequenceOutOfRange(mms as u32));
    }
    let auth = gen_auth_field(rng, responder_view_priv, originator, max_draws)?;
    let masked_amount = (mms != 0).then(|| {
        let code = AmountCode::new(0, rng.gen_range(0..=MAX_MIDDLE), mms).expect("mms checked");
        let (shared, _) = sender_original(&auth.tx_keys, originator, 0);
        mask_amount_signed(code.value(), &shared, 0, &auth.signature)
    });
    Ok(SpecialFieldFb { auth, masked_amount })
}

pub fn fb_tx<R: RngCore + CryptoRng>(
    field: &SpecialFieldFb,
    originator: &PublicAddress,
    change_to: &PublicAddress,
    rng: &mut R,
    fee: u64,
) -> Transaction {
    signature_tx(&field.auth, originator, change_to, field.masked_amount, rng, fee)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feedback {
    Ack,
    Nack(u16),
    NotFeedback,
}

pub fn parse_feedback(tx: &Transaction, originator: &KeyQuad, responder_view_pub: &GroupPoint) -> Feedback {
    let AuthResult::Authenticated { signature, .. } = extract_auth(tx, originator, &[*responder_view_pub]) else {
        return Feedback::NotFeedback;
    };
    let Some((shared, _)) = receiver_original(tx, originator, 0) else {
        return Feedback::NotFeedback;
    };
    match decode_amount(unmask_amount_signed(&tx.outputs[0].masked_amount, &shared, 0, &signature)) {
        Some(code) if code.seq != 0 => Feedback::Nack(code.seq),
        _ => Feedback::Ack,
    }
}

/// The valid point behind a stealth address, if any.
pub fn output_point(out: &Output) -> Option<GroupPoint> {
    decode_point(&out.stealth_address)
}
