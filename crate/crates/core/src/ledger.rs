//! A single-producer simulated ledger: mempool, validation, deterministic
//! block production, adversarial drop policies, and a binary chain file.
//!
//! Chain file layout (integers little-endian):
//!
//! ```text
//! magic            8 bytes  "MBCTCHN1"
//! next_ordinal     u64      submission counter
//! n_blocks         u64
//! n times:
//!   height         u64
//!   prev_id        32 bytes
//!   id             32 bytes
//!   n_txs          u32
//!   n_txs times:   len u32 | canonical transaction bytes
//! ```

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LedgerError, ParseError};
use crate::group::{decode_point, hash, Digest32};
use crate::monero::Transaction;

pub const DEFAULT_MIN_FEE: u64 = 1;
pub const CHAIN_MAGIC: &[u8; 8] = b"MBCTCHN1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_id: Digest32,
    pub txs: Vec<Transaction>,
    pub id: Digest32,
}

impl Block {
    /// Hashes `height || prev_id || n_txs || tx ids`.
    pub fn compute_id(height: u64, prev_id: &Digest32, txs: &[Transaction]) -> Digest32 {
        let mut buf = Vec::with_capacity(8 + 32 + 4 + 32 * txs.len());
        buf.extend_from_slice(&height.to_le_bytes());
        buf.extend_from_slice(prev_id.as_bytes());
        buf.extend_from_slice(&(txs.len() as u32).to_le_bytes());
        for tx in txs {
            buf.extend_from_slice(tx.id().as_bytes());
        }
        hash(&buf)
    }

    pub fn tx_ids(&self) -> Vec<Digest32> {
        self.txs.iter().map(Transaction::id).collect()
    }
}

/// Why a transaction was refused.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum Rejection {
    NoOutputs,
    InvalidTxKey,
    InvalidPoint { output: u32 },
    NonConsecutiveIndex { position: u32, index: u32 },
    Fee { fee: u64, min: u64 },
    Duplicate,
}

impl Rejection {
    pub fn code(&self) -> &'static str {
        match self {
            Rejection::NoOutputs => "no-outputs",
            Rejection::InvalidTxKey => "invalid-tx-key",
            Rejection::InvalidPoint { .. } => "invalid-point",
            Rejection::NonConsecutiveIndex { .. } => "non-consecutive-index",
            Rejection::Fee { .. } => "fee",
            Rejection::Duplicate => "duplicate",
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::InvalidPoint { output } => write!(f, "invalid-point (output {output})"),
            Rejection::NonConsecutiveIndex { position, index } => {
                write!(f, "non-consecutive-index (position {position} has index {index})")
            }
            Rejection::Fee { fee, min } => write!(f, "fee ({fee} < {min})"),
            other => f.write_str(other.code()),
        }
    }
}

/// Stateless validity check against a minimum fee.
pub fn validate_tx(tx: &Transaction, min_fee: u64) -> Result<(), Rejection> {
    if tx.outputs.is_empty() {
        return Err(Rejection::NoOutputs);
    }
    if tx.tx_pub_point().is_none() {
        return Err(Rejection::InvalidTxKey);
    }
    for (pos, out) in tx.outputs.iter().enumerate() {
        if out.index != pos as u32 {
            return Err(Rejection::NonConsecutiveIndex { position: pos as u32, index: out.index });
        }
        if decode_point(&out.stealth_address).is_none() {
            return Err(Rejection::InvalidPoint { output: out.index });
        }
    }
    if tx.fee < min_fee {
        return Err(Rejection::Fee { fee: tx.fee, min: min_fee });
    }
    Ok(())
}

/// What gets lost between the mempool and the next block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DropMode {
    None,
    /// Each pending transaction is lost independently with probability `p`.
    RandomRate { p: f64 },
    /// Lose the transactions with these submission ordinals (0-based, counted
    /// over the ledger's lifetime).
    TargetSeqs { ordinals: BTreeSet<u64> },
    /// Lose everything pending when a block with height in the range is produced.
    WindowBlocks { heights: Range<u64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropPolicy {
    pub mode: DropMode,
    pub seed: u64,
}

impl DropPolicy {
    pub fn none() -> Self {
        DropPolicy { mode: DropMode::None, seed: 0 }
    }

    pub fn random(p: f64, seed: u64) -> Self {
        DropPolicy { mode: DropMode::RandomRate { p }, seed }
    }

    pub fn target(ordinals: impl IntoIterator<Item = u64>) -> Self {
        DropPolicy { mode: DropMode::TargetSeqs { ordinals: ordinals.into_iter().collect() }, seed: 0 }
    }

    pub fn window(heights: Range<u64>) -> Self {
        DropPolicy { mode: DropMode::WindowBlocks { heights }, seed: 0 }
    }

    /// Parses `none`, `random:P[:SEED]`, `seqs:A,B,C`, `window:START..END`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let text = text.trim();
        let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
        match kind {
            "none" => Ok(Self::none()),
            "random" => {
                let mut parts = rest.split(':');
                let p: f64 = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .filter(|p| (0.0..=1.0).contains(p))
                    .ok_or_else(|| format!("bad drop rate in {text:?}"))?;
                let seed = match parts.next() {
                    Some(s) => s.parse().map_err(|_| format!("bad seed in {text:?}"))?,
                    None => 0,
                };
                Ok(Self::random(p, seed))
            }
            "seqs" => rest
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.trim().parse::<u64>().map_err(|_| format!("bad ordinal {s:?}")))
                .collect::<Result<BTreeSet<_>, _>>()
                .map(Self::target),
            "window" => {
                let (a, b) = rest.split_once("..").ok_or_else(|| format!("expected START..END in {text:?}"))?;
                let a = a.parse().map_err(|_| format!("bad window start in {text:?}"))?;
                let b = b.parse().map_err(|_| format!("bad window end in {text:?}"))?;
                Ok(Self::window(a..b))
            }
            _ => Err(format!("unknown drop policy {text:?}")),
        }
    }
}

impl Default for DropPolicy {
    fn default() -> Self {
        Self::none()
    }
}

#[derive(Clone, Debug)]
struct Pending {
    ordinal: u64,
    tx: Transaction,
}

/// Blocks plus mempool. Confirmed blocks are never modified.
#[derive(Clone, Debug)]
pub struct Ledger {
    blocks: Vec<Block>,
    mempool: Vec<Pending>,
    confirmed: HashMap<Digest32, (u64, usize)>,
    pending_ids: HashSet<Digest32>,
    next_ordinal: u64,
    min_fee: u64,
    policy: DropPolicy,
    drop_rng: ChaCha20Rng,
    dropped: Vec<(u64, Digest32)>,
}

impl Default for Ledger {
    fn default() -> Self {
        Ledger::new(DEFAULT_MIN_FEE, DropPolicy::none())
    }
}

impl Ledger {
    pub fn new(min_fee: u64, policy: DropPolicy) -> Self {
        Ledger {
            blocks: Vec::new(),
            mempool: Vec::new(),
            confirmed: HashMap::new(),
            pending_ids: HashSet::new(),
            next_ordinal: 0,
            min_fee,
            drop_rng: ChaCha20Rng::seed_from_u64(policy.seed),
            policy,
            dropped: Vec::new(),
        }
    }

    pub fn set_policy(&mut self, policy: DropPolicy) {
        self.drop_rng = ChaCha20Rng::seed_from_u64(policy.seed);
        self.policy = policy;
    }

    pub fn policy(&self) -> &DropPolicy {
        &self.policy
    }

    pub fn min_fee(&self) -> u64 {
        self.min_fee
    }

    /// Number of blocks; the next block gets this height.
    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn next_ordinal(&self) -> u64 {
        self.next_ordinal
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    /// `(ordinal, tx id)` of every transaction lost to the drop policy.
    pub fn dropped(&self) -> &[(u64, Digest32)] {
        &self.dropped
    }

    pub fn validate_tx(&self, tx: &Transaction) -> Result<(), Rejection> {
        validate_tx(tx, self.min_fee)
    }

    pub fn contains(&self, id: &Digest32) -> bool {
        self.confirmed.contains_key(id) || self.pending_ids.contains(id)
    }

    /// Validates and queues `tx`, returning its id.
    pub fn submit_tx(&mut self, tx: Transaction) -> Result<Digest32, LedgerError> {
        self.validate_tx(&tx).map_err(LedgerError::Rejected)?;
        let id = tx.id();
        if self.contains(&id) {
            return Err(LedgerError::Rejected(Rejection::Duplicate));
        }
        self.pending_ids.insert(id);
        self.mempool.push(Pending { ordinal: self.next_ordinal, tx });
        self.next_ordinal += 1;
        Ok(id)
    }

    fn is_dropped(&mut self, height: u64, ordinal: u64) -> bool {
        match &self.policy.mode {
            DropMode::None => false,
            DropMode::RandomRate { p } => {
                let p = *p;
                self.drop_rng.gen_bool(p)
            }
            DropMode::TargetSeqs { ordinals } => ordinals.contains(&ordinal),
            DropMode::WindowBlocks { heights } => heights.contains(&height),
        }
    }

    /// Drains the mempool into one new block in submission order, minus
    /// whatever the drop policy removes.
    pub fn produce_block(&mut self) -> &Block {
        let height = self.height();
        let prev_id = self.blocks.last().map(|b| b.id).unwrap_or(Digest32([0u8; 32]));
        let pending = std::mem::take(&mut self.mempool);
        self.pending_ids.clear();
        let mut txs = Vec::with_capacity(pending.len());
        for p in pending {
            if self.is_dropped(height, p.ordinal) {
                self.dropped.push((p.ordinal, p.tx.id()));
            } else {
                txs.push(p.tx);
            }
        }
        let id = Block::compute_id(height, &prev_id, &txs);
        for (i, tx) in txs.iter().enumerate() {
            self.confirmed.insert(tx.id(), (height, i));
        }
        self.blocks.push(Block { height, prev_id, txs, id });
        self.blocks.last().expect("just pushed")
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn get_blocks(&self, from_height: u64) -> &[Block] {
        let start = (from_height as usize).min(self.blocks.len());
        &self.blocks[start..]
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.blocks.get(height as usize)
    }

    /// `(height, transaction)` for a confirmed id.
    pub fn tx(&self, id: &Digest32) -> Option<(u64, &Transaction)> {
        self.confirmed.get(id).map(|&(h, i)| (h, &self.blocks[h as usize].txs[i]))
    }

    /// Re-checks linkage, ids, uniqueness, and every transaction's validity.
    pub fn verify_chain(&self) -> Result<(), LedgerError> {
        let mut seen = HashSet::new();
        let mut prev = Digest32([0u8; 32]);
        for (i, b) in self.blocks.iter().enumerate() {
            let fail = |reason: String| LedgerError::Integrity { height: b.height, reason };
            if b.height != i as u64 {
                return Err(fail(format!("expected height {i}")));
            }
            if b.prev_id != prev {
                return Err(fail("prev_id does not match parent".into()));
            }
            if b.id != Block::compute_id(b.height, &b.prev_id, &b.txs) {
                return Err(fail("block id mismatch".into()));
            }
            for tx in &b.txs {
                validate_tx(tx, self.min_fee).map_err(|r| fail(format!("tx {}: {r}", tx.id())))?;
                if !seen.insert(tx.id()) {
                    return Err(fail(format!("tx {} appears twice", tx.id())));
                }
            }
            prev = b.id;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHAIN_MAGIC);
        out.extend_from_slice(&self.next_ordinal.to_le_bytes());
        out.extend_from_slice(&(self.blocks.len() as u64).to_le_bytes());
        for b in &self.blocks {
            out.extend_from_slice(&b.height.to_le_bytes());
            out.extend_from_slice(b.prev_id.as_bytes());
            out.extend_from_slice(b.id.as_bytes());
            out.extend_from_slice(&(b.txs.len() as u32).to_le_bytes());
            for tx in &b.txs {
                let bytes = tx.to_bytes();
                out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
                out.extend_from_slice(&bytes);
            }
        }
        out
    }

    /// Parses a chain file image. Block ids and linkage are checked while
    /// parsing; nothing is returned unless the whole image is sound.
    pub fn from_bytes(bytes: &[u8], min_fee: u64, policy: DropPolicy) -> Result<Self, LedgerError> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(8, "magic")? != CHAIN_MAGIC {
            return Err(ParseError::new(0, "bad magic").into());
        }
        let next_ordinal = c.u64("submission counter")?;
        let n_blocks = c.u64("block count")?;
        let mut ledger = Ledger::new(min_fee, policy);
        ledger.next_ordinal = next_ordinal;
        for expected_height in 0..n_blocks {
            let at = c.pos;
            let height = c.u64("block height")?;
            if height != expected_height {
                return Err(ParseError::new(at, format!("expected height {expected_height}, found {height}")).into());
            }
            let prev_id = Digest32(c.array("prev_id")?);
            let id_at = c.pos;
            let id = Digest32(c.array("block id")?);
            let n_txs = c.u32("tx count")?;
            let mut txs = Vec::new();
            for _ in 0..n_txs {
                let len = c.u32("tx length")? as usize;
                let start = c.pos;
                let body = c.take(len, "transaction")?;
                txs.push(Transaction::from_bytes(body, start)?);
            }
            let expected_prev = ledger.blocks.last().map(|b| b.id).unwrap_or(Digest32([0u8; 32]));
            if prev_id != expected_prev {
                return Err(ParseError::new(id_at - 32, "prev_id does not match parent").into());
            }
            if id != Block::compute_id(height, &prev_id, &txs) {
                return Err(ParseError::new(id_at, "block id does not match contents").into());
            }
            for (i, tx) in txs.iter().enumerate() {
                if ledger.confirmed.insert(tx.id(), (height, i)).is_some() {
                    return Err(ParseError::new(at, format!("duplicate tx {}", tx.id())).into());
                }
            }
            ledger.blocks.push(Block { height, prev_id, txs, id });
        }
        if c.pos != bytes.len() {
            return Err(ParseError::new(c.pos, "trailing bytes after last block").into());
        }
        Ok(ledger)
    }

    pub fn save_chain(&self, path: impl AsRef<Path>) -> Result<(), LedgerError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load_chain(path: impl AsRef<Path>, min_fee: u64, policy: DropPolicy) -> Result<Self, LedgerError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, min_fee, policy)
    }

    /// Structured-text view for inspection.
    pub fn export_json(&self) -> serde_json::Value {
        serde_json::Value::Array(self.blocks.iter().map(block_json).collect())
    }
}

pub fn block_json(b: &Block) -> serde_json::Value {
    serde_json::json!({
        "height": b.height,
        "id": b.id.to_hex(),
        "prev_id": b.prev_id.to_hex(),
        "txs": b.txs.iter().map(tx_json).collect::<Vec<_>>(),
    })
}

pub fn tx_json(tx: &Transaction) -> serde_json::Value {
    serde_json::json!({
        "id": tx.id().to_hex(),
        "tx_pub": hex::encode(tx.tx_pub),
        "fee": tx.fee,
        "outputs": tx.outputs.iter().map(|o| serde_json::json!({
            "index": o.index,
            "stealth_address": hex::encode(o.stealth_address),
            "masked_amount": hex::encode(o.masked_amount),
        })).collect::<Vec<_>>(),
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ParseError> {
        if self.bytes.len() - self.pos < n {
            return Err(ParseError::new(self.pos, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], ParseError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ParseError> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32, ParseError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
}

/// A ledger shared between one writer and any number of readers. Block
/// production happens under the write lock, so readers never see a partial
/// block.
#[derive(Clone, Default)]
pub struct SharedLedger(Arc<RwLock<Ledger>>);

impl SharedLedger {
    pub fn new(ledger: Ledger) -> Self {
        SharedLedger(Arc::new(RwLock::new(ledger)))
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Ledger> {
        self.0.read().expect("ledger lock poisoned")
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, Ledger> {
        self.0.write().expect("ledger lock poisoned")
    }

    pub fn submit_tx(&self, tx: Transaction) -> Result<Digest32, LedgerError> {
        self.write().submit_tx(tx)
    }

    /// Produces a block and returns a copy of it.
    pub fn produce_block(&self) -> Block {
        self.write().produce_block().clone()
    }

    pub fn get_blocks(&self, from_height: u64) -> Vec<Block> {
        self.read().get_blocks(from_height).to_vec()
    }
}
