//! Sender and receiver state machines for the authentication, transmission
//! and feedback stages.
//!
//! Both machines are driven one confirmed block at a time and return the
//! transactions they want broadcast. They never touch the ledger themselves.

use std::collections::{BTreeMap, HashSet, VecDeque};

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use crate::codec::{
    self, extract_auth, extract_segment, parse_feedback, AuthResult, Feedback, SegmentResult, Signature,
    DEFAULT_MAX_DRAWS, MAX_SEQ,
};
use crate::error::SessionError;
use crate::group::{Digest32, GroupPoint};
use crate::ledger::Block;
use crate::monero::{KeyQuad, PublicAddress, Transaction};

pub const SEGMENT_LEN: usize = 32;
pub const FRAME_HEADER_LEN: usize = 2;
pub const MAX_SEGMENTS: usize = MAX_SEQ as usize;
/// Largest message one session can carry: 999 segments minus the length header.
pub const MAX_MESSAGE_LEN: usize = MAX_SEGMENTS * SEGMENT_LEN - FRAME_HEADER_LEN;

pub type Segment = [u8; SEGMENT_LEN];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Blocks without feedback before the sender gives up.
    pub feedback_timeout_blocks: u64,
    /// Transaction-key draws allowed per special field.
    pub max_draws: u32,
    pub fee: u64,
    /// How many blocks of transactions the receiver keeps while waiting for
    /// an AuthTx.
    pub pre_auth_buffer_blocks: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            feedback_timeout_blocks: 10,
            max_draws: DEFAULT_MAX_DRAWS,
            fee: crate::ledger::DEFAULT_MIN_FEE,
            pre_auth_buffer_blocks: 64,
        }
    }
}

/// Frames `m` as `len (u16 BE) || m || random padding` and cuts it into
/// 32-byte segments.
pub fn segment_message<R: RngCore>(m: &[u8], rng: &mut R) -> Result<Vec<Segment>, SessionError> {
    if m.len() > MAX_MESSAGE_LEN {
        return Err(SessionError::MessageTooLarge { len: m.len(), max: MAX_MESSAGE_LEN });
    }
    let n = (m.len() + FRAME_HEADER_LEN).div_ceil(SEGMENT_LEN);
    let mut frame = vec![0u8; n * SEGMENT_LEN];
    frame[..2].copy_from_slice(&(m.len() as u16).to_be_bytes());
    frame[2..2 + m.len()].copy_from_slice(m);
    rng.fill_bytes(&mut frame[2 + m.len()..]);
    Ok(frame
        .chunks_exact(SEGMENT_LEN)
        .map(|c| c.try_into().expect("exact chunk"))
        .collect())
}

/// Inverse of [`segment_message`].
pub fn reassemble(segments: &[Segment]) -> Result<Vec<u8>, SessionError> {
    let frame: Vec<u8> = segments.iter().flatten().copied().collect();
    if frame.len() < FRAME_HEADER_LEN {
        return Err(SessionError::MalformedFrame("empty frame"));
    }
    let len = u16::from_be_bytes([frame[0], frame[1]]) as usize;
    if FRAME_HEADER_LEN + len > frame.len() {
        return Err(SessionError::MalformedFrame("length header exceeds frame"));
    }
    if (FRAME_HEADER_LEN + len).div_ceil(SEGMENT_LEN) != segments.len() {
        return Err(SessionError::MalformedFrame("segment count does not match length header"));
    }
    Ok(frame[FRAME_HEADER_LEN..FRAME_HEADER_LEN + len].to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Sender,
    Receiver,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Auth,
    Trans,
    Feedback,
    Session,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Send,
    Resend,
    Authenticated,
    Superseded,
    Extract,
    Duplicate,
    Ack,
    Nack,
    Done,
    Complete,
    TimedOut,
}

/// One line of a session transcript.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub party: Party,
    pub stage: Stage,
    /// Height of the block that triggered the record; `None` before any block.
    pub height: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tx_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seq: Option<u16>,
    pub action: Action,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<String>,
}

impl TranscriptRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("transcript records serialize")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SenderState {
    Idle,
    AuthSent,
    Transmitting,
    AwaitFeedback,
    Resending,
    Done,
    TimedOut,
}

impl SenderState {
    pub fn is_terminal(self) -> bool {
        matches!(self, SenderState::Done | SenderState::TimedOut)
    }
}

#[derive(Clone, Debug)]
pub struct SenderSession {
    me: KeyQuad,
    recipient: PublicAddress,
    segments: Vec<Segment>,
    signature: Option<Signature>,
    sent: BTreeMap<u16, Vec<Digest32>>,
    own_txs: HashSet<Digest32>,
    state: SenderState,
    config: SessionConfig,
    last_height: Option<u64>,
    idle_blocks: u64,
    resends: u32,
    diagnostic: Option<String>,
    transcript: Vec<TranscriptRecord>,
}

impl SenderSession {
    pub fn new<R: RngCore>(
        me: KeyQuad,
        recipient: PublicAddress,
        message: &[u8],
        config: SessionConfig,
        rng: &mut R,
    ) -> Result<Self, SessionError> {
        Ok(SenderSession {
            segments: segment_message(message, rng)?,
            me,
            recipient,
            signature: None,
            sent: BTreeMap::new(),
            own_txs: HashSet::new(),
            state: SenderState::Idle,
            config,
            last_height: None,
            idle_blocks: 0,
            resends: 0,
            diagnostic: None,
            transcript: Vec::new(),
        })
    }

    pub fn state(&self) -> SenderState {
        self.state
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn signature(&self) -> Option<&Signature> {
        self.signature.as_ref()
    }

    pub fn transcript(&self) -> &[TranscriptRecord] {
        &self.transcript
    }

    pub fn resends(&self) -> u32 {
        self.resends
    }

    /// Transaction ids sent for each sequence number, in send order.
    pub fn sent_ids(&self) -> &BTreeMap<u16, Vec<Digest32>> {
        &self.sent
    }

    /// Why the session timed out, if it did.
    pub fn diagnostic(&self) -> Option<&str> {
        self.diagnostic.as_deref()
    }

    fn record(&mut self, stage: Stage, tx_id: Option<Digest32>, seq: Option<u16>, action: Action) {
        self.transcript.push(TranscriptRecord {
            party: Party::Sender,
            stage,
            height: self.last_height,
            tx_id: tx_id.map(|d| d.to_hex()),
            seq,
            action,
            detail: None,
        });
    }

    fn trans_tx<R: RngCore + CryptoRng>(&mut self, seq: u16, rng: &mut R) -> Result<Transaction, SessionError> {
        let sig = self.signature.expect("signature set before transmission");
        let is_final = seq as usize == self.segments.len();
        let field = codec::gen_trans_field(
            &self.segments[seq as usize - 1],
            seq as u32,
            is_final,
            &self.recipient,
            &sig,
            rng,
            self.config.max_draws,
        )?;
        let tx = codec::trans_tx(&field, &self.me.public(), rng, self.config.fee);
        let id = tx.id();
        self.sent.entry(seq).or_default().push(id);
        self.own_txs.insert(id);
        Ok(tx)
    }

    /// Builds the AuthTx followed by one TransTx per segment; the last one
    /// carries the final flag.
    pub fn start<R: RngCore + CryptoRng>(&mut self, rng: &mut R) -> Result<Vec<Transaction>, SessionError> {
        if self.state != SenderState::Idle {
            return Err(SessionError::AlreadyStarted);
        }
        let field = codec::gen_auth_field(rng, &self.me.view_priv, &self.recipient, self.config.max_draws)?;
        self.signature = Some(field.signature);
        let auth = codec::auth_tx(&field, &self.recipient, &self.me.public(), rng, self.config.fee);
        let auth_id = auth.id();
        self.own_txs.insert(auth_id);
        self.state = SenderState::AuthSent;
        self.record(Stage::Auth, Some(auth_id), None, Action::Send);

        let mut out = vec![auth];
        self.state = SenderState::Transmitting;
        for seq in 1..=self.segments.len() as u16 {
            let tx = self.trans_tx(seq, rng)?;
            self.record(Stage::Trans, Some(tx.id()), Some(seq), Action::Send);
            out.push(tx);
        }
        self.state = SenderState::AwaitFeedback;
        Ok(out)
    }

    /// Reacts to feedback in a newly confirmed block. Blocks at or below the
    /// last processed height are ignored.
    pub fn on_block<R: RngCore + CryptoRng>(
        &mut self,
        block: &Block,
        rng: &mut R,
    ) -> Result<Vec<Transaction>, SessionError> {
        if self.state.is_terminal() || self.state == SenderState::Idle {
            return Ok(Vec::new());
        }
        if self.last_height.is_some_and(|h| block.height <= h) {
            return Ok(Vec::new());
        }
        self.last_height = Some(block.height);

        let mut out = Vec::new();
        let mut saw_feedback = false;
        let mut resent_now = HashSet::new();
        for tx in &block.txs {
            let id = tx.id();
            if self.own_txs.contains(&id) {
                continue;
            }
            match parse_feedback(tx, &self.me, &self.recipient.view_pub) {
                Feedback::NotFeedback => {}
                Feedback::Ack => {
                    self.record(Stage::Feedback, Some(id), None, Action::Ack);
                    self.state = SenderState::Done;
                    self.record(Stage::Session, None, None, Action::Done);
                    return Ok(out);
                }
                Feedback::Nack(seq) => {
                    saw_feedback = true;
                    self.record(Stage::Feedback, Some(id), Some(seq), Action::Nack);
                    if seq == 0 || seq as usize > self.segments.len() || !resent_now.insert(seq) {
                        continue;
                    }
                    let tx = self.trans_tx(seq, rng)?;
                    self.resends += 1;
                    self.record(Stage::Trans, Some(tx.id()), Some(seq), Action::Resend);
                    self.state = SenderState::Resending;
                    out.push(tx);
                }
            }
        }
        if saw_feedback {
            self.idle_blocks = 0;
        } else {
            self.idle_blocks += 1;
            if self.idle_blocks >= self.config.feedback_timeout_blocks {
                self.state = SenderState::TimedOut;
                let msg = format!(
                    "no feedback from recipient within {} blocks (last block {}); check node connectivity",
                    self.config.feedback_timeout_blocks, block.height
                );
                self.transcript.push(TranscriptRecord {
                    party: Party::Sender,
                    stage: Stage::Session,
                    height: self.last_height,
                    tx_id: None,
                    seq: None,
                    action: Action::TimedOut,
                    detail: Some(msg.clone()),
                });
                self.diagnostic = Some(msg);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiverState {
    Listening,
    Receiving,
    Complete,
}

#[derive(Clone, Debug)]
pub struct ReceiverSession {
    me: KeyQuad,
    sender: PublicAddress,
    config: SessionConfig,
    signature: Option<Signature>,
    auth_tx: Option<Digest32>,
    received: BTreeMap<u16, Segment>,
    final_seq: Option<u16>,
    state: ReceiverState,
    pending: VecDeque<(u64, Transaction)>,
    last_height: Option<u64>,
    feedback_rounds: u32,
    completed: Vec<Vec<u8>>,
    transcript: Vec<TranscriptRecord>,
}

impl ReceiverSession {
    pub fn new(me: KeyQuad, sender: PublicAddress, config: SessionConfig) -> Self {
        ReceiverSession {
            me,
            sender,
            config,
            signature: None,
            auth_tx: None,
            received: BTreeMap::new(),
            final_seq: None,
            state: ReceiverState::Listening,
            pending: VecDeque::new(),
            last_height: None,
            feedback_rounds: 0,
            completed: Vec::new(),
            transcript: Vec::new(),
        }
    }

    pub fn state(&self) -> ReceiverState {
        self.state
    }

    pub fn signature(&self) -> Option<&Signature> {
        self.signature.as_ref()
    }

    pub fn final_seq(&self) -> Option<u16> {
        self.final_seq
    }

    pub fn received_seqs(&self) -> impl Iterator<Item = u16> + '_ {
        self.received.keys().copied()
    }

    /// Number of FbTx emitted for the current session.
    pub fn feedback_rounds(&self) -> u32 {
        self.feedback_rounds
    }

    /// The most recently completed message.
    pub fn message(&self) -> Option<&[u8]> {
        self.completed.last().map(Vec::as_slice)
    }

    pub fn completed_messages(&self) -> &[Vec<u8>] {
        &self.completed
    }

    pub fn transcript(&self) -> &[TranscriptRecord] {
        &self.transcript
    }

    pub fn sender_view_pub(&self) -> &GroupPoint {
        &self.sender.view_pub
    }

    fn record(&mut self, stage: Stage, tx_id: Option<Digest32>, seq: Option<u16>, action: Action) {
        self.transcript.push(TranscriptRecord {
            party: Party::Receiver,
            stage,
            height: self.last_height,
            tx_id: tx_id.map(|d| d.to_hex()),
            seq,
            action,
            detail: None,
        });
    }

    fn begin_session(&mut self, signature: Signature, auth_id: Digest32) {
        if self.state == ReceiverState::Receiving {
            self.record(Stage::Session, self.auth_tx, None, Action::Superseded);
        }
        self.signature = Some(signature);
        self.auth_tx = Some(auth_id);
        self.received.clear();
        self.final_seq = None;
        self.feedback_rounds = 0;
        self.state = ReceiverState::Receiving;
        self.record(Stage::Auth, Some(auth_id), None, Action::Authenticated);
    }

    /// Returns true when the segment added new information.
    fn accept_segment(&mut self, id: Digest32, data: Segment, seq: u16, is_final: bool) -> bool {
        if seq == 0 || self.final_seq.is_some_and(|f| seq > f) {
            return false;
        }
        if self.received.contains_key(&seq) {
            self.record(Stage::Trans, Some(id), Some(seq), Action::Duplicate);
            return false;
        }
        self.received.insert(seq, data);
        if is_final && self.final_seq.is_none() {
            self.final_seq = Some(seq);
            self.received.retain(|s, _| *s <= seq);
        }
        self.record(Stage::Trans, Some(id), Some(seq), Action::Extract);
        true
    }

    /// Scans one confirmed block. Returns the FbTx to broadcast, if the block
    /// changed what the receiver knows about a session whose length is known.
    pub fn on_block<R: RngCore + CryptoRng>(
        &mut self,
        block: &Block,
        rng: &mut R,
    ) -> Result<Option<Transaction>, SessionError> {
        if self.last_height.is_some_and(|h| block.height <= h) {
            return Ok(None);
        }
        self.last_height = Some(block.height);

        let candidates = [self.sender.view_pub];
        let mut auth_ids = HashSet::new();
        for tx in &block.txs {
            if let AuthResult::Authenticated { signature, .. } = extract_auth(tx, &self.me, &candidates) {
                let id = tx.id();
                auth_ids.insert(id);
                if self.signature != Some(signature) {
                    self.begin_session(signature, id);
                }
            }
        }

        let Some(sig) = self.signature else {
            // Nothing can be decoded without the AuthTx signature yet.
            let horizon = block.height.saturating_sub(self.config.pre_auth_buffer_blocks);
            while self.pending.front().is_some_and(|(h, _)| *h < horizon) {
                self.pending.pop_front();
            }
            self.pending.extend(block.txs.iter().map(|tx| (block.height, tx.clone())));
            return Ok(None);
        };

        let mut progress = false;
        let backlog: Vec<Transaction> = self.pending.drain(..).map(|(_, tx)| tx).collect();
        for tx in backlog.iter().chain(block.txs.iter()) {
            let id = tx.id();
            if auth_ids.contains(&id) || Some(id) == self.auth_tx {
                continue;
            }
            if let SegmentResult::Segment { data, seq, is_final } = extract_segment(tx, &self.me, &sig) {
                progress |= self.accept_segment(id, data, seq, is_final);
            }
        }

        if !progress || self.state != ReceiverState::Receiving {
            return Ok(None);
        }
        let Some(final_seq) = self.final_seq else {
            return Ok(None);
        };
        let mms = (1..=final_seq).find(|s| !self.received.contains_key(s)).unwrap_or(0);
        let field = codec::gen_fb_field(rng, &self.me.view_priv, &self.sender, mms, self.config.max_draws)?;
        let tx = codec::fb_tx(&field, &self.sender, &self.me.public(), rng, self.config.fee);
        self.feedback_rounds += 1;
        if mms == 0 {
            self.record(Stage::Feedback, Some(tx.id()), None, Action::Ack);
            let segments: Vec<Segment> = self.received.values().copied().collect();
            self.completed.push(reassemble(&segments)?);
            self.state = ReceiverState::Complete;
            self.record(Stage::Session, self.auth_tx, None, Action::Complete);
        } else {
            self.record(Stage::Feedback, Some(tx.id()), Some(mms), Action::Nack);
        }
        Ok(Some(tx))
    }
}
