//! In-process driver that runs a sender and a receiver against one ledger,
//! alternating block production with each party's reaction.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{LedgerError, SessionError};
use crate::ledger::{DropPolicy, Ledger};
use crate::monero::KeyQuad;
use crate::session::{ReceiverSession, SenderSession, SenderState, SessionConfig, TranscriptRecord};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub session: SessionConfig,
    /// Applied from the first block of the session.
    pub policy: DropPolicy,
    /// Switch the drop policy off once the receiver has sent this many FbTx.
    pub disable_drops_after_rounds: Option<u32>,
    /// Hard stop, in blocks.
    pub max_blocks: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            session: SessionConfig::default(),
            policy: DropPolicy::none(),
            disable_drops_after_rounds: None,
            max_blocks: 10_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub sender_state: SenderState,
    pub delivered: Option<Vec<u8>>,
    pub transcript: Vec<TranscriptRecord>,
    pub feedback_rounds: u32,
    pub resends: u32,
    /// Transactions the ledger dropped during this run.
    pub dropped: usize,
    pub blocks: u64,
    pub diagnostic: Option<String>,
}

impl SimOutcome {
    pub fn integrity_holds(&self, message: &[u8]) -> bool {
        self.sender_state == SenderState::Done && self.delivered.as_deref() == Some(message)
    }

    pub fn transcript_jsonl(&self) -> String {
        self.transcript.iter().map(|r| r.to_json_line() + "\n").collect()
    }
}

/// Seeds for the sender and receiver generators, derived from one run seed.
pub fn party_rngs(seed: u64) -> (ChaCha20Rng, ChaCha20Rng) {
    let mut root = ChaCha20Rng::seed_from_u64(seed);
    (ChaCha20Rng::seed_from_u64(root.next_u64()), ChaCha20Rng::seed_from_u64(root.next_u64()))
}

/// Runs one complete session from `alice` to `bob` on `ledger`.
pub fn run_session(
    ledger: &mut Ledger,
    alice: &KeyQuad,
    bob: &KeyQuad,
    message: &[u8],
    config: &SimConfig,
    seed: u64,
) -> Result<SimOutcome, SimError> {
    let (mut srng, mut rrng) = party_rngs(seed);
    let mut sender = SenderSession::new(alice.clone(), bob.public(), message, config.session, &mut srng)?;
    let mut receiver = ReceiverSession::new(bob.clone(), alice.public(), config.session);
    ledger.set_policy(config.policy.clone());
    let dropped_before = ledger.dropped().len();
    let first_height = ledger.height();

    let mut transcript = Vec::new();
    let (mut s_seen, mut r_seen) = (0, 0);
    let mut drain = |sender: &SenderSession, receiver: &ReceiverSession, out: &mut Vec<TranscriptRecord>| {
        out.extend_from_slice(&sender.transcript()[s_seen..]);
        s_seen = sender.transcript().len();
        out.extend_from_slice(&receiver.transcript()[r_seen..]);
        r_seen = receiver.transcript().len();
    };

    for tx in sender.start(&mut srng)? {
        ledger.submit_tx(tx)?;
    }
    drain(&sender, &receiver, &mut transcript);

    for _ in 0..config.max_blocks {
        let block = ledger.produce_block().clone();
        if let Some(fb) = receiver.on_block(&block, &mut rrng)? {
            ledger.submit_tx(fb)?;
        }
        for tx in sender.on_block(&block, &mut srng)? {
            ledger.submit_tx(tx)?;
        }
        drain(&sender, &receiver, &mut transcript);
        if let Some(n) = config.disable_drops_after_rounds {
            if receiver.feedback_rounds() >= n && ledger.policy() != &DropPolicy::none() {
                ledger.set_policy(DropPolicy::none());
            }
        }
        if sender.state().is_terminal() {
            break;
        }
    }

    Ok(SimOutcome {
        sender_state: sender.state(),
        delivered: receiver.message().map(<[u8]>::to_vec),
        transcript,
        feedback_rounds: receiver.feedback_rounds(),
        resends: sender.resends(),
        dropped: ledger.dropped().len() - dropped_before,
        blocks: ledger.height() - first_height,
        diagnostic: sender.diagnostic().map(str::to_owned),
    })
}

/// Canned attack scenarios.
#[derive(Clone, Debug, PartialEq)]
pub enum NamedScenario {
    /// No loss.
    Clean,
    /// Lose the first transmission of segment `seq`.
    DropSeq(u16),
    /// Lose every transaction, forever.
    DropAllForever,
    /// Lose each transaction with probability `percent`/100.
    Random(u8),
}

impl NamedScenario {
    pub fn parse(name: &str) -> Result<Self, String> {
        if name == "clean" || name == "none" {
            return Ok(NamedScenario::Clean);
        }
        if name == "drop-all-forever" {
            return Ok(NamedScenario::DropAllForever);
        }
        if let Some(n) = name.strip_prefix("drop-seq-") {
            return n.parse().map(NamedScenario::DropSeq).map_err(|_| format!("bad sequence in {name:?}"));
        }
        if let Some(n) = name.strip_prefix("random-") {
            return n
                .parse()
                .ok()
                .filter(|p| *p <= 100)
                .map(NamedScenario::Random)
                .ok_or_else(|| format!("bad percentage in {name:?}"));
        }
        Err(format!(
            "unknown scenario {name:?} (expected clean, drop-seq-N, drop-all-forever, random-P)"
        ))
    }

    /// Drop policy for a session whose AuthTx gets submission ordinal `base`.
    /// Segment `k` is submitted right after it, at `base + k`.
    pub fn policy(&self, base: u64, seed: u64) -> DropPolicy {
        match self {
            NamedScenario::Clean => DropPolicy::none(),
            NamedScenario::DropSeq(seq) => DropPolicy::target([base + *seq as u64]),
            NamedScenario::DropAllForever => DropPolicy::random(1.0, seed),
            NamedScenario::Random(p) => DropPolicy::random(*p as f64 / 100.0, seed),
        }
    }
}
