//! Resumable sender and receiver steps over a chain file.
//!
//! A step rebuilds its session by replaying every block since the session
//! began with the same seeded generator, so the transactions it would emit
//! are byte-identical to the ones emitted by earlier steps. A small state file
//! remembers which of those were already submitted and how much of the
//! transcript was already printed. After submitting, a step produces one
//! block, which is how time advances for the other party.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mbct_core::group::hash;
use mbct_core::ledger::{DropPolicy, Ledger};
use mbct_core::monero::{KeyQuad, PublicAddress, Transaction, WalletFile};
use mbct_core::session::{ReceiverState, SenderState, SessionConfig, TranscriptRecord};
use mbct_core::{ReceiverSession, SenderSession};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn load_wallet(path: &Path) -> Result<KeyQuad> {
    let file: WalletFile = read_json(path)?;
    file.key_quad().with_context(|| format!("{} is not a consistent private wallet", path.display()))
}

pub fn load_public(path: &Path) -> Result<PublicAddress> {
    let file: WalletFile = read_json(path)?;
    file.public_address().with_context(|| format!("{} holds malformed public keys", path.display()))
}

pub fn open_chain(path: &Path, min_fee: u64, policy: DropPolicy, create: bool) -> Result<Ledger> {
    if path.exists() {
        Ledger::load_chain(path, min_fee, policy).with_context(|| format!("loading chain {}", path.display()))
    } else if create {
        Ok(Ledger::new(min_fee, policy))
    } else {
        bail!("chain file {} does not exist", path.display())
    }
}

pub fn default_state_path(chain: &Path, suffix: &str) -> PathBuf {
    let mut name = chain.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

#[derive(Debug, Serialize, Deserialize)]
struct SendState {
    seed: u64,
    start_height: u64,
    recipient_view_pub: String,
    recipient_spend_pub: String,
    message_hex: String,
    session: SessionConfig,
    submitted: BTreeSet<String>,
    printed: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReceiveState {
    seed: u64,
    from_height: u64,
    senders: Vec<String>,
    submitted: BTreeSet<String>,
    printed: usize,
}

pub struct StepReport {
    /// Transcript records not printed by earlier steps.
    pub records: Vec<TranscriptRecord>,
    pub status: serde_json::Value,
}

pub struct SendArgs<'a> {
    pub chain: &'a Path,
    pub state: &'a Path,
    pub wallet: &'a KeyQuad,
    pub recipient: Option<PublicAddress>,
    pub message: Option<Vec<u8>>,
    pub session: SessionConfig,
    pub policy: DropPolicy,
    pub min_fee: u64,
    pub seed: u64,
}

fn submit_new(ledger: &mut Ledger, submitted: &mut BTreeSet<String>, txs: Vec<Transaction>) -> Result<Vec<String>> {
    let mut fresh = Vec::new();
    for tx in txs {
        let id = tx.id().to_hex();
        if submitted.contains(&id) {
            continue;
        }
        ledger.submit_tx(tx).with_context(|| format!("ledger rejected {id}"))?;
        submitted.insert(id.clone());
        fresh.push(id);
    }
    Ok(fresh)
}

pub fn send_step(args: SendArgs<'_>) -> Result<StepReport> {
    let mut ledger = open_chain(args.chain, args.min_fee, args.policy, true)?;
    let mut state = if args.state.exists() {
        let s: SendState = read_json(args.state)?;
        if let Some(m) = &args.message {
            if hex::encode(m) != s.message_hex {
                bail!(
                    "a session with a different message is recorded in {}; remove it or pass --state",
                    args.state.display()
                );
            }
        }
        s
    } else {
        let recipient = args.recipient.context("--to is required to start a session")?;
        let message = args.message.clone().context("--message is required to start a session")?;
        SendState {
            seed: args.seed,
            start_height: ledger.height(),
            recipient_view_pub: recipient.view_pub.to_hex(),
            recipient_spend_pub: recipient.spend_pub.to_hex(),
            message_hex: hex::encode(message),
            session: args.session,
            submitted: BTreeSet::new(),
            printed: 0,
        }
    };
    let recipient = WalletFile {
        view_priv: None,
        view_pub: state.recipient_view_pub.clone(),
        spend_priv: None,
        spend_pub: state.recipient_spend_pub.clone(),
    }
    .public_address()?;
    if args.recipient.is_some_and(|r| r != recipient) {
        bail!("the recorded session is addressed to a different recipient");
    }
    let message = hex::decode(&state.message_hex).context("corrupt message in state file")?;

    let mut rng = ChaCha20Rng::seed_from_u64(state.seed);
    let mut sender = SenderSession::new(args.wallet.clone(), recipient, &message, state.session, &mut rng)?;
    let mut pending = sender.start(&mut rng)?;
    let start = state.start_height as usize;
    for block in ledger.blocks()[start.min(ledger.blocks().len())..].to_vec() {
        pending.extend(sender.on_block(&block, &mut rng)?);
    }
    let mut fresh = Vec::new();
    if !sender.state().is_terminal() {
        fresh = submit_new(&mut ledger, &mut state.submitted, pending)?;
        let block = ledger.produce_block().clone();
        let more = sender.on_block(&block, &mut rng)?;
        // A block holding only our own transactions never triggers a resend.
        debug_assert!(more.is_empty());
    }
    ledger.save_chain(args.chain)?;

    let records = sender.transcript()[state.printed.min(sender.transcript().len())..].to_vec();
    state.printed = sender.transcript().len();
    write_json(args.state, &state)?;

    let status = match sender.state() {
        SenderState::Done => "done",
        SenderState::TimedOut => "timed_out",
        _ => "awaiting_feedback",
    };
    Ok(StepReport {
        records,
        status: serde_json::json!({
            "status": status,
            "height": ledger.height(),
            "submitted": fresh,
            "segments": sender.segments().len(),
            "resends": sender.resends(),
            "message_hash": hash(&message).to_hex(),
            "diagnostic": sender.diagnostic(),
        }),
    })
}

pub struct ReceiveArgs<'a> {
    pub chain: &'a Path,
    pub state: &'a Path,
    pub wallet: &'a KeyQuad,
    pub senders: &'a [PublicAddress],
    pub session: SessionConfig,
    pub policy: DropPolicy,
    pub min_fee: u64,
    pub seed: u64,
    pub from_height: u64,
}

pub struct ReceiveReport {
    pub step: StepReport,
    /// Completed message per sender, in `senders` order.
    pub messages: Vec<Option<Vec<u8>>>,
    pub any_session: bool,
}

fn sender_rng(seed: u64, index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn receive_step(args: ReceiveArgs<'_>) -> Result<ReceiveReport> {
    if args.senders.is_empty() {
        bail!("at least one --from sender is required");
    }
    let mut ledger = open_chain(args.chain, args.min_fee, args.policy, false)?;
    let senders_hex: Vec<String> = args.senders.iter().map(|s| s.view_pub.to_hex()).collect();
    let mut state = if args.state.exists() {
        let s: ReceiveState = read_json(args.state)?;
        if s.senders != senders_hex {
            bail!("{} records a different sender list; remove it or pass --state", args.state.display());
        }
        s
    } else {
        ReceiveState {
            seed: args.seed,
            from_height: args.from_height,
            senders: senders_hex,
            submitted: BTreeSet::new(),
            printed: 0,
        }
    };

    let mut sessions: Vec<(ReceiverSession, ChaCha20Rng)> = args
        .senders
        .iter()
        .enumerate()
        .map(|(i, s)| (ReceiverSession::new(args.wallet.clone(), *s, args.session), sender_rng(state.seed, i)))
        .collect();
    let mut pending = Vec::new();
    let from = (state.from_height as usize).min(ledger.blocks().len());
    for block in &ledger.blocks()[from..] {
        for (session, rng) in sessions.iter_mut() {
            pending.extend(session.on_block(block, rng)?);
        }
    }
    let fresh = submit_new(&mut ledger, &mut state.submitted, pending)?;
    if !fresh.is_empty() {
        let block = ledger.produce_block().clone();
        for (session, rng) in sessions.iter_mut() {
            session.on_block(&block, rng)?;
        }
    }
    ledger.save_chain(args.chain)?;

    // Records of all sessions, in block order.
    let mut all: Vec<TranscriptRecord> = sessions.iter().flat_map(|(s, _)| s.transcript().iter().cloned()).collect();
    all.sort_by_key(|r| r.height);
    let records = all[state.printed.min(all.len())..].to_vec();
    state.printed = all.len();
    write_json(args.state, &state)?;

    let any_session = sessions.iter().any(|(s, _)| s.state() != ReceiverState::Listening);
    let per_sender: Vec<serde_json::Value> = sessions
        .iter()
        .zip(args.senders)
        .map(|((s, _), addr)| {
            serde_json::json!({
                "sender_view_pub": addr.view_pub.to_hex(),
                "state": s.state(),
                "received": s.received_seqs().count(),
                "final_seq": s.final_seq(),
                "feedback_rounds": s.feedback_rounds(),
                "message_hash": s.message().map(|m| hash(m).to_hex()),
            })
        })
        .collect();
    let status = if !any_session {
        "no_session"
    } else if sessions.iter().all(|(s, _)| s.state() != ReceiverState::Receiving) {
        "complete"
    } else {
        "receiving"
    };
    Ok(ReceiveReport {
        messages: sessions.iter().map(|(s, _)| s.message().map(<[u8]>::to_vec)).collect(),
        any_session,
        step: StepReport {
            records,
            status: serde_json::json!({
                "status": status,
                "height": ledger.height(),
                "submitted": fresh,
                "senders": per_sender,
            }),
        },
    })
}
