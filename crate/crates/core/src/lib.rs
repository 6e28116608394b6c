//! Covert messaging over Monero-style transactions: special fields hidden in
//! stealth addresses and masked amounts, a session protocol with feedback
//! and retransmission, an in-memory ledger, and concealment statistics.

pub mod analysis;
pub mod codec;
pub mod error;
pub mod group;
pub mod ledger;
pub mod monero;
pub mod session;
pub mod sim;

pub use error::{AnalysisError, CodecError, GroupError, LedgerError, ParseError, SessionError};
pub use group::{Digest32, GroupPoint, Scalar};
pub use ledger::{Block, DropPolicy, Ledger, SharedLedger};
pub use monero::{KeyQuad, PublicAddress, Transaction, WalletFile};
pub use session::{ReceiverSession, SenderSession, SessionConfig};
