//! Per-party views of a protocol run.
//!
//! Every message that crosses a party boundary is appended to a
//! [`MessageLog`]. A [`Transcript`] is the ordered list of per-round logs and
//! is what the zero-knowledge-surface tests inspect.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::ffield::FieldElement;
use crate::sharing::PartyId;

const ELEMENT_BYTES: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Endpoint {
    Client(usize),
    Server(PartyId),
    /// The sealed comparison functionality. Messages it sends are idealized.
    IdealGate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    /// A client's share of its update, client -> server.
    ClientShare,
    /// A server's share of `b = x - a` during norm validation.
    MaskedDifference,
    /// A server's shares of `d = x - a`, `e = y - b` in Beaver multiplication.
    BeaverOpening,
    /// A share of the validation bit.
    VerdictShare,
    /// A server's noisy accumulator, exchanged at the end of a round.
    NoisyAccumulator,
    /// A plaintext update sent directly to the server (baselines only).
    PlaintextUpdate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptLevel {
    /// Keep payloads.
    #[default]
    Full,
    /// Keep endpoints, kinds and sizes only.
    Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender: Endpoint,
    pub receiver: Endpoint,
    pub kind: MessageKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub client: Option<usize>,
    pub bytes: u64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub payload: Vec<FieldElement>,
    /// Real-valued payload of plaintext baseline messages.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub plaintext: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MessageLog {
    #[serde(skip)]
    level: TranscriptLevel,
    pub messages: Vec<Message>,
}

impl MessageLog {
    pub fn new(level: TranscriptLevel) -> Self {
        MessageLog {
            level,
            messages: Vec::new(),
        }
    }

    pub fn level(&self) -> TranscriptLevel {
        self.level
    }

    pub fn record(
        &mut self,
        sender: Endpoint,
        receiver: Endpoint,
        kind: MessageKind,
        client: Option<usize>,
        payload: &[FieldElement],
    ) {
        let bytes = payload.len() as u64 * ELEMENT_BYTES;
        let payload = match self.level {
            TranscriptLevel::Full => payload.to_vec(),
            TranscriptLevel::Summary => Vec::new(),
        };
        self.messages.push(Message {
            sender,
            receiver,
            kind,
            client,
            bytes,
            payload,
            plaintext: Vec::new(),
        });
    }

    pub fn record_plaintext(&mut self, sender: Endpoint, receiver: Endpoint, client: usize, values: &[f64]) {
        let plaintext = match self.level {
            TranscriptLevel::Full => values.to_vec(),
            TranscriptLevel::Summary => Vec::new(),
        };
        self.messages.push(Message {
            sender,
            receiver,
            kind: MessageKind::PlaintextUpdate,
            client: Some(client),
            bytes: values.len() as u64 * ELEMENT_BYTES,
            payload: Vec::new(),
            plaintext,
        });
    }

    pub fn append(&mut self, other: MessageLog) {
        self.messages.extend(other.messages);
    }

    pub fn kinds(&self) -> BTreeSet<MessageKind> {
        self.messages.iter().map(|m| m.kind).collect()
    }

    /// Messages delivered to `who`, i.e. that party's view.
    pub fn view_of(&self, who: Endpoint) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(move |m| m.receiver == who)
    }

    pub fn bytes_sent_by(&self, who: Endpoint) -> u64 {
        self.messages
            .iter()
            .filter(|m| m.sender == who)
            .map(|m| m.bytes)
            .sum()
    }
}

/// Everything recorded about one round.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub selected: Vec<usize>,
    pub valid: Vec<usize>,
    pub verdicts: Vec<(usize, bool)>,
    /// SHA-256 of each server's noise seed; the seeds themselves stay sealed.
    pub noise_seals: Vec<String>,
    /// No valid submissions: the update was skipped and the noise discarded.
    pub skipped: bool,
    pub log: MessageLog,
}

impl RoundRecord {
    pub fn bytes_sent_per_party(&self) -> BytesPerParty {
        let servers = [
            self.log.bytes_sent_by(Endpoint::Server(PartyId::ServerA)),
            self.log.bytes_sent_by(Endpoint::Server(PartyId::ServerB)),
        ];
        let clients = self
            .log
            .messages
            .iter()
            .filter(|m| matches!(m.sender, Endpoint::Client(_)))
            .map(|m| m.bytes)
            .sum();
        BytesPerParty {
            server_a: servers[0],
            server_b: servers[1],
            clients,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BytesPerParty {
    pub server_a: u64,
    pub server_b: u64,
    pub clients: u64,
}

impl std::ops::AddAssign for BytesPerParty {
    fn add_assign(&mut self, rhs: Self) {
        self.server_a += rhs.server_a;
        self.server_b += rhs.server_b;
        self.clients += rhs.clients;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub rounds: Vec<RoundRecord>,
}

impl Transcript {
    pub fn kinds(&self) -> BTreeSet<MessageKind> {
        self.rounds.iter().flat_map(|r| r.log.kinds()).collect()
    }

    /// One JSON object per round.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.rounds {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
