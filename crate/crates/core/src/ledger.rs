//! Internal distributed ledger: an append-only message bus whose blocks are
//! finalized by a quorum of consuls.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};

use serde::Serialize;
use thiserror::Error;

use crate::crypto::{
    self, Canonical, CanonicalReader, Commitment, DecodeError, Digest, KeyPair, Proof, PublicKey,
    Reveal,
};
use crate::reputation::{GravityScore, ScoreMode};
use crate::types::{DataValue, FeedId, NebulaId, NodeId, Round, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Commit,
    Reveal,
    AggSignature,
    ScoreUpdate,
}

impl MessageKind {
    fn tag(self) -> u64 {
        match self {
            MessageKind::Commit => 1,
            MessageKind::Reveal => 2,
            MessageKind::AggSignature => 3,
            MessageKind::ScoreUpdate => 4,
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MessageKind::Commit => "commit",
            MessageKind::Reveal => "reveal",
            MessageKind::AggSignature => "agg_signature",
            MessageKind::ScoreUpdate => "score_update",
        };
        f.write_str(s)
    }
}

/// An oracle's signed claim about a round's aggregated value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggSignature {
    pub agg_digest: Digest,
    pub timestamp: Tick,
    pub feed_id: FeedId,
    pub nebula_id: NebulaId,
    pub round: Round,
    pub proof: Proof,
}

/// Canonical payload signed by oracles and verified by NEBULA-SC.
pub fn signing_payload(
    agg_digest: &Digest,
    timestamp: Tick,
    feed_id: &FeedId,
    nebula_id: &NebulaId,
    round: Round,
) -> Vec<u8> {
    Canonical::new()
        .bytes(agg_digest.as_bytes())
        .u64(timestamp)
        .str(feed_id.as_str())
        .str(nebula_id.as_str())
        .u64(round)
        .finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreUpdate {
    pub ratee: NodeId,
    pub value: f64,
    pub mode: ScoreMode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessageBody {
    Commit(Commitment),
    Reveal(Reveal),
    AggSignature(AggSignature),
    ScoreUpdate(ScoreUpdate),
}

impl MessageBody {
    pub fn kind(&self) -> MessageKind {
        match self {
            MessageBody::Commit(_) => MessageKind::Commit,
            MessageBody::Reveal(_) => MessageKind::Reveal,
            MessageBody::AggSignature(_) => MessageKind::AggSignature,
            MessageBody::ScoreUpdate(_) => MessageKind::ScoreUpdate,
        }
    }

    /// `(feed, round)` for pulse messages.
    pub fn pulse_key(&self) -> Option<(&FeedId, Round)> {
        match self {
            MessageBody::Commit(c) => Some((&c.feed_id, c.round)),
            MessageBody::Reveal(r) => Some((&r.feed_id, r.round)),
            MessageBody::AggSignature(s) => Some((&s.feed_id, s.round)),
            MessageBody::ScoreUpdate(_) => None,
        }
    }

    /// The key the body says it was written by, if it names one.
    fn claimed_author(&self) -> Option<PublicKey> {
        match self {
            MessageBody::Commit(c) => Some(c.author),
            MessageBody::Reveal(r) => Some(r.author),
            MessageBody::AggSignature(_) | MessageBody::ScoreUpdate(_) => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            MessageBody::Commit(c) => Canonical::new()
                .bytes(c.digest.as_bytes())
                .str(c.feed_id.as_str())
                .u64(c.round)
                .bytes(&c.author.0)
                .finish(),
            MessageBody::Reveal(r) => {
                let tag = match r.value {
                    DataValue::Int(_) => 0,
                    DataValue::Text(_) => 1,
                };
                Canonical::new()
                    .u64(tag)
                    .bytes(&r.value.to_bytes())
                    .bytes(&r.salt)
                    .str(r.feed_id.as_str())
                    .u64(r.round)
                    .bytes(&r.author.0)
                    .finish()
            }
            MessageBody::AggSignature(s) => Canonical::new()
                .bytes(s.agg_digest.as_bytes())
                .u64(s.timestamp)
                .str(s.feed_id.as_str())
                .str(s.nebula_id.as_str())
                .u64(s.round)
                .bytes(&s.proof.signer.0)
                .bytes(&s.proof.signature)
                .finish(),
            MessageBody::ScoreUpdate(u) => Canonical::new()
                .u64(u64::from(u.ratee.0))
                .u64(u.value.to_bits())
                .u64(match u.mode {
                    ScoreMode::Automatic => 0,
                    ScoreMode::Manual => 1,
                })
                .finish(),
        }
    }

    pub fn decode(kind: MessageKind, payload: &[u8]) -> Result<Self, DecodeError> {
        let mut r = CanonicalReader::new(payload);
        let body = match kind {
            MessageKind::Commit => MessageBody::Commit(Commitment {
                digest: Digest(r.array()?),
                feed_id: FeedId(r.string()?),
                round: r.u64()?,
                author: PublicKey(r.array()?),
            }),
            MessageKind::Reveal => {
                let tag = r.u64()?;
                let value = match tag {
                    0 => DataValue::Int(i64::from_be_bytes(r.array()?)),
                    1 => DataValue::Text(r.string()?),
                    other => return Err(DecodeError::UnknownTag(other)),
                };
                MessageBody::Reveal(Reveal {
                    value,
                    salt: r.array()?,
                    feed_id: FeedId(r.string()?),
                    round: r.u64()?,
                    author: PublicKey(r.array()?),
                })
            }
            MessageKind::AggSignature => MessageBody::AggSignature(AggSignature {
                agg_digest: Digest(r.array()?),
                timestamp: r.u64()?,
                feed_id: FeedId(r.string()?),
                nebula_id: NebulaId(r.string()?),
                round: r.u64()?,
                proof: Proof {
                    signer: PublicKey(r.array()?),
                    signature: r.array()?,
                },
            }),
            MessageKind::ScoreUpdate => {
                let ratee = r.u64()?;
                let ratee = u32::try_from(ratee).map_err(|_| DecodeError::UnknownTag(ratee))?;
                let value = f64::from_bits(r.u64()?);
                let mode = match r.u64()? {
                    0 => ScoreMode::Automatic,
                    1 => ScoreMode::Manual,
                    other => return Err(DecodeError::UnknownTag(other)),
                };
                MessageBody::ScoreUpdate(ScoreUpdate {
                    ratee: NodeId(ratee),
                    value,
                    mode,
                })
            }
        };
        r.finish()?;
        Ok(body)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerMessage {
    kind: MessageKind,
    author: PublicKey,
    payload: Vec<u8>,
    author_signature: Proof,
    body: MessageBody,
    digest: Digest,
}

fn author_signing_bytes(kind: MessageKind, payload: &[u8]) -> Vec<u8> {
    Canonical::new().u64(kind.tag()).bytes(payload).finish()
}

impl LedgerMessage {
    /// Encodes and signs `body` with the author's ledger key.
    pub fn new(key: &KeyPair, body: MessageBody) -> Self {
        let kind = body.kind();
        let payload = body.encode();
        let author_signature = key.sign(&author_signing_bytes(kind, &payload));
        let author = key.public_key();
        let digest = Self::compute_digest(kind, &author, &payload, &author_signature);
        Self {
            kind,
            author,
            payload,
            author_signature,
            body,
            digest,
        }
    }

    /// Rebuilds a message from wire parts. Only the payload is checked here;
    /// signature checks happen on submission.
    pub fn from_parts(
        kind: MessageKind,
        author: PublicKey,
        payload: Vec<u8>,
        author_signature: Proof,
    ) -> Result<Self, DecodeError> {
        let body = MessageBody::decode(kind, &payload)?;
        let digest = Self::compute_digest(kind, &author, &payload, &author_signature);
        Ok(Self {
            kind,
            author,
            payload,
            author_signature,
            body,
            digest,
        })
    }

    fn compute_digest(
        kind: MessageKind,
        author: &PublicKey,
        payload: &[u8],
        sig: &Proof,
    ) -> Digest {
        Canonical::new()
            .u64(kind.tag())
            .bytes(&author.0)
            .bytes(payload)
            .bytes(&sig.signer.0)
            .bytes(&sig.signature)
            .digest()
    }

    pub fn kind(&self) -> MessageKind {
        self.kind
    }

    pub fn author(&self) -> PublicKey {
        self.author
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn author_signature(&self) -> &Proof {
        &self.author_signature
    }

    pub fn body(&self) -> &MessageBody {
        &self.body
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn signature_valid(&self) -> bool {
        self.author_signature.signer == self.author
            && crypto::verify_proof(
                &self.author_signature,
                &author_signing_bytes(self.kind, &self.payload),
            )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize)]
pub enum RejectReason {
    #[error("author signature does not verify")]
    BadSignature,
    #[error("author is not a registered node")]
    UnknownAuthor,
    #[error("message already submitted")]
    Duplicate,
    #[error("payload names a different author than the signer")]
    AuthorMismatch,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("consul set is empty")]
    NoConsuls,
    #[error("only {got} of {needed} consul proofs collected")]
    NoQuorum { got: usize, needed: usize },
    #[error("block {height}: {reason}")]
    Corrupt { height: u64, reason: String },
}

/// Number of consul proofs required to finalize a block: `floor(2M/3) + 1`.
pub fn quorum(consul_count: usize) -> usize {
    2 * consul_count / 3 + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerBlock {
    pub height: u64,
    pub parent_digest: Digest,
    pub messages: Vec<LedgerMessage>,
    pub proposer: NodeId,
    pub proposer_key: PublicKey,
    /// Consul count when the block was finalized; fixes its quorum.
    pub consul_count: usize,
    pub finality_proofs: Vec<Proof>,
    pub digest: Digest,
}

impl LedgerBlock {
    fn compute_digest(
        height: u64,
        parent: &Digest,
        proposer_key: &PublicKey,
        consul_count: usize,
        messages: &[LedgerMessage],
    ) -> Digest {
        let mut enc = Canonical::new()
            .u64(height)
            .bytes(parent.as_bytes())
            .bytes(&proposer_key.0)
            .u64(consul_count as u64);
        for m in messages {
            enc = enc.bytes(m.digest().as_bytes());
        }
        enc.digest()
    }

    /// One-line record for golden comparisons.
    pub fn dump_line(&self) -> String {
        let digests: Vec<String> = self.messages.iter().map(|m| m.digest().to_hex()).collect();
        format!(
            "height={} digest={} parent={} proposer={} proofs={} messages={} message_digests=[{}]",
            self.height,
            self.digest,
            self.parent_digest,
            self.proposer,
            self.finality_proofs.len(),
            self.messages.len(),
            digests.join(",")
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConsulSet {
    /// Ordered by descending score, ties by ascending node id.
    pub members: Vec<(NodeId, PublicKey)>,
}

impl ConsulSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.members.iter().map(|(id, _)| *id).collect()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.members.iter().any(|(id, _)| *id == node)
    }

    /// Top `m` nodes by score. `None` when fewer than `m` candidates exist.
    pub fn select(
        scores: &[GravityScore],
        m: usize,
        key_of: impl Fn(NodeId) -> Option<PublicKey>,
    ) -> Option<Self> {
        let mut ranked: Vec<(NodeId, f64, PublicKey)> = scores
            .iter()
            .filter_map(|g| key_of(g.node_id).map(|k| (g.node_id, g.score, k)))
            .collect();
        if m == 0 || ranked.len() < m {
            return None;
        }
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Some(Self {
            members: ranked
                .into_iter()
                .take(m)
                .map(|(id, _, k)| (id, k))
                .collect(),
        })
    }
}

/// Produces a consul's finality proof over a proposed block, or withholds it.
pub trait ConsulSigner {
    fn sign_block(&self, consul: NodeId, block_digest: &Digest) -> Option<Proof>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum RotationOutcome {
    Rotated(ConsulSet),
    /// Too few candidates; the previous set stays in place.
    Retained {
        candidates: usize,
        wanted: usize,
    },
}

#[derive(Debug, Clone, Default)]
pub struct Ledger {
    authors: BTreeMap<PublicKey, NodeId>,
    pending: BTreeMap<(PublicKey, Digest), LedgerMessage>,
    seen: HashSet<Digest>,
    blocks: Vec<LedgerBlock>,
    consuls: ConsulSet,
    consul_count: usize,
    index: BTreeMap<(MessageKind, FeedId, Round), Vec<(usize, usize)>>,
}

impl Ledger {
    pub fn new(consul_count: usize) -> Self {
        Self {
            consul_count,
            ..Self::default()
        }
    }

    pub fn register_author(&mut self, key: PublicKey, node: NodeId) {
        self.authors.insert(key, node);
    }

    pub fn deregister_author(&mut self, key: &PublicKey) {
        self.authors.remove(key);
    }

    pub fn author_node(&self, key: &PublicKey) -> Option<NodeId> {
        self.authors.get(key).copied()
    }

    pub fn consuls(&self) -> &ConsulSet {
        &self.consuls
    }

    pub fn set_consuls(&mut self, consuls: ConsulSet) {
        self.consuls = consuls;
    }

    pub fn blocks(&self) -> &[LedgerBlock] {
        &self.blocks
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn head_digest(&self) -> Digest {
        self.blocks.last().map_or(Digest::ZERO, |b| b.digest)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn submit(&mut self, msg: LedgerMessage) -> Result<Digest, RejectReason> {
        if !self.authors.contains_key(&msg.author) {
            return Err(RejectReason::UnknownAuthor);
        }
        if !msg.signature_valid() {
            return Err(RejectReason::BadSignature);
        }
        if msg.body.claimed_author().is_some_and(|a| a != msg.author) {
            return Err(RejectReason::AuthorMismatch);
        }
        let digest = msg.digest();
        if !self.seen.insert(digest) {
            return Err(RejectReason::Duplicate);
        }
        self.pending.insert((msg.author, digest), msg);
        Ok(digest)
    }

    /// Proposes every pending message and collects consul proofs. On
    /// `NoQuorum` nothing changes and the messages stay pending.
    pub fn finalize_block(
        &mut self,
        signer: &impl ConsulSigner,
    ) -> Result<&LedgerBlock, LedgerError> {
        let m = self.consuls.len();
        if m == 0 {
            return Err(LedgerError::NoConsuls);
        }
        let height = self.height() + 1;
        let (proposer, proposer_key) = self.consuls.members[(height % m as u64) as usize];
        let parent_digest = self.head_digest();
        let messages: Vec<LedgerMessage> = self.pending.values().cloned().collect();
        let digest =
            LedgerBlock::compute_digest(height, &parent_digest, &proposer_key, m, &messages);

        let needed = quorum(m);
        let mut proofs = Vec::new();
        for (consul, key) in &self.consuls.members {
            if let Some(proof) = signer.sign_block(*consul, &digest) {
                if proof.signer == *key && crypto::verify_proof(&proof, digest.as_bytes()) {
                    proofs.push(proof);
                }
            }
        }
        if proofs.len() < needed {
            return Err(LedgerError::NoQuorum {
                got: proofs.len(),
                needed,
            });
        }

        self.pending.clear();
        let block_idx = self.blocks.len();
        for (i, msg) in messages.iter().enumerate() {
            if let Some((feed, round)) = msg.body.pulse_key() {
                self.index
                    .entry((msg.kind, feed.clone(), round))
                    .or_default()
                    .push((block_idx, i));
            }
        }
        self.blocks.push(LedgerBlock {
            height,
            parent_digest,
            messages,
            proposer,
            proposer_key,
            consul_count: m,
            finality_proofs: proofs,
            digest,
        });
        Ok(self.blocks.last().unwrap())
    }

    /// Finalized pulse messages of one kind for `(feed, round)`, in block order.
    pub fn read_messages(
        &self,
        kind: MessageKind,
        feed: &FeedId,
        round: Round,
    ) -> Vec<&LedgerMessage> {
        self.index
            .get(&(kind, feed.clone(), round))
            .map(|locs| {
                locs.iter()
                    .map(|&(b, i)| &self.blocks[b].messages[i])
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Every finalized message of `kind`, in block order.
    pub fn read_all(&self, kind: MessageKind) -> impl Iterator<Item = &LedgerMessage> {
        self.blocks
            .iter()
            .flat_map(|b| b.messages.iter())
            .filter(move |m| m.kind == kind)
    }

    /// Replaces the consul set with the top `consul_count` nodes by score.
    pub fn rotate_consuls(
        &mut self,
        scores: &[GravityScore],
        key_of: impl Fn(NodeId) -> Option<PublicKey>,
    ) -> RotationOutcome {
        match ConsulSet::select(scores, self.consul_count, &key_of) {
            Some(set) => {
                self.consuls = set.clone();
                RotationOutcome::Rotated(set)
            }
            None => RotationOutcome::Retained {
                candidates: scores
                    .iter()
                    .filter(|g| key_of(g.node_id).is_some())
                    .count(),
                wanted: self.consul_count,
            },
        }
    }

    /// Re-derives every block digest and checks links and quorum proofs.
    pub fn verify_chain(&self) -> Result<Digest, LedgerError> {
        let mut parent = Digest::ZERO;
        for (i, block) in self.blocks.iter().enumerate() {
            let corrupt = |reason: &str| LedgerError::Corrupt {
                height: block.height,
                reason: reason.to_owned(),
            };
            if block.height != i as u64 + 1 {
                return Err(corrupt("height out of sequence"));
            }
            if block.parent_digest != parent {
                return Err(corrupt("parent digest mismatch"));
            }
            let digest = LedgerBlock::compute_digest(
                block.height,
                &block.parent_digest,
                &block.proposer_key,
                block.consul_count,
                &block.messages,
            );
            if digest != block.digest {
                return Err(corrupt("digest mismatch"));
            }
            if block.messages.iter().any(|m| !m.signature_valid()) {
                return Err(corrupt("message signature invalid"));
            }
            let signers: HashSet<PublicKey> = block
                .finality_proofs
                .iter()
                .filter(|p| crypto::verify_proof(p, digest.as_bytes()))
                .map(|p| p.signer)
                .collect();
            if signers.len() < quorum(block.consul_count) {
                return Err(corrupt("insufficient finality proofs"));
            }
            parent = block.digest;
        }
        Ok(parent)
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        for block in &self.blocks {
            writeln!(out, "{}", block.dump_line()).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Keys {
        consuls: Vec<KeyPair>,
        withholding: HashSet<NodeId>,
    }

    impl ConsulSigner for Keys {
        fn sign_block(&self, consul: NodeId, digest: &Digest) -> Option<Proof> {
            if self.withholding.contains(&consul) {
                return None;
            }
            Some(self.consuls[consul.0 as usize].sign(digest.as_bytes()))
        }
    }

    fn setup(m: u32) -> (Ledger, Keys) {
        let consuls: Vec<KeyPair> = (0..m)
            .map(|i| KeyPair::from_seed([i as u8 + 1; 32]))
            .collect();
        let mut ledger = Ledger::new(m as usize);
        for (i, k) in consuls.iter().enumerate() {
            ledger.register_author(k.public_key(), NodeId(i as u32));
        }
        ledger.set_consuls(ConsulSet {
            members: consuls
                .iter()
                .enumerate()
                .map(|(i, k)| (NodeId(i as u32), k.public_key()))
                .collect(),
        });
        (
            ledger,
            Keys {
                consuls,
                withholding: HashSet::new(),
            },
        )
    }

    fn commit(key: &KeyPair, round: Round) -> LedgerMessage {
        let c = crypto::make_commitment(
            &FeedId::new("f"),
            round,
            &DataValue::Int(1),
            &[7; 32],
            key.public_key(),
        )
        .unwrap();
        LedgerMessage::new(key, MessageBody::Commit(c))
    }

    #[test]
    fn quorum_arithmetic() {
        assert_eq!(quorum(5), 4);
        assert_eq!(quorum(4), 3);
        assert_eq!(quorum(3), 3);
        assert_eq!(quorum(1), 1);
    }

    #[test]
    fn submit_accepts_once_and_rejects_strangers() {
        let (mut ledger, keys) = setup(5);
        let msg = commit(&keys.consuls[0], 1);
        assert!(ledger.submit(msg.clone()).is_ok());
        assert_eq!(ledger.submit(msg), Err(RejectReason::Duplicate));

        let stranger = KeyPair::from_seed([99; 32]);
        assert_eq!(
            ledger.submit(commit(&stranger, 1)),
            Err(RejectReason::UnknownAuthor)
        );
    }

    #[test]
    fn forged_author_signature_rejected() {
        let (mut ledger, keys) = setup(5);
        let honest = commit(&keys.consuls[0], 1);
        let forged = LedgerMessage::from_parts(
            honest.kind(),
            keys.consuls[1].public_key(),
            honest.payload().to_vec(),
            *honest.author_signature(),
        )
        .unwrap();
        assert_eq!(ledger.submit(forged), Err(RejectReason::BadSignature));

        // Signed correctly, but the commitment names someone else.
        let c = crypto::make_commitment(
            &FeedId::new("f"),
            1,
            &DataValue::Int(1),
            &[7; 32],
            keys.consuls[2].public_key(),
        )
        .unwrap();
        let msg = LedgerMessage::new(&keys.consuls[0], MessageBody::Commit(c));
        assert_eq!(ledger.submit(msg), Err(RejectReason::AuthorMismatch));
    }

    #[test]
    fn finalization_needs_quorum() {
        let (mut ledger, mut keys) = setup(5);
        ledger.submit(commit(&keys.consuls[0], 1)).unwrap();
        let block = ledger.finalize_block(&keys).unwrap();
        assert_eq!(block.finality_proofs.len(), 5);
        assert_eq!(block.proposer, NodeId(1));

        keys.withholding = [NodeId(0), NodeId(3)].into();
        ledger.submit(commit(&keys.consuls[0], 2)).unwrap();
        assert_eq!(
            ledger.finalize_block(&keys),
            Err(LedgerError::NoQuorum { got: 3, needed: 4 })
        );
        assert_eq!(ledger.pending_len(), 1);
        assert_eq!(ledger.height(), 1);

        keys.withholding = [NodeId(3)].into();
        assert_eq!(
            ledger.finalize_block(&keys).unwrap().finality_proofs.len(),
            4
        );
        assert_eq!(ledger.pending_len(), 0);
    }

    #[test]
    fn empty_blocks_keep_heights_consecutive() {
        let (mut ledger, keys) = setup(5);
        for _ in 0..3 {
            ledger.finalize_block(&keys).unwrap();
        }
        assert_eq!(ledger.height(), 3);
        assert_eq!(ledger.verify_chain().unwrap(), ledger.head_digest());
    }

    #[test]
    fn reads_only_see_finalized_messages() {
        let (mut ledger, keys) = setup(5);
        let feed = FeedId::new("f");
        for k in &keys.consuls {
            ledger.submit(commit(k, 1)).unwrap();
        }
        assert!(ledger
            .read_messages(MessageKind::Commit, &feed, 1)
            .is_empty());
        ledger.finalize_block(&keys).unwrap();
        let read = ledger.read_messages(MessageKind::Commit, &feed, 1);
        assert_eq!(read.len(), 5);
        // Pending order is by author key, then digest.
        let authors: Vec<_> = read.iter().map(|m| m.author()).collect();
        let mut sorted = authors.clone();
        sorted.sort();
        assert_eq!(authors, sorted);
        assert!(ledger
            .read_messages(MessageKind::Commit, &feed, 2)
            .is_empty());
        assert!(ledger
            .read_messages(MessageKind::Reveal, &feed, 1)
            .is_empty());
    }

    #[test]
    fn tampering_breaks_verification() {
        let (mut ledger, keys) = setup(5);
        ledger.submit(commit(&keys.consuls[0], 1)).unwrap();
        ledger.finalize_block(&keys).unwrap();
        ledger.finalize_block(&keys).unwrap();
        ledger.verify_chain().unwrap();
        let mut tampered = ledger.clone();
        tampered.blocks[0].messages.clear();
        assert!(tampered.verify_chain().is_err());
        let mut tampered = ledger.clone();
        tampered.blocks[1].finality_proofs.truncate(3);
        assert!(tampered.verify_chain().is_err());
    }

    #[test]
    fn rotation_picks_top_scores_with_id_tiebreak() {
        let scores: Vec<GravityScore> = [100.0, 90.0, 80.0, 70.0, 60.0, 50.0]
            .iter()
            .enumerate()
            .map(|(i, s)| GravityScore {
                node_id: NodeId(i as u32),
                score: *s,
            })
            .collect();
        let key = |id: NodeId| Some(PublicKey([id.0 as u8; 32]));
        let set = ConsulSet::select(&scores, 5, key).unwrap();
        assert_eq!(
            set.ids(),
            vec![NodeId(0), NodeId(1), NodeId(2), NodeId(3), NodeId(4)]
        );

        let tied = vec![
            GravityScore {
                node_id: NodeId(7),
                score: 50.0,
            },
            GravityScore {
                node_id: NodeId(3),
                score: 50.0,
            },
            GravityScore {
                node_id: NodeId(1),
                score: 90.0,
            },
        ];
        assert_eq!(
            ConsulSet::select(&tied, 2, key).unwrap().ids(),
            vec![NodeId(1), NodeId(3)]
        );

        let (mut ledger, _) = setup(5);
        let before = ledger.consuls().clone();
        let outcome = ledger.rotate_consuls(&tied, key);
        assert_eq!(
            outcome,
            RotationOutcome::Retained {
                candidates: 3,
                wanted: 5
            }
        );
        assert_eq!(ledger.consuls(), &before);
    }

    #[test]
    fn payloads_round_trip() {
        let key = KeyPair::from_seed([3; 32]);
        let bodies = vec![
            MessageBody::Reveal(Reveal {
                value: DataValue::Text("up".into()),
                salt: [4; 32],
                feed_id: FeedId::new("f"),
                round: 9,
                author: key.public_key(),
            }),
            MessageBody::AggSignature(AggSignature {
                agg_digest: crypto::hash(b"x"),
                timestamp: 12,
                feed_id: FeedId::new("f"),
                nebula_id: NebulaId::new("n"),
                round: 9,
                proof: key.sign(b"x"),
            }),
            MessageBody::ScoreUpdate(ScoreUpdate {
                ratee: NodeId(4),
                value: 2.5,
                mode: ScoreMode::Manual,
            }),
        ];
        for body in bodies {
            let decoded = MessageBody::decode(body.kind(), &body.encode()).unwrap();
            assert_eq!(decoded, body);
        }
        assert!(MessageBody::decode(MessageKind::Commit, b"junk").is_err());
    }
}
