//! The Gravity node: per-round pulse state machine (schedule, extract,
//! commit, reveal, aggregate, sign) and the leader's chain submission.
//!
//! A node never talks to another node directly. Everything it learns about
//! its peers comes from finalized ledger messages, so all nodes reading the
//! same ledger at the same tick reach the same conclusions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand_chacha::ChaCha8Rng;
use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{DeliveryReport, PulseAccepted, PulseReject, TargetChain};
use crate::crypto::{
    self, Commitment, Digest, KeyPair, Proof, PublicKey, Reveal, RevealCheck, SALT_LEN,
};
use crate::extractor::{
    lower_median, mode, AggregationRule, Binding, ExtractorError, FeedRegistry, Params,
};
use crate::ledger::{
    signing_payload, AggSignature, Ledger, LedgerMessage, MessageBody, MessageKind,
};
use crate::types::{ChainId, ContractId, DataValue, FeedId, NebulaId, NodeId, Round, Tick};

pub const DEFAULT_ROUND_TIMEOUT: u64 = 3;
pub const DEFAULT_DIVERGENCE_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    Extractor(String),
    InsufficientCommits,
    InsufficientReveals,
    NoQuorumDigest,
    /// A digest reached K signatures but no leader got it accepted in time.
    NotSubmitted,
    /// The leader could not find a value matching the quorum digest.
    ValueUnavailable,
    ChainRejected(PulseReject),
}

impl fmt::Display for FailReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailReason::Extractor(e) => write!(f, "extractor_error({e})"),
            FailReason::InsufficientCommits => f.write_str("insufficient_commits"),
            FailReason::InsufficientReveals => f.write_str("insufficient_reveals"),
            FailReason::NoQuorumDigest => f.write_str("no_quorum_digest"),
            FailReason::NotSubmitted => f.write_str("not_submitted"),
            FailReason::ValueUnavailable => f.write_str("value_unavailable"),
            FailReason::ChainRejected(r) => write!(f, "chain_rejected({r:?})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Committed,
    Revealed,
    Aggregated,
    Signed,
    Done,
    Failed(FailReason),
}

impl Phase {
    fn rank(&self) -> u8 {
        match self {
            Phase::Idle => 0,
            Phase::Committed => 1,
            Phase::Revealed => 2,
            Phase::Aggregated => 3,
            Phase::Signed => 4,
            Phase::Done => 5,
            Phase::Failed(_) => 6,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Phase::Done | Phase::Failed(_))
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Idle => f.write_str("idle"),
            Phase::Committed => f.write_str("committed"),
            Phase::Revealed => f.write_str("revealed"),
            Phase::Aggregated => f.write_str("aggregated"),
            Phase::Signed => f.write_str("signed"),
            Phase::Done => f.write_str("done"),
            Phase::Failed(r) => write!(f, "failed:{r}"),
        }
    }
}

/// Injected misbehaviour. Offline periods are handled by the runner, which
/// simply does not call the node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    #[default]
    Honest,
    /// Adds the offset to extracted values and to its own aggregate.
    Divergent(i64),
    /// Commits honestly, then reveals `value + delta`.
    FraudReveal(i64),
    /// Skips the commit and reveals anyway.
    RevealWithoutCommit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub every: u64,
    #[serde(default)]
    pub offset: u64,
}

impl Schedule {
    /// The round starting at `tick`, if any.
    pub fn round_at(&self, tick: Tick) -> Option<Round> {
        if self.every == 0 || tick < self.offset {
            return None;
        }
        let since = tick - self.offset;
        (since % self.every == 0).then_some(since / self.every)
    }
}

/// What a node needs to know about one nebula at the current tick.
#[derive(Debug, Clone, PartialEq)]
pub struct NebulaView {
    pub nebula_id: NebulaId,
    pub feed_id: FeedId,
    pub chain_id: ChainId,
    pub schedule: Schedule,
    pub k: usize,
    pub aggregation: AggregationRule,
    pub min_score: f64,
    pub oracles: BTreeSet<NodeId>,
    /// Rounds with an accepted pulse.
    pub accepted: BTreeSet<Round>,
}

/// One scheduled unit of work; carries `params(t)` for the extractor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub nebula_id: NebulaId,
    pub feed_id: FeedId,
    pub chain_id: ChainId,
    pub round: Round,
    pub tick: Tick,
}

/// Misbehaviour a node noticed in a peer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidentKind {
    /// Reveal does not open the author's commitment.
    FraudReveal,
    /// Reveal with no finalized commitment from its author.
    RevealWithoutCommit,
    /// Revealed value outside the tolerance band around the aggregate.
    DivergentValue,
    /// Signed an aggregate digest other than the one the honest
    /// computation produces.
    DivergentDigest,
    /// An oracle of the round never committed.
    MissedRound,
}

impl IncidentKind {
    pub fn is_fraud(self) -> bool {
        matches!(
            self,
            IncidentKind::FraudReveal | IncidentKind::RevealWithoutCommit
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Incident {
    pub tick: Tick,
    pub rater: NodeId,
    pub ratee: NodeId,
    pub nebula_id: NebulaId,
    pub round: Round,
    pub kind: IncidentKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub tick: Tick,
    pub node: NodeId,
    pub feed_id: FeedId,
    pub round: Round,
    pub from: Phase,
    pub to: Phase,
    pub detail: String,
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        format!(
            "tick={} node={} feed={} round={} {} -> {} {}",
            self.tick, self.node, self.feed_id, self.round, self.from, self.to, self.detail
        )
        .trim_end()
        .to_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PulseParticipation {
    pub nebula_id: NebulaId,
    pub feed_id: FeedId,
    pub chain_id: ChainId,
    pub round: Round,
    pub started: Tick,
    pub phase: Phase,
    pub value: Option<DataValue>,
    pub salt: [u8; SALT_LEN],
    pub peer_reveals: BTreeMap<NodeId, DataValue>,
    pub agg_value: Option<DataValue>,
    pub agg_digest: Option<Digest>,
    pub proof: Option<Proof>,
    pub history: Vec<Phase>,
    flagged: BTreeSet<(NodeId, IncidentKind)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeConfig {
    pub round_timeout: u64,
    pub divergence_tolerance: f64,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            round_timeout: DEFAULT_ROUND_TIMEOUT,
            divergence_tolerance: DEFAULT_DIVERGENCE_TOLERANCE,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AggregateError {
    #[error("no values to aggregate")]
    Empty,
    #[error("average needs integer values")]
    NotNumeric,
}

/// Deterministic aggregation of revealed values.
pub fn aggregate(values: &[DataValue], rule: AggregationRule) -> Result<DataValue, AggregateError> {
    if values.is_empty() {
        return Err(AggregateError::Empty);
    }
    match rule {
        AggregationRule::Median => Ok(lower_median(values).expect("non-empty")),
        AggregationRule::Mode => Ok(mode(values).expect("non-empty")),
        AggregationRule::Average => {
            let ints: Vec<i128> = values
                .iter()
                .map(|v| v.as_int().map(i128::from).ok_or(AggregateError::NotNumeric))
                .collect::<Result<_, _>>()?;
            let mean = ints.iter().sum::<i128>().div_euclid(ints.len() as i128);
            Ok(DataValue::Int(mean as i64))
        }
    }
}

/// The reveals of one round as every reader of the ledger sees them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RevealSet {
    pub committed: BTreeSet<NodeId>,
    /// Reveals that open their author's commitment.
    pub valid: BTreeMap<NodeId, DataValue>,
    pub fraudulent: BTreeSet<NodeId>,
    pub without_commit: BTreeSet<NodeId>,
}

/// Finalized commitments of oracle-set members, first one per author.
pub fn finalized_commits(
    ledger: &Ledger,
    feed: &FeedId,
    round: Round,
    oracles: &BTreeSet<NodeId>,
) -> BTreeMap<NodeId, Commitment> {
    let mut out = BTreeMap::new();
    for msg in ledger.read_messages(MessageKind::Commit, feed, round) {
        let (Some(node), MessageBody::Commit(c)) = (ledger.author_node(&msg.author()), msg.body())
        else {
            continue;
        };
        if oracles.contains(&node) {
            out.entry(node).or_insert_with(|| c.clone());
        }
    }
    out
}

/// Validates every finalized reveal of the round against the author's
/// finalized commitment.
pub fn evaluate_reveals(
    ledger: &Ledger,
    feed: &FeedId,
    round: Round,
    oracles: &BTreeSet<NodeId>,
) -> RevealSet {
    let commits = finalized_commits(ledger, feed, round, oracles);
    let mut set = RevealSet {
        committed: commits.keys().copied().collect(),
        ..RevealSet::default()
    };
    let mut seen = BTreeSet::new();
    for msg in ledger.read_messages(MessageKind::Reveal, feed, round) {
        let (Some(node), MessageBody::Reveal(r)) = (ledger.author_node(&msg.author()), msg.body())
        else {
            continue;
        };
        if !oracles.contains(&node) || !seen.insert(node) {
            continue;
        }
        match commits.get(&node) {
            None => {
                set.without_commit.insert(node);
            }
            Some(c) => match crypto::open_reveal(c, r) {
                Ok(RevealCheck::Valid) => {
                    set.valid.insert(node, r.value.clone());
                }
                Ok(RevealCheck::Fraudulent) | Err(_) => {
                    set.fraudulent.insert(node);
                }
            },
        }
    }
    set
}

/// Groups finalized aggregate signatures by `(digest, timestamp)`, keeping
/// only proofs that verify and whose signer is a current oracle.
pub fn signature_groups(
    ledger: &Ledger,
    nebula: &NebulaId,
    feed: &FeedId,
    round: Round,
    oracle_keys: &BTreeSet<PublicKey>,
) -> BTreeMap<(Digest, Tick), Vec<Proof>> {
    let mut groups: BTreeMap<(Digest, Tick), Vec<Proof>> = BTreeMap::new();
    for msg in ledger.read_messages(MessageKind::AggSignature, feed, round) {
        let MessageBody::AggSignature(s) = msg.body() else {
            continue;
        };
        if &s.nebula_id != nebula || !oracle_keys.contains(&s.proof.signer) {
            continue;
        }
        let payload = signing_payload(&s.agg_digest, s.timestamp, feed, nebula, round);
        if !crypto::verify_proof(&s.proof, &payload) {
            continue;
        }
        let group = groups.entry((s.agg_digest, s.timestamp)).or_default();
        if !group.iter().any(|p| p.signer == s.proof.signer) {
            group.push(s.proof);
        }
    }
    groups
}

/// The `(digest, timestamp)` group with the most proofs, if it reaches `k`.
/// Ties go to the smaller digest, then the earlier timestamp.
pub fn quorum_group(
    groups: &BTreeMap<(Digest, Tick), Vec<Proof>>,
    k: usize,
) -> Option<((Digest, Tick), Vec<Proof>)> {
    let mut best: Option<(&(Digest, Tick), &Vec<Proof>)> = None;
    for (key, proofs) in groups {
        if best.is_none_or(|(_, b)| proofs.len() > b.len()) {
            best = Some((key, proofs));
        }
    }
    best.filter(|(_, p)| p.len() >= k)
        .map(|(key, p)| (*key, p.clone()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LeaderReport {
    pub nebula_id: NebulaId,
    pub round: Round,
    pub leader: NodeId,
    pub tick: Tick,
    pub result: Result<PulseAccepted, FailReason>,
    pub delivery: Option<DeliveryReport>,
}

/// Output of one node step.
#[derive(Debug, Default)]
pub struct StepOutput {
    pub messages: Vec<LedgerMessage>,
    pub incidents: Vec<Incident>,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    idl_key: KeyPair,
    chain_keys: BTreeMap<ChainId, KeyPair>,
    bindings: BTreeMap<FeedId, Binding>,
    pub behavior: Behavior,
    pub config: NodeConfig,
    rng: ChaCha8Rng,
    rounds: BTreeMap<(NebulaId, Round), PulseParticipation>,
    trace: Vec<TraceRecord>,
}

impl Node {
    pub fn new(
        id: NodeId,
        idl_key: KeyPair,
        chain_keys: BTreeMap<ChainId, KeyPair>,
        rng: ChaCha8Rng,
        config: NodeConfig,
    ) -> Self {
        Self {
            id,
            idl_key,
            chain_keys,
            bindings: BTreeMap::new(),
            behavior: Behavior::Honest,
            config,
            rng,
            rounds: BTreeMap::new(),
            trace: Vec::new(),
        }
    }

    pub fn idl_key(&self) -> PublicKey {
        self.idl_key.public_key()
    }

    pub fn chain_key(&self, chain: &ChainId) -> Option<PublicKey> {
        self.chain_keys.get(chain).map(KeyPair::public_key)
    }

    pub fn idl_keypair(&self) -> &KeyPair {
        &self.idl_key
    }

    /// Installs an extractor for `binding.feed_id`, replacing any earlier one.
    pub fn bind_extractor(
        &mut self,
        registry: &FeedRegistry,
        binding: Binding,
    ) -> Result<(), ExtractorError> {
        registry.check_binding(&binding)?;
        self.bindings.insert(binding.feed_id.clone(), binding);
        Ok(())
    }

    pub fn supports(&self, feed: &FeedId) -> bool {
        self.bindings.contains_key(feed)
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn participation(&self, nebula: &NebulaId, round: Round) -> Option<&PulseParticipation> {
        self.rounds.get(&(nebula.clone(), round))
    }

    pub fn participations(&self) -> impl Iterator<Item = &PulseParticipation> {
        self.rounds.values()
    }

    /// Tasks for every nebula whose schedule fires at `tick` and whose feed
    /// this node has an extractor for.
    pub fn on_tick(&self, tick: Tick, nebulae: &[NebulaView]) -> Vec<Task> {
        nebulae
            .iter()
            .filter(|n| self.supports(&n.feed_id))
            .filter_map(|n| {
                n.schedule.round_at(tick).map(|round| Task {
                    nebula_id: n.nebula_id.clone(),
                    feed_id: n.feed_id.clone(),
                    chain_id: n.chain_id.clone(),
                    round,
                    tick,
                })
            })
            .collect()
    }

    fn transition(&mut self, key: &(NebulaId, Round), tick: Tick, to: Phase, detail: String) {
        let p = self.rounds.get_mut(key).expect("known participation");
        let from = p.phase.clone();
        assert!(
            !from.is_terminal() && to.rank() > from.rank(),
            "phase cannot move from {from} to {to}"
        );
        p.phase = to.clone();
        p.history.push(to.clone());
        self.trace.push(TraceRecord {
            tick,
            node: self.id,
            feed_id: p.feed_id.clone(),
            round: p.round,
            from,
            to,
            detail,
        });
    }

    /// Extracts, draws a salt and builds the commitment. `eligible` says
    /// whether the node is in the oracle set with a sufficient score; an
    /// ineligible node does nothing.
    pub fn commit_phase(
        &mut self,
        task: &Task,
        eligible: bool,
        registry: &FeedRegistry,
    ) -> Option<LedgerMessage> {
        if !eligible {
            return None;
        }
        let key = (task.nebula_id.clone(), task.round);
        if self.rounds.contains_key(&key) {
            return None;
        }
        let binding = self.bindings.get(&task.feed_id)?;
        let extracted = registry.extract(
            binding,
            Params {
                feed_id: &task.feed_id,
                tick: task.tick,
            },
        );
        let mut salt = [0u8; SALT_LEN];
        self.rng.fill_bytes(&mut salt);
        self.rounds.insert(
            key.clone(),
            PulseParticipation {
                nebula_id: task.nebula_id.clone(),
                feed_id: task.feed_id.clone(),
                chain_id: task.chain_id.clone(),
                round: task.round,
                started: task.tick,
                phase: Phase::Idle,
                value: None,
                salt,
                peer_reveals: BTreeMap::new(),
                agg_value: None,
                agg_digest: None,
                proof: None,
                history: vec![Phase::Idle],
                flagged: BTreeSet::new(),
            },
        );
        let value = match extracted {
            Ok(point) => self.offset(point.value),
            Err(e) => {
                self.transition(
                    &key,
                    task.tick,
                    Phase::Failed(FailReason::Extractor(e.to_string())),
                    String::new(),
                );
                return None;
            }
        };
        let commitment =
            crypto::make_commitment(&task.feed_id, task.round, &value, &salt, self.idl_key())
                .expect("salt has the right length");
        self.rounds.get_mut(&key).unwrap().value = Some(value.clone());
        self.transition(&key, task.tick, Phase::Committed, format!("value={value}"));
        if self.behavior == Behavior::RevealWithoutCommit {
            return None;
        }
        Some(LedgerMessage::new(
            &self.idl_key,
            MessageBody::Commit(commitment),
        ))
    }

    fn offset(&self, value: DataValue) -> DataValue {
        match (self.behavior, value) {
            (Behavior::Divergent(off), DataValue::Int(v)) => DataValue::Int(v.saturating_add(off)),
            (_, v) => v,
        }
    }

    /// Advances every open round one step against the finalized ledger.
    pub fn advance(
        &mut self,
        tick: Tick,
        ledger: &Ledger,
        nebulae: &BTreeMap<NebulaId, NebulaView>,
    ) -> StepOutput {
        let mut out = StepOutput::default();
        let open: Vec<(NebulaId, Round)> = self
            .rounds
            .iter()
            .filter(|(_, p)| !p.phase.is_terminal())
            .map(|(k, _)| k.clone())
            .collect();
        for key in open {
            let Some(view) = nebulae.get(&key.0) else {
                continue;
            };
            self.step_round(&key, tick, ledger, view, &mut out);
        }
        out
    }

    fn step_round(
        &mut self,
        key: &(NebulaId, Round),
        tick: Tick,
        ledger: &Ledger,
        view: &NebulaView,
        out: &mut StepOutput,
    ) {
        let (feed, round, started) = {
            let p = &self.rounds[key];
            (p.feed_id.clone(), p.round, p.started)
        };
        let deadline = started + self.config.round_timeout;

        if self.rounds[key].phase == Phase::Committed {
            let commits = finalized_commits(ledger, &feed, round, &view.oracles);
            if commits.len() >= view.k {
                let p = &self.rounds[key];
                let value = p.value.clone().expect("committed with a value");
                let revealed = match self.behavior {
                    Behavior::FraudReveal(delta) => match value {
                        DataValue::Int(v) => DataValue::Int(v.wrapping_add(delta)),
                        DataValue::Text(s) => DataValue::Text(format!("{s}'")),
                    },
                    _ => value,
                };
                let reveal = Reveal {
                    value: revealed,
                    salt: p.salt,
                    feed_id: feed.clone(),
                    round,
                    author: self.idl_key(),
                };
                out.messages.push(LedgerMessage::new(
                    &self.idl_key,
                    MessageBody::Reveal(reveal),
                ));
                self.transition(
                    key,
                    tick,
                    Phase::Revealed,
                    format!("commits={}", commits.len()),
                );
            } else if tick >= deadline {
                self.transition(
                    key,
                    tick,
                    Phase::Failed(FailReason::InsufficientCommits),
                    format!("commits={}", commits.len()),
                );
            }
            return;
        }

        if self.rounds[key].phase == Phase::Revealed {
            let set = evaluate_reveals(ledger, &feed, round, &view.oracles);
            for node in &set.fraudulent {
                self.flag(key, tick, *node, IncidentKind::FraudReveal, out);
            }
            for node in &set.without_commit {
                self.flag(key, tick, *node, IncidentKind::RevealWithoutCommit, out);
            }
            if set.valid.len() >= view.k {
                let values: Vec<DataValue> = set.valid.values().cloned().collect();
                let honest = match aggregate(&values, view.aggregation) {
                    Ok(v) => v,
                    Err(_) => {
                        self.transition(
                            key,
                            tick,
                            Phase::Failed(FailReason::InsufficientReveals),
                            String::new(),
                        );
                        return;
                    }
                };
                for (node, v) in &set.valid {
                    if diverges(v, &honest, self.config.divergence_tolerance) {
                        self.flag(key, tick, *node, IncidentKind::DivergentValue, out);
                    }
                }
                for oracle in &view.oracles {
                    if !set.committed.contains(oracle) && !set.without_commit.contains(oracle) {
                        self.flag(key, tick, *oracle, IncidentKind::MissedRound, out);
                    }
                }
                let agg = self.offset(honest);
                let digest = crypto::value_digest(&agg);
                {
                    let p = self.rounds.get_mut(key).unwrap();
                    p.peer_reveals = set.valid.clone();
                    p.agg_value = Some(agg.clone());
                    p.agg_digest = Some(digest);
                }
                self.transition(
                    key,
                    tick,
                    Phase::Aggregated,
                    format!("reveals={} agg={agg}", set.valid.len()),
                );

                let payload = signing_payload(&digest, tick, &feed, &key.0, round);
                let Some(chain_key) = self.chain_keys.get(&view.chain_id) else {
                    return;
                };
                let proof = chain_key.sign(&payload);
                self.rounds.get_mut(key).unwrap().proof = Some(proof);
                let sig = AggSignature {
                    agg_digest: digest,
                    timestamp: tick,
                    feed_id: feed.clone(),
                    nebula_id: key.0.clone(),
                    round,
                    proof,
                };
                out.messages.push(LedgerMessage::new(
                    &self.idl_key,
                    MessageBody::AggSignature(sig),
                ));
                self.transition(
                    key,
                    tick,
                    Phase::Signed,
                    format!("digest={}", digest.to_hex()),
                );
            } else if tick >= deadline {
                self.transition(
                    key,
                    tick,
                    Phase::Failed(FailReason::InsufficientReveals),
                    format!("valid={}", set.valid.len()),
                );
            }
            return;
        }

        if self.rounds[key].phase == Phase::Signed {
            if view.accepted.contains(&round) {
                self.transition(key, tick, Phase::Done, String::new());
                return;
            }
            let own = self.rounds[key].agg_digest;
            let honest_digest = self.rounds[key]
                .peer_reveals
                .values()
                .cloned()
                .collect::<Vec<_>>();
            let honest_digest = aggregate(&honest_digest, view.aggregation)
                .ok()
                .map(|v| crypto::value_digest(&v));
            for msg in ledger.read_messages(MessageKind::AggSignature, &feed, round) {
                let (Some(node), MessageBody::AggSignature(s)) =
                    (ledger.author_node(&msg.author()), msg.body())
                else {
                    continue;
                };
                if s.nebula_id == key.0 && node != self.id && Some(s.agg_digest) != honest_digest {
                    self.flag(key, tick, node, IncidentKind::DivergentDigest, out);
                }
            }
            if tick >= deadline {
                let reason = if honest_digest.is_some()
                    && own.is_some()
                    && self.quorum_reached(ledger, view, &feed, round)
                {
                    FailReason::NotSubmitted
                } else {
                    FailReason::NoQuorumDigest
                };
                self.transition(key, tick, Phase::Failed(reason), String::new());
            }
        }
    }

    fn quorum_reached(
        &self,
        ledger: &Ledger,
        view: &NebulaView,
        feed: &FeedId,
        round: Round,
    ) -> bool {
        let keys: BTreeSet<PublicKey> = ledger
            .read_messages(MessageKind::AggSignature, feed, round)
            .iter()
            .filter_map(|m| match m.body() {
                MessageBody::AggSignature(s) => Some(s.proof.signer),
                _ => None,
            })
            .collect();
        let groups = signature_groups(ledger, &view.nebula_id, feed, round, &keys);
        quorum_group(&groups, view.k).is_some()
    }

    fn flag(
        &mut self,
        key: &(NebulaId, Round),
        tick: Tick,
        ratee: NodeId,
        kind: IncidentKind,
        out: &mut StepOutput,
    ) {
        if ratee == self.id || self.behavior != Behavior::Honest {
            return;
        }
        let p = self.rounds.get_mut(key).unwrap();
        if !p.flagged.insert((ratee, kind)) {
            return;
        }
        out.incidents.push(Incident {
            tick,
            rater: self.id,
            ratee,
            nebula_id: key.0.clone(),
            round: key.1,
            kind,
        });
    }

    /// Leader duty for one round: pick the digest carrying at least K valid
    /// proofs, submit it, then deliver the matching value to `subscribers`.
    /// The leader never submits an aggregate the quorum did not sign.
    pub fn leader_submit(
        &mut self,
        tick: Tick,
        ledger: &Ledger,
        chain: &mut TargetChain,
        view: &NebulaView,
        round: Round,
        subscribers: &[ContractId],
    ) -> LeaderReport {
        let result = self.try_lead(ledger, chain, view, round);
        let (result, delivery) = match result {
            Ok((accepted, value)) => {
                let delivery = chain
                    .send_data_tx(&view.nebula_id, round, &value, subscribers)
                    .ok();
                (Ok(accepted), delivery)
            }
            Err(e) => (Err(e), None),
        };
        LeaderReport {
            nebula_id: view.nebula_id.clone(),
            round,
            leader: self.id,
            tick,
            result,
            delivery,
        }
    }

    fn try_lead(
        &self,
        ledger: &Ledger,
        chain: &mut TargetChain,
        view: &NebulaView,
        round: Round,
    ) -> Result<(PulseAccepted, DataValue), FailReason> {
        let nebula = chain
            .nebula(&view.nebula_id)
            .ok_or(FailReason::ChainRejected(PulseReject::UnknownNebula))?;
        let oracle_keys: BTreeSet<PublicKey> = nebula.oracle_set.iter().map(|o| o.key).collect();
        let groups = signature_groups(ledger, &view.nebula_id, &view.feed_id, round, &oracle_keys);
        let ((digest, timestamp), proofs) =
            quorum_group(&groups, view.k).ok_or(FailReason::NoQuorumDigest)?;

        let own = self
            .participation(&view.nebula_id, round)
            .and_then(|p| p.agg_value.clone())
            .filter(|v| crypto::value_digest(v) == digest);
        let value = match own {
            Some(v) => v,
            None => {
                let set = evaluate_reveals(ledger, &view.feed_id, round, &view.oracles);
                let values: Vec<DataValue> = set.valid.into_values().collect();
                aggregate(&values, view.aggregation)
                    .ok()
                    .filter(|v| crypto::value_digest(v) == digest)
                    .ok_or(FailReason::ValueUnavailable)?
            }
        };
        let leader_key = self
            .chain_key(&view.chain_id)
            .ok_or(FailReason::ChainRejected(PulseReject::WrongLeader))?;
        let accepted = chain
            .pulse_tx(
                &view.nebula_id,
                round,
                digest,
                timestamp,
                leader_key,
                &proofs,
            )
            .map_err(FailReason::ChainRejected)?;
        Ok((accepted, value))
    }
}

fn diverges(value: &DataValue, aggregate: &DataValue, tolerance: f64) -> bool {
    match (value, aggregate) {
        (DataValue::Int(v), DataValue::Int(a)) => {
            let diff = (*v as i128 - *a as i128).unsigned_abs() as f64;
            diff > tolerance * (*a as f64).abs()
        }
        _ => false,
    }
}
