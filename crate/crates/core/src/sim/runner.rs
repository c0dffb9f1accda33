//! The deterministic tick loop.
//!
//! Per tick: lifecycle events, node phases, ledger finalization, leader
//! transactions, reputation updates, epoch work (liveness, consul rotation,
//! oracle-set refresh), reward distribution and the conservation check.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::chain::{self, ChainError, NebulaParams, TargetChain};
use crate::crypto::{self, Digest, KeyPair, Proof, PublicKey};
use crate::economy;
use crate::extractor::{Binding, FeedRegistry, MockSource, SourceConfig};
use crate::ledger::{
    ConsulSigner, Ledger, LedgerError, LedgerMessage, MessageBody, MessageKind, RotationOutcome,
    ScoreUpdate,
};
use crate::node::{
    evaluate_reveals, finalized_commits, quorum_group, signature_groups, Behavior, FailReason,
    Incident, IncidentKind, NebulaView, Node, NodeConfig as NodeRuntimeConfig,
};
use crate::reputation::{
    compute_scores, GravityScore, Observation, ScoreChange, ScoreMatrix, ScoreMode,
    ScoringPolicyState,
};
use crate::sim::report::*;
use crate::sim::scenario::{ManualScore, Scenario, TickRange};
use crate::types::{AccountId, ChainId, ContractId, NebulaId, NodeId, Round, Tick};

fn derive_seed(parts: &[&[u8]]) -> [u8; 32] {
    let mut buf = Vec::new();
    for p in parts {
        buf.extend_from_slice(&(p.len() as u32).to_be_bytes());
        buf.extend_from_slice(p);
    }
    crypto::hash(&buf).0
}

/// Keys and RNG stream of one node, all derived from the run seed.
pub fn node_idl_key(seed: u64, node: NodeId) -> KeyPair {
    KeyPair::from_seed(derive_seed(&[
        b"idl",
        &seed.to_be_bytes(),
        &node.0.to_be_bytes(),
    ]))
}

pub fn node_chain_key(seed: u64, node: NodeId, chain: &ChainId) -> KeyPair {
    KeyPair::from_seed(derive_seed(&[
        b"chain",
        &seed.to_be_bytes(),
        &node.0.to_be_bytes(),
        chain.as_str().as_bytes(),
    ]))
}

fn node_rng(seed: u64, node: NodeId) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(&[
        b"rng",
        &seed.to_be_bytes(),
        &node.0.to_be_bytes(),
    ]))
}

struct SimNode {
    node: Node,
    chains: Vec<ChainId>,
    deposit: Option<u64>,
    join_tick: Tick,
    exit_tick: Option<Tick>,
    offline: Vec<TickRange>,
    withhold: bool,
    sybil: bool,
    manual_scores: Vec<ManualScore>,
    registered: bool,
    exited: bool,
}

impl SimNode {
    fn running(&self, tick: Tick) -> bool {
        self.registered && !self.exited && !self.offline.iter().any(|r| r.contains(tick))
    }

    fn honest(&self) -> bool {
        self.node.behavior == Behavior::Honest && !self.sybil
    }
}

struct Signers<'a> {
    nodes: &'a BTreeMap<NodeId, SimNode>,
    tick: Tick,
}

impl ConsulSigner for Signers<'_> {
    fn sign_block(&self, consul: NodeId, block_digest: &Digest) -> Option<Proof> {
        let n = self.nodes.get(&consul)?;
        (n.running(self.tick) && !n.withhold)
            .then(|| n.node.idl_keypair().sign(block_digest.as_bytes()))
    }
}

#[derive(Debug, Clone)]
struct RoundTrack {
    start: Tick,
    outcome: Option<RoundOutcome>,
    last_error: Option<FailReason>,
}

pub struct Simulation {
    scenario: Scenario,
    tick: Tick,
    chains: Vec<TargetChain>,
    chain_index: BTreeMap<ChainId, usize>,
    ledger: Ledger,
    registry: FeedRegistry,
    nodes: BTreeMap<NodeId, SimNode>,
    policy: ScoringPolicyState,
    trust: BTreeMap<(NodeId, NodeId), f64>,
    trust_dirty: bool,
    scores: Vec<GravityScore>,
    rounds: BTreeMap<(NebulaId, Round), RoundTrack>,
    epoch_authors: BTreeSet<NodeId>,
    epoch_incidents: BTreeSet<(NodeId, NodeId)>,
    incident_counts: BTreeMap<String, u64>,
    fraud_events: Vec<FraudEvent>,
    consul_rotations: Vec<ConsulRotation>,
    oracle_changes: Vec<OracleChange>,
    lifecycle: Vec<LifecycleEvent>,
    distributions: Vec<economy::DistributionReport>,
    score_samples: Vec<ScoreSample>,
    conservation: BTreeMap<ChainId, ConservationSummary>,
    no_quorum_ticks: Vec<Tick>,
    activity: BTreeMap<NodeId, [u64; 3]>,
}

impl Simulation {
    /// Builds the genesis state. The scenario must already be validated.
    pub fn new(scenario: Scenario) -> Result<Self, ChainError> {
        let seed = scenario.seed;
        let mut registry = FeedRegistry::new();
        for feed in &scenario.feeds {
            registry
                .add_feed(feed.spec())
                .expect("validated scenario has valid feeds");
            for src in &feed.sources {
                let faults = scenario
                    .faults
                    .sources
                    .iter()
                    .filter(|f| f.source == src.id)
                    .map(|f| f.fault())
                    .collect();
                let config = SourceConfig {
                    id: src.id.clone(),
                    script: src.script.clone(),
                    faults,
                };
                registry.add_source(MockSource::new(&config, seed, scenario.ticks));
            }
        }

        let runtime = NodeRuntimeConfig {
            round_timeout: scenario.policy.round_timeout,
            divergence_tolerance: scenario.policy.divergence_tolerance,
        };
        let mut nodes = BTreeMap::new();
        for cfg in &scenario.nodes {
            let chains = scenario.node_chains(cfg);
            let mut node = Node::new(
                cfg.id,
                node_idl_key(seed, cfg.id),
                chains
                    .iter()
                    .map(|c| (c.clone(), node_chain_key(seed, cfg.id, c)))
                    .collect(),
                node_rng(seed, cfg.id),
                runtime,
            );
            for (feed, sources) in &cfg.feeds {
                node.bind_extractor(
                    &registry,
                    Binding {
                        feed_id: feed.clone(),
                        sources: sources.clone(),
                    },
                )
                .expect("validated scenario has valid bindings");
            }
            let fault = scenario.faults.nodes.iter().filter(|f| f.node == cfg.id);
            let mut offline = Vec::new();
            let mut withhold = false;
            for f in fault {
                offline.extend(f.offline.iter().copied());
                withhold |= f.withhold_block_signatures;
                if let Some(b) = f.behavior {
                    node.behavior = b;
                }
            }
            nodes.insert(
                cfg.id,
                SimNode {
                    node,
                    chains,
                    deposit: cfg.deposit,
                    join_tick: cfg.join_tick,
                    exit_tick: cfg.exit_tick,
                    offline,
                    withhold,
                    sybil: false,
                    manual_scores: cfg.manual_scores.clone(),
                    registered: false,
                    exited: false,
                },
            );
        }

        // Sybil identities: fresh ids after the configured ones. They run an
        // extractor for every feed and would take part if ever eligible.
        let mut next_id = scenario
            .nodes
            .iter()
            .map(|n| n.id.0)
            .max()
            .map_or(0, |m| m + 1);
        for wave in &scenario.faults.sybil {
            let chains = if wave.chains.is_empty() {
                scenario.chains.iter().map(|c| c.id.clone()).collect()
            } else {
                wave.chains.clone()
            };
            for _ in 0..wave.count {
                let id = NodeId(next_id);
                next_id += 1;
                let mut node = Node::new(
                    id,
                    node_idl_key(seed, id),
                    chains
                        .iter()
                        .map(|c| (c.clone(), node_chain_key(seed, id, c)))
                        .collect(),
                    node_rng(seed, id),
                    runtime,
                );
                for feed in &scenario.feeds {
                    let binding = Binding {
                        feed_id: feed.feed_id.clone(),
                        sources: feed.sources.iter().map(|s| s.id.clone()).collect(),
                    };
                    node.bind_extractor(&registry, binding)
                        .expect("all sources exist");
                }
                nodes.insert(
                    id,
                    SimNode {
                        node,
                        chains: chains.clone(),
                        deposit: None,
                        join_tick: wave.tick,
                        exit_tick: None,
                        offline: Vec::new(),
                        withhold: false,
                        sybil: true,
                        manual_scores: Vec::new(),
                        registered: false,
                        exited: false,
                    },
                );
            }
        }

        let mut chains = Vec::new();
        let mut chain_index = BTreeMap::new();
        for cfg in &scenario.chains {
            let mut alloc: Vec<(AccountId, u64)> = Vec::new();
            for n in &scenario.nodes {
                if scenario.node_chains(n).contains(&cfg.id) {
                    alloc.push((AccountId::node(n.id), n.balance));
                }
            }
            for neb in scenario.nebulae.iter().filter(|n| n.chain == cfg.id) {
                alloc.push((owner_account(&neb.id), cfg.registration_fee));
            }
            for sub in &scenario.subscriptions {
                let on_chain = scenario
                    .nebulae
                    .iter()
                    .any(|n| n.id == sub.nebula && n.chain == cfg.id);
                if on_chain {
                    alloc.push((AccountId::user(&sub.contract), sub.balance));
                }
            }
            chain_index.insert(cfg.id.clone(), chains.len());
            chains.push(TargetChain::genesis(cfg.clone(), &alloc)?);
        }
        let conservation = scenario
            .chains
            .iter()
            .map(|c| {
                (
                    c.id.clone(),
                    ConservationSummary {
                        chain_id: c.id.clone(),
                        checks: 0,
                        failures: Vec::new(),
                    },
                )
            })
            .collect();

        Ok(Self {
            ledger: Ledger::new(scenario.policy.consul_count),
            policy: ScoringPolicyState::new(scenario.policy.policy_params()),
            scenario,
            tick: 0,
            chains,
            chain_index,
            registry,
            nodes,
            trust: BTreeMap::new(),
            trust_dirty: false,
            scores: Vec::new(),
            rounds: BTreeMap::new(),
            epoch_authors: BTreeSet::new(),
            epoch_incidents: BTreeSet::new(),
            incident_counts: BTreeMap::new(),
            fraud_events: Vec::new(),
            consul_rotations: Vec::new(),
            oracle_changes: Vec::new(),
            lifecycle: Vec::new(),
            distributions: Vec::new(),
            score_samples: Vec::new(),
            conservation,
            no_quorum_ticks: Vec::new(),
            activity: BTreeMap::new(),
        })
    }

    pub fn tick(&self) -> Tick {
        self.tick
    }

    pub fn chains(&self) -> &[TargetChain] {
        &self.chains
    }

    pub fn chain(&self, id: &ChainId) -> Option<&TargetChain> {
        self.chain_index.get(id).map(|&i| &self.chains[i])
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id).map(|n| &n.node)
    }

    pub fn sybil_ids(&self) -> Vec<NodeId> {
        self.nodes
            .values()
            .filter(|n| n.sybil)
            .map(|n| n.node.id)
            .collect()
    }

    pub fn scores(&self) -> &[GravityScore] {
        &self.scores
    }

    pub fn policy(&self) -> &ScoringPolicyState {
        &self.policy
    }

    /// Runs every tick of the scenario.
    pub fn run(mut self) -> RunOutputs {
        for t in 0..self.scenario.ticks {
            self.step(t);
        }
        self.finish()
    }

    /// Advances the simulation by exactly one tick, numbered `t`.
    pub fn step(&mut self, t: Tick) {
        self.tick = t;
        for chain in &mut self.chains {
            chain.advance_to(t);
        }
        self.lifecycle_events(t);
        if t == 0 {
            self.genesis();
        }
        self.subscription_actions(t);
        self.manual_scores(t);

        let views = self.views();
        let incidents = self.node_phases(t, &views);
        self.finalize_ledger(t);
        self.leader_transactions(t);
        self.apply_incidents(t, incidents);
        self.recalculate_scores();
        let epoch = self.scenario.policy.epoch_ticks;
        if t > 0 && t % epoch == 0 {
            self.epoch_boundary(t);
        }
        let period = self.scenario.policy.distribution_period;
        if t > 0 && t % period == 0 {
            self.distribute(t);
        }
        self.check_conservation();
    }

    fn lifecycle_events(&mut self, t: Tick) {
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            let (join, exit, registered, exited) = {
                let n = &self.nodes[&id];
                (n.join_tick, n.exit_tick, n.registered, n.exited)
            };
            if join == t && !registered {
                self.register(id, t);
            }
            if exit == Some(t) && registered && !exited {
                self.exit(id, t);
            }
        }
        // Locked deposits of departed nodes come back once released.
        for n in self.nodes.values().filter(|n| n.exited) {
            for chain_id in &n.chains {
                let chain = &mut self.chains[self.chain_index[chain_id]];
                let due = chain
                    .system
                    .registered_nodes
                    .get(&n.node.id)
                    .is_some_and(|r| !r.active && chain.height() >= r.release_height);
                if due {
                    if let Ok(amount) = chain.withdraw_deposit(n.node.id) {
                        self.lifecycle.push(LifecycleEvent::DepositReleased {
                            tick: t,
                            node: n.node.id,
                            chain: chain_id.clone(),
                            amount,
                        });
                    }
                }
            }
        }
    }

    fn register(&mut self, id: NodeId, t: Tick) {
        let n = self.nodes.get_mut(&id).unwrap();
        let mut any = false;
        for chain_id in &n.chains {
            let chain = &mut self.chains[self.chain_index[chain_id]];
            let deposit = n.deposit.unwrap_or(chain.config().min_deposit);
            let key = n.node.chain_key(chain_id).expect("key per chain");
            if n.sybil {
                let need = deposit + chain.config().registration_fee;
                let _ = chain.transfer(&AccountId::reserve(), &AccountId::node(id), need);
            }
            match chain.register_node(id, key, deposit) {
                Ok(_) => {
                    any = true;
                    self.lifecycle.push(LifecycleEvent::Registered {
                        tick: t,
                        node: id,
                        chain: chain_id.clone(),
                        sybil: n.sybil,
                    });
                }
                Err(e) => self.lifecycle.push(LifecycleEvent::RegistrationFailed {
                    tick: t,
                    node: id,
                    chain: chain_id.clone(),
                    error: e.to_string(),
                }),
            }
        }
        if any {
            n.registered = true;
            self.ledger.register_author(n.node.idl_key(), id);
            self.trust_dirty = true;
        }
    }

    fn exit(&mut self, id: NodeId, t: Tick) {
        let n = self.nodes.get_mut(&id).unwrap();
        n.exited = true;
        for chain_id in &n.chains {
            let chain = &mut self.chains[self.chain_index[chain_id]];
            if let Ok(rec) = chain.deactivate_node(id) {
                self.lifecycle.push(LifecycleEvent::Exited {
                    tick: t,
                    node: id,
                    chain: chain_id.clone(),
                    release_height: rec.release_height,
                });
            }
        }
        self.trust_dirty = true;
    }

    /// Genesis: mutual trust among the founding nodes, first scores, consuls,
    /// nebulae and subscriptions.
    fn genesis(&mut self) {
        let founders: Vec<NodeId> = self
            .nodes
            .values()
            .filter(|n| n.registered && !n.sybil)
            .map(|n| n.node.id)
            .collect();
        let cap = self.scenario.policy.build_up_cap;
        for &a in &founders {
            for &b in &founders {
                if a != b {
                    self.policy.seed(a, b, cap);
                    self.trust.insert((a, b), cap);
                }
            }
        }
        self.trust_dirty = true;
        self.recalculate_scores_with(true);
        self.rotate_consuls(0);
        self.write_scores();

        for neb in self.scenario.nebulae.clone() {
            let chain = &mut self.chains[self.chain_index[&neb.chain]];
            chain
                .create_nebula(NebulaParams {
                    nebula_id: neb.id.clone(),
                    feed_id: neb.feed.clone(),
                    n: neb.n,
                    k: neb.k,
                    min_score: neb.min_score,
                    price_per_delivery: neb.price,
                    owner: owner_account(&neb.id),
                })
                .expect("validated nebula with funded owner");
        }
        self.refresh_oracles(0);

        for sub in self.scenario.subscriptions.clone() {
            let chain_id = self.nebula_chain(&sub.nebula);
            let chain = &mut self.chains[self.chain_index[&chain_id]];
            chain.deploy_user_contract(sub.contract.clone(), sub.kind);
            let _ = chain.subscribe(&sub.contract, &sub.nebula, &sub.method, sub.mode);
            if sub.deposit > 0 {
                let _ = chain.deposit(&sub.contract, &sub.nebula, sub.deposit);
            }
        }
    }

    fn nebula_chain(&self, nebula: &NebulaId) -> ChainId {
        self.scenario
            .nebulae
            .iter()
            .find(|n| &n.id == nebula)
            .map(|n| n.chain.clone())
            .expect("validated nebula")
    }

    fn subscription_actions(&mut self, t: Tick) {
        for sub in self.scenario.subscriptions.clone() {
            for action in sub.actions.iter().filter(|a| a.tick == t) {
                let chain_id = self.nebula_chain(&sub.nebula);
                let chain = &mut self.chains[self.chain_index[&chain_id]];
                let user = AccountId::user(&sub.contract);
                if action.fund > 0 {
                    let _ = chain.transfer(&AccountId::reserve(), &user, action.fund);
                }
                if action.deposit > 0 {
                    let _ = chain.deposit(&sub.contract, &sub.nebula, action.deposit);
                }
                if action.reactivate {
                    let _ = chain.reactivate(&sub.contract, &sub.nebula);
                }
            }
        }
    }

    fn manual_scores(&mut self, t: Tick) {
        let due: Vec<(NodeId, ManualScore)> = self
            .nodes
            .values()
            .flat_map(|n| {
                n.manual_scores
                    .iter()
                    .filter(|m| m.tick == t)
                    .map(move |m| (n.node.id, m.clone()))
            })
            .collect();
        let mut changes = Vec::new();
        for (rater, m) in due {
            if let Ok(change) = self.policy.apply_manual_score(rater, m.ratee, m.value) {
                changes.push(change);
            }
        }
        self.publish_changes(changes);
    }

    fn views(&self) -> BTreeMap<NebulaId, NebulaView> {
        let mut out = BTreeMap::new();
        for neb in &self.scenario.nebulae {
            let chain = &self.chains[self.chain_index[&neb.chain]];
            let contract = chain.nebula(&neb.id);
            let feed = self.registry.feed(&neb.feed).expect("validated feed");
            out.insert(
                neb.id.clone(),
                NebulaView {
                    nebula_id: neb.id.clone(),
                    feed_id: neb.feed.clone(),
                    chain_id: neb.chain.clone(),
                    schedule: neb.schedule,
                    k: neb.k,
                    aggregation: feed.aggregation,
                    min_score: neb.min_score,
                    oracles: contract
                        .map(|c| c.oracle_set.iter().map(|o| o.node_id).collect())
                        .unwrap_or_default(),
                    accepted: contract
                        .map(|c| c.pulse_log.keys().copied().collect())
                        .unwrap_or_default(),
                },
            );
        }
        out
    }

    fn node_phases(&mut self, t: Tick, views: &BTreeMap<NebulaId, NebulaView>) -> Vec<Incident> {
        let view_list: Vec<NebulaView> = views.values().cloned().collect();
        for v in &view_list {
            if let Some(round) = v.schedule.round_at(t) {
                self.rounds
                    .entry((v.nebula_id.clone(), round))
                    .or_insert(RoundTrack {
                        start: t,
                        outcome: None,
                        last_error: None,
                    });
            }
        }
        let mut incidents = Vec::new();
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            if !self.nodes[&id].running(t) {
                continue;
            }
            let tasks = self.nodes[&id].node.on_tick(t, &view_list);
            let mut messages = Vec::new();
            for task in tasks {
                let view = &views[&task.nebula_id];
                let chain = &self.chains[self.chain_index[&task.chain_id]];
                let eligible =
                    view.oracles.contains(&id) && chain.system.score_of(id) >= view.min_score;
                let sim_node = self.nodes.get_mut(&id).unwrap();
                if let Some(m) = sim_node.node.commit_phase(&task, eligible, &self.registry) {
                    messages.push(m);
                }
            }
            let out = self
                .nodes
                .get_mut(&id)
                .unwrap()
                .node
                .advance(t, &self.ledger, views);
            messages.extend(out.messages);
            for m in messages {
                let _ = self.ledger.submit(m);
            }
            incidents.extend(out.incidents);
        }
        incidents
    }

    fn finalize_ledger(&mut self, t: Tick) {
        let signer = Signers {
            nodes: &self.nodes,
            tick: t,
        };
        let block = match self.ledger.finalize_block(&signer) {
            Ok(b) => b.clone(),
            Err(LedgerError::NoQuorum { .. }) | Err(LedgerError::NoConsuls) => {
                self.no_quorum_ticks.push(t);
                return;
            }
            Err(e) => panic!("ledger corrupted: {e}"),
        };
        for msg in &block.messages {
            let Some(author) = self.ledger.author_node(&msg.author()) else {
                continue;
            };
            self.epoch_authors.insert(author);
            let slot = match msg.kind() {
                MessageKind::Commit => Some(0),
                MessageKind::Reveal => Some(1),
                MessageKind::AggSignature => Some(2),
                MessageKind::ScoreUpdate => None,
            };
            if let Some(i) = slot {
                self.activity.entry(author).or_insert([0; 3])[i] += 1;
            }
            if let MessageBody::ScoreUpdate(u) = msg.body() {
                if u.ratee != author {
                    self.trust.insert((author, u.ratee), u.value);
                    self.trust_dirty = true;
                }
            }
        }
    }

    fn subscribers(&self, nebula: &NebulaId) -> Vec<ContractId> {
        self.scenario
            .subscriptions
            .iter()
            .filter(|s| &s.nebula == nebula)
            .map(|s| s.contract.clone())
            .collect()
    }

    fn leader_transactions(&mut self, t: Tick) {
        let views = self.views();
        let timeout = self.scenario.policy.round_timeout;
        let keys: Vec<(NebulaId, Round)> = self
            .rounds
            .iter()
            .filter(|(_, r)| r.outcome.is_none())
            .map(|(k, _)| k.clone())
            .collect();
        for key in keys {
            let (nebula_id, round) = key.clone();
            let view = &views[&nebula_id];
            let start = self.rounds[&key].start;
            let has_signatures = self
                .ledger
                .read_messages(MessageKind::AggSignature, &view.feed_id, round)
                .iter()
                .any(|m| matches!(m.body(), MessageBody::AggSignature(s) if s.nebula_id == nebula_id));
            if has_signatures {
                self.try_leader(t, view, round, &key);
            }
            if self.rounds[&key].outcome.is_none() && t >= start + timeout {
                let reason = self.failure_reason(view, round, &key);
                let track = self.rounds.get_mut(&key).unwrap();
                track.outcome = Some(RoundOutcome {
                    nebula_id: nebula_id.clone(),
                    round,
                    start_tick: start,
                    delivered: false,
                    reason: Some(reason.to_string()),
                    leader: None,
                    height: None,
                    oracle_set: Vec::new(),
                    signers: Vec::new(),
                    deliveries: 0,
                    delivery_errors: Vec::new(),
                });
            }
        }
    }

    fn try_leader(&mut self, t: Tick, view: &NebulaView, round: Round, key: &(NebulaId, Round)) {
        let chain_idx = self.chain_index[&view.chain_id];
        let Some(leader) = self.chains[chain_idx]
            .nebula(&view.nebula_id)
            .and_then(|n| n.expected_leader(t))
            .map(|o| o.node_id)
        else {
            return;
        };
        if !self.nodes.get(&leader).is_some_and(|n| n.running(t)) {
            return;
        }
        let oracle_set: Vec<NodeId> = self.chains[chain_idx]
            .nebula(&view.nebula_id)
            .map(|n| n.oracle_set.iter().map(|o| o.node_id).collect())
            .unwrap_or_default();
        let subscribers = self.subscribers(&view.nebula_id);
        let sim_node = self.nodes.get_mut(&leader).unwrap();
        let report = sim_node.node.leader_submit(
            t,
            &self.ledger,
            &mut self.chains[chain_idx],
            view,
            round,
            &subscribers,
        );
        let track = self.rounds.get_mut(key).unwrap();
        match report.result {
            Ok(accepted) => {
                let (deliveries, errors) = report
                    .delivery
                    .map(|d| {
                        let errs = d
                            .outcomes
                            .iter()
                            .filter_map(|(c, r)| {
                                r.as_ref().err().map(|e| (c.clone(), e.to_string()))
                            })
                            .collect();
                        (d.delivered(), errs)
                    })
                    .unwrap_or((0, Vec::new()));
                track.outcome = Some(RoundOutcome {
                    nebula_id: view.nebula_id.clone(),
                    round,
                    start_tick: track.start,
                    delivered: true,
                    reason: None,
                    leader: Some(accepted.leader),
                    height: Some(accepted.height),
                    oracle_set,
                    signers: accepted.valid_signers,
                    deliveries,
                    delivery_errors: errors,
                });
            }
            Err(e) => track.last_error = Some(e),
        }
    }

    /// Why a round that produced nothing failed, judged from the ledger.
    fn failure_reason(
        &self,
        view: &NebulaView,
        round: Round,
        key: &(NebulaId, Round),
    ) -> FailReason {
        let commits = finalized_commits(&self.ledger, &view.feed_id, round, &view.oracles);
        if commits.len() < view.k {
            return FailReason::InsufficientCommits;
        }
        let reveals = evaluate_reveals(&self.ledger, &view.feed_id, round, &view.oracles);
        if reveals.valid.len() < view.k {
            return FailReason::InsufficientReveals;
        }
        let chain = &self.chains[self.chain_index[&view.chain_id]];
        let keys: BTreeSet<PublicKey> = chain
            .nebula(&view.nebula_id)
            .map(|n| n.oracle_set.iter().map(|o| o.key).collect())
            .unwrap_or_default();
        let groups = signature_groups(&self.ledger, &view.nebula_id, &view.feed_id, round, &keys);
        if quorum_group(&groups, view.k).is_none() {
            return FailReason::NoQuorumDigest;
        }
        self.rounds[key]
            .last_error
            .clone()
            .unwrap_or(FailReason::NotSubmitted)
    }

    fn apply_incidents(&mut self, t: Tick, incidents: Vec<Incident>) {
        let mut changes = Vec::new();
        for inc in incidents {
            *self
                .incident_counts
                .entry(incident_key(inc.kind))
                .or_insert(0) += 1;
            self.epoch_incidents.insert((inc.rater, inc.ratee));
            if inc.kind.is_fraud() {
                self.fraud_events.push(FraudEvent {
                    tick: t,
                    rater: inc.rater,
                    ratee: inc.ratee,
                    nebula_id: inc.nebula_id.clone(),
                    round: inc.round,
                    kind: inc.kind,
                });
            }
            let obs = match inc.kind {
                IncidentKind::MissedRound => Observation::MissedRound,
                _ => Observation::Divergence,
            };
            if let Some(c) = self.policy.observe(inc.rater, inc.ratee, obs) {
                changes.push(c);
            }
        }
        self.publish_changes(changes);
    }

    /// Raters announce changed estimates on the ledger; the trust matrix
    /// follows once they finalize.
    fn publish_changes(&mut self, changes: Vec<ScoreChange>) {
        let mut latest: BTreeMap<(NodeId, NodeId), ScoreChange> = BTreeMap::new();
        for c in changes {
            latest.insert((c.rater, c.ratee), c);
        }
        for c in latest.into_values() {
            let Some(n) = self.nodes.get(&c.rater) else {
                continue;
            };
            if !n.registered || n.exited {
                continue;
            }
            let msg = LedgerMessage::new(
                n.node.idl_keypair(),
                MessageBody::ScoreUpdate(ScoreUpdate {
                    ratee: c.ratee,
                    value: c.value,
                    mode: c.mode,
                }),
            );
            let _ = self.ledger.submit(msg);
        }
    }

    /// Registered, not departed nodes: the rows and columns of the matrix.
    fn active_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .values()
            .filter(|n| n.registered && !n.exited)
            .map(|n| n.node.id)
            .collect()
    }

    fn recalculate_scores(&mut self) {
        self.recalculate_scores_with(false);
    }

    fn recalculate_scores_with(&mut self, force: bool) {
        if !self.trust_dirty && !force {
            return;
        }
        let nodes = self.active_nodes();
        let mut s = ScoreMatrix::new(nodes.clone());
        for (&(rater, ratee), &v) in &self.trust {
            let _ = s.set_by_id(rater, ratee, v);
        }
        match compute_scores(&s, &self.scenario.policy.eigentrust) {
            Ok(scores) => {
                self.scores = scores;
                self.trust_dirty = false;
                if !force {
                    self.write_scores();
                }
            }
            Err(_) => {
                // Keep the previous register; try again next tick.
            }
        }
    }

    /// The first running consul writes the register to every chain at once.
    fn write_scores(&mut self) {
        let t = self.tick;
        let writer = self
            .ledger
            .consuls()
            .ids()
            .into_iter()
            .find(|id| self.nodes.get(id).is_some_and(|n| n.running(t)));
        let Some(writer) = writer else {
            self.trust_dirty = true;
            return;
        };
        if chain::write_scores_all(&mut self.chains, writer, &self.scores).is_err() {
            self.trust_dirty = true;
        }
    }

    fn rotate_consuls(&mut self, t: Tick) {
        let keys: BTreeMap<NodeId, PublicKey> = self
            .nodes
            .values()
            .filter(|n| n.registered && !n.exited)
            .map(|n| (n.node.id, n.node.idl_key()))
            .collect();
        let outcome = self
            .ledger
            .rotate_consuls(&self.scores, |id| keys.get(&id).copied());
        let members = self.ledger.consuls().ids();
        for chain in &mut self.chains {
            chain.set_consuls(&members);
        }
        self.consul_rotations.push(ConsulRotation {
            tick: t,
            members,
            retained: matches!(outcome, RotationOutcome::Retained { .. }),
        });
    }

    fn epoch_boundary(&mut self, t: Tick) {
        self.liveness(t);
        self.rotate_consuls(t);
        // The register may have been written by a consul who just lost the
        // seat; rewrite under the new committee.
        self.write_scores();
        self.refresh_oracles(t);
        self.score_samples.push(ScoreSample {
            tick: t,
            scores: self.scores.clone(),
        });
        self.epoch_authors.clear();
        self.epoch_incidents.clear();
    }

    /// Each running honest rater judges every other active node over the
    /// epoch: present on the ledger without incident builds trust; an oracle
    /// silent for the whole epoch is unresponsive.
    fn liveness(&mut self, _t: Tick) {
        let t = self.tick;
        let active = self.active_nodes();
        let oracles: BTreeSet<NodeId> = self
            .chains
            .iter()
            .flat_map(|c| {
                c.nebulae()
                    .flat_map(|n| n.oracle_set.iter().map(|o| o.node_id))
            })
            .collect();
        let raters: Vec<NodeId> = self
            .nodes
            .values()
            .filter(|n| n.running(t) && n.honest())
            .map(|n| n.node.id)
            .collect();
        let mut changes = Vec::new();
        for &rater in &raters {
            for &ratee in &active {
                if rater == ratee || self.policy.mode(rater, ratee) == ScoreMode::Manual {
                    continue;
                }
                let present = self.epoch_authors.contains(&ratee);
                let clean = !self.epoch_incidents.contains(&(rater, ratee));
                let obs = if present && clean {
                    Some(Observation::StableEpoch)
                } else if !present && oracles.contains(&ratee) {
                    Some(Observation::Unresponsive)
                } else {
                    None
                };
                if let Some(obs) = obs {
                    if let Some(c) = self.policy.observe(rater, ratee, obs) {
                        changes.push(c);
                    }
                }
            }
        }
        self.publish_changes(changes);
    }

    /// Evicts oracles that fell below the threshold or left, then fills free
    /// seats with the best-scoring eligible nodes supporting the feed.
    fn refresh_oracles(&mut self, t: Tick) {
        for neb in self.scenario.nebulae.clone() {
            let idx = self.chain_index[&neb.chain];
            let chain = &self.chains[idx];
            let Some(contract) = chain.nebula(&neb.id) else {
                continue;
            };
            let evict: Vec<NodeId> = contract
                .oracle_set
                .iter()
                .map(|o| o.node_id)
                .filter(|id| {
                    !chain.system.is_active(*id) || chain.system.score_of(*id) < neb.min_score
                })
                .collect();
            let mut candidates: Vec<(NodeId, f64)> = chain
                .system
                .registered_nodes
                .values()
                .filter(|r| r.active && !contract.has_oracle(r.node_id))
                .filter(|r| {
                    self.nodes
                        .get(&r.node_id)
                        .is_some_and(|n| n.node.supports(&neb.feed) && !n.exited)
                })
                .map(|r| (r.node_id, chain.system.score_of(r.node_id)))
                .filter(|(_, s)| *s >= neb.min_score)
                .collect();
            candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

            let chain = &mut self.chains[idx];
            for id in &evict {
                let _ = chain.remove_oracle(&neb.id, *id);
            }
            let free = neb
                .n
                .saturating_sub(chain.nebula(&neb.id).map_or(0, |c| c.oracle_set.len()));
            let mut admitted = Vec::new();
            for (id, _) in candidates.into_iter().take(free) {
                if chain.admit_oracle(&neb.id, id).is_ok() {
                    admitted.push(id);
                }
            }
            if !admitted.is_empty() || !evict.is_empty() {
                self.oracle_changes.push(OracleChange {
                    tick: t,
                    nebula_id: neb.id.clone(),
                    admitted,
                    evicted: evict,
                });
            }
        }
    }

    fn distribute(&mut self, t: Tick) {
        for neb in self.scenario.nebulae.clone() {
            let idx = self.chain_index[&neb.chain];
            if let Ok(report) = economy::distribute(&mut self.chains[idx], &neb.id) {
                self.distributions.push(report);
            }
            if self.scenario.policy.auto_withdraw {
                let owed: Vec<NodeId> = self.chains[idx]
                    .nebula(&neb.id)
                    .map(|n| n.withdrawable.keys().copied().collect())
                    .unwrap_or_default();
                for id in owed {
                    if self.nodes.get(&id).is_some_and(|n| n.running(t)) {
                        let _ = economy::withdraw(&mut self.chains[idx], id, &neb.id);
                    }
                }
            }
        }
    }

    fn check_conservation(&mut self) {
        for chain in &self.chains {
            let check = chain.conservation();
            let summary = self.conservation.get_mut(chain.id()).unwrap();
            summary.checks += 1;
            if !check.holds() {
                summary.failures.push(check);
            }
        }
    }

    /// Closes open rounds and assembles the report and logs.
    pub fn finish(self) -> RunOutputs {
        let rounds: Vec<RoundOutcome> = self
            .rounds
            .values()
            .filter_map(|r| r.outcome.clone())
            .collect();
        let delivered = rounds.iter().filter(|r| r.delivered).count() as u64;
        let scheduled = rounds.len() as u64;
        let mut messages_by_kind = BTreeMap::new();
        for kind in [
            MessageKind::Commit,
            MessageKind::Reveal,
            MessageKind::AggSignature,
            MessageKind::ScoreUpdate,
        ] {
            messages_by_kind.insert(kind_key(kind), self.ledger.read_all(kind).count() as u64);
        }
        let excluded: Vec<NodeId> = self
            .oracle_changes
            .iter()
            .flat_map(|c| c.evicted.iter().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let conservation: Vec<ConservationSummary> = self.conservation.into_values().collect();
        let metrics = Metrics {
            rounds_scheduled: scheduled,
            rounds_delivered: delivered,
            delivery_success_rate: if scheduled == 0 {
                0.0
            } else {
                delivered as f64 / scheduled as f64
            },
            fraud_events: self.fraud_events.len() as u64,
            excluded_nodes: excluded,
            incidents_by_kind: self.incident_counts,
            total_payouts: self.distributions.iter().map(|d| d.paid()).sum(),
            conservation_pass: conservation.iter().all(|c| c.failures.is_empty()),
        };
        let subscriptions = self
            .scenario
            .subscriptions
            .iter()
            .filter_map(|s| {
                let chain = &self.chains[self.chain_index[&self
                    .scenario
                    .nebulae
                    .iter()
                    .find(|n| n.id == s.nebula)?
                    .chain]];
                let sub = chain.nebula(&s.nebula)?.subscriptions.get(&s.contract)?;
                Some(SubscriptionState {
                    contract: s.contract.clone(),
                    nebula_id: s.nebula.clone(),
                    active: sub.active,
                    balance: sub.balance,
                    received: chain.user(&s.contract).map_or(0, |u| {
                        u.received_log
                            .iter()
                            .filter(|r| r.nebula_id == s.nebula)
                            .count()
                    }),
                })
            })
            .collect();
        let node_activity = self
            .nodes
            .values()
            .map(|n| {
                let a = self.activity.get(&n.node.id).copied().unwrap_or([0; 3]);
                NodeActivity {
                    node: n.node.id,
                    sybil: n.sybil,
                    commits: a[0],
                    reveals: a[1],
                    signatures: a[2],
                }
            })
            .collect();
        let report = RunReport {
            hash_algorithm: crypto::HASH_ALGORITHM.to_owned(),
            signature_scheme: crypto::SIGNATURE_SCHEME.to_owned(),
            seed: self.scenario.seed,
            ticks: self.scenario.ticks,
            rounds,
            final_scores: self.scores.clone(),
            score_samples: self.score_samples,
            ledger: LedgerSummary {
                height: self.ledger.height(),
                head_digest: self.ledger.head_digest().to_hex(),
                no_quorum_ticks: self.no_quorum_ticks,
                messages_by_kind,
            },
            conservation,
            distributions: self.distributions,
            fraud_events: self.fraud_events,
            consul_rotations: self.consul_rotations,
            oracle_changes: self.oracle_changes,
            lifecycle: self.lifecycle,
            subscriptions,
            node_activity,
            metrics,
        };
        RunOutputs {
            report,
            ledger_log: self.ledger.dump(),
            chain_logs: self
                .chains
                .iter()
                .map(|c| (c.id().clone(), c.dump_txs()))
                .collect(),
            node_traces: self
                .nodes
                .values()
                .map(|n| {
                    let mut s = String::new();
                    for r in n.node.trace() {
                        s.push_str(&r.to_line());
                        s.push('\n');
                    }
                    (n.node.id, s)
                })
                .collect(),
        }
    }
}

fn incident_key(kind: IncidentKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn owner_account(nebula: &NebulaId) -> AccountId {
    AccountId(format!("owner:{nebula}"))
}

/// Validates and runs a scenario.
pub fn run(scenario: Scenario) -> Result<RunOutputs, crate::sim::SimError> {
    scenario.validate()?;
    Ok(Simulation::new(scenario)?.run())
}
