//! Scenario files: everything a run depends on besides the build itself.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainConfig, ContractKind, PaymentMode};
use crate::economy::DEFAULT_PERIOD;
use crate::extractor::{
    AggregationRule, FeedSpec, OutputType, Script, SourceFault, SourceFaultKind, SourceRef,
};
use crate::node::{Behavior, Schedule, DEFAULT_DIVERGENCE_TOLERANCE, DEFAULT_ROUND_TIMEOUT};
use crate::reputation::{EigenTrustParams, PolicyParams};
use crate::types::{ChainId, ContractId, FeedId, NebulaId, NodeId, Tick};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub ticks: u64,
    pub chains: Vec<ChainConfig>,
    pub nodes: Vec<NodeConfig>,
    pub feeds: Vec<FeedConfig>,
    pub nebulae: Vec<NebulaConfig>,
    #[serde(default)]
    pub subscriptions: Vec<SubscriptionConfig>,
    #[serde(default)]
    pub faults: FaultPlan,
    #[serde(default)]
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: NodeId,
    /// Chains to register on; all chains when empty.
    #[serde(default)]
    pub chains: Vec<ChainId>,
    /// Feed id to the source ids this node's extractor reads.
    #[serde(default)]
    pub feeds: BTreeMap<FeedId, Vec<String>>,
    /// Starting balance on each chain, before deposit and fee.
    #[serde(default = "default_balance")]
    pub balance: u64,
    /// Deposit to lock; the chain minimum when absent.
    #[serde(default)]
    pub deposit: Option<u64>,
    /// Tick 0 nodes form the genesis set and start out mutually trusted.
    #[serde(default)]
    pub join_tick: Tick,
    #[serde(default)]
    pub exit_tick: Option<Tick>,
    #[serde(default)]
    pub manual_scores: Vec<ManualScore>,
}

fn default_balance() -> u64 {
    1_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualScore {
    pub tick: Tick,
    pub ratee: NodeId,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub id: String,
    #[serde(default = "yes")]
    pub mandatory: bool,
    pub script: Script,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedConfig {
    pub feed_id: FeedId,
    pub sources: Vec<SourceSpec>,
    #[serde(default = "median")]
    pub merge_rule: AggregationRule,
    #[serde(default = "median")]
    pub aggregation: AggregationRule,
    #[serde(default)]
    pub scale: u32,
    #[serde(default = "integer")]
    pub output: OutputType,
}

fn median() -> AggregationRule {
    AggregationRule::Median
}

fn integer() -> OutputType {
    OutputType::Integer
}

impl FeedConfig {
    pub fn spec(&self) -> FeedSpec {
        FeedSpec {
            feed_id: self.feed_id.clone(),
            sources: self
                .sources
                .iter()
                .map(|s| SourceRef {
                    id: s.id.clone(),
                    mandatory: s.mandatory,
                })
                .collect(),
            merge_rule: self.merge_rule,
            aggregation: self.aggregation,
            scale: self.scale,
            output: self.output,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NebulaConfig {
    pub id: NebulaId,
    pub chain: ChainId,
    pub feed: FeedId,
    pub n: usize,
    pub k: usize,
    #[serde(default)]
    pub min_score: f64,
    #[serde(default = "one")]
    pub price: u64,
    pub schedule: Schedule,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubscriptionConfig {
    pub contract: ContractId,
    pub nebula: NebulaId,
    #[serde(default = "data_kind")]
    pub kind: ContractKind,
    pub mode: PaymentMode,
    #[serde(default = "default_method")]
    pub method: String,
    /// Starting balance of the contract's account.
    #[serde(default)]
    pub balance: u64,
    /// Moved into the nebula right after subscribing (deposit mode).
    #[serde(default)]
    pub deposit: u64,
    #[serde(default)]
    pub actions: Vec<SubscriptionAction>,
}

fn data_kind() -> ContractKind {
    ContractKind::Data
}

fn default_method() -> String {
    "on_data".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubscriptionAction {
    pub tick: Tick,
    /// Tokens moved from the reserve into the contract's account first.
    #[serde(default)]
    pub fund: u64,
    #[serde(default)]
    pub deposit: u64,
    #[serde(default)]
    pub reactivate: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultPlan {
    #[serde(default)]
    pub nodes: Vec<NodeFault>,
    #[serde(default)]
    pub sybil: Vec<SybilWave>,
    #[serde(default)]
    pub sources: Vec<SourceFaultConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeFault {
    pub node: NodeId,
    #[serde(default)]
    pub offline: Vec<TickRange>,
    #[serde(default)]
    pub behavior: Option<Behavior>,
    /// Consul withholds its block finality signature.
    #[serde(default)]
    pub withhold_block_signatures: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TickRange {
    pub from: Tick,
    /// Inclusive.
    pub to: Tick,
}

impl TickRange {
    pub fn contains(&self, tick: Tick) -> bool {
        (self.from..=self.to).contains(&tick)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SybilWave {
    pub tick: Tick,
    pub count: u32,
    /// Chains to register on; all chains when empty.
    #[serde(default)]
    pub chains: Vec<ChainId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceFaultConfig {
    pub source: String,
    pub from: Tick,
    /// Inclusive.
    pub to: Tick,
    pub kind: SourceFaultKind,
}

impl SourceFaultConfig {
    pub fn fault(&self) -> SourceFault {
        SourceFault {
            from: self.from,
            to: self.to,
            kind: self.kind.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Policy {
    pub eigentrust: EigenTrustParams,
    pub build_up_step: f64,
    pub build_up_cap: f64,
    pub missed_round_limit: u32,
    pub divergence_tolerance: f64,
    pub consul_count: usize,
    pub epoch_ticks: u64,
    pub distribution_period: u64,
    pub round_timeout: u64,
    /// Nodes withdraw their rewards right after each distribution.
    pub auto_withdraw: bool,
}

impl Default for Policy {
    fn default() -> Self {
        let p = PolicyParams::default();
        Self {
            eigentrust: EigenTrustParams::default(),
            build_up_step: p.build_up_step,
            build_up_cap: p.build_up_cap,
            missed_round_limit: p.missed_round_limit,
            divergence_tolerance: DEFAULT_DIVERGENCE_TOLERANCE,
            consul_count: 5,
            epoch_ticks: 10,
            distribution_period: DEFAULT_PERIOD,
            round_timeout: DEFAULT_ROUND_TIMEOUT,
            auto_withdraw: true,
        }
    }
}

impl Policy {
    pub fn policy_params(&self) -> PolicyParams {
        PolicyParams {
            build_up_step: self.build_up_step,
            build_up_cap: self.build_up_cap,
            missed_round_limit: self.missed_round_limit,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub violations: Vec<String>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violation(s)", self.violations.len())?;
        for v in &self.violations {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ValidationError),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn node_chains(&self, node: &NodeConfig) -> Vec<ChainId> {
        if node.chains.is_empty() {
            self.chains.iter().map(|c| c.id.clone()).collect()
        } else {
            node.chains.clone()
        }
    }

    /// Collects every violation instead of stopping at the first.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut v = Vec::new();
        if self.ticks == 0 {
            v.push("ticks must be positive".to_owned());
        }

        let mut chains = BTreeSet::new();
        for c in &self.chains {
            if !chains.insert(&c.id) {
                v.push(format!("chain {}: duplicate id", c.id));
            }
            if c.min_deposit == 0 {
                v.push(format!("chain {}: min_deposit must be positive", c.id));
            }
        }
        if self.chains.is_empty() {
            v.push("at least one chain is required".to_owned());
        }

        let mut feeds = BTreeMap::new();
        let mut sources = BTreeSet::new();
        for f in &self.feeds {
            if feeds.insert(&f.feed_id, f).is_some() {
                v.push(format!("feed {}: duplicate id", f.feed_id));
            }
            if let Err(e) = f.spec().validate() {
                v.push(format!("feed {}: {e}", f.feed_id));
            }
            for s in &f.sources {
                if !sources.insert(&s.id) {
                    v.push(format!("source {}: declared more than once", s.id));
                }
            }
        }

        let mut nodes = BTreeSet::new();
        for n in &self.nodes {
            if !nodes.insert(n.id) {
                v.push(format!("node {}: duplicate id", n.id));
            }
            for c in &n.chains {
                if !chains.contains(c) {
                    v.push(format!("node {}: unknown chain {c}", n.id));
                }
            }
            for (feed, ids) in &n.feeds {
                match feeds.get(feed) {
                    None => v.push(format!("node {}: unknown feed {feed}", n.id)),
                    Some(f) => {
                        for id in ids {
                            if !f.sources.iter().any(|s| &s.id == id) {
                                v.push(format!("node {}: feed {feed} has no source {id}", n.id));
                            }
                        }
                        for s in f.sources.iter().filter(|s| s.mandatory) {
                            if !ids.contains(&s.id) {
                                v.push(format!(
                                    "node {}: feed {feed} binding omits mandatory source {}",
                                    n.id, s.id
                                ));
                            }
                        }
                    }
                }
            }
            if let Some(exit) = n.exit_tick {
                if exit <= n.join_tick {
                    v.push(format!("node {}: exit_tick must follow join_tick", n.id));
                }
            }
            for m in &n.manual_scores {
                if !(0.0..=f64::MAX).contains(&m.value) || !m.value.is_finite() {
                    v.push(format!(
                        "node {}: manual score must be finite and non-negative",
                        n.id
                    ));
                }
                if m.ratee == n.id {
                    v.push(format!("node {}: cannot score itself", n.id));
                }
            }
        }
        if !self.nodes.iter().any(|n| n.join_tick == 0) {
            v.push("at least one node must join at tick 0".to_owned());
        }
        for n in &self.nodes {
            for m in &n.manual_scores {
                if !nodes.contains(&m.ratee) {
                    v.push(format!(
                        "node {}: manual score for unknown node {}",
                        n.id, m.ratee
                    ));
                }
            }
        }

        let mut nebulae = BTreeMap::new();
        let mut bound_feeds = BTreeMap::new();
        for n in &self.nebulae {
            if nebulae.insert(&n.id, n).is_some() {
                v.push(format!("nebula {}: duplicate id", n.id));
            }
            if !chains.contains(&n.chain) {
                v.push(format!("nebula {}: unknown chain {}", n.id, n.chain));
            }
            if !feeds.contains_key(&n.feed) {
                v.push(format!("nebula {}: unknown feed {}", n.id, n.feed));
            }
            if let Some(other) = bound_feeds.insert(&n.feed, &n.id) {
                v.push(format!(
                    "nebula {}: feed {} is already served by nebula {other}",
                    n.id, n.feed
                ));
            }
            if n.k == 0 || n.k > n.n {
                v.push(format!(
                    "nebula {}: need 0 < K <= N, got K={} N={}",
                    n.id, n.k, n.n
                ));
            }
            if !(0.0..=100.0).contains(&n.min_score) {
                v.push(format!("nebula {}: min_score must lie in [0, 100]", n.id));
            }
            if n.schedule.every == 0 {
                v.push(format!("nebula {}: schedule.every must be positive", n.id));
            }
        }

        let mut contracts = BTreeSet::new();
        for s in &self.subscriptions {
            if !nebulae.contains_key(&s.nebula) {
                v.push(format!(
                    "subscription {}: unknown nebula {}",
                    s.contract, s.nebula
                ));
            }
            if !contracts.insert((&s.contract, &s.nebula)) {
                v.push(format!(
                    "subscription {}: subscribed twice to {}",
                    s.contract, s.nebula
                ));
            }
            if s.deposit > s.balance {
                v.push(format!(
                    "subscription {}: deposit exceeds balance",
                    s.contract
                ));
            }
        }

        for f in &self.faults.nodes {
            if !nodes.contains(&f.node) {
                v.push(format!("fault: unknown node {}", f.node));
            }
            for r in &f.offline {
                if r.to < r.from {
                    v.push(format!(
                        "fault: node {} offline range ends before it starts",
                        f.node
                    ));
                }
            }
        }
        for w in &self.faults.sybil {
            for c in &w.chains {
                if !chains.contains(c) {
                    v.push(format!("sybil wave at {}: unknown chain {c}", w.tick));
                }
            }
        }
        for s in &self.faults.sources {
            if !sources.contains(&s.source) {
                v.push(format!("fault: unknown source {}", s.source));
            }
            if s.to < s.from {
                v.push(format!(
                    "fault: source {} range ends before it starts",
                    s.source
                ));
            }
        }

        let p = &self.policy;
        if let Err(e) = p.eigentrust.validate() {
            v.push(format!("policy: {e}"));
        }
        if p.consul_count == 0 {
            v.push("policy: consul_count must be positive".to_owned());
        }
        if p.epoch_ticks == 0 || p.distribution_period == 0 || p.round_timeout == 0 {
            v.push(
                "policy: epoch_ticks, distribution_period and round_timeout must be positive"
                    .to_owned(),
            );
        }
        if p.divergence_tolerance.is_nan() || p.divergence_tolerance < 0.0 {
            v.push("policy: divergence_tolerance must be non-negative".to_owned());
        }
        if !(p.build_up_step >= 0.0 && p.build_up_cap >= 0.0) {
            v.push("policy: build-up step and cap must be non-negative".to_owned());
        }

        if v.is_empty() {
            Ok(())
        } else {
            Err(ValidationError { violations: v })
        }
    }
}
