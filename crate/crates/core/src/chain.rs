//! Simulated target chains and the three contract state machines hosted on
//! them: SYSTEM-SC, NEBULA-SC and USER-SC.
//!
//! Each chain is a single-writer state machine. Every state-changing call
//! appends a [`TxRecord`], including calls that fail, so the transaction log
//! reads as the chain's full history.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, Digest, Proof, PublicKey};
use crate::ledger::signing_payload;
use crate::reputation::GravityScore;
use crate::types::{
    AccountId, ChainId, ContractId, DataValue, FeedId, NebulaId, NodeId, Round, Tick,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub id: ChainId,
    pub supply: u64,
    pub min_deposit: u64,
    /// Deposit lock, in ticks. Stands in for one year.
    #[serde(default = "default_lock_period")]
    pub lock_period: u64,
    /// Flat fee routed to the treasury on registration and nebula creation.
    #[serde(default = "default_fee")]
    pub registration_fee: u64,
    /// Maximum distance between a pulse timestamp and the chain height.
    #[serde(default = "default_freshness")]
    pub freshness_window: u64,
}

fn default_lock_period() -> u64 {
    365
}

fn default_fee() -> u64 {
    1
}

fn default_freshness() -> u64 {
    2
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize)]
pub enum ChainError {
    #[error("deposit {offered} below minimum {minimum}")]
    InsufficientDeposit { offered: u64, minimum: u64 },
    #[error("node {0} is already registered")]
    AlreadyRegistered(NodeId),
    #[error("node {0} is not registered")]
    NotRegistered(NodeId),
    #[error("node {0} is still active")]
    StillActive(NodeId),
    #[error("deposit locked until height {release_height}")]
    Locked { release_height: u64 },
    #[error("account {account} holds {available}, needs {needed}")]
    InsufficientFunds {
        account: AccountId,
        needed: u64,
        available: u64,
    },
    #[error("creation fee unpaid by {0}")]
    FeeUnpaid(AccountId),
    #[error("bad nebula parameters: {0}")]
    BadParams(String),
    #[error("nebula {0} already exists")]
    DuplicateNebula(NebulaId),
    #[error("unknown nebula {0}")]
    UnknownNebula(NebulaId),
    #[error("unknown user contract {0}")]
    UnknownContract(ContractId),
    #[error("node {0} is not a current consul")]
    NotConsul(NodeId),
    #[error("node {node} cannot join the oracle set: {reason}")]
    NotAdmitted { node: NodeId, reason: String },
    #[error("round {0} has no accepted pulse")]
    UnknownRound(Round),
    #[error("nothing to withdraw")]
    NothingToWithdraw,
    #[error("genesis allocations {allocated} exceed supply {supply}")]
    Overallocated { allocated: u64, supply: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Registration {
    pub node_id: NodeId,
    pub public_key: PublicKey,
    pub registration_height: u64,
    pub deposit: u64,
    pub active: bool,
    pub exit_height: Option<u64>,
    pub release_height: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExitRecord {
    pub node_id: NodeId,
    pub exit_height: u64,
    pub release_height: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SystemContract {
    pub registered_nodes: BTreeMap<NodeId, Registration>,
    pub score_register: BTreeMap<NodeId, f64>,
    pub consuls: BTreeSet<NodeId>,
    pub feed_registry: BTreeMap<NebulaId, FeedId>,
    pub lock_period: u64,
    pub min_deposit: u64,
}

impl SystemContract {
    /// Registered score, zero for nodes the consuls have not scored yet.
    pub fn score_of(&self, node: NodeId) -> f64 {
        self.score_register.get(&node).copied().unwrap_or(0.0)
    }

    pub fn is_active(&self, node: NodeId) -> bool {
        self.registered_nodes.get(&node).is_some_and(|r| r.active)
    }

    pub fn node_by_key(&self, key: &PublicKey) -> Option<NodeId> {
        self.registered_nodes
            .values()
            .find(|r| r.public_key == *key)
            .map(|r| r.node_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentMode {
    /// User pre-funds a balance held by the nebula.
    Deposit,
    /// Each delivery charges the user's account directly.
    PerCall,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Subscription {
    pub method: String,
    pub mode: PaymentMode,
    pub balance: u64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PulseRecord {
    pub agg_digest: Digest,
    pub timestamp: Tick,
    pub height: u64,
    pub leader: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Oracle {
    pub node_id: NodeId,
    pub key: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NebulaParams {
    pub nebula_id: NebulaId,
    pub feed_id: FeedId,
    /// Seats in the oracle set.
    pub n: usize,
    /// Valid signatures required per pulse.
    pub k: usize,
    pub min_score: f64,
    pub price_per_delivery: u64,
    /// Account paying the creation fee.
    pub owner: AccountId,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NebulaContract {
    pub params: NebulaParams,
    /// Admission order; the leader rotates over this list by height.
    pub oracle_set: Vec<Oracle>,
    pub subscriptions: BTreeMap<ContractId, Subscription>,
    pub pulse_log: BTreeMap<Round, PulseRecord>,
    /// Revenue not yet distributed, including carried remainders.
    pub undistributed: u64,
    /// Per-oracle count of accepted pulses carrying its valid signature,
    /// for the current distribution period.
    pub activity_log: BTreeMap<PublicKey, u64>,
    /// Accepted pulses in the current distribution period.
    pub period_pulses: u64,
    pub period: u64,
    /// Distributed rewards awaiting withdrawal.
    pub withdrawable: BTreeMap<NodeId, u64>,
    delivered: BTreeSet<(Round, ContractId)>,
}

impl NebulaContract {
    pub fn id(&self) -> &NebulaId {
        &self.params.nebula_id
    }

    pub fn expected_leader(&self, height: u64) -> Option<&Oracle> {
        if self.oracle_set.is_empty() {
            return None;
        }
        Some(&self.oracle_set[(height % self.oracle_set.len() as u64) as usize])
    }

    pub fn has_oracle(&self, node: NodeId) -> bool {
        self.oracle_set.iter().any(|o| o.node_id == node)
    }

    /// Funds held by the contract: revenue pool, user deposits and unclaimed
    /// rewards.
    pub fn holdings(&self) -> u64 {
        self.undistributed
            + self.subscriptions.values().map(|s| s.balance).sum::<u64>()
            + self.withdrawable.values().sum::<u64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractKind {
    /// Receives the verified value.
    Data,
    /// Is called without any value.
    Trigger,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Received {
    pub nebula_id: NebulaId,
    pub round: Round,
    pub height: u64,
    pub method: String,
    pub value: Option<DataValue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UserContract {
    pub contract_id: ContractId,
    pub kind: ContractKind,
    pub received_log: Vec<Received>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize)]
pub enum PulseReject {
    #[error("unknown nebula")]
    UnknownNebula,
    #[error("submitter is not the leader for this height")]
    WrongLeader,
    #[error("fewer than K valid signatures")]
    InsufficientSignatures,
    #[error("timestamp outside the freshness window")]
    StaleTimestamp,
    #[error("round already has an accepted pulse")]
    DuplicateRound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PulseAccepted {
    pub round: Round,
    pub height: u64,
    pub leader: NodeId,
    pub valid_signers: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize)]
pub enum DeliveryError {
    #[error("value does not match the verified digest")]
    HashMismatch,
    #[error("recipient has no subscription")]
    NotSubscribed,
    #[error("subscription is suspended")]
    Suspended,
    #[error("payment failed; subscription suspended")]
    PaymentFailed,
    #[error("already delivered this round")]
    AlreadyDelivered,
    #[error("unknown user contract")]
    UnknownContract,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeliveryReport {
    pub nebula_id: NebulaId,
    pub round: Round,
    pub outcomes: Vec<(ContractId, Result<(), DeliveryError>)>,
}

impl DeliveryReport {
    pub fn delivered(&self) -> usize {
        self.outcomes.iter().filter(|(_, r)| r.is_ok()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TxRecord {
    pub height: u64,
    pub kind: &'static str,
    pub parties: Vec<String>,
    pub amount: u64,
    pub result: String,
}

impl TxRecord {
    pub fn to_line(&self) -> String {
        format!(
            "height={} kind={} parties=[{}] amount={} result={}",
            self.height,
            self.kind,
            self.parties.join(","),
            self.amount,
            self.result
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConservationCheck {
    pub height: u64,
    pub expected: u64,
    pub actual: u64,
}

impl ConservationCheck {
    pub fn holds(&self) -> bool {
        self.expected == self.actual
    }
}

#[derive(Debug, Clone)]
pub struct TargetChain {
    config: ChainConfig,
    height: u64,
    accounts: BTreeMap<AccountId, u64>,
    pub system: SystemContract,
    nebulae: BTreeMap<NebulaId, NebulaContract>,
    users: BTreeMap<ContractId, UserContract>,
    tx_log: Vec<TxRecord>,
}

fn outcome<T, E: std::fmt::Display>(r: &Result<T, E>) -> String {
    match r {
        Ok(_) => "ok".to_owned(),
        Err(e) => format!("err({e})"),
    }
}

impl TargetChain {
    /// Mints `supply` at height 0. Allocated accounts are credited; the rest
    /// lands in the reserve account.
    pub fn genesis(
        config: ChainConfig,
        allocations: &[(AccountId, u64)],
    ) -> Result<Self, ChainError> {
        let allocated: u64 = allocations.iter().map(|(_, v)| v).sum();
        if allocated > config.supply {
            return Err(ChainError::Overallocated {
                allocated,
                supply: config.supply,
            });
        }
        let mut accounts = BTreeMap::new();
        accounts.insert(AccountId::reserve(), config.supply - allocated);
        accounts.insert(AccountId::treasury(), 0);
        for (account, amount) in allocations {
            *accounts.entry(account.clone()).or_insert(0) += amount;
        }
        let system = SystemContract {
            lock_period: config.lock_period,
            min_deposit: config.min_deposit,
            ..SystemContract::default()
        };
        let mut chain = Self {
            config,
            height: 0,
            accounts,
            system,
            nebulae: BTreeMap::new(),
            users: BTreeMap::new(),
            tx_log: Vec::new(),
        };
        let supply = chain.config.supply;
        chain.log("genesis", vec![AccountId::reserve().0], supply, "ok".into());
        Ok(chain)
    }

    pub fn id(&self) -> &ChainId {
        &self.config.id
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    /// Moves the chain to `height`, which must not go backwards.
    pub fn advance_to(&mut self, height: u64) {
        assert!(height >= self.height, "chain height cannot decrease");
        self.height = height;
    }

    pub fn balance(&self, account: &AccountId) -> u64 {
        self.accounts.get(account).copied().unwrap_or(0)
    }

    pub fn tx_log(&self) -> &[TxRecord] {
        &self.tx_log
    }

    pub fn nebula(&self, id: &NebulaId) -> Option<&NebulaContract> {
        self.nebulae.get(id)
    }

    pub fn nebula_mut(&mut self, id: &NebulaId) -> Option<&mut NebulaContract> {
        self.nebulae.get_mut(id)
    }

    pub fn nebulae(&self) -> impl Iterator<Item = &NebulaContract> {
        self.nebulae.values()
    }

    pub fn user(&self, id: &ContractId) -> Option<&UserContract> {
        self.users.get(id)
    }

    fn log(&mut self, kind: &'static str, parties: Vec<String>, amount: u64, result: String) {
        self.tx_log.push(TxRecord {
            height: self.height,
            kind,
            parties,
            amount,
            result,
        });
    }

    fn debit(&mut self, account: &AccountId, amount: u64) -> Result<(), ChainError> {
        let available = self.balance(account);
        if available < amount {
            return Err(ChainError::InsufficientFunds {
                account: account.clone(),
                needed: amount,
                available,
            });
        }
        self.accounts.insert(account.clone(), available - amount);
        Ok(())
    }

    fn credit(&mut self, account: &AccountId, amount: u64) {
        *self.accounts.entry(account.clone()).or_insert(0) += amount;
    }

    pub fn transfer(
        &mut self,
        from: &AccountId,
        to: &AccountId,
        amount: u64,
    ) -> Result<(), ChainError> {
        let r = self.debit(from, amount).map(|()| self.credit(to, amount));
        self.log(
            "transfer",
            vec![from.0.clone(), to.0.clone()],
            amount,
            outcome(&r),
        );
        r
    }

    /// Σ accounts (treasury and reserve included) + locked deposits + funds
    /// held by nebulae, against the minted supply.
    pub fn conservation(&self) -> ConservationCheck {
        let accounts: u64 = self.accounts.values().sum();
        let locked: u64 = self
            .system
            .registered_nodes
            .values()
            .map(|r| r.deposit)
            .sum();
        let nebulae: u64 = self.nebulae.values().map(NebulaContract::holdings).sum();
        ConservationCheck {
            height: self.height,
            expected: self.config.supply,
            actual: accounts + locked + nebulae,
        }
    }

    pub fn register_node(
        &mut self,
        node_id: NodeId,
        public_key: PublicKey,
        deposit: u64,
    ) -> Result<Registration, ChainError> {
        let r = self.try_register(node_id, public_key, deposit);
        self.log(
            "register",
            vec![AccountId::node(node_id).0, AccountId::treasury().0],
            deposit,
            outcome(&r),
        );
        r
    }

    fn try_register(
        &mut self,
        node_id: NodeId,
        public_key: PublicKey,
        deposit: u64,
    ) -> Result<Registration, ChainError> {
        if self.system.registered_nodes.contains_key(&node_id) {
            return Err(ChainError::AlreadyRegistered(node_id));
        }
        if deposit < self.config.min_deposit {
            return Err(ChainError::InsufficientDeposit {
                offered: deposit,
                minimum: self.config.min_deposit,
            });
        }
        let account = AccountId::node(node_id);
        let fee = self.config.registration_fee;
        self.debit(&account, deposit + fee)?;
        self.credit(&AccountId::treasury(), fee);
        let record = Registration {
            node_id,
            public_key,
            registration_height: self.height,
            deposit,
            active: true,
            exit_height: None,
            release_height: self.height + self.config.lock_period,
        };
        self.system.registered_nodes.insert(node_id, record.clone());
        Ok(record)
    }

    /// Leaves the network. A node with a zero registered score waits a full
    /// lock period from exit; any other node is bound only by its original
    /// registration lock.
    pub fn deactivate_node(&mut self, node_id: NodeId) -> Result<ExitRecord, ChainError> {
        let height = self.height;
        let lock = self.config.lock_period;
        let score = self.system.score_of(node_id);
        let r = match self.system.registered_nodes.get_mut(&node_id) {
            Some(reg) if reg.active => {
                reg.active = false;
                reg.exit_height = Some(height);
                reg.release_height = if score == 0.0 {
                    height + lock
                } else {
                    reg.registration_height + lock
                };
                Ok(ExitRecord {
                    node_id,
                    exit_height: height,
                    release_height: reg.release_height,
                })
            }
            _ => Err(ChainError::NotRegistered(node_id)),
        };
        if r.is_ok() {
            for nebula in self.nebulae.values_mut() {
                nebula.oracle_set.retain(|o| o.node_id != node_id);
            }
        }
        self.log(
            "deactivate",
            vec![AccountId::node(node_id).0],
            0,
            outcome(&r),
        );
        r
    }

    /// Returns a deactivated node's deposit once its lock has expired.
    pub fn withdraw_deposit(&mut self, node_id: NodeId) -> Result<u64, ChainError> {
        let height = self.height;
        let r = match self.system.registered_nodes.get(&node_id) {
            None => Err(ChainError::NotRegistered(node_id)),
            Some(reg) if reg.active => Err(ChainError::StillActive(node_id)),
            Some(reg) if height < reg.release_height => Err(ChainError::Locked {
                release_height: reg.release_height,
            }),
            Some(reg) => Ok(reg.deposit),
        };
        let amount = *r.as_ref().unwrap_or(&0);
        if r.is_ok() {
            self.system.registered_nodes.remove(&node_id);
            self.credit(&AccountId::node(node_id), amount);
        }
        self.log(
            "withdraw_deposit",
            vec![AccountId::node(node_id).0],
            amount,
            outcome(&r),
        );
        r
    }

    /// Only a member of the on-chain consul set may update the score
    /// register. Use [`write_scores_all`] to keep several chains in step.
    pub fn write_scores(
        &mut self,
        consul: NodeId,
        scores: &[GravityScore],
    ) -> Result<(), ChainError> {
        let r = self
            .check_consul(consul)
            .map(|()| self.apply_scores(scores));
        self.log(
            "write_scores",
            vec![AccountId::node(consul).0],
            0,
            outcome(&r),
        );
        r
    }

    fn check_consul(&self, consul: NodeId) -> Result<(), ChainError> {
        if self.system.consuls.contains(&consul) {
            Ok(())
        } else {
            Err(ChainError::NotConsul(consul))
        }
    }

    fn apply_scores(&mut self, scores: &[GravityScore]) {
        self.system.score_register = scores.iter().map(|g| (g.node_id, g.score)).collect();
    }

    /// Records the consul committee on chain.
    pub fn set_consuls(&mut self, consuls: &[NodeId]) {
        self.system.consuls = consuls.iter().copied().collect();
        let parties = consuls.iter().map(|c| AccountId::node(*c).0).collect();
        self.log("set_consuls", parties, 0, "ok".into());
    }

    pub fn create_nebula(&mut self, params: NebulaParams) -> Result<(), ChainError> {
        let r = self.try_create_nebula(params.clone());
        self.log(
            "create_nebula",
            vec![params.nebula_id.0.clone(), params.owner.0.clone()],
            self.config.registration_fee,
            outcome(&r),
        );
        r
    }

    fn try_create_nebula(&mut self, params: NebulaParams) -> Result<(), ChainError> {
        if params.k == 0 || params.k > params.n {
            return Err(ChainError::BadParams(format!(
                "need 0 < K <= N, got K={} N={}",
                params.k, params.n
            )));
        }
        if !(0.0..=100.0).contains(&params.min_score) {
            return Err(ChainError::BadParams(format!(
                "min_score {} outside [0, 100]",
                params.min_score
            )));
        }
        if self.nebulae.contains_key(&params.nebula_id) {
            return Err(ChainError::DuplicateNebula(params.nebula_id));
        }
        let fee = self.config.registration_fee;
        self.debit(&params.owner, fee)
            .map_err(|_| ChainError::FeeUnpaid(params.owner.clone()))?;
        self.credit(&AccountId::treasury(), fee);
        self.system
            .feed_registry
            .insert(params.nebula_id.clone(), params.feed_id.clone());
        self.nebulae.insert(
            params.nebula_id.clone(),
            NebulaContract {
                params,
                oracle_set: Vec::new(),
                subscriptions: BTreeMap::new(),
                pulse_log: BTreeMap::new(),
                undistributed: 0,
                activity_log: BTreeMap::new(),
                period_pulses: 0,
                period: 0,
                withdrawable: BTreeMap::new(),
                delivered: BTreeSet::new(),
            },
        );
        Ok(())
    }

    /// Adds an active node whose registered score meets the nebula threshold.
    pub fn admit_oracle(
        &mut self,
        nebula_id: &NebulaId,
        node_id: NodeId,
    ) -> Result<(), ChainError> {
        let r = self.try_admit(nebula_id, node_id);
        self.log(
            "admit_oracle",
            vec![nebula_id.0.clone(), AccountId::node(node_id).0],
            0,
            outcome(&r),
        );
        r
    }

    fn try_admit(&mut self, nebula_id: &NebulaId, node_id: NodeId) -> Result<(), ChainError> {
        let not_admitted = |reason: String| ChainError::NotAdmitted {
            node: node_id,
            reason,
        };
        let reg = self
            .system
            .registered_nodes
            .get(&node_id)
            .filter(|r| r.active)
            .ok_or(ChainError::NotRegistered(node_id))?;
        let key = reg.public_key;
        let score = self.system.score_of(node_id);
        let nebula = self
            .nebulae
            .get_mut(nebula_id)
            .ok_or_else(|| ChainError::UnknownNebula(nebula_id.clone()))?;
        if score < nebula.params.min_score {
            return Err(not_admitted(format!(
                "score {score:.3} below {}",
                nebula.params.min_score
            )));
        }
        if nebula.has_oracle(node_id) {
            return Err(not_admitted("already an oracle".into()));
        }
        if nebula.oracle_set.len() >= nebula.params.n {
            return Err(not_admitted("no free seat".into()));
        }
        nebula.oracle_set.push(Oracle { node_id, key });
        Ok(())
    }

    pub fn remove_oracle(
        &mut self,
        nebula_id: &NebulaId,
        node_id: NodeId,
    ) -> Result<(), ChainError> {
        let r = match self.nebulae.get_mut(nebula_id) {
            None => Err(ChainError::UnknownNebula(nebula_id.clone())),
            Some(n) if !n.has_oracle(node_id) => Err(ChainError::NotRegistered(node_id)),
            Some(n) => {
                n.oracle_set.retain(|o| o.node_id != node_id);
                Ok(())
            }
        };
        self.log(
            "remove_oracle",
            vec![nebula_id.0.clone(), AccountId::node(node_id).0],
            0,
            outcome(&r),
        );
        r
    }

    /// Threshold-signature verification of an aggregated value.
    pub fn pulse_tx(
        &mut self,
        nebula_id: &NebulaId,
        round: Round,
        agg_digest: Digest,
        timestamp: Tick,
        leader: PublicKey,
        signatures: &[Proof],
    ) -> Result<PulseAccepted, PulseReject> {
        let r = self.try_pulse(nebula_id, round, agg_digest, timestamp, leader, signatures);
        let parties = vec![
            nebula_id.0.clone(),
            format!("round:{round}"),
            leader.short(),
        ];
        self.log("pulse", parties, signatures.len() as u64, outcome(&r));
        r
    }

    fn try_pulse(
        &mut self,
        nebula_id: &NebulaId,
        round: Round,
        agg_digest: Digest,
        timestamp: Tick,
        leader: PublicKey,
        signatures: &[Proof],
    ) -> Result<PulseAccepted, PulseReject> {
        let height = self.height;
        let window = self.config.freshness_window;
        let nebula = self
            .nebulae
            .get_mut(nebula_id)
            .ok_or(PulseReject::UnknownNebula)?;
        if nebula.pulse_log.contains_key(&round) {
            return Err(PulseReject::DuplicateRound);
        }
        let expected = nebula
            .expected_leader(height)
            .ok_or(PulseReject::WrongLeader)?;
        if expected.key != leader {
            return Err(PulseReject::WrongLeader);
        }
        let leader_node = expected.node_id;
        if timestamp.abs_diff(height) > window {
            return Err(PulseReject::StaleTimestamp);
        }
        let payload = signing_payload(
            &agg_digest,
            timestamp,
            &nebula.params.feed_id,
            nebula_id,
            round,
        );
        let mut seen = BTreeSet::new();
        let mut valid = Vec::new();
        for proof in signatures {
            let Some(oracle) = nebula.oracle_set.iter().find(|o| o.key == proof.signer) else {
                continue;
            };
            if seen.contains(&proof.signer) || !crypto::verify_proof(proof, &payload) {
                continue;
            }
            seen.insert(proof.signer);
            valid.push((oracle.node_id, proof.signer));
        }
        if valid.len() < nebula.params.k {
            return Err(PulseReject::InsufficientSignatures);
        }
        nebula.pulse_log.insert(
            round,
            PulseRecord {
                agg_digest,
                timestamp,
                height,
                leader,
            },
        );
        nebula.period_pulses += 1;
        for (_, key) in &valid {
            *nebula.activity_log.entry(*key).or_insert(0) += 1;
        }
        Ok(PulseAccepted {
            round,
            height,
            leader: leader_node,
            valid_signers: valid.into_iter().map(|(id, _)| id).collect(),
        })
    }

    /// Delivers a verified value to subscribers, charging each one.
    pub fn send_data_tx(
        &mut self,
        nebula_id: &NebulaId,
        round: Round,
        value: &DataValue,
        recipients: &[ContractId],
    ) -> Result<DeliveryReport, ChainError> {
        let nebula = self
            .nebulae
            .get(nebula_id)
            .ok_or_else(|| ChainError::UnknownNebula(nebula_id.clone()))?;
        let Some(record) = nebula.pulse_log.get(&round) else {
            let err = ChainError::UnknownRound(round);
            self.log(
                "send_data",
                vec![nebula_id.0.clone()],
                0,
                format!("err({err})"),
            );
            return Err(err);
        };
        let digest_ok = crypto::value_digest(value) == record.agg_digest;
        let mut outcomes = Vec::with_capacity(recipients.len());
        for recipient in recipients {
            let r = if digest_ok {
                self.deliver_one(nebula_id, round, value, recipient)
            } else {
                Err(DeliveryError::HashMismatch)
            };
            let price = self.nebulae[nebula_id].params.price_per_delivery;
            self.log(
                "send_data",
                vec![
                    nebula_id.0.clone(),
                    format!("round:{round}"),
                    recipient.0.clone(),
                ],
                if r.is_ok() { price } else { 0 },
                outcome(&r),
            );
            outcomes.push((recipient.clone(), r));
        }
        Ok(DeliveryReport {
            nebula_id: nebula_id.clone(),
            round,
            outcomes,
        })
    }

    fn deliver_one(
        &mut self,
        nebula_id: &NebulaId,
        round: Round,
        value: &DataValue,
        recipient: &ContractId,
    ) -> Result<(), DeliveryError> {
        if !self.users.contains_key(recipient) {
            return Err(DeliveryError::UnknownContract);
        }
        let height = self.height;
        let user_account = AccountId::user(recipient);
        let user_balance = self.balance(&user_account);
        let nebula = self.nebulae.get_mut(nebula_id).expect("checked by caller");
        let price = nebula.params.price_per_delivery;
        if nebula.delivered.contains(&(round, recipient.clone())) {
            return Err(DeliveryError::AlreadyDelivered);
        }
        let sub = nebula
            .subscriptions
            .get_mut(recipient)
            .ok_or(DeliveryError::NotSubscribed)?;
        if !sub.active {
            return Err(DeliveryError::Suspended);
        }
        match sub.mode {
            PaymentMode::Deposit if sub.balance >= price => sub.balance -= price,
            PaymentMode::PerCall if user_balance >= price => {
                self.accounts.insert(user_account, user_balance - price);
            }
            _ => {
                sub.active = false;
                return Err(DeliveryError::PaymentFailed);
            }
        }
        let method = sub.method.clone();
        nebula.undistributed += price;
        nebula.delivered.insert((round, recipient.clone()));
        let user = self.users.get_mut(recipient).expect("checked above");
        let value = match user.kind {
            ContractKind::Data => Some(value.clone()),
            ContractKind::Trigger => None,
        };
        user.received_log.push(Received {
            nebula_id: nebula_id.clone(),
            round,
            height,
            method,
            value,
        });
        Ok(())
    }

    pub fn deploy_user_contract(&mut self, contract_id: ContractId, kind: ContractKind) {
        self.users
            .entry(contract_id.clone())
            .or_insert(UserContract {
                contract_id: contract_id.clone(),
                kind,
                received_log: Vec::new(),
            });
        self.log("deploy_user", vec![contract_id.0], 0, "ok".into());
    }

    pub fn subscribe(
        &mut self,
        user: &ContractId,
        nebula_id: &NebulaId,
        method: &str,
        mode: PaymentMode,
    ) -> Result<(), ChainError> {
        let r = self.check_pair(user, nebula_id).map(|()| {
            let nebula = self.nebulae.get_mut(nebula_id).unwrap();
            let balance = nebula.subscriptions.get(user).map_or(0, |s| s.balance);
            nebula.subscriptions.insert(
                user.clone(),
                Subscription {
                    method: method.to_owned(),
                    mode,
                    balance,
                    active: true,
                },
            );
        });
        self.log(
            "subscribe",
            vec![user.0.clone(), nebula_id.0.clone()],
            0,
            outcome(&r),
        );
        r
    }

    /// Moves tokens from the user's account into its balance held by the nebula.
    pub fn deposit(
        &mut self,
        user: &ContractId,
        nebula_id: &NebulaId,
        amount: u64,
    ) -> Result<(), ChainError> {
        let r = self.check_pair(user, nebula_id).and_then(|()| {
            if !self.nebulae[nebula_id].subscriptions.contains_key(user) {
                return Err(ChainError::UnknownContract(user.clone()));
            }
            self.debit(&AccountId::user(user), amount)?;
            let sub = self
                .nebulae
                .get_mut(nebula_id)
                .unwrap()
                .subscriptions
                .get_mut(user)
                .unwrap();
            sub.balance += amount;
            Ok(())
        });
        self.log(
            "deposit",
            vec![user.0.clone(), nebula_id.0.clone()],
            amount,
            outcome(&r),
        );
        r
    }

    pub fn reactivate(
        &mut self,
        user: &ContractId,
        nebula_id: &NebulaId,
    ) -> Result<(), ChainError> {
        let r = self.check_pair(user, nebula_id).and_then(|()| {
            let sub = self
                .nebulae
                .get_mut(nebula_id)
                .unwrap()
                .subscriptions
                .get_mut(user)
                .ok_or_else(|| ChainError::UnknownContract(user.clone()))?;
            sub.active = true;
            Ok(())
        });
        self.log(
            "reactivate",
            vec![user.0.clone(), nebula_id.0.clone()],
            0,
            outcome(&r),
        );
        r
    }

    fn check_pair(&self, user: &ContractId, nebula_id: &NebulaId) -> Result<(), ChainError> {
        if !self.nebulae.contains_key(nebula_id) {
            return Err(ChainError::UnknownNebula(nebula_id.clone()));
        }
        if !self.users.contains_key(user) {
            return Err(ChainError::UnknownContract(user.clone()));
        }
        Ok(())
    }

    /// Moves a node's distributed reward into its account.
    pub fn withdraw_reward(
        &mut self,
        node_id: NodeId,
        nebula_id: &NebulaId,
    ) -> Result<u64, ChainError> {
        let r = match self.nebulae.get_mut(nebula_id) {
            None => Err(ChainError::UnknownNebula(nebula_id.clone())),
            Some(n) => match n.withdrawable.remove(&node_id) {
                Some(amount) if amount > 0 => Ok(amount),
                _ => Err(ChainError::NothingToWithdraw),
            },
        };
        let amount = *r.as_ref().unwrap_or(&0);
        if r.is_ok() {
            self.credit(&AccountId::node(node_id), amount);
        }
        self.log(
            "withdraw_reward",
            vec![nebula_id.0.clone(), AccountId::node(node_id).0],
            amount,
            outcome(&r),
        );
        r
    }

    pub(crate) fn log_distribution(&mut self, nebula_id: &NebulaId, pot: u64, paid: u64) {
        self.log(
            "distribute",
            vec![nebula_id.0.clone(), format!("pot:{pot}")],
            paid,
            "ok".into(),
        );
    }

    pub fn dump_txs(&self) -> String {
        let mut out = String::new();
        for tx in &self.tx_log {
            writeln!(out, "{}", tx.to_line()).unwrap();
        }
        out
    }
}

/// Writes one score register to every chain, or to none: the caller must be
/// a consul on all of them.
pub fn write_scores_all(
    chains: &mut [TargetChain],
    consul: NodeId,
    scores: &[GravityScore],
) -> Result<(), ChainError> {
    if let Some(err) = chains.iter().find_map(|c| c.check_consul(consul).err()) {
        for chain in chains.iter_mut() {
            chain.log(
                "write_scores",
                vec![AccountId::node(consul).0],
                0,
                format!("err({err})"),
            );
        }
        return Err(err);
    }
    for chain in chains.iter_mut() {
        chain.write_scores(consul, scores)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;

    const MIN: u64 = 100;

    fn config() -> ChainConfig {
        ChainConfig {
            id: ChainId::new("alpha"),
            supply: 1_000_000,
            min_deposit: MIN,
            lock_period: 365,
            registration_fee: 1,
            freshness_window: 2,
        }
    }

    fn key(i: u32) -> KeyPair {
        KeyPair::from_seed([i as u8 + 1; 32])
    }

    fn chain_with_nodes(n: u32) -> TargetChain {
        let mut allocations: Vec<(AccountId, u64)> = (0..n)
            .map(|i| (AccountId::node(NodeId(i)), 10_000))
            .collect();
        allocations.push((AccountId::new("owner"), 100));
        let mut chain = TargetChain::genesis(config(), &allocations).unwrap();
        for i in 0..n {
            chain
                .register_node(NodeId(i), key(i).public_key(), MIN)
                .unwrap();
        }
        chain
    }

    fn params(n: usize, k: usize) -> NebulaParams {
        NebulaParams {
            nebula_id: NebulaId::new("neb"),
            feed_id: FeedId::new("feed"),
            n,
            k,
            min_score: 50.0,
            price_per_delivery: 1,
            owner: AccountId::new("owner"),
        }
    }

    /// Eleven scored oracles, `N = 11`, `K = 8`.
    fn nebula_chain() -> TargetChain {
        let mut chain = chain_with_nodes(11);
        chain.set_consuls(&[NodeId(0)]);
        let scores: Vec<GravityScore> = (0..11)
            .map(|i| GravityScore {
                node_id: NodeId(i),
                score: 100.0,
            })
            .collect();
        chain.write_scores(NodeId(0), &scores).unwrap();
        chain.create_nebula(params(11, 8)).unwrap();
        for i in 0..11 {
            chain
                .admit_oracle(&NebulaId::new("neb"), NodeId(i))
                .unwrap();
        }
        chain
    }

    fn sign_all(
        chain: &TargetChain,
        digest: Digest,
        ts: Tick,
        round: Round,
        who: &[u32],
    ) -> Vec<Proof> {
        let nebula = chain.nebula(&NebulaId::new("neb")).unwrap();
        let payload = signing_payload(
            &digest,
            ts,
            &nebula.params.feed_id,
            &nebula.params.nebula_id,
            round,
        );
        who.iter().map(|i| key(*i).sign(&payload)).collect()
    }

    fn leader_key(chain: &TargetChain) -> PublicKey {
        chain
            .nebula(&NebulaId::new("neb"))
            .unwrap()
            .expected_leader(chain.height())
            .unwrap()
            .key
    }

    #[test]
    fn registration_checks_deposit() {
        let mut chain = chain_with_nodes(0);
        chain
            .transfer(&AccountId::reserve(), &AccountId::node(NodeId(1)), 10_000)
            .unwrap();
        assert_eq!(
            chain.register_node(NodeId(1), key(1).public_key(), MIN - 1),
            Err(ChainError::InsufficientDeposit {
                offered: MIN - 1,
                minimum: MIN
            })
        );
        let reg = chain
            .register_node(NodeId(1), key(1).public_key(), MIN)
            .unwrap();
        assert!(reg.active);
        assert_eq!(reg.release_height, 365);
        assert_eq!(chain.balance(&AccountId::node(NodeId(1))), 10_000 - MIN - 1);
        assert_eq!(chain.balance(&AccountId::treasury()), 1);
        assert_eq!(
            chain.register_node(NodeId(1), key(1).public_key(), MIN),
            Err(ChainError::AlreadyRegistered(NodeId(1)))
        );
        assert!(chain.conservation().holds());
    }

    #[test]
    fn large_deposit_has_no_score_effect() {
        let mut chain = chain_with_nodes(0);
        chain
            .transfer(&AccountId::reserve(), &AccountId::node(NodeId(1)), 10_000)
            .unwrap();
        chain
            .register_node(NodeId(1), key(1).public_key(), 10 * MIN)
            .unwrap();
        assert!(chain.system.is_active(NodeId(1)));
        assert_eq!(chain.system.score_of(NodeId(1)), 0.0);
    }

    #[test]
    fn deposit_release_depends_on_score_at_exit() {
        let mut chain = chain_with_nodes(2);
        chain.set_consuls(&[NodeId(0)]);
        chain
            .write_scores(
                NodeId(0),
                &[GravityScore {
                    node_id: NodeId(1),
                    score: 40.0,
                }],
            )
            .unwrap();
        chain.advance_to(100);
        let zero = chain.deactivate_node(NodeId(0)).unwrap();
        assert_eq!(zero.release_height, 100 + 365);
        let scored = chain.deactivate_node(NodeId(1)).unwrap();
        assert_eq!(scored.release_height, 365);

        chain.advance_to(364);
        assert_eq!(
            chain.withdraw_deposit(NodeId(1)),
            Err(ChainError::Locked {
                release_height: 365
            })
        );
        chain.advance_to(365);
        assert_eq!(chain.withdraw_deposit(NodeId(1)), Ok(MIN));
        assert_eq!(
            chain.withdraw_deposit(NodeId(0)),
            Err(ChainError::Locked {
                release_height: 465
            })
        );
        assert_eq!(
            chain.deactivate_node(NodeId(5)),
            Err(ChainError::NotRegistered(NodeId(5)))
        );
        assert!(chain.conservation().holds());
    }

    #[test]
    fn nebula_creation_validates_and_charges() {
        let mut chain = chain_with_nodes(1);
        assert!(matches!(
            chain.create_nebula(params(11, 12)),
            Err(ChainError::BadParams(_))
        ));
        let mut broke = params(11, 8);
        broke.owner = AccountId::new("nobody");
        assert_eq!(
            chain.create_nebula(broke),
            Err(ChainError::FeeUnpaid(AccountId::new("nobody")))
        );
        chain.create_nebula(params(11, 8)).unwrap();
        assert_eq!(chain.balance(&AccountId::new("owner")), 99);
        assert!(chain
            .system
            .feed_registry
            .contains_key(&NebulaId::new("neb")));
        // Unscored node is below the nebula threshold.
        assert!(matches!(
            chain.admit_oracle(&NebulaId::new("neb"), NodeId(0)),
            Err(ChainError::NotAdmitted { .. })
        ));
    }

    #[test]
    fn pulse_needs_k_valid_signatures() {
        let mut chain = nebula_chain();
        chain.advance_to(5);
        let digest = crypto::value_digest(&DataValue::Int(42));
        let leader = leader_key(&chain);

        let seven = sign_all(&chain, digest, 5, 0, &[0, 1, 2, 3, 4, 5, 6]);
        assert_eq!(
            chain.pulse_tx(&NebulaId::new("neb"), 0, digest, 5, leader, &seven),
            Err(PulseReject::InsufficientSignatures)
        );

        // Duplicates and outsiders don't count.
        let mut padded = seven.clone();
        padded.push(seven[0]);
        padded.push(KeyPair::from_seed([200; 32]).sign(b"x"));
        assert_eq!(
            chain.pulse_tx(&NebulaId::new("neb"), 0, digest, 5, leader, &padded),
            Err(PulseReject::InsufficientSignatures)
        );

        let eight = sign_all(&chain, digest, 5, 0, &[0, 1, 2, 3, 4, 5, 6, 7]);
        let accepted = chain
            .pulse_tx(&NebulaId::new("neb"), 0, digest, 5, leader, &eight)
            .unwrap();
        assert_eq!(accepted.valid_signers.len(), 8);
        assert_eq!(accepted.leader, NodeId(5));
        assert_eq!(
            chain.pulse_tx(&NebulaId::new("neb"), 0, digest, 5, leader, &eight),
            Err(PulseReject::DuplicateRound)
        );
    }

    #[test]
    fn pulse_checks_leader_and_freshness() {
        let mut chain = nebula_chain();
        chain.advance_to(5);
        let digest = crypto::value_digest(&DataValue::Int(42));
        let all: Vec<u32> = (0..11).collect();
        let sigs = sign_all(&chain, digest, 5, 0, &all);
        let wrong = key(0).public_key();
        assert_eq!(
            chain.pulse_tx(&NebulaId::new("neb"), 0, digest, 5, wrong, &sigs),
            Err(PulseReject::WrongLeader)
        );
        chain.advance_to(8);
        let leader = leader_key(&chain);
        assert_eq!(
            chain.pulse_tx(&NebulaId::new("neb"), 0, digest, 5, leader, &sigs),
            Err(PulseReject::StaleTimestamp)
        );
        // Signatures over another timestamp do not verify for this one.
        assert_eq!(
            chain.pulse_tx(&NebulaId::new("neb"), 0, digest, 7, leader, &sigs),
            Err(PulseReject::InsufficientSignatures)
        );
    }

    fn subscribed_chain(mode: PaymentMode, kind: ContractKind) -> TargetChain {
        let mut chain = nebula_chain();
        let user = ContractId::new("app");
        chain
            .transfer(&AccountId::reserve(), &AccountId::user(&user), 10)
            .unwrap();
        chain.deploy_user_contract(user.clone(), kind);
        chain
            .subscribe(&user, &NebulaId::new("neb"), "on_data", mode)
            .unwrap();
        chain
    }

    fn accept_round(chain: &mut TargetChain, round: Round, value: i64) {
        let h = chain.height() + 1;
        chain.advance_to(h);
        let digest = crypto::value_digest(&DataValue::Int(value));
        let all: Vec<u32> = (0..11).collect();
        let sigs = sign_all(chain, digest, h, round, &all);
        let leader = leader_key(chain);
        chain
            .pulse_tx(&NebulaId::new("neb"), round, digest, h, leader, &sigs)
            .unwrap();
    }

    #[test]
    fn deposit_mode_delivery_bookkeeping() {
        let mut chain = subscribed_chain(PaymentMode::Deposit, ContractKind::Data);
        let (user, neb) = (ContractId::new("app"), NebulaId::new("neb"));
        chain.deposit(&user, &neb, 10).unwrap();
        accept_round(&mut chain, 0, 42);
        let report = chain
            .send_data_tx(&neb, 0, &DataValue::Int(42), std::slice::from_ref(&user))
            .unwrap();
        assert_eq!(report.delivered(), 1);
        let nebula = chain.nebula(&neb).unwrap();
        assert_eq!(nebula.subscriptions[&user].balance, 9);
        assert_eq!(nebula.undistributed, 1);
        let received = &chain.user(&user).unwrap().received_log;
        assert_eq!(received[0].value, Some(DataValue::Int(42)));

        let again = chain
            .send_data_tx(&neb, 0, &DataValue::Int(42), std::slice::from_ref(&user))
            .unwrap();
        assert_eq!(again.outcomes[0].1, Err(DeliveryError::AlreadyDelivered));
        assert!(chain.conservation().holds());
    }

    #[test]
    fn tampered_value_is_blocked_without_charge() {
        let mut chain = subscribed_chain(PaymentMode::Deposit, ContractKind::Data);
        let (user, neb) = (ContractId::new("app"), NebulaId::new("neb"));
        chain.deposit(&user, &neb, 10).unwrap();
        accept_round(&mut chain, 0, 42);
        let report = chain
            .send_data_tx(&neb, 0, &DataValue::Int(43), std::slice::from_ref(&user))
            .unwrap();
        assert_eq!(report.outcomes[0].1, Err(DeliveryError::HashMismatch));
        assert!(chain.user(&user).unwrap().received_log.is_empty());
        assert_eq!(chain.nebula(&neb).unwrap().subscriptions[&user].balance, 10);
        assert_eq!(
            chain.send_data_tx(&neb, 9, &DataValue::Int(42), &[user]),
            Err(ChainError::UnknownRound(9))
        );
    }

    #[test]
    fn per_call_suspends_on_failed_payment() {
        let mut chain = subscribed_chain(PaymentMode::PerCall, ContractKind::Data);
        let (user, neb) = (ContractId::new("app"), NebulaId::new("neb"));
        chain
            .transfer(&AccountId::user(&user), &AccountId::reserve(), 10)
            .unwrap();
        accept_round(&mut chain, 0, 1);
        let report = chain
            .send_data_tx(&neb, 0, &DataValue::Int(1), std::slice::from_ref(&user))
            .unwrap();
        assert_eq!(report.outcomes[0].1, Err(DeliveryError::PaymentFailed));
        assert!(!chain.nebula(&neb).unwrap().subscriptions[&user].active);

        accept_round(&mut chain, 1, 1);
        let report = chain
            .send_data_tx(&neb, 1, &DataValue::Int(1), std::slice::from_ref(&user))
            .unwrap();
        assert_eq!(report.outcomes[0].1, Err(DeliveryError::Suspended));

        chain
            .transfer(&AccountId::reserve(), &AccountId::user(&user), 3)
            .unwrap();
        chain.reactivate(&user, &neb).unwrap();
        accept_round(&mut chain, 2, 1);
        let report = chain
            .send_data_tx(&neb, 2, &DataValue::Int(1), std::slice::from_ref(&user))
            .unwrap();
        assert_eq!(report.delivered(), 1);
        assert_eq!(chain.balance(&AccountId::user(&user)), 2);
        assert!(chain.conservation().holds());
    }

    #[test]
    fn triggers_receive_no_value() {
        let mut chain = subscribed_chain(PaymentMode::PerCall, ContractKind::Trigger);
        let user = ContractId::new("app");
        accept_round(&mut chain, 0, 1);
        chain
            .send_data_tx(
                &NebulaId::new("neb"),
                0,
                &DataValue::Int(1),
                std::slice::from_ref(&user),
            )
            .unwrap();
        let log = &chain.user(&user).unwrap().received_log;
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].value, None);
    }

    #[test]
    fn unsubscribed_and_unknown_recipients() {
        let mut chain = subscribed_chain(PaymentMode::PerCall, ContractKind::Data);
        chain.deploy_user_contract(ContractId::new("other"), ContractKind::Data);
        accept_round(&mut chain, 0, 1);
        let report = chain
            .send_data_tx(
                &NebulaId::new("neb"),
                0,
                &DataValue::Int(1),
                &[ContractId::new("other"), ContractId::new("ghost")],
            )
            .unwrap();
        assert_eq!(report.outcomes[0].1, Err(DeliveryError::NotSubscribed));
        assert_eq!(report.outcomes[1].1, Err(DeliveryError::UnknownContract));
        assert_eq!(
            chain.subscribe(
                &ContractId::new("other"),
                &NebulaId::new("nope"),
                "m",
                PaymentMode::Deposit
            ),
            Err(ChainError::UnknownNebula(NebulaId::new("nope")))
        );
    }

    #[test]
    fn score_writes_need_a_consul_and_stay_in_step() {
        let mut chains = vec![chain_with_nodes(3), chain_with_nodes(3)];
        for c in &mut chains {
            c.set_consuls(&[NodeId(0)]);
        }
        let scores = vec![GravityScore {
            node_id: NodeId(2),
            score: 70.0,
        }];
        write_scores_all(&mut chains, NodeId(0), &scores).unwrap();
        assert_eq!(
            chains[0].system.score_register,
            chains[1].system.score_register
        );
        assert_eq!(chains[1].system.score_of(NodeId(2)), 70.0);
        assert_eq!(
            write_scores_all(&mut chains, NodeId(1), &[]),
            Err(ChainError::NotConsul(NodeId(1)))
        );
        assert_eq!(chains[0].system.score_of(NodeId(2)), 70.0);
    }

    #[test]
    fn tx_log_lines_are_stable() {
        let chain = chain_with_nodes(1);
        let lines = chain.dump_txs();
        let mut it = lines.lines();
        assert_eq!(
            it.next(),
            Some("height=0 kind=genesis parties=[reserve] amount=1000000 result=ok")
        );
        assert_eq!(
            it.next(),
            Some("height=0 kind=register parties=[node:0,treasury] amount=100 result=ok")
        );
    }
}
