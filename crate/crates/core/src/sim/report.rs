//! Run report, metrics summary and the on-disk output layout.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::chain::ConservationCheck;
use crate::economy::DistributionReport;
use crate::ledger::MessageKind;
use crate::node::IncidentKind;
use crate::reputation::GravityScore;
use crate::types::{ChainId, ContractId, NebulaId, NodeId, Round, Tick};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundOutcome {
    pub nebula_id: NebulaId,
    pub round: Round,
    pub start_tick: Tick,
    pub delivered: bool,
    /// Why the round produced nothing on chain.
    pub reason: Option<String>,
    pub leader: Option<NodeId>,
    pub height: Option<u64>,
    /// Oracle set, in leader-rotation order, at the accepting height.
    pub oracle_set: Vec<NodeId>,
    pub signers: Vec<NodeId>,
    pub deliveries: usize,
    pub delivery_errors: Vec<(ContractId, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FraudEvent {
    pub tick: Tick,
    pub rater: NodeId,
    pub ratee: NodeId,
    pub nebula_id: NebulaId,
    pub round: Round,
    pub kind: IncidentKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsulRotation {
    pub tick: Tick,
    pub members: Vec<NodeId>,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleChange {
    pub tick: Tick,
    pub nebula_id: NebulaId,
    pub admitted: Vec<NodeId>,
    pub evicted: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum LifecycleEvent {
    Registered {
        tick: Tick,
        node: NodeId,
        chain: ChainId,
        sybil: bool,
    },
    RegistrationFailed {
        tick: Tick,
        node: NodeId,
        chain: ChainId,
        error: String,
    },
    Exited {
        tick: Tick,
        node: NodeId,
        chain: ChainId,
        release_height: u64,
    },
    DepositReleased {
        tick: Tick,
        node: NodeId,
        chain: ChainId,
        amount: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreSample {
    pub tick: Tick,
    pub scores: Vec<GravityScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservationSummary {
    pub chain_id: ChainId,
    pub checks: u64,
    pub failures: Vec<ConservationCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerSummary {
    pub height: u64,
    pub head_digest: String,
    /// Ticks whose block failed to gather a consul quorum.
    pub no_quorum_ticks: Vec<Tick>,
    pub messages_by_kind: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubscriptionState {
    pub contract: ContractId,
    pub nebula_id: NebulaId,
    pub active: bool,
    pub balance: u64,
    pub received: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeActivity {
    pub node: NodeId,
    pub sybil: bool,
    pub commits: u64,
    pub reveals: u64,
    pub signatures: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub rounds_scheduled: u64,
    pub rounds_delivered: u64,
    pub delivery_success_rate: f64,
    pub fraud_events: u64,
    pub excluded_nodes: Vec<NodeId>,
    pub incidents_by_kind: BTreeMap<String, u64>,
    pub total_payouts: u64,
    pub conservation_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub hash_algorithm: String,
    pub signature_scheme: String,
    pub seed: u64,
    pub ticks: u64,
    pub rounds: Vec<RoundOutcome>,
    pub final_scores: Vec<GravityScore>,
    pub score_samples: Vec<ScoreSample>,
    pub ledger: LedgerSummary,
    pub conservation: Vec<ConservationSummary>,
    pub distributions: Vec<DistributionReport>,
    pub fraud_events: Vec<FraudEvent>,
    pub consul_rotations: Vec<ConsulRotation>,
    pub oracle_changes: Vec<OracleChange>,
    pub lifecycle: Vec<LifecycleEvent>,
    pub subscriptions: Vec<SubscriptionState>,
    pub node_activity: Vec<NodeActivity>,
    pub metrics: Metrics,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub(crate) fn kind_key(kind: MessageKind) -> String {
    kind.to_string()
}

/// Text rendering of the metrics block of a `report.json` document.
pub fn metrics_text(report: &serde_json::Value) -> String {
    let m = &report["metrics"];
    let mut out = String::new();
    let line = |out: &mut String, k: &str, v: String| {
        out.push_str(&format!("{k:<24}{v}\n"));
    };
    line(&mut out, "seed", report["seed"].to_string());
    line(
        &mut out,
        "hash",
        report["hash_algorithm"].as_str().unwrap_or("").to_owned(),
    );
    line(&mut out, "ticks", report["ticks"].to_string());
    line(
        &mut out,
        "rounds scheduled",
        m["rounds_scheduled"].to_string(),
    );
    line(
        &mut out,
        "rounds delivered",
        m["rounds_delivered"].to_string(),
    );
    let rate = m["delivery_success_rate"].as_f64().unwrap_or(0.0);
    line(
        &mut out,
        "delivery success",
        format!("{:.1}%", rate * 100.0),
    );
    line(&mut out, "fraud events", m["fraud_events"].to_string());
    line(&mut out, "excluded nodes", m["excluded_nodes"].to_string());
    line(&mut out, "total payouts", m["total_payouts"].to_string());
    let pass = m["conservation_pass"].as_bool().unwrap_or(false);
    line(
        &mut out,
        "conservation",
        if pass { "pass".into() } else { "FAIL".into() },
    );
    line(
        &mut out,
        "ledger head",
        report["ledger"]["head_digest"]
            .as_str()
            .unwrap_or("")
            .to_owned(),
    );
    if let Some(incidents) = m["incidents_by_kind"].as_object() {
        for (k, v) in incidents {
            line(&mut out, &format!("incidents.{k}"), v.to_string());
        }
    }
    if let Some(scores) = report["final_scores"].as_array() {
        out.push_str("final scores:\n");
        for s in scores {
            out.push_str(&format!(
                "  node {:>4}  {:>8.3}\n",
                s["node_id"],
                s["score"].as_f64().unwrap_or(0.0)
            ));
        }
    }
    if let Some(dists) = report["distributions"].as_array() {
        out.push_str("payouts:\n");
        for d in dists {
            let paid: Vec<String> = d["payouts"]
                .as_array()
                .map(|ps| {
                    ps.iter()
                        .filter(|p| p["amount"].as_u64().unwrap_or(0) > 0)
                        .map(|p| format!("{}={}", p["node_id"], p["amount"]))
                        .collect()
                })
                .unwrap_or_default();
            out.push_str(&format!(
                "  {} period {} pot {} -> [{}] carry {}\n",
                d["nebula_id"].as_str().unwrap_or(""),
                d["period"],
                d["pot"],
                paid.join(" "),
                d["remainder"]
            ));
        }
    }
    out
}

/// Files produced by a run, keyed by path relative to the output directory.
pub struct RunOutputs {
    pub report: RunReport,
    pub ledger_log: String,
    pub chain_logs: BTreeMap<ChainId, String>,
    pub node_traces: BTreeMap<NodeId, String>,
}

impl RunOutputs {
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.report.to_json())?;
        fs::write(dir.join("ledger.log"), &self.ledger_log)?;
        for (chain, log) in &self.chain_logs {
            let d = dir.join("chains").join(chain.as_str());
            fs::create_dir_all(&d)?;
            fs::write(d.join("txs.log"), log)?;
        }
        for (node, trace) in &self.node_traces {
            let d = dir.join("nodes").join(node.to_string());
            fs::create_dir_all(&d)?;
            fs::write(d.join("trace.log"), trace)?;
        }
        Ok(())
    }
}
