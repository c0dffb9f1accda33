//! Reward distribution: each oracle's share of a nebula's revenue is its
//! activity times its normalized score, over the sum of all such impacts.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::chain::{ChainError, TargetChain};
use crate::types::{NebulaId, NodeId};

/// Distribution period in ticks, standing in for one week.
pub const DEFAULT_PERIOD: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImpactRecord {
    pub node_id: NodeId,
    /// Fraction of the period's accepted pulses carrying this node's signature.
    pub activity: f64,
    /// Gravity score divided by 100.
    pub score: f64,
    pub impact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Payout {
    pub node_id: NodeId,
    pub share: f64,
    pub amount: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport {
    pub nebula_id: NebulaId,
    pub period: u64,
    pub pot: u64,
    pub payouts: Vec<Payout>,
    /// Carried into the next period.
    pub remainder: u64,
}

impl DistributionReport {
    pub fn paid(&self) -> u64 {
        self.payouts.iter().map(|p| p.amount).sum()
    }

    pub fn to_line(&self) -> String {
        let payouts: Vec<String> = self
            .payouts
            .iter()
            .map(|p| format!("{}:{:.6}:{}", p.node_id, p.share, p.amount))
            .collect();
        format!(
            "nebula={} period={} pot={} payouts=[{}] remainder={}",
            self.nebula_id,
            self.period,
            self.pot,
            payouts.join(","),
            self.remainder
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EconomyError {
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// `activity_i = signed_i / accepted_pulses`, `impact_i = activity_i * score_i / 100`.
/// With no accepted pulses every activity is zero.
pub fn compute_impacts(
    signed: &BTreeMap<NodeId, u64>,
    accepted_pulses: u64,
    scores: &BTreeMap<NodeId, f64>,
) -> Vec<ImpactRecord> {
    let mut nodes: Vec<NodeId> = signed.keys().copied().collect();
    nodes.sort();
    nodes
        .into_iter()
        .map(|node_id| {
            let activity = if accepted_pulses == 0 {
                0.0
            } else {
                (signed[&node_id] as f64 / accepted_pulses as f64).min(1.0)
            };
            let score = scores
                .get(&node_id)
                .copied()
                .unwrap_or(0.0)
                .clamp(0.0, 100.0)
                / 100.0;
            ImpactRecord {
                node_id,
                activity,
                score,
                impact: activity * score,
            }
        })
        .collect()
}

/// Splits `pot` proportionally to impact, flooring each payout. What the
/// floors leave over is the remainder. A zero impact sum pays nothing.
pub fn split(pot: u64, impacts: &[ImpactRecord]) -> (Vec<Payout>, u64) {
    let total: f64 = impacts.iter().map(|r| r.impact).sum();
    if total <= 0.0 || pot == 0 {
        let payouts = impacts
            .iter()
            .map(|r| Payout {
                node_id: r.node_id,
                share: 0.0,
                amount: 0,
            })
            .collect();
        return (payouts, pot);
    }
    let mut payouts: Vec<Payout> = impacts
        .iter()
        .map(|r| {
            let share = r.impact / total;
            Payout {
                node_id: r.node_id,
                share,
                amount: (share * pot as f64).floor() as u64,
            }
        })
        .collect();
    // Rounding in the share quotients can push a sum of floors past the pot
    // by a unit; take it back from the largest payouts.
    let mut paid: u64 = payouts.iter().map(|p| p.amount).sum();
    while paid > pot {
        let max = payouts
            .iter_mut()
            .max_by_key(|p| p.amount)
            .expect("non-empty");
        max.amount -= 1;
        paid -= 1;
    }
    (payouts, pot - paid)
}

/// Closes the current period of one nebula: credits payouts as withdrawable,
/// keeps the remainder in the pool and resets the activity log.
pub fn distribute(
    chain: &mut TargetChain,
    nebula_id: &NebulaId,
) -> Result<DistributionReport, EconomyError> {
    let scores = chain.system.score_register.clone();
    let nebula = chain
        .nebula(nebula_id)
        .ok_or_else(|| ChainError::UnknownNebula(nebula_id.clone()))?;
    let mut signed = BTreeMap::new();
    for (key, count) in &nebula.activity_log {
        if let Some(node) = chain.system.node_by_key(key) {
            *signed.entry(node).or_insert(0) += *count;
        }
    }
    let accepted = nebula.period_pulses;
    let pot = nebula.undistributed;
    let period = nebula.period;
    let impacts = compute_impacts(&signed, accepted, &scores);
    let (payouts, remainder) = split(pot, &impacts);

    let nebula = chain.nebula_mut(nebula_id).expect("checked above");
    for p in payouts.iter().filter(|p| p.amount > 0) {
        *nebula.withdrawable.entry(p.node_id).or_insert(0) += p.amount;
    }
    nebula.undistributed = remainder;
    nebula.activity_log.clear();
    nebula.period_pulses = 0;
    nebula.period += 1;

    let report = DistributionReport {
        nebula_id: nebula_id.clone(),
        period,
        pot,
        payouts,
        remainder,
    };
    chain.log_distribution(nebula_id, pot, report.paid());
    Ok(report)
}

/// Moves a node's withdrawable reward into its chain account.
pub fn withdraw(
    chain: &mut TargetChain,
    node: NodeId,
    nebula_id: &NebulaId,
) -> Result<u64, EconomyError> {
    Ok(chain.withdraw_reward(node, nebula_id)?)
}
