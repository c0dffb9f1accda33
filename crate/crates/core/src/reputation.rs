//! Peer trust matrix, EigenTrust, and the automatic/manual scoring policies.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReputationError {
    #[error("non-finite trust value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("pre-trust vector must be non-negative and sum to 1 (sum = {0})")]
    BadPreTrust(f64),
    #[error("invalid EigenTrust parameters: {0}")]
    BadParams(&'static str),
    #[error("no convergence after {iterations} iterations (delta = {delta:e})")]
    NonConvergence {
        iterations: usize,
        delta: f64,
        last: Vec<f64>,
    },
    #[error("trust vector is all zero")]
    ZeroTrust,
    #[error("manual score must be finite")]
    NonFiniteScore,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("malformed score table line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// `s[i][j]` is node i's local trust in node j. Diagonal entries are kept
/// but ignored by normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    nodes: Vec<NodeId>,
    values: Vec<f64>,
}

impl ScoreMatrix {
    /// All-zero matrix over `nodes` (sorted and deduplicated).
    pub fn new(mut nodes: Vec<NodeId>) -> Self {
        nodes.sort_unstable();
        nodes.dedup();
        let n = nodes.len();
        Self {
            nodes,
            values: vec![0.0; n * n],
        }
    }

    /// Builds a matrix from dense rows indexed by `nodes` order, which must
    /// be strictly ascending.
    pub fn from_rows(nodes: Vec<NodeId>, rows: Vec<Vec<f64>>) -> Result<Self, ReputationError> {
        let n = nodes.len();
        if rows.len() != n {
            return Err(ReputationError::Dimension {
                expected: n,
                got: rows.len(),
            });
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ReputationError::BadParams(
                "node ids must be strictly ascending",
            ));
        }
        let mut values = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(ReputationError::Dimension {
                    expected: n,
                    got: row.len(),
                });
            }
            values.extend(row);
        }
        Ok(Self { nodes, values })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.nodes.binary_search(&id).ok()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.n();
        self.values[i * n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn get_by_id(&self, rater: NodeId, ratee: NodeId) -> Option<f64> {
        Some(self.get(self.index_of(rater)?, self.index_of(ratee)?))
    }

    pub fn set_by_id(
        &mut self,
        rater: NodeId,
        ratee: NodeId,
        v: f64,
    ) -> Result<(), ReputationError> {
        let i = self
            .index_of(rater)
            .ok_or(ReputationError::UnknownNode(rater))?;
        let j = self
            .index_of(ratee)
            .ok_or(ReputationError::UnknownNode(ratee))?;
        self.set(i, j, v);
        Ok(())
    }

    /// Plain-text table: one line per rater, the rater id followed by its n
    /// values, whitespace separated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, id) in self.nodes.iter().enumerate() {
            write!(out, "{id}").unwrap();
            for v in self.row(i) {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ReputationError> {
        let mut nodes = Vec::new();
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |reason: String| ReputationError::Parse {
                line: lineno + 1,
                reason,
            };
            let mut fields = line.split_whitespace();
            let id = fields
                .next()
                .unwrap()
                .parse::<u32>()
                .map_err(|e| parse_err(e.to_string()))?;
            let row = fields
                .map(|f| f.parse::<f64>().map_err(|e| parse_err(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            nodes.push(NodeId(id));
            rows.push(row);
        }
        Self::from_rows(nodes, rows)
    }
}

/// Row-stochastic normalized local trust `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustMatrix {
    n: usize,
    values: Vec<f64>,
}

impl TrustMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

pub fn uniform_pre_trust(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn check_pre_trust(p: &[f64], n: usize) -> Result<(), ReputationError> {
    if p.len() != n {
        return Err(ReputationError::Dimension {
            expected: n,
            got: p.len(),
        });
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(ReputationError::BadPreTrust(sum));
    }
    Ok(())
}

/// `c[i][j] = max(s[i][j], 0) / sum_j max(s[i][j], 0)` with the diagonal
/// excluded. A row with nothing positive is replaced by the pre-trust vector.
pub fn normalize_matrix(
    s: &ScoreMatrix,
    pre_trust: &[f64],
) -> Result<TrustMatrix, ReputationError> {
    let n = s.n();
    check_pre_trust(pre_trust, n)?;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let row = s.row(i);
        if let Some(col) = row.iter().position(|v| !v.is_finite()) {
            return Err(ReputationError::NonFinite { row: i, col });
        }
        let clamped = |j: usize| if i == j { 0.0 } else { row[j].max(0.0) };
        let total: f64 = (0..n).map(clamped).sum();
        let out = &mut values[i * n..(i + 1) * n];
        if total > 0.0 {
            for (j, c) in out.iter_mut().enumerate() {
                *c = clamped(j) / total;
            }
        } else {
            out.copy_from_slice(pre_trust);
        }
    }
    Ok(TrustMatrix { n, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigenTrustParams {
    /// Weight of the pre-trust vector in each step.
    pub a: f64,
    /// L2 convergence threshold.
    pub epsilon: f64,
    pub max_iters: usize,
}

impl Default for EigenTrustParams {
    fn default() -> Self {
        Self {
            a: 0.15,
            epsilon: 1e-6,
            max_iters: 1000,
        }
    }
}

impl EigenTrustParams {
    pub fn validate(&self) -> Result<(), ReputationError> {
        if !(0.0..=1.0).contains(&self.a) {
            return Err(ReputationError::BadParams("a must lie in [0, 1]"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(ReputationError::BadParams("epsilon must be positive"));
        }
        if self.max_iters == 0 {
            return Err(ReputationError::BadParams("max_iters must be positive"));
        }
        Ok(())
    }
}

/// Global trust, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustVector {
    pub t: Vec<f64>,
    pub iterations: usize,
    /// L2 distance between the last two iterates.
    pub delta: f64,
}

/// One damped step: `(1 - a) * C^T t + a * p`.
pub fn eigentrust_step(c: &TrustMatrix, a: f64, p: &[f64], t: &[f64]) -> Vec<f64> {
    let n = c.n();
    let mut next: Vec<f64> = p.iter().map(|pi| a * pi).collect();
    for (i, ti) in t.iter().enumerate() {
        if *ti == 0.0 {
            continue;
        }
        let w = (1.0 - a) * ti;
        for (j, cij) in c.row(i).iter().enumerate().take(n) {
            next[j] += w * cij;
        }
    }
    next
}

fn l2_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Power iteration from `t(0) = p` until two iterates are closer than
/// `epsilon`.
pub fn eigentrust(
    c: &TrustMatrix,
    params: &EigenTrustParams,
    p: &[f64],
) -> Result<TrustVector, ReputationError> {
    params.validate()?;
    check_pre_trust(p, c.n())?;
    let mut t = p.to_vec();
    let mut delta = f64::INFINITY;
    for k in 1..=params.max_iters {
        let next = eigentrust_step(c, params.a, p, &t);
        delta = l2_distance(&next, &t);
        t = next;
        if delta < params.epsilon {
            return Ok(TrustVector {
                t,
                iterations: k,
                delta,
            });
        }
    }
    Err(ReputationError::NonConvergence {
        iterations: params.max_iters,
        delta,
        last: t,
    })
}

/// Residual `||(1 - a) C^T t + a p - t||_2` of a candidate fixed point.
pub fn fixed_point_residual(c: &TrustMatrix, a: f64, p: &[f64], t: &[f64]) -> f64 {
    l2_distance(&eigentrust_step(c, a, p, t), t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityScore {
    pub node_id: NodeId,
    /// 0 to 100; the most trusted node scores exactly 100.
    pub score: f64,
}

pub fn to_gravity_scores(
    nodes: &[NodeId],
    t: &TrustVector,
) -> Result<Vec<GravityScore>, ReputationError> {
    if nodes.len() != t.t.len() {
        return Err(ReputationError::Dimension {
            expected: nodes.len(),
            got: t.t.len(),
        });
    }
    let max = t.t.iter().copied().fold(0.0_f64, f64::max);
    if max.is_nan() || max <= 0.0 {
        return Err(ReputationError::ZeroTrust);
    }
    Ok(nodes
        .iter()
        .zip(&t.t)
        .map(|(&node_id, &ti)| GravityScore {
            node_id,
            score: (100.0 * ti / max).clamp(0.0, 100.0),
        })
        .collect())
}

/// Normalize, iterate, and scale in one call with uniform pre-trust.
pub fn compute_scores(
    s: &ScoreMatrix,
    params: &EigenTrustParams,
) -> Result<Vec<GravityScore>, ReputationError> {
    if s.n() == 0 {
        return Ok(Vec::new());
    }
    let p = uniform_pre_trust(s.n());
    let c = normalize_matrix(s, &p)?;
    let t = eigentrust(&c, params, &p)?;
    to_gravity_scores(s.nodes(), &t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Automatic,
    Manual,
}

/// Something a rater noticed about a peer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    /// Peer's revealed data diverged from the aggregate beyond tolerance, or
    /// its reveal did not open its commitment.
    Divergence,
    /// Peer stopped processing the feeds it is assigned to.
    StoppedProcessing,
    /// Peer stopped answering on the internal ledger.
    Unresponsive,
    /// Peer was expected in a round and did not commit.
    MissedRound,
    /// Peer completed an epoch without incident.
    StableEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub build_up_step: f64,
    pub build_up_cap: f64,
    /// Consecutive missed rounds before a peer counts as stopped.
    pub missed_round_limit: u32,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            build_up_step: 1.0,
            build_up_cap: 10.0,
            missed_round_limit: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairPolicy {
    pub mode: ScoreMode,
    pub value: f64,
    pub missed_rounds: u32,
    /// Set by any zeroing event; blocks automatic build-up until a manual
    /// score is given.
    pub shut_down: bool,
    pub stable_epochs: u32,
}

impl Default for PairPolicy {
    fn default() -> Self {
        Self {
            mode: ScoreMode::Automatic,
            value: 0.0,
            missed_rounds: 0,
            shut_down: false,
            stable_epochs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreChange {
    pub rater: NodeId,
    pub ratee: NodeId,
    pub value: f64,
    pub mode: ScoreMode,
}

#[derive(Debug, Clone, Default)]
pub struct ScoringPolicyState {
    params: PolicyParams,
    pairs: BTreeMap<(NodeId, NodeId), PairPolicy>,
}

impl ScoringPolicyState {
    pub fn new(params: PolicyParams) -> Self {
        Self {
            params,
            pairs: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn pair(&self, rater: NodeId, ratee: NodeId) -> Option<&PairPolicy> {
        self.pairs.get(&(rater, ratee))
    }

    pub fn value(&self, rater: NodeId, ratee: NodeId) -> f64 {
        self.pair(rater, ratee).map_or(0.0, |p| p.value)
    }

    pub fn mode(&self, rater: NodeId, ratee: NodeId) -> ScoreMode {
        self.pair(rater, ratee)
            .map_or(ScoreMode::Automatic, |p| p.mode)
    }

    /// Sets an automatic entry directly, e.g. for trust established before
    /// the run starts.
    pub fn seed(&mut self, rater: NodeId, ratee: NodeId, value: f64) {
        let pair = self.pairs.entry((rater, ratee)).or_default();
        pair.value = value;
    }

    /// Applies one observation. Returns the new entry when it changed.
    pub fn observe(
        &mut self,
        rater: NodeId,
        ratee: NodeId,
        obs: Observation,
    ) -> Option<ScoreChange> {
        if rater == ratee {
            return None;
        }
        let params = self.params;
        let pair = self.pairs.entry((rater, ratee)).or_default();
        if pair.mode == ScoreMode::Manual {
            return None;
        }
        let before = pair.value;
        match obs {
            Observation::Divergence
            | Observation::StoppedProcessing
            | Observation::Unresponsive => {
                pair.value = 0.0;
                pair.shut_down = true;
            }
            Observation::MissedRound => {
                pair.missed_rounds += 1;
                if pair.missed_rounds >= params.missed_round_limit {
                    pair.value = 0.0;
                    pair.shut_down = true;
                }
            }
            Observation::StableEpoch => {
                pair.missed_rounds = 0;
                if !pair.shut_down {
                    pair.stable_epochs += 1;
                    pair.value = (pair.value + params.build_up_step).min(params.build_up_cap);
                }
            }
        }
        (pair.value != before).then_some(ScoreChange {
            rater,
            ratee,
            value: pair.value,
            mode: ScoreMode::Automatic,
        })
    }

    /// Applies a batch of `(rater, ratee, observation)` events in order and
    /// returns the final value of every entry that changed.
    pub fn apply_automatic_policy(
        &mut self,
        observations: &[(NodeId, NodeId, Observation)],
    ) -> Vec<ScoreChange> {
        let mut changed = BTreeMap::new();
        for &(rater, ratee, obs) in observations {
            if let Some(change) = self.observe(rater, ratee, obs) {
                changed.insert((rater, ratee), change);
            }
        }
        changed.into_values().collect()
    }

    /// Operator override. From now on automatic observations by `rater`
    /// about `ratee` are ignored.
    pub fn apply_manual_score(
        &mut self,
        rater: NodeId,
        ratee: NodeId,
        value: f64,
    ) -> Result<ScoreChange, ReputationError> {
        if !value.is_finite() {
            return Err(ReputationError::NonFiniteScore);
        }
        let pair = self.pairs.entry((rater, ratee)).or_default();
        pair.mode = ScoreMode::Manual;
        pair.value = value;
        pair.shut_down = false;
        Ok(ScoreChange {
            rater,
            ratee,
            value,
            mode: ScoreMode::Manual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn ids(n: u32) -> Vec<NodeId> {
        (0..n).map(NodeId).collect()
    }

    fn matrix(rows: Vec<Vec<f64>>) -> ScoreMatrix {
        ScoreMatrix::from_rows(ids(rows.len() as u32), rows).unwrap()
    }

    /// Independent reference: normalize with explicit loops, then run a
    /// fixed number of damped power steps with no early exit.
    #[allow(clippy::needless_range_loop)]
    fn oracle(s: &[Vec<f64>], a: f64, steps: usize) -> Vec<f64> {
        let n = s.len();
        let p = vec![1.0 / n as f64; n];
        let mut c = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut total = 0.0;
            for j in 0..n {
                if i != j && s[i][j] > 0.0 {
                    total += s[i][j];
                }
            }
            for j in 0..n {
                c[i][j] = if total == 0.0 {
                    p[j]
                } else if i != j && s[i][j] > 0.0 {
                    s[i][j] / total
                } else {
                    0.0
                };
            }
        }
        let mut t = p.clone();
        for _ in 0..steps {
            let mut next = vec![0.0; n];
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += c[i][j] * t[i];
                }
                next[j] = (1.0 - a) * acc + a * p[j];
            }
            t = next;
        }
        t
    }

    #[test]
    fn normalize_clamps_negatives_and_ignores_diagonal() {
        let s = matrix(vec![
            vec![7.0, 2.0, -1.0, 2.0],
            vec![1.0, 0.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0, 0.0],
        ]);
        let c = normalize_matrix(&s, &uniform_pre_trust(4)).unwrap();
        assert_eq!(c.row(0), &[0.0, 0.5, 0.0, 0.5]);
    }

    #[test]
    fn degenerate_row_becomes_pre_trust() {
        let s = matrix(vec![
            vec![0.0, -3.0, 0.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ]);
        let p = vec![0.2, 0.3, 0.5];
        let c = normalize_matrix(&s, &p).unwrap();
        assert_eq!(c.row(0), p.as_slice());
    }

    #[test]
    fn all_ones_rows_split_evenly() {
        let s = matrix(vec![vec![1.0; 3]; 3]);
        let c = normalize_matrix(&s, &uniform_pre_trust(3)).unwrap();
        assert_eq!(c.row(0), &[0.0, 0.5, 0.5]);
        assert_eq!(c.row(1), &[0.5, 0.0, 0.5]);
        assert_eq!(c.row(2), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn non_finite_entries_rejected() {
        let s = matrix(vec![vec![0.0, f64::NAN], vec![1.0, 0.0]]);
        assert_eq!(
            normalize_matrix(&s, &uniform_pre_trust(2)),
            Err(ReputationError::NonFinite { row: 0, col: 1 })
        );
    }

    #[test]
    fn symmetric_trust_is_uniform() {
        let s = matrix(vec![vec![1.0; 3]; 3]);
        for a in [0.0, 0.15, 0.5, 1.0] {
            let p = uniform_pre_trust(3);
            let c = normalize_matrix(&s, &p).unwrap();
            let params = EigenTrustParams {
                a,
                ..Default::default()
            };
            let t = eigentrust(&c, &params, &p).unwrap();
            for ti in &t.t {
                assert!((ti - 1.0 / 3.0).abs() < 1e-12);
            }
            let scores = to_gravity_scores(s.nodes(), &t).unwrap();
            assert!(scores.iter().all(|g| (g.score - 100.0).abs() < 1e-9));
        }
    }

    #[test]
    fn untrusted_node_gets_zero_without_damping() {
        let s = matrix(vec![
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0],
        ]);
        let p = uniform_pre_trust(3);
        let c = normalize_matrix(&s, &p).unwrap();
        let params = EigenTrustParams {
            a: 0.0,
            ..Default::default()
        };
        let t = eigentrust(&c, &params, &p).unwrap();
        assert_eq!(t.t[2], 0.0);
        let scores = to_gravity_scores(s.nodes(), &t).unwrap();
        assert_eq!(scores[2].score, 0.0);
        assert_eq!(scores[0].score, 100.0);
    }

    #[test]
    fn random_5x5_matches_power_iteration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| {
                (0..5)
                    .map(|_| (rng.next_u32() % 1000) as f64 / 100.0)
                    .collect()
            })
            .collect();
        let expected = oracle(&rows, 0.15, 10_000);
        let s = matrix(rows);
        let p = uniform_pre_trust(5);
        let c = normalize_matrix(&s, &p).unwrap();
        let params = EigenTrustParams {
            a: 0.15,
            epsilon: 1e-10,
            max_iters: 1000,
        };
        let t = eigentrust(&c, &params, &p).unwrap();
        for (got, want) in t.t.iter().zip(&expected) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn non_convergence_reports_last_iterate() {
        // A two-cycle never settles without damping.
        let s = matrix(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let p = vec![1.0, 0.0];
        let c = normalize_matrix(&s, &p).unwrap();
        let params = EigenTrustParams {
            a: 0.0,
            epsilon: 1e-6,
            max_iters: 7,
        };
        match eigentrust(&c, &params, &p) {
            Err(ReputationError::NonConvergence {
                iterations,
                delta,
                last,
            }) => {
                assert_eq!(iterations, 7);
                assert!(delta > 1.0);
                assert_eq!(last.len(), 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn gravity_scores_scale_by_max() {
        let t = TrustVector {
            t: vec![0.5, 0.25, 0.25],
            iterations: 1,
            delta: 0.0,
        };
        let scores: Vec<f64> = to_gravity_scores(&ids(3), &t)
            .unwrap()
            .iter()
            .map(|g| g.score)
            .collect();
        assert_eq!(scores, vec![100.0, 50.0, 50.0]);
        let zero = TrustVector {
            t: vec![0.0; 3],
            iterations: 1,
            delta: 0.0,
        };
        assert_eq!(
            to_gravity_scores(&ids(3), &zero),
            Err(ReputationError::ZeroTrust)
        );
    }

    #[test]
    fn text_table_round_trips() {
        let s = ScoreMatrix::from_rows(
            vec![NodeId(2), NodeId(5)],
            vec![vec![0.0, 1.5], vec![0.1, 0.0]],
        )
        .unwrap();
        let text = s.to_text();
        assert_eq!(text, "2 0 1.5\n5 0.1 0\n");
        assert_eq!(ScoreMatrix::from_text(&text).unwrap(), s);
        assert!(ScoreMatrix::from_text("1 0 x\n").is_err());
        assert!(ScoreMatrix::from_text("1 0 1\n").is_err());
    }

    #[test]
    fn build_up_accumulates_and_caps() {
        let (a, b) = (NodeId(0), NodeId(1));
        let mut state = ScoringPolicyState::new(PolicyParams::default());
        for _ in 0..3 {
            state.observe(a, b, Observation::StableEpoch);
        }
        assert_eq!(state.value(a, b), 3.0);
        for _ in 0..12 {
            state.observe(a, b, Observation::StableEpoch);
        }
        assert_eq!(state.value(a, b), 10.0);
        state.observe(a, b, Observation::Divergence);
        assert_eq!(state.value(a, b), 0.0);
        state.observe(a, b, Observation::StableEpoch);
        assert_eq!(
            state.value(a, b),
            0.0,
            "shut-down pair waits for a manual score"
        );
    }

    #[test]
    fn missed_rounds_zero_after_limit() {
        let (a, b) = (NodeId(0), NodeId(1));
        let mut state = ScoringPolicyState::new(PolicyParams::default());
        state.seed(a, b, 10.0);
        state.observe(a, b, Observation::MissedRound);
        state.observe(a, b, Observation::MissedRound);
        assert_eq!(state.value(a, b), 10.0);
        state.observe(a, b, Observation::StableEpoch);
        state.observe(a, b, Observation::MissedRound);
        state.observe(a, b, Observation::MissedRound);
        assert_eq!(state.value(a, b), 10.0, "stable epoch resets the streak");
        state.observe(a, b, Observation::MissedRound);
        assert_eq!(state.value(a, b), 0.0);
    }

    #[test]
    fn manual_score_stops_automatic_updates_from_that_rater_only() {
        let (a, b, c) = (NodeId(0), NodeId(1), NodeId(2));
        let mut state = ScoringPolicyState::new(PolicyParams::default());
        state.apply_manual_score(a, b, 0.0).unwrap();
        state.observe(a, b, Observation::StableEpoch);
        assert_eq!(state.value(a, b), 0.0);
        state.observe(c, b, Observation::StableEpoch);
        assert_eq!(state.value(c, b), 1.0);

        let change = state.apply_manual_score(c, a, 50.0).unwrap();
        assert_eq!(change.mode, ScoreMode::Manual);
        assert_eq!(state.value(c, a), 50.0);
        assert!(state.apply_manual_score(c, a, f64::INFINITY).is_err());
    }

    #[test]
    fn batch_reports_final_values() {
        let (a, b) = (NodeId(0), NodeId(1));
        let mut state = ScoringPolicyState::new(PolicyParams::default());
        let changes = state.apply_automatic_policy(&[
            (a, b, Observation::StableEpoch),
            (a, b, Observation::StableEpoch),
            (a, a, Observation::StableEpoch),
        ]);
        assert_eq!(changes.len(), 1);
        assert_eq!(changes[0].value, 2.0);
    }

    fn arb_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
        arb_matrix_from(2)
    }

    fn arb_matrix_from(min: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        (min..8).prop_flat_map(|n| {
            proptest::collection::vec(proptest::collection::vec(-5.0f64..10.0, n), n)
        })
    }

    fn arb_observation() -> impl Strategy<Value = Observation> {
        prop_oneof![
            Just(Observation::Divergence),
            Just(Observation::StoppedProcessing),
            Just(Observation::Unresponsive),
            Just(Observation::MissedRound),
            Just(Observation::StableEpoch),
        ]
    }

    proptest! {
        #[test]
        fn rows_are_stochastic(rows in arb_matrix()) {
            let n = rows.len();
            let c = normalize_matrix(&matrix(rows), &uniform_pre_trust(n)).unwrap();
            for i in 0..n {
                let sum: f64 = c.row(i).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn converged_vector_is_a_fixed_point(rows in arb_matrix(), a in 0.05f64..1.0) {
            let n = rows.len();
            let p = uniform_pre_trust(n);
            let c = normalize_matrix(&matrix(rows), &p).unwrap();
            let params = EigenTrustParams { a, epsilon: 1e-9, max_iters: 10_000 };
            let t = eigentrust(&c, &params, &p).unwrap();
            prop_assert!((t.t.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(t.t.iter().all(|x| *x >= 0.0));
            prop_assert!(fixed_point_residual(&c, a, &p, &t.t) < 2.0 * params.epsilon);
            prop_assert!(t.iterations <= params.max_iters);
        }

        #[test]
        fn scaling_a_row_changes_nothing(rows in arb_matrix(), row in 0usize..8, lambda in 0.01f64..100.0) {
            let n = rows.len();
            let row = row % n;
            let mut scaled = rows.clone();
            for v in &mut scaled[row] {
                *v *= lambda;
            }
            let p = uniform_pre_trust(n);
            let c1 = normalize_matrix(&matrix(rows), &p).unwrap();
            let c2 = normalize_matrix(&matrix(scaled), &p).unwrap();
            for j in 0..n {
                prop_assert!((c1.get(row, j) - c2.get(row, j)).abs() < 1e-12);
            }
            let params = EigenTrustParams { a: 0.15, epsilon: 1e-12, max_iters: 10_000 };
            let t1 = eigentrust(&c1, &params, &p).unwrap();
            let t2 = eigentrust(&c2, &params, &p).unwrap();
            for (x, y) in t1.t.iter().zip(&t2.t) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn zero_column_means_zero_score(rows in arb_matrix_from(3), col in 0usize..8) {
            let n = rows.len();
            let col = col % n;
            let mut rows = rows;
            // Every row keeps at least one positive entry outside `col`, so no
            // row falls back to pre-trust and leaks mass into the column.
            for (i, row) in rows.iter_mut().enumerate() {
                row[col] = 0.0;
                let other = (0..n).find(|&j| j != i && j != col).unwrap();
                row[other] = row[other].abs() + 1.0;
            }
            let p = uniform_pre_trust(n);
            let c = normalize_matrix(&matrix(rows), &p).unwrap();
            let params = EigenTrustParams { a: 0.0, epsilon: 1e-9, max_iters: 100_000 };
            if let Ok(t) = eigentrust(&c, &params, &p) {
                prop_assert_eq!(t.t[col], 0.0);
                let scores = to_gravity_scores(&ids(n as u32), &t).unwrap();
                prop_assert_eq!(scores[col].score, 0.0);
            }
        }

        #[test]
        fn manual_entries_only_move_by_manual_calls(
            events in proptest::collection::vec((0u32..3, 0u32..3, arb_observation()), 0..60),
            manual_at in 0usize..60,
            value in -10.0f64..10.0,
        ) {
            let (a, b) = (NodeId(0), NodeId(1));
            let mut state = ScoringPolicyState::new(PolicyParams::default());
            let mut manual = false;
            for (k, (r, e, obs)) in events.iter().enumerate() {
                if k == manual_at {
                    state.apply_manual_score(a, b, value).unwrap();
                    manual = true;
                }
                state.observe(NodeId(*r), NodeId(*e), *obs);
                if manual {
                    prop_assert_eq!(state.value(a, b), value);
                    prop_assert_eq!(state.mode(a, b), ScoreMode::Manual);
                }
            }
        }
    }
}
