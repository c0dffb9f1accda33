#![allow(dead_code)]

use gravity_core::sim::{RunOutputs, Scenario};
use serde_json::{json, Value};

pub const FEED: &str = "btc_usd";
pub const NEBULA: &str = "btc_eth";
pub const CHAIN: &str = "eth";

/// Honest network of `nodes` genesis nodes on one chain, one feed with two
/// walking sources and one nebula seating `n` oracles with threshold `k`.
pub fn base(nodes: u32, n: usize, k: usize, ticks: u64) -> Value {
    let node_list: Vec<Value> = (1..=nodes)
        .map(|id| json!({ "id": id, "feeds": { FEED: ["s1", "s2"] } }))
        .collect();
    json!({
        "seed": 7,
        "ticks": ticks,
        "chains": [{ "id": CHAIN, "supply": 1_000_000, "min_deposit": 100 }],
        "nodes": node_list,
        "feeds": [{
            "feed_id": FEED,
            "scale": 2,
            "sources": [
                { "id": "s1", "script": { "random_walk": { "start": "30000.00", "step": "2.50" } } },
                { "id": "s2", "script": { "random_walk": { "start": "30010.00", "step": "2.50" } } }
            ]
        }],
        "nebulae": [{
            "id": NEBULA, "chain": CHAIN, "feed": FEED,
            "n": n, "k": k, "min_score": 30.0, "price": 1,
            "schedule": { "every": 5 }
        }],
        "subscriptions": [{ "contract": "dex", "nebula": NEBULA, "mode": "per_call", "balance": 10_000 }]
    })
}

pub fn scenario(v: Value) -> Scenario {
    Scenario::from_json(&v.to_string()).expect("test scenario is valid")
}

pub fn run(v: Value) -> RunOutputs {
    gravity_core::sim::run(scenario(v)).expect("run succeeds")
}

pub fn set_behavior(v: &mut Value, nodes: &[u32], behavior: Value) {
    let faults = v["faults"]["nodes"].as_array().cloned().unwrap_or_default();
    let mut faults = faults;
    for &id in nodes {
        faults.push(json!({ "node": id, "behavior": behavior }));
    }
    v["faults"]["nodes"] = Value::Array(faults);
}

/// A suite of scenarios covering the fault kinds, used by the run-wide
/// invariant checks.
pub fn suite() -> Vec<(&'static str, Value)> {
    let baseline = base(11, 11, 8, 60);

    let mut divergent = base(11, 11, 8, 60);
    set_behavior(
        &mut divergent,
        &[9, 10, 11],
        json!({ "divergent": 500_000 }),
    );

    let mut fraud = base(11, 11, 8, 60);
    set_behavior(&mut fraud, &[3], json!({ "fraud_reveal": 700 }));
    set_behavior(&mut fraud, &[5], json!("reveal_without_commit"));

    let mut churn = base(11, 12, 8, 80);
    churn["nodes"]
        .as_array_mut()
        .unwrap()
        .push(json!({ "id": 12, "feeds": { FEED: ["s1", "s2"] }, "join_tick": 12 }));
    churn["nodes"][1]["exit_tick"] = json!(33);
    churn["faults"] = json!({
        "nodes": [{ "node": 4, "offline": [{ "from": 20, "to": 28 }] }],
        "sybil": [{ "tick": 5, "count": 20 }],
        "sources": [{ "source": "s2", "from": 40, "to": 45, "kind": "silent" }]
    });

    let mut subs = base(7, 7, 5, 60);
    subs["subscriptions"] = json!([
        { "contract": "dex", "nebula": NEBULA, "mode": "deposit", "balance": 5, "deposit": 5 },
        { "contract": "lender", "nebula": NEBULA, "mode": "per_call", "balance": 3 }
    ]);

    vec![
        ("baseline", baseline),
        ("divergent", divergent),
        ("fraud", fraud),
        ("churn", churn),
        ("subscriptions", subs),
    ]
}
