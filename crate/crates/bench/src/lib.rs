//! Fixtures shared by the benchmarks.

use gravity_core::crypto::{Digest, KeyPair, Proof};
use gravity_core::ledger::{ConsulSet, ConsulSigner, Ledger};
use gravity_core::NodeId;

/// Ledger with `nodes` registered authors, the first `consuls` of which
/// hold the finality seats.
pub fn ledger(nodes: u32, consuls: usize) -> (Ledger, Vec<KeyPair>) {
    let keys: Vec<KeyPair> = (0..nodes)
        .map(|i| KeyPair::from_seed([i as u8 + 1; 32]))
        .collect();
    let mut ledger = Ledger::new(consuls);
    for (i, k) in keys.iter().enumerate() {
        ledger.register_author(k.public_key(), NodeId(i as u32));
    }
    ledger.set_consuls(ConsulSet {
        members: keys
            .iter()
            .take(consuls)
            .enumerate()
            .map(|(i, k)| (NodeId(i as u32), k.public_key()))
            .collect(),
    });
    (ledger, keys)
}

/// Every consul signs.
pub struct AllSign<'a>(pub &'a [KeyPair]);

impl ConsulSigner for AllSign<'_> {
    fn sign_block(&self, consul: NodeId, block_digest: &Digest) -> Option<Proof> {
        self.0
            .get(consul.0 as usize)
            .map(|k| k.sign(block_digest.as_bytes()))
    }
}
