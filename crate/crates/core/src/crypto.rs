//! Hashing, signatures and the commit-reveal primitives.
//!
//! Everything here is a pure function of its inputs. Nodes and the simulated
//! on-chain contracts call the same functions over the same canonical bytes,
//! so a digest computed off-chain always matches the one checked on-chain.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::types::{DataValue, FeedId, Round};

/// Name of the hash function fixed for this build; echoed in run reports.
pub const HASH_ALGORITHM: &str = "sha-256";
/// Name of the signature scheme fixed for this build; echoed in run reports.
pub const SIGNATURE_SCHEME: &str = "ed25519";

pub const DIGEST_LEN: usize = 32;
pub const SALT_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("salt must be {SALT_LEN} bytes, got {0}")]
    SaltLength(usize),
    #[error("reveal does not belong to this commitment: {0} differs")]
    RevealMismatch(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("canonical record truncated at byte {0}")]
    Truncated(usize),
    #[error("field has length {got}, expected {expected}")]
    FieldLength { expected: usize, got: usize },
    #[error("field is not valid UTF-8")]
    Utf8,
    #[error("{0} trailing bytes after last field")]
    Trailing(usize),
    #[error("unknown tag {0}")]
    UnknownTag(u64),
}

/// 32-byte hash output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Digest(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex chars"))
    }
}

pub fn hash(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// Builder for the canonical encoding: every field is a 4-byte big-endian
/// length followed by its raw bytes, in declared order. Integers are 8-byte
/// big-endian two's complement, strings UTF-8.
#[derive(Debug, Default, Clone)]
pub struct Canonical {
    buf: Vec<u8>,
}

impl Canonical {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(mut self, field: &[u8]) -> Self {
        let len = u32::try_from(field.len()).expect("canonical field exceeds u32::MAX bytes");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(field);
        self
    }

    pub fn u64(self, v: u64) -> Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn i64(self, v: i64) -> Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn str(self, s: &str) -> Self {
        self.bytes(s.as_bytes())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn digest(self) -> Digest {
        hash(&self.buf)
    }
}

/// Reads back fields written by [`Canonical`].
pub struct CanonicalReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> CanonicalReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let header = self
            .buf
            .get(self.pos..self.pos + 4)
            .ok_or(DecodeError::Truncated(self.pos))?;
        let len = u32::from_be_bytes(header.try_into().unwrap()) as usize;
        let start = self.pos + 4;
        let field = self
            .buf
            .get(start..start + len)
            .ok_or(DecodeError::Truncated(start))?;
        self.pos = start + len;
        Ok(field)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let field = self.bytes()?;
        field.try_into().map_err(|_| DecodeError::FieldLength {
            expected: N,
            got: field.len(),
        })
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_be_bytes(self.array()?))
    }

    pub fn string(&mut self) -> Result<String, DecodeError> {
        let field = self.bytes()?;
        String::from_utf8(field.to_vec()).map_err(|_| DecodeError::Utf8)
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}

/// 32-byte ed25519 verifying key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Short form for logs.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.short())
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    /// Deterministic key from 32 bytes of seed material.
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> Proof {
        sign_message(self, message)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &self.public_key())
            .finish_non_exhaustive()
    }
}

/// A signature together with the key that claims to have produced it.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Proof {
    pub signer: PublicKey,
    pub signature: [u8; 64],
}

impl fmt::Debug for Proof {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Proof(signer={}, sig={})",
            self.signer.short(),
            hex::encode(&self.signature[..4])
        )
    }
}

pub fn sign_message(key: &KeyPair, message: &[u8]) -> Proof {
    Proof {
        signer: key.public_key(),
        signature: key.signing.sign(message).to_bytes(),
    }
}

/// Verification failure, including a malformed signer key, is `false`.
pub fn verify_proof(proof: &Proof, message: &[u8]) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(&proof.signer.0) else {
        return false;
    };
    let signature = ed25519_dalek::Signature::from_bytes(&proof.signature);
    key.verify_strict(message, &signature).is_ok()
}

/// Binding hash of a value published before the value itself.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Commitment {
    pub digest: Digest,
    pub feed_id: FeedId,
    pub round: Round,
    pub author: PublicKey,
}

/// Disclosure of the value and salt behind a [`Commitment`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Reveal {
    pub value: DataValue,
    pub salt: [u8; SALT_LEN],
    pub feed_id: FeedId,
    pub round: Round,
    pub author: PublicKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RevealCheck {
    Valid,
    Fraudulent,
}

fn commitment_digest(feed_id: &FeedId, round: Round, value: &DataValue, salt: &[u8]) -> Digest {
    Canonical::new()
        .str(feed_id.as_str())
        .u64(round)
        .bytes(&value.to_bytes())
        .bytes(salt)
        .digest()
}

pub fn make_commitment(
    feed_id: &FeedId,
    round: Round,
    value: &DataValue,
    salt: &[u8],
    author: PublicKey,
) -> Result<Commitment, CryptoError> {
    if salt.len() != SALT_LEN {
        return Err(CryptoError::SaltLength(salt.len()));
    }
    Ok(Commitment {
        digest: commitment_digest(feed_id, round, value, salt),
        feed_id: feed_id.clone(),
        round,
        author,
    })
}

/// Checks a reveal against the commitment it claims to open.
///
/// A reveal for a different feed, round or author is a caller error, not
/// fraud: it never belonged to this commitment.
pub fn open_reveal(commitment: &Commitment, reveal: &Reveal) -> Result<RevealCheck, CryptoError> {
    if commitment.feed_id != reveal.feed_id {
        return Err(CryptoError::RevealMismatch("feed_id"));
    }
    if commitment.round != reveal.round {
        return Err(CryptoError::RevealMismatch("round"));
    }
    if commitment.author != reveal.author {
        return Err(CryptoError::RevealMismatch("author"));
    }
    let recomputed = commitment_digest(&reveal.feed_id, reveal.round, &reveal.value, &reveal.salt);
    Ok(if recomputed == commitment.digest {
        RevealCheck::Valid
    } else {
        RevealCheck::Fraudulent
    })
}

/// Digest of an aggregated value, as signed by oracles and stored by NEBULA-SC.
pub fn value_digest(value: &DataValue) -> Digest {
    Canonical::new().bytes(&value.to_bytes()).digest()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn key(n: u8) -> KeyPair {
        KeyPair::from_seed([n; 32])
    }

    fn feed() -> FeedId {
        FeedId::new("btc-usd")
    }

    #[test]
    fn hash_is_deterministic_and_32_bytes() {
        assert_eq!(hash(b"pulse"), hash(b"pulse"));
        assert_eq!(hash(&[]).as_bytes().len(), 32);
    }

    #[test]
    fn single_byte_changes_never_collide() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let mut a = vec![0u8; 1 + (rng.next_u32() % 64) as usize];
            rng.fill_bytes(&mut a);
            let mut b = a.clone();
            let i = rng.next_u32() as usize % b.len();
            b[i] ^= 1 + (rng.next_u32() % 255) as u8;
            assert_ne!(hash(&a), hash(&b));
        }
    }

    #[test]
    fn canonical_layout_is_length_prefixed() {
        let bytes = Canonical::new().str("ab").u64(1).finish();
        assert_eq!(
            bytes,
            [0, 0, 0, 2, b'a', b'b', 0, 0, 0, 8, 0, 0, 0, 0, 0, 0, 0, 1]
        );
        let mut r = CanonicalReader::new(&bytes);
        assert_eq!(r.string().unwrap(), "ab");
        assert_eq!(r.u64().unwrap(), 1);
        r.finish().unwrap();
    }

    #[test]
    fn canonical_reader_rejects_truncation_and_trailing() {
        let bytes = Canonical::new().u64(5).finish();
        let mut r = CanonicalReader::new(&bytes[..6]);
        assert!(matches!(r.u64(), Err(DecodeError::Truncated(_))));
        let mut long = bytes.clone();
        long.push(0);
        let mut r = CanonicalReader::new(&long);
        r.u64().unwrap();
        assert_eq!(r.finish(), Err(DecodeError::Trailing(1)));
    }

    #[test]
    fn commitment_is_deterministic_and_salt_bound() {
        let v = DataValue::Int(42);
        let a = make_commitment(&feed(), 3, &v, &[1; 32], key(1).public_key()).unwrap();
        let b = make_commitment(&feed(), 3, &v, &[1; 32], key(1).public_key()).unwrap();
        let c = make_commitment(&feed(), 3, &v, &[2; 32], key(1).public_key()).unwrap();
        assert_eq!(a.digest, b.digest);
        assert_ne!(a.digest, c.digest);
    }

    #[test]
    fn malformed_salt_is_rejected() {
        let err = make_commitment(
            &feed(),
            0,
            &DataValue::Int(1),
            &[0; 31],
            key(1).public_key(),
        );
        assert_eq!(err, Err(CryptoError::SaltLength(31)));
    }

    fn reveal_for(value: i64, round: Round, author: PublicKey) -> Reveal {
        Reveal {
            value: DataValue::Int(value),
            salt: [9; 32],
            feed_id: feed(),
            round,
            author,
        }
    }

    #[test]
    fn open_reveal_outcomes() {
        let author = key(1).public_key();
        let c = make_commitment(&feed(), 4, &DataValue::Int(42), &[9; 32], author).unwrap();
        assert_eq!(
            open_reveal(&c, &reveal_for(42, 4, author)),
            Ok(RevealCheck::Valid)
        );
        assert_eq!(
            open_reveal(&c, &reveal_for(43, 4, author)),
            Ok(RevealCheck::Fraudulent)
        );
        assert_eq!(
            open_reveal(&c, &reveal_for(42, 5, author)),
            Err(CryptoError::RevealMismatch("round"))
        );
        assert_eq!(
            open_reveal(&c, &reveal_for(42, 4, key(2).public_key())),
            Err(CryptoError::RevealMismatch("author"))
        );
    }

    #[test]
    fn signatures_bind_message_and_signer() {
        let msg = b"agg digest payload";
        let proof = sign_message(&key(1), msg);
        assert!(verify_proof(&proof, msg));

        let mut flipped = msg.to_vec();
        flipped[0] ^= 1;
        assert!(!verify_proof(&proof, &flipped));

        let stolen = Proof {
            signer: key(2).public_key(),
            ..proof
        };
        assert!(!verify_proof(&stolen, msg));

        assert_ne!(proof.signature, sign_message(&key(2), msg).signature);
    }

    #[test]
    fn commitment_binding_over_many_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let author = key(1).public_key();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..100_000 {
            let value = DataValue::Int(rng.next_u64() as i64);
            let mut salt = [0u8; 32];
            rng.fill_bytes(&mut salt);
            let c = make_commitment(&feed(), 0, &value, &salt, author).unwrap();
            assert!(seen.insert(c.digest));
        }
    }

    #[test]
    fn commitment_hiding_under_distinct_salts() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let author = key(1).public_key();
        let v = DataValue::Int(1000);
        let digests: std::collections::HashSet<_> = (0..100)
            .map(|_| {
                let mut salt = [0u8; 32];
                rng.fill_bytes(&mut salt);
                make_commitment(&feed(), 0, &v, &salt, author)
                    .unwrap()
                    .digest
            })
            .collect();
        assert_eq!(digests.len(), 100);
    }

    #[test]
    fn forged_proofs_never_verify() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let signer = key(1).public_key();
        let msg = b"pulse";
        let mut accepted = 0;
        for _ in 0..10_000 {
            let mut signature = [0u8; 64];
            rng.fill_bytes(&mut signature);
            if verify_proof(&Proof { signer, signature }, msg) {
                accepted += 1;
            }
        }
        assert_eq!(accepted, 0);
    }
}
