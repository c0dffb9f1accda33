//! Identifier newtypes and the data values that flow through a pulse.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Simulation clock. Target-chain heights advance one per tick.
pub type Tick = u64;

/// Per-nebula pulse round ordinal.
pub type Round = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(
    /// A target blockchain.
    ChainId
);
string_id!(
    /// A data feed, as declared by its feed specification.
    FeedId
);
string_id!(
    /// A NEBULA-SC instance (the receiving port of a feed on one chain).
    NebulaId
);
string_id!(
    /// A USER-SC instance.
    ContractId
);
string_id!(
    /// A token account on a target chain.
    AccountId
);

impl AccountId {
    pub fn treasury() -> Self {
        Self::new("treasury")
    }

    pub fn reserve() -> Self {
        Self::new("reserve")
    }

    pub fn node(id: NodeId) -> Self {
        Self(format!("node:{id}"))
    }

    pub fn user(contract: &ContractId) -> Self {
        Self(format!("user:{contract}"))
    }
}

/// A feed value after extraction. Integer feeds carry scaled decimals.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataValue {
    Int(i64),
    Text(String),
}

impl DataValue {
    /// Raw bytes used inside canonical encodings: integers as 8-byte
    /// big-endian two's complement, strings as UTF-8.
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            DataValue::Int(v) => v.to_be_bytes().to_vec(),
            DataValue::Text(s) => s.as_bytes().to_vec(),
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            DataValue::Int(v) => Some(*v),
            DataValue::Text(_) => None,
        }
    }
}

impl fmt::Display for DataValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataValue::Int(v) => write!(f, "{v}"),
            DataValue::Text(s) => write!(f, "{s:?}"),
        }
    }
}

impl From<i64> for DataValue {
    fn from(v: i64) -> Self {
        DataValue::Int(v)
    }
}
