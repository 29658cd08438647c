// SPDX-License-Identifier: Apache-2.0

//! Opaque identifiers. All ids are strings on the wire; the newtypes keep
//! them from being mixed up in code.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

macro_rules! opaque_id {
    ($($(#[$meta:meta])* $name:ident),* $(,)?) => {$(
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
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

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    )*};
}

opaque_id!(
    CertId,
    ParticipantId,
    ConnectorId,
    TokenId,
    ServiceId,
    HostId,
    CatalogId,
    ResourceId,
    ContractId,
    RuleId,
    AgreementId,
    HandleId,
    CorrelationId,
    AppId,
    InstanceId,
    NodeId,
);

/// Monotonic id source producing `<prefix>-<n>` strings, zero padded so that
/// lexicographic order matches creation order.
#[derive(Debug)]
pub struct IdGen {
    prefix: String,
    next: AtomicU64,
}

impl IdGen {
    pub fn new(prefix: impl Into<String>) -> Self {
        Self { prefix: prefix.into(), next: AtomicU64::new(1) }
    }

    pub fn next(&self) -> String {
        let n = self.next.fetch_add(1, Ordering::Relaxed);
        format!("{}-{:06}", self.prefix, n)
    }

    pub fn next_id<T: From<String>>(&self) -> T {
        T::from(self.next())
    }
}
