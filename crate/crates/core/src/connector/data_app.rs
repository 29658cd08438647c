// SPDX-License-Identifier: Apache-2.0

//! Built-in data app transforms. A provider routes the decoded payload
//! through one of these when the consumer names a data app on fetch.

use sha2::{Digest, Sha256};

pub const SHA256_DIGEST: &str = "sha256-digest";
pub const BYTE_COUNT: &str = "byte-count";

pub const BUILTIN: [&str; 2] = [SHA256_DIGEST, BYTE_COUNT];

pub fn is_builtin(transform_id: &str) -> bool {
    BUILTIN.contains(&transform_id)
}

pub fn apply(transform_id: &str, input: &[u8]) -> Option<Vec<u8>> {
    match transform_id {
        SHA256_DIGEST => Some(hex::encode(Sha256::digest(input)).into_bytes()),
        BYTE_COUNT => Some(input.len().to_string().into_bytes()),
        _ => None,
    }
}
