// SPDX-License-Identifier: Apache-2.0

//! HTTP front end for an edge host, and blocking clients for talking to one.

pub mod client;
pub mod server;
pub mod wire;
