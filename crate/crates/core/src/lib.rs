// SPDX-License-Identifier: Apache-2.0

//! Edge platform with data-space connectors as a managed service.

pub mod autoscaler;
pub mod clock;
pub mod config;
pub mod harness;
pub mod connector;
mod hexbytes;
pub mod host;
pub mod identity;
pub mod ids;
pub mod net;
pub mod platform;
pub mod registry;
