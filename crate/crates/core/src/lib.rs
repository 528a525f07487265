// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

//! Flexible-quorum BFT: replica state machine, client commit rules, adversary
//! strategies, a deterministic network simulator and exact quorum calculus.

pub mod adversary;
pub mod calculus;
pub mod client;
pub mod codec;
pub mod harness;
pub mod message;
pub mod netsim;
pub mod primitives;
pub mod replica;
pub mod scalar;
pub mod transcript;

/// Exact fraction used for every quorum and tolerance in the simulator.
pub type Frac = num_rational::Ratio<i64>;
