// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

//! Scenario files, runs, metrics and replay.

pub mod analysis;
pub mod replay;
pub mod run;
pub mod scenario;

pub use analysis::{analyze, Check, ClientSummary, RunReport, Timeline};
pub use replay::{replay, ReplayError, ReplayOutcome};
pub use run::{run_scenario, simulate, write_outputs, RunResult};
pub use scenario::{ClientSpec, Expectations, Scenario, ScenarioError};
