// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{FaultConfig, FaultError, Strategy};
use crate::client::{Assumption, AssumptionError};
use crate::netsim::{DelayError, DelayKind, DelayModel};
use crate::primitives::{ConfigError, Height, ProtocolConfig, Time};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientSpec {
    pub name: String,
    #[serde(flatten)]
    pub assumption: Assumption,
}

/// Assertions a scenario declares about its own outcome.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    /// Clients whose conflict flag must trip.
    #[serde(default)]
    pub conflicts: Vec<String>,
    /// Whether the scripted attack must refuse to run.
    #[serde(default)]
    pub attack_refused: Option<bool>,
    /// Overrides the liveness assertion derived from the fault budget.
    #[serde(default)]
    pub liveness: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    pub heights_target: Height,
    pub probe_cadence: Time,
    pub max_time: Time,
    #[serde(default)]
    pub drain: Option<Time>,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub faults: FaultConfig,
    pub delay: DelayModel,
    pub clients: Vec<ClientSpec>,
    #[serde(default)]
    pub expect: Expectations,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("E001 cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("E002 malformed scenario: {0}")]
    Syntax(String),
    #[error("E003 protocol.q_r: {0}")]
    Quorum(ConfigError),
    #[error("E004 protocol: {0}")]
    Protocol(ConfigError),
    #[error("E005 faults.strategy.name: unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("E006 faults: {0}")]
    Faults(FaultError),
    #[error("E007 delay: {0}")]
    Delay(DelayError),
    #[error("E008 clients[{index}] ({name}): {source}")]
    Client { index: usize, name: String, source: AssumptionError },
    #[error("E009 clients: {0}")]
    Clients(String),
    #[error("E010 {field}: {reason}")]
    Bounds { field: &'static str, reason: &'static str },
}

impl ScenarioError {
    /// Stable error code, the first token of the message.
    pub fn code(&self) -> &'static str {
        match self {
            ScenarioError::Io { .. } => "E001",
            ScenarioError::Syntax(_) => "E002",
            ScenarioError::Quorum(_) => "E003",
            ScenarioError::Protocol(_) => "E004",
            ScenarioError::UnknownStrategy(_) => "E005",
            ScenarioError::Faults(_) => "E006",
            ScenarioError::Delay(_) => "E007",
            ScenarioError::Client { .. } => "E008",
            ScenarioError::Clients(_) => "E009",
            ScenarioError::Bounds { .. } => "E010",
        }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Scenario::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        // strategy names are checked before typed decoding so the error can
        // name the field instead of echoing serde's variant list
        let raw: toml::Value = toml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
        if let Some(name) = raw.get("faults").and_then(|f| f.get("strategy")).and_then(|s| s.get("name")) {
            let name = name.as_str().unwrap_or_default();
            if !Strategy::NAMES.contains(&name) {
                return Err(ScenarioError::UnknownStrategy(name.to_string()));
            }
        }
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        match self.protocol.validate() {
            Err(e @ (ConfigError::QuorumTooSmall(_) | ConfigError::QuorumTooLarge(_))) => {
                return Err(ScenarioError::Quorum(e))
            }
            Err(e) => return Err(ScenarioError::Protocol(e)),
            Ok(()) => {}
        }
        self.faults.validate(self.protocol.n).map_err(ScenarioError::Faults)?;
        self.delay.validate().map_err(ScenarioError::Delay)?;
        if self.clients.is_empty() {
            return Err(ScenarioError::Clients("at least one client is required".into()));
        }
        let mut names = BTreeSet::new();
        for (index, c) in self.clients.iter().enumerate() {
            if !names.insert(c.name.as_str()) {
                return Err(ScenarioError::Clients(format!("duplicate client name {:?}", c.name)));
            }
            c.assumption
                .validate(&self.protocol.q_r)
                .map_err(|source| ScenarioError::Client { index, name: c.name.clone(), source })?;
        }
        for name in &self.expect.conflicts {
            if !names.contains(name.as_str()) {
                return Err(ScenarioError::Clients(format!("expect.conflicts names unknown client {name:?}")));
            }
        }
        if self.heights_target == 0 {
            return Err(ScenarioError::Bounds { field: "heights_target", reason: "must be positive" });
        }
        // the scenario is embedded in transcripts as TOML, whose integers are i64
        if i64::try_from(self.seed).is_err() || i64::try_from(self.delay.rng_seed).is_err() {
            return Err(ScenarioError::Bounds { field: "seed", reason: "must fit in a signed 64-bit integer" });
        }
        if self.probe_cadence == 0 {
            return Err(ScenarioError::Bounds { field: "probe_cadence", reason: "must be positive" });
        }
        Ok(())
    }

    /// Probing continues this long after the network falls quiet, enough for
    /// the slowest synchronous client to see its window close.
    pub fn drain(&self) -> Time {
        self.drain.unwrap_or_else(|| {
            let delta = self
                .clients
                .iter()
                .filter_map(|c| match c.assumption {
                    Assumption::Sync { delta } => Some(delta),
                    _ => None,
                })
                .max()
                .unwrap_or(0);
            2 * delta + 4 * self.delay.bound() + 2 * self.probe_cadence
        })
    }

    pub fn faulty_count(&self) -> usize {
        self.faults.byzantine.len() + self.faults.abc.len()
    }

    /// Whether the client's safety assumption holds for this scenario,
    /// judged on replica counts.
    pub fn client_safe(&self, a: &Assumption) -> bool {
        let n = self.protocol.n as usize;
        let f = self.faulty_count();
        let qr = self.protocol.quorum();
        match a {
            Assumption::PartialSync { q_c } => match self.protocol.quorum_for(q_c) {
                Ok(qc) => f + n < qc + qr,
                Err(_) => false,
            },
            Assumption::Sync { delta } => {
                let timely = match self.delay.kind {
                    DelayKind::PartialSynchrony { gst, delta: d } => gst == 0 && d <= *delta,
                    _ => self.delay.bound() <= *delta,
                };
                f < qr && timely
            }
        }
    }

    /// Whether the client can expect progress: enough non-Byzantine
    /// replicas remain for its quorum.
    pub fn client_live(&self, a: &Assumption) -> bool {
        let n = self.protocol.n as usize;
        let b = self.faults.byzantine.len();
        let need = match a {
            Assumption::PartialSync { q_c } => self.protocol.quorum_for(q_c).unwrap_or(usize::MAX),
            Assumption::Sync { .. } => self.protocol.quorum(),
        };
        b + need <= n && b + self.protocol.quorum() <= n
    }

    /// Liveness is asserted unless the scenario says otherwise or an attack
    /// is scheduled to run.
    pub fn liveness_asserted(&self, attack_ran: bool) -> bool {
        self.expect.liveness.unwrap_or(!attack_ran)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
name = "minimal"
seed = 1
heights_target = 5
probe_cadence = 5
max_time = 2000

[protocol]
n = 4
q_r = "2/3"
base_timeout = 100

[delay]
kind = "synchronous"
delta = 5

[[clients]]
name = "cr1"
mode = "partial_sync"
q_c = "2/3"
"#;

    #[test]
    fn minimal_scenario_loads() {
        let s = Scenario::parse(MINIMAL).unwrap();
        assert!(s.faults.byzantine.is_empty() && s.faults.abc.is_empty());
        assert_eq!(s.faults.strategy, Strategy::Honest);
        assert_eq!(Scenario::parse(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn small_quorum_rejected() {
        let err = Scenario::parse(&MINIMAL.replace("q_r = \"2/3\"", "q_r = \"1/3\"")).unwrap_err();
        assert_eq!(err.code(), "E003");
        assert!(err.to_string().contains("q_r must exceed 1/2"), "{err}");
    }

    #[test]
    fn overlapping_faults_rejected() {
        let text = format!("{MINIMAL}\n[faults]\nbyzantine = [1]\nabc = [1]\n");
        let err = Scenario::parse(&text).unwrap_err();
        assert_eq!(err.code(), "E006");
        assert!(err.to_string().contains("both byzantine and abc"));
    }

    #[test]
    fn unknown_strategy_rejected() {
        let text = format!("{MINIMAL}\n[faults]\nbyzantine = [1]\n[faults.strategy]\nname = \"chaos\"\n");
        let err = Scenario::parse(&text).unwrap_err();
        assert_eq!(err.code(), "E005");
        assert!(err.to_string().contains("faults.strategy.name"));
    }

    #[test]
    fn bad_client_and_delay_rejected() {
        let err = Scenario::parse(&MINIMAL.replace("q_c = \"2/3\"", "q_c = \"1/2\"")).unwrap_err();
        assert_eq!(err.code(), "E008");
        let err = Scenario::parse(&MINIMAL.replace("delta = 5", "delta = 5\nmin_delay = 9")).unwrap_err();
        assert_eq!(err.code(), "E007");
        let err = Scenario::parse(&MINIMAL.replace("probe_cadence = 5", "probe_cadence = 0")).unwrap_err();
        assert_eq!(err.code(), "E010");
        let mut big = Scenario::parse(MINIMAL).unwrap();
        big.seed = u64::MAX;
        assert_eq!(big.validate().unwrap_err().code(), "E010");
        let err = Scenario::parse("name = ").unwrap_err();
        assert_eq!(err.code(), "E002");
    }
}
