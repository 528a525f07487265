// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

use std::io;
use std::path::{Path, PathBuf};

use crate::adversary::{Adversary, Controller};
use crate::client::ClientState;
use crate::netsim::{ClientSlot, World, WorldConfig};
use crate::primitives::{Keyring, ReplicaId};
use crate::replica::Replica;
use crate::transcript::Transcript;

use super::analysis::{analyze, RunReport};
use super::scenario::Scenario;

pub struct RunResult {
    pub transcript: Vec<u8>,
    pub report: RunReport,
    pub clients: Vec<ClientState>,
}

/// Runs the scenario and returns only the transcript bytes.
pub fn simulate(s: &Scenario) -> (Vec<u8>, Vec<ClientState>) {
    let cfg = &s.protocol;
    let ring = Keyring::from_seed(s.seed);
    let faulty = s.faults.faulty();
    let replicas: Vec<Replica> = (0..cfg.n)
        .map(ReplicaId)
        .filter(|id| !faulty.contains(id))
        .map(|id| Replica::new(cfg.clone(), ring.signer(id), ring.verify_key(), s.heights_target))
        .collect();
    let adversary: Option<Box<dyn Adversary>> = if faulty.is_empty() {
        None
    } else {
        Some(Box::new(Controller::new(cfg, &ring, &s.faults, &s.delay, s.heights_target)))
    };
    let clients = s
        .clients
        .iter()
        .map(|c| ClientSlot::new(ClientState::new(c.name.clone(), c.assumption.clone()), cfg.clone(), ring.verify_key()))
        .collect();
    let wc = WorldConfig {
        protocol: cfg.clone(),
        delay: s.delay.clone(),
        seed: s.seed,
        max_time: s.max_time,
        probe_cadence: s.probe_cadence,
        drain: s.drain(),
    };
    let init = s.to_toml();
    let out = World::new(wc, replicas, adversary, clients, init.as_bytes()).run();
    (out.transcript, out.clients)
}

pub fn run_scenario(s: &Scenario) -> RunResult {
    let (transcript, clients) = simulate(s);
    let parsed = Transcript::parse(&transcript).expect("fresh transcript parses");
    let report = analyze(s, &parsed, &transcript);
    RunResult { transcript, report, clients }
}

/// Writes transcript, text projection, report and committed chains under
/// `out/<scenario>/<seed>/` and returns that directory.
pub fn write_outputs(s: &Scenario, r: &RunResult, out: &Path) -> io::Result<PathBuf> {
    let dir = out.join(&s.name).join(s.seed.to_string());
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("transcript.bin"), &r.transcript)?;
    let parsed = Transcript::parse(&r.transcript).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    std::fs::write(dir.join("transcript.txt"), parsed.text())?;
    std::fs::write(dir.join("report.toml"), r.report.to_text())?;
    for c in &r.clients {
        let file: String = c.name.chars().map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' { ch } else { '_' }).collect();
        std::fs::write(dir.join(format!("chain-{file}.txt")), c.export_chain())?;
    }
    Ok(dir)
}
