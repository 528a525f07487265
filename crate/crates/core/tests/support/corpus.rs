// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};

use flexbft::harness::Scenario;

pub fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

/// Every scenario in the corpus, ordered by file name.
pub fn load_corpus() -> Vec<Scenario> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(scenario_dir())
        .expect("scenario directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths.iter().map(|p| Scenario::load(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).collect()
}

pub fn load(name: &str) -> Scenario {
    let p = scenario_dir().join(format!("{name}.toml"));
    Scenario::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}
