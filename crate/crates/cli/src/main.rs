// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flexbft::calculus::{compare_qr, comparison_text, region_csv, region_grid};
use flexbft::harness::{replay, run_scenario, write_outputs, Scenario};
use flexbft::scalar::parse_ratio;
use flexbft::Frac;

#[derive(Parser)]
#[command(name = "flexbft", version, about = "Flexible-quorum BFT simulator and quorum calculus")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario file and write transcript and report.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Re-execute a transcript and audit it.
    Replay { transcript: PathBuf },
    /// Export the supported-client region for one q_r as CSV.
    Region {
        #[arg(long, value_parser = frac)]
        qr: Frac,
        #[arg(long, value_parser = frac, default_value = "1/20")]
        step: Frac,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the CR1 regions of several q_r values.
    CompareQr {
        #[arg(value_parser = frac, required = true)]
        values: Vec<Frac>,
    },
}

fn frac(s: &str) -> Result<Frac, String> {
    parse_ratio(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    match cli.cmd {
        Cmd::Run { scenario, seed, out } => {
            let mut s = Scenario::load(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
                s.validate()?;
            }
            let r = run_scenario(&s);
            let dir = write_outputs(&s, &r, &out)?;
            print!("{}", r.report.to_text());
            println!("\n# written to {}", dir.display());
            Ok(r.report.passed())
        }
        Cmd::Replay { transcript } => {
            let bytes = std::fs::read(&transcript)?;
            let outcome = replay(&bytes)?;
            match &outcome.divergence {
                Some(d) => println!("FAIL divergence at time={} seq={} (record {}: {})", d.time, d.seq, d.index, d.what),
                None => println!("records {} replayed without divergence", outcome.records),
            }
            for f in &outcome.audit_failures {
                println!("FAIL audit: {f}");
            }
            if outcome.passed() {
                println!("PASS");
            }
            Ok(outcome.passed())
        }
        Cmd::Region { qr, step, out } => {
            let csv = region_csv(&region_grid(&qr, &step)?);
            match out {
                Some(p) => std::fs::write(p, csv)?,
                None => print!("{csv}"),
            }
            Ok(true)
        }
        Cmd::CompareQr { values } => {
            print!("{}", comparison_text(&compare_qr(&values)?));
            Ok(true)
        }
    }
}
