// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

//! Binary event log of a simulation run.
//!
//! Layout: one version byte, then length-prefixed records. Each record holds
//! `(time, seq, actor, kind, aux0, aux1, digest)` and, the first time a
//! digest appears, the payload bytes behind it.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::codec::{DecodeError, Reader, Wire, Writer};
use crate::message::Message;
use crate::primitives::{Digest, Time};

pub const FORMAT_VERSION: u8 = 1;

/// Actor id used for records not owned by a replica or client.
pub const WORLD: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RecordKind {
    /// Scenario text that produced the run.
    Init,
    /// actor sent `digest` to `aux0`, due at `aux1`.
    Send,
    /// actor received `digest` from `aux0`, sent at `aux1`.
    Deliver,
    /// actor armed timer `aux0` for `aux1`.
    TimerSet,
    /// actor cleared its timer.
    TimerCancel,
    /// timer `aux0` fired at actor.
    TimerFire,
    /// actor started.
    Start,
    /// Client probe; payload lists report fingerprints.
    Probe,
    /// client `actor` committed block `digest` at height `aux0` in view `aux1`.
    Commit,
    /// Final record; `aux0` is the number of processed events.
    End,
}

impl RecordKind {
    const ALL: [RecordKind; 10] = [
        RecordKind::Init,
        RecordKind::Send,
        RecordKind::Deliver,
        RecordKind::TimerSet,
        RecordKind::TimerCancel,
        RecordKind::TimerFire,
        RecordKind::Start,
        RecordKind::Probe,
        RecordKind::Commit,
        RecordKind::End,
    ];

    fn tag(self) -> u8 {
        RecordKind::ALL.iter().position(|k| *k == self).unwrap() as u8
    }

    fn from_tag(tag: u8) -> Option<RecordKind> {
        RecordKind::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            RecordKind::Init => "init",
            RecordKind::Send => "send",
            RecordKind::Deliver => "deliver",
            RecordKind::TimerSet => "timer-set",
            RecordKind::TimerCancel => "timer-cancel",
            RecordKind::TimerFire => "timer-fire",
            RecordKind::Start => "start",
            RecordKind::Probe => "probe",
            RecordKind::Commit => "commit",
            RecordKind::End => "end",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub time: Time,
    pub seq: u64,
    pub actor: u32,
    pub kind: RecordKind,
    pub aux: [u64; 2],
    pub digest: Digest,
    /// Present only on the first record carrying this digest.
    pub payload: Option<Vec<u8>>,
}

impl Record {
    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.time).u64(self.seq).u32(self.actor).u8(self.kind.tag()).u64(self.aux[0]).u64(self.aux[1]);
        self.digest.encode_to(&mut w);
        match &self.payload {
            Some(p) => {
                w.u8(1).bytes(p);
            }
            None => {
                w.u8(0);
            }
        }
        w.finish()
    }

    fn decode(bytes: &[u8]) -> Result<Record, DecodeError> {
        let mut r = Reader::new(bytes);
        let time = r.u64()?;
        let seq = r.u64()?;
        let actor = r.u32()?;
        let tag = r.u8()?;
        let kind = RecordKind::from_tag(tag).ok_or(DecodeError::BadTag { what: "record kind", tag })?;
        let aux = [r.u64()?, r.u64()?];
        let digest = Digest::decode_from(&mut r)?;
        let payload = match r.u8()? {
            0 => None,
            1 => Some(r.bytes()?),
            tag => return Err(DecodeError::BadTag { what: "payload flag", tag }),
        };
        r.finish()?;
        Ok(Record { time, seq, actor, kind, aux, digest, payload })
    }
}

/// Appends records, eliding payloads whose digest was already written.
#[derive(Debug, Default)]
pub struct TranscriptWriter {
    bytes: Vec<u8>,
    seen: HashSet<Digest>,
    count: usize,
}

impl TranscriptWriter {
    pub fn new() -> TranscriptWriter {
        TranscriptWriter { bytes: vec![FORMAT_VERSION], seen: HashSet::new(), count: 0 }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        time: Time,
        seq: u64,
        actor: u32,
        kind: RecordKind,
        aux: [u64; 2],
        digest: Digest,
        payload: impl FnOnce() -> Vec<u8>,
    ) {
        let payload = if self.seen.insert(digest) { Some(payload()) } else { None };
        let rec = Record { time, seq, actor, kind, aux, digest, payload };
        let body = rec.encode();
        self.bytes.extend_from_slice(&(body.len() as u32).to_le_bytes());
        self.bytes.extend_from_slice(&body);
        self.count += 1;
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TranscriptError {
    #[error("transcript is empty")]
    Empty,
    #[error("transcript format version {found} is not supported (expected {expected})")]
    Version { found: u8, expected: u8 },
    #[error("record {index} is malformed: {source}")]
    Malformed { index: usize, source: DecodeError },
    #[error("record {index} is truncated")]
    Truncated { index: usize },
    #[error("transcript has no init record")]
    NoInit,
}

/// A decoded transcript with payloads resolved by digest.
#[derive(Clone, Debug)]
pub struct Transcript {
    pub records: Vec<Record>,
    payloads: BTreeMap<Digest, Vec<u8>>,
}

impl Transcript {
    pub fn parse(bytes: &[u8]) -> Result<Transcript, TranscriptError> {
        let (&version, mut rest) = bytes.split_first().ok_or(TranscriptError::Empty)?;
        if version != FORMAT_VERSION {
            return Err(TranscriptError::Version { found: version, expected: FORMAT_VERSION });
        }
        let mut records = Vec::new();
        let mut payloads = BTreeMap::new();
        while !rest.is_empty() {
            let index = records.len();
            if rest.len() < 4 {
                return Err(TranscriptError::Truncated { index });
            }
            let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
            if rest.len() < 4 + len {
                return Err(TranscriptError::Truncated { index });
            }
            let rec = Record::decode(&rest[4..4 + len]).map_err(|source| TranscriptError::Malformed { index, source })?;
            if let Some(p) = &rec.payload {
                payloads.entry(rec.digest).or_insert_with(|| p.clone());
            }
            records.push(rec);
            rest = &rest[4 + len..];
        }
        Ok(Transcript { records, payloads })
    }

    pub fn payload(&self, d: &Digest) -> Option<&[u8]> {
        self.payloads.get(d).map(|v| v.as_slice())
    }

    pub fn message(&self, d: &Digest) -> Option<Message> {
        self.payload(d).and_then(|p| Message::decode(p).ok())
    }

    pub fn init_text(&self) -> Result<String, TranscriptError> {
        let rec = self.records.iter().find(|r| r.kind == RecordKind::Init).ok_or(TranscriptError::NoInit)?;
        let bytes = self.payload(&rec.digest).ok_or(TranscriptError::NoInit)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| TranscriptError::NoInit)
    }

    /// One line per record, for diffing.
    pub fn text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let actor = if r.actor == WORLD { "world".to_string() } else { r.actor.to_string() };
            let _ = write!(s, "{:>8} {:>7} {:>5} {:<12}", r.time, r.seq, actor, r.kind.name());
            match r.kind {
                RecordKind::Send | RecordKind::Deliver => {
                    let what = self.message(&r.digest).map_or("?", |m| m.kind().name());
                    let _ = write!(s, " peer={} at={} {} {}", r.aux[0], r.aux[1], what, r.digest.short());
                }
                RecordKind::TimerSet | RecordKind::TimerFire => {
                    let _ = write!(s, " tag={} at={}", r.aux[0], r.aux[1]);
                }
                RecordKind::Commit => {
                    let _ = write!(s, " height={} view={} block={}", r.aux[0], r.aux[1], r.digest.short());
                }
                RecordKind::End => {
                    let _ = write!(s, " events={}", r.aux[0]);
                }
                _ => {
                    let _ = write!(s, " {}", r.digest.short());
                }
            }
            s.push('\n');
        }
        s
    }
}
