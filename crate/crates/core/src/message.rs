// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

//! Protocol messages exchanged between replicas.

use std::collections::BTreeSet;

use crate::codec::{DecodeError, Reader, Wire, Writer};
use crate::primitives::{
    verify_certificate, Auth, Block, Certificate, Digest, ProtocolConfig, ReplicaId, Signer, VerifyKey, View, Vote,
};

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Proposal {
    pub block: Block,
    pub view: View,
    pub prev_cert: Certificate,
    pub status: Option<StatusSet>,
    pub proposer: ReplicaId,
    pub auth: Auth,
}

impl Proposal {
    fn signing_digest(block: &Block, view: View, prev_cert: &Certificate, status: &Option<StatusSet>) -> Digest {
        let mut w = Writer::new();
        w.raw(b"propose");
        block.encode_to(&mut w);
        w.u64(view);
        prev_cert.encode_to(&mut w);
        status.encode_to(&mut w);
        Digest::of(&w.finish())
    }

    pub fn new(signer: &Signer, block: Block, view: View, prev_cert: Certificate, status: Option<StatusSet>) -> Proposal {
        let auth = signer.sign(&Proposal::signing_digest(&block, view, &prev_cert, &status));
        Proposal { block, view, prev_cert, status, proposer: signer.id(), auth }
    }

    pub fn height(&self) -> u64 {
        self.block.height
    }

    /// Authenticity and internal consistency. Whether the proposer leads
    /// `view` and whether the replica should vote are checked by callers.
    pub fn verify(&self, cfg: &ProtocolConfig, key: &VerifyKey) -> bool {
        if self.auth.signer != self.proposer
            || !key.verify(&self.auth, &Proposal::signing_digest(&self.block, self.view, &self.prev_cert, &self.status))
        {
            return false;
        }
        if self.block.height == 0
            || self.prev_cert.block != self.block.parent
            || self.prev_cert.height + 1 != self.block.height
            || self.prev_cert.view > self.view
            || !verify_certificate(&self.prev_cert, cfg, key)
        {
            return false;
        }
        match &self.status {
            Some(s) => s.view == self.view && s.verify(cfg, key),
            None => true,
        }
    }
}

impl Wire for Proposal {
    fn encode_to(&self, w: &mut Writer) {
        self.block.encode_to(w);
        w.u64(self.view);
        self.prev_cert.encode_to(w);
        self.status.encode_to(w);
        w.u32(self.proposer.0);
        self.auth.encode_to(w);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Proposal {
            block: Block::decode_from(r)?,
            view: r.u64()?,
            prev_cert: Certificate::decode_from(r)?,
            status: Option::decode_from(r)?,
            proposer: ReplicaId(r.u32()?),
            auth: Auth::decode_from(r)?,
        })
    }
}

/// Two conflicting proposals signed by the same leader for the same view.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Evidence {
    pub first: Proposal,
    pub second: Proposal,
}

impl Wire for Evidence {
    fn encode_to(&self, w: &mut Writer) {
        self.first.encode_to(w);
        self.second.encode_to(w);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Evidence { first: Proposal::decode_from(r)?, second: Proposal::decode_from(r)? })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Blame {
    pub view: View,
    pub blamer: ReplicaId,
    pub auth: Auth,
    pub evidence: Option<Box<Evidence>>,
}

impl Blame {
    fn signing_digest(view: View) -> Digest {
        let mut w = Writer::new();
        w.raw(b"blame").u64(view);
        Digest::of(&w.finish())
    }

    pub fn new(signer: &Signer, view: View, evidence: Option<Evidence>) -> Blame {
        Blame { view, blamer: signer.id(), auth: signer.sign(&Blame::signing_digest(view)), evidence: evidence.map(Box::new) }
    }

    pub fn verify(&self, cfg: &ProtocolConfig, key: &VerifyKey) -> bool {
        self.blamer.0 < cfg.n && self.auth.signer == self.blamer && key.verify(&self.auth, &Blame::signing_digest(self.view))
    }

    /// The same blame without its evidence, as carried inside certificates.
    pub fn stripped(&self) -> Blame {
        Blame { evidence: None, ..self.clone() }
    }
}

impl Wire for Blame {
    fn encode_to(&self, w: &mut Writer) {
        w.u64(self.view).u32(self.blamer.0);
        self.auth.encode_to(w);
        match &self.evidence {
            Some(e) => {
                w.u8(1);
                e.encode_to(w);
            }
            None => {
                w.u8(0);
            }
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let view = r.u64()?;
        let blamer = ReplicaId(r.u32()?);
        let auth = Auth::decode_from(r)?;
        let evidence = match r.u8()? {
            0 => None,
            1 => Some(Box::new(Evidence::decode_from(r)?)),
            tag => return Err(DecodeError::BadTag { what: "evidence", tag }),
        };
        Ok(Blame { view, blamer, auth, evidence })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BlameCertificate {
    pub view: View,
    pub blames: Vec<Blame>,
}

impl BlameCertificate {
    pub fn verify(&self, cfg: &ProtocolConfig, key: &VerifyKey) -> bool {
        let mut seen = BTreeSet::new();
        for b in &self.blames {
            if b.view != self.view || !seen.insert(b.blamer) || !b.verify(cfg, key) {
                return false;
            }
        }
        seen.len() >= cfg.quorum()
    }
}

impl Wire for BlameCertificate {
    fn encode_to(&self, w: &mut Writer) {
        w.u64(self.view);
        self.blames.encode_to(w);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(BlameCertificate { view: r.u64()?, blames: Vec::decode_from(r)? })
    }
}

/// A replica's locked block, reported to the leader of the view it enters.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Status {
    pub view: View,
    pub locked_block: Block,
    pub cert: Certificate,
    pub sender: ReplicaId,
    pub auth: Auth,
}

impl Status {
    fn signing_digest(view: View, block: &Block, cert: &Certificate) -> Digest {
        let mut w = Writer::new();
        w.raw(b"status").u64(view);
        block.encode_to(&mut w);
        cert.encode_to(&mut w);
        Digest::of(&w.finish())
    }

    pub fn new(signer: &Signer, view: View, locked_block: Block, cert: Certificate) -> Status {
        let auth = signer.sign(&Status::signing_digest(view, &locked_block, &cert));
        Status { view, locked_block, cert, sender: signer.id(), auth }
    }

    pub fn verify(&self, cfg: &ProtocolConfig, key: &VerifyKey) -> bool {
        self.sender.0 < cfg.n
            && self.auth.signer == self.sender
            && key.verify(&self.auth, &Status::signing_digest(self.view, &self.locked_block, &self.cert))
            && self.cert.block == self.locked_block.digest()
            && self.cert.height == self.locked_block.height
            && self.cert.view <= self.view
            && verify_certificate(&self.cert, cfg, key)
    }
}

impl Wire for Status {
    fn encode_to(&self, w: &mut Writer) {
        w.u64(self.view);
        self.locked_block.encode_to(w);
        self.cert.encode_to(w);
        w.u32(self.sender.0);
        self.auth.encode_to(w);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Status {
            view: r.u64()?,
            locked_block: Block::decode_from(r)?,
            cert: Certificate::decode_from(r)?,
            sender: ReplicaId(r.u32()?),
            auth: Auth::decode_from(r)?,
        })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct StatusSet {
    pub view: View,
    pub statuses: Vec<Status>,
}

impl StatusSet {
    pub fn verify(&self, cfg: &ProtocolConfig, key: &VerifyKey) -> bool {
        let mut seen = BTreeSet::new();
        for s in &self.statuses {
            if s.view != self.view || !seen.insert(s.sender) || !s.verify(cfg, key) {
                return false;
            }
        }
        seen.len() >= cfg.quorum()
    }

    /// Highest-ranked status, ties broken by lowest block digest.
    pub fn highest(&self) -> Option<&Status> {
        self.statuses.iter().min_by(|a, b| b.cert.rank().cmp(&a.cert.rank()).then(a.cert.block.cmp(&b.cert.block)))
    }
}

impl Wire for StatusSet {
    fn encode_to(&self, w: &mut Writer) {
        w.u64(self.view);
        self.statuses.encode_to(w);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(StatusSet { view: r.u64()?, statuses: Vec::decode_from(r)? })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Message {
    Proposal(Proposal),
    Vote(Vote),
    Blame(Blame),
    BlameCert(BlameCertificate),
    Status(Status),
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum MessageKind {
    Proposal,
    Vote,
    Blame,
    BlameCert,
    Status,
}

impl MessageKind {
    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Proposal => "proposal",
            MessageKind::Vote => "vote",
            MessageKind::Blame => "blame",
            MessageKind::BlameCert => "blame-cert",
            MessageKind::Status => "status",
        }
    }

    pub fn parse(s: &str) -> Option<MessageKind> {
        [MessageKind::Proposal, MessageKind::Vote, MessageKind::Blame, MessageKind::BlameCert, MessageKind::Status]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Proposal(_) => MessageKind::Proposal,
            Message::Vote(_) => MessageKind::Vote,
            Message::Blame(_) => MessageKind::Blame,
            Message::BlameCert(_) => MessageKind::BlameCert,
            Message::Status(_) => MessageKind::Status,
        }
    }

    pub fn view(&self) -> View {
        match self {
            Message::Proposal(p) => p.view,
            Message::Vote(v) => v.view,
            Message::Blame(b) => b.view,
            Message::BlameCert(c) => c.view,
            Message::Status(s) => s.view,
        }
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.encode())
    }
}

impl Wire for Message {
    fn encode_to(&self, w: &mut Writer) {
        match self {
            Message::Proposal(p) => {
                w.u8(1);
                p.encode_to(w);
            }
            Message::Vote(v) => {
                w.u8(2);
                v.encode_to(w);
            }
            Message::Blame(b) => {
                w.u8(3);
                b.encode_to(w);
            }
            Message::BlameCert(c) => {
                w.u8(4);
                c.encode_to(w);
            }
            Message::Status(s) => {
                w.u8(5);
                s.encode_to(w);
            }
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.u8()? {
            1 => Message::Proposal(Proposal::decode_from(r)?),
            2 => Message::Vote(Vote::decode_from(r)?),
            3 => Message::Blame(Blame::decode_from(r)?),
            4 => Message::BlameCert(BlameCertificate::decode_from(r)?),
            5 => Message::Status(Status::decode_from(r)?),
            tag => return Err(DecodeError::BadTag { what: "message", tag }),
        })
    }
}
