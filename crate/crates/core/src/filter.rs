// SPDX-License-Identifier: Apache-2.0

//! Flow classification for both proxy legs.

use crate::engine::PendingTable;
use crate::wire::{RawMessage, OP_MSG};

/// Command names that make an op-2013 message part of the manipulation flow.
pub const MANIPULATION_KEYWORDS: [&str; 4] = ["find", "insert", "update", "delete"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlowClass {
    /// Client data operations (MF).
    Manipulation,
    /// Server replies to tracked manipulation requests (RF).
    Response,
    /// Everything else, relayed untouched (CF).
    Coordination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    FromClient,
    FromServer,
}

/// Client leg: `Manipulation` or `Coordination`.
pub fn classify_client(m: &RawMessage) -> FlowClass {
    if m.header().op_code != OP_MSG {
        return FlowClass::Coordination;
    }
    match m.document() {
        Ok(doc) => match doc.first() {
            Some((name, _)) if MANIPULATION_KEYWORDS.contains(&name) => FlowClass::Manipulation,
            _ => FlowClass::Coordination,
        },
        Err(_) => FlowClass::Coordination,
    }
}

/// Server leg: `Response` when the message answers a tracked request.
pub fn classify_server(m: &RawMessage, pending: &PendingTable) -> FlowClass {
    if pending.contains(m.header().response_to) {
        FlowClass::Response
    } else {
        FlowClass::Coordination
    }
}

pub fn classify(direction: Direction, m: &RawMessage, pending: &PendingTable) -> FlowClass {
    match direction {
        Direction::FromClient => classify_client(m),
        Direction::FromServer => classify_server(m, pending),
    }
}
