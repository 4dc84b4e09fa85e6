// SPDX-License-Identifier: Apache-2.0

//! Byte-level wire format: the 25-byte message header, the document
//! payload codec, and message framing over a byte stream.
//!
//! All multi-byte integers are little-endian. The last four header bytes
//! (`payload_size`) are also the length prefix of the body document, so a
//! message is `21 + payload_size` bytes long when it carries a single
//! kind-0 document.

mod document;
mod frame;
mod header;

pub use document::{decode_document, encode_document, Document, Value};
pub use frame::{read_message, write_message, RawMessage, DEFAULT_MAX_MESSAGE_BYTES};
pub use header::{decode_header, encode_header, MessageHeader, HEADER_LEN, PAYLOAD_OFFSET};

use thiserror::Error;

/// Operation code carrying data manipulation commands and their replies.
pub const OP_MSG: i32 = 2013;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("truncated header: need {HEADER_LEN} bytes, have {0}")]
    TruncatedHeader(usize),
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("unsupported value: {0}")]
    UnsupportedType(String),
    #[error("connection closed")]
    ConnectionClosed,
    #[error("truncated message: expected {expected} bytes, got {got}")]
    TruncatedMessage { expected: usize, got: usize },
    #[error("message of {length} bytes exceeds the {max} byte limit")]
    OversizeMessage { length: u64, max: usize },
    #[error("inconsistent message: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl WireError {
    pub(crate) fn malformed(msg: impl Into<String>) -> Self {
        WireError::MalformedDocument(msg.into())
    }
}
