// SPDX-License-Identifier: Apache-2.0

use super::WireError;

/// Encoded size of [`MessageHeader`].
pub const HEADER_LEN: usize = 25;

/// Offset at which the body document (and its length prefix) begins.
pub const PAYLOAD_OFFSET: usize = 21;

/// The seven-field message header.
///
/// | offset | size | field          |
/// |--------|------|----------------|
/// | 0      | 4    | `length`       |
/// | 4      | 4    | `request_id`   |
/// | 8      | 4    | `response_to`  |
/// | 12     | 4    | `op_code`      |
/// | 16     | 4    | `flags`        |
/// | 20     | 1    | `payload_type` |
/// | 21     | 4    | `payload_size` |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MessageHeader {
    pub length: u32,
    pub request_id: i32,
    pub response_to: i32,
    pub op_code: i32,
    pub flags: u32,
    pub payload_type: u8,
    pub payload_size: u32,
}

pub fn encode_header(h: &MessageHeader) -> [u8; HEADER_LEN] {
    let mut out = [0u8; HEADER_LEN];
    out[0..4].copy_from_slice(&h.length.to_le_bytes());
    out[4..8].copy_from_slice(&h.request_id.to_le_bytes());
    out[8..12].copy_from_slice(&h.response_to.to_le_bytes());
    out[12..16].copy_from_slice(&h.op_code.to_le_bytes());
    out[16..20].copy_from_slice(&h.flags.to_le_bytes());
    out[20] = h.payload_type;
    out[21..25].copy_from_slice(&h.payload_size.to_le_bytes());
    out
}

/// Decodes the first [`HEADER_LEN`] bytes of `bytes`; trailing bytes are ignored.
pub fn decode_header(bytes: &[u8]) -> Result<MessageHeader, WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::TruncatedHeader(bytes.len()));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let i32_at = |at: usize| i32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    Ok(MessageHeader {
        length: u32_at(0),
        request_id: i32_at(4),
        response_to: i32_at(8),
        op_code: i32_at(12),
        flags: u32_at(16),
        payload_type: bytes[20],
        payload_size: u32_at(21),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Packed by hand with struct.pack('<IiiiIBI', ...).
    const PACKED: [u8; 25] = [
        0x1a, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xdd, 0x07, 0x00,
        0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x05, 0x00, 0x00, 0x00,
    ];

    fn sample() -> MessageHeader {
        MessageHeader {
            length: 26,
            request_id: 1,
            response_to: 0,
            op_code: 2013,
            flags: 0,
            payload_type: 0,
            payload_size: 5,
        }
    }

    #[test]
    fn encodes_packed_layout() {
        let bytes = encode_header(&sample());
        assert_eq!(bytes, PACKED);
        assert_eq!(&bytes[0..4], &[0x1a, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[0xdd, 0x07, 0, 0]);
    }

    #[test]
    fn decodes_packed_layout() {
        assert_eq!(decode_header(&PACKED).unwrap(), sample());
    }

    #[test]
    fn short_input_is_truncated() {
        assert!(matches!(
            decode_header(&PACKED[..24]),
            Err(WireError::TruncatedHeader(24))
        ));
        assert!(matches!(decode_header(&[]), Err(WireError::TruncatedHeader(0))));
    }

    proptest! {
        #[test]
        fn header_round_trip(
            length: u32, request_id: i32, response_to: i32, op_code: i32,
            flags: u32, payload_type: u8, payload_size: u32,
        ) {
            let h = MessageHeader { length, request_id, response_to, op_code, flags, payload_type, payload_size };
            prop_assert_eq!(decode_header(&encode_header(&h)).unwrap(), h);
        }
    }
}
