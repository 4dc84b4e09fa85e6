// SPDX-License-Identifier: Apache-2.0

use bytes::Bytes;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use super::{
    decode_document, decode_header, encode_document, encode_header, Document, MessageHeader,
    WireError, HEADER_LEN, OP_MSG, PAYLOAD_OFFSET,
};

pub const DEFAULT_MAX_MESSAGE_BYTES: usize = 16 * 1024 * 1024;

/// One framed message: its header and every byte after offset 21.
///
/// For single-document messages the body is exactly the encoded document,
/// whose length prefix is the header's `payload_size`. Anything else (extra
/// sections, checksums, foreign op codes) is carried opaquely.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMessage {
    header: MessageHeader,
    body: Bytes,
}

impl RawMessage {
    /// Builds a message around `body`, deriving `length` and `payload_size`.
    pub fn new(
        request_id: i32,
        response_to: i32,
        op_code: i32,
        flags: u32,
        payload_type: u8,
        body: impl Into<Bytes>,
    ) -> Result<Self, WireError> {
        let body = body.into();
        if body.len() < HEADER_LEN - PAYLOAD_OFFSET {
            return Err(WireError::Inconsistent(format!(
                "body of {} bytes cannot hold the payload size field",
                body.len()
            )));
        }
        let length = u32::try_from(PAYLOAD_OFFSET + body.len())
            .map_err(|_| WireError::Inconsistent("message exceeds 4 GiB".into()))?;
        let header = MessageHeader {
            length,
            request_id,
            response_to,
            op_code,
            flags,
            payload_type,
            payload_size: u32::from_le_bytes(body[..4].try_into().unwrap()),
        };
        Ok(RawMessage { header, body })
    }

    /// A single-document manipulation message with no flags set.
    pub fn command(request_id: i32, response_to: i32, doc: &Document) -> Result<Self, WireError> {
        Self::new(request_id, response_to, OP_MSG, 0, 0, encode_document(doc)?)
    }

    /// Pairs a decoded header with its body, checking they agree.
    pub fn from_parts(header: MessageHeader, body: Bytes) -> Result<Self, WireError> {
        if header.length as usize != PAYLOAD_OFFSET + body.len() {
            return Err(WireError::Inconsistent(format!(
                "header length {} but body of {} bytes",
                header.length,
                body.len()
            )));
        }
        if body.len() < 4 || body[..4] != header.payload_size.to_le_bytes() {
            return Err(WireError::Inconsistent(
                "payload_size disagrees with body prefix".into(),
            ));
        }
        Ok(RawMessage { header, body })
    }

    /// Parses one complete message from `bytes`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let header = decode_header(bytes)?;
        let length = header.length as usize;
        if length < HEADER_LEN {
            return Err(WireError::TruncatedHeader(length));
        }
        if bytes.len() != length {
            return Err(WireError::TruncatedMessage {
                expected: length,
                got: bytes.len(),
            });
        }
        Self::from_parts(header, Bytes::copy_from_slice(&bytes[PAYLOAD_OFFSET..]))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header.length as usize);
        out.extend_from_slice(&encode_header(&self.header)[..PAYLOAD_OFFSET]);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn header(&self) -> &MessageHeader {
        &self.header
    }

    pub fn body(&self) -> &Bytes {
        &self.body
    }

    /// True when the body is exactly one kind-0 document and nothing else.
    pub fn is_single_document(&self) -> bool {
        self.header.payload_type == 0 && self.header.payload_size as usize == self.body.len()
    }

    /// Decodes the kind-0 body document.
    pub fn document(&self) -> Result<Document, WireError> {
        if self.header.payload_type != 0 {
            return Err(WireError::malformed(format!(
                "payload type {} is not a body document",
                self.header.payload_type
            )));
        }
        let size = self.header.payload_size as usize;
        if size > self.body.len() {
            return Err(WireError::malformed("payload_size exceeds message"));
        }
        decode_document(&self.body[..size])
    }
}

/// Reads one message, handling partial reads.
///
/// A clean EOF before the first byte yields `ConnectionClosed`; EOF anywhere
/// else yields `TruncatedMessage`.
pub async fn read_message<R>(stream: &mut R, max_bytes: usize) -> Result<RawMessage, WireError>
where
    R: AsyncRead + Unpin,
{
    let mut prefix = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        let n = stream.read(&mut prefix[filled..]).await?;
        if n == 0 {
            return Err(if filled == 0 {
                WireError::ConnectionClosed
            } else {
                WireError::TruncatedMessage {
                    expected: 4,
                    got: filled,
                }
            });
        }
        filled += n;
    }
    let length = u32::from_le_bytes(prefix) as usize;
    if length > max_bytes {
        return Err(WireError::OversizeMessage {
            length: length as u64,
            max: max_bytes,
        });
    }
    if length < HEADER_LEN {
        return Err(WireError::TruncatedHeader(length));
    }
    let mut buf = vec![0u8; length];
    buf[..4].copy_from_slice(&prefix);
    let mut got = 4;
    while got < length {
        let n = stream.read(&mut buf[got..]).await?;
        if n == 0 {
            return Err(WireError::TruncatedMessage {
                expected: length,
                got,
            });
        }
        got += n;
    }
    RawMessage::from_bytes(&buf)
}

pub async fn write_message<W>(stream: &mut W, msg: &RawMessage) -> Result<(), WireError>
where
    W: AsyncWrite + Unpin,
{
    let bytes = msg.to_bytes();
    stream.write_all(&bytes).await.map_err(closed_or_io)?;
    stream.flush().await.map_err(closed_or_io)?;
    Ok(())
}

fn closed_or_io(e: std::io::Error) -> WireError {
    use std::io::ErrorKind::*;
    match e.kind() {
        BrokenPipe | ConnectionReset | ConnectionAborted | UnexpectedEof | WriteZero => {
            WireError::ConnectionClosed
        }
        _ => WireError::Io(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::pin::Pin;
    use std::task::{Context, Poll};
    use tokio::io::ReadBuf;

    /// Yields at most `chunk` bytes per read.
    struct Trickle {
        data: Vec<u8>,
        pos: usize,
        chunk: usize,
    }

    impl AsyncRead for Trickle {
        fn poll_read(
            mut self: Pin<&mut Self>,
            _cx: &mut Context<'_>,
            buf: &mut ReadBuf<'_>,
        ) -> Poll<std::io::Result<()>> {
            let n = self
                .chunk
                .min(buf.remaining())
                .min(self.data.len() - self.pos);
            let start = self.pos;
            buf.put_slice(&self.data[start..start + n]);
            self.pos += n;
            Poll::Ready(Ok(()))
        }
    }

    fn ping(id: i32) -> RawMessage {
        RawMessage::command(id, 0, &Document::new().with("ping", 1)).unwrap()
    }

    fn rt() -> tokio::runtime::Runtime {
        tokio::runtime::Builder::new_current_thread().build().unwrap()
    }

    #[test]
    fn back_to_back_messages_in_one_chunk() {
        rt().block_on(async {
            let (a, b) = (ping(1), ping(2));
            let mut data = a.to_bytes();
            data.extend(b.to_bytes());
            let mut s = data.as_slice();
            assert_eq!(read_message(&mut s, DEFAULT_MAX_MESSAGE_BYTES).await.unwrap(), a);
            assert_eq!(read_message(&mut s, DEFAULT_MAX_MESSAGE_BYTES).await.unwrap(), b);
            assert!(matches!(
                read_message(&mut s, DEFAULT_MAX_MESSAGE_BYTES).await,
                Err(WireError::ConnectionClosed)
            ));
        });
    }

    #[test]
    fn one_byte_at_a_time() {
        rt().block_on(async {
            let m = ping(9);
            let mut s = Trickle {
                data: m.to_bytes(),
                pos: 0,
                chunk: 1,
            };
            assert_eq!(read_message(&mut s, DEFAULT_MAX_MESSAGE_BYTES).await.unwrap(), m);
        });
    }

    #[test]
    fn oversize_is_rejected_before_reading_the_body() {
        rt().block_on(async {
            let mut data = (1u32 << 31).to_le_bytes().to_vec();
            data.extend([0u8; 32]);
            let mut s = data.as_slice();
            assert!(matches!(
                read_message(&mut s, DEFAULT_MAX_MESSAGE_BYTES).await,
                Err(WireError::OversizeMessage { length, .. }) if length == 1 << 31
            ));
        });
    }

    #[test]
    fn eof_mid_message_is_truncation() {
        rt().block_on(async {
            let bytes = ping(3).to_bytes();
            for cut in 1..bytes.len() {
                let mut s = &bytes[..cut];
                assert!(matches!(
                    read_message(&mut s, DEFAULT_MAX_MESSAGE_BYTES).await,
                    Err(WireError::TruncatedMessage { .. })
                ));
            }
        });
    }

    #[test]
    fn zero_payload_control_message() {
        rt().block_on(async {
            // Empty document: the smallest legal kind-0 message.
            let m = RawMessage::new(4, 0, OP_MSG, 0, 0, vec![5, 0, 0, 0, 0]).unwrap();
            assert_eq!(m.header().length, 26);
            let mut out = Vec::new();
            write_message(&mut out, &m).await.unwrap();
            assert_eq!(out.len(), 26);
            let mut s = out.as_slice();
            assert_eq!(read_message(&mut s, 26).await.unwrap(), m);
        });
    }

    #[test]
    fn maximum_size_boundary() {
        rt().block_on(async {
            let max = 4096;
            let body_len = max - PAYLOAD_OFFSET;
            let mut body = vec![0xabu8; body_len];
            body[..4].copy_from_slice(&(body_len as u32).to_le_bytes());
            let m = RawMessage::new(1, 0, 1, 0, 0, body.clone()).unwrap();
            let mut out = Vec::new();
            write_message(&mut out, &m).await.unwrap();
            // Oracle: header bytes laid out by hand, then the body verbatim.
            let mut expected = Vec::new();
            expected.extend((max as u32).to_le_bytes());
            expected.extend(1i32.to_le_bytes());
            expected.extend(0i32.to_le_bytes());
            expected.extend(1i32.to_le_bytes());
            expected.extend(0u32.to_le_bytes());
            expected.push(0);
            expected.extend(&body);
            assert_eq!(out, expected);
            let mut s = out.as_slice();
            assert_eq!(read_message(&mut s, max).await.unwrap(), m);
            let mut s = out.as_slice();
            assert!(matches!(
                read_message(&mut s, max - 1).await,
                Err(WireError::OversizeMessage { .. })
            ));
        });
    }

    #[test]
    fn undersized_length_field() {
        rt().block_on(async {
            let mut data = 20u32.to_le_bytes().to_vec();
            data.extend([0u8; 16]);
            let mut s = data.as_slice();
            assert!(matches!(
                read_message(&mut s, 1024).await,
                Err(WireError::TruncatedHeader(20))
            ));
        });
    }

    fn arb_message() -> impl Strategy<Value = RawMessage> {
        (
            any::<i32>(),
            any::<i32>(),
            any::<i32>(),
            any::<u32>(),
            any::<u8>(),
            prop::collection::vec(any::<u8>(), 4..256),
        )
            .prop_map(|(id, to, op, flags, kind, body)| {
                RawMessage::new(id, to, op, flags, kind, body).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn framing_round_trip_any_chunking(
            msgs in prop::collection::vec(arb_message(), 1..6),
            chunk in 1usize..64,
        ) {
            let back = rt().block_on(async {
                let mut data = Vec::new();
                for m in &msgs {
                    write_message(&mut data, m).await.unwrap();
                }
                let mut s = Trickle { data, pos: 0, chunk };
                let mut back = Vec::new();
                loop {
                    match read_message(&mut s, DEFAULT_MAX_MESSAGE_BYTES).await {
                        Ok(m) => back.push(m),
                        Err(WireError::ConnectionClosed) => break,
                        Err(e) => panic!("{e}"),
                    }
                }
                back
            });
            prop_assert_eq!(back, msgs);
        }
    }
}
