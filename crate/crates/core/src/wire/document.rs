// SPDX-License-Identifier: Apache-2.0

use super::WireError;

const TAG_DOUBLE: u8 = 0x01;
const TAG_STRING: u8 = 0x02;
const TAG_DOCUMENT: u8 = 0x03;
const TAG_ARRAY: u8 = 0x04;
const TAG_BOOL: u8 = 0x08;
const TAG_NULL: u8 = 0x0A;
const TAG_INT32: u8 = 0x10;
const TAG_INT64: u8 = 0x12;

/// Nesting limit applied while decoding untrusted input.
const MAX_DEPTH: usize = 100;

/// A value in the supported binary-document subset.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Double(f64),
    String(String),
    Document(Document),
    Array(Vec<Value>),
    Boolean(bool),
    Null,
    Int32(i32),
    Int64(i64),
}

impl Value {
    pub fn tag(&self) -> u8 {
        match self {
            Value::Double(_) => TAG_DOUBLE,
            Value::String(_) => TAG_STRING,
            Value::Document(_) => TAG_DOCUMENT,
            Value::Array(_) => TAG_ARRAY,
            Value::Boolean(_) => TAG_BOOL,
            Value::Null => TAG_NULL,
            Value::Int32(_) => TAG_INT32,
            Value::Int64(_) => TAG_INT64,
        }
    }

    pub fn as_document(&self) -> Option<&Document> {
        match self {
            Value::Document(d) => Some(d),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[Value]> {
        match self {
            Value::Array(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::String(s) => Some(s),
            _ => None,
        }
    }

    /// Numeric view of int32, int64 and double values.
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Double(v) => Some(v),
            Value::Int32(v) => Some(v as f64),
            Value::Int64(v) => Some(v as f64),
            _ => None,
        }
    }

    /// Integral view of int32, int64 and integer-valued doubles.
    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            Value::Int32(v) => Some(v as i64),
            Value::Int64(v) => Some(v),
            Value::Double(v)
                if v.fract() == 0.0 && v >= i64::MIN as f64 && v < i64::MAX as f64 =>
            {
                Some(v as i64)
            }
            _ => None,
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Double(v)
    }
}
impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::String(v.to_owned())
    }
}
impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::String(v)
    }
}
impl From<Document> for Value {
    fn from(v: Document) -> Self {
        Value::Document(v)
    }
}
impl From<Vec<Value>> for Value {
    fn from(v: Vec<Value>) -> Self {
        Value::Array(v)
    }
}
impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Boolean(v)
    }
}
impl From<i32> for Value {
    fn from(v: i32) -> Self {
        Value::Int32(v)
    }
}
impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int64(v)
    }
}

/// Ordered field-to-value map. Field order is significant and preserved.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    fields: Vec<(String, Value)>,
}

impl Document {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a field, builder style.
    pub fn with(mut self, name: impl Into<String>, value: impl Into<Value>) -> Self {
        self.push(name, value);
        self
    }

    pub fn push(&mut self, name: impl Into<String>, value: impl Into<Value>) {
        self.fields.push((name.into(), value.into()));
    }

    /// Replaces the first field named `name`, or appends it.
    pub fn set(&mut self, name: &str, value: impl Into<Value>) {
        let value = value.into();
        match self.fields.iter_mut().find(|(n, _)| n == name) {
            Some((_, slot)) => *slot = value,
            None => self.fields.push((name.to_owned(), value)),
        }
    }

    /// First field with the given name.
    pub fn get(&self, name: &str) -> Option<&Value> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn first(&self) -> Option<(&str, &Value)> {
        self.fields.first().map(|(n, v)| (n.as_str(), v))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.fields.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

impl FromIterator<(String, Value)> for Document {
    fn from_iter<T: IntoIterator<Item = (String, Value)>>(iter: T) -> Self {
        Document {
            fields: iter.into_iter().collect(),
        }
    }
}

/// Encodes `doc` as a length-prefixed, zero-terminated element list.
pub fn encode_document(doc: &Document) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(64);
    write_document(&mut out, doc.iter())?;
    Ok(out)
}

fn write_document<'a>(
    out: &mut Vec<u8>,
    elements: impl Iterator<Item = (&'a str, &'a Value)>,
) -> Result<(), WireError> {
    let start = out.len();
    out.extend_from_slice(&[0; 4]);
    for (name, value) in elements {
        out.push(value.tag());
        write_cstring(out, name)?;
        write_value(out, value)?;
    }
    out.push(0);
    let len = i32::try_from(out.len() - start)
        .map_err(|_| WireError::UnsupportedType("document exceeds 2 GiB".into()))?;
    out[start..start + 4].copy_from_slice(&len.to_le_bytes());
    Ok(())
}

fn write_cstring(out: &mut Vec<u8>, s: &str) -> Result<(), WireError> {
    if s.as_bytes().contains(&0) {
        return Err(WireError::UnsupportedType(format!(
            "field name {s:?} contains NUL"
        )));
    }
    out.extend_from_slice(s.as_bytes());
    out.push(0);
    Ok(())
}

fn write_value(out: &mut Vec<u8>, value: &Value) -> Result<(), WireError> {
    match value {
        Value::Double(v) => out.extend_from_slice(&v.to_le_bytes()),
        Value::String(s) => {
            let len = i32::try_from(s.len() + 1)
                .map_err(|_| WireError::UnsupportedType("string exceeds 2 GiB".into()))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(s.as_bytes());
            out.push(0);
        }
        Value::Document(d) => write_document(out, d.iter())?,
        Value::Array(items) => {
            let names: Vec<String> = (0..items.len()).map(|i| i.to_string()).collect();
            write_document(out, names.iter().map(String::as_str).zip(items.iter()))?;
        }
        Value::Boolean(b) => out.push(*b as u8),
        Value::Null => {}
        Value::Int32(v) => out.extend_from_slice(&v.to_le_bytes()),
        Value::Int64(v) => out.extend_from_slice(&v.to_le_bytes()),
    }
    Ok(())
}

/// Decodes exactly one document occupying all of `bytes`.
pub fn decode_document(bytes: &[u8]) -> Result<Document, WireError> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let doc = cursor.document(0)?;
    if cursor.pos != bytes.len() {
        return Err(WireError::malformed(format!(
            "{} trailing bytes after document",
            bytes.len() - cursor.pos
        )));
    }
    Ok(doc)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| {
                WireError::malformed(format!("need {n} bytes at offset {}", self.pos))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn i32(&mut self) -> Result<i32, WireError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, WireError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn cstring(&mut self) -> Result<String, WireError> {
        let rest = &self.bytes[self.pos..];
        let nul = rest
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| WireError::malformed("unterminated field name"))?;
        let s = std::str::from_utf8(&rest[..nul])
            .map_err(|_| WireError::malformed("field name is not UTF-8"))?
            .to_owned();
        self.pos += nul + 1;
        Ok(s)
    }

    /// Reads a length-prefixed document and returns its (name, value) list.
    fn elements(&mut self, depth: usize) -> Result<Vec<(String, Value)>, WireError> {
        if depth > MAX_DEPTH {
            return Err(WireError::malformed("nesting too deep"));
        }
        let start = self.pos;
        let len = self.i32()?;
        if len < 5 {
            return Err(WireError::malformed(format!("bad length prefix {len}")));
        }
        let end = start
            .checked_add(len as usize)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| {
                WireError::malformed(format!(
                    "length prefix {len} exceeds available {} bytes",
                    self.bytes.len() - start
                ))
            })?;
        // Confine reads of nested elements to the declared extent.
        let outer = self.bytes;
        self.bytes = &outer[..end];
        let result = self.element_list(depth);
        self.bytes = outer;
        let fields = result?;
        if self.pos != end {
            return Err(WireError::malformed("document length prefix mismatch"));
        }
        Ok(fields)
    }

    fn element_list(&mut self, depth: usize) -> Result<Vec<(String, Value)>, WireError> {
        let mut fields = Vec::new();
        loop {
            let tag = self
                .u8()
                .map_err(|_| WireError::malformed("missing terminator"))?;
            if tag == 0 {
                if self.pos != self.bytes.len() {
                    return Err(WireError::malformed("terminator before declared end"));
                }
                return Ok(fields);
            }
            let name = self.cstring()?;
            let value = self.value(tag, depth)?;
            fields.push((name, value));
        }
    }

    fn document(&mut self, depth: usize) -> Result<Document, WireError> {
        Ok(Document {
            fields: self.elements(depth)?,
        })
    }

    fn value(&mut self, tag: u8, depth: usize) -> Result<Value, WireError> {
        Ok(match tag {
            TAG_DOUBLE => Value::Double(f64::from_le_bytes(self.take(8)?.try_into().unwrap())),
            TAG_STRING => {
                let len = self.i32()?;
                if len < 1 {
                    return Err(WireError::malformed(format!("bad string length {len}")));
                }
                let raw = self.take(len as usize)?;
                let (text, nul) = raw.split_at(raw.len() - 1);
                if nul != [0] {
                    return Err(WireError::malformed("unterminated string"));
                }
                Value::String(
                    std::str::from_utf8(text)
                        .map_err(|_| WireError::malformed("string is not UTF-8"))?
                        .to_owned(),
                )
            }
            TAG_DOCUMENT => Value::Document(self.document(depth + 1)?),
            TAG_ARRAY => Value::Array(
                self.elements(depth + 1)?
                    .into_iter()
                    .map(|(_, v)| v)
                    .collect(),
            ),
            TAG_BOOL => match self.u8()? {
                0 => Value::Boolean(false),
                1 => Value::Boolean(true),
                b => return Err(WireError::malformed(format!("bad boolean byte {b:#04x}"))),
            },
            TAG_NULL => Value::Null,
            TAG_INT32 => Value::Int32(self.i32()?),
            TAG_INT64 => Value::Int64(self.i64()?),
            other => return Err(WireError::malformed(format!("unknown tag {other:#04x}"))),
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    // Frozen from an independent struct.pack encoder.
    const FIND_RANDOM_PHRASES: &str =
        "1d0000000266696e64000e00000072616e646f6d5068726173657300 00";
    const FIND_EQ_42: &str = "3d0000000266696e64000e00000072616e646f6d50687261736573000366696c7465720018000000035f6964000e00000010246571002a000000000000";

    fn hex(s: &str) -> Vec<u8> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
            .collect()
    }

    #[test]
    fn empty_document() {
        assert_eq!(encode_document(&Document::new()).unwrap(), [5, 0, 0, 0, 0]);
        assert_eq!(decode_document(&[5, 0, 0, 0, 0]).unwrap(), Document::new());
    }

    #[test]
    fn find_command_bytes() {
        let doc = Document::new().with("find", "randomPhrases");
        let bytes = encode_document(&doc).unwrap();
        assert_eq!(bytes, hex(FIND_RANDOM_PHRASES));
        assert_eq!(bytes.len(), 29);
        assert_eq!(i32::from_le_bytes(bytes[..4].try_into().unwrap()), 29);
        assert_eq!(decode_document(&bytes).unwrap(), doc);
    }

    #[test]
    fn nested_filter_bytes() {
        let doc = Document::new().with("find", "randomPhrases").with(
            "filter",
            Document::new().with("_id", Document::new().with("$eq", 42)),
        );
        assert_eq!(encode_document(&doc).unwrap(), hex(FIND_EQ_42));
    }

    #[test]
    fn rejects_malformed() {
        let good = hex(FIND_EQ_42);
        for cut in 0..good.len() {
            assert!(
                matches!(
                    decode_document(&good[..cut]),
                    Err(WireError::MalformedDocument(_))
                ),
                "prefix of {cut} bytes decoded"
            );
        }
        // Missing terminator.
        assert!(decode_document(&[5, 0, 0, 0, 1]).is_err());
        // Length prefix smaller than minimum.
        assert!(decode_document(&[4, 0, 0, 0, 0]).is_err());
        // Unknown tag.
        assert!(decode_document(&[8, 0, 0, 0, 0x07, b'a', 0, 0]).is_err());
        // Unterminated string.
        let mut bad = encode_document(&Document::new().with("a", "bc")).unwrap();
        let idx = bad.len() - 2;
        bad[idx] = b'x';
        assert!(decode_document(&bad).is_err());
    }

    #[test]
    fn rejects_nul_field_name() {
        let doc = Document::new().with("a\0b", 1);
        assert!(matches!(
            encode_document(&doc),
            Err(WireError::UnsupportedType(_))
        ));
    }

    #[test]
    fn deep_nesting_is_an_error_not_a_stack_overflow() {
        let mut doc = Document::new();
        for _ in 0..(MAX_DEPTH + 5) {
            doc = Document::new().with("d", doc);
        }
        let bytes = encode_document(&doc).unwrap();
        assert!(decode_document(&bytes).is_err());
    }

    #[test]
    fn arrays_round_trip_in_order() {
        let doc = Document::new().with(
            "xs",
            vec![Value::Int32(3), Value::from("two"), Value::Null, Value::Int64(-1)],
        );
        let back = decode_document(&encode_document(&doc).unwrap()).unwrap();
        assert_eq!(back, doc);
    }

    pub(crate) fn arb_name() -> impl Strategy<Value = String> {
        "[a-zA-Z_$][a-zA-Z0-9_]{0,8}"
    }

    pub(crate) fn arb_value() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            any::<f64>()
                .prop_filter("NaN never equals itself", |v| !v.is_nan())
                .prop_map(Value::Double),
            ".{0,16}".prop_map(Value::String),
            any::<bool>().prop_map(Value::Boolean),
            Just(Value::Null),
            any::<i32>().prop_map(Value::Int32),
            any::<i64>().prop_map(Value::Int64),
        ];
        leaf.prop_recursive(4, 48, 6, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..6).prop_map(Value::Array),
                prop::collection::vec((arb_name(), inner), 0..6)
                    .prop_map(|f| Value::Document(f.into_iter().collect())),
            ]
        })
    }

    pub(crate) fn arb_document() -> impl Strategy<Value = Document> {
        prop::collection::vec((arb_name(), arb_value()), 0..8).prop_map(|f| f.into_iter().collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn document_round_trip(doc in arb_document()) {
            let bytes = encode_document(&doc).unwrap();
            prop_assert_eq!(i32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize, bytes.len());
            prop_assert_eq!(*bytes.last().unwrap(), 0);
            prop_assert_eq!(decode_document(&bytes).unwrap(), doc);
        }

        #[test]
        fn random_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
            let _ = decode_document(&bytes);
        }
    }
}
