//! Binary record framing and the field-tagged payload encoding.
//!
//! Record: `len: u32 LE | crc32(payload): u32 LE | payload[len]`.
//!
//! Payload: a sequence of fields, each a one-byte tag followed by a value
//! whose type the tag fixes: `u64`/`f64` as 8 bytes LE, `u8` as one byte,
//! strings as `u32 LE` length plus UTF-8 bytes.
//!
//! | tag  | field                 | type   |
//! |------|-----------------------|--------|
//! | 0x01 | entry kind (1 triple, 2 reset, 3 log header, 4 snapshot header, 5 snapshot trailer) | u8 |
//! | 0x10 | triple id             | u64    |
//! | 0x11 | subject id            | string |
//! | 0x12 | subject type          | string |
//! | 0x13 | predicate             | string |
//! | 0x14 | object is entity      | u8     |
//! | 0x15 | object id or value    | string |
//! | 0x16 | object type           | string |
//! | 0x17 | confidence            | f64    |
//! | 0x18 | observed_at_ms        | u64    |
//! | 0x19 | source frame seq      | u64    |
//! | 0x1a | source model id       | string |
//! | 0x1b | epoch                 | u64    |
//! | 0x1c | boxes (x,y,w,h × 2)   | 8 × f64 |
//! | 0x20 | reset: closed epoch   | u64    |
//! | 0x21 | reset: at_ms          | u64    |
//! | 0x30 | format version        | u64    |
//! | 0x31 | base offset           | u64    |
//! | 0x32 | snapshot id           | u64    |
//! | 0x33 | covers_up_to_ms       | u64    |
//! | 0x34 | covers_offset         | u64    |
//! | 0x35 | entry count           | u64    |
//! | 0x36 | body checksum         | u64    |

use std::io::{self, Read, Write};

use crate::triple::{BBox, Entity, Object, Provenance, SemanticTriple};

use super::LogEntry;

pub const FORMAT_VERSION: u64 = 1;
const MAX_RECORD: u32 = 16 * 1024 * 1024;

pub const KIND_TRIPLE: u8 = 1;
pub const KIND_RESET: u8 = 2;
pub const KIND_LOG_HEADER: u8 = 3;
pub const KIND_SNAP_HEADER: u8 = 4;
pub const KIND_SNAP_TRAILER: u8 = 5;

const T_KIND: u8 = 0x01;
const T_ID: u8 = 0x10;
const T_SUBJ: u8 = 0x11;
const T_SUBJ_KIND: u8 = 0x12;
const T_PRED: u8 = 0x13;
const T_OBJ_IS_ENTITY: u8 = 0x14;
const T_OBJ: u8 = 0x15;
const T_OBJ_KIND: u8 = 0x16;
const T_CONF: u8 = 0x17;
const T_AT: u8 = 0x18;
const T_SEQ: u8 = 0x19;
const T_MODEL: u8 = 0x1a;
const T_EPOCH: u8 = 0x1b;
const T_BOXES: u8 = 0x1c;
const T_RESET_EPOCH: u8 = 0x20;
const T_RESET_AT: u8 = 0x21;
pub const T_VERSION: u8 = 0x30;
pub const T_BASE: u8 = 0x31;
pub const T_SNAP_ID: u8 = 0x32;
pub const T_COVERS_MS: u8 = 0x33;
pub const T_COVERS_OFFSET: u8 = 0x34;
pub const T_COUNT: u8 = 0x35;
pub const T_CHECKSUM: u8 = 0x36;

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(kind: u8) -> Self {
        let mut e = Self::default();
        e.u8(T_KIND, kind);
        e
    }

    pub fn u8(&mut self, tag: u8, v: u8) -> &mut Self {
        self.buf.extend_from_slice(&[tag, v]);
        self
    }

    pub fn u64(&mut self, tag: u8, v: u64) -> &mut Self {
        self.buf.push(tag);
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, tag: u8, v: f64) -> &mut Self {
        self.u64(tag, v.to_bits())
    }

    pub fn str(&mut self, tag: u8, v: &str) -> &mut Self {
        self.buf.push(tag);
        self.buf.extend_from_slice(&(v.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(v.as_bytes());
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    U8(u8),
    U64(u64),
    Str(String),
    Boxes([f64; 8]),
}

fn value_type(tag: u8) -> Option<u8> {
    // 0 = u8, 1 = u64/f64, 2 = string, 3 = boxes
    Some(match tag {
        T_KIND | T_OBJ_IS_ENTITY => 0,
        T_ID | T_CONF | T_AT | T_SEQ | T_EPOCH | T_RESET_EPOCH | T_RESET_AT => 1,
        T_VERSION | T_BASE | T_SNAP_ID | T_COVERS_MS | T_COVERS_OFFSET | T_COUNT | T_CHECKSUM => 1,
        T_SUBJ | T_SUBJ_KIND | T_PRED | T_OBJ | T_OBJ_KIND | T_MODEL => 2,
        T_BOXES => 3,
        _ => return None,
    })
}

fn corrupt(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

/// Decodes a payload into (tag, value) pairs.
pub fn fields(payload: &[u8]) -> io::Result<Vec<(u8, Value)>> {
    let mut out = Vec::new();
    let mut i = 0;
    let take = |i: &mut usize, n: usize| -> io::Result<&[u8]> {
        let s = payload
            .get(*i..*i + n)
            .ok_or_else(|| corrupt("truncated field"))?;
        *i += n;
        Ok(s)
    };
    while i < payload.len() {
        let tag = payload[i];
        i += 1;
        let v = match value_type(tag).ok_or_else(|| corrupt(format!("unknown field tag {tag:#x}")))? {
            0 => Value::U8(take(&mut i, 1)?[0]),
            1 => Value::U64(u64::from_le_bytes(take(&mut i, 8)?.try_into().unwrap())),
            2 => {
                let n = u32::from_le_bytes(take(&mut i, 4)?.try_into().unwrap()) as usize;
                let s = std::str::from_utf8(take(&mut i, n)?).map_err(|_| corrupt("invalid utf-8"))?;
                Value::Str(s.to_string())
            }
            _ => {
                let mut b = [0f64; 8];
                for x in &mut b {
                    *x = f64::from_bits(u64::from_le_bytes(take(&mut i, 8)?.try_into().unwrap()));
                }
                Value::Boxes(b)
            }
        };
        out.push((tag, v));
    }
    Ok(out)
}

/// Typed access to decoded fields.
pub struct Fields(Vec<(u8, Value)>);

impl Fields {
    pub fn parse(payload: &[u8]) -> io::Result<Self> {
        fields(payload).map(Self)
    }

    fn get(&self, tag: u8) -> Option<&Value> {
        self.0.iter().find(|(t, _)| *t == tag).map(|(_, v)| v)
    }

    pub fn u8(&self, tag: u8) -> io::Result<u8> {
        match self.get(tag) {
            Some(Value::U8(v)) => Ok(*v),
            _ => Err(corrupt(format!("missing u8 field {tag:#x}"))),
        }
    }

    pub fn u64(&self, tag: u8) -> io::Result<u64> {
        match self.get(tag) {
            Some(Value::U64(v)) => Ok(*v),
            _ => Err(corrupt(format!("missing u64 field {tag:#x}"))),
        }
    }

    pub fn f64(&self, tag: u8) -> io::Result<f64> {
        self.u64(tag).map(f64::from_bits)
    }

    pub fn str(&self, tag: u8) -> io::Result<String> {
        match self.get(tag) {
            Some(Value::Str(v)) => Ok(v.clone()),
            _ => Err(corrupt(format!("missing string field {tag:#x}"))),
        }
    }

    pub fn kind(&self) -> io::Result<u8> {
        self.u8(T_KIND)
    }

    fn boxes(&self) -> Option<[BBox; 2]> {
        match self.get(T_BOXES) {
            Some(Value::Boxes(b)) => Some([
                BBox { x: b[0], y: b[1], w: b[2], h: b[3] },
                BBox { x: b[4], y: b[5], w: b[6], h: b[7] },
            ]),
            _ => None,
        }
    }
}

pub fn encode_entry(e: &LogEntry) -> Vec<u8> {
    match e {
        LogEntry::Triple(t) => encode_triple(t),
        LogEntry::Reset { epoch, at_ms } => {
            let mut enc = Encoder::new(KIND_RESET);
            enc.u64(T_RESET_EPOCH, *epoch).u64(T_RESET_AT, *at_ms);
            enc.finish()
        }
    }
}

fn encode_triple(t: &SemanticTriple) -> Vec<u8> {
    let mut enc = Encoder::new(KIND_TRIPLE);
    enc.u64(T_ID, t.id)
        .str(T_SUBJ, &t.subject.id)
        .str(T_SUBJ_KIND, &t.subject.kind)
        .str(T_PRED, &t.predicate);
    match &t.object {
        Object::Entity(e) => {
            enc.u8(T_OBJ_IS_ENTITY, 1).str(T_OBJ, &e.id).str(T_OBJ_KIND, &e.kind);
        }
        Object::Value(v) => {
            enc.u8(T_OBJ_IS_ENTITY, 0).str(T_OBJ, v);
        }
    }
    enc.f64(T_CONF, t.confidence)
        .u64(T_AT, t.observed_at_ms)
        .u64(T_SEQ, t.source.frame_seq)
        .str(T_MODEL, &t.source.model_id)
        .u64(T_EPOCH, t.epoch);
    let mut out = enc.finish();
    if let Some([a, b]) = t.boxes {
        out.push(T_BOXES);
        for v in [a.x, a.y, a.w, a.h, b.x, b.y, b.w, b.h] {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    out
}

pub fn decode_entry(payload: &[u8]) -> io::Result<LogEntry> {
    let f = Fields::parse(payload)?;
    match f.kind()? {
        KIND_TRIPLE => {
            let object = if f.u8(T_OBJ_IS_ENTITY)? == 1 {
                Object::Entity(Entity::new(f.str(T_OBJ)?, f.str(T_OBJ_KIND)?))
            } else {
                Object::Value(f.str(T_OBJ)?)
            };
            Ok(LogEntry::Triple(SemanticTriple {
                id: f.u64(T_ID)?,
                subject: Entity::new(f.str(T_SUBJ)?, f.str(T_SUBJ_KIND)?),
                predicate: f.str(T_PRED)?,
                object,
                confidence: f.f64(T_CONF)?,
                observed_at_ms: f.u64(T_AT)?,
                source: Provenance {
                    frame_seq: f.u64(T_SEQ)?,
                    model_id: f.str(T_MODEL)?,
                },
                epoch: f.u64(T_EPOCH)?,
                boxes: f.boxes(),
            }))
        }
        KIND_RESET => Ok(LogEntry::Reset {
            epoch: f.u64(T_RESET_EPOCH)?,
            at_ms: f.u64(T_RESET_AT)?,
        }),
        k => Err(corrupt(format!("unexpected entry kind {k}"))),
    }
}

pub fn write_record(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    w.write_all(&(payload.len() as u32).to_le_bytes())?;
    w.write_all(&crc32fast::hash(payload).to_le_bytes())?;
    w.write_all(payload)
}

/// Reads the next record. `Ok(None)` means clean end of input; a torn or
/// corrupt record is an error.
pub fn read_record(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut head = [0u8; 8];
    let mut got = 0;
    while got < head.len() {
        match r.read(&mut head[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "torn record header")),
            n => got += n,
        }
    }
    let len = u32::from_le_bytes(head[..4].try_into().unwrap());
    let crc = u32::from_le_bytes(head[4..].try_into().unwrap());
    if len > MAX_RECORD {
        return Err(corrupt(format!("record length {len} exceeds limit")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    if crc32fast::hash(&payload) != crc {
        return Err(corrupt("record checksum mismatch"));
    }
    Ok(Some(payload))
}

/// Encoded size of a record holding `payload`.
pub fn record_len(payload: &[u8]) -> u64 {
    8 + payload.len() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triple::fixtures::{ent, triple, val};

    #[test]
    fn entries_round_trip() {
        let mut t = triple(7, ("car1", "vehicle"), "collided_with", ent("p1", "person"), 1234);
        t.confidence = 0.25;
        t.epoch = 3;
        t.boxes = Some([BBox { x: 0.1, y: 0.2, w: 0.3, h: 0.4 }, BBox { x: 0.5, y: 0.6, w: 0.1, h: 0.1 }]);
        let entries = [
            LogEntry::Triple(t),
            LogEntry::Triple(triple(8, ("p1", "person"), "lying_on", val("road"), 1300)),
            LogEntry::Reset { epoch: 3, at_ms: 1400 },
        ];
        for e in entries {
            assert_eq!(decode_entry(&encode_entry(&e)).unwrap(), e);
        }
    }

    #[test]
    fn records_detect_corruption_and_tears() {
        let mut buf = Vec::new();
        write_record(&mut buf, b"hello").unwrap();
        write_record(&mut buf, b"world").unwrap();
        let mut r = &buf[..];
        assert_eq!(read_record(&mut r).unwrap().unwrap(), b"hello");
        assert_eq!(read_record(&mut r).unwrap().unwrap(), b"world");
        assert!(read_record(&mut r).unwrap().is_none());

        let torn = &buf[..buf.len() - 2];
        let mut r = torn;
        read_record(&mut r).unwrap();
        assert!(read_record(&mut r).is_err());

        let mut flipped = buf.clone();
        flipped[10] ^= 0xff;
        assert!(read_record(&mut &flipped[..]).is_err());
    }

    #[test]
    fn unknown_tag_is_rejected() {
        assert!(fields(&[0x7f, 0]).is_err());
        assert!(fields(&[T_ID, 1, 2]).is_err());
    }
}
