//! Binary columnar block: a little-endian, column-major table.
//!
//! ```text
//! magic    4 bytes  "HOCB"
//! version  u16      1
//! columns  u32
//! rows     u64
//! per column descriptor:
//!   name length u32, name bytes (UTF-8), type tag u8 (0 = slot, 1 = number)
//! per column payload, in descriptor order:
//!   slot:   per row a tag u8 (0 = *, 1 = null, 2 = bool, 3 = int, 4 = str) followed by
//!           bool: u8 (0/1); int: i64; str: u32 length + UTF-8 bytes; nothing otherwise
//!   number: `rows` presence bytes (0 = absent, 1 = present), then `rows` f64 values
//!           (absent values are written as 0.0)
//! ```

use crate::cube::Value;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HOCB";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    /// Dimension slots; `None` is the wildcard `*`.
    Slots(Vec<Option<Value>>),
    Numbers(Vec<Option<f64>>),
}

impl ColumnData {
    fn len(&self) -> usize {
        match self {
            ColumnData::Slots(v) => v.len(),
            ColumnData::Numbers(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Block {
    pub rows: usize,
    pub columns: Vec<Column>,
}

impl Block {
    pub fn new(rows: usize, columns: Vec<Column>) -> Result<Self> {
        if let Some(c) = columns.iter().find(|c| c.data.len() != rows) {
            return Err(Error::Format(format!("column `{}` has {} rows, expected {rows}", c.name, c.data.len())));
        }
        Ok(Block { rows, columns })
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.columns.iter().find(|c| c.name == name).map(|c| &c.data)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.columns.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        for c in &self.columns {
            put_str(&mut out, &c.name);
            out.push(match c.data {
                ColumnData::Slots(_) => 0,
                ColumnData::Numbers(_) => 1,
            });
        }
        for c in &self.columns {
            match &c.data {
                ColumnData::Slots(slots) => {
                    for s in slots {
                        match s {
                            None => out.push(0),
                            Some(Value::Null) => out.push(1),
                            Some(Value::Bool(b)) => out.extend_from_slice(&[2, u8::from(*b)]),
                            Some(Value::Int(i)) => {
                                out.push(3);
                                out.extend_from_slice(&i.to_le_bytes());
                            }
                            Some(Value::Str(s)) => {
                                out.push(4);
                                put_str(&mut out, s);
                            }
                        }
                    }
                }
                ColumnData::Numbers(values) => {
                    out.extend(values.iter().map(|v| u8::from(v.is_some())));
                    for v in values {
                        out.extend_from_slice(&v.unwrap_or(0.0).to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad block magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported block version {version}")));
        }
        let ncols = u32::from_le_bytes(r.array()?) as usize;
        let rows = usize::try_from(u64::from_le_bytes(r.array()?))
            .map_err(|_| Error::Format("row count overflows".into()))?;
        let mut descriptors = Vec::new();
        for _ in 0..ncols {
            let name = r.string()?;
            let tag = r.take(1)?[0];
            if tag > 1 {
                return Err(Error::Format(format!("unknown column type tag {tag}")));
            }
            descriptors.push((name, tag));
        }
        let mut columns = Vec::with_capacity(ncols);
        for (name, tag) in descriptors {
            let data = if tag == 0 {
                let mut slots = Vec::with_capacity(rows.min(1 << 20));
                for _ in 0..rows {
                    slots.push(match r.take(1)?[0] {
                        0 => None,
                        1 => Some(Value::Null),
                        2 => Some(Value::Bool(r.take(1)?[0] != 0)),
                        3 => Some(Value::Int(i64::from_le_bytes(r.array()?))),
                        4 => Some(Value::Str(r.string()?)),
                        t => return Err(Error::Format(format!("unknown slot tag {t}"))),
                    });
                }
                ColumnData::Slots(slots)
            } else {
                let present = r.take(rows)?.to_vec();
                let mut values = Vec::with_capacity(rows);
                for p in present {
                    let v = f64::from_le_bytes(r.array()?);
                    values.push((p != 0).then_some(v));
                }
                ColumnData::Numbers(values)
            };
            columns.push(Column { name, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after block", bytes.len() - r.pos)));
        }
        Ok(Block { rows, columns })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("block truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length"))
    }

    fn string(&mut self) -> Result<String> {
        let n = u32::from_le_bytes(self.array()?) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 in block".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Block {
        Block::new(
            3,
            vec![
                Column {
                    name: "d".into(),
                    data: ColumnData::Slots(vec![None, Some(Value::Null), Some(Value::str("é"))]),
                },
                Column {
                    name: "b".into(),
                    data: ColumnData::Slots(vec![Some(Value::Bool(true)), Some(Value::Int(-7)), None]),
                },
                Column {
                    name: "m".into(),
                    data: ColumnData::Numbers(vec![Some(1.5), None, Some(-0.0)]),
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let b = sample();
        let bytes = b.encode();
        assert_eq!(Block::decode(&bytes).unwrap(), b);
    }

    #[test]
    fn exact_layout() {
        let b = Block::new(
            1,
            vec![
                Column {
                    name: "x".into(),
                    data: ColumnData::Slots(vec![Some(Value::Int(1))]),
                },
                Column {
                    name: "y".into(),
                    data: ColumnData::Numbers(vec![Some(2.0)]),
                },
            ],
        )
        .unwrap();
        let mut expect = b"HOCB".to_vec();
        expect.extend([1, 0]);
        expect.extend([2, 0, 0, 0]);
        expect.extend([1, 0, 0, 0, 0, 0, 0, 0]);
        expect.extend([1, 0, 0, 0, b'x', 0]);
        expect.extend([1, 0, 0, 0, b'y', 1]);
        expect.extend([3, 1, 0, 0, 0, 0, 0, 0, 0]);
        expect.push(1);
        expect.extend(2.0f64.to_le_bytes());
        assert_eq!(b.encode(), expect);
    }

    #[test]
    fn corrupt_input() {
        let bytes = sample().encode();
        assert!(Block::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Block::decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Block::decode(&extra).is_err());
    }
}
