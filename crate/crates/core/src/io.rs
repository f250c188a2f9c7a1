//! Little-endian binary formats for fields and datasets, plus CSV export.
//!
//! Field file: 32-byte header
//! `"FINEFLD1" | dims u16 | size0 u16 | size1 u16 | reserved u16 | length0 f64 | length1 f64`
//! followed by the values as `f64`, row-major. A dataset file is
//! `"FINEDAT1" | count u64 | <32-byte field header> | count * len values`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::spectral::{Field, Grid};

pub const FIELD_MAGIC: &[u8; 8] = b"FINEFLD1";
pub const DATASET_MAGIC: &[u8; 8] = b"FINEDAT1";

/// A collection of samples on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    grid: Grid,
    fields: Vec<Field>,
}

impl Dataset {
    pub fn new(grid: Grid, fields: Vec<Field>) -> Result<Self> {
        for f in &fields {
            grid.ensure_same(f.grid())?;
        }
        Ok(Dataset { grid, fields })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Sum of squares over every sample and grid point.
    pub fn energy(&self) -> f64 {
        self.fields.iter().map(Field::norm_sq).sum()
    }
}

pub(crate) struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        ByteWriter { buf: Vec::new() }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn i32(&mut self, v: i32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.buf.reserve(8 * v.len());
        for x in v {
            self.f64(*x);
        }
    }

    /// Length-prefixed vector.
    pub fn vec(&mut self, v: &[f64]) {
        self.u32(v.len() as u32);
        self.f64s(v);
    }

    /// The 24 bytes after the magic of a field header.
    pub fn grid(&mut self, g: &Grid) {
        let sizes = g.sizes();
        self.u16(g.dims() as u16);
        self.u16(sizes[0] as u16);
        self.u16(if g.dims() == 2 { sizes[1] as u16 } else { 0 });
        self.u16(0);
        let lengths = g.lengths();
        self.f64(lengths[0]);
        self.f64(if g.dims() == 2 { lengths[1] } else { 0.0 });
    }
}

pub(crate) struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        ByteReader { data, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| {
            Error::Format(format!(
                "unexpected end of file at byte {} (wanted {n} more)",
                self.pos
            ))
        })?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("sized"))
    }

    pub fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let got = self.take(8)?;
        if got != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        self.f64s(n)
    }

    pub fn grid(&mut self) -> Result<Grid> {
        let dims = self.u16()?;
        let s0 = self.u16()? as usize;
        let s1 = self.u16()? as usize;
        let _reserved = self.u16()?;
        let l0 = self.f64()?;
        let l1 = self.f64()?;
        match dims {
            1 => Grid::new(&[s0], &[l0]),
            2 => Grid::new(&[s0, s1], &[l0, l1]),
            d => Err(Error::Format(format!("unsupported dimension count {d}"))),
        }
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn check_encodable(g: &Grid) -> Result<()> {
    if g.sizes().iter().any(|&n| n > u16::MAX as usize) {
        return Err(Error::InvalidGrid(format!("{g} too large for the file header")));
    }
    Ok(())
}

pub fn encode_field(f: &Field) -> Result<Vec<u8>> {
    check_encodable(f.grid())?;
    let mut w = ByteWriter::new();
    w.bytes(FIELD_MAGIC);
    w.grid(f.grid());
    w.f64s(f.values());
    Ok(w.buf)
}

pub fn decode_field(bytes: &[u8]) -> Result<Field> {
    let mut r = ByteReader::new(bytes);
    r.magic(FIELD_MAGIC)?;
    let grid = r.grid()?;
    let values = r.f64s(grid.len())?;
    r.finish()?;
    Field::new(grid, values)
}

pub fn save_field(f: &Field, path: &Path) -> Result<()> {
    fs::write(path, encode_field(f)?)?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<Field> {
    decode_field(&fs::read(path)?)
}

pub fn encode_dataset(d: &Dataset) -> Result<Vec<u8>> {
    check_encodable(d.grid())?;
    let mut w = ByteWriter::new();
    w.bytes(DATASET_MAGIC);
    w.u64(d.len() as u64);
    w.bytes(FIELD_MAGIC);
    w.grid(d.grid());
    for f in d.fields() {
        w.f64s(f.values());
    }
    Ok(w.buf)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let count = r.u64()? as usize;
    r.magic(FIELD_MAGIC)?;
    let grid = r.grid()?;
    let expected = count
        .checked_mul(grid.len())
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("sample count overflow".into()))?;
    if bytes.len() - 48 != expected {
        return Err(Error::Format(format!(
            "dataset payload is {} bytes, header implies {expected}",
            bytes.len() - 48
        )));
    }
    let mut fields = Vec::with_capacity(count);
    for _ in 0..count {
        fields.push(Field::new(grid, r.f64s(grid.len())?)?);
    }
    r.finish()?;
    Dataset::new(grid, fields)
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(d)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

/// One value per line, row-major.
pub fn write_field_csv(f: &Field, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for v in f.values() {
        writeln!(out, "{v:e}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(grid: Grid, shift: f64) -> Field {
        Field::from_fn(grid, |p| p.iter().sum::<f64>().sin() + shift).unwrap()
    }

    #[test]
    fn field_header_is_32_bytes() {
        let g = Grid::plane(8, 4).unwrap();
        let bytes = encode_field(&sample(g, 0.0)).unwrap();
        assert_eq!(bytes.len(), 32 + 8 * 32);
        assert_eq!(&bytes[..8], FIELD_MAGIC);
        assert_eq!(u16::from_le_bytes([bytes[8], bytes[9]]), 2);
        assert_eq!(u16::from_le_bytes([bytes[10], bytes[11]]), 8);
        assert_eq!(u16::from_le_bytes([bytes[12], bytes[13]]), 4);
    }

    #[test]
    fn field_round_trip_is_bitwise() {
        for g in [Grid::line(16).unwrap(), Grid::new(&[6, 8], &[1.5, 2.5]).unwrap()] {
            let f = sample(g, 0.25);
            let back = decode_field(&encode_field(&f).unwrap()).unwrap();
            assert_eq!(back, f);
        }
    }

    #[test]
    fn dataset_round_trip_and_truncation() {
        let g = Grid::line(8).unwrap();
        let d = Dataset::new(g, (0..3).map(|i| sample(g, i as f64)).collect()).unwrap();
        let bytes = encode_dataset(&d).unwrap();
        assert_eq!(decode_dataset(&bytes).unwrap(), d);
        assert!(matches!(decode_dataset(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_dataset(&bad).is_err());
    }

    #[test]
    fn mixed_grids_are_rejected() {
        let g = Grid::line(8).unwrap();
        let h = Grid::line(16).unwrap();
        assert!(Dataset::new(g, vec![sample(g, 0.0), sample(h, 0.0)]).is_err());
    }
}
