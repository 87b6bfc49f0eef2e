//! On-disk formats: `.emik` datasets, `.ckpt` model checkpoints, `.cfg`
//! scenario files and binary PGM images.

pub mod checkpoint;
pub mod config;
pub mod emik;
pub mod pgm;

use crate::error::{Error, Result};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{parse_config, read_config, ScenarioConfig, TrainSettings};
pub use emik::{decode_emik, encode_emik, read_emik, write_emik, EMIK_MAGIC, EMIK_VERSION};
pub use pgm::{encode_pgm, write_pgm};

/// Little-endian byte sink.
#[derive(Debug, Default)]
pub(crate) struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
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
    pub fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn count(&mut self, n: usize) {
        self.u32(n as u32);
    }
    pub fn str(&mut self, s: &str) {
        self.count(s.len());
        self.bytes(s.as_bytes());
    }
    pub fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.f64(*x));
    }
}

/// Little-endian cursor; running off the end is a truncation error.
pub(crate) struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated(format!(
                "{what} needs {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }
    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }
    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }
    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array(what)?))
    }
    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }
    pub fn count(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }
    pub fn str(&mut self, what: &str) -> Result<String> {
        let n = self.count(what)?;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Malformed(format!("{what} is not UTF-8")))
    }
    pub fn f64s(&mut self, what: &str) -> Result<Vec<f64>> {
        let n = self.u64(what)? as usize;
        if n > self.remaining() / 8 {
            return Err(Error::Truncated(format!("{what} declares {n} values, {} bytes left", self.remaining())));
        }
        (0..n).map(|_| self.f64(what)).collect()
    }
}

/// Check a four-byte magic and a version number.
pub(crate) fn check_header(r: &mut ByteReader, magic: [u8; 4], version: u16) -> Result<()> {
    let found: [u8; 4] = r.array("magic")?;
    if found != magic {
        return Err(Error::BadMagic { expected: magic, found });
    }
    let v = r.u16("format version")?;
    if v != version {
        return Err(Error::UnsupportedVersion { found: v, expected: version });
    }
    Ok(())
}
