//! `.emik` dataset files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "EMIK"  u16 version
//! u32 n_fe, n_pe, n_sense, nex, lines_per_tr
//! f64 receiver_bandwidth, repetition_time, echo_spacing
//! u64 scan_id
//! u32 provenance length, UTF-8 bytes
//! u16 window count (2), then per window: u8 tag (0 MRI, 1 EMI), u32 lines
//! u64 payload length in bytes
//! payload: f32 (re, im) pairs ordered window, average, pe line, coil
//!          (receive, then sensing coils), sample
//! u32 CRC-32 of the payload
//! ```
//!
//! Samples are held as `f64` in memory and stored as `f32`.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use super::{check_header, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::plan::{make_scan_plan, CoilLines, ComplexLine, MultiCoilDataset, ScanParams, Window};

pub const EMIK_MAGIC: [u8; 4] = *b"EMIK";
pub const EMIK_VERSION: u16 = 1;

fn payload_bytes(p: &ScanParams) -> u64 {
    2 * (p.nex * p.n_pe * (1 + p.n_sense) * p.n_fe) as u64 * 2 * 4
}

pub fn encode_emik(ds: &MultiCoilDataset) -> Vec<u8> {
    let p = ds.plan().params();
    let mut w = ByteWriter::default();
    w.bytes(&EMIK_MAGIC);
    w.u16(EMIK_VERSION);
    for v in [p.n_fe, p.n_pe, p.n_sense, p.nex, p.lines_per_tr] {
        w.u32(v as u32);
    }
    w.f64(p.receiver_bandwidth);
    w.f64(p.repetition_time);
    w.f64(p.echo_spacing);
    w.u64(ds.scan_id());
    w.str(ds.provenance());
    w.u16(2);
    for window in Window::BOTH {
        w.u8(window.ordinal() as u8);
        w.u32(ds.window(window).len() as u32);
    }
    w.u64(payload_bytes(p));
    let start = w.buf.len();
    for window in Window::BOTH {
        for e in ds.window(window) {
            for line in std::iter::once(&e.receive).chain(&e.sensing) {
                for z in line.samples() {
                    w.f32(z.re as f32);
                    w.f32(z.im as f32);
                }
            }
        }
    }
    let crc = crc32fast::hash(&w.buf[start..]);
    w.u32(crc);
    w.buf
}

pub fn decode_emik(bytes: &[u8]) -> Result<MultiCoilDataset> {
    let mut r = ByteReader::new(bytes);
    check_header(&mut r, EMIK_MAGIC, EMIK_VERSION)?;
    let mut dims = [0usize; 5];
    for (d, name) in dims.iter_mut().zip(["n_fe", "n_pe", "n_sense", "nex", "lines_per_tr"]) {
        *d = r.count(name)?;
    }
    let params = ScanParams {
        n_fe: dims[0],
        n_pe: dims[1],
        n_sense: dims[2],
        nex: dims[3],
        lines_per_tr: dims[4],
        receiver_bandwidth: r.f64("receiver bandwidth")?,
        repetition_time: r.f64("repetition time")?,
        echo_spacing: r.f64("echo spacing")?,
    };
    let scan_id = r.u64("scan id")?;
    let provenance = r.str("provenance")?;
    let n_windows = r.u16("window count")?;
    if n_windows != 2 {
        return Err(Error::Malformed(format!("expected 2 windows, found {n_windows}")));
    }
    let expected_lines = params.nex * params.n_pe;
    for window in Window::BOTH {
        let tag = r.u8("window tag")?;
        let lines = r.count("window line count")?;
        if tag as usize != window.ordinal() || lines != expected_lines {
            return Err(Error::Malformed(format!(
                "window table entry ({tag}, {lines}) does not match ({}, {expected_lines})",
                window.ordinal()
            )));
        }
    }
    let declared = r.u64("payload length")?;
    if declared != payload_bytes(&params) {
        return Err(Error::Malformed(format!(
            "payload length {declared} does not match the header ({} bytes)",
            payload_bytes(&params)
        )));
    }
    let payload = r.take(declared as usize, "payload")?;
    let stored = r.u32("CRC")?;
    if r.remaining() != 0 {
        return Err(Error::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Crc { stored, computed });
    }
    let plan = make_scan_plan(params.clone()).map_err(|e| Error::Malformed(format!("header: {e}")))?;
    let dwell = plan.dwell_time();
    let mut pr = ByteReader::new(payload);
    let line = |pr: &mut ByteReader| -> Result<ComplexLine> {
        let v = (0..params.n_fe)
            .map(|_| Ok(Complex64::new(pr.f32("sample")? as f64, pr.f32("sample")? as f64)))
            .collect::<Result<Vec<_>>>()?;
        ComplexLine::new(v, dwell).map_err(|e| Error::Malformed(format!("payload: {e}")))
    };
    let mut windows = Vec::with_capacity(2);
    for _ in Window::BOTH {
        let entries = (0..expected_lines)
            .map(|_| {
                let receive = line(&mut pr)?;
                let sensing = (0..params.n_sense).map(|_| line(&mut pr)).collect::<Result<Vec<_>>>()?;
                Ok(CoilLines { receive, sensing })
            })
            .collect::<Result<Vec<_>>>()?;
        windows.push(entries);
    }
    let emi = windows.pop().expect("two windows");
    let mri = windows.pop().expect("two windows");
    MultiCoilDataset::new(plan, scan_id, provenance, mri, emi)
}

pub fn write_emik(path: impl AsRef<Path>, ds: &MultiCoilDataset) -> Result<()> {
    fs::write(path, encode_emik(ds))?;
    Ok(())
}

pub fn read_emik(path: impl AsRef<Path>) -> Result<MultiCoilDataset> {
    decode_emik(&fs::read(path)?)
}
