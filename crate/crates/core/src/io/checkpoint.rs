//! `.ckpt` model checkpoints.
//!
//! ```text
//! "EMCK"  u16 version
//! u64 body length in bytes
//! body:   u8 kind (0 network, 1 linear), u64 scan_id, kind-specific fields
//! u32 CRC-32 of the body
//! ```
//!
//! Every number is stored at full `f64` precision, so a reloaded model
//! predicts bit for bit what the saved one did.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use super::{check_header, ByteReader, ByteWriter};
use crate::cancel::{CnnCanceller, EmiModel, LinearEmiModel};
use crate::error::{Error, Result};
use crate::neural::{CnnConfig, CnnModel, InferenceStats, TrainHyper, TrainReport};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EMCK";
pub const CHECKPOINT_VERSION: u16 = 1;

fn encode_body(model: &EmiModel, w: &mut ByteWriter) {
    match model {
        EmiModel::Cnn(m) => {
            w.u8(0);
            w.u64(m.scan_id);
            let c = &m.model.config;
            w.count(c.n_sense);
            c.channels.iter().chain(&c.kernels).for_each(|v| w.count(*v));
            let h = &m.model.hyper;
            for v in [h.lr, h.beta1, h.beta2, h.eps] {
                w.f64(v);
            }
            w.count(h.batch_size);
            w.count(h.epochs);
            w.u64(h.seed);
            w.u8(match m.model.inference_stats {
                InferenceStats::Running => 0,
                InferenceStats::Batch => 1,
            });
            w.f64(m.scale);
            w.f64s(&m.report.epoch_losses);
            w.u64(m.report.steps);
            let arrays = m.model.named_arrays();
            w.count(arrays.len());
            for (name, values) in arrays {
                w.str(&name);
                w.f64s(values);
            }
        }
        EmiModel::Linear(m) => {
            w.u8(1);
            w.u64(m.scan_id);
            w.count(m.n_fe);
            w.count(m.n_sense);
            let flat: Vec<f64> = m.coeffs.iter().flat_map(|z| [z.re, z.im]).collect();
            w.f64s(&flat);
            w.count(m.rank_deficient.len());
            m.rank_deficient.iter().for_each(|b| w.count(*b));
        }
    }
}

pub fn encode_checkpoint(model: &EmiModel) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(&CHECKPOINT_MAGIC);
    w.u16(CHECKPOINT_VERSION);
    let mut body = ByteWriter::default();
    encode_body(model, &mut body);
    w.u64(body.buf.len() as u64);
    w.bytes(&body.buf);
    w.u32(crc32fast::hash(&body.buf));
    w.buf
}

fn decode_cnn(r: &mut ByteReader, scan_id: u64) -> Result<CnnCanceller> {
    let n_sense = r.count("n_sense")?;
    let mut dims = [0usize; 10];
    for d in &mut dims {
        *d = r.count("network shape")?;
    }
    let config =
        CnnConfig { n_sense, channels: dims[..5].try_into().expect("5"), kernels: dims[5..].try_into().expect("5") };
    let hyper = TrainHyper {
        lr: r.f64("lr")?,
        beta1: r.f64("beta1")?,
        beta2: r.f64("beta2")?,
        eps: r.f64("eps")?,
        batch_size: r.count("batch size")?,
        epochs: r.count("epochs")?,
        seed: r.u64("seed")?,
    };
    let stats = match r.u8("inference statistics")? {
        0 => InferenceStats::Running,
        1 => InferenceStats::Batch,
        v => return Err(Error::Malformed(format!("unknown inference statistics tag {v}"))),
    };
    let scale = r.f64("scale")?;
    let epoch_losses = r.f64s("loss curve")?;
    let steps = r.u64("steps")?;
    let mut model = CnnModel::new(config, hyper).map_err(|e| Error::Malformed(format!("network shape: {e}")))?;
    model.inference_stats = stats;
    let n = r.count("array count")?;
    let mut slots = model.named_arrays_mut();
    if n != slots.len() {
        return Err(Error::Malformed(format!("{n} arrays stored, network has {}", slots.len())));
    }
    for (name, slot) in slots.iter_mut() {
        let stored = r.str("array name")?;
        if &stored != name {
            return Err(Error::Malformed(format!("expected array {name}, found {stored}")));
        }
        let values = r.f64s(name)?;
        if values.len() != slot.len() {
            return Err(Error::Malformed(format!("{name} has {} values, expected {}", values.len(), slot.len())));
        }
        **slot = values;
    }
    Ok(CnnCanceller { model, scale, scan_id, report: TrainReport { epoch_losses, steps } })
}

fn decode_linear(r: &mut ByteReader, scan_id: u64) -> Result<LinearEmiModel> {
    let n_fe = r.count("n_fe")?;
    let n_sense = r.count("n_sense")?;
    let flat = r.f64s("coefficients")?;
    if flat.len() != 2 * n_fe * n_sense {
        return Err(Error::Malformed(format!("{} coefficient values for {n_fe} x {n_sense}", flat.len())));
    }
    let coeffs = flat.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
    let n = r.count("rank-deficient count")?;
    let rank_deficient = (0..n).map(|_| r.count("bin")).collect::<Result<Vec<_>>>()?;
    Ok(LinearEmiModel { n_fe, n_sense, coeffs, rank_deficient, scan_id })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<EmiModel> {
    let mut r = ByteReader::new(bytes);
    check_header(&mut r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let len = r.u64("body length")?;
    let body = r.take(usize::try_from(len).unwrap_or(usize::MAX), "body")?;
    let stored = r.u32("CRC")?;
    if r.remaining() != 0 {
        return Err(Error::Malformed(format!("{} bytes after the CRC", r.remaining())));
    }
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Crc { stored, computed });
    }
    let mut br = ByteReader::new(body);
    let kind = br.u8("model kind")?;
    let scan_id = br.u64("scan id")?;
    let model = match kind {
        0 => EmiModel::Cnn(decode_cnn(&mut br, scan_id)?),
        1 => EmiModel::Linear(decode_linear(&mut br, scan_id)?),
        k => return Err(Error::Malformed(format!("unknown model kind {k}"))),
    };
    if br.remaining() != 0 {
        return Err(Error::Malformed(format!("{} trailing bytes", br.remaining())));
    }
    Ok(model)
}

pub fn write_checkpoint(path: impl AsRef<Path>, model: &EmiModel) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<EmiModel> {
    decode_checkpoint(&fs::read(path)?)
}
