//! Binary checkpoint container.
//!
//! ```text
//! magic    b"PLCK"
//! version  u16
//! epoch    u64
//! layers   u32
//! per layer:
//!   kind u8 (0 dense, 1 conv), kernel_h u32, kernel_w u32,
//!   fan_in u64, fan_out u64, is_output u8, count u64, count × f64
//! rng      56 bytes (see `RngState::to_bytes`)
//! ```
//!
//! All integers and floats are little-endian. Decoding errors carry the
//! byte offset where the problem was found.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerSpec, LayeredParams};
use crate::rng::RngState;
use crate::train::Checkpoint;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PLCK";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn encode_checkpoint(cp: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + cp.weights.total_weights() * 8);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(cp.epoch as u64).to_le_bytes());
    out.extend_from_slice(&(cp.weights.layer_count() as u32).to_le_bytes());
    for (spec, w) in cp.weights.specs().iter().zip(cp.weights.layers()) {
        let (kind, kh, kw) = match spec.kind {
            LayerKind::Dense => (0u8, 0u32, 0u32),
            LayerKind::Conv { kernel_h, kernel_w } => (1, kernel_h as u32, kernel_w as u32),
        };
        out.push(kind);
        out.extend_from_slice(&kh.to_le_bytes());
        out.extend_from_slice(&kw.to_le_bytes());
        out.extend_from_slice(&(spec.fan_in as u64).to_le_bytes());
        out.extend_from_slice(&(spec.fan_out as u64).to_le_bytes());
        out.push(spec.is_output as u8);
        out.extend_from_slice(&(w.len() as u64).to_le_bytes());
        for v in w {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&cp.rng_state.to_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Schema(format!(
                "checkpoint truncated reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N, what)?);
        Ok(a)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array(what)?) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        usize::try_from(u64::from_le_bytes(self.array(what)?))
            .map_err(|_| Error::Schema(format!("{what} overflows at byte {at}")))
    }

    fn fail(&self, at: usize, msg: &str) -> Error {
        Error::Schema(format!("{msg} at byte {at}"))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.array::<4>("magic")? != CHECKPOINT_MAGIC {
        return Err(r.fail(0, "bad checkpoint magic"));
    }
    let version = u16::from_le_bytes(r.array("version")?);
    if version != CHECKPOINT_VERSION {
        return Err(r.fail(4, &format!("unsupported checkpoint version {version}")));
    }
    let epoch = r.u64("epoch")?;
    let count = r.u32("layer count")?;
    let mut specs = Vec::with_capacity(count.min(1024));
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let at = r.pos;
        let kind = r.u8("layer kind")?;
        let kh = r.u32("kernel height")?;
        let kw = r.u32("kernel width")?;
        let kind = match kind {
            0 => LayerKind::Dense,
            1 => LayerKind::Conv {
                kernel_h: kh,
                kernel_w: kw,
            },
            k => return Err(r.fail(at, &format!("unknown layer kind {k}"))),
        };
        let fan_in = r.u64("fan-in")?;
        let fan_out = r.u64("fan-out")?;
        let is_output = match r.u8("output flag")? {
            0 => false,
            1 => true,
            _ => return Err(r.fail(r.pos - 1, "bad output flag")),
        };
        let n = r.u64("weight count")?;
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| r.fail(at, "weight count overflows"))?,
            "weights",
        )?;
        let w: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        specs.push(LayerSpec {
            kind,
            fan_in,
            fan_out,
            is_output,
        });
        layers.push(w);
    }
    let rng_at = r.pos;
    let rng_state = RngState::from_bytes(r.take(RngState::ENCODED_LEN, "rng state")?)?;
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, "trailing bytes after checkpoint"));
    }
    let weights = LayeredParams::new(specs, layers)
        .map_err(|e| r.fail(rng_at, &format!("invalid weights: {e}")))?;
    if weights.layers().iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("checkpoint weights"));
    }
    Ok(Checkpoint {
        epoch,
        weights,
        rng_state,
    })
}
