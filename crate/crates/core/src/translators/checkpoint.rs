//! `HCDM` model files: magic, version, architecture descriptor, then every
//! parameter block as little-endian `f32` in declaration order.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AceNet, AceWidths, Arch, Model, XNet};
use crate::error::{Error, Result};
use crate::nn::Parameterized;

const MAGIC: &[u8; 4] = b"HCDM";
const VERSION: u32 = 1;

fn put(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_list(buf: &mut Vec<u8>, v: &[usize]) {
    put(buf, v.len() as u32);
    v.iter().for_each(|&w| put(buf, w as u32));
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut buf = MAGIC.to_vec();
    put(&mut buf, VERSION);
    let (cx, cy) = model.channels();
    let blocks = match model {
        Model::XNet(m) => {
            put(&mut buf, 0);
            put(&mut buf, cx as u32);
            put(&mut buf, cy as u32);
            put_list(&mut buf, &m.hidden());
            m.blocks()
        }
        Model::AceNet(m) => {
            put(&mut buf, 1);
            put(&mut buf, cx as u32);
            put(&mut buf, cy as u32);
            let w = m.widths();
            put_list(&mut buf, &w.encoder);
            put_list(&mut buf, &w.decoder);
            put_list(&mut buf, &w.disc);
            m.blocks()
        }
    };
    put(&mut buf, blocks.len() as u32);
    for b in blocks {
        put(&mut buf, b.len() as u32);
        for v in b {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| self.fail("truncated model file"))?;
        self.pos += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn list(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        if n == 0 || n > 64 {
            return Err(self.fail(format!("implausible layer count {n}")));
        }
        (0..n)
            .map(|_| match self.u32()? {
                0 => Err(self.fail("zero layer width")),
                w => Ok(w as usize),
            })
            .collect()
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(r.fail("missing HCDM magic"));
    }
    r.pos = 4;
    let version = r.u32()?;
    if version != VERSION {
        r.pos -= 4;
        return Err(r.fail(format!("unsupported model version {version}")));
    }
    let arch = match r.u32()? {
        0 => Arch::XNet,
        1 => Arch::AceNet,
        other => {
            r.pos -= 4;
            return Err(r.fail(format!("unknown architecture code {other}")));
        }
    };
    let (cx, cy) = (r.u32()? as usize, r.u32()? as usize);
    if cx == 0 || cy == 0 {
        return Err(r.fail("zero channel count"));
    }
    // Weights are overwritten below; the generator only sizes the layers.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = match arch {
        Arch::XNet => {
            let hidden = r.list()?;
            Model::XNet(XNet::new(cx, cy, &hidden, 0.0, &mut rng))
        }
        Arch::AceNet => {
            let widths = AceWidths {
                encoder: r.list()?,
                decoder: r.list()?,
                disc: r.list()?,
            };
            Model::AceNet(AceNet::new(cx, cy, &widths, 0.0, &mut rng))
        }
    };
    let mut blocks = match &mut model {
        Model::XNet(m) => m.blocks_mut(),
        Model::AceNet(m) => m.blocks_mut(),
    };
    let n = r.u32()? as usize;
    if n != blocks.len() {
        return Err(r.fail(format!(
            "{n} parameter blocks, architecture needs {}",
            blocks.len()
        )));
    }
    for block in blocks.iter_mut() {
        let len = r.u32()? as usize;
        if len != block.len() {
            return Err(r.fail(format!("block of {len} values, expected {}", block.len())));
        }
        for v in block.iter_mut() {
            let at = r.pos;
            let x = f32::from_bits(r.u32()?);
            if !x.is_finite() {
                r.pos = at;
                return Err(r.fail("non-finite parameter"));
            }
            *v = x;
        }
    }
    if r.pos != bytes.len() {
        return Err(r.fail("trailing bytes after parameters"));
    }
    drop(blocks);
    Ok(model)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
