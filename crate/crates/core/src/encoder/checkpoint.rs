//! Binary checkpoints.
//!
//! ```text
//! "PPE1"                      magic
//! u32    format version
//! u64    init seed
//! u8     input features (0 = rgb, 1 = rgb_detour)
//! u32    layer count
//! per layer: u32 in, u32 out, u32 kernel, u32 dilation, u8 activation
//! per layer: f64 weights [out][in][ky][kx], then f64 bias [out]
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{Activation, Architecture, ConvLayer, EncoderModel, InputFeatures, LayerParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PPE1";
pub const CHECKPOINT_VERSION: u32 = 1;

fn features_code(f: InputFeatures) -> u8 {
    match f {
        InputFeatures::Rgb => 0,
        InputFeatures::RgbDetour => 1,
    }
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Relu => 1,
        Activation::Logistic => 2,
    }
}

pub fn write_model(model: &EncoderModel, mut out: impl Write) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(64 + model.param_count() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&model.init_seed.to_le_bytes());
    buf.push(features_code(model.arch.input));
    buf.extend_from_slice(&(model.arch.layers.len() as u32).to_le_bytes());
    for l in &model.arch.layers {
        for v in [l.in_channels, l.out_channels, l.kernel, l.dilation] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.push(activation_code(l.activation));
    }
    for p in &model.params {
        for v in p.weights.iter().chain(&p.bias) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_model(mut input: impl Read) -> Result<EncoderModel> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut cur = Cursor { bytes: &bytes, at: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let init_seed = cur.u64()?;
    let input = match cur.u8()? {
        0 => InputFeatures::Rgb,
        1 => InputFeatures::RgbDetour,
        other => return Err(Error::Checkpoint(format!("unknown input features code {other}"))),
    };
    let count = cur.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let dims = [cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?].map(|v| v as usize);
        let activation = match cur.u8()? {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Logistic,
            other => return Err(Error::Checkpoint(format!("unknown activation code {other}"))),
        };
        layers.push(ConvLayer {
            in_channels: dims[0],
            out_channels: dims[1],
            kernel: dims[2],
            dilation: dims[3],
            activation,
        });
    }
    let arch = Architecture { input, layers };
    arch.validate()?;
    let params = arch
        .layers
        .iter()
        .map(|l| {
            Ok(LayerParams {
                weights: cur.f64s(l.weight_count())?,
                bias: cur.f64s(l.out_channels)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if cur.at != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - cur.at
        )));
    }
    let model = EncoderModel {
        arch,
        params,
        init_seed,
        version,
    };
    if !model.is_finite() {
        return Err(Error::Checkpoint("non-finite weights".into()));
    }
    Ok(model)
}

pub fn save_model(model: &EncoderModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<EncoderModel> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(std::io::BufReader::new(file))
}
