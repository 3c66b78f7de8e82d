//! Little-endian binary weight files.
//!
//! ```text
//! "ROBO" | version u16 | name_len u16 | name utf-8 | k u32 | layer_count u32
//! per layer:
//!   kernel u16 | stride u16 | in_ch u16 | out_ch u16 | weight_count u32
//!   weights f32[weight_count] | bias f32[out_ch]
//!   bn_flag u8 [ gamma | beta | running_mean | running_var : f32[out_ch] each ]
//!   mask_len u32 | mask bytes (LSB-first, 1 = kept)
//! anchors: 4 × (w f32, h f32)
//! ```
//! Layers are the backbone in order followed by `head_lo` and `head_hi`.

use std::fs;
use std::path::Path;

use super::network::{Mask, Network};
use super::spec::{Architecture, ModelSpec};
use crate::detect::AnchorSet;
use crate::error::{Error, Result, WeightFileError};
use crate::tensor::BatchNormParams;

pub const MAGIC: &[u8; 4] = b"ROBO";
pub const FORMAT_VERSION: u16 = 1;

pub fn encode_weights(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let name = net.spec.arch.name().as_bytes();
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name);
    out.extend_from_slice(&(net.spec.k as u32).to_le_bytes());
    out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    let put_f32s = |out: &mut Vec<u8>, vals: &[f32]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for layer in &net.layers {
        let c = &layer.conv;
        for v in [c.kernel, c.stride, c.in_ch, c.out_ch] {
            out.extend_from_slice(&(v as u16).to_le_bytes());
        }
        out.extend_from_slice(&(c.weights.data().len() as u32).to_le_bytes());
        put_f32s(&mut out, c.weights.data());
        put_f32s(&mut out, &c.bias);
        match &layer.bn {
            Some(bn) => {
                out.push(1);
                for vals in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                    put_f32s(&mut out, vals);
                }
            }
            None => out.push(0),
        }
        let mask = layer.mask.to_bytes();
        out.extend_from_slice(&(mask.len() as u32).to_le_bytes());
        out.extend_from_slice(&mask);
    }
    for (w, h) in net.anchors.0 {
        put_f32s(&mut out, &[w, h]);
    }
    out
}

pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(net)).map_err(|e| Error::io(path, e))
}

/// Loads a file written for one of the built-in architectures.
pub fn load_weights(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes, None)
}

/// Loads a file against an explicit spec (needed for custom tables).
pub fn load_weights_for(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes, Some(spec))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: impl FnOnce() -> String) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(WeightFileError::Truncated { context: context() }.into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, context: impl FnOnce() -> String) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, context)?.try_into().unwrap()))
    }

    fn u32(&mut self, context: impl FnOnce() -> String) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, context: impl FnOnce() -> String) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, context)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn mismatch(msg: String) -> Error {
    WeightFileError::SpecMismatch(msg).into()
}

pub fn decode_weights(bytes: &[u8], spec: Option<&ModelSpec>) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, || "magic".into())?;
    if magic != MAGIC {
        return Err(WeightFileError::BadMagic {
            found: magic.try_into().unwrap(),
        }
        .into());
    }
    let version = r.u16(|| "version".into())?;
    if version != FORMAT_VERSION {
        return Err(WeightFileError::Version {
            found: version,
            supported: FORMAT_VERSION,
        }
        .into());
    }
    let name_len = r.u16(|| "name length".into())? as usize;
    let name = std::str::from_utf8(r.take(name_len, || "name".into())?)
        .map_err(|_| mismatch("architecture name is not UTF-8".into()))?
        .to_string();
    let k = r.u32(|| "k".into())? as usize;
    let layer_count = r.u32(|| "layer count".into())? as usize;

    let spec = match spec {
        Some(s) => {
            if s.arch.name() != name {
                return Err(mismatch(format!(
                    "file holds `{name}` weights, spec is `{}`",
                    s.arch
                )));
            }
            s.clone()
        }
        None => {
            let arch: Architecture = name.parse().map_err(|_| {
                mismatch(format!("`{name}` is not built in; load it with its layer table"))
            })?;
            arch.build(k).map_err(|e| mismatch(e.to_string()))?
        }
    };
    let mut net = Network::zeros(spec);
    if layer_count != net.layers.len() {
        return Err(mismatch(format!(
            "file has {layer_count} layers, `{name}` has {}",
            net.layers.len()
        )));
    }

    let backbone = net.backbone_len();
    for (i, layer) in net.layers.iter_mut().enumerate() {
        let label = match i {
            _ if i < backbone => format!("layer {}", i + 1),
            _ if i == backbone => "head_lo".to_string(),
            _ => "head_hi".to_string(),
        };
        let ctx = |what: &str| {
            let s = format!("{label} {what}");
            move || s
        };
        let mut dims = [0usize; 4];
        for (d, what) in dims.iter_mut().zip(["kernel", "stride", "in_ch", "out_ch"]) {
            *d = r.u16(ctx(what))? as usize;
        }
        let c = &mut layer.conv;
        if dims != [c.kernel, c.stride, c.in_ch, c.out_ch] {
            return Err(mismatch(format!(
                "{label} is {:?} in the file but {:?} in the spec",
                dims,
                [c.kernel, c.stride, c.in_ch, c.out_ch]
            )));
        }
        let count = r.u32(ctx("weight count"))? as usize;
        if count != c.weights.data().len() {
            return Err(mismatch(format!(
                "{label} stores {count} weights, spec needs {}",
                c.weights.data().len()
            )));
        }
        let w = r.f32s(count, ctx("weights"))?;
        c.weights.data_mut().copy_from_slice(&w);
        c.bias = r.f32s(c.out_ch, ctx("biases"))?;
        let out_ch = c.out_ch;
        let has_bn = r.take(1, ctx("batch-norm flag"))?[0] == 1;
        if has_bn != layer.bn.is_some() {
            return Err(mismatch(format!("{label} batch-norm presence differs from the spec")));
        }
        if has_bn {
            let mut bn = BatchNormParams::new(out_ch);
            bn.gamma = r.f32s(out_ch, ctx("batch-norm gamma"))?;
            bn.beta = r.f32s(out_ch, ctx("batch-norm beta"))?;
            bn.running_mean = r.f32s(out_ch, ctx("batch-norm mean"))?;
            bn.running_var = r.f32s(out_ch, ctx("batch-norm variance"))?;
            layer.bn = Some(bn);
        }
        let mask_len = r.u32(ctx("mask length"))? as usize;
        if mask_len != count.div_ceil(8) {
            return Err(mismatch(format!("{label} mask has {mask_len} bytes for {count} weights")));
        }
        layer.mask = Mask::from_bytes(r.take(mask_len, ctx("mask"))?, count);
        let stray = layer
            .conv
            .weights
            .data()
            .iter()
            .zip(layer.mask.keep_flags())
            .any(|(w, keep)| !keep && *w != 0.0);
        if stray {
            return Err(mismatch(format!("{label} has nonzero weights under its mask")));
        }
    }
    let mut anchors = [(0.0, 0.0); 4];
    for (i, a) in anchors.iter_mut().enumerate() {
        let v = r.f32s(2, || format!("anchor {i}"))?;
        *a = (v[0], v[1]);
    }
    net.anchors = AnchorSet(anchors);
    if r.pos != bytes.len() {
        return Err(mismatch(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(net)
}
