//! `ICK1` checkpoints.
//!
//! ```text
//! "ICK1" | version u32 | head_index u32 | layer count u32
//! per layer: tag u8 | hyperparams u32* | param count u32
//!            per param: rank u32 | dims u32* | f32 data
//! ```
//! All integers and floats little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::{Head, Layer, LayerKind, Network};

pub const MAGIC: [u8; 4] = *b"ICK1";
pub const VERSION: u32 = 1;

fn hyperparam_count(kind: LayerKind) -> usize {
    match kind {
        LayerKind::Dense | LayerKind::MaxPool | LayerKind::Residual | LayerKind::SoftmaxHead => 2,
        LayerKind::Conv => 6,
        LayerKind::Relu | LayerKind::Flatten => 0,
    }
}

/// Tag and hyperparameters, shared with the extractor digest.
pub(crate) fn layer_header<T: Scalar>(layer: &Layer<T>, out: &mut Vec<u8>) {
    out.push(layer.kind() as u8);
    for h in layer.hyperparams() {
        out.extend_from_slice(&h.to_le_bytes());
    }
}

pub fn to_bytes<T: Scalar>(network: &Network<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    for v in [VERSION, network.head_index() as u32, network.layers().len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for layer in network.layers() {
        layer_header(layer, &mut out);
        let params = layer.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params {
            out.extend_from_slice(&(p.rank() as u32).to_le_bytes());
            for &d in p.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in p.data() {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Truncated {
                path: self.path.into(),
                detail: format!("reading {what} at byte {}", self.at),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn malformed(&self, detail: String) -> Error {
        Error::Malformed {
            path: self.path.into(),
            detail,
        }
    }
}

fn read_param<T: Scalar>(r: &mut Reader<'_>, layer: usize) -> Result<Tensor<T>> {
    let rank = r.u32("parameter rank")? as usize;
    if rank == 0 || rank > 4 {
        return Err(r.malformed(format!("layer {layer}: parameter rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32("parameter dims")? as usize);
    }
    let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let len = match len {
        Some(l) if l > 0 => l,
        _ => return Err(r.malformed(format!("layer {layer}: parameter shape {shape:?}"))),
    };
    let raw = r.take(len.saturating_mul(4), "parameter data")?;
    let data = raw
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    Tensor::new(shape, data)
}

fn expect_shape<T: Scalar>(r: &Reader<'_>, layer: usize, t: &Tensor<T>, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(r.malformed(format!(
            "layer {layer}: parameter shape {:?} disagrees with hyperparameters {shape:?}",
            t.shape()
        )));
    }
    Ok(())
}

pub fn from_bytes<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Network<T>> {
    let mut r = Reader { bytes, at: 0, path };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            found: u32::from_be_bytes(magic.try_into().unwrap()),
            expected: u32::from_be_bytes(MAGIC),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            path: path.into(),
            found: version,
            expected: VERSION,
        });
    }
    let head_index = r.u32("head index")? as usize;
    let count = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let tag = r.take(1, "layer tag")?[0];
        let kind = LayerKind::from_tag(tag).ok_or_else(|| r.malformed(format!("layer {i}: unknown tag {tag}")))?;
        let mut hp = Vec::new();
        for _ in 0..hyperparam_count(kind) {
            hp.push(r.u32("hyperparameters")? as usize);
        }
        let n_params = r.u32("parameter count")? as usize;
        let expected = match kind {
            LayerKind::Dense | LayerKind::Residual | LayerKind::SoftmaxHead => 2,
            LayerKind::Conv => 1,
            _ => 0,
        };
        if n_params != expected {
            return Err(r.malformed(format!(
                "layer {i} ({}): {n_params} parameters, expected {expected}",
                kind.name()
            )));
        }
        let mut params = Vec::with_capacity(expected);
        for _ in 0..expected {
            params.push(read_param::<T>(&mut r, i)?);
        }
        let mut params = params.into_iter();
        let layer = match kind {
            LayerKind::Dense | LayerKind::SoftmaxHead => {
                let (w, b) = (params.next().unwrap(), params.next().unwrap());
                expect_shape(&r, i, &w, &[hp[0], hp[1]])?;
                expect_shape(&r, i, &b, &[hp[1]])?;
                if kind == LayerKind::Dense {
                    Layer::Dense { weight: w, bias: b }
                } else {
                    Layer::SoftmaxHead(Head::new(w, b)?)
                }
            }
            LayerKind::Conv => {
                let k = params.next().unwrap();
                expect_shape(&r, i, &k, &[hp[1], hp[0], hp[2], hp[3]])?;
                if hp[4] == 0 {
                    return Err(r.malformed(format!("layer {i}: zero stride")));
                }
                Layer::Conv {
                    kernel: k,
                    stride: hp[4],
                    padding: hp[5],
                }
            }
            LayerKind::Residual => {
                let (a, b) = (params.next().unwrap(), params.next().unwrap());
                let s = [hp[0], hp[0], hp[1], hp[1]];
                expect_shape(&r, i, &a, &s)?;
                expect_shape(&r, i, &b, &s)?;
                if hp[1] % 2 == 0 {
                    return Err(r.malformed(format!("layer {i}: even residual kernel {}", hp[1])));
                }
                Layer::Residual { first: a, second: b }
            }
            LayerKind::MaxPool => {
                if hp[0] == 0 || hp[1] == 0 {
                    return Err(r.malformed(format!("layer {i}: zero pooling window or stride")));
                }
                Layer::MaxPool {
                    window: hp[0],
                    stride: hp[1],
                }
            }
            LayerKind::Relu => Layer::Relu,
            LayerKind::Flatten => Layer::Flatten,
        };
        layers.push(layer);
    }
    if r.at != bytes.len() {
        return Err(r.malformed(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    Network::new(layers, head_index).map_err(|e| r.malformed(e.to_string()))
}

pub fn save_checkpoint<T: Scalar>(network: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(network)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Network<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
