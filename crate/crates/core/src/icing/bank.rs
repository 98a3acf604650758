//! Penultimate-feature banks and their `ICKF` file format.
//!
//! ```text
//! "ICKF" | version u32 | N u32 | d u32 | K u32 | digest [u8; 32]
//! features f32[N×d] | labels u32[N]
//! ```
//! Little-endian throughout.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{checkpoint, Network};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"ICKF";
pub const VERSION: u32 = 1;

/// SHA-256 over the extractor layers: head index, each layer's tag and
/// hyperparameters, then every parameter's shape and values widened to f64.
pub fn extractor_digest<T: Scalar>(network: &Network<T>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((network.head_index() as u32).to_le_bytes());
    let mut buf = Vec::new();
    for layer in network.extractor() {
        buf.clear();
        checkpoint::layer_header(layer, &mut buf);
        for p in layer.params() {
            for &d in p.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in p.data() {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        h.update(&buf);
    }
    h.finalize().into()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank<T: Scalar = f32> {
    features: Tensor<T>,
    labels: Vec<usize>,
    num_classes: usize,
    source_hash: [u8; 32],
}

impl<T: Scalar> FeatureBank<T> {
    pub fn new(features: Tensor<T>, labels: Vec<usize>, num_classes: usize, source_hash: [u8; 32]) -> Result<Self> {
        let (n, _) = features.dims2("feature bank")?;
        if n != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "feature bank",
                lhs: features.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                num_classes,
                origin: None,
            });
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            source_hash,
        })
    }

    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn source_hash(&self) -> &[u8; 32] {
        &self.source_hash
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature width `d`.
    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// Fails with [`Error::StaleFeatureBank`] unless `network`'s extractor
    /// produced this bank.
    pub fn check_source(&self, network: &Network<T>) -> Result<()> {
        if extractor_digest(network) != self.source_hash {
            return Err(Error::StaleFeatureBank);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(52 + 4 * (self.features.len() + self.len()));
        out.extend_from_slice(&MAGIC);
        for v in [VERSION, self.len() as u32, self.dim() as u32, self.num_classes as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.source_hash);
        for &v in self.features.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let truncated = |detail: String| Error::Truncated {
            path: path.into(),
            detail,
        };
        if bytes.len() < 4 {
            return Err(truncated("no magic".into()));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                path: path.into(),
                found: u32::from_be_bytes(bytes[..4].try_into().unwrap()),
                expected: u32::from_be_bytes(MAGIC),
            });
        }
        if bytes.len() < 52 {
            return Err(truncated(format!("header needs 52 bytes, file has {}", bytes.len())));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        if word(0) != VERSION {
            return Err(Error::VersionMismatch {
                path: path.into(),
                found: word(0),
                expected: VERSION,
            });
        }
        let (n, d, k) = (word(1) as usize, word(2) as usize, word(3) as usize);
        let hash: [u8; 32] = bytes[20..52].try_into().unwrap();
        let body = (n as u64) * (d as u64 + 1) * 4;
        let have = (bytes.len() - 52) as u64;
        if have < body {
            return Err(truncated(format!("payload needs {body} bytes, file has {have}")));
        }
        if have > body {
            return Err(Error::Malformed {
                path: path.into(),
                detail: format!("{} trailing bytes", have - body),
            });
        }
        if n == 0 || d == 0 {
            return Err(Error::Malformed {
                path: path.into(),
                detail: format!("empty bank {n}x{d}"),
            });
        }
        let feat_end = 52 + n * d * 4;
        let features = bytes[52..feat_end]
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        let labels = bytes[feat_end..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        Self::new(Tensor::new(vec![n, d], features)?, labels, k, hash).map_err(|e| match e {
            Error::LabelOutOfRange {
                index,
                label,
                num_classes,
                ..
            } => Error::LabelOutOfRange {
                index,
                label,
                num_classes,
                origin: Some(path.into()),
            },
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, Architecture, InitScheme};
    use crate::rng;
    use rand::Rng;

    fn bank(seed: u64) -> FeatureBank<f32> {
        let mut r = rng::seeded(seed);
        let f = Tensor::from_fn(&[9, 4], |_| r.random_range(-5.0..5.0f32));
        let labels = (0..9).map(|i| i % 3).collect();
        FeatureBank::new(f, labels, 3, [7; 32]).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let b = bank(1);
        let bytes = b.to_bytes();
        let back = FeatureBank::<f32>::from_bytes(&bytes, Path::new("m")).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.to_bytes(), bytes);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.ickf");
        b.save(&p).unwrap();
        assert_eq!(FeatureBank::<f32>::load(&p).unwrap(), b);
    }

    #[test]
    fn rejections() {
        let bytes = bank(2).to_bytes();
        let p = Path::new("bank");
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"ICK1");
        assert!(matches!(
            FeatureBank::<f32>::from_bytes(&bad, p),
            Err(Error::BadMagic { .. })
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            FeatureBank::<f32>::from_bytes(&bad, p),
            Err(Error::VersionMismatch { .. })
        ));
        for cut in [2, 30, bytes.len() - 1] {
            assert!(matches!(
                FeatureBank::<f32>::from_bytes(&bytes[..cut], p),
                Err(Error::Truncated { .. })
            ));
        }
        let mut bad = bytes.clone();
        bad.extend_from_slice(&[0; 4]);
        assert!(matches!(
            FeatureBank::<f32>::from_bytes(&bad, p),
            Err(Error::Malformed { .. })
        ));
        let mut bad = bytes;
        let last = bad.len() - 4;
        bad[last..].copy_from_slice(&3u32.to_le_bytes());
        assert!(matches!(
            FeatureBank::<f32>::from_bytes(&bad, p),
            Err(Error::LabelOutOfRange { label: 3, index: 8, .. })
        ));
    }

    #[test]
    fn digest_tracks_extractor_only() {
        let arch = Architecture::Cnn { filters: vec![2] };
        let net = init_params(arch.build::<f32>([1, 4, 4], 3).unwrap(), InitScheme::He, 1);
        let d = extractor_digest(&net);
        assert_eq!(d, extractor_digest(&net.clone()));
        let mut head_changed = net.clone();
        head_changed.params_mut().into_iter().last().unwrap().data_mut()[0] = 1.0;
        assert_eq!(extractor_digest(&head_changed), d);
        let mut body_changed = net.clone();
        body_changed.params_mut()[0].data_mut()[0] += 1e-7;
        assert_ne!(extractor_digest(&body_changed), d);
        let other = init_params(arch.build::<f32>([1, 4, 4], 3).unwrap(), InitScheme::He, 2);
        assert_ne!(extractor_digest(&other), d);
    }
}
