//! CIFAR binary batches: one label byte (CIFAR-100: coarse then fine) followed
//! by 3072 channel-planar pixels (1024 R, 1024 G, 1024 B), per record.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::Dataset;

const PIXELS: usize = 3 * 32 * 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub fn record_size(self) -> usize {
        self.label_bytes() + PIXELS
    }

    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CifarVariant::Cifar10 => "cifar10",
            CifarVariant::Cifar100 => "cifar100",
        }
    }
}

/// Concatenates the records of every file in order. CIFAR-100 keeps the fine
/// label.
pub fn load_cifar<T: Scalar, P: AsRef<Path>>(paths: &[P], variant: CifarVariant) -> Result<Dataset<T>> {
    let record = variant.record_size();
    let classes = variant.num_classes();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() % record != 0 {
            return Err(Error::RecordSize {
                path: path.into(),
                len: bytes.len(),
                record,
            });
        }
        for (i, rec) in bytes.chunks_exact(record).enumerate() {
            let label = rec[variant.label_bytes() - 1] as usize;
            let coarse_bad = variant == CifarVariant::Cifar100 && rec[0] >= 20;
            if label >= classes || coarse_bad {
                return Err(Error::LabelOutOfRange {
                    index: i,
                    label: if coarse_bad { rec[0] as usize } else { label },
                    num_classes: if coarse_bad { 20 } else { classes },
                    origin: Some(path.into()),
                });
            }
            labels.push(label);
            data.extend(rec[variant.label_bytes()..].iter().map(|&b| T::of(b as f64 / 255.0)));
        }
    }
    if labels.is_empty() {
        return Err(Error::Empty("cifar dataset"));
    }
    let images = Tensor::new(vec![labels.len(), 3, 32, 32], data)?;
    Dataset::new(images, labels, classes, variant.name())
}

/// Writes records in the binary layout. `labels` holds one byte per record
/// for CIFAR-10 and `(coarse, fine)` pairs for CIFAR-100.
pub fn write_cifar(path: impl AsRef<Path>, variant: CifarVariant, labels: &[u8], pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let lb = variant.label_bytes();
    let n = labels.len() / lb;
    assert_eq!(pixels.len(), n * PIXELS, "pixel buffer does not match record count");
    let mut out = Vec::with_capacity(n * variant.record_size());
    for i in 0..n {
        out.extend_from_slice(&labels[i * lb..(i + 1) * lb]);
        out.extend_from_slice(&pixels[i * PIXELS..(i + 1) * PIXELS]);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
