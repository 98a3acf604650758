//! IDX reader/writer for the MNIST files.
//!
//! Layout: big-endian u32 magic (`0x00000803` images, `0x00000801` labels),
//! big-endian u32 dimensions, then raw u8 payload.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::Dataset;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
const NUM_CLASSES: usize = 10;

/// The four files of the standard distribution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn read_idx(path: &Path, magic: u32, dims: usize) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = 4 + 4 * dims;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.into(),
            detail: format!("{} bytes, no magic number", bytes.len()),
        });
    }
    let found = be_u32(&bytes, 0);
    if found != magic {
        return Err(Error::BadMagic {
            path: path.into(),
            found,
            expected: magic,
        });
    }
    if bytes.len() < header {
        return Err(Error::Truncated {
            path: path.into(),
            detail: format!("header needs {header} bytes, file has {}", bytes.len()),
        });
    }
    let shape: Vec<usize> = (0..dims).map(|i| be_u32(&bytes, 4 + 4 * i) as usize).collect();
    let payload: usize = shape.iter().product();
    let available = bytes.len() - header;
    if available < payload {
        return Err(Error::Truncated {
            path: path.into(),
            detail: format!("payload needs {payload} bytes, file has {available}"),
        });
    }
    if available > payload {
        return Err(Error::Malformed {
            path: path.into(),
            detail: format!("{} trailing bytes after payload", available - payload),
        });
    }
    Ok((shape, bytes[header..].to_vec()))
}

/// Loads an image/label IDX pair. Pixels are scaled by 1/255.
pub fn load_mnist<T: Scalar>(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let (shape, pixels) = read_idx(images_path, IMAGE_MAGIC, 3)?;
    let (lshape, labels) = read_idx(labels_path, LABEL_MAGIC, 1)?;
    let (n, rows, cols) = (shape[0], shape[1], shape[2]);
    if n != lshape[0] {
        return Err(Error::CountMismatch {
            images_path: images_path.into(),
            labels_path: labels_path.into(),
            images: n,
            labels: lshape[0],
        });
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Malformed {
            path: images_path.into(),
            detail: format!("empty image set {n}x{rows}x{cols}"),
        });
    }
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= NUM_CLASSES) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            num_classes: NUM_CLASSES,
            origin: Some(labels_path.into()),
        });
    }
    let data = pixels.into_iter().map(|b| T::of(b as f64 / 255.0)).collect();
    let images = Tensor::new(vec![n, 1, rows, cols], data)?;
    Dataset::new(images, labels, NUM_CLASSES, "mnist")
}

/// Loads `(train, test)` from a directory holding the four standard files.
pub fn load_mnist_dir<T: Scalar>(dir: impl AsRef<Path>) -> Result<(Dataset<T>, Dataset<T>)> {
    let f = MnistFiles::in_dir(dir);
    Ok((
        load_mnist(&f.train_images, &f.train_labels)?,
        load_mnist(&f.test_images, &f.test_labels)?,
    ))
}

/// Writes `[N×rows×cols]` u8 pixels as an IDX image file.
pub fn write_idx_images(path: impl AsRef<Path>, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path, n: usize, labels: &[u8]) -> (PathBuf, PathBuf) {
        let (ip, lp) = (dir.join("img"), dir.join("lbl"));
        let pixels: Vec<u8> = (0..n * 4).map(|i| (i * 37 % 256) as u8).collect();
        write_idx_images(&ip, 2, 2, &pixels).unwrap();
        write_idx_labels(&lp, labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), 3, &[1, 9, 0]);
        let d = load_mnist::<f32>(&ip, &lp).unwrap();
        assert_eq!(d.images().shape(), &[3, 1, 2, 2]);
        assert_eq!(d.labels(), &[1, 9, 0]);
        let bytes: Vec<u8> = d.images().data().iter().map(|v| (v * 255.0).round() as u8).collect();
        let (ip2, lp2) = (dir.path().join("img2"), dir.path().join("lbl2"));
        write_idx_images(&ip2, 2, 2, &bytes).unwrap();
        write_idx_labels(&lp2, &[1, 9, 0]).unwrap();
        assert_eq!(std::fs::read(&ip).unwrap(), std::fs::read(&ip2).unwrap());
        assert_eq!(std::fs::read(&lp).unwrap(), std::fs::read(&lp2).unwrap());
    }

    #[test]
    fn truncated_image_file() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), 3, &[1, 2, 3]);
        let bytes = std::fs::read(&ip).unwrap();
        std::fs::write(&ip, &bytes[..bytes.len() - 1]).unwrap();
        let err = load_mnist::<f32>(&ip, &lp).unwrap_err();
        assert!(matches!(&err, Error::Truncated { path, .. } if path == &ip), "{err}");
        std::fs::write(&ip, &bytes[..10]).unwrap();
        assert!(matches!(load_mnist::<f32>(&ip, &lp), Err(Error::Truncated { .. })));
    }

    #[test]
    fn bad_magic_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), 2, &[1, 2]);
        // swapped arguments: label file where an image file belongs
        let err = load_mnist::<f32>(&lp, &ip).unwrap_err();
        assert!(
            matches!(&err, Error::BadMagic { path, found: 0x801, .. } if path == &lp),
            "{err}"
        );
    }

    #[test]
    fn label_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), 3, &[1, 10, 3]);
        let err = load_mnist::<f32>(&ip, &lp).unwrap_err();
        assert!(
            matches!(&err, Error::LabelOutOfRange { label: 10, index: 1, origin: Some(p), .. } if p == &lp),
            "{err}"
        );
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), 3, &[1, 2]);
        assert!(matches!(
            load_mnist::<f32>(&ip, &lp),
            Err(Error::CountMismatch {
                images: 3,
                labels: 2,
                ..
            })
        ));
    }
}
