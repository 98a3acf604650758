//! Datasets, binary loaders, augmentation and minibatching.

mod augment;
mod cifar;
mod mnist;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::{Scalar, Tensor};

pub use augment::{augment_batch, augmented_image_count, AugmentPolicy};
pub use cifar::{load_cifar, write_cifar, CifarVariant};
pub use mnist::{load_mnist, load_mnist_dir, write_idx_images, write_idx_labels, MnistFiles};

/// Images `[N×C×H×W]` with pixel values in `[0, 1]` and one label per image.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T: Scalar = f32> {
    images: Tensor<T>,
    labels: Vec<usize>,
    num_classes: usize,
    name: String,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        let (n, _, _, _) = images.dims4("dataset")?;
        if labels.len() != n {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                lhs: images.shape().to_vec(),
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
            images,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn images(&self) -> &Tensor<T> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("selection"));
        }
        Ok(Self {
            images: self.images.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: self.name.clone(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            name: self.name.clone(),
        }
    }
}

/// Balanced random subset with exactly `n_per_class` samples of every class.
/// Selected samples keep their original relative order.
pub fn subset<T: Scalar>(dataset: &Dataset<T>, n_per_class: usize, seed: u64) -> Result<Dataset<T>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = rng::stream(seed, Stream::Subset);
    let mut chosen = Vec::with_capacity(n_per_class * dataset.num_classes);
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.len() < n_per_class {
            return Err(Error::InsufficientSamples {
                class,
                available: members.len(),
                requested: n_per_class,
            });
        }
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..n_per_class]);
    }
    chosen.sort_unstable();
    dataset.select(&chosen)
}

/// Sample indices split into consecutive batches; the last may be short.
pub fn batch_indices(n: usize, batch_size: usize, shuffle: bool, seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut rng::stream(seed, Stream::Shuffle));
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// One epoch of `(images, labels)` minibatches.
pub fn batches<T: Scalar>(
    dataset: &Dataset<T>,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> impl Iterator<Item = (Tensor<T>, Vec<usize>)> + '_ {
    batch_indices(dataset.len(), batch_size, shuffle, seed)
        .into_iter()
        .map(move |idx| {
            let labels = idx.iter().map(|&i| dataset.labels[i]).collect();
            (dataset.images.gather_rows(&idx), labels)
        })
}
