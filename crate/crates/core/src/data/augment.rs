use std::cell::Cell;

use rand::Rng;

use crate::tensor::{Scalar, Tensor};

/// Pad-and-random-crop plus horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentPolicy {
    pub enabled: bool,
    pub pad_crop: usize,
    pub horizontal_flip: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            pad_crop: 4,
            horizontal_flip: true,
        }
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.enabled || (self.pad_crop == 0 && !self.horizontal_flip)
    }
}

thread_local! {
    static AUGMENTED: Cell<u64> = const { Cell::new(0) };
}

/// Number of images this thread has passed through a non-identity
/// augmentation. Used to check that evaluation and feature extraction never
/// augment.
pub fn augmented_image_count() -> u64 {
    AUGMENTED.with(Cell::get)
}

/// Per image: zero-pad by `pad_crop`, crop a random window of the original
/// size, then mirror horizontally with probability 1/2.
pub fn augment_batch<T: Scalar, R: Rng + ?Sized>(batch: &Tensor<T>, policy: &AugmentPolicy, rng: &mut R) -> Tensor<T> {
    if policy.is_identity() {
        return batch.clone();
    }
    let s = batch.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let p = policy.pad_crop;
    let mut out = Tensor::zeros(s);
    let src = batch.data();
    let dst = out.data_mut();
    for img in 0..n {
        let oy = rng.random_range(0..=2 * p);
        let ox = rng.random_range(0..=2 * p);
        let flip = policy.horizontal_flip && rng.random_bool(0.5);
        for ch in 0..c {
            let base = (img * c + ch) * h * w;
            for y in 0..h {
                let sy = (y + oy) as isize - p as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let cx = if flip { w - 1 - x } else { x };
                    let sx = (cx + ox) as isize - p as isize;
                    if sx >= 0 && sx < w as isize {
                        dst[base + y * w + x] = src[base + sy as usize * w + sx as usize];
                    }
                }
            }
        }
    }
    AUGMENTED.with(|c| c.set(c.get() + n as u64));
    out
}
