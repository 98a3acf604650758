use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::{Scalar, Tensor};

use super::{Head, Layer, Network};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// Normal, std `sqrt(2 / fan_in)`.
    He,
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    Xavier,
}

impl InitScheme {
    fn fill<T: Scalar, R: Rng + ?Sized>(self, t: &mut Tensor<T>, fan_in: usize, fan_out: usize, rng: &mut R) {
        match self {
            InitScheme::He => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                for v in t.data_mut() {
                    *v = T::of(normal.sample(rng));
                }
            }
            InitScheme::Xavier => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in t.data_mut() {
                    *v = T::of(rng.random_range(-a..a));
                }
            }
        }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitScheme::He => "he",
            InitScheme::Xavier => "xavier",
        })
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "he" => Ok(InitScheme::He),
            "xavier" | "glorot" => Ok(InitScheme::Xavier),
            other => Err(Error::Config(format!("unknown init scheme {other:?}"))),
        }
    }
}

/// `(fan_in, fan_out)` of a dense matrix `[in×out]` or a conv kernel
/// `[F×C×kh×kw]`.
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [i, o] => (*i, *o),
        [f, c, kh, kw] => (c * kh * kw, f * kh * kw),
        _ => unreachable!("weights are rank 2 or 4"),
    }
}

/// Draws every weight in layer order from the init stream of `seed`; biases
/// become zero.
pub fn init_params<T: Scalar>(mut network: Network<T>, scheme: InitScheme, seed: u64) -> Network<T> {
    let mut rng = rng::stream(seed, Stream::Init);
    for layer in &mut network.layers {
        match layer {
            Layer::Dense { weight, bias } => {
                let (fi, fo) = fans(weight.shape());
                scheme.fill(weight, fi, fo, &mut rng);
                *bias = Tensor::zeros(bias.shape());
            }
            Layer::SoftmaxHead(h) => init_head(h, scheme, &mut rng),
            Layer::Conv { kernel, .. } => {
                let (fi, fo) = fans(kernel.shape());
                scheme.fill(kernel, fi, fo, &mut rng);
            }
            Layer::Residual { first, second } => {
                for k in [first, second] {
                    let (fi, fo) = fans(k.shape());
                    scheme.fill(k, fi, fo, &mut rng);
                }
            }
            Layer::Relu | Layer::MaxPool { .. } | Layer::Flatten => {}
        }
    }
    network
}

pub fn init_head<T: Scalar, R: Rng + ?Sized>(head: &mut Head<T>, scheme: InitScheme, rng: &mut R) {
    let (fi, fo) = fans(head.weight.shape());
    scheme.fill(&mut head.weight, fi, fo, rng);
    head.bias = Tensor::zeros(head.bias.shape());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    #[test]
    fn he_std_matches_fan_in() {
        let net = Network::<f64>::new(vec![Layer::dense(1000, 1000), Layer::head(1000, 10)], 1).unwrap();
        let net = init_params(net, InitScheme::He, 11);
        let w = net.layers()[0].params()[0].data().to_vec();
        let (mean, std) = moments(&w);
        let expect = (2.0f64 / 1000.0).sqrt();
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((std / expect - 1.0).abs() < 0.02, "std {std} vs {expect}");
    }

    #[test]
    fn he_conv_fan_in_counts_kernel_area() {
        let net =
            Network::<f64>::new(vec![Layer::conv(16, 64, 3, 1, 1), Layer::Flatten, Layer::head(4, 2)], 2).unwrap();
        let net = init_params(net, InitScheme::He, 2);
        let (_, std) = moments(net.layers()[0].params()[0].data());
        let expect = (2.0f64 / (16.0 * 9.0)).sqrt();
        assert!((std / expect - 1.0).abs() < 0.03, "std {std} vs {expect}");
    }

    #[test]
    fn xavier_bounds() {
        let net = Network::<f64>::new(vec![Layer::dense(30, 70), Layer::head(70, 5)], 1).unwrap();
        let net = init_params(net, InitScheme::Xavier, 4);
        let a = (6.0f64 / 100.0).sqrt();
        let w = net.layers()[0].params()[0].data();
        assert!(w.iter().all(|v| v.abs() <= a));
        let (_, std) = moments(w);
        assert!((std / (a / 3f64.sqrt()) - 1.0).abs() < 0.05);
        assert!(net.head().bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn same_seed_same_parameters() {
        let arch = Architecture::TinyResNet { depth: 4, width: 4 };
        let a = init_params(arch.build::<f32>([1, 8, 8], 3).unwrap(), InitScheme::He, 9);
        let b = init_params(arch.build::<f32>([1, 8, 8], 3).unwrap(), InitScheme::He, 9);
        let c = init_params(arch.build::<f32>([1, 8, 8], 3).unwrap(), InitScheme::He, 10);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn scheme_names() {
        assert_eq!("He".parse::<InitScheme>().unwrap(), InitScheme::He);
        assert_eq!("xavier".parse::<InitScheme>().unwrap().to_string(), "xavier");
        assert!("lecun".parse::<InitScheme>().is_err());
    }
}
