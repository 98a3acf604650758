use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Scalar;

use super::{Layer, Network};

/// Reference layouts. Parameters are zero until [`super::init_params`] runs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// conv stem → relu → 2×2 max-pool → `(depth−2)/2` residual blocks →
    /// global max-pool → flatten → head. `depth` counts the stem, two convs
    /// per block and the head.
    TinyResNet { depth: usize, width: usize },
    /// Per entry: 3×3 conv → relu → 2×2 max-pool; then flatten → head.
    Cnn { filters: Vec<usize> },
    /// flatten → (dense → relu)* → head.
    Mlp { hidden: Vec<usize> },
}

impl Architecture {
    pub fn build<T: Scalar>(&self, input: [usize; 3], num_classes: usize) -> Result<Network<T>> {
        let [c, h, w] = input;
        let mut layers = Vec::new();
        let features = match self {
            Architecture::TinyResNet { depth, width } => {
                if *depth < 2 || (depth - 2) % 2 != 0 {
                    return Err(Error::Config(format!("TinyResNet depth must be 2 + 2k, got {depth}")));
                }
                layers.push(Layer::conv(c, *width, 3, 1, 1));
                layers.push(Layer::Relu);
                let (mut sh, mut sw) = (h, w);
                if h >= 4 && w >= 4 {
                    layers.push(Layer::MaxPool { window: 2, stride: 2 });
                    sh /= 2;
                    sw /= 2;
                }
                for _ in 0..(depth - 2) / 2 {
                    layers.push(Layer::residual(*width, 3)?);
                }
                let window = sh.min(sw);
                layers.push(Layer::MaxPool { window, stride: window });
                layers.push(Layer::Flatten);
                width * (sh / window) * (sw / window)
            }
            Architecture::Cnn { filters } => {
                let (mut ch, mut sh, mut sw) = (c, h, w);
                for &f in filters {
                    layers.push(Layer::conv(ch, f, 3, 1, 1));
                    layers.push(Layer::Relu);
                    if sh >= 2 && sw >= 2 {
                        layers.push(Layer::MaxPool { window: 2, stride: 2 });
                        sh /= 2;
                        sw /= 2;
                    }
                    ch = f;
                }
                layers.push(Layer::Flatten);
                ch * sh * sw
            }
            Architecture::Mlp { hidden } => {
                layers.push(Layer::Flatten);
                let mut d = c * h * w;
                for &u in hidden {
                    layers.push(Layer::dense(d, u));
                    layers.push(Layer::Relu);
                    d = u;
                }
                d
            }
        };
        let head_index = layers.len();
        layers.push(Layer::head(features, num_classes));
        Network::new(layers, head_index)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        match self {
            Architecture::TinyResNet { depth, width } => write!(f, "resnet:{depth}:{width}"),
            Architecture::Cnn { filters } => write!(f, "cnn:{}", join(filters)),
            Architecture::Mlp { hidden } => write!(f, "mlp:{}", join(hidden)),
        }
    }
}

/// `resnet:<depth>[:<width>]`, `cnn:<f1>,<f2>,…`, `mlp:[<h1>,…]`.
impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unrecognized architecture {s:?}"));
        let list = |v: &str| -> Result<Vec<usize>> {
            v.split(',')
                .filter(|p| !p.trim().is_empty())
                .map(|p| p.trim().parse().map_err(|_| bad()))
                .collect()
        };
        let (kind, rest) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        match kind {
            "resnet" => {
                let mut parts = rest.split(':');
                let depth = parts.next().and_then(|d| d.parse().ok()).ok_or_else(bad)?;
                let width = match parts.next() {
                    Some(w) => w.parse().map_err(|_| bad())?,
                    None => 8,
                };
                if parts.next().is_some() || width == 0 {
                    return Err(bad());
                }
                Ok(Architecture::TinyResNet { depth, width })
            }
            "cnn" => {
                let filters = list(rest)?;
                if filters.is_empty() || filters.contains(&0) {
                    return Err(bad());
                }
                Ok(Architecture::Cnn { filters })
            }
            "mlp" => {
                let hidden = list(rest)?;
                if hidden.contains(&0) {
                    return Err(bad());
                }
                Ok(Architecture::Mlp { hidden })
            }
            _ => Err(bad()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LayerKind;

    #[test]
    fn parse_and_display_round_trip() {
        for s in ["resnet:8:8", "cnn:8,16", "mlp:128,64", "mlp:"] {
            let a: Architecture = s.parse().unwrap();
            assert_eq!(a.to_string(), s);
        }
        assert_eq!(
            "resnet:20".parse::<Architecture>().unwrap(),
            Architecture::TinyResNet { depth: 20, width: 8 }
        );
        for s in ["resnet:x", "cnn:", "vgg:16", "resnet:8:0"] {
            assert!(s.parse::<Architecture>().is_err(), "{s}");
        }
    }

    #[test]
    fn resnet_depth_must_be_even() {
        assert!(Architecture::TinyResNet { depth: 7, width: 4 }
            .build::<f32>([1, 28, 28], 10)
            .is_err());
    }

    #[test]
    fn resnet8_layout() {
        let net = Architecture::TinyResNet { depth: 8, width: 8 }
            .build::<f32>([1, 28, 28], 10)
            .unwrap();
        let kinds: Vec<_> = net.layers().iter().map(|l| l.kind()).collect();
        use LayerKind::*;
        assert_eq!(
            kinds,
            vec![
                Conv,
                Relu,
                MaxPool,
                Residual,
                Residual,
                Residual,
                MaxPool,
                Flatten,
                SoftmaxHead
            ]
        );
        assert_eq!(net.head().in_features(), 8);
    }
}
