use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(momentum: f64) -> Self {
        Optimizer::Sgd { momentum }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam()
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Optimizer::Adam { .. } => f.write_str("adam"),
            Optimizer::Sgd { momentum } if *momentum == 0.0 => f.write_str("sgd"),
            Optimizer::Sgd { momentum } => write!(f, "sgd:{momentum}"),
        }
    }
}

/// `adam`, `sgd` or `sgd:<momentum>`.
impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.split_once(':') {
            None if s == "adam" => Ok(Optimizer::adam()),
            None if s == "sgd" => Ok(Optimizer::sgd(0.0)),
            Some(("sgd", m)) => match m.parse::<f64>() {
                Ok(m) if (0.0..1.0).contains(&m) => Ok(Optimizer::sgd(m)),
                _ => Err(Error::Config(format!("bad momentum in {s:?}"))),
            },
            _ => Err(Error::Config(format!("unknown optimizer {s:?}"))),
        }
    }
}

/// Moment buffers for one parameter list.
#[derive(Clone, Debug)]
pub struct OptimizerState<T: Scalar> {
    optimizer: Optimizer,
    learning_rate: f64,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(optimizer: Optimizer, learning_rate: f64, params: &[&Tensor<T>]) -> Self {
        let zeros = |on: bool| -> Vec<Tensor<T>> {
            if on {
                params.iter().map(|p| Tensor::zeros(p.shape())).collect()
            } else {
                Vec::new()
            }
        };
        let (m, v) = match optimizer {
            Optimizer::Adam { .. } => (true, true),
            Optimizer::Sgd { momentum } => (momentum != 0.0, false),
        };
        Self {
            optimizer,
            learning_rate,
            step: 0,
            first: zeros(m),
            second: zeros(v),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `grads[i]` pairs with `params[i]`.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Tape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let lr = T::of(self.learning_rate);
        match self.optimizer {
            Optimizer::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = T::of(1.0 - beta1.powi(t));
                let c2 = T::of(1.0 - beta2.powi(t));
                let (b1, b2, eps) = (T::of(beta1), T::of(beta2), T::of(eps));
                let one = T::one();
                for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let (m, v) = (self.first[i].data_mut(), self.second[i].data_mut());
                    for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = b1 * m[j] + (one - b1) * gj;
                        v[j] = b2 * v[j] + (one - b2) * gj * gj;
                        let mh = m[j] / c1;
                        let vh = v[j] / c2;
                        *w -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
            Optimizer::Sgd { momentum } => {
                let mu = T::of(momentum);
                for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    if self.first.is_empty() {
                        for (w, &gj) in p.data_mut().iter_mut().zip(g.data()) {
                            *w -= lr * gj;
                        }
                    } else {
                        let vel = self.first[i].data_mut();
                        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                            vel[j] = mu * vel[j] + gj;
                            *w -= lr * vel[j];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction the first step is lr * g / (|g| + eps).
        let mut w = Tensor::<f64>::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::<f64>::new(vec![3], vec![0.3, -4.0, 1e-3]).unwrap();
        let mut st = OptimizerState::new(Optimizer::adam(), 0.01, &[&w]);
        st.step(vec![&mut w], std::slice::from_ref(&g)).unwrap();
        for (i, (start, gi)) in [1.0, -2.0, 0.5].iter().zip(g.data()).enumerate() {
            let expect = start - 0.01 * gi / (gi.abs() + 1e-8);
            assert!((w.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_matches_scalar_reference() {
        let mut r = rng::seeded(1);
        let gs: Vec<f64> = (0..20).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut w = Tensor::<f64>::scalar(0.7);
        let mut st = OptimizerState::new(Optimizer::adam(), 1e-3, &[&w]);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.7f64);
        for (t, &g) in gs.iter().enumerate() {
            st.step(vec![&mut w], &[Tensor::scalar(g)]).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            x -= 1e-3 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((w.data()[0] - x).abs() < 1e-12);
    }

    #[test]
    fn sgd_momentum() {
        let mut w = Tensor::<f64>::scalar(1.0);
        let mut st = OptimizerState::new(Optimizer::sgd(0.5), 0.1, &[&w]);
        st.step(vec![&mut w], &[Tensor::scalar(1.0)]).unwrap();
        st.step(vec![&mut w], &[Tensor::scalar(1.0)]).unwrap();
        // velocities 1, 1.5
        assert!((w.data()[0] - (1.0 - 0.1 - 0.15)).abs() < 1e-12);
    }

    #[test]
    fn parse_names() {
        assert_eq!("adam".parse::<Optimizer>().unwrap(), Optimizer::adam());
        assert_eq!("SGD:0.9".parse::<Optimizer>().unwrap(), Optimizer::sgd(0.9));
        assert_eq!(Optimizer::sgd(0.9).to_string(), "sgd:0.9");
        assert!("rmsprop".parse::<Optimizer>().is_err());
        assert!("sgd:1.5".parse::<Optimizer>().is_err());
    }

    #[test]
    fn mismatched_gradients_rejected() {
        let mut w = Tensor::<f32>::zeros(&[2]);
        let mut st = OptimizerState::new(Optimizer::adam(), 1e-3, &[&w]);
        assert!(st.step(vec![&mut w], &[Tensor::zeros(&[3])]).is_err());
        assert!(st.step(vec![&mut w], &[]).is_err());
    }

    proptest! {
        #[test]
        fn zero_gradient_leaves_parameters_bitwise(seed: u64, steps in 1usize..6, sgd: bool) {
            let mut r = rng::seeded(seed);
            let mut w = Tensor::<f32>::from_fn(&[7], |_| r.random_range(-3.0..3.0));
            let before = w.clone();
            let opt = if sgd { Optimizer::sgd(0.9) } else { Optimizer::adam() };
            let mut st = OptimizerState::new(opt, 1e-3, &[&w]);
            for _ in 0..steps {
                st.step(vec![&mut w], &[Tensor::zeros(&[7])]).unwrap();
            }
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&w), bits(&before));
        }
    }
}
