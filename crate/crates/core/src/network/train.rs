use rand::RngCore;

use crate::data::{augment_batch, batch_indices, AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::{kernels, GradTape, Scalar, Tensor};

use super::{InitScheme, Network, Optimizer, OptimizerState};

/// Batch size for inference passes. Results do not depend on it.
pub const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub augment: AugmentPolicy,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            optimizer: Optimizer::adam(),
            learning_rate: 1e-3,
            epochs: 3,
            seed: 0,
            augment: AugmentPolicy::disabled(),
            init: InitScheme::He,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed: self.seed,
            augment: self.augment,
        }
    }
}

/// Minibatch loop settings shared by full training and head retraining.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub augment: AugmentPolicy,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Running accuracy and mean cross-entropy over probability rows.
#[derive(Clone, Debug, Default)]
pub struct Scorer {
    correct: usize,
    total: usize,
    loss_sum: f64,
}

impl Scorer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Argmax ties resolve to the lowest class index.
    pub fn add<T: Scalar>(&mut self, probs: &Tensor<T>, labels: &[usize]) -> Result<()> {
        let (n, k) = probs.dims2("score")?;
        if n != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "score",
                lhs: probs.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        for (row, &label) in probs.data().chunks_exact(k).zip(labels) {
            if label >= k {
                return Err(Error::LabelOutOfRange {
                    index: self.total,
                    label,
                    num_classes: k,
                    origin: None,
                });
            }
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            self.correct += usize::from(best == label);
            self.loss_sum += kernels::nll(row[label].as_f64());
            self.total += 1;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<Evaluation> {
        if self.total == 0 {
            return Err(Error::Empty("evaluation set"));
        }
        Ok(Evaluation {
            accuracy: self.correct as f64 / self.total as f64,
            loss: self.loss_sum / self.total as f64,
        })
    }
}

/// Accuracy and mean cross-entropy. No augmentation.
pub fn evaluate<T: Scalar>(network: &Network<T>, dataset: &Dataset<T>) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut scorer = Scorer::new();
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let x = dataset.images().gather_rows(chunk);
        let probs = network.forward(&x)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels()[i]).collect();
        scorer.add(&probs, &labels)?;
    }
    scorer.finish()
}

/// Minibatch training of every parameter of `network` on `(inputs, labels)`.
/// Each epoch draws a fresh shuffle from the shuffle stream of `seed`;
/// augmentation draws from the augment stream.
pub fn fit<T: Scalar>(
    mut network: Network<T>,
    inputs: &Tensor<T>,
    labels: &[usize],
    options: &FitOptions,
) -> Result<(Network<T>, TrainLog)> {
    let n = inputs.shape()[0];
    if n == 0 || labels.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "fit",
            lhs: inputs.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if options.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let k = network.num_classes();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            num_classes: k,
            origin: None,
        });
    }
    let mut log = TrainLog::default();
    if options.epochs == 0 {
        return Ok((network, log));
    }
    let mut state = OptimizerState::new(options.optimizer, options.learning_rate, &network.params());
    let mut shuffle = rng::stream(options.seed, Stream::Shuffle);
    let mut aug = rng::stream(options.seed, Stream::Augment);
    for _ in 0..options.epochs {
        let mut scorer = Scorer::new();
        for idx in batch_indices(n, options.batch_size, true, shuffle.next_u64()) {
            let mut x = inputs.gather_rows(&idx);
            if !options.augment.is_identity() {
                x = augment_batch(&x, &options.augment, &mut aug);
            }
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut tape = GradTape::new();
            let xv = tape.constant(x);
            let (probs, params) = network.forward_taped(&mut tape, xv)?;
            let loss = tape.cross_entropy(probs, &y)?;
            let mut grads = tape.backward(loss)?;
            scorer.add(tape.value(probs), &y)?;
            let g: Vec<Tensor<T>> = params
                .iter()
                .map(|&p| grads.take(p).unwrap_or_else(|| Tensor::zeros(tape.value(p).shape())))
                .collect();
            drop(tape);
            state.step(network.params_mut(), &g)?;
        }
        let e = scorer.finish()?;
        log.epochs.push(EpochStats {
            mean_loss: e.loss,
            accuracy: e.accuracy,
        });
    }
    Ok((network, log))
}

/// Ordinary end-to-end training. The network should already be initialized.
pub fn train<T: Scalar>(
    network: Network<T>,
    dataset: &Dataset<T>,
    config: &TrainConfig,
) -> Result<(Network<T>, TrainLog)> {
    config.validate()?;
    if network.num_classes() != dataset.num_classes() {
        return Err(Error::Config(format!(
            "network has {} outputs but dataset {} has {} classes",
            network.num_classes(),
            dataset.name(),
            dataset.num_classes()
        )));
    }
    fit(network, dataset.images(), dataset.labels(), &config.fit_options())
}
