//! Head retraining on frozen penultimate features.
//!
//! After ordinary training, the training set is passed once through the
//! extractor (no augmentation), a fresh softmax head is fitted on those
//! features alone, and the new head replaces the old one. Test-time
//! evaluation can either run the swapped network or push extracted features
//! through the new head directly; both produce identical numbers.

mod bank;

use std::fmt;
use std::str::FromStr;

use crate::data::{AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::network::{
    fit, init_head, Evaluation, FitOptions, InitScheme, Network, Optimizer, Scorer, TrainLog, EVAL_BATCH,
};
use crate::rng::{self, Stream};
use crate::tensor::{Scalar, Tensor};

pub use crate::network::Head;
pub use bank::{extractor_digest, FeatureBank, MAGIC as BANK_MAGIC, VERSION as BANK_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadInit {
    /// Re-initialize from `init_scheme` and `seed`.
    Fresh,
    /// Start from the network's current head.
    Warm,
}

impl fmt::Display for HeadInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadInit::Fresh => "fresh",
            HeadInit::Warm => "warm",
        })
    }
}

impl FromStr for HeadInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fresh" => Ok(HeadInit::Fresh),
            "warm" => Ok(HeadInit::Warm),
            other => Err(Error::Config(format!("unknown head init {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcingConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub head_init: HeadInit,
    pub init_scheme: InitScheme,
    pub seed: u64,
}

impl Default for IcingConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::adam(),
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 128,
            head_init: HeadInit::Fresh,
            init_scheme: InitScheme::Xavier,
            seed: 0,
        }
    }
}

impl IcingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("icing batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "icing learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Runs `layers[..head_index]` over the dataset in one pass and flattens each
/// sample. Rows are independent of batching.
pub fn extract_features<T: Scalar>(network: &Network<T>, dataset: &Dataset<T>) -> Result<FeatureBank<T>> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset for feature extraction"));
    }
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut parts = Vec::with_capacity(idx.len().div_ceil(EVAL_BATCH));
    for chunk in idx.chunks(EVAL_BATCH) {
        let x = dataset.images().gather_rows(chunk);
        parts.push(network.forward_range(x, 0..network.head_index())?.flatten_rows());
    }
    let features = Tensor::concat_rows(&parts)?;
    let d = features.shape()[1];
    if d != network.head().in_features() {
        return Err(Error::ShapeMismatch {
            op: "extract_features",
            lhs: features.shape().to_vec(),
            rhs: network.head().weight.shape().to_vec(),
        });
    }
    FeatureBank::new(
        features,
        dataset.labels().to_vec(),
        dataset.num_classes(),
        extractor_digest(network),
    )
}

/// Fits a head on `bank` by minibatch cross-entropy steps. `warm` supplies
/// the starting head when `config.head_init` is [`HeadInit::Warm`].
pub fn retrain_head<T: Scalar>(
    bank: &FeatureBank<T>,
    num_classes: usize,
    config: &IcingConfig,
    warm: Option<&Head<T>>,
) -> Result<(Head<T>, TrainLog)> {
    config.validate()?;
    if bank.is_empty() {
        return Err(Error::Empty("feature bank"));
    }
    let d = bank.dim();
    let head = match config.head_init {
        HeadInit::Fresh => {
            let mut h = Head::zeros(d, num_classes);
            init_head(&mut h, config.init_scheme, &mut rng::stream(config.seed, Stream::Init));
            h
        }
        HeadInit::Warm => {
            let h = warm.ok_or_else(|| Error::Config("warm head init needs a starting head".into()))?;
            if h.weight.shape() != [d, num_classes] {
                return Err(Error::ShapeMismatch {
                    op: "retrain_head",
                    lhs: vec![d, num_classes],
                    rhs: h.weight.shape().to_vec(),
                });
            }
            h.clone()
        }
    };
    let net = Network::with_head(Vec::new(), head)?;
    let options = FitOptions {
        batch_size: config.batch_size,
        optimizer: config.optimizer,
        learning_rate: config.learning_rate,
        epochs: config.epochs,
        seed: config.seed,
        augment: AugmentPolicy::disabled(),
    };
    let (net, log) = fit(net, bank.features(), bank.labels(), &options)?;
    Ok((net.head().clone(), log))
}

/// Copy of `network` with its head replaced. The extractor is untouched.
pub fn swap_head<T: Scalar>(network: &Network<T>, head: Head<T>) -> Result<Network<T>> {
    let slot = network.head();
    if slot.weight.shape() != head.weight.shape() || slot.bias.shape() != head.bias.shape() {
        return Err(Error::ShapeMismatch {
            op: "swap_head",
            lhs: slot.weight.shape().to_vec(),
            rhs: head.weight.shape().to_vec(),
        });
    }
    let mut out = network.clone();
    *out.head_mut() = head;
    Ok(out)
}

/// Scores `head` on extracted features: accuracy and mean cross-entropy.
pub fn evaluate_head<T: Scalar>(bank: &FeatureBank<T>, head: &Head<T>) -> Result<Evaluation> {
    let mut scorer = Scorer::new();
    let idx: Vec<usize> = (0..bank.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let probs = head.probs(bank.features().gather_rows(chunk))?;
        let labels: Vec<usize> = chunk.iter().map(|&i| bank.labels()[i]).collect();
        scorer.add(&probs, &labels)?;
    }
    scorer.finish()
}

/// Extracts test features with `network`'s extractor and scores them with
/// `head`, without building a swapped network. Agrees exactly with
/// `evaluate(&swap_head(network, head)?, dataset)`.
pub fn evaluate_fast_path<T: Scalar>(network: &Network<T>, head: &Head<T>, dataset: &Dataset<T>) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut scorer = Scorer::new();
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let x = dataset.images().gather_rows(chunk);
        let features = network.forward_range(x, 0..network.head_index())?;
        let probs = head.probs(features)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels()[i]).collect();
        scorer.add(&probs, &labels)?;
    }
    scorer.finish()
}

#[derive(Clone, Debug)]
pub struct IcingOutcome<T: Scalar = f32> {
    pub network: Network<T>,
    pub bank: FeatureBank<T>,
    pub log: TrainLog,
}

/// Extract, retrain, swap. The extractor digest is checked before and after.
pub fn apply_icing<T: Scalar>(
    network: &Network<T>,
    train_set: &Dataset<T>,
    config: &IcingConfig,
) -> Result<IcingOutcome<T>> {
    config.validate()?;
    let before = extractor_digest(network);
    let bank = extract_features(network, train_set)?;
    bank.check_source(network)?;
    let (head, log) = retrain_head(&bank, network.num_classes(), config, Some(network.head()))?;
    let out = swap_head(network, head)?;
    if extractor_digest(&out) != before {
        return Err(Error::ExtractorModified);
    }
    Ok(IcingOutcome {
        network: out,
        bank,
        log,
    })
}
