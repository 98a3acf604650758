use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{load_cifar, load_mnist, subset, AugmentPolicy, CifarVariant, Dataset, MnistFiles};
use crate::error::{Error, Result};
use crate::icing::IcingConfig;
use crate::network::{Architecture, TrainConfig};
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Mnist(MnistFiles),
    Cifar {
        variant: CifarVariant,
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
    },
}

impl DatasetSource {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetSource::Mnist(_) => "mnist",
            DatasetSource::Cifar { variant, .. } => variant.name(),
        }
    }

    /// Standard file names inside `dir`.
    pub fn in_dir(kind: &str, dir: &Path) -> Result<Self> {
        Ok(match kind {
            "mnist" => DatasetSource::Mnist(MnistFiles::in_dir(dir)),
            "cifar10" => DatasetSource::Cifar {
                variant: CifarVariant::Cifar10,
                train: (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
                test: vec![dir.join("test_batch.bin")],
            },
            "cifar100" => DatasetSource::Cifar {
                variant: CifarVariant::Cifar100,
                train: vec![dir.join("train.bin")],
                test: vec![dir.join("test.bin")],
            },
            other => return Err(Error::Config(format!("unknown dataset {other:?}"))),
        })
    }

    pub fn load<T: Scalar>(&self) -> Result<(Dataset<T>, Dataset<T>)> {
        match self {
            DatasetSource::Mnist(f) => Ok((
                load_mnist(&f.train_images, &f.train_labels)?,
                load_mnist(&f.test_images, &f.test_labels)?,
            )),
            DatasetSource::Cifar { variant, train, test } => {
                Ok((load_cifar(train, *variant)?, load_cifar(test, *variant)?))
            }
        }
    }
}

/// A flat `key = value` experiment description. `#` starts a comment.
/// Relative paths resolve against the directory of the config file.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSource,
    pub subset_per_class: Option<usize>,
    pub test_subset_per_class: Option<usize>,
    pub subset_seed: Option<u64>,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub icing: IcingConfig,
    pub trials: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSource, out_dir: PathBuf) -> Self {
        Self {
            name: "experiment".into(),
            dataset,
            subset_per_class: None,
            test_subset_per_class: None,
            subset_seed: None,
            arch: Architecture::TinyResNet { depth: 8, width: 8 },
            train: TrainConfig::default(),
            icing: IcingConfig::default(),
            trials: 10,
            seed: 0,
            out_dir,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            entries.push((n + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let find = |key: &str| {
            entries
                .iter()
                .rev()
                .find(|(_, k, _)| k == key)
                .map(|(_, _, v)| v.as_str())
        };
        let kind = find("dataset").ok_or_else(|| Error::Config("missing key `dataset`".into()))?;
        let (kind, inline_dir) = match kind.split_once(':') {
            Some((k, d)) => (k.trim(), Some(d.trim())),
            None => (kind, None),
        };
        let dir = base_dir.join(inline_dir.or(find("data_dir")).unwrap_or("."));
        let mut cfg = Self::new(DatasetSource::in_dir(kind, &dir)?, base_dir.join("runs"));
        let mut named_out = false;
        for (line, k, v) in &entries {
            if k == "dataset" || k == "data_dir" {
                continue;
            }
            named_out |= k == "out_dir";
            cfg.set(k, v, base_dir)
                .map_err(|e| Error::Config(format!("line {line}: {e}")))?;
        }
        if !named_out {
            cfg.out_dir = base_dir.join("runs").join(&cfg.name);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one key. Dataset keys other than the explicit file lists go
    /// through [`ExperimentConfig::parse`].
    pub fn set(&mut self, key: &str, value: &str, base_dir: &Path) -> Result<()> {
        fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value.to_ascii_lowercase().as_str() {
                "true" | "yes" | "on" | "1" => Ok(true),
                "false" | "no" | "off" | "0" => Ok(false),
                _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
            }
        }
        let path = |v: &str| base_dir.join(v);
        let files = |v: &str| -> Vec<PathBuf> { v.split(',').map(|p| path(p.trim())).collect() };
        match key {
            "name" => self.name = value.to_string(),
            "train_images" | "train_labels" | "test_images" | "test_labels" => match &mut self.dataset {
                DatasetSource::Mnist(f) => {
                    let slot = match key {
                        "train_images" => &mut f.train_images,
                        "train_labels" => &mut f.train_labels,
                        "test_images" => &mut f.test_images,
                        _ => &mut f.test_labels,
                    };
                    *slot = path(value);
                }
                _ => return Err(Error::Config(format!("{key} only applies to mnist"))),
            },
            "train_files" | "test_files" => match &mut self.dataset {
                DatasetSource::Cifar { train, test, .. } => {
                    *(if key == "train_files" { train } else { test }) = files(value);
                }
                _ => return Err(Error::Config(format!("{key} only applies to cifar"))),
            },
            "subset_per_class" => self.subset_per_class = Some(num(key, value)?),
            "test_subset_per_class" => self.test_subset_per_class = Some(num(key, value)?),
            "subset_seed" => self.subset_seed = Some(num(key, value)?),
            "arch" => self.arch = value.parse()?,
            "trials" => self.trials = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "out_dir" => self.out_dir = path(value),
            "train.epochs" => self.train.epochs = num(key, value)?,
            "train.batch_size" => self.train.batch_size = num(key, value)?,
            "train.optimizer" => self.train.optimizer = value.parse()?,
            "train.learning_rate" => self.train.learning_rate = num(key, value)?,
            "train.init" => self.train.init = value.parse()?,
            "augment.enabled" => self.train.augment.enabled = flag(key, value)?,
            "augment.pad_crop" => self.train.augment.pad_crop = num(key, value)?,
            "augment.flip" => self.train.augment.horizontal_flip = flag(key, value)?,
            "icing.epochs" => self.icing.epochs = num(key, value)?,
            "icing.batch_size" => self.icing.batch_size = num(key, value)?,
            "icing.optimizer" => self.icing.optimizer = value.parse()?,
            "icing.learning_rate" => self.icing.learning_rate = num(key, value)?,
            "icing.head_init" => self.icing.head_init = value.parse()?,
            "icing.init" => self.icing.init_scheme = value.parse()?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.name.is_empty() || self.name.contains(['|', ',', '\n']) {
            return Err(Error::Config(format!(
                "name {:?} must be non-empty without '|' or ','",
                self.name
            )));
        }
        self.train.validate()?;
        self.icing.validate()
    }

    /// Seed of trial `i`.
    pub fn trial_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_add(i as u64)
    }

    /// Loads train and test sets and applies the configured subsets. The
    /// subset draw uses `subset_seed`, falling back to `seed`, so every trial
    /// sees the same data.
    pub fn load_data<T: Scalar>(&self) -> Result<(Dataset<T>, Dataset<T>)> {
        let (mut train, mut test) = self.dataset.load()?;
        let seed = self.subset_seed.unwrap_or(self.seed);
        if let Some(n) = self.subset_per_class {
            train = subset(&train, n, seed)?;
        }
        if let Some(n) = self.test_subset_per_class {
            test = subset(&test, n, seed)?;
        }
        Ok((train, test))
    }

    /// Canonical text form with every key spelled out; parses back to an
    /// equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(s, "{k} = {v}").unwrap();
        kv("name", &self.name);
        kv("dataset", &self.dataset.name());
        match &self.dataset {
            DatasetSource::Mnist(f) => {
                kv("train_images", &f.train_images.display());
                kv("train_labels", &f.train_labels.display());
                kv("test_images", &f.test_images.display());
                kv("test_labels", &f.test_labels.display());
            }
            DatasetSource::Cifar { train, test, .. } => {
                let join = |v: &[PathBuf]| v.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
                kv("train_files", &join(train));
                kv("test_files", &join(test));
            }
        }
        if let Some(n) = self.subset_per_class {
            kv("subset_per_class", &n);
        }
        if let Some(n) = self.test_subset_per_class {
            kv("test_subset_per_class", &n);
        }
        if let Some(n) = self.subset_seed {
            kv("subset_seed", &n);
        }
        kv("arch", &self.arch);
        kv("trials", &self.trials);
        kv("seed", &self.seed);
        kv("out_dir", &self.out_dir.display());
        let t = &self.train;
        kv("train.epochs", &t.epochs);
        kv("train.batch_size", &t.batch_size);
        kv("train.optimizer", &t.optimizer);
        kv("train.learning_rate", &t.learning_rate);
        kv("train.init", &t.init);
        let a: &AugmentPolicy = &t.augment;
        kv("augment.enabled", &a.enabled);
        kv("augment.pad_crop", &a.pad_crop);
        kv("augment.flip", &a.horizontal_flip);
        let i = &self.icing;
        kv("icing.epochs", &i.epochs);
        kv("icing.batch_size", &i.batch_size);
        kv("icing.optimizer", &i.optimizer);
        kv("icing.learning_rate", &i.learning_rate);
        kv("icing.head_init", &i.head_init);
        kv("icing.init", &i.init_scheme);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icing::HeadInit;
    use crate::network::{InitScheme, Optimizer};

    const SAMPLE: &str = "
        # desk run
        name = demo
        dataset = mnist
        data_dir = data/mnist   # relative to the config
        subset_per_class = 50
        arch = cnn:4,8
        trials = 3
        seed = 100
        train.epochs = 2
        train.optimizer = sgd:0.9
        augment.enabled = yes
        augment.flip = false
        icing.head_init = warm
        icing.init = he
    ";

    #[test]
    fn parses_and_resolves_paths() {
        let c = ExperimentConfig::parse(SAMPLE, Path::new("/cfg")).unwrap();
        assert_eq!(c.name, "demo");
        match &c.dataset {
            DatasetSource::Mnist(f) => {
                assert_eq!(f.train_images, Path::new("/cfg/data/mnist/train-images-idx3-ubyte"))
            }
            _ => panic!(),
        }
        assert_eq!(c.subset_per_class, Some(50));
        assert_eq!(c.arch, Architecture::Cnn { filters: vec![4, 8] });
        assert_eq!(c.trials, 3);
        assert_eq!(c.trial_seed(2), 102);
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.optimizer, Optimizer::sgd(0.9));
        assert!(c.train.augment.enabled && !c.train.augment.horizontal_flip);
        assert_eq!(c.icing.head_init, HeadInit::Warm);
        assert_eq!(c.icing.init_scheme, InitScheme::He);
        assert_eq!(c.icing.epochs, 50);
        assert_eq!(c.out_dir, Path::new("/cfg/runs/demo"));
    }

    #[test]
    fn canonical_text_round_trips() {
        let c = ExperimentConfig::parse(SAMPLE, Path::new("/cfg")).unwrap();
        let again = ExperimentConfig::parse(&c.to_text(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_text(), c.to_text());
    }

    #[test]
    fn inline_dataset_dir_and_cifar_files() {
        let c =
            ExperimentConfig::parse("dataset = cifar100:c100\ntrain_files = a.bin, b.bin", Path::new("/x")).unwrap();
        match c.dataset {
            DatasetSource::Cifar { variant, train, test } => {
                assert_eq!(variant, CifarVariant::Cifar100);
                assert_eq!(train, vec![PathBuf::from("/x/a.bin"), PathBuf::from("/x/b.bin")]);
                assert_eq!(test, vec![PathBuf::from("/x/c100/test.bin")]);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = ExperimentConfig::parse("dataset = mnist\n\nbogus = 1", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        assert!(ExperimentConfig::parse("name = x", Path::new(".")).is_err());
        assert!(ExperimentConfig::parse("dataset = mnist\ntrials = 0", Path::new(".")).is_err());
        assert!(ExperimentConfig::parse("dataset = mnist\nno equals sign", Path::new(".")).is_err());
        assert!(ExperimentConfig::parse("dataset = mnist\ntrain_files = a", Path::new(".")).is_err());
        assert!(ExperimentConfig::parse("dataset = svhn", Path::new(".")).is_err());
    }
}
