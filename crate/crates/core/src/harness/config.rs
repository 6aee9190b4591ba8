use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{
    colorize_mnist, gen_logit, load_csv, load_idx, CmnistConfig, CsvSpec, Dataset, DomainFilter, LogitConfig,
    RawDigits, Schedule, SpuriousFlip,
};
use crate::error::{Error, Result};
use crate::models::BundleSpec;
use crate::objectives::PenaltySpec;
use crate::trainer::TrainConfig;

/// Environment variable naming the fallback root for data files.
pub const DATA_DIR_ENV: &str = "CIL_DATA_DIR";

/// Parses TOML into `T`, reporting the dotted path of the offending field.
pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.message().to_string();
        let field = if path == "." || path.is_empty() { "<root>".to_string() } else { path };
        Error::schema(field, msg)
    })
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_toml(&text)
}

/// `path` itself if it exists, else the same relative path under
/// `$CIL_DATA_DIR`.
pub fn resolve_data_path(path: &Path) -> Result<PathBuf> {
    if path.exists() {
        return Ok(path.to_path_buf());
    }
    if path.is_relative() {
        if let Some(root) = std::env::var_os(DATA_DIR_ENV) {
            let alt = Path::new(&root).join(path);
            if alt.exists() {
                return Ok(alt);
            }
        }
    }
    Err(Error::MissingData(path.to_path_buf()))
}

/// Training set plus in-distribution and shifted evaluation sets.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub id_test: Dataset,
    pub ood_test: Dataset,
}

/// Synthetic logit benchmark: train on one domain interval, test on another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogitBenchmark {
    pub n_train: usize,
    pub n_test: usize,
    pub p_v: f64,
    pub sigma: f64,
    pub d_v: usize,
    pub d_s: usize,
    pub schedule: Schedule,
    pub spurious_flip: SpuriousFlip,
    pub train_range: [f64; 2],
    pub test_range: [f64; 2],
}

impl Default for LogitBenchmark {
    fn default() -> Self {
        Self::linear()
    }
}

impl LogitBenchmark {
    /// Agreement falling linearly from 0.99 to 0.01 over `[0, 100]`; train on
    /// the first half, test on the second.
    pub fn linear() -> Self {
        Self {
            n_train: 2000,
            n_test: 2000,
            p_v: 0.9,
            sigma: 0.5,
            d_v: 2,
            d_s: 20,
            schedule: Schedule::default_linear(),
            spurious_flip: SpuriousFlip::PerDim,
            train_range: [0.0, 50.0],
            test_range: [50.0, 100.0],
        }
    }

    /// Sinusoidal agreement: between 0.31 and 0.95 on the training half and
    /// mostly below 0.5 on the test half.
    pub fn sine() -> Self {
        Self {
            schedule: Schedule::Sine {
                mid: 0.5,
                amp: 0.45,
                period: 100.0,
                phase: 0.45,
            },
            ..Self::linear()
        }
    }

    fn part(&self, n: usize, range: [f64; 2], seed: u64) -> Result<Dataset> {
        gen_logit(&LogitConfig {
            n,
            p_v: self.p_v,
            schedule: self.schedule.clone(),
            sigma: self.sigma,
            d_v: self.d_v,
            d_s: self.d_s,
            t_range: range,
            spurious_flip: self.spurious_flip,
            seed,
        })
    }
}

/// Colored digits from IDX files. Without test files the last `holdout`
/// training images are set aside for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmnistBenchmark {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    #[serde(default)]
    pub test_images: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
    #[serde(default = "cmnist_p_v")]
    pub p_v: f64,
    #[serde(default = "cmnist_schedule")]
    pub schedule: Schedule,
    #[serde(default = "cmnist_domains")]
    pub domains: u32,
    /// Color agreement on the shifted test set.
    #[serde(default = "cmnist_test_p_s")]
    pub test_p_s: f64,
    #[serde(default = "yes")]
    pub downsample: bool,
    /// Use at most this many training images.
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default = "cmnist_holdout")]
    pub holdout: usize,
}

fn cmnist_p_v() -> f64 {
    0.75
}
fn cmnist_schedule() -> Schedule {
    Schedule::two_block(512, 0.9, 0.8)
}
fn cmnist_domains() -> u32 {
    1024
}
fn cmnist_test_p_s() -> f64 {
    0.1
}
fn cmnist_holdout() -> usize {
    10_000
}
fn yes() -> bool {
    true
}

impl CmnistBenchmark {
    pub fn new(train_images: impl Into<PathBuf>, train_labels: impl Into<PathBuf>) -> Self {
        Self {
            train_images: train_images.into(),
            train_labels: train_labels.into(),
            test_images: None,
            test_labels: None,
            p_v: cmnist_p_v(),
            schedule: cmnist_schedule(),
            domains: cmnist_domains(),
            test_p_s: cmnist_test_p_s(),
            downsample: true,
            limit: None,
            holdout: cmnist_holdout(),
        }
    }

    fn raw(&self) -> Result<(RawDigits, RawDigits)> {
        let train = load_idx(&resolve_data_path(&self.train_images)?, &resolve_data_path(&self.train_labels)?)?;
        let (train, test) = match (&self.test_images, &self.test_labels) {
            (Some(i), Some(l)) => (train, load_idx(&resolve_data_path(i)?, &resolve_data_path(l)?)?),
            (None, None) => {
                if self.holdout >= train.len() {
                    return Err(Error::schema("dataset.holdout", "leaves no training images"));
                }
                let cut = train.len() - self.holdout;
                (train.range(0..cut), train.range(cut..train.len()))
            }
            _ => {
                return Err(Error::schema(
                    "dataset.test_images",
                    "test_images and test_labels must be given together",
                ))
            }
        };
        let train = match self.limit {
            Some(n) => train.take(n),
            None => train,
        };
        Ok((train, test))
    }

    fn colorize(&self, raw: &RawDigits, schedule: Schedule, seed: u64) -> Result<Dataset> {
        colorize_mnist(
            raw,
            &CmnistConfig {
                p_v: self.p_v,
                schedule,
                domains: self.domains,
                downsample: self.downsample,
                seed,
            },
        )
    }
}

/// Rows of a CSV file, split by the domain column. In-distribution accuracy
/// is measured on the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvBenchmark {
    pub path: PathBuf,
    pub features: Vec<String>,
    pub label: String,
    pub domain: String,
    #[serde(default)]
    pub train: DomainFilter,
    #[serde(default)]
    pub test: DomainFilter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Logit(LogitBenchmark),
    Cmnist(CmnistBenchmark),
    Csv(CsvBenchmark),
}

impl DatasetSpec {
    /// Checks that referenced files can be found.
    pub fn check_files(&self) -> Result<()> {
        match self {
            DatasetSpec::Logit(_) => Ok(()),
            DatasetSpec::Cmnist(c) => {
                for p in [Some(&c.train_images), Some(&c.train_labels), c.test_images.as_ref(), c.test_labels.as_ref()]
                    .into_iter()
                    .flatten()
                {
                    resolve_data_path(p)?;
                }
                Ok(())
            }
            DatasetSpec::Csv(c) => resolve_data_path(&c.path).map(|_| ()),
        }
    }

    /// Builds the three datasets for one seed. Synthetic parts use seeds
    /// `3s` (train), `3s + 1` (shifted test) and `3s + 2` (in-distribution
    /// test).
    pub fn materialize(&self, seed: u64) -> Result<Splits> {
        let (s_train, s_ood, s_id) = (3 * seed, 3 * seed + 1, 3 * seed + 2);
        match self {
            DatasetSpec::Logit(b) => Ok(Splits {
                train: b.part(b.n_train, b.train_range, s_train)?,
                id_test: b.part(b.n_test, b.train_range, s_id)?,
                ood_test: b.part(b.n_test, b.test_range, s_ood)?,
            }),
            DatasetSpec::Cmnist(b) => {
                let (train, test) = b.raw()?;
                Ok(Splits {
                    train: b.colorize(&train, b.schedule.clone(), s_train)?,
                    id_test: b.colorize(&test, b.schedule.clone(), s_id)?,
                    ood_test: b.colorize(&test, Schedule::Constant { p: b.test_p_s }, s_ood)?,
                })
            }
            DatasetSpec::Csv(b) => {
                let spec = CsvSpec {
                    features: b.features.clone(),
                    label: b.label.clone(),
                    domain: b.domain.clone(),
                    train: b.train,
                    test: b.test,
                };
                let (train, test) = load_csv(&resolve_data_path(&b.path)?, &spec)?;
                Ok(Splits {
                    id_test: train.clone(),
                    train,
                    ood_test: test,
                })
            }
        }
    }
}

/// Widths of the featurizer and the domain regressors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub phi_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub penalty_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            phi_hidden: vec![16],
            feature_dim: 16,
            penalty_hidden: 64,
        }
    }
}

impl ModelConfig {
    pub fn bundle_spec(&self, data: &Dataset) -> Result<BundleSpec> {
        let spec = BundleSpec::standard(
            data.meta.d,
            data.classes(),
            data.meta.d_t,
            &self.phi_hidden,
            self.feature_dim,
            self.penalty_hidden,
        );
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub dataset: DatasetSpec,
    pub method: PenaltySpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::validation(format!("cannot serialize config: {e}")))
    }

    /// Schema checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::schema("seeds", "must not be empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::schema("seeds", "must be distinct"));
        }
        self.method.validate()?;
        self.train.validate()?;
        if self.model.feature_dim == 0 {
            return Err(Error::schema("model.feature_dim", "must be >= 1"));
        }
        if self.model.penalty_hidden == 0 {
            return Err(Error::schema("model.penalty_hidden", "must be >= 1"));
        }
        if self.model.phi_hidden.contains(&0) {
            return Err(Error::schema("model.phi_hidden", "widths must be >= 1"));
        }
        Ok(())
    }

    /// SHA-256 over every field that affects a run's results. The output
    /// directory, the seed list and the name are left out: seeds key the
    /// per-run directories below the hash.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output");
            map.remove("seeds");
            map.remove("name");
        }
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Directory holding every run of this configuration.
    pub fn run_root(&self) -> PathBuf {
        self.output.join(&self.hash()[..16])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::Method;

    const BASE: &str = r#"
seeds = [0, 1]
output = "out"

[dataset]
kind = "logit"
n_train = 50

[method]
method = "rex"
lambda = 10.0
split = 4
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml_str(BASE).unwrap();
        assert_eq!(c.method.method, Method::Rex);
        assert_eq!(c.train, TrainConfig::default());
        match &c.dataset {
            DatasetSpec::Logit(b) => {
                assert_eq!(b.n_train, 50);
                assert_eq!(b.n_test, 2000);
            }
            other => panic!("{other:?}"),
        }
        let again = ExperimentConfig::from_toml_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_method_names_the_field() {
        let text = BASE.replace("\"rex\"", "\"lasso\"");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "method.method"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_and_bad_seeds_rejected() {
        let text = BASE.replace("lambda = 10.0", "lambda = 10.0\nlamda = 3");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Schema { .. })));
        let text = BASE.replace("[0, 1]", "[1, 1]");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "seeds"),
            other => panic!("{other:?}"),
        }
        let text = BASE.replace("split = 4", "");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "method.split"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_ignores_output_and_seeds_only() {
        let a = ExperimentConfig::from_toml_str(BASE).unwrap();
        let mut b = a.clone();
        b.output = PathBuf::from("elsewhere");
        b.seeds = vec![5];
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.run_root(), b.run_root());
        let mut c = a.clone();
        c.train.steps += 1;
        assert_ne!(a.hash(), c.hash());
        let mut d = a.clone();
        if let DatasetSpec::Logit(l) = &mut d.dataset {
            l.sigma = 0.7;
        }
        assert_ne!(a.hash(), d.hash());
    }

    #[test]
    fn logit_splits_use_their_ranges() {
        let spec = DatasetSpec::Logit(LogitBenchmark {
            n_train: 200,
            n_test: 100,
            ..LogitBenchmark::linear()
        });
        let s = spec.materialize(1).unwrap();
        assert_eq!((s.train.len(), s.id_test.len(), s.ood_test.len()), (200, 100, 100));
        assert!((0..100).all(|i| s.ood_test.t_scalar(i) >= 50.0));
        assert!((0..200).all(|i| s.train.t_scalar(i) <= 50.0));
        assert_eq!(spec.materialize(1).unwrap().train, s.train);
    }

    #[test]
    fn missing_files_reported_as_missing_data() {
        let spec = DatasetSpec::Csv(CsvBenchmark {
            path: PathBuf::from("/nonexistent/data.csv"),
            features: vec!["a".into()],
            label: "y".into(),
            domain: "t".into(),
            train: DomainFilter::all(),
            test: DomainFilter::all(),
        });
        assert!(matches!(spec.check_files(), Err(Error::MissingData(_))));
        let c = DatasetSpec::Cmnist(CmnistBenchmark::new("/nonexistent/a", "/nonexistent/b"));
        assert!(matches!(c.materialize(0), Err(Error::MissingData(_))));
    }
}
