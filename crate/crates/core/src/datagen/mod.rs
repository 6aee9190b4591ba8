//! Datasets of `(x, y, t)` records: the synthetic logit generator, continuous
//! colored MNIST built from IDX files, a generic CSV loader, and flat binary
//! snapshots.

mod cmnist;
mod csv_loader;
mod idx;
mod logit;
mod schedule;
mod snapshot;

pub use cmnist::{colorize_mnist, CmnistConfig};
pub use csv_loader::{load_csv, CsvSpec, DomainFilter};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, RawDigits, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use logit::{gen_logit, LogitConfig, SpuriousFlip};
pub use schedule::{p_s, Schedule, StepSegment};
pub use snapshot::{load_snapshot, save_snapshot};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub d_t: usize,
    pub classes: usize,
    pub seed: Option<u64>,
    /// Human-readable description of the spurious schedule, when synthetic.
    pub schedule: Option<String>,
}

/// `n` records of features `x` (`n × d`), labels `y` and domain indices `t` (`n × d_t`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub t: Tensor,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        x: Tensor,
        y: Vec<usize>,
        t: Tensor,
        classes: usize,
        seed: Option<u64>,
        schedule: Option<String>,
    ) -> Result<Self> {
        let n = y.len();
        if x.rank() != 2 || t.rank() != 2 {
            return Err(Error::validation("dataset x and t must be matrices"));
        }
        if x.rows() != n || t.rows() != n {
            return Err(Error::validation(format!(
                "row counts differ: x {}, y {}, t {}",
                x.rows(),
                n,
                t.rows()
            )));
        }
        if !t.all_finite() {
            return Err(Error::NonFinite("domain index"));
        }
        if let Some(bad) = y.iter().find(|&&c| c >= classes) {
            return Err(Error::validation(format!("label {bad} outside [0, {classes})")));
        }
        let meta = DatasetMeta {
            name: name.into(),
            n,
            d: x.cols(),
            d_t: t.cols(),
            classes,
            seed,
            schedule,
        };
        Ok(Self { x, y, t, meta })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.meta.classes
    }

    /// First coordinate of the domain index of row `i`.
    pub fn t_scalar(&self, i: usize) -> f64 {
        self.t.get(i, 0)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut meta = self.meta.clone();
        meta.n = idx.len();
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            t: self.t.select_rows(idx),
            meta,
        }
    }

    /// Rows whose scalar domain index satisfies `keep`.
    pub fn filter_t(&self, keep: impl Fn(f64) -> bool) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.t_scalar(i))).collect();
        self.subset(&idx)
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.y.iter().map(|&c| c as f64).collect()
    }
}
