//! Tabular CSV ingestion with one continuous domain column.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::ndmath::Tensor;

/// Half-open domain interval `[min, max)`; a missing bound is unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainFilter {
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl DomainFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn below(max: f64) -> Self {
        Self { min: None, max: Some(max) }
    }

    pub fn at_least(min: f64) -> Self {
        Self { min: Some(min), max: None }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.min.map_or(true, |m| t >= m) && self.max.map_or(true, |m| t < m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSpec {
    pub features: Vec<String>,
    /// Integer class ids starting at 0.
    pub label: String,
    pub domain: String,
    pub train: DomainFilter,
    pub test: DomainFilter,
}

struct Columns {
    features: Vec<usize>,
    label: usize,
    domain: usize,
}

fn locate(headers: &csv::StringRecord, spec: &CsvSpec) -> Result<Columns> {
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::schema(name, "column not found in header"))
    };
    Ok(Columns {
        features: spec.features.iter().map(|f| find(f)).collect::<Result<_>>()?,
        label: find(&spec.label)?,
        domain: find(&spec.domain)?,
    })
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, col: usize, name: &str, line: usize) -> Result<T> {
    let raw = rec.get(col).unwrap_or("").trim();
    raw.parse()
        .map_err(|_| Error::schema(name, format!("row {line}: cannot parse {raw:?}")))
}

/// Reads `path`, splits rows by the domain filters, and z-scores features with
/// statistics fit on the train split only.
pub fn load_csv(path: &Path, spec: &CsvSpec) -> Result<(Dataset, Dataset)> {
    if !path.exists() {
        return Err(Error::MissingData(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let cols = locate(reader.headers()?, spec)?;
    let d = cols.features.len();

    let mut train = (Vec::new(), Vec::new(), Vec::new());
    let mut test = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let t: f64 = parse_field(&rec, cols.domain, &spec.domain, line)?;
        if !t.is_finite() {
            return Err(Error::schema(&spec.domain, format!("row {line}: non-finite domain")));
        }
        let y: usize = parse_field(&rec, cols.label, &spec.label, line)?;
        let mut feats = Vec::with_capacity(d);
        for (&c, name) in cols.features.iter().zip(&spec.features) {
            feats.push(parse_field::<f64>(&rec, c, name, line)?);
        }
        for (filter, split) in [(&spec.train, &mut train), (&spec.test, &mut test)] {
            if filter.contains(t) {
                split.0.extend_from_slice(&feats);
                split.1.push(y);
                split.2.push(t);
            }
        }
    }
    if train.1.is_empty() {
        return Err(Error::validation("load_csv: train filter selects no rows"));
    }

    let n_train = train.1.len() as f64;
    let mut mean = vec![0.0; d];
    for row in train.0.chunks(d.max(1)) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n_train;
        }
    }
    let mut std = vec![0.0; d];
    for row in train.0.chunks(d.max(1)) {
        for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
            *s += (v - m).powi(2) / n_train;
        }
    }
    let std: Vec<f64> = std.into_iter().map(|v| v.sqrt().max(1e-12)).collect();

    let classes = train.1.iter().chain(&test.1).max().map_or(1, |&m| m + 1).max(2);
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    let build = |(mut x, y, t): (Vec<f64>, Vec<usize>, Vec<f64>)| -> Result<Dataset> {
        if d > 0 {
            for row in x.chunks_mut(d) {
                for ((v, m), s) in row.iter_mut().zip(&mean).zip(&std) {
                    *v = (*v - m) / s;
                }
            }
        }
        let n = y.len();
        Dataset::new(name.clone(), Tensor::matrix(n, d, x)?, y, Tensor::matrix(n, 1, t)?, classes, None, None)
    };
    Ok((build(train)?, build(test)?))
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn fixture(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    fn spec(features: &[&str]) -> CsvSpec {
        CsvSpec {
            features: features.iter().map(|s| s.to_string()).collect(),
            label: "y".into(),
            domain: "year".into(),
            train: DomainFilter::below(2001.0),
            test: DomainFilter::at_least(2001.0),
        }
    }

    #[test]
    fn threshold_split() {
        let f = fixture("a,b,y,year\n1,5,0,1999\n3,5,1,2000\n7,5,1,2005\n");
        let (train, test) = load_csv(f.path(), &spec(&["a", "b"])).unwrap();
        assert_eq!((train.len(), test.len()), (2, 1));
        // a: train mean 2, std 1
        assert_eq!(train.x.data(), &[-1.0, 0.0, 1.0, 0.0]);
        assert_eq!(test.x.data(), &[5.0, 0.0]);
        assert_eq!(test.t.data(), &[2005.0]);
    }

    #[test]
    fn missing_and_bad_columns_are_named() {
        let f = fixture("a,y,year\n1,0,x\n");
        match load_csv(f.path(), &spec(&["zz"])) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "zz"),
            other => panic!("{other:?}"),
        }
        match load_csv(f.path(), &spec(&["a"])) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "year"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_file() {
        let err = load_csv(Path::new("/nonexistent/file.csv"), &spec(&["a"])).unwrap_err();
        assert!(matches!(err, Error::MissingData(_)));
    }
}
