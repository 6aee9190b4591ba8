use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One optimization step. Fields that do not apply to the method are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Classification loss on the step's batch.
    pub erm: f64,
    /// Unweighted penalty: REx variance, IRMv1 gradient norm, GroupDRO worst
    /// risk, or CIL's `h_term − g_term`.
    pub penalty: f64,
    pub h_loss: Option<f64>,
    pub g_loss: Option<f64>,
    /// Gradient norm over the featurizer and classifier.
    pub grad_norm: f64,
    /// Gradient norm over the domain regressors.
    pub penalty_grad_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub records: Vec<StepRecord>,
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
    /// Final GroupDRO weights.
    pub q: Option<Vec<f64>>,
    pub wall_seconds: f64,
}

impl RunHistory {
    /// Writes the per-step records, one JSON object per line. Wall time is not
    /// part of the file so identical runs produce identical bytes.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<StepRecord>> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }

    pub fn final_penalty(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.penalty)
    }
}
