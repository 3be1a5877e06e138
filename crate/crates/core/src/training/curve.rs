use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Per-epoch (or per-evaluation) train and validation metrics of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub metric: String,
    /// Epoch (or iteration) index of each record.
    pub epochs: Vec<usize>,
    pub train: Vec<f64>,
    pub val: Vec<f64>,
    pub wall_ms: Vec<f64>,
    /// Set when training stopped on a non-finite loss or gradient.
    pub diverged: bool,
}

#[derive(Serialize, Deserialize)]
struct Row {
    epoch: usize,
    train_metric: f64,
    val_metric: f64,
    wall_ms: f64,
}

impl LearningCurve {
    pub fn new(metric: impl Into<String>) -> Self {
        Self {
            metric: metric.into(),
            ..Self::default()
        }
    }

    /// Builds a curve with epochs `1..=val.len()` and zero timings.
    pub fn from_values(metric: impl Into<String>, train: Vec<f64>, val: Vec<f64>) -> Self {
        let n = val.len();
        Self {
            metric: metric.into(),
            epochs: (1..=n).collect(),
            train,
            val,
            wall_ms: vec![0.0; n],
            diverged: false,
        }
    }

    pub fn push(&mut self, epoch: usize, train: f64, val: f64, wall_ms: f64) {
        self.epochs.push(epoch);
        self.train.push(train);
        self.val.push(val);
        self.wall_ms.push(wall_ms);
    }

    pub fn len(&self) -> usize {
        self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.val.is_empty()
    }

    /// Index of the smallest validation value.
    fn best_index(&self) -> Option<usize> {
        self.val
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_nan())
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }

    /// Minimum validation metric over all records.
    pub fn best_val(&self) -> Option<f64> {
        self.best_index().map(|i| self.val[i])
    }

    /// Epoch at which [`best_val`](Self::best_val) was reached.
    pub fn best_epoch(&self) -> Option<usize> {
        self.best_index().map(|i| self.epochs[i])
    }

    /// Writes `epoch,train_metric,val_metric,wall_ms` rows. Values use the
    /// shortest representation that parses back exactly.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for i in 0..self.len() {
            w.serialize(Row {
                epoch: self.epochs[i],
                train_metric: self.train[i],
                val_metric: self.val[i],
                wall_ms: self.wall_ms[i],
            })?;
        }
        if self.is_empty() {
            w.write_record(["epoch", "train_metric", "val_metric", "wall_ms"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl Read, metric: impl Into<String>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != ["epoch", "train_metric", "val_metric", "wall_ms"] {
            return Err(invalid("learning_curve", format!("unexpected CSV header {header:?}")));
        }
        let mut curve = Self::new(metric);
        for (i, row) in r.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Parse {
                line: i + 2,
                msg: e.to_string(),
            })?;
            curve.push(row.epoch, row.train_metric, row.val_metric, row.wall_ms);
        }
        Ok(curve)
    }
}
