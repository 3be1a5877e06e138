use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{invalid, Error, Result};

/// Lower bound on a column's standard deviation during scaling.
pub const STD_FLOOR: f64 = 1e-12;

/// Row-major `rows x cols` values that may contain NaN or infinities, with
/// one finite target per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub columns: Vec<String>,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub targets: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<String>, values: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        let cols = columns.len();
        let rows = targets.len();
        if values.len() != rows * cols {
            return Err(invalid("feature_matrix", format!("{} values for {rows} rows of {cols} columns", values.len())));
        }
        if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
            return Err(invalid("feature_matrix", format!("target of row {i} is not finite")));
        }
        Ok(Self {
            columns,
            rows,
            cols,
            values,
            targets,
        })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Selected rows as a `[rows.len(), cols]` tensor.
    pub fn select(&self, rows: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Tensor::new(vec![rows.len(), self.cols], data).expect("row-major layout")
    }

    pub fn non_finite_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_finite()).count()
    }
}

/// Column statistics of the arcsinh-squashed finite entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub finite_count: Vec<usize>,
}

impl PreprocessStats {
    /// Fits statistics on the given rows only.
    pub fn fit(m: &FeatureMatrix, rows: &[usize]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(invalid("preprocess", format!("need at least 2 rows, got {}", rows.len())));
        }
        let mut sum = vec![0.0; m.cols];
        let mut count = vec![0usize; m.cols];
        for &r in rows {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v.is_finite() {
                    sum[c] += v.asinh();
                    count[c] += 1;
                }
            }
        }
        let mean: Vec<f64> = sum.iter().zip(&count).map(|(&s, &n)| if n > 0 { s / n as f64 } else { 0.0 }).collect();
        let mut ss = vec![0.0; m.cols];
        for &r in rows {
            for (c, &v) in m.row(r).iter().enumerate() {
                if v.is_finite() {
                    ss[c] += (v.asinh() - mean[c]).powi(2);
                }
            }
        }
        let std = ss.iter().zip(&count).map(|(&s, &n)| if n > 0 { (s / n as f64).sqrt() } else { 0.0 }).collect();
        for (c, &n) in count.iter().enumerate() {
            if n == 0 {
                log::warn!("column `{}` has no finite entries; emitting zeros", m.columns[c]);
            }
        }
        Ok(Self {
            mean,
            std,
            finite_count: count,
        })
    }

    /// Columns without any finite training entry.
    pub fn empty_columns(&self) -> Vec<usize> {
        (0..self.finite_count.len()).filter(|&c| self.finite_count[c] == 0).collect()
    }

    /// arcsinh, standardize with these statistics, then zero every
    /// non-finite entry. Targets pass through unchanged.
    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        if m.cols != self.mean.len() {
            return Err(invalid("preprocess", format!("{} columns for statistics of {}", m.cols, self.mean.len())));
        }
        let values = m
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = i % m.cols;
                if v.is_finite() && self.finite_count[c] > 0 {
                    (v.asinh() - self.mean[c]) / self.std[c].max(STD_FLOOR)
                } else {
                    0.0
                }
            })
            .collect();
        Ok(FeatureMatrix {
            values,
            ..m.clone()
        })
    }
}

/// Fits statistics on every row and applies them.
pub fn preprocess(m: &FeatureMatrix) -> Result<(FeatureMatrix, PreprocessStats)> {
    let rows: Vec<usize> = (0..m.rows).collect();
    let stats = PreprocessStats::fit(m, &rows)?;
    Ok((stats.apply(m)?, stats))
}

fn parse_cell(s: &str) -> std::result::Result<f64, String> {
    let t = s.trim();
    match t.to_ascii_lowercase().as_str() {
        "" | "nan" => Ok(f64::NAN),
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        _ => t.parse().map_err(|_| format!("cannot parse `{t}` as a number")),
    }
}

/// Reads a CSV with a header row and a required `target` column.
pub fn read_feature_csv(path: &Path) -> Result<FeatureMatrix> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let target_col = header
        .iter()
        .position(|h| h.trim() == "target")
        .ok_or_else(|| Error::Config(format!("{}: no `target` column", path.display())))?;
    let columns: Vec<String> = header.iter().enumerate().filter(|&(i, _)| i != target_col).map(|(_, h)| h.trim().to_string()).collect();
    let mut values = Vec::new();
    let mut targets = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                msg: format!("{} fields, header has {}", record.len(), header.len()),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let v = parse_cell(cell).map_err(|msg| Error::Parse { line, msg })?;
            if c == target_col {
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        msg: "target is not finite".into(),
                    });
                }
                targets.push(v);
            } else {
                values.push(v);
            }
        }
    }
    FeatureMatrix::new(columns, values, targets)
}

pub fn write_feature_csv(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = m.columns.clone();
    header.push("target".into());
    w.write_record(&header)?;
    for r in 0..m.rows {
        let mut rec: Vec<String> = m.row(r).iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }).collect();
        rec.push(m.targets[r].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
