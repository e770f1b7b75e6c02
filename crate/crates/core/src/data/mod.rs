//! Dataset ingestion, scaling, normality-shift construction, and shift measurement.

mod jeffreys;
mod kmeans;
mod scaler;
mod shift;
mod synth;

pub use jeffreys::jeffreys_divergence;
pub use kmeans::{kmeans, KMeansResult};
pub use scaler::{fit_apply_scaler, Scaler};
pub use shift::{shift_split, ShiftMeta, ShiftSplit};
pub use synth::{gen_synthetic, ClusterSpec, SyntheticSpec};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const LABEL_COLUMN: &str = "label";

/// Feature matrix with optional binary labels (1 = anomaly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub features: Vec<String>,
    pub x: Matrix,
    pub y: Option<Vec<u8>>,
    pub notes: Vec<String>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: Matrix, y: Option<Vec<u8>>) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::numeric("dataset contains non-finite values"));
        }
        if let Some(y) = &y {
            if y.len() != x.rows() {
                return Err(Error::config(format!(
                    "{} labels for {} rows",
                    y.len(),
                    x.rows()
                )));
            }
            if y.iter().any(|&v| v > 1) {
                return Err(Error::config("labels must be 0 or 1"));
            }
        }
        let features = (0..x.cols()).map(|i| format!("f{}", i + 1)).collect();
        Ok(Self {
            name: name.into(),
            features,
            x,
            y,
            notes: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn anomaly_count(&self) -> Option<usize> {
        self.y
            .as_ref()
            .map(|y| y.iter().filter(|&&v| v == 1).count())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.features.clone(),
            x: self.x.select_rows(idx),
            y: self.y.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
            notes: self.notes.clone(),
        }
    }

    /// Same features, labels dropped.
    pub fn without_labels(&self) -> Dataset {
        Dataset {
            y: None,
            ..self.clone()
        }
    }

    /// CSV with a header; the label column, when present, is written last.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.features.clone();
        if self.y.is_some() {
            header.push(LABEL_COLUMN.to_string());
        }
        w.write_record(&header)?;
        for (i, row) in self.x.row_iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            if let Some(y) = &self.y {
                rec.push(y[i].to_string());
            }
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::internal(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        Self::parse_csv(&name, &text)
    }

    /// Parses header CSV; a column named `label` becomes `y`, every other column a feature.
    pub fn parse_csv(name: &str, text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let label_col = header.iter().position(|h| h == LABEL_COLUMN);
        let features: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|&(i, _)| Some(i) != label_col)
            .map(|(_, h)| h.clone())
            .collect();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut rows = 0;
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row_no = r + 2; // 1-based, after the header line
            for (c, cell) in rec.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row: row_no,
                    col: header.get(c).cloned().unwrap_or_else(|| c.to_string()),
                    cell: cell.to_string(),
                    msg: "not a number".into(),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: row_no,
                        col: header[c].clone(),
                        cell: cell.to_string(),
                        msg: "non-finite value".into(),
                    });
                }
                if Some(c) == label_col {
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::Parse {
                            row: row_no,
                            col: header[c].clone(),
                            cell: cell.to_string(),
                            msg: "label must be 0 or 1".into(),
                        });
                    }
                    labels.push(v as u8);
                } else {
                    data.push(v);
                }
            }
            rows += 1;
        }
        let x = Matrix::from_vec(rows, features.len(), data)?;
        let mut ds = Dataset::new(name, x, label_col.map(|_| labels))?;
        ds.features = features;
        Ok(ds)
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_labeled_csv() {
        let ds = Dataset::parse_csv("t", "f1,f2,label\n1,2,0\n3,4,1\n5,6,0\n").unwrap();
        assert_eq!((ds.len(), ds.dim()), (3, 2));
        assert_eq!(ds.y, Some(vec![0, 1, 0]));
        assert_eq!(ds.x.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn label_column_is_optional() {
        let ds = Dataset::parse_csv("t", "a,b\n1,2\n").unwrap();
        assert!(ds.y.is_none());
        assert_eq!(ds.features, vec!["a", "b"]);
    }

    #[test]
    fn non_numeric_cell_is_reported() {
        let err = Dataset::parse_csv("t", "f1,f2\n1,2\n3,abc\n").unwrap_err();
        match err {
            Error::Parse { row, col, cell, .. } => {
                assert_eq!((row, col.as_str(), cell.as_str()), (3, "f2", "abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = Dataset::load_csv(Path::new("/nonexistent/x.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn csv_round_trip() {
        let ds = Dataset::parse_csv("t", "f1,f2,label\n0.1,2.5,0\n-3,4e-3,1\n").unwrap();
        let back = Dataset::parse_csv("t", &ds.to_csv_string().unwrap()).unwrap();
        assert_eq!(back, ds);
    }
}
