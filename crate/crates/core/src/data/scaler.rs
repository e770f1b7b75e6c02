use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Per-feature min-max scaling fitted on the training split. Values outside the
/// training range are not clipped; constant features map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    pub fn fit(train: &Matrix) -> Result<Self> {
        if train.rows() == 0 {
            return Err(Error::config("cannot fit a scaler on an empty matrix"));
        }
        let mut min = vec![f64::INFINITY; train.cols()];
        let mut max = vec![f64::NEG_INFINITY; train.cols()];
        for row in train.row_iter() {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.min.len() {
            return Err(Error::config(format!(
                "scaler fitted on {} features, got {}",
                self.min.len(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        let cols = x.cols();
        for row in out.as_mut_slice().chunks_exact_mut(cols.max(1)) {
            for (j, v) in row.iter_mut().enumerate() {
                let span = self.max[j] - self.min[j];
                *v = if span > 0.0 {
                    (*v - self.min[j]) / span
                } else {
                    0.0
                };
            }
        }
        Ok(out)
    }
}

/// Fits on `train` and applies the same transform to `train` and every `other`.
pub fn fit_apply_scaler(
    train: &Matrix,
    others: &[&Matrix],
) -> Result<(Matrix, Vec<Matrix>, Scaler)> {
    let scaler = Scaler::fit(train)?;
    let t = scaler.transform(train)?;
    let o = others
        .iter()
        .map(|m| scaler.transform(m))
        .collect::<Result<Vec<_>>>()?;
    Ok((t, o, scaler))
}
