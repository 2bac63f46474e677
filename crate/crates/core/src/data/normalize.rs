//! Column-wise min-max scaling to [-1, 1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Name of the cohort the stats were fitted on.
    pub fitted_on: String,
    pub rows: usize,
}

pub fn fit_normalizer(x: &Tensor, fitted_on: &str) -> Result<NormalizationStats> {
    let (rows, cols) = x.dims2()?;
    if rows == 0 {
        return Err(Error::contract("cannot fit normalization on an empty matrix"));
    }
    let mut min = vec![f64::INFINITY; cols];
    let mut max = vec![f64::NEG_INFINITY; cols];
    for i in 0..rows {
        for (j, &v) in x.row(i).iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    Ok(NormalizationStats {
        min,
        max,
        fitted_on: fitted_on.to_string(),
        rows,
    })
}

/// `2(x − min)/(max − min) − 1`, clipped to [-1, 1]; constant columns map to 0.
pub fn apply_normalizer(x: &Tensor, stats: &NormalizationStats) -> Result<Tensor> {
    let (rows, cols) = x.dims2()?;
    if cols != stats.min.len() {
        return Err(Error::Shape {
            op: "apply_normalizer",
            lhs: vec![rows, cols],
            rhs: vec![stats.min.len()],
        });
    }
    let mut out = x.clone();
    for (k, v) in out.values_mut().iter_mut().enumerate() {
        let j = k % cols;
        let (lo, hi) = (stats.min[j], stats.max[j]);
        *v = if hi > lo {
            (2.0 * (*v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
        } else {
            0.0
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_records_extremes() {
        let x = Tensor::matrix(3, 2, vec![0.0, 4.0, 5.0, 4.0, 10.0, 4.0]).unwrap();
        let s = fit_normalizer(&x, "train").unwrap();
        assert_eq!(s.min, [0.0, 4.0]);
        assert_eq!(s.max, [10.0, 4.0]);
        assert_eq!(s.fitted_on, "train");
        let y = apply_normalizer(&x, &s).unwrap();
        assert_eq!(y.values(), &[-1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let again = fit_normalizer(&y, "train").unwrap();
        assert_eq!(again.min[0], -1.0);
        assert_eq!(again.max[0], 1.0);
    }

    #[test]
    fn test_values_clip() {
        let x = Tensor::matrix(2, 1, vec![0.0, 10.0]).unwrap();
        let s = fit_normalizer(&x, "train").unwrap();
        let t = Tensor::matrix(3, 1, vec![25.0, -3.0, 5.0]).unwrap();
        assert_eq!(apply_normalizer(&t, &s).unwrap().values(), &[1.0, -1.0, 0.0]);
    }

    #[test]
    fn width_mismatch_and_empty() {
        let s = fit_normalizer(&Tensor::zeros(&[2, 3]), "train").unwrap();
        assert!(apply_normalizer(&Tensor::zeros(&[2, 2]), &s).is_err());
        assert!(fit_normalizer(&Tensor::zeros(&[0, 3]), "train").is_err());
    }
}
