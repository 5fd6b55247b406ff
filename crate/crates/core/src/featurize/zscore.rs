use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Columns whose standard deviation falls below this map to zeros.
pub const MIN_STD: f64 = 1e-12;

/// Per-column standardization with population statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZScoreScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScoreScaler {
    pub fn fit(x: &Matrix) -> Result<Self> {
        let n = x.rows();
        if n == 0 {
            return Err(Error::Data("z-score fit on zero rows".into()));
        }
        let d = x.cols();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn columns(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.columns() {
            return Err(Error::shape("zscore_apply", (x.rows(), self.columns()), x.shape()));
        }
        let mut data = Vec::with_capacity(x.len());
        for i in 0..x.rows() {
            for ((v, m), s) in x.row(i).iter().zip(&self.mean).zip(&self.std) {
                data.push(if *s < MIN_STD { 0.0 } else { (v - m) / s });
            }
        }
        Matrix::new(x.rows(), x.cols(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_column_maps_to_zero() {
        let x = Matrix::column_vector(vec![7.0, 7.0, 7.0]).unwrap();
        let s = ZScoreScaler::fit(&x).unwrap();
        assert_eq!(s.apply(&x).unwrap().as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn hand_computed_column() {
        let x = Matrix::column_vector(vec![1.0, 2.0, 3.0]).unwrap();
        let s = ZScoreScaler::fit(&x).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert!((s.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let z = s.apply(&x).unwrap();
        let expected = [-1.2247, 0.0, 1.2247];
        for (a, b) in z.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn column_mismatch_is_shape_error() {
        let s = ZScoreScaler::fit(&Matrix::zeros(3, 2)).unwrap();
        assert!(matches!(s.apply(&Matrix::zeros(3, 3)), Err(Error::Shape { .. })));
        assert!(ZScoreScaler::fit(&Matrix::zeros(0, 2)).is_err());
    }
}
