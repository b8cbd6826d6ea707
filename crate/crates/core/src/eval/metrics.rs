use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Binary support pattern: 1 where the entry is nonzero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityPattern {
    n: usize,
    bits: Vec<u8>,
}

impl SparsityPattern {
    pub fn of(a: &Mat) -> Self {
        let n = a.nrows();
        let bits = (0..a.nrows())
            .flat_map(|i| (0..a.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| u8::from(a[(i, j)] != 0.0))
            .collect();
        Self { n, bits }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.bits[i * self.n + j]
    }

    pub fn to_matrix(&self) -> Mat {
        Mat::from_fn(self.n, self.n, |i, j| f64::from(self.get(i, j)))
    }

    pub fn nonzeros(&self) -> usize {
        self.bits.iter().map(|&b| usize::from(b)).sum()
    }

    pub fn hamming(&self, other: &Self) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }
}

fn check_shapes(a: &Mat, b: &Mat) -> Result<()> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(Error::invalid(format!(
            "metric needs equal square matrices, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `‖A̲ − Â̲‖_F / √(n(n−1))` over the off-diagonal entries.
pub fn rmse(a_true: &Mat, a_hat: &Mat) -> Result<f64> {
    check_shapes(a_true, a_hat)?;
    let n = a_true.nrows();
    if n < 2 {
        return Err(Error::invalid("rmse needs at least two regions"));
    }
    let mut ss = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                ss += (a_true[(i, j)] - a_hat[(i, j)]).powi(2);
            }
        }
    }
    Ok((ss / (n * (n - 1)) as f64).sqrt())
}

/// `‖SP(A) − SP(Â)‖²_F` over all `n²` entries.
pub fn err(a_true: &Mat, a_hat: &Mat) -> Result<usize> {
    check_shapes(a_true, a_hat)?;
    Ok(SparsityPattern::of(a_true).hamming(&SparsityPattern::of(a_hat)))
}

/// Pattern mismatches on the off-diagonal entries only.
pub fn off_diagonal_err(a_true: &Mat, a_hat: &Mat) -> Result<usize> {
    check_shapes(a_true, a_hat)?;
    let n = a_true.nrows();
    Ok((0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && (a_true[(i, j)] != 0.0) != (a_hat[(i, j)] != 0.0))
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::DEFAULT_A;

    #[test]
    fn rmse_cases() {
        let a = Mat::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -1.0]);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let d = Mat::from_row_slice(2, 2, &[-3.0, 0.3, 0.0, 5.0]);
        assert_eq!(rmse(&a, &d).unwrap(), 0.0);
        let b = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.4, -1.0]);
        assert!((rmse(&a, &b).unwrap() - 0.353_553_390_593_273_8).abs() < 1e-15);
        assert!(rmse(&a, &Mat::zeros(3, 3)).is_err());
    }

    #[test]
    fn err_cases() {
        let a = Mat::from_row_slice(7, 7, &DEFAULT_A);
        assert_eq!(err(&a, &a).unwrap(), 0);
        assert_eq!(err(&a, &Mat::zeros(7, 7)).unwrap(), 21);
        let mut b = a.clone();
        b[(0, 1)] = 0.5;
        assert_eq!(err(&a, &b).unwrap(), 1);
        assert_eq!(off_diagonal_err(&a, &Mat::zeros(7, 7)).unwrap(), 14);
    }

    #[test]
    fn pattern_is_scale_invariant() {
        let a = Mat::from_row_slice(7, 7, &DEFAULT_A);
        let p = SparsityPattern::of(&a);
        assert_eq!(SparsityPattern::of(&(p.to_matrix() * -2.5)), p);
        assert_eq!(p.nonzeros(), 21);
    }
}
