use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SplineError;

/// A B-spline basis of `k` functions of the given degree on open-uniform knots
/// over `[lo, hi]`: `degree + 1` repeated knots at each boundary and
/// `k - degree - 1` equally spaced interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub k: usize,
    pub degree: usize,
    pub lo: f64,
    pub hi: f64,
}

impl BasisSpec {
    pub fn new(k: usize, degree: usize, lo: f64, hi: f64) -> Result<Self, SplineError> {
        if k < degree + 1 {
            return Err(SplineError::InvalidBasis(format!(
                "k = {k} is smaller than degree + 1 = {}",
                degree + 1
            )));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(SplineError::InvalidBasis(format!("empty domain [{lo}, {hi}]")));
        }
        Ok(Self { k, degree, lo, hi })
    }

    pub fn cubic(k: usize, lo: f64, hi: f64) -> Result<Self, SplineError> {
        Self::new(k, 3, lo, hi)
    }

    pub fn knots(&self) -> Vec<f64> {
        let n_interior = self.k - self.degree - 1;
        let h = (self.hi - self.lo) / (n_interior + 1) as f64;
        let mut t = Vec::with_capacity(self.k + self.degree + 1);
        t.extend(std::iter::repeat_n(self.lo, self.degree + 1));
        t.extend((1..=n_interior).map(|i| self.lo + h * i as f64));
        t.extend(std::iter::repeat_n(self.hi, self.degree + 1));
        t
    }

    /// Greville abscissae: knot averages at which coefficients "sit";
    /// coefficients equal to them reproduce `f(x) = x` exactly.
    pub fn greville(&self) -> Vec<f64> {
        let t = self.knots();
        let d = self.degree.max(1);
        (0..self.k)
            .map(|i| {
                if self.degree == 0 {
                    0.5 * (t[i] + t[i + 1])
                } else {
                    t[i + 1..=i + d].iter().sum::<f64>() / d as f64
                }
            })
            .collect()
    }

    fn clamp(&self, x: f64) -> Result<f64, SplineError> {
        let tol = 1e-12 * (self.hi - self.lo).max(1.0);
        if !x.is_finite() || x < self.lo - tol || x > self.hi + tol {
            return Err(SplineError::OutOfDomain(x));
        }
        Ok(x.clamp(self.lo, self.hi))
    }

    /// The `degree + 1` possibly non-zero basis values at `x`, and the index
    /// of the first of them.
    pub fn eval_nonzero(&self, x: f64) -> Result<(usize, Vec<f64>), SplineError> {
        let x = self.clamp(x)?;
        let t = self.knots();
        let p = self.degree;
        // knot span: t[span] <= x < t[span + 1], last span closed on the right
        let mut span = p;
        while span < self.k - 1 && x >= t[span + 1] {
            span += 1;
        }
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Ok((span - p, n))
    }

    /// Full row of `k` basis values at `x`.
    pub fn eval(&self, x: f64) -> Result<Vec<f64>, SplineError> {
        let (first, vals) = self.eval_nonzero(x)?;
        let mut row = vec![0.0; self.k];
        row[first..first + vals.len()].copy_from_slice(&vals);
        Ok(row)
    }
}

/// Design matrix with one row of basis values per point in `x`.
pub fn bspline_design(spec: &BasisSpec, x: &[f64]) -> Result<DMatrix<f64>, SplineError> {
    let mut m = DMatrix::zeros(x.len(), spec.k);
    for (i, &xi) in x.iter().enumerate() {
        let (first, vals) = spec.eval_nonzero(xi)?;
        for (j, v) in vals.into_iter().enumerate() {
            m[(i, first + j)] = v;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook recursive definition, evaluated independently of the span algorithm.
    fn cox_de_boor(t: &[f64], i: usize, d: usize, x: f64) -> f64 {
        if d == 0 {
            if t[i] <= x && x < t[i + 1] {
                return 1.0;
            }
            // right boundary belongs to the last non-empty interval
            let hi = *t.last().unwrap();
            if x == hi && t[i + 1] == hi && t[i] < hi {
                return 1.0;
            }
            return 0.0;
        }
        let mut v = 0.0;
        let a = t[i + d] - t[i];
        if a > 0.0 {
            v += (x - t[i]) / a * cox_de_boor(t, i, d - 1, x);
        }
        let b = t[i + d + 1] - t[i + 1];
        if b > 0.0 {
            v += (t[i + d + 1] - x) / b * cox_de_boor(t, i + 1, d - 1, x);
        }
        v
    }

    #[test]
    fn matches_recursive_oracle_mid_domain() {
        let spec = BasisSpec::cubic(4, 0.0, 1.0).unwrap();
        let t = spec.knots();
        let row = spec.eval(0.5).unwrap();
        for (i, v) in row.iter().enumerate() {
            let o = cox_de_boor(&t, i, 3, 0.5);
            assert!((v - o).abs() < 1e-12, "{i}: {v} vs {o}");
        }
        // k = 4, degree 3 is the Bernstein basis: 1/8, 3/8, 3/8, 1/8 at 0.5
        assert!((row[0] - 0.125).abs() < 1e-15 && (row[1] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn matches_recursive_oracle_with_interior_knots() {
        let spec = BasisSpec::new(9, 3, -2.0, 3.0).unwrap();
        let t = spec.knots();
        for s in 0..=200 {
            let x = -2.0 + 5.0 * s as f64 / 200.0;
            let row = spec.eval(x).unwrap();
            for (i, v) in row.iter().enumerate() {
                assert!((v - cox_de_boor(&t, i, 3, x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn left_boundary_interpolates() {
        let spec = BasisSpec::cubic(7, 0.0, 1.0).unwrap();
        let row = spec.eval(0.0).unwrap();
        assert_eq!(row[0], 1.0);
        assert!(row[1..].iter().all(|v| *v == 0.0));
        let row = spec.eval(1.0).unwrap();
        assert!((row[6] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clamps_near_boundary_and_rejects_beyond() {
        let spec = BasisSpec::cubic(5, 0.0, 1.0).unwrap();
        assert!(spec.eval(1.0 + 1e-13).is_ok());
        assert!(spec.eval(-1e-13).is_ok());
        assert_eq!(spec.eval(1.01), Err(SplineError::OutOfDomain(1.01)));
    }

    #[test]
    fn greville_coefficients_reproduce_identity() {
        let spec = BasisSpec::cubic(9, -1.0, 2.0).unwrap();
        let g = spec.greville();
        for s in 0..=50 {
            let x = -1.0 + 3.0 * s as f64 / 50.0;
            let row = spec.eval(x).unwrap();
            let v: f64 = row.iter().zip(&g).map(|(a, b)| a * b).sum();
            assert!((v - x).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(BasisSpec::new(3, 3, 0.0, 1.0).is_err());
        assert!(BasisSpec::new(5, 3, 1.0, 1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn partition_of_unity(k in 4usize..15, x in 0.0f64..=1.0, lo in -5.0f64..5.0, w in 0.1f64..10.0) {
                let spec = BasisSpec::cubic(k, lo, lo + w).unwrap();
                let row = spec.eval(lo + x * w).unwrap();
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|v| *v >= -1e-15));
            }
        }
    }
}
