use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::BasisSpec;

/// Order of the difference penalty on adjacent coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub order: usize,
}

impl Default for PenaltySpec {
    fn default() -> Self {
        Self { order: 2 }
    }
}

/// `D'D` for the `order`-th difference operator on a length-`k` coefficient sequence.
///
/// Requires `order < k`.
pub fn difference_penalty(k: usize, order: usize) -> DMatrix<f64> {
    assert!(order < k, "difference order {order} must be below k = {k}");
    let mut d = DMatrix::<f64>::identity(k, k);
    for _ in 0..order {
        let r = d.nrows();
        let mut next = DMatrix::zeros(r - 1, k);
        for i in 0..r - 1 {
            for j in 0..k {
                next[(i, j)] = d[(i + 1, j)] - d[(i, j)];
            }
        }
        d = next;
    }
    d.transpose() * d
}

/// Difference penalty adapted to a clamped basis.
///
/// For order ≥ 2 the first difference is taken per unit of Greville spacing
/// (scaled back by the interior knot spacing), so the penalty null space is
/// exactly the polynomials of degree < order *in x* rather than in coefficient
/// index; with clamped knots the two differ near the boundaries. Order 1 is
/// the plain difference penalty.
pub fn smooth_penalty(spec: &BasisSpec, order: usize) -> DMatrix<f64> {
    let k = spec.k;
    assert!(order < k, "difference order {order} must be below k = {k}");
    if order < 2 {
        return difference_penalty(k, order);
    }
    let g = spec.greville();
    let h = (spec.hi - spec.lo) / (k - spec.degree) as f64;
    let mut d = DMatrix::<f64>::zeros(k - 1, k);
    for i in 0..k - 1 {
        let w = h / (g[i + 1] - g[i]);
        d[(i, i)] = -w;
        d[(i, i + 1)] = w;
    }
    for _ in 1..order {
        let r = d.nrows();
        let mut next = DMatrix::zeros(r - 1, k);
        for i in 0..r - 1 {
            for j in 0..k {
                next[(i, j)] = d[(i + 1, j)] - d[(i, j)];
            }
        }
        d = next;
    }
    d.transpose() * d
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn first_order_k3() {
        let p = difference_penalty(3, 1);
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(p, expected);
    }

    #[test]
    fn first_order_k2() {
        let p = difference_penalty(2, 1);
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn second_order_k4_by_hand() {
        // D = [[1,-2,1,0],[0,1,-2,1]]
        let p = difference_penalty(4, 2);
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[1.0, -2.0, 1.0, 0.0, -2.0, 5.0, -4.0, 1.0, 1.0, -4.0, 5.0, -2.0, 0.0, 1.0, -2.0, 1.0],
        );
        assert_eq!(p, expected);
    }

    #[test]
    fn smooth_penalty_null_space_is_affine_in_x() {
        let spec = BasisSpec::cubic(10, 0.0, 1.0).unwrap();
        let p = smooth_penalty(&spec, 2);
        let g = DVector::from_vec(spec.greville().iter().map(|x| 0.3 - 2.0 * x).collect());
        assert!((g.transpose() * &p * &g)[(0, 0)].abs() < 1e-10);
        // agrees with the plain penalty away from the boundaries
        let plain = difference_penalty(10, 2);
        assert!((p[(5, 5)] - plain[(5, 5)]).abs() < 1e-12);
        assert_eq!(smooth_penalty(&spec, 1), difference_penalty(10, 1));
    }

    #[test]
    fn annihilates_low_degree_polynomials() {
        for k in 3..10 {
            for m in 1..3.min(k) {
                let p = difference_penalty(k, m);
                for deg in 0..m {
                    let c = DVector::from_fn(k, |i, _| (i as f64 + 0.5).powi(deg as i32) * 1.7 - 0.3);
                    let q = (c.transpose() * &p * &c)[(0, 0)];
                    assert!(q.abs() < 1e-9, "k={k} m={m} deg={deg}: {q}");
                }
            }
        }
    }
}
