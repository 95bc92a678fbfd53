use nalgebra::{DMatrix, DVector};

use super::linalg::{Penalty, PenalizedSystem};
use super::SplineError;

/// Observation weights for [`penalized_ls`]: a diagonal or a full symmetric
/// positive semi-definite matrix (e.g. an AR(1) precision).
#[derive(Debug, Clone, Copy)]
pub enum Weights<'a> {
    Diagonal(&'a DVector<f64>),
    Full(&'a DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedFit {
    pub coefficients: DVector<f64>,
    pub lambdas: Vec<f64>,
    pub edf: f64,
    pub rss: f64,
    pub n_obs: usize,
    /// Weighted `y'y`, kept to judge whether `rss` is numerically zero.
    pub yy: f64,
    pub penalty_traces: Vec<f64>,
}

impl PenalizedFit {
    pub fn fitted(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * &self.coefficients
    }

    pub fn gcv(&self) -> f64 {
        gcv_score(self.n_obs, self.rss, self.edf)
    }
}

fn weighted_parts(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: Option<Weights<'_>>,
) -> (DMatrix<f64>, DVector<f64>) {
    match weights {
        None => (x.tr_mul(x), x.tr_mul(y)),
        Some(Weights::Diagonal(w)) => {
            let mut wx = x.clone();
            for (i, mut row) in wx.row_iter_mut().enumerate() {
                row *= w[i];
            }
            (x.tr_mul(&wx), wx.tr_mul(y))
        }
        Some(Weights::Full(w)) => {
            let wx = w * x;
            (x.tr_mul(&wx), wx.tr_mul(y))
        }
    }
}

fn weighted_ss(r: &DVector<f64>, weights: Option<Weights<'_>>) -> f64 {
    match weights {
        None => r.norm_squared(),
        Some(Weights::Diagonal(w)) => r.iter().zip(w.iter()).map(|(a, b)| a * a * b).sum(),
        Some(Weights::Full(w)) => (r.transpose() * w * r)[(0, 0)],
    }
}

/// Minimize `|W^{1/2}(y - X beta)|^2 + sum_j lambda_j beta' P_j beta`.
pub fn penalized_ls(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    penalties: &[Penalty],
    lambdas: &[f64],
    weights: Option<Weights<'_>>,
) -> Result<PenalizedFit, SplineError> {
    let system = prepare(x, y, penalties, weights)?;
    fit_prepared(&system, x, y, lambdas, weights)
}

fn prepare(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    penalties: &[Penalty],
    weights: Option<Weights<'_>>,
) -> Result<PenalizedSystem, SplineError> {
    if x.nrows() != y.len() {
        return Err(SplineError::Dimension(format!(
            "design has {} rows but y has {} values",
            x.nrows(),
            y.len()
        )));
    }
    match weights {
        Some(Weights::Diagonal(w)) if w.len() != y.len() => {
            return Err(SplineError::Dimension("weight length differs from y".into()))
        }
        Some(Weights::Full(w)) if w.nrows() != y.len() || w.ncols() != y.len() => {
            return Err(SplineError::Dimension("weight matrix shape differs from y".into()))
        }
        _ => {}
    }
    let (gram, rhs) = weighted_parts(x, y, weights);
    PenalizedSystem::dense(gram, rhs, penalties.to_vec())
}

fn fit_prepared(
    system: &PenalizedSystem,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambdas: &[f64],
    weights: Option<Weights<'_>>,
) -> Result<PenalizedFit, SplineError> {
    let sol = system.solve(lambdas)?;
    let resid = y - x * &sol.beta;
    Ok(PenalizedFit {
        rss: weighted_ss(&resid, weights),
        yy: weighted_ss(y, weights),
        coefficients: sol.beta,
        lambdas: lambdas.to_vec(),
        edf: sol.edf,
        n_obs: y.len(),
        penalty_traces: sol.penalty_traces,
    })
}

/// `n RSS / (n - edf)^2`; infinite when the fit has no residual degrees of freedom.
pub fn gcv_score(n_obs: usize, rss: f64, edf: f64) -> f64 {
    let n = n_obs as f64;
    let dof = n - edf;
    if dof <= 0.0 {
        return f64::INFINITY;
    }
    n * rss / (dof * dof)
}

/// Index of the smallest score; near-ties go to the largest `key`.
///
/// `scale` sets the absolute floor of the tie tolerance (use the mean square
/// of the response so that numerically-zero residuals tie).
pub fn select_gcv_index(scores: &[f64], keys: &[f64], scale: f64) -> usize {
    assert_eq!(scores.len(), keys.len());
    assert!(!scores.is_empty(), "empty grid");
    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-10 * best.abs() + 1e-14 * scale.abs();
    let mut pick: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s <= best + tol {
            match pick {
                Some(p) if keys[p] >= keys[i] => {}
                _ => pick = Some(i),
            }
        }
    }
    pick.unwrap_or(0)
}

/// Evaluate every grid point and keep the GCV minimizer (ties toward larger λ).
pub fn gcv_select(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    penalties: &[Penalty],
    grid: &[Vec<f64>],
) -> Result<(Vec<f64>, PenalizedFit), SplineError> {
    if grid.is_empty() {
        return Err(SplineError::Dimension("empty smoothing-parameter grid".into()));
    }
    let system = prepare(x, y, penalties, None)?;
    let fits = grid
        .iter()
        .map(|l| fit_prepared(&system, x, y, l, None))
        .collect::<Result<Vec<_>, _>>()?;
    let scores: Vec<f64> = fits.iter().map(PenalizedFit::gcv).collect();
    let keys: Vec<f64> = grid.iter().map(|l| l.iter().sum()).collect();
    let scale = y.norm_squared() / y.len().max(1) as f64;
    let i = select_gcv_index(&scores, &keys, scale);
    Ok((grid[i].clone(), fits.into_iter().nth(i).unwrap()))
}

/// One λ per decade from 1e-4 to 1e8.
pub fn default_lambda_grid() -> Vec<f64> {
    (-4..=8).map(|e| 10f64.powi(e)).collect()
}

/// Gaussian AIC with profiled variance: `n log(RSS/n) + 2 (edf + 1)`.
pub fn aic(fit: &PenalizedFit) -> Result<f64, SplineError> {
    if !(fit.rss > 0.0) || fit.rss <= 1e-20 * fit.yy {
        return Err(SplineError::DegenerateFit);
    }
    let n = fit.n_obs as f64;
    Ok(n * (fit.rss / n).ln() + 2.0 * (fit.edf + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splines::{ar1_whiten, bspline_design, difference_penalty, smooth_penalty, BasisSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Gaussian elimination with partial pivoting on an augmented system.
    fn gauss_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let n = a.nrows();
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r: Vec<f64> = (0..n).map(|j| a[(i, j)]).collect();
                r.push(b[i]);
                r
            })
            .collect();
        for c in 0..n {
            let piv = (c..n)
                .max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap())
                .unwrap();
            m.swap(c, piv);
            for r in c + 1..n {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
            x[r] = (m[r][n] - s) / m[r][r];
        }
        DVector::from_vec(x)
    }

    fn single(k: usize, order: usize) -> Vec<Penalty> {
        vec![Penalty::single(0, difference_penalty(k, order))]
    }

    #[test]
    fn small_system_matches_elimination_oracle() {
        let x = DMatrix::from_row_slice(
            5,
            3,
            &[1.0, 0.2, 0.0, 0.5, 0.5, 0.1, 0.1, 0.7, 0.3, 0.0, 0.4, 0.9, 0.3, 0.1, 0.6],
        );
        let y = DVector::from_vec(vec![1.0, -0.5, 2.0, 0.3, 1.1]);
        let fit = penalized_ls(&x, &y, &single(3, 1), &[0.5], None).unwrap();
        let a = x.tr_mul(&x) + difference_penalty(3, 1) * 0.5;
        let beta = gauss_solve(&a, &x.tr_mul(&y));
        assert!((fit.coefficients - beta).abs().max() < 1e-12);
    }

    #[test]
    fn zero_lambda_is_ordinary_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(30, |_, _| rng.random_range(-1.0..1.0));
        let fit = penalized_ls(&x, &y, &single(4, 2), &[0.0], None).unwrap();
        let ols = x.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        assert!((fit.coefficients - ols).abs().max() < 1e-8);
        assert!((fit.edf - 4.0).abs() < 1e-9);
    }

    #[test]
    fn huge_lambda_gives_affine_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs: Vec<f64> = (0..80).map(|i| i as f64 / 79.0).collect();
        let spec = BasisSpec::cubic(10, 0.0, 1.0).unwrap();
        let x = bspline_design(&spec, &xs).unwrap();
        let y = DVector::from_iterator(80, xs.iter().map(|t| (6.0 * t).sin() + rng.random_range(-0.1..0.1)));
        let pen = vec![Penalty::single(0, smooth_penalty(&spec, 2))];
        let fit = penalized_ls(&x, &y, &pen, &[1e12], None).unwrap();
        let yhat = fit.fitted(&x);
        // least-squares line through the fitted values
        let line = DMatrix::from_fn(80, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let coef = line.clone().svd(true, true).solve(&yhat, 1e-14).unwrap();
        let dev = (&line * coef - &yhat).abs().max();
        assert!(dev < 1e-6, "{dev}");
    }

    #[test]
    fn rank_deficient_without_penalty_is_singular() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let err = penalized_ls(&x, &y, &single(2, 1), &[0.0], None).unwrap_err();
        assert!(matches!(err, SplineError::SingularSystem { .. }));
    }

    #[test]
    fn edf_is_rank_at_zero_and_decreases() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let spec = BasisSpec::cubic(8, 0.0, 1.0).unwrap();
        let x = bspline_design(&spec, &xs).unwrap();
        let y = DVector::from_iterator(40, xs.iter().map(|t| t * t));
        let mut prev = f64::INFINITY;
        for (i, lam) in [0.0, 1e-3, 1e-1, 1.0, 10.0, 1e3, 1e6].iter().enumerate() {
            let fit = penalized_ls(&x, &y, &single(8, 2), &[*lam], None).unwrap();
            if i == 0 {
                assert!((fit.edf - 8.0).abs() < 1e-8);
            }
            assert!(fit.edf <= prev + 1e-10);
            assert!(fit.edf >= 2.0 - 1e-8);
            prev = fit.edf;
        }
    }

    #[test]
    fn affine_reparameterization_leaves_fit_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
        let y = DVector::from_iterator(50, xs.iter().map(|t| (3.0 * t).cos()));
        let a = BasisSpec::cubic(7, 0.0, 1.0).unwrap();
        let b = BasisSpec::cubic(7, 10.0, 40.0).unwrap();
        let xb: Vec<f64> = xs.iter().map(|t| 10.0 + 30.0 * t).collect();
        let fa = penalized_ls(&bspline_design(&a, &xs).unwrap(), &y, &single(7, 2), &[0.3], None).unwrap();
        let fb = penalized_ls(&bspline_design(&b, &xb).unwrap(), &y, &single(7, 2), &[0.3], None).unwrap();
        let d = (fa.fitted(&bspline_design(&a, &xs).unwrap()) - fb.fitted(&bspline_design(&b, &xb).unwrap()))
            .abs()
            .max();
        assert!(d < 1e-8);
    }

    #[test]
    fn ar1_weights_match_whiten_then_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 25;
        let rho: f64 = 0.8;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        // whitening matrix L, weights W = L'L
        let mut l = DMatrix::<f64>::zeros(n, n);
        l[(0, 0)] = (1.0 - rho * rho).sqrt();
        for t in 1..n {
            l[(t, t)] = 1.0;
            l[(t, t - 1)] = -rho;
        }
        let w = l.tr_mul(&l);
        let pen = single(3, 1);
        let fw = penalized_ls(&x, &y, &pen, &[0.0], Some(Weights::Full(&w))).unwrap();
        let yw = DVector::from_vec(ar1_whiten(y.as_slice(), rho).unwrap());
        let mut xw = x.clone();
        for j in 0..3 {
            let c: Vec<f64> = x.column(j).iter().copied().collect();
            xw.column_mut(j).copy_from_slice(&ar1_whiten(&c, rho).unwrap());
        }
        let ols = xw.clone().svd(true, true).solve(&yw, 1e-14).unwrap();
        assert!((fw.coefficients - ols).abs().max() < 1e-8);
    }

    #[test]
    fn constant_response_picks_largest_lambda() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let spec = BasisSpec::cubic(6, 0.0, 1.0).unwrap();
        let x = bspline_design(&spec, &xs).unwrap();
        let y = DVector::from_element(30, 2.5);
        let grid: Vec<Vec<f64>> = default_lambda_grid().into_iter().map(|l| vec![l]).collect();
        let (lam, _) = gcv_select(&x, &y, &single(6, 2), &grid).unwrap();
        assert_eq!(lam, vec![1e8]);
    }

    #[test]
    fn noisy_sine_selection_beats_grid_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let n = 200;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let truth: Vec<f64> = xs.iter().map(|t| (2.0 * std::f64::consts::PI * t).sin()).collect();
        let y = DVector::from_iterator(n, truth.iter().map(|v| v + noise.sample(&mut rng)));
        let spec = BasisSpec::cubic(20, 0.0, 1.0).unwrap();
        let x = bspline_design(&spec, &xs).unwrap();
        let pen = single(20, 2);
        let grid: Vec<Vec<f64>> = (-4..=4).map(|e| vec![10f64.powi(e)]).collect();
        let (lam, best) = gcv_select(&x, &y, &pen, &grid).unwrap();
        let rmse = |f: &PenalizedFit| {
            let yhat = f.fitted(&x);
            (yhat.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64).sqrt()
        };
        let lo = penalized_ls(&x, &y, &pen, &grid[0], None).unwrap();
        let hi = penalized_ls(&x, &y, &pen, &grid[8], None).unwrap();
        assert!(rmse(&best) <= rmse(&lo) && rmse(&best) <= rmse(&hi), "lambda {lam:?}");
        for g in &grid {
            let f = penalized_ls(&x, &y, &pen, g, None).unwrap();
            assert!(best.gcv() <= f.gcv());
        }
    }

    #[test]
    fn aic_plug_in() {
        let fit = PenalizedFit {
            coefficients: DVector::zeros(1),
            lambdas: vec![],
            edf: 5.0,
            rss: 100.0,
            n_obs: 100,
            yy: 1e4,
            penalty_traces: vec![],
        };
        assert!((aic(&fit).unwrap() - 12.0).abs() < 1e-12);
        let zero = PenalizedFit { rss: 0.0, ..fit };
        assert_eq!(aic(&zero), Err(SplineError::DegenerateFit));
    }

    #[test]
    fn useless_smooth_costs_little_aic() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let noise = Normal::new(0.0, 0.2).unwrap();
        let n = 300;
        let x1: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let x2: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let y = DVector::from_iterator(n, x1.iter().map(|t| (4.0 * t).sin() + noise.sample(&mut rng)));
        let s = BasisSpec::cubic(8, 0.0, 1.0).unwrap();
        let b1 = bspline_design(&s, &x1).unwrap();
        let b2 = bspline_design(&s, &x2).unwrap();
        // full: b1 plus b2 without its first column (keeps a single intercept)
        let full = DMatrix::from_fn(n, 15, |i, j| if j < 8 { b1[(i, j)] } else { b2[(i, j - 7)] });
        let pens = vec![
            Penalty::single(0, difference_penalty(8, 2)),
            Penalty::single(8, difference_penalty(8, 2).view((1, 1), (7, 7)).into_owned()),
        ];
        let grid: Vec<Vec<f64>> = default_lambda_grid()
            .iter()
            .flat_map(|a| default_lambda_grid().into_iter().map(move |b| vec![*a, b]))
            .collect();
        let (_, f_full) = gcv_select(&full, &y, &pens, &grid).unwrap();
        let grid1: Vec<Vec<f64>> = default_lambda_grid().into_iter().map(|l| vec![l]).collect();
        let (_, f_red) = gcv_select(&b1, &y, &pens[..1], &grid1).unwrap();
        let d_aic = aic(&f_full).unwrap() - aic(&f_red).unwrap();
        let d_edf = f_full.edf - f_red.edf;
        assert!(d_aic < 2.0 * d_edf + 1e-6, "dAIC {d_aic} dedf {d_edf}");
    }
}
