use super::SplineError;

fn check_rho(rho: f64) -> Result<(), SplineError> {
    if !(0.0..1.0).contains(&rho) {
        return Err(SplineError::InvalidRho(rho));
    }
    Ok(())
}

/// Whiten one time-ordered series: `y1 sqrt(1 - rho^2)`, then `y_t - rho y_{t-1}`.
pub fn ar1_whiten(y: &[f64], rho: f64) -> Result<Vec<f64>, SplineError> {
    check_rho(rho)?;
    let mut out = Vec::with_capacity(y.len());
    for (t, &v) in y.iter().enumerate() {
        out.push(if t == 0 {
            v * (1.0 - rho * rho).sqrt()
        } else {
            v - rho * y[t - 1]
        });
    }
    Ok(out)
}

/// Whiten consecutive groups (tokens) of a series independently; `lengths`
/// must sum to `y.len()`.
pub fn ar1_whiten_groups(y: &[f64], lengths: &[usize], rho: f64) -> Result<Vec<f64>, SplineError> {
    check_rho(rho)?;
    if lengths.iter().sum::<usize>() != y.len() {
        return Err(SplineError::Dimension("group lengths do not cover the series".into()));
    }
    let mut out = Vec::with_capacity(y.len());
    let mut start = 0;
    for &len in lengths {
        out.extend(ar1_whiten(&y[start..start + len], rho)?);
        start += len;
    }
    Ok(out)
}

/// Whiten a group of sparse design rows, given as `(column, value)` lists in
/// time order. The result has the union of columns of each row and its
/// predecessor.
pub fn ar1_whiten_rows(rows: &[Vec<(usize, f64)>], rho: f64) -> Result<Vec<Vec<(usize, f64)>>, SplineError> {
    check_rho(rho)?;
    let first = (1.0 - rho * rho).sqrt();
    let mut out = Vec::with_capacity(rows.len());
    for (t, row) in rows.iter().enumerate() {
        if t == 0 {
            out.push(row.iter().map(|&(c, v)| (c, v * first)).collect());
            continue;
        }
        let mut merged: Vec<(usize, f64)> = row.clone();
        merged.extend(rows[t - 1].iter().map(|&(c, v)| (c, -rho * v)));
        merged.sort_by_key(|e| e.0);
        let mut compact: Vec<(usize, f64)> = Vec::with_capacity(merged.len());
        for (c, v) in merged {
            match compact.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => compact.push((c, v)),
            }
        }
        out.push(compact);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::lag1_autocorrelation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn zero_rho_is_identity() {
        let y = [1.0, -2.0, 3.5];
        assert_eq!(ar1_whiten(&y, 0.0).unwrap(), y.to_vec());
    }

    #[test]
    fn rho_one_rejected() {
        assert_eq!(ar1_whiten(&[1.0], 1.0), Err(SplineError::InvalidRho(1.0)));
        assert!(ar1_whiten(&[1.0], -0.1).is_err());
    }

    #[test]
    fn whitened_ar1_noise_is_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(95);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let rho: f64 = 0.95;
        let mut e = Vec::with_capacity(5000);
        let mut prev = normal.sample(&mut rng) / (1.0 - rho * rho).sqrt();
        e.push(prev);
        for _ in 1..5000 {
            prev = rho * prev + normal.sample(&mut rng);
            e.push(prev);
        }
        assert!(lag1_autocorrelation(&e) > 0.9);
        let w = ar1_whiten(&e, rho).unwrap();
        assert!(lag1_autocorrelation(&w).abs() < 0.05);
    }

    #[test]
    fn groups_restart_each_token() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let w = ar1_whiten_groups(&y, &[2, 2], 0.5).unwrap();
        let s = (0.75f64).sqrt();
        assert_eq!(w, vec![s, 1.5, 3.0 * s, 2.5]);
    }

    #[test]
    fn sparse_rows_match_dense() {
        let rows = vec![vec![(0, 1.0), (2, 0.5)], vec![(1, 2.0), (2, 1.0)], vec![(0, 3.0)]];
        let w = ar1_whiten_rows(&rows, 0.6).unwrap();
        for col in 0..3 {
            let dense: Vec<f64> = rows
                .iter()
                .map(|r| r.iter().find(|e| e.0 == col).map_or(0.0, |e| e.1))
                .collect();
            let expect = ar1_whiten(&dense, 0.6).unwrap();
            for (t, row) in w.iter().enumerate() {
                let got = row.iter().find(|e| e.0 == col).map_or(0.0, |e| e.1);
                assert!((got - expect[t]).abs() < 1e-15);
            }
        }
    }
}
