//! Column layout of an additive model and construction of its sparse rows.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;

use super::spec::{ModelSpec, TermKind, TermSpec, TIME};
use super::ContourError;
use crate::data::TokenRecord;
use crate::splines::{difference_penalty, smooth_penalty, BasisSpec, Penalty, PenaltyBlock};

pub(crate) type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone)]
pub(crate) struct TermLayout {
    pub spec: TermSpec,
    pub label: String,
    pub start: usize,
    pub ncols: usize,
    /// Sorted factor levels (for parametric factors the first is the reference).
    pub levels: Vec<String>,
    level_index: BTreeMap<String, usize>,
    pub basis: Option<BasisSpec>,
    /// Sum-to-zero reparameterizations: one for a smooth, one per level for a by-smooth.
    z: Vec<DMatrix<f64>>,
    /// Columns per level (or all columns for a plain smooth).
    pub width: usize,
    /// Index of this term's penalty, if any.
    pub penalty: Option<usize>,
}

impl TermLayout {
    pub fn level_of(&self, level: &str) -> Result<usize, ContourError> {
        self.level_index.get(level).copied().ok_or_else(|| ContourError::UnseenLevel {
            factor: self.spec.factor.clone().unwrap_or_default(),
            level: level.to_string(),
        })
    }

    /// Column range of one level's block.
    pub fn level_columns(&self, level: usize) -> std::ops::Range<usize> {
        let s = self.start + level * self.width;
        s..s + self.width
    }

    fn basis_row(&self, x: f64, z: Option<&DMatrix<f64>>, col0: usize, out: &mut SparseRow) -> Result<(), ContourError> {
        let basis = self.basis.as_ref().expect("smooth term has a basis");
        let x = x.clamp(basis.lo, basis.hi);
        let (first, vals) = basis.eval_nonzero(x)?;
        match z {
            None => out.extend(vals.iter().enumerate().map(|(i, v)| (col0 + first + i, *v))),
            Some(z) => {
                for j in 0..z.ncols() {
                    let v: f64 = vals.iter().enumerate().map(|(i, b)| b * z[(first + i, j)]).sum();
                    if v != 0.0 {
                        out.push((col0 + j, v));
                    }
                }
            }
        }
        Ok(())
    }

    /// Entries contributed by this term at covariate value `x` and factor
    /// level `level` (either may be irrelevant for the kind).
    pub fn entries(&self, x: f64, level: Option<&str>, out: &mut SparseRow) -> Result<(), ContourError> {
        let lvl = || -> Result<usize, ContourError> {
            let l = level.ok_or_else(|| ContourError::Config(format!("{} needs a factor level", self.label)))?;
            self.level_of(l)
        };
        match self.spec.kind {
            TermKind::ParametricFactor => {
                let l = lvl()?;
                if l > 0 {
                    out.push((self.start + l - 1, 1.0));
                }
            }
            TermKind::Smooth => self.basis_row(x, Some(&self.z[0]), self.start, out)?,
            TermKind::ByFactorSmooth => {
                let l = lvl()?;
                self.basis_row(x, Some(&self.z[l]), self.start + l * self.width, out)?;
            }
            TermKind::FactorSmooth => {
                let l = lvl()?;
                self.basis_row(x, None, self.start + l * self.width, out)?;
            }
            TermKind::RandomIntercept => out.push((self.start + lvl()?, 1.0)),
        }
        Ok(())
    }

    /// Entries for a token observed at within-token time `t`.
    pub fn token_entries(&self, token: &TokenRecord, t: f64, out: &mut SparseRow) -> Result<(), ContourError> {
        let x = match self.spec.covariate.as_deref() {
            None => 0.0,
            Some(TIME) => t,
            Some(name) => covariate(token, name)?,
        };
        let level = match self.spec.factor.as_deref() {
            None => None,
            Some(name) => Some(factor(token, name)?),
        };
        self.entries(x, level.as_deref(), out)
    }
}

fn covariate(token: &TokenRecord, name: &str) -> Result<f64, ContourError> {
    token
        .covariate_value(name)
        .ok_or_else(|| ContourError::UnknownField(name.to_string()))
}

fn factor(token: &TokenRecord, name: &str) -> Result<String, ContourError> {
    token
        .factor_value(name)
        .ok_or_else(|| ContourError::UnknownField(name.to_string()))
}

/// Orthonormal basis (k x (k-1)) of the complement of `c`, from a Householder reflection.
pub(crate) fn sum_to_zero_basis(c: &[f64]) -> Option<DMatrix<f64>> {
    let k = c.len();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return None;
    }
    let alpha = if c[0] >= 0.0 { -norm } else { norm };
    let mut v = c.to_vec();
    v[0] -= alpha;
    let vv: f64 = v.iter().map(|x| x * x).sum();
    let h = DMatrix::from_fn(k, k, |i, j| f64::from(i == j) - 2.0 * v[i] * v[j] / vv);
    Some(h.columns(1, k - 1).into_owned())
}

/// Model columns and penalties for a particular set of observations.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub terms: Vec<TermLayout>,
    pub p: usize,
    pub penalties: Vec<Penalty>,
}

impl Design {
    /// Lay out columns for `tokens`, whose samples sit at the within-token
    /// times in `times` (same order).
    pub fn build(spec: &ModelSpec, tokens: &[&TokenRecord], times: &[Vec<f64>]) -> Result<Design, ContourError> {
        let mut terms = Vec::with_capacity(spec.terms.len());
        let mut penalties = Vec::new();
        let mut col = 1; // intercept
        for ts in &spec.terms {
            let label = ts.label();
            let levels: Vec<String> = match ts.factor.as_deref() {
                None => Vec::new(),
                Some(f) => {
                    let mut set = BTreeSet::new();
                    for t in tokens {
                        set.insert(factor(t, f)?);
                    }
                    set.into_iter().collect()
                }
            };
            let level_index: BTreeMap<String, usize> =
                levels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
            let basis = match ts.covariate.as_deref() {
                None => None,
                Some(TIME) => Some(BasisSpec::new(ts.k(), ts.degree(), 0.0, 1.0)?),
                Some(name) => {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for t in tokens {
                        let v = covariate(t, name)?;
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                    if !(hi > lo) {
                        return Err(ContourError::DegenerateCovariate(name.to_string()));
                    }
                    Some(BasisSpec::new(ts.k(), ts.degree(), lo, hi)?)
                }
            };
            let mut layout = TermLayout {
                spec: ts.clone(),
                label: label.clone(),
                start: col,
                ncols: 0,
                levels,
                level_index,
                basis,
                z: Vec::new(),
                width: 0,
                penalty: None,
            };
            let nl = layout.levels.len();
            let k = ts.k();
            match ts.kind {
                TermKind::ParametricFactor => {
                    layout.width = 1;
                    layout.ncols = nl.saturating_sub(1);
                }
                TermKind::Smooth | TermKind::ByFactorSmooth => {
                    // column sums of the raw basis, per level for by-smooths
                    let groups = if ts.kind == TermKind::Smooth { 1 } else { nl };
                    let mut sums = vec![vec![0.0; k]; groups];
                    let raw = TermLayout {
                        z: Vec::new(),
                        ..layout.clone()
                    };
                    let mut buf = Vec::new();
                    for (tok, ts_times) in tokens.iter().zip(times) {
                        let g = match ts.factor.as_deref() {
                            Some(f) if ts.kind == TermKind::ByFactorSmooth => layout.level_of(&factor(tok, f)?)?,
                            _ => 0,
                        };
                        for &t in ts_times {
                            buf.clear();
                            let x = match ts.covariate.as_deref() {
                                Some(TIME) => t,
                                Some(name) => covariate(tok, name)?,
                                None => unreachable!(),
                            };
                            raw.basis_row(x, None, 0, &mut buf)?;
                            for &(c, v) in &buf {
                                sums[g][c] += v;
                            }
                        }
                    }
                    let pen = smooth_penalty(layout.basis.as_ref().unwrap(), ts.order());
                    let mut blocks = Vec::with_capacity(groups);
                    for (g, s) in sums.iter().enumerate() {
                        let z = sum_to_zero_basis(s).ok_or_else(|| {
                            ContourError::DegenerateCovariate(format!("{label} has a level without observations"))
                        })?;
                        blocks.push(PenaltyBlock {
                            start: col + g * (k - 1),
                            matrix: z.transpose() * &pen * &z,
                        });
                        layout.z.push(z);
                    }
                    layout.width = k - 1;
                    layout.ncols = groups * (k - 1);
                    layout.penalty = Some(penalties.len());
                    penalties.push(Penalty { blocks });
                }
                TermKind::FactorSmooth => {
                    let m = difference_penalty(k, ts.order()) + DMatrix::identity(k, k) * ts.ridge();
                    layout.width = k;
                    layout.ncols = nl * k;
                    layout.penalty = Some(penalties.len());
                    penalties.push(Penalty {
                        blocks: (0..nl)
                            .map(|l| PenaltyBlock {
                                start: col + l * k,
                                matrix: m.clone(),
                            })
                            .collect(),
                    });
                }
                TermKind::RandomIntercept => {
                    layout.width = 1;
                    layout.ncols = nl;
                    layout.penalty = Some(penalties.len());
                    penalties.push(Penalty {
                        blocks: (0..nl)
                            .map(|l| PenaltyBlock {
                                start: col + l,
                                matrix: DMatrix::identity(1, 1),
                            })
                            .collect(),
                    });
                }
            }
            col += layout.ncols;
            terms.push(layout);
        }
        Ok(Design {
            terms,
            p: col,
            penalties,
        })
    }

    /// Unwhitened row for `token` at within-token time `t` (intercept first).
    pub fn row(&self, token: &TokenRecord, t: f64, out: &mut SparseRow) -> Result<(), ContourError> {
        out.clear();
        out.push((0, 1.0));
        for term in &self.terms {
            term.token_entries(token, t, out)?;
        }
        Ok(())
    }

    /// Per-level column ranges of the factor-type term with most columns;
    /// these are eliminated blockwise by the solver.
    pub fn separable_ranges(&self) -> Vec<std::ops::Range<usize>> {
        self.terms
            .iter()
            .filter(|t| {
                matches!(
                    t.spec.kind,
                    TermKind::FactorSmooth | TermKind::RandomIntercept | TermKind::ByFactorSmooth
                ) && t.levels.len() > 1
            })
            .max_by_key(|t| (t.ncols, std::cmp::Reverse(t.start)))
            .map(|t| (0..t.levels.len()).map(|l| t.level_columns(l)).collect())
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn householder_complement_is_orthonormal_and_orthogonal() {
        let c = [3.0, 1.0, 0.5, 2.0];
        let z = sum_to_zero_basis(&c).unwrap();
        assert_eq!(z.shape(), (4, 3));
        let ztz = z.transpose() * &z;
        assert!((ztz - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        let cz = DMatrix::from_row_slice(1, 4, &c) * &z;
        assert!(cz.abs().max() < 1e-12);
        assert!(sum_to_zero_basis(&[0.0, 0.0]).is_none());
    }
}
