//! Solver for penalized normal equations `(F + sum_j lambda_j P_j) beta = b`.
//!
//! Columns may be split into *separable* ranges: groups of columns that never
//! interact with one another in `F` or in any penalty (for example the level
//! blocks of a factor smooth, where each observation touches exactly one
//! level). Those blocks are eliminated one at a time and only the Schur
//! complement on the remaining columns is factored densely, which keeps models
//! with hundreds of factor levels cheap to refit across a smoothing-parameter
//! grid. With no separable ranges this is a plain Cholesky solve.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::SplineError;

/// Relative pivot tolerance below which the system is treated as rank deficient.
pub const SINGULAR_TOL: f64 = 1e-10;

/// A penalty matrix acting on the coefficients `start..start + matrix.nrows()`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyBlock {
    pub start: usize,
    pub matrix: DMatrix<f64>,
}

/// One or more penalty blocks sharing a single smoothing parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    pub blocks: Vec<PenaltyBlock>,
}

impl Penalty {
    pub fn single(start: usize, matrix: DMatrix<f64>) -> Self {
        Self {
            blocks: vec![PenaltyBlock { start, matrix }],
        }
    }

    /// Quadratic form `beta' P beta`.
    pub fn quadratic(&self, beta: &DVector<f64>) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let m = b.matrix.nrows();
                let sub = beta.rows(b.start, m);
                (sub.transpose() * &b.matrix * sub)[(0, 0)]
            })
            .sum()
    }
}

/// Lower Cholesky factor. Fails with the offending column when a pivot drops
/// below `tol` times the reference diagonal entry.
pub fn cholesky(a: &DMatrix<f64>, reference: &[f64], tol: f64) -> Result<DMatrix<f64>, usize> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        let scale = reference[j].abs().max(f64::MIN_POSITIVE);
        if !(d > tol * scale) {
            return Err(j);
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solve `L L' x = b` in place.
pub fn cholesky_solve_in_place(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[(k, i)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// `(L L')^{-1}` from a lower Cholesky factor.
pub fn cholesky_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    // invert the triangular factor column by column
    let mut linv = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        linv[(j, j)] = 1.0 / l[(j, j)];
        for i in j + 1..n {
            let mut s = 0.0;
            for k in j..i {
                s -= l[(i, k)] * linv[(k, j)];
            }
            linv[(i, j)] = s / l[(i, i)];
        }
    }
    linv.tr_mul(&linv)
}

#[derive(Debug, Clone)]
enum Placement {
    /// Inside separable range `level`, starting at `offset` within it.
    Separable { level: usize, offset: usize },
    /// Positions of the block's columns among the non-separable columns.
    Rest(Vec<usize>),
}

/// Normal equations with fixed Gram matrix and right-hand side, ready to be
/// solved for any vector of smoothing parameters.
#[derive(Debug, Clone)]
pub struct PenalizedSystem {
    p: usize,
    separable: Vec<Range<usize>>,
    rest: Vec<usize>,
    d_blocks: Vec<DMatrix<f64>>,
    /// Coupling of each separable block with the shared columns it touches:
    /// `b_blocks[l]` is `len(l) x support[l].len()`.
    b_blocks: Vec<DMatrix<f64>>,
    support: Vec<Vec<usize>>,
    e: DMatrix<f64>,
    rhs: DVector<f64>,
    penalties: Vec<Penalty>,
    placements: Vec<Vec<Placement>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSolution {
    pub beta: DVector<f64>,
    /// Trace of the influence matrix, `p - sum_j lambda_j tr(A^{-1} P_j)`.
    pub edf: f64,
    /// `lambda_j tr(A^{-1} P_j)` for each penalty.
    pub penalty_traces: Vec<f64>,
}

impl PenalizedSystem {
    pub fn new(
        gram: DMatrix<f64>,
        rhs: DVector<f64>,
        penalties: Vec<Penalty>,
        separable: Vec<Range<usize>>,
    ) -> Result<Self, SplineError> {
        let p = gram.nrows();
        if gram.ncols() != p || rhs.len() != p {
            return Err(SplineError::Dimension(format!(
                "gram {}x{} with rhs of length {}",
                gram.nrows(),
                gram.ncols(),
                rhs.len()
            )));
        }
        let mut owner: Vec<Option<usize>> = vec![None; p];
        for (l, r) in separable.iter().enumerate() {
            if r.end > p || r.is_empty() {
                return Err(SplineError::Dimension(format!("bad separable range {r:?}")));
            }
            for c in r.clone() {
                if owner[c].is_some() {
                    return Err(SplineError::Dimension(format!("overlapping separable range {r:?}")));
                }
                owner[c] = Some(l);
            }
        }
        for i in 0..p {
            for j in 0..p {
                if let (Some(a), Some(b)) = (owner[i], owner[j]) {
                    if a != b && gram[(i, j)] != 0.0 {
                        return Err(SplineError::Dimension(format!(
                            "columns {i} and {j} couple two separable blocks"
                        )));
                    }
                }
            }
        }
        let rest: Vec<usize> = (0..p).filter(|c| owner[*c].is_none()).collect();
        let mut pos_in_rest = vec![usize::MAX; p];
        for (i, &c) in rest.iter().enumerate() {
            pos_in_rest[c] = i;
        }

        let mut placements = Vec::with_capacity(penalties.len());
        for pen in &penalties {
            let mut pl = Vec::with_capacity(pen.blocks.len());
            for blk in &pen.blocks {
                let m = blk.matrix.nrows();
                if blk.matrix.ncols() != m || blk.start + m > p {
                    return Err(SplineError::Dimension(format!(
                        "penalty block at {} of size {}x{} exceeds {p} coefficients",
                        blk.start,
                        m,
                        blk.matrix.ncols()
                    )));
                }
                let cols = blk.start..blk.start + m;
                match owner[blk.start] {
                    Some(l) => {
                        if cols.clone().any(|c| owner[c] != Some(l)) {
                            return Err(SplineError::Dimension(
                                "penalty block straddles separable ranges".into(),
                            ));
                        }
                        pl.push(Placement::Separable {
                            level: l,
                            offset: blk.start - separable[l].start,
                        });
                    }
                    None => {
                        if cols.clone().any(|c| owner[c].is_some()) {
                            return Err(SplineError::Dimension(
                                "penalty block straddles separable ranges".into(),
                            ));
                        }
                        pl.push(Placement::Rest(cols.map(|c| pos_in_rest[c]).collect()));
                    }
                }
            }
            placements.push(pl);
        }

        let d_blocks = separable
            .iter()
            .map(|r| gram.view((r.start, r.start), (r.len(), r.len())).into_owned())
            .collect();
        let support: Vec<Vec<usize>> = separable
            .iter()
            .map(|r| {
                (0..rest.len())
                    .filter(|&j| r.clone().any(|i| gram[(i, rest[j])] != 0.0))
                    .collect()
            })
            .collect();
        let b_blocks = separable
            .iter()
            .zip(&support)
            .map(|(r, sup)| DMatrix::from_fn(r.len(), sup.len(), |i, j| gram[(r.start + i, rest[sup[j]])]))
            .collect();
        let e = DMatrix::from_fn(rest.len(), rest.len(), |i, j| gram[(rest[i], rest[j])]);
        Ok(Self {
            p,
            separable,
            rest,
            d_blocks,
            b_blocks,
            support,
            e,
            rhs,
            penalties,
            placements,
        })
    }

    /// Convenience for a dense system without separable structure.
    pub fn dense(gram: DMatrix<f64>, rhs: DVector<f64>, penalties: Vec<Penalty>) -> Result<Self, SplineError> {
        Self::new(gram, rhs, penalties, Vec::new())
    }

    pub fn n_coef(&self) -> usize {
        self.p
    }

    pub fn n_penalties(&self) -> usize {
        self.penalties.len()
    }

    pub fn penalties(&self) -> &[Penalty] {
        &self.penalties
    }

    pub fn solve(&self, lambdas: &[f64]) -> Result<SystemSolution, SplineError> {
        if lambdas.len() != self.penalties.len() {
            return Err(SplineError::Dimension(format!(
                "{} smoothing parameters for {} penalties",
                lambdas.len(),
                self.penalties.len()
            )));
        }
        if let Some(bad) = lambdas.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(SplineError::Dimension(format!("invalid smoothing parameter {bad}")));
        }
        let nr = self.rest.len();

        // penalized copies of the fixed blocks
        let mut d: Vec<DMatrix<f64>> = self.d_blocks.clone();
        let mut e = self.e.clone();
        for (pen, (pl, &lam)) in self
            .penalties
            .iter()
            .zip(self.placements.iter().zip(lambdas))
        {
            if lam == 0.0 {
                continue;
            }
            for (blk, place) in pen.blocks.iter().zip(pl) {
                let m = blk.matrix.nrows();
                match place {
                    Placement::Separable { level, offset } => {
                        let mut view = d[*level].view_mut((*offset, *offset), (m, m));
                        view += &blk.matrix * lam;
                    }
                    Placement::Rest(pos) => {
                        for a in 0..m {
                            for b in 0..m {
                                e[(pos[a], pos[b])] += lam * blk.matrix[(a, b)];
                            }
                        }
                    }
                }
            }
        }
        // Pivots are judged against the unpenalized diagonal so that very large
        // λ does not mask (or fake) rank deficiency.
        let reference = |raw: f64, pen: f64| raw.max(1e-6 * pen);
        let e_diag: Vec<f64> = (0..nr).map(|i| reference(self.e[(i, i)], e[(i, i)])).collect();

        // eliminate separable blocks
        let mut schur = e;
        let mut d_chol = Vec::with_capacity(d.len());
        let mut w_blocks = Vec::with_capacity(d.len());
        let mut u_blocks = Vec::with_capacity(d.len());
        let mut reduced_rhs: Vec<f64> = self.rest.iter().map(|&c| self.rhs[c]).collect();
        for (l, dl) in d.iter().enumerate() {
            let raw = &self.d_blocks[l];
            let ref_diag: Vec<f64> = (0..dl.nrows()).map(|i| reference(raw[(i, i)], dl[(i, i)])).collect();
            let chol = cholesky(dl, &ref_diag, SINGULAR_TOL).map_err(|c| SplineError::SingularSystem {
                column: self.separable[l].start + c,
            })?;
            let bl = &self.b_blocks[l];
            let sup = &self.support[l];
            let mut wl = bl.clone();
            for j in 0..sup.len() {
                let mut col: Vec<f64> = wl.column(j).iter().copied().collect();
                cholesky_solve_in_place(&chol, &mut col);
                wl.column_mut(j).copy_from_slice(&col);
            }
            let r = &self.separable[l];
            let mut ul: Vec<f64> = self.rhs.as_slice()[r.clone()].to_vec();
            cholesky_solve_in_place(&chol, &mut ul);
            if !sup.is_empty() {
                let upd = bl.tr_mul(&wl);
                for (a, &ia) in sup.iter().enumerate() {
                    for (b, &ib) in sup.iter().enumerate() {
                        schur[(ia, ib)] -= upd[(a, b)];
                    }
                }
                let bu = bl.tr_mul(&DVector::from_column_slice(&ul));
                for (a, &ia) in sup.iter().enumerate() {
                    reduced_rhs[ia] -= bu[a];
                }
            }
            d_chol.push(chol);
            w_blocks.push(wl);
            u_blocks.push(ul);
        }

        let s_chol = cholesky(&schur, &e_diag, SINGULAR_TOL).map_err(|c| SplineError::SingularSystem {
            column: self.rest[c],
        })?;
        let mut beta_rest = reduced_rhs;
        cholesky_solve_in_place(&s_chol, &mut beta_rest);
        let s_inv = cholesky_inverse(&s_chol);

        let mut beta = DVector::zeros(self.p);
        for (i, &c) in self.rest.iter().enumerate() {
            beta[c] = beta_rest[i];
        }
        for (l, r) in self.separable.iter().enumerate() {
            let local = DVector::from_iterator(self.support[l].len(), self.support[l].iter().map(|&i| beta_rest[i]));
            let wb = &w_blocks[l] * local;
            for i in 0..r.len() {
                beta[r.start + i] = u_blocks[l][i] - wb[i];
            }
        }

        // tr(A^{-1} P_j) using only the diagonal blocks of A^{-1}
        let d_inv: Vec<DMatrix<f64>> = d_chol.iter().map(cholesky_inverse).collect();
        let mut traces = vec![0.0; self.penalties.len()];
        for (j, (pen, pl)) in self.penalties.iter().zip(&self.placements).enumerate() {
            let lam = lambdas[j];
            if lam == 0.0 {
                continue;
            }
            let mut q = DMatrix::<f64>::zeros(nr, nr);
            let mut any_sep = false;
            let mut tr = 0.0;
            for (blk, place) in pen.blocks.iter().zip(pl) {
                let m = blk.matrix.nrows();
                match place {
                    Placement::Separable { level, offset } => {
                        let dinv = d_inv[*level].view((*offset, *offset), (m, m));
                        tr += (dinv * &blk.matrix).trace();
                        let sup = &self.support[*level];
                        if !sup.is_empty() {
                            let wsub = w_blocks[*level].rows(*offset, m);
                            let mw = &blk.matrix * wsub;
                            let upd = wsub.tr_mul(&mw);
                            for (a, &ia) in sup.iter().enumerate() {
                                for (b, &ib) in sup.iter().enumerate() {
                                    q[(ia, ib)] += upd[(a, b)];
                                }
                            }
                            any_sep = true;
                        }
                    }
                    Placement::Rest(pos) => {
                        for a in 0..m {
                            for b in 0..m {
                                tr += s_inv[(pos[b], pos[a])] * blk.matrix[(a, b)];
                            }
                        }
                    }
                }
            }
            if any_sep {
                tr += s_inv.component_mul(&q).sum();
            }
            traces[j] = lam * tr;
        }
        let edf = self.p as f64 - traces.iter().sum::<f64>();
        Ok(SystemSolution {
            beta,
            edf,
            penalty_traces: traces,
        })
    }
}
