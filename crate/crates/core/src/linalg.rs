//! Symmetric block-tridiagonal matrices and their block Cholesky factorization.
//!
//! A matrix with `N` diagonal blocks of size `n × n` is stored as its
//! diagonal blocks `D_t` and its subdiagonal blocks `S_t = (t+1, t)`. The
//! superdiagonal is implied by symmetry. Factorization and solves cost
//! `O(N n³)` and `O(N n²)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest-to-largest pivot ratio below which a factorization is reported
/// as poorly conditioned.
pub const PIVOT_WARN_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockTridiagonal {
    diag: Vec<DMatrix<f64>>,
    sub: Vec<DMatrix<f64>>,
}

impl BlockTridiagonal {
    /// `sub[t]` is the block at block-row `t + 1`, block-column `t`.
    pub fn new(diag: Vec<DMatrix<f64>>, sub: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = match diag.first() {
            Some(d) => d.nrows(),
            None => return Err(Error::invalid("block matrix needs at least one block")),
        };
        if sub.len() + 1 != diag.len() {
            return Err(Error::DimensionMismatch {
                context: "number of subdiagonal blocks",
                expected: diag.len() - 1,
                found: sub.len(),
            });
        }
        for b in diag.iter().chain(sub.iter()) {
            if b.nrows() != n || b.ncols() != n {
                return Err(Error::DimensionMismatch {
                    context: "block size",
                    expected: n,
                    found: b.nrows().max(b.ncols()),
                });
            }
        }
        Ok(Self { diag, sub })
    }

    pub fn block_size(&self) -> usize {
        self.diag[0].nrows()
    }

    pub fn num_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn dim(&self) -> usize {
        self.block_size() * self.num_blocks()
    }

    pub fn diag_block(&self, t: usize) -> &DMatrix<f64> {
        &self.diag[t]
    }

    /// Block `(t + 1, t)`.
    pub fn sub_block(&self, t: usize) -> &DMatrix<f64> {
        &self.sub[t]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.block_size();
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for (t, d) in self.diag.iter().enumerate() {
            out.view_mut((t * n, t * n), (n, n)).copy_from(d);
        }
        for (t, s) in self.sub.iter().enumerate() {
            out.view_mut(((t + 1) * n, t * n), (n, n)).copy_from(s);
            out.view_mut((t * n, (t + 1) * n), (n, n))
                .copy_from(&s.transpose());
        }
        out
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.block_size();
        assert_eq!(
            x.len(),
            self.dim(),
            "vector length must match matrix dimension"
        );
        let mut out = DVector::zeros(self.dim());
        for t in 0..self.num_blocks() {
            let mut acc = &self.diag[t] * x.rows(t * n, n);
            if t > 0 {
                acc += &self.sub[t - 1] * x.rows((t - 1) * n, n);
            }
            if t + 1 < self.num_blocks() {
                acc += self.sub[t].tr_mul(&x.rows((t + 1) * n, n));
            }
            out.rows_mut(t * n, n).copy_from(&acc);
        }
        out
    }

    /// Block Cholesky `L Lᵀ` with `L` block lower bidiagonal.
    ///
    /// Fails with [`Error::NotObservableOrIllConditioned`] carrying the
    /// 0-based block where a pivot was not safely positive.
    pub fn cholesky(&self) -> Result<BlockCholesky> {
        let n = self.block_size();
        let scale = self
            .diag
            .iter()
            .flat_map(|d| (0..n).map(move |i| d[(i, i)].abs()))
            .fold(0.0, f64::max);
        let floor = self.dim() as f64 * f64::EPSILON * scale;

        let blocks = self.num_blocks();
        let mut l_diag = Vec::with_capacity(blocks);
        let mut l_sub = Vec::with_capacity(blocks.saturating_sub(1));
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot: f64 = 0.0;

        let mut schur = self.diag[0].clone();
        for t in 0..blocks {
            let (l, pivots) = dense_cholesky(&schur, floor)
                .ok_or(Error::NotObservableOrIllConditioned { block: t })?;
            for p in pivots {
                min_pivot = min_pivot.min(p);
                max_pivot = max_pivot.max(p);
            }
            if t + 1 < blocks {
                // M_t = S_t L_t⁻ᵀ  ⇔  L_t M_tᵀ = S_tᵀ
                let mut mt = self.sub[t].transpose();
                l.solve_lower_triangular_mut(&mut mt);
                let m = mt.transpose();
                schur = &self.diag[t + 1] - &m * &mt;
                l_sub.push(m);
            }
            l_diag.push(l);
        }

        let factor = BlockCholesky {
            diag: l_diag,
            sub: l_sub,
            min_pivot,
            max_pivot,
        };
        if factor.pivot_ratio() < PIVOT_WARN_RATIO {
            log::warn!(
                "block Cholesky pivot ratio {:e} is below {:e}; the estimate may be inaccurate",
                factor.pivot_ratio(),
                PIVOT_WARN_RATIO
            );
        }
        Ok(factor)
    }
}

/// Dense Cholesky returning the factor and its pivots (squared diagonal).
fn dense_cholesky(a: &DMatrix<f64>, floor: f64) -> Option<(DMatrix<f64>, Vec<f64>)> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    let mut pivots = Vec::with_capacity(n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= floor {
            return None;
        }
        pivots.push(d);
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some((l, pivots))
}

/// Factor of a [`BlockTridiagonal`] matrix. Immutable and shareable.
#[derive(Debug, Clone)]
pub struct BlockCholesky {
    diag: Vec<DMatrix<f64>>,
    sub: Vec<DMatrix<f64>>,
    min_pivot: f64,
    max_pivot: f64,
}

impl BlockCholesky {
    pub fn block_size(&self) -> usize {
        self.diag[0].nrows()
    }

    pub fn num_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn dim(&self) -> usize {
        self.block_size() * self.num_blocks()
    }

    /// Smallest over largest Cholesky pivot.
    pub fn pivot_ratio(&self) -> f64 {
        self.min_pivot / self.max_pivot
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut DVector<f64>) {
        assert_eq!(x.len(), self.dim(), "right-hand side length must match");
        let n = self.block_size();
        let blocks = self.num_blocks();

        // L z = b
        for t in 0..blocks {
            if t > 0 {
                let prev = x.rows((t - 1) * n, n).clone_owned();
                let upd = &self.sub[t - 1] * prev;
                let mut cur = x.rows_mut(t * n, n);
                cur -= upd;
            }
            let mut cur = x.rows(t * n, n).clone_owned();
            self.diag[t].solve_lower_triangular_mut(&mut cur);
            x.rows_mut(t * n, n).copy_from(&cur);
        }
        // Lᵀ x = z
        for t in (0..blocks).rev() {
            if t + 1 < blocks {
                let next = x.rows((t + 1) * n, n).clone_owned();
                let upd = self.sub[t].tr_mul(&next);
                let mut cur = x.rows_mut(t * n, n);
                cur -= upd;
            }
            let mut cur = x.rows(t * n, n).clone_owned();
            self.diag[t].tr_solve_lower_triangular_mut(&mut cur);
            x.rows_mut(t * n, n).copy_from(&cur);
        }
    }

    /// Solve for every column of `b`.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col = self.solve(&b.column(j).clone_owned());
            out.set_column(j, &col);
        }
        out
    }
}
