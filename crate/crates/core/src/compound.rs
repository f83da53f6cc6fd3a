//! Multiplicative and additive compound matrices.
//!
//! Rows and columns of a k-th compound are indexed by the k-subsets of the
//! underlying index set in lexicographic order; this is the only ordering
//! used anywhere in the crate.

use thiserror::Error;

use crate::matrix::Matrix;

/// Largest ambient dimension accepted by the compound routines.
pub const MAX_DIM: usize = 20;
/// Largest number of k-subsets (compound side length) accepted.
pub const MAX_COMBINATIONS: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompoundError {
    #[error("order k={k} out of range for dimension {n}")]
    OrderOutOfRange { k: usize, n: usize },
    #[error("compound too large: n={n}, k={k} gives C(n,k)={count} (limits: n<={MAX_DIM}, C(n,k)<={MAX_COMBINATIONS})")]
    TooLarge { n: usize, k: usize, count: u128 },
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular (|det|={det:e})")]
    Singular { det: f64 },
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

fn check_order(n: usize, k: usize) -> Result<usize, CompoundError> {
    if k == 0 || k > n {
        return Err(CompoundError::OrderOutOfRange { k, n });
    }
    let count = binomial(n, k);
    if n > MAX_DIM || count > MAX_COMBINATIONS as u128 {
        return Err(CompoundError::TooLarge { n, k, count });
    }
    Ok(count as usize)
}

/// All k-subsets of `0..n`, strictly increasing, in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CombinationIndex {
    n: usize,
    k: usize,
    combos: Vec<Vec<usize>>,
}

impl CombinationIndex {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.combos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combos.is_empty()
    }

    /// Zero-based tuples.
    pub fn combos(&self) -> &[Vec<usize>] {
        &self.combos
    }

    /// Tuples over `1..=n`, the conventional mathematical labelling.
    pub fn one_based(&self) -> Vec<Vec<usize>> {
        self.combos
            .iter()
            .map(|c| c.iter().map(|i| i + 1).collect())
            .collect()
    }

    /// Lexicographic rank of a strictly increasing zero-based tuple.
    pub fn rank(&self, combo: &[usize]) -> usize {
        lex_rank(self.n, combo)
    }
}

fn lex_rank(n: usize, combo: &[usize]) -> usize {
    let k = combo.len();
    let total = binomial(n, k) as usize;
    let tail: usize = combo
        .iter()
        .enumerate()
        .map(|(i, &c)| binomial(n - 1 - c, k - i) as usize)
        .sum();
    total - 1 - tail
}

pub fn lex_combinations(n: usize, k: usize) -> Result<CombinationIndex, CompoundError> {
    let count = check_order(n, k)?;
    let mut combos = Vec::with_capacity(count);
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        combos.push(c.clone());
        // rightmost position that can still be incremented
        let Some(i) = (0..k).rev().find(|&i| c[i] < n - k + i) else {
            break;
        };
        c[i] += 1;
        for j in i + 1..k {
            c[j] = c[j - 1] + 1;
        }
    }
    debug_assert_eq!(combos.len(), count);
    Ok(CombinationIndex { n, k, combos })
}

/// Determinant of a small square matrix: cofactor expansion up to 3x3,
/// LU with partial pivoting beyond.
#[allow(clippy::needless_range_loop)]
pub fn determinant(m: &Matrix) -> f64 {
    assert!(m.is_square(), "determinant of a non-square matrix");
    match m.rows() {
        0 => 1.0,
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        3 => {
            m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
                - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
                + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
        }
        n => {
            let mut a = m.to_rows();
            let mut det = 1.0;
            for col in 0..n {
                let pivot = (col..n)
                    .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                    .expect("non-empty pivot range");
                if a[pivot][col] == 0.0 {
                    return 0.0;
                }
                if pivot != col {
                    a.swap(pivot, col);
                    det = -det;
                }
                let p = a[col][col];
                det *= p;
                for r in col + 1..n {
                    let factor = a[r][col] / p;
                    if factor != 0.0 {
                        for c in col..n {
                            a[r][c] -= factor * a[col][c];
                        }
                    }
                }
            }
            det
        }
    }
}

/// k-th multiplicative compound: the matrix of all k x k minors.
pub fn mult_compound(a: &Matrix, k: usize) -> Result<Matrix, CompoundError> {
    let (n, m) = a.shape();
    let rows = lex_combinations(n, k)?;
    let cols = lex_combinations(m, k)?;
    let mut out = Matrix::zeros(rows.len(), cols.len());
    for (i, alpha) in rows.combos().iter().enumerate() {
        for (j, beta) in cols.combos().iter().enumerate() {
            out[(i, j)] = determinant(&a.select(alpha, beta));
        }
    }
    Ok(out)
}

/// k-th additive compound, built entrywise.
///
/// The diagonal entry for a subset α is the sum of `a_ii` over `i ∈ α`. An
/// off-diagonal entry (α, β) is nonzero only when β is α with a single index
/// `i` (at position p of α) replaced by `j` (at position q of β); it equals
/// `(-1)^(p+q) a_ij`.
pub fn add_compound(a: &Matrix, k: usize) -> Result<Matrix, CompoundError> {
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(CompoundError::NotSquare { rows, cols });
    }
    let n = rows;
    let index = lex_combinations(n, k)?;
    let mut out = Matrix::zeros(index.len(), index.len());
    let mut member = vec![false; n];
    let mut beta = Vec::with_capacity(k);
    for (r, alpha) in index.combos().iter().enumerate() {
        member.iter_mut().for_each(|m| *m = false);
        for &i in alpha {
            member[i] = true;
        }
        out[(r, r)] = alpha.iter().map(|&i| a[(i, i)]).sum();
        for (p, &i) in alpha.iter().enumerate() {
            for j in (0..n).filter(|&j| !member[j]) {
                let v = a[(i, j)];
                if v == 0.0 {
                    continue;
                }
                beta.clear();
                beta.extend(alpha.iter().copied().filter(|&t| t != i));
                let q = beta.partition_point(|&t| t < j);
                beta.insert(q, j);
                let c = index.rank(&beta);
                out[(r, c)] = if (p + q) % 2 == 0 { v } else { -v };
            }
        }
    }
    Ok(out)
}

/// Volume of the parallelotope spanned by `vectors` (k vectors in R^n):
/// the Euclidean norm of the k-th compound of the n x k matrix they form.
pub fn parallelotope_volume<V: AsRef<[f64]>>(vectors: &[V]) -> Result<f64, CompoundError> {
    let k = vectors.len();
    let n = vectors.first().map_or(0, |v| v.as_ref().len());
    check_order(n, k)?;
    let v = Matrix::from_columns(vectors).map_err(|_| CompoundError::OrderOutOfRange { k, n })?;
    Ok(mult_compound(&v, k)?.frobenius_norm())
}

/// `T^(k) A^[k] (T^(k))^-1`, the additive compound of `T A T^-1`.
pub fn compound_similarity(t: &Matrix, a: &Matrix, k: usize) -> Result<Matrix, CompoundError> {
    let (rows, cols) = t.shape();
    if rows != cols {
        return Err(CompoundError::NotSquare { rows, cols });
    }
    let det = determinant(t);
    // Hadamard bound normalizes the singularity test
    let scale: f64 = (0..rows)
        .map(|i| t.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .product();
    if !(det.abs() > 1e-12 * scale) {
        return Err(CompoundError::Singular { det });
    }
    let tk = mult_compound(t, k)?;
    let tk_inv = tk.inverse().ok_or(CompoundError::Singular { det })?;
    let ak = add_compound(a, k)?;
    Ok(&(&tk * &ak) * &tk_inv)
}
