//! Reference implementations used as test oracles. They are deliberately
//! naive and share no code with the library.
#![allow(dead_code)]

use kcontract::rng::Rng;
use kcontract::Matrix;

pub fn rand_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform_in(-scale, scale))
}

pub fn rand_symmetric(rng: &mut Rng, n: usize, scale: f64) -> Matrix {
    let a = rand_matrix(rng, n, n, scale);
    Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.rows());
    Matrix::from_fn(a.rows(), b.cols(), |i, j| {
        (0..a.cols()).map(|l| a[(i, l)] * b[(l, j)]).sum()
    })
}

pub fn fro(a: &Matrix) -> f64 {
    a.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn fro_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Leibniz determinant over all permutations (n ≤ 7).
pub fn det_leibniz(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    if n == 0 {
        return 1.0;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    permute(&mut perm, 0, rows, &mut total);
    total
}

fn permute(perm: &mut Vec<usize>, i: usize, rows: &[Vec<f64>], total: &mut f64) {
    let n = perm.len();
    if i == n {
        let mut inversions = 0;
        for a in 0..n {
            for b in a + 1..n {
                if perm[a] > perm[b] {
                    inversions += 1;
                }
            }
        }
        let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
        *total += sign * (0..n).map(|r| rows[r][perm[r]]).product::<f64>();
        return;
    }
    for j in i..n {
        perm.swap(i, j);
        permute(perm, i + 1, rows, total);
        perm.swap(i, j);
    }
}

/// k-subsets of 0..n in lexicographic order, via bitmasks sorted by their
/// element lists.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (0u32..(1 << n))
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect();
    out.sort();
    out
}

/// Multiplicative compound by brute-force minor enumeration.
pub fn compound_oracle(a: &Matrix, k: usize) -> Matrix {
    let rs = subsets(a.rows(), k);
    let cs = subsets(a.cols(), k);
    Matrix::from_fn(rs.len(), cs.len(), |i, j| {
        let sub: Vec<Vec<f64>> = rs[i]
            .iter()
            .map(|&r| cs[j].iter().map(|&c| a[(r, c)]).collect())
            .collect();
        det_leibniz(&sub)
    })
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigs(s: &Matrix) -> Vec<f64> {
    let n = s.rows();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (s[(i, j)] + s[(j, i)])).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s_ = t * c;
                for r in 0..n {
                    let (arp, arq) = (a[r][p], a[r][q]);
                    a[r][p] = c * arp - s_ * arq;
                    a[r][q] = s_ * arp + c * arq;
                }
                for r in 0..n {
                    let (apr, aqr) = (a[p][r], a[q][r]);
                    a[p][r] = c * apr - s_ * aqr;
                    a[q][r] = s_ * apr + c * aqr;
                }
            }
        }
    }
    let mut e: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    e.sort_by(|x, y| y.total_cmp(x));
    e
}

/// Singular values, descending, from Jacobi on the Gram matrix.
pub fn singular_oracle(a: &Matrix) -> Vec<f64> {
    let g = if a.cols() <= a.rows() {
        matmul(&a.transpose(), a)
    } else {
        matmul(a, &a.transpose())
    };
    jacobi_eigs(&g)
        .into_iter()
        .map(|v| v.max(0.0).sqrt())
        .collect()
}

/// exp(A) by scaling and squaring with a 20-term Taylor series.
pub fn expm(a: &Matrix) -> Matrix {
    let n = a.rows();
    let norm = fro(a);
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a.scale(0.5f64.powi(s));
    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for i in 1..=20 {
        term = matmul(&term, &scaled).scale(1.0 / i as f64);
        result = &result + &term;
    }
    for _ in 0..s {
        result = matmul(&result, &result);
    }
    result
}

/// Stable matrix: random entries shifted so every Gershgorin disc lies in
/// the open left half-plane.
pub fn rand_stable(rng: &mut Rng, n: usize) -> Matrix {
    let a = rand_matrix(rng, n, n, 1.0);
    let shift: f64 = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| a[(i, j)].abs())
                .sum::<f64>()
                + a[(i, i)]
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let margin = 0.2 + rng.uniform();
    &a - &Matrix::identity(n).scale(shift + margin)
}

/// Central differences of a vector function, step h.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Matrix {
    let m = f(x).len();
    let n = x.len();
    let mut out = Matrix::zeros(m, n);
    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (f(&xp), f(&xm));
        for i in 0..m {
            out[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    out
}

pub fn orthogonal(rng: &mut Rng, n: usize) -> Matrix {
    let q = rand_matrix(rng, n, n, 1.0).to_nalgebra().qr().q();
    Matrix::from_nalgebra(&q)
}

/// Sum of the k largest eigenvalues by the Jacobi oracle.
pub fn top_k(s: &Matrix, k: usize) -> f64 {
    jacobi_eigs(s)[..k].iter().sum()
}

/// Random LTI Lurie data `ẋ = Ax + Bu, y = Cx, u = -Φ(y)` with
/// `Φ_i(y) = a_i tanh(y_i)`, `a_i ∈ (0, 1]`, and an SPD metric near I.
pub struct LtiInstance {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub gains: Vec<f64>,
    pub phi: Vec<String>,
    pub p: Matrix,
    pub k: usize,
}

impl LtiInstance {
    pub fn random(rng: &mut Rng, n: usize) -> Self {
        let m = 1 + (rng.next_u64() % n as u64) as usize;
        let a = rand_stable(rng, n);
        let b = rand_matrix(rng, n, m, 0.4);
        let c = rand_matrix(rng, m, n, 0.4);
        let gains: Vec<f64> = (0..m).map(|_| rng.uniform_in(0.1, 1.0)).collect();
        let phi = gains
            .iter()
            .enumerate()
            .map(|(i, g)| format!("{g}*tanh(y{})", i + 1))
            .collect();
        let e = rand_symmetric(rng, n, 0.3 / n as f64);
        let p = &Matrix::identity(n) + &e;
        let k = 1 + (rng.next_u64() % n as u64) as usize;
        Self {
            a,
            b,
            c,
            gains,
            phi,
            p,
            k,
        }
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    /// Closed-loop Jacobian `A - B diag(a_i sech²(y_i)) C` at x.
    pub fn closed_loop_jacobian(&self, x: &[f64]) -> Matrix {
        let y = self.c.mul_vec(x);
        let d: Vec<f64> = y
            .iter()
            .zip(&self.gains)
            .map(|(yi, g)| g / yi.cosh().powi(2))
            .collect();
        let bdc = matmul(&matmul(&self.b, &Matrix::from_diag(&d)), &self.c);
        &self.a - &bdc
    }

    /// `H = J̃ + J̃ᵀ + Θ B Bᵀ Θ + Θ^-1 Cᵀ C Θ^-1` for `Θ = P^{1/2}`.
    pub fn h(&self, theta: &Matrix) -> Matrix {
        let ti = theta.inverse().unwrap();
        let jt = matmul(&matmul(theta, &self.a), &ti);
        let bt = matmul(theta, &self.b);
        let ct = matmul(&self.c, &ti);
        let s = &(&jt + &jt.transpose()) + &matmul(&bt, &bt.transpose());
        &s + &matmul(&ct.transpose(), &ct)
    }
}

/// `Σ_{i≤k} λ_i(ΘJΘ^-1 + (ΘJΘ^-1)ᵀ)`.
pub fn riemannian_top_k(j: &Matrix, theta: &Matrix, k: usize) -> f64 {
    let jt = matmul(&matmul(theta, j), &theta.inverse().unwrap());
    top_k(&(&jt + &jt.transpose()), k)
}

/// `ratios[i] = ‖(I+εA)^(k) - I - εA^[k]‖_F / ε²` for ε = 1e-3, 1e-4, 1e-5.
/// A quadratic remainder keeps the ratios under an ε-independent constant
/// (every entry is a polynomial in ε with coefficients bounded by
/// C(n,k)·(k‖A‖)²) and makes them settle as ε shrinks.
pub fn quadratic_remainder(ratios: &[f64], a: &Matrix, k: usize) -> bool {
    let n = a.rows();
    let combos = subsets(n, k).len() as f64;
    let cap = combos * (k as f64 * fro(a)).powi(2) + 1e-3;
    let settled = (ratios[1] - ratios[2]).abs() <= 0.05 * ratios[2] + 1e-3;
    ratios.iter().all(|r| r.is_finite() && *r <= cap) && settled
}
