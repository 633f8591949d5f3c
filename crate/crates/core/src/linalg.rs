//! Dense row-major matrices and the handful of factorizations the solvers need.

use serde::{Deserialize, Serialize};

use crate::error::{LrqrError, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LrqrError::ShapeMismatch {
                context: "matrix buffer",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds a matrix from equal-length rows. An empty slice yields a 0x0 matrix.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(LrqrError::ShapeMismatch {
                    context: "matrix row",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Single-column matrix.
    pub fn column(values: &[T]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn column_values(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.cols);
        self.iter_rows().map(|r| dot(r, v)).collect()
    }

    /// Column means.
    pub fn column_means(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for r in self.iter_rows() {
            for (o, &x) in out.iter_mut().zip(r) {
                *o += x;
            }
        }
        let n = T::count(self.rows.max(1));
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    /// Mean outer product of the rows, `(1/n) Σ rᵢ rᵢᵀ`.
    pub fn second_moment(&self) -> Matrix<T> {
        let d = self.cols;
        let mut m = Matrix::zeros(d, d);
        for r in self.iter_rows() {
            for a in 0..d {
                if r[a] == T::zero() {
                    continue;
                }
                for b in a..d {
                    m.data[a * d + b] += r[a] * r[b];
                }
            }
        }
        let n = T::count(self.rows.max(1));
        for a in 0..d {
            for b in a..d {
                let v = m.data[a * d + b] / n;
                m.data[a * d + b] = v;
                m.data[b * d + a] = v;
            }
        }
        m
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `y += a * x`
#[inline]
pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    n: usize,
    l: Vec<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn factor(a: &Matrix<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LrqrError::ShapeMismatch {
                context: "cholesky (square matrix)",
                expected: n,
                got: a.ncols(),
            });
        }
        let mut l = vec![T::zero(); n * n];
        let scale = (0..n)
            .map(|i| a[(i, i)].abs())
            .fold(T::zero(), T::max)
            .max(T::min_positive_value());
        for j in 0..n {
            let mut diag = a[(j, j)];
            for k in 0..j {
                diag -= l[j * n + k] * l[j * n + k];
            }
            if !(diag > scale * T::epsilon() * T::count(n)) {
                return Err(LrqrError::Singular(format!(
                    "pivot {j} is {diag} (matrix not positive definite)"
                )));
            }
            let djj = diag.sqrt();
            l[j * n + j] = djj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Self { n, l })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }
}

/// Solves the square system `a x = b` by Gaussian elimination with partial pivoting.
pub fn lu_solve<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(LrqrError::ShapeMismatch {
            context: "linear system",
            expected: n,
            got: if a.ncols() != n { a.ncols() } else { b.len() },
        });
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = m.as_slice().iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tiny = scale * T::epsilon() * T::count(n.max(1)) * T::lit(8.0);
    for col in 0..n {
        let (piv, pval) = (col..n)
            .map(|r| (r, m[(r, col)].abs()))
            .fold((col, T::zero()), |acc, c| if c.1 > acc.1 { c } else { acc });
        if !(pval > tiny) {
            return Err(LrqrError::Singular(format!("no usable pivot in column {col}")));
        }
        if piv != col {
            for k in 0..n {
                let tmp = m[(col, k)];
                m[(col, k)] = m[(piv, k)];
                m[(piv, k)] = tmp;
            }
            x.swap(col, piv);
        }
        let d = m[(col, col)];
        for r in col + 1..n {
            let f = m[(r, col)] / d;
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                let v = m[(col, k)];
                m[(r, k)] -= f * v;
            }
            let xc = x[col];
            x[r] -= f * xc;
        }
    }
    for r in (0..n).rev() {
        let mut s = x[r];
        for k in r + 1..n {
            s -= m[(r, k)] * x[k];
        }
        x[r] = s / m[(r, r)];
    }
    Ok(x)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues<T: Scalar>(a: &Matrix<T>) -> Vec<T> {
    let n = a.nrows();
    let mut m = a.clone();
    let tol = T::epsilon() * T::lit(10.0);
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..n {
            for j in 0..n {
                let v = m[(i, j)] * m[(i, j)];
                total += v;
                if i != j {
                    off += v;
                }
            }
        }
        if off <= tol * tol * total.max(T::min_positive_value()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<T> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = Matrix::<f64>::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let x = Cholesky::factor(&a).unwrap().solve(&[2.0, 1.0]);
        // 4x + 2y = 2, 2x + 3y = 1  =>  x = 0.5, y = 0
        assert!((x[0] - 0.5).abs() < 1e-15);
        assert!(x[1].abs() < 1e-15);
    }

    #[test]
    fn cholesky_rejects_singular() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            Cholesky::factor(&a),
            Err(LrqrError::Singular(_))
        ));
    }

    #[test]
    fn lu_solves_general_system() {
        // needs a row swap: [[0,1],[2,1]] x = [1,3] -> x = (1, 1)
        let a = Matrix::<f64>::from_rows(&[vec![0.0, 1.0], vec![2.0, 1.0]]).unwrap();
        let x = lu_solve(&a, &[1.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
        let s = Matrix::<f64>::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(lu_solve(&s, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn jacobi_eigenvalues_of_known_matrix() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let a = Matrix::<f64>::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let ev = symmetric_eigenvalues(&a);
        assert!((ev[0] - 1.0).abs() < 1e-12);
        assert!((ev[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn second_moment_matches_hand_value() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.0]]).unwrap();
        let s = m.second_moment();
        assert_eq!(s[(0, 0)], 5.0);
        assert_eq!(s[(0, 1)], 1.0);
        assert_eq!(s[(1, 0)], 1.0);
        assert_eq!(s[(1, 1)], 2.0);
    }

    #[test]
    fn ragged_rows_rejected() {
        let r = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]);
        assert!(r.is_err());
    }
}
