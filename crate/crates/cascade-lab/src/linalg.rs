//! Small dense real matrices and their exponential.
//!
//! The stochastic stepper's mean-field reference needs `exp(t G)` for many
//! independent 3x3 generators, so this stays deliberately tiny: row-major
//! storage, naive products, and the exponential via scaling-and-squaring on
//! a machine-precision Taylor sum. For the handful-of-rows matrices used
//! here that is both simpler and more accurate than a general-purpose
//! decomposition library.

use std::ops::{Index, IndexMut};

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    a: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        assert!(n > 0, "empty matrix");
        Self { n, a: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "matrix must be square");
            m.a[i * n..(i + 1) * n].copy_from_slice(row);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { n: self.n, a: self.a.iter().map(|v| c * v).collect() }
    }

    pub fn add_scaled(&mut self, c: f64, other: &Self) {
        assert_eq!(self.n, other.n);
        for (x, y) in self.a.iter_mut().zip(&other.a) {
            *x += c * y;
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.a[i * n + k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.a[i * n + j] += aik * other.a[k * n + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.a[i * self.n + j] * v[j]).sum())
            .collect()
    }

    /// Maximum absolute column sum (operator 1-norm).
    pub fn one_norm(&self) -> f64 {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self.a[i * self.n + j].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Matrix exponential: scale by `2^-s` until the norm is below 1/2, sum
    /// the Taylor series to machine precision, then square `s` times.
    pub fn expm(&self) -> Self {
        let norm = self.one_norm();
        let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
        let scaled = self.scaled(0.5f64.powi(s as i32));

        let mut result = Matrix::identity(self.n);
        let mut term = Matrix::identity(self.n);
        for k in 1..=30 {
            term = term.mul(&scaled).scaled(1.0 / k as f64);
            result.add_scaled(1.0, &term);
            if term.one_norm() <= f64::EPSILON * result.one_norm() {
                break;
            }
        }
        for _ in 0..s {
            result = result.mul(&result);
        }
        result
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        assert!(i < self.n && j < self.n);
        &self.a[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        assert!(i < self.n && j < self.n);
        &mut self.a[i * self.n + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
        let mut d = a.clone();
        d.add_scaled(-1.0, b);
        (0..a.dim())
            .flat_map(|i| (0..a.dim()).map(move |j| (i, j)))
            .map(|ij| d[ij].abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(Matrix::zeros(3).expm(), Matrix::identity(3));
    }

    #[test]
    fn exp_of_diagonal_is_entrywise() {
        let mut m = Matrix::zeros(3);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = -2.0;
        m[(2, 2)] = 0.25;
        let e = m.expm();
        for (i, v) in [1.0f64, -2.0, 0.25].iter().enumerate() {
            assert_relative_eq!(e[(i, i)], v.exp(), max_relative = 1e-14);
        }
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn exp_of_nilpotent_truncates() {
        let m = Matrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let e = m.expm();
        let expected = Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]);
        assert!(max_abs_diff(&e, &expected) < 1e-15);
    }

    #[test]
    fn exp_of_rotation_generator_is_rotation() {
        let theta = 0.7;
        let m = Matrix::from_rows(&[&[0.0, -theta], &[theta, 0.0]]);
        let e = m.expm();
        assert_relative_eq!(e[(0, 0)], theta.cos(), max_relative = 1e-14);
        assert_relative_eq!(e[(1, 0)], theta.sin(), max_relative = 1e-14);
        assert_relative_eq!(e[(0, 1)], -theta.sin(), max_relative = 1e-14);
    }

    #[test]
    fn exp_inverse_is_exp_of_negation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let mut m = Matrix::zeros(3);
            for i in 0..3 {
                for j in 0..3 {
                    m[(i, j)] = rng.gen_range(-3.0..3.0);
                }
            }
            let prod = m.expm().mul(&m.scaled(-1.0).expm());
            assert!(max_abs_diff(&prod, &Matrix::identity(3)) < 1e-12);
        }
    }

    #[test]
    fn exp_is_multiplicative_on_commuting_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut m = Matrix::zeros(3);
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
        // A and A^2 commute: e^{A + A^2/4} = e^A e^{A^2/4}.
        let a2 = m.mul(&m).scaled(0.25);
        let mut sum = m.clone();
        sum.add_scaled(1.0, &a2);
        assert!(max_abs_diff(&sum.expm(), &m.expm().mul(&a2.expm())) < 1e-13);
    }

    #[test]
    fn large_norm_scaling_stays_accurate() {
        // Stiff decay: exp(diag(-60, -1)) has a condition-free answer.
        let mut m = Matrix::zeros(2);
        m[(0, 0)] = -60.0;
        m[(1, 1)] = -1.0;
        let e = m.expm();
        assert_relative_eq!(e[(0, 0)], (-60.0f64).exp(), max_relative = 1e-11);
        assert_relative_eq!(e[(1, 1)], (-1.0f64).exp(), max_relative = 1e-13);
    }

    #[test]
    fn mul_vec_matches_matrix_action() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(m.mul_vec(&[1.0, 1.0]), vec![3.0, 7.0]);
        assert_relative_eq!(m.one_norm(), 6.0);
    }
}
