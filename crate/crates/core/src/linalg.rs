//! Dense linear-algebra helpers shared by the solver and the Hamiltonian.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Relative pivot threshold below which a constraint Jacobian is treated as
/// rank deficient.
const RANK_TOL: f64 = 1e-12;

pub fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn min_eigenvalue(sym: &Matrix) -> f64 {
    if sym.nrows() == 0 {
        return f64::INFINITY;
    }
    if sym.nrows() == 1 {
        return sym[(0, 0)];
    }
    sym.clone().symmetric_eigen().eigenvalues.min()
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Median of a slice; NaN entries are sorted last. Returns NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Factorization of the equality-constrained quadratic system
///
/// ```text
/// [ H  Dᵀ ] [u]   [a]
/// [ D  0  ] [ν] = [b]
/// ```
///
/// with `H` positive definite, solved through the Schur complement
/// `S = D H⁻¹ Dᵀ`.
pub struct KktFactor {
    h_chol: Cholesky<f64, Dyn>,
    d: Matrix,
    s_chol: Option<Cholesky<f64, Dyn>>,
}

impl KktFactor {
    /// Fails with [`Error::IndefiniteHessian`] if `h` is not positive definite
    /// and [`Error::DegenerateConstraint`] if `d` lacks full row rank.
    pub fn new(h: &Matrix, d: &Matrix) -> Result<Self> {
        let h_chol = h.clone().cholesky().ok_or(Error::IndefiniteHessian)?;
        let s_chol = if d.nrows() == 0 {
            None
        } else {
            let hinv_dt = h_chol.solve(&d.transpose());
            let mut s = d * &hinv_dt;
            symmetrize(&mut s);
            let scale = s.diagonal().amax().max(f64::MIN_POSITIVE);
            let chol = s.cholesky().ok_or(Error::DegenerateConstraint)?;
            let l = chol.l_dirty();
            for i in 0..l.nrows() {
                if l[(i, i)] * l[(i, i)] < RANK_TOL * scale {
                    return Err(Error::DegenerateConstraint);
                }
            }
            Some(chol)
        };
        Ok(Self {
            h_chol,
            d: d.clone(),
            s_chol,
        })
    }

    pub fn solve(&self, a: &Vector, b: &Vector) -> (Vector, Vector) {
        let hinv_a = self.h_chol.solve(a);
        match &self.s_chol {
            None => (hinv_a, Vector::zeros(0)),
            Some(s) => {
                let nu = s.solve(&(&self.d * &hinv_a - b));
                let u = self.h_chol.solve(&(a - self.d.transpose() * &nu));
                (u, nu)
            }
        }
    }

    /// Same as [`solve`](Self::solve) with matrix right-hand sides.
    pub fn solve_matrix(&self, a: &Matrix, b: &Matrix) -> (Matrix, Matrix) {
        let hinv_a = self.h_chol.solve(a);
        match &self.s_chol {
            None => (hinv_a, Matrix::zeros(0, a.ncols())),
            Some(s) => {
                let nu = s.solve(&(&self.d * &hinv_a - b));
                let u = self.h_chol.solve(&(a - self.d.transpose() * &nu));
                (u, nu)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kkt_matches_direct_solve() {
        let h = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 3.0]);
        let d = Matrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let a = Vector::from_vec(alloc::vec![1.0, -2.0]);
        let b = Vector::from_vec(alloc::vec![0.3]);
        let (u, nu) = KktFactor::new(&h, &d).unwrap().solve(&a, &b);
        // stationarity and feasibility
        let r1 = &h * &u + d.transpose() * &nu - &a;
        let r2 = &d * &u - &b;
        assert!(r1.norm() < 1e-12 && r2.norm() < 1e-12);
    }

    #[test]
    fn rank_deficient_constraint_is_rejected() {
        let h = Matrix::identity(2, 2);
        let d = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(
            KktFactor::new(&h, &d).err(),
            Some(Error::DegenerateConstraint)
        );
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
