#![allow(dead_code)]

use std::sync::Arc;

use mpcnet_core::systems::{Problem, QuadraticCost, SystemModel};
use mpcnet_core::{Matrix, Vector};

pub fn v(s: &[f64]) -> Vector {
    Vector::from_row_slice(s)
}

/// `ẋ = A x + B u` with optional `C x + D u + e = 0`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub e: Vector,
}

impl LinearSystem {
    pub fn unconstrained(a: Matrix, b: Matrix) -> Self {
        let (n, m) = (a.nrows(), b.ncols());
        Self {
            a,
            b,
            c: Matrix::zeros(0, n),
            d: Matrix::zeros(0, m),
            e: Vector::zeros(0),
        }
    }
}

impl SystemModel for LinearSystem {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn eq_constraint_dim(&self, _t: f64) -> usize {
        self.c.nrows()
    }
    fn flow(&self, x: &Vector, u: &Vector, _t: f64) -> Vector {
        &self.a * x + &self.b * u
    }
    fn flow_jacobians(&self, _x: &Vector, _u: &Vector, _t: f64) -> (Matrix, Matrix) {
        (self.a.clone(), self.b.clone())
    }
    fn eq_constraint(&self, x: &Vector, u: &Vector, _t: f64) -> Vector {
        &self.c * x + &self.d * u + &self.e
    }
    fn eq_constraint_jacobians(&self, _x: &Vector, _u: &Vector, _t: f64) -> (Matrix, Matrix) {
        (self.c.clone(), self.d.clone())
    }
    fn initial_state_bounds(&self) -> (Vector, Vector) {
        let n = self.state_dim();
        (Vector::from_element(n, -1.0), Vector::from_element(n, 1.0))
    }
    fn state_scale(&self) -> Vector {
        Vector::from_element(self.state_dim(), 1.0)
    }
    fn diverged(&self, x: &Vector, _t: f64) -> bool {
        x.norm() > 100.0
    }
    fn default_cost(&self) -> QuadraticCost {
        let n = self.state_dim();
        let m = self.control_dim();
        QuadraticCost::regulator(
            Matrix::identity(n, n),
            Matrix::identity(m, m),
            Matrix::identity(n, n),
            Vector::zeros(n),
        )
    }
    fn default_horizon(&self) -> f64 {
        1.0
    }
}

pub fn linear_problem(sys: LinearSystem) -> Problem {
    Problem::new(Arc::new(sys))
}

/// Solution of the Euler-discretized, equality-constrained LQ problem as one
/// dense KKT system over all controls (states eliminated).
pub struct StackedSolution {
    pub u: Vec<Vector>,
    /// Multiplier of each stage constraint in the discrete problem.
    pub mu: Vec<Vector>,
    pub cost: f64,
}

/// Regulator to the origin with running cost `(xᵀQx + uᵀRu) dt` and
/// terminal cost `xᵀQ_f x`.
#[allow(clippy::too_many_arguments)]
pub fn stacked_lq(
    a: &Matrix,
    b: &Matrix,
    c: &Matrix,
    d: &Matrix,
    q: &Matrix,
    r: &Matrix,
    qf: &Matrix,
    x0: &Vector,
    dt: f64,
    steps: usize,
) -> StackedSolution {
    let (n, m, p) = (a.nrows(), b.ncols(), c.nrows());
    let ad = Matrix::identity(n, n) + a * dt;
    let bd = b * dt;
    // X = [x_0; …; x_N] = sx x0 + su U
    let mut sx = Matrix::zeros(n * (steps + 1), n);
    let mut su = Matrix::zeros(n * (steps + 1), m * steps);
    let mut pow = Matrix::identity(n, n);
    for k in 0..=steps {
        sx.view_mut((k * n, 0), (n, n)).copy_from(&pow);
        pow = &ad * &pow;
    }
    for k in 1..=steps {
        for j in 0..k {
            let mut blk = bd.clone();
            for _ in j + 1..k {
                blk = &ad * blk;
            }
            su.view_mut((k * n, j * m), (n, m)).copy_from(&blk);
        }
    }
    let mut qbar = Matrix::zeros(n * (steps + 1), n * (steps + 1));
    for k in 0..steps {
        qbar.view_mut((k * n, k * n), (n, n)).copy_from(&(q * dt));
    }
    qbar.view_mut((steps * n, steps * n), (n, n)).copy_from(qf);
    let mut rbar = Matrix::zeros(m * steps, m * steps);
    let mut dbar = Matrix::zeros(p * steps, m * steps);
    let mut cbar = Matrix::zeros(p * steps, n * (steps + 1));
    for k in 0..steps {
        rbar.view_mut((k * m, k * m), (m, m)).copy_from(&(r * dt));
        dbar.view_mut((k * p, k * m), (p, m)).copy_from(d);
        cbar.view_mut((k * p, k * n), (p, n)).copy_from(c);
    }
    let hess = (su.transpose() * &qbar * &su + &rbar) * 2.0;
    let lin = su.transpose() * &qbar * &sx * x0 * 2.0;
    let e = &dbar + &cbar * &su;
    let rhs_c = -(&cbar * &sx * x0);
    let nv = m * steps;
    let nc = p * steps;
    let mut kkt = Matrix::zeros(nv + nc, nv + nc);
    kkt.view_mut((0, 0), (nv, nv)).copy_from(&hess);
    kkt.view_mut((0, nv), (nv, nc)).copy_from(&e.transpose());
    kkt.view_mut((nv, 0), (nc, nv)).copy_from(&e);
    let mut rhs = Vector::zeros(nv + nc);
    rhs.rows_mut(0, nv).copy_from(&(-lin));
    rhs.rows_mut(nv, nc).copy_from(&rhs_c);
    let sol = kkt.lu().solve(&rhs).expect("KKT oracle is singular");
    let uvec = sol.rows(0, nv).into_owned();
    let xs = &sx * x0 + &su * &uvec;
    let cost = xs.dot(&(&qbar * &xs)) + uvec.dot(&(&rbar * &uvec));
    StackedSolution {
        u: (0..steps).map(|k| uvec.rows(k * m, m).into_owned()).collect(),
        mu: (0..steps).map(|k| sol.rows(nv + k * p, p).into_owned()).collect(),
        cost,
    }
}

/// Backward discrete Riccati recursion for `V_k = xᵀP_k x`.
pub fn riccati(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, qf: &Matrix, dt: f64, steps: usize) -> Vec<Matrix> {
    let n = a.nrows();
    let ad = Matrix::identity(n, n) + a * dt;
    let bd = b * dt;
    let mut p = vec![Matrix::zeros(n, n); steps + 1];
    p[steps] = qf.clone();
    for k in (0..steps).rev() {
        let pn = &p[k + 1];
        let s = r * dt + bd.transpose() * pn * &bd;
        let gain = s.try_inverse().unwrap() * bd.transpose() * pn * &ad;
        p[k] = q * dt + ad.transpose() * pn * &ad - ad.transpose() * pn * &bd * gain;
    }
    p
}

pub fn rel_err(a: &Vector, b: &Vector) -> f64 {
    let scale = b.norm().max(1e-12);
    (a - b).norm() / scale
}

pub fn central_jacobian(f: impl Fn(&Vector) -> Vector, x: &Vector, h: f64) -> Matrix {
    let y0 = f(x);
    let mut jac = Matrix::zeros(y0.len(), x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        jac.set_column(j, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    jac
}
