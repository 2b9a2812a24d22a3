use alloc::sync::Arc;

use super::{QuadraticCost, SystemModel};
use crate::linalg::{Matrix, Vector};

/// Cart-pole balanced about the upright equilibrium.
///
/// State `[x, θ, ẋ, θ̇]` with `θ = 0` upright, control is the horizontal force
/// on the cart, limited to `|u| ≤ force_limit` through the barrier. The pole is
/// a uniform rod; `pole_length` is its half-length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartpoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
    pub force_limit: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_length: 0.5,
            gravity: 9.81,
            force_limit: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cartpole {
    pub params: CartpoleParams,
}

impl Cartpole {
    pub fn new(params: CartpoleParams) -> Self {
        Self { params }
    }
}

struct Accel {
    x_dd: f64,
    th_dd: f64,
    // partials of (ẍ, θ̈) with respect to θ, θ̇ and u
    x_dd_d: [f64; 3],
    th_dd_d: [f64; 3],
}

impl Cartpole {
    fn accelerations(&self, th: f64, th_d: f64, force: f64) -> Accel {
        let p = &self.params;
        let total = p.cart_mass + p.pole_mass;
        let ml = p.pole_mass * p.pole_length;
        let (s, c) = (libm::sin(th), libm::cos(th));

        let temp = (force + ml * th_d * th_d * s) / total;
        let temp_d = [ml * th_d * th_d * c / total, 2.0 * ml * th_d * s / total, 1.0 / total];

        let den = p.pole_length * (4.0 / 3.0 - p.pole_mass * c * c / total);
        let den_th = p.pole_length * 2.0 * p.pole_mass * c * s / total;

        let num = p.gravity * s - c * temp;
        let num_d = [
            p.gravity * c + s * temp - c * temp_d[0],
            -c * temp_d[1],
            -c * temp_d[2],
        ];

        let th_dd = num / den;
        let th_dd_d = [
            (num_d[0] * den - num * den_th) / (den * den),
            num_d[1] / den,
            num_d[2] / den,
        ];

        let x_dd = temp - ml * th_dd * c / total;
        let x_dd_d = [
            temp_d[0] - ml / total * (th_dd_d[0] * c - th_dd * s),
            temp_d[1] - ml / total * th_dd_d[1] * c,
            temp_d[2] - ml / total * th_dd_d[2] * c,
        ];
        Accel {
            x_dd,
            th_dd,
            x_dd_d,
            th_dd_d,
        }
    }
}

impl SystemModel for Cartpole {
    fn name(&self) -> &'static str {
        "cartpole"
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn eq_constraint_dim(&self, _t: f64) -> usize {
        0
    }

    fn ineq_constraint_dim(&self, _t: f64) -> usize {
        2
    }

    fn flow(&self, x: &Vector, u: &Vector, _t: f64) -> Vector {
        let a = self.accelerations(x[1], x[3], u[0]);
        Vector::from_row_slice(&[x[2], x[3], a.x_dd, a.th_dd])
    }

    fn flow_jacobians(&self, x: &Vector, u: &Vector, _t: f64) -> (Matrix, Matrix) {
        let a = self.accelerations(x[1], x[3], u[0]);
        let mut jx = Matrix::zeros(4, 4);
        jx[(0, 2)] = 1.0;
        jx[(1, 3)] = 1.0;
        jx[(2, 1)] = a.x_dd_d[0];
        jx[(2, 3)] = a.x_dd_d[1];
        jx[(3, 1)] = a.th_dd_d[0];
        jx[(3, 3)] = a.th_dd_d[1];
        let ju = Matrix::from_column_slice(4, 1, &[0.0, 0.0, a.x_dd_d[2], a.th_dd_d[2]]);
        (jx, ju)
    }

    fn ineq_constraint(&self, _x: &Vector, u: &Vector, _t: f64) -> Vector {
        let lim = self.params.force_limit;
        Vector::from_row_slice(&[lim - u[0], lim + u[0]])
    }

    fn ineq_constraint_jacobians(&self, _x: &Vector, _u: &Vector, _t: f64) -> (Matrix, Matrix) {
        (Matrix::zeros(2, 4), Matrix::from_column_slice(2, 1, &[-1.0, 1.0]))
    }

    fn initial_state_bounds(&self) -> (Vector, Vector) {
        let hi = Vector::from_row_slice(&[0.5, 0.25, 0.3, 0.3]);
        (-&hi, hi)
    }

    fn state_scale(&self) -> Vector {
        Vector::from_row_slice(&[0.5, 0.25, 0.5, 0.5])
    }

    fn diverged(&self, x: &Vector, _t: f64) -> bool {
        let max_angle = 30.0_f64.to_radians();
        !(x[1].abs() <= max_angle && x[0].abs() <= 2.0) || !crate::linalg::all_finite(x.as_slice())
    }

    fn default_cost(&self) -> QuadraticCost {
        QuadraticCost::new(
            Matrix::from_diagonal(&Vector::from_row_slice(&[1.0, 5.0, 0.1, 0.1])),
            Matrix::from_element(1, 1, 0.05),
            Matrix::from_diagonal(&Vector::from_row_slice(&[5.0, 25.0, 1.0, 1.0])),
            Arc::new(|_| Vector::zeros(4)),
        )
    }

    fn default_horizon(&self) -> f64 {
        1.5
    }
}
