use alloc::sync::Arc;

use super::{QuadraticCost, SystemModel};
use crate::linalg::{Matrix, Vector};

/// Double integrator driven by two redundant inputs tied together by the
/// state-input constraint `u₁ − u₂ − k·v = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RedundantDiParams {
    pub constraint_gain: f64,
}

impl Default for RedundantDiParams {
    fn default() -> Self {
        Self {
            constraint_gain: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RedundantDoubleIntegrator {
    pub params: RedundantDiParams,
}

impl RedundantDoubleIntegrator {
    pub fn new(params: RedundantDiParams) -> Self {
        Self { params }
    }
}

impl SystemModel for RedundantDoubleIntegrator {
    fn name(&self) -> &'static str {
        "redundant-di"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        2
    }

    fn eq_constraint_dim(&self, _t: f64) -> usize {
        1
    }

    fn flow(&self, x: &Vector, u: &Vector, _t: f64) -> Vector {
        Vector::from_row_slice(&[x[1], u[0] + u[1]])
    }

    fn flow_jacobians(&self, _x: &Vector, _u: &Vector, _t: f64) -> (Matrix, Matrix) {
        (
            Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            Matrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]),
        )
    }

    fn eq_constraint(&self, x: &Vector, u: &Vector, _t: f64) -> Vector {
        Vector::from_row_slice(&[u[0] - u[1] - self.params.constraint_gain * x[1]])
    }

    fn eq_constraint_jacobians(&self, _x: &Vector, _u: &Vector, _t: f64) -> (Matrix, Matrix) {
        (
            Matrix::from_row_slice(1, 2, &[0.0, -self.params.constraint_gain]),
            Matrix::from_row_slice(1, 2, &[1.0, -1.0]),
        )
    }

    fn initial_state_bounds(&self) -> (Vector, Vector) {
        (Vector::from_element(2, -1.0), Vector::from_element(2, 1.0))
    }

    fn state_scale(&self) -> Vector {
        Vector::from_element(2, 1.0)
    }

    fn diverged(&self, x: &Vector, _t: f64) -> bool {
        !(x.norm() <= 5.0)
    }

    fn default_cost(&self) -> QuadraticCost {
        QuadraticCost::new(
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            Arc::new(|_| Vector::zeros(2)),
        )
    }

    fn default_horizon(&self) -> f64 {
        2.0
    }
}
