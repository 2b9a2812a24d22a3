use alloc::sync::Arc;
use alloc::vec;

use super::{ModeSchedule, ModeSegment, PhaseEncoding, QuadraticCost, SystemModel};
use crate::linalg::{Matrix, Vector};

pub const HOPPER_STANCE: usize = 0;
pub const HOPPER_FLIGHT: usize = 1;

/// Vertical hopper with state `[z, ż]` and controls `[f, w]`: contact force
/// and foot velocity. Stance requires `w = 0`, flight requires `f = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopperParams {
    pub mass: f64,
    pub gravity: f64,
    pub stance_duration: f64,
    pub flight_duration: f64,
    /// Body height at touchdown and liftoff of the reference gait.
    pub nominal_height: f64,
}

impl Default for HopperParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            gravity: 9.81,
            stance_duration: 0.35,
            flight_duration: 0.35,
            nominal_height: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Hopper {
    pub params: HopperParams,
    schedule: ModeSchedule,
}

impl Hopper {
    pub fn new(params: HopperParams) -> Self {
        let period = params.stance_duration + params.flight_duration;
        let schedule = ModeSchedule::new(
            period,
            vec![
                ModeSegment {
                    start: 0.0,
                    end: params.stance_duration,
                    mode: HOPPER_STANCE,
                },
                ModeSegment {
                    start: params.stance_duration,
                    end: period,
                    mode: HOPPER_FLIGHT,
                },
            ],
        );
        Self { params, schedule }
    }

    pub fn schedule(&self) -> &ModeSchedule {
        &self.schedule
    }

    pub fn in_stance(&self, t: f64) -> bool {
        self.schedule.mode_at(t) == HOPPER_STANCE
    }

    /// Periodic reference gait: ballistic in flight, mirrored parabola
    /// (constant upward acceleration `g`) in stance, touching down at
    /// `nominal_height`.
    pub fn reference(&self, t: f64) -> Vector {
        hop_reference(&self.params, &self.schedule, t)
    }
}

fn hop_reference(p: &HopperParams, schedule: &ModeSchedule, t: f64) -> Vector {
    let (seg, s) = schedule.locate(t);
    let g = p.gravity;
    if seg.mode == HOPPER_STANCE {
        let tau = s * p.stance_duration;
        let v0 = 0.5 * g * p.stance_duration;
        Vector::from_row_slice(&[
            p.nominal_height - v0 * tau + 0.5 * g * tau * tau,
            -v0 + g * tau,
        ])
    } else {
        let tau = s * p.flight_duration;
        let v0 = 0.5 * g * p.flight_duration;
        Vector::from_row_slice(&[
            p.nominal_height + v0 * tau - 0.5 * g * tau * tau,
            v0 - g * tau,
        ])
    }
}

impl SystemModel for Hopper {
    fn name(&self) -> &'static str {
        "hopper1d"
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
        Vector::from_row_slice(&[x[1], u[0] / self.params.mass - self.params.gravity])
    }

    fn flow_jacobians(&self, _x: &Vector, _u: &Vector, _t: f64) -> (Matrix, Matrix) {
        (
            Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            Matrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0 / self.params.mass, 0.0]),
        )
    }

    fn eq_constraint(&self, _x: &Vector, u: &Vector, t: f64) -> Vector {
        if self.in_stance(t) {
            Vector::from_row_slice(&[u[1]])
        } else {
            Vector::from_row_slice(&[u[0]])
        }
    }

    fn eq_constraint_jacobians(&self, _x: &Vector, _u: &Vector, t: f64) -> (Matrix, Matrix) {
        let d = if self.in_stance(t) {
            Matrix::from_row_slice(1, 2, &[0.0, 1.0])
        } else {
            Matrix::from_row_slice(1, 2, &[1.0, 0.0])
        };
        (Matrix::zeros(1, 2), d)
    }

    fn mode_schedule(&self) -> Option<&ModeSchedule> {
        Some(&self.schedule)
    }

    /// Zero in stance, `sin(π s)` over the flight phase.
    fn phase_encode(&self, t: f64) -> PhaseEncoding {
        let (seg, s) = self.schedule.locate(t);
        let value = if seg.mode == HOPPER_STANCE {
            0.0
        } else {
            libm::sin(core::f64::consts::PI * s)
        };
        PhaseEncoding::new(vec![value])
    }

    fn initial_state_bounds(&self) -> (Vector, Vector) {
        let r = self.reference(0.0);
        let spread = Vector::from_row_slice(&[0.05, 0.3]);
        (&r - &spread, &r + &spread)
    }

    fn state_scale(&self) -> Vector {
        Vector::from_row_slice(&[0.1, 0.5])
    }

    fn diverged(&self, x: &Vector, t: f64) -> bool {
        let r = self.reference(t);
        !((x[0] - r[0]).abs() <= 0.2 && x[1].abs() <= 5.0)
    }

    fn default_cost(&self) -> QuadraticCost {
        let p = self.params;
        let schedule = self.schedule.clone();
        QuadraticCost::new(
            Matrix::from_diagonal(&Vector::from_row_slice(&[200.0, 10.0])),
            Matrix::from_diagonal(&Vector::from_row_slice(&[0.01, 0.01])),
            Matrix::from_diagonal(&Vector::from_row_slice(&[200.0, 10.0])),
            Arc::new(move |t| hop_reference(&p, &schedule, t)),
        )
    }

    fn default_horizon(&self) -> f64 {
        0.7
    }
}
