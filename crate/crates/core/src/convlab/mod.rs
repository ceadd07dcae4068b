//! Closed-form minimax dynamics: the one-dimensional zoo, the bilinear game
//! with affiliated variables, and projected alternating updates on strongly
//! convex-concave quadratic games.
//!
//! Everything here uses exact analytic gradients; no autodiff is involved.

pub mod bilinear;
pub mod quadgame;
pub mod toy1d;

use serde::{Deserialize, Serialize};

pub use bilinear::{
    bilinear_affiliated_step, bilinear_optimum, reduced_1d_step, svd_reduction_gap, verify_thm4, BilinearState,
    BilinearSystem, PhiCurvature, Thm4Report,
};
pub use quadgame::{projected_alt_sgd, verify_thm3, BoxSet, QuadGame, Thm3Report};
pub use toy1d::{
    bridge_1d_step, reg_1d_step, run_zoo, va_anneal_1d, verify_prop1, wgan_1d_step, BridgeOrder, Prop1Report,
    Prop1Row, Toy1DState, VaSchedule, ZooReport, ZooSpec,
};

/// States along a run with squared distances to a reference point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Names of the state components, in order.
    pub components: Vec<String>,
    pub states: Vec<Vec<f64>>,
    /// `‖state_t − reference‖²`.
    pub dist2: Vec<f64>,
}

impl Trajectory {
    pub fn new(components: &[&str], reference: Vec<f64>) -> TrajectoryBuilder {
        TrajectoryBuilder {
            traj: Trajectory {
                components: components.iter().map(|s| s.to_string()).collect(),
                states: Vec::new(),
                dist2: Vec::new(),
            },
            reference,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `dist2[t+1] / dist2[t]`, or 0 once the distance is exactly 0.
    pub fn ratios(&self) -> Vec<f64> {
        self.dist2
            .windows(2)
            .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
            .collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.dist2.iter().map(|d| d.sqrt()).collect()
    }

    pub fn final_distance(&self) -> f64 {
        self.dist2.last().copied().unwrap_or(0.0).sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        self.states
            .iter()
            .map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

pub struct TrajectoryBuilder {
    traj: Trajectory,
    reference: Vec<f64>,
}

impl TrajectoryBuilder {
    pub fn push(&mut self, state: Vec<f64>) {
        let d2 = state.iter().zip(&self.reference).map(|(a, b)| (a - b) * (a - b)).sum();
        self.traj.dist2.push(d2);
        self.traj.states.push(state);
    }

    pub fn finish(self) -> Trajectory {
        self.traj
    }
}
