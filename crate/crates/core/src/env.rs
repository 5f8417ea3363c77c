//! Environment abstractions shared by the oracle, the trainer and the
//! evaluation harness.

use crate::ground_truth::StepOutcome;
use crate::mesh::{Action, ActionGrid};

/// Deterministic response-time model: offered loads plus action to the
/// expected end-to-end delays of both services.
pub trait DelayModel: Sync {
    fn delays(&self, l1: f64, l2: f64, action: &Action) -> (f64, f64);

    /// Delays of many actions under one load pair; must agree exactly with
    /// `delays`.
    fn delays_many(&self, l1: f64, l2: f64, actions: &[Action]) -> Vec<(f64, f64)> {
        actions.iter().map(|a| self.delays(l1, l2, a)).collect()
    }

    /// Delays of every grid action, in grid order.
    fn delays_grid(&self, l1: f64, l2: f64, grid: &ActionGrid) -> Vec<(f64, f64)> {
        self.delays_many(l1, l2, grid.actions())
    }
}

impl<T: DelayModel + ?Sized> DelayModel for &T {
    fn delays(&self, l1: f64, l2: f64, action: &Action) -> (f64, f64) {
        (**self).delays(l1, l2, action)
    }

    fn delays_many(&self, l1: f64, l2: f64, actions: &[Action]) -> Vec<(f64, f64)> {
        (**self).delays_many(l1, l2, actions)
    }

    fn delays_grid(&self, l1: f64, l2: f64, grid: &ActionGrid) -> Vec<(f64, f64)> {
        (**self).delays_grid(l1, l2, grid)
    }
}

/// A steppable environment. `step` is memoryless: the outcome depends only
/// on the arguments.
pub trait Environment: Sync {
    fn step(&self, l1: f64, l2: f64, action: &Action, t: u64) -> StepOutcome;

    /// Label used in reports (`simulation` or `ground-truth`).
    fn label(&self) -> &'static str;
}

/// Surrogate-backed simulator: delays come straight from a delay model,
/// without noise.
#[derive(Debug, Clone, Copy)]
pub struct Simulator<M> {
    pub model: M,
}

impl<M> Simulator<M> {
    pub fn new(model: M) -> Self {
        Simulator { model }
    }
}

impl<M: DelayModel> Environment for Simulator<M> {
    fn step(&self, l1: f64, l2: f64, action: &Action, _t: u64) -> StepOutcome {
        let (d1, d2) = self.model.delays(l1, l2, action);
        StepOutcome {
            d1,
            d2,
            expected_d1: d1,
            expected_d2: d2,
            lc1: l1 * (1.0 - action.b1),
            lc2: l2 * (1.0 - action.b2),
        }
    }

    fn label(&self) -> &'static str {
        "simulation"
    }
}
