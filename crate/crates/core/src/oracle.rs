//! Exhaustive search of the action grid for the reward-maximizing action.

use std::collections::HashMap;

use crate::env::DelayModel;
use crate::error::{Error, Result};
use crate::mesh::{Action, ActionGrid};
use crate::rewards::{reward_from_carried, ManagementObjective};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best_index: usize,
    pub best_action: Action,
    pub best_reward: f64,
    /// `(action index, reward)` for every grid action, when requested.
    pub reward_table: Option<Vec<(usize, f64)>>,
}

/// Reward of a single action when delays come from `model`.
pub fn action_reward<M: DelayModel + ?Sized>(
    model: &M,
    objective: &ManagementObjective,
    l1: f64,
    l2: f64,
    action: &Action,
) -> f64 {
    let (d1, d2) = model.delays(l1, l2, action);
    reward_from_carried(objective, l1 * (1.0 - action.b1), l2 * (1.0 - action.b2), d1, d2)
}

/// Best grid action for loads `(l1, l2)`. Ties go to the lowest index.
pub fn optimal<M: DelayModel + ?Sized>(
    model: &M,
    objective: &ManagementObjective,
    l1: f64,
    l2: f64,
    grid: &ActionGrid,
    keep_table: bool,
) -> Result<OracleResult> {
    if grid.is_empty() {
        return Err(Error::invalid("empty action grid"));
    }
    let mut table = keep_table.then(|| Vec::with_capacity(grid.len()));
    let mut best = (0usize, f64::NEG_INFINITY);
    let delays = model.delays_grid(l1, l2, grid);
    for (i, (a, &(d1, d2))) in grid.actions().iter().zip(&delays).enumerate() {
        let r = reward_from_carried(objective, l1 * (1.0 - a.b1), l2 * (1.0 - a.b2), d1, d2);
        if r > best.1 {
            best = (i, r);
        }
        if let Some(t) = table.as_mut() {
            t.push((i, r));
        }
    }
    Ok(OracleResult {
        best_index: best.0,
        best_action: grid.actions()[best.0],
        best_reward: best.1,
        reward_table: table,
    })
}

/// Optimal reward for every load pair of a sequence.
pub fn optimal_reward_series<M: DelayModel + ?Sized>(
    model: &M,
    objective: &ManagementObjective,
    loads: &[(f64, f64)],
    grid: &ActionGrid,
) -> Result<Vec<f64>> {
    if loads.is_empty() {
        return Err(Error::invalid("empty load sequence"));
    }
    let mut cache = OracleCache::new(model, *objective, grid);
    Ok(loads.iter().map(|&(l1, l2)| cache.get(l1, l2).best_reward).collect())
}

/// Memoizes oracle results by exact load pair. Random load patterns only
/// visit a handful of distinct pairs, so this removes almost every
/// enumeration during training.
pub struct OracleCache<'a, M: ?Sized> {
    model: &'a M,
    objective: ManagementObjective,
    grid: &'a ActionGrid,
    memo: HashMap<(u64, u64), OracleResult>,
}

impl<'a, M: DelayModel + ?Sized> OracleCache<'a, M> {
    pub fn new(model: &'a M, objective: ManagementObjective, grid: &'a ActionGrid) -> Self {
        OracleCache {
            model,
            objective,
            grid,
            memo: HashMap::new(),
        }
    }

    pub fn get(&mut self, l1: f64, l2: f64) -> &OracleResult {
        let (model, objective, grid) = (self.model, self.objective, self.grid);
        self.memo
            .entry((l1.to_bits(), l2.to_bits()))
            .or_insert_with(|| optimal(model, &objective, l1, l2, grid, false).expect("grid is nonempty"))
    }
}
