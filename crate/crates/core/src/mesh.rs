//! Domain types of the two-service, two-node mesh and the discretized
//! action grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of services and processing nodes in the modeled mesh.
pub const NUM_SERVICES: usize = 2;
pub const NUM_NODES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    pub num_services: usize,
    pub num_processing_nodes: usize,
    pub time_step_seconds: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            num_services: NUM_SERVICES,
            num_processing_nodes: NUM_NODES,
            time_step_seconds: 5.0,
        }
    }
}

impl MeshConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_services != NUM_SERVICES || self.num_processing_nodes != NUM_NODES {
            return Err(Error::invalid("only the 2-service, 2-node mesh is supported"));
        }
        if !(self.time_step_seconds > 0.0) {
            return Err(Error::invalid("time_step_seconds must be positive"));
        }
        Ok(())
    }
}

/// Control vector: routing weight of each service towards node 1 and the
/// per-service blocking rate. Routing towards node 2 is implied.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub p11: f64,
    pub p21: f64,
    pub b1: f64,
    pub b2: f64,
}

impl Action {
    pub fn new(p11: f64, p21: f64, b1: f64, b2: f64) -> Result<Self> {
        let a = Action { p11, p21, b1, b2 };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p11", self.p11), ("p21", self.p21), ("b1", self.b1), ("b2", self.b2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Fraction of service `i` (0-based) sent to node `j` (0-based).
    pub fn routing(&self, i: usize, j: usize) -> f64 {
        let p1 = if i == 0 { self.p11 } else { self.p21 };
        if j == 0 {
            p1
        } else {
            1.0 - p1
        }
    }

    pub fn blocking(&self, i: usize) -> f64 {
        if i == 0 {
            self.b1
        } else {
            self.b2
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.p11, self.p21, self.b1, self.b2]
    }
}

/// Observed state: last step's response times and the current offered loads.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeshState {
    pub d1: f64,
    pub d2: f64,
    pub l1: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    levels: usize,
    actions: Vec<Action>,
}

impl ActionGrid {
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    /// The values every action dimension takes, in grid order. Action `i`
    /// has digits `i` in base `levels`, most significant first, over
    /// `(p11, p21, b1, b2)`.
    pub fn axis(&self) -> Vec<f64> {
        let step = (self.levels - 1) as f64;
        (0..self.levels).map(|k| k as f64 / step).collect()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Action> {
        self.actions.get(index)
    }

    /// Index of the grid point for per-dimension level indices
    /// `(p11, p21, b1, b2)`.
    pub fn index_of_levels(&self, lv: [usize; 4]) -> usize {
        lv.iter().fold(0, |acc, &k| acc * self.levels + k)
    }

    /// Per-dimension level indices of grid action `index`.
    pub fn levels_of_index(&self, mut index: usize) -> [usize; 4] {
        let mut out = [0; 4];
        for slot in out.iter_mut().rev() {
            *slot = index % self.levels;
            index /= self.levels;
        }
        out
    }

    /// Index of the grid action equal to `action` (values snapped to the
    /// nearest level).
    pub fn nearest_index(&self, action: &Action) -> usize {
        let step = (self.levels - 1) as f64;
        let lv = action
            .as_array()
            .map(|v| ((v.clamp(0.0, 1.0) * step).round() as usize).min(self.levels - 1));
        self.index_of_levels(lv)
    }
}

/// Largest supported grid: 16^4 = 65536 actions.
pub const MAX_GRID_LEVELS: usize = 16;

/// All `levels^4` grid actions, lexicographic in `(p11, p21, b1, b2)`.
pub fn build_action_grid(levels: usize) -> Result<ActionGrid> {
    if !(2..=MAX_GRID_LEVELS).contains(&levels) {
        return Err(Error::invalid(format!(
            "grid levels must lie in 2..={MAX_GRID_LEVELS}, got {levels}"
        )));
    }
    let step = (levels - 1) as f64;
    let value = |k: usize| k as f64 / step;
    let mut actions = Vec::with_capacity(levels.pow(4));
    for a in 0..levels {
        for b in 0..levels {
            for c in 0..levels {
                for d in 0..levels {
                    actions.push(Action {
                        p11: value(a),
                        p21: value(b),
                        b1: value(c),
                        b2: value(d),
                    });
                }
            }
        }
    }
    Ok(ActionGrid { levels, actions })
}

/// Admitted request rate `l * (1 - b)`.
pub fn carried_load(l: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&b) {
        return Err(Error::invalid(format!("blocking rate {b} outside [0, 1]")));
    }
    if !(l >= 0.0) {
        return Err(Error::invalid(format!("offered load {l} must be >= 0")));
    }
    Ok(l * (1.0 - b))
}

/// Optional fields are absent in raw traces and filled in by evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub t: u64,
    pub l1: f64,
    pub l2: f64,
    pub action: Action,
    pub d1: f64,
    pub d2: f64,
    pub lc1: f64,
    pub lc2: f64,
    pub reward: Option<f64>,
    pub optimal_reward: Option<f64>,
}
