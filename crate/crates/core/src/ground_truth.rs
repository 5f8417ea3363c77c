//! Synthetic stand-in for a physical testbed: each processing node follows
//! a processor-sharing style congestion curve `d0 / (1 - rho)`, clamped at a
//! saturation delay, and observed delays carry multiplicative Gaussian noise.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{DelayModel, Environment};
use crate::error::{Error, Result};
use crate::mesh::{Action, NUM_NODES, NUM_SERVICES};
use crate::rng;

/// Guard against the singularity at full utilization.
pub const UTILIZATION_EPS: f64 = 1e-3;

const NOISE_STREAM: u64 = 0x6E6F_6973;

/// Indexing is `[service][node]` for per-service-per-node quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundTruthParams {
    pub capacity: [f64; NUM_NODES],
    pub work: [[f64; NUM_NODES]; NUM_SERVICES],
    pub base_delay: [[f64; NUM_NODES]; NUM_SERVICES],
    pub front_delay: f64,
    pub max_delay: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for GroundTruthParams {
    fn default() -> Self {
        GroundTruthParams {
            capacity: [30.0, 30.0],
            work: [[1.0, 1.0], [2.0, 2.0]],
            base_delay: [[0.02, 0.02], [0.02, 0.02]],
            front_delay: 0.005,
            max_delay: 2.0,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl GroundTruthParams {
    pub fn noiseless(&self) -> Self {
        GroundTruthParams {
            noise: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.capacity.iter().any(|&c| !(c > 0.0)) {
            return bad("node capacities must be positive");
        }
        if self.work.iter().flatten().any(|&w| !(w > 0.0)) {
            return bad("work costs must be positive");
        }
        if self.base_delay.iter().flatten().any(|&d| !(d >= 0.0)) || !(self.front_delay >= 0.0) {
            return bad("base and front delays must be >= 0");
        }
        if self.base_delay.iter().flatten().any(|&d| !(self.max_delay > d)) {
            return bad("max_delay must exceed every base delay");
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad("noise coefficient must be >= 0");
        }
        Ok(())
    }
}

/// Outcome of one environment step.
///
/// `d1`/`d2` are the observed (possibly noisy) response times; the
/// `expected_*` fields are the noiseless means that rewards are scored on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub d1: f64,
    pub d2: f64,
    pub expected_d1: f64,
    pub expected_d2: f64,
    pub lc1: f64,
    pub lc2: f64,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    params: GroundTruthParams,
}

impl GroundTruth {
    pub fn new(params: GroundTruthParams) -> Result<Self> {
        params.validate()?;
        Ok(GroundTruth { params })
    }

    pub fn params(&self) -> &GroundTruthParams {
        &self.params
    }

    /// Delay of service `i` on node `j` (both 0-based) at utilization `rho`.
    pub fn node_delay(&self, i: usize, j: usize, rho: f64) -> f64 {
        node_delay(&self.params, i, j, rho)
    }

    /// Utilization of both nodes.
    pub fn utilization(&self, l1: f64, l2: f64, action: &Action) -> [f64; NUM_NODES] {
        let loads = [l1, l2];
        let mut rho = [0.0; NUM_NODES];
        for (j, r) in rho.iter_mut().enumerate() {
            let work: f64 = (0..NUM_SERVICES)
                .map(|i| {
                    let lambda = loads[i] * (1.0 - action.blocking(i)) * action.routing(i, j);
                    self.params.work[i][j] * lambda
                })
                .sum();
            *r = work / self.params.capacity[j];
        }
        rho
    }

    pub fn expected_delays(&self, l1: f64, l2: f64, action: &Action) -> (f64, f64) {
        let rho = self.utilization(l1, l2, action);
        let d = |i: usize| {
            self.params.front_delay
                + (0..NUM_NODES)
                    .map(|j| action.routing(i, j) * self.node_delay(i, j, rho[j]))
                    .sum::<f64>()
        };
        (d(0), d(1))
    }

    fn delay_bounds(&self, i: usize) -> (f64, f64) {
        let p = &self.params;
        let lo = p.front_delay + p.base_delay[i].iter().copied().fold(f64::INFINITY, f64::min);
        (lo, p.front_delay + p.max_delay)
    }

    /// One memoryless step. Noise is a pure function of `(seed, t)`.
    pub fn try_step(&self, l1: f64, l2: f64, action: &Action, t: u64) -> Result<StepOutcome> {
        if !(l1 >= 0.0) || !(l2 >= 0.0) {
            return Err(Error::invalid(format!("negative offered load ({l1}, {l2})")));
        }
        action.validate()?;
        Ok(self.step_unchecked(l1, l2, action, t))
    }

    fn step_unchecked(&self, l1: f64, l2: f64, action: &Action, t: u64) -> StepOutcome {
        let (e1, e2) = self.expected_delays(l1, l2, action);
        let (d1, d2) = if self.params.noise > 0.0 {
            let mut r = rng::stream_at(self.params.seed, NOISE_STREAM, t);
            let x1: f64 = StandardNormal.sample(&mut r);
            let x2: f64 = StandardNormal.sample(&mut r);
            let noisy = |i: usize, e: f64, x: f64| {
                let (lo, hi) = self.delay_bounds(i);
                (e * (1.0 + self.params.noise * x)).clamp(lo, hi)
            };
            (noisy(0, e1, x1), noisy(1, e2, x2))
        } else {
            (e1, e2)
        };
        StepOutcome {
            d1,
            d2,
            expected_d1: e1,
            expected_d2: e2,
            lc1: l1 * (1.0 - action.b1),
            lc2: l2 * (1.0 - action.b2),
        }
    }
}

/// `min(d_max, d0_ij / max(eps, 1 - rho))`.
pub fn node_delay(params: &GroundTruthParams, i: usize, j: usize, rho: f64) -> f64 {
    let d0 = params.base_delay[i][j];
    (d0 / (1.0 - rho).max(UTILIZATION_EPS)).min(params.max_delay)
}

impl DelayModel for GroundTruth {
    fn delays(&self, l1: f64, l2: f64, action: &Action) -> (f64, f64) {
        self.expected_delays(l1, l2, action)
    }
}

impl Environment for GroundTruth {
    fn step(&self, l1: f64, l2: f64, action: &Action, t: u64) -> StepOutcome {
        self.step_unchecked(l1.max(0.0), l2.max(0.0), action, t)
    }

    fn label(&self) -> &'static str {
        "ground-truth"
    }
}
