//! Frozen-policy evaluation: per-step normalized reward against an oracle
//! reference, random baselines and objective contrasts.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{observe, ActMode, PolicyNet};
use crate::env::{DelayModel, Environment};
use crate::error::{Error, Result};
use crate::loadgen::LoadPattern;
use crate::mesh::{ActionGrid, MeshState};
use crate::oracle::OracleCache;
use crate::rewards::{reward_from_carried, ManagementObjective};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedReward {
    pub value: f64,
    /// Set when the obtained reward beats a zero optimum.
    pub flagged: bool,
}

/// `obtained / optimal`; a zero optimum counts as fully met.
pub fn normalized_reward(obtained: f64, optimal: f64) -> Result<NormalizedReward> {
    if !(optimal >= 0.0) {
        return Err(Error::invalid(format!("optimal reward must be >= 0, got {optimal}")));
    }
    if optimal == 0.0 {
        return Ok(NormalizedReward {
            value: 1.0,
            flagged: obtained > 0.0,
        });
    }
    Ok(NormalizedReward {
        value: obtained / optimal,
        flagged: false,
    })
}

/// Which delay model supplies the optimal reward in the NR denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// Expected (noiseless) ground-truth delays.
    #[default]
    GroundTruth,
    /// The learned surrogate.
    Surrogate,
}

/// Chooses a grid action index for the current state.
pub trait Controller {
    fn choose(&mut self, state: &MeshState, t: u64) -> usize;
}

pub struct PolicyController<'a> {
    policy: &'a PolicyNet,
    mode: ActMode,
    rng: ChaCha8Rng,
}

impl<'a> PolicyController<'a> {
    pub fn greedy(policy: &'a PolicyNet) -> Self {
        Self::new(policy, ActMode::Greedy, 0)
    }

    pub fn new(policy: &'a PolicyNet, mode: ActMode, seed: u64) -> Self {
        PolicyController {
            policy,
            mode,
            rng: rng::seeded(seed),
        }
    }
}

impl Controller for PolicyController<'_> {
    fn choose(&mut self, state: &MeshState, _t: u64) -> usize {
        let obs = observe(state, &self.policy.normalizer);
        self.policy.act(&obs, self.mode, &mut self.rng)
    }
}

/// Plays the exhaustive-search optimum under its own delay model.
pub struct OracleController<'a, M: ?Sized> {
    cache: OracleCache<'a, M>,
}

impl<'a, M: DelayModel + ?Sized> OracleController<'a, M> {
    pub fn new(model: &'a M, objective: ManagementObjective, grid: &'a ActionGrid) -> Self {
        OracleController {
            cache: OracleCache::new(model, objective, grid),
        }
    }
}

impl<M: DelayModel + ?Sized> Controller for OracleController<'_, M> {
    fn choose(&mut self, state: &MeshState, _t: u64) -> usize {
        self.cache.get(state.l1, state.l2).best_index
    }
}

/// Uniform over the grid; draws are indexed by step, so the sequence does
/// not depend on what other controllers do.
pub struct RandomController {
    seed: u64,
    n: usize,
}

impl RandomController {
    pub fn new(grid: &ActionGrid, seed: u64) -> Self {
        RandomController { seed, n: grid.len() }
    }
}

impl Controller for RandomController {
    fn choose(&mut self, _state: &MeshState, t: u64) -> usize {
        rng::stream_at(self.seed, 0xBA5E, t).random_range(0..self.n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scenario: u32,
    pub environment: String,
    pub load_pattern: String,
    pub steps: u64,
    pub anr: f64,
    pub nr_series: Vec<f64>,
    pub flagged_steps: Vec<u64>,
    pub load: Vec<(f64, f64)>,
    pub blocked: Vec<(f64, f64)>,
    pub carried: Vec<(f64, f64)>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub optimal_rewards: Vec<f64>,
}

impl EvaluationReport {
    /// Mean blocked load per service over the given steps.
    pub fn mean_blocked(&self, steps: &[usize]) -> (f64, f64) {
        if steps.is_empty() {
            return (0.0, 0.0);
        }
        let n = steps.len() as f64;
        let s = steps
            .iter()
            .fold((0.0, 0.0), |a, &i| (a.0 + self.blocked[i].0, a.1 + self.blocked[i].1));
        (s.0 / n, s.1 / n)
    }
}

/// Runs `controller` for `steps` steps. The previous step's observed delays
/// feed the next state; the first state sees zero delay.
#[allow(clippy::too_many_arguments)]
pub fn run_scenario<C, E, M>(
    controller: &mut C,
    env: &E,
    objective: &ManagementObjective,
    pattern: &LoadPattern,
    steps: u64,
    reference: &M,
    grid: &ActionGrid,
) -> Result<EvaluationReport>
where
    C: Controller + ?Sized,
    E: Environment + ?Sized,
    M: DelayModel + ?Sized,
{
    if steps == 0 {
        return Err(Error::invalid("steps must be >= 1"));
    }
    objective.validate()?;
    pattern.validate()?;
    let mut oracle = OracleCache::new(reference, *objective, grid);
    let n = steps as usize;
    let mut rep = EvaluationReport {
        scenario: objective.kind.scenario(),
        environment: env.label().to_string(),
        load_pattern: pattern.name().to_string(),
        steps,
        anr: 0.0,
        nr_series: Vec::with_capacity(n),
        flagged_steps: Vec::new(),
        load: Vec::with_capacity(n),
        blocked: Vec::with_capacity(n),
        carried: Vec::with_capacity(n),
        actions: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
        optimal_rewards: Vec::with_capacity(n),
    };
    let mut prev = (0.0, 0.0);
    for t in 0..steps {
        let (l1, l2) = pattern.loads(t);
        let state = MeshState {
            d1: prev.0,
            d2: prev.1,
            l1,
            l2,
        };
        let a = controller.choose(&state, t);
        let action = grid
            .get(a)
            .ok_or_else(|| Error::invalid(format!("controller chose action {a} outside the grid")))?;
        let out = env.step(l1, l2, action, t);
        let r = reward_from_carried(objective, out.lc1, out.lc2, out.expected_d1, out.expected_d2);
        let best = oracle.get(l1, l2).best_reward;
        let nr = normalized_reward(r, best)?;
        if nr.flagged || nr.value > 1.0 + 1e-9 {
            rep.flagged_steps.push(t);
        }
        prev = (out.d1, out.d2);
        rep.nr_series.push(nr.value);
        rep.load.push((l1, l2));
        rep.blocked.push((l1 - out.lc1, l2 - out.lc2));
        rep.carried.push((out.lc1, out.lc2));
        rep.actions.push(a);
        rep.rewards.push(r);
        rep.optimal_rewards.push(best);
    }
    rep.anr = rep.nr_series.iter().sum::<f64>() / n as f64;
    Ok(rep)
}

/// [`run_scenario`] with uniformly random grid actions.
pub fn random_baseline<E, M>(
    env: &E,
    objective: &ManagementObjective,
    pattern: &LoadPattern,
    steps: u64,
    reference: &M,
    grid: &ActionGrid,
    seed: u64,
) -> Result<EvaluationReport>
where
    E: Environment + ?Sized,
    M: DelayModel + ?Sized,
{
    run_scenario(&mut RandomController::new(grid, seed), env, objective, pattern, steps, reference, grid)
}

/// Blocking series of two controllers driven by the same load draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Contrast {
    pub load: Vec<(f64, f64)>,
    pub first: Vec<(f64, f64)>,
    pub second: Vec<(f64, f64)>,
    /// Steps in the top quartile of total offered load.
    pub peak_steps: Vec<usize>,
}

impl Contrast {
    pub fn mean_at_peak(series: &[(f64, f64)], peak: &[usize]) -> (f64, f64) {
        let n = peak.len().max(1) as f64;
        let s = peak
            .iter()
            .fold((0.0, 0.0), |a, &i| (a.0 + series[i].0, a.1 + series[i].1));
        (s.0 / n, s.1 / n)
    }
}

/// Indices of the top quarter of steps by `l1 + l2`, earliest first on ties.
pub fn peak_steps(load: &[(f64, f64)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..load.len()).collect();
    idx.sort_by(|&a, &b| {
        let (sa, sb) = (load[a].0 + load[a].1, load[b].0 + load[b].1);
        sb.total_cmp(&sa).then(a.cmp(&b))
    });
    idx.truncate(load.len().div_ceil(4));
    idx.sort_unstable();
    idx
}

/// Drives both controllers through `env` on identical loads and returns
/// their per-service blocked load.
pub fn objective_contrast<C1, C2, E>(
    first: &mut C1,
    second: &mut C2,
    env: &E,
    pattern: &LoadPattern,
    steps: u64,
    grid: &ActionGrid,
) -> Result<Contrast>
where
    C1: Controller,
    C2: Controller,
    E: Environment + ?Sized,
{
    pattern.validate()?;
    let run = |c: &mut dyn Controller| -> Result<Vec<(f64, f64)>> {
        let mut prev = (0.0, 0.0);
        let mut out = Vec::with_capacity(steps as usize);
        for t in 0..steps {
            let (l1, l2) = pattern.loads(t);
            let a = c.choose(&MeshState { d1: prev.0, d2: prev.1, l1, l2 }, t);
            let action = grid
                .get(a)
                .ok_or_else(|| Error::invalid(format!("action {a} outside the grid")))?;
            let o = env.step(l1, l2, action, t);
            prev = (o.d1, o.d2);
            out.push((l1 - o.lc1, l2 - o.lc2));
        }
        Ok(out)
    };
    let a = run(first)?;
    let b = run(second)?;
    let load: Vec<(f64, f64)> = (0..steps).map(|t| pattern.loads(t)).collect();
    let peak = peak_steps(&load);
    Ok(Contrast {
        load,
        first: a,
        second: b,
        peak_steps: peak,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Simulator;
    use crate::ground_truth::{GroundTruth, GroundTruthParams};
    use crate::mesh::build_action_grid;
    use crate::rewards::ObjectiveKind;
    use proptest::prelude::*;

    #[test]
    fn normalized_reward_examples() {
        assert_eq!(normalized_reward(1.0, 1.0).unwrap().value, 1.0);
        let a = normalized_reward(0.5, 1.0).unwrap().value;
        assert_eq!(a, 0.5);
        assert_eq!((a + 1.0) / 2.0, 0.75);
        let over = normalized_reward(1.1, 1.0).unwrap();
        assert!((over.value - 1.1).abs() < 1e-12);
        assert_eq!(normalized_reward(0.0, 0.0).unwrap(), NormalizedReward { value: 1.0, flagged: false });
        assert_eq!(normalized_reward(0.2, 0.0).unwrap(), NormalizedReward { value: 1.0, flagged: true });
        assert!(normalized_reward(0.2, -0.1).is_err());
        assert!(normalized_reward(0.2, f64::NAN).is_err());
    }

    #[test]
    fn oracle_policy_scores_one() {
        let gt = GroundTruth::new(GroundTruthParams::default().noiseless()).unwrap();
        let grid = build_action_grid(4).unwrap();
        let sim = Simulator::new(&gt);
        for kind in ObjectiveKind::ALL {
            let o = ManagementObjective::new(kind);
            let mut c = OracleController::new(&gt, o, &grid);
            let rep = run_scenario(&mut c, &sim, &o, &LoadPattern::random(5), 300, &gt, &grid).unwrap();
            assert!((rep.anr - 1.0).abs() < 1e-9, "{kind}: {}", rep.anr);
            assert!(rep.flagged_steps.is_empty());
        }
    }

    #[test]
    fn random_baseline_is_deterministic_and_bounded() {
        let gt = GroundTruth::new(GroundTruthParams::default()).unwrap();
        let grid = build_action_grid(6).unwrap();
        let o = ManagementObjective::new(ObjectiveKind::Mo1);
        let p = LoadPattern::sinusoidal();
        let a = random_baseline(&gt, &o, &p, 200, &gt, &grid, 1).unwrap();
        let b = random_baseline(&gt, &o, &p, 200, &gt, &grid, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.nr_series.iter().all(|&v| (0.0..=1.0 + 1e-9).contains(&v)));
        assert_eq!(a.environment, "ground-truth");
        assert_eq!(a.load_pattern, "sinusoidal");
    }

    #[test]
    fn identical_controllers_give_identical_series() {
        let gt = GroundTruth::new(GroundTruthParams::default()).unwrap();
        let grid = build_action_grid(6).unwrap();
        let mut a = RandomController::new(&grid, 3);
        let mut b = RandomController::new(&grid, 3);
        let c = objective_contrast(&mut a, &mut b, &gt, &LoadPattern::sinusoidal(), 200, &grid).unwrap();
        assert_eq!(c.first, c.second);
        assert_eq!(c.peak_steps.len(), 50);
    }

    #[test]
    fn peak_selection() {
        let load = vec![(1.0, 1.0), (5.0, 5.0), (2.0, 2.0), (9.0, 0.0), (0.0, 0.0)];
        assert_eq!(peak_steps(&load), vec![1, 3]);
    }

    #[test]
    fn zero_steps_rejected() {
        let gt = GroundTruth::new(GroundTruthParams::default()).unwrap();
        let grid = build_action_grid(2).unwrap();
        let o = ManagementObjective::new(ObjectiveKind::Mo1);
        assert!(random_baseline(&gt, &o, &LoadPattern::sinusoidal(), 0, &gt, &grid, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn anr_is_mean_and_nr_bounded(seed in 0u64..1000, kind in 0usize..3) {
            let gt = GroundTruth::new(GroundTruthParams { seed, ..Default::default() }).unwrap();
            let reference = GroundTruth::new(GroundTruthParams::default().noiseless()).unwrap();
            let grid = build_action_grid(3).unwrap();
            let o = ManagementObjective::new(ObjectiveKind::ALL[kind]);
            let rep = random_baseline(&gt, &o, &LoadPattern::random(seed), 120, &reference, &grid, seed).unwrap();
            let mean = rep.nr_series.iter().sum::<f64>() / rep.nr_series.len() as f64;
            prop_assert!((rep.anr - mean).abs() < 1e-12);
            prop_assert!(rep.nr_series.iter().all(|&v| v <= 1.0 + 1e-9));
        }
    }
}
