//! Clipped-surrogate policy optimization on the surrogate-backed simulator.
//!
//! With a zero discount every decision is a one-step contextual bandit: the
//! advantage of a step is its (scaled) reward minus the critic's baseline
//! for that observation, with no bootstrapping across steps.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::{Activations, Adam, Mlp};
use super::policy::{observe, ActMode, HeadKind, Normalizer, PolicyNet, OBS_DIM};
use crate::env::{DelayModel, Environment, Simulator};
use crate::error::{Error, Result};
use crate::eval::normalized_reward;
use crate::loadgen::LoadPattern;
use crate::mesh::{ActionGrid, MeshState};
use crate::oracle::OracleCache;
use crate::rewards::{reward_from_carried, ManagementObjective};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub rollout_length: usize,
    pub clip_ratio: f64,
    pub epochs_per_update: usize,
    pub total_steps: u64,
    pub entropy_coeff: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub hidden: Vec<usize>,
    pub head: HeadKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            gamma: 0.0,
            batch_size: 64,
            rollout_length: 1024,
            clip_ratio: 0.2,
            epochs_per_update: 10,
            total_steps: 50_000,
            entropy_coeff: 0.05,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            hidden: vec![64, 64],
            head: HeadKind::Factored,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.rollout_length < self.batch_size {
            return bad("need 0 < batch_size <= rollout_length");
        }
        if !(self.clip_ratio > 0.0) || self.epochs_per_update == 0 || self.total_steps == 0 {
            return bad("clip_ratio, epochs_per_update and total_steps must be positive");
        }
        if !(self.entropy_coeff >= 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("entropy_coeff must be >= 0 and max_grad_norm > 0");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be nonempty and positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub mean_reward: f64,
    pub anr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    /// ANR of the last window ending at or before `step`.
    pub fn anr_at(&self, step: u64) -> Option<f64> {
        self.points.iter().take_while(|p| p.step <= step).last().map(|p| p.anr)
    }
}

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, Default)]
struct RunningStat {
    n: f64,
    mean: f64,
    m2: f64,
}

impl RunningStat {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.n < 2.0 {
            1.0
        } else {
            (self.m2 / self.n).sqrt().max(1e-8)
        }
    }
}

/// Per-step advantages `target - value`, optionally standardized over the
/// rollout. Each entry depends only on its own step, up to the shared
/// standardization, so any permutation of the rollout permutes the result.
pub fn compute_advantages(targets: &[f32], values: &[f32], normalize: bool) -> Vec<f32> {
    let mut adv: Vec<f32> = targets.iter().zip(values).map(|(t, v)| t - v).collect();
    if normalize && !adv.is_empty() {
        let n = adv.len() as f64;
        let mean = adv.iter().map(|&a| a as f64).sum::<f64>() / n;
        let var = adv.iter().map(|&a| (a as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        for a in adv.iter_mut() {
            *a = if std > 1e-8 {
                ((*a as f64 - mean) / (std + 1e-8)) as f32
            } else {
                0.0
            };
        }
    }
    adv
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(ratio: f32, advantage: f32, eps: f32) -> f32 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Derivative of [`clipped_surrogate`] with respect to the log-probability.
fn surrogate_logp_grad(ratio: f32, advantage: f32, eps: f32) -> f32 {
    let clipped = (advantage > 0.0 && ratio > 1.0 + eps) || (advantage < 0.0 && ratio < 1.0 - eps);
    if clipped {
        0.0
    } else {
        ratio * advantage
    }
}

struct Rollout {
    obs: Vec<[f32; OBS_DIM]>,
    next_obs: Vec<[f32; OBS_DIM]>,
    actions: Vec<usize>,
    logp: Vec<f32>,
    rewards: Vec<f64>,
    nr: Vec<f64>,
}

impl Rollout {
    fn with_capacity(n: usize) -> Self {
        Rollout {
            obs: Vec::with_capacity(n),
            next_obs: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            logp: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            nr: Vec::with_capacity(n),
        }
    }
}

fn clip_grad(g: &mut Mlp, max_norm: f32) {
    let n = g.norm();
    if n > max_norm {
        g.scale(max_norm / n);
    }
}

/// Trains a fresh policy against `model` used as a memoryless simulator.
pub fn train<M: DelayModel>(
    model: &M,
    objective: &ManagementObjective,
    pattern: &LoadPattern,
    grid: &ActionGrid,
    config: &TrainConfig,
    normalizer: Normalizer,
) -> Result<(PolicyNet, LearningCurve)> {
    config.validate()?;
    objective.validate()?;
    pattern.validate()?;
    let mut policy = PolicyNet::new(grid, config.head, &config.hidden, normalizer, rng::derive_seed(config.seed, 0));
    let curve = train_policy(&mut policy, model, objective, pattern, grid, config)?;
    Ok((policy, curve))
}

/// Continues training an existing policy.
pub fn train_policy<M: DelayModel>(
    policy: &mut PolicyNet,
    model: &M,
    objective: &ManagementObjective,
    pattern: &LoadPattern,
    grid: &ActionGrid,
    config: &TrainConfig,
) -> Result<LearningCurve> {
    config.validate()?;
    if policy.num_actions() != grid.len() {
        return Err(Error::invalid("policy and grid sizes differ"));
    }
    let sim = Simulator::new(model);
    let mut oracle = OracleCache::new(model, *objective, grid);
    let mut act_rng = rng::seeded(rng::derive_seed(config.seed, 1));
    let mut shuffle_rng = rng::seeded(rng::derive_seed(config.seed, 2));
    let mut actor_opt = Adam::new(&policy.actor, config.learning_rate as f32);
    let mut critic_opt = Adam::new(&policy.critic, config.learning_rate as f32);
    let mut stat = RunningStat::default();
    let mut curve = LearningCurve::default();
    let eps = config.clip_ratio as f32;
    let ent = config.entropy_coeff as f32;

    let mut prev_delay = (0.0, 0.0);
    let mut t = 0u64;
    let mut acts = Activations::default();
    let mut critic_acts = Activations::default();
    let n_out: usize = policy.factors().iter().sum();
    let mut g_logits = vec![0.0f32; n_out];

    while t < config.total_steps {
        let len = (config.total_steps - t).min(config.rollout_length as u64) as usize;
        let mut ro = Rollout::with_capacity(len);
        for _ in 0..len {
            let (l1, l2) = pattern.loads(t);
            let state = MeshState {
                d1: prev_delay.0,
                d2: prev_delay.1,
                l1,
                l2,
            };
            let obs = observe(&state, &policy.normalizer);
            let dist = policy.distribution_with(&obs, &mut acts);
            let a = dist.sample(&mut act_rng);
            let action = grid.actions()[a];
            let out = sim.step(l1, l2, &action, t);
            let r = reward_from_carried(objective, out.lc1, out.lc2, out.expected_d1, out.expected_d2);
            let best = oracle.get(l1, l2).best_reward;
            prev_delay = (out.d1, out.d2);
            ro.obs.push(obs);
            ro.next_obs.push(observe(
                &MeshState {
                    d1: out.d1,
                    d2: out.d2,
                    l1: pattern.load(0, t + 1),
                    l2: pattern.load(1, t + 1),
                },
                &policy.normalizer,
            ));
            ro.actions.push(a);
            ro.logp.push(dist.log_prob(a));
            ro.rewards.push(r);
            ro.nr.push(normalized_reward(r, best).map(|n| n.value).unwrap_or(1.0));
            t += 1;
        }

        // raw one-step targets, then scaled by running statistics
        let raw: Vec<f64> = if config.gamma > 0.0 {
            ro.rewards
                .iter()
                .zip(&ro.next_obs)
                .map(|(&r, o)| r + config.gamma * (stat.mean + stat.std() * policy.value(o) as f64))
                .collect()
        } else {
            ro.rewards.clone()
        };
        raw.iter().for_each(|&x| stat.push(x));
        let (mu, sd) = (stat.mean, stat.std());
        let targets: Vec<f32> = raw.iter().map(|&x| ((x - mu) / sd) as f32).collect();
        let values: Vec<f32> = ro.obs.iter().map(|o| policy.value(o)).collect();
        let adv = compute_advantages(&targets, &values, config.normalize_advantages);

        let mut order: Vec<usize> = (0..len).collect();
        let mut last_loss = (0.0f64, 0.0f64);
        for _ in 0..config.epochs_per_update {
            order.shuffle(&mut shuffle_rng);
            for batch in order.chunks(config.batch_size) {
                let scale = 1.0 / batch.len() as f32;
                let mut g_actor = policy.actor.zeroed();
                let mut g_critic = policy.critic.zeroed();
                let (mut pl, mut vl) = (0.0f64, 0.0f64);
                for &i in batch {
                    let dist = policy.distribution_with(&ro.obs[i], &mut acts);
                    let ratio = (dist.log_prob(ro.actions[i]) - ro.logp[i]).exp();
                    pl -= clipped_surrogate(ratio, adv[i], eps) as f64;
                    let coef = surrogate_logp_grad(ratio, adv[i], eps);
                    // descend on -(surrogate + ent * H)
                    dist.logit_grad(ro.actions[i], coef, ent, &mut g_logits);
                    g_logits.iter_mut().for_each(|g| *g *= -scale);
                    policy.actor.backward(&acts, &g_logits, &mut g_actor);

                    policy.critic.forward_into(&ro.obs[i], &mut critic_acts);
                    let err = critic_acts.output()[0] - targets[i];
                    vl += 0.5 * (err * err) as f64;
                    policy.critic.backward(&critic_acts, &[err * scale], &mut g_critic);
                }
                if !pl.is_finite() || !vl.is_finite() || !g_actor.all_finite() || !g_critic.all_finite() {
                    return Err(Error::NonFinite(format!(
                        "step {t}: policy loss {pl}, value loss {vl}, reward mean {mu}, reward std {sd}, \
                         last window mean reward {}",
                        ro.rewards.iter().sum::<f64>() / len as f64
                    )));
                }
                clip_grad(&mut g_actor, config.max_grad_norm as f32);
                clip_grad(&mut g_critic, config.max_grad_norm as f32);
                actor_opt.step(&mut policy.actor, &g_actor);
                critic_opt.step(&mut policy.critic, &g_critic);
                last_loss = (pl, vl);
            }
        }
        log::debug!(
            "step {t}: policy loss {:.4}, value loss {:.4}",
            last_loss.0,
            last_loss.1
        );
        if !policy.actor.all_finite() || !policy.critic.all_finite() {
            return Err(Error::NonFinite(format!("step {t}: weights diverged")));
        }
        let n = len as f64;
        curve.points.push(CurvePoint {
            step: t,
            mean_reward: ro.rewards.iter().sum::<f64>() / n,
            anr: ro.nr.iter().sum::<f64>() / n,
        });
    }
    Ok(curve)
}

/// Greedy action for a raw state.
pub fn greedy_action(policy: &PolicyNet, state: &MeshState) -> usize {
    let obs = observe(state, &policy.normalizer);
    policy.act(&obs, ActMode::Greedy, &mut rng::seeded(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_action_grid, Action};
    use proptest::prelude::*;

    struct Flat;
    impl DelayModel for Flat {
        fn delays(&self, _: f64, _: f64, _: &Action) -> (f64, f64) {
            (0.03, 0.03)
        }
    }

    #[test]
    fn constant_reward_gives_zero_advantage() {
        let adv = compute_advantages(&[2.5; 64], &[0.7; 64], true);
        assert!(adv.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn advantages_permute_with_rollout() {
        let targets: Vec<f32> = (0..50).map(|i| ((i * 37) % 11) as f32 * 0.3).collect();
        let values: Vec<f32> = (0..50).map(|i| ((i * 13) % 7) as f32 * 0.1).collect();
        let base = compute_advantages(&targets, &values, true);
        let mut perm: Vec<usize> = (0..50).collect();
        perm.shuffle(&mut rng::seeded(9));
        let t2: Vec<f32> = perm.iter().map(|&i| targets[i]).collect();
        let v2: Vec<f32> = perm.iter().map(|&i| values[i]).collect();
        let shuffled = compute_advantages(&t2, &v2, true);
        for (k, &i) in perm.iter().enumerate() {
            assert!((shuffled[k] - base[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn surrogate_gradient_vanishes_outside_clip() {
        assert_eq!(surrogate_logp_grad(1.5, 1.0, 0.2), 0.0);
        assert_eq!(surrogate_logp_grad(0.5, -1.0, 0.2), 0.0);
        assert_eq!(surrogate_logp_grad(1.1, 2.0, 0.2), 2.2);
        assert_eq!(surrogate_logp_grad(1.5, -1.0, 0.2), -1.5);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { gamma: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { rollout_length: 32, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let grid = build_action_grid(3).unwrap();
        let cfg = TrainConfig { total_steps: 600, rollout_length: 200, batch_size: 50, epochs_per_update: 2, seed: 3, ..Default::default() };
        let o = ManagementObjective::new(crate::rewards::ObjectiveKind::Mo1);
        let p = LoadPattern::random(4);
        let (a, ca) = train(&Flat, &o, &p, &grid, &cfg, Normalizer::default()).unwrap();
        let (b, cb) = train(&Flat, &o, &p, &grid, &cfg, Normalizer::default()).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a, b);
        assert_eq!(ca.points.len(), 3);
        assert!(ca.points.windows(2).all(|w| w[0].step < w[1].step));
    }

    #[test]
    fn learns_to_stop_blocking_when_delays_are_flat() {
        // with constant low delay the best action never blocks
        let grid = build_action_grid(3).unwrap();
        let cfg = TrainConfig { total_steps: 8192, seed: 1, ..Default::default() };
        let o = ManagementObjective::new(crate::rewards::ObjectiveKind::Mo1);
        let (policy, curve) = train(&Flat, &o, &LoadPattern::random(2), &grid, &cfg, Normalizer::default()).unwrap();
        let first = curve.points.first().unwrap().anr;
        let last = curve.points.last().unwrap().anr;
        assert!(last > first + 0.2, "{first} -> {last}");
        let a = grid.actions()[greedy_action(&policy, &MeshState { d1: 0.03, d2: 0.03, l1: 10.0, l2: 10.0 })];
        assert_eq!((a.b1, a.b2), (0.0, 0.0));
    }

    proptest! {
        #[test]
        fn clipped_objective_is_bounded(ratio in 0.0f32..5.0, adv in -10.0f32..10.0, eps in 0.01f32..0.5) {
            let s = clipped_surrogate(ratio, adv, eps);
            prop_assert!(s <= (1.0 + eps) * adv.abs() + 1e-5);
            // never more optimistic than the unclipped term
            prop_assert!(s <= ratio * adv + 1e-5);
        }
    }
}
