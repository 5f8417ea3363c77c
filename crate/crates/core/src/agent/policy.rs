//! Stochastic policy over the action grid plus a state-value baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{Activations, Mlp};
use crate::error::{Error, Result};
use crate::mesh::{ActionGrid, MeshState, MAX_GRID_LEVELS};
use crate::rng;

pub const OBS_DIM: usize = 4;

/// Scale constants mapping raw state to roughly unit range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub load_scale: f64,
    pub delay_scale: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer {
            load_scale: 20.0,
            delay_scale: 2.0,
        }
    }
}

/// `(d1, d2, l1, l2)` divided by the delay and load scales.
pub fn observe(state: &MeshState, norm: &Normalizer) -> [f32; OBS_DIM] {
    [
        (state.d1 / norm.delay_scale) as f32,
        (state.d2 / norm.delay_scale) as f32,
        (state.l1 / norm.load_scale) as f32,
        (state.l2 / norm.load_scale) as f32,
    ]
}

/// How the grid is parameterized by the policy head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// One categorical over every grid action.
    Flat,
    /// Four independent categoricals, one per action dimension.
    #[default]
    Factored,
}

impl HeadKind {
    pub fn factors(self, grid_levels: usize) -> Vec<usize> {
        match self {
            HeadKind::Flat => vec![grid_levels.pow(4)],
            HeadKind::Factored => vec![grid_levels; 4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Per-factor softmax probabilities for one observation.
#[derive(Debug, Clone, Default)]
pub struct Distribution {
    pub probs: Vec<f32>,
    factors: Vec<usize>,
}

impl Distribution {
    fn from_logits(logits: &[f32], factors: &[usize]) -> Self {
        let mut probs = Vec::with_capacity(logits.len());
        let mut off = 0;
        for &n in factors {
            let seg = &logits[off..off + n];
            let max = seg.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let start = probs.len();
            let mut sum = 0.0;
            for &z in seg {
                let e = (z - max).exp();
                sum += e;
                probs.push(e);
            }
            probs[start..].iter_mut().for_each(|p| *p /= sum);
            off += n;
        }
        Distribution {
            probs,
            factors: factors.to_vec(),
        }
    }

    fn segments(&self) -> impl Iterator<Item = (usize, &[f32])> {
        let mut off = 0;
        self.factors.iter().map(move |&n| {
            let s = off;
            off += n;
            (s, &self.probs[s..s + n])
        })
    }

    /// Sub-index of each factor for a grid action index.
    pub fn split_index(&self, mut index: usize) -> Vec<usize> {
        let mut subs = vec![0; self.factors.len()];
        for (k, &n) in self.factors.iter().enumerate().rev() {
            subs[k] = index % n;
            index /= n;
        }
        subs
    }

    fn join(&self, subs: &[usize]) -> usize {
        subs.iter().zip(&self.factors).fold(0, |acc, (&s, &n)| acc * n + s)
    }

    pub fn log_prob(&self, index: usize) -> f32 {
        let subs = self.split_index(index);
        self.segments()
            .zip(subs)
            .map(|((_, p), s)| p[s].max(f32::MIN_POSITIVE).ln())
            .sum()
    }

    pub fn entropy(&self) -> f32 {
        self.segments()
            .map(|(_, p)| -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f32>())
            .sum()
    }

    /// Lowest-index mode.
    pub fn greedy(&self) -> usize {
        let subs: Vec<usize> = self
            .segments()
            .map(|(_, p)| {
                let mut best = 0;
                for (i, &x) in p.iter().enumerate() {
                    if x > p[best] {
                        best = i;
                    }
                }
                best
            })
            .collect();
        self.join(&subs)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let subs: Vec<usize> = self
            .segments()
            .map(|(_, p)| {
                let u: f32 = rng.random();
                let mut acc = 0.0;
                for (i, &x) in p.iter().enumerate() {
                    acc += x;
                    if u < acc {
                        return i;
                    }
                }
                // rounding left u above the cumulative sum
                p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
            })
            .collect();
        self.join(&subs)
    }

    /// Gradient of `coef * log_prob(index) + ent_coef * entropy` with
    /// respect to the logits, written into `out`.
    pub fn logit_grad(&self, index: usize, coef: f32, ent_coef: f32, out: &mut [f32]) {
        let subs = self.split_index(index);
        for ((off, p), s) in self.segments().zip(subs) {
            let h: f32 = -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f32>();
            for (j, &pj) in p.iter().enumerate() {
                let onehot = if j == s { 1.0 } else { 0.0 };
                let mut g = coef * (onehot - pj);
                if ent_coef != 0.0 && pj > 0.0 {
                    g += ent_coef * (-pj * (pj.ln() + h));
                }
                out[off + j] = g;
            }
        }
    }
}

/// Actor and critic share no weights; both take the normalized
/// observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub head: HeadKind,
    pub grid_levels: usize,
    pub normalizer: Normalizer,
    pub actor: Mlp,
    pub critic: Mlp,
}

impl PolicyNet {
    pub fn new(grid: &ActionGrid, head: HeadKind, hidden: &[usize], normalizer: Normalizer, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let out: usize = head.factors(grid.levels()).iter().sum();
        let mut sizes = vec![OBS_DIM];
        sizes.extend_from_slice(hidden);
        let mut actor_sizes = sizes.clone();
        actor_sizes.push(out);
        sizes.push(1);
        PolicyNet {
            head,
            grid_levels: grid.levels(),
            normalizer,
            // small output gain: near-uniform initial policy
            actor: Mlp::new(&actor_sizes, 0.01, &mut r),
            critic: Mlp::new(&sizes, 1.0, &mut r),
        }
    }

    pub fn factors(&self) -> Vec<usize> {
        self.head.factors(self.grid_levels)
    }

    pub fn num_actions(&self) -> usize {
        self.grid_levels.pow(4)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::format("policy checkpoint", m.to_string()));
        if !(2..=MAX_GRID_LEVELS).contains(&self.grid_levels) {
            return bad("grid levels out of range");
        }
        let n = &self.normalizer;
        if !(n.load_scale > 0.0 && n.load_scale.is_finite() && n.delay_scale > 0.0 && n.delay_scale.is_finite()) {
            return bad("normalizer scales must be positive and finite");
        }
        if !self.actor.is_consistent() || !self.critic.is_consistent() {
            return bad("inconsistent network shapes or non-finite weights");
        }
        let out: usize = self.factors().iter().sum();
        if self.actor.input_dim() != OBS_DIM || self.actor.output_dim() != out {
            return bad("actor dimensions do not match the head");
        }
        if self.critic.input_dim() != OBS_DIM || self.critic.output_dim() != 1 {
            return bad("critic dimensions");
        }
        Ok(())
    }

    pub fn distribution(&self, obs: &[f32; OBS_DIM]) -> Distribution {
        Distribution::from_logits(&self.actor.forward(obs), &self.factors())
    }

    pub(crate) fn distribution_with(&self, obs: &[f32], acts: &mut Activations) -> Distribution {
        self.actor.forward_into(obs, acts);
        Distribution::from_logits(acts.output(), &self.factors())
    }

    pub fn value(&self, obs: &[f32; OBS_DIM]) -> f32 {
        self.critic.forward(obs)[0]
    }

    pub fn act<R: Rng>(&self, obs: &[f32; OBS_DIM], mode: ActMode, rng: &mut R) -> usize {
        let d = self.distribution(obs);
        match mode {
            ActMode::Greedy => d.greedy(),
            ActMode::Sample => d.sample(rng),
        }
    }
}
