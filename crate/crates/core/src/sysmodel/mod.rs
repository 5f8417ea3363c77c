//! Surrogate system model: trace collection from the ground truth, a bagged
//! regression-tree fit of `(l1, l2, p11, p21, b1, b2) -> (d1, d2)`, and
//! accuracy scoring against a mean predictor.

pub mod forest;
pub mod tree;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use forest::{Forest, ForestParams};
pub use tree::Dataset;

use crate::env::DelayModel;
use crate::error::{Error, Result};
use crate::ground_truth::GroundTruth;
use crate::loadgen::LoadPattern;
use crate::mesh::{Action, ActionGrid, EpisodeRecord};
use crate::rng;

pub const MODEL_FORMAT: &str = "meshrl-forest";
pub const MODEL_VERSION: u32 = 1;
pub const N_FEATURES: usize = 6;
pub const MIN_FIT_RECORDS: usize = 100;

const ACTION_STREAM: u64 = 0xAC71;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollectionMode {
    Random,
    Grid,
}

impl fmt::Display for CollectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CollectionMode::Random => "random",
            CollectionMode::Grid => "grid",
        })
    }
}

impl std::str::FromStr for CollectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(CollectionMode::Random),
            "grid" => Ok(CollectionMode::Grid),
            _ => Err(Error::invalid(format!("unknown collection mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceMeta {
    pub mode: CollectionMode,
    pub seed: u64,
    pub steps: u64,
    /// Samples per grid cell; 1 for random traces.
    pub repetitions: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub records: Vec<EpisodeRecord>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Disjoint train/test split: step-index parity for random traces,
    /// repetition-index parity for grid sweeps.
    pub fn split(&self) -> (Trace, Trace) {
        let cells = match self.meta.mode {
            CollectionMode::Random => 1,
            CollectionMode::Grid => (self.records.len() as u64 / self.meta.repetitions.max(1)).max(1),
        };
        let (train, test): (Vec<_>, Vec<_>) = self.records.iter().partition(|r| (r.t / cells) % 2 == 0);
        let part = |records: Vec<EpisodeRecord>| Trace {
            meta: TraceMeta {
                steps: records.len() as u64,
                ..self.meta
            },
            records,
        };
        (part(train), part(test))
    }
}

fn record(t: u64, l1: f64, l2: f64, action: Action, d1: f64, d2: f64, lc1: f64, lc2: f64) -> EpisodeRecord {
    EpisodeRecord {
        t,
        l1,
        l2,
        action,
        d1,
        d2,
        lc1,
        lc2,
        reward: None,
        optimal_reward: None,
    }
}

/// Random loads and uniformly random grid actions, one record per step.
pub fn collect_trace_random(
    env: &GroundTruth,
    grid: &ActionGrid,
    pattern: &LoadPattern,
    steps: u64,
    seed: u64,
) -> Result<Trace> {
    if steps == 0 {
        return Err(Error::invalid("trace needs at least one step"));
    }
    if grid.is_empty() {
        return Err(Error::invalid("empty action grid"));
    }
    pattern.validate()?;
    let mut records = Vec::with_capacity(steps as usize);
    for t in 0..steps {
        let (l1, l2) = pattern.loads(t);
        let mut r = rng::stream_at(seed, ACTION_STREAM, t);
        let action = grid.actions()[r.random_range(0..grid.len())];
        let out = env.try_step(l1, l2, &action, rng::derive_seed(seed, t))?;
        records.push(record(t, l1, l2, action, out.d1, out.d2, out.lc1, out.lc2));
    }
    Ok(Trace {
        meta: TraceMeta {
            mode: CollectionMode::Random,
            seed,
            steps,
            repetitions: 1,
        },
        records,
    })
}

/// Full factorial sweep: every load pair of `levels` crossed with every grid
/// action, `repetitions` times. Repetition is the outermost loop.
pub fn collect_trace_grid(
    env: &GroundTruth,
    grid: &ActionGrid,
    levels: &[f64],
    repetitions: u64,
    seed: u64,
) -> Result<Trace> {
    if repetitions == 0 {
        return Err(Error::invalid("repetitions must be >= 1"));
    }
    if levels.is_empty() {
        return Err(Error::invalid("load levels must be nonempty"));
    }
    let cells = levels.len() * levels.len() * grid.len();
    let mut records = Vec::with_capacity(cells * repetitions as usize);
    let mut t = 0u64;
    for _ in 0..repetitions {
        for &l1 in levels {
            for &l2 in levels {
                for &action in grid.actions() {
                    let out = env.try_step(l1, l2, &action, rng::derive_seed(seed, t))?;
                    records.push(record(t, l1, l2, action, out.d1, out.d2, out.lc1, out.lc2));
                    t += 1;
                }
            }
        }
    }
    Ok(Trace {
        meta: TraceMeta {
            mode: CollectionMode::Grid,
            seed,
            steps: t,
            repetitions,
        },
        records,
    })
}

pub fn features(l1: f64, l2: f64, a: &Action) -> [f64; N_FEATURES] {
    [l1, l2, a.p11, a.p21, a.b1, a.b2]
}

/// Observed range of one column in the training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Range {
        values.fold(
            Range {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            },
            |r, v| Range {
                min: r.min.min(v),
                max: r.max.max(v),
            },
        )
    }
}

/// Fitted surrogate. Serialized as a JSON document tagged with
/// [`MODEL_FORMAT`] and [`MODEL_VERSION`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemModel {
    pub format: String,
    pub version: u32,
    pub params: ForestParams,
    pub seed: u64,
    #[serde(default)]
    pub config_hash: Option<String>,
    pub feature_ranges: Vec<Range>,
    pub target_ranges: [Range; 2],
    pub target_mean: [f64; 2],
    pub forest: Forest,
}

impl SystemModel {
    pub fn fit(trace: &Trace, params: &ForestParams, seed: u64) -> Result<SystemModel> {
        if trace.records.len() < MIN_FIT_RECORDS {
            return Err(Error::invalid(format!(
                "trace has {} records, need at least {MIN_FIT_RECORDS}",
                trace.records.len()
            )));
        }
        let mut data = Dataset::new(N_FEATURES);
        for r in &trace.records {
            data.push(&features(r.l1, r.l2, &r.action), [r.d1, r.d2]);
        }
        let forest = Forest::fit(&data, params, seed)?;
        let feature_ranges = (0..N_FEATURES)
            .map(|f| Range::of((0..data.len()).map(|i| data.row(i)[f])))
            .collect();
        let target_ranges = [0, 1].map(|k| Range::of(data.y.iter().map(|y| y[k])));
        let n = data.len() as f64;
        let target_mean = [0, 1].map(|k| data.y.iter().map(|y| y[k]).sum::<f64>() / n);
        Ok(SystemModel {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            params: *params,
            seed,
            config_hash: None,
            feature_ranges,
            target_ranges,
            target_mean,
            forest,
        })
    }

    /// Ensemble mean. Inputs outside the training ranges fall into the
    /// nearest leaf region; the output never leaves the target range.
    pub fn predict(&self, l1: f64, l2: f64, p11: f64, p21: f64, b1: f64, b2: f64) -> (f64, f64) {
        let p = self.forest.predict(&[l1, l2, p11, p21, b1, b2]);
        (p[0], p[1])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<SystemModel> {
        let m: SystemModel = serde_json::from_str(text).map_err(|e| Error::format("model file", e.to_string()))?;
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        let bad = |d: String| Err(Error::format("model file", d));
        if self.format != MODEL_FORMAT {
            return bad(format!("format tag `{}`, expected `{MODEL_FORMAT}`", self.format));
        }
        if self.version != MODEL_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.forest.n_features != N_FEATURES || self.feature_ranges.len() != N_FEATURES {
            return bad("feature width mismatch".to_string());
        }
        if self.forest.trees.is_empty() {
            return bad("model has no trees".to_string());
        }
        for (k, t) in self.forest.trees.iter().enumerate() {
            if let Err(e) = t.validate(N_FEATURES) {
                return bad(format!("tree {k}: {e}"));
            }
        }
        Ok(())
    }
}

impl DelayModel for SystemModel {
    fn delays(&self, l1: f64, l2: f64, a: &Action) -> (f64, f64) {
        self.predict(l1, l2, a.p11, a.p21, a.b1, a.b2)
    }

    fn delays_many(&self, l1: f64, l2: f64, actions: &[Action]) -> Vec<(f64, f64)> {
        let x: Vec<f64> = actions.iter().flat_map(|a| features(l1, l2, a)).collect();
        self.forest.predict_many(&x).into_iter().map(|p| (p[0], p[1])).collect()
    }

    fn delays_grid(&self, l1: f64, l2: f64, grid: &ActionGrid) -> Vec<(f64, f64)> {
        let v = grid.axis();
        let p = self.forest.predict_product([&[l1], &[l2], &v, &v, &v, &v]);
        p.into_iter().map(|p| (p[0], p[1])).collect()
    }
}

/// Predicts the training-target mean regardless of input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveModel {
    pub mean: [f64; 2],
}

impl DelayModel for NaiveModel {
    fn delays(&self, _: f64, _: f64, _: &Action) -> (f64, f64) {
        (self.mean[0], self.mean[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelAccuracy {
    pub nmae_d1: f64,
    pub nmae_d2: f64,
    pub r2_d1: f64,
    pub r2_d2: f64,
    pub naive_nmae_d1: f64,
    pub naive_nmae_d2: f64,
}

pub fn evaluate_model(model: &SystemModel, test: &Trace) -> Result<ModelAccuracy> {
    evaluate_with(model, model.target_mean, test)
}

/// NMAE is `mean|pred - y| / mean(y)`; R^2 is `1 - SSE/SST` around the
/// test mean. The naive columns score a constant `naive_mean` predictor.
pub fn evaluate_with<M: DelayModel + ?Sized>(model: &M, naive_mean: [f64; 2], test: &Trace) -> Result<ModelAccuracy> {
    if test.records.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let n = test.records.len() as f64;
    let truth: Vec<[f64; 2]> = test.records.iter().map(|r| [r.d1, r.d2]).collect();
    let preds: Vec<[f64; 2]> = test
        .records
        .iter()
        .map(|r| {
            let (a, b) = model.delays(r.l1, r.l2, &r.action);
            [a, b]
        })
        .collect();
    let stats = |k: usize| {
        let mean = truth.iter().map(|y| y[k]).sum::<f64>() / n;
        let mae = truth.iter().zip(&preds).map(|(y, p)| (p[k] - y[k]).abs()).sum::<f64>() / n;
        let naive = truth.iter().map(|y| (naive_mean[k] - y[k]).abs()).sum::<f64>() / n;
        let sse = truth.iter().zip(&preds).map(|(y, p)| (p[k] - y[k]).powi(2)).sum::<f64>();
        let sst = truth.iter().map(|y| (y[k] - mean).powi(2)).sum::<f64>();
        let r2 = if sst > 0.0 {
            1.0 - sse / sst
        } else if sse == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        };
        (mae / mean, r2, naive / mean)
    };
    let (nmae_d1, r2_d1, naive_nmae_d1) = stats(0);
    let (nmae_d2, r2_d2, naive_nmae_d2) = stats(1);
    Ok(ModelAccuracy {
        nmae_d1,
        nmae_d2,
        r2_d1,
        r2_d2,
        naive_nmae_d1,
        naive_nmae_d2,
    })
}
