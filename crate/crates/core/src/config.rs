//! Experiment configuration. One TOML file fixes every stage; stage seeds
//! are derived from the single master `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{Normalizer, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::Reference;
use crate::ground_truth::GroundTruthParams;
use crate::loadgen::{LoadPattern, DEFAULT_LEVELS, DEFAULT_PERIOD, DEFAULT_PHASES};
use crate::mesh::MAX_GRID_LEVELS;
use crate::rewards::{ManagementObjective, ObjectiveKind};
use crate::rng::derive_seed;
use crate::sysmodel::{CollectionMode, ForestParams, MIN_FIT_RECORDS};

// stage tags for derive_seed
const TAG_NOISE: u64 = 1;
const TAG_COLLECT: u64 = 2;
const TAG_FIT: u64 = 3;
const TAG_TRAIN_LOAD: u64 = 4;
const TAG_EVAL_LOAD: u64 = 5;
const TAG_BASELINE: u64 = 6;
const TAG_EVAL_SAMPLE: u64 = 7;
const TAG_TRAIN: u64 = 0x100;

/// A load pattern without its seed; seeds come from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PatternSpec {
    Random {
        #[serde(default = "default_levels")]
        levels: Vec<f64>,
    },
    Sinusoidal {
        #[serde(default = "default_period")]
        period: f64,
        #[serde(default = "default_phases")]
        phases: [f64; 2],
    },
}

fn default_levels() -> Vec<f64> {
    DEFAULT_LEVELS.to_vec()
}
fn default_period() -> f64 {
    DEFAULT_PERIOD
}
fn default_phases() -> [f64; 2] {
    DEFAULT_PHASES
}

impl Default for PatternSpec {
    fn default() -> Self {
        PatternSpec::Random { levels: default_levels() }
    }
}

impl PatternSpec {
    pub fn sinusoidal() -> Self {
        PatternSpec::Sinusoidal {
            period: DEFAULT_PERIOD,
            phases: DEFAULT_PHASES,
        }
    }

    pub fn to_pattern(&self, seed: u64) -> LoadPattern {
        match self {
            PatternSpec::Random { levels } => LoadPattern::Random {
                levels: levels.clone(),
                seed,
            },
            PatternSpec::Sinusoidal { period, phases } => LoadPattern::Sinusoidal {
                period: *period,
                phases: *phases,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectionConfig {
    pub mode: CollectionMode,
    /// Trace length in random mode.
    pub steps: u64,
    pub pattern: PatternSpec,
    /// Load levels swept in grid mode.
    pub grid_loads: Vec<f64>,
    pub repetitions: u64,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        CollectionConfig {
            mode: CollectionMode::Random,
            steps: 20_000,
            pattern: PatternSpec::default(),
            grid_loads: DEFAULT_LEVELS.to_vec(),
            repetitions: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub forest: ForestParams,
    /// Warn when model NMAE exceeds this fraction of the naive NMAE.
    pub max_nmae_ratio: f64,
    /// Warn when R^2 falls below this.
    pub min_r2: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            forest: ForestParams::default(),
            max_nmae_ratio: 1.0 / 3.0,
            min_r2: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub pattern: PatternSpec,
    pub normalizer: Normalizer,
    pub ppo: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            pattern: PatternSpec::default(),
            normalizer: Normalizer::default(),
            ppo: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub random_steps: u64,
    pub sinusoidal_steps: u64,
    pub random_levels: Vec<f64>,
    pub period: f64,
    pub phases: [f64; 2],
    pub reference: Reference,
    /// Sample from the policy instead of acting greedily.
    pub stochastic: bool,
    /// Also score a uniform-random controller in every cell.
    pub baseline: bool,
    /// Minimum trained-policy ANR per cell; checked under `--strict`.
    pub anr_floor: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            random_steps: 150,
            sinusoidal_steps: 400,
            random_levels: default_levels(),
            period: DEFAULT_PERIOD,
            phases: DEFAULT_PHASES,
            reference: Reference::GroundTruth,
            stochastic: false,
            baseline: true,
            anr_floor: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub grid_levels: usize,
    pub objectives: Vec<ManagementObjective>,
    pub ground_truth: GroundTruthParams,
    pub collection: CollectionConfig,
    pub surrogate: SurrogateConfig,
    pub train: TrainSection,
    pub evaluation: EvaluationConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            output_dir: PathBuf::from("out"),
            grid_levels: 6,
            objectives: ObjectiveKind::ALL.iter().map(|&k| ManagementObjective::new(k)).collect(),
            ground_truth: GroundTruthParams::default(),
            collection: CollectionConfig::default(),
            surrogate: SurrogateConfig::default(),
            train: TrainSection::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{name}: {msg}"))
}

fn check_pattern(name: &str, p: &PatternSpec) -> Result<()> {
    p.to_pattern(0).validate().map_err(|e| field(name, e))
}

impl ScenarioConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_GRID_LEVELS).contains(&self.grid_levels) {
            return Err(field("grid_levels", format!("must lie in 2..={MAX_GRID_LEVELS}")));
        }
        if self.objectives.is_empty() {
            return Err(field("objectives", "at least one objective is required"));
        }
        for (i, o) in self.objectives.iter().enumerate() {
            o.validate().map_err(|e| field(&format!("objectives[{i}]"), e))?;
            if self.objectives[..i].iter().any(|p| p.kind == o.kind) {
                return Err(field(&format!("objectives[{i}]"), format!("duplicate kind {}", o.kind)));
            }
        }
        self.ground_truth.validate().map_err(|e| field("ground_truth", e))?;

        let c = &self.collection;
        check_pattern("collection.pattern", &c.pattern)?;
        match c.mode {
            CollectionMode::Random if c.steps < MIN_FIT_RECORDS as u64 * 2 => {
                return Err(field("collection.steps", format!("must be >= {}", MIN_FIT_RECORDS * 2)));
            }
            CollectionMode::Grid => {
                if c.repetitions < 2 {
                    return Err(field("collection.repetitions", "grid mode needs >= 2 for a train/test split"));
                }
                if c.grid_loads.is_empty() || c.grid_loads.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
                    return Err(field("collection.grid_loads", "must be nonempty, finite and >= 0"));
                }
            }
            _ => {}
        }
        if c.steps > 100_000_000 || c.repetitions > 10_000 {
            return Err(field("collection", "trace size is unreasonably large"));
        }

        let s = &self.surrogate;
        s.forest.validate().map_err(|e| field("surrogate.forest", e))?;
        if !(s.max_nmae_ratio > 0.0) || !(s.min_r2 <= 1.0) {
            return Err(field("surrogate", "max_nmae_ratio must be > 0 and min_r2 <= 1"));
        }

        check_pattern("train.pattern", &self.train.pattern)?;
        self.train.ppo.validate().map_err(|e| field("train.ppo", e))?;
        let n = &self.train.normalizer;
        if !(n.load_scale > 0.0 && n.load_scale.is_finite() && n.delay_scale > 0.0 && n.delay_scale.is_finite()) {
            return Err(field("train.normalizer", "scales must be positive and finite"));
        }

        let e = &self.evaluation;
        if e.random_steps == 0 || e.sinusoidal_steps == 0 {
            return Err(field("evaluation", "random_steps and sinusoidal_steps must be >= 1"));
        }
        self.eval_random_pattern()
            .validate()
            .map_err(|err| field("evaluation.random_levels", err))?;
        self.eval_sinusoidal_pattern()
            .validate()
            .map_err(|err| field("evaluation.period", err))?;
        if !(0.0..=1.0).contains(&e.anr_floor) {
            return Err(field("evaluation.anr_floor", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Applies command-line overrides.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<&Path>, no_noise: bool) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.output_dir = o.to_path_buf();
        }
        if no_noise {
            self.ground_truth.noise = 0.0;
        }
    }

    /// Ground-truth parameters with the derived noise seed.
    pub fn ground_truth_params(&self) -> GroundTruthParams {
        GroundTruthParams {
            seed: derive_seed(self.seed, TAG_NOISE),
            ..self.ground_truth.clone()
        }
    }

    pub fn collection_seed(&self) -> u64 {
        derive_seed(self.seed, TAG_COLLECT)
    }

    pub fn collection_pattern(&self) -> LoadPattern {
        self.collection.pattern.to_pattern(derive_seed(self.collection_seed(), 0))
    }

    pub fn fit_seed(&self) -> u64 {
        derive_seed(self.seed, TAG_FIT)
    }

    pub fn train_pattern(&self) -> LoadPattern {
        self.train.pattern.to_pattern(derive_seed(self.seed, TAG_TRAIN_LOAD))
    }

    /// PPO settings with the per-objective derived seed.
    pub fn train_config(&self, kind: ObjectiveKind) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, TAG_TRAIN + kind.scenario() as u64),
            ..self.train.ppo.clone()
        }
    }

    pub fn eval_random_pattern(&self) -> LoadPattern {
        LoadPattern::Random {
            levels: self.evaluation.random_levels.clone(),
            seed: derive_seed(self.seed, TAG_EVAL_LOAD),
        }
    }

    pub fn eval_sinusoidal_pattern(&self) -> LoadPattern {
        LoadPattern::Sinusoidal {
            period: self.evaluation.period,
            phases: self.evaluation.phases,
        }
    }

    pub fn baseline_seed(&self) -> u64 {
        derive_seed(self.seed, TAG_BASELINE)
    }

    pub fn eval_sample_seed(&self) -> u64 {
        derive_seed(self.seed, TAG_EVAL_SAMPLE)
    }

    pub fn collect_hash(&self) -> String {
        hash_parts(&[
            "collect".into(),
            json(&self.ground_truth_params()),
            json(&self.collection),
            self.grid_levels.into(),
            self.collection_seed().into(),
        ])
    }

    pub fn fit_hash(&self) -> String {
        hash_parts(&[
            "fit".into(),
            self.collect_hash().into(),
            json(&self.surrogate.forest),
            self.fit_seed().into(),
        ])
    }

    pub fn train_hash(&self, objective: &ManagementObjective) -> String {
        hash_parts(&[
            "train".into(),
            self.fit_hash().into(),
            json(objective),
            json(&self.train.pattern),
            json(&self.train.normalizer),
            json(&self.train_config(objective.kind)),
            derive_seed(self.seed, TAG_TRAIN_LOAD).into(),
        ])
    }

    pub fn evaluate_hash(&self) -> String {
        let mut parts: Vec<serde_json::Value> = vec!["evaluate".into(), json(&self.evaluation), self.seed.into()];
        parts.extend(self.objectives.iter().map(|o| self.train_hash(o).into()));
        hash_parts(&parts)
    }
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config types serialize")
}

fn hash_parts(parts: &[serde_json::Value]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.to_string().as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_through_toml() {
        let c = ScenarioConfig::default();
        c.validate().unwrap();
        let text = c.to_toml_string().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn empty_document_is_default() {
        assert_eq!(ScenarioConfig::from_toml_str("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn partial_document() {
        let c = ScenarioConfig::from_toml_str(
            r#"
            seed = 9
            grid_levels = 4
            [[objectives]]
            kind = "MO2"
            utility_weights = [1.0, 3.0]
            [train.pattern]
            kind = "sinusoidal"
            period = 50.0
            [train.ppo]
            total_steps = 2048
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.objectives.len(), 1);
        assert_eq!(c.objectives[0].utility_weights, [1.0, 3.0]);
        assert_eq!(c.objectives[0].delay_bounds, [0.1, 0.1]);
        assert_eq!(c.train.ppo.total_steps, 2048);
        assert_eq!(c.train.ppo.batch_size, 64);
        assert_eq!(c.train_pattern().name(), "sinusoidal");
    }

    #[test]
    fn field_level_errors() {
        let err = |t: &str| ScenarioConfig::from_toml_str(t).unwrap_err().to_string();
        assert!(err("grid_levels = 1").contains("grid_levels"));
        assert!(err("[train.ppo]\ngamma = 1.5").contains("train.ppo"));
        assert!(err("[collection]\nsteps = 10").contains("collection.steps"));
        assert!(err("[ground_truth]\ncapacity = [0.0, 1.0]").contains("ground_truth"));
        assert!(err("bogus = 1").contains("bogus"));
        assert!(err("[[objectives]]\nkind = \"MO9\"").contains("MO9"));
        assert!(err("[[objectives]]\nkind = \"MO1\"\n[[objectives]]\nkind = \"1\"").contains("duplicate"));
    }

    #[test]
    fn output_dir_does_not_affect_hashes() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        b.apply_overrides(None, Some(Path::new("/elsewhere")), false);
        assert_eq!(a.evaluate_hash(), b.evaluate_hash());
        b.apply_overrides(Some(2), None, false);
        assert_ne!(a.collect_hash(), b.collect_hash());
    }

    #[test]
    fn hashes_chain_through_stages() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        b.surrogate.forest.trees = 7;
        assert_eq!(a.collect_hash(), b.collect_hash());
        assert_ne!(a.fit_hash(), b.fit_hash());
        let o = &a.objectives[0];
        assert_ne!(a.train_hash(o), b.train_hash(o));
        let mut c = a.clone();
        c.apply_overrides(None, None, true);
        assert_ne!(a.collect_hash(), c.collect_hash());
    }

    #[test]
    fn per_objective_seeds_differ() {
        let c = ScenarioConfig::default();
        assert_ne!(c.train_config(ObjectiveKind::Mo1).seed, c.train_config(ObjectiveKind::Mo2).seed);
    }
}
