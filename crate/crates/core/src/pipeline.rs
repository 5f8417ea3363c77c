//! Resumable experiment stages: collect, fit, train, evaluate, sweep.
//!
//! Each stage writes its output under the configured directory tagged with
//! a hash of the configuration that produced it. A stage whose output is
//! present with a matching hash is loaded instead of recomputed.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crate::agent::{self, ActMode, LearningCurve, PolicyCheckpoint};
use crate::config::ScenarioConfig;
use crate::env::{DelayModel, Environment, Simulator};
use crate::error::Result;
use crate::eval::{self, EvaluationReport, PolicyController, Reference};
use crate::ground_truth::GroundTruth;
use crate::io::{self, ResultRow};
use crate::loadgen::LoadPattern;
use crate::mesh::{build_action_grid, ActionGrid};
use crate::oracle;
use crate::rewards::{ManagementObjective, ObjectiveKind};
use crate::sysmodel::{
    collect_trace_grid, collect_trace_random, evaluate_model, CollectionMode, ModelAccuracy, SystemModel, Trace,
};

pub const TRACE_FILE: &str = "trace.csv";
pub const MODEL_FILE: &str = "model.json";
pub const ACCURACY_FILE: &str = "accuracy.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const BASELINE_FILE: &str = "baseline.csv";
pub const CONTRAST_FILE: &str = "contrast.csv";

/// Minimum gap between a trained policy and the random baseline in `--strict`.
pub const BASELINE_GAP: f64 = 0.15;

pub fn policy_file(kind: ObjectiveKind) -> String {
    format!("policy_s{}.json", kind.scenario())
}

pub fn curve_file(kind: ObjectiveKind) -> String {
    format!("curve_s{}.csv", kind.scenario())
}

fn report_file(prefix: &str, r: &EvaluationReport) -> PathBuf {
    Path::new("reports").join(format!("{prefix}s{}_{}_{}.csv", r.scenario, r.environment, r.load_pattern))
}

/// Shared state of one experiment run.
pub struct Pipeline {
    pub config: ScenarioConfig,
    pub grid: ActionGrid,
    pub ground_truth: GroundTruth,
    /// Expected-delay twin of the ground truth, used as the NR reference.
    pub noiseless: GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub results: Vec<ResultRow>,
    pub baseline: Vec<ResultRow>,
    /// Human-readable floor violations for `--strict`.
    pub violations: Vec<String>,
}

impl Pipeline {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let gt_params = config.ground_truth_params();
        Ok(Pipeline {
            grid: build_action_grid(config.grid_levels)?,
            ground_truth: GroundTruth::new(gt_params.clone())?,
            noiseless: GroundTruth::new(gt_params.noiseless())?,
            config,
        })
    }

    fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.config.output_dir.join(name)
    }

    fn read_if_exists(&self, name: impl AsRef<Path>) -> Result<Option<String>> {
        match fs::read_to_string(self.path(name)) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn write(&self, name: impl AsRef<Path>, contents: &str) -> Result<()> {
        io::write_atomic(&self.path(name), contents.as_bytes())
    }

    /// Trace stage.
    pub fn collect(&self) -> Result<Trace> {
        let hash = self.config.collect_hash();
        if let Some(text) = self.read_if_exists(TRACE_FILE)? {
            match io::trace_from_csv(&text) {
                Ok((trace, Some(h))) if h == hash => {
                    info!("collect: reusing {TRACE_FILE}");
                    return Ok(trace);
                }
                Ok(_) => info!("collect: {TRACE_FILE} is stale, recollecting"),
                Err(e) => warn!("collect: ignoring unreadable {TRACE_FILE}: {e}"),
            }
        }
        let c = &self.config.collection;
        let seed = self.config.collection_seed();
        let trace = match c.mode {
            CollectionMode::Random => {
                collect_trace_random(&self.ground_truth, &self.grid, &self.config.collection_pattern(), c.steps, seed)?
            }
            CollectionMode::Grid => collect_trace_grid(&self.ground_truth, &self.grid, &c.grid_loads, c.repetitions, seed)?,
        };
        info!("collect: {} records", trace.len());
        self.write(TRACE_FILE, &io::trace_to_csv(&trace, Some(&hash)))?;
        Ok(trace)
    }

    /// Surrogate stage; fits on the training half of the trace and scores
    /// on the other half.
    pub fn fit(&self) -> Result<(SystemModel, ModelAccuracy)> {
        let hash = self.config.fit_hash();
        if let Some(text) = self.read_if_exists(MODEL_FILE)? {
            match SystemModel::from_json(&text) {
                Ok(m) if m.config_hash.as_deref() == Some(hash.as_str()) => {
                    info!("fit: reusing {MODEL_FILE}");
                    let (_, test) = self.collect()?.split();
                    let acc = evaluate_model(&m, &test)?;
                    return Ok((m, acc));
                }
                Ok(_) => info!("fit: {MODEL_FILE} is stale, refitting"),
                Err(e) => warn!("fit: ignoring unreadable {MODEL_FILE}: {e}"),
            }
        }
        let (train, test) = self.collect()?.split();
        let mut model = SystemModel::fit(&train, &self.config.surrogate.forest, self.config.fit_seed())?;
        model.config_hash = Some(hash.clone());
        let acc = evaluate_model(&model, &test)?;
        let s = &self.config.surrogate;
        for (name, nmae, naive, r2) in [
            ("d1", acc.nmae_d1, acc.naive_nmae_d1, acc.r2_d1),
            ("d2", acc.nmae_d2, acc.naive_nmae_d2, acc.r2_d2),
        ] {
            info!("fit: {name} NMAE {nmae:.4} (naive {naive:.4}), R^2 {r2:.4}");
            if nmae > s.max_nmae_ratio * naive || r2 < s.min_r2 {
                warn!("fit: surrogate accuracy for {name} is below the configured floor");
            }
        }
        self.write(MODEL_FILE, &model.to_json()?)?;
        self.write(ACCURACY_FILE, &io::accuracy_to_csv(&acc, Some(&hash)))?;
        Ok((model, acc))
    }

    fn load_policy(&self, objective: &ManagementObjective, hash: &str) -> Result<Option<PolicyCheckpoint>> {
        let name = policy_file(objective.kind);
        let Some(text) = self.read_if_exists(&name)? else {
            return Ok(None);
        };
        match PolicyCheckpoint::from_json(&text) {
            Ok(c) if c.config_hash.as_deref() == Some(hash) => {
                info!("train {}: reusing {name}", objective.kind);
                Ok(Some(c))
            }
            Ok(_) => Ok(None),
            Err(e) => {
                warn!("train {}: ignoring unreadable {name}: {e}", objective.kind);
                Ok(None)
            }
        }
    }

    /// Training stage for one objective against `model`.
    pub fn train_one(&self, model: &SystemModel, objective: &ManagementObjective) -> Result<PolicyCheckpoint> {
        let hash = self.config.train_hash(objective);
        if let Some(c) = self.load_policy(objective, &hash)? {
            return Ok(c);
        }
        let cfg = self.config.train_config(objective.kind);
        let (policy, curve) = agent::train(
            model,
            objective,
            &self.config.train_pattern(),
            &self.grid,
            &cfg,
            self.config.train.normalizer,
        )?;
        log_curve(objective.kind, &curve);
        let mut ckpt = PolicyCheckpoint::new(*objective, cfg, policy);
        ckpt.config_hash = Some(hash);
        self.write(curve_file(objective.kind), &io::curve_to_csv(&curve, objective.kind.scenario()))?;
        self.write(policy_file(objective.kind), &ckpt.to_json()?)?;
        Ok(ckpt)
    }

    /// Trains every configured objective, in parallel.
    pub fn train(&self) -> Result<Vec<PolicyCheckpoint>> {
        let (model, _) = self.fit()?;
        self.config
            .objectives
            .par_iter()
            .map(|o| self.train_one(&model, o))
            .collect()
    }

    fn controller<'a>(&self, ckpt: &'a PolicyCheckpoint) -> PolicyController<'a> {
        let mode = if self.config.evaluation.stochastic {
            ActMode::Sample
        } else {
            ActMode::Greedy
        };
        PolicyController::new(&ckpt.policy, mode, self.config.eval_sample_seed())
    }

    fn patterns(&self) -> [(LoadPattern, u64); 2] {
        let e = &self.config.evaluation;
        [
            (self.config.eval_random_pattern(), e.random_steps),
            (self.config.eval_sinusoidal_pattern(), e.sinusoidal_steps),
        ]
    }

    /// Results-table cells for one policy: simulator and ground truth, each
    /// under both load patterns. The simulator is always scored against
    /// its own optimum; the ground truth against the configured reference.
    pub fn evaluate_policy(
        &self,
        model: &SystemModel,
        ckpt: &PolicyCheckpoint,
    ) -> Result<(Vec<EvaluationReport>, Vec<EvaluationReport>)> {
        let sim = Simulator::new(model);
        let gt_ref: &dyn DelayModel = match self.config.evaluation.reference {
            Reference::GroundTruth => &self.noiseless,
            Reference::Surrogate => model,
        };
        let envs: [(&dyn Environment, &dyn DelayModel); 2] = [(&sim, model), (&self.ground_truth, gt_ref)];
        let o = &ckpt.objective;
        let mut reports = Vec::new();
        let mut baselines = Vec::new();
        for (env, reference) in envs {
            for (pattern, steps) in self.patterns() {
                let mut c = self.controller(ckpt);
                reports.push(eval::run_scenario(&mut c, env, o, &pattern, steps, reference, &self.grid)?);
                if self.config.evaluation.baseline {
                    let seed = self.config.baseline_seed();
                    baselines.push(eval::random_baseline(env, o, &pattern, steps, reference, &self.grid, seed)?);
                }
            }
        }
        Ok((reports, baselines))
    }

    /// Evaluation stage: writes per-cell reports, the results table, the
    /// baseline table and, when both MO1 and MO2 are configured, the
    /// blocking contrast on the sinusoidal pattern.
    pub fn evaluate(&self) -> Result<Evaluation> {
        let (model, _) = self.fit()?;
        let ckpts = self
            .config
            .objectives
            .par_iter()
            .map(|o| self.train_one(&model, o))
            .collect::<Result<Vec<_>>>()?;
        let cells = ckpts
            .par_iter()
            .map(|c| self.evaluate_policy(&model, c))
            .collect::<Result<Vec<_>>>()?;
        let hash = self.config.evaluate_hash();
        let mut results = Vec::new();
        let mut baseline = Vec::new();
        let mut violations = Vec::new();
        let floor = self.config.evaluation.anr_floor;
        for (reports, bases) in &cells {
            for r in reports {
                self.write(report_file("", r), &io::report_to_csv(r))?;
                info!("evaluate: scenario {} {} {}: ANR {:.4}", r.scenario, r.environment, r.load_pattern, r.anr);
                if r.anr < floor {
                    violations.push(format!(
                        "scenario {} {} {}: ANR {:.4} below floor {floor}",
                        r.scenario, r.environment, r.load_pattern, r.anr
                    ));
                }
                results.push(ResultRow::from(r));
            }
            for (b, r) in bases.iter().zip(reports) {
                self.write(report_file("baseline_", b), &io::report_to_csv(b))?;
                if r.anr < b.anr + BASELINE_GAP {
                    violations.push(format!(
                        "scenario {} {} {}: ANR {:.4} within {BASELINE_GAP} of random baseline {:.4}",
                        r.scenario, r.environment, r.load_pattern, r.anr, b.anr
                    ));
                }
                baseline.push(ResultRow::from(b));
            }
        }
        self.write(RESULTS_FILE, &io::results_to_csv(&results, Some(&hash)))?;
        if !baseline.is_empty() {
            self.write(BASELINE_FILE, &io::results_to_csv(&baseline, Some(&hash)))?;
        }
        let find = |k| ckpts.iter().find(|c| c.objective.kind == k);
        if let (Some(a), Some(b)) = (find(ObjectiveKind::Mo1), find(ObjectiveKind::Mo2)) {
            let (pattern, steps) = self.patterns()[1].clone();
            let c = eval::objective_contrast(
                &mut self.controller(a),
                &mut self.controller(b),
                &self.ground_truth,
                &pattern,
                steps,
                &self.grid,
            )?;
            self.write(CONTRAST_FILE, &io::contrast_to_csv(&c, "MO1", "MO2"))?;
        }
        Ok(Evaluation {
            results,
            baseline,
            violations,
        })
    }

    /// Oracle landscape over integer load pairs in `0..=max_load`, for the
    /// surrogate and the noiseless ground truth.
    pub fn sweep(&self, max_load: u32) -> Result<Vec<PathBuf>> {
        let (model, _) = self.fit()?;
        let loads: Vec<(f64, f64)> = (0..=max_load)
            .flat_map(|a| (0..=max_load).map(move |b| (a as f64, b as f64)))
            .collect();
        let models: [(&str, &dyn DelayModel); 2] = [("surrogate", &model), ("ground-truth", &self.noiseless)];
        let mut written = Vec::new();
        for o in &self.config.objectives {
            for (label, m) in models {
                let cells = loads
                    .par_iter()
                    .map(|&(l1, l2)| Ok(((l1, l2), oracle::optimal(m, o, l1, l2, &self.grid, false)?)))
                    .collect::<Result<Vec<_>>>()?;
                let name = format!("sweep_s{}_{label}.csv", o.kind.scenario());
                self.write(&name, &io::sweep_to_csv(o.kind.scenario(), &cells))?;
                written.push(self.path(name));
            }
        }
        Ok(written)
    }

    /// All stages in order.
    pub fn run(&self) -> Result<Evaluation> {
        self.evaluate()
    }
}

fn log_curve(kind: ObjectiveKind, curve: &LearningCurve) {
    if let Some(last) = curve.points.last() {
        info!(
            "train {kind}: {} rollouts, final rollout ANR {:.4}, mean reward {:.4}",
            curve.points.len(),
            last.anr,
            last.mean_reward
        );
    }
}
