//! On-disk formats. Every CSV starts with a `# meshrl-<kind> v1 key=value ...`
//! line followed by a fixed header row. Floats are written with Rust's
//! shortest round-trip formatting, so files are byte-deterministic.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::agent::LearningCurve;
use crate::error::{Error, Result};
use crate::eval::{Contrast, EvaluationReport};
use crate::mesh::{Action, EpisodeRecord};
use crate::oracle::OracleResult;
use crate::sysmodel::{ModelAccuracy, Trace, TraceMeta};

pub const FORMAT_VERSION: u32 = 1;
pub const TRACE_HEADER: &str = "t,l1,l2,p11,p21,b1,b2,d1,d2,lc1,lc2";
pub const RESULTS_HEADER: &str = "scenario,environment,load_pattern,steps,anr";
pub const REPORT_HEADER: &str = "t,l1,l2,action,blocked1,blocked2,lc1,lc2,reward,optimal_reward,nr";
pub const CURVE_HEADER: &str = "step,mean_reward,anr";
pub const SWEEP_HEADER: &str = "l1,l2,best_index,p11,p21,b1,b2,best_reward";
pub const ACCURACY_HEADER: &str = "target,nmae,naive_nmae,r2";
pub const CONTRAST_HEADER: &str = "t,l1,l2,peak,first_blocked1,first_blocked2,second_blocked1,second_blocked2";

/// Writes via a sibling temporary file and a rename, so readers never see
/// a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn preamble(kind: &str, meta: &[(&str, String)], header: &str) -> String {
    let mut s = format!("# meshrl-{kind} v{FORMAT_VERSION}");
    for (k, v) in meta {
        let _ = write!(s, " {k}={v}");
    }
    s.push('\n');
    s.push_str(header);
    s.push('\n');
    s
}

/// Splits off and checks the preamble; returns its key/value pairs and the
/// data rows that follow the header.
fn parse_preamble<'a>(
    text: &'a str,
    kind: &'static str,
    fmt_name: &'static str,
    header: &str,
) -> Result<(BTreeMap<String, String>, &'a str)> {
    let bad = |d: String| Error::format(fmt_name, d);
    let (first, rest) = text.split_once('\n').ok_or_else(|| bad("missing header".into()))?;
    let mut words = first.trim_end_matches('\r').split(' ');
    if words.next() != Some("#") {
        return Err(bad("first line must be a `#` version line".into()));
    }
    let tag = format!("meshrl-{kind}");
    if words.next() != Some(tag.as_str()) {
        return Err(bad(format!("expected format tag `{tag}`")));
    }
    match words.next() {
        Some(v) if v == format!("v{FORMAT_VERSION}") => {}
        other => return Err(bad(format!("unsupported version {other:?}"))),
    }
    let mut meta = BTreeMap::new();
    for w in words.filter(|w| !w.is_empty()) {
        let (k, v) = w.split_once('=').ok_or_else(|| bad(format!("bad key/value `{w}`")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    let (head, body) = rest.split_once('\n').unwrap_or((rest, ""));
    if head.trim_end_matches('\r') != header {
        return Err(bad(format!("header must be `{header}`")));
    }
    Ok((meta, body))
}

fn rows(body: &str) -> csv::StringRecordsIntoIter<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(body.as_bytes())
        .into_records()
}

fn num<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, what: &'static str, fmt_name: &'static str) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(fmt_name, format!("line {}: bad `{what}`", line_of(rec))))
}

fn finite(rec: &csv::StringRecord, i: usize, what: &'static str, fmt_name: &'static str) -> Result<f64> {
    let v: f64 = num(rec, i, what, fmt_name)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::format(fmt_name, format!("line {}: `{what}` is not finite", line_of(rec))))
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    // two preamble lines precede the data
    rec.position().map_or(0, |p| p.line() + 2)
}

fn width(rec: &csv::StringRecord, n: usize, fmt_name: &'static str) -> Result<()> {
    if rec.len() == n {
        Ok(())
    } else {
        Err(Error::format(fmt_name, format!("line {}: expected {n} fields, got {}", line_of(rec), rec.len())))
    }
}

fn meta_get<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str, fmt_name: &'static str) -> Result<T> {
    meta.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::format(fmt_name, format!("missing or bad `{key}` in version line")))
}

fn hash_field(hash: Option<&str>) -> String {
    hash.unwrap_or("-").to_string()
}

fn hash_of(meta: &BTreeMap<String, String>) -> Option<String> {
    meta.get("config").filter(|h| h.as_str() != "-").cloned()
}

pub fn trace_to_csv(trace: &Trace, config_hash: Option<&str>) -> String {
    let m = &trace.meta;
    let mut s = preamble(
        "trace",
        &[
            ("mode", m.mode.to_string()),
            ("seed", m.seed.to_string()),
            ("steps", m.steps.to_string()),
            ("repetitions", m.repetitions.to_string()),
            ("config", hash_field(config_hash)),
        ],
        TRACE_HEADER,
    );
    for r in &trace.records {
        let a = &r.action;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.t, r.l1, r.l2, a.p11, a.p21, a.b1, a.b2, r.d1, r.d2, r.lc1, r.lc2
        );
    }
    s
}

/// Parses a trace file; returns it with the config hash it was written under.
pub fn trace_from_csv(text: &str) -> Result<(Trace, Option<String>)> {
    const F: &str = "trace file";
    let (meta, body) = parse_preamble(text, "trace", F, TRACE_HEADER)?;
    let tm = TraceMeta {
        mode: meta_get(&meta, "mode", F)?,
        seed: meta_get(&meta, "seed", F)?,
        steps: meta_get(&meta, "steps", F)?,
        repetitions: meta_get(&meta, "repetitions", F)?,
    };
    let mut records = Vec::new();
    for rec in rows(body) {
        let rec = rec.map_err(|e| Error::format(F, e.to_string()))?;
        width(&rec, 11, F)?;
        let f = |i, w| finite(&rec, i, w, F);
        let action = Action::new(f(3, "p11")?, f(4, "p21")?, f(5, "b1")?, f(6, "b2")?)
            .map_err(|e| Error::format(F, format!("line {}: {e}", line_of(&rec))))?;
        records.push(EpisodeRecord {
            t: num(&rec, 0, "t", F)?,
            l1: f(1, "l1")?,
            l2: f(2, "l2")?,
            action,
            d1: f(7, "d1")?,
            d2: f(8, "d2")?,
            lc1: f(9, "lc1")?,
            lc2: f(10, "lc2")?,
            reward: None,
            optimal_reward: None,
        });
    }
    if records.len() as u64 != tm.steps {
        return Err(Error::format(F, format!("declares {} steps but has {} rows", tm.steps, records.len())));
    }
    Ok((Trace { meta: tm, records }, hash_of(&meta)))
}

/// One results-table cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: u32,
    pub environment: String,
    pub load_pattern: String,
    pub steps: u64,
    pub anr: f64,
}

impl From<&EvaluationReport> for ResultRow {
    fn from(r: &EvaluationReport) -> Self {
        ResultRow {
            scenario: r.scenario,
            environment: r.environment.clone(),
            load_pattern: r.load_pattern.clone(),
            steps: r.steps,
            anr: r.anr,
        }
    }
}

pub fn results_to_csv(rows: &[ResultRow], config_hash: Option<&str>) -> String {
    let mut s = preamble("results", &[("config", hash_field(config_hash))], RESULTS_HEADER);
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.scenario, r.environment, r.load_pattern, r.steps, r.anr);
    }
    s
}

pub fn results_from_csv(text: &str) -> Result<(Vec<ResultRow>, Option<String>)> {
    const F: &str = "results table";
    let (meta, body) = parse_preamble(text, "results", F, RESULTS_HEADER)?;
    let mut out = Vec::new();
    for rec in rows(body) {
        let rec = rec.map_err(|e| Error::format(F, e.to_string()))?;
        width(&rec, 5, F)?;
        let environment = rec[1].to_string();
        if environment != "simulation" && environment != "ground-truth" {
            return Err(Error::format(F, format!("line {}: unknown environment `{environment}`", line_of(&rec))));
        }
        let load_pattern = rec[2].to_string();
        if load_pattern != "random" && load_pattern != "sinusoidal" {
            return Err(Error::format(F, format!("line {}: unknown load pattern `{load_pattern}`", line_of(&rec))));
        }
        out.push(ResultRow {
            scenario: num(&rec, 0, "scenario", F)?,
            environment,
            load_pattern,
            steps: num(&rec, 3, "steps", F)?,
            anr: finite(&rec, 4, "anr", F)?,
        });
    }
    Ok((out, hash_of(&meta)))
}

pub fn report_to_csv(r: &EvaluationReport) -> String {
    let mut s = preamble(
        "report",
        &[
            ("scenario", r.scenario.to_string()),
            ("environment", r.environment.clone()),
            ("load_pattern", r.load_pattern.clone()),
            ("steps", r.steps.to_string()),
            ("anr", r.anr.to_string()),
            ("flagged", r.flagged_steps.len().to_string()),
        ],
        REPORT_HEADER,
    );
    for t in 0..r.nr_series.len() {
        let _ = writeln!(
            s,
            "{t},{},{},{},{},{},{},{},{},{},{}",
            r.load[t].0,
            r.load[t].1,
            r.actions[t],
            r.blocked[t].0,
            r.blocked[t].1,
            r.carried[t].0,
            r.carried[t].1,
            r.rewards[t],
            r.optimal_rewards[t],
            r.nr_series[t]
        );
    }
    s
}

pub fn curve_to_csv(curve: &LearningCurve, scenario: u32) -> String {
    let mut s = preamble("curve", &[("scenario", scenario.to_string())], CURVE_HEADER);
    for p in &curve.points {
        let _ = writeln!(s, "{},{},{}", p.step, p.mean_reward, p.anr);
    }
    s
}

/// Oracle landscape: best action and reward per load pair.
pub fn sweep_to_csv(scenario: u32, cells: &[((f64, f64), OracleResult)]) -> String {
    let mut s = preamble("sweep", &[("scenario", scenario.to_string())], SWEEP_HEADER);
    for ((l1, l2), r) in cells {
        let a = &r.best_action;
        let _ = writeln!(
            s,
            "{l1},{l2},{},{},{},{},{},{}",
            r.best_index, a.p11, a.p21, a.b1, a.b2, r.best_reward
        );
    }
    s
}

pub fn accuracy_to_csv(acc: &ModelAccuracy, config_hash: Option<&str>) -> String {
    let mut s = preamble("accuracy", &[("config", hash_field(config_hash))], ACCURACY_HEADER);
    let _ = writeln!(s, "d1,{},{},{}", acc.nmae_d1, acc.naive_nmae_d1, acc.r2_d1);
    let _ = writeln!(s, "d2,{},{},{}", acc.nmae_d2, acc.naive_nmae_d2, acc.r2_d2);
    s
}

pub fn contrast_to_csv(c: &Contrast, first: &str, second: &str) -> String {
    let mut s = preamble(
        "contrast",
        &[("first", first.to_string()), ("second", second.to_string())],
        CONTRAST_HEADER,
    );
    let mut peak = vec![false; c.load.len()];
    c.peak_steps.iter().for_each(|&i| peak[i] = true);
    for t in 0..c.load.len() {
        let _ = writeln!(
            s,
            "{t},{},{},{},{},{},{},{}",
            c.load[t].0,
            c.load[t].1,
            u8::from(peak[t]),
            c.first[t].0,
            c.first[t].1,
            c.second[t].0,
            c.second[t].1
        );
    }
    s
}
