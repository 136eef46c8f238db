//! Reproducible experiment runs and the file-level commands built on the
//! library: training with on-disk artifacts, the bias oracle report, merging,
//! trace analysis and metrics-to-CSV conversion.
//!
//! A training run writes into `<output_dir>/<run_id>/`:
//!
//! ```text
//! metrics.jsonl      one MetricsRecord per step, tagged with run_id
//! config.json        the resolved config
//! summary.json       initial/final evaluation and length reduction
//! ckpt_<n>.dlrp      parameters after n completed steps
//! reports/           metrics.csv, eval.json and the enabled analyses
//! ```
//!
//! With several variants each one gets that layout in its own subdirectory
//! named after the variant, and the run directory holds a combined
//! `summary.json`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::{
    entropy_histogram, pass_at_k, rollout_to_text, trace_stats, ClipStats, TraceRecord, TraceStats, DEFAULT_KEYWORDS,
};
use crate::bias_oracle::{bias_curve, mc_conditional_moments, BiasCurve, BiasExperiment, BiasResult};
use crate::error::{Error, Result};
use crate::merge::{merge, MergeStrategy, ParamSnapshot};
use crate::policy::checkpoint::write_atomic;
use crate::policy::{PolicyParams, Vocab};
use crate::rng::{self, purpose};
use crate::tasks::{initial_policy, make_prompt_pool, Prompt, TaskSuiteConfig};
use crate::trainer::{evaluate, evaluate_with_rollouts, EvalReport, MetricsRecord, Trainer, TrainerConfig, Variant};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORTS_DIR: &str = "reports";
/// The resolved config, after overrides, as the run used it.
pub const CONFIG_FILE: &str = "config.json";
/// Seed used when the config file does not set `trainer.seed`.
pub const SEED_ENV: &str = "DLER_SEED";

/// Columns of the plot-ready metrics CSV.
pub const REPORT_COLUMNS: [&str; 6] = [
    "step",
    "mean_response_length",
    "mean_accuracy",
    "mean_token_entropy",
    "zero_reward_group_ratio",
    "all_one_group_ratio",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisToggles {
    pub clip_stats: bool,
    pub entropy_histogram: bool,
    pub entropy_bins: usize,
    pub trace_stats: bool,
    pub eval_samples_per_prompt: usize,
    /// Evaluation cutoff; defaults to the longest training budget.
    pub eval_max_len: Option<usize>,
    pub pass_at_k: Vec<u64>,
}

impl Default for AnalysisToggles {
    fn default() -> Self {
        Self {
            clip_stats: true,
            entropy_histogram: true,
            entropy_bins: 20,
            trace_stats: true,
            eval_samples_per_prompt: 16,
            eval_max_len: None,
            pass_at_k: vec![1, 4, 16],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub tasks: TaskSuiteConfig,
    #[serde(default)]
    pub analysis: AnalysisToggles,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Dler]
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            || self.run_id.starts_with('.')
        {
            return Err(Error::Config(format!(
                "run_id `{}` must be non-empty and use only letters, digits, '-', '_' or '.'",
                self.run_id
            )));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("variants must list at least one variant".into()));
        }
        let mut seen = HashSet::new();
        for v in &self.variants {
            if !seen.insert(v) {
                return Err(Error::Config(format!("variant `{}` is listed twice", v.name())));
            }
        }
        self.trainer.validate()?;
        for v in &self.variants {
            v.apply(&self.trainer)?;
        }
        self.tasks.validate(&Vocab::desk_default())?;
        let a = &self.analysis;
        if a.eval_samples_per_prompt < 1 {
            return Err(Error::Config("analysis.eval_samples_per_prompt must be at least 1".into()));
        }
        if a.entropy_bins < 1 {
            return Err(Error::Config("analysis.entropy_bins must be at least 1".into()));
        }
        if a.eval_max_len == Some(0) {
            return Err(Error::Config("analysis.eval_max_len must be positive".into()));
        }
        if let Some(k) = a.pass_at_k.iter().find(|&&k| k < 1 || k as usize > a.eval_samples_per_prompt) {
            return Err(Error::Config(format!(
                "analysis.pass_at_k: k = {k} must be in 1..={}",
                a.eval_samples_per_prompt
            )));
        }
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }

    /// Cutoff used for the initial and final evaluations.
    pub fn eval_max_len(&self) -> usize {
        self.analysis.eval_max_len.unwrap_or_else(|| {
            let tiers = self.trainer.tiers.as_ref().map_or(0, |t| t.longest());
            self.trainer.penalty.target_length.max(tiers)
        })
    }
}

/// Set `dotted.path` inside a JSON object, creating intermediate objects.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override key `{path}` has an empty segment")));
    }
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!("override `{path}`: `{}` is not an object", keys[..i].join(".")))
        })?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!("split yields at least one key")
}

/// Parse a config document, then apply `DLER_SEED` (when the document has
/// no `trainer.seed`) and `key.path=value` overrides, in that order.
///
/// Override values are read as JSON when they parse and as strings
/// otherwise, so `trainer.lr=0.5` and `run_id=abc` both work.
pub fn parse_config(text: &str, source: &str, overrides: &[String], env_seed: Option<&str>) -> Result<ExperimentConfig> {
    let located = |e: serde_json::Error| Error::Config(format!("{source}: {e}"));
    let mut value: Value = serde_json::from_str(text).map_err(located)?;
    if !value.is_object() {
        return Err(Error::Config(format!("{source}: top level must be a JSON object")));
    }
    // Type errors in the file itself, reported with line and column.
    serde_json::from_str::<ExperimentConfig>(text).map_err(located)?;

    if value.pointer("/trainer/seed").is_none() {
        if let Some(raw) = env_seed {
            let seed: u64 = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={raw} is not an unsigned integer")))?;
            set_path(&mut value, "trainer.seed", Value::from(seed))?;
        }
    }
    for o in overrides {
        let (path, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` must look like key.path=value")))?;
        let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut value, path.trim(), v)?;
    }
    let config: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(format!("{source} (after overrides): {e}")))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path, overrides: &[String], env_seed: Option<&str>) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text, &path.display().to_string(), overrides, env_seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub accuracy: f64,
    pub mean_length: f64,
}

impl From<&EvalReport> for EvalPoint {
    fn from(r: &EvalReport) -> Self {
        Self {
            accuracy: r.accuracy,
            mean_length: r.mean_length,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub variant: Variant,
    pub status: RunStatus,
    pub error: Option<String>,
    pub steps_completed: usize,
    pub max_steps: usize,
    pub eval_max_len: usize,
    pub initial: EvalPoint,
    #[serde(rename = "final")]
    pub final_eval: Option<EvalPoint>,
    /// `100 * (1 - final length / initial length)`.
    pub length_reduction_percent: Option<f64>,
    pub last_metrics: Option<MetricsRecord>,
    pub checkpoints: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct MetricsLine {
    run_id: String,
    #[serde(flatten)]
    record: MetricsRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassAtK {
    pub k: u64,
    /// Mean over prompts of the unbiased per-prompt estimate.
    pub value: f64,
}

#[derive(Serialize)]
struct EvalFile<'a> {
    initial: &'a EvalReport,
    #[serde(rename = "final")]
    final_eval: &'a EvalReport,
    pass_at_k: Vec<PassAtK>,
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn checkpoint_name(steps: usize) -> String {
    format!("ckpt_{steps}.dlrp")
}

fn prepare_run_dir(dir: &Path) -> Result<()> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        return Err(Error::Config(format!(
            "run directory {} already exists and is not empty; pick another run_id",
            dir.display()
        )));
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn pass_at_k_means(samples: &[(Prompt, crate::policy::Rollout, bool)], per_prompt: usize, ks: &[u64]) -> Result<Vec<PassAtK>> {
    ks.iter()
        .map(|&k| {
            let chunks: Vec<_> = samples.chunks(per_prompt).collect();
            let total = chunks
                .iter()
                .map(|c| pass_at_k(c.len() as u64, c.iter().filter(|s| s.2).count() as u64, k))
                .sum::<Result<f64>>()?;
            Ok(PassAtK {
                k,
                value: total / chunks.len() as f64,
            })
        })
        .collect()
}

/// Train one variant into `dir`. Artifacts written before a failure are
/// kept, and the summary records the error.
pub fn run_variant(config: &ExperimentConfig, variant: Variant, dir: &Path) -> Result<RunSummary> {
    let vocab = Vocab::desk_default();
    let init = initial_policy(&vocab, &config.tasks)?;
    let seed = config.trainer.seed;
    let pool = make_prompt_pool(&config.tasks, &vocab, &mut rng::stream(seed, &[purpose::POOL]))?;
    let trainer_config = variant.apply(&config.trainer)?;
    let trainer = Trainer::new(trainer_config.clone(), pool.clone(), init.clone())?;
    let reports = dir.join(REPORTS_DIR);
    fs::create_dir_all(&reports)?;

    let eval_len = config.eval_max_len();
    let samples = config.analysis.eval_samples_per_prompt;
    let initial = evaluate(&init, &pool, eval_len, samples, seed)?;

    init.save_checkpoint(&dir.join(checkpoint_name(0)))?;
    let mut checkpoints = vec![checkpoint_name(0)];
    let metrics_path = dir.join(METRICS_FILE);
    write_atomic(&metrics_path, b"")?;

    let mut lines = Vec::new();
    let mut records: Vec<MetricsRecord> = Vec::new();
    let mut clip = ClipStats::default();
    let mut last_entropies: Vec<f64> = Vec::new();
    let mut params: PolicyParams = init.clone();
    let every = trainer_config.checkpoint_every;
    let max_steps = trainer_config.max_steps;

    let outcome = trainer.run(&init, |out| {
        serde_json::to_writer(
            &mut lines,
            &MetricsLine {
                run_id: config.run_id.clone(),
                record: out.metrics.clone(),
            },
        )?;
        lines.push(b'\n');
        write_atomic(&metrics_path, &lines)?;
        records.push(out.metrics.clone());
        clip.merge(&out.clip_stats);
        last_entropies.clear();
        for g in &out.batch.groups {
            for r in &g.rollouts {
                last_entropies.extend_from_slice(&r.old_entropies);
            }
        }
        params = out.params.clone();
        let done = out.metrics.step + 1;
        if every > 0 && done % every == 0 && done != max_steps {
            out.params.save_checkpoint(&dir.join(checkpoint_name(done)))?;
            checkpoints.push(checkpoint_name(done));
        }
        Ok(())
    });

    let steps_completed = records.len();
    let final_ckpt = checkpoint_name(steps_completed);
    if !checkpoints.contains(&final_ckpt) {
        params.save_checkpoint(&dir.join(&final_ckpt))?;
        checkpoints.push(final_ckpt);
    }
    write_atomic(&reports.join("metrics.csv"), metrics_csv(&records)?.as_bytes())?;
    if config.analysis.clip_stats {
        write_json(&reports.join("clip_stats.json"), &clip)?;
    }
    if config.analysis.entropy_histogram && !last_entropies.is_empty() {
        let h = entropy_histogram(&last_entropies, config.analysis.entropy_bins)?;
        write_json(&reports.join("entropy_histogram.json"), &h)?;
    }

    let mut summary = RunSummary {
        run_id: config.run_id.clone(),
        variant,
        status: RunStatus::Completed,
        error: None,
        steps_completed,
        max_steps,
        eval_max_len: eval_len,
        initial: EvalPoint::from(&initial),
        final_eval: None,
        length_reduction_percent: None,
        last_metrics: records.last().cloned(),
        checkpoints,
    };

    let run = match outcome {
        Ok(run) => run,
        Err(e) => {
            summary.status = RunStatus::Failed;
            summary.error = Some(e.to_string());
            write_json(&dir.join(SUMMARY_FILE), &summary)?;
            return Err(e);
        }
    };

    let (final_eval, final_samples) = evaluate_with_rollouts(&run.final_params, &pool, eval_len, samples, seed)?;
    write_json(
        &reports.join("eval.json"),
        &EvalFile {
            initial: &initial,
            final_eval: &final_eval,
            pass_at_k: pass_at_k_means(&final_samples, samples, &config.analysis.pass_at_k)?,
        },
    )?;
    if config.analysis.trace_stats {
        let traces: Vec<TraceRecord> = final_samples
            .iter()
            .enumerate()
            .map(|(i, (p, r, ok))| TraceRecord {
                id: format!("{}-{}", p.id, i % samples),
                text: rollout_to_text(&vocab, &r.tokens),
                correct: *ok,
            })
            .collect();
        write_json(&reports.join("trace_stats.json"), &trace_stats(&traces, &DEFAULT_KEYWORDS))?;
    }

    summary.final_eval = Some(EvalPoint::from(&final_eval));
    summary.length_reduction_percent = Some(if initial.mean_length > 0.0 {
        100.0 * (1.0 - final_eval.mean_length / initial.mean_length)
    } else {
        0.0
    });
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct CombinedSummary<'a> {
    run_id: &'a str,
    variants: &'a [RunSummary],
}

/// Validate, then train every configured variant.
pub fn cmd_train(config: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    config.validate()?;
    let run_dir = config.run_dir();
    prepare_run_dir(&run_dir)?;
    write_json(&run_dir.join(CONFIG_FILE), config)?;
    if let [variant] = config.variants[..] {
        return Ok(vec![run_variant(config, variant, &run_dir)?]);
    }
    let mut summaries = Vec::new();
    for &variant in &config.variants {
        summaries.push(run_variant(config, variant, &run_dir.join(variant.name()))?);
        write_json(
            &run_dir.join(SUMMARY_FILE),
            &CombinedSummary {
                run_id: &config.run_id,
                variants: &summaries,
            },
        )?;
    }
    Ok(summaries)
}

/// Read one JSON value per non-blank line, reporting the first bad line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::Input {
        path: name.clone(),
        line: 0,
        message: format!("cannot read: {e}"),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Input {
                path: name.clone(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    Ok(read_jsonl::<MetricsLine>(path)?.into_iter().map(|l| l.record).collect())
}

/// Plot-ready CSV: one row per step with [`REPORT_COLUMNS`].
pub fn metrics_csv(records: &[MetricsRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS).map_err(csv_error)?;
    for m in records {
        w.write_record([
            m.step.to_string(),
            m.mean_response_length.to_string(),
            m.mean_accuracy.to_string(),
            m.mean_token_entropy.to_string(),
            m.zero_reward_group_ratio.to_string(),
            m.all_one_group_ratio.to_string(),
        ])
        .map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Convert a metrics JSONL file to CSV and return the row count.
pub fn cmd_report(input: &Path, output: &Path) -> Result<usize> {
    let records = read_metrics(input)?;
    write_atomic(output, metrics_csv(&records)?.as_bytes())?;
    Ok(records.len())
}

fn read_snapshot(path: &Path) -> Result<ParamSnapshot> {
    ParamSnapshot::read(path).map_err(|e| Error::Input {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })
}

pub fn cmd_merge(base: &Path, tuned: &Path, output: &Path, strategy: MergeStrategy) -> Result<ParamSnapshot> {
    let merged = merge(&read_snapshot(base)?, &read_snapshot(tuned)?, strategy)?;
    merged.write(output)?;
    Ok(merged)
}

fn trace_csv(stats: &TraceStats) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "split",
        "responses",
        "total_steps",
        "step_count",
        "mean_tokens_per_step",
        "keyword_count",
    ])
    .map_err(csv_error)?;
    for (name, s) in [
        ("overall", &stats.overall),
        ("correct", &stats.correct),
        ("incorrect", &stats.incorrect),
    ] {
        w.write_record([
            name.to_string(),
            s.responses.to_string(),
            s.total_steps.to_string(),
            s.step_count.to_string(),
            s.mean_tokens_per_step.to_string(),
            s.keyword_count.to_string(),
        ])
        .map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Trace statistics for a JSONL corpus of `{id, text, correct}` records,
/// written as `trace_stats.json` and `trace_stats.csv` under `out_dir`.
pub fn cmd_analyze_trace(input: &Path, keywords: Option<&[String]>, out_dir: &Path) -> Result<TraceStats> {
    let records: Vec<TraceRecord> = read_jsonl(input)?;
    let stats = match keywords {
        Some(k) => trace_stats(&records, k),
        None => trace_stats(&records, &DEFAULT_KEYWORDS),
    };
    fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("trace_stats.json"), &stats)?;
    write_atomic(&out_dir.join("trace_stats.csv"), trace_csv(&stats)?.as_bytes())?;
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasOracleArgs {
    pub n: usize,
    pub sigmas: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    /// Fixed `e_i` for the bias-versus-sigma curve.
    pub curve_epsilon: f64,
    /// Half-width multiplier for the curve's confidence intervals.
    pub z: f64,
}

impl Default for BiasOracleArgs {
    fn default() -> Self {
        Self {
            n: 16,
            sigmas: vec![0.5, 1.0, 2.0],
            epsilons: vec![0.0, 0.5, 1.0],
            samples: 1_000_000,
            seed: 0,
            curve_epsilon: 0.5,
            z: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasOracleReport {
    pub args: BiasOracleArgs,
    pub results: Vec<BiasResult>,
    /// Every analytic moment within 3 standard errors of its estimate.
    pub analytic_checks_pass: bool,
    pub curve: BiasCurve,
    /// `None` when the estimates are too imprecise to order.
    pub magnitude_strictly_increasing: Option<bool>,
    pub signed_strictly_decreasing: Option<bool>,
    pub insufficient_precision: bool,
}

/// Run the oracle and write `bias_oracle.json` and `bias_oracle.csv` under
/// `out_dir`.
pub fn cmd_bias_oracle(args: &BiasOracleArgs, out_dir: &Path) -> Result<BiasOracleReport> {
    if args.sigmas.is_empty() || args.epsilons.is_empty() {
        return Err(Error::Domain("sigma and epsilon lists must be non-empty".into()));
    }
    if !(args.z > 0.0 && args.z.is_finite()) {
        return Err(Error::Domain(format!("z = {} must be positive", args.z)));
    }
    let results = args
        .sigmas
        .iter()
        .map(|&sigma| {
            mc_conditional_moments(&BiasExperiment {
                n: args.n,
                sigma,
                epsilon_values: args.epsilons.clone(),
                samples: args.samples,
                seed: args.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sigmas = args.sigmas.clone();
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();
    let curve = bias_curve(args.n, &sigmas, args.curve_epsilon, args.samples, args.seed, args.z)?;
    let magnitude = curve.magnitude_strictly_increasing();
    let report = BiasOracleReport {
        args: args.clone(),
        analytic_checks_pass: results.iter().all(|r| r.analytic_checks_pass(3.0)),
        insufficient_precision: magnitude.is_none(),
        magnitude_strictly_increasing: magnitude,
        signed_strictly_decreasing: curve.signed_strictly_decreasing(),
        results,
        curve,
    };

    fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("bias_oracle.json"), &report)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "sigma",
        "epsilon",
        "numerator_mean",
        "numerator_se",
        "numerator_analytic",
        "d_squared_mean",
        "d_squared_se",
        "d_squared_analytic",
        "bias_mean",
        "bias_se",
        "within_3se",
    ])
    .map_err(csv_error)?;
    for r in &report.results {
        for e in &r.estimates {
            let ok = e.numerator.within(e.analytic_numerator, 3.0) && e.d_squared.within(e.analytic_d_squared, 3.0);
            w.write_record([
                r.sigma.to_string(),
                e.epsilon.to_string(),
                e.numerator.mean.to_string(),
                e.numerator.se.to_string(),
                e.analytic_numerator.to_string(),
                e.d_squared.mean.to_string(),
                e.d_squared.se.to_string(),
                e.analytic_d_squared.to_string(),
                e.bias.mean.to_string(),
                e.bias.se.to_string(),
                ok.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    write_atomic(&out_dir.join("bias_oracle.csv"), &bytes)?;
    Ok(report)
}
