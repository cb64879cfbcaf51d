//! MAE metrics and result aggregation: per-attribute MAE, overall MAE,
//! group means/variances along grid axes, and top-k rankings.
//!
//! Metrics are always computed and stored in f64, whatever scalar the
//! model ran at, so the overall-MAE identity holds to tight tolerance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regress::Prediction;
use crate::scalar::Scalar;
use crate::sweep::RunConfig;

pub const RESULT_SCHEMA_VERSION: u32 = 1;

/// Per-attribute and overall MAE for one trained configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeSummary {
    pub ffd_avg: f64,
    pub ffd_std: f64,
    pub trt_avg: f64,
    pub trt_std: f64,
    pub overall: f64,
}

impl MaeSummary {
    pub fn from_attributes(attrs: [f64; 4]) -> Self {
        MaeSummary {
            ffd_avg: attrs[0],
            ffd_std: attrs[1],
            trt_avg: attrs[2],
            trt_std: attrs[3],
            overall: (attrs[0] + attrs[1] + attrs[2] + attrs[3]) / 4.0,
        }
    }

    pub fn attributes(&self) -> [f64; 4] {
        [self.ffd_avg, self.ffd_std, self.trt_avg, self.trt_std]
    }

    /// |overall − mean(four attribute MAEs)|; zero up to rounding.
    pub fn overall_identity_error(&self) -> f64 {
        let mean = self.attributes().iter().sum::<f64>() / 4.0;
        (self.overall - mean).abs()
    }
}

/// One run's outcome: its config, metrics, and wall time. Wall time is
/// kept out of the serialized form so result files are byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub mae: MaeSummary,
    #[serde(skip, default)]
    pub wall_time_secs: f64,
}

impl RunResult {
    pub fn name(&self) -> &str {
        &self.config.name
    }
}

/// A run that finished or the error that stopped it.
#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Success(RunResult),
    Failure { config: RunConfig, error: String },
}

impl RunOutcome {
    pub fn name(&self) -> &str {
        match self {
            RunOutcome::Success(r) => r.name(),
            RunOutcome::Failure { config, .. } => &config.name,
        }
    }

    pub fn as_success(&self) -> Option<&RunResult> {
        match self {
            RunOutcome::Success(r) => Some(r),
            RunOutcome::Failure { .. } => None,
        }
    }
}

/// Per-attribute MAE over words, plus the unweighted mean of the four
/// attribute MAEs. Predictions are clipped values, as submitted.
pub fn mae<T: Scalar>(preds: &[Prediction<T>], golds: &[[T; 4]]) -> Result<MaeSummary> {
    if preds.is_empty() {
        return Err(Error::Config("mae over an empty prediction list".into()));
    }
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} gold rows",
            preds.len(),
            golds.len()
        )));
    }
    let mut sums = [0.0f64; 4];
    for (p, g) in preds.iter().zip(golds.iter()) {
        let p = p.as_array();
        for k in 0..4 {
            let d = p[k].to_f64().unwrap_or(f64::NAN) - g[k].to_f64().unwrap_or(f64::NAN);
            sums[k] += d.abs();
        }
    }
    let n = preds.len() as f64;
    Ok(MaeSummary::from_attributes(sums.map(|s| s / n)))
}

/// The five grid dimensions results can be grouped by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Context,
    Family,
    Regime,
    Pooling,
    Augmented,
}

impl Axis {
    pub const ALL: [Axis; 5] = [
        Axis::Context,
        Axis::Family,
        Axis::Regime,
        Axis::Pooling,
        Axis::Augmented,
    ];

    /// Group label of one config along this axis, as reports print it.
    pub fn value_of(&self, config: &RunConfig) -> String {
        match self {
            Axis::Context => match config.context {
                crate::features::ContextMode::Sys1 => "Sys1".into(),
                crate::features::ContextMode::Sys2 => "Sys2".into(),
            },
            Axis::Family => match config.family {
                crate::tokenizer::Family::A => "BERT".into(),
                crate::tokenizer::Family::B => "XLM".into(),
            },
            Axis::Regime => config.regime.label().into(),
            Axis::Pooling => config.pooling.label().into(),
            Axis::Augmented => if config.augmented { "augmented" } else { "unaugmented" }.into(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Axis::Context => "context",
            Axis::Family => "family",
            Axis::Regime => "regime",
            Axis::Pooling => "pooling",
            Axis::Augmented => "augmented",
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "context" => Ok(Axis::Context),
            "family" => Ok(Axis::Family),
            "regime" => Ok(Axis::Regime),
            "pooling" => Ok(Axis::Pooling),
            "augmented" => Ok(Axis::Augmented),
            other => Err(Error::Config(format!("unknown axis {other:?}"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Mean and population variance of member results, per attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub key: String,
    pub count: usize,
    pub mean: [f64; 4],
    /// Population variance (÷N).
    pub variance: [f64; 4],
    pub mean_overall: f64,
}

fn summarize(key: String, members: &[&RunResult]) -> GroupSummary {
    let n = members.len() as f64;
    let mut mean = [0.0f64; 4];
    let mut mean_overall = 0.0;
    for r in members {
        for (k, v) in r.mae.attributes().into_iter().enumerate() {
            mean[k] += v;
        }
        mean_overall += r.mae.overall;
    }
    mean = mean.map(|s| s / n);
    mean_overall /= n;
    let mut variance = [0.0f64; 4];
    for r in members {
        for (k, v) in r.mae.attributes().into_iter().enumerate() {
            variance[k] += (v - mean[k]).powi(2);
        }
    }
    variance = variance.map(|s| s / n);
    GroupSummary {
        key,
        count: members.len(),
        mean,
        variance,
        mean_overall,
    }
}

/// Partitions results along one axis; groups come back sorted by key.
pub fn summarize_group(results: &[RunResult], axis: Axis) -> Result<Vec<GroupSummary>> {
    summarize_by(results, |r| axis.value_of(&r.config))
}

/// Partition by the cross product of two axes (e.g. `Sys1_BERT`).
pub fn summarize_cross(results: &[RunResult], a: Axis, b: Axis) -> Result<Vec<GroupSummary>> {
    summarize_by(results, |r| {
        format!("{}_{}", a.value_of(&r.config), b.value_of(&r.config))
    })
}

/// Whole-population summary (a single group keyed "all").
pub fn summarize_all(results: &[RunResult]) -> Result<GroupSummary> {
    let mut groups = summarize_by(results, |_| "all".to_string())?;
    Ok(groups.remove(0))
}

fn summarize_by(
    results: &[RunResult],
    key_of: impl Fn(&RunResult) -> String,
) -> Result<Vec<GroupSummary>> {
    if results.is_empty() {
        return Err(Error::Config("cannot summarize zero results".into()));
    }
    let mut groups: std::collections::BTreeMap<String, Vec<&RunResult>> =
        std::collections::BTreeMap::new();
    for r in results {
        groups.entry(key_of(r)).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|(key, members)| summarize(key, &members))
        .collect())
}

/// Top-k by overall MAE, ascending; ties break on canonical config name.
pub fn rank(results: &[RunResult], k: usize) -> Vec<&RunResult> {
    let mut sorted: Vec<&RunResult> = results.iter().collect();
    sorted.sort_by(|a, b| {
        a.mae
            .overall
            .total_cmp(&b.mae.overall)
            .then_with(|| a.name().cmp(b.name()))
    });
    sorted.truncate(k);
    sorted
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResultLine {
    v: u32,
    config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mae: Option<MaeSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// JSON-lines serialization, one outcome per line, sorted by config name.
pub fn write_results(outcomes: &[RunOutcome]) -> Result<String> {
    let mut sorted: Vec<&RunOutcome> = outcomes.iter().collect();
    sorted.sort_by(|a, b| a.name().cmp(b.name()));
    let mut out = String::new();
    for outcome in sorted {
        let line = match outcome {
            RunOutcome::Success(r) => ResultLine {
                v: RESULT_SCHEMA_VERSION,
                config: r.config.clone(),
                mae: Some(r.mae.clone()),
                error: None,
            },
            RunOutcome::Failure { config, error } => ResultLine {
                v: RESULT_SCHEMA_VERSION,
                config: config.clone(),
                mae: None,
                error: Some(error.clone()),
            },
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_results(text: &str) -> Result<Vec<RunOutcome>> {
    let mut outcomes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ResultLine = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("results line {}: {e}", i + 1)))?;
        if parsed.v != RESULT_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "results line {}: unsupported schema version {}",
                i + 1,
                parsed.v
            )));
        }
        outcomes.push(match (parsed.mae, parsed.error) {
            (Some(mae), None) => RunOutcome::Success(RunResult {
                config: parsed.config,
                mae,
                wall_time_secs: 0.0,
            }),
            (None, Some(error)) => RunOutcome::Failure {
                config: parsed.config,
                error,
            },
            _ => {
                return Err(Error::Format(format!(
                    "results line {}: need exactly one of mae/error",
                    i + 1
                )))
            }
        });
    }
    Ok(outcomes)
}
