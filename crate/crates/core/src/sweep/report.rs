//! Report assembly: a machine-readable JSON document embedding every run
//! result, plus a Markdown rendering whose every number is recomputed from
//! those results.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    rank, summarize_all, summarize_cross, summarize_group, Axis, GroupSummary, RunOutcome,
    RunResult,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub global_seed: Option<u64>,
    pub data_fingerprint: String,
    pub code_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub name: String,
    pub error: String,
}

/// All sweep outputs. Derived tables are recomputed from `results` at
/// render time; the document carries no free-floating numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub v: u32,
    pub meta: ReportMeta,
    pub results: Vec<RunResult>,
    pub failures: Vec<FailedRun>,
}

/// Splits outcomes into results and failures. Needs at least one
/// successful run to report on.
pub fn build_report(outcomes: &[RunOutcome], meta: ReportMeta) -> Result<SweepReport> {
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            RunOutcome::Success(r) => results.push(r.clone()),
            RunOutcome::Failure { config, error } => failures.push(FailedRun {
                name: config.name.clone(),
                error: error.clone(),
            }),
        }
    }
    if results.is_empty() {
        return Err(Error::Config("no successful runs to report on".into()));
    }
    results.sort_by(|a, b| a.name().cmp(b.name()));
    failures.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(SweepReport {
        v: 1,
        meta,
        results,
        failures,
    })
}

impl SweepReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: SweepReport = serde_json::from_str(text)?;
        if report.v != 1 {
            return Err(Error::Format(format!(
                "unsupported report version {}",
                report.v
            )));
        }
        Ok(report)
    }

    pub fn render_markdown(&self) -> String {
        let r = &self.results;
        let mut out = String::new();
        out.push_str("# Experiment sweep report\n\n");
        out.push_str(&format!(
            "- Global seed: {}\n",
            self.meta
                .global_seed
                .map_or_else(|| "n/a".to_string(), |s| s.to_string())
        ));
        out.push_str(&format!(
            "- Data fingerprint: `{}`\n",
            self.meta.data_fingerprint
        ));
        out.push_str(&format!("- Code version: {}\n", self.meta.code_version));
        out.push_str(&format!(
            "- Runs: {} succeeded, {} failed\n\n",
            r.len(),
            self.failures.len()
        ));

        out.push_str("## Top 10 best performing systems\n\n");
        out.push_str(&ranking_table(rank(r, 10)));

        if let Ok(all) = summarize_all(r) {
            out.push_str("\n## Attribute-wise mean of scores for all models\n\n");
            out.push_str(&attr_row_table(&all.mean));
            out.push_str("\n## Attribute-wise variance of scores for all models\n\n");
            out.push_str(&attr_row_table(&all.variance));
        }

        out.push_str("\n## System-1 vs System-2\n\n");
        if let Ok(cross) = summarize_cross(r, Axis::Context, Axis::Family) {
            out.push_str(&overall_table(&cross));
        }

        out.push_str("\n## BERT vs XLM\n\n");
        if let Ok(groups) = summarize_group(r, Axis::Family) {
            out.push_str(&overall_table(&groups));
            out.push_str("\nAttribute-wise mean of scores per family:\n\n");
            out.push_str(&attr_group_table(&groups, |g| g.mean));
            out.push_str("\nAttribute-wise variance of scores per family:\n\n");
            out.push_str(&attr_group_table(&groups, |g| g.variance));
        }

        out.push_str("\n## Augmented vs un-augmented models\n\n");
        for (title, augmented) in [("augmented", true), ("un-augmented", false)] {
            let members: Vec<RunResult> = r
                .iter()
                .filter(|x| x.config.augmented == augmented)
                .cloned()
                .collect();
            if !members.is_empty() {
                out.push_str(&format!("5 best {title} models:\n\n"));
                out.push_str(&ranking_table(rank(&members, 5)));
                out.push('\n');
            }
        }
        if let Ok(groups) = summarize_group(r, Axis::Augmented) {
            out.push_str("Attribute-wise mean of scores per group:\n\n");
            out.push_str(&attr_group_table(&groups, |g| g.mean));
            out.push_str("\nAttribute-wise variance of scores per group:\n\n");
            out.push_str(&attr_group_table(&groups, |g| g.variance));
        }

        out.push_str("\n## Pooling strategies\n\n");
        for pooling in ["first", "mean", "sum"] {
            let members: Vec<RunResult> = r
                .iter()
                .filter(|x| x.config.pooling.label() == pooling)
                .cloned()
                .collect();
            if !members.is_empty() {
                out.push_str(&format!("5 best `{pooling}` models:\n\n"));
                out.push_str(&ranking_table(rank(&members, 5)));
                out.push('\n');
            }
        }
        if let Ok(groups) = summarize_group(r, Axis::Pooling) {
            out.push_str("Attribute-wise mean of scores per strategy:\n\n");
            out.push_str(&attr_group_table(&groups, |g| g.mean));
            out.push_str("\nAttribute-wise variance of scores per strategy:\n\n");
            out.push_str(&attr_group_table(&groups, |g| g.variance));
        }

        out.push_str("\n## Fine-tuning vs regression layer only\n\n");
        if let Ok(groups) = summarize_group(r, Axis::Regime) {
            out.push_str(&overall_table(&groups));
            out.push_str("\nAttribute-wise mean of scores per regime:\n\n");
            out.push_str(&attr_group_table(&groups, |g| g.mean));
            out.push_str("\nAttribute-wise variance of scores per regime:\n\n");
            out.push_str(&attr_group_table(&groups, |g| g.variance));
        }

        if !self.failures.is_empty() {
            out.push_str("\n## Failed runs\n\n");
            out.push_str("| Model | Error |\n|---|---|\n");
            for f in &self.failures {
                out.push_str(&format!("| {} | {} |\n", f.name, f.error));
            }
        }

        out.push_str("\n---\n");
        out.push_str("All variances are population variances (divide by N). ");
        out.push_str("Family labels follow the usual table naming; both encoders here are in-repo stand-ins.\n");
        out
    }
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

fn ranking_table(rows: Vec<&RunResult>) -> String {
    let mut out = String::from("| Model | MAE |\n|---|---|\n");
    for r in rows {
        out.push_str(&format!("| {} | {} |\n", r.name(), fmt3(r.mae.overall)));
    }
    out
}

fn attr_row_table(values: &[f64; 4]) -> String {
    let mut out = String::from("| FFD_Avg | FFD_Std | TRT_Avg | TRT_Std |\n|---|---|---|---|\n");
    out.push_str(&format!(
        "| {} | {} | {} | {} |\n",
        fmt3(values[0]),
        fmt3(values[1]),
        fmt3(values[2]),
        fmt3(values[3])
    ));
    out
}

fn attr_group_table(groups: &[GroupSummary], pick: impl Fn(&GroupSummary) -> [f64; 4]) -> String {
    let mut out =
        String::from("| Model | FFD_Avg | FFD_Std | TRT_Avg | TRT_Std |\n|---|---|---|---|---|\n");
    for g in groups {
        let v = pick(g);
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            g.key,
            fmt3(v[0]),
            fmt3(v[1]),
            fmt3(v[2]),
            fmt3(v[3])
        ));
    }
    out
}

fn overall_table(groups: &[GroupSummary]) -> String {
    let mut out = String::from("| Model | Average MAE across models |\n|---|---|\n");
    for g in groups {
        out.push_str(&format!("| {} | {} |\n", g.key, fmt3(g.mean_overall)));
    }
    out
}
