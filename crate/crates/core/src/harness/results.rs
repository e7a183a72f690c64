//! Line-delimited result files. Classes and experts are 1-based on disk, as in
//! dataset files.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::experiment::{ExampleRow, ExperimentConfig, ExperimentResult, Summary, SweepResult};
use crate::error::{Error, Result};

pub const RESULTS_FORMAT: &str = "panel-consensus-results";
pub const SWEEP_FORMAT: &str = "panel-consensus-sweep";
pub const RESULTS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RowLine {
    t: usize,
    prediction: usize,
    truth: usize,
    queries: usize,
    confidence: f64,
    est_error: f64,
    order: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segment: Option<String>,
}

impl From<&ExampleRow> for RowLine {
    fn from(r: &ExampleRow) -> Self {
        RowLine {
            t: r.t,
            prediction: r.prediction + 1,
            truth: r.truth + 1,
            queries: r.queries,
            confidence: r.confidence,
            est_error: r.est_error,
            order: r.order.iter().map(|j| j + 1).collect(),
            segment: r.segment.clone(),
        }
    }
}

fn io_json(e: serde_json::Error) -> Error {
    Error::Schema(format!("serialization failed: {e}"))
}

fn write_line<W: Write>(w: &mut W, v: &impl Serialize) -> Result<()> {
    serde_json::to_writer(&mut *w, v).map_err(io_json)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Header line, one line per example, then a summary line.
pub fn write_result<W: Write>(res: &ExperimentResult, mut w: W) -> Result<()> {
    write_line(
        &mut w,
        &json!({
            "format": RESULTS_FORMAT,
            "version": RESULTS_VERSION,
            "config": res.config,
            "refits": res.refits,
            "worst_rhat": res.worst_rhat,
        }),
    )?;
    for r in &res.rows {
        write_line(&mut w, &RowLine::from(r))?;
    }
    write_line(&mut w, &json!({ "summary": res.summary }))?;
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_result`].
pub fn read_result<R: BufRead>(reader: R) -> Result<ExperimentResult> {
    let mut lines = reader.lines().enumerate();
    let parse = |line: usize, s: &str| -> Result<Value> {
        serde_json::from_str(s).map_err(|e| Error::Parse { line, message: e.to_string() })
    };
    let (_, first) = lines.next().ok_or_else(|| Error::Schema("empty result file".into()))?;
    let header = parse(1, &first?)?;
    if header["format"] != RESULTS_FORMAT || header["version"] != RESULTS_VERSION {
        return Err(Error::Schema(format!("not a version {RESULTS_VERSION} {RESULTS_FORMAT} file")));
    }
    let config: ExperimentConfig =
        serde_json::from_value(header["config"].clone()).map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    let refits = header["refits"].as_u64().unwrap_or(0) as usize;
    let worst_rhat = header["worst_rhat"].as_f64().unwrap_or(0.0);
    let mut rows = Vec::new();
    let mut summary = None;
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = parse(i + 1, &line)?;
        if let Some(s) = v.get("summary") {
            summary = Some(
                serde_json::from_value::<Summary>(s.clone())
                    .map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?,
            );
            continue;
        }
        let r: RowLine = serde_json::from_value(v).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        if r.prediction == 0 || r.truth == 0 || r.order.contains(&0) {
            return Err(Error::Parse { line: i + 1, message: "classes and experts are 1-based".into() });
        }
        rows.push(ExampleRow {
            t: r.t,
            prediction: r.prediction - 1,
            truth: r.truth - 1,
            queries: r.queries,
            confidence: r.confidence,
            est_error: r.est_error,
            order: r.order.iter().map(|j| j - 1).collect(),
            segment: r.segment,
        });
    }
    let summary = summary.ok_or_else(|| Error::Schema("result file has no summary line".into()))?;
    Ok(ExperimentResult { config, rows, summary, refits, worst_rhat })
}

/// Header, one line per (run, threshold), then one summary line per threshold.
pub fn write_sweep<W: Write>(res: &SweepResult, base: &ExperimentConfig, mut w: W) -> Result<()> {
    write_line(&mut w, &json!({ "format": SWEEP_FORMAT, "version": RESULTS_VERSION, "config": base }))?;
    for r in &res.rows {
        write_line(&mut w, r)?;
    }
    for s in &res.summary {
        write_line(&mut w, &json!({ "summary": s }))?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width text table of the per-threshold sweep summary.
pub fn format_sweep_table(res: &SweepResult) -> String {
    let mut out = format!("{:>9} {:>10} {:>12} {:>8} {:>11}\n", "threshold", "error", "mean_queries", "ece", "pooled_ece");
    for s in &res.summary {
        out.push_str(&format!(
            "{:>9.4} {:>10.4} {:>12.3} {:>8.4} {:>11.4}\n",
            s.threshold, s.error_rate, s.mean_queries, s.ece, s.pooled_ece
        ));
    }
    out
}
