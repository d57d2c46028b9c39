//! CSV metrics files and text tables.
//!
//! Floats are written in shortest round-trip form, so reading a file and
//! writing it back reproduces it byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::toy::IterationRecord;
use crate::engine::{ablation_rows, summarize_sweep, AblationResult, AblationRow, Mode, StepMetrics, ValidationReport};
use crate::error::{Error, Result};

pub const STEP_COLUMNS: [&str; 18] = [
    "mode",
    "seed",
    "step",
    "num_workers",
    "batch_size",
    "phase_time",
    "train_update_time",
    "wall_time",
    "gpu_busy_time",
    "gpu_idle_time",
    "gpu_idle_ratio",
    "launched",
    "valid_generated",
    "filtered",
    "aborted",
    "zero_gradient_in_batch",
    "sample_waste_ratio",
    "sample_waste_ratio_of_generated",
];

pub const ABLATION_COLUMNS: [&str; 10] = [
    "mode",
    "wall_time",
    "phase_time",
    "gpu_idle_time",
    "overall_speedup",
    "rollout_speedup",
    "normalized_idle_time",
    "gpu_idle_ratio",
    "sample_waste_ratio",
    "sample_waste_ratio_of_generated",
];

fn write_records<W: Write, T: Serialize>(writer: W, records: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_records<R: Read, T: DeserializeOwned>(reader: R, required: &[&str], what: &str) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyInput(what.into()));
    }
    if let Some(missing) = required.iter().find(|c| !headers.iter().any(|h| h == **c)) {
        return Err(Error::MissingColumn((*missing).into()));
    }
    let records = rdr.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    if records.is_empty() {
        return Err(Error::EmptyInput(what.into()));
    }
    Ok(records)
}

pub fn write_step_csv<W: Write>(writer: W, steps: &[StepMetrics]) -> Result<()> {
    write_records(writer, steps)
}

pub fn read_step_csv<R: Read>(reader: R) -> Result<Vec<StepMetrics>> {
    read_records(reader, &STEP_COLUMNS, "step metrics")
}

pub fn write_ablation_csv<W: Write>(writer: W, rows: &[AblationRow]) -> Result<()> {
    write_records(writer, rows)
}

pub fn read_ablation_csv<R: Read>(reader: R) -> Result<Vec<AblationRow>> {
    read_records(reader, &ABLATION_COLUMNS, "ablation rows")
}

#[derive(Serialize)]
struct SeededIteration<'a> {
    seed: u64,
    #[serde(flatten)]
    record: &'a IterationRecord,
}

/// Learning-curve series, one row per (seed, iteration).
pub fn write_iteration_csv<W: Write>(writer: W, runs: &[(u64, Vec<IterationRecord>)]) -> Result<()> {
    // csv cannot serialize flattened structs, so go through JSON values.
    let mut w = csv::Writer::from_writer(writer);
    let mut header_written = false;
    for (seed, records) in runs {
        for record in records {
            let value = serde_json::to_value(SeededIteration { seed: *seed, record })?;
            let serde_json::Value::Object(map) = value else {
                unreachable!("records serialize to objects")
            };
            if !header_written {
                w.write_record(map.keys())?;
                header_written = true;
            }
            w.write_record(map.values().map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            }))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads either ablation rows or raw step metrics. Step metrics are turned
/// into rows per seed and summarized by the median across seeds.
pub fn load_table_rows<R: Read>(reader: R) -> Result<Vec<AblationRow>> {
    let mut text = String::new();
    let mut reader = reader;
    reader.read_to_string(&mut text)?;
    if text.trim().is_empty() {
        return Err(Error::EmptyInput("metrics file".into()));
    }
    let first = text.lines().next().unwrap_or_default();
    if first.split(',').any(|h| h == "overall_speedup") {
        return read_ablation_csv(text.as_bytes());
    }
    let steps = read_step_csv(text.as_bytes())?;
    let mut by_seed: BTreeMap<u64, Vec<StepMetrics>> = BTreeMap::new();
    for s in steps {
        by_seed.entry(s.seed).or_default().push(s);
    }
    let mut modes: Vec<Mode> = Mode::ALL
        .into_iter()
        .filter(|m| by_seed.values().any(|steps| steps.iter().any(|s| s.mode == *m)))
        .collect();
    modes.sort_by_key(|m| table_rank(*m));
    let results = by_seed
        .into_iter()
        .map(|(seed, steps)| {
            Ok(AblationResult {
                seed,
                rows: ablation_rows(&steps, &modes)?,
                steps,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_sweep(&results, &modes))
}

fn table_rank(mode: Mode) -> usize {
    Mode::TABLE
        .iter()
        .position(|m| *m == mode)
        .unwrap_or(Mode::TABLE.len())
}

fn render(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut out = String::from("|");
        for (cell, w) in cells.zip(&widths) {
            let _ = write!(out, " {cell:<w$} |");
        }
        out.push('\n');
        out
    };
    let mut out = line(&mut headers.iter().copied());
    out.push('|');
    for w in &widths {
        out.push_str(&"-".repeat(w + 2));
        out.push('|');
    }
    out.push('\n');
    for row in rows {
        out.push_str(&line(&mut row.iter().map(String::as_str)));
    }
    out
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

/// The ablation table, rows in display order. Rows without dynamic
/// sampling show `/` for speedups and waste.
pub fn render_ablation_table(rows: &[AblationRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("ablation rows".into()));
    }
    let mut sorted: Vec<&AblationRow> = rows.iter().collect();
    sorted.sort_by_key(|r| table_rank(r.mode));
    let body: Vec<Vec<String>> = sorted
        .iter()
        .map(|r| {
            let dynamic = r.mode != Mode::Static;
            let or_slash = |s: String| if dynamic { s } else { "/".into() };
            vec![
                r.mode.label().to_string(),
                or_slash(format!("{:.2}x", r.overall_speedup)),
                or_slash(format!("{:.2}x", r.rollout_speedup)),
                format!("{:.3}", r.normalized_idle_time),
                pct(r.gpu_idle_ratio),
                or_slash(pct(r.sample_waste_ratio)),
                or_slash(pct(r.sample_waste_ratio_of_generated)),
            ]
        })
        .collect();
    Ok(render(
        &[
            "Method",
            "Overall Speedup",
            "Rollout Speedup",
            "Normalized GPU Idle Time",
            "GPU Idle Ratio",
            "Sample Waste Ratio",
            "Waste / Generated",
        ],
        &body,
    ))
}

pub fn render_validation_table(report: &ValidationReport) -> String {
    let row = |name: &str, m: &StepMetrics, speedup: f64| {
        vec![
            name.to_string(),
            format!("{:.1}", m.phase_time),
            format!("{speedup:.2}x"),
            pct(m.gpu_idle_ratio),
        ]
    };
    render(
        &["Method", "Time (s)", "Speedup", "GPU Idle Ratio"],
        &[
            row("sequential reward", &report.naive, 1.0),
            row("async reward", &report.streamed, report.speedup),
        ],
    )
}
