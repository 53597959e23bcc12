//! Metrics CSV: one row per (seed, defense, mode) followed by mean and std
//! rows per (defense, mode) group.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use memdisc::defense::DefenseKind;
use memdisc::discrepancy::fmt_f64;
use memdisc::stats;
use memdisc::stream::{MetricsRow, RunMode};

use crate::error::{io_error, CliError};

pub const METRICS_HEADER: &str =
    "run_id,seed,defense,mode,acc_start,n_poison_batches,acc_post_poison,acc_post_trigger,delta";

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

pub fn format_row(r: &MetricsRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        r.run_id,
        r.seed,
        r.defense,
        r.mode,
        fmt_f64(r.acc_start),
        opt(r.n_poison_batches, |n| n.to_string()),
        fmt_f64(r.acc_post_poison),
        fmt_f64(r.acc_post_trigger),
        opt(r.delta, fmt_f64),
    )
}

/// Groups in first-appearance order.
pub fn groups(rows: &[MetricsRow]) -> Vec<(DefenseKind, RunMode, Vec<&MetricsRow>)> {
    let mut out: Vec<(DefenseKind, RunMode, Vec<&MetricsRow>)> = Vec::new();
    for r in rows {
        match out
            .iter_mut()
            .find(|(d, m, _)| *d == r.defense && *m == r.mode)
        {
            Some(g) => g.2.push(r),
            None => out.push((r.defense, r.mode, vec![r])),
        }
    }
    out
}

fn column<F: Fn(&MetricsRow) -> Option<f64>>(rows: &[&MetricsRow], f: F) -> Option<Vec<f64>> {
    rows.iter().map(|r| f(r)).collect()
}

/// Mean and population-std lines for one group.
pub fn summary_lines(defense: DefenseKind, mode: RunMode, rows: &[&MetricsRow]) -> [String; 2] {
    let cols = [
        column(rows, |r| Some(r.acc_start)),
        column(rows, |r| r.n_poison_batches.map(|n| n as f64)),
        column(rows, |r| Some(r.acc_post_poison)),
        column(rows, |r| Some(r.acc_post_trigger)),
        column(rows, |r| r.delta),
    ];
    let line = |label: &str, f: fn(&[f64]) -> f64| {
        let vals: Vec<String> = cols
            .iter()
            .map(|c| opt(c.as_deref(), |v| fmt_f64(f(v))))
            .collect();
        format!("{label}-{defense}-{mode},{label},{defense},{mode},{}", vals.join(","))
    };
    [line("mean", stats::mean), line("std", stats::std_dev)]
}

/// Data rows then summary rows, without the header.
pub fn metrics_lines(rows: &[MetricsRow]) -> Vec<String> {
    let mut lines: Vec<String> = rows.iter().map(format_row).collect();
    for (d, m, g) in groups(rows) {
        lines.extend(summary_lines(d, m, &g));
    }
    lines
}

/// Writes `header` and `lines`, then syncs the file to disk.
pub fn write_csv(path: &Path, header: &str, lines: &[String]) -> Result<(), CliError> {
    let io = io_error("metrics writer");
    let file = File::create(path).map_err(&io)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{header}").map_err(&io)?;
    for l in lines {
        writeln!(w, "{l}").map_err(&io)?;
    }
    let file = w.into_inner().map_err(|e| io(e.into_error()))?;
    file.sync_all().map_err(&io)
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), CliError> {
    write_csv(path, METRICS_HEADER, &metrics_lines(rows))
}
