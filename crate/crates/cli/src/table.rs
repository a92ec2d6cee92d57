//! Table of evaluation reports: one row per method, one column per task.

use std::collections::BTreeMap;
use std::io::Write;

use anyhow::{bail, Result};
use constrdyn::evaluation::EvalReport;
use constrdyn::physics::System;

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.2e}")
    } else {
        "inf".into()
    }
}

/// `median (+upper/-lower)`, the offsets reaching the 97.5th and 2.5th
/// percentiles.
pub fn cell(r: &EvalReport) -> String {
    let up = if r.p97_5.is_finite() && r.median.is_finite() {
        num(r.p97_5 - r.median)
    } else {
        "inf".into()
    };
    let down = if r.median.is_finite() {
        num(r.median - r.p2_5)
    } else {
        "inf".into()
    };
    format!("{} (+{up}/-{down})", num(r.median))
}

pub fn write_table<W: Write>(w: W, reports: &[EvalReport]) -> Result<()> {
    let tasks: Vec<System> = System::ALL
        .into_iter()
        .filter(|t| reports.iter().any(|r| r.task == *t))
        .collect();
    let mut methods: Vec<&str> = Vec::new();
    let mut cells: BTreeMap<(&str, System), String> = BTreeMap::new();
    for r in reports {
        if !methods.contains(&r.model.as_str()) {
            methods.push(&r.model);
        }
        if cells.insert((&r.model, r.task), cell(r)).is_some() {
            bail!("two reports for method {} on {}", r.model, r.task);
        }
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["method".to_string()];
    header.extend(tasks.iter().map(|t| t.to_string()));
    out.write_record(&header)?;
    for m in methods {
        let mut row = vec![m.to_string()];
        for t in &tasks {
            row.push(cells.get(&(m, *t)).cloned().unwrap_or_default());
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
