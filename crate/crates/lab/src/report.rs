//! Result rows, their CSV form, per-cell summaries and markdown tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use prunelab_core::stats;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const CSV_COLUMNS: [&str; 8] = [
    "pipeline", "check", "sparsity", "seed", "accuracy", "ratios", "seconds", "flags",
];

pub const FLAG_COLLAPSED: &str = "collapsed";

/// Seed column: a run seed, or `mean` for a summary row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RowSeed {
    Run(u64),
    Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub pipeline: String,
    pub check: String,
    pub sparsity: f64,
    pub seed: RowSeed,
    /// Best-epoch test accuracy in percent; `None` for failed runs.
    pub accuracy: Option<f64>,
    pub keep_ratios: Vec<f64>,
    pub seconds: f64,
    /// `collapsed`, `failed:<kind>`, and `std=`/`n=` on summary rows.
    pub flags: Vec<String>,
}

impl ResultRow {
    pub fn is_failed(&self) -> bool {
        self.flags.iter().any(|f| f.starts_with("failed"))
    }

    pub fn is_collapsed(&self) -> bool {
        self.flags.iter().any(|f| f == FLAG_COLLAPSED)
    }

    pub fn summary_std(&self) -> Option<f64> {
        self.flags
            .iter()
            .find_map(|f| f.strip_prefix("std="))
            .and_then(|v| v.parse().ok())
    }

    fn record(&self) -> [String; 8] {
        [
            self.pipeline.clone(),
            self.check.clone(),
            self.sparsity.to_string(),
            match self.seed {
                RowSeed::Run(s) => s.to_string(),
                RowSeed::Summary => "mean".into(),
            },
            self.accuracy.map_or(String::new(), |a| a.to_string()),
            self.keep_ratios
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(";"),
            self.seconds.to_string(),
            self.flags.join(";"),
        ]
    }
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)
        .map_err(|e| LabError::Schema(e.to_string()))?;
    for row in rows {
        w.write_record(row.record())
            .map_err(|e| LabError::Schema(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| LabError::Schema(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv(text: &str, file: &str) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| LabError::Parse {
        file: file.into(),
        offset: 0,
        msg: e.to_string(),
    })?;
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(LabError::Schema(format!(
            "{file}: expected columns {}",
            CSV_COLUMNS.join(",")
        )));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| LabError::Parse {
            file: file.into(),
            offset: e.position().map_or(0, |p| p.byte()),
            msg: e.to_string(),
        })?;
        let offset = record.position().map_or(0, |p| p.byte());
        let bad = |what: &str, v: &str| LabError::Parse {
            file: file.into(),
            offset,
            msg: format!("bad {what} {v:?}"),
        };
        let num = |what: &str, v: &str| v.parse::<f64>().map_err(|_| bad(what, v));
        let seed = match &record[3] {
            "mean" => RowSeed::Summary,
            s => RowSeed::Run(s.parse().map_err(|_| bad("seed", s))?),
        };
        let accuracy = match &record[4] {
            "" => None,
            a => {
                let a = num("accuracy", a)?;
                if !(0.0..=100.0).contains(&a) {
                    return Err(LabError::Schema(format!(
                        "{file}: byte {offset}: accuracy {a} outside [0, 100]"
                    )));
                }
                Some(a)
            }
        };
        rows.push(ResultRow {
            pipeline: record[0].to_string(),
            check: record[1].to_string(),
            sparsity: num("sparsity", &record[2])?,
            seed,
            accuracy,
            keep_ratios: list(&record[5])
                .into_iter()
                .map(|r| num("ratio", r))
                .collect::<Result<_>>()?,
            seconds: num("seconds", &record[6])?,
            flags: list(&record[7]).into_iter().map(String::from).collect(),
        });
    }
    Ok(rows)
}

fn list(v: &str) -> Vec<&str> {
    if v.is_empty() {
        Vec::new()
    } else {
        v.split(';').collect()
    }
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(LabError::io(path))?;
    rows_from_csv(&text, &path.display().to_string())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(LabError::io(path))
}

type CellKey = (String, String, u64);

fn cell_key(row: &ResultRow) -> CellKey {
    (
        row.pipeline.clone(),
        row.check.clone(),
        row.sparsity.to_bits(),
    )
}

/// One summary row per (pipeline, check, sparsity), in first-appearance
/// order. Failed runs are left out of the mean and counted in the flags.
pub fn summarize(rows: &[ResultRow]) -> Vec<ResultRow> {
    let mut order: Vec<CellKey> = Vec::new();
    let mut groups: BTreeMap<CellKey, Vec<&ResultRow>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.seed != RowSeed::Summary) {
        let key = cell_key(row);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(row);
    }
    order
        .into_iter()
        .map(|key| {
            let group = &groups[&key];
            let accs: Vec<f64> = group.iter().filter_map(|r| r.accuracy).collect();
            let failed = group.len() - accs.len();
            let mut flags = Vec::new();
            if !accs.is_empty() {
                flags.push(format!("std={}", stats::sample_std(&accs)));
            }
            flags.push(format!("n={}", accs.len()));
            if failed > 0 {
                flags.push(format!("failed={failed}"));
            }
            if group.iter().any(|r| r.is_collapsed()) {
                flags.push(FLAG_COLLAPSED.to_string());
            }
            ResultRow {
                pipeline: key.0.clone(),
                check: key.1.clone(),
                sparsity: group[0].sparsity,
                seed: RowSeed::Summary,
                accuracy: (!accs.is_empty()).then(|| stats::mean(&accs)),
                keep_ratios: Vec::new(),
                seconds: group.iter().map(|r| r.seconds).sum(),
                flags,
            }
        })
        .collect()
}

/// `mean±std` with two decimals.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{mean:.2}±{std:.2}")
}

/// One table per pipeline: a row per check, a column per sparsity.
pub fn markdown(rows: &[ResultRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(LabError::Schema("no rows to report".into()));
    }
    let summary = summarize(rows);
    let mut pipelines: Vec<&str> = Vec::new();
    let mut sparsities: Vec<f64> = Vec::new();
    for s in &summary {
        if !pipelines.contains(&s.pipeline.as_str()) {
            pipelines.push(&s.pipeline);
        }
        if !sparsities.contains(&s.sparsity) {
            sparsities.push(s.sparsity);
        }
    }
    sparsities.sort_by(f64::total_cmp);
    let mut out = String::new();
    for pipeline in pipelines {
        let _ = writeln!(out, "### {pipeline}\n");
        let _ = write!(out, "| check |");
        for p in &sparsities {
            let _ = write!(out, " {}% |", trim_float(p * 100.0));
        }
        let _ = write!(out, "\n|---|");
        out.push_str(&"---:|".repeat(sparsities.len()));
        out.push('\n');
        let mut checks: Vec<&str> = Vec::new();
        for s in summary.iter().filter(|s| s.pipeline == pipeline) {
            if !checks.contains(&s.check.as_str()) {
                checks.push(&s.check);
            }
        }
        for check in checks {
            let _ = write!(out, "| {check} |");
            for p in &sparsities {
                let cell = summary
                    .iter()
                    .find(|s| s.pipeline == pipeline && s.check == check && s.sparsity == *p);
                let text = match cell {
                    None => String::new(),
                    Some(s) => match s.accuracy {
                        None => "failed".into(),
                        Some(m) => {
                            let c = format_cell(m, s.summary_std().unwrap_or(0.0));
                            if s.is_collapsed() {
                                format!("_{c}_")
                            } else {
                                c
                            }
                        }
                    },
                };
                let _ = write!(out, " {text} |");
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out.push_str(
        "Best-epoch test accuracy (%): the best epoch of each seed, averaged over seeds; \
         ± is the sample standard deviation. Italic cells had a layer pruned away entirely.\n",
    );
    Ok(out)
}

fn trim_float(v: f64) -> String {
    let s = format!("{v:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}
