//! Grid execution with a resumable journal.
//!
//! Every finished cell is appended to `journal.jsonl` in the output
//! directory, keyed by config hash and grid index. A rerun of the same
//! config skips journalled cells. Once the grid is complete the sorted
//! `results.csv`, `summary.csv` and `report.md` are written.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use prunelab_core::model::preset;
use prunelab_core::ticket::{run_cell, SuiteConfig};
use prunelab_core::LayerSpec;
use serde::{Deserialize, Serialize};

use crate::config::{Cell, ExperimentConfig};
use crate::dataset::{load_dataset, Split};
use crate::error::{LabError, Result};
use crate::report::{self, ResultRow, RowSeed, FLAG_COLLAPSED};

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const REPORT_FILE: &str = "report.md";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Output directory; the config's when `None`.
    pub output_dir: Option<PathBuf>,
    /// Worker threads; the config's when `None`.
    pub workers: Option<usize>,
    /// Stop after executing this many cells (the grid stays resumable).
    pub limit: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub config_hash: String,
    /// Detail rows journalled so far, in grid order.
    pub rows: Vec<ResultRow>,
    pub summary: Vec<ResultRow>,
    /// Grid indices executed by this call.
    pub executed: Vec<usize>,
    pub complete: bool,
}

#[derive(Serialize, Deserialize)]
struct JournalEntry {
    hash: String,
    index: usize,
    row: ResultRow,
}

pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let split = load_dataset(&cfg.dataset)?;
    let specs = preset(
        &cfg.preset,
        split.train.sample_shape(),
        split.train.class_count(),
    )?;
    let out = opts
        .output_dir
        .clone()
        .unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&out).map_err(LabError::io(&out))?;
    let hash = cfg.hash();
    let cells = cfg.cells();
    let journal_path = out.join(JOURNAL_FILE);
    let (mut done, torn) = read_journal(&journal_path, &hash, cells.len())?;

    let mut todo: Vec<&Cell> = cells
        .iter()
        .filter(|c| !done.contains_key(&c.index))
        .collect();
    if let Some(limit) = opts.limit {
        todo.truncate(limit);
    }
    let executed: Vec<usize> = todo.iter().map(|c| c.index).collect();
    let suite = cfg.suite();
    let workers = opts
        .workers
        .unwrap_or(cfg.workers)
        .max(1)
        .min(todo.len().max(1));

    let mut journal = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&journal_path)
        .map_err(LabError::io(&journal_path))?;
    if torn {
        writeln!(journal).map_err(LabError::io(&journal_path))?;
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, ResultRow)>();
    let write_result = thread::scope(|scope| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (todo, next, specs, split, suite) = (&todo, &next, &specs, &split, &suite);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = todo.get(i) else { break };
                let row = execute(cell, specs, split, suite);
                if tx.send((cell.index, row)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // single writer: journal lines go out as cells finish
        for (index, row) in rx {
            let entry = JournalEntry {
                hash: hash.clone(),
                index,
                row,
            };
            let line =
                serde_json::to_string(&entry).map_err(|e| LabError::Schema(e.to_string()))?;
            writeln!(journal, "{line}")
                .and_then(|_| journal.flush())
                .map_err(LabError::io(&journal_path))?;
            done.insert(index, entry.row);
        }
        Ok(())
    });
    write_result?;

    let rows: Vec<ResultRow> = done.into_values().collect();
    let complete = rows.len() == cells.len();
    let summary = report::summarize(&rows);
    if complete {
        report::write_text(&out.join(RESULTS_FILE), &report::rows_to_csv(&rows)?)?;
        report::write_text(&out.join(SUMMARY_FILE), &report::rows_to_csv(&summary)?)?;
        report::write_text(&out.join(REPORT_FILE), &report::markdown(&rows)?)?;
    }
    Ok(RunReport {
        output_dir: out,
        config_hash: hash,
        rows,
        summary,
        executed,
        complete,
    })
}

/// Journalled rows of this config, keyed by grid index, and whether the
/// file ends mid-line. A torn last line (interrupted write) is ignored.
fn read_journal(
    path: &Path,
    hash: &str,
    cells: usize,
) -> Result<(BTreeMap<usize, ResultRow>, bool)> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((BTreeMap::new(), false)),
        Err(e) => {
            return Err(LabError::Io {
                path: path.into(),
                source: e,
            })
        }
    };
    let mut done = BTreeMap::new();
    for line in text.lines() {
        if let Ok(entry) = serde_json::from_str::<JournalEntry>(line) {
            if entry.hash == hash && entry.index < cells {
                done.insert(entry.index, entry.row);
            }
        }
    }
    Ok((done, !text.is_empty() && !text.ends_with('\n')))
}

fn execute(cell: &Cell, specs: &[LayerSpec], split: &Split, suite: &SuiteConfig) -> ResultRow {
    let start = Instant::now();
    let outcome = run_cell(
        &cell.pipeline,
        cell.check.0,
        specs,
        &split.train,
        &split.test,
        cell.sparsity,
        cell.seed,
        suite,
    );
    let mut row = ResultRow {
        pipeline: cell.pipeline.to_string(),
        check: cell.check.to_string(),
        sparsity: cell.sparsity,
        seed: RowSeed::Run(cell.seed),
        accuracy: None,
        keep_ratios: Vec::new(),
        seconds: 0.0,
        flags: Vec::new(),
    };
    match outcome {
        Ok(c) => {
            row.accuracy = Some(c.best_accuracy);
            row.keep_ratios = c.keep_ratios;
            if c.collapsed {
                row.flags.push(FLAG_COLLAPSED.into());
            }
        }
        Err(e) => row.flags.push(format!("failed:{}", e.kind())),
    }
    row.seconds = start.elapsed().as_secs_f64();
    row
}
