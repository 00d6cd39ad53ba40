//! Ablation grids: cross products of augmentation and architecture switches,
//! each cell trained on one split and scored on a noisy held-out split.
//!
//! Grid file format:
//!
//! ```json
//! {
//!   "base": { "train": { "epochs": 80 } },
//!   "smoothing": ["original", "linear", "gaussian"],
//!   "mixing": [false, true],
//!   "refinement": [false, true],
//!   "fusion": ["early", "mid", "late", "mid_late"],
//!   "seeds": [0],
//!   "holdout": 16,
//!   "eval_dropout": 0.1,
//!   "eval_seed": 0
//! }
//! ```
//!
//! `base` is a run config document (see [`crate::config`]); every other key
//! is optional and defaults to the values shown.

use std::fmt::Write as _;

use mmgcn::augment::SmoothingKind;
use mmgcn::data::{perturb_dataset, Dataset};
use mmgcn::metrics::EvalReport;
use mmgcn::model::{train_with, FusionStrategy, Mmgcn};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::evaluation::evaluate_model;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub smoothing: SmoothingKind,
    pub mixing: bool,
    pub refinement: bool,
    pub fusion: FusionStrategy,
}

impl Cell {
    /// `base` with this cell's switches applied. Smoothing parameters
    /// other than the kind come from `base`.
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.train.smoothing.kind = self.smoothing;
        cfg.train.mixing.enabled = self.mixing;
        cfg.model.refinement.enabled = self.refinement;
        cfg.model.fusion = self.fusion;
        cfg
    }

    pub fn smoothing_code(&self) -> &'static str {
        match self.smoothing {
            SmoothingKind::Original => "O",
            SmoothingKind::Linear => "L",
            SmoothingKind::Gaussian => "G",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridAxes {
    pub smoothing: Vec<SmoothingKind>,
    pub mixing: Vec<bool>,
    pub refinement: Vec<bool>,
    pub fusion: Vec<FusionStrategy>,
    pub seeds: Vec<u64>,
    /// Sequences taken from the end of the dataset for scoring.
    pub holdout: usize,
    pub eval_dropout: f64,
    pub eval_seed: u64,
}

impl Default for GridAxes {
    fn default() -> Self {
        Self {
            smoothing: vec![SmoothingKind::Original, SmoothingKind::Linear, SmoothingKind::Gaussian],
            mixing: vec![false, true],
            refinement: vec![false, true],
            fusion: FusionStrategy::ALL.to_vec(),
            seeds: vec![0],
            holdout: 16,
            eval_dropout: 0.1,
            eval_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationGrid {
    pub base: RunConfig,
    pub axes: GridAxes,
}

impl AblationGrid {
    /// `full` for the complete default grid, otherwise a grid file path.
    pub fn resolve(spec: &str) -> Result<Self, CliError> {
        if spec == "full" {
            return Ok(Self {
                base: RunConfig::desk(),
                axes: GridAxes::default(),
            });
        }
        let text = std::fs::read_to_string(spec)
            .map_err(|e| CliError::Usage(format!("grid `{spec}` is not `full` and cannot be read: {e}")))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| schema(spec, e))?;
        Self::from_value(value, spec)
    }

    pub fn from_value(value: Value, origin: &str) -> Result<Self, CliError> {
        let Value::Object(mut map) = value else {
            return Err(schema(origin, "grid must be a JSON object"));
        };
        let base = map.remove("base").unwrap_or_else(|| Value::Object(Default::default()));
        let base = RunConfig::from_value(base, origin)?;
        let axes: GridAxes = serde_json::from_value(Value::Object(map)).map_err(|e| schema(origin, e))?;
        let grid = Self { base, axes };
        grid.validate().map_err(|m| schema(origin, m))?;
        Ok(grid)
    }

    fn validate(&self) -> Result<(), String> {
        let a = &self.axes;
        if a.smoothing.is_empty() || a.mixing.is_empty() || a.refinement.is_empty() || a.fusion.is_empty() {
            return Err("every grid axis needs at least one value".into());
        }
        if a.seeds.is_empty() {
            return Err("at least one seed is required".into());
        }
        if a.holdout == 0 {
            return Err("holdout must be at least one sequence".into());
        }
        if !(0.0..=1.0).contains(&a.eval_dropout) {
            return Err(format!("eval_dropout must be in [0, 1], got {}", a.eval_dropout));
        }
        for cell in self.cells() {
            cell.apply(&self.base).validate().map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    /// Cross product in axis order: smoothing, mixing, refinement, fusion.
    pub fn cells(&self) -> Vec<Cell> {
        let a = &self.axes;
        let mut out = Vec::new();
        for &smoothing in &a.smoothing {
            for &mixing in &a.mixing {
                for &refinement in &a.refinement {
                    for &fusion in &a.fusion {
                        out.push(Cell {
                            smoothing,
                            mixing,
                            refinement,
                            fusion,
                        });
                    }
                }
            }
        }
        out
    }
}

fn schema(origin: &str, msg: impl ToString) -> CliError {
    CliError::Schema {
        origin: origin.to_string(),
        msg: msg.to_string(),
    }
}

/// Train split and the perturbed held-out split.
pub fn split_for_ablation(ds: &Dataset, holdout: usize, dropout: f64, seed: u64) -> anyhow::Result<(Dataset, Dataset)> {
    if holdout >= ds.len() {
        return Err(CliError::Data(format!(
            "holdout of {holdout} leaves no training sequences out of {}",
            ds.len()
        ))
        .into());
    }
    let (train, test) = ds.split_at(ds.len() - holdout);
    Ok((train, perturb_dataset(&test, dropout, seed)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub cell: Cell,
    pub seed: u64,
    pub final_loss: f64,
    pub final_train_accuracy: f64,
    pub report: EvalReport,
}

pub fn run_cell(
    base: &RunConfig,
    cell: Cell,
    seed: u64,
    train: &Dataset,
    test: &Dataset,
    threads: usize,
) -> anyhow::Result<CellRun> {
    let mut cfg = cell.apply(base);
    cfg.model.adapt_to(&train.meta);
    cfg.train.seed = seed;
    let outcome = train_with(train, &cfg.model, &cfg.train, threads, |_, _, _| std::ops::ControlFlow::Continue(()))?;
    let model = Mmgcn::new(cfg.model.clone())?;
    let report = evaluate_model(&model, &outcome.params, test, &cfg.eval)?;
    let last = outcome.history.last();
    Ok(CellRun {
        cell,
        seed,
        final_loss: last.map_or(f64::NAN, |h| h.loss),
        final_train_accuracy: last.map_or(f64::NAN, |h| h.train_accuracy),
        report,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: Cell,
    pub runs: usize,
    pub accuracy: f64,
    pub f1_macro: f64,
    pub f1_at_10: f64,
    pub f1_at_25: f64,
    pub f1_at_50: f64,
}

/// Per-cell means over seeds, in first-appearance order.
pub fn summarize(runs: &[CellRun]) -> Vec<CellSummary> {
    let mut cells: Vec<Cell> = Vec::new();
    for r in runs {
        if !cells.contains(&r.cell) {
            cells.push(r.cell);
        }
    }
    cells
        .into_iter()
        .map(|cell| {
            let rs: Vec<&EvalReport> = runs.iter().filter(|r| r.cell == cell).map(|r| &r.report).collect();
            let mean = |f: fn(&EvalReport) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64;
            CellSummary {
                cell,
                runs: rs.len(),
                accuracy: mean(|r| r.accuracy),
                f1_macro: mean(|r| r.f1_macro),
                f1_at_10: mean(|r| r.f1_at_10),
                f1_at_25: mean(|r| r.f1_at_25),
                f1_at_50: mean(|r| r.f1_at_50),
            }
        })
        .collect()
}

const CELL_COLS: &str = "smoothing,mixing,refinement,fusion";

fn cell_cols(c: &Cell) -> String {
    format!("{},{},{},{}", c.smoothing_code(), c.mixing, c.refinement, c.fusion)
}

pub fn runs_csv(runs: &[CellRun]) -> String {
    let mut out = format!("{CELL_COLS},seed,final_loss,final_train_accuracy,{}\n", EvalReport::CSV_HEADER);
    for r in runs {
        writeln!(
            out,
            "{},{},{},{},{}",
            cell_cols(&r.cell),
            r.seed,
            r.final_loss,
            r.final_train_accuracy,
            r.report.csv_row()
        )
        .unwrap();
    }
    out
}

pub fn summary_csv(rows: &[CellSummary]) -> String {
    let mut out = format!("{CELL_COLS},runs,accuracy,f1_macro,f1_at_10,f1_at_25,f1_at_50\n");
    for s in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            cell_cols(&s.cell),
            s.runs,
            s.accuracy,
            s.f1_macro,
            s.f1_at_10,
            s.f1_at_25,
            s.f1_at_50
        )
        .unwrap();
    }
    out
}

/// Fixed-width table of cell means, values in percent.
pub fn summary_table(rows: &[CellSummary]) -> String {
    let mut out = format!(
        "{:<4}{:<7}{:<7}{:<10}{:>5}{:>8}{:>8}{:>8}{:>8}{:>8}\n",
        "smo", "mix", "refine", "fusion", "n", "acc", "F1mac", "F1@10", "F1@25", "F1@50"
    );
    for s in rows {
        writeln!(
            out,
            "{:<4}{:<7}{:<7}{:<10}{:>5}{:>8.2}{:>8.2}{:>8.2}{:>8.2}{:>8.2}",
            s.cell.smoothing_code(),
            s.cell.mixing,
            s.cell.refinement,
            s.cell.fusion.name(),
            s.runs,
            100.0 * s.accuracy,
            100.0 * s.f1_macro,
            100.0 * s.f1_at_10,
            100.0 * s.f1_at_25,
            100.0 * s.f1_at_50
        )
        .unwrap();
    }
    out
}
