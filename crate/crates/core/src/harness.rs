//! Experiment driver: run settings, accuracy bookkeeping and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::continual::{eval_inputs, input_side, train_sequence_with, train_task, Strategy};
use crate::error::{Error, Result};
use crate::nn::{forward_batch, ModelSpec, ParamVector};
use crate::taskgen::{mix_seed, Manifest, TaskDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropConfig {
    pub size: usize,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub lr_initial: f64,
    pub momentum: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub crop: Option<CropConfig>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_epochs: 250,
            patience: 35,
            lr_initial: 0.005,
            momentum: 0.1,
            lr_min: 1e-5,
            batch_size: 64,
            crop: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs, patience and batch size must be positive"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::config("patience cannot exceed max_epochs"));
        }
        if !(self.lr_initial > 0.0) || !(self.lr_min > 0.0) || self.lr_min > self.lr_initial {
            return Err(Error::config("need 0 < lr_min <= lr_initial"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if let Some(c) = self.crop {
            if c.size == 0 || c.size > crate::taskgen::PATCH_SIDE {
                return Err(Error::config("crop size must lie in 1..=32"));
            }
        }
        Ok(())
    }

    /// The reference detector for this run's input size.
    pub fn model_spec(&self) -> ModelSpec {
        let side = input_side(self);
        ModelSpec::detector(side * side)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        RunConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Fraction of rows whose argmax logit (ties to class 0) equals the label.
pub fn accuracy(spec: &ModelSpec, params: &ParamVector, inputs: ArrayView2<'_, f64>, labels: &[u8]) -> Result<f64> {
    if inputs.nrows() == 0 {
        return Err(Error::config("cannot score an empty split"));
    }
    if labels.len() != inputs.nrows() {
        return Err(Error::config("labels and inputs differ in length"));
    }
    let logits = forward_batch(spec, params, inputs)?;
    let correct = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| u8::from(row[1] > row[0]) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Test-split accuracy of `params` on `task`.
pub fn evaluate(spec: &ModelSpec, params: &ParamVector, task: &TaskDataset, run: &RunConfig) -> Result<f64> {
    if task.test.is_empty() {
        return Err(Error::config(format!("task {:?} has an empty test split", task.name)));
    }
    let x = eval_inputs(&task.test, run)?;
    let y: Vec<u8> = task.test.iter().map(|s| s.label).collect();
    accuracy(spec, params, x.view(), &y)
}

/// `rows[i][j]`: test accuracy on task `j` after training stage `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    pub task_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl EvalMatrix {
    pub fn new(task_names: Vec<String>) -> Self {
        EvalMatrix {
            task_names,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.task_names.len() {
            return Err(Error::config(format!(
                "row has {} entries for {} tasks",
                row.len(),
                self.task_names.len()
            )));
        }
        if row.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::config("accuracies must lie in [0, 1]"));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for row in &self.rows {
            if row.len() != self.task_names.len() {
                return Err(Error::config("ragged evaluation matrix"));
            }
            if row.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::config("accuracies must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn last_row(&self) -> Option<&[f64]> {
        self.rows.last().map(Vec::as_slice)
    }

    /// Mean of the final row over every evaluated task.
    pub fn final_average(&self) -> Option<f64> {
        self.last_row().map(mean)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `out[t] = mean(rows[t][0..=t])`.
pub fn average_accuracy_curve(m: &EvalMatrix) -> Result<Vec<f64>> {
    let seen: Vec<usize> = (1..=m.rows.len()).collect();
    seen_accuracy_curve(m, &seen)
}

/// Average over the first `seen[t]` tasks after stage `t`; used when a stage
/// covers several tasks at once.
pub fn seen_accuracy_curve(m: &EvalMatrix, seen: &[usize]) -> Result<Vec<f64>> {
    if seen.len() != m.rows.len() {
        return Err(Error::config("one seen-count per stage is required"));
    }
    m.rows
        .iter()
        .zip(seen)
        .enumerate()
        .map(|(t, (row, &k))| {
            if k == 0 || row.len() < k {
                return Err(Error::config(format!(
                    "ragged matrix: stage {t} needs {k} evaluations, has {}",
                    row.len()
                )));
            }
            Ok(mean(&row[..k]))
        })
        .collect()
}

/// Rounds half away from zero to two decimals.
pub fn round2(x: f64) -> f64 {
    // shift by a hair so that decimal ties stored just below .5 still round up
    let scaled = x.abs() * 100.0;
    (scaled + 1e-7).round().copysign(x) / 100.0
}

/// Mean of a row of percentages, rounded to two decimals.
pub fn row_average(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::config("cannot average an empty row"));
    }
    Ok(round2(mean(values)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    /// `max_{i < last} rows[i][j] - rows[last][j]`, zero for a single stage.
    pub per_task: Vec<f64>,
    pub mean: f64,
}

pub fn forgetting(m: &EvalMatrix) -> Result<ForgettingReport> {
    m.validate()?;
    let last = m
        .rows
        .last()
        .ok_or_else(|| Error::config("forgetting needs at least one stage"))?;
    let per_task: Vec<f64> = (0..m.task_names.len())
        .map(|j| {
            m.rows[..m.rows.len() - 1]
                .iter()
                .map(|r| r[j] - last[j])
                .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))))
                .unwrap_or(0.0)
        })
        .collect();
    let mean = if per_task.is_empty() { 0.0 } else { mean(&per_task) };
    Ok(ForgettingReport { per_task, mean })
}

/// Trains plainly on `first_task` alone and scores every task in `all_tasks`.
pub fn zero_shot_eval(spec: &ModelSpec, run: &RunConfig, first_task: &TaskDataset, all_tasks: &[TaskDataset]) -> Result<EvalMatrix> {
    if !all_tasks.iter().any(|t| t.name == first_task.name) {
        return Err(Error::config(format!(
            "training task {:?} is not among the evaluated tasks",
            first_task.name
        )));
    }
    let init = ParamVector::he_uniform(spec, mix_seed(run.seed, 0x1417));
    let (params, _) = train_task(spec, &init, first_task, &Strategy::Transfer, None, &[], run, 1)?;
    let mut m = EvalMatrix::new(all_tasks.iter().map(|t| t.name.clone()).collect());
    let row = all_tasks
        .iter()
        .map(|t| evaluate(spec, &params, t, run))
        .collect::<Result<Vec<_>>>()?;
    m.push_row(row)?;
    Ok(m)
}

/// What to train: a catalog plus an optional partition into stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub manifest: Manifest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping: Option<Vec<Vec<String>>>,
}

impl ExperimentPlan {
    pub fn sequential(manifest: Manifest) -> Self {
        ExperimentPlan {
            manifest,
            grouping: None,
        }
    }

    /// Stages to train in order and the per-stage count of tasks seen so far.
    /// Tasks inside a group are ordered as in the sequence for evaluation.
    fn stages(&self, tasks: &[TaskDataset]) -> Result<(Vec<TaskDataset>, Vec<TaskDataset>, Vec<usize>)> {
        let names = &self.manifest.sequence.names;
        let by_name: BTreeMap<&str, &TaskDataset> = tasks.iter().map(|t| (t.name.as_str(), t)).collect();
        match &self.grouping {
            None => {
                let seen = (1..=tasks.len()).collect();
                Ok((tasks.to_vec(), tasks.to_vec(), seen))
            }
            Some(groups) => {
                crate::taskgen::SequenceSpec {
                    names: names.clone(),
                    grouping: Some(groups.clone()),
                }
                .validate()?;
                let mut stream = Vec::new();
                let mut eval = Vec::new();
                let mut seen = Vec::new();
                for g in groups {
                    let parts: Vec<&TaskDataset> = g.iter().map(|n| by_name[n.as_str()]).collect();
                    stream.push(TaskDataset::merge(g.join("+"), &parts)?);
                    eval.extend(parts.into_iter().cloned());
                    seen.push(eval.len());
                }
                Ok((stream, eval, seen))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub label: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub stage_names: Vec<String>,
    pub matrix: EvalMatrix,
    pub curve: Vec<f64>,
    pub forgetting: ForgettingReport,
    pub final_average: f64,
}

/// Runs the full continual protocol for one strategy. With `out_dir` set,
/// the evaluation matrix is rewritten after every stage so a failed run
/// leaves its completed stages on disk, and the full report is emitted at
/// the end.
pub fn run_experiment(
    plan: &ExperimentPlan,
    strategy: &Strategy,
    run: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentResult> {
    let tasks = plan.manifest.materialize(run.seed)?;
    let (stream, eval, seen) = plan.stages(&tasks)?;
    let stage_names: Vec<String> = stream.iter().map(|t| t.name.clone()).collect();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut flush_err = None;
    let outcome = train_sequence_with(&run.model_spec(), &stream, strategy, run, &eval, |_, m| {
        if let Some(dir) = out_dir {
            let path = dir.join("eval_matrix.csv");
            if let Err(e) = fs::write(&path, eval_matrix_csv(m, &stage_names)) {
                flush_err.get_or_insert(Error::io(&path, e));
            }
        }
    })?;
    if let Some(e) = flush_err {
        return Err(e);
    }
    let curve = seen_accuracy_curve(&outcome.matrix, &seen)?;
    let result = ExperimentResult {
        label: strategy.name().to_string(),
        strategy: *strategy,
        seed: run.seed,
        stage_names,
        forgetting: forgetting(&outcome.matrix)?,
        final_average: outcome.matrix.final_average().unwrap_or(0.0),
        matrix: outcome.matrix,
        curve,
    };
    if let Some(dir) = out_dir {
        emit_report(std::slice::from_ref(&result), dir)?;
    }
    Ok(result)
}

fn fmt_acc(x: f64) -> String {
    format!("{x:.6}")
}

/// `stage,trained_on,<task...>` with one row per stage.
pub fn eval_matrix_csv(m: &EvalMatrix, stage_names: &[String]) -> String {
    let mut out = String::from("stage,trained_on");
    for n in &m.task_names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (i, row) in m.rows.iter().enumerate() {
        let _ = write!(out, "{},{}", i + 1, stage_names.get(i).map_or("", String::as_str));
        for a in row {
            out.push(',');
            out.push_str(&fmt_acc(*a));
        }
        out.push('\n');
    }
    out
}

/// `stage,<label...>`; shorter curves leave trailing cells empty.
pub fn curves_csv(curves: &[(String, Vec<f64>)]) -> String {
    let mut out = String::from("stage");
    for (label, _) in curves {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    let len = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    for t in 0..len {
        let _ = write!(out, "{}", t + 1);
        for (_, c) in curves {
            out.push(',');
            if let Some(v) = c.get(t) {
                out.push_str(&fmt_acc(*v));
            }
        }
        out.push('\n');
    }
    out
}

/// Parses [`curves_csv`] output back into labelled curves.
pub fn parse_curves_csv(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::config("empty curves file"))?;
    let labels: Vec<&str> = header.split(',').skip(1).collect();
    let mut curves: Vec<(String, Vec<f64>)> = labels.iter().map(|l| (l.to_string(), Vec::new())).collect();
    for (ln, line) in lines.enumerate() {
        for (k, cell) in line.split(',').skip(1).enumerate() {
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::config(format!("curves line {}: bad number {cell:?}", ln + 2)))?;
            curves
                .get_mut(k)
                .ok_or_else(|| Error::config(format!("curves line {}: too many cells", ln + 2)))?
                .1
                .push(v);
        }
    }
    Ok(curves)
}

/// Parses [`eval_matrix_csv`] output.
pub fn parse_eval_matrix_csv(text: &str) -> Result<(EvalMatrix, Vec<String>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::config("empty matrix file"))?;
    let names: Vec<String> = header.split(',').skip(2).map(String::from).collect();
    let mut m = EvalMatrix::new(names);
    let mut stages = Vec::new();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 2 {
            return Err(Error::config("truncated matrix row"));
        }
        stages.push(cells[1].to_string());
        let row = cells[2..]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| Error::config(format!("bad accuracy {c:?}"))))
            .collect::<Result<Vec<_>>>()?;
        m.push_row(row)?;
    }
    Ok((m, stages))
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line chart of average accuracy per stage, one polyline per curve.
pub fn curves_svg(curves: &[(String, Vec<f64>)], title: &str) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let len = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(1).max(1);
    let x_of = |t: usize| {
        if len == 1 {
            left + pw / 2.0
        } else {
            left + pw * t as f64 / (len - 1) as f64
        }
    };
    let y_of = |v: f64| top + ph * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#, left + pw / 2.0, xml_escape(title));
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let y = y_of(v);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.1}</text>"#, left - 6.0, y + 4.0);
    }
    for t in 0..len {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#, x_of(t), top + ph + 16.0, t + 1);
    }
    let _ = writeln!(s, r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333333"/>"##);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">stage</text>"#, left + pw / 2.0, h - 12.0);
    let _ = writeln!(s, r#"<text x="16" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">average accuracy</text>"#, top + ph / 2.0, top + ph / 2.0);
    for (k, (label, c)) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = c.iter().enumerate().map(|(t, v)| format!("{:.1},{:.1}", x_of(t), y_of(*v))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        let ly = top + 16.0 * k as f64 + 8.0;
        let lx = left + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{}</text>"#, lx + 24.0, ly + 4.0, xml_escape(label));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Final-row accuracies as percentages plus their row average, with the best
/// cell of each column marked in bold.
pub fn final_table_markdown(rows: &[(String, Vec<String>, Vec<f64>)]) -> String {
    let mut out = String::new();
    let Some((_, names, _)) = rows.first() else {
        return out;
    };
    let pct: Vec<Vec<f64>> = rows.iter().map(|(_, _, r)| r.iter().map(|a| round2(a * 100.0)).collect()).collect();
    let avgs: Vec<f64> = pct.iter().map(|r| row_average(r).unwrap_or(0.0)).collect();
    let ncol = names.len();
    let col_max = |j: usize| pct.iter().map(|r| r.get(j).copied().unwrap_or(f64::MIN)).fold(f64::MIN, f64::max);
    let avg_max = avgs.iter().copied().fold(f64::MIN, f64::max);
    let _ = writeln!(out, "| method | {} | average |", names.join(" | "));
    let _ = writeln!(out, "|---|{}---|", "---|".repeat(ncol));
    for (i, (label, _, _)) in rows.iter().enumerate() {
        let mut cells: Vec<String> = Vec::with_capacity(ncol + 1);
        for j in 0..ncol {
            let v = pct[i].get(j).copied().unwrap_or(0.0);
            cells.push(if rows.len() > 1 && v == col_max(j) { format!("**{v:.2}**") } else { format!("{v:.2}") });
        }
        let a = avgs[i];
        cells.push(if rows.len() > 1 && a == avg_max { format!("**{a:.2}**") } else { format!("{a:.2}") });
        let _ = writeln!(out, "| {label} | {} |", cells.join(" | "));
    }
    out
}

#[derive(Serialize)]
struct SummaryEntry<'a> {
    label: &'a str,
    strategy: &'a Strategy,
    seed: u64,
    stages: &'a [String],
    final_average: f64,
    final_accuracy_percent: Vec<f64>,
    row_average_percent: f64,
    curve: &'a [f64],
    forgetting: &'a ForgettingReport,
}

/// Writes `eval_matrix.csv` (or `eval_matrix_<label>.csv` for several
/// results), `curves.csv`, `curves.svg`, `table.md` and `summary.json`.
pub fn emit_report(results: &[ExperimentResult], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if results.is_empty() {
        return Err(Error::config("nothing to report"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    for r in results {
        let name = if results.len() == 1 {
            "eval_matrix.csv".to_string()
        } else {
            format!("eval_matrix_{}.csv", r.label)
        };
        put(name, eval_matrix_csv(&r.matrix, &r.stage_names))?;
    }
    let curves: Vec<(String, Vec<f64>)> = results.iter().map(|r| (r.label.clone(), r.curve.clone())).collect();
    put("curves.csv".into(), curves_csv(&curves))?;
    // Drawn from the CSV values so that regenerate_report reproduces it exactly.
    let stored = parse_curves_csv(&curves_csv(&curves))?;
    put("curves.svg".into(), curves_svg(&stored, "average accuracy over seen tasks"))?;
    let table_rows: Vec<(String, Vec<String>, Vec<f64>)> = results
        .iter()
        .map(|r| {
            let (m, _) = parse_eval_matrix_csv(&eval_matrix_csv(&r.matrix, &r.stage_names))?;
            let last = m.last_row().unwrap_or(&[]).to_vec();
            Ok((r.label.clone(), m.task_names, last))
        })
        .collect::<Result<_>>()?;
    put("table.md".into(), final_table_markdown(&table_rows))?;
    let summary: Vec<SummaryEntry<'_>> = results
        .iter()
        .map(|r| {
            let pct: Vec<f64> = r.matrix.last_row().unwrap_or(&[]).iter().map(|a| round2(a * 100.0)).collect();
            SummaryEntry {
                label: &r.label,
                strategy: &r.strategy,
                seed: r.seed,
                stages: &r.stage_names,
                final_average: r.final_average,
                row_average_percent: row_average(&pct).unwrap_or(0.0),
                final_accuracy_percent: pct,
                curve: &r.curve,
                forgetting: &r.forgetting,
            }
        })
        .collect();
    put("summary.json".into(), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(written)
}

/// Rebuilds `curves.svg` and `table.md` from the CSV files in `dir`.
pub fn regenerate_report(dir: &Path) -> Result<Vec<PathBuf>> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let curves = parse_curves_csv(&read(&dir.join("curves.csv"))?)?;
    let mut written = Vec::new();
    let svg = dir.join("curves.svg");
    fs::write(&svg, curves_svg(&curves, "average accuracy over seen tasks")).map_err(|e| Error::io(&svg, e))?;
    written.push(svg);

    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("eval_matrix") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    let labels = summary_labels(dir);
    let mut rows = Vec::new();
    for f in files {
        let (m, _) = parse_eval_matrix_csv(&read(&f)?)?;
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("eval_matrix");
        let label = match (stem.strip_prefix("eval_matrix_"), labels.as_deref()) {
            (Some(l), _) => l.to_string(),
            (None, Some([one])) => one.clone(),
            (None, _) => stem.to_string(),
        };
        if let Some(last) = m.last_row() {
            rows.push((label, m.task_names.clone(), last.to_vec()));
        }
    }
    if let Some(order) = &labels {
        rows.sort_by_key(|(l, _, _)| order.iter().position(|o| o == l).unwrap_or(usize::MAX));
    }
    if !rows.is_empty() {
        let table = dir.join("table.md");
        fs::write(&table, final_table_markdown(&rows)).map_err(|e| Error::io(&table, e))?;
        written.push(table);
    }
    Ok(written)
}

/// Result labels in report order, from `summary.json` if present.
fn summary_labels(dir: &Path) -> Option<Vec<String>> {
    let text = fs::read_to_string(dir.join("summary.json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v.as_array()?
        .iter()
        .map(|e| e.get("label")?.as_str().map(String::from))
        .collect()
}
