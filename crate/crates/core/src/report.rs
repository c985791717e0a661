//! Cross-run summary tables: one row per run label with mean ± sample
//! standard deviation of the honest workers' final metrics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::extract::mean_std;
use crate::model::TaskKind;
use crate::scenario::{read_final_metrics, read_manifest, ScenarioError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no run directories given")]
    NoRuns,
    #[error("runs mix tasks: {first_dir} is {first:?} but {other_dir} is {other:?}")]
    MixedTasks {
        first: TaskKind,
        first_dir: PathBuf,
        other: TaskKind,
        other_dir: PathBuf,
    },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Cell {
    fn of(v: &[f64]) -> Option<Cell> {
        if v.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(v);
        Some(Cell { mean, std, n: v.len() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub runs: usize,
    pub train_loss: Option<Cell>,
    pub test_loss: Option<Cell>,
    pub test_acc: Option<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub task: TaskKind,
    pub rows: Vec<ReportRow>,
}

/// Groups runs by config name, in order of first appearance.
pub fn report_tables<P: AsRef<Path>>(dirs: &[P]) -> Result<ReportTable, ReportError> {
    let first_dir = dirs.first().ok_or(ReportError::NoRuns)?.as_ref().to_path_buf();
    let mut task = None;
    let mut groups: Vec<(String, Vec<[Option<f64>; 3]>)> = Vec::new();
    for d in dirs {
        let d = d.as_ref();
        let m = read_manifest(d)?;
        match task {
            None => task = Some(m.task_kind),
            Some(t) if t != m.task_kind => {
                return Err(ReportError::MixedTasks {
                    first: t,
                    first_dir,
                    other: m.task_kind,
                    other_dir: d.to_path_buf(),
                })
            }
            _ => {}
        }
        let f = read_final_metrics(d, &m.roles)?;
        let vals = [f.train_loss, f.test_loss, f.test_acc];
        match groups.iter_mut().find(|(n, _)| *n == m.name) {
            Some((_, v)) => v.push(vals),
            None => groups.push((m.name, vec![vals])),
        }
    }
    let rows = groups
        .into_iter()
        .map(|(name, runs)| {
            let col = |k: usize| Cell::of(&runs.iter().filter_map(|r| r[k]).collect::<Vec<_>>());
            ReportRow {
                name,
                runs: runs.len(),
                train_loss: col(0),
                test_loss: col(1),
                test_acc: col(2),
            }
        })
        .collect();
    Ok(ReportTable {
        task: task.expect("at least one run"),
        rows,
    })
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "name,runs,train_loss_mean,train_loss_std,test_loss_mean,test_loss_std,test_acc_mean,test_acc_std\n",
        );
        let cell = |c: &Option<Cell>| match c {
            Some(c) => format!("{:.16e},{:.16e}", c.mean, c.std),
            None => ",".into(),
        };
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.name,
                r.runs,
                cell(&r.train_loss),
                cell(&r.test_loss),
                cell(&r.test_acc)
            );
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let cell = |c: &Option<Cell>| match c {
            Some(c) => format!("{:.4} ± {:.4}", c.mean, c.std),
            None => "n/a".into(),
        };
        let mut s = String::from("| name | runs | train loss | test loss | test acc |\n|---|---:|---:|---:|---:|\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                r.name,
                r.runs,
                cell(&r.train_loss),
                cell(&r.test_loss),
                cell(&r.test_acc)
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_value_cell_has_zero_std() {
        assert_eq!(Cell::of(&[0.5]), Some(Cell { mean: 0.5, std: 0.0, n: 1 }));
        assert_eq!(Cell::of(&[]), None);
    }

    #[test]
    fn empty_input() {
        assert!(matches!(report_tables::<&Path>(&[]), Err(ReportError::NoRuns)));
    }

    #[test]
    fn markdown_layout() {
        let t = ReportTable {
            task: TaskKind::LeastSquares,
            rows: vec![ReportRow {
                name: "a".into(),
                runs: 2,
                train_loss: Some(Cell { mean: 1.0, std: 0.5, n: 2 }),
                test_loss: None,
                test_acc: None,
            }],
        };
        let md = t.to_markdown();
        assert!(md.contains("| a | 2 | 1.0000 ± 0.5000 | n/a | n/a |"), "{md}");
        assert!(t.to_csv().lines().nth(1).unwrap().starts_with("a,2,1.0000000000000000e0,5.0000000000000000e-1,,"));
    }
}
