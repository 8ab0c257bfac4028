//! Plain-text and JSON summary tables over metrics files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use dialopre_core::tasks::{Metrics, TaskKind};

/// What `evaluate` writes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsFile {
    pub task: TaskKind,
    pub label: String,
    pub scorer: String,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub scorer: String,
    /// Percentages, one per column.
    pub values: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub task: TaskKind,
    pub columns: Vec<String>,
    pub rows: Vec<SummaryRow>,
    /// Row index of the best value in each column.
    pub best: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tables: Vec<SummaryTable>,
}

fn columns(task: TaskKind) -> Vec<(String, Option<usize>)> {
    if task.is_retrieval() {
        [5, 2, 1].iter().map(|&n| (format!("R@{n}"), Some(n))).collect()
    } else {
        vec![("Acc".into(), None)]
    }
}

fn value(m: &Metrics, col: Option<usize>) -> Option<f64> {
    match col {
        None => Some(m.accuracy * 100.0),
        Some(n) => m.recall_at.get(&n).map(|v| v * 100.0),
    }
}

/// One table per task, rows in input order, the best entry of each column
/// marked with `*`. Values are percentages with one decimal.
pub fn render_report(files: &[MetricsFile]) -> (String, Summary) {
    let mut by_task: BTreeMap<String, (TaskKind, Vec<&MetricsFile>)> = BTreeMap::new();
    for f in files {
        by_task.entry(f.task.to_string()).or_insert_with(|| (f.task, Vec::new())).1.push(f);
    }
    let mut text = String::new();
    let mut tables = Vec::new();
    for (task, rows) in by_task.into_values() {
        let cols = columns(task);
        let rows: Vec<SummaryRow> = rows
            .iter()
            .map(|f| SummaryRow {
                label: f.label.clone(),
                scorer: f.scorer.clone(),
                values: cols.iter().map(|(_, n)| value(&f.metrics, *n)).collect(),
            })
            .collect();
        let best: Vec<Option<usize>> = (0..cols.len())
            .map(|c| {
                rows.iter()
                    .enumerate()
                    .filter_map(|(i, r)| r.values[c].map(|v| (i, v)))
                    .fold(None, |b: Option<(usize, f64)>, (i, v)| match b {
                        Some((_, bv)) if bv >= v => b,
                        _ => Some((i, v)),
                    })
                    .map(|(i, _)| i)
            })
            .collect();
        let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
        writeln!(text, "{task}").unwrap();
        write!(text, "{:<width$}", "model").unwrap();
        for (name, _) in &cols {
            write!(text, "  {name:>7}").unwrap();
        }
        text.push('\n');
        for (i, r) in rows.iter().enumerate() {
            write!(text, "{:<width$}", r.label).unwrap();
            for (c, v) in r.values.iter().enumerate() {
                let mark = if best[c] == Some(i) { "*" } else { " " };
                match v {
                    Some(v) => write!(text, "  {:>6.1}{mark}", v).unwrap(),
                    None => write!(text, "  {:>7}", "-").unwrap(),
                }
            }
            text.push('\n');
        }
        text.push('\n');
        tables.push(SummaryTable { task, columns: cols.into_iter().map(|(n, _)| n).collect(), rows, best });
    }
    (text, Summary { tables })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(task: TaskKind, label: &str, acc: f64, recalls: &[(usize, f64)]) -> MetricsFile {
        MetricsFile {
            task,
            label: label.into(),
            scorer: "model".into(),
            metrics: Metrics { accuracy: acc, recall_at: recalls.iter().copied().collect(), n_instances: 10 },
        }
    }

    #[test]
    fn nur_table_has_recall_columns() {
        let (text, s) = render_report(&[file(TaskKind::Nur, "MUG", 0.1, &[(1, 0.1), (2, 0.2), (5, 0.5)])]);
        assert_eq!(s.tables[0].columns, vec!["R@5", "R@2", "R@1"]);
        assert!(text.contains("50.0*"), "{text}");
        assert!(text.contains("10.0*"));
    }

    #[test]
    fn best_row_is_marked_per_column() {
        let (text, s) = render_report(&[
            file(TaskKind::Ii, "MUG", 0.4567, &[(1, 0.4567)]),
            file(TaskKind::Ii, "MUG+TMUG+MMUG", 0.5012, &[(1, 0.5012)]),
        ]);
        assert_eq!(s.tables[0].rows.len(), 2);
        assert_eq!(s.tables[0].best, vec![Some(1)]);
        assert!(text.contains("45.7 "), "{text}");
        assert!(text.contains("50.1*"), "{text}");
    }
}
