//! Conditional entropy of label sequences, task hardness and source ranking.
//!
//! All quantities are plug-in estimates in nats. `H(Y|Z)` is computed with two
//! passes over the labels: one to tally the joint counts, one to average
//! `-log P(y_i | z_i)`. [`conditional_entropy_direct`] sums over the cells of
//! the joint table instead and serves as an independent cross-check.
//!
//! Ranking sources by `H(target | source)` alone ignores how well each source
//! task itself can be fit; the bound also depends on the source likelihood.

use std::cmp::Ordering;
use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::labels::{Axis, JointDistribution, LabelSequence, TaskTable};

/// `H(Y|Z)` by the two-pass per-sample average.
pub fn conditional_entropy(y: &LabelSequence, z: &LabelSequence) -> Result<f64> {
    let joint = JointDistribution::new(y, z)?;
    let z_counts = joint.axis_counts(Axis::Z);
    let n = joint.n() as f64;
    let total: f64 = y
        .codes()
        .iter()
        .zip(z.codes())
        .map(|(&a, &b)| (joint.count(a, b) as f64 / z_counts[b] as f64).ln())
        .sum();
    // -0.0 when every conditional is 1
    Ok((-total / n).max(0.0))
}

/// `H(Y|Z) = -sum_{y,z} P(y,z) ln(P(y,z) / P(z))`, with `0 ln 0 = 0`.
pub fn conditional_entropy_direct(joint: &JointDistribution) -> f64 {
    let z_counts = joint.axis_counts(Axis::Z);
    let n = joint.n() as f64;
    let mut h = 0.0;
    for y in 0..joint.k_y() {
        for (z, &cz) in z_counts.iter().enumerate() {
            let c = joint.count(y, z);
            if c > 0 {
                h -= (c as f64 / n) * (c as f64 / cz as f64).ln();
            }
        }
    }
    h.max(0.0)
}

/// Entropy of the empirical label marginal, i.e. `H(Z | constant)`.
pub fn hardness(z: &LabelSequence) -> f64 {
    let n = z.len() as f64;
    let h: f64 = z
        .class_counts()
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    h.max(0.0)
}

/// True when every `z` value co-occurs with exactly one `y` value.
pub fn is_function_of(joint: &JointDistribution) -> bool {
    (0..joint.k_z()).all(|z| (0..joint.k_y()).filter(|&y| joint.count(y, z) > 0).count() <= 1)
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / LN_2
}

/// Conditional entropies over all ordered task pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CeMatrix {
    pub task_names: Vec<String>,
    /// `values[target][source] = H(target | source)`.
    pub values: Vec<Vec<f64>>,
}

impl CeMatrix {
    fn index_of(&self, name: &str) -> Result<usize> {
        self.task_names
            .iter()
            .position(|t| t == name)
            .ok_or_else(|| Error::UnknownTask(name.to_string()))
    }

    pub fn get(&self, target: &str, source: &str) -> Result<f64> {
        Ok(self.values[self.index_of(target)?][self.index_of(source)?])
    }

    /// CSV with a `target` column followed by one column per source.
    ///
    /// Values use the shortest representation that parses back to the same `f64`.
    pub fn to_csv(&self, scale: f64) -> String {
        let mut out = String::from("target");
        for name in &self.task_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.task_names.iter().zip(&self.values) {
            out.push_str(name);
            for v in row {
                out.push(',');
                out.push_str(&format!("{:?}", v * scale));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or(Error::EmptyInput)?;
        let task_names: Vec<String> = header.split(',').skip(1).map(|s| s.trim().to_string()).collect();
        let mut values = Vec::with_capacity(task_names.len());
        for (idx, line) in lines.enumerate() {
            let row = idx + 1;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != task_names.len() + 1 {
                return Err(Error::Parse { row, message: "ragged row".into() });
            }
            if cells[0].trim() != task_names.get(idx).map(String::as_str).unwrap_or("") {
                return Err(Error::Parse { row, message: format!("unexpected target {:?}", cells[0]) });
            }
            let parsed = cells[1..]
                .iter()
                .map(|c| c.trim().parse::<f64>().map_err(|e| Error::Parse { row, message: e.to_string() }))
                .collect::<Result<Vec<f64>>>()?;
            values.push(parsed);
        }
        if values.len() != task_names.len() {
            return Err(Error::Parse { row: values.len(), message: "matrix is not square".into() });
        }
        Ok(Self { task_names, values })
    }
}

/// Pairs are evaluated in parallel; each entry depends only on its two columns.
pub fn ce_matrix(table: &TaskTable) -> CeMatrix {
    let tasks = table.tasks();
    let values = tasks
        .par_iter()
        .enumerate()
        .map(|(t, (_, target))| {
            tasks
                .iter()
                .enumerate()
                .map(|(s, (_, source))| {
                    if s == t {
                        0.0
                    } else {
                        conditional_entropy(target, source).expect("table columns are aligned")
                    }
                })
                .collect()
        })
        .collect();
    CeMatrix { task_names: table.names().map(str::to_string).collect(), values }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedSource {
    pub target: String,
    pub source: String,
    pub ce_nats: f64,
}

/// Candidate sources for `target`, ascending by `H(target | source)`, ties by name.
pub fn rank_sources(matrix: &CeMatrix, target: &str) -> Result<Vec<RankedSource>> {
    let t = matrix.index_of(target)?;
    let mut ranked: Vec<RankedSource> = matrix
        .task_names
        .iter()
        .enumerate()
        .filter(|&(s, _)| s != t)
        .map(|(s, source)| RankedSource {
            target: target.to_string(),
            source: source.clone(),
            ce_nats: matrix.values[t][s],
        })
        .collect();
    ranked.sort_by(|a, b| {
        a.ce_nats.partial_cmp(&b.ce_nats).unwrap_or(Ordering::Equal).then_with(|| a.source.cmp(&b.source))
    });
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardnessEntry {
    pub task: String,
    pub hardness_nats: f64,
    pub classes: usize,
}

/// Per-task hardness, ascending, ties by name.
pub fn hardness_report(table: &TaskTable) -> Vec<HardnessEntry> {
    let mut entries: Vec<HardnessEntry> = table
        .tasks()
        .iter()
        .map(|(name, labels)| HardnessEntry {
            task: name.clone(),
            hardness_nats: hardness(labels),
            classes: labels.k(),
        })
        .collect();
    entries.sort_by(|a, b| {
        a.hardness_nats
            .partial_cmp(&b.hardness_nats)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.task.cmp(&b.task))
    });
    entries
}

/// Parses the table and reports hardness; an empty table is an error.
pub fn hardness_report_from_csv(text: &str, options: crate::labels::IngestOptions) -> Result<Vec<HardnessEntry>> {
    let table = crate::labels::parse_label_table(text, options)?;
    Ok(hardness_report(&table))
}
