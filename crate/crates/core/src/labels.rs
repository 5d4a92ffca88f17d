//! Label tables, dense label coding and empirical joint/marginal distributions.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

/// Options controlling CSV label-table ingestion.
#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Drop every row with an empty cell instead of failing.
    pub drop_incomplete_rows: bool,
}

/// Dense-coded labels of one task over the shared input index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelSequence {
    codes: Vec<usize>,
    vocab: Vec<String>,
}

impl LabelSequence {
    /// Codes raw labels in order of first appearance.
    pub fn encode<S: AsRef<str>>(raw: &[S]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut vocab = Vec::new();
        let codes = raw
            .iter()
            .map(|label| {
                let label = label.as_ref();
                *index.entry(label).or_insert_with(|| {
                    vocab.push(label.to_string());
                    vocab.len() - 1
                })
            })
            .collect();
        Ok(Self { codes, vocab })
    }

    /// Builds a sequence from already-dense codes; the vocabulary is `"0".."k-1"`.
    pub fn from_codes(codes: Vec<usize>, k: usize) -> Result<Self> {
        let vocab = (0..k).map(|c| c.to_string()).collect();
        Self::with_vocab(codes, vocab)
    }

    pub fn with_vocab(codes: Vec<usize>, vocab: Vec<String>) -> Result<Self> {
        if codes.is_empty() || vocab.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut seen = HashSet::new();
        if let Some(dup) = vocab.iter().find(|v| !seen.insert(v.as_str())) {
            return Err(Error::InvalidConfig(format!("duplicate vocabulary entry {dup:?}")));
        }
        if let Some((i, &c)) = codes.iter().enumerate().find(|(_, &c)| c >= vocab.len()) {
            return Err(Error::InvalidConfig(format!(
                "code {c} at position {i} exceeds class count {}",
                vocab.len()
            )));
        }
        Ok(Self { codes, vocab })
    }

    /// A sequence assigning the same label to all `n` inputs.
    pub fn constant(n: usize) -> Result<Self> {
        Self::from_codes(vec![0; n], 1)
    }

    pub fn codes(&self) -> &[usize] {
        &self.codes
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Class count.
    pub fn k(&self) -> usize {
        self.vocab.len()
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn decode(&self) -> Vec<&str> {
        self.codes.iter().map(|&c| self.vocab[c].as_str()).collect()
    }

    /// Number of occurrences of every class code.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k()];
        for &c in &self.codes {
            counts[c] += 1;
        }
        counts
    }

    /// Restricts the sequence to `rows`, keeping the full vocabulary.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let codes = rows.iter().map(|&r| self.codes[r]).collect();
        Self::with_vocab(codes, self.vocab.clone())
    }
}

/// Several tasks labelling the same `n` inputs, one column per task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTable {
    n: usize,
    tasks: Vec<(String, LabelSequence)>,
}

impl TaskTable {
    pub fn new(tasks: Vec<(String, LabelSequence)>) -> Result<Self> {
        let n = tasks.first().map(|(_, l)| l.len()).ok_or(Error::EmptyInput)?;
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let mut names = HashSet::new();
        for (name, labels) in &tasks {
            if !names.insert(name.as_str()) {
                return Err(Error::DuplicateTask(name.clone()));
            }
            if labels.len() != n {
                return Err(Error::Alignment { left: n, right: labels.len() });
            }
        }
        Ok(Self { n, tasks })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tasks(&self) -> &[(String, LabelSequence)] {
        &self.tasks
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tasks.iter().map(|(name, _)| name.as_str())
    }

    pub fn task(&self, name: &str) -> Result<&LabelSequence> {
        self.tasks
            .iter()
            .find(|(t, _)| t == name)
            .map(|(_, l)| l)
            .ok_or_else(|| Error::UnknownTask(name.to_string()))
    }

    /// Serializes the decoded labels back into the ingest CSV format.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let names: Vec<&str> = self.names().collect();
        out.push_str(&names.join(","));
        out.push('\n');
        let decoded: Vec<Vec<&str>> = self.tasks.iter().map(|(_, l)| l.decode()).collect();
        for i in 0..self.n {
            for (j, col) in decoded.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}", col[i]);
            }
            out.push('\n');
        }
        out
    }
}

/// Parses a label table: header row of task names, one row per input.
///
/// Rows are numbered from 1 for the first data row.
pub fn parse_label_table(text: &str, options: IngestOptions) -> Result<TaskTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse { row: 0, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::EmptyInput);
    }
    if let Some(pos) = header.iter().position(String::is_empty) {
        return Err(Error::Parse { row: 0, message: format!("empty task name in column {}", pos + 1) });
    }

    let mut columns: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} cells, found {}", header.len(), record.len()),
            });
        }
        if let Some(col) = record.iter().position(str::is_empty) {
            if options.drop_incomplete_rows {
                continue;
            }
            return Err(Error::MissingLabel { row, column: header[col].clone() });
        }
        for (column, cell) in columns.iter_mut().zip(record.iter()) {
            column.push(cell.to_string());
        }
    }

    if columns[0].is_empty() {
        return Err(Error::EmptyInput);
    }
    let tasks = header
        .into_iter()
        .zip(columns)
        .map(|(name, raw)| Ok((name, LabelSequence::encode(&raw)?)))
        .collect::<Result<Vec<_>>>()?;
    TaskTable::new(tasks)
}

/// Empirical joint distribution of an ordered pair `(Y, Z)` kept as integer counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointDistribution {
    counts: Vec<usize>,
    k_y: usize,
    k_z: usize,
    n: usize,
    y_vocab: Vec<String>,
    z_vocab: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Y,
    Z,
}

impl JointDistribution {
    pub fn new(y: &LabelSequence, z: &LabelSequence) -> Result<Self> {
        if y.len() != z.len() {
            return Err(Error::Alignment { left: y.len(), right: z.len() });
        }
        let (k_y, k_z) = (y.k(), z.k());
        let mut counts = vec![0; k_y * k_z];
        for (&a, &b) in y.codes().iter().zip(z.codes()) {
            counts[a * k_z + b] += 1;
        }
        Ok(Self {
            counts,
            k_y,
            k_z,
            n: y.len(),
            y_vocab: y.vocab().to_vec(),
            z_vocab: z.vocab().to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_y(&self) -> usize {
        self.k_y
    }

    pub fn k_z(&self) -> usize {
        self.k_z
    }

    pub fn y_vocab(&self) -> &[String] {
        &self.y_vocab
    }

    pub fn z_vocab(&self) -> &[String] {
        &self.z_vocab
    }

    pub fn count(&self, y: usize, z: usize) -> usize {
        self.counts[y * self.k_z + z]
    }

    pub fn prob(&self, y: usize, z: usize) -> f64 {
        self.count(y, z) as f64 / self.n as f64
    }

    /// Counts as a `k_y x k_z` nested vector.
    pub fn count_matrix(&self) -> Vec<Vec<usize>> {
        self.counts.chunks(self.k_z).map(<[usize]>::to_vec).collect()
    }

    /// Occurrence counts summed over the other axis.
    pub fn axis_counts(&self, axis: Axis) -> Vec<usize> {
        match axis {
            Axis::Y => (0..self.k_y).map(|y| (0..self.k_z).map(|z| self.count(y, z)).sum()).collect(),
            Axis::Z => (0..self.k_z).map(|z| (0..self.k_y).map(|y| self.count(y, z)).sum()).collect(),
        }
    }

    pub fn marginal(&self, axis: Axis) -> Marginal {
        let n = self.n as f64;
        let probs = self.axis_counts(axis).into_iter().map(|c| c as f64 / n).collect();
        let vocab = match axis {
            Axis::Y => self.y_vocab.clone(),
            Axis::Z => self.z_vocab.clone(),
        };
        Marginal { probs, vocab }
    }

    /// The distribution of the swapped pair `(Z, Y)`.
    pub fn transpose(&self) -> Self {
        let mut counts = vec![0; self.counts.len()];
        for y in 0..self.k_y {
            for z in 0..self.k_z {
                counts[z * self.k_y + y] = self.count(y, z);
            }
        }
        Self {
            counts,
            k_y: self.k_z,
            k_z: self.k_y,
            n: self.n,
            y_vocab: self.z_vocab.clone(),
            z_vocab: self.y_vocab.clone(),
        }
    }

    /// Row-stochastic `k_z x k_y` matrix of `P(y | z)`.
    pub fn conditional_y_given_z(&self) -> Result<Vec<Vec<f64>>> {
        let z_counts = self.axis_counts(Axis::Z);
        z_counts
            .iter()
            .enumerate()
            .map(|(z, &cz)| {
                if cz == 0 {
                    return Err(Error::ZeroMarginal { class: z });
                }
                Ok((0..self.k_y).map(|y| self.count(y, z) as f64 / cz as f64).collect())
            })
            .collect()
    }
}

pub fn joint_distribution(y: &LabelSequence, z: &LabelSequence) -> Result<JointDistribution> {
    JointDistribution::new(y, z)
}

/// Empirical marginal over one task's classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub probs: Vec<f64>,
    pub vocab: Vec<String>,
}

pub fn marginal(joint: &JointDistribution, axis: Axis) -> Marginal {
    joint.marginal(axis)
}
