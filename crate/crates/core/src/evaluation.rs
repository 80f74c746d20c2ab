//! Inter-patient splitting, majority-vote window labels, and
//! confusion-matrix metrics.

use crate::signal_io::EcgRecord;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let n = class_names.len();
        ConfusionMatrix {
            class_names,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_counts(class_names: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = class_names.len();
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(Error::Precondition(format!(
                "confusion matrix must be {n}x{n}"
            )));
        }
        Ok(ConfusionMatrix {
            class_names,
            counts,
        })
    }

    pub fn record(&mut self, true_class: usize, predicted: usize) {
        self.counts[true_class][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// One-vs-rest metrics for a single class. Ratios with zero denominators are
/// reported as `None`, never as 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: Option<f64>,
    pub specificity: Option<f64>,
    pub sensitivity: Option<f64>,
    pub ppv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class: Vec<(String, ClassMetrics)>,
    /// Micro accuracy: trace / total.
    pub overall_accuracy: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

/// One-vs-rest per-class metrics from a confusion matrix.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Metrics {
    let n = cm.n_classes();
    let total = cm.total();
    let mut per_class = Vec::with_capacity(n);
    for c in 0..n {
        let tp = cm.counts[c][c];
        let row: u64 = cm.counts[c].iter().sum();
        let col: u64 = cm.counts.iter().map(|r| r[c]).sum();
        let fn_ = row - tp;
        let fp = col - tp;
        let tn = total - tp - fn_ - fp;
        per_class.push((
            cm.class_names[c].clone(),
            ClassMetrics {
                accuracy: ratio(tp + tn, total),
                specificity: ratio(tn, tn + fp),
                sensitivity: ratio(tp, tp + fn_),
                ppv: ratio(tp, tp + fp),
            },
        ));
    }
    let trace: u64 = (0..n).map(|c| cm.counts[c][c]).sum();
    Metrics {
        per_class,
        overall_accuracy: ratio(trace, total),
    }
}

/// Patient-level train/test partition of records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train_patients: Vec<String>,
    pub test_patients: Vec<String>,
    pub train_records: Vec<String>,
    pub test_records: Vec<String>,
}

/// Split records at patient granularity: every record of one patient lands
/// on one side, deterministically for a given seed, with the test fraction
/// achieved within one patient of the target.
pub fn inter_patient_split(
    records: &[EcgRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<Split> {
    split_by_patient(
        &records
            .iter()
            .map(|r| (r.patient_id.clone(), r.record_id.clone()))
            .collect::<Vec<_>>(),
        test_fraction,
        seed,
    )
}

/// Same as [`inter_patient_split`] over plain `(patient_id, record_id)`
/// pairs, for corpora that never materialize `EcgRecord`s.
pub fn split_by_patient(
    pairs: &[(String, String)],
    test_fraction: f64,
    seed: u64,
) -> Result<Split> {
    assert!(
        (0.0..=1.0).contains(&test_fraction),
        "test_fraction must be in [0, 1]"
    );
    let mut patients: Vec<String> = pairs.iter().map(|(p, _)| p.clone()).collect();
    patients.sort();
    patients.dedup();
    if patients.len() < 2 {
        return Err(Error::TooFewPatients(patients.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..patients.len()).rev() {
        let j = rng.gen_range(0..=i);
        patients.swap(i, j);
    }
    let n_test = ((patients.len() as f64 * test_fraction).round() as usize)
        .clamp(1, patients.len() - 1);
    let (test_patients, train_patients) = patients.split_at(n_test);
    let mut split = Split {
        train_patients: train_patients.to_vec(),
        test_patients: test_patients.to_vec(),
        train_records: Vec::new(),
        test_records: Vec::new(),
    };
    split.train_patients.sort();
    split.test_patients.sort();
    for (patient, record) in pairs {
        if split.test_patients.binary_search(patient).is_ok() {
            split.test_records.push(record.clone());
        } else {
            split.train_records.push(record.clone());
        }
    }
    Ok(split)
}

/// Rhythm annotation stream: `(sample_index, label)`, each label in force
/// until the next annotation.
pub type Annotation = (usize, String);

/// Parse the text sidecar format: one `index<TAB>label` per line, ascending.
pub fn read_annotations(text: &str) -> Result<Vec<Annotation>> {
    let mut out: Vec<Annotation> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (idx, label) = line
            .split_once('\t')
            .ok_or_else(|| Error::Parse(format!("line {}: expected index<TAB>label", lineno + 1)))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad sample index '{idx}'", lineno + 1)))?;
        if let Some((last, _)) = out.last() {
            if idx < *last {
                return Err(Error::Parse(format!(
                    "line {}: annotations out of order ({idx} after {last})",
                    lineno + 1
                )));
            }
        }
        out.push((idx, label.trim().to_string()));
    }
    Ok(out)
}

pub fn write_annotations(annotations: &[Annotation]) -> String {
    annotations
        .iter()
        .map(|(i, l)| format!("{i}\t{l}\n"))
        .collect()
}

/// Majority-vote label of the window `[start, start + len)`. Each annotation
/// extends to the next one; ties break toward `positive_label` when it is
/// among the tied labels, else toward the lexicographically smallest.
pub fn majority_label(
    window_start: usize,
    window_len: usize,
    annotations: &[Annotation],
    positive_label: &str,
) -> Result<String> {
    if window_len == 0 {
        return Err(Error::Precondition("empty window".into()));
    }
    let end = window_start + window_len;
    let mut coverage: std::collections::BTreeMap<&str, usize> = Default::default();
    for (i, (start, label)) in annotations.iter().enumerate() {
        let seg_start = (*start).max(window_start);
        let seg_end = annotations
            .get(i + 1)
            .map(|(next, _)| *next)
            .unwrap_or(usize::MAX)
            .min(end);
        if seg_start < seg_end {
            *coverage.entry(label.as_str()).or_insert(0) += seg_end - seg_start;
        }
    }
    let best = coverage.iter().map(|(_, &n)| n).max().ok_or(Error::NoAnnotation(window_start))?;
    let tied: Vec<&str> = coverage
        .iter()
        .filter(|(_, &n)| n == best)
        .map(|(&l, _)| l)
        .collect();
    if tied.contains(&positive_label) {
        Ok(positive_label.to_string())
    } else {
        // BTreeMap iteration is sorted, so the first tied label is smallest.
        Ok(tied[0].to_string())
    }
}

/// The JSON metrics report written by the evaluate stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<(String, ClassMetrics)>,
    pub overall: Option<f64>,
    pub split_seed: u64,
}

impl MetricsReport {
    pub fn new(task: impl Into<String>, cm: ConfusionMatrix, split_seed: u64) -> Self {
        let metrics = compute_metrics(&cm);
        MetricsReport {
            task: task.into(),
            confusion: cm,
            per_class: metrics.per_class,
            overall: metrics.overall_accuracy,
            split_seed,
        }
    }
}
