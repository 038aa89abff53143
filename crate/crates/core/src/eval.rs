//! Confusion matrices, per-letter precision/recall and side-by-side
//! comparison tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::letter::{Letter, NUM_CLASSES};

/// Rows are true letters, columns predicted letters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<u64>>", into = "Vec<Vec<u64>>")]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        ConfusionMatrix {
            counts: [[0; NUM_CLASSES]; NUM_CLASSES],
        }
    }
}

impl TryFrom<Vec<Vec<u64>>> for ConfusionMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<u64>>) -> Result<Self> {
        if rows.len() != NUM_CLASSES || rows.iter().any(|r| r.len() != NUM_CLASSES) {
            return Err(Error::Format(format!("confusion matrix must be {NUM_CLASSES}x{NUM_CLASSES}")));
        }
        let mut cm = ConfusionMatrix::default();
        for (r, row) in rows.iter().enumerate() {
            cm.counts[r].copy_from_slice(row);
        }
        Ok(cm)
    }
}

impl From<ConfusionMatrix> for Vec<Vec<u64>> {
    fn from(cm: ConfusionMatrix) -> Self {
        cm.counts.iter().map(|r| r.to_vec()).collect()
    }
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: Letter, predicted: Letter) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn get(&self, truth: Letter, predicted: Letter) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn row_sum(&self, truth: Letter) -> u64 {
        self.counts[truth.index()].iter().sum()
    }

    pub fn col_sum(&self, predicted: Letter) -> u64 {
        self.counts.iter().map(|r| r[predicted.index()]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// Grid with a header row and a leading letter column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth\\predicted");
        for l in Letter::all() {
            write!(out, ",{l}").unwrap();
        }
        out.push('\n');
        for t in Letter::all() {
            write!(out, "{t}").unwrap();
            for p in Letter::all() {
                write!(out, ",{}", self.get(t, p)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(predicted: &[Letter], truths: &[Letter]) -> Result<ConfusionMatrix> {
    if predicted.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truths.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predicted.iter().zip(truths) {
        cm.add(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterMetrics {
    pub letter: Letter,
    /// `None` when nothing was predicted as this letter.
    pub precision: Option<f64>,
    /// `None` when the letter never occurs in the truths.
    pub recall: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusedPair {
    pub truth: Letter,
    pub predicted: Letter,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub total: u64,
    pub letters: Vec<LetterMetrics>,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub micro_precision: Option<f64>,
    pub micro_recall: Option<f64>,
    pub most_confused: Vec<ConfusedPair>,
    pub confusion: ConfusionMatrix,
}

pub const MOST_CONFUSED: usize = 5;

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn precision_recall(cm: &ConfusionMatrix) -> EvalReport {
    let letters: Vec<LetterMetrics> = Letter::all()
        .map(|l| LetterMetrics {
            letter: l,
            precision: ratio(cm.get(l, l), cm.col_sum(l)),
            recall: ratio(cm.get(l, l), cm.row_sum(l)),
            support: cm.row_sum(l),
        })
        .collect();
    let mut pairs: Vec<ConfusedPair> = Letter::all()
        .flat_map(|t| Letter::all().map(move |p| (t, p)))
        .filter(|(t, p)| t != p && cm.get(*t, *p) > 0)
        .map(|(truth, predicted)| ConfusedPair {
            truth,
            predicted,
            count: cm.get(truth, predicted),
        })
        .collect();
    pairs.sort_by(|a, b| b.count.cmp(&a.count).then(a.truth.cmp(&b.truth)).then(a.predicted.cmp(&b.predicted)));
    pairs.truncate(MOST_CONFUSED);
    // single-label classification: every error is one false positive and one false negative
    let micro = ratio(cm.trace(), cm.total());
    EvalReport {
        split: String::new(),
        total: cm.total(),
        macro_precision: mean_defined(letters.iter().map(|m| m.precision)),
        macro_recall: mean_defined(letters.iter().map(|m| m.recall)),
        micro_precision: micro,
        micro_recall: micro,
        letters,
        most_confused: pairs,
        confusion: cm.clone(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub fn with_split(mut self, split: impl Into<String>) -> Self {
        self.split = split.into();
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One row per letter: letter, precision, recall, support. Undefined
    /// values are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("letter,precision,recall,support\n");
        for m in &self.letters {
            writeln!(out, "{},{},{},{}", m.letter, opt(m.precision), opt(m.recall), m.support).unwrap();
        }
        out
    }

    /// Writes `report.json`, `report.csv` and `confusion.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json()?)?;
        fs::write(dir.join("report.csv"), self.to_csv())?;
        fs::write(dir.join("confusion.csv"), self.confusion.to_csv())?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let pct = |v: Option<f64>| v.map(|x| format!("{:.2}%", 100.0 * x)).unwrap_or_else(|| "n/a".into());
        let mut out = format!(
            "{}: {} samples, macro recall {}, macro precision {}",
            if self.split.is_empty() { "eval" } else { &self.split },
            self.total,
            pct(self.macro_recall),
            pct(self.macro_precision)
        );
        if !self.most_confused.is_empty() {
            let pairs: Vec<String> = self
                .most_confused
                .iter()
                .map(|p| format!("{}->{} ({})", p.truth, p.predicted, p.count))
                .collect();
            write!(out, "; most confused {}", pairs.join(", ")).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    /// A letter, or `macro` for the averaged row.
    pub label: String,
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
}

/// Per-letter and macro metrics of several runs side by side, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub runs: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_reports(reports: &[(String, EvalReport)]) -> Result<Comparison> {
    if reports.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rows: Vec<ComparisonRow> = (0..NUM_CLASSES)
        .map(|i| ComparisonRow {
            label: Letter::from_index(i).expect("class index").to_string(),
            precision: reports.iter().map(|(_, r)| r.letters[i].precision).collect(),
            recall: reports.iter().map(|(_, r)| r.letters[i].recall).collect(),
        })
        .collect();
    rows.push(ComparisonRow {
        label: "macro".into(),
        precision: reports.iter().map(|(_, r)| r.macro_precision).collect(),
        recall: reports.iter().map(|(_, r)| r.macro_recall).collect(),
    });
    Ok(Comparison {
        runs: reports.iter().map(|(name, _)| name.clone()).collect(),
        rows,
    })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("letter");
        for run in &self.runs {
            write!(out, ",{run}_precision,{run}_recall").unwrap();
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.label);
            for (p, r) in row.precision.iter().zip(&row.recall) {
                write!(out, ",{},{}", opt(*p), opt(*r)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `comparison.csv` and `comparison.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("comparison.csv"), self.to_csv())?;
        fs::write(dir.join("comparison.json"), self.to_json()?)?;
        Ok(())
    }
}

/// Leave-one-user-out summary: unweighted mean of each hold-out's macro
/// metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedReport {
    pub runs: Vec<String>,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub reports: Vec<EvalReport>,
}

pub fn average_reports(reports: &[(String, EvalReport)]) -> Result<AveragedReport> {
    if reports.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(AveragedReport {
        runs: reports.iter().map(|(n, _)| n.clone()).collect(),
        macro_precision: mean_defined(reports.iter().map(|(_, r)| r.macro_precision)),
        macro_recall: mean_defined(reports.iter().map(|(_, r)| r.macro_recall)),
        reports: reports.iter().map(|(_, r)| r.clone()).collect(),
    })
}

impl AveragedReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
