//! Accuracy reports: per-class and overall accuracy plus a confusion matrix.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Manifest, Split};
use crate::error::{Error, Result};
use crate::parser::{parse_lenient, Verdict};
use crate::prompt::{person_response, PromptSpec};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Prediction {
    Category(String),
    NoPerson,
    ParseFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub id: String,
    pub gold: String,
    pub predicted: Prediction,
    #[serde(default)]
    pub lenient: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStats {
    pub name: String,
    pub correct: u64,
    pub total: u64,
}

impl ClassStats {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Column of the confusion matrix for a prediction.
pub const NO_PERSON_COLUMN: &str = "NoPerson";
pub const PARSE_FAILURE_COLUMN: &str = "ParseFailure";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassStats>,
    /// Rows are gold labels; columns are the labels followed by NoPerson
    /// and ParseFailure.
    pub confusion: Vec<Vec<u64>>,
    pub lenient_count: u64,
}

impl EvalReport {
    pub fn labels(&self) -> Vec<&str> {
        self.per_class.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn overall_correct(&self) -> u64 {
        self.per_class.iter().map(|c| c.correct).sum()
    }

    pub fn overall_total(&self) -> u64 {
        self.per_class.iter().map(|c| c.total).sum()
    }

    /// Micro accuracy: total correct over total pairs.
    pub fn overall_accuracy(&self) -> f64 {
        let total = self.overall_total();
        if total == 0 {
            0.0
        } else {
            self.overall_correct() as f64 / total as f64
        }
    }

    /// Unweighted mean of per-class accuracies, for comparison only.
    pub fn macro_accuracy(&self) -> f64 {
        self.per_class.iter().map(ClassStats::accuracy).sum::<f64>() / self.per_class.len() as f64
    }

    pub fn column_total(&self, column: usize) -> u64 {
        self.confusion.iter().map(|row| row[column]).sum()
    }

    pub fn no_person_count(&self) -> u64 {
        self.column_total(self.per_class.len())
    }

    pub fn parse_failure_count(&self) -> u64 {
        self.column_total(self.per_class.len() + 1)
    }
}

pub fn evaluate(pairs: &[EvalPair], labels: &[String]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty list of pairs".into()));
    }
    if labels.is_empty() {
        return Err(Error::Contract("evaluation label set is empty".into()));
    }
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let n = labels.len();
    let mut confusion = vec![vec![0u64; n + 2]; n];
    let mut lenient_count = 0;
    for p in pairs {
        let &row = index.get(p.gold.as_str()).ok_or_else(|| {
            Error::Data(format!(
                "pair {}: gold label {:?} is not in the label set",
                p.id, p.gold
            ))
        })?;
        let col = match &p.predicted {
            // Out-of-set names land in the failure column.
            Prediction::Category(c) => match index.get(c.as_str()) {
                Some(&j) => j,
                None => n + 1,
            },
            Prediction::NoPerson => n,
            Prediction::ParseFailure => n + 1,
        };
        confusion[row][col] += 1;
        if p.lenient {
            lenient_count += 1;
        }
    }
    let per_class = labels
        .iter()
        .enumerate()
        .map(|(i, name)| ClassStats {
            name: name.clone(),
            correct: confusion[i][i],
            total: confusion[i].iter().sum(),
        })
        .collect();
    Ok(EvalReport {
        per_class,
        confusion,
        lenient_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Csv,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            other => Err(Error::Contract(format!("unknown table format {other:?}"))),
        }
    }
}

pub fn percent(fraction: f64) -> String {
    format!("{:.2}", fraction * 100.0)
}

const CSV_HEADER: [&str; 4] = ["emotion", "correct", "total", "accuracy_pct"];
const OVERALL: &str = "Overall";

pub fn render_table(report: &EvalReport, format: TableFormat) -> String {
    match format {
        TableFormat::Text => render_text(report),
        TableFormat::Csv => render_csv(report),
    }
}

fn render_text(report: &EvalReport) -> String {
    let width = report
        .per_class
        .iter()
        .map(|c| c.name.chars().count())
        .chain([OVERALL.len(), "Emotion".len()])
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>12}  {:>8}  {:>8}",
        "Emotion", "Accuracy (%)", "Correct", "Total"
    );
    for c in &report.per_class {
        let _ = writeln!(
            out,
            "{:<width$}  {:>12}  {:>8}  {:>8}",
            c.name,
            percent(c.accuracy()),
            c.correct,
            c.total
        );
    }
    let _ = writeln!(
        out,
        "{:<width$}  {:>12}  {:>8}  {:>8}",
        OVERALL,
        percent(report.overall_accuracy()),
        report.overall_correct(),
        report.overall_total()
    );
    let _ = writeln!(
        out,
        "no-person: {}  parse failures: {}  lenient parses: {}",
        report.no_person_count(),
        report.parse_failure_count(),
        report.lenient_count
    );
    out
}

fn render_csv(report: &EvalReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    let rows = report
        .per_class
        .iter()
        .map(|c| (c.name.as_str(), c.correct, c.total, c.accuracy()))
        .chain([(
            OVERALL,
            report.overall_correct(),
            report.overall_total(),
            report.overall_accuracy(),
        )]);
    for (name, correct, total, acc) in rows {
        w.write_record([name, &correct.to_string(), &total.to_string(), &percent(acc)])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

/// One row of a rendered CSV table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableRow {
    pub name: String,
    pub correct: u64,
    pub total: u64,
}

/// Reads a CSV table back into rows, the Overall row last.
pub fn parse_csv_table(text: &str) -> Result<Vec<TableRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Data(format!("csv header: {e}")))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Data(format!("unexpected csv header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("csv row {}: {e}", i + 1)))?;
        let num = |k: usize| {
            rec[k]
                .parse::<u64>()
                .map_err(|e| Error::Data(format!("csv row {}, column {}: {e}", i + 1, CSV_HEADER[k])))
        };
        rows.push(TableRow {
            name: rec[0].to_string(),
            correct: num(1)?,
            total: num(2)?,
        });
    }
    match rows.last() {
        Some(last) if last.name == OVERALL => Ok(rows),
        _ => Err(Error::Data("csv table has no Overall row".into())),
    }
}

/// Rebuilds a report from a parsed table. The confusion matrix only keeps
/// the diagonal and lumps errors into the ParseFailure column.
pub fn report_from_rows(rows: &[TableRow]) -> Result<EvalReport> {
    let (overall, classes) = rows.split_last().ok_or_else(|| Error::Data("empty table".into()))?;
    let n = classes.len();
    let mut confusion = vec![vec![0u64; n + 2]; n];
    let mut per_class = Vec::with_capacity(n);
    for (i, r) in classes.iter().enumerate() {
        if r.correct > r.total {
            return Err(Error::Data(format!("row {:?}: correct exceeds total", r.name)));
        }
        confusion[i][i] = r.correct;
        confusion[i][n + 1] = r.total - r.correct;
        per_class.push(ClassStats {
            name: r.name.clone(),
            correct: r.correct,
            total: r.total,
        });
    }
    let report = EvalReport {
        per_class,
        confusion,
        lenient_count: 0,
    };
    if report.overall_correct() != overall.correct || report.overall_total() != overall.total {
        return Err(Error::Data("Overall row does not match the class rows".into()));
    }
    Ok(report)
}

/// Predicts every test record and evaluates against its label.
///
/// With a prompt spec, each prediction is rendered through the person
/// template and recovered with the parser, exercising the same path a
/// generative model's answers would take.
pub fn end_to_end_eval(ckpt: &Checkpoint, manifest: &Manifest, prompt: Option<&PromptSpec>) -> Result<EvalReport> {
    let labels = ckpt.labels();
    let as_set = |v: &[String]| v.iter().cloned().collect::<HashSet<_>>();
    if as_set(labels) != as_set(&manifest.labels) {
        return Err(Error::Compatibility(format!(
            "checkpoint labels {:?} do not match manifest labels {:?}",
            labels, manifest.labels
        )));
    }
    if ckpt.net.d_in() != manifest.dimension {
        return Err(Error::Compatibility(format!(
            "checkpoint expects {} features, manifest has {}",
            ckpt.net.d_in(),
            manifest.dimension
        )));
    }
    if let Some(spec) = prompt {
        spec.validate()?;
        if as_set(&spec.category_names()) != as_set(labels) {
            return Err(Error::Compatibility(format!(
                "prompt categories {:?} do not match checkpoint labels {:?}",
                spec.category_names(),
                labels
            )));
        }
    }
    let test: Vec<_> = manifest.split(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::Data("manifest has no test records".into()));
    }
    let pairs = test
        .par_iter()
        .map(|r| {
            let label = ckpt.net.predict(&r.features)?;
            let (predicted, lenient) = match prompt {
                None => (Prediction::Category(label.to_string()), false),
                Some(spec) => {
                    let transcript = person_response(&format!("Feature classifier output for record {}.", r.id), label);
                    match parse_lenient(&transcript, &spec.category_names()) {
                        Ok(p) => (
                            match p.verdict {
                                Verdict::Category(c) => Prediction::Category(c),
                                Verdict::NoPerson => Prediction::NoPerson,
                            },
                            p.lenient,
                        ),
                        Err(_) => (Prediction::ParseFailure, false),
                    }
                }
            };
            Ok(EvalPair {
                id: r.id.clone(),
                gold: r.label.clone(),
                predicted,
                lenient,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(&pairs, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    /// Pairs whose class i has `correct` hits and `total - correct` misses.
    fn pairs_from_counts(counts: &[(u64, u64)]) -> Vec<EvalPair> {
        let labels = names(counts.len());
        let mut out = Vec::new();
        for (i, &(correct, total)) in counts.iter().enumerate() {
            for k in 0..total {
                let predicted = if k < correct {
                    Prediction::Category(labels[i].clone())
                } else {
                    Prediction::Category("elsewhere".into())
                };
                out.push(EvalPair {
                    id: format!("{i}-{k}"),
                    gold: labels[i].clone(),
                    predicted,
                    lenient: false,
                });
            }
        }
        out
    }

    #[test]
    fn all_correct() {
        let r = evaluate(&pairs_from_counts(&[(3, 3), (2, 2)]), &names(2)).unwrap();
        assert_eq!(r.overall_accuracy(), 1.0);
        assert_eq!(r.confusion, vec![vec![3, 0, 0, 0], vec![0, 2, 0, 0]]);
    }

    #[test]
    fn hand_tallied() {
        let r = evaluate(&pairs_from_counts(&[(2, 4), (3, 3), (0, 3)]), &names(3)).unwrap();
        let acc: Vec<f64> = r.per_class.iter().map(ClassStats::accuracy).collect();
        assert_eq!(acc, vec![0.5, 1.0, 0.0]);
        assert_eq!(r.overall_accuracy(), 0.5);

        let r = evaluate(&pairs_from_counts(&[(1, 2), (3, 3), (0, 5)]), &names(3)).unwrap();
        assert_eq!(r.overall_accuracy(), 0.4);
        assert_eq!(r.macro_accuracy(), 0.5);
    }

    #[test]
    fn parse_failure_counted_as_error() {
        let labels = names(1);
        let mut pairs = pairs_from_counts(&[(9, 9)]);
        pairs.push(EvalPair {
            id: "x".into(),
            gold: labels[0].clone(),
            predicted: Prediction::ParseFailure,
            lenient: false,
        });
        let r = evaluate(&pairs, &labels).unwrap();
        assert_eq!(r.overall_accuracy(), 0.9);
        assert_eq!(r.parse_failure_count(), 1);
        assert_eq!(r.no_person_count(), 0);
    }

    #[test]
    fn errors() {
        assert!(matches!(evaluate(&[], &names(2)), Err(Error::Contract(_))));
        let pairs = vec![EvalPair {
            id: "p".into(),
            gold: "zzz".into(),
            predicted: Prediction::NoPerson,
            lenient: false,
        }];
        assert!(matches!(evaluate(&pairs, &names(2)), Err(Error::Data(_))));
    }

    #[test]
    fn overall_prints_two_decimals() {
        let r = evaluate(&pairs_from_counts(&[(8978, 10000)]), &names(1)).unwrap();
        let text = render_table(&r, TableFormat::Text);
        let overall = text.lines().find(|l| l.starts_with("Overall")).unwrap();
        assert!(overall.contains(" 89.78 "), "{overall}");
        let one = evaluate(&pairs_from_counts(&[(1, 1), (0, 1)]), &names(2)).unwrap();
        let text = render_table(&one, TableFormat::Text);
        assert!(text.contains("100.00") && text.contains("0.00"));
    }

    #[test]
    fn csv_round_trip() {
        let r = evaluate(&pairs_from_counts(&[(2, 4), (3, 3), (0, 3)]), &names(3)).unwrap();
        let csv = render_table(&r, TableFormat::Csv);
        assert!(csv.starts_with("emotion,correct,total,accuracy_pct\n"));
        let rows = parse_csv_table(&csv).unwrap();
        let back = report_from_rows(&rows).unwrap();
        assert_eq!(back.per_class, r.per_class);
        assert_eq!(render_table(&back, TableFormat::Csv), csv);
    }

    #[test]
    fn csv_quotes_commas() {
        let labels = vec!["a, b".to_string(), "c".to_string()];
        let pairs = vec![EvalPair {
            id: "1".into(),
            gold: "a, b".into(),
            predicted: Prediction::Category("a, b".into()),
            lenient: false,
        }];
        let r = evaluate(&pairs, &labels).unwrap();
        let rows = parse_csv_table(&render_table(&r, TableFormat::Csv)).unwrap();
        assert_eq!(rows[0].name, "a, b");
    }
}
