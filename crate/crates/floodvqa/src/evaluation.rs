//! Scoring fusion heads on the test split and rendering accuracy tables.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use floodvqa_core::eval::{tally, AccuracyTally};
use floodvqa_core::{EvalReport, FusionModel, LabelVocabulary, QAPair, QuestionType};
use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::FeatureStore;
use crate::training::{build_features, LabeledFeatures};

/// Anything that maps a batch of (image, text) feature rows to class indices.
pub trait Classifier: Sync {
    fn image_dim(&self) -> usize;
    fn text_dim(&self) -> usize;
    fn classify(&self, image: &[f32], text: &[f32], rows: usize) -> Result<Vec<usize>>;
}

impl Classifier for FusionModel<f32> {
    fn image_dim(&self) -> usize {
        self.config().image_dim
    }

    fn text_dim(&self) -> usize {
        self.config().text_dim
    }

    fn classify(&self, image: &[f32], text: &[f32], rows: usize) -> Result<Vec<usize>> {
        let logits = self.forward_batch(image, text, rows)?;
        let classes = self.config().num_classes;
        Ok(logits
            .chunks_exact(classes)
            .map(floodvqa_core::fusion::predict)
            .collect::<floodvqa_core::Result<_>>()?)
    }
}

pub const SCORING_BATCH: usize = 1024;

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub predictions: Vec<usize>,
}

/// Scores pre-assembled features. Only the scoring pass is timed.
pub fn evaluate_features(classifier: &dyn Classifier, model_tag: &str, data: &LabeledFeatures) -> Result<Evaluation> {
    let set = &data.features;
    if set.is_empty() {
        return Err(floodvqa_core::Error::EmptyTestSet.into());
    }
    for (modality, expected, actual) in [
        ("image", classifier.image_dim(), set.image_dim()),
        ("text", classifier.text_dim(), set.text_dim()),
    ] {
        if expected != actual {
            return Err(floodvqa_core::Error::Shape { modality, expected, actual }.into());
        }
    }
    let rows: Vec<usize> = (0..set.len()).collect();
    let start = Instant::now();
    let batches: Vec<Vec<usize>> = rows
        .par_chunks(SCORING_BATCH)
        .map(|chunk| {
            let (images, texts, _) = set.gather(chunk);
            classifier.classify(&images, &texts, chunk.len())
        })
        .collect::<Result<_>>()?;
    let predictions: Vec<usize> = batches.concat();
    let seconds = start.elapsed().as_secs_f64();
    let report = tally(&predictions, set.labels(), &data.types).report(model_tag, seconds)?;
    Ok(Evaluation { report, predictions })
}

/// Loads the test features from the stores, then scores them.
pub fn evaluate(
    classifier: &dyn Classifier,
    model_tag: &str,
    test_pairs: &[QAPair],
    vocab: &LabelVocabulary,
    image_store: &FeatureStore,
    text_store: &FeatureStore,
) -> Result<Evaluation> {
    if test_pairs.is_empty() {
        return Err(floodvqa_core::Error::EmptyTestSet.into());
    }
    let data = build_features(test_pairs, vocab, image_store, text_store)?;
    evaluate_features(classifier, model_tag, &data)
}

/// Writes `question_id,question_type,question,expected,predicted` for every
/// wrong prediction.
pub fn write_misclassified(
    path: &Path,
    pairs: &[QAPair],
    predictions: &[usize],
    vocab: &LabelVocabulary,
) -> Result<usize> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    let csv_err = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    w.write_record(["question_id", "question_type", "question", "expected", "predicted"])
        .map_err(csv_err)?;
    let mut wrong = 0;
    for (p, &pred) in pairs.iter().zip(predictions) {
        let predicted = vocab.label(pred).unwrap_or("?");
        if predicted == p.answer {
            continue;
        }
        wrong += 1;
        w.write_record([
            p.question_id.as_str(),
            p.question_type.key(),
            p.question_text.as_str(),
            p.answer.as_str(),
            predicted,
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(Error::io(path))?;
    Ok(wrong)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Times {
    pub train_s: Option<f64>,
    pub infer_s: f64,
}

/// On-disk report: accuracies are percentages, keyed `overall` then each
/// question type's snake_case key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub model_tag: String,
    pub config_ref: Option<String>,
    pub split_ref: Option<String>,
    pub accuracies: IndexMap<String, f64>,
    pub counts: IndexMap<String, usize>,
    pub times: Times,
}

impl ReportFile {
    pub fn from_report(report: &EvalReport, config_ref: Option<String>, split_ref: Option<String>) -> Self {
        let mut accuracies = IndexMap::new();
        accuracies.insert("overall".to_string(), report.overall_accuracy);
        let mut counts = IndexMap::new();
        counts.insert("total".to_string(), report.total_count());
        for ty in QuestionType::ALL {
            accuracies.insert(ty.key().to_string(), report.accuracy(ty).unwrap_or(0.0));
            counts.insert(ty.key().to_string(), report.per_type_counts.get(&ty).copied().unwrap_or(0));
        }
        ReportFile {
            model_tag: report.model_tag.clone(),
            config_ref,
            split_ref,
            accuracies,
            counts,
            times: Times {
                train_s: report.train_seconds,
                infer_s: report.inference_seconds,
            },
        }
    }

    pub fn to_report(&self) -> Result<EvalReport> {
        let get = |key: &str| {
            self.accuracies
                .get(key)
                .copied()
                .ok_or_else(|| Error::Config(format!("report {}: missing accuracy {key:?}", self.model_tag)))
        };
        Ok(EvalReport {
            model_tag: self.model_tag.clone(),
            overall_accuracy: get("overall")?,
            per_type_accuracy: QuestionType::ALL
                .iter()
                .map(|t| get(t.key()).map(|a| (*t, a)))
                .collect::<Result<_>>()?,
            per_type_counts: QuestionType::ALL
                .iter()
                .map(|t| (*t, self.counts.get(t.key()).copied().unwrap_or(0)))
                .collect(),
            inference_seconds: self.times.infer_s,
            train_seconds: self.times.train_s,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes") + "\n";
        std::fs::write(path, text).map_err(Error::io(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text).map_err(Error::json(path))
    }

    fn accuracy_columns(&self) -> Vec<f64> {
        std::iter::once("overall")
            .chain(QuestionType::ALL.iter().map(|t| t.key()))
            .map(|k| self.accuracies.get(k).copied().unwrap_or(f64::NAN))
            .collect()
    }
}

/// A published comparison row, kept exactly as printed (the older baselines
/// were published as whole numbers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub group: String,
    pub method: String,
    pub train: Option<String>,
    pub infer: Option<String>,
    /// Overall, then the five question types in table order.
    pub accuracies: [String; 6],
}

impl ReferenceRow {
    pub fn overall(&self) -> f64 {
        self.accuracies[0].parse().unwrap_or(f64::NAN)
    }
}

const REFERENCE_JSON: &str = include_str!("../data/reference_rows.json");

pub fn reference_rows() -> Vec<ReferenceRow> {
    serde_json::from_str(REFERENCE_JSON).expect("bundled reference rows parse")
}

/// `m:ss`, with minutes unbounded.
pub fn format_mm_ss(seconds: f64) -> String {
    let total = seconds.max(0.0).round() as u64;
    format!("{}:{:02}", total / 60, total % 60)
}

pub const TABLE_HEADERS: [&str; 9] = [
    "Method",
    "Train",
    "Infer",
    "Overall",
    "Simple Count",
    "Complex Count",
    "Yes/No",
    "Image Condition",
    "Road Condition",
];

/// Renames repeated model tags `tag#2`, `tag#3`, ... in order of appearance.
pub fn disambiguate_tags(reports: &mut [ReportFile]) {
    let mut seen: HashMap<String, usize> = HashMap::new();
    for r in reports.iter_mut() {
        let n = seen.entry(r.model_tag.clone()).or_insert(0);
        *n += 1;
        if *n > 1 {
            let renamed = format!("{}#{}", r.model_tag, n);
            log::warn!("duplicate model tag {:?}; showing as {renamed:?}", r.model_tag);
            r.model_tag = renamed;
        }
    }
}

fn table_rows(reports: &[ReportFile], reference: &[ReferenceRow]) -> Vec<[String; 9]> {
    let mut rows = Vec::new();
    for r in reference {
        let mut row: [String; 9] = Default::default();
        row[0] = format!("ref:{}", r.method);
        row[1] = r.train.clone().unwrap_or_else(|| "-".into());
        row[2] = r.infer.clone().unwrap_or_else(|| "-".into());
        for (cell, v) in row[3..].iter_mut().zip(&r.accuracies) {
            cell.clone_from(v);
        }
        rows.push(row);
    }
    for r in reports {
        let mut row: [String; 9] = Default::default();
        row[0] = r.model_tag.clone();
        row[1] = r.times.train_s.map_or_else(|| "-".into(), format_mm_ss);
        row[2] = format_mm_ss(r.times.infer_s);
        for (cell, v) in row[3..].iter_mut().zip(r.accuracy_columns()) {
            *cell = format!("{v:.2}");
        }
        rows.push(row);
    }
    rows
}

/// Fixed-width text table; reference rows (if any) come first, prefixed
/// `ref:`.
pub fn render_table(reports: &[ReportFile], reference: Option<&[ReferenceRow]>) -> String {
    let rows = table_rows(reports, reference.unwrap_or(&[]));
    let mut widths: Vec<usize> = TABLE_HEADERS.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[&str]| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            if i == 0 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "{cell:>w$}");
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(&TABLE_HEADERS);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(&rule.iter().map(String::as_str).collect::<Vec<_>>()));
    for row in &rows {
        out.push_str(&line(&row.iter().map(String::as_str).collect::<Vec<_>>()));
    }
    out
}

/// Machine-readable companion of [`render_table`], at full precision.
pub fn render_json(reports: &[ReportFile], reference: Option<&[ReferenceRow]>) -> serde_json::Value {
    serde_json::json!({
        "columns": TABLE_HEADERS,
        "rows": reports,
        "reference": reference.unwrap_or(&[]),
    })
}

/// Tally of an explicit prediction list, for callers that score elsewhere.
pub fn tally_predictions(predictions: &[usize], data: &LabeledFeatures) -> AccuracyTally {
    tally(predictions, data.features.labels(), &data.types)
}

#[cfg(test)]
mod tests {
    use super::*;
    use floodvqa_core::eval::decompose_check;
    use floodvqa_core::FeatureSet;

    /// Returns whatever class is encoded in the first image feature.
    struct Oracle;

    impl Classifier for Oracle {
        fn image_dim(&self) -> usize {
            1
        }
        fn text_dim(&self) -> usize {
            1
        }
        fn classify(&self, image: &[f32], _: &[f32], rows: usize) -> Result<Vec<usize>> {
            Ok(image[..rows].iter().map(|&v| v as usize).collect())
        }
    }

    fn data(labels: &[(usize, QuestionType)]) -> LabeledFeatures {
        let mut features = FeatureSet::new(1, 1);
        for (l, _) in labels {
            features.push(&[*l as f32], &[0.0], *l).unwrap();
        }
        LabeledFeatures {
            features,
            question_ids: (0..labels.len()).map(|i| format!("q{i}")).collect(),
            types: labels.iter().map(|(_, t)| *t).collect(),
        }
    }

    #[test]
    fn perfect_stub_scores_100() {
        let d = data(&[(3, QuestionType::YesNo), (10, QuestionType::SimpleCount), (1, QuestionType::RoadCondition)]);
        let ev = evaluate_features(&Oracle, "oracle", &d).unwrap();
        assert_eq!(ev.report.overall_accuracy, 100.0);
        assert!(decompose_check(&ev.report));
        assert_eq!(ev.report.total_count(), 3);
    }

    #[test]
    fn empty_set_rejected() {
        assert!(evaluate_features(&Oracle, "x", &data(&[])).is_err());
    }

    #[test]
    fn mm_ss() {
        assert_eq!(format_mm_ss(556.0), "9:16");
        assert_eq!(format_mm_ss(0.4), "0:00");
        assert_eq!(format_mm_ss(7200.0), "120:00");
    }

    #[test]
    fn reference_rows_verbatim() {
        let rows = reference_rows();
        assert_eq!(rows.len(), 15);
        let cnx = rows.iter().find(|r| r.method == "CNX-mul").unwrap();
        assert_eq!(cnx.accuracies, ["81.26", "37.07", "37.4", "98.31", "98.62", "97.18"]);
        assert_eq!(cnx.train.as_deref(), Some("9:16"));
        assert_eq!(rows.iter().find(|r| r.method == "R50-mul").unwrap().overall(), 80.36);
    }

    #[test]
    fn table_shapes() {
        let empty = render_table(&[], None);
        assert_eq!(empty.lines().count(), 2);
        let d = data(&[(3, QuestionType::YesNo)]);
        let mut report = evaluate_features(&Oracle, "CNX-mul", &d).unwrap().report;
        report.train_seconds = Some(61.0);
        let file = ReportFile::from_report(&report, None, None);
        let table = render_table(&[file.clone()], None);
        let row = table.lines().nth(2).unwrap();
        let cells: Vec<&str> = row.split("  ").map(str::trim).filter(|c| !c.is_empty()).collect();
        assert_eq!(cells.len(), 9);
        assert_eq!(cells[1], "1:01");
        assert_eq!(cells[3], "100.00");

        let refs = reference_rows();
        let with_ref = render_table(&[file.clone(), file], Some(&refs));
        assert_eq!(with_ref.lines().count(), 2 + 15 + 2);
        assert!(with_ref.contains("ref:CNX-mul"));
    }

    #[test]
    fn duplicate_tags_suffixed() {
        let d = data(&[(3, QuestionType::YesNo)]);
        let report = evaluate_features(&Oracle, "R50-mul", &d).unwrap().report;
        let mut files = vec![ReportFile::from_report(&report, None, None); 3];
        disambiguate_tags(&mut files);
        let tags: Vec<&str> = files.iter().map(|f| f.model_tag.as_str()).collect();
        assert_eq!(tags, ["R50-mul", "R50-mul#2", "R50-mul#3"]);
    }

    #[test]
    fn report_file_round_trip() {
        let d = data(&[(3, QuestionType::YesNo), (4, QuestionType::ImageCondition)]);
        let report = evaluate_features(&Oracle, "m", &d).unwrap().report;
        let file = ReportFile::from_report(&report, Some("cfg".into()), Some("split".into()));
        let json = serde_json::to_value(&file).unwrap();
        assert_eq!(json["accuracies"]["overall"], 100.0);
        assert_eq!(json["counts"]["yes_no"], 1);
        assert!(json["times"]["infer_s"].is_number());
        assert_eq!(file.to_report().unwrap(), report);
    }
}
