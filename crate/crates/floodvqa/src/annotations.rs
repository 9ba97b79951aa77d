//! Loader for FloodNet VQA question files.
//!
//! The input is a JSON object mapping a question key to a record:
//!
//! ```json
//! { "0": { "Image_ID": "10165.JPG",
//!          "Question": "What is the overall condition of the given image?",
//!          "Ground_Truth": "flooded",
//!          "Question_Type": "Condition_Recognition" } }
//! ```
//!
//! Accepted field names (first is canonical):
//!
//! | field          | aliases                       |
//! |----------------|-------------------------------|
//! | `Image_ID`     | `image_id`, `image`           |
//! | `Question`     | `question`, `question_text`   |
//! | `Ground_Truth` | `ground_truth`, `answer`      |
//! | `Question_Type`| `question_type`, `type`       |
//!
//! `Ground_Truth` may be a string or a non-negative integer. The question key
//! becomes the question id and the image file stem becomes the image id.
//!
//! Question types are matched after lowercasing and mapping spaces, `-` and
//! `/` to `_`:
//!
//! | type             | accepted spellings                                              |
//! |------------------|-----------------------------------------------------------------|
//! | SimpleCount      | `simple_counting`, `simple_count`, `simplecount`                |
//! | ComplexCount     | `complex_counting`, `complex_count`, `complexcount`             |
//! | YesNo            | `yes_no`, `yesno`                                               |
//! | ImageCondition   | `image_condition`, `imagecondition`, `condition_of_entire_image`|
//! | RoadCondition    | `road_condition`, `roadcondition`, `condition_of_road`          |
//! | (by question)    | `condition_recognition`                                         |
//!
//! `condition_recognition` is resolved from the question text: a mention of
//! "road" selects RoadCondition, otherwise a mention of "image", "entire" or
//! "overall" selects ImageCondition. Anything else is rejected.

use std::fs;
use std::path::{Path, PathBuf};

use floodvqa_core::qa::QAPair;
use floodvqa_core::vocab::{normalize_answer, LabelVocabulary, QuestionType};
use indexmap::IndexMap;
use serde::Deserialize;

use crate::error::{Error, Result};

/// File extensions tried when resolving an image id to a file.
pub const IMAGE_EXTENSIONS: [&str; 6] = ["jpg", "JPG", "jpeg", "JPEG", "png", "PNG"];

#[derive(Debug, Deserialize)]
struct RawRecord {
    #[serde(rename = "Image_ID", alias = "image_id", alias = "image")]
    image: Option<String>,
    #[serde(rename = "Question", alias = "question", alias = "question_text")]
    question: Option<String>,
    #[serde(rename = "Ground_Truth", alias = "ground_truth", alias = "answer")]
    ground_truth: Option<serde_json::Value>,
    #[serde(rename = "Question_Type", alias = "question_type", alias = "type")]
    question_type: Option<String>,
}

fn invalid(question_id: &str, message: impl Into<String>) -> Error {
    Error::Annotation {
        question_id: question_id.to_string(),
        message: message.into(),
    }
}

/// Maps a raw question-type string (plus the question, for the combined
/// condition type) onto the five-way enum.
pub fn resolve_question_type(raw: &str, question: &str) -> Option<QuestionType> {
    let key: String = raw
        .trim()
        .chars()
        .map(|c| match c {
            ' ' | '-' | '/' => '_',
            c => c.to_ascii_lowercase(),
        })
        .collect();
    match key.as_str() {
        "simple_counting" | "simple_count" | "simplecount" => Some(QuestionType::SimpleCount),
        "complex_counting" | "complex_count" | "complexcount" => Some(QuestionType::ComplexCount),
        "yes_no" | "yesno" => Some(QuestionType::YesNo),
        "image_condition" | "imagecondition" | "condition_of_entire_image" => Some(QuestionType::ImageCondition),
        "road_condition" | "roadcondition" | "condition_of_road" => Some(QuestionType::RoadCondition),
        "condition_recognition" => {
            let q = question.to_ascii_lowercase();
            if q.contains("road") {
                Some(QuestionType::RoadCondition)
            } else if q.contains("image") || q.contains("entire") || q.contains("overall") {
                Some(QuestionType::ImageCondition)
            } else {
                None
            }
        }
        _ => None,
    }
}

fn answer_string(question_id: &str, value: &serde_json::Value) -> Result<String> {
    match value {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => n
            .as_u64()
            .map(|n| n.to_string())
            .ok_or_else(|| invalid(question_id, format!("numeric answer {n} is not a non-negative integer"))),
        other => Err(invalid(question_id, format!("unsupported answer value {other}"))),
    }
}

/// Image id for an image reference: the file stem (`"10165.JPG"` → `"10165"`).
pub fn image_id_from_reference(reference: &str) -> Option<String> {
    let stem = Path::new(reference.trim()).file_stem()?.to_str()?.trim();
    (!stem.is_empty()).then(|| stem.to_string())
}

/// Finds the image file for `image_id` inside `dir`.
pub fn resolve_image(dir: &Path, image_id: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{image_id}.{ext}")))
        .find(|p| p.is_file())
}

/// Parses annotation JSON text. Records keep file order.
pub fn parse_annotations(text: &str, source: &Path) -> Result<Vec<QAPair>> {
    if text.trim().is_empty() {
        log::warn!("{}: annotation file is empty", source.display());
        return Ok(Vec::new());
    }
    let raw: IndexMap<String, RawRecord> = serde_json::from_str(text).map_err(Error::json(source))?;
    if raw.is_empty() {
        log::warn!("{}: annotation file has no records", source.display());
    }
    let vocab = LabelVocabulary::canonical();
    let mut pairs = Vec::with_capacity(raw.len());
    for (question_id, rec) in raw {
        let image_ref = rec.image.as_deref().unwrap_or("");
        let image_id = image_id_from_reference(image_ref)
            .ok_or_else(|| invalid(&question_id, format!("unresolvable image reference {image_ref:?}")))?;
        let question = rec
            .question
            .ok_or_else(|| invalid(&question_id, "missing question text"))?;
        let answer_value = rec
            .ground_truth
            .ok_or_else(|| invalid(&question_id, "missing ground-truth answer"))?;
        let answer = answer_string(&question_id, &answer_value)?;
        let raw_type = rec
            .question_type
            .ok_or_else(|| invalid(&question_id, "missing question type"))?;
        let question_type = resolve_question_type(&raw_type, &question)
            .ok_or_else(|| invalid(&question_id, format!("unknown question type {raw_type:?}")))?;

        let pair = QAPair {
            question_id: question_id.clone(),
            image_id,
            question_text: question,
            answer: normalize_answer(&answer).into_owned(),
            question_type,
        };
        pair.validate(&vocab)
            .map_err(|e| invalid(&question_id, e.to_string()))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Loads and validates every record of an annotation file.
pub fn load_annotations(path: &Path) -> Result<Vec<QAPair>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    parse_annotations(&text, path)
}

/// Like [`load_annotations`], additionally requiring every image to exist in
/// `image_dir`.
pub fn load_annotations_with_images(path: &Path, image_dir: &Path) -> Result<Vec<QAPair>> {
    let pairs = load_annotations(path)?;
    for p in &pairs {
        if resolve_image(image_dir, &p.image_id).is_none() {
            return Err(invalid(
                &p.question_id,
                format!("image {} not found in {}", p.image_id, image_dir.display()),
            ));
        }
    }
    Ok(pairs)
}
