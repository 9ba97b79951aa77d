//! The fixed 56-way answer space and the five question types.
//!
//! Class order is frozen: the five categorical answers first, then the counts
//! `"0"` through `"50"` ascending. Checkpoints and reports depend on it.

use alloc::borrow::Cow;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Number of answer classes.
pub const NUM_CLASSES: usize = 56;

/// Largest count answer in the vocabulary.
pub const MAX_COUNT: u32 = 50;

/// The non-numeric answers, in class-index order.
pub const CATEGORICAL_LABELS: [&str; 5] = ["flooded", "non-flooded", "flooded,non-flooded", "Yes", "No"];

const CONDITION_LABELS: [&str; 3] = ["flooded", "non-flooded", "flooded,non-flooded"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    SimpleCount,
    ComplexCount,
    YesNo,
    ImageCondition,
    RoadCondition,
}

impl QuestionType {
    /// All types in report column order.
    pub const ALL: [QuestionType; 5] = [
        QuestionType::SimpleCount,
        QuestionType::ComplexCount,
        QuestionType::YesNo,
        QuestionType::ImageCondition,
        QuestionType::RoadCondition,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Stable machine name, also used as the JSON key.
    pub fn key(self) -> &'static str {
        match self {
            QuestionType::SimpleCount => "simple_count",
            QuestionType::ComplexCount => "complex_count",
            QuestionType::YesNo => "yes_no",
            QuestionType::ImageCondition => "image_condition",
            QuestionType::RoadCondition => "road_condition",
        }
    }

    /// Human-readable column title.
    pub fn title(self) -> &'static str {
        match self {
            QuestionType::SimpleCount => "Simple Count",
            QuestionType::ComplexCount => "Complex Count",
            QuestionType::YesNo => "Yes/No",
            QuestionType::ImageCondition => "Image Condition",
            QuestionType::RoadCondition => "Road Condition",
        }
    }

    pub fn is_counting(self) -> bool {
        matches!(self, QuestionType::SimpleCount | QuestionType::ComplexCount)
    }

    /// Whether `answer` (already normalized) is a legal answer for this type.
    pub fn accepts(self, answer: &str) -> bool {
        match self {
            QuestionType::SimpleCount | QuestionType::ComplexCount => parse_count(answer).is_some(),
            QuestionType::YesNo => answer == "Yes" || answer == "No",
            QuestionType::ImageCondition | QuestionType::RoadCondition => CONDITION_LABELS.contains(&answer),
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

fn parse_count(answer: &str) -> Option<u32> {
    if answer.is_empty() || !answer.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    // canonical form only: no leading zeros
    if answer.len() > 1 && answer.starts_with('0') {
        return None;
    }
    answer.parse::<u32>().ok().filter(|n| *n <= MAX_COUNT)
}

/// Trims surrounding whitespace and rewrites decimal numbers into canonical
/// form (`"07"` becomes `"7"`). Everything else is returned unchanged, so the
/// comparison against the vocabulary stays case-sensitive.
pub fn normalize_answer(raw: &str) -> Cow<'_, str> {
    let trimmed = raw.trim();
    if !trimmed.is_empty() && trimmed.bytes().all(|b| b.is_ascii_digit()) {
        let stripped = trimmed.trim_start_matches('0');
        let canonical = if stripped.is_empty() { "0" } else { stripped };
        if canonical.len() != raw.len() {
            return Cow::Owned(canonical.to_string());
        }
    } else if trimmed.len() != raw.len() {
        return Cow::Owned(trimmed.to_string());
    }
    Cow::Borrowed(raw)
}

/// Bijection between the 56 answer strings and class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocabulary {
    labels: Vec<String>,
}

impl Default for LabelVocabulary {
    fn default() -> Self {
        Self::canonical()
    }
}

impl LabelVocabulary {
    /// The canonical vocabulary: five categorical labels, then `"0".."50"`.
    pub fn canonical() -> Self {
        let mut labels: Vec<String> = CATEGORICAL_LABELS.iter().map(|s| s.to_string()).collect();
        labels.extend((0..=MAX_COUNT).map(|n| n.to_string()));
        debug_assert_eq!(labels.len(), NUM_CLASSES);
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    /// Class index of an exact (already normalized) answer string.
    pub fn index_of(&self, answer: &str) -> Option<usize> {
        if let Some(pos) = CATEGORICAL_LABELS.iter().position(|l| *l == answer) {
            return Some(pos);
        }
        parse_count(answer).map(|n| CATEGORICAL_LABELS.len() + n as usize)
    }
}

/// Shorthand for `LabelVocabulary::canonical()`.
pub fn build_label_vocabulary() -> LabelVocabulary {
    LabelVocabulary::canonical()
}
