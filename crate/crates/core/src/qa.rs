use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{normalize_answer, LabelVocabulary, QuestionType};

/// One question about one image, with its ground-truth answer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QAPair {
    pub question_id: String,
    pub image_id: String,
    pub question_text: String,
    pub answer: String,
    pub question_type: QuestionType,
}

impl QAPair {
    /// Builds a pair, normalizing the answer and validating it against the
    /// vocabulary and the question type.
    pub fn new(
        question_id: impl Into<String>,
        image_id: impl Into<String>,
        question_text: impl Into<String>,
        answer: &str,
        question_type: QuestionType,
    ) -> Result<Self> {
        let pair = QAPair {
            question_id: question_id.into(),
            image_id: image_id.into(),
            question_text: question_text.into(),
            answer: normalize_answer(answer).into_owned(),
            question_type,
        };
        pair.validate(&LabelVocabulary::canonical())?;
        Ok(pair)
    }

    pub fn validate(&self, vocab: &LabelVocabulary) -> Result<()> {
        if self.image_id.trim().is_empty() {
            return Err(Error::MissingImage {
                question_id: self.question_id.clone(),
            });
        }
        if vocab.index_of(&self.answer).is_none() {
            return Err(Error::UnknownAnswer {
                question_id: self.question_id.clone(),
                answer: self.answer.clone(),
            });
        }
        if !self.question_type.accepts(&self.answer) {
            return Err(Error::AnswerTypeMismatch {
                question_id: self.question_id.clone(),
                answer: self.answer.clone(),
                question_type: self.question_type,
            });
        }
        Ok(())
    }

    /// Class index of the ground-truth answer.
    pub fn label(&self, vocab: &LabelVocabulary) -> Result<usize> {
        vocab.index_of(&self.answer).ok_or_else(|| Error::UnknownAnswer {
            question_id: self.question_id.clone(),
            answer: self.answer.clone(),
        })
    }
}
