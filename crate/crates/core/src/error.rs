use alloc::string::String;

use crate::vocab::QuestionType;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("question {question_id}: answer {answer:?} is not in the answer vocabulary")]
    UnknownAnswer { question_id: String, answer: String },

    #[error("question {question_id}: answer {answer:?} is not valid for a {question_type} question")]
    AnswerTypeMismatch {
        question_id: String,
        answer: String,
        question_type: QuestionType,
    },

    #[error("question {question_id}: missing image reference")]
    MissingImage { question_id: String },

    #[error("invalid split: {0}")]
    Split(String),

    #[error("invalid fusion config: {0}")]
    Config(String),

    #[error("{modality} vector has width {actual}, model expects {expected}")]
    Shape {
        modality: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("class index {0} is outside 0..56")]
    ClassIndex(usize),

    #[error("logits contain NaN")]
    NanLogits,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("invalid training config: {0}")]
    TrainConfig(String),

    #[error("cannot evaluate on an empty test set")]
    EmptyTestSet,
}
