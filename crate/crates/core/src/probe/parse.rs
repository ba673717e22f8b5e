use serde::{Deserialize, Serialize};

use crate::prompt::{AnswerVocabulary, InstructionMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Positive,
    Negative,
    Unparseable,
}

/// Classifies a model reply. Direct mode reads the whole reply as one word;
/// think mode reads its final whitespace-separated token. Surrounding
/// whitespace and punctuation are ignored, as is case.
pub fn parse_answer(raw: &str, vocabulary: &AnswerVocabulary, mode: InstructionMode) -> Verdict {
    let token = match mode {
        InstructionMode::Direct => raw,
        InstructionMode::Think => match raw.split_whitespace().last() {
            Some(t) => t,
            None => return Verdict::Unparseable,
        },
    };
    let word = token.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation());
    if word.eq_ignore_ascii_case(&vocabulary.positive) {
        Verdict::Positive
    } else if word.eq_ignore_ascii_case(&vocabulary.negative) {
        Verdict::Negative
    } else {
        Verdict::Unparseable
    }
}
