//! Forward/backward prompt rendering with seeded alias variants.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::triples::{RelationSpec, Triple};

pub const DEFAULT_SYNONYM_CAP: usize = 6;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template:?} is missing placeholder {placeholder}")]
    Template {
        template: String,
        placeholder: &'static str,
    },
    #[error("entity {0} has no aliases")]
    NoAliases(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    Question,
    Statement,
}

impl TemplateKind {
    pub fn id(self) -> &'static str {
        match self {
            TemplateKind::Question => "question",
            TemplateKind::Statement => "statement",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            TemplateKind::Question => "Question Template",
            TemplateKind::Statement => "Statement Template",
        }
    }

    pub fn vocabulary(self) -> AnswerVocabulary {
        match self {
            TemplateKind::Question => AnswerVocabulary::new("Yes", "No"),
            TemplateKind::Statement => AnswerVocabulary::new("True", "False"),
        }
    }
}

impl FromStr for TemplateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "question" => Ok(TemplateKind::Question),
            "statement" => Ok(TemplateKind::Statement),
            other => Err(format!("unknown template kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstructionMode {
    #[default]
    Direct,
    #[serde(alias = "think_first")]
    Think,
}

impl FromStr for InstructionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(InstructionMode::Direct),
            "think" | "think_first" => Ok(InstructionMode::Think),
            other => Err(format!("unknown instruction mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnswerVocabulary {
    pub positive: String,
    pub negative: String,
}

impl AnswerVocabulary {
    pub fn new(positive: &str, negative: &str) -> Self {
        AnswerVocabulary {
            positive: positive.to_string(),
            negative: negative.to_string(),
        }
    }
}

/// Default system instruction for a template kind and mode. These are
/// reconstructions; override them through configuration when needed.
pub fn default_instruction(kind: TemplateKind, mode: InstructionMode) -> String {
    let (subject, v) = match kind {
        TemplateKind::Question => ("You will be asked a question about a fact.", kind.vocabulary()),
        TemplateKind::Statement => ("You will be given a statement about a fact.", kind.vocabulary()),
    };
    match mode {
        InstructionMode::Direct => format!(
            "{subject} Respond with only one word: either '{}' if the claim is correct or '{}' if it is incorrect.",
            v.positive, v.negative
        ),
        InstructionMode::Think => format!(
            "{subject} Let's first think step by step. After reasoning, give the final answer: either '{}' if the claim is correct or '{}' if it is incorrect.",
            v.positive, v.negative
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    pub mode: InstructionMode,
    pub system_instruction: String,
    pub body_template: String,
    pub vocabulary: AnswerVocabulary,
}

impl PromptTemplate {
    pub fn for_relation(relation: &RelationSpec, kind: TemplateKind, mode: InstructionMode) -> Self {
        let body = match kind {
            TemplateKind::Question => &relation.question_template,
            TemplateKind::Statement => &relation.statement_template,
        };
        PromptTemplate {
            kind,
            mode,
            system_instruction: default_instruction(kind, mode),
            body_template: body.clone(),
            vocabulary: kind.vocabulary(),
        }
    }

    pub fn with_instruction(mut self, instruction: impl Into<String>) -> Self {
        self.system_instruction = instruction.into();
        self
    }

    /// Substitutes `{s}` and `{o}` in a single left-to-right pass.
    pub fn render_body(&self, first: &str, second: &str) -> Result<String, PromptError> {
        let t = &self.body_template;
        for placeholder in ["{s}", "{o}"] {
            if !t.contains(placeholder) {
                return Err(PromptError::Template {
                    template: t.clone(),
                    placeholder,
                });
            }
        }
        let mut out = String::with_capacity(t.len() + first.len() + second.len());
        let mut rest = t.as_str();
        while let Some(i) = rest.find('{') {
            out.push_str(&rest[..i]);
            let tail = &rest[i..];
            if let Some(after) = tail.strip_prefix("{s}") {
                out.push_str(first);
                rest = after;
            } else if let Some(after) = tail.strip_prefix("{o}") {
                out.push_str(second);
                rest = after;
            } else {
                out.push('{');
                rest = &tail[1..];
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// System and user messages for one chat request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl fmt::Display for RenderedPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\n\n{}", self.system, self.user)
    }
}

/// Renders one direction of a fact. `subject_alias` names the triple's
/// subject; the backward direction places it in the object slot.
pub fn verbalize(
    direction: Direction,
    subject_alias: &str,
    object_alias: &str,
    template: &PromptTemplate,
) -> Result<RenderedPrompt, PromptError> {
    let user = match direction {
        Direction::Forward => template.render_body(subject_alias, object_alias)?,
        Direction::Backward => template.render_body(object_alias, subject_alias)?,
    };
    Ok(RenderedPrompt {
        system: template.system_instruction.clone(),
        user,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub subject_alias: String,
    pub object_alias: String,
    pub prompt: RenderedPrompt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBatch {
    pub triple: Triple,
    pub direction: Direction,
    pub kind: TemplateKind,
    pub seed: u64,
    pub variants: Vec<Variant>,
}

fn entity_rng(seed: u64, entity_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(entity_id.as_bytes());
    let digest = h.finalize();
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()))
}

/// Picks up to `cap` aliases with a stream keyed by `(seed, entity_id)`,
/// keeping their original order. Lists within the cap are returned whole.
pub fn sample_aliases(entity_id: &str, aliases: &[String], seed: u64, cap: usize) -> Vec<String> {
    if aliases.len() <= cap {
        return aliases.to_vec();
    }
    let mut rng = entity_rng(seed, entity_id);
    let mut picked = rand::seq::index::sample(&mut rng, aliases.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| aliases[i].clone()).collect()
}

/// Renders the Cartesian product of sampled subject and object aliases.
/// Both directions of a triple see the same alias samples.
pub fn expand_variants(
    triple: &Triple,
    direction: Direction,
    template: &PromptTemplate,
    subject_aliases: &[String],
    object_aliases: &[String],
    seed: u64,
    cap: usize,
) -> Result<PromptBatch, PromptError> {
    if subject_aliases.is_empty() {
        return Err(PromptError::NoAliases(triple.subject_id.clone()));
    }
    if object_aliases.is_empty() {
        return Err(PromptError::NoAliases(triple.object_id.clone()));
    }
    let subs = sample_aliases(&triple.subject_id, subject_aliases, seed, cap);
    let objs = sample_aliases(&triple.object_id, object_aliases, seed, cap);
    let mut variants = Vec::with_capacity(subs.len() * objs.len());
    for s in &subs {
        for o in &objs {
            variants.push(Variant {
                subject_alias: s.clone(),
                object_alias: o.clone(),
                prompt: verbalize(direction, s, o, template)?,
            });
        }
    }
    Ok(PromptBatch {
        triple: triple.clone(),
        direction,
        kind: template.kind,
        seed,
        variants,
    })
}

#[derive(Serialize)]
struct DumpLine<'a> {
    triple: String,
    direction: Direction,
    template: TemplateKind,
    subject_alias: &'a str,
    object_alias: &'a str,
    system: &'a str,
    user: &'a str,
}

/// Appends every variant of `batch` to a JSONL audit dump.
pub fn dump_batch(w: &mut impl Write, batch: &PromptBatch) -> std::io::Result<()> {
    for v in &batch.variants {
        let line = DumpLine {
            triple: batch.triple.key(),
            direction: batch.direction,
            template: batch.kind,
            subject_alias: &v.subject_alias,
            object_alias: &v.object_alias,
            system: &v.prompt.system,
            user: &v.prompt.user,
        };
        serde_json::to_writer(&mut *w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
