use crate::knowledge_base::RetrievalResult;
use crate::llm::ChatMessage;
use crate::memory::{EntityRecord, Turn};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub const SLOT: &str = "{x_shot_prompts}";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TemplateError {
    #[error("template {name} must contain the {SLOT} slot exactly once (found {found})")]
    TemplateSlotMissing { name: String, found: usize },
    #[error("unknown template name {0:?}")]
    UnknownTemplate(String),
    #[error("cannot read template {name}: {message}")]
    Io { name: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum TemplateName {
    #[default]
    #[serde(rename = "default")]
    Default,
    #[serde(rename = "7feelings")]
    SevenFeelings,
    #[serde(rename = "7feelings2tones")]
    SevenFeelingsTwoTones,
    #[serde(rename = "gkp")]
    Gkp,
    #[serde(rename = "gkpPsychoTherapy")]
    GkpPsychoTherapy,
    #[serde(rename = "gkpPsychoTherapyNonRep")]
    GkpPsychoTherapyNonRep,
}

impl TemplateName {
    pub const ALL: [TemplateName; 6] = [
        TemplateName::Default,
        TemplateName::SevenFeelings,
        TemplateName::SevenFeelingsTwoTones,
        TemplateName::Gkp,
        TemplateName::GkpPsychoTherapy,
        TemplateName::GkpPsychoTherapyNonRep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Default => "default",
            TemplateName::SevenFeelings => "7feelings",
            TemplateName::SevenFeelingsTwoTones => "7feelings2tones",
            TemplateName::Gkp => "gkp",
            TemplateName::GkpPsychoTherapy => "gkpPsychoTherapy",
            TemplateName::GkpPsychoTherapyNonRep => "gkpPsychoTherapyNonRep",
        }
    }

    fn builtin_text(self) -> &'static str {
        match self {
            TemplateName::Default => include_str!("../../resources/templates/default.txt"),
            TemplateName::SevenFeelings => include_str!("../../resources/templates/7feelings.txt"),
            TemplateName::SevenFeelingsTwoTones => {
                include_str!("../../resources/templates/7feelings2tones.txt")
            }
            TemplateName::Gkp => include_str!("../../resources/templates/gkp.txt"),
            TemplateName::GkpPsychoTherapy => {
                include_str!("../../resources/templates/gkpPsychoTherapy.txt")
            }
            TemplateName::GkpPsychoTherapyNonRep => {
                include_str!("../../resources/templates/gkpPsychoTherapyNonRep.txt")
            }
        }
    }

    /// Raw bytes of the shipped template file.
    pub fn builtin_bytes(self) -> &'static [u8] {
        self.builtin_text().as_bytes()
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateName {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| TemplateError::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    name: TemplateName,
    instruction: String,
}

impl PromptTemplate {
    pub fn new(name: TemplateName, instruction: impl Into<String>) -> Result<Self, TemplateError> {
        let instruction = instruction.into();
        let found = instruction.matches(SLOT).count();
        if found != 1 {
            return Err(TemplateError::TemplateSlotMissing { name: name.to_string(), found });
        }
        Ok(Self { name, instruction })
    }

    pub fn builtin(name: TemplateName) -> Self {
        Self::new(name, name.builtin_text().trim_end_matches('\n')).expect("shipped template has its slot")
    }

    pub fn name(&self) -> TemplateName {
        self.name
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn fill(&self, x_shot: &str) -> String {
        self.instruction.replacen(SLOT, x_shot, 1)
    }
}

/// The six instruction templates, either shipped or loaded from a directory
/// of `{name}.txt` files.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateName, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            templates: TemplateName::ALL.into_iter().map(|n| (n, PromptTemplate::builtin(n))).collect(),
        }
    }

    /// Files present in `dir` override the shipped text; absent ones fall back.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        for name in TemplateName::ALL {
            let path = dir.join(format!("{name}.txt"));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                name: name.to_string(),
                message: e.to_string(),
            })?;
            set.templates.insert(name, PromptTemplate::new(name, text.trim_end_matches('\n'))?);
        }
        Ok(set)
    }

    pub fn get(&self, name: TemplateName) -> &PromptTemplate {
        &self.templates[&name]
    }
}

/// A prompt ready to be sent: system instruction, short-term history, query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssembledPrompt {
    pub system: String,
    pub history: Vec<ChatMessage>,
    pub user: String,
}

impl AssembledPrompt {
    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut out = Vec::with_capacity(self.history.len() + 2);
        out.push(ChatMessage::system(self.system.clone()));
        out.extend(self.history.iter().cloned());
        out.push(ChatMessage::user(self.user.clone()));
        out
    }
}

pub fn format_x_shot(retrieval: &RetrievalResult) -> String {
    retrieval
        .answers
        .iter()
        .map(|a| format!("Question: {}\nAnswer: {}", retrieval.question_text.trim(), a.answer_text.trim()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn format_entity_block(entities: &[EntityRecord]) -> String {
    entities
        .iter()
        .map(|e| format!("Known context: {}: {}", e.name, e.summary.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Fills the template slot with the retrieved Q&A (or nothing), appends the
/// entity block when there is one, and copies the history in order.
pub fn assemble_prompt(
    template: &PromptTemplate,
    anon_query: &str,
    retrieval: Option<&RetrievalResult>,
    history: &[Turn],
    entities: &[EntityRecord],
) -> AssembledPrompt {
    let x_shot = retrieval.map(format_x_shot).unwrap_or_default();
    let mut system = template.fill(&x_shot);
    if !entities.is_empty() {
        system.push_str("\n\n");
        system.push_str(&format_entity_block(entities));
    }
    AssembledPrompt {
        system,
        history: history.iter().map(ChatMessage::from).collect(),
        user: anon_query.to_string(),
    }
}
